//! Reader profiles for book recommendation: text profiles built from
//! reviews, a two-tower scorer trained on them, negative sampling with
//! collaborative-filtering weights, and ranking evaluation.

pub mod config;
pub mod corpus;
pub mod error;
pub mod evaluation;
pub mod factorization;
pub mod pipeline;
pub mod profiles;
pub mod retrieval;
pub mod sampling;
pub mod seeding;
pub mod synthetic;
pub mod textstats;
pub mod towers;

pub use error::{Error, Result};
