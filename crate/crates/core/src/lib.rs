pub mod biasinject;
pub mod cli;
pub mod datagen;
pub mod error;
pub mod experiments;
pub mod learner;
pub mod metrics;
pub mod oracle;
pub mod seeding;
pub mod special;
pub mod stats;

pub use error::{Error, Result};
