//! Analysis library for pairwise-preference evaluation of generative models.
//!
//! The modules follow the life of a human evaluation: [`scheduler`] plans
//! studies and hands out rating tasks, [`elo`] turns the collected
//! side-by-side outcomes into leaderboards, [`stats`] checks automatic
//! metrics against human judgments, and [`evalsuite`] / [`distmetrics`]
//! cover fairness, counting accuracy and embedding-distribution distances.

pub mod api;
pub mod bootstrap;
pub mod distmetrics;
pub mod elo;
pub mod evalsuite;
pub mod io;
pub mod model;
pub mod report;
pub mod scheduler;
pub mod simulate;
pub mod stats;
pub mod validate;

pub use model::{
    Aspect, Axis, CategoricalLabel, Choice, CountAnnotation, CountingStudy, ModelId, PromptEntry, PromptSet,
    RatingRecord, Response, Side, Study,
};
