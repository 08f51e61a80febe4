pub mod ablation;
pub mod experiment;
pub mod metrics;
pub mod report;

pub use experiment::{evaluate, fit_method, Evaluated, Fitted, SeedData, Setup};
pub use metrics::{Scored, SelectiveSummary};
pub use report::{BootstrapOptions, MetricReport};
