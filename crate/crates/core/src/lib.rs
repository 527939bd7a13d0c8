pub mod artifact;
pub mod audit;
pub mod bound;
pub mod codec;
pub mod config;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod features;
pub mod orchestrator;
pub mod padding;
pub mod pf;
pub mod policy;
pub mod report;
pub mod router;
pub mod simenv;
pub mod stats;
