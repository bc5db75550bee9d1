pub mod bnp;
pub mod cli;
pub mod compact_model;
pub mod instance;
pub mod master;
pub mod metrics;
pub mod pricing;
pub mod route;
