//! saged: a batch pipeline engine for building and running LLM bias
//! benchmarks.
//!
//! The pipeline has five core stages: scraping baseline material, assembling
//! prompts into a benchmark, generating model responses, extracting numeric
//! features, and diagnosing group disparities. Auxiliary stages branch
//! benchmarks counterfactually, calibrate features against the baseline, and
//! render reports.

pub mod assembler;
pub mod brancher;
pub mod diagnoser;
pub mod endpoints;
pub mod extractor;
pub mod generator;
pub mod error;
pub mod scraper;
pub mod table;
pub mod text;
pub mod vecmath;

pub use error::{Result, SagedError};
