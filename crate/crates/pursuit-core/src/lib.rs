//! Sequential-query classification by greedy information maximization.
//!
//! The engine asks one interpretable query about an input at a time, always
//! picking the query whose answer carries maximal mutual information with the
//! label given everything observed so far. A generative model supplies the
//! joint distribution of query answers and labels; the chain of query-answer
//! pairs is the explanation for the final prediction.
//!
//! Modules:
//! - [`core`]: domain types (queries, answers, histories, posteriors)
//! - [`querysets`]: patch, attribute, and word-presence query families
//! - [`models`]: tabular oracle, Bernoulli mixture (EM), latent-Gaussian decoder
//! - [`sampler`]: unadjusted Langevin chains for the latent model
//! - [`pursuit`]: the selection loop, termination rules, explanation traces
//! - [`theory`]: optimal-strategy oracles, Huffman and divide-and-conquer
//!   bounds, CART and full-information baselines
//! - [`data`]: dataset loaders (IDX, CSV, JSONL), splitting, a bundled
//!   synthetic digit corpus
//! - [`cli`]: subcommand implementations behind the `infopursuit` binary

pub mod cli;
pub mod core;
pub mod data;
pub mod models;
pub mod pursuit;
pub mod querysets;
pub mod sampler;
pub mod stem;
pub mod theory;

mod error;

pub use error::Error;

/// Crate-wide result alias.
pub type Result<T> = std::result::Result<T, Error>;
