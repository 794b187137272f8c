//! Membership inference auditing for language models.
//!
//! The crate implements the neighbourhood attack, which calibrates a
//! sample's loss against the losses of slightly perturbed copies of it, next
//! to the LOSS and single-reference likelihood-ratio baselines, and the ROC
//! evaluation used to compare them at low false positive rates.
//!
//! Models are reached only through [`scoring::ScoringOracle`] and
//! [`scoring::SubstitutionOracle`]; an n-gram backend and an HTTP client are
//! provided.
//!
//! ```
//! use mia_audit::attacks::{loss_attack, neighbourhood_attack};
//! use mia_audit::corpus::TextSample;
//! use mia_audit::neighbourhood::NeighbourConfig;
//! use mia_audit::scoring::{fit_ngram_backend, Reduction};
//!
//! let train = vec![TextSample::new("a", "the cat sat on the mat")];
//! let public = vec![TextSample::new("p", "the dog sat on the rug")];
//! let target = fit_ngram_backend(&train, 3, 0.1).unwrap();
//! let substitution = fit_ngram_backend(&public, 2, 1.0).unwrap();
//!
//! let config = NeighbourConfig { n: 5, ..NeighbourConfig::default() };
//! let scores = neighbourhood_attack(&target, &substitution, &train, &config, Reduction::Mean).unwrap();
//! let losses = loss_attack(&target, &train, Reduction::Mean).unwrap();
//! assert!(scores.scores[0].score < 0.0);
//! assert!(losses[0].score > 0.0);
//! ```

pub mod attacks;
pub mod corpus;
pub mod eval;
pub mod neighbourhood;
pub mod par;
pub mod scoring;
pub mod synth;
