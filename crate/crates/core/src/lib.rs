//! Adaptive honeypot engine.
//!
//! The crate is organized around a request/response datastore shared by four
//! cooperating pieces: a normalizer that canonicalizes raw HTTP into stable
//! state keys, a retrieval scorer that proposes candidate responses with
//! probabilities, a tabular Q-learning engine that picks among them to keep
//! attackers engaged, and a device farm that answers requests nothing in the
//! store can. A traffic evaluator (linear SVM) gates which peers are trusted,
//! and a deterministic attacker simulator drives end-to-end experiments.

pub mod attacker;
pub mod engine;
pub mod evaluator;
pub mod farm;
pub mod normalize;
pub mod report;
pub mod rl;
pub mod scorer;
pub mod sim;
pub mod store;
pub mod synth;


pub use engine::{Engine, EngineConfig, SelectionPolicy};
pub use normalize::{normalize, NormalizedRequest};
pub use rl::{QTable, RlParams};
pub use scorer::{train_scorer, ScorerConfig, ScorerModel};
pub use store::{ReqResRecord, ReqResStore, ResponseDoc, SeedEntry, SessionLog, SessionRecord};
