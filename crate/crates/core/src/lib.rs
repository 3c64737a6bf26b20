//! Turns group-chat conversations into a maintained markdown knowledge
//! repository.
//!
//! - [`repo`]: git-backed document store with conversation context in commit trailers
//! - [`index`]: heading-based chunking, hashed embeddings, cosine retrieval
//! - [`assistant`]: provider-backed edit proposals, answers, summaries, line diffs
//! - [`workflow`]: update, question and approval state machines
//! - [`gateway`]: chat event ingestion, action stream, journal, configuration

pub mod assistant;
pub mod gateway;
pub mod ids;
pub mod index;
pub mod repo;
pub mod text;
pub mod workflow;
pub use uuid::Uuid;
