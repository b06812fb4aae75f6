//! Knowledge-graph and semantic-embedding ad recommendation.
//!
//! The pipeline: a typed knowledge graph ([`kg`]) with translational
//! embeddings ([`embed`]), a self-attention text encoder ([`encoder`]),
//! fusion + graph attention + bilinear scoring ([`gnn`], [`model`]), a joint
//! trainer ([`train`]), vector retrieval ([`index`]) and the evaluation
//! harness ([`eval`]). [`datagen`] produces seeded synthetic datasets and
//! [`pipeline`] ties the file-based stages together.

pub mod datagen;
pub mod embed;
pub mod encoder;
pub mod error;
pub mod eval;
pub mod gnn;
pub mod gradcheck;
pub mod index;
pub mod kg;
pub mod model;
pub mod pipeline;
pub mod snapshot;
pub mod train;

pub use error::{Error, Result};
