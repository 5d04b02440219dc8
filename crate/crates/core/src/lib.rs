//! Hybrid static/dynamic vocabulary selection for reduced language-model heads.
//!
//! A task corpus is profiled once ([`profile`]), a compact static task
//! vocabulary is calibrated from it ([`static_vocab`]), and at inference time
//! each instance's active set is its own input tokens plus the static set
//! ([`select`]). The [`head`] module gathers the matching rows of an output
//! projection and accounts memory; [`offload`] models how long the row
//! transfer takes relative to prefill compute.

pub mod artifact;
pub mod corpus;
pub mod error;
pub mod head;
pub mod offload;
pub mod profile;
pub mod script;
pub mod select;
pub mod static_vocab;
pub mod token;
pub mod tokenizer;

pub use error::{Error, ErrorKind, Result};
pub use token::{Document, TokenId, TokenRecord, TokenSet, VocabularyTable};
pub use tokenizer::Tokenizer;
