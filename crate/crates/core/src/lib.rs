//! Knowledge-graph constrained actor-critic agents for parser-based text games.

pub mod agent;
pub mod corpus;
pub mod engine;
pub mod kg;
pub mod numerics;
pub mod oracle;
pub mod templates;
pub mod tokenizer;
pub mod trainer;
