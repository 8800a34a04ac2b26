//! Corpus-level inconsistency detection: find facts in a document collection
//! that are contradicted by other passages of the same collection.

pub mod cli;
pub mod config;
pub mod corpus;
pub mod detectors;
pub mod embedding;
pub mod estimation;
pub mod evaluation;
pub mod facts;
pub mod llm;
pub mod oracle;
pub mod service;
pub mod synthetic;
pub mod util;
