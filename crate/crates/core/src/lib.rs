//! Document-level context-aware open information extraction.
//!
//! The crate is organised as a pipeline:
//!
//! * [`corpus`] reads and writes documents, extraction files and gold
//!   annotations, and computes corpus statistics.
//! * [`extractor`] is a small POS-pattern tuple extractor used as a
//!   self-contained pseudo-label source.
//! * [`bootstrap`] combines the output of a main and a fallback extractor.
//! * [`context`] builds context windows around a source sentence and lays
//!   out `[source; context]` training examples.
//! * [`model`] is a flat source-context transformer encoder with a
//!   copy-attention recurrent tuple decoder, trained with Adam.
//! * [`scorer`] evaluates extractions at tuple level (graded and binary
//!   lenient matching, PR curve, AUC) and measures annotator consistency.
//!
//! ```
//! use ctxoie::context::build_window;
//! use ctxoie::corpus::{Document, Sentence};
//!
//! let sentences = (0..10)
//!     .map(|i| Sentence::new("d1", i, vec![format!("w{i}")]))
//!     .collect();
//! let doc = Document::new("d1", "healthcare", sentences).unwrap();
//! let window = build_window(&doc, 5, 2).unwrap();
//! assert_eq!(window.context, vec![3, 4, 6, 7]);
//! ```

pub mod bootstrap;
pub mod context;
pub mod corpus;
mod error;
pub mod extractor;
pub mod model;
pub mod scorer;

pub use error::{Error, Result};
