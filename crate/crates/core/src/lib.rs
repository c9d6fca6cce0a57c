//! Interlinks natural-language user stories with GUI prototypes.
//!
//! The pipeline compiles a [`model::GuiPrototype`] into a two-tier textual
//! [`abstraction`], prompts an LLM through the [`gateway`] to decide whether
//! a story is implemented ([`detection`]), which components fulfil it
//! ([`matching`]) and how a missing story could look ([`recommendation`]).
//! [`gold`] builds evaluation gold standards and [`eval`] reproduces the
//! binary-classification and component-matching experiments with the
//! statistics in [`metrics`].

pub mod abstraction;
pub mod detection;
pub mod eval;
pub mod fewshot;
pub mod gateway;
pub mod gold;
pub mod markup;
pub mod matching;
pub mod metrics;
pub mod model;
pub mod pipeline;
pub mod prompt;
pub mod recommendation;
pub mod rico;
pub mod synth;
