//! Topic hierarchy elicitation from chat-completion models.
//!
//! The crate covers the whole loop: a bounded-depth topic tree, prompt
//! templates that carry different amounts of ancestor context, a
//! completion gateway with record/replay fixtures, experiment runs over a
//! fixed test suite, and the annotation metrics used to score them.

pub mod gateway;
pub mod hierarchy;
pub mod metrics;
pub mod prompt;
pub mod run;
pub mod testsuite;
