//! Experiment configuration, dispatch, persistence and the verification suite.

pub mod config;
pub mod output;
pub mod run;
pub mod verify;
