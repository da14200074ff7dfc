//! File formats, experiment specifications and the sweep runner for the
//! `fultr` command-line tool.

#![warn(missing_debug_implementations, rust_2018_idioms)]

pub mod config;
pub mod runner;
pub mod svmlight;
