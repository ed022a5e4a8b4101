//! HTTP service and command-line front end for the burnscope pipeline.

pub mod api;
pub mod cli;
pub mod config;
pub mod jobs;
pub mod pipeline;
