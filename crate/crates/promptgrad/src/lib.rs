//! Host-side companion to `promptgrad-core`: dataset files, run configs, the
//! on-disk completion cache, HTTP provider and encoder clients, and the
//! `promptgrad` command line.

pub mod cache;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod extract;
pub mod http;
pub mod output;
pub mod templates;

pub use error::{Error, Result};
