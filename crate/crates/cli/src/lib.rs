//! Command line, SVG reports and HTTP API over the fdd run store.

pub mod api;
pub mod cli;
pub mod decimate;
pub mod report;
