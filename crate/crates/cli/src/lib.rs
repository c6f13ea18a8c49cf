//! Command line and HTTP front end for the optistack design workbench.

pub mod app;
pub mod cli;
pub mod service;
pub mod store;
