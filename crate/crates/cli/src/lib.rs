pub mod cli;
pub mod media;
pub mod service;
