pub mod bench;
pub mod commands;
pub mod error;
pub mod formats;
pub mod scenarios;
