//! HTTP service and command line over [`glossa_core::Engine`].

pub mod api;
pub mod commands;
pub mod error;
pub mod ops;

pub use error::{ApiError, ErrorCode};
