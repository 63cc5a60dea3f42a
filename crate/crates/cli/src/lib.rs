//! Operator surfaces for charforge: the HTTP JSON API and the `charforge` binary.

pub mod api;
pub mod error;
pub mod service;

pub use api::{router, serve};
pub use error::ApiError;
pub use service::{Studio, StudioConfig};
