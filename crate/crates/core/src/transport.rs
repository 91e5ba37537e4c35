//! Blocking transport interfaces implemented by the network crate and by test mocks.

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpResponse {
    pub status: u16,
    pub body: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TransportError {
    #[error("timed out")]
    Timeout,
    #[error("connection failed: {0}")]
    Connect(String),
    #[error("{0}")]
    Other(String),
}

/// Minimal blocking HTTP GET used for live WIGLE queries.
pub trait HttpTransport: Send + Sync {
    fn get(&self, url: &str, basic_auth: Option<(&str, &str)>) -> Result<HttpResponse, TransportError>;
}
