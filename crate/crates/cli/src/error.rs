use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("data error: {0}")]
    Data(String),
    #[error("invariant violated: {0}")]
    Invariant(String),
    #[error("{0}")]
    Compute(String),
    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

impl CliError {
    /// 0 pass, 1 invariant violation or failed computation, 2 config error, 3 data error.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) => 2,
            CliError::Data(_) => 3,
            CliError::Invariant(_) | CliError::Compute(_) | CliError::Io(_) => 1,
        }
    }
}

impl From<nearlin_core::dataio::DataError> for CliError {
    fn from(e: nearlin_core::dataio::DataError) -> Self {
        CliError::Data(e.to_string())
    }
}

impl From<nearlin_core::netflow::NetError> for CliError {
    fn from(e: nearlin_core::netflow::NetError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<nearlin_core::abound::BoundError> for CliError {
    fn from(e: nearlin_core::abound::BoundError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<nearlin_core::proxy::ProxyError> for CliError {
    fn from(e: nearlin_core::proxy::ProxyError) -> Self {
        CliError::Compute(e.to_string())
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Compute(format!("serialization: {e}"))
    }
}
