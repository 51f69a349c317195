use std::io;

use crate::packet::PacketError;

pub type Result<T, E = StreamError> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum StreamError {
    #[error(transparent)]
    Packet(#[from] PacketError),

    #[error("{context}: {source}")]
    Io {
        context: String,
        #[source]
        source: io::Error,
    },

    #[error("sent {sent} of {total} packets before failing: {source}")]
    Send {
        sent: usize,
        total: usize,
        #[source]
        source: io::Error,
    },

    #[error(transparent)]
    Core(#[from] stabilens_core::Error),

    #[error("invalid input: {0}")]
    InvalidInput(String),
}

impl StreamError {
    pub(crate) fn io(context: impl Into<String>, source: io::Error) -> Self {
        StreamError::Io {
            context: context.into(),
            source,
        }
    }
}
