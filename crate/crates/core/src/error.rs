use std::io;

use thiserror::Error;

use crate::page::PageId;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("batch must contain at least one update")]
    EmptyBatch,

    #[error("contract violation: {0}")]
    ContractViolation(String),

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("record of {size} bytes does not fit a {capacity}-byte log block")]
    RecordTooLarge { size: usize, capacity: usize },

    #[error("log recovery halted at offset {offset}: {reason}")]
    RecoveryHalt { offset: u64, reason: String },

    #[error("page pool with {page_bytes}-byte pages is full")]
    OutOfSpace { page_bytes: usize },

    #[error("page {0} is not live")]
    UseAfterFree(PageId),

    #[error("corrupt data: {0}")]
    Corrupt(String),

    #[error("failed to open store: {0}")]
    OpenFailure(String),

    #[error("injected crash at {0}")]
    InjectedCrash(&'static str),

    #[error("store is unusable after an earlier failure")]
    Poisoned,

    #[error("I/O error: {0}")]
    Io(#[from] io::Error),
}

impl Error {
    pub(crate) fn contract(msg: impl Into<String>) -> Self {
        Error::ContractViolation(msg.into())
    }

    pub(crate) fn corrupt(msg: impl Into<String>) -> Self {
        Error::Corrupt(msg.into())
    }
}
