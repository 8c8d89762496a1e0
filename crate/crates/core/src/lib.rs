pub mod checkpoint;
pub mod config;
pub mod engine;
pub mod error;
pub mod fault;
pub mod filter;
pub mod memtable;
pub mod model;
pub mod page;
pub mod stats;
pub mod tree;
pub mod wal;

pub use config::Config;
pub use engine::{Store, StoreStats};
pub use error::{Error, Result};
pub use model::{Batch, Key, Payload, Update};
