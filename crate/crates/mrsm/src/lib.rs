//! Files, benchmarks and the `mrsm` command line around [`mrsm_core`].
//!
//! A *run directory* holds everything one deployment needs:
//!
//! | file          | contents                                           |
//! |---------------|----------------------------------------------------|
//! | `corpus.jsonl`| the owners' documents                              |
//! | `proxy.json`  | dictionary, partitions, weights, noise, counters   |
//! | `keys.bin`    | secret keys                                        |
//! | `index.bin`   | plaintext forest kept by the proxy                 |
//! | `forest.bin`  | encrypted forest served to users                   |

use std::path::{Path, PathBuf};

pub mod bench;
pub mod cli;
pub mod config;
pub mod formats;
pub mod run;

pub use bench::SystemClock;
pub use run::RunDir;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    #[error("{0}")]
    Core(#[from] mrsm_core::Error),
    #[error("{path}: {source}")]
    Io { path: PathBuf, source: std::io::Error },
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
    #[error("csv: {0}")]
    Csv(#[from] csv::Error),
    #[error("format: {0}")]
    Format(String),
    #[error("config: {0}")]
    Config(String),
}

impl Error {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        Self::Io { path: path.to_path_buf(), source }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
