//! File formats and the `hseg` command line on top of [`hseg_core`].

pub mod checkpoint;
pub mod cli;
pub mod config;
pub mod dataset;
pub mod error;
pub mod guides_file;
pub mod png_io;
pub mod render;
pub mod tiling;

pub use error::{Error, Result};

/// Sizes the global worker pool from `HSEG_THREADS` when set.
pub fn init_threads() -> Result<()> {
    if let Ok(v) = std::env::var("HSEG_THREADS") {
        let n: usize = v
            .parse()
            .ok()
            .filter(|&n| n > 0)
            .ok_or_else(|| Error::Usage(format!("HSEG_THREADS must be a positive integer, got {v:?}")))?;
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Error::Usage(e.to_string()))?;
    }
    Ok(())
}
