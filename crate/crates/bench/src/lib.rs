//! Criterion benchmarks live in `benches/`; this crate has no library code
//! beyond the asset path they share.

use std::path::PathBuf;

pub fn assets_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../assets")
}
