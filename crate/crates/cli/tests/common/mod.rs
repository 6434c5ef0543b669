//! Dataset cache shared by the integration targets. Generating the LSTM
//! dataset is the slow part of every end-to-end check, so it is built once
//! per configuration under cargo's test scratch directory.

#![allow(dead_code)]

use std::path::{Path, PathBuf};

use hrsg_core::config::LabConfig;
use hrsg_core::lstm_tuner::{build_datasets, Dataset};
use hrsg_core::scenario::Rig;
use hrsglab::sha256_hex;

/// Directory holding clean.csv and noisy.csv for `cfg`, generated on first use.
pub fn cached_dataset(cfg: &LabConfig) -> PathBuf {
    let key = sha256_hex(cfg.to_toml_string().as_bytes());
    let dir = Path::new(env!("CARGO_TARGET_TMPDIR")).join(format!("dataset-{}", &key[..16]));
    if dir.join("clean.csv").exists() && dir.join("noisy.csv").exists() {
        return dir;
    }
    let rig = Rig::from_config(cfg).expect("default config is valid");
    let (clean, noisy) = build_datasets(cfg, &rig, cfg.seed).expect("dataset generation");
    // build next to the final location and rename, so a concurrent reader
    // never sees half a file
    let tmp = dir.with_extension(format!("tmp{}", std::process::id()));
    std::fs::create_dir_all(&tmp).unwrap();
    clean.write_csv(&tmp.join("clean.csv")).unwrap();
    noisy.write_csv(&tmp.join("noisy.csv")).unwrap();
    if std::fs::rename(&tmp, &dir).is_err() {
        // someone else won the race
        let _ = std::fs::remove_dir_all(&tmp);
    }
    dir
}

pub fn load(dir: &Path) -> (Dataset, Dataset) {
    (
        Dataset::read_csv(&dir.join("clean.csv")).unwrap(),
        Dataset::read_csv(&dir.join("noisy.csv")).unwrap(),
    )
}
