//! Run manifests: command, seed, code version, config hash and input digests.

use std::fs;
use std::io::Read;
use std::path::Path;

use sha2::{Digest, Sha256};

use wiopen_core::kv;
use wiopen_core::Result;

use crate::config::RunConfig;

pub const RUN_MANIFEST: &str = "run_manifest.txt";

pub fn file_digest(path: &Path) -> Result<String> {
    let mut f = fs::File::open(path)?;
    let mut h = Sha256::new();
    let mut buf = vec![0u8; 1 << 16];
    loop {
        let n = f.read(&mut buf)?;
        if n == 0 {
            break;
        }
        h.update(&buf[..n]);
    }
    Ok(hex::encode(h.finalize()))
}

pub fn config_digest(cfg: &RunConfig) -> String {
    hex::encode(Sha256::digest(kv::render(&cfg.result_entries()).as_bytes()))
}

/// `(name, digest)` of every regular file in `dir`, sorted by name.
/// Earlier manifests are skipped.
pub fn dir_digests(dir: &Path) -> Result<Vec<(String, String)>> {
    let mut names: Vec<String> = fs::read_dir(dir)?
        .filter_map(|e| e.ok())
        .filter(|e| e.file_type().map(|t| t.is_file()).unwrap_or(false))
        .map(|e| e.file_name().to_string_lossy().into_owned())
        .filter(|n| n != RUN_MANIFEST)
        .collect();
    names.sort();
    names
        .into_iter()
        .map(|n| Ok((n.clone(), file_digest(&dir.join(&n))?)))
        .collect()
}

/// Writes `RUN_MANIFEST` into `out_dir`. `inputs` pairs a role with a directory.
pub fn write_run_manifest(out_dir: &Path, command: &str, cfg: &RunConfig, inputs: &[(&str, &Path)]) -> Result<()> {
    let mut entries: Vec<(String, String)> = vec![
        ("command".into(), command.into()),
        ("version".into(), env!("CARGO_PKG_VERSION").into()),
        ("seed".into(), cfg.seed.to_string()),
        ("config_sha256".into(), config_digest(cfg)),
    ];
    for (role, dir) in inputs {
        for (name, digest) in dir_digests(dir)? {
            entries.push((format!("input.{role}.{name}"), digest));
        }
    }
    for (k, v) in cfg.result_entries() {
        entries.push((format!("config.{k}"), v));
    }
    fs::write(out_dir.join(RUN_MANIFEST), kv::render(&entries))?;
    Ok(())
}
