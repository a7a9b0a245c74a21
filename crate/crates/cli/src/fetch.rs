//! Download and checksum the dataset files.

use std::fs;
use std::io::Read;
use std::path::Path;

use lcc_core::config::DataConfig;
use lcc_core::data::{TEST_IMAGES, TEST_LABELS, TRAIN_IMAGES, TRAIN_LABELS};
use sha2::{Digest, Sha256};

use crate::{CmdResult, Failure};

const FILES: [&str; 4] = [TRAIN_IMAGES, TRAIN_LABELS, TEST_IMAGES, TEST_LABELS];

fn sha256_hex(bytes: &[u8]) -> String {
    hex::encode(Sha256::digest(bytes))
}

fn verify(name: &str, bytes: &[u8], data: &DataConfig) -> Result<String, Failure> {
    let digest = sha256_hex(bytes);
    match data.checksums.get(name) {
        Some(expected) if !expected.eq_ignore_ascii_case(&digest) => {
            Err(Failure::runtime(format!("checksum mismatch for {name}: expected {expected}, got {digest}")))
        }
        Some(_) => Ok(format!("{digest} verified")),
        None => Ok(format!("{digest} (no checksum configured)")),
    }
}

fn download(url: &str) -> Result<Vec<u8>, Failure> {
    let resp = ureq::get(url).call().map_err(|e| Failure::runtime(format!("GET {url}: {e}")))?;
    let mut bytes = Vec::new();
    resp.into_reader()
        .read_to_end(&mut bytes)
        .map_err(|e| Failure::runtime(format!("reading {url}: {e}")))?;
    Ok(bytes)
}

pub fn fetch_data(data: &DataConfig, force: bool) -> CmdResult {
    let dir: &Path = &data.data_dir;
    fs::create_dir_all(dir)?;
    let base = data.mirror_url.trim_end_matches('/');
    for name in FILES {
        let path = dir.join(name);
        let (bytes, action) = if path.exists() && !force {
            (fs::read(&path)?, "present")
        } else {
            let bytes = download(&format!("{base}/{name}"))?;
            (bytes, "downloaded")
        };
        let status = verify(name, &bytes, data)?;
        if action == "downloaded" {
            // Written only after verification so a bad download leaves nothing behind.
            let tmp = path.with_extension("part");
            fs::write(&tmp, &bytes)?;
            fs::rename(&tmp, &path)?;
        }
        println!("{name}: {action}, {} bytes, sha256 {status}", bytes.len());
    }
    Ok(())
}
