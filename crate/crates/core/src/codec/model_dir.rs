use std::fs;
use std::path::{Path, PathBuf};

use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::networks::Model;
use crate::tensor::{read_checkpoint, write_checkpoint};
use crate::trainer::TrainConfig;

pub const CONFIG_FILE: &str = "config.txt";
pub const WEIGHTS_FILE: &str = "weights.gcw";
pub const CHECKSUM_FILE: &str = "weights.sha256";

/// Writes `bytes` to a sibling temp file, then renames it over `path`.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<()> {
    let name = path
        .file_name()
        .ok_or_else(|| Error::usage(format!("{} is not a file path", path.display())))?;
    let mut tmp_name = name.to_os_string();
    tmp_name.push(format!(".tmp{}", std::process::id()));
    let tmp: PathBuf = path.with_file_name(tmp_name);
    fs::write(&tmp, bytes)?;
    fs::rename(&tmp, path).inspect_err(|_| {
        let _ = fs::remove_file(&tmp);
    })?;
    Ok(())
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    Sha256::digest(bytes).iter().map(|b| format!("{b:02x}")).collect()
}

/// Stores the config text, the weights and their checksum in `dir`.
pub fn save_model_dir(dir: &Path, cfg: &TrainConfig, model: &Model) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut weights = Vec::new();
    write_checkpoint(&mut weights, model.named_params())?;
    write_atomic(&dir.join(WEIGHTS_FILE), &weights)?;
    write_atomic(&dir.join(CHECKSUM_FILE), format!("{}\n", sha256_hex(&weights)).as_bytes())?;
    write_atomic(&dir.join(CONFIG_FILE), cfg.to_text().as_bytes())
}

/// Inverse of [`save_model_dir`]; a checksum mismatch is corruption.
pub fn load_model_dir(dir: &Path) -> Result<(TrainConfig, Model)> {
    let text = fs::read_to_string(dir.join(CONFIG_FILE))?;
    let cfg = TrainConfig::parse(&text)?;
    let weights = fs::read(dir.join(WEIGHTS_FILE))?;
    let expected = fs::read_to_string(dir.join(CHECKSUM_FILE))?;
    let actual = sha256_hex(&weights);
    if expected.trim() != actual {
        return Err(Error::corruption(format!(
            "{} checksum {actual} does not match {}",
            WEIGHTS_FILE,
            expected.trim()
        )));
    }
    let mut model = Model::new(cfg.net.clone(), 0)?;
    model.load(read_checkpoint(&weights[..])?)?;
    Ok((cfg, model))
}
