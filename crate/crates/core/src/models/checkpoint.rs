//! Checkpoints: a flat little-endian `f64` array plus a `<file>.json` sidecar
//! holding the [`ModelSpec`].

use std::path::{Path, PathBuf};

use super::{ModelSpec, ParamVector};
use crate::{Error, Result};

fn sidecar(path: &Path) -> PathBuf {
    let mut s = path.as_os_str().to_owned();
    s.push(".json");
    PathBuf::from(s)
}

pub fn save_params(params: &ParamVector, path: &Path) -> Result<()> {
    let bytes: Vec<u8> = params.values().iter().flat_map(|v| v.to_le_bytes()).collect();
    std::fs::write(path, bytes).map_err(|e| Error::io(path, e))?;
    let spec = serde_json::to_string_pretty(params.spec())?;
    let side = sidecar(path);
    std::fs::write(&side, spec).map_err(|e| Error::io(side, e))
}

pub fn load_params(path: &Path) -> Result<ParamVector> {
    let side = sidecar(path);
    let spec_text = std::fs::read_to_string(&side).map_err(|e| Error::io(&side, e))?;
    let spec: ModelSpec = serde_json::from_str(&spec_text)?;
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    if bytes.len() % 8 != 0 {
        return Err(Error::Container(format!(
            "{}: length {} is not a multiple of 8",
            path.display(),
            bytes.len()
        )));
    }
    let values = bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
        .collect();
    ParamVector::new(spec, values)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::models::init_params;

    #[test]
    fn checkpoint_restores_bits() {
        let spec = ModelSpec::mlp(5, 3, 4, 0.01);
        let p = init_params(&spec, 3);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_params(&p, &path).unwrap();
        assert_eq!(std::fs::metadata(&path).unwrap().len(), 8 * p.len() as u64);
        assert_eq!(load_params(&path).unwrap(), p);
    }

    #[test]
    fn length_mismatch_rejected() {
        let spec = ModelSpec::logistic(2, 2, 0.0);
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("w.bin");
        save_params(&ParamVector::zeros(spec), &path).unwrap();
        std::fs::write(&path, [0u8; 8]).unwrap();
        assert!(load_params(&path).is_err());
    }
}
