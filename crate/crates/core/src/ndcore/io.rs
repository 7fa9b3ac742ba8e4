//! Tensor files: `<name>.bin` holds little-endian `f64` values in row-major
//! order; `<name>.json` is the sidecar `{"shape": [...], "dtype": "f64"}`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Serialize, Deserialize, PartialEq)]
#[serde(deny_unknown_fields)]
pub struct TensorHeader {
    pub shape: Vec<usize>,
    pub dtype: String,
}

/// Appends (never replaces) the extension so dotted stems survive.
fn paths(stem: &Path) -> (PathBuf, PathBuf) {
    let with = |ext: &str| {
        let mut s = stem.as_os_str().to_owned();
        s.push(ext);
        PathBuf::from(s)
    };
    (with(".bin"), with(".json"))
}

pub fn encode_f64(values: &[f64]) -> Vec<u8> {
    let mut bytes = Vec::with_capacity(values.len() * 8);
    for v in values {
        bytes.extend_from_slice(&v.to_le_bytes());
    }
    bytes
}

pub fn decode_f64(bytes: &[u8]) -> Result<Vec<f64>> {
    if !bytes.len().is_multiple_of(8) {
        return Err(Error::Parse {
            what: "tensor payload",
            detail: format!("{} bytes is not a multiple of 8", bytes.len()),
        });
    }
    Ok(bytes
        .chunks_exact(8)
        .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
        .collect())
}

/// Writes `<stem>.json` and `<stem>.bin`.
pub fn write_tensor(stem: &Path, t: &Tensor) -> Result<()> {
    let (bin, json) = paths(stem);
    if let Some(dir) = stem.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    let header = TensorHeader {
        shape: t.shape().to_vec(),
        dtype: "f64".into(),
    };
    fs::write(&json, serde_json::to_vec(&header)?).map_err(|e| Error::io(&json, e))?;
    fs::write(&bin, encode_f64(t.data())).map_err(|e| Error::io(&bin, e))?;
    Ok(())
}

pub fn read_tensor(stem: &Path) -> Result<Tensor> {
    let (bin, json) = paths(stem);
    let header: TensorHeader =
        serde_json::from_slice(&fs::read(&json).map_err(|e| Error::io(&json, e))?)?;
    if header.dtype != "f64" {
        return Err(Error::Parse {
            what: "tensor header",
            detail: format!("unsupported dtype {}", header.dtype),
        });
    }
    let data = decode_f64(&fs::read(&bin).map_err(|e| Error::io(&bin, e))?)?;
    Tensor::new(header.shape, data)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn file_round_trip_is_bitwise() {
        let dir = tempfile::tempdir().unwrap();
        let t = Tensor::new(vec![2, 3, 1], vec![0.1, -2.5, f64::MIN_POSITIVE, 1e300, 0.0, -0.0]).unwrap();
        let stem = dir.path().join("x");
        write_tensor(&stem, &t).unwrap();
        let back = read_tensor(&stem).unwrap();
        assert_eq!(back.shape(), t.shape());
        let bits = |t: &Tensor| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&back), bits(&t));
        let sidecar = std::fs::read_to_string(stem.with_extension("json")).unwrap();
        assert_eq!(sidecar, r#"{"shape":[2,3,1],"dtype":"f64"}"#);
        assert_eq!(std::fs::read(stem.with_extension("bin")).unwrap()[..8], 0.1f64.to_le_bytes());
    }
}
