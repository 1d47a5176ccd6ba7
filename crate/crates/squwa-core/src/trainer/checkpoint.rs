//! Named-block binary format shared by model checkpoints and matrix dumps.
//!
//! Layout: `[u64 LE header length][JSON header][blocks...]` where the header
//! lists block names and shapes in order and each block is that many
//! little-endian 32-bit floats. The header carries a format version and an
//! arbitrary `meta` value for the caller.

use std::fs;
use std::io::{Read, Write};
use std::path::Path;

use serde_json::{json, Value};

use crate::error::{Result, SquwaError};

pub const FORMAT_VERSION: u64 = 1;

/// Write `meta` plus named f32 blocks to `path`.
pub fn write_named_blocks(
    path: &Path,
    meta: &Value,
    blocks: &[(String, Vec<usize>, &[f32])],
) -> Result<()> {
    for (name, shape, data) in blocks {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(SquwaError::shape(format!(
                "block {name}: shape {shape:?} holds {expect} values, got {}",
                data.len()
            )));
        }
    }
    let header = json!({
        "version": FORMAT_VERSION,
        "meta": meta,
        "blocks": blocks
            .iter()
            .map(|(name, shape, _)| json!({"name": name, "shape": shape}))
            .collect::<Vec<_>>(),
    });
    let header_bytes = serde_json::to_vec(&header).expect("serializable header");

    let mut f = fs::File::create(path)?;
    f.write_all(&(header_bytes.len() as u64).to_le_bytes())?;
    f.write_all(&header_bytes)?;
    for (_, _, data) in blocks {
        let mut buf = Vec::with_capacity(data.len() * 4);
        for v in *data {
            buf.extend_from_slice(&v.to_le_bytes());
        }
        f.write_all(&buf)?;
    }
    Ok(())
}

/// Read back `(meta, blocks)`. Structural damage (truncation, bad JSON,
/// unknown version) is a `VersionError`; a missing file is an `IOError`.
pub fn read_named_blocks(path: &Path) -> Result<(Value, Vec<(String, Vec<usize>, Vec<f32>)>)> {
    let mut f = fs::File::open(path)?;
    let mut len_buf = [0u8; 8];
    read_fully(&mut f, &mut len_buf, path)?;
    let header_len = u64::from_le_bytes(len_buf) as usize;
    let mut header_bytes = vec![0u8; header_len];
    read_fully(&mut f, &mut header_bytes, path)?;
    let header: Value = serde_json::from_slice(&header_bytes).map_err(|e| {
        SquwaError::version(format!("unparseable header in {}: {e}", path.display()))
    })?;

    let version = header["version"].as_u64().unwrap_or(0);
    if version != FORMAT_VERSION {
        return Err(SquwaError::version(format!(
            "unsupported format version {version} in {}",
            path.display()
        )));
    }
    let meta = header["meta"].clone();
    let specs = header["blocks"]
        .as_array()
        .ok_or_else(|| SquwaError::version("header lacks block list"))?;

    let mut blocks = Vec::with_capacity(specs.len());
    for spec in specs {
        let name = spec["name"]
            .as_str()
            .ok_or_else(|| SquwaError::version("block without name"))?
            .to_string();
        let shape: Vec<usize> = spec["shape"]
            .as_array()
            .ok_or_else(|| SquwaError::version("block without shape"))?
            .iter()
            .map(|v| v.as_u64().unwrap_or(0) as usize)
            .collect();
        let n: usize = shape.iter().product();
        let mut buf = vec![0u8; n * 4];
        read_fully(&mut f, &mut buf, path)?;
        let data: Vec<f32> = buf
            .chunks_exact(4)
            .map(|c| f32::from_le_bytes([c[0], c[1], c[2], c[3]]))
            .collect();
        blocks.push((name, shape, data));
    }
    Ok((meta, blocks))
}

fn read_fully(f: &mut fs::File, buf: &mut [u8], path: &Path) -> Result<()> {
    f.read_exact(buf).map_err(|e| {
        if e.kind() == std::io::ErrorKind::UnexpectedEof {
            SquwaError::version(format!("truncated checkpoint {}", path.display()))
        } else {
            SquwaError::Io(e)
        }
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn round_trip_preserves_everything() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let a = vec![1.0f32, -2.5, 3.25, 0.0, 7.5, -0.125];
        let b = vec![42.0f32];
        write_named_blocks(
            &path,
            &json!({"variant": "SQUWA"}),
            &[
                ("w".to_string(), vec![2, 3], &a),
                ("b".to_string(), vec![1], &b),
            ],
        )
        .unwrap();
        let (meta, blocks) = read_named_blocks(&path).unwrap();
        assert_eq!(meta["variant"], "SQUWA");
        assert_eq!(blocks.len(), 2);
        assert_eq!(blocks[0].0, "w");
        assert_eq!(blocks[0].1, vec![2, 3]);
        assert_eq!(blocks[0].2, a);
        assert_eq!(blocks[1].2, b);
    }

    #[test]
    fn truncated_file_is_a_version_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let a = vec![1.0f32; 100];
        write_named_blocks(&path, &json!({}), &[("w".to_string(), vec![100], &a)]).unwrap();
        let full = fs::read(&path).unwrap();
        fs::write(&path, &full[..full.len() - 32]).unwrap();
        let err = read_named_blocks(&path).unwrap_err();
        assert_eq!(err.kind(), "VersionError");
    }

    #[test]
    fn missing_file_is_an_io_error() {
        let err = read_named_blocks(Path::new("/definitely/not/here.bin")).unwrap_err();
        assert_eq!(err.kind(), "IOError");
    }

    #[test]
    fn shape_payload_mismatch_rejected_on_write() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let a = vec![1.0f32; 5];
        let err = write_named_blocks(&path, &json!({}), &[("w".to_string(), vec![2, 3], &a)])
            .unwrap_err();
        assert_eq!(err.kind(), "ShapeError");
    }

    #[test]
    fn future_version_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("x.bin");
        let header = serde_json::to_vec(&json!({"version": 99, "meta": {}, "blocks": []})).unwrap();
        let mut bytes = (header.len() as u64).to_le_bytes().to_vec();
        bytes.extend_from_slice(&header);
        fs::write(&path, bytes).unwrap();
        let err = read_named_blocks(&path).unwrap_err();
        assert_eq!(err.kind(), "VersionError");
    }
}
