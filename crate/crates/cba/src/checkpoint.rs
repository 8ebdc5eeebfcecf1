//! Checkpoint files: a `CBA1` magic line, a text manifest of
//! `name rows cols` lines in fixed order, a `DATA` separator, then the
//! concatenated row-major little-endian f64 blob in manifest order.

use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::model::{AdapterParams, BackboneParams};
use crate::params;

const MAGIC: &[u8] = b"CBA1\n";

pub fn save_entries(path: &Path, entries: &[(&str, usize, usize, &[f64])]) -> Result<()> {
    let mut bytes = Vec::new();
    bytes.extend_from_slice(MAGIC);
    for (name, rows, cols, data) in entries {
        assert_eq!(data.len(), rows * cols, "entry {name} shape");
        bytes.extend_from_slice(format!("{name} {rows} {cols}\n").as_bytes());
    }
    bytes.extend_from_slice(b"DATA\n");
    for (_, _, _, data) in entries {
        for v in *data {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(path, bytes)?;
    Ok(())
}

/// Load and validate against the expected manifest order. Shapes come from
/// the file; names, their order and the blob length are contractual.
pub fn load_entries(path: &Path, expected: &[&str]) -> Result<Vec<(usize, usize, Vec<f64>)>> {
    let bytes = fs::read(path)?;
    if bytes.len() < MAGIC.len() || &bytes[..MAGIC.len()] != MAGIC {
        return Err(Error::Checkpoint(format!(
            "{}: missing CBA1 magic",
            path.display()
        )));
    }
    let mut shapes: Vec<(usize, usize)> = Vec::new();
    let mut offset = MAGIC.len();
    let mut index = 0;
    loop {
        let rest = &bytes[offset..];
        let nl = rest
            .iter()
            .position(|&b| b == b'\n')
            .ok_or_else(|| Error::Checkpoint(format!("{}: truncated manifest", path.display())))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Checkpoint(format!("{}: non-UTF8 manifest", path.display())))?;
        offset += nl + 1;
        if line == "DATA" {
            break;
        }
        let mut fields = line.split(' ');
        let name = fields.next().unwrap_or("");
        let expected_name = expected.get(index).copied().unwrap_or("<end of manifest>");
        if name != expected_name {
            return Err(Error::Checkpoint(format!(
                "{}: manifest entry {} is {name:?}, expected {expected_name:?} (order is contractual)",
                path.display(),
                index + 1
            )));
        }
        let parse = |s: Option<&str>| {
            s.and_then(|v| v.parse::<usize>().ok()).ok_or_else(|| {
                Error::Checkpoint(format!("{}: bad shape for entry {name:?}", path.display()))
            })
        };
        let rows = parse(fields.next())?;
        let cols = parse(fields.next())?;
        if fields.next().is_some() {
            return Err(Error::Checkpoint(format!(
                "{}: trailing fields for entry {name:?}",
                path.display()
            )));
        }
        shapes.push((rows, cols));
        index += 1;
    }
    if shapes.len() != expected.len() {
        return Err(Error::Checkpoint(format!(
            "{}: manifest lists {} entries, expected {} ({:?} missing)",
            path.display(),
            shapes.len(),
            expected.len(),
            expected.get(shapes.len())
        )));
    }

    let total: usize = shapes.iter().map(|(r, c)| r * c).sum();
    let blob = &bytes[offset..];
    if blob.len() != total * 8 {
        return Err(Error::Checkpoint(format!(
            "{}: blob holds {} bytes, manifest needs {}",
            path.display(),
            blob.len(),
            total * 8
        )));
    }
    let mut out = Vec::with_capacity(shapes.len());
    let mut cursor = 0;
    for (rows, cols) in shapes {
        let n = rows * cols;
        let data: Vec<f64> = blob[cursor..cursor + n * 8]
            .chunks_exact(8)
            .map(|c| f64::from_le_bytes(c.try_into().unwrap()))
            .collect();
        cursor += n * 8;
        out.push((rows, cols, data));
    }
    Ok(out)
}

pub fn save_backbone(path: &Path, backbone: &BackboneParams) -> Result<()> {
    save_entries(path, &params::backbone_entries(backbone))
}

pub fn load_backbone(path: &Path) -> Result<BackboneParams> {
    params::backbone_from_entries(load_entries(path, &params::BACKBONE_ENTRIES)?)
}

pub fn save_adapter(path: &Path, adapter: &AdapterParams) -> Result<()> {
    save_entries(path, &params::adapter_entries(adapter))
}

pub fn load_adapter(path: &Path) -> Result<AdapterParams> {
    params::adapter_from_entries(load_entries(path, &params::ADAPTER_ENTRIES)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::ModelConfig;
    use crate::numerics::RngStream;

    fn tmp() -> tempfile::TempDir {
        tempfile::tempdir().unwrap()
    }

    #[test]
    fn round_trip_is_bitwise_identical() {
        let dir = tmp();
        let mut rng = RngStream::new(44);
        let backbone = BackboneParams::init(5, 8, 12, &mut rng);
        let path = dir.path().join("backbone.ckpt");
        save_backbone(&path, &backbone).unwrap();
        let loaded = load_backbone(&path).unwrap();
        assert_eq!(loaded, backbone);
        // Byte-stable on re-save.
        let first = std::fs::read(&path).unwrap();
        save_backbone(&path, &loaded).unwrap();
        assert_eq!(std::fs::read(&path).unwrap(), first);

        let cfg = ModelConfig::default();
        let adapter = AdapterParams::init(12, &cfg, &mut rng);
        let path = dir.path().join("adapter.ckpt");
        save_adapter(&path, &adapter).unwrap();
        assert_eq!(load_adapter(&path).unwrap(), adapter);
    }

    #[test]
    fn truncated_blob_is_rejected() {
        let dir = tmp();
        let backbone = BackboneParams::init(3, 4, 5, &mut RngStream::new(1));
        let path = dir.path().join("b.ckpt");
        save_backbone(&path, &backbone).unwrap();
        let mut bytes = std::fs::read(&path).unwrap();
        bytes.truncate(bytes.len() - 9);
        std::fs::write(&path, bytes).unwrap();
        let err = load_backbone(&path).unwrap_err();
        assert!(err.to_string().contains("blob"), "{err}");
    }

    #[test]
    fn manifest_reorder_is_rejected_naming_the_entry() {
        let dir = tmp();
        let backbone = BackboneParams::init(3, 4, 5, &mut RngStream::new(1));
        let path = dir.path().join("b.ckpt");
        // Swap the first two manifest entries.
        let swapped: Vec<_> = {
            let e = params::backbone_entries(&backbone);
            vec![e[1], e[0], e[2], e[3]]
        };
        save_entries(&path, &swapped).unwrap();
        let err = load_backbone(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("enc_bias") && msg.contains("enc_weight"), "{msg}");
    }

    #[test]
    fn wrong_magic_is_rejected() {
        let dir = tmp();
        let path = dir.path().join("b.ckpt");
        std::fs::write(&path, b"NOPE\nenc_weight 1 1\nDATA\n\0\0\0\0\0\0\0\0").unwrap();
        let err = load_backbone(&path).unwrap_err();
        assert!(err.to_string().contains("magic"), "{err}");
    }
}
