//! IDX files: two zero bytes, a type code, the number of dimensions, then
//! big-endian `u32` dimension sizes followed by the payload.

use std::path::Path;

use super::Dataset;
use crate::error::{Error, Result};

const TYPE_U8: u8 = 0x08;

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct IdxArray {
    pub dims: Vec<usize>,
    pub data: Vec<u8>,
}

/// Parses an unsigned-byte IDX array.
pub fn parse_idx(bytes: &[u8]) -> Result<IdxArray> {
    if bytes.len() < 4 || bytes[0] != 0 || bytes[1] != 0 {
        return Err(Error::Format("bad IDX magic".into()));
    }
    if bytes[2] != TYPE_U8 {
        return Err(Error::Format(format!("unsupported IDX element type 0x{:02x}", bytes[2])));
    }
    let ndim = usize::from(bytes[3]);
    let header = 4 + 4 * ndim;
    if ndim == 0 || bytes.len() < header {
        return Err(Error::Format("truncated IDX header".into()));
    }
    let dims: Vec<usize> = bytes[4..header]
        .chunks_exact(4)
        .map(|c| u32::from_be_bytes([c[0], c[1], c[2], c[3]]) as usize)
        .collect();
    let len = dims
        .iter()
        .try_fold(1usize, |a, &d| a.checked_mul(d))
        .ok_or_else(|| Error::Format("IDX dimensions overflow".into()))?;
    if bytes.len() - header != len {
        return Err(Error::Format(format!(
            "IDX payload has {} bytes, dimensions {dims:?} need {len}",
            bytes.len() - header
        )));
    }
    Ok(IdxArray {
        dims,
        data: bytes[header..].to_vec(),
    })
}

pub fn read_idx(path: &Path) -> Result<IdxArray> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    parse_idx(&bytes).map_err(|e| Error::Format(format!("{}: {e}", path.display())))
}

pub fn encode_idx(arr: &IdxArray) -> Vec<u8> {
    let mut out = vec![0, 0, TYPE_U8, arr.dims.len() as u8];
    for &d in &arr.dims {
        out.extend_from_slice(&(d as u32).to_be_bytes());
    }
    out.extend_from_slice(&arr.data);
    out
}

pub fn write_idx(path: &Path, arr: &IdxArray) -> Result<()> {
    std::fs::write(path, encode_idx(arr)).map_err(|e| Error::io(path, e))
}

/// Images (`n x H x W`) and labels (`n`) into a single-channel dataset with
/// pixels scaled to `[0, 1]`.
pub fn read_idx_dataset(images: &Path, labels: &Path, classes: Option<usize>) -> Result<Dataset> {
    let img = read_idx(images)?;
    let lab = read_idx(labels)?;
    if img.dims.len() != 3 || lab.dims.len() != 1 || img.dims[0] != lab.dims[0] {
        return Err(Error::Format(format!(
            "expected n x H x W images and n labels, got {:?} and {:?}",
            img.dims, lab.dims
        )));
    }
    let labels: Vec<usize> = lab.data.iter().map(|&l| usize::from(l)).collect();
    let classes = classes.unwrap_or_else(|| labels.iter().max().map_or(1, |m| m + 1));
    Dataset::new(
        img.data.iter().map(|&p| f32::from(p) / 255.0).collect(),
        labels,
        [1, img.dims[1], img.dims[2]],
        classes,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn parses_header_big_endian() {
        let bytes = [0, 0, 8, 3, 0, 0, 0, 2, 0, 0, 0, 1, 0, 0, 0, 3, 1, 2, 3, 4, 5, 6];
        let a = parse_idx(&bytes).unwrap();
        assert_eq!(a.dims, vec![2, 1, 3]);
        assert_eq!(a.data, vec![1, 2, 3, 4, 5, 6]);
        assert_eq!(encode_idx(&a), bytes);
    }

    #[test]
    fn rejects_malformed() {
        assert!(parse_idx(&[1, 0, 8, 1, 0, 0, 0, 1, 0]).is_err());
        assert!(parse_idx(&[0, 0, 0x0d, 1, 0, 0, 0, 1, 0]).is_err());
        assert!(parse_idx(&[0, 0, 8, 1, 0, 0, 0, 2, 0]).is_err());
        assert!(parse_idx(&[0, 0, 8, 2, 0, 0]).is_err());
    }

    #[test]
    fn dataset_from_files() {
        let dir = tempfile::tempdir().unwrap();
        let img = IdxArray {
            dims: vec![2, 2, 2],
            data: vec![0, 255, 51, 102, 255, 0, 0, 0],
        };
        let lab = IdxArray {
            dims: vec![2],
            data: vec![1, 0],
        };
        write_idx(&dir.path().join("i"), &img).unwrap();
        write_idx(&dir.path().join("l"), &lab).unwrap();
        let ds = read_idx_dataset(&dir.path().join("i"), &dir.path().join("l"), None).unwrap();
        assert_eq!(ds.shape, [1, 2, 2]);
        assert_eq!(ds.classes, 2);
        assert_eq!(ds.images[1], 1.0);
        assert!((ds.images[2] - 0.2).abs() < 1e-7);
        assert_eq!(ds.labels, vec![1, 0]);
        assert!(read_idx_dataset(&dir.path().join("i"), &dir.path().join("missing"), None).is_err());
    }
}
