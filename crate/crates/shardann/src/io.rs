//! Dataset and ground-truth file formats.
//!
//! `fbin`/`ibin`/`u8bin` carry a (count, dim) u32 header followed by
//! row-major values; `fvecs`/`ivecs` store a u32 dim in front of every
//! vector. Integer and byte payloads widen to f32 on load so a single code
//! path serves every dataset.

use std::io::{BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::dataset::{Dataset, MetricTag};
use crate::truth::GroundTruth;
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum VectorFormat {
    Fbin,
    Ibin,
    U8bin,
    Fvecs,
    Ivecs,
}

impl VectorFormat {
    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "fbin" => Ok(VectorFormat::Fbin),
            "ibin" => Ok(VectorFormat::Ibin),
            "u8bin" => Ok(VectorFormat::U8bin),
            "fvecs" => Ok(VectorFormat::Fvecs),
            "ivecs" => Ok(VectorFormat::Ivecs),
            other => Err(Error::input(format!("unknown vector format '{other}'"))),
        }
    }

    /// Guesses the format from a file extension, defaulting to fbin.
    pub fn from_path(path: &Path) -> VectorFormat {
        match path.extension().and_then(|e| e.to_str()) {
            Some("ibin") => VectorFormat::Ibin,
            Some("u8bin") => VectorFormat::U8bin,
            Some("fvecs") => VectorFormat::Fvecs,
            Some("ivecs") => VectorFormat::Ivecs,
            _ => VectorFormat::Fbin,
        }
    }
}

impl std::fmt::Display for VectorFormat {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            VectorFormat::Fbin => "fbin",
            VectorFormat::Ibin => "ibin",
            VectorFormat::U8bin => "u8bin",
            VectorFormat::Fvecs => "fvecs",
            VectorFormat::Ivecs => "ivecs",
        };
        f.write_str(s)
    }
}

struct ByteCursor<'a> {
    bytes: &'a [u8],
    offset: usize,
}

impl<'a> ByteCursor<'a> {
    fn take(&mut self, len: usize, what: &str) -> Result<&'a [u8]> {
        if self.offset + len > self.bytes.len() {
            return Err(Error::format(self.offset as u64, format!("truncated {what}")));
        }
        let out = &self.bytes[self.offset..self.offset + len];
        self.offset += len;
        Ok(out)
    }

    fn u32(&mut self, what: &str) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4, what)?.try_into().unwrap()))
    }

    fn done(&self) -> bool {
        self.offset == self.bytes.len()
    }
}

/// Reads a vector file into a dataset tagged with `metric`.
pub fn read_vectors(path: &Path, format: VectorFormat, metric: MetricTag) -> Result<Dataset> {
    let bytes = std::fs::read(path)?;
    let mut c = ByteCursor {
        bytes: &bytes,
        offset: 0,
    };
    match format {
        VectorFormat::Fbin | VectorFormat::Ibin | VectorFormat::U8bin => {
            let n = c.u32("header")? as usize;
            let d = c.u32("header")? as usize;
            if n == 0 {
                return Err(Error::format(0, "zero vector count"));
            }
            if d == 0 {
                return Err(Error::format(4, "zero dimension"));
            }
            let mut values = Vec::with_capacity(n * d);
            match format {
                VectorFormat::Fbin => {
                    let data = c.take(4 * n * d, "vector data")?;
                    values.extend(
                        data.chunks_exact(4)
                            .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
                    );
                }
                VectorFormat::Ibin => {
                    let data = c.take(4 * n * d, "vector data")?;
                    values.extend(
                        data.chunks_exact(4)
                            .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as f32),
                    );
                }
                VectorFormat::U8bin => {
                    let data = c.take(n * d, "vector data")?;
                    values.extend(data.iter().map(|&b| b as f32));
                }
                _ => unreachable!(),
            }
            if !c.done() {
                return Err(Error::format(
                    c.offset as u64,
                    "trailing bytes after the advertised vector count",
                ));
            }
            Dataset::new(values, d, metric)
        }
        VectorFormat::Fvecs | VectorFormat::Ivecs => {
            let mut values = Vec::new();
            let mut dim: Option<usize> = None;
            while !c.done() {
                let at = c.offset as u64;
                let d = c.u32("record header")? as usize;
                if d == 0 {
                    return Err(Error::format(at, "zero-dimensional record"));
                }
                match dim {
                    None => dim = Some(d),
                    Some(expect) if expect != d => {
                        return Err(Error::format(
                            at,
                            format!("record dimension {d} differs from first record {expect}"),
                        ));
                    }
                    _ => {}
                }
                let data = c.take(4 * d, "record data")?;
                match format {
                    VectorFormat::Fvecs => values.extend(
                        data.chunks_exact(4)
                            .map(|b| f32::from_le_bytes(b.try_into().unwrap())),
                    ),
                    VectorFormat::Ivecs => values.extend(
                        data.chunks_exact(4)
                            .map(|b| i32::from_le_bytes(b.try_into().unwrap()) as f32),
                    ),
                    _ => unreachable!(),
                }
            }
            let Some(d) = dim else {
                return Err(Error::format(0, "empty vector file"));
            };
            Dataset::new(values, d, metric)
        }
    }
}

/// Writes a dataset in the given format. fbin round trips bit-identically.
pub fn write_vectors(data: &Dataset, path: &Path, format: VectorFormat) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    match format {
        VectorFormat::Fbin | VectorFormat::Ibin | VectorFormat::U8bin => {
            w.write_all(&(data.len() as u32).to_le_bytes())?;
            w.write_all(&(data.dim() as u32).to_le_bytes())?;
            for &v in data.values() {
                match format {
                    VectorFormat::Fbin => w.write_all(&v.to_le_bytes())?,
                    VectorFormat::Ibin => w.write_all(&(v as i32).to_le_bytes())?,
                    VectorFormat::U8bin => w.write_all(&[v as u8])?,
                    _ => unreachable!(),
                }
            }
        }
        VectorFormat::Fvecs | VectorFormat::Ivecs => {
            for row in data.rows() {
                w.write_all(&(data.dim() as u32).to_le_bytes())?;
                for &v in row {
                    match format {
                        VectorFormat::Fvecs => w.write_all(&v.to_le_bytes())?,
                        VectorFormat::Ivecs => w.write_all(&(v as i32).to_le_bytes())?,
                        _ => unreachable!(),
                    }
                }
            }
        }
    }
    w.flush()?;
    Ok(())
}

/// Ground-truth file: u32 query count, u32 k, then ids (u32) and distances
/// (f32), both row-major.
pub fn write_ground_truth(gt: &GroundTruth, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&(gt.num_queries() as u32).to_le_bytes())?;
    w.write_all(&(gt.k() as u32).to_le_bytes())?;
    for &id in gt.flat_ids() {
        w.write_all(&id.to_le_bytes())?;
    }
    for &d in gt.flat_distances() {
        w.write_all(&d.to_le_bytes())?;
    }
    w.flush()?;
    Ok(())
}

pub fn read_ground_truth(path: &Path) -> Result<GroundTruth> {
    let bytes = std::fs::read(path)?;
    let mut c = ByteCursor {
        bytes: &bytes,
        offset: 0,
    };
    let nq = c.u32("header")? as usize;
    let k = c.u32("header")? as usize;
    if nq == 0 || k == 0 {
        return Err(Error::format(0, "empty ground truth"));
    }
    let ids: Vec<u32> = c
        .take(4 * nq * k, "ids")?
        .chunks_exact(4)
        .map(|b| u32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    let distances: Vec<f32> = c
        .take(4 * nq * k, "distances")?
        .chunks_exact(4)
        .map(|b| f32::from_le_bytes(b.try_into().unwrap()))
        .collect();
    GroundTruth::from_parts(k, ids, distances)
}

/// Hex sha256 of a file, used for artifact provenance chaining.
pub fn file_sha256(path: &Path) -> Result<String> {
    use sha2::{Digest, Sha256};
    let mut file = std::fs::File::open(path)?;
    let mut hasher = Sha256::new();
    let mut buf = [0u8; 65536];
    loop {
        let read = file.read(&mut buf)?;
        if read == 0 {
            break;
        }
        hasher.update(&buf[..read]);
    }
    Ok(hex_string(&hasher.finalize()))
}

fn hex_string(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::Rng;

    #[test]
    fn fbin_header_layout() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("two.fbin");
        let mut bytes = Vec::new();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        for v in [1.0f32, 2.0, 3.0, 4.0] {
            bytes.extend(v.to_le_bytes());
        }
        std::fs::write(&path, &bytes).unwrap();
        let data = read_vectors(&path, VectorFormat::Fbin, MetricTag::L2).unwrap();
        assert_eq!(data.len(), 2);
        assert_eq!(data.dim(), 2);
        assert_eq!(data.row(1), &[3.0, 4.0]);
    }

    #[test]
    fn fvecs_mixed_dimensions_are_rejected() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.fvecs");
        let mut bytes = Vec::new();
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2.0f32.to_le_bytes());
        bytes.extend(3u32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        bytes.extend(2.0f32.to_le_bytes());
        bytes.extend(3.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        assert!(matches!(
            read_vectors(&path, VectorFormat::Fvecs, MetricTag::L2),
            Err(Error::Format { .. })
        ));
    }

    #[test]
    fn truncation_reports_an_offset() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("short.fbin");
        let mut bytes = Vec::new();
        bytes.extend(3u32.to_le_bytes());
        bytes.extend(2u32.to_le_bytes());
        bytes.extend(1.0f32.to_le_bytes());
        std::fs::write(&path, &bytes).unwrap();
        match read_vectors(&path, VectorFormat::Fbin, MetricTag::L2) {
            Err(Error::Format { offset, .. }) => assert_eq!(offset, 8),
            other => panic!("expected a format error, got {other:?}"),
        }
    }

    #[test]
    fn fbin_round_trip_is_bit_identical() {
        let mut r = crate::rng::rng(3);
        let values: Vec<f32> = (0..1000 * 8).map(|_| r.gen_range(-10.0..10.0f32)).collect();
        let data = Dataset::new(values, 8, MetricTag::L2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("rt.fbin");
        write_vectors(&data, &path, VectorFormat::Fbin).unwrap();
        let bytes_a = std::fs::read(&path).unwrap();
        let back = read_vectors(&path, VectorFormat::Fbin, MetricTag::L2).unwrap();
        assert_eq!(back, data);
        write_vectors(&back, &path, VectorFormat::Fbin).unwrap();
        let bytes_b = std::fs::read(&path).unwrap();
        assert_eq!(bytes_a, bytes_b);
    }

    #[test]
    fn other_formats_round_trip_values() {
        let values: Vec<f32> = vec![0.0, 3.0, 250.0, 17.0, 99.0, 1.0];
        let data = Dataset::new(values, 3, MetricTag::L2).unwrap();
        let dir = tempfile::tempdir().unwrap();
        for fmt in [VectorFormat::Ibin, VectorFormat::U8bin, VectorFormat::Fvecs, VectorFormat::Ivecs] {
            let path = dir.path().join(format!("x.{fmt}"));
            write_vectors(&data, &path, fmt).unwrap();
            let back = read_vectors(&path, fmt, MetricTag::L2).unwrap();
            assert_eq!(back, data, "{fmt}");
        }
    }

    #[test]
    fn ground_truth_round_trips() {
        let gt = GroundTruth::from_parts(2, vec![5, 9, 1, 2], vec![0.5, 1.5, 0.25, 4.0]).unwrap();
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("gt.bin");
        write_ground_truth(&gt, &path).unwrap();
        assert_eq!(read_ground_truth(&path).unwrap(), gt);
    }
}
