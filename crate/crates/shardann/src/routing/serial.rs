//! Router persistence: a tagged binary container so trained routers round
//! trip through the CLI. Layout: magic, format version, router kind, then
//! a length-prefixed bincode payload.

use std::io::{BufReader, BufWriter, Read, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::partition::PyramidRouter;
use crate::routing::{HrtIndex, KmrTree};
use crate::{Error, Result};

const ROUTER_MAGIC: u32 = u32::from_le_bytes(*b"SRTR");
const ROUTER_VERSION: u32 = 1;

/// Any trained routing index.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Router {
    Kmr(KmrTree),
    Hrt(HrtIndex),
    Pyramid(PyramidRouter),
}

impl Router {
    pub fn kind(&self) -> u32 {
        match self {
            Router::Kmr(_) => 0,
            Router::Hrt(_) => 1,
            Router::Pyramid(_) => 2,
        }
    }

    pub fn kind_name(&self) -> &'static str {
        match self {
            Router::Kmr(_) => "kmr",
            Router::Hrt(_) => "hrt",
            Router::Pyramid(_) => "pyramid",
        }
    }

    pub fn num_shards(&self) -> u32 {
        match self {
            Router::Kmr(t) => t.num_shards(),
            Router::Hrt(i) => i.num_shards(),
            Router::Pyramid(p) => p.num_shards(),
        }
    }
}

pub fn save_router(router: &Router, path: &Path) -> Result<()> {
    let payload = bincode::serialize(router)
        .map_err(|e| Error::input(format!("router serialization failed: {e}")))?;
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    w.write_all(&ROUTER_MAGIC.to_le_bytes())?;
    w.write_all(&ROUTER_VERSION.to_le_bytes())?;
    w.write_all(&router.kind().to_le_bytes())?;
    w.write_all(&(payload.len() as u64).to_le_bytes())?;
    w.write_all(&payload)?;
    w.flush()?;
    Ok(())
}

pub fn load_router(path: &Path) -> Result<Router> {
    let mut r = BufReader::new(std::fs::File::open(path)?);
    let mut u32buf = [0u8; 4];
    r.read_exact(&mut u32buf)
        .map_err(|_| Error::format(0, "truncated router header"))?;
    if u32::from_le_bytes(u32buf) != ROUTER_MAGIC {
        return Err(Error::format(0, "bad router magic"));
    }
    r.read_exact(&mut u32buf)
        .map_err(|_| Error::format(4, "truncated router header"))?;
    let version = u32::from_le_bytes(u32buf);
    if version != ROUTER_VERSION {
        return Err(Error::format(4, format!("unsupported router version {version}")));
    }
    r.read_exact(&mut u32buf)
        .map_err(|_| Error::format(8, "truncated router header"))?;
    let kind = u32::from_le_bytes(u32buf);
    let mut u64buf = [0u8; 8];
    r.read_exact(&mut u64buf)
        .map_err(|_| Error::format(12, "truncated router header"))?;
    let len = u64::from_le_bytes(u64buf) as usize;
    let mut payload = vec![0u8; len];
    r.read_exact(&mut payload)
        .map_err(|_| Error::format(20, "truncated router payload"))?;
    let router: Router = bincode::deserialize(&payload)
        .map_err(|e| Error::format(20, format!("undecodable router payload: {e}")))?;
    if router.kind() != kind {
        return Err(Error::format(8, "router kind tag disagrees with payload"));
    }
    Ok(router)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Dataset, MetricTag};
    use crate::partition::Partition;
    use crate::routing::{hrt_train, kmr_train, KmrParams, LshFamilyTag};
    use rand::Rng;

    #[test]
    fn routers_round_trip() {
        let mut r = crate::rng::rng(1);
        let values: Vec<f32> = (0..200 * 4).map(|_| r.gen_range(-1.0..1.0f32)).collect();
        let data = Dataset::new(values, 4, MetricTag::L2).unwrap();
        let labels: Vec<u32> = (0..200).map(|i| (i % 4) as u32).collect();
        let p = Partition::disjoint(labels, 4, 0.05).unwrap();

        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("router.bin");

        let tree = kmr_train(&data, &p, &KmrParams { l: 4, lambda: 5, m: 50, seed: 2 }).unwrap();
        save_router(&Router::Kmr(tree.clone()), &path).unwrap();
        assert_eq!(load_router(&path).unwrap(), Router::Kmr(tree));

        let bits: Vec<f32> = (0..200 * 8)
            .map(|_| if r.gen::<bool>() { 1.0 } else { 0.0 })
            .collect();
        let bdata = Dataset::new(bits, 8, MetricTag::Hamming).unwrap();
        let idx = hrt_train(&bdata, &p, 100, 2, 3, LshFamilyTag::BitSampling, 3).unwrap();
        save_router(&Router::Hrt(idx.clone()), &path).unwrap();
        assert_eq!(load_router(&path).unwrap(), Router::Hrt(idx));
    }

    #[test]
    fn corrupt_magic_is_a_format_error() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.bin");
        std::fs::write(&path, b"not a router").unwrap();
        assert!(matches!(load_router(&path), Err(Error::Format { .. })));
    }
}
