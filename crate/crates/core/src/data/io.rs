//! Binary dataset file.
//!
//! Layout (little endian): magic `BFDS`, `u32` version, `u32`-prefixed JSON
//! header, then per sample: `u32`-prefixed UTF-8 id, `u8` subtype, `u16`
//! domain, `u32` n, `u32` d, `n*d` `f64` instance values, `u32` G, `G` `f64`
//! gene values, `u8` gene-present flag.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{Dataset, GenConfig};
use crate::binio::{len_u32, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;
use crate::models::Bag;

pub const DATASET_MAGIC: &[u8; 4] = b"BFDS";
pub const DATASET_VERSION: u32 = 1;

#[derive(Debug, Clone, Serialize, Deserialize)]
struct Header {
    num_samples: usize,
    num_subtypes: usize,
    num_domains: usize,
    gen_config: Option<GenConfig>,
}

pub fn dataset_to_bytes(ds: &Dataset) -> Result<Vec<u8>> {
    let header = Header {
        num_samples: ds.bags.len(),
        num_subtypes: ds.num_subtypes,
        num_domains: ds.num_domains,
        gen_config: ds.gen_config.clone(),
    };
    let mut w = ByteWriter::new();
    w.bytes(DATASET_MAGIC);
    w.u32(DATASET_VERSION);
    w.blob(&serde_json::to_vec(&header)?)?;
    for bag in &ds.bags {
        w.blob(bag.id.as_bytes())?;
        w.u8(u8::try_from(bag.subtype).map_err(|_| Error::contract("subtype does not fit u8"))?);
        w.u16(u16::try_from(bag.domain).map_err(|_| Error::contract("domain does not fit u16"))?);
        w.u32(len_u32(bag.instances.rows())?);
        w.u32(len_u32(bag.instances.cols())?);
        w.f64s(bag.instances.values());
        let genes = bag.genes.as_deref().unwrap_or(&[]);
        w.u32(len_u32(genes.len())?);
        w.f64s(genes);
        w.u8(bag.genes.is_some() as u8);
    }
    Ok(w.finish())
}

pub fn dataset_from_bytes(buf: &[u8]) -> Result<Dataset> {
    let mut r = ByteReader::new(buf);
    r.expect_magic(DATASET_MAGIC)?;
    r.expect_version(DATASET_VERSION)?;
    let at = r.offset();
    let header: Header = serde_json::from_slice(r.blob("header")?).map_err(|e| Error::Format {
        offset: at,
        msg: format!("header: {e}"),
    })?;
    let mut bags = Vec::with_capacity(header.num_samples.min(1 << 20));
    for _ in 0..header.num_samples {
        let id = r.utf8("sample id")?;
        let subtype = r.u8("subtype")? as usize;
        let domain = r.u16("domain")? as usize;
        let n = r.u32("instance count")? as usize;
        let d = r.u32("instance width")? as usize;
        let values = r.f64s(n * d, "instance values")?;
        let g = r.u32("gene count")? as usize;
        let genes = r.f64s(g, "gene values")?;
        let at = r.offset();
        let present = match r.u8("gene-present flag")? {
            0 => false,
            1 => true,
            other => {
                return Err(Error::Format {
                    offset: at,
                    msg: format!("gene-present flag must be 0 or 1, got {other}"),
                })
            }
        };
        bags.push(Bag {
            id,
            instances: Tensor::new(n, d, values)?,
            subtype,
            domain,
            genes: present.then_some(genes),
        });
    }
    if !r.is_at_end() {
        return r.fail("trailing bytes after last sample");
    }
    Dataset::new(bags, header.num_subtypes, header.num_domains, header.gen_config)
}

pub fn write_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    fs::write(path, dataset_to_bytes(ds)?)?;
    Ok(())
}

pub fn read_dataset(path: &Path) -> Result<Dataset> {
    dataset_from_bytes(&fs::read(path)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::generate;

    fn tiny() -> Dataset {
        let mut ds = generate(&GenConfig {
            num_samples: 6,
            d: 4,
            gene_dim: 3,
            bag_size_range: [1, 3],
            ..GenConfig::default()
        })
        .unwrap();
        ds.bags[2].genes = None;
        ds
    }

    #[test]
    fn round_trip() {
        let ds = tiny();
        let bytes = dataset_to_bytes(&ds).unwrap();
        let back = dataset_from_bytes(&bytes).unwrap();
        assert_eq!(back, ds);
        assert_eq!(dataset_to_bytes(&back).unwrap(), bytes);
    }

    #[test]
    fn corrupt_magic_version_truncation() {
        let bytes = dataset_to_bytes(&tiny()).unwrap();
        let mut bad = bytes.clone();
        bad[1] = b'Z';
        assert!(matches!(dataset_from_bytes(&bad), Err(Error::Format { offset: 0, .. })));

        let mut bad = bytes.clone();
        bad[4..8].copy_from_slice(&(DATASET_VERSION + 1).to_le_bytes());
        assert!(matches!(
            dataset_from_bytes(&bad),
            Err(Error::UnsupportedVersion { found: 2, expected: 1 })
        ));

        match dataset_from_bytes(&bytes[..bytes.len() - 10]) {
            Err(Error::Format { offset, .. }) => assert!(offset > 8),
            other => panic!("expected format error, got {other:?}"),
        }
    }
}
