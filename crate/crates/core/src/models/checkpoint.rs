//! Versioned binary parameter checkpoints.
//!
//! Layout (little endian): magic `BFCK`, `u32` version, `u32`-prefixed JSON
//! config block, `u32` parameter count, then per parameter a `u32`-prefixed
//! UTF-8 name, `u32` rows, `u32` cols and `rows*cols` `f64` values.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::ModelConfig;
use super::params::{GeneParams, MainParams, ParamSet};
use crate::binio::{len_u32, ByteReader, ByteWriter};
use crate::error::{Error, Result};
use crate::gradcore::Tensor;

pub const CHECKPOINT_MAGIC: &[u8; 4] = b"BFCK";
pub const CHECKPOINT_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Branch {
    Main,
    Gene,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    pub branch: Branch,
    pub model: ModelConfig,
    pub frozen: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Checkpoint {
    pub header: CheckpointHeader,
    pub params: Vec<(String, Tensor)>,
}

impl Checkpoint {
    pub fn from_main(params: &MainParams) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                branch: Branch::Main,
                model: params.config.clone(),
                frozen: false,
            },
            params: collect(params),
        }
    }

    pub fn from_gene(params: &GeneParams) -> Self {
        Checkpoint {
            header: CheckpointHeader {
                branch: Branch::Gene,
                model: params.config.clone(),
                frozen: params.frozen,
            },
            params: collect(params),
        }
    }

    pub fn into_main(self) -> Result<MainParams> {
        if self.header.branch != Branch::Main {
            return Err(Error::Data("checkpoint holds gene-branch parameters".into()));
        }
        MainParams::from_named(&self.header.model, self.params)
    }

    pub fn into_gene(self) -> Result<GeneParams> {
        if self.header.branch != Branch::Gene {
            return Err(Error::Data("checkpoint holds main-branch parameters".into()));
        }
        GeneParams::from_named(&self.header.model, self.params, self.header.frozen)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut w = ByteWriter::new();
        w.bytes(CHECKPOINT_MAGIC);
        w.u32(CHECKPOINT_VERSION);
        w.blob(&serde_json::to_vec(&self.header)?)?;
        w.u32(len_u32(self.params.len())?);
        for (name, t) in &self.params {
            w.blob(name.as_bytes())?;
            w.u32(len_u32(t.rows())?);
            w.u32(len_u32(t.cols())?);
            w.f64s(t.values());
        }
        Ok(w.finish())
    }

    pub fn from_bytes(buf: &[u8]) -> Result<Self> {
        let mut r = ByteReader::new(buf);
        r.expect_magic(CHECKPOINT_MAGIC)?;
        r.expect_version(CHECKPOINT_VERSION)?;
        let at = r.offset();
        let header: CheckpointHeader = serde_json::from_slice(r.blob("config block")?)
            .map_err(|e| Error::Format {
                offset: at,
                msg: format!("config block: {e}"),
            })?;
        let count = r.u32("parameter count")? as usize;
        let mut params = Vec::with_capacity(count.min(1024));
        for _ in 0..count {
            let name = r.utf8("parameter name")?;
            let rows = r.u32("rows")? as usize;
            let cols = r.u32("cols")? as usize;
            let values = r.f64s(rows * cols, "parameter values")?;
            params.push((name, Tensor::new(rows, cols, values)?));
        }
        if !r.is_at_end() {
            return r.fail("trailing bytes after last parameter");
        }
        Ok(Checkpoint { header, params })
    }

    pub fn write(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_bytes()?)?;
        Ok(())
    }

    pub fn read(path: &Path) -> Result<Self> {
        Checkpoint::from_bytes(&fs::read(path)?)
    }
}

fn collect(params: &impl ParamSet) -> Vec<(String, Tensor)> {
    params
        .named()
        .into_iter()
        .map(|(n, t)| (n.to_string(), t.clone()))
        .collect()
}
