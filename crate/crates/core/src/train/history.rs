use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::Result;

/// Per-epoch record. Loss columns are epoch means over training batches and
/// are `None` when the term is not part of that epoch's objective.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lambda_p: f64,
    pub l_s: Option<f64>,
    pub l_y: Option<f64>,
    pub l_d: Option<f64>,
    pub l_tot: f64,
    pub val_rocauc: f64,
    pub val_acc: f64,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct History {
    pub records: Vec<EpochRecord>,
    /// Index into `records` of the returned checkpoint.
    pub best: Option<usize>,
}

pub const HISTORY_HEADER: &str = "epoch,lambda_p,L_S,L_y,L_d,L_TOT,val_rocauc,val_acc";

fn cell(out: &mut String, v: Option<f64>) {
    out.push(',');
    if let Some(v) = v {
        // `{:?}` prints the shortest string that parses back to the same f64.
        write!(out, "{v:?}").unwrap();
    }
}

impl History {
    pub fn best_record(&self) -> Option<&EpochRecord> {
        self.best.map(|i| &self.records[i])
    }

    pub fn to_csv(&self) -> String {
        let mut out = String::from(HISTORY_HEADER);
        out.push('\n');
        for r in &self.records {
            write!(out, "{}", r.epoch).unwrap();
            cell(&mut out, Some(r.lambda_p));
            cell(&mut out, r.l_s);
            cell(&mut out, r.l_y);
            cell(&mut out, r.l_d);
            cell(&mut out, Some(r.l_tot));
            cell(&mut out, Some(r.val_rocauc));
            cell(&mut out, Some(r.val_acc));
            out.push('\n');
        }
        out
    }

    pub fn write_csv(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_csv())?;
        Ok(())
    }
}
