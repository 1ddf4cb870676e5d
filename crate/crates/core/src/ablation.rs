//! Hard-negative weighting sweep: one training run per β, scored at each K.

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use crate::embedding::EmbeddingTable;
use crate::error::{Error, Result};
use crate::eval::{evaluate, EvalOptions};
use crate::fusion::{FusionConfig, FusionParams};
use crate::trainer::{train_stage2, TrainConfig};
use crate::tripletgen::{TestQuery, Triplet};

pub const DEFAULT_BETAS: [f64; 4] = [0.7, 0.5, 0.3, 0.0];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub beta: f64,
    pub map: Vec<f64>,
    pub final_loss: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationGrid {
    pub ks: Vec<usize>,
    pub rows: Vec<AblationRow>,
}

impl AblationGrid {
    pub fn all_finite(&self) -> bool {
        self.rows.iter().all(|r| r.map.iter().all(|v| v.is_finite()))
    }

    /// β of the best row at the largest K.
    pub fn best_beta(&self) -> Option<f64> {
        self.rows
            .iter()
            .filter_map(|r| r.map.last().map(|m| (r.beta, *m)))
            .fold(None, |best: Option<(f64, f64)>, cur| match best {
                Some(b) if b.1 >= cur.1 => Some(b),
                _ => Some(cur),
            })
            .map(|b| b.0)
    }

    /// `HN-Weighting | mAP@5 | mAP@10 | ...` with percentages.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = write!(out, "| {:<12} |", "HN-Weighting");
        for k in &self.ks {
            let _ = write!(out, " {:>8} |", format!("mAP@{k}"));
        }
        out.push('\n');
        let _ = write!(out, "|{}|", "-".repeat(14));
        for _ in &self.ks {
            let _ = write!(out, "{}|", "-".repeat(10));
        }
        out.push('\n');
        for r in &self.rows {
            let _ = write!(out, "| {:<12.1} |", r.beta);
            for v in &r.map {
                let _ = write!(out, " {:>8.2} |", 100.0 * v);
            }
            out.push('\n');
        }
        out
    }
}

pub struct AblationInputs<'a> {
    pub train: &'a [Triplet],
    pub queries: &'a [TestQuery],
    pub gallery_ids: &'a [String],
    pub video: &'a EmbeddingTable,
    pub text: &'a EmbeddingTable,
    pub model: FusionConfig,
}

/// Train from the same initialization for each β and evaluate the result.
pub fn ablate_hn(
    inputs: &AblationInputs<'_>,
    betas: &[f64],
    base: &TrainConfig,
    eval: &EvalOptions,
) -> Result<AblationGrid> {
    if betas.is_empty() {
        return Err(Error::Config("no β values to sweep".into()));
    }
    let mut rows = Vec::with_capacity(betas.len());
    for &beta in betas {
        let mut cfg = base.clone();
        cfg.loss.beta = beta;
        let init = FusionParams::init(&inputs.model, cfg.seed)?;
        let (params, manifest) = train_stage2(inputs.train, inputs.video, inputs.text, init, &cfg, None, None)?;
        let report = evaluate(
            &params,
            inputs.queries,
            inputs.video,
            inputs.text,
            inputs.gallery_ids,
            eval,
        )?;
        log::info!("β={beta}: mAP {:?}", report.map);
        rows.push(AblationRow {
            beta,
            map: report.map,
            final_loss: manifest.history.last().map(|h| h.loss).unwrap_or(f64::NAN),
        });
    }
    Ok(AblationGrid {
        ks: eval.ks.clone(),
        rows,
    })
}
