//! Ablation sweeps: temporal module choice, adapter depth placement and
//! in-block adapter position.

use std::fmt;
use std::ops::RangeInclusive;
use std::str::FromStr;

use rayon::prelude::*;

use crate::adapter::{AdapterVariant, BlockSet};
use crate::error::{Error, Result};
use crate::experiment::config::ExperimentConfig;
use crate::experiment::records::SweepRow;
use crate::experiment::run::run_experiment;
use crate::tensor::Scalar;
use crate::train::FreezeMode;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum SweepKind {
    TemporalConv,
    GlobalPosition,
    LocalPosition,
}

impl SweepKind {
    pub fn as_str(self) -> &'static str {
        match self {
            SweepKind::TemporalConv => "temporal_conv",
            SweepKind::GlobalPosition => "global_position",
            SweepKind::LocalPosition => "local_position",
        }
    }
}

impl FromStr for SweepKind {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "temporal_conv" => Ok(SweepKind::TemporalConv),
            "global_position" => Ok(SweepKind::GlobalPosition),
            "local_position" => Ok(SweepKind::LocalPosition),
            other => Err(Error::Usage(format!(
                "unknown sweep kind '{other}' (temporal_conv, global_position, local_position)"
            ))),
        }
    }
}

impl fmt::Display for SweepKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SweepCell {
    pub label: String,
    pub config: ExperimentConfig,
}

/// Block ranges of the first, middle and last third of the network. Extra
/// blocks go to the later thirds.
pub fn depth_thirds(depth: usize) -> Result<[RangeInclusive<usize>; 3]> {
    if depth < 3 {
        return Err(Error::Config(format!(
            "splitting blocks into thirds needs model.depth >= 3, got {depth}"
        )));
    }
    let (base, rem) = (depth / 3, depth % 3);
    let sizes = [base, base + usize::from(rem >= 2), base + usize::from(rem >= 1)];
    let mut start = 1;
    Ok(sizes.map(|n| {
        let r = start..=start + n - 1;
        start += n;
        r
    }))
}

fn range_label(r: &RangeInclusive<usize>) -> String {
    if r.start() == r.end() {
        format!("block {}", r.start())
    } else {
        format!("blocks {}-{}", r.start(), r.end())
    }
}

/// Adapter variant to use when the base configuration has none.
fn adapter_base(base: &ExperimentConfig) -> ExperimentConfig {
    let mut c = base.clone();
    if c.model.adapter.variant == AdapterVariant::None {
        c.model.adapter.variant = AdapterVariant::D2Conv3d;
    }
    c.mode = FreezeMode::Adapter;
    c
}

pub fn sweep_cells(kind: SweepKind, base: &ExperimentConfig) -> Result<Vec<SweepCell>> {
    base.validate()?;
    let cells = match kind {
        SweepKind::TemporalConv => {
            let mut rows = Vec::new();
            for (label, variant, mode) in [
                ("temporal_aggregation", AdapterVariant::None, FreezeMode::TemporalAggregation),
                ("linear_probe", AdapterVariant::None, FreezeMode::LinearProbe),
                ("dw_conv3d", AdapterVariant::DwConv3d, FreezeMode::Adapter),
                ("d2_conv3d", AdapterVariant::D2Conv3d, FreezeMode::Adapter),
            ] {
                let mut c = base.clone();
                c.model.adapter.variant = variant;
                if variant != AdapterVariant::None && !c.model.adapter.is_active(c.model.depth) {
                    c.model.adapter.blocks = BlockSet::All;
                }
                c.mode = mode;
                rows.push(SweepCell {
                    label: label.into(),
                    config: c,
                });
            }
            rows
        }
        SweepKind::GlobalPosition => {
            let [a, b, c] = depth_thirds(base.model.depth)?;
            let later = *b.start()..=*c.end();
            let all = *a.start()..=*c.end();
            [a, b, c, later, all]
                .into_iter()
                .map(|r| {
                    let mut cfg = adapter_base(base);
                    cfg.model.adapter.blocks = BlockSet::Only(r.clone().collect());
                    SweepCell {
                        label: range_label(&r),
                        config: cfg,
                    }
                })
                .collect()
        }
        SweepKind::LocalPosition => crate::adapter::AdapterPosition::ALL
            .into_iter()
            .map(|p| {
                let mut cfg = adapter_base(base);
                if !cfg.model.adapter.is_active(cfg.model.depth) {
                    cfg.model.adapter.blocks = BlockSet::All;
                }
                cfg.model.adapter.position = p;
                SweepCell {
                    label: p.as_str().into(),
                    config: cfg,
                }
            })
            .collect(),
    };
    for cell in &cells {
        cell.config.validate()?;
    }
    Ok(cells)
}

fn run_cell<T: Scalar>(kind: SweepKind, cell: &SweepCell) -> Result<SweepRow> {
    let run = run_experiment::<T>(&cell.config, &mut |_| {})?;
    let a = &cell.config.model.adapter;
    let report = &run.outcome.report;
    Ok(SweepRow {
        sweep: kind.as_str().into(),
        cell: cell.label.clone(),
        mode: cell.config.mode.to_string(),
        variant: a.variant.to_string(),
        position: a.position.to_string(),
        blocks: a.blocks.to_string(),
        uar: report.metrics.uar,
        war: report.metrics.war,
        trainable: report.params.trainable,
        total: report.params.total,
        best_epoch: report.best_epoch,
        backbone_hash: run.outcome.best.backbone_digest(),
    })
}

/// Trains every cell and returns one row per cell in table order. With
/// `parallel > 1` cells run concurrently on a dedicated pool.
pub fn run_sweep<T: Scalar>(kind: SweepKind, base: &ExperimentConfig, parallel: usize) -> Result<Vec<SweepRow>> {
    let cells = sweep_cells(kind, base)?;
    if parallel <= 1 {
        return cells.iter().map(|c| run_cell::<T>(kind, c)).collect();
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(parallel)
        .build()
        .map_err(|e| Error::Usage(format!("cannot start {parallel} workers: {e}")))?;
    pool.install(|| cells.par_iter().map(|c| run_cell::<T>(kind, c)).collect())
}
