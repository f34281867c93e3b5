//! Which parameters train under each fine-tuning mode.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::adapter::{AdapterConfig, AdapterVariant};
use crate::error::{Error, Result};
use crate::params::ParamGroup;
use crate::tensor::Scalar;
use crate::vit::VideoModel;

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FreezeMode {
    Full,
    LinearProbe,
    #[default]
    Adapter,
    /// Frozen frame features averaged over time; head only, no adapters.
    TemporalAggregation,
}

impl FreezeMode {
    pub fn as_str(self) -> &'static str {
        match self {
            FreezeMode::Full => "full",
            FreezeMode::LinearProbe => "linear_probe",
            FreezeMode::Adapter => "adapter",
            FreezeMode::TemporalAggregation => "temporal_aggregation",
        }
    }

    /// Whether tensors of `group` train under this mode.
    pub fn trains(self, group: ParamGroup) -> bool {
        match self {
            FreezeMode::Full => true,
            FreezeMode::LinearProbe | FreezeMode::TemporalAggregation => group.is_head(),
            FreezeMode::Adapter => group.is_head() || group.is_adapter(),
        }
    }

    /// Rejects modes that make no sense for the adapter configuration.
    pub fn check(self, adapter: &AdapterConfig, depth: usize) -> Result<()> {
        match self {
            FreezeMode::Adapter if !adapter.is_active(depth) => Err(Error::Config(
                "train.mode = adapter needs adapter.variant other than none and a non-empty adapter.blocks".into(),
            )),
            FreezeMode::TemporalAggregation if adapter.variant != AdapterVariant::None => {
                Err(Error::Config(format!(
                    "train.mode = temporal_aggregation needs adapter.variant = none, got {}",
                    adapter.variant
                )))
            }
            _ => Ok(()),
        }
    }
}

impl FromStr for FreezeMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "full" => FreezeMode::Full,
            "linear_probe" => FreezeMode::LinearProbe,
            "adapter" => FreezeMode::Adapter,
            "temporal_aggregation" | "ta" => FreezeMode::TemporalAggregation,
            other => {
                return Err(Error::Config(format!(
                    "unknown train.mode '{other}' (full, linear_probe, adapter, temporal_aggregation)"
                )))
            }
        })
    }
}

impl fmt::Display for FreezeMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct FreezePlan {
    pub mode: FreezeMode,
    /// Names of trainable tensors in store order.
    pub trainable: Vec<String>,
    pub trainable_numel: usize,
    pub total_numel: usize,
}

impl FreezePlan {
    /// True when nothing upstream of the classifier trains, so clip features
    /// are fixed for the whole run.
    pub fn head_only(&self) -> bool {
        matches!(self.mode, FreezeMode::LinearProbe | FreezeMode::TemporalAggregation)
    }
}

/// Sets every tensor's trainable flag for `mode`.
pub fn apply_freeze<T: Scalar>(model: &mut VideoModel<T>, mode: FreezeMode) -> Result<FreezePlan> {
    let cfg = model.config();
    mode.check(&cfg.adapter, cfg.depth)?;
    let mut trainable = Vec::new();
    for p in model.params_mut().iter_mut() {
        p.trainable = mode.trains(p.spec.group);
        if p.trainable {
            trainable.push(p.spec.name.clone());
        }
    }
    Ok(FreezePlan {
        mode,
        trainable,
        trainable_numel: model.params().trainable_numel(),
        total_numel: model.params().numel(),
    })
}
