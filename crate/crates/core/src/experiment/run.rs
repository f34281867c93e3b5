//! One training run from an experiment configuration.

use crate::error::Result;
use crate::experiment::config::ExperimentConfig;
use crate::tensor::Scalar;
use crate::train::{apply_freeze, train, EpochRecord, FreezePlan, TrainOutcome};
use crate::vit::VideoModel;

pub struct Run<T: Scalar> {
    pub plan: FreezePlan,
    pub outcome: TrainOutcome<T>,
}

impl<T: Scalar> Run<T> {
    /// Model holding the best checkpoint's parameters.
    pub fn best_model(&self, cfg: &ExperimentConfig) -> Result<VideoModel<T>> {
        VideoModel::from_store(cfg.model.clone(), self.outcome.best.clone())
    }
}

/// Generates the synthetic data, builds and freezes the model, and trains.
/// Everything random is keyed to `train.seed`.
pub fn run_experiment<T: Scalar>(
    cfg: &ExperimentConfig,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<Run<T>> {
    cfg.validate()?;
    let seed = cfg.train.seed;
    let data = cfg.train_data().generate(seed)?;
    let eval = cfg.eval_data().map(|s| s.generate(seed)).transpose()?;
    let mut model = VideoModel::<T>::new(cfg.model.clone(), seed)?;
    let plan = apply_freeze(&mut model, cfg.mode)?;
    let outcome = train(&mut model, &data, eval.as_ref(), &cfg.train, &plan, on_epoch)?;
    Ok(Run { plan, outcome })
}
