//! Mini-batch cross-entropy training with AdamW and a per-epoch cosine
//! schedule. Samples of a batch are differentiated on rayon workers and their
//! gradients summed in batch order, so a run is bitwise reproducible
//! regardless of thread count.

use rand::seq::SliceRandom;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::adapter::ParamReport;
use crate::error::{Error, Result};
use crate::params::{rng_for, ParamStore};
use crate::tensor::{Graph, Scalar, Tensor};
use crate::train::freeze::FreezePlan;
use crate::train::metrics::{argmax, uar_war, Metrics};
use crate::train::optim::{cosine_lr, AdamW, AdamWParams};
use crate::train::synth::Dataset;
use crate::vit::VideoModel;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub lr: f64,
    pub min_lr: f64,
    pub weight_decay: f64,
    pub batch: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Evaluate every this many epochs (and always after the last one).
    pub eval_every: usize,
    /// Stop once evaluation WAR reaches this value.
    pub target_war: Option<f64>,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 5e-4,
            min_lr: 0.0,
            weight_decay: 1e-2,
            batch: 8,
            epochs: 10,
            seed: 0,
            eval_every: 1,
            target_war: None,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::Config(m));
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return bad(format!("train.lr must be positive, got {}", self.lr));
        }
        if !(self.min_lr >= 0.0 && self.min_lr <= self.lr) {
            return bad(format!("train.min_lr must lie in [0, lr], got {}", self.min_lr));
        }
        if !(self.weight_decay >= 0.0 && self.weight_decay.is_finite()) {
            return bad(format!("train.weight_decay must be >= 0, got {}", self.weight_decay));
        }
        if self.batch == 0 {
            return bad("train.batch must be at least 1".into());
        }
        if self.epochs == 0 {
            return bad("train.epochs must be at least 1".into());
        }
        if self.eval_every == 0 {
            return bad("train.eval_every must be at least 1".into());
        }
        if let Some(t) = self.target_war {
            if !(0.0..=1.0).contains(&t) {
                return bad(format!("train.target_war must lie in [0, 1], got {t}"));
            }
        }
        Ok(())
    }

    pub fn adamw(&self) -> AdamWParams {
        AdamWParams {
            weight_decay: self.weight_decay,
            ..AdamWParams::default()
        }
    }
}

/// One line of the run log.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub epoch: usize,
    pub lr: f64,
    /// Mean training loss over the epoch.
    pub loss: f64,
    pub steps: u64,
    pub uar: Option<f64>,
    pub war: Option<f64>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    /// Evaluation metrics of the best checkpoint.
    pub metrics: Metrics,
    pub best_epoch: usize,
    pub curve: Vec<EpochRecord>,
    pub params: ParamReport,
    pub steps: u64,
    pub stopped_early: bool,
}

pub struct TrainOutcome<T> {
    pub report: MetricsReport,
    /// Parameters at the best evaluation WAR (earliest on ties).
    pub best: ParamStore<T>,
}

fn cast_clips<T: Scalar>(data: &Dataset) -> Vec<Tensor<T>> {
    data.clips.iter().map(|c| c.cast()).collect()
}

enum Inputs<T> {
    Clips(Vec<Tensor<T>>),
    /// Pooled features, used when only the classifier trains.
    Features(Vec<Tensor<T>>),
}

impl<T: Scalar> Inputs<T> {
    fn prepare(model: &VideoModel<T>, data: &Dataset, head_only: bool) -> Result<Self> {
        let clips = cast_clips(data);
        if !head_only {
            return Ok(Inputs::Clips(clips));
        }
        let features = clips
            .par_iter()
            .map(|c| model.feature_vector(c))
            .collect::<Result<Vec<_>>>()?;
        Ok(Inputs::Features(features))
    }

    /// Loss and per-parameter gradients of one sample.
    fn sample(&self, model: &VideoModel<T>, i: usize, label: usize) -> Result<(T, Vec<Option<Tensor<T>>>)> {
        let mut g = Graph::new();
        let vars = model.register(&mut g, true);
        let logits = match self {
            Inputs::Clips(c) => model.forward(&mut g, &vars, &c[i])?,
            Inputs::Features(f) => {
                let x = g.leaf_ref(&f[i], false);
                model.head(&mut g, &vars, x)?
            }
        };
        let loss = g.cross_entropy(logits, label)?;
        let value = g.value(loss).item();
        let mut grads = g.backward(loss)?;
        let per_param = vars.all.iter().map(|&v| grads.take(v)).collect();
        Ok((value, per_param))
    }

    fn logits(&self, model: &VideoModel<T>, i: usize) -> Result<Tensor<T>> {
        match self {
            Inputs::Clips(c) => model.logits(&c[i]),
            Inputs::Features(f) => {
                let mut g = Graph::new();
                let vars = model.register(&mut g, false);
                let x = g.leaf_ref(&f[i], false);
                let out = model.head(&mut g, &vars, x)?;
                Ok(g.value(out).clone())
            }
        }
    }

    fn predict(&self, model: &VideoModel<T>, n: usize) -> Result<Vec<usize>> {
        (0..n)
            .into_par_iter()
            .map(|i| self.logits(model, i).map(|l| argmax(l.data())))
            .collect()
    }
}

/// Predicted labels for every clip of `data`.
pub fn predict<T: Scalar>(model: &VideoModel<T>, data: &Dataset) -> Result<Vec<usize>> {
    Inputs::Clips(cast_clips(data)).predict(model, data.len())
}

pub fn evaluate<T: Scalar>(model: &VideoModel<T>, data: &Dataset) -> Result<Metrics> {
    let preds = predict(model, data)?;
    uar_war(&preds, &data.labels, model.config().classes)
}

fn divergence(step: u64, e: Error) -> Error {
    match e {
        Error::NonFinite(op) => Error::Divergence {
            step: step as usize,
            detail: format!("non-finite value in {op}"),
        },
        other => other,
    }
}

/// Trains the flagged parameters of `model` in place. `eval` defaults to the
/// training set. `on_epoch` sees every log record as it is produced.
pub fn train<T: Scalar>(
    model: &mut VideoModel<T>,
    data: &Dataset,
    eval: Option<&Dataset>,
    cfg: &TrainConfig,
    plan: &FreezePlan,
    on_epoch: &mut dyn FnMut(&EpochRecord),
) -> Result<TrainOutcome<T>> {
    cfg.validate()?;
    if data.is_empty() {
        return Err(Error::Usage("training set is empty".into()));
    }
    let classes = model.config().classes;
    if data.classes != classes {
        return Err(Error::Config(format!(
            "dataset has {} classes, model has {classes}",
            data.classes
        )));
    }
    let eval = eval.unwrap_or(data);
    let head_only = plan.head_only();
    let train_in = Inputs::prepare(model, data, head_only)?;
    let eval_in = if std::ptr::eq(eval, data) {
        None
    } else {
        Some(Inputs::prepare(model, eval, head_only)?)
    };

    let mut opt = AdamW::new(model.params(), cfg.adamw());
    let mut order: Vec<usize> = (0..data.len()).collect();
    let mut curve = Vec::new();
    let mut best: Option<(f64, usize, Metrics, ParamStore<T>)> = None;
    let mut stopped_early = false;

    for epoch in 1..=cfg.epochs {
        let lr = cosine_lr(epoch - 1, cfg.epochs, cfg.lr, cfg.min_lr)?;
        order.sort_unstable();
        order.shuffle(&mut rng_for(cfg.seed, &format!("shuffle/epoch{epoch}")));
        let mut loss_sum = 0.0;
        for batch in order.chunks(cfg.batch) {
            let step = opt.step + 1;
            let model_ref: &VideoModel<T> = model;
            let results: Vec<(T, Vec<Option<Tensor<T>>>)> = batch
                .par_iter()
                .map(|&i| train_in.sample(model_ref, i, data.labels[i]))
                .collect::<Result<_>>()
                .map_err(|e| divergence(step, e))?;
            let inv = T::one() / T::from_usize(batch.len());
            let mut sum: Vec<Option<Tensor<T>>> = vec![None; model.params().len()];
            let mut batch_loss = T::zero();
            for (loss, grads) in results {
                batch_loss += loss;
                for (acc, g) in sum.iter_mut().zip(grads) {
                    let Some(g) = g else { continue };
                    match acc {
                        Some(a) => a.data_mut().iter_mut().zip(g.data()).for_each(|(a, &b)| *a += b),
                        None => *acc = Some(g),
                    }
                }
            }
            for t in sum.iter_mut().flatten() {
                t.data_mut().iter_mut().for_each(|v| *v *= inv);
            }
            let batch_loss = (batch_loss * inv).f64();
            if !batch_loss.is_finite() {
                return Err(Error::Divergence {
                    step: step as usize,
                    detail: format!("loss is {batch_loss}"),
                });
            }
            loss_sum += batch_loss * batch.len() as f64;
            opt.update(model.params_mut(), &sum, lr)?;
        }

        let evaluate_now = epoch % cfg.eval_every == 0 || epoch == cfg.epochs;
        let mut record = EpochRecord {
            epoch,
            lr,
            loss: loss_sum / data.len() as f64,
            steps: opt.step,
            uar: None,
            war: None,
        };
        if evaluate_now {
            let preds = match &eval_in {
                Some(e) => e.predict(model, eval.len())?,
                None => train_in.predict(model, data.len())?,
            };
            let m = uar_war(&preds, &eval.labels, classes)?;
            record.uar = Some(m.uar);
            record.war = Some(m.war);
            if best.as_ref().is_none_or(|(w, ..)| m.war > *w) {
                best = Some((m.war, epoch, m, model.params().clone()));
            }
            if cfg.target_war.is_some_and(|t| record.war.unwrap_or(0.0) >= t) {
                stopped_early = epoch < cfg.epochs;
            }
        }
        on_epoch(&record);
        curve.push(record);
        if stopped_early {
            break;
        }
    }

    let (_, best_epoch, metrics, best_params) = best.expect("last epoch always evaluates");
    Ok(TrainOutcome {
        report: MetricsReport {
            metrics,
            best_epoch,
            curve,
            params: ParamReport::from_store(model.params(), plan.mode),
            steps: opt.step,
            stopped_early,
        },
        best: best_params,
    })
}
