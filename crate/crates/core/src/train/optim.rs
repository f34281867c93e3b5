//! AdamW with decoupled weight decay and a cosine learning-rate schedule.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Scalar, Tensor};

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWParams {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Default for AdamWParams {
    fn default() -> Self {
        AdamWParams {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 1e-2,
        }
    }
}

/// First and second moment estimates of one tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct Moments<T> {
    pub m: Vec<T>,
    pub v: Vec<T>,
}

impl<T: Scalar> Moments<T> {
    pub fn zeros(n: usize) -> Self {
        Moments {
            m: vec![T::zero(); n],
            v: vec![T::zero(); n],
        }
    }
}

/// One AdamW update of `param` in place. `step` counts from 1 and drives the
/// bias correction.
pub fn adamw_step<T: Scalar>(
    param: &mut Tensor<T>,
    grad: &Tensor<T>,
    state: &mut Moments<T>,
    step: u64,
    lr: f64,
    hp: &AdamWParams,
) -> Result<()> {
    if param.shape() != grad.shape() || state.m.len() != param.len() {
        return Err(Error::Dimension {
            op: "adamw_step",
            lhs: param.shape().to_vec(),
            rhs: grad.shape().to_vec(),
        });
    }
    if step == 0 {
        return Err(Error::Usage("adamw step counter starts at 1".into()));
    }
    let (b1, b2) = (T::of(hp.beta1), T::of(hp.beta2));
    let c1 = T::of(1.0 - hp.beta1.powi(step.min(i32::MAX as u64) as i32));
    let c2 = T::of(1.0 - hp.beta2.powi(step.min(i32::MAX as u64) as i32));
    let decay = T::of(1.0 - lr * hp.weight_decay);
    let (lr, eps) = (T::of(lr), T::of(hp.eps));
    let one = T::one();
    for (((p, &g), m), v) in param
        .data_mut()
        .iter_mut()
        .zip(grad.data())
        .zip(state.m.iter_mut())
        .zip(state.v.iter_mut())
    {
        *m = b1 * *m + (one - b1) * g;
        *v = b2 * *v + (one - b2) * g * g;
        let m_hat = *m / c1;
        let v_hat = *v / c2;
        *p = *p * decay - lr * m_hat / (v_hat.sqrt() + eps);
    }
    Ok(())
}

/// AdamW over the trainable tensors of a store.
#[derive(Clone, Debug)]
pub struct AdamW<T> {
    pub hp: AdamWParams,
    pub step: u64,
    moments: Vec<Option<Moments<T>>>,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(store: &ParamStore<T>, hp: AdamWParams) -> Self {
        AdamW {
            hp,
            step: 0,
            moments: store
                .iter()
                .map(|p| p.trainable.then(|| Moments::zeros(p.value.len())))
                .collect(),
        }
    }

    /// Applies `grads[i]` to store entry `i`. Frozen tensors are never
    /// touched, whatever their gradient slot holds.
    pub fn update(&mut self, store: &mut ParamStore<T>, grads: &[Option<Tensor<T>>], lr: f64) -> Result<()> {
        if grads.len() != store.len() {
            return Err(Error::Usage(format!(
                "{} gradient slots for {} parameters",
                grads.len(),
                store.len()
            )));
        }
        self.step += 1;
        for (i, grad) in grads.iter().enumerate() {
            let p = store.get_mut(i);
            let (Some(state), true) = (self.moments[i].as_mut(), p.trainable) else {
                continue;
            };
            let zero;
            let g = match grad {
                Some(g) => g,
                None => {
                    zero = Tensor::zeros(p.value.shape());
                    &zero
                }
            };
            adamw_step(&mut p.value, g, state, self.step, lr, &self.hp)?;
        }
        Ok(())
    }
}

/// `min_lr + (base_lr − min_lr)·(1 + cos(π·epoch/total))/2`
pub fn cosine_lr(epoch: usize, total_epochs: usize, base_lr: f64, min_lr: f64) -> Result<f64> {
    if total_epochs == 0 || epoch > total_epochs {
        return Err(Error::Usage(format!(
            "epoch {epoch} outside schedule of {total_epochs} epochs"
        )));
    }
    let phase = std::f64::consts::PI * epoch as f64 / total_epochs as f64;
    Ok(min_lr + (base_lr - min_lr) * (1.0 + phase.cos()) / 2.0)
}
