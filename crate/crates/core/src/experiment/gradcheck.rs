//! Backward pass against central finite differences on a small model, in
//! `f64`, over every adapter, dilation-head and classifier parameter.

use serde::{Deserialize, Serialize};

use crate::adapter::{group_label, AdapterConfig, AdapterVariant, BlockSet};
use crate::error::{Error, Result};
use crate::params::{rng_for, uniform_tensor};
use crate::tensor::{finite_difference_gradient, Fault, Graph, Tensor};
use crate::train::{FreezeMode, SynthSpec};
use crate::vit::{ModelConfig, VideoModel};

/// Central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Gradients smaller than this are compared on an absolute scale.
pub const REL_FLOOR: f64 = 1e-6;

/// hidden 64, depth 2, four 16² frames in 8-pixel patches, D²Conv3D in both blocks.
pub fn tiny_config() -> ModelConfig {
    ModelConfig {
        frames: 4,
        height: 16,
        width: 16,
        patch: 8,
        hidden: 64,
        depth: 2,
        heads: 4,
        mlp_ratio: 4,
        classes: 4,
        adapter: AdapterConfig {
            variant: AdapterVariant::D2Conv3d,
            bottleneck: 8,
            blocks: BlockSet::All,
            ..AdapterConfig::default()
        },
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GroupCheck {
    pub group: String,
    pub params: usize,
    pub max_rel_err: f64,
    pub max_abs_err: f64,
    pub passed: bool,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct GradcheckReport {
    pub tolerance: f64,
    pub groups: Vec<GroupCheck>,
    /// Dilation rates of each convolutional adapter at the checked point.
    pub dilation_rates: Vec<[f64; 3]>,
    pub passed: bool,
}

impl GradcheckReport {
    pub fn failing(&self) -> Vec<&str> {
        self.groups
            .iter()
            .filter(|g| !g.passed)
            .map(|g| g.group.as_str())
            .collect()
    }
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

fn near_integer(rates: &[[f64; 3]]) -> bool {
    rates
        .iter()
        .flatten()
        .any(|&r| (r - r.round()).abs() < 0.05)
}

/// Moves checked parameters off their identity initialization. At identity
/// (`W_up = 0`) most adapter gradients vanish exactly, which would make the
/// comparison vacuous.
fn randomize(model: &mut VideoModel<f64>, seed: u64, attempt: u32) {
    let hidden = model.config().hidden as f64;
    for p in model.params_mut().iter_mut() {
        let g = p.spec.group;
        if !(g.is_adapter() || g.is_head()) {
            continue;
        }
        let name = p.spec.name.as_str();
        let mut rng = rng_for(seed, &format!("gradcheck/{attempt}/{name}"));
        let shape = p.value.shape().to_vec();
        p.value = if name.ends_with("dilation.bias") {
            let mut t = uniform_tensor::<f64>(&shape, 0.7, &mut rng);
            t.data_mut().iter_mut().for_each(|v| *v -= 0.3);
            t
        } else if name.ends_with("dilation.weight") {
            uniform_tensor(&shape, 0.3, &mut rng)
        } else if name.ends_with("conv.weight") {
            uniform_tensor(&shape, 0.5, &mut rng)
        } else if name.ends_with("down.weight") {
            uniform_tensor(&shape, 1.7 / hidden.sqrt(), &mut rng)
        } else {
            uniform_tensor(&shape, 0.3, &mut rng)
        };
    }
}

/// Compares analytic and numeric gradients of the cross-entropy loss of one
/// synthetic clip. `fault` corrupts a backward rule for negative controls.
pub fn gradcheck(cfg: &ModelConfig, seed: u64, tolerance: f64, fault: Option<Fault>) -> Result<GradcheckReport> {
    if !(tolerance >= 0.0) {
        return Err(Error::Parameter(format!("tolerance must be >= 0, got {tolerance}")));
    }
    cfg.validate()?;
    let mode = if cfg.adapter.is_active(cfg.depth) {
        FreezeMode::Adapter
    } else {
        FreezeMode::LinearProbe
    };
    let data = SynthSpec::new(cfg.classes, 1, cfg.frames, cfg.height, cfg.width)
        .split("gradcheck")
        .generate(seed)?;
    let clip: Tensor<f64> = data.clips[0].cast();
    let label = 1 % cfg.classes;

    let mut model = VideoModel::<f64>::new(cfg.clone(), seed)?;
    crate::train::apply_freeze(&mut model, mode)?;
    let mut rates = Vec::new();
    for attempt in 0..32 {
        randomize(&mut model, seed, attempt);
        rates = model.dilation_rates(&clip)?;
        if !near_integer(&rates) {
            break;
        }
    }
    if near_integer(&rates) {
        return Err(Error::Usage(
            "could not place dilation rates away from integers".into(),
        ));
    }

    let analytic = {
        let mut g = Graph::new();
        g.set_fault(fault);
        let vars = model.register(&mut g, true);
        let logits = model.forward(&mut g, &vars, &clip)?;
        let loss = g.cross_entropy(logits, label)?;
        let mut grads = g.backward(loss)?;
        vars.all.iter().map(|&v| grads.take(v)).collect::<Vec<_>>()
    };

    let loss_of = |m: &VideoModel<f64>| -> Result<f64> {
        let mut g = Graph::new();
        let vars = m.register(&mut g, false);
        let logits = m.forward(&mut g, &vars, &clip)?;
        let loss = g.cross_entropy(logits, label)?;
        Ok(g.value(loss).item())
    };

    let mut groups: Vec<GroupCheck> = Vec::new();
    let mut probe = model.clone();
    for i in 0..model.params().len() {
        let p = model.params().get(i);
        if !p.trainable {
            continue;
        }
        let value = p.value.clone();
        let numeric = finite_difference_gradient(
            |t| {
                probe.params_mut().get_mut(i).value = t.clone();
                loss_of(&probe)
            },
            &value,
            FD_STEP,
        )?;
        probe.params_mut().get_mut(i).value = value.clone();
        let zeros = Tensor::zeros(p.value.shape());
        let a = analytic[i].as_ref().unwrap_or(&zeros);
        let label = group_label(p.spec.group);
        let idx = match groups.iter().position(|g| g.group == label) {
            Some(k) => k,
            None => {
                groups.push(GroupCheck {
                    group: label,
                    params: 0,
                    max_rel_err: 0.0,
                    max_abs_err: 0.0,
                    passed: true,
                });
                groups.len() - 1
            }
        };
        let gc = &mut groups[idx];
        gc.params += value.len();
        for (&x, &y) in a.data().iter().zip(numeric.data()) {
            gc.max_rel_err = gc.max_rel_err.max(relative_error(x, y));
            gc.max_abs_err = gc.max_abs_err.max((x - y).abs());
        }
    }
    for g in &mut groups {
        g.passed = g.max_rel_err <= tolerance;
    }
    let passed = groups.iter().all(|g| g.passed);
    Ok(GradcheckReport {
        tolerance,
        groups,
        dilation_rates: rates,
        passed,
    })
}
