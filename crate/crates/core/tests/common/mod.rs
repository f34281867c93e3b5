#![allow(dead_code)]

use feadapt::params::{rng_for, uniform_tensor};
use feadapt::tensor::{Scalar, Tensor};
use feadapt::vit::{ModelConfig, VideoModel};

pub fn random_clip<T: Scalar>(cfg: &ModelConfig, seed: u64) -> Tensor<T> {
    let mut rng = rng_for(seed, "test/clip");
    uniform_tensor(&cfg.clip_shape(), 1.0, &mut rng)
}

/// Moves adapter parameters away from the identity start so that they
/// actually change the network function.
pub fn perturb_adapters<T: Scalar>(model: &mut VideoModel<T>, seed: u64) {
    for p in model.params_mut().iter_mut() {
        if !p.spec.group.is_adapter() {
            continue;
        }
        let name = p.spec.name.clone();
        if name.ends_with("dilation.bias") {
            continue;
        }
        let mut rng = rng_for(seed, &format!("test/perturb/{name}"));
        let noise: Tensor<T> = uniform_tensor(p.value.shape(), 0.3, &mut rng);
        for (v, n) in p.value.data_mut().iter_mut().zip(noise.data()) {
            *v += *n;
        }
    }
}

pub fn tiny(frames: usize) -> ModelConfig {
    ModelConfig {
        frames,
        height: 16,
        width: 16,
        patch: 8,
        hidden: 16,
        depth: 2,
        heads: 2,
        mlp_ratio: 2,
        classes: 3,
        adapter: feadapt::adapter::AdapterConfig::none(),
    }
}

/// Row-major `a[m×k] · b[k×n]` summed in f64.
pub fn naive_matmul(a: &[f64], b: &[f64], m: usize, k: usize, n: usize) -> Vec<f64> {
    let mut out = vec![0.0; m * n];
    for i in 0..m {
        for j in 0..n {
            out[i * n + j] = (0..k).map(|p| a[i * k + p] * b[p * n + j]).sum();
        }
    }
    out
}
