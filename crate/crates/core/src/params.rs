//! Named parameter tensors with group tags and trainable flags.

use std::collections::HashMap;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::tensor::{Scalar, Tensor};

/// Which part of the network a parameter belongs to. Block indices are
/// 1-based to match adapter block sets.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ParamGroup {
    PatchEmbed,
    PosEmbed,
    ClsToken,
    Block(usize),
    FinalNorm,
    Head,
    Adapter(usize),
    DilationHead(usize),
}

impl ParamGroup {
    pub fn is_backbone(self) -> bool {
        matches!(
            self,
            ParamGroup::PatchEmbed
                | ParamGroup::PosEmbed
                | ParamGroup::ClsToken
                | ParamGroup::Block(_)
                | ParamGroup::FinalNorm
        )
    }

    pub fn is_adapter(self) -> bool {
        matches!(self, ParamGroup::Adapter(_) | ParamGroup::DilationHead(_))
    }

    pub fn is_head(self) -> bool {
        self == ParamGroup::Head
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Init {
    Zeros,
    Ones,
    Constant(f64),
    /// Normal truncated at two standard deviations.
    TruncNormal(f64),
    /// Depthwise kernel with a one at the centre tap of every channel.
    CentreTap,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamSpec {
    pub name: String,
    pub shape: Vec<usize>,
    pub group: ParamGroup,
    pub init: Init,
}

impl ParamSpec {
    pub fn new(name: impl Into<String>, shape: &[usize], group: ParamGroup, init: Init) -> Self {
        ParamSpec {
            name: name.into(),
            shape: shape.to_vec(),
            group,
            init,
        }
    }

    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }

    /// Initial value. Each tensor draws from its own stream keyed by
    /// `(seed, name)`, so adding or removing tensors never shifts the values
    /// of the others.
    pub fn initialize<T: Scalar>(&self, seed: u64) -> Tensor<T> {
        let n = self.numel();
        let data: Vec<f64> = match self.init {
            Init::Zeros => vec![0.0; n],
            Init::Ones => vec![1.0; n],
            Init::Constant(v) => vec![v; n],
            Init::CentreTap => {
                let taps: usize = self.shape[1..].iter().product();
                let mut d = vec![0.0; n];
                for c in 0..self.shape[0] {
                    d[c * taps + taps / 2] = 1.0;
                }
                d
            }
            Init::TruncNormal(std) => {
                let mut rng = ChaCha8Rng::from_seed(stream_seed(seed, &self.name));
                let normal = Normal::new(0.0, std).expect("finite std");
                (0..n)
                    .map(|_| loop {
                        let v: f64 = normal.sample(&mut rng);
                        if v.abs() <= 2.0 * std {
                            break v;
                        }
                    })
                    .collect()
            }
        };
        Tensor::new(self.shape.clone(), data.into_iter().map(T::of).collect())
            .expect("spec shape is non-empty")
    }
}

fn stream_seed(seed: u64, name: &str) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(seed.to_le_bytes());
    h.update(name.as_bytes());
    let digest = h.finalize();
    let mut out = [0u8; 32];
    out.copy_from_slice(&digest);
    out
}

/// A random stream derived from a seed and a purpose label.
pub fn rng_for(seed: u64, label: &str) -> ChaCha8Rng {
    ChaCha8Rng::from_seed(stream_seed(seed, label))
}

/// Uniform in `[-scale, scale)`, for tests and probes.
pub fn uniform_tensor<T: Scalar>(shape: &[usize], scale: f64, rng: &mut impl Rng) -> Tensor<T> {
    let n = shape.iter().product();
    let data = (0..n).map(|_| T::of(rng.random_range(-scale..scale))).collect();
    Tensor::new(shape.to_vec(), data).expect("non-empty shape")
}

#[derive(Clone, Debug)]
pub struct Param<T> {
    pub spec: ParamSpec,
    pub value: Tensor<T>,
    pub trainable: bool,
}

/// Ordered parameter collection. Order is the construction order of the
/// model and is stable for a given configuration.
#[derive(Clone, Debug)]
pub struct ParamStore<T> {
    params: Vec<Param<T>>,
    index: HashMap<String, usize>,
}

impl<T: Scalar> ParamStore<T> {
    pub fn from_specs(specs: &[ParamSpec], seed: u64) -> Self {
        let params: Vec<Param<T>> = specs
            .iter()
            .map(|s| Param {
                value: s.initialize(seed),
                spec: s.clone(),
                trainable: true,
            })
            .collect();
        let index = params
            .iter()
            .enumerate()
            .map(|(i, p)| (p.spec.name.clone(), i))
            .collect();
        ParamStore { params, index }
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<T>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<T>> {
        self.params.iter_mut()
    }

    pub fn get(&self, i: usize) -> &Param<T> {
        &self.params[i]
    }

    pub fn get_mut(&mut self, i: usize) -> &mut Param<T> {
        &mut self.params[i]
    }

    pub fn position(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    pub fn by_name(&self, name: &str) -> Option<&Param<T>> {
        self.position(name).map(|i| &self.params[i])
    }

    pub fn by_name_mut(&mut self, name: &str) -> Option<&mut Param<T>> {
        self.position(name).map(move |i| &mut self.params[i])
    }

    /// Replaces a tensor's value, checking its shape.
    pub fn assign(&mut self, name: &str, value: Tensor<T>) -> Result<()> {
        let p = self
            .by_name_mut(name)
            .ok_or_else(|| Error::Shape(format!("no parameter named {name}")))?;
        if p.value.shape() != value.shape() {
            return Err(Error::Shape(format!(
                "{name}: expected shape {:?}, got {:?}",
                p.value.shape(),
                value.shape()
            )));
        }
        p.value = value;
        Ok(())
    }

    pub fn numel(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn trainable_numel(&self) -> usize {
        self.params
            .iter()
            .filter(|p| p.trainable)
            .map(|p| p.value.len())
            .sum()
    }

    /// SHA-256 over the little-endian `f32` bytes of every parameter matching
    /// `select`, in store order, names included.
    pub fn digest(&self, select: impl Fn(&Param<T>) -> bool) -> String {
        let mut h = Sha256::new();
        for p in self.params.iter().filter(|p| select(p)) {
            h.update(p.spec.name.as_bytes());
            for &v in p.value.data() {
                h.update((v.f64() as f32).to_le_bytes());
                if T::NAME == "f64" {
                    h.update(v.f64().to_le_bytes());
                }
            }
        }
        hex::encode(h.finalize())
    }

    pub fn frozen_digest(&self) -> String {
        self.digest(|p| !p.trainable)
    }

    pub fn backbone_digest(&self) -> String {
        self.digest(|p| p.spec.group.is_backbone())
    }

    pub fn cast<U: Scalar>(&self) -> ParamStore<U> {
        ParamStore {
            params: self
                .params
                .iter()
                .map(|p| Param {
                    spec: p.spec.clone(),
                    value: p.value.cast(),
                    trainable: p.trainable,
                })
                .collect(),
            index: self.index.clone(),
        }
    }
}
