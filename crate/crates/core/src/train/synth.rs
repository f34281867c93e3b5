//! Synthetic clips of moving Gaussian blobs.
//!
//! Classes come in pairs `(2p, 2p+1)`. Both members of a pair share blob
//! colour, size and path; clip `j` of the odd class is clip `j` of the even
//! class played backwards, noise included. Each pair therefore has identical
//! frame multisets and can only be told apart by the direction of motion.
//! With an odd class count the last class is a static blob whose brightness
//! flickers.

use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{Error, Result};
use crate::params::rng_for;
use crate::tensor::Tensor;

#[derive(Clone, Debug, PartialEq)]
pub struct Dataset {
    /// `[T × 3 × H × W]` clips.
    pub clips: Vec<Tensor<f32>>,
    pub labels: Vec<usize>,
    pub classes: usize,
}

impl Dataset {
    pub fn len(&self) -> usize {
        self.clips.len()
    }

    pub fn is_empty(&self) -> bool {
        self.clips.is_empty()
    }

    /// Class pairs that differ only in motion direction.
    pub fn motion_pairs(&self) -> Vec<(usize, usize)> {
        (0..self.classes / 2).map(|p| (2 * p, 2 * p + 1)).collect()
    }

    /// Clips whose label is in `classes`, labels unchanged.
    pub fn select(&self, classes: &[usize]) -> Dataset {
        let keep: Vec<usize> = (0..self.len())
            .filter(|&i| classes.contains(&self.labels[i]))
            .collect();
        Dataset {
            clips: keep.iter().map(|&i| self.clips[i].clone()).collect(),
            labels: keep.iter().map(|&i| self.labels[i]).collect(),
            classes: self.classes,
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct SynthSpec {
    pub classes: usize,
    pub clips_per_class: usize,
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    /// Standard deviation of the additive pixel noise.
    pub noise: f64,
    /// Separates independent draws (training and evaluation sets) under one seed.
    pub split: String,
}

impl SynthSpec {
    pub fn new(classes: usize, clips_per_class: usize, frames: usize, height: usize, width: usize) -> Self {
        SynthSpec {
            classes,
            clips_per_class,
            frames,
            height,
            width,
            noise: 0.05,
            split: "train".into(),
        }
    }

    pub fn split(mut self, name: &str) -> Self {
        self.split = name.into();
        self
    }

    pub fn generate(&self, seed: u64) -> Result<Dataset> {
        if self.classes < 2 || self.clips_per_class == 0 {
            return Err(Error::Config(format!(
                "synthetic data needs at least 2 classes and 1 clip per class, got {} and {}",
                self.classes, self.clips_per_class
            )));
        }
        if self.frames == 0 || self.height == 0 || self.width == 0 {
            return Err(Error::Config("synthetic clip extents must be positive".into()));
        }
        let mut clips = Vec::with_capacity(self.classes * self.clips_per_class);
        let mut labels = Vec::with_capacity(clips.capacity());
        for p in 0..self.classes / 2 {
            let style = PairStyle::new(seed, p, self.classes / 2, self);
            let mut reversed = Vec::with_capacity(self.clips_per_class);
            for j in 0..self.clips_per_class {
                let mut rng = rng_for(seed, &format!("synth/{}/pair{p}/clip{j}", self.split));
                let clip = style.render(self, &mut rng);
                reversed.push(reverse_frames(&clip, self.frames));
                clips.push(clip);
                labels.push(2 * p);
            }
            clips.extend(reversed);
            labels.extend(std::iter::repeat_n(2 * p + 1, self.clips_per_class));
        }
        if self.classes % 2 == 1 {
            let c = self.classes - 1;
            let mut style_rng = rng_for(seed, "synth/flicker");
            let colour = random_colour(&mut style_rng);
            for j in 0..self.clips_per_class {
                let mut rng = rng_for(seed, &format!("synth/{}/flicker/clip{j}", self.split));
                clips.push(render_flicker(self, colour, &mut rng));
                labels.push(c);
            }
        }
        Ok(Dataset {
            clips,
            labels,
            classes: self.classes,
        })
    }
}

/// `classes × clips_per_class` clips of shape `[frames × 3 × height × width]`.
pub fn synth_dataset(
    seed: u64,
    classes: usize,
    clips_per_class: usize,
    frames: usize,
    height: usize,
    width: usize,
) -> Result<Dataset> {
    SynthSpec::new(classes, clips_per_class, frames, height, width).generate(seed)
}

fn random_colour(rng: &mut impl Rng) -> [f64; 3] {
    [
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
        rng.random_range(0.3..1.0),
    ]
}

struct PairStyle {
    colour: [f64; 3],
    sigma: f64,
    /// Unit direction of travel (dy, dx).
    dir: [f64; 2],
    length: f64,
}

impl PairStyle {
    fn new(seed: u64, pair: usize, pairs: usize, spec: &SynthSpec) -> Self {
        let mut rng = rng_for(seed, &format!("synth/style/pair{pair}"));
        let colour = random_colour(&mut rng);
        let angle = std::f64::consts::PI * pair as f64 / pairs as f64 + rng.random_range(-0.2..0.2);
        let side = spec.height.min(spec.width) as f64;
        PairStyle {
            colour,
            sigma: side / 8.0,
            dir: [angle.sin(), angle.cos()],
            length: 0.6 * side,
        }
    }

    fn render(&self, spec: &SynthSpec, rng: &mut impl Rng) -> Tensor<f32> {
        let (h, w) = (spec.height as f64, spec.width as f64);
        let jitter = h.min(w) / 10.0;
        let centre = [
            h / 2.0 + rng.random_range(-jitter..jitter),
            w / 2.0 + rng.random_range(-jitter..jitter),
        ];
        let amp = rng.random_range(0.8..1.2);
        let steps = (spec.frames.max(2) - 1) as f64;
        let positions: Vec<[f64; 2]> = (0..spec.frames)
            .map(|t| {
                let s = t as f64 / steps - 0.5;
                [
                    centre[0] + s * self.length * self.dir[0],
                    centre[1] + s * self.length * self.dir[1],
                ]
            })
            .collect();
        let amps = vec![amp; spec.frames];
        render_blobs(spec, &positions, &amps, self.colour, self.sigma, rng)
    }
}

fn render_flicker(spec: &SynthSpec, colour: [f64; 3], rng: &mut impl Rng) -> Tensor<f32> {
    let (h, w) = (spec.height as f64, spec.width as f64);
    let jitter = h.min(w) / 10.0;
    let centre = [
        h / 2.0 + rng.random_range(-jitter..jitter),
        w / 2.0 + rng.random_range(-jitter..jitter),
    ];
    let phase = rng.random_range(0.0..std::f64::consts::TAU);
    let positions = vec![centre; spec.frames];
    let amps: Vec<f64> = (0..spec.frames)
        .map(|t| 1.0 + 0.5 * (std::f64::consts::PI * t as f64 + phase).sin())
        .collect();
    render_blobs(spec, &positions, &amps, colour, h.min(w) / 8.0, rng)
}

fn render_blobs(
    spec: &SynthSpec,
    positions: &[[f64; 2]],
    amps: &[f64],
    colour: [f64; 3],
    sigma: f64,
    rng: &mut impl Rng,
) -> Tensor<f32> {
    let (h, w) = (spec.height, spec.width);
    let noise = Normal::new(0.0, spec.noise).expect("finite noise level");
    let inv = 1.0 / (2.0 * sigma * sigma);
    let mut data = Vec::with_capacity(spec.frames * 3 * h * w);
    for (pos, &amp) in positions.iter().zip(amps) {
        for &c in &colour {
            for y in 0..h {
                for x in 0..w {
                    let (dy, dx) = (y as f64 + 0.5 - pos[0], x as f64 + 0.5 - pos[1]);
                    let v = amp * c * (-(dy * dy + dx * dx) * inv).exp() + noise.sample(rng);
                    data.push(v as f32);
                }
            }
        }
    }
    Tensor::new(vec![spec.frames, 3, h, w], data).expect("positive extents")
}

fn reverse_frames(clip: &Tensor<f32>, frames: usize) -> Tensor<f32> {
    let per = clip.len() / frames;
    let data = clip
        .data()
        .chunks(per)
        .rev()
        .flatten()
        .copied()
        .collect();
    Tensor::new(clip.shape().to_vec(), data).expect("same shape")
}
