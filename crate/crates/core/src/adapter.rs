//! Bottleneck adapters: the plain `X + f(X·W_down)·W_up` form and the
//! convolutional FE-Adapter, whose bottleneck features pass through a
//! depthwise 3D convolution over the (frame, row, column) token lattice
//! before the up-projection.
//!
//! The convolution comes in two flavours: `dw_conv3d` with fixed unit
//! dilation, and `d2_conv3d`, whose three dilation rates are predicted per
//! clip by a small head (global average pool → linear → `1 + softplus`).
//! Class tokens have no lattice position; they skip the convolution and
//! rejoin the bottleneck stream before the activation.

use std::collections::BTreeSet;
use std::fmt;
use std::str::FromStr;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Init, ParamGroup, ParamSpec, ParamStore};
use crate::train::FreezeMode;
use crate::vit::ModelConfig;
use crate::tensor::{Activation, Graph, Scalar, Tensor, Var};

/// Dilation-head bias at initialization: `softplus(-14) ≈ 8.3e-7`, so fresh
/// heads predict rates within 1e-6 of one.
pub const DILATION_BIAS_INIT: f64 = -14.0;

/// Graph tag carried by each convolutional adapter's dilation rates.
pub const DILATION_MARK: &str = "dilation";

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdapterVariant {
    None,
    Vanilla,
    DwConv3d,
    #[default]
    D2Conv3d,
}

impl AdapterVariant {
    pub fn has_conv(self) -> bool {
        matches!(self, AdapterVariant::DwConv3d | AdapterVariant::D2Conv3d)
    }

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterVariant::None => "none",
            AdapterVariant::Vanilla => "vanilla",
            AdapterVariant::DwConv3d => "dw_conv3d",
            AdapterVariant::D2Conv3d => "d2_conv3d",
        }
    }
}

impl FromStr for AdapterVariant {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "none" => AdapterVariant::None,
            "vanilla" => AdapterVariant::Vanilla,
            "dw_conv3d" => AdapterVariant::DwConv3d,
            "d2_conv3d" => AdapterVariant::D2Conv3d,
            other => {
                return Err(Error::Config(format!(
                    "unknown adapter variant '{other}' (none, vanilla, dw_conv3d, d2_conv3d)"
                )))
            }
        })
    }
}

impl fmt::Display for AdapterVariant {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Where inside a transformer block the adapter sits.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum AdapterPosition {
    #[default]
    BeforeMhsa,
    AfterMhsa,
    AfterMlp,
}

impl AdapterPosition {
    pub const ALL: [AdapterPosition; 3] = [
        AdapterPosition::AfterMlp,
        AdapterPosition::AfterMhsa,
        AdapterPosition::BeforeMhsa,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AdapterPosition::BeforeMhsa => "before_mhsa",
            AdapterPosition::AfterMhsa => "after_mhsa",
            AdapterPosition::AfterMlp => "after_mlp",
        }
    }
}

impl FromStr for AdapterPosition {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Ok(match s {
            "before_mhsa" => AdapterPosition::BeforeMhsa,
            "after_mhsa" => AdapterPosition::AfterMhsa,
            "after_mlp" => AdapterPosition::AfterMlp,
            other => {
                return Err(Error::Config(format!(
                    "unknown adapter position '{other}' (before_mhsa, after_mhsa, after_mlp)"
                )))
            }
        })
    }
}

impl fmt::Display for AdapterPosition {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// 1-based block indices carrying an adapter.
#[derive(Clone, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub enum BlockSet {
    #[default]
    All,
    Only(BTreeSet<usize>),
}

impl BlockSet {
    pub fn resolve(&self, depth: usize) -> BTreeSet<usize> {
        match self {
            BlockSet::All => (1..=depth).collect(),
            BlockSet::Only(s) => s.clone(),
        }
    }

    pub fn contains(&self, block: usize) -> bool {
        match self {
            BlockSet::All => true,
            BlockSet::Only(s) => s.contains(&block),
        }
    }
}

impl FromStr for BlockSet {
    type Err = Error;
    /// `all`, `none`, or a comma list of indices and inclusive ranges such as `1-4,9`.
    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim();
        if s == "all" {
            return Ok(BlockSet::All);
        }
        let mut set = BTreeSet::new();
        if s == "none" || s.is_empty() {
            return Ok(BlockSet::Only(set));
        }
        let bad = || Error::Config(format!("invalid block set '{s}'"));
        for part in s.split(',') {
            let part = part.trim();
            if let Some((a, b)) = part.split_once('-') {
                let a: usize = a.trim().parse().map_err(|_| bad())?;
                let b: usize = b.trim().parse().map_err(|_| bad())?;
                if a > b {
                    return Err(bad());
                }
                set.extend(a..=b);
            } else {
                set.insert(part.parse().map_err(|_| bad())?);
            }
        }
        Ok(BlockSet::Only(set))
    }
}

impl fmt::Display for BlockSet {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            BlockSet::All => f.write_str("all"),
            BlockSet::Only(s) if s.is_empty() => f.write_str("none"),
            BlockSet::Only(s) => {
                let parts: Vec<String> = s.iter().map(|b| b.to_string()).collect();
                f.write_str(&parts.join(","))
            }
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdapterConfig {
    pub variant: AdapterVariant,
    /// Bottleneck width `r`.
    pub bottleneck: usize,
    pub blocks: BlockSet,
    pub position: AdapterPosition,
    pub kernel: [usize; 3],
    pub activation: Activation,
}

impl Default for AdapterConfig {
    fn default() -> Self {
        AdapterConfig {
            variant: AdapterVariant::D2Conv3d,
            bottleneck: 16,
            blocks: BlockSet::All,
            position: AdapterPosition::BeforeMhsa,
            kernel: [3, 3, 3],
            activation: Activation::Gelu,
        }
    }
}

impl AdapterConfig {
    pub fn none() -> Self {
        AdapterConfig {
            variant: AdapterVariant::None,
            ..Self::default()
        }
    }

    /// True when at least one block carries an adapter.
    pub fn is_active(&self, depth: usize) -> bool {
        self.variant != AdapterVariant::None && !self.blocks.resolve(depth).is_empty()
    }

    pub fn in_block(&self, block: usize) -> bool {
        self.variant != AdapterVariant::None && self.blocks.contains(block)
    }

    pub fn validate(&self, hidden: usize, depth: usize) -> Result<()> {
        if self.variant == AdapterVariant::None {
            return Ok(());
        }
        if self.bottleneck == 0 || self.bottleneck >= hidden {
            return Err(Error::Config(format!(
                "adapter.bottleneck must satisfy 1 <= r < hidden ({hidden}), got {}",
                self.bottleneck
            )));
        }
        if let Some(&b) = self.blocks.resolve(depth).iter().find(|&&b| b == 0 || b > depth) {
            return Err(Error::Config(format!(
                "adapter.blocks entry {b} outside 1..={depth}"
            )));
        }
        if self.variant.has_conv() {
            if let Some(k) = self.kernel.iter().find(|&&k| k % 2 == 0 || k == 0) {
                return Err(Error::Config(format!(
                    "adapter.kernel extents must be odd, got {k} in {:?}",
                    self.kernel
                )));
            }
        }
        Ok(())
    }

    /// Parameter tensors of the adapter in `block` (1-based), empty when the
    /// block carries none.
    pub fn specs(&self, block: usize, hidden: usize) -> Vec<ParamSpec> {
        if !self.in_block(block) {
            return Vec::new();
        }
        let r = self.bottleneck;
        let p = |s: &str| format!("adapters.{block}.{s}");
        let g = ParamGroup::Adapter(block);
        let mut specs = vec![
            ParamSpec::new(
                p("down.weight"),
                &[hidden, r],
                g,
                Init::TruncNormal(1.0 / (hidden as f64).sqrt()),
            ),
            ParamSpec::new(p("down.bias"), &[r], g, Init::Zeros),
            ParamSpec::new(p("up.weight"), &[r, hidden], g, Init::Zeros),
            ParamSpec::new(p("up.bias"), &[hidden], g, Init::Zeros),
        ];
        if self.variant.has_conv() {
            let [kt, kh, kw] = self.kernel;
            specs.push(ParamSpec::new(
                p("conv.weight"),
                &[r, kt, kh, kw],
                g,
                Init::CentreTap,
            ));
        }
        if self.variant == AdapterVariant::D2Conv3d {
            let d = ParamGroup::DilationHead(block);
            specs.push(ParamSpec::new(p("dilation.weight"), &[r, 3], d, Init::Zeros));
            specs.push(ParamSpec::new(
                p("dilation.bias"),
                &[3],
                d,
                Init::Constant(DILATION_BIAS_INIT),
            ));
        }
        specs
    }
}

/// Token arrangement of one clip: `frames` sequences of `1 + grid_h·grid_w`
/// tokens, class token first, patches in raster order.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct TokenLayout {
    pub frames: usize,
    pub grid_h: usize,
    pub grid_w: usize,
}

impl TokenLayout {
    pub fn patches(&self) -> usize {
        self.grid_h * self.grid_w
    }

    pub fn seq(&self) -> usize {
        self.patches() + 1
    }

    pub fn tokens(&self) -> usize {
        self.frames * self.seq()
    }

    /// Flat index into `[tokens × width]` for every element of the
    /// `[width × frames × grid_h × grid_w]` lattice.
    fn grid_index(&self, width: usize) -> Vec<usize> {
        let (n, s) = (self.patches(), self.seq());
        let mut idx = Vec::with_capacity(width * self.frames * n);
        for c in 0..width {
            for t in 0..self.frames {
                for p in 0..n {
                    idx.push((t * s + 1 + p) * width + c);
                }
            }
        }
        idx
    }

    /// Flat index into `[tokens × width]` for the class-token rows `[frames × width]`.
    fn cls_index(&self, width: usize) -> Vec<usize> {
        let s = self.seq();
        (0..self.frames)
            .flat_map(|t| (0..width).map(move |c| t * s * width + c))
            .collect()
    }

    /// Flat index into `concat(grid, cls)` producing `[tokens × width]`.
    fn merge_index(&self, width: usize) -> Vec<usize> {
        let (n, s) = (self.patches(), self.seq());
        let vol = self.frames * n;
        let grid_len = width * vol;
        let mut idx = Vec::with_capacity(self.tokens() * width);
        for t in 0..self.frames {
            for k in 0..s {
                for c in 0..width {
                    idx.push(if k == 0 {
                        grid_len + t * width + c
                    } else {
                        c * vol + t * n + (k - 1)
                    });
                }
            }
        }
        idx
    }

    fn check_tokens<T: Scalar>(&self, x: &Tensor<T>) -> Result<usize> {
        if x.ndim() != 2 || x.shape()[0] != self.tokens() {
            return Err(Error::Shape(format!(
                "expected {} tokens ({} frames × {} per frame), got shape {:?}",
                self.tokens(),
                self.frames,
                self.seq(),
                x.shape()
            )));
        }
        Ok(x.shape()[1])
    }
}

/// Splits `[(T·(N+1)) × r]` tokens into the patch lattice `[r × T × h × w]`
/// and the class tokens `[T × r]`.
pub fn tokens_to_grid<T: Scalar>(
    x: &Tensor<T>,
    layout: &TokenLayout,
) -> Result<(Tensor<T>, Tensor<T>)> {
    let width = layout.check_tokens(x)?;
    let grid: Vec<T> = layout.grid_index(width).iter().map(|&i| x.data()[i]).collect();
    let cls: Vec<T> = layout.cls_index(width).iter().map(|&i| x.data()[i]).collect();
    Ok((
        Tensor::new(
            vec![width, layout.frames, layout.grid_h, layout.grid_w],
            grid,
        )?,
        Tensor::new(vec![layout.frames, width], cls)?,
    ))
}

/// Inverse of [`tokens_to_grid`].
pub fn grid_to_tokens<T: Scalar>(
    grid: &Tensor<T>,
    cls: &Tensor<T>,
    layout: &TokenLayout,
) -> Result<Tensor<T>> {
    let width = cls.last_dim();
    let expect = [width, layout.frames, layout.grid_h, layout.grid_w];
    if grid.shape() != expect || cls.shape() != [layout.frames, width] {
        return Err(Error::Shape(format!(
            "grid {:?} / class tokens {:?} do not match layout {layout:?}",
            grid.shape(),
            cls.shape()
        )));
    }
    let joined: Vec<T> = grid.data().iter().chain(cls.data()).copied().collect();
    let data = layout
        .merge_index(width)
        .iter()
        .map(|&i| joined[i])
        .collect();
    Tensor::new(vec![layout.tokens(), width], data)
}

/// Gather indices for one bottleneck width, shared by every adapter of a model.
#[derive(Clone, Debug)]
pub struct AdapterIndex {
    pub layout: TokenLayout,
    pub width: usize,
    grid: Arc<[usize]>,
    cls: Arc<[usize]>,
    merge: Arc<[usize]>,
}

impl AdapterIndex {
    pub fn new(layout: TokenLayout, width: usize) -> Self {
        AdapterIndex {
            layout,
            width,
            grid: layout.grid_index(width).into(),
            cls: layout.cls_index(width).into(),
            merge: layout.merge_index(width).into(),
        }
    }

    pub fn grid_shape(&self) -> Vec<usize> {
        vec![
            self.width,
            self.layout.frames,
            self.layout.grid_h,
            self.layout.grid_w,
        ]
    }
}

/// Graph handles of one adapter's parameters.
#[derive(Clone, Copy, Debug)]
pub struct AdapterVars {
    pub down_w: Var,
    pub down_b: Var,
    pub up_w: Var,
    pub up_b: Var,
    pub conv: Option<Var>,
    pub dilation_w: Option<Var>,
    pub dilation_b: Option<Var>,
}

/// Standalone adapter weights, mainly for exercising the adapter outside a
/// full model.
#[derive(Clone, Debug)]
pub struct AdapterWeights<T> {
    pub down_w: Tensor<T>,
    pub down_b: Tensor<T>,
    pub up_w: Tensor<T>,
    pub up_b: Tensor<T>,
    pub conv: Option<Tensor<T>>,
    pub dilation_w: Option<Tensor<T>>,
    pub dilation_b: Option<Tensor<T>>,
}

impl<T: Scalar> AdapterWeights<T> {
    /// Freshly initialized (identity) weights for `cfg` at width `hidden`.
    pub fn init(cfg: &AdapterConfig, hidden: usize, seed: u64) -> Self {
        let mut specs = cfg.specs(1, hidden).into_iter();
        let mut next = || specs.next().map(|s| s.initialize(seed));
        let down_w = next().expect("adapter variant must not be none");
        let down_b = next().expect("bias");
        let up_w = next().expect("up");
        let up_b = next().expect("bias");
        let conv = if cfg.variant.has_conv() { next() } else { None };
        let (dilation_w, dilation_b) = if cfg.variant == AdapterVariant::D2Conv3d {
            (next(), next())
        } else {
            (None, None)
        };
        AdapterWeights {
            down_w,
            down_b,
            up_w,
            up_b,
            conv,
            dilation_w,
            dilation_b,
        }
    }

    pub fn register<'a>(&'a self, g: &mut Graph<'a, T>, requires_grad: bool) -> AdapterVars {
        let mut leaf = |t: &'a Tensor<T>| g.leaf_ref(t, requires_grad);
        AdapterVars {
            down_w: leaf(&self.down_w),
            down_b: leaf(&self.down_b),
            up_w: leaf(&self.up_w),
            up_b: leaf(&self.up_b),
            conv: self.conv.as_ref().map(&mut leaf),
            dilation_w: self.dilation_w.as_ref().map(&mut leaf),
            dilation_b: self.dilation_b.as_ref().map(&mut leaf),
        }
    }
}

fn project_up<T: Scalar>(g: &mut Graph<'_, T>, x: Var, act: Var, w: &AdapterVars) -> Result<Var> {
    let up = g.matmul(act, w.up_w)?;
    let up = g.add_bias(up, w.up_b)?;
    g.add(x, up)
}

/// `X + f(X·W_down + b_down)·W_up + b_up`
pub fn vanilla_adapter<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    w: &AdapterVars,
    activation: Activation,
) -> Result<Var> {
    let down = g.matmul(x, w.down_w)?;
    let down = g.add_bias(down, w.down_b)?;
    let act = g.activation(down, activation)?;
    project_up(g, x, act, w)
}

/// Per-clip dilation rates `1 + softplus(mean(grid)·W + b)` from a
/// `[r × T × h × w]` bottleneck lattice.
pub fn dynamic_dilation_head<T: Scalar>(
    g: &mut Graph<'_, T>,
    grid: Var,
    weight: Var,
    bias: Var,
) -> Result<Var> {
    let shape = g.shape(grid).to_vec();
    if shape.len() != 4 {
        return Err(Error::Shape(format!(
            "dilation head expects a [r, T, h, w] grid, got {shape:?}"
        )));
    }
    let (r, vol) = (shape[0], shape[1] * shape[2] * shape[3]);
    // [r, vol] → [vol, r] so mean_rows pools over the lattice
    let index: Arc<[usize]> = (0..vol)
        .flat_map(|p| (0..r).map(move |c| c * vol + p))
        .collect::<Vec<_>>()
        .into();
    let cols = g.gather(grid, vec![vol, r], index)?;
    let pooled = g.mean_rows(cols)?;
    let pooled = g.reshape(pooled, vec![1, r])?;
    let z = g.matmul(pooled, weight)?;
    let z = g.add_bias(z, bias)?;
    let z = g.softplus(z)?;
    let z = g.affine(z, T::one(), T::one())?;
    g.reshape(z, vec![3])
}

/// `X + f(Conv3D(X·W_down + b_down))·W_up + b_up` with class tokens
/// bypassing the convolution.
pub fn fe_adapter<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    w: &AdapterVars,
    cfg: &AdapterConfig,
    index: &AdapterIndex,
) -> Result<Var> {
    if !cfg.variant.has_conv() {
        return Err(Error::Usage(format!(
            "fe_adapter needs a convolutional variant, got {}",
            cfg.variant
        )));
    }
    let tokens = g.shape(x)[0];
    if tokens != index.layout.tokens() {
        return Err(Error::Shape(format!(
            "adapter expects {} tokens, got {tokens}",
            index.layout.tokens()
        )));
    }
    let kernel = w
        .conv
        .ok_or_else(|| Error::Usage("convolutional adapter without a kernel".into()))?;
    let down = g.matmul(x, w.down_w)?;
    let down = g.add_bias(down, w.down_b)?;
    let grid = g.gather(down, index.grid_shape(), index.grid.clone())?;
    let dilation = match (cfg.variant, w.dilation_w, w.dilation_b) {
        (AdapterVariant::D2Conv3d, Some(dw), Some(db)) => dynamic_dilation_head(g, grid, dw, db)?,
        (AdapterVariant::D2Conv3d, _, _) => {
            return Err(Error::Usage("d2_conv3d adapter without a dilation head".into()))
        }
        _ => g.constant(Tensor::full(&[3], T::one())),
    };
    g.mark(DILATION_MARK, dilation);
    let conv = g.depthwise_conv3d(grid, kernel, dilation)?;
    let frames = index.layout.frames;
    let cls = g.gather(down, vec![frames, index.width], index.cls.clone())?;
    let joined = g.concat(&[conv, cls])?;
    let merged = g.gather(joined, vec![tokens, index.width], index.merge.clone())?;
    let act = g.activation(merged, cfg.activation)?;
    project_up(g, x, act, w)
}

/// Dispatches on the configured variant. `index` is required for the
/// convolutional variants.
pub fn apply_adapter<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    w: &AdapterVars,
    cfg: &AdapterConfig,
    index: Option<&AdapterIndex>,
) -> Result<Var> {
    match cfg.variant {
        AdapterVariant::None => Err(Error::Usage("adapter variant is none".into())),
        AdapterVariant::Vanilla => vanilla_adapter(g, x, w, cfg.activation),
        AdapterVariant::DwConv3d | AdapterVariant::D2Conv3d => {
            let index = index.ok_or_else(|| Error::Usage("missing token layout".into()))?;
            fe_adapter(g, x, w, cfg, index)
        }
    }
}

/// Parameter count of one group of tensors.
#[derive(Clone, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub struct GroupCount {
    pub group: String,
    pub trainable: usize,
    pub total: usize,
}

/// Itemized trainable/total parameter counts.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParamReport {
    pub mode: FreezeMode,
    pub trainable: usize,
    pub total: usize,
    pub ratio: f64,
    pub groups: Vec<GroupCount>,
}

pub(crate) fn group_label(group: ParamGroup) -> String {
    match group {
        ParamGroup::Adapter(b) => format!("adapter.block{b}"),
        ParamGroup::DilationHead(b) => format!("dilation_head.block{b}"),
        ParamGroup::Head => "classifier".into(),
        _ => "backbone".into(),
    }
}

impl ParamReport {
    /// Counts `(spec, trainable)` pairs in order.
    pub fn tally<'s>(mode: FreezeMode, items: impl IntoIterator<Item = (&'s ParamSpec, bool)>) -> Self {
        let mut groups: Vec<GroupCount> = Vec::new();
        for (spec, trainable) in items {
            let label = group_label(spec.group);
            let n = spec.numel();
            let slot = match groups.iter_mut().position(|g| g.group == label) {
                Some(i) => &mut groups[i],
                None => {
                    groups.push(GroupCount {
                        group: label,
                        trainable: 0,
                        total: 0,
                    });
                    groups.last_mut().expect("just pushed")
                }
            };
            slot.total += n;
            if trainable {
                slot.trainable += n;
            }
        }
        let trainable = groups.iter().map(|g| g.trainable).sum();
        let total = groups.iter().map(|g| g.total).sum();
        ParamReport {
            mode,
            trainable,
            total,
            ratio: trainable as f64 / total as f64,
            groups,
        }
    }

    /// Counts taken from a live store's trainable flags.
    pub fn from_store<T: Scalar>(store: &ParamStore<T>, mode: FreezeMode) -> Self {
        Self::tally(mode, store.iter().map(|p| (&p.spec, p.trainable)))
    }

    /// Sum over groups whose label starts with `prefix`.
    pub fn trainable_in(&self, prefix: &str) -> usize {
        self.groups
            .iter()
            .filter(|g| g.group.starts_with(prefix))
            .map(|g| g.trainable)
            .sum()
    }

    pub fn total_in(&self, prefix: &str) -> usize {
        self.groups
            .iter()
            .filter(|g| g.group.starts_with(prefix))
            .map(|g| g.total)
            .sum()
    }
}

/// Exact counts for a configuration and freeze mode, enumerated from the
/// parameter layout without allocating any tensor.
pub fn count_tunable_params(cfg: &ModelConfig, mode: FreezeMode) -> Result<ParamReport> {
    cfg.validate()?;
    mode.check(&cfg.adapter, cfg.depth)?;
    let specs = cfg.param_specs();
    Ok(ParamReport::tally(
        mode,
        specs.iter().map(|s| (s, mode.trains(s.group))),
    ))
}

/// Bottleneck width whose adapter-mode trainable count lands closest to
/// `target`, smaller width on ties.
pub fn derive_bottleneck(cfg: &ModelConfig, target: usize) -> Result<usize> {
    let mut best: Option<(usize, usize)> = None;
    for r in 1..cfg.hidden {
        let mut c = cfg.clone();
        c.adapter.bottleneck = r;
        let n = count_tunable_params(&c, FreezeMode::Adapter)?.trainable;
        let gap = n.abs_diff(target);
        if best.is_none_or(|(_, g)| gap < g) {
            best = Some((r, gap));
        }
    }
    best.map(|(r, _)| r)
        .ok_or_else(|| Error::Config("hidden width leaves no valid bottleneck".into()))
}
