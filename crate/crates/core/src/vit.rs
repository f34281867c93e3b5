//! Frame-wise ViT video classifier. Every frame is patchified and encoded by
//! the same transformer; the per-frame class tokens are averaged over time,
//! normalized and classified. Adapters hook into each block at a configured
//! position.
//!
//! A clip is processed as one `[(T·S) × hidden]` token matrix with `S = N + 1`
//! rows per frame. Attention is grouped per frame, so frames only interact
//! through adapters.

use std::sync::Arc;

use crate::adapter::{apply_adapter, AdapterConfig, AdapterIndex, AdapterPosition, AdapterVars, AdapterVariant, TokenLayout};
use crate::error::{Error, Result};
use crate::params::{Init, ParamGroup, ParamSpec, ParamStore};
use crate::tensor::{Activation, Graph, Scalar, Tensor, Var};

pub const LN_EPS: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ModelConfig {
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub patch: usize,
    pub hidden: usize,
    pub depth: usize,
    pub heads: usize,
    pub mlp_ratio: usize,
    pub classes: usize,
    pub adapter: AdapterConfig,
}

impl Default for ModelConfig {
    fn default() -> Self {
        Self::desk()
    }
}

impl ModelConfig {
    /// Small geometry that trains in seconds on one core.
    pub fn desk() -> Self {
        ModelConfig {
            frames: 8,
            height: 32,
            width: 32,
            patch: 8,
            hidden: 64,
            depth: 4,
            heads: 4,
            mlp_ratio: 4,
            classes: 4,
            adapter: AdapterConfig::default(),
        }
    }

    /// ViT-B/16 on 16-frame 224² clips with a D²Conv3D adapter in every block.
    pub fn vit_b(classes: usize) -> Self {
        ModelConfig {
            frames: 16,
            height: 224,
            width: 224,
            patch: 16,
            hidden: 768,
            depth: 12,
            heads: 12,
            mlp_ratio: 4,
            classes,
            adapter: AdapterConfig {
                bottleneck: 350,
                ..AdapterConfig::default()
            },
        }
    }

    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.frames == 0 || self.height == 0 || self.width == 0 || self.patch == 0 {
            return fail(format!(
                "model.frames, model.height, model.width and model.patch must be positive ({} {} {} {})",
                self.frames, self.height, self.width, self.patch
            ));
        }
        if !self.height.is_multiple_of(self.patch) || !self.width.is_multiple_of(self.patch) {
            return fail(format!(
                "model.height x model.width ({}x{}) is not divisible by model.patch ({})",
                self.height, self.width, self.patch
            ));
        }
        if self.heads == 0 || !self.hidden.is_multiple_of(self.heads) {
            return fail(format!(
                "model.hidden ({}) is not divisible by model.heads ({})",
                self.hidden, self.heads
            ));
        }
        if self.depth == 0 {
            return fail("model.depth must be at least 1".into());
        }
        if self.classes < 2 {
            return fail(format!("model.classes must be at least 2, got {}", self.classes));
        }
        if self.mlp_ratio == 0 {
            return fail("model.mlp_ratio must be positive".into());
        }
        self.adapter.validate(self.hidden, self.depth)
    }

    pub fn grid(&self) -> (usize, usize) {
        (self.height / self.patch, self.width / self.patch)
    }

    /// Patches per frame.
    pub fn patches(&self) -> usize {
        let (h, w) = self.grid();
        h * w
    }

    /// Tokens per frame, class token included.
    pub fn seq(&self) -> usize {
        self.patches() + 1
    }

    /// Flattened patch width `3·P²`.
    pub fn patch_dim(&self) -> usize {
        3 * self.patch * self.patch
    }

    pub fn mlp_hidden(&self) -> usize {
        self.hidden * self.mlp_ratio
    }

    pub fn clip_shape(&self) -> [usize; 4] {
        [self.frames, 3, self.height, self.width]
    }

    pub fn layout(&self) -> TokenLayout {
        let (grid_h, grid_w) = self.grid();
        TokenLayout {
            frames: self.frames,
            grid_h,
            grid_w,
        }
    }

    /// Every parameter tensor in model order. Shapes do not depend on the
    /// clip length.
    pub fn param_specs(&self) -> Vec<ParamSpec> {
        let d = self.hidden;
        let m = self.mlp_hidden();
        let fan_in = |n: usize| Init::TruncNormal(1.0 / (n as f64).sqrt());
        let mut specs = vec![
            ParamSpec::new(
                "patch_embed.weight",
                &[self.patch_dim(), d],
                ParamGroup::PatchEmbed,
                fan_in(self.patch_dim()),
            ),
            ParamSpec::new("patch_embed.bias", &[d], ParamGroup::PatchEmbed, Init::Zeros),
            ParamSpec::new("cls_token", &[d], ParamGroup::ClsToken, Init::TruncNormal(0.02)),
            ParamSpec::new(
                "pos_embed",
                &[self.seq(), d],
                ParamGroup::PosEmbed,
                Init::TruncNormal(0.02),
            ),
        ];
        for i in 1..=self.depth {
            let g = ParamGroup::Block(i);
            let p = |s: &str| format!("blocks.{i}.{s}");
            specs.push(ParamSpec::new(p("norm1.weight"), &[d], g, Init::Ones));
            specs.push(ParamSpec::new(p("norm1.bias"), &[d], g, Init::Zeros));
            for proj in ["q", "k", "v", "out"] {
                specs.push(ParamSpec::new(p(&format!("attn.{proj}.weight")), &[d, d], g, fan_in(d)));
                specs.push(ParamSpec::new(p(&format!("attn.{proj}.bias")), &[d], g, Init::Zeros));
            }
            specs.push(ParamSpec::new(p("norm2.weight"), &[d], g, Init::Ones));
            specs.push(ParamSpec::new(p("norm2.bias"), &[d], g, Init::Zeros));
            specs.push(ParamSpec::new(p("mlp.fc1.weight"), &[d, m], g, fan_in(d)));
            specs.push(ParamSpec::new(p("mlp.fc1.bias"), &[m], g, Init::Zeros));
            specs.push(ParamSpec::new(p("mlp.fc2.weight"), &[m, d], g, fan_in(m)));
            specs.push(ParamSpec::new(p("mlp.fc2.bias"), &[d], g, Init::Zeros));
            specs.extend(self.adapter.specs(i, d));
        }
        specs.push(ParamSpec::new("norm.weight", &[d], ParamGroup::FinalNorm, Init::Ones));
        specs.push(ParamSpec::new("norm.bias", &[d], ParamGroup::FinalNorm, Init::Zeros));
        specs.push(ParamSpec::new(
            "head.weight",
            &[d, self.classes],
            ParamGroup::Head,
            Init::TruncNormal(0.02),
        ));
        specs.push(ParamSpec::new("head.bias", &[self.classes], ParamGroup::Head, Init::Zeros));
        specs
    }
}

/// Splits a `[3×H×W]` frame into `[N × 3P²]` raster-ordered patches, each
/// row the channel-major flattening of one `P×P` patch.
pub fn patchify<T: Scalar>(frame: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    if frame.ndim() != 3 || frame.shape()[0] != 3 {
        return Err(Error::Shape(format!(
            "frame must be [3, H, W], got {:?}",
            frame.shape()
        )));
    }
    let clip = frame.clone().reshape(&[1, 3, frame.shape()[1], frame.shape()[2]])?;
    patchify_clip(&clip, patch)
}

/// Patchifies every frame of a `[T×3×H×W]` clip into `[(T·N) × 3P²]`.
pub fn patchify_clip<T: Scalar>(clip: &Tensor<T>, patch: usize) -> Result<Tensor<T>> {
    let s = clip.shape();
    if s.len() != 4 || s[1] != 3 {
        return Err(Error::Shape(format!("clip must be [T, 3, H, W], got {s:?}")));
    }
    let (frames, h, w) = (s[0], s[2], s[3]);
    if patch == 0 || h % patch != 0 || w % patch != 0 {
        return Err(Error::Config(format!(
            "frame {h}x{w} is not divisible into {patch}-pixel patches"
        )));
    }
    let (gh, gw) = (h / patch, w / patch);
    let width = 3 * patch * patch;
    let src = clip.data();
    let mut out = Vec::with_capacity(src.len());
    for t in 0..frames {
        for pi in 0..gh {
            for pj in 0..gw {
                for c in 0..3 {
                    for di in 0..patch {
                        let row = ((t * 3 + c) * h + pi * patch + di) * w + pj * patch;
                        out.extend_from_slice(&src[row..row + patch]);
                    }
                }
            }
        }
    }
    Tensor::new(vec![frames * gh * gw, width], out)
}

/// Mean over the frame axis of `[T × hidden]` class tokens.
pub fn temporal_average_pool<T: Scalar>(cls_tokens: &Tensor<T>) -> Result<Tensor<T>> {
    if cls_tokens.ndim() != 2 || cls_tokens.shape()[0] == 0 {
        return Err(Error::Shape(format!(
            "temporal pooling needs [T ≥ 1, hidden] tokens, got {:?}",
            cls_tokens.shape()
        )));
    }
    let mut g = Graph::new();
    let x = g.leaf_ref(cls_tokens, false);
    let m = g.mean_rows(x)?;
    Ok(g.value(m).clone())
}

/// Graph handles of one transformer block's backbone weights.
#[derive(Clone, Copy, Debug)]
pub struct BlockVars {
    pub norm1_w: Var,
    pub norm1_b: Var,
    pub q_w: Var,
    pub q_b: Var,
    pub k_w: Var,
    pub k_b: Var,
    pub v_w: Var,
    pub v_b: Var,
    pub out_w: Var,
    pub out_b: Var,
    pub norm2_w: Var,
    pub norm2_b: Var,
    pub fc1_w: Var,
    pub fc1_b: Var,
    pub fc2_w: Var,
    pub fc2_b: Var,
}

/// Graph handles for every model parameter. `all[i]` is the handle of store
/// entry `i`.
#[derive(Clone, Debug)]
pub struct ModelVars {
    pub all: Vec<Var>,
    pub patch_w: Var,
    pub patch_b: Var,
    pub cls: Var,
    pub pos: Var,
    pub blocks: Vec<BlockVars>,
    pub adapters: Vec<Option<AdapterVars>>,
    pub norm_w: Var,
    pub norm_b: Var,
    pub head_w: Var,
    pub head_b: Var,
}

fn linear<T: Scalar>(g: &mut Graph<'_, T>, x: Var, w: Var, b: Var) -> Result<Var> {
    let y = g.matmul(x, w)?;
    g.add_bias(y, b)
}

/// Multi-head self-attention over groups of `seq` consecutive rows, with
/// q/k/v and output projections.
pub fn mhsa<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    w: &BlockVars,
    heads: usize,
    seq: usize,
) -> Result<Var> {
    let q = linear(g, x, w.q_w, w.q_b)?;
    let k = linear(g, x, w.k_w, w.k_b)?;
    let v = linear(g, x, w.v_w, w.v_b)?;
    let a = g.attention(q, k, v, heads, seq)?;
    linear(g, a, w.out_w, w.out_b)
}

fn mlp<T: Scalar>(g: &mut Graph<'_, T>, x: Var, w: &BlockVars) -> Result<Var> {
    let h = linear(g, x, w.fc1_w, w.fc1_b)?;
    let h = g.activation(h, Activation::Gelu)?;
    linear(g, h, w.fc2_w, w.fc2_b)
}

/// The adapter attached to one block.
#[derive(Clone, Copy)]
pub struct AdapterHook<'h> {
    pub vars: &'h AdapterVars,
    pub config: &'h AdapterConfig,
    pub index: Option<&'h AdapterIndex>,
}

/// Pre-norm block `x + MHSA(LN(x))`, then `x + MLP(LN(x))`, with the adapter
/// applied once at its configured position.
pub fn transformer_block<T: Scalar>(
    g: &mut Graph<'_, T>,
    x: Var,
    w: &BlockVars,
    hook: Option<AdapterHook<'_>>,
    heads: usize,
    seq: usize,
) -> Result<Var> {
    let adapt = |g: &mut Graph<'_, T>, x: Var, at: AdapterPosition| match hook {
        Some(h) if h.config.position == at => apply_adapter(g, x, h.vars, h.config, h.index),
        _ => Ok(x),
    };
    let mut x = adapt(g, x, AdapterPosition::BeforeMhsa)?;
    let n = g.layer_norm(x, w.norm1_w, w.norm1_b, LN_EPS)?;
    let a = mhsa(g, n, w, heads, seq)?;
    x = g.add(x, a)?;
    x = adapt(g, x, AdapterPosition::AfterMhsa)?;
    let n = g.layer_norm(x, w.norm2_w, w.norm2_b, LN_EPS)?;
    let m = mlp(g, n, w)?;
    x = g.add(x, m)?;
    adapt(g, x, AdapterPosition::AfterMlp)
}

/// Gather indices for assembling and reading the token matrix.
#[derive(Clone, Debug)]
struct TokenIndex {
    /// concat(projected patches, cls) → `[(T·S) × hidden]`
    assemble: Arc<[usize]>,
    /// pos_embed tiled over frames
    pos_tile: Arc<[usize]>,
    /// class-token rows → `[T × hidden]`
    cls_rows: Arc<[usize]>,
}

impl TokenIndex {
    fn new(frames: usize, patches: usize, hidden: usize) -> Self {
        let seq = patches + 1;
        let proj_len = frames * patches * hidden;
        let mut assemble = Vec::with_capacity(frames * seq * hidden);
        for t in 0..frames {
            for c in 0..hidden {
                assemble.push(proj_len + c);
            }
            for p in 0..patches {
                let row = (t * patches + p) * hidden;
                assemble.extend(row..row + hidden);
            }
        }
        let pos_tile = (0..frames * seq * hidden).map(|i| i % (seq * hidden)).collect::<Vec<_>>();
        let cls_rows = (0..frames)
            .flat_map(|t| (t * seq * hidden)..(t * seq * hidden + hidden))
            .collect::<Vec<_>>();
        TokenIndex {
            assemble: assemble.into(),
            pos_tile: pos_tile.into(),
            cls_rows: cls_rows.into(),
        }
    }
}

/// Backbone, adapters and head with their parameter store.
#[derive(Clone, Debug)]
pub struct VideoModel<T: Scalar> {
    config: ModelConfig,
    params: ParamStore<T>,
    tokens: TokenIndex,
    adapter_index: Option<AdapterIndex>,
}

impl<T: Scalar> VideoModel<T> {
    pub fn new(config: ModelConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let params = ParamStore::from_specs(&config.param_specs(), seed);
        Self::from_store(config, params)
    }

    /// Wraps an existing store, which must hold exactly the tensors the
    /// configuration calls for.
    pub fn from_store(config: ModelConfig, params: ParamStore<T>) -> Result<Self> {
        config.validate()?;
        let specs = config.param_specs();
        if specs.len() != params.len() {
            return Err(Error::Shape(format!(
                "configuration needs {} tensors, store has {}",
                specs.len(),
                params.len()
            )));
        }
        for (spec, p) in specs.iter().zip(params.iter()) {
            if spec.name != p.spec.name || spec.shape != p.value.shape() {
                return Err(Error::Shape(format!(
                    "expected {} {:?}, found {} {:?}",
                    spec.name,
                    spec.shape,
                    p.spec.name,
                    p.value.shape()
                )));
            }
        }
        let tokens = TokenIndex::new(config.frames, config.patches(), config.hidden);
        let adapter_index = config
            .adapter
            .variant
            .has_conv()
            .then(|| AdapterIndex::new(config.layout(), config.adapter.bottleneck));
        Ok(VideoModel {
            config,
            params,
            tokens,
            adapter_index,
        })
    }

    pub fn config(&self) -> &ModelConfig {
        &self.config
    }

    pub fn params(&self) -> &ParamStore<T> {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut ParamStore<T> {
        &mut self.params
    }

    pub fn into_params(self) -> ParamStore<T> {
        self.params
    }

    /// Same weights at `f64` or `f32`.
    pub fn cast<U: Scalar>(&self) -> VideoModel<U> {
        VideoModel {
            config: self.config.clone(),
            params: self.params.cast(),
            tokens: self.tokens.clone(),
            adapter_index: self.adapter_index.clone(),
        }
    }

    /// Registers every parameter as a leaf. Trainable tensors request
    /// gradients when `grads` is set; everything else is a constant.
    pub fn register<'a>(&'a self, g: &mut Graph<'a, T>, grads: bool) -> ModelVars {
        let all: Vec<Var> = self
            .params
            .iter()
            .map(|p| g.leaf_ref(&p.value, grads && p.trainable))
            .collect();
        let v = |name: &str| all[self.params.position(name).expect("parameter present")];
        let blocks = (1..=self.config.depth)
            .map(|i| {
                let b = |s: &str| v(&format!("blocks.{i}.{s}"));
                BlockVars {
                    norm1_w: b("norm1.weight"),
                    norm1_b: b("norm1.bias"),
                    q_w: b("attn.q.weight"),
                    q_b: b("attn.q.bias"),
                    k_w: b("attn.k.weight"),
                    k_b: b("attn.k.bias"),
                    v_w: b("attn.v.weight"),
                    v_b: b("attn.v.bias"),
                    out_w: b("attn.out.weight"),
                    out_b: b("attn.out.bias"),
                    norm2_w: b("norm2.weight"),
                    norm2_b: b("norm2.bias"),
                    fc1_w: b("mlp.fc1.weight"),
                    fc1_b: b("mlp.fc1.bias"),
                    fc2_w: b("mlp.fc2.weight"),
                    fc2_b: b("mlp.fc2.bias"),
                }
            })
            .collect();
        let adapters = (1..=self.config.depth)
            .map(|i| {
                if !self.config.adapter.in_block(i) {
                    return None;
                }
                let a = |s: &str| {
                    self.params
                        .position(&format!("adapters.{i}.{s}"))
                        .map(|k| all[k])
                };
                Some(AdapterVars {
                    down_w: a("down.weight").expect("adapter down"),
                    down_b: a("down.bias").expect("adapter down"),
                    up_w: a("up.weight").expect("adapter up"),
                    up_b: a("up.bias").expect("adapter up"),
                    conv: a("conv.weight"),
                    dilation_w: a("dilation.weight"),
                    dilation_b: a("dilation.bias"),
                })
            })
            .collect();
        ModelVars {
            patch_w: v("patch_embed.weight"),
            patch_b: v("patch_embed.bias"),
            cls: v("cls_token"),
            pos: v("pos_embed"),
            blocks,
            adapters,
            norm_w: v("norm.weight"),
            norm_b: v("norm.bias"),
            head_w: v("head.weight"),
            head_b: v("head.bias"),
            all,
        }
    }

    fn check_clip(&self, clip: &Tensor<T>) -> Result<()> {
        let want = self.config.clip_shape();
        if clip.shape() != want {
            return Err(Error::Shape(format!(
                "clip shape {:?} does not match the model's expected {:?}",
                clip.shape(),
                want
            )));
        }
        Ok(())
    }

    /// Projects patches, inserts the class token per frame and adds the
    /// positional embedding: `[(T·N) × 3P²]` → `[(T·S) × hidden]`.
    pub fn embed(&self, g: &mut Graph<'_, T>, vars: &ModelVars, patches: Var) -> Result<Var> {
        let c = &self.config;
        let want = [c.frames * c.patches(), c.patch_dim()];
        if g.shape(patches) != want {
            return Err(Error::Shape(format!(
                "patches {:?} do not match expected {want:?}",
                g.shape(patches)
            )));
        }
        let proj = linear(g, patches, vars.patch_w, vars.patch_b)?;
        let joined = g.concat(&[proj, vars.cls])?;
        let rows = vec![c.frames * c.seq(), c.hidden];
        let tokens = g.gather(joined, rows.clone(), self.tokens.assemble.clone())?;
        let pos = g.gather(vars.pos, rows, self.tokens.pos_tile.clone())?;
        g.add(tokens, pos)
    }

    /// Runs tokens through block `index` (0-based) and its adapter.
    pub fn encode_block(&self, g: &mut Graph<'_, T>, vars: &ModelVars, x: Var, index: usize) -> Result<Var> {
        let c = &self.config;
        let block = vars
            .blocks
            .get(index)
            .ok_or_else(|| Error::Usage(format!("block index {index} out of range for depth {}", c.depth)))?;
        let hook = vars.adapters[index].as_ref().map(|a| AdapterHook {
            vars: a,
            config: &c.adapter,
            index: self.adapter_index.as_ref(),
        });
        transformer_block(g, x, block, hook, c.heads, c.seq())
    }

    /// Runs the embedded tokens through every block.
    pub fn encode(&self, g: &mut Graph<'_, T>, vars: &ModelVars, tokens: Var) -> Result<Var> {
        let mut x = tokens;
        for i in 0..self.config.depth {
            x = self.encode_block(g, vars, x, i)?;
        }
        Ok(x)
    }

    /// Final-layer class tokens of every frame, `[T × hidden]`.
    pub fn frame_cls_tokens(&self, g: &mut Graph<'_, T>, vars: &ModelVars, clip: &Tensor<T>) -> Result<Var> {
        self.check_clip(clip)?;
        let patches = g.leaf(patchify_clip(clip, self.config.patch)?, false);
        let tokens = self.embed(g, vars, patches)?;
        let x = self.encode(g, vars, tokens)?;
        g.gather(
            x,
            vec![self.config.frames, self.config.hidden],
            self.tokens.cls_rows.clone(),
        )
    }

    /// Temporally pooled and normalized clip feature, `[1 × hidden]`.
    pub fn features(&self, g: &mut Graph<'_, T>, vars: &ModelVars, clip: &Tensor<T>) -> Result<Var> {
        let cls = self.frame_cls_tokens(g, vars, clip)?;
        let pooled = g.mean_rows(cls)?;
        let pooled = g.reshape(pooled, vec![1, self.config.hidden])?;
        g.layer_norm(pooled, vars.norm_w, vars.norm_b, LN_EPS)
    }

    /// Classifier over a `[1 × hidden]` feature, giving `[classes]` logits.
    pub fn head(&self, g: &mut Graph<'_, T>, vars: &ModelVars, features: Var) -> Result<Var> {
        let z = linear(g, features, vars.head_w, vars.head_b)?;
        g.reshape(z, vec![self.config.classes])
    }

    pub fn forward(&self, g: &mut Graph<'_, T>, vars: &ModelVars, clip: &Tensor<T>) -> Result<Var> {
        let f = self.features(g, vars, clip)?;
        self.head(g, vars, f)
    }

    /// Evaluation-mode logits.
    pub fn logits(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let out = self.forward(&mut g, &vars, clip)?;
        Ok(g.value(out).clone())
    }

    /// Evaluation-mode pooled features, `[1 × hidden]`.
    pub fn feature_vector(&self, clip: &Tensor<T>) -> Result<Tensor<T>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let out = self.features(&mut g, &vars, clip)?;
        Ok(g.value(out).clone())
    }

    /// Embeds one frame's `[N × 3P²]` patches into `[(N+1) × hidden]` tokens.
    pub fn embed_frame(&self, patches: &Tensor<T>) -> Result<Tensor<T>> {
        let c = &self.config;
        if patches.shape() != [c.patches(), c.patch_dim()] {
            return Err(Error::Shape(format!(
                "frame patches {:?} do not match expected [{}, {}]",
                patches.shape(),
                c.patches(),
                c.patch_dim()
            )));
        }
        let single = TokenIndex::new(1, c.patches(), c.hidden);
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        let p = g.leaf_ref(patches, false);
        let proj = linear(&mut g, p, vars.patch_w, vars.patch_b)?;
        let joined = g.concat(&[proj, vars.cls])?;
        let rows = vec![c.seq(), c.hidden];
        let tokens = g.gather(joined, rows.clone(), single.assemble)?;
        let pos = g.gather(vars.pos, rows, single.pos_tile)?;
        let out = g.add(tokens, pos)?;
        Ok(g.value(out).clone())
    }

    /// Dilation rates used by each convolutional adapter on `clip`, in block order.
    pub fn dilation_rates(&self, clip: &Tensor<T>) -> Result<Vec<[f64; 3]>> {
        let mut g = Graph::new();
        let vars = self.register(&mut g, false);
        self.forward(&mut g, &vars, clip)?;
        Ok(g
            .marked(crate::adapter::DILATION_MARK)
            .into_iter()
            .map(|t| [t.data()[0].f64(), t.data()[1].f64(), t.data()[2].f64()])
            .collect())
    }

    /// Whether any adapter mixes information across frames.
    pub fn has_temporal_adapter(&self) -> bool {
        self.config.adapter.variant.has_conv() && self.config.adapter.is_active(self.config.depth)
    }

    /// True when no adapter is attached.
    pub fn is_plain(&self) -> bool {
        self.config.adapter.variant == AdapterVariant::None || !self.config.adapter.is_active(self.config.depth)
    }
}
