mod common;

use feadapt::adapter::{
    apply_adapter, count_tunable_params, derive_bottleneck, dynamic_dilation_head, fe_adapter,
    grid_to_tokens, tokens_to_grid, vanilla_adapter, AdapterConfig, AdapterIndex, AdapterVariant,
    AdapterWeights, BlockSet, TokenLayout, DILATION_BIAS_INIT,
};
use feadapt::params::{rng_for, uniform_tensor};
use feadapt::tensor::{depthwise_conv3d, finite_difference_gradient, Activation, Graph, Tensor};
use feadapt::train::{apply_freeze, AdamW, FreezeMode};
use feadapt::vit::{ModelConfig, VideoModel};
use feadapt::Error;
use proptest::prelude::*;

const LAYOUT: TokenLayout = TokenLayout {
    frames: 3,
    grid_h: 2,
    grid_w: 3,
};

fn cfg(variant: AdapterVariant, r: usize) -> AdapterConfig {
    AdapterConfig {
        variant,
        bottleneck: r,
        ..AdapterConfig::default()
    }
}

fn random(shape: &[usize], scale: f64, seed: u64, label: &str) -> Tensor<f64> {
    uniform_tensor(shape, scale, &mut rng_for(seed, label))
}

fn run(
    x: &Tensor<f64>,
    w: &AdapterWeights<f64>,
    c: &AdapterConfig,
    layout: TokenLayout,
) -> Tensor<f64> {
    let index = AdapterIndex::new(layout, c.bottleneck);
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let xv = g.leaf_ref(x, false);
    let y = apply_adapter(&mut g, xv, &vars, c, Some(&index)).unwrap();
    g.value(y).clone()
}

#[test]
fn identity_init_returns_input_bitwise() {
    let x = random(&[LAYOUT.tokens(), 8], 2.0, 0, "x");
    for variant in [AdapterVariant::Vanilla, AdapterVariant::DwConv3d, AdapterVariant::D2Conv3d] {
        let c = cfg(variant, 4);
        let w = AdapterWeights::<f64>::init(&c, 8, 0);
        assert!(w.up_w.data().iter().all(|&v| v == 0.0));
        assert!(run(&x, &w, &c, LAYOUT).bit_eq(&x), "{variant}");
    }
}

#[test]
fn vanilla_linear_composition() {
    // orthonormal columns: the first r standard basis vectors, rotated
    let (d, r) = (6, 3);
    let theta: f64 = 0.7;
    let mut down = vec![0.0; d * r];
    for j in 0..r {
        down[(2 * j) * r + j] = theta.cos();
        down[(2 * j + 1) * r + j] = theta.sin();
    }
    let down = Tensor::new(vec![d, r], down).unwrap();
    let mut up = Tensor::zeros(&[r, d]);
    for i in 0..d {
        for j in 0..r {
            up.data_mut()[j * d + i] = down.data()[i * r + j];
        }
    }
    let c = AdapterConfig {
        activation: Activation::Identity,
        ..cfg(AdapterVariant::Vanilla, r)
    };
    let mut w = AdapterWeights::<f64>::init(&c, d, 0);
    w.down_w = down.clone();
    w.up_w = up.clone();
    let x = random(&[7, d], 1.0, 1, "x");
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let xv = g.leaf_ref(&x, false);
    let y = vanilla_adapter(&mut g, xv, &vars, Activation::Identity).unwrap();
    let proj = common::naive_matmul(down.data(), up.data(), d, r, d);
    let xp = common::naive_matmul(x.data(), &proj, 7, d, d);
    let want: Vec<f64> = x.data().iter().zip(&xp).map(|(a, b)| a + b).collect();
    assert_eq!(g.shape(y), &[7, d]);
    let got = g.value(y).data();
    assert!(got.iter().zip(&want).all(|(a, b)| (a - b).abs() < 1e-12));
}

#[test]
fn vanilla_width_mismatch_is_an_error() {
    let c = cfg(AdapterVariant::Vanilla, 2);
    let w = AdapterWeights::<f64>::init(&c, 8, 0);
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let x = g.leaf(Tensor::zeros(&[3, 5]), false);
    assert!(vanilla_adapter(&mut g, x, &vars, Activation::Gelu).is_err());
}

#[test]
fn grid_roundtrip_is_bitwise() {
    let x = random(&[LAYOUT.tokens(), 5], 1.0, 2, "x");
    let (grid, cls) = tokens_to_grid(&x, &LAYOUT).unwrap();
    assert!(grid_to_tokens(&grid, &cls, &LAYOUT).unwrap().bit_eq(&x));
}

#[test]
fn grid_cells_follow_index_arithmetic() {
    let width = 4;
    let x = random(&[LAYOUT.tokens(), width], 1.0, 3, "x");
    let (grid, cls) = tokens_to_grid(&x, &LAYOUT).unwrap();
    let (h, w, n) = (LAYOUT.grid_h, LAYOUT.grid_w, LAYOUT.patches());
    assert_eq!(grid.shape(), &[width, 3, h, w]);
    for c in 0..width {
        for t in 0..3 {
            for i in 0..h {
                for j in 0..w {
                    let token = t * (n + 1) + 1 + i * w + j;
                    let cell = ((c * 3 + t) * h + i) * w + j;
                    assert_eq!(grid.data()[cell], x.data()[token * width + c]);
                }
            }
            assert_eq!(cls.data()[t * width + c], x.data()[t * (n + 1) * width + c]);
        }
    }
}

#[test]
fn grid_rejects_wrong_token_count() {
    let x = Tensor::<f64>::zeros(&[LAYOUT.tokens() - 1, 2]);
    assert!(matches!(tokens_to_grid(&x, &LAYOUT), Err(Error::Shape(_))));
}

fn rates(grid: &Tensor<f64>, w: &Tensor<f64>, b: &Tensor<f64>) -> Vec<f64> {
    let mut g = Graph::new();
    let gv = g.leaf_ref(grid, false);
    let wv = g.leaf_ref(w, false);
    let bv = g.leaf_ref(b, false);
    let r = dynamic_dilation_head(&mut g, gv, wv, bv).unwrap();
    g.value(r).data().to_vec()
}

#[test]
fn dilation_head_zero_weights_give_one_plus_ln2() {
    let grid = random(&[4, 2, 2, 2], 1.0, 4, "grid");
    let r = rates(&grid, &Tensor::zeros(&[4, 3]), &Tensor::zeros(&[3]));
    for v in r {
        assert!((v - (1.0 + std::f64::consts::LN_2)).abs() < 1e-15);
    }
}

#[test]
fn dilation_head_starts_at_one() {
    let grid = random(&[4, 2, 2, 2], 1.0, 5, "grid");
    let r = rates(&grid, &Tensor::zeros(&[4, 3]), &Tensor::full(&[3], DILATION_BIAS_INIT));
    for v in r {
        assert!(v >= 1.0 && v - 1.0 < 1e-6);
    }
}

#[test]
fn dilation_head_gradient_matches_finite_differences() {
    let grid = random(&[4, 2, 3, 3], 1.0, 6, "grid");
    let w = random(&[4, 3], 0.5, 6, "w");
    let b = random(&[3], 0.5, 6, "b");
    let probe = [0.7, -1.3, 0.4];
    let f = |wt: &Tensor<f64>| {
        let r = rates(&grid, wt, &b);
        Ok(r.iter().zip(probe).map(|(a, p)| a * p).sum::<f64>())
    };
    let numeric = finite_difference_gradient(f, &w, 1e-6).unwrap();
    let mut g = Graph::new();
    let gv = g.leaf_ref(&grid, false);
    let wv = g.leaf_ref(&w, true);
    let bv = g.leaf_ref(&b, false);
    let r = dynamic_dilation_head(&mut g, gv, wv, bv).unwrap();
    let p = g.constant(Tensor::from_f64(&[3], &probe).unwrap());
    let s = g.mul(r, p).unwrap();
    let loss = g.sum(s).unwrap();
    let grads = g.backward(loss).unwrap();
    let analytic = grads.get(wv).unwrap();
    for (a, n) in analytic.data().iter().zip(numeric.data()) {
        assert!((a - n).abs() / a.abs().max(n.abs()).max(1e-8) < 1e-4, "{a} vs {n}");
    }
}

#[test]
fn reduction_to_plain_adapter() {
    for seed in 0..10 {
        let c = cfg(AdapterVariant::D2Conv3d, 4);
        let mut w = AdapterWeights::<f64>::init(&c, 8, seed);
        w.down_b = random(&[4], 0.5, seed, "db");
        w.up_w = random(&[4, 8], 0.5, seed, "uw");
        w.up_b = random(&[8], 0.5, seed, "ub");
        w.dilation_w = Some(random(&[4, 3], 0.5, seed, "dw"));
        w.dilation_b = Some(Tensor::full(&[3], -1000.0));
        let x = random(&[LAYOUT.tokens(), 8], 1.0, seed, "x");
        let conv = run(&x, &w, &c, LAYOUT);
        let plain = run(&x, &w, &cfg(AdapterVariant::Vanilla, 4), LAYOUT);
        assert!(conv.max_abs_diff(&plain) < 1e-6, "{}", conv.max_abs_diff(&plain));
    }
}

#[test]
fn constant_in_time_clip_gives_frame_constant_tokens() {
    let layout = TokenLayout {
        frames: 5,
        grid_h: 3,
        grid_w: 3,
    };
    let c = cfg(AdapterVariant::DwConv3d, 4);
    let mut w = AdapterWeights::<f64>::init(&c, 6, 7);
    w.conv = Some(random(&[4, 3, 3, 3], 1.0, 7, "k"));
    w.up_w = random(&[4, 6], 1.0, 7, "up");
    let frame = random(&[layout.seq(), 6], 1.0, 7, "frame");
    let data: Vec<f64> = frame.data().iter().cycle().take(frame.len() * 5).copied().collect();
    let x = Tensor::new(vec![layout.tokens(), 6], data).unwrap();
    let y = run(&x, &w, &c, layout);
    let per = layout.seq() * 6;
    let interior: Vec<&[f64]> = (1..4).map(|t| &y.data()[t * per..(t + 1) * per]).collect();
    for f in &interior[1..] {
        assert!(f.iter().zip(interior[0]).all(|(a, b)| (a - b).abs() < 1e-12));
    }
    // the padded boundary frames differ
    assert!(y.data()[..per].iter().zip(interior[0]).any(|(a, b)| (a - b).abs() > 1e-9));
}

#[test]
fn fe_adapter_rejects_none_variant() {
    let c = cfg(AdapterVariant::DwConv3d, 2);
    let w = AdapterWeights::<f64>::init(&c, 4, 0);
    let index = AdapterIndex::new(LAYOUT, 2);
    let mut g = Graph::new();
    let vars = w.register(&mut g, false);
    let x = g.leaf(Tensor::zeros(&[LAYOUT.tokens(), 4]), false);
    let none = AdapterConfig::none();
    assert!(matches!(fe_adapter(&mut g, x, &vars, &none, &index), Err(Error::Usage(_))));
}

fn vit_b_adapter(variant: AdapterVariant, r: usize) -> ModelConfig {
    let mut c = ModelConfig::vit_b(7);
    c.adapter.variant = variant;
    c.adapter.bottleneck = r;
    c
}

#[test]
fn linear_probe_counts_only_the_head() {
    let c = vit_b_adapter(AdapterVariant::None, 350);
    let r = count_tunable_params(&c, FreezeMode::LinearProbe).unwrap();
    assert_eq!(r.trainable, 768 * 7 + 7);
    assert_eq!(r.trainable, 5383);
}

#[test]
fn vanilla_counts_match_closed_form() {
    let c = vit_b_adapter(AdapterVariant::Vanilla, 64);
    let r = count_tunable_params(&c, FreezeMode::Adapter).unwrap();
    assert_eq!(r.trainable_in("adapter."), 12 * (768 * 64 + 64 * 768 + 64 + 768));
    assert_eq!(r.trainable, 12 * (768 * 64 + 64 * 768 + 64 + 768) + 5383);
}

#[test]
fn d2_counts_match_closed_form() {
    for r in [1, 16, 350] {
        let c = vit_b_adapter(AdapterVariant::D2Conv3d, r);
        let rep = count_tunable_params(&c, FreezeMode::Adapter).unwrap();
        let per_block = 2 * 768 * r + r + 768 + 27 * r + 3 * r + 3;
        assert_eq!(rep.trainable, 12 * per_block + 5383);
        assert_eq!(rep.trainable_in("dilation_head."), 12 * (3 * r + 3));
    }
}

#[test]
fn full_fine_tune_trains_everything() {
    let c = vit_b_adapter(AdapterVariant::D2Conv3d, 350);
    let r = count_tunable_params(&c, FreezeMode::Full).unwrap();
    assert_eq!(r.trainable, r.total);
    assert_eq!(r.ratio, 1.0);
}

#[test]
fn derived_bottleneck_for_the_budget() {
    let r = derive_bottleneck(&ModelConfig::vit_b(7), 6_600_000).unwrap();
    assert!((330..=360).contains(&r));
    assert_eq!(r, 350);
    assert_eq!(ModelConfig::vit_b(7).adapter.bottleneck, r);
}

#[test]
fn counts_are_strictly_monotone() {
    let base = ModelConfig::desk();
    let mut last = 0;
    for r in 1..base.hidden {
        let mut c = base.clone();
        c.adapter.bottleneck = r;
        let n = count_tunable_params(&c, FreezeMode::Adapter).unwrap().trainable;
        assert!(n > last);
        last = n;
    }
    let mut last = 0;
    for k in 1..=base.depth {
        let mut c = base.clone();
        c.adapter.blocks = BlockSet::Only((1..=k).collect());
        let n = count_tunable_params(&c, FreezeMode::Adapter).unwrap().trainable;
        assert!(n > last);
        last = n;
    }
}

#[test]
fn conv_is_local_at_integer_dilation() {
    let (c, t, h, w) = (2, 7, 7, 7);
    let kernel = random(&[c, 3, 3, 3], 1.0, 9, "k");
    let x = random(&[c, t, h, w], 1.0, 9, "x");
    let centre = (3, 3, 3);
    for d in 1..=3 {
        let rate = [d as f64; 3];
        let base = depthwise_conv3d(&x, &kernel, rate).unwrap();
        let mut xp = x.clone();
        let at = ((t + centre.0) * h + centre.1) * w + centre.2;
        xp.data_mut()[at] += 1.0;
        let moved = depthwise_conv3d(&xp, &kernel, rate).unwrap();
        for ch in 0..c {
            for a in 0..t {
                for b in 0..h {
                    for e in 0..w {
                        let i = ((ch * t + a) * h + b) * w + e;
                        let far = ch != 1
                            || a.abs_diff(centre.0).max(b.abs_diff(centre.1)).max(e.abs_diff(centre.2)) > d;
                        if far {
                            assert_eq!(base.data()[i], moved.data()[i], "d={d} at {ch},{a},{b},{e}");
                        }
                    }
                }
            }
        }
    }
}

#[test]
fn perturbing_one_patch_is_local_in_the_adapter() {
    let layout = TokenLayout {
        frames: 5,
        grid_h: 5,
        grid_w: 5,
    };
    let c = cfg(AdapterVariant::DwConv3d, 3);
    let mut w = AdapterWeights::<f64>::init(&c, 4, 10);
    w.conv = Some(random(&[3, 3, 3, 3], 1.0, 10, "k"));
    w.up_w = random(&[3, 4], 1.0, 10, "u");
    let x = random(&[layout.tokens(), 4], 1.0, 10, "x");
    let base = run(&x, &w, &c, layout);
    let (t0, i0, j0) = (2usize, 1usize, 3usize);
    let token = t0 * layout.seq() + 1 + i0 * 5 + j0;
    let mut xp = x.clone();
    xp.data_mut()[token * 4] += 0.5;
    let moved = run(&xp, &w, &c, layout);
    for t in 0..5 {
        for k in 0..layout.seq() {
            let row = (t * layout.seq() + k) * 4;
            let same = base.data()[row..row + 4] == moved.data()[row..row + 4];
            if k == 0 {
                assert!(same, "class token of frame {t} changed");
                continue;
            }
            let (i, j) = ((k - 1) / 5, (k - 1) % 5);
            let dist = t.abs_diff(t0).max(i.abs_diff(i0)).max(j.abs_diff(j0));
            if dist > 1 {
                assert!(same, "token ({t},{i},{j}) changed");
            }
        }
    }
}

#[test]
fn class_tokens_bypass_the_convolution() {
    let c = AdapterConfig {
        activation: Activation::Identity,
        ..cfg(AdapterVariant::D2Conv3d, 3)
    };
    let mut w = AdapterWeights::<f64>::init(&c, 4, 11);
    w.conv = Some(random(&[3, 3, 3, 3], 1.0, 11, "k"));
    w.up_w = random(&[3, 4], 1.0, 11, "u");
    w.dilation_w = Some(random(&[3, 3], 1.0, 11, "dw"));
    w.dilation_b = Some(Tensor::zeros(&[3]));
    let x = random(&[LAYOUT.tokens(), 4], 1.0, 11, "x");
    let mut xz = x.clone();
    let s = LAYOUT.seq();
    for t in 0..LAYOUT.frames {
        for k in 1..s {
            for col in 0..4 {
                xz.data_mut()[(t * s + k) * 4 + col] = 0.0;
            }
        }
    }
    let a = run(&x, &w, &c, LAYOUT);
    let b = run(&xz, &w, &c, LAYOUT);
    for t in 0..LAYOUT.frames {
        let row = t * s * 4;
        assert_eq!(a.data()[row..row + 4], b.data()[row..row + 4]);
    }
}

#[test]
fn every_adapter_parameter_receives_gradient() {
    for variant in [AdapterVariant::Vanilla, AdapterVariant::DwConv3d, AdapterVariant::D2Conv3d] {
        let cfg = ModelConfig {
            adapter: AdapterConfig {
                variant,
                bottleneck: 4,
                ..AdapterConfig::default()
            },
            ..common::tiny(3)
        };
        let mut model = VideoModel::<f64>::new(cfg.clone(), 12).unwrap();
        apply_freeze(&mut model, FreezeMode::Adapter).unwrap();
        let clip = common::random_clip::<f64>(&cfg, 12);
        let grads = |m: &VideoModel<f64>| {
            let mut g = Graph::new();
            let vars = m.register(&mut g, true);
            let logits = m.forward(&mut g, &vars, &clip).unwrap();
            let loss = g.cross_entropy(logits, 1).unwrap();
            let mut gr = g.backward(loss).unwrap();
            vars.all.iter().map(|&v| gr.take(v)).collect::<Vec<_>>()
        };
        // the first update moves W_up off zero, the second moves the kernel
        // off its centre tap so the dilation rates matter
        let mut opt = AdamW::new(model.params(), Default::default());
        for _ in 0..2 {
            let g = grads(&model);
            opt.update(model.params_mut(), &g, 1e-2).unwrap();
        }
        let last = grads(&model);
        for (p, g) in model.params().iter().zip(&last) {
            if !p.spec.group.is_adapter() {
                continue;
            }
            let g = g.as_ref().unwrap_or_else(|| panic!("{} has no gradient", p.spec.name));
            assert!(g.data().iter().all(|&v| v != 0.0), "{variant}: zero entry in {}", p.spec.name);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig { cases: 32, ..ProptestConfig::default() })]

    #[test]
    fn rates_never_drop_below_one(seed in 0u64..10_000, scale in 0.1f64..50.0) {
        let grid = random(&[3, 2, 2, 2], scale, seed, "g");
        let w = random(&[3, 3], scale, seed, "w");
        let b = random(&[3], scale, seed, "b");
        for v in rates(&grid, &w, &b) {
            prop_assert!(v >= 1.0);
        }
    }

    #[test]
    fn grid_roundtrip_any_layout(frames in 1usize..4, gh in 1usize..4, gw in 1usize..4, width in 1usize..4, seed in 0u64..100) {
        let layout = TokenLayout { frames, grid_h: gh, grid_w: gw };
        let x = random(&[layout.tokens(), width], 1.0, seed, "x");
        let (grid, cls) = tokens_to_grid(&x, &layout).unwrap();
        prop_assert!(grid_to_tokens(&grid, &cls, &layout).unwrap().bit_eq(&x));
    }
}

