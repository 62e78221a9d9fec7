//! Positional encoding, projection and fusion-graph behaviour.

use ecea_fusion::{
    fuse_stages, positional_encoding_2d, project_stage, stage_ablation_mode, FusionConfig,
    FusionParams, StageSet,
};
use extensible_attention::{EaConfig, EaLayerParams};
use numeric_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(&[c, h, w], |_| rng.gen_range(-1.0..1.0))
}

fn small_cfg(c: usize, ea_stages: StageSet, posenc: bool) -> FusionConfig {
    FusionConfig {
        stage_channels: [4, 6, 8],
        common_channels: c,
        attention: EaConfig::new(c, 2, 2, 1),
        ea_stages,
        positional_encoding: posenc,
    }
}

#[test]
fn positional_encoding_values_bounded() {
    let pe = positional_encoding_2d(8, 8, 16).unwrap();
    assert!(pe.data().iter().all(|v| (-1.0..=1.0).contains(v)));
}

#[test]
fn positional_encoding_phase_zero_at_origin() {
    let pe = positional_encoding_2d(5, 5, 8).unwrap();
    // Channels alternate sin/cos within each half.
    for c in 0..8 {
        let expect = if c % 2 == 0 { 0.0 } else { 1.0 };
        assert_eq!(pe.at3(c, 0, 0), expect, "channel {c}");
    }
}

#[test]
fn positional_encoding_distinct_per_location() {
    let (h, w, c) = (8, 8, 16);
    let pe = positional_encoding_2d(h, w, c).unwrap();
    let vec_at = |y: usize, x: usize| -> Vec<f64> {
        (0..c).map(|ch| pe.at3(ch, y, x)).collect()
    };
    let mut min_l2 = f64::INFINITY;
    for a in 0..h * w {
        for b in a + 1..h * w {
            let va = vec_at(a / w, a % w);
            let vb = vec_at(b / w, b % w);
            let d2: f64 = va.iter().zip(&vb).map(|(p, q)| (p - q) * (p - q)).sum();
            min_l2 = min_l2.min(d2.sqrt());
        }
    }
    assert!(min_l2 > 1e-6, "min pairwise distance {min_l2}");
}

#[test]
fn positional_encoding_rejects_bad_width() {
    assert!(positional_encoding_2d(4, 4, 6).is_err());
}

#[test]
fn project_stage_identity_and_zero() {
    let mut r = rng(0);
    let stage = rand_map(3, 4, 4, &mut r);
    let tape = Tape::new();
    let s = tape.constant(stage.clone());
    let eye = tape.constant(Tensor::from_fn(&[3, 3], |i| if i / 3 == i % 3 { 1.0 } else { 0.0 }));
    assert_eq!(project_stage(s, eye).unwrap().value(), stage);
    let zero = tape.constant(Tensor::zeros(&[3, 3]));
    assert!(project_stage(s, zero).unwrap().value().data().iter().all(|&v| v == 0.0));
}

#[test]
fn fused_shape_is_three_c_at_finest_stride() {
    for (h, w) in [(16, 16), (32, 16), (48, 32)] {
        let cfg = small_cfg(8, StageSet::ALL, true);
        let mut r = rng(1);
        let params = FusionParams::init(&cfg, &mut r);
        let tape = Tape::new();
        let bundle = [
            tape.constant(rand_map(4, h / 4, w / 4, &mut r)),
            tape.constant(rand_map(6, h / 8, w / 8, &mut r)),
            tape.constant(rand_map(8, h / 16, w / 16, &mut r)),
        ];
        let vars = params.vars(&tape, false);
        let fused = fuse_stages(&tape, bundle, &vars, &cfg).unwrap();
        assert_eq!(fused.map.shape(), vec![24, h / 4, w / 4]);
        assert_eq!(fused.traces[0].len(), 1);
    }
}

#[test]
fn degenerate_fusion_reduces_to_pyramid_arithmetic() {
    // One channel everywhere, attention in passthrough (zero output
    // projection, no layer norm), no positional encoding: the whole graph is
    // checkable by hand on 4/2/1-pixel-per-side maps.
    let cfg = FusionConfig {
        stage_channels: [1, 1, 1],
        common_channels: 1,
        attention: EaConfig { layer_norm: false, ..EaConfig::new(1, 1, 2, 1) },
        ea_stages: StageSet::ALL,
        positional_encoding: false,
    };
    let mut params = FusionParams::init(&cfg, &mut rng(2));
    params.proj = [
        Tensor::new(vec![1, 1], vec![1.0]).unwrap(),
        Tensor::new(vec![1, 1], vec![2.0]).unwrap(),
        Tensor::new(vec![1, 1], vec![0.5]).unwrap(),
    ];
    for layers in &mut params.ea_layers {
        for layer in layers.iter_mut() {
            layer.w_out = Tensor::zeros(&[1, 1]);
        }
    }
    let s3 = Tensor::from_fn(&[1, 4, 4], |i| i as f64);
    let s4 = Tensor::full(&[1, 2, 2], 3.0);
    let s5 = Tensor::new(vec![1, 1, 1], vec![5.0]).unwrap();

    let tape = Tape::new();
    let bundle = [tape.constant(s3.clone()), tape.constant(s4), tape.constant(s5)];
    let vars = params.vars(&tape, false);
    let fused = fuse_stages(&tape, bundle, &vars, &cfg).unwrap().map.value();
    assert_eq!(fused.shape(), &[3, 4, 4]);

    // Φ5 = 2.5 and Φ4 = 6 are constant, so every upsample of them is too:
    // f4 = 8.5, channel 0 = 2.5, channel 1 = 8.5, channel 2 = 8.5 + s3.
    for y in 0..4 {
        for x in 0..4 {
            assert_eq!(fused.at3(0, y, x), 2.5);
            assert_eq!(fused.at3(1, y, x), 8.5);
            assert_eq!(fused.at3(2, y, x), 8.5 + s3.at3(0, y, x));
        }
    }
}

#[test]
fn ablation_rejects_empty_subset_and_keeps_shape_otherwise() {
    let cfg = small_cfg(8, StageSet::ALL, true);
    assert!(stage_ablation_mode(&cfg, StageSet::NONE).is_err());

    let s5_only = stage_ablation_mode(&cfg, StageSet { s3: false, s4: false, s5: true }).unwrap();
    let mut r = rng(3);
    let params = FusionParams::init(&s5_only, &mut r);
    let tape = Tape::new();
    let bundle = [
        tape.constant(rand_map(4, 8, 8, &mut r)),
        tape.constant(rand_map(6, 4, 4, &mut r)),
        tape.constant(rand_map(8, 2, 2, &mut r)),
    ];
    let vars = params.vars(&tape, false);
    let fused = fuse_stages(&tape, bundle, &vars, &s5_only).unwrap();
    assert_eq!(fused.map.shape(), vec![24, 8, 8]);
    assert!(fused.traces[0].is_empty());
    assert!(fused.traces[1].is_empty());
    assert_eq!(fused.traces[2].len(), 1);
}

#[test]
fn full_subset_ablation_matches_plain_config() {
    let cfg = small_cfg(8, StageSet::ALL, true);
    let adapted = stage_ablation_mode(&cfg, StageSet::ALL).unwrap();
    assert_eq!(adapted, cfg);
}

fn shift_map(map: &Tensor, dy: usize, dx: usize) -> Tensor {
    let (c, h, w) = (map.shape()[0], map.shape()[1], map.shape()[2]);
    Tensor::from_fn(&[c, h, w], |i| {
        let ch = i / (h * w);
        let y = (i / w) % h;
        let x = i % w;
        if y >= dy && x >= dx {
            map.at3(ch, y - dy, x - dx)
        } else {
            0.0
        }
    })
}

fn fused_pair(posenc: bool, seed: u64) -> (Tensor, Tensor) {
    let c = 8;
    let cfg = FusionConfig {
        stage_channels: [4, 4, 4],
        common_channels: c,
        attention: EaConfig::new(c, 2, 2, 1),
        ea_stages: StageSet::ALL,
        positional_encoding: posenc,
    };
    let mut r = rng(seed);
    let params = FusionParams::init(&cfg, &mut r);
    let s3 = rand_map(4, 32, 32, &mut r);
    let s4 = rand_map(4, 16, 16, &mut r);
    let s5 = rand_map(4, 8, 8, &mut r);
    let run = |m3: &Tensor, m4: &Tensor, m5: &Tensor| {
        let tape = Tape::new();
        let bundle =
            [tape.constant(m3.clone()), tape.constant(m4.clone()), tape.constant(m5.clone())];
        let vars = params.vars(&tape, false);
        fuse_stages(&tape, bundle, &vars, &cfg).unwrap().map.value()
    };
    let base = run(&s3, &s4, &s5);
    let shifted = run(&shift_map(&s3, 4, 4), &shift_map(&s4, 2, 2), &shift_map(&s5, 1, 1));
    (base, shifted)
}

#[test]
fn interior_outputs_translation_equivariant_without_encoding() {
    let (base, shifted) = fused_pair(false, 4);
    // A 16-pixel image shift moves the stages by 4/2/1 cells. Compare cells
    // far enough from every border that no clamped sample leaks in.
    let mut worst: f64 = 0.0;
    for c in 0..24 {
        for y in 12..16 {
            for x in 12..16 {
                worst = worst.max((shifted.at3(c, y + 4, x + 4) - base.at3(c, y, x)).abs());
            }
        }
    }
    assert!(worst <= 1e-12, "interior equivariance violated by {worst}");
}

#[test]
fn positional_encoding_breaks_translation_invariance() {
    let (base, shifted) = fused_pair(true, 4);
    let mut max_dev: f64 = 0.0;
    for c in 0..24 {
        for y in 12..16 {
            for x in 12..16 {
                max_dev = max_dev.max((shifted.at3(c, y + 4, x + 4) - base.at3(c, y, x)).abs());
            }
        }
    }
    assert!(max_dev > 1e-6, "encoding did not affect shifted outputs");
}

#[test]
fn passthrough_fusion_is_additive() {
    // Attention in passthrough and no encoding: the graph is linear.
    let c = 8;
    let cfg = FusionConfig {
        stage_channels: [4, 6, 8],
        common_channels: c,
        attention: EaConfig { layer_norm: false, ..EaConfig::new(c, 2, 2, 1) },
        ea_stages: StageSet::ALL,
        positional_encoding: false,
    };
    let mut r = rng(5);
    let mut params = FusionParams::init(&cfg, &mut r);
    for layers in &mut params.ea_layers {
        for layer in layers.iter_mut() {
            layer.w_out = Tensor::zeros(&[c, c]);
        }
    }
    let run = |m3: &Tensor, m4: &Tensor, m5: &Tensor| {
        let tape = Tape::new();
        let bundle =
            [tape.constant(m3.clone()), tape.constant(m4.clone()), tape.constant(m5.clone())];
        let vars = params.vars(&tape, false);
        fuse_stages(&tape, bundle, &vars, &cfg).unwrap().map.value()
    };
    for trial in 0..5 {
        let mut r = rng(100 + trial);
        let a3 = rand_map(4, 8, 8, &mut r);
        let a4 = rand_map(6, 4, 4, &mut r);
        let a5 = rand_map(8, 2, 2, &mut r);
        let b3 = rand_map(4, 8, 8, &mut r);
        let b4 = rand_map(6, 4, 4, &mut r);
        let b5 = rand_map(8, 2, 2, &mut r);
        let sum_inputs = run(
            &a3.add_tensor(&b3).unwrap(),
            &a4.add_tensor(&b4).unwrap(),
            &a5.add_tensor(&b5).unwrap(),
        );
        let sum_outputs = run(&a3, &a4, &a5).add_tensor(&run(&b3, &b4, &b5)).unwrap();
        assert!(
            sum_inputs.max_abs_diff(&sum_outputs) <= 1e-9,
            "additivity violated at trial {trial}"
        );
    }
}

#[test]
fn ea_layer_params_survive_flatten_roundtrip() {
    let cfg = EaConfig::new(8, 2, 3, 1);
    let params = EaLayerParams::init(&cfg, &mut rng(6));
    let rebuilt = EaLayerParams::from_tensors(&cfg, params.base_offsets.clone(), &params.flatten())
        .unwrap();
    assert_eq!(params, rebuilt);
}
