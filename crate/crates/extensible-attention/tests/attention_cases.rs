//! Behavioural cases for the extensible-attention layer and stack.

use extensible_attention::{
    ea_forward, predict_offsets, stack_forward, EaConfig, EaLayerParams,
};
use numeric_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_map(c: usize, h: usize, w: usize, rng: &mut ChaCha8Rng) -> Tensor {
    Tensor::from_fn(&[c, h, w], |_| rng.gen_range(-1.0..1.0))
}

/// Small random offset weights so sampling locations depend on the input.
fn randomize_offsets(params: &mut EaLayerParams, rng: &mut ChaCha8Rng) {
    for w in &mut params.w_offset {
        *w = Tensor::from_fn(&[w.shape()[0], 2], |_| rng.gen_range(-0.05..0.05));
    }
}

#[test]
fn predict_offsets_zero_weights_stay_home() {
    let cfg = EaConfig::new(4, 2, 3, 1);
    let params = EaLayerParams::init(&cfg, &mut rng(0));
    let x_q = Tensor::new(vec![4], vec![0.3, -0.7, 1.1, 0.2]).unwrap();
    for m in 0..2 {
        for (dy, dx) in predict_offsets(&x_q, &params, m) {
            assert_eq!((dy, dx), (0.0, 0.0));
        }
    }
}

#[test]
fn predict_offsets_basis_vector_reads_weight_row() {
    let cfg = EaConfig::new(3, 1, 2, 1);
    let mut params = EaLayerParams::init(&cfg, &mut rng(1));
    params.w_offset[0] =
        Tensor::new(vec![3, 2], vec![0.4, -0.9, 0.0, 0.0, 0.0, 0.0]).unwrap();
    let e1 = Tensor::new(vec![3], vec![1.0, 0.0, 0.0]).unwrap();
    let offsets = predict_offsets(&e1, &params, 0);
    assert_eq!(offsets[0], (0.4, -0.9));
    assert_eq!(offsets[1], (0.0, 0.0));
}

#[test]
fn single_point_softmax_weight_is_exactly_one() {
    let cfg = EaConfig::new(4, 2, 1, 1);
    let mut r = rng(2);
    let mut params = EaLayerParams::init(&cfg, &mut r);
    randomize_offsets(&mut params, &mut r);
    let x = rand_map(4, 3, 3, &mut r);
    let tape = Tape::new();
    let xv = tape.constant(x);
    let vars = params.vars(&tape, false);
    let (_, trace) = ea_forward(&tape, xv, &vars, &cfg).unwrap();
    for q in 0..trace.queries() {
        for m in 0..trace.heads {
            assert_eq!(trace.weight(q, m, 0), 1.0);
        }
    }
}

#[test]
fn single_point_output_matches_independent_arithmetic() {
    // N = 1: output = LN(x + W_out · concat_m(sampled_m W_value[m, 0])),
    // reproduced here with plain scalar loops.
    let cfg = EaConfig::new(2, 1, 1, 1);
    let mut r = rng(3);
    let mut params = EaLayerParams::init(&cfg, &mut r);
    params.base_offsets = Tensor::new(vec![1, 2], vec![0.6, -0.4]).unwrap();
    let (h, w) = (3, 3);
    let x = rand_map(2, h, w, &mut r);

    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = params.vars(&tape, false);
    let (out, _) = ea_forward(&tape, xv, &vars, &cfg).unwrap();
    let out = out.value();

    let bilinear = |c: usize, y: f64, xc: f64| -> f64 {
        let yc = y.clamp(0.0, (h - 1) as f64);
        let xcc = xc.clamp(0.0, (w - 1) as f64);
        let y0 = (yc.floor() as usize).min(h - 2);
        let x0 = (xcc.floor() as usize).min(w - 2);
        let (fy, fx) = (yc - y0 as f64, xcc - x0 as f64);
        (1.0 - fy) * (1.0 - fx) * x.at3(c, y0, x0)
            + (1.0 - fy) * fx * x.at3(c, y0, x0 + 1)
            + fy * (1.0 - fx) * x.at3(c, y0 + 1, x0)
            + fy * fx * x.at3(c, y0 + 1, x0 + 1)
    };
    for qy in 0..h {
        for qx in 0..w {
            let sy = qy as f64 + params.base_offsets.at2(0, 0);
            let sx = qx as f64 + params.base_offsets.at2(0, 1);
            let s = [bilinear(0, sy, sx), bilinear(1, sy, sx)];
            let v = [
                s[0] * params.w_value[0].at2(0, 0) + s[1] * params.w_value[0].at2(1, 0),
                s[0] * params.w_value[0].at2(0, 1) + s[1] * params.w_value[0].at2(1, 1),
            ];
            let proj = [
                v[0] * params.w_out.at2(0, 0) + v[1] * params.w_out.at2(1, 0),
                v[0] * params.w_out.at2(0, 1) + v[1] * params.w_out.at2(1, 1),
            ];
            let res = [x.at3(0, qy, qx) + proj[0], x.at3(1, qy, qx) + proj[1]];
            let mean = 0.5 * (res[0] + res[1]);
            let var = 0.5 * ((res[0] - mean).powi(2) + (res[1] - mean).powi(2));
            let istd = 1.0 / (var + 1e-6).sqrt();
            for c in 0..2 {
                let expect = params.ln_scale.data()[c] * ((res[c] - mean) * istd)
                    + params.ln_shift.data()[c];
                let got = out.at3(c, qy, qx);
                assert!(
                    (got - expect).abs() < 1e-12,
                    "query ({qy},{qx}) channel {c}: {got} vs {expect}"
                );
            }
        }
    }
}

#[test]
fn one_by_one_map_closed_form() {
    // 1×1 spatial map: every sampling location clamps onto the query itself.
    let cfg = EaConfig::new(2, 1, 1, 1);
    let mut r = rng(4);
    let params = {
        let mut p = EaLayerParams::init(&cfg, &mut r);
        p.w_value[0] = Tensor::new(vec![2, 2], vec![0.5, -0.1, 0.2, 0.3]).unwrap();
        p.w_out = Tensor::new(vec![2, 2], vec![1.1, 0.2, -0.4, 0.6]).unwrap();
        p.ln_scale = Tensor::new(vec![2], vec![1.2, 0.8]).unwrap();
        p.ln_shift = Tensor::new(vec![2], vec![0.1, -0.2]).unwrap();
        p
    };
    let x = Tensor::new(vec![2, 1, 1], vec![0.9, -0.4]).unwrap();
    let tape = Tape::new();
    let xv = tape.constant(x);
    let vars = params.vars(&tape, false);
    let (out, trace) = ea_forward(&tape, xv, &vars, &cfg).unwrap();
    assert_eq!(trace.weight(0, 0, 0), 1.0);

    let v: [f64; 2] = [0.9 * 0.5 + (-0.4) * 0.2, 0.9 * (-0.1) + (-0.4) * 0.3]; // [0.37, -0.21]
    let proj = [v[0] * 1.1 + v[1] * (-0.4), v[0] * 0.2 + v[1] * 0.6];
    let res = [0.9 + proj[0], -0.4 + proj[1]];
    let mean = 0.5 * (res[0] + res[1]);
    let var = 0.5 * ((res[0] - mean).powi(2) + (res[1] - mean).powi(2));
    let istd = 1.0 / (var + 1e-6).sqrt();
    let expect = [
        1.2 * (res[0] - mean) * istd + 0.1,
        0.8 * (res[1] - mean) * istd - 0.2,
    ];
    let got = out.value();
    assert!((got.data()[0] - expect[0]).abs() < 1e-12);
    assert!((got.data()[1] - expect[1]).abs() < 1e-12);
}

#[test]
fn zeroed_second_head_equals_masked_output_projection() {
    // Killing head 2 at the values equals killing it at the output rows.
    let cfg = EaConfig::new(4, 2, 2, 1);
    let mut r = rng(5);
    let mut base = EaLayerParams::init(&cfg, &mut r);
    randomize_offsets(&mut base, &mut r);
    let x = rand_map(4, 3, 3, &mut r);
    let hd = cfg.head_dim();

    let mut head2_zero = base.clone();
    for n in 0..cfg.points {
        head2_zero.w_value[cfg.points + n] = Tensor::zeros(&[4, hd]);
    }
    let mut out_masked = base.clone();
    out_masked.w_out = Tensor::from_fn(&[4, 4], |i| {
        let row = i / 4;
        if row >= hd {
            0.0
        } else {
            base.w_out.data()[i]
        }
    });

    let run = |p: &EaLayerParams| {
        let tape = Tape::new();
        let xv = tape.constant(x.clone());
        let vars = p.vars(&tape, false);
        ea_forward(&tape, xv, &vars, &cfg).unwrap().0.value()
    };
    let a = run(&head2_zero);
    let b = run(&out_masked);
    assert!(a.max_abs_diff(&b) <= 1e-15);
}

#[test]
fn per_query_head_weights_sum_to_one() {
    let cfg = EaConfig::new(8, 4, 3, 1);
    for seed in 0..40 {
        let mut r = rng(seed);
        let mut params = EaLayerParams::init(&cfg, &mut r);
        randomize_offsets(&mut params, &mut r);
        let x = rand_map(8, 4, 5, &mut r);
        let tape = Tape::new();
        let xv = tape.constant(x);
        let vars = params.vars(&tape, false);
        let (_, trace) = ea_forward(&tape, xv, &vars, &cfg).unwrap();
        assert!(trace.max_weight_sum_error() <= 1e-12);
    }
}

#[test]
fn stack_of_one_equals_single_layer() {
    let cfg = EaConfig { layers: 1, ..EaConfig::new(4, 2, 2, 1) };
    let mut r = rng(6);
    let mut params = EaLayerParams::init(&cfg, &mut r);
    randomize_offsets(&mut params, &mut r);
    let x = rand_map(4, 4, 4, &mut r);

    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = params.vars(&tape, false);
    let (single, _) = ea_forward(&tape, xv, &vars, &cfg).unwrap();

    let tape2 = Tape::new();
    let xv2 = tape2.constant(x);
    let vars2 = vec![params.vars(&tape2, false)];
    let (stacked, traces) = stack_forward(&tape2, xv2, &vars2, &cfg).unwrap();
    assert_eq!(traces.len(), 1);
    assert_eq!(single.value().data(), stacked.value().data());
}

#[test]
fn second_layer_with_zero_output_projection_is_layer_norm_of_first() {
    let cfg = EaConfig { layers: 2, ..EaConfig::new(4, 2, 2, 2) };
    let mut r = rng(7);
    let mut layer1 = EaLayerParams::init(&cfg, &mut r);
    randomize_offsets(&mut layer1, &mut r);
    let mut layer2 = EaLayerParams::init(&cfg, &mut r);
    layer2.w_out = Tensor::zeros(&[4, 4]);
    let x = rand_map(4, 4, 4, &mut r);

    let tape = Tape::new();
    let xv = tape.constant(x.clone());
    let vars = vec![layer1.vars(&tape, false), layer2.vars(&tape, false)];
    let (out, _) = stack_forward(&tape, xv, &vars, &cfg).unwrap();

    // Layer 1 alone, then the second layer's norm applied directly.
    let tape2 = Tape::new();
    let xv2 = tape2.constant(x);
    let l1 = layer1.vars(&tape2, false);
    let one_layer_cfg = EaConfig { layers: 1, ..cfg.clone() };
    let (y1, _) = ea_forward(&tape2, xv2, &l1, &one_layer_cfg).unwrap();
    let scale = tape2.constant(layer2.ln_scale.clone());
    let shift = tape2.constant(layer2.ln_shift.clone());
    let expect = y1
        .channels_to_rows()
        .unwrap()
        .layer_norm_rows(scale, shift, 1e-6)
        .unwrap()
        .rows_to_channels(4, 4)
        .unwrap();
    assert!(out.value().max_abs_diff(&expect.value()) <= 1e-15);
}

#[test]
fn zero_offsets_and_keys_make_output_local() {
    // With all offsets zero (learned and base) and zero key weights, each
    // output pixel is a function of its own input pixel only.
    let cfg = EaConfig::new(4, 2, 2, 1);
    let mut r = rng(8);
    let mut params = EaLayerParams::init(&cfg, &mut r);
    params.base_offsets = Tensor::zeros(&[cfg.heads * cfg.points, 2]);
    for k in &mut params.w_key {
        *k = Tensor::zeros(&[4, cfg.head_dim()]);
    }
    let x = rand_map(4, 4, 4, &mut r);
    let mut swapped = x.clone();
    // Swap pixels (0,0) and (3,3) in every channel.
    for c in 0..4 {
        let a = x.at3(c, 0, 0);
        let b = x.at3(c, 3, 3);
        let hw = 16;
        swapped.data_mut()[c * hw] = b;
        swapped.data_mut()[c * hw + 15] = a;
    }
    let run = |input: &Tensor| {
        let tape = Tape::new();
        let xv = tape.constant(input.clone());
        let vars = params.vars(&tape, false);
        ea_forward(&tape, xv, &vars, &cfg).unwrap().0.value()
    };
    let a = run(&x);
    let b = run(&swapped);
    // Pixel (1,1) saw none of the permuted content.
    for c in 0..4 {
        assert_eq!(a.at3(c, 1, 1), b.at3(c, 1, 1));
    }
    // The swapped pixels themselves did change.
    assert!((a.at3(0, 0, 0) - b.at3(0, 0, 0)).abs() > 1e-9);
}

#[test]
fn stack_rejects_wrong_layer_count() {
    let cfg = EaConfig { layers: 3, ..EaConfig::new(4, 2, 2, 3) };
    let params = EaLayerParams::init(&cfg, &mut rng(9));
    let tape = Tape::new();
    let xv = tape.constant(Tensor::zeros(&[4, 2, 2]));
    let vars = vec![params.vars(&tape, false)];
    assert!(stack_forward(&tape, xv, &vars, &cfg).is_err());
}

#[test]
fn config_validation_catches_bad_shapes() {
    assert!(EaConfig::new(6, 4, 2, 1).validate().is_err()); // 6 % 4 != 0
    assert!(EaConfig::new(8, 4, 0, 1).validate().is_err());
    assert!(EaConfig::new(8, 4, 2, 0).validate().is_err());
    assert!(EaConfig::new(8, 4, 2, 1).validate().is_ok());
}

#[test]
fn query_projection_source_ignores_sampled_content() {
    // In the literal projection mode, keys and values come from the query
    // feature itself, so remote pixels cannot influence a location even with
    // large offsets.
    let cfg = EaConfig {
        projection_source: extensible_attention::ProjectionSource::Query,
        ..EaConfig::new(4, 2, 2, 1)
    };
    let mut r = rng(10);
    let mut params = EaLayerParams::init(&cfg, &mut r);
    randomize_offsets(&mut params, &mut r);
    let x = rand_map(4, 4, 4, &mut r);
    let mut altered = x.clone();
    for c in 0..4 {
        altered.data_mut()[c * 16] += 10.0; // pixel (0,0)
    }
    let run = |input: &Tensor| {
        let tape = Tape::new();
        let xv = tape.constant(input.clone());
        let vars = params.vars(&tape, false);
        ea_forward(&tape, xv, &vars, &cfg).unwrap().0.value()
    };
    let a = run(&x);
    let b = run(&altered);
    for c in 0..4 {
        assert_eq!(a.at3(c, 2, 2), b.at3(c, 2, 2));
    }
}
