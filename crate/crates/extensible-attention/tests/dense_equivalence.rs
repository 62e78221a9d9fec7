//! When every grid location is an extensible point and the per-point
//! projections are shared, the sparse layer must reproduce full attention.

use extensible_attention::{
    dense_attention_oracle, ea_forward, DenseAttentionParams, EaConfig,
};
use numeric_core::{Tape, Tensor};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn run_equivalence(c: usize, heads: usize, h: usize, w: usize, seed: u64) -> f64 {
    let mut r = rng(seed);
    let base_cfg = EaConfig::new(c, heads, h * w, 1);
    let dense = DenseAttentionParams::init(&base_cfg, &mut r);
    let x = Tensor::from_fn(&[c, h, w], |_| r.gen_range(-1.0..1.0));

    let oracle = dense_attention_oracle(&x, &dense, &base_cfg).unwrap();

    let (ea_params, ea_cfg) = dense.to_equivalence_params(&base_cfg, h, w);
    let tape = Tape::new();
    let xv = tape.constant(x);
    let vars = ea_params.vars(&tape, false);
    let (out, trace) = ea_forward(&tape, xv, &vars, &ea_cfg).unwrap();
    assert!(trace.max_weight_sum_error() <= 1e-12);
    out.value().max_abs_diff(&oracle)
}

#[test]
fn one_by_one_map_is_trivially_equivalent() {
    assert!(run_equivalence(4, 2, 1, 1, 0) <= 1e-12);
}

#[test]
fn two_by_two_single_head_matches_hand_expansion() {
    // C = 2, M = 1, 2×2 map: the four-key softmax expanded with scalar loops.
    let c = 2;
    let (h, w) = (2, 2);
    let cfg = EaConfig { layer_norm: false, ..EaConfig::new(c, 1, h * w, 1) };
    let mut r = rng(11);
    let dense = DenseAttentionParams::init(&cfg, &mut r);
    let x = Tensor::from_fn(&[c, h, w], |_| r.gen_range(-1.0..1.0));

    let rows: Vec<[f64; 2]> = (0..4).map(|p| [x.data()[p], x.data()[4 + p]]).collect();
    let matv = |m: &Tensor, v: [f64; 2]| -> Vec<f64> {
        let (rk, ck) = (m.shape()[0], m.shape()[1]);
        assert_eq!(rk, 2);
        (0..ck).map(|j| v[0] * m.at2(0, j) + v[1] * m.at2(1, j)).collect()
    };
    let scale = 1.0 / (c as f64).sqrt(); // head_dim = 2
    let mut expect = vec![0.0; 8];
    for q in 0..4 {
        let qv = matv(&dense.w_query, rows[q]);
        let logits: Vec<f64> = (0..4)
            .map(|k| {
                let kv = matv(&dense.w_key[0], rows[k]);
                scale * (qv[0] * kv[0] + qv[1] * kv[1])
            })
            .collect();
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let exps: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
        let denom: f64 = exps.iter().sum();
        let mut head = [0.0; 2];
        for k in 0..4 {
            let vv = matv(&dense.w_value[0], rows[k]);
            head[0] += exps[k] / denom * vv[0];
            head[1] += exps[k] / denom * vv[1];
        }
        let proj = matv(&dense.w_out, [head[0], head[1]]);
        expect[q] = rows[q][0] + proj[0];
        expect[4 + q] = rows[q][1] + proj[1];
    }
    let expect = Tensor::new(vec![2, 2, 2], expect).unwrap();

    let oracle = dense_attention_oracle(&x, &dense, &cfg).unwrap();
    assert!(oracle.max_abs_diff(&expect) <= 1e-12);

    let (ea_params, ea_cfg) = dense.to_equivalence_params(&cfg, h, w);
    let tape = Tape::new();
    let xv = tape.constant(x);
    let vars = ea_params.vars(&tape, false);
    let (out, _) = ea_forward(&tape, xv, &vars, &ea_cfg).unwrap();
    assert!(out.value().max_abs_diff(&expect) <= 1e-12);
}

#[test]
fn random_maps_up_to_five_by_five_match_within_1e6() {
    // 20 random inputs across sizes and one or two heads.
    let mut worst: f64 = 0.0;
    for seed in 0..20 {
        let heads = if seed % 2 == 0 { 1 } else { 2 };
        let (h, w) = match seed % 5 {
            0 => (2, 2),
            1 => (3, 2),
            2 => (3, 3),
            3 => (4, 4),
            _ => (5, 5),
        };
        let err = run_equivalence(4, heads, h, w, 100 + seed as u64);
        worst = worst.max(err);
    }
    assert!(worst <= 1e-6, "worst deviation {worst}");
}

#[test]
fn oracle_refuses_wrong_point_count() {
    let cfg = EaConfig::new(4, 2, 3, 1); // 3 points on a 2×2 map
    let dense = DenseAttentionParams::init(&cfg, &mut rng(1));
    let x = Tensor::zeros(&[4, 2, 2]);
    assert!(dense_attention_oracle(&x, &dense, &cfg).is_err());
}

#[test]
fn full_grid_mode_refuses_wrong_point_count() {
    let cfg = EaConfig {
        offset_source: extensible_attention::OffsetSource::FullGrid,
        ..EaConfig::new(4, 2, 3, 1)
    };
    let params = extensible_attention::EaLayerParams::init(&cfg, &mut rng(2));
    let tape = Tape::new();
    let xv = tape.constant(Tensor::zeros(&[4, 2, 2]));
    let vars = params.vars(&tape, false);
    assert!(ea_forward(&tape, xv, &vars, &cfg).is_err());
}
