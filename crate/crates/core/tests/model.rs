#![allow(clippy::needless_range_loop)]

mod common;

use std::collections::BTreeMap;

use metatrain::model::{
    head_bias, head_weight, layer_param, Backbone, HeadSpec, ModelConfig, TaskHead, EMBEDDING,
    LM_HEAD, OUTPUT_NORM,
};
use metatrain::numcore::{forward_backward, Matrix, Tape};
use metatrain::TokenId;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn tiny_config(n_kv_heads: usize) -> ModelConfig {
    ModelConfig {
        d_model: 8,
        n_layers: 2,
        n_heads: 2,
        n_kv_heads,
        ffn_hidden: 32,
        vocab_size: 11,
        seq_len: 16,
        rope_theta: 10_000.0,
        norm_eps: 1e-6,
    }
}

fn random_tokens(rng: &mut impl Rng, len: usize, vocab: usize) -> Vec<TokenId> {
    (0..len)
        .map(|_| rng.random_range(0..vocab as TokenId))
        .collect()
}

// ---------- independent reference forward (plain loops, no tape) ----------

fn rms(x: &[f64], g: &[f64], eps: f64) -> Vec<f64> {
    let ms = x.iter().map(|v| v * v).sum::<f64>() / x.len() as f64;
    let s = 1.0 / (ms + eps).sqrt();
    x.iter().zip(g).map(|(a, b)| a * s * b).collect()
}

fn vecmat(x: &[f64], w: &Matrix) -> Vec<f64> {
    (0..w.cols())
        .map(|c| x.iter().enumerate().map(|(r, v)| v * w.get(r, c)).sum())
        .collect()
}

fn rope_vec(x: &mut [f64], head_dim: usize, theta: f64, pos: usize) {
    for h in 0..x.len() / head_dim {
        for j in 0..head_dim / 2 {
            let ang = pos as f64 * theta.powf(-2.0 * j as f64 / head_dim as f64);
            let (a, b) = (x[h * head_dim + 2 * j], x[h * head_dim + 2 * j + 1]);
            x[h * head_dim + 2 * j] = a * ang.cos() - b * ang.sin();
            x[h * head_dim + 2 * j + 1] = a * ang.sin() + b * ang.cos();
        }
    }
}

/// Textbook multi-head attention with K/V heads repeated per query group.
fn reference_logits(b: &Backbone, tokens: &[TokenId]) -> Vec<Vec<f64>> {
    let c = &b.config;
    let p = |n: &str| b.params.get(n).unwrap();
    let hd = c.head_dim();
    let group = c.n_heads / c.n_kv_heads;
    let mut xs: Vec<Vec<f64>> = tokens
        .iter()
        .map(|&t| p(EMBEDDING).row(t as usize).to_vec())
        .collect();
    for l in 0..c.n_layers {
        let lp = |s: &str| p(&layer_param(l, s)).clone();
        let g = lp("attention_norm.weight");
        let hs: Vec<Vec<f64>> = xs.iter().map(|x| rms(x, g.data(), c.norm_eps)).collect();
        let mut qs: Vec<Vec<f64>> = hs
            .iter()
            .map(|h| vecmat(h, &lp("attention.q_proj")))
            .collect();
        let mut ks: Vec<Vec<f64>> = hs
            .iter()
            .map(|h| vecmat(h, &lp("attention.k_proj")))
            .collect();
        let vs: Vec<Vec<f64>> = hs
            .iter()
            .map(|h| vecmat(h, &lp("attention.v_proj")))
            .collect();
        for (i, q) in qs.iter_mut().enumerate() {
            rope_vec(q, hd, c.rope_theta, i);
        }
        for (i, k) in ks.iter_mut().enumerate() {
            rope_vec(k, hd, c.rope_theta, i);
        }
        let mut outs = Vec::new();
        for i in 0..xs.len() {
            let mut cat = vec![0.0; c.n_heads * hd];
            for h in 0..c.n_heads {
                let kvh = h / group;
                let scores: Vec<f64> = (0..=i)
                    .map(|j| {
                        (0..hd)
                            .map(|e| qs[i][h * hd + e] * ks[j][kvh * hd + e])
                            .sum::<f64>()
                            / (hd as f64).sqrt()
                    })
                    .collect();
                let m = scores.iter().cloned().fold(f64::MIN, f64::max);
                let z: f64 = scores.iter().map(|s| (s - m).exp()).sum();
                for (j, s) in scores.iter().enumerate() {
                    let a = (s - m).exp() / z;
                    for e in 0..hd {
                        cat[h * hd + e] += a * vs[j][kvh * hd + e];
                    }
                }
            }
            outs.push(vecmat(&cat, &lp("attention.o_proj")));
        }
        for (x, o) in xs.iter_mut().zip(outs) {
            for (a, b) in x.iter_mut().zip(o) {
                *a += b;
            }
        }
        let g = lp("swiglu_norm.weight");
        for x in xs.iter_mut() {
            let h = rms(x, g.data(), c.norm_eps);
            let gate = vecmat(&h, &lp("swiglu.w_0"));
            let up = vecmat(&h, &lp("swiglu.w_1"));
            let act: Vec<f64> = gate
                .iter()
                .zip(&up)
                .map(|(g, u)| g / (1.0 + (-g).exp()) * u)
                .collect();
            let down = vecmat(&act, &lp("swiglu.w_2"));
            for (a, b) in x.iter_mut().zip(down) {
                *a += b;
            }
        }
    }
    xs.iter()
        .map(|x| vecmat(&rms(x, p(OUTPUT_NORM).data(), c.norm_eps), p(LM_HEAD)))
        .collect()
}

#[test]
fn forward_matches_reference_for_mha_and_gqa() {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for kv in [2, 1] {
        let b = Backbone::init(tiny_config(kv), &mut rng).unwrap();
        let tokens = random_tokens(&mut rng, 9, 11);
        let out = b.forward(&tokens).unwrap();
        let reference = reference_logits(&b, &tokens);
        for (i, row) in reference.iter().enumerate() {
            for (j, v) in row.iter().enumerate() {
                assert!((out.logits.get(i, j) - v).abs() < 1e-6, "kv={kv} pos {i}");
            }
        }
    }
}

#[test]
fn gqa_with_full_kv_heads_equals_multi_head() {
    // With n_kv_heads == n_heads every query head owns its K/V head.
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    let mut cfg = tiny_config(2);
    cfg.n_heads = 4;
    cfg.n_kv_heads = 4;
    let b = Backbone::init(cfg, &mut rng).unwrap();
    let tokens = random_tokens(&mut rng, 7, 11);
    let out = b.forward(&tokens).unwrap();
    let reference = reference_logits(&b, &tokens);
    for (i, row) in reference.iter().enumerate() {
        for (j, v) in row.iter().enumerate() {
            assert!((out.logits.get(i, j) - v).abs() < 1e-6);
        }
    }
}

#[test]
fn single_token_shape_and_overlong_error() {
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    let b = Backbone::init(tiny_config(1), &mut rng).unwrap();
    let out = b.forward(&[4]).unwrap();
    assert_eq!(out.logits.shape(), (1, 11));
    assert_eq!(out.hidden.shape(), (1, 8));
    assert!(b.forward(&[1; 17]).is_err());
    assert!(b.forward(&[11]).is_err());
    b.check_shapes().unwrap();
}

#[test]
fn changing_a_later_token_leaves_earlier_logits_bit_identical() {
    let mut rng = ChaCha8Rng::seed_from_u64(4);
    let b = Backbone::init(tiny_config(1), &mut rng).unwrap();
    let tokens = random_tokens(&mut rng, 12, 11);
    let base = b.forward(&tokens).unwrap();
    for t in 0..tokens.len() {
        let mut changed = tokens.clone();
        changed[t] = (changed[t] + 1) % 11;
        let out = b.forward(&changed).unwrap();
        for pos in 0..t {
            assert_eq!(base.logits.row(pos), out.logits.row(pos), "t={t} pos={pos}");
        }
        assert_ne!(base.logits.row(t), out.logits.row(t));
    }
}

#[test]
fn init_loss_on_random_tokens_is_near_ln_vocab() {
    let mut rng = ChaCha8Rng::seed_from_u64(5);
    let cfg = ModelConfig {
        d_model: 32,
        n_layers: 2,
        n_heads: 4,
        n_kv_heads: 2,
        ffn_hidden: 128,
        vocab_size: 500,
        seq_len: 33,
        ..ModelConfig::default()
    };
    let b = Backbone::init(cfg, &mut rng).unwrap();
    let mut total = 0.0;
    let mut count = 0;
    for _ in 0..8 {
        let toks = random_tokens(&mut rng, 33, 500);
        let out = b.forward(&toks[..32]).unwrap();
        for (i, &t) in toks[1..].iter().enumerate() {
            let (l, _) =
                metatrain::numcore::softmax_cross_entropy(out.logits.row(i), t as usize).unwrap();
            total += l;
            count += 1;
        }
    }
    let mean = total / count as f64;
    let ln_v = 500f64.ln();
    assert!(
        (mean - ln_v).abs() / ln_v < 0.05,
        "mean CE {mean} vs ln V {ln_v}"
    );
}

#[test]
fn attention_rows_are_causal_distributions() {
    let mut rng = ChaCha8Rng::seed_from_u64(6);
    let b = Backbone::init(tiny_config(1), &mut rng).unwrap();
    let tokens = random_tokens(&mut rng, 10, 11);
    let probs = b.attention_probabilities(&tokens).unwrap();
    assert_eq!(probs.len(), 2);
    for layer in &probs {
        assert_eq!(layer.len(), 2);
        for p in layer {
            assert_eq!(p.get(0, 0), 1.0);
            for t in 0..tokens.len() {
                let row = p.row(t);
                assert!((row.iter().sum::<f64>() - 1.0).abs() < 1e-6);
                assert!(row[t + 1..].iter().all(|&v| v == 0.0));
                let h: f64 = row.iter().filter(|&&a| a > 0.0).map(|a| -a * a.ln()).sum();
                assert!(h <= ((t + 1) as f64).ln() + 1e-12);
            }
        }
    }
}

#[test]
fn rotary_interaction_depends_only_on_offset() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    let hd = 8;
    let q = common::random_matrix(&mut rng, 1, hd);
    let k = common::random_matrix(&mut rng, 1, hd);
    let dot_at = |pq: usize, pk: usize| {
        let mut t = Tape::new();
        let qn = t.constant(q.clone());
        let kn = t.constant(k.clone());
        let qr = t.rope(qn, hd, 10_000.0, pq).unwrap();
        let kr = t.rope(kn, hd, 10_000.0, pk).unwrap();
        let s = t.matmul_t(qr, kr).unwrap();
        t.value(s).data()[0]
    };
    for delta in [0usize, 1, 3, 7] {
        let a = dot_at(2 + delta, 2);
        let b = dot_at(40 + delta, 40);
        let c = dot_at(1000 + delta, 1000);
        assert!(
            (a - b).abs() < 1e-5 && (a - c).abs() < 1e-5,
            "delta {delta}: {a} {b} {c}"
        );
    }
}

#[test]
fn rms_norm_output_has_unit_rms() {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let x = common::random_matrix(&mut rng, 6, 16).scaled(3.0);
    let mut t = Tape::new();
    let xn = t.constant(x);
    let g = t.constant(Matrix::filled(1, 16, 1.0));
    let y = t.rms_norm(xn, g, 1e-6).unwrap();
    for r in 0..6 {
        let row = t.value(y).row(r);
        let rms = (row.iter().map(|v| v * v).sum::<f64>() / 16.0).sqrt();
        assert!((rms - 1.0).abs() < 1e-5);
    }
}

fn ar_loss_on(b: &Backbone, params: &BTreeMap<String, Matrix>, seqs: &[Vec<TokenId>]) -> f64 {
    let mut bb = b.clone();
    for (n, m) in params {
        *bb.params.get_mut(n).unwrap() = m.clone();
    }
    let mut t = Tape::new();
    let bound = bb.params.bind_frozen(&mut t);
    let mut total = 0.0;
    for s in seqs {
        let nodes = bb
            .forward_on(&mut t, &bound, &s[..s.len() - 1], true)
            .unwrap();
        let targets: Vec<usize> = s[1..].iter().map(|&x| x as usize).collect();
        let l = t.cross_entropy(nodes.logits.unwrap(), &targets).unwrap();
        total += t.value(l).data()[0];
    }
    total / seqs.len() as f64
}

#[test]
fn end_to_end_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(9);
    for inst in 0..3 {
        let b = Backbone::init(tiny_config(1), &mut rng).unwrap();
        let seqs: Vec<Vec<TokenId>> = (0..2).map(|_| random_tokens(&mut rng, 7, 11)).collect();
        let mut t = Tape::new();
        let bound = b.params.bind(&mut t);
        let mut losses = Vec::new();
        for s in &seqs {
            let nodes = b.forward_on(&mut t, &bound, &s[..6], true).unwrap();
            let targets: Vec<usize> = s[1..].iter().map(|&x| x as usize).collect();
            losses.push(t.cross_entropy(nodes.logits.unwrap(), &targets).unwrap());
        }
        let sum = t.add(losses[0], losses[1]).unwrap();
        let loss = t.scale(sum, 0.5);
        let grads = forward_backward(&t, loss).unwrap();
        let params: BTreeMap<String, Matrix> = b
            .params
            .iter()
            .map(|(n, m)| (n.clone(), m.clone()))
            .collect();
        let mut f = |p: &BTreeMap<String, Matrix>| ar_loss_on(&b, p, &seqs);
        let (err, at) = common::max_fd_error(&params, &grads, 40, inst, 1e-4, &mut f);
        assert!(err < 1e-3, "instance {inst}: {err:e} at {at}");
    }
}

fn small_head(rng: &mut ChaCha8Rng) -> TaskHead {
    TaskHead::init(
        HeadSpec {
            input_dim: 8,
            hidden_dim: 16,
            n_layers: 4,
            n_classes: 5,
            dropout: 0.1,
        },
        rng,
    )
    .unwrap()
}

#[test]
fn head_eval_is_deterministic_and_dropout_only_in_train() {
    let mut rng = ChaCha8Rng::seed_from_u64(10);
    let head = small_head(&mut rng);
    let h: Vec<f64> = (0..8).map(|i| i as f64 * 0.1 - 0.3).collect();
    let a = head.forward(&h, false, &mut rng).unwrap();
    let b = head.forward(&h, false, &mut rng).unwrap();
    assert_eq!(a, b);
    assert_eq!(a.len(), 5);
    let c = head.forward(&h, true, &mut rng).unwrap();
    let d = head.forward(&h, true, &mut rng).unwrap();
    assert!(c != a || d != a, "dropout never changed the output");
    assert!(head.forward(&h[..7], false, &mut rng).is_err());
}

#[test]
fn zero_hidden_gives_bias_composition() {
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut head = small_head(&mut rng);
    for i in 0..4 {
        let b = head.params.get_mut(&head_bias(i)).unwrap();
        for v in b.data_mut() {
            *v = rng.random_range(-1.0..1.0);
        }
    }
    let logits = head.forward(&[0.0; 8], false, &mut rng).unwrap();
    // silu(b0) W1 + b1 -> silu -> W2 + b2 -> silu -> W3 + b3
    let silu = |v: f64| v / (1.0 + (-v).exp());
    let mut x: Vec<f64> = head
        .params
        .get(&head_bias(0))
        .unwrap()
        .data()
        .iter()
        .map(|&v| silu(v))
        .collect();
    for i in 1..4 {
        let w = head.params.get(&head_weight(i)).unwrap();
        let b = head.params.get(&head_bias(i)).unwrap();
        let mut y = vecmat(&x, w);
        for (a, bb) in y.iter_mut().zip(b.data()) {
            *a += bb;
        }
        x = if i < 3 {
            y.into_iter().map(silu).collect()
        } else {
            y
        };
    }
    for (a, b) in logits.iter().zip(&x) {
        assert!((a - b).abs() < 1e-12);
    }
}

#[test]
fn head_cross_entropy_gradient_matches_finite_differences() {
    let mut rng = ChaCha8Rng::seed_from_u64(12);
    let head = small_head(&mut rng);
    let hidden = common::random_matrix(&mut rng, 6, 8);
    let labels = [0usize, 1, 4, 2, 2, 3];
    let mut t = Tape::new();
    let bound = head.params.bind(&mut t);
    let x = t.constant(hidden.clone());
    let z = head
        .forward_on::<ChaCha8Rng>(&mut t, &bound, x, None)
        .unwrap();
    let l = t.cross_entropy(z, &labels).unwrap();
    let grads = forward_backward(&t, l).unwrap();
    let params: BTreeMap<String, Matrix> = head
        .params
        .iter()
        .map(|(n, m)| (n.clone(), m.clone()))
        .collect();
    let mut f = |p: &BTreeMap<String, Matrix>| {
        let mut h = head.clone();
        for (n, m) in p {
            *h.params.get_mut(n).unwrap() = m.clone();
        }
        let mut t = Tape::new();
        let bound = h.params.bind_frozen(&mut t);
        let x = t.constant(hidden.clone());
        let z = h.forward_on::<ChaCha8Rng>(&mut t, &bound, x, None).unwrap();
        let l = t.cross_entropy(z, &labels).unwrap();
        t.value(l).data()[0]
    };
    let (err, at) = common::max_fd_error(&params, &grads, 60, 0, 1e-4, &mut f);
    assert!(err < 1e-4, "{err:e} at {at}");
}
