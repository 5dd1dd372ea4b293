use rand::Rng;

use super::*;
use crate::autodiff::{Tape, Tensor};
use crate::data::MaskMatrix;
use crate::error::Error;
use crate::rng::seeded;

fn cfg(dims: Vec<usize>, d_e: usize, heads: usize) -> ModelConfig {
    ModelConfig {
        d_e,
        heads,
        mlp_hidden: 6,
        ..ModelConfig::new(dims)
    }
}

fn rand_tensor(rng: &mut crate::rng::Rng, shape: &[usize]) -> Tensor {
    let n = shape.iter().product();
    Tensor::new(shape.to_vec(), (0..n).map(|_| rng.gen_range(-1.0..1.0)).collect()).unwrap()
}

/// Random non-trivial parameters (non-zero biases, non-unit norms).
fn jitter(state: &mut ModelState, seed: u64) {
    let mut rng = seeded(seed);
    for p in state.params_mut() {
        for v in p.data_mut() {
            *v += rng.gen_range(-0.3..0.3);
        }
    }
}

fn plain_matmul(a: &[f64], b: &[f64], p: usize, q: usize, r: usize) -> Vec<f64> {
    let mut out = vec![0.0; p * r];
    for i in 0..p {
        for k in 0..q {
            for j in 0..r {
                out[i * r + j] += a[i * q + k] * b[k * r + j];
            }
        }
    }
    out
}

#[test]
fn extractor_zero_and_identity() {
    let c = cfg(vec![4, 4], 4, 2);
    let mut s = ModelState::init(&c, 0).unwrap();
    for v in 0..2 {
        s.param_mut(&format!("extractor.{v}.weight")).unwrap().data_mut().fill(0.0);
    }
    let x = vec![
        Tensor::from_rows(&[[0.5, 1.0, 2.0, 0.0], [3.0, 0.1, 0.2, 0.3]]),
        Tensor::from_rows(&[[1.0, 2.0, 3.0, 4.0], [0.0, 0.0, 1.0, 0.0]]),
    ];
    let run = |s: &ModelState| {
        let mut t = Tape::new();
        let p = s.bind(&mut t, false);
        let xs: Vec<_> = x.iter().map(|v| t.constant(v.clone())).collect();
        let h = extract_low_level(&mut t, &p, s, &xs).unwrap();
        t.value(h).clone()
    };
    assert!(run(&s).data().iter().all(|&v| v == 0.0));

    for v in 0..2 {
        let w = s.param_mut(&format!("extractor.{v}.weight")).unwrap();
        for i in 0..4 {
            w.data_mut()[i * 4 + i] = 1.0;
        }
    }
    let h = run(&s);
    for i in 0..2 {
        assert_eq!(h.row(i * 2), x[0].row(i));
        assert_eq!(h.row(i * 2 + 1), x[1].row(i));
    }
}

#[test]
fn extractor_slices_are_view_local() {
    let c = cfg(vec![3, 5], 4, 2);
    let mut s = ModelState::init(&c, 1).unwrap();
    jitter(&mut s, 2);
    let mut rng = seeded(3);
    let x1 = rand_tensor(&mut rng, &[4, 3]);
    let x2 = rand_tensor(&mut rng, &[4, 5]);
    let x2b = rand_tensor(&mut rng, &[4, 5]);
    let run = |b: &Tensor| {
        let mut t = Tape::new();
        let p = s.bind(&mut t, false);
        let xs = [t.constant(x1.clone()), t.constant(b.clone())];
        let h = extract_low_level(&mut t, &p, &s, &xs).unwrap();
        t.value(h).clone()
    };
    let (a, b) = (run(&x2), run(&x2b));
    for i in 0..4 {
        assert_eq!(a.row(i * 2), b.row(i * 2));
        assert_ne!(a.row(i * 2 + 1), b.row(i * 2 + 1));
    }
}

/// Direct per-head evaluation of masked attention for one sample.
fn attention_oracle(s: &ModelState, x: &Tensor, w: Option<&[u8]>) -> Vec<f64> {
    let c = s.config();
    let (m, d_e, d_h) = (c.m(), c.d_e, c.head_dim());
    let mut out = vec![0.0; m * d_e];
    for t in 0..c.heads {
        let wq = s.param(&format!("encoder.0.attn.{t}.query")).unwrap().data();
        let wk = s.param(&format!("encoder.0.attn.{t}.key")).unwrap().data();
        let wv = s.param(&format!("encoder.0.attn.{t}.value")).unwrap().data();
        let q = plain_matmul(x.data(), wq, m, d_e, d_h);
        let k = plain_matmul(x.data(), wk, m, d_e, d_h);
        let v = plain_matmul(x.data(), wv, m, d_e, d_h);
        for r in 0..m {
            let mut logits: Vec<f64> = (0..m)
                .map(|cc| (0..d_h).map(|e| q[r * d_h + e] * k[cc * d_h + e]).sum::<f64>() / (d_h as f64).sqrt())
                .collect();
            if let Some(w) = w {
                for cc in 0..m {
                    if w[r] * w[cc] == 0 {
                        logits[cc] = -1e9;
                    }
                }
            }
            let mx = logits.iter().cloned().fold(f64::MIN, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - mx).exp()).collect();
            let tot: f64 = e.iter().sum();
            for cc in 0..m {
                for j in 0..d_h {
                    out[r * d_e + t * d_h + j] += e[cc] / tot * v[cc * d_h + j];
                }
            }
        }
    }
    out
}

#[test]
fn attention_single_view_returns_values() {
    let c = cfg(vec![3], 4, 2);
    let s = ModelState::init(&c, 4).unwrap();
    let x = Tensor::from_rows(&[[0.3, -0.2, 0.8, 0.1]]);
    let a = s.cross_view_attention(0, &x, None).unwrap();
    let mut v = Vec::new();
    for t in 0..2 {
        let wv = s.param(&format!("encoder.0.attn.{t}.value")).unwrap().data();
        v.extend(plain_matmul(x.data(), wv, 1, 4, 2));
    }
    for (got, want) in a.data().iter().zip(&v) {
        assert!((got - want).abs() < 1e-15);
    }
}

#[test]
fn attention_single_available_view_sees_itself() {
    let c = cfg(vec![2, 2, 2], 4, 2);
    let s = ModelState::init(&c, 5).unwrap();
    let mut rng = seeded(6);
    let x = rand_tensor(&mut rng, &[3, 4]);
    let a = s.cross_view_attention(0, &x, Some(&[1, 0, 0])).unwrap();
    let mut v = Vec::new();
    for t in 0..2 {
        let wv = s.param(&format!("encoder.0.attn.{t}.value")).unwrap().data();
        v.push(plain_matmul(x.row(0), wv, 1, 4, 2));
    }
    let own: Vec<f64> = v.concat();
    for (g, e) in a.row(0).iter().zip(&own) {
        assert!((g - e).abs() < 1e-15);
    }
    assert!(matches!(
        s.cross_view_attention(0, &x, Some(&[0, 0, 0])),
        Err(Error::InvalidMask(_))
    ));
}

#[test]
fn attention_matches_direct_formula() {
    let c = cfg(vec![2, 3, 4], 6, 3);
    let mut s = ModelState::init(&c, 7).unwrap();
    jitter(&mut s, 8);
    let mut rng = seeded(9);
    let x = rand_tensor(&mut rng, &[3, 6]);
    for w in [None, Some(&[1u8, 0, 1][..]), Some(&[0u8, 1, 1][..])] {
        let got = s.cross_view_attention(0, &x, w).unwrap();
        let want = attention_oracle(&s, &x, w);
        for (g, e) in got.data().iter().zip(&want) {
            assert!((g - e).abs() < 1e-12, "{g} vs {e}");
        }
    }
}

fn toy() -> (ModelState, Vec<Tensor>, MaskMatrix) {
    let c = cfg(vec![3, 5, 2], 8, 2);
    let mut s = ModelState::init(&c, 10).unwrap();
    jitter(&mut s, 11);
    let mut rng = seeded(12);
    let views = vec![
        rand_tensor(&mut rng, &[5, 3]),
        rand_tensor(&mut rng, &[5, 5]),
        rand_tensor(&mut rng, &[5, 2]),
    ];
    let mask = MaskMatrix::new(5, 3, vec![1, 0, 1, 0, 1, 1, 1, 1, 1, 0, 0, 1, 1, 1, 0]).unwrap();
    (s, views, mask)
}

#[test]
fn encode_is_deterministic_and_per_sample() {
    let (s, views, mask) = toy();
    let full = s.infer(&views, Stage::Recovery, Some(&mask), 64).unwrap();
    let again = s.infer(&views, Stage::Recovery, Some(&mask), 64).unwrap();
    assert_eq!(full.z, again.z);
    let single = s.infer(&views, Stage::Recovery, Some(&mask), 1).unwrap();
    for r in 0..full.z.rows() {
        for (a, b) in full.z.row(r).iter().zip(single.z.row(r)) {
            assert!((a - b).abs() < 1e-12);
        }
    }
}

#[test]
fn masked_views_cannot_reach_available_embeddings() {
    let (s, views, mask) = toy();
    let base = s.infer(&views, Stage::Recovery, Some(&mask), 64).unwrap();
    let mut rng = seeded(13);
    let mut noisy = views.clone();
    for (v, x) in noisy.iter_mut().enumerate() {
        for i in 0..5 {
            if !mask.get(i, v) {
                for e in x.row_mut(i) {
                    *e += 10.0 * rng.gen_range(-1.0..1.0);
                }
            }
        }
    }
    let pert = s.infer(&noisy, Stage::Recovery, Some(&mask), 64).unwrap();
    for i in 0..5 {
        for v in 0..3 {
            if mask.get(i, v) {
                let r = i * 3 + v;
                let diff = base.z.row(r).iter().zip(pert.z.row(r)).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
                assert!(diff < 1e-12);
            }
        }
    }
    assert_eq!(base.fused, pert.fused);
}

#[test]
fn fuse_cases() {
    let mut t = Tape::new();
    let z = t.constant(Tensor::from_rows(&[[1.0, 3.0], [3.0, 5.0]]));
    let both = MaskMatrix::ones(1, 2);
    let f = fuse(&mut t, z, 2, Some(&both)).unwrap();
    assert_eq!(t.value(f).data(), &[2.0, 4.0]);
    let first = MaskMatrix::new(1, 2, vec![1, 0]).unwrap();
    let f = fuse(&mut t, z, 2, Some(&first)).unwrap();
    assert_eq!(t.value(f).data(), &[1.0, 3.0]);
    let f2 = fuse(&mut t, z, 2, None).unwrap();
    let f1 = fuse(&mut t, z, 2, Some(&both)).unwrap();
    assert_eq!(t.value(f2).data(), t.value(f1).data());

    // m = 3 mixed mask against the weighted average formula
    let mut rng = seeded(14);
    let zt = rand_tensor(&mut rng, &[4 * 3, 5]);
    let mask = MaskMatrix::new(4, 3, vec![1, 0, 1, 0, 1, 0, 1, 1, 1, 0, 0, 1]).unwrap();
    let z = t.constant(zt.clone());
    let f = fuse(&mut t, z, 3, Some(&mask)).unwrap();
    for i in 0..4 {
        let tot: f64 = (0..3).map(|v| mask.weight(i, v)).sum();
        for e in 0..5 {
            let want: f64 = (0..3).map(|v| zt.get2(i * 3 + v, e) * mask.weight(i, v)).sum::<f64>() / tot;
            assert!((t.value(f).get2(i, e) - want).abs() < 1e-15);
        }
    }
}

#[test]
fn decode_shapes_and_zero_block() {
    let c = cfg(vec![3, 5], 4, 2);
    let mut s = ModelState::init(&c, 15).unwrap();
    let names: Vec<String> = s.names().to_vec();
    for name in names.iter().filter(|n| n.starts_with("decoder.") && !n.contains("gamma")) {
        s.param_mut(name).unwrap().data_mut().fill(0.0);
    }
    jitter_heads(&mut s);
    let fused = Tensor::from_rows(&[[0.1, 0.7, -0.4, 0.2], [1.0, 1.0, 1.0, 1.0], [0.1, 0.7, -0.4, 0.2]]);
    let mut t = Tape::new();
    let p = s.bind(&mut t, false);
    let zf = t.constant(fused.clone());
    let out = decode(&mut t, &p, &s, zf).unwrap();
    assert_eq!(t.value(out[0]).shape(), &[3, 3]);
    assert_eq!(t.value(out[1]).shape(), &[3, 5]);
    assert_eq!(t.value(out[0]).row(0), t.value(out[0]).row(2));

    // zero weights: attention and MLP add nothing, so each token is
    // standardised twice (gamma = 1, beta = 0) before the head
    let eps = c.ln_eps;
    let stdz = |r: &[f64]| -> Vec<f64> {
        let mu = r.iter().sum::<f64>() / r.len() as f64;
        let var = r.iter().map(|x| (x - mu).powi(2)).sum::<f64>() / r.len() as f64;
        r.iter().map(|x| (x - mu) / (var + eps).sqrt()).collect()
    };
    for v in 0..2 {
        let w = s.param(&format!("head.{v}.weight")).unwrap();
        let b = s.param(&format!("head.{v}.bias")).unwrap();
        let d = c.dims[v];
        for i in 0..3 {
            let h = stdz(&stdz(fused.row(i)));
            let want: Vec<f64> = (0..d)
                .map(|j| (0..4).map(|k| h[k] * w.get2(k, j)).sum::<f64>() + b.data()[j])
                .collect();
            for (g, e) in t.value(out[v]).row(i).iter().zip(&want) {
                assert!((g - e).abs() < 1e-12);
            }
        }
    }
}

fn jitter_heads(s: &mut ModelState) {
    for v in 0..2 {
        let b = s.param_mut(&format!("head.{v}.bias")).unwrap();
        for (k, x) in b.data_mut().iter_mut().enumerate() {
            *x = 0.1 * k as f64 - 0.2;
        }
    }
}

#[test]
fn init_contract() {
    let c = cfg(vec![3, 5], 8, 2);
    assert_eq!(ModelState::init(&c, 3).unwrap(), ModelState::init(&c, 3).unwrap());
    let s = ModelState::init(&c, 3).unwrap();
    for (name, p) in s.names().iter().zip(s.params()) {
        if name.ends_with(".bias") || name.ends_with(".beta") {
            assert!(p.data().iter().all(|&x| x == 0.0), "{name}");
        }
        if name.ends_with(".gamma") {
            assert!(p.data().iter().all(|&x| x == 1.0), "{name}");
        }
    }
    assert!(matches!(ModelState::init(&cfg(vec![3], 6, 4), 0), Err(Error::Config(_))));
}

#[test]
fn init_variance() {
    let c = ModelConfig {
        d_e: 512,
        heads: 1,
        mlp_hidden: 1,
        ..ModelConfig::new(vec![512])
    };
    let s = ModelState::init(&c, 21).unwrap();
    let w = s.param("extractor.0.weight").unwrap().data();
    let mean = w.iter().sum::<f64>() / w.len() as f64;
    let var = w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / w.len() as f64;
    let want = 2.0 / 1024.0;
    assert!((var - want).abs() < 0.2 * want, "{var} vs {want}");
}

#[test]
fn parameter_count_by_hand() {
    let c = ModelConfig {
        d_e: 8,
        heads: 2,
        mlp_hidden: 16,
        ..ModelConfig::new(vec![3, 5])
    };
    let s = ModelState::init(&c, 0).unwrap();
    let extractors = (3 * 8 + 8) + (5 * 8 + 8);
    let attn = 3 * 2 * (8 * 4) + (8 * 8 + 8);
    let norms = 2 * (8 + 8);
    let mlp = (8 * 16 + 16) + (16 * 8 + 8);
    let heads = (8 * 3 + 3) + (8 * 5 + 5);
    assert_eq!(s.parameter_count(), extractors + 2 * (attn + norms + mlp) + heads);
    assert_eq!(s.parameter_count(), 1304);
}

#[test]
fn checkpoint_round_trip() {
    let (s, _, _) = toy();
    let dir = tempfile::tempdir().unwrap();
    let p = dir.path().join("model.json");
    s.save(&p).unwrap();
    assert_eq!(ModelState::load(&p).unwrap(), s);
}
