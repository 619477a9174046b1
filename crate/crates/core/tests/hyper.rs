//! Hyper-network generation, modulation and attention against loop oracles.

use hyperweather::blocks::{BlockSpec, FeedForward};
use hyperweather::hyper::{film, gen_film_params, split_film, HyperBank, HyperMlp, SlotInit};
use hyperweather::nn::{msa, Activation, Ctx};
use hyperweather::params::{Builder, ParamGroup, ParamStore, Slot};
use hyperweather::tensor::{Tape, Tensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn gelu(x: f64) -> f64 {
    let c = (2.0 / std::f64::consts::PI).sqrt();
    0.5 * x * (1.0 + (c * (x + 0.044715 * x * x * x)).tanh())
}

fn relu(x: f64) -> f64 {
    x.max(0.0)
}

/// `σ(v·W1 + b1)·W2 + b2` with explicit sums.
fn generator_oracle(store: &ParamStore<f64>, mlp: &HyperMlp, v: &[f64], act: fn(f64) -> f64) -> Vec<f64> {
    let (w1, b1, w2, b2) = (store.get(mlp.w1), store.get(mlp.b1), store.get(mlp.w2), store.get(mlp.b2));
    let (d, hdim, out) = (mlp.input_dim, mlp.hidden, mlp.output_len());
    let hidden: Vec<f64> = (0..hdim)
        .map(|j| act((0..d).map(|i| v[i] * w1.data()[i * hdim + j]).sum::<f64>() + b1.data()[j]))
        .collect();
    (0..out)
        .map(|k| (0..hdim).map(|j| hidden[j] * w2.data()[j * out + k]).sum::<f64>() + b2.data()[k])
        .collect()
}

fn build_mlp(store: &mut ParamStore<f64>, seed: u64, d: usize, c: usize, act: Activation) -> HyperMlp {
    let mut b = Builder::new(store, seed, ParamGroup::Backbone);
    HyperMlp::build(&mut b, "film", d, &[2 * c], act, &SlotInit::film(c)).unwrap()
}

#[test]
fn generator_is_an_affine_composition() {
    let (d, c) = (8, 4);
    for (act, f) in [(Activation::Gelu, gelu as fn(f64) -> f64), (Activation::Relu, relu)] {
        let mut store = ParamStore::<f64>::new();
        let mlp = build_mlp(&mut store, 42, d, c, act);
        assert_eq!(mlp.hidden, 2 * d);
        for s in 0..20 {
            let v = rand_tensor(&[d], 1000 + s);
            let tape = Tape::new();
            let p = store.bind(&tape, |_| false).unwrap();
            let got = mlp.generate(&p, tape.constant(v.clone()).unwrap()).unwrap();
            let want = generator_oracle(&store, &mlp, v.data(), f);
            assert_eq!(got.shape(), vec![2 * c]);
            for (g, w) in got.value().data().iter().zip(&want) {
                assert!((g - w).abs() < 1e-12, "{g} vs {w}");
            }
        }
    }
}

#[test]
fn batched_generation_matches_single_vectors() {
    let (d, c) = (8, 4);
    let mut store = ParamStore::<f64>::new();
    let mlp = build_mlp(&mut store, 42, d, c, Activation::Gelu);
    let vs = rand_tensor(&[3, d], 7);
    let tape = Tape::new();
    let p = store.bind(&tape, |_| false).unwrap();
    let rows = mlp.generate_rows(&p, tape.constant(vs.clone()).unwrap()).unwrap().value();
    for r in 0..3 {
        let want = generator_oracle(&store, &mlp, &vs.data()[r * d..(r + 1) * d], gelu);
        for (k, w) in want.iter().enumerate() {
            assert!((rows.at(&[r, k]) - w).abs() < 1e-12);
        }
    }
}

#[test]
fn zero_output_weights_give_the_initial_identity_modulation() {
    let (d, c) = (8, 4);
    let mut store = ParamStore::<f64>::new();
    let mlp = build_mlp(&mut store, 42, d, c, Activation::Gelu);
    store.set(mlp.w2, Tensor::zeros(&[2 * d, 2 * c])).unwrap();
    let x = rand_tensor(&[c, 3, 5], 3);
    for s in 0..5 {
        let tape = Tape::new();
        let p = store.bind(&tape, |_| false).unwrap();
        let v = tape.constant(rand_tensor(&[d], s)).unwrap();
        let params = gen_film_params(&mlp, &p, v, c).unwrap();
        assert_eq!(*params.gamma.value(), Tensor::ones(&[c]));
        assert_eq!(*params.beta.value(), Tensor::zeros(&[c]));
        let y = film(tape.constant(x.clone()).unwrap(), &params).unwrap();
        assert_eq!(*y.value(), x);
    }
}

#[test]
fn film_is_a_per_channel_affine_map() {
    let (c, h, w) = (3, 4, 2);
    let x = rand_tensor(&[c, h, w], 1);
    let raw = rand_tensor(&[2 * c], 2);
    let tape = Tape::new();
    let params = split_film(tape.constant(raw.clone()).unwrap()).unwrap();
    let y = film(tape.constant(x.clone()).unwrap(), &params).unwrap().value();
    for ch in 0..c {
        for i in 0..h {
            for j in 0..w {
                let want = raw.data()[ch] * x.at(&[ch, i, j]) + raw.data()[c + ch];
                assert!((y.at(&[ch, i, j]) - want).abs() < 1e-15);
            }
        }
    }
    assert!(split_film(tape.constant(Tensor::<f64>::zeros(&[5])).unwrap()).is_err());
}

#[test]
fn generator_shape_contract() {
    let mut store = ParamStore::<f64>::new();
    let mlp = build_mlp(&mut store, 1, 8, 4, Activation::Gelu);
    let tape = Tape::new();
    let p = store.bind(&tape, |_| false).unwrap();
    let v = tape.constant(rand_tensor(&[7], 0)).unwrap();
    assert!(mlp.generate(&p, v).is_err());
    let v = tape.constant(rand_tensor(&[8], 0)).unwrap();
    assert!(gen_film_params(&mlp, &p, v, 3).is_err());
    let mut b = Builder::new(&mut store, 1, ParamGroup::Backbone);
    assert!(HyperMlp::build(&mut b, "bad", 8, &[5], Activation::Gelu, &SlotInit::film(2)).is_err());
}

/// With centered delta kernels the depthwise stage is the identity, so the
/// feed-forward layer reduces to `fc2(σ(fc1(x)))`.
#[test]
fn delta_kernel_feed_forward_is_a_plain_mlp() {
    let spec = BlockSpec {
        channels: 4,
        heads: 1,
        sr: 1,
        mlp_ratio: 2,
        adapt_global: false,
        adapt_local: false,
        activation: Activation::Gelu,
    };
    let mut store = ParamStore::<f64>::new();
    let mut bank = HyperBank::new(4, Activation::Gelu);
    let ffn = {
        let mut b = Builder::new(&mut store, 3, ParamGroup::Backbone);
        FeedForward::build(&mut b, &mut bank, "ffn", &spec).unwrap()
    };
    let Slot::Fixed(dwc) = ffn.dwc else {
        panic!("local adaptivity is off");
    };
    let delta = SlotInit::delta_kernel(ffn.hidden, 3).base;
    store.set(dwc, Tensor::from_f64(&[ffn.hidden, 1, 3, 3], &delta).unwrap()).unwrap();
    let x = rand_tensor(&[12, 4], 5);
    let tape = Tape::new();
    let p = store.bind(&tape, |_| false).unwrap();
    let ctx = Ctx {
        bound: &p,
        generated: &[],
    };
    let xv = tape.constant(x).unwrap();
    let got = ffn.forward(&ctx, xv, (3, 4)).unwrap().value();
    let plain = ffn.fc2.forward(&p, ffn.fc1.forward(&p, xv).unwrap().gelu().unwrap()).unwrap().value();
    assert!(got.max_abs_diff(&plain) < 1e-12);
}

/// Multi-head attention with explicit loops over heads, queries and keys.
fn attention_oracle(q: &Tensor<f64>, kv: &Tensor<f64>, w: [&Tensor<f64>; 3], heads: usize) -> Vec<Vec<f64>> {
    let proj = |x: &Tensor<f64>, w: &Tensor<f64>| -> Vec<Vec<f64>> {
        let (n, cin, d) = (x.shape()[0], x.shape()[1], w.shape()[1]);
        (0..n)
            .map(|r| (0..d).map(|j| (0..cin).map(|i| x.at(&[r, i]) * w.at(&[i, j])).sum()).collect())
            .collect()
    };
    let (qp, kp, vp) = (proj(q, w[0]), proj(kv, w[1]), proj(kv, w[2]));
    let d = qp[0].len();
    let dh = d / heads;
    let mut out = vec![vec![0.0; d]; qp.len()];
    for h in 0..heads {
        let cols = h * dh..(h + 1) * dh;
        for (i, qi) in qp.iter().enumerate() {
            let logits: Vec<f64> = kp
                .iter()
                .map(|kj| cols.clone().map(|c| qi[c] * kj[c]).sum::<f64>() / (dh as f64).sqrt())
                .collect();
            let max = logits.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
            let e: Vec<f64> = logits.iter().map(|l| (l - max).exp()).collect();
            let z: f64 = e.iter().sum();
            for c in cols.clone() {
                out[i][c] = e.iter().zip(&vp).map(|(a, vj)| a / z * vj[c]).sum();
            }
        }
    }
    out
}

fn run_msa(q: &Tensor<f64>, kv: &Tensor<f64>, w: [&Tensor<f64>; 3], heads: usize) -> Tensor<f64> {
    let tape = Tape::new();
    let c = |t: &Tensor<f64>| tape.constant(t.clone()).unwrap();
    let y = msa(c(q), c(kv), c(w[0]), c(w[1]), c(w[2]), heads, None).unwrap();
    (*y.value()).clone()
}

#[test]
fn attention_matches_enumeration() {
    for seed in 0..10 {
        let q = rand_tensor(&[3, 4], seed);
        let kv = rand_tensor(&[3, 4], seed + 100);
        let ws: Vec<_> = (0..3).map(|i| rand_tensor(&[4, 4], seed * 10 + i)).collect();
        for heads in [1, 2, 4] {
            let got = run_msa(&q, &kv, [&ws[0], &ws[1], &ws[2]], heads);
            let want = attention_oracle(&q, &kv, [&ws[0], &ws[1], &ws[2]], heads);
            for (r, row) in want.iter().enumerate() {
                for (j, w) in row.iter().enumerate() {
                    assert!((got.at(&[r, j]) - w).abs() < 1e-12, "heads {heads}");
                }
            }
        }
    }
}

#[test]
fn single_key_attention_returns_its_value() {
    let q = rand_tensor(&[5, 4], 1);
    let kv = rand_tensor(&[1, 4], 2);
    let ws: Vec<_> = (0..3).map(|i| rand_tensor(&[4, 4], 10 + i)).collect();
    let y = run_msa(&q, &kv, [&ws[0], &ws[1], &ws[2]], 2);
    for r in 0..5 {
        for j in 0..4 {
            let v: f64 = (0..4).map(|i| kv.at(&[0, i]) * ws[2].at(&[i, j])).sum();
            assert!((y.at(&[r, j]) - v).abs() < 1e-12);
        }
    }
}

#[test]
fn identical_keys_give_uniform_weights() {
    let q = rand_tensor(&[4, 4], 1);
    let row = rand_tensor(&[4], 2);
    let kv = Tensor::from_fn(&[3, 4], |i| row.data()[i % 4]);
    let ws: Vec<_> = (0..3).map(|i| rand_tensor(&[4, 4], 20 + i)).collect();
    let y = run_msa(&q, &kv, [&ws[0], &ws[1], &ws[2]], 1);
    for r in 0..4 {
        for j in 0..4 {
            let v: f64 = (0..4).map(|i| row.data()[i] * ws[2].at(&[i, j])).sum();
            assert!((y.at(&[r, j]) - v).abs() < 1e-12);
        }
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    #[test]
    fn film_commutes_with_spatial_permutation(seed in any::<u64>(), shift in 0usize..12) {
        let (c, n) = (3, 12);
        let x = rand_tensor(&[c, 1, n], seed);
        let rolled = Tensor::from_fn(&[c, 1, n], |i| x.data()[(i / n) * n + (i % n + shift) % n]);
        let raw = rand_tensor(&[2 * c], seed ^ 1);
        let tape = Tape::new();
        let params = split_film(tape.constant(raw).unwrap()).unwrap();
        let a = film(tape.constant(x).unwrap(), &params).unwrap().value();
        let b = film(tape.constant(rolled).unwrap(), &params).unwrap().value();
        let a_rolled = Tensor::from_fn(&[c, 1, n], |i| a.data()[(i / n) * n + (i % n + shift) % n]);
        prop_assert_eq!(a_rolled, (*b).clone());
    }
}
