//! Finite-difference checks of every composite layer, in `f64`.

use hyperweather::backbone::IntraPatchBlock;
use hyperweather::blocks::{Block, BlockSpec, TokenLayout};
use hyperweather::config::ModelConfig;
use hyperweather::feature::{center_tokens, contrastive_loss, token_gram, upper_tri_vec};
use hyperweather::hyper::{film, gen_dwc_kernel, gen_film_params, gen_qkv_proj, HyperBank, HyperMlp, SlotInit};
use hyperweather::losses::{total_loss, PerceptualProxy};
use hyperweather::model::Model;
use hyperweather::nn::{msa, Activation, Ctx};
use hyperweather::params::{Bound, Builder, ParamGroup, ParamStore};
use hyperweather::tensor::gradcheck::{check, GradCheckReport};
use hyperweather::tensor::{Tape, Tensor, TensorError, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

const H: f64 = 1e-5;
const TOL: f64 = 1e-5;
const SEEDS: [u64; 5] = [11, 12, 13, 14, 15];

fn te(e: hyperweather::Error) -> TensorError {
    TensorError::Contract(e.to_string())
}

fn rand_tensor(shape: &[usize], seed: u64, bound: f64) -> Tensor<f64> {
    Tensor::uniform(shape, bound, &mut ChaCha8Rng::seed_from_u64(seed))
}

fn assert_ok(report: GradCheckReport, what: &str) {
    assert!(report.checked > 0);
    assert!(report.max_rel_error < TOL, "{what}: max rel err {}", report.max_rel_error);
}

/// Fixed random weights so the scalar loss depends on every output entry.
fn weighted_sum<'t>(tape: &'t Tape<f64>, x: Var<'t, f64>, seed: u64) -> Result<Var<'t, f64>, TensorError> {
    let w = tape.constant(rand_tensor(&x.shape(), seed, 1.0))?;
    x.mul(w)?.sum()
}

fn spec(channels: usize, heads: usize, sr: usize, adaptive: bool) -> BlockSpec {
    BlockSpec {
        channels,
        heads,
        sr,
        mlp_ratio: 2,
        adapt_global: adaptive,
        adapt_local: adaptive,
        activation: Activation::Gelu,
    }
}

/// Store values followed by the weather vector and the token input.
fn inputs(store: &ParamStore<f64>, dim: usize, tokens: &[usize], seed: u64) -> Vec<Tensor<f64>> {
    let mut v: Vec<Tensor<f64>> = store.entries().iter().map(|e| e.value.as_ref().clone()).collect();
    v.push(rand_tensor(&[dim], seed + 1, 1.0));
    v.push(rand_tensor(tokens, seed + 2, 1.0));
    v
}

#[test]
fn adaptive_block() {
    for seed in SEEDS {
        let dim = 6;
        let mut store = ParamStore::<f64>::new();
        let mut bank = HyperBank::new(dim, Activation::Gelu);
        let block = {
            let mut b = Builder::new(&mut store, seed, ParamGroup::Backbone);
            Block::build(&mut b, &mut bank, "blk", &spec(4, 2, 2, true)).unwrap()
        };
        let n = store.len();
        let r = check(&inputs(&store, dim, &[16, 4], seed), H, Some(6), |tape, vars| {
            let p = Bound::from_vars(vars[..n].to_vec());
            let generated = bank.generate_all(&p, Some(vars[n])).map_err(te)?;
            let ctx = Ctx {
                bound: &p,
                generated: &generated,
            };
            let y = block.forward(&ctx, vars[n + 1], (4, 4), &TokenLayout::Grid).map_err(te)?;
            weighted_sum(tape, y, seed + 3)
        })
        .unwrap();
        assert_ok(r, "adaptive block");
    }
}

#[test]
fn intra_patch_block() {
    for seed in SEEDS {
        let dim = 6;
        let mut store = ParamStore::<f64>::new();
        let mut bank = HyperBank::new(dim, Activation::Gelu);
        let block = {
            let mut b = Builder::new(&mut store, seed, ParamGroup::Backbone);
            IntraPatchBlock::build(&mut b, &mut bank, "intra", &spec(8, 1, 1, true)).unwrap()
        };
        let n = store.len();
        let r = check(&inputs(&store, dim, &[4, 8], seed), H, Some(6), |tape, vars| {
            let p = Bound::from_vars(vars[..n].to_vec());
            let generated = bank.generate_all(&p, Some(vars[n])).map_err(te)?;
            let ctx = Ctx {
                bound: &p,
                generated: &generated,
            };
            let y = block.forward(&ctx, vars[n + 1], (2, 2)).map_err(te)?;
            weighted_sum(tape, y, seed + 3)
        })
        .unwrap();
        assert_ok(r, "intra-patch block");
    }
}

/// Generated depthwise kernel inside the expand → conv → σ → contract path.
#[test]
fn adaptive_ffn() {
    for seed in SEEDS {
        let (dim, c) = (5, 3);
        let mut store = ParamStore::<f64>::new();
        let mlp = {
            let mut b = Builder::new(&mut store, seed, ParamGroup::Backbone);
            HyperMlp::build(&mut b, "dwc", dim, &[c, 1, 3, 3], Activation::Gelu, &SlotInit::delta_kernel(c, 3)).unwrap()
        };
        let n = store.len();
        let mut ins = inputs(&store, dim, &[c, 4, 4], seed);
        ins.push(rand_tensor(&[c, c], seed + 4, 1.0));
        let r = check(&ins, H, None, |tape, vars| {
            let p = Bound::from_vars(vars[..n].to_vec());
            let k = gen_dwc_kernel(&mlp, &p, vars[n], c).map_err(te)?;
            let y = vars[n + 1].depthwise_conv2d(k)?.gelu()?.reshape(&[c, 16])?.transpose()?;
            weighted_sum(tape, y.matmul(vars[n + 2])?, seed + 3)
        })
        .unwrap();
        assert_ok(r, "adaptive ffn");
    }
}

/// Generated query/key/value projections inside multi-head attention.
#[test]
fn adaptive_msa() {
    for seed in SEEDS {
        let (dim, c) = (5, 4);
        let mut store = ParamStore::<f64>::new();
        let mlps = {
            let mut b = Builder::new(&mut store, seed, ParamGroup::Backbone);
            ["q", "k", "v"].map(|name| {
                HyperMlp::build(&mut b, name, dim, &[c, c], Activation::Gelu, &SlotInit::projection(c, c)).unwrap()
            })
        };
        let n = store.len();
        let mut ins = inputs(&store, dim, &[6, c], seed);
        ins.push(rand_tensor(&[3, c], seed + 4, 1.0));
        let r = check(&ins, H, None, |tape, vars| {
            let p = Bound::from_vars(vars[..n].to_vec());
            let [wq, wk, wv] = gen_qkv_proj([&mlps[0], &mlps[1], &mlps[2]], &p, vars[n], c, c).map_err(te)?;
            let self_attn = msa(vars[n + 1], vars[n + 1], wq, wk, wv, 2, None).map_err(te)?;
            let cross = msa(vars[n + 2], vars[n + 1], wq, wk, wv, 1, None).map_err(te)?;
            Ok(weighted_sum(tape, self_attn, seed + 3)?.add(weighted_sum(tape, cross, seed + 5)?)?)
        })
        .unwrap();
        assert_ok(r, "adaptive msa");
    }
}

#[test]
fn generated_film() {
    for seed in SEEDS {
        let (dim, c) = (5, 3);
        let mut store = ParamStore::<f64>::new();
        let mlp = {
            let mut b = Builder::new(&mut store, seed, ParamGroup::Backbone);
            HyperMlp::build(&mut b, "film", dim, &[2 * c], Activation::Gelu, &SlotInit::film(c)).unwrap()
        };
        let n = store.len();
        let r = check(&inputs(&store, dim, &[c, 3, 2], seed), H, None, |tape, vars| {
            let p = Bound::from_vars(vars[..n].to_vec());
            let params = gen_film_params(&mlp, &p, vars[n], c).map_err(te)?;
            let y = film(vars[n + 1], &params).map_err(te)?;
            weighted_sum(tape, y.gelu()?, seed + 3)
        })
        .unwrap();
        assert_ok(r, "film");
    }
}

#[test]
fn centered_gram_vector() {
    for seed in SEEDS {
        let r = check(&[rand_tensor(&[9, 4], seed, 1.0)], H, None, |tape, vars| {
            let g = token_gram(center_tokens(vars[0]).map_err(te)?).map_err(te)?;
            weighted_sum(tape, upper_tri_vec(g).map_err(te)?, seed + 1)
        })
        .unwrap();
        assert_ok(r, "gram");
    }
}

#[test]
fn contrastive() {
    for seed in SEEDS {
        let ins: Vec<Tensor<f64>> = (0..5).map(|i| rand_tensor(&[6], seed * 10 + i, 1.0)).collect();
        // Margin 1 keeps every same-class hinge active and away from its kink.
        let r = check(&ins, H, None, |_, vars| {
            contrastive_loss(vars, &[0, 1, 0, 2, 1], 1.0).map_err(te)
        })
        .unwrap();
        assert_ok(r, "contrastive");
    }
}

#[test]
fn total_restoration_loss() {
    for seed in SEEDS {
        let proxy = PerceptualProxy::new(seed);
        let y = rand_tensor(&[3, 8, 8], seed, 1.0);
        let t = rand_tensor(&[3, 8, 8], seed + 1, 1.0);
        let r = check(&[y, t], H, None, |_, vars| {
            total_loss(&proxy, vars[0], vars[1], 0.04, 1.0).map_err(te)
        })
        .unwrap();
        assert_ok(r, "total loss");
    }
}

/// Layer norms over fewer than about eight channels are curved enough for
/// the O(h²) difference error to exceed the tolerance.
fn tiny_config(seed: u64) -> ModelConfig {
    ModelConfig {
        channels: vec![8, 16, 24, 32],
        heads: vec![1, 2, 1, 2],
        sr_ratios: vec![2, 2, 1, 1],
        blocks: 1,
        queries: 2,
        feature_dim: 8,
        tail_channels: 2,
        seed,
        ..ModelConfig::default()
    }
}

/// Image → weather vector → generated layers → restored image → loss.
#[test]
fn end_to_end_restore_16x16() {
    for seed in SEEDS {
        let model = Model::<f64>::new(&tiny_config(seed)).unwrap();
        let proxy = PerceptualProxy::new(seed);
        let mut ins: Vec<Tensor<f64>> = model.store.entries().iter().map(|e| e.value.as_ref().clone()).collect();
        let n = ins.len();
        ins.push(rand_tensor(&[3, 16, 16], seed + 1, 0.5).map(|v| v + 0.5));
        let clean = rand_tensor(&[3, 16, 16], seed + 2, 0.5).map(|v| v + 0.5);
        let r = check(&ins, H, Some(2), |tape, vars| {
            let p = Bound::from_vars(vars[..n].to_vec());
            let image = vars[n];
            let v = model.features_var(&p, image).map_err(te)?;
            let y = model.restore_var(&p, image, Some(v)).map_err(te)?;
            let t = tape.constant(clean.clone())?;
            total_loss(&proxy, y, t, 0.04, 1.0).map_err(te)
        })
        .unwrap();
        assert_ok(r, "end-to-end restore");
    }
}
