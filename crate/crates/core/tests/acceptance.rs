//! Acceptance suite: ten criteria on the default synthetic benchmark, each
//! reported as one PASS/FAIL line.
//!
//! Run with `cargo test --release -p hyperweather --test acceptance -- --nocapture`.

use std::time::{Duration, Instant};

use hyperweather::checkpoint::{load_model, save_model};
use hyperweather::compute::count_compute;
use hyperweather::config::ModelConfig;
use hyperweather::dataset::{Dataset, DatasetConfig, Split};
use hyperweather::eval::{evaluate, evaluate_degraded, evaluate_model, run_ablation};
use hyperweather::feature::{contrastive_loss, gram, upper_tri_vec};
use hyperweather::inference::{cosine, infer_cascade, infer_fixed, infer_full, scores_for_vector, softmax, LaterStages};
use hyperweather::losses::{smooth_l1, total_loss, PerceptualProxy};
use hyperweather::metrics::{clamp_unit, psnr, ssim};
use hyperweather::model::Model;
use hyperweather::params::Bound;
use hyperweather::synth::WeatherClass;
use hyperweather::tensor::gradcheck::check;
use hyperweather::tensor::{Tape, Tensor, TensorError};
use hyperweather::train::{compute_bank, Phase, TrainConfig, Trainer};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const GRAD_TOL: f64 = 1e-5;
const GRAD_STEP: f64 = 1e-5;
const GRAD_SEEDS: [u64; 5] = [21, 22, 23, 24, 25];
const MIN_ACCURACY: f64 = 0.95;
const MIN_COSINE_GAP: f64 = 0.3;
const MIN_GAIN_DB: f64 = 2.0;
const MIN_ABLATION_GAIN_DB: f64 = 0.2;
const MAX_AXIS_DROP_DB: f64 = 0.1;
const FIXED_WITHIN_DB: f64 = 0.5;
const WRONG_BELOW_DB: f64 = 1.0;
const HYBRIDS: usize = 50;
const ORACLE_INSTANCES: u64 = 100;
const SCORE_SUM_TOL: f64 = 1e-6;

/// Training budget per phase for the shared model.
const STEPS: [usize; 3] = [1000, 600, 150];
/// Per-phase budget of every ablation row.
const ABLATION_STEPS: [usize; 3] = [400, 300, 100];
const ABLATION_SEEDS: [u64; 3] = [0, 1, 2];

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn te(e: hyperweather::Error) -> TensorError {
    TensorError::Contract(e.to_string())
}

fn rng(seed: u64) -> ChaCha8Rng {
    ChaCha8Rng::seed_from_u64(seed)
}

fn rand_tensor(shape: &[usize], seed: u64) -> Tensor<f64> {
    Tensor::uniform(shape, 1.0, &mut rng(seed))
}

fn unit_vec(n: usize, r: &mut ChaCha8Rng) -> Vec<f64> {
    (0..n).map(|_| r.gen_range(0.0..1.0)).collect()
}

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

fn gradient_integrity() -> Outcome {
    let mut worst: f64 = 0.0;
    for seed in GRAD_SEEDS {
        let model = Model::<f64>::new(&tiny_config(seed)).unwrap();
        let proxy = PerceptualProxy::new(seed);
        let mut ins: Vec<Tensor<f64>> = model.store.entries().iter().map(|e| e.value.as_ref().clone()).collect();
        let n = ins.len();
        ins.push(rand_tensor(&[3, 16, 16], seed + 1).map(|v| 0.5 * v + 0.5));
        let clean = rand_tensor(&[3, 16, 16], seed + 2).map(|v| 0.5 * v + 0.5);
        let r = check(&ins, GRAD_STEP, Some(2), |tape, vars| {
            let p = Bound::from_vars(vars[..n].to_vec());
            let v = model.features_var(&p, vars[n]).map_err(te)?;
            let y = model.restore_var(&p, vars[n], Some(v)).map_err(te)?;
            let t = tape.constant(clean.clone())?;
            total_loss(&proxy, y, t, 0.04, 1.0).map_err(te)
        })
        .unwrap();
        worst = worst.max(r.max_rel_error);

        let vs: Vec<Tensor<f64>> = (0..5).map(|i| rand_tensor(&[6], seed * 10 + i)).collect();
        let r = check(&vs, GRAD_STEP, None, |_, vars| {
            contrastive_loss(vars, &[0, 1, 0, 2, 1], 1.0).map_err(te)
        })
        .unwrap();
        worst = worst.max(r.max_rel_error);

        let f = rand_tensor(&[3, 4, 4], seed + 3);
        let r = check(&[f], GRAD_STEP, None, |_, vars| upper_tri_vec(gram(vars[0]).map_err(te)?).map_err(te)?.sum()).unwrap();
        worst = worst.max(r.max_rel_error);
    }
    outcome(worst < GRAD_TOL, format!("max rel err {worst:.2e} over {} seeds", GRAD_SEEDS.len()))
}

/// Identification accuracy and intra/inter cosine gap on the test split.
fn identification(model: &Model<f32>, data: &Dataset) -> Outcome {
    let bank = compute_bank(model, data).unwrap();
    let test = data.split(Split::Test);
    let vs: Vec<_> = test
        .iter()
        .map(|s| (model.extract_features(&s.degraded).unwrap(), s.label().unwrap()))
        .collect();
    let correct = vs
        .iter()
        .filter(|(v, c)| scores_for_vector(v, &bank).unwrap().argmax == *c)
        .count();
    let accuracy = correct as f64 / vs.len() as f64;
    let (mut intra, mut ni, mut inter, mut ne) = (0.0, 0, 0.0, 0);
    for i in 0..vs.len() {
        for j in i + 1..vs.len() {
            let d = cosine(vs[i].0.values.data(), vs[j].0.values.data()).unwrap();
            if vs[i].1 == vs[j].1 {
                intra += d;
                ni += 1;
            } else {
                inter += d;
                ne += 1;
            }
        }
    }
    let gap = intra / ni as f64 - inter / ne as f64;
    outcome(
        accuracy >= MIN_ACCURACY && gap >= MIN_COSINE_GAP,
        format!("accuracy {accuracy:.3}, cosine gap {gap:.3}"),
    )
}

fn restoration_gain(model: &Model<f32>, data: &Dataset) -> Outcome {
    let restored = evaluate_model(model, data, Split::Test).unwrap().avg_psnr;
    let degraded = evaluate_degraded(data, Split::Test).unwrap().avg_psnr;
    let gain = restored - degraded;
    outcome(
        gain >= MIN_GAIN_DB,
        format!("restored {restored:.2} dB, degraded {degraded:.2} dB, gain {gain:.2} dB"),
    )
}

fn ablation_trend(data: &Dataset) -> Outcome {
    let budget = TrainConfig {
        steps: ABLATION_STEPS,
        val_every: 100,
        ..TrainConfig::default()
    };
    let r = run_ablation(data, &ModelConfig::default(), &budget, &ABLATION_SEEDS).unwrap();
    let means: Vec<f64> = r.rows.iter().map(|row| row.mean_psnr()).collect();
    let full = means[means.len() - 1];
    let worst_drop = means.windows(2).map(|w| w[0] - w[1]).fold(f64::NEG_INFINITY, f64::max);
    let pass = full >= means[0] + MIN_ABLATION_GAIN_DB && worst_drop <= MAX_AXIS_DROP_DB;
    let rows: Vec<String> = means.iter().map(|m| format!("{m:.2}")).collect();
    outcome(pass, format!("row means [{}] dB, largest drop {worst_drop:.2} dB", rows.join(", ")))
}

fn fixed_vector_substitution(model: &Model<f32>, bank: &hyperweather::feature::ClassAverageBank<f32>, data: &Dataset) -> Outcome {
    let full = evaluate_model(model, data, Split::Test).unwrap().avg_psnr;
    let correct = evaluate(data, Split::Test, |s| infer_fixed(model, &s.degraded, s.label()?, bank))
        .unwrap()
        .avg_psnr;
    let wrong = evaluate(data, Split::Test, |s| {
        let other = WeatherClass::ALL[(s.label()?.index() + 1) % 3];
        infer_fixed(model, &s.degraded, other, bank)
    })
    .unwrap()
    .avg_psnr;
    let pass = (correct - full).abs() <= FIXED_WITHIN_DB && correct - wrong >= WRONG_BELOW_DB;
    outcome(pass, format!("full {full:.2} dB, correct class {correct:.2} dB, wrong class {wrong:.2} dB"))
}

/// One pass of the model against two fixed-vector stages, rain first.
fn cascade_trend(model: &Model<f32>, bank: &hyperweather::feature::ClassAverageBank<f32>, hybrids: &Dataset) -> Outcome {
    let before = model.store.checksum();
    let (mut single, mut two) = (0.0, 0.0);
    for s in &hybrids.samples {
        let one = infer_full(model, &s.degraded).unwrap();
        let order = [WeatherClass::StreakHaze, WeatherClass::Flake];
        let staged = infer_cascade(model, &s.degraded, &order, bank, LaterStages::Recompute).unwrap();
        single += psnr(&clamp_unit(&one), &s.clean).unwrap();
        two += psnr(&clamp_unit(&staged), &s.clean).unwrap();
    }
    let n = hybrids.len() as f64;
    let (single, two) = (single / n, two / n);
    let unchanged = model.store.checksum() == before;
    outcome(
        two > single && unchanged,
        format!("single stage {single:.2} dB, two stages {two:.2} dB, weights unchanged {unchanged}"),
    )
}

fn psnr_oracle(a: &[f64], b: &[f64]) -> f64 {
    let mse = a.iter().zip(b).map(|(x, y)| (x - y) * (x - y)).sum::<f64>() / a.len() as f64;
    if mse < 1e-10 {
        100.0
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

fn ssim_oracle(a: &Tensor<f64>, b: &Tensor<f64>) -> f64 {
    let (c, h, w) = (a.shape()[0], a.shape()[1], a.shape()[2]);
    let mut g = [[0.0; 11]; 11];
    let mut z = 0.0;
    for (i, row) in g.iter_mut().enumerate() {
        for (j, v) in row.iter_mut().enumerate() {
            let (dy, dx) = (i as f64 - 5.0, j as f64 - 5.0);
            *v = (-(dy * dy + dx * dx) / 4.5).exp();
            z += *v;
        }
    }
    let (c1, c2) = (1e-4, 9e-4);
    let mut total = 0.0;
    for ch in 0..c {
        let mut acc = 0.0;
        for y0 in 0..=h - 11 {
            for x0 in 0..=w - 11 {
                let mut m = [0.0; 5];
                for (i, row) in g.iter().enumerate() {
                    for (j, gv) in row.iter().enumerate() {
                        let k = gv / z;
                        let p = a.at(&[ch, y0 + i, x0 + j]);
                        let q = b.at(&[ch, y0 + i, x0 + j]);
                        m[0] += k * p;
                        m[1] += k * q;
                        m[2] += k * p * p;
                        m[3] += k * q * q;
                        m[4] += k * p * q;
                    }
                }
                let (va, vb, cov) = (m[2] - m[0] * m[0], m[3] - m[1] * m[1], m[4] - m[0] * m[1]);
                acc += (2.0 * m[0] * m[1] + c1) * (2.0 * cov + c2) / ((m[0] * m[0] + m[1] * m[1] + c1) * (va + vb + c2));
            }
        }
        total += acc / ((h - 10) * (w - 10)) as f64;
    }
    total / c as f64
}

fn cos_oracle(a: &[f64], b: &[f64]) -> f64 {
    let dot: f64 = a.iter().zip(b).map(|(x, y)| x * y).sum();
    let na: f64 = a.iter().map(|x| x * x).sum();
    let nb: f64 = b.iter().map(|x| x * x).sum();
    dot / (na.sqrt() * nb.sqrt())
}

/// Largest error of each closed-form quantity against a scalar oracle.
fn analytic_oracles() -> Outcome {
    let mut failures = Vec::new();
    let mut record = |name: &str, err: f64, tol: f64| {
        if !(err < tol) {
            failures.push(format!("{name} {err:.1e}"));
        }
    };
    for s in 0..ORACLE_INSTANCES {
        let mut r = rng(90_000 + s);
        let a = Tensor::new(&[3, 8, 8], unit_vec(192, &mut r)).unwrap();
        let b = Tensor::new(&[3, 8, 8], unit_vec(192, &mut r)).unwrap();
        record("psnr", (psnr(&a, &b).unwrap() - psnr_oracle(a.data(), b.data())).abs(), 1e-9);

        let x = Tensor::new(&[2, 13, 12], unit_vec(312, &mut r)).unwrap();
        let noise = unit_vec(312, &mut r);
        let y = Tensor::new(&[2, 13, 12], x.data().iter().zip(&noise).map(|(p, n)| 0.6 * p + 0.4 * n).collect()).unwrap();
        record("ssim", (ssim(&x, &y).unwrap() - ssim_oracle(&x, &y)).abs(), 1e-6);

        let logits: Vec<f64> = (0..r.gen_range(1..7)).map(|_| r.gen_range(-5.0..5.0)).collect();
        let z: f64 = logits.iter().map(|v| v.exp()).sum();
        let err = softmax(&logits)
            .iter()
            .zip(&logits)
            .map(|(p, v)| (p - v.exp() / z).abs())
            .fold(0.0, f64::max);
        record("softmax", err, 1e-12);

        let tape = Tape::new();
        let f = Tensor::new(&[3, 4, 5], unit_vec(60, &mut r)).unwrap();
        let g = gram(tape.constant(f.clone()).unwrap()).unwrap().value();
        let mut err: f64 = 0.0;
        for i in 0..3 {
            for j in 0..3 {
                let mut acc = 0.0;
                for p in 0..20 {
                    acc += f.data()[i * 20 + p] * f.data()[j * 20 + p];
                }
                err = err.max((g.at(&[i, j]) - acc / 20.0).abs());
            }
        }
        record("gram", err, 1e-12);

        let tri = upper_tri_vec(tape.constant(g.as_ref().clone()).unwrap()).unwrap().value();
        let expect: Vec<f64> = (0..3).flat_map(|i| (i..3).map(move |j| (i, j))).map(|(i, j)| g.at(&[i, j])).collect();
        record("upper-tri", if tri.data() == &expect[..] { 0.0 } else { 1.0 }, 0.5);

        let yv: Vec<f64> = (0..10).map(|_| r.gen_range(-2.0..2.0)).collect();
        let tv: Vec<f64> = (0..10).map(|_| r.gen_range(-2.0..2.0)).collect();
        let beta = r.gen_range(0.1..1.5);
        let expect = yv
            .iter()
            .zip(&tv)
            .map(|(p, q)| {
                let e = (p - q).abs();
                if e < beta {
                    0.5 * e * e / beta
                } else {
                    e - 0.5 * beta
                }
            })
            .sum::<f64>()
            / 10.0;
        let got = smooth_l1(
            tape.constant(Tensor::vector(yv)).unwrap(),
            tape.constant(Tensor::vector(tv)).unwrap(),
            beta,
        )
        .unwrap()
        .item()
        .unwrap();
        record("smooth-l1", (got - expect).abs(), 1e-7);

        let n = r.gen_range(2..9);
        let vs: Vec<Vec<f64>> = (0..n).map(|_| (0..5).map(|_| r.gen_range(-1.0..1.0)).collect()).collect();
        let labels: Vec<usize> = (0..n).map(|_| r.gen_range(0..3)).collect();
        let m = r.gen_range(0.1..1.0);
        let mut expect = 0.0;
        for i in 0..n {
            for j in i + 1..n {
                let d = cos_oracle(&vs[i], &vs[j]);
                expect += if labels[i] == labels[j] { (m - d).max(0.0) } else { d };
            }
        }
        let vars: Vec<_> = vs.iter().map(|v| tape.constant(Tensor::vector(v.clone())).unwrap()).collect();
        let got = contrastive_loss(&vars, &labels, m).unwrap().item().unwrap();
        record("contrastive", (got - expect).abs(), 1e-9);
    }
    let pass = failures.is_empty();
    let detail = if pass {
        format!("7 quantities on {ORACLE_INSTANCES} instances each")
    } else {
        failures.join(", ")
    };
    outcome(pass, detail)
}

fn compute_ordering() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for (name, base) in [("default", ModelConfig::default()), ("reference", ModelConfig::reference())] {
        let counts: Vec<_> = [0.5, 0.75, 1.0]
            .iter()
            .map(|&w| count_compute(&base.clone().with_width(w), 32, 32).unwrap())
            .collect();
        for pair in counts.windows(2) {
            pass &= pair[0].total_params() < pair[1].total_params() && pair[0].total_macs() < pair[1].total_macs();
        }
        let params: Vec<String> = counts.iter().map(|c| c.total_params().to_string()).collect();
        detail.push(format!("{name} params {}", params.join(" < ")));
    }
    outcome(pass, detail.join("; "))
}

fn persistence(trained: &Trainer, data: &Dataset) -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.mwfc");
    save_model(&path, &trained.model, &trained.bank).unwrap();
    let (model, bank) = load_model::<f32>(&path).unwrap();
    let bits = |t: &Tensor<f32>| t.data().iter().map(|v| v.to_bits()).collect::<Vec<_>>();
    let round_trip = bank == trained.bank
        && model.store.checksum() == trained.model.store.checksum()
        && data.split(Split::Test).iter().take(10).all(|s| {
            bits(&infer_full(&model, &s.degraded).unwrap()) == bits(&infer_full(&trained.model, &s.degraded).unwrap())
        });

    let regenerated = Dataset::generate(&DatasetConfig::default()).unwrap().to_bytes() == data.to_bytes()
        && data.samples.iter().all(|s| s.verify().unwrap());

    let small = Dataset::generate(&DatasetConfig {
        counts: [10, 10, 10],
        height: 16,
        width: 16,
        seed: 5,
    })
    .unwrap();
    let budget = TrainConfig {
        steps: [4, 6, 4],
        batch: 3,
        val_every: 2,
        val_per_class: 1,
        ..TrainConfig::default()
    };
    let mut pre = Trainer::new(Model::new(&tiny_config(2)).unwrap(), budget).unwrap();
    pre.pretrain(&small).unwrap();
    let mut straight = Trainer::from_container(&pre.to_container()).unwrap();
    straight.run_phase(&small, Phase::Restore, None).unwrap();
    let mut first = Trainer::from_container(&pre.to_container()).unwrap();
    first.run_phase(&small, Phase::Restore, Some(3)).unwrap();
    let state = dir.path().join("state.mwfc");
    first.save(&state).unwrap();
    let mut resumed = Trainer::load(&state).unwrap();
    resumed.run_phase(&small, Phase::Restore, None).unwrap();
    let resume = resumed.to_container().to_bytes().unwrap() == straight.to_container().to_bytes().unwrap();

    outcome(
        round_trip && regenerated && resume,
        format!("checkpoint {round_trip}, dataset {regenerated}, resume {resume}"),
    )
}

fn score_algebra(model: &Model<f32>, bank: &hyperweather::feature::ClassAverageBank<f32>, images: &[&Tensor<f32>]) -> Outcome {
    let mut worst_sum: f64 = 0.0;
    let mut flips = 0;
    for image in images {
        let v = model.extract_features(image).unwrap();
        let s = scores_for_vector(&v, bank).unwrap();
        worst_sum = worst_sum.max((s.scores.iter().sum::<f64>() - 1.0).abs());
        for c in [1e-3, 0.25, 3.0, 1e3] {
            if scores_for_vector(&v.scaled(c).unwrap(), bank).unwrap().argmax != s.argmax {
                flips += 1;
            }
        }
    }
    outcome(
        worst_sum <= SCORE_SUM_TOL && flips == 0,
        format!("{} images, max |sum - 1| {worst_sum:.1e}, argmax changes {flips}", images.len()),
    )
}

fn report(n: usize, name: &str, limit: Option<Duration>, elapsed: Duration, o: Outcome) -> bool {
    let in_time = limit.map_or(true, |l| elapsed <= l);
    let pass = o.pass && in_time;
    let limit = limit.map_or(String::new(), |l| format!(" (limit {}s)", l.as_secs()));
    println!(
        "criterion {n:>2} {name:<28} {} {} [{:.1}s{limit}]",
        if pass { "PASS" } else { "FAIL" },
        o.detail,
        elapsed.as_secs_f64()
    );
    pass
}

#[test]
fn acceptance_criteria() {
    let mut results = Vec::new();
    let mut run = |n: usize, name: &str, limit: Option<Duration>, f: &mut dyn FnMut() -> Outcome| {
        let t = Instant::now();
        let o = f();
        results.push((n, report(n, name, limit, t.elapsed(), o)));
    };
    let minutes = |m: u64| Some(Duration::from_secs(60 * m));

    run(1, "gradient integrity", minutes(2), &mut gradient_integrity);

    let data = Dataset::generate(&DatasetConfig::default()).unwrap();
    let config = TrainConfig {
        steps: STEPS,
        val_every: 150,
        ..TrainConfig::default()
    };
    let mut trainer = Trainer::new(Model::new(&ModelConfig::default()).unwrap(), config).unwrap();
    run(2, "identification", minutes(5), &mut || {
        trainer.pretrain(&data).unwrap();
        identification(&trainer.model, &data)
    });
    run(3, "restoration gain", minutes(15), &mut || {
        trainer.train_restoration(&data).unwrap();
        trainer.finetune(&data).unwrap();
        restoration_gain(&trainer.model, &data)
    });
    run(4, "ablation trend", None, &mut || ablation_trend(&data));
    run(5, "fixed-vector substitution", None, &mut || {
        fixed_vector_substitution(&trainer.model, &trainer.bank, &data)
    });
    let hybrids = Dataset::hybrid(HYBRIDS, 32, 32, 7).unwrap();
    run(6, "cascade trend", None, &mut || cascade_trend(&trainer.model, &trainer.bank, &hybrids));
    run(7, "analytic oracles", None, &mut analytic_oracles);
    run(8, "compute ordering", None, &mut compute_ordering);
    run(9, "persistence", None, &mut || persistence(&trainer, &data));
    let images: Vec<&Tensor<f32>> = data
        .split(Split::Test)
        .into_iter()
        .chain(hybrids.samples.iter())
        .map(|s| &s.degraded)
        .collect();
    run(10, "weather-score algebra", None, &mut || score_algebra(&trainer.model, &trainer.bank, &images));

    let failed: Vec<usize> = results.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    assert!(failed.is_empty(), "failed criteria: {failed:?}");
}
