//! Three-phase training: contrastive pretraining of the feature network,
//! restoration training with the feature network frozen, and joint
//! fine-tuning at a reduced rate.
//!
//! Every step is a pure function of the trainer state and the dataset, so a
//! run saved with [`Trainer::to_container`] and resumed with
//! [`Trainer::from_container`] finishes bit-identical to an uninterrupted
//! run.

use std::collections::HashMap;
use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use hyperweather_tensor::{Tape, Tensor, TensorError, Var};

use crate::checkpoint::{read_bank, read_model, write_bank, write_model, Container, Entry};
use crate::config::KeyValues;
use crate::dataset::{Dataset, Split};
use crate::error::{Error, Result};
use crate::feature::{contrastive_loss, ClassAverageBank};
use crate::losses::{total_loss, PerceptualProxy, DEFAULT_LAMBDA};
use crate::metrics::{clamp_unit, psnr, ssim};
use crate::model::Model;
use crate::optim::{Adam, AdamConfig, Moments};
use crate::params::{ParamGroup, ParamId};
use crate::synth::{derive_seed, WeatherClass};

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum Phase {
    Pretrain,
    Restore,
    Finetune,
    Done,
}

impl Phase {
    pub fn number(self) -> u8 {
        match self {
            Phase::Pretrain => 1,
            Phase::Restore => 2,
            Phase::Finetune => 3,
            Phase::Done => 4,
        }
    }

    pub fn from_number(n: u8) -> Result<Self> {
        match n {
            1 => Ok(Phase::Pretrain),
            2 => Ok(Phase::Restore),
            3 => Ok(Phase::Finetune),
            4 => Ok(Phase::Done),
            _ => Err(Error::format("checkpoint", format!("unknown phase {n}"))),
        }
    }

    pub fn next(self) -> Self {
        match self {
            Phase::Pretrain => Phase::Restore,
            Phase::Restore => Phase::Finetune,
            Phase::Finetune | Phase::Done => Phase::Done,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    /// Steps of the pretrain, restore and fine-tune phases.
    pub steps: [usize; 3],
    pub batch: usize,
    pub pretrain_lr: f64,
    pub restore_lr: f64,
    /// Fine-tune learning rate as a fraction of `restore_lr`.
    pub finetune_factor: f64,
    pub lambda: f64,
    pub margin: f64,
    pub smooth_l1_beta: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub seed: u64,
    pub proxy_seed: u64,
    /// Validate every this many steps of phases 2 and 3 (and at their end).
    pub val_every: usize,
    /// Validation images per class; 0 uses the whole split.
    pub val_per_class: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            steps: [1000, 4000, 1000],
            batch: 8,
            pretrain_lr: 2e-4,
            restore_lr: 2e-4,
            finetune_factor: 0.2,
            lambda: DEFAULT_LAMBDA,
            margin: 0.5,
            smooth_l1_beta: 1.0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            seed: 0,
            proxy_seed: 0x0C0F_FEE5,
            val_every: 500,
            val_per_class: 8,
        }
    }
}

const TRAIN_KEYS: &[&str] = &[
    "steps.pretrain",
    "steps.restore",
    "steps.finetune",
    "batch",
    "lr.pretrain",
    "lr.restore",
    "lr.finetune_factor",
    "lambda",
    "margin",
    "smooth_l1_beta",
    "adam.beta1",
    "adam.beta2",
    "adam.eps",
    "seed",
    "proxy_seed",
    "val_every",
    "val_per_class",
];

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.steps.contains(&0) {
            return Err(Error::Config(format!("phase step counts {:?} must be positive", self.steps)));
        }
        if self.batch < 2 {
            return Err(Error::Config(format!("batch size {} must be at least 2", self.batch)));
        }
        if !(self.lambda >= 0.0) {
            return Err(Error::Config(format!("loss weight {} must be non-negative", self.lambda)));
        }
        if !(self.margin > 0.0 && self.margin <= 1.0) {
            return Err(Error::Config(format!("margin {} outside (0, 1]", self.margin)));
        }
        for (name, v) in [
            ("pretrain learning rate", self.pretrain_lr),
            ("restore learning rate", self.restore_lr),
            ("fine-tune factor", self.finetune_factor),
            ("smooth-L1 threshold", self.smooth_l1_beta),
            ("adam epsilon", self.eps),
        ] {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} {v} must be positive")));
            }
        }
        if !(0.0..1.0).contains(&self.beta1) || !(0.0..1.0).contains(&self.beta2) {
            return Err(Error::Config("adam betas must lie in [0, 1)".into()));
        }
        if self.val_every == 0 {
            return Err(Error::Config("val_every must be positive".into()));
        }
        Ok(())
    }

    pub fn lr(&self, phase: Phase) -> f64 {
        match phase {
            Phase::Pretrain => self.pretrain_lr,
            Phase::Restore | Phase::Done => self.restore_lr,
            Phase::Finetune => self.restore_lr * self.finetune_factor,
        }
    }

    pub fn adam(&self, phase: Phase) -> AdamConfig {
        AdamConfig {
            lr: self.lr(phase),
            beta1: self.beta1,
            beta2: self.beta2,
            eps: self.eps,
        }
    }

    pub fn phase_steps(&self, phase: Phase) -> usize {
        match phase {
            Phase::Pretrain => self.steps[0],
            Phase::Restore => self.steps[1],
            Phase::Finetune => self.steps[2],
            Phase::Done => 0,
        }
    }

    /// Apply `train.*` keys on top of `self`.
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        kv.check_known("train.", TRAIN_KEYS)?;
        let set = |slot: &mut usize, key: &str| -> Result<()> {
            if let Some(v) = kv.get(key)? {
                *slot = v;
            }
            Ok(())
        };
        set(&mut self.steps[0], "train.steps.pretrain")?;
        set(&mut self.steps[1], "train.steps.restore")?;
        set(&mut self.steps[2], "train.steps.finetune")?;
        set(&mut self.batch, "train.batch")?;
        set(&mut self.val_every, "train.val_every")?;
        set(&mut self.val_per_class, "train.val_per_class")?;
        let setf = |slot: &mut f64, key: &str| -> Result<()> {
            if let Some(v) = kv.get(key)? {
                *slot = v;
            }
            Ok(())
        };
        setf(&mut self.pretrain_lr, "train.lr.pretrain")?;
        setf(&mut self.restore_lr, "train.lr.restore")?;
        setf(&mut self.finetune_factor, "train.lr.finetune_factor")?;
        setf(&mut self.lambda, "train.lambda")?;
        setf(&mut self.margin, "train.margin")?;
        setf(&mut self.smooth_l1_beta, "train.smooth_l1_beta")?;
        setf(&mut self.beta1, "train.adam.beta1")?;
        setf(&mut self.beta2, "train.adam.beta2")?;
        setf(&mut self.eps, "train.adam.eps")?;
        if let Some(v) = kv.get("train.seed")? {
            self.seed = v;
        }
        if let Some(v) = kv.get("train.proxy_seed")? {
            self.proxy_seed = v;
        }
        self.validate()?;
        Ok(self)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let _ = writeln!(s, "train.steps.pretrain = {}", self.steps[0]);
        let _ = writeln!(s, "train.steps.restore = {}", self.steps[1]);
        let _ = writeln!(s, "train.steps.finetune = {}", self.steps[2]);
        let _ = writeln!(s, "train.batch = {}", self.batch);
        let _ = writeln!(s, "train.lr.pretrain = {}", self.pretrain_lr);
        let _ = writeln!(s, "train.lr.restore = {}", self.restore_lr);
        let _ = writeln!(s, "train.lr.finetune_factor = {}", self.finetune_factor);
        let _ = writeln!(s, "train.lambda = {}", self.lambda);
        let _ = writeln!(s, "train.margin = {}", self.margin);
        let _ = writeln!(s, "train.smooth_l1_beta = {}", self.smooth_l1_beta);
        let _ = writeln!(s, "train.adam.beta1 = {}", self.beta1);
        let _ = writeln!(s, "train.adam.beta2 = {}", self.beta2);
        let _ = writeln!(s, "train.adam.eps = {}", self.eps);
        let _ = writeln!(s, "train.seed = {}", self.seed);
        let _ = writeln!(s, "train.proxy_seed = {}", self.proxy_seed);
        let _ = writeln!(s, "train.val_every = {}", self.val_every);
        let _ = writeln!(s, "train.val_per_class = {}", self.val_per_class);
        s
    }
}

/// Class-balanced sampling as a pure function of the step.
///
/// Global draw `g = step·batch + k` takes class `classes[g mod K]` and the
/// `r = g div K`-th draw of that class, which is position `r mod n_c` of a
/// permutation reseeded every pass over the class.
#[derive(Debug, Clone)]
pub struct BalancedSampler {
    pub seed: u64,
    pub batch: usize,
    /// Train-split dataset indices per class, in class order.
    pools: Vec<(WeatherClass, Vec<usize>)>,
}

impl BalancedSampler {
    pub fn new(data: &Dataset, batch: usize, seed: u64) -> Result<Self> {
        let pools: Vec<(WeatherClass, Vec<usize>)> = data
            .classes(Split::Train)
            .into_iter()
            .map(|c| (c, data.indices(Split::Train, c)))
            .collect();
        if pools.is_empty() {
            return Err(Error::Contract("no single-class training samples".into()));
        }
        Ok(BalancedSampler { seed, batch, pools })
    }

    pub fn class_count(&self) -> usize {
        self.pools.len()
    }

    pub fn batch_indices(&self, phase: Phase, step: usize) -> Vec<usize> {
        let k = self.pools.len();
        (0..self.batch)
            .map(|j| {
                let g = step * self.batch + j;
                let (class, pool) = &self.pools[g % k];
                let r = g / k;
                let n = pool.len();
                let epoch = r / n;
                let stream = ((phase.number() as u64) << 56) ^ ((class.index() as u64) << 48) ^ epoch as u64;
                let mut perm: Vec<usize> = (0..n).collect();
                perm.shuffle(&mut ChaCha8Rng::seed_from_u64(derive_seed(self.seed, stream)));
                pool[perm[r % n]]
            })
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LogRow {
    pub step: usize,
    pub phase: u8,
    pub loss: f64,
    pub val_psnr: Option<f64>,
    pub val_ssim: Option<f64>,
    pub lr: f64,
}

pub const LOG_HEADER: &str = "step,phase,loss,val_psnr,val_ssim,lr";

pub fn log_csv(rows: &[LogRow]) -> String {
    let mut s = String::from(LOG_HEADER);
    s.push('\n');
    let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
    for r in rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.step,
            r.phase,
            r.loss,
            opt(r.val_psnr),
            opt(r.val_ssim),
            r.lr
        );
    }
    s
}

fn parse_log(text: &str) -> Result<Vec<LogRow>> {
    let bad = |line: &str| Error::format("training log", format!("bad row {line:?}"));
    let opt = |f: &str| -> std::result::Result<Option<f64>, std::num::ParseFloatError> {
        if f.is_empty() {
            Ok(None)
        } else {
            f.parse().map(Some)
        }
    };
    text.lines()
        .skip(1)
        .filter(|l| !l.is_empty())
        .map(|line| {
            let f: Vec<&str> = line.split(',').collect();
            if f.len() != 6 {
                return Err(bad(line));
            }
            Ok(LogRow {
                step: f[0].parse().map_err(|_| bad(line))?,
                phase: f[1].parse().map_err(|_| bad(line))?,
                loss: f[2].parse().map_err(|_| bad(line))?,
                val_psnr: opt(f[3]).map_err(|_| bad(line))?,
                val_ssim: opt(f[4]).map_err(|_| bad(line))?,
                lr: f[5].parse().map_err(|_| bad(line))?,
            })
        })
        .collect()
}

/// Mean validation PSNR and SSIM of full adaptive inference, clamped to
/// `[0,1]`, over up to `per_class` images of each class (all when 0).
pub fn validate(model: &Model<f32>, data: &Dataset, split: Split, per_class: usize) -> Result<(f64, f64)> {
    let mut idx = Vec::new();
    for c in data.classes(split) {
        let all = data.indices(split, c);
        let take = if per_class == 0 { all.len() } else { per_class.min(all.len()) };
        idx.extend_from_slice(&all[..take]);
    }
    if idx.is_empty() {
        return Err(Error::Contract(format!("no {} samples to validate on", split.name())));
    }
    let (mut p, mut s) = (0.0, 0.0);
    for &i in &idx {
        let sample = &data.samples[i];
        let v = model.extract_features(&sample.degraded)?;
        let y = clamp_unit(&model.restore(&sample.degraded, &v)?);
        p += psnr(&y, &sample.clean)?;
        s += ssim(&y, &sample.clean)?;
    }
    let n = idx.len() as f64;
    Ok((p / n, s / n))
}

/// Feature vectors of every training image and their per-class means.
pub fn compute_bank(model: &Model<f32>, data: &Dataset) -> Result<ClassAverageBank<f32>> {
    let classes = data.classes(Split::Train);
    let mut vectors = Vec::new();
    let mut labels = Vec::new();
    for &c in &classes {
        for i in data.indices(Split::Train, c) {
            vectors.push(model.extract_features(&data.samples[i].degraded)?.values);
            labels.push(c);
        }
    }
    ClassAverageBank::from_vectors(&vectors, &labels, &classes)
}

fn non_finite(e: &Error) -> bool {
    matches!(e, Error::Tensor(TensorError::NonFinite(_)))
}

pub struct Trainer {
    pub model: Model<f32>,
    pub config: TrainConfig,
    /// Phase of the next step.
    pub phase: Phase,
    /// Completed steps of the current phase.
    pub step: usize,
    pub adam: Adam<f32>,
    pub bank: ClassAverageBank<f32>,
    pub log: Vec<LogRow>,
    proxy: PerceptualProxy,
    /// Weather vectors of training images while the feature net is frozen.
    v_cache: HashMap<usize, Tensor<f32>>,
}

impl Trainer {
    pub fn new(model: Model<f32>, config: TrainConfig) -> Result<Self> {
        Self::starting_at(model, config, Phase::Pretrain, ClassAverageBank::default())
    }

    /// Start at the beginning of `phase` with an already trained feature
    /// network and its bank.
    pub fn starting_at(
        model: Model<f32>,
        config: TrainConfig,
        phase: Phase,
        bank: ClassAverageBank<f32>,
    ) -> Result<Self> {
        config.validate()?;
        let proxy = PerceptualProxy::new(config.proxy_seed);
        Ok(Trainer {
            adam: Adam::new(config.adam(phase)),
            model,
            phase,
            step: 0,
            bank,
            log: Vec::new(),
            proxy,
            v_cache: HashMap::new(),
            config,
        })
    }

    pub fn proxy(&self) -> &PerceptualProxy {
        &self.proxy
    }

    pub fn log_csv(&self) -> String {
        log_csv(&self.log)
    }

    /// Run up to `max_steps` steps of `phase` (all remaining when `None`).
    /// Returns true once the phase has finished, after which the trainer
    /// points at the start of the next phase.
    pub fn run_phase(&mut self, data: &Dataset, phase: Phase, max_steps: Option<usize>) -> Result<bool> {
        if phase == Phase::Done {
            return Err(Error::Contract("nothing to run after fine-tuning".into()));
        }
        if self.phase != phase {
            return Err(Error::Contract(format!(
                "trainer is at phase {}, cannot run phase {}",
                self.phase.number(),
                phase.number()
            )));
        }
        let sampler = BalancedSampler::new(data, self.config.batch, self.config.seed)?;
        if phase == Phase::Pretrain && sampler.class_count() < 2 {
            return Err(Error::Contract(
                "contrastive pretraining needs at least two weather classes".into(),
            ));
        }
        if phase != Phase::Pretrain && self.bank.is_empty() {
            return Err(Error::Contract(
                "restoration training needs a pretrained feature network and its class bank".into(),
            ));
        }
        let total = self.config.phase_steps(phase);
        let mut budget = max_steps.unwrap_or(usize::MAX);
        while self.step < total && budget > 0 {
            let batch = sampler.batch_indices(phase, self.step);
            let loss = self.train_step(data, phase, &batch).map_err(|e| {
                if non_finite(&e) {
                    Error::NonFiniteLoss {
                        phase: phase.number(),
                        step: self.step,
                        seeds: batch.iter().map(|&i| data.samples[i].seed).collect(),
                    }
                } else {
                    e
                }
            })?;
            self.step += 1;
            budget -= 1;
            let (val_psnr, val_ssim) = if phase != Phase::Pretrain
                && (self.step % self.config.val_every == 0 || self.step == total)
            {
                let (p, s) = validate(&self.model, data, Split::Val, self.config.val_per_class)?;
                (Some(p), Some(s))
            } else {
                (None, None)
            };
            self.log.push(LogRow {
                step: self.step,
                phase: phase.number(),
                loss,
                val_psnr,
                val_ssim,
                lr: self.config.lr(phase),
            });
        }
        if self.step < total {
            return Ok(false);
        }
        if phase != Phase::Restore {
            self.bank = compute_bank(&self.model, data)?;
        }
        self.v_cache.clear();
        self.phase = phase.next();
        self.step = 0;
        self.adam = Adam::new(self.config.adam(self.phase));
        Ok(true)
    }

    /// Contrastive pretraining to completion.
    pub fn pretrain(&mut self, data: &Dataset) -> Result<()> {
        self.run_phase(data, Phase::Pretrain, None).map(|_| ())
    }

    pub fn train_restoration(&mut self, data: &Dataset) -> Result<()> {
        self.run_phase(data, Phase::Restore, None).map(|_| ())
    }

    pub fn finetune(&mut self, data: &Dataset) -> Result<()> {
        self.run_phase(data, Phase::Finetune, None).map(|_| ())
    }

    /// All remaining phases.
    pub fn run_all(&mut self, data: &Dataset) -> Result<()> {
        while self.phase != Phase::Done {
            self.run_phase(data, self.phase, None)?;
        }
        Ok(())
    }

    fn cached_vector(&mut self, data: &Dataset, i: usize) -> Result<Tensor<f32>> {
        if let Some(v) = self.v_cache.get(&i) {
            return Ok(v.clone());
        }
        let v = self.model.extract_features(&data.samples[i].degraded)?.values;
        self.v_cache.insert(i, v.clone());
        Ok(v)
    }

    fn train_step(&mut self, data: &Dataset, phase: Phase, batch: &[usize]) -> Result<f64> {
        let cached = if phase == Phase::Restore {
            batch
                .iter()
                .map(|&i| self.cached_vector(data, i))
                .collect::<Result<Vec<_>>>()?
        } else {
            Vec::new()
        };
        let tape = Tape::new();
        let trainable = move |g: ParamGroup| match phase {
            Phase::Pretrain => g == ParamGroup::Feature,
            Phase::Restore => g == ParamGroup::Backbone,
            Phase::Finetune | Phase::Done => true,
        };
        let p = self.model.bind(&tape, trainable)?;
        let images = batch
            .iter()
            .map(|&i| tape.constant(data.samples[i].degraded.clone()))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        let loss = match phase {
            Phase::Pretrain => {
                let vs = images
                    .iter()
                    .map(|&x| self.model.features_var(&p, x))
                    .collect::<Result<Vec<_>>>()?;
                let labels = batch
                    .iter()
                    .map(|&i| data.samples[i].label().map(|c| c.index()))
                    .collect::<Result<Vec<_>>>()?;
                contrastive_loss(&vs, &labels, self.config.margin)?
            }
            _ => {
                let vs: Vec<Var<'_, f32>> = if phase == Phase::Restore {
                    cached
                        .into_iter()
                        .map(|v| tape.constant(v))
                        .collect::<std::result::Result<_, _>>()?
                } else {
                    images
                        .iter()
                        .map(|&x| self.model.features_var(&p, x))
                        .collect::<Result<_>>()?
                };
                let outputs = self.model.backbone.restore_batch(&p, &images, Some(&vs))?;
                let mut sum: Option<Var<'_, f32>> = None;
                for (y, &i) in outputs.into_iter().zip(batch) {
                    let t = tape.constant(data.samples[i].clean.clone())?;
                    let l = total_loss(&self.proxy, y, t, self.config.lambda, self.config.smooth_l1_beta)?;
                    sum = Some(match sum {
                        None => l,
                        Some(s) => s.add(l)?,
                    });
                }
                sum.expect("non-empty batch").scale(1.0 / batch.len() as f32)?
            }
        };
        let value = loss.item()? as f64;
        if !value.is_finite() {
            return Err(TensorError::NonFinite("loss").into());
        }
        tape.backward(loss)?;
        let grads: Vec<(ParamId, Tensor<f32>)> = p
            .vars()
            .iter()
            .enumerate()
            .filter(|(_, v)| v.requires_grad())
            .map(|(id, &v)| Ok((id, tape.grad(v)?)))
            .collect::<Result<_>>()?;
        if grads.iter().any(|(_, g)| !g.is_finite()) {
            return Err(TensorError::NonFinite("gradient").into());
        }
        drop(p);
        drop(tape);
        self.adam.step(&mut self.model.store, &grads)?;
        Ok(value)
    }

    /// Full training state: weights, optimizer moments, bank, log and
    /// position in the schedule.
    pub fn to_container(&self) -> Container {
        let mut c = Container::new();
        write_model(&mut c, &self.model);
        c.push_text("meta/train_config", &self.config.to_text());
        c.push_u64("meta/phase", self.phase.number() as u64);
        c.push_u64("meta/step", self.step as u64);
        c.push_u64("meta/proxy_seed", self.proxy.seed);
        c.push_u64("adam/t", self.adam.t);
        for (&id, m) in &self.adam.state {
            let name = &self.model.store.entry(id).name;
            let shape = self.model.store.get(id).shape();
            let t = |d: &[f32]| Tensor::new(shape, d.to_vec()).expect("moment matches parameter");
            c.push(format!("adam.m/{name}"), Entry::F32(t(&m.m)));
            c.push(format!("adam.v/{name}"), Entry::F32(t(&m.v)));
        }
        write_bank(&mut c, &self.bank);
        c.push_text("meta/log", &self.log_csv());
        c
    }

    pub fn from_container(c: &Container) -> Result<Self> {
        let model: Model<f32> = read_model(c)?;
        let config = TrainConfig::default().apply(&KeyValues::parse(&c.text("meta/train_config")?)?)?;
        let phase = Phase::from_number(c.u64("meta/phase")? as u8)?;
        let mut t = Trainer::starting_at(model, config, phase, read_bank(c)?)?;
        if c.u64("meta/proxy_seed")? != t.proxy.seed {
            return Err(Error::format("checkpoint", "perceptual proxy seed differs from the config"));
        }
        t.step = c.u64("meta/step")? as usize;
        t.adam.t = c.u64("adam/t")?;
        for name in c.names_under("adam.m/") {
            let id = t
                .model
                .store
                .id(name)
                .ok_or_else(|| Error::format("checkpoint", format!("optimizer state for unknown {name}")))?;
            let m: Tensor<f32> = c.require(&format!("adam.m/{name}"))?.to_tensor();
            let v: Tensor<f32> = c.require(&format!("adam.v/{name}"))?.to_tensor();
            if m.shape() != t.model.store.get(id).shape() || v.shape() != m.shape() {
                return Err(Error::format("checkpoint", format!("optimizer state for {name} has the wrong shape")));
            }
            t.adam.state.insert(
                id,
                Moments {
                    m: m.into_data(),
                    v: v.into_data(),
                },
            );
        }
        t.log = parse_log(&c.text("meta/log")?)?;
        Ok(t)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        self.to_container().save(path)
    }

    pub fn load(path: &Path) -> Result<Self> {
        Self::from_container(&Container::load(path)?)
    }
}
