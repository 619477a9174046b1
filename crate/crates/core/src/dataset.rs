//! Synthetic paired datasets and their binary container.
//!
//! Container layout (little-endian): magic `MWDS`, `u32` version 1, `u64`
//! sample count, then per sample `u64` seed, `u8` class bitmask, `f32`
//! severity, `u8` split tag, and the clean and degraded images each as
//! `u8` ndim, `u64` dims, `f32` data.

use std::fmt::Write as _;
use std::path::Path;

use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use hyperweather_tensor::Tensor;

use crate::config::KeyValues;
use crate::error::{Error, Result};
use crate::synth::{degrade, derive_seed, gen_clean, ClassSet, WeatherClass};

const MAGIC: &[u8; 4] = b"MWDS";
const VERSION: u32 = 1;

/// Severity is drawn uniformly from this range.
pub const SEVERITY_RANGE: (f64, f64) = (0.5, 1.0);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Split {
    Train,
    Val,
    Test,
}

impl Split {
    pub fn code(self) -> u8 {
        match self {
            Split::Train => 0,
            Split::Val => 1,
            Split::Test => 2,
        }
    }

    pub fn from_code(c: u8) -> Result<Self> {
        match c {
            0 => Ok(Split::Train),
            1 => Ok(Split::Val),
            2 => Ok(Split::Test),
            _ => Err(Error::format("dataset", format!("unknown split tag {c}"))),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Val => "val",
            Split::Test => "test",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherSample {
    pub clean: Tensor<f32>,
    pub degraded: Tensor<f32>,
    pub classes: ClassSet,
    pub severity: f32,
    pub seed: u64,
    pub split: Split,
}

impl WeatherSample {
    /// Rebuild a sample from its seed; classes are applied in canonical
    /// order.
    pub fn generate(seed: u64, classes: ClassSet, h: usize, w: usize, split: Split) -> Result<Self> {
        let clean = gen_clean(derive_seed(seed, 0), h, w)?;
        let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(seed, 2));
        let severity = rng.gen_range(SEVERITY_RANGE.0..=SEVERITY_RANGE.1) as f32;
        let degraded = degrade(&clean, &classes.classes(), severity as f64, derive_seed(seed, 1))?;
        Ok(WeatherSample {
            clean,
            degraded,
            classes,
            severity,
            seed,
            split,
        })
    }

    /// The single class of a non-hybrid sample.
    pub fn label(&self) -> Result<WeatherClass> {
        self.classes
            .single_class()
            .ok_or_else(|| Error::Contract(format!("sample {} has several classes", self.seed)))
    }

    /// Whether the stored images match a fresh regeneration bit for bit.
    pub fn verify(&self) -> Result<bool> {
        let (h, w) = (self.clean.shape()[1], self.clean.shape()[2]);
        let again = Self::generate(self.seed, self.classes, h, w, self.split)?;
        Ok(again == *self)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DatasetConfig {
    /// Samples per class, indexed like [`WeatherClass::ALL`].
    pub counts: [usize; 3],
    pub height: usize,
    pub width: usize,
    pub seed: u64,
}

impl Default for DatasetConfig {
    fn default() -> Self {
        DatasetConfig {
            counts: [200, 200, 200],
            height: 32,
            width: 32,
            seed: 7,
        }
    }
}

const DATA_KEYS: &[&str] = &["count.drop", "count.streak", "count.flake", "height", "width", "seed"];

impl DatasetConfig {
    /// Apply `data.*` keys on top of `self`.
    pub fn apply(mut self, kv: &KeyValues) -> Result<Self> {
        kv.check_known("data.", DATA_KEYS)?;
        for (i, class) in WeatherClass::ALL.iter().enumerate() {
            if let Some(v) = kv.get(&format!("data.count.{}", class.name()))? {
                self.counts[i] = v;
            }
        }
        if let Some(v) = kv.get("data.height")? {
            self.height = v;
        }
        if let Some(v) = kv.get("data.width")? {
            self.width = v;
        }
        if let Some(v) = kv.get("data.seed")? {
            self.seed = v;
        }
        Ok(self)
    }

    /// Canonical text form; parses back to an equal config.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for (class, n) in WeatherClass::ALL.iter().zip(self.counts) {
            let _ = writeln!(s, "data.count.{} = {n}", class.name());
        }
        let _ = writeln!(s, "data.height = {}", self.height);
        let _ = writeln!(s, "data.width = {}", self.width);
        let _ = writeln!(s, "data.seed = {}", self.seed);
        s
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Dataset {
    pub samples: Vec<WeatherSample>,
}

/// Train/val/test sizes for `n` samples of one class (80/10/10).
pub fn split_sizes(n: usize) -> (usize, usize, usize) {
    let train = (n as f64 * 0.8).round() as usize;
    let val = ((n as f64 * 0.1).round() as usize).min(n - train);
    (train, val, n - train - val)
}

impl Dataset {
    /// Equal-count single-class samples with a seeded per-class split.
    pub fn generate(cfg: &DatasetConfig) -> Result<Self> {
        if cfg.counts.contains(&0) {
            return Err(Error::Config(format!("per-class counts {:?} must be positive", cfg.counts)));
        }
        let mut samples = Vec::with_capacity(cfg.counts.iter().sum());
        for (ci, class) in WeatherClass::ALL.into_iter().enumerate() {
            let n = cfg.counts[ci];
            let (train, val, _) = split_sizes(n);
            let mut order: Vec<usize> = (0..n).collect();
            let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, 0x5A17 + ci as u64));
            order.shuffle(&mut rng);
            let mut split_of = vec![Split::Test; n];
            for (rank, &i) in order.iter().enumerate() {
                split_of[i] = if rank < train {
                    Split::Train
                } else if rank < train + val {
                    Split::Val
                } else {
                    Split::Test
                };
            }
            for (i, split) in split_of.into_iter().enumerate() {
                let seed = derive_seed(cfg.seed, ((ci as u64) << 32) | i as u64);
                samples.push(WeatherSample::generate(
                    seed,
                    ClassSet::single(class),
                    cfg.height,
                    cfg.width,
                    split,
                )?);
            }
        }
        Ok(Dataset { samples })
    }

    /// `count` samples degraded by streaks-with-haze and then flakes; never
    /// used for training.
    pub fn hybrid(count: usize, h: usize, w: usize, seed: u64) -> Result<Self> {
        let classes = ClassSet::of(&[WeatherClass::StreakHaze, WeatherClass::Flake]);
        let samples = (0..count)
            .map(|i| WeatherSample::generate(derive_seed(seed, 0x4859_0000 + i as u64), classes, h, w, Split::Test))
            .collect::<Result<Vec<_>>>()?;
        Ok(Dataset { samples })
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    pub fn split(&self, split: Split) -> Vec<&WeatherSample> {
        self.samples.iter().filter(|s| s.split == split).collect()
    }

    /// Indices into `samples` of the given split and single class.
    pub fn indices(&self, split: Split, class: WeatherClass) -> Vec<usize> {
        self.samples
            .iter()
            .enumerate()
            .filter(|(_, s)| s.split == split && s.classes == ClassSet::single(class))
            .map(|(i, _)| i)
            .collect()
    }

    /// Distinct single classes present in a split, in canonical order.
    pub fn classes(&self, split: Split) -> Vec<WeatherClass> {
        WeatherClass::ALL
            .into_iter()
            .filter(|&c| !self.indices(split, c).is_empty())
            .collect()
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        out.extend_from_slice(&(self.samples.len() as u64).to_le_bytes());
        for s in &self.samples {
            out.extend_from_slice(&s.seed.to_le_bytes());
            out.push(s.classes.0);
            out.extend_from_slice(&s.severity.to_le_bytes());
            out.push(s.split.code());
            write_image(&mut out, &s.clean);
            write_image(&mut out, &s.degraded);
        }
        out
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        let mut r = Reader { buf: bytes, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("dataset", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("dataset", format!("unsupported version {version}")));
        }
        let n = r.u64()? as usize;
        let mut samples = Vec::with_capacity(n.min(1 << 20));
        for _ in 0..n {
            let seed = r.u64()?;
            let classes = ClassSet::from_bits(r.u8()?)?;
            let severity = f32::from_le_bytes(r.take(4)?.try_into().expect("4 bytes"));
            let split = Split::from_code(r.u8()?)?;
            let clean = read_image(&mut r)?;
            let degraded = read_image(&mut r)?;
            samples.push(WeatherSample {
                clean,
                degraded,
                classes,
                severity,
                seed,
                split,
            });
        }
        if r.pos != bytes.len() {
            return Err(Error::format("dataset", "trailing bytes"));
        }
        Ok(Dataset { samples })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Generate and persist a dataset in one call.
pub fn make_dataset(cfg: &DatasetConfig, path: &Path) -> Result<Dataset> {
    let ds = Dataset::generate(cfg)?;
    ds.save(path)?;
    Ok(ds)
}

fn write_image(out: &mut Vec<u8>, t: &Tensor<f32>) {
    out.push(t.ndim() as u8);
    for &d in t.shape() {
        out.extend_from_slice(&(d as u64).to_le_bytes());
    }
    for v in t.data() {
        out.extend_from_slice(&v.to_le_bytes());
    }
}

pub(crate) struct Reader<'a> {
    pub buf: &'a [u8],
    pub pos: usize,
}

impl<'a> Reader<'a> {
    pub fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        if self.buf.len() - self.pos < n {
            return Err(Error::format("container", "unexpected end of data"));
        }
        let s = &self.buf[self.pos..self.pos + n];
        self.pos += n;
        Ok(s)
    }

    pub fn u8(&mut self) -> Result<u8> {
        Ok(self.take(1)?[0])
    }

    pub fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    pub fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    pub fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }

    pub fn dims(&mut self) -> Result<Vec<usize>> {
        let ndim = self.u8()? as usize;
        let dims = (0..ndim).map(|_| self.u64().map(|d| d as usize)).collect::<Result<Vec<_>>>()?;
        let numel = dims.iter().try_fold(1usize, |a, &d| a.checked_mul(d));
        match numel {
            Some(n) if n <= self.buf.len() => Ok(dims),
            _ => Err(Error::format("container", format!("implausible dims {dims:?}"))),
        }
    }
}

fn read_image(r: &mut Reader<'_>) -> Result<Tensor<f32>> {
    let dims = r.dims()?;
    let n: usize = dims.iter().product();
    let raw = r.take(n * 4)?;
    let data = raw
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
        .collect();
    Ok(Tensor::new(&dims, data)?)
}
