//! Named-tensor container used for model and training-state checkpoints.
//!
//! Layout (little-endian): magic `MWFC`, `u32` version 1, `u32` entry count;
//! per entry `u16` name length, UTF-8 name, `u8` dtype code (0 = f32,
//! 1 = f64), `u8` ndim, `u64` dims, raw data; then a `u32` CRC32 of every
//! preceding byte. Text and integer metadata are stored as tensors too:
//! text as one f32 per byte, a `u64` as its two `u32` halves in f64.

use std::collections::BTreeSet;
use std::path::Path;

use hyperweather_tensor::{DType, Real, Tensor};

use crate::config::{KeyValues, ModelConfig};
use crate::dataset::Reader;
use crate::error::{Error, Result};
use crate::feature::ClassAverageBank;
use crate::model::Model;
use crate::synth::WeatherClass;

const MAGIC: &[u8; 4] = b"MWFC";
const VERSION: u32 = 1;

#[derive(Debug, Clone, PartialEq)]
pub enum Entry {
    F32(Tensor<f32>),
    F64(Tensor<f64>),
}

impl Entry {
    pub fn shape(&self) -> &[usize] {
        match self {
            Entry::F32(t) => t.shape(),
            Entry::F64(t) => t.shape(),
        }
    }

    /// The stored values converted to `T`.
    pub fn to_tensor<T: Real>(&self) -> Tensor<T> {
        match self {
            Entry::F32(t) => t.cast(),
            Entry::F64(t) => t.cast(),
        }
    }

    pub fn from_tensor<T: Real>(t: &Tensor<T>) -> Self {
        match T::DTYPE {
            DType::F32 => Entry::F32(t.cast()),
            DType::F64 => Entry::F64(t.cast()),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default)]
pub struct Container {
    pub entries: Vec<(String, Entry)>,
}

impl Container {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, name: impl Into<String>, entry: Entry) {
        self.entries.push((name.into(), entry));
    }

    pub fn push_text(&mut self, name: impl Into<String>, text: &str) {
        let data: Vec<f32> = text.bytes().map(f32::from).collect();
        self.push(name, Entry::F32(Tensor::vector(data)));
    }

    pub fn push_u64(&mut self, name: impl Into<String>, value: u64) {
        let halves = vec![(value >> 32) as f64, (value & 0xFFFF_FFFF) as f64];
        self.push(name, Entry::F64(Tensor::vector(halves)));
    }

    pub fn get(&self, name: &str) -> Option<&Entry> {
        self.entries.iter().find(|(n, _)| n == name).map(|(_, e)| e)
    }

    pub fn require(&self, name: &str) -> Result<&Entry> {
        self.get(name)
            .ok_or_else(|| Error::format("checkpoint", format!("missing entry {name}")))
    }

    pub fn text(&self, name: &str) -> Result<String> {
        let t: Tensor<f64> = self.require(name)?.to_tensor();
        let bytes = t
            .data()
            .iter()
            .map(|&b| {
                if (0.0..=255.0).contains(&b) && b.fract() == 0.0 {
                    Ok(b as u8)
                } else {
                    Err(Error::format("checkpoint", format!("{name} is not text")))
                }
            })
            .collect::<Result<Vec<u8>>>()?;
        String::from_utf8(bytes).map_err(|_| Error::format("checkpoint", format!("{name} is not UTF-8")))
    }

    pub fn u64(&self, name: &str) -> Result<u64> {
        let t: Tensor<f64> = self.require(name)?.to_tensor();
        match t.data() {
            [hi, lo] if *hi >= 0.0 && *lo >= 0.0 && *hi < 4294967296.0 && *lo < 4294967296.0 => {
                Ok(((*hi as u64) << 32) | *lo as u64)
            }
            _ => Err(Error::format("checkpoint", format!("{name} is not an integer entry"))),
        }
    }

    /// Names under `prefix`, with the prefix removed.
    pub fn names_under<'a>(&'a self, prefix: &'a str) -> impl Iterator<Item = &'a str> + 'a {
        self.entries.iter().filter_map(move |(n, _)| n.strip_prefix(prefix))
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let mut out = Vec::new();
        out.extend_from_slice(MAGIC);
        out.extend_from_slice(&VERSION.to_le_bytes());
        let count = u32::try_from(self.entries.len())
            .map_err(|_| Error::format("checkpoint", "too many entries"))?;
        out.extend_from_slice(&count.to_le_bytes());
        for (name, entry) in &self.entries {
            let len = u16::try_from(name.len())
                .map_err(|_| Error::format("checkpoint", format!("entry name too long: {name}")))?;
            out.extend_from_slice(&len.to_le_bytes());
            out.extend_from_slice(name.as_bytes());
            let (code, shape) = match entry {
                Entry::F32(t) => (DType::F32.code(), t.shape()),
                Entry::F64(t) => (DType::F64.code(), t.shape()),
            };
            out.push(code);
            out.push(shape.len() as u8);
            for &d in shape {
                out.extend_from_slice(&(d as u64).to_le_bytes());
            }
            match entry {
                Entry::F32(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
                Entry::F64(t) => t.data().iter().for_each(|v| v.write_le(&mut out)),
            }
        }
        let crc = crc32fast::hash(&out);
        out.extend_from_slice(&crc.to_le_bytes());
        Ok(out)
    }

    pub fn from_bytes(bytes: &[u8]) -> Result<Self> {
        if bytes.len() < 16 {
            return Err(Error::format("checkpoint", "file too short"));
        }
        let (payload, tail) = bytes.split_at(bytes.len() - 4);
        let stored = u32::from_le_bytes(tail.try_into().expect("4 bytes"));
        if crc32fast::hash(payload) != stored {
            return Err(Error::format("checkpoint", "CRC mismatch"));
        }
        let mut r = Reader { buf: payload, pos: 0 };
        if r.take(4)? != MAGIC {
            return Err(Error::format("checkpoint", "bad magic"));
        }
        let version = r.u32()?;
        if version != VERSION {
            return Err(Error::format("checkpoint", format!("unsupported version {version}")));
        }
        let count = r.u32()? as usize;
        let mut entries = Vec::with_capacity(count.min(1 << 16));
        let mut seen = BTreeSet::new();
        for _ in 0..count {
            let len = r.u16()? as usize;
            let name = std::str::from_utf8(r.take(len)?)
                .map_err(|_| Error::format("checkpoint", "entry name is not UTF-8"))?
                .to_string();
            if !seen.insert(name.clone()) {
                return Err(Error::format("checkpoint", format!("duplicate entry {name}")));
            }
            let dtype = DType::from_code(r.u8()?)
                .ok_or_else(|| Error::format("checkpoint", format!("unknown dtype in {name}")))?;
            let dims = r.dims()?;
            let n: usize = dims.iter().product();
            let raw = r.take(n * dtype.size())?;
            let entry = match dtype {
                DType::F32 => Entry::F32(Tensor::new(&dims, raw.chunks_exact(4).map(f32::read_le).collect())?),
                DType::F64 => Entry::F64(Tensor::new(&dims, raw.chunks_exact(8).map(f64::read_le).collect())?),
            };
            entries.push((name, entry));
        }
        if r.pos != payload.len() {
            return Err(Error::format("checkpoint", "trailing bytes"));
        }
        Ok(Container { entries })
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        std::fs::write(path, self.to_bytes()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: &Path) -> Result<Self> {
        let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
        Self::from_bytes(&bytes)
    }
}

/// Append `param/<name>` entries and the config echo.
pub fn write_model<T: Real>(c: &mut Container, model: &Model<T>) {
    c.push_text("meta/config", &model.config.to_text());
    for e in model.store.entries() {
        c.push(format!("param/{}", e.name), Entry::from_tensor(e.value.as_ref()));
    }
}

/// Rebuild a model from its config echo and check that the stored
/// parameters are exactly the ones that config defines.
pub fn read_model<T: Real>(c: &Container) -> Result<Model<T>> {
    let text = c.text("meta/config")?;
    let config = ModelConfig::default().apply(&KeyValues::parse(&text)?)?;
    let mut model = Model::<T>::new(&config)?;
    let expected: BTreeSet<&str> = model.store.entries().iter().map(|e| e.name.as_str()).collect();
    if let Some(extra) = c.names_under("param/").find(|n| !expected.contains(n)) {
        return Err(Error::format("checkpoint", format!("unexpected parameter {extra}")));
    }
    for id in 0..model.store.len() {
        let name = format!("param/{}", model.store.entry(id).name);
        let entry = c.require(&name)?;
        if entry.shape() != model.store.get(id).shape() {
            return Err(Error::format(
                "checkpoint",
                format!(
                    "{name} has shape {:?}, config expects {:?}",
                    entry.shape(),
                    model.store.get(id).shape()
                ),
            ));
        }
        model.store.set(id, entry.to_tensor())?;
    }
    Ok(model)
}

pub fn write_bank<T: Real>(c: &mut Container, bank: &ClassAverageBank<T>) {
    for (class, v, n) in bank.iter() {
        c.push(format!("bank/{}", class.name()), Entry::from_tensor(v));
        c.push_u64(format!("bank_count/{}", class.name()), n as u64);
    }
}

pub fn read_bank<T: Real>(c: &Container) -> Result<ClassAverageBank<T>> {
    let mut bank = ClassAverageBank::default();
    let names: Vec<String> = c.names_under("bank/").map(str::to_string).collect();
    for name in names {
        let class = WeatherClass::parse(&name)?;
        let v = c.require(&format!("bank/{name}"))?.to_tensor();
        let n = c.u64(&format!("bank_count/{name}"))? as usize;
        bank.insert(class, v, n);
    }
    Ok(bank)
}

/// Model weights plus class-average bank, the artifact used for inference.
pub fn save_model<T: Real>(path: &Path, model: &Model<T>, bank: &ClassAverageBank<T>) -> Result<()> {
    let mut c = Container::new();
    write_model(&mut c, model);
    write_bank(&mut c, bank);
    c.save(path)
}

pub fn load_model<T: Real>(path: &Path) -> Result<(Model<T>, ClassAverageBank<T>)> {
    let c = Container::load(path)?;
    Ok((read_model(&c)?, read_bank(&c)?))
}
