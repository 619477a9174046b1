//! Named parameter registry.
//!
//! Stored tensors are the fixed weights (including the weights of every
//! hyper-network). Parameters produced per input by a hyper-network are not
//! stored; they are registered as [`AdaptiveSlot`] descriptors so the two
//! sets can be enumerated and counted side by side.

use std::collections::HashMap;
use std::sync::Arc;

use hyperweather_tensor::{Real, Tape, Tensor, Var};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::nn::{Conv, LayerNorm, Linear};

pub type ParamId = usize;

/// Which network a stored tensor belongs to.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamGroup {
    /// Weather feature extractor.
    Feature,
    /// Restoration backbone, including its hyper-networks.
    Backbone,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ParamRole {
    /// Used directly by a layer.
    Weight,
    /// Weight of a hyper-network that generates layer parameters.
    Generator,
}

#[derive(Debug, Clone)]
pub struct ParamEntry<T> {
    pub name: String,
    pub value: Arc<Tensor<T>>,
    pub group: ParamGroup,
    pub role: ParamRole,
}

/// Shape descriptor of a parameter that is regenerated from the weather
/// vector on every forward pass.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct AdaptiveSlot {
    pub name: String,
    pub shape: Vec<usize>,
}

impl AdaptiveSlot {
    pub fn numel(&self) -> usize {
        self.shape.iter().product()
    }
}

/// Where a layer finds one of its parameters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Slot {
    Fixed(ParamId),
    /// Index into the generated outputs of the current forward pass.
    Generated(usize),
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore<T> {
    entries: Vec<ParamEntry<T>>,
    index: HashMap<String, ParamId>,
    adaptive: Vec<AdaptiveSlot>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            entries: Vec::new(),
            index: HashMap::new(),
            adaptive: Vec::new(),
        }
    }

    fn claim_name(&self, name: &str) -> Result<()> {
        if self.index.contains_key(name) || self.adaptive.iter().any(|s| s.name == name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        Ok(())
    }

    pub fn add(&mut self, name: &str, value: Tensor<T>, group: ParamGroup, role: ParamRole) -> Result<ParamId> {
        self.claim_name(name)?;
        let id = self.entries.len();
        self.entries.push(ParamEntry {
            name: name.to_string(),
            value: Arc::new(value),
            group,
            role,
        });
        self.index.insert(name.to_string(), id);
        Ok(id)
    }

    pub fn add_adaptive(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        self.claim_name(name)?;
        self.adaptive.push(AdaptiveSlot {
            name: name.to_string(),
            shape: shape.to_vec(),
        });
        Ok(self.adaptive.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ParamEntry<T>] {
        &self.entries
    }

    pub fn entry(&self, id: ParamId) -> &ParamEntry<T> {
        &self.entries[id]
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.entries[id].value
    }

    /// Mutable access; copies the buffer first if a tape still shares it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        Arc::make_mut(&mut self.entries[id].value)
    }

    pub fn set(&mut self, id: ParamId, value: Tensor<T>) -> Result<()> {
        let entry = &mut self.entries[id];
        if entry.value.shape() != value.shape() {
            return Err(Error::Config(format!(
                "parameter {} has shape {:?}, got {:?}",
                entry.name,
                entry.value.shape(),
                value.shape()
            )));
        }
        entry.value = Arc::new(value);
        Ok(())
    }

    pub fn adaptive_slots(&self) -> &[AdaptiveSlot] {
        &self.adaptive
    }

    /// Stored backbone tensors (the fixed partition, hyper-network weights included).
    pub fn fixed_backbone(&self) -> impl Iterator<Item = &ParamEntry<T>> {
        self.entries.iter().filter(|e| e.group == ParamGroup::Backbone)
    }

    pub fn count(&self, group: ParamGroup) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn count_role(&self, group: ParamGroup, role: ParamRole) -> usize {
        self.entries
            .iter()
            .filter(|e| e.group == group && e.role == role)
            .map(|e| e.value.numel())
            .sum()
    }

    pub fn adaptive_count(&self) -> usize {
        self.adaptive.iter().map(AdaptiveSlot::numel).sum()
    }

    /// Register every stored tensor on `tape`, tracking gradients only for the
    /// groups selected by `trainable`.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: impl Fn(ParamGroup) -> bool) -> Result<Bound<'t, T>> {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf_shared(Arc::clone(&e.value), trainable(e.group)))
            .collect::<std::result::Result<Vec<_>, _>>()?;
        Ok(Bound { vars })
    }

    /// FNV-1a over names and raw value bits; equal checksums mean equal weights.
    pub fn checksum(&self) -> u64 {
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut eat = |b: u8| {
            h ^= b as u64;
            h = h.wrapping_mul(0x0100_0000_01b3);
        };
        for e in &self.entries {
            e.name.bytes().for_each(&mut eat);
            for v in e.value.data() {
                v.as_f64().to_bits().to_le_bytes().into_iter().for_each(&mut eat);
            }
        }
        h
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            entries: self
                .entries
                .iter()
                .map(|e| ParamEntry {
                    name: e.name.clone(),
                    value: Arc::new(e.value.cast()),
                    group: e.group,
                    role: e.role,
                })
                .collect(),
            index: self.index.clone(),
            adaptive: self.adaptive.clone(),
        }
    }
}

/// Stored parameters registered on one tape, indexed by [`ParamId`].
pub struct Bound<'t, T: Real> {
    vars: Vec<Var<'t, T>>,
}

impl<'t, T: Real> Bound<'t, T> {
    /// Wrap vars that were registered by hand, one per stored entry in order.
    pub fn from_vars(vars: Vec<Var<'t, T>>) -> Self {
        Bound { vars }
    }

    pub fn var(&self, id: ParamId) -> Var<'t, T> {
        self.vars[id]
    }

    pub fn vars(&self) -> &[Var<'t, T>] {
        &self.vars
    }
}

/// Creates parameters in a fixed order from one seeded stream, so a
/// configuration and seed determine every initial value.
pub struct Builder<'a, T: Real> {
    store: &'a mut ParamStore<T>,
    rng: ChaCha8Rng,
    group: ParamGroup,
    prefix: String,
}

impl<'a, T: Real> Builder<'a, T> {
    pub fn new(store: &'a mut ParamStore<T>, seed: u64, group: ParamGroup) -> Self {
        Builder {
            store,
            rng: ChaCha8Rng::seed_from_u64(seed),
            group,
            prefix: String::new(),
        }
    }

    pub fn store(&self) -> &ParamStore<T> {
        self.store
    }

    pub fn rng(&mut self) -> &mut ChaCha8Rng {
        &mut self.rng
    }

    pub fn set_prefix(&mut self, prefix: &str) {
        self.prefix = prefix.to_string();
    }

    fn full_name(&self, name: &str) -> String {
        if self.prefix.is_empty() {
            name.to_string()
        } else {
            format!("{}.{}", self.prefix, name)
        }
    }

    pub fn tensor(&mut self, name: &str, value: Tensor<T>, role: ParamRole) -> Result<ParamId> {
        let full = self.full_name(name);
        self.store.add(&full, value, self.group, role)
    }

    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, role: ParamRole) -> Result<ParamId> {
        let value = Tensor::uniform(shape, bound, &mut self.rng);
        self.tensor(name, value, role)
    }

    pub fn adaptive(&mut self, name: &str, shape: &[usize]) -> Result<usize> {
        let full = self.full_name(name);
        self.store.add_adaptive(&full, shape)
    }

    pub fn linear(&mut self, name: &str, din: usize, dout: usize) -> Result<Linear> {
        let bound = 1.0 / (din as f64).sqrt();
        let w = self.uniform(&format!("{name}.w"), &[din, dout], bound, ParamRole::Weight)?;
        let b = self.tensor(&format!("{name}.b"), Tensor::zeros(&[dout]), ParamRole::Weight)?;
        Ok(Linear { w, b })
    }

    pub fn layer_norm(&mut self, name: &str, channels: usize) -> Result<LayerNorm> {
        let gamma = self.tensor(&format!("{name}.g"), Tensor::ones(&[channels]), ParamRole::Weight)?;
        let beta = self.tensor(&format!("{name}.b"), Tensor::zeros(&[channels]), ParamRole::Weight)?;
        Ok(LayerNorm { gamma, beta })
    }

    pub fn conv(&mut self, name: &str, cin: usize, cout: usize, k: usize, stride: usize, gain: f64) -> Result<Conv> {
        let bound = gain / ((cin * k * k) as f64).sqrt();
        let w = self.uniform(&format!("{name}.w"), &[cout, cin, k, k], bound, ParamRole::Weight)?;
        let b = self.tensor(&format!("{name}.b"), Tensor::zeros(&[cout]), ParamRole::Weight)?;
        Ok(Conv {
            w,
            b,
            stride,
            pad: k / 2,
        })
    }
}
