//! Feature network and restoration backbone sharing one parameter store.

use hyperweather_tensor::{Real, Tape, Tensor, Var};

use crate::backbone::Backbone;
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::feature::{FeatureNet, VectorSource, WeatherFeatureVector};
use crate::params::{Bound, Builder, ParamGroup, ParamStore};
use crate::synth::derive_seed;

#[derive(Debug, Clone)]
pub struct Model<T: Real = f32> {
    pub config: ModelConfig,
    pub store: ParamStore<T>,
    pub feature: FeatureNet,
    pub backbone: Backbone,
}

impl<T: Real> Model<T> {
    /// Build with every initial value drawn from `config.seed`.
    pub fn new(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut store = ParamStore::new();
        let feature = {
            let mut b = Builder::new(&mut store, derive_seed(config.seed, 1), ParamGroup::Feature);
            FeatureNet::build(&mut b, config)?
        };
        let backbone = {
            let mut b = Builder::new(&mut store, derive_seed(config.seed, 2), ParamGroup::Backbone);
            Backbone::build(&mut b, config)?
        };
        Ok(Model {
            config: config.clone(),
            store,
            feature,
            backbone,
        })
    }

    pub fn cast<U: Real>(&self) -> Model<U> {
        Model {
            config: self.config.clone(),
            store: self.store.cast(),
            feature: self.feature.clone(),
            backbone: self.backbone.clone(),
        }
    }

    /// Register all parameters on `tape`; `trainable` picks which groups
    /// receive gradients.
    pub fn bind<'t>(&self, tape: &'t Tape<T>, trainable: impl Fn(ParamGroup) -> bool) -> Result<Bound<'t, T>> {
        self.store.bind(tape, trainable)
    }

    pub fn features_var<'t>(&self, p: &Bound<'t, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        self.feature.forward(p, image)
    }

    /// Restore on an existing tape. `v` may be `None` only when the
    /// backbone has no adaptive slots.
    pub fn restore_var<'t>(&self, p: &Bound<'t, T>, image: Var<'t, T>, v: Option<Var<'t, T>>) -> Result<Var<'t, T>> {
        self.backbone.restore(p, image, v)
    }

    /// `v = F_feat(I; τ)`.
    pub fn extract_features(&self, image: &Tensor<T>) -> Result<WeatherFeatureVector<T>> {
        let tape = Tape::new();
        let p = self.bind(&tape, |_| false)?;
        let v = self.features_var(&p, tape.constant(image.clone())?)?;
        WeatherFeatureVector::new((*v.value()).clone(), VectorSource::Computed)
    }

    /// `Y = F_res(I; θ_fix, θ_adap(v))`, unclamped.
    pub fn restore(&self, image: &Tensor<T>, v: &WeatherFeatureVector<T>) -> Result<Tensor<T>> {
        if v.dim() != self.config.feature_dim {
            return Err(Error::Config(format!(
                "weather vector has {} entries, model expects {}",
                v.dim(),
                self.config.feature_dim
            )));
        }
        let tape = Tape::new();
        let p = self.bind(&tape, |_| false)?;
        let x = tape.constant(image.clone())?;
        let v = tape.constant(v.values.clone())?;
        Ok((*self.restore_var(&p, x, Some(v))?.value()).clone())
    }

    /// Multiply-accumulates recorded by one restore (and optionally the
    /// feature pass) on an `h×w` input.
    pub fn traced_macs(&self, h: usize, w: usize, with_features: bool) -> Result<u64> {
        let tape = Tape::new();
        let p = self.bind(&tape, |_| false)?;
        let x = tape.constant(Tensor::full(&[3, h, w], T::of(0.5)))?;
        let v = if with_features {
            self.features_var(&p, x)?
        } else {
            tape.constant(Tensor::full(&[self.config.feature_dim], T::of(0.1)))?
        };
        let before = tape.macs();
        let before = if with_features { 0 } else { before };
        self.restore_var(&p, x, Some(v))?;
        Ok(tape.macs() - before)
    }
}
