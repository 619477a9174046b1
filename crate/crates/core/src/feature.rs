//! The weather feature network and its contrastive objective.
//!
//! Two strided transformer stages summarize the image; the Gram matrix of
//! each stage's mean-centered tokens discards spatial layout and the
//! average scene color while keeping channel co-variation statistics. The
//! upper triangle of each Gram is layer-normalized and embedded by a small
//! perceptron; both embeddings are concatenated, projected to the weather
//! vector `v` and layer-normalized.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::sync::Arc;

use hyperweather_tensor::{Real, Tape, Tensor, Var};

use crate::blocks::{Block, BlockSpec, TokenLayout};
use crate::config::ModelConfig;
use crate::error::{Error, Result};
use crate::hyper::HyperBank;
use crate::nn::{image_to_tokens, Activation, Conv, Ctx, LayerNorm, Linear};
use crate::params::{Bound, Builder};
use crate::synth::WeatherClass;

/// Where a weather vector came from.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VectorSource {
    Computed,
    ClassAverage,
    UserSupplied,
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherFeatureVector<T: Real = f32> {
    pub values: Tensor<T>,
    pub source: VectorSource,
}

impl<T: Real> WeatherFeatureVector<T> {
    pub fn new(values: Tensor<T>, source: VectorSource) -> Result<Self> {
        if values.ndim() != 1 || values.numel() == 0 {
            return Err(Error::Contract(format!(
                "weather vector must be a non-empty 1-D tensor, got {:?}",
                values.shape()
            )));
        }
        if !values.is_finite() {
            return Err(Error::Contract("weather vector has non-finite entries".into()));
        }
        Ok(WeatherFeatureVector { values, source })
    }

    pub fn dim(&self) -> usize {
        self.values.numel()
    }

    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.values.map(|x| x * T::of(c)), VectorSource::UserSupplied)
    }
}

/// `G = M Mᵀ / (H·W)` where `M` is `[C×H×W]` flattened to `C×(H·W)`.
pub fn gram<'t, T: Real>(f: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = f.shape();
    if shape.len() != 3 {
        return Err(Error::Contract(format!("gram expects [C,H,W], got {shape:?}")));
    }
    let (c, n) = (shape[0], shape[1] * shape[2]);
    if n == 0 {
        return Err(hyperweather_tensor::TensorError::Dimension {
            op: "gram",
            detail: format!("empty spatial extent in {shape:?}"),
        }
        .into());
    }
    let m = f.reshape(&[c, n])?;
    Ok(m.matmul(m.transpose()?)?.scale(T::of(1.0 / n as f64))?)
}

/// Gram matrix of `[N×C]` tokens, identical to [`gram`] on their image.
pub fn token_gram<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let n = x.shape()[0];
    if n == 0 {
        return Err(Error::Contract("gram of zero tokens".into()));
    }
    Ok(x.transpose()?.matmul(x)?.scale(T::of(1.0 / n as f64))?)
}

/// Subtract the per-channel mean over the `[N×C]` tokens.
pub fn center_tokens<'t, T: Real>(x: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = x.shape();
    if shape.len() != 2 || shape[0] == 0 {
        return Err(Error::Contract(format!("expected non-empty [N,C] tokens, got {shape:?}")));
    }
    let (n, c) = (shape[0], shape[1]);
    let avg = x.tape().constant(Tensor::full(&[1, n], T::of(-1.0 / n as f64)))?;
    let neg_mean = avg.matmul(x)?.reshape(&[c])?;
    Ok(x.add_bias(neg_mean)?)
}

/// Flat indices of the entries with column ≥ row, scanned row-major.
pub fn upper_tri_indices(c: usize) -> Vec<usize> {
    (0..c).flat_map(|r| (r..c).map(move |col| r * c + col)).collect()
}

pub fn upper_tri_vec<'t, T: Real>(g: Var<'t, T>) -> Result<Var<'t, T>> {
    let shape = g.shape();
    if shape.len() != 2 || shape[0] != shape[1] {
        return Err(hyperweather_tensor::TensorError::Dimension {
            op: "upper_tri_vec",
            detail: format!("expected a square matrix, got {shape:?}"),
        }
        .into());
    }
    let c = shape[0];
    Ok(g.gather(Arc::new(upper_tri_indices(c)), &[c * (c + 1) / 2])?)
}

#[derive(Debug, Clone)]
struct FeatureStage {
    embed: Conv,
    block: Block,
    sr: usize,
    gram_norm: LayerNorm,
    proj1: Linear,
    proj2: Linear,
}

/// Parameters `τ` of the feature network.
#[derive(Debug, Clone)]
pub struct FeatureNet {
    stages: Vec<FeatureStage>,
    fuse: Linear,
    out_norm: LayerNorm,
    pub dim: usize,
    activation: Activation,
    bank: HyperBank,
}

impl FeatureNet {
    pub fn build<T: Real>(b: &mut Builder<'_, T>, cfg: &ModelConfig) -> Result<Self> {
        let channels = cfg.scaled_channels();
        let de = cfg.embed_dim();
        // Every slot in this network is stored; the bank only lends the
        // slot helper.
        let mut bank = HyperBank::new(cfg.feature_dim, cfg.activation);
        let mut stages = Vec::with_capacity(2);
        let mut cin = 3;
        for s in 0..2 {
            let c = channels[s];
            let name = format!("feat.s{s}");
            let spec = BlockSpec {
                channels: c,
                heads: cfg.heads[s],
                sr: cfg.sr_ratios[s],
                mlp_ratio: cfg.mlp_ratio,
                adapt_global: false,
                adapt_local: false,
                activation: cfg.activation,
            };
            let embed = b.conv(&format!("{name}.embed"), cin, c, 3, 2, 1.0)?;
            let block = Block::build(b, &mut bank, &format!("{name}.block"), &spec)?;
            let tri = c * (c + 1) / 2;
            let gram_norm = b.layer_norm(&format!("{name}.gram_norm"), tri)?;
            let proj1 = b.linear(&format!("{name}.proj1"), tri, de)?;
            let proj2 = b.linear(&format!("{name}.proj2"), de, de)?;
            stages.push(FeatureStage {
                embed,
                block,
                sr: spec.sr,
                gram_norm,
                proj1,
                proj2,
            });
            cin = c;
        }
        let fuse = b.linear("feat.fuse", 2 * de, cfg.feature_dim)?;
        let out_norm = b.layer_norm("feat.out_norm", cfg.feature_dim)?;
        Ok(FeatureNet {
            stages,
            fuse,
            out_norm,
            dim: cfg.feature_dim,
            activation: cfg.activation,
            bank,
        })
    }

    /// `v = F_feat(I; τ)` for one `[3×H×W]` image.
    pub fn forward<'t, T: Real>(&self, p: &Bound<'t, T>, image: Var<'t, T>) -> Result<Var<'t, T>> {
        let shape = image.shape();
        if shape.len() != 3 || shape[0] != 3 {
            return Err(Error::Contract(format!("expected a [3,H,W] image, got {shape:?}")));
        }
        let (mut h, mut w) = (shape[1], shape[2]);
        for stage in &self.stages {
            if h % 2 != 0 || w % 2 != 0 || (h / 2) % stage.sr != 0 || (w / 2) % stage.sr != 0 {
                return Err(hyperweather_tensor::TensorError::Dimension {
                    op: "extract_features",
                    detail: format!("input {}x{} does not fit the feature strides", shape[1], shape[2]),
                }
                .into());
            }
            h /= 2;
            w /= 2;
        }
        let ctx = Ctx {
            bound: p,
            generated: &[],
        };
        debug_assert!(self.bank.is_empty());
        let mut x = image;
        let mut embeds = Vec::with_capacity(2);
        let (mut h, mut w) = (shape[1], shape[2]);
        for stage in &self.stages {
            let img = stage.embed.forward(p, x)?;
            h /= 2;
            w /= 2;
            let tokens = image_to_tokens(img)?;
            let tokens = stage.block.forward(&ctx, tokens, (h, w), &TokenLayout::Grid)?;
            let tri = upper_tri_vec(token_gram(center_tokens(tokens)?)?)?;
            let n = tri.shape()[0];
            let tri = stage.gram_norm.forward(p, tri.reshape(&[1, n])?)?;
            let e = stage.proj1.forward(p, tri)?;
            let e = stage.proj2.forward(p, self.activation.apply(e)?)?;
            embeds.push(e);
            x = crate::nn::tokens_to_image(tokens, h, w)?;
        }
        let cat = image.tape().concat(&embeds, 1)?;
        let v = self.out_norm.forward(p, self.fuse.forward(p, cat)?)?;
        Ok(v.reshape(&[self.dim])?)
    }
}

/// Contrastive objective over every unordered pair in the batch: a hinge
/// `[m − d]_+` for same-class pairs and the raw similarity `d` for
/// cross-class pairs, `d` being cosine similarity.
pub fn contrastive_loss<'t, T: Real>(vectors: &[Var<'t, T>], labels: &[usize], margin: f64) -> Result<Var<'t, T>> {
    if vectors.len() < 2 {
        return Err(Error::Contract(format!(
            "contrastive loss needs at least 2 vectors, got {}",
            vectors.len()
        )));
    }
    if labels.len() != vectors.len() {
        return Err(Error::Contract(format!(
            "{} vectors but {} labels",
            vectors.len(),
            labels.len()
        )));
    }
    if !(margin > 0.0 && margin <= 1.0) {
        return Err(Error::Config(format!("margin {margin} outside (0, 1]")));
    }
    let mut total: Option<Var<'t, T>> = None;
    for a in 0..vectors.len() {
        for b in a + 1..vectors.len() {
            let d = vectors[a].cosine_similarity(vectors[b])?;
            let term = if labels[a] == labels[b] {
                d.scale(T::of(-1.0))?.add_scalar(T::of(margin))?.relu()?
            } else {
                d
            };
            total = Some(match total {
                None => term,
                Some(t) => t.add(term)?,
            });
        }
    }
    Ok(total.expect("at least one pair"))
}

/// Elementwise mean of `vectors`.
pub fn average_feature<T: Real>(vectors: &[&Tensor<T>]) -> Result<Tensor<T>> {
    let first = vectors
        .first()
        .ok_or_else(|| Error::AbsentClass("no vectors to average".into()))?;
    let mut acc = vec![0.0f64; first.numel()];
    for v in vectors {
        if v.shape() != first.shape() {
            return Err(Error::Contract(format!(
                "cannot average vectors of shapes {:?} and {:?}",
                first.shape(),
                v.shape()
            )));
        }
        for (a, x) in acc.iter_mut().zip(v.data()) {
            *a += x.as_f64();
        }
    }
    let n = vectors.len() as f64;
    let mean: Vec<f64> = acc.into_iter().map(|a| a / n).collect();
    Ok(Tensor::from_f64(first.shape(), &mean)?)
}

/// Per-class average weather vectors `v̄_i` with their sample counts.
#[derive(Debug, Clone, PartialEq)]
pub struct ClassAverageBank<T: Real = f32> {
    entries: BTreeMap<WeatherClass, (Tensor<T>, usize)>,
}

impl<T: Real> Default for ClassAverageBank<T> {
    fn default() -> Self {
        ClassAverageBank {
            entries: BTreeMap::new(),
        }
    }
}

impl<T: Real> ClassAverageBank<T> {
    /// Average `vectors` per label over the given class list; every listed
    /// class must have at least one vector.
    pub fn from_vectors(vectors: &[Tensor<T>], labels: &[WeatherClass], classes: &[WeatherClass]) -> Result<Self> {
        if vectors.len() != labels.len() {
            return Err(Error::Contract(format!(
                "{} vectors but {} labels",
                vectors.len(),
                labels.len()
            )));
        }
        let mut bank = ClassAverageBank::default();
        for &class in classes {
            let members: Vec<&Tensor<T>> = vectors
                .iter()
                .zip(labels)
                .filter(|(_, &l)| l == class)
                .map(|(v, _)| v)
                .collect();
            if members.is_empty() {
                return Err(Error::AbsentClass(class.name().into()));
            }
            let mean = average_feature(&members)?;
            bank.insert(class, mean, members.len());
        }
        Ok(bank)
    }

    pub fn insert(&mut self, class: WeatherClass, mean: Tensor<T>, count: usize) {
        self.entries.insert(class, (mean, count));
    }

    pub fn get(&self, class: WeatherClass) -> Result<WeatherFeatureVector<T>> {
        let (v, _) = self
            .entries
            .get(&class)
            .ok_or_else(|| Error::AbsentClass(class.name().into()))?;
        WeatherFeatureVector::new(v.clone(), VectorSource::ClassAverage)
    }

    pub fn count(&self, class: WeatherClass) -> Option<usize> {
        self.entries.get(&class).map(|(_, n)| *n)
    }

    pub fn classes(&self) -> Vec<WeatherClass> {
        self.entries.keys().copied().collect()
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (WeatherClass, &Tensor<T>, usize)> {
        self.entries.iter().map(|(c, (v, n))| (*c, v, *n))
    }

    pub fn cast<U: Real>(&self) -> ClassAverageBank<U> {
        ClassAverageBank {
            entries: self.entries.iter().map(|(c, (v, n))| (*c, (v.cast(), *n))).collect(),
        }
    }
}

/// Evaluate the feature network on a fresh tape without gradients.
pub fn extract_with<T: Real>(
    net: &FeatureNet,
    store: &crate::params::ParamStore<T>,
    image: &Tensor<T>,
) -> Result<WeatherFeatureVector<T>> {
    let tape = Tape::new();
    let bound = store.bind(&tape, |_| false)?;
    let x = tape.constant(image.clone())?;
    let v = net.forward(&bound, x)?;
    WeatherFeatureVector::new((*v.value()).clone(), VectorSource::Computed)
}

/// CSV rows `dim_0..dim_{D-1},label,split`, one per vector.
pub fn embeddings_csv<T: Real>(rows: &[(&Tensor<T>, &str, &str)]) -> Result<String> {
    let dim = rows.first().map(|r| r.0.numel()).unwrap_or(0);
    let mut out = String::new();
    for i in 0..dim {
        let _ = write!(out, "dim_{i},");
    }
    out.push_str("label,split\n");
    for (v, label, split) in rows {
        if v.numel() != dim {
            return Err(Error::Contract("embedding rows of differing length".into()));
        }
        for x in v.data() {
            let _ = write!(out, "{},", x.as_f64());
        }
        let _ = writeln!(out, "{label},{split}");
    }
    Ok(out)
}
