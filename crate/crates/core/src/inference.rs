//! Deployment modes built on the weather vector: full adaptive restoration,
//! restoration with a stored class average, multi-stage cascades for mixed
//! weather, and weather identification with expert routing.
//!
//! Restored images are returned unclamped; callers clamp before measuring
//! or exporting.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::path::PathBuf;
use std::process::Command;

use hyperweather_tensor::{Real, Tensor};

use crate::error::{Error, Result};
use crate::feature::{ClassAverageBank, WeatherFeatureVector};
use crate::model::Model;
use crate::synth::{read_ppm, write_ppm, WeatherClass};

/// Longest accepted cascade.
pub const MAX_CASCADE_DEPTH: usize = 4;

/// `Y = F_res(I, F_feat(I))`.
pub fn infer_full<T: Real>(model: &Model<T>, image: &Tensor<T>) -> Result<Tensor<T>> {
    let v = model.extract_features(image)?;
    model.restore(image, &v)
}

/// `Y = F_res(I, v̄_class)`; the feature network is not evaluated.
pub fn infer_fixed<T: Real>(
    model: &Model<T>,
    image: &Tensor<T>,
    class: WeatherClass,
    bank: &ClassAverageBank<T>,
) -> Result<Tensor<T>> {
    model.restore(image, &bank.get(class)?)
}

/// Where stages after the first take their weather vector from.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum LaterStages {
    /// `v = F_feat(Y_{k−1})` on the previous stage's output.
    #[default]
    Recompute,
    /// The stored class average of `order[k]`.
    ClassAverage,
}

/// Restore in `order.len()` stages sharing one weight set. Stage 1 uses
/// the class average of `order[0]`; each later stage restores the previous
/// output with a vector chosen by `later`.
pub fn infer_cascade<T: Real>(
    model: &Model<T>,
    image: &Tensor<T>,
    order: &[WeatherClass],
    bank: &ClassAverageBank<T>,
    later: LaterStages,
) -> Result<Tensor<T>> {
    let first = *order
        .first()
        .ok_or_else(|| Error::Contract("cascade needs at least one stage".into()))?;
    if order.len() > MAX_CASCADE_DEPTH {
        return Err(Error::Contract(format!(
            "cascade of {} stages exceeds the limit of {MAX_CASCADE_DEPTH}",
            order.len()
        )));
    }
    let mut y = infer_fixed(model, image, first, bank)?;
    for &class in &order[1..] {
        let v = match later {
            LaterStages::Recompute => model.extract_features(&y)?,
            LaterStages::ClassAverage => bank.get(class)?,
        };
        y = model.restore(&y, &v)?;
    }
    Ok(y)
}

/// Cosine similarity computed in `f64`; a zero-norm operand is an error.
pub fn cosine<T: Real>(a: &[T], b: &[T]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Contract(format!(
            "cosine similarity of lengths {} and {}",
            a.len(),
            b.len()
        )));
    }
    let (mut dot, mut na, mut nb) = (0.0, 0.0, 0.0);
    for (x, y) in a.iter().zip(b) {
        let (x, y) = (x.as_f64(), y.as_f64());
        dot += x * y;
        na += x * x;
        nb += y * y;
    }
    if na == 0.0 || nb == 0.0 {
        return Err(Error::DegenerateEmbedding("zero-norm weather vector".into()));
    }
    Ok(dot / (na.sqrt() * nb.sqrt()))
}

/// Numerically stable softmax.
pub fn softmax(x: &[f64]) -> Vec<f64> {
    let max = x.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let e: Vec<f64> = x.iter().map(|v| (v - max).exp()).collect();
    let s: f64 = e.iter().sum();
    e.into_iter().map(|v| v / s).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct WeatherScores {
    /// The bank's classes, in canonical order.
    pub classes: Vec<WeatherClass>,
    pub similarities: Vec<f64>,
    pub scores: Vec<f64>,
    pub argmax: WeatherClass,
}

impl WeatherScores {
    pub fn similarity(&self, class: WeatherClass) -> Option<f64> {
        self.classes.iter().position(|&c| c == class).map(|i| self.similarities[i])
    }

    pub fn score(&self, class: WeatherClass) -> Option<f64> {
        self.classes.iter().position(|&c| c == class).map(|i| self.scores[i])
    }
}

/// Scores of an already computed vector against every class average.
pub fn scores_for_vector<T: Real>(v: &WeatherFeatureVector<T>, bank: &ClassAverageBank<T>) -> Result<WeatherScores> {
    if bank.is_empty() {
        return Err(Error::Contract("weather scores need a non-empty class bank".into()));
    }
    let mut classes = Vec::with_capacity(bank.len());
    let mut similarities = Vec::with_capacity(bank.len());
    for (class, mean, _) in bank.iter() {
        classes.push(class);
        similarities.push(cosine(v.values.data(), mean.data())?);
    }
    let mut best = 0;
    for (i, &d) in similarities.iter().enumerate() {
        if d > similarities[best] {
            best = i;
        }
    }
    Ok(WeatherScores {
        scores: softmax(&similarities),
        argmax: classes[best],
        classes,
        similarities,
    })
}

/// `d_i = cos(F_feat(I), v̄_i)`, `s = softmax(d)`, `i* = argmax s`.
pub fn weather_scores<T: Real>(model: &Model<T>, image: &Tensor<T>, bank: &ClassAverageBank<T>) -> Result<WeatherScores> {
    if bank.is_empty() {
        return Err(Error::Contract("weather scores need a non-empty class bank".into()));
    }
    scores_for_vector(&model.extract_features(image)?, bank)
}

pub const SCORES_HEADER: &str = "image_id,d_drop,d_streak,d_flake,s_drop,s_streak,s_flake,argmax";

/// One CSV row per image; columns of classes absent from the bank are empty.
pub fn scores_csv(rows: &[(String, WeatherScores)]) -> String {
    let mut s = String::from(SCORES_HEADER);
    s.push('\n');
    for (id, sc) in rows {
        s.push_str(id);
        for get in [WeatherScores::similarity, WeatherScores::score] {
            for class in WeatherClass::ALL {
                s.push(',');
                if let Some(v) = get(sc, class) {
                    let _ = write!(s, "{v}");
                }
            }
        }
        let _ = writeln!(s, ",{}", sc.argmax.name());
    }
    s
}

pub type Expert = Box<dyn Fn(&Tensor<f32>) -> Result<Tensor<f32>> + Send + Sync>;

/// Restoration functions keyed by the weather class they handle.
#[derive(Default)]
pub struct ExpertRegistry {
    experts: BTreeMap<WeatherClass, Expert>,
}

impl ExpertRegistry {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, class: WeatherClass, expert: Expert) {
        self.experts.insert(class, expert);
    }

    pub fn classes(&self) -> Vec<WeatherClass> {
        self.experts.keys().copied().collect()
    }

    pub fn run(&self, class: WeatherClass, image: &Tensor<f32>) -> Result<Tensor<f32>> {
        let expert = self
            .experts
            .get(&class)
            .ok_or_else(|| Error::Routing(class.name().into()))?;
        expert(image)
    }

    /// Error naming the first bank class without an expert.
    pub fn check_covers<T: Real>(&self, bank: &ClassAverageBank<T>) -> Result<()> {
        match bank.classes().into_iter().find(|c| !self.experts.contains_key(c)) {
            Some(c) => Err(Error::Routing(c.name().into())),
            None => Ok(()),
        }
    }

    /// Experts that run the adaptive model with each class's stored vector.
    pub fn from_model(model: &Model<f32>, bank: &ClassAverageBank<f32>) -> Self {
        let mut reg = ExpertRegistry::new();
        for class in bank.classes() {
            let (model, bank) = (model.clone(), bank.clone());
            reg.register(class, Box::new(move |img| infer_fixed(&model, img, class, &bank)));
        }
        reg
    }
}

/// Expert backed by an external program invoked as
/// `program args… <input.ppm> <output.ppm>`.
pub fn command_expert(program: impl Into<String>, args: Vec<String>, workdir: PathBuf) -> Expert {
    let program = program.into();
    Box::new(move |image| {
        let stamp = format!("{}-{:p}", std::process::id(), image);
        let input = workdir.join(format!("expert-in-{stamp}.ppm"));
        let output = workdir.join(format!("expert-out-{stamp}.ppm"));
        write_ppm(&input, image)?;
        let status = Command::new(&program)
            .args(&args)
            .arg(&input)
            .arg(&output)
            .status()
            .map_err(|e| Error::io(&program, e))?;
        let _ = std::fs::remove_file(&input);
        if !status.success() {
            return Err(Error::Routing(format!("external expert {program} exited with {status}")));
        }
        let y = read_ppm(&output);
        let _ = std::fs::remove_file(&output);
        y
    })
}

#[derive(Debug, Clone, PartialEq)]
pub struct Routed {
    pub output: Tensor<f32>,
    pub class: WeatherClass,
    pub scores: WeatherScores,
}

/// Identify the weather and hand the image to that class's expert.
pub fn route_expert(
    model: &Model<f32>,
    image: &Tensor<f32>,
    registry: &ExpertRegistry,
    bank: &ClassAverageBank<f32>,
) -> Result<Routed> {
    registry.check_covers(bank)?;
    let scores = weather_scores(model, image, bank)?;
    let output = registry.run(scores.argmax, image)?;
    Ok(Routed {
        output,
        class: scores.argmax,
        scores,
    })
}
