//! Per-class quality reports and the adaptivity ablation.

use std::fmt::Write as _;

use hyperweather_tensor::Tensor;

use crate::compute::ComputeCount;
use crate::config::ModelConfig;
use crate::dataset::{Dataset, Split, WeatherSample};
use crate::error::{Error, Result};
use crate::inference::infer_full;
use crate::metrics::{clamp_unit, psnr, ssim};
use crate::model::Model;
use crate::params::ParamGroup;
use crate::synth::WeatherClass;
use crate::train::{Phase, TrainConfig, Trainer};

#[derive(Debug, Clone, PartialEq)]
pub struct ClassRow {
    pub class: WeatherClass,
    pub count: usize,
    pub psnr: f64,
    pub ssim: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub rows: Vec<ClassRow>,
    /// Mean of the per-class PSNR entries.
    pub avg_psnr: f64,
    pub avg_ssim: f64,
    pub compute: Option<ComputeCount>,
}

impl EvalReport {
    pub fn from_rows(rows: Vec<ClassRow>) -> Result<Self> {
        if rows.is_empty() {
            return Err(Error::Contract("report without any class rows".into()));
        }
        let n = rows.len() as f64;
        let avg_psnr = rows.iter().map(|r| r.psnr).sum::<f64>() / n;
        let avg_ssim = rows.iter().map(|r| r.ssim).sum::<f64>() / n;
        Ok(EvalReport {
            rows,
            avg_psnr,
            avg_ssim,
            compute: None,
        })
    }

    pub fn row(&self, class: WeatherClass) -> Option<&ClassRow> {
        self.rows.iter().find(|r| r.class == class)
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("class,count,psnr,ssim\n");
        for r in &self.rows {
            let _ = writeln!(s, "{},{},{},{}", r.class.name(), r.count, r.psnr, r.ssim);
        }
        let total: usize = self.rows.iter().map(|r| r.count).sum();
        let _ = writeln!(s, "average,{total},{},{}", self.avg_psnr, self.avg_ssim);
        if let Some(c) = &self.compute {
            let _ = writeln!(
                s,
                "# params {} (generators {}), generated values {}, MACs {}",
                c.total_params(),
                c.generator_params,
                c.generated_values,
                c.total_macs()
            );
        }
        s
    }
}

/// Score `restore` on every single-class sample of `split`; outputs are
/// clamped to `[0,1]` before measuring.
pub fn evaluate(
    data: &Dataset,
    split: Split,
    mut restore: impl FnMut(&WeatherSample) -> Result<Tensor<f32>>,
) -> Result<EvalReport> {
    let mut rows = Vec::new();
    for class in data.classes(split) {
        let idx = data.indices(split, class);
        let (mut p, mut s) = (0.0, 0.0);
        for &i in &idx {
            let sample = &data.samples[i];
            let y = clamp_unit(&restore(sample)?);
            p += psnr(&y, &sample.clean)?;
            s += ssim(&y, &sample.clean)?;
        }
        let n = idx.len() as f64;
        rows.push(ClassRow {
            class,
            count: idx.len(),
            psnr: p / n,
            ssim: s / n,
        });
    }
    EvalReport::from_rows(rows)
}

/// Quality of the degraded inputs themselves.
pub fn evaluate_degraded(data: &Dataset, split: Split) -> Result<EvalReport> {
    evaluate(data, split, |s| Ok(s.degraded.clone()))
}

pub fn evaluate_model(model: &Model<f32>, data: &Dataset, split: Split) -> Result<EvalReport> {
    evaluate(data, split, |s| infer_full(model, &s.degraded))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AblationSpec {
    pub name: &'static str,
    pub local: bool,
    pub global: bool,
    pub channel: bool,
    pub finetune: bool,
}

/// The five rows, each adding one axis to the previous.
pub const ABLATION_ROWS: [AblationSpec; 5] = [
    AblationSpec {
        name: "baseline",
        local: false,
        global: false,
        channel: false,
        finetune: false,
    },
    AblationSpec {
        name: "+local",
        local: true,
        global: false,
        channel: false,
        finetune: false,
    },
    AblationSpec {
        name: "+local+global",
        local: true,
        global: true,
        channel: false,
        finetune: false,
    },
    AblationSpec {
        name: "+local+global+channel",
        local: true,
        global: true,
        channel: true,
        finetune: false,
    },
    AblationSpec {
        name: "+fine-tune",
        local: true,
        global: true,
        channel: true,
        finetune: true,
    },
];

#[derive(Debug, Clone, PartialEq)]
pub struct AblationRow {
    pub spec: AblationSpec,
    /// Test-split average PSNR and SSIM per seed.
    pub psnr: Vec<f64>,
    pub ssim: Vec<f64>,
    /// Final validation PSNR per seed.
    pub val_psnr: Vec<f64>,
    /// Whether every seed's validation PSNR beat the degraded inputs.
    pub converged: bool,
}

impl AblationRow {
    pub fn mean_psnr(&self) -> f64 {
        self.psnr.iter().sum::<f64>() / self.psnr.len() as f64
    }

    pub fn mean_ssim(&self) -> f64 {
        self.ssim.iter().sum::<f64>() / self.ssim.len() as f64
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AblationReport {
    pub seeds: Vec<u64>,
    pub degraded_psnr: f64,
    pub degraded_val_psnr: f64,
    pub rows: Vec<AblationRow>,
}

impl AblationReport {
    pub fn to_csv(&self) -> String {
        let mut s = String::from("row,local,global,channel,finetune,mean_psnr,mean_ssim,converged");
        for seed in &self.seeds {
            let _ = write!(s, ",psnr_seed{seed}");
        }
        s.push('\n');
        for r in &self.rows {
            let _ = write!(
                s,
                "{},{},{},{},{},{},{},{}",
                r.spec.name,
                r.spec.local,
                r.spec.global,
                r.spec.channel,
                r.spec.finetune,
                r.mean_psnr(),
                r.mean_ssim(),
                r.converged
            );
            for p in &r.psnr {
                let _ = write!(s, ",{p}");
            }
            s.push('\n');
        }
        let _ = writeln!(s, "# degraded input psnr {}", self.degraded_psnr);
        s
    }
}

fn copy_feature_params(from: &Model<f32>, to: &mut Model<f32>) -> Result<()> {
    for e in from.store.entries().iter().filter(|e| e.group == ParamGroup::Feature) {
        let id = to
            .store
            .id(&e.name)
            .ok_or_else(|| Error::Contract(format!("feature parameter {} missing from the row model", e.name)))?;
        to.store.set(id, e.value.as_ref().clone())?;
    }
    Ok(())
}

/// Train and evaluate every ablation row under one budget for each seed.
///
/// Per seed the feature network is pretrained once and shared by all rows;
/// the fine-tune row continues the fully adaptive row.
pub fn run_ablation(data: &Dataset, model: &ModelConfig, budget: &TrainConfig, seeds: &[u64]) -> Result<AblationReport> {
    if seeds.is_empty() {
        return Err(Error::Config("ablation needs at least one seed".into()));
    }
    let degraded_psnr = evaluate_degraded(data, Split::Test)?.avg_psnr;
    let degraded_val_psnr = evaluate_degraded(data, Split::Val)?.avg_psnr;
    let mut rows: Vec<AblationRow> = ABLATION_ROWS
        .iter()
        .map(|&spec| AblationRow {
            spec,
            psnr: Vec::new(),
            ssim: Vec::new(),
            val_psnr: Vec::new(),
            converged: true,
        })
        .collect();
    for &seed in seeds {
        let tcfg = TrainConfig {
            seed,
            ..budget.clone()
        };
        let base = ModelConfig {
            seed,
            ..model.clone()
        };
        let mut pre = Trainer::new(Model::new(&base)?, tcfg.clone())?;
        pre.pretrain(data)?;
        let mut carried: Option<Trainer> = None;
        for (r, spec) in ABLATION_ROWS.iter().enumerate() {
            let mut trainer = if spec.finetune {
                let mut t = carried
                    .take()
                    .ok_or_else(|| Error::Contract("fine-tune row needs the preceding adaptive row".into()))?;
                t.finetune(data)?;
                t
            } else {
                let cfg = base.clone().with_adaptivity(spec.local, spec.global, spec.channel);
                let mut m = Model::new(&cfg)?;
                copy_feature_params(&pre.model, &mut m)?;
                let mut t = Trainer::starting_at(m, tcfg.clone(), Phase::Restore, pre.bank.clone())?;
                t.train_restoration(data)?;
                t
            };
            let report = evaluate_model(&trainer.model, data, Split::Test)?;
            let val = trainer
                .log
                .iter()
                .rev()
                .find_map(|l| l.val_psnr)
                .ok_or_else(|| Error::Contract("training finished without a validation pass".into()))?;
            let row = &mut rows[r];
            row.psnr.push(report.avg_psnr);
            row.ssim.push(report.avg_ssim);
            row.val_psnr.push(val);
            row.converged &= val > degraded_val_psnr;
            if r + 1 < ABLATION_ROWS.len() && ABLATION_ROWS[r + 1].finetune {
                trainer.log.clear();
                carried = Some(trainer);
            }
        }
    }
    Ok(AblationReport {
        seeds: seeds.to_vec(),
        degraded_psnr,
        degraded_val_psnr,
        rows,
    })
}
