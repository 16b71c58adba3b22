//! Experiment configuration and the end-to-end runs built from it: training,
//! evaluation on a fresh held-out set, and terminal-sigma sweeps.
//!
//! A config is a single JSON document. Unknown keys are rejected everywhere
//! and every omitted field takes its default, so `{}` is the default
//! Perpendicular experiment.

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::{self, DatasetKind, SampleBatch};
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceSpec, NoiseSchedule};
use crate::models::{NetworkConfig, TransportNet};
use crate::ot_eval::{MetricsReport, TransportMap};
use crate::rng::{Seeds, Stream};
use crate::spectral::{BasisKind, BasisSpec};
use crate::trainer::{self, TrainConfig, TrainOutput};

/// Covariance eigenvalues: a named preset or an explicit vector.
///
/// Presets:
/// * `"inv_k2"`: `lambda_i = 1 / (i + 1)^2` for coefficient index `i`;
/// * `"kernel_at:i,j,.."`: the same spectrum with the listed indices set to 0;
/// * `"none"`: the zero operator (no smoothing possible).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum CovarianceSetting {
    Preset(String),
    Explicit(Vec<f64>),
}

impl Default for CovarianceSetting {
    fn default() -> Self {
        CovarianceSetting::Preset("inv_k2".into())
    }
}

impl CovarianceSetting {
    pub fn resolve(&self, basis: BasisSpec) -> Result<CovarianceSpec> {
        match self {
            CovarianceSetting::Explicit(v) => CovarianceSpec::new(v.clone(), basis),
            CovarianceSetting::Preset(p) if p == "inv_k2" => CovarianceSpec::inverse_square(basis),
            CovarianceSetting::Preset(p) if p == "none" => Ok(CovarianceSpec::zero(basis)),
            CovarianceSetting::Preset(p) => {
                let Some(list) = p.strip_prefix("kernel_at:") else {
                    return Err(Error::Config(format!(
                        "unknown covariance preset `{p}` (expected inv_k2, none, kernel_at:<indices> or a vector)"
                    )));
                };
                let idx = list
                    .split(',')
                    .map(|s| {
                        s.trim()
                            .parse::<usize>()
                            .map_err(|_| Error::Config(format!("bad index `{s}` in covariance preset `{p}`")))
                    })
                    .collect::<Result<Vec<_>>>()?;
                CovarianceSpec::inverse_square_with_kernel(basis, &idx)
            }
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScheduleSettings {
    pub sigma_max: f64,
    pub sigma_min: f64,
    pub active_fraction: f64,
}

impl Default for ScheduleSettings {
    fn default() -> Self {
        ScheduleSettings {
            sigma_max: 0.5,
            sigma_min: 0.06,
            active_fraction: 0.8,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainerSettings {
    pub batch_size: usize,
    pub epochs: usize,
    pub inner_steps: usize,
    pub lr_transport: f64,
    pub lr_potential: f64,
    pub tau: f64,
    pub probe_every: usize,
    pub probe_size: usize,
    /// Intermediate checkpoints every this many epochs; 0 keeps only the final one.
    pub checkpoint_every: usize,
    pub regularization_weight: Option<f64>,
}

impl Default for TrainerSettings {
    fn default() -> Self {
        TrainerSettings {
            batch_size: 256,
            epochs: 5000,
            inner_steps: 5,
            lr_transport: 1e-4,
            lr_potential: 1e-4,
            tau: 1.0,
            probe_every: 250,
            probe_size: 1024,
            checkpoint_every: 0,
            regularization_weight: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvalSettings {
    /// Held-out sample size for the final metrics.
    pub n: usize,
    /// Samples written by `gen-data`.
    pub gen_data_n: usize,
    /// Points drawn in the coefficient-plane plot.
    pub plot_n: usize,
}

impl Default for EvalSettings {
    fn default() -> Self {
        EvalSettings {
            n: 2000,
            gen_data_n: 2000,
            plot_n: 300,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    pub dataset: DatasetKind,
    pub basis: BasisSpec,
    pub covariance: CovarianceSetting,
    pub schedule: ScheduleSettings,
    pub trainer: TrainerSettings,
    pub network: NetworkConfig,
    pub seeds: Seeds,
    pub eval: EvalSettings,
    pub output_dir: PathBuf,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            dataset: DatasetKind::Perpendicular,
            basis: BasisSpec {
                kind: BasisKind::Fourier,
                num_modes: 16,
            },
            covariance: CovarianceSetting::default(),
            schedule: ScheduleSettings::default(),
            trainer: TrainerSettings::default(),
            network: NetworkConfig::default(),
            seeds: Seeds::default(),
            eval: EvalSettings::default(),
            output_dir: PathBuf::from("runs/default"),
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates; errors carry the line and column of the problem.
    /// Parses and validates.
    pub fn from_json(text: &str) -> Result<Self> {
        let cfg = Self::parse(text)?;
        cfg.validate()?;
        Ok(cfg)
    }

    /// Schema check only; values are not validated.
    pub fn parse(text: &str) -> Result<Self> {
        serde_json::from_str(text).map_err(|e| Error::Config(e.to_string()))
    }

    /// Reads and validates `path`.
    pub fn load(path: &Path) -> Result<Self> {
        let cfg = Self::read(path)?;
        cfg.validate().map_err(|e| Error::Config(format!("{}: {e}", path.display())))?;
        Ok(cfg)
    }

    /// Reads `path` with a schema check only.
    pub fn read(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| Error::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            Error::Config(m) => Error::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }

    /// Value checks; every failure is reported as [`Error::Config`].
    pub fn validate(&self) -> Result<()> {
        let check = || -> Result<()> {
            self.train_config()?.validate()?;
            if self.eval.n == 0 || self.eval.gen_data_n == 0 {
                return Err(Error::Config("eval sizes must be >= 1".into()));
            }
            Ok(())
        };
        check().map_err(|e| match e {
            Error::Config(m) => Error::Config(m),
            other => Error::Config(other.to_string()),
        })
    }

    pub fn covariance_spec(&self) -> Result<CovarianceSpec> {
        self.basis.validate()?;
        self.covariance.resolve(self.basis)
    }

    pub fn train_config(&self) -> Result<TrainConfig> {
        let t = &self.trainer;
        let schedule = NoiseSchedule {
            sigma_max: self.schedule.sigma_max,
            sigma_min: self.schedule.sigma_min,
            total_epochs: t.epochs,
            active_fraction: self.schedule.active_fraction,
        };
        schedule.validate()?;
        Ok(TrainConfig {
            batch_size: t.batch_size,
            epochs: t.epochs,
            inner_steps: t.inner_steps,
            lr_transport: t.lr_transport,
            lr_potential: t.lr_potential,
            tau: t.tau,
            schedule,
            cov: self.covariance_spec()?,
            seeds: self.seeds,
            network: self.network.clone(),
            probe_every: t.probe_every,
            probe_size: t.probe_size,
            regularization_weight: t.regularization_weight,
        })
    }

    /// The config with every preset expanded, as written next to the outputs.
    pub fn resolved(&self) -> Result<Self> {
        let mut r = self.clone();
        r.covariance = CovarianceSetting::Explicit(self.covariance_spec()?.eigenvalues().to_vec());
        Ok(r)
    }

    pub fn to_json_pretty(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// Held-out source and target batches of size `n` from the eval seed.
    pub fn eval_batches(&self, n: usize) -> Result<(SampleBatch, SampleBatch)> {
        let mut rng = self.seeds.rng(Stream::Eval);
        datasets::generate_with(self.dataset, n, &self.basis, &mut rng)
    }
}

/// Final metrics of `t` on the config's held-out set.
pub fn evaluate(cfg: &ExperimentConfig, t: &dyn TransportMap) -> Result<MetricsReport> {
    let (src, tgt) = cfg.eval_batches(cfg.eval.n)?;
    MetricsReport::compute(t, src.view(), tgt.view(), cfg.seeds)
}

pub struct RunResult {
    pub output: TrainOutput,
    /// `None` when no training happened (`epochs = 0`).
    pub metrics: Option<MetricsReport>,
}

pub fn run(cfg: &ExperimentConfig) -> Result<RunResult> {
    let output = trainer::train(&cfg.train_config()?, cfg.dataset)?;
    let metrics = if cfg.trainer.epochs > 0 {
        Some(evaluate(cfg, &output.transport)?)
    } else {
        None
    };
    Ok(RunResult { output, metrics })
}

/// The config of one sweep cell: anneal from `sigma_max` down to `sigma`
/// (or no smoothing at all when `sigma = 0`), all seeds derived from `seed`.
pub fn sweep_cell(base: &ExperimentConfig, sigma: f64, seed: u64) -> Result<ExperimentConfig> {
    if !(sigma.is_finite() && sigma >= 0.0) {
        return Err(Error::Config(format!("sweep sigma must be finite and >= 0, got {sigma}")));
    }
    let mut cfg = base.clone();
    cfg.seeds = Seeds::from_base(seed);
    if sigma == 0.0 {
        cfg.schedule.sigma_max = 0.0;
        cfg.schedule.sigma_min = 0.0;
    } else {
        cfg.schedule.sigma_min = sigma;
        cfg.schedule.sigma_max = cfg.schedule.sigma_max.max(sigma);
    }
    Ok(cfg)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub sigma: f64,
    pub seed: u64,
    pub mean_transport_cost: f64,
    /// Analytic `W2^2` when the dataset has one, else the empirical estimate.
    pub reference_w2sq: f64,
    pub abs_gap: f64,
    pub d_cost: f64,
    pub d_target: f64,
}

pub const SWEEP_CSV_HEADER: &str = "sigma,seed,mean_transport_cost,reference_w2sq,abs_gap,d_cost,d_target";

impl SweepRow {
    pub fn from_metrics(sigma: f64, seed: u64, dataset: DatasetKind, m: &MetricsReport) -> Self {
        let reference_w2sq = datasets::oracle(dataset).w2sq.unwrap_or(m.w2sq_mu_nu);
        SweepRow {
            sigma,
            seed,
            mean_transport_cost: m.mean_transport_cost,
            reference_w2sq,
            abs_gap: (m.mean_transport_cost - reference_w2sq).abs(),
            d_cost: m.d_cost,
            d_target: m.d_target,
        }
    }

    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{}",
            self.sigma, self.seed, self.mean_transport_cost, self.reference_w2sq, self.abs_gap, self.d_cost, self.d_target
        )
    }
}

/// Trains every `(sigma, seed)` cell, fanning out over at most `threads`
/// worker threads. Rows come back in `sigmas x seeds` order regardless of
/// scheduling.
pub fn sweep_sigma(base: &ExperimentConfig, sigmas: &[f64], seeds: &[u64], threads: usize) -> Result<Vec<SweepRow>> {
    if sigmas.is_empty() {
        return Err(Error::Config("sigma list is empty".into()));
    }
    if seeds.is_empty() {
        return Err(Error::Config("seed list is empty".into()));
    }
    if base.trainer.epochs == 0 {
        return Err(Error::Config("a sweep needs epochs >= 1".into()));
    }
    let cells: Vec<(f64, u64)> = sigmas.iter().flat_map(|&s| seeds.iter().map(move |&d| (s, d))).collect();
    let configs = cells
        .iter()
        .map(|&(s, d)| sweep_cell(base, s, d))
        .collect::<Result<Vec<_>>>()?;
    let threads = threads.clamp(1, cells.len());
    let mut results: Vec<Option<Result<SweepRow>>> = (0..cells.len()).map(|_| None).collect();
    let run_cell = |i: usize| -> Result<SweepRow> {
        let r = run(&configs[i])?;
        let m = r.metrics.expect("epochs >= 1");
        Ok(SweepRow::from_metrics(cells[i].0, cells[i].1, base.dataset, &m))
    };
    if threads == 1 {
        for (i, slot) in results.iter_mut().enumerate() {
            *slot = Some(run_cell(i));
        }
    } else {
        std::thread::scope(|scope| {
            let chunks: Vec<Vec<usize>> = (0..threads)
                .map(|w| (w..cells.len()).step_by(threads).collect())
                .collect();
            let handles: Vec<_> = chunks
                .into_iter()
                .map(|idx| {
                    let run_cell = &run_cell;
                    scope.spawn(move || idx.into_iter().map(|i| (i, run_cell(i))).collect::<Vec<_>>())
                })
                .collect();
            for h in handles {
                for (i, r) in h.join().expect("sweep worker panicked") {
                    results[i] = Some(r);
                }
            }
        });
    }
    results.into_iter().map(|r| r.expect("every cell ran")).collect()
}

/// Loads a transport checkpoint and checks it against `basis`.
pub fn load_transport(path: &Path, basis: BasisSpec) -> Result<TransportNet> {
    let (tensors, meta) = crate::autodiff::load_tensors(path)?;
    let residual = meta.get("residual").and_then(|v| v.as_bool()).unwrap_or(true);
    let activation = match meta.get("activation") {
        Some(a) => serde_json::from_value(a.clone())?,
        None => Default::default(),
    };
    if let Some(b) = meta.get("basis") {
        let stored: BasisSpec = serde_json::from_value(b.clone())?;
        if stored != basis {
            return Err(Error::BasisMismatch {
                left: stored.to_string(),
                right: basis.to_string(),
            });
        }
    }
    let t = TransportNet::from_tensors(&tensors, residual, activation)?;
    if t.num_modes() != basis.num_modes {
        return Err(Error::BasisMismatch {
            left: format!("checkpoint with K={}", t.num_modes()),
            right: basis.to_string(),
        });
    }
    Ok(t)
}

/// Loads a transport checkpoint together with the basis recorded in its
/// metadata.
pub fn load_transport_with_basis(path: &Path) -> Result<(TransportNet, BasisSpec)> {
    let (_, meta) = crate::autodiff::load_tensors(path)?;
    let basis: BasisSpec = match meta.get("basis") {
        Some(b) => serde_json::from_value(b.clone())?,
        None => return Err(Error::invalid(format!("{} has no basis metadata", path.display()))),
    };
    Ok((load_transport(path, basis)?, basis))
}

pub fn transport_meta(t: &TransportNet, cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "role": "transport",
        "basis": cfg.basis,
        "residual": t.residual(),
        "activation": cfg.network.activation,
        "widths": t.mlp().widths(),
        "dataset": cfg.dataset,
    })
}

pub fn potential_meta(cfg: &ExperimentConfig) -> serde_json::Value {
    serde_json::json!({
        "role": "potential",
        "basis": cfg.basis,
        "activation": cfg.network.activation,
        "dataset": cfg.dataset,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_document_is_default() {
        assert_eq!(ExperimentConfig::from_json("{}").unwrap(), ExperimentConfig::default());
    }

    #[test]
    fn unknown_keys_rejected_with_position() {
        let e = ExperimentConfig::from_json("{\n  \"trainer\": {\"epochz\": 3}\n}").unwrap_err();
        let msg = e.to_string();
        assert!(msg.contains("epochz") && msg.contains("line 2"), "{msg}");
        assert!(ExperimentConfig::from_json("{\"colour\": 1}").is_err());
    }

    #[test]
    fn covariance_presets() {
        let b = BasisSpec::fourier(16).unwrap();
        let c = CovarianceSetting::Preset("kernel_at:1".into()).resolve(b).unwrap();
        assert_eq!(c.kernel(), vec![1]);
        let c = CovarianceSetting::Preset("kernel_at:1, 3".into()).resolve(b).unwrap();
        assert_eq!(c.kernel(), vec![1, 3]);
        assert!(CovarianceSetting::Preset("kernel_at:x".into()).resolve(b).is_err());
        assert!(CovarianceSetting::Preset("flat".into()).resolve(b).is_err());
        assert!(CovarianceSetting::Explicit(vec![1.0; 3]).resolve(b).is_err());
        let cfg: ExperimentConfig = serde_json::from_str(r#"{"covariance": [1,1,1,1], "basis": {"kind":"fourier","num_modes":4}}"#).unwrap();
        assert_eq!(cfg.covariance_spec().unwrap().eigenvalues(), &[1.0; 4]);
    }

    #[test]
    fn resolved_config_round_trips() {
        let cfg = ExperimentConfig::default();
        let r = cfg.resolved().unwrap();
        let back = ExperimentConfig::from_json(&r.to_json_pretty().unwrap()).unwrap();
        assert_eq!(back, r);
        assert_eq!(back.covariance_spec().unwrap(), cfg.covariance_spec().unwrap());
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(ExperimentConfig::from_json(r#"{"trainer": {"batch_size": 1}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"trainer": {"tau": 0}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"schedule": {"sigma_min": 0.6}}"#).is_err());
        assert!(ExperimentConfig::from_json(r#"{"basis": {"kind": "fourier", "num_modes": 3}}"#).is_err());
    }

    #[test]
    fn sweep_cells() {
        let base = ExperimentConfig::default();
        let c = sweep_cell(&base, 0.0, 1).unwrap();
        assert_eq!((c.schedule.sigma_max, c.schedule.sigma_min), (0.0, 0.0));
        let c = sweep_cell(&base, 0.15, 2).unwrap();
        assert_eq!((c.schedule.sigma_max, c.schedule.sigma_min), (0.5, 0.15));
        assert_eq!(c.seeds, Seeds::from_base(2));
        assert!(sweep_sigma(&base, &[], &[0], 1).is_err());
    }
}
