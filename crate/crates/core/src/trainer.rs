//! Max-min training of the transport map and potential with annealed
//! spectral smoothing of the source.
//!
//! Each epoch `e` draws `sigma = schedule.sigma_at(e)`, takes one ascent step
//! on the potential for
//! `L_phi = mean(-V(T(x~)) + V(y))` and then `inner_steps` descent steps on the
//! transport map for
//! `L_theta = mean(tau/2 |x~ - T(x~)|^2 - V(T(x~)))`,
//! where `x~ = x + sigma * xi` and `xi ~ N(0, Q)`. Every inner step uses a
//! fresh source batch and fresh noise.

use std::io::Write;

use ndarray::{Array2, ArrayView2};

use crate::autodiff::{Adam, AdamConfig, Tape};
use crate::datasets::{self, DatasetKind};
use crate::error::{Error, Result};
use crate::gaussian::{CovarianceSpec, NoiseSchedule};
use crate::models::{NetworkConfig, PotentialNet, TransportNet};
use crate::ot_eval::{empirical_w2sq, mean_transport_cost, TransportMap};
use crate::rng::{stream, Rng, Seeds, Stream};

/// Salt separating the probe set from the final evaluation set, which both
/// come from the eval seed.
const PROBE_SALT: u64 = 0x9E37_79B9_7F4A_7C15;

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    pub epochs: usize,
    pub inner_steps: usize,
    pub lr_transport: f64,
    pub lr_potential: f64,
    /// Weight of the quadratic term in the transport loss.
    pub tau: f64,
    pub schedule: NoiseSchedule,
    pub cov: CovarianceSpec,
    pub seeds: Seeds,
    pub network: NetworkConfig,
    /// Probe metrics are recorded after every `probe_every`-th epoch; 0 disables.
    pub probe_every: usize,
    pub probe_size: usize,
    /// Accepted for config compatibility; there is no term it would weight.
    pub regularization_weight: Option<f64>,
}

impl TrainConfig {
    /// Defaults: `n = 256`, `E = 5000`, `K_T = 5`, Adam with `lr = 1e-4` for
    /// both networks, `tau = 1`, sigma from 0.5 to 0.06 over 80% of epochs.
    pub fn new(cov: CovarianceSpec) -> Self {
        let epochs = 5000;
        TrainConfig {
            batch_size: 256,
            epochs,
            inner_steps: 5,
            lr_transport: 1e-4,
            lr_potential: 1e-4,
            tau: 1.0,
            schedule: NoiseSchedule {
                sigma_max: 0.5,
                sigma_min: 0.06,
                total_epochs: epochs,
                active_fraction: 0.8,
            },
            cov,
            seeds: Seeds::default(),
            network: NetworkConfig::default(),
            probe_every: 250,
            probe_size: 1024,
            regularization_weight: None,
        }
    }

    /// Changes the epoch count and keeps the schedule aligned with it.
    pub fn with_epochs(mut self, epochs: usize) -> Self {
        self.epochs = epochs;
        self.schedule.total_epochs = epochs;
        self
    }

    pub fn unsmoothed(mut self) -> Self {
        self.schedule = NoiseSchedule::off(self.epochs);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.batch_size < 2 {
            return Err(Error::Config(format!("batch_size must be >= 2, got {}", self.batch_size)));
        }
        if self.inner_steps < 1 {
            return Err(Error::Config("inner_steps must be >= 1".into()));
        }
        for (name, lr) in [("lr_transport", self.lr_transport), ("lr_potential", self.lr_potential)] {
            if !(lr.is_finite() && lr > 0.0) {
                return Err(Error::Config(format!("{name} must be finite and > 0, got {lr}")));
            }
        }
        if !(self.tau.is_finite() && self.tau > 0.0) {
            return Err(Error::Config(format!("tau must be finite and > 0, got {}", self.tau)));
        }
        self.schedule.validate()?;
        if self.schedule.total_epochs != self.epochs {
            return Err(Error::Config(format!(
                "schedule covers {} epochs but training runs {}",
                self.schedule.total_epochs, self.epochs
            )));
        }
        if self.probe_every > 0 && self.probe_size == 0 {
            return Err(Error::Config("probe_size must be >= 1 when probing".into()));
        }
        if self.cov.basis().num_modes < datasets::MIN_MODES {
            return Err(Error::Config(format!(
                "the synthetic datasets need at least {} modes, got {}",
                datasets::MIN_MODES,
                self.cov.basis().num_modes
            )));
        }
        Ok(())
    }

    pub fn warnings(&self) -> Vec<String> {
        let mut w = Vec::new();
        if let Some(l) = self.regularization_weight {
            w.push(format!(
                "regularization_weight = {l} has no corresponding loss term and is ignored"
            ));
        }
        w
    }
}

/// Scalar potential evaluated on a batch, returning an `n x 1` column.
pub trait Potential {
    fn value(&self, y: ArrayView2<'_, f64>) -> Result<Array2<f64>>;
}

impl Potential for PotentialNet {
    fn value(&self, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        self.forward(y)
    }
}

/// Adapter for closures returning one value per row.
pub struct FnPotential<F>(pub F);

impl<F> Potential for FnPotential<F>
where
    F: Fn(ArrayView2<'_, f64>) -> Array2<f64>,
{
    fn value(&self, y: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        Ok((self.0)(y))
    }
}

fn column_mean(v: &Array2<f64>) -> f64 {
    v.sum() / v.len() as f64
}

fn finite(v: f64, what: &str) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::NonFinite(what.into()))
    }
}

fn check_batch(x: ArrayView2<'_, f64>, y: ArrayView2<'_, f64>, op: &'static str) -> Result<()> {
    if x.dim() != y.dim() {
        return Err(Error::shape(op, x.shape(), y.shape()));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid(format!("{op}: empty batch")));
    }
    Ok(())
}

/// `mean_i(-V(T(x~_i)) + V(y_i))`.
pub fn loss_potential(
    v: &dyn Potential,
    t: &dyn TransportMap,
    x_smoothed: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<f64> {
    check_batch(x_smoothed, y, "loss_potential")?;
    let tx = t.apply(x_smoothed)?;
    let l = column_mean(&v.value(y)?) - column_mean(&v.value(tx.view())?);
    finite(l, "loss_potential")
}

/// `mean_i(tau/2 |x~_i - T(x~_i)|^2 - V(T(x~_i)))`.
pub fn loss_transport(v: &dyn Potential, t: &dyn TransportMap, x_smoothed: ArrayView2<'_, f64>, tau: f64) -> Result<f64> {
    if x_smoothed.nrows() == 0 {
        return Err(Error::invalid("loss_transport: empty batch"));
    }
    let tx = t.apply(x_smoothed)?;
    check_batch(x_smoothed, tx.view(), "loss_transport")?;
    let quad = 0.5 * tau * mean_transport_cost(x_smoothed, tx.view())?;
    finite(quad - column_mean(&v.value(tx.view())?), "loss_transport")
}

/// `L_phi` and its gradient with respect to the potential's parameters
/// (in [`Mlp::params`](crate::models::Mlp::params) order).
pub fn potential_loss_and_grads(
    v: &PotentialNet,
    t: &TransportNet,
    x_smoothed: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<(f64, Vec<Array2<f64>>)> {
    check_batch(x_smoothed, y, "loss_potential")?;
    let tx = t.forward(x_smoothed)?;
    let mut tape = Tape::new();
    let bound = v.mlp().bind(&mut tape, true)?;
    let txv = tape.constant(tx)?;
    let yv = tape.constant(y.to_owned())?;
    let v_tx = v.forward_tape(&mut tape, &bound, txv)?;
    let v_y = v.forward_tape(&mut tape, &bound, yv)?;
    let d = tape.sub(v_y, v_tx)?;
    let loss = tape.mean(d)?;
    let value = tape.scalar(loss)?;
    let mut grads = tape.backward(loss)?;
    let g = bound
        .vars()
        .into_iter()
        .zip(v.mlp().params())
        .map(|(var, p)| grads.take_or_zeros(var, p.dim()))
        .collect();
    Ok((value, g))
}

/// `L_theta` and its gradient with respect to the transport map's parameters.
pub fn transport_loss_and_grads(
    v: &PotentialNet,
    t: &TransportNet,
    x_smoothed: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<(f64, Vec<Array2<f64>>)> {
    if x_smoothed.nrows() == 0 {
        return Err(Error::invalid("loss_transport: empty batch"));
    }
    let mut tape = Tape::new();
    let tb = t.mlp().bind(&mut tape, true)?;
    let vb = v.mlp().bind(&mut tape, false)?;
    let xv = tape.constant(x_smoothed.to_owned())?;
    let tx = t.forward_tape(&mut tape, &tb, xv)?;
    let diff = tape.sub(xv, tx)?;
    let sq = tape.rowwise_sqnorm(diff)?;
    let quad = tape.scale(sq, 0.5 * tau)?;
    let v_tx = v.forward_tape(&mut tape, &vb, tx)?;
    let per_row = tape.sub(quad, v_tx)?;
    let loss = tape.mean(per_row)?;
    let value = tape.scalar(loss)?;
    let mut grads = tape.backward(loss)?;
    let g = tb
        .vars()
        .into_iter()
        .zip(t.mlp().params())
        .map(|(var, p)| grads.take_or_zeros(var, p.dim()))
        .collect();
    Ok((value, g))
}

/// One ascent step on `L_phi`; returns `L_phi` before the update.
pub fn potential_step(
    v: &mut PotentialNet,
    t: &TransportNet,
    adam: &mut Adam,
    x_smoothed: ArrayView2<'_, f64>,
    y: ArrayView2<'_, f64>,
) -> Result<f64> {
    let (value, grads) = potential_loss_and_grads(v, t, x_smoothed, y)?;
    let neg: Vec<Array2<f64>> = grads.into_iter().map(|g| -g).collect();
    adam.step(&mut v.mlp_mut().params_mut(), &neg)?;
    Ok(value)
}

/// One descent step on `L_theta`; returns `L_theta` before the update.
pub fn transport_step(
    v: &PotentialNet,
    t: &mut TransportNet,
    adam: &mut Adam,
    x_smoothed: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<f64> {
    let (value, grads) = transport_loss_and_grads(v, t, x_smoothed, tau)?;
    adam.step(&mut t.mlp_mut().params_mut(), &grads)?;
    Ok(value)
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpochRecord {
    pub epoch: usize,
    pub sigma: f64,
    pub loss_phi: f64,
    /// `L_theta` of the last inner step.
    pub loss_theta: f64,
    pub d_cost: Option<f64>,
    pub d_target: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainLog {
    pub records: Vec<EpochRecord>,
}

pub const TRAINLOG_CSV_HEADER: &str = "epoch,sigma,loss_phi,loss_theta,d_cost,d_target";

impl TrainLog {
    /// CSV with one row per epoch; probe columns are empty on epochs
    /// without a probe.
    pub fn write_csv<W: Write>(&self, mut out: W) -> Result<()> {
        writeln!(out, "{TRAINLOG_CSV_HEADER}")?;
        let opt = |v: Option<f64>| v.map(|x| x.to_string()).unwrap_or_default();
        for r in &self.records {
            writeln!(
                out,
                "{},{},{},{},{},{}",
                r.epoch,
                r.sigma,
                r.loss_phi,
                r.loss_theta,
                opt(r.d_cost),
                opt(r.d_target)
            )?;
        }
        Ok(())
    }

    pub fn last_probe(&self) -> Option<&EpochRecord> {
        self.records.iter().rev().find(|r| r.d_target.is_some())
    }
}

#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub transport: TransportNet,
    pub potential: PotentialNet,
    pub log: TrainLog,
}

/// Initial networks: transport first, then potential, both from the init stream.
pub fn init_networks(config: &TrainConfig) -> Result<(TransportNet, PotentialNet)> {
    let k = config.cov.basis().num_modes;
    let mut rng = config.seeds.rng(Stream::Init);
    let t = TransportNet::init(k, &config.network, &mut rng)?;
    let v = PotentialNet::init(k, &config.network, &mut rng)?;
    Ok((t, v))
}

pub fn train(config: &TrainConfig, kind: DatasetKind) -> Result<TrainOutput> {
    train_with(config, kind, &mut |_, _, _| Ok(()))
}

/// Like [`train`], calling `on_epoch` after every epoch with the record and
/// the current networks.
pub fn train_with(
    config: &TrainConfig,
    kind: DatasetKind,
    on_epoch: &mut dyn FnMut(&EpochRecord, &TransportNet, &PotentialNet) -> Result<()>,
) -> Result<TrainOutput> {
    config.validate()?;
    let basis = config.cov.basis();
    let (mut t, mut v) = init_networks(config)?;
    let mut log = TrainLog::default();
    if config.epochs == 0 {
        return Ok(TrainOutput {
            transport: t,
            potential: v,
            log,
        });
    }

    let mut data_rng = config.seeds.rng(Stream::Data);
    let mut noise_rng = config.seeds.rng(Stream::Noise);
    let probe = if config.probe_every > 0 {
        let mut rng = stream(config.seeds.eval ^ PROBE_SALT, Stream::Eval);
        let (src, tgt) = datasets::generate_with(kind, config.probe_size, &basis, &mut rng)?;
        let w2 = empirical_w2sq(src.view(), tgt.view())?;
        Some((src, tgt, w2))
    } else {
        None
    };

    let mut adam_t = Adam::new(AdamConfig::with_lr(config.lr_transport), t.mlp().params());
    let mut adam_v = Adam::new(AdamConfig::with_lr(config.lr_potential), v.mlp().params());
    let n = config.batch_size;

    for epoch in 0..config.epochs {
        let at = |e: Error| Error::Training {
            epoch,
            source: Box::new(e),
        };
        let sigma = config.schedule.sigma_at(epoch).map_err(at)?;
        let smoothed_source = |rng: &mut Rng, noise: &mut Rng| -> Result<Array2<f64>> {
            let x = datasets::sample_source(kind, n, &basis, rng)?;
            config.cov.smooth_batch(&x, sigma, noise)
        };

        let x = smoothed_source(&mut data_rng, &mut noise_rng).map_err(at)?;
        let y = datasets::sample_target(kind, n, &basis, &mut data_rng).map_err(at)?;
        let loss_phi = potential_step(&mut v, &t, &mut adam_v, x.view(), y.view()).map_err(at)?;

        let mut loss_theta = f64::NAN;
        for _ in 0..config.inner_steps {
            let x = smoothed_source(&mut data_rng, &mut noise_rng).map_err(at)?;
            loss_theta = transport_step(&v, &mut t, &mut adam_t, x.view(), config.tau).map_err(at)?;
        }

        let mut record = EpochRecord {
            epoch,
            sigma,
            loss_phi,
            loss_theta,
            d_cost: None,
            d_target: None,
        };
        if let Some((src, tgt, w2)) = &probe {
            if (epoch + 1) % config.probe_every == 0 {
                let y = t.forward(src.view()).map_err(at)?;
                let mtc = mean_transport_cost(src.view(), y.view()).map_err(at)?;
                record.d_cost = Some((w2 - mtc).abs());
                record.d_target = Some(empirical_w2sq(y.view(), tgt.view()).map_err(at)?);
            }
        }
        on_epoch(&record, &t, &v).map_err(at)?;
        log.records.push(record);
    }
    Ok(TrainOutput {
        transport: t,
        potential: v,
        log,
    })
}

/// Mean over `x` of
/// `min_y [tau/2 |x - y|^2 - V(y)] - [tau/2 |x - T(x)|^2 - V(T(x))]`,
/// the minimum running over `candidates`. Zero when `T` attains the
/// candidate minimum; negative when some candidate beats `T(x)`.
pub fn c_transform_residual(
    t: &dyn TransportMap,
    v: &dyn Potential,
    x: ArrayView2<'_, f64>,
    candidates: ArrayView2<'_, f64>,
    tau: f64,
) -> Result<f64> {
    if candidates.nrows() == 0 {
        return Err(Error::invalid("c_transform_residual: empty candidate set"));
    }
    if x.nrows() == 0 {
        return Err(Error::invalid("c_transform_residual: empty batch"));
    }
    if candidates.ncols() != x.ncols() {
        return Err(Error::shape("c_transform_residual", x.shape(), candidates.shape()));
    }
    let tx = t.apply(x)?;
    let v_tx = v.value(tx.view())?;
    let v_c = v.value(candidates)?;
    let mut total = 0.0;
    for (i, xi) in x.rows().into_iter().enumerate() {
        let best = candidates
            .rows()
            .into_iter()
            .zip(v_c.iter())
            .map(|(c, &vc)| {
                let d = &xi - &c;
                0.5 * tau * d.dot(&d) - vc
            })
            .fold(f64::INFINITY, f64::min);
        let d = &xi - &tx.row(i);
        let own = 0.5 * tau * d.dot(&d) - v_tx[[i, 0]];
        total += best - own;
    }
    finite(total / x.nrows() as f64, "c_transform_residual")
}
