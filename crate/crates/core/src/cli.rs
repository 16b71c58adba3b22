//! Command implementations behind the `hilbert-ot` binary.
//!
//! Run directory layout (all paths relative to the output directory):
//!
//! | file | written by |
//! |------|------------|
//! | `resolved-config.json` | every command that reads a config |
//! | `source.csv`, `target.csv` | `gen-data` |
//! | `trainlog.csv` | `train` |
//! | `checkpoints/transport.json`, `checkpoints/potential.json` | `train` (final parameters) |
//! | `checkpoints/epoch-NNNNNN-{transport,potential}.json` | `train` with `checkpoint_every > 0` |
//! | `metrics.csv`, `metrics.json` | `train` (skipped when `epochs = 0`) |
//! | `eval-metrics.csv`, `eval-metrics.json` | `eval` |
//! | `plots/coefficient_plane.svg`, `plots/curves.svg` | `plot` |
//! | `check-report.json` | `check` |
//! | `sweep.csv` | `sweep-sigma` |

use std::fs::{self, File};
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use crate::autodiff::save_tensors;
use crate::check::{self, CheckReport};
use crate::error::{Error, Result};
use crate::experiment::{self, ExperimentConfig, SweepRow, SWEEP_CSV_HEADER};
use crate::ot_eval::{MetricsReport, TransportMap};
use crate::plot;
use crate::rng::{Seeds, Stream};
use crate::trainer::{self, TrainOutput};

pub const RESOLVED_CONFIG: &str = "resolved-config.json";
pub const TRANSPORT_CHECKPOINT: &str = "checkpoints/transport.json";
pub const POTENTIAL_CHECKPOINT: &str = "checkpoints/potential.json";

/// Loads the config (or the defaults) and applies command-line overrides.
/// Only the schema is checked here; each command validates values itself.
pub fn load_config(path: Option<&Path>, out: Option<&Path>, seed_override: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = match path {
        Some(p) => ExperimentConfig::read(p)?,
        None => ExperimentConfig::default(),
    };
    if let Some(o) = out {
        cfg.output_dir = o.to_path_buf();
    }
    if let Some(s) = seed_override {
        cfg.seeds = Seeds::from_base(s);
    }
    Ok(cfg)
}

fn create_file(path: &Path) -> Result<BufWriter<File>> {
    if let Some(parent) = path.parent() {
        fs::create_dir_all(parent)?;
    }
    Ok(BufWriter::new(File::create(path)?))
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    let mut w = create_file(path)?;
    w.write_all(text.as_bytes())?;
    w.flush()?;
    Ok(())
}

fn write_resolved(cfg: &ExperimentConfig) -> Result<()> {
    let text = cfg.resolved()?.to_json_pretty()? + "\n";
    write_text(&cfg.output_dir.join(RESOLVED_CONFIG), &text)
}

fn write_metrics(dir: &Path, stem: &str, m: &MetricsReport) -> Result<()> {
    let mut w = create_file(&dir.join(format!("{stem}.csv")))?;
    m.write_csv(&mut w)?;
    w.flush()?;
    write_text(&dir.join(format!("{stem}.json")), &(m.to_json_line()? + "\n"))
}

/// Writes `source.csv` and `target.csv` with `eval.gen_data_n` rows drawn
/// from the data seed.
pub fn cmd_gen_data(cfg: &ExperimentConfig) -> Result<()> {
    cfg.validate()?;
    let spec = crate::datasets::DatasetSpec {
        kind: cfg.dataset,
        n: cfg.eval.gen_data_n,
        seed: cfg.seeds.data,
        basis: cfg.basis,
    };
    let (src, tgt) = crate::datasets::generate(&spec)?;
    write_resolved(cfg)?;
    for (name, batch) in [("source.csv", &src), ("target.csv", &tgt)] {
        let mut w = create_file(&cfg.output_dir.join(name))?;
        batch.write_csv(&mut w)?;
        w.flush()?;
    }
    Ok(())
}

fn save_networks(cfg: &ExperimentConfig, out: &TrainOutputRef<'_>, prefix: &str) -> Result<()> {
    let dir = cfg.output_dir.join("checkpoints");
    fs::create_dir_all(&dir)?;
    save_tensors(
        &dir.join(format!("{prefix}transport.json")),
        &out.transport.to_tensors(),
        experiment::transport_meta(out.transport, cfg),
    )?;
    save_tensors(
        &dir.join(format!("{prefix}potential.json")),
        &out.potential.to_tensors(),
        experiment::potential_meta(cfg),
    )
}

struct TrainOutputRef<'a> {
    transport: &'a crate::models::TransportNet,
    potential: &'a crate::models::PotentialNet,
}

/// Trains, then writes checkpoints, the training log and (unless
/// `epochs = 0`) the held-out metrics.
pub fn cmd_train(cfg: &ExperimentConfig, quiet: bool) -> Result<(TrainOutput, Option<MetricsReport>)> {
    cfg.validate()?;
    let tc = cfg.train_config()?;
    for w in tc.warnings() {
        eprintln!("warning: {w}");
    }
    fs::create_dir_all(&cfg.output_dir)?;
    write_resolved(cfg)?;
    let every = cfg.trainer.checkpoint_every;
    let epochs = cfg.trainer.epochs;
    let output = trainer::train_with(&tc, cfg.dataset, &mut |r, t, v| {
        if !quiet {
            if let (Some(dc), Some(dt)) = (r.d_cost, r.d_target) {
                eprintln!(
                    "epoch {:>6}/{epochs}  sigma {:.4}  L_phi {:+.5}  L_theta {:+.5}  probe d_cost {:.4}  d_target {:.4}",
                    r.epoch + 1,
                    r.sigma,
                    r.loss_phi,
                    r.loss_theta,
                    dc,
                    dt
                );
            }
        }
        if every > 0 && (r.epoch + 1) % every == 0 {
            let refs = TrainOutputRef {
                transport: t,
                potential: v,
            };
            save_networks(cfg, &refs, &format!("epoch-{:06}-", r.epoch + 1))?;
        }
        Ok(())
    })?;
    save_networks(
        cfg,
        &TrainOutputRef {
            transport: &output.transport,
            potential: &output.potential,
        },
        "",
    )?;
    let mut w = create_file(&cfg.output_dir.join("trainlog.csv"))?;
    output.log.write_csv(&mut w)?;
    w.flush()?;
    let metrics = if epochs > 0 {
        let m = experiment::evaluate(cfg, &output.transport)?;
        write_metrics(&cfg.output_dir, "metrics", &m)?;
        if !quiet {
            eprintln!("final (n = {}): d_cost {:.5}  d_target {:.5}", m.n, m.d_cost, m.d_target);
        }
        Some(m)
    } else {
        None
    };
    Ok((output, metrics))
}

/// Evaluates a transport checkpoint on a held-out set from the eval seed.
pub fn cmd_eval(cfg: &ExperimentConfig, checkpoint: Option<&Path>) -> Result<MetricsReport> {
    cfg.validate()?;
    let default = cfg.output_dir.join(TRANSPORT_CHECKPOINT);
    let path = checkpoint.map(Path::to_path_buf).unwrap_or(default);
    let path = if path.is_dir() { path.join(TRANSPORT_CHECKPOINT) } else { path };
    let t = experiment::load_transport(&path, cfg.basis)?;
    let m = experiment::evaluate(cfg, &t)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_resolved(cfg)?;
    write_metrics(&cfg.output_dir, "eval-metrics", &m)?;
    Ok(m)
}

/// Renders the coefficient-plane scatter and the curve strips for a trained
/// run directory. Returns the written paths.
pub fn cmd_plot(run_dir: &Path) -> Result<Vec<PathBuf>> {
    let cfg_path = run_dir.join(RESOLVED_CONFIG);
    if !cfg_path.exists() {
        return Err(Error::MissingArtifact(cfg_path));
    }
    let cfg = ExperimentConfig::load(&cfg_path)?;
    let t = experiment::load_transport(&run_dir.join(TRANSPORT_CHECKPOINT), cfg.basis)?;
    let (src, tgt) = {
        let mut rng = cfg.seeds.rng(Stream::Eval);
        crate::datasets::generate_with(cfg.dataset, cfg.eval.plot_n, &cfg.basis, &mut rng)?
    };
    let mapped = t.apply(src.view())?;
    let title = format!("{} : source, target and transported samples", cfg.dataset);
    let plane = plot::coefficient_plane_svg(src.view(), tgt.view(), mapped.view(), &cfg.seeds, &title)?;
    let curves = plot::curves_svg(&cfg.basis, src.view(), mapped.view(), 5)?;
    let dir = run_dir.join("plots");
    let paths = vec![dir.join("coefficient_plane.svg"), dir.join("curves.svg")];
    write_text(&paths[0], &plane)?;
    write_text(&paths[1], &curves)?;
    Ok(paths)
}

/// Runs the invariant suite on the config's covariance and basis; the
/// report is also written to `check-report.json` when `write` is set.
pub fn cmd_check(cfg: &ExperimentConfig, quick: bool, write: bool) -> Result<CheckReport> {
    let report = check::run_checks(quick, &cfg.covariance, cfg.basis);
    if write {
        write_text(
            &cfg.output_dir.join("check-report.json"),
            &(serde_json::to_string_pretty(&report)? + "\n"),
        )?;
    }
    Ok(report)
}

/// Parses a comma-separated list such as `0.3,0.15,0.06`.
pub fn parse_list<T: std::str::FromStr>(s: &str) -> Result<Vec<T>> {
    s.split(',')
        .map(str::trim)
        .filter(|p| !p.is_empty())
        .map(|p| p.parse::<T>().map_err(|_| Error::Config(format!("cannot parse `{p}` in list `{s}`"))))
        .collect()
}

/// Worker threads for sweeps: `HISNOT_THREADS` if set, else 1.
pub fn thread_cap() -> Result<usize> {
    match std::env::var("HISNOT_THREADS") {
        Ok(v) => v
            .trim()
            .parse::<usize>()
            .ok()
            .filter(|&n| n >= 1)
            .ok_or_else(|| Error::Config(format!("HISNOT_THREADS must be a positive integer, got `{v}`"))),
        Err(_) => Ok(1),
    }
}

pub fn cmd_sweep_sigma(cfg: &ExperimentConfig, sigmas: &[f64], seeds: &[u64], threads: usize) -> Result<Vec<SweepRow>> {
    cfg.validate()?;
    let rows = experiment::sweep_sigma(cfg, sigmas, seeds, threads)?;
    fs::create_dir_all(&cfg.output_dir)?;
    write_resolved(cfg)?;
    let mut w = create_file(&cfg.output_dir.join("sweep.csv"))?;
    writeln!(w, "{SWEEP_CSV_HEADER}")?;
    for r in &rows {
        writeln!(w, "{}", r.csv_row())?;
    }
    w.flush()?;
    Ok(rows)
}
