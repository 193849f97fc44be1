//! Config-driven experiment runner.
//!
//! Every run writes `manifest.cfg` (the resolved config), `summary.json` and
//! one or more CSV files into the output directory. Data files depend only
//! on the resolved config, never on the thread count. Failures are written
//! as a JSON error record (`error.json` and stderr).

pub mod config;

use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use serde::Serialize;
use serde_json::{json, Value};

pub use config::{ExperimentConfig, ModelConfig, Subcommand};

use crate::env::realize_window;
use crate::error::Error;
use crate::hitting::{hit_left_prob_formula, hit_left_prob_oracle, HittingQuery};
use crate::matrices::{ld_rate_estimate, lyapunov_estimate, LyapunovParams};
use crate::range::{range_count, range_study, tail_estimate, theta_renewal};
use crate::renewal::{identity_report, nu_blocks, IdentityCheck, IdentityParams, IdentityReport};

pub const DEFAULT_OUTPUT_DIR: &str = "rwre-out";

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),
    #[error("i/o error on {path}: {message}")]
    Io { path: PathBuf, message: String },
    #[error(transparent)]
    Run(#[from] Error),
}

impl CliError {
    /// Structured record for machine consumers.
    pub fn record(&self) -> Value {
        let mut e = json!({ "message": self.to_string() });
        let kind = match self {
            CliError::Config(_) => "config",
            CliError::Io { .. } => "io",
            CliError::Run(err) => {
                if let Error::Replica { index, seed, source } = err {
                    e["replica_index"] = json!(index);
                    e["replica_seed"] = json!(seed);
                    e["cause"] = json!(source.kind());
                }
                err.kind()
            }
        };
        e["kind"] = json!(kind);
        json!({ "error": e })
    }
}

fn io_err(path: &Path) -> impl FnOnce(std::io::Error) -> CliError + '_ {
    move |e| CliError::Io {
        path: path.to_path_buf(),
        message: e.to_string(),
    }
}

/// Reads and resolves a config file.
pub fn load_config(path: &Path) -> Result<ExperimentConfig, CliError> {
    let text = fs::read_to_string(path).map_err(io_err(path))?;
    let raw = ExperimentConfig::from_toml(&text).map_err(CliError::Config)?;
    raw.resolve().map_err(|e| CliError::Config(e.to_string()))
}

/// Fixed-width float formatting for data files.
pub fn fmt_f64(x: f64) -> String {
    format!("{x:.16e}")
}

/// A CSV file held in memory until the run succeeds.
#[derive(Debug, Clone)]
pub struct Table {
    pub name: String,
    pub text: String,
}

impl Table {
    fn new(name: &str, header: &[&str]) -> Self {
        Self {
            name: name.to_string(),
            text: header.join(",") + "\n",
        }
    }

    fn row(&mut self, cells: &[String]) {
        let _ = writeln!(self.text, "{}", cells.join(","));
    }
}

#[derive(Debug, Clone)]
pub struct Report {
    pub summary: Value,
    pub tables: Vec<Table>,
}

fn value<T: Serialize>(x: &T) -> Value {
    serde_json::to_value(x).expect("report serializes")
}

/// Runs a resolved config and returns its outputs without touching disk.
pub fn execute(cfg: &ExperimentConfig) -> Result<Report, Error> {
    let model = cfg.env_model()?;
    let seed = cfg.seed;
    let threads = cfg.threads.unwrap_or(0);
    let need = |v: Option<u64>, key: &str| v.ok_or_else(|| Error::InvalidParameter(format!("missing {key}")));
    let need_i = |v: Option<i64>, key: &str| v.ok_or_else(|| Error::InvalidParameter(format!("missing {key}")));

    let report = match cfg.subcommand {
        Subcommand::Classify | Subcommand::Lyapunov => {
            let mut params = LyapunovParams::with_steps(need(cfg.n, "n")?);
            params.z = cfg.z.unwrap_or(params.z);
            if let Some(p) = cfg.renorm_period {
                params.renorm_period = p;
            }
            if let Some(b) = cfg.n_batches {
                params.n_batches = b;
            }
            let r = lyapunov_estimate(&model, seed, params)?;
            let mut t = Table::new(cfg.subcommand.name(), &["n", "gamma2_hat", "stderr", "regime"]);
            t.row(&[
                r.n_steps.to_string(),
                fmt_f64(r.gamma2_hat),
                fmt_f64(r.stderr),
                r.regime.name().to_string(),
            ]);
            Report {
                summary: value(&r),
                tables: vec![t],
            }
        }
        Subcommand::LdRate => {
            let grid = cfg.n_grid.clone().unwrap_or_default();
            let eta = cfg.eta.unwrap_or(0.0);
            let r = ld_rate_estimate(&model, eta, &grid, need(cfg.replicas, "replicas")?, seed, threads)?;
            let mut t = Table::new("ld_rate", &["n", "hits", "replicas", "p_hat", "rate_hat", "rate_se"]);
            for row in &r.rows {
                t.row(&[
                    row.n.to_string(),
                    row.hits.to_string(),
                    row.replicas.to_string(),
                    fmt_f64(row.p_hat),
                    fmt_f64(row.rate_hat),
                    fmt_f64(row.rate_se),
                ]);
            }
            Report {
                summary: value(&r),
                tables: vec![t],
            }
        }
        Subcommand::Range => {
            let s = range_study(
                &model,
                seed,
                need_i(cfg.x_max, "x_max")?,
                need_i(cfg.confirm_w, "confirm_w")?,
                need(cfg.cap, "cap")?,
            )?;
            let mut t = Table::new("range_curve", &["x", "n_x"]);
            for (x, n) in &s.curve {
                t.row(&[x.to_string(), n.to_string()]);
            }
            let mut summary = value(&s);
            summary.as_object_mut().expect("object").remove("curve");
            summary["census_ok"] = json!(s.census_ok());
            summary["estimators_agree_3se"] = json!(s.estimators_agree(3.0));
            Report {
                summary,
                tables: vec![t],
            }
        }
        Subcommand::Renewals => {
            let x_max = need_i(cfg.x_max, "x_max")?;
            let run = range_count(
                &model,
                seed,
                x_max,
                need_i(cfg.confirm_w, "confirm_w")?,
                need(cfg.cap, "cap")?,
            )?;
            let mut epochs = Table::new("renewals", &["time", "position", "overshoot", "attempts"]);
            for r in &run.records {
                epochs.row(&[
                    r.time.to_string(),
                    r.position.to_string(),
                    r.overshoot.to_string(),
                    r.attempts.to_string(),
                ]);
            }
            let scanned = nu_blocks(&run.records);
            let mut blocks = Table::new(
                "nu_blocks",
                &["start_pos", "end_pos", "x_increment", "t_increment", "skipped_site", "epochs"],
            );
            for b in &scanned.blocks {
                blocks.row(&[
                    b.start_pos.to_string(),
                    b.end_pos.to_string(),
                    b.x_increment.to_string(),
                    b.t_increment.to_string(),
                    b.skipped_site.to_string(),
                    b.epochs.to_string(),
                ]);
            }
            let stats = run.block_stats().ok();
            let theta = stats.as_ref().map(theta_renewal).and_then(|t| t.ok());
            let (unvisited, nus) = run.skipped_census();
            Report {
                summary: json!({
                    "x_max": x_max,
                    "steps": run.steps,
                    "epochs": run.records.len(),
                    "nu_epochs": nus,
                    "unvisited_to_last_nu": unvisited,
                    "census_ok": unvisited == nus,
                    "first_nu": scanned.first_nu,
                    "block_stats": stats,
                    "theta_renewal": theta,
                    "warning": scanned.warning,
                }),
                tables: vec![epochs, blocks],
            }
        }
        Subcommand::Identities => {
            let params = IdentityParams {
                replicas: need(cfg.replicas, "replicas")?,
                seed,
                confirm: need_i(cfg.confirm_w, "confirm_w")?,
                cap: need(cfg.cap, "cap")?,
                threads,
                z: cfg.z.unwrap_or(3.0),
                sensitivity: cfg.sensitivity.unwrap_or(true),
            };
            let r = identity_report(&model, params)?;
            let mut t = Table::new(
                "identities",
                &["confirm", "quantity", "estimate", "estimate_se", "reference", "reference_se", "pass"],
            );
            identity_rows(&mut t, &r);
            if let Some(s) = &r.sensitivity {
                identity_rows(&mut t, s);
            }
            let mut summary = value(&r);
            summary["all_pass"] = json!(r.all_pass());
            Report {
                summary,
                tables: vec![t],
            }
        }
        Subcommand::Hitting => {
            let n = need(cfg.n, "n")?;
            let env = realize_window(&model, seed, -(n as i64), 0)?;
            let mut t = Table::new("hitting", &["depth", "log_p_formula", "p_formula", "p_oracle", "rel_err"]);
            let mut worst = 0.0f64;
            for depth in 0..=n {
                let q = HittingQuery::from_env(&env, depth)?;
                let f = hit_left_prob_formula(&q)?;
                let o = hit_left_prob_oracle(&q)?;
                let rel = ((f.p - o.p) / o.p).abs();
                worst = worst.max(rel);
                t.row(&[depth.to_string(), fmt_f64(f.log_p), fmt_f64(f.p), fmt_f64(o.p), fmt_f64(rel)]);
            }
            Report {
                summary: json!({ "max_depth": n, "max_rel_err": worst }),
                tables: vec![t],
            }
        }
        Subcommand::Tail => {
            let grid: Vec<i64> = cfg.n_grid.clone().unwrap_or_default().into_iter().map(|n| n as i64).collect();
            let c = tail_estimate(
                &model,
                &grid,
                need(cfg.replicas, "replicas")?,
                need_i(cfg.confirm_c, "confirm_c")?,
                seed,
                threads,
                need(cfg.cap, "cap")?,
            )?;
            let mut t = Table::new("tail", &["n", "exceed", "survival", "ci_lo", "ci_hi"]);
            for p in &c.points {
                t.row(&[
                    p.n.to_string(),
                    p.exceed.to_string(),
                    fmt_f64(p.survival),
                    fmt_f64(p.ci_lo),
                    fmt_f64(p.ci_hi),
                ]);
            }
            let mut summary = value(&c);
            summary.as_object_mut().expect("object").remove("points");
            Report {
                summary,
                tables: vec![t],
            }
        }
    };
    Ok(report)
}

fn identity_rows(t: &mut Table, r: &IdentityReport) {
    let w = r.confirm.to_string();
    let mut check = |name: &str, c: &IdentityCheck| {
        t.row(&[
            w.clone(),
            name.to_string(),
            fmt_f64(c.lhs.value),
            fmt_f64(c.lhs.se),
            fmt_f64(c.rhs.value),
            fmt_f64(c.rhs.se),
            c.pass.to_string(),
        ]);
    };
    check("mean_x_tau1", &r.tau1_mean);
    check("mean_x_tau_nu", &r.nu_mean);
    for (prefix, checks) in [("p_s", &r.s_k), ("p_r", &r.r_k)] {
        for c in checks {
            t.row(&[
                w.clone(),
                format!("{prefix}{}_finite", c.k),
                fmt_f64(c.estimate.value),
                fmt_f64(c.estimate.se),
                fmt_f64(c.prediction.value),
                fmt_f64(c.prediction.se),
                c.pass.to_string(),
            ]);
        }
    }
}

/// Output directory: explicit override, then config, then the default.
pub fn output_dir(cfg: &ExperimentConfig, over: Option<&Path>) -> PathBuf {
    over.map(Path::to_path_buf)
        .or_else(|| cfg.output_dir.clone())
        .unwrap_or_else(|| PathBuf::from(DEFAULT_OUTPUT_DIR))
}

/// Runs `cfg` and writes all outputs into `dir`. On failure the error
/// record is written to `dir/error.json` as well.
pub fn run(cfg: &ExperimentConfig, dir: &Path) -> Result<Report, CliError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    let manifest = dir.join("manifest.cfg");
    fs::write(&manifest, cfg.to_toml()).map_err(io_err(&manifest))?;
    match execute(cfg) {
        Ok(mut report) => {
            report.summary["subcommand"] = json!(cfg.subcommand.name());
            report.summary["seed"] = json!(cfg.seed);
            let path = dir.join("summary.json");
            let text = serde_json::to_string_pretty(&report.summary).expect("summary serializes") + "\n";
            fs::write(&path, text).map_err(io_err(&path))?;
            for t in &report.tables {
                let path = dir.join(format!("{}.csv", t.name));
                fs::write(&path, &t.text).map_err(io_err(&path))?;
            }
            Ok(report)
        }
        Err(e) => {
            let err = CliError::Run(e);
            let path = dir.join("error.json");
            let _ = fs::write(&path, err.record().to_string() + "\n");
            Err(err)
        }
    }
}
