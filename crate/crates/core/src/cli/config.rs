//! Experiment configs: a flat TOML file with one `[model]` table.
//!
//! ```toml
//! subcommand = "range"
//! seed = 7
//! x_max = 100000
//!
//! [model]
//! kind = "point_mass"
//! triple = [0.2, 0.4, 0.4]
//! ```
//!
//! Unknown keys are errors. [`ExperimentConfig::resolve`] fills in the
//! defaults for the chosen subcommand and drops keys it does not use; the
//! result is what gets echoed to `manifest.cfg`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use crate::env::{EnvModel, ModelKind, ProbTriple, DEFAULT_FLOOR};
use crate::error::{Error, Result};
use crate::walk::DEFAULT_CONFIRM;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Subcommand {
    Classify,
    Lyapunov,
    LdRate,
    Range,
    Renewals,
    Identities,
    Hitting,
    Tail,
}

impl Subcommand {
    pub fn name(&self) -> &'static str {
        match self {
            Subcommand::Classify => "classify",
            Subcommand::Lyapunov => "lyapunov",
            Subcommand::LdRate => "ld-rate",
            Subcommand::Range => "range",
            Subcommand::Renewals => "renewals",
            Subcommand::Identities => "identities",
            Subcommand::Hitting => "hitting",
            Subcommand::Tail => "tail",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AtomConfig {
    pub triple: [f64; 3],
    pub weight: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ModelConfig {
    PointMass {
        triple: [f64; 3],
    },
    Mixture {
        atoms: Vec<AtomConfig>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
    },
    DirichletFloor {
        alpha: [f64; 3],
        #[serde(default, skip_serializing_if = "Option::is_none")]
        floor: Option<f64>,
    },
}

fn triple(t: [f64; 3]) -> Result<ProbTriple> {
    ProbTriple::new(t[0], t[1], t[2])
}

impl ModelConfig {
    pub fn build(&self) -> Result<EnvModel> {
        match self {
            ModelConfig::PointMass { triple: t } => Ok(EnvModel::point_mass(triple(*t)?)),
            ModelConfig::Mixture { atoms, floor } => {
                let atoms = atoms
                    .iter()
                    .map(|a| Ok((triple(a.triple)?, a.weight)))
                    .collect::<Result<Vec<_>>>()?;
                EnvModel::new(ModelKind::FiniteMixture(atoms), floor.unwrap_or(0.0))
            }
            ModelConfig::DirichletFloor { alpha, floor } => {
                EnvModel::dirichlet_floor(*alpha, floor.unwrap_or(DEFAULT_FLOOR))
            }
        }
    }

    fn resolved(&self) -> Self {
        match self.clone() {
            ModelConfig::Mixture { atoms, floor } => ModelConfig::Mixture {
                atoms,
                floor: Some(floor.unwrap_or(0.0)),
            },
            ModelConfig::DirichletFloor { alpha, floor } => ModelConfig::DirichletFloor {
                alpha,
                floor: Some(floor.unwrap_or(DEFAULT_FLOOR)),
            },
            m => m,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub subcommand: Subcommand,
    pub seed: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub replicas: Option<u64>,
    /// Product length for `classify`/`lyapunov`, depth for `hitting`.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub x_max: Option<i64>,
    /// Confirmation window for regeneration epochs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirm_w: Option<i64>,
    /// Escape level standing in for `D = ∞` in excursions.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub confirm_c: Option<i64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub cap: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_grid: Option<Vec<u64>>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub eta: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub renorm_period: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub n_batches: Option<u64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub z: Option<f64>,
    /// Rerun identity estimates at twice the window.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sensitivity: Option<bool>,
    /// Worker threads; 0 means all cores. Never changes the outputs.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub threads: Option<usize>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub output_dir: Option<PathBuf>,
    pub model: ModelConfig,
}

pub const DEFAULT_CAP: u64 = 100_000_000;

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> std::result::Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn to_toml(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    /// Fills defaults for the subcommand, drops unused keys and validates.
    pub fn resolve(&self) -> Result<Self> {
        use Subcommand::*;
        let c = self;
        let keep = |used: bool, v: Option<u64>, d: u64| used.then(|| v.unwrap_or(d));
        let sub = c.subcommand;
        let mut r = ExperimentConfig {
            subcommand: sub,
            seed: c.seed,
            replicas: match sub {
                LdRate => Some(c.replicas.unwrap_or(10_000)),
                Identities => Some(c.replicas.unwrap_or(100_000)),
                Tail => Some(c.replicas.unwrap_or(1_000_000)),
                _ => None,
            },
            n: match sub {
                Classify | Lyapunov => Some(c.n.unwrap_or(1_000_000)),
                Hitting => Some(c.n.unwrap_or(25)),
                _ => None,
            },
            x_max: matches!(sub, Range | Renewals).then(|| c.x_max.unwrap_or(100_000)),
            confirm_w: matches!(sub, Range | Renewals | Identities).then(|| c.confirm_w.unwrap_or(DEFAULT_CONFIRM)),
            confirm_c: (sub == Tail).then(|| c.confirm_c.unwrap_or(DEFAULT_CONFIRM)),
            cap: keep(matches!(sub, Range | Renewals | Identities | Tail), c.cap, DEFAULT_CAP),
            n_grid: match sub {
                LdRate => Some(c.n_grid.clone().unwrap_or_else(|| vec![10, 20, 40, 80, 160])),
                Tail => Some(c.n_grid.clone().unwrap_or_else(|| (0..=30).collect())),
                _ => None,
            },
            eta: (sub == LdRate).then(|| c.eta.unwrap_or(0.0)),
            renorm_period: keep(sub == Lyapunov, c.renorm_period, 16),
            n_batches: keep(sub == Lyapunov, c.n_batches, 50),
            z: matches!(sub, Classify | Lyapunov | Identities).then(|| c.z.unwrap_or(3.0)),
            sensitivity: (sub == Identities).then(|| c.sensitivity.unwrap_or(true)),
            threads: Some(c.threads.unwrap_or(0)),
            output_dir: c.output_dir.clone(),
            model: c.model.resolved(),
        };
        if sub == Classify {
            // classification uses the fixed batch settings
            r.renorm_period = None;
            r.n_batches = None;
        }
        r.model.build()?;
        if let Some(z) = r.z {
            if z.is_nan() || z <= 0.0 {
                return Err(Error::InvalidParameter("z must be positive".into()));
            }
        }
        for (name, v) in [("confirm_w", r.confirm_w), ("confirm_c", r.confirm_c)] {
            if v.is_some_and(|v| v < 1) {
                return Err(Error::InvalidParameter(format!("{name} must be ≥ 1")));
            }
        }
        Ok(r)
    }

    pub fn env_model(&self) -> Result<EnvModel> {
        self.model.build()
    }
}
