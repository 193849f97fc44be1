//! Transfer matrices, overflow-safe products and the top Lyapunov exponent.
//!
//! For a site with law `(q, p, r)` over the steps `(−1, +1, +2)` the transfer
//! matrix is
//!
//! ```text
//!     [ (p + r)/q   r/q ]
//!     [     1        0  ]
//! ```
//!
//! The sign of the top Lyapunov exponent of the i.i.d. product
//! `A_0 A_1 ⋯ A_{n−1}` decides whether the walk drifts to `+∞`, to `−∞`, or
//! oscillates.

use serde::Serialize;

use crate::env::{site_law, EnvModel, ProbTriple};
use crate::error::{Error, Result};
use crate::parallel::{self, parallel_map};
use crate::stats::Moments;

pub const DEFAULT_RENORM_PERIOD: u64 = 16;
pub const DEFAULT_BATCHES: u64 = 50;
pub const DEFAULT_Z: f64 = 3.0;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Matrix2 {
    pub a11: f64,
    pub a12: f64,
    pub a21: f64,
    pub a22: f64,
}

impl Matrix2 {
    pub const IDENTITY: Matrix2 = Matrix2 {
        a11: 1.0,
        a12: 0.0,
        a21: 0.0,
        a22: 1.0,
    };

    pub fn new(a11: f64, a12: f64, a21: f64, a22: f64) -> Self {
        Self { a11, a12, a21, a22 }
    }

    pub fn mul(&self, o: &Matrix2) -> Matrix2 {
        Matrix2 {
            a11: self.a11 * o.a11 + self.a12 * o.a21,
            a12: self.a11 * o.a12 + self.a12 * o.a22,
            a21: self.a21 * o.a11 + self.a22 * o.a21,
            a22: self.a21 * o.a12 + self.a22 * o.a22,
        }
    }

    /// `self * v` for a column vector.
    pub fn apply(&self, v: [f64; 2]) -> [f64; 2] {
        [
            self.a11 * v[0] + self.a12 * v[1],
            self.a21 * v[0] + self.a22 * v[1],
        ]
    }

    pub fn scale(&self, s: f64) -> Matrix2 {
        Matrix2::new(self.a11 * s, self.a12 * s, self.a21 * s, self.a22 * s)
    }

    pub fn entries(&self) -> [f64; 4] {
        [self.a11, self.a12, self.a21, self.a22]
    }

    /// Largest absolute entry.
    pub fn max_norm(&self) -> f64 {
        self.entries().iter().fold(0.0_f64, |m, x| m.max(x.abs()))
    }

    /// Operator norm induced by the l1 vector norm (max column sum).
    pub fn l1_norm(&self) -> f64 {
        (self.a11.abs() + self.a21.abs()).max(self.a12.abs() + self.a22.abs())
    }

    pub fn is_positive(&self) -> bool {
        self.entries().iter().all(|&x| x > 0.0)
    }

    pub fn is_finite(&self) -> bool {
        self.entries().iter().all(|x| x.is_finite())
    }
}

/// Transfer matrix `[[a(1), a(2)], [1, 0]]` of a site.
pub fn transfer_matrix(t: &ProbTriple) -> Result<Matrix2> {
    transfer_matrix_at(t, 0)
}

pub(crate) fn transfer_matrix_at(t: &ProbTriple, site: i64) -> Result<Matrix2> {
    if t.p_left <= 0.0 {
        return Err(Error::DegenerateEnvironment { site });
    }
    Ok(Matrix2::new(
        (t.p_one + t.p_two) / t.p_left,
        t.p_two / t.p_left,
        1.0,
        0.0,
    ))
}

/// A product of nonnegative matrices kept as a unit-max-norm matrix times
/// `exp(log_scale)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScaledProduct {
    normalized: Matrix2,
    log_scale: f64,
    length: u64,
}

impl Default for ScaledProduct {
    fn default() -> Self {
        Self::new()
    }
}

impl ScaledProduct {
    pub fn new() -> Self {
        Self {
            normalized: Matrix2::IDENTITY,
            log_scale: 0.0,
            length: 0,
        }
    }

    pub fn normalized(&self) -> &Matrix2 {
        &self.normalized
    }

    pub fn log_scale(&self) -> f64 {
        self.log_scale
    }

    pub fn len(&self) -> u64 {
        self.length
    }

    pub fn is_empty(&self) -> bool {
        self.length == 0
    }

    /// Appends a factor on the right.
    pub fn push(&mut self, m: &Matrix2) {
        self.normalized = self.normalized.mul(m);
        self.length += 1;
    }

    /// Moves the max-norm of the working matrix into `log_scale`.
    pub fn renormalize(&mut self) -> Result<()> {
        let norm = self.normalized.max_norm();
        if !norm.is_finite() || norm <= 0.0 {
            return Err(Error::Numerical(format!(
                "product norm {norm} after {} factors",
                self.length
            )));
        }
        self.normalized = self.normalized.scale(1.0 / norm);
        self.log_scale += norm.ln();
        Ok(())
    }

    /// `log ‖product‖` in the max-entry norm.
    pub fn log_norm(&self) -> f64 {
        self.log_scale + self.normalized.max_norm().ln()
    }

    /// `log ‖product‖` in the l1 operator norm.
    pub fn log_l1_norm(&self) -> f64 {
        self.log_scale + self.normalized.l1_norm().ln()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub enum Regime {
    TransientRight,
    Recurrent,
    TransientLeft,
}

impl Regime {
    /// Sign test at `z` standard errors.
    pub fn from_estimate(gamma2: f64, stderr: f64, z: f64) -> Regime {
        if gamma2 > z * stderr {
            Regime::TransientRight
        } else if gamma2 < -z * stderr {
            Regime::TransientLeft
        } else {
            Regime::Recurrent
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            Regime::TransientRight => "TransientRight",
            Regime::Recurrent => "Recurrent",
            Regime::TransientLeft => "TransientLeft",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct RegimeReport {
    pub gamma2_hat: f64,
    pub stderr: f64,
    pub regime: Regime,
    pub n_steps: u64,
    pub n_batches: u64,
    pub z: f64,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LyapunovParams {
    pub n: u64,
    pub renorm_period: u64,
    pub n_batches: u64,
    pub z: f64,
}

impl LyapunovParams {
    pub fn with_steps(n: u64) -> Self {
        Self {
            n,
            renorm_period: DEFAULT_RENORM_PERIOD,
            n_batches: DEFAULT_BATCHES,
            z: DEFAULT_Z,
        }
    }

    fn validate(&self) -> Result<()> {
        if self.renorm_period == 0 {
            return Err(Error::InvalidParameter("renorm_period must be ≥ 1".into()));
        }
        if self.n < 10 * self.renorm_period {
            return Err(Error::InvalidParameter(format!(
                "n = {} must be at least 10·renorm_period = {}",
                self.n,
                10 * self.renorm_period
            )));
        }
        if self.n_batches < 2 || self.n_batches > self.n {
            return Err(Error::InvalidParameter(format!(
                "n_batches = {} must lie in [2, n]",
                self.n_batches
            )));
        }
        if self.z.is_nan() || self.z <= 0.0 {
            return Err(Error::InvalidParameter("z must be positive".into()));
        }
        Ok(())
    }
}

/// Estimates γ₂ from `A_0 ⋯ A_{n−1}` with factors drawn from sites `0..n`
/// of the environment `seed`. The standard error comes from batch means of
/// the log-norm increments over `n_batches` contiguous segments.
pub fn lyapunov_estimate(
    model: &EnvModel,
    seed: u64,
    params: LyapunovParams,
) -> Result<RegimeReport> {
    params.validate()?;
    model.validate()?;
    let n = params.n;
    let batch_len = n / params.n_batches;
    // the last batch absorbs the remainder
    let batch_end = |b: u64| {
        if b + 1 == params.n_batches {
            n
        } else {
            (b + 1) * batch_len
        }
    };
    let mut product = ScaledProduct::new();
    let mut batches = Moments::default();
    let mut next_batch = 0u64;
    let mut batch_start_log = 0.0;
    let mut batch_start_len = 0u64;
    for i in 0..n {
        let m = transfer_matrix_at(&site_law(model, seed, i as i64), i as i64)?;
        product.push(&m);
        let done = i + 1;
        if done % params.renorm_period == 0 {
            product.renormalize()?;
        }
        if done == batch_end(next_batch) {
            let log_norm = product.log_norm();
            if !log_norm.is_finite() {
                return Err(Error::Numerical(format!(
                    "log-norm {log_norm} at factor {done}"
                )));
            }
            batches.push((log_norm - batch_start_log) / (done - batch_start_len) as f64);
            batch_start_log = log_norm;
            batch_start_len = done;
            next_batch += 1;
        }
    }
    let gamma2_hat = product.log_norm() / n as f64;
    if !gamma2_hat.is_finite() {
        return Err(Error::Numerical("non-finite exponent estimate".into()));
    }
    let stderr = batches.se();
    Ok(RegimeReport {
        gamma2_hat,
        stderr,
        regime: Regime::from_estimate(gamma2_hat, stderr, params.z),
        n_steps: n,
        n_batches: batches.n,
        z: params.z,
    })
}

/// Regime of `model` from a sign test on the estimated γ₂.
pub fn classify(model: &EnvModel, seed: u64, n: u64) -> Result<RegimeReport> {
    lyapunov_estimate(model, seed, LyapunovParams::with_steps(n))
}

/// One row of a large-deviation frequency table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct LdRateRow {
    pub n: u64,
    pub hits: u64,
    pub replicas: u64,
    pub p_hat: f64,
    /// `−ln(p_hat)/n`; `+∞` when no replica hit the event.
    pub rate_hat: f64,
    /// Delta-method SE of `rate_hat` (`+∞` when undefined).
    pub rate_se: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LdRateReport {
    pub eta: f64,
    pub gamma2_reference: f64,
    /// Set when `eta` is not below the reference γ₂, so the event is typical.
    pub typical_event_warning: bool,
    pub rows: Vec<LdRateRow>,
}

pub const LD_MIN_REPLICAS: u64 = 1_000;

/// Monte Carlo frequency of `(1/n) log ‖A_1 ⋯ A_n‖ < eta` for each `n`.
///
/// Raw frequencies only: no limit is extrapolated.
pub fn ld_rate_estimate(
    model: &EnvModel,
    eta: f64,
    n_grid: &[u64],
    replicas: u64,
    seed: u64,
    threads: usize,
) -> Result<LdRateReport> {
    model.validate()?;
    if replicas < LD_MIN_REPLICAS {
        return Err(Error::InvalidParameter(format!(
            "ld-rate needs at least {LD_MIN_REPLICAS} replicas, got {replicas}"
        )));
    }
    if n_grid.is_empty() || n_grid.contains(&0) {
        return Err(Error::InvalidParameter("n_grid must be non-empty and positive".into()));
    }
    if !eta.is_finite() {
        return Err(Error::InvalidParameter("eta must be finite".into()));
    }
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let n_max = *grid.last().expect("non-empty grid");

    let reference = classify(model, parallel::substream(seed, "ld-gamma"), 100_000)?;

    let worker = |r: parallel::Replica| -> Result<Vec<u64>> {
        let mut product = ScaledProduct::new();
        let mut hits = vec![0u64; grid.len()];
        let mut next = 0usize;
        for i in 0..n_max {
            let m = transfer_matrix_at(&site_law(model, r.seed, i as i64), i as i64)?;
            product.push(&m);
            let done = i + 1;
            if done % DEFAULT_RENORM_PERIOD == 0 {
                product.renormalize()?;
            }
            while next < grid.len() && grid[next] == done {
                if product.log_norm() / (done as f64) < eta {
                    hits[next] = 1;
                }
                next += 1;
            }
        }
        Ok(hits)
    };
    let totals = parallel_map(
        seed,
        replicas,
        threads,
        vec![0u64; grid.len()],
        worker,
        |mut acc, h| {
            for (a, x) in acc.iter_mut().zip(h) {
                *a += x;
            }
            acc
        },
    )?;

    let rows = grid
        .iter()
        .zip(totals)
        .map(|(&n, hits)| {
            let p_hat = hits as f64 / replicas as f64;
            let (rate_hat, rate_se) = if hits == 0 {
                (f64::INFINITY, f64::INFINITY)
            } else {
                let rate = -p_hat.ln() / n as f64;
                let se_p = (p_hat * (1.0 - p_hat) / replicas as f64).sqrt();
                (rate.max(0.0), se_p / (p_hat * n as f64))
            };
            LdRateRow {
                n,
                hits,
                replicas,
                p_hat,
                rate_hat,
                rate_se,
            }
        })
        .collect();
    Ok(LdRateReport {
        eta,
        gamma2_reference: reference.gamma2_hat,
        typical_event_warning: eta >= reference.gamma2_hat,
        rows,
    })
}
