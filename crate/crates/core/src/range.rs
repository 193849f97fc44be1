//! The range of a right-transient walk: how many sites of `[0, x]` it ever
//! visits, the limiting density θ, and the tail of the excursion maximum.

use std::collections::BTreeMap;
use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::Serialize;

use crate::env::{EnvModel, LazyEnvironment};
use crate::error::{Error, Result};
use crate::parallel::{parallel_map, substream};
use crate::renewal::{block_stats, nu_blocks, require_transient_right, BlockStats, RenewalRecord, RenewalScanner};
use crate::stats::{weighted_line_fit, wilson_interval, Estimate, LineFit};
use crate::walk::{run_excursion, run_walk, walk_rng, Observer};

pub const RANGE_MIN_X: i64 = 1_000;
pub const THETA_MIN_BLOCKS: u64 = 30;
const CURVE_POINTS: i64 = 200;
const BOOTSTRAP_RESAMPLES: usize = 200;

/// Visited flags for sites `0..len`; a bitset.
#[derive(Debug, Clone)]
pub struct VisitedSites {
    bits: Vec<u64>,
    len: i64,
}

impl VisitedSites {
    pub fn new(len: i64) -> Self {
        Self {
            bits: vec![0; (len as usize).div_ceil(64)],
            len,
        }
    }

    pub fn len(&self) -> i64 {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn mark(&mut self, site: i64) {
        if (0..self.len).contains(&site) {
            self.bits[site as usize / 64] |= 1 << (site % 64);
        }
    }

    pub fn contains(&self, site: i64) -> bool {
        (0..self.len).contains(&site) && self.bits[site as usize / 64] >> (site % 64) & 1 == 1
    }

    /// Visited sites in `[0, x]`.
    pub fn count_upto(&self, x: i64) -> u64 {
        if x < 0 {
            return 0;
        }
        let end = (x + 1).min(self.len) as usize;
        let full = end / 64;
        let mut n: u64 = self.bits[..full].iter().map(|w| u64::from(w.count_ones())).sum();
        let rem = end % 64;
        if rem > 0 {
            n += u64::from((self.bits[full] & ((1u64 << rem) - 1)).count_ones());
        }
        n
    }
}

impl Observer for VisitedSites {
    fn observe(&mut self, _time: u64, position: i64) -> ControlFlow<()> {
        self.mark(position);
        ControlFlow::Continue(())
    }
}

/// One quenched walk run past `x_max + W`.
#[derive(Debug, Clone)]
pub struct RangeRun {
    pub x_max: i64,
    pub confirm: i64,
    pub visited: VisitedSites,
    pub records: Vec<RenewalRecord>,
    pub steps: u64,
}

impl RangeRun {
    /// `N(x)`: visited sites in `[0, x]`.
    pub fn n(&self, x: i64) -> u64 {
        self.visited.count_upto(x)
    }

    /// `(x, N(x))` on an even grid ending at `x_max`.
    pub fn curve(&self) -> Vec<(i64, u64)> {
        let mut xs: Vec<i64> = (0..=CURVE_POINTS).map(|i| self.x_max * i / CURVE_POINTS).collect();
        xs.dedup();
        xs.into_iter().map(|x| (x, self.n(x))).collect()
    }

    pub fn unvisited_upto(&self, x: i64) -> u64 {
        (x + 1).max(0) as u64 - self.n(x)
    }

    /// Never-visited sites up to the last confirmed overshoot-2 epoch and
    /// the number of such epochs; the two are equal on a sound run.
    pub fn skipped_census(&self) -> (u64, u64) {
        let nus: Vec<_> = self.records.iter().filter(|r| r.is_nu()).collect();
        match nus.last() {
            None => (0, 0),
            Some(last) => (self.unvisited_upto(last.position), nus.len() as u64),
        }
    }

    /// `N(x_max)/(x_max+1)` with a bootstrap SE over inter-ν segments.
    pub fn theta_direct(&self, seed: u64) -> Estimate {
        let value = self.n(self.x_max) as f64 / (self.x_max + 1) as f64;
        let mut bounds = vec![0];
        bounds.extend(
            self.records
                .iter()
                .filter(|r| r.is_nu() && r.position > 0 && r.position <= self.x_max)
                .map(|r| r.position),
        );
        bounds.push(self.x_max + 1);
        let segments: Vec<(f64, f64)> = bounds
            .windows(2)
            .map(|w| {
                let len = w[1] - w[0];
                let seen = self.n(w[1] - 1) - self.n(w[0] - 1);
                (len as f64, seen as f64)
            })
            .collect();
        let mut rng = ChaCha8Rng::seed_from_u64(substream(seed, "bootstrap"));
        let k = segments.len();
        let resampled: Vec<f64> = (0..BOOTSTRAP_RESAMPLES)
            .map(|_| {
                let (mut len, mut seen) = (0.0, 0.0);
                for _ in 0..k {
                    let (l, s) = segments[rng.random_range(0..k)];
                    len += l;
                    seen += s;
                }
                seen / len
            })
            .collect();
        let m = resampled.iter().sum::<f64>() / BOOTSTRAP_RESAMPLES as f64;
        let var = resampled.iter().map(|x| (x - m) * (x - m)).sum::<f64>() / (BOOTSTRAP_RESAMPLES - 1) as f64;
        Estimate::new(value, var.sqrt())
    }

    pub fn block_stats(&self) -> Result<BlockStats> {
        block_stats(&nu_blocks(&self.records).blocks)
    }
}

/// Runs one walk from 0 in a fresh environment until it passes `x_max + W`,
/// recording visited sites and regeneration epochs.
pub fn range_count(model: &EnvModel, seed: u64, x_max: i64, confirm: i64, cap: u64) -> Result<RangeRun> {
    if x_max < RANGE_MIN_X {
        return Err(Error::InvalidParameter(format!("x_max must be ≥ {RANGE_MIN_X}")));
    }
    require_transient_right(model, seed)?;
    let horizon = x_max + confirm;
    let env = LazyEnvironment::new(model, substream(seed, "env"))?;
    let mut visited = VisitedSites::new(horizon + 3);
    let mut scanner = RenewalScanner::new(confirm)?;
    let mut rng = walk_rng(substream(seed, "walk"));
    let summary = run_walk(&env, 0, horizon, &mut rng, &mut [&mut visited, &mut scanner], cap)?;
    Ok(RangeRun {
        x_max,
        confirm,
        visited,
        records: scanner.into_records(),
        steps: summary.steps,
    })
}

/// `(mean_x − 1)/mean_x` with delta-method SE `se_x/mean_x²`.
pub fn theta_renewal(stats: &BlockStats) -> Result<Estimate> {
    if stats.n_blocks < THETA_MIN_BLOCKS {
        return Err(Error::InsufficientData(format!(
            "{} blocks, need {THETA_MIN_BLOCKS}",
            stats.n_blocks
        )));
    }
    if stats.mean_x < 2.0 {
        return Err(Error::InvariantViolation(format!(
            "mean block length {} below 2",
            stats.mean_x
        )));
    }
    let m = stats.mean_x;
    Ok(Estimate::new((m - 1.0) / m, stats.se_x / (m * m)))
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct RangeStats {
    pub x_max: i64,
    pub confirm: i64,
    pub curve: Vec<(i64, u64)>,
    pub n_x_max: u64,
    pub skipped_sites: u64,
    pub theta_direct: Estimate,
    /// From an independent run; `None` when the blocks are too few.
    pub theta_renewal: Option<Estimate>,
    pub renewal_blocks: Option<BlockStats>,
    pub census_unvisited: u64,
    pub census_nu_epochs: u64,
    pub warnings: Vec<String>,
}

impl RangeStats {
    pub fn census_ok(&self) -> bool {
        self.census_unvisited == self.census_nu_epochs
    }

    pub fn estimators_agree(&self, z: f64) -> Option<bool> {
        self.theta_renewal.map(|r| r.agrees_with(&self.theta_direct, z))
    }
}

/// Direct count and renewal estimate of θ from two independent walks.
pub fn range_study(model: &EnvModel, seed: u64, x_max: i64, confirm: i64, cap: u64) -> Result<RangeStats> {
    let direct = range_count(model, substream(seed, "direct"), x_max, confirm, cap)?;
    let renewal = range_count(model, substream(seed, "renewal"), x_max, confirm, cap)?;
    let mut warnings = Vec::new();
    let scanned = nu_blocks(&renewal.records);
    if let Some(w) = scanned.warning {
        warnings.push(w);
    }
    let renewal_blocks = block_stats(&scanned.blocks).ok();
    let theta_renewal = match renewal_blocks.as_ref().map(theta_renewal) {
        Some(Ok(t)) => Some(t),
        Some(Err(e)) => {
            warnings.push(e.to_string());
            None
        }
        None => None,
    };
    let (census_unvisited, census_nu_epochs) = direct.skipped_census();
    Ok(RangeStats {
        x_max,
        confirm,
        curve: direct.curve(),
        n_x_max: direct.n(x_max),
        skipped_sites: direct.unvisited_upto(x_max),
        theta_direct: direct.theta_direct(seed),
        theta_renewal,
        renewal_blocks,
        census_unvisited,
        census_nu_epochs,
        warnings,
    })
}

pub const TAIL_MIN_REPLICAS: u64 = 10_000;
const TAIL_MIN_EXCEEDANCES: u64 = 25;

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct TailPoint {
    pub n: i64,
    /// Replicas with `D < ∞` and `M > n`.
    pub exceed: u64,
    pub survival: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailCurve {
    pub replicas: u64,
    pub confirm: i64,
    pub points: Vec<TailPoint>,
    pub p_d_finite: Estimate,
    /// Returned with `M = 0`.
    pub returned_flat: u64,
    pub fit: Option<LineFit>,
    pub fitted_rate: Option<f64>,
    pub warning: Option<String>,
}

#[derive(Debug, Clone, Default)]
struct TailSums {
    escaped: u64,
    heights: BTreeMap<i64, u64>,
}

/// Empirical `P(M > n, D < ∞)` over fresh environments, with an
/// exponential fit on the grid points that have at least 25 exceedances.
pub fn tail_estimate(
    model: &EnvModel,
    n_grid: &[i64],
    replicas: u64,
    confirm: i64,
    seed: u64,
    threads: usize,
    cap: u64,
) -> Result<TailCurve> {
    if replicas < TAIL_MIN_REPLICAS {
        return Err(Error::InvalidParameter(format!(
            "tail estimate needs at least {TAIL_MIN_REPLICAS} replicas"
        )));
    }
    let top = n_grid.iter().copied().max().unwrap_or(0);
    if n_grid.is_empty() || 2 * top > confirm || n_grid.iter().any(|&n| n < 0) {
        return Err(Error::InvalidParameter(format!(
            "n_grid must be nonempty, nonnegative, with max ≤ C/2 = {}",
            confirm / 2
        )));
    }
    require_transient_right(model, seed)?;

    let sums = parallel_map(
        seed,
        replicas,
        threads,
        TailSums::default(),
        |r| {
            let env = LazyEnvironment::new(model, substream(r.seed, "env"))?;
            let out = run_excursion(&env, 0, &mut walk_rng(substream(r.seed, "walk")), confirm, cap)?;
            Ok(out.max_height())
        },
        |mut acc, m| {
            match m {
                Some(m) => *acc.heights.entry(m).or_default() += 1,
                None => acc.escaped += 1,
            }
            acc
        },
    )?;

    let returned = replicas - sums.escaped;
    let mut grid = n_grid.to_vec();
    grid.sort_unstable();
    grid.dedup();
    let points: Vec<TailPoint> = grid
        .iter()
        .map(|&n| {
            let exceed: u64 = sums.heights.range(n + 1..).map(|(_, c)| c).sum();
            let (ci_lo, ci_hi) = wilson_interval(exceed, replicas, 1.96);
            TailPoint {
                n,
                exceed,
                survival: exceed as f64 / replicas as f64,
                ci_lo,
                ci_hi,
            }
        })
        .collect();

    let retained: Vec<&TailPoint> = points.iter().filter(|p| p.exceed >= TAIL_MIN_EXCEEDANCES).collect();
    let xs: Vec<f64> = retained.iter().map(|p| p.n as f64).collect();
    let ys: Vec<f64> = retained.iter().map(|p| p.survival.ln()).collect();
    let ws: Vec<f64> = retained.iter().map(|p| p.exceed as f64 / (1.0 - p.survival)).collect();
    let fit = if returned == 0 { None } else { weighted_line_fit(&xs, &ys, &ws) };
    let warning = if returned == 0 {
        Some("every replica escaped: degenerate tail, no fit".to_string())
    } else if fit.is_none() {
        Some(format!("fewer than two grid points with {TAIL_MIN_EXCEEDANCES} exceedances"))
    } else {
        None
    };

    Ok(TailCurve {
        replicas,
        confirm,
        points,
        p_d_finite: crate::stats::proportion(returned, replicas),
        returned_flat: sums.heights.get(&0).copied().unwrap_or(0),
        fitted_rate: fit.map(|f| -f.slope),
        fit,
        warning,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::ProbTriple;
    use crate::walk::DEFAULT_CONFIRM;

    fn pm(a: f64, b: f64, c: f64) -> EnvModel {
        EnvModel::point_mass(ProbTriple::new(a, b, c).unwrap())
    }

    #[test]
    fn bitset_counts() {
        let mut v = VisitedSites::new(200);
        for s in [0, 3, 63, 64, 65, 199, 250, -4] {
            v.mark(s);
        }
        assert_eq!(v.count_upto(-1), 0);
        assert_eq!(v.count_upto(0), 1);
        assert_eq!(v.count_upto(63), 3);
        assert_eq!(v.count_upto(64), 4);
        assert_eq!(v.count_upto(1000), 6);
        assert!(v.contains(65) && !v.contains(66) && !v.contains(250));
    }

    #[test]
    fn deterministic_double_steps_visit_even_sites() {
        let run = range_count(&pm(0.0, 0.0, 1.0), 1, 1000, DEFAULT_CONFIRM, 1 << 20).unwrap();
        assert_eq!(run.n(1000), 501);
        assert!((0..=1000).all(|s| run.visited.contains(s) == (s % 2 == 0)));
        let t = run.theta_direct(1);
        assert!((t.value - 0.5).abs() <= 2.0 / 1000.0);
        let (unvisited, nus) = run.skipped_census();
        assert_eq!(unvisited, nus);
    }

    #[test]
    fn unit_steps_visit_everything() {
        let run = range_count(&pm(0.0, 1.0, 0.0), 1, 1000, DEFAULT_CONFIRM, 1 << 20).unwrap();
        assert_eq!(run.theta_direct(1), Estimate::new(1.0, 0.0));
    }

    #[test]
    fn curve_is_monotone_and_bounded() {
        let run = range_count(&pm(0.2, 0.4, 0.4), 5, 5000, DEFAULT_CONFIRM, 1 << 24).unwrap();
        let curve = run.curve();
        assert_eq!(curve.last().unwrap().0, 5000);
        for w in curve.windows(2) {
            assert!(w[0].1 <= w[1].1);
        }
        assert!(curve.iter().all(|&(x, n)| n <= (x + 1) as u64));
        let t = run.theta_direct(5);
        assert_eq!(
            (t.value * 5001.0).round() as u64,
            5001 - run.unvisited_upto(5000)
        );
        let (unvisited, nus) = run.skipped_census();
        assert_eq!(unvisited, nus);
    }

    #[test]
    fn skipped_sites_are_exactly_the_nu_predecessors() {
        let run = range_count(&pm(0.2, 0.4, 0.4), 9, 3000, DEFAULT_CONFIRM, 1 << 24).unwrap();
        let scanned = nu_blocks(&run.records);
        for b in &scanned.blocks {
            for s in b.start_pos..b.end_pos {
                assert_eq!(run.visited.contains(s), s != b.skipped_site, "site {s}");
            }
        }
    }

    #[test]
    fn theta_renewal_formula() {
        let mk = |mean_x| BlockStats {
            n_blocks: 100,
            mean_x,
            se_x: 0.1,
            mean_t: 1.0,
            overshoot1_frac: 0.0,
            lag1_autocorrelation: 0.0,
        };
        assert_eq!(theta_renewal(&mk(2.0)).unwrap().value, 0.5);
        assert_eq!(theta_renewal(&mk(4.0)).unwrap().value, 0.75);
        assert!(matches!(theta_renewal(&mk(1.5)), Err(Error::InvariantViolation(_))));
        let few = BlockStats { n_blocks: 10, ..mk(3.0) };
        assert!(matches!(theta_renewal(&few), Err(Error::InsufficientData(_))));
    }

    #[test]
    fn range_rejects_left_transient() {
        let err = range_count(&pm(0.8, 0.1, 0.1), 1, 1000, 200, 1000).unwrap_err();
        assert!(matches!(err, Error::Regime { .. }));
    }

    #[test]
    fn range_rejects_small_window() {
        assert!(range_count(&pm(0.2, 0.4, 0.4), 1, 10, 200, 1000).is_err());
    }

    #[test]
    fn tail_degenerate_model_warns() {
        let c = tail_estimate(&pm(0.0, 0.0, 1.0), &[0, 1, 2], 10_000, 20, 3, 0, 1000).unwrap();
        assert_eq!(c.p_d_finite.value, 0.0);
        assert!(c.fit.is_none() && c.warning.is_some());
    }

    #[test]
    fn tail_grid_limited_by_confirmation() {
        assert!(tail_estimate(&pm(0.2, 0.4, 0.4), &[0, 150], 10_000, 200, 3, 0, 1000).is_err());
        assert!(tail_estimate(&pm(0.2, 0.4, 0.4), &[0, 5], 100, 200, 3, 0, 1000).is_err());
    }

    #[test]
    fn tail_survival_is_dominated() {
        let grid: Vec<i64> = (0..=20).collect();
        let c = tail_estimate(&pm(0.2, 0.4, 0.4), &grid, 20_000, 200, 11, 0, 1 << 20).unwrap();
        for w in c.points.windows(2) {
            assert!(w[1].survival <= w[0].survival);
        }
        assert!(c.points.iter().all(|p| p.survival <= c.p_d_finite.value));
        let flat = c.returned_flat as f64 / c.replicas as f64;
        let s0 = c.points[0].survival;
        assert!((c.p_d_finite.value - flat - s0).abs() < 1e-12);
    }
}
