//! Quenched probability that the walk started at 0 reaches `(−∞, −n)` before
//! `[1, ∞)`.
//!
//! Two independent routes:
//!
//! - [`hit_left_prob_formula`] evaluates
//!   `1 / (1 + Σ_{j=−n}^{0} e₁ A_j A_{j+1} ⋯ A_0 e₁ᵗ)`
//!   with the sum running over `j = −n, …, 0`. The lower index `−n` is the
//!   one that reproduces the absorption probabilities exactly; starting the
//!   sum at `−n+1` drops the deepest term and overestimates the probability.
//! - [`hit_left_prob_oracle`] solves the absorption equations of the chain
//!   restricted to `{−n, …, 0}` by state elimination.

use serde::Serialize;

use crate::env::{Environment, ProbTriple};
use crate::error::{Error, Result};
use crate::matrices::transfer_matrix_at;

/// Site laws for `−n, …, 0`, stored from the deepest site upward.
#[derive(Debug, Clone, PartialEq)]
pub struct HittingQuery {
    triples: Vec<ProbTriple>,
}

impl HittingQuery {
    /// `triples[i]` is the law at site `i − n`, with `n = triples.len() − 1`.
    pub fn new(triples: Vec<ProbTriple>) -> Result<Self> {
        if triples.is_empty() {
            return Err(Error::InvalidParameter("hitting query needs at least site 0".into()));
        }
        let n = triples.len() as i64 - 1;
        for (i, t) in triples.iter().enumerate() {
            t.validate(0.0)?;
            if t.p_left <= 0.0 {
                return Err(Error::DegenerateEnvironment { site: i as i64 - n });
            }
        }
        Ok(Self { triples })
    }

    /// Query of depth `n` over sites `−n..=0` of a realized environment.
    pub fn from_env(env: &Environment, n: u64) -> Result<Self> {
        let n = i64::try_from(n).map_err(|_| Error::InvalidParameter("depth too large".into()))?;
        Self::new(env.slice(-n, 0)?.to_vec())
    }

    /// Homogeneous query of depth `n`.
    pub fn homogeneous(t: ProbTriple, n: u64) -> Result<Self> {
        Self::new(vec![t; n as usize + 1])
    }

    pub fn depth(&self) -> u64 {
        self.triples.len() as u64 - 1
    }

    pub fn triples(&self) -> &[ProbTriple] {
        &self.triples
    }

    fn at_site(&self, site: i64) -> &ProbTriple {
        &self.triples[(site + self.depth() as i64) as usize]
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Method {
    Formula,
    Oracle,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct HittingResult {
    pub log_p: f64,
    pub p: f64,
    pub method: Method,
}

impl HittingResult {
    fn from_log(log_p: f64, method: Method) -> Self {
        let log_p = log_p.min(0.0);
        Self {
            log_p,
            p: log_p.exp(),
            method,
        }
    }
}

/// `ln(exp(a) + exp(b))`.
fn log_add_exp(a: f64, b: f64) -> f64 {
    if a == f64::NEG_INFINITY {
        return b;
    }
    if b == f64::NEG_INFINITY {
        return a;
    }
    let (hi, lo) = if a >= b { (a, b) } else { (b, a) };
    hi + (lo - hi).exp().ln_1p()
}

/// `ln(1 + exp(x))` without overflow.
fn log1p_exp(x: f64) -> f64 {
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

/// Left-exit probability from the matrix-product sum.
///
/// The vector `v_j = A_j A_{j+1} ⋯ A_0 e₁ᵗ` is built right to left and kept
/// as a unit-max-norm direction plus a log scale; the running sum of its
/// first components is carried in the log domain, so depths far beyond the
/// double-precision range are fine.
pub fn hit_left_prob_formula(q: &HittingQuery) -> Result<HittingResult> {
    let n = q.depth() as i64;
    let mut dir = [1.0_f64, 0.0];
    let mut log_scale = 0.0_f64;
    let mut log_sum = f64::NEG_INFINITY;
    for site in (-n..=0).rev() {
        let a = transfer_matrix_at(q.at_site(site), site)?;
        dir = a.apply(dir);
        let norm = dir[0].abs().max(dir[1].abs());
        if norm == 0.0 {
            // all remaining products vanish
            break;
        }
        if !norm.is_finite() {
            return Err(Error::Numerical(format!("vector overflow at site {site}")));
        }
        dir = [dir[0] / norm, dir[1] / norm];
        log_scale += norm.ln();
        if dir[0] > 0.0 {
            log_sum = log_add_exp(log_sum, log_scale + dir[0].ln());
        }
    }
    let log_p = if log_sum == f64::NEG_INFINITY {
        0.0
    } else {
        -log1p_exp(log_sum)
    };
    Ok(HittingResult::from_log(log_p, Method::Formula))
}

/// Left-exit probability from the absorption equations on `{−n, …, 0}`:
/// `h(i) = ω_i(−1) h(i−1) + ω_i(1) h(i+1) + ω_i(2) h(i+2)`, with `h = 1`
/// below `−n` and `h = 0` from 1 upward.
pub fn hit_left_prob_oracle(q: &HittingQuery) -> Result<HittingResult> {
    const LEFT: usize = 0;
    const RIGHT: usize = 1;
    let probs = exit_distribution(q.triples(), 2, |exit| match exit {
        Exit::Below => LEFT,
        Exit::Above(_) => RIGHT,
    })?;
    let p = probs[LEFT];
    Ok(HittingResult::from_log(p.ln(), Method::Oracle))
}

/// Where a jump leaving the state window lands.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Exit {
    /// One below the lowest state.
    Below,
    /// `k` above the highest state, `k ∈ {1, 2}`.
    Above(u8),
}

/// Off-diagonal transitions of a state; self-loops are never needed since
/// the leaving mass is summed directly.
#[derive(Debug, Clone)]
struct Row {
    up1: f64,
    up2: f64,
    down: f64,
    exits: Vec<f64>,
}

/// Exit-class distribution of the walk started at the highest state of a
/// window with the given site laws (lowest site first).
///
/// States are eliminated from the bottom up. Each elimination only adds
/// nonnegative quantities, and the denominator `1 − P(stay)` is taken as the
/// sum of the leaving probabilities rather than by subtraction, so small
/// probabilities keep full relative accuracy.
pub fn exit_distribution<F>(triples: &[ProbTriple], classes: usize, classify: F) -> Result<Vec<f64>>
where
    F: Fn(Exit) -> usize,
{
    let m = triples.len();
    if m == 0 {
        return Err(Error::InvalidParameter("empty state window".into()));
    }
    let mut rows: Vec<Row> = triples
        .iter()
        .enumerate()
        .map(|(i, t)| {
            let mut row = Row {
                up1: 0.0,
                up2: 0.0,
                down: 0.0,
                exits: vec![0.0; classes],
            };
            if i == 0 {
                row.exits[classify(Exit::Below)] += t.p_left;
            } else {
                row.down = t.p_left;
            }
            if i + 1 < m {
                row.up1 = t.p_one;
            } else {
                row.exits[classify(Exit::Above(1))] += t.p_one;
            }
            if i + 2 < m {
                row.up2 = t.p_two;
            } else {
                let k = (i + 2 - (m - 1)) as u8;
                row.exits[classify(Exit::Above(k))] += t.p_two;
            }
            row
        })
        .collect();

    for j in 0..m - 1 {
        let (lower, upper) = rows.split_at_mut(j + 1);
        let row = &lower[j];
        let next = &mut upper[0];
        let leave = row.up1 + row.up2 + row.exits.iter().sum::<f64>();
        if next.down == 0.0 {
            continue;
        }
        if leave.is_nan() || leave <= 0.0 {
            return Err(Error::Numerical(format!("state {j} cannot be left")));
        }
        // j → j+1 is a self-loop of j+1 after elimination: dropped
        let w = next.down / leave;
        next.up1 += w * row.up2;
        for (e, x) in next.exits.iter_mut().zip(&row.exits) {
            *e += w * x;
        }
        next.down = 0.0;
    }

    let top = &rows[m - 1];
    let leave: f64 = top.exits.iter().sum();
    if leave.is_nan() || leave <= 0.0 {
        return Err(Error::Numerical("top state cannot be left".into()));
    }
    Ok(top.exits.iter().map(|e| e / leave).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{realize_window, EnvModel};
    use crate::walk::step;
    use proptest::prelude::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn t(a: f64, b: f64, c: f64) -> ProbTriple {
        ProbTriple::new(a, b, c).unwrap()
    }

    /// Dense Gaussian elimination with partial pivoting on the absorption
    /// system; a third, deliberately naive route.
    fn dense_solve(q: &HittingQuery) -> f64 {
        let ts = q.triples();
        let m = ts.len();
        let mut a = vec![vec![0.0; m + 1]; m];
        for (i, tr) in ts.iter().enumerate() {
            a[i][i] = 1.0;
            if i == 0 {
                a[i][m] += tr.p_left;
            } else {
                a[i][i - 1] -= tr.p_left;
            }
            if i + 1 < m {
                a[i][i + 1] -= tr.p_one;
            }
            if i + 2 < m {
                a[i][i + 2] -= tr.p_two;
            }
        }
        for c in 0..m {
            let piv = (c..m).max_by(|&x, &y| a[x][c].abs().total_cmp(&a[y][c].abs())).unwrap();
            a.swap(c, piv);
            for r in 0..m {
                if r != c {
                    let f = a[r][c] / a[c][c];
                    for k in c..=m {
                        a[r][k] -= f * a[c][k];
                    }
                }
            }
        }
        a[m - 1][m] / a[m - 1][m - 1]
    }

    #[test]
    fn depth_zero_is_left_probability() {
        for tr in [t(0.2, 0.4, 0.4), t(0.05, 0.9, 0.05), t(0.7, 0.0, 0.3)] {
            let q = HittingQuery::homogeneous(tr, 0).unwrap();
            let f = hit_left_prob_formula(&q).unwrap();
            let o = hit_left_prob_oracle(&q).unwrap();
            assert!((f.p - tr.p_left).abs() < 1e-15);
            assert!((o.p - tr.p_left).abs() < 1e-15);
        }
    }

    #[test]
    fn homogeneous_depth_one() {
        let q = HittingQuery::homogeneous(t(0.2, 0.4, 0.4), 1).unwrap();
        let f = hit_left_prob_formula(&q).unwrap();
        let o = hit_left_prob_oracle(&q).unwrap();
        assert!((f.p - 1.0 / 23.0).abs() < 1e-15, "{}", f.p);
        assert!((o.p - 1.0 / 23.0).abs() < 1e-15, "{}", o.p);
        assert_eq!(f.method, Method::Formula);
        assert_eq!(o.method, Method::Oracle);
    }

    #[test]
    fn heterogeneous_depth_one_closed_form() {
        // h(0) = q0 q_{-1} / (1 − q0 p_{-1}) by two-equation elimination
        let deep = t(0.3, 0.5, 0.2);
        let top = t(0.25, 0.15, 0.6);
        let q = HittingQuery::new(vec![deep, top]).unwrap();
        let want = top.p_left * deep.p_left / (1.0 - top.p_left * deep.p_one);
        assert!((hit_left_prob_formula(&q).unwrap().p - want).abs() < 1e-15);
        assert!((hit_left_prob_oracle(&q).unwrap().p - want).abs() < 1e-15);
    }

    #[test]
    fn shorter_sum_overestimates() {
        // the sum starting at −n+1 is the depth n−1 value, which is larger
        let q1 = HittingQuery::homogeneous(t(0.2, 0.4, 0.4), 1).unwrap();
        let q0 = HittingQuery::homogeneous(t(0.2, 0.4, 0.4), 0).unwrap();
        assert!(hit_left_prob_formula(&q0).unwrap().p > hit_left_prob_oracle(&q1).unwrap().p);
    }

    #[test]
    fn oracle_matches_dense_solver() {
        let model = EnvModel::dirichlet_floor([1.0, 1.0, 1.0], 0.05).unwrap();
        for seed in 0..20 {
            let env = realize_window(&model, seed, -12, 0).unwrap();
            let q = HittingQuery::from_env(&env, 12).unwrap();
            let o = hit_left_prob_oracle(&q).unwrap().p;
            let d = dense_solve(&q);
            assert!(((o - d) / d).abs() < 1e-9, "{o} vs {d}");
        }
    }

    #[test]
    fn degenerate_site_rejected() {
        let r = HittingQuery::new(vec![t(0.0, 0.5, 0.5), t(0.2, 0.4, 0.4)]);
        assert_eq!(r.unwrap_err(), Error::DegenerateEnvironment { site: -1 });
    }

    #[test]
    fn deep_queries_stay_finite() {
        let q = HittingQuery::homogeneous(t(0.2, 0.4, 0.4), 5000).unwrap();
        let f = hit_left_prob_formula(&q).unwrap();
        assert!(f.log_p.is_finite());
        // log p ≈ −n γ₂ with γ₂ = ln(2 + √6)
        let gamma = (2.0 + 6f64.sqrt()).ln();
        assert!((f.log_p / 5000.0 + gamma).abs() < 1e-3);
        assert_eq!(f.p, 0.0);
    }

    #[test]
    fn monte_carlo_agrees_at_depth_one() {
        let tr = t(0.2, 0.4, 0.4);
        let trials = 1_000_000u64;
        let mut rng = ChaCha8Rng::seed_from_u64(2718);
        let mut hits = 0u64;
        for _ in 0..trials {
            let mut x = 0i64;
            loop {
                x += step(&tr, &mut rng);
                if x < -1 {
                    hits += 1;
                    break;
                }
                if x >= 1 {
                    break;
                }
            }
        }
        let p = 1.0 / 23.0;
        let freq = hits as f64 / trials as f64;
        let se = (p * (1.0 - p) / trials as f64).sqrt();
        assert!((freq - p).abs() < 3.0 * se, "freq {freq}, se {se}");
    }

    proptest! {
        #[test]
        fn formula_matches_oracle(seed in any::<u64>(), n in 0u64..=30) {
            let model = EnvModel::dirichlet_floor([1.0, 1.0, 1.0], 0.05).unwrap();
            let env = realize_window(&model, seed, -(n as i64), 0).unwrap();
            let q = HittingQuery::from_env(&env, n).unwrap();
            let f = hit_left_prob_formula(&q).unwrap();
            let o = hit_left_prob_oracle(&q).unwrap();
            prop_assert!(f.p > 0.0 && f.p <= 1.0 && f.log_p <= 0.0);
            let rel = (f.p - o.p).abs() / o.p.max(1e-300);
            prop_assert!(rel < 1e-9, "n={} formula {} oracle {}", n, f.p, o.p);
        }

        #[test]
        fn deeper_windows_do_not_increase_probability(seed in any::<u64>(), n in 0u64..40) {
            let model = EnvModel::dirichlet_floor([0.7, 1.3, 1.0], 0.05).unwrap();
            let env = realize_window(&model, seed, -(n as i64) - 1, 0).unwrap();
            let shallow = HittingQuery::from_env(&env, n).unwrap();
            let deep = HittingQuery::from_env(&env, n + 1).unwrap();
            for f in [hit_left_prob_formula, hit_left_prob_oracle] {
                let a = f(&shallow).unwrap().p;
                let b = f(&deep).unwrap().p;
                prop_assert!(b <= a * (1.0 + 1e-12));
                prop_assert!((0.0..=1.0).contains(&b));
            }
        }
    }
}
