//! Regeneration epochs of a right-transient walk.
//!
//! A time `t ≥ 1` is a regeneration epoch when `X_t` exceeds every earlier
//! position and the walk never goes below `X_t` afterwards. Its overshoot is
//! `X_t` minus the running maximum before `t`, which is 1 or 2. Epochs with
//! overshoot 2 (ν-epochs) leave the site `X_t − 1` unvisited forever; the
//! path between consecutive ν-epochs forms i.i.d. blocks.
//!
//! "Never below afterwards" cannot be observed on a finite run, so an epoch
//! is confirmed once the walk climbs `W` above it without dipping below it.

use std::collections::{BTreeMap, VecDeque};
use std::ops::ControlFlow;

use serde::Serialize;

use crate::env::{EnvModel, LazyEnvironment};
use crate::error::{Error, Result};
use crate::matrices::{classify, Regime};
use crate::parallel::{parallel_map, substream, Replica};
use crate::stats::{lag1_autocorrelation, proportion, weighted_line_fit, Estimate, LineFit, Moments};
use crate::walk::{first_passage, run_excursion_with_overshoot, walk_rng, Observer, Verdict, WalkState};

/// A confirmed regeneration epoch.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct RenewalRecord {
    pub time: u64,
    pub position: i64,
    /// `position` minus the maximum over all earlier times.
    pub overshoot: u8,
    /// Number of strict-maximum attempts since the previous epoch, this one
    /// included (the index `K` of the epoch in the attempt sequence of the
    /// path restarted at the previous epoch).
    pub attempts: u32,
    pub confirmed: bool,
}

impl RenewalRecord {
    pub fn is_nu(&self) -> bool {
        self.overshoot == 2
    }
}

#[derive(Debug, Clone, Copy)]
struct Candidate {
    time: u64,
    position: i64,
    overshoot: u8,
    attempts: u32,
    /// Candidates directly above this one that were later dipped.
    dips_above: u32,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum StopRule {
    Never,
    /// Stop once this many epochs are confirmed.
    Epochs(usize),
    /// Stop once this many ν-epochs are confirmed.
    NuEpochs(usize),
}

/// Online epoch detector; an [`Observer`] over the walk stream.
///
/// Pending candidates sit in a deque ordered by time and position. A dip
/// below some level invalidates exactly the newest candidates above it, and
/// confirmations happen oldest first, so both ends are O(1) per event. The
/// deque only holds candidates within `W` of the running maximum.
#[derive(Debug, Clone)]
pub struct RenewalScanner {
    window: i64,
    started: bool,
    max: i64,
    pending: VecDeque<Candidate>,
    base_dips: u32,
    records: Vec<RenewalRecord>,
    nu_count: usize,
    stop: StopRule,
}

impl RenewalScanner {
    pub fn new(window: i64) -> Result<Self> {
        if window < 1 {
            return Err(Error::InvalidParameter("confirmation window must be ≥ 1".into()));
        }
        Ok(Self {
            window,
            started: false,
            max: 0,
            pending: VecDeque::new(),
            base_dips: 0,
            records: Vec::new(),
            nu_count: 0,
            stop: StopRule::Never,
        })
    }

    pub fn with_stop(mut self, stop: StopRule) -> Self {
        self.stop = stop;
        self
    }

    pub fn window(&self) -> i64 {
        self.window
    }

    pub fn records(&self) -> &[RenewalRecord] {
        &self.records
    }

    pub fn into_records(self) -> Vec<RenewalRecord> {
        self.records
    }

    pub fn nu_count(&self) -> usize {
        self.nu_count
    }

    /// Candidates still awaiting confirmation, oldest first.
    pub fn pending(&self) -> impl Iterator<Item = RenewalRecord> + '_ {
        self.pending.iter().map(|c| RenewalRecord {
            time: c.time,
            position: c.position,
            overshoot: c.overshoot,
            attempts: c.attempts,
            confirmed: false,
        })
    }

    fn satisfied(&self) -> bool {
        match self.stop {
            StopRule::Never => false,
            StopRule::Epochs(n) => self.records.len() >= n,
            StopRule::NuEpochs(n) => self.nu_count >= n,
        }
    }

    pub fn push(&mut self, time: u64, position: i64) -> ControlFlow<()> {
        if !self.started {
            self.started = true;
            self.max = position;
            return ControlFlow::Continue(());
        }

        let mut lowest_dipped = None;
        while self.pending.back().is_some_and(|c| c.position > position) {
            lowest_dipped = self.pending.pop_back();
        }
        if lowest_dipped.is_some() {
            match self.pending.back_mut() {
                Some(below) => below.dips_above += 1,
                None => self.base_dips += 1,
            }
        }

        if position > self.max {
            let prior = self.pending.back().map_or(self.base_dips, |c| c.dips_above);
            self.pending.push_back(Candidate {
                time,
                position,
                overshoot: (position - self.max) as u8,
                attempts: prior + 1,
                dips_above: 0,
            });
            self.max = position;
        }

        while let Some(front) = self.pending.front() {
            if position < front.position + self.window {
                break;
            }
            let c = self.pending.pop_front().expect("front exists");
            self.base_dips = c.dips_above;
            if c.overshoot == 2 {
                self.nu_count += 1;
            }
            self.records.push(RenewalRecord {
                time: c.time,
                position: c.position,
                overshoot: c.overshoot,
                attempts: c.attempts,
                confirmed: true,
            });
            if self.satisfied() {
                return ControlFlow::Break(());
            }
        }
        ControlFlow::Continue(())
    }
}

impl Observer for RenewalScanner {
    fn observe(&mut self, time: u64, position: i64) -> ControlFlow<()> {
        self.push(time, position)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScanOutput {
    pub records: Vec<RenewalRecord>,
    /// No epoch could be confirmed within the stream.
    pub starved: bool,
}

/// Confirmed epochs of a finite path (positions indexed by time from 0).
pub fn renewal_scan<I: IntoIterator<Item = i64>>(path: I, confirm: i64) -> Result<ScanOutput> {
    let mut scanner = RenewalScanner::new(confirm)?;
    for (t, x) in path.into_iter().enumerate() {
        let _ = scanner.push(t as u64, x);
    }
    let records = scanner.into_records();
    Ok(ScanOutput {
        starved: records.is_empty(),
        records,
    })
}

/// The path between consecutive ν-epochs.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
pub struct NuBlock {
    pub start_pos: i64,
    pub end_pos: i64,
    pub x_increment: i64,
    pub t_increment: u64,
    /// Never visited by the walk.
    pub skipped_site: i64,
    /// Regeneration epochs in `(start, end]`; the last one is the closing ν.
    pub epochs: u32,
}

#[derive(Debug, Clone, PartialEq)]
pub struct BlockScan {
    pub blocks: Vec<NuBlock>,
    /// The first ν-epoch, which opens the first block; the path before it
    /// has a different law and is not a block.
    pub first_nu: Option<RenewalRecord>,
    pub warning: Option<String>,
}

/// Pairs consecutive ν-epochs of time-ordered records into blocks.
pub fn nu_blocks(records: &[RenewalRecord]) -> BlockScan {
    let mut blocks = Vec::new();
    let mut open: Option<RenewalRecord> = None;
    let mut first_nu = None;
    let mut epochs = 0u32;
    for r in records {
        epochs += 1;
        if !r.is_nu() {
            continue;
        }
        match open {
            None => first_nu = Some(*r),
            Some(prev) => blocks.push(NuBlock {
                start_pos: prev.position,
                end_pos: r.position,
                x_increment: r.position - prev.position,
                t_increment: r.time - prev.time,
                skipped_site: r.position - 1,
                epochs,
            }),
        }
        open = Some(*r);
        epochs = 0;
    }
    let warning = (blocks.is_empty()).then(|| {
        let nus = usize::from(first_nu.is_some());
        format!("{nus} overshoot-2 epoch(s): no complete block")
    });
    BlockScan {
        blocks,
        first_nu,
        warning,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct BlockStats {
    pub n_blocks: u64,
    /// Mean spatial length of a block.
    pub mean_x: f64,
    pub se_x: f64,
    pub mean_t: f64,
    /// Fraction of epochs inside blocks with overshoot 1.
    pub overshoot1_frac: f64,
    pub lag1_autocorrelation: f64,
}

pub fn block_stats(blocks: &[NuBlock]) -> Result<BlockStats> {
    if blocks.is_empty() {
        return Err(Error::InsufficientData("no complete ν-blocks".into()));
    }
    let xs: Vec<f64> = blocks.iter().map(|b| b.x_increment as f64).collect();
    let mx: Moments = xs.iter().copied().collect();
    let mt: Moments = blocks.iter().map(|b| b.t_increment as f64).collect();
    let epochs: u64 = blocks.iter().map(|b| u64::from(b.epochs)).sum();
    let nus = blocks.len() as u64;
    Ok(BlockStats {
        n_blocks: nus,
        mean_x: mx.mean(),
        se_x: mx.se(),
        mean_t: mt.mean(),
        overshoot1_frac: (epochs - nus) as f64 / epochs as f64,
        lag1_autocorrelation: lag1_autocorrelation(&xs),
    })
}

/// Regime of a model, treating models without left steps as trivially
/// right-transient (their transfer matrices are undefined).
pub fn regime_of(model: &EnvModel, seed: u64) -> Result<Regime> {
    if model.mean_triple().p_left == 0.0 {
        return Ok(Regime::TransientRight);
    }
    Ok(classify(model, substream(seed, "regime"), 100_000)?.regime)
}

pub fn require_transient_right(model: &EnvModel, seed: u64) -> Result<()> {
    match regime_of(model, seed)? {
        Regime::TransientRight => Ok(()),
        found => Err(Error::Regime {
            found,
            required: Regime::TransientRight,
        }),
    }
}

/// Sums of `x_i` and `x_i x_j` over samples of an integer vector; exact, so
/// merge order never matters.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct CrossMoments<const K: usize> {
    pub n: u64,
    pub sum: [i64; K],
    pub sum_prod: [[i64; K]; K],
}

impl<const K: usize> Default for CrossMoments<K> {
    fn default() -> Self {
        Self {
            n: 0,
            sum: [0; K],
            sum_prod: [[0; K]; K],
        }
    }
}

impl<const K: usize> CrossMoments<K> {
    pub fn push(&mut self, x: [i64; K]) {
        self.n += 1;
        for i in 0..K {
            self.sum[i] += x[i];
            for j in 0..K {
                self.sum_prod[i][j] += x[i] * x[j];
            }
        }
    }

    pub fn merge(mut self, o: &Self) -> Self {
        self.n += o.n;
        for i in 0..K {
            self.sum[i] += o.sum[i];
            for j in 0..K {
                self.sum_prod[i][j] += o.sum_prod[i][j];
            }
        }
        self
    }

    pub fn mean(&self, i: usize) -> f64 {
        self.sum[i] as f64 / self.n as f64
    }

    /// Sample covariance of components `i` and `j`.
    pub fn cov(&self, i: usize, j: usize) -> f64 {
        if self.n < 2 {
            return 0.0;
        }
        let n = self.n as f64;
        (self.sum_prod[i][j] as f64 - self.sum[i] as f64 * self.sum[j] as f64 / n) / (n - 1.0)
    }

    /// Delta-method SE of `f(means)` given its gradient at the means.
    pub fn delta_se(&self, grad: [f64; K]) -> f64 {
        let mut v = 0.0;
        for i in 0..K {
            for j in 0..K {
                v += grad[i] * grad[j] * self.cov(i, j);
            }
        }
        (v.max(0.0) / self.n as f64).sqrt()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct IdentityParams {
    pub replicas: u64,
    pub seed: u64,
    /// Confirmation window for epochs and escape level for excursions.
    pub confirm: i64,
    pub cap: u64,
    pub threads: usize,
    pub z: f64,
    /// Repeat the confirmation-sensitive estimates at twice the window.
    pub sensitivity: bool,
}

impl IdentityParams {
    pub fn new(replicas: u64, seed: u64) -> Self {
        Self {
            replicas,
            seed,
            confirm: crate::walk::DEFAULT_CONFIRM,
            cap: 10_000_000,
            threads: 0,
            z: 3.0,
            sensitivity: true,
        }
    }
}

pub const IDENTITY_MIN_REPLICAS: u64 = 10_000;

const TAIL_MIN_EXCEEDANCES: u64 = 25;

// components of the unconditional-walk sample vector
const X_TAU1: usize = 0;
const Y0_IS_1: usize = 1;
const X_TAU1_ESCAPED: usize = 2;
const Y0_IS_2_ESCAPED: usize = 3;

// components of the excursion sample vector
const EXC_MXI: usize = 0;
const EXC_ESCAPED: usize = 1;

#[derive(Debug, Clone, Default)]
struct IdentitySums {
    /// `(X_{τ₁}, 1{Y₀=1}, X_{τ₁}·1{D=∞}, 1{Y₀=2, D=∞})` per replica.
    tau: CrossMoments<4>,
    /// `((M+ξ)·1{D<∞}, 1{D=∞})` from fresh excursions.
    excursion: CrossMoments<2>,
    x_s1: Moments,
    x_nu: Moments,
    /// Histogram of the attempt index `K` of τ₁.
    attempts: BTreeMap<u32, u64>,
    /// Histogram of `X_{τ₁}`.
    x_tau1_hist: BTreeMap<i64, u64>,
    starved: u64,
}

impl IdentitySums {
    fn merge(mut self, s: ReplicaSample) -> Self {
        if let Some(e) = s.excursion {
            self.excursion.push(e);
        }
        if let Some(x) = s.x_s1 {
            self.x_s1.push(x as f64);
        }
        match (s.tau, s.x_nu) {
            (Some((v, k)), Some(x_nu)) => {
                self.tau.push(v);
                *self.attempts.entry(k).or_default() += 1;
                *self.x_tau1_hist.entry(v[X_TAU1]).or_default() += 1;
                self.x_nu.push(x_nu as f64);
            }
            _ => self.starved += 1,
        }
        self
    }
}

#[derive(Debug, Clone, Copy)]
struct ReplicaSample {
    tau: Option<([i64; 4], u32)>,
    x_nu: Option<i64>,
    excursion: Option<[i64; 2]>,
    x_s1: Option<i64>,
}

/// τ₁ sample vector with its attempt index, and `X_{τ_ν}`.
type TauSample = (([i64; 4], u32), i64);

/// Runs a walk from 0 until the first confirmed ν-epoch; returns the τ₁
/// sample vector with its attempt index and `X_{τ_ν}`, or `None` on
/// truncation.
fn tau_sample(
    model: &EnvModel,
    env_seed: u64,
    walk_seed: u64,
    confirm: i64,
    cap: u64,
) -> Result<Option<TauSample>> {
    let env = LazyEnvironment::new(model, env_seed)?;
    let mut rng = walk_rng(walk_seed);
    let mut scanner = RenewalScanner::new(confirm)?.with_stop(StopRule::NuEpochs(1));
    let mut state = WalkState::at(0);
    let mut min_before_tau1 = 0i64;
    let _ = scanner.push(0, 0);
    loop {
        if state.time >= cap {
            return Ok(None);
        }
        state.advance(&env, &mut rng)?;
        if scanner.records().is_empty() {
            min_before_tau1 = min_before_tau1.min(state.position);
        }
        if scanner.push(state.time, state.position).is_break() {
            break;
        }
    }
    let records = scanner.records();
    let tau1 = records[0];
    let nu = records.iter().find(|r| r.is_nu()).expect("stopped at a ν-epoch");
    let escaped = i64::from(min_before_tau1 >= 0);
    let x = tau1.position;
    let v = [
        x,
        i64::from(tau1.overshoot == 1),
        x * escaped,
        i64::from(tau1.overshoot == 2) * escaped,
    ];
    Ok(Some(((v, tau1.attempts), nu.position)))
}

fn replica_sample(model: &EnvModel, r: Replica, confirm: i64, cap: u64) -> Result<ReplicaSample> {
    let sub = |tag| substream(r.seed, tag);
    // the ν-lhs and the τ-based rhs come from independent walks
    let tau = tau_sample(model, sub("env-tau"), sub("walk-tau"), confirm, cap)?;
    let nu = tau_sample(model, sub("env-nu"), sub("walk-nu"), confirm, cap)?;

    let env = LazyEnvironment::new(model, sub("env-exc"))?;
    let out = run_excursion_with_overshoot(&env, 0, &mut walk_rng(sub("walk-exc")), confirm, cap);
    let excursion = match out {
        Ok(o) => Some(match o.verdict {
            Verdict::Returned { m, .. } => [m + i64::from(o.xi.expect("measured")), 0],
            Verdict::Escaped { .. } => [0, 1],
        }),
        Err(Error::Truncated { .. }) => None,
        Err(e) => return Err(e),
    };

    let env = LazyEnvironment::new(model, sub("env-s1"))?;
    let x_s1 = match first_passage(&env, 0, 0, &mut walk_rng(sub("walk-s1")), cap) {
        Ok(fp) => Some(fp.landing),
        Err(Error::Truncated { .. }) => None,
        Err(e) => return Err(e),
    };

    Ok(ReplicaSample {
        tau: tau.map(|(v, _)| v),
        x_nu: nu.map(|(_, x)| x),
        excursion,
        x_s1,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct IdentityCheck {
    pub lhs: Estimate,
    pub rhs: Estimate,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct PowerCheck {
    pub k: u32,
    pub estimate: Estimate,
    /// `P(D<∞)^(k−1)` for `S_k`, `P(D<∞)^k` for `R_k`.
    pub prediction: Estimate,
    pub pass: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TailSlope {
    pub fit: Option<LineFit>,
    pub x_min: i64,
    pub pass: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Components {
    pub e_x_s1: Estimate,
    pub e_m_plus_xi_returned: Estimate,
    pub p_d_infinite: Estimate,
    pub p_d_finite: Estimate,
    pub e_x_tau1: Estimate,
    pub p_overshoot1: Estimate,
    pub e_x_tau1_given_escape: Estimate,
    pub p_overshoot2_given_escape: Estimate,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct IdentityReport {
    pub replicas: u64,
    pub confirm: i64,
    pub starved: u64,
    pub components: Components,
    /// `E X_{τ₁} = E X_{S₁} + E(M+ξ; D<∞) / P(D=∞)`.
    pub tau1_mean: IdentityCheck,
    /// `E X_{τ_ν} = E X_{τ₁} + P(Y₀=1) E(X_{τ₁}|D=∞) / P(Y₀=2|D=∞)`.
    pub nu_mean: IdentityCheck,
    pub s_k: Vec<PowerCheck>,
    /// Bound checks: pass iff estimate ≤ prediction + z·SE.
    pub r_k: Vec<PowerCheck>,
    pub x_tau1_tail: TailSlope,
    /// Same study at twice the confirmation window.
    pub sensitivity: Option<Box<IdentityReport>>,
}

impl IdentityReport {
    pub fn all_pass(&self) -> bool {
        self.tau1_mean.pass
            && self.nu_mean.pass
            && self.s_k.iter().all(|c| c.pass)
            && self.r_k.iter().all(|c| c.pass)
            && self.x_tau1_tail.pass
    }
}

/// Monte Carlo checks of the renewal identities for a right-transient model.
pub fn identity_report(model: &EnvModel, params: IdentityParams) -> Result<IdentityReport> {
    if params.replicas < IDENTITY_MIN_REPLICAS {
        return Err(Error::InvalidParameter(format!(
            "identity report needs at least {IDENTITY_MIN_REPLICAS} replicas"
        )));
    }
    require_transient_right(model, params.seed)?;
    let mut report = identity_pass(model, params)?;
    if params.sensitivity {
        let doubled = IdentityParams {
            confirm: params.confirm * 2,
            sensitivity: false,
            ..params
        };
        report.sensitivity = Some(Box::new(identity_pass(model, doubled)?));
    }
    Ok(report)
}

fn identity_pass(model: &EnvModel, params: IdentityParams) -> Result<IdentityReport> {
    let IdentityParams {
        replicas,
        seed,
        confirm,
        cap,
        threads,
        z,
        ..
    } = params;
    let sums = parallel_map(
        seed,
        replicas,
        threads,
        IdentitySums::default(),
        |r| replica_sample(model, r, confirm, cap),
        IdentitySums::merge,
    )?;
    if sums.tau.n < 2 || sums.excursion.n < 2 || sums.x_s1.n < 2 {
        return Err(Error::InsufficientData(format!(
            "{} of {replicas} replicas starved",
            sums.starved
        )));
    }

    let tau = &sums.tau;
    let exc = &sums.excursion;
    let mean_est = |m: &Moments| Estimate::new(m.mean(), m.se());
    let comp_se = |c: &CrossMoments<4>, i| (c.cov(i, i) / c.n as f64).sqrt();
    let comp_se2 = |c: &CrossMoments<2>, i| (c.cov(i, i) / c.n as f64).sqrt();

    let e_x_s1 = mean_est(&sums.x_s1);
    let b = exc.mean(EXC_MXI);
    let c = exc.mean(EXC_ESCAPED);
    let p_d_inf = Estimate::new(c, comp_se2(exc, EXC_ESCAPED));
    let p_d_fin = Estimate::new(1.0 - c, p_d_inf.se);

    // E X_{τ₁}: direct vs components
    let e_x_tau1 = Estimate::new(tau.mean(X_TAU1), comp_se(tau, X_TAU1));
    let correction = if c > 0.0 { b / c } else { f64::NAN };
    let correction_se = exc.delta_se([1.0 / c, -b / (c * c)]);
    let tau1_rhs = Estimate::new(e_x_s1.value + correction, e_x_s1.se.hypot(correction_se));
    let tau1_mean = IdentityCheck {
        lhs: e_x_tau1,
        rhs: tau1_rhs,
        pass: e_x_tau1.agrees_with(&tau1_rhs, z),
    };

    // E X_{τ_ν}: direct vs renewal formula
    let mx = tau.mean(X_TAU1);
    let pi1 = tau.mean(Y0_IS_1);
    let u = tau.mean(X_TAU1_ESCAPED);
    let v = tau.mean(Y0_IS_2_ESCAPED);
    let nu_rhs_value = mx + pi1 * u / v;
    let nu_rhs_se = tau.delta_se([1.0, u / v, pi1 / v, -pi1 * u / (v * v)]);
    let nu_rhs = Estimate::new(nu_rhs_value, nu_rhs_se);
    let nu_lhs = mean_est(&sums.x_nu);
    let nu_mean = IdentityCheck {
        lhs: nu_lhs,
        rhs: nu_rhs,
        pass: nu_lhs.agrees_with(&nu_rhs, z),
    };

    // P(S_k < ∞) = P(K ≥ k), P(R_k < ∞) = P(K ≥ k + 1)
    let n_tau = tau.n;
    let at_least = |k: u32| sums.attempts.range(k..).map(|(_, c)| c).sum::<u64>();
    let power = |k: u32| {
        let p = p_d_fin.value;
        let value = p.powi(k as i32);
        let se = if k == 0 {
            0.0
        } else {
            f64::from(k) * p.powi(k as i32 - 1) * p_d_fin.se
        };
        Estimate::new(value, se)
    };
    let s_k = (2..=4)
        .map(|k| {
            let estimate = proportion(at_least(k), n_tau);
            let prediction = power(k - 1);
            PowerCheck {
                k,
                estimate,
                prediction,
                pass: estimate.agrees_with(&prediction, z),
            }
        })
        .collect();
    let r_k = (1..=4)
        .map(|k| {
            let estimate = proportion(at_least(k + 1), n_tau);
            let prediction = power(k);
            PowerCheck {
                k,
                estimate,
                prediction,
                pass: estimate.value <= prediction.value + z * estimate.se.hypot(prediction.se),
            }
        })
        .collect();

    let x_tau1_tail = tail_slope(&sums.x_tau1_hist, n_tau);

    let components = Components {
        e_x_s1,
        e_m_plus_xi_returned: Estimate::new(b, comp_se2(exc, EXC_MXI)),
        p_d_infinite: p_d_inf,
        p_d_finite: p_d_fin,
        e_x_tau1,
        p_overshoot1: Estimate::new(pi1, comp_se(tau, Y0_IS_1)),
        e_x_tau1_given_escape: Estimate::new(u / c, f64::NAN),
        p_overshoot2_given_escape: Estimate::new(v / c, f64::NAN),
    };

    Ok(IdentityReport {
        replicas,
        confirm,
        starved: sums.starved,
        components,
        tau1_mean,
        nu_mean,
        s_k,
        r_k,
        x_tau1_tail,
        sensitivity: None,
    })
}

/// Line fit of `ln P(X > x)` over `x ≥ 1` where at least 25 samples exceed
/// `x`; passes when the slope is negative with `R² ≥ 0.9`.
pub fn tail_slope(hist: &BTreeMap<i64, u64>, n: u64) -> TailSlope {
    let x_min = 1;
    let mut xs = Vec::new();
    let mut ys = Vec::new();
    let mut ws = Vec::new();
    let max_x = hist.keys().next_back().copied().unwrap_or(0);
    for x in x_min..=max_x {
        let exceed: u64 = hist.range(x + 1..).map(|(_, c)| c).sum();
        if exceed < TAIL_MIN_EXCEEDANCES {
            break;
        }
        let p = exceed as f64 / n as f64;
        if p >= 1.0 {
            continue;
        }
        xs.push(x as f64);
        ys.push(p.ln());
        ws.push(exceed as f64 / (1.0 - p));
    }
    let fit = weighted_line_fit(&xs, &ys, &ws);
    let pass = fit.is_some_and(|f| f.points >= 3 && f.slope < 0.0 && f.r_squared >= 0.9);
    TailSlope { fit, x_min, pass }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scan(path: &[i64], w: i64) -> Vec<RenewalRecord> {
        renewal_scan(path.iter().copied(), w).unwrap().records
    }

    #[test]
    fn hand_traced_path() {
        let path = [0, 2, 1, 2, 4, 6, 5, 7, 8, 9];
        let recs = scan(&path, 5);
        assert_eq!(
            recs,
            vec![RenewalRecord {
                time: 4,
                position: 4,
                overshoot: 2,
                attempts: 2,
                confirmed: true
            }]
        );
    }

    #[test]
    fn hand_traced_path_pending_epoch() {
        let path = [0, 2, 1, 2, 4, 6, 5, 7, 8, 9];
        let mut s = RenewalScanner::new(5).unwrap();
        for (t, x) in path.iter().enumerate() {
            let _ = s.push(t as u64, *x);
        }
        let pending: Vec<_> = s.pending().collect();
        // time 7 is an epoch of the shifted path after two attempts (5, 7)
        assert_eq!(pending.len(), 3);
        assert_eq!((pending[0].time, pending[0].attempts), (7, 2));
        assert!(!pending[0].confirmed);
    }

    #[test]
    fn monotone_unit_path() {
        let path: Vec<i64> = (0..50).collect();
        let recs = scan(&path, 3);
        assert_eq!(recs.len(), 46);
        for (i, r) in recs.iter().enumerate() {
            assert_eq!(r.time, i as u64 + 1);
            assert_eq!(r.overshoot, 1);
            assert_eq!(r.attempts, 1);
        }
    }

    #[test]
    fn monotone_double_path() {
        let path: Vec<i64> = (0..50).map(|t| 2 * t).collect();
        let recs = scan(&path, 4);
        assert!(recs.iter().all(|r| r.overshoot == 2));
        let scanned = nu_blocks(&recs);
        assert_eq!(scanned.first_nu.unwrap().position, 2);
        for b in &scanned.blocks {
            assert_eq!(b.x_increment, 2);
            assert_eq!(b.skipped_site % 2, 1);
            assert_eq!(b.epochs, 1);
        }
    }

    #[test]
    fn single_nu_epoch_gives_no_block() {
        let mut path = vec![0, 2, 1, 2, 4, 6, 5, 7, 8, 9];
        path.extend(10..40);
        let recs = scan(&path, 5);
        assert_eq!(recs.iter().filter(|r| r.is_nu()).count(), 1);
        assert_eq!(recs.iter().find(|r| r.is_nu()).unwrap().time, 4);
        let scanned = nu_blocks(&recs);
        assert!(scanned.blocks.is_empty());
        assert!(scanned.warning.is_some());
    }

    #[test]
    fn empty_records() {
        let scanned = nu_blocks(&[]);
        assert!(scanned.blocks.is_empty());
        assert!(scanned.warning.is_some());
        assert!(matches!(block_stats(&[]), Err(Error::InsufficientData(_))));
        assert!(renewal_scan([0, -1, -2], 3).unwrap().starved);
    }

    #[test]
    fn block_statistics() {
        let mk = |x| NuBlock {
            start_pos: 0,
            end_pos: x,
            x_increment: x,
            t_increment: 1,
            skipped_site: x - 1,
            epochs: 1,
        };
        let s = block_stats(&[mk(2), mk(2), mk(2)]).unwrap();
        assert_eq!((s.mean_x, s.se_x), (2.0, 0.0));
        let s = block_stats(&[mk(2), mk(4)]).unwrap();
        assert_eq!(s.mean_x, 3.0);
    }

    #[test]
    fn stop_rule_halts_stream() {
        let mut s = RenewalScanner::new(2).unwrap().with_stop(StopRule::Epochs(1));
        let mut stopped_at = None;
        for t in 0..10 {
            if s.push(t, t as i64).is_break() {
                stopped_at = Some(t);
                break;
            }
        }
        assert_eq!(stopped_at, Some(3));
    }

    #[test]
    fn cross_moments_delta() {
        let mut c = CrossMoments::<2>::default();
        for x in [[1, 2], [3, 4], [5, 9]] {
            c.push(x);
        }
        assert_eq!(c.mean(0), 3.0);
        assert!((c.cov(0, 0) - 4.0).abs() < 1e-12);
        // gradient (1, 0) reduces to the SE of component 0
        assert!((c.delta_se([1.0, 0.0]) - (4.0f64 / 3.0).sqrt()).abs() < 1e-12);
    }
}
