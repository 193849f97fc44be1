//! The quenched walk with jumps in `{−1, +1, +2}`.
//!
//! Steps are drawn by inverse CDF with the fixed component order
//! `(−1, +1, +2)` from one uniform per step, so a seed replays the same path
//! in any implementation that shares the generator.

use std::ops::ControlFlow;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::env::{ProbTriple, SiteLaws};
use crate::error::{Error, Result};

/// Generator owned by one walk.
pub type WalkRng = ChaCha8Rng;

pub fn walk_rng(seed: u64) -> WalkRng {
    ChaCha8Rng::seed_from_u64(seed)
}

pub const DEFAULT_CONFIRM: i64 = 200;

/// One jump drawn from the site law.
#[inline]
pub fn step<R: Rng + ?Sized>(t: &ProbTriple, rng: &mut R) -> i64 {
    let u: f64 = rng.random();
    if u < t.p_left {
        -1
    } else if u < t.p_left + t.p_one {
        1
    } else {
        2
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkState {
    pub position: i64,
    pub time: u64,
}

impl WalkState {
    pub fn at(position: i64) -> Self {
        Self { position, time: 0 }
    }

    /// Advances one step in `env`.
    #[inline]
    pub fn advance<E, R>(&mut self, env: &E, rng: &mut R) -> Result<i64>
    where
        E: SiteLaws + ?Sized,
        R: Rng + ?Sized,
    {
        let delta = step(&env.law(self.position)?, rng);
        debug_assert!(matches!(delta, -1 | 1 | 2));
        self.position += delta;
        self.time += 1;
        Ok(delta)
    }

    fn truncated(&self, cap: u64) -> Error {
        Error::Truncated {
            cap,
            time: self.time,
            position: self.position,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Verdict {
    /// Went below the start at time `d`; `m` is the maximum height above
    /// the start over times `0..=d`.
    Returned { d: u64, m: i64 },
    /// Reached `confirm_level` without going below the start; stands in
    /// for `D = ∞`.
    Escaped { confirm_level: i64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExcursionOutcome {
    pub verdict: Verdict,
    /// Overshoot of the first passage above the excursion maximum, when
    /// measured (see [`run_excursion_with_overshoot`]).
    pub xi: Option<u8>,
    pub steps_used: u64,
}

impl ExcursionOutcome {
    pub fn returned(&self) -> bool {
        matches!(self.verdict, Verdict::Returned { .. })
    }

    /// Height of the excursion maximum when the walk returned.
    pub fn max_height(&self) -> Option<i64> {
        match self.verdict {
            Verdict::Returned { m, .. } => Some(m),
            Verdict::Escaped { .. } => None,
        }
    }
}

/// Runs from `start` until the walk goes below `start` or reaches
/// `start + confirm`. `state` is left at the stopping point so callers can
/// keep walking.
pub fn excursion_from<E: SiteLaws + ?Sized>(
    env: &E,
    state: &mut WalkState,
    rng: &mut WalkRng,
    confirm: i64,
    cap: u64,
) -> Result<ExcursionOutcome> {
    if confirm < 1 {
        return Err(Error::InvalidParameter("confirmation level must be ≥ 1".into()));
    }
    let start = state.position;
    let t0 = state.time;
    let target = start + confirm;
    let mut max = start;
    loop {
        if state.time - t0 >= cap {
            return Err(state.truncated(cap));
        }
        state.advance(env, rng)?;
        if state.position < start {
            return Ok(ExcursionOutcome {
                verdict: Verdict::Returned {
                    d: state.time - t0,
                    m: max - start,
                },
                xi: None,
                steps_used: state.time - t0,
            });
        }
        if state.position >= target {
            return Ok(ExcursionOutcome {
                verdict: Verdict::Escaped {
                    confirm_level: target,
                },
                xi: None,
                steps_used: state.time - t0,
            });
        }
        max = max.max(state.position);
    }
}

/// Excursion from `start`: `Returned` with `D` and `M`, or `Escaped` once
/// `start + confirm` is reached.
pub fn run_excursion<E: SiteLaws + ?Sized>(
    env: &E,
    start: i64,
    rng: &mut WalkRng,
    confirm: i64,
    cap: u64,
) -> Result<ExcursionOutcome> {
    excursion_from(env, &mut WalkState::at(start), rng, confirm, cap)
}

/// Like [`run_excursion`], and on return keeps walking to the first passage
/// above `start + M` to record the overshoot `ξ ∈ {1, 2}`.
pub fn run_excursion_with_overshoot<E: SiteLaws + ?Sized>(
    env: &E,
    start: i64,
    rng: &mut WalkRng,
    confirm: i64,
    cap: u64,
) -> Result<ExcursionOutcome> {
    let mut state = WalkState::at(start);
    let mut out = excursion_from(env, &mut state, rng, confirm, cap)?;
    if let Verdict::Returned { m, .. } = out.verdict {
        let budget = cap.saturating_sub(out.steps_used).max(1);
        let fp = passage_from(env, &mut state, start + m, rng, budget)?;
        out.xi = Some(fp.overshoot);
        out.steps_used = state.time;
    }
    Ok(out)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct FirstPassage {
    pub level: i64,
    /// Steps until the walk first exceeds `level`.
    pub time: u64,
    pub landing: i64,
    pub overshoot: u8,
}

fn passage_from<E: SiteLaws + ?Sized>(
    env: &E,
    state: &mut WalkState,
    level: i64,
    rng: &mut WalkRng,
    cap: u64,
) -> Result<FirstPassage> {
    if state.position > level {
        return Err(Error::InvalidParameter(format!(
            "start {} already above level {level}",
            state.position
        )));
    }
    let t0 = state.time;
    while state.position <= level {
        if state.time - t0 >= cap {
            return Err(state.truncated(cap));
        }
        state.advance(env, rng)?;
    }
    let overshoot = (state.position - level) as u8;
    debug_assert!(overshoot == 1 || overshoot == 2);
    Ok(FirstPassage {
        level,
        time: state.time - t0,
        landing: state.position,
        overshoot,
    })
}

/// First time the walk from `start` exceeds `level`.
pub fn first_passage<E: SiteLaws + ?Sized>(
    env: &E,
    level: i64,
    start: i64,
    rng: &mut WalkRng,
    cap: u64,
) -> Result<FirstPassage> {
    passage_from(env, &mut WalkState::at(start), level, rng, cap)
}

/// Receives the walk as a stream of `(time, position)` pairs.
pub trait Observer {
    /// Returning `Break` stops the walk.
    fn observe(&mut self, time: u64, position: i64) -> ControlFlow<()>;
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WalkSummary {
    pub steps: u64,
    pub final_position: i64,
    /// An observer asked to stop before the horizon was passed.
    pub stopped_early: bool,
}

/// Walks from `start` until the position exceeds `horizon_site`, an observer
/// stops it, or `cap` steps elapse (a truncation error).
///
/// Each observer sees the initial state and then every step. Observers are
/// borrowed, so their state stays available to the caller after an error.
pub fn run_walk<E: SiteLaws + ?Sized>(
    env: &E,
    start: i64,
    horizon_site: i64,
    rng: &mut WalkRng,
    observers: &mut [&mut dyn Observer],
    cap: u64,
) -> Result<WalkSummary> {
    if observers.is_empty() {
        return Err(Error::InvalidParameter("run_walk needs an observer".into()));
    }
    let mut state = WalkState::at(start);
    let notify = |obs: &mut [&mut dyn Observer], s: &WalkState| {
        let mut stop = false;
        for o in obs.iter_mut() {
            stop |= o.observe(s.time, s.position).is_break();
        }
        stop
    };
    let summary = |s: &WalkState, stopped_early| WalkSummary {
        steps: s.time,
        final_position: s.position,
        stopped_early,
    };
    if notify(observers, &state) {
        return Ok(summary(&state, true));
    }
    while state.position <= horizon_site {
        if state.time >= cap {
            return Err(state.truncated(cap));
        }
        state.advance(env, rng)?;
        if notify(observers, &state) {
            return Ok(summary(&state, true));
        }
    }
    Ok(summary(&state, false))
}

/// Records the full path; test and debugging helper.
#[derive(Debug, Default, Clone)]
pub struct PathRecorder {
    pub path: Vec<i64>,
}

impl Observer for PathRecorder {
    fn observe(&mut self, _time: u64, position: i64) -> ControlFlow<()> {
        self.path.push(position);
        ControlFlow::Continue(())
    }
}

/// Tracks the lowest position seen.
#[derive(Debug, Clone, Copy)]
pub struct MinTracker {
    pub min: i64,
}

impl Default for MinTracker {
    fn default() -> Self {
        Self { min: i64::MAX }
    }
}

impl Observer for MinTracker {
    fn observe(&mut self, _time: u64, position: i64) -> ControlFlow<()> {
        self.min = self.min.min(position);
        ControlFlow::Continue(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{realize_window, EnvModel, LazyEnvironment};
    use crate::hitting::{exit_distribution, Exit};

    fn t(a: f64, b: f64, c: f64) -> ProbTriple {
        ProbTriple::new(a, b, c).unwrap()
    }

    fn constant(tr: ProbTriple, lo: i64, hi: i64) -> crate::env::Environment {
        realize_window(&EnvModel::point_mass(tr), 0, lo, hi).unwrap()
    }

    #[test]
    fn point_mass_steps() {
        let mut rng = walk_rng(1);
        for _ in 0..1000 {
            assert_eq!(step(&t(1.0, 0.0, 0.0), &mut rng), -1);
            assert_eq!(step(&t(0.0, 0.0, 1.0), &mut rng), 2);
            assert_eq!(step(&t(0.0, 1.0, 0.0), &mut rng), 1);
        }
    }

    #[test]
    fn step_frequencies() {
        let tr = t(0.2, 0.4, 0.4);
        let mut rng = walk_rng(77);
        let n = 100_000u64;
        let mut counts = [0u64; 3];
        for _ in 0..n {
            match step(&tr, &mut rng) {
                -1 => counts[0] += 1,
                1 => counts[1] += 1,
                2 => counts[2] += 1,
                d => panic!("bad jump {d}"),
            }
        }
        for (c, p) in counts.iter().zip(tr.components()) {
            let se = (p * (1.0 - p) / n as f64).sqrt();
            assert!((*c as f64 / n as f64 - p).abs() < 3.0 * se);
        }
    }

    #[test]
    fn right_drift_escapes() {
        let env = constant(t(0.0, 0.0, 1.0), -1, 210);
        let out = run_excursion(&env, 0, &mut walk_rng(0), 200, 1000).unwrap();
        assert_eq!(out.verdict, Verdict::Escaped { confirm_level: 200 });
        assert_eq!(out.max_height(), None);
        assert_eq!(out.steps_used, 100);
    }

    #[test]
    fn left_step_returns_immediately() {
        let env = constant(t(1.0, 0.0, 0.0), -1, 210);
        let out = run_excursion(&env, 0, &mut walk_rng(0), 200, 1000).unwrap();
        assert_eq!(out.verdict, Verdict::Returned { d: 1, m: 0 });
    }

    #[test]
    fn excursion_truncation() {
        let env = constant(t(0.0, 1.0, 0.0), -1, 500);
        let err = run_excursion(&env, 0, &mut walk_rng(0), 200, 10).unwrap_err();
        assert!(matches!(err, Error::Truncated { cap: 10, time: 10, position: 10 }));
    }

    #[test]
    fn excursion_window_error() {
        let env = constant(t(0.0, 1.0, 0.0), -1, 5);
        let err = run_excursion(&env, 0, &mut walk_rng(0), 200, 1000).unwrap_err();
        assert!(matches!(err, Error::OutsideWindow { site: 6, .. }));
    }

    #[test]
    fn zero_height_returns_are_first_step_left() {
        // M = 0 with D < ∞ iff the first step is −1
        let model = EnvModel::point_mass(t(0.2, 0.4, 0.4));
        let n = 100_000u64;
        let mut rng = walk_rng(31337);
        let env = LazyEnvironment::new(&model, 0).unwrap();
        let hits = (0..n)
            .filter(|_| {
                let out = run_excursion(&env, 0, &mut rng, 200, 1_000_000).unwrap();
                out.verdict == Verdict::Returned { d: 1, m: 0 }
            })
            .count();
        let freq = hits as f64 / n as f64;
        let se = (0.2 * 0.8 / n as f64).sqrt();
        assert!((freq - 0.2).abs() < 3.0 * se, "freq {freq}");
    }

    #[test]
    fn excursion_dichotomy() {
        let model = EnvModel::dirichlet_floor([1.0, 1.0, 1.0], 0.05).unwrap();
        for seed in 0..200 {
            let env = LazyEnvironment::new(&model, seed).unwrap();
            let out = run_excursion(&env, 0, &mut walk_rng(seed), 50, 1_000_000).unwrap();
            if let Verdict::Returned { d, m } = out.verdict {
                let mut replay = walk_rng(seed);
                let mut s = WalkState::at(0);
                let mut path = vec![0];
                for _ in 0..d {
                    s.advance(&env, &mut replay).unwrap();
                    path.push(s.position);
                }
                assert_eq!(*path.last().unwrap(), -1);
                assert!(path[..path.len() - 1].iter().all(|&x| x >= 0));
                assert_eq!(*path.iter().max().unwrap(), m);
            }
        }
    }

    #[test]
    fn deterministic_first_passages() {
        let env = constant(t(0.0, 0.0, 1.0), -10, 20);
        let fp = first_passage(&env, 5, 0, &mut walk_rng(0), 100).unwrap();
        assert_eq!(
            fp,
            FirstPassage {
                level: 5,
                time: 3,
                landing: 6,
                overshoot: 1
            }
        );
        let env = constant(t(0.0, 1.0, 0.0), -10, 20);
        let fp = first_passage(&env, 5, 0, &mut walk_rng(0), 100).unwrap();
        assert_eq!((fp.time, fp.landing, fp.overshoot), (6, 6, 1));
    }

    #[test]
    fn overshoot_matches_absorption_oracle() {
        // P(X_{T_0} = 2) from 0 on states {−K, …, 0}; leaving below −K is
        // lost mass, bounded by the left-hitting probability at depth K.
        const LAND1: usize = 0;
        const LAND2: usize = 1;
        const LOST: usize = 2;
        let tr = t(0.2, 0.4, 0.4);
        let depth = 60;
        let probs = exit_distribution(&vec![tr; depth + 1], 3, |e| match e {
            Exit::Below => LOST,
            Exit::Above(1) => LAND1,
            Exit::Above(_) => LAND2,
        })
        .unwrap();
        assert!(probs[LOST] < 1e-12);
        let p2 = probs[LAND2];

        let env = LazyEnvironment::new(&EnvModel::point_mass(tr), 0).unwrap();
        let mut rng = walk_rng(4242);
        let n = 100_000u64;
        let hits = (0..n)
            .filter(|_| first_passage(&env, 0, 0, &mut rng, 1_000_000).unwrap().overshoot == 2)
            .count();
        let freq = hits as f64 / n as f64;
        let se = (p2 * (1.0 - p2) / n as f64).sqrt();
        assert!((freq - p2).abs() < 3.0 * se, "freq {freq} oracle {p2}");
    }

    #[test]
    fn run_walk_deterministic_cases() {
        let env = constant(t(0.0, 1.0, 0.0), -5, 20);
        let mut rec = PathRecorder::default();
        let s = run_walk(&env, 0, 10, &mut walk_rng(0), &mut [&mut rec], 1000).unwrap();
        assert_eq!((s.final_position, s.steps), (11, 11));
        assert_eq!(rec.path, (0..=11).collect::<Vec<_>>());

        let env = constant(t(0.0, 0.0, 1.0), -5, 20);
        let mut rec = PathRecorder::default();
        let s = run_walk(&env, 0, 10, &mut walk_rng(0), &mut [&mut rec], 1000).unwrap();
        assert_eq!((s.final_position, s.steps), (12, 6));
    }

    #[test]
    fn run_walk_replays() {
        let model = EnvModel::dirichlet_floor([1.0, 2.0, 2.0], 0.05).unwrap();
        let env = realize_window(&model, 9, -500, 600).unwrap();
        let go = || {
            let mut rec = PathRecorder::default();
            let s = run_walk(&env, 0, 500, &mut walk_rng(5), &mut [&mut rec], 1_000_000).unwrap();
            (s, rec.path)
        };
        let (a, pa) = go();
        let (b, pb) = go();
        assert_eq!(a, b);
        assert_eq!(pa, pb);
        assert!(pa.windows(2).all(|w| matches!(w[1] - w[0], -1 | 1 | 2)));
    }

    #[test]
    fn run_walk_truncates_with_partial_state() {
        let env = constant(t(0.5, 0.5, 0.0), -10_000, 10_000);
        let mut rec = PathRecorder::default();
        let err = run_walk(&env, 0, 5000, &mut walk_rng(0), &mut [&mut rec], 100).unwrap_err();
        assert!(matches!(err, Error::Truncated { cap: 100, time: 100, .. }));
        assert_eq!(rec.path.len(), 101);
    }

    #[test]
    fn overshoot_recorded_after_return() {
        let model = EnvModel::point_mass(t(0.2, 0.4, 0.4));
        let env = LazyEnvironment::new(&model, 0).unwrap();
        let mut rng = walk_rng(8);
        let mut seen = 0;
        for _ in 0..2000 {
            let out = run_excursion_with_overshoot(&env, 0, &mut rng, 200, 1_000_000).unwrap();
            match out.verdict {
                Verdict::Returned { .. } => {
                    seen += 1;
                    assert!(matches!(out.xi, Some(1 | 2)));
                }
                Verdict::Escaped { .. } => assert_eq!(out.xi, None),
            }
        }
        assert!(seen > 0);
    }

    #[test]
    fn quenched_markov_replay() {
        // the step at a site depends only on its triple and the generator
        let model = EnvModel::dirichlet_floor([1.0, 1.0, 1.0], 0.05).unwrap();
        let env = realize_window(&model, 3, -200, 200).unwrap();
        let mut rng = walk_rng(12);
        let mut recorded = rng.clone();
        let mut s = WalkState::at(0);
        for _ in 0..100 {
            let site = s.position;
            let delta = s.advance(&env, &mut rng).unwrap();
            assert_eq!(step(&env.triple(site).unwrap(), &mut recorded), delta);
        }
    }
}
