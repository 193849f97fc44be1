//! Environment laws and their deterministic realization.
//!
//! Every site draws its triple from a ChaCha8 stream keyed by `(seed, site)`:
//! the seed selects the key and the site index selects the stream. A site's
//! law is therefore a pure function of the model, the seed and the site, so
//! windows can be realized in any order, extended in either direction, or
//! sampled lazily without changing what was realized before.

use std::cell::RefCell;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Gamma};

use crate::error::{Error, Result};

const SIMPLEX_TOL: f64 = 1e-12;

/// Default floor for Dirichlet models.
pub const DEFAULT_FLOOR: f64 = 0.05;

/// One site's jump law: probabilities of the steps −1, +1 and +2.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ProbTriple {
    pub p_left: f64,
    pub p_one: f64,
    pub p_two: f64,
}

impl ProbTriple {
    pub fn new(p_left: f64, p_one: f64, p_two: f64) -> Result<Self> {
        let t = Self {
            p_left,
            p_one,
            p_two,
        };
        t.validate(0.0)?;
        Ok(t)
    }

    pub fn validate(&self, floor: f64) -> Result<()> {
        let bad = |reason: String| Error::InvalidTriple {
            p_left: self.p_left,
            p_one: self.p_one,
            p_two: self.p_two,
            reason,
        };
        for p in self.components() {
            if !p.is_finite() || !(0.0..=1.0).contains(&p) {
                return Err(bad("components must lie in [0, 1]".into()));
            }
            if p < floor - SIMPLEX_TOL {
                return Err(bad(format!("component below floor {floor}")));
            }
        }
        let sum = self.p_left + self.p_one + self.p_two;
        if (sum - 1.0).abs() > SIMPLEX_TOL {
            return Err(bad(format!("components sum to {sum}")));
        }
        Ok(())
    }

    pub fn components(&self) -> [f64; 3] {
        [self.p_left, self.p_one, self.p_two]
    }

    /// Whether the triple violates the integrability condition on the
    /// left and double-right step probabilities (a zero in either).
    pub fn out_of_model(&self) -> bool {
        self.p_left <= 0.0 || self.p_two <= 0.0
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum ModelKind {
    PointMass(ProbTriple),
    FiniteMixture(Vec<(ProbTriple, f64)>),
    /// Dirichlet shape parameters; the floor lives on [`EnvModel`].
    DirichletFloor([f64; 3]),
}

/// A law on triples, sampled i.i.d. across sites.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvModel {
    kind: ModelKind,
    floor: f64,
}

impl EnvModel {
    pub fn new(kind: ModelKind, floor: f64) -> Result<Self> {
        let model = Self { kind, floor };
        model.validate()?;
        Ok(model)
    }

    pub fn point_mass(triple: ProbTriple) -> Self {
        Self {
            kind: ModelKind::PointMass(triple),
            floor: 0.0,
        }
    }

    pub fn mixture(atoms: Vec<(ProbTriple, f64)>) -> Result<Self> {
        Self::new(ModelKind::FiniteMixture(atoms), 0.0)
    }

    pub fn dirichlet_floor(alpha: [f64; 3], floor: f64) -> Result<Self> {
        Self::new(ModelKind::DirichletFloor(alpha), floor)
    }

    pub fn kind(&self) -> &ModelKind {
        &self.kind
    }

    pub fn floor(&self) -> f64 {
        self.floor
    }

    pub fn validate(&self) -> Result<()> {
        if !self.floor.is_finite() || !(0.0..1.0 / 3.0).contains(&self.floor) {
            return Err(Error::InvalidModel(format!(
                "floor {} must lie in [0, 1/3)",
                self.floor
            )));
        }
        match &self.kind {
            ModelKind::PointMass(t) => t.validate(self.floor),
            ModelKind::FiniteMixture(atoms) => {
                if atoms.is_empty() {
                    return Err(Error::InvalidModel("mixture has no atoms".into()));
                }
                let mut total = 0.0;
                for (t, w) in atoms {
                    t.validate(self.floor)?;
                    if !w.is_finite() || *w < 0.0 {
                        return Err(Error::InvalidModel(format!("bad mixture weight {w}")));
                    }
                    total += w;
                }
                if (total - 1.0).abs() > SIMPLEX_TOL {
                    return Err(Error::InvalidModel(format!(
                        "mixture weights sum to {total}"
                    )));
                }
                Ok(())
            }
            ModelKind::DirichletFloor(alpha) => {
                if alpha.iter().any(|a| !a.is_finite() || *a <= 0.0) {
                    return Err(Error::InvalidModel(format!(
                        "Dirichlet shape parameters must be positive, got {alpha:?}"
                    )));
                }
                Ok(())
            }
        }
    }

    /// True when some realizable triple has a zero left or double-right
    /// probability. Such models are useful as exact test cases but fall
    /// outside the theory (transfer matrices may be undefined).
    pub fn out_of_model(&self) -> bool {
        match &self.kind {
            ModelKind::PointMass(t) => t.out_of_model(),
            ModelKind::FiniteMixture(atoms) => atoms
                .iter()
                .any(|(t, w)| *w > 0.0 && t.out_of_model()),
            ModelKind::DirichletFloor(_) => false,
        }
    }

    /// True when every realizable triple is the same.
    pub fn is_deterministic(&self) -> bool {
        match &self.kind {
            ModelKind::PointMass(_) => true,
            ModelKind::FiniteMixture(atoms) => {
                let mut live = atoms.iter().filter(|(_, w)| *w > 0.0).map(|(t, _)| t);
                match live.next() {
                    Some(first) => live.all(|t| t == first),
                    None => true,
                }
            }
            ModelKind::DirichletFloor(_) => false,
        }
    }

    /// Mean triple under the model.
    pub fn mean_triple(&self) -> ProbTriple {
        match &self.kind {
            ModelKind::PointMass(t) => *t,
            ModelKind::FiniteMixture(atoms) => {
                let mut m = [0.0; 3];
                for (t, w) in atoms {
                    for (acc, p) in m.iter_mut().zip(t.components()) {
                        *acc += w * p;
                    }
                }
                ProbTriple {
                    p_left: m[0],
                    p_one: m[1],
                    p_two: m[2],
                }
            }
            ModelKind::DirichletFloor(alpha) => {
                let s: f64 = alpha.iter().sum();
                let span = 1.0 - 3.0 * self.floor;
                let c = |a: f64| self.floor + span * a / s;
                ProbTriple {
                    p_left: c(alpha[0]),
                    p_one: c(alpha[1]),
                    p_two: c(alpha[2]),
                }
            }
        }
    }
}

/// Generator for the triple at `site`; one ChaCha stream per site.
fn site_rng(seed: u64, site: i64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(site as u64);
    rng
}

/// The triple at `site` for environment `seed`. Pure in all arguments.
pub fn site_law(model: &EnvModel, seed: u64, site: i64) -> ProbTriple {
    match &model.kind {
        ModelKind::PointMass(t) => *t,
        ModelKind::FiniteMixture(atoms) => {
            let u: f64 = site_rng(seed, site).random();
            let mut acc = 0.0;
            for (t, w) in atoms {
                acc += w;
                if u < acc {
                    return *t;
                }
            }
            // weights sum to 1 only up to rounding
            atoms
                .iter()
                .rev()
                .find(|(_, w)| *w > 0.0)
                .map(|(t, _)| *t)
                .unwrap_or(atoms[0].0)
        }
        ModelKind::DirichletFloor(alpha) => {
            let mut rng = site_rng(seed, site);
            let mut g = [0.0; 3];
            for (gi, a) in g.iter_mut().zip(alpha) {
                // shape validated positive at construction
                let dist = Gamma::new(*a, 1.0).expect("positive shape");
                *gi = dist.sample(&mut rng);
            }
            let s: f64 = g.iter().sum();
            let span = 1.0 - 3.0 * model.floor;
            let c = g.map(|x| x / s);
            let p_left = model.floor + span * c[0];
            let p_one = model.floor + span * c[1];
            ProbTriple {
                p_left,
                p_one,
                // closes the simplex exactly
                p_two: 1.0 - p_left - p_one,
            }
        }
    }
}

/// A realized window of an i.i.d. environment.
#[derive(Debug, Clone)]
pub struct Environment {
    model: EnvModel,
    seed: u64,
    lo: i64,
    triples: Vec<ProbTriple>,
}

impl Environment {
    pub fn model(&self) -> &EnvModel {
        &self.model
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn lo(&self) -> i64 {
        self.lo
    }

    pub fn hi(&self) -> i64 {
        self.lo + self.triples.len() as i64 - 1
    }

    pub fn len(&self) -> usize {
        self.triples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.triples.is_empty()
    }

    pub fn get(&self, site: i64) -> Option<&ProbTriple> {
        let idx = site.checked_sub(self.lo)?;
        usize::try_from(idx).ok().and_then(|i| self.triples.get(i))
    }

    pub fn triple(&self, site: i64) -> Result<ProbTriple> {
        self.get(site).copied().ok_or(Error::OutsideWindow {
            site,
            lo: self.lo,
            hi: self.hi(),
        })
    }

    /// Triples for sites `lo..=hi` in order.
    pub fn slice(&self, lo: i64, hi: i64) -> Result<&[ProbTriple]> {
        if lo > hi {
            return Err(Error::InvalidWindow { lo, hi });
        }
        self.triple(lo)?;
        self.triple(hi)?;
        let a = (lo - self.lo) as usize;
        let b = (hi - self.lo) as usize;
        Ok(&self.triples[a..=b])
    }

    pub fn iter(&self) -> impl Iterator<Item = (i64, &ProbTriple)> {
        let lo = self.lo;
        self.triples
            .iter()
            .enumerate()
            .map(move |(i, t)| (lo + i as i64, t))
    }

    /// Grows the window to cover `[lo, hi]`; existing sites are untouched.
    pub fn extend(&mut self, lo: i64, hi: i64) -> Result<()> {
        if lo > hi {
            return Err(Error::InvalidWindow { lo, hi });
        }
        let cur_hi = self.hi();
        if lo < self.lo {
            let mut front: Vec<ProbTriple> = (lo..self.lo)
                .map(|i| site_law(&self.model, self.seed, i))
                .collect();
            front.append(&mut self.triples);
            self.triples = front;
            self.lo = lo;
        }
        if hi > cur_hi {
            let start = cur_hi + 1;
            self.triples
                .extend((start..=hi).map(|i| site_law(&self.model, self.seed, i)));
        }
        Ok(())
    }
}

/// Realizes sites `lo..=hi` of the environment with the given seed.
pub fn realize_window(model: &EnvModel, seed: u64, lo: i64, hi: i64) -> Result<Environment> {
    if lo > hi {
        return Err(Error::InvalidWindow { lo, hi });
    }
    model.validate()?;
    let triples = (lo..=hi).map(|i| site_law(model, seed, i)).collect();
    Ok(Environment {
        model: model.clone(),
        seed,
        lo,
        triples,
    })
}

/// Read access to site laws, either from a fixed window or realized lazily.
pub trait SiteLaws {
    fn law(&self, site: i64) -> Result<ProbTriple>;
}

impl SiteLaws for Environment {
    fn law(&self, site: i64) -> Result<ProbTriple> {
        self.triple(site)
    }
}

/// An environment realized on demand, for annealed experiments where each
/// replica draws a fresh environment and only visits a few sites.
///
/// Not `Sync`: each replica owns its own instance.
#[derive(Debug)]
pub struct LazyEnvironment {
    inner: RefCell<Environment>,
}

impl LazyEnvironment {
    pub fn new(model: &EnvModel, seed: u64) -> Result<Self> {
        Ok(Self {
            inner: RefCell::new(realize_window(model, seed, -1, 64)?),
        })
    }

    /// Snapshot of everything realized so far.
    pub fn realized(&self) -> Environment {
        self.inner.borrow().clone()
    }
}

impl SiteLaws for LazyEnvironment {
    fn law(&self, site: i64) -> Result<ProbTriple> {
        if let Some(t) = self.inner.borrow().get(site) {
            return Ok(*t);
        }
        let mut env = self.inner.borrow_mut();
        let width = env.len() as i64;
        if site < env.lo() {
            let lo = site.min(env.lo() - width);
            let hi = env.hi();
            env.extend(lo, hi)?;
        } else {
            let lo = env.lo();
            let hi = site.max(env.hi() + width);
            env.extend(lo, hi)?;
        }
        env.triple(site)
    }
}
