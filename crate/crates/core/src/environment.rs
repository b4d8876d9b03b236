//! Dynamic random environments `η_n(x)` on a finite alphabet.
//!
//! Three translation-invariant models are provided, all with sites evolving
//! independently of each other:
//!
//! * [`EnvModel::Iid`]: i.i.d. states over space-time (exact independence);
//! * [`EnvModel::Markov`]: one stationary Markov chain per site
//!   (exponential mixing);
//! * [`EnvModel::Renewal`]: one stationary renewal chain per site with a
//!   power-law inter-renewal tail (polynomial mixing).
//!
//! States are pure functions of `(spec, key, x, n)`. Markov and renewal
//! columns are generated forward in time from `n = 0`; [`EnvReader`] caches
//! them per site for walker evolution.

use std::collections::HashMap;
use std::sync::{Arc, Mutex, OnceLock};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::rng::{FieldHasher, SeedKey, SpaceTimePoint, Stream};
use crate::stats;

const SUM_TOLERANCE: f64 = 1e-12;
const STATIONARY_TOLERANCE: f64 = 1e-9;
/// Largest accepted renewal truncation cap.
pub const MAX_RENEWAL_CAP: u64 = 50_000_000;
pub const DEFAULT_RENEWAL_CAP: u64 = 1_000_000;

fn default_cap() -> u64 {
    DEFAULT_RENEWAL_CAP
}

/// Environment law.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "kebab-case", deny_unknown_fields)]
pub enum EnvModel {
    /// Every `η_n(x)` drawn independently from `probs`.
    Iid { probs: Vec<f64> },
    /// Per-site chains with row-stochastic `transition`, started from the
    /// stationary law `initial`.
    Markov { transition: Vec<Vec<f64>>, initial: Vec<f64> },
    /// Per-site stationary renewal chains: inter-renewal times satisfy
    /// `P(T >= t) = t^(-beta)` up to `cap`; at each renewal a fresh state is
    /// drawn from `probs`.
    Renewal {
        beta: f64,
        #[serde(default = "default_cap")]
        cap: u64,
        probs: Vec<f64>,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EnvironmentSpec {
    #[serde(flatten)]
    pub model: EnvModel,
    /// Reads `η_n(-x)` in place of `η_n(x)`.
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub reflected: bool,
}

impl EnvironmentSpec {
    pub fn new(model: EnvModel) -> Self {
        EnvironmentSpec { model, reflected: false }
    }

    pub fn iid(probs: Vec<f64>) -> Self {
        Self::new(EnvModel::Iid { probs })
    }

    /// Point mass on `state` within an alphabet of `states` letters.
    pub fn constant(state: usize, states: usize) -> Self {
        let mut probs = vec![0.0; states];
        probs[state] = 1.0;
        Self::iid(probs)
    }

    /// Chains with the given matrix, started from its stationary law
    /// (computed by power iteration).
    pub fn markov(transition: Vec<Vec<f64>>) -> Self {
        let initial = stationary_law(&transition);
        Self::new(EnvModel::Markov { transition, initial })
    }

    /// Symmetric two-state chain flipping with probability `p` per step.
    pub fn two_state_flip(p: f64) -> Self {
        Self::new(EnvModel::Markov {
            transition: vec![vec![1.0 - p, p], vec![p, 1.0 - p]],
            initial: vec![0.5, 0.5],
        })
    }

    pub fn renewal(beta: f64, cap: u64, probs: Vec<f64>) -> Self {
        Self::new(EnvModel::Renewal { beta, cap, probs })
    }

    /// Site-reflected environment `x -> η_n(-x)`.
    pub fn reflect(&self) -> Self {
        EnvironmentSpec { model: self.model.clone(), reflected: !self.reflected }
    }

    pub fn state_count(&self) -> usize {
        match &self.model {
            EnvModel::Iid { probs } | EnvModel::Renewal { probs, .. } => probs.len(),
            EnvModel::Markov { initial, .. } => initial.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidEnvironment(m));
        match &self.model {
            EnvModel::Iid { probs } => check_probs("probs", probs)?,
            EnvModel::Markov { transition, initial } => {
                check_probs("initial", initial)?;
                if transition.len() != initial.len() {
                    return bad(format!(
                        "transition has {} rows but initial law has {} states",
                        transition.len(),
                        initial.len()
                    ));
                }
                for (i, row) in transition.iter().enumerate() {
                    if row.len() != initial.len() {
                        return bad(format!("transition row {i} has length {}", row.len()));
                    }
                    check_probs(&format!("transition[{i}]"), row)?;
                }
                for j in 0..initial.len() {
                    let pj: f64 = (0..initial.len()).map(|i| initial[i] * transition[i][j]).sum();
                    if (pj - initial[j]).abs() > STATIONARY_TOLERANCE {
                        return bad(format!("initial law is not stationary at state {j}: {pj} vs {}", initial[j]));
                    }
                }
            }
            EnvModel::Renewal { beta, cap, probs } => {
                check_probs("probs", probs)?;
                if !(*beta > 0.0) || !beta.is_finite() {
                    return bad(format!("beta must be positive, got {beta}"));
                }
                if *cap < 1 || *cap > MAX_RENEWAL_CAP {
                    return bad(format!("cap must lie in [1, {MAX_RENEWAL_CAP}], got {cap}"));
                }
            }
        }
        Ok(())
    }

    /// Validates and precomputes sampling tables.
    pub fn compile(&self) -> Result<CompiledEnv> {
        self.validate()?;
        let law = match &self.model {
            EnvModel::Iid { probs } => Law::Iid { cum: cumulative(probs) },
            EnvModel::Markov { transition, initial } => Law::Markov {
                initial: cumulative(initial),
                rows: transition.iter().map(|r| cumulative(r)).collect(),
                identity: transition.iter().enumerate().all(|(i, r)| r[i] == 1.0),
            },
            EnvModel::Renewal { beta, cap, probs } => Law::Renewal {
                inv_beta: 1.0 / beta,
                cap: *cap,
                states: cumulative(probs),
                delay: delay_table(*beta, *cap),
            },
        };
        Ok(CompiledEnv { inner: Arc::new(Inner { law, states: self.state_count(), reflected: self.reflected }) })
    }
}

fn check_probs(name: &str, p: &[f64]) -> Result<()> {
    if p.len() < 2 {
        return Err(Error::InvalidEnvironment(format!("{name}: alphabet needs at least 2 states, got {}", p.len())));
    }
    if p.len() > u8::MAX as usize + 1 {
        return Err(Error::InvalidEnvironment(format!("{name}: at most 256 states supported")));
    }
    if let Some(v) = p.iter().find(|v| !(**v >= 0.0) || !v.is_finite()) {
        return Err(Error::InvalidEnvironment(format!("{name}: negative or non-finite entry {v}")));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > SUM_TOLERANCE {
        return Err(Error::InvalidEnvironment(format!("{name}: probabilities sum to {s}")));
    }
    Ok(())
}

fn cumulative(p: &[f64]) -> Vec<f64> {
    p.iter()
        .scan(0.0, |acc, &v| {
            *acc += v;
            Some(*acc)
        })
        .collect()
}

#[inline]
fn sample(cum: &[f64], u: f64) -> u8 {
    cum.iter().position(|&c| u < c).unwrap_or(cum.len() - 1) as u8
}

/// Stationary law of a row-stochastic matrix by power iteration.
pub fn stationary_law(transition: &[Vec<f64>]) -> Vec<f64> {
    let k = transition.len();
    let mut pi = vec![1.0 / k as f64; k];
    for _ in 0..100_000 {
        // lazy chain avoids oscillation for periodic matrices
        let next: Vec<f64> = (0..k)
            .map(|j| 0.5 * pi[j] + 0.5 * (0..k).map(|i| pi[i] * transition[i][j]).sum::<f64>())
            .collect();
        let diff = next.iter().zip(&pi).map(|(a, b)| (a - b).abs()).fold(0.0, f64::max);
        pi = next;
        if diff < 1e-15 {
            break;
        }
    }
    let s: f64 = pi.iter().sum();
    pi.iter().map(|v| v / s).collect()
}

/// Cumulative law of the stationary delay `P(D = d) ∝ P(T >= d)`, shared
/// across specs with the same `(beta, cap)`.
fn delay_table(beta: f64, cap: u64) -> Arc<Vec<f64>> {
    type Tables = HashMap<(u64, u64), Arc<Vec<f64>>>;
    static CACHE: OnceLock<Mutex<Tables>> = OnceLock::new();
    let cache = CACHE.get_or_init(|| Mutex::new(HashMap::new()));
    let mut guard = cache.lock().unwrap();
    guard
        .entry((beta.to_bits(), cap))
        .or_insert_with(|| {
            let mut cum = Vec::with_capacity(cap as usize);
            let mut acc = 0.0;
            for d in 1..=cap {
                acc += (d as f64).powf(-beta);
                cum.push(acc);
            }
            let total = acc;
            cum.iter_mut().for_each(|c| *c /= total);
            Arc::new(cum)
        })
        .clone()
}

#[derive(Debug)]
enum Law {
    Iid { cum: Vec<f64> },
    Markov { initial: Vec<f64>, rows: Vec<Vec<f64>>, identity: bool },
    Renewal { inv_beta: f64, cap: u64, states: Vec<f64>, delay: Arc<Vec<f64>> },
}

#[derive(Debug)]
struct Inner {
    law: Law,
    states: usize,
    reflected: bool,
}

/// Immutable, shareable sampler for one [`EnvironmentSpec`].
#[derive(Debug, Clone)]
pub struct CompiledEnv {
    inner: Arc<Inner>,
}

// Lanes of the EnvField stream.
const LANE_STEP: u64 = 0;
const LANE_GAP: u64 = 1;
const LANE_STATE: u64 = 2;

/// Forward generator of one site's column.
#[derive(Debug, Clone)]
struct Column {
    states: Vec<u8>,
    next_renewal: u64,
    renewals: u64,
}

impl CompiledEnv {
    pub fn state_count(&self) -> usize {
        self.inner.states
    }

    pub fn is_iid(&self) -> bool {
        matches!(self.inner.law, Law::Iid { .. })
    }

    fn hashers(key: &SeedKey) -> [FieldHasher; 3] {
        let k = key.with_stream(Stream::EnvField);
        [k.hasher(LANE_STEP), k.hasher(LANE_GAP), k.hasher(LANE_STATE)]
    }

    #[inline]
    fn site(&self, x: i64) -> i64 {
        if self.inner.reflected {
            -x
        } else {
            x
        }
    }

    /// `η_n(x)` computed without caching.
    pub fn state_at(&self, key: &SeedKey, p: SpaceTimePoint) -> u8 {
        let h = Self::hashers(key);
        let x = self.site(p.x);
        match &self.inner.law {
            Law::Iid { cum } => sample(cum, h[0].uniform(x, p.n)),
            Law::Markov { .. } | Law::Renewal { .. } => {
                let mut col = self.new_column(&h, x);
                self.extend_column(&h, x, &mut col, p.n);
                col.states[p.n as usize]
            }
        }
    }

    fn new_column(&self, h: &[FieldHasher; 3], x: i64) -> Column {
        match &self.inner.law {
            Law::Iid { .. } => unreachable!("iid fields are not cached"),
            Law::Markov { initial, .. } => {
                Column { states: vec![sample(initial, h[0].uniform(x, 0))], next_renewal: 0, renewals: 0 }
            }
            Law::Renewal { states, delay, .. } => {
                let u = h[1].uniform(x, 0);
                let d = delay.partition_point(|&c| c <= u).min(delay.len() - 1) as u64 + 1;
                Column { states: vec![sample(states, h[2].uniform(x, 0))], next_renewal: d, renewals: 0 }
            }
        }
    }

    fn extend_column(&self, h: &[FieldHasher; 3], x: i64, col: &mut Column, n: u64) {
        while (col.states.len() as u64) <= n {
            let t = col.states.len() as u64;
            let prev = *col.states.last().unwrap();
            let next = match &self.inner.law {
                Law::Iid { .. } => unreachable!(),
                Law::Markov { rows, identity, .. } => {
                    if *identity {
                        prev
                    } else {
                        sample(&rows[prev as usize], h[0].uniform(x, t))
                    }
                }
                Law::Renewal { inv_beta, cap, states, .. } => {
                    if t == col.next_renewal {
                        col.renewals += 1;
                        let gap = (h[1].open_uniform(x, col.renewals).powf(-inv_beta).floor() as u64).clamp(1, *cap);
                        col.next_renewal = t + gap;
                        sample(states, h[2].uniform(x, col.renewals))
                    } else {
                        prev
                    }
                }
            };
            col.states.push(next);
        }
    }

    /// A caching reader bound to one realization.
    pub fn reader(&self, key: &SeedKey) -> EnvReader<'_> {
        EnvReader { env: self, h: Self::hashers(key), columns: HashMap::new() }
    }
}

/// Per-realization view of the environment with per-site column caching.
/// Reads outside previously visited sites/times extend the cache on demand.
pub struct EnvReader<'a> {
    env: &'a CompiledEnv,
    h: [FieldHasher; 3],
    columns: HashMap<i64, Column>,
}

impl EnvReader<'_> {
    pub fn state_count(&self) -> usize {
        self.env.state_count()
    }

    #[inline]
    pub fn state(&mut self, x: i64, n: u64) -> u8 {
        let x = self.env.site(x);
        if let Law::Iid { cum } = &self.env.inner.law {
            return sample(cum, self.h[0].uniform(x, n));
        }
        let env = self.env;
        let h = &self.h;
        let col = self.columns.entry(x).or_insert_with(|| env.new_column(h, x));
        if (col.states.len() as u64) <= n {
            env.extend_column(h, x, col, n);
        }
        col.states[n as usize]
    }
}

/// Lookup of environment states by a walker; lets the walker module run on
/// the real environment or on a time-changed / logged one.
pub trait StateField {
    fn state_count(&self) -> usize;
    fn state(&mut self, x: i64, n: u64) -> u8;
}

impl StateField for EnvReader<'_> {
    fn state_count(&self) -> usize {
        EnvReader::state_count(self)
    }
    fn state(&mut self, x: i64, n: u64) -> u8 {
        EnvReader::state(self, x, n)
    }
}

/// `η_n(x)` for one point. Convenience form that compiles the spec.
pub fn state_at(spec: &EnvironmentSpec, key: &SeedKey, p: SpaceTimePoint) -> Result<u8> {
    Ok(spec.compile()?.state_at(key, p))
}

/// Half-open lattice box `[x_lo, x_hi) × [n_lo, n_hi)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct LatticeBox {
    pub x_lo: i64,
    pub x_hi: i64,
    pub n_lo: u64,
    pub n_hi: u64,
}

impl LatticeBox {
    pub fn new(x_lo: i64, x_hi: i64, n_lo: u64, n_hi: u64) -> Self {
        LatticeBox { x_lo, x_hi, n_lo, n_hi }
    }

    pub fn width(&self) -> i64 {
        self.x_hi - self.x_lo
    }

    pub fn height(&self) -> u64 {
        self.n_hi.saturating_sub(self.n_lo)
    }

    pub fn is_empty(&self) -> bool {
        self.x_hi <= self.x_lo || self.n_hi <= self.n_lo
    }

    pub fn cells(&self) -> usize {
        if self.is_empty() {
            0
        } else {
            self.width() as usize * self.height() as usize
        }
    }
}

/// Dense copy of `η` on a box, time-major.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct EnvironmentView {
    pub bounds: LatticeBox,
    pub states: Vec<u8>,
}

impl EnvironmentView {
    pub fn get(&self, x: i64, n: u64) -> Option<u8> {
        let b = &self.bounds;
        if x < b.x_lo || x >= b.x_hi || n < b.n_lo || n >= b.n_hi {
            return None;
        }
        let row = (n - b.n_lo) as usize;
        let col = (x - b.x_lo) as usize;
        Some(self.states[row * b.width() as usize + col])
    }

    /// Fraction of cells in `state`.
    pub fn fraction(&self, state: u8) -> f64 {
        self.states.iter().filter(|&&s| s == state).count() as f64 / self.states.len() as f64
    }
}

pub fn materialize(env: &CompiledEnv, key: &SeedKey, bounds: LatticeBox) -> Result<EnvironmentView> {
    if bounds.is_empty() {
        return Err(Error::EmptyBox);
    }
    let mut reader = env.reader(key);
    let mut states = Vec::with_capacity(bounds.cells());
    for n in bounds.n_lo..bounds.n_hi {
        for x in bounds.x_lo..bounds.x_hi {
            states.push(reader.state(x, n));
        }
    }
    Ok(EnvironmentView { bounds, states })
}

/// Two boxes separated vertically by at least `h`, sides at most `a_ratio * h`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BoxPair {
    pub b1: LatticeBox,
    pub b2: LatticeBox,
    pub h: f64,
    pub a_ratio: f64,
}

impl BoxPair {
    /// Vertical gap between the boxes viewed as subsets of `R²`.
    pub fn vertical_gap(&self) -> f64 {
        let (a, b) = (&self.b1, &self.b2);
        if a.n_hi <= b.n_lo {
            (b.n_lo - a.n_hi) as f64
        } else if b.n_hi <= a.n_lo {
            (a.n_lo - b.n_hi) as f64
        } else {
            0.0
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.b1.is_empty() || self.b2.is_empty() {
            return Err(Error::InvalidBoxPair("empty box".into()));
        }
        if !(self.h > 0.0) {
            return Err(Error::InvalidBoxPair(format!("separation h must be positive, got {}", self.h)));
        }
        if self.vertical_gap() < self.h {
            return Err(Error::InvalidBoxPair(format!(
                "vertical gap {} is smaller than h = {}",
                self.vertical_gap(),
                self.h
            )));
        }
        let max_side = self.a_ratio * self.h;
        for (name, b) in [("b1", &self.b1), ("b2", &self.b2)] {
            if b.width() as f64 > max_side || b.height() as f64 > max_side {
                return Err(Error::InvalidBoxPair(format!("{name} has a side longer than a*h = {max_side}")));
            }
        }
        Ok(())
    }
}

/// `{0,1}`-valued box function: "at least `min_fraction` of the cells are in `state`".
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Predicate {
    pub state: u8,
    pub min_fraction: f64,
}

impl Predicate {
    pub fn always() -> Self {
        Predicate { state: 0, min_fraction: 0.0 }
    }

    pub fn eval(&self, view: &EnvironmentView) -> bool {
        view.fraction(self.state) >= self.min_fraction
    }
}

/// Sample covariance of `f1(η|B1)` and `f2(η|B2)` over independent replicas,
/// with a 99% normal-approximation half-width.
pub fn empirical_box_covariance(
    env: &CompiledEnv,
    pair: &BoxPair,
    f1: Predicate,
    f2: Predicate,
    replicas: u64,
    key: &SeedKey,
) -> Result<(f64, f64)> {
    pair.validate()?;
    if replicas < 100 {
        return Err(Error::InvalidParams(format!("need at least 100 replicas, got {replicas}")));
    }
    let samples: Vec<(f64, f64)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let k = key.with_replica(r);
            let v1 = materialize(env, &k, pair.b1).expect("validated box");
            let v2 = materialize(env, &k, pair.b2).expect("validated box");
            (f1.eval(&v1) as u8 as f64, f2.eval(&v2) as u8 as f64)
        })
        .collect();
    let (a, b): (Vec<f64>, Vec<f64>) = samples.into_iter().unzip();
    Ok(stats::covariance_with_ci(&a, &b, stats::CONFIDENCE))
}

/// Covariance at one vertical separation.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CovarianceRow {
    pub h: u64,
    pub cov: f64,
    pub half_width: f64,
}

/// Covariances over a list of separations, with the power-law exponent
/// `alpha_hat` from fitting `log cov = log C - alpha * log h` over the rows
/// with positive covariance (`None` with fewer than two such rows).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CovarianceProfile {
    pub rows: Vec<CovarianceRow>,
    pub alpha_hat: Option<f64>,
}

#[allow(clippy::too_many_arguments)]
/// Covariance between a `width x height` box at the origin and the same box
/// `h` time steps above it, for every `h` in `h_list`.
pub fn covariance_profile(
    env: &CompiledEnv,
    width: i64,
    height: u64,
    h_list: &[u64],
    f1: Predicate,
    f2: Predicate,
    replicas: u64,
    key: &SeedKey,
) -> Result<CovarianceProfile> {
    if h_list.is_empty() {
        return Err(Error::InvalidParams("empty separation list".into()));
    }
    let mut rows = Vec::with_capacity(h_list.len());
    for &h in h_list {
        let b1 = LatticeBox::new(0, width, 0, height);
        let b2 = LatticeBox::new(0, width, height + h, 2 * height + h);
        let side = width.max(height as i64).max(1) as f64;
        let pair = BoxPair { b1, b2, h: h as f64, a_ratio: side / h as f64 };
        let (cov, half_width) = empirical_box_covariance(env, &pair, f1, f2, replicas, key)?;
        rows.push(CovarianceRow { h, cov, half_width });
    }
    let positive: Vec<&CovarianceRow> = rows.iter().filter(|r| r.cov > 0.0).collect();
    let alpha_hat = (positive.len() >= 2).then(|| {
        let xs: Vec<f64> = positive.iter().map(|r| (r.h as f64).ln()).collect();
        let ys: Vec<f64> = positive.iter().map(|r| r.cov.ln()).collect();
        -stats::fit_line(&xs, &ys).slope
    });
    Ok(CovarianceProfile { rows, alpha_hat })
}
