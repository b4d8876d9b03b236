//! Traps, threats, densities of threats and the barrier experiment.

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::environment::EnvReader;
use crate::error::{Error, Result};
use crate::estimators::EstimateWithCI;
use crate::geometry::{interval_points, pave, rounded_point, RealAnchor, ScaleLadder};
use crate::rng::{aux_uniform, SpaceTimePoint, Stream};
use crate::scalar::Scalar;
use crate::stats::{Wilson, CONFIDENCE};
use crate::walker::{evolve_front_with, run_walker, FrontOptions, Stepper, Walk};

/// Scale parameters of one level `k`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TrapParams<T> {
    pub k: usize,
    pub h_k: u64,
    pub r: u64,
    /// `H_k = r·h_k`.
    pub big_h: u64,
    /// Top scale `𝐇_k`.
    pub bold_h: u64,
    /// `𝐇_k / h_k`.
    pub m_k: u64,
    /// `𝐇_k / H_k`.
    pub big_m: u64,
    pub delta: T,
    pub v0: T,
    pub v_plus_ref: T,
    pub gamma: T,
    /// `γδ / (40 r²)`.
    pub lambda: T,
}

impl<T: Scalar> TrapParams<T> {
    #[allow(clippy::too_many_arguments)]
    pub fn new(k: usize, h_k: u64, r: u64, bold_h: u64, delta: T, v0: T, v_plus_ref: T, gamma: T) -> Result<Self> {
        let bad = |m: String| Err(Error::InvalidParams(m));
        if h_k < 1 || r < 1 {
            return bad(format!("h_k and r must be positive, got h_k = {h_k}, r = {r}"));
        }
        let big_h = h_k * r;
        if bold_h == 0 || !bold_h.is_multiple_of(big_h) {
            return bad(format!("top scale {bold_h} is not a positive multiple of H_k = {big_h}"));
        }
        if !(delta > T::zero()) {
            return bad(format!("delta must be positive, got {delta:?}"));
        }
        if !(gamma > T::zero()) {
            return bad(format!("gamma must be positive, got {gamma:?}"));
        }
        let r_t = T::from_i64(r as i64);
        let lambda = gamma * delta / (T::from_i64(40) * r_t * r_t);
        Ok(TrapParams {
            k,
            h_k,
            r,
            big_h,
            bold_h,
            m_k: bold_h / h_k,
            big_m: bold_h / big_h,
            delta,
            v0,
            v_plus_ref,
            gamma,
            lambda,
        })
    }

    /// Scales from the ladder: `h_k = L_{k1}·L_k`, `r = l_{k1}`,
    /// `H_k = L_{k1+1}·L_k`, `𝐇_k = L_k²`.
    pub fn from_ladder(ladder: &ScaleLadder, k: usize, k1: usize, delta: T, v0: T, v_plus_ref: T, gamma: T) -> Result<Self> {
        if k1 + 1 > k || k > ladder.k_max() + 1 {
            return Err(Error::InvalidParams(format!("need k1 + 1 <= k <= k_max + 1, got k1 = {k1}, k = {k}")));
        }
        let lk = ladder.big(k);
        let bold = lk
            .checked_mul(lk)
            .ok_or_else(|| Error::InvalidParams(format!("L_{k}^2 overflows")))?;
        Self::new(k, ladder.big(k1) * lk, ladder.small(k1), bold, delta, v0, v_plus_ref, gamma)
    }

    /// Parameters of the mirrored system: `v̄0 = -v0`, `v̄+ = -v-`.
    pub fn mirrored(&self) -> Self {
        let two = T::one() + T::one();
        let v_minus = two * self.v0 - self.v_plus_ref;
        TrapParams { v0: -self.v0, v_plus_ref: -v_minus, ..*self }
    }

    fn h_t(&self) -> T {
        T::from_i64(self.h_k as i64)
    }

    /// `δ h_k`.
    pub fn delta_h(&self) -> T {
        self.delta * self.h_t()
    }
}

/// `v0 = (v- + v+)/2` and `δ = (v+ - v-)/(6R)`.
pub fn speeds_to_params<T: Scalar>(v_minus: T, v_plus: T, range: i64) -> (T, T) {
    let two = T::one() + T::one();
    ((v_minus + v_plus) / two, (v_plus - v_minus) / T::from_i64(6 * range))
}

/// `J_k(w)`: lattice points in `w + [δh_k, 2δh_k) × {0}`.
pub fn j_interval<T: Scalar>(w: &RealAnchor<T>, params: &TrapParams<T>) -> Vec<SpaceTimePoint> {
    let dh = params.delta_h();
    interval_points(&w.shift(dh, 0), dh)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrapCount {
    pub n: u64,
    pub n_minus: u64,
    pub n_plus: u64,
}

type EnvStepper<'a, P> = Stepper<'a, P, EnvReader<'a>>;

fn trap_count_with<P: Float, T: Scalar>(s: &mut EnvStepper<'_, P>, w: &RealAnchor<T>, params: &TrapParams<T>) -> Result<TrapCount> {
    let starts = j_interval(w, params);
    if starts.is_empty() {
        return Err(Error::EmptyInterval);
    }
    let run = evolve_front_with(s, &starts, params.h_k, FrontOptions::default())?;
    let bound = params.v0 * params.h_t();
    let (mut n_minus, mut n_plus) = (0, 0);
    for i in 0..starts.len() {
        let d = T::from_i64(run.displacement(i));
        n_minus += (d <= bound) as u64;
        n_plus += (d >= bound) as u64;
    }
    Ok(TrapCount { n: starts.len() as u64, n_minus, n_plus })
}

/// Counts of slow and fast walkers from `J_k(w)` over `h_k` steps.
pub fn trap_count<P: Float, T: Scalar>(walk: &Walk<P>, w: &RealAnchor<T>, params: &TrapParams<T>) -> Result<TrapCount> {
    trap_count_with(&mut walk.stepper(), w, params)
}

/// `3 N⁻ ≥ N`.
pub fn is_trapped(c: &TrapCount) -> bool {
    3 * c.n_minus >= c.n
}

/// `w_i = w + i·h_k·(v+, 1)`.
pub fn threat_anchor<T: Scalar>(w: &RealAnchor<T>, i: u64, params: &TrapParams<T>) -> RealAnchor<T> {
    let ih = T::from_i64((i * params.h_k) as i64);
    w.shift(ih * params.v_plus_ref, i * params.h_k)
}

fn first_trapped_with<P: Float, T: Scalar>(
    s: &mut EnvStepper<'_, P>,
    w: &RealAnchor<T>,
    params: &TrapParams<T>,
) -> Result<Option<u64>> {
    for i in 0..params.r {
        if is_trapped(&trap_count_with(s, &threat_anchor(w, i, params), params)?) {
            return Ok(Some(i));
        }
    }
    Ok(None)
}

/// Index of the first trapped `w_i`, `i < r`, if any.
pub fn is_threatened<P: Float, T: Scalar>(walk: &Walk<P>, w: &RealAnchor<T>, params: &TrapParams<T>) -> Result<Option<u64>> {
    first_trapped_with(&mut walk.stepper(), w, params)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrapThreatEstimate {
    pub p_trap: EstimateWithCI,
    pub p_threat: EstimateWithCI,
    pub mirror_p_trap: EstimateWithCI,
    /// Whether the system or its mirror has trap probability at least 1/2
    /// within the upper confidence bound.
    pub dichotomy_holds: bool,
}

pub fn estimate_trap_threat_probs<P: Float + Send + Sync, T: Scalar>(
    walk: &Walk<P>,
    w: &RealAnchor<T>,
    params: &TrapParams<T>,
    replicas: u64,
) -> Result<TrapThreatEstimate> {
    if replicas < 100 {
        return Err(Error::InvalidParams(format!("need at least 100 replicas, got {replicas}")));
    }
    let mirror = walk.mirror();
    let mparams = params.mirrored();
    let flags: Vec<(bool, bool, bool)> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let wr = walk.with_replica(r);
            let mut s = wr.stepper();
            let trap = is_trapped(&trap_count_with(&mut s, w, params)?);
            let threat = trap || first_trapped_with(&mut s, w, params)?.is_some();
            let mr = mirror.with_replica(r);
            let mtrap = is_trapped(&trap_count_with(&mut mr.stepper(), w, &mparams)?);
            Ok((trap, threat, mtrap))
        })
        .collect::<Result<_>>()?;
    let count = |f: &dyn Fn(&(bool, bool, bool)) -> bool| flags.iter().filter(|x| f(x)).count() as u64;
    let p_trap = EstimateWithCI::new(count(&|x| x.0), replicas, walk.key);
    let p_threat = EstimateWithCI::new(count(&|x| x.1), replicas, walk.key);
    let mirror_p_trap = EstimateWithCI::new(count(&|x| x.2), replicas, mirror.key);
    let dichotomy_holds = p_trap.ci_hi >= 0.5 || mirror_p_trap.ci_hi >= 0.5;
    Ok(TrapThreatEstimate { p_trap, p_threat, mirror_p_trap, dichotomy_holds })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThreatDensity {
    pub density: f64,
    /// Threat flag of each block `j < M_k`.
    pub threatened: Vec<bool>,
}

/// Fraction of blocks `j < M_k` whose rounded start `⌊Y^y_{jH_k}⌋_k` is
/// `(k, r)`-threatened.
pub fn density_of_threats<P: Float, T: Scalar>(walk: &Walk<P>, y: SpaceTimePoint, params: &TrapParams<T>) -> Result<ThreatDensity> {
    let mut s = walk.stepper();
    let path = run_walker(&mut s, y, params.bold_h);
    let mut threatened = Vec::with_capacity(params.big_m as usize);
    for j in 0..params.big_m {
        let p = path.point((j * params.big_h) as usize);
        let anchor = RealAnchor::from_point(rounded_point(p, params.delta, params.h_t())?);
        threatened.push(first_trapped_with(&mut s, &anchor, params)?.is_some());
    }
    let density = threatened.iter().filter(|&&b| b).count() as f64 / params.big_m as f64;
    Ok(ThreatDensity { density, threatened })
}

/// Outcome of block `j` of a barrier experiment.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BarrierRecord {
    pub replica: u64,
    pub j: u64,
    pub j0: u64,
    pub j1: u64,
    pub trap: bool,
    pub bar: bool,
    pub cross: bool,
    pub del: bool,
    pub g_flag: bool,
    /// `X^y_{j h_k}`.
    pub y_pos_start: i64,
    /// `X^y_{(j+1) h_k}`.
    pub y_pos_end: i64,
    pub z_j: i64,
    pub big_z_j: i64,
    /// `X^{Z_j}_{h_k}`.
    pub z_end: i64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BarrierRun {
    pub replica: u64,
    pub g_flag: bool,
    pub records: Vec<BarrierRecord>,
}

impl BarrierRun {
    pub fn bar_count(&self) -> u64 {
        self.records.iter().filter(|r| r.bar).count() as u64
    }

    pub fn del_count(&self) -> u64 {
        self.records.iter().filter(|r| r.del).count() as u64
    }

    /// `#{j : 𝒢 ∧ bar_j ∧ ¬cross_j}`.
    pub fn forced_count(&self) -> u64 {
        self.records.iter().filter(|r| r.g_flag && r.bar && !r.cross).count() as u64
    }
}

/// Event `𝒢`: no anchor of the paving of `B_{𝐇_k}(y)` by `h_k`-intervals
/// launches a walker with `V_{h_k} ≥ v+ + λ`.
pub fn event_g<P: Float, T: Scalar>(walk: &Walk<P>, y: SpaceTimePoint, params: &TrapParams<T>) -> Result<bool> {
    g_with(&mut walk.stepper(), y, params)
}

fn g_with<P: Float, T: Scalar>(s: &mut EnvStepper<'_, P>, y: SpaceTimePoint, params: &TrapParams<T>) -> Result<bool> {
    let h = params.h_t();
    let bound = (params.v_plus_ref + params.lambda) * h;
    // no walker moves more than R·h_k, so large thresholds need no simulation
    if bound > T::from_i64(s_range(s) * params.h_k as i64) {
        return Ok(true);
    }
    for w in pave(&RealAnchor::from_point(y), params.h_k, params.m_k, s_range(s)) {
        let starts = interval_points(&w, h);
        let run = evolve_front_with(s, &starts, params.h_k, FrontOptions::default())?;
        if (0..starts.len()).any(|i| T::from_i64(run.displacement(i)) >= bound) {
            return Ok(false);
        }
    }
    Ok(true)
}

fn s_range<P: Float>(s: &EnvStepper<'_, P>) -> i64 {
    s.kernel().range
}

/// Runs `Y^y` for `𝐇_k` steps together with the auxiliary walkers from the
/// randomized points `Z_j`, all on the walk's realization.
pub fn barrier_experiment<P: Float, T: Scalar>(walk: &Walk<P>, y: SpaceTimePoint, params: &TrapParams<T>) -> Result<BarrierRun> {
    let mut s = walk.stepper();
    let h = params.h_k;
    let ht = params.h_t();
    let path = run_walker(&mut s, y, params.bold_h);
    let g_flag = g_with(&mut s, y, params)?;
    let aux = walk.key.with_stream(Stream::AuxUniform);
    let dh = params.delta_h();
    let spread = dh.floor_i64();
    if spread < 1 {
        return Err(Error::InvalidParams(format!("floor(delta*h_k) must be at least 1, got {spread}")));
    }
    let mut records = Vec::with_capacity(params.m_k as usize);
    for j in 0..params.m_k {
        let (j0, j1) = (j / params.r, j % params.r);
        let w_big = rounded_point(path.point((j0 * params.big_h) as usize), params.delta, ht)?;
        let w_j = threat_anchor(&RealAnchor::from_point(w_big), j1, params);
        debug_assert_eq!(w_j.n, y.n + j * h);
        let z_j = (w_j.x + dh).ceil_i64();
        let u = (aux_uniform(&aux, j) * (spread + 1) as f64).floor() as i64;
        let big_z = z_j + u.min(spread);
        let z_path = run_walker(&mut s, SpaceTimePoint::new(big_z, w_j.n), h);
        let z_end = z_path.last();
        let y_start = path.positions[(j * h) as usize];
        let y_end = path.positions[((j + 1) * h) as usize];
        let trap = is_trapped(&trap_count_with(&mut s, &w_j, params)?);
        let bar = T::from_i64(z_end - big_z) <= params.v0 * ht;
        let cross = y_start < big_z && y_end > z_end;
        let del = T::from_i64(y_end) <= w_j.x + (params.v_plus_ref - params.delta) * ht;
        records.push(BarrierRecord {
            replica: walk.key.replica,
            j,
            j0,
            j1,
            trap,
            bar,
            cross,
            del,
            g_flag,
            y_pos_start: y_start,
            y_pos_end: y_end,
            z_j,
            big_z_j: big_z,
            z_end,
        });
    }
    Ok(BarrierRun { replica: walk.key.replica, g_flag, records })
}

/// Barrier experiments on replicas `0..replicas`, in replica order.
pub fn barrier_replicas<P: Float + Send + Sync, T: Scalar>(
    walk: &Walk<P>,
    y: SpaceTimePoint,
    params: &TrapParams<T>,
    replicas: u64,
) -> Result<Vec<BarrierRun>> {
    (0..replicas)
        .into_par_iter()
        .map(|r| barrier_experiment(&walk.with_replica(r), y, params))
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CrossGivenBar {
    pub bar_blocks: u64,
    pub crossings: u64,
    pub frequency: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub bound: f64,
    /// `frequency ≤ 1 − γ + CI half-width`.
    pub within_bound: bool,
}

/// Empirical `P(cross | bar)` pooled over all records.
pub fn estimate_cross_given_bar(records: &[BarrierRecord], gamma: f64) -> Result<CrossGivenBar> {
    let bars: Vec<&BarrierRecord> = records.iter().filter(|r| r.bar).collect();
    if bars.len() < 100 {
        return Err(Error::InsufficientEvents { needed: 100, got: bars.len() });
    }
    let crossings = bars.iter().filter(|r| r.cross).count() as u64;
    let w = Wilson::<f64>::new(crossings, bars.len() as u64, CONFIDENCE);
    let bound = 1.0 - gamma;
    Ok(CrossGivenBar {
        bar_blocks: bars.len() as u64,
        crossings,
        frequency: w.p_hat,
        ci_lo: w.lo,
        ci_hi: w.hi,
        bound,
        within_bound: w.p_hat <= bound + w.half_width(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DelayReport {
    pub replicas: u64,
    /// `hist[c]` = number of replicas with `|Bar| = c`, `c ≤ m_k`.
    pub bar_histogram: Vec<u64>,
    pub del_histogram: Vec<u64>,
    pub mean_bar: f64,
    pub mean_del: f64,
    /// Frequency of `𝒢 ∧ |Del| < γ M_k / 20`.
    pub g_and_few_delays: EstimateWithCI,
    /// Replicas with `|Del| < #{𝒢 ∧ bar ∧ ¬cross}`.
    pub count_violations: u64,
    /// Records with `𝒢 ∧ bar ∧ ¬cross ∧ ¬del`.
    pub record_violations: u64,
}

pub fn delay_report<P: Float, T: Scalar>(walk: &Walk<P>, runs: &[BarrierRun], params: &TrapParams<T>) -> Result<DelayReport> {
    if runs.len() < 100 {
        return Err(Error::InsufficientEvents { needed: 100, got: runs.len() });
    }
    let m = params.m_k as usize;
    let mut bar_histogram = vec![0u64; m + 1];
    let mut del_histogram = vec![0u64; m + 1];
    let few = params.gamma * T::from_i64(params.big_m as i64) / T::from_i64(20);
    let mut hits = 0u64;
    let mut count_violations = 0u64;
    let mut record_violations = 0u64;
    for run in runs {
        let (b, d) = (run.bar_count(), run.del_count());
        bar_histogram[b as usize] += 1;
        del_histogram[d as usize] += 1;
        hits += (run.g_flag && T::from_i64(d as i64) < few) as u64;
        count_violations += (d < run.forced_count()) as u64;
        record_violations += run.records.iter().filter(|r| r.g_flag && r.bar && !r.cross && !r.del).count() as u64;
    }
    let n = runs.len() as f64;
    let mean = |h: &[u64]| h.iter().enumerate().map(|(c, k)| c as f64 * *k as f64).sum::<f64>() / n;
    Ok(DelayReport {
        replicas: runs.len() as u64,
        mean_bar: mean(&bar_histogram),
        mean_del: mean(&del_histogram),
        bar_histogram,
        del_histogram,
        g_and_few_delays: EstimateWithCI::new(hits, runs.len() as u64, walk.key),
        count_violations,
        record_violations,
    })
}
