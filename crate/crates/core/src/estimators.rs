//! Speed events `A_{H,w}(v)`, `Ã_{H,w}(v)` and Monte Carlo estimates of
//! their probabilities.
//!
//! Replica `r` of every estimate uses the key `walk.key.with_replica(r)`, so
//! all `(H, v)` cells of a table are evaluated on common random numbers.

use num_traits::Float;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{interval_points, RealAnchor};
use crate::rng::SeedKey;
use crate::scalar::Scalar;
use crate::stats::{fit_line, Wilson, CONFIDENCE};
use crate::walker::{evolve_front, FrontOptions, Trajectory, Walk};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Side {
    /// Some walker has `V ≥ v`.
    AtLeast,
    /// Some walker has `V ≤ v`.
    AtMost,
}

impl Side {
    pub fn as_str(&self) -> &'static str {
        match self {
            Side::AtLeast => "at-least",
            Side::AtMost => "at-most",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpeedEvent<T> {
    pub w: RealAnchor<T>,
    pub h: u64,
    pub v: T,
    pub side: Side,
}

impl<T: Scalar> SpeedEvent<T> {
    pub fn new(w: RealAnchor<T>, h: u64, v: T, side: Side) -> Self {
        SpeedEvent { w, h, v, side }
    }

    pub fn at_least(h: u64, v: T) -> Self {
        Self::new(RealAnchor::origin(), h, v, Side::AtLeast)
    }

    pub fn at_most(h: u64, v: T) -> Self {
        Self::new(RealAnchor::origin(), h, v, Side::AtMost)
    }

    /// Whether a walker with displacement `d` over `H` steps realizes the
    /// event's speed condition; compared exactly as `d ≥ v·H` / `d ≤ v·H`.
    pub fn accepts(&self, d: i64) -> bool {
        let lhs = T::from_i64(d);
        let rhs = self.v * T::from_i64(self.h as i64);
        match self.side {
            Side::AtLeast => lhs >= rhs,
            Side::AtMost => lhs <= rhs,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EstimateWithCI {
    pub p_hat: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub ci_half_width: f64,
    pub successes: u64,
    pub replicas: u64,
    pub seed: SeedKey,
}

impl EstimateWithCI {
    pub fn new(successes: u64, replicas: u64, seed: SeedKey) -> Self {
        let w = Wilson::<f64>::new(successes, replicas, CONFIDENCE);
        EstimateWithCI {
            p_hat: w.p_hat,
            ci_lo: w.lo,
            ci_hi: w.hi,
            ci_half_width: w.half_width(),
            successes,
            replicas,
            seed,
        }
    }
}

/// `V_H^y = (X_H − X_0) / H`.
pub fn average_speed<T: Scalar>(traj: &Trajectory, h: u64) -> Result<T> {
    let needed = h as usize + 1;
    if h == 0 || traj.positions.len() < needed {
        return Err(Error::ShortTrajectory { len: traj.positions.len(), needed });
    }
    Ok(T::from_i64(traj.positions[h as usize] - traj.positions[0]) / T::from_i64(h as i64))
}

/// Smallest and largest displacement over `H` steps among the walkers
/// started in `I_H(w)`.
pub fn displacement_range<P: Float, T: Scalar>(walk: &Walk<P>, w: &RealAnchor<T>, h: u64) -> Result<(i64, i64)> {
    let starts = interval_points(w, T::from_i64(h as i64));
    let run = evolve_front(walk, &starts, h, FrontOptions::default())?;
    let d = (0..starts.len()).map(|i| run.displacement(i));
    let lo = d.clone().min().unwrap();
    let hi = d.max().unwrap();
    Ok((lo, hi))
}

fn accepts_range<T: Scalar>(ev: &SpeedEvent<T>, (lo, hi): (i64, i64)) -> bool {
    match ev.side {
        Side::AtLeast => ev.accepts(hi),
        Side::AtMost => ev.accepts(lo),
    }
}

/// Indicator of the event on the walk's realization.
pub fn event_indicator<P: Float, T: Scalar>(walk: &Walk<P>, ev: &SpeedEvent<T>) -> Result<bool> {
    Ok(accepts_range(ev, displacement_range(walk, &ev.w, ev.h)?))
}

fn check_replicas(replicas: u64) -> Result<()> {
    if replicas < 100 {
        return Err(Error::InvalidParams(format!("need at least 100 replicas, got {replicas}")));
    }
    Ok(())
}

/// Monte Carlo estimate of `P(event)` over replicas `0..replicas`.
pub fn estimate_p<P: Float + Send + Sync, T: Scalar>(walk: &Walk<P>, ev: &SpeedEvent<T>, replicas: u64) -> Result<EstimateWithCI> {
    check_replicas(replicas)?;
    let hits: Vec<bool> = (0..replicas)
        .into_par_iter()
        .map(|r| event_indicator(&walk.with_replica(r), ev))
        .collect::<Result<_>>()?;
    Ok(EstimateWithCI::new(hits.iter().filter(|&&b| b).count() as u64, replicas, walk.key))
}

/// One cell of a speed table.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TableRow<T> {
    pub h: u64,
    pub v: T,
    pub side: Side,
    pub estimate: EstimateWithCI,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeedBracket<T> {
    pub v_minus_hat: T,
    pub v_plus_hat: T,
    pub h_list: Vec<u64>,
    pub threshold: f64,
    pub table: Vec<TableRow<T>>,
}

pub const DEFAULT_THRESHOLD: f64 = 0.05;

fn check_grid<T: Scalar>(h_list: &[u64], v_grid: &[T]) -> Result<()> {
    if h_list.is_empty() || v_grid.is_empty() {
        return Err(Error::DegenerateGrid("empty H list or v grid".into()));
    }
    if h_list[0] == 0 || h_list.windows(2).any(|w| w[0] >= w[1]) {
        return Err(Error::DegenerateGrid("H list must be positive and strictly increasing".into()));
    }
    if v_grid.windows(2).any(|w| !(w[0] < w[1])) {
        return Err(Error::DegenerateGrid("v grid must be strictly increasing".into()));
    }
    Ok(())
}

/// Table of `p̂_H(v)` and `p̃̂_H(v)` over `H_list × v_grid` from the origin.
pub fn speed_table<P: Float + Send + Sync, T: Scalar>(
    walk: &Walk<P>,
    h_list: &[u64],
    v_grid: &[T],
    replicas: u64,
) -> Result<Vec<TableRow<T>>> {
    check_grid(h_list, v_grid)?;
    check_replicas(replicas)?;
    let o = RealAnchor::<T>::origin();
    let ranges: Vec<Vec<(i64, i64)>> = (0..replicas)
        .into_par_iter()
        .map(|r| {
            let wr = walk.with_replica(r);
            h_list.iter().map(|&h| displacement_range(&wr, &o, h)).collect::<Result<Vec<_>>>()
        })
        .collect::<Result<_>>()?;
    let mut table = Vec::with_capacity(h_list.len() * v_grid.len() * 2);
    for (hi, &h) in h_list.iter().enumerate() {
        for side in [Side::AtLeast, Side::AtMost] {
            for &v in v_grid {
                let ev = SpeedEvent::new(o, h, v, side);
                let hits = ranges.iter().filter(|rs| accepts_range(&ev, rs[hi])).count() as u64;
                table.push(TableRow { h, v, side, estimate: EstimateWithCI::new(hits, replicas, walk.key) });
            }
        }
    }
    Ok(table)
}

/// Threshold-crossing brackets for `v_±` at the largest `H`, clamped to
/// `[-R, R]`.
pub fn speed_bracket<P: Float + Send + Sync, T: Scalar>(
    walk: &Walk<P>,
    h_list: &[u64],
    v_grid: &[T],
    threshold: f64,
    replicas: u64,
) -> Result<SpeedBracket<T>> {
    if !(threshold > 0.0 && threshold < 0.5) {
        return Err(Error::InvalidParams(format!("threshold must lie in (0, 0.5), got {threshold}")));
    }
    let table = speed_table(walk, h_list, v_grid, replicas)?;
    let h_max = *h_list.last().unwrap();
    let r = T::from_i64(walk.range());
    let clamp = |v: T| if v > r { r } else if v < -r { -r } else { v };
    let at_top = |side: Side| table.iter().filter(move |row| row.h == h_max && row.side == side);
    let v_plus_hat = at_top(Side::AtLeast).find(|row| row.estimate.p_hat < threshold).map_or(r, |row| clamp(row.v));
    let v_minus_hat = at_top(Side::AtMost)
        .filter(|row| row.estimate.p_hat < threshold)
        .last()
        .map_or(-r, |row| clamp(row.v));
    Ok(SpeedBracket { v_minus_hat, v_plus_hat, h_list: h_list.to_vec(), threshold, table })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecayFit {
    /// Slope of `log p̂_H` against `log H`.
    pub slope: f64,
    pub intercept: f64,
    pub slope_se: f64,
    /// Scales entering the fit.
    pub scales: Vec<u64>,
    /// Scales with `p̂_H = 0`, left out of the fit.
    pub zero_scales: Vec<u64>,
    /// Whether the fitted `p̂_H` fail to decrease strictly along `H`.
    pub non_decreasing: bool,
}

/// Log-log least squares of `p̂_H(v)` (side [`Side::AtLeast`]) over the
/// scales with a nonzero estimate.
pub fn decay_fit<T: Scalar>(table: &[TableRow<T>], v: T) -> Result<DecayFit> {
    let mut rows: Vec<&TableRow<T>> = table.iter().filter(|r| r.side == Side::AtLeast && r.v == v).collect();
    rows.sort_by_key(|r| r.h);
    let zero_scales: Vec<u64> = rows.iter().filter(|r| r.estimate.successes == 0).map(|r| r.h).collect();
    let used: Vec<&&TableRow<T>> = rows.iter().filter(|r| r.estimate.successes > 0).collect();
    if used.len() < 3 {
        return Err(Error::BelowResolution(format!(
            "{} scale(s) with nonzero estimate at v = {:?}, need 3 (zero at H = {:?})",
            used.len(),
            v,
            zero_scales
        )));
    }
    let xs: Vec<f64> = used.iter().map(|r| (r.h as f64).ln()).collect();
    let ys: Vec<f64> = used.iter().map(|r| r.estimate.p_hat.ln()).collect();
    let fit = fit_line(&xs, &ys);
    let non_decreasing = used.windows(2).any(|w| w[1].estimate.p_hat >= w[0].estimate.p_hat);
    Ok(DecayFit {
        slope: fit.slope,
        intercept: fit.intercept,
        slope_se: fit.slope_se,
        scales: used.iter().map(|r| r.h).collect(),
        zero_scales,
        non_decreasing,
    })
}

/// Evaluates `1_{A_{H,w}(v)}` separately for every `v` of the grid on one
/// realization and reports whether the indicators are non-increasing.
pub fn monotonicity_check<P: Float, T: Scalar>(walk: &Walk<P>, w: &RealAnchor<T>, h: u64, v_grid: &[T]) -> Result<bool> {
    let mut sorted = v_grid.to_vec();
    sorted.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let flags = sorted
        .iter()
        .map(|&v| event_indicator(walk, &SpeedEvent::new(*w, h, v, Side::AtLeast)))
        .collect::<Result<Vec<_>>>()?;
    Ok(flags.windows(2).all(|f| f[0] >= f[1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::environment::EnvironmentSpec;
    use crate::kernel::JumpKernel;
    use crate::rng::{SpaceTimePoint, Stream};
    use crate::scalar::Rational;
    use crate::walker::{evolve_discrete, run_walker};
    use num_rational::Ratio;

    fn q(n: i64, d: i64) -> Rational {
        Ratio::new(n, d)
    }

    fn walk(kernel: JumpKernel<f64>, seed: u64) -> Walk<f64> {
        Walk::new(&EnvironmentSpec::two_state_flip(0.3), kernel, SeedKey::new(seed, Stream::JumpField)).unwrap()
    }

    fn env_kernel() -> JumpKernel<f64> {
        let rows = (0..8).map(|i| if i & 2 == 0 { vec![0.5, 0.3, 0.2] } else { vec![0.2, 0.3, 0.5] }).collect();
        JumpKernel::new(1, 1, 0.2, 2, crate::kernel::KernelTable::PerWord(rows)).unwrap()
    }

    #[test]
    fn average_speed_arithmetic() {
        let t = Trajectory { start: SpaceTimePoint::ORIGIN, positions: (0..=10).map(|i| i / 2).collect() };
        assert_eq!(average_speed::<Rational>(&t, 10).unwrap(), q(1, 2));
        assert!(matches!(average_speed::<f64>(&t, 11), Err(Error::ShortTrajectory { len: 11, needed: 12 })));
        let w = walk(JumpKernel::point_mass(1, 1), 1);
        let t = run_walker(&mut w.stepper(), SpaceTimePoint::ORIGIN, 20);
        assert_eq!(average_speed::<f64>(&t, 20).unwrap(), 1.0);
    }

    #[test]
    fn speeds_are_bounded_by_range() {
        let w = walk(JumpKernel::uniform(2), 9);
        for r in 0..10_000 {
            let t = run_walker(&mut w.with_replica(r).stepper(), SpaceTimePoint::ORIGIN, 8);
            assert!(average_speed::<f64>(&t, 8).unwrap().abs() <= 2.0);
        }
    }

    #[test]
    fn boundary_events() {
        let w = walk(env_kernel(), 3);
        let sure = SpeedEvent::at_least(16, q(-2, 1));
        let null = SpeedEvent::at_least(16, q(2, 1));
        assert_eq!(estimate_p(&w, &sure, 100).unwrap().p_hat, 1.0);
        assert_eq!(estimate_p(&w, &null, 100).unwrap().p_hat, 0.0);
        assert!(estimate_p(&w, &sure, 99).is_err());
    }

    #[test]
    fn indicator_matches_brute_force() {
        for seed in 0..30 {
            let w = walk(env_kernel(), seed);
            let starts: Vec<_> = (0..4).map(|x| SpaceTimePoint::new(x, 0)).collect();
            let naive = evolve_discrete(&w, &starts, 4).unwrap();
            let best = naive.values().map(|t| average_speed::<Rational>(t, 4).unwrap()).max().unwrap();
            let worst = naive.values().map(|t| average_speed::<Rational>(t, 4).unwrap()).min().unwrap();
            for num in -5..=5 {
                let v = q(num, 4);
                assert_eq!(event_indicator(&w, &SpeedEvent::at_least(4, v)).unwrap(), best >= v);
                assert_eq!(event_indicator(&w, &SpeedEvent::at_most(4, v)).unwrap(), worst <= v);
            }
        }
    }

    #[test]
    fn drift_kernel_is_likely_faster_than_mean_minus_margin() {
        // mean 0.2; a single walker has V_64 >= -0.1 with probability > 0.99
        let k = JumpKernel::word_independent(1, 0.1, vec![0.1, 0.6, 0.3]).unwrap();
        let est = estimate_p(&walk(k, 4), &SpeedEvent::at_least(64, q(-1, 10)), 200).unwrap();
        assert!(est.p_hat >= 0.95);
    }

    #[test]
    fn point_mass_brackets() {
        let grid: Vec<Rational> = (-12..=12).map(|i| q(i, 10)).collect();
        let b = speed_bracket(&walk(JumpKernel::point_mass(1, 1), 5), &[8, 16], &grid, 0.05, 100).unwrap();
        assert_eq!(b.v_plus_hat, q(1, 1));
        assert_eq!(b.v_minus_hat, q(9, 10));
        assert!(speed_bracket(&walk(JumpKernel::point_mass(1, 1), 5), &[16, 8], &grid, 0.05, 100).is_err());
        assert!(speed_bracket(&walk(JumpKernel::point_mass(1, 1), 5), &[8], &grid, 0.5, 100).is_err());
    }

    #[test]
    fn synthetic_decay_fits() {
        let key = SeedKey::new(0, Stream::JumpField);
        let make = |p: &dyn Fn(f64) -> f64| -> Vec<TableRow<Rational>> {
            [64u64, 128, 256, 512]
                .iter()
                .map(|&h| {
                    let mut est = EstimateWithCI::new(1, 1, key);
                    est.p_hat = p(h as f64);
                    TableRow { h, v: q(1, 2), side: Side::AtLeast, estimate: est }
                })
                .collect()
        };
        let fit = decay_fit(&make(&|h| h.powi(-2)), q(1, 2)).unwrap();
        assert!((fit.slope + 2.0).abs() < 1e-6);
        assert!(!fit.non_decreasing);
        let flat = decay_fit(&make(&|_| 0.3), q(1, 2)).unwrap();
        assert!(flat.slope.abs() < 1e-12);
        assert!(flat.non_decreasing);
        let mut zeros = make(&|_| 0.0);
        zeros.iter_mut().for_each(|r| r.estimate.successes = 0);
        assert!(matches!(decay_fit(&zeros, q(1, 2)), Err(Error::BelowResolution(_))));
    }

    #[test]
    fn monotone_on_shared_realization() {
        let grid: Vec<Rational> = (0..11).map(|i| q(i - 5, 5)).collect();
        for seed in 0..50 {
            assert!(monotonicity_check(&walk(env_kernel(), seed), &RealAnchor::origin(), 16, &grid).unwrap());
        }
        assert!(monotonicity_check(&walk(env_kernel(), 1), &RealAnchor::origin(), 16, &[q(0, 1)]).unwrap());
    }
}
