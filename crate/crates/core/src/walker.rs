//! Coupled evolution of walkers over a shared environment and jump field.
//!
//! All walkers of one [`Walk`] read the same `η` and the same uniforms
//! `U_n^x`, so two walkers that meet at a space-time point move together
//! from then on.

use std::collections::{BTreeMap, HashMap};

use num_traits::Float;

use crate::environment::{CompiledEnv, EnvReader, EnvironmentSpec, StateField};
use crate::error::{Error, Result};
use crate::kernel::JumpKernel;
use crate::rng::{poisson_times, FieldHasher, SeedKey, SpaceTimePoint, Stream};

/// An environment law, a kernel and a realization key.
#[derive(Debug, Clone)]
pub struct Walk<P> {
    pub spec: EnvironmentSpec,
    pub env: CompiledEnv,
    pub kernel: JumpKernel<P>,
    pub key: SeedKey,
}

impl<P: Float> Walk<P> {
    pub fn new(spec: &EnvironmentSpec, kernel: JumpKernel<P>, key: SeedKey) -> Result<Self> {
        let env = spec.compile()?;
        if !kernel.is_word_independent() && kernel.states != env.state_count() {
            return Err(Error::InvalidKernel(format!(
                "kernel alphabet has {} states, environment has {}",
                kernel.states,
                env.state_count()
            )));
        }
        Ok(Walk { spec: spec.clone(), env, kernel, key })
    }

    /// Same law and kernel, different realization.
    pub fn with_key(&self, key: SeedKey) -> Self {
        Walk { key, ..self.clone() }
    }

    pub fn with_replica(&self, replica: u64) -> Self {
        self.with_key(self.key.with_replica(replica))
    }

    pub fn range(&self) -> i64 {
        self.kernel.range
    }

    /// The mirrored system; see [`mirror`].
    pub fn mirror(&self) -> Self {
        let (spec, kernel, key) = mirror(&self.spec, &self.kernel, &self.key);
        Walk::new(&spec, kernel, key).expect("mirror preserves validity")
    }

    pub fn stepper(&self) -> Stepper<'_, P, EnvReader<'_>> {
        Stepper::new(&self.kernel, self.env.reader(&self.key), &self.key)
    }
}

/// Reads `U_n^x` for one key, honouring the key's reflection flag.
#[derive(Debug, Clone, Copy)]
struct JumpUniforms {
    h: FieldHasher,
    reflected: bool,
}

impl JumpUniforms {
    fn new(key: &SeedKey) -> Self {
        JumpUniforms { h: key.with_stream(Stream::JumpField).hasher(0), reflected: key.reflected }
    }

    #[inline]
    fn at(&self, x: i64, n: u64) -> f64 {
        self.h.uniform(if self.reflected { -x } else { x }, n)
    }
}

/// One-step transition `x -> x + g(η_n(x-ℓ..x+ℓ), U_n^x)` over a state field.
pub struct Stepper<'k, P, F> {
    kernel: &'k JumpKernel<P>,
    field: F,
    u: JumpUniforms,
}

impl<'k, P: Float, F: StateField> Stepper<'k, P, F> {
    pub fn new(kernel: &'k JumpKernel<P>, field: F, key: &SeedKey) -> Self {
        Stepper { kernel, field, u: JumpUniforms::new(key) }
    }

    #[inline]
    pub fn word_index(&mut self, x: i64, n: u64) -> usize {
        if self.kernel.is_word_independent() {
            return 0;
        }
        let ell = self.kernel.ell as i64;
        let s = self.kernel.states;
        (x - ell..=x + ell).fold(0usize, |acc, site| acc * s + self.field.state(site, n) as usize)
    }

    #[inline]
    pub fn step(&mut self, x: i64, n: u64) -> i64 {
        let idx = self.word_index(x, n);
        let u = P::from(self.u.at(x, n)).unwrap();
        x + self.kernel.jump_indexed(idx, u)
    }

    pub fn kernel(&self) -> &'k JumpKernel<P> {
        self.kernel
    }

    pub fn into_field(self) -> F {
        self.field
    }
}

/// Positions `X^y_0..X^y_H` of one walker.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Trajectory {
    pub start: SpaceTimePoint,
    pub positions: Vec<i64>,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn last(&self) -> i64 {
        *self.positions.last().expect("trajectory holds its start")
    }

    /// Space-time point at step `i`.
    pub fn point(&self, i: usize) -> SpaceTimePoint {
        SpaceTimePoint::new(self.positions[i], self.start.n + i as u64)
    }
}

/// Runs a single walker for `horizon` steps on any state field.
pub fn run_walker<P: Float, F: StateField>(stepper: &mut Stepper<'_, P, F>, start: SpaceTimePoint, horizon: u64) -> Trajectory {
    let mut positions = Vec::with_capacity(horizon as usize + 1);
    let mut x = start.x;
    positions.push(x);
    for i in 0..horizon {
        x = stepper.step(x, start.n + i);
        positions.push(x);
    }
    Trajectory { start, positions }
}

/// Each start evolved independently (walker by walker) for `horizon` steps
/// from its own start time.
pub fn evolve_discrete<P: Float>(
    walk: &Walk<P>,
    starts: &[SpaceTimePoint],
    horizon: u64,
) -> Result<BTreeMap<SpaceTimePoint, Trajectory>> {
    if horizon < 1 {
        return Err(Error::InvalidParams("horizon must be at least 1".into()));
    }
    let mut stepper = walk.stepper();
    Ok(starts.iter().map(|&y| (y, run_walker(&mut stepper, y, horizon))).collect())
}

/// Distinct occupied sites at one time, each with the indices of the start
/// points located there. Sites are strictly increasing.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoupledFront {
    pub time: u64,
    pub occupied: Vec<(i64, Vec<usize>)>,
}

impl CoupledFront {
    pub fn sites(&self) -> Vec<i64> {
        self.occupied.iter().map(|(x, _)| *x).collect()
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct FrontOptions {
    /// Keep the occupied site set after every step.
    pub history: bool,
    /// Keep every walker's full path.
    pub trajectories: bool,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct FrontRun {
    pub starts: Vec<SpaceTimePoint>,
    /// Final position of every start, in start order.
    pub finals: Vec<i64>,
    pub front: CoupledFront,
    /// `history[t]` is the occupied site set after `t` steps.
    pub history: Option<Vec<Vec<i64>>>,
    pub trajectories: Option<Vec<Trajectory>>,
}

impl FrontRun {
    pub fn displacement(&self, i: usize) -> i64 {
        self.finals[i] - self.starts[i].x
    }
}

/// Evolves all walkers started at the points of `interval` (a common time)
/// by moving only the distinct occupied sites.
pub fn evolve_front<P: Float>(
    walk: &Walk<P>,
    interval: &[SpaceTimePoint],
    horizon: u64,
    opts: FrontOptions,
) -> Result<FrontRun> {
    let mut stepper = walk.stepper();
    evolve_front_with(&mut stepper, interval, horizon, opts)
}

/// [`evolve_front`] on a caller-supplied stepper (shares its cache).
pub fn evolve_front_with<P: Float, F: StateField>(
    stepper: &mut Stepper<'_, P, F>,
    interval: &[SpaceTimePoint],
    horizon: u64,
    opts: FrontOptions,
) -> Result<FrontRun> {
    let first = interval.first().ok_or(Error::EmptyInterval)?;
    let t0 = first.n;
    if interval.iter().any(|p| p.n != t0) {
        return Err(Error::InvalidParams("front starts must share one time".into()));
    }
    let mut clusters: Vec<(i64, Vec<usize>)> = Vec::new();
    let mut order: Vec<usize> = (0..interval.len()).collect();
    order.sort_by_key(|&i| interval[i].x);
    for i in order {
        match clusters.last_mut() {
            Some((x, m)) if *x == interval[i].x => m.push(i),
            _ => clusters.push((interval[i].x, vec![i])),
        }
    }
    let mut history = opts.history.then(|| vec![clusters.iter().map(|c| c.0).collect::<Vec<_>>()]);
    let mut paths: Option<Vec<Vec<i64>>> = opts.trajectories.then(|| {
        interval
            .iter()
            .map(|p| {
                let mut v = Vec::with_capacity(horizon as usize + 1);
                v.push(p.x);
                v
            })
            .collect()
    });
    for t in 0..horizon {
        let n = t0 + t;
        for c in clusters.iter_mut() {
            c.0 = stepper.step(c.0, n);
        }
        clusters.sort_by_key(|c| c.0);
        let mut merged: Vec<(i64, Vec<usize>)> = Vec::with_capacity(clusters.len());
        for (x, mut m) in clusters.drain(..) {
            match merged.last_mut() {
                Some((lx, lm)) if *lx == x => {
                    if lm.len() < m.len() {
                        std::mem::swap(lm, &mut m);
                    }
                    lm.extend(m);
                }
                _ => merged.push((x, m)),
            }
        }
        clusters = merged;
        if let Some(h) = history.as_mut() {
            h.push(clusters.iter().map(|c| c.0).collect());
        }
        if let Some(p) = paths.as_mut() {
            for (x, m) in &clusters {
                for &i in m {
                    p[i].push(*x);
                }
            }
        }
    }
    let mut finals = vec![0i64; interval.len()];
    for (x, m) in clusters.iter_mut() {
        m.sort_unstable();
        for &i in m.iter() {
            finals[i] = *x;
        }
    }
    let trajectories = paths.map(|ps| {
        ps.into_iter()
            .zip(interval)
            .map(|(positions, &start)| Trajectory { start, positions })
            .collect()
    });
    Ok(FrontRun {
        starts: interval.to_vec(),
        finals,
        front: CoupledFront { time: t0 + horizon, occupied: clusters },
        history,
        trajectories,
    })
}

/// Continuous-time walk sampled at its jump times.
#[derive(Debug, Clone, PartialEq)]
pub struct ContinuousRun {
    pub key: SeedKey,
    pub start: i64,
    /// `T_1 < T_2 < …` on `(0, horizon]`.
    pub jump_times: Vec<f64>,
    /// `X_{T_0}, X_{T_1}, …` with `T_0 = 0`; values are post-jump.
    pub skeleton_positions: Vec<i64>,
    pub horizon: f64,
}

impl ContinuousRun {
    /// `X_t`, right-continuous.
    pub fn position_at(&self, t: f64) -> i64 {
        let jumps = self.jump_times.partition_point(|&s| s <= t);
        self.skeleton_positions[jumps]
    }

    pub fn jump_count(&self) -> usize {
        self.jump_times.len()
    }
}

/// Environment time index seen at real time `t`: the discrete model is held
/// constant on `[n, n+1)`.
#[inline]
pub fn env_time(t: f64) -> u64 {
    t.floor() as u64
}

/// Continuous-time walk from `start` at time 0 up to `horizon`. The `n`-th
/// jump (at `T_n`) reads `η_{T_n}` around `X_{T_n-}` and uses
/// `U_{n-1}^{X_{T_n-}}`.
pub fn evolve_continuous<P: Float>(walk: &Walk<P>, start: i64, horizon: f64) -> Result<ContinuousRun> {
    let jump_times = poisson_times(&walk.key.with_stream(Stream::PoissonClock), horizon)?;
    let mut reader = walk.env.reader(&walk.key);
    let u = JumpUniforms::new(&walk.key);
    let k = &walk.kernel;
    let ell = k.ell as i64;
    let mut x = start;
    let mut skeleton_positions = Vec::with_capacity(jump_times.len() + 1);
    skeleton_positions.push(x);
    for (i, &t) in jump_times.iter().enumerate() {
        let idx = if k.is_word_independent() {
            0
        } else {
            let m = env_time(t);
            (x - ell..=x + ell).fold(0usize, |acc, s| acc * k.states + reader.state(s, m) as usize)
        };
        x += k.jump_indexed(idx, P::from(u.at(x, i as u64)).unwrap());
        skeleton_positions.push(x);
    }
    Ok(ContinuousRun { key: walk.key, start, jump_times, skeleton_positions, horizon })
}

/// One environment read made by the skeleton walk.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EnvAccess {
    pub x: i64,
    /// Skeleton time `n`.
    pub n: u64,
    /// Real time `T_{n+1}` at which `η` was read.
    pub t: f64,
    pub state: u8,
}

/// `η̃_n(x) = η_{T_{n+1}}(x)`, logging every read.
pub struct TimeChangedField<'a, F> {
    inner: F,
    times: &'a [f64],
    pub log: Vec<EnvAccess>,
}

impl<'a, F: StateField> TimeChangedField<'a, F> {
    pub fn new(inner: F, times: &'a [f64]) -> Self {
        TimeChangedField { inner, times, log: Vec::new() }
    }
}

impl<F: StateField> StateField for TimeChangedField<'_, F> {
    fn state_count(&self) -> usize {
        self.inner.state_count()
    }

    fn state(&mut self, x: i64, n: u64) -> u8 {
        let t = self.times[n as usize];
        let state = self.inner.state(x, env_time(t));
        self.log.push(EnvAccess { x, n, t, state });
        state
    }
}

/// A state field that only knows logged cells; reading any other cell is a
/// logic error and panics.
#[derive(Debug, Clone)]
pub struct ReplayField {
    states: usize,
    cells: HashMap<(i64, u64), u8>,
}

impl ReplayField {
    pub fn from_log(states: usize, log: &[EnvAccess]) -> Self {
        ReplayField { states, cells: log.iter().map(|a| ((a.x, a.n), a.state)).collect() }
    }
}

impl StateField for ReplayField {
    fn state_count(&self) -> usize {
        self.states
    }

    fn state(&mut self, x: i64, n: u64) -> u8 {
        *self.cells.get(&(x, n)).unwrap_or_else(|| panic!("cell ({x}, {n}) was never logged"))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Skeleton {
    /// `X̃_0..X̃_N`.
    pub positions: Vec<i64>,
    pub log: Vec<EnvAccess>,
}

/// Discrete walk driven by `η̃` and the same `U` field, checked against the
/// run's positions at its jump times.
pub fn skeleton<P: Float>(run: &ContinuousRun, walk: &Walk<P>) -> Result<Skeleton> {
    if run.key != walk.key {
        return Err(Error::SkeletonMismatch("run was produced with a different key".into()));
    }
    let times = poisson_times(&walk.key.with_stream(Stream::PoissonClock), run.horizon)?;
    if times != run.jump_times {
        return Err(Error::SkeletonMismatch("jump times do not match the key's Poisson clock".into()));
    }
    let field = TimeChangedField::new(walk.env.reader(&walk.key), &times);
    let mut stepper = Stepper::new(&walk.kernel, field, &walk.key);
    let traj = run_walker(&mut stepper, SpaceTimePoint::new(run.start, 0), times.len() as u64);
    let log = stepper.into_field().log;
    if let Some(n) = (0..traj.positions.len()).find(|&n| traj.positions[n] != run.skeleton_positions[n]) {
        return Err(Error::SkeletonMismatch(format!(
            "X~_{n} = {} but X at T_{n} = {}",
            traj.positions[n], run.skeleton_positions[n]
        )));
    }
    Ok(Skeleton { positions: traj.positions, log })
}

/// The mirrored system `(η̄, -g, Ū)` with `η̄_n(x) = η_n(-x)` and
/// `Ū_n^x = U_n^{-x}`. The walk from `(-x, n)` in the mirrored system is
/// the pointwise negation of the walk from `(x, n)`.
pub fn mirror<P: Float>(spec: &EnvironmentSpec, k: &JumpKernel<P>, key: &SeedKey) -> (EnvironmentSpec, JumpKernel<P>, SeedKey) {
    (spec.reflect(), k.mirror(), key.reflected())
}
