//! Config validation and resolution into typed simulation inputs.

use std::fmt;

use rwre_core::environment::{EnvModel, Predicate};
use rwre_core::geometry::{ladder, rounding_grid, RealAnchor, ScaleLadder};
use rwre_core::kernel::KernelTable;
use rwre_core::scalar::Scalar;
use rwre_core::traps::TrapParams;
use rwre_core::{
    validate_kernel, Anchor, EnvironmentSpec, Kernel, Params, Rational, SeedKey, SpaceTimePoint, Stream, System,
};
use serde::Serialize;

use crate::config::{ExperimentConfig, Kind};

/// Proof-regime base scale.
pub const PROOF_L0: f64 = 1e10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum Severity {
    Error,
    Warning,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct Finding {
    pub severity: Severity,
    pub field: String,
    pub message: String,
}

impl fmt::Display for Finding {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = match self.severity {
            Severity::Error => "error",
            Severity::Warning => "warning",
        };
        write!(f, "{tag}: {}: {}", self.field, self.message)
    }
}

#[derive(Debug, Clone)]
pub struct DecouplingPlan {
    pub h_list: Vec<u64>,
    pub width: i64,
    pub height: u64,
    pub predicate: Predicate,
}

/// A validated experiment.
#[derive(Debug, Clone)]
pub struct Plan {
    pub kind: Kind,
    pub seed: u64,
    pub replicas: u64,
    pub env: Option<EnvironmentSpec>,
    pub walk: Option<System>,
    pub h_list: Vec<u64>,
    pub v_grid: Vec<Rational>,
    pub threshold: f64,
    pub decay_v: Option<Rational>,
    pub params: Option<Params>,
    pub anchor: Anchor,
    pub start: SpaceTimePoint,
    pub horizon: f64,
    pub decoupling: Option<DecouplingPlan>,
    pub gamma_n: Vec<u64>,
    pub gamma_eps: f64,
    pub deviations: Vec<String>,
    pub warnings: Vec<Finding>,
}

struct Collector {
    findings: Vec<Finding>,
}

impl Collector {
    fn error(&mut self, field: &str, message: impl Into<String>) {
        self.findings.push(Finding { severity: Severity::Error, field: field.into(), message: message.into() });
    }

    fn warn(&mut self, field: &str, message: impl Into<String>) {
        self.findings.push(Finding { severity: Severity::Warning, field: field.into(), message: message.into() });
    }

    fn require<T: Clone>(&mut self, field: &str, v: &Option<T>) -> Option<T> {
        if v.is_none() {
            self.error(field, "required field is missing");
        }
        v.clone()
    }

    fn has_errors(&self) -> bool {
        self.findings.iter().any(|f| f.severity == Severity::Error)
    }
}

/// All findings for `cfg`. `kind` overrides `experiment_cli.kind`; a `seed`
/// override satisfies `rng_field.seed`.
pub fn validate(cfg: &ExperimentConfig, kind: Option<Kind>, seed: Option<u64>) -> Vec<Finding> {
    match plan(cfg, kind, seed) {
        Ok(p) => p.warnings,
        Err(f) => f,
    }
}

/// Resolve a config into a [`Plan`], or return every finding if any is an
/// error.
pub fn plan(cfg: &ExperimentConfig, kind: Option<Kind>, seed: Option<u64>) -> Result<Plan, Vec<Finding>> {
    let mut c = Collector { findings: Vec::new() };
    let cli = &cfg.experiment_cli;
    let kind = match (kind, cli.kind) {
        (Some(a), Some(b)) if a != b => {
            c.error("experiment_cli.kind", format!("config says `{b}` but `{a}` was requested"));
            Some(a)
        }
        (Some(a), _) => Some(a),
        (None, b) => c.require("experiment_cli.kind", &b),
    };
    let seed = seed.or(cfg.rng_field.seed);
    if seed.is_none() {
        c.error("rng_field.seed", "required field is missing (or pass --seed)");
    }
    let replicas = c.require("experiment_cli.replicas", &cli.replicas);
    if let (Some(r), Some(k)) = (replicas, kind) {
        let min = if k == Kind::SkeletonCheck { 1 } else { 100 };
        if r < min {
            c.error("experiment_cli.replicas", format!("need at least {min} replicas, got {r}"));
        }
    }

    let mut deviations = Vec::new();
    let wants = |f: fn(Kind) -> bool| kind.map(f).unwrap_or(true);

    let env = if wants(Kind::needs_environment) { environment(cfg, &mut c, &mut deviations) } else { None };
    let kernel = if wants(Kind::needs_walk) { kernel(cfg, env.as_ref(), &mut c) } else { None };
    let walk = match (&env, kernel, seed) {
        (Some(e), Some(k), Some(s)) => match System::new(e, k, SeedKey::new(s, Stream::JumpField)) {
            Ok(w) => Some(w),
            Err(e) => {
                c.error("walker", e.to_string());
                None
            }
        },
        _ => None,
    };
    let range = cfg.walker.range.unwrap_or(1).max(1);

    let ladder_cfg = ladder_of(cfg, &mut c, &mut deviations);

    let (mut h_list, mut v_grid, mut threshold, mut decay_v) = (Vec::new(), Vec::new(), 0.05, None);
    if wants(Kind::needs_speeds) {
        h_list = scales(cfg, &mut c);
        v_grid = speed_grid(cfg, &mut c);
        threshold = cfg.estimators.threshold.unwrap_or(0.05);
        if !(threshold > 0.0 && threshold < 0.5) {
            c.error("estimators.threshold", format!("must lie in (0, 1/2), got {threshold}"));
        }
        if kind == Some(Kind::DecayFit) {
            decay_v = c.require("estimators.v", &cfg.estimators.v).map(Rational::from_f64);
            if let Some(v) = decay_v {
                if !v_grid.contains(&v) {
                    v_grid.push(v);
                    v_grid.sort();
                }
            }
            if h_list.len() < 3 && !h_list.is_empty() {
                c.error("geometry_scales.h_list", "decay-fit needs at least three scales");
            }
        }
    }

    let params = if wants(Kind::needs_traps) {
        trap_params(cfg, ladder_cfg.as_ref(), kind, &mut c, &mut deviations)
    } else {
        None
    };
    let t = &cfg.traps;
    let anchor = RealAnchor::new(Rational::from_f64(t.anchor_x.unwrap_or(0.0)), t.anchor_n.unwrap_or(0));
    let start = SpaceTimePoint::new(cfg.walker.start.unwrap_or(0), 0);

    let mut horizon = 0.0;
    if kind == Some(Kind::SkeletonCheck) {
        if let Some(h) = c.require("walker.horizon", &cfg.walker.horizon) {
            if !(h > 0.0 && h.is_finite()) {
                c.error("walker.horizon", format!("must be positive and finite, got {h}"));
            }
            horizon = h;
        }
    }

    let decoupling = if kind == Some(Kind::Decoupling) { decoupling(cfg, env.as_ref(), &mut c) } else { None };

    let (mut gamma_n, mut gamma_eps) = (Vec::new(), 0.0);
    if kind == Some(Kind::GammaCheck) {
        if let Some(n) = c.require("experiment_cli.n_list", &cli.n_list) {
            if n.is_empty() || n.contains(&0) {
                c.error("experiment_cli.n_list", "needs at least one entry, all >= 1");
            }
            gamma_n = n;
        }
        if let Some(e) = c.require("experiment_cli.epsilon", &cli.epsilon) {
            if !(e > 0.0 && e < 1.0) {
                c.error("experiment_cli.epsilon", format!("must lie in (0, 1), got {e}"));
            }
            gamma_eps = e;
        }
    }

    condition_flags(cfg, ladder_cfg.as_ref(), range, &mut c);

    if c.has_errors() {
        return Err(c.findings);
    }
    Ok(Plan {
        kind: kind.unwrap(),
        seed: seed.unwrap(),
        replicas: replicas.unwrap(),
        env,
        walk,
        h_list,
        v_grid,
        threshold,
        decay_v,
        params,
        anchor,
        start,
        horizon,
        decoupling,
        gamma_n,
        gamma_eps,
        deviations,
        warnings: c.findings,
    })
}

fn environment(cfg: &ExperimentConfig, c: &mut Collector, deviations: &mut Vec<String>) -> Option<EnvironmentSpec> {
    let e = &cfg.environment;
    let model = c.require("environment.model", &e.model)?;
    let model = match model.as_str() {
        "iid" => EnvModel::Iid { probs: c.require("environment.probs", &e.probs)? },
        "markov" => {
            let transition = c.require("environment.transition", &e.transition)?;
            let initial = match &e.initial {
                Some(i) => i.clone(),
                None => rwre_core::environment::stationary_law(&transition),
            };
            EnvModel::Markov { transition, initial }
        }
        "renewal" => {
            let beta = c.require("environment.beta", &e.beta);
            let probs = c.require("environment.probs", &e.probs);
            let cap = e.cap.unwrap_or(1_000_000);
            deviations.push(format!("environment.cap = {cap}: renewal gaps are truncated at the cap"));
            EnvModel::Renewal { beta: beta?, cap, probs: probs? }
        }
        other => {
            c.error("environment.model", format!("unknown model `{other}` (expected iid, markov or renewal)"));
            return None;
        }
    };
    let spec = EnvironmentSpec::new(model);
    match spec.validate() {
        Ok(()) => Some(spec),
        Err(err) => {
            c.error("environment", err.to_string());
            None
        }
    }
}

fn row_sum_ok(row: &[f64]) -> bool {
    (row.iter().sum::<f64>() - 1.0).abs() <= 1e-12
}

fn kernel(cfg: &ExperimentConfig, env: Option<&EnvironmentSpec>, c: &mut Collector) -> Option<Kernel> {
    let w = &cfg.walker;
    let range = c.require("walker.range", &w.range);
    let gamma = c.require("walker.gamma", &w.gamma);
    if let Some(r) = range {
        if r < 1 {
            c.error("walker.range", format!("must be at least 1, got {r}"));
            return None;
        }
    }
    if let (Some(r), Some(g)) = (range, gamma) {
        if !(g > 0.0) {
            c.error("walker.gamma", format!("must be positive, got {g}"));
        } else if g * (2 * r + 1) as f64 > 1.0 + 1e-12 {
            c.error(
                "walker.gamma",
                format!("gamma*(2R+1) = {} exceeds 1: no probability row can satisfy the floor", g * (2 * r + 1) as f64),
            );
        }
    }
    let width = range.map(|r| (2 * r + 1) as usize);
    let mut shape_ok = true;
    let mut check_row = |c: &mut Collector, field: String, row: &[f64]| {
        if let Some(wd) = width {
            if row.len() != wd {
                c.error(&field, format!("has {} entries, expected 2R+1 = {wd}", row.len()));
                shape_ok = false;
                return;
            }
        }
        if row.iter().any(|p| !(*p >= 0.0)) {
            c.error(&field, "has a negative or non-finite entry");
            shape_ok = false;
        } else if !row_sum_ok(row) {
            c.error(&field, format!("row sums to {}, expected 1", row.iter().sum::<f64>()));
            shape_ok = false;
        }
    };
    let table = match (&w.row, &w.table) {
        (Some(_), Some(_)) => {
            c.error("walker.row", "give either walker.row or walker.table, not both");
            return None;
        }
        (None, None) => {
            c.error("walker.row", "required field is missing (or give walker.table)");
            return None;
        }
        (Some(row), None) => {
            check_row(c, "walker.row".into(), row);
            KernelTable::Uniform(row.clone())
        }
        (None, Some(rows)) => {
            for (i, row) in rows.iter().enumerate() {
                check_row(c, format!("walker.table[{i}]"), row);
            }
            KernelTable::PerWord(rows.clone())
        }
    };
    let (range, gamma) = (range?, gamma?);
    if !shape_ok {
        return None;
    }
    let ell = w.ell.unwrap_or(1);
    let states = match (&table, env) {
        (KernelTable::PerWord(_), Some(e)) => e.state_count(),
        (KernelTable::PerWord(_), None) => return None,
        (KernelTable::Uniform(_), _) => 2,
    };
    let k = match Kernel::new(ell, range, gamma, states, table) {
        Ok(k) => k,
        Err(e) => {
            c.error("walker.table", e.to_string());
            return None;
        }
    };
    if let Err(e) = validate_kernel(&k) {
        c.error("walker.gamma", e.to_string());
        return None;
    }
    Some(k)
}

fn ladder_of(cfg: &ExperimentConfig, c: &mut Collector, deviations: &mut Vec<String>) -> Option<ScaleLadder> {
    let g = &cfg.geometry_scales;
    let l0 = g.l0?;
    let ell = cfg.walker.ell.unwrap_or(1) as f64;
    let paper = PROOF_L0.max(ell);
    if (l0 as f64) < paper {
        c.warn(
            "geometry_scales.l0",
            format!("L0 = {l0} is below the proof-regime base scale max(10^10, ell); expected at desk scale"),
        );
        deviations.push(format!("geometry_scales.l0 = {l0} (proof regime uses max(10^10, ell))"));
    }
    let k_max = g.k_max.unwrap_or(1);
    match ladder(l0, k_max) {
        Ok(l) => Some(l),
        Err(e) => {
            c.error("geometry_scales.l0", e.to_string());
            None
        }
    }
}

fn scales(cfg: &ExperimentConfig, c: &mut Collector) -> Vec<u64> {
    let Some(h) = c.require("geometry_scales.h_list", &cfg.geometry_scales.h_list) else {
        return Vec::new();
    };
    if h.is_empty() || h.contains(&0) {
        c.error("geometry_scales.h_list", "needs at least one scale, all >= 1");
    }
    let mut h = h;
    h.sort_unstable();
    h.dedup();
    h
}

fn speed_grid(cfg: &ExperimentConfig, c: &mut Collector) -> Vec<Rational> {
    let e = &cfg.estimators;
    let grid: Vec<Rational> = match (&e.v_grid, e.v_min, e.v_max, e.v_step) {
        (Some(g), None, None, None) => g.iter().map(|&v| Rational::from_f64(v)).collect(),
        (None, Some(lo), Some(hi), Some(step)) => {
            if !(step > 0.0) || hi < lo {
                c.error("estimators.v_step", "need v_step > 0 and v_max >= v_min");
                return Vec::new();
            }
            let (lo, hi, step) = (Rational::from_f64(lo), Rational::from_f64(hi), Rational::from_f64(step));
            let mut out = Vec::new();
            let mut v = lo;
            while v <= hi {
                out.push(v);
                v += step;
            }
            out
        }
        (None, None, None, None) => {
            c.error("estimators.v_grid", "required field is missing (or give v_min, v_max and v_step)");
            return Vec::new();
        }
        _ => {
            c.error("estimators.v_grid", "give either v_grid or all of v_min, v_max, v_step");
            return Vec::new();
        }
    };
    if grid.is_empty() {
        c.error("estimators.v_grid", "empty speed grid");
    }
    let mut grid = grid;
    grid.sort();
    grid.dedup();
    grid
}

fn trap_params(
    cfg: &ExperimentConfig,
    lad: Option<&ScaleLadder>,
    kind: Option<Kind>,
    c: &mut Collector,
    deviations: &mut Vec<String>,
) -> Option<Params> {
    let t = &cfg.traps;
    let delta = c.require("traps.delta", &t.delta).map(Rational::from_f64);
    let v0 = c.require("traps.v0", &t.v0).map(Rational::from_f64);
    let v_plus = c.require("traps.v_plus", &t.v_plus).map(Rational::from_f64);
    let gamma = cfg.walker.gamma.map(Rational::from_f64);
    let result = if let Some(k) = t.k {
        let k1 = c.require("geometry_scales.k1", &cfg.geometry_scales.k1);
        if cfg.geometry_scales.l0.is_none() {
            c.error("geometry_scales.l0", "required when traps.k is set");
        }
        let (lad, k1, delta, v0, v_plus, gamma) = (lad?, k1?, delta?, v0?, v_plus?, gamma?);
        TrapParams::from_ladder(lad, k, k1, delta, v0, v_plus, gamma)
    } else {
        let h_k = c.require("traps.h_k", &t.h_k);
        let r = c.require("traps.r", &t.r);
        let bold_h = c.require("traps.bold_h", &t.bold_h);
        let (h_k, r, bold_h, delta, v0, v_plus, gamma) = (h_k?, r?, bold_h?, delta?, v0?, v_plus?, gamma?);
        deviations.push(format!("traps scales set directly (h_k = {h_k}, r = {r}, bold_h = {bold_h}) instead of from the ladder"));
        TrapParams::new(0, h_k, r, bold_h, delta, v0, v_plus, gamma)
    };
    let p = match result {
        Ok(p) => p,
        Err(e) => {
            c.error("traps", e.to_string());
            return None;
        }
    };
    if kind == Some(Kind::Density) {
        if let Err(e) = rounding_grid(p.delta, Rational::from_i64(p.h_k as i64)) {
            c.error("traps.delta", e.to_string());
            return None;
        }
    }
    if p.delta_h() < Rational::from_i64(1) {
        c.error("traps.delta", format!("delta*h_k = {} leaves J_k(w) empty", p.delta_h()));
        return None;
    }
    Some(p)
}

fn decoupling(cfg: &ExperimentConfig, env: Option<&EnvironmentSpec>, c: &mut Collector) -> Option<DecouplingPlan> {
    let d = &cfg.decoupling;
    let h_list = c.require("decoupling.h_list", &d.h_list)?;
    if h_list.is_empty() || h_list.contains(&0) {
        c.error("decoupling.h_list", "needs at least one separation, all >= 1");
        return None;
    }
    let width = d.width.unwrap_or(1);
    let height = d.height.unwrap_or(1);
    if width < 1 || height < 1 {
        c.error("decoupling.width", "box sides must be at least 1");
        return None;
    }
    let state = d.state.unwrap_or(1);
    if let Some(e) = env {
        if state as usize >= e.state_count() {
            c.error("decoupling.state", format!("state {state} is outside the alphabet of size {}", e.state_count()));
            return None;
        }
    }
    let min_fraction = d.min_fraction.unwrap_or(0.5);
    Some(DecouplingPlan { h_list, width, height, predicate: Predicate { state, min_fraction } })
}

/// Proof-regime conditions; reported, never enforced.
fn condition_flags(cfg: &ExperimentConfig, lad: Option<&ScaleLadder>, range: i64, c: &mut Collector) {
    let d = &cfg.decoupling;
    let g = &cfg.geometry_scales;
    let box_side = (2 * range + 3) as f64;
    if let Some(a) = d.a {
        if a <= box_side {
            c.warn("decoupling.a", format!("a = {a} does not exceed 2R+3 = {box_side}"));
        }
    }
    if let Some(alpha) = d.alpha {
        if alpha <= 11.0 {
            c.warn("decoupling.alpha", format!("alpha = {alpha} does not exceed 11"));
        }
    }
    let Some(lad) = lad else { return };
    let big = |k: usize| lad.big(k) as f64;
    let k0 = g.k0.unwrap_or(0).min(lad.k_max());
    if let Some(margin) = g.speed_margin {
        let sum: f64 = (k0..=lad.k_max()).map(|k| 4.0 * range as f64 / lad.small(k) as f64).sum();
        if !(sum < margin / 2.0) {
            c.warn(
                "geometry_scales.speed_margin",
                format!("condition1 violated: sum of 4R/l_k over built levels from k0 = {k0} is {sum:.4}, not below {}", margin / 2.0),
            );
        }
    }
    if let (Some(alpha), Some(c1)) = (d.alpha, d.c1) {
        if let Some(k) = (k0..=lad.k_max()).find(|&k| box_side.powi(2) * (c1 + 1.0) * big(k).powf(1.0 - 3.0 * alpha / 8.0) > 1.0) {
            c.warn("decoupling.alpha", format!("condition2 violated at k = {k} for these parameters; expected at desk scale"));
        }
        if let (Some(k1), Some(delta)) = (g.k1, cfg.traps.delta) {
            let lhs = |k: usize| {
                box_side.powi(2) * (4f64.powf(2.0 * alpha + 4.0) / (delta * delta) + c1) * big(k).powf(-(3.0 * alpha - 23.0) / 20.0)
            };
            let rhs = 4f64.powf(alpha + 2.0) / delta;
            if let Some(k) = (k1 + 1..=lad.k_max()).find(|&k| lhs(k) > rhs) {
                c.warn("geometry_scales.k1", format!("condition_on_k1 violated at k = {k} for these parameters; expected at desk scale"));
            }
        }
    }
    if let (Some(k1), Some(delta)) = (g.k1, cfg.traps.delta) {
        if k1 <= lad.k_max() + 1 && big(k1) < 4.0 / delta {
            c.warn("geometry_scales.k1", format!("condition_on_k2 violated: L_{k1} = {} is below 4/delta = {}", big(k1), 4.0 / delta));
        }
    }
}
