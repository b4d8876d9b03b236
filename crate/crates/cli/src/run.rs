//! Experiment dispatch, CSV outputs and run manifests.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rayon::prelude::*;
use rwre_core::environment::covariance_profile;
use rwre_core::estimators::{decay_fit, speed_bracket, speed_table, EstimateWithCI, TableRow};
use rwre_core::scalar::Scalar;
use rwre_core::traps::{
    barrier_replicas, delay_report, density_of_threats, estimate_cross_given_bar, estimate_trap_threat_probs,
    is_threatened, BarrierRecord,
};
use rwre_core::walker::{evolve_continuous, run_walker, skeleton, ReplayField, Stepper};
use rwre_core::{Rational, SeedKey, SpaceTimePoint, Stream, System};
use serde::Serialize;
use serde_json::{json, Value};
use sha2::{Digest, Sha256};

use crate::config::{ExperimentConfig, Kind};
use crate::gamma::gamma_check;
use crate::validate::{plan, Finding, Plan};

pub const VERSION: &str = env!("CARGO_PKG_VERSION");

#[derive(Debug, thiserror::Error)]
pub enum RunError {
    #[error("config validation failed:\n{}", .0.iter().map(|f| f.to_string()).collect::<Vec<_>>().join("\n"))]
    Validation(Vec<Finding>),
    #[error("{module}: {source}")]
    Simulation {
        module: &'static str,
        #[source]
        source: rwre_core::Error,
    },
    #[error("{0}")]
    Io(String),
}

impl RunError {
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Validation(_) => 1,
            _ => 2,
        }
    }
}

fn sim(module: &'static str) -> impl Fn(rwre_core::Error) -> RunError {
    move |source| RunError::Simulation { module, source }
}

fn io<E: std::fmt::Display>(path: &Path) -> impl Fn(E) -> RunError + '_ {
    move |e| RunError::Io(format!("{}: {e}", path.display()))
}

/// One output file, held in memory until the run finishes.
struct Artifact {
    name: &'static str,
    bytes: Vec<u8>,
}

#[derive(Debug, Clone, PartialEq, Serialize, serde::Deserialize)]
pub struct RunManifest {
    pub kind: String,
    pub config: Value,
    pub version: String,
    pub seed: u64,
    pub workers: usize,
    pub deviations: Vec<String>,
    pub warnings: Vec<String>,
    pub wall_clock_seconds: f64,
    /// File name to hex SHA-256.
    pub outputs: BTreeMap<String, String>,
}

#[derive(Debug)]
pub struct RunReport {
    pub manifest: RunManifest,
    pub out_dir: PathBuf,
    /// Human-readable result lines.
    pub summary: Vec<String>,
}

pub fn sha256_hex(bytes: &[u8]) -> String {
    let mut h = Sha256::new();
    h.update(bytes);
    format!("{:x}", h.finalize())
}

fn csv_bytes<R: Serialize>(rows: &[R], header: &[&str]) -> Vec<u8> {
    let mut w = csv::WriterBuilder::new().has_headers(false).from_writer(Vec::new());
    w.write_record(header).expect("in-memory write");
    for r in rows {
        w.serialize(r).expect("in-memory write");
    }
    w.into_inner().expect("in-memory write")
}

fn json_bytes(v: &Value) -> Vec<u8> {
    let mut s = serde_json::to_string_pretty(v).expect("json serializes");
    s.push('\n');
    s.into_bytes()
}

fn q(v: Rational) -> f64 {
    v.to_f64()
}

fn estimate_json(e: &EstimateWithCI) -> Value {
    json!({
        "p_hat": e.p_hat,
        "ci_lo": e.ci_lo,
        "ci_hi": e.ci_hi,
        "successes": e.successes,
        "replicas": e.replicas,
    })
}

/// Config with the effective kind and seed filled in, so a manifest replays
/// without command-line flags.
fn echo(cfg: &ExperimentConfig, p: &Plan) -> ExperimentConfig {
    let mut c = cfg.clone();
    c.experiment_cli.kind = Some(p.kind);
    c.rng_field.seed = Some(p.seed);
    c.experiment_cli.out_dir = None;
    c
}

fn strip_nulls(v: Value) -> Value {
    match v {
        Value::Object(m) => Value::Object(
            m.into_iter()
                .filter(|(_, v)| !v.is_null())
                .map(|(k, v)| (k, strip_nulls(v)))
                .filter(|(_, v)| !matches!(v, Value::Object(m) if m.is_empty()))
                .collect(),
        ),
        other => other,
    }
}

/// Validate, simulate and write every output plus `manifest.json` into
/// `out_dir`. `workers = 0` uses all cores.
pub fn run(
    cfg: &ExperimentConfig,
    kind: Option<Kind>,
    seed: Option<u64>,
    workers: usize,
    out_dir: &Path,
) -> Result<RunReport, RunError> {
    let p = plan(cfg, kind, seed).map_err(RunError::Validation)?;
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| RunError::Io(format!("thread pool: {e}")))?;
    let started = Instant::now();
    let (artifacts, summary) = pool.install(|| dispatch(&p))?;
    let wall = started.elapsed().as_secs_f64();

    fs::create_dir_all(out_dir).map_err(io(out_dir))?;
    let mut outputs = BTreeMap::new();
    for a in &artifacts {
        let path = out_dir.join(a.name);
        fs::write(&path, &a.bytes).map_err(io(&path))?;
        outputs.insert(a.name.to_string(), sha256_hex(&a.bytes));
    }
    let manifest = RunManifest {
        kind: p.kind.to_string(),
        config: strip_nulls(serde_json::to_value(echo(cfg, &p)).expect("config serializes")),
        version: VERSION.to_string(),
        seed: p.seed,
        workers: pool.current_num_threads(),
        deviations: p.deviations.clone(),
        warnings: p.warnings.iter().map(|w| w.to_string()).collect(),
        wall_clock_seconds: wall,
        outputs,
    };
    let path = out_dir.join("manifest.json");
    let value = serde_json::to_value(&manifest).expect("manifest serializes");
    fs::write(&path, json_bytes(&value)).map_err(io(&path))?;
    Ok(RunReport { manifest, out_dir: out_dir.to_path_buf(), summary })
}

/// Re-run the config recorded in a manifest and compare output digests.
/// Returns the names of files whose digests differ.
pub fn replay(manifest_path: &Path, workers: usize, out_dir: &Path) -> Result<(RunReport, Vec<String>), RunError> {
    let text = fs::read_to_string(manifest_path).map_err(io(manifest_path))?;
    let old: RunManifest = serde_json::from_str(&text).map_err(io(manifest_path))?;
    let cfg: ExperimentConfig = serde_json::from_value(old.config.clone()).map_err(io(manifest_path))?;
    let report = run(&cfg, None, None, workers, out_dir)?;
    let mut differing: Vec<String> = old
        .outputs
        .iter()
        .filter(|(name, digest)| report.manifest.outputs.get(*name) != Some(digest))
        .map(|(name, _)| name.clone())
        .collect();
    differing.extend(report.manifest.outputs.keys().filter(|k| !old.outputs.contains_key(*k)).cloned());
    Ok((report, differing))
}

fn walk(p: &Plan) -> &System {
    p.walk.as_ref().expect("validated plan has a walk")
}

type Outcome = (Vec<Artifact>, Vec<String>);

fn dispatch(p: &Plan) -> Result<Outcome, RunError> {
    match p.kind {
        Kind::SpeedTable | Kind::SpeedBracket | Kind::DecayFit => speeds(p),
        Kind::TrapProbe => trap_probe(p),
        Kind::ThreatProbe => threat_probe(p),
        Kind::Density => density(p),
        Kind::Barrier => barrier(p),
        Kind::Decoupling => decoupling(p),
        Kind::SkeletonCheck => skeleton_check(p),
        Kind::GammaCheck => gamma(p),
    }
}

const SPEED_HEADER: [&str; 8] = ["H", "v", "side", "replicas", "p_hat", "ci_lo", "ci_hi", "seed"];

#[derive(Serialize)]
struct SpeedRow {
    h: u64,
    v: f64,
    side: &'static str,
    replicas: u64,
    p_hat: f64,
    ci_lo: f64,
    ci_hi: f64,
    seed: u64,
}

fn speed_rows(table: &[TableRow<Rational>], seed: u64) -> Vec<SpeedRow> {
    table
        .iter()
        .map(|r| SpeedRow {
            h: r.h,
            v: q(r.v),
            side: r.side.as_str(),
            replicas: r.estimate.replicas,
            p_hat: r.estimate.p_hat,
            ci_lo: r.estimate.ci_lo,
            ci_hi: r.estimate.ci_hi,
            seed,
        })
        .collect()
}

fn speeds(p: &Plan) -> Result<Outcome, RunError> {
    let w = walk(p);
    let mut lines = Vec::new();
    let (table, summary) = match p.kind {
        Kind::SpeedTable => {
            let t = speed_table(w, &p.h_list, &p.v_grid, p.replicas).map_err(sim("estimators"))?;
            lines.push(format!("{} rows", t.len()));
            let n = t.len();
            (t, json!({ "rows": n }))
        }
        _ => {
            let b = speed_bracket(w, &p.h_list, &p.v_grid, p.threshold, p.replicas).map_err(sim("estimators"))?;
            lines.push(format!("v_minus_hat = {}, v_plus_hat = {}", q(b.v_minus_hat), q(b.v_plus_hat)));
            let mut s = json!({
                "v_minus_hat": q(b.v_minus_hat),
                "v_plus_hat": q(b.v_plus_hat),
                "threshold": b.threshold,
                "h_list": b.h_list,
            });
            if let Some(v) = p.decay_v {
                let fit = decay_fit(&b.table, v).map_err(sim("estimators"))?;
                lines.push(format!(
                    "decay slope = {:.4} (se {:.4}) over H = {:?}, zero at {:?}",
                    fit.slope, fit.slope_se, fit.scales, fit.zero_scales
                ));
                s["decay"] = serde_json::to_value(&fit).expect("fit serializes");
                s["decay"]["v"] = json!(q(v));
            }
            (b.table, s)
        }
    };
    let csv = csv_bytes(&speed_rows(&table, p.seed), &SPEED_HEADER);
    Ok((
        vec![Artifact { name: "speed_table.csv", bytes: csv }, Artifact { name: "summary.json", bytes: json_bytes(&summary) }],
        lines,
    ))
}

fn params(p: &Plan) -> &rwre_core::Params {
    p.params.as_ref().expect("validated plan has trap parameters")
}

fn params_json(p: &Plan) -> Value {
    let t = params(p);
    json!({
        "h_k": t.h_k, "r": t.r, "big_h": t.big_h, "bold_h": t.bold_h, "m_k": t.m_k, "big_m": t.big_m,
        "delta": q(t.delta), "v0": q(t.v0), "v_plus": q(t.v_plus_ref), "gamma": q(t.gamma), "lambda": q(t.lambda),
    })
}

fn trap_probe(p: &Plan) -> Result<Outcome, RunError> {
    let e = estimate_trap_threat_probs(walk(p), &p.anchor, params(p), p.replicas).map_err(sim("traps"))?;
    let s = json!({
        "params": params_json(p),
        "p_trap": estimate_json(&e.p_trap),
        "p_threat": estimate_json(&e.p_threat),
        "mirror_p_trap": estimate_json(&e.mirror_p_trap),
        "dichotomy_holds": e.dichotomy_holds,
    });
    let lines = vec![format!(
        "p_trap = {:.4}, p_threat = {:.4}, mirror p_trap = {:.4}, dichotomy {}",
        e.p_trap.p_hat,
        e.p_threat.p_hat,
        e.mirror_p_trap.p_hat,
        if e.dichotomy_holds { "holds" } else { "fails" }
    )];
    Ok((vec![Artifact { name: "summary.json", bytes: json_bytes(&s) }], lines))
}

#[derive(Serialize)]
struct ThreatRow {
    replica: u64,
    threatened: bool,
    first_index: Option<u64>,
}

fn threat_probe(p: &Plan) -> Result<Outcome, RunError> {
    let w = walk(p);
    let rows: Vec<ThreatRow> = (0..p.replicas)
        .into_par_iter()
        .map(|r| {
            let first = is_threatened(&w.with_replica(r), &p.anchor, params(p))?;
            Ok(ThreatRow { replica: r, threatened: first.is_some(), first_index: first })
        })
        .collect::<rwre_core::Result<_>>()
        .map_err(sim("traps"))?;
    let hits = rows.iter().filter(|r| r.threatened).count() as u64;
    let e = EstimateWithCI::new(hits, p.replicas, w.key);
    let s = json!({ "params": params_json(p), "p_threat": estimate_json(&e) });
    Ok((
        vec![
            Artifact { name: "threats.csv", bytes: csv_bytes(&rows, &["replica", "threatened", "first_index"]) },
            Artifact { name: "summary.json", bytes: json_bytes(&s) },
        ],
        vec![format!("p_threat = {:.4} [{:.4}, {:.4}]", e.p_hat, e.ci_lo, e.ci_hi)],
    ))
}

#[derive(Serialize)]
struct DensityRow {
    replica: u64,
    density: f64,
    threatened_blocks: u64,
}

fn density(p: &Plan) -> Result<Outcome, RunError> {
    let w = walk(p);
    let rows: Vec<DensityRow> = (0..p.replicas)
        .into_par_iter()
        .map(|r| {
            let d = density_of_threats(&w.with_replica(r), p.start, params(p))?;
            Ok(DensityRow { replica: r, density: d.density, threatened_blocks: d.threatened.iter().filter(|&&t| t).count() as u64 })
        })
        .collect::<rwre_core::Result<_>>()
        .map_err(sim("traps"))?;
    let mean = rows.iter().map(|r| r.density).sum::<f64>() / rows.len() as f64;
    let s = json!({ "params": params_json(p), "mean_density": mean });
    Ok((
        vec![
            Artifact { name: "density.csv", bytes: csv_bytes(&rows, &["replica", "density", "threatened_blocks"]) },
            Artifact { name: "summary.json", bytes: json_bytes(&s) },
        ],
        vec![format!("mean density of threats = {mean:.4}")],
    ))
}

pub const BARRIER_HEADER: [&str; 13] =
    ["replica", "j", "j0", "j1", "trap", "bar", "cross", "del", "g_flag", "y_pos_start", "y_pos_end", "z_j", "Z_j"];

#[derive(Serialize)]
struct BarrierRow {
    replica: u64,
    j: u64,
    j0: u64,
    j1: u64,
    trap: bool,
    bar: bool,
    cross: bool,
    del: bool,
    g_flag: bool,
    y_pos_start: i64,
    y_pos_end: i64,
    z_j: i64,
    big_z_j: i64,
}

impl From<&BarrierRecord> for BarrierRow {
    fn from(r: &BarrierRecord) -> Self {
        BarrierRow {
            replica: r.replica,
            j: r.j,
            j0: r.j0,
            j1: r.j1,
            trap: r.trap,
            bar: r.bar,
            cross: r.cross,
            del: r.del,
            g_flag: r.g_flag,
            y_pos_start: r.y_pos_start,
            y_pos_end: r.y_pos_end,
            z_j: r.z_j,
            big_z_j: r.big_z_j,
        }
    }
}

fn barrier(p: &Plan) -> Result<Outcome, RunError> {
    let w = walk(p);
    let t = params(p);
    let runs = barrier_replicas(w, p.start, t, p.replicas).map_err(sim("traps"))?;
    let records: Vec<BarrierRecord> = runs.iter().flat_map(|r| r.records.iter().cloned()).collect();
    let rows: Vec<BarrierRow> = records.iter().map(BarrierRow::from).collect();
    let delays = delay_report(w, &runs, t).map_err(sim("traps"))?;
    let mut lines = vec![format!(
        "{} records; {} with G, bar, no cross and no delay",
        records.len(),
        delays.record_violations
    )];
    let cross = match estimate_cross_given_bar(&records, q(t.gamma)) {
        Ok(c) => {
            lines.push(format!(
                "P(cross | bar) = {:.4} [{:.4}, {:.4}] over {} bar-blocks, bound {:.4}",
                c.frequency, c.ci_lo, c.ci_hi, c.bar_blocks, c.bound
            ));
            serde_json::to_value(c).expect("serializes")
        }
        Err(e) => {
            lines.push(format!("P(cross | bar) not estimated: {e}"));
            json!({ "error": e.to_string() })
        }
    };
    let s = json!({
        "params": params_json(p),
        "cross_given_bar": cross,
        "delays": {
            "replicas": delays.replicas,
            "bar_histogram": delays.bar_histogram,
            "del_histogram": delays.del_histogram,
            "mean_bar": delays.mean_bar,
            "mean_del": delays.mean_del,
            "g_and_few_delays": estimate_json(&delays.g_and_few_delays),
            "count_violations": delays.count_violations,
            "record_violations": delays.record_violations,
        },
    });
    Ok((
        vec![
            Artifact { name: "barrier.csv", bytes: csv_bytes(&rows, &BARRIER_HEADER) },
            Artifact { name: "summary.json", bytes: json_bytes(&s) },
        ],
        lines,
    ))
}

fn decoupling(p: &Plan) -> Result<Outcome, RunError> {
    let d = p.decoupling.as_ref().expect("validated plan has decoupling settings");
    let env = p.env.as_ref().expect("validated plan has an environment").compile().map_err(sim("environment"))?;
    let key = SeedKey::new(p.seed, Stream::EnvField);
    let prof = covariance_profile(&env, d.width, d.height, &d.h_list, d.predicate, d.predicate, p.replicas, &key)
        .map_err(sim("environment"))?;
    let s = json!({ "alpha_hat": prof.alpha_hat, "width": d.width, "height": d.height });
    let mut lines: Vec<String> =
        prof.rows.iter().map(|r| format!("h = {}: cov = {:.5} +/- {:.5}", r.h, r.cov, r.half_width)).collect();
    lines.push(match prof.alpha_hat {
        Some(a) => format!("fitted alpha_hat = {a:.4}"),
        None => "alpha_hat not fitted: fewer than two positive covariances".into(),
    });
    Ok((
        vec![
            Artifact { name: "covariance.csv", bytes: csv_bytes(&prof.rows, &["h", "cov", "half_width"]) },
            Artifact { name: "summary.json", bytes: json_bytes(&s) },
        ],
        lines,
    ))
}

#[derive(Serialize)]
struct SkeletonRow {
    replica: u64,
    jumps: usize,
    exact: bool,
}

/// Whether the skeleton of one continuous run matches it and replays from
/// its own access log.
pub fn skeleton_exact(w: &System, start: i64, horizon: f64) -> rwre_core::Result<(usize, bool)> {
    let run = evolve_continuous(w, start, horizon)?;
    let sk = match skeleton(&run, w) {
        Ok(sk) => sk,
        Err(rwre_core::Error::SkeletonMismatch(_)) => return Ok((run.jump_count(), false)),
        Err(e) => return Err(e),
    };
    let field = ReplayField::from_log(w.env.state_count(), &sk.log);
    let mut s = Stepper::new(&w.kernel, field, &w.key);
    let replayed = run_walker(&mut s, SpaceTimePoint::new(start, 0), run.jump_count() as u64);
    Ok((run.jump_count(), sk.positions == run.skeleton_positions && replayed.positions == run.skeleton_positions))
}

fn skeleton_check(p: &Plan) -> Result<Outcome, RunError> {
    let w = walk(p);
    let rows: Vec<SkeletonRow> = (0..p.replicas)
        .into_par_iter()
        .map(|r| {
            let (jumps, exact) = skeleton_exact(&w.with_replica(r), p.start.x, p.horizon)?;
            Ok(SkeletonRow { replica: r, jumps, exact })
        })
        .collect::<rwre_core::Result<_>>()
        .map_err(sim("walker"))?;
    let matches = rows.iter().filter(|r| r.exact).count();
    let line = format!("{matches}/{} exact matches", rows.len());
    let s = json!({ "matches": matches, "total": rows.len(), "horizon": p.horizon });
    Ok((
        vec![
            Artifact { name: "skeleton.csv", bytes: csv_bytes(&rows, &["replica", "jumps", "exact"]) },
            Artifact { name: "summary.json", bytes: json_bytes(&s) },
        ],
        vec![line],
    ))
}

fn gamma(p: &Plan) -> Result<Outcome, RunError> {
    let key = SeedKey::new(p.seed, Stream::PoissonClock);
    let rows = gamma_check(&p.gamma_n, p.gamma_eps, p.replicas, &key);
    let lines = rows
        .iter()
        .map(|r| {
            format!(
                "n = {}: empirical {:.6} [{:.6}, {:.6}], exact {:.6}{}",
                r.n,
                r.empirical,
                r.ci_lo,
                r.ci_hi,
                r.exact,
                if r.agrees { "" } else { "  DISAGREES" }
            )
        })
        .collect();
    let header = ["n", "epsilon", "replicas", "successes", "empirical", "ci_lo", "ci_hi", "exact", "agrees"];
    let s = json!({ "all_agree": rows.iter().all(|r| r.agrees) });
    Ok((
        vec![Artifact { name: "gamma.csv", bytes: csv_bytes(&rows, &header) }, Artifact { name: "summary.json", bytes: json_bytes(&s) }],
        lines,
    ))
}
