use std::fs;
use std::path::Path;
use std::process::{Command, Output};

use rwre::{validate, ExperimentConfig, Kind, RunManifest, Severity};

const MARKOV_WALK: &str = r#"
[experiment_cli]
replicas = 100

[rng_field]
seed = 11

[environment]
model = "markov"
transition = [[0.7, 0.3], [0.3, 0.7]]

[walker]
range = 1
ell = 1
gamma = 0.1
table = [[0.2, 0.5, 0.3], [0.3, 0.4, 0.3], [0.1, 0.6, 0.3], [0.4, 0.4, 0.2],
         [0.2, 0.2, 0.6], [0.3, 0.3, 0.4], [0.25, 0.5, 0.25], [0.1, 0.1, 0.8]]
horizon = 50.0

[geometry_scales]
h_list = [8, 16, 32]
l0 = 16
k_max = 2

[estimators]
v_min = -0.5
v_max = 0.5
v_step = 0.1

[traps]
h_k = 24
r = 2
bold_h = 96
delta = 0.1666666666666667
v0 = 0.0
v_plus = 0.5
"#;

fn rwre(args: &[&str], out_env: Option<&Path>) -> Output {
    let mut c = Command::new(env!("CARGO_BIN_EXE_rwre"));
    c.args(args).env_remove("RWRE_OUT_DIR");
    if let Some(d) = out_env {
        c.env("RWRE_OUT_DIR", d);
    }
    c.output().expect("binary runs")
}

fn write(dir: &Path, name: &str, text: &str) -> String {
    let p = dir.join(name);
    fs::write(&p, text).unwrap();
    p.to_str().unwrap().to_string()
}

fn stdout(o: &Output) -> String {
    String::from_utf8_lossy(&o.stdout).into_owned()
}

fn stderr(o: &Output) -> String {
    String::from_utf8_lossy(&o.stderr).into_owned()
}

fn manifest(dir: &Path) -> RunManifest {
    serde_json::from_str(&fs::read_to_string(dir.join("manifest.json")).unwrap()).unwrap()
}

#[test]
fn skeleton_check_reports_exact_matches() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", MARKOV_WALK);
    let out = tmp.path().join("out");
    let o = rwre(&["skeleton-check", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("100/100 exact matches"), "{}", stdout(&o));
}

#[test]
fn bad_row_is_a_validation_error_naming_the_row() {
    let tmp = tempfile::tempdir().unwrap();
    let text = MARKOV_WALK.replace("[0.4, 0.4, 0.2]", "[0.4, 0.4, 0.1]");
    let cfg = write(tmp.path(), "c.toml", &text);
    let o = rwre(&["speed-table", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("walker.table[3]"), "{}", stderr(&o));
    assert!(!tmp.path().join("o").exists());
}

#[test]
fn identical_runs_have_identical_digests_for_any_worker_count() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", MARKOV_WALK);
    let mut digests = Vec::new();
    for (i, workers) in ["1", "1", "3"].iter().enumerate() {
        let out = tmp.path().join(format!("o{i}"));
        let o = rwre(&["speed-bracket", "--config", &cfg, "--workers", workers, "--out", out.to_str().unwrap()], None);
        assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
        digests.push(manifest(&out).outputs);
    }
    assert_eq!(digests[0], digests[1]);
    assert_eq!(digests[0], digests[2]);
    let csv = fs::read_to_string(tmp.path().join("o0/speed_table.csv")).unwrap();
    assert!(csv.starts_with("H,v,side,replicas,p_hat,ci_lo,ci_hi,seed\n"));
}

#[test]
fn seed_flag_changes_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", MARKOV_WALK);
    let a = tmp.path().join("a");
    let b = tmp.path().join("b");
    rwre(&["density", "--config", &cfg, "--out", a.to_str().unwrap()], None);
    rwre(&["density", "--config", &cfg, "--seed", "12", "--out", b.to_str().unwrap()], None);
    assert_eq!(manifest(&b).seed, 12);
    assert_ne!(manifest(&a).outputs, manifest(&b).outputs);
}

#[test]
fn replay_reproduces_outputs() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", MARKOV_WALK);
    let first = tmp.path().join("first");
    let o = rwre(&["barrier", "--config", &cfg, "--out", first.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    let csv = fs::read_to_string(first.join("barrier.csv")).unwrap();
    assert!(csv.starts_with("replica,j,j0,j1,trap,bar,cross,del,g_flag,y_pos_start,y_pos_end,z_j,Z_j\n"));
    let m = first.join("manifest.json");
    let second = tmp.path().join("second");
    let o = rwre(&["replay", "--config", m.to_str().unwrap(), "--out", second.to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(stdout(&o).contains("bit-exactly"));
    assert_eq!(fs::read(first.join("barrier.csv")).unwrap(), fs::read(second.join("barrier.csv")).unwrap());
}

#[test]
fn manifest_records_deviations_and_sorted_keys() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", MARKOV_WALK);
    let out = tmp.path().join("o");
    rwre(&["threat-probe", "--config", &cfg, "--out", out.to_str().unwrap()], None);
    let m = manifest(&out);
    assert!(m.deviations.iter().any(|d| d.contains("geometry_scales.l0 = 16")));
    assert!(m.deviations.iter().any(|d| d.contains("traps scales set directly")));
    let text = fs::read_to_string(out.join("manifest.json")).unwrap();
    let keys: Vec<&str> = text
        .lines()
        .filter(|l| l.starts_with("  \""))
        .map(|l| l.trim().split('"').nth(1).unwrap())
        .collect();
    let mut sorted = keys.clone();
    sorted.sort_unstable();
    assert_eq!(keys, sorted);
    for (name, digest) in &m.outputs {
        assert_eq!(*digest, rwre::run::sha256_hex(&fs::read(out.join(name)).unwrap()));
    }
}

#[test]
fn output_directory_falls_back_to_environment_variable() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", MARKOV_WALK);
    let env_dir = tmp.path().join("from-env");
    let o = rwre(&["skeleton-check", "--config", &cfg], Some(&env_dir));
    assert_eq!(o.status.code(), Some(0), "{}", stderr(&o));
    assert!(env_dir.join("manifest.json").exists());
}

#[test]
fn runtime_errors_exit_with_two() {
    let tmp = tempfile::tempdir().unwrap();
    // nothing reaches speed 0.95 at these scales, so there is nothing to fit
    let text = MARKOV_WALK.replace("v_step = 0.1", "v_step = 0.1\nv = 0.95");
    let cfg = write(tmp.path(), "c.toml", &text);
    let o = rwre(&["decay-fit", "--config", &cfg, "--out", tmp.path().join("o").to_str().unwrap()], None);
    assert_eq!(o.status.code(), Some(2), "{}", stderr(&o));
    assert!(stderr(&o).starts_with("estimators:"), "{}", stderr(&o));
}

#[test]
fn unknown_keys_are_rejected() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write(tmp.path(), "c.toml", &MARKOV_WALK.replace("horizon = 50.0", "horizn = 50.0"));
    let o = rwre(&["skeleton-check", "--config", &cfg], None);
    assert_eq!(o.status.code(), Some(1));
    assert!(stderr(&o).contains("horizn"), "{}", stderr(&o));
}

#[test]
fn empty_config_names_every_required_field() {
    let findings = validate(&ExperimentConfig::default(), Some(Kind::Barrier), None);
    let fields: Vec<&str> = findings.iter().filter(|f| f.severity == Severity::Error).map(|f| f.field.as_str()).collect();
    for f in [
        "rng_field.seed",
        "experiment_cli.replicas",
        "environment.model",
        "walker.range",
        "walker.gamma",
        "walker.row",
        "traps.h_k",
        "traps.r",
        "traps.bold_h",
        "traps.delta",
        "traps.v0",
        "traps.v_plus",
    ] {
        assert!(fields.contains(&f), "{f} missing from {fields:?}");
    }
    let none = validate(&ExperimentConfig::default(), None, None);
    assert!(none.iter().any(|f| f.field == "experiment_cli.kind"));
}

#[test]
fn validate_subcommand_exit_codes() {
    let tmp = tempfile::tempdir().unwrap();
    let empty = write(tmp.path(), "e.toml", "");
    assert_eq!(rwre(&["validate", "--config", &empty, "--kind", "gamma-check"], None).status.code(), Some(1));
    let ok = write(tmp.path(), "ok.toml", MARKOV_WALK);
    let o = rwre(&["validate", "--config", &ok, "--kind", "skeleton-check"], None);
    assert_eq!(o.status.code(), Some(0));
    assert!(stdout(&o).contains("below the proof-regime base scale"));
}

fn findings_for(text: &str, kind: Kind) -> Vec<rwre::Finding> {
    validate(&ExperimentConfig::from_toml(text).unwrap(), Some(kind), None)
}

#[test]
fn floor_above_one_over_width_is_an_error() {
    let f = findings_for(&MARKOV_WALK.replace("gamma = 0.1", "gamma = 0.34"), Kind::SpeedTable);
    assert!(f.iter().any(|f| f.severity == Severity::Error && f.field == "walker.gamma" && f.message.contains("exceeds 1")));
}

#[test]
fn ellipticity_violation_is_an_error() {
    let f = findings_for(&MARKOV_WALK.replace("gamma = 0.1", "gamma = 0.15"), Kind::SpeedTable);
    assert!(f.iter().any(|f| f.severity == Severity::Error && f.message.contains("ellipticity")), "{f:?}");
}

#[test]
fn proof_regime_conditions_are_warnings() {
    let text = format!("{MARKOV_WALK}\n[decoupling]\nalpha = 4.0\nc1 = 1.0\na = 2.0\n");
    let text = text.replace("k_max = 2", "k_max = 2\nk1 = 0\nspeed_margin = 0.1");
    let f = findings_for(&text, Kind::Density);
    assert!(f.iter().all(|f| f.severity == Severity::Warning), "{f:?}");
    for needle in ["condition1", "condition2 violated at k = 0", "condition_on_k1", "condition_on_k2", "2R+3", "exceed 11"] {
        assert!(f.iter().any(|f| f.message.contains(needle)), "{needle} not flagged: {f:?}");
    }
}

#[test]
fn gamma_check_and_decoupling_need_no_walker() {
    let text = r#"
[experiment_cli]
replicas = 1000
n_list = [1, 10]
epsilon = 0.999

[rng_field]
seed = 1

[environment]
model = "renewal"
beta = 1.5
probs = [0.5, 0.5]

[decoupling]
h_list = [8, 16]
"#;
    for kind in [Kind::GammaCheck, Kind::Decoupling] {
        let f = findings_for(text, kind);
        assert!(f.iter().all(|f| f.severity == Severity::Warning), "{kind}: {f:?}");
    }
}

#[test]
fn shipped_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs");
    let cases: [(&str, &[Kind]); 4] = [
        (
            "walk.toml",
            &[
                Kind::SpeedTable,
                Kind::SpeedBracket,
                Kind::TrapProbe,
                Kind::ThreatProbe,
                Kind::Density,
                Kind::Barrier,
                Kind::SkeletonCheck,
            ],
        ),
        ("lln.toml", &[Kind::SpeedBracket, Kind::DecayFit]),
        ("decoupling.toml", &[Kind::Decoupling]),
        ("gamma.toml", &[Kind::GammaCheck]),
    ];
    for (file, kinds) in cases {
        let cfg = ExperimentConfig::load(&dir.join(file)).unwrap();
        for &kind in kinds {
            let errors: Vec<_> = validate(&cfg, Some(kind), None).into_iter().filter(|f| f.severity == Severity::Error).collect();
            assert!(errors.is_empty(), "{file} as {kind}: {errors:?}");
        }
    }
}
