use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use rwre::{ExperimentConfig, Kind, Severity, OUT_DIR_VAR};

/// Run random-walk experiments from a TOML config.
///
/// COMMAND is an experiment kind (speed-table, speed-bracket, decay-fit,
/// trap-probe, threat-probe, density, barrier, decoupling, skeleton-check,
/// gamma-check), `validate` to only check a config, or `replay` to re-run a
/// manifest and compare output digests.
#[derive(Parser, Debug)]
#[command(name = "rwre", version)]
struct Cli {
    command: String,
    /// Config file (TOML), or manifest.json for `replay`.
    #[arg(long)]
    config: PathBuf,
    /// Overrides rng_field.seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads; 0 uses every core. Does not change the outputs.
    #[arg(long, default_value_t = 0)]
    workers: usize,
    /// Output directory. Defaults to experiment_cli.out_dir, then $RWRE_OUT_DIR, then ./rwre-out.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Experiment kind to validate against (for `validate`).
    #[arg(long)]
    kind: Option<Kind>,
}

fn out_dir(cli: &Cli, cfg: Option<&ExperimentConfig>) -> PathBuf {
    cli.out
        .clone()
        .or_else(|| cfg.and_then(|c| c.experiment_cli.out_dir.clone()).map(PathBuf::from))
        .or_else(|| std::env::var_os(OUT_DIR_VAR).map(PathBuf::from))
        .unwrap_or_else(|| PathBuf::from("rwre-out"))
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match cli.command.as_str() {
        "replay" => {
            let dir = out_dir(&cli, None);
            match rwre::replay(&cli.config, cli.workers, &dir) {
                Ok((report, differing)) => {
                    report.summary.iter().for_each(|l| println!("{l}"));
                    if differing.is_empty() {
                        println!("replay reproduced {} output files bit-exactly", report.manifest.outputs.len());
                        ExitCode::SUCCESS
                    } else {
                        eprintln!("digest mismatch: {}", differing.join(", "));
                        ExitCode::from(2)
                    }
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
        command => {
            let kind = match command {
                "validate" => cli.kind,
                other => match other.parse::<Kind>() {
                    Ok(k) => Some(k),
                    Err(e) => {
                        eprintln!("{e}");
                        return ExitCode::from(1);
                    }
                },
            };
            let cfg = match ExperimentConfig::load(&cli.config) {
                Ok(c) => c,
                Err(e) => {
                    eprintln!("error: {e}");
                    return ExitCode::from(1);
                }
            };
            if command == "validate" {
                let findings = rwre::validate(&cfg, kind, cli.seed);
                findings.iter().for_each(|f| println!("{f}"));
                return if findings.iter().any(|f| f.severity == Severity::Error) {
                    ExitCode::from(1)
                } else {
                    println!("config is valid");
                    ExitCode::SUCCESS
                };
            }
            let dir = out_dir(&cli, Some(&cfg));
            match rwre::run(&cfg, kind, cli.seed, cli.workers, &dir) {
                Ok(report) => {
                    report.manifest.warnings.iter().for_each(|w| eprintln!("{w}"));
                    report.summary.iter().for_each(|l| println!("{l}"));
                    println!("outputs written to {}", report.out_dir.display());
                    ExitCode::SUCCESS
                }
                Err(e) => {
                    eprintln!("{e}");
                    ExitCode::from(e.exit_code() as u8)
                }
            }
        }
    }
}
