//! Command-line front end: configuration, suite orchestration and result
//! files.

pub mod config;
pub mod output;
pub mod suites;

use config::{emit_config, ConfigErrors, RunConfig};
use output::{sha256_hex, OutputDir, RunManifest, Status, ARTIFACT_VERSION};
use serde_json::Value;
use std::collections::BTreeMap;
use std::path::Path;
use std::time::{SystemTime, UNIX_EPOCH};
pub use suites::Suite;

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error(transparent)]
    Config(#[from] ConfigErrors),
    #[error(transparent)]
    Core(#[from] kicksim_core::Error),
    #[error("i/o: {0}")]
    Io(#[from] std::io::Error),
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

/// Process exit codes.
pub const EXIT_PASS: i32 = 0;
pub const EXIT_ERROR: i32 = 1;
pub const EXIT_FAIL: i32 = 2;
pub const EXIT_INCONCLUSIVE: i32 = 3;

pub fn exit_code(status: Status) -> i32 {
    match status {
        Status::Pass => EXIT_PASS,
        Status::Fail => EXIT_FAIL,
        Status::Inconclusive => EXIT_INCONCLUSIVE,
    }
}

/// Result of [`run`].
#[derive(Debug)]
pub struct RunOutcome {
    pub status: Status,
    pub manifest: RunManifest,
    pub summary: BTreeMap<String, Value>,
}

fn unix_now() -> f64 {
    SystemTime::now()
        .duration_since(UNIX_EPOCH)
        .map(|d| d.as_secs_f64())
        .unwrap_or(0.0)
}

/// Runs `suites` in order and writes `config.json`, the suite outputs,
/// `summary.json`, `manifest.json` and `timestamps.json` into `out`. After an
/// operational error the manifest is still written, marked incomplete.
pub fn run(command: &str, suites: &[Suite], cfg: &RunConfig, out: &Path, workers: usize) -> Result<RunOutcome, CliError> {
    let workers = workers.max(1);
    let started = unix_now();
    let mut dir = OutputDir::create(out)?;
    let config_text = emit_config(cfg);
    dir.write("config.json", &config_text)?;
    let mut manifest = RunManifest {
        artifact_version: ARTIFACT_VERSION.to_string(),
        command: command.to_string(),
        config_sha256: sha256_hex(config_text.as_bytes()),
        seed: cfg.seed,
        workers,
        h: cfg.simulation.h,
        energy_tol: cfg.simulation.energy_tol,
        complete: false,
        error: None,
        suites: BTreeMap::new(),
        files: Vec::new(),
    };
    let mut summary = BTreeMap::new();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(workers)
        .build()
        .map_err(|e| kicksim_core::Error::Config(format!("thread pool: {e}")))?;
    let result: Result<(), CliError> = pool.install(|| {
        let model = cfg.model_spec()?;
        for &s in suites {
            let mut ctx = suites::Context {
                cfg,
                model: &model,
                workers,
                out: &mut dir,
            };
            let o = suites::run_suite(s, &mut ctx)?;
            manifest.suites.insert(s.name().to_string(), o.status);
            summary.insert(s.name().to_string(), o.summary);
        }
        Ok(())
    });
    let status = manifest.suites.values().fold(Status::Pass, |a, b| a.and(*b));
    if let Err(e) = &result {
        manifest.error = Some(e.to_string());
    } else {
        manifest.complete = true;
    }
    dir.write_json("summary.json", &summary)?;
    manifest.files = dir.files().to_vec();
    let mut m = serde_json::to_string_pretty(&manifest)?;
    m.push('\n');
    std::fs::write(out.join("manifest.json"), m)?;
    let stamps = serde_json::json!({"started_unix": started, "finished_unix": unix_now()});
    std::fs::write(out.join("timestamps.json"), serde_json::to_string_pretty(&stamps)? + "\n")?;
    result?;
    Ok(RunOutcome {
        status,
        manifest,
        summary,
    })
}

/// Reads and validates a configuration file; `None` gives the defaults.
pub fn load_config(path: Option<&Path>) -> Result<RunConfig, CliError> {
    match path {
        Some(p) => Ok(config::parse_config(&std::fs::read_to_string(p)?)?),
        None => Ok(RunConfig::default()),
    }
}
