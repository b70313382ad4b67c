//! Orchestration: thread pool setup, artifact bookkeeping, manifests and
//! bit-exact replay.

use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::experiments::run_experiment;
use crate::manifest::{sha256_file, ArtifactEntry, Manifest, StageTiming, CODE_VERSION};
use exp_sq_core::{Error, Result};

/// Exit status semantics shared by run and replay.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    /// All embedded assertions passed (exit 0).
    Pass,
    /// At least one assertion failed (exit 1).
    AssertionFailure,
}

#[derive(Debug, Clone, Copy)]
pub struct Overrides {
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

pub fn effective_threads(cfg: &ExperimentConfig, overrides: &Overrides) -> usize {
    overrides
        .threads
        .or(cfg.run.thread_count)
        .or_else(|| {
            std::env::var("EXP_SQ_LAB_THREADS")
                .ok()
                .and_then(|s| s.parse().ok())
        })
        .unwrap_or_else(|| {
            std::thread::available_parallelism()
                .map(|n| n.get())
                .unwrap_or(1)
        })
        .max(1)
}

/// Runs an experiment end to end: validates, executes inside a dedicated
/// thread pool, hashes artifacts and writes the manifest.
pub fn run(
    cfg: &ExperimentConfig,
    out_dir: &Path,
    overrides: &Overrides,
) -> Result<(Manifest, Outcome)> {
    let started = Instant::now();
    let mut timings = Vec::new();

    let t0 = Instant::now();
    let resolved = cfg.resolve()?;
    timings.push(StageTiming { stage: "validate".into(), seconds: t0.elapsed().as_secs_f64() });

    std::fs::create_dir_all(out_dir)?;
    let master_seed = overrides.seed.unwrap_or(cfg.run.master_seed);
    let threads = effective_threads(cfg, overrides);

    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build()
        .map_err(|e| Error::InvalidParameter(format!("thread pool: {e}")))?;

    let t1 = Instant::now();
    let result = pool.install(|| run_experiment(cfg, &resolved, out_dir, master_seed))?;
    timings.push(StageTiming { stage: "compute".into(), seconds: t1.elapsed().as_secs_f64() });

    let t2 = Instant::now();
    let mut artifacts = Vec::new();
    for path in &result.artifacts {
        let (sha256, bytes) = sha256_file(path)?;
        artifacts.push(ArtifactEntry {
            name: path
                .file_name()
                .map(|s| s.to_string_lossy().into_owned())
                .unwrap_or_default(),
            sha256,
            bytes,
        });
    }
    timings.push(StageTiming { stage: "hash".into(), seconds: t2.elapsed().as_secs_f64() });

    let mut cfg_echo = cfg.clone();
    cfg_echo.run.master_seed = master_seed;
    let manifest = Manifest {
        version: CODE_VERSION.to_string(),
        experiment: cfg.experiment.name().to_string(),
        config: cfg_echo,
        model_params: resolved.params,
        master_seed,
        threads,
        wall_time_s: started.elapsed().as_secs_f64(),
        stage_timings: timings,
        artifacts,
        assertions: result.assertions,
    };
    manifest.write(&out_dir.join("manifest.json"))?;

    let outcome = if manifest.all_pass() {
        Outcome::Pass
    } else {
        Outcome::AssertionFailure
    };
    Ok((manifest, outcome))
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ReplayReport {
    pub identical: bool,
    /// First artifact (and line) that diverged, if any.
    pub first_divergence: Option<(String, usize)>,
    pub rerun_dir: String,
}

/// Reruns a manifest bit-exactly and diffs the artifacts against the stored
/// hashes. Thread count may differ; outputs may not.
pub fn replay(
    manifest_path: &Path,
    threads: Option<usize>,
) -> Result<(ReplayReport, Outcome)> {
    let manifest = Manifest::read(manifest_path)?;
    if manifest.version != CODE_VERSION {
        return Err(Error::InvalidParameter(format!(
            "manifest was produced by version {} but this binary is {}; refusing to replay",
            manifest.version, CODE_VERSION
        )));
    }
    let base_dir = manifest_path
        .parent()
        .map(Path::to_path_buf)
        .unwrap_or_else(|| PathBuf::from("."));
    let rerun_dir = base_dir.join("replay");
    std::fs::create_dir_all(&rerun_dir)?;

    let overrides = Overrides { seed: Some(manifest.master_seed), threads };
    let (rerun_manifest, _) = run(&manifest.config, &rerun_dir, &overrides)?;

    let mut identical = true;
    let mut first_divergence = None;
    for stored in &manifest.artifacts {
        let rerun = rerun_manifest
            .artifacts
            .iter()
            .find(|a| a.name == stored.name);
        match rerun {
            Some(r) if r.sha256 == stored.sha256 => {}
            _ => {
                identical = false;
                let line = first_divergent_line(
                    &base_dir.join(&stored.name),
                    &rerun_dir.join(&stored.name),
                );
                first_divergence = Some((stored.name.clone(), line));
                break;
            }
        }
    }

    let report = ReplayReport {
        identical,
        first_divergence,
        rerun_dir: rerun_dir.to_string_lossy().into_owned(),
    };
    std::fs::write(
        base_dir.join("replay_report.json"),
        serde_json::to_string_pretty(&report)
            .map_err(|e| Error::InvalidParameter(e.to_string()))?,
    )?;
    let outcome = if identical { Outcome::Pass } else { Outcome::AssertionFailure };
    Ok((report, outcome))
}

fn first_divergent_line(a: &Path, b: &Path) -> usize {
    let read = |p: &Path| std::fs::read_to_string(p).unwrap_or_default();
    let ta = read(a);
    let tb = read(b);
    for (i, (la, lb)) in ta.lines().zip(tb.lines()).enumerate() {
        if la != lb {
            return i + 1;
        }
    }
    ta.lines().count().min(tb.lines().count()) + 1
}
