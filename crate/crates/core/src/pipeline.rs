//! Run orchestration: validate, solve, oracles, harness, then persist.

use std::path::{Path, PathBuf};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::error::{KimuraError, Result};
use crate::experiments::{Experiment, MonteCarloParams, Session};
use crate::harness::EstimateReport;
use crate::io::{
    read_snapshot, render_text, series_csv, unix_now, write_ensemble, write_once, write_snapshot,
    Bundle, ExperimentFailure, Timing, FAILURE_MARKER, REPORT_FILE, TEXT_FILE, TIMING_FILE,
};

/// Environment variable holding the default worker count.
pub const THREADS_ENV: &str = "KIMURA_THREADS";

const VALIDATION_LATTICE: usize = 9;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Command {
    Validate,
    Solve,
    Verify,
    Harnack,
    McCompare,
    Run,
}

impl Command {
    pub fn name(self) -> &'static str {
        match self {
            Self::Validate => "validate",
            Self::Solve => "solve",
            Self::Verify => "verify",
            Self::Harnack => "harnack",
            Self::McCompare => "mc-compare",
            Self::Run => "run",
        }
    }

    fn selects(self, e: &Experiment) -> bool {
        match self {
            Self::Validate | Self::Solve => false,
            Self::Verify => e.uses_trajectories(),
            Self::Harnack => e.is_harnack(),
            Self::McCompare => matches!(e, Experiment::MonteCarlo(_)),
            Self::Run => true,
        }
    }

    fn writes_snapshots(self) -> bool {
        matches!(self, Self::Solve | Self::Run)
    }
}

#[derive(Clone, Debug, Default)]
pub struct RunOptions {
    /// Worker threads; falls back to `KIMURA_THREADS`, then the machine.
    pub threads: Option<usize>,
    /// Directory searched for `traj-*.bin` snapshots before solving.
    pub snapshot_dir: Option<PathBuf>,
}

#[derive(Debug)]
pub struct RunOutcome {
    pub bundle: Bundle,
    pub dir: PathBuf,
}

impl RunOutcome {
    /// True iff every non-vacuous experiment passed and nothing errored.
    pub fn passed(&self) -> bool {
        self.bundle.status == "pass"
    }
}

pub fn thread_count(explicit: Option<usize>) -> Option<usize> {
    explicit
        .or_else(|| {
            std::env::var(THREADS_ENV)
                .ok()
                .and_then(|s| s.trim().parse().ok())
        })
        .filter(|&n| n > 0)
}

fn snapshot_name(which: u8, cells: usize) -> String {
    format!("traj-{which}-{cells}.bin")
}

fn experiment_list(cfg: &ExperimentConfig, cmd: Command) -> Vec<Experiment> {
    let mut list: Vec<Experiment> = cfg
        .experiments
        .iter()
        .filter(|e| cmd.selects(e))
        .cloned()
        .collect();
    if cmd == Command::McCompare && list.is_empty() {
        list.push(Experiment::MonteCarlo(MonteCarloParams::default()));
    }
    list
}

struct Writer {
    dir: PathBuf,
    artifacts: Vec<String>,
}

impl Writer {
    fn put(&mut self, rel: &str, bytes: &[u8]) -> Result<()> {
        write_once(&self.dir.join(rel), bytes)?;
        self.artifacts.push(rel.to_string());
        Ok(())
    }
}

/// Execute `cmd` and write its bundle into `out`, which must not already
/// hold a bundle. Experiment errors produce a partial bundle plus a
/// failure marker rather than an `Err`.
pub fn execute(
    cfg: &ExperimentConfig,
    cmd: Command,
    out: &Path,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    if out.join(REPORT_FILE).exists() {
        return Err(KimuraError::Config {
            path: "out".into(),
            message: format!("{} already holds a bundle", out.display()),
        });
    }
    std::fs::create_dir_all(out)?;
    let pool = {
        let mut b = rayon::ThreadPoolBuilder::new();
        if let Some(n) = thread_count(opts.threads) {
            b = b.num_threads(n);
        }
        b.build().map_err(|e| KimuraError::Config {
            path: "threads".into(),
            message: e.to_string(),
        })?
    };
    pool.install(|| execute_in_pool(cfg, cmd, out, opts))
}

fn execute_in_pool(
    cfg: &ExperimentConfig,
    cmd: Command,
    out: &Path,
    opts: &RunOptions,
) -> Result<RunOutcome> {
    let started = unix_now();
    let mut timing = Timing {
        started_unix: started,
        ..Default::default()
    };
    let mut w = Writer {
        dir: out.to_path_buf(),
        artifacts: Vec::new(),
    };
    let hash = cfg.hash();
    w.put("config.toml", cfg.to_toml().as_bytes())?;

    let session = Session::new(cfg.setup(), hash.clone(), cfg.seed)?;
    let validation = session.op.validate(VALIDATION_LATTICE)?;
    let mut bundle = Bundle {
        schema_version: crate::config::SCHEMA_VERSION,
        name: cfg.name.clone(),
        command: cmd.name().into(),
        config_hash: hash,
        seed: cfg.seed,
        status: String::new(),
        validation: Some(validation.clone()),
        reports: Vec::new(),
        errors: Vec::new(),
        artifacts: Vec::new(),
    };
    let invalid = cfg.validate_operator && !validation.passed();

    if !invalid {
        let experiments = experiment_list(cfg, cmd);
        let needs_traj =
            cmd.writes_snapshots() || experiments.iter().any(Experiment::uses_trajectories);
        if needs_traj {
            let t0 = std::time::Instant::now();
            if let Err(e) = prepare_trajectories(&session, opts) {
                bundle.errors.push(ExperimentFailure {
                    experiment: "solve".into(),
                    error: e.to_string(),
                });
            }
            timing
                .seconds
                .push(("solve".into(), t0.elapsed().as_secs_f64()));
        }
        if bundle.errors.is_empty() {
            let results: Vec<(Result<EstimateReport>, f64)> = experiments
                .par_iter()
                .map(|e| {
                    let t0 = std::time::Instant::now();
                    (session.run(e), t0.elapsed().as_secs_f64())
                })
                .collect();
            for (e, (res, secs)) in experiments.iter().zip(results) {
                timing.seconds.push((e.name().into(), secs));
                match res {
                    Ok(r) => bundle.reports.push(r),
                    Err(err) => bundle.errors.push(ExperimentFailure {
                        experiment: e.name().into(),
                        error: err.to_string(),
                    }),
                }
            }
        }
        for (k, r) in bundle.reports.iter().enumerate() {
            if !r.series.is_empty() {
                w.put(
                    &format!("series/{k:02}-{}.csv", r.tag),
                    series_csv(r)?.as_bytes(),
                )?;
            }
        }
        if cmd.writes_snapshots() {
            for ((which, cells), traj) in session.cached() {
                let rel = format!("snapshots/{}", snapshot_name(which, cells));
                write_snapshot(&out.join(&rel), &traj)?;
                w.artifacts.push(rel.clone());
                w.artifacts.push(rel.replace(".bin", ".json"));
            }
        }
        for (name, e) in session.ensembles() {
            let rel = format!("ensembles/{name}.bin");
            write_ensemble(&out.join(&rel), &e)?;
            w.artifacts.push(rel.clone());
            w.artifacts.push(rel.replace(".bin", ".json"));
        }
    }

    bundle.status = if invalid {
        "invalid-operator".into()
    } else if !bundle.errors.is_empty() {
        "error".into()
    } else if bundle.reports.iter().all(|r| r.verdict.passed()) {
        "pass".into()
    } else {
        "fail".into()
    };
    if !bundle.errors.is_empty() {
        let msg: Vec<String> = bundle
            .errors
            .iter()
            .map(|e| format!("{}: {}", e.experiment, e.error))
            .collect();
        w.put(FAILURE_MARKER, (msg.join("\n") + "\n").as_bytes())?;
    }
    w.artifacts.push(TEXT_FILE.into());
    w.artifacts.push(TIMING_FILE.into());
    bundle.artifacts = w.artifacts.clone();
    let json = serde_json::to_string_pretty(&bundle)?;
    let text = render_text(&serde_json::from_str(&json)?)?;
    w.put(REPORT_FILE, (json + "\n").as_bytes())?;
    w.put(TEXT_FILE, text.as_bytes())?;
    timing.finished_unix = unix_now();
    w.put(
        TIMING_FILE,
        serde_json::to_string_pretty(&timing)?.as_bytes(),
    )?;
    Ok(RunOutcome {
        bundle,
        dir: out.to_path_buf(),
    })
}

/// Load cached snapshots where available and solve the rest, both initial
/// data on every refinement level.
fn prepare_trajectories(session: &Session, opts: &RunOptions) -> Result<()> {
    let levels = session.setup.grid.levels();
    let mut missing = Vec::new();
    for &cells in &levels {
        for which in [0u8, 1] {
            let cached = opts
                .snapshot_dir
                .as_ref()
                .map(|d| d.join(snapshot_name(which, cells)))
                .filter(|p| p.exists());
            match cached {
                Some(p) => {
                    let traj = read_snapshot(&p)?;
                    let grid = session.grid(cells)?;
                    let s = &session.setup.scheme;
                    if traj.grid.axes() != grid.axes()
                        || traj.meta.dt != s.dt
                        || traj.meta.scheme != s.scheme
                    {
                        return Err(KimuraError::Format(format!(
                            "{} does not match the config grid or scheme",
                            p.display()
                        )));
                    }
                    session.insert_trajectory(which, cells, traj)
                }
                None => missing.push((which, cells)),
            }
        }
    }
    missing
        .par_iter()
        .map(|&(which, cells)| session.trajectory(which, cells).map(|_| ()))
        .collect::<Result<Vec<()>>>()?;
    Ok(())
}
