//! Experiment orchestration: single runs, sweeps and the on-disk layout.

use std::fs;
use std::io;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use thiserror::Error;

use crate::config::{parse_lines, Config, ConfigError};
use crate::sim::{arn_log_csv, detector_log_csv, simulate, RunOutput, SimError, Workload};
use crate::traffic::{Trace, TrafficKind};

pub const EFFICIENCY_FILE: &str = "efficiency.csv";
pub const SUMMARY_FILE: &str = "summary.txt";
pub const CONFIG_FILE: &str = "config.txt";
pub const ARN_FILE: &str = "arn_events.csv";
pub const DETECTOR_FILE: &str = "detector_events.csv";
pub const FAILED_FILE: &str = "FAILED";

#[derive(Debug, Error)]
pub enum RunError {
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("{0}")]
    Setup(String),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error("output {path}: {source}")]
    Io { path: PathBuf, source: io::Error },
}

impl RunError {
    /// Process exit code: 2 for configuration problems, 3 otherwise.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Config(_) | RunError::Setup(_) | RunError::Sim(SimError::Config(_)) => 2,
            _ => 3,
        }
    }
}

fn io_err(path: &Path) -> impl FnOnce(io::Error) -> RunError + '_ {
    move |source| RunError::Io {
        path: path.to_path_buf(),
        source,
    }
}

/// Workload described by the config; loads the trace file if any.
pub fn workload_for(cfg: &Config, base: Option<&Path>) -> Result<Workload, RunError> {
    if cfg.traffic != TrafficKind::Trace {
        return Ok(Workload::Synthetic);
    }
    let Some(file) = &cfg.trace_file else {
        return Err(RunError::Setup("traffic = trace needs trace_file".into()));
    };
    let path = match base {
        Some(b) if file.is_relative() => b.join(file),
        _ => file.clone(),
    };
    let text = fs::read_to_string(&path)
        .map_err(|e| RunError::Setup(format!("trace_file {}: {e}", path.display())))?;
    let trace = Trace::parse(&text, cfg.endnodes())
        .map_err(|e| RunError::Setup(format!("trace_file {}: {e}", path.display())))?;
    Ok(Workload::Trace(trace))
}

fn write_atomic(dir: &Path, name: &str, body: &str) -> Result<(), RunError> {
    let tmp = dir.join(format!(".{name}.tmp"));
    fs::write(&tmp, body).map_err(io_err(&tmp))?;
    let dst = dir.join(name);
    fs::rename(&tmp, &dst).map_err(io_err(&dst))
}

/// Runs one experiment and writes its artifacts into `dir`. A failed run
/// leaves a `FAILED` marker and no result CSVs.
pub fn run_experiment(
    cfg: &Config,
    dir: &Path,
    trace_base: Option<&Path>,
) -> Result<RunOutput, RunError> {
    fs::create_dir_all(dir).map_err(io_err(dir))?;
    for f in [
        EFFICIENCY_FILE,
        SUMMARY_FILE,
        ARN_FILE,
        DETECTOR_FILE,
        FAILED_FILE,
    ] {
        let p = dir.join(f);
        if p.exists() {
            fs::remove_file(&p).map_err(io_err(&p))?;
        }
    }
    write_atomic(dir, CONFIG_FILE, &cfg.to_text())?;
    let result = workload_for(cfg, trace_base).and_then(|w| Ok(simulate(cfg, w)?));
    let out = match result {
        Ok(o) => o,
        Err(e) => {
            let _ = fs::write(dir.join(FAILED_FILE), format!("{e}\n"));
            return Err(e);
        }
    };
    let written = (|| {
        write_atomic(dir, EFFICIENCY_FILE, &out.efficiency.to_csv())?;
        if cfg.arn_log {
            write_atomic(dir, ARN_FILE, &arn_log_csv(&out.arn_log))?;
        }
        if cfg.detector_log {
            write_atomic(dir, DETECTOR_FILE, &detector_log_csv(&out.detector_log))?;
        }
        write_atomic(dir, SUMMARY_FILE, &out.summary.to_text())
    })();
    if let Err(e) = written {
        let _ = fs::write(dir.join(FAILED_FILE), format!("{e}\n"));
        return Err(e);
    }
    Ok(out)
}

/// Parses `key=v1,v2,key2=v3,...`. A token without `=` adds a value to the
/// preceding key.
pub fn parse_vary(spec: &str) -> Result<Vec<(String, Vec<String>)>, String> {
    let mut out: Vec<(String, Vec<String>)> = vec![];
    for tok in spec.split(',').map(str::trim).filter(|t| !t.is_empty()) {
        match tok.split_once('=') {
            Some((k, v)) => {
                let k = k.trim().to_string();
                if out.iter().any(|(x, _)| *x == k) {
                    return Err(format!("key `{k}` varied twice"));
                }
                out.push((k, vec![v.trim().to_string()]));
            }
            None => match out.last_mut() {
                Some((_, vals)) => vals.push(tok.to_string()),
                None => return Err(format!("value `{tok}` before any key")),
            },
        }
    }
    if out.is_empty() {
        return Err("empty --vary".into());
    }
    Ok(out)
}

/// Cartesian product of the varied values.
pub fn expand_vary(vary: &[(String, Vec<String>)]) -> Vec<Vec<(String, String)>> {
    let mut combos: Vec<Vec<(String, String)>> = vec![vec![]];
    for (k, vals) in vary {
        combos = combos
            .into_iter()
            .flat_map(|c| {
                vals.iter().map(move |v| {
                    let mut c = c.clone();
                    c.push((k.clone(), v.clone()));
                    c
                })
            })
            .collect();
    }
    combos
}

/// Splits `sweep = key=v,key=v` lines out of a config file. Each such line
/// is one explicit run.
pub fn split_sweep_lines(text: &str) -> (String, Vec<Vec<(String, String)>>) {
    let mut base = String::new();
    let mut runs = vec![];
    for line in text.lines() {
        let body = line.split('#').next().unwrap_or("").trim();
        if let Some((k, v)) = body.split_once('=') {
            if k.trim() == "sweep" {
                let combo = v
                    .split(',')
                    .filter_map(|kv| kv.split_once('='))
                    .map(|(a, b)| (a.trim().to_string(), b.trim().to_string()))
                    .collect();
                runs.push(combo);
                continue;
            }
        }
        base.push_str(line);
        base.push('\n');
    }
    (base, runs)
}

#[derive(Debug, Clone)]
pub struct SweepRun {
    pub name: String,
    pub config: Config,
}

/// Resolves every run of a sweep. All configuration errors are reported
/// before anything runs.
pub fn plan_sweep(
    text: &str,
    overrides: &[(String, String)],
    vary: &[(String, Vec<String>)],
) -> Result<Vec<SweepRun>, ConfigError> {
    let (base, explicit) = split_sweep_lines(text);
    parse_lines(&base)?;
    let mut combos = explicit;
    if !vary.is_empty() {
        let expanded = expand_vary(vary);
        combos = if combos.is_empty() {
            expanded
        } else {
            combos
                .iter()
                .flat_map(|c| {
                    expanded.iter().map(move |e| {
                        let mut c = c.clone();
                        c.extend(e.iter().cloned());
                        c
                    })
                })
                .collect()
        };
    }
    if combos.is_empty() {
        combos.push(vec![]);
    }
    let mut runs = vec![];
    let mut errors = vec![];
    for combo in combos {
        let mut ov = overrides.to_vec();
        ov.extend(combo.iter().cloned());
        match Config::parse_with_overrides(&base, &ov) {
            Ok(mut cfg) => {
                let suffix: Vec<&str> = combo.iter().map(|(_, v)| v.as_str()).collect();
                if !suffix.is_empty() {
                    cfg.name = format!("{}_{}", cfg.name, suffix.join("_"));
                }
                runs.push(SweepRun {
                    name: cfg.name.clone(),
                    config: cfg,
                });
            }
            Err(ConfigError(es)) => {
                let tag: Vec<String> = combo.iter().map(|(k, v)| format!("{k}={v}")).collect();
                errors.extend(es.into_iter().map(|e| format!("[{}] {e}", tag.join(","))));
            }
        }
    }
    if !errors.is_empty() {
        return Err(ConfigError(errors));
    }
    let mut seen = std::collections::HashSet::new();
    for r in &runs {
        if !seen.insert(r.name.clone()) {
            return Err(ConfigError(vec![format!(
                "duplicate run name `{}`",
                r.name
            )]));
        }
    }
    Ok(runs)
}

#[derive(Debug)]
pub struct SweepOutcome {
    pub name: String,
    pub dir: PathBuf,
    pub result: Result<RunOutput, RunError>,
}

/// Executes runs into `out/<name>/`, `jobs` at a time.
pub fn run_sweep(
    runs: &[SweepRun],
    out: &Path,
    trace_base: Option<&Path>,
    jobs: usize,
) -> Vec<SweepOutcome> {
    let jobs = jobs.clamp(1, runs.len().max(1));
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<SweepOutcome>>> =
        Mutex::new((0..runs.len()).map(|_| None).collect());
    std::thread::scope(|s| {
        for _ in 0..jobs {
            s.spawn(|| loop {
                let i = next.fetch_add(1, Ordering::SeqCst);
                let Some(run) = runs.get(i) else { break };
                let dir = out.join(&run.name);
                let result = run_experiment(&run.config, &dir, trace_base);
                results.lock().unwrap()[i] = Some(SweepOutcome {
                    name: run.name.clone(),
                    dir,
                    result,
                });
            });
        }
    });
    results
        .into_inner()
        .unwrap()
        .into_iter()
        .map(|o| o.expect("every run executed"))
        .collect()
}
