use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use arnsim::config::Config;
use arnsim::kernel::SimTime;
use arnsim::runner::{parse_vary, plan_sweep, run_experiment, run_sweep};
use arnsim::topology::NodeId;
use arnsim::traffic::{
    default_hotspot_dests, gen_chain, gen_ptranslike, hot_sources, PtransParams, Trace, TrafficKind,
};
use clap::{Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(
    name = "arnsim",
    version,
    about = "Lossless fat-tree congestion simulator"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Run one experiment.
    Simulate {
        #[arg(long)]
        config: PathBuf,
        /// Parent directory; results go to `<out>/<name>/`.
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Override any config key, e.g. `--set routing=arn_afi`.
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Run every combination of the varied keys.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// `key=v1,v2,key2=v3,...`; may be repeated.
        #[arg(long)]
        vary: Vec<String>,
        #[arg(long, default_value = "out")]
        out: PathBuf,
        #[arg(long, default_value_t = 1)]
        jobs: usize,
        #[arg(long)]
        seed: Option<u64>,
        #[arg(long = "set", value_name = "KEY=VALUE")]
        set: Vec<String>,
        #[arg(long)]
        quiet: bool,
    },
    /// Write a synthetic trace file.
    GenTrace {
        #[arg(long, value_enum)]
        pattern: Pattern,
        #[arg(long)]
        nodes: u32,
        #[arg(long)]
        out: PathBuf,
        /// Exchange rounds (ptranslike) or hops (chain).
        #[arg(long, default_value_t = 200)]
        rounds: u32,
        #[arg(long, default_value_t = 65536)]
        bytes: u64,
        /// Issue gap between rounds in microseconds.
        #[arg(long, default_value_t = 40.0)]
        gap_us: f64,
        /// Endnodes left out of the trace, comma separated.
        #[arg(long, value_delimiter = ',')]
        exclude: Vec<NodeId>,
        /// Also leave out the hot sources and hotspots of this incast kind.
        #[arg(long, value_name = "TRAFFIC")]
        avoid_incast: Option<TrafficKind>,
        /// Keep every n-th remaining endnode.
        #[arg(long, default_value_t = 1)]
        stride: usize,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Pattern {
    Ptranslike,
    Chain,
}

fn overrides(seed: Option<u64>, set: &[String]) -> Result<Vec<(String, String)>, String> {
    let mut ov = vec![];
    for s in set {
        let (k, v) = s
            .split_once('=')
            .ok_or_else(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        ov.push((k.trim().to_string(), v.trim().to_string()));
    }
    if let Some(s) = seed {
        ov.push(("seed".into(), s.to_string()));
    }
    Ok(ov)
}

fn read(path: &Path) -> Result<String, ExitCode> {
    fs::read_to_string(path).map_err(|e| {
        eprintln!("error: {}: {e}", path.display());
        ExitCode::from(2)
    })
}

fn report(quiet: bool, name: &str, dir: &Path, summary: &arnsim::metrics::Summary) {
    if quiet {
        return;
    }
    let keys = [
        "mean_efficiency",
        "recovery_time_us",
        "makespan_us",
        "delivered_packets",
        "drained",
    ];
    let parts: Vec<String> = keys
        .iter()
        .filter_map(|k| summary.get(k).map(|v| format!("{k}={v}")))
        .collect();
    println!("{name}: {} -> {}", parts.join(" "), dir.display());
}

fn simulate(
    config: &Path,
    out: &Path,
    seed: Option<u64>,
    set: &[String],
    quiet: bool,
) -> Result<(), ExitCode> {
    let text = read(config)?;
    let ov = overrides(seed, set).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    let cfg = Config::parse_with_overrides(&text, &ov).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(2)
    })?;
    let dir = out.join(&cfg.name);
    match run_experiment(&cfg, &dir, config.parent()) {
        Ok(o) => {
            report(quiet, &cfg.name, &dir, &o.summary);
            Ok(())
        }
        Err(e) => {
            eprintln!("error: {e}");
            Err(ExitCode::from(e.exit_code() as u8))
        }
    }
}

#[allow(clippy::too_many_arguments)]
fn sweep(
    config: &Path,
    vary: &[String],
    out: &Path,
    jobs: usize,
    seed: Option<u64>,
    set: &[String],
    quiet: bool,
) -> Result<(), ExitCode> {
    let text = read(config)?;
    let bad = |e: String| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    };
    let ov = overrides(seed, set).map_err(bad)?;
    let mut axes = vec![];
    for v in vary {
        for axis in parse_vary(v).map_err(bad)? {
            if axes
                .iter()
                .any(|(k, _): &(String, Vec<String>)| *k == axis.0)
            {
                return Err(bad(format!("key `{}` varied twice", axis.0)));
            }
            axes.push(axis);
        }
    }
    let runs = plan_sweep(&text, &ov, &axes).map_err(|e| {
        eprintln!("{e}");
        ExitCode::from(2)
    })?;
    let mut code = None;
    for o in run_sweep(&runs, out, config.parent(), jobs) {
        match o.result {
            Ok(r) => report(quiet, &o.name, &o.dir, &r.summary),
            Err(e) => {
                eprintln!("{}: error: {e}", o.name);
                code.get_or_insert(e.exit_code() as u8);
            }
        }
    }
    match code {
        Some(c) => Err(ExitCode::from(c)),
        None => Ok(()),
    }
}

struct TraceArgs {
    pattern: Pattern,
    nodes: u32,
    rounds: u32,
    bytes: u64,
    gap_us: f64,
    exclude: Vec<NodeId>,
    avoid_incast: Option<TrafficKind>,
    stride: usize,
}

fn gen_trace(a: TraceArgs, out: &Path) -> Result<(), ExitCode> {
    let TraceArgs {
        pattern,
        nodes,
        rounds,
        bytes,
        gap_us,
        mut exclude,
        avoid_incast,
        stride,
    } = a;
    if let Some(kind) = avoid_incast.filter(|k| k.is_incast()) {
        let dests = default_hotspot_dests(kind.hotspot_count(), nodes);
        exclude.extend(
            hot_sources(kind.hot_fraction(), nodes, &dests)
                .iter()
                .map(|h| h.0),
        );
        exclude.extend(dests);
    }
    let members: Vec<NodeId> = (0..nodes)
        .filter(|n| !exclude.contains(n))
        .step_by(stride.max(1))
        .collect();
    if members.len() < 2 {
        eprintln!("error: a trace needs at least two endnodes");
        return Err(ExitCode::from(2));
    }
    let msgs = match pattern {
        Pattern::Ptranslike => gen_ptranslike(
            &members,
            PtransParams {
                rounds,
                bytes,
                gap: SimTime::from_us_f64(gap_us),
            },
        ),
        Pattern::Chain => gen_chain(&members, rounds, bytes),
    };
    let trace = Trace::new(msgs, nodes).map_err(|e| {
        eprintln!("error: {e}");
        ExitCode::from(2)
    })?;
    fs::write(out, trace.to_text()).map_err(|e| {
        eprintln!("error: {}: {e}", out.display());
        ExitCode::from(3)
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let r = match cli.cmd {
        Cmd::Simulate {
            config,
            out,
            seed,
            set,
            quiet,
        } => simulate(&config, &out, seed, &set, quiet),
        Cmd::Sweep {
            config,
            vary,
            out,
            jobs,
            seed,
            set,
            quiet,
        } => sweep(&config, &vary, &out, jobs, seed, &set, quiet),
        Cmd::GenTrace {
            pattern,
            nodes,
            out,
            rounds,
            bytes,
            gap_us,
            exclude,
            avoid_incast,
            stride,
        } => gen_trace(
            TraceArgs {
                pattern,
                nodes,
                rounds,
                bytes,
                gap_us,
                exclude,
                avoid_incast,
                stride,
            },
            &out,
        ),
    };
    match r {
        Ok(()) => ExitCode::SUCCESS,
        Err(c) => c,
    }
}
