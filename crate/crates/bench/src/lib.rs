//! Fixtures shared by the benchmarks.

use arnsim::traffic::{gen_ptranslike, PtransParams};
use arnsim::{Config, NodeId, SimTime, Trace};

/// Desk-scale network running `traffic` for `sim_ms`.
pub fn desk(routing: &str, traffic: &str, sim_ms: f64) -> Config {
    let warm = sim_ms / 10.0;
    Config::parse(&format!(
        "ports = 8\nstages = 3\nrouting = {routing}\ntraffic = {traffic}\n\
         warmup_ms = {warm}\nhotspot_ms = {}\nsim_ms = {sim_ms}\n",
        sim_ms - 2.0 * warm
    ))
    .expect("bench config")
}

/// PTRANS-like trace over all `n` endnodes.
pub fn ptrans(n: u32, rounds: u32) -> Trace {
    let nodes: Vec<NodeId> = (0..n).collect();
    let msgs = gen_ptranslike(
        &nodes,
        PtransParams {
            rounds,
            bytes: 65536,
            gap: SimTime::ZERO,
        },
    );
    Trace::new(msgs, n).expect("valid trace")
}
