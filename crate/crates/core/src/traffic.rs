//! Workloads: uniform random, incast hotspots and dependency-ordered traces.

use std::collections::HashMap;
use std::fmt::{self, Write as _};
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::kernel::SimTime;
use crate::topology::NodeId;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TrafficKind {
    Uniform,
    Hs10,
    Hs25,
    Hs10x4,
    Hs25x4,
    Trace,
}

impl TrafficKind {
    pub fn as_str(self) -> &'static str {
        match self {
            TrafficKind::Uniform => "uniform",
            TrafficKind::Hs10 => "hs10",
            TrafficKind::Hs25 => "hs25",
            TrafficKind::Hs10x4 => "hs10x4",
            TrafficKind::Hs25x4 => "hs25x4",
            TrafficKind::Trace => "trace",
        }
    }

    /// Fraction of endnodes sending to the hotspot, zero for non-incast kinds.
    pub fn hot_fraction(self) -> f64 {
        match self {
            TrafficKind::Hs10 | TrafficKind::Hs10x4 => 0.10,
            TrafficKind::Hs25 | TrafficKind::Hs25x4 => 0.25,
            _ => 0.0,
        }
    }

    pub fn is_incast(self) -> bool {
        self.hot_fraction() > 0.0
    }

    pub fn hotspot_count(self) -> usize {
        match self {
            TrafficKind::Hs10x4 | TrafficKind::Hs25x4 => 4,
            TrafficKind::Hs10 | TrafficKind::Hs25 => 1,
            _ => 0,
        }
    }
}

impl fmt::Display for TrafficKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for TrafficKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "uniform" => TrafficKind::Uniform,
            "hs10" => TrafficKind::Hs10,
            "hs25" => TrafficKind::Hs25,
            "hs10x4" => TrafficKind::Hs10x4,
            "hs25x4" => TrafficKind::Hs25x4,
            "trace" => TrafficKind::Trace,
            other => {
                return Err(format!(
                    "unknown traffic `{other}` (expected uniform|hs10|hs25|hs10x4|hs25x4|trace)"
                ))
            }
        })
    }
}

const FOUR_432: [NodeId; 4] = [4, 120, 244, 431];
const FOUR_3456: [NodeId; 4] = [0, 889, 1772, 3454];

/// Default hotspot destinations for `count` hotspots on an `n`-node network.
pub fn default_hotspot_dests(count: usize, n: u32) -> Vec<NodeId> {
    match count {
        0 => vec![],
        1 => vec![if n > 4 { 4 } else { 0 }],
        _ => {
            if n == 432 {
                return FOUR_432.to_vec();
            }
            if n == 3456 {
                return FOUR_3456.to_vec();
            }
            // same relative positions as on the 432-node network
            let mut v: Vec<NodeId> = FOUR_432
                .iter()
                .map(|d| ((*d as u64 * n as u64) / 432) as NodeId)
                .map(|d| d.min(n - 1))
                .collect();
            v.dedup();
            v
        }
    }
}

/// Hot sources: `ceil(fraction * n)` nodes strided over the non-destination
/// ids. Returns `(source, destination)` pairs with destinations assigned
/// round-robin.
pub fn hot_sources(fraction: f64, n: u32, dests: &[NodeId]) -> Vec<(NodeId, NodeId)> {
    if fraction <= 0.0 || dests.is_empty() {
        return vec![];
    }
    let candidates: Vec<NodeId> = (0..n).filter(|x| !dests.contains(x)).collect();
    let m = ((fraction * n as f64).ceil() as usize).min(candidates.len());
    (0..m)
        .map(|i| {
            let src = candidates[i * candidates.len() / m];
            (src, dests[i % dests.len()])
        })
        .collect()
}

/// Uniform destination different from `src`.
pub fn uniform_dst<R: Rng + ?Sized>(rng: &mut R, src: NodeId, n: u32) -> NodeId {
    let d = rng.gen_range(0..n - 1);
    if d >= src {
        d + 1
    } else {
        d
    }
}

/// Splits a message into MTU-sized packets; the last may be smaller.
pub fn segment(bytes: u64, mtu: u32) -> Vec<u32> {
    let mtu = mtu as u64;
    let mut v = vec![mtu as u32; (bytes / mtu) as usize];
    if !bytes.is_multiple_of(mtu) {
        v.push((bytes % mtu) as u32);
    }
    v
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct TraceMessage {
    pub id: u64,
    pub issue: SimTime,
    pub src: NodeId,
    pub dst: NodeId,
    pub bytes: u64,
    pub dep: Option<u64>,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TraceError {
    #[error("line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("message {id}: node {node} out of range (network has {n} endnodes)")]
    BadNode { id: u64, node: NodeId, n: u32 },
    #[error("message {0}: source equals destination")]
    SelfMessage(u64),
    #[error("message {0}: size must be positive")]
    EmptyMessage(u64),
    #[error("duplicate message id {0}")]
    DuplicateId(u64),
    #[error("message {id}: unknown dependency {dep}")]
    UnknownDependency { id: u64, dep: u64 },
    #[error("dependency cycle through message {0}")]
    Cycle(u64),
}

/// Validated trace. Messages are kept in file order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct Trace {
    pub messages: Vec<TraceMessage>,
}

impl Trace {
    pub fn new(messages: Vec<TraceMessage>, n: u32) -> Result<Self, TraceError> {
        let t = Trace { messages };
        t.validate(n)?;
        Ok(t)
    }

    pub fn parse(text: &str, n: u32) -> Result<Self, TraceError> {
        let mut messages = Vec::new();
        for (i, raw) in text.lines().enumerate() {
            let line = i + 1;
            let body = raw.split('#').next().unwrap_or("").trim();
            if body.is_empty() {
                continue;
            }
            let f: Vec<&str> = body.split_whitespace().collect();
            let syntax = |msg: &str| TraceError::Syntax {
                line,
                msg: msg.to_string(),
            };
            if f[0] != "msg" {
                return Err(syntax("expected `msg`"));
            }
            if f.len() != 6 && f.len() != 8 {
                return Err(syntax(
                    "expected `msg <id> <issue_ns> <src> <dst> <bytes> [dep <id>]`",
                ));
            }
            let num = |s: &str, what: &str| {
                s.parse::<u64>()
                    .map_err(|_| syntax(&format!("{what} `{s}` is not a non-negative integer")))
            };
            let dep = if f.len() == 8 {
                if f[6] != "dep" {
                    return Err(syntax("expected `dep`"));
                }
                Some(num(f[7], "dependency")?)
            } else {
                None
            };
            let node = |s: &str, what: &str| {
                num(s, what).and_then(|v| {
                    NodeId::try_from(v).map_err(|_| syntax(&format!("{what} too large")))
                })
            };
            messages.push(TraceMessage {
                id: num(f[1], "id")?,
                issue: SimTime::from_ns(num(f[2], "issue time")?),
                src: node(f[3], "source")?,
                dst: node(f[4], "destination")?,
                bytes: num(f[5], "size")?,
                dep,
            });
        }
        Trace::new(messages, n)
    }

    pub fn to_text(&self) -> String {
        let mut s = String::new();
        for m in &self.messages {
            let _ = write!(
                s,
                "msg {} {} {} {} {}",
                m.id,
                m.issue.as_ps() / 1_000,
                m.src,
                m.dst,
                m.bytes
            );
            if let Some(d) = m.dep {
                let _ = write!(s, " dep {d}");
            }
            s.push('\n');
        }
        s
    }

    pub fn validate(&self, n: u32) -> Result<(), TraceError> {
        let mut index = HashMap::with_capacity(self.messages.len());
        for (i, m) in self.messages.iter().enumerate() {
            for node in [m.src, m.dst] {
                if node >= n {
                    return Err(TraceError::BadNode { id: m.id, node, n });
                }
            }
            if m.src == m.dst {
                return Err(TraceError::SelfMessage(m.id));
            }
            if m.bytes == 0 {
                return Err(TraceError::EmptyMessage(m.id));
            }
            if index.insert(m.id, i).is_some() {
                return Err(TraceError::DuplicateId(m.id));
            }
        }
        for m in &self.messages {
            if let Some(d) = m.dep {
                if !index.contains_key(&d) {
                    return Err(TraceError::UnknownDependency { id: m.id, dep: d });
                }
            }
        }
        // each message has at most one dependency, so cycles show up as a
        // walk that revisits a node
        let mut state = vec![0u8; self.messages.len()];
        for start in 0..self.messages.len() {
            let mut path = vec![];
            let mut cur = Some(start);
            while let Some(i) = cur {
                match state[i] {
                    2 => break,
                    1 => return Err(TraceError::Cycle(self.messages[i].id)),
                    _ => {}
                }
                state[i] = 1;
                path.push(i);
                cur = self.messages[i].dep.map(|d| index[&d]);
            }
            for i in path {
                state[i] = 2;
            }
        }
        Ok(())
    }

    /// Position of each dependency in `messages`.
    pub fn dependency_indices(&self) -> Vec<Option<usize>> {
        let index: HashMap<u64, usize> = self
            .messages
            .iter()
            .enumerate()
            .map(|(i, m)| (m.id, i))
            .collect();
        self.messages
            .iter()
            .map(|m| m.dep.map(|d| index[&d]))
            .collect()
    }

    pub fn total_bytes(&self) -> u64 {
        self.messages.iter().map(|m| m.bytes).sum()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PtransParams {
    pub rounds: u32,
    pub bytes: u64,
    pub gap: SimTime,
}

impl Default for PtransParams {
    fn default() -> Self {
        PtransParams {
            rounds: 200,
            bytes: 65_536,
            gap: SimTime::from_us(40),
        }
    }
}

/// Pairwise exchange rounds over `nodes`: in round `r` every participant
/// sends to the one `shift(r)` positions ahead and may only start once it
/// has received its message of round `r - 1`.
pub fn gen_ptranslike(nodes: &[NodeId], p: PtransParams) -> Vec<TraceMessage> {
    let m = nodes.len();
    if m < 2 {
        return vec![];
    }
    let shift = |r: u32| 1 + (r as usize * 7) % (m - 1);
    let mut out = Vec::with_capacity(m * p.rounds as usize);
    let id = |r: u32, i: usize| r as u64 * m as u64 + i as u64;
    for r in 0..p.rounds {
        let s = shift(r);
        for i in 0..m {
            let dep = (r > 0).then(|| {
                let prev = shift(r - 1);
                id(r - 1, (i + m - prev) % m)
            });
            out.push(TraceMessage {
                id: id(r, i),
                issue: SimTime(p.gap.as_ps() * r as u64),
                src: nodes[i],
                dst: nodes[(i + s) % m],
                bytes: p.bytes,
                dep,
            });
        }
    }
    out
}

/// A single token passed around `nodes`, `hops` times.
pub fn gen_chain(nodes: &[NodeId], hops: u32, bytes: u64) -> Vec<TraceMessage> {
    let m = nodes.len();
    if m < 2 {
        return vec![];
    }
    (0..hops as usize)
        .map(|k| TraceMessage {
            id: k as u64,
            issue: SimTime::ZERO,
            src: nodes[k % m],
            dst: nodes[(k + 1) % m],
            bytes,
            dep: k.checked_sub(1).map(|d| d as u64),
        })
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn paper_hotspots() {
        assert_eq!(default_hotspot_dests(1, 432), vec![4]);
        assert_eq!(default_hotspot_dests(4, 432), vec![4, 120, 244, 431]);
        assert_eq!(default_hotspot_dests(4, 3456), vec![0, 889, 1772, 3454]);
        let d = default_hotspot_dests(4, 128);
        assert_eq!(d.len(), 4);
        assert!(d.iter().all(|x| *x < 128));
    }

    #[test]
    fn hot_sources_fraction_and_exclusion() {
        let dests = [4];
        let hot = hot_sources(0.10, 128, &dests);
        assert_eq!(hot.len(), 13);
        assert!(hot.iter().all(|(s, d)| *s != 4 && *d == 4));
        let mut srcs: Vec<_> = hot.iter().map(|h| h.0).collect();
        srcs.dedup();
        assert_eq!(srcs.len(), 13);
        assert_eq!(hot_sources(0.25, 432, &[4]).len(), 108);
    }

    #[test]
    fn multi_incast_round_robin() {
        let dests = default_hotspot_dests(4, 432);
        let hot = hot_sources(0.10, 432, &dests);
        for d in &dests {
            let c = hot.iter().filter(|h| h.1 == *d).count();
            assert!((10..=11).contains(&c), "{c}");
        }
    }

    #[test]
    fn uniform_dst_excludes_source_and_is_flat() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let n = 16;
        let draws = 100_000;
        let mut counts = [0u32; 16];
        for _ in 0..draws {
            let d = uniform_dst(&mut rng, 5, n);
            assert_ne!(d, 5);
            counts[d as usize] += 1;
        }
        let e = draws as f64 / 15.0;
        let chi: f64 = counts
            .iter()
            .enumerate()
            .filter(|(i, _)| *i != 5)
            .map(|(_, c)| (*c as f64 - e).powi(2) / e)
            .sum();
        // 14 dof, 99.9% critical value
        assert!(chi < 36.12, "chi2={chi}");
        let sigma = (e * (1.0 - 1.0 / 15.0)).sqrt();
        for (i, c) in counts.iter().enumerate() {
            if i != 5 {
                assert!((*c as f64 - e).abs() < 3.0 * sigma + 1.0);
            }
        }
    }

    #[test]
    fn segmentation() {
        assert_eq!(segment(10 * 1024, 4096), vec![4096, 4096, 2048]);
        assert_eq!(segment(4096, 4096), vec![4096]);
        assert_eq!(segment(1, 4096), vec![1]);
    }

    #[test]
    fn parse_roundtrip() {
        let text = "# header\nmsg 1 0 0 5 4096\nmsg 2 100 5 0 10240 dep 1\n\n";
        let t = Trace::parse(text, 8).unwrap();
        assert_eq!(t.messages.len(), 2);
        assert_eq!(t.messages[1].dep, Some(1));
        assert_eq!(t.messages[1].issue, SimTime::from_ns(100));
        assert_eq!(Trace::parse(&t.to_text(), 8).unwrap(), t);
    }

    #[test]
    fn parse_errors() {
        assert!(matches!(
            Trace::parse("msg 1 0 0 9 10", 8),
            Err(TraceError::BadNode { node: 9, .. })
        ));
        assert!(matches!(
            Trace::parse("msg 1 0 0 1", 8),
            Err(TraceError::Syntax { line: 1, .. })
        ));
        assert_eq!(
            Trace::parse("msg 1 0 0 1 10 dep 2\nmsg 2 0 1 0 10 dep 1", 8),
            Err(TraceError::Cycle(1))
        );
        assert_eq!(
            Trace::parse("msg 1 0 0 1 10 dep 3", 8),
            Err(TraceError::UnknownDependency { id: 1, dep: 3 })
        );
        assert_eq!(
            Trace::parse("msg 1 0 0 1 10\nmsg 1 0 1 0 10", 8),
            Err(TraceError::DuplicateId(1))
        );
        assert_eq!(
            Trace::parse("msg 1 0 2 2 10", 8),
            Err(TraceError::SelfMessage(1))
        );
        assert_eq!(
            Trace::parse("msg 1 0 2 3 0", 8),
            Err(TraceError::EmptyMessage(1))
        );
        assert_eq!(
            Trace::parse("msg 1 0 0 1 10 dep 1", 8),
            Err(TraceError::Cycle(1))
        );
    }

    #[test]
    fn ptrans_dependencies_point_at_received_message() {
        let nodes: Vec<NodeId> = (0..10).collect();
        let msgs = gen_ptranslike(
            &nodes,
            PtransParams {
                rounds: 5,
                bytes: 100,
                gap: SimTime::from_us(1),
            },
        );
        let t = Trace::new(msgs, 10).unwrap();
        let deps = t.dependency_indices();
        for (i, m) in t.messages.iter().enumerate() {
            assert_ne!(m.src, m.dst);
            if let Some(d) = deps[i] {
                assert_eq!(t.messages[d].dst, m.src);
            }
        }
        // every node sends exactly once per round
        for r in 0..5u64 {
            let mut s: Vec<_> = t.messages[(r * 10) as usize..((r + 1) * 10) as usize]
                .iter()
                .map(|m| m.src)
                .collect();
            s.sort();
            assert_eq!(s, nodes);
        }
    }

    #[test]
    fn chain_is_valid() {
        let nodes: Vec<NodeId> = (0..4).collect();
        let t = Trace::new(gen_chain(&nodes, 9, 4096), 4).unwrap();
        assert_eq!(t.messages.len(), 9);
        assert_eq!(t.messages[8].dep, Some(7));
    }
}
