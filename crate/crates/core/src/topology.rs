//! Real-Life Fat-Tree construction and wiring queries.
//!
//! Addressing follows the XGFT scheme. An endnode id `x` is read as digits
//! `x_0 .. x_{n-1}` in base `K`, except the top digit which ranges over `2K`.
//! A stage-`s` switch is labelled `(W, X)`:
//!
//! * `X = x / K^s` selects the subtree of endnodes below it (always 0 at the
//!   top stage),
//! * `W < K^(s-1)` encodes the up-port choices `w_1 .. w_{s-1}` taken to reach it.
//!
//! Switch ids are dense: all stage-1 switches first, then stage 2, and so on.
//! Within a stage the id offset is `W + K^(s-1) * X`.
//!
//! Local ports: down-ports come first (`0..K`, or `0..2K` at the top stage),
//! followed by the `K` up-ports of non-top switches.

use std::fmt::Write as _;
use std::ops::Range;

use thiserror::Error;

pub type SwitchId = u32;
pub type NodeId = u32;
pub type PortId = u16;

#[derive(Debug, Error, PartialEq, Eq)]
pub enum TopologyError {
    #[error("port count must be even and at least 2, got {0}")]
    InvalidPortCount(u32),
    #[error("stage count must be at least 1, got {0}")]
    InvalidStages(u32),
    #[error("topology too large: {0} endnodes")]
    TooLarge(u64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RlftParams {
    pub port_count: u32,
    pub stages: u32,
}

impl RlftParams {
    pub fn new(port_count: u32, stages: u32) -> Result<Self, TopologyError> {
        if port_count < 2 || !port_count.is_multiple_of(2) {
            return Err(TopologyError::InvalidPortCount(port_count));
        }
        if stages < 1 {
            return Err(TopologyError::InvalidStages(stages));
        }
        let p = RlftParams { port_count, stages };
        let n = p.endnode_count_u64();
        if n > u16::MAX as u64 + 1 {
            return Err(TopologyError::TooLarge(n));
        }
        Ok(p)
    }

    pub fn radix_half(&self) -> u32 {
        self.port_count / 2
    }

    fn endnode_count_u64(&self) -> u64 {
        2 * (self.radix_half() as u64).pow(self.stages)
    }

    /// `N = 2 K^n`
    pub fn endnode_count(&self) -> u32 {
        self.endnode_count_u64() as u32
    }

    /// `S = N (2n - 1) / 2K`
    pub fn switch_count(&self) -> u32 {
        let n = self.endnode_count_u64();
        (n * (2 * self.stages as u64 - 1) / (2 * self.radix_half() as u64)) as u32
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Peer {
    Switch { id: SwitchId, port: PortId },
    Node(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortDir {
    Up,
    Down,
}

#[derive(Debug, Clone)]
pub struct SwitchInfo {
    pub stage: u32,
    /// Up-port choices taken to reach this switch.
    pub w: u32,
    /// Endnode subtree selector, `dst / K^stage` for every endnode below.
    pub x: u32,
    pub down_ports: u32,
    pub up_ports: u32,
    pub peers: Vec<Peer>,
}

impl SwitchInfo {
    pub fn port_count(&self) -> u32 {
        self.down_ports + self.up_ports
    }
}

#[derive(Debug, Clone)]
pub struct Topology {
    params: RlftParams,
    k: u32,
    /// `K^i` for `i in 0..=n`.
    pow: Vec<u32>,
    stage_offset: Vec<u32>,
    switches: Vec<SwitchInfo>,
    /// Leaf switch and its down-port for every endnode.
    attach: Vec<(SwitchId, PortId)>,
}

impl Topology {
    pub fn build(params: RlftParams) -> Topology {
        let k = params.radix_half();
        let n = params.stages;
        let pow: Vec<u32> = (0..=n).map(|i| k.pow(i)).collect();
        let nodes = params.endnode_count();

        let top = pow[n as usize - 1];
        let per_stage = move |s: u32| if s < n { 2 * top } else { top };
        let mut stage_offset = vec![0u32; n as usize + 2];
        for s in 1..=n {
            stage_offset[s as usize + 1] = stage_offset[s as usize] + per_stage(s);
        }

        let mut topo = Topology {
            params,
            k,
            pow,
            stage_offset,
            switches: Vec::with_capacity(params.switch_count() as usize),
            attach: vec![(0, 0); nodes as usize],
        };

        for s in 1..=n {
            for off in 0..per_stage(s) {
                let wspan = topo.pow[s as usize - 1];
                let (w, x) = (off % wspan, off / wspan);
                let down_ports = if s < n { k } else { 2 * k };
                let up_ports = if s < n { k } else { 0 };
                topo.switches.push(SwitchInfo {
                    stage: s,
                    w,
                    x,
                    down_ports,
                    up_ports,
                    peers: Vec::new(),
                });
            }
        }

        for id in 0..topo.switches.len() as u32 {
            let info = &topo.switches[id as usize];
            let (s, w, x) = (info.stage, info.w, info.x);
            let mut peers = Vec::with_capacity(info.port_count() as usize);
            for p in 0..info.down_ports {
                if s == 1 {
                    let node = p + k * x;
                    peers.push(Peer::Node(node));
                    topo.attach[node as usize] = (id, p as PortId);
                } else {
                    let child_w = w % topo.pow[s as usize - 2];
                    let child_x = p + k * x;
                    let child = topo.switch_at(s - 1, child_w, child_x);
                    let child_up = w / topo.pow[s as usize - 2];
                    let child_port = topo.switches[child as usize].down_ports + child_up;
                    peers.push(Peer::Switch {
                        id: child,
                        port: child_port as PortId,
                    });
                }
            }
            for u in 0..info.up_ports {
                let parent_w = w + u * topo.pow[s as usize - 1];
                let parent_x = if s + 1 < n { x / k } else { 0 };
                let parent = topo.switch_at(s + 1, parent_w, parent_x);
                let parent_port = if s + 1 < n { x % k } else { x };
                peers.push(Peer::Switch {
                    id: parent,
                    port: parent_port as PortId,
                });
            }
            topo.switches[id as usize].peers = peers;
        }
        topo
    }

    fn switch_at(&self, stage: u32, w: u32, x: u32) -> SwitchId {
        self.stage_offset[stage as usize] + w + self.pow[stage as usize - 1] * x
    }

    pub fn params(&self) -> RlftParams {
        self.params
    }

    pub fn k(&self) -> u32 {
        self.k
    }

    pub fn stages(&self) -> u32 {
        self.params.stages
    }

    pub fn endnode_count(&self) -> u32 {
        self.attach.len() as u32
    }

    pub fn switch_count(&self) -> u32 {
        self.switches.len() as u32
    }

    pub fn switch(&self, id: SwitchId) -> &SwitchInfo {
        &self.switches[id as usize]
    }

    pub fn switches(&self) -> &[SwitchInfo] {
        &self.switches
    }

    pub fn stage(&self, id: SwitchId) -> u32 {
        self.switches[id as usize].stage
    }

    pub fn switches_in_stage(&self, stage: u32) -> Range<SwitchId> {
        self.stage_offset[stage as usize]..self.stage_offset[stage as usize + 1]
    }

    pub fn peer(&self, id: SwitchId, port: PortId) -> Peer {
        self.switches[id as usize].peers[port as usize]
    }

    /// Leaf switch and down-port an endnode hangs off.
    pub fn attachment(&self, node: NodeId) -> (SwitchId, PortId) {
        self.attach[node as usize]
    }

    pub fn leaf_index(&self, node: NodeId) -> u32 {
        node / self.k
    }

    /// Panics on a port the switch does not have.
    pub fn classify_port(&self, id: SwitchId, port: PortId) -> PortDir {
        let info = &self.switches[id as usize];
        assert!(
            (port as u32) < info.port_count(),
            "switch {id} has no port {port}"
        );
        if (port as u32) < info.down_ports {
            PortDir::Down
        } else {
            PortDir::Up
        }
    }

    pub fn up_ports(&self, id: SwitchId) -> Range<PortId> {
        let info = &self.switches[id as usize];
        info.down_ports as PortId..(info.down_ports + info.up_ports) as PortId
    }

    /// Contiguous interval of endnodes reached by descending through `port`.
    /// Panics if `port` is an up-port.
    pub fn reachable_down_destinations(&self, id: SwitchId, port: PortId) -> Range<NodeId> {
        assert_eq!(
            self.classify_port(id, port),
            PortDir::Down,
            "port {port} of switch {id} is not a down-port"
        );
        let info = &self.switches[id as usize];
        let span = self.pow[info.stage as usize - 1];
        let base = (port as u32 + self.k * info.x) * span;
        base..base + span
    }

    /// Whether `dst` lies in the subtree below switch `id`.
    pub fn is_below(&self, id: SwitchId, dst: NodeId) -> bool {
        let info = &self.switches[id as usize];
        info.stage == self.params.stages || dst / self.pow[info.stage as usize] == info.x
    }

    /// The unique down-port towards `dst`; `None` if `dst` is not below.
    pub fn down_port_towards(&self, id: SwitchId, dst: NodeId) -> Option<PortId> {
        if !self.is_below(id, dst) {
            return None;
        }
        let info = &self.switches[id as usize];
        let digit = dst / self.pow[info.stage as usize - 1] - self.k * info.x;
        Some(digit as PortId)
    }

    /// Lowest stage whose subtree contains both endnodes.
    pub fn turnaround_stage(&self, a: NodeId, b: NodeId) -> u32 {
        (1..self.params.stages)
            .find(|&s| a / self.pow[s as usize] == b / self.pow[s as usize])
            .unwrap_or(self.params.stages)
    }

    pub fn pow_k(&self, i: u32) -> u32 {
        self.pow[i as usize]
    }

    /// Text dump, one `switch <id> stage <s> port <p> -> <peer>` line per port.
    pub fn dump(&self) -> String {
        let mut out = String::new();
        for (id, info) in self.switches.iter().enumerate() {
            for (p, peer) in info.peers.iter().enumerate() {
                let peer = match peer {
                    Peer::Switch { id, port } => format!("switch {id} port {port}"),
                    Peer::Node(n) => format!("node {n}"),
                };
                let _ = writeln!(out, "switch {id} stage {} port {p} -> {peer}", info.stage);
            }
        }
        out
    }
}
