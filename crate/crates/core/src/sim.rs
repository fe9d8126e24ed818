//! Event-driven network model: input-queued switches with VOQs over
//! credit-controlled VCs, endnode HCAs, the congestion detector and the ARN
//! protocol.

use std::collections::{HashMap, HashSet, VecDeque};
use std::fmt::Write as _;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use thiserror::Error;

use crate::arn::{
    input_port_controller, make_arn_id, root_info_for, ArnInfo, ArnTable, PortControl,
    ProcessOutcome,
};
use crate::config::Config;
use crate::detector::{DetectorParams, PortDetector, Transition};
use crate::kernel::{EventTag, Kernel, SimTime};
use crate::metrics::{mean_efficiency, recovery, EfficiencySeries, LatencyStats, Summary};
use crate::queuing::{SqsConfig, Vc};
use crate::routing::{
    adaptive_th_route, dmodk_route, oblivious_route, select_alternative_oport, CreditView,
    RoutingKind, RoutingMode,
};
use crate::topology::{NodeId, Peer, PortDir, PortId, SwitchId, Topology};
use crate::traffic::{hot_sources, segment, uniform_dst, Trace, TrafficKind};

#[derive(Debug, Error)]
pub enum SimError {
    #[error("configuration: {0}")]
    Config(String),
    #[error("flow-control violation at {at}: {msg}")]
    Protocol { at: SimTime, msg: String },
}

#[derive(Debug, Clone, Copy)]
struct Packet {
    id: u64,
    inject: SimTime,
    seq: u64,
    src: NodeId,
    dst: NodeId,
    msg: u32,
    size: u32,
    out: PortId,
    original_vc: Vc,
    /// VC occupied in the buffer the packet is currently stored in.
    vc: Vc,
    next_vc: Vc,
    shared: bool,
    adapted: bool,
}

const NO_MSG: u32 = u32::MAX;
const RESAMPLE_TRIES: u32 = 8;

#[derive(Debug, Clone, Copy)]
enum Ev {
    Arrive {
        sw: SwitchId,
        port: PortId,
        pkt: Packet,
    },
    Deliver {
        node: NodeId,
        pkt: Packet,
    },
    Credit {
        tx: u32,
        vc: Vc,
        shared: bool,
    },
    TxFree {
        tx: u32,
    },
    Generate {
        node: NodeId,
    },
    Issue {
        msg: u32,
    },
    ArnToSwitch {
        sw: SwitchId,
        port: PortId,
        info: ArnInfo,
    },
    ArnToNode {
        node: NodeId,
        info: ArnInfo,
    },
    Crt {
        sw: SwitchId,
        port: PortId,
        epoch: u64,
    },
    Sweep,
    Checkpoint,
}

impl EventTag for Ev {
    fn tag(&self) -> u32 {
        match self {
            Ev::Arrive { .. } => 0,
            Ev::Deliver { .. } => 1,
            Ev::Credit { .. } => 2,
            Ev::TxFree { .. } => 3,
            Ev::Generate { .. } => 4,
            Ev::Issue { .. } => 5,
            Ev::ArnToSwitch { .. } => 6,
            Ev::ArnToNode { .. } => 7,
            Ev::Crt { .. } => 8,
            Ev::Sweep => 9,
            Ev::Checkpoint => 10,
        }
    }
}

/// Transmit side of a link plus the bookkeeping needed to audit credits.
#[derive(Debug, Clone)]
struct LinkTx {
    owner: Peer,
    /// The AFC never draws from the shared pool.
    afc: Option<Vc>,
    down: Peer,
    busy_until: SimTime,
    credits_res: Vec<u32>,
    credits_shared: u32,
    wire_res: Vec<u32>,
    wire_shared: u32,
    ret_res: Vec<u32>,
    ret_shared: u32,
}

impl LinkTx {
    fn available(&self, vc: Vc) -> u32 {
        if self.afc == Some(vc) {
            self.credits_res[vc as usize]
        } else {
            self.credits_res[vc as usize] + self.credits_shared
        }
    }

    /// Takes one credit, reserved slots first. Returns whether the shared
    /// pool was used.
    fn take(&mut self, vc: Vc) -> bool {
        let v = vc as usize;
        if self.credits_res[v] > 0 {
            self.credits_res[v] -= 1;
            self.wire_res[v] += 1;
            false
        } else {
            debug_assert!(self.credits_shared > 0);
            self.credits_shared -= 1;
            self.wire_shared += 1;
            true
        }
    }
}

#[derive(Debug, Clone)]
struct InBuf {
    /// FIFO per (vc, out-port), indexed `vc * ports + out`.
    q: Vec<VecDeque<Packet>>,
    voq: Vec<u32>,
    vc_occ: Vec<u32>,
    res_used: Vec<u32>,
    shared_used: u32,
    total: u32,
}

impl InBuf {
    fn new(ports: usize, vcs: usize) -> Self {
        InBuf {
            q: (0..ports * vcs).map(|_| VecDeque::new()).collect(),
            voq: vec![0; ports],
            vc_occ: vec![0; vcs],
            res_used: vec![0; vcs],
            shared_used: 0,
            total: 0,
        }
    }
}

#[derive(Debug, Clone)]
struct SwitchState {
    stage: u32,
    ports: usize,
    tx_base: usize,
    inbufs: Vec<InBuf>,
    /// Transmit link feeding each input port.
    upstream_tx: Vec<u32>,
    rr: Vec<usize>,
    detectors: Vec<PortDetector>,
    roots: Vec<Option<ArnInfo>>,
    table: ArnTable,
    arn_counter: u32,
    arn_last_sent: HashMap<(PortId, u32), SimTime>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum GenKind {
    Off,
    Uniform,
    /// Sends to `dst` inside `[from, to)`; outside the window either uniform
    /// traffic or nothing.
    Window {
        dst: NodeId,
        from: SimTime,
        to: SimTime,
        uniform_outside: bool,
    },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
struct HcaEntry {
    dst: NodeId,
    vc: Vc,
    arn_id: u32,
    last_refresh: SimTime,
}

#[derive(Debug, Clone)]
struct HcaState {
    queues: Vec<VecDeque<Packet>>,
    rr: usize,
    gen: GenKind,
    pending: Option<Packet>,
    stalled: bool,
    next_due: SimTime,
    entries: Vec<HcaEntry>,
}

/// A fixed-rate flow used by scripted scenarios.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FlowSpec {
    pub src: NodeId,
    pub dst: NodeId,
    pub from: SimTime,
    pub to: SimTime,
}

#[derive(Debug, Clone, PartialEq)]
pub enum Workload {
    /// Uniform or incast traffic as configured.
    Synthetic,
    /// Trace replay, with the configured incast running as background.
    Trace(Trace),
    /// Explicit flows; all other endnodes stay silent.
    Flows(Vec<FlowSpec>),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Entity {
    Switch(SwitchId),
    Node(NodeId),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum ArnEventKind {
    FlowStart,
    RootDetected,
    EntryAdded,
    ArnSent,
    ArnReceived,
    ArnConsumed,
    PacketAdapted,
    AfcStored,
    AfcDelivered,
    EntryExpired,
    RootCleared,
}

impl ArnEventKind {
    pub fn as_str(self) -> &'static str {
        match self {
            ArnEventKind::FlowStart => "flow_start",
            ArnEventKind::RootDetected => "root_detected",
            ArnEventKind::EntryAdded => "entry_added",
            ArnEventKind::ArnSent => "arn_sent",
            ArnEventKind::ArnReceived => "arn_received",
            ArnEventKind::ArnConsumed => "arn_consumed",
            ArnEventKind::PacketAdapted => "packet_adapted",
            ArnEventKind::AfcStored => "afc_stored",
            ArnEventKind::AfcDelivered => "afc_delivered",
            ArnEventKind::EntryExpired => "entry_expired",
            ArnEventKind::RootCleared => "root_cleared",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ArnLogRecord {
    pub time: SimTime,
    pub event: ArnEventKind,
    pub entity: Entity,
    pub port: Option<PortId>,
    pub dst: NodeId,
    pub vc: Vc,
    pub arn_id: u32,
    pub root_info: u8,
}

pub const ARN_CSV_HEADER: &str = "time_ns,event,entity,entity_id,port,dst,vc,arn_id,root_info";
pub const DETECTOR_CSV_HEADER: &str = "time_ns,switch,port,event,inport,occupancy,free_credits";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct DetectorLogRecord {
    pub time: SimTime,
    pub switch: SwitchId,
    pub port: PortId,
    pub event: &'static str,
    pub inport: Option<PortId>,
    pub occupancy: u32,
    pub free_credits: u32,
}

fn fmt_ns(t: SimTime) -> String {
    let ps = t.as_ps();
    format!("{}.{:03}", ps / 1_000, ps % 1_000)
}

pub fn arn_log_csv(log: &[ArnLogRecord]) -> String {
    let mut s = String::from(ARN_CSV_HEADER);
    s.push('\n');
    for r in log {
        let (kind, id) = match r.entity {
            Entity::Switch(x) => ("switch", x),
            Entity::Node(x) => ("node", x),
        };
        let port = r.port.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{},{},{}",
            fmt_ns(r.time),
            r.event.as_str(),
            kind,
            id,
            port,
            r.dst,
            r.vc,
            r.arn_id,
            r.root_info
        );
    }
    s
}

pub fn detector_log_csv(log: &[DetectorLogRecord]) -> String {
    let mut s = String::from(DETECTOR_CSV_HEADER);
    s.push('\n');
    for r in log {
        let inport = r.inport.map(|p| p.to_string()).unwrap_or_default();
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            fmt_ns(r.time),
            r.switch,
            r.port,
            r.event,
            inport,
            r.occupancy,
            r.free_credits
        );
    }
    s
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct Counters {
    pub created: u64,
    pub injected: u64,
    pub delivered: u64,
    pub delivered_bytes: u64,
    pub roots_detected: u64,
    pub roots_cleared: u64,
    pub arn_sent: u64,
    pub arn_consumed_switch: u64,
    pub arn_consumed_node: u64,
    pub packets_adapted: u64,
    pub adapted_twice: u64,
    pub adapted_outside_afc: u64,
    pub credit_violations: u64,
    pub checkpoints: u64,
    pub entries_expired: u64,
}

/// One packet handed to its destination endnode.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Delivery {
    pub time: SimTime,
    pub src: NodeId,
    pub dst: NodeId,
    pub vc: Vc,
    pub original_vc: Vc,
    pub adapted: bool,
}

#[derive(Debug, Clone)]
pub struct RunOutput {
    pub summary: Summary,
    pub efficiency: EfficiencySeries,
    pub counters: Counters,
    pub arn_log: Vec<ArnLogRecord>,
    pub detector_log: Vec<DetectorLogRecord>,
    pub makespan: Option<SimTime>,
    pub drained: bool,
    pub end_time: SimTime,
    pub events: u64,
    pub dispatch_log: Option<Vec<crate::kernel::LogRecord>>,
    pub deliveries: Option<Vec<Delivery>>,
}

struct TxView<'a> {
    txs: &'a [LinkTx],
    caps: &'a [u32],
}

impl CreditView for TxView<'_> {
    fn available(&self, port: PortId, vc: Vc) -> u32 {
        self.txs[port as usize].available(vc)
    }
    fn vc_capacity(&self, vc: Vc) -> u32 {
        self.caps[vc as usize]
    }
}

struct TraceState {
    msgs: Vec<crate::traffic::TraceMessage>,
    children: Vec<Vec<u32>>,
    remaining: Vec<u32>,
    completed: usize,
    last_done: SimTime,
}

pub struct Simulation {
    kernel: Kernel<Ev>,
    topo: Topology,
    cfg: Config,
    routing: RoutingMode,
    sqs: SqsConfig,
    det: DetectorParams,
    vcs: usize,
    port_cap: u32,
    res_cap: Vec<u32>,
    shared_cap: u32,
    vc_caps: Vec<u32>,
    mtu: u32,
    gbps: f64,
    prop: SimTime,
    arn_delay: SimTime,
    ttl: SimTime,
    resend: SimTime,
    gen_end: SimTime,
    sim_end: SimTime,
    checkpoint_every: SimTime,
    switches: Vec<SwitchState>,
    txs: Vec<LinkTx>,
    hca_base: usize,
    hcas: Vec<HcaState>,
    traffic_rng: ChaCha8Rng,
    routing_rng: ChaCha8Rng,
    trace: Option<TraceState>,
    next_pkt_id: u64,
    next_seq: u64,
    counters: Counters,
    efficiency: EfficiencySeries,
    latency: LatencyStats,
    arn_log: Option<Vec<ArnLogRecord>>,
    det_log: Option<Vec<DetectorLogRecord>>,
    deliveries: Option<Vec<Delivery>>,
    seen_flows: HashSet<(NodeId, NodeId)>,
    seen_adapt: HashSet<(Entity, u32)>,
    seen_afc: HashSet<(SwitchId, NodeId)>,
    seen_afc_delivery: HashSet<NodeId>,
    failure: Option<(SimTime, String)>,
    draining: bool,
}

impl Simulation {
    pub fn new(cfg: &Config, workload: Workload) -> Result<Self, SimError> {
        cfg.validate()
            .map_err(|e| SimError::Config(e.to_string()))?;
        let rlft = cfg.rlft().map_err(SimError::Config)?;
        let topo = Topology::build(rlft);
        let sqs = cfg.sqs_config().map_err(SimError::Config)?;
        let vcs = sqs.total_vcs() as usize;
        let port_cap = cfg.port_buffer_pkts;
        let afc = sqs.afc();
        let res_cap: Vec<u32> = (0..vcs as Vc)
            .map(|v| {
                if Some(v) == afc {
                    cfg.afc_buffer_pkts
                } else {
                    cfg.vc_reserved_pkts
                }
            })
            .collect();
        let shared_cap = port_cap - res_cap.iter().sum::<u32>();
        let vc_caps: Vec<u32> = (0..vcs as Vc)
            .map(|v| {
                let r = res_cap[v as usize];
                if Some(v) == afc {
                    r
                } else {
                    r + shared_cap
                }
            })
            .collect();
        let n = topo.endnode_count();
        let sim_end = SimTime::from_ms_f64(cfg.sim_ms);

        let mut txs = Vec::new();
        let mut switches = Vec::with_capacity(topo.switch_count() as usize);
        let mut bases = Vec::with_capacity(topo.switch_count() as usize);
        let new_tx = |owner: Peer, down: Peer| LinkTx {
            owner,
            down,
            busy_until: SimTime::ZERO,
            afc,
            credits_res: res_cap.clone(),
            credits_shared: shared_cap,
            wire_res: vec![0; vcs],
            wire_shared: 0,
            ret_res: vec![0; vcs],
            ret_shared: 0,
        };
        for sw in 0..topo.switch_count() {
            let info = topo.switch(sw);
            bases.push(txs.len());
            for (p, peer) in info.peers.iter().enumerate() {
                txs.push(new_tx(
                    Peer::Switch {
                        id: sw,
                        port: p as PortId,
                    },
                    *peer,
                ));
            }
        }
        let hca_base = txs.len();
        for node in 0..n {
            let (sw, port) = topo.attachment(node);
            txs.push(new_tx(Peer::Node(node), Peer::Switch { id: sw, port }));
        }
        for sw in 0..topo.switch_count() {
            let info = topo.switch(sw);
            let ports = info.port_count() as usize;
            let upstream_tx = info
                .peers
                .iter()
                .map(|peer| match *peer {
                    Peer::Switch { id, port } => (bases[id as usize] + port as usize) as u32,
                    Peer::Node(node) => (hca_base + node as usize) as u32,
                })
                .collect();
            switches.push(SwitchState {
                stage: info.stage,
                ports,
                tx_base: bases[sw as usize],
                inbufs: (0..ports).map(|_| InBuf::new(ports, vcs)).collect(),
                upstream_tx,
                rr: vec![0; ports],
                detectors: (0..ports).map(|_| PortDetector::new(ports)).collect(),
                roots: vec![None; ports],
                table: ArnTable::new(cfg.arn_table_cap),
                arn_counter: 0,
                arn_last_sent: HashMap::new(),
            });
        }

        let mut gens = vec![GenKind::Off; n as usize];
        let warm = SimTime::from_ms_f64(cfg.warmup_ms);
        let hot_end = SimTime::from_ms_f64(cfg.warmup_ms + cfg.hotspot_ms);
        let mut trace = None;
        match &workload {
            Workload::Synthetic => {
                if cfg.traffic == TrafficKind::Trace {
                    return Err(SimError::Config(
                        "traffic = trace needs a trace workload".into(),
                    ));
                }
                gens.iter_mut().for_each(|g| *g = GenKind::Uniform);
                if let Some(kind) = cfg.incast_kind() {
                    let dests = cfg.resolved_hotspot_dests();
                    for (src, dst) in hot_sources(kind.hot_fraction(), n, &dests) {
                        gens[src as usize] = GenKind::Window {
                            dst,
                            from: warm,
                            to: hot_end,
                            uniform_outside: true,
                        };
                    }
                }
            }
            Workload::Trace(t) => {
                t.validate(n)
                    .map_err(|e| SimError::Config(format!("trace: {e}")))?;
                if let Some(kind) = cfg.incast_kind() {
                    let dests = cfg.resolved_hotspot_dests();
                    for (src, dst) in hot_sources(kind.hot_fraction(), n, &dests) {
                        gens[src as usize] = GenKind::Window {
                            dst,
                            from: warm,
                            to: hot_end,
                            uniform_outside: false,
                        };
                    }
                }
                let deps = t.dependency_indices();
                let mut children = vec![vec![]; t.messages.len()];
                for (i, d) in deps.iter().enumerate() {
                    if let Some(d) = d {
                        children[*d].push(i as u32);
                    }
                }
                trace = Some(TraceState {
                    msgs: t.messages.clone(),
                    children,
                    remaining: vec![0; t.messages.len()],
                    completed: 0,
                    last_done: SimTime::ZERO,
                });
            }
            Workload::Flows(flows) => {
                for f in flows {
                    if f.src >= n || f.dst >= n || f.src == f.dst {
                        return Err(SimError::Config(format!("invalid flow {f:?}")));
                    }
                    gens[f.src as usize] = GenKind::Window {
                        dst: f.dst,
                        from: f.from,
                        to: f.to,
                        uniform_outside: false,
                    };
                }
            }
        }
        let hcas = gens
            .into_iter()
            .map(|gen| HcaState {
                queues: (0..vcs).map(|_| VecDeque::new()).collect(),
                rr: 0,
                gen,
                pending: None,
                stalled: false,
                next_due: SimTime::ZERO,
                entries: vec![],
            })
            .collect();

        let gbps = cfg.link_gbps;
        let ser64 = SimTime(((64.0 * 8.0 / gbps) * 1_000.0).round() as u64);
        let prop = SimTime::from_ns(cfg.link_prop_ns);
        let mut sim = Simulation {
            kernel: Kernel::new(),
            efficiency: EfficiencySeries::new(SimTime::from_us_f64(cfg.bin_us), sim_end, n, gbps),
            topo,
            routing: cfg.routing,
            sqs,
            det: cfg.detector_params(),
            vcs,
            port_cap,
            res_cap,
            shared_cap,
            vc_caps,
            mtu: cfg.mtu_bytes,
            gbps,
            prop,
            arn_delay: ser64 + prop,
            ttl: SimTime::from_ms_f64(cfg.arn_ttl_ms),
            resend: SimTime::from_us_f64(cfg.arn_resend_us),
            gen_end: sim_end,
            sim_end,
            checkpoint_every: SimTime::from_us_f64(cfg.checkpoint_us),
            switches,
            txs,
            hca_base,
            hcas,
            traffic_rng: ChaCha8Rng::seed_from_u64(cfg.seed),
            routing_rng: ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9E37_79B9_7F4A_7C15),
            trace,
            next_pkt_id: 0,
            next_seq: 0,
            counters: Counters::default(),
            latency: LatencyStats::default(),
            arn_log: cfg.arn_log.then(Vec::new),
            det_log: cfg.detector_log.then(Vec::new),
            deliveries: None,
            seen_flows: HashSet::new(),
            seen_adapt: HashSet::new(),
            seen_afc: HashSet::new(),
            seen_afc_delivery: HashSet::new(),
            failure: None,
            draining: false,
            cfg: cfg.clone(),
        };
        sim.start();
        Ok(sim)
    }

    pub fn enable_dispatch_log(&mut self) {
        self.kernel.enable_log();
    }

    pub fn enable_delivery_log(&mut self) {
        self.deliveries = Some(vec![]);
    }

    fn start(&mut self) {
        for node in 0..self.hcas.len() as NodeId {
            match self.hcas[node as usize].gen {
                GenKind::Off => {}
                GenKind::Uniform => {
                    self.kernel.schedule(SimTime::ZERO, Ev::Generate { node });
                }
                GenKind::Window {
                    from,
                    uniform_outside,
                    ..
                } => {
                    let at = if uniform_outside { SimTime::ZERO } else { from };
                    self.kernel.schedule(at, Ev::Generate { node });
                }
            }
        }
        if let Some(t) = &self.trace {
            let deps: Vec<bool> = t.msgs.iter().map(|m| m.dep.is_none()).collect();
            for (i, root) in deps.into_iter().enumerate() {
                if root {
                    let at = self.trace.as_ref().unwrap().msgs[i].issue;
                    self.kernel.schedule(at, Ev::Issue { msg: i as u32 });
                }
            }
        }
        if self.routing.uses_detector() {
            self.kernel.schedule(self.sweep_period(), Ev::Sweep);
        }
        self.kernel.schedule(self.checkpoint_every, Ev::Checkpoint);
    }

    fn sweep_period(&self) -> SimTime {
        SimTime((self.ttl.as_ps() / 10).max(1))
    }

    fn ser(&self, bytes: u32) -> SimTime {
        SimTime(((bytes as f64 * 8.0 / self.gbps) * 1_000.0).round() as u64)
    }

    fn afc(&self) -> Option<Vc> {
        self.sqs.afc()
    }

    fn log_arn(
        &mut self,
        event: ArnEventKind,
        entity: Entity,
        port: Option<PortId>,
        info: &ArnInfo,
    ) {
        if let Some(log) = self.arn_log.as_mut() {
            log.push(ArnLogRecord {
                time: self.kernel.now(),
                event,
                entity,
                port,
                dst: info.dst,
                vc: info.vc,
                arn_id: info.arn_id,
                root_info: info.root_info,
            });
        }
    }

    fn fail(&mut self, msg: String) {
        if self.failure.is_none() {
            self.failure = Some((self.kernel.now(), msg));
        }
    }

    // ---------------------------------------------------------------- run

    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let drain = SimTime::from_ms_f64(self.cfg.drain_ms);
        let mut end = self.gen_end;
        loop {
            let Some((t, ev)) = self.kernel.pop_until(end) else {
                if self.draining {
                    break;
                }
                self.draining = true;
                end = self.gen_end + drain;
                continue;
            };
            self.handle(t, ev);
            if self.failure.is_some() {
                break;
            }
            if !self.draining && self.trace_complete() {
                self.draining = true;
                self.gen_end = t;
                end = t + drain;
            }
            if self.draining && self.outstanding() == 0 {
                break;
            }
        }
        self.check_invariants();
        if let Some((at, msg)) = self.failure.take() {
            return Err(SimError::Protocol { at, msg });
        }
        Ok(self.finish())
    }

    fn trace_complete(&self) -> bool {
        self.trace
            .as_ref()
            .is_some_and(|t| t.completed == t.msgs.len())
    }

    fn outstanding(&self) -> u64 {
        self.counters.created - self.counters.delivered
    }

    fn handle(&mut self, now: SimTime, ev: Ev) {
        match ev {
            Ev::Arrive { sw, port, pkt } => self.on_arrive(sw, port, pkt),
            Ev::Deliver { node, pkt } => self.on_deliver(node, pkt),
            Ev::Credit { tx, vc, shared } => self.on_credit(tx, vc, shared),
            Ev::TxFree { tx } => self.arbitrate_tx(tx),
            Ev::Generate { node } => self.on_generate(node),
            Ev::Issue { msg } => self.on_issue(msg),
            Ev::ArnToSwitch { sw, port, info } => self.on_arn_switch(sw, port, info),
            Ev::ArnToNode { node, info } => self.on_arn_node(node, info),
            Ev::Crt { sw, port, epoch } => self.on_crt(sw, port, epoch),
            Ev::Sweep => {
                self.on_sweep();
                if !self.draining || self.outstanding() > 0 {
                    self.kernel.schedule(now + self.sweep_period(), Ev::Sweep);
                }
            }
            Ev::Checkpoint => {
                self.check_invariants();
                self.kernel
                    .schedule(now + self.checkpoint_every, Ev::Checkpoint);
            }
        }
    }

    // ------------------------------------------------------------ traffic

    fn new_packet(&mut self, src: NodeId, dst: NodeId, size: u32, msg: u32) -> Packet {
        let now = self.kernel.now();
        let original_vc = self.sqs.map_vc(src, dst, &self.topo);
        let mut adapted = false;
        let afi = self.routing.afi_enabled && self.routing.uses_detector();
        if afi {
            let hit = self.hcas[src as usize]
                .entries
                .iter()
                .find(|e| e.dst == dst && e.vc == original_vc)
                .copied();
            if let Some(e) = hit {
                adapted = true;
                self.counters.packets_adapted += 1;
                if self.seen_adapt.insert((Entity::Node(src), e.arn_id)) {
                    let info = ArnInfo {
                        dst,
                        port: 0,
                        vc: original_vc,
                        arn_id: e.arn_id,
                        root_info: 0,
                    };
                    self.log_arn(ArnEventKind::PacketAdapted, Entity::Node(src), None, &info);
                }
            }
        }
        let next_vc = if adapted {
            self.afc().unwrap_or(original_vc)
        } else {
            original_vc
        };
        self.next_pkt_id += 1;
        Packet {
            id: self.next_pkt_id,
            inject: now,
            seq: 0,
            src,
            dst,
            msg,
            size,
            out: 0,
            original_vc,
            vc: next_vc,
            next_vc,
            shared: false,
            adapted,
        }
    }

    /// Next destination and whether it was drawn at random.
    fn next_destination(
        &mut self,
        node: NodeId,
        now: SimTime,
    ) -> Result<(NodeId, bool), Option<SimTime>> {
        let n = self.topo.endnode_count();
        match self.hcas[node as usize].gen {
            GenKind::Off => Err(None),
            GenKind::Uniform => Ok((uniform_dst(&mut self.traffic_rng, node, n), true)),
            GenKind::Window {
                dst,
                from,
                to,
                uniform_outside,
            } => {
                if now >= from && now < to {
                    Ok((dst, false))
                } else if uniform_outside {
                    Ok((uniform_dst(&mut self.traffic_rng, node, n), true))
                } else if now < from {
                    Err(Some(from))
                } else {
                    Err(None)
                }
            }
        }
    }

    /// VC a packet from `src` to `dst` would be queued in at the source.
    fn source_vc(&self, src: NodeId, dst: NodeId) -> Vc {
        let orig = self.sqs.map_vc(src, dst, &self.topo);
        let afi = self.routing.afi_enabled && self.routing.uses_detector();
        let hit = afi
            && self.hcas[src as usize]
                .entries
                .iter()
                .any(|e| e.dst == dst && e.vc == orig);
        self.sqs.effective_vc(orig, hit).unwrap_or(orig)
    }

    fn on_generate(&mut self, node: NodeId) {
        let now = self.kernel.now();
        if now >= self.gen_end || self.draining {
            return;
        }
        let h = node as usize;
        let cap = self.cfg.hca_queue_pkts as usize;
        let pkt = match self.hcas[h].pending.take() {
            Some(p) => p,
            None => {
                // a random destination whose VC queue is full is redrawn, so
                // one blocked VC does not stall the node's other traffic
                // and, failing that, a regular VC is preferred over the AFC
                let mut tries = 0;
                let mut fallback = None;
                let dst = loop {
                    match self.next_destination(node, now) {
                        Ok((dst, random)) => {
                            tries += 1;
                            let vc = self.source_vc(node, dst);
                            if !random || self.hcas[h].queues[vc as usize].len() < cap {
                                break dst;
                            }
                            if fallback.is_none() && Some(vc) != self.afc() {
                                fallback = Some(dst);
                            }
                            if tries >= RESAMPLE_TRIES {
                                break fallback.unwrap_or(dst);
                            }
                        }
                        Err(Some(wake)) => {
                            self.kernel.schedule(wake, Ev::Generate { node });
                            return;
                        }
                        Err(None) => return,
                    }
                };
                let p = self.new_packet(node, dst, self.mtu, NO_MSG);
                self.hcas[h].next_due = now + self.gen_interval();
                p
            }
        };
        let q = pkt.next_vc as usize;
        if self.hcas[h].queues[q].len() >= cap {
            self.hcas[h].pending = Some(pkt);
            self.hcas[h].stalled = true;
            return;
        }
        self.enqueue_hca(node, pkt);
        let due = self.hcas[h].next_due.max(now);
        self.kernel.schedule(due, Ev::Generate { node });
    }

    fn gen_interval(&self) -> SimTime {
        SimTime((self.ser(self.mtu).as_ps() as f64 / self.cfg.injection_rate).round() as u64)
    }

    fn enqueue_hca(&mut self, node: NodeId, pkt: Packet) {
        self.counters.created += 1;
        self.hcas[node as usize].queues[pkt.next_vc as usize].push_back(pkt);
        self.arbitrate_tx((self.hca_base + node as usize) as u32);
    }

    fn on_issue(&mut self, msg: u32) {
        if self.kernel.now() >= self.gen_end && self.gen_end < self.sim_end {
            return;
        }
        let m = self.trace.as_ref().unwrap().msgs[msg as usize];
        let sizes = segment(m.bytes, self.mtu);
        self.trace.as_mut().unwrap().remaining[msg as usize] = sizes.len() as u32;
        for s in sizes {
            let p = self.new_packet(m.src, m.dst, s, msg);
            self.counters.created += 1;
            self.hcas[m.src as usize].queues[p.next_vc as usize].push_back(p);
        }
        self.arbitrate_tx((self.hca_base + m.src as usize) as u32);
    }

    // ------------------------------------------------------- arbitration

    fn arbitrate_tx(&mut self, tx: u32) {
        let now = self.kernel.now();
        if self.txs[tx as usize].busy_until > now {
            return;
        }
        match self.txs[tx as usize].owner {
            Peer::Switch { id, port } => self.arbitrate_switch(id, port),
            Peer::Node(node) => self.arbitrate_hca(node),
        }
    }

    fn arbitrate_hca(&mut self, node: NodeId) {
        let tx = self.hca_base + node as usize;
        let h = &mut self.hcas[node as usize];
        let vcs = h.queues.len();
        let mut pick = None;
        for k in 0..vcs {
            let v = (h.rr + k) % vcs;
            if let Some(head) = h.queues[v].front() {
                if self.txs[tx].available(head.next_vc) > 0 {
                    pick = Some(v);
                    break;
                }
            }
        }
        let Some(v) = pick else { return };
        h.rr = (v + 1) % vcs;
        let mut pkt = h.queues[v].pop_front().unwrap();
        let resume = h.stalled && h.pending.is_some_and(|p| p.next_vc as usize == v);
        if resume {
            h.stalled = false;
        }
        let now = self.kernel.now();
        if resume {
            let due = self.hcas[node as usize].next_due.max(now);
            self.kernel.schedule(due, Ev::Generate { node });
        }
        if self.arn_log.is_some() && self.seen_flows.insert((pkt.src, pkt.dst)) {
            let info = ArnInfo {
                dst: pkt.dst,
                port: 0,
                vc: pkt.original_vc,
                arn_id: 0,
                root_info: 0,
            };
            self.log_arn(ArnEventKind::FlowStart, Entity::Node(node), None, &info);
        }
        self.counters.injected += 1;
        pkt.vc = pkt.next_vc;
        self.transmit(tx as u32, pkt);
    }

    fn arbitrate_switch(&mut self, sw: SwitchId, out: PortId) {
        let s = &mut self.switches[sw as usize];
        let ports = s.ports;
        let vcs = self.vcs;
        let o = out as usize;
        let tx = s.tx_base + o;
        let pairs = ports * vcs;
        let mut pick = None;
        for k in 0..pairs {
            let idx = (s.rr[o] + k) % pairs;
            let (inport, vc) = (idx / vcs, idx % vcs);
            if let Some(head) = s.inbufs[inport].q[vc * ports + o].front() {
                if self.txs[tx].available(head.next_vc) > 0 {
                    pick = Some((idx, inport, vc));
                    break;
                }
            }
        }
        let Some((idx, inport, vc)) = pick else {
            return;
        };
        s.rr[o] = (idx + 1) % pairs;
        let buf = &mut s.inbufs[inport];
        let pkt = buf.q[vc * ports + o].pop_front().unwrap();
        buf.voq[o] -= 1;
        buf.vc_occ[vc] -= 1;
        buf.total -= 1;
        if pkt.shared {
            buf.shared_used -= 1;
        } else {
            buf.res_used[vc] -= 1;
        }
        let occ = buf.voq[o];
        let up = s.upstream_tx[inport];
        // slot is released once the packet has left the buffer
        let ser = self.ser(pkt.size);
        {
            let utx = &mut self.txs[up as usize];
            if pkt.shared {
                utx.ret_shared += 1;
            } else {
                utx.ret_res[vc] += 1;
            }
        }
        let now = self.kernel.now();
        self.kernel.schedule(
            now + ser + self.prop,
            Ev::Credit {
                tx: up,
                vc: vc as Vc,
                shared: pkt.shared,
            },
        );
        if self.routing.uses_detector() {
            let det = self.det;
            self.switches[sw as usize].detectors[o].update_voq(
                &det,
                inport as PortId,
                occ,
                self.port_cap,
            );
        }
        let mut fwd = pkt;
        fwd.vc = pkt.next_vc;
        self.transmit(tx as u32, fwd);
        self.evaluate_detector(sw, out);
    }

    /// Puts `pkt` on the wire of `tx`; `pkt.vc` is the VC it will occupy
    /// downstream.
    fn transmit(&mut self, tx: u32, mut pkt: Packet) {
        let now = self.kernel.now();
        let ser = self.ser(pkt.size);
        let t = &mut self.txs[tx as usize];
        pkt.shared = t.take(pkt.vc);
        t.busy_until = now + ser;
        let down = t.down;
        self.kernel.schedule(now + ser, Ev::TxFree { tx });
        let at = now + ser + self.prop;
        match down {
            Peer::Switch { id, port } => {
                self.kernel.schedule(at, Ev::Arrive { sw: id, port, pkt });
            }
            Peer::Node(node) => {
                self.kernel.schedule(at, Ev::Deliver { node, pkt });
            }
        }
    }

    fn on_credit(&mut self, tx: u32, vc: Vc, shared: bool) {
        let res = self.res_cap[vc as usize];
        let shared_cap = self.shared_cap;
        let t = &mut self.txs[tx as usize];
        let v = vc as usize;
        let over = if shared {
            t.ret_shared -= 1;
            t.credits_shared += 1;
            t.credits_shared > shared_cap
        } else {
            t.ret_res[v] -= 1;
            t.credits_res[v] += 1;
            t.credits_res[v] > res
        };
        let owner = t.owner;
        if over {
            self.counters.credit_violations += 1;
            self.fail(format!("credit overflow on {owner:?} vc {vc}"));
            return;
        }
        if let Peer::Switch { id, port } = owner {
            self.evaluate_detector(id, port);
        }
        self.arbitrate_tx(tx);
    }

    // ---------------------------------------------------------- arrivals

    fn on_arrive(&mut self, sw: SwitchId, port: PortId, mut pkt: Packet) {
        let now = self.kernel.now();
        let afc = self.afc();
        let up = self.switches[sw as usize].upstream_tx[port as usize];
        {
            let t = &mut self.txs[up as usize];
            if pkt.shared {
                t.wire_shared -= 1;
            } else {
                t.wire_res[pkt.vc as usize] -= 1;
            }
        }
        if pkt.adapted && Some(pkt.vc) != afc {
            self.counters.adapted_outside_afc += 1;
        }
        // buffer accounting; an overflow means a packet arrived without credit
        {
            let vcs = self.vcs;
            let buf = &mut self.switches[sw as usize].inbufs[port as usize];
            let v = pkt.vc as usize;
            if pkt.shared {
                buf.shared_used += 1;
            } else {
                buf.res_used[v] += 1;
            }
            buf.vc_occ[v] += 1;
            buf.total += 1;
            let bad = buf.shared_used > self.shared_cap
                || buf.res_used[v] > self.res_cap[v]
                || buf.total > self.port_cap
                || v >= vcs;
            if bad {
                self.fail(format!("buffer overflow at switch {sw} port {port} vc {v}"));
                return;
            }
        }
        if Some(pkt.vc) == afc && self.arn_log.is_some() && self.seen_afc.insert((sw, pkt.dst)) {
            let info = ArnInfo {
                dst: pkt.dst,
                port,
                vc: pkt.original_vc,
                arn_id: 0,
                root_info: 0,
            };
            self.log_arn(
                ArnEventKind::AfcStored,
                Entity::Switch(sw),
                Some(port),
                &info,
            );
        }

        self.route(sw, port, &mut pkt);
        self.next_seq += 1;
        pkt.seq = self.next_seq;
        let out = pkt.out as usize;
        let s = &mut self.switches[sw as usize];
        let ports = s.ports;
        let buf = &mut s.inbufs[port as usize];
        buf.q[pkt.vc as usize * ports + out].push_back(pkt);
        buf.voq[out] += 1;
        let occ = buf.voq[out];
        if self.routing.uses_detector() {
            let det = self.det;
            s.detectors[out].update_voq(&det, port, occ, self.port_cap);
            self.evaluate_detector(sw, pkt.out);
        }
        let _ = now;
        let tx = (self.switches[sw as usize].tx_base + out) as u32;
        self.arbitrate_tx(tx);
    }

    /// Input-port controller: picks the output port and next-hop VC.
    fn route(&mut self, sw: SwitchId, inport: PortId, pkt: &mut Packet) {
        let det_port = dmodk_route(&self.topo, sw, pkt.dst);
        let afc = self.afc();
        let vc_after = |adapted: bool, orig: Vc| if adapted { afc.unwrap_or(orig) } else { orig };
        match self.routing.kind {
            RoutingKind::DmodK => {
                pkt.out = det_port;
            }
            RoutingKind::Oblivious => {
                pkt.out = if pkt.adapted {
                    det_port
                } else {
                    oblivious_route(&self.topo, sw, pkt.dst, &mut self.routing_rng)
                };
            }
            RoutingKind::AdaptiveTh => {
                if pkt.adapted {
                    pkt.out = det_port;
                } else {
                    let s = &self.switches[sw as usize];
                    let view = TxView {
                        txs: &self.txs[s.tx_base..s.tx_base + s.ports],
                        caps: &self.vc_caps,
                    };
                    let p = adaptive_th_route(
                        &self.topo,
                        sw,
                        pkt.dst,
                        pkt.original_vc,
                        self.routing.adaptive_threshold,
                        &view,
                    );
                    pkt.out = p;
                    if p != det_port && self.routing.afi_enabled && afc.is_some() {
                        self.mark_adapted(pkt);
                    }
                }
            }
            RoutingKind::ArnDriven => {
                let table = &self.switches[sw as usize].table;
                match input_port_controller(
                    table,
                    pkt.dst,
                    pkt.original_vc,
                    pkt.adapted,
                    self.routing.afi_enabled,
                ) {
                    PortControl::Alternative {
                        port,
                        mark_adapted,
                        arn_id,
                        ..
                    } => {
                        pkt.out = port;
                        if mark_adapted {
                            self.mark_adapted(pkt);
                            if self.arn_log.is_some()
                                && self.seen_adapt.insert((Entity::Switch(sw), arn_id))
                            {
                                let info = ArnInfo {
                                    dst: pkt.dst,
                                    port,
                                    vc: pkt.original_vc,
                                    arn_id,
                                    root_info: 0,
                                };
                                self.log_arn(
                                    ArnEventKind::PacketAdapted,
                                    Entity::Switch(sw),
                                    Some(port),
                                    &info,
                                );
                            }
                        }
                    }
                    PortControl::Deterministic { send_arn } => {
                        pkt.out = det_port;
                        if let Some(info) = send_arn {
                            self.send_arn(sw, inport, info);
                        }
                    }
                }
            }
        }
        pkt.next_vc = vc_after(pkt.adapted, pkt.original_vc);
    }

    fn mark_adapted(&mut self, pkt: &mut Packet) {
        if pkt.adapted {
            self.counters.adapted_twice += 1;
        }
        pkt.adapted = true;
        self.counters.packets_adapted += 1;
    }

    fn on_deliver(&mut self, node: NodeId, pkt: Packet) {
        let now = self.kernel.now();
        let (sw, port) = self.topo.attachment(node);
        let tx = (self.switches[sw as usize].tx_base + port as usize) as u32;
        {
            let t = &mut self.txs[tx as usize];
            if pkt.shared {
                t.wire_shared -= 1;
                t.ret_shared += 1;
            } else {
                t.wire_res[pkt.vc as usize] -= 1;
                t.ret_res[pkt.vc as usize] += 1;
            }
        }
        self.kernel.schedule(
            now + self.prop,
            Ev::Credit {
                tx,
                vc: pkt.vc,
                shared: pkt.shared,
            },
        );
        if pkt.dst != node {
            self.fail(format!(
                "packet {} for {} delivered to {node}",
                pkt.id, pkt.dst
            ));
            return;
        }
        let afc = self.afc();
        if pkt.adapted && Some(pkt.vc) != afc {
            self.counters.adapted_outside_afc += 1;
        }
        if Some(pkt.vc) == afc && self.arn_log.is_some() && self.seen_afc_delivery.insert(node) {
            let info = ArnInfo {
                dst: node,
                port: 0,
                vc: pkt.original_vc,
                arn_id: 0,
                root_info: 0,
            };
            self.log_arn(ArnEventKind::AfcDelivered, Entity::Node(node), None, &info);
        }
        if let Some(log) = &mut self.deliveries {
            log.push(Delivery {
                time: now,
                src: pkt.src,
                dst: pkt.dst,
                vc: pkt.vc,
                original_vc: pkt.original_vc,
                adapted: pkt.adapted,
            });
        }
        self.counters.delivered += 1;
        self.counters.delivered_bytes += pkt.size as u64;
        self.efficiency.record(now, pkt.size as u64);
        self.latency.record(now - pkt.inject);
        if pkt.msg != NO_MSG {
            self.on_trace_packet(pkt.msg);
        }
    }

    fn on_trace_packet(&mut self, msg: u32) {
        let now = self.kernel.now();
        let t = self.trace.as_mut().unwrap();
        let r = &mut t.remaining[msg as usize];
        *r -= 1;
        if *r > 0 {
            return;
        }
        t.completed += 1;
        t.last_done = t.last_done.max(now);
        let kids = t.children[msg as usize].clone();
        for k in kids {
            let at = t.msgs[k as usize].issue.max(now);
            self.kernel.schedule(at, Ev::Issue { msg: k });
        }
    }

    // ---------------------------------------------------------- detector

    /// Head packet of the VOQ `(inport, out)`, oldest across VCs.
    fn voq_head(&self, sw: SwitchId, inport: PortId, out: PortId) -> Option<Packet> {
        let s = &self.switches[sw as usize];
        let buf = &s.inbufs[inport as usize];
        (0..self.vcs)
            .filter_map(|v| buf.q[v * s.ports + out as usize].front())
            .min_by_key(|p| p.seq)
            .copied()
    }

    /// Whether the packet responsible for congestion at `out` sees more free
    /// credits than FCTh in its next VC.
    fn root_credits(&self, sw: SwitchId, out: PortId) -> (bool, Option<PortId>, u32) {
        let det = &self.switches[sw as usize].detectors[out as usize];
        let Some(inport) = det.first_above() else {
            return (false, None, 0);
        };
        let Some(head) = self.voq_head(sw, inport, out) else {
            return (false, Some(inport), 0);
        };
        let tx = &self.txs[self.switches[sw as usize].tx_base + out as usize];
        let free = tx.available(head.next_vc);
        let ok = self.det.classify(free, self.vc_caps[head.next_vc as usize])
            == crate::detector::Classification::RootCandidate;
        (ok, Some(inport), free)
    }

    fn evaluate_detector(&mut self, sw: SwitchId, out: PortId) {
        if !self.routing.uses_detector() {
            return;
        }
        let d = &self.switches[sw as usize].detectors[out as usize];
        let idle = matches!(d.phase(), crate::detector::Phase::Idle);
        if idle && !d.any_above() {
            return;
        }
        if d.is_root() && d.exceed_count() > 0 {
            return;
        }
        let (ok, inport, free) = self.root_credits(sw, out);
        let now = self.kernel.now();
        let det = self.det;
        let tr = self.switches[sw as usize].detectors[out as usize].evaluate(&det, now, ok);
        self.apply_transition(sw, out, tr, inport, free);
    }

    fn on_crt(&mut self, sw: SwitchId, out: PortId, epoch: u64) {
        let (ok, inport, free) = self.root_credits(sw, out);
        let now = self.kernel.now();
        let tr = self.switches[sw as usize].detectors[out as usize].on_crt_expiry(epoch, now, ok);
        self.apply_transition(sw, out, tr, inport, free);
    }

    fn log_detector(
        &mut self,
        sw: SwitchId,
        out: PortId,
        event: &'static str,
        inport: Option<PortId>,
        free: u32,
    ) {
        let now = self.kernel.now();
        let occupancy = inport
            .map(|i| self.switches[sw as usize].inbufs[i as usize].voq[out as usize])
            .unwrap_or(0);
        if let Some(log) = self.det_log.as_mut() {
            log.push(DetectorLogRecord {
                time: now,
                switch: sw,
                port: out,
                event,
                inport,
                occupancy,
                free_credits: free,
            });
        }
    }

    fn apply_transition(
        &mut self,
        sw: SwitchId,
        out: PortId,
        tr: Transition,
        inport: Option<PortId>,
        free: u32,
    ) {
        match tr {
            Transition::None => {}
            Transition::CandidateStarted { epoch, expires_at } => {
                self.log_detector(sw, out, "candidate", inport, free);
                self.kernel.schedule(
                    expires_at,
                    Ev::Crt {
                        sw,
                        port: out,
                        epoch,
                    },
                );
            }
            Transition::CandidateCanceled => {
                self.log_detector(sw, out, "canceled", inport, free);
            }
            Transition::RootConfirmed => {
                self.log_detector(sw, out, "root", inport, free);
                self.root_confirmed(sw, out, inport);
            }
            Transition::RootCleared => {
                self.log_detector(sw, out, "cleared", inport, free);
                self.counters.roots_cleared += 1;
                if let Some(info) = self.switches[sw as usize].roots[out as usize].take() {
                    self.log_arn(
                        ArnEventKind::RootCleared,
                        Entity::Switch(sw),
                        Some(out),
                        &info,
                    );
                }
            }
        }
    }

    fn root_confirmed(&mut self, sw: SwitchId, out: PortId, inport: Option<PortId>) {
        let Some(head) = inport.and_then(|i| self.voq_head(sw, i, out)) else {
            return;
        };
        self.counters.roots_detected += 1;
        let s = &mut self.switches[sw as usize];
        let arn_id = make_arn_id(sw, s.arn_counter);
        s.arn_counter = s.arn_counter.wrapping_add(1);
        let upward = self.topo.classify_port(sw, out) == PortDir::Up;
        let info = ArnInfo {
            dst: head.dst,
            port: out,
            vc: head.original_vc,
            arn_id,
            root_info: root_info_for(s.stage, upward),
        };
        s.roots[out as usize] = Some(info);
        self.log_arn(
            ArnEventKind::RootDetected,
            Entity::Switch(sw),
            Some(out),
            &info,
        );
        self.process_arn_at(sw, info, head.adapted);
    }

    // --------------------------------------------------------------- ARN

    fn process_arn_at(&mut self, sw: SwitchId, info: ArnInfo, adapted: bool) {
        let now = self.kernel.now();
        let afc = if self.routing.afi_enabled {
            self.afc()
        } else {
            None
        };
        let topo = &self.topo;
        let s = &mut self.switches[sw as usize];
        let view = TxView {
            txs: &self.txs[s.tx_base..s.tx_base + s.ports],
            caps: &self.vc_caps,
        };
        let stage = s.stage;
        let outcome = s.table.process_arn(info, adapted, stage, now, |a| {
            select_alternative_oport(topo, sw, a.dst, a.vc, a.port, afc, &view).ok()
        });
        match outcome {
            ProcessOutcome::Stored => {
                self.log_arn(
                    ArnEventKind::EntryAdded,
                    Entity::Switch(sw),
                    Some(info.port),
                    &info,
                );
            }
            ProcessOutcome::Consumed { alt_port, .. } => {
                self.counters.arn_consumed_switch += 1;
                self.log_arn(
                    ArnEventKind::EntryAdded,
                    Entity::Switch(sw),
                    Some(info.port),
                    &info,
                );
                self.log_arn(
                    ArnEventKind::ArnConsumed,
                    Entity::Switch(sw),
                    Some(alt_port),
                    &info,
                );
            }
            ProcessOutcome::Refreshed | ProcessOutcome::SkippedAdapted => {}
        }
    }

    fn send_arn(&mut self, sw: SwitchId, inport: PortId, info: ArnInfo) {
        let now = self.kernel.now();
        let s = &mut self.switches[sw as usize];
        let key = (inport, info.arn_id);
        if let Some(last) = s.arn_last_sent.get(&key) {
            if now < *last + self.resend {
                return;
            }
        }
        s.arn_last_sent.insert(key, now);
        self.counters.arn_sent += 1;
        self.log_arn(
            ArnEventKind::ArnSent,
            Entity::Switch(sw),
            Some(inport),
            &info,
        );
        let at = now + self.arn_delay;
        match self.topo.peer(sw, inport) {
            Peer::Switch { id, port } => {
                self.kernel
                    .schedule(at, Ev::ArnToSwitch { sw: id, port, info });
            }
            Peer::Node(node) => {
                self.kernel.schedule(at, Ev::ArnToNode { node, info });
            }
        }
    }

    fn on_arn_switch(&mut self, sw: SwitchId, port: PortId, mut info: ArnInfo) {
        info.port = port;
        self.log_arn(
            ArnEventKind::ArnReceived,
            Entity::Switch(sw),
            Some(port),
            &info,
        );
        self.process_arn_at(sw, info, false);
    }

    /// Endnodes consume ARNs whose root lies on their last hop. With AFI the
    /// matching packets they create from then on are marked adapted.
    fn on_arn_node(&mut self, node: NodeId, info: ArnInfo) {
        let now = self.kernel.now();
        self.log_arn(ArnEventKind::ArnReceived, Entity::Node(node), None, &info);
        if info.root_info != 0 {
            return;
        }
        let entries = &mut self.hcas[node as usize].entries;
        if let Some(e) = entries
            .iter_mut()
            .find(|e| e.dst == info.dst && e.vc == info.vc && e.arn_id == info.arn_id)
        {
            e.last_refresh = now;
            return;
        }
        entries.retain(|e| !(e.dst == info.dst && e.vc == info.vc));
        entries.push(HcaEntry {
            dst: info.dst,
            vc: info.vc,
            arn_id: info.arn_id,
            last_refresh: now,
        });
        self.counters.arn_consumed_node += 1;
        self.log_arn(ArnEventKind::ArnConsumed, Entity::Node(node), None, &info);
    }

    fn on_sweep(&mut self) {
        let now = self.kernel.now();
        // roots keep their own entries alive
        for sw in 0..self.switches.len() as SwitchId {
            for out in 0..self.switches[sw as usize].ports as PortId {
                let Some(root) = self.switches[sw as usize].roots[out as usize] else {
                    continue;
                };
                let ports = self.switches[sw as usize].ports as PortId;
                let busiest = (0..ports)
                    .max_by_key(|i| {
                        (
                            self.switches[sw as usize].inbufs[*i as usize].voq[out as usize],
                            std::cmp::Reverse(*i),
                        )
                    })
                    .unwrap();
                let Some(head) = self.voq_head(sw, busiest, out) else {
                    continue;
                };
                let info = ArnInfo {
                    dst: head.dst,
                    vc: head.original_vc,
                    ..root
                };
                self.switches[sw as usize].roots[out as usize] = Some(info);
                self.process_arn_at(sw, info, head.adapted);
            }
        }
        for sw in 0..self.switches.len() {
            // a consumed entry stays alive while packets it adapted still
            // wait here for the AFC
            let s = &mut self.switches[sw];
            let backlogged: Vec<(NodeId, Vc)> = s
                .table
                .entries()
                .iter()
                .filter(|e| e.consumed)
                .filter_map(|e| {
                    let alt = e.alt_port? as usize;
                    let waiting = s.inbufs.iter().any(|b| {
                        (0..self.vcs).any(|v| {
                            b.q[v * s.ports + alt].iter().any(|p| {
                                p.adapted && p.dst == e.info.dst && p.original_vc == e.info.vc
                            })
                        })
                    });
                    waiting.then_some((e.info.dst, e.info.vc))
                })
                .collect();
            for (dst, vc) in backlogged {
                s.table.refresh_consumed(dst, vc, now);
            }
            let purged = self.switches[sw].table.age(now, self.ttl);
            for e in purged {
                self.counters.entries_expired += 1;
                self.log_arn(
                    ArnEventKind::EntryExpired,
                    Entity::Switch(sw as SwitchId),
                    Some(e.info.port),
                    &e.info,
                );
            }
            let resend = self.resend;
            self.switches[sw]
                .arn_last_sent
                .retain(|_, t| now.saturating_sub(*t) < resend);
        }
        let ttl = self.ttl;
        let afc = self.afc();
        for node in 0..self.hcas.len() {
            // adapted packets still waiting at the source keep their entry alive
            let h = &mut self.hcas[node];
            if let Some(a) = afc {
                let q = &h.queues[a as usize];
                for e in h.entries.iter_mut() {
                    if q.iter().any(|p| p.dst == e.dst && p.original_vc == e.vc) {
                        e.last_refresh = now;
                    }
                }
            }
            let mut purged = vec![];
            self.hcas[node].entries.retain(|e| {
                let keep = now.saturating_sub(e.last_refresh) <= ttl;
                if !keep {
                    purged.push(*e);
                }
                keep
            });
            for e in purged {
                self.counters.entries_expired += 1;
                let info = ArnInfo {
                    dst: e.dst,
                    port: 0,
                    vc: e.vc,
                    arn_id: e.arn_id,
                    root_info: 0,
                };
                self.log_arn(
                    ArnEventKind::EntryExpired,
                    Entity::Node(node as NodeId),
                    None,
                    &info,
                );
            }
        }
    }

    // -------------------------------------------------------- invariants

    fn check_invariants(&mut self) {
        self.counters.checkpoints += 1;
        let mut problems = vec![];
        let mut buffered = 0u64;
        for (sw, s) in self.switches.iter().enumerate() {
            for (p, b) in s.inbufs.iter().enumerate() {
                let by_vc: u32 = b.vc_occ.iter().sum();
                let by_voq: u32 = b.voq.iter().sum();
                let by_pool: u32 = b.res_used.iter().sum::<u32>() + b.shared_used;
                if by_vc != b.total || by_voq != b.total || by_pool != b.total {
                    problems.push(format!("switch {sw} port {p}: VC/VOQ occupancy mismatch"));
                }
                if b.total > self.port_cap {
                    problems.push(format!("switch {sw} port {p}: over capacity"));
                }
                buffered += b.total as u64;
            }
        }
        let mut wire = 0u64;
        for t in &self.txs {
            let (occ_res, occ_shared) = match t.down {
                Peer::Switch { id, port } => {
                    let b = &self.switches[id as usize].inbufs[port as usize];
                    (b.res_used.clone(), b.shared_used)
                }
                Peer::Node(_) => (vec![0; self.vcs], 0),
            };
            for (v, occ) in occ_res.iter().enumerate() {
                let sum = t.credits_res[v] + t.wire_res[v] + occ + t.ret_res[v];
                if sum != self.res_cap[v] {
                    problems.push(format!(
                        "credit conservation broken on {:?} vc {v}: {sum} != {}",
                        t.owner, self.res_cap[v]
                    ));
                }
                wire += t.wire_res[v] as u64;
            }
            let sum = t.credits_shared + t.wire_shared + occ_shared + t.ret_shared;
            if sum != self.shared_cap {
                problems.push(format!(
                    "shared credit conservation broken on {:?}: {sum} != {}",
                    t.owner, self.shared_cap
                ));
            }
            wire += t.wire_shared as u64;
        }
        let queued: u64 = self
            .hcas
            .iter()
            .map(|h| h.queues.iter().map(|q| q.len() as u64).sum::<u64>())
            .sum();
        let c = &self.counters;
        if c.injected != c.delivered + wire + buffered {
            problems.push(format!(
                "losslessness broken: injected {} != delivered {} + wire {} + buffered {}",
                c.injected, c.delivered, wire, buffered
            ));
        }
        if c.created != c.injected + queued {
            problems.push(format!(
                "endnode accounting broken: created {} != injected {} + queued {}",
                c.created, c.injected, queued
            ));
        }
        if !problems.is_empty() {
            self.counters.credit_violations += problems.len() as u64;
            self.fail(problems.join("; "));
        }
    }

    // ------------------------------------------------------------ output

    fn finish(self) -> RunOutput {
        let cfg = &self.cfg;
        let samples = self.efficiency.samples();
        let onset = SimTime::from_ms_f64(cfg.warmup_ms);
        let hot_end = SimTime::from_ms_f64(cfg.warmup_ms + cfg.hotspot_ms).min(self.sim_end);
        let c = &self.counters;
        let drained = c.created == c.delivered;
        let makespan = self.trace.as_ref().and_then(|t| {
            (t.completed == t.msgs.len() && !t.msgs.is_empty()).then_some(t.last_done)
        });

        let mut s = Summary::default();
        s.push("name", &cfg.name);
        s.push("routing", self.routing.name());
        s.push("sqs", cfg.sqs.as_str());
        s.push("vcs_total", self.vcs);
        s.push("endnodes", self.topo.endnode_count());
        s.push("switches", self.topo.switch_count());
        s.push("traffic", cfg.traffic.as_str());
        s.push("seed", cfg.seed);
        s.push("sim_ms", cfg.sim_ms);
        s.push(
            "end_time_us",
            format!("{:.3}", self.kernel.now().as_us_f64()),
        );
        s.push("events", self.kernel.dispatched());
        s.push("created_packets", c.created);
        s.push("injected_packets", c.injected);
        s.push("delivered_packets", c.delivered);
        s.push("delivered_bytes", c.delivered_bytes);
        s.push("drained", drained);
        s.push("mean_latency_ns", format!("{:.1}", self.latency.mean_ns()));
        s.push("p99_latency_ns", self.latency.p99_ns());
        let mean = mean_efficiency(&samples, SimTime::ZERO, self.sim_end).unwrap_or(0.0);
        s.push("mean_efficiency", format!("{mean:.6}"));
        if cfg.incast_kind().is_some() && cfg.traffic != TrafficKind::Trace {
            let pre = mean_efficiency(&samples, SimTime::ZERO, onset).unwrap_or(0.0);
            let during = mean_efficiency(&samples, onset, hot_end).unwrap_or(0.0);
            s.push("pre_hotspot_efficiency", format!("{pre:.6}"));
            s.push("hotspot_efficiency", format!("{during:.6}"));
            let rec = recovery(&samples, SimTime::ZERO, onset, hot_end, 0.9);
            match rec.and_then(|r| r.recovery_time) {
                Some(t) => {
                    s.push("recovery_time_us", format!("{:.1}", t.as_us_f64()));
                    let post = mean_efficiency(&samples, onset + t, hot_end).unwrap_or(0.0);
                    s.push("post_recovery_efficiency", format!("{post:.6}"));
                }
                None => s.push("recovery_time_us", "none"),
            }
        }
        if let Some(t) = &self.trace {
            s.push("trace_messages", t.msgs.len());
            s.push("trace_completed", t.completed);
            match makespan {
                Some(m) => s.push("makespan_us", format!("{:.3}", m.as_us_f64())),
                None => s.push("makespan_us", "none"),
            }
        }
        s.push("roots_detected", c.roots_detected);
        s.push("roots_cleared", c.roots_cleared);
        s.push("arn_sent", c.arn_sent);
        s.push("arn_consumed_switch", c.arn_consumed_switch);
        s.push("arn_consumed_node", c.arn_consumed_node);
        s.push("entries_expired", c.entries_expired);
        s.push("packets_adapted", c.packets_adapted);
        s.push("adapted_twice", c.adapted_twice);
        s.push("adapted_outside_afc", c.adapted_outside_afc);
        s.push("credit_violations", c.credit_violations);
        s.push("checkpoints", c.checkpoints);

        RunOutput {
            summary: s,
            counters: self.counters.clone(),
            arn_log: self.arn_log.unwrap_or_default(),
            detector_log: self.det_log.unwrap_or_default(),
            makespan,
            drained,
            end_time: self.kernel.now(),
            events: self.kernel.dispatched(),
            dispatch_log: self.kernel.log().map(|l| l.to_vec()),
            deliveries: self.deliveries,
            efficiency: self.efficiency,
        }
    }
}

/// Convenience wrapper: build and run.
pub fn simulate(cfg: &Config, workload: Workload) -> Result<RunOutput, SimError> {
    Simulation::new(cfg, workload)?.run()
}

#[allow(dead_code)]
fn _assert_rng_is_rng<R: Rng>(_: &R) {}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(routing: &str) -> Config {
        Config::parse(&format!(
            "ports = 4\nstages = 2\nrouting = {routing}\nwarmup_ms = 0\nhotspot_ms = 0\nsim_ms = 1\ndrain_ms = 1"
        ))
        .unwrap()
    }

    #[test]
    fn afc_and_regular_vc_share_a_link_evenly() {
        let cfg = small("arn_afi");
        let mut sim = Simulation::new(&cfg, Workload::Flows(vec![])).unwrap();
        sim.enable_delivery_log();
        let afc = sim.afc().unwrap();
        for i in 0..800 {
            let mut p = sim.new_packet(0, 3, 4096, NO_MSG);
            if i % 2 == 1 {
                p.adapted = true;
                p.vc = afc;
                p.next_vc = afc;
            }
            sim.enqueue_hca(0, p);
        }
        let out = sim.run().unwrap();
        let log = out.deliveries.unwrap();
        assert_eq!(log.len(), 800);
        // both VCs stay backlogged over the first half
        let on_afc = log[..400].iter().filter(|d| d.vc == afc).count();
        let share = on_afc as f64 / 400.0;
        assert!((share - 0.5).abs() <= 0.05 * 0.5, "afc share {share}");
        assert_eq!(out.counters.adapted_outside_afc, 0);
    }

    #[test]
    fn credits_return_to_capacity_after_drain() {
        let cfg = small("dmodk");
        let mut sim = Simulation::new(&cfg, Workload::Flows(vec![])).unwrap();
        for d in 1..8 {
            for _ in 0..50 {
                let p = sim.new_packet(0, d, 4096, NO_MSG);
                sim.enqueue_hca(0, p);
            }
        }
        let res_cap = sim.res_cap.clone();
        let shared_cap = sim.shared_cap;
        while let Some((t, ev)) = sim.kernel.pop_until(SimTime::from_ms(1)) {
            sim.handle(t, ev);
            for tx in &sim.txs {
                for (v, cap) in res_cap.iter().enumerate() {
                    assert!(tx.credits_res[v] <= *cap);
                }
                assert!(tx.credits_shared <= shared_cap);
            }
        }
        assert!(sim.failure.is_none());
        for tx in &sim.txs {
            assert_eq!(tx.credits_res, res_cap);
            assert_eq!(tx.credits_shared, shared_cap);
        }
    }
}
