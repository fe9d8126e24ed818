//! ARN table and protocol: root notification, table maintenance, and the
//! input-port controller that routes arriving data packets.

use crate::kernel::SimTime;
use crate::queuing::Vc;
use crate::topology::{NodeId, PortId};

/// Protocol fields carried by an ARN and stored in each table entry.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ArnInfo {
    pub dst: NodeId,
    pub port: PortId,
    pub vc: Vc,
    pub arn_id: u32,
    pub root_info: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ArnEntry {
    pub info: ArnInfo,
    pub consumed: bool,
    pub alt_port: Option<PortId>,
    pub alt_vc: Option<Vc>,
    pub last_refresh: SimTime,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ProcessOutcome {
    Refreshed,
    Consumed {
        alt_port: PortId,
        next_vc: Vc,
    },
    Stored,
    /// The responsible packet was adapted: stale entries were removed but
    /// nothing was added.
    SkippedAdapted,
}

/// Congestion root info for a root at `stage`.
pub fn root_info_for(stage: u32, upward_port: bool) -> u8 {
    if upward_port {
        stage as u8
    } else {
        (stage - 1) as u8
    }
}

pub fn make_arn_id(switch: u32, counter: u32) -> u32 {
    (switch << 22) | (counter & 0x3F_FFFF)
}

#[derive(Debug, Clone)]
pub struct ArnTable {
    entries: Vec<ArnEntry>,
    capacity: usize,
    evictions: u64,
}

impl ArnTable {
    pub fn new(capacity: usize) -> Self {
        ArnTable {
            entries: Vec::new(),
            capacity: capacity.max(1),
            evictions: 0,
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn entries(&self) -> &[ArnEntry] {
        &self.entries
    }

    pub fn evictions(&self) -> u64 {
        self.evictions
    }

    pub fn exists(&self, info: &ArnInfo) -> bool {
        self.entries.iter().any(|e| e.info == *info)
    }

    fn remove_matching(&mut self, dst: NodeId, port: PortId, vc: Vc) -> usize {
        let before = self.entries.len();
        self.entries
            .retain(|e| !(e.info.dst == dst && e.info.port == port && e.info.vc == vc));
        before - self.entries.len()
    }

    fn insert(&mut self, entry: ArnEntry) {
        if self.entries.len() >= self.capacity {
            let victim = self
                .entries
                .iter()
                .enumerate()
                .filter(|(_, e)| !e.consumed)
                .min_by_key(|(_, e)| e.last_refresh)
                .or_else(|| {
                    self.entries
                        .iter()
                        .enumerate()
                        .min_by_key(|(_, e)| e.last_refresh)
                })
                .map(|(i, _)| i);
            if let Some(i) = victim {
                self.entries.remove(i);
                self.evictions += 1;
            }
        }
        self.entries.push(entry);
    }

    /// processARN. `select_alt` is only called when this switch sits at the
    /// stage named by the ARN; it returns `None` when no alternative exists,
    /// in which case the entry is kept unconsumed.
    pub fn process_arn<F>(
        &mut self,
        info: ArnInfo,
        adapted: bool,
        stage: u32,
        now: SimTime,
        select_alt: F,
    ) -> ProcessOutcome
    where
        F: FnOnce(&ArnInfo) -> Option<(PortId, Vc)>,
    {
        if let Some(e) = self.entries.iter_mut().find(|e| e.info == info) {
            e.last_refresh = now;
            return ProcessOutcome::Refreshed;
        }
        self.remove_matching(info.dst, info.port, info.vc);
        if adapted {
            return ProcessOutcome::SkippedAdapted;
        }
        let alt = if stage == info.root_info as u32 {
            select_alt(&info)
        } else {
            None
        };
        let entry = ArnEntry {
            info,
            consumed: alt.is_some(),
            alt_port: alt.map(|a| a.0),
            alt_vc: alt.map(|a| a.1),
            last_refresh: now,
        };
        self.insert(entry);
        match alt {
            Some((alt_port, next_vc)) => ProcessOutcome::Consumed { alt_port, next_vc },
            None => ProcessOutcome::Stored,
        }
    }

    /// Most recently refreshed consumed entry for `(dst, vc)`.
    pub fn consumed_for(&self, dst: NodeId, vc: Vc) -> Option<&ArnEntry> {
        self.entries
            .iter()
            .filter(|e| e.consumed && e.info.dst == dst && e.info.vc == vc)
            .max_by_key(|e| e.last_refresh)
    }

    pub fn unconsumed_for(&self, dst: NodeId, vc: Vc) -> Option<&ArnEntry> {
        self.entries
            .iter()
            .filter(|e| !e.consumed && e.info.dst == dst && e.info.vc == vc)
            .max_by_key(|e| e.last_refresh)
    }

    /// Refreshes the consumed entries for `(dst, vc)`.
    pub fn refresh_consumed(&mut self, dst: NodeId, vc: Vc, now: SimTime) {
        for e in self
            .entries
            .iter_mut()
            .filter(|e| e.consumed && e.info.dst == dst && e.info.vc == vc)
        {
            e.last_refresh = now;
        }
    }

    /// Removes entries not refreshed for longer than `ttl`.
    pub fn age(&mut self, now: SimTime, ttl: SimTime) -> Vec<ArnEntry> {
        let mut purged = Vec::new();
        self.entries.retain(|e| {
            let keep = now.saturating_sub(e.last_refresh) <= ttl;
            if !keep {
                purged.push(*e);
            }
            keep
        });
        purged
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PortControl {
    /// Route via the consumed entry's alternative port.
    Alternative {
        port: PortId,
        next_vc: Vc,
        mark_adapted: bool,
        arn_id: u32,
    },
    /// Route deterministically; optionally notify upstream.
    Deterministic { send_arn: Option<ArnInfo> },
}

/// Input port controller for a data packet. ARN messages go straight to
/// `process_arn` and never reach this function.
pub fn input_port_controller(
    table: &ArnTable,
    dst: NodeId,
    original_vc: Vc,
    adapted: bool,
    afi: bool,
) -> PortControl {
    if adapted {
        return PortControl::Deterministic { send_arn: None };
    }
    if let Some(e) = table.consumed_for(dst, original_vc) {
        let port = e.alt_port.expect("consumed entry without alternative port");
        return PortControl::Alternative {
            port,
            next_vc: e.alt_vc.unwrap_or(original_vc),
            mark_adapted: afi,
            arn_id: e.info.arn_id,
        };
    }
    PortControl::Deterministic {
        send_arn: table.unconsumed_for(dst, original_vc).map(|e| e.info),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::routing::{select_alternative_oport, CreditView};
    use crate::topology::{Peer, RlftParams, SwitchId, Topology};

    fn info(dst: NodeId, port: PortId, vc: Vc, arn_id: u32, root_info: u8) -> ArnInfo {
        ArnInfo {
            dst,
            port,
            vc,
            arn_id,
            root_info,
        }
    }

    fn t(us: u64) -> SimTime {
        SimTime::from_us(us)
    }

    #[test]
    fn root_info_values() {
        assert_eq!(root_info_for(3, false), 2);
        assert_eq!(root_info_for(1, false), 0);
        assert_eq!(root_info_for(1, true), 1);
        assert_eq!(root_info_for(2, true), 2);
    }

    #[test]
    fn arn_ids_are_unique_per_switch_and_counter() {
        let mut seen = std::collections::HashSet::new();
        for sw in 0..80 {
            for c in 0..50 {
                assert!(seen.insert(make_arn_id(sw, c)));
            }
        }
    }

    #[test]
    fn duplicate_refreshes_single_entry() {
        let mut tb = ArnTable::new(64);
        let a = info(1, 2, 0, 7, 2);
        assert_eq!(
            tb.process_arn(a, false, 3, t(0), |_| None),
            ProcessOutcome::Stored
        );
        assert_eq!(
            tb.process_arn(a, false, 3, t(5), |_| panic!("no selection on refresh")),
            ProcessOutcome::Refreshed
        );
        assert_eq!(tb.len(), 1);
        assert_eq!(tb.entries()[0].last_refresh, t(5));
    }

    #[test]
    fn stage_match_consumes() {
        let mut tb = ArnTable::new(64);
        let a = info(1, 2, 0, 7, 2);
        let r = tb.process_arn(a, false, 2, t(0), |_| Some((3, 1)));
        assert_eq!(
            r,
            ProcessOutcome::Consumed {
                alt_port: 3,
                next_vc: 1
            }
        );
        let e = tb.entries()[0];
        assert!(e.consumed);
        assert_eq!(e.alt_port, Some(3));
    }

    #[test]
    fn stage_mismatch_stores_unconsumed() {
        let mut tb = ArnTable::new(64);
        let r = tb.process_arn(info(1, 2, 0, 7, 2), false, 1, t(0), |_| {
            panic!("selection only at the matching stage")
        });
        assert_eq!(r, ProcessOutcome::Stored);
        assert!(!tb.entries()[0].consumed);
    }

    #[test]
    fn no_alternative_keeps_entry_unconsumed() {
        let mut tb = ArnTable::new(64);
        let r = tb.process_arn(info(1, 2, 0, 7, 2), false, 2, t(0), |_| None);
        assert_eq!(r, ProcessOutcome::Stored);
        assert!(!tb.entries()[0].consumed);
    }

    #[test]
    fn new_root_replaces_stale_entry() {
        let mut tb = ArnTable::new(64);
        tb.process_arn(info(1, 2, 0, 7, 2), false, 1, t(0), |_| None);
        tb.process_arn(info(1, 2, 0, 9, 2), false, 1, t(1), |_| None);
        assert_eq!(tb.len(), 1);
        assert_eq!(tb.entries()[0].info.arn_id, 9);
        // different port is a different key
        tb.process_arn(info(1, 3, 0, 9, 2), false, 1, t(2), |_| None);
        assert_eq!(tb.len(), 2);
    }

    #[test]
    fn adapted_responsible_packet_adds_nothing() {
        let mut tb = ArnTable::new(64);
        tb.process_arn(info(1, 2, 0, 7, 2), false, 1, t(0), |_| None);
        let r = tb.process_arn(info(1, 2, 0, 8, 2), true, 2, t(1), |_| Some((3, 1)));
        assert_eq!(r, ProcessOutcome::SkippedAdapted);
        assert!(tb.is_empty());
        // an identical entry is still refreshed
        tb.process_arn(info(4, 2, 0, 7, 2), false, 1, t(2), |_| None);
        assert_eq!(
            tb.process_arn(info(4, 2, 0, 7, 2), true, 1, t(3), |_| None),
            ProcessOutcome::Refreshed
        );
    }

    #[test]
    fn aging_purges_only_expired() {
        let mut tb = ArnTable::new(64);
        tb.process_arn(info(1, 2, 0, 7, 2), false, 2, t(0), |_| Some((3, 1)));
        tb.process_arn(info(5, 2, 0, 8, 2), false, 1, t(4), |_| None);
        let ttl = t(10);
        assert!(tb.age(t(10), ttl).is_empty());
        let purged = tb.age(t(11), ttl);
        assert_eq!(purged.len(), 1);
        assert_eq!(purged[0].info.dst, 1);
        assert!(tb.consumed_for(1, 0).is_none());
        assert_eq!(tb.len(), 1);
        assert!(ArnTable::new(4).age(t(100), ttl).is_empty());
    }

    #[test]
    fn eviction_prefers_oldest_unconsumed() {
        let mut tb = ArnTable::new(2);
        tb.process_arn(info(1, 2, 0, 1, 2), false, 2, t(0), |_| Some((3, 1)));
        tb.process_arn(info(2, 2, 0, 2, 2), false, 1, t(1), |_| None);
        tb.process_arn(info(3, 2, 0, 3, 2), false, 1, t(2), |_| None);
        assert_eq!(tb.len(), 2);
        assert_eq!(tb.evictions(), 1);
        assert!(tb.consumed_for(1, 0).is_some());
        assert!(tb.unconsumed_for(2, 0).is_none());
        assert!(tb.unconsumed_for(3, 0).is_some());
    }

    #[test]
    fn controller_branches() {
        let mut tb = ArnTable::new(64);
        // no entry: deterministic, no ARN
        assert_eq!(
            input_port_controller(&tb, 1, 0, false, true),
            PortControl::Deterministic { send_arn: None }
        );
        // unconsumed entry: ARN upstream, deterministic route
        let a = info(1, 2, 0, 7, 2);
        tb.process_arn(a, false, 1, t(0), |_| None);
        assert_eq!(
            input_port_controller(&tb, 1, 0, false, true),
            PortControl::Deterministic { send_arn: Some(a) }
        );
        // another VC does not match
        assert_eq!(
            input_port_controller(&tb, 1, 1, false, true),
            PortControl::Deterministic { send_arn: None }
        );
        // consumed entry: alternative port, marked with AFI only
        let mut tb = ArnTable::new(64);
        tb.process_arn(a, false, 2, t(0), |_| Some((3, 1)));
        assert_eq!(
            input_port_controller(&tb, 1, 0, false, true),
            PortControl::Alternative {
                port: 3,
                next_vc: 1,
                mark_adapted: true,
                arn_id: 7
            }
        );
        assert!(matches!(
            input_port_controller(&tb, 1, 0, false, false),
            PortControl::Alternative {
                mark_adapted: false,
                ..
            }
        ));
        // adapted packets always go deterministic
        assert_eq!(
            input_port_controller(&tb, 1, 0, true, true),
            PortControl::Deterministic { send_arn: None }
        );
    }

    struct Full;
    impl CreditView for Full {
        fn available(&self, _p: PortId, _vc: Vc) -> u32 {
            21
        }
        fn vc_capacity(&self, _vc: Vc) -> u32 {
            21
        }
    }

    /// Follows an ARN upstream along the D-mod-K path of `src -> dst`,
    /// starting at the root switch, and returns the stage of the consuming
    /// switch, if any.
    fn consuming_stage(
        topo: &Topology,
        src: NodeId,
        dst: NodeId,
        root_sw: SwitchId,
    ) -> Option<u32> {
        use crate::routing::dmodk_route;
        // path of switches with their in-ports and out-ports
        let mut hops: Vec<(SwitchId, PortId, PortId)> = vec![];
        let (mut sw, mut inport) = topo.attachment(src);
        loop {
            let out = dmodk_route(topo, sw, dst);
            hops.push((sw, inport, out));
            match topo.peer(sw, out) {
                Peer::Node(_) => break,
                Peer::Switch { id, port } => {
                    sw = id;
                    inport = port;
                }
            }
        }
        let root_idx = hops.iter().position(|h| h.0 == root_sw).unwrap();
        let (_, root_in, root_out) = hops[root_idx];
        let upward = topo.classify_port(root_sw, root_out) == crate::topology::PortDir::Up;
        let ri = root_info_for(topo.stage(root_sw), upward);
        let mut msg = info(dst, root_out, 0, make_arn_id(root_sw, 0), ri);
        let mut tables: Vec<ArnTable> = hops.iter().map(|_| ArnTable::new(64)).collect();

        let select = |sw: SwitchId, a: &ArnInfo| {
            select_alternative_oport(topo, sw, a.dst, a.vc, a.port, Some(1), &Full).ok()
        };
        let out = tables[root_idx].process_arn(msg, false, topo.stage(root_sw), t(0), |a| {
            select(root_sw, a)
        });
        if matches!(out, ProcessOutcome::Consumed { .. }) {
            return Some(topo.stage(root_sw));
        }
        let mut from_in = root_in;
        for i in (0..root_idx).rev() {
            let (sw, inp, _) = hops[i];
            // the ARN arrives on the port facing the previous downstream switch
            let Peer::Switch { port, .. } = topo.peer(hops[i + 1].0, from_in) else {
                unreachable!()
            };
            msg.port = port;
            let out = tables[i].process_arn(msg, false, topo.stage(sw), t(1), |a| select(sw, a));
            if matches!(out, ProcessOutcome::Consumed { .. }) {
                return Some(topo.stage(sw));
            }
            from_in = inp;
        }
        None
    }

    #[test]
    fn fig1_scenarios() {
        let topo = Topology::build(RlftParams::new(4, 3).unwrap());
        let path_switches = |src: NodeId, dst: NodeId| {
            let mut v = vec![];
            let mut sw = topo.attachment(src).0;
            loop {
                v.push(sw);
                match topo.peer(sw, crate::routing::dmodk_route(&topo, sw, dst)) {
                    Peer::Node(_) => return v,
                    Peer::Switch { id, .. } => sw = id,
                }
            }
        };
        // A: root at a top switch on a downward port -> consumed at stage 2
        let p = path_switches(0, 15);
        let top = p[2];
        assert_eq!(topo.stage(top), 3);
        assert_eq!(consuming_stage(&topo, 0, 15, top), Some(2));
        // B: root at a stage-2 switch going down -> consumed at stage 1
        let p = path_switches(0, 15);
        let s2_down = p[3];
        assert_eq!(topo.stage(s2_down), 2);
        assert_eq!(consuming_stage(&topo, 0, 15, s2_down), Some(1));
        // C: incast root at the last leaf -> never consumed by a switch
        let leaf = *p.last().unwrap();
        assert_eq!(topo.stage(leaf), 1);
        assert_eq!(consuming_stage(&topo, 0, 15, leaf), None);
        // upward root at a leaf is consumed by the leaf itself
        assert_eq!(consuming_stage(&topo, 0, 15, p[0]), Some(1));
    }
}
