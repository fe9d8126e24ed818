//! Output-port selection: D-mod-K, oblivious, threshold-adaptive, and the
//! alternative-port choice made when an ARN is consumed.
//!
//! All modes are minimal. They differ only in the upward phase; the downward
//! hop is always the unique port towards the destination.

use std::fmt;
use std::str::FromStr;

use rand::Rng;
use thiserror::Error;

use crate::queuing::Vc;
use crate::topology::{NodeId, PortId, SwitchId, Topology};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RoutingKind {
    DmodK,
    Oblivious,
    AdaptiveTh,
    ArnDriven,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RoutingMode {
    pub kind: RoutingKind,
    /// Fraction of next-buffer capacity above which Adaptive-Th deviates.
    pub adaptive_threshold: f64,
    pub afi_enabled: bool,
}

pub const DEFAULT_ADAPTIVE_THRESHOLD: f64 = 0.75;

impl RoutingMode {
    pub fn new(kind: RoutingKind, afi_enabled: bool) -> Self {
        RoutingMode {
            kind,
            adaptive_threshold: DEFAULT_ADAPTIVE_THRESHOLD,
            afi_enabled,
        }
    }

    pub fn uses_detector(&self) -> bool {
        self.kind == RoutingKind::ArnDriven
    }

    pub fn name(&self) -> &'static str {
        match (self.kind, self.afi_enabled) {
            (RoutingKind::DmodK, _) => "dmodk",
            (RoutingKind::Oblivious, _) => "oblivious",
            (RoutingKind::AdaptiveTh, false) => "adaptive_th",
            (RoutingKind::AdaptiveTh, true) => "adaptive_th_afi",
            (RoutingKind::ArnDriven, false) => "arn",
            (RoutingKind::ArnDriven, true) => "arn_afi",
        }
    }
}

impl fmt::Display for RoutingMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for RoutingMode {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (kind, afi) = match s {
            "dmodk" => (RoutingKind::DmodK, false),
            "oblivious" => (RoutingKind::Oblivious, false),
            "adaptive_th" => (RoutingKind::AdaptiveTh, false),
            "adaptive_th_afi" => (RoutingKind::AdaptiveTh, true),
            "arn" => (RoutingKind::ArnDriven, false),
            "arn_afi" => (RoutingKind::ArnDriven, true),
            other => {
                return Err(format!(
                    "unknown routing `{other}` (expected dmodk|oblivious|adaptive_th|adaptive_th_afi|arn|arn_afi)"
                ))
            }
        };
        Ok(RoutingMode::new(kind, afi))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct RouteDecision {
    pub out_port: PortId,
    pub mark_adapted: bool,
    pub next_vc: Vc,
}

/// Local view of the next-hop buffers, as known from this switch's credit
/// counters.
pub trait CreditView {
    /// Credits currently available for `vc` in the buffer behind `port`.
    fn available(&self, port: PortId, vc: Vc) -> u32;
    /// Maximum number of packets `vc` may hold in that buffer.
    fn vc_capacity(&self, vc: Vc) -> u32;
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum RoutingError {
    #[error("switch {sw} has no alternative up-port towards {dst}")]
    NotConsumable { sw: SwitchId, dst: NodeId },
}

/// D-mod-K: upward port digit `(dst / K^(stage-1)) mod K`; downward port is
/// the one whose subtree contains `dst`.
pub fn dmodk_route(topo: &Topology, sw: SwitchId, dst: NodeId) -> PortId {
    if let Some(p) = topo.down_port_towards(sw, dst) {
        return p;
    }
    let info = topo.switch(sw);
    let digit = (dst / topo.pow_k(info.stage - 1)) % topo.k();
    (info.down_ports + digit) as PortId
}

pub fn oblivious_route<R: Rng + ?Sized>(
    topo: &Topology,
    sw: SwitchId,
    dst: NodeId,
    rng: &mut R,
) -> PortId {
    if let Some(p) = topo.down_port_towards(sw, dst) {
        return p;
    }
    let ups = topo.up_ports(sw);
    rng.gen_range(ups)
}

/// Candidate up-port with the most available credits in `vc`; ties go to the
/// lowest port index.
fn max_credit_port<V: CreditView + ?Sized>(
    ports: impl Iterator<Item = PortId>,
    view: &V,
    vc: Vc,
) -> Option<PortId> {
    let mut best: Option<(PortId, u32)> = None;
    for p in ports {
        let a = view.available(p, vc);
        if best.is_none_or(|(_, b)| a > b) {
            best = Some((p, a));
        }
    }
    best.map(|(p, _)| p)
}

/// Threshold adaptive routing. Keeps the D-mod-K port unless its next buffer
/// for `vc` is filled beyond `threshold` of capacity, in which case the
/// up-port with the most free credits wins.
pub fn adaptive_th_route<V: CreditView + ?Sized>(
    topo: &Topology,
    sw: SwitchId,
    dst: NodeId,
    vc: Vc,
    threshold: f64,
    view: &V,
) -> PortId {
    let det = dmodk_route(topo, sw, dst);
    if topo.down_port_towards(sw, dst).is_some() {
        return det;
    }
    let cap = view.vc_capacity(vc);
    let occupancy = cap.saturating_sub(view.available(det, vc));
    if occupancy as f64 <= threshold * cap as f64 {
        return det;
    }
    max_credit_port(topo.up_ports(sw), view, vc).unwrap_or(det)
}

/// Alternative output port used after consuming an ARN. The next-hop VC is
/// the AFC when isolation is on, otherwise the packet's own VC; the port with
/// the most credits in that VC wins, excluding `congested_port`.
pub fn select_alternative_oport<V: CreditView + ?Sized>(
    topo: &Topology,
    sw: SwitchId,
    dst: NodeId,
    vc: Vc,
    congested_port: PortId,
    afc: Option<Vc>,
    view: &V,
) -> Result<(PortId, Vc), RoutingError> {
    if topo.is_below(sw, dst) {
        return Err(RoutingError::NotConsumable { sw, dst });
    }
    let next_vc = afc.unwrap_or(vc);
    let candidates = topo.up_ports(sw).filter(|p| *p != congested_port);
    max_credit_port(candidates, view, next_vc)
        .map(|p| (p, next_vc))
        .ok_or(RoutingError::NotConsumable { sw, dst })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::{Peer, RlftParams};
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;
    use std::collections::{BTreeMap, HashMap};

    fn topo(p: u32, n: u32) -> Topology {
        Topology::build(RlftParams::new(p, n).unwrap())
    }

    struct Fixed {
        cap: u32,
        avail: HashMap<(PortId, Vc), u32>,
    }

    impl CreditView for Fixed {
        fn available(&self, port: PortId, vc: Vc) -> u32 {
            *self.avail.get(&(port, vc)).unwrap_or(&self.cap)
        }
        fn vc_capacity(&self, _vc: Vc) -> u32 {
            self.cap
        }
    }

    fn empty(cap: u32) -> Fixed {
        Fixed {
            cap,
            avail: HashMap::new(),
        }
    }

    /// Walks a packet from src to dst with a per-switch port chooser.
    fn walk(
        t: &Topology,
        src: NodeId,
        dst: NodeId,
        mut choose: impl FnMut(SwitchId) -> PortId,
    ) -> Vec<(SwitchId, PortId)> {
        let mut hops = vec![];
        let mut sw = t.attachment(src).0;
        loop {
            let p = choose(sw);
            hops.push((sw, p));
            match t.peer(sw, p) {
                Peer::Node(n) => {
                    assert_eq!(n, dst);
                    return hops;
                }
                Peer::Switch { id, .. } => sw = id,
            }
            assert!(hops.len() < 64, "routing loop");
        }
    }

    #[test]
    fn dmodk_digit_examples() {
        let t = topo(4, 3);
        let leaf = t.attachment(0).0;
        // K=2, stage 1, dst 5 -> up digit 1
        assert_eq!(dmodk_route(&t, leaf, 5), 2 + 1);
        assert_eq!(dmodk_route(&t, leaf, 8), 2);
        // dst below -> down-port
        assert_eq!(dmodk_route(&t, leaf, 1), 1);
    }

    #[test]
    fn dmodk_balances_links_between_stages() {
        for (p, n) in [(4, 2), (4, 3), (8, 3)] {
            let t = topo(p, n);
            let mut load: BTreeMap<(SwitchId, PortId), u32> = BTreeMap::new();
            for s in 0..t.endnode_count() {
                for d in 0..t.endnode_count() {
                    if s == d {
                        continue;
                    }
                    for hop in walk(&t, s, d, |sw| dmodk_route(&t, sw, d)) {
                        *load.entry(hop).or_default() += 1;
                    }
                }
            }
            // group per (stage, direction); all links must carry equal path counts
            let mut per_group: BTreeMap<(u32, bool), Vec<u32>> = BTreeMap::new();
            for sw in 0..t.switch_count() {
                for port in 0..t.switch(sw).port_count() as PortId {
                    let up = t.classify_port(sw, port) == crate::topology::PortDir::Up;
                    let l = *load.get(&(sw, port)).unwrap_or(&0);
                    per_group.entry((t.stage(sw), up)).or_default().push(l);
                }
            }
            for ((stage, up), loads) in per_group {
                let first = loads[0];
                assert!(
                    loads.iter().all(|l| *l == first),
                    "P={p} n={n} stage {stage} up={up}: {loads:?}"
                );
            }
        }
    }

    #[test]
    fn all_modes_are_minimal() {
        let t = topo(4, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let view = empty(84);
        let mut busy = empty(84);
        for port in 0..8 {
            busy.avail.insert((port, 0), (port as u32 * 13) % 84);
        }
        for s in 0..t.endnode_count() {
            for d in 0..t.endnode_count() {
                if s == d {
                    continue;
                }
                let expect = 2 * t.turnaround_stage(s, d) as usize - 1;
                let a = walk(&t, s, d, |sw| dmodk_route(&t, sw, d));
                let b = walk(&t, s, d, |sw| oblivious_route(&t, sw, d, &mut rng));
                let c = walk(&t, s, d, |sw| adaptive_th_route(&t, sw, d, 0, 0.75, &view));
                let e = walk(&t, s, d, |sw| adaptive_th_route(&t, sw, d, 0, 0.75, &busy));
                for path in [&a, &b, &c, &e] {
                    assert_eq!(path.len(), expect);
                }
                // downward hops agree across modes
                let down = |p: &Vec<(SwitchId, PortId)>| {
                    p.iter()
                        .filter(|(sw, port)| {
                            t.classify_port(*sw, *port) == crate::topology::PortDir::Down
                        })
                        .count()
                };
                assert_eq!(down(&a), down(&b));
                assert_eq!(a.last(), b.last());
                assert_eq!(a.last(), e.last());
            }
        }
    }

    #[test]
    fn oblivious_down_matches_dmodk() {
        let t = topo(8, 3);
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        for sw in 0..t.switch_count() {
            for d in 0..t.endnode_count() {
                if t.is_below(sw, d) {
                    assert_eq!(oblivious_route(&t, sw, d, &mut rng), dmodk_route(&t, sw, d));
                }
            }
        }
    }

    #[test]
    fn oblivious_up_is_uniform() {
        let t = topo(4, 2);
        let leaf = t.attachment(0).0;
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let draws = 10_000;
        let mut counts = [0u32; 2];
        for _ in 0..draws {
            let p = oblivious_route(&t, leaf, 7, &mut rng);
            counts[(p - 2) as usize] += 1;
        }
        for c in counts {
            let f = c as f64 / draws as f64;
            assert!((f - 0.5).abs() <= 0.02, "frequency {f}");
        }
        // chi-square with 1 dof, 99.9% critical value 10.83
        let e = draws as f64 / 2.0;
        let chi: f64 = counts.iter().map(|c| (*c as f64 - e).powi(2) / e).sum();
        assert!(chi < 10.83, "chi2={chi}");
    }

    #[test]
    fn oblivious_is_reproducible() {
        let t = topo(8, 3);
        let seq = |seed| {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            (0..50)
                .map(|i| oblivious_route(&t, 0, 100 + (i % 20), &mut rng))
                .collect::<Vec<_>>()
        };
        assert_eq!(seq(9), seq(9));
    }

    #[test]
    fn adaptive_th_rules() {
        let t = topo(4, 3);
        let leaf = t.attachment(0).0;
        let dst = 5; // D-mod-K picks up-port 3
        assert_eq!(dmodk_route(&t, leaf, dst), 3);
        let v = empty(84);
        assert_eq!(adaptive_th_route(&t, leaf, dst, 0, 0.75, &v), 3);

        // 80% occupancy on the D-mod-K port, other port empty
        let mut v = empty(100);
        v.avail.insert((3, 0), 20);
        v.avail.insert((2, 0), 100);
        assert_eq!(adaptive_th_route(&t, leaf, dst, 0, 0.75, &v), 2);

        // exactly at the threshold keeps the deterministic port
        let mut v = empty(100);
        v.avail.insert((3, 0), 25);
        v.avail.insert((2, 0), 100);
        assert_eq!(adaptive_th_route(&t, leaf, dst, 0, 0.75, &v), 3);

        // all above threshold with equal credits: lowest index
        let mut v = empty(100);
        v.avail.insert((3, 0), 10);
        v.avail.insert((2, 0), 10);
        assert_eq!(adaptive_th_route(&t, leaf, dst, 0, 0.75, &v), 2);

        // downward phase ignores occupancy
        let mut v = empty(100);
        v.avail.insert((1, 0), 0);
        assert_eq!(adaptive_th_route(&t, leaf, 1, 0, 0.75, &v), 1);
    }

    #[test]
    fn alternative_port_with_afi_picks_max_afc_credits() {
        let t = topo(6, 2); // K = 3 gives two alternatives besides the congested port
        let leaf = t.attachment(0).0;
        let ups: Vec<_> = t.up_ports(leaf).collect();
        assert_eq!(ups, vec![3, 4, 5]);
        let mut v = empty(21);
        v.avail.insert((4, 1), 3);
        v.avail.insert((5, 1), 7);
        let r = select_alternative_oport(&t, leaf, 10, 0, 3, Some(1), &v);
        assert_eq!(r, Ok((5, 1)));
        // without AFI the packet keeps its VC
        let r = select_alternative_oport(&t, leaf, 10, 0, 3, None, &v);
        assert_eq!(r.map(|x| x.1), Ok(0));
    }

    #[test]
    fn alternative_port_needs_a_second_up_port() {
        let t = topo(2, 3); // K = 1
        let leaf = t.attachment(0).0;
        let up = t.up_ports(leaf).start;
        let v = empty(84);
        assert_eq!(
            select_alternative_oport(&t, leaf, 1, 0, up, Some(1), &v),
            Err(RoutingError::NotConsumable { sw: leaf, dst: 1 })
        );
        // top stage has no up-ports at all
        let t = topo(4, 2);
        let top = t.switches_in_stage(2).start;
        assert!(select_alternative_oport(&t, top, 1, 0, 0, Some(1), &empty(84)).is_err());
    }

    #[test]
    fn parse_modes() {
        assert_eq!("arn_afi".parse::<RoutingMode>().unwrap().name(), "arn_afi");
        assert!("arn_afi".parse::<RoutingMode>().unwrap().afi_enabled);
        assert!(!"arn".parse::<RoutingMode>().unwrap().afi_enabled);
        assert!("ugal".parse::<RoutingMode>().is_err());
    }
}
