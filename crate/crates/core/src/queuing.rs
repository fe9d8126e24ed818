//! Static queuing schemes: a-priori packet-to-VC mappings, with the
//! adapted-flow channel appended as the last VC when isolation is enabled.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::topology::{NodeId, Topology};

pub type Vc = u8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum SqsScheme {
    OneQ,
    Dbbm,
    VFtree,
    Flow2Sl,
}

impl SqsScheme {
    pub fn default_regular_vcs(self) -> u8 {
        match self {
            SqsScheme::OneQ => 1,
            _ => 3,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            SqsScheme::OneQ => "1q",
            SqsScheme::Dbbm => "dbbm",
            SqsScheme::VFtree => "vftree",
            SqsScheme::Flow2Sl => "flow2sl",
        }
    }
}

impl fmt::Display for SqsScheme {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SqsScheme {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "1q" | "oneq" => Ok(SqsScheme::OneQ),
            "dbbm" => Ok(SqsScheme::Dbbm),
            "vftree" => Ok(SqsScheme::VFtree),
            "flow2sl" => Ok(SqsScheme::Flow2Sl),
            other => Err(format!(
                "unknown queuing scheme `{other}` (expected 1q|dbbm|vftree|flow2sl)"
            )),
        }
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum QueuingError {
    #[error("adapted packet but no adapted-flow channel is configured")]
    NoAfc,
    #[error("1q uses exactly one regular VC, got {0}")]
    OneQVcs(u8),
    #[error("regular VC count must be at least 1")]
    NoVcs,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SqsConfig {
    pub scheme: SqsScheme,
    pub regular_vcs: u8,
    pub afc_present: bool,
}

impl SqsConfig {
    pub fn new(scheme: SqsScheme, afc_present: bool) -> Self {
        SqsConfig {
            scheme,
            regular_vcs: scheme.default_regular_vcs(),
            afc_present,
        }
    }

    pub fn with_regular_vcs(
        scheme: SqsScheme,
        regular_vcs: u8,
        afc_present: bool,
    ) -> Result<Self, QueuingError> {
        if regular_vcs == 0 {
            return Err(QueuingError::NoVcs);
        }
        if scheme == SqsScheme::OneQ && regular_vcs != 1 {
            return Err(QueuingError::OneQVcs(regular_vcs));
        }
        Ok(SqsConfig {
            scheme,
            regular_vcs,
            afc_present,
        })
    }

    pub fn total_vcs(&self) -> u8 {
        self.regular_vcs + u8::from(self.afc_present)
    }

    /// The AFC is always the last VC.
    pub fn afc(&self) -> Option<Vc> {
        self.afc_present.then_some(self.regular_vcs)
    }

    /// Regular VC for a `(src, dst)` pair. Identical at every hop.
    pub fn map_vc(&self, src: NodeId, dst: NodeId, topo: &Topology) -> Vc {
        let q = self.regular_vcs as u32;
        let vc = match self.scheme {
            SqsScheme::OneQ => 0,
            SqsScheme::Dbbm => dst % q,
            SqsScheme::VFtree => topo.leaf_index(dst) % q,
            SqsScheme::Flow2Sl => {
                let n = topo.endnode_count();
                let group = n.div_ceil(q);
                let (gs, gd) = (src / group, dst / group);
                (gd + q - gs % q) % q
            }
        };
        vc as Vc
    }

    /// VC a packet occupies in the next buffer.
    pub fn effective_vc(&self, original_vc: Vc, adapted: bool) -> Result<Vc, QueuingError> {
        if adapted {
            self.afc().ok_or(QueuingError::NoAfc)
        } else {
            Ok(original_vc)
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::topology::RlftParams;

    fn topo(p: u32, n: u32) -> Topology {
        Topology::build(RlftParams::new(p, n).unwrap())
    }

    #[test]
    fn dbbm_is_destination_modulo() {
        let t = topo(4, 2);
        let c = SqsConfig::new(SqsScheme::Dbbm, false);
        assert_eq!(c.map_vc(0, 7, &t), 1);
        let hit: std::collections::BTreeSet<_> = (0..3).map(|d| c.map_vc(5, d, &t)).collect();
        assert_eq!(hit.len(), 3);
    }

    #[test]
    fn oneq_always_zero() {
        let t = topo(8, 2);
        let c = SqsConfig::new(SqsScheme::OneQ, false);
        for s in 0..t.endnode_count() {
            for d in 0..t.endnode_count() {
                assert_eq!(c.map_vc(s, d, &t), 0);
            }
        }
    }

    #[test]
    fn flow2sl_diagonal_is_zero() {
        let t = topo(12, 3);
        let c = SqsConfig::new(SqsScheme::Flow2Sl, false);
        assert_eq!(t.endnode_count(), 432);
        assert_eq!(c.map_vc(0, 0, &t), 0);
        // groups of 144: (src group 0, dst group 2) and (1, 0)
        assert_eq!(c.map_vc(0, 300, &t), 2);
        assert_eq!(c.map_vc(150, 10, &t), 2);
        assert_eq!(c.map_vc(150, 290, &t), 1);
    }

    #[test]
    fn flow2sl_depends_on_groups_only() {
        let t = topo(8, 3);
        let c = SqsConfig::new(SqsScheme::Flow2Sl, false);
        let g = t.endnode_count().div_ceil(3);
        for s in 0..t.endnode_count() {
            for d in 0..t.endnode_count() {
                let rs = (s / g) * g;
                let rd = (d / g) * g;
                assert_eq!(c.map_vc(s, d, &t), c.map_vc(rs, rd, &t));
            }
        }
    }

    #[test]
    fn vftree_uses_leaf_switch() {
        let t = topo(8, 2);
        let c = SqsConfig::new(SqsScheme::VFtree, false);
        // K = 4 endnodes per leaf; consecutive leaves rotate over the VCs.
        assert_eq!(c.map_vc(0, 0, &t), 0);
        assert_eq!(c.map_vc(0, 3, &t), 0);
        assert_eq!(c.map_vc(0, 4, &t), 1);
        assert_eq!(c.map_vc(0, 8, &t), 2);
        assert_eq!(c.map_vc(0, 12, &t), 0);
    }

    #[test]
    fn afc_is_last_vc() {
        let c = SqsConfig::new(SqsScheme::Dbbm, true);
        assert_eq!(c.total_vcs(), 4);
        assert_eq!(c.effective_vc(1, true), Ok(3));
        assert_eq!(c.effective_vc(1, false), Ok(1));
        let one = SqsConfig::new(SqsScheme::OneQ, true);
        assert_eq!(one.total_vcs(), 2);
        assert_eq!(one.afc(), Some(1));
        let none = SqsConfig::new(SqsScheme::OneQ, false);
        assert_eq!(none.effective_vc(0, true), Err(QueuingError::NoAfc));
    }

    #[test]
    fn vc_count_validation() {
        assert_eq!(
            SqsConfig::with_regular_vcs(SqsScheme::OneQ, 2, false),
            Err(QueuingError::OneQVcs(2))
        );
        assert!(SqsConfig::with_regular_vcs(SqsScheme::Dbbm, 2, true).is_ok());
    }
}
