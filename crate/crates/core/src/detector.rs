//! Per-output-port congestion root detector.
//!
//! Thresholds are fractions of the whole input-port buffer for VOQ occupancy
//! and of the next-hop VC capacity for free credits. All comparisons are
//! strict.

use crate::kernel::SimTime;
use crate::topology::PortId;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DetectorParams {
    pub hcd_th: f64,
    pub lcd_th: f64,
    pub fc_th: f64,
    pub crt: SimTime,
}

impl Default for DetectorParams {
    fn default() -> Self {
        DetectorParams {
            hcd_th: 0.81,
            lcd_th: 0.63,
            fc_th: 0.78,
            crt: SimTime::from_ms(5),
        }
    }
}

impl DetectorParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.lcd_th > 0.0 && self.lcd_th < self.hcd_th && self.hcd_th <= 1.0) {
            return Err(format!(
                "thresholds must satisfy 0 < lcd_th < hcd_th <= 1 (lcd_th={}, hcd_th={})",
                self.lcd_th, self.hcd_th
            ));
        }
        if !(self.fc_th > 0.0 && self.fc_th <= 1.0) {
            return Err(format!("fc_th must be in (0, 1], got {}", self.fc_th));
        }
        if self.crt == SimTime::ZERO {
            return Err("crt must be positive".into());
        }
        Ok(())
    }

    pub fn above_hcd(&self, occupancy: u32, port_capacity: u32) -> bool {
        occupancy as f64 > self.hcd_th * port_capacity as f64
    }

    pub fn below_lcd(&self, occupancy: u32, port_capacity: u32) -> bool {
        (occupancy as f64) < self.lcd_th * port_capacity as f64
    }

    pub fn classify(&self, free_credits: u32, vc_capacity: u32) -> Classification {
        if free_credits as f64 > self.fc_th * vc_capacity as f64 {
            Classification::RootCandidate
        } else {
            Classification::Branch
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Classification {
    RootCandidate,
    Branch,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Phase {
    Idle,
    Candidate { since: SimTime, epoch: u64 },
    Root { since: SimTime },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Transition {
    None,
    CandidateStarted { epoch: u64, expires_at: SimTime },
    CandidateCanceled,
    RootConfirmed,
    RootCleared,
}

/// Detector state of one output port.
#[derive(Debug, Clone)]
pub struct PortDetector {
    above: Vec<bool>,
    above_count: u32,
    exceed: Vec<bool>,
    exceed_count: u32,
    phase: Phase,
    epoch: u64,
}

impl PortDetector {
    pub fn new(inports: usize) -> Self {
        PortDetector {
            above: vec![false; inports],
            above_count: 0,
            exceed: vec![false; inports],
            exceed_count: 0,
            phase: Phase::Idle,
            epoch: 0,
        }
    }

    pub fn phase(&self) -> Phase {
        self.phase
    }

    pub fn is_root(&self) -> bool {
        matches!(self.phase, Phase::Root { .. })
    }

    pub fn exceed_count(&self) -> u32 {
        self.exceed_count
    }

    /// True when at least one VOQ feeding this port is above HCDTh right now.
    pub fn any_above(&self) -> bool {
        self.above_count > 0
    }

    /// Lowest input port whose VOQ is currently above HCDTh.
    pub fn first_above(&self) -> Option<PortId> {
        if self.above_count == 0 {
            return None;
        }
        self.above.iter().position(|a| *a).map(|i| i as PortId)
    }

    /// Records the new VOQ occupancy of `inport` towards this port.
    pub fn update_voq(
        &mut self,
        params: &DetectorParams,
        inport: PortId,
        occupancy: u32,
        port_capacity: u32,
    ) {
        let i = inport as usize;
        let above = params.above_hcd(occupancy, port_capacity);
        if above != self.above[i] {
            self.above[i] = above;
            if above {
                self.above_count += 1;
            } else {
                self.above_count -= 1;
            }
        }
        if above && !self.exceed[i] {
            self.exceed[i] = true;
            self.exceed_count += 1;
        } else if self.exceed[i] && params.below_lcd(occupancy, port_capacity) {
            self.exceed[i] = false;
            self.exceed_count -= 1;
        }
    }

    /// Re-evaluates the phase. `root_credits` tells whether the responsible
    /// packet's next VC currently has more free credits than FCTh.
    pub fn evaluate(
        &mut self,
        params: &DetectorParams,
        now: SimTime,
        root_credits: bool,
    ) -> Transition {
        let holds = self.any_above() && root_credits;
        match self.phase {
            Phase::Idle if holds => {
                self.epoch += 1;
                self.phase = Phase::Candidate {
                    since: now,
                    epoch: self.epoch,
                };
                Transition::CandidateStarted {
                    epoch: self.epoch,
                    expires_at: now + params.crt,
                }
            }
            Phase::Candidate { .. } if !holds => {
                self.epoch += 1;
                self.phase = Phase::Idle;
                Transition::CandidateCanceled
            }
            Phase::Root { .. } if self.exceed_count == 0 => {
                self.phase = Phase::Idle;
                Transition::RootCleared
            }
            _ => Transition::None,
        }
    }

    /// Handles the CRT timer of `epoch`. Stale timers are ignored.
    pub fn on_crt_expiry(&mut self, epoch: u64, now: SimTime, root_credits: bool) -> Transition {
        match self.phase {
            Phase::Candidate { epoch: e, .. } if e == epoch => {
                if self.any_above() && root_credits {
                    self.phase = Phase::Root { since: now };
                    Transition::RootConfirmed
                } else {
                    self.epoch += 1;
                    self.phase = Phase::Idle;
                    Transition::CandidateCanceled
                }
            }
            _ => Transition::None,
        }
    }
}
