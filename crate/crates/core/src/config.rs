//! Run configuration: `key = value` files with `#` comments, defaults and
//! validation that reports every violation at once.

use std::fmt::Write as _;
use std::path::PathBuf;
use std::str::FromStr;

use thiserror::Error;

use crate::detector::DetectorParams;
use crate::kernel::SimTime;
use crate::queuing::{SqsConfig, SqsScheme};
use crate::routing::{RoutingKind, RoutingMode};
use crate::topology::{NodeId, RlftParams};
use crate::traffic::{default_hotspot_dests, TrafficKind};

#[derive(Debug, Error, PartialEq, Eq)]
#[error("invalid configuration:\n  {}", .0.join("\n  "))]
pub struct ConfigError(pub Vec<String>);

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub name: String,
    pub ports: u32,
    pub stages: u32,
    pub routing: RoutingMode,
    pub sqs: SqsScheme,
    pub num_vcs: Option<u8>,
    pub adaptive_th: f64,
    pub port_buffer_pkts: u32,
    pub vc_reserved_pkts: u32,
    /// Static AFC partition; regular VCs share what the reservations leave.
    pub afc_buffer_pkts: u32,
    pub mtu_bytes: u32,
    pub link_gbps: f64,
    pub link_prop_ns: u64,
    pub hcd_th: f64,
    pub lcd_th: f64,
    pub fc_th: f64,
    pub crt_ms: f64,
    pub arn_ttl_ms: f64,
    pub arn_table_cap: usize,
    pub arn_resend_us: f64,
    pub traffic: TrafficKind,
    pub trace_file: Option<PathBuf>,
    pub trace_background: Option<TrafficKind>,
    pub warmup_ms: f64,
    pub hotspot_ms: f64,
    pub sim_ms: f64,
    pub drain_ms: f64,
    pub seed: u64,
    pub bin_us: f64,
    pub hotspot_dests: Option<Vec<NodeId>>,
    pub injection_rate: f64,
    pub hca_queue_pkts: u32,
    pub checkpoint_us: f64,
    pub detector_log: bool,
    pub arn_log: bool,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            name: "run".into(),
            ports: 12,
            stages: 3,
            routing: RoutingMode::new(RoutingKind::DmodK, false),
            sqs: SqsScheme::OneQ,
            num_vcs: None,
            adaptive_th: 0.75,
            port_buffer_pkts: 84,
            vc_reserved_pkts: 4,
            afc_buffer_pkts: 8,
            mtu_bytes: 4096,
            link_gbps: 100.0,
            link_prop_ns: 30,
            hcd_th: 0.81,
            lcd_th: 0.63,
            fc_th: 0.78,
            crt_ms: 5.0,
            arn_ttl_ms: 10.0,
            arn_table_cap: 64,
            arn_resend_us: 10.0,
            traffic: TrafficKind::Uniform,
            trace_file: None,
            trace_background: None,
            warmup_ms: 3.0,
            hotspot_ms: 90.0,
            sim_ms: 120.0,
            drain_ms: 50.0,
            seed: 1,
            bin_us: 100.0,
            hotspot_dests: None,
            injection_rate: 1.0,
            hca_queue_pkts: 8,
            checkpoint_us: 1000.0,
            detector_log: false,
            arn_log: false,
        }
    }
}

pub const KEYS: &[&str] = &[
    "name",
    "ports",
    "stages",
    "routing",
    "sqs",
    "num_vcs",
    "adaptive_th",
    "port_buffer_pkts",
    "vc_reserved_pkts",
    "afc_buffer_pkts",
    "mtu_bytes",
    "link_gbps",
    "link_prop_ns",
    "hcd_th",
    "lcd_th",
    "fc_th",
    "crt_ms",
    "arn_ttl_ms",
    "arn_table_cap",
    "arn_resend_us",
    "traffic",
    "trace_file",
    "trace_background",
    "warmup_ms",
    "hotspot_ms",
    "sim_ms",
    "drain_ms",
    "seed",
    "bin_us",
    "hotspot_dests",
    "injection_rate",
    "hca_queue_pkts",
    "checkpoint_us",
    "detector_log",
    "arn_log",
];

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "on" | "1" => Ok(true),
        "false" | "no" | "off" | "0" => Ok(false),
        _ => Err(format!("expected a boolean, got `{v}`")),
    }
}

fn parse_num<T: FromStr>(v: &str) -> Result<T, String> {
    v.parse::<T>()
        .map_err(|_| format!("expected a number, got `{v}`"))
}

/// Splits a config text into `(line, key, value)` triples.
pub fn parse_lines(text: &str) -> Result<Vec<(usize, String, String)>, ConfigError> {
    let mut out = vec![];
    let mut errors = vec![];
    for (i, raw) in text.lines().enumerate() {
        let body = raw.split('#').next().unwrap_or("").trim();
        if body.is_empty() {
            continue;
        }
        match body.split_once('=') {
            Some((k, v)) => out.push((i + 1, k.trim().to_string(), v.trim().to_string())),
            None => errors.push(format!("line {}: expected `key = value`", i + 1)),
        }
    }
    if errors.is_empty() {
        Ok(out)
    } else {
        Err(ConfigError(errors))
    }
}

impl Config {
    pub fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        match key {
            "name" => self.name = v.to_string(),
            "ports" => self.ports = parse_num(v)?,
            "stages" => self.stages = parse_num(v)?,
            "routing" => {
                let adaptive_th = self.adaptive_th;
                self.routing = v.parse()?;
                self.routing.adaptive_threshold = adaptive_th;
            }
            "sqs" => self.sqs = v.parse()?,
            "num_vcs" => self.num_vcs = Some(parse_num(v)?),
            "adaptive_th" => {
                self.adaptive_th = parse_num(v)?;
                self.routing.adaptive_threshold = self.adaptive_th;
            }
            "port_buffer_pkts" => self.port_buffer_pkts = parse_num(v)?,
            "vc_reserved_pkts" => self.vc_reserved_pkts = parse_num(v)?,
            "afc_buffer_pkts" => self.afc_buffer_pkts = parse_num(v)?,
            "mtu_bytes" => self.mtu_bytes = parse_num(v)?,
            "link_gbps" => self.link_gbps = parse_num(v)?,
            "link_prop_ns" => self.link_prop_ns = parse_num(v)?,
            "hcd_th" => self.hcd_th = parse_num(v)?,
            "lcd_th" => self.lcd_th = parse_num(v)?,
            "fc_th" => self.fc_th = parse_num(v)?,
            "crt_ms" => self.crt_ms = parse_num(v)?,
            "arn_ttl_ms" => self.arn_ttl_ms = parse_num(v)?,
            "arn_table_cap" => self.arn_table_cap = parse_num(v)?,
            "arn_resend_us" => self.arn_resend_us = parse_num(v)?,
            "traffic" => self.traffic = v.parse()?,
            "trace_file" => self.trace_file = Some(PathBuf::from(v)),
            "trace_background" => {
                self.trace_background = match v {
                    "none" => None,
                    other => Some(other.parse()?),
                }
            }
            "warmup_ms" => self.warmup_ms = parse_num(v)?,
            "hotspot_ms" => self.hotspot_ms = parse_num(v)?,
            "sim_ms" => self.sim_ms = parse_num(v)?,
            "drain_ms" => self.drain_ms = parse_num(v)?,
            "seed" => self.seed = parse_num(v)?,
            "bin_us" => self.bin_us = parse_num(v)?,
            "hotspot_dests" => {
                let list: Result<Vec<NodeId>, _> = v
                    .split(',')
                    .map(|x| x.trim())
                    .filter(|x| !x.is_empty())
                    .map(parse_num)
                    .collect();
                self.hotspot_dests = Some(list?);
            }
            "injection_rate" => self.injection_rate = parse_num(v)?,
            "hca_queue_pkts" => self.hca_queue_pkts = parse_num(v)?,
            "checkpoint_us" => self.checkpoint_us = parse_num(v)?,
            "detector_log" => self.detector_log = parse_bool(v)?,
            "arn_log" => self.arn_log = parse_bool(v)?,
            _ => return Err("unknown key".to_string()),
        }
        Ok(())
    }

    /// Applies `key = value` pairs in order, collecting every error, then
    /// validates the result.
    pub fn from_pairs<'a, I>(pairs: I) -> Result<Config, ConfigError>
    where
        I: IntoIterator<Item = (&'a str, &'a str)>,
    {
        let mut c = Config::default();
        let mut errors = vec![];
        for (k, v) in pairs {
            if let Err(e) = c.set(k, v) {
                errors.push(format!("{k}: {e}"));
            }
        }
        if let Err(ConfigError(v)) = c.validate() {
            errors.extend(v);
        }
        if errors.is_empty() {
            Ok(c)
        } else {
            Err(ConfigError(errors))
        }
    }

    pub fn parse(text: &str) -> Result<Config, ConfigError> {
        Config::parse_with_overrides(text, &[])
    }

    /// File keys first, then `overrides` in order.
    pub fn parse_with_overrides(
        text: &str,
        overrides: &[(String, String)],
    ) -> Result<Config, ConfigError> {
        let lines = parse_lines(text)?;
        let mut pairs: Vec<(&str, &str)> = lines
            .iter()
            .map(|(_, k, v)| (k.as_str(), v.as_str()))
            .collect();
        pairs.extend(overrides.iter().map(|(k, v)| (k.as_str(), v.as_str())));
        Config::from_pairs(pairs)
    }

    pub fn rlft(&self) -> Result<RlftParams, String> {
        RlftParams::new(self.ports, self.stages).map_err(|e| e.to_string())
    }

    pub fn sqs_config(&self) -> Result<SqsConfig, String> {
        let afc = self.routing.afi_enabled;
        match self.num_vcs {
            None => Ok(SqsConfig::new(self.sqs, afc)),
            Some(q) => SqsConfig::with_regular_vcs(self.sqs, q, afc).map_err(|e| e.to_string()),
        }
    }

    pub fn detector_params(&self) -> DetectorParams {
        DetectorParams {
            hcd_th: self.hcd_th,
            lcd_th: self.lcd_th,
            fc_th: self.fc_th,
            crt: SimTime::from_ms_f64(self.crt_ms),
        }
    }

    pub fn endnodes(&self) -> u32 {
        self.rlft().map(|p| p.endnode_count()).unwrap_or(0)
    }

    /// Incast pattern active in this run: the main traffic kind, or the
    /// background of a trace run.
    pub fn incast_kind(&self) -> Option<TrafficKind> {
        match self.traffic {
            TrafficKind::Trace => self.trace_background.filter(|k| k.is_incast()),
            k if k.is_incast() => Some(k),
            _ => None,
        }
    }

    pub fn resolved_hotspot_dests(&self) -> Vec<NodeId> {
        match (&self.hotspot_dests, self.incast_kind()) {
            (_, None) => vec![],
            (Some(v), Some(_)) => v.clone(),
            (None, Some(k)) => default_hotspot_dests(k.hotspot_count(), self.endnodes()),
        }
    }

    pub fn validate(&self) -> Result<(), ConfigError> {
        let mut e = vec![];
        let rlft = match self.rlft() {
            Ok(r) => Some(r),
            Err(msg) => {
                e.push(format!("ports/stages: {msg}"));
                None
            }
        };
        let sqs = match self.sqs_config() {
            Ok(s) => Some(s),
            Err(msg) => {
                e.push(format!("sqs/num_vcs: {msg}"));
                None
            }
        };
        if let Err(msg) = self.detector_params().validate() {
            e.push(format!("detector: {msg}"));
        }
        if !(self.adaptive_th > 0.0 && self.adaptive_th <= 1.0) {
            e.push(format!(
                "adaptive_th: must be in (0, 1], got {}",
                self.adaptive_th
            ));
        }
        if self.port_buffer_pkts == 0 {
            e.push("port_buffer_pkts: must be positive".into());
        }
        if self.vc_reserved_pkts == 0 {
            e.push("vc_reserved_pkts: must be positive".into());
        }
        if let Some(s) = sqs {
            let afc = if s.afc_present {
                self.afc_buffer_pkts
            } else {
                0
            };
            if s.afc_present && afc == 0 {
                e.push("afc_buffer_pkts: must be positive".into());
            }
            let reserved = s.regular_vcs as u32 * self.vc_reserved_pkts + afc;
            if reserved > self.port_buffer_pkts {
                e.push(format!(
                    "vc_reserved_pkts: {} regular VCs x {} reserved plus {} AFC slots exceeds port_buffer_pkts {}",
                    s.regular_vcs,
                    self.vc_reserved_pkts,
                    afc,
                    self.port_buffer_pkts
                ));
            }
        }
        if self.mtu_bytes == 0 {
            e.push("mtu_bytes: must be positive".into());
        }
        if self.link_gbps.is_nan() || self.link_gbps <= 0.0 {
            e.push("link_gbps: must be positive".into());
        }
        if self.arn_ttl_ms.is_nan() || self.arn_ttl_ms <= 0.0 {
            e.push("arn_ttl_ms: must be positive".into());
        }
        if self.arn_table_cap == 0 {
            e.push("arn_table_cap: must be positive".into());
        }
        if self.arn_resend_us < 0.0 {
            e.push("arn_resend_us: must not be negative".into());
        }
        if self.sim_ms.is_nan() || self.sim_ms <= 0.0 {
            e.push("sim_ms: must be positive".into());
        }
        if self.warmup_ms < 0.0 || self.hotspot_ms < 0.0 || self.drain_ms < 0.0 {
            e.push("warmup_ms/hotspot_ms/drain_ms: must not be negative".into());
        }
        if self.traffic.is_incast() && self.warmup_ms + self.hotspot_ms > self.sim_ms + 1e-9 {
            e.push(format!(
                "hotspot_ms: warmup + hotspot ({} ms) exceeds sim_ms ({} ms)",
                self.warmup_ms + self.hotspot_ms,
                self.sim_ms
            ));
        }
        if self.bin_us.is_nan() || self.bin_us <= 0.0 {
            e.push("bin_us: must be positive".into());
        }
        if self.checkpoint_us.is_nan() || self.checkpoint_us <= 0.0 {
            e.push("checkpoint_us: must be positive".into());
        }
        if !(self.injection_rate > 0.0 && self.injection_rate <= 1.0) {
            e.push(format!(
                "injection_rate: must be in (0, 1], got {}",
                self.injection_rate
            ));
        }
        if self.hca_queue_pkts == 0 {
            e.push("hca_queue_pkts: must be positive".into());
        }
        if self.traffic != TrafficKind::Trace && self.trace_background.is_some() {
            e.push("trace_background: only valid when traffic = trace".into());
        }
        if let Some(bg) = self.trace_background {
            if !bg.is_incast() {
                e.push(format!("trace_background: `{bg}` is not an incast pattern"));
            }
        }
        if let Some(r) = rlft {
            let n = r.endnode_count();
            let dests = self.resolved_hotspot_dests();
            if self.incast_kind().is_some() && dests.is_empty() {
                e.push("hotspot_dests: must not be empty for incast traffic".into());
            }
            for d in &dests {
                if *d >= n {
                    e.push(format!("hotspot_dests: endnode {d} out of range (N = {n})"));
                }
            }
        }
        if e.is_empty() {
            Ok(())
        } else {
            Err(ConfigError(e))
        }
    }

    /// Fully resolved configuration in the input format.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(s, "{k} = {v}");
        };
        kv("name", self.name.clone());
        kv("ports", self.ports.to_string());
        kv("stages", self.stages.to_string());
        kv("routing", self.routing.name().into());
        kv("sqs", self.sqs.as_str().into());
        let regular = self
            .sqs_config()
            .map(|c| c.regular_vcs)
            .unwrap_or(self.sqs.default_regular_vcs());
        kv("num_vcs", regular.to_string());
        kv("adaptive_th", self.adaptive_th.to_string());
        kv("port_buffer_pkts", self.port_buffer_pkts.to_string());
        kv("vc_reserved_pkts", self.vc_reserved_pkts.to_string());
        kv("afc_buffer_pkts", self.afc_buffer_pkts.to_string());
        kv("mtu_bytes", self.mtu_bytes.to_string());
        kv("link_gbps", self.link_gbps.to_string());
        kv("link_prop_ns", self.link_prop_ns.to_string());
        kv("hcd_th", self.hcd_th.to_string());
        kv("lcd_th", self.lcd_th.to_string());
        kv("fc_th", self.fc_th.to_string());
        kv("crt_ms", self.crt_ms.to_string());
        kv("arn_ttl_ms", self.arn_ttl_ms.to_string());
        kv("arn_table_cap", self.arn_table_cap.to_string());
        kv("arn_resend_us", self.arn_resend_us.to_string());
        kv("traffic", self.traffic.as_str().into());
        if let Some(p) = &self.trace_file {
            kv("trace_file", p.display().to_string());
        }
        kv(
            "trace_background",
            self.trace_background
                .map(|k| k.as_str().to_string())
                .unwrap_or_else(|| "none".into()),
        );
        kv("warmup_ms", self.warmup_ms.to_string());
        kv("hotspot_ms", self.hotspot_ms.to_string());
        kv("sim_ms", self.sim_ms.to_string());
        kv("drain_ms", self.drain_ms.to_string());
        kv("seed", self.seed.to_string());
        kv("bin_us", self.bin_us.to_string());
        let dests = self.resolved_hotspot_dests();
        if !dests.is_empty() {
            let list: Vec<String> = dests.iter().map(|d| d.to_string()).collect();
            kv("hotspot_dests", list.join(","));
        }
        kv("injection_rate", self.injection_rate.to_string());
        kv("hca_queue_pkts", self.hca_queue_pkts.to_string());
        kv("checkpoint_us", self.checkpoint_us.to_string());
        kv("detector_log", self.detector_log.to_string());
        kv("arn_log", self.arn_log.to_string());
        s
    }
}
