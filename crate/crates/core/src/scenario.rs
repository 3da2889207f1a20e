//! Scenario files: `[section]` headers, `key = value` settings, and a few
//! line directives (`node`, `link`, `flow`, `auto`). `#` starts a comment.
//!
//! ```text
//! [topology]
//! rows = 3
//! cols = 3
//! link 0 1 0.9 0.8
//!
//! [protocol]
//! protocol = cormen
//!
//! [flows]
//! auto 7 seed 11
//!
//! [sim]
//! seed = 1
//! ```

use std::fmt;
use std::path::Path;
use std::str::FromStr;

use crate::node::ProtocolParams;
use crate::sim::traffic::{auto_flows, default_duration, default_start, FlowSpec, DEFAULT_INTERVAL_S, DEFAULT_PAYLOAD_BYTES};
use crate::sim::{EtxMode, MacParams, ProtocolKind, SimConfig};
use crate::topology::{
    NodeId, Position, Topology, TopologyError, DEFAULT_CARRIER_SENSE_RANGE, DEFAULT_RADIO_RANGE,
};

/// Help text listing every key and its default.
pub const SCENARIO_HELP: &str = "\
Scenario file keys (defaults in brackets):
  [topology]  rows [1], cols [1], spacing [200] m, radio_range [250] m,
              carrier_sense_range [550] m, d_f [1.0], d_r [1.0]
              node <id> <x> <y>          explicit position (replaces the grid)
              link <u> <v> <d_f> <d_r>   per-link delivery ratios
  [protocol]  protocol [cormen] (cormen | cope | plain), t_slot_ms [5],
              etx_threshold [2.0], pool_ttl_s [5], ack_timeout_s [2],
              max_retx [3], queue_cap [50], freshness_margin_s [0.1]
  [flows]     payload [1000] bytes, interval [0.05] s (defaults for flows)
              flow <src> <dst> [start S] [stop S] [interval S] [payload B] [count N]
              auto <count> seed <s>      seeded pairs >= 2 hops apart, half reversed
              flow k starts at 30 + 20k s unless given
  [sim]       duration [last start + 60] s, seed [1], trace [off],
              etx_mode [oracle] (oracle | measured), bitrate [1000000] bps,
              slot_us [20], contention_window [32], probe_interval_s [1],
              etx_window_s [10]";

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioError {
    pub line: Option<usize>,
    pub message: String,
}

impl ScenarioError {
    fn at(line: usize, message: impl Into<String>) -> Self {
        ScenarioError { line: Some(line), message: message.into() }
    }

    fn general(message: impl Into<String>) -> Self {
        ScenarioError { line: None, message: message.into() }
    }
}

impl fmt::Display for ScenarioError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.line {
            Some(l) => write!(f, "line {l}: {}", self.message),
            None => f.write_str(&self.message),
        }
    }
}

impl std::error::Error for ScenarioError {}

/// All errors found in one scenario, in line order.
#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioErrors(pub Vec<ScenarioError>);

impl fmt::Display for ScenarioErrors {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for (i, e) in self.0.iter().enumerate() {
            if i > 0 {
                writeln!(f)?;
            }
            write!(f, "{e}")?;
        }
        Ok(())
    }
}

impl std::error::Error for ScenarioErrors {}

#[derive(Debug, Clone, PartialEq)]
pub struct TopologySection {
    pub rows: usize,
    pub cols: usize,
    pub spacing: f64,
    pub radio_range: f64,
    pub carrier_sense_range: f64,
    pub d_f: f64,
    pub d_r: f64,
    /// `(line, id, position)`
    pub nodes: Vec<(usize, u16, Position)>,
    /// `(line, u, v, d_f, d_r)`
    pub links: Vec<(usize, u16, u16, f64, f64)>,
}

impl Default for TopologySection {
    fn default() -> Self {
        TopologySection {
            rows: 1,
            cols: 1,
            spacing: 200.0,
            radio_range: DEFAULT_RADIO_RANGE,
            carrier_sense_range: DEFAULT_CARRIER_SENSE_RANGE,
            d_f: 1.0,
            d_r: 1.0,
            nodes: Vec::new(),
            links: Vec::new(),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowLine {
    pub line: usize,
    pub src: u16,
    pub dst: u16,
    pub start: Option<f64>,
    pub stop: Option<f64>,
    pub interval: Option<f64>,
    pub payload: Option<u16>,
    pub count: Option<u32>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct FlowsSection {
    pub payload_bytes: u16,
    pub interval_s: f64,
    pub explicit: Vec<FlowLine>,
    /// `(line, count, seed)`
    pub auto: Option<(usize, usize, u64)>,
}

impl Default for FlowsSection {
    fn default() -> Self {
        FlowsSection {
            payload_bytes: DEFAULT_PAYLOAD_BYTES,
            interval_s: DEFAULT_INTERVAL_S,
            explicit: Vec::new(),
            auto: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SimSection {
    pub duration_s: Option<f64>,
    pub seed: u64,
    pub trace: bool,
    pub etx_mode: EtxMode,
    pub mac: MacParams,
    pub probe_interval_s: f64,
    pub etx_window_s: f64,
}

impl Default for SimSection {
    fn default() -> Self {
        SimSection {
            duration_s: None,
            seed: 1,
            trace: false,
            etx_mode: EtxMode::Oracle,
            mac: MacParams::default(),
            probe_interval_s: 1.0,
            etx_window_s: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub topology: TopologySection,
    pub protocol: ProtocolKind,
    pub params: ProtocolParams,
    pub flows: FlowsSection,
    pub sim: SimSection,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            name: "scenario".into(),
            topology: TopologySection::default(),
            protocol: ProtocolKind::Cormen,
            params: ProtocolParams::default(),
            flows: FlowsSection::default(),
            sim: SimSection::default(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Section {
    None,
    Topology,
    Protocol,
    Flows,
    Sim,
}

fn num<T: FromStr>(line: usize, what: &str, raw: &str, errs: &mut Vec<ScenarioError>) -> Option<T> {
    match raw.parse() {
        Ok(v) => Some(v),
        Err(_) => {
            errs.push(ScenarioError::at(line, format!("`{what}` expects a number, got `{raw}`")));
            None
        }
    }
}

fn set<T: FromStr>(slot: &mut T, line: usize, key: &str, raw: &str, errs: &mut Vec<ScenarioError>) {
    if let Some(v) = num(line, key, raw, errs) {
        *slot = v;
    }
}

fn flag(line: usize, key: &str, raw: &str, errs: &mut Vec<ScenarioError>) -> Option<bool> {
    match raw {
        "on" | "true" | "yes" | "1" => Some(true),
        "off" | "false" | "no" | "0" => Some(false),
        _ => {
            errs.push(ScenarioError::at(line, format!("`{key}` expects on or off, got `{raw}`")));
            None
        }
    }
}

/// Parses scenario text. Every malformed line is reported, not just the first.
pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioErrors> {
    let mut cfg = ScenarioConfig::default();
    let mut errs = Vec::new();
    let mut section = Section::None;

    for (idx, raw) in text.lines().enumerate() {
        let line = idx + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        if let Some(name) = content.strip_prefix('[').and_then(|s| s.strip_suffix(']')) {
            section = match name.trim() {
                "topology" => Section::Topology,
                "protocol" => Section::Protocol,
                "flows" => Section::Flows,
                "sim" => Section::Sim,
                other => {
                    errs.push(ScenarioError::at(
                        line,
                        format!("unknown section `[{other}]` (expected topology, protocol, flows or sim)"),
                    ));
                    Section::None
                }
            };
            continue;
        }

        if let Some((key, value)) = content.split_once('=') {
            let (key, value) = (key.trim(), value.trim());
            parse_setting(&mut cfg, section, line, key, value, &mut errs);
        } else {
            let words: Vec<&str> = content.split_whitespace().collect();
            parse_directive(&mut cfg, section, line, &words, &mut errs);
        }
    }
    if errs.is_empty() {
        Ok(cfg)
    } else {
        Err(ScenarioErrors(errs))
    }
}

fn parse_setting(
    cfg: &mut ScenarioConfig,
    section: Section,
    line: usize,
    key: &str,
    value: &str,
    errs: &mut Vec<ScenarioError>,
) {
    let t = &mut cfg.topology;
    let p = &mut cfg.params;
    let s = &mut cfg.sim;
    match (section, key) {
        (Section::Topology, "rows") => set(&mut t.rows, line, key, value, errs),
        (Section::Topology, "cols") => set(&mut t.cols, line, key, value, errs),
        (Section::Topology, "spacing") => set(&mut t.spacing, line, key, value, errs),
        (Section::Topology, "radio_range") => set(&mut t.radio_range, line, key, value, errs),
        (Section::Topology, "carrier_sense_range") => set(&mut t.carrier_sense_range, line, key, value, errs),
        (Section::Topology, "d_f") => set(&mut t.d_f, line, key, value, errs),
        (Section::Topology, "d_r") => set(&mut t.d_r, line, key, value, errs),

        (Section::Protocol, "protocol") => match value.parse() {
            Ok(k) => cfg.protocol = k,
            Err(e) => errs.push(ScenarioError::at(line, e)),
        },
        (Section::Protocol, "t_slot_ms") => {
            if let Some(ms) = num::<f64>(line, key, value, errs) {
                p.t_slot = ms / 1000.0;
            }
        }
        (Section::Protocol, "etx_threshold") => set(&mut p.etx_threshold, line, key, value, errs),
        (Section::Protocol, "pool_ttl_s") => set(&mut p.pool_ttl, line, key, value, errs),
        (Section::Protocol, "ack_timeout_s") => set(&mut p.ack_timeout, line, key, value, errs),
        (Section::Protocol, "max_retx") => set(&mut p.max_retx, line, key, value, errs),
        (Section::Protocol, "queue_cap") => set(&mut p.queue_cap, line, key, value, errs),
        (Section::Protocol, "freshness_margin_s") => set(&mut p.freshness_margin, line, key, value, errs),

        (Section::Flows, "payload") => set(&mut cfg.flows.payload_bytes, line, key, value, errs),
        (Section::Flows, "interval") => set(&mut cfg.flows.interval_s, line, key, value, errs),

        (Section::Sim, "duration") => {
            if let Some(d) = num(line, key, value, errs) {
                s.duration_s = Some(d);
            }
        }
        (Section::Sim, "seed") => set(&mut s.seed, line, key, value, errs),
        (Section::Sim, "trace") => {
            if let Some(b) = flag(line, key, value, errs) {
                s.trace = b;
            }
        }
        (Section::Sim, "etx_mode") => match value {
            "oracle" => s.etx_mode = EtxMode::Oracle,
            "measured" => s.etx_mode = EtxMode::Measured,
            other => errs.push(ScenarioError::at(
                line,
                format!("unknown etx_mode `{other}` (expected oracle or measured)"),
            )),
        },
        (Section::Sim, "bitrate") => set(&mut s.mac.bitrate_bps, line, key, value, errs),
        (Section::Sim, "slot_us") => {
            if let Some(us) = num::<f64>(line, key, value, errs) {
                s.mac.slot_s = us * 1e-6;
            }
        }
        (Section::Sim, "contention_window") => set(&mut s.mac.contention_window, line, key, value, errs),
        (Section::Sim, "probe_interval_s") => set(&mut s.probe_interval_s, line, key, value, errs),
        (Section::Sim, "etx_window_s") => set(&mut s.etx_window_s, line, key, value, errs),

        (Section::None, _) => errs.push(ScenarioError::at(line, format!("`{key}` appears before any [section]"))),
        _ => errs.push(ScenarioError::at(line, format!("unknown key `{key}` in this section"))),
    }
}

fn parse_directive(
    cfg: &mut ScenarioConfig,
    section: Section,
    line: usize,
    words: &[&str],
    errs: &mut Vec<ScenarioError>,
) {
    let bad = |errs: &mut Vec<ScenarioError>, usage: &str| {
        errs.push(ScenarioError::at(line, format!("malformed line, expected `{usage}`")));
    };
    match (section, words[0]) {
        (Section::Topology, "node") => {
            if words.len() != 4 {
                return bad(errs, "node <id> <x> <y>");
            }
            let id = num(line, "node id", words[1], errs);
            let x = num(line, "x", words[2], errs);
            let y = num(line, "y", words[3], errs);
            if let (Some(id), Some(x), Some(y)) = (id, x, y) {
                cfg.topology.nodes.push((line, id, Position::new(x, y)));
            }
        }
        (Section::Topology, "link") => {
            if words.len() != 5 {
                return bad(errs, "link <u> <v> <d_f> <d_r>");
            }
            let u = num(line, "u", words[1], errs);
            let v = num(line, "v", words[2], errs);
            let f = num(line, "d_f", words[3], errs);
            let r = num(line, "d_r", words[4], errs);
            if let (Some(u), Some(v), Some(f), Some(r)) = (u, v, f, r) {
                cfg.topology.links.push((line, u, v, f, r));
            }
        }
        (Section::Flows, "flow") => {
            const USAGE: &str = "flow <src> <dst> [start S] [stop S] [interval S] [payload B] [count N]";
            if words.len() < 3 || words.len().is_multiple_of(2) {
                return bad(errs, USAGE);
            }
            let (Some(src), Some(dst)) = (num(line, "src", words[1], errs), num(line, "dst", words[2], errs)) else {
                return;
            };
            let mut f = FlowLine { line, src, dst, start: None, stop: None, interval: None, payload: None, count: None };
            for kv in words[3..].chunks(2) {
                match kv[0] {
                    "start" => f.start = num(line, "start", kv[1], errs),
                    "stop" => f.stop = num(line, "stop", kv[1], errs),
                    "interval" => f.interval = num(line, "interval", kv[1], errs),
                    "payload" => f.payload = num(line, "payload", kv[1], errs),
                    "count" => f.count = num(line, "count", kv[1], errs),
                    other => errs.push(ScenarioError::at(line, format!("unknown flow option `{other}`"))),
                }
            }
            cfg.flows.explicit.push(f);
        }
        (Section::Flows, "auto") => {
            if words.len() != 4 || words[2] != "seed" {
                return bad(errs, "auto <count> seed <s>");
            }
            if let (Some(c), Some(s)) = (num(line, "count", words[1], errs), num(line, "seed", words[3], errs)) {
                if cfg.flows.auto.is_some() {
                    errs.push(ScenarioError::at(line, "only one `auto` line is allowed"));
                }
                cfg.flows.auto = Some((line, c, s));
            }
        }
        (Section::None, w) => errs.push(ScenarioError::at(line, format!("`{w}` appears before any [section]"))),
        (_, w) => errs.push(ScenarioError::at(line, format!("unknown directive `{w}` in this section"))),
    }
}

impl ScenarioConfig {
    pub fn build_topology(&self) -> Result<Topology, Vec<ScenarioError>> {
        let t = &self.topology;
        let mut errs = Vec::new();
        let topo = if t.nodes.is_empty() {
            crate::topology::GridSpec::new(t.rows, t.cols, t.spacing, t.d_f, t.d_r)
                .with_ranges(t.radio_range, t.carrier_sense_range)
                .build()
        } else {
            let mut nodes = t.nodes.clone();
            nodes.sort_by_key(|n| n.1);
            for (i, &(line, id, _)) in nodes.iter().enumerate() {
                if id as usize != i {
                    errs.push(ScenarioError::at(line, TopologyError::SparseIds { expected: nodes.len(), found: NodeId(id) }.to_string()));
                    return Err(errs);
                }
            }
            let positions = nodes.into_iter().map(|n| n.2).collect();
            Topology::from_positions(positions, t.radio_range, t.carrier_sense_range, t.d_f, t.d_r)
        };
        let mut topo = match topo {
            Ok(topo) => topo,
            Err(e) => return Err(vec![ScenarioError::general(format!("topology: {e}"))]),
        };
        for &(line, u, v, f, r) in &t.links {
            if let Err(e) = topo.set_link(NodeId(u), NodeId(v), f, r) {
                let msg = match e {
                    TopologyError::BrokenHop { .. } => format!("nodes {u} and {v} are out of radio range of each other"),
                    other => other.to_string(),
                };
                errs.push(ScenarioError::at(line, msg));
            }
        }
        if errs.is_empty() {
            Ok(topo)
        } else {
            Err(errs)
        }
    }

    /// Builds and validates a runnable configuration, reporting every
    /// problem found.
    pub fn to_sim_config(&self) -> Result<SimConfig, ScenarioErrors> {
        let topo = self.build_topology().map_err(ScenarioErrors)?;
        let mut errs = Vec::new();

        let mut flows: Vec<FlowSpec> = Vec::new();
        for f in &self.flows.explicit {
            let n = topo.node_count();
            if f.src as usize >= n || f.dst as usize >= n {
                errs.push(ScenarioError::at(f.line, format!("flow endpoint out of range (topology has {n} nodes)")));
                continue;
            }
            let mut spec = FlowSpec::new(NodeId(f.src), NodeId(f.dst), f.start.unwrap_or(default_start(flows.len())));
            spec.payload_bytes = f.payload.unwrap_or(self.flows.payload_bytes);
            spec.interval_s = f.interval.unwrap_or(self.flows.interval_s);
            spec.stop_s = f.stop;
            spec.count = f.count;
            flows.push(spec);
        }
        if let Some((line, count, seed)) = self.flows.auto {
            let generated = auto_flows(&topo, count, seed);
            if generated.len() < count {
                errs.push(ScenarioError::at(
                    line,
                    format!("only {} flows at least two hops apart fit this topology", generated.len()),
                ));
            }
            let offset = flows.len();
            for (k, mut f) in generated.into_iter().enumerate() {
                f.start_s = default_start(offset + k);
                f.payload_bytes = self.flows.payload_bytes;
                f.interval_s = self.flows.interval_s;
                flows.push(f);
            }
        }

        let mut cfg = SimConfig::new(self.name.clone(), topo, self.protocol, flows);
        cfg.params = self.params.clone();
        cfg.mac = self.sim.mac.clone();
        cfg.duration_s = self.sim.duration_s.unwrap_or_else(|| default_duration(&cfg.flows));
        cfg.seed = self.sim.seed;
        cfg.trace = self.sim.trace;
        cfg.etx_mode = self.sim.etx_mode;
        cfg.probe_interval_s = self.sim.probe_interval_s;
        cfg.etx_window_s = self.sim.etx_window_s;

        errs.extend(cfg.validate().into_iter().map(ScenarioError::general));
        if errs.is_empty() {
            Ok(cfg)
        } else {
            Err(ScenarioErrors(errs))
        }
    }
}

/// Reads and validates a scenario file; the scenario is named after the
/// file stem.
pub fn load_scenario(path: &Path) -> Result<SimConfig, ScenarioErrors> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| ScenarioErrors(vec![ScenarioError::general(format!("{}: {e}", path.display()))]))?;
    let mut parsed = parse_scenario(&text)?;
    parsed.name = path.file_stem().map_or_else(|| "scenario".into(), |s| s.to_string_lossy().into_owned());
    parsed.to_sim_config()
}
