//! Scenario files: TOML documents describing the plant, communication graph,
//! controller gains, attacks and detectors of a run.

use std::collections::BTreeSet;
use std::fmt;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use thiserror::Error;
use toml::{Table, Value};

use crate::attack::{AttackKind, AttackSpec, Channel, Polarity};
use crate::comms::CommGraph;
use crate::control::ControlGains;
use crate::detector::{Activation, DetectorConfig};
use crate::linalg::Matrix;
use crate::plant::{PlantParams, Switch};

/// Upper bound on `duration / dt`.
pub const MAX_STEPS: f64 = 1e7;

/// Default bad-data threshold as a fraction of the channel nominal.
pub const DEFAULT_THRESHOLD_FRACTION: f64 = 0.005;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ScenarioError {
    #[error("syntax error at line {line}: {message}")]
    SyntaxError { line: usize, message: String },
    #[error("unknown key `{key}`{}", line.map(|l| format!(" at line {l}")).unwrap_or_default())]
    UnknownKey { key: String, line: Option<usize> },
    #[error("invalid value for `{key}`: {reason}")]
    InvalidValue { key: String, reason: String },
}

/// A monitored, controller-visible signal: one channel of one agent.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct SignalId {
    pub channel: Channel,
    pub agent: usize,
}

impl fmt::Display for SignalId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.channel {
            Channel::Voltage => write!(f, "v_bar_{}", self.agent),
            Channel::Current => write!(f, "i_pu_{}", self.agent),
        }
    }
}

impl FromStr for SignalId {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        let (channel, rest) = if let Some(r) = s.strip_prefix("v_bar_") {
            (Channel::Voltage, r)
        } else if let Some(r) = s.strip_prefix("i_pu_") {
            (Channel::Current, r)
        } else {
            return Err(format!("unknown signal `{s}` (expected v_bar_<k> or i_pu_<k>)"));
        };
        let agent = rest
            .parse()
            .map_err(|_| format!("bad agent index in signal `{s}`"))?;
        Ok(Self { channel, agent })
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum DetectorSource {
    /// Load a trained model from disk.
    Model(PathBuf),
    /// Train from an attack-free dry run of the same scenario.
    Train(DetectorConfig),
}

#[derive(Debug, Clone, PartialEq)]
pub struct DetectorSetup {
    pub signal: SignalId,
    pub source: DetectorSource,
    /// Substitute predictions for rejected samples.
    pub reconstruct: bool,
}

/// Standard deviations of zero-mean Gaussian sensor noise added to each
/// agent's bus-voltage and per-unit current measurements.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct MeasurementNoise {
    pub voltage: f64,
    pub current: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub name: String,
    pub duration: f64,
    pub dt: f64,
    pub v_ref: f64,
    pub seed: u64,
    pub output: PathBuf,
    pub plant: PlantParams,
    pub graph: CommGraph,
    pub gains: ControlGains,
    pub noise: MeasurementNoise,
    pub attacks: Vec<AttackSpec>,
    pub detectors: Vec<DetectorSetup>,
}

impl ScenarioConfig {
    /// Number of plant steps; the run has one more row than this.
    pub fn steps(&self) -> usize {
        (self.duration / self.dt).round() as usize
    }

    pub fn n_agents(&self) -> usize {
        self.graph.n_agents()
    }

    /// Makes relative model paths relative to `base` (the scenario's directory).
    pub fn resolve_paths(&mut self, base: &Path) {
        for d in &mut self.detectors {
            if let DetectorSource::Model(p) = &mut d.source {
                if p.is_relative() {
                    *p = base.join(&*p);
                }
            }
        }
    }

    /// The same scenario with attacks and detectors removed.
    pub fn dry_run(&self) -> Self {
        Self {
            attacks: Vec::new(),
            detectors: Vec::new(),
            ..self.clone()
        }
    }
}

pub fn load_scenario(path: &Path) -> Result<ScenarioConfig, crate::Error> {
    let text = std::fs::read_to_string(path).map_err(|source| crate::Error::Io {
        path: path.to_path_buf(),
        source,
    })?;
    let mut cfg = parse_scenario(&text)?;
    cfg.resolve_paths(path.parent().unwrap_or(Path::new(".")));
    Ok(cfg)
}

/// Walks a TOML table, handing out values by key and remembering which keys
/// were consumed so leftovers can be reported.
struct Section<'a> {
    text: &'a str,
    path: String,
    table: &'a Table,
    used: BTreeSet<&'a str>,
}

impl<'a> Section<'a> {
    fn new(text: &'a str, path: String, table: &'a Table) -> Self {
        Self {
            text,
            path,
            table,
            used: BTreeSet::new(),
        }
    }

    fn key(&self, k: &str) -> String {
        if self.path.is_empty() {
            k.to_string()
        } else {
            format!("{}.{k}", self.path)
        }
    }

    fn invalid(&self, k: &str, reason: impl Into<String>) -> ScenarioError {
        ScenarioError::InvalidValue {
            key: self.key(k),
            reason: reason.into(),
        }
    }

    fn get(&mut self, k: &'a str) -> Option<&'a Value> {
        let v = self.table.get(k)?;
        self.used.insert(k);
        Some(v)
    }

    fn f64_opt(&mut self, k: &'a str) -> Result<Option<f64>, ScenarioError> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Float(f)) => Ok(Some(*f)),
            Some(Value::Integer(i)) => Ok(Some(*i as f64)),
            Some(_) => Err(self.invalid(k, "expected a number")),
        }
    }

    fn f64_or(&mut self, k: &'a str, default: f64) -> Result<f64, ScenarioError> {
        Ok(self.f64_opt(k)?.unwrap_or(default))
    }

    fn positive_or(&mut self, k: &'a str, default: f64) -> Result<f64, ScenarioError> {
        let v = self.f64_or(k, default)?;
        if !(v > 0.0 && v.is_finite()) {
            return Err(self.invalid(k, format!("must be positive and finite, got {v}")));
        }
        Ok(v)
    }

    fn uint_opt(&mut self, k: &'a str) -> Result<Option<u64>, ScenarioError> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Integer(i)) if *i >= 0 => Ok(Some(*i as u64)),
            Some(_) => Err(self.invalid(k, "expected a non-negative integer")),
        }
    }

    fn uint_or(&mut self, k: &'a str, default: u64) -> Result<u64, ScenarioError> {
        Ok(self.uint_opt(k)?.unwrap_or(default))
    }

    fn bool_or(&mut self, k: &'a str, default: bool) -> Result<bool, ScenarioError> {
        match self.get(k) {
            None => Ok(default),
            Some(Value::Boolean(b)) => Ok(*b),
            Some(_) => Err(self.invalid(k, "expected true or false")),
        }
    }

    fn str_opt(&mut self, k: &'a str) -> Result<Option<&'a str>, ScenarioError> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::String(s)) => Ok(Some(s)),
            Some(_) => Err(self.invalid(k, "expected a string")),
        }
    }

    fn parsed<T: FromStr<Err = String>>(&mut self, k: &'a str) -> Result<Option<T>, ScenarioError> {
        match self.str_opt(k)? {
            None => Ok(None),
            Some(s) => s.parse().map(Some).map_err(|e| self.invalid(k, e)),
        }
    }

    fn uint_list(&mut self, k: &'a str) -> Result<Option<Vec<usize>>, ScenarioError> {
        let Some(v) = self.get(k) else {
            return Ok(None);
        };
        let err = || self.invalid(k, "expected an array of non-negative integers");
        let arr = v.as_array().ok_or_else(err)?;
        arr.iter()
            .map(|x| match x {
                Value::Integer(i) if *i >= 0 => Ok(*i as usize),
                _ => Err(err()),
            })
            .collect::<Result<_, _>>()
            .map(Some)
    }

    fn matrix(&mut self, k: &'a str) -> Result<Option<Vec<Vec<f64>>>, ScenarioError> {
        let Some(v) = self.get(k) else {
            return Ok(None);
        };
        let err = || self.invalid(k, "expected an array of arrays of numbers");
        let rows = v.as_array().ok_or_else(err)?;
        rows.iter()
            .map(|r| {
                r.as_array()
                    .ok_or_else(err)?
                    .iter()
                    .map(|x| match x {
                        Value::Float(f) => Ok(*f),
                        Value::Integer(i) => Ok(*i as f64),
                        _ => Err(err()),
                    })
                    .collect()
            })
            .collect::<Result<_, _>>()
            .map(Some)
    }

    fn table(&mut self, k: &'a str) -> Result<Option<Section<'a>>, ScenarioError> {
        match self.get(k) {
            None => Ok(None),
            Some(Value::Table(t)) => Ok(Some(Section::new(self.text, self.key(k), t))),
            Some(_) => Err(self.invalid(k, "expected a table")),
        }
    }

    fn tables(&mut self, k: &'a str) -> Result<Vec<Section<'a>>, ScenarioError> {
        match self.get(k) {
            None => Ok(Vec::new()),
            Some(Value::Array(items)) => items
                .iter()
                .enumerate()
                .map(|(i, item)| match item {
                    Value::Table(t) => Ok(Section::new(self.text, format!("{}[{i}]", self.key(k)), t)),
                    _ => Err(self.invalid(k, "expected an array of tables")),
                })
                .collect(),
            Some(_) => Err(self.invalid(k, "expected an array of tables")),
        }
    }

    /// Rejects any key that was never asked for.
    fn finish(self) -> Result<(), ScenarioError> {
        match self.table.keys().find(|k| !self.used.contains(k.as_str())) {
            None => Ok(()),
            Some(k) => Err(ScenarioError::UnknownKey {
                key: self.key(k),
                line: line_of_key(self.text, k),
            }),
        }
    }
}

/// Best-effort line number of a `key = ...` or `[key]` line.
fn line_of_key(text: &str, key: &str) -> Option<usize> {
    text.lines()
        .position(|l| {
            let l = l.trim_start().trim_start_matches('[').trim_start();
            l.strip_prefix(key)
                .is_some_and(|rest| rest.trim_start().starts_with(['=', ']', '.']))
        })
        .map(|i| i + 1)
}

fn line_at(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].matches('\n').count() + 1
}

pub fn parse_scenario(text: &str) -> Result<ScenarioConfig, ScenarioError> {
    let table: Table = text
        .parse()
        .map_err(|e: toml::de::Error| ScenarioError::SyntaxError {
            line: e.span().map(|s| line_at(text, s.start)).unwrap_or(1),
            message: e.message().trim().to_string(),
        })?;
    let mut root = Section::new(text, String::new(), &table);

    let name = root
        .str_opt("name")?
        .ok_or_else(|| root.invalid("name", "required"))?
        .to_string();
    let duration = root.positive_or("duration", 30.0)?;
    let dt = root.positive_or("dt", 1e-3)?;
    if duration / dt > MAX_STEPS {
        return Err(root.invalid(
            "duration",
            format!("duration / dt = {} exceeds {MAX_STEPS}", duration / dt),
        ));
    }
    if duration < dt {
        return Err(root.invalid("duration", "must be at least one time step"));
    }
    let seed = root.uint_or("seed", 0)?;
    let output = PathBuf::from(root.str_opt("output")?.unwrap_or("out"));

    let plant = match root.table("plant")? {
        Some(s) => parse_plant(s)?,
        None => PlantParams::dual_zone(),
    };
    let v_ref = root.positive_or("v_ref", plant.v_nominal)?;

    let graph = match root.table("graph")? {
        Some(mut s) => {
            let w = s
                .matrix("weights")?
                .ok_or_else(|| s.invalid("weights", "required"))?;
            let g = CommGraph::build(&w).map_err(|e| s.invalid("weights", e.to_string()))?;
            s.finish()?;
            g
        }
        None => CommGraph::dual_zone(),
    };
    if graph.n_agents() != plant.n_buses() {
        return Err(ScenarioError::InvalidValue {
            key: "graph.weights".into(),
            reason: format!(
                "{} agents but the plant has {} buses",
                graph.n_agents(),
                plant.n_buses()
            ),
        });
    }

    let gains = match root.table("control")? {
        Some(s) => parse_gains(s)?,
        None => ControlGains::default(),
    };

    let noise = match root.table("noise")? {
        Some(mut s) => {
            let mut std_dev = |k| {
                let v = s.f64_or(k, 0.0)?;
                if !(v >= 0.0 && v.is_finite()) {
                    return Err(s.invalid(k, format!("must be non-negative, got {v}")));
                }
                Ok(v)
            };
            let n = MeasurementNoise {
                voltage: std_dev("voltage")?,
                current: std_dev("current")?,
            };
            s.finish()?;
            n
        }
        None => MeasurementNoise::default(),
    };

    let mut attacks = Vec::new();
    for s in root.tables("attack")? {
        attacks.push(parse_attack(s, v_ref, graph.n_agents())?);
    }

    let mut detectors: Vec<DetectorSetup> = Vec::new();
    for s in root.tables("detector")? {
        let key = s.key("signal");
        let d = parse_detector(s, seed, graph.n_agents())?;
        if detectors.iter().any(|o| o.signal == d.signal) {
            return Err(ScenarioError::InvalidValue {
                key,
                reason: format!("signal `{}` is monitored twice", d.signal),
            });
        }
        detectors.push(d);
    }
    root.finish()?;

    Ok(ScenarioConfig {
        name,
        duration,
        dt,
        v_ref,
        seed,
        output,
        plant,
        graph,
        gains,
        noise,
        attacks,
        detectors,
    })
}

fn parse_plant(mut s: Section) -> Result<PlantParams, ScenarioError> {
    let d = PlantParams::dual_zone();
    let mut p = PlantParams {
        v_nominal: s.positive_or("v_nominal", d.v_nominal)?,
        pgm_rating: s.positive_or("pgm_rating", d.pgm_rating)?,
        pcm_rating: s.positive_or("pcm_rating", d.pcm_rating)?,
        pmm_subunit_rating: s.positive_or("pmm_subunit_rating", d.pmm_subunit_rating)?,
        droop: s.positive_or("droop", d.droop)?,
        bus_capacitance: s.positive_or("bus_capacitance", d.bus_capacitance)?,
        filter_time_constant: s.positive_or("filter_time_constant", d.filter_time_constant)?,
        line_conductance: d.line_conductance,
        switches: d.switches,
    };
    if let Some(rows) = s.matrix("line_conductance")? {
        p.line_conductance = Matrix::from_rows(&rows)
            .ok_or_else(|| s.invalid("line_conductance", "rows must have equal length"))?;
    }
    let switches = s.tables("switch")?;
    if !switches.is_empty() {
        p.switches = switches
            .into_iter()
            .map(|mut sw| {
                let id = sw
                    .str_opt("id")?
                    .ok_or_else(|| sw.invalid("id", "required"))?
                    .to_string();
                let bus = sw.uint_opt("bus")?.ok_or_else(|| sw.invalid("bus", "required"))? as usize;
                let closed = sw.bool_or("closed", true)?;
                sw.finish()?;
                Ok(Switch { id, bus, closed })
            })
            .collect::<Result<_, ScenarioError>>()?;
    }
    p.validate().map_err(|e| s.invalid("", e.to_string()))?;
    s.finish()?;
    Ok(p)
}

fn parse_gains(mut s: Section) -> Result<ControlGains, ScenarioError> {
    let d = ControlGains::default();
    let mut nonneg = |k, default| {
        let v = s.f64_or(k, default)?;
        if !(v >= 0.0 && v.is_finite()) {
            return Err(s.invalid(k, format!("must be non-negative, got {v}")));
        }
        Ok(v)
    };
    let g = ControlGains {
        voltage_kp: nonneg("voltage_kp", d.voltage_kp)?,
        voltage_ki: nonneg("voltage_ki", d.voltage_ki)?,
        voltage_limit: nonneg("voltage_limit", d.voltage_limit)?,
        current_kp: nonneg("current_kp", d.current_kp)?,
        current_ki: nonneg("current_ki", d.current_ki)?,
        current_limit: nonneg("current_limit", d.current_limit)?,
    };
    s.finish()?;
    Ok(g)
}

fn parse_attack(mut s: Section, v_ref: f64, n_agents: usize) -> Result<AttackSpec, ScenarioError> {
    let kind: AttackKind = s.parsed("kind")?.ok_or_else(|| s.invalid("kind", "required"))?;
    let default_channel = match kind {
        AttackKind::LoadShare => Channel::Current,
        _ => Channel::Voltage,
    };
    let channel = s.parsed("channel")?.unwrap_or(default_channel);
    let nominal = match channel {
        Channel::Voltage => v_ref,
        Channel::Current => 1.0,
    };
    let start = s.f64_or("start", 0.0)?;
    let end = s.f64_or("end", f64::INFINITY)?;
    let threshold = s.f64_or("threshold", DEFAULT_THRESHOLD_FRACTION * nominal)?;
    let mut spec = AttackSpec::new(kind, channel, start, end, threshold);
    if let Some(t) = s.uint_list("targets")? {
        spec.target_agents = t;
    }
    spec.ramp_rate = s.f64_or("ramp_rate", 0.0)?;
    spec.polarity = s.parsed::<Polarity>("polarity")?.unwrap_or_default();
    spec.step = s.f64_or("step", 0.0)?;
    spec.t_vulnerable = s.f64_or("t_vulnerable", start)?;
    spec.stealth_coefficient = s.f64_or("coefficient", 0.0)?;
    if kind == AttackKind::Stealth && !(spec.stealth_coefficient.abs() < threshold) {
        return Err(s.invalid(
            "coefficient",
            format!("|coefficient| must be below the threshold ({threshold})"),
        ));
    }
    spec.validate(n_agents)
        .map_err(|e| s.invalid("", e.to_string()))?;
    s.finish()?;
    Ok(spec)
}

const TRAINING_KEYS: [&str; 9] = [
    "window",
    "hidden",
    "activation",
    "learning_rate",
    "mse_tolerance",
    "max_epochs",
    "radius",
    "seed",
    "stride",
];

fn parse_detector(mut s: Section, seed: u64, n_agents: usize) -> Result<DetectorSetup, ScenarioError> {
    let signal: SignalId = s
        .parsed("signal")?
        .ok_or_else(|| s.invalid("signal", "required"))?;
    if signal.agent >= n_agents {
        return Err(s.invalid(
            "signal",
            format!("agent {} out of range for {n_agents} agents", signal.agent),
        ));
    }
    let reconstruct = s.bool_or("reconstruct", true)?;
    let model = s.str_opt("model")?.map(PathBuf::from);
    let d = DetectorConfig::default();
    let hidden = match s.uint_list("hidden")? {
        None => d.hidden,
        Some(h) => h
            .try_into()
            .map_err(|_| s.invalid("hidden", "expected exactly two layer widths"))?,
    };
    let cfg = DetectorConfig {
        window: s.uint_or("window", d.window as u64)? as usize,
        hidden,
        activation: s.parsed::<Activation>("activation")?.unwrap_or(d.activation),
        learning_rate: s.f64_or("learning_rate", d.learning_rate)?,
        mse_tolerance: s.f64_or("mse_tolerance", d.mse_tolerance)?,
        max_epochs: s.uint_or("max_epochs", d.max_epochs as u64)? as usize,
        radius: s.f64_opt("radius")?,
        seed: s.uint_or("seed", seed)?,
        stride: s.uint_or("stride", d.stride as u64)? as usize,
    };
    let source = match model {
        Some(path) => {
            if let Some(k) = TRAINING_KEYS.iter().find(|k| s.table.contains_key(**k)) {
                return Err(s.invalid(k, "training settings cannot be combined with a model file"));
            }
            DetectorSource::Model(path)
        }
        None => {
            cfg.validate().map_err(|e| s.invalid("", e.to_string()))?;
            DetectorSource::Train(cfg)
        }
    };
    s.finish()?;
    Ok(DetectorSetup {
        signal,
        source,
        reconstruct,
    })
}
