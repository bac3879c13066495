//! Rootkit attack engine.
//!
//! Injections are additive perturbations on the measurements agents exchange
//! (`x̃_k = x_k + x_attack,k`); both the victim's own controller and its
//! neighbours consume the falsified value. The access-level matrix `W`
//! characterises coordinated injections that are invisible in aggregate.

use std::fmt;
use std::str::FromStr;

use thiserror::Error;

use crate::comms::CommGraph;
use crate::linalg::{self, Matrix};

/// Drift injections are capped at this fraction of the threshold so the
/// strict inequality `|x_attack| < x^Thres` survives rounding.
pub const DRIFT_CAP_FACTOR: f64 = 0.999;

/// Residual bound for `W x_attack = 0` in [`is_stealthy`].
pub const STEALTH_RESIDUAL_TOLERANCE: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum AttackError {
    #[error("stealth attack requested but W has a trivial null space")]
    NoNullSpace,
    #[error("injection has {got} entries, expected {expected}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("invalid attack spec: {0}")]
    InvalidSpec(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum AttackKind {
    Drift,
    LoadShare,
    Shutdown,
    Stealth,
}

impl FromStr for AttackKind {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "drift" => Ok(Self::Drift),
            "loadshare" => Ok(Self::LoadShare),
            "shutdown" => Ok(Self::Shutdown),
            "stealth" => Ok(Self::Stealth),
            other => Err(format!(
                "unknown attack kind `{other}` (expected drift, loadshare, shutdown or stealth)"
            )),
        }
    }
}

impl fmt::Display for AttackKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Self::Drift => "drift",
            Self::LoadShare => "loadshare",
            Self::Shutdown => "shutdown",
            Self::Stealth => "stealth",
        })
    }
}

/// Which exchanged quantity an injection targets.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum Channel {
    /// `V̄_k`, volts.
    Voltage,
    /// `I^pu_k`, per-unit.
    Current,
}

impl FromStr for Channel {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "voltage" => Ok(Self::Voltage),
            "current" => Ok(Self::Current),
            other => Err(format!("unknown channel `{other}` (expected voltage or current)")),
        }
    }
}

/// Sign of a drift ramp as seen by the controllers. A negative ramp makes
/// the victim report a lower value than it holds, so its controller pushes
/// the true state upward.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum Polarity {
    #[default]
    Positive,
    Negative,
}

impl Polarity {
    pub fn sign(self) -> f64 {
        match self {
            Self::Positive => 1.0,
            Self::Negative => -1.0,
        }
    }
}

impl FromStr for Polarity {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "positive" => Ok(Self::Positive),
            "negative" => Ok(Self::Negative),
            other => Err(format!("unknown polarity `{other}`")),
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackSpec {
    pub kind: AttackKind,
    pub target_agents: Vec<usize>,
    pub channel: Channel,
    /// Window start (s), inclusive.
    pub start: f64,
    /// Window end (s), exclusive.
    pub end: f64,
    /// Drift slope (channel units per second).
    pub ramp_rate: f64,
    pub polarity: Polarity,
    /// LoadShare step (channel units).
    pub step: f64,
    /// Bad-data threshold `x^Thres` (channel units).
    pub threshold: f64,
    /// Shutdown trigger time (s).
    pub t_vulnerable: f64,
    pub stealth_coefficient: f64,
}

impl AttackSpec {
    /// A spec with every kind-specific field zeroed; callers fill what their
    /// kind needs.
    pub fn new(kind: AttackKind, channel: Channel, start: f64, end: f64, threshold: f64) -> Self {
        Self {
            kind,
            target_agents: vec![0],
            channel,
            start,
            end,
            ramp_rate: 0.0,
            polarity: Polarity::Positive,
            step: 0.0,
            threshold,
            t_vulnerable: start,
            stealth_coefficient: 0.0,
        }
    }

    pub fn validate(&self, n_agents: usize) -> Result<(), AttackError> {
        let bad = |m: String| Err(AttackError::InvalidSpec(m));
        if !(self.start < self.end) {
            return bad(format!(
                "start ({}) must be before end ({})",
                self.start, self.end
            ));
        }
        if !(self.threshold > 0.0) {
            return bad(format!("threshold must be positive, got {}", self.threshold));
        }
        if let Some(&k) = self.target_agents.iter().find(|&&k| k >= n_agents) {
            return bad(format!("target agent {k} out of range for {n_agents} agents"));
        }
        match self.kind {
            AttackKind::Drift if !(self.ramp_rate > 0.0) => bad(format!(
                "drift ramp_rate must be positive, got {}",
                self.ramp_rate
            )),
            AttackKind::LoadShare if !(self.step.abs() < self.threshold) => bad(format!(
                "loadshare |step| ({}) must be below the threshold ({})",
                self.step, self.threshold
            )),
            AttackKind::Shutdown if !(self.t_vulnerable >= self.start && self.t_vulnerable < self.end) => {
                bad(format!(
                    "t_vulnerable ({}) must lie in [start, end)",
                    self.t_vulnerable
                ))
            }
            _ => Ok(()),
        }
    }

    /// The channel this spec writes to; load-share attacks always hit the
    /// current channel.
    pub fn injected_channel(&self) -> Channel {
        match self.kind {
            AttackKind::LoadShare => Channel::Current,
            _ => self.channel,
        }
    }

    /// Ground-truth activity: the attack is manipulating the system at `t`.
    pub fn is_active(&self, t: f64) -> bool {
        let from = match self.kind {
            AttackKind::Shutdown => self.t_vulnerable,
            _ => self.start,
        };
        t >= from && t < self.end
    }
}

/// Access-level matrix `W` of a communication graph.
#[derive(Debug, Clone, PartialEq)]
pub struct AccessMatrix {
    w: Matrix,
}

impl AccessMatrix {
    pub fn matrix(&self) -> &Matrix {
        &self.w
    }

    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        self.w.mul_vec(x)
    }

    /// Wraps an arbitrary square matrix.
    pub fn from_matrix(w: Matrix) -> Self {
        assert_eq!(w.rows(), w.cols(), "access matrix must be square");
        Self { w }
    }

    pub fn n_agents(&self) -> usize {
        self.w.rows()
    }
}

/// Neighbours get `-1/(|N_k|+1)`, the diagonal gets `1 + Σ` of those, all
/// other entries are zero.
pub fn access_matrix(g: &CommGraph) -> AccessMatrix {
    let n = g.n_agents();
    let mut w = Matrix::zeros(n, n);
    for k in 0..n {
        let nbrs = g.neighbors(k).expect("k < n");
        let off = -1.0 / (nbrs.len() as f64 + 1.0);
        for &j in nbrs {
            w[(k, j)] = off;
        }
        w[(k, k)] = 1.0 + nbrs.iter().map(|&j| w[(k, j)]).sum::<f64>();
    }
    AccessMatrix { w }
}

/// Orthonormal basis of `null(W)`; empty if `W` is nonsingular.
pub fn stealth_basis(w: &AccessMatrix) -> Vec<Vec<f64>> {
    linalg::null_space(&w.w)
}

/// Per-agent additive terms on both exchanged channels at one instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Injection {
    pub voltage: Vec<f64>,
    pub current: Vec<f64>,
    /// The shutdown trigger has fired.
    pub shutdown: bool,
}

impl Injection {
    pub fn zeros(n: usize) -> Self {
        Self {
            voltage: vec![0.0; n],
            current: vec![0.0; n],
            shutdown: false,
        }
    }

    pub fn channel(&self, channel: Channel) -> &[f64] {
        match channel {
            Channel::Voltage => &self.voltage,
            Channel::Current => &self.current,
        }
    }

    fn channel_mut(&mut self, channel: Channel) -> &mut Vec<f64> {
        match channel {
            Channel::Voltage => &mut self.voltage,
            Channel::Current => &mut self.current,
        }
    }

    /// Accumulates another injection; overlapping attacks sum.
    pub fn add(&mut self, other: &Injection) {
        self.voltage
            .iter_mut()
            .zip(&other.voltage)
            .for_each(|(a, b)| *a += b);
        self.current
            .iter_mut()
            .zip(&other.current)
            .for_each(|(a, b)| *a += b);
        self.shutdown |= other.shutdown;
    }
}

pub fn injection(t: f64, spec: &AttackSpec, w: &AccessMatrix) -> Result<Injection, AttackError> {
    let n = w.n_agents();
    let mut out = Injection::zeros(n);
    if !(t >= spec.start && t < spec.end) {
        return Ok(out);
    }
    match spec.kind {
        AttackKind::Drift => {
            let magnitude = (spec.ramp_rate * (t - spec.start)).min(DRIFT_CAP_FACTOR * spec.threshold);
            let value = spec.polarity.sign() * magnitude;
            let ch = out.channel_mut(spec.channel);
            for &k in &spec.target_agents {
                ch[k] = value;
            }
        }
        AttackKind::LoadShare => {
            for &k in &spec.target_agents {
                out.current[k] = spec.step;
            }
        }
        AttackKind::Stealth => {
            let basis = stealth_basis(w);
            let v = basis.first().ok_or(AttackError::NoNullSpace)?;
            let ch = out.channel_mut(spec.channel);
            for (c, b) in ch.iter_mut().zip(v) {
                *c = spec.stealth_coefficient * b;
            }
        }
        AttackKind::Shutdown => out.shutdown = t >= spec.t_vulnerable,
    }
    Ok(out)
}

/// Per-sample stealth test: every component under the threshold and, for
/// stealth attacks, `W x_attack` numerically zero.
pub fn is_stealthy(x_attack: &[f64], spec: &AttackSpec, w: &AccessMatrix) -> Result<bool, AttackError> {
    if x_attack.len() != w.n_agents() {
        return Err(AttackError::SizeMismatch {
            expected: w.n_agents(),
            got: x_attack.len(),
        });
    }
    let below = x_attack.iter().all(|x| x.abs() < spec.threshold);
    let hidden =
        spec.kind != AttackKind::Stealth || linalg::inf_norm(&w.apply(x_attack)) < STEALTH_RESIDUAL_TOLERANCE;
    Ok(below && hidden)
}
