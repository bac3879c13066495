//! Reduced-order model of the dual-zone MVDC distribution system.
//!
//! Each PGM is a droop-controlled voltage source whose output current follows
//! a first-order lag toward the droop-consistent value; each zone bus is a
//! capacitance loaded by a constant-resistance PCM; the buses are joined by
//! cross-tie conductances; the propulsion module (PMM) is a constant
//! resistance fed through breakers from one or more buses. Integration is
//! explicit Euler at a fixed step.

use thiserror::Error;

use crate::linalg::{self, Matrix};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PlantError {
    #[error("time step must be positive and finite, got {0}")]
    InvalidStep(f64),
    #[error("non-finite plant state at t = {t} s (bus {bus}: V = {voltage}, I = {current})")]
    NonFiniteState {
        t: f64,
        bus: usize,
        voltage: f64,
        current: f64,
    },
    #[error("unknown switch `{0}`")]
    UnknownSwitch(String),
    #[error("invalid plant parameter `{name}`: {reason}")]
    InvalidParameter { name: &'static str, reason: String },
    #[error("expected {expected} local references, got {got}")]
    SizeMismatch { expected: usize, got: usize },
}

/// A breaker feeding the PMM from one bus.
#[derive(Debug, Clone, PartialEq)]
pub struct Switch {
    pub id: String,
    pub bus: usize,
    pub closed: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantParams {
    /// Nominal DC distribution voltage (V).
    pub v_nominal: f64,
    /// Rating of each PGM (W).
    pub pgm_rating: f64,
    /// Rating of each PCM (W); PCMs are sized to draw this at `v_nominal`.
    pub pcm_rating: f64,
    /// Rating of each of the two PMM sub-units (W).
    pub pmm_subunit_rating: f64,
    /// Droop coefficient in per-unit (volts drop / v_nominal per unit current).
    pub droop: f64,
    /// Capacitance of each zone bus (F).
    pub bus_capacitance: f64,
    /// Symmetric bus-to-bus conductances (S); diagonal ignored.
    pub line_conductance: Matrix,
    /// Time constant of the PGM current lag (s).
    pub filter_time_constant: f64,
    /// PMM feeders and their initial positions.
    pub switches: Vec<Switch>,
}

impl PlantParams {
    /// The two-zone layout: PGM 1 on bus 0, PGM 2 on bus 1, a 50 S cross-tie
    /// and the PMM fed from the port side (bus 1) with the starboard feeder
    /// (bus 0) open.
    pub fn dual_zone() -> Self {
        Self {
            v_nominal: 12_000.0,
            pgm_rating: 36e6,
            pcm_rating: 10e6,
            pmm_subunit_rating: 18e6,
            droop: 0.05,
            bus_capacitance: 1.5,
            line_conductance: Matrix::from_rows(&[vec![0.0, 50.0], vec![50.0, 0.0]]).expect("static matrix"),
            filter_time_constant: 0.05,
            switches: vec![
                Switch {
                    id: "pmm_starboard".into(),
                    bus: 0,
                    closed: false,
                },
                Switch {
                    id: "pmm_port".into(),
                    bus: 1,
                    closed: true,
                },
            ],
        }
    }

    pub fn n_buses(&self) -> usize {
        self.line_conductance.rows()
    }

    /// Rated current of one PGM (A).
    pub fn rated_current(&self) -> f64 {
        self.pgm_rating / self.v_nominal
    }

    /// Equivalent droop resistance `r_d * V_nom / I_rated` (ohm).
    pub fn droop_resistance(&self) -> f64 {
        self.droop * self.v_nominal / self.rated_current()
    }

    pub fn pcm_resistance(&self) -> f64 {
        self.v_nominal * self.v_nominal / self.pcm_rating
    }

    /// Resistance of the whole PMM (both sub-units in parallel).
    pub fn pmm_resistance(&self) -> f64 {
        self.v_nominal * self.v_nominal / (2.0 * self.pmm_subunit_rating)
    }

    pub fn switch_index(&self, id: &str) -> Option<usize> {
        self.switches.iter().position(|s| s.id == id)
    }

    pub fn validate(&self) -> Result<(), PlantError> {
        let positive = [
            ("v_nominal", self.v_nominal),
            ("pgm_rating", self.pgm_rating),
            ("pcm_rating", self.pcm_rating),
            ("pmm_subunit_rating", self.pmm_subunit_rating),
            ("droop", self.droop),
            ("bus_capacitance", self.bus_capacitance),
            ("filter_time_constant", self.filter_time_constant),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(PlantError::InvalidParameter {
                    name,
                    reason: format!("must be positive and finite, got {v}"),
                });
            }
        }
        let g = &self.line_conductance;
        let n = g.rows();
        if n == 0 || g.cols() != n {
            return Err(PlantError::InvalidParameter {
                name: "line_conductance",
                reason: "must be a non-empty square matrix".into(),
            });
        }
        for i in 0..n {
            for j in 0..n {
                if i != j && (!(g[(i, j)] >= 0.0) || g[(i, j)] != g[(j, i)]) {
                    return Err(PlantError::InvalidParameter {
                        name: "line_conductance",
                        reason: format!("entry ({i}, {j}) must be symmetric and non-negative"),
                    });
                }
            }
        }
        for s in &self.switches {
            if s.bus >= n {
                return Err(PlantError::InvalidParameter {
                    name: "switches",
                    reason: format!("switch `{}` references bus {} of {n}", s.id, s.bus),
                });
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PlantState {
    /// Bus voltages (V).
    pub v: Vec<f64>,
    /// PGM output currents (A).
    pub i: Vec<f64>,
    /// PGM currents in per-unit of rating.
    pub i_pu: Vec<f64>,
    /// Power delivered to the PMM (W).
    pub pmm_power: f64,
    /// Live breaker positions, parallel to `PlantParams::switches`.
    pub breakers: Vec<bool>,
    pub t: f64,
}

/// Terminal voltage of a droop-controlled PGM.
pub fn pgm_terminal_voltage(v_ref_local: f64, i_k: f64, params: &PlantParams) -> f64 {
    v_ref_local - params.droop * params.v_nominal * (i_k / params.rated_current())
}

/// Output current at which the droop terminal voltage equals the bus
/// voltage. The rectifier only conducts forward, so it is floored at zero.
pub fn droop_current(v_ref_local: f64, v_bus: f64, params: &PlantParams) -> f64 {
    let i = (v_ref_local - v_bus) / params.droop_resistance();
    // Written out rather than `max` so a NaN reference propagates.
    if i < 0.0 {
        0.0
    } else {
        i
    }
}

impl PlantState {
    /// Cold state at nominal voltage with zero source current.
    pub fn at_nominal(params: &PlantParams) -> Self {
        let n = params.n_buses();
        let mut s = Self {
            v: vec![params.v_nominal; n],
            i: vec![0.0; n],
            i_pu: vec![0.0; n],
            pmm_power: 0.0,
            breakers: params.switches.iter().map(|s| s.closed).collect(),
            t: 0.0,
        };
        s.refresh(params);
        s
    }

    /// DC operating point for fixed local references with the current
    /// breaker positions: the steady state of [`step_plant`].
    pub fn equilibrium(params: &PlantParams, refs: &[f64]) -> Result<Self, PlantError> {
        let n = params.n_buses();
        if refs.len() != n {
            return Err(PlantError::SizeMismatch {
                expected: n,
                got: refs.len(),
            });
        }
        let breakers: Vec<bool> = params.switches.iter().map(|s| s.closed).collect();
        let g_load = load_conductances(params, &breakers);
        let g_d = 1.0 / params.droop_resistance();
        let mut a = Matrix::zeros(n, n);
        let mut b = vec![0.0; n];
        for k in 0..n {
            let mut diag = g_d + g_load[k];
            for j in 0..n {
                if j != k {
                    let g = params.line_conductance[(k, j)];
                    diag += g;
                    a[(k, j)] = -g;
                }
            }
            a[(k, k)] = diag;
            b[k] = g_d * refs[k];
        }
        let v = linalg::solve(&a, &b).ok_or(PlantError::InvalidParameter {
            name: "line_conductance",
            reason: "network admittance matrix is singular".into(),
        })?;
        let i = v
            .iter()
            .zip(refs)
            .map(|(&vk, &r)| droop_current(r, vk, params))
            .collect();
        let mut s = Self {
            v,
            i,
            i_pu: vec![0.0; n],
            pmm_power: 0.0,
            breakers,
            t: 0.0,
        };
        s.refresh(params);
        Ok(s)
    }

    fn refresh(&mut self, params: &PlantParams) {
        let rated = params.rated_current();
        self.i_pu = self.i.iter().map(|i| i / rated).collect();
        self.pmm_power = pmm_power(params, &self.breakers, &self.v);
    }

    /// Power drawn by the PCMs and PMM plus cross-tie losses (W).
    pub fn load_power(&self, params: &PlantParams) -> f64 {
        let g_load = load_conductances(params, &self.breakers);
        let n = self.v.len();
        let mut p: f64 = (0..n).map(|k| g_load[k] * self.v[k] * self.v[k]).sum();
        for k in 0..n {
            for j in k + 1..n {
                let dv = self.v[k] - self.v[j];
                p += params.line_conductance[(k, j)] * dv * dv;
            }
        }
        p
    }

    /// Power supplied by the PGMs (W).
    pub fn source_power(&self) -> f64 {
        self.v.iter().zip(&self.i).map(|(v, i)| v * i).sum()
    }
}

fn closed_feeds(breakers: &[bool]) -> usize {
    breakers.iter().filter(|&&c| c).count()
}

/// Per-bus load conductance: the PCM plus this bus's share of the PMM.
fn load_conductances(params: &PlantParams, breakers: &[bool]) -> Vec<f64> {
    let mut g = vec![1.0 / params.pcm_resistance(); params.n_buses()];
    let m = closed_feeds(breakers);
    if m > 0 {
        let share = 1.0 / (params.pmm_resistance() * m as f64);
        for (s, _) in params.switches.iter().zip(breakers).filter(|(_, &c)| c) {
            g[s.bus] += share;
        }
    }
    g
}

fn pmm_power(params: &PlantParams, breakers: &[bool], v: &[f64]) -> f64 {
    let m = closed_feeds(breakers);
    if m == 0 {
        return 0.0;
    }
    let r = params.pmm_resistance() * m as f64;
    params
        .switches
        .iter()
        .zip(breakers)
        .filter(|(_, &c)| c)
        .map(|(s, _)| v[s.bus] * v[s.bus] / r)
        .sum()
}

/// Advances the plant by one explicit Euler step under the given local
/// voltage references.
pub fn step_plant(
    state: &PlantState,
    local_refs: &[f64],
    params: &PlantParams,
    dt: f64,
) -> Result<PlantState, PlantError> {
    if !(dt > 0.0 && dt.is_finite()) {
        return Err(PlantError::InvalidStep(dt));
    }
    let n = state.v.len();
    if local_refs.len() != n {
        return Err(PlantError::SizeMismatch {
            expected: n,
            got: local_refs.len(),
        });
    }
    let g_load = load_conductances(params, &state.breakers);
    let tau = params.filter_time_constant;
    let c = params.bus_capacitance;
    let mut next = state.clone();
    for k in 0..n {
        let vk = state.v[k];
        let tie: f64 = (0..n)
            .filter(|&j| j != k)
            .map(|j| params.line_conductance[(k, j)] * (vk - state.v[j]))
            .sum();
        let dv = (state.i[k] - g_load[k] * vk - tie) / c;
        let di = (droop_current(local_refs[k], vk, params) - state.i[k]) / tau;
        next.v[k] = vk + dt * dv;
        next.i[k] = state.i[k] + dt * di;
    }
    next.t = state.t + dt;
    next.refresh(params);
    for k in 0..n {
        if !next.v[k].is_finite() || !next.i[k].is_finite() {
            return Err(PlantError::NonFiniteState {
                t: next.t,
                bus: k,
                voltage: next.v[k],
                current: next.i[k],
            });
        }
    }
    Ok(next)
}

/// Sets a breaker position. The PMM power reflects the new topology
/// immediately since the PMM holds no stored energy.
pub fn apply_breaker(
    state: &PlantState,
    switch_id: &str,
    closed: bool,
    params: &PlantParams,
) -> Result<PlantState, PlantError> {
    let idx = params
        .switch_index(switch_id)
        .ok_or_else(|| PlantError::UnknownSwitch(switch_id.to_string()))?;
    let mut next = state.clone();
    next.breakers[idx] = closed;
    next.refresh(params);
    Ok(next)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn droop_terminal_voltage() {
        let p = PlantParams::dual_zone();
        assert_eq!(pgm_terminal_voltage(12_000.0, 0.0, &p), 12_000.0);
        let v = pgm_terminal_voltage(12_000.0, p.rated_current(), &p);
        assert!((v - 11_400.0).abs() < 1e-9);
        assert_eq!(pgm_terminal_voltage(12_100.0, 0.0, &p), 12_100.0);
    }

    #[test]
    fn rated_loads_draw_rated_power_at_nominal() {
        let p = PlantParams::dual_zone();
        let v = p.v_nominal;
        assert!((v * v / p.pcm_resistance() - 10e6).abs() < 1e-6);
        assert!((v * v / p.pmm_resistance() - 36e6).abs() < 1e-6);
    }

    #[test]
    fn equilibrium_is_a_fixed_point() {
        let p = PlantParams::dual_zone();
        let eq = PlantState::equilibrium(&p, &[12_000.0, 12_000.0]).unwrap();
        let next = step_plant(&eq, &[12_000.0, 12_000.0], &p, 1e-3).unwrap();
        for k in 0..2 {
            assert!(((next.v[k] - eq.v[k]) / eq.v[k]).abs() < 1e-9);
            assert!(((next.i[k] - eq.i[k]) / eq.i[k]).abs() < 1e-9);
        }
    }

    #[test]
    fn equilibrium_balances_power() {
        let p = PlantParams::dual_zone();
        let eq = PlantState::equilibrium(&p, &[12_450.0, 12_480.0]).unwrap();
        let rel = (eq.source_power() - eq.load_power(&p)).abs() / eq.load_power(&p);
        assert!(rel < 1e-12, "{rel}");
    }

    #[test]
    fn unloaded_buses_relax_monotonically_to_reference() {
        let mut p = PlantParams::dual_zone();
        p.pcm_rating = 1e-9; // effectively no load
        for s in &mut p.switches {
            s.closed = false;
        }
        let mut s = PlantState::at_nominal(&p);
        s.v = vec![11_000.0, 11_000.0];
        let refs = [12_000.0, 12_000.0];
        let mut prev = s.v.clone();
        for _ in 0..3000 {
            s = step_plant(&s, &refs, &p, 1e-3).unwrap();
            for (k, (&v, &before)) in s.v.iter().zip(&prev).enumerate() {
                assert!(v >= before && v <= 12_000.0, "bus {k}: {v}");
            }
            prev = s.v.clone();
        }
        let prev_gap = 12_000.0 - prev[0];
        assert!(prev_gap < 1.0);
    }

    #[test]
    fn zero_step_is_rejected() {
        let p = PlantParams::dual_zone();
        let s = PlantState::at_nominal(&p);
        assert_eq!(
            step_plant(&s, &[12_000.0; 2], &p, 0.0).unwrap_err(),
            PlantError::InvalidStep(0.0)
        );
    }

    #[test]
    fn nan_reference_is_reported() {
        let p = PlantParams::dual_zone();
        let s = PlantState::at_nominal(&p);
        let err = step_plant(&s, &[f64::NAN, 12_000.0], &p, 1e-3).unwrap_err();
        assert!(matches!(err, PlantError::NonFiniteState { bus: 0, .. }));
    }

    #[test]
    fn breaker_operations() {
        let p = PlantParams::dual_zone();
        let s = PlantState::equilibrium(&p, &[12_000.0; 2]).unwrap();
        assert!(s.pmm_power > 0.0);
        let same = apply_breaker(&s, "pmm_port", true, &p).unwrap();
        assert_eq!(same, s);
        let open = apply_breaker(&s, "pmm_port", false, &p).unwrap();
        assert_eq!(open.pmm_power, 0.0);
        assert_eq!(
            apply_breaker(&s, "bogus", true, &p).unwrap_err(),
            PlantError::UnknownSwitch("bogus".into())
        );
    }

    #[test]
    fn isolated_pmm_power_collapses_within_half_a_second() {
        let p = PlantParams::dual_zone();
        let refs = [12_480.0, 12_450.0];
        let mut s = PlantState::equilibrium(&p, &refs).unwrap();
        let before = s.pmm_power;
        s = apply_breaker(&s, "pmm_port", false, &p).unwrap();
        let mut last = s.pmm_power;
        for _ in 0..500 {
            s = step_plant(&s, &refs, &p, 1e-3).unwrap();
            assert!(s.pmm_power <= last);
            last = s.pmm_power;
        }
        assert!(last < 0.01 * before && last < 1.0);
    }
}
