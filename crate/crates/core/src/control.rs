//! Distributed secondary (power-management) layer.
//!
//! Each agent exchanges `x_k = (V̄_k, I^pu_k)` with its neighbours, forms the
//! cooperative input `u_k = Σ a_kj (x_j - x_k)`, and synthesises its local
//! voltage reference from two PI voltage-improvement terms.

use thiserror::Error;

use crate::comms::CommGraph;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ControlError {
    #[error("expected {expected} agent states, got {got}")]
    SizeMismatch { expected: usize, got: usize },
    #[error("agent index {index} out of range for {n_agents} agents")]
    IndexOutOfRange { index: usize, n_agents: usize },
    #[error("time step must be positive, got {0}")]
    InvalidStep(f64),
}

/// Per-agent secondary-layer state.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AgentState {
    /// Observed voltage `V̄_k = V_k + ∫ u^V_k dτ` (V).
    pub v_bar: f64,
    pub i_pu: f64,
    /// `∫ u^V_k dτ` (V).
    pub integral_u_v: f64,
}

impl AgentState {
    pub fn new(v_k: f64, i_pu: f64) -> Self {
        Self {
            v_bar: v_k,
            i_pu,
            integral_u_v: 0.0,
        }
    }
}

/// Discrete PI with a symmetric output clamp and anti-windup on the integral.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PiController {
    pub kp: f64,
    pub ki: f64,
    /// Accumulated error (error units × s).
    pub integral: f64,
    pub output_limit: f64,
}

impl PiController {
    pub fn new(kp: f64, ki: f64, output_limit: f64) -> Self {
        Self {
            kp,
            ki,
            integral: 0.0,
            output_limit,
        }
    }

    pub fn step(&mut self, error: f64, dt: f64) -> f64 {
        self.integral += error * dt;
        if self.ki > 0.0 {
            let bound = self.output_limit / self.ki;
            self.integral = self.integral.clamp(-bound, bound);
        }
        (self.kp * error + self.ki * self.integral).clamp(-self.output_limit, self.output_limit)
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControlGains {
    pub voltage_kp: f64,
    pub voltage_ki: f64,
    pub voltage_limit: f64,
    pub current_kp: f64,
    pub current_ki: f64,
    pub current_limit: f64,
}

impl Default for ControlGains {
    fn default() -> Self {
        Self {
            voltage_kp: 0.5,
            voltage_ki: 5.0,
            voltage_limit: 600.0,
            current_kp: 200.0,
            current_ki: 500.0,
            current_limit: 600.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SecondaryControlState {
    pub voltage_pi: Vec<PiController>,
    pub current_pi: Vec<PiController>,
    pub v_ref: f64,
    i_ref: f64,
}

impl SecondaryControlState {
    pub fn new(n_agents: usize, v_ref: f64, gains: &ControlGains) -> Self {
        Self {
            voltage_pi: vec![
                PiController::new(gains.voltage_kp, gains.voltage_ki, gains.voltage_limit);
                n_agents
            ],
            current_pi: vec![
                PiController::new(gains.current_kp, gains.current_ki, gains.current_limit);
                n_agents
            ],
            v_ref,
            i_ref: 0.0,
        }
    }

    /// Per-unit current reference; always zero for proportional sharing.
    pub fn i_ref(&self) -> f64 {
        self.i_ref
    }
}

fn check_sizes(k: usize, states: &[AgentState], g: &CommGraph) -> Result<(), ControlError> {
    let n = g.n_agents();
    if states.len() != n {
        return Err(ControlError::SizeMismatch {
            expected: n,
            got: states.len(),
        });
    }
    if k >= n {
        return Err(ControlError::IndexOutOfRange {
            index: k,
            n_agents: n,
        });
    }
    Ok(())
}

/// Neighbour-weighted disagreement `(e^V_k, e^I_k)`.
pub fn consensus_errors(k: usize, states: &[AgentState], g: &CommGraph) -> Result<(f64, f64), ControlError> {
    check_sizes(k, states, g)?;
    let me = states[k];
    let neighbors = g.neighbors(k).expect("index checked");
    Ok(neighbors.iter().fold((0.0, 0.0), |(ev, ei), &j| {
        let a = g.weight(k, j);
        (
            ev + a * (states[j].v_bar - me.v_bar),
            ei + a * (states[j].i_pu - me.i_pu),
        )
    }))
}

/// Cooperative input `u_k = (u^V_k, u^I_k)`; the summed error terms.
pub fn control_input(k: usize, states: &[AgentState], g: &CommGraph) -> Result<(f64, f64), ControlError> {
    consensus_errors(k, states, g)
}

/// Advances agent `k`'s two PI terms and returns `(ΔV1_k, ΔV2_k)`.
///
/// `ΔV1` acts on `V_ref - V̄_k`; `ΔV2` acts on `I_ref - current_input`.
pub fn voltage_corrections(
    k: usize,
    v_bar_k: f64,
    current_input: f64,
    ctrl: &mut SecondaryControlState,
    dt: f64,
) -> Result<(f64, f64), ControlError> {
    if !(dt > 0.0) {
        return Err(ControlError::InvalidStep(dt));
    }
    let n = ctrl.voltage_pi.len();
    if k >= n {
        return Err(ControlError::IndexOutOfRange {
            index: k,
            n_agents: n,
        });
    }
    let dv1 = ctrl.voltage_pi[k].step(ctrl.v_ref - v_bar_k, dt);
    let dv2 = ctrl.current_pi[k].step(ctrl.i_ref - current_input, dt);
    Ok((dv1, dv2))
}

pub fn local_reference(v_ref: f64, dv1: f64, dv2: f64) -> f64 {
    v_ref + dv1 + dv2
}

/// Integrates `u^V_k` into the observer and refreshes `V̄_k` from the
/// measured bus voltage.
pub fn update_observed_voltage(
    agent: AgentState,
    v_k: f64,
    u_v_k: f64,
    dt: f64,
) -> Result<AgentState, ControlError> {
    if !(dt > 0.0) {
        return Err(ControlError::InvalidStep(dt));
    }
    let integral_u_v = agent.integral_u_v + u_v_k * dt;
    Ok(AgentState {
        v_bar: v_k + integral_u_v,
        i_pu: agent.i_pu,
        integral_u_v,
    })
}
