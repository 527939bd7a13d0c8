//! Multi-objective backend selection with hysteresis.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::padding::Layer;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Qpu,
    Tn,
    Cpu,
    Gpu,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Backend {
    pub id: u32,
    pub kind: BackendKind,
    /// Per-op error rate for one-qubit gates.
    pub err_1q: f64,
    /// Per-op error rate for two-qubit gates.
    pub err_2q: f64,
    /// Multiplier on nominal op service time.
    pub service_scale: f64,
}

impl Backend {
    pub fn validate(&self) -> Result<()> {
        let rate = |e: f64| (0.0..=1.0).contains(&e);
        if !rate(self.err_1q)
            || !rate(self.err_2q)
            || !(self.service_scale > 0.0 && self.service_scale.is_finite())
        {
            return Err(Error::Config(format!("invalid backend {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoutingPolicy {
    pub alpha: f64,
    pub omega_leak: f64,
    pub gamma: f64,
    /// Budget margin as a fraction of the budget threshold.
    pub tau_frac: f64,
    pub m: usize,
    pub delta: f64,
    /// Queue depth at which the queue penalty saturates.
    pub depth_ref: f64,
    /// Intervals during which no further switch is allowed.
    pub cooldown: u32,
}

impl Default for RoutingPolicy {
    fn default() -> Self {
        Self {
            alpha: 1.0,
            omega_leak: 1.0,
            gamma: 0.5,
            tau_frac: 0.1,
            m: 3,
            delta: 0.1,
            depth_ref: 8.0,
            cooldown: 10,
        }
    }
}

impl RoutingPolicy {
    pub fn validate(&self) -> Result<()> {
        let w = [self.alpha, self.omega_leak, self.gamma, self.tau_frac];
        if w.iter().any(|x| !(x.is_finite() && *x >= 0.0))
            || self.m == 0
            || !(self.delta > 0.0 && self.delta < 1.0)
            || !(self.depth_ref > 0.0 && self.depth_ref.is_finite())
        {
            return Err(Error::Config(format!("invalid routing policy {self:?}")));
        }
        Ok(())
    }

    pub fn tau(&self, delta_budget: f64) -> f64 {
        self.tau_frac * delta_budget
    }
}

/// Gate counts of one segment.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq)]
pub struct OpProfile {
    pub one_qubit: u64,
    pub two_qubit: u64,
}

impl OpProfile {
    pub fn of_layers(layers: &[Layer]) -> Self {
        let mut p = Self::default();
        for l in layers {
            let two = l.two_qubit_ops() as u64;
            p.two_qubit += two;
            p.one_qubit += l.ops.len() as u64 - two;
        }
        p
    }
}

/// What the router knows about a backend right now.
#[derive(Clone, Copy, Debug, Default, PartialEq)]
pub struct BackendState {
    /// Latest leakage estimate seen on this backend, nats.
    pub leak: f64,
    pub queue_depth: f64,
}

pub fn fidelity(b: &Backend, p: &OpProfile) -> f64 {
    (1.0 - b.err_1q).powf(p.one_qubit as f64) * (1.0 - b.err_2q).powf(p.two_qubit as f64)
}

/// `alpha (1 - Fid) + omega LeakRisk + gamma QueuePenalty`.
pub fn cost(
    b: &Backend,
    p: &OpProfile,
    st: &BackendState,
    policy: &RoutingPolicy,
    delta_kill: f64,
) -> f64 {
    let leak_risk = (st.leak / delta_kill).clamp(0.0, 1.0);
    let queue = (st.queue_depth / policy.depth_ref).clamp(0.0, 1.0);
    policy.alpha * (1.0 - fidelity(b, p)) + policy.omega_leak * leak_risk + policy.gamma * queue
}

/// Index of the cheapest backend; ties go to the lowest id.
pub fn select_backend(
    p: &OpProfile,
    backends: &[Backend],
    states: &[BackendState],
    policy: &RoutingPolicy,
    delta_kill: f64,
) -> Result<usize> {
    argmin(p, backends, states, policy, delta_kill, None)
        .map(|(i, _)| i)
        .ok_or_else(|| Error::Config("no backends registered".into()))
}

fn argmin(
    p: &OpProfile,
    backends: &[Backend],
    states: &[BackendState],
    policy: &RoutingPolicy,
    delta_kill: f64,
    skip: Option<usize>,
) -> Option<(usize, f64)> {
    let mut best: Option<(usize, f64)> = None;
    for (i, (b, s)) in backends.iter().zip(states).enumerate() {
        if Some(i) == skip {
            continue;
        }
        let c = cost(b, p, s, policy, delta_kill);
        let better = match best {
            None => true,
            Some((j, bc)) => c < bc || (c == bc && b.id < backends[j].id),
        };
        if better {
            best = Some((i, c));
        }
    }
    best
}

/// Hysteresis rule. `recent` holds the latest estimates, newest last.
pub fn should_switch(
    recent: &[f64],
    current_cost: f64,
    candidate_cost: f64,
    delta_budget: f64,
    policy: &RoutingPolicy,
) -> bool {
    let bar = delta_budget - policy.tau(delta_budget);
    let pressured =
        recent.len() >= policy.m && recent[recent.len() - policy.m..].iter().all(|&d| d >= bar);
    let cheaper =
        candidate_cost < current_cost && candidate_cost <= (1.0 - policy.delta) * current_cost;
    pressured || cheaper
}

/// Per-episode routing state.
#[derive(Clone, Debug)]
pub struct Router {
    policy: RoutingPolicy,
    recent: Vec<f64>,
    current: Option<usize>,
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RouteDecision {
    pub backend: usize,
    pub switched: bool,
    pub cost: f64,
}

impl Router {
    pub fn new(policy: RoutingPolicy) -> Result<Self> {
        policy.validate()?;
        Ok(Self {
            policy,
            recent: Vec::new(),
            current: None,
        })
    }

    pub fn policy(&self) -> &RoutingPolicy {
        &self.policy
    }

    pub fn current(&self) -> Option<usize> {
        self.current
    }

    /// Record one interval's estimate.
    pub fn observe(&mut self, delta_hat: f64) {
        self.recent.push(delta_hat);
        if self.recent.len() > self.policy.m {
            self.recent.remove(0);
        }
    }

    /// Route the next segment. The first call picks the argmin; later calls
    /// move only when the hysteresis rule fires and `may_switch` is set.
    pub fn route(
        &mut self,
        p: &OpProfile,
        backends: &[Backend],
        states: &[BackendState],
        delta_budget: f64,
        delta_kill: f64,
        may_switch: bool,
    ) -> Result<RouteDecision> {
        if backends.is_empty() || backends.len() != states.len() {
            return Err(Error::Config(
                "backend list and state list must be non-empty and aligned".into(),
            ));
        }
        let Some(cur) = self.current.filter(|&c| c < backends.len()) else {
            let i = select_backend(p, backends, states, &self.policy, delta_kill)?;
            self.current = Some(i);
            return Ok(RouteDecision {
                backend: i,
                switched: false,
                cost: cost(&backends[i], p, &states[i], &self.policy, delta_kill),
            });
        };
        let current_cost = cost(&backends[cur], p, &states[cur], &self.policy, delta_kill);
        if may_switch {
            if let Some((alt, alt_cost)) =
                argmin(p, backends, states, &self.policy, delta_kill, Some(cur))
            {
                if should_switch(
                    &self.recent,
                    current_cost,
                    alt_cost,
                    delta_budget,
                    &self.policy,
                ) {
                    self.current = Some(alt);
                    self.recent.clear();
                    return Ok(RouteDecision {
                        backend: alt,
                        switched: true,
                        cost: alt_cost,
                    });
                }
            }
        }
        Ok(RouteDecision {
            backend: cur,
            switched: false,
            cost: current_cost,
        })
    }
}
