//! Advantage bound over the admitted intervals of a run.
//!
//! `sum_t sqrt(2 budget_t) + sum_t sqrt(2) (eps_est_t + eps_sync)`.
//!
//! Sums are taken over runs of equal consecutive terms as `len * term`, so a
//! constant trace reproduces [`uniform_bound`] bit for bit and every prefix
//! of a trace bounds no higher than the full trace.

use std::f64::consts::SQRT_2;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundInputs {
    /// Budget threshold per admitted interval, nats.
    pub budgets: Vec<f64>,
    /// Estimator calibration error per admitted interval, nats.
    pub eps_est: Vec<f64>,
    pub eps_sync: f64,
}

impl BoundInputs {
    /// Constant budget and estimation error over `t` intervals.
    pub fn uniform(t: usize, budget: f64, eps_est: f64, eps_sync: f64) -> Self {
        Self {
            budgets: vec![budget; t],
            eps_est: vec![eps_est; t],
            eps_sync,
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.budgets.len() != self.eps_est.len() {
            return Err(Error::Input(
                "budget and eps_est traces differ in length".into(),
            ));
        }
        let ok = |x: &f64| x.is_finite() && *x >= 0.0;
        if !self.budgets.iter().all(ok) || !self.eps_est.iter().all(ok) || !ok(&self.eps_sync) {
            return Err(Error::Input(
                "bound inputs must be finite and non-negative".into(),
            ));
        }
        Ok(())
    }

    pub fn prefix(&self, len: usize) -> Self {
        Self {
            budgets: self.budgets[..len].to_vec(),
            eps_est: self.eps_est[..len].to_vec(),
            eps_sync: self.eps_sync,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Bound {
    pub total: f64,
    pub budget_term: f64,
    pub estimation_term: f64,
    pub intervals: usize,
    /// The bound exceeds 1 and says nothing about advantage.
    pub vacuous: bool,
}

impl Bound {
    fn from_terms(budget_term: f64, estimation_term: f64, intervals: usize) -> Self {
        let total = budget_term + estimation_term;
        Self {
            total,
            budget_term,
            estimation_term,
            intervals,
            vacuous: total > 1.0,
        }
    }
}

fn budget_term(b: f64) -> f64 {
    (2.0 * b).sqrt()
}

fn estimation_term(e: f64, s: f64) -> f64 {
    SQRT_2 * (e + s)
}

fn grouped_sum(terms: impl Iterator<Item = f64>) -> f64 {
    let mut total = 0.0;
    let mut current: Option<(f64, usize)> = None;
    for t in terms {
        match current {
            Some((v, ref mut len)) if v.to_bits() == t.to_bits() => *len += 1,
            _ => {
                if let Some((v, len)) = current {
                    total += len as f64 * v;
                }
                current = Some((t, 1));
            }
        }
    }
    if let Some((v, len)) = current {
        total += len as f64 * v;
    }
    total
}

pub fn advantage_bound(bi: &BoundInputs) -> Result<Bound> {
    bi.validate()?;
    let b = grouped_sum(bi.budgets.iter().map(|&x| budget_term(x)));
    let e = grouped_sum(bi.eps_est.iter().map(|&x| estimation_term(x, bi.eps_sync)));
    Ok(Bound::from_terms(b, e, bi.budgets.len()))
}

pub fn uniform_bound(t: usize, delta_budget: f64, eps_bar: f64, eps_sync: f64) -> Result<Bound> {
    let ok = |x: f64| x.is_finite() && x >= 0.0;
    if !(ok(delta_budget) && ok(eps_bar) && ok(eps_sync)) {
        return Err(Error::Input(
            "bound inputs must be finite and non-negative".into(),
        ));
    }
    let n = t as f64;
    let b = if t == 0 {
        0.0
    } else {
        n * budget_term(delta_budget)
    };
    let e = if t == 0 {
        0.0
    } else {
        n * estimation_term(eps_bar, eps_sync)
    };
    Ok(Bound::from_terms(b, e, t))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_trace() {
        let b = advantage_bound(&BoundInputs::default()).unwrap();
        assert_eq!(b.total, 0.0);
        assert!(!b.vacuous);
        assert_eq!(uniform_bound(0, 0.3, 0.1, 0.1).unwrap().total, 0.0);
    }

    #[test]
    fn hundred_intervals_at_two_percent() {
        let b = advantage_bound(&BoundInputs::uniform(100, 0.02, 0.0, 0.0)).unwrap();
        assert!((b.total - 20.0).abs() <= 1e-12);
        assert!(b.vacuous);
    }

    #[test]
    fn scaling_laws() {
        let one = uniform_bound(50, 0.01, 0.0, 0.0).unwrap();
        let two = uniform_bound(100, 0.01, 0.0, 0.0).unwrap();
        assert_eq!(two.total, 2.0 * one.total);
        let quad = uniform_bound(50, 0.04, 0.0, 0.0).unwrap();
        assert!((quad.budget_term - 2.0 * one.budget_term).abs() < 1e-12);
    }

    #[test]
    fn rejects_negative() {
        assert!(advantage_bound(&BoundInputs::uniform(3, -0.1, 0.0, 0.0)).is_err());
        assert!(uniform_bound(3, 0.1, 0.0, -1.0).is_err());
        let ragged = BoundInputs {
            budgets: vec![0.1; 3],
            eps_est: vec![0.0; 2],
            eps_sync: 0.0,
        };
        assert!(advantage_bound(&ragged).is_err());
    }
}
