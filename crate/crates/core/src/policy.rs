//! Dual-threshold kill-switch policy and threshold calibration.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::stats::{nearest_rank, sorted_finite};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "UPPERCASE")]
pub enum Decision {
    Continue,
    Warn,
    Abort,
}

impl Decision {
    pub fn code(self) -> u8 {
        match self {
            Decision::Continue => 0,
            Decision::Warn => 1,
            Decision::Abort => 2,
        }
    }

    pub fn from_code(c: u8) -> Option<Self> {
        match c {
            0 => Some(Decision::Continue),
            1 => Some(Decision::Warn),
            2 => Some(Decision::Abort),
            _ => None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Thresholds {
    pub delta_budget: f64,
    pub delta_kill: f64,
}

impl Thresholds {
    pub fn new(delta_budget: f64, delta_kill: f64) -> Result<Self> {
        let th = Self {
            delta_budget,
            delta_kill,
        };
        th.validate()?;
        Ok(th)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.delta_budget > 0.0
            && self.delta_budget < self.delta_kill
            && self.delta_kill.is_finite())
        {
            return Err(Error::Config(format!(
                "thresholds must satisfy 0 < budget < kill, got {self:?}"
            )));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct PolicyConfig {
    pub strike_limit: u32,
    pub q_budget: f64,
    pub q_kill: f64,
    /// Minimum relative gap between the two thresholds.
    pub g_min: f64,
}

impl Default for PolicyConfig {
    fn default() -> Self {
        Self {
            strike_limit: 3,
            q_budget: 0.99,
            q_kill: 0.999,
            g_min: 0.1,
        }
    }
}

impl PolicyConfig {
    pub fn validate(&self) -> Result<()> {
        if self.strike_limit == 0
            || !(0.0 < self.q_budget && self.q_budget < self.q_kill && self.q_kill <= 1.0)
            || !(self.g_min >= 0.0 && self.g_min.is_finite())
        {
            return Err(Error::Config(format!("invalid policy config {self:?}")));
        }
        Ok(())
    }
}

#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct PolicyState {
    pub strikes: u32,
    pub cooldown_remaining: u32,
    pub aborted: bool,
}

impl PolicyState {
    pub fn start_cooldown(&mut self, intervals: u32) {
        self.cooldown_remaining = intervals;
    }

    pub fn tick_cooldown(&mut self) {
        self.cooldown_remaining = self.cooldown_remaining.saturating_sub(1);
    }

    pub fn may_switch(&self) -> bool {
        self.cooldown_remaining == 0
    }
}

/// Stateless part of the decision rule.
pub fn classify(value: f64, th: &Thresholds) -> Decision {
    if value >= th.delta_kill {
        Decision::Abort
    } else if value <= th.delta_budget {
        Decision::Continue
    } else {
        Decision::Warn
    }
}

/// Decide one interval, updating strikes; `strike_limit` consecutive WARNs
/// escalate to ABORT.
pub fn evaluate(
    value: f64,
    th: &Thresholds,
    st: &mut PolicyState,
    strike_limit: u32,
) -> Result<Decision> {
    if st.aborted {
        return Err(Error::Lifecycle("episode already aborted".into()));
    }
    if value.is_nan() {
        return Err(Error::Input("leakage estimate is NaN".into()));
    }
    let d = match classify(value, th) {
        Decision::Continue => {
            st.strikes = 0;
            Decision::Continue
        }
        Decision::Warn => {
            st.strikes += 1;
            if st.strikes >= strike_limit {
                Decision::Abort
            } else {
                Decision::Warn
            }
        }
        Decision::Abort => Decision::Abort,
    };
    if d == Decision::Abort {
        st.aborted = true;
    }
    Ok(d)
}

/// Thresholds from baseline quantiles: budget at `q_budget`, kill at
/// `q_kill` but at least `budget * (1 + g_min)`.
pub fn calibrate(baseline: &[f64], q_budget: f64, q_kill: f64, g_min: f64) -> Result<Thresholds> {
    if baseline.is_empty() {
        return Err(Error::Calibration("empty baseline".into()));
    }
    if !(0.0 < q_budget && q_budget < q_kill && q_kill <= 1.0) {
        return Err(Error::Calibration(format!(
            "need 0 < q_budget < q_kill <= 1, got {q_budget} and {q_kill}"
        )));
    }
    if !(g_min >= 0.0 && g_min.is_finite()) {
        return Err(Error::Calibration(format!("invalid minimum gap {g_min}")));
    }
    let sorted = sorted_finite(baseline)?;
    if sorted[0] == sorted[sorted.len() - 1] {
        return Err(Error::Calibration(
            "degenerate baseline: all samples equal".into(),
        ));
    }
    let budget = nearest_rank(&sorted, q_budget);
    let kill = nearest_rank(&sorted, q_kill).max(budget * (1.0 + g_min));
    Thresholds::new(budget, kill).map_err(|e| Error::Calibration(e.to_string()))
}

/// Result of mapping thresholds onto another baseline.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Transferred {
    pub thresholds: Thresholds,
    /// Set when a threshold lay outside the source baseline's range.
    pub extrapolated: bool,
}

/// Linear interpolation between order statistics at fractional position
/// `r` in `[0, n-1]`.
fn value_at(sorted: &[f64], r: f64) -> f64 {
    let i = r.floor() as usize;
    if i + 1 >= sorted.len() {
        return sorted[sorted.len() - 1];
    }
    let f = r - i as f64;
    if f == 0.0 {
        sorted[i]
    } else {
        sorted[i] + f * (sorted[i + 1] - sorted[i])
    }
}

/// Fractional rank of an in-range `x`, as a quantile level in `[0, 1]`.
fn level_of(sorted: &[f64], x: f64) -> f64 {
    let n = sorted.len();
    if n == 1 {
        return 0.5;
    }
    // First index with sorted[j] >= x.
    let j = sorted.partition_point(|&v| v < x);
    let r = if sorted[j] == x || j == 0 {
        j as f64
    } else {
        let (lo, hi) = (sorted[j - 1], sorted[j]);
        (j - 1) as f64 + (x - lo) / (hi - lo)
    };
    r / (n - 1) as f64
}

/// Map one value from the `from` baseline onto the `to` baseline by
/// matching quantile levels, plus whether `x` lay outside `from`'s range.
/// Values outside `from`'s range are extrapolated linearly from the nearer
/// end, with slope equal to the ratio of the two ranges.
pub fn align(x: f64, from: &[f64], to: &[f64]) -> (f64, bool) {
    let (lo1, hi1) = (from[0], from[from.len() - 1]);
    let (lo2, hi2) = (to[0], to[to.len() - 1]);
    let slope = if hi1 > lo1 {
        (hi2 - lo2) / (hi1 - lo1)
    } else {
        1.0
    };
    if x > hi1 {
        return (hi2 + (x - hi1) * slope, true);
    }
    if x < lo1 {
        return (lo2 - (lo1 - x) * slope, true);
    }
    let level = level_of(from, x);
    let r = level * (to.len() - 1) as f64;
    (value_at(to, r), false)
}

/// Quantile-alignment transfer of Tier I thresholds to a new baseline.
pub fn transfer(th1: &Thresholds, base1: &[f64], base2: &[f64]) -> Result<Transferred> {
    let s1 = sorted_finite(base1)?;
    let s2 = sorted_finite(base2)?;
    for (name, s) in [("source", &s1), ("target", &s2)] {
        if s.len() < 2 || s[0] == s[s.len() - 1] {
            return Err(Error::Calibration(format!("degenerate {name} baseline")));
        }
    }
    let (budget, c1) = align(th1.delta_budget, &s1, &s2);
    let (kill, c2) = align(th1.delta_kill, &s1, &s2);
    let thresholds = Thresholds::new(budget, kill)
        .map_err(|e| Error::Calibration(format!("transferred thresholds collapsed: {e}")))?;
    Ok(Transferred {
        thresholds,
        extrapolated: c1 || c2,
    })
}

/// Replay the decision rule over a frozen trace of estimates, stopping at
/// the first ABORT. Returns the decisions actually issued.
pub fn replay(values: &[f64], th: &Thresholds, strike_limit: u32) -> Result<Vec<Decision>> {
    let mut st = PolicyState::default();
    let mut out = Vec::with_capacity(values.len());
    for &v in values {
        let d = evaluate(v.min(th.delta_kill), th, &mut st, strike_limit)?;
        out.push(d);
        if d == Decision::Abort {
            break;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn th() -> Thresholds {
        Thresholds::new(1.0, 2.0).unwrap()
    }

    #[test]
    fn boundary_values() {
        let mut st = PolicyState::default();
        assert_eq!(
            evaluate(1.0, &th(), &mut st, 3).unwrap(),
            Decision::Continue
        );
        assert_eq!(evaluate(2.0, &th(), &mut st, 3).unwrap(), Decision::Abort);
        assert!(matches!(
            evaluate(0.0, &th(), &mut st, 3),
            Err(Error::Lifecycle(_))
        ));
    }

    /// Enumerate every length-4 sequence over {continue, warn, kill} levels
    /// and compare against a direct restatement of the strike rule.
    #[test]
    fn strike_machine_matches_enumeration() {
        let levels = [0.5, 1.5, 2.5];
        for code in 0..81u32 {
            let seq: Vec<f64> = (0..4)
                .map(|i| levels[(code / 3u32.pow(i) % 3) as usize])
                .collect();
            let got = replay(&seq, &th(), 3).unwrap();
            let mut expect = Vec::new();
            let mut run = 0;
            for &v in &seq {
                let d = if v >= 2.0 {
                    Decision::Abort
                } else if v <= 1.0 {
                    run = 0;
                    Decision::Continue
                } else {
                    run += 1;
                    if run == 3 {
                        Decision::Abort
                    } else {
                        Decision::Warn
                    }
                };
                expect.push(d);
                if d == Decision::Abort {
                    break;
                }
            }
            assert_eq!(got, expect, "{seq:?}");
        }
        let three = replay(&[1.5, 1.5, 1.5], &th(), 3).unwrap();
        assert_eq!(three, vec![Decision::Warn, Decision::Warn, Decision::Abort]);
    }

    #[test]
    fn calibrate_one_to_hundred() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        let t = calibrate(&v, 0.99, 0.999, 0.01).unwrap();
        assert_eq!((t.delta_budget, t.delta_kill), (99.0, 100.0));
        let gapped = calibrate(&v, 0.99, 0.999, 0.1).unwrap();
        assert!((gapped.delta_kill - 108.9).abs() < 1e-9);
    }

    #[test]
    fn calibrate_errors() {
        let v: Vec<f64> = (1..=100).map(f64::from).collect();
        assert!(calibrate(&v, 0.999, 0.99, 0.1).is_err());
        assert!(calibrate(&v, 0.99, 0.99, 0.1).is_err());
        assert!(calibrate(&[3.0; 2000], 0.99, 0.999, 0.1).is_err());
        assert!(calibrate(&[], 0.99, 0.999, 0.1).is_err());
    }

    #[test]
    fn transfer_extrapolates_out_of_range() {
        let b1: Vec<f64> = (1..=10).map(f64::from).collect();
        let b2: Vec<f64> = (1..=10).map(|x| f64::from(x) * 3.0).collect();
        let t = transfer(&Thresholds::new(5.0, 50.0).unwrap(), &b1, &b2).unwrap();
        assert!(t.extrapolated);
        assert_eq!(t.thresholds.delta_kill, 150.0);
        assert_eq!(t.thresholds.delta_budget, 15.0);
        let both_above = transfer(&Thresholds::new(12.0, 13.0).unwrap(), &b1, &b2).unwrap();
        assert_eq!(both_above.thresholds, Thresholds::new(36.0, 39.0).unwrap());
        let shifted: Vec<f64> = b1.iter().map(|x| x + 2.0).collect();
        let below = align(0.5, &b1, &shifted);
        assert_eq!(below, (2.5, true));
    }

    proptest! {
        #[test]
        fn decisions_monotone_in_value(a in 0.0f64..3.0, b in 0.0f64..3.0, strikes in 0u32..3) {
            let (lo, hi) = if a <= b { (a, b) } else { (b, a) };
            let mut s1 = PolicyState { strikes, ..PolicyState::default() };
            let mut s2 = s1.clone();
            let d_lo = evaluate(lo, &th(), &mut s1, 3).unwrap();
            let d_hi = evaluate(hi, &th(), &mut s2, 3).unwrap();
            prop_assert!(d_lo.code() <= d_hi.code());
        }

        #[test]
        fn transfer_is_idempotent_and_ordered(mut v in proptest::collection::vec(0.0f64..10.0, 20..200), qa in 0.05f64..0.5, qb in 0.6f64..0.95) {
            v.sort_by(f64::total_cmp);
            prop_assume!(v[0] < v[v.len() - 1]);
            let t = Thresholds::new(nearest_rank(&v, qa).max(1e-6), nearest_rank(&v, qb) + 1e-3).unwrap();
            let once = transfer(&t, &v, &v);
            if let Ok(once) = once {
                prop_assert!((once.thresholds.delta_budget - t.delta_budget).abs() <= 1e-12 * t.delta_budget.abs().max(1.0));
                let twice = transfer(&once.thresholds, &v, &v).unwrap();
                prop_assert!((twice.thresholds.delta_kill - once.thresholds.delta_kill).abs() <= 1e-12);
            }
        }
    }
}
