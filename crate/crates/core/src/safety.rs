//! Emergency-braking safety gaps inside a platoon.
//!
//! A member learns about the leader's emergency braking only after the
//! communication delay plus actuation lag `tau`. The minimum safe gap is the
//! largest closure between the vehicle ahead (braking from t = 0) and the
//! follower (cruising until `tau`, then braking).

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SafetyError {
    #[error("delivery ratio {0} leaves no bounded delay")]
    NoDelivery(f64),
    #[error("invalid braking scenario: {0}")]
    Invalid(&'static str),
    #[error("expected {expected} delay inputs, got {got}")]
    Inputs { expected: usize, got: usize },
}

#[derive(Debug, Clone, PartialEq)]
pub struct BrakingScenario {
    pub v0: f64,
    pub a_lead: f64,
    /// Deceleration of followers 1..N-1. A single entry applies to all of them.
    pub a_follow: Vec<f64>,
    pub t_actuation: f64,
    pub epsilon: f64,
}

impl Default for BrakingScenario {
    fn default() -> Self {
        BrakingScenario { v0: 22.2, a_lead: 6.0, a_follow: vec![6.0], t_actuation: 0.3, epsilon: 1e-3 }
    }
}

impl BrakingScenario {
    pub fn validate(&self) -> Result<(), SafetyError> {
        if !(self.a_lead > 0.0) {
            return Err(SafetyError::Invalid("a_lead must be > 0"));
        }
        if self.a_follow.is_empty() || !self.a_follow.iter().all(|a| *a > 0.0) {
            return Err(SafetyError::Invalid("every a_follow must be > 0"));
        }
        if !(self.v0 >= 0.0) {
            return Err(SafetyError::Invalid("v0 must be >= 0"));
        }
        if !(self.epsilon > 0.0 && self.epsilon < 1.0) {
            return Err(SafetyError::Invalid("epsilon must be in (0, 1)"));
        }
        if !(self.t_actuation >= 0.0) {
            return Err(SafetyError::Invalid("t_actuation must be >= 0"));
        }
        Ok(())
    }

    /// Deceleration of the vehicle at platoon position `i` (0 = leader).
    pub fn decel(&self, i: usize) -> f64 {
        if i == 0 {
            self.a_lead
        } else {
            *self.a_follow.get(i - 1).unwrap_or_else(|| self.a_follow.last().expect("validated"))
        }
    }
}

/// Number of consecutive lost periods that must be covered so the residual
/// loss probability drops to `epsilon`.
pub fn loss_quantile(pdr: f64, epsilon: f64) -> Result<u32, SafetyError> {
    if !(pdr > 0.0) {
        return Err(SafetyError::NoDelivery(pdr));
    }
    let loss = (1.0 - pdr).max(0.0);
    if loss == 0.0 {
        return Ok(0);
    }
    let mut k = 0;
    let mut p = 1.0;
    while p > epsilon {
        p *= loss;
        k += 1;
    }
    Ok(k)
}

/// Worst-case delay (seconds) of a periodic message stream.
pub fn worst_case_comm_delay(pdr: f64, mean_latency: f64, period: f64, epsilon: f64) -> Result<f64, SafetyError> {
    let k = loss_quantile(pdr, epsilon)?;
    Ok(mean_latency + period * f64::from(k))
}

/// Smallest initial bumper gap that avoids a collision.
pub fn min_safe_gap(v0: f64, a_lead: f64, a_follow: f64, tau: f64) -> f64 {
    let final_closure = v0 * tau + v0 * v0 / 2.0 * (1.0 / a_follow - 1.0 / a_lead);
    if a_follow <= a_lead {
        return final_closure.max(0.0);
    }
    // The follower brakes harder: the closure peaks when both speeds match,
    // unless the leader has already stopped by then.
    let t_equal = a_follow * tau / (a_follow - a_lead);
    let t_lead_stop = v0 / a_lead;
    if t_equal < t_lead_stop {
        (a_lead * a_follow * tau * tau / (2.0 * (a_follow - a_lead))).max(0.0)
    } else {
        final_closure.max(0.0)
    }
}

/// Communication path feeding one member's emergency reaction.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DelayInput {
    pub pdr: f64,
    /// Seconds.
    pub mean_latency: f64,
    /// Message period, seconds.
    pub period: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PairGap {
    /// `i` for the pair (i-1, i).
    pub pair_index: usize,
    pub tau: f64,
    pub gap: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GapReport {
    pub penetration: f64,
    pub pairs: Vec<PairGap>,
    pub inputs: Vec<DelayInput>,
    pub epsilon: f64,
}

impl GapReport {
    pub fn gaps(&self) -> Vec<f64> {
        self.pairs.iter().map(|p| p.gap).collect()
    }

    pub fn mean_gap(&self) -> f64 {
        self.pairs.iter().map(|p| p.gap).sum::<f64>() / self.pairs.len().max(1) as f64
    }
}

/// Per-pair minimum gaps; `inputs[i - 1]` describes member `i`'s path.
pub fn platoon_gaps(scenario: &BrakingScenario, penetration: f64, inputs: &[DelayInput]) -> Result<GapReport, SafetyError> {
    scenario.validate()?;
    let pairs = inputs
        .iter()
        .enumerate()
        .map(|(j, inp)| {
            let i = j + 1;
            let tau = scenario.t_actuation + worst_case_comm_delay(inp.pdr, inp.mean_latency, inp.period, scenario.epsilon)?;
            let gap = min_safe_gap(scenario.v0, scenario.decel(i - 1), scenario.decel(i), tau);
            Ok(PairGap { pair_index: i, tau, gap })
        })
        .collect::<Result<Vec<_>, SafetyError>>()?;
    Ok(GapReport { penetration, pairs, inputs: inputs.to_vec(), epsilon: scenario.epsilon })
}

/// Brute-force braking integration used to validate [`min_safe_gap`].
pub mod oracle {
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    pub const STEP: f64 = 1e-3;

    /// Advances `(x, v)` by `dt` under deceleration `a`, stopping exactly at zero speed.
    fn advance(x: &mut f64, v: &mut f64, a: f64, dt: f64) {
        if a == 0.0 {
            *x += *v * dt;
            return;
        }
        let t_stop = *v / a;
        if t_stop <= dt {
            *x += *v * *v / (2.0 * a);
            *v = 0.0;
        } else {
            *x += *v * dt - a * dt * dt / 2.0;
            *v -= a * dt;
        }
    }

    /// Largest closure between both trajectories, sampled every [`STEP`].
    pub fn max_closure(v0: f64, a_lead: f64, a_follow: f64, tau: f64) -> f64 {
        let (mut xl, mut vl) = (0.0, v0);
        let (mut xf, mut vf) = (0.0, v0);
        let mut t = 0.0;
        let mut worst: f64 = 0.0;
        while vl > 0.0 || vf > 0.0 {
            advance(&mut xl, &mut vl, a_lead, STEP);
            let t_next = t + STEP;
            if t_next <= tau {
                advance(&mut xf, &mut vf, 0.0, STEP);
            } else if t >= tau {
                advance(&mut xf, &mut vf, a_follow, STEP);
            } else {
                advance(&mut xf, &mut vf, 0.0, tau - t);
                advance(&mut xf, &mut vf, a_follow, t_next - tau);
            }
            t = t_next;
            worst = worst.max(xf - xl);
        }
        worst
    }

    #[derive(Debug, Clone, PartialEq)]
    pub struct OracleReport {
        pub points: usize,
        pub max_error: f64,
        pub worst_point: (f64, f64, f64, f64),
    }

    /// Compares the closed form against [`max_closure`] on a seeded random grid.
    pub fn check_grid(points: usize, seed: u64) -> OracleReport {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut max_error = 0.0;
        let mut worst_point = (0.0, 0.0, 0.0, 0.0);
        for _ in 0..points {
            let v0 = rng.gen_range(0.0..40.0);
            let a_lead = rng.gen_range(1.0..10.0);
            let a_follow = rng.gen_range(1.0..10.0);
            let tau = rng.gen_range(0.0..4.0);
            let closed = super::min_safe_gap(v0, a_lead, a_follow, tau);
            let err = (closed - max_closure(v0, a_lead, a_follow, tau)).abs();
            if err > max_error {
                max_error = err;
                worst_point = (v0, a_lead, a_follow, tau);
            }
        }
        OracleReport { points, max_error, worst_point }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn delay_examples() {
        assert_eq!(worst_case_comm_delay(1.0, 0.002, 0.5, 1e-3).unwrap(), 0.002);
        assert_eq!(loss_quantile(0.6985, 1e-3).unwrap(), 6);
        assert!((worst_case_comm_delay(0.6985, 0.1368, 0.5, 1e-3).unwrap() - 3.1368).abs() < 1e-12);
        assert_eq!(loss_quantile(0.9015, 1e-3).unwrap(), 3);
        assert!((worst_case_comm_delay(0.9015, 0.00145, 0.5, 1e-3).unwrap() - 1.50145).abs() < 1e-12);
        assert_eq!(worst_case_comm_delay(0.0, 0.1, 0.5, 1e-3), Err(SafetyError::NoDelivery(0.0)));
    }

    #[test]
    fn gap_examples() {
        assert_eq!(min_safe_gap(22.2, 6.0, 6.0, 0.0), 0.0);
        let g = min_safe_gap(22.2, 6.0, 6.0, 3.4368);
        assert!((g - 76.30).abs() < 0.01, "{g}");
        assert!((g - oracle::max_closure(22.2, 6.0, 6.0, 3.4368)).abs() < 1e-3);
    }

    #[test]
    fn stronger_follower_peaks_at_equal_speed() {
        // leader 4 m/s^2, follower 8 m/s^2, tau 1 s: speeds match at t = 2 s
        let g = min_safe_gap(30.0, 4.0, 8.0, 1.0);
        assert!((g - 4.0 * 8.0 / (2.0 * 4.0)).abs() < 1e-12);
        assert!((g - oracle::max_closure(30.0, 4.0, 8.0, 1.0)).abs() < 1e-3);
    }

    #[test]
    fn equal_inputs_give_equal_gaps() {
        let inp = DelayInput { pdr: 0.6985, mean_latency: 0.1368, period: 0.5 };
        let r = platoon_gaps(&BrakingScenario::default(), 0.0, &[inp; 3]).unwrap();
        assert_eq!(r.pairs.len(), 3);
        assert!(r.pairs.windows(2).all(|w| w[0].gap == w[1].gap));
        assert!((r.pairs[0].tau - 3.4368).abs() < 1e-12);
    }

    #[test]
    fn lossless_radcom_gaps_grow_with_hops() {
        let hop = 1.02408e-3;
        let inputs: Vec<DelayInput> =
            (1..4).map(|h| DelayInput { pdr: 1.0, mean_latency: hop * h as f64, period: 0.5 }).collect();
        let s = BrakingScenario::default();
        let r = platoon_gaps(&s, 1.0, &inputs).unwrap();
        for (p, h) in r.pairs.iter().zip(1..) {
            assert!((p.tau - (0.3 + hop * f64::from(h))).abs() < 1e-12);
        }
        assert!(r.pairs.windows(2).all(|w| w[0].gap < w[1].gap));
        assert!(r.pairs.iter().all(|p| p.gap > 1.0 && p.gap < 10.0));
    }

    #[test]
    fn two_vehicle_platoon_has_one_gap() {
        let inp = DelayInput { pdr: 0.9, mean_latency: 0.01, period: 0.5 };
        assert_eq!(platoon_gaps(&BrakingScenario::default(), 0.0, &[inp]).unwrap().pairs.len(), 1);
    }

    #[test]
    fn oracle_grid_small() {
        let r = oracle::check_grid(500, 3);
        assert!(r.max_error < 1e-3, "{r:?}");
    }

    proptest! {
        #[test]
        fn gap_monotone_in_tau(v0 in 0.0..40.0f64, al in 1.0..10.0f64, af in 1.0..10.0f64, t in 0.0..4.0f64, dt in 0.0..2.0f64) {
            prop_assert!(min_safe_gap(v0, al, af, t + dt) >= min_safe_gap(v0, al, af, t) - 1e-9);
        }

        #[test]
        fn gap_monotone_in_speed(v0 in 0.0..40.0f64, dv in 0.0..10.0f64, al in 1.0..10.0f64, af in 1.0..10.0f64, t in 0.0..4.0f64) {
            prop_assert!(min_safe_gap(v0 + dv, al, af, t) >= min_safe_gap(v0, al, af, t) - 1e-9);
        }

        #[test]
        fn gap_antitone_in_follower_decel(v0 in 0.0..40.0f64, al in 1.0..10.0f64, af in 1.0..10.0f64, da in 0.0..5.0f64, t in 0.0..4.0f64) {
            prop_assert!(min_safe_gap(v0, al, af + da, t) <= min_safe_gap(v0, al, af, t) + 1e-9);
        }

        #[test]
        fn delay_antitone_in_pdr(p in 0.01..1.0f64, dp in 0.0..0.5f64, lat in 0.0..0.2f64) {
            let hi = (p + dp).min(1.0);
            prop_assert!(worst_case_comm_delay(hi, lat, 0.5, 1e-3).unwrap() <= worst_case_comm_delay(p, lat, 0.5, 1e-3).unwrap());
        }
    }
}
