//! Bumper-to-bumper RadCom links inside a platoon.
//!
//! Messages travel store-and-forward from vehicle to vehicle. Each hop costs
//! serialization plus a fixed processing delay and succeeds independently
//! with `per_hop_reliability`; a failed hop cuts off everything behind it.

use rand::Rng;

use crate::engine::SimTime;
use crate::scenario::Platoon;

/// Minimum link rate: the default ITS-G5 rate.
pub const MIN_DATA_RATE: f64 = 6e6;
pub const MIN_MSG_RATE: f64 = 1.0;
pub const MAX_MSG_RATE: f64 = 40.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RadComError {
    #[error("platoon {0} is not RadCom-enabled")]
    NotEnabled(u32),
    #[error("source index {src} outside platoon of {len}")]
    BadSource { src: usize, len: usize },
    #[error("invalid radcom parameter {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct RadComConfig {
    pub hop_data_rate: f64,
    /// Seconds.
    pub per_hop_processing: f64,
    pub per_hop_reliability: f64,
    pub max_hop_gap: f64,
}

impl Default for RadComConfig {
    fn default() -> Self {
        RadComConfig { hop_data_rate: 100e6, per_hop_processing: 1e-3, per_hop_reliability: 0.999, max_hop_gap: 60.0 }
    }
}

impl RadComConfig {
    pub fn validate(&self) -> Result<(), RadComError> {
        if !(self.per_hop_reliability > 0.0 && self.per_hop_reliability <= 1.0) {
            return Err(RadComError::Invalid("per_hop_reliability must be in (0, 1]"));
        }
        if !(self.hop_data_rate > 0.0) {
            return Err(RadComError::Invalid("hop_data_rate must be > 0"));
        }
        if !(self.per_hop_processing >= 0.0) {
            return Err(RadComError::Invalid("per_hop_processing must be >= 0"));
        }
        if !(self.max_hop_gap > 0.0) {
            return Err(RadComError::Invalid("max_hop_gap must be > 0"));
        }
        Ok(())
    }

    /// Seconds spent on one hop for a `payload`-byte message.
    pub fn hop_delay(&self, payload: usize) -> f64 {
        payload as f64 * 8.0 / self.hop_data_rate + self.per_hop_processing
    }

    /// Delivery probability over `hops` hops.
    pub fn delivery_probability(&self, hops: usize) -> f64 {
        self.per_hop_reliability.powi(hops as i32)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub enum CapacityVerdict {
    Pass,
    Fail(String),
}

/// Checks a RadCom link against the ITS-G5 minimum requirements.
pub fn capacity_check(config: &RadComConfig, msg_rate: f64, payload: usize) -> CapacityVerdict {
    if config.hop_data_rate < MIN_DATA_RATE {
        return CapacityVerdict::Fail(format!(
            "link rate {:.3} Mbit/s below the 6 Mbit/s minimum",
            config.hop_data_rate / 1e6
        ));
    }
    if msg_rate < MIN_MSG_RATE {
        return CapacityVerdict::Fail(format!("message rate {msg_rate} Hz below the 1 Hz minimum"));
    }
    if msg_rate > MAX_MSG_RATE {
        return CapacityVerdict::Fail(format!("message rate {msg_rate} Hz above the 40 Hz maximum"));
    }
    let serialization = payload as f64 * 8.0 / config.hop_data_rate;
    if serialization >= 1.0 / msg_rate {
        return CapacityVerdict::Fail(format!(
            "serialization {serialization} s does not fit the {} s message interval",
            1.0 / msg_rate
        ));
    }
    CapacityVerdict::Pass
}

/// Chain of adjacent platoon members between two positions.
#[derive(Debug, Clone, PartialEq)]
pub struct RadComPath {
    /// Platoon indices visited, source first.
    pub hops: Vec<usize>,
}

impl RadComPath {
    pub fn total_hops(&self) -> usize {
        self.hops.len().saturating_sub(1)
    }
}

/// Builds the bumper-to-bumper path from `src` to `dst`, checking every gap.
pub fn radcom_path(platoon: &Platoon, src: usize, dst: usize, config: &RadComConfig) -> Option<RadComPath> {
    let n = platoon.ordered_members.len();
    if src >= n || dst >= n {
        return None;
    }
    let hops: Vec<usize> = if src <= dst { (src..=dst).collect() } else { (dst..=src).rev().collect() };
    let ok = hops.windows(2).all(|w| platoon.gaps[w[0].min(w[1])] <= config.max_hop_gap);
    ok.then_some(RadComPath { hops })
}

/// Arrival at one platoon member.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Arrival {
    At(SimTime),
    Lost,
}

/// Propagates one message from `src` to every other member. The returned
/// vector is indexed by platoon position; the source's own slot is `None`.
pub fn radcom_deliver<R: Rng>(
    platoon: &Platoon,
    src: usize,
    payload: usize,
    now: SimTime,
    config: &RadComConfig,
    rng: &mut R,
) -> Result<Vec<Option<Arrival>>, RadComError> {
    if !platoon.radcom_enabled {
        return Err(RadComError::NotEnabled(platoon.id));
    }
    let n = platoon.ordered_members.len();
    if src >= n {
        return Err(RadComError::BadSource { src, len: n });
    }
    let hop = SimTime::from_secs_f64(config.hop_delay(payload));
    let mut out = vec![None; n];

    // Walk towards the tail, then towards the head.
    for dir in [1isize, -1] {
        let mut alive = true;
        let mut h = 0u64;
        let mut idx = src as isize + dir;
        while idx >= 0 && (idx as usize) < n {
            let i = idx as usize;
            h += 1;
            let gap_ok = platoon.gaps[i.min(i.wrapping_add_signed(-dir))] <= config.max_hop_gap;
            if alive {
                let draw: f64 = rng.gen();
                alive = gap_ok && draw < config.per_hop_reliability;
            }
            out[i] = Some(if alive { Arrival::At(now + hop * h) } else { Arrival::Lost });
            idx += dir;
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::engine::{rng_stream, StreamPurpose};

    fn platoon(n: usize) -> Platoon {
        Platoon { id: 0, ordered_members: (0..n as u32).collect(), gaps: vec![20.0; n - 1], radcom_enabled: true }
    }

    #[test]
    fn capacity_examples() {
        let cfg = RadComConfig::default();
        assert_eq!(capacity_check(&cfg, 2.0, 301), CapacityVerdict::Pass);
        let slow = RadComConfig { hop_data_rate: 1e6, ..cfg.clone() };
        assert!(matches!(capacity_check(&slow, 2.0, 301), CapacityVerdict::Fail(r) if r.contains("6 Mbit/s")));
        assert!(matches!(capacity_check(&cfg, 50.0, 301), CapacityVerdict::Fail(r) if r.contains("40 Hz")));
        assert!(matches!(capacity_check(&cfg, 0.5, 301), CapacityVerdict::Fail(_)));
        // 6 Mbit/s at 40 Hz still fits a 301-byte message
        let min = RadComConfig { hop_data_rate: 6e6, ..cfg };
        assert_eq!(capacity_check(&min, 40.0, 301), CapacityVerdict::Pass);
    }

    #[test]
    fn leader_to_position_three_timing() {
        let cfg = RadComConfig { per_hop_reliability: 1.0, ..Default::default() };
        let mut rng = rng_stream(1, 0, StreamPurpose::RadcomLoss);
        let out = radcom_deliver(&platoon(4), 0, 301, SimTime::ZERO, &cfg, &mut rng).unwrap();
        // 301*8/100e6 = 24.08 us, plus 1 ms processing
        let hop = SimTime::from_nanos(1_024_080);
        assert_eq!(out[0], None);
        for h in 1..4u64 {
            assert_eq!(out[h as usize], Some(Arrival::At(hop * h)));
        }
        assert!((cfg.hop_delay(301) * 3.0 - 3.07224e-3).abs() < 1e-12);
        assert!((RadComConfig::default().delivery_probability(3) - 0.997002999).abs() < 1e-9);
    }

    #[test]
    fn member_source_reaches_both_ends() {
        let cfg = RadComConfig { per_hop_reliability: 1.0, ..Default::default() };
        let mut rng = rng_stream(1, 0, StreamPurpose::RadcomLoss);
        let out = radcom_deliver(&platoon(5), 2, 301, SimTime::ZERO, &cfg, &mut rng).unwrap();
        let hop = SimTime::from_secs_f64(cfg.hop_delay(301));
        assert_eq!(out[1], Some(Arrival::At(hop)));
        assert_eq!(out[0], Some(Arrival::At(hop * 2)));
        assert_eq!(out[4], Some(Arrival::At(hop * 2)));
    }

    #[test]
    fn failure_truncates_chain() {
        let cfg = RadComConfig { per_hop_reliability: 0.5, ..Default::default() };
        let mut seen_truncation = false;
        for seed in 0..64 {
            let mut rng = rng_stream(seed, 0, StreamPurpose::RadcomLoss);
            let out = radcom_deliver(&platoon(4), 0, 301, SimTime::ZERO, &cfg, &mut rng).unwrap();
            let lost_at = out.iter().position(|a| *a == Some(Arrival::Lost));
            if let Some(i) = lost_at {
                assert!(out[i..].iter().all(|a| *a == Some(Arrival::Lost)));
                if i == 1 {
                    seen_truncation = true;
                }
            }
        }
        assert!(seen_truncation);
    }

    #[test]
    fn empirical_delivery_matches_power_law() {
        let cfg = RadComConfig { per_hop_reliability: 0.9, ..Default::default() };
        let mut rng = rng_stream(11, 0, StreamPurpose::RadcomLoss);
        let trials = 20_000;
        let mut got = [0u32; 4];
        for _ in 0..trials {
            let out = radcom_deliver(&platoon(4), 0, 301, SimTime::ZERO, &cfg, &mut rng).unwrap();
            for (i, a) in out.iter().enumerate() {
                if matches!(a, Some(Arrival::At(_))) {
                    got[i] += 1;
                }
            }
        }
        for h in 1..4 {
            let p = f64::from(got[h]) / f64::from(trials);
            assert!((p - 0.9f64.powi(h as i32)).abs() < 0.015, "hop {h}: {p}");
        }
    }

    #[test]
    fn disabled_platoon_is_an_error() {
        let mut p = platoon(4);
        p.radcom_enabled = false;
        let mut rng = rng_stream(1, 0, StreamPurpose::RadcomLoss);
        assert_eq!(
            radcom_deliver(&p, 0, 301, SimTime::ZERO, &RadComConfig::default(), &mut rng),
            Err(RadComError::NotEnabled(0))
        );
    }

    #[test]
    fn path_respects_gap_limit() {
        let mut p = platoon(4);
        let cfg = RadComConfig::default();
        assert_eq!(radcom_path(&p, 0, 3, &cfg).unwrap().total_hops(), 3);
        assert_eq!(radcom_path(&p, 3, 1, &cfg).unwrap().hops, vec![3, 2, 1]);
        p.gaps[1] = 80.0;
        assert!(radcom_path(&p, 0, 3, &cfg).is_none());
        assert!(radcom_path(&p, 0, 1, &cfg).is_some());
    }
}
