//! Message generation: kinematic CAM triggering, periodic PCMs and the
//! RadCom offloading policy.

use crate::engine::SimTime;
use crate::mac::{Addressing, Service, TrafficClass};
use crate::scenario::{Role, World};

pub const CAM_BYTES: usize = 285;
pub const PCM_BYTES: usize = 301;
pub const CAM_CLASS: TrafficClass = TrafficClass::Tc2;
pub const PCM_CLASS: TrafficClass = TrafficClass::Tc1;

/// CAM trigger thresholds.
#[derive(Debug, Clone, PartialEq)]
pub struct CamRules {
    /// Degrees.
    pub heading_delta: f64,
    /// Meters.
    pub position_delta: f64,
    /// m/s.
    pub speed_delta: f64,
    pub t_min: SimTime,
    pub t_max: SimTime,
}

impl Default for CamRules {
    fn default() -> Self {
        CamRules {
            heading_delta: 4.0,
            position_delta: 4.0,
            speed_delta: 0.5,
            t_min: SimTime::from_millis(100),
            t_max: SimTime::from_millis(1000),
        }
    }
}

impl CamRules {
    pub fn validate(&self) -> Result<(), String> {
        if self.t_min == SimTime::ZERO || self.t_min >= self.t_max {
            return Err("requires 0 < t_min < t_max".into());
        }
        if !(self.heading_delta > 0.0 && self.position_delta > 0.0 && self.speed_delta > 0.0) {
            return Err("trigger thresholds must be > 0".into());
        }
        Ok(())
    }
}

/// Kinematic state sampled at a CAM check.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Kinematics {
    pub x: f64,
    pub y: f64,
    /// Degrees.
    pub heading: f64,
    pub speed: f64,
}

/// State captured at the last generated CAM.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LastCam {
    pub time: SimTime,
    pub state: Kinematics,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CamDecision {
    Generate,
    Skip,
}

fn heading_diff(a: f64, b: f64) -> f64 {
    let d = (a - b).rem_euclid(360.0);
    d.min(360.0 - d)
}

/// Decides whether a CAM is due at `now`.
pub fn cam_check(rules: &CamRules, now: SimTime, state: Kinematics, last: Option<&LastCam>) -> CamDecision {
    let Some(last) = last else { return CamDecision::Generate };
    let elapsed = now.saturating_sub(last.time);
    if elapsed >= rules.t_max {
        return CamDecision::Generate;
    }
    if elapsed < rules.t_min {
        return CamDecision::Skip;
    }
    let moved = (state.x - last.state.x).hypot(state.y - last.state.y);
    let triggered = heading_diff(state.heading, last.state.heading) >= rules.heading_delta
        || moved >= rules.position_delta
        || (state.speed - last.state.speed).abs() >= rules.speed_delta;
    if triggered {
        CamDecision::Generate
    } else {
        CamDecision::Skip
    }
}

/// Which access technology carries a message.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Path {
    G5,
    RadCom,
}

#[derive(Debug, Clone, PartialEq)]
pub struct OffloadPolicy {
    pub member_pcm_to_radcom: bool,
    pub member_cam_suppression: bool,
    pub pcm_unicast: bool,
}

impl Default for OffloadPolicy {
    fn default() -> Self {
        OffloadPolicy { member_pcm_to_radcom: true, member_cam_suppression: true, pcm_unicast: false }
    }
}

/// Services of one vehicle and where each goes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Emission {
    pub cam_g5: bool,
    pub pcm_g5: bool,
    pub pcm_radcom: bool,
    /// MAC addressing for the ITS-G5 PCM.
    pub pcm_addressing: Addressing,
}

/// Output of a PCM tick.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PcmRouting {
    pub g5: Option<Addressing>,
    pub radcom: bool,
}

/// Per-vehicle emission plan.
#[derive(Debug, Clone, PartialEq)]
pub struct EmissionPlan {
    pub vehicles: Vec<Emission>,
}

impl EmissionPlan {
    pub fn g5_emitters(&self) -> usize {
        self.vehicles.iter().filter(|e| e.cam_g5 || e.pcm_g5).count()
    }

    pub fn pcm_tick(&self, vehicle: u32) -> PcmRouting {
        let e = &self.vehicles[vehicle as usize];
        PcmRouting { g5: e.pcm_g5.then_some(e.pcm_addressing), radcom: e.pcm_radcom }
    }
}

/// Decides, per vehicle, which services go to ITS-G5 and which to RadCom.
///
/// Leaders always keep ITS-G5. In an offloaded platoon the leader also feeds
/// its PCM into the RadCom chain so members hear it bumper-to-bumper.
pub fn apply_offload(world: &World, policy: &OffloadPolicy) -> EmissionPlan {
    let vehicles = world
        .vehicles
        .iter()
        .map(|v| {
            let platoon = &world.platoons[v.platoon_id as usize];
            let offloaded = platoon.radcom_enabled && policy.member_pcm_to_radcom;
            let leader = v.role == Role::Leader;
            let addressing = if policy.pcm_unicast {
                if leader {
                    Addressing::Unicast(platoon.ordered_members[1])
                } else {
                    Addressing::Unicast(platoon.ordered_members[0])
                }
            } else {
                Addressing::Broadcast
            };
            Emission {
                cam_g5: leader || !(offloaded && policy.member_cam_suppression),
                pcm_g5: leader || !offloaded,
                pcm_radcom: offloaded,
                pcm_addressing: addressing,
            }
        })
        .collect();
    EmissionPlan { vehicles }
}

/// PCM emission instants `phase + k * period` falling in `[from, to)`.
pub fn pcm_times(phase: SimTime, period: SimTime, from: SimTime, to: SimTime) -> impl Iterator<Item = SimTime> {
    let first = if from <= phase { 0 } else { (from - phase).as_nanos().div_ceil(period.as_nanos()) };
    (first..)
        .map(move |k| phase + period * k)
        .take_while(move |t| *t < to)
}

pub fn service_bytes(service: Service) -> usize {
    match service {
        Service::Cam => CAM_BYTES,
        Service::Pcm => PCM_BYTES,
    }
}

pub fn service_class(service: Service) -> TrafficClass {
    match service {
        Service::Cam => CAM_CLASS,
        Service::Pcm => PCM_CLASS,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{assign_penetration, build_world, ScenarioConfig};

    fn straight(speed: f64) -> impl Fn(SimTime) -> Kinematics {
        move |t| Kinematics { x: speed * t.as_secs_f64(), y: 0.0, heading: 90.0, speed }
    }

    /// Runs the 100 ms check grid for `secs` and returns inter-CAM intervals in ms.
    fn intervals(rules: &CamRules, secs: u64, motion: impl Fn(SimTime) -> Kinematics) -> Vec<u64> {
        let mut last: Option<LastCam> = None;
        let mut times = Vec::new();
        let mut t = SimTime::ZERO;
        while t <= SimTime::from_millis(secs * 1000) {
            let state = motion(t);
            if cam_check(rules, t, state, last.as_ref()) == CamDecision::Generate {
                last = Some(LastCam { time: t, state });
                times.push(t.as_nanos() / 1_000_000);
            }
            t += rules.t_min;
        }
        times.windows(2).map(|w| w[1] - w[0]).collect()
    }

    #[test]
    fn constant_speed_gives_200ms() {
        let iv = intervals(&CamRules::default(), 10, straight(22.2));
        assert!(iv.iter().all(|&d| d == 200), "{iv:?}");
    }

    #[test]
    fn stationary_gives_1000ms() {
        let iv = intervals(&CamRules::default(), 10, straight(0.0));
        assert!(iv.iter().all(|&d| d == 1000));
    }

    #[test]
    fn speed_step_triggers() {
        let rules = CamRules::default();
        let s0 = Kinematics { x: 0.0, y: 0.0, heading: 0.0, speed: 10.0 };
        let last = LastCam { time: SimTime::ZERO, state: s0 };
        let s1 = Kinematics { speed: 10.6, x: 1.0, ..s0 };
        assert_eq!(cam_check(&rules, SimTime::from_millis(100), s1, Some(&last)), CamDecision::Generate);
        let s2 = Kinematics { speed: 10.4, x: 1.0, ..s0 };
        assert_eq!(cam_check(&rules, SimTime::from_millis(100), s2, Some(&last)), CamDecision::Skip);
        // too soon even with a large change
        assert_eq!(cam_check(&rules, SimTime::from_millis(50), s1, Some(&last)), CamDecision::Skip);
    }

    #[test]
    fn heading_wraps_around_north() {
        let rules = CamRules::default();
        let s0 = Kinematics { x: 0.0, y: 0.0, heading: 358.0, speed: 1.0 };
        let last = LastCam { time: SimTime::ZERO, state: s0 };
        let s1 = Kinematics { heading: 1.0, ..s0 };
        assert_eq!(cam_check(&rules, SimTime::from_millis(300), s1, Some(&last)), CamDecision::Skip);
        let s2 = Kinematics { heading: 2.5, ..s0 };
        assert_eq!(cam_check(&rules, SimTime::from_millis(300), s2, Some(&last)), CamDecision::Generate);
    }

    #[test]
    fn first_check_generates() {
        let s = Kinematics { x: 0.0, y: 0.0, heading: 0.0, speed: 0.0 };
        assert_eq!(cam_check(&CamRules::default(), SimTime::ZERO, s, None), CamDecision::Generate);
    }

    #[test]
    fn pcm_times_grid() {
        let p = SimTime::from_millis(123);
        let ts: Vec<u64> = pcm_times(p, SimTime::from_millis(500), SimTime::from_millis(1000), SimTime::from_millis(2200))
            .map(|t| t.as_nanos() / 1_000_000)
            .collect();
        assert_eq!(ts, vec![1123, 1623, 2123]);
        let n = pcm_times(p, SimTime::from_millis(500), SimTime::from_secs_f64(120.0), SimTime::from_secs_f64(150.0)).count();
        assert_eq!(n, 60);
    }

    fn world(rate: f64) -> World {
        assign_penetration(build_world(&ScenarioConfig::default()).unwrap(), rate, None)
    }

    #[test]
    fn zero_rate_plan_is_baseline() {
        let w = world(0.0);
        let plan = apply_offload(&w, &OffloadPolicy::default());
        assert!(plan.vehicles.iter().all(|e| e.cam_g5 && e.pcm_g5 && !e.pcm_radcom));
        assert_eq!(plan.g5_emitters(), w.vehicles.len());
    }

    #[test]
    fn full_rate_leaves_only_leaders_on_g5() {
        let w = world(1.0);
        let plan = apply_offload(&w, &OffloadPolicy::default());
        for v in &w.vehicles {
            let e = plan.vehicles[v.id as usize];
            let leader = v.role == Role::Leader;
            assert_eq!(e.cam_g5 || e.pcm_g5, leader);
            assert_eq!(plan.pcm_tick(v.id).g5.is_some(), leader);
            assert!(plan.pcm_tick(v.id).radcom);
        }
        assert_eq!(plan.g5_emitters(), w.platoons.len());
    }

    #[test]
    fn suppression_off_keeps_member_cams() {
        let w = world(1.0);
        let policy = OffloadPolicy { member_cam_suppression: false, ..Default::default() };
        let plan = apply_offload(&w, &policy);
        assert!(plan.vehicles.iter().all(|e| e.cam_g5));
        for v in w.vehicles.iter().filter(|v| v.role == Role::Member) {
            assert!(!plan.vehicles[v.id as usize].pcm_g5);
        }
    }

    #[test]
    fn unicast_addressing_targets_platoon_peer() {
        let w = world(0.0);
        let plan = apply_offload(&w, &OffloadPolicy { pcm_unicast: true, ..Default::default() });
        let p = &w.platoons[0];
        assert_eq!(plan.vehicles[p.ordered_members[0] as usize].pcm_addressing, Addressing::Unicast(p.ordered_members[1]));
        assert_eq!(plan.vehicles[p.ordered_members[2] as usize].pcm_addressing, Addressing::Unicast(p.ordered_members[0]));
    }

    #[test]
    fn offered_load_non_increasing_in_rate() {
        let base = build_world(&ScenarioConfig::default()).unwrap();
        let mut prev = usize::MAX;
        for rate in [0.0, 0.25, 0.5, 0.75, 1.0] {
            let plan = apply_offload(&assign_penetration(base.clone(), rate, None), &OffloadPolicy::default());
            let load: usize = plan.vehicles.iter().map(|e| usize::from(e.cam_g5) * 5 + usize::from(e.pcm_g5) * 2).sum();
            assert!(load <= prev);
            prev = load;
        }
    }
}
