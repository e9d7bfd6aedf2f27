//! Road, vehicles and platoons.
//!
//! The road is a ring of `road_length` meters with `lanes_per_direction`
//! lanes each way. Vehicles drive at one common speed, so the layout inside a
//! direction never changes and opposite directions slide past each other.

use rand::seq::SliceRandom;
use rand::Rng;

use crate::engine::{rng_stream, SimTime, StreamPurpose};
use crate::facilities::CamRules;

/// Smallest bumper gap allowed between two consecutive platoons in a lane.
pub const MIN_INTER_PLATOON_GAP: f64 = 2.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ScenarioError {
    #[error("invalid scenario parameter {field}: {reason}")]
    Invalid { field: &'static str, reason: String },
    #[error("lane holds {vehicles} vehicles, fewer than one platoon of {platoon_size}")]
    TooFewVehicles { vehicles: usize, platoon_size: usize },
    #[error("platoons do not fit in a lane: {needed:.1} m needed, {available:.1} m available")]
    Infeasible { needed: f64, available: f64 },
}

#[derive(Debug, Clone, PartialEq)]
pub struct ScenarioConfig {
    pub road_length: f64,
    pub lanes_per_direction: u32,
    /// Vehicles per km per lane.
    pub density: f64,
    pub speed: f64,
    pub platoon_size: usize,
    /// Lower bound of the platoon length range; equal to `platoon_size` for fixed-length platoons.
    pub platoon_size_min: usize,
    pub penetration_rate: f64,
    pub warmup: f64,
    pub measure: f64,
    pub seed: u64,
    pub pcm_period: f64,
    pub cam_rules: CamRules,
    pub member_cam_suppression: bool,
    pub vehicle_length: f64,
    pub initial_gap: f64,
    pub lane_width: f64,
}

impl Default for ScenarioConfig {
    fn default() -> Self {
        ScenarioConfig {
            road_length: 5000.0,
            lanes_per_direction: 4,
            density: 30.0,
            speed: 22.2,
            platoon_size: 4,
            platoon_size_min: 4,
            penetration_rate: 0.0,
            warmup: 120.0,
            measure: 30.0,
            seed: 1,
            pcm_period: 0.5,
            cam_rules: CamRules::default(),
            member_cam_suppression: true,
            vehicle_length: 16.0,
            initial_gap: 20.0,
            lane_width: 3.5,
        }
    }
}

fn invalid(field: &'static str, reason: impl Into<String>) -> ScenarioError {
    ScenarioError::Invalid { field, reason: reason.into() }
}

impl ScenarioConfig {
    pub fn validate(&self) -> Result<(), ScenarioError> {
        if !(self.road_length > 0.0) {
            return Err(invalid("road_length", "must be > 0"));
        }
        if self.lanes_per_direction < 1 {
            return Err(invalid("lanes_per_direction", "must be >= 1"));
        }
        if !(self.density > 0.0) {
            return Err(invalid("density", "must be > 0"));
        }
        if !(self.speed >= 0.0) {
            return Err(invalid("speed", "must be >= 0"));
        }
        if self.platoon_size < 2 {
            return Err(invalid("platoon_size", "must be >= 2"));
        }
        if self.platoon_size_min < 2 || self.platoon_size_min > self.platoon_size {
            return Err(invalid("platoon_size_min", "must be in [2, platoon_size]"));
        }
        if !(0.0..=1.0).contains(&self.penetration_rate) {
            return Err(invalid("penetration_rate", "out of range [0, 1]"));
        }
        if !(self.warmup >= 0.0) {
            return Err(invalid("warmup", "must be >= 0"));
        }
        if !(self.measure > 0.0) {
            return Err(invalid("measure", "must be > 0"));
        }
        if !(self.pcm_period > 0.0) {
            return Err(invalid("pcm_period", "must be > 0"));
        }
        let rate = 1.0 / self.pcm_period;
        if !(1.0..=40.0).contains(&rate) {
            return Err(invalid("pcm_period", format!("message rate {rate} Hz outside [1, 40] Hz")));
        }
        if !(self.vehicle_length > 0.0) {
            return Err(invalid("vehicle_length", "must be > 0"));
        }
        if !(self.initial_gap > 0.0) {
            return Err(invalid("initial_gap", "must be > 0"));
        }
        if !(self.lane_width > 0.0) {
            return Err(invalid("lane_width", "must be > 0"));
        }
        self.cam_rules.validate().map_err(|r| invalid("cam_rules", r))?;
        Ok(())
    }

    pub fn vehicles_per_lane(&self) -> usize {
        (self.density * self.road_length / 1000.0).round() as usize
    }

    pub fn warmup_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.warmup)
    }

    pub fn end_time(&self) -> SimTime {
        SimTime::from_secs_f64(self.warmup + self.measure)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Direction {
    East,
    West,
}

impl Direction {
    pub fn sign(self) -> f64 {
        match self {
            Direction::East => 1.0,
            Direction::West => -1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Role {
    Leader,
    Member,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Vehicle {
    pub id: u32,
    /// Lane index within the direction, 0 = innermost.
    pub lane: u32,
    pub direction: Direction,
    /// Front-bumper coordinate along the ring at t = 0, in `[0, road_length)`.
    pub position: f64,
    pub speed: f64,
    pub length: f64,
    pub role: Role,
    pub platoon_id: u32,
    /// Index inside the platoon, 0 = leader.
    pub platoon_index: usize,
    pub radcom_equipped: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Platoon {
    pub id: u32,
    /// Vehicle ids front to back; index 0 is the leader.
    pub ordered_members: Vec<u32>,
    /// Bumper-to-bumper gaps, `gaps[i]` between members `i` and `i + 1`.
    pub gaps: Vec<f64>,
    pub radcom_enabled: bool,
}

/// Immutable snapshot of the simulated road.
#[derive(Debug, Clone, PartialEq)]
pub struct World {
    pub road_length: f64,
    pub lane_width: f64,
    pub vehicles: Vec<Vehicle>,
    pub platoons: Vec<Platoon>,
    /// Seeded platoon permutation; the first `floor(rate * n)` entries are offloaded at `rate`.
    pub penetration_order: Vec<u32>,
}

impl World {
    /// Along-ring coordinate of vehicle `id` at time `t`.
    pub fn position_at(&self, id: u32, t: SimTime) -> f64 {
        let v = &self.vehicles[id as usize];
        let x = v.position + v.direction.sign() * v.speed * t.as_secs_f64();
        x.rem_euclid(self.road_length)
    }

    /// Lateral coordinate; eastbound lanes on the positive side.
    pub fn lateral(&self, id: u32) -> f64 {
        let v = &self.vehicles[id as usize];
        let offset = (f64::from(v.lane) + 0.5) * self.lane_width;
        match v.direction {
            Direction::East => offset,
            Direction::West => -offset,
        }
    }

    /// Shortest signed along-ring separation `b - a`, in `(-L/2, L/2]`.
    pub fn ring_delta(&self, a: f64, b: f64) -> f64 {
        let l = self.road_length;
        let mut d = (b - a).rem_euclid(l);
        if d > l / 2.0 {
            d -= l;
        }
        d
    }

    /// Euclidean antenna distance between two vehicles at time `t`.
    pub fn distance_at(&self, a: u32, b: u32, t: SimTime) -> f64 {
        let dx = self.ring_delta(self.position_at(a, t), self.position_at(b, t));
        let dy = self.lateral(a) - self.lateral(b);
        dx.hypot(dy)
    }

    pub fn platoon_of(&self, id: u32) -> &Platoon {
        &self.platoons[self.vehicles[id as usize].platoon_id as usize]
    }

    pub fn enabled_platoons(&self) -> usize {
        self.platoons.iter().filter(|p| p.radcom_enabled).count()
    }
}

/// Splits `n` vehicles of one lane into platoon lengths.
fn platoon_lengths(n: usize, min: usize, max: usize, rng: &mut impl Rng) -> Vec<usize> {
    let balanced = |n: usize| -> Vec<usize> {
        let k = n.div_ceil(max);
        let base = n / k;
        let extra = n % k;
        // longer platoons first; the sizes differ by at most one
        (0..k).map(|i| base + usize::from(i < extra)).collect()
    };
    if min == max {
        return balanced(n);
    }
    let mut sizes = Vec::new();
    let mut left = n;
    while left > max {
        let s = rng.gen_range(min..=max).min(left);
        sizes.push(s);
        left -= s;
    }
    if left >= min {
        sizes.push(left);
        return sizes;
    }
    // spread the short remainder over earlier platoons that still have room
    for s in sizes.iter_mut() {
        while left > 0 && *s < max {
            *s += 1;
            left -= 1;
        }
    }
    if left > 0 {
        return balanced(n);
    }
    sizes
}

/// Builds the road layout. Deterministic in `config.seed`.
pub fn build_world(config: &ScenarioConfig) -> Result<World, ScenarioError> {
    config.validate()?;
    let per_lane = config.vehicles_per_lane();
    if per_lane < config.platoon_size_min {
        return Err(ScenarioError::TooFewVehicles {
            vehicles: per_lane,
            platoon_size: config.platoon_size_min,
        });
    }

    let mut rng = rng_stream(config.seed, u32::MAX, StreamPurpose::World);
    let mut vehicles = Vec::with_capacity(per_lane * 2 * config.lanes_per_direction as usize);
    let mut platoons = Vec::new();

    for direction in [Direction::East, Direction::West] {
        for lane in 0..config.lanes_per_direction {
            let sizes = platoon_lengths(per_lane, config.platoon_size_min, config.platoon_size, &mut rng);
            let occupied: f64 = sizes
                .iter()
                .map(|&s| s as f64 * config.vehicle_length + (s - 1) as f64 * config.initial_gap)
                .sum();
            let spacing = (config.road_length - occupied) / sizes.len() as f64;
            if spacing < MIN_INTER_PLATOON_GAP {
                return Err(ScenarioError::Infeasible {
                    needed: occupied + MIN_INTER_PLATOON_GAP * sizes.len() as f64,
                    available: config.road_length,
                });
            }
            // Random lane phase so that lanes are not aligned.
            let phase: f64 = rng.gen_range(0.0..config.road_length);
            let sign = direction.sign();
            // `along` runs in the travel direction from the lane origin.
            let mut along = 0.0;
            for &size in &sizes {
                let platoon_id = platoons.len() as u32;
                let mut members = Vec::with_capacity(size);
                // Leader is the front-most vehicle; lay out back to front.
                let platoon_len =
                    size as f64 * config.vehicle_length + (size - 1) as f64 * config.initial_gap;
                for idx in 0..size {
                    let front = along + platoon_len
                        - idx as f64 * (config.vehicle_length + config.initial_gap);
                    let position = (phase + sign * front).rem_euclid(config.road_length);
                    let id = vehicles.len() as u32;
                    vehicles.push(Vehicle {
                        id,
                        lane,
                        direction,
                        position,
                        speed: config.speed,
                        length: config.vehicle_length,
                        role: if idx == 0 { Role::Leader } else { Role::Member },
                        platoon_id,
                        platoon_index: idx,
                        radcom_equipped: false,
                    });
                    members.push(id);
                }
                platoons.push(Platoon {
                    id: platoon_id,
                    ordered_members: members,
                    gaps: vec![config.initial_gap; size - 1],
                    radcom_enabled: false,
                });
                along += platoon_len + spacing;
            }
        }
    }

    let mut order: Vec<u32> = (0..platoons.len() as u32).collect();
    order.shuffle(&mut rng_stream(config.seed, u32::MAX - 1, StreamPurpose::World));

    let world = World {
        road_length: config.road_length,
        lane_width: config.lane_width,
        vehicles,
        platoons,
        penetration_order: order,
    };
    Ok(assign_penetration(world, config.penetration_rate, None))
}

/// Marks `floor(rate * platoons)` platoons as RadCom-enabled.
///
/// With `seed == None` the world's own permutation is used, which makes the
/// enabled set nested across rates. A `Some(seed)` reshuffles first.
pub fn assign_penetration(mut world: World, rate: f64, seed: Option<u64>) -> World {
    let rate = rate.clamp(0.0, 1.0);
    if let Some(seed) = seed {
        let mut order: Vec<u32> = (0..world.platoons.len() as u32).collect();
        order.shuffle(&mut rng_stream(seed, u32::MAX - 1, StreamPurpose::World));
        world.penetration_order = order;
    }
    let n = world.platoons.len();
    let enabled = ((rate * n as f64) + 1e-9).floor() as usize;
    let enabled = enabled.min(n);
    for p in world.platoons.iter_mut() {
        p.radcom_enabled = false;
    }
    for &pid in &world.penetration_order[..enabled] {
        world.platoons[pid as usize].radcom_enabled = true;
    }
    for v in world.vehicles.iter_mut() {
        v.radcom_equipped = world.platoons[v.platoon_id as usize].radcom_enabled;
    }
    world
}

#[cfg(test)]
mod tests {
    use super::*;
    use std::collections::HashSet;

    #[test]
    fn default_road_has_1200_vehicles() {
        let w = build_world(&ScenarioConfig::default()).unwrap();
        assert_eq!(w.vehicles.len(), 1200);
        for lane in 0..4 {
            for dir in [Direction::East, Direction::West] {
                let n = w.vehicles.iter().filter(|v| v.lane == lane && v.direction == dir).count();
                assert_eq!(n, 150);
            }
        }
    }

    #[test]
    fn platoons_partition_vehicles_with_one_leader_each() {
        let w = build_world(&ScenarioConfig::default()).unwrap();
        let mut seen = HashSet::new();
        for p in &w.platoons {
            let leaders = p
                .ordered_members
                .iter()
                .filter(|&&id| w.vehicles[id as usize].role == Role::Leader)
                .count();
            assert_eq!(leaders, 1);
            assert_eq!(w.vehicles[p.ordered_members[0] as usize].role, Role::Leader);
            assert!(p.ordered_members.len() >= 3 && p.ordered_members.len() <= 4);
            assert!(p.gaps.iter().all(|&g| g > 0.0));
            for &id in &p.ordered_members {
                assert!(seen.insert(id));
                assert_eq!(w.vehicles[id as usize].platoon_id, p.id);
            }
        }
        assert_eq!(seen.len(), w.vehicles.len());
    }

    #[test]
    fn bumper_gaps_match_layout() {
        let w = build_world(&ScenarioConfig::default()).unwrap();
        for p in w.platoons.iter().take(20) {
            for (i, pair) in p.ordered_members.windows(2).enumerate() {
                let front = &w.vehicles[pair[0] as usize];
                let back = &w.vehicles[pair[1] as usize];
                let centre = w.ring_delta(back.position, front.position).abs();
                assert!((centre - back.length - p.gaps[i]).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn positions_are_in_range_and_distinct() {
        let w = build_world(&ScenarioConfig::default()).unwrap();
        let mut pts = HashSet::new();
        for v in &w.vehicles {
            assert!(v.position >= 0.0 && v.position < w.road_length);
            assert!(pts.insert(((v.position * 1e6) as i64, (w.lateral(v.id) * 1e3) as i64)));
        }
    }

    #[test]
    fn one_vehicle_per_lane_cannot_form_platoon() {
        let cfg = ScenarioConfig { density: 0.2, platoon_size: 2, platoon_size_min: 2, ..Default::default() };
        assert!(matches!(build_world(&cfg), Err(ScenarioError::TooFewVehicles { .. })));
    }

    #[test]
    fn overfull_lane_is_rejected() {
        let cfg = ScenarioConfig { density: 60.0, ..Default::default() };
        assert!(matches!(build_world(&cfg), Err(ScenarioError::Infeasible { .. })));
    }

    #[test]
    fn build_is_deterministic() {
        let a = build_world(&ScenarioConfig::default()).unwrap();
        let b = build_world(&ScenarioConfig::default()).unwrap();
        assert_eq!(format!("{a:?}"), format!("{b:?}"));
        let c = build_world(&ScenarioConfig { seed: 2, ..Default::default() }).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn penetration_counts() {
        let w = build_world(&ScenarioConfig::default()).unwrap();
        let n = w.platoons.len();
        assert_eq!(assign_penetration(w.clone(), 0.0, None).enabled_platoons(), 0);
        assert_eq!(assign_penetration(w.clone(), 1.0, None).enabled_platoons(), n);
        assert_eq!(assign_penetration(w.clone(), 0.5, None).enabled_platoons(), n / 2);
    }

    #[test]
    fn half_of_300_platoons() {
        // 10 lanes of 150 vehicles in platoons of exactly 5 gives 30 per lane, 300 total.
        let cfg = ScenarioConfig { lanes_per_direction: 5, platoon_size: 5, platoon_size_min: 5, ..Default::default() };
        let w = build_world(&cfg).unwrap();
        assert_eq!(w.platoons.len(), 300);
        let a = assign_penetration(w.clone(), 0.5, Some(9));
        let b = assign_penetration(w, 0.5, Some(9));
        assert_eq!(a.enabled_platoons(), 150);
        assert_eq!(a.platoons, b.platoons);
    }

    #[test]
    fn enabled_platoons_have_equipped_members() {
        let w = assign_penetration(build_world(&ScenarioConfig::default()).unwrap(), 0.5, None);
        for p in &w.platoons {
            for &id in &p.ordered_members {
                assert_eq!(w.vehicles[id as usize].radcom_equipped, p.radcom_enabled);
            }
        }
    }

    #[test]
    fn platoon_length_range_partitions_lane() {
        let cfg = ScenarioConfig { platoon_size: 6, platoon_size_min: 2, ..Default::default() };
        let w = build_world(&cfg).unwrap();
        assert_eq!(w.vehicles.len(), 1200);
        assert!(w.platoons.iter().all(|p| (2..=6).contains(&p.ordered_members.len())));
    }

    #[test]
    fn invalid_pcm_rate_rejected() {
        let cfg = ScenarioConfig { pcm_period: 0.01, ..Default::default() };
        assert!(cfg.validate().is_err());
        let cfg = ScenarioConfig { pcm_period: 2.0, ..Default::default() };
        assert!(cfg.validate().is_err());
    }
}
