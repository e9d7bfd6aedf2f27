//! Line-oriented `key = value` configuration.

use std::fmt::Write as _;

use crate::engine::SimTime;
use crate::fuel::{AeroParams, DragReductionCurve};
use crate::mac::{DccMode, MacParams};
use crate::network::PDR_DISTANCE;
use crate::phy::{mw_to_dbm, PhyConfig};
use crate::radcom::RadComConfig;
use crate::safety::BrakingScenario;
use crate::scenario::ScenarioConfig;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ConfigError {
    #[error("line {line}: {msg}")]
    Line { line: usize, msg: String },
    #[error("invalid configuration: {0}")]
    Invalid(String),
}

fn line_err(line: usize, msg: impl Into<String>) -> ConfigError {
    ConfigError::Line { line, msg: msg.into() }
}

/// Which delay inputs feed the safe-gap computation.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum GapPath {
    /// Every member uses the measured ITS-G5 PCM statistics of its run.
    G5,
    /// Members of offloaded platoons use the RadCom chain; the gap report is
    /// the fleet mean over offloaded and non-offloaded platoons.
    Plan,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DragMultiplier {
    /// Fitted to the reference savings when the sweep contains 0, 0.5 and 1.
    Auto,
    Fixed(f64),
}

#[derive(Debug, Clone, PartialEq)]
pub struct Config {
    pub scenario: ScenarioConfig,
    pub phy: PhyConfig,
    pub mac: MacParams,
    pub pcm_unicast: bool,
    pub radcom: RadComConfig,
    pub braking: BrakingScenario,
    pub aero: AeroParams,
    pub drag: DragReductionCurve,
    pub drag_multiplier: DragMultiplier,
    pub gap_path: GapPath,
    pub pdr_distance: f64,
    pub penetrations: Vec<f64>,
    pub replications: u32,
}

impl Default for Config {
    fn default() -> Self {
        Config {
            scenario: ScenarioConfig::default(),
            phy: PhyConfig::default(),
            mac: MacParams::default(),
            pcm_unicast: false,
            radcom: RadComConfig::default(),
            braking: BrakingScenario::default(),
            aero: AeroParams::default(),
            drag: DragReductionCurve::default(),
            drag_multiplier: DragMultiplier::Auto,
            gap_path: GapPath::G5,
            pdr_distance: PDR_DISTANCE,
            penetrations: vec![0.0, 0.5, 1.0],
            replications: 5,
        }
    }
}

pub fn parse_f64(v: &str) -> Result<f64, String> {
    let x: f64 = v.parse().map_err(|_| format!("expected a number, got {v:?}"))?;
    if !x.is_finite() {
        return Err(format!("expected a finite number, got {v:?}"));
    }
    Ok(x)
}

fn parse_u64(v: &str) -> Result<u64, String> {
    v.parse().map_err(|_| format!("expected a non-negative integer, got {v:?}"))
}

fn parse_bool(v: &str) -> Result<bool, String> {
    match v {
        "true" | "yes" | "1" => Ok(true),
        "false" | "no" | "0" => Ok(false),
        _ => Err(format!("expected true or false, got {v:?}")),
    }
}

pub fn parse_list(v: &str) -> Result<Vec<f64>, String> {
    v.split(',').map(|s| parse_f64(s.trim())).collect()
}

fn in_range(key: &str, x: f64, lo: f64, hi: f64) -> Result<f64, String> {
    if x < lo || x > hi {
        return Err(format!("{key} = {x} out of range [{lo}, {hi}]"));
    }
    Ok(x)
}

fn positive(key: &str, x: f64) -> Result<f64, String> {
    if x <= 0.0 {
        return Err(format!("{key} = {x} out of range, must be > 0"));
    }
    Ok(x)
}

/// Strictly increasing fractions in `[0, 1]`.
pub fn check_penetrations(p: &[f64]) -> Result<(), String> {
    if p.is_empty() {
        return Err("penetrations must not be empty".into());
    }
    if p.iter().any(|x| !(0.0..=1.0).contains(x)) {
        return Err("penetrations out of range [0, 1]".into());
    }
    if p.windows(2).any(|w| w[1] <= w[0]) {
        return Err("penetrations must be strictly increasing".into());
    }
    Ok(())
}

impl Config {
    fn set(&mut self, key: &str, v: &str) -> Result<(), String> {
        let s = &mut self.scenario;
        match key {
            "road_length" => s.road_length = positive(key, parse_f64(v)?)?,
            "lanes_per_direction" => {
                let n = parse_u64(v)?;
                if n == 0 {
                    return Err("lanes_per_direction must be >= 1".into());
                }
                s.lanes_per_direction = n as u32;
            }
            "density" => s.density = positive(key, parse_f64(v)?)?,
            "speed" => s.speed = in_range(key, parse_f64(v)?, 0.0, 70.0)?,
            "platoon_size" => s.platoon_size = in_range(key, parse_u64(v)? as f64, 2.0, 10.0)? as usize,
            "platoon_size_min" => s.platoon_size_min = in_range(key, parse_u64(v)? as f64, 2.0, 10.0)? as usize,
            "penetration_rate" => s.penetration_rate = in_range(key, parse_f64(v)?, 0.0, 1.0)?,
            "warmup" => s.warmup = in_range(key, parse_f64(v)?, 0.0, 1e5)?,
            "measure" => s.measure = positive(key, parse_f64(v)?)?,
            "seed" => s.seed = parse_u64(v)?,
            "pcm_period" => {
                let p = positive(key, parse_f64(v)?)?;
                in_range("PCM rate (1/pcm_period)", 1.0 / p, 1.0, 40.0)?;
                s.pcm_period = p;
            }
            "member_cam_suppression" => s.member_cam_suppression = parse_bool(v)?,
            "vehicle_length" => s.vehicle_length = positive(key, parse_f64(v)?)?,
            "initial_gap" => s.initial_gap = positive(key, parse_f64(v)?)?,
            "lane_width" => s.lane_width = positive(key, parse_f64(v)?)?,
            "cam_heading_delta" => s.cam_rules.heading_delta = positive(key, parse_f64(v)?)?,
            "cam_position_delta" => s.cam_rules.position_delta = positive(key, parse_f64(v)?)?,
            "cam_speed_delta" => s.cam_rules.speed_delta = positive(key, parse_f64(v)?)?,
            "cam_t_min" => s.cam_rules.t_min = SimTime::from_secs_f64(positive(key, parse_f64(v)?)?),
            "cam_t_max" => s.cam_rules.t_max = SimTime::from_secs_f64(positive(key, parse_f64(v)?)?),

            "tx_power" => self.phy.tx_power_mw = positive(key, parse_f64(v)?)?,
            "carrier_freq" => self.phy.carrier_freq = positive(key, parse_f64(v)?)?,
            "bandwidth" => self.phy.bandwidth = positive(key, parse_f64(v)?)?,
            "pathloss_exponent" => self.phy.pathloss_exponent = in_range(key, parse_f64(v)?, 1.0, 6.0)?,
            "cs_threshold" => self.phy.cs_threshold_dbm = in_range(key, parse_f64(v)?, -120.0, -40.0)?,
            "sinr_threshold" => self.phy.sinr_threshold_db = positive(key, parse_f64(v)?)?,
            "noise_floor" => self.phy.noise_floor_dbm = in_range(key, parse_f64(v)?, -150.0, -40.0)?,
            "max_range" => self.phy.max_range = positive(key, parse_f64(v)?)?,
            "data_rate" => {
                let r = parse_f64(v)?;
                crate::mac::bits_per_symbol(r).map_err(|e| e.to_string())?;
                self.phy.data_rate = r;
                self.mac.data_rate = r;
            }

            "queue_capacity" => self.mac.queue_capacity = in_range(key, parse_u64(v)? as f64, 1.0, 1e6)? as usize,
            "retry_limit" => self.mac.retry_limit = parse_u64(v)? as u32,
            "dcc" => {
                self.mac.dcc = match v {
                    "off" => DccMode::Off,
                    "reactive" => DccMode::Reactive,
                    "adaptive" => DccMode::Adaptive,
                    _ => return Err(format!("dcc must be off, reactive or adaptive, got {v:?}")),
                }
            }
            "pcm_unicast" => self.pcm_unicast = parse_bool(v)?,

            "hop_data_rate" => self.radcom.hop_data_rate = positive(key, parse_f64(v)?)?,
            "per_hop_processing" => self.radcom.per_hop_processing = in_range(key, parse_f64(v)?, 0.0, 1.0)?,
            "per_hop_reliability" => {
                let r = parse_f64(v)?;
                if !(r > 0.0 && r <= 1.0) {
                    return Err(format!("per_hop_reliability = {r} out of range (0, 1]"));
                }
                self.radcom.per_hop_reliability = r;
            }
            "max_hop_gap" => self.radcom.max_hop_gap = positive(key, parse_f64(v)?)?,

            "v0" => self.braking.v0 = in_range(key, parse_f64(v)?, 0.0, 70.0)?,
            "a_lead" => self.braking.a_lead = positive(key, parse_f64(v)?)?,
            "a_follow" => {
                let list = parse_list(v)?;
                if list.iter().any(|a| *a <= 0.0) {
                    return Err("a_follow out of range, every value must be > 0".into());
                }
                self.braking.a_follow = list;
            }
            "t_actuation" => self.braking.t_actuation = in_range(key, parse_f64(v)?, 0.0, 10.0)?,
            "epsilon" => {
                let e = parse_f64(v)?;
                if !(e > 0.0 && e < 1.0) {
                    return Err(format!("epsilon = {e} out of range (0, 1)"));
                }
                self.braking.epsilon = e;
            }
            "gap_path" => {
                self.gap_path = match v {
                    "g5" => GapPath::G5,
                    "plan" => GapPath::Plan,
                    _ => return Err(format!("gap_path must be g5 or plan, got {v:?}")),
                }
            }

            "mass" => self.aero.mass = positive(key, parse_f64(v)?)?,
            "cd0" => self.aero.cd0 = positive(key, parse_f64(v)?)?,
            "frontal_area" => self.aero.frontal_area = positive(key, parse_f64(v)?)?,
            "air_density" => self.aero.air_density = positive(key, parse_f64(v)?)?,
            "c_rr" => self.aero.c_rr = positive(key, parse_f64(v)?)?,
            "drivetrain_efficiency" => self.aero.drivetrain_efficiency = in_range(key, parse_f64(v)?, 1e-9, 1.0)?,
            "fuel_energy_density" => self.aero.fuel_energy_density = positive(key, parse_f64(v)?)?,
            "drag_multiplier" => {
                self.drag_multiplier = match v {
                    "auto" => DragMultiplier::Auto,
                    _ => DragMultiplier::Fixed(positive(key, parse_f64(v)?)?),
                }
            }

            "pdr_distance" => self.pdr_distance = positive(key, parse_f64(v)?)?,
            "penetrations" => {
                let p = parse_list(v)?;
                check_penetrations(&p)?;
                self.penetrations = p;
            }
            "replications" => {
                let n = parse_u64(v)?;
                if n == 0 {
                    return Err("replications must be >= 1".into());
                }
                self.replications = n as u32;
            }
            _ => return Err(format!("unknown key {key:?}")),
        }
        Ok(())
    }

    /// Cross-field checks that no single line can decide.
    pub fn validate(&self) -> Result<(), ConfigError> {
        let inv = |e: String| ConfigError::Invalid(e);
        self.scenario.validate().map_err(|e| inv(e.to_string()))?;
        self.phy.validate().map_err(|e| inv(e.to_string()))?;
        self.radcom.validate().map_err(|e| inv(e.to_string()))?;
        self.braking.validate().map_err(|e| inv(e.to_string()))?;
        self.aero.validate().map_err(|e| inv(e.to_string()))?;
        self.drag.validate().map_err(|e| inv(e.to_string()))?;
        check_penetrations(&self.penetrations).map_err(inv)?;
        Ok(())
    }

    /// Renders every key with its effective value.
    pub fn render(&self) -> String {
        let s = &self.scenario;
        let p = &self.phy;
        let b = &self.braking;
        let a = &self.aero;
        let list = |v: &[f64]| v.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(",");
        let mut o = String::new();
        let mut kv = |k: &str, v: String| {
            let _ = writeln!(o, "{k} = {v}");
        };
        kv("road_length", s.road_length.to_string());
        kv("lanes_per_direction", s.lanes_per_direction.to_string());
        kv("density", s.density.to_string());
        kv("speed", s.speed.to_string());
        kv("platoon_size", s.platoon_size.to_string());
        kv("platoon_size_min", s.platoon_size_min.to_string());
        kv("penetration_rate", s.penetration_rate.to_string());
        kv("warmup", s.warmup.to_string());
        kv("measure", s.measure.to_string());
        kv("seed", s.seed.to_string());
        kv("pcm_period", s.pcm_period.to_string());
        kv("member_cam_suppression", s.member_cam_suppression.to_string());
        kv("vehicle_length", s.vehicle_length.to_string());
        kv("initial_gap", s.initial_gap.to_string());
        kv("lane_width", s.lane_width.to_string());
        kv("cam_heading_delta", s.cam_rules.heading_delta.to_string());
        kv("cam_position_delta", s.cam_rules.position_delta.to_string());
        kv("cam_speed_delta", s.cam_rules.speed_delta.to_string());
        kv("cam_t_min", s.cam_rules.t_min.as_secs_f64().to_string());
        kv("cam_t_max", s.cam_rules.t_max.as_secs_f64().to_string());
        kv("tx_power", p.tx_power_mw.to_string());
        kv("carrier_freq", p.carrier_freq.to_string());
        kv("bandwidth", p.bandwidth.to_string());
        kv("pathloss_exponent", p.pathloss_exponent.to_string());
        kv("cs_threshold", p.cs_threshold_dbm.to_string());
        kv("sinr_threshold", p.sinr_threshold_db.to_string());
        kv("noise_floor", p.noise_floor_dbm.to_string());
        kv("max_range", p.max_range.to_string());
        kv("data_rate", p.data_rate.to_string());
        kv("queue_capacity", self.mac.queue_capacity.to_string());
        kv("retry_limit", self.mac.retry_limit.to_string());
        kv(
            "dcc",
            match self.mac.dcc {
                DccMode::Off => "off",
                DccMode::Reactive => "reactive",
                DccMode::Adaptive => "adaptive",
            }
            .into(),
        );
        kv("pcm_unicast", self.pcm_unicast.to_string());
        kv("hop_data_rate", self.radcom.hop_data_rate.to_string());
        kv("per_hop_processing", self.radcom.per_hop_processing.to_string());
        kv("per_hop_reliability", self.radcom.per_hop_reliability.to_string());
        kv("max_hop_gap", self.radcom.max_hop_gap.to_string());
        kv("v0", b.v0.to_string());
        kv("a_lead", b.a_lead.to_string());
        kv("a_follow", list(&b.a_follow));
        kv("t_actuation", b.t_actuation.to_string());
        kv("epsilon", b.epsilon.to_string());
        kv(
            "gap_path",
            match self.gap_path {
                GapPath::G5 => "g5",
                GapPath::Plan => "plan",
            }
            .into(),
        );
        kv("mass", a.mass.to_string());
        kv("cd0", a.cd0.to_string());
        kv("frontal_area", a.frontal_area.to_string());
        kv("air_density", a.air_density.to_string());
        kv("c_rr", a.c_rr.to_string());
        kv("drivetrain_efficiency", a.drivetrain_efficiency.to_string());
        kv("fuel_energy_density", a.fuel_energy_density.to_string());
        kv(
            "drag_multiplier",
            match self.drag_multiplier {
                DragMultiplier::Auto => "auto".into(),
                DragMultiplier::Fixed(m) => m.to_string(),
            },
        );
        kv("pdr_distance", self.pdr_distance.to_string());
        kv("penetrations", list(&self.penetrations));
        kv("replications", self.replications.to_string());
        o
    }
}

/// Parses configuration text; missing keys keep their defaults.
pub fn parse_config(text: &str) -> Result<Config, ConfigError> {
    let mut cfg = Config::default();
    let mut seen = std::collections::HashSet::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let content = raw.split('#').next().unwrap_or("").trim();
        if content.is_empty() {
            continue;
        }
        let Some((key, value)) = content.split_once('=') else {
            return Err(line_err(line, format!("expected `key = value`, got {content:?}")));
        };
        let (key, value) = (key.trim(), value.trim());
        if key.is_empty() || value.is_empty() {
            return Err(line_err(line, format!("expected `key = value`, got {content:?}")));
        }
        if !seen.insert(key.to_string()) {
            return Err(line_err(line, format!("duplicate key {key:?}")));
        }
        cfg.set(key, value).map_err(|m| line_err(line, m))?;
    }
    cfg.validate()?;
    Ok(cfg)
}

/// Carrier-sense range of a lone transmitter at the configured threshold.
pub fn cs_range(phy: &PhyConfig) -> f64 {
    let budget = mw_to_dbm(phy.tx_power_mw) - phy.cs_threshold_dbm;
    let reference = crate::phy::path_loss_db(1.0, phy).unwrap_or(0.0);
    10f64.powf((budget - reference) / (10.0 * phy.pathloss_exponent))
}
