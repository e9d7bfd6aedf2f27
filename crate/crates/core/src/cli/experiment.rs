//! Penetration sweep: simulation runs, aggregation, safety gaps, fuel and output files.

use std::fmt::Write as _;
use std::fs;
use std::io::BufWriter;
use std::path::{Path, PathBuf};

use rayon::prelude::*;

use super::config::{Config, DragMultiplier, GapPath};
use crate::engine::replication_seed;
use crate::facilities::service_bytes;
use crate::fuel::{calibrate_multiplier, platoon_fuel_saving, Calibration, FuelError, SavingTarget};
use crate::mac::Service;
use crate::metrics::{mean_sd, NetCounts, NetStats};
use crate::network::{Network, RunOutput, SimConfig, SimError};
use crate::safety::{platoon_gaps, DelayInput, GapReport, SafetyError};
use crate::scenario::{assign_penetration, build_world, ScenarioError};

/// Savings the drag multiplier is fitted to: (penetration, saving, tolerance).
pub const SAVING_TARGETS: [(f64, f64, f64); 2] = [(0.5, 0.02, 0.01), (1.0, 0.056, 0.015)];
pub const MULTIPLIER_RANGE: (f64, f64) = (0.5, 2.0);

#[derive(Debug, thiserror::Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Scenario(#[from] ScenarioError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Safety(#[from] SafetyError),
    #[error(transparent)]
    Fuel(#[from] FuelError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("no ITS-G5 PCM was expected at penetration {0}")]
    NoPcm(f64),
}

#[derive(Debug, Clone)]
pub struct RunSpec {
    pub config: Config,
    pub out_dir: PathBuf,
    /// Write one event dump per run next to the CSVs.
    pub trace: bool,
}

/// One (penetration, replication) run, stripped of bulky records.
#[derive(Debug, Clone)]
pub struct Replication {
    pub index: u32,
    pub seed: u64,
    pub counts: NetCounts,
    pub stats: NetStats,
    pub scbr_series: Vec<(f64, f64)>,
    pub pcm_generated_per_vehicle: Vec<u32>,
    pub trace_hash: u64,
    pub events: u64,
    pub g5_transmissions: u64,
}

#[derive(Debug, Clone)]
pub struct RateResult {
    pub penetration: f64,
    pub replications: Vec<Replication>,
    /// Pooled over replications.
    pub stats: NetStats,
    pub pdr_sd: f64,
    pub scbr_sd: f64,
    pub latency_sd: f64,
}

#[derive(Debug, Clone)]
pub struct Sweep {
    pub config: Config,
    pub rates: Vec<RateResult>,
    pub gaps: Vec<GapReport>,
    /// Multiplier actually applied to the trailing drag table.
    pub multiplier: f64,
    /// Present when the multiplier was fitted.
    pub calibration: Option<Calibration>,
    /// Saving of every rate relative to the first one.
    pub savings: Vec<f64>,
}

fn run_one(config: &Config, penetration: f64, rep: u32, trace: Option<PathBuf>) -> Result<Replication, ExperimentError> {
    let seed = replication_seed(config.scenario.seed, rep);
    let mut scenario = config.scenario.clone();
    scenario.seed = seed;
    scenario.penetration_rate = penetration;
    let world = assign_penetration(build_world(&scenario)?, penetration, None);
    let mut cfg = SimConfig::from_scenario(&scenario, config.phy.clone(), config.mac.clone(), config.radcom.clone(), config.pcm_unicast);
    cfg.pdr_distance = config.pdr_distance;
    let mut net = Network::new(world, cfg)?;
    if let Some(path) = trace {
        net.set_trace(Box::new(BufWriter::new(fs::File::create(path)?)));
    }
    let out: RunOutput = net.run()?;
    Ok(Replication {
        index: rep,
        seed,
        stats: out.counts.stats(),
        counts: out.counts,
        scbr_series: out.scbr_series,
        pcm_generated_per_vehicle: out.pcm_generated_per_vehicle,
        trace_hash: out.trace_hash,
        events: out.events,
        g5_transmissions: out.g5_transmissions,
    })
}

fn aggregate(penetration: f64, replications: Vec<Replication>) -> RateResult {
    let mut pooled = NetCounts::default();
    for r in &replications {
        pooled.merge(&r.counts);
    }
    let sd = |f: &dyn Fn(&NetStats) -> Option<f64>| {
        let v: Vec<f64> = replications.iter().filter_map(|r| f(&r.stats)).collect();
        mean_sd(&v).1
    };
    RateResult {
        penetration,
        pdr_sd: sd(&|s| s.pdr),
        scbr_sd: sd(&|s| Some(s.scbr_mean)),
        latency_sd: sd(&|s| s.mean_latency.map(|l| l * 1e3)),
        stats: pooled.stats(),
        replications,
    }
}

fn trace_name(penetration: f64, rep: u32) -> String {
    format!("trace_p{penetration}_r{rep}.txt")
}

/// Runs every (penetration, replication) pair; results come back in sweep order.
pub fn simulate_rates(config: &Config, trace_dir: Option<&Path>) -> Result<Vec<RateResult>, ExperimentError> {
    let jobs: Vec<(f64, u32)> = config
        .penetrations
        .iter()
        .flat_map(|&p| (0..config.replications).map(move |r| (p, r)))
        .collect();
    let runs = jobs
        .par_iter()
        .map(|&(p, r)| run_one(config, p, r, trace_dir.map(|d| d.join(trace_name(p, r)))))
        .collect::<Result<Vec<_>, _>>()?;
    let mut runs = runs.into_iter();
    Ok(config
        .penetrations
        .iter()
        .map(|&p| aggregate(p, runs.by_ref().take(config.replications as usize).collect()))
        .collect())
}

/// Delay inputs of members 1..N-1 for one penetration rate.
fn delay_inputs(config: &Config, rate: &RateResult) -> Result<Vec<DelayInput>, ExperimentError> {
    let members = config.scenario.platoon_size - 1;
    let period = config.scenario.pcm_period;
    let (Some(pdr), Some(latency)) = (rate.stats.pdr, rate.stats.mean_latency) else {
        return Err(ExperimentError::NoPcm(rate.penetration));
    };
    Ok(vec![DelayInput { pdr, mean_latency: latency, period }; members])
}

fn gap_report(config: &Config, rate: &RateResult) -> Result<GapReport, ExperimentError> {
    let g5 = platoon_gaps(&config.braking, rate.penetration, &delay_inputs(config, rate)?)?;
    match config.gap_path {
        GapPath::G5 => Ok(g5),
        GapPath::Plan => {
            let bytes = service_bytes(Service::Pcm);
            let radcom: Vec<DelayInput> = (1..config.scenario.platoon_size)
                .map(|i| DelayInput {
                    pdr: config.radcom.delivery_probability(i),
                    mean_latency: i as f64 * config.radcom.hop_delay(bytes),
                    period: config.scenario.pcm_period,
                })
                .collect();
            let rc = platoon_gaps(&config.braking, rate.penetration, &radcom)?;
            let f = rate.penetration;
            let mut mixed = g5;
            for (m, r) in mixed.pairs.iter_mut().zip(&rc.pairs) {
                m.tau = (1.0 - f) * m.tau + f * r.tau;
                m.gap = (1.0 - f) * m.gap + f * r.gap;
            }
            Ok(mixed)
        }
    }
}

/// Simulates the sweep and derives gaps and fuel savings.
pub fn run_sweep(config: &Config, trace_dir: Option<&Path>) -> Result<Sweep, ExperimentError> {
    let rates = simulate_rates(config, trace_dir)?;
    analyze(config, rates)
}

/// Gap reports and fuel savings from already simulated rates.
pub fn analyze(config: &Config, rates: Vec<RateResult>) -> Result<Sweep, ExperimentError> {
    let gaps = rates.iter().map(|r| gap_report(config, r)).collect::<Result<Vec<_>, _>>()?;
    let v = config.braking.v0;
    let baseline = gaps[0].gaps();
    let find = |p: f64| config.penetrations.iter().position(|x| (x - p).abs() < 1e-12);
    let (multiplier, calibration) = match config.drag_multiplier {
        DragMultiplier::Fixed(m) => (m, None),
        DragMultiplier::Auto => {
            let indices: Option<Vec<usize>> = SAVING_TARGETS.iter().map(|t| find(t.0)).collect();
            match (find(0.0), indices) {
                (Some(0), Some(idx)) => {
                    let targets: Vec<SavingTarget> = idx
                        .iter()
                        .zip(SAVING_TARGETS)
                        .map(|(&i, (_, saving, tolerance))| SavingTarget { gaps: gaps[i].gaps(), saving, tolerance })
                        .collect();
                    let c = calibrate_multiplier(&baseline, &targets, v, &config.aero, &config.drag, MULTIPLIER_RANGE)?;
                    (c.multiplier, Some(c))
                }
                _ => (config.drag.multiplier, None),
            }
        }
    };
    let curve = config.drag.with_multiplier(multiplier);
    let savings = gaps
        .iter()
        .map(|g| platoon_fuel_saving(&baseline, &g.gaps(), v, &config.aero, &curve))
        .collect::<Result<Vec<_>, _>>()?;
    Ok(Sweep { config: config.clone(), rates, gaps, multiplier, calibration, savings })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "nan".into(), |v| format!("{v:.6}"))
}

impl Sweep {
    pub fn summary_csv(&self) -> String {
        let mut o = String::from("penetration,pdr_pcm,pdr_sd,scbr,scbr_sd,latency_ms,latency_sd\n");
        for r in &self.rates {
            let _ = writeln!(
                o,
                "{},{},{:.6},{:.6},{:.6},{},{:.6}",
                r.penetration,
                opt(r.stats.pdr),
                r.pdr_sd,
                r.stats.scbr_mean,
                r.scbr_sd,
                opt(r.stats.mean_latency.map(|l| l * 1e3)),
                r.latency_sd
            );
        }
        o
    }

    /// Mean over replications at each sampling instant.
    pub fn scbr_timeseries_csv(&self) -> String {
        let mut o = String::from("penetration,t_s,scbr\n");
        for r in &self.rates {
            let n = r.replications.iter().map(|x| x.scbr_series.len()).min().unwrap_or(0);
            for i in 0..n {
                let t = r.replications[0].scbr_series[i].0;
                let s = r.replications.iter().map(|x| x.scbr_series[i].1).sum::<f64>() / r.replications.len() as f64;
                let _ = writeln!(o, "{},{t:.3},{s:.6}", r.penetration);
            }
        }
        o
    }

    pub fn gaps_csv(&self) -> String {
        let mut o = String::from("penetration,pair_index,tau_s,gap_m\n");
        for g in &self.gaps {
            for p in &g.pairs {
                let _ = writeln!(o, "{},{},{:.6},{:.6}", g.penetration, p.pair_index, p.tau, p.gap);
            }
        }
        o
    }

    pub fn fuel_csv(&self) -> String {
        let mut o = String::from("penetration,mean_gap_m,saving_fraction\n");
        for (g, s) in self.gaps.iter().zip(&self.savings) {
            let _ = writeln!(o, "{},{:.6},{:.6}", g.penetration, g.mean_gap(), s);
        }
        o
    }

    pub fn trace_hashes_csv(&self) -> String {
        let mut o = String::from("penetration,replication,seed,trace_hash,events\n");
        for r in &self.rates {
            for x in &r.replications {
                let _ = writeln!(o, "{},{},{},{:016x},{}", r.penetration, x.index, x.seed, x.trace_hash, x.events);
            }
        }
        o
    }

    /// Every key with its effective value; the drag multiplier is pinned to the one applied.
    pub fn resolved_config(&self) -> String {
        let mut c = self.config.clone();
        c.drag_multiplier = DragMultiplier::Fixed(self.multiplier);
        let mut o = String::new();
        match &self.calibration {
            Some(cal) => {
                let _ = writeln!(
                    o,
                    "# drag_multiplier fitted in [{}, {}]: score {:.4} ({}), savings {}",
                    MULTIPLIER_RANGE.0,
                    MULTIPLIER_RANGE.1,
                    cal.score,
                    if cal.satisfied() { "all targets met" } else { "targets not met" },
                    cal.savings.iter().map(|s| format!("{s:.5}")).collect::<Vec<_>>().join(",")
                );
            }
            None => {
                let _ = writeln!(o, "# drag_multiplier fixed");
            }
        }
        o.push_str(&c.render());
        o
    }

    pub fn files(&self) -> Vec<(&'static str, String)> {
        vec![
            ("summary.csv", self.summary_csv()),
            ("scbr_timeseries.csv", self.scbr_timeseries_csv()),
            ("gaps.csv", self.gaps_csv()),
            ("fuel.csv", self.fuel_csv()),
            ("trace_hashes.csv", self.trace_hashes_csv()),
            ("resolved_config.txt", self.resolved_config()),
        ]
    }
}

/// Removes the staging directory unless defused.
struct Staging(Option<PathBuf>);

impl Drop for Staging {
    fn drop(&mut self) {
        if let Some(p) = self.0.take() {
            let _ = fs::remove_dir_all(p);
        }
    }
}

/// Runs the sweep and writes all outputs. Files appear in `out_dir` only once complete.
pub fn run_experiment(spec: &RunSpec) -> Result<Sweep, ExperimentError> {
    fs::create_dir_all(&spec.out_dir)?;
    let staging = spec.out_dir.join(format!(".staging-{}", std::process::id()));
    let _ = fs::remove_dir_all(&staging);
    fs::create_dir(&staging)?;
    let guard = Staging(Some(staging.clone()));

    let sweep = run_sweep(&spec.config, spec.trace.then_some(staging.as_path()))?;
    for (name, body) in sweep.files() {
        fs::write(staging.join(name), body)?;
    }
    let mut names: Vec<String> = sweep.files().into_iter().map(|(n, _)| n.to_string()).collect();
    if spec.trace {
        for &p in &spec.config.penetrations {
            for r in 0..spec.config.replications {
                names.push(trace_name(p, r));
            }
        }
    }
    for n in &names {
        fs::rename(staging.join(n), spec.out_dir.join(n))?;
    }
    drop(guard);
    Ok(sweep)
}
