//! Delivery, latency and channel-load metrics.
//!
//! Counts are kept raw (delivered, expected, latency sums, busy fractions)
//! so replications combine by adding counts, never by averaging ratios.

use crate::engine::SimTime;
use crate::facilities::Path;
use crate::mac::Service;
use crate::phy::RxOutcome;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Outcome {
    Delivered,
    LostCollision,
    LostWeak,
    LostQueue,
}

impl From<RxOutcome> for Outcome {
    fn from(o: RxOutcome) -> Self {
        match o {
            RxOutcome::Delivered => Outcome::Delivered,
            RxOutcome::LostCollision => Outcome::LostCollision,
            RxOutcome::LostWeak => Outcome::LostWeak,
        }
    }
}

/// One expected reception of one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct RxRecord {
    pub frame: u64,
    pub sender: u32,
    pub receiver: u32,
    /// Sender-receiver distance at transmission start (or at drop time).
    pub distance: f64,
    pub generated_at: SimTime,
    pub received_at: Option<SimTime>,
    pub outcome: Outcome,
    pub service: Service,
    pub path: Path,
}

/// PDR of ITS-G5 `service` frames over receivers within `max_distance`.
/// `None` when nothing was expected.
pub fn pdr(records: &[RxRecord], service: Service, max_distance: f64) -> Option<f64> {
    pdr_on(records, service, Path::G5, max_distance)
}

pub fn pdr_on(records: &[RxRecord], service: Service, path: Path, max_distance: f64) -> Option<f64> {
    let (mut delivered, mut expected) = (0u64, 0u64);
    for r in records.iter().filter(|r| r.service == service && r.path == path && r.distance <= max_distance) {
        expected += 1;
        delivered += u64::from(r.outcome == Outcome::Delivered);
    }
    (expected > 0).then(|| delivered as f64 / expected as f64)
}

/// Mean generation-to-reception latency of delivered ITS-G5 `service` records, seconds.
pub fn latency_stats(records: &[RxRecord], service: Service) -> Option<f64> {
    let lat: Vec<f64> = records
        .iter()
        .filter(|r| r.service == service && r.path == Path::G5 && r.outcome == Outcome::Delivered)
        .filter_map(|r| r.received_at.map(|t| (t - r.generated_at).as_secs_f64()))
        .collect();
    (!lat.is_empty()).then(|| lat.iter().sum::<f64>() / lat.len() as f64)
}

/// One step of the DCC smoothing recurrence.
pub fn scbr_update(prev_s: f64, c_now: f64, c_prev: f64) -> f64 {
    0.5 * prev_s + 0.25 * (c_now + c_prev)
}

/// Raw reception counts for one (service, path).
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct Counts {
    pub expected: u64,
    pub delivered: u64,
    pub lost_collision: u64,
    pub lost_weak: u64,
    pub lost_queue: u64,
    pub latency_sum_ns: u128,
}

impl Counts {
    pub fn add_outcome(&mut self, outcome: Outcome, latency: Option<SimTime>) {
        self.expected += 1;
        match outcome {
            Outcome::Delivered => {
                self.delivered += 1;
                self.latency_sum_ns += u128::from(latency.map_or(0, |l| l.as_nanos()));
            }
            Outcome::LostCollision => self.lost_collision += 1,
            Outcome::LostWeak => self.lost_weak += 1,
            Outcome::LostQueue => self.lost_queue += 1,
        }
    }

    pub fn merge(&mut self, o: &Counts) {
        self.expected += o.expected;
        self.delivered += o.delivered;
        self.lost_collision += o.lost_collision;
        self.lost_weak += o.lost_weak;
        self.lost_queue += o.lost_queue;
        self.latency_sum_ns += o.latency_sum_ns;
    }

    pub fn pdr(&self) -> Option<f64> {
        (self.expected > 0).then(|| self.delivered as f64 / self.expected as f64)
    }

    pub fn mean_latency(&self) -> Option<f64> {
        (self.delivered > 0).then(|| self.latency_sum_ns as f64 * 1e-9 / self.delivered as f64)
    }

    pub fn lost(&self) -> u64 {
        self.lost_collision + self.lost_weak + self.lost_queue
    }
}

fn service_index(s: Service) -> usize {
    match s {
        Service::Cam => 0,
        Service::Pcm => 1,
    }
}

/// Mergeable raw measurement of one run (or a sum of runs).
#[derive(Debug, Clone, Default, PartialEq)]
pub struct NetCounts {
    /// Indexed by `[path][service]`, filtered to the PDR distance.
    pub within: [[Counts; 2]; 2],
    pub scbr_sum: f64,
    pub scbr_samples: u64,
    pub g5_transmissions: [u64; 2],
    pub generated: [u64; 2],
    pub acks_missing: u64,
}

impl NetCounts {
    pub fn counts(&self, path: Path, service: Service) -> &Counts {
        &self.within[path_index(path)][service_index(service)]
    }

    pub fn merge(&mut self, o: &NetCounts) {
        for p in 0..2 {
            for s in 0..2 {
                self.within[p][s].merge(&o.within[p][s]);
            }
        }
        self.scbr_sum += o.scbr_sum;
        self.scbr_samples += o.scbr_samples;
        for s in 0..2 {
            self.g5_transmissions[s] += o.g5_transmissions[s];
            self.generated[s] += o.generated[s];
        }
        self.acks_missing += o.acks_missing;
    }

    pub fn stats(&self) -> NetStats {
        let pcm = self.counts(Path::G5, Service::Pcm);
        let cam = self.counts(Path::G5, Service::Cam);
        let mut all = *pcm;
        all.merge(cam);
        NetStats {
            pdr: pcm.pdr(),
            mean_latency: pcm.mean_latency(),
            scbr_mean: if self.scbr_samples > 0 { self.scbr_sum / self.scbr_samples as f64 } else { 0.0 },
            pdr_cam: cam.pdr(),
            latency_cam: cam.mean_latency(),
            pdr_all: all.pdr(),
            latency_all: all.mean_latency(),
            pdr_radcom: self.counts(Path::RadCom, Service::Pcm).pdr(),
            latency_radcom: self.counts(Path::RadCom, Service::Pcm).mean_latency(),
        }
    }
}

fn path_index(p: Path) -> usize {
    match p {
        Path::G5 => 0,
        Path::RadCom => 1,
    }
}

/// Headline numbers of a run. `pdr` and `mean_latency` are the ITS-G5 PCM figures.
#[derive(Debug, Clone, PartialEq)]
pub struct NetStats {
    pub pdr: Option<f64>,
    /// Seconds.
    pub mean_latency: Option<f64>,
    pub scbr_mean: f64,
    pub pdr_cam: Option<f64>,
    pub latency_cam: Option<f64>,
    pub pdr_all: Option<f64>,
    pub latency_all: Option<f64>,
    pub pdr_radcom: Option<f64>,
    pub latency_radcom: Option<f64>,
}

/// Streaming collector used by the simulator.
#[derive(Debug, Clone)]
pub struct Collector {
    pub window_start: SimTime,
    pub window_end: SimTime,
    pub pdr_distance: f64,
    pub counts: NetCounts,
    pub records: Option<Vec<RxRecord>>,
    /// Node-averaged S-CBR at every sampling instant of the run: `(t_s, scbr)`.
    pub scbr_series: Vec<(f64, f64)>,
    pub pcm_generated_per_vehicle: Vec<u32>,
}

impl Collector {
    pub fn new(window_start: SimTime, window_end: SimTime, pdr_distance: f64, vehicles: usize, keep_records: bool) -> Self {
        Collector {
            window_start,
            window_end,
            pdr_distance,
            counts: NetCounts::default(),
            records: keep_records.then(Vec::new),
            scbr_series: Vec::new(),
            pcm_generated_per_vehicle: vec![0; vehicles],
        }
    }

    /// Half-open measurement window `(start, end]`.
    pub fn in_window(&self, t: SimTime) -> bool {
        t > self.window_start && t <= self.window_end
    }

    pub fn on_generated(&mut self, now: SimTime, vehicle: u32, service: Service) {
        if self.in_window(now) {
            self.counts.generated[service_index(service)] += 1;
            if service == Service::Pcm {
                self.pcm_generated_per_vehicle[vehicle as usize] += 1;
            }
        }
    }

    pub fn on_g5_transmission(&mut self, end: SimTime, service: Service) {
        if self.in_window(end) {
            self.counts.g5_transmissions[service_index(service)] += 1;
        }
    }

    /// Records one expected reception; `at` is the reception (or loss) instant.
    #[allow(clippy::too_many_arguments)]
    pub fn on_reception(
        &mut self,
        at: SimTime,
        frame: u64,
        sender: u32,
        receiver: u32,
        distance: f64,
        generated_at: SimTime,
        outcome: Outcome,
        service: Service,
        path: Path,
    ) {
        if !self.in_window(at) || distance > self.pdr_distance {
            return;
        }
        let latency = (outcome == Outcome::Delivered).then(|| at - generated_at);
        self.counts.within[path_index(path)][service_index(service)].add_outcome(outcome, latency);
        if let Some(recs) = self.records.as_mut() {
            recs.push(RxRecord {
                frame,
                sender,
                receiver,
                distance,
                generated_at,
                received_at: (outcome == Outcome::Delivered).then_some(at),
                outcome,
                service,
                path,
            });
        }
    }

    /// Adds the per-node S-CBR values of one sampling instant.
    pub fn on_scbr(&mut self, at: SimTime, values: impl Iterator<Item = f64>) {
        let (mut sum, mut n) = (0.0, 0u64);
        for v in values {
            sum += v;
            n += 1;
        }
        if n == 0 {
            return;
        }
        self.scbr_series.push((at.as_secs_f64(), sum / n as f64));
        if self.in_window(at) {
            self.counts.scbr_sum += sum;
            self.counts.scbr_samples += n;
        }
    }
}

/// Sample mean and sample standard deviation (n - 1); `sd` is 0 for fewer than two values.
pub fn mean_sd(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let var = values.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, var.sqrt())
}
