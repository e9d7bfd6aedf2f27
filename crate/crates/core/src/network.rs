//! One simulated run: vehicles generating CAMs and PCMs, EDCA access on a
//! shared ITS-G5 channel, and RadCom chains inside offloaded platoons.

use std::collections::HashMap;
use std::io::Write;

use rand_chacha::ChaCha8Rng;
use rand::Rng;

use crate::engine::{rng_stream, trace_line, EngineError, Event, Scheduler, SimTime, StreamPurpose, TraceHash, TraceKind};
use crate::facilities::{
    apply_offload, cam_check, service_bytes, service_class, CamDecision, CamRules, EmissionPlan, Kinematics, LastCam,
    OffloadPolicy, Path,
};
use crate::mac::{airtime, Addressing, FrameDescriptor, MacError, MacParams, NodeMac, Service, TxGrant, ACK_BYTES, SIFS, SLOT};
use crate::metrics::{scbr_update, Collector, NetCounts, Outcome, RxRecord};
use crate::phy::{Audible, BusyChange, Channel, PhyConfig, PhyError, RxOutcome, TxId, Verdict, CBR_WINDOW};
use crate::radcom::{radcom_deliver, Arrival, RadComConfig, RadComError};
use crate::scenario::{Direction, ScenarioConfig, World};

/// Distance filter of the delivery ratio.
pub const PDR_DISTANCE: f64 = 200.0;

#[derive(Debug, thiserror::Error)]
pub enum SimError {
    #[error(transparent)]
    Engine(#[from] EngineError),
    #[error(transparent)]
    Phy(#[from] PhyError),
    #[error(transparent)]
    Mac(#[from] MacError),
    #[error(transparent)]
    RadCom(#[from] RadComError),
    #[error("trace output failed: {0}")]
    Trace(#[from] std::io::Error),
    #[error("vehicles must share one speed")]
    MixedSpeeds,
}

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub phy: PhyConfig,
    pub mac: MacParams,
    pub radcom: RadComConfig,
    pub policy: OffloadPolicy,
    pub cam_rules: CamRules,
    pub pcm_period: SimTime,
    pub pdr_distance: f64,
    pub seed: u64,
    pub warmup: SimTime,
    pub end: SimTime,
    pub keep_records: bool,
    /// Drive CAM and PCM generation; off for hand-injected test traffic.
    pub traffic: bool,
}

impl SimConfig {
    pub fn from_scenario(s: &ScenarioConfig, phy: PhyConfig, mac: MacParams, radcom: RadComConfig, pcm_unicast: bool) -> Self {
        SimConfig {
            phy,
            mac,
            radcom,
            policy: OffloadPolicy { member_pcm_to_radcom: true, member_cam_suppression: s.member_cam_suppression, pcm_unicast },
            cam_rules: s.cam_rules.clone(),
            pcm_period: SimTime::from_secs_f64(s.pcm_period),
            pdr_distance: PDR_DISTANCE,
            seed: s.seed,
            warmup: s.warmup_time(),
            end: s.end_time(),
            keep_records: false,
            traffic: true,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
enum Ev {
    CamCheck(u32),
    PcmTick(u32),
    Inject { node: u32, service: Service },
    MacTimer { node: u32, gen: u64 },
    DccGate(u32),
    TxStart(u32),
    TxEnd { node: u32, tx: TxId },
    AckStart { from: u32, to: u32 },
    AckTimeout { node: u32, token: u64 },
    RadcomArrival { from: u32, to: u32, frame: u64, generated_at: SimTime, distance: f64 },
    CbrSample,
    MeasureStart,
    MeasureEnd,
}

impl TraceKind for Ev {
    fn name(&self) -> &'static str {
        match self {
            Ev::CamCheck(_) => "cam_check",
            Ev::PcmTick(_) => "pcm_tick",
            Ev::Inject { .. } => "generate",
            Ev::MacTimer { .. } => "access_attempt",
            Ev::DccGate(_) => "dcc_gate",
            Ev::TxStart(_) => "tx_start",
            Ev::TxEnd { .. } => "tx_end",
            Ev::AckStart { .. } => "ack_start",
            Ev::AckTimeout { .. } => "ack_timeout",
            Ev::RadcomArrival { .. } => "radcom_rx",
            Ev::CbrSample => "cbr_sample",
            Ev::MeasureStart => "measure_start",
            Ev::MeasureEnd => "measure_end",
        }
    }

    fn node(&self) -> Option<u32> {
        match *self {
            Ev::CamCheck(n) | Ev::PcmTick(n) | Ev::DccGate(n) | Ev::TxStart(n) => Some(n),
            Ev::Inject { node, .. } | Ev::MacTimer { node, .. } | Ev::TxEnd { node, .. } | Ev::AckTimeout { node, .. } => {
                Some(node)
            }
            Ev::AckStart { from, .. } => Some(from),
            Ev::RadcomArrival { to, .. } => Some(to),
            Ev::CbrSample | Ev::MeasureStart | Ev::MeasureEnd => None,
        }
    }
}

/// Ring-road coordinates. All vehicles share one speed, so the along-road
/// offset between two vehicles of the same direction never changes.
struct Geometry {
    length: f64,
    speed: f64,
    pos0: Vec<f64>,
    east: Vec<bool>,
    lateral: Vec<f64>,
}

impl Geometry {
    fn new(world: &World) -> Result<Self, SimError> {
        let speed = world.vehicles.first().map_or(0.0, |v| v.speed);
        if world.vehicles.iter().any(|v| v.speed != speed) {
            return Err(SimError::MixedSpeeds);
        }
        Ok(Geometry {
            length: world.road_length,
            speed,
            pos0: world.vehicles.iter().map(|v| v.position).collect(),
            east: world.vehicles.iter().map(|v| v.direction == Direction::East).collect(),
            lateral: (0..world.vehicles.len() as u32).map(|i| world.lateral(i)).collect(),
        })
    }

    fn shifts(&self, t: SimTime) -> (f64, f64) {
        let d = self.speed * t.as_secs_f64();
        (d.rem_euclid(self.length), (-d).rem_euclid(self.length))
    }

    fn along(&self, i: usize, shifts: (f64, f64)) -> f64 {
        self.pos0[i] + if self.east[i] { shifts.0 } else { shifts.1 }
    }

    fn wrap(&self, mut d: f64) -> f64 {
        let half = self.length / 2.0;
        while d > half {
            d -= self.length;
        }
        while d <= -half {
            d += self.length;
        }
        d
    }

    fn distance(&self, a: u32, b: u32, t: SimTime) -> f64 {
        let sh = self.shifts(t);
        let dx = self.wrap(self.along(b as usize, sh) - self.along(a as usize, sh));
        dx.hypot(self.lateral[a as usize] - self.lateral[b as usize])
    }

    /// Every other node within `radius` of `src` at `t`, with distance.
    fn neighbors(&self, src: u32, t: SimTime, radius: f64, out: &mut Vec<(u32, f64)>) {
        let sh = self.shifts(t);
        let xs = self.along(src as usize, sh);
        let ys = self.lateral[src as usize];
        let r2 = radius * radius;
        for j in 0..self.pos0.len() {
            if j == src as usize {
                continue;
            }
            let dx = self.wrap(self.along(j, sh) - xs);
            if dx.abs() > radius {
                continue;
            }
            let dy = self.lateral[j] - ys;
            let d2 = dx * dx + dy * dy;
            if d2 <= r2 {
                out.push((j as u32, d2.sqrt()));
            }
        }
    }
}

#[derive(Debug, Clone)]
enum TxInfo {
    Data { frame: FrameDescriptor, ac: usize },
    Ack { to: u32 },
}

#[derive(Debug, Clone, Copy)]
struct AckWait {
    token: u64,
    ac: usize,
    frame: u64,
}

/// Bookkeeping of a unicast frame across its attempts.
#[derive(Debug, Clone, Copy)]
struct UnicastState {
    first_rx: Option<SimTime>,
    last_outcome: Outcome,
    distance: f64,
}

/// Result of one run.
#[derive(Debug, Clone)]
pub struct RunOutput {
    pub counts: NetCounts,
    pub scbr_series: Vec<(f64, f64)>,
    pub pcm_generated_per_vehicle: Vec<u32>,
    pub records: Option<Vec<RxRecord>>,
    pub trace_hash: u64,
    pub events: u64,
    pub queue_drops: u64,
    pub g5_transmissions: u64,
}

pub struct Network {
    world: World,
    plan: EmissionPlan,
    geo: Geometry,
    cfg: SimConfig,
    sched: Scheduler<Ev>,
    channel: Channel,
    macs: Vec<NodeMac>,
    backoff_rng: Vec<ChaCha8Rng>,
    radcom_rng: Vec<ChaCha8Rng>,
    last_cam: Vec<Option<LastCam>>,
    pending_grant: Vec<Option<TxGrant>>,
    ack_wait: Vec<Option<AckWait>>,
    unicast: HashMap<u64, UnicastState>,
    tx_info: HashMap<TxId, TxInfo>,
    scbr: Vec<f64>,
    cbr_prev: Vec<f64>,
    collector: Collector,
    hash: TraceHash,
    trace: Option<Box<dyn Write + Send>>,
    next_frame: u64,
    next_token: u64,
    events: u64,
    g5_transmissions: u64,
    scratch_changes: Vec<BusyChange>,
    scratch_verdicts: Vec<Verdict>,
    scratch_neighbors: Vec<(u32, f64)>,
}

impl Network {
    pub fn new(world: World, cfg: SimConfig) -> Result<Self, SimError> {
        cfg.phy.validate()?;
        cfg.radcom.validate()?;
        airtime(0, cfg.mac.data_rate)?;
        let n = world.vehicles.len();
        let geo = Geometry::new(&world)?;
        let plan = apply_offload(&world, &cfg.policy);
        let mut net = Network {
            channel: Channel::new(&cfg.phy, n),
            macs: (0..n).map(|_| NodeMac::new(cfg.mac.clone())).collect(),
            backoff_rng: (0..n as u32).map(|v| rng_stream(cfg.seed, v, StreamPurpose::Backoff)).collect(),
            radcom_rng: (0..n as u32).map(|v| rng_stream(cfg.seed, v, StreamPurpose::RadcomLoss)).collect(),
            last_cam: vec![None; n],
            pending_grant: vec![None; n],
            ack_wait: vec![None; n],
            unicast: HashMap::new(),
            tx_info: HashMap::new(),
            scbr: vec![0.0; n],
            cbr_prev: vec![0.0; n],
            collector: Collector::new(cfg.warmup, cfg.end, cfg.pdr_distance, n, cfg.keep_records),
            hash: TraceHash::default(),
            trace: None,
            next_frame: 0,
            next_token: 0,
            events: 0,
            g5_transmissions: 0,
            scratch_changes: Vec::new(),
            scratch_verdicts: Vec::new(),
            scratch_neighbors: Vec::new(),
            sched: Scheduler::new(),
            world,
            plan,
            geo,
            cfg,
        };
        net.schedule_initial()?;
        Ok(net)
    }

    /// Writes one line per processed event to `out`.
    pub fn set_trace(&mut self, out: Box<dyn Write + Send>) {
        self.trace = Some(out);
    }

    pub fn world(&self) -> &World {
        &self.world
    }

    pub fn plan(&self) -> &EmissionPlan {
        &self.plan
    }

    pub fn channel(&self) -> &Channel {
        &self.channel
    }

    pub fn collector(&self) -> &Collector {
        &self.collector
    }

    pub fn mac(&self, node: u32) -> &NodeMac {
        &self.macs[node as usize]
    }

    pub fn now(&self) -> SimTime {
        self.sched.now()
    }

    fn schedule_initial(&mut self) -> Result<(), SimError> {
        let cfg = &self.cfg;
        if cfg.traffic {
            let t_min = cfg.cam_rules.t_min.as_nanos();
            let period = cfg.pcm_period.as_nanos();
            for v in 0..self.world.vehicles.len() as u32 {
                let mut jitter = rng_stream(cfg.seed, v, StreamPurpose::Jitter);
                let cam_phase = SimTime(jitter.gen_range(0..t_min));
                let pcm_phase = SimTime(jitter.gen_range(0..period));
                let e = self.plan.vehicles[v as usize];
                if e.cam_g5 {
                    self.sched.schedule(cam_phase, Ev::CamCheck(v))?;
                }
                if e.pcm_g5 || e.pcm_radcom {
                    self.sched.schedule(pcm_phase, Ev::PcmTick(v))?;
                }
            }
        }
        let mut t = CBR_WINDOW;
        while t <= self.cfg.end {
            self.sched.schedule(t, Ev::CbrSample)?;
            t += CBR_WINDOW;
        }
        self.sched.schedule(self.cfg.warmup, Ev::MeasureStart)?;
        self.sched.schedule(self.cfg.end, Ev::MeasureEnd)?;
        Ok(())
    }

    /// Schedules a single message generation at `at` (test traffic).
    pub fn inject(&mut self, node: u32, service: Service, at: SimTime) -> Result<(), SimError> {
        self.sched.schedule(at, Ev::Inject { node, service })?;
        Ok(())
    }

    pub fn run_until(&mut self, t: SimTime) -> Result<(), SimError> {
        if t < self.sched.now() {
            return Err(EngineError::InThePast { at: t, now: self.sched.now() }.into());
        }
        while let Some(ev) = self.sched.pop_until(t) {
            self.handle(ev)?;
        }
        self.sched.advance_to(t);
        Ok(())
    }

    /// Runs to the configured end and returns the measurements.
    pub fn run(mut self) -> Result<RunOutput, SimError> {
        let end = self.cfg.end;
        self.run_until(end)?;
        self.finish()
    }

    pub fn finish(mut self) -> Result<RunOutput, SimError> {
        if let Some(t) = self.trace.as_mut() {
            t.flush()?;
        }
        Ok(RunOutput {
            counts: self.collector.counts,
            scbr_series: self.collector.scbr_series,
            pcm_generated_per_vehicle: self.collector.pcm_generated_per_vehicle,
            records: self.collector.records,
            trace_hash: self.hash.value(),
            events: self.events,
            queue_drops: self.macs.iter().map(|m| m.queue_drops).sum(),
            g5_transmissions: self.g5_transmissions,
        })
    }

    fn handle(&mut self, ev: Event<Ev>) -> Result<(), SimError> {
        self.events += 1;
        self.hash.record(&ev);
        if let Some(t) = self.trace.as_mut() {
            writeln!(t, "{}", trace_line(&ev))?;
        }
        let now = ev.time;
        match ev.kind {
            Ev::CamCheck(v) => self.on_cam_check(now, v)?,
            Ev::PcmTick(v) => self.on_pcm_tick(now, v)?,
            Ev::Inject { node, service } => self.generate(now, node, service, Addressing::Broadcast)?,
            Ev::MacTimer { node, gen } => {
                let grant = self.macs[node as usize].on_timer(now, gen, &mut self.backoff_rng[node as usize]);
                if let Some(g) = grant {
                    self.pending_grant[node as usize] = Some(g);
                    self.sched.schedule(now, Ev::TxStart(node))?;
                }
                self.after_mac(node)?;
            }
            Ev::DccGate(node) => {
                self.macs[node as usize].on_gate(now, &mut self.backoff_rng[node as usize]);
                self.after_mac(node)?;
            }
            Ev::TxStart(node) => self.on_tx_start(now, node)?,
            Ev::TxEnd { node, tx } => self.on_tx_end(now, node, tx)?,
            Ev::AckStart { from, to } => self.on_ack_start(now, from, to)?,
            Ev::AckTimeout { node, token } => self.on_ack_timeout(now, node, token)?,
            Ev::RadcomArrival { from, to, frame, generated_at, distance } => {
                self.collector.on_reception(
                    now,
                    frame,
                    from,
                    to,
                    distance,
                    generated_at,
                    Outcome::Delivered,
                    Service::Pcm,
                    Path::RadCom,
                );
            }
            Ev::CbrSample => self.on_cbr_sample(now),
            Ev::MeasureStart | Ev::MeasureEnd => {}
        }
        Ok(())
    }

    fn after_mac(&mut self, node: u32) -> Result<(), SimError> {
        let mac = &mut self.macs[node as usize];
        if let Some(t) = mac.take_gate_wakeup() {
            self.sched.schedule(t, Ev::DccGate(node))?;
        }
        if let Some((t, gen)) = mac.poll_timer() {
            self.sched.schedule(t, Ev::MacTimer { node, gen })?;
        }
        Ok(())
    }

    fn on_cam_check(&mut self, now: SimTime, v: u32) -> Result<(), SimError> {
        let vehicle = &self.world.vehicles[v as usize];
        let state = Kinematics {
            x: vehicle.speed * now.as_secs_f64(),
            y: self.geo.lateral[v as usize],
            heading: if vehicle.direction == Direction::East { 90.0 } else { 270.0 },
            speed: vehicle.speed,
        };
        if cam_check(&self.cfg.cam_rules, now, state, self.last_cam[v as usize].as_ref()) == CamDecision::Generate {
            self.last_cam[v as usize] = Some(LastCam { time: now, state });
            self.generate(now, v, Service::Cam, Addressing::Broadcast)?;
        }
        self.sched.schedule(now + self.cfg.cam_rules.t_min, Ev::CamCheck(v))?;
        Ok(())
    }

    fn on_pcm_tick(&mut self, now: SimTime, v: u32) -> Result<(), SimError> {
        let routing = self.plan.pcm_tick(v);
        if let Some(addr) = routing.g5 {
            self.generate(now, v, Service::Pcm, addr)?;
        }
        if routing.radcom {
            if routing.g5.is_none() {
                self.collector.on_generated(now, v, Service::Pcm);
            }
            self.send_radcom(now, v)?;
        }
        self.sched.schedule(now + self.cfg.pcm_period, Ev::PcmTick(v))?;
        Ok(())
    }

    fn send_radcom(&mut self, now: SimTime, v: u32) -> Result<(), SimError> {
        let frame = self.next_frame;
        self.next_frame += 1;
        let platoon = self.world.platoon_of(v);
        let src = self.world.vehicles[v as usize].platoon_index;
        let bytes = service_bytes(Service::Pcm);
        let arrivals = radcom_deliver(platoon, src, bytes, now, &self.cfg.radcom, &mut self.radcom_rng[v as usize])?;
        let members = platoon.ordered_members.clone();
        for (to, arrival) in members.into_iter().zip(arrivals) {
            let distance = self.geo.distance(v, to, now);
            match arrival {
                Some(Arrival::At(t)) => {
                    self.sched.schedule(t, Ev::RadcomArrival { from: v, to, frame, generated_at: now, distance })?;
                }
                Some(Arrival::Lost) => self.collector.on_reception(
                    now,
                    frame,
                    v,
                    to,
                    distance,
                    now,
                    Outcome::LostWeak,
                    Service::Pcm,
                    Path::RadCom,
                ),
                None => {}
            }
        }
        Ok(())
    }

    fn generate(&mut self, now: SimTime, v: u32, service: Service, addressing: Addressing) -> Result<(), SimError> {
        self.collector.on_generated(now, v, service);
        let frame = FrameDescriptor {
            id: self.next_frame,
            sender: v,
            payload_bytes: service_bytes(service),
            traffic_class: service_class(service),
            addressing,
            generated_at: now,
            service,
        };
        self.next_frame += 1;
        let dropped = self.macs[v as usize].enqueue(now, frame, &mut self.backoff_rng[v as usize]);
        if let Some(d) = dropped {
            self.record_queue_drop(now, &d);
        }
        self.after_mac(v)
    }

    fn record_queue_drop(&mut self, now: SimTime, frame: &FrameDescriptor) {
        match frame.addressing {
            Addressing::Broadcast => {
                let mut nb = std::mem::take(&mut self.scratch_neighbors);
                nb.clear();
                self.geo.neighbors(frame.sender, now, self.cfg.pdr_distance, &mut nb);
                for &(j, d) in &nb {
                    self.collector.on_reception(
                        now,
                        frame.id,
                        frame.sender,
                        j,
                        d,
                        frame.generated_at,
                        Outcome::LostQueue,
                        frame.service,
                        Path::G5,
                    );
                }
                self.scratch_neighbors = nb;
            }
            Addressing::Unicast(dest) => {
                let d = self.geo.distance(frame.sender, dest, now);
                self.collector.on_reception(
                    now,
                    frame.id,
                    frame.sender,
                    dest,
                    d,
                    frame.generated_at,
                    Outcome::LostQueue,
                    frame.service,
                    Path::G5,
                );
            }
        }
    }

    fn apply_changes(&mut self, now: SimTime, changes: &[BusyChange]) -> Result<(), SimError> {
        for c in changes {
            let mac = &mut self.macs[c.node as usize];
            if c.busy {
                mac.on_busy(now);
            } else {
                mac.on_idle(now);
            }
            self.after_mac(c.node)?;
        }
        Ok(())
    }

    /// Receivers of a transmission from `src` started at `now`.
    fn audible(&mut self, now: SimTime, src: u32, tracked: impl Fn(u32, f64) -> bool) -> Vec<Audible> {
        let mut nb = std::mem::take(&mut self.scratch_neighbors);
        nb.clear();
        self.geo.neighbors(src, now, self.cfg.phy.max_range, &mut nb);
        let prop = &self.channel.prop;
        let out = nb
            .iter()
            .filter_map(|&(j, d)| {
                prop.rx_power(d).map(|p| Audible { node: j, power_mw: p, distance: d, tracked: tracked(j, d) })
            })
            .collect();
        self.scratch_neighbors = nb;
        out
    }

    fn on_tx_start(&mut self, now: SimTime, node: u32) -> Result<(), SimError> {
        let grant = self.pending_grant[node as usize].take().expect("tx start without grant");
        let duration = airtime(grant.frame.payload_bytes, self.cfg.mac.data_rate)?;
        let pdr_distance = self.cfg.pdr_distance;
        let audible = match grant.frame.addressing {
            Addressing::Broadcast => self.audible(now, node, |_, d| d <= pdr_distance),
            Addressing::Unicast(dest) => self.audible(now, node, |j, _| j == dest),
        };
        let mut changes = std::mem::take(&mut self.scratch_changes);
        changes.clear();
        let tx = self.channel.start_tx(now, node, now + duration, audible, &mut changes);
        self.tx_info.insert(tx, TxInfo::Data { frame: grant.frame, ac: grant.ac });
        self.sched.schedule(now + duration, Ev::TxEnd { node, tx })?;
        self.apply_changes(now, &changes)?;
        self.scratch_changes = changes;
        Ok(())
    }

    fn on_ack_start(&mut self, now: SimTime, from: u32, to: u32) -> Result<(), SimError> {
        if self.channel.node(from).is_transmitting() {
            return Ok(());
        }
        let duration = airtime(ACK_BYTES, self.cfg.mac.data_rate)?;
        let audible = self.audible(now, from, |j, _| j == to);
        let mut changes = std::mem::take(&mut self.scratch_changes);
        changes.clear();
        let tx = self.channel.start_tx(now, from, now + duration, audible, &mut changes);
        self.tx_info.insert(tx, TxInfo::Ack { to });
        self.sched.schedule(now + duration, Ev::TxEnd { node: from, tx })?;
        self.apply_changes(now, &changes)?;
        self.scratch_changes = changes;
        Ok(())
    }

    fn on_tx_end(&mut self, now: SimTime, node: u32, tx: TxId) -> Result<(), SimError> {
        let info = self.tx_info.remove(&tx).expect("unknown transmission");
        let mut changes = std::mem::take(&mut self.scratch_changes);
        let mut verdicts = std::mem::take(&mut self.scratch_verdicts);
        changes.clear();
        verdicts.clear();
        let transmission = self.channel.end_tx(now, tx, &mut verdicts, &mut changes);
        match info {
            TxInfo::Data { frame, ac } => {
                self.g5_transmissions += 1;
                self.collector.on_g5_transmission(now, frame.service);
                self.macs[node as usize].on_tx_end(now, &mut self.backoff_rng[node as usize]);
                self.apply_changes(now, &changes)?;
                self.after_mac(node)?;
                match frame.addressing {
                    Addressing::Broadcast => {
                        for v in &verdicts {
                            self.collector.on_reception(
                                now,
                                frame.id,
                                node,
                                v.node,
                                v.distance,
                                frame.generated_at,
                                v.outcome.into(),
                                frame.service,
                                Path::G5,
                            );
                        }
                    }
                    Addressing::Unicast(dest) => {
                        let verdict = verdicts.iter().find(|v| v.node == dest);
                        let outcome = verdict.map_or(Outcome::LostWeak, |v| v.outcome.into());
                        let distance = self.geo.distance(node, dest, transmission.start);
                        let st = self.unicast.entry(frame.id).or_insert(UnicastState {
                            first_rx: None,
                            last_outcome: outcome,
                            distance,
                        });
                        st.last_outcome = outcome;
                        st.distance = distance;
                        if outcome == Outcome::Delivered {
                            st.first_rx.get_or_insert(now);
                            self.sched.schedule(now + SIFS, Ev::AckStart { from: dest, to: node })?;
                        }
                        let token = self.next_token;
                        self.next_token += 1;
                        self.ack_wait[node as usize] = Some(AckWait { token, ac, frame: frame.id });
                        let ack_air = airtime(ACK_BYTES, self.cfg.mac.data_rate)?;
                        self.sched.schedule(now + SIFS + ack_air + SLOT, Ev::AckTimeout { node, token })?;
                    }
                }
            }
            TxInfo::Ack { to } => {
                self.apply_changes(now, &changes)?;
                let acked = verdicts.iter().any(|v| v.node == to && v.outcome == RxOutcome::Delivered);
                if acked {
                    if let Some(w) = self.ack_wait[to as usize].take() {
                        let done = self.macs[to as usize].on_ack(now, w.ac, &mut self.backoff_rng[to as usize]);
                        if let Some(f) = done {
                            self.finish_unicast(&f);
                        }
                        self.after_mac(to)?;
                    }
                }
            }
        }
        self.scratch_changes = changes;
        self.scratch_verdicts = verdicts;
        Ok(())
    }

    fn on_ack_timeout(&mut self, now: SimTime, node: u32, token: u64) -> Result<(), SimError> {
        let Some(w) = self.ack_wait[node as usize] else { return Ok(()) };
        if w.token != token {
            return Ok(());
        }
        self.ack_wait[node as usize] = None;
        self.collector.counts.acks_missing += u64::from(self.collector.in_window(now));
        let dropped = self.macs[node as usize].on_ack_timeout(now, w.ac, &mut self.backoff_rng[node as usize]);
        if let Some(f) = dropped {
            debug_assert_eq!(f.id, w.frame);
            self.finish_unicast(&f);
        }
        self.after_mac(node)
    }

    /// Final verdict of a unicast frame once it is acknowledged or abandoned.
    fn finish_unicast(&mut self, frame: &FrameDescriptor) {
        let Addressing::Unicast(dest) = frame.addressing else { return };
        let Some(st) = self.unicast.remove(&frame.id) else { return };
        let (at, outcome) = match st.first_rx {
            Some(t) => (t, Outcome::Delivered),
            None => (self.sched.now(), st.last_outcome),
        };
        self.collector.on_reception(
            at,
            frame.id,
            frame.sender,
            dest,
            st.distance,
            frame.generated_at,
            outcome,
            frame.service,
            Path::G5,
        );
    }

    fn on_cbr_sample(&mut self, now: SimTime) {
        for n in 0..self.macs.len() {
            let c = self.channel.cbr_sample(n as u32, now);
            let s = scbr_update(self.scbr[n], c, self.cbr_prev[n]);
            self.scbr[n] = s;
            self.cbr_prev[n] = c;
            self.macs[n].dcc.on_scbr(s);
        }
        self.channel.start_cbr_window(now);
        self.collector.on_scbr(now, self.scbr.iter().copied());
    }
}

/// Builds and runs one complete simulation.
pub fn simulate(world: World, cfg: SimConfig) -> Result<RunOutput, SimError> {
    Network::new(world, cfg)?.run()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::scenario::{build_world, Platoon, Role, Vehicle};

    fn pair_world(gap: f64) -> World {
        let mk = |id: u32, pos: f64, role| Vehicle {
            id,
            lane: 0,
            direction: Direction::East,
            position: pos,
            speed: 22.2,
            length: 16.0,
            role,
            platoon_id: 0,
            platoon_index: id as usize,
            radcom_equipped: false,
        };
        World {
            road_length: 5000.0,
            lane_width: 3.5,
            vehicles: vec![mk(0, 100.0 + gap, Role::Leader), mk(1, 100.0, Role::Member)],
            platoons: vec![Platoon { id: 0, ordered_members: vec![0, 1], gaps: vec![gap - 16.0], radcom_enabled: false }],
            penetration_order: vec![0],
        }
    }

    fn quiet_cfg() -> SimConfig {
        let mut c = SimConfig::from_scenario(
            &ScenarioConfig::default(),
            PhyConfig::default(),
            MacParams::default(),
            RadComConfig::default(),
            false,
        );
        c.traffic = false;
        c.keep_records = true;
        c.warmup = SimTime::ZERO;
        c.end = SimTime::from_millis(500);
        c
    }

    #[test]
    fn geometry_matches_world_distance() {
        let mut s = ScenarioConfig::default();
        s.density = 4.0;
        let w = build_world(&s).unwrap();
        let g = Geometry::new(&w).unwrap();
        for t in [SimTime::ZERO, SimTime::from_millis(12_345), SimTime::from_secs_f64(149.9)] {
            for (a, b) in [(0u32, 5u32), (3, 30), (1, 60), (10, 40)] {
                let expect = w.distance_at(a, b, t);
                assert!((g.distance(a, b, t) - expect).abs() < 1e-6, "{a} {b} {t}");
            }
        }
    }

    #[test]
    fn lone_frame_reaches_neighbor() {
        let mut net = Network::new(pair_world(40.0), quiet_cfg()).unwrap();
        net.inject(0, Service::Pcm, SimTime::from_millis(10)).unwrap();
        let out = net.run().unwrap();
        let recs = out.records.unwrap();
        assert_eq!(recs.len(), 1);
        assert_eq!(recs[0].outcome, Outcome::Delivered);
        assert_eq!(recs[0].receiver, 1);
        assert_eq!(out.g5_transmissions, 1);
    }

    #[test]
    fn unicast_frame_is_acknowledged_once() {
        let mut cfg = quiet_cfg();
        cfg.traffic = true;
        cfg.policy.pcm_unicast = true;
        cfg.policy.member_cam_suppression = true;
        let out = Network::new(pair_world(40.0), cfg).unwrap().run().unwrap();
        let pcm = out.counts.counts(Path::G5, Service::Pcm);
        // one PCM per vehicle, each to the other vehicle
        assert_eq!(pcm.expected, 2);
        assert_eq!(pcm.delivered, 2);
        assert_eq!(out.counts.acks_missing, 0);
    }

    #[test]
    fn cbr_of_one_frame_is_exact() {
        let mut cfg = quiet_cfg();
        cfg.end = SimTime::from_millis(100);
        let mut net = Network::new(pair_world(40.0), cfg).unwrap();
        net.inject(0, Service::Cam, SimTime::from_millis(10)).unwrap();
        let out = net.run().unwrap();
        // both nodes (sender included) were busy for exactly one airtime
        let (_, s) = out.scbr_series[0];
        assert!((s - 0.25 * 0.00424).abs() < 1e-15, "{s}");
    }
}
