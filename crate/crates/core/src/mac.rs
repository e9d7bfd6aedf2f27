//! EDCA channel access for ITS-G5 (10 MHz OFDM).
//!
//! Every node runs four access categories. The head frame of a category
//! counts down AIFS and then a uniform backoff in idle slots; the countdown
//! freezes while the medium is busy. Broadcast frames are sent once. The
//! optional DCC gate sits in front of the categories and releases one frame
//! at a time.

use std::collections::VecDeque;

use rand::Rng;

use crate::engine::SimTime;

pub const SIFS: SimTime = SimTime::from_micros(32);
pub const SLOT: SimTime = SimTime::from_micros(13);
/// PLCP preamble plus SIGNAL field.
pub const PREAMBLE: SimTime = SimTime::from_micros(40);
pub const SYMBOL: SimTime = SimTime::from_micros(8);
/// SERVICE (16) plus tail (6) bits.
pub const SERVICE_TAIL_BITS: u64 = 22;
pub const ACK_BYTES: usize = 14;
pub const DEFAULT_QUEUE_CAPACITY: usize = 10;
pub const DEFAULT_RETRY_LIMIT: u32 = 7;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum MacError {
    #[error("unsupported data rate {0} bit/s (supported: 3, 6, 12 Mbit/s)")]
    UnsupportedRate(f64),
    #[error("invalid access category: {0}")]
    InvalidCategory(&'static str),
}

/// Bits carried by one OFDM symbol at a 10 MHz data rate.
pub fn bits_per_symbol(data_rate: f64) -> Result<u64, MacError> {
    match data_rate {
        r if r == 3e6 => Ok(24),
        r if r == 6e6 => Ok(48),
        r if r == 12e6 => Ok(96),
        r => Err(MacError::UnsupportedRate(r)),
    }
}

/// On-air duration of a frame of `payload_bytes`.
pub fn airtime(payload_bytes: usize, data_rate: f64) -> Result<SimTime, MacError> {
    let bps = bits_per_symbol(data_rate)?;
    let bits = SERVICE_TAIL_BITS + 8 * payload_bytes as u64;
    Ok(PREAMBLE + SYMBOL * bits.div_ceil(bps))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum TrafficClass {
    Tc0,
    Tc1,
    Tc2,
    Tc3,
}

impl TrafficClass {
    /// Access category index; lower is higher priority (VO, VI, BE, BK).
    pub fn ac_index(self) -> usize {
        self as usize
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct AccessCategory {
    pub aifsn: u32,
    pub cw_min: u32,
    pub cw_max: u32,
}

impl AccessCategory {
    pub fn validate(&self) -> Result<(), MacError> {
        if self.cw_min > self.cw_max {
            return Err(MacError::InvalidCategory("cw_min > cw_max"));
        }
        if self.aifsn < 2 {
            return Err(MacError::InvalidCategory("aifsn < 2"));
        }
        Ok(())
    }

    pub fn aifs(&self) -> SimTime {
        SIFS + SLOT * u64::from(self.aifsn)
    }
}

/// ITS-G5 EDCA profile: TC0..TC3 map onto AC_VO, AC_VI, AC_BE, AC_BK.
pub const ITS_G5_CATEGORIES: [AccessCategory; 4] = [
    AccessCategory { aifsn: 2, cw_min: 3, cw_max: 7 },
    AccessCategory { aifsn: 3, cw_min: 7, cw_max: 15 },
    AccessCategory { aifsn: 6, cw_min: 15, cw_max: 1023 },
    AccessCategory { aifsn: 9, cw_min: 15, cw_max: 1023 },
];

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Service {
    Cam,
    Pcm,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Addressing {
    Broadcast,
    Unicast(u32),
}

#[derive(Debug, Clone, PartialEq)]
pub struct FrameDescriptor {
    pub id: u64,
    pub sender: u32,
    pub payload_bytes: usize,
    pub traffic_class: TrafficClass,
    pub addressing: Addressing,
    pub generated_at: SimTime,
    pub service: Service,
}

/// Decentralized congestion control gate in front of the access categories.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DccMode {
    Off,
    /// Fixed state table keyed by smoothed CBR.
    Reactive,
    /// Linear adaptive duty-cycle control towards a target CBR.
    Adaptive,
}

/// Reactive state table: (upper CBR bound, minimum packet interval).
pub const REACTIVE_TABLE: [(f64, SimTime); 5] = [
    (0.30, SimTime::from_millis(60)),
    (0.40, SimTime::from_millis(100)),
    (0.50, SimTime::from_millis(180)),
    (0.65, SimTime::from_millis(260)),
    (f64::INFINITY, SimTime::from_millis(1000)),
];

/// Adaptive-approach constants.
pub mod adaptive {
    pub const ALPHA: f64 = 0.016;
    pub const BETA: f64 = 0.0012;
    pub const CBR_TARGET: f64 = 0.68;
    pub const DELTA_MAX: f64 = 0.03;
    pub const DELTA_MIN: f64 = 0.0006;
    pub const G_PLUS_MAX: f64 = 0.0005;
    pub const G_MINUS_MAX: f64 = -0.00025;
    pub const T_OFF_MIN_NS: u64 = 25_000_000;
    pub const T_OFF_MAX_NS: u64 = 1_000_000_000;
}

#[derive(Debug, Clone)]
pub struct Dcc {
    pub mode: DccMode,
    pub gate_open_at: SimTime,
    pub scbr: f64,
    pub delta: f64,
    updates: u64,
}

impl Dcc {
    pub fn new(mode: DccMode) -> Self {
        Dcc { mode, gate_open_at: SimTime::ZERO, scbr: 0.0, delta: adaptive::DELTA_MAX, updates: 0 }
    }

    /// Feeds a smoothed CBR sample taken every 100 ms.
    pub fn on_scbr(&mut self, scbr: f64) {
        self.scbr = scbr;
        self.updates += 1;
        // the adaptive loop runs every 200 ms
        if self.mode == DccMode::Adaptive && self.updates % 2 == 0 {
            use adaptive::*;
            let err = CBR_TARGET - scbr;
            let offset = if err > 0.0 { (BETA * err).min(G_PLUS_MAX) } else { (BETA * err).max(G_MINUS_MAX) };
            self.delta = ((1.0 - ALPHA) * self.delta + offset).clamp(DELTA_MIN, DELTA_MAX);
        }
    }

    /// Minimum spacing imposed after releasing a frame of duration `ton`.
    pub fn t_off(&self, ton: SimTime) -> SimTime {
        match self.mode {
            DccMode::Off => SimTime::ZERO,
            DccMode::Reactive => REACTIVE_TABLE
                .iter()
                .find(|(bound, _)| self.scbr < *bound)
                .map(|(_, t)| *t)
                .unwrap_or(SimTime::from_millis(1000)),
            DccMode::Adaptive => {
                let ns = (ton.as_nanos() as f64 / self.delta).round() as u64;
                SimTime(ns.clamp(adaptive::T_OFF_MIN_NS, adaptive::T_OFF_MAX_NS))
            }
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct MacParams {
    pub categories: [AccessCategory; 4],
    pub queue_capacity: usize,
    pub data_rate: f64,
    pub retry_limit: u32,
    pub dcc: DccMode,
}

impl Default for MacParams {
    fn default() -> Self {
        MacParams {
            categories: ITS_G5_CATEGORIES,
            queue_capacity: DEFAULT_QUEUE_CAPACITY,
            data_rate: 6e6,
            retry_limit: DEFAULT_RETRY_LIMIT,
            dcc: DccMode::Off,
        }
    }
}

#[derive(Debug, Clone, Default)]
struct AcState {
    queue: VecDeque<FrameDescriptor>,
    /// Remaining backoff slots of the head frame while it contends.
    backoff: Option<u32>,
    cw: u32,
    retries: u32,
    /// Instant from which AIFS is counted.
    ref_time: SimTime,
    awaiting_ack: bool,
}

/// Frame handed to the PHY by a winning access category.
#[derive(Debug, Clone, PartialEq)]
pub struct TxGrant {
    pub ac: usize,
    pub frame: FrameDescriptor,
    pub retry: u32,
}

/// EDCA state of one node.
#[derive(Debug, Clone)]
pub struct NodeMac {
    params: MacParams,
    acs: [AcState; 4],
    medium_busy: bool,
    transmitting: bool,
    timer: Option<SimTime>,
    timer_gen: u64,
    gate_wakeup: Option<SimTime>,
    pub dcc: Dcc,
    pub queue_drops: u64,
    pub internal_collisions: u64,
}

impl NodeMac {
    pub fn new(params: MacParams) -> Self {
        let dcc = Dcc::new(params.dcc);
        let mut acs: [AcState; 4] = Default::default();
        for (ac, cat) in acs.iter_mut().zip(params.categories.iter()) {
            ac.cw = cat.cw_min;
        }
        NodeMac {
            params,
            acs,
            medium_busy: false,
            transmitting: false,
            timer: None,
            timer_gen: 0,
            gate_wakeup: None,
            dcc,
            queue_drops: 0,
            internal_collisions: 0,
        }
    }

    pub fn params(&self) -> &MacParams {
        &self.params
    }

    pub fn queue_len(&self, ac: usize) -> usize {
        self.acs[ac].queue.len()
    }

    pub fn backoff(&self, ac: usize) -> Option<u32> {
        self.acs[ac].backoff
    }

    pub fn is_idle(&self) -> bool {
        !self.transmitting && self.acs.iter().all(|a| a.queue.is_empty())
    }

    fn contending(&self) -> bool {
        self.acs.iter().any(|a| a.backoff.is_some() || a.awaiting_ack)
    }

    /// Transmission instant of category `ac` if the medium stays idle.
    fn tx_time(&self, ac: usize) -> Option<SimTime> {
        let st = &self.acs[ac];
        st.backoff
            .map(|k| st.ref_time + self.params.categories[ac].aifs() + SLOT * u64::from(k))
    }

    fn next_tx_time(&self) -> Option<SimTime> {
        if self.medium_busy || self.transmitting {
            return None;
        }
        (0..4).filter_map(|ac| self.tx_time(ac)).min()
    }

    /// Appends `frame` to its category queue. Returns a frame dropped by overflow.
    pub fn enqueue<R: Rng>(&mut self, now: SimTime, frame: FrameDescriptor, rng: &mut R) -> Option<FrameDescriptor> {
        let ac = frame.traffic_class.ac_index();
        let cap = self.params.queue_capacity;
        let st = &mut self.acs[ac];
        let mut dropped = None;
        if st.queue.len() >= cap {
            // the head frame is protected once it is contending
            let protected = usize::from(st.backoff.is_some() || st.awaiting_ack);
            if st.queue.len() > protected {
                dropped = st.queue.remove(protected);
            } else {
                dropped = Some(frame.clone());
            }
            self.queue_drops += 1;
        }
        if dropped.as_ref().map_or(true, |d| d.id != frame.id) {
            self.acs[ac].queue.push_back(frame);
        }
        self.start_contention(now, rng);
        dropped
    }

    fn gate_allows(&mut self, now: SimTime) -> bool {
        if self.dcc.mode == DccMode::Off {
            return true;
        }
        !self.contending() && !self.transmitting && now >= self.dcc.gate_open_at
    }

    /// Moves queued head frames into contention where allowed.
    fn start_contention<R: Rng>(&mut self, now: SimTime, rng: &mut R) {
        for ac in 0..4 {
            let st = &self.acs[ac];
            if st.backoff.is_some() || st.awaiting_ack || st.queue.is_empty() {
                continue;
            }
            if !self.gate_allows(now) {
                if self.dcc.mode != DccMode::Off && now < self.dcc.gate_open_at && !self.contending() {
                    self.gate_wakeup = Some(self.dcc.gate_open_at);
                }
                return;
            }
            let cw = self.acs[ac].cw;
            let k = rng.gen_range(0..=cw);
            let st = &mut self.acs[ac];
            st.backoff = Some(k);
            st.ref_time = now;
            if self.dcc.mode != DccMode::Off {
                let ton = airtime(st.queue[0].payload_bytes, self.params.data_rate).unwrap_or(SimTime::ZERO);
                self.dcc.gate_open_at = now + self.dcc.t_off(ton);
            }
        }
    }

    /// Called when the DCC gate wake-up fires.
    pub fn on_gate<R: Rng>(&mut self, now: SimTime, rng: &mut R) {
        self.gate_wakeup = None;
        self.start_contention(now, rng);
    }

    /// Pending DCC wake-up that the caller has not scheduled yet.
    pub fn take_gate_wakeup(&mut self) -> Option<SimTime> {
        self.gate_wakeup.take()
    }

    /// Medium turned busy: freeze every countdown that has not reached zero.
    pub fn on_busy(&mut self, now: SimTime) {
        self.medium_busy = true;
        for ac in 0..4 {
            let Some(t_tx) = self.tx_time(ac) else { continue };
            if t_tx <= now {
                continue;
            }
            let st = &mut self.acs[ac];
            let start = st.ref_time + self.params.categories[ac].aifs();
            if now > start {
                let slots = (now - start).as_nanos() / SLOT.as_nanos();
                let k = st.backoff.expect("contending category has a backoff");
                st.backoff = Some(k - (slots as u32).min(k));
            }
        }
    }

    /// Medium turned idle: countdowns restart with a fresh AIFS.
    pub fn on_idle(&mut self, now: SimTime) {
        self.medium_busy = false;
        for st in self.acs.iter_mut() {
            if st.backoff.is_some() {
                st.ref_time = now;
            }
        }
    }

    /// Returns the timer the caller must schedule, if it changed: `(time, generation)`.
    pub fn poll_timer(&mut self) -> Option<(SimTime, u64)> {
        let next = self.next_tx_time();
        if next == self.timer {
            return None;
        }
        self.timer = next;
        self.timer_gen += 1;
        next.map(|t| (t, self.timer_gen))
    }

    /// Timer expiry. Returns the frame to transmit, if the timer is still current.
    pub fn on_timer<R: Rng>(&mut self, now: SimTime, gen: u64, rng: &mut R) -> Option<TxGrant> {
        if gen != self.timer_gen || self.timer != Some(now) {
            return None;
        }
        self.timer = None;
        if self.transmitting {
            return None;
        }
        let due: Vec<usize> = (0..4).filter(|&ac| self.tx_time(ac) == Some(now)).collect();
        let winner = *due.first()?;
        // Internal collision: lower-priority categories draw a new backoff.
        for &ac in &due[1..] {
            self.internal_collisions += 1;
            let st = &mut self.acs[ac];
            st.backoff = Some(rng.gen_range(0..=st.cw));
            st.ref_time = now;
        }
        let st = &mut self.acs[winner];
        st.backoff = None;
        let frame = st.queue.front().cloned().expect("contending category has a frame");
        let retry = st.retries;
        match frame.addressing {
            Addressing::Broadcast => {
                st.queue.pop_front();
            }
            Addressing::Unicast(_) => st.awaiting_ack = true,
        }
        self.transmitting = true;
        Some(TxGrant { ac: winner, frame, retry })
    }

    /// Own transmission finished.
    pub fn on_tx_end<R: Rng>(&mut self, now: SimTime, rng: &mut R) {
        self.transmitting = false;
        self.start_contention(now, rng);
    }

    /// Unicast frame of category `ac` was acknowledged.
    pub fn on_ack<R: Rng>(&mut self, now: SimTime, ac: usize, rng: &mut R) -> Option<FrameDescriptor> {
        let cw_min = self.params.categories[ac].cw_min;
        let st = &mut self.acs[ac];
        if !st.awaiting_ack {
            return None;
        }
        st.awaiting_ack = false;
        st.retries = 0;
        st.cw = cw_min;
        let done = st.queue.pop_front();
        self.start_contention(now, rng);
        done
    }

    /// No ACK arrived in time: retry with a doubled window, or give up.
    /// Returns the abandoned frame when the retry limit is exceeded.
    pub fn on_ack_timeout<R: Rng>(&mut self, now: SimTime, ac: usize, rng: &mut R) -> Option<FrameDescriptor> {
        let cat = self.params.categories[ac];
        let limit = self.params.retry_limit;
        let st = &mut self.acs[ac];
        if !st.awaiting_ack {
            return None;
        }
        st.awaiting_ack = false;
        st.retries += 1;
        if st.retries > limit {
            st.retries = 0;
            st.cw = cat.cw_min;
            let lost = st.queue.pop_front();
            self.start_contention(now, rng);
            return lost;
        }
        st.cw = (2 * st.cw + 1).min(cat.cw_max);
        st.backoff = Some(rng.gen_range(0..=st.cw));
        st.ref_time = now;
        None
    }
}
