//! 5.9 GHz propagation, carrier sensing, SINR reception and CBR sampling.

use crate::engine::SimTime;

/// Speed of light used by the free-space reference loss, m/s.
pub const SPEED_OF_LIGHT: f64 = 299_792_458.0;

/// CBR measurement window.
pub const CBR_WINDOW: SimTime = SimTime::from_millis(100);

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum PhyError {
    #[error("path loss undefined at distance {0} m")]
    BadDistance(f64),
    #[error("invalid phy parameter {0}")]
    Invalid(&'static str),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PhyConfig {
    pub tx_power_mw: f64,
    pub carrier_freq: f64,
    pub bandwidth: f64,
    pub pathloss_exponent: f64,
    pub cs_threshold_dbm: f64,
    pub sinr_threshold_db: f64,
    pub noise_floor_dbm: f64,
    pub max_range: f64,
    /// Bit rate of the ITS-G5 channel.
    pub data_rate: f64,
}

impl Default for PhyConfig {
    fn default() -> Self {
        PhyConfig {
            tx_power_mw: 20.0,
            carrier_freq: 5.9e9,
            bandwidth: 10e6,
            pathloss_exponent: 2.0,
            cs_threshold_dbm: -85.0,
            sinr_threshold_db: 8.0,
            noise_floor_dbm: -99.0,
            max_range: 1500.0,
            data_rate: 6e6,
        }
    }
}

impl PhyConfig {
    pub fn validate(&self) -> Result<(), PhyError> {
        if !(self.tx_power_mw > 0.0) {
            return Err(PhyError::Invalid("tx_power_mw must be > 0"));
        }
        if !(self.max_range > 0.0) {
            return Err(PhyError::Invalid("max_range must be > 0"));
        }
        if !(self.sinr_threshold_db > 0.0) {
            return Err(PhyError::Invalid("sinr_threshold must be > 0 dB"));
        }
        if !(self.carrier_freq > 0.0) || !(self.bandwidth > 0.0) {
            return Err(PhyError::Invalid("carrier_freq and bandwidth must be > 0"));
        }
        if !(self.pathloss_exponent > 0.0) {
            return Err(PhyError::Invalid("pathloss_exponent must be > 0"));
        }
        Ok(())
    }
}

pub fn dbm_to_mw(dbm: f64) -> f64 {
    10f64.powf(dbm / 10.0)
}

pub fn mw_to_dbm(mw: f64) -> f64 {
    10.0 * mw.log10()
}

/// Log-distance loss with a free-space reference at 1 m.
pub fn path_loss_db(distance: f64, config: &PhyConfig) -> Result<f64, PhyError> {
    if !(distance > 0.0) || !distance.is_finite() {
        return Err(PhyError::BadDistance(distance));
    }
    let reference = 20.0 * (4.0 * std::f64::consts::PI * config.carrier_freq / SPEED_OF_LIGHT).log10();
    Ok(reference + 10.0 * config.pathloss_exponent * distance.log10())
}

/// Precomputed link-budget constants.
#[derive(Debug, Clone)]
pub struct Propagation {
    /// Received power at 1 m, mW.
    ref_power_mw: f64,
    half_exponent: f64,
    max_range_sq: f64,
    pub cs_threshold_mw: f64,
    pub noise_mw: f64,
    pub sinr_threshold: f64,
}

impl Propagation {
    pub fn new(config: &PhyConfig) -> Self {
        let ref_loss = path_loss_db(1.0, config).expect("1 m is a valid distance");
        Propagation {
            ref_power_mw: config.tx_power_mw * 10f64.powf(-ref_loss / 10.0),
            half_exponent: config.pathloss_exponent / 2.0,
            max_range_sq: config.max_range * config.max_range,
            cs_threshold_mw: dbm_to_mw(config.cs_threshold_dbm),
            noise_mw: dbm_to_mw(config.noise_floor_dbm),
            sinr_threshold: 10f64.powf(config.sinr_threshold_db / 10.0),
        }
    }

    /// Received power for squared distance `d2`, or `None` beyond the hard range cutoff.
    #[inline]
    pub fn rx_power_sq(&self, d2: f64) -> Option<f64> {
        if d2 > self.max_range_sq || d2 <= 0.0 {
            return None;
        }
        let p = if self.half_exponent == 1.0 {
            self.ref_power_mw / d2
        } else {
            self.ref_power_mw * d2.powf(-self.half_exponent)
        };
        Some(p)
    }

    pub fn rx_power(&self, distance: f64) -> Option<f64> {
        self.rx_power_sq(distance * distance)
    }

    /// Distance at which a lone frame stops being decodable.
    pub fn decode_range(&self) -> f64 {
        let min_power = self.cs_threshold_mw.max(self.noise_mw * self.sinr_threshold);
        let d = (self.ref_power_mw / min_power).powf(1.0 / (2.0 * self.half_exponent));
        d.min(self.max_range_sq.sqrt())
    }

    /// A frame is decodable only if it would trigger carrier sense on its own.
    pub fn decodable(&self, signal_mw: f64) -> bool {
        signal_mw >= self.cs_threshold_mw
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum RxOutcome {
    Delivered,
    LostCollision,
    LostWeak,
}

/// Reception verdict from the frame's power and the worst interference seen during it.
pub fn resolve_reception(
    prop: &Propagation,
    signal_mw: f64,
    max_interference_mw: f64,
    half_duplex_conflict: bool,
) -> RxOutcome {
    if !prop.decodable(signal_mw) || signal_mw / prop.noise_mw < prop.sinr_threshold {
        return RxOutcome::LostWeak;
    }
    if half_duplex_conflict {
        return RxOutcome::LostCollision;
    }
    if signal_mw / (prop.noise_mw + max_interference_mw) >= prop.sinr_threshold {
        RxOutcome::Delivered
    } else {
        RxOutcome::LostCollision
    }
}

pub type TxId = u64;

/// One transmission as heard at one node.
#[derive(Debug, Clone)]
struct Incoming {
    tx: TxId,
    power_mw: f64,
    /// Reception outcome wanted for this frame at this node.
    tracked: bool,
    max_interference_mw: f64,
    half_duplex: bool,
}

/// Medium state of one node.
#[derive(Debug, Clone, Default)]
pub struct NodeChannel {
    incoming: Vec<Incoming>,
    total_mw: f64,
    transmitting: bool,
    busy: bool,
    busy_since: SimTime,
    busy_acc_ns: u64,
}

impl NodeChannel {
    pub fn is_busy(&self) -> bool {
        self.busy
    }

    pub fn is_transmitting(&self) -> bool {
        self.transmitting
    }

    pub fn sensed_power_mw(&self) -> f64 {
        self.total_mw
    }

    fn refresh(&mut self, now: SimTime, cs_threshold_mw: f64) -> Option<bool> {
        let busy = self.transmitting || self.total_mw >= cs_threshold_mw;
        if busy == self.busy {
            return None;
        }
        if busy {
            self.busy_since = now;
        } else {
            self.busy_acc_ns += (now - self.busy_since).as_nanos();
        }
        self.busy = busy;
        Some(busy)
    }

    fn push(&mut self, inc: Incoming) {
        self.total_mw += inc.power_mw;
        self.incoming.push(inc);
        // Interference only grows when a frame arrives.
        let total = self.total_mw;
        for i in self.incoming.iter_mut().filter(|i| i.tracked) {
            let others = total - i.power_mw;
            if others > i.max_interference_mw {
                i.max_interference_mw = others;
            }
        }
    }

    fn remove(&mut self, tx: TxId) -> Incoming {
        let idx = self
            .incoming
            .iter()
            .position(|i| i.tx == tx)
            .expect("receiver lost track of transmission");
        let inc = self.incoming.swap_remove(idx);
        // resum instead of subtracting so the total cannot drift
        self.total_mw = self.incoming.iter().map(|i| i.power_mw).sum();
        inc
    }
}

/// A node whose carrier-sense state flipped.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct BusyChange {
    pub node: u32,
    pub busy: bool,
}

/// Receiver of a transmission with its power and distance at start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Audible {
    pub node: u32,
    pub power_mw: f64,
    pub distance: f64,
    /// Whether the caller wants a reception verdict for this node.
    pub tracked: bool,
}

#[derive(Debug, Clone)]
pub struct Transmission {
    pub id: TxId,
    pub sender: u32,
    pub start: SimTime,
    pub end: SimTime,
    pub audible: Vec<Audible>,
}

/// Per-receiver verdict produced when a transmission ends.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Verdict {
    pub node: u32,
    pub distance: f64,
    pub outcome: RxOutcome,
}

/// Channel views of all nodes plus the set of ongoing transmissions.
pub struct Channel {
    pub prop: Propagation,
    nodes: Vec<NodeChannel>,
    ongoing: Vec<Transmission>,
    next_id: TxId,
    window_start: SimTime,
}

impl Channel {
    pub fn new(config: &PhyConfig, node_count: usize) -> Self {
        Channel {
            prop: Propagation::new(config),
            nodes: vec![NodeChannel::default(); node_count],
            ongoing: Vec::new(),
            next_id: 0,
            window_start: SimTime::ZERO,
        }
    }

    pub fn node(&self, n: u32) -> &NodeChannel {
        &self.nodes[n as usize]
    }

    pub fn is_busy(&self, n: u32) -> bool {
        self.nodes[n as usize].busy
    }

    pub fn ongoing(&self) -> usize {
        self.ongoing.len()
    }

    /// Starts a transmission; `audible` must exclude the sender. Returns its id
    /// and every node whose busy state flipped.
    pub fn start_tx(
        &mut self,
        now: SimTime,
        sender: u32,
        end: SimTime,
        audible: Vec<Audible>,
        changes: &mut Vec<BusyChange>,
    ) -> TxId {
        let id = self.next_id;
        self.next_id += 1;
        let cs = self.prop.cs_threshold_mw;

        let s = &mut self.nodes[sender as usize];
        s.transmitting = true;
        // Half duplex: everything the sender was hearing is lost.
        for inc in s.incoming.iter_mut() {
            inc.half_duplex = true;
        }
        if let Some(b) = s.refresh(now, cs) {
            changes.push(BusyChange { node: sender, busy: b });
        }

        for a in &audible {
            let node = &mut self.nodes[a.node as usize];
            let half_duplex = node.transmitting;
            node.push(Incoming {
                tx: id,
                power_mw: a.power_mw,
                tracked: a.tracked,
                max_interference_mw: 0.0,
                half_duplex,
            });
            if let Some(b) = node.refresh(now, cs) {
                changes.push(BusyChange { node: a.node, busy: b });
            }
        }
        self.ongoing.push(Transmission { id, sender, start: now, end, audible });
        id
    }

    /// Ends transmission `id`, resolving reception at every tracked receiver.
    pub fn end_tx(
        &mut self,
        now: SimTime,
        id: TxId,
        verdicts: &mut Vec<Verdict>,
        changes: &mut Vec<BusyChange>,
    ) -> Transmission {
        let pos = self
            .ongoing
            .iter()
            .position(|t| t.id == id)
            .expect("ending an unknown transmission");
        let tx = self.ongoing.swap_remove(pos);
        let cs = self.prop.cs_threshold_mw;

        let s = &mut self.nodes[tx.sender as usize];
        s.transmitting = false;
        if let Some(b) = s.refresh(now, cs) {
            changes.push(BusyChange { node: tx.sender, busy: b });
        }

        for a in &tx.audible {
            let node = &mut self.nodes[a.node as usize];
            let inc = node.remove(id);
            if inc.tracked {
                let outcome =
                    resolve_reception(&self.prop, inc.power_mw, inc.max_interference_mw, inc.half_duplex);
                verdicts.push(Verdict { node: a.node, distance: a.distance, outcome });
            }
            if let Some(b) = node.refresh(now, cs) {
                changes.push(BusyChange { node: a.node, busy: b });
            }
        }
        tx
    }

    /// Closes the CBR window of node `n` at `window_end` and returns its busy fraction.
    pub fn cbr_sample(&mut self, n: u32, window_end: SimTime) -> f64 {
        let window = (window_end.saturating_sub(self.window_start)).as_nanos().max(1);
        let node = &mut self.nodes[n as usize];
        if node.busy {
            node.busy_acc_ns += (window_end - node.busy_since).as_nanos();
            node.busy_since = window_end;
        }
        let busy = node.busy_acc_ns.min(window);
        node.busy_acc_ns = 0;
        busy as f64 / window as f64
    }

    /// Marks the start of the next CBR window for every node.
    pub fn start_cbr_window(&mut self, at: SimTime) {
        self.window_start = at;
    }

    /// Busy nanoseconds accumulated so far in the open window (test hook).
    pub fn busy_accumulated(&self, n: u32, now: SimTime) -> u64 {
        let node = &self.nodes[n as usize];
        node.busy_acc_ns + if node.busy { (now - node.busy_since).as_nanos() } else { 0 }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> PhyConfig {
        PhyConfig::default()
    }

    #[test]
    fn path_loss_reference_values() {
        // 20*log10(4*pi*5.9e9/c) evaluated independently.
        let expected_1m = 20.0 * (4.0 * std::f64::consts::PI * 5.9e9 / 299_792_458.0f64).log10();
        assert!((expected_1m - 47.86).abs() < 0.01);
        assert!((path_loss_db(1.0, &cfg()).unwrap() - expected_1m).abs() < 1e-12);
        assert!((path_loss_db(100.0, &cfg()).unwrap() - 87.86).abs() < 0.01);
        let step = path_loss_db(200.0, &cfg()).unwrap() - path_loss_db(100.0, &cfg()).unwrap();
        assert!((step - 20.0 * 2f64.log10()).abs() < 1e-12);
    }

    #[test]
    fn path_loss_rejects_zero_distance() {
        assert_eq!(path_loss_db(0.0, &cfg()), Err(PhyError::BadDistance(0.0)));
        assert!(path_loss_db(-1.0, &cfg()).is_err());
    }

    #[test]
    fn rx_power_matches_db_budget() {
        let p = Propagation::new(&cfg());
        let dbm = mw_to_dbm(p.rx_power(10.0).unwrap());
        let expected = mw_to_dbm(20.0) - path_loss_db(10.0, &cfg()).unwrap();
        assert!((dbm - expected).abs() < 1e-9);
        assert!((dbm - (-54.9)).abs() < 0.1);
        assert!(p.rx_power(1500.1).is_none());
    }

    #[test]
    fn decode_range_at_defaults_is_a_few_hundred_meters() {
        let r = Propagation::new(&cfg()).decode_range();
        assert!((250.0..=500.0).contains(&r), "decode range {r}");
    }

    fn audible(ch: &Channel, sender_x: f64, xs: &[(u32, f64)]) -> Vec<Audible> {
        xs.iter()
            .filter_map(|&(n, x)| {
                let d = (x - sender_x).abs();
                ch.prop.rx_power(d).map(|p| Audible { node: n, power_mw: p, distance: d, tracked: true })
            })
            .collect()
    }

    #[test]
    fn busy_only_above_threshold() {
        let mut ch = Channel::new(&cfg(), 3);
        assert!(!ch.is_busy(1));
        let mut changes = Vec::new();
        // node 1 at 10 m, node 2 at 1000 m (below -85 dBm)
        let aud = audible(&ch, 0.0, &[(1, 10.0), (2, 1000.0)]);
        ch.start_tx(SimTime(0), 0, SimTime(1000), aud, &mut changes);
        assert!(ch.is_busy(1));
        assert!(!ch.is_busy(2));
        assert!(ch.is_busy(0), "own transmission counts as busy");
    }

    #[test]
    fn lone_frame_delivered() {
        let mut ch = Channel::new(&cfg(), 2);
        let mut changes = Vec::new();
        let aud = audible(&ch, 0.0, &[(1, 100.0)]);
        let id = ch.start_tx(SimTime(0), 0, SimTime(448_000), aud, &mut changes);
        let mut v = Vec::new();
        ch.end_tx(SimTime(448_000), id, &mut v, &mut changes);
        assert_eq!(v[0].outcome, RxOutcome::Delivered);
    }

    #[test]
    fn weak_frame_lost_weak() {
        let mut ch = Channel::new(&cfg(), 2);
        let mut changes = Vec::new();
        let aud = audible(&ch, 0.0, &[(1, 900.0)]);
        let id = ch.start_tx(SimTime(0), 0, SimTime(1000), aud, &mut changes);
        let mut v = Vec::new();
        ch.end_tx(SimTime(1000), id, &mut v, &mut changes);
        assert_eq!(v[0].outcome, RxOutcome::LostWeak);
    }

    #[test]
    fn symmetric_collision_at_midpoint() {
        // nodes 0 and 2 at +-100 m from receiver 1
        let mut ch = Channel::new(&cfg(), 3);
        let mut changes = Vec::new();
        let a = audible(&ch, -100.0, &[(1, 0.0), (2, 100.0)]);
        let b = audible(&ch, 100.0, &[(1, 0.0), (0, -100.0)]);
        let ta = ch.start_tx(SimTime(0), 0, SimTime(1000), a, &mut changes);
        let tb = ch.start_tx(SimTime(0), 2, SimTime(1000), b, &mut changes);
        let mut v = Vec::new();
        ch.end_tx(SimTime(1000), ta, &mut v, &mut changes);
        ch.end_tx(SimTime(1000), tb, &mut v, &mut changes);
        let at_mid: Vec<_> = v.iter().filter(|x| x.node == 1).collect();
        assert_eq!(at_mid.len(), 2);
        assert!(at_mid.iter().all(|x| x.outcome == RxOutcome::LostCollision));
    }

    #[test]
    fn hidden_nodes_collide_at_common_receiver() {
        // A at 0, C at 300, D at 600: A and D are 600 m apart, beyond carrier sense.
        let c = cfg();
        let prop = Propagation::new(&c);
        let cs_range = (prop.ref_power_mw / prop.cs_threshold_mw).sqrt();
        assert!(600.0 > cs_range && 300.0 < cs_range);
        let mut ch = Channel::new(&c, 3);
        let mut changes = Vec::new();
        let a = audible(&ch, 0.0, &[(1, 300.0), (2, 600.0)]);
        let d = audible(&ch, 600.0, &[(0, 0.0), (1, 300.0)]);
        let ta = ch.start_tx(SimTime(0), 0, SimTime(424_000), a, &mut changes);
        assert!(!ch.is_busy(2), "D cannot sense A");
        let td = ch.start_tx(SimTime(100_000), 2, SimTime(524_000), d, &mut changes);
        let mut v = Vec::new();
        ch.end_tx(SimTime(424_000), ta, &mut v, &mut changes);
        ch.end_tx(SimTime(524_000), td, &mut v, &mut changes);
        // analytic SINR: equal powers -> 0 dB < 8 dB
        let s = prop.rx_power(300.0).unwrap();
        assert!(s / (prop.noise_mw + s) < prop.sinr_threshold);
        let at_c: Vec<_> = v.iter().filter(|x| x.node == 1).collect();
        assert_eq!(at_c.len(), 2);
        assert!(at_c.iter().all(|x| x.outcome == RxOutcome::LostCollision));
    }

    #[test]
    fn strong_frame_survives_weak_interferer() {
        let mut ch = Channel::new(&cfg(), 3);
        let mut changes = Vec::new();
        let near = audible(&ch, 0.0, &[(1, 20.0)]);
        let far = audible(&ch, 1400.0, &[(1, 20.0)]);
        let t1 = ch.start_tx(SimTime(0), 0, SimTime(1000), near, &mut changes);
        ch.start_tx(SimTime(10), 2, SimTime(2000), far, &mut changes);
        let mut v = Vec::new();
        ch.end_tx(SimTime(1000), t1, &mut v, &mut changes);
        assert_eq!(v[0].outcome, RxOutcome::Delivered);
    }

    #[test]
    fn transmitting_receiver_loses_frame() {
        let mut ch = Channel::new(&cfg(), 2);
        let mut changes = Vec::new();
        let a = audible(&ch, 0.0, &[(1, 50.0)]);
        let b = audible(&ch, 50.0, &[(0, 0.0)]);
        let ta = ch.start_tx(SimTime(0), 0, SimTime(1000), a, &mut changes);
        ch.start_tx(SimTime(500), 1, SimTime(1500), b, &mut changes);
        let mut v = Vec::new();
        ch.end_tx(SimTime(1000), ta, &mut v, &mut changes);
        assert_eq!(v[0].outcome, RxOutcome::LostCollision);
    }

    #[test]
    fn single_frame_cbr() {
        let mut ch = Channel::new(&cfg(), 2);
        let mut changes = Vec::new();
        let a = audible(&ch, 0.0, &[(1, 50.0)]);
        let id = ch.start_tx(SimTime::from_millis(10), 0, SimTime::from_millis(10) + SimTime::from_micros(424), a, &mut changes);
        let mut v = Vec::new();
        ch.end_tx(SimTime::from_millis(10) + SimTime::from_micros(424), id, &mut v, &mut changes);
        let c = ch.cbr_sample(1, CBR_WINDOW);
        assert!((c - 0.00424).abs() < 1e-12);
        ch.start_cbr_window(CBR_WINDOW);
        assert_eq!(ch.cbr_sample(1, CBR_WINDOW * 2), 0.0);
    }

    #[test]
    fn saturated_window_is_one() {
        let mut ch = Channel::new(&cfg(), 2);
        let mut changes = Vec::new();
        let a = audible(&ch, 0.0, &[(1, 50.0)]);
        ch.start_tx(SimTime(0), 0, SimTime::from_millis(300), a, &mut changes);
        assert_eq!(ch.cbr_sample(1, CBR_WINDOW), 1.0);
        ch.start_cbr_window(CBR_WINDOW);
        assert_eq!(ch.cbr_sample(1, CBR_WINDOW * 2), 1.0);
    }

    #[test]
    fn extra_interferer_never_clears_busy() {
        let mut ch = Channel::new(&cfg(), 4);
        let mut changes = Vec::new();
        let a = audible(&ch, 0.0, &[(3, 200.0)]);
        ch.start_tx(SimTime(0), 0, SimTime(1000), a, &mut changes);
        assert!(ch.is_busy(3));
        let b = audible(&ch, 1500.0, &[(3, 200.0)]);
        ch.start_tx(SimTime(5), 1, SimTime(1000), b, &mut changes);
        assert!(ch.is_busy(3));
    }

    #[test]
    fn sub_threshold_powers_sum_to_busy() {
        // Two transmitters each slightly below threshold become busy together.
        let c = cfg();
        let prop = Propagation::new(&c);
        let d = (prop.ref_power_mw / (0.6 * prop.cs_threshold_mw)).sqrt();
        let mut ch = Channel::new(&c, 3);
        let mut changes = Vec::new();
        ch.start_tx(SimTime(0), 0, SimTime(100), audible(&ch, 0.0, &[(2, d)]), &mut changes);
        assert!(!ch.is_busy(2));
        ch.start_tx(SimTime(0), 1, SimTime(100), audible(&ch, 2.0 * d, &[(2, d)]), &mut changes);
        assert!(ch.is_busy(2));
    }
}
