//! Indoor propagation and advertising-channel delivery.
//!
//! Path loss follows the ITU indoor model
//! `PL = 20 log10(f) + N log10(d) + Pf * n - 28` with `f` in MHz, `d` in
//! meters and `n` the number of floors crossed. Links are binary: two nodes
//! are neighbors iff the loss is at or below the threshold.

use serde::{Deserialize, Serialize};

use crate::engine::SimTime;
use crate::topology::NodeId;

pub const FLOOR_HEIGHT_M: f64 = 4.0;
/// Reference distance; shorter separations are clamped to it.
pub const MIN_DISTANCE_M: f64 = 1.0;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Position {
    pub x: f64,
    pub y: f64,
    pub z: f64,
}

impl Position {
    pub fn new(x: f64, y: f64, z: f64) -> Self {
        Self { x, y, z }
    }

    pub fn is_finite(&self) -> bool {
        self.x.is_finite() && self.y.is_finite() && self.z.is_finite()
    }

    pub fn distance(&self, other: &Position) -> f64 {
        ((self.x - other.x).powi(2) + (self.y - other.y).powi(2) + (self.z - other.z).powi(2)).sqrt()
    }

    /// Floor index: a point on a ceiling belongs to the floor below it, so
    /// `z` in `(4k, 4k + 4]` is floor `k` and the ground plane is floor 0.
    pub fn floor(&self) -> u32 {
        let f = (self.z / FLOOR_HEIGHT_M).ceil() - 1.0;
        if f <= 0.0 {
            0
        } else {
            f as u32
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ChannelParams {
    /// Carrier frequency in MHz.
    pub frequency_mhz: f64,
    /// Distance power-loss coefficient.
    pub loss_coefficient: f64,
    /// Penetration loss per floor crossed, dB.
    pub floor_loss_db: f64,
    /// Links at or below this loss are usable, dB.
    pub threshold_db: f64,
    /// Overlapping transmissions on the same advertising channel destroy each other.
    pub collisions: bool,
}

impl Default for ChannelParams {
    fn default() -> Self {
        Self { frequency_mhz: 2400.0, loss_coefficient: 22.0, floor_loss_db: 6.0, threshold_db: 70.0, collisions: true }
    }
}

impl ChannelParams {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.frequency_mhz > 0.0) {
            return Err(format!("frequency_mhz must be positive, got {}", self.frequency_mhz));
        }
        if !(self.loss_coefficient > 0.0) {
            return Err(format!("loss_coefficient must be positive, got {}", self.loss_coefficient));
        }
        if !(self.floor_loss_db >= 0.0) {
            return Err(format!("floor_loss_db must be non-negative, got {}", self.floor_loss_db));
        }
        if !(self.threshold_db > 0.0) {
            return Err(format!("threshold_db must be positive, got {}", self.threshold_db));
        }
        Ok(())
    }
}

pub fn path_loss(a: &Position, b: &Position, p: &ChannelParams) -> f64 {
    let d = a.distance(b).max(MIN_DISTANCE_M);
    let floors = a.floor().abs_diff(b.floor()) as f64;
    20.0 * p.frequency_mhz.log10() + p.loss_coefficient * d.log10() + p.floor_loss_db * floors - 28.0
}

pub fn is_neighbor(a: &Position, b: &Position, p: &ChannelParams) -> bool {
    path_loss(a, b, p) <= p.threshold_db
}

/// The three BLE advertising channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AdvChannel {
    Ch37,
    Ch38,
    Ch39,
}

impl AdvChannel {
    pub const ALL: [AdvChannel; 3] = [AdvChannel::Ch37, AdvChannel::Ch38, AdvChannel::Ch39];

    pub fn index(self) -> usize {
        match self {
            AdvChannel::Ch37 => 0,
            AdvChannel::Ch38 => 1,
            AdvChannel::Ch39 => 2,
        }
    }

    pub fn from_index(i: usize) -> Self {
        Self::ALL[i % 3]
    }

    pub fn number(self) -> u8 {
        37 + self.index() as u8
    }

    /// 37 -> 38 -> 39 -> 37.
    pub fn next(self) -> Self {
        Self::from_index(self.index() + 1)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Transmission {
    pub id: u64,
    pub tx: NodeId,
    pub channel: AdvChannel,
    pub start: SimTime,
    pub end: SimTime,
}

impl Transmission {
    pub fn overlaps(&self, other: &Transmission) -> bool {
        self.start < other.end && other.start < self.end
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum RxOutcome {
    Received,
    /// Another in-range transmission overlapped on the same channel.
    Collided,
    /// The receiver was not tuned to the channel for the whole airtime.
    NotListening,
}

/// Over-the-air transmissions on the advertising channels. Data sessions
/// never appear here: they run on a private, interference-free link.
#[derive(Debug, Default)]
pub struct Airspace {
    active: Vec<Transmission>,
    next_id: u64,
}

impl Airspace {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn begin(&mut self, tx: NodeId, channel: AdvChannel, start: SimTime, end: SimTime) -> Transmission {
        assert!(start < end, "transmission window must be non-empty");
        let t = Transmission { id: self.next_id, tx, channel, start, end };
        self.next_id += 1;
        self.active.push(t);
        t
    }

    pub fn get(&self, id: u64) -> Option<&Transmission> {
        self.active.iter().find(|t| t.id == id)
    }

    /// Resolves reception of transmission `id` for each candidate receiver.
    ///
    /// `candidates` pairs a receiver with whether it listened on the channel
    /// for the full airtime. `in_range(a, b)` is the link predicate. Must be
    /// called once the transmission has ended, so every overlapping
    /// transmission has already begun.
    pub fn deliver<F>(&self, id: u64, candidates: &[(NodeId, bool)], collisions: bool, in_range: F) -> Vec<(NodeId, RxOutcome)>
    where
        F: Fn(NodeId, NodeId) -> bool,
    {
        let Some(tx) = self.get(id) else {
            return candidates.iter().map(|(n, _)| (*n, RxOutcome::NotListening)).collect();
        };
        candidates
            .iter()
            .map(|&(rx, listening)| {
                if !listening || rx == tx.tx || !in_range(tx.tx, rx) {
                    return (rx, RxOutcome::NotListening);
                }
                let jammed = collisions
                    && self
                        .active
                        .iter()
                        .any(|o| o.id != tx.id && o.channel == tx.channel && o.overlaps(tx) && (o.tx == rx || in_range(o.tx, rx)));
                (rx, if jammed { RxOutcome::Collided } else { RxOutcome::Received })
            })
            .collect()
    }

    /// Forgets transmissions that ended before `t`; they can no longer overlap anything new.
    pub fn prune(&mut self, t: SimTime) {
        self.active.retain(|x| x.end >= t);
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Independent evaluation of the loss formula with inline constants.
    fn oracle(d: f64, floors: f64) -> f64 {
        20.0 * 2400f64.log10() + 22.0 * d.max(1.0).log10() + 6.0 * floors - 28.0
    }

    #[test]
    fn hand_evaluated_values() {
        let p = ChannelParams::default();
        let o = Position::new(0.0, 0.0, 1.2);
        assert!((path_loss(&o, &Position::new(1.0, 0.0, 1.2), &p) - 39.604).abs() < 0.001);
        assert!((path_loss(&o, &Position::new(12.0, 0.0, 1.2), &p) - oracle(12.0, 0.0)).abs() < 1e-9);
        assert!((path_loss(&o, &Position::new(12.0, 0.0, 1.2), &p) - 63.346).abs() < 0.001);
        let up = Position::new(12.0, 0.0, 5.2);
        assert!((path_loss(&o, &up, &p) - 69.8495).abs() < 0.001);
        assert!(is_neighbor(&o, &up, &p));
        assert!((path_loss(&o, &Position::new(48.0, 0.0, 1.2), &p) - 76.5915).abs() < 0.001);
    }

    #[test]
    fn neighbor_rule() {
        let p = ChannelParams::default();
        let o = Position::new(0.0, 0.0, 1.2);
        assert!(is_neighbor(&o, &Position::new(12.0, 0.0, 1.2), &p));
        assert!(!is_neighbor(&o, &Position::new(48.0, 0.0, 1.2), &p));
        assert!(is_neighbor(&o, &o, &p));
    }

    #[test]
    fn floor_index_from_height() {
        assert_eq!(Position::new(0.0, 0.0, 0.0).floor(), 0);
        assert_eq!(Position::new(0.0, 0.0, 1.2).floor(), 0);
        assert_eq!(Position::new(0.0, 0.0, 4.0).floor(), 0);
        assert_eq!(Position::new(0.0, 0.0, 5.2).floor(), 1);
        assert_eq!(Position::new(0.0, 0.0, 8.0).floor(), 1);
        assert_eq!(Position::new(0.0, 0.0, 9.2).floor(), 2);
    }

    #[test]
    fn channel_cycle() {
        assert_eq!(AdvChannel::Ch37.next(), AdvChannel::Ch38);
        assert_eq!(AdvChannel::Ch39.next(), AdvChannel::Ch37);
        assert_eq!(AdvChannel::Ch38.number(), 38);
    }

    fn all_in_range(_: NodeId, _: NodeId) -> bool {
        true
    }

    #[test]
    fn single_transmission_is_delivered() {
        let mut air = Airspace::new();
        let t = air.begin(NodeId(1), AdvChannel::Ch37, SimTime(0), SimTime(240));
        let out = air.deliver(t.id, &[(NodeId(2), true)], true, all_in_range);
        assert_eq!(out, vec![(NodeId(2), RxOutcome::Received)]);
    }

    #[test]
    fn overlapping_same_channel_collide() {
        let mut air = Airspace::new();
        let a = air.begin(NodeId(1), AdvChannel::Ch37, SimTime(0), SimTime(240));
        let b = air.begin(NodeId(2), AdvChannel::Ch37, SimTime(100), SimTime(340));
        let rx = [(NodeId(3), true)];
        assert_eq!(air.deliver(a.id, &rx, true, all_in_range)[0].1, RxOutcome::Collided);
        assert_eq!(air.deliver(b.id, &rx, true, all_in_range)[0].1, RxOutcome::Collided);
        assert_eq!(air.deliver(a.id, &rx, false, all_in_range)[0].1, RxOutcome::Received);
    }

    #[test]
    fn different_channels_do_not_collide() {
        let mut air = Airspace::new();
        let a = air.begin(NodeId(1), AdvChannel::Ch37, SimTime(0), SimTime(240));
        let b = air.begin(NodeId(2), AdvChannel::Ch38, SimTime(0), SimTime(240));
        assert_eq!(air.deliver(a.id, &[(NodeId(3), true)], true, all_in_range)[0].1, RxOutcome::Received);
        assert_eq!(air.deliver(b.id, &[(NodeId(4), true)], true, all_in_range)[0].1, RxOutcome::Received);
    }

    #[test]
    fn out_of_range_interferer_is_harmless() {
        let mut air = Airspace::new();
        let a = air.begin(NodeId(1), AdvChannel::Ch37, SimTime(0), SimTime(240));
        air.begin(NodeId(9), AdvChannel::Ch37, SimTime(0), SimTime(240));
        let range = |a: NodeId, b: NodeId| !(a == NodeId(9) || b == NodeId(9));
        assert_eq!(air.deliver(a.id, &[(NodeId(3), true)], true, range)[0].1, RxOutcome::Received);
        assert_eq!(air.deliver(a.id, &[(NodeId(3), false)], true, range)[0].1, RxOutcome::NotListening);
    }

    #[test]
    fn prune_drops_finished() {
        let mut air = Airspace::new();
        let a = air.begin(NodeId(1), AdvChannel::Ch37, SimTime(0), SimTime(240));
        air.prune(SimTime(241));
        assert!(air.get(a.id).is_none());
    }

    fn arb_pos() -> impl proptest::strategy::Strategy<Value = Position> {
        use proptest::prelude::*;
        (-60.0f64..60.0, -60.0f64..60.0, 0.5f64..12.0).prop_map(|(x, y, z)| Position::new(x, y, z))
    }

    proptest::proptest! {
        #![proptest_config(proptest::prelude::ProptestConfig { cases: 10_000, failure_persistence: None, ..Default::default() })]

        #[test]
        fn loss_is_symmetric(a in arb_pos(), b in arb_pos()) {
            let p = ChannelParams::default();
            proptest::prop_assert_eq!(path_loss(&a, &b, &p), path_loss(&b, &a, &p));
            proptest::prop_assert_eq!(is_neighbor(&a, &b, &p), is_neighbor(&b, &a, &p));
        }

        #[test]
        fn loss_grows_with_distance(a in arb_pos(), dx in 0.0f64..50.0, extra in 0.0f64..50.0) {
            // same floor, moving further along x
            let p = ChannelParams::default();
            let near = Position::new(a.x + dx, a.y, a.z);
            let far = Position::new(a.x + dx + extra, a.y, a.z);
            proptest::prop_assert!(path_loss(&a, &near, &p) <= path_loss(&a, &far, &p));
        }

        #[test]
        fn loss_matches_oracle(a in arb_pos(), b in arb_pos()) {
            let floors = (a.floor() as f64 - b.floor() as f64).abs();
            let got = path_loss(&a, &b, &ChannelParams::default());
            proptest::prop_assert!((got - oracle(a.distance(&b), floors)).abs() < 1e-9);
        }
    }
}
