//! Distance relays with mho zones, definite-time zone timers and a breaker
//! delay.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::netmodel::{BranchId, Network};
use crate::phasor::Phasor;

/// Zone reaches as multiples of the protected line impedance.
pub const DEFAULT_REACHES: [f64; 3] = [0.8, 1.2, 2.2];
/// Zone time delays, seconds.
pub const DEFAULT_DELAYS: [f64; 3] = [0.0, 0.2, 0.3];
/// Trip signal to breaker opening, seconds.
pub const DEFAULT_BREAKER_DELAY: f64 = 0.05;
/// Lines at or above this voltage get the three-zone relay.
pub const THREE_ZONE_KV: f64 = 345.0;
/// No relay is attached below this voltage.
pub const MONITOR_FLOOR_KV: f64 = 100.0;

/// Slack used when comparing sample times against zone delays.
pub(crate) const TIME_EPS: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum End {
    From,
    To,
}

impl End {
    pub fn as_str(self) -> &'static str {
        match self {
            End::From => "from",
            End::To => "to",
        }
    }
}

impl fmt::Display for End {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum RelayMode {
    #[default]
    Tripping,
    Monitoring,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Zone {
    pub number: u8,
    pub reach_fraction: f64,
    pub delay_s: f64,
}

/// Settings of one relay as written in a relay-set file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RelaySetting {
    pub branch: BranchId,
    pub end: End,
    pub zones: Vec<Zone>,
    pub breaker_delay_s: f64,
    #[serde(default)]
    pub mode: RelayMode,
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum RelayError {
    #[error("relay {branch}/{end}: sample time {t} not after {prev}")]
    NonMonotoneTime { branch: BranchId, end: End, prev: f64, t: f64 },
    #[error("no relay for {kv} kV lines (floor is {MONITOR_FLOOR_KV} kV)")]
    UnmonitoredVoltageClass { kv: f64 },
    #[error("relay {branch}/{end}: {reason}")]
    InvalidSetting { branch: BranchId, end: End, reason: String },
    #[error("duplicate relay {branch}/{end}")]
    DuplicateRelay { branch: BranchId, end: End },
}

impl RelaySetting {
    pub fn validate(&self) -> Result<(), RelayError> {
        let bad =
            |reason: &str| RelayError::InvalidSetting { branch: self.branch, end: self.end, reason: reason.into() };
        if !(2..=3).contains(&self.zones.len()) {
            return Err(bad("a relay carries two or three zones"));
        }
        for z in &self.zones {
            if !(z.reach_fraction > 0.0 && z.reach_fraction.is_finite()) {
                return Err(bad("reach_fraction must be positive"));
            }
            if !(z.delay_s >= 0.0 && z.delay_s.is_finite()) {
                return Err(bad("delay_s must be non-negative"));
            }
        }
        for w in self.zones.windows(2) {
            if !(w[0].number < w[1].number && w[0].reach_fraction < w[1].reach_fraction && w[0].delay_s < w[1].delay_s)
            {
                return Err(bad("zones must increase in number, reach and delay"));
            }
        }
        if !(self.breaker_delay_s >= 0.0 && self.breaker_delay_s.is_finite()) {
            return Err(bad("breaker_delay_s must be non-negative"));
        }
        Ok(())
    }
}

fn zones(count: usize) -> Vec<Zone> {
    (0..count)
        .map(|i| Zone { number: i as u8 + 1, reach_fraction: DEFAULT_REACHES[i], delay_s: DEFAULT_DELAYS[i] })
        .collect()
}

/// Three zones at 80/120/220 % with 0/0.2/0.3 s delays.
pub fn three_zone_setting(branch: BranchId, end: End) -> RelaySetting {
    RelaySetting { branch, end, zones: zones(3), breaker_delay_s: DEFAULT_BREAKER_DELAY, mode: RelayMode::Tripping }
}

/// Zones 1 and 2 of the three-zone relay.
pub fn two_zone_setting(branch: BranchId, end: End) -> RelaySetting {
    RelaySetting { branch, end, zones: zones(2), breaker_delay_s: DEFAULT_BREAKER_DELAY, mode: RelayMode::Tripping }
}

/// Default relay for a line of the given voltage class.
pub fn default_relay(branch: BranchId, end: End, kv_level: f64) -> Result<RelaySetting, RelayError> {
    if kv_level >= THREE_ZONE_KV {
        Ok(three_zone_setting(branch, end))
    } else if kv_level >= MONITOR_FLOOR_KV {
        Ok(two_zone_setting(branch, end))
    } else {
        Err(RelayError::UnmonitoredVoltageClass { kv: kv_level })
    }
}

/// Mho test: the circle through the origin whose diameter is the zone reach
/// along the line impedance. The boundary counts as inside.
pub fn zone_contains(zone: &Zone, line_z_full: Phasor, z: Phasor) -> bool {
    let half = line_z_full * (zone.reach_fraction / 2.0);
    (z - half).norm() <= half.norm()
}

/// Centre and radius of a zone's mho circle in the R-X plane.
pub fn zone_circle(zone: &Zone, line_z_full: Phasor) -> (Phasor, f64) {
    let half = line_z_full * (zone.reach_fraction / 2.0);
    (half, half.norm())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TripCommand {
    pub branch: BranchId,
    pub end: End,
    pub zone: u8,
    pub issue_t: f64,
    pub open_t: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ZoneEntry {
    pub t: f64,
    pub branch: BranchId,
    pub end: End,
    pub zone: u8,
}

/// A relay in service, with its timers.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceRelay {
    pub setting: RelaySetting,
    /// Impedance of the whole protected line, fixed even while the line is
    /// split by a fault node.
    pub line_z_full: Phasor,
    /// Per zone: time at which continuous containment began.
    pub timers: Vec<Option<f64>>,
    pub pending_trip_at: Option<f64>,
    last_t: Option<f64>,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct RelayStep {
    pub command: Option<TripCommand>,
    /// Zones entered at this sample.
    pub entered: Vec<u8>,
}

impl DistanceRelay {
    pub fn new(setting: RelaySetting, line_z_full: Phasor) -> Self {
        let timers = vec![None; setting.zones.len()];
        Self { setting, line_z_full, timers, pending_trip_at: None, last_t: None }
    }

    pub fn branch(&self) -> BranchId {
        self.setting.branch
    }

    pub fn end(&self) -> End {
        self.setting.end
    }

    /// Smallest-numbered zone containing `z`, if any.
    pub fn innermost_zone(&self, z: Phasor) -> Option<u8> {
        self.setting.zones.iter().find(|zone| zone_contains(zone, self.line_z_full, z)).map(|zone| zone.number)
    }

    /// Advances the relay by one sample.
    ///
    /// Every zone containing the sample keeps its timer running; a zone that
    /// does not contain it (or a missing sample) resets that zone's timer. The
    /// first zone whose containment lasts its full delay issues the single
    /// trip command of this relay. Monitoring relays time and log but never
    /// command.
    pub fn relay_step(&mut self, z_sample: Option<Phasor>, t: f64) -> Result<RelayStep, RelayError> {
        if let Some(prev) = self.last_t {
            if t <= prev {
                return Err(RelayError::NonMonotoneTime { branch: self.branch(), end: self.end(), prev, t });
            }
        }
        self.last_t = Some(t);
        let mut out = RelayStep::default();
        for (zone, timer) in self.setting.zones.iter().zip(self.timers.iter_mut()) {
            let inside = z_sample.is_some_and(|z| zone_contains(zone, self.line_z_full, z));
            match (inside, *timer) {
                (true, None) => {
                    *timer = Some(t);
                    out.entered.push(zone.number);
                }
                (false, Some(_)) => *timer = None,
                _ => {}
            }
        }
        if self.setting.mode == RelayMode::Monitoring || self.pending_trip_at.is_some() {
            return Ok(out);
        }
        let expired = self
            .setting
            .zones
            .iter()
            .zip(&self.timers)
            .find(|(zone, timer)| timer.is_some_and(|t0| t - t0 >= zone.delay_s - TIME_EPS));
        if let Some((zone, _)) = expired {
            self.pending_trip_at = Some(t);
            out.command = Some(TripCommand {
                branch: self.branch(),
                end: self.end(),
                zone: zone.number,
                issue_t: t,
                open_t: t + self.setting.breaker_delay_s,
            });
        }
        Ok(out)
    }
}

/// Relay settings keyed by (branch, end). Serialized as a plain list.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "Vec<RelaySetting>", into = "Vec<RelaySetting>")]
pub struct RelaySet {
    relays: BTreeMap<(BranchId, End), RelaySetting>,
}

impl TryFrom<Vec<RelaySetting>> for RelaySet {
    type Error = RelayError;

    fn try_from(list: Vec<RelaySetting>) -> Result<Self, RelayError> {
        let mut set = RelaySet::default();
        for setting in list {
            setting.validate()?;
            let key = (setting.branch, setting.end);
            if set.relays.insert(key, setting).is_some() {
                return Err(RelayError::DuplicateRelay { branch: key.0, end: key.1 });
            }
        }
        Ok(set)
    }
}

impl From<RelaySet> for Vec<RelaySetting> {
    fn from(set: RelaySet) -> Self {
        set.relays.into_values().collect()
    }
}

impl RelaySet {
    pub fn new() -> Self {
        Self::default()
    }

    /// Inserts or replaces the relay at the setting's (branch, end).
    pub fn insert(&mut self, setting: RelaySetting) {
        self.relays.insert((setting.branch, setting.end), setting);
    }

    pub fn get(&self, branch: BranchId, end: End) -> Option<&RelaySetting> {
        self.relays.get(&(branch, end))
    }

    pub fn contains_branch(&self, branch: BranchId) -> bool {
        self.get(branch, End::From).is_some() || self.get(branch, End::To).is_some()
    }

    pub fn len(&self) -> usize {
        self.relays.len()
    }

    pub fn is_empty(&self) -> bool {
        self.relays.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &RelaySetting> {
        self.relays.values()
    }

    /// Replaces settings for every relay also present in `overrides`.
    pub fn apply_overrides(&mut self, overrides: &RelaySet) {
        for s in overrides.iter() {
            if let Some(slot) = self.relays.get_mut(&(s.branch, s.end)) {
                *slot = s.clone();
            }
        }
    }

    /// Default relays on both ends of every in-service line at or above the
    /// monitoring floor.
    pub fn defaults_for(network: &Network) -> Self {
        let mut set = Self::new();
        for br in network.branches.iter().filter(|b| b.in_service) {
            for end in [End::From, End::To] {
                if let Ok(s) = default_relay(br.id, end, br.kv_level) {
                    set.insert(s);
                }
            }
        }
        set
    }
}
