//! Scenario-driven simulation: agent trajectories, the stepped-distance
//! replication experiment and the end-to-end outbreak drill.

use std::collections::{BTreeMap, HashSet};
use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::features::{build_labeled, group_streams, FeatureVector, Label, RawRecord, RiskPolicy, WindowingPolicy};
use crate::protocol::{assign_phases, run_protocol, Device, DeviceId, ProtocolTimings, ProtocolTrace};
use crate::radio::{ChannelParams, Geometry};

/// Positions closer than this are treated as this far apart, so that two
/// agents passing through the same point never produce a zero distance.
pub const MIN_SEPARATION_M: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Position {
    pub x: f64,
    pub y: f64,
}

impl Position {
    pub fn distance_to(self, other: Position) -> f64 {
        (self.x - other.x).hypot(self.y - other.y).max(MIN_SEPARATION_M)
    }
}

/// `(t_ms, x, y)` waypoint.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Waypoint(pub u64, pub f64, pub f64);

/// Piecewise-linear track through time-ordered waypoints. Two waypoints
/// with the same time describe a jump; the later one holds from that instant.
#[derive(Debug, Clone, PartialEq)]
pub struct Trajectory {
    points: Vec<Waypoint>,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CoverageGap {
    pub covered: (u64, u64),
    pub required: (u64, u64),
}

impl fmt::Display for CoverageGap {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(
            f,
            "trajectory covers [{}, {}] ms but [{}, {}] ms is required",
            self.covered.0, self.covered.1, self.required.0, self.required.1
        )
    }
}

impl Trajectory {
    pub fn new(points: Vec<Waypoint>) -> Result<Self> {
        if points.is_empty() {
            return Err(Error::Scenario("trajectory has no waypoints".into()));
        }
        for w in points.windows(2) {
            if w[1].0 < w[0].0 {
                return Err(Error::Scenario(format!("waypoint at {} ms follows {} ms", w[1].0, w[0].0)));
            }
        }
        for w in points.windows(3) {
            if w[0].0 == w[2].0 {
                return Err(Error::Scenario(format!("more than two waypoints at {} ms", w[0].0)));
            }
        }
        if let Some(p) = points.iter().find(|p| !p.1.is_finite() || !p.2.is_finite()) {
            return Err(Error::Scenario(format!("non-finite waypoint at {} ms", p.0)));
        }
        Ok(Self { points })
    }

    pub fn stationary(x: f64, y: f64, until_ms: u64) -> Self {
        Self {
            points: vec![Waypoint(0, x, y), Waypoint(until_ms, x, y)],
        }
    }

    /// Holds `(d, 0)` for `dwell_ms` per distance, jumping between steps.
    pub fn stepped(distances_m: &[f64], dwell_ms: u64) -> Result<Self> {
        let mut points = Vec::with_capacity(2 * distances_m.len());
        for (i, &d) in distances_m.iter().enumerate() {
            let start = i as u64 * dwell_ms;
            points.push(Waypoint(start, d, 0.0));
            points.push(Waypoint(start + dwell_ms, d, 0.0));
        }
        Self::new(points)
    }

    pub fn waypoints(&self) -> &[Waypoint] {
        &self.points
    }

    pub fn start_ms(&self) -> u64 {
        self.points[0].0
    }

    pub fn end_ms(&self) -> u64 {
        self.points[self.points.len() - 1].0
    }

    pub fn check_covers(&self, start_ms: u64, end_ms: u64) -> std::result::Result<(), CoverageGap> {
        if self.start_ms() <= start_ms && self.end_ms() >= end_ms {
            Ok(())
        } else {
            Err(CoverageGap {
                covered: (self.start_ms(), self.end_ms()),
                required: (start_ms, end_ms),
            })
        }
    }

    pub fn position_at(&self, t_ms: u64) -> Result<Position> {
        let j = self.points.partition_point(|p| p.0 <= t_ms);
        if j == 0 || (j == self.points.len() && t_ms > self.end_ms()) {
            return Err(Error::Scenario(format!(
                "no position at {t_ms} ms, trajectory covers [{}, {}] ms",
                self.start_ms(),
                self.end_ms()
            )));
        }
        let a = self.points[j - 1];
        let Some(&b) = self.points.get(j) else {
            return Ok(Position { x: a.1, y: a.2 });
        };
        let f = (t_ms - a.0) as f64 / (b.0 - a.0) as f64;
        Ok(Position {
            x: a.1 + (b.1 - a.1) * f,
            y: a.2 + (b.2 - a.2) * f,
        })
    }
}

/// Two-agent stepped-distance experiment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DistanceSchedule {
    pub distances_m: Vec<f64>,
    pub dwell_ms: u64,
}

impl Default for DistanceSchedule {
    fn default() -> Self {
        Self {
            distances_m: (1..=10).map(|i| i as f64 * 0.5).collect(),
            dwell_ms: 120_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentSpec {
    pub id: u64,
    /// Fixed position; shorthand for a single stationary waypoint pair.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub position: Option<[f64; 2]>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub waypoints: Vec<Waypoint>,
}

impl AgentSpec {
    pub fn trajectory(&self, horizon_ms: u64) -> Result<Trajectory> {
        match (self.position, self.waypoints.is_empty()) {
            (Some([x, y]), true) => Ok(Trajectory::stationary(x, y, horizon_ms)),
            (None, false) => Trajectory::new(self.waypoints.clone()),
            _ => Err(Error::Scenario(format!(
                "agent {} needs exactly one of `position` or `waypoints`",
                self.id
            ))),
        }
    }
}

/// Everything a simulation run needs. Deserialised from TOML; absent
/// sections take their defaults.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Scenario {
    pub seed: u64,
    pub channel: ChannelParams,
    pub timings: ProtocolTimings,
    pub windowing: WindowingPolicy,
    pub risk: RiskPolicy,
    pub schedule: DistanceSchedule,
    /// Free-form mode only.
    pub horizon_ms: Option<u64>,
    /// Geometry of every link not listed in `crosswise_pairs`.
    pub geometry: Geometry,
    pub crosswise_pairs: Vec<[u64; 2]>,
    pub agents: Vec<AgentSpec>,
}

impl Default for Scenario {
    fn default() -> Self {
        Self {
            seed: 0,
            channel: ChannelParams::default(),
            timings: ProtocolTimings::default(),
            windowing: WindowingPolicy::default(),
            risk: RiskPolicy::default(),
            schedule: DistanceSchedule::default(),
            horizon_ms: None,
            geometry: Geometry::Direct,
            crosswise_pairs: Vec::new(),
            agents: Vec::new(),
        }
    }
}

impl Scenario {
    /// The stepped-distance experiment with continuous scanning, which gives
    /// ten packets per second on each side of the link.
    pub fn replication_default() -> Self {
        Self {
            seed: 1,
            timings: ProtocolTimings::default().continuous_scan(),
            ..Self::default()
        }
    }

    pub fn from_toml(text: &str) -> Result<Self> {
        let s: Self = toml::from_str(text).map_err(|e| Error::Format(format!("scenario: {e}")))?;
        s.validate()?;
        Ok(s)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_toml(&text)
    }

    pub fn validate(&self) -> Result<()> {
        self.channel.validate()?;
        self.timings.validate()?;
        self.windowing.validate()?;
        self.risk.validate()?;
        let mut ids = HashSet::new();
        for a in &self.agents {
            if !ids.insert(a.id) {
                return Err(Error::Scenario(format!("duplicate agent id {}", a.id)));
            }
        }
        Ok(())
    }

    /// Hex SHA-256 of the canonical JSON form.
    pub fn config_hash(&self) -> String {
        let json = serde_json::to_vec(self).expect("scenario serialises");
        hex::encode(Sha256::digest(&json))
    }

    fn link_geometry(&self, a: u64, b: u64) -> Geometry {
        if self.crosswise_pairs.iter().any(|p| (p[0] == a && p[1] == b) || (p[0] == b && p[1] == a)) {
            Geometry::Crosswise
        } else {
            self.geometry
        }
    }

    fn check_schedule(&self) -> Result<Vec<String>> {
        let s = &self.schedule;
        if s.distances_m.is_empty() {
            return Err(Error::Scenario("distance schedule is empty".into()));
        }
        if s.dwell_ms == 0 {
            return Err(Error::Scenario("dwell must be positive".into()));
        }
        for &d in &s.distances_m {
            if !(d > 0.0 && d <= self.channel.broadcast_range_m) {
                return Err(Error::Scenario(format!(
                    "step distance {d} m outside (0, {}] m",
                    self.channel.broadcast_range_m
                )));
            }
        }
        let mut warnings = Vec::new();
        if s.dwell_ms < self.timings.t_scan_ms {
            warnings.push(format!(
                "dwell {} ms is shorter than one scan interval ({} ms); steps may yield no windows",
                s.dwell_ms, self.timings.t_scan_ms
            ));
        }
        Ok(warnings)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Provenance {
    pub scenario_hash: String,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LabeledDataset {
    pub geometry: Geometry,
    pub rows: Vec<FeatureVector>,
    /// Every logged packet, ground truth included.
    pub raw: Vec<RawRecord>,
    pub provenance: Provenance,
    pub warnings: Vec<String>,
}

impl LabeledDataset {
    /// `(high, low)` row counts.
    pub fn class_counts(&self) -> (usize, usize) {
        let high = self.rows.iter().filter(|r| r.label == Some(Label::High)).count();
        (high, self.rows.len() - high)
    }

    pub fn is_single_class(&self) -> bool {
        let (h, l) = self.class_counts();
        h == 0 || l == 0
    }

    /// Header lines for emitted files.
    pub fn meta(&self) -> Vec<(String, String)> {
        let (h, l) = self.class_counts();
        vec![
            ("config_hash".into(), self.provenance.scenario_hash.clone()),
            ("seed".into(), self.provenance.seed.to_string()),
            ("geometry".into(), self.geometry.as_str().into()),
            ("rows_high".into(), h.to_string()),
            ("rows_low".into(), l.to_string()),
        ]
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReplicationData {
    pub direct: LabeledDataset,
    pub crosswise: LabeledDataset,
}

fn mac_for(id: u64) -> String {
    let b = id.to_be_bytes();
    format!("02:{:02x}:{:02x}:{:02x}:{:02x}:{:02x}", b[3], b[4], b[5], b[6], b[7])
}

fn raw_records(trace: &ProtocolTrace, ids: &[u64]) -> Vec<RawRecord> {
    let mut last_seen: BTreeMap<(usize, usize), u64> = BTreeMap::new();
    trace
        .receptions
        .iter()
        .map(|r| {
            let prev = last_seen.insert((r.receiver, r.sender), r.sample.timestamp_ms);
            RawRecord {
                distance_m: r.sample.true_distance_m,
                device_name: format!("agent-{}", ids[r.receiver]),
                mac: mac_for(ids[r.sender]),
                payload_hex: r.payload.to_hex(),
                rss_dbm: r.sample.rss_dbm,
                elapsed_ms: prev.map_or(0.0, |p| (r.sample.timestamp_ms - p) as f64),
                timestamp_ms: r.sample.timestamp_ms,
            }
        })
        .collect()
}

fn replicate_one(
    scenario: &Scenario,
    geometry: Geometry,
    windowing: &WindowingPolicy,
    risk: &RiskPolicy,
    seed: u64,
    master_seed: u64,
    warnings: Vec<String>,
) -> Result<LabeledDataset> {
    let s = &scenario.schedule;
    let horizon = s.dwell_ms * s.distances_m.len() as u64;
    let ids = [1u64, 2];
    let mut devices = ids
        .iter()
        .map(|&id| Device::new(DeviceId(id), scenario.timings))
        .collect::<Result<Vec<_>>>()?;
    assign_phases(&mut devices, seed);
    let tracks = [Trajectory::stationary(0.0, 0.0, horizon), Trajectory::stepped(&s.distances_m, s.dwell_ms)?];
    let trace = run_protocol(&mut devices, &scenario.channel, &tracks, |_, _| geometry, horizon, seed)?;

    let raw = raw_records(&trace, &ids);
    let rows = build_labeled(&group_streams(&raw), windowing, risk)?;
    let mut ds = LabeledDataset {
        geometry,
        rows,
        raw,
        provenance: Provenance {
            scenario_hash: scenario.config_hash(),
            seed: master_seed,
        },
        warnings,
    };
    if ds.is_single_class() {
        let (h, l) = ds.class_counts();
        ds.warnings.push(format!(
            "{} dataset has a single class ({h} high, {l} low)",
            geometry.as_str()
        ));
    }
    Ok(ds)
}

/// Run seed for one geometry, so the two datasets see independent noise.
fn scenario_seed(seed: u64, geometry: Geometry) -> u64 {
    match geometry {
        Geometry::Direct => seed,
        Geometry::Crosswise => seed ^ 0x9e37_79b9_7f4a_7c15,
    }
}

/// Runs the stepped-distance experiment once per geometry and turns every
/// receiver's log into labelled feature windows.
pub fn run_paper_replication(
    scenario: &Scenario,
    windowing: &WindowingPolicy,
    risk: &RiskPolicy,
    seed: u64,
) -> Result<ReplicationData> {
    scenario.validate()?;
    windowing.validate()?;
    risk.validate()?;
    let warnings = scenario.check_schedule()?;
    let (direct, crosswise) = rayon::join(
        || replicate_one(scenario, Geometry::Direct, windowing, risk, scenario_seed(seed, Geometry::Direct), seed, warnings.clone()),
        || replicate_one(scenario, Geometry::Crosswise, windowing, risk, scenario_seed(seed, Geometry::Crosswise), seed, warnings.clone()),
    );
    Ok(ReplicationData {
        direct: direct?,
        crosswise: crosswise?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DrillAlert {
    pub agent: u64,
    pub alerted: bool,
    pub matched_signatures: usize,
    pub samples: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct DrillReport {
    pub infected: u64,
    pub published_signatures: usize,
    pub alerts: Vec<DrillAlert>,
}

/// Devices after a free-form protocol run, in agent order.
pub fn run_agents(scenario: &Scenario, seed: u64) -> Result<(Vec<Device>, ProtocolTrace)> {
    scenario.validate()?;
    let horizon = scenario
        .horizon_ms
        .ok_or_else(|| Error::Scenario("free-form scenario needs horizon_ms".into()))?;
    let ids: Vec<u64> = scenario.agents.iter().map(|a| a.id).collect();
    let tracks = scenario
        .agents
        .iter()
        .map(|a| a.trajectory(horizon))
        .collect::<Result<Vec<_>>>()?;
    let mut devices = ids
        .iter()
        .map(|&id| Device::new(DeviceId(id), scenario.timings))
        .collect::<Result<Vec<_>>>()?;
    assign_phases(&mut devices, seed);
    let trace = run_protocol(
        &mut devices,
        &scenario.channel,
        &tracks,
        |a, b| scenario.link_geometry(ids[a], ids[b]),
        horizon,
        seed,
    )?;
    Ok((devices, trace))
}

/// Publishes the infected agent's signatures at the end of the horizon and
/// matches them on every other agent.
pub fn run_outbreak_drill(scenario: &Scenario, infected: u64, seed: u64) -> Result<DrillReport> {
    let slot = scenario
        .agents
        .iter()
        .position(|a| a.id == infected)
        .ok_or_else(|| Error::Scenario(format!("infected agent {infected} is not in the scenario")))?;
    let (devices, _) = run_agents(scenario, seed)?;
    let now = scenario.horizon_ms.unwrap_or(0);
    let bundle = devices[slot].publish_infected(now);
    let alerts = devices
        .iter()
        .enumerate()
        .filter(|(i, _)| *i != slot)
        .map(|(_, d)| {
            let m = d.match_exposure(&bundle);
            DrillAlert {
                agent: d.id().0,
                alerted: !m.is_empty(),
                matched_signatures: m.len(),
                samples: m.iter().map(|x| x.samples).sum(),
            }
        })
        .collect();
    Ok(DrillReport {
        infected,
        published_signatures: bundle.len(),
        alerts,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small(distances: Vec<f64>) -> Scenario {
        Scenario {
            schedule: DistanceSchedule {
                distances_m: distances,
                dwell_ms: 20_000,
            },
            ..Scenario::replication_default()
        }
    }

    #[test]
    fn interpolation_and_jumps() {
        let t = Trajectory::new(vec![Waypoint(0, 0.0, 0.0), Waypoint(1000, 10.0, 0.0), Waypoint(1000, 0.0, 5.0), Waypoint(2000, 0.0, 5.0)]).unwrap();
        assert_eq!(t.position_at(500).unwrap(), Position { x: 5.0, y: 0.0 });
        assert_eq!(t.position_at(999).unwrap().x, 9.99);
        assert_eq!(t.position_at(1000).unwrap(), Position { x: 0.0, y: 5.0 });
        assert_eq!(t.position_at(2000).unwrap(), Position { x: 0.0, y: 5.0 });
        assert!(t.position_at(2001).is_err());
        assert!(t.check_covers(0, 2000).is_ok());
        assert!(t.check_covers(0, 2001).is_err());
    }

    #[test]
    fn bad_trajectories() {
        assert!(Trajectory::new(vec![]).is_err());
        assert!(Trajectory::new(vec![Waypoint(5, 0.0, 0.0), Waypoint(1, 0.0, 0.0)]).is_err());
        assert!(Trajectory::new(vec![Waypoint(1, 0.0, 0.0); 3]).is_err());
        assert!(Trajectory::new(vec![Waypoint(1, f64::NAN, 0.0)]).is_err());
    }

    #[test]
    fn coincident_positions_are_clamped() {
        let p = Position { x: 1.0, y: 1.0 };
        assert_eq!(p.distance_to(p), MIN_SEPARATION_M);
    }

    #[test]
    fn both_labels_present() {
        let r = run_paper_replication(&small(vec![0.5, 3.0]), &WindowingPolicy::default(), &RiskPolicy::default(), 5).unwrap();
        for ds in [&r.direct, &r.crosswise] {
            let (h, l) = ds.class_counts();
            assert!(h > 0 && l > 0);
            assert!(!ds.is_single_class());
        }
    }

    #[test]
    fn single_class_is_flagged() {
        let r = run_paper_replication(&small(vec![0.5, 1.0, 1.5]), &WindowingPolicy::default(), &RiskPolicy::default(), 5).unwrap();
        assert!(r.direct.is_single_class());
        assert!(r.direct.warnings.iter().any(|w| w.contains("single class")));
    }

    #[test]
    fn default_schedule_window_count() {
        let s = Scenario::replication_default();
        let r = run_paper_replication(&s, &s.windowing, &s.risk, 11).unwrap();
        // 10 steps of 120 s, 10 s windows, one stream per receiver.
        assert_eq!(r.direct.rows.len(), 240);
        for row in &r.direct.rows {
            assert!((95..=105).contains(&row.n_samples), "{}", row.n_samples);
        }
    }

    #[test]
    fn replication_is_deterministic() {
        let s = small(vec![1.0, 2.5]);
        let a = run_paper_replication(&s, &s.windowing, &s.risk, 9).unwrap();
        let b = run_paper_replication(&s, &s.windowing, &s.risk, 9).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn crosswise_is_weaker_at_every_step() {
        let s = small(vec![0.5, 1.5, 3.0, 4.5]);
        let r = run_paper_replication(&s, &s.windowing, &s.risk, 2).unwrap();
        let mean_by_step = |ds: &LabeledDataset| {
            let mut acc: BTreeMap<u64, (f64, usize)> = BTreeMap::new();
            for rec in &ds.raw {
                let e = acc.entry((rec.distance_m * 10.0).round() as u64).or_default();
                e.0 += rec.rss_dbm;
                e.1 += 1;
            }
            acc.into_iter().map(|(k, (s, n))| (k, s / n as f64)).collect::<Vec<_>>()
        };
        for ((k1, d), (k2, c)) in mean_by_step(&r.direct).into_iter().zip(mean_by_step(&r.crosswise)) {
            assert_eq!(k1, k2);
            assert!(c < d, "step {k1}: crosswise {c} vs direct {d}");
        }
    }

    #[test]
    fn out_of_range_step_rejected() {
        let s = small(vec![1.0, 11.0]);
        assert!(matches!(
            run_paper_replication(&s, &s.windowing, &s.risk, 0),
            Err(Error::Scenario(_))
        ));
    }

    #[test]
    fn short_dwell_warns() {
        let mut s = small(vec![1.0, 3.0]);
        s.schedule.dwell_ms = 500;
        let r = run_paper_replication(&s, &s.windowing, &s.risk, 0).unwrap();
        assert!(r.direct.warnings.iter().any(|w| w.contains("dwell")));
    }

    fn drill_scenario() -> Scenario {
        Scenario::from_toml(
            r#"
            seed = 3
            horizon_ms = 60000
            [timings]
            t_window_ms = 1000
            [[agents]]
            id = 1
            position = [0.0, 0.0]
            [[agents]]
            id = 2
            position = [1.0, 0.0]
            [[agents]]
            id = 3
            position = [50.0, 0.0]
            "#,
        )
        .unwrap()
    }

    #[test]
    fn near_alerts_far_does_not() {
        let r = run_outbreak_drill(&drill_scenario(), 1, 3).unwrap();
        assert_eq!(r.alerts.len(), 2);
        assert!(r.alerts[0].alerted && r.alerts[0].agent == 2);
        assert!(!r.alerts[1].alerted && r.alerts[1].agent == 3);
    }

    #[test]
    fn isolated_infected_gives_no_alerts() {
        let r = run_outbreak_drill(&drill_scenario(), 3, 3).unwrap();
        assert!(r.alerts.iter().all(|a| !a.alerted));
    }

    #[test]
    fn unknown_infected() {
        assert!(run_outbreak_drill(&drill_scenario(), 99, 0).is_err());
    }

    #[test]
    fn scenario_toml_round_trip_and_hash() {
        let s = drill_scenario();
        let again = Scenario::from_toml(&toml::to_string(&s).unwrap()).unwrap();
        assert_eq!(s, again);
        assert_eq!(s.config_hash(), again.config_hash());
        let mut t = s.clone();
        t.seed += 1;
        assert_ne!(s.config_hash(), t.config_hash());
    }

    #[test]
    fn unknown_scenario_key_rejected() {
        assert!(matches!(Scenario::from_toml("sede = 3"), Err(Error::Format(_))));
    }
}
