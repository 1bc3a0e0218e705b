//! Rotating-signature exposure notification.
//!
//! Every device broadcasts a 31-byte signature that is replaced every
//! `t_gen_ms`, listens during periodic scan windows, and appends every packet
//! it hears to a local contact log. A device whose owner is diagnosed
//! publishes its own recent signatures; every other device intersects that
//! bundle with its own log without anything leaving the device.
//!
//! The radio is half-duplex: at the instant a device transmits, its receiver
//! is off even when the instant falls inside a scan window. Scan windows are
//! therefore interrupted by the device's own advertising events rather than
//! pushing the advertising events out of the window.

use std::collections::{BinaryHeap, HashMap, HashSet};
use std::cmp::Reverse;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::radio::{sample_rss, ChannelParams, Geometry, RssSample};
use crate::sim::Trajectory;

/// Usable bytes in a legacy BLE advertising packet.
pub const PAYLOAD_LEN: usize = 31;

pub const DAY_MS: u64 = 24 * 60 * 60 * 1000;

pub const DEFAULT_RETENTION_DAYS: u32 = 14;

/// The bytes a device puts on the air.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Payload(pub [u8; PAYLOAD_LEN]);

impl Payload {
    pub fn from_slice(bytes: &[u8]) -> Result<Self> {
        let arr: [u8; PAYLOAD_LEN] = bytes.try_into().map_err(|_| {
            Error::Protocol(format!(
                "payload must be {PAYLOAD_LEN} bytes, got {}",
                bytes.len()
            ))
        })?;
        Ok(Payload(arr))
    }

    pub fn random<R: Rng + ?Sized>(rng: &mut R) -> Self {
        let mut bytes = [0u8; PAYLOAD_LEN];
        rng.fill(&mut bytes[..]);
        Payload(bytes)
    }

    pub fn as_bytes(&self) -> &[u8] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        hex::encode(self.0)
    }
}

impl FromStr for Payload {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let bytes = hex::decode(s.trim())
            .map_err(|e| Error::Format(format!("payload hex {s:?}: {e}")))?;
        Payload::from_slice(&bytes)
    }
}

impl fmt::Debug for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Payload({})", self.to_hex())
    }
}

impl fmt::Display for Payload {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Signature {
    pub payload: Payload,
    pub generated_at_ms: u64,
    pub valid_for_ms: u64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ProtocolTimings {
    /// Signature rotation period.
    pub t_gen_ms: u64,
    pub t_adv_ms: u64,
    pub t_scan_ms: u64,
    /// Listening time at the start of every scan interval.
    pub t_window_ms: u64,
}

impl Default for ProtocolTimings {
    fn default() -> Self {
        Self {
            t_gen_ms: 10 * 60 * 1000,
            t_adv_ms: 100,
            t_scan_ms: 1000,
            t_window_ms: 500,
        }
    }
}

impl ProtocolTimings {
    /// Scan window equal to the scan interval.
    pub fn continuous_scan(self) -> Self {
        Self {
            t_window_ms: self.t_scan_ms,
            ..self
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.t_window_ms == 0 || self.t_window_ms > self.t_scan_ms {
            return Err(Error::Protocol(format!(
                "need 0 < t_window_ms <= t_scan_ms, got window {} scan {}",
                self.t_window_ms, self.t_scan_ms
            )));
        }
        if self.t_adv_ms == 0 {
            return Err(Error::Protocol("t_adv_ms must be > 0".into()));
        }
        if self.t_gen_ms < self.t_adv_ms {
            return Err(Error::Protocol(format!(
                "t_gen_ms ({}) must be >= t_adv_ms ({})",
                self.t_gen_ms, self.t_adv_ms
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ContactLogEntry {
    pub observed_payload: Payload,
    pub rss_dbm: f64,
    pub timestamp_ms: u64,
}

/// Simulator-side handle for a device. Never transmitted.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct DeviceId(pub u64);

impl fmt::Display for DeviceId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// Kinds of scheduled radio activity. The declaration order is the
/// processing order for events sharing a timestamp.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum EventKind {
    ScanClose,
    Generate,
    Advertise,
    ScanOpen,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub struct ScheduledEvent {
    pub at_ms: u64,
    pub kind: EventKind,
}

/// What happened to a packet handed to [`Device::receive`].
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReceiveOutcome {
    Logged,
    /// Arrived while the receiver was off.
    NotListening,
}

#[derive(Debug, Clone)]
pub struct Device {
    id: DeviceId,
    timings: ProtocolTimings,
    retention_days: u32,
    /// Offset of the first advertising event, in `[0, t_adv_ms)`.
    adv_phase_ms: u64,
    /// Offset of the scan window grid, in `[0, t_scan_ms)`.
    scan_phase_ms: u64,
    own_signatures: Vec<Signature>,
    contact_log: Vec<ContactLogEntry>,
    malformed: u64,
}

impl Device {
    pub fn new(id: DeviceId, timings: ProtocolTimings) -> Result<Self> {
        timings.validate()?;
        Ok(Self {
            id,
            timings,
            retention_days: DEFAULT_RETENTION_DAYS,
            adv_phase_ms: 0,
            scan_phase_ms: 0,
            own_signatures: Vec::new(),
            contact_log: Vec::new(),
            malformed: 0,
        })
    }

    pub fn with_phases(mut self, adv_phase_ms: u64, scan_phase_ms: u64) -> Self {
        self.adv_phase_ms = adv_phase_ms % self.timings.t_adv_ms;
        self.scan_phase_ms = scan_phase_ms % self.timings.t_scan_ms;
        self
    }

    pub fn with_retention_days(mut self, days: u32) -> Self {
        self.retention_days = days;
        self
    }

    pub fn id(&self) -> DeviceId {
        self.id
    }

    pub fn timings(&self) -> &ProtocolTimings {
        &self.timings
    }

    pub fn adv_phase_ms(&self) -> u64 {
        self.adv_phase_ms
    }

    pub fn own_signatures(&self) -> &[Signature] {
        &self.own_signatures
    }

    pub fn contact_log(&self) -> &[ContactLogEntry] {
        &self.contact_log
    }

    /// Packets rejected for having the wrong length.
    pub fn malformed_count(&self) -> u64 {
        self.malformed
    }

    pub fn retention_ms(&self) -> u64 {
        self.retention_days as u64 * DAY_MS
    }

    /// The signature currently on the air.
    pub fn current_signature(&self) -> Option<&Signature> {
        self.own_signatures.last()
    }

    fn retained(&self, ts: u64, now_ms: u64) -> bool {
        ts + self.retention_ms() > now_ms
    }

    /// Drops signatures and log entries older than the retention window.
    /// Both lists are kept in time order, so expired items form a prefix.
    pub fn prune(&mut self, now_ms: u64) {
        let retention = self.retention_ms();
        let expired = |ts: u64| ts + retention <= now_ms;
        let n = self.own_signatures.partition_point(|s| expired(s.generated_at_ms));
        self.own_signatures.drain(..n);
        let n = self.contact_log.partition_point(|e| expired(e.timestamp_ms));
        self.contact_log.drain(..n);
    }

    /// Rotates to a fresh random payload.
    pub fn generate_signature<R: Rng + ?Sized>(&mut self, now_ms: u64, rng: &mut R) -> Signature {
        let sig = Signature {
            payload: Payload::random(rng),
            generated_at_ms: now_ms,
            valid_for_ms: self.timings.t_gen_ms,
        };
        let at = self.own_signatures.partition_point(|s| s.generated_at_ms <= now_ms);
        self.own_signatures.insert(at, sig);
        self.prune(now_ms);
        sig
    }

    fn is_advertising_at(&self, t_ms: u64) -> bool {
        t_ms >= self.adv_phase_ms && (t_ms - self.adv_phase_ms).is_multiple_of(self.timings.t_adv_ms)
    }

    fn in_scan_window(&self, t_ms: u64) -> bool {
        let period = self.timings.t_scan_ms;
        let offset = (t_ms + period - self.scan_phase_ms % period) % period;
        offset < self.timings.t_window_ms
    }

    /// True when the receiver is on at `t_ms`.
    pub fn is_listening(&self, t_ms: u64) -> bool {
        self.in_scan_window(t_ms) && !self.is_advertising_at(t_ms)
    }

    /// All scheduled activity in `[0, horizon_ms)`, in processing order.
    pub fn next_events(&self, horizon_ms: u64) -> Vec<ScheduledEvent> {
        let t = &self.timings;
        let mut events = Vec::new();

        let mut at = 0;
        while at < horizon_ms {
            events.push(ScheduledEvent {
                at_ms: at,
                kind: EventKind::Generate,
            });
            at += t.t_gen_ms;
        }

        let mut at = self.adv_phase_ms;
        while at < horizon_ms {
            events.push(ScheduledEvent {
                at_ms: at,
                kind: EventKind::Advertise,
            });
            at += t.t_adv_ms;
        }

        // The window grid may start before zero; clip it to the horizon.
        let mut start = self.scan_phase_ms as i64 - t.t_scan_ms as i64;
        while start < horizon_ms as i64 {
            let end = start + t.t_window_ms as i64;
            if end > 0 {
                events.push(ScheduledEvent {
                    at_ms: start.max(0) as u64,
                    kind: EventKind::ScanOpen,
                });
                if end < horizon_ms as i64 {
                    events.push(ScheduledEvent {
                        at_ms: end as u64,
                        kind: EventKind::ScanClose,
                    });
                }
            }
            start += t.t_scan_ms as i64;
        }

        events.sort();
        events
    }

    /// Offers a received packet to the device.
    ///
    /// Packets of the wrong length are counted and rejected. A packet that
    /// arrives while the receiver is off is dropped without error.
    pub fn receive(&mut self, payload: &[u8], rss_dbm: f64, now_ms: u64) -> Result<ReceiveOutcome> {
        let payload = match Payload::from_slice(payload) {
            Ok(p) => p,
            Err(e) => {
                self.malformed += 1;
                return Err(e);
            }
        };
        if !rss_dbm.is_finite() {
            return Err(Error::Protocol(format!("non-finite rss {rss_dbm}")));
        }
        if let Some(last) = self.contact_log.last() {
            if now_ms < last.timestamp_ms {
                return Err(Error::Protocol(format!(
                    "receipt at {now_ms} ms precedes last log entry at {} ms",
                    last.timestamp_ms
                )));
            }
        }
        if !self.is_listening(now_ms) {
            return Ok(ReceiveOutcome::NotListening);
        }
        self.contact_log.push(ContactLogEntry {
            observed_payload: payload,
            rss_dbm,
            timestamp_ms: now_ms,
        });
        self.prune(now_ms);
        Ok(ReceiveOutcome::Logged)
    }

    /// The device's own signatures still inside the retention window.
    pub fn publish_infected(&self, now_ms: u64) -> InfectedBundle {
        InfectedBundle {
            signatures: self
                .own_signatures
                .iter()
                .filter(|s| s.generated_at_ms <= now_ms && self.retained(s.generated_at_ms, now_ms))
                .copied()
                .collect(),
        }
    }

    /// Intersects a published bundle with the local contact log.
    pub fn match_exposure(&self, bundle: &InfectedBundle) -> Vec<ExposureMatch> {
        let published: HashSet<Payload> = bundle.signatures.iter().map(|s| s.payload).collect();
        let mut index: HashMap<Payload, usize> = HashMap::new();
        let mut matches: Vec<ExposureMatch> = Vec::new();
        for entry in &self.contact_log {
            if !published.contains(&entry.observed_payload) {
                continue;
            }
            match index.get(&entry.observed_payload) {
                Some(&i) => {
                    let m = &mut matches[i];
                    m.first_seen_ms = m.first_seen_ms.min(entry.timestamp_ms);
                    m.last_seen_ms = m.last_seen_ms.max(entry.timestamp_ms);
                    m.samples += 1;
                }
                None => {
                    index.insert(entry.observed_payload, matches.len());
                    matches.push(ExposureMatch {
                        payload: entry.observed_payload,
                        first_seen_ms: entry.timestamp_ms,
                        last_seen_ms: entry.timestamp_ms,
                        samples: 1,
                    });
                }
            }
        }
        matches
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct ExposureMatch {
    pub payload: Payload,
    pub first_seen_ms: u64,
    pub last_seen_ms: u64,
    pub samples: usize,
}

/// Signatures uploaded by a diagnosed user.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct InfectedBundle {
    pub signatures: Vec<Signature>,
}

impl InfectedBundle {
    pub fn is_empty(&self) -> bool {
        self.signatures.is_empty()
    }

    pub fn len(&self) -> usize {
        self.signatures.len()
    }

    /// Newline-delimited `payload_hex,generated_at_ms,valid_for_ms` records.
    pub fn write_records<W: Write>(&self, mut out: W) -> std::io::Result<()> {
        for s in &self.signatures {
            writeln!(out, "{},{},{}", s.payload, s.generated_at_ms, s.valid_for_ms)?;
        }
        Ok(())
    }

    pub fn to_bytes(&self) -> Vec<u8> {
        let mut buf = Vec::new();
        self.write_records(&mut buf).expect("writing to a Vec cannot fail");
        buf
    }

    pub fn read_records<R: BufRead>(input: R) -> Result<Self> {
        let mut signatures = Vec::new();
        for (lineno, line) in input.lines().enumerate() {
            let line = line.map_err(|e| Error::Format(format!("bundle line {}: {e}", lineno + 1)))?;
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            let fields: Vec<&str> = line.split(',').collect();
            if fields.len() != 3 {
                return Err(Error::Format(format!(
                    "bundle line {}: expected 3 fields, got {}",
                    lineno + 1,
                    fields.len()
                )));
            }
            let num = |s: &str, what: &str| {
                s.trim().parse::<u64>().map_err(|e| {
                    Error::Format(format!("bundle line {}: {what}: {e}", lineno + 1))
                })
            };
            signatures.push(Signature {
                payload: fields[0].parse()?,
                generated_at_ms: num(fields[1], "generated_at_ms")?,
                valid_for_ms: num(fields[2], "valid_for_ms")?,
            });
        }
        Ok(Self { signatures })
    }
}

pub const CONTACT_LOG_HEADER: [&str; 3] = ["payload_hex", "rss_dbm", "timestamp_ms"];

pub fn write_contact_log<W: Write>(entries: &[ContactLogEntry], out: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(out);
    w.write_record(CONTACT_LOG_HEADER)?;
    for e in entries {
        w.write_record([
            e.observed_payload.to_hex(),
            e.rss_dbm.to_string(),
            e.timestamp_ms.to_string(),
        ])?;
    }
    w.flush().map_err(|e| Error::io("<contact log>", e))?;
    Ok(())
}

pub fn read_contact_log<R: std::io::Read>(input: R) -> Result<Vec<ContactLogEntry>> {
    let mut r = csv::Reader::from_reader(input);
    let headers = r.headers()?.clone();
    if headers.iter().collect::<Vec<_>>() != CONTACT_LOG_HEADER {
        return Err(Error::Format(format!(
            "contact log header must be {}, got {}",
            CONTACT_LOG_HEADER.join(","),
            headers.iter().collect::<Vec<_>>().join(",")
        )));
    }
    let mut out = Vec::new();
    for rec in r.records() {
        let rec = rec?;
        out.push(ContactLogEntry {
            observed_payload: rec[0].parse()?,
            rss_dbm: rec[1]
                .parse()
                .map_err(|e| Error::Format(format!("rss_dbm {:?}: {e}", &rec[1])))?,
            timestamp_ms: rec[2]
                .parse()
                .map_err(|e| Error::Format(format!("timestamp_ms {:?}: {e}", &rec[2])))?,
        });
    }
    Ok(out)
}

/// One delivered packet, with simulator ground truth attached.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Reception {
    pub receiver: usize,
    pub sender: usize,
    pub payload: Payload,
    pub sample: RssSample,
}

#[derive(Debug, Clone, Default)]
pub struct ProtocolTrace {
    pub receptions: Vec<Reception>,
    pub advertisements: usize,
}

/// Independent RNG streams for one run. Stream 0 drives the channel, stream
/// `1 + slot` drives the signatures of the device in that slot, so payloads
/// depend on the seed and slot but never on the device identifier.
pub(crate) fn slot_rng(seed: u64, stream: u64) -> ChaCha8Rng {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(stream);
    rng
}

/// Gives every device a pseudo-random advertising and scan phase. Advertising
/// phases are kept distinct so that no two devices transmit in lock-step.
pub fn assign_phases(devices: &mut [Device], seed: u64) {
    let mut rng = slot_rng(seed, u64::MAX);
    let mut taken = HashSet::new();
    for dev in devices.iter_mut() {
        let t_adv = dev.timings.t_adv_ms;
        let mut phase = rng.random_range(0..t_adv);
        if (taken.len() as u64) < t_adv {
            while !taken.insert(phase) {
                phase = rng.random_range(0..t_adv);
            }
        }
        let scan_phase = rng.random_range(0..dev.timings.t_scan_ms);
        *dev = dev.clone().with_phases(phase, scan_phase);
    }
}

/// Runs the broadcast/scan event loop over `[0, horizon_ms)`.
///
/// `trajectories[i]` is the position track of `devices[i]`; `geometry(i, j)`
/// gives the wrist geometry for the link from sender `i` to receiver `j`.
pub fn run_protocol<G>(
    devices: &mut [Device],
    channel: &ChannelParams,
    trajectories: &[Trajectory],
    geometry: G,
    horizon_ms: u64,
    seed: u64,
) -> Result<ProtocolTrace>
where
    G: Fn(usize, usize) -> Geometry,
{
    channel.validate()?;
    if trajectories.len() != devices.len() {
        return Err(Error::Scenario(format!(
            "{} devices but {} trajectories",
            devices.len(),
            trajectories.len()
        )));
    }
    for (i, tr) in trajectories.iter().enumerate() {
        tr.check_covers(0, horizon_ms.saturating_sub(1))
            .map_err(|e| Error::Scenario(format!("device slot {i}: {e}")))?;
    }

    let mut channel_rng = slot_rng(seed ^ channel.rng_seed, 0);
    let mut sig_rngs: Vec<ChaCha8Rng> = (0..devices.len())
        .map(|slot| slot_rng(seed, 1 + slot as u64))
        .collect();

    // k-way merge of the per-device schedules.
    let schedules: Vec<Vec<ScheduledEvent>> = devices
        .iter()
        .map(|d| {
            d.next_events(horizon_ms)
                .into_iter()
                .filter(|e| matches!(e.kind, EventKind::Generate | EventKind::Advertise))
                .collect()
        })
        .collect();
    let mut cursor = vec![0usize; devices.len()];
    let mut heap = BinaryHeap::new();
    for (slot, sched) in schedules.iter().enumerate() {
        if let Some(e) = sched.first() {
            heap.push(Reverse((e.at_ms, e.kind, slot)));
        }
    }

    let mut trace = ProtocolTrace::default();
    while let Some(Reverse((at, kind, slot))) = heap.pop() {
        cursor[slot] += 1;
        if let Some(e) = schedules[slot].get(cursor[slot]) {
            heap.push(Reverse((e.at_ms, e.kind, slot)));
        }
        match kind {
            EventKind::Generate => {
                devices[slot].generate_signature(at, &mut sig_rngs[slot]);
            }
            EventKind::Advertise => {
                let Some(sig) = devices[slot].current_signature().copied() else {
                    continue;
                };
                trace.advertisements += 1;
                let from = trajectories[slot].position_at(at)?;
                for rx in 0..devices.len() {
                    if rx == slot || !devices[rx].is_listening(at) {
                        continue;
                    }
                    let distance = from.distance_to(trajectories[rx].position_at(at)?);
                    if !channel.in_range(distance) {
                        continue;
                    }
                    let geom = geometry(slot, rx);
                    let rss = sample_rss(channel, distance, geom, &mut channel_rng)?;
                    if devices[rx].receive(sig.payload.as_bytes(), rss, at)? == ReceiveOutcome::Logged {
                        trace.receptions.push(Reception {
                            receiver: rx,
                            sender: slot,
                            payload: sig.payload,
                            sample: RssSample {
                                true_distance_m: distance,
                                rss_dbm: rss,
                                timestamp_ms: at,
                                geometry: geom,
                            },
                        });
                    }
                }
            }
            EventKind::ScanOpen | EventKind::ScanClose => {}
        }
    }
    Ok(trace)
}
