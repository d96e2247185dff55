//! Three-device transaction protocol simulation.
//!
//! Each transaction: TT draws a 7-byte id, delivers (id, sensor) to TI over
//! the NFC stand-in link and broadcasts the same payload to DTI; all three
//! devices record the sensor for the transaction window; TI responds with
//! the message it saw; TT validates id and sensor and only then stores.
//! An inconsistent response discards the whole transaction; a missing DTI
//! recording leaves TT/TI rows that the three-way join later excludes.
//!
//! The channel is either fully emulated or a loopback-socket live mode;
//! recordings are deterministic per (scenario seed, sensor, ordinal) in both,
//! so the two modes produce identical stores for the same fault schedule.

pub mod live;
pub mod wire;

use std::collections::HashMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::store::{RecordStore, StoreError};
use crate::synth::{synthesize_transaction, ConfigError, SynthScenario};
use crate::trace::{validate_triple, SensorKind, TransactionTriple};

use live::LiveChannel;
use wire::ProtocolMessage;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("cannot bind loopback port {port}: {source}")]
    Bind {
        port: u16,
        source: std::io::Error,
    },
    #[error("channel error: {0}")]
    Channel(String),
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("invalid session: {0}")]
    Session(String),
    #[error("cannot read fault schedule {path}: {msg}")]
    FaultSchedule { path: String, msg: String },
}

/// Injectable channel faults.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FaultKind {
    /// Flip bits in the response id on the TI -> TT leg.
    CorruptResponseId,
    /// Replace the sensor code in the response.
    CorruptResponseSensor,
    /// The broadcast to DTI never arrives.
    DropDtiBroadcast,
    /// DTI receives an undecodable datagram instead of the message.
    CorruptDtiPayload,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct FaultEntry {
    index: u64,
    fault: FaultKind,
}

/// Faults keyed by session transaction index (0-based).
#[derive(Debug, Clone, Default)]
pub struct FaultSchedule {
    by_index: HashMap<u64, FaultKind>,
}

impl FaultSchedule {
    pub fn empty() -> FaultSchedule {
        FaultSchedule::default()
    }

    pub fn insert(&mut self, index: u64, fault: FaultKind) {
        self.by_index.insert(index, fault);
    }

    pub fn get(&self, index: u64) -> Option<FaultKind> {
        self.by_index.get(&index).copied()
    }

    pub fn len(&self) -> usize {
        self.by_index.len()
    }

    pub fn is_empty(&self) -> bool {
        self.by_index.is_empty()
    }

    /// Loads a JSON list of `{"index": n, "fault": "..."}` entries.
    pub fn load(path: &Path) -> Result<FaultSchedule, HarnessError> {
        let err = |msg: String| HarnessError::FaultSchedule {
            path: path.display().to_string(),
            msg,
        };
        let text = fs::read_to_string(path).map_err(|e| err(e.to_string()))?;
        let entries: Vec<FaultEntry> =
            serde_json::from_str(&text).map_err(|e| err(e.to_string()))?;
        let mut schedule = FaultSchedule::empty();
        for e in entries {
            schedule.insert(e.index, e.fault);
        }
        Ok(schedule)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutcomeStatus {
    Stored,
    DiscardedInconsistent,
    DiscardedIncomplete,
}

/// What happened to one attempted transaction.
#[derive(Debug, Clone)]
pub struct TransactionOutcome {
    pub status: OutcomeStatus,
    pub triple: Option<TransactionTriple>,
    pub diagnostics: Vec<String>,
}

/// Session bookkeeping: attempted = stored + discarded always holds.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct SessionSummary {
    pub attempted: u64,
    pub stored: u64,
    pub discarded_inconsistent: u64,
    pub discarded_incomplete: u64,
}

impl SessionSummary {
    pub fn discarded(&self) -> u64 {
        self.discarded_inconsistent + self.discarded_incomplete
    }
}

enum Channel {
    Emulated,
    Live(LiveChannel),
}

/// The environment handle: scenario-driven recordings, a protocol channel
/// and the record store the session populates.
pub struct Harness {
    scenario: SynthScenario,
    channel: Channel,
    store: RecordStore,
    sensor_ordinals: HashMap<SensorKind, u64>,
    txn_counter: u64,
}

impl Harness {
    /// In-process channel model; no sockets involved.
    pub fn new_emulated(scenario: SynthScenario) -> Result<Harness, HarnessError> {
        scenario.validate()?;
        Ok(Harness {
            scenario,
            channel: Channel::Emulated,
            store: RecordStore::new(),
            sensor_ordinals: HashMap::new(),
            txn_counter: 0,
        })
    }

    /// Live mode over loopback datagram sockets, DTI listening on `port`.
    pub fn new_live(scenario: SynthScenario, port: u16) -> Result<Harness, HarnessError> {
        scenario.validate()?;
        let channel = LiveChannel::bind(port)?;
        Ok(Harness {
            scenario,
            channel: Channel::Live(channel),
            store: RecordStore::new(),
            sensor_ordinals: HashMap::new(),
            txn_counter: 0,
        })
    }

    pub fn store(&self) -> &RecordStore {
        &self.store
    }

    pub fn into_store(self) -> RecordStore {
        self.store
    }

    /// Runs one transaction of the protocol, with an optional injected
    /// fault, and appends whatever the protocol allows to the store.
    pub fn run_transaction(
        &mut self,
        sensor: SensorKind,
        fault: Option<FaultKind>,
    ) -> Result<TransactionOutcome, HarnessError> {
        if !self.scenario.sensors.contains(&sensor) {
            return Err(HarnessError::Session(format!(
                "sensor {sensor} is not part of the scenario"
            )));
        }
        self.txn_counter += 1;
        let ordinal = self.sensor_ordinals.entry(sensor).or_insert(0);
        let rec = synthesize_transaction(&self.scenario, sensor, *ordinal);
        *ordinal += 1;

        let msg = ProtocolMessage {
            id: rec.id,
            sensor,
        };
        let mut diagnostics = Vec::new();
        let (response, dti_received) = self.exchange(&msg, fault, &mut diagnostics)?;

        let response_ok = match wire::decode(&response) {
            Ok(resp) => {
                if resp.id != msg.id {
                    diagnostics.push(format!(
                        "response id {} does not match transaction {}",
                        resp.id, msg.id
                    ));
                    false
                } else if resp.sensor != msg.sensor {
                    diagnostics.push(format!(
                        "response sensor {} does not match {}",
                        resp.sensor, msg.sensor
                    ));
                    false
                } else {
                    true
                }
            }
            Err(e) => {
                diagnostics.push(format!("undecodable response: {e}"));
                false
            }
        };
        if !response_ok {
            diagnostics.push("validation failed; no device stores this transaction".to_string());
            return Ok(TransactionOutcome {
                status: OutcomeStatus::DiscardedInconsistent,
                triple: None,
                diagnostics,
            });
        }

        self.store.append(rec.tt.clone())?;
        self.store.append(rec.ti.clone())?;
        if dti_received {
            self.store.append(rec.dti.clone())?;
            let triple = validate_triple(rec.tt, rec.ti, rec.dti)
                .expect("recorded triple shares id and sensor");
            Ok(TransactionOutcome {
                status: OutcomeStatus::Stored,
                triple: Some(triple),
                diagnostics,
            })
        } else {
            diagnostics
                .push("DTI stored nothing; the three-way join excludes this id".to_string());
            Ok(TransactionOutcome {
                status: OutcomeStatus::DiscardedIncomplete,
                triple: None,
                diagnostics,
            })
        }
    }

    /// Runs `n_per_sensor` transactions per sensor, cycling through the
    /// sensor list after every transaction.
    pub fn run_session(
        &mut self,
        sensors: &[SensorKind],
        n_per_sensor: u64,
        faults: &FaultSchedule,
    ) -> Result<SessionSummary, HarnessError> {
        if sensors.is_empty() {
            return Err(HarnessError::Session("no sensors requested".to_string()));
        }
        if n_per_sensor == 0 {
            return Err(HarnessError::Session(
                "n_per_sensor must be >= 1".to_string(),
            ));
        }
        let mut summary = SessionSummary::default();
        for _round in 0..n_per_sensor {
            for &sensor in sensors {
                let fault = faults.get(summary.attempted);
                let outcome = self.run_transaction(sensor, fault)?;
                summary.attempted += 1;
                match outcome.status {
                    OutcomeStatus::Stored => summary.stored += 1,
                    OutcomeStatus::DiscardedInconsistent => summary.discarded_inconsistent += 1,
                    OutcomeStatus::DiscardedIncomplete => summary.discarded_incomplete += 1,
                }
            }
        }
        Ok(summary)
    }

    /// Performs the two message legs and the TI response exchange; returns
    /// the raw response bytes and whether DTI decoded the broadcast.
    fn exchange(
        &mut self,
        msg: &ProtocolMessage,
        fault: Option<FaultKind>,
        diagnostics: &mut Vec<String>,
    ) -> Result<(Vec<u8>, bool), HarnessError> {
        let payload = wire::encode(msg);
        let broadcast = match fault {
            Some(FaultKind::DropDtiBroadcast) => {
                diagnostics.push("fault: DTI broadcast dropped".to_string());
                Broadcast::Dropped
            }
            Some(FaultKind::CorruptDtiPayload) => {
                diagnostics.push("fault: DTI datagram payload corrupted".to_string());
                Broadcast::Garbage
            }
            _ => Broadcast::Clean,
        };

        let (mut response, dti_received) = match &self.channel {
            Channel::Emulated => {
                let dti_received = matches!(broadcast, Broadcast::Clean);
                (payload.to_vec(), dti_received)
            }
            Channel::Live(channel) => {
                match broadcast {
                    Broadcast::Clean => channel.send_to_dti(&payload)?,
                    Broadcast::Garbage => channel.send_to_dti(&GARBAGE_PAYLOAD)?,
                    Broadcast::Dropped => {}
                }
                let response = channel.send_to_ti(&payload)?;
                let dti_received = match broadcast {
                    Broadcast::Clean => channel.dti_received(msg),
                    _ => {
                        channel.drain_dti_events();
                        false
                    }
                };
                (response, dti_received)
            }
        };

        // Response-leg faults corrupt the bytes in transit, identically in
        // both channel modes.
        match fault {
            Some(FaultKind::CorruptResponseId) => {
                diagnostics.push("fault: response id corrupted in transit".to_string());
                if !response.is_empty() {
                    response[0] ^= 0xff;
                }
            }
            Some(FaultKind::CorruptResponseSensor) => {
                diagnostics.push("fault: response sensor code corrupted in transit".to_string());
                if response.len() == wire::PAYLOAD_LEN {
                    response[7] = (response[7] + 1) % SensorKind::ALL.len() as u8;
                }
            }
            _ => {}
        }
        Ok((response, dti_received))
    }
}

enum Broadcast {
    Clean,
    Dropped,
    Garbage,
}

/// Deliberately undecodable datagram used by the corrupt-payload fault.
const GARBAGE_PAYLOAD: [u8; 9] = [0xaa; 9];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::{DtiDistanceMode, LocationProfile, SensorProfile};
    use crate::trace::DeviceRole;

    fn scenario(sensors: &[SensorKind]) -> SynthScenario {
        let profile = SensorProfile {
            base_level: 50.0,
            drift_rate: 1.0,
            event_rate: 4.0,
            event_magnitude: 2.0,
            observation_noise_sigma: 0.5,
            quantization_step: 0.01,
        };
        SynthScenario {
            n_transactions: 1000,
            sensors: sensors.iter().copied().collect(),
            locations: vec![LocationProfile {
                name: "lab".into(),
                sensors: sensors.iter().map(|&s| (s, profile.clone())).collect(),
            }],
            dti_distance_mode: DtiDistanceMode::SameRoomOffset,
            co_location_correlation: 0.9,
            seed: 77,
            recording_ms: 500.0,
            max_rate_hz: 100.0,
            start_jitter_ms: 10.0,
            dti_lag_ms: 20.0,
            dti_offset_sigma_mult: 0.5,
        }
    }

    #[test]
    fn happy_path_stores_valid_triple() {
        let mut h = Harness::new_emulated(scenario(&[SensorKind::Light])).unwrap();
        let outcome = h.run_transaction(SensorKind::Light, None).unwrap();
        assert_eq!(outcome.status, OutcomeStatus::Stored);
        let triple = outcome.triple.unwrap();
        assert_eq!(triple.sensor, SensorKind::Light);
        assert_eq!(h.store().len(), 3);
    }

    #[test]
    fn corrupt_response_discards_everything() {
        let mut h = Harness::new_emulated(scenario(&[SensorKind::Light])).unwrap();
        let outcome = h
            .run_transaction(SensorKind::Light, Some(FaultKind::CorruptResponseId))
            .unwrap();
        assert_eq!(outcome.status, OutcomeStatus::DiscardedInconsistent);
        assert!(outcome.triple.is_none());
        assert!(h.store().is_empty());
    }

    #[test]
    fn corrupt_response_sensor_also_discards() {
        let mut h = Harness::new_emulated(scenario(&[SensorKind::Light])).unwrap();
        let outcome = h
            .run_transaction(SensorKind::Light, Some(FaultKind::CorruptResponseSensor))
            .unwrap();
        assert_eq!(outcome.status, OutcomeStatus::DiscardedInconsistent);
        assert!(h.store().is_empty());
    }

    #[test]
    fn dropped_broadcast_leaves_join_orphans() {
        let mut h = Harness::new_emulated(scenario(&[SensorKind::Light])).unwrap();
        let outcome = h
            .run_transaction(SensorKind::Light, Some(FaultKind::DropDtiBroadcast))
            .unwrap();
        assert_eq!(outcome.status, OutcomeStatus::DiscardedIncomplete);
        // TT and TI stored their rows, DTI did not.
        assert_eq!(h.store().rows(SensorKind::Light, DeviceRole::Tt).len(), 1);
        assert_eq!(h.store().rows(SensorKind::Light, DeviceRole::Ti).len(), 1);
        assert_eq!(h.store().rows(SensorKind::Light, DeviceRole::Dti).len(), 0);
        assert!(h.store().join_triples(SensorKind::Light).is_empty());
    }

    #[test]
    fn session_counts_and_join() {
        let sensors = [SensorKind::Light, SensorKind::Gravity];
        let mut h = Harness::new_emulated(scenario(&sensors)).unwrap();
        let summary = h
            .run_session(&sensors, 3, &FaultSchedule::empty())
            .unwrap();
        assert_eq!(summary.attempted, 6);
        assert_eq!(summary.stored, 6);
        let triples: usize = sensors
            .iter()
            .map(|&s| h.store().join_triples(s).len())
            .sum();
        assert_eq!(triples, 6);
    }

    #[test]
    fn conservation_under_faults() {
        let mut faults = FaultSchedule::empty();
        // Every 10th transaction corrupted, every 7th drops the broadcast.
        for i in 0..500u64 {
            if i % 10 == 0 {
                faults.insert(i, FaultKind::CorruptResponseId);
            } else if i % 7 == 0 {
                faults.insert(i, FaultKind::DropDtiBroadcast);
            }
        }
        let mut h = Harness::new_emulated(scenario(&[SensorKind::Light])).unwrap();
        let summary = h
            .run_session(&[SensorKind::Light], 500, &faults)
            .unwrap();
        assert_eq!(summary.attempted, 500);
        assert_eq!(summary.stored + summary.discarded(), 500);
        assert!(summary.discarded_inconsistent >= 50);
        assert_eq!(
            h.store().join_triples(SensorKind::Light).len() as u64,
            summary.stored
        );
    }

    #[test]
    fn session_rejects_bad_args() {
        let mut h = Harness::new_emulated(scenario(&[SensorKind::Light])).unwrap();
        assert!(h.run_session(&[], 3, &FaultSchedule::empty()).is_err());
        assert!(h
            .run_session(&[SensorKind::Light], 0, &FaultSchedule::empty())
            .is_err());
        assert!(h.run_transaction(SensorKind::Gravity, None).is_err());
    }

    #[test]
    fn fault_schedule_json_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("faults.json");
        std::fs::write(
            &path,
            r#"[{"index": 2, "fault": "corrupt_response_id"}, {"index": 5, "fault": "drop_dti_broadcast"}]"#,
        )
        .unwrap();
        let schedule = FaultSchedule::load(&path).unwrap();
        assert_eq!(schedule.get(2), Some(FaultKind::CorruptResponseId));
        assert_eq!(schedule.get(5), Some(FaultKind::DropDtiBroadcast));
        assert_eq!(schedule.get(0), None);
        assert_eq!(schedule.len(), 2);
    }
}
