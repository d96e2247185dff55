//! Core domain types: sensors, device roles, samples, traces and the
//! per-transaction trace triple shared by every other module.

use std::fmt;

use thiserror::Error;

/// The seven ambient sensors recorded during the 500 ms transaction window.
///
/// Light is the only scalar-valued sensor; the rest report (x, y, z) vectors.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum SensorKind {
    Accelerometer,
    Gravity,
    Gyroscope,
    Light,
    LinearAcceleration,
    MagneticField,
    RotationVector,
}

impl SensorKind {
    /// All supported sensors, in wire-code order.
    pub const ALL: [SensorKind; 7] = [
        SensorKind::Accelerometer,
        SensorKind::Gravity,
        SensorKind::Gyroscope,
        SensorKind::Light,
        SensorKind::LinearAcceleration,
        SensorKind::MagneticField,
        SensorKind::RotationVector,
    ];

    /// True for sensors that report an (x, y, z) vector per sample.
    pub fn is_vector(self) -> bool {
        !matches!(self, SensorKind::Light)
    }

    /// Human-readable name used in reports and record files.
    pub fn canonical_name(self) -> &'static str {
        match self {
            SensorKind::Accelerometer => "Accelerometer",
            SensorKind::Gravity => "Gravity",
            SensorKind::Gyroscope => "Gyroscope",
            SensorKind::Light => "Light",
            SensorKind::LinearAcceleration => "Linear Acceleration",
            SensorKind::MagneticField => "Magnetic Field",
            SensorKind::RotationVector => "Rotation Vector",
        }
    }

    /// Lowercase identifier used in file names and CLI flags.
    pub fn slug(self) -> &'static str {
        match self {
            SensorKind::Accelerometer => "accelerometer",
            SensorKind::Gravity => "gravity",
            SensorKind::Gyroscope => "gyroscope",
            SensorKind::Light => "light",
            SensorKind::LinearAcceleration => "linear_acceleration",
            SensorKind::MagneticField => "magnetic_field",
            SensorKind::RotationVector => "rotation_vector",
        }
    }

    /// Measurement unit reported by the sensor.
    pub fn unit(self) -> &'static str {
        match self {
            SensorKind::Accelerometer | SensorKind::Gravity | SensorKind::LinearAcceleration => {
                "m/s^2"
            }
            SensorKind::Gyroscope => "rad/s",
            SensorKind::Light => "lux",
            SensorKind::MagneticField => "uT",
            SensorKind::RotationVector => "unitless",
        }
    }

    /// Stable one-byte code used by the protocol wire format.
    pub fn code(self) -> u8 {
        SensorKind::ALL.iter().position(|s| *s == self).unwrap() as u8
    }

    /// Inverse of [`SensorKind::code`].
    pub fn from_code(code: u8) -> Option<SensorKind> {
        SensorKind::ALL.get(code as usize).copied()
    }

    /// Parses either the canonical name or the slug form.
    pub fn parse(name: &str) -> Option<SensorKind> {
        SensorKind::ALL
            .iter()
            .find(|s| s.canonical_name() == name || s.slug() == name)
            .copied()
    }
}

impl fmt::Display for SensorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.canonical_name())
    }
}

impl serde::Serialize for SensorKind {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.canonical_name())
    }
}

impl<'de> serde::Deserialize<'de> for SensorKind {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        SensorKind::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown sensor {s:?}")))
    }
}

/// Which of the three devices recorded a trace.
///
/// `Tt` is the static Transaction Terminal, `Ti` the Transaction Instrument
/// tapped in close proximity, and `Dti` the Distant Transaction Instrument
/// standing in for the far end of a relay.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum DeviceRole {
    Tt,
    Ti,
    Dti,
}

impl DeviceRole {
    pub const ALL: [DeviceRole; 3] = [DeviceRole::Tt, DeviceRole::Ti, DeviceRole::Dti];

    pub fn name(self) -> &'static str {
        match self {
            DeviceRole::Tt => "TT",
            DeviceRole::Ti => "TI",
            DeviceRole::Dti => "DTI",
        }
    }

    pub fn parse(name: &str) -> Option<DeviceRole> {
        DeviceRole::ALL.iter().find(|r| r.name() == name).copied()
    }
}

impl fmt::Display for DeviceRole {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl serde::Serialize for DeviceRole {
    fn serialize<S: serde::Serializer>(&self, serializer: S) -> Result<S::Ok, S::Error> {
        serializer.serialize_str(self.name())
    }
}

impl<'de> serde::Deserialize<'de> for DeviceRole {
    fn deserialize<D: serde::Deserializer<'de>>(deserializer: D) -> Result<Self, D::Error> {
        let s = String::deserialize(deserializer)?;
        DeviceRole::parse(&s)
            .ok_or_else(|| serde::de::Error::custom(format!("unknown device role {s:?}")))
    }
}

/// Random 7-byte transaction identifier, rendered as 14 lowercase hex chars
/// wherever it appears in files or logs.
#[derive(Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct TransactionId([u8; 7]);

impl TransactionId {
    pub const LEN: usize = 7;

    pub fn new(bytes: [u8; 7]) -> TransactionId {
        TransactionId(bytes)
    }

    pub fn random<R: rand::Rng + ?Sized>(rng: &mut R) -> TransactionId {
        let mut bytes = [0u8; 7];
        rng.fill_bytes(&mut bytes);
        TransactionId(bytes)
    }

    pub fn bytes(&self) -> &[u8; 7] {
        &self.0
    }

    pub fn to_hex(&self) -> String {
        let mut s = String::with_capacity(14);
        for b in self.0 {
            s.push_str(&format!("{b:02x}"));
        }
        s
    }

    /// Parses exactly 14 lowercase hex characters.
    pub fn from_hex(s: &str) -> Result<TransactionId, IdParseError> {
        if s.len() != 14 {
            return Err(IdParseError::BadLength(s.len()));
        }
        let mut bytes = [0u8; 7];
        for (i, chunk) in s.as_bytes().chunks(2).enumerate() {
            let hi = hex_digit(chunk[0]).ok_or(IdParseError::BadDigit(chunk[0] as char))?;
            let lo = hex_digit(chunk[1]).ok_or(IdParseError::BadDigit(chunk[1] as char))?;
            bytes[i] = (hi << 4) | lo;
        }
        Ok(TransactionId(bytes))
    }
}

fn hex_digit(c: u8) -> Option<u8> {
    match c {
        b'0'..=b'9' => Some(c - b'0'),
        b'a'..=b'f' => Some(c - b'a' + 10),
        _ => None,
    }
}

impl fmt::Display for TransactionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_hex())
    }
}

impl fmt::Debug for TransactionId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "TransactionId({})", self.to_hex())
    }
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum IdParseError {
    #[error("transaction id must be 14 hex chars, got {0}")]
    BadLength(usize),
    #[error("transaction id contains non-hex digit {0:?} (lowercase hex required)")]
    BadDigit(char),
}

/// A single sensor reading: scalar for Light, 3-vector for everything else.
#[derive(Debug, Clone, Copy, PartialEq)]
pub enum SampleValue {
    Scalar(f64),
    Vector(f64, f64, f64),
}

impl SampleValue {
    pub fn is_vector(&self) -> bool {
        matches!(self, SampleValue::Vector(..))
    }

    pub fn is_finite(&self) -> bool {
        match *self {
            SampleValue::Scalar(v) => v.is_finite(),
            SampleValue::Vector(x, y, z) => x.is_finite() && y.is_finite() && z.is_finite(),
        }
    }
}

/// Timestamped reading, `t_ms` relative to the device's recording start.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Sample {
    pub t_ms: f64,
    pub value: SampleValue,
}

impl Sample {
    pub fn scalar(t_ms: f64, v: f64) -> Sample {
        Sample {
            t_ms,
            value: SampleValue::Scalar(v),
        }
    }

    pub fn vector(t_ms: f64, x: f64, y: f64, z: f64) -> Sample {
        Sample {
            t_ms,
            value: SampleValue::Vector(x, y, z),
        }
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TraceError {
    #[error("sample at t_ms={t_ms} is negative or non-finite")]
    BadTimestamp { t_ms: f64 },
    #[error("duplicate sample timestamp t_ms={t_ms}")]
    DuplicateTimestamp { t_ms: f64 },
    #[error("sample arity does not match sensor {sensor} (vector={expected_vector})")]
    ArityMismatch {
        sensor: SensorKind,
        expected_vector: bool,
    },
    #[error("non-finite sample value at t_ms={t_ms}")]
    NonFiniteValue { t_ms: f64 },
}

/// One device's recording of one sensor during one transaction window.
///
/// Samples are sorted by `t_ms` at construction; duplicate timestamps are
/// rejected because change-triggered delivery cannot produce two readings at
/// the same instant.
#[derive(Debug, Clone, PartialEq)]
pub struct SensorTrace {
    transaction_id: TransactionId,
    role: DeviceRole,
    sensor: SensorKind,
    location: String,
    start_epoch_ms: i64,
    samples: Vec<Sample>,
}

impl SensorTrace {
    pub fn new(
        transaction_id: TransactionId,
        role: DeviceRole,
        sensor: SensorKind,
        location: impl Into<String>,
        start_epoch_ms: i64,
        mut samples: Vec<Sample>,
    ) -> Result<SensorTrace, TraceError> {
        for s in &samples {
            if !s.t_ms.is_finite() || s.t_ms < 0.0 {
                return Err(TraceError::BadTimestamp { t_ms: s.t_ms });
            }
            if s.value.is_vector() != sensor.is_vector() {
                return Err(TraceError::ArityMismatch {
                    sensor,
                    expected_vector: sensor.is_vector(),
                });
            }
            if !s.value.is_finite() {
                return Err(TraceError::NonFiniteValue { t_ms: s.t_ms });
            }
        }
        samples.sort_by(|a, b| a.t_ms.total_cmp(&b.t_ms));
        for w in samples.windows(2) {
            if w[0].t_ms == w[1].t_ms {
                return Err(TraceError::DuplicateTimestamp { t_ms: w[0].t_ms });
            }
        }
        Ok(SensorTrace {
            transaction_id,
            role,
            sensor,
            location: location.into(),
            start_epoch_ms,
            samples,
        })
    }

    pub fn transaction_id(&self) -> TransactionId {
        self.transaction_id
    }

    pub fn role(&self) -> DeviceRole {
        self.role
    }

    pub fn sensor(&self) -> SensorKind {
        self.sensor
    }

    pub fn location(&self) -> &str {
        &self.location
    }

    pub fn start_epoch_ms(&self) -> i64 {
        self.start_epoch_ms
    }

    pub fn samples(&self) -> &[Sample] {
        &self.samples
    }

    pub fn len(&self) -> usize {
        self.samples.len()
    }

    pub fn is_empty(&self) -> bool {
        self.samples.is_empty()
    }

    /// Timestamp of the last sample, if any.
    pub fn max_t_ms(&self) -> Option<f64> {
        self.samples.last().map(|s| s.t_ms)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum TripleError {
    #[error("trace {role} carries id {found}, expected {expected}")]
    IdMismatch {
        role: DeviceRole,
        expected: TransactionId,
        found: TransactionId,
    },
    #[error("trace {role} records sensor {found}, expected {expected}")]
    SensorMismatch {
        role: DeviceRole,
        expected: SensorKind,
        found: SensorKind,
    },
    #[error("expected one trace per role TT/TI/DTI, got {found}")]
    RoleError { found: String },
}

/// The (TT, TI, DTI) trace bundle for one transaction: the genuine pair is
/// (TT, TI), the illegitimate pair (TT, DTI).
#[derive(Debug, Clone, PartialEq)]
pub struct TransactionTriple {
    pub transaction_id: TransactionId,
    pub sensor: SensorKind,
    pub location: String,
    pub tt: SensorTrace,
    pub ti: SensorTrace,
    pub dti: SensorTrace,
}

/// Assembles a triple from three traces that must share one transaction id
/// and sensor and carry the roles TT, TI and DTI exactly once each.
///
/// Roles are read from the traces themselves, so the argument order does not
/// matter.
pub fn validate_triple(
    a: SensorTrace,
    b: SensorTrace,
    c: SensorTrace,
) -> Result<TransactionTriple, TripleError> {
    let mut tt = None;
    let mut ti = None;
    let mut dti = None;
    for trace in [a, b, c] {
        let slot = match trace.role() {
            DeviceRole::Tt => &mut tt,
            DeviceRole::Ti => &mut ti,
            DeviceRole::Dti => &mut dti,
        };
        if slot.is_some() {
            return Err(TripleError::RoleError {
                found: format!("duplicate role {}", trace.role()),
            });
        }
        *slot = Some(trace);
    }
    let (tt, ti, dti) = match (tt, ti, dti) {
        (Some(tt), Some(ti), Some(dti)) => (tt, ti, dti),
        (tt, ti, dti) => {
            let missing: Vec<&str> = [
                (tt.is_none(), "TT"),
                (ti.is_none(), "TI"),
                (dti.is_none(), "DTI"),
            ]
            .iter()
            .filter(|(gone, _)| *gone)
            .map(|(_, n)| *n)
            .collect();
            return Err(TripleError::RoleError {
                found: format!("missing role(s) {}", missing.join(", ")),
            });
        }
    };
    let id = tt.transaction_id();
    let sensor = tt.sensor();
    for trace in [&ti, &dti] {
        if trace.transaction_id() != id {
            return Err(TripleError::IdMismatch {
                role: trace.role(),
                expected: id,
                found: trace.transaction_id(),
            });
        }
        if trace.sensor() != sensor {
            return Err(TripleError::SensorMismatch {
                role: trace.role(),
                expected: sensor,
                found: trace.sensor(),
            });
        }
    }
    let location = tt.location().to_string();
    Ok(TransactionTriple {
        transaction_id: id,
        sensor,
        location,
        tt,
        ti,
        dti,
    })
}
