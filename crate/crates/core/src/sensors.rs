//! Simulated measurement cabin: a two-cell scale and an ultrasonic height
//! sensor mounted in a 200 cm ceiling, speaking a line protocol.
//!
//! ```text
//! W:<kg>:<kg>[#seq]    scale, one reading per load cell
//! U:<micros>[#seq]     ultrasonic echo round-trip duration
//! ```

use std::fmt;

use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::rng::rng_from_seed;

/// Capacity of one load cell.
pub const CELL_CAPACITY_KG: f64 = 200.0;
/// Ceiling height of the cabin above the scale surface.
pub const CABIN_HEIGHT_CM: f64 = 200.0;
/// Speed of sound in air at 20 °C.
pub const SPEED_OF_SOUND_M_PER_S: f64 = 343.0;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum SensorError {
    #[error("malformed frame `{line}`: {reason}")]
    MalformedFrame { line: String, reason: String },
    #[error("{what} {value} out of range {range}")]
    OutOfRange { what: &'static str, value: f64, range: &'static str },
    #[error("echo duration must be positive, got {0}")]
    NonPositiveDuration(f64),
    #[error("weight and height must be positive, got {weight} kg, {height} m")]
    NonPositiveInput { weight: f64, height: f64 },
    #[error("implausible profile: {0}")]
    ImplausibleProfile(String),
}

pub type Result<T, E = SensorError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "lowercase")]
pub enum FramePayload {
    Scale { cell1_kg: f64, cell2_kg: f64 },
    Ultrasonic { duration_us: f64 },
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SensorFrame {
    #[serde(flatten)]
    pub payload: FramePayload,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub sequence: Option<u64>,
}

impl SensorFrame {
    pub fn scale(cell1_kg: f64, cell2_kg: f64) -> Self {
        SensorFrame { payload: FramePayload::Scale { cell1_kg, cell2_kg }, sequence: None }
    }

    pub fn ultrasonic(duration_us: f64) -> Self {
        SensorFrame { payload: FramePayload::Ultrasonic { duration_us }, sequence: None }
    }

    pub fn with_sequence(mut self, seq: u64) -> Self {
        self.sequence = Some(seq);
        self
    }

    pub fn is_scale(&self) -> bool {
        matches!(self.payload, FramePayload::Scale { .. })
    }
}

/// Wire form without the trailing newline. Numbers use the shortest
/// representation that parses back to the same value.
impl fmt::Display for SensorFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self.payload {
            FramePayload::Scale { cell1_kg, cell2_kg } => write!(f, "W:{cell1_kg}:{cell2_kg}")?,
            FramePayload::Ultrasonic { duration_us } => write!(f, "U:{duration_us}")?,
        }
        if let Some(seq) = self.sequence {
            write!(f, "#{seq}")?;
        }
        Ok(())
    }
}

pub fn format_frame(frame: &SensorFrame) -> String {
    frame.to_string()
}

fn parse_number(s: &str) -> Option<f64> {
    // Plain decimal notation only: digits with at most one '.'.
    let digits = s.strip_prefix('+').unwrap_or(s);
    let valid = !digits.is_empty()
        && digits.chars().all(|c| c.is_ascii_digit() || c == '.')
        && digits.chars().filter(|&c| c == '.').count() <= 1
        && digits.chars().any(|c| c.is_ascii_digit());
    if valid { digits.parse().ok() } else { None }
}

/// Parses one protocol line. The ultrasonic duration is normally an integer
/// microsecond count; fractional values are accepted for simulated sensors.
pub fn parse_frame(line: &str) -> Result<SensorFrame> {
    let malformed = |reason: &str| SensorError::MalformedFrame { line: line.to_string(), reason: reason.to_string() };
    let trimmed = line.trim();
    let (body, sequence) = match trimmed.split_once('#') {
        Some((body, seq)) => {
            let seq = seq.trim().parse::<u64>().map_err(|_| malformed("sequence must be a non-negative integer"))?;
            (body.trim(), Some(seq))
        }
        None => (trimmed, None),
    };
    let mut parts = body.split(':');
    let tag = parts.next().unwrap_or_default().trim();
    let fields: Vec<&str> = parts.map(str::trim).collect();
    let payload = match tag {
        "W" => {
            let [a, b] = fields[..] else { return Err(malformed("scale frame needs two cell readings")) };
            let cell1 = parse_number(a).ok_or_else(|| malformed("cell reading is not a number"))?;
            let cell2 = parse_number(b).ok_or_else(|| malformed("cell reading is not a number"))?;
            for c in [cell1, cell2] {
                if c > CELL_CAPACITY_KG {
                    return Err(malformed("cell reading exceeds 200 kg capacity"));
                }
            }
            FramePayload::Scale { cell1_kg: cell1, cell2_kg: cell2 }
        }
        "U" => {
            let [d] = fields[..] else { return Err(malformed("ultrasonic frame needs one duration")) };
            let d = parse_number(d).ok_or_else(|| malformed("duration is not a number"))?;
            if d <= 0.0 {
                return Err(malformed("duration must be positive"));
            }
            FramePayload::Ultrasonic { duration_us: d }
        }
        _ => return Err(malformed("unknown tag, expected W or U")),
    };
    Ok(SensorFrame { payload, sequence })
}

/// Total weight carried by both load cells.
pub fn weight_from_cells(cell1_kg: f64, cell2_kg: f64) -> Result<f64> {
    for c in [cell1_kg, cell2_kg] {
        if !(0.0..=CELL_CAPACITY_KG).contains(&c) {
            return Err(SensorError::OutOfRange { what: "load cell reading", value: c, range: "[0, 200] kg" });
        }
    }
    Ok(cell1_kg + cell2_kg)
}

/// One-way distance for an echo round trip: 343 m/s · t / 2, in centimetres.
pub fn distance_from_duration(duration_us: f64) -> Result<f64> {
    if !(duration_us > 0.0) {
        return Err(SensorError::NonPositiveDuration(duration_us));
    }
    Ok(SPEED_OF_SOUND_M_PER_S * (duration_us * 1e-6) / 2.0 * 100.0)
}

/// Inverse of [`distance_from_duration`].
pub fn duration_for_distance(distance_cm: f64) -> f64 {
    distance_cm / 100.0 * 2.0 / SPEED_OF_SOUND_M_PER_S * 1e6
}

/// h(d) = (200 − d) / 100: body height in metres from the ceiling distance.
pub fn height_from_distance(distance_cm: f64) -> Result<f64> {
    if !(distance_cm > 0.0 && distance_cm < CABIN_HEIGHT_CM) {
        return Err(SensorError::OutOfRange { what: "ceiling distance", value: distance_cm, range: "(0, 200) cm" });
    }
    Ok((CABIN_HEIGHT_CM - distance_cm) / 100.0)
}

pub fn distance_for_height(height_m: f64) -> f64 {
    CABIN_HEIGHT_CM - height_m * 100.0
}

/// BMI = w / h².
pub fn bmi(weight_kg: f64, height_m: f64) -> Result<f64> {
    if !(weight_kg > 0.0 && height_m > 0.0) {
        return Err(SensorError::NonPositiveInput { weight: weight_kg, height: height_m });
    }
    Ok(weight_kg / (height_m * height_m))
}

/// Weight and height as measured in the cabin.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Measurement {
    pub weight_kg: f64,
    pub distance_cm: f64,
    pub height_m: f64,
    pub bmi: f64,
}

impl Measurement {
    pub fn new(weight_kg: f64, distance_cm: f64) -> Result<Self> {
        let height_m = height_from_distance(distance_cm)?;
        Ok(Measurement { weight_kg, distance_cm, height_m, bmi: bmi(weight_kg, height_m)? })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Profile {
    pub weight_kg: f64,
    pub height_m: f64,
}

/// Emits `frames_per_sensor` scale frames and as many ultrasonic frames,
/// interleaved (W, U, W, U, ...) with increasing sequence numbers. Each cell
/// carries half the weight plus N(0, noise_sd²) kg, clamped to the cell
/// range; each echo corresponds to the profile's ceiling distance plus
/// N(0, noise_sd²) cm.
pub fn simulate_sensor_stream(profile: Profile, noise_sd: f64, frames_per_sensor: usize, seed: u64) -> Result<Vec<SensorFrame>> {
    if !(20.0..=250.0).contains(&profile.weight_kg) {
        return Err(SensorError::ImplausibleProfile(format!("weight {} kg outside [20, 250]", profile.weight_kg)));
    }
    if !(1.0..=1.99).contains(&profile.height_m) {
        return Err(SensorError::ImplausibleProfile(format!("height {} m outside [1.0, 1.99]", profile.height_m)));
    }
    if !(noise_sd >= 0.0 && noise_sd.is_finite()) {
        return Err(SensorError::ImplausibleProfile(format!("noise sd {noise_sd} must be non-negative")));
    }
    let mut rng = rng_from_seed(seed);
    let noise = Normal::new(0.0, noise_sd).expect("non-negative sd");
    let half = profile.weight_kg / 2.0;
    let distance = distance_for_height(profile.height_m);
    let mut frames = Vec::with_capacity(2 * frames_per_sensor);
    let mut seq = 0;
    for _ in 0..frames_per_sensor {
        let c1 = (half + noise.sample(&mut rng)).clamp(0.0, CELL_CAPACITY_KG);
        let c2 = (half + noise.sample(&mut rng)).clamp(0.0, CELL_CAPACITY_KG);
        frames.push(SensorFrame::scale(c1, c2).with_sequence(seq));
        seq += 1;
        let d = (distance + noise.sample(&mut rng)).clamp(0.01, CABIN_HEIGHT_CM - 0.01);
        frames.push(SensorFrame::ultrasonic(duration_for_distance(d)).with_sequence(seq));
        seq += 1;
    }
    Ok(frames)
}

/// Averages the weight and height carried by a frame stream.
pub fn average_measurement(frames: &[SensorFrame]) -> Result<Profile> {
    let (mut w_sum, mut w_n, mut h_sum, mut h_n) = (0.0, 0usize, 0.0, 0usize);
    for frame in frames {
        match frame.payload {
            FramePayload::Scale { cell1_kg, cell2_kg } => {
                w_sum += weight_from_cells(cell1_kg, cell2_kg)?;
                w_n += 1;
            }
            FramePayload::Ultrasonic { duration_us } => {
                h_sum += height_from_distance(distance_from_duration(duration_us)?)?;
                h_n += 1;
            }
        }
    }
    if w_n == 0 || h_n == 0 {
        return Err(SensorError::ImplausibleProfile("stream lacks scale or ultrasonic frames".into()));
    }
    Ok(Profile { weight_kg: w_sum / w_n as f64, height_m: h_sum / h_n as f64 })
}
