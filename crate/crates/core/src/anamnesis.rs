//! The patient interview as a deterministic state machine.
//!
//! A session walks a fixed sequence of stages: greeting, sex, age, weight,
//! height, two yes/no symptom questions and two 1 to 10 severity questions.
//! Once height is known the risk model produces a calibrated base
//! probability. The answers then shift it in log-odds space and the result
//! is routed through the twilight-zone rule.
//!
//! [`advance`] is a pure transition: it takes a session value and returns the
//! next one, so callers decide how to serialize and persist.

use std::collections::{BTreeMap, HashMap};
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::dataset::{PatientRecord, Sex};
use crate::neuralnet::{sigmoid, NetError};
use crate::sensors::{self, FramePayload, Measurement, SensorError, SensorFrame};

pub const MAX_RETRIES: u32 = 3;
pub const WEIGHT_RANGE_KG: (f64, f64) = (20.0, 250.0);
pub const HEIGHT_RANGE_M: (f64, f64) = (1.0, 1.99);
pub const AGE_RANGE: (u32, u32) = (18, 100);
/// Slack on the height gate, below the ultrasonic sensor's resolution, so an
/// echo for exactly 100 cm is not rejected over rounding in the conversion.
pub const HEIGHT_TOLERANCE_M: f64 = 1e-3;
/// Calibrated probabilities are kept this far from 0 and 1 so the log-odds
/// adjustment stays finite.
pub const PROBABILITY_FLOOR: f64 = 1e-6;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum AnamnesisError {
    #[error("stage {stage} expects {expected} input")]
    WrongInputKind { stage: Stage, expected: &'static str },
    #[error("session is done")]
    SessionDone,
    #[error("too many failed attempts at stage {0}; hand over to staff")]
    TooManyRetries(Stage),
    #[error("session is not done (stage {0})")]
    SessionNotDone(Stage),
    #[error("base probability {0} must lie strictly between 0 and 1")]
    DegenerateBase(f64),
    #[error("severity {0} outside 1..=10")]
    InvalidSeverity(u8),
    #[error("risk model failed: {0}")]
    Estimator(String),
}

pub type Result<T, E = AnamnesisError> = std::result::Result<T, E>;

// ---------------------------------------------------------------------------
// Utterances

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Expected {
    Number,
    Sex,
    YesNo,
    Severity,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum Parsed {
    Number(u32),
    Sex(Sex),
    YesNo(bool),
    Unrecognized,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub raw: String,
    pub parsed: Parsed,
}

/// Recognized words per category. Matching is case-insensitive.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Vocabulary {
    pub male: Vec<String>,
    pub female: Vec<String>,
    pub yes: Vec<String>,
    pub no: Vec<String>,
}

fn words(list: &[&str]) -> Vec<String> {
    list.iter().map(|s| s.to_string()).collect()
}

impl Default for Vocabulary {
    fn default() -> Self {
        Vocabulary {
            male: words(&["male", "man", "m"]),
            female: words(&["female", "woman", "f"]),
            yes: words(&["yes", "yeah", "yep", "y", "sure", "correct"]),
            no: words(&["no", "nope", "n", "not really"]),
        }
    }
}

const ONES: [&str; 19] = [
    "one", "two", "three", "four", "five", "six", "seven", "eight", "nine", "ten", "eleven", "twelve",
    "thirteen", "fourteen", "fifteen", "sixteen", "seventeen", "eighteen", "nineteen",
];
const TENS: [&str; 8] = ["twenty", "thirty", "forty", "fifty", "sixty", "seventy", "eighty", "ninety"];

fn number_words() -> HashMap<String, u32> {
    let mut map = HashMap::new();
    for (i, w) in ONES.iter().enumerate() {
        map.insert(w.to_string(), i as u32 + 1);
    }
    for (i, t) in TENS.iter().enumerate() {
        let base = 20 + 10 * i as u32;
        map.insert(t.to_string(), base);
        for (j, o) in ONES[..9].iter().enumerate() {
            map.insert(format!("{t} {o}"), base + j as u32 + 1);
        }
    }
    for w in ["hundred", "one hundred", "a hundred"] {
        map.insert(w.to_string(), 100);
    }
    map
}

fn normalize(raw: &str) -> String {
    let lowered = raw.trim().to_lowercase().replace('-', " ");
    let stripped = lowered.trim_end_matches(['.', '!', '?', ',']);
    stripped.split_whitespace().collect::<Vec<_>>().join(" ")
}

impl Vocabulary {
    fn matches(list: &[String], text: &str) -> bool {
        list.iter().any(|w| normalize(w) == text)
    }

    fn number(text: &str) -> Option<u32> {
        let n = if !text.is_empty() && text.chars().all(|c| c.is_ascii_digit()) {
            text.parse::<u32>().ok()?
        } else {
            *number_words().get(text)?
        };
        (1..=100).contains(&n).then_some(n)
    }

    pub fn parse(&self, raw: &str, expected: Expected) -> Utterance {
        let text = normalize(raw);
        let parsed = match expected {
            Expected::Number => Self::number(&text).map(Parsed::Number),
            Expected::Severity => Self::number(&text).filter(|n| *n <= 10).map(Parsed::Number),
            Expected::Sex => {
                if Self::matches(&self.male, &text) {
                    Some(Parsed::Sex(Sex::Male))
                } else if Self::matches(&self.female, &text) {
                    Some(Parsed::Sex(Sex::Female))
                } else {
                    None
                }
            }
            Expected::YesNo => {
                if Self::matches(&self.yes, &text) {
                    Some(Parsed::YesNo(true))
                } else if Self::matches(&self.no, &text) {
                    Some(Parsed::YesNo(false))
                } else {
                    None
                }
            }
        };
        Utterance { raw: raw.to_string(), parsed: parsed.unwrap_or(Parsed::Unrecognized) }
    }
}

/// Parses with the default English vocabulary.
pub fn parse_utterance(raw: &str, expected: Expected) -> Utterance {
    Vocabulary::default().parse(raw, expected)
}

// ---------------------------------------------------------------------------
// Adjustment and decision

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnamnesisAnswers {
    pub polyuria: bool,
    pub polydipsia: bool,
    /// 1 = not present or very little, 10 = a lot.
    pub alcohol: u8,
    pub tobacco: u8,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdjustmentConfig {
    pub delta_polyuria: f64,
    pub delta_polydipsia: f64,
    pub delta_alcohol_max: f64,
    pub delta_tobacco_max: f64,
    pub twilight_lo: f64,
    pub twilight_hi: f64,
}

impl Default for AdjustmentConfig {
    fn default() -> Self {
        AdjustmentConfig {
            delta_polyuria: 0.5,
            delta_polydipsia: 0.5,
            delta_alcohol_max: 0.4,
            delta_tobacco_max: 0.4,
            twilight_lo: 0.30,
            twilight_hi: 0.70,
        }
    }
}

impl AdjustmentConfig {
    pub fn validate(&self) -> std::result::Result<(), String> {
        let deltas = [self.delta_polyuria, self.delta_polydipsia, self.delta_alcohol_max, self.delta_tobacco_max];
        if deltas.iter().any(|d| !(d.is_finite() && *d >= 0.0)) {
            return Err("adjustment deltas must be finite and non-negative".into());
        }
        if !(0.0 <= self.twilight_lo && self.twilight_lo < self.twilight_hi && self.twilight_hi <= 1.0) {
            return Err(format!("invalid twilight zone [{}, {}]", self.twilight_lo, self.twilight_hi));
        }
        Ok(())
    }
}

fn signed(answer: bool) -> f64 {
    if answer { 1.0 } else { -1.0 }
}

/// Shifts the base probability in log-odds space: ±δ for each symptom,
/// and δ_max·(severity − 1)/9 for alcohol and tobacco.
pub fn adjust_probability(base: f64, answers: &AnamnesisAnswers, cfg: &AdjustmentConfig) -> Result<f64> {
    if !(base > 0.0 && base < 1.0) {
        return Err(AnamnesisError::DegenerateBase(base));
    }
    for s in [answers.alcohol, answers.tobacco] {
        if !(1..=10).contains(&s) {
            return Err(AnamnesisError::InvalidSeverity(s));
        }
    }
    let logit = (base / (1.0 - base)).ln()
        + signed(answers.polyuria) * cfg.delta_polyuria
        + signed(answers.polydipsia) * cfg.delta_polydipsia
        + cfg.delta_alcohol_max * f64::from(answers.alcohol - 1) / 9.0
        + cfg.delta_tobacco_max * f64::from(answers.tobacco - 1) / 9.0;
    Ok(sigmoid(logit))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Decision {
    LowRisk,
    RecommendHbA1cTest,
    HighRiskSeePhysician,
}

/// Twilight-zone routing; both boundaries belong to the zone.
pub fn decide(p: f64, cfg: &AdjustmentConfig) -> Decision {
    if p < cfg.twilight_lo {
        Decision::LowRisk
    } else if p <= cfg.twilight_hi {
        Decision::RecommendHbA1cTest
    } else {
        Decision::HighRiskSeePhysician
    }
}

// ---------------------------------------------------------------------------
// Risk model interface

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RiskEstimate {
    pub raw_score: f64,
    /// Calibrated probability of T2DM.
    pub probability: f64,
}

pub trait RiskEstimator {
    fn estimate(&self, record: &PatientRecord) -> Result<RiskEstimate, NetError>;
}

impl<F> RiskEstimator for F
where
    F: Fn(&PatientRecord) -> Result<RiskEstimate, NetError>,
{
    fn estimate(&self, record: &PatientRecord) -> Result<RiskEstimate, NetError> {
        self(record)
    }
}

// ---------------------------------------------------------------------------
// Sessions

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Stage {
    Greeting,
    AskSex,
    AskAge,
    MeasureWeight,
    MeasureHeight,
    AskPolyuria,
    AskPolydipsia,
    AskAlcohol,
    AskTobacco,
    Decide,
    Done,
}

impl fmt::Display for Stage {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Debug::fmt(self, f)
    }
}

impl Stage {
    pub const ORDER: [Stage; 11] = [
        Stage::Greeting,
        Stage::AskSex,
        Stage::AskAge,
        Stage::MeasureWeight,
        Stage::MeasureHeight,
        Stage::AskPolyuria,
        Stage::AskPolydipsia,
        Stage::AskAlcohol,
        Stage::AskTobacco,
        Stage::Decide,
        Stage::Done,
    ];

    pub fn next(self) -> Stage {
        let i = Stage::ORDER.iter().position(|s| *s == self).expect("stage listed");
        Stage::ORDER[(i + 1).min(Stage::ORDER.len() - 1)]
    }

    pub fn prompt(self) -> &'static str {
        match self {
            Stage::Greeting => "Hello, I am the virtual doctor. Say anything to begin.",
            Stage::AskSex => "Are you male or female?",
            Stage::AskAge => "How old are you?",
            Stage::MeasureWeight => "Please step onto the scale.",
            Stage::MeasureHeight => "Please stand upright below the height sensor.",
            Stage::AskPolyuria => "Do you have an increased desire to void your bladder? Please answer yes or no.",
            Stage::AskPolydipsia => "Are you unusually thirsty? Please answer yes or no.",
            Stage::AskAlcohol => {
                "How much alcohol do you drink, from 1 (not at all or very little) to 10 (a lot)?"
            }
            Stage::AskTobacco => "How much tobacco do you use, from 1 (not at all or very little) to 10 (a lot)?",
            Stage::Decide => "Computing your result.",
            Stage::Done => "Thank you. Your result is ready.",
        }
    }

    /// What an utterance at this stage is parsed as. `None` for the greeting
    /// (anything goes) and for stages that take no utterance.
    pub fn expected(self) -> Option<Expected> {
        match self {
            Stage::AskSex => Some(Expected::Sex),
            Stage::AskAge => Some(Expected::Number),
            Stage::AskPolyuria | Stage::AskPolydipsia => Some(Expected::YesNo),
            Stage::AskAlcohol | Stage::AskTobacco => Some(Expected::Severity),
            _ => None,
        }
    }

    pub fn takes_frame(self) -> bool {
        matches!(self, Stage::MeasureWeight | Stage::MeasureHeight)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Input {
    Utterance(Utterance),
    Frame(SensorFrame),
}

/// Unparsed input as it arrives over the wire or from a script.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RawInput {
    Utterance(String),
    Frame(String),
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub stage: Stage,
    pub prompt: String,
    pub input: String,
    pub timestamp: u64,
    pub accepted: bool,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct PartialAnswers {
    pub polyuria: Option<bool>,
    pub polydipsia: Option<bool>,
    pub alcohol: Option<u8>,
    pub tobacco: Option<u8>,
}

impl PartialAnswers {
    pub fn complete(&self) -> Option<AnamnesisAnswers> {
        Some(AnamnesisAnswers {
            polyuria: self.polyuria?,
            polydipsia: self.polydipsia?,
            alcohol: self.alcohol?,
            tobacco: self.tobacco?,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Session {
    pub id: String,
    pub stage: Stage,
    pub sex: Option<Sex>,
    pub age: Option<u32>,
    pub weight_kg: Option<f64>,
    pub measurement: Option<Measurement>,
    pub answers: PartialAnswers,
    pub raw_score: Option<f64>,
    pub base_probability: Option<f64>,
    pub adjusted_probability: Option<f64>,
    pub decision: Option<Decision>,
    pub transcript: Vec<TranscriptEntry>,
    pub retry_counts: BTreeMap<Stage, u32>,
    pub handover_required: bool,
    pub adjustment: AdjustmentConfig,
}

impl Session {
    pub fn new(id: impl Into<String>, adjustment: AdjustmentConfig) -> Self {
        Session {
            id: id.into(),
            stage: Stage::Greeting,
            sex: None,
            age: None,
            weight_kg: None,
            measurement: None,
            answers: PartialAnswers::default(),
            raw_score: None,
            base_probability: None,
            adjusted_probability: None,
            decision: None,
            transcript: Vec::new(),
            retry_counts: BTreeMap::new(),
            handover_required: false,
            adjustment,
        }
    }

    pub fn prompt(&self) -> &'static str {
        self.stage.prompt()
    }

    pub fn retry_count(&self) -> u32 {
        self.retry_counts.get(&self.stage).copied().unwrap_or(0)
    }

    pub fn is_done(&self) -> bool {
        self.stage == Stage::Done
    }

    /// Parses raw text for the current stage. Only a malformed frame fails;
    /// unrecognized speech is a value that leads to a re-prompt.
    pub fn parse_input(&self, raw: &RawInput, vocab: &Vocabulary) -> Result<Input, SensorError> {
        Ok(match raw {
            RawInput::Utterance(text) => Input::Utterance(match self.stage.expected() {
                Some(expected) => vocab.parse(text, expected),
                None => Utterance { raw: text.clone(), parsed: Parsed::Unrecognized },
            }),
            RawInput::Frame(line) => Input::Frame(sensors::parse_frame(line)?),
        })
    }
}

enum Outcome {
    Accept,
    Retry,
}

fn plausible(value: f64, (lo, hi): (f64, f64)) -> bool {
    value >= lo && value <= hi
}

/// Applies one input to a session and returns the successor state.
pub fn advance(session: &Session, input: &Input, estimator: &dyn RiskEstimator, timestamp: u64) -> Result<Session> {
    if session.is_done() {
        return Err(AnamnesisError::SessionDone);
    }
    if session.handover_required {
        return Err(AnamnesisError::TooManyRetries(session.stage));
    }
    let stage = session.stage;
    let wrong = |expected| AnamnesisError::WrongInputKind { stage, expected };
    let mut next = session.clone();

    let (outcome, text) = match (stage, input) {
        (Stage::Greeting, Input::Utterance(u)) => (Outcome::Accept, u.raw.clone()),
        (Stage::MeasureWeight, Input::Frame(f)) => {
            let FramePayload::Scale { cell1_kg, cell2_kg } = f.payload else { return Err(wrong("scale frame")) };
            let outcome = match sensors::weight_from_cells(cell1_kg, cell2_kg) {
                Ok(w) if plausible(w, WEIGHT_RANGE_KG) => {
                    next.weight_kg = Some(w);
                    Outcome::Accept
                }
                _ => Outcome::Retry,
            };
            (outcome, f.to_string())
        }
        (Stage::MeasureHeight, Input::Frame(f)) => {
            let FramePayload::Ultrasonic { duration_us } = f.payload else {
                return Err(wrong("ultrasonic frame"));
            };
            let weight = session.weight_kg.expect("weight recorded before height");
            let measured = sensors::distance_from_duration(duration_us)
                .and_then(|d| Measurement::new(weight, d))
                .ok()
                .filter(|m| plausible(m.height_m, (HEIGHT_RANGE_M.0 - HEIGHT_TOLERANCE_M, HEIGHT_RANGE_M.1 + HEIGHT_TOLERANCE_M)));
            let outcome = match measured {
                Some(m) => {
                    next.measurement = Some(m);
                    estimate_base(&mut next, estimator)?;
                    Outcome::Accept
                }
                None => Outcome::Retry,
            };
            (outcome, f.to_string())
        }
        (s, Input::Utterance(u)) if s.expected().is_some() => {
            let accepted = match (s, u.parsed) {
                (Stage::AskSex, Parsed::Sex(sex)) => {
                    next.sex = Some(sex);
                    true
                }
                (Stage::AskAge, Parsed::Number(n)) if (AGE_RANGE.0..=AGE_RANGE.1).contains(&n) => {
                    next.age = Some(n);
                    true
                }
                (Stage::AskPolyuria, Parsed::YesNo(b)) => {
                    next.answers.polyuria = Some(b);
                    true
                }
                (Stage::AskPolydipsia, Parsed::YesNo(b)) => {
                    next.answers.polydipsia = Some(b);
                    true
                }
                (Stage::AskAlcohol, Parsed::Number(n)) if (1..=10).contains(&n) => {
                    next.answers.alcohol = Some(n as u8);
                    true
                }
                (Stage::AskTobacco, Parsed::Number(n)) if (1..=10).contains(&n) => {
                    next.answers.tobacco = Some(n as u8);
                    true
                }
                _ => false,
            };
            (if accepted { Outcome::Accept } else { Outcome::Retry }, u.raw.clone())
        }
        (s, _) if s.takes_frame() => return Err(wrong("frame")),
        _ => return Err(wrong("utterance")),
    };

    next.transcript.push(TranscriptEntry {
        stage,
        prompt: stage.prompt().to_string(),
        input: text,
        timestamp,
        accepted: matches!(outcome, Outcome::Accept),
    });
    match outcome {
        Outcome::Accept => {
            next.stage = stage.next();
            if next.stage == Stage::Decide {
                finish(&mut next)?;
            }
        }
        Outcome::Retry => {
            let count = next.retry_counts.entry(stage).or_insert(0);
            *count += 1;
            if *count >= MAX_RETRIES {
                next.handover_required = true;
            }
        }
    }
    Ok(next)
}

fn estimate_base(session: &mut Session, estimator: &dyn RiskEstimator) -> Result<()> {
    let m = session.measurement.expect("measurement set");
    let record = PatientRecord {
        sex: session.sex.expect("sex recorded"),
        age: session.age.expect("age recorded"),
        height_m: Some(m.height_m),
        weight_kg: Some(m.weight_kg),
        bmi: m.bmi,
        hba1c: None,
        label: false,
    };
    let estimate = estimator.estimate(&record).map_err(|e| AnamnesisError::Estimator(e.to_string()))?;
    if !estimate.probability.is_finite() {
        return Err(AnamnesisError::Estimator(format!("non-finite probability {}", estimate.probability)));
    }
    session.raw_score = Some(estimate.raw_score);
    session.base_probability = Some(estimate.probability.clamp(PROBABILITY_FLOOR, 1.0 - PROBABILITY_FLOOR));
    Ok(())
}

fn finish(session: &mut Session) -> Result<()> {
    let answers = session.answers.complete().expect("all questions answered before Decide");
    let base = session.base_probability.expect("base probability set after height");
    let adjusted = adjust_probability(base, &answers, &session.adjustment)?;
    session.adjusted_probability = Some(adjusted);
    session.decision = Some(decide(adjusted, &session.adjustment));
    session.stage = Stage::Done;
    Ok(())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RiskReport {
    pub session_id: String,
    pub sex: Sex,
    pub age: u32,
    pub measurement: Measurement,
    pub answers: AnamnesisAnswers,
    pub raw_score: f64,
    pub base_probability: f64,
    pub adjusted_probability: f64,
    pub decision: Decision,
    pub adjustment: AdjustmentConfig,
    pub transcript: Vec<TranscriptEntry>,
}

pub fn render_report(session: &Session) -> Result<RiskReport> {
    let not_done = || AnamnesisError::SessionNotDone(session.stage);
    if !session.is_done() {
        return Err(not_done());
    }
    Ok(RiskReport {
        session_id: session.id.clone(),
        sex: session.sex.ok_or_else(not_done)?,
        age: session.age.ok_or_else(not_done)?,
        measurement: session.measurement.ok_or_else(not_done)?,
        answers: session.answers.complete().ok_or_else(not_done)?,
        raw_score: session.raw_score.ok_or_else(not_done)?,
        base_probability: session.base_probability.ok_or_else(not_done)?,
        adjusted_probability: session.adjusted_probability.ok_or_else(not_done)?,
        decision: session.decision.ok_or_else(not_done)?,
        adjustment: session.adjustment,
        transcript: session.transcript.clone(),
    })
}

/// Runs a whole script through a fresh session, timestamping each input with
/// its position so the result depends only on the script and the model.
pub fn replay(id: &str, script: &[RawInput], estimator: &dyn RiskEstimator, cfg: AdjustmentConfig) -> Result<Session, ReplayError> {
    let vocab = Vocabulary::default();
    let mut session = Session::new(id, cfg);
    for (i, raw) in script.iter().enumerate() {
        let input = session.parse_input(raw, &vocab).map_err(|e| ReplayError::Frame { index: i, source: e })?;
        session = advance(&session, &input, estimator, i as u64).map_err(|e| ReplayError::Step { index: i, source: e })?;
    }
    Ok(session)
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum ReplayError {
    #[error("script entry {index}: {source}")]
    Frame { index: usize, source: SensorError },
    #[error("script entry {index}: {source}")]
    Step { index: usize, source: AnamnesisError },
}
