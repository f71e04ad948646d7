//! Token estimation and dollar accounting.
//!
//! Money is tracked in picodollars (10^-12 USD) so that
//! `tokens * price_per_million` is an exact integer: prices are held in
//! microdollars per million tokens, and one token at one microdollar per
//! million tokens is exactly one picodollar.

use std::collections::BTreeMap;
use std::fmt;
use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, Write};
use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Deserializer, Serialize, Serializer};

/// Reference resolution every measured image-token figure is quoted at.
pub const REFERENCE_RESOLUTION: (u32, u32) = (1920, 1080);
pub const TOKENS_PER_1080P_IMAGE: u64 = 2_125;

#[derive(Debug, thiserror::Error, PartialEq, Eq)]
pub enum CostError {
    #[error("no image token figure for {width}x{height}")]
    UnknownResolution { width: u32, height: u32 },
    #[error("model `{0}` has no price entry")]
    UnpricedModel(String),
    #[error("invalid benchmark parameters: {0}")]
    InvalidParameters(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Default)]
pub struct Money(i128);

impl Money {
    pub const ZERO: Money = Money(0);
    const PICO_PER_USD: i128 = 1_000_000_000_000;

    pub fn from_picodollars(p: i128) -> Self {
        Money(p)
    }

    /// Converts a dollar amount, rounding to the nearest picodollar.
    pub fn from_usd(usd: f64) -> Self {
        Money((usd * Self::PICO_PER_USD as f64).round() as i128)
    }

    pub fn picodollars(self) -> i128 {
        self.0
    }

    pub fn usd(self) -> f64 {
        self.0 as f64 / Self::PICO_PER_USD as f64
    }

    pub fn scale(self, n: u64) -> Money {
        Money(self.0 * n as i128)
    }

    /// Rounded display with `decimals` fractional digits (half away from zero).
    pub fn display(self, decimals: u32) -> String {
        let unit = 10i128.pow(12 - decimals.min(12));
        let q = (self.0.abs() + unit / 2) / unit;
        let sign = if self.0 < 0 { "-" } else { "" };
        let int = q / 10i128.pow(decimals);
        let frac = q % 10i128.pow(decimals);
        if decimals == 0 {
            format!("{sign}${int}")
        } else {
            format!("{sign}${int}.{frac:0width$}", width = decimals as usize)
        }
    }
}

impl std::ops::Add for Money {
    type Output = Money;
    fn add(self, rhs: Money) -> Money {
        Money(self.0 + rhs.0)
    }
}

impl std::iter::Sum for Money {
    fn sum<I: Iterator<Item = Money>>(iter: I) -> Money {
        iter.fold(Money::ZERO, |a, b| a + b)
    }
}

impl fmt::Display for Money {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.display(4))
    }
}

impl Serialize for Money {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.usd())
    }
}

impl<'de> Deserialize<'de> for Money {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        f64::deserialize(d).map(Money::from_usd)
    }
}

/// USD per one million tokens, stored as integer microdollars.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct PerMillion(u64);

impl PerMillion {
    pub fn from_usd(usd: f64) -> Self {
        PerMillion((usd * 1e6).round().max(0.0) as u64)
    }

    pub fn usd(self) -> f64 {
        self.0 as f64 / 1e6
    }

    pub fn cost(self, tokens: u64) -> Money {
        Money(tokens as i128 * self.0 as i128)
    }
}

impl Serialize for PerMillion {
    fn serialize<S: Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.serialize_f64(self.usd())
    }
}

impl<'de> Deserialize<'de> for PerMillion {
    fn deserialize<D: Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let v = f64::deserialize(d)?;
        if v < 0.0 || !v.is_finite() {
            return Err(serde::de::Error::custom("price must be a non-negative number"));
        }
        Ok(PerMillion::from_usd(v))
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct ModelPrice {
    #[serde(rename = "in_per_1m")]
    pub input: PerMillion,
    #[serde(rename = "out_per_1m")]
    pub output: PerMillion,
}

impl ModelPrice {
    pub fn usd(input: f64, output: f64) -> Self {
        Self { input: PerMillion::from_usd(input), output: PerMillion::from_usd(output) }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(transparent)]
pub struct PriceTable(pub BTreeMap<String, ModelPrice>);

impl PriceTable {
    /// List prices used by the default model assignment.
    pub fn reference() -> Self {
        let mut t = BTreeMap::new();
        t.insert("gpt-4.1".to_string(), ModelPrice::usd(2.00, 8.00));
        t.insert("gpt-4.1-mini".to_string(), ModelPrice::usd(0.40, 1.60));
        t.insert("gpt-5.1".to_string(), ModelPrice::usd(1.25, 10.00));
        PriceTable(t)
    }

    pub fn get(&self, model: &str) -> Option<&ModelPrice> {
        self.0.get(model)
    }

    pub fn insert(&mut self, model: impl Into<String>, price: ModelPrice) {
        self.0.insert(model.into(), price);
    }

    pub fn load(path: &Path) -> std::io::Result<Self> {
        let raw = std::fs::read(path)?;
        serde_json::from_slice(&raw).map_err(std::io::Error::other)
    }
}

fn one() -> u64 {
    1
}

fn yes() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct UsageRecord {
    pub stage: String,
    #[serde(rename = "model")]
    pub model_name: String,
    #[serde(default = "one")]
    pub calls: u64,
    pub input_tokens: u64,
    pub output_tokens: u64,
    /// Transport attempts spent on this logical call.
    #[serde(default = "one")]
    pub attempts: u64,
    #[serde(default = "yes")]
    pub ok: bool,
    /// Video the call was made for, when there is one.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub scope: Option<String>,
}

impl UsageRecord {
    pub fn new(stage: impl Into<String>, model: impl Into<String>, calls: u64, input_tokens: u64, output_tokens: u64) -> Self {
        Self {
            stage: stage.into(),
            model_name: model.into(),
            calls,
            input_tokens,
            output_tokens,
            attempts: calls,
            ok: true,
            scope: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostRow {
    pub stage: String,
    pub model: String,
    pub calls: u64,
    pub in_tokens: u64,
    pub out_tokens: u64,
    pub usd: Money,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CostReport {
    pub rows: Vec<CostRow>,
    pub total_usd: Money,
}

impl CostReport {
    pub fn row(&self, stage: &str) -> Option<&CostRow> {
        self.rows.iter().find(|r| r.stage == stage)
    }

    pub fn total_in(&self) -> u64 {
        self.rows.iter().map(|r| r.in_tokens).sum()
    }

    pub fn total_out(&self) -> u64 {
        self.rows.iter().map(|r| r.out_tokens).sum()
    }

    pub fn total_calls(&self) -> u64 {
        self.rows.iter().map(|r| r.calls).sum()
    }

    /// Fixed-width table for terminals.
    pub fn to_table(&self) -> String {
        let mut out = format!(
            "{:<24} {:<14} {:>6} {:>12} {:>10} {:>11}\n",
            "stage", "model", "calls", "in tok", "out tok", "cost"
        );
        for r in &self.rows {
            out.push_str(&format!(
                "{:<24} {:<14} {:>6} {:>12} {:>10} {:>11}\n",
                r.stage,
                r.model,
                r.calls,
                r.in_tokens,
                r.out_tokens,
                r.usd.display(5)
            ));
        }
        out.push_str(&format!(
            "{:<24} {:<14} {:>6} {:>12} {:>10} {:>11}\n",
            "total",
            "",
            self.total_calls(),
            self.total_in(),
            self.total_out(),
            self.total_usd.display(4)
        ));
        out
    }
}

/// Text tokens at four characters per token, rounded to nearest (halves up).
pub fn estimate_text_tokens(text: &str) -> u64 {
    estimate_tokens_for_chars(text.chars().count() as u64)
}

pub fn estimate_tokens_for_chars(chars: u64) -> u64 {
    (chars + 2) / 4
}

/// Per-image token figures keyed by resolution.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageTokenTable(BTreeMap<(u32, u32), u64>);

impl Default for ImageTokenTable {
    fn default() -> Self {
        let mut t = BTreeMap::new();
        t.insert(REFERENCE_RESOLUTION, TOKENS_PER_1080P_IMAGE);
        ImageTokenTable(t)
    }
}

impl ImageTokenTable {
    pub fn with_override(mut self, width: u32, height: u32, tokens: u64) -> Self {
        self.0.insert((width, height), tokens);
        self
    }

    pub fn tokens(&self, width: u32, height: u32) -> Result<u64, CostError> {
        self.0.get(&(width, height)).copied().ok_or(CostError::UnknownResolution { width, height })
    }
}

pub fn image_tokens(width: u32, height: u32) -> Result<u64, CostError> {
    ImageTokenTable::default().tokens(width, height)
}

pub fn cost_of(records: &[UsageRecord], prices: &PriceTable) -> Result<CostReport, CostError> {
    let mut rows = Vec::with_capacity(records.len());
    for r in records {
        let price = prices.get(&r.model_name).ok_or_else(|| CostError::UnpricedModel(r.model_name.clone()))?;
        rows.push(CostRow {
            stage: r.stage.clone(),
            model: r.model_name.clone(),
            calls: r.calls,
            in_tokens: r.input_tokens,
            out_tokens: r.output_tokens,
            usd: price.input.cost(r.input_tokens) + price.output.cost(r.output_tokens),
        });
    }
    let total_usd = rows.iter().map(|r| r.usd).sum();
    Ok(CostReport { rows, total_usd })
}

/// Sums records sharing a (stage, model) pair, keeping first-seen order.
pub fn aggregate(records: &[UsageRecord]) -> Vec<UsageRecord> {
    let mut out: Vec<UsageRecord> = Vec::new();
    for r in records {
        match out.iter_mut().find(|o| o.stage == r.stage && o.model_name == r.model_name) {
            Some(o) => {
                o.calls += r.calls;
                o.input_tokens += r.input_tokens;
                o.output_tokens += r.output_tokens;
                o.attempts += r.attempts;
                o.ok &= r.ok;
            }
            None => out.push(r.clone()),
        }
    }
    out
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Regime {
    Typical,
    Complex,
}

impl std::str::FromStr for Regime {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, String> {
        match s {
            "typical" => Ok(Regime::Typical),
            "complex" => Ok(Regime::Complex),
            other => Err(format!("unknown regime `{other}`")),
        }
    }
}

/// Measured per-video annotation workload.
#[derive(Debug, Clone, PartialEq)]
pub struct AnnotationWorkload {
    pub frame_pairs: u64,
    pub meaningful_pairs: u64,
    /// Element-graph characters per keyframe of a meaningful pair.
    pub valid_frame_chars: u64,
    pub invalid_frame_chars: u64,
    pub static_prompt_tokens: u64,
    pub idm_output_tokens: u64,
    pub trajectory_tokens: u64,
    pub decomposition_static_tokens: u64,
    pub planning_output_tokens: u64,
    pub grounding_output_tokens: u64,
    pub model: String,
}

impl AnnotationWorkload {
    pub fn for_regime(regime: Regime) -> Self {
        Self {
            frame_pairs: 15,
            meaningful_pairs: 11,
            valid_frame_chars: match regime {
                Regime::Typical => 10_000,
                // roughly 17K; 17,072 puts the regime at 172,452 input tokens
                Regime::Complex => 17_072,
            },
            invalid_frame_chars: 100,
            static_prompt_tokens: 550,
            idm_output_tokens: 6_350,
            trajectory_tokens: 2_728,
            decomposition_static_tokens: 450,
            planning_output_tokens: 546,
            grounding_output_tokens: 1_650,
            model: "gpt-5.1".to_string(),
        }
    }

    pub fn image_tokens(&self) -> u64 {
        2 * self.frame_pairs * TOKENS_PER_1080P_IMAGE
    }

    pub fn element_chars(&self) -> u64 {
        let invalid = self.frame_pairs - self.meaningful_pairs;
        2 * (self.meaningful_pairs * self.valid_frame_chars + invalid * self.invalid_frame_chars)
    }

    pub fn element_tokens(&self) -> u64 {
        estimate_tokens_for_chars(self.element_chars())
    }

    pub fn idm_input_tokens(&self) -> u64 {
        self.image_tokens() + self.element_tokens() + self.frame_pairs * self.static_prompt_tokens
    }

    pub fn decomposition_input_tokens(&self) -> u64 {
        self.trajectory_tokens + self.decomposition_static_tokens
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        vec![
            UsageRecord::new(stages::FRAME_PAIR_IDM, &self.model, self.frame_pairs, self.idm_input_tokens(), self.idm_output_tokens),
            UsageRecord::new(stages::PLANNING, &self.model, 1, self.decomposition_input_tokens(), self.planning_output_tokens),
            UsageRecord::new(stages::GROUNDING, &self.model, 1, self.decomposition_input_tokens(), self.grounding_output_tokens),
        ]
    }
}

/// Stage labels shared by the pipeline and the reference profiles.
pub mod stages {
    pub const QUERY_GENERATION: &str = "query_generation";
    pub const QUERY_SIMPLIFICATION: &str = "query_simplification";
    pub const GUI_CLASSIFICATION: &str = "gui_classification";
    pub const TOPIC_EXTRACTION: &str = "topic_extraction";
    pub const RELEVANCE_SCORING: &str = "relevance_scoring";
    pub const FRAME_PAIR_IDM: &str = "frame_pair_idm";
    pub const PLANNING: &str = "planning_split";
    pub const GROUNDING: &str = "grounding_split";

    pub const ANNOTATION: [&str; 3] = [FRAME_PAIR_IDM, PLANNING, GROUNDING];
}

pub fn annotation_profile(regime: Regime) -> Vec<UsageRecord> {
    AnnotationWorkload::for_regime(regime).records()
}

/// Per-task retrieval usage. Classification and topic extraction share one
/// row because they run over the same ~15 pre-filtered candidates.
pub fn retrieval_profile() -> Vec<UsageRecord> {
    vec![
        UsageRecord::new(stages::QUERY_GENERATION, "gpt-4.1", 1, 109, 10),
        UsageRecord::new(stages::QUERY_SIMPLIFICATION, "gpt-4.1-mini", 1, 268, 20),
        UsageRecord::new("gui_classification+topic", "gpt-4.1-mini", 15, 43_380, 525),
        UsageRecord::new(stages::RELEVANCE_SCORING, "gpt-4.1-mini", 1, 436, 25),
    ]
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BenchmarkTotals {
    pub tasks: u64,
    pub covered: u64,
    pub videos: u64,
    pub retrieval_usd: Money,
    pub annotation_usd: Money,
    pub total_usd: Money,
}

pub fn benchmark_total(
    tasks: u64,
    covered: u64,
    two_video_fraction: f64,
    per_task: Money,
    per_video: Money,
) -> Result<BenchmarkTotals, CostError> {
    if covered > tasks {
        return Err(CostError::InvalidParameters(format!("covered {covered} exceeds tasks {tasks}")));
    }
    if !(0.0..=1.0).contains(&two_video_fraction) {
        return Err(CostError::InvalidParameters(format!("fraction {two_video_fraction} outside [0, 1]")));
    }
    let videos = (covered as f64 * (1.0 + two_video_fraction)).round() as u64;
    let retrieval_usd = per_task.scale(tasks);
    let annotation_usd = per_video.scale(videos);
    Ok(BenchmarkTotals { tasks, covered, videos, retrieval_usd, annotation_usd, total_usd: retrieval_usd + annotation_usd })
}

impl BenchmarkTotals {
    pub fn to_report(&self) -> CostReport {
        let row = |stage: &str, calls, usd| CostRow {
            stage: stage.to_string(),
            model: "mixed".to_string(),
            calls,
            in_tokens: 0,
            out_tokens: 0,
            usd,
        };
        CostReport {
            rows: vec![row("retrieval", self.tasks, self.retrieval_usd), row("annotation", self.videos, self.annotation_usd)],
            total_usd: self.total_usd,
        }
    }
}

/// Append-only usage log shared by every provider call of a run.
#[derive(Debug, Default)]
pub struct Ledger {
    records: Mutex<Vec<UsageRecord>>,
    sink: Option<Mutex<File>>,
}

impl Ledger {
    pub fn in_memory() -> Self {
        Self::default()
    }

    /// Ledger that also appends every record to a JSON-lines file.
    pub fn with_sink(path: &Path) -> std::io::Result<Self> {
        let file = OpenOptions::new().create(true).append(true).open(path)?;
        Ok(Self { records: Mutex::new(Vec::new()), sink: Some(Mutex::new(file)) })
    }

    pub fn record(&self, record: UsageRecord) {
        // the sink lock is taken first so file order matches memory order
        let _file = self.sink.as_ref().map(|sink| {
            let mut file = sink.lock().unwrap();
            let line = serde_json::to_string(&record).expect("usage record serializes");
            if let Err(err) = writeln!(file, "{line}") {
                tracing::error!(%err, "failed to append to usage ledger");
            }
            file
        });
        self.records.lock().unwrap().push(record);
    }

    pub fn records(&self) -> Vec<UsageRecord> {
        self.records.lock().unwrap().clone()
    }

    pub fn len(&self) -> usize {
        self.records.lock().unwrap().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }
}

pub fn read_ledger(path: &Path) -> std::io::Result<Vec<UsageRecord>> {
    let reader = BufReader::new(File::open(path)?);
    let mut out = Vec::new();
    for line in reader.lines() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(&line).map_err(std::io::Error::other)?);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn gpt51() -> PriceTable {
        PriceTable::reference()
    }

    #[test]
    fn text_token_rounding() {
        assert_eq!(estimate_text_tokens(""), 0);
        assert_eq!(estimate_text_tokens("0123456789"), 3);
        assert_eq!(estimate_tokens_for_chars(220_800), 55_200);
        assert_eq!(estimate_text_tokens("abcdefg"), 2);
        assert_eq!(estimate_text_tokens("é"), 0);
    }

    #[test]
    fn image_lookup() {
        assert_eq!(image_tokens(1920, 1080), Ok(2_125));
        assert_eq!(30 * image_tokens(1920, 1080).unwrap(), 63_750);
        assert_eq!(image_tokens(800, 600), Err(CostError::UnknownResolution { width: 800, height: 600 }));
        assert_eq!(ImageTokenTable::default().with_override(800, 600, 700).tokens(800, 600), Ok(700));
    }

    #[test]
    fn table_six_rows() {
        let r = cost_of(&[UsageRecord::new("x", "gpt-5.1", 15, 127_200, 6_350)], &gpt51()).unwrap();
        assert_eq!(r.total_usd.display(4), "$0.2225");
        let r = cost_of(&[UsageRecord::new("x", "gpt-5.1", 1, 3_178, 1_650)], &gpt51()).unwrap();
        assert_eq!(r.total_usd.display(4), "$0.0205");
        let r = cost_of(&[UsageRecord::new("x", "gpt-5.1", 0, 0, 0)], &gpt51()).unwrap();
        assert_eq!(r.total_usd, Money::ZERO);
    }

    #[test]
    fn unpriced_model() {
        let err = cost_of(&[UsageRecord::new("x", "mystery", 1, 1, 1)], &gpt51()).unwrap_err();
        assert_eq!(err, CostError::UnpricedModel("mystery".into()));
    }

    #[test]
    fn exact_picodollars() {
        // 268 tokens at $0.40/M is 107.2 microdollars: no float rounding
        let p = PerMillion::from_usd(0.40);
        assert_eq!(p.cost(268).picodollars(), 107_200_000);
    }

    #[test]
    fn typical_profile_decomposition() {
        let w = AnnotationWorkload::for_regime(Regime::Typical);
        assert_eq!((w.image_tokens(), w.element_tokens(), w.frame_pairs * w.static_prompt_tokens), (63_750, 55_200, 8_250));
        assert_eq!(w.idm_input_tokens(), 127_200);
        let report = cost_of(&w.records(), &gpt51()).unwrap();
        assert_eq!((report.total_in(), report.total_out()), (133_556, 8_546));
    }

    #[test]
    fn benchmark_edges() {
        let b = benchmark_total(10, 0, 0.5, Money::from_usd(0.0188), Money::from_usd(0.252)).unwrap();
        assert_eq!(b.annotation_usd, Money::ZERO);
        let b = benchmark_total(10, 7, 1.0, Money::from_usd(0.0188), Money::from_usd(0.252)).unwrap();
        assert_eq!(b.videos, 14);
        assert!(benchmark_total(3, 4, 0.0, Money::ZERO, Money::ZERO).is_err());
        assert!(benchmark_total(3, 2, 1.5, Money::ZERO, Money::ZERO).is_err());
    }

    #[test]
    fn money_display() {
        assert_eq!(Money::from_usd(0.000_139_2).display(5), "$0.00014");
        assert_eq!(Money::from_usd(114.394).display(1), "$114.4");
        assert_eq!(Money::from_usd(0.25237).display(3), "$0.252");
    }

    #[test]
    fn ledger_sink_roundtrip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ledger.jsonl");
        let ledger = Ledger::with_sink(&path).unwrap();
        ledger.record(UsageRecord::new("a", "gpt-5.1", 1, 10, 2));
        ledger.record(UsageRecord::new("b", "gpt-5.1", 1, 11, 3));
        assert_eq!(read_ledger(&path).unwrap(), ledger.records());
    }

    #[test]
    fn aggregate_groups_by_stage_and_model() {
        let rows = aggregate(&[
            UsageRecord::new("a", "m", 1, 10, 1),
            UsageRecord::new("b", "m", 1, 5, 1),
            UsageRecord::new("a", "m", 1, 20, 2),
        ]);
        assert_eq!(rows.len(), 2);
        assert_eq!((rows[0].calls, rows[0].input_tokens, rows[0].output_tokens), (2, 30, 3));
    }
}
