//! Pipeline-quality metrics computed from line-delimited label files:
//! the meaningful filter against human frame labels, GUI classification
//! against human video labels, topic accuracy scores and retrieval coverage.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};

use crate::retrieval::RetrievalResult;

#[derive(Debug, thiserror::Error)]
pub enum EvalError {
    #[error("ids without a counterpart: {0:?}")]
    UnmatchedIds(Vec<String>),
    #[error("duplicate id {0}")]
    DuplicateId(String),
    #[error("no scores")]
    EmptyInput,
    #[error("score {0} is not one of 0, 0.5, 1")]
    InvalidScore(f64),
    #[error("{path}:{line}: {reason}")]
    Parse { path: String, line: usize, reason: String },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FrameClass {
    GuiValid,
    NonGui,
    IdleNoAction,
}

impl FrameClass {
    pub fn is_invalid(self) -> bool {
        self != FrameClass::GuiValid
    }

    pub fn as_str(self) -> &'static str {
        match self {
            FrameClass::GuiValid => "gui_valid",
            FrameClass::NonGui => "non_gui",
            FrameClass::IdleNoAction => "idle_no_action",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameLabel {
    pub id: String,
    pub label: FrameClass,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FilterOutcome {
    pub id: String,
    pub filtered: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoLabel {
    pub id: String,
    pub is_gui: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct VideoVerdict {
    pub id: String,
    pub is_gui_demo: bool,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicScore {
    pub id: String,
    pub score: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: u64,
    pub fp: u64,
    #[serde(rename = "fn")]
    pub fn_: u64,
    pub tn: u64,
}

fn ratio(num: u64, den: u64) -> Option<f64> {
    (den > 0).then(|| num as f64 / den as f64)
}

impl Confusion {
    pub fn total(&self) -> u64 {
        self.tp + self.fp + self.fn_ + self.tn
    }

    pub fn precision(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fp)
    }

    pub fn recall(&self) -> Option<f64> {
        ratio(self.tp, self.tp + self.fn_)
    }

    pub fn accuracy(&self) -> Option<f64> {
        ratio(self.tp + self.tn, self.total())
    }

    pub fn f1(&self) -> Option<f64> {
        let (p, r) = (self.precision()?, self.recall()?);
        (p + r > 0.0).then(|| 2.0 * p * r / (p + r))
    }
}

/// Metrics are fractions in [0, 1]; a metric with a zero denominator is
/// absent rather than 0 or 1.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricReport {
    pub confusion: Confusion,
    pub precision: Option<f64>,
    pub recall: Option<f64>,
    pub f1: Option<f64>,
    pub accuracy: Option<f64>,
    #[serde(default, skip_serializing_if = "BTreeMap::is_empty")]
    pub per_category: BTreeMap<String, Option<f64>>,
}

impl MetricReport {
    fn from_confusion(confusion: Confusion) -> Self {
        Self {
            precision: confusion.precision(),
            recall: confusion.recall(),
            f1: confusion.f1(),
            accuracy: confusion.accuracy(),
            confusion,
            per_category: BTreeMap::new(),
        }
    }

    pub fn to_table(&self) -> String {
        let pct = |v: Option<f64>| v.map(|v| format!("{:.2}", v * 100.0)).unwrap_or_else(|| "n/a".into());
        let c = &self.confusion;
        let mut out = format!("tp {}  fp {}  fn {}  tn {}\n", c.tp, c.fp, c.fn_, c.tn);
        for (name, v) in [("precision", self.precision), ("recall", self.recall), ("f1", self.f1), ("accuracy", self.accuracy)] {
            out.push_str(&format!("{name:<12}{:>8}\n", pct(v)));
        }
        for (name, v) in &self.per_category {
            out.push_str(&format!("recall[{name}] {}\n", pct(*v)));
        }
        out
    }
}

fn index_unique<T, K: Fn(&T) -> &str>(items: &[T], key: K) -> Result<HashMap<&str, &T>, EvalError> {
    let mut map = HashMap::with_capacity(items.len());
    for item in items {
        if map.insert(key(item), item).is_some() {
            return Err(EvalError::DuplicateId(key(item).to_string()));
        }
    }
    Ok(map)
}

/// Pairs every left record with its right counterpart by id. Both sides
/// must cover exactly the same ids.
fn join<'a, A, B>(
    left: &'a [A],
    lkey: impl Fn(&A) -> &str,
    right: &'a [B],
    rkey: impl Fn(&B) -> &str,
) -> Result<Vec<(&'a A, &'a B)>, EvalError> {
    let r = index_unique(right, &rkey)?;
    let l = index_unique(left, &lkey)?;
    let mut missing: Vec<String> = l.keys().filter(|k| !r.contains_key(*k)).map(|k| k.to_string()).collect();
    missing.extend(r.keys().filter(|k| !l.contains_key(*k)).map(|k| k.to_string()));
    if !missing.is_empty() {
        missing.sort();
        return Err(EvalError::UnmatchedIds(missing));
    }
    Ok(left.iter().map(|a| (a, r[lkey(a)])).collect())
}

/// Filtering is the positive prediction and an invalid frame (non-GUI or
/// idle) the positive truth. Per-category recall covers both invalid kinds.
pub fn meaningful_metrics(labels: &[FrameLabel], outcomes: &[FilterOutcome]) -> Result<MetricReport, EvalError> {
    let joined = join(labels, |l| &l.id, outcomes, |o| &o.id)?;
    let mut c = Confusion::default();
    let mut per: BTreeMap<FrameClass, (u64, u64)> = BTreeMap::new();
    for (label, outcome) in joined {
        match (label.label.is_invalid(), outcome.filtered) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
        if label.label.is_invalid() {
            let e = per.entry(label.label).or_default();
            e.1 += 1;
            e.0 += u64::from(outcome.filtered);
        }
    }
    let mut report = MetricReport::from_confusion(c);
    for class in [FrameClass::NonGui, FrameClass::IdleNoAction] {
        let (hit, total) = per.get(&class).copied().unwrap_or_default();
        report.per_category.insert(class.as_str().to_string(), ratio(hit, total));
    }
    Ok(report)
}

/// GUI demonstrations are the positive class.
pub fn stage1_metrics(truth: &[VideoLabel], verdicts: &[VideoVerdict]) -> Result<MetricReport, EvalError> {
    let joined = join(truth, |t| &t.id, verdicts, |v| &v.id)?;
    let mut c = Confusion::default();
    for (t, v) in joined {
        match (t.is_gui, v.is_gui_demo) {
            (true, true) => c.tp += 1,
            (false, true) => c.fp += 1,
            (true, false) => c.fn_ += 1,
            (false, false) => c.tn += 1,
        }
    }
    Ok(MetricReport::from_confusion(c))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TopicStats {
    pub n: usize,
    pub mean: f64,
    /// Share of topics scored at least 0.5.
    pub acceptable_rate: f64,
}

pub fn topic_stats(scores: &[f64]) -> Result<TopicStats, EvalError> {
    if scores.is_empty() {
        return Err(EvalError::EmptyInput);
    }
    // count in half-points so the mean is exact before the final division
    let mut halves = 0u64;
    let mut acceptable = 0usize;
    for &s in scores {
        let h = match s {
            0.0 => 0,
            0.5 => 1,
            1.0 => 2,
            other => return Err(EvalError::InvalidScore(other)),
        };
        halves += h;
        acceptable += usize::from(h >= 1);
    }
    let n = scores.len();
    Ok(TopicStats { n, mean: halves as f64 / (2 * n) as f64, acceptable_rate: acceptable as f64 / n as f64 })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CoverageStats {
    pub tasks: usize,
    pub covered: usize,
    pub covered_pct: f64,
    /// Share of covered tasks with two selected videos.
    pub two_video_pct: f64,
    pub total_videos: usize,
}

/// Percentages are 0 when there is nothing to divide by.
pub fn coverage_stats(results: &[RetrievalResult]) -> CoverageStats {
    let tasks = results.len();
    let covered = results.iter().filter(|r| !r.selected.is_empty()).count();
    let two = results.iter().filter(|r| r.selected.len() >= 2).count();
    let total_videos = results.iter().map(|r| r.selected.len()).sum();
    let pct = |a: usize, b: usize| if b == 0 { 0.0 } else { 100.0 * a as f64 / b as f64 };
    CoverageStats { tasks, covered, covered_pct: pct(covered, tasks), two_video_pct: pct(two, covered), total_videos }
}

/// Reads one JSON value per non-blank line.
pub fn read_jsonl<T: DeserializeOwned>(path: &Path) -> Result<Vec<T>, EvalError> {
    let text = std::fs::read_to_string(path)?;
    text.lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            serde_json::from_str(l).map_err(|e| EvalError::Parse { path: path.display().to_string(), line: i + 1, reason: e.to_string() })
        })
        .collect()
}
