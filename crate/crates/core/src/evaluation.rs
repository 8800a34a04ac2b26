//! Labeled datasets and detection metrics. The positive class is always
//! "inconsistent".

use std::collections::{BTreeMap, BTreeSet, HashMap};

use serde::{Deserialize, Serialize};

use crate::detectors::DetectionResult;
use crate::facts::AtomicFact;
use crate::synthetic::MutationType;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum GoldLabel {
    Consistent,
    Inconsistent,
}

impl GoldLabel {
    pub fn is_positive(self) -> bool {
        self == GoldLabel::Inconsistent
    }

    pub fn from_positive(positive: bool) -> Self {
        if positive {
            GoldLabel::Inconsistent
        } else {
            GoldLabel::Consistent
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Split {
    Validation,
    Test,
}

/// One dataset record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledFact {
    pub fact: AtomicFact,
    pub gold_label: GoldLabel,
    /// Contradicting evidence for inconsistent facts; reviewed passages (up to
    /// 40) for consistent ones.
    #[serde(default)]
    pub evidence_block_ids: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub inconsistency_type: Option<MutationType>,
    pub split: Split,
}

pub const MAX_REVIEWED_PASSAGES: usize = 40;

impl LabeledFact {
    pub fn validate(&self) -> Result<(), EvalError> {
        match self.gold_label {
            GoldLabel::Inconsistent if self.evidence_block_ids.is_empty() => {
                Err(EvalError::InvalidRecord(format!("{}: inconsistent fact without evidence", self.fact.fact_id)))
            }
            GoldLabel::Consistent if self.evidence_block_ids.len() > MAX_REVIEWED_PASSAGES => Err(
                EvalError::InvalidRecord(format!("{}: more than {MAX_REVIEWED_PASSAGES} passages", self.fact.fact_id)),
            ),
            _ => Ok(()),
        }
    }
}

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EvalError {
    #[error("metric undefined: {0}")]
    UndefinedMetric(&'static str),
    #[error("length mismatch: {0} predictions vs {1} labels")]
    LengthMismatch(usize, usize),
    #[error("empty input")]
    Empty,
    #[error("value out of range: {0}")]
    OutOfRange(String),
    #[error("results do not cover the dataset: missing {missing:?}, duplicated {duplicated:?}, unknown {unknown:?}")]
    Coverage { missing: Vec<String>, duplicated: Vec<String>, unknown: Vec<String> },
    #[error("invalid dataset record: {0}")]
    InvalidRecord(String),
}

/// Inconsistent iff `score` is strictly above `threshold`.
pub fn score_to_decision(score: f64, threshold: f64) -> GoldLabel {
    GoldLabel::from_positive(score > threshold)
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Counts {
    pub tp: usize,
    pub fp: usize,
    pub tn: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Counts {
    pub fn from_decisions(predictions: &[bool], golds: &[bool]) -> Result<Self, EvalError> {
        if predictions.len() != golds.len() {
            return Err(EvalError::LengthMismatch(predictions.len(), golds.len()));
        }
        let mut c = Counts::default();
        for (&p, &g) in predictions.iter().zip(golds) {
            match (p, g) {
                (true, true) => c.tp += 1,
                (true, false) => c.fp += 1,
                (false, false) => c.tn += 1,
                (false, true) => c.fn_ += 1,
            }
        }
        Ok(c)
    }

    pub fn total(&self) -> usize {
        self.tp + self.fp + self.tn + self.fn_
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct F1Score {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// Some denominator was zero and the corresponding value set to 0.
    pub degenerate: bool,
}

fn ratio(num: usize, den: usize, degenerate: &mut bool) -> f64 {
    if den == 0 {
        *degenerate = true;
        0.0
    } else {
        num as f64 / den as f64
    }
}

pub fn f1_from_counts(c: &Counts) -> F1Score {
    let mut degenerate = false;
    let precision = ratio(c.tp, c.tp + c.fp, &mut degenerate);
    let recall = ratio(c.tp, c.tp + c.fn_, &mut degenerate);
    let f1 = if precision + recall == 0.0 { 0.0 } else { 2.0 * precision * recall / (precision + recall) };
    F1Score { precision, recall, f1, degenerate }
}

pub fn compute_f1(predictions: &[bool], golds: &[bool]) -> Result<F1Score, EvalError> {
    if predictions.is_empty() {
        return Err(EvalError::Empty);
    }
    Ok(f1_from_counts(&Counts::from_decisions(predictions, golds)?))
}

fn check_two_class(scores: &[f64], golds: &[bool]) -> Result<(), EvalError> {
    if scores.len() != golds.len() {
        return Err(EvalError::LengthMismatch(scores.len(), golds.len()));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(EvalError::OutOfRange("NaN score".into()));
    }
    if !golds.iter().any(|&g| g) || golds.iter().all(|&g| g) {
        return Err(EvalError::UndefinedMetric("both classes must be present"));
    }
    Ok(())
}

/// Probability that a random positive outranks a random negative, ties
/// counting one half. Computed from midranks (Mann-Whitney U).
pub fn compute_auroc(scores: &[f64], golds: &[bool]) -> Result<f64, EvalError> {
    check_two_class(scores, golds)?;
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));
    let mut ranks = vec![0.0; scores.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && scores[order[j + 1]] == scores[order[i]] {
            j += 1;
        }
        let midrank = (i + j) as f64 / 2.0 + 1.0;
        for &idx in &order[i..=j] {
            ranks[idx] = midrank;
        }
        i = j + 1;
    }
    let n_pos = golds.iter().filter(|&&g| g).count() as f64;
    let n_neg = golds.len() as f64 - n_pos;
    let rank_sum: f64 = ranks.iter().zip(golds).filter(|(_, &g)| g).map(|(r, _)| r).sum();
    Ok((rank_sum - n_pos * (n_pos + 1.0) / 2.0) / (n_pos * n_neg))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RocMode {
    ScoreThreshold,
    CountThreshold,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RocPoint {
    pub fpr: f64,
    pub tpr: f64,
    pub threshold: f64,
}

/// ROC points sorted by fpr (then tpr).
///
/// Score mode predicts positive when `value >= threshold` for every unique
/// value, plus `+inf` for the origin. Count mode sweeps integer thresholds
/// `0..=max+1` with the same rule.
pub fn roc_curve(values: &[f64], golds: &[bool], mode: RocMode) -> Result<Vec<RocPoint>, EvalError> {
    check_two_class(values, golds)?;
    let mut thresholds: Vec<f64> = match mode {
        RocMode::ScoreThreshold => {
            let mut t: Vec<f64> = values.to_vec();
            t.sort_by(f64::total_cmp);
            t.dedup();
            t.push(f64::INFINITY);
            t
        }
        RocMode::CountThreshold => {
            if values.iter().any(|v| *v < 0.0 || v.fract() != 0.0) {
                return Err(EvalError::OutOfRange("counts must be non-negative integers".into()));
            }
            let max = values.iter().cloned().fold(0.0, f64::max) as u64;
            (0..=max + 1).map(|c| c as f64).collect()
        }
    };
    thresholds.sort_by(|a, b| b.total_cmp(a));
    let n_pos = golds.iter().filter(|&&g| g).count() as f64;
    let n_neg = golds.len() as f64 - n_pos;
    let mut points: Vec<RocPoint> = thresholds
        .into_iter()
        .map(|t| {
            let (mut tp, mut fp) = (0usize, 0usize);
            for (&v, &g) in values.iter().zip(golds) {
                if v >= t {
                    if g {
                        tp += 1;
                    } else {
                        fp += 1;
                    }
                }
            }
            RocPoint { fpr: fp as f64 / n_neg, tpr: tp as f64 / n_pos, threshold: t }
        })
        .collect();
    points.sort_by(|a, b| a.fpr.total_cmp(&b.fpr).then(a.tpr.total_cmp(&b.tpr)));
    points.dedup_by(|b, a| a.fpr == b.fpr && a.tpr == b.tpr);
    Ok(points)
}

/// Trapezoidal area under a curve from [`roc_curve`].
pub fn trapezoid_auc(points: &[RocPoint]) -> f64 {
    points.windows(2).map(|w| (w[1].fpr - w[0].fpr) * (w[1].tpr + w[0].tpr) / 2.0).sum()
}

/// Candidate grid: 0, 1 and midpoints between adjacent unique scores.
pub fn threshold_grid(scores: &[f64]) -> Vec<f64> {
    let mut unique: Vec<f64> = scores.to_vec();
    unique.sort_by(f64::total_cmp);
    unique.dedup();
    let mut grid = vec![0.0, 1.0];
    grid.extend(unique.windows(2).map(|w| (w[0] + w[1]) / 2.0));
    grid.sort_by(f64::total_cmp);
    grid.dedup();
    grid
}

pub fn f1_at(scores: &[f64], golds: &[bool], threshold: f64) -> f64 {
    let preds: Vec<bool> = scores.iter().map(|&s| s > threshold).collect();
    Counts::from_decisions(&preds, golds).map(|c| f1_from_counts(&c).f1).unwrap_or(0.0)
}

/// Grid threshold maximizing F1; ties go to the smaller threshold.
pub fn select_threshold(scores: &[f64], golds: &[bool]) -> Result<f64, EvalError> {
    check_two_class(scores, golds)?;
    let mut best = (f64::NEG_INFINITY, 0.0);
    for t in threshold_grid(scores) {
        let f = f1_at(scores, golds, t);
        if f > best.0 {
            best = (f, t);
        }
    }
    Ok(best.1)
}

/// How a result is turned into a decision.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "rule", rename_all = "snake_case")]
pub enum DecisionRule {
    /// Inconsistent iff score > threshold.
    Score { threshold: f64 },
    /// Inconsistent iff refute_count >= min_refutes (NLI pipeline).
    RefuteCount { min_refutes: usize },
}

impl DecisionRule {
    pub fn decide(&self, result: &DetectionResult) -> bool {
        match *self {
            DecisionRule::Score { threshold } => result.score > threshold,
            DecisionRule::RefuteCount { min_refutes } => result.refute_count.unwrap_or(0) >= min_refutes,
        }
    }

    /// Value swept for ROC under this rule.
    pub fn ranking_value(&self, result: &DetectionResult) -> f64 {
        match self {
            DecisionRule::Score { .. } => result.score,
            DecisionRule::RefuteCount { .. } => result.refute_count.unwrap_or(0) as f64,
        }
    }

    pub fn threshold_value(&self) -> f64 {
        match *self {
            DecisionRule::Score { threshold } => threshold,
            DecisionRule::RefuteCount { min_refutes } => min_refutes as f64,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub accuracy: f64,
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
    /// `None` when only one class is present.
    pub auroc: Option<f64>,
    pub false_positive_rate: f64,
    pub threshold_used: f64,
    pub rule: DecisionRule,
    pub counts: Counts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub per_type_breakdown: Option<BTreeMap<MutationType, f64>>,
    pub degenerate: bool,
}

/// Scores `results` against `dataset`; every fact must have exactly one result.
pub fn evaluate(
    dataset: &[LabeledFact],
    results: &[DetectionResult],
    rule: DecisionRule,
) -> Result<MetricsReport, EvalError> {
    if dataset.is_empty() {
        return Err(EvalError::Empty);
    }
    let wanted: BTreeSet<&str> = dataset.iter().map(|d| d.fact.fact_id.as_str()).collect();
    let mut by_id: HashMap<&str, &DetectionResult> = HashMap::new();
    let mut duplicated = BTreeSet::new();
    let mut unknown = BTreeSet::new();
    for r in results {
        if !wanted.contains(r.fact_id.as_str()) {
            unknown.insert(r.fact_id.clone());
        } else if by_id.insert(r.fact_id.as_str(), r).is_some() {
            duplicated.insert(r.fact_id.clone());
        }
    }
    let missing: Vec<String> = wanted.iter().filter(|id| !by_id.contains_key(*id)).map(|s| s.to_string()).collect();
    if !missing.is_empty() || !duplicated.is_empty() || !unknown.is_empty() {
        return Err(EvalError::Coverage {
            missing,
            duplicated: duplicated.into_iter().collect(),
            unknown: unknown.into_iter().collect(),
        });
    }

    let golds: Vec<bool> = dataset.iter().map(|d| d.gold_label.is_positive()).collect();
    let matched: Vec<&DetectionResult> = dataset.iter().map(|d| by_id[d.fact.fact_id.as_str()]).collect();
    let preds: Vec<bool> = matched.iter().map(|r| rule.decide(r)).collect();
    let values: Vec<f64> = matched.iter().map(|r| rule.ranking_value(r)).collect();
    let counts = Counts::from_decisions(&preds, &golds)?;
    let f = f1_from_counts(&counts);
    let auroc = compute_auroc(&values, &golds).ok();

    let mut per_type: BTreeMap<MutationType, (usize, usize)> = BTreeMap::new();
    for ((d, &p), &g) in dataset.iter().zip(&preds).zip(&golds) {
        if let (true, Some(t)) = (g, d.inconsistency_type) {
            let e = per_type.entry(t).or_default();
            e.1 += 1;
            if p {
                e.0 += 1;
            }
        }
    }
    let per_type_breakdown =
        (!per_type.is_empty()).then(|| per_type.into_iter().map(|(t, (hit, n))| (t, hit as f64 / n as f64)).collect());

    let n_neg = counts.fp + counts.tn;
    Ok(MetricsReport {
        accuracy: (counts.tp + counts.tn) as f64 / counts.total() as f64,
        precision: f.precision,
        recall: f.recall,
        f1: f.f1,
        auroc,
        false_positive_rate: if n_neg == 0 { 0.0 } else { counts.fp as f64 / n_neg as f64 },
        threshold_used: rule.threshold_value(),
        rule,
        counts,
        per_type_breakdown,
        degenerate: f.degenerate || auroc.is_none(),
    })
}

/// Published agent validation figures (accuracy, F1, AUROC in percent), shown
/// in the table footer for comparison only.
pub const REFERENCE_AGENT_VALIDATION: (f64, f64, f64) = (76.5, 67.4, 80.9);

fn pct(v: f64) -> String {
    format!("{:.1}", v * 100.0)
}

/// Aligned text table, one row per named report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let header = ["System", "Acc", "P", "R", "F1", "AUROC", "Thr"];
    let mut lines: Vec<Vec<String>> = vec![header.iter().map(|s| s.to_string()).collect()];
    for (name, r) in rows {
        lines.push(vec![
            name.clone(),
            pct(r.accuracy),
            pct(r.precision),
            pct(r.recall),
            pct(r.f1),
            r.auroc.map(pct).unwrap_or_else(|| "n/a".into()),
            format!("{}", r.threshold_used),
        ]);
    }
    let widths: Vec<usize> =
        (0..header.len()).map(|c| lines.iter().map(|l| l[c].chars().count()).max().unwrap_or(0)).collect();
    let mut out = String::new();
    for (i, l) in lines.iter().enumerate() {
        let cells: Vec<String> = l
            .iter()
            .enumerate()
            .map(|(c, v)| if c == 0 { format!("{v:<w$}", w = widths[c]) } else { format!("{v:>w$}", w = widths[c]) })
            .collect();
        out.push_str(cells.join("  ").trim_end());
        out.push('\n');
        if i == 0 {
            out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
            out.push('\n');
        }
    }
    let (a, f, u) = REFERENCE_AGENT_VALIDATION;
    out.push_str(&format!("reference (published agent, validation): acc {a} f1 {f} auroc {u}; not asserted\n"));
    out
}
