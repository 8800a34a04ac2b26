//! Prevalence statistics: sample sizing, proportion intervals, extrapolation
//! and per-category rates.

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum EstimateError {
    #[error("margin must be positive, got {0}")]
    Margin(f64),
    #[error("z must be positive, got {0}")]
    Z(f64),
    #[error("proportion must lie in [0, 1], got {0}")]
    Proportion(f64),
    #[error("confidence must lie in (0, 1), got {0}")]
    Confidence(f64),
    #[error("successes {successes} exceed n {n}")]
    Successes { successes: u64, n: u64 },
    #[error("n must be at least 1")]
    EmptySample,
    #[error("interval must satisfy 0 <= lo <= hi <= 1, got ({0}, {1})")]
    Interval(f64, f64),
    #[error("record {0} has an empty category")]
    EmptyCategory(usize),
}

/// Minimum sample size `ceil(z^2 p (1-p) / margin^2)`.
pub fn cochran_sample_size(z: f64, p: f64, margin: f64) -> Result<u64, EstimateError> {
    if margin.is_nan() || margin <= 0.0 {
        return Err(EstimateError::Margin(margin));
    }
    if z.is_nan() || z <= 0.0 {
        return Err(EstimateError::Z(z));
    }
    if !(0.0..=1.0).contains(&p) {
        return Err(EstimateError::Proportion(p));
    }
    let raw = z * z * p * (1.0 - p) / (margin * margin);
    // Guard against results like 384.0000000001 from float error.
    Ok((raw - 1e-9).ceil().max(0.0) as u64)
}

/// Quantile of the standard normal (Wichura, AS241 PPND16), relative error
/// about 1e-16.
#[allow(clippy::excessive_precision)]
pub fn inverse_normal_cdf(p: f64) -> f64 {
    if p <= 0.0 {
        return f64::NEG_INFINITY;
    }
    if p >= 1.0 {
        return f64::INFINITY;
    }
    let q = p - 0.5;
    if q.abs() <= 0.425 {
        let r = 0.180625 - q * q;
        return q
            * (((((((r * 2_509.080_928_730_122_7 + 33_430.575_583_588_13) * r + 67_265.770_927_008_7) * r
                + 45_921.953_931_549_87)
                * r
                + 13_731.693_765_509_46)
                * r
                + 1_971.590_950_306_551_3)
                * r
                + 133.141_667_891_784_38)
                * r
                + 3.387_132_872_796_366_5)
            / (((((((r * 5_226.495_278_852_546 + 28_729.085_735_721_943) * r + 39_307.895_800_092_71) * r
                + 21_213.794_301_586_597)
                * r
                + 5_394.196_021_424_751)
                * r
                + 687.187_007_492_057_9)
                * r
                + 42.313_330_701_600_91)
                * r
                + 1.0);
    }
    let mut r = if q < 0.0 { p } else { 1.0 - p };
    r = (-r.ln()).sqrt();
    let val = if r <= 5.0 {
        r -= 1.6;
        (((((((r * 7.745_450_142_783_414e-4 + 0.022_723_844_989_269_184) * r + 0.241_780_725_177_450_6) * r
            + 1.270_458_252_452_368_4)
            * r
            + 3.647_848_324_763_204_5)
            * r
            + 5.769_497_221_460_691)
            * r
            + 4.630_337_846_156_546)
            * r
            + 1.423_437_110_749_683_5)
            / (((((((r * 1.050_750_071_644_416_9e-9 + 5.475_938_084_995_345e-4) * r + 0.015_198_666_563_616_457)
                * r
                + 0.148_103_976_427_480_08)
                * r
                + 0.689_767_334_985_1)
                * r
                + 1.676_384_830_183_803_8)
                * r
                + 2.053_191_626_637_759)
                * r
                + 1.0)
    } else {
        r -= 5.0;
        (((((((r * 2.010_334_399_292_288_1e-7 + 2.711_555_568_743_487_6e-5) * r + 0.001_242_660_947_388_078_4) * r
            + 0.026_532_189_526_576_124)
            * r
            + 0.296_560_571_828_504_87)
            * r
            + 1.784_826_539_917_291_3)
            * r
            + 5.463_784_911_164_114)
            * r
            + 6.657_904_643_501_103)
            / (((((((r * 2.044_263_103_389_939_7e-15 + 1.421_511_758_316_446e-7) * r + 1.846_318_317_510_054_8e-5)
                * r
                + 7.868_691_311_456_133e-4)
                * r
                + 0.014_875_361_290_850_615)
                * r
                + 0.136_929_880_922_735_8)
                * r
                + 0.599_832_206_555_888)
                * r
                + 1.0)
    };
    if q < 0.0 {
        -val
    } else {
        val
    }
}

/// Two-sided critical value for `confidence` (0.99 gives 2.5758...).
pub fn z_for_confidence(confidence: f64) -> Result<f64, EstimateError> {
    if !(confidence > 0.0 && confidence < 1.0) {
        return Err(EstimateError::Confidence(confidence));
    }
    Ok(inverse_normal_cdf(1.0 - (1.0 - confidence) / 2.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum IntervalMethod {
    /// Normal approximation.
    #[default]
    Wald,
    Wilson,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SampleEstimate {
    pub successes: u64,
    pub n: u64,
    pub confidence: f64,
    pub p_hat: f64,
    pub margin: f64,
    pub interval: (f64, f64),
    pub z: f64,
    pub method: IntervalMethod,
    /// Zero-width Wald interval at p_hat of 0 or 1.
    pub degenerate: bool,
}

pub fn proportion_ci(successes: u64, n: u64, confidence: f64) -> Result<SampleEstimate, EstimateError> {
    proportion_ci_with(successes, n, confidence, IntervalMethod::Wald)
}

pub fn proportion_ci_with(
    successes: u64,
    n: u64,
    confidence: f64,
    method: IntervalMethod,
) -> Result<SampleEstimate, EstimateError> {
    if n == 0 {
        return Err(EstimateError::EmptySample);
    }
    if successes > n {
        return Err(EstimateError::Successes { successes, n });
    }
    let z = z_for_confidence(confidence)?;
    let nf = n as f64;
    let p_hat = successes as f64 / nf;
    let (margin, interval) = match method {
        IntervalMethod::Wald => {
            let margin = z * (p_hat * (1.0 - p_hat) / nf).sqrt();
            (margin, ((p_hat - margin).max(0.0), (p_hat + margin).min(1.0)))
        }
        IntervalMethod::Wilson => {
            let z2 = z * z;
            let denom = 1.0 + z2 / nf;
            let centre = (p_hat + z2 / (2.0 * nf)) / denom;
            let half = z * (p_hat * (1.0 - p_hat) / nf + z2 / (4.0 * nf * nf)).sqrt() / denom;
            (half, ((centre - half).max(0.0), (centre + half).min(1.0)))
        }
    };
    let degenerate = method == IntervalMethod::Wald && (successes == 0 || successes == n);
    Ok(SampleEstimate { successes, n, confidence, p_hat, margin, interval, z, method, degenerate })
}

/// Interval endpoints scaled to a corpus of `total_facts`, rounded to nearest.
pub fn extrapolate(interval: (f64, f64), total_facts: u64) -> Result<(u64, u64), EstimateError> {
    let (lo, hi) = interval;
    if !(0.0 <= lo && lo <= hi && hi <= 1.0) {
        return Err(EstimateError::Interval(lo, hi));
    }
    let t = total_facts as f64;
    Ok(((lo * t).round() as u64, (hi * t).round() as u64))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CategoryRate {
    pub confirmed: u64,
    pub count: u64,
    pub rate: f64,
}

/// One confirmations-file record.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confirmation {
    pub fact_id: String,
    pub category: String,
    pub confirmed: bool,
}

pub fn per_category_rates(sampled: &[(String, bool)]) -> Result<BTreeMap<String, CategoryRate>, EstimateError> {
    if sampled.is_empty() {
        return Err(EstimateError::EmptySample);
    }
    let mut out: BTreeMap<String, CategoryRate> = BTreeMap::new();
    for (i, (cat, confirmed)) in sampled.iter().enumerate() {
        if cat.trim().is_empty() {
            return Err(EstimateError::EmptyCategory(i));
        }
        let e = out.entry(cat.clone()).or_insert(CategoryRate { confirmed: 0, count: 0, rate: 0.0 });
        e.count += 1;
        if *confirmed {
            e.confirmed += 1;
        }
    }
    for r in out.values_mut() {
        r.rate = r.confirmed as f64 / r.count as f64;
    }
    Ok(out)
}

/// Published per-category rates, kept for side-by-side display only.
pub const REFERENCE_CATEGORY_RATES: &[(&str, f64)] =
    &[("History", 0.177), ("Mathematics", 0.056), ("Technology", 0.094)];

pub fn format_estimate(e: &SampleEstimate, categories: Option<&BTreeMap<String, CategoryRate>>) -> String {
    let mut out = format!(
        "n={} successes={} confidence={} z={:.4}\np_hat={:.2}% margin={:.2}pp interval=[{:.1}%, {:.1}%] method={:?}{}\n",
        e.n,
        e.successes,
        e.confidence,
        e.z,
        e.p_hat * 100.0,
        e.margin * 100.0,
        e.interval.0 * 100.0,
        e.interval.1 * 100.0,
        e.method,
        if e.degenerate { " (degenerate)" } else { "" }
    );
    if let Some(cats) = categories {
        let w = cats.keys().map(|k| k.chars().count()).max().unwrap_or(8).max(8);
        out.push_str(&format!("{:<w$}  {:>5}  {:>9}  {:>6}\n", "Category", "n", "confirmed", "rate"));
        for (k, r) in cats {
            out.push_str(&format!("{:<w$}  {:>5}  {:>9}  {:>5.1}%\n", k, r.count, r.confirmed, r.rate * 100.0));
        }
    }
    out
}
