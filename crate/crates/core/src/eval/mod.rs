//! Precision–recall evaluation, bootstrap intervals and paired comparisons.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use rand::Rng as _;
use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;

use crate::changedet::{ConfigTag, Method};
use crate::error::{Error, Result};
use crate::preprocess::{percentile, percentile_sorted};
use crate::rng::substream;

/// Per-tile scores with binary ground truth for one scene.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledScores {
    pub scores: Vec<f64>,
    pub labels: Vec<bool>,
    pub scene_id: String,
}

impl LabeledScores {
    pub fn new(scores: Vec<f64>, labels: Vec<bool>, scene_id: impl Into<String>) -> Result<Self> {
        if scores.len() != labels.len() {
            return Err(Error::Shape(format!(
                "{} scores vs {} labels",
                scores.len(),
                labels.len()
            )));
        }
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Domain("scores must be finite".into()));
        }
        Ok(Self {
            scores,
            labels,
            scene_id: scene_id.into(),
        })
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }

    pub fn positives(&self) -> usize {
        self.labels.iter().filter(|l| **l).count()
    }

    /// Subset at the given (possibly repeated) indices.
    pub fn resample(&self, idx: &[usize]) -> Self {
        Self {
            scores: idx.iter().map(|&i| self.scores[i]).collect(),
            labels: idx.iter().map(|&i| self.labels[i]).collect(),
            scene_id: self.scene_id.clone(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PrPoint {
    pub threshold: f64,
    pub precision: f64,
    pub recall: f64,
}

/// One point per distinct score, in descending score order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PRCurve {
    pub points: Vec<PrPoint>,
    pub positives: usize,
    pub total: usize,
}

pub fn pr_curve(data: &LabeledScores) -> Result<PRCurve> {
    let pos = data.positives();
    if pos == 0 {
        return Err(Error::UndefinedMetric(
            "precision–recall curve needs at least one positive".into(),
        ));
    }
    let mut order: Vec<usize> = (0..data.len()).collect();
    order.sort_by(|&a, &b| data.scores[b].total_cmp(&data.scores[a]));
    let mut points = Vec::new();
    let (mut tp, mut seen) = (0usize, 0usize);
    let mut i = 0;
    while i < order.len() {
        let t = data.scores[order[i]];
        while i < order.len() && data.scores[order[i]] == t {
            tp += usize::from(data.labels[order[i]]);
            seen += 1;
            i += 1;
        }
        points.push(PrPoint {
            threshold: t,
            precision: tp as f64 / seen as f64,
            recall: tp as f64 / pos as f64,
        });
    }
    Ok(PRCurve {
        points,
        positives: pos,
        total: data.len(),
    })
}

/// Average precision `Σ (R_i − R_{i−1}) P_i`.
pub fn auprc(curve: &PRCurve) -> f64 {
    let mut prev = 0.0;
    let mut area = 0.0;
    for p in &curve.points {
        area += (p.recall - prev) * p.precision;
        prev = p.recall;
    }
    area
}

pub fn average_precision(data: &LabeledScores) -> Result<f64> {
    Ok(auprc(&pr_curve(data)?))
}

/// Precision, recall and F1 of the rule `score > τ`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Prf {
    /// `None` when nothing is predicted positive.
    pub precision: Option<f64>,
    /// `None` when there are no positive labels.
    pub recall: Option<f64>,
    pub f1: f64,
}

pub fn prf_at_threshold(data: &LabeledScores, tau: f64) -> Prf {
    let (mut tp, mut fp, mut fnn) = (0usize, 0usize, 0usize);
    for (s, l) in data.scores.iter().zip(&data.labels) {
        match (*s > tau, *l) {
            (true, true) => tp += 1,
            (true, false) => fp += 1,
            (false, true) => fnn += 1,
            (false, false) => {}
        }
    }
    let precision = (tp + fp > 0).then(|| tp as f64 / (tp + fp) as f64);
    let recall = (tp + fnn > 0).then(|| tp as f64 / (tp + fnn) as f64);
    let (p, r) = (precision.unwrap_or(0.0), recall.unwrap_or(0.0));
    let f1 = if p + r > 0.0 {
        2.0 * p * r / (p + r)
    } else {
        0.0
    };
    Prf {
        precision,
        recall,
        f1,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Auprc,
    Precision,
    Recall,
    F1,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Auprc, Metric::Precision, Metric::Recall, Metric::F1];

    /// Metric value on `data`; threshold metrics use the rule `score > tau`.
    /// `None` marks an undefined value (e.g. precision with no predicted positives).
    pub fn evaluate(self, data: &LabeledScores, tau: f64) -> Option<f64> {
        match self {
            Metric::Auprc => average_precision(data).ok(),
            Metric::Precision => prf_at_threshold(data, tau).precision,
            Metric::Recall => prf_at_threshold(data, tau).recall,
            Metric::F1 => Some(prf_at_threshold(data, tau).f1),
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            Metric::Auprc => "auprc",
            Metric::Precision => "precision",
            Metric::Recall => "recall",
            Metric::F1 => "f1",
        }
    }
}

/// Resampled index sets sharing one random stream, each with at least one positive.
#[derive(Debug, Clone, PartialEq)]
pub struct BootstrapPlan {
    pub indices: Vec<Vec<usize>>,
    /// Draws discarded because they contained no positive tile.
    pub redraws: usize,
}

/// Draws `n_boot` with-replacement resamples of the tiles, redrawing any
/// resample without positives (at most `10·n_boot` redraws in total).
pub fn bootstrap_plan(labels: &[bool], n_boot: usize, seed: u64) -> Result<BootstrapPlan> {
    let n = labels.len();
    if n == 0 || n_boot == 0 {
        return Err(Error::Domain(
            "bootstrap needs tiles and at least one resample".into(),
        ));
    }
    let mut rng = substream(seed, "bootstrap");
    let mut indices = Vec::with_capacity(n_boot);
    let mut redraws = 0;
    while indices.len() < n_boot {
        let idx: Vec<usize> = (0..n).map(|_| rng.random_range(0..n)).collect();
        if idx.iter().any(|&i| labels[i]) {
            indices.push(idx);
        } else {
            redraws += 1;
            if redraws > 10 * n_boot {
                return Err(Error::DegenerateBootstrap(format!(
                    "{redraws} resamples without positives"
                )));
            }
        }
    }
    Ok(BootstrapPlan { indices, redraws })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct BootstrapCi {
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub resamples: usize,
    pub redraws: usize,
    /// Resamples where the metric was undefined and therefore left out.
    pub undefined: usize,
}

/// Median and 2.5/97.5 percentiles of the defined values.
pub fn summarize(values: &[Option<f64>], redraws: usize) -> Result<BootstrapCi> {
    let mut v: Vec<f64> = values.iter().flatten().copied().collect();
    if v.is_empty() {
        return Err(Error::UndefinedMetric(
            "metric undefined on every resample".into(),
        ));
    }
    v.sort_by(f64::total_cmp);
    Ok(BootstrapCi {
        median: percentile_sorted(&v, 50.0)?,
        ci_lo: percentile_sorted(&v, 2.5)?,
        ci_hi: percentile_sorted(&v, 97.5)?,
        resamples: values.len(),
        redraws,
        undefined: values.len() - v.len(),
    })
}

/// Percentile bootstrap of `metric` over tiles.
pub fn bootstrap_ci<F>(
    data: &LabeledScores,
    metric: F,
    n_boot: usize,
    seed: u64,
) -> Result<BootstrapCi>
where
    F: Fn(&LabeledScores) -> Option<f64>,
{
    let plan = bootstrap_plan(&data.labels, n_boot, seed)?;
    let values: Vec<Option<f64>> = plan
        .indices
        .iter()
        .map(|idx| metric(&data.resample(idx)))
        .collect();
    summarize(&values, plan.redraws)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    /// `min(W⁺, W⁻)`.
    pub w: f64,
    pub w_plus: f64,
    pub w_minus: f64,
    /// Non-zero differences.
    pub n: usize,
    pub p_two_sided: f64,
    /// Alternative "a > b" (large `W⁺`).
    pub p_greater: f64,
    pub exact: bool,
}

/// Largest sample size handled by exact enumeration.
pub const WILCOXON_EXACT_MAX: usize = 25;

struct SignedRanks {
    /// Doubled average ranks (integers even under ties).
    ranks2: Vec<u64>,
    positive: Vec<bool>,
    ties: Vec<usize>,
}

fn signed_ranks(diffs: &[f64]) -> Result<SignedRanks> {
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::Domain("non-finite paired difference".into()));
    }
    let nz: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nz.is_empty() {
        return Err(Error::NoSignal("all paired differences are zero".into()));
    }
    if nz.len() < 5 {
        return Err(Error::Domain(format!(
            "{} non-zero differences; at least 5 required",
            nz.len()
        )));
    }
    let mut order: Vec<usize> = (0..nz.len()).collect();
    order.sort_by(|&a, &b| nz[a].abs().total_cmp(&nz[b].abs()));
    let mut ranks2 = vec![0u64; nz.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && nz[order[j + 1]].abs() == nz[order[i]].abs() {
            j += 1;
        }
        // ranks i+1 ..= j+1 averaged, doubled
        let r2 = (i + 1 + j + 1) as u64;
        for &k in &order[i..=j] {
            ranks2[k] = r2;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    Ok(SignedRanks {
        ranks2,
        positive: nz.iter().map(|d| *d > 0.0).collect(),
        ties,
    })
}

impl SignedRanks {
    fn w_plus2(&self) -> u64 {
        self.ranks2
            .iter()
            .zip(&self.positive)
            .filter(|(_, p)| **p)
            .map(|(r, _)| r)
            .sum()
    }

    fn total2(&self) -> u64 {
        self.ranks2.iter().sum()
    }
}

/// Null distribution of doubled `W⁺`: `counts[s]` sign patterns give sum `s`.
fn null_counts(ranks2: &[u64]) -> Vec<f64> {
    let total: u64 = ranks2.iter().sum();
    let mut counts = vec![0.0f64; total as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in ranks2 {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

fn finish(sr: &SignedRanks, exact: bool, p_two_sided: f64, p_greater: f64) -> WilcoxonResult {
    let wp = sr.w_plus2() as f64 / 2.0;
    let wm = sr.total2() as f64 / 2.0 - wp;
    WilcoxonResult {
        w: wp.min(wm),
        w_plus: wp,
        w_minus: wm,
        n: sr.ranks2.len(),
        p_two_sided: p_two_sided.min(1.0),
        p_greater: p_greater.min(1.0),
        exact,
    }
}

/// Exact signed-rank test by enumerating the `2ⁿ` sign patterns (via subset-sum counts).
pub fn wilcoxon_exact(diffs: &[f64]) -> Result<WilcoxonResult> {
    let sr = signed_ranks(diffs)?;
    let counts = null_counts(&sr.ranks2);
    let all: f64 = counts.iter().sum();
    let wp2 = sr.w_plus2() as usize;
    let wm2 = sr.total2() as usize - wp2;
    let lower = |w2: usize| counts[..=w2].iter().sum::<f64>() / all;
    let p_two = 2.0 * lower(wp2.min(wm2));
    // P(W⁺ ≥ observed) = P(W⁻ ≤ observed W⁻) by symmetry of the null
    let p_greater = lower(wm2);
    Ok(finish(&sr, true, p_two, p_greater))
}

fn std_normal_cdf(z: f64) -> f64 {
    0.5 * erfc(-z / std::f64::consts::SQRT_2)
}

/// Normal approximation with tie and continuity corrections.
pub fn wilcoxon_normal(diffs: &[f64]) -> Result<WilcoxonResult> {
    let sr = signed_ranks(diffs)?;
    let n = sr.ranks2.len() as f64;
    let mean = n * (n + 1.0) / 4.0;
    let tie: f64 = sr.ties.iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = n * (n + 1.0) * (2.0 * n + 1.0) / 24.0 - tie / 48.0;
    if !(var > 0.0) {
        return Err(Error::NoSignal("zero variance under the null".into()));
    }
    let sd = var.sqrt();
    let wp = sr.w_plus2() as f64 / 2.0;
    let wm = sr.total2() as f64 / 2.0 - wp;
    let w = wp.min(wm);
    let p_two = 2.0 * std_normal_cdf(((w - mean + 0.5) / sd).min(0.0));
    let p_greater = 1.0 - std_normal_cdf((wp - mean - 0.5) / sd);
    Ok(finish(&sr, false, p_two, p_greater))
}

/// Paired signed-rank test of `a` against `b` (exact for `n ≤ 25`, normal approximation above).
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::Shape(format!(
            "paired samples of length {} and {}",
            a.len(),
            b.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).collect();
    let nonzero = diffs.iter().filter(|d| **d != 0.0).count();
    if nonzero <= WILCOXON_EXACT_MAX {
        wilcoxon_exact(&diffs)
    } else {
        wilcoxon_normal(&diffs)
    }
}

/// `mean(d) / sd(d)` with the `n − 1` standard deviation.
pub fn cohens_d_paired(diffs: &[f64]) -> Result<f64> {
    let n = diffs.len();
    if n < 2 {
        return Err(Error::Domain(
            "Cohen's d needs at least two differences".into(),
        ));
    }
    let mean = diffs.iter().sum::<f64>() / n as f64;
    let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
    if !(var > 0.0) {
        return Err(Error::DegenerateEffect(
            "paired differences have zero spread".into(),
        ));
    }
    Ok(mean / var.sqrt())
}

/// `(a − b) / b`.
pub fn relative_improvement(a: f64, b: f64) -> Result<f64> {
    if b == 0.0 {
        return Err(Error::Domain(
            "relative improvement over a zero baseline".into(),
        ));
    }
    Ok((a - b) / b)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum EffectMode {
    /// Differences of per-resample metric values.
    #[default]
    PerResample,
    /// Differences of per-tile scores.
    PerTile,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct CompareOptions {
    pub site: String,
    pub config_tag: ConfigTag,
    pub n_boot: usize,
    pub seed: u64,
    /// Decision threshold per method for precision/recall/F1; methods without
    /// one use the 95th percentile of their own scores.
    pub thresholds: BTreeMap<Method, f64>,
    pub effect_mode: EffectMode,
}

impl Default for CompareOptions {
    fn default() -> Self {
        Self {
            site: "synthetic".into(),
            config_tag: ConfigTag::FourBand,
            n_boot: 1000,
            seed: 7,
            thresholds: BTreeMap::new(),
            effect_mode: EffectMode::PerResample,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricSummary {
    /// Value on the full tile set (`None` when undefined).
    pub point: Option<f64>,
    pub median: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub undefined: usize,
}

/// A statistic that may be degenerate; the reason is kept instead of a number.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Flagged {
    pub value: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub flag: Option<String>,
}

impl Flagged {
    fn from_result(r: Result<f64>) -> Self {
        match r {
            Ok(v) => Self {
                value: Some(v),
                flag: None,
            },
            Err(e) => Self {
                value: None,
                flag: Some(e.to_string()),
            },
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodReport {
    pub method: Method,
    pub threshold: f64,
    pub metrics: BTreeMap<Metric, MetricSummary>,
    /// Two-sided Wilcoxon p-value of this method's resampled AUPRC against the reference.
    pub p_vs_reference: Flagged,
    pub wilcoxon_w: Option<f64>,
    pub cohens_d: BTreeMap<Metric, Flagged>,
    /// Relative AUPRC improvement (bootstrap medians) over the reference.
    pub rel_improvement: Flagged,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub site: String,
    pub config_tag: ConfigTag,
    pub reference: Method,
    pub n_boot: usize,
    pub seed: u64,
    pub tiles: usize,
    pub positives: usize,
    pub redraws: usize,
    pub methods: Vec<MethodReport>,
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map(|x| format!("{x}")).unwrap_or_default()
}

pub const CSV_HEADER: &str =
    "site,config_tag,method,auprc,auprc_lo,auprc_hi,precision,recall,f1,p_vs_reference,cohens_d_auprc,rel_improvement";

impl EvalReport {
    pub fn method(&self, m: Method) -> Option<&MethodReport> {
        self.methods.iter().find(|r| r.method == m)
    }

    /// CSV rows (without header) in the column order of [`CSV_HEADER`].
    pub fn csv_rows(&self) -> String {
        let mut out = String::new();
        for r in &self.methods {
            let m = |k: Metric| r.metrics.get(&k).map(|s| s.median);
            let auprc = &r.metrics[&Metric::Auprc];
            let _ = writeln!(
                out,
                "{},{},{},{},{},{},{},{},{},{},{},{}",
                self.site,
                self.config_tag,
                r.method,
                auprc.median,
                auprc.ci_lo,
                auprc.ci_hi,
                fmt_opt(m(Metric::Precision)),
                fmt_opt(m(Metric::Recall)),
                fmt_opt(m(Metric::F1)),
                fmt_opt(r.p_vs_reference.value),
                fmt_opt(r.cohens_d.get(&Metric::Auprc).and_then(|f| f.value)),
                fmt_opt(r.rel_improvement.value),
            );
        }
        out
    }

    pub fn to_csv(&self) -> String {
        format!("{CSV_HEADER}\n{}", self.csv_rows())
    }

    /// Human-readable table: one row per method with medians and AUPRC interval.
    pub fn to_table(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "Performance metrics for {} ({}, median of {} bootstrap resamples)",
            self.site, self.config_tag, self.n_boot
        );
        let _ = writeln!(
            out,
            "| Method | AUPRC [95% CI] | Precision | Recall | F1 | p vs {} | Rel. impr. |",
            self.reference
        );
        let _ = writeln!(out, "|---|---|---|---|---|---|---|");
        let cell = |s: Option<&MetricSummary>| match s {
            Some(s) => format!("{:.2}", s.median),
            None => "n/a".into(),
        };
        for r in &self.methods {
            let a = &r.metrics[&Metric::Auprc];
            let _ = writeln!(
                out,
                "| {} | {:.2} [{:.2}, {:.2}] | {} | {} | {} | {} | {} |",
                r.method.as_str().to_uppercase(),
                a.median,
                a.ci_lo,
                a.ci_hi,
                cell(r.metrics.get(&Metric::Precision)),
                cell(r.metrics.get(&Metric::Recall)),
                cell(r.metrics.get(&Metric::F1)),
                r.p_vs_reference
                    .value
                    .map_or("n/a".into(), |p| format!("{p:.3}")),
                r.rel_improvement
                    .value
                    .map_or("n/a".into(), |v| format!("{:.0}%", 100.0 * v)),
            );
        }
        out
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        fs::write(path, serde_json::to_vec_pretty(self)?)?;
        Ok(())
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        Ok(serde_json::from_slice(&fs::read(path)?)?)
    }
}

/// Bootstrap comparison of several methods scored on the same tiles.
///
/// Every method is evaluated on identical resample index sets, so per-resample
/// metrics are paired across methods.
pub fn compare_methods(
    per_method: &BTreeMap<Method, LabeledScores>,
    reference: Method,
    opts: &CompareOptions,
) -> Result<EvalReport> {
    let base = per_method
        .get(&reference)
        .ok_or_else(|| Error::Pairing(format!("reference method {reference} has no scores")))?;
    for (m, d) in per_method {
        if d.labels != base.labels {
            return Err(Error::Pairing(format!(
                "method {m} was scored on a different tile set"
            )));
        }
    }
    let plan = bootstrap_plan(&base.labels, opts.n_boot, opts.seed)?;

    struct Resampled {
        threshold: f64,
        values: BTreeMap<Metric, Vec<Option<f64>>>,
    }
    let mut resampled: BTreeMap<Method, Resampled> = BTreeMap::new();
    for (&m, data) in per_method {
        let tau = match opts.thresholds.get(&m) {
            Some(t) => *t,
            None => percentile(&data.scores, 95.0)?,
        };
        let mut values: BTreeMap<Metric, Vec<Option<f64>>> = BTreeMap::new();
        for idx in &plan.indices {
            let sample = data.resample(idx);
            let curve = pr_curve(&sample).ok();
            let prf = prf_at_threshold(&sample, tau);
            values
                .entry(Metric::Auprc)
                .or_default()
                .push(curve.as_ref().map(auprc));
            values
                .entry(Metric::Precision)
                .or_default()
                .push(prf.precision);
            values.entry(Metric::Recall).or_default().push(prf.recall);
            values.entry(Metric::F1).or_default().push(Some(prf.f1));
        }
        resampled.insert(
            m,
            Resampled {
                threshold: tau,
                values,
            },
        );
    }

    let paired = |a: &[Option<f64>], b: &[Option<f64>]| -> (Vec<f64>, Vec<f64>) {
        a.iter()
            .zip(b)
            .filter_map(|(x, y)| Some(((*x)?, (*y)?)))
            .unzip()
    };
    let refs = &resampled[&reference];
    let ref_median = summarize(&refs.values[&Metric::Auprc], plan.redraws)?.median;
    let mut methods = Vec::new();
    for (&m, data) in per_method {
        let r = &resampled[&m];
        let mut metrics = BTreeMap::new();
        for k in Metric::ALL {
            let s = summarize(&r.values[&k], plan.redraws)?;
            metrics.insert(
                k,
                MetricSummary {
                    point: k.evaluate(data, r.threshold),
                    median: s.median,
                    ci_lo: s.ci_lo,
                    ci_hi: s.ci_hi,
                    undefined: s.undefined,
                },
            );
        }
        let (a, b) = paired(&r.values[&Metric::Auprc], &refs.values[&Metric::Auprc]);
        let wil = wilcoxon_signed_rank(&a, &b);
        let wilcoxon_w = wil.as_ref().ok().map(|w| w.w);
        let p_vs_reference = Flagged::from_result(wil.map(|w| w.p_two_sided));
        let mut cohens_d = BTreeMap::new();
        for k in Metric::ALL {
            let diffs: Vec<f64> = match opts.effect_mode {
                EffectMode::PerResample => {
                    let (a, b) = paired(&r.values[&k], &refs.values[&k]);
                    a.iter().zip(&b).map(|(x, y)| x - y).collect()
                }
                EffectMode::PerTile => data
                    .scores
                    .iter()
                    .zip(&base.scores)
                    .map(|(x, y)| x - y)
                    .collect(),
            };
            cohens_d.insert(k, Flagged::from_result(cohens_d_paired(&diffs)));
        }
        let rel_improvement = Flagged::from_result(relative_improvement(
            metrics[&Metric::Auprc].median,
            ref_median,
        ));
        methods.push(MethodReport {
            method: m,
            threshold: r.threshold,
            metrics,
            p_vs_reference,
            wilcoxon_w,
            cohens_d,
            rel_improvement,
        });
    }
    Ok(EvalReport {
        site: opts.site.clone(),
        config_tag: opts.config_tag,
        reference,
        n_boot: opts.n_boot,
        seed: opts.seed,
        tiles: base.len(),
        positives: base.positives(),
        redraws: plan.redraws,
        methods,
    })
}

#[cfg(test)]
mod tests;
