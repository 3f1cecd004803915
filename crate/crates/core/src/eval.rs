//! Verification scoring and per-group fairness reports.
//!
//! Comparisons are Euclidean distances between unit embeddings and a pair is
//! accepted when its distance is below the threshold. Impostor pairs are
//! formed inside a group so that every comparison belongs to one group.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;

use rand::seq::index;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::dataset::Dataset;
use crate::head::{DebiasHead, HeadError};
use crate::rng;
use crate::triplets::squared_distance;

pub const HISTOGRAM_BINS: usize = 100;
/// Largest distance between two unit vectors.
pub const HISTOGRAM_MAX: f64 = 2.0;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error("EER needs non-empty genuine and impostor scores (got {genuine} genuine, {impostor} impostor)")]
    EmptyScores { genuine: usize, impostor: usize },
    #[error("group `{0}` has a single subject; impostor pairs need at least two")]
    SingleSubject(String),
    #[error("head dimension {head} does not match dataset dimension {data}")]
    DimensionMismatch { head: usize, data: usize },
    #[error("fairness report needs at least 2 groups (got {0})")]
    TooFewGroups(usize),
    #[error("invalid pairing policy `{0}` (expected exhaustive|capped:<m>|protocol)")]
    Pairing(String),
    #[error(transparent)]
    Head(#[from] HeadError),
}

/// How impostor pairs are drawn inside each group.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum PairingPolicy {
    /// Every cross-subject sample pair of the group.
    Exhaustive,
    /// Up to `m` seeded pairs involving each subject, deduplicated.
    Capped(usize),
    /// `Capped(3 · (subjects_in_group − 1))`.
    #[default]
    Protocol,
}

impl fmt::Display for PairingPolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            PairingPolicy::Exhaustive => f.write_str("exhaustive"),
            PairingPolicy::Capped(m) => write!(f, "capped:{m}"),
            PairingPolicy::Protocol => f.write_str("protocol"),
        }
    }
}

impl FromStr for PairingPolicy {
    type Err = EvalError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "exhaustive" => Ok(PairingPolicy::Exhaustive),
            "protocol" => Ok(PairingPolicy::Protocol),
            _ => s
                .strip_prefix("capped:")
                .and_then(|m| m.parse().ok())
                .filter(|&m: &usize| m > 0)
                .map(PairingPolicy::Capped)
                .ok_or_else(|| EvalError::Pairing(s.to_string())),
        }
    }
}

impl Serialize for PairingPolicy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for PairingPolicy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

/// Genuine and impostor distances of one group, each sorted ascending.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSet {
    pub group: usize,
    pub genuine: Vec<f64>,
    pub impostor: Vec<f64>,
}

impl ScoreSet {
    pub fn new(group: usize, mut genuine: Vec<f64>, mut impostor: Vec<f64>) -> Self {
        genuine.sort_by(f64::total_cmp);
        impostor.sort_by(f64::total_cmp);
        Self {
            group,
            genuine,
            impostor,
        }
    }
}

/// Embeds every record, through the head when one is given.
pub fn embed_all(dataset: &Dataset, transform: Option<&DebiasHead>) -> Result<Vec<Vec<f64>>, EvalError> {
    match transform {
        None => Ok(dataset.records.iter().map(|r| r.vector.clone()).collect()),
        Some(head) => {
            if head.dim != dataset.dim {
                return Err(EvalError::DimensionMismatch {
                    head: head.dim,
                    data: dataset.dim,
                });
            }
            dataset
                .records
                .par_iter()
                .map(|r| head.embed(&r.vector).map_err(EvalError::from))
                .collect()
        }
    }
}

fn distance(a: &[f64], b: &[f64]) -> f64 {
    squared_distance(a, b).sqrt()
}

/// Genuine and impostor distances per group.
pub fn pair_scores(
    test: &Dataset,
    transform: Option<&DebiasHead>,
    pairing: PairingPolicy,
    seed: u64,
) -> Result<BTreeMap<usize, ScoreSet>, EvalError> {
    let embeddings = embed_all(test, transform)?;
    let mut groups: BTreeMap<usize, Vec<Vec<usize>>> = BTreeMap::new();
    for info in test.subjects().into_values() {
        groups.entry(info.group).or_default().push(info.records);
    }
    for (&g, subjects) in &groups {
        if subjects.len() < 2 {
            return Err(EvalError::SingleSubject(test.schema.group_label(g)));
        }
    }
    let scored: Vec<ScoreSet> = groups
        .par_iter()
        .map(|(&g, subjects)| {
            let mut genuine = Vec::new();
            for recs in subjects {
                for (i, &a) in recs.iter().enumerate() {
                    for &b in &recs[i + 1..] {
                        genuine.push(distance(&embeddings[a], &embeddings[b]));
                    }
                }
            }
            let impostor = impostor_pairs(subjects, pairing, rng::substream_indexed(seed, "pairing", g as u64))
                .into_iter()
                .map(|(a, b)| distance(&embeddings[a], &embeddings[b]))
                .collect();
            ScoreSet::new(g, genuine, impostor)
        })
        .collect();
    Ok(scored.into_iter().map(|s| (s.group, s)).collect())
}

/// Cross-subject record pairs `(a, b)` with `a < b` inside one group.
fn impostor_pairs(subjects: &[Vec<usize>], pairing: PairingPolicy, seed: u64) -> Vec<(usize, usize)> {
    let cap = match pairing {
        PairingPolicy::Exhaustive => None,
        PairingPolicy::Capped(m) => Some(m),
        PairingPolicy::Protocol => Some(3 * (subjects.len() - 1)),
    };
    let ordered = |a: usize, b: usize| if a < b { (a, b) } else { (b, a) };
    match cap {
        None => {
            let mut out = Vec::new();
            for (i, s) in subjects.iter().enumerate() {
                for t in &subjects[i + 1..] {
                    for &a in s {
                        for &b in t {
                            out.push(ordered(a, b));
                        }
                    }
                }
            }
            out
        }
        Some(m) => {
            let mut rng = rng::seeded(seed);
            let mut chosen = BTreeSet::new();
            for (i, own) in subjects.iter().enumerate() {
                let others: Vec<usize> = subjects
                    .iter()
                    .enumerate()
                    .filter(|&(j, _)| j != i)
                    .flat_map(|(_, recs)| recs.iter().copied())
                    .collect();
                let total = own.len() * others.len();
                let decode = |k: usize| ordered(own[k / others.len()], others[k % others.len()]);
                if m >= total {
                    chosen.extend((0..total).map(decode));
                } else {
                    chosen.extend(index::sample(&mut rng, total, m).iter().map(decode));
                }
            }
            chosen.into_iter().collect()
        }
    }
}

/// Equal error rate and the interpolated threshold where it occurs.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Eer {
    pub eer: f64,
    pub threshold: f64,
}

/// EER with `FMR(τ) = P(impostor < τ)` and `FNMR(τ) = P(genuine ≥ τ)`.
///
/// Both rates are evaluated at every distinct score (and just above the
/// largest one). The EER is read off at the first threshold where
/// `FNMR − FMR` stops being positive, interpolating linearly from the
/// previous threshold when the crossing falls between them.
pub fn compute_eer(scores: &ScoreSet) -> Result<Eer, EvalError> {
    let (ng, ni) = (scores.genuine.len(), scores.impostor.len());
    if ng == 0 || ni == 0 {
        return Err(EvalError::EmptyScores {
            genuine: ng,
            impostor: ni,
        });
    }
    let mut genuine = scores.genuine.clone();
    let mut impostor = scores.impostor.clone();
    genuine.sort_by(f64::total_cmp);
    impostor.sort_by(f64::total_cmp);

    let mut thresholds: Vec<f64> = genuine.iter().chain(&impostor).copied().collect();
    thresholds.sort_by(f64::total_cmp);
    thresholds.dedup();
    thresholds.push(thresholds.last().expect("non-empty").next_up());

    let (ngu, niu) = (ng as u128, ni as u128);
    let (mut g_lt, mut i_lt) = (0usize, 0usize);
    // (threshold, fmr, fnmr, D = fnmr − fmr)
    let mut prev: Option<(f64, f64, f64, f64)> = None;
    for &t in &thresholds {
        while g_lt < ng && genuine[g_lt] < t {
            g_lt += 1;
        }
        while i_lt < ni && impostor[i_lt] < t {
            i_lt += 1;
        }
        let fmr = i_lt as f64 / ni as f64;
        let fnmr = (ng - g_lt) as f64 / ng as f64;
        // Exact sign of FNMR − FMR.
        let lhs = (ng - g_lt) as u128 * niu;
        let rhs = i_lt as u128 * ngu;
        if lhs == rhs {
            return Ok(Eer { eer: fmr, threshold: t });
        }
        let d = fnmr - fmr;
        if lhs < rhs {
            let (t0, fmr0, _, d0) = prev.expect("FNMR − FMR = 1 at the smallest score");
            let alpha = d0 / (d0 - d);
            return Ok(Eer {
                eer: fmr0 + alpha * (fmr - fmr0),
                threshold: t0 + alpha * (t - t0),
            });
        }
        prev = Some((t, fmr, fnmr, d));
    }
    unreachable!("FMR reaches 1 and FNMR 0 above the largest score")
}

/// Goodness of a group: `1 − EER`.
pub fn goodness(scores: &ScoreSet) -> Result<f64, EvalError> {
    Ok(1.0 - compute_eer(scores)?.eer)
}

/// `100 · (new − old) / old`, or `None` when `old` is 0.
pub fn relative_change_pct(new: f64, old: f64) -> Option<f64> {
    (old != 0.0).then(|| 100.0 * (new - old) / old)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct GroupResult {
    pub group: usize,
    pub label: String,
    pub eer: f64,
    /// Interpolated EER threshold; absent for reports built from bare EERs.
    pub threshold: Option<f64>,
    pub genuine_count: usize,
    pub impostor_count: usize,
    pub goodness: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Discrimination {
    pub best_group: String,
    pub worst_group: String,
    /// Largest minus smallest group goodness.
    pub goodness_gap: f64,
    /// Worst group EER relative to the best group EER, in percent.
    pub max_relative_degradation_pct: Option<f64>,
    /// First group of the schema, used as a fixed reference.
    pub reference_group: String,
    /// Worst group EER relative to the reference group EER, in percent.
    pub reference_degradation_pct: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RelativeDelta {
    pub avg_pct: Option<f64>,
    pub std_pct: Option<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ScoreKind {
    Genuine,
    Impostor,
}

impl fmt::Display for ScoreKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            ScoreKind::Genuine => "genuine",
            ScoreKind::Impostor => "impostor",
        })
    }
}

/// Distance counts over 100 uniform bins on `[0, 2]`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Histogram {
    pub group: String,
    pub kind: ScoreKind,
    pub counts: Vec<u64>,
}

impl Histogram {
    pub fn from_scores(group: String, kind: ScoreKind, scores: &[f64]) -> Self {
        let mut counts = vec![0u64; HISTOGRAM_BINS];
        let width = HISTOGRAM_MAX / HISTOGRAM_BINS as f64;
        for &s in scores {
            let bin = ((s / width).floor().max(0.0) as usize).min(HISTOGRAM_BINS - 1);
            counts[bin] += 1;
        }
        Self { group, kind, counts }
    }

    pub fn bin_edges(bin: usize) -> (f64, f64) {
        let width = HISTOGRAM_MAX / HISTOGRAM_BINS as f64;
        (bin as f64 * width, (bin + 1) as f64 * width)
    }
}

/// CSV `group,kind,bin_low,bin_high,count` for a set of histograms.
pub fn histograms_csv(histograms: &[Histogram], with_header: bool) -> String {
    let mut out = String::new();
    if with_header {
        out.push_str("group,kind,bin_low,bin_high,count\n");
    }
    for h in histograms {
        for (bin, c) in h.counts.iter().enumerate() {
            let (lo, hi) = Histogram::bin_edges(bin);
            out.push_str(&format!("{},{},{lo:.2},{hi:.2},{c}\n", h.group, h.kind));
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FairnessReport {
    pub per_group: Vec<GroupResult>,
    /// Unweighted mean of the group EERs.
    pub avg_eer: f64,
    /// Population standard deviation of the group EERs.
    pub std_eer: f64,
    pub discrimination: Discrimination,
    pub relative_delta_vs_baseline: Option<RelativeDelta>,
    pub histograms: Vec<Histogram>,
}

fn mean_std(values: &[f64]) -> (f64, f64) {
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    let var = values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    (mean, var.sqrt())
}

impl FairnessReport {
    /// Report from already computed group results.
    pub fn from_groups(
        per_group: Vec<GroupResult>,
        histograms: Vec<Histogram>,
        baseline: Option<&FairnessReport>,
    ) -> Result<Self, EvalError> {
        if per_group.len() < 2 {
            return Err(EvalError::TooFewGroups(per_group.len()));
        }
        let eers: Vec<f64> = per_group.iter().map(|g| g.eer).collect();
        let (avg_eer, std_eer) = mean_std(&eers);
        let best = per_group
            .iter()
            .min_by(|a, b| a.eer.total_cmp(&b.eer))
            .expect("non-empty");
        let worst = per_group
            .iter()
            .max_by(|a, b| a.eer.total_cmp(&b.eer))
            .expect("non-empty");
        let reference = &per_group[0];
        let discrimination = Discrimination {
            best_group: best.label.clone(),
            worst_group: worst.label.clone(),
            goodness_gap: best.goodness - worst.goodness,
            max_relative_degradation_pct: relative_change_pct(worst.eer, best.eer),
            reference_group: reference.label.clone(),
            reference_degradation_pct: relative_change_pct(worst.eer, reference.eer),
        };
        let relative_delta_vs_baseline = baseline.map(|b| RelativeDelta {
            avg_pct: relative_change_pct(avg_eer, b.avg_eer),
            std_pct: relative_change_pct(std_eer, b.std_eer),
        });
        Ok(Self {
            per_group,
            avg_eer,
            std_eer,
            discrimination,
            relative_delta_vs_baseline,
            histograms,
        })
    }

    /// Report from bare group EERs (labels and fractions), without
    /// thresholds, counts or histograms.
    pub fn from_eers(eers: &[(&str, f64)], baseline: Option<&FairnessReport>) -> Result<Self, EvalError> {
        let per_group = eers
            .iter()
            .enumerate()
            .map(|(g, &(label, eer))| GroupResult {
                group: g,
                label: label.to_string(),
                eer,
                threshold: None,
                genuine_count: 0,
                impostor_count: 0,
                goodness: 1.0 - eer,
            })
            .collect();
        Self::from_groups(per_group, Vec::new(), baseline)
    }

    /// Re-derives the deltas against a different baseline.
    pub fn with_baseline(self, baseline: Option<&FairnessReport>) -> Result<Self, EvalError> {
        Self::from_groups(self.per_group, self.histograms, baseline)
    }

    /// Aligned-column text table, one row per `(name, report)`.
    pub fn render_table(rows: &[(&str, &FairnessReport)]) -> String {
        let Some((_, first)) = rows.first() else {
            return String::new();
        };
        let mut header = vec!["Model".to_string()];
        header.extend(first.per_group.iter().map(|g| g.label.clone()));
        header.push("Avg".into());
        header.push("Std".into());
        let arrow = |d: Option<f64>| match d {
            Some(p) if p < 0.0 => format!(" (↓{:.0}%)", -p),
            Some(p) => format!(" (↑{p:.0}%)"),
            None => String::new(),
        };
        let mut lines = vec![header];
        for (name, report) in rows {
            let mut line = vec![name.to_string()];
            line.extend(report.per_group.iter().map(|g| format!("{:.2}", 100.0 * g.eer)));
            let delta = report.relative_delta_vs_baseline.as_ref();
            line.push(format!("{:.2}{}", 100.0 * report.avg_eer, arrow(delta.and_then(|d| d.avg_pct))));
            line.push(format!("{:.2}{}", 100.0 * report.std_eer, arrow(delta.and_then(|d| d.std_pct))));
            lines.push(line);
        }
        let cols = lines[0].len();
        let widths: Vec<usize> = (0..cols)
            .map(|c| lines.iter().map(|l| l.get(c).map_or(0, |s| s.chars().count())).max().unwrap_or(0))
            .collect();
        let mut out = String::from("EER (%) per demographic group\n");
        for l in &lines {
            let cells: Vec<String> = l
                .iter()
                .enumerate()
                .map(|(c, s)| {
                    let pad = widths[c] - s.chars().count();
                    if c == 0 {
                        format!("{s}{}", " ".repeat(pad))
                    } else {
                        format!("{}{s}", " ".repeat(pad))
                    }
                })
                .collect();
            out.push_str(cells.join("  ").trim_end());
            out.push('\n');
        }
        out
    }
}

/// Per-group EERs, Avg/Std, discrimination summary and histograms.
pub fn fairness_report(
    scoresets: &BTreeMap<usize, ScoreSet>,
    labels: impl Fn(usize) -> String,
    baseline: Option<&FairnessReport>,
) -> Result<FairnessReport, EvalError> {
    let mut per_group = Vec::with_capacity(scoresets.len());
    let mut histograms = Vec::with_capacity(2 * scoresets.len());
    for (&g, s) in scoresets {
        let eer = compute_eer(s)?;
        let label = labels(g);
        per_group.push(GroupResult {
            group: g,
            label: label.clone(),
            eer: eer.eer,
            threshold: Some(eer.threshold),
            genuine_count: s.genuine.len(),
            impostor_count: s.impostor.len(),
            goodness: 1.0 - eer.eer,
        });
        histograms.push(Histogram::from_scores(label.clone(), ScoreKind::Genuine, &s.genuine));
        histograms.push(Histogram::from_scores(label, ScoreKind::Impostor, &s.impostor));
    }
    FairnessReport::from_groups(per_group, histograms, baseline)
}

/// Pools fold reports: group EERs and thresholds are averaged over folds
/// before Avg/Std are computed; counts and histograms are summed.
pub fn aggregate_reports(
    folds: &[FairnessReport],
    baseline: Option<&FairnessReport>,
) -> Result<FairnessReport, EvalError> {
    let mut groups: BTreeMap<usize, (GroupResult, usize)> = BTreeMap::new();
    for report in folds {
        for g in &report.per_group {
            groups
                .entry(g.group)
                .and_modify(|(acc, n)| {
                    acc.eer += g.eer;
                    acc.threshold = acc.threshold.zip(g.threshold).map(|(a, b)| a + b);
                    acc.genuine_count += g.genuine_count;
                    acc.impostor_count += g.impostor_count;
                    *n += 1;
                })
                .or_insert_with(|| (g.clone(), 1));
        }
    }
    let per_group = groups
        .into_values()
        .map(|(mut g, n)| {
            g.eer /= n as f64;
            g.threshold = g.threshold.map(|t| t / n as f64);
            g.goodness = 1.0 - g.eer;
            g
        })
        .collect();
    let mut histograms: Vec<Histogram> = Vec::new();
    for report in folds {
        for h in &report.histograms {
            match histograms.iter_mut().find(|x| x.group == h.group && x.kind == h.kind) {
                Some(x) => x.counts.iter_mut().zip(&h.counts).for_each(|(a, b)| *a += b),
                None => histograms.push(h.clone()),
            }
        }
    }
    FairnessReport::from_groups(per_group, histograms, baseline)
}

/// Summary of impostor distances between two different groups.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CrossGroupSummary {
    pub group_a: String,
    pub group_b: String,
    pub pairs: usize,
    pub mean_distance: f64,
    pub min_distance: f64,
}

/// Optional cross-group impostor analysis: for every pair of groups, up to
/// `max_pairs` seeded cross-group sample pairs.
pub fn cross_group_impostors(
    dataset: &Dataset,
    transform: Option<&DebiasHead>,
    max_pairs: usize,
    seed: u64,
) -> Result<Vec<CrossGroupSummary>, EvalError> {
    let embeddings = embed_all(dataset, transform)?;
    let mut by_group: BTreeMap<usize, Vec<usize>> = BTreeMap::new();
    for i in 0..dataset.records.len() {
        by_group.entry(dataset.group_of(i)).or_default().push(i);
    }
    let groups: Vec<_> = by_group.into_iter().collect();
    let mut rng = rng::seeded(rng::substream(seed, "cross-group"));
    let mut out = Vec::new();
    for (i, (ga, ra)) in groups.iter().enumerate() {
        for (gb, rb) in &groups[i + 1..] {
            let total = ra.len() * rb.len();
            let picks: Vec<usize> = if total <= max_pairs {
                (0..total).collect()
            } else {
                let mut v = index::sample(&mut rng, total, max_pairs).into_vec();
                v.sort_unstable();
                v
            };
            let d: Vec<f64> = picks
                .iter()
                .map(|&k| distance(&embeddings[ra[k / rb.len()]], &embeddings[rb[k % rb.len()]]))
                .collect();
            out.push(CrossGroupSummary {
                group_a: dataset.schema.group_label(*ga),
                group_b: dataset.schema.group_label(*gb),
                pairs: d.len(),
                mean_distance: d.iter().sum::<f64>() / d.len().max(1) as f64,
                min_distance: d.iter().copied().fold(f64::INFINITY, f64::min),
            });
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn set(g: &[f64], i: &[f64]) -> ScoreSet {
        ScoreSet::new(0, g.to_vec(), i.to_vec())
    }

    #[test]
    fn eer_fixed_cases() {
        assert_eq!(compute_eer(&set(&[0.1, 0.2], &[0.3, 0.4])).unwrap().eer, 0.0);
        assert_eq!(compute_eer(&set(&[0.3, 0.7, 0.9], &[0.3, 0.7, 0.9])).unwrap().eer, 0.5);
        assert_eq!(compute_eer(&set(&[0.4], &[0.4])).unwrap().eer, 0.5);
        let e = compute_eer(&set(&[0.1, 0.2, 0.6], &[0.3, 0.5, 0.7])).unwrap();
        assert!((e.eer - 1.0 / 3.0).abs() < 1e-12);
        assert_eq!(e.threshold, 0.5);
    }

    #[test]
    fn eer_requires_both_lists() {
        assert!(matches!(compute_eer(&set(&[], &[0.1])), Err(EvalError::EmptyScores { .. })));
        assert!(matches!(compute_eer(&set(&[0.1], &[])), Err(EvalError::EmptyScores { .. })));
    }

    #[test]
    fn reversed_scores_have_full_error() {
        let e = compute_eer(&set(&[0.8, 0.9], &[0.1, 0.2])).unwrap();
        assert!((e.eer - 1.0).abs() < 1e-12);
    }

    #[test]
    fn pairing_policy_parsing() {
        assert_eq!("exhaustive".parse::<PairingPolicy>().unwrap(), PairingPolicy::Exhaustive);
        assert_eq!("capped:12".parse::<PairingPolicy>().unwrap(), PairingPolicy::Capped(12));
        assert!("capped:0".parse::<PairingPolicy>().is_err());
        assert!("capped".parse::<PairingPolicy>().is_err());
        let json = serde_json::to_string(&PairingPolicy::Capped(5)).unwrap();
        assert_eq!(json, "\"capped:5\"");
    }

    #[test]
    fn identical_eers_have_zero_std() {
        let r = FairnessReport::from_eers(&[("a", 0.02), ("b", 0.02), ("c", 0.02)], None).unwrap();
        assert!((r.avg_eer - 0.02).abs() < 1e-15);
        assert_eq!(r.std_eer, 0.0);
    }

    #[test]
    fn goodness_is_one_minus_eer() {
        assert_eq!(goodness(&set(&[0.1], &[0.2])).unwrap(), 1.0);
        let r = FairnessReport::from_eers(&[("a", 0.0224), ("b", 0.0)], None).unwrap();
        assert!((r.per_group[0].goodness - 0.9776).abs() < 1e-12);
    }

    #[test]
    fn histogram_binning_edges() {
        let h = Histogram::from_scores("g".into(), ScoreKind::Genuine, &[0.0, 0.019, 0.02, 1.999, 2.0]);
        assert_eq!(h.counts[0], 2);
        assert_eq!(h.counts[1], 1);
        assert_eq!(h.counts[99], 2);
        assert_eq!(h.counts.iter().sum::<u64>(), 5);
    }

    #[test]
    fn table_marks_relative_changes() {
        let base = FairnessReport::from_eers(&[("a", 0.0063), ("b", 0.0133)], None).unwrap();
        let new = FairnessReport::from_eers(&[("a", 0.0063), ("b", 0.0099)], Some(&base)).unwrap();
        let table = FairnessReport::render_table(&[("base", &base), ("new", &new)]);
        assert!(table.contains("↓"), "{table}");
        assert_eq!(table.lines().count(), 4);
    }
}
