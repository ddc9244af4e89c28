//! MIRAGE and SKEW over classified task sets, in exact rational arithmetic.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use num_rational::Ratio;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::domain::{Domain, Feasibility, TaskId, TaskSet};

pub type Rational = Ratio<i128>;

/// Pooled MIRAGE above this fraction raises the report banner.
pub const BANNER_THRESHOLD: (i128, i128) = (45, 100);
pub const BANNER_TEXT: &str = "mirage > 45%";

#[derive(Debug, Error, Clone, PartialEq, Eq)]
pub enum MetricsError {
    #[error("no task sets to score")]
    EmptyInput,
    #[error("set {set} is incomplete: {missing} perturbed verdicts missing")]
    IncompleteSet { set: TaskId, missing: usize },
    #[error("set {0} has no usable perturbed verdict")]
    NoUsableVerdicts(TaskId),
}

/// The labels of one task set that enter the metrics.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SetOutcome {
    pub original: Feasibility,
    pub perturbed: Vec<Feasibility>,
}

impl SetOutcome {
    pub fn new(original: Feasibility, perturbed: Vec<Feasibility>) -> Self {
        SetOutcome { original, perturbed }
    }

    /// Labels for a set whose original is feasible by validation.
    pub fn validated(perturbed: Vec<Feasibility>) -> Self {
        Self::new(Feasibility::Feasible, perturbed)
    }

    pub fn infeasible_perturbed(&self) -> usize {
        self.perturbed
            .iter()
            .filter(|f| **f == Feasibility::Infeasible)
            .count()
    }

    /// Share of perturbed members judged infeasible.
    pub fn mirage(&self) -> Rational {
        Rational::new(self.infeasible_perturbed() as i128, self.perturbed.len() as i128)
    }

    /// Share of member pairs, original included, whose labels disagree:
    /// `f·k / C(t, 2)`.
    pub fn skew(&self) -> Rational {
        let t = self.perturbed.len() as i128 + 1;
        let k = self.infeasible_perturbed() as i128
            + i128::from(self.original == Feasibility::Infeasible);
        let f = t - k;
        Rational::new(f * k, t * (t - 1) / 2)
    }
}

/// Extracts the scored labels of `set`.
///
/// Every perturbed member needs a verdict. Failed parses are dropped from
/// the set's denominator. The original counts as feasible unless it carries
/// a usable verdict of its own.
pub fn outcome_of(set: &TaskSet) -> Result<SetOutcome, MetricsError> {
    let missing = set
        .perturbed
        .iter()
        .filter(|t| !set.verdicts.contains_key(&t.id))
        .count();
    if missing > 0 {
        return Err(MetricsError::IncompleteSet {
            set: set.original.id.clone(),
            missing,
        });
    }
    let perturbed: Vec<Feasibility> = set
        .perturbed
        .iter()
        .filter_map(|t| set.verdicts[&t.id].usable_label())
        .collect();
    if perturbed.is_empty() {
        return Err(MetricsError::NoUsableVerdicts(set.original.id.clone()));
    }
    let original = set
        .verdicts
        .get(&set.original.id)
        .and_then(|v| v.usable_label())
        .unwrap_or(Feasibility::Feasible);
    Ok(SetOutcome::new(original, perturbed))
}

fn mean(values: impl IntoIterator<Item = Rational>) -> Result<Rational, MetricsError> {
    let mut sum = Rational::from_integer(0);
    let mut count = 0i128;
    for v in values {
        sum += v;
        count += 1;
    }
    if count == 0 {
        return Err(MetricsError::EmptyInput);
    }
    Ok(sum / count)
}

/// `(1/m) Σ_i (infeasible perturbed in set i) / n_i`.
pub fn mirage(sets: &[SetOutcome]) -> Result<Rational, MetricsError> {
    mean(sets.iter().map(SetOutcome::mirage))
}

/// `(1/m) Σ_i (disagreeing pairs in set i) / C(t_i, 2)`.
pub fn skew(sets: &[SetOutcome]) -> Result<Rational, MetricsError> {
    mean(sets.iter().map(SetOutcome::skew))
}

/// Unweighted mean over per-domain values.
pub fn unweighted_total(per_domain: &[Rational]) -> Result<Rational, MetricsError> {
    mean(per_domain.iter().copied())
}

/// An exact value plus its decimal rendering.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(into = "ScoreRepr", try_from = "ScoreRepr")]
pub struct Score(pub Rational);

#[derive(Serialize, Deserialize)]
struct ScoreRepr {
    value: String,
    exact: String,
}

impl From<Score> for ScoreRepr {
    fn from(s: Score) -> Self {
        ScoreRepr {
            value: format_fixed(s.0, 6),
            exact: format!("{}/{}", s.0.numer(), s.0.denom()),
        }
    }
}

impl TryFrom<ScoreRepr> for Score {
    type Error = String;

    fn try_from(r: ScoreRepr) -> Result<Self, String> {
        let (n, d) = r
            .exact
            .split_once('/')
            .ok_or_else(|| format!("bad exact value {:?}", r.exact))?;
        let n: i128 = n.parse().map_err(|e| format!("{e}"))?;
        let d: i128 = d.parse().map_err(|e| format!("{e}"))?;
        if d == 0 {
            return Err("zero denominator".into());
        }
        Ok(Score(Rational::new(n, d)))
    }
}

/// Decimal rendering with `places` digits, rounding half away from zero.
pub fn format_fixed(r: Rational, places: u32) -> String {
    let scale = 10i128.pow(places);
    let negative = (*r.numer() < 0) != (*r.denom() < 0);
    let n = r.numer().abs() * scale;
    let d = r.denom().abs();
    let mut q = n / d;
    if (n % d) * 2 >= d {
        q += 1;
    }
    let int = q / scale;
    let frac = q % scale;
    let sign = if negative && q != 0 { "-" } else { "" };
    if places == 0 {
        format!("{sign}{int}")
    } else {
        format!("{sign}{int}.{frac:0width$}", width = places as usize)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DomainScores {
    pub domain: Domain,
    pub sets: usize,
    pub mirage: Score,
    pub skew: Score,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct Totals {
    pub mirage: Score,
    pub skew: Score,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReportCounts {
    /// Sets that entered the metrics.
    pub scored_sets: usize,
    pub perturbed_verdicts: usize,
    pub recovered_parses: usize,
    pub parse_failures: usize,
    pub review_rejections: usize,
    /// Sets left out for missing verdicts, an aborted classification or a
    /// rejected original.
    pub incomplete_sets: usize,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub run_id: String,
    pub domains: Vec<DomainScores>,
    pub total_unweighted: Option<Totals>,
    pub total_pooled: Option<Totals>,
    pub counts: ReportCounts,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub banner: Option<String>,
}

/// Builds the report from scored sets grouped by domain. Domains with no
/// scored set are left out of both totals.
pub fn aggregate_report(
    run_id: &str,
    by_domain: &BTreeMap<Domain, Vec<SetOutcome>>,
    counts: ReportCounts,
) -> MetricsReport {
    let mut domains = Vec::new();
    for domain in Domain::ALL {
        let Some(sets) = by_domain.get(&domain).filter(|s| !s.is_empty()) else {
            continue;
        };
        domains.push(DomainScores {
            domain,
            sets: sets.len(),
            mirage: Score(mirage(sets).expect("non-empty")),
            skew: Score(skew(sets).expect("non-empty")),
        });
    }
    let total_unweighted = (!domains.is_empty()).then(|| Totals {
        mirage: Score(unweighted_total(&domains.iter().map(|d| d.mirage.0).collect::<Vec<_>>()).expect("non-empty")),
        skew: Score(unweighted_total(&domains.iter().map(|d| d.skew.0).collect::<Vec<_>>()).expect("non-empty")),
    });
    let pooled: Vec<SetOutcome> = by_domain.values().flatten().cloned().collect();
    let total_pooled = (!pooled.is_empty()).then(|| Totals {
        mirage: Score(mirage(&pooled).expect("non-empty")),
        skew: Score(skew(&pooled).expect("non-empty")),
    });
    let banner = total_pooled
        .filter(|t| exceeds_banner_threshold(t.mirage.0))
        .map(|_| BANNER_TEXT.to_string());
    MetricsReport {
        run_id: run_id.to_string(),
        domains,
        total_unweighted,
        total_pooled,
        counts: ReportCounts {
            scored_sets: pooled.len(),
            ..counts
        },
        banner,
    }
}

pub fn exceeds_banner_threshold(mirage: Rational) -> bool {
    mirage > Rational::new(BANNER_THRESHOLD.0, BANNER_THRESHOLD.1)
}

pub const CSV_HEADER: &str = "metric,total_aggregation,Total,Science,Technology,Engineering,Medicine";

impl MetricsReport {
    /// Four rows: each metric under each total aggregation, with the
    /// per-domain columns repeated. Absent values are empty cells.
    pub fn to_csv(&self) -> String {
        let mut out = String::new();
        writeln!(out, "{CSV_HEADER}").unwrap();
        let cell = |s: Option<Score>| s.map(|s| format_fixed(s.0, 4)).unwrap_or_default();
        for (metric, pick) in [
            ("mirage", (|t: &Totals| t.mirage) as fn(&Totals) -> Score),
            ("skew", |t: &Totals| t.skew),
        ] {
            for (aggregation, total) in [("unweighted", self.total_unweighted), ("pooled", self.total_pooled)] {
                let mut row = vec![metric.to_string(), aggregation.to_string(), cell(total.as_ref().map(pick))];
                for domain in Domain::ALL {
                    let d = self.domains.iter().find(|d| d.domain == domain);
                    let score = d.map(|d| if metric == "mirage" { d.mirage } else { d.skew });
                    row.push(cell(score));
                }
                writeln!(out, "{}", row.join(",")).unwrap();
            }
        }
        out
    }

    pub fn to_json(&self) -> String {
        let mut s = serde_json::to_string_pretty(self).expect("report serializes");
        s.push('\n');
        s
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use Feasibility::{Feasible as F, Infeasible as I};

    fn r(n: i128, d: i128) -> Rational {
        Rational::new(n, d)
    }

    #[test]
    fn extremes() {
        let all_f = vec![SetOutcome::validated(vec![F, F, F]); 3];
        let all_i = vec![SetOutcome::validated(vec![I, I, I]); 3];
        assert_eq!(mirage(&all_f).unwrap(), r(0, 1));
        assert_eq!(mirage(&all_i).unwrap(), r(1, 1));
        assert_eq!(skew(&all_f).unwrap(), r(0, 1));
        assert_eq!(mirage(&[]), Err(MetricsError::EmptyInput));
    }

    #[test]
    fn two_sets_average() {
        let sets = [SetOutcome::validated(vec![I, F, F]), SetOutcome::validated(vec![I, I, F])];
        assert_eq!(mirage(&sets).unwrap(), r(1, 2));
    }

    #[test]
    fn per_set_skew_values() {
        let k = |k: usize| SetOutcome::validated((0..3).map(|i| if i < k { I } else { F }).collect()).skew();
        assert_eq!([k(0), k(1), k(2), k(3)], [r(0, 1), r(1, 2), r(2, 3), r(1, 2)]);
        // a reclassified infeasible original with all variants feasible
        assert_eq!(SetOutcome::new(I, vec![F, F, F]).skew(), r(1, 2));
    }

    #[test]
    fn fixed_rendering() {
        assert_eq!(format_fixed(r(2, 3), 4), "0.6667");
        assert_eq!(format_fixed(r(1, 2), 0), "1");
        assert_eq!(format_fixed(r(-1, 8), 2), "-0.13");
        assert_eq!(format_fixed(r(0, 1), 4), "0.0000");
    }

    #[test]
    fn report_totals_csv_and_banner() {
        let mut by = BTreeMap::new();
        by.insert(Domain::Science, vec![SetOutcome::validated(vec![I, I, F]); 2]);
        by.insert(Domain::Medicine, vec![SetOutcome::validated(vec![I, F, F])]);
        let rep = aggregate_report("run", &by, ReportCounts::default());
        assert_eq!(rep.total_unweighted.unwrap().mirage.0, r(1, 2));
        assert_eq!(rep.total_pooled.unwrap().mirage.0, r(5, 9));
        assert_eq!(rep.banner.as_deref(), Some(BANNER_TEXT));
        assert_eq!(rep.counts.scored_sets, 3);
        let csv = rep.to_csv();
        let lines: Vec<&str> = csv.lines().collect();
        assert_eq!(lines[0], CSV_HEADER);
        assert_eq!(lines[1], "mirage,unweighted,0.5000,0.6667,,,0.3333");
        assert_eq!(lines[2], "mirage,pooled,0.5556,0.6667,,,0.3333");
        assert_eq!(lines.len(), 5);
        let back: MetricsReport = serde_json::from_str(&rep.to_json()).unwrap();
        assert_eq!(back, rep);
    }
}
