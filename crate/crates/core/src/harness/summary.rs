//! Cross-suite summaries of a results file.

use std::collections::BTreeMap;
use std::fmt::Write as _;

use serde::{Deserialize, Serialize};

use super::{HarnessError, ResultRow};
use crate::guidance::Method;
use crate::metrics::{aggregate_weighted, mean, worst_case};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricMeans {
    pub success: f64,
    /// Over successful episodes only; `None` when nothing succeeded.
    pub env_steps: Option<f64>,
    pub l2_mean: f64,
    pub l2_max: f64,
    pub max_acc: f64,
    pub max_jerk: f64,
}

/// Largest per-suite value of each smoothness metric.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WorstCase {
    pub l2_mean: f64,
    pub l2_max: f64,
    pub max_acc: f64,
    pub max_jerk: f64,
}

/// Percent change of one method relative to another, `(a − b) / b · 100`.
/// A metric whose reference value is zero has no relative change.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RelativeDelta {
    pub success: Option<f64>,
    pub env_steps: Option<f64>,
    pub l2_mean: Option<f64>,
    pub l2_max: Option<f64>,
    pub max_acc: Option<f64>,
    pub max_jerk: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MethodSummary {
    pub method: Method,
    pub episodes: usize,
    pub aggregate: MetricMeans,
    pub per_delay: BTreeMap<usize, MetricMeans>,
    /// Delay-averaged values per suite.
    pub per_suite: BTreeMap<String, MetricMeans>,
    pub worst: WorstCase,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Summary {
    pub aggregate_delays: Vec<usize>,
    /// Zero-delay rows, reported in the rows file but not aggregated.
    pub excluded_rows: usize,
    pub methods: Vec<MethodSummary>,
    /// Projected method relative to the plain inpainting baseline.
    pub potr_vs_rtc: Option<RelativeDelta>,
}

impl Summary {
    pub fn method(&self, m: Method) -> Option<&MethodSummary> {
        self.methods.iter().find(|s| s.method == m)
    }

    /// Plain-text table, one line per method.
    pub fn render(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(
            out,
            "{:<6} {:>8} {:>7} {:>7} {:>7} {:>7} {:>7} | {:>7} {:>7} {:>7} {:>7}",
            "method", "success", "steps", "l2_m", "l2_M", "acc", "jerk", "w_l2_m", "w_l2_M", "w_acc", "w_jerk"
        );
        for s in &self.methods {
            let a = &s.aggregate;
            let _ = writeln!(
                out,
                "{:<6} {:>8.3} {:>7} {:>7.3} {:>7.3} {:>7.3} {:>7.3} | {:>7.3} {:>7.3} {:>7.3} {:>7.3}",
                s.method.as_str(),
                a.success,
                a.env_steps.map_or_else(|| "-".into(), |v| format!("{v:.1}")),
                a.l2_mean,
                a.l2_max,
                a.max_acc,
                a.max_jerk,
                s.worst.l2_mean,
                s.worst.l2_max,
                s.worst.max_acc,
                s.worst.max_jerk,
            );
        }
        if let Some(d) = &self.potr_vs_rtc {
            let pct = |v: Option<f64>| v.map_or_else(|| "-".into(), |v| format!("{v:+.1}%"));
            let _ = writeln!(
                out,
                "potr vs rtc: success {} steps {} l2_m {} l2_M {} acc {} jerk {}",
                pct(d.success),
                pct(d.env_steps),
                pct(d.l2_mean),
                pct(d.l2_max),
                pct(d.max_acc),
                pct(d.max_jerk)
            );
        }
        if self.excluded_rows > 0 {
            let _ = writeln!(out, "{} zero-delay rows excluded from aggregates", self.excluded_rows);
        }
        out
    }
}

/// Plain means over a set of episodes.
fn episode_means(rows: &[&ResultRow]) -> MetricMeans {
    let col = |f: fn(&ResultRow) -> f64| mean(&rows.iter().map(|r| f(r)).collect::<Vec<_>>()).unwrap_or(0.0);
    let steps: Vec<f64> = rows
        .iter()
        .filter(|r| r.success)
        .map(|r| r.env_steps as f64)
        .collect();
    MetricMeans {
        success: col(|r| f64::from(u8::from(r.success))),
        env_steps: mean(&steps),
        l2_mean: col(|r| r.l2_mean),
        l2_max: col(|r| r.l2_max),
        max_acc: col(|r| r.max_acc),
        max_jerk: col(|r| r.max_jerk),
    }
}

/// Unweighted mean of several cells; steps averaged over cells that have one.
fn average(cells: &[MetricMeans]) -> MetricMeans {
    let col = |f: fn(&MetricMeans) -> f64| mean(&cells.iter().map(f).collect::<Vec<_>>()).unwrap_or(0.0);
    let steps: Vec<f64> = cells.iter().filter_map(|c| c.env_steps).collect();
    MetricMeans {
        success: col(|c| c.success),
        env_steps: mean(&steps),
        l2_mean: col(|c| c.l2_mean),
        l2_max: col(|c| c.l2_max),
        max_acc: col(|c| c.max_acc),
        max_jerk: col(|c| c.max_jerk),
    }
}

/// Episode-weighted combination of per-suite values.
fn combine(per_suite: &[(u64, MetricMeans)]) -> Result<MetricMeans, HarnessError> {
    let agg = |f: fn(&MetricMeans) -> f64| -> Result<f64, HarnessError> {
        Ok(aggregate_weighted(&per_suite.iter().map(|(n, m)| (*n, f(m))).collect::<Vec<_>>())?)
    };
    let steps: Vec<(u64, f64)> = per_suite
        .iter()
        .filter_map(|(n, m)| m.env_steps.map(|s| (*n, s)))
        .collect();
    Ok(MetricMeans {
        success: agg(|m| m.success)?,
        env_steps: if steps.is_empty() {
            None
        } else {
            Some(aggregate_weighted(&steps)?)
        },
        l2_mean: agg(|m| m.l2_mean)?,
        l2_max: agg(|m| m.l2_max)?,
        max_acc: agg(|m| m.max_acc)?,
        max_jerk: agg(|m| m.max_jerk)?,
    })
}

fn weight_of(weights: &[(String, u64)], suite: &str) -> Result<u64, HarnessError> {
    weights
        .iter()
        .find(|(id, _)| id == suite)
        .map(|(_, n)| *n)
        .ok_or_else(|| HarnessError::Config(format!("no weight configured for suite {suite:?}")))
}

/// Per-suite delay-averaged values for one method's rows.
fn suite_values(rows: &[&ResultRow]) -> BTreeMap<String, MetricMeans> {
    let mut by_suite: BTreeMap<&str, BTreeMap<usize, Vec<&ResultRow>>> = BTreeMap::new();
    for r in rows {
        by_suite
            .entry(r.suite.as_str())
            .or_default()
            .entry(r.delay)
            .or_default()
            .push(r);
    }
    by_suite
        .into_iter()
        .map(|(suite, delays)| {
            let cells: Vec<MetricMeans> = delays.values().map(|rs| episode_means(rs)).collect();
            (suite.to_string(), average(&cells))
        })
        .collect()
}

/// Suite-weighted means over arbitrary rows (all delays pooled per suite).
pub(crate) fn cell_means(rows: &[ResultRow], weights: &[(String, u64)]) -> Result<MetricMeans, HarnessError> {
    let refs: Vec<&ResultRow> = rows.iter().collect();
    let per_suite = suite_values(&refs)
        .into_iter()
        .map(|(s, m)| Ok((weight_of(weights, &s)?, m)))
        .collect::<Result<Vec<_>, HarnessError>>()?;
    combine(&per_suite)
}

fn relative(a: &MetricMeans, b: &MetricMeans) -> RelativeDelta {
    let rel = |x: f64, y: f64| (y != 0.0).then(|| (x - y) / y * 100.0);
    RelativeDelta {
        success: rel(a.success, b.success),
        env_steps: a.env_steps.zip(b.env_steps).and_then(|(x, y)| rel(x, y)),
        l2_mean: rel(a.l2_mean, b.l2_mean),
        l2_max: rel(a.l2_max, b.l2_max),
        max_acc: rel(a.max_acc, b.max_acc),
        max_jerk: rel(a.max_jerk, b.max_jerk),
    }
}

/// Summarize a results file.
///
/// For each method, each suite's cell means are averaged over the nonzero
/// delays, then suites are combined with their episode weights. The worst
/// case is the largest per-suite value.
pub fn emit_summary(rows: &[ResultRow], weights: &[(String, u64)]) -> Result<Summary, HarnessError> {
    if rows.is_empty() {
        return Err(HarnessError::Config("no result rows to summarize".into()));
    }
    let included: Vec<&ResultRow> = rows.iter().filter(|r| !r.excluded_from_aggregate()).collect();
    let mut aggregate_delays: Vec<usize> = included.iter().map(|r| r.delay).collect();
    aggregate_delays.sort_unstable();
    aggregate_delays.dedup();

    let mut methods = Vec::new();
    for m in Method::ALL {
        let mine: Vec<&ResultRow> = included.iter().copied().filter(|r| r.method == m).collect();
        if mine.is_empty() {
            continue;
        }
        let per_suite = suite_values(&mine);
        let weighted = per_suite
            .iter()
            .map(|(s, v)| Ok((weight_of(weights, s)?, *v)))
            .collect::<Result<Vec<_>, HarnessError>>()?;
        let aggregate = combine(&weighted)?;

        let mut per_delay = BTreeMap::new();
        for &d in &aggregate_delays {
            let at_d: Vec<&ResultRow> = mine.iter().copied().filter(|r| r.delay == d).collect();
            if at_d.is_empty() {
                continue;
            }
            let cells = suite_values(&at_d)
                .into_iter()
                .map(|(s, v)| Ok((weight_of(weights, &s)?, v)))
                .collect::<Result<Vec<_>, HarnessError>>()?;
            per_delay.insert(d, combine(&cells)?);
        }

        let worst_of = |f: fn(&MetricMeans) -> f64| -> Result<f64, HarnessError> {
            Ok(worst_case(&per_suite.values().map(f).collect::<Vec<_>>())?)
        };
        let worst = WorstCase {
            l2_mean: worst_of(|v| v.l2_mean)?,
            l2_max: worst_of(|v| v.l2_max)?,
            max_acc: worst_of(|v| v.max_acc)?,
            max_jerk: worst_of(|v| v.max_jerk)?,
        };
        methods.push(MethodSummary {
            method: m,
            episodes: mine.len(),
            aggregate,
            per_delay,
            per_suite,
            worst,
        });
    }

    let find = |m: Method| methods.iter().find(|s: &&MethodSummary| s.method == m);
    let potr_vs_rtc = match (find(Method::Potr), find(Method::Rtc)) {
        (Some(p), Some(r)) => Some(relative(&p.aggregate, &r.aggregate)),
        (Some(_), None) => {
            log::warn!("no rtc rows; relative comparison omitted");
            None
        }
        _ => None,
    };

    Ok(Summary {
        aggregate_delays,
        excluded_rows: rows.len() - included.len(),
        methods,
        potr_vs_rtc,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn row(method: Method, delay: usize, suite: &str, success: bool, steps: usize, l2: f64, jerk: f64) -> ResultRow {
        ResultRow {
            method,
            delay,
            suite: suite.into(),
            seed: 0,
            success,
            env_steps: steps,
            l2_mean: l2,
            l2_max: 2.0 * l2,
            max_acc: 0.5,
            max_jerk: jerk,
        }
    }

    fn weights() -> Vec<(String, u64)> {
        vec![("a".into(), 10), ("b".into(), 30)]
    }

    #[test]
    fn hand_computed_summary() {
        let rows = vec![
            row(Method::Rtc, 1, "a", true, 20, 0.2, 1.0),
            row(Method::Rtc, 1, "a", false, 60, 0.4, 3.0),
            row(Method::Rtc, 2, "a", true, 30, 0.6, 2.0),
            row(Method::Rtc, 1, "b", true, 40, 1.0, 4.0),
            row(Method::Rtc, 0, "b", true, 1, 9.0, 9.0),
            row(Method::Potr, 1, "a", true, 20, 0.1, 1.0),
            row(Method::Potr, 1, "b", true, 40, 0.5, 2.0),
        ];
        let s = emit_summary(&rows, &weights()).unwrap();
        assert_eq!(s.aggregate_delays, vec![1, 2]);
        assert_eq!(s.excluded_rows, 1);

        let rtc = s.method(Method::Rtc).unwrap();
        // Suite a: delay 1 cell (0.5 success, l2 0.3, steps 20), delay 2 cell (1, 0.6, 30).
        let a = rtc.per_suite["a"];
        assert!((a.success - 0.75).abs() < 1e-15);
        assert!((a.l2_mean - 0.45).abs() < 1e-15);
        assert_eq!(a.env_steps, Some(25.0));
        let agg = rtc.aggregate;
        assert!((agg.success - (10.0 * 0.75 + 30.0) / 40.0).abs() < 1e-15);
        assert!((agg.l2_mean - (10.0 * 0.45 + 30.0) / 40.0).abs() < 1e-15);
        assert_eq!(agg.env_steps, Some((10.0 * 25.0 + 30.0 * 40.0) / 40.0));
        assert_eq!(rtc.worst.max_jerk, 4.0);
        assert_eq!(rtc.worst.l2_mean, 1.0);
        assert!((rtc.per_delay[&1].l2_mean - (10.0 * 0.3 + 30.0 * 1.0) / 40.0).abs() < 1e-15);

        let d = s.potr_vs_rtc.unwrap();
        let potr_l2 = (10.0 * 0.1 + 30.0 * 0.5) / 40.0;
        let want = (potr_l2 - agg.l2_mean) / agg.l2_mean * 100.0;
        assert!((d.l2_mean.unwrap() - want).abs() < 1e-12);
    }

    #[test]
    fn zero_delay_only_has_no_aggregate() {
        let rows = vec![row(Method::Naive, 0, "a", true, 10, 0.0, 0.0)];
        let s = emit_summary(&rows, &weights()).unwrap();
        assert!(s.methods.is_empty());
        assert_eq!(s.excluded_rows, 1);
        assert!(s.potr_vs_rtc.is_none());
    }

    #[test]
    fn missing_rtc_omits_delta() {
        let rows = vec![row(Method::Potr, 2, "a", true, 10, 0.1, 0.2)];
        let s = emit_summary(&rows, &weights()).unwrap();
        assert!(s.potr_vs_rtc.is_none());
        assert!(s.render().contains("potr"));
    }

    #[test]
    fn no_successes_means_no_steps() {
        let rows = vec![row(Method::Pc, 1, "a", false, 60, 0.1, 0.2)];
        let s = emit_summary(&rows, &weights()).unwrap();
        assert_eq!(s.methods[0].aggregate.env_steps, None);
    }

    #[test]
    fn unknown_suite_and_empty_input_rejected() {
        assert!(emit_summary(&[], &weights()).is_err());
        let rows = vec![row(Method::Pc, 1, "zzz", true, 6, 0.1, 0.2)];
        assert!(matches!(emit_summary(&rows, &weights()), Err(HarnessError::Config(_))));
    }

    #[test]
    fn summary_json_round_trip() {
        let rows = vec![
            row(Method::Rtc, 1, "a", true, 20, 0.2, 1.0),
            row(Method::Potr, 1, "a", true, 20, 0.1, 1.0),
        ];
        let s = emit_summary(&rows, &weights()).unwrap();
        let text = serde_json::to_string(&s).unwrap();
        let back: Summary = serde_json::from_str(&text).unwrap();
        assert_eq!(back, s);
    }
}
