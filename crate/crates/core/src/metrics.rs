//! Absolute, ranking and early-risk evaluation metrics.

use std::collections::{BTreeMap, BTreeSet};
use std::hash::Hash;

use serde::{Deserialize, Serialize};

use crate::error::MetricsError;
use crate::labels::{d_to_c, Distribution4, RiskClass};

/// Cutoffs reported for precision@k.
pub const P_AT_K: [usize; 5] = [5, 10, 20, 30, 50];
/// Default slope of the latency penalty used by `speed`.
pub const DEFAULT_SPEED_P: f64 = 0.0078;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassificationReport {
    pub accuracy: f64,
    pub macro_precision: f64,
    pub macro_recall: f64,
    pub macro_f1: f64,
}

fn check_lengths(pred: usize, gold: usize) -> Result<(), MetricsError> {
    if pred != gold {
        return Err(MetricsError::Length { pred, gold });
    }
    if gold == 0 {
        return Err(MetricsError::Empty);
    }
    Ok(())
}

fn ratio(num: usize, den: usize) -> f64 {
    if den == 0 {
        0.0
    } else {
        num as f64 / den as f64
    }
}

/// Accuracy plus precision/recall/F1 macro-averaged over the classes
/// present in `gold`.
pub fn classification_report<L: Eq + Hash + Ord + Clone>(
    pred: &[L],
    gold: &[L],
) -> Result<ClassificationReport, MetricsError> {
    check_lengths(pred.len(), gold.len())?;
    let classes: BTreeSet<&L> = gold.iter().collect();
    let correct = pred.iter().zip(gold).filter(|(p, g)| p == g).count();

    let (mut p_sum, mut r_sum, mut f_sum) = (0.0, 0.0, 0.0);
    for class in &classes {
        let tp = pred.iter().zip(gold).filter(|(p, g)| p == class && g == class).count();
        let predicted = pred.iter().filter(|p| p == class).count();
        let actual = gold.iter().filter(|g| g == class).count();
        let precision = ratio(tp, predicted);
        let recall = ratio(tp, actual);
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        p_sum += precision;
        r_sum += recall;
        f_sum += f1;
    }
    let k = classes.len() as f64;
    Ok(ClassificationReport {
        accuracy: ratio(correct, gold.len()),
        macro_precision: p_sum / k,
        macro_recall: r_sum / k,
        macro_f1: f_sum / k,
    })
}

/// Precision, recall and F1 of the positive class of a binary problem.
pub fn binary_f1(pred: &[u8], gold: &[u8]) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), gold.len())?;
    let tp = pred.iter().zip(gold).filter(|(&p, &g)| p == 1 && g == 1).count();
    let fp = pred.iter().zip(gold).filter(|(&p, &g)| p == 1 && g == 0).count();
    let fn_ = pred.iter().zip(gold).filter(|(&p, &g)| p == 0 && g == 1).count();
    let precision = ratio(tp, tp + fp);
    let recall = ratio(tp, tp + fn_);
    Ok(if precision + recall > 0.0 {
        2.0 * precision * recall / (precision + recall)
    } else {
        0.0
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegressionReport {
    pub rmse: f64,
    /// `None` when the gold values have zero variance (or fewer than two).
    pub r2: Option<f64>,
}

pub fn regression_report(pred: &[f64], gold: &[f64]) -> Result<RegressionReport, MetricsError> {
    check_lengths(pred.len(), gold.len())?;
    let n = gold.len() as f64;
    let ss_res: f64 = pred.iter().zip(gold).map(|(p, g)| (p - g) * (p - g)).sum();
    let mean = gold.iter().sum::<f64>() / n;
    let ss_tot: f64 = gold.iter().map(|g| (g - mean) * (g - mean)).sum();
    Ok(RegressionReport {
        rmse: (ss_res / n).sqrt(),
        r2: (gold.len() >= 2 && ss_tot > 0.0).then(|| 1.0 - ss_res / ss_tot),
    })
}

/// Per-class RMSE and R² of distribution predictions, plus unweighted means.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MultiOutputReport {
    /// Canonical class order.
    pub per_class: [RegressionReport; 4],
    pub rmse_mean: f64,
    /// Mean over the classes whose R² is defined.
    pub r2_mean: Option<f64>,
}

impl MultiOutputReport {
    /// Flat map keyed `rmse mean`, `rmse sf`, ..., `r2 c`.
    pub fn to_named(&self) -> BTreeMap<String, Option<f64>> {
        let mut out = BTreeMap::new();
        out.insert("rmse mean".to_string(), Some(self.rmse_mean));
        out.insert("r2 mean".to_string(), self.r2_mean);
        for (class, r) in RiskClass::ALL.iter().zip(&self.per_class) {
            out.insert(format!("rmse {}", class.short_name()), Some(r.rmse));
            out.insert(format!("r2 {}", class.short_name()), r.r2);
        }
        out
    }
}

pub fn multioutput_regression_report(
    pred: &[Distribution4],
    gold: &[Distribution4],
) -> Result<MultiOutputReport, MetricsError> {
    check_lengths(pred.len(), gold.len())?;
    let mut per_class = [RegressionReport { rmse: 0.0, r2: None }; 4];
    for (i, slot) in per_class.iter_mut().enumerate() {
        let p: Vec<f64> = pred.iter().map(|d| d.probs()[i]).collect();
        let g: Vec<f64> = gold.iter().map(|d| d.probs()[i]).collect();
        *slot = regression_report(&p, &g)?;
    }
    let defined: Vec<f64> = per_class.iter().filter_map(|r| r.r2).collect();
    Ok(MultiOutputReport {
        rmse_mean: per_class.iter().map(|r| r.rmse).sum::<f64>() / 4.0,
        r2_mean: (!defined.is_empty()).then(|| defined.iter().sum::<f64>() / defined.len() as f64),
        per_class,
    })
}

/// A subject to rank: id, risk score and whether it is truly at risk.
#[derive(Debug, Clone, PartialEq)]
pub struct Ranked<'a> {
    pub subject_id: &'a str,
    pub score: f64,
    pub relevant: bool,
}

/// Fraction of relevant subjects among the `k` highest scores.
///
/// Ties in score are broken by subject id, ascending.
pub fn precision_at_k(items: &[Ranked<'_>], k: usize) -> Result<f64, MetricsError> {
    if k == 0 || k > items.len() {
        return Err(MetricsError::K { k, n: items.len() });
    }
    let mut order: Vec<&Ranked<'_>> = items.iter().collect();
    order.sort_by(|a, b| b.score.total_cmp(&a.score).then_with(|| a.subject_id.cmp(b.subject_id)));
    Ok(order[..k].iter().filter(|r| r.relevant).count() as f64 / k as f64)
}

/// Task-2d precision@k: each class ranks subjects by its predicted
/// probability, relevant when the gold majority class is that class; the
/// four precisions are averaged.
pub fn distribution_precision_at_k(
    ids: &[&str],
    pred: &[Distribution4],
    gold: &[Distribution4],
    k: usize,
) -> Result<f64, MetricsError> {
    check_lengths(pred.len(), gold.len())?;
    check_lengths(ids.len(), gold.len())?;
    let mut total = 0.0;
    for class in RiskClass::ALL {
        let items: Vec<Ranked<'_>> = ids
            .iter()
            .zip(pred)
            .zip(gold)
            .map(|((id, p), g)| Ranked {
                subject_id: id,
                score: p.get(class),
                relevant: d_to_c(g) == class,
            })
            .collect();
        total += precision_at_k(&items, k)?;
    }
    Ok(total / 4.0)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceEntry {
    pub round: usize,
    pub decision: u8,
    pub prob: f64,
}

/// Per-round decisions a streaming client made for one subject.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DecisionTrace {
    pub subject_id: String,
    pub entries: Vec<TraceEntry>,
    pub total_rounds: usize,
}

impl DecisionTrace {
    /// Rounds start at 1 and strictly increase, decisions are binary and
    /// never drop back to 0 once raised.
    pub fn validate(&self) -> Result<(), MetricsError> {
        let invalid = |reason: &str| MetricsError::InvalidTrace {
            subject_id: self.subject_id.clone(),
            reason: reason.to_string(),
        };
        let mut last_round = 0;
        let mut raised = false;
        for e in &self.entries {
            if e.round <= last_round {
                return Err(invalid("rounds must start at 1 and strictly increase"));
            }
            if e.round > self.total_rounds {
                return Err(invalid("round beyond total_rounds"));
            }
            if e.decision > 1 {
                return Err(invalid("decision must be 0 or 1"));
            }
            if raised && e.decision == 0 {
                return Err(invalid("positive decision withdrawn"));
            }
            if !(0.0..=1.0).contains(&e.prob) {
                return Err(invalid("probability outside [0, 1]"));
            }
            raised |= e.decision == 1;
            last_round = e.round;
        }
        Ok(())
    }

    /// Round of the first positive decision.
    pub fn first_positive(&self) -> Option<usize> {
        self.entries.iter().find(|e| e.decision == 1).map(|e| e.round)
    }

    pub fn final_decision(&self) -> u8 {
        self.entries.last().map_or(0, |e| e.decision)
    }
}

/// Cost parameters of the early-risk detection error.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ErdeParams {
    /// Deadline: the round at which a true positive costs half of `c_tp`.
    pub o: usize,
    pub c_fp: f64,
    pub c_fn: f64,
    pub c_tp: f64,
}

impl ErdeParams {
    /// Standard costs: `c_fn = c_tp = 1`, `c_fp` = share of positives.
    pub fn standard(o: usize, gold: &BTreeMap<String, u8>) -> ErdeParams {
        let positives = gold.values().filter(|&&g| g == 1).count();
        ErdeParams {
            o,
            c_fp: ratio(positives, gold.len()),
            c_fn: 1.0,
            c_tp: 1.0,
        }
    }
}

/// Latency cost factor `1 − 1/(1 + e^(k−o))`.
pub fn latency_cost(k: usize, o: usize) -> f64 {
    1.0 - 1.0 / (1.0 + (k as f64 - o as f64).exp())
}

fn traces_with_gold<'a>(
    traces: &'a [DecisionTrace],
    gold: &BTreeMap<String, u8>,
) -> Result<Vec<(&'a DecisionTrace, u8)>, MetricsError> {
    let by_id: BTreeMap<&str, &DecisionTrace> =
        traces.iter().map(|t| (t.subject_id.as_str(), t)).collect();
    for id in by_id.keys() {
        if !gold.contains_key(*id) {
            return Err(MetricsError::MissingGold(id.to_string()));
        }
    }
    gold.iter()
        .map(|(id, &g)| {
            let t = by_id
                .get(id.as_str())
                .ok_or_else(|| MetricsError::MissingTrace(id.clone()))?;
            Ok((*t, g))
        })
        .collect()
}

/// Mean early-risk detection error over the subjects of `gold`.
pub fn erde(
    traces: &[DecisionTrace],
    gold: &BTreeMap<String, u8>,
    params: &ErdeParams,
) -> Result<f64, MetricsError> {
    let pairs = traces_with_gold(traces, gold)?;
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let total: f64 = pairs
        .iter()
        .map(|(t, g)| match (t.first_positive(), g) {
            (Some(k), 1) => params.c_tp * latency_cost(k, params.o),
            (Some(_), _) => params.c_fp,
            (None, 1) => params.c_fn,
            (None, _) => 0.0,
        })
        .sum();
    Ok(total / pairs.len() as f64)
}

/// Even-length medians average the two middle values.
pub fn median(values: &[f64]) -> Option<f64> {
    if values.is_empty() {
        return None;
    }
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mid = v.len() / 2;
    Some(if v.len() % 2 == 0 {
        (v[mid - 1] + v[mid]) / 2.0
    } else {
        v[mid]
    })
}

/// Latency penalty `−1 + 2/(1 + e^(−p(k−1)))`; zero at round 1.
pub fn latency_penalty(k: f64, p: f64) -> f64 {
    -1.0 + 2.0 / (1.0 + (-p * (k - 1.0)).exp())
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EarlyReport {
    /// Median first-positive round over true positives.
    pub latency_tp: Option<f64>,
    pub speed: Option<f64>,
    pub latency_weighted_f1: Option<f64>,
    /// Positive-class F1 of the final decisions.
    pub f1: f64,
    pub true_positives: usize,
}

/// Latency-aware metrics. `speed` penalises the median true-positive
/// latency; all latency metrics are `None` when there is no true positive.
pub fn early_report(
    traces: &[DecisionTrace],
    gold: &BTreeMap<String, u8>,
    p: f64,
) -> Result<EarlyReport, MetricsError> {
    let pairs = traces_with_gold(traces, gold)?;
    if pairs.is_empty() {
        return Err(MetricsError::Empty);
    }
    let pred: Vec<u8> = pairs.iter().map(|(t, _)| t.final_decision()).collect();
    let gold_v: Vec<u8> = pairs.iter().map(|(_, g)| *g).collect();
    let f1 = binary_f1(&pred, &gold_v)?;
    let delays: Vec<f64> = pairs
        .iter()
        .filter(|(_, g)| *g == 1)
        .filter_map(|(t, _)| t.first_positive())
        .map(|k| k as f64)
        .collect();
    let latency_tp = median(&delays);
    let speed = latency_tp.map(|k| 1.0 - latency_penalty(k, p));
    Ok(EarlyReport {
        latency_tp,
        speed,
        latency_weighted_f1: speed.map(|s| s * f1),
        f1,
        true_positives: delays.len(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn trace(id: &str, decisions: &[u8]) -> DecisionTrace {
        DecisionTrace {
            subject_id: id.to_string(),
            entries: decisions
                .iter()
                .enumerate()
                .map(|(i, &d)| TraceEntry {
                    round: i + 1,
                    decision: d,
                    prob: f64::from(d),
                })
                .collect(),
            total_rounds: decisions.len(),
        }
    }

    fn gold(pairs: &[(&str, u8)]) -> BTreeMap<String, u8> {
        pairs.iter().map(|(k, v)| (k.to_string(), *v)).collect()
    }

    #[test]
    fn classification_examples() {
        let r = classification_report(&[1, 0, 2, 2], &[1, 0, 2, 2]).unwrap();
        assert_eq!(r.accuracy, 1.0);
        assert_eq!(r.macro_f1, 1.0);

        // confusion matrix: tp1=1 fp1=1 fn1=1, tp0=1 fp0=1 fn0=1
        let r = classification_report(&[1, 1, 0, 0], &[1, 0, 1, 0]).unwrap();
        assert_eq!(r.accuracy, 0.5);
        assert_eq!(r.macro_precision, 0.5);
        assert_eq!(r.macro_recall, 0.5);
        assert_eq!(r.macro_f1, 0.5);

        let r = classification_report(&["c"; 3], &["c"; 3]).unwrap();
        assert_eq!((r.accuracy, r.macro_f1), (1.0, 1.0));

        // classes only predicted, never gold, do not enter the macro mean
        let r = classification_report(&[0, 9], &[0, 0]).unwrap();
        assert_eq!(r.macro_recall, 0.5);
        assert_eq!(r.macro_precision, 1.0);

        assert!(classification_report(&[0], &[0, 1]).is_err());
        assert!(classification_report::<u8>(&[], &[]).is_err());
    }

    #[test]
    fn regression_examples() {
        let r = regression_report(&[0.1, 0.5], &[0.1, 0.5]).unwrap();
        assert_eq!((r.rmse, r.r2), (0.0, Some(1.0)));
        let r = regression_report(&[0.5, 0.5], &[0.0, 1.0]).unwrap();
        assert_eq!(r.r2, Some(0.0));
        let r = regression_report(&[0.0, 0.0], &[0.0, 1.0]).unwrap();
        assert!((r.rmse - 0.5f64.sqrt()).abs() < 1e-15);
        assert_eq!(r.r2, Some(-1.0));
        assert_eq!(regression_report(&[0.2, 0.1], &[0.3, 0.3]).unwrap().r2, None);
    }

    #[test]
    fn multioutput_means_and_names() {
        let d = |p| Distribution4::new(p).unwrap();
        let gold = [d([0.7, 0.1, 0.1, 0.1]), d([0.0, 0.0, 0.1, 0.9])];
        let r = multioutput_regression_report(&gold, &gold).unwrap();
        assert!(r.per_class.iter().all(|c| c.rmse == 0.0));
        let named = r.to_named();
        assert_eq!(named.len(), 10);
        assert_eq!(named["rmse mean"], Some(0.0));
        assert!(named.contains_key("r2 so"));
    }

    #[test]
    fn precision_at_k_examples() {
        let items = [
            Ranked { subject_id: "a", score: 0.9, relevant: true },
            Ranked { subject_id: "b", score: 0.8, relevant: false },
            Ranked { subject_id: "c", score: 0.1, relevant: true },
        ];
        assert_eq!(precision_at_k(&items, 2).unwrap(), 0.5);
        assert!((precision_at_k(&items, 3).unwrap() - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(precision_at_k(&items, 4), Err(MetricsError::K { k: 4, n: 3 }));

        // equal scores fall back to id order
        let tied = [
            Ranked { subject_id: "z", score: 0.5, relevant: false },
            Ranked { subject_id: "a", score: 0.5, relevant: true },
        ];
        assert_eq!(precision_at_k(&tied, 1).unwrap(), 1.0);
    }

    #[test]
    fn erde_examples() {
        let g = gold(&[("a", 0), ("b", 0)]);
        let traces = [trace("a", &[0, 0]), trace("b", &[0])];
        let p = ErdeParams { o: 5, c_fp: 0.3, c_fn: 1.0, c_tp: 1.0 };
        assert_eq!(erde(&traces, &g, &p).unwrap(), 0.0);

        let g = gold(&[("a", 1)]);
        let tp = trace("a", &[0, 0, 0, 0, 1]);
        assert_eq!(erde(&[tp], &g, &p).unwrap(), 0.5);

        let g = gold(&[("a", 0)]);
        assert_eq!(erde(&[trace("a", &[0, 0, 0, 1])], &g, &p).unwrap(), 0.3);
        assert_eq!(erde(&[trace("a", &[1])], &g, &p).unwrap(), 0.3);

        let g = gold(&[("a", 1)]);
        assert_eq!(erde(&[trace("a", &[0, 0])], &g, &p).unwrap(), 1.0);

        assert_eq!(
            erde(&[], &gold(&[("a", 1)]), &p),
            Err(MetricsError::MissingTrace("a".into()))
        );
    }

    #[test]
    fn standard_costs() {
        let g = gold(&[("a", 1), ("b", 0), ("c", 0), ("d", 0)]);
        let p = ErdeParams::standard(30, &g);
        assert_eq!((p.c_fp, p.c_fn, p.c_tp, p.o), (0.25, 1.0, 1.0, 30));
    }

    #[test]
    fn early_examples() {
        let g = gold(&[("a", 1), ("b", 1), ("c", 0)]);
        let traces = [trace("a", &[1, 1]), trace("b", &[1]), trace("c", &[0, 0])];
        let r = early_report(&traces, &g, DEFAULT_SPEED_P).unwrap();
        assert_eq!(r.latency_tp, Some(1.0));
        assert_eq!(r.speed, Some(1.0));
        assert_eq!(r.latency_weighted_f1, Some(1.0));

        let traces = [trace("a", &[1, 1, 1]), trace("b", &[0, 0, 1]), trace("c", &[1, 1, 1])];
        let r = early_report(&traces, &g, DEFAULT_SPEED_P).unwrap();
        assert_eq!(r.latency_tp, Some(2.0));
        let expected = 1.0 - (-1.0 + 2.0 / (1.0 + (-DEFAULT_SPEED_P).exp()));
        assert!((r.speed.unwrap() - expected).abs() < 1e-15);
        // F1 with tp=2, fp=1: P=2/3, R=1
        assert!((r.f1 - 0.8).abs() < 1e-12);
        assert!((r.latency_weighted_f1.unwrap() - 0.8 * expected).abs() < 1e-12);

        let none = early_report(&[trace("a", &[0]), trace("b", &[0]), trace("c", &[1])], &g, 0.0078)
            .unwrap();
        assert_eq!((none.latency_tp, none.speed, none.true_positives), (None, None, 0));
    }

    #[test]
    fn trace_validation() {
        assert!(trace("a", &[0, 1, 1]).validate().is_ok());
        assert!(trace("a", &[1, 0]).validate().is_err());
        let mut t = trace("a", &[0, 0]);
        t.entries[1].round = 1;
        assert!(t.validate().is_err());
    }

    #[test]
    fn medians() {
        assert_eq!(median(&[3.0, 1.0]), Some(2.0));
        assert_eq!(median(&[3.0, 1.0, 2.0]), Some(2.0));
        assert_eq!(median(&[]), None);
    }
}
