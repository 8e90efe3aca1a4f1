//! Browser demo. Each operation is a plain function returning JSON so it can
//! be tested natively; the `#[wasm_bindgen]` wrappers only forward.

use std::collections::BTreeMap;

use riskpipe::labels::{recover, Distribution4, LabelRecord, RiskClass};
use riskpipe::metrics::{
    early_report, erde, latency_cost, latency_penalty, multioutput_regression_report, ErdeParams,
};
use riskpipe::numerics::Matrix;
use riskpipe::pipeline::{half_length, stratified_split, SplitSpec};
use riskpipe::regression::{
    distribution_matrix, fit_multi, normalize_dist, MultiOutputConfig, PcaSpec, RiskModel, Strategy,
};
use riskpipe::stream::{run_streaming_eval, DecisionPolicy, TableProvider};
use riskpipe::synth::{generate, SynthSpec};
use serde_json::{json, Value};
use wasm_bindgen::prelude::*;

fn err(e: impl std::fmt::Display) -> String {
    e.to_string()
}

/// Normalises four raw scores (negatives clipped) and derives the
/// binary, suffering-mass and class labels.
pub fn recover_labels(raw: [f64; 4]) -> Value {
    let n = normalize_dist(raw);
    let r = recover(&n.dist);
    json!({
        "dist": n.dist.probs(),
        "degenerate": n.degenerate,
        "a": r.a,
        "b": r.b,
        "c": r.c.as_str(),
    })
}

/// Latency cost of a true positive at rounds `1..=max_round` for each
/// deadline, and the speed factor `1 - penalty` for the same rounds.
pub fn cost_curves(deadlines: &[usize], max_round: usize, p: f64) -> Value {
    let rounds: Vec<usize> = (1..=max_round).collect();
    let erde: BTreeMap<String, Vec<f64>> = deadlines
        .iter()
        .map(|&o| (o.to_string(), rounds.iter().map(|&k| latency_cost(k, o)).collect()))
        .collect();
    let speed: Vec<f64> = rounds.iter().map(|&k| 1.0 - latency_penalty(k as f64, p)).collect();
    json!({ "rounds": rounds, "erde": erde, "speed": speed })
}

#[derive(Debug, Clone, Copy)]
pub struct DemoSpec {
    pub subjects: usize,
    pub seed: u64,
    pub separation: f64,
    pub lambda: f64,
    pub chain: bool,
    /// 0 keeps all features.
    pub pca_components: usize,
    pub threshold: f64,
}

/// Fits the distribution model on a synthetic corpus, scores the held-out
/// subjects against the mean-distribution baseline and replays their
/// histories round by round.
pub fn chain_demo(spec: &DemoSpec) -> Result<Value, String> {
    if spec.subjects < 8 {
        return Err("need at least 8 subjects".into());
    }
    if !(spec.lambda.is_finite() && spec.lambda >= 0.0) {
        return Err(format!("lambda must be finite and non-negative, got {}", spec.lambda));
    }
    let data = generate(&SynthSpec {
        n_subjects: spec.subjects,
        seed: spec.seed,
        separation: spec.separation,
        ..SynthSpec::default()
    });
    let split = stratified_split(
        &data.labels,
        &SplitSpec {
            seed: spec.seed,
            ..SplitSpec::default()
        },
    )
    .map_err(err)?;
    let labels: BTreeMap<&str, &LabelRecord> =
        data.labels.iter().map(|l| (l.subject_id.as_str(), l)).collect();
    let lengths: BTreeMap<&str, usize> =
        data.histories.iter().map(|h| (h.subject_id.as_str(), h.len())).collect();

    let mut train_rows: Vec<&[f64]> = Vec::new();
    let mut train_gold = Vec::new();
    for id in &split.train_ids {
        let n = lengths[id.as_str()];
        train_rows.push(data.embeddings.full(id, n).map_err(err)?);
        train_rows.push(data.embeddings.round(id, half_length(n)).map_err(err)?);
        train_gold.extend([labels[id.as_str()].d_dist; 2]);
    }
    let mut val_rows: Vec<&[f64]> = Vec::new();
    let mut val_gold: Vec<Distribution4> = Vec::new();
    for id in &split.validation_ids {
        val_rows.push(data.embeddings.full(id, lengths[id.as_str()]).map_err(err)?);
        val_gold.push(labels[id.as_str()].d_dist);
    }
    let train_x = Matrix::from_rows(&train_rows).map_err(err)?;
    let val_x = Matrix::from_rows(&val_rows).map_err(err)?;
    let train_y = distribution_matrix(&train_gold);

    let model = fit_multi(
        &train_x,
        &train_y,
        &MultiOutputConfig {
            lambda: spec.lambda,
            strategy: if spec.chain { Strategy::Chain } else { Strategy::Independent },
            order: RiskClass::CHAIN_ORDER,
            pca: match spec.pca_components {
                0 => PcaSpec::None,
                k => PcaSpec::Components { k },
            },
            standardize: false,
        },
    )
    .map_err(err)?;
    let model = RiskModel::Multi(model);
    let scores = model.score(&val_x).map_err(err)?;
    let pred: Vec<Distribution4> = scores.iter().filter_map(|s| s.dist).collect();
    let means = train_y.column_means();
    let mean_dist = normalize_dist([means[0], means[1], means[2], means[3]]).dist;
    let fitted = multioutput_regression_report(&pred, &val_gold).map_err(err)?;
    let baseline =
        multioutput_regression_report(&vec![mean_dist; val_gold.len()], &val_gold).map_err(err)?;

    let val_histories: Vec<_> = data
        .histories
        .iter()
        .filter(|h| split.validation_ids.binary_search(&h.subject_id).is_ok())
        .cloned()
        .collect();
    let mut provider = TableProvider::new(&data.embeddings);
    let policy = DecisionPolicy {
        threshold: spec.threshold,
        sticky: true,
    };
    let traces = run_streaming_eval(&model, &mut provider, &val_histories, policy).map_err(err)?;
    let gold: BTreeMap<String, u8> = split
        .validation_ids
        .iter()
        .map(|id| (id.clone(), labels[id.as_str()].a_label))
        .collect();
    let mut early = serde_json::Map::new();
    for o in [5, 30] {
        let v = erde(&traces, &gold, &ErdeParams::standard(o, &gold)).map_err(err)?;
        early.insert(format!("erde{o}"), json!(v));
    }
    let report = early_report(&traces, &gold, riskpipe::metrics::DEFAULT_SPEED_P).map_err(err)?;
    early.insert("latency_tp".into(), json!(report.latency_tp));
    early.insert("speed".into(), json!(report.speed));
    early.insert("latency_weighted_f1".into(), json!(report.latency_weighted_f1));
    early.insert("f1".into(), json!(report.f1));

    let subjects: Vec<Value> = split
        .validation_ids
        .iter()
        .zip(pred.iter().zip(&val_gold))
        .zip(&traces_by_id(&traces, &split.validation_ids))
        .map(|((id, (p, g)), alarm)| {
            json!({
                "id": id,
                "gold": g.probs(),
                "pred": p.probs(),
                "alarm_round": alarm,
            })
        })
        .collect();
    Ok(json!({
        "n_train": split.train_ids.len(),
        "n_validation": split.validation_ids.len(),
        "fitted": fitted.to_named(),
        "baseline": baseline.to_named(),
        "early": early,
        "subjects": subjects,
    }))
}

fn traces_by_id(traces: &[riskpipe::metrics::DecisionTrace], ids: &[String]) -> Vec<Option<usize>> {
    let by_id: BTreeMap<&str, Option<usize>> = traces
        .iter()
        .map(|t| (t.subject_id.as_str(), t.first_positive()))
        .collect();
    ids.iter().map(|id| by_id.get(id.as_str()).copied().flatten()).collect()
}

#[wasm_bindgen(js_name = recoverLabels)]
pub fn recover_labels_js(sf: f64, sa: f64, so: f64, control: f64) -> String {
    recover_labels([sf, sa, so, control]).to_string()
}

#[wasm_bindgen(js_name = costCurves)]
pub fn cost_curves_js(deadlines: Vec<u32>, max_round: u32, p: f64) -> String {
    let deadlines: Vec<usize> = deadlines.into_iter().map(|o| o as usize).collect();
    cost_curves(&deadlines, max_round as usize, p).to_string()
}

#[allow(clippy::too_many_arguments)]
#[wasm_bindgen(js_name = chainDemo)]
pub fn chain_demo_js(
    subjects: u32,
    seed: u32,
    separation: f64,
    lambda: f64,
    chain: bool,
    pca_components: u32,
    threshold: f64,
) -> Result<String, JsError> {
    chain_demo(&DemoSpec {
        subjects: subjects as usize,
        seed: u64::from(seed),
        separation,
        lambda,
        chain,
        pca_components: pca_components as usize,
        threshold,
    })
    .map(|v| v.to_string())
    .map_err(|e| JsError::new(&e))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn recover_clips_and_rescales() {
        let v = recover_labels([2.0, -1.0, 0.0, 2.0]);
        assert_eq!(v["dist"], json!([0.5, 0.0, 0.0, 0.5]));
        assert_eq!(v["a"], 1);
        assert_eq!(v["c"], RiskClass::SufferInFavour.as_str());
        assert_eq!(recover_labels([-1.0; 4])["degenerate"], true);
    }

    #[test]
    fn cost_is_half_at_deadline() {
        let v = cost_curves(&[5], 10, 0.0078);
        assert_eq!(v["rounds"].as_array().unwrap().len(), 10);
        assert!((v["erde"]["5"][4].as_f64().unwrap() - 0.5).abs() < 1e-12);
        assert_eq!(v["speed"][0], 1.0);
    }

    #[test]
    fn demo_rejects_tiny_corpus() {
        let spec = DemoSpec {
            subjects: 3,
            seed: 1,
            separation: 2.0,
            lambda: 1.0,
            chain: true,
            pca_components: 0,
            threshold: 0.5,
        };
        assert!(chain_demo(&spec).is_err());
    }
}
