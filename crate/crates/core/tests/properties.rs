use std::collections::BTreeMap;

use proptest::prelude::*;
use riskpipe::labels::{check_consistency, Distribution4, LabelRecord, RiskClass};
use riskpipe::metrics::{erde, DecisionTrace, ErdeParams, TraceEntry};
use riskpipe::pipeline::{stratified_split, SplitSpec, StratifyOn};
use riskpipe::regression::{clip01, normalize_dist};

fn trace(id: &str, first_positive: Option<usize>, rounds: usize) -> DecisionTrace {
    DecisionTrace {
        subject_id: id.to_string(),
        entries: (1..=rounds)
            .map(|r| {
                let decision = u8::from(first_positive.is_some_and(|k| r >= k));
                TraceEntry {
                    round: r,
                    decision,
                    prob: f64::from(decision),
                }
            })
            .collect(),
        total_rounds: rounds,
    }
}

prop_compose! {
    fn raw_distribution()(v in prop::array::uniform4(0u32..1000)) -> Distribution4 {
        let v = if v.iter().all(|&x| x == 0) { [1, 0, 0, 0] } else { v };
        let total: f64 = v.iter().map(|&x| f64::from(x)).sum();
        Distribution4::new(v.map(|x| f64::from(x) / total)).unwrap()
    }
}

proptest! {
    #[test]
    fn normalized_outputs_are_distributions(raw in prop::array::uniform4(-5.0f64..5.0)) {
        let n = normalize_dist(raw);
        let p = n.dist.probs();
        prop_assert!(p.iter().all(|v| (0.0..=1.0).contains(v)));
        prop_assert!((p.iter().sum::<f64>() - 1.0).abs() <= 1e-9);
        prop_assert_eq!(n.degenerate, raw.iter().all(|&v| v <= 0.0));
    }

    #[test]
    fn clip_is_idempotent(v in prop::collection::vec(-3.0f64..3.0, 0..20)) {
        let once = clip01(&v);
        prop_assert_eq!(clip01(&once), once);
    }

    #[test]
    fn self_derived_records_are_consistent(d in raw_distribution()) {
        let r = LabelRecord::from_distribution("s", d);
        prop_assert!(check_consistency(&r).is_consistent());
    }

    #[test]
    fn split_partitions_and_repeats(n in 2usize..120, seed in any::<u64>(), f in 0.05f64..0.95) {
        let labels: Vec<_> = (0..n)
            .map(|i| {
                let mut p = [0.0; 4];
                p[(i * 13 + 5) % 4] = 1.0;
                LabelRecord::from_distribution(format!("s{i:03}"), Distribution4::new(p).unwrap())
            })
            .collect();
        let spec = SplitSpec { validation_fraction: f, seed, stratify_on: StratifyOn::TaskC };
        let split = stratified_split(&labels, &spec).unwrap();
        prop_assert_eq!(split.validation_ids.len(), (f * n as f64).round() as usize);
        prop_assert_eq!(split.train_ids.len() + split.validation_ids.len(), n);
        let mut all: Vec<_> = split.train_ids.iter().chain(&split.validation_ids).cloned().collect();
        all.sort();
        all.dedup();
        prop_assert_eq!(all.len(), n);
        prop_assert_eq!(stratified_split(&labels, &spec).unwrap(), split.clone());
        // every stratum's validation count is within one of its share
        for class in RiskClass::ALL {
            let members: Vec<_> = labels.iter().filter(|r| r.c_label == class).collect();
            let in_val = members.iter().filter(|r| split.validation_ids.contains(&r.subject_id)).count();
            let share = split.validation_ids.len() as f64 * members.len() as f64 / n as f64;
            prop_assert!((in_val as f64 - share).abs() < 1.0);
        }
    }

    #[test]
    fn erde_grows_with_detection_round(k in 1usize..40, o in prop::sample::select(vec![5usize, 30])) {
        let gold: BTreeMap<String, u8> = [("p".to_string(), 1), ("n".to_string(), 0)].into();
        let params = ErdeParams::standard(o, &gold);
        let at = |k| erde(&[trace("p", Some(k), 41), trace("n", None, 41)], &gold, &params).unwrap();
        prop_assert!(at(k) <= at(k + 1));
    }
}
