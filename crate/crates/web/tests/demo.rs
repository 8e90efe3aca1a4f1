use riskpipe_web::{chain_demo, DemoSpec};

fn spec(seed: u64) -> DemoSpec {
    DemoSpec {
        subjects: 80,
        seed,
        separation: 2.5,
        lambda: 1.0,
        chain: true,
        pca_components: 0,
        threshold: 0.5,
    }
}

#[test]
fn fitted_model_beats_mean_baseline() {
    let v = chain_demo(&spec(3)).unwrap();
    let fitted = v["fitted"]["rmse mean"].as_f64().unwrap();
    let base = v["baseline"]["rmse mean"].as_f64().unwrap();
    assert!(fitted < base, "fitted {fitted} vs baseline {base}");
    assert_eq!(v["n_train"].as_u64().unwrap() + v["n_validation"].as_u64().unwrap(), 80);
    assert_eq!(v["subjects"].as_array().unwrap().len() as u64, v["n_validation"].as_u64().unwrap());
    let erde5 = v["early"]["erde5"].as_f64().unwrap();
    assert!((0.0..=1.0).contains(&erde5));
}

#[test]
fn same_inputs_same_json() {
    let a = chain_demo(&spec(11)).unwrap().to_string();
    let b = chain_demo(&spec(11)).unwrap().to_string();
    assert_eq!(a, b);
}

#[test]
fn pca_and_independent_variants_run() {
    let v = chain_demo(&DemoSpec {
        chain: false,
        pca_components: 4,
        ..spec(5)
    })
    .unwrap();
    assert!(v["fitted"]["rmse mean"].as_f64().unwrap().is_finite());
}
