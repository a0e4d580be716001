use claimcast::featurize::{FeatureMode, FeatureRow, LabeledMatrix};
use claimcast::model::{gradient_check, gradient_check_at, predict, predict_batch, train, Architecture, ModelConfig, Network};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn random_matrix(seed: u64, rows: usize, width: usize) -> LabeledMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let rows: Vec<FeatureRow> = (0..rows)
        .map(|i| {
            let features: Vec<f64> = (0..width).map(|_| rng.random_range(-1.5..1.5)).collect();
            let label = u8::from(features[0] + 0.5 * features[1 % width] + rng.random_range(-0.5..0.5) > 0.0);
            FeatureRow {
                patient_id: i as u64,
                index_day: 0,
                features,
                label,
            }
        })
        .collect();
    let mut m = LabeledMatrix {
        rows,
        feature_names: (0..width).map(|j| format!("f{j}")).collect(),
        mode: FeatureMode::Bucketed,
        normalization: None,
    };
    // both classes present
    m.rows[0].label = 0;
    m.rows[1].label = 1;
    m
}

fn no_dropout(architecture: Architecture, hidden: Vec<usize>) -> ModelConfig {
    ModelConfig {
        architecture,
        hidden_layers: hidden,
        dropout: 0.0,
        l2: 1e-3,
        seed: 3,
        ..ModelConfig::default()
    }
}

#[test]
fn logistic_gradients_match_central_differences() {
    let sample = random_matrix(1, 10, 5);
    // zero init and a trained point
    let cfg = no_dropout(Architecture::Logistic, vec![]);
    let err = gradient_check(&cfg, &sample, 1e-5).unwrap();
    assert!(err < 1e-6, "{err}");

    let model = train(&sample, &ModelConfig { epochs: 20, batch_size: 3, ..cfg.clone() }).unwrap();
    let (x, y) = design(&sample);
    let err = gradient_check_at(&model.network, x.view(), &y, cfg.l2, 1e-5);
    assert!(err < 1e-6, "{err}");
}

#[test]
fn mlp_gradients_match_central_differences() {
    let sample = random_matrix(2, 10, 6);
    let cfg = no_dropout(Architecture::Mlp, vec![8, 4]);
    let err = gradient_check(&cfg, &sample, 1e-5).unwrap();
    assert!(err < 1e-4, "{err}");
}

#[test]
fn gradient_check_rejects_bad_epsilon() {
    let sample = random_matrix(2, 10, 3);
    let cfg = no_dropout(Architecture::Logistic, vec![]);
    assert!(gradient_check(&cfg, &sample, 1e-2).is_err());
    assert!(gradient_check(&cfg, &sample, 1e-9).is_err());
}

fn design(m: &LabeledMatrix) -> (Array2<f64>, Vec<f64>) {
    let flat: Vec<f64> = m.rows.iter().flat_map(|r| r.features.iter().copied()).collect();
    let x = Array2::from_shape_vec((m.len(), m.width()), flat).unwrap();
    (x, m.rows.iter().map(|r| f64::from(r.label)).collect())
}

#[test]
fn bias_gradient_equals_mean_sigmoid_at_zero() {
    let mut sample = random_matrix(4, 12, 3);
    for r in &mut sample.rows {
        r.label = 0;
    }
    let net = Network::init(&no_dropout(Architecture::Logistic, vec![]), 3);
    let (x, y) = design(&sample);
    let (_, g) = net.loss_and_gradient(x.view(), &y, 0.0, None);
    assert_eq!(g.layers[0].bias[0], 0.5);
}

#[test]
fn batch_prediction_equals_row_prediction() {
    let train_m = random_matrix(5, 200, 8);
    let model = train(&train_m, &ModelConfig { epochs: 5, ..ModelConfig::default() }).unwrap();
    let probe = random_matrix(6, 100, 8);
    let batch = predict_batch(&model, probe.rows.iter().map(|r| r.features.as_slice())).unwrap();
    for (r, p) in probe.rows.iter().zip(batch) {
        let single = predict(&model, &r.features).unwrap();
        assert_eq!(single.to_bits(), p.to_bits());
        assert!((0.0..=1.0).contains(&single));
    }
}

#[test]
fn logistic_output_is_monotone_in_positively_weighted_feature() {
    let m = random_matrix(7, 300, 4);
    let model = train(&m, &ModelConfig { epochs: 50, ..no_dropout(Architecture::Logistic, vec![]) }).unwrap();
    let w0 = model.network.layers[0].weights[[0, 0]];
    assert!(w0 > 0.0, "feature 0 drives the label, weight {w0}");
    let mut x = vec![0.2, -0.1, 0.4, 0.0];
    let mut last = predict(&model, &x).unwrap();
    for _ in 0..10 {
        x[0] += 0.3;
        let p = predict(&model, &x).unwrap();
        assert!(p > last);
        last = p;
    }
}

#[test]
fn training_is_deterministic_and_row_order_free() {
    let m = random_matrix(8, 150, 5);
    let cfg = ModelConfig {
        hidden_layers: vec![6, 3],
        epochs: 8,
        batch_size: 16,
        ..ModelConfig::default()
    };
    let a = train(&m, &cfg).unwrap();
    let b = train(&m, &cfg).unwrap();
    assert_eq!(a, b);

    let mut shuffled = m.clone();
    shuffled.rows.reverse();
    shuffled.rows.swap(3, 40);
    let c = train(&shuffled, &cfg).unwrap();
    let probe = random_matrix(9, 50, 5);
    for r in &probe.rows {
        assert_eq!(
            predict(&a, &r.features).unwrap().to_bits(),
            predict(&c, &r.features).unwrap().to_bits()
        );
    }
}

#[test]
fn dropout_changes_the_trajectory_but_not_inference() {
    let m = random_matrix(10, 120, 5);
    let base = ModelConfig {
        hidden_layers: vec![8],
        epochs: 5,
        ..ModelConfig::default()
    };
    let with = train(&m, &ModelConfig { dropout: 0.5, ..base.clone() }).unwrap();
    let without = train(&m, &ModelConfig { dropout: 0.0, ..base }).unwrap();
    assert_ne!(with.network, without.network);
    // inference is deterministic with dropout disabled
    let x = &m.rows[0].features;
    assert_eq!(predict(&with, x).unwrap(), predict(&with, x).unwrap());
}

#[test]
fn model_file_round_trip() {
    let m = random_matrix(11, 80, 4);
    let model = train(&m, &ModelConfig { epochs: 3, ..ModelConfig::default() }).unwrap();
    let dir = tempfile::TempDir::new().unwrap();
    let path = dir.path().join("model.json");
    model.save(&path).unwrap();
    let back = claimcast::TrainedModel::load(&path).unwrap();
    assert_eq!(back, model);
    let text = std::fs::read_to_string(&path).unwrap();
    let v: serde_json::Value = serde_json::from_str(&text).unwrap();
    assert_eq!(v["format_version"], 1);
    assert_eq!(v["layers"][0]["inputs"], 4);
    assert_eq!(v["layers"][0]["weights"].as_array().unwrap().len(), 4 * 64);

    let broken = text.replace("\"format_version\": 1", "\"format_version\": 9");
    assert!(claimcast::TrainedModel::from_json(&broken).is_err());
}
