use votecal::io::{load_model, read_dataset, save_model, write_dataset};
use votecal::model::{forward, Activation, DropoutMode, NetworkParams, NetworkSpec};
use votecal::synth::{generate, GeneratorConfig};

#[test]
fn model_round_trips_bit_exactly() {
    let spec = NetworkSpec {
        input_dim: 7,
        hidden_dims: vec![13, 5],
        class_count: 4,
        dropout_rate: 0.3,
        activation: Activation::Relu,
    };
    let mut params = NetworkParams::init(&spec, 99).unwrap();
    for (i, v) in params.values_mut().enumerate() {
        *v += (i as f64).sin() * 1e-7 + 1.0 / 3.0;
    }
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &params, 17).unwrap();
    let (loaded, seed) = load_model(&path).unwrap();
    assert_eq!(seed, 17);
    assert_eq!(loaded.spec, params.spec);
    let bits = |p: &NetworkParams| p.values().map(|v| v.to_bits()).collect::<Vec<_>>();
    assert_eq!(bits(&loaded), bits(&params));
    let x = [0.1, -2.0, 3.5, 0.0, 1e-3, 7.0, -0.25];
    assert_eq!(
        forward(&loaded, &x, DropoutMode::Off).unwrap(),
        forward(&params, &x, DropoutMode::Off).unwrap()
    );
}

#[test]
fn dataset_round_trips() {
    let mut config = GeneratorConfig::balanced(4, 3, &["north", "south"], 5);
    config.group_shift = 0.7;
    config.seed = 5;
    let data = generate(&config).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(dir.path(), &data).unwrap();
    let back = read_dataset(dir.path(), 4).unwrap();
    assert_eq!(back, data);
    assert_eq!(back.digest(), data.digest());
}

#[test]
fn corrupted_model_is_rejected() {
    let spec = NetworkSpec {
        input_dim: 2,
        hidden_dims: vec![3],
        class_count: 2,
        dropout_rate: 0.2,
        activation: Activation::Relu,
    };
    let params = NetworkParams::init(&spec, 1).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.json");
    save_model(&path, &params, 1).unwrap();
    let text = std::fs::read_to_string(&path).unwrap();
    std::fs::write(&path, text.replace("\"input_dim\": 2", "\"input_dim\": 3")).unwrap();
    assert!(load_model(&path).is_err());
}
