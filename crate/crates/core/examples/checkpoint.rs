// Saves and reloads an encoder checkpoint.

use ssbnn::model::{checkpoint_load, checkpoint_save, EncoderConfig, ModelParams};

fn run_example() {
    let config = EncoderConfig {
        hidden: vec![6],
        representation_dim: 4,
        projection_dim: 2,
        ..EncoderConfig::new(5)
    };
    let params = ModelParams::init(&config, 3).unwrap();
    let dir = tempfile::tempdir().unwrap();
    let path = dir.path().join("model.ssbnn");
    checkpoint_save(&path, &params, serde_json::json!({ "note": "example" }), 3, 0).unwrap();
    println!("wrote {} bytes", std::fs::metadata(&path).unwrap().len());

    let loaded = checkpoint_load(&path).unwrap();
    assert_eq!(loaded.params, params);
    println!("seed {} step {} configs {}", loaded.seed, loaded.step, loaded.configs);
    println!("{} parameters restored", loaded.params.parameter_count());
}

fn main() {
    run_example();
}
