// Every CLI stage in order, writing into a temporary directory.

const CONFIG: &str = r#"
seed = 5

[dataset]
source = "synthetic"
synthetic = { classes = 3, grid = [4, 6], per_class = 40, noise_std = 0.5 }
test_size = 30
labels_per_class = 4
validation_size = 6

[encoder]
hidden = [8]
representation_dim = 6
projection_dim = 4

[pretrain]
steps = 20
batch_pairs = 8

[evaluation]
prior_samples = 20
prior_draws = 500
pairs_per_group = 10

[active]
initial_labels = 15
validation_size = 6
per_round = 5
budget = 25
mc_draws = 10
seeds = [0]
"#;

fn run_example() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("config.toml");
    std::fs::write(&config, CONFIG).unwrap();
    let out = dir.path().join("out");
    for stage in ["pretrain", "eval-prior", "infer", "metrics", "active"] {
        let argv = [
            "ssbnn",
            stage,
            "--config",
            config.to_str().unwrap(),
            "--out",
            out.to_str().unwrap(),
        ];
        assert_eq!(ssbnn::cli::run_command(argv), 0, "{stage} failed");
    }
    let results = std::fs::read_to_string(out.join("results.csv")).unwrap();
    println!("results.csv has {} rows", results.lines().count() - 1);
}

fn main() {
    run_example();
}
