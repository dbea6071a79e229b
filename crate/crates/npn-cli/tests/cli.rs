//! End-to-end tests for the `npn` binary: every subcommand, the data-format
//! inference, and the exit-code contract.

use std::path::Path;
use std::process::{Command, Output};

use npn::checkpoint::{self, ModelCheckpoint};
use npn::matrix::Matrix;
use npn::moments::ActivationKind;
use npn::network::{init_params, LayerSpec, LossKind, NetworkSpec, ParamMatrix, ParamTransform};

fn npn_cmd(dir: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_npn"))
        .current_dir(dir)
        .args(args)
        .output()
        .expect("binary runs")
}

fn assert_code(out: &Output, want: i32) {
    let got = out.status.code().expect("exit code");
    assert_eq!(
        got,
        want,
        "exit {got}, wanted {want}\nstdout:\n{}\nstderr:\n{}",
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
}

fn stdout(out: &Output) -> String {
    String::from_utf8_lossy(&out.stdout).into_owned()
}

fn stderr(out: &Output) -> String {
    String::from_utf8_lossy(&out.stderr).into_owned()
}

fn write(dir: &Path, name: &str, text: &str) {
    std::fs::write(dir.join(name), text).unwrap();
}

fn read(dir: &Path, name: &str) -> String {
    std::fs::read_to_string(dir.join(name)).unwrap()
}

const TOY_CONFIG: &str = r#"{
  "layers": [
    {"fan_in": 1, "fan_out": 8, "family": "gaussian", "activation": "relu"},
    {"fan_in": 8, "fan_out": 1, "family": "gaussian", "activation": "identity"}
  ],
  "loss": "gauss_kl",
  "epochs": 6,
  "batch_size": 5,
  "seed": 11
}"#;

#[test]
fn gen_toy_is_deterministic() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_code(&npn_cmd(d, &["gen-toy", "--n", "20", "--seed", "5", "--out", "a.csv"]), 0);
    assert_code(&npn_cmd(d, &["gen-toy", "--n", "20", "--seed", "5", "--out", "b.csv"]), 0);
    let a = read(d, "a.csv");
    assert_eq!(a, read(d, "b.csv"));
    assert!(a.starts_with("x,y\n"));
    assert_eq!(a.lines().count(), 21);
}

#[test]
fn train_eval_grid_extract_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "cfg.json", TOY_CONFIG);
    assert_code(&npn_cmd(d, &["gen-toy", "--n", "30", "--seed", "3", "--out", "toy.csv"]), 0);

    let train = npn_cmd(
        d,
        &["train", "--config", "cfg.json", "--train", "toy.csv", "--out", "model.json",
          "--metrics", "metrics.csv"],
    );
    assert_code(&train, 0);
    assert!(stdout(&train).contains("epoch 6 loss"));
    let metrics = read(d, "metrics.csv");
    assert!(metrics.starts_with("epoch,loss,reg,metric\n"));
    assert_eq!(metrics.lines().count(), 7);

    let eval = npn_cmd(d, &["eval", "--model", "model.json", "--test", "toy.csv"]);
    assert_code(&eval, 0);
    assert!(stdout(&eval).contains("test rmse"));
    assert!(stdout(&eval).contains("mean predictive std"));

    let grid = npn_cmd(
        d,
        &["predict-grid", "--model", "model.json", "--min", "-2", "--max", "2",
          "--steps", "9", "--out", "grid.csv"],
    );
    assert_code(&grid, 0);
    let grid_csv = read(d, "grid.csv");
    assert!(grid_csv.starts_with("x,mean,std\n"));
    assert_eq!(grid_csv.lines().count(), 10);

    let extract = npn_cmd(
        d,
        &["extract", "--model", "model.json", "--data", "toy.csv", "--layer", "1",
          "--out", "repr.csv"],
    );
    assert_code(&extract, 0);
    let repr = read(d, "repr.csv");
    assert!(repr.starts_with("m0,"));
    assert!(repr.lines().next().unwrap().ends_with(",s7"));
    assert_eq!(repr.lines().count(), 31);
}

#[test]
fn same_seed_runs_are_byte_identical() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(d, "cfg.json", TOY_CONFIG);
    assert_code(&npn_cmd(d, &["gen-toy", "--n", "12", "--seed", "9", "--out", "toy.csv"]), 0);
    for run in ["1", "2"] {
        let out = npn_cmd(
            d,
            &["train", "--config", "cfg.json", "--train", "toy.csv",
              "--out", &format!("model{run}.json"), "--metrics", &format!("m{run}.csv")],
        );
        assert_code(&out, 0);
    }
    assert_eq!(read(d, "m1.csv"), read(d, "m2.csv"));
    assert_eq!(read(d, "model1.json"), read(d, "model2.json"));
}

#[test]
fn zero_variance_model_predicts_zero_std() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let spec = NetworkSpec {
        layers: vec![LayerSpec {
            fan_in: 1,
            fan_out: 1,
            family: npn::expfam::FamilyTag::Gaussian,
            activation: ActivationKind::Identity,
            r: 1.0,
            tau: 1.0,
        }],
        loss: LossKind::GaussKl,
        lambda_s: 1e-4,
        epsilon: 1e-4,
    };
    let mut params = init_params(&spec, 0).unwrap();
    params[0].w_c = ParamMatrix::from_value(Matrix::filled(1, 1, 2.0), ParamTransform::Direct);
    params[0].w_d = ParamMatrix::from_value(Matrix::zeros(1, 1), ParamTransform::Softplus);
    params[0].b_c = ParamMatrix::from_value(Matrix::filled(1, 1, 0.5), ParamTransform::Direct);
    params[0].b_d = ParamMatrix::from_value(Matrix::zeros(1, 1), ParamTransform::Softplus);
    let ckpt = ModelCheckpoint::new(spec, None, params).unwrap();
    checkpoint::save_checkpoint(&d.join("flat.json"), &ckpt).unwrap();

    let grid = npn_cmd(
        d,
        &["predict-grid", "--model", "flat.json", "--min", "-1", "--max", "1",
          "--steps", "3", "--out", "grid.csv"],
    );
    assert_code(&grid, 0);
    let got = read(d, "grid.csv");
    let want = "x,mean,std\n\
                -1.00000000,-1.50000000,0.00000000\n\
                0.00000000,0.500000000,0.00000000\n\
                1.00000000,2.50000000,0.00000000\n";
    assert_eq!(got, want);
}

#[test]
fn idx_classification_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    // 4 images of 2x2 pixels; labels 0/1 chosen so class follows pixel sum.
    let mut images = vec![0u8, 0, 8, 3, 0, 0, 0, 4, 0, 0, 0, 2, 0, 0, 0, 2];
    images.extend_from_slice(&[
        10, 20, 10, 20, 200, 230, 220, 250, 5, 15, 25, 5, 240, 250, 255, 245,
    ]);
    let labels = vec![0u8, 0, 8, 1, 0, 0, 0, 4, 0, 1, 0, 1];
    std::fs::write(d.join("imgs.idx"), &images).unwrap();
    std::fs::write(d.join("labels.idx"), &labels).unwrap();
    write(
        d,
        "cfg.json",
        r#"{
          "layers": [
            {"fan_in": 4, "fan_out": 6, "family": "gaussian", "activation": "relu"},
            {"fan_in": 6, "fan_out": 2, "family": "gaussian", "activation": "sigmoid"}
          ],
          "loss": "cross_entropy",
          "epochs": 3,
          "batch_size": 2,
          "seed": 4
        }"#,
    );
    let train = npn_cmd(
        d,
        &["train", "--config", "cfg.json", "--train", "imgs.idx", "labels.idx",
          "--out", "model.json"],
    );
    assert_code(&train, 0);
    let eval = npn_cmd(
        d,
        &["eval", "--model", "model.json", "--test", "imgs.idx", "labels.idx",
          "--out", "buckets.csv"],
    );
    assert_code(&eval, 0);
    assert!(stdout(&eval).contains("test error rate"));
    let buckets = read(d, "buckets.csv");
    assert!(buckets.starts_with("bucket,var_lo,var_hi,count,correct,accuracy\n"));
    assert!(buckets.lines().count() >= 2);
}

#[test]
fn bow_autoencoder_end_to_end() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    write(
        d,
        "docs.bow",
        "0 0 3\n0 1 1\n1 2 4\n1 3 2\n2 0 1\n2 4 5\n3 1 2\n3 3 3\n",
    );
    write(
        d,
        "cfg.json",
        r#"{
          "layers": [
            {"fan_in": 5, "fan_out": 4, "family": "poisson", "activation": "exp_sat", "r": 1.0, "tau": 1.0},
            {"fan_in": 4, "fan_out": 5, "family": "poisson", "activation": "identity"}
          ],
          "loss": "poisson_nll",
          "epochs": 3,
          "batch_size": 2,
          "seed": 2
        }"#,
    );
    let train = npn_cmd(
        d,
        &["train", "--config", "cfg.json", "--train", "docs.bow", "--vocab", "5",
          "--out", "model.json"],
    );
    assert_code(&train, 0);
    let eval = npn_cmd(
        d,
        &["eval", "--model", "model.json", "--test", "docs.bow", "--vocab", "5",
          "--out", "docs.csv"],
    );
    assert_code(&eval, 0);
    assert!(stdout(&eval).contains("reconstruction rmse"));
    let docs = read(d, "docs.csv");
    assert!(docs.starts_with("doc,var_total,recon_rmse\n"));
    assert_eq!(docs.lines().count(), 5);
}

#[test]
fn verify_suite_passes_and_writes_report() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    let out = npn_cmd(d, &["verify", "--suite", "moments", "--report", "report.json"]);
    assert_code(&out, 0);
    assert!(stdout(&out).contains("[PASS]"));
    let report: serde_json::Value = serde_json::from_str(&read(d, "report.json")).unwrap();
    assert_eq!(report["suite"], "moments");
    assert_eq!(report["passed"], true);
    assert!(report["checks"].as_array().unwrap().len() >= 3);
}

#[test]
fn exit_codes_follow_the_contract() {
    let dir = tempfile::tempdir().unwrap();
    let d = dir.path();
    assert_code(&npn_cmd(d, &["--help"]), 0);
    assert_code(&npn_cmd(d, &["--version"]), 0);
    assert_code(&npn_cmd(d, &["--bogus"]), 1);
    assert_code(&npn_cmd(d, &["nonesuch"]), 1);
    assert_code(&npn_cmd(d, &["train", "--config", "nope.json"]), 1);

    // Unknown config keys are a validation failure, not a silent skip.
    write(d, "bad.json", r#"{"layers": [], "loss": "gauss_kl", "epochs": 1, "batch_size": 2, "typo": 1}"#);
    assert_code(&npn_cmd(d, &["gen-toy", "--n", "4", "--seed", "0", "--out", "t.csv"]), 0);
    let out = npn_cmd(d, &["train", "--config", "bad.json", "--train", "t.csv", "--out", "m.json"]);
    assert_code(&out, 1);
    assert!(stderr(&out).contains("typo"));
}
