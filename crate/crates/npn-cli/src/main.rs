//! `npn`: train, evaluate and inspect distribution-propagating networks
//! from the command line. Exit codes: 0 success, 1 validation or usage
//! failure, 2 verification-suite failure.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Deserialize;
use std::path::PathBuf;
use std::process::ExitCode;

use npn::checkpoint::{self, ModelCheckpoint};
use npn::data::{self, BowNorm, DatasetKind};
use npn::emit::{emit_table, Cell, TableFormat};
use npn::error::{NpnError, Result};
use npn::expfam::MomentPair;
use npn::matrix::Matrix;
use npn::network::{self, LayerSpec, LossKind, NetworkSpec};
use npn::train::{self, Dataset, OptimizerKind, TrainConfig, DEFAULT_BUCKET_WIDTH};
use npn::verify::{run_suite, SuiteKind};

#[derive(Parser)]
#[command(
    name = "npn",
    version,
    about = "Distribution-propagating neural networks: closed-form uncertainty in, closed-form uncertainty out"
)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train a model described by a JSON config and save a checkpoint
    Train(TrainArgs),
    /// Evaluate a saved model on a test set
    Eval(EvalArgs),
    /// Tabulate the 1-D predictive band (x, mean, std) of a regression model
    PredictGrid(PredictGridArgs),
    /// Export a layer's mean/variance representation for each input row
    Extract(ExtractArgs),
    /// Run the self-verification suites against the built-in oracles
    Verify(VerifyArgs),
    /// Generate the cubic toy regression set y = x^3 + noise
    GenToy(GenToyArgs),
}

/// How data paths are interpreted: two paths are an IDX image/label pair
/// (classification), a single .csv is a regression table with the target
/// in the last column, anything else is a bag-of-words triplet file
/// (autoencoder).
#[derive(Args)]
struct DataOpts {
    /// Vocabulary size for bag-of-words files; term ids at or beyond it are rejected
    #[arg(long)]
    vocab: Option<usize>,
    /// Per-document normalization for bag-of-words counts
    #[arg(long, value_enum, default_value_t = BowNormArg::Max)]
    bow_norm: BowNormArg,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum BowNormArg {
    /// Divide each document by its largest count
    Max,
    /// Keep raw counts
    None,
}

impl From<BowNormArg> for BowNorm {
    fn from(v: BowNormArg) -> Self {
        match v {
            BowNormArg::Max => BowNorm::Max,
            BowNormArg::None => BowNorm::None,
        }
    }
}

#[derive(Args)]
struct TrainArgs {
    /// JSON config: layers, loss, optimizer, epochs, batch_size, ...
    #[arg(long)]
    config: PathBuf,
    /// Training data (1 path, or 2 for an IDX image/label pair)
    #[arg(long, num_args = 1..=2, required = true)]
    train: Vec<PathBuf>,
    /// Where to save the trained model checkpoint
    #[arg(long)]
    out: PathBuf,
    /// Optional per-epoch metrics CSV (epoch, loss, reg, metric)
    #[arg(long)]
    metrics: Option<PathBuf>,
    #[command(flatten)]
    data_opts: DataOpts,
}

#[derive(Args)]
struct EvalArgs {
    /// Model checkpoint to evaluate
    #[arg(long)]
    model: PathBuf,
    /// Test data (1 path, or 2 for an IDX image/label pair)
    #[arg(long, num_args = 1..=2, required = true)]
    test: Vec<PathBuf>,
    /// Output-variance bucket width for classification calibration
    #[arg(long, default_value_t = DEFAULT_BUCKET_WIDTH)]
    buckets: f64,
    /// Per-bucket accuracy CSV (classification) or per-document CSV (autoencoder)
    #[arg(long)]
    out: Option<PathBuf>,
    #[command(flatten)]
    data_opts: DataOpts,
}

#[derive(Args)]
struct PredictGridArgs {
    /// Model checkpoint (gauss_kl loss, 1-D input)
    #[arg(long)]
    model: PathBuf,
    /// Grid start
    #[arg(long, default_value_t = -6.0, allow_negative_numbers = true)]
    min: f64,
    /// Grid end
    #[arg(long, default_value_t = 6.0, allow_negative_numbers = true)]
    max: f64,
    /// Number of grid points (at least 2)
    #[arg(long, default_value_t = 121)]
    steps: usize,
    /// Output CSV with columns x, mean, std
    #[arg(long)]
    out: PathBuf,
}

#[derive(Args)]
struct ExtractArgs {
    /// Model checkpoint
    #[arg(long)]
    model: PathBuf,
    /// Input data (1 path, or 2 for an IDX image/label pair)
    #[arg(long, num_args = 1..=2, required = true)]
    data: Vec<PathBuf>,
    /// 1-based layer whose activations to export
    #[arg(long)]
    layer: usize,
    /// Output CSV: per row, layer means then layer variances
    #[arg(long)]
    out: PathBuf,
    #[command(flatten)]
    data_opts: DataOpts,
}

#[derive(Args)]
struct VerifyArgs {
    /// Which suite to run
    #[arg(long, default_value = "all")]
    suite: SuiteKind,
    /// Optional JSON report path
    #[arg(long)]
    report: Option<PathBuf>,
}

#[derive(Args)]
struct GenToyArgs {
    /// Number of points
    #[arg(long, default_value_t = 20)]
    n: usize,
    /// RNG seed
    #[arg(long, default_value_t = 0)]
    seed: u64,
    /// Output CSV with columns x, y
    #[arg(long)]
    out: PathBuf,
}

/// The training config file. Architecture and optimization settings live in
/// one document; unknown keys are rejected so typos fail loudly.
#[derive(Deserialize)]
#[serde(deny_unknown_fields)]
struct ConfigFile {
    layers: Vec<LayerSpec>,
    loss: LossKind,
    #[serde(default = "default_reg")]
    lambda_s: f64,
    #[serde(default = "default_reg")]
    epsilon: f64,
    #[serde(default)]
    optimizer: OptimizerKind,
    epochs: usize,
    batch_size: usize,
    #[serde(default, alias = "dropout_rate")]
    dropout: f64,
    #[serde(default)]
    seed: u64,
    #[serde(default = "default_eval_every")]
    eval_every: usize,
    #[serde(default = "default_grad_clip")]
    grad_clip: Option<f64>,
}

fn default_reg() -> f64 {
    1e-4
}
fn default_eval_every() -> usize {
    10
}
fn default_grad_clip() -> Option<f64> {
    Some(10.0)
}

impl ConfigFile {
    fn split(self) -> (NetworkSpec, TrainConfig) {
        let spec = NetworkSpec {
            layers: self.layers,
            loss: self.loss,
            lambda_s: self.lambda_s,
            epsilon: self.epsilon,
        };
        let config = TrainConfig {
            epochs: self.epochs,
            batch_size: self.batch_size,
            optimizer: self.optimizer,
            lambda_s: self.lambda_s,
            epsilon: self.epsilon,
            dropout_rate: self.dropout,
            seed: self.seed,
            eval_every: self.eval_every,
            grad_clip: self.grad_clip,
        };
        (spec, config)
    }
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = match e.kind() {
                ErrorKind::DisplayHelp | ErrorKind::DisplayVersion => 0,
                _ => 1,
            };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Train(args) => cmd_train(args),
        Cmd::Eval(args) => cmd_eval(args),
        Cmd::PredictGrid(args) => cmd_predict_grid(args),
        Cmd::Extract(args) => cmd_extract(args),
        Cmd::Verify(args) => cmd_verify(args),
        Cmd::GenToy(args) => cmd_gen_toy(args),
    }
}

fn load_data(paths: &[PathBuf], opts: &DataOpts) -> Result<(Dataset, DatasetKind)> {
    match paths {
        [images, labels] => Ok((data::read_idx(images, labels)?, DatasetKind::Classification)),
        [single] => {
            let is_csv = single
                .extension()
                .is_some_and(|e| e.eq_ignore_ascii_case("csv"));
            if is_csv {
                Ok((data::read_csv_regression(single)?, DatasetKind::Regression))
            } else {
                let corpus = data::read_bow(single, opts.vocab, opts.bow_norm.into())?;
                if corpus.dropped > 0 {
                    eprintln!("warning: dropped {} empty document(s)", corpus.dropped);
                }
                Ok((corpus.data, DatasetKind::Autoencoder))
            }
        }
        other => Err(NpnError::Config(format!(
            "expected 1 or 2 data paths, got {}",
            other.len()
        ))),
    }
}

fn metric_cell(metric: Option<f64>) -> Cell {
    match metric {
        Some(v) => Cell::Float(v),
        None => Cell::Str(String::new()),
    }
}

fn cmd_train(args: TrainArgs) -> Result<ExitCode> {
    let text = std::fs::read_to_string(&args.config)
        .map_err(|e| NpnError::Config(format!("{}: {e}", args.config.display())))?;
    let cfg: ConfigFile = serde_json::from_str(&text)
        .map_err(|e| NpnError::parse(args.config.display().to_string(), e.to_string()))?;
    let (spec, config) = cfg.split();
    spec.validate()?;
    config.validate()?;
    let (dataset, _) = load_data(&args.train, &args.data_opts)?;
    let (params, metrics) = train::train_loop(&spec, &dataset, &config, None, |m| {
        match m.metric {
            Some(v) => println!(
                "epoch {} loss {:.6} reg {:.6} metric {:.6} ({:.2}s)",
                m.epoch, m.loss, m.reg, v, m.seconds
            ),
            None => println!(
                "epoch {} loss {:.6} reg {:.6} ({:.2}s)",
                m.epoch, m.loss, m.reg, m.seconds
            ),
        }
    })?;
    let ckpt = ModelCheckpoint::new(spec, Some(config), params)?;
    checkpoint::save_checkpoint(&args.out, &ckpt)?;
    println!("saved model to {}", args.out.display());
    if let Some(mpath) = &args.metrics {
        // No wall-clock column: metrics files must be identical across
        // identically seeded runs.
        let rows: Vec<Vec<Cell>> = metrics
            .iter()
            .map(|m| {
                vec![
                    Cell::from(m.epoch),
                    Cell::Float(m.loss),
                    Cell::Float(m.reg),
                    metric_cell(m.metric),
                ]
            })
            .collect();
        emit_table(
            mpath,
            &["epoch", "loss", "reg", "metric"],
            &rows,
            TableFormat::Csv,
        )?;
        println!("wrote {} metric rows to {}", rows.len(), mpath.display());
    }
    Ok(ExitCode::SUCCESS)
}

/// Per-document reconstruction RMSE and total output variance. The mean is
/// the loss head's predictive mean (the fitted rate for Poisson outputs);
/// the variance is the propagated output variance, which the rate fit would
/// otherwise collapse into the mean.
fn autoencoder_rows(
    spec: &NetworkSpec,
    params: &[npn::network::LayerParams],
    data: &Dataset,
) -> Result<(f64, Vec<Vec<Cell>>)> {
    let chunk = 2048;
    let cols = data.x.cols();
    let mut rows = Vec::with_capacity(data.len());
    let mut sq_total = 0.0;
    for lo in (0..data.len()).step_by(chunk) {
        let hi = (lo + chunk).min(data.len());
        let x = MomentPair::new(data.x.slice_rows(lo, hi), Matrix::zeros(hi - lo, cols));
        let fp = network::forward(spec, params, &x, None)?;
        let last = fp.last();
        let mean = match spec.loss {
            LossKind::CrossEntropy => &last.act_mean,
            _ => &last.nat_c,
        };
        for i in 0..(hi - lo) {
            let mut sq = 0.0;
            let mut var_total = 0.0;
            for j in 0..cols {
                let d = mean.at(i, j) - data.y.at(lo + i, j);
                sq += d * d;
                var_total += last.act_var.at(i, j).max(0.0);
            }
            sq_total += sq;
            rows.push(vec![
                Cell::from(lo + i),
                Cell::Float(var_total),
                Cell::Float((sq / cols as f64).sqrt()),
            ]);
        }
    }
    let rmse = (sq_total / (data.len() * cols) as f64).sqrt();
    Ok((rmse, rows))
}

fn cmd_eval(args: EvalArgs) -> Result<ExitCode> {
    let ckpt = checkpoint::load_checkpoint(&args.model)?;
    let (dataset, kind) = load_data(&args.test, &args.data_opts)?;
    match kind {
        DatasetKind::Classification => {
            let eval =
                train::eval_classification(&ckpt.spec, &ckpt.params, &dataset, args.buckets)?;
            println!(
                "test error rate {:.6} over {} items",
                eval.error_rate,
                dataset.len()
            );
            if let Some(out) = &args.out {
                let rows: Vec<Vec<Cell>> = eval
                    .buckets
                    .iter()
                    .map(|b| {
                        vec![
                            Cell::from(b.bucket),
                            Cell::Float((b.bucket as f64 - 1.0) * args.buckets),
                            Cell::Float(b.bucket as f64 * args.buckets),
                            Cell::from(b.count),
                            Cell::from(b.correct),
                            Cell::Float(b.accuracy),
                        ]
                    })
                    .collect();
                emit_table(
                    out,
                    &["bucket", "var_lo", "var_hi", "count", "correct", "accuracy"],
                    &rows,
                    TableFormat::Csv,
                )?;
                println!("wrote {} bucket rows to {}", rows.len(), out.display());
            }
        }
        DatasetKind::Regression => {
            if args.out.is_some() {
                return Err(NpnError::Config(
                    "--out writes variance buckets or per-document tables, \
                     which need a classification or autoencoder test set"
                        .to_string(),
                ));
            }
            let (rmse, mean_std) = train::eval_regression(&ckpt.spec, &ckpt.params, &dataset)?;
            println!("test rmse {rmse:.6} mean predictive std {mean_std:.6}");
        }
        DatasetKind::Autoencoder => {
            let (rmse, rows) = autoencoder_rows(&ckpt.spec, &ckpt.params, &dataset)?;
            println!("reconstruction rmse {rmse:.6} over {} documents", rows.len());
            if let Some(out) = &args.out {
                emit_table(
                    out,
                    &["doc", "var_total", "recon_rmse"],
                    &rows,
                    TableFormat::Csv,
                )?;
                println!("wrote {} document rows to {}", rows.len(), out.display());
            }
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn cmd_predict_grid(args: PredictGridArgs) -> Result<ExitCode> {
    let ckpt = checkpoint::load_checkpoint(&args.model)?;
    if ckpt.spec.loss != LossKind::GaussKl {
        return Err(NpnError::Config(
            "predict-grid reports a Gaussian predictive band and needs a gauss_kl model"
                .to_string(),
        ));
    }
    if ckpt.spec.in_dim() != 1 {
        return Err(NpnError::Config(format!(
            "predict-grid needs a 1-D input model, this one takes {} features",
            ckpt.spec.in_dim()
        )));
    }
    if args.steps < 2 {
        return Err(NpnError::Config("--steps must be at least 2".to_string()));
    }
    if !(args.max > args.min) {
        return Err(NpnError::Config(format!(
            "--max must exceed --min, got [{}, {}]",
            args.min, args.max
        )));
    }
    let step = (args.max - args.min) / (args.steps - 1) as f64;
    let xs: Vec<f64> = (0..args.steps).map(|i| args.min + step * i as f64).collect();
    let x = MomentPair::new(
        Matrix::from_vec(args.steps, 1, xs.clone()),
        Matrix::zeros(args.steps, 1),
    );
    let p = network::predict(&ckpt.spec, &ckpt.params, &x)?;
    let rows: Vec<Vec<Cell>> = xs
        .iter()
        .enumerate()
        .map(|(i, &xv)| {
            vec![
                Cell::Float(xv),
                Cell::Float(p.m.at(i, 0)),
                Cell::Float(p.s.at(i, 0).max(0.0).sqrt()),
            ]
        })
        .collect();
    emit_table(&args.out, &["x", "mean", "std"], &rows, TableFormat::Csv)?;
    println!("wrote {} grid rows to {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}

fn cmd_extract(args: ExtractArgs) -> Result<ExitCode> {
    let ckpt = checkpoint::load_checkpoint(&args.model)?;
    let (dataset, _) = load_data(&args.data, &args.data_opts)?;
    let n_layers = ckpt.spec.layers.len();
    if args.layer < 1 || args.layer > n_layers {
        return Err(NpnError::Config(format!(
            "--layer must be in 1..={n_layers}, got {}",
            args.layer
        )));
    }
    let li = args.layer - 1;
    let width = ckpt.spec.layers[li].fan_out;
    let names: Vec<String> = (0..width)
        .map(|j| format!("m{j}"))
        .chain((0..width).map(|j| format!("s{j}")))
        .collect();
    let columns: Vec<&str> = names.iter().map(String::as_str).collect();
    let chunk = 2048;
    let cols = dataset.x.cols();
    let mut rows = Vec::with_capacity(dataset.len());
    for lo in (0..dataset.len()).step_by(chunk) {
        let hi = (lo + chunk).min(dataset.len());
        let x = MomentPair::new(dataset.x.slice_rows(lo, hi), Matrix::zeros(hi - lo, cols));
        let fp = network::forward(&ckpt.spec, &ckpt.params, &x, None)?;
        let cache = &fp.caches[li];
        for i in 0..(hi - lo) {
            let mut row = Vec::with_capacity(2 * width);
            for j in 0..width {
                row.push(Cell::Float(cache.act_mean.at(i, j)));
            }
            for j in 0..width {
                row.push(Cell::Float(cache.act_var.at(i, j).max(0.0)));
            }
            rows.push(row);
        }
    }
    emit_table(&args.out, &columns, &rows, TableFormat::Csv)?;
    println!(
        "wrote {} rows of width {} to {}",
        rows.len(),
        2 * width,
        args.out.display()
    );
    Ok(ExitCode::SUCCESS)
}

fn cmd_verify(args: VerifyArgs) -> Result<ExitCode> {
    let report = run_suite(args.suite);
    for c in &report.checks {
        println!(
            "[{}] {}: {}",
            if c.passed { "PASS" } else { "FAIL" },
            c.name,
            c.detail
        );
    }
    println!(
        "suite {}: {}",
        report.suite,
        if report.passed { "pass" } else { "FAIL" }
    );
    if let Some(path) = &args.report {
        let mut text = serde_json::to_string_pretty(&report)?;
        text.push('\n');
        std::fs::write(path, text)?;
        println!("wrote report to {}", path.display());
    }
    Ok(if report.passed {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(2)
    })
}

fn cmd_gen_toy(args: GenToyArgs) -> Result<ExitCode> {
    if args.n == 0 {
        return Err(NpnError::Config("--n must be at least 1".to_string()));
    }
    let ds = data::gen_toy_regression(args.n, args.seed);
    let rows: Vec<Vec<Cell>> = (0..ds.len())
        .map(|i| vec![Cell::Float(ds.x.at(i, 0)), Cell::Float(ds.y.at(i, 0))])
        .collect();
    emit_table(&args.out, &["x", "y"], &rows, TableFormat::Csv)?;
    println!("wrote {} rows to {}", rows.len(), args.out.display());
    Ok(ExitCode::SUCCESS)
}
