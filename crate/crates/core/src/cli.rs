//! Command-line front end.
//!
//! Exit status: 0 on success, 1 for data or validation errors, 2 for usage
//! errors.

use std::ffi::OsString;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand, ValueEnum};
use serde::Serialize;

use crate::calibration::{calibrate, Method, RankOption, RankOverrides};
use crate::error::Error;
use crate::io;
use crate::metrics::{
    evaluate, rank_frequency, sigma_condition, theorem2_check, EfficiencyCheck, RankFrequency, SigmaEntry,
};
use crate::prediction::predict;
use crate::scores::{ScoreConfig, ScoreKind};
use crate::synthgen::{
    decay_counts, draw_replication, oracle_coverage, DecayKind, DecaySpec, SyntheticWorld,
};

#[derive(Debug, Parser)]
#[command(
    name = "conformal-sets",
    version,
    about = "Class-conditional conformal prediction sets"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Fit thresholds on a calibration split.
    Calibrate(CalibrateArgs),
    /// Build prediction sets for test rows.
    Predict(PredictArgs),
    /// Coverage and set-size metrics for a set file.
    Evaluate(EvaluateArgs),
    /// Condition numbers, the efficiency check and rank frequencies.
    Diagnose(DiagnoseArgs),
    /// Generate a synthetic calibration/test split.
    Synth(SynthArgs),
    /// Monte-Carlo coverage over repeated synthetic draws.
    VerifyCoverage(VerifyArgs),
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum ScoreArg {
    Aps,
    Raps,
    Hps,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MethodArg {
    Marginal,
    Ccp,
    Rc3p,
}

impl From<MethodArg> for Method {
    fn from(m: MethodArg) -> Self {
        match m {
            MethodArg::Marginal => Method::Marginal,
            MethodArg::Ccp => Method::Ccp,
            MethodArg::Rc3p => Method::Rc3p,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum DecayArg {
    Exp,
    Poly,
    Maj,
}

impl From<DecayArg> for DecayKind {
    fn from(d: DecayArg) -> Self {
        match d {
            DecayArg::Exp => DecayKind::Exp,
            DecayArg::Poly => DecayKind::Poly,
            DecayArg::Maj => DecayKind::Maj,
        }
    }
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum MatrixFormat {
    Csv,
    Rcm,
}

#[derive(Debug, Args)]
struct ScoreOpts {
    #[arg(long, value_enum)]
    score: ScoreArg,
    /// RAPS penalty weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// RAPS penalty-free rank.
    #[arg(long)]
    kreg: Option<usize>,
    /// Fix the tie-breaking draw at 1 instead of randomizing.
    #[arg(long)]
    no_randomize: bool,
    #[arg(long)]
    seed: u64,
}

impl ScoreOpts {
    fn config(&self) -> Result<ScoreConfig, CliError> {
        let mut cfg = match self.score {
            ScoreArg::Aps => ScoreConfig::aps(self.seed),
            ScoreArg::Hps => ScoreConfig {
                seed: self.seed,
                ..ScoreConfig::hps()
            },
            ScoreArg::Raps => match (self.lambda, self.kreg) {
                (Some(l), Some(k)) => ScoreConfig::raps(l, k, self.seed),
                _ => {
                    return Err(CliError::Usage(
                        "--score raps requires --lambda and --kreg".into(),
                    ))
                }
            },
        };
        if cfg.kind != ScoreKind::Raps && (self.lambda.is_some() || self.kreg.is_some()) {
            return Err(CliError::Usage(
                "--lambda and --kreg only apply to --score raps".into(),
            ));
        }
        if self.no_randomize {
            cfg.randomize = false;
        }
        Ok(cfg)
    }
}

#[derive(Debug, Args)]
struct CalibrateArgs {
    #[arg(long)]
    probs: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[command(flatten)]
    score: ScoreOpts,
    #[arg(long, value_enum)]
    method: MethodArg,
    /// Rank configuration for rc3p: 1 = caller-supplied feasible point,
    /// 2 = smallest feasible rank.
    #[arg(long, default_value_t = 2, value_parser = clap::value_parser!(u8).range(1..=2))]
    option: u8,
    /// Option 1: comma-separated per-class rank cutoffs.
    #[arg(long, value_delimiter = ',')]
    k_hat: Option<Vec<usize>>,
    /// Option 1: comma-separated per-class nominal miscoverage levels.
    #[arg(long, value_delimiter = ',')]
    alpha_hat: Option<Vec<f64>>,
    /// Coverage inflation coefficient: levels become 1 - alpha + g/sqrt(n_y).
    #[arg(long, default_value_t = 0.0)]
    g: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct PredictArgs {
    #[arg(long)]
    model: PathBuf,
    #[arg(long)]
    probs: PathBuf,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug, Args)]
struct EvaluateArgs {
    #[arg(long)]
    sets: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    alpha: f64,
    #[arg(long)]
    classes: usize,
    #[arg(long)]
    out: PathBuf,
    #[arg(long)]
    csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct DiagnoseArgs {
    #[arg(long)]
    rc3p: PathBuf,
    #[arg(long)]
    ccp: PathBuf,
    #[arg(long)]
    probs: PathBuf,
    #[arg(long)]
    labels: PathBuf,
    #[arg(long)]
    out: PathBuf,
    /// Plot-ready label-rank frequencies of both methods.
    #[arg(long)]
    rank_csv: Option<PathBuf>,
    /// Plot-ready per-class condition numbers.
    #[arg(long)]
    sigma_csv: Option<PathBuf>,
}

#[derive(Debug, Args)]
struct WorldOpts {
    #[arg(long)]
    classes: usize,
    /// Training-set imbalance profile; shapes class priors and per-class
    /// classifier sharpness.
    #[arg(long, value_enum)]
    decay: Option<DecayArg>,
    #[arg(long)]
    rho: Option<f64>,
    #[arg(long)]
    n_train: Option<usize>,
    /// Calibration examples per class.
    #[arg(long)]
    n_cal: usize,
    /// Test examples per class.
    #[arg(long)]
    n_test: usize,
    #[arg(long)]
    temperature: f64,
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
}

impl WorldOpts {
    fn world(&self, seed: u64) -> Result<SyntheticWorld, CliError> {
        let world = SyntheticWorld::balanced(self.classes, self.temperature, self.noise, seed);
        let world = match (self.decay, self.rho, self.n_train) {
            (None, None, None) => world,
            (Some(kind), Some(rho), Some(n_train)) => {
                let counts = decay_counts(&DecaySpec {
                    kind: kind.into(),
                    rho,
                    n_train,
                    n_classes: self.classes,
                })?;
                world.with_training_counts(&counts)?
            }
            _ => {
                return Err(CliError::Usage(
                    "--decay, --rho and --n-train must be given together".into(),
                ))
            }
        };
        world.validate()?;
        Ok(world)
    }
}

#[derive(Debug, Args)]
struct SynthArgs {
    #[command(flatten)]
    world: WorldOpts,
    #[arg(long)]
    seed: u64,
    #[arg(long)]
    out_dir: PathBuf,
    #[arg(long, value_enum, default_value = "csv")]
    format: MatrixFormat,
}

#[derive(Debug, Args)]
struct VerifyArgs {
    #[arg(long)]
    replications: usize,
    #[command(flatten)]
    world: WorldOpts,
    #[arg(long, value_enum)]
    method: MethodArg,
    #[command(flatten)]
    score: ScoreOpts,
    #[arg(long)]
    alpha: f64,
    #[arg(long, default_value_t = 0.0)]
    g: f64,
    #[arg(long)]
    out: PathBuf,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Data(Error),
}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Data(e)
    }
}

#[derive(Serialize)]
struct RankFreqPair {
    ccp: RankFrequency,
    rc3p: RankFrequency,
}

#[derive(Serialize)]
struct Diagnosis {
    sigma: Vec<SigmaEntry>,
    thm2: Option<Vec<EfficiencyCheck>>,
    rank_freq: RankFreqPair,
}

#[derive(Serialize)]
struct SynthManifest<'a> {
    world: &'a SyntheticWorld,
    training_counts: Option<Vec<usize>>,
    cal_probs: String,
    cal_labels: String,
    test_probs: String,
    test_labels: String,
}

fn file_name(p: &Path) -> String {
    p.file_name()
        .map(|n| n.to_string_lossy().into_owned())
        .unwrap_or_default()
}

fn run_calibrate(a: &CalibrateArgs) -> Result<(), CliError> {
    let cfg = a.score.config()?;
    let method: Method = a.method.into();
    let option = if a.option == 1 {
        RankOption::I
    } else {
        RankOption::II
    };
    let overrides = RankOverrides {
        k_hat: a.k_hat.clone(),
        alpha_hat: a.alpha_hat.clone(),
    };
    if !overrides.is_empty() && !(method == Method::Rc3p && option == RankOption::I) {
        return Err(CliError::Usage(
            "--k-hat/--alpha-hat require --method rc3p --option 1".into(),
        ));
    }
    let probs = io::read_probability_matrix(&a.probs)?;
    let labels = io::read_labels(&a.labels, probs.n_classes())?;
    let model = calibrate(method, &probs, &labels, &cfg, a.alpha, a.g, option, &overrides)?;
    io::write_model(&a.out, &model)?;
    Ok(())
}

fn run_predict(a: &PredictArgs) -> Result<(), CliError> {
    let model = io::read_model(&a.model)?;
    let probs = io::read_probability_matrix(&a.probs)?;
    let batch = predict(&model, &probs)?;
    io::write_sets(&a.out, &batch.sets)?;
    Ok(())
}

fn run_evaluate(a: &EvaluateArgs) -> Result<(), CliError> {
    let sets = io::read_sets(&a.sets)?;
    let labels = io::read_labels(&a.labels, a.classes)?;
    let report = evaluate(&sets, &labels, a.alpha, a.classes)?;
    io::write_json(&a.out, &report)?;
    if let Some(csv) = &a.csv {
        io::write_text_file(csv, &io::metrics_to_csv(&report))?;
    }
    Ok(())
}

fn run_diagnose(a: &DiagnoseArgs) -> Result<(), CliError> {
    let rc3p = io::read_model(&a.rc3p)?;
    let ccp = io::read_model(&a.ccp)?;
    let probs = io::read_probability_matrix(&a.probs)?;
    let labels = io::read_labels(&a.labels, probs.n_classes())?;
    let sigma = sigma_condition(&rc3p, &ccp, &probs, &labels)?;
    let thm2 = match theorem2_check(&rc3p, &ccp, &probs, &labels) {
        Ok(t) => Some(t),
        Err(Error::Unsupported(msg)) => {
            log::warn!("skipping efficiency check: {msg}");
            None
        }
        Err(e) => return Err(e.into()),
    };
    let k = probs.n_classes();
    let rank_freq = RankFreqPair {
        ccp: rank_frequency(&predict(&ccp, &probs)?.sets, &probs, k)?,
        rc3p: rank_frequency(&predict(&rc3p, &probs)?.sets, &probs, k)?,
    };
    if let Some(path) = &a.rank_csv {
        let cols = [("ccp", &rank_freq.ccp), ("rc3p", &rank_freq.rc3p)];
        io::write_text_file(path, &io::rank_freq_to_csv(&cols))?;
    }
    if let Some(path) = &a.sigma_csv {
        io::write_text_file(path, &io::sigma_to_csv(&sigma))?;
    }
    io::write_json(
        &a.out,
        &Diagnosis {
            sigma,
            thm2,
            rank_freq,
        },
    )?;
    Ok(())
}

fn run_synth(a: &SynthArgs) -> Result<(), CliError> {
    let world = a.world.world(a.seed)?;
    let k = a.world.classes;
    std::fs::create_dir_all(&a.out_dir).map_err(|e| Error::Io {
        path: a.out_dir.clone(),
        source: e,
    })?;
    let ext = match a.format {
        MatrixFormat::Csv => "csv",
        MatrixFormat::Rcm => "rcm",
    };
    let rep = draw_replication(
        &world,
        &vec![a.world.n_cal; k],
        &vec![a.world.n_test; k],
        &ScoreConfig::hps(),
        0,
    )?;
    let paths = [
        a.out_dir.join(format!("cal_probs.{ext}")),
        a.out_dir.join("cal_labels.txt"),
        a.out_dir.join(format!("test_probs.{ext}")),
        a.out_dir.join("test_labels.txt"),
    ];
    io::write_probability_matrix(&paths[0], &rep.cal_probs)?;
    io::write_labels(&paths[1], &rep.cal_labels)?;
    io::write_probability_matrix(&paths[2], &rep.test_probs)?;
    io::write_labels(&paths[3], &rep.test_labels)?;
    let training_counts = match (a.world.decay, a.world.rho, a.world.n_train) {
        (Some(kind), Some(rho), Some(n_train)) => Some(decay_counts(&DecaySpec {
            kind: kind.into(),
            rho,
            n_train,
            n_classes: k,
        })?),
        _ => None,
    };
    let manifest = SynthManifest {
        world: &world,
        training_counts,
        cal_probs: file_name(&paths[0]),
        cal_labels: file_name(&paths[1]),
        test_probs: file_name(&paths[2]),
        test_labels: file_name(&paths[3]),
    };
    io::write_json(&a.out_dir.join("world.json"), &manifest)?;
    Ok(())
}

fn run_verify(a: &VerifyArgs) -> Result<(), CliError> {
    let world = a.world.world(a.score.seed)?;
    let cfg = a.score.config()?;
    let k = a.world.classes;
    let report = oracle_coverage(
        &world,
        &vec![a.world.n_cal; k],
        &vec![a.world.n_test; k],
        a.method.into(),
        &cfg,
        a.alpha,
        a.g,
        a.replications,
    )?;
    io::write_json(&a.out, &report)?;
    Ok(())
}

fn dispatch(cli: &Cli) -> Result<(), CliError> {
    match &cli.command {
        Command::Calibrate(a) => run_calibrate(a),
        Command::Predict(a) => run_predict(a),
        Command::Evaluate(a) => run_evaluate(a),
        Command::Diagnose(a) => run_diagnose(a),
        Command::Synth(a) => run_synth(a),
        Command::VerifyCoverage(a) => run_verify(a),
    }
}

/// Parses `args` (including the program name) and runs the subcommand.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(cli) => cli,
        Err(e) => {
            let code = e.exit_code();
            let _ = e.print();
            return ExitCode::from(code as u8);
        }
    };
    match dispatch(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}");
            ExitCode::from(2)
        }
        Err(CliError::Data(e)) => {
            eprintln!("error: {e}");
            ExitCode::from(1)
        }
    }
}
