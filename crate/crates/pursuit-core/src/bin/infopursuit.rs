//! Command-line front end: fit generative models, run sequential-query
//! pursuit over a test set, sweep the stopping threshold for trade-off
//! curves, compare against baselines, and verify the theoretical bounds.

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use pursuit_core::cli::{
    self, DatasetSpec, ModelSpec, QuerysetSpec, RunConfig, Subcommand as Cmd,
};
use pursuit_core::Error;

#[derive(Parser)]
#[command(
    name = "infopursuit",
    about = "Sequential-query classification by greedy information maximization",
    version
)]
struct CliArgs {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Fit a Bernoulli mixture on the train split and write the model file
    Fit(CommonArgs),
    /// Run pursuit on the test split, writing one trace per instance
    Pursue(CommonArgs),
    /// Sweep epsilon values and write a (epsilon, mean_length, accuracy) CSV
    Curve(CommonArgs),
    /// Compare pursuit against CART and the full-information MAP baseline
    Compare(CommonArgs),
    /// Run the self-contained theory verification suite
    Verify(CommonArgs),
}

#[derive(Args)]
struct CommonArgs {
    /// Dataset: IDX pair "images.idx,labels.idx", a CSV/JSONL path, or
    /// "synth:N_TRAIN:N_TEST" for the bundled digit corpus
    #[arg(long, default_value = "synth:2000:500")]
    dataset: String,

    /// Input format: idx | csv | jsonl | synth
    #[arg(long, default_value = "synth")]
    format: String,

    /// Binarization threshold for grayscale IDX images, in (0, 1)
    #[arg(long, default_value_t = 0.5)]
    threshold: f64,

    /// Query family: "patch:W", "attr", or "word:VOCAB_SIZE"
    #[arg(long, default_value = "patch:3")]
    queryset: String,

    /// Model: "tabular", "mixture:K[:ITERS[:TOL]]", or "file:PATH"
    #[arg(long, default_value = "mixture:8")]
    model: String,

    /// Termination: "conf:EPS:WINDOW" or "mi:EPS:WINDOW"
    #[arg(long, default_value = "conf:0.01:1")]
    term: String,

    /// Hard cap on asked queries (defaults to the query set size)
    #[arg(long)]
    max_queries: Option<usize>,

    /// Laplace smoothing for the tabular model
    #[arg(long, default_value_t = 1e-3)]
    alpha: f64,

    /// Retained Langevin samples per label per step
    #[arg(long, default_value_t = 12_000)]
    samples: usize,

    /// Langevin step size
    #[arg(long, default_value_t = 5e-3)]
    step: f64,

    /// Langevin burn-in iterations
    #[arg(long, default_value_t = 1_000)]
    burnin: usize,

    /// Independent Langevin chains
    #[arg(long, default_value_t = 4)]
    chains: usize,

    /// Train fraction of the split (ignored for synth datasets)
    #[arg(long, default_value_t = 0.8)]
    split: f64,

    /// Comma-separated epsilon list for `curve`
    #[arg(long, default_value = "")]
    eps_list: String,

    /// Category-map file for JSONL corpora (old<TAB>new or old<TAB>DROP)
    #[arg(long)]
    category_map: Option<String>,

    /// Top-level seed; all randomness derives from it
    #[arg(long, default_value_t = 0)]
    seed: u64,

    /// Worker threads for instance-level parallelism
    #[arg(long, default_value_t = 2)]
    workers: usize,

    /// Output path
    #[arg(long, default_value = "out.txt")]
    out: PathBuf,

    /// Test-only: corrupt one Huffman merge so `verify` must fail
    #[arg(long, hide = true, default_value_t = false)]
    corrupt_huffman: bool,
}

fn parse_dataset(args: &CommonArgs) -> Result<DatasetSpec, Error> {
    match args.format.as_str() {
        "synth" => {
            let spec = args.dataset.strip_prefix("synth:").unwrap_or("2000:500");
            let parts: Vec<&str> = spec.split(':').collect();
            let bad = || Error::InvalidArgument("synth spec is synth:N_TRAIN:N_TEST".into());
            if parts.len() != 2 {
                return Err(bad());
            }
            Ok(DatasetSpec::Synth {
                n_train: parts[0].parse().map_err(|_| bad())?,
                n_test: parts[1].parse().map_err(|_| bad())?,
            })
        }
        "idx" => {
            let (images, labels) = args
                .dataset
                .split_once(',')
                .ok_or_else(|| Error::InvalidArgument("idx spec is images.idx,labels.idx".into()))?;
            Ok(DatasetSpec::Idx { images: images.into(), labels: labels.into() })
        }
        "csv" => Ok(DatasetSpec::Csv { path: args.dataset.clone() }),
        "jsonl" => Ok(DatasetSpec::Jsonl {
            path: args.dataset.clone(),
            category_map: args.category_map.clone(),
        }),
        other => Err(Error::InvalidArgument(format!("unknown format {other:?}"))),
    }
}

fn parse_queryset(spec: &str) -> Result<QuerysetSpec, Error> {
    if let Some(w) = spec.strip_prefix("patch:") {
        return Ok(QuerysetSpec::Patch {
            w: w.parse().map_err(|_| Error::InvalidArgument("bad patch width".into()))?,
        });
    }
    if spec == "attr" {
        return Ok(QuerysetSpec::Attribute);
    }
    if let Some(n) = spec.strip_prefix("word:") {
        return Ok(QuerysetSpec::Word {
            vocab_size: n.parse().map_err(|_| Error::InvalidArgument("bad vocab size".into()))?,
        });
    }
    Err(Error::InvalidArgument(format!("unknown queryset {spec:?}")))
}

fn parse_model(spec: &str) -> Result<ModelSpec, Error> {
    if spec == "tabular" {
        return Ok(ModelSpec::Tabular);
    }
    if let Some(rest) = spec.strip_prefix("mixture:") {
        let parts: Vec<&str> = rest.split(':').collect();
        let bad = || Error::InvalidArgument("mixture spec is mixture:K[:ITERS[:TOL]]".into());
        let k = parts[0].parse().map_err(|_| bad())?;
        let em_iters = if parts.len() > 1 { parts[1].parse().map_err(|_| bad())? } else { 50 };
        let tol = if parts.len() > 2 { parts[2].parse().map_err(|_| bad())? } else { 1e-7 };
        return Ok(ModelSpec::Mixture { k, em_iters, tol });
    }
    if let Some(path) = spec.strip_prefix("file:") {
        return Ok(ModelSpec::File { path: path.into() });
    }
    if let Some(path) = spec.strip_prefix("latent:") {
        return Ok(ModelSpec::File { path: path.into() });
    }
    Err(Error::InvalidArgument(format!("unknown model {spec:?}")))
}

fn parse_term(spec: &str) -> Result<(String, f64, usize), Error> {
    let parts: Vec<&str> = spec.split(':').collect();
    let bad = || Error::InvalidArgument("termination spec is conf:EPS:WINDOW or mi:EPS:WINDOW".into());
    if parts.len() != 3 || (parts[0] != "conf" && parts[0] != "mi") {
        return Err(bad());
    }
    Ok((
        parts[0].to_string(),
        parts[1].parse().map_err(|_| bad())?,
        parts[2].parse().map_err(|_| bad())?,
    ))
}

fn build_config(command: Cmd, args: &CommonArgs) -> Result<RunConfig, Error> {
    let (term_kind, term_epsilon, term_window) = parse_term(&args.term)?;
    let eps_list: Vec<f64> = if args.eps_list.is_empty() {
        Vec::new()
    } else {
        args.eps_list
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| Error::InvalidArgument(format!("bad epsilon {t:?}")))
            })
            .collect::<Result<_, _>>()?
    };
    Ok(RunConfig {
        command,
        dataset: parse_dataset(args)?,
        threshold: args.threshold,
        queryset: parse_queryset(&args.queryset)?,
        model: parse_model(&args.model)?,
        term_kind,
        term_epsilon,
        term_window,
        max_queries: args.max_queries,
        alpha: args.alpha,
        samples: args.samples,
        step_size: args.step,
        burn_in: args.burnin,
        chains: args.chains,
        split_fraction: args.split,
        eps_list,
        seed: args.seed,
        workers: args.workers,
        out: args.out.clone(),
        corrupt_huffman: args.corrupt_huffman,
    })
}

fn run() -> Result<i32, (i32, Error)> {
    let cli = CliArgs::parse();
    let (cmd, args) = match &cli.command {
        Command::Fit(a) => (Cmd::Fit, a),
        Command::Pursue(a) => (Cmd::Pursue, a),
        Command::Curve(a) => (Cmd::Curve, a),
        Command::Compare(a) => (Cmd::Compare, a),
        Command::Verify(a) => (Cmd::Verify, a),
    };
    let cfg = build_config(cmd, args).map_err(|e| (1, e))?;
    cfg.validate().map_err(|e| (1, e))?;
    let wrap = |e: Error| (cli::exit_code(&e), e);
    match cmd {
        Cmd::Fit => cli::cmd_fit(&cfg).map_err(wrap)?,
        Cmd::Pursue => {
            cli::cmd_pursue(&cfg).map_err(wrap)?;
        }
        Cmd::Curve => {
            cli::cmd_curve(&cfg).map_err(wrap)?;
        }
        Cmd::Compare => {
            cli::cmd_compare(&cfg).map_err(wrap)?;
        }
        Cmd::Verify => {
            let outcome = cli::cmd_verify(&cfg).map_err(wrap)?;
            if outcome.failures > 0 {
                eprintln!(
                    "verification FAILED: {}/{} checks",
                    outcome.failures, outcome.checks
                );
                return Ok(3);
            }
            eprintln!("verification passed: {} checks", outcome.checks);
        }
    }
    Ok(0)
}

fn main() -> ExitCode {
    match run() {
        Ok(code) => ExitCode::from(code as u8),
        Err((code, err)) => {
            eprintln!("error: {err}");
            ExitCode::from(code as u8)
        }
    }
}
