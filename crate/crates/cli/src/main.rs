use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{Context, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};
use trajsim_cli::commands::{self, SPLITS};
use trajsim_cli::config::ExperimentConfig;

#[derive(Parser)]
#[command(name = "trajsim", version, about = "Trajectory similarity learning experiments")]
struct Cli {
    #[command(flatten)]
    global: GlobalArgs,
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum MeasureArg {
    Dfd,
    Dtw,
    Hausdorff,
    Edr,
}

#[derive(Clone, Copy, ValueEnum)]
enum LossArg {
    Triplet,
    Mse,
    Both,
}

#[derive(Args)]
struct GlobalArgs {
    /// key=value config file; flags override it.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    #[arg(long, global = true)]
    seed: Option<u64>,
    #[arg(long, global = true, value_enum)]
    measure: Option<MeasureArg>,
    /// EDR match threshold in normalized units.
    #[arg(long, global = true)]
    epsilon: Option<f64>,
    /// Worker threads; 0 uses every core.
    #[arg(long, global = true)]
    threads: Option<usize>,
    #[arg(long, global = true, value_enum)]
    loss: Option<LossArg>,
    /// Raw trajectory file for `ingest`.
    #[arg(long, global = true)]
    data: Option<PathBuf>,
    #[arg(long, global = true)]
    out_dir: Option<PathBuf>,
    /// Any config key, e.g. `--set epochs=20`. Repeatable.
    #[arg(long = "set", global = true, value_name = "KEY=VALUE")]
    sets: Vec<String>,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random-walk dataset to <out_dir>/synthetic.txt.
    GenSynthetic {
        #[arg(long)]
        count: Option<usize>,
    },
    /// Filter a raw file and split it into train/query/candidate sets.
    Ingest,
    /// Exact distance matrices for training and evaluation.
    GroundTruth,
    Train,
    /// Encode dataset splits into embedding files.
    Embed {
        #[arg(long = "split", default_values_t = SPLITS.map(String::from))]
        splits: Vec<String>,
    },
    /// Nearest candidates of one trajectory in embedding space.
    Search {
        #[arg(long)]
        query_id: String,
        #[arg(short, default_value_t = 10)]
        k: usize,
    },
    Evaluate,
    /// Check the convolution and pooling distance bounds on dataset pairs.
    VerifyBounds {
        #[arg(long)]
        pairs: Option<usize>,
    },
}

fn resolve(g: &GlobalArgs) -> Result<ExperimentConfig> {
    let mut cfg = match &g.config {
        Some(p) => ExperimentConfig::from_file(p)?,
        None => ExperimentConfig::default(),
    };
    for s in &g.sets {
        let (k, v) = s
            .split_once('=')
            .with_context(|| format!("--set expects KEY=VALUE, got `{s}`"))?;
        cfg.set(k, v)?;
    }
    if let Some(v) = g.seed {
        cfg.seed = v;
    }
    if let Some(m) = g.measure {
        cfg.measure = match m {
            MeasureArg::Dfd => "dfd",
            MeasureArg::Dtw => "dtw",
            MeasureArg::Hausdorff => "hausdorff",
            MeasureArg::Edr => "edr",
        }
        .into();
    }
    if let Some(e) = g.epsilon {
        cfg.epsilon = e;
    }
    if let Some(t) = g.threads {
        cfg.threads = t;
    }
    if let Some(l) = g.loss {
        cfg.set(
            "loss",
            match l {
                LossArg::Triplet => "triplet",
                LossArg::Mse => "mse",
                LossArg::Both => "both",
            },
        )?;
    }
    if let Some(d) = &g.data {
        cfg.data = Some(d.clone());
    }
    if let Some(o) = &g.out_dir {
        cfg.out_dir = o.clone();
    }
    Ok(cfg)
}

fn run(cli: Cli) -> Result<()> {
    let mut cfg = resolve(&cli.global)?;
    if cfg.threads > 0 {
        rayon::ThreadPoolBuilder::new()
            .num_threads(cfg.threads)
            .build_global()
            .context("configuring the thread pool")?;
    }
    match cli.command {
        Command::GenSynthetic { count } => {
            if let Some(c) = count {
                cfg.syn_count = c;
            }
            let p = commands::gen_synthetic(&cfg)?;
            println!("{}", p.display());
        }
        Command::Ingest => print!("{}", commands::ingest(&cfg)?),
        Command::GroundTruth => commands::ground_truth(&cfg)?,
        Command::Train => {
            let ma = commands::train_cmd(&cfg)?;
            if let Some(last) = ma.last() {
                println!("final 10-epoch mean loss: {last}");
            }
        }
        Command::Embed { splits } => commands::embed(&cfg, &splits)?,
        Command::Search { query_id, k } => {
            for (id, score) in commands::search(&cfg, &query_id, k)? {
                println!("{id}\t{score}");
            }
        }
        Command::Evaluate => print!("{}", commands::evaluate(&cfg)?.text()),
        Command::VerifyBounds { pairs } => {
            if let Some(p) = pairs {
                cfg.pairs = p;
                cfg.far_pairs = cfg.far_pairs.min(p);
            }
            print!("{}", commands::verify_bounds(&cfg)?.summary_text());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
