use clap::{Parser, Subcommand};
use std::path::PathBuf;
use tractpipe::{
    cmd_evaluate, cmd_phantom, cmd_pipeline, cmd_predict, cmd_stage1, cmd_stage2, cmd_stage3,
    PipelineConfig,
};

#[derive(Parser)]
#[command(
    name = "tractpipe",
    version,
    about = "Registration-driven one-shot volumetric segmentation on synthetic phantoms"
)]
struct Cli {
    /// JSON config file; built-in defaults apply when omitted.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Master seed override; stage seeds derive from it.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Worker threads for parallel sections (0 = all cores).
    #[arg(long, global = true, default_value_t = 0)]
    jobs: usize,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the phantom cohort and its manifest.
    Phantom,
    /// Synthesize the pseudo dataset by registering the labeled subject onto
    /// every unlabeled subject.
    Stage1,
    /// Train model A on the single labeled subject.
    Stage2,
    /// Train model B on the pseudo dataset, weighted by uncertainty maps
    /// from frozen model A.
    Stage3 {
        /// Train with unit weights instead of uncertainty maps.
        #[arg(long)]
        no_ure: bool,
    },
    /// Predict one subject with a trained model.
    Predict {
        /// Model checkpoint base path.
        #[arg(long)]
        model: PathBuf,
        /// Subject peaks volume.
        #[arg(long)]
        subject: PathBuf,
        /// Output base path (defaults under <workspace>/predictions).
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Evaluate a model on the test split and write a Dice CSV.
    Evaluate {
        /// Model checkpoint base path.
        #[arg(long)]
        model: PathBuf,
        /// Method tag used in the CSV.
        #[arg(long, default_value = "model")]
        tag: String,
    },
    /// Run the full ablation: baseline, RPA, RPA+URe.
    Pipeline,
}

fn main() {
    let cli = Cli::parse();
    if let Err(err) = run(cli) {
        eprintln!("error: {err:#}");
        std::process::exit(1);
    }
}

fn run(cli: Cli) -> anyhow::Result<()> {
    if cli.jobs > 0 {
        // Ignore failure: the global pool may already exist in tests.
        let _ = rayon::ThreadPoolBuilder::new()
            .num_threads(cli.jobs)
            .build_global();
    }
    let mut cfg = match &cli.config {
        Some(path) => PipelineConfig::load(path)?,
        None => PipelineConfig::default(),
    };
    if let Some(seed) = cli.seed {
        cfg.seed = seed;
    }
    cfg.apply_env_workspace();

    match cli.command {
        Command::Phantom => cmd_phantom(&cfg),
        Command::Stage1 => cmd_stage1(&cfg),
        Command::Stage2 => cmd_stage2(&cfg),
        Command::Stage3 { no_ure } => cmd_stage3(&cfg, !no_ure),
        Command::Predict {
            model,
            subject,
            out,
        } => cmd_predict(&cfg, &model, &subject, out.as_deref()).map(|_| ()),
        Command::Evaluate { model, tag } => {
            let threshold = cfg.train_b_config().binarize_threshold;
            cmd_evaluate(&cfg, &model, &tag, threshold).map(|_| ())
        }
        Command::Pipeline => cmd_pipeline(&cfg).map(|_| ()),
    }
}
