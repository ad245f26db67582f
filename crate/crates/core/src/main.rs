use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use mudhog::baselines::AggregatorKind;
use mudhog::harness::{self, ExpSeries, ExperimentConfig, HarnessError, Preset, SeedConfig};

#[derive(Parser)]
#[command(
    name = "mudhog",
    version,
    about = "Federated-learning attack/defense simulator"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run one experiment and write its reports.
    Run(RunArgs),
    /// Run one experiment under every aggregator and write a joint table.
    Compare(RunArgs),
    /// Print a preset as a config file.
    Preset {
        preset: Preset,
        #[arg(long, default_value = "data/mnist-subset")]
        data_dir: PathBuf,
    },
}

#[derive(Args)]
struct RunArgs {
    #[arg(long)]
    config: Option<PathBuf>,
    /// Preset to start from, or to rescale a config file with.
    #[arg(long)]
    preset: Option<Preset>,
    /// Directory holding the IDX files a preset refers to.
    #[arg(long, default_value = "data/mnist-subset")]
    data_dir: PathBuf,
    #[arg(long)]
    aggregator: Option<AggregatorKind>,
    #[arg(long, requires = "index")]
    series: Option<ExpSeries>,
    #[arg(long, requires = "series")]
    index: Option<usize>,
    /// Base seed; data, init and run seeds are derived from it.
    #[arg(long)]
    seed: Option<u64>,
    #[arg(long)]
    out: Option<PathBuf>,
}

impl RunArgs {
    fn build(&self) -> Result<ExperimentConfig, HarnessError> {
        let mut cfg = match (&self.config, self.preset) {
            (Some(path), preset) => {
                let mut cfg = ExperimentConfig::load(path)?;
                if let Some(p) = preset {
                    cfg.apply_scale(p);
                }
                cfg
            }
            (None, Some(p)) => ExperimentConfig::preset(p, &self.data_dir),
            (None, None) => return Err(HarnessError::Config("give --config or --preset".into())),
        };
        if let Some(kind) = self.aggregator {
            cfg.aggregator = kind;
        }
        if let (Some(series), Some(index)) = (self.series, self.index) {
            cfg.roster.series = Some(series);
            cfg.roster.index = Some(index);
            cfg.roster.unreliable = 0;
            cfg.roster.additive_noise = 0;
            cfg.roster.sign_flip = 0;
            cfg.roster.label_flip = 0;
            cfg.roster.multi_label_flip = 0;
        }
        if let Some(seed) = self.seed {
            cfg.seeds = SeedConfig::from_base(seed);
        }
        if let Some(out) = &self.out {
            cfg.out_dir = Some(out.clone());
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

fn out_dir(cfg: &ExperimentConfig) -> PathBuf {
    cfg.out_dir
        .clone()
        .unwrap_or_else(|| Path::new("runs").join(&cfg.name))
}

fn execute(cli: Cli) -> Result<(), HarnessError> {
    match cli.command {
        Command::Run(args) => {
            let cfg = args.build()?;
            let output = harness::run_experiment(&cfg)?;
            let dir = out_dir(&cfg);
            harness::emit_reports(&output, &dir)?;
            let s = &output.summary;
            println!(
                "{}: accuracy {:.4}, recall[{}] {:.4}, precision[{}] {:.4}",
                s.aggregator,
                s.final_accuracy,
                s.source_class,
                s.final_source_recall,
                s.target_class,
                s.final_target_precision
            );
            if let Some(overall) = s.detection.as_ref().and_then(|d| d.overall) {
                println!("detection ratio {overall:.4}");
            }
            println!("reports in {}", dir.display());
        }
        Command::Compare(args) => {
            let cfg = args.build()?;
            let dir = out_dir(&cfg);
            let rows = harness::compare(&cfg, &AggregatorKind::ALL, Some(&dir))?;
            print!("{}", harness::comparison_csv(&rows));
        }
        Command::Preset { preset, data_dir } => {
            print!("{}", ExperimentConfig::preset(preset, &data_dir).to_toml());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
