use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use ictd::config::ExperimentConfig;
use ictd::experiment::{self, prepare_out};
use ictd::translate::DistanceMatrix;

#[derive(Parser)]
#[command(name = "ictd", version, about = "Image-class translation distance experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args)]
struct Common {
    /// Experiment config (TOML). May name a built-in recipe with
    /// `recipe = "fruits2"`.
    #[arg(long)]
    config: PathBuf,
    /// Output directory; defaults to `<output_dir>/<stage>`.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Overrides the config seed.
    #[arg(long)]
    seed: Option<u64>,
    /// Write into a non-empty output directory.
    #[arg(long)]
    force: bool,
    /// Extra `dotted.key=value` config overrides.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    set: Vec<String>,
}

impl Common {
    fn load(&self) -> ictd::Result<ExperimentConfig> {
        let mut overrides = Vec::new();
        if let Some(s) = self.seed {
            overrides.push(format!("seed={s}"));
        }
        overrides.extend(self.set.iter().cloned());
        ExperimentConfig::load(&self.config, &overrides)
    }

    fn out(&self, cfg: &ExperimentConfig, stage: &str) -> ictd::Result<PathBuf> {
        let out = self.out.clone().unwrap_or_else(|| cfg.output_root().join(stage));
        prepare_out(&out, self.force)?;
        Ok(out)
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate the synthetic dataset.
    GenData(Common),
    /// Train the translation GAN.
    Train {
        #[command(flatten)]
        common: Common,
        /// Dataset directory (default `<output_dir>/data`).
        #[arg(long)]
        data: Option<PathBuf>,
        /// Continue from this checkpoint.
        #[arg(long)]
        resume: Option<PathBuf>,
    },
    /// Compute translation distances for every image.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// GAN checkpoint (default `<output_dir>/train/model.ictd`).
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
    /// Fit a distance classifier on the train split and evaluate on test.
    ClassifyEval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        /// Distances CSV (default `<output_dir>/extract/distances.csv`).
        #[arg(long)]
        distances: Option<PathBuf>,
    },
    /// Train and evaluate the end-to-end CNN baseline.
    Baseline {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
    },
    /// Render source images next to their translations into every class.
    RenderGrid {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        data: Option<PathBuf>,
        #[arg(long)]
        checkpoint: Option<PathBuf>,
    },
}

fn or_default(p: &Option<PathBuf>, cfg: &ExperimentConfig, rel: &str) -> PathBuf {
    p.clone().unwrap_or_else(|| cfg.output_root().join(rel))
}

fn show(path: &Path) -> String {
    path.display().to_string()
}

fn run(cli: Cli) -> ictd::Result<()> {
    match cli.command {
        Command::GenData(c) => {
            let cfg = c.load()?;
            let out = c.out(&cfg, "data")?;
            let data = experiment::gen_data(&cfg, &out)?;
            for split in [ictd::synth::Split::Train, ictd::synth::Split::Test] {
                println!("{:<5} {:?}", split.as_str(), data.class_counts(split));
            }
            println!("wrote {} images to {}", data.images.len(), show(&out));
        }
        Command::Train { common: c, data, resume } => {
            let cfg = c.load()?;
            let data = experiment::load_dataset(&or_default(&data, &cfg, "data"))?;
            let out = c.out(&cfg, "train")?;
            let t = experiment::train(&cfg, &data, &out, resume.as_deref())?;
            println!("trained {} iterations; model in {}", t.iteration, show(&out.join(experiment::MODEL)));
        }
        Command::Extract { common: c, data, checkpoint } => {
            let cfg = c.load()?;
            let data = experiment::load_dataset(&or_default(&data, &cfg, "data"))?;
            let ck = checkpoint.unwrap_or_else(|| cfg.output_root().join("train").join(experiment::MODEL));
            let model = experiment::load_model(&cfg, &data, &ck)?;
            let out = c.out(&cfg, "extract")?;
            let m = experiment::extract(&cfg, &data, model.translator(), &out)?;
            println!("{} x {} distances in {}", m.len(), m.n_classes, show(&out.join(experiment::DISTANCES)));
        }
        Command::ClassifyEval { common: c, data, distances } => {
            let cfg = c.load()?;
            let manifest = experiment::read_manifest(&or_default(&data, &cfg, "data"))?;
            let path = distances.unwrap_or_else(|| cfg.output_root().join("extract").join(experiment::DISTANCES));
            let m = DistanceMatrix::load(&path)?;
            let out = c.out(&cfg, "classify")?;
            let o = experiment::classify_eval(&cfg, &m, &manifest, &out)?;
            print_report(cfg.classifier.kind.as_str(), &o.report);
        }
        Command::Baseline { common: c, data } => {
            let cfg = c.load()?;
            let data = experiment::load_dataset(&or_default(&data, &cfg, "data"))?;
            let out = c.out(&cfg, "baseline")?;
            let o = experiment::baseline(&cfg, &data, &out)?;
            print_report("baseline_cnn", &o.report);
            println!("best epoch {} of {}", o.log.best_epoch, o.log.epochs.len());
        }
        Command::RenderGrid { common: c, data, checkpoint } => {
            let cfg = c.load()?;
            let data = experiment::load_dataset(&or_default(&data, &cfg, "data"))?;
            let ck = checkpoint.unwrap_or_else(|| cfg.output_root().join("train").join(experiment::MODEL));
            let model = experiment::load_model(&cfg, &data, &ck)?;
            let out = c.out(&cfg, "grid")?;
            println!("wrote {}", show(&experiment::render_grid(&cfg, &data, model.translator(), &out)?));
        }
    }
    Ok(())
}

fn print_report(name: &str, r: &ictd::eval::EvalReport) {
    let fmt = |v: Option<f64>| v.map_or("n/a".to_string(), |v| format!("{v:.4}"));
    println!("{name}: accuracy {} auroc {} (n = {})", fmt(r.overall_accuracy), fmt(r.auroc), r.n_test);
    for (i, row) in r.confusion_matrix.iter().enumerate() {
        println!("  true {i}: {row:?}");
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
