use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};
use serde::de::DeserializeOwned;

use cdmi::experiment::{
    cmd_attack, cmd_generate, cmd_report, cmd_sweep, EpochSweep, ExperimentSpec, Layout,
};
use cdmi::game::{MiMetricKind, Variant};
use cdmi::model::Criterion;
use cdmi::{Error, Result};

#[derive(Parser)]
#[command(
    name = "cdmi",
    version,
    about = "Field reconstruction attacks on layout-aware document encoders"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate the corpus, vocabulary and partition.
    Generate {
        #[command(flatten)]
        common: Common,
        /// Overwrite an existing corpus.
        #[arg(long)]
        force: bool,
    },
    /// Train the target, the public MLM and the optional shifted auxiliary.
    Train {
        #[command(flatten)]
        common: Common,
        /// Continue from the last saved epoch instead of starting over.
        #[arg(long)]
        resume: bool,
    },
    /// Attack the selected target checkpoint(s) and the matched baseline.
    Attack {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 1)]
        workers: usize,
    },
    /// Aggregate attack runs into a CSV table and curve plots.
    Report {
        /// Run directories; defaults to every run of --spec.
        runs: Vec<PathBuf>,
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long, env = "CDMI_OUT_DIR", default_value = "runs")]
        out_dir: PathBuf,
        /// Where to write the report; defaults to the experiment's report/.
        #[arg(long)]
        report_dir: Option<PathBuf>,
    },
    /// Run every stage for each spec listed in a matrix file.
    Sweep {
        matrix: PathBuf,
        #[arg(long, env = "CDMI_OUT_DIR", default_value = "runs")]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 1)]
        workers: usize,
        #[arg(long)]
        force: bool,
    },
}

#[derive(Args)]
struct Common {
    /// Experiment spec (TOML).
    #[arg(long)]
    spec: PathBuf,
    /// Root for experiment directories (one per spec name).
    #[arg(long, env = "CDMI_OUT_DIR", default_value = "runs")]
    out_dir: PathBuf,
    #[command(flatten)]
    overrides: Overrides,
}

/// Command-line overrides of spec fields.
#[derive(Args)]
struct Overrides {
    #[arg(long)]
    seed: Option<u64>,
    /// precision | loss
    #[arg(long, value_parser = parse_serde::<Criterion>)]
    criterion: Option<Criterion>,
    /// one_shot | multi_shot
    #[arg(long, value_parser = parse_serde::<Variant>)]
    variant: Option<Variant>,
    /// PERPLEXITY_RATIO, RAW_PERPLEXITY, ...
    #[arg(long, value_parser = parse_serde::<MiMetricKind>)]
    mi_kind: Option<MiMetricKind>,
    #[arg(long)]
    epsilon: Option<f64>,
    #[arg(long)]
    n_candidates: Option<usize>,
    #[arg(long)]
    n_attempts: Option<usize>,
    #[arg(long)]
    top_p: Option<f64>,
    #[arg(long)]
    layout_off: bool,
    #[arg(long)]
    visual_noise: bool,
    /// Attack every n-th checkpoint instead of the selected one.
    #[arg(long)]
    epoch_sweep_stride: Option<usize>,
    #[arg(long, requires = "epoch_sweep_stride")]
    epoch_sweep_field_fraction: Option<f64>,
}

fn parse_serde<T: DeserializeOwned>(s: &str) -> std::result::Result<T, String> {
    serde_json::from_value(serde_json::Value::String(s.to_string())).map_err(|e| e.to_string())
}

impl Overrides {
    fn apply(&self, spec: &mut ExperimentSpec) {
        if let Some(v) = self.seed {
            spec.seed = v;
        }
        if let Some(v) = self.criterion {
            spec.criterion = v;
        }
        if let Some(v) = self.variant {
            spec.variant = v;
        }
        if let Some(v) = self.mi_kind {
            spec.mi_kind = v;
        }
        if let Some(v) = self.epsilon {
            spec.epsilon = v;
        }
        if let Some(v) = self.n_candidates {
            spec.attack.n_candidates = v;
        }
        if let Some(v) = self.n_attempts {
            spec.attack.n_attempts = v;
        }
        if let Some(v) = self.top_p {
            spec.attack.top_p = v;
        }
        spec.ablations.layout_off |= self.layout_off;
        spec.ablations.visual_noise |= self.visual_noise;
        if let Some(stride) = self.epoch_sweep_stride {
            let mut sweep = EpochSweep {
                stride,
                ..EpochSweep::default()
            };
            if let Some(f) = self.epoch_sweep_field_fraction {
                sweep.field_fraction = f;
            }
            spec.ablations.epoch_sweep = Some(sweep);
        }
    }
}

fn load(common: &Common) -> Result<(ExperimentSpec, Layout)> {
    let mut spec = ExperimentSpec::load(&common.spec)?;
    common.overrides.apply(&mut spec);
    spec.validate()?;
    let layout = Layout::new(common.out_dir.join(&spec.name));
    Ok((spec, layout))
}

fn list_runs(attack_root: &Path) -> Result<Vec<PathBuf>> {
    let mut runs = Vec::new();
    let entries = std::fs::read_dir(attack_root).map_err(|e| Error::io(attack_root, e))?;
    for entry in entries {
        let path = entry.map_err(|e| Error::io(attack_root, e))?.path();
        if path.is_dir() {
            runs.push(path);
        }
    }
    runs.sort();
    Ok(runs)
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate { common, force } => {
            let (spec, layout) = load(&common)?;
            let record = cmd_generate(&spec, &layout, force)?;
            println!(
                "{}: valid {} train_pub {} train_pri {}",
                layout.root.display(),
                record.valid.len(),
                record.train_pub.len(),
                record.train_pri.len()
            );
        }
        Command::Train { common, resume } => {
            let (spec, layout) = load(&common)?;
            cdmi::experiment::cmd_train(&spec, &layout, resume)?;
        }
        Command::Attack { common, workers } => {
            let (spec, layout) = load(&common)?;
            for dir in cmd_attack(&spec, &layout, workers)? {
                println!("{}", dir.display());
            }
        }
        Command::Report {
            runs,
            spec,
            out_dir,
            report_dir,
        } => {
            let layout = match &spec {
                Some(p) => Some(Layout::new(out_dir.join(ExperimentSpec::load(p)?.name))),
                None => None,
            };
            let runs = match (&layout, runs.is_empty()) {
                (_, false) => runs,
                (Some(l), true) => list_runs(&l.root.join("attack"))?,
                (None, true) => {
                    return Err(Error::Config(
                        "report needs run directories or --spec".into(),
                    ))
                }
            };
            let out = match (report_dir, &layout) {
                (Some(d), _) => d,
                (None, Some(l)) => l.report_dir(),
                (None, None) => out_dir.join("report"),
            };
            for row in cmd_report(&runs, &out)? {
                println!(
                    "{} {} {} {}: IpF {:.4} AccAUC {:.4} HamAAC {:.4}",
                    row.task,
                    row.modality,
                    row.criterion,
                    row.backbone,
                    row.ipf,
                    row.acc_auc,
                    row.ham_aac
                );
            }
        }
        Command::Sweep {
            matrix,
            out_dir,
            workers,
            force,
        } => {
            let rows = cmd_sweep(&matrix, &out_dir, workers, force)?;
            println!(
                "{} report rows written to {}",
                rows.len(),
                out_dir.join("sweep_table.csv").display()
            );
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
