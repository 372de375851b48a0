//! Command-line front end. Each subcommand wraps one library operation; see
//! `clusterfit <cmd> --help`.

use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use clusterfit::featurestore::{
    read_features, read_labels, write_features, write_labels, Dataset, DatasetRole, LabelVector,
};
use clusterfit::harness::{
    clusterfit_run, parse_seeds, sweep, synth_generate, ExperimentConfig, SweepAxis, SynthSpec,
};
use clusterfit::kmeans::{kmeans_assign, kmeans_fit, write_centroids, KMeansConfig};
use clusterfit::nnet::{
    extract_features, read_checkpoint, train, write_checkpoint, DistillConfig, MlpSpec, Objective,
    TrainConfig,
};
use clusterfit::probe::{probe_lr_sweep, ProbeConfig};
use clusterfit::relabel::{
    inject_noise, per_label_plan, per_label_pseudo_labels, prototype_labels, pseudo_labels,
    NoiseSpec,
};
use clusterfit::{Error, Result};

#[derive(Parser)]
#[command(version, about = "Cluster features, refit on cluster ids, probe transfer")]
struct Cli {
    /// Log progress (repeat for more detail).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Generate the synthetic splits as CFF1/CFL1 files.
    Synth {
        /// SynthSpec JSON; defaults apply to missing fields.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Fit k-means centroids.
    Cluster {
        #[arg(long)]
        features: PathBuf,
        #[arg(long)]
        k: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// KMeansConfig JSON for the remaining settings.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        /// Also write each row's cluster id.
        #[arg(long)]
        assignments: Option<PathBuf>,
    },
    /// Turn features into pseudo-labels.
    Relabel {
        #[arg(long, value_parser = ["unsupervised", "per-label", "prototype"])]
        strategy: String,
        #[arg(long)]
        features: PathBuf,
        /// Class labels (per-label and prototype).
        #[arg(long)]
        labels: Option<PathBuf>,
        /// Total cluster count (unsupervised and per-label).
        #[arg(long)]
        k: Option<usize>,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
        /// Write the per-class cluster budget (per-label only).
        #[arg(long)]
        plan: Option<PathBuf>,
    },
    /// Train a network from scratch.
    Fit {
        #[arg(long)]
        inputs: PathBuf,
        #[arg(long)]
        labels: PathBuf,
        /// TrainConfig JSON.
        #[arg(long)]
        train: Option<PathBuf>,
        /// Hidden widths, comma separated.
        #[arg(long, default_value = "128,32", value_delimiter = ',')]
        hidden: Vec<usize>,
        /// Distill from this checkpoint instead of plain cross-entropy.
        #[arg(long)]
        teacher: Option<PathBuf>,
        #[arg(long, default_value_t = 20.0)]
        temperature: f64,
        #[arg(long, default_value_t = 0.75)]
        alpha: f64,
        /// Label files for additional heads.
        #[arg(long)]
        extra_labels: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Linear-probe a model's penultimate features (raw inputs if no model).
    Probe {
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        target_train: PathBuf,
        /// Defaults to the inputs path with a `.cfl` extension.
        #[arg(long)]
        target_train_labels: Option<PathBuf>,
        #[arg(long)]
        target_eval: PathBuf,
        #[arg(long)]
        target_eval_labels: Option<PathBuf>,
        /// ProbeConfig JSON.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, value_delimiter = ',')]
        lr_grid: Vec<f64>,
    },
    /// Replace a fraction of labels with uniformly drawn wrong ones.
    InjectNoise {
        #[arg(long)]
        labels: PathBuf,
        #[arg(long)]
        p: f64,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Defaults to `<labels>.noisy.cfl`.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the full pipeline with baselines.
    Pipeline {
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run the pipeline across values of one axis and several seeds.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// K | p | m | capacity | strategy
        #[arg(long)]
        axis: SweepAxis,
        #[arg(long, value_delimiter = ',', required = true)]
        values: Vec<String>,
        #[arg(long, default_value = "0")]
        seeds: String,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

impl Cmd {
    fn name(&self) -> &'static str {
        match self {
            Cmd::Synth { .. } => "synth",
            Cmd::Cluster { .. } => "cluster",
            Cmd::Relabel { .. } => "relabel",
            Cmd::Fit { .. } => "fit",
            Cmd::Probe { .. } => "probe",
            Cmd::InjectNoise { .. } => "inject-noise",
            Cmd::Pipeline { .. } => "pipeline",
            Cmd::Sweep { .. } => "sweep",
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = ["warn", "info", "debug"][cli.verbose.min(2) as usize];
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or(level)).init();
    let name = cli.cmd.name();
    match run(cli.cmd) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            let e = e.in_stage(name);
            eprintln!("error: stage {}: {}", e.stage().unwrap_or(name), source_chain(&e));
            ExitCode::FAILURE
        }
    }
}

fn source_chain(e: &Error) -> String {
    match e {
        Error::Stage { source, .. } => source_chain(source),
        e => e.to_string(),
    }
}

fn json_or_default<T: serde::de::DeserializeOwned + Default>(path: Option<&Path>) -> Result<T> {
    match path {
        None => Ok(T::default()),
        Some(p) => {
            let text = fs::read_to_string(p)
                .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
            Ok(serde_json::from_str(&text)?)
        }
    }
}

fn labels_beside(inputs: &Path, explicit: Option<PathBuf>) -> PathBuf {
    explicit.unwrap_or_else(|| inputs.with_extension("cfl"))
}

fn run(cmd: Cmd) -> Result<()> {
    match cmd {
        Cmd::Synth { spec, out } => {
            let spec: SynthSpec = json_or_default(spec.as_deref())?;
            let data = synth_generate(&spec)?;
            fs::create_dir_all(&out).map_err(|e| Error::Config(format!("{}: {e}", out.display())))?;
            let mut splits = vec![("pretrain", &data.pretrain)];
            if !spec.alias_clusterfit {
                splits.push(("clusterfit", &data.clusterfit));
            }
            splits.push(("target_train", &data.target_train));
            splits.push(("target_eval", &data.target_eval));
            for (name, d) in splits {
                write_features(out.join(format!("{name}.cff")), &d.features)?;
                write_labels(out.join(format!("{name}.cfl")), d.require_labels()?)?;
            }
            for (name, d) in [("target_train", &data.target_train), ("target_eval", &data.target_eval)] {
                let coarse = data.coarse_labels(d.require_labels()?)?;
                write_labels(out.join(format!("{name}_coarse.cfl")), &coarse)?;
            }
            println!(
                "wrote {} (nearest-true-center eval top-1 {:.4})",
                out.display(),
                data.reference_top1
            );
        }
        Cmd::Cluster { features, k, seed, config, out, assignments } => {
            let base: KMeansConfig = json_or_default(config.as_deref())?;
            let cfg = KMeansConfig { k, seed, ..base };
            let x = read_features(&features)?;
            let c = kmeans_fit(&x, &cfg)?;
            write_centroids(&out, &c, seed)?;
            if let Some(path) = assignments {
                write_labels(path, &kmeans_assign(&x, &c)?.into_labels(k)?)?;
            }
            println!("k={k} inertia={:.6} iterations={}", c.inertia(), c.iterations_run());
        }
        Cmd::Relabel { strategy, features, labels, k, seed, out, plan } => {
            let x = read_features(&features)?;
            let need_k = || k.ok_or_else(|| Error::Config(format!("--k is required for {strategy}")));
            let need_labels = || -> Result<LabelVector> {
                let p = labels.as_ref().ok_or_else(|| {
                    Error::Config(format!("--labels is required for {strategy}"))
                })?;
                read_labels(p)
            };
            let pseudo = match strategy.as_str() {
                "unsupervised" => pseudo_labels(&x, &KMeansConfig::new(need_k()?, seed))?,
                "per-label" => {
                    let y = need_labels()?;
                    let budget = per_label_plan(&y, need_k()?)?;
                    if let Some(p) = &plan {
                        fs::write(p, budget.to_json()?)
                            .map_err(|e| Error::Config(format!("{}: {e}", p.display())))?;
                    }
                    per_label_pseudo_labels(&x, &y, &budget, &KMeansConfig::new(budget.total_k(), seed))?
                }
                _ => prototype_labels(&x, &need_labels()?)?,
            };
            write_labels(&out, &pseudo)?;
            println!("{} rows -> {} pseudo-classes", pseudo.n(), pseudo.num_classes());
        }
        Cmd::Fit { inputs, labels, train: train_cfg, hidden, teacher, temperature, alpha, extra_labels, out } => {
            let cfg: TrainConfig = json_or_default(train_cfg.as_deref())?;
            let x = read_features(&inputs)?;
            let y = read_labels(&labels)?;
            let extra: Vec<LabelVector> =
                extra_labels.iter().map(read_labels).collect::<Result<_>>()?;
            let mut heads = vec![y.num_classes()];
            heads.extend(extra.iter().map(|l| l.num_classes()));
            let spec = MlpSpec::new(x.d(), hidden, heads)?;
            let teacher = teacher.map(read_checkpoint).transpose()?;
            let objective = match (&teacher, extra.is_empty()) {
                (Some(_), false) => {
                    return Err(Error::Config("--teacher and --extra-labels are exclusive".into()))
                }
                (Some((t, _)), true) => Objective::Distill {
                    config: DistillConfig { temperature, alpha },
                    teacher: t,
                },
                (None, false) => Objective::MultiTask { extra: &extra },
                (None, true) => Objective::CrossEntropy,
            };
            let report = train(&spec, &x, &y, &cfg, &objective)?;
            write_checkpoint(&out, &report.model, cfg.epochs)?;
            println!(
                "{} steps, final epoch loss {:.4}",
                report.steps,
                report.epoch_losses.last().copied().unwrap_or(f64::NAN)
            );
        }
        Cmd::Probe { model, target_train, target_train_labels, target_eval, target_eval_labels, config, lr_grid } => {
            let cfg: ProbeConfig = json_or_default(config.as_deref())?;
            let load = |x: &Path, y: PathBuf| -> Result<Dataset> {
                Dataset::new(read_features(x)?, Some(read_labels(y)?), DatasetRole::Target)
            };
            let tr = load(&target_train, labels_beside(&target_train, target_train_labels))?;
            let ev = load(&target_eval, labels_beside(&target_eval, target_eval_labels))?;
            let (tr_x, ev_x) = match model {
                Some(path) => {
                    let (m, _) = read_checkpoint(path)?;
                    (extract_features(&m, &tr.features)?, extract_features(&m, &ev.features)?)
                }
                None => (tr.features.clone(), ev.features.clone()),
            };
            let (res, lr) = probe_lr_sweep(
                &tr_x,
                tr.require_labels()?,
                &ev_x,
                ev.require_labels()?,
                &cfg,
                &lr_grid,
            )?;
            println!("top1={:.6} train_top1={:.6} lr={lr}", res.top1, res.train_top1);
        }
        Cmd::InjectNoise { labels, p, seed, out } => {
            let y = read_labels(&labels)?;
            let noisy = inject_noise(&y, &NoiseSpec::new(p, seed)?)?;
            let flipped = y.iter().zip(noisy.iter()).filter(|(a, b)| a != b).count();
            let out = out.unwrap_or_else(|| labels.with_extension("noisy.cfl"));
            write_labels(&out, &noisy)?;
            println!(
                "flipped {flipped}/{} ({:.4}) -> {}",
                y.n(),
                flipped as f64 / y.n().max(1) as f64,
                out.display()
            );
        }
        Cmd::Pipeline { config, out } => {
            let mut cfg = ExperimentConfig::from_file(&config).map_err(|e| e.in_stage("config"))?;
            if out.is_some() {
                cfg.output = out;
            }
            let table = clusterfit_run(&cfg)?;
            print!("{}", table.to_csv());
        }
        Cmd::Sweep { config, axis, values, seeds, out } => {
            let mut cfg = ExperimentConfig::from_file(&config).map_err(|e| e.in_stage("config"))?;
            if out.is_some() {
                cfg.output = out;
            }
            let seeds = parse_seeds(&seeds)?;
            let table = sweep(&cfg, axis, &values, &seeds)?;
            print!("{}", table.to_csv());
        }
    }
    Ok(())
}
