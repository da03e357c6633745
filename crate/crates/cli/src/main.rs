use clap::{Args, Parser, Subcommand};
use loralab::adaptation::{AdaptationMethod, LoraConfig, TargetSet};
use loralab::error::{Error, Result};
use loralab::model::{apply_delta, read_base, read_delta, write_base, write_delta};
use loralab::synthdata::{generate_dataset, read_dataset, write_dataset, Split};
use loralab::training::grad_check;
use loralab_cli::config::ExperimentConfig;
use loralab_cli::experiment::{
    self, parse_usize_list, run_adapt, run_bench, run_pretrain, run_sweep, SweepAxis,
};
use std::io::Write as IoWrite;
use std::path::{Path, PathBuf};

#[derive(Parser)]
#[command(
    name = "loralab",
    about = "Parameter-efficient fine-tuning lab: train, adapt, evaluate and benchmark a toy transformer spoof detector",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone, Default)]
struct ConfigArgs {
    /// JSON experiment config; flags below override its fields
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    d_model: Option<usize>,
    #[arg(long)]
    n_heads: Option<usize>,
    #[arg(long)]
    n_layers: Option<usize>,
    #[arg(long)]
    d_ff: Option<usize>,
    #[arg(long)]
    max_seq_len: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
    #[arg(long)]
    batch_size: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    n_per_class: Option<usize>,
    #[arg(long)]
    n_eval_per_class: Option<usize>,
    #[arg(long)]
    noise_sigma: Option<f64>,
    #[arg(long)]
    artifact_amp: Option<f64>,
    #[arg(long)]
    artifact_dims: Option<usize>,
    #[arg(long)]
    source_freq: Option<f64>,
    #[arg(long)]
    target_freq: Option<f64>,
}

impl ConfigArgs {
    fn resolve(&self) -> Result<ExperimentConfig> {
        let mut cfg = match &self.config {
            Some(path) => {
                require_input(path)?;
                ExperimentConfig::load(path)?
            }
            None => ExperimentConfig::desk_scale(),
        };
        macro_rules! set {
            ($field:expr, $value:expr) => {
                if let Some(v) = $value {
                    $field = v;
                }
            };
        }
        set!(cfg.model.d_model, self.d_model);
        set!(cfg.model.n_heads, self.n_heads);
        set!(cfg.model.n_layers, self.n_layers);
        set!(cfg.model.d_ff, self.d_ff);
        set!(cfg.model.max_seq_len, self.max_seq_len);
        set!(cfg.train.learning_rate, self.learning_rate);
        set!(cfg.train.batch_size, self.batch_size);
        set!(cfg.train.epochs, self.epochs);
        set!(cfg.data.n_train_per_class, self.n_per_class);
        set!(cfg.data.n_eval_per_class, self.n_eval_per_class);
        set!(cfg.data.noise_sigma, self.noise_sigma);
        set!(cfg.data.artifact_amp, self.artifact_amp);
        set!(cfg.data.source_artifact_freq, self.source_freq);
        set!(cfg.data.target_artifact_freq, self.target_freq);
        if self.artifact_dims.is_some() {
            cfg.data.artifact_dims = self.artifact_dims;
        }
        cfg.validate()?;
        Ok(cfg)
    }
}

#[derive(Args, Clone)]
struct MethodArgs {
    /// Adaptation method: fixed | finetune | lora | adapter
    #[arg(long, default_value = "lora")]
    method: String,
    /// LoRA rank
    #[arg(long, default_value_t = 4)]
    rank: usize,
    /// LoRA scaling alpha (defaults to the rank)
    #[arg(long)]
    alpha: Option<f64>,
    /// LoRA injection sites, subset of q,k,v
    #[arg(long, default_value = "q,v")]
    targets: String,
    /// Adapter bottleneck width (defaults to d_ff / 8)
    #[arg(long)]
    bottleneck: Option<usize>,
}

impl MethodArgs {
    fn resolve(&self, cfg: &ExperimentConfig) -> Result<AdaptationMethod> {
        match self.method.as_str() {
            "fixed" => Ok(AdaptationMethod::Fixed),
            "finetune" => Ok(AdaptationMethod::FullFinetune),
            "lora" => {
                let targets: TargetSet = self.targets.parse()?;
                let mut lora = LoraConfig::new(self.rank).with_targets(targets);
                if let Some(alpha) = self.alpha {
                    lora = lora.with_alpha(alpha);
                }
                Ok(AdaptationMethod::Lora(lora))
            }
            "adapter" => Ok(AdaptationMethod::Adapter {
                bottleneck: self.bottleneck.unwrap_or((cfg.model.d_ff / 8).max(1)),
            }),
            other => Err(Error::config(format!(
                "unknown method {other:?}, expected fixed|finetune|lora|adapter"
            ))),
        }
    }
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset file
    GenData {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Which task's artifact frequency to use: source | target
        #[arg(long, default_value = "source")]
        task: String,
        /// Split tag used in trial ids: train | dev | eval
        #[arg(long, default_value = "train")]
        split: String,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Train the backbone on the source task and write a base checkpoint
    Pretrain {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Append per-epoch JSON lines here
        #[arg(long)]
        log: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Adapt a pre-trained backbone to the target task with one method
    Adapt {
        /// Base checkpoint from `pretrain`
        #[arg(long)]
        base: PathBuf,
        /// Output checkpoint: a delta for fixed/lora/adapter, a full
        /// checkpoint for finetune
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[arg(long)]
        log: Option<PathBuf>,
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Score a dataset with a checkpoint, or compute EER of a score file
    Evaluate {
        /// Base checkpoint (optionally with --delta) to score --data with
        #[arg(long)]
        checkpoint: Option<PathBuf>,
        #[arg(long)]
        delta: Option<PathBuf>,
        /// Dataset file to score (required with --checkpoint)
        #[arg(long)]
        data: Option<PathBuf>,
        /// Score file: output when scoring, input when no checkpoint given
        #[arg(long)]
        scores: Option<PathBuf>,
        #[arg(long)]
        report: Option<PathBuf>,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Verify analytic gradients against central finite differences
    GradCheck {
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: Option<PathBuf>,
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Report parameter counts for a method on a geometry
    CountParams {
        #[command(flatten)]
        method: MethodArgs,
        #[command(flatten)]
        config: ConfigArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// One adapt+evaluate run per axis value; writes SweepResult JSON + CSV
    Sweep {
        /// rank | targets | length | method
        #[arg(long)]
        axis: String,
        /// Comma-separated values for the rank/length axes
        #[arg(long)]
        values: Option<String>,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
    /// Epoch-time and footprint grid over lengths x batch sizes
    Bench {
        #[arg(long, default_value = "8,16,32,64")]
        lengths: String,
        #[arg(long, default_value = "2,4,8,16,32")]
        batches: String,
        #[arg(long)]
        out_dir: PathBuf,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[command(flatten)]
        config: ConfigArgs,
    },
}

fn require_input(path: &Path) -> Result<()> {
    if !path.exists() {
        return Err(Error::config(format!(
            "input file not found: {}",
            path.display()
        )));
    }
    Ok(())
}

fn write_text(path: &Path, text: &str) -> Result<()> {
    std::fs::write(path, text).map_err(|e| Error::io(path, e))
}

fn write_json<T: serde::Serialize>(path: &Path, value: &T) -> Result<()> {
    let text = serde_json::to_string_pretty(value)
        .map_err(|e| Error::contract(format!("serialization failed: {e}")))?;
    write_text(path, &(text + "\n"))
}

fn open_log(path: &Option<PathBuf>) -> Result<Option<std::fs::File>> {
    match path {
        Some(p) => {
            let file = std::fs::OpenOptions::new()
                .create(true)
                .append(true)
                .open(p)
                .map_err(|e| Error::io(p, e))?;
            Ok(Some(file))
        }
        None => Ok(None),
    }
}

fn parse_split(raw: &str) -> Result<Split> {
    match raw {
        "train" => Ok(Split::Train),
        "dev" => Ok(Split::Dev),
        "eval" => Ok(Split::Eval),
        other => Err(Error::config(format!(
            "unknown split {other:?}, expected train|dev|eval"
        ))),
    }
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::GenData {
            out,
            seed,
            task,
            split,
            config,
        } => {
            let cfg = config.resolve()?;
            let freq = match task.as_str() {
                "source" => cfg.data.source_artifact_freq,
                "target" => cfg.data.target_artifact_freq,
                other => {
                    return Err(Error::config(format!(
                        "unknown task {other:?}, expected source|target"
                    )))
                }
            };
            let split = parse_split(&split)?;
            let spec = cfg.dataset_spec(split, freq, seed);
            let ds = generate_dataset(&spec, split)?;
            write_dataset(&out, &ds)?;
            println!("wrote {} trials to {}", ds.len(), out.display());
        }
        Command::Pretrain {
            out,
            seed,
            log,
            report,
            config,
        } => {
            let cfg = config.resolve()?;
            let mut log_file = open_log(&log)?;
            let result = run_pretrain(
                &cfg,
                seed,
                log_file.as_mut().map(|f| f as &mut dyn IoWrite),
            )?;
            write_base(&out, &cfg.model, &result.params)?;
            if let Some(path) = report {
                write_json(
                    &path,
                    &serde_json::json!({
                        "best_epoch": result.outcome.best_epoch,
                        "best_dev_eer": result.outcome.best_dev_eer,
                        "median_epoch_ms": result.outcome.median_epoch_ms(),
                        "final_loss": result.outcome.final_loss(),
                        "seed": seed,
                        "config": cfg,
                    }),
                )?;
            }
            println!(
                "pretrained {} epochs (best dev EER {:?}); checkpoint at {}",
                result.outcome.history.len(),
                result.outcome.best_dev_eer,
                out.display()
            );
        }
        Command::Adapt {
            base,
            out,
            seed,
            scores,
            report,
            log,
            method,
            config,
        } => {
            require_input(&base)?;
            let cfg = config.resolve()?;
            let method = method.resolve(&cfg)?;
            let (base_cfg, base_params) = read_base(&base)?;
            if base_cfg != cfg.model {
                return Err(Error::config(format!(
                    "checkpoint geometry (d_model {}) does not match the requested config (d_model {})",
                    base_cfg.d_model, cfg.model.d_model
                )));
            }
            let mut log_file = open_log(&log)?;
            let result = run_adapt(
                &cfg,
                &base_params,
                &method,
                seed,
                log_file.as_mut().map(|f| f as &mut dyn IoWrite),
            )?;
            match method {
                AdaptationMethod::FullFinetune => {
                    write_base(&out, &cfg.model, &result.params)?
                }
                _ => write_delta(&out, &cfg.model, &result.params, &result.state)?,
            }
            if let Some(path) = scores {
                loralab::evaluation::write_scores(&path, &result.scores)?;
            }
            if let Some(path) = report {
                write_json(&path, &result.report)?;
            }
            println!(
                "{}: eval EER {:.4}, {} trainable params, checkpoint at {}",
                result.report.method_label,
                result.report.eer,
                result.report.trainable_params,
                out.display()
            );
        }
        Command::Evaluate {
            checkpoint,
            delta,
            data,
            scores,
            report,
            config,
        } => {
            let (trial_scores, eer) = match checkpoint {
                Some(ckpt_path) => {
                    require_input(&ckpt_path)?;
                    let data_path = data.ok_or_else(|| {
                        Error::config("--data is required when scoring a checkpoint")
                    })?;
                    require_input(&data_path)?;
                    let (model_cfg, mut params) = read_base(&ckpt_path)?;
                    let mut cfg = config.resolve()?;
                    cfg.model = model_cfg;
                    let ds = read_dataset(&data_path, Split::Eval)?;
                    let (trial_scores, eer) = match delta {
                        Some(delta_path) => {
                            require_input(&delta_path)?;
                            let delta = read_delta(&delta_path)?;
                            let state = apply_delta(&mut params, &cfg.model, delta)?;
                            let s = loralab::scoring::score_dataset(
                                &cfg.model, &params, &state, &ds,
                            )?;
                            let e = loralab::evaluation::compute_eer(&s)?;
                            (s, e)
                        }
                        None => experiment::evaluate_pretrained(&cfg, &params, &ds)?,
                    };
                    if let Some(path) = &scores {
                        loralab::evaluation::write_scores(path, &trial_scores)?;
                    }
                    (trial_scores, eer)
                }
                None => {
                    let scores_path = scores.ok_or_else(|| {
                        Error::config("either --checkpoint or --scores must be given")
                    })?;
                    require_input(&scores_path)?;
                    let trial_scores = loralab::evaluation::read_scores(&scores_path)?;
                    let eer = loralab::evaluation::compute_eer(&trial_scores)?;
                    (trial_scores, eer)
                }
            };
            let n_genuine = trial_scores
                .iter()
                .filter(|t| t.label == loralab::evaluation::Label::Genuine)
                .count();
            let summary = loralab::evaluation::EerReport {
                eer: eer.eer,
                threshold: eer.threshold,
                n_genuine,
                n_spoof: trial_scores.len() - n_genuine,
            };
            let text = serde_json::to_string_pretty(&summary)
                .map_err(|e| Error::contract(format!("serialization failed: {e}")))?;
            if let Some(path) = report {
                write_text(&path, &(text.clone() + "\n"))?;
            }
            println!("{text}");
        }
        Command::GradCheck {
            seed,
            out,
            method,
            config,
        } => {
            let mut config = config;
            // Gradient checking differentiates every scalar; keep it tiny.
            if config.d_model.is_none() {
                config.d_model = Some(8);
                config.n_heads = Some(2);
                config.n_layers = Some(1);
                config.d_ff = Some(16);
                config.max_seq_len = Some(4);
            }
            let cfg = config.resolve()?;
            if cfg.model.d_model > 16 {
                return Err(Error::config(
                    "grad-check is quadratic in parameter count; use d_model <= 16",
                ));
            }
            let method = method.resolve(&cfg)?;
            let report = grad_check(&cfg.model, &method, seed)?;
            println!(
                "max relative error {:.3e} over {} tensors",
                report.max_rel_error,
                report.per_tensor.len()
            );
            for t in &report.per_tensor {
                println!("  {:30} checked {:6} max rel {:.3e}", t.name, t.checked, t.max_rel_error);
            }
            if let Some(path) = out {
                write_json(&path, &report)?;
            }
            if report.max_rel_error > 1e-4 {
                return Err(Error::contract(format!(
                    "gradient check failed: {:.3e} > 1e-4",
                    report.max_rel_error
                )));
            }
        }
        Command::CountParams { method, config, out } => {
            let cfg = config.resolve()?;
            let method = method.resolve(&cfg)?;
            let mut params = loralab::model::ModelParams::init(
                &cfg.model,
                &mut loralab::numerics::RngStream::new(0),
            )?;
            let state = loralab::adaptation::instrument(
                &mut params,
                &cfg.model,
                &method,
                &mut loralab::numerics::RngStream::new(1),
            )?;
            let report = loralab::adaptation::count_params(&params, &state);
            let payload = serde_json::json!({
                "method": method,
                "method_label": method.label(),
                "total": report.total,
                "trainable": report.trainable,
                "frozen": report.frozen,
                "ratio": report.ratio,
            });
            let text = serde_json::to_string_pretty(&payload)
                .map_err(|e| Error::contract(format!("serialization failed: {e}")))?;
            if let Some(path) = out {
                write_text(&path, &(text.clone() + "\n"))?;
            }
            println!("{text}");
        }
        Command::Sweep {
            axis,
            values,
            out_dir,
            seed,
            config,
        } => {
            let cfg = config.resolve()?;
            let axis = SweepAxis::parse(&axis, values.as_deref())?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let result = run_sweep(&cfg, &axis, seed)?;
            let json_path = out_dir.join(format!("sweep_{}.json", result.axis));
            let csv_path = out_dir.join(format!("sweep_{}.csv", result.axis));
            write_json(&json_path, &result)?;
            write_text(&csv_path, &result.to_csv())?;
            println!("{}", result.to_csv());
            println!("wrote {} and {}", json_path.display(), csv_path.display());
        }
        Command::Bench {
            lengths,
            batches,
            out_dir,
            seed,
            config,
        } => {
            let cfg = config.resolve()?;
            let lengths = parse_usize_list(&lengths)?;
            let batches = parse_usize_list(&batches)?;
            std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
            let result = run_bench(&cfg, &lengths, &batches, seed)?;
            let json_path = out_dir.join("bench.json");
            let csv_path = out_dir.join("bench.csv");
            write_json(&json_path, &result)?;
            write_text(&csv_path, &result.to_csv())?;
            println!("{}", result.to_csv());
            println!("wrote {} and {}", json_path.display(), csv_path.display());
        }
    }
    Ok(())
}

fn main() {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => {}
        Err(e) => {
            eprintln!("error: {e}");
            let code = match e {
                Error::Io { .. } | Error::Contract(_) => 3,
                _ => 2,
            };
            std::process::exit(code);
        }
    }
}
