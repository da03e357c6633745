//! Experiment drivers: pretrain on the source task, adapt on the target
//! task, and the sweep/bench protocols behind the results tables.
//!
//! Seeding scheme: every run takes one master seed; weight init, adaptation
//! init, shuffling and the per-task dataset splits each draw their own child
//! seed through `derive_seed`, so any piece can be reproduced in isolation.
//! Sweep points get independent child seeds (`derive_seed(master, index)`)
//! while sharing the base checkpoint and the task datasets.

use crate::config::ExperimentConfig;
use crate::footprint::float_footprint;
use crate::report::{BenchCell, BenchResult, RunReport, SweepPoint, SweepResult};
use loralab::adaptation::{
    count_params, instrument, AdaptationMethod, AdaptationState, LoraConfig, Target, TargetSet,
};
use loralab::error::{Error, Result};
use loralab::evaluation::TrialScore;
use loralab::model::{ModelConfig, ModelParams};
use loralab::numerics::{derive_seed, RngStream};
use loralab::scoring::score_dataset;
use loralab::synthdata::{generate_dataset, Dataset, Split};
use loralab::training::{train, train_epoch, AdamState, TrainConfig, TrainOutcome};
use std::io::Write;

// Child-seed channels under one master seed.
const SEED_INIT: u64 = 0x01;
const SEED_INSTRUMENT: u64 = 0x02;
const SEED_SHUFFLE: u64 = 0x03;
const SEED_SOURCE_DATA: u64 = 0x04;
const SEED_TARGET_DATA: u64 = 0x05;

/// Train/dev/eval datasets of one task.
pub struct TaskData {
    pub train: Dataset,
    pub dev: Dataset,
    pub eval: Dataset,
}

/// Generates the three splits of a task with disjoint derived seeds.
pub fn make_task(
    cfg: &ExperimentConfig,
    artifact_freq: f64,
    data_seed: u64,
) -> Result<TaskData> {
    let gen = |split: Split, index: u64| {
        let spec = cfg.dataset_spec(split, artifact_freq, derive_seed(data_seed, index));
        generate_dataset(&spec, split)
    };
    Ok(TaskData {
        train: gen(Split::Train, 1)?,
        dev: gen(Split::Dev, 2)?,
        eval: gen(Split::Eval, 3)?,
    })
}

pub fn source_task(cfg: &ExperimentConfig, master_seed: u64) -> Result<TaskData> {
    make_task(
        cfg,
        cfg.data.source_artifact_freq,
        derive_seed(master_seed, SEED_SOURCE_DATA),
    )
}

pub fn target_task(cfg: &ExperimentConfig, master_seed: u64) -> Result<TaskData> {
    make_task(
        cfg,
        cfg.data.target_artifact_freq,
        derive_seed(master_seed, SEED_TARGET_DATA),
    )
}

pub struct PretrainOutput {
    pub params: ModelParams,
    pub outcome: TrainOutcome,
}

/// Full fine-tuning from random init on the source task, keeping the best
/// dev-EER epoch. The result is the pre-trained backbone the adaptation
/// methods start from.
pub fn run_pretrain(
    cfg: &ExperimentConfig,
    master_seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<PretrainOutput> {
    cfg.validate()?;
    let task = source_task(cfg, master_seed)?;
    let mut params = ModelParams::init(
        &cfg.model,
        &mut RngStream::new(derive_seed(master_seed, SEED_INIT)),
    )?;
    let mut state = instrument(
        &mut params,
        &cfg.model,
        &AdaptationMethod::FullFinetune,
        &mut RngStream::new(derive_seed(master_seed, SEED_INSTRUMENT)),
    )?;
    let tcfg = TrainConfig {
        seed: derive_seed(master_seed, SEED_SHUFFLE),
        ..cfg.train.clone()
    };
    let outcome = train(
        &cfg.model,
        &mut params,
        &mut state,
        &task.train,
        Some(&task.dev),
        &tcfg,
        log,
    )?;
    Ok(PretrainOutput { params, outcome })
}

pub struct AdaptOutput {
    pub params: ModelParams,
    pub state: AdaptationState,
    pub outcome: TrainOutcome,
    pub scores: Vec<TrialScore>,
    pub report: RunReport,
}

/// Adapts a pre-trained backbone to a task with one method, evaluates on
/// the task's eval split and assembles the run report.
pub fn run_adapt_on(
    cfg: &ExperimentConfig,
    base: &ModelParams,
    method: &AdaptationMethod,
    task: &TaskData,
    run_seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<AdaptOutput> {
    cfg.validate()?;
    let mut params = base.clone();
    let mut state = instrument(
        &mut params,
        &cfg.model,
        method,
        &mut RngStream::new(derive_seed(run_seed, SEED_INSTRUMENT)),
    )?;
    let tcfg = TrainConfig {
        seed: derive_seed(run_seed, SEED_SHUFFLE),
        ..cfg.train.clone()
    };
    let outcome = train(
        &cfg.model,
        &mut params,
        &mut state,
        &task.train,
        Some(&task.dev),
        &tcfg,
        log,
    )?;

    let scores = score_dataset(&cfg.model, &params, &state, &task.eval)?;
    let eer = loralab::evaluation::compute_eer(&scores)?;
    let counts = count_params(&params, &state);
    let report = RunReport {
        method: *method,
        method_label: method.label(),
        eer: eer.eer,
        eer_threshold: eer.threshold,
        trainable_params: counts.trainable,
        total_params: counts.total,
        param_ratio: counts.ratio,
        epoch_time_ms: outcome.median_epoch_ms(),
        float_footprint: float_footprint(
            &cfg.model,
            &params,
            &state,
            cfg.train.batch_size,
            cfg.model.max_seq_len,
        ),
        best_epoch: outcome.best_epoch,
        best_dev_eer: outcome.best_dev_eer,
        seed: run_seed,
        config: cfg.clone(),
    };
    Ok(AdaptOutput {
        params,
        state,
        outcome,
        scores,
        report,
    })
}

/// Standalone adapt: generates the target task itself.
pub fn run_adapt(
    cfg: &ExperimentConfig,
    base: &ModelParams,
    method: &AdaptationMethod,
    master_seed: u64,
    log: Option<&mut dyn Write>,
) -> Result<AdaptOutput> {
    let task = target_task(cfg, master_seed)?;
    run_adapt_on(cfg, base, method, &task, master_seed, log)
}

/// Sweep axes, with the default value sets of the results tables.
#[derive(Debug, Clone, PartialEq)]
pub enum SweepAxis {
    Rank(Vec<usize>),
    Targets,
    Length(Vec<usize>),
    Method,
}

impl SweepAxis {
    pub fn parse(name: &str, values: Option<&str>) -> Result<Self> {
        match name {
            "rank" => {
                let v = match values {
                    Some(raw) => parse_usize_list(raw)?,
                    None => vec![2, 4, 8, 16],
                };
                Ok(SweepAxis::Rank(v))
            }
            "targets" => Ok(SweepAxis::Targets),
            "length" => {
                let v = match values {
                    Some(raw) => parse_usize_list(raw)?,
                    None => vec![8, 16, 32, 64],
                };
                Ok(SweepAxis::Length(v))
            }
            "method" => Ok(SweepAxis::Method),
            other => Err(Error::config(format!(
                "unknown sweep axis {other:?}, expected rank|targets|length|method"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            SweepAxis::Rank(_) => "rank",
            SweepAxis::Targets => "targets",
            SweepAxis::Length(_) => "length",
            SweepAxis::Method => "method",
        }
    }
}

pub fn parse_usize_list(raw: &str) -> Result<Vec<usize>> {
    raw.split(',')
        .map(|part| {
            part.trim()
                .parse::<usize>()
                .map_err(|_| Error::config(format!("invalid list entry {part:?}")))
        })
        .collect()
}

/// The seven target subsets in results-table order.
pub fn table_target_subsets() -> Vec<TargetSet> {
    vec![
        TargetSet::new(&[Target::Q]),
        TargetSet::new(&[Target::K]),
        TargetSet::new(&[Target::V]),
        TargetSet::new(&[Target::Q, Target::V]),
        TargetSet::new(&[Target::Q, Target::K]),
        TargetSet::new(&[Target::K, Target::V]),
        TargetSet::new(&[Target::Q, Target::K, Target::V]),
    ]
}

/// The method-comparison line-up: frozen baseline, global fine-tuning, the
/// adapter baseline (bottleneck d_ff/8) and LoRA.
pub fn comparison_methods(cfg: &ModelConfig, lora: LoraConfig) -> Vec<(String, AdaptationMethod)> {
    vec![
        ("fixed".into(), AdaptationMethod::Fixed),
        ("finetune".into(), AdaptationMethod::FullFinetune),
        (
            "adapter".into(),
            AdaptationMethod::Adapter {
                bottleneck: (cfg.d_ff / 8).max(1),
            },
        ),
        ("lora".into(), AdaptationMethod::Lora(lora)),
    ]
}

/// One adapt-and-evaluate run per axis value. All points share the base
/// checkpoint (pretrained here once) and the target-task data seeds; each
/// point's own stochastic parts (adaptation init, shuffling) run under an
/// independent derived seed.
pub fn run_sweep(cfg: &ExperimentConfig, axis: &SweepAxis, master_seed: u64) -> Result<SweepResult> {
    cfg.validate()?;
    let lora_default = LoraConfig::new(4);

    // For the length axis the shared datasets must carry the longest
    // sequences; shorter points crop at batch assembly.
    let mut data_cfg = cfg.clone();
    if let SweepAxis::Length(values) = axis {
        if values.is_empty() {
            return Err(Error::config("length sweep needs at least one value"));
        }
        let longest = *values.iter().max().expect("non-empty");
        data_cfg.data.seq_len = Some(longest.max(cfg.data.seq_len.unwrap_or(cfg.model.max_seq_len)));
    }

    let pretrain = run_pretrain(&data_cfg, master_seed, None)?;
    let task = target_task(&data_cfg, master_seed)?;

    let mut points: Vec<(String, ExperimentConfig, AdaptationMethod)> = Vec::new();
    match axis {
        SweepAxis::Rank(values) => {
            let mut sorted = values.clone();
            sorted.sort_unstable();
            sorted.dedup();
            for r in sorted {
                let method = AdaptationMethod::Lora(LoraConfig::new(r));
                points.push((r.to_string(), data_cfg.clone(), method));
            }
        }
        SweepAxis::Targets => {
            for targets in table_target_subsets() {
                let method =
                    AdaptationMethod::Lora(LoraConfig::new(lora_default.rank).with_targets(targets));
                points.push((targets.to_string(), data_cfg.clone(), method));
            }
        }
        SweepAxis::Length(values) => {
            let mut sorted = values.clone();
            sorted.sort_unstable();
            sorted.dedup();
            for l in sorted {
                let mut point_cfg = data_cfg.clone();
                point_cfg.model.max_seq_len = l;
                points.push((l.to_string(), point_cfg, AdaptationMethod::Lora(lora_default)));
            }
        }
        SweepAxis::Method => {
            for (label, method) in comparison_methods(&cfg.model, lora_default) {
                points.push((label, data_cfg.clone(), method));
            }
        }
    }

    let mut out = Vec::with_capacity(points.len());
    for (index, (value, point_cfg, method)) in points.into_iter().enumerate() {
        let point_seed = derive_seed(master_seed, index as u64);
        let result = run_adapt_on(&point_cfg, &pretrain.params, &method, &task, point_seed, None)?;
        out.push(SweepPoint {
            value,
            report: result.report,
        });
    }
    Ok(SweepResult {
        axis: axis.name().to_string(),
        points: out,
    })
}

/// Timing/footprint grid over (sequence length, batch size) for full
/// fine-tuning versus LoRA: one warm-up epoch, then the median of three
/// measured epochs per cell. Cells run serially to keep timing honest.
pub fn run_bench(
    cfg: &ExperimentConfig,
    lengths: &[usize],
    batches: &[usize],
    master_seed: u64,
) -> Result<BenchResult> {
    cfg.validate()?;
    if lengths.is_empty() || batches.is_empty() {
        return Err(Error::config("bench needs at least one length and one batch size"));
    }
    let mut lengths = lengths.to_vec();
    lengths.sort_unstable();
    lengths.dedup();
    let mut batches = batches.to_vec();
    batches.sort_unstable();
    batches.dedup();

    // One dataset at the longest length serves every cell via cropping.
    let mut data_cfg = cfg.clone();
    let longest = *lengths.iter().max().expect("non-empty");
    data_cfg.data.seq_len = Some(longest);
    let spec = data_cfg.dataset_spec(
        Split::Train,
        data_cfg.data.source_artifact_freq,
        derive_seed(master_seed, SEED_SOURCE_DATA),
    );
    let train_set = generate_dataset(&spec, Split::Train)?;

    let methods = [
        AdaptationMethod::FullFinetune,
        AdaptationMethod::Lora(LoraConfig::new(4)),
    ];

    let mut cells = Vec::new();
    for (li, &seq_len) in lengths.iter().enumerate() {
        for (bi, &batch_size) in batches.iter().enumerate() {
            let mut cell = BenchCell {
                seq_len,
                batch_size,
                finetune_epoch_ms: 0.0,
                lora_epoch_ms: 0.0,
                finetune_footprint: 0,
                lora_footprint: 0,
            };
            let mut model_cfg = cfg.model.clone();
            model_cfg.max_seq_len = seq_len;
            let tcfg = TrainConfig {
                batch_size,
                ..cfg.train.clone()
            };
            for (mi, method) in methods.iter().enumerate() {
                let cell_seed =
                    derive_seed(master_seed, ((li * batches.len() + bi) * 2 + mi) as u64);
                let mut params =
                    ModelParams::init(&model_cfg, &mut RngStream::new(cell_seed))?;
                let mut state = instrument(
                    &mut params,
                    &model_cfg,
                    method,
                    &mut RngStream::new(derive_seed(cell_seed, SEED_INSTRUMENT)),
                )?;
                let mut adam = AdamState::init(&params, &state);
                let mut rng = RngStream::new(derive_seed(cell_seed, SEED_SHUFFLE));
                let mut measured = Vec::with_capacity(3);
                for epoch in 0..4 {
                    let stats = train_epoch(
                        &model_cfg, &mut params, &mut state, &mut adam, &train_set, &tcfg,
                        &mut rng,
                    )?;
                    if epoch > 0 {
                        measured.push(stats.wall_time_ms);
                    }
                }
                let epoch_ms = loralab::training::median(measured.into_iter());
                let footprint =
                    float_footprint(&model_cfg, &params, &state, batch_size, seq_len);
                match method {
                    AdaptationMethod::FullFinetune => {
                        cell.finetune_epoch_ms = epoch_ms;
                        cell.finetune_footprint = footprint;
                    }
                    _ => {
                        cell.lora_epoch_ms = epoch_ms;
                        cell.lora_footprint = footprint;
                    }
                }
            }
            cells.push(cell);
        }
    }

    Ok(BenchResult {
        lengths,
        batches,
        trials_per_class: cfg.data.n_train_per_class,
        cells,
    })
}

/// Convenience wrapper used by tests and the method-comparison protocols:
/// pretrain once, then adapt every comparison method on the same target
/// task.
pub fn run_method_comparison(
    cfg: &ExperimentConfig,
    lora: LoraConfig,
    master_seed: u64,
) -> Result<Vec<(String, RunReport)>> {
    let pretrain = run_pretrain(cfg, master_seed, None)?;
    let task = target_task(cfg, master_seed)?;
    let mut out = Vec::new();
    for (index, (label, method)) in comparison_methods(&cfg.model, lora).into_iter().enumerate() {
        let point_seed = derive_seed(master_seed, index as u64);
        let result = run_adapt_on(cfg, &pretrain.params, &method, &task, point_seed, None)?;
        out.push((label, result.report));
    }
    Ok(out)
}

/// Scores of the eval split under an untouched pre-trained model, used by
/// `evaluate` when no adaptation delta is supplied.
pub fn evaluate_pretrained(
    cfg: &ExperimentConfig,
    params: &ModelParams,
    dataset: &Dataset,
) -> Result<(Vec<TrialScore>, loralab::evaluation::EerResult)> {
    let mut frozen = params.clone();
    let state = instrument(
        &mut frozen,
        &cfg.model,
        &AdaptationMethod::Fixed,
        &mut RngStream::new(0),
    )?;
    let scores = score_dataset(&cfg.model, &frozen, &state, dataset)?;
    let eer = loralab::evaluation::compute_eer(&scores)?;
    Ok((scores, eer))
}
