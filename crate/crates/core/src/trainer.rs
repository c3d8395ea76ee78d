//! Cross-entropy pretraining followed by alternating adversarial updates.

use std::fs::{File, OpenOptions};
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use navinstruct_tensor::{clip_grad_norm, AdamConfig, AdamState, Graph, Stream, Tensor};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::checkpoint;
use crate::config::TrainConfig;
use crate::data::Trajectory;
use crate::discriminator::{Discriminator, GraphText, DISCRIMINATOR_GROUP};
use crate::error::{io_err, CoreError, Result};
use crate::generator::{Generator, GENERATOR_GROUP};
use crate::text::Vocab;

const DOMAIN_INIT_G: u64 = 10;
const DOMAIN_INIT_D: u64 = 11;
const DOMAIN_CE_BATCH: u64 = 20;
const DOMAIN_CE_REF: u64 = 21;
const DOMAIN_GAN_BATCH: u64 = 30;
const DOMAIN_GAN_REF: u64 = 31;
const DOMAIN_D_FAKE: u64 = 32;
const DOMAIN_G_FAKE: u64 = 33;

const EMA_DECAY: f64 = 0.9;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Phase {
    #[serde(rename = "CE")]
    Ce,
    #[serde(rename = "GAN")]
    Gan,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainLogRecord {
    pub step: u64,
    pub phase: Phase,
    pub l_ce: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_g: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub l_d: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_real: Option<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub p_fake: Option<f64>,
    /// Per-example clamped probabilities of the last discriminator update.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_real_each: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub p_fake_each: Vec<f64>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub l_d_each: Vec<f64>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tau: Option<f64>,
    pub wall_time: f64,
}

impl TrainLogRecord {
    /// The record with `wall_time` zeroed, for run-to-run comparison.
    pub fn timeless(&self) -> Self {
        Self {
            wall_time: 0.0,
            ..self.clone()
        }
    }

    fn check_finite(&self) -> Result<()> {
        let scalars = [
            ("l_ce", Some(self.l_ce)),
            ("l_g", self.l_g),
            ("l_d", self.l_d),
            ("p_real", self.p_real),
            ("p_fake", self.p_fake),
        ];
        for (what, v) in scalars {
            if let Some(v) = v {
                if !v.is_finite() {
                    return Err(CoreError::NonFinite {
                        what: format!("{what}={v} in {}", serde_json::to_string(self).unwrap_or_default()),
                        step: self.step,
                    });
                }
            }
        }
        Ok(())
    }
}

/// Trajectories with their references encoded once.
#[derive(Debug, Clone)]
pub struct TrainingCorpus {
    pub trajectories: Vec<Trajectory>,
    pub references: Vec<Vec<Vec<usize>>>,
}

impl TrainingCorpus {
    pub fn new(trajectories: Vec<Trajectory>, vocab: &Vocab) -> Result<Self> {
        if trajectories.is_empty() {
            return Err(CoreError::EmptyCorpus);
        }
        let mut references = Vec::with_capacity(trajectories.len());
        for t in &trajectories {
            if t.references.is_empty() {
                return Err(CoreError::Invalid(format!("{}: no references", t.id)));
            }
            let mut encoded = Vec::with_capacity(t.references.len());
            for r in &t.references {
                let ids = vocab.encode(r);
                if ids.is_empty() {
                    return Err(CoreError::EmptyReference);
                }
                encoded.push(ids);
            }
            references.push(encoded);
        }
        Ok(Self {
            trajectories,
            references,
        })
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Everything a run needs to continue: both models, both optimizers, counters.
#[derive(Debug, Clone)]
pub struct TrainState {
    pub config: TrainConfig,
    pub vocab_hash: String,
    pub generator: Generator,
    pub discriminator: Discriminator,
    pub adam_g: AdamState,
    pub adam_d: AdamState,
    /// Updates completed over the whole run.
    pub step: u64,
    pub phase: Phase,
    /// Updates completed in the current phase.
    pub phase_step: u64,
    pub ce_ema: Option<f64>,
}

impl TrainState {
    pub fn new(config: TrainConfig, vocab: &Vocab, d_img: usize) -> Result<Self> {
        config.validate()?;
        let layout = config.layout();
        let mut generator = Generator::new(
            config.generator_dims(vocab.len(), d_img),
            layout,
            &mut Stream::new(config.seed, DOMAIN_INIT_G, 0),
        );
        generator.feed = config.feed;
        let mut discriminator = Discriminator::new(
            config.discriminator_dims(vocab.len(), d_img),
            layout,
            &mut Stream::new(config.seed, DOMAIN_INIT_D, 0),
        );
        discriminator.pooling = config.pooling;
        let adam = AdamConfig::with_lr(config.lr);
        let adam_g = AdamState::new(adam, generator.net.store.tensors());
        let adam_d = AdamState::new(adam, discriminator.net.store.tensors());
        Ok(Self {
            config,
            vocab_hash: vocab.hash(),
            generator,
            discriminator,
            adam_g,
            adam_d,
            step: 0,
            phase: Phase::Ce,
            phase_step: 0,
            ce_ema: None,
        })
    }

    fn ce_done(&self) -> bool {
        self.phase_step >= self.config.ce_max_steps
            || (self.config.ce_stop_loss > 0.0
                && self.ce_ema.is_some_and(|e| e < self.config.ce_stop_loss))
    }
}

/// Indices of batch `step` under a seeded per-epoch shuffle.
pub fn batch_indices(seed: u64, domain: u64, step: u64, n: usize, batch: usize) -> Vec<usize> {
    let b = batch.min(n);
    let per_epoch = n.div_ceil(b) as u64;
    let epoch = step / per_epoch;
    let within = (step % per_epoch) as usize;
    let mut perm: Vec<usize> = (0..n).collect();
    Stream::new(seed, domain, epoch).shuffle(&mut perm);
    perm[within * b..((within + 1) * b).min(n)].to_vec()
}

fn pick_references(
    corpus: &TrainingCorpus,
    batch: &[usize],
    seed: u64,
    domain: u64,
    step: u64,
) -> Vec<usize> {
    let mut rng = Stream::new(seed, domain, step);
    batch
        .iter()
        .map(|&i| rng.below(corpus.references[i].len()))
        .collect()
}

fn example_stream(seed: u64, domain: u64, counter: u64, i: usize) -> Stream {
    Stream::new(seed, domain, counter).substream(i as u64)
}

/// Sums per-example gradients in batch order and divides by the batch size.
fn reduce_mean(parts: Vec<Vec<Tensor>>, zeros: Vec<Tensor>) -> Vec<Tensor> {
    let n = parts.len() as f64;
    let mut acc = zeros;
    for p in parts {
        for (a, g) in acc.iter_mut().zip(&p) {
            a.add_assign(g);
        }
    }
    for a in &mut acc {
        a.scale_assign(1.0 / n);
    }
    acc
}

fn group_gradients(g: &Graph, loss: navinstruct_tensor::Var, group: u8, zeros: Vec<Tensor>) -> Result<Vec<Tensor>> {
    let grads = g.backward(loss)?;
    let mut acc = zeros;
    grads.accumulate_group(group, &mut acc);
    Ok(acc)
}

fn mean(v: &[f64]) -> f64 {
    v.iter().sum::<f64>() / v.len() as f64
}

fn ensure_finite(values: &[f64], what: &str, step: u64) -> Result<()> {
    match values.iter().find(|v| !v.is_finite()) {
        Some(v) => Err(CoreError::NonFinite {
            what: format!("{what}={v}"),
            step,
        }),
        None => Ok(()),
    }
}

/// One cross-entropy update of the generator.
pub fn ce_step(state: &mut TrainState, corpus: &TrainingCorpus, vocab: &Vocab) -> Result<TrainLogRecord> {
    let c = &state.config;
    let k = state.phase_step;
    let batch = batch_indices(c.seed, DOMAIN_CE_BATCH, k, corpus.len(), c.batch_size);
    let picks = pick_references(corpus, &batch, c.seed, DOMAIN_CE_REF, k);
    let gen = &state.generator;
    let results: Vec<Result<(f64, Vec<Tensor>)>> = batch
        .par_iter()
        .zip(&picks)
        .map(|(&i, &r)| {
            let mut g = Graph::new();
            let (loss, _) =
                gen.teacher_forced_loss(&mut g, &corpus.trajectories[i], &corpus.references[i][r], vocab)?;
            let value = g.value(loss).item();
            let grads = group_gradients(&g, loss, GENERATOR_GROUP, gen.net.store.zeros_like())?;
            Ok((value, grads))
        })
        .collect();
    let (losses, grads): (Vec<f64>, Vec<Vec<Tensor>>) =
        results.into_iter().collect::<Result<Vec<_>>>()?.into_iter().unzip();
    ensure_finite(&losses, "l_ce", state.step)?;
    let mut grad = reduce_mean(grads, gen.net.store.zeros_like());
    clip_grad_norm(&mut grad, c.clip_norm);
    state
        .adam_g
        .step(state.generator.net.store.tensors_mut(), &grad)?;

    let l_ce = mean(&losses);
    state.ce_ema = Some(match state.ce_ema {
        Some(e) => EMA_DECAY * e + (1.0 - EMA_DECAY) * l_ce,
        None => l_ce,
    });
    let record = TrainLogRecord {
        step: state.step,
        phase: Phase::Ce,
        l_ce,
        l_g: None,
        l_d: None,
        p_real: None,
        p_fake: None,
        p_real_each: Vec::new(),
        p_fake_each: Vec::new(),
        l_d_each: Vec::new(),
        tau: None,
        wall_time: 0.0,
    };
    state.step += 1;
    state.phase_step += 1;
    Ok(record)
}

struct DExample {
    loss: f64,
    p_real: f64,
    p_fake: f64,
    grads: Vec<Tensor>,
}

/// Discriminator loss and gradients for one example, with the fake
/// instruction generated outside the graph.
fn discriminator_example(
    state: &TrainState,
    traj: &Trajectory,
    reference: &[usize],
    vocab: &Vocab,
    tau: f64,
    rng: &mut Stream,
) -> Result<DExample> {
    let c = &state.config;
    let fake = {
        let mut g = Graph::new();
        let soft = state
            .generator
            .generate_soft(&mut g, traj, vocab, tau, rng, c.max_instruction_len)?;
        soft.instruction_rows(&mut g).map(|v| g.value(v).clone())
    };
    let d = &state.discriminator;
    let mut g = Graph::new();
    let p_real = d.score_var(&mut g, traj, GraphText::Hard(reference), vocab)?;
    let p_fake = match fake {
        Some(rows) => {
            let v = g.constant(rows);
            d.score_var(&mut g, traj, GraphText::Soft(v), vocab)?
        }
        None => d.score_var(&mut g, traj, GraphText::Empty, vocab)?,
    };
    let l_fake = g.bce(p_fake, false)?;
    let l_real = g.bce(p_real, true)?;
    let loss = g.add(l_fake, l_real);
    Ok(DExample {
        loss: g.value(loss).item(),
        p_real: navinstruct_tensor::clamp_prob(g.value(p_real).item()),
        p_fake: navinstruct_tensor::clamp_prob(g.value(p_fake).item()),
        grads: group_gradients(&g, loss, DISCRIMINATOR_GROUP, d.net.store.zeros_like())?,
    })
}

struct GExample {
    ce: f64,
    adv: f64,
    grads: Vec<Tensor>,
}

fn generator_example(
    state: &TrainState,
    traj: &Trajectory,
    reference: &[usize],
    vocab: &Vocab,
    tau: f64,
    rng: &mut Stream,
) -> Result<GExample> {
    let c = &state.config;
    let gen = &state.generator;
    let mut g = Graph::new();
    let soft = gen.generate_soft(&mut g, traj, vocab, tau, rng, c.max_instruction_len)?;
    let text = match soft.instruction_rows(&mut g) {
        Some(v) => GraphText::Soft(v),
        None => GraphText::Empty,
    };
    let p = state.discriminator.score_var(&mut g, traj, text, vocab)?;
    let adv = g.bce(p, true)?;
    let (ce, _) = gen.teacher_forced_loss(&mut g, traj, reference, vocab)?;
    let weighted_ce = g.scale(ce, c.ce_weight);
    let weighted_adv = g.scale(adv, c.lambda_adv);
    let total = g.add(weighted_ce, weighted_adv);
    Ok(GExample {
        ce: g.value(ce).item(),
        adv: g.value(adv).item(),
        grads: group_gradients(&g, total, GENERATOR_GROUP, gen.net.store.zeros_like())?,
    })
}

/// Batch and reference choice of the current fine-tuning step.
#[derive(Debug, Clone, PartialEq)]
pub struct GanBatch {
    pub examples: Vec<usize>,
    pub references: Vec<usize>,
    pub tau: f64,
}

pub fn gan_batch(state: &TrainState, corpus: &TrainingCorpus) -> GanBatch {
    let c = &state.config;
    let k = state.phase_step;
    let examples = batch_indices(c.seed, DOMAIN_GAN_BATCH, k, corpus.len(), c.batch_size);
    let references = pick_references(corpus, &examples, c.seed, DOMAIN_GAN_REF, k);
    GanBatch {
        examples,
        references,
        tau: c.tau_at(k),
    }
}

/// Per-example results of a discriminator update.
#[derive(Debug, Clone, PartialEq)]
pub struct DiscriminatorOutcome {
    pub losses: Vec<f64>,
    pub p_real: Vec<f64>,
    pub p_fake: Vec<f64>,
}

/// `d_steps` discriminator updates with the generator frozen. Only the
/// discriminator and its optimizer change. Reports the last update.
pub fn discriminator_update(
    state: &mut TrainState,
    corpus: &TrainingCorpus,
    vocab: &Vocab,
    batch: &GanBatch,
) -> Result<DiscriminatorOutcome> {
    let c = state.config.clone();
    let mut last = None;
    for rep in 0..c.d_steps {
        let counter = state.phase_step * c.d_steps as u64 + rep as u64;
        let st = &*state;
        let results: Vec<Result<DExample>> = batch
            .examples
            .par_iter()
            .zip(&batch.references)
            .enumerate()
            .map(|(j, (&i, &r))| {
                let mut rng = example_stream(c.seed, DOMAIN_D_FAKE, counter, j);
                discriminator_example(
                    st,
                    &corpus.trajectories[i],
                    &corpus.references[i][r],
                    vocab,
                    batch.tau,
                    &mut rng,
                )
            })
            .collect();
        let examples = results.into_iter().collect::<Result<Vec<_>>>()?;
        let losses: Vec<f64> = examples.iter().map(|e| e.loss).collect();
        ensure_finite(&losses, "l_d", state.step)?;
        last = Some(DiscriminatorOutcome {
            losses,
            p_real: examples.iter().map(|e| e.p_real).collect(),
            p_fake: examples.iter().map(|e| e.p_fake).collect(),
        });
        let mut grad = reduce_mean(
            examples.into_iter().map(|e| e.grads).collect(),
            state.discriminator.net.store.zeros_like(),
        );
        clip_grad_norm(&mut grad, c.clip_norm);
        state
            .adam_d
            .step(state.discriminator.net.store.tensors_mut(), &grad)?;
    }
    Ok(last.expect("d_steps is at least 1"))
}

/// Mean losses of a generator update.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GeneratorOutcome {
    pub l_ce: f64,
    pub l_g: f64,
}

/// One generator update on `ce_weight * L_CE + lambda_adv * L_G` with the
/// discriminator frozen. Only the generator and its optimizer change.
pub fn generator_update(
    state: &mut TrainState,
    corpus: &TrainingCorpus,
    vocab: &Vocab,
    batch: &GanBatch,
) -> Result<GeneratorOutcome> {
    let c = state.config.clone();
    let k = state.phase_step;
    let st = &*state;
    let results: Vec<Result<GExample>> = batch
        .examples
        .par_iter()
        .zip(&batch.references)
        .enumerate()
        .map(|(j, (&i, &r))| {
            let mut rng = example_stream(c.seed, DOMAIN_G_FAKE, k, j);
            generator_example(
                st,
                &corpus.trajectories[i],
                &corpus.references[i][r],
                vocab,
                batch.tau,
                &mut rng,
            )
        })
        .collect();
    let examples = results.into_iter().collect::<Result<Vec<_>>>()?;
    let ce: Vec<f64> = examples.iter().map(|e| e.ce).collect();
    let adv: Vec<f64> = examples.iter().map(|e| e.adv).collect();
    ensure_finite(&ce, "l_ce", state.step)?;
    ensure_finite(&adv, "l_g", state.step)?;
    let mut grad = reduce_mean(
        examples.into_iter().map(|e| e.grads).collect(),
        state.generator.net.store.zeros_like(),
    );
    clip_grad_norm(&mut grad, c.clip_norm);
    state
        .adam_g
        .step(state.generator.net.store.tensors_mut(), &grad)?;
    Ok(GeneratorOutcome {
        l_ce: mean(&ce),
        l_g: mean(&adv),
    })
}

/// One fine-tuning iteration: discriminator update(s), then a generator
/// update.
pub fn gan_step(state: &mut TrainState, corpus: &TrainingCorpus, vocab: &Vocab) -> Result<TrainLogRecord> {
    let batch = gan_batch(state, corpus);
    let d = discriminator_update(state, corpus, vocab, &batch)?;
    let g = generator_update(state, corpus, vocab, &batch)?;
    let record = TrainLogRecord {
        step: state.step,
        phase: Phase::Gan,
        l_ce: g.l_ce,
        l_g: Some(g.l_g),
        l_d: Some(mean(&d.losses)),
        p_real: Some(mean(&d.p_real)),
        p_fake: Some(mean(&d.p_fake)),
        p_real_each: d.p_real,
        p_fake_each: d.p_fake,
        l_d_each: d.losses,
        tau: Some(batch.tau),
        wall_time: 0.0,
    };
    state.step += 1;
    state.phase_step += 1;
    Ok(record)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum PhaseSelection {
    Ce,
    Gan,
    Both,
}

#[derive(Debug, Clone)]
pub struct RunOptions {
    pub out_dir: PathBuf,
    pub phases: PhaseSelection,
    /// Stop once this many total updates are complete (for interrupted runs).
    pub stop_at: Option<u64>,
}

#[derive(Debug)]
pub struct TrainOutput {
    pub state: TrainState,
    /// Records produced by this invocation.
    pub records: Vec<TrainLogRecord>,
    pub checkpoint: PathBuf,
    pub log: PathBuf,
}

pub const LOG_FILE: &str = "train_log.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.aign";

pub fn read_log(path: &Path) -> Result<Vec<TrainLogRecord>> {
    let f = File::open(path).map_err(io_err(path))?;
    let mut out = Vec::new();
    for (i, line) in BufReader::new(f).lines().enumerate() {
        let line = line.map_err(io_err(path))?;
        if line.trim().is_empty() {
            continue;
        }
        let parse_err = |e: serde_json::Error| CoreError::Parse {
            path: path.to_path_buf(),
            line: i + 1,
            message: e.to_string(),
        };
        let value: serde_json::Value = serde_json::from_str(&line).map_err(parse_err)?;
        if value.get("error").is_some() {
            continue; // diagnostic line from an aborted run
        }
        out.push(serde_json::from_value(value).map_err(parse_err)?);
    }
    Ok(out)
}

/// Opens the log for appending, dropping records at or beyond `from_step`
/// left behind by an interrupted run.
fn open_log(path: &Path, from_step: u64) -> Result<BufWriter<File>> {
    let kept: Vec<TrainLogRecord> = if path.exists() {
        read_log(path)?
            .into_iter()
            .filter(|r| r.step < from_step)
            .collect()
    } else {
        Vec::new()
    };
    let f = File::create(path).map_err(io_err(path))?;
    let mut w = BufWriter::new(f);
    for r in &kept {
        writeln!(w, "{}", serde_json::to_string(r).expect("record serializes")).map_err(io_err(path))?;
    }
    w.flush().map_err(io_err(path))?;
    let f = OpenOptions::new().append(true).open(path).map_err(io_err(path))?;
    Ok(BufWriter::new(f))
}

/// Runs the selected phases from `state`, writing the log and checkpoints
/// into `opts.out_dir`.
pub fn train(
    mut state: TrainState,
    corpus: &TrainingCorpus,
    vocab: &Vocab,
    opts: &RunOptions,
) -> Result<TrainOutput> {
    if vocab.hash() != state.vocab_hash {
        return Err(CoreError::Checkpoint("vocabulary does not match the training state".into()));
    }
    std::fs::create_dir_all(&opts.out_dir).map_err(io_err(&opts.out_dir))?;
    let log_path = opts.out_dir.join(LOG_FILE);
    let ckpt_path = opts.out_dir.join(CHECKPOINT_FILE);
    let mut log = open_log(&log_path, state.step)?;
    let started = Instant::now();
    let mut records = Vec::new();
    loop {
        if opts.stop_at.is_some_and(|s| state.step >= s) {
            break;
        }
        let record = match state.phase {
            Phase::Ce => {
                if opts.phases == PhaseSelection::Gan || state.ce_done() {
                    if opts.phases == PhaseSelection::Ce {
                        break;
                    }
                    state.phase = Phase::Gan;
                    state.phase_step = 0;
                    continue;
                }
                ce_step(&mut state, corpus, vocab)
            }
            Phase::Gan => {
                if opts.phases == PhaseSelection::Ce || state.phase_step >= state.config.gan_max_steps {
                    break;
                }
                gan_step(&mut state, corpus, vocab)
            }
        };
        let mut record = match record.and_then(|r| r.check_finite().map(|_| r)) {
            Ok(r) => r,
            Err(e) => {
                let diag = serde_json::json!({"step": state.step, "error": e.to_string()});
                writeln!(log, "{diag}").map_err(io_err(&log_path))?;
                log.flush().map_err(io_err(&log_path))?;
                return Err(e);
            }
        };
        record.wall_time = started.elapsed().as_secs_f64();
        writeln!(log, "{}", serde_json::to_string(&record).expect("record serializes"))
            .map_err(io_err(&log_path))?;
        records.push(record);
        let every = state.config.checkpoint_every;
        if every > 0 && state.step % every == 0 {
            log.flush().map_err(io_err(&log_path))?;
            checkpoint::save(&state, &opts.out_dir.join(format!("checkpoint-{:08}.aign", state.step)))?;
        }
    }
    log.flush().map_err(io_err(&log_path))?;
    checkpoint::save(&state, &ckpt_path)?;
    Ok(TrainOutput {
        state,
        records,
        checkpoint: ckpt_path,
        log: log_path,
    })
}
