//! Command-line driver: synthesize episodes, train, generate instructions,
//! evaluate them and render reports.
//!
//! Exit codes: 0 on success, 1 on an internal failure, 2 on invalid input.

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, Context};
use clap::{Args, Parser, Subcommand, ValueEnum};
use navinstruct_core::checkpoint;
use navinstruct_core::config::TrainConfig;
use navinstruct_core::data::{self, Episode, Trajectory, TOOL_VERSION};
use navinstruct_core::synth::{self, build_world, WorldOverrides};
use navinstruct_core::text::Vocab;
use navinstruct_core::trainer::{self, PhaseSelection, RunOptions, TrainState, TrainingCorpus};
use navinstruct_core::CoreError;
use navinstruct_metrics::{self as metrics, GeneratedLine, MetricError, MetricReport, ReferenceLine};
use navinstruct_tensor::Stream;
use serde::{Deserialize, Serialize};
use serde_json::{json, Value};

pub const VOCAB_FILE: &str = "vocab.txt";
pub const CONFIG_FILE: &str = "config.txt";

const DOMAIN_GENERATE: u64 = 40;

#[derive(Debug, Parser)]
#[command(name = "navinstruct", version, about = "Navigation instruction generation with adversarial fine-tuning")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Write synthetic episodes as JSON lines.
    Synth(SynthArgs),
    /// Cross-entropy pretraining and adversarial fine-tuning.
    Train(TrainArgs),
    /// Write one instruction per trajectory.
    Generate(GenerateArgs),
    /// Score generated instructions against references.
    Eval(EvalArgs),
    /// Render saved evaluation reports as a table.
    Report(ReportArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    All,
    Train,
    Val,
}

#[derive(Debug, Args)]
pub struct SynthArgs {
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long)]
    pub out: PathBuf,
    /// Episodes sampled before the split filter.
    #[arg(long, default_value_t = 1000)]
    pub count: usize,
    #[arg(long, value_enum, default_value_t = Split::All)]
    pub split: Split,
    #[arg(long, default_value_t = 32)]
    pub d_img: usize,
    #[arg(long, default_value_t = 0.1)]
    pub noise: f64,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum PhaseArg {
    Ce,
    Gan,
    Both,
}

impl From<PhaseArg> for PhaseSelection {
    fn from(p: PhaseArg) -> Self {
        match p {
            PhaseArg::Ce => PhaseSelection::Ce,
            PhaseArg::Gan => PhaseSelection::Gan,
            PhaseArg::Both => PhaseSelection::Both,
        }
    }
}

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Episode file (JSON lines).
    #[arg(long)]
    pub data: PathBuf,
    /// Directory for the checkpoint, log, vocabulary and effective config.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Flat `key = value` configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// `key=value` override, applied after the config file.
    #[arg(long = "set", value_name = "KEY=VALUE")]
    pub overrides: Vec<String>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long, value_enum, default_value_t = PhaseArg::Both)]
    pub phase: PhaseArg,
    /// Step budget for each selected phase.
    #[arg(long)]
    pub max_steps: Option<u64>,
    /// Continue from this checkpoint (its config is used).
    #[arg(long)]
    pub resume: Option<PathBuf>,
    /// Drop the detected-object block from both models' inputs.
    #[arg(long)]
    pub no_objects: bool,
    /// Stop after this many total updates (simulates an interruption).
    #[arg(long, hide = true)]
    pub stop_at: Option<u64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DecodeArg {
    Greedy,
    Sample,
}

#[derive(Debug, Args)]
pub struct GenerateArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Defaults to `vocab.txt` beside the checkpoint.
    #[arg(long)]
    pub vocab: Option<PathBuf>,
    #[arg(long)]
    pub data: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long, value_enum, default_value_t = DecodeArg::Sample)]
    pub decode: DecodeArg,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    #[arg(long, default_value_t = 1.0)]
    pub temperature: f64,
    /// Defaults to the checkpoint's max_instruction_len.
    #[arg(long)]
    pub max_len: Option<usize>,
    /// Also write the input references as `{"id", "texts"}` lines.
    #[arg(long)]
    pub references_out: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// `{"id", "text"}` lines.
    #[arg(long)]
    pub generated: PathBuf,
    /// `{"id", "texts"}` lines.
    #[arg(long)]
    pub references: PathBuf,
    #[arg(long)]
    pub out: PathBuf,
    /// Plain-text table destination; printed to stdout when absent.
    #[arg(long)]
    pub table: Option<PathBuf>,
    /// Synthetic episodes with truth labels for the room/object mention rates.
    #[arg(long)]
    pub episodes: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct ReportArgs {
    /// Evaluation JSON files, one table row each.
    #[arg(long = "input", required = true)]
    pub inputs: Vec<PathBuf>,
    #[arg(long)]
    pub out: Option<PathBuf>,
}

/// Failure split by who has to fix it.
#[derive(Debug)]
pub enum CliError {
    User(anyhow::Error),
    Internal(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::User(_) => 2,
            CliError::Internal(_) => 1,
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::User(e) | CliError::Internal(e) => write!(f, "{e:#}"),
        }
    }
}

impl From<CoreError> for CliError {
    fn from(e: CoreError) -> Self {
        match e {
            CoreError::NonFinite { .. } | CoreError::Tensor(_) => CliError::Internal(e.into()),
            _ => CliError::User(e.into()),
        }
    }
}

impl From<MetricError> for CliError {
    fn from(e: MetricError) -> Self {
        CliError::User(e.into())
    }
}

type CliResult<T> = std::result::Result<T, CliError>;

fn user(e: anyhow::Error) -> CliError {
    CliError::User(e)
}

/// Sidecar written next to every artifact: tool version plus the settings
/// that produced it.
pub fn sidecar_path(path: &Path) -> PathBuf {
    data::manifest_path(path)
}

fn write_sidecar(path: &Path, config: Value) -> CliResult<()> {
    let doc = json!({ "tool_version": TOOL_VERSION, "config": config });
    let p = sidecar_path(path);
    std::fs::write(&p, serde_json::to_string_pretty(&doc).expect("json") + "\n")
        .with_context(|| format!("writing {}", p.display()))
        .map_err(user)
}

fn write_jsonl<T: Serialize>(path: &Path, rows: &[T]) -> CliResult<()> {
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r).expect("json"));
        out.push('\n');
    }
    std::fs::write(path, out)
        .with_context(|| format!("writing {}", path.display()))
        .map_err(user)
}

fn run_synth(a: &SynthArgs) -> CliResult<()> {
    let overrides = WorldOverrides {
        d_img: Some(a.d_img),
        noise: Some(a.noise),
        ..Default::default()
    };
    let world = build_world(a.seed, &overrides)?;
    let episodes: Vec<Episode> = world
        .corpus(a.seed, a.count)
        .into_iter()
        .filter(|e| match a.split {
            Split::All => true,
            Split::Train => !synth::is_validation(&e.trajectory.id),
            Split::Val => synth::is_validation(&e.trajectory.id),
        })
        .map(Episode::from)
        .collect();
    let config = json!({
        "command": "synth",
        "seed": a.seed,
        "count": a.count,
        "split": a.split,
        "d_img": a.d_img,
        "noise": a.noise,
    });
    synth::export_jsonl(&episodes, &a.out, config)?;
    eprintln!("wrote {} episodes to {}", episodes.len(), a.out.display());
    Ok(())
}

fn read_trajectories(path: &Path) -> CliResult<Vec<Trajectory>> {
    Ok(data::read_episodes(path)?
        .into_iter()
        .map(|e| e.trajectory)
        .collect())
}

fn feature_width(trajs: &[Trajectory]) -> CliResult<usize> {
    trajs
        .first()
        .map(Trajectory::feature_dim)
        .ok_or_else(|| user(anyhow!("episode file is empty")))
}

fn vocab_beside(checkpoint: &Path) -> PathBuf {
    checkpoint
        .parent()
        .map(|d| d.join(VOCAB_FILE))
        .unwrap_or_else(|| PathBuf::from(VOCAB_FILE))
}

fn run_train(a: &TrainArgs) -> CliResult<()> {
    let trajs = read_trajectories(&a.data)?;
    let d_img = feature_width(&trajs)?;
    std::fs::create_dir_all(&a.out_dir)
        .with_context(|| format!("creating {}", a.out_dir.display()))
        .map_err(user)?;
    let phases: PhaseSelection = a.phase.into();
    let adjust = |c: &mut TrainConfig| -> CliResult<()> {
        for o in &a.overrides {
            let (k, v) = o
                .split_once('=')
                .ok_or_else(|| user(anyhow!("override {o:?} is not key=value")))?;
            c.set(k.trim(), v.trim())?;
        }
        if let Some(s) = a.seed {
            c.seed = s;
        }
        if a.no_objects {
            c.use_objects = false;
        }
        if let Some(n) = a.max_steps {
            match phases {
                PhaseSelection::Ce => c.ce_max_steps = n,
                PhaseSelection::Gan => c.gan_max_steps = n,
                PhaseSelection::Both => {
                    c.ce_max_steps = n;
                    c.gan_max_steps = n;
                }
            }
        }
        c.validate()?;
        Ok(())
    };

    let (state, vocab) = match &a.resume {
        Some(ckpt) => {
            let vocab = Vocab::load(&vocab_beside(ckpt))?;
            let mut state = checkpoint::load(ckpt, &vocab)?;
            let mut config = state.config.clone();
            adjust(&mut config)?;
            if config.layout() != state.config.layout() {
                return Err(user(anyhow!(
                    "layout settings cannot change when resuming"
                )));
            }
            state.config = config;
            (state, vocab)
        }
        None => {
            let mut config = TrainConfig::resolve(a.config.as_deref(), &[])?;
            adjust(&mut config)?;
            let refs: Vec<&String> = trajs.iter().flat_map(|t| &t.references).collect();
            let vocab = Vocab::build(&refs, config.min_frequency)?;
            let state = TrainState::new(config, &vocab, d_img)?;
            (state, vocab)
        }
    };
    let vocab_path = a.out_dir.join(VOCAB_FILE);
    if a.resume.as_deref().map(vocab_beside).as_deref() != Some(vocab_path.as_path()) {
        vocab.save(&vocab_path)?;
    }
    let config_value = serde_json::to_value(&state.config).expect("config json");
    write_sidecar(&vocab_path, config_value.clone())?;
    let config_path = a.out_dir.join(CONFIG_FILE);
    std::fs::write(
        &config_path,
        format!("# navinstruct {TOOL_VERSION}\n{}", state.config.to_text()),
    )
    .with_context(|| format!("writing {}", config_path.display()))
    .map_err(user)?;

    let corpus = TrainingCorpus::new(trajs, &vocab)?;
    let out = trainer::train(
        state,
        &corpus,
        &vocab,
        &RunOptions {
            out_dir: a.out_dir.clone(),
            phases,
            stop_at: a.stop_at,
        },
    )?;
    write_sidecar(&out.log, config_value)?;
    eprintln!(
        "{} updates this run, {} total; checkpoint {}",
        out.records.len(),
        out.state.step,
        out.checkpoint.display()
    );
    Ok(())
}

fn run_generate(a: &GenerateArgs) -> CliResult<()> {
    if !(a.temperature > 0.0) {
        return Err(user(anyhow!("temperature must be positive")));
    }
    let vocab_path = a.vocab.clone().unwrap_or_else(|| vocab_beside(&a.checkpoint));
    let vocab = Vocab::load(&vocab_path)?;
    let state = checkpoint::load(&a.checkpoint, &vocab)?;
    let trajs = read_trajectories(&a.data)?;
    let max_len = a.max_len.unwrap_or(state.config.max_instruction_len);
    let gen = &state.generator;
    let mut lines = Vec::with_capacity(trajs.len());
    for (i, t) in trajs.iter().enumerate() {
        let result = match a.decode {
            DecodeArg::Greedy => gen.decode_greedy(t, &vocab, max_len)?,
            DecodeArg::Sample => {
                let mut rng = Stream::new(a.seed, DOMAIN_GENERATE, i as u64);
                gen.sample_decode(t, &vocab, a.temperature, &mut rng, max_len)?
            }
        };
        lines.push(GeneratedLine {
            id: t.id.clone(),
            text: vocab.decode(result.instruction())?,
        });
    }
    write_jsonl(&a.out, &lines)?;
    let config = json!({
        "command": "generate",
        "checkpoint": a.checkpoint,
        "data": a.data,
        "decode": a.decode,
        "seed": a.seed,
        "temperature": a.temperature,
        "max_len": max_len,
        "train_config": state.config,
    });
    write_sidecar(&a.out, config.clone())?;
    if let Some(path) = &a.references_out {
        let refs: Vec<ReferenceLine> = trajs
            .iter()
            .map(|t| ReferenceLine {
                id: t.id.clone(),
                texts: t.references.clone(),
            })
            .collect();
        write_jsonl(path, &refs)?;
        write_sidecar(path, config)?;
    }
    eprintln!("wrote {} instructions to {}", lines.len(), a.out.display());
    Ok(())
}

/// Share of generated instructions naming the true room, object, and both.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MentionRates {
    pub episodes: usize,
    pub room: f64,
    pub object: f64,
    pub both: f64,
}

pub fn mention_rates(generated: &[GeneratedLine], episodes: &[Episode]) -> CliResult<MentionRates> {
    let by_id: std::collections::HashMap<&str, &Episode> =
        episodes.iter().map(|e| (e.trajectory.id.as_str(), e)).collect();
    let (mut room, mut object, mut both) = (0usize, 0usize, 0usize);
    for g in generated {
        let ep = by_id
            .get(g.id.as_str())
            .ok_or_else(|| user(anyhow!("no episode with id {:?}", g.id)))?;
        let truth = ep
            .truth
            .as_ref()
            .ok_or_else(|| user(anyhow!("episode {:?} has no truth labels", g.id)))?;
        let (r, o) = synth::mentions_truth(&g.text, truth);
        room += r as usize;
        object += o as usize;
        both += (r && o) as usize;
    }
    let n = generated.len().max(1) as f64;
    Ok(MentionRates {
        episodes: generated.len(),
        room: room as f64 / n,
        object: object as f64 / n,
        both: both as f64 / n,
    })
}

/// Everything `eval` writes.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalDocument {
    pub tool_version: String,
    pub config: Value,
    pub report: MetricReport,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mentions: Option<MentionRates>,
}

fn run_eval(a: &EvalArgs) -> CliResult<()> {
    let generated = metrics::read_generated(&a.generated)?;
    let references = metrics::read_references(&a.references)?;
    let (cands, refs) = metrics::join(&generated, &references)?;
    let report = metrics::evaluate(&cands, &refs)?;
    let mentions = match &a.episodes {
        Some(p) => Some(mention_rates(&generated, &data::read_episodes(p)?)?),
        None => None,
    };
    let doc = EvalDocument {
        tool_version: TOOL_VERSION.to_string(),
        config: json!({
            "command": "eval",
            "generated": a.generated,
            "references": a.references,
            "episodes": a.episodes,
        }),
        report,
        mentions,
    };
    std::fs::write(&a.out, serde_json::to_string_pretty(&doc).expect("json") + "\n")
        .with_context(|| format!("writing {}", a.out.display()))
        .map_err(user)?;
    let mut table = doc.report.to_table();
    if let Some(m) = &doc.mentions {
        table.push_str(&format!(
            "{:<11}  {:>10}\n{:<11}  {:>10}\n{:<11}  {:>10}\n",
            "Room", format!("{:.3}", m.room), "Object", format!("{:.3}", m.object), "Both", format!("{:.3}", m.both)
        ));
    }
    match &a.table {
        Some(p) => {
            std::fs::write(p, &table)
                .with_context(|| format!("writing {}", p.display()))
                .map_err(user)?;
            write_sidecar(p, doc.config.clone())?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

pub fn read_eval_document(path: &Path) -> CliResult<EvalDocument> {
    let text = std::fs::read_to_string(path)
        .with_context(|| format!("reading {}", path.display()))
        .map_err(user)?;
    serde_json::from_str(&text)
        .with_context(|| format!("parsing {}", path.display()))
        .map_err(user)
}

/// Description-quality and diversity columns, one row per report.
pub fn render_report(rows: &[(String, EvalDocument)]) -> String {
    let headers = [
        "Run", "BLEU-1", "METEOR", "ROUGE", "CIDEr", "%Novel", "Unigrams", "Bigrams", "Div-1", "Div-2",
    ];
    let body: Vec<Vec<String>> = rows
        .iter()
        .map(|(name, d)| {
            let r = &d.report;
            let v = &r.diversity;
            vec![
                name.clone(),
                format!("{:.3}", r.bleu1),
                format!("{:.3}", r.meteor_lite),
                format!("{:.3}", r.rouge_l),
                format!("{:.3}", r.cider_d),
                format!("{:.1}%", v.novel_percent),
                v.unique_unigrams.to_string(),
                v.unique_bigrams.to_string(),
                format!("{:.3}", v.div1),
                format!("{:.3}", v.div2),
            ]
        })
        .collect();
    let widths: Vec<usize> = (0..headers.len())
        .map(|i| {
            body.iter()
                .map(|row| row[i].len())
                .chain([headers[i].len()])
                .max()
                .unwrap_or(0)
        })
        .collect();
    let line = |cells: Vec<&str>| -> String {
        let mut s = String::new();
        for (i, c) in cells.iter().enumerate() {
            if i == 0 {
                s.push_str(&format!("{c:<w$}", w = widths[0]));
            } else {
                s.push_str(&format!("  {c:>w$}", w = widths[i]));
            }
        }
        s.push('\n');
        s
    };
    let mut out = line(headers.to_vec());
    out.push_str(&"-".repeat(widths.iter().sum::<usize>() + 2 * (widths.len() - 1)));
    out.push('\n');
    for row in &body {
        out.push_str(&line(row.iter().map(String::as_str).collect()));
    }
    out
}

fn run_report(a: &ReportArgs) -> CliResult<()> {
    let mut rows = Vec::new();
    for p in &a.inputs {
        let name = p
            .file_stem()
            .map(|s| s.to_string_lossy().into_owned())
            .unwrap_or_default();
        rows.push((name, read_eval_document(p)?));
    }
    let table = render_report(&rows);
    match &a.out {
        Some(p) => {
            std::fs::write(p, &table)
                .with_context(|| format!("writing {}", p.display()))
                .map_err(user)?;
            write_sidecar(p, json!({ "command": "report", "inputs": a.inputs }))?;
        }
        None => print!("{table}"),
    }
    Ok(())
}

pub fn execute(cli: &Cli) -> CliResult<()> {
    match &cli.command {
        Command::Synth(a) => run_synth(a),
        Command::Train(a) => run_train(a),
        Command::Generate(a) => run_generate(a),
        Command::Eval(a) => run_eval(a),
        Command::Report(a) => run_report(a),
    }
}

/// Parses `args` and runs the command, mapping failures to exit codes.
pub fn main_with_args<I, T>(args: I) -> ExitCode
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(args) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 2 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
