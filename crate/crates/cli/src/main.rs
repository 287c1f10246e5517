use std::fmt::Write as _;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{anyhow, bail, Context};
use blocksync::eval::{latency_stats, session_wer, wer, EditStats, LatencyStats, WorkCounters};
use blocksync::events::{save_events, segment_events, segment_from, timings, EventRecord};
use blocksync::scorer::{
    energy_vad_segment, load_features, load_table_model, random_scenario, save_features, SynthParams, TableModel,
};
use blocksync::search::decode_utterance_at;
use blocksync::{vad_free_decode, DecodeConfig, ResetReason, SessionTranscript, SyncMode, TokenId};
use clap::{Args, Parser, Subcommand, ValueEnum};
use ndarray::{concatenate, Array2, Axis};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

#[derive(Parser)]
#[command(name = "blocksync", version, about = "Block-synchronous streaming decoder harness")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Write a seeded random table-model scenario and a matching feature stream.
    Generate(GenerateArgs),
    /// Decode one utterance.
    Decode(DecodeArgs),
    /// Concatenate utterances into a long-form stream with a reference manifest.
    Simulate(SimulateArgs),
    /// Decode a long-form stream with CTC-driven resets (or a VAD cascade).
    Session(SessionArgs),
    /// Score hypotheses against references.
    Score(ScoreArgs),
}

#[derive(Args)]
struct GenerateArgs {
    #[arg(long)]
    seed: u64,
    /// Scenario TOML to write.
    #[arg(long)]
    out: PathBuf,
    /// Zero-valued feature stream sized to the scenario.
    #[arg(long)]
    features_out: Option<PathBuf>,
    #[arg(long, default_value_t = 3)]
    tokens: usize,
    /// Encoder frames.
    #[arg(long, default_value_t = 12)]
    frames: usize,
    #[arg(long, default_value_t = 4)]
    max_len: usize,
    #[arg(long, default_value_t = 0.4)]
    density: f64,
    #[arg(long)]
    lm_order: Option<usize>,
    #[arg(long, default_value_t = 4)]
    subsample_factor: usize,
}

/// Search flags. Each overrides the matching key of `--config`.
#[derive(Args, Default)]
struct ConfigArgs {
    /// TOML file with decode settings.
    #[arg(long)]
    config: Option<PathBuf>,
    #[arg(long)]
    beam_width: Option<usize>,
    /// Block length in input frames.
    #[arg(long)]
    block_size: Option<usize>,
    #[arg(long)]
    length_ratio: Option<f64>,
    /// Input frames before the first reset may fire.
    #[arg(long)]
    safeguard: Option<usize>,
    #[arg(long)]
    blank_threshold: Option<usize>,
    #[arg(long)]
    spike_threshold: Option<f64>,
    #[arg(long)]
    lm_weight: Option<f64>,
    #[arg(long)]
    chunk_width: Option<usize>,
    #[arg(long)]
    subsample_factor: Option<usize>,
    #[arg(long)]
    boundary_threshold: Option<f64>,
    #[arg(long, value_name = "BOOL")]
    enable_length_norm: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    enable_lm_carryover: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    enable_safeguard: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    enable_condition2: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    enable_backoff_init: Option<bool>,
    #[arg(long, value_name = "BOOL")]
    enable_parked_eos: Option<bool>,
}

#[derive(Args)]
struct OutputArgs {
    /// Transcript file; stdout when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Newline-delimited JSON event stream.
    #[arg(long)]
    events_out: Option<PathBuf>,
    /// JSON report with counters and latency.
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Args)]
struct DecodeArgs {
    #[arg(long)]
    features: PathBuf,
    /// Table-model scenario TOML.
    #[arg(long)]
    model: PathBuf,
    #[arg(long, value_enum, default_value_t = Mode::Block)]
    mode: Mode,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Clone, Copy, ValueEnum)]
enum Mode {
    Label,
    Block,
    Frame,
}

impl From<Mode> for SyncMode {
    fn from(m: Mode) -> Self {
        match m {
            Mode::Label => SyncMode::Label,
            Mode::Block => SyncMode::Block,
            Mode::Frame => SyncMode::Frame,
        }
    }
}

#[derive(Args)]
struct SimulateArgs {
    /// NDJSON list, one `{"id", "features", "tokens"}` record per utterance,
    /// in timestamp order. Feature paths are relative to the list file.
    #[arg(long)]
    list: PathBuf,
    /// Zero frames inserted between utterances.
    #[arg(long)]
    gap: usize,
    /// Stop before the first utterance that would push the stream past this
    /// many input frames. Omit to concatenate everything.
    #[arg(long)]
    target_length: Option<usize>,
    /// Concatenated feature stream.
    #[arg(long)]
    out: PathBuf,
    /// NDJSON reference manifest.
    #[arg(long)]
    manifest_out: PathBuf,
}

#[derive(Args)]
struct SessionArgs {
    #[arg(long)]
    features: PathBuf,
    #[arg(long)]
    model: PathBuf,
    /// Segment with an energy VAD and decode each segment independently.
    #[arg(long)]
    vad_cascade: bool,
    #[arg(long, default_value_t = 1e-3)]
    vad_threshold: f64,
    /// Input frames of silence needed to split speech runs.
    #[arg(long, default_value_t = 30)]
    vad_min_silence: usize,
    #[arg(long, default_value_t = 10)]
    vad_margin: usize,
    #[command(flatten)]
    config: ConfigArgs,
    #[command(flatten)]
    output: OutputArgs,
}

#[derive(Args)]
struct ScoreArgs {
    /// Hypothesis tokens: one utterance per line, or an NDJSON manifest.
    #[arg(long)]
    hyp: PathBuf,
    /// Reference tokens in the same formats.
    #[arg(long = "ref")]
    reference: PathBuf,
    #[arg(long, value_enum, default_value_t = ScoreMode::Utterance)]
    mode: ScoreMode,
    /// Scenario whose vocabulary renders manifest token ids as names.
    #[arg(long)]
    model: Option<PathBuf>,
    #[arg(long)]
    report_out: Option<PathBuf>,
}

#[derive(Clone, Copy, PartialEq, Eq, ValueEnum)]
enum ScoreMode {
    Utterance,
    Session,
}

/// One manifest record.
#[derive(Debug, Serialize, Deserialize)]
struct ManifestEntry {
    id: String,
    #[serde(default)]
    offset: usize,
    tokens: Vec<TokenId>,
}

enum Failure {
    Usage(anyhow::Error),
    Decode(anyhow::Error),
}

fn usage<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Usage(e.into())
}

fn decode_failure<E: Into<anyhow::Error>>(e: E) -> Failure {
    Failure::Decode(e.into())
}

type Outcome = Result<(), Failure>;

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { 1 } else { 0 };
            let _ = e.print();
            return ExitCode::from(code);
        }
    };
    let result = match cli.command {
        Command::Generate(a) => cmd_generate(a),
        Command::Decode(a) => cmd_decode(a),
        Command::Simulate(a) => cmd_simulate(a),
        Command::Session(a) => cmd_session(a),
        Command::Score(a) => cmd_score(a),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(Failure::Usage(e)) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
        Err(Failure::Decode(e)) => {
            eprintln!("decode failed: {e:#}");
            ExitCode::from(2)
        }
    }
}

impl ConfigArgs {
    /// File settings, then flag overrides. Also reports whether the block
    /// size was set explicitly anywhere.
    fn resolve(&self) -> anyhow::Result<(DecodeConfig, bool)> {
        let (mut cfg, mut explicit_block) = match &self.config {
            Some(path) => {
                let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
                let cfg = DecodeConfig::from_toml_str(&text).with_context(|| format!("parsing {}", path.display()))?;
                let table: toml::Table = text.parse().with_context(|| format!("parsing {}", path.display()))?;
                (cfg, table.contains_key("block_size"))
            }
            None => (DecodeConfig::default(), false),
        };
        macro_rules! apply {
            ($($field:ident),*) => {
                $(if let Some(v) = self.$field { cfg.$field = v; })*
            };
        }
        apply!(
            beam_width,
            length_ratio,
            safeguard,
            blank_threshold,
            spike_threshold,
            lm_weight,
            chunk_width,
            subsample_factor,
            boundary_threshold,
            enable_length_norm,
            enable_lm_carryover,
            enable_safeguard,
            enable_condition2,
            enable_backoff_init,
            enable_parked_eos
        );
        if let Some(b) = self.block_size {
            cfg.block_size = b;
            explicit_block = true;
        }
        cfg.validate()?;
        Ok((cfg, explicit_block))
    }
}

fn write_text(path: Option<&Path>, text: &str) -> anyhow::Result<()> {
    match path {
        Some(p) => std::fs::write(p, text).with_context(|| format!("writing {}", p.display())),
        None => {
            print!("{text}");
            Ok(())
        }
    }
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> anyhow::Result<()> {
    let mut text = serde_json::to_string_pretty(value)?;
    text.push('\n');
    std::fs::write(path, text).with_context(|| format!("writing {}", path.display()))
}

fn transcript_lines(model: &TableModel, transcript: &SessionTranscript) -> String {
    let mut out = String::new();
    for seg in &transcript.segments {
        out.push_str(&model.vocab().decode(&seg.tokens).join(" "));
        out.push('\n');
    }
    out
}

#[derive(Serialize)]
struct DecodeReport<'a> {
    mode: &'a str,
    input_frames: usize,
    encoder_frames: usize,
    block_size: usize,
    segments: usize,
    reasons: Vec<&'static str>,
    score: f64,
    counters: WorkCounters,
    latency: LatencyStats,
}

fn emit_outputs(
    output: &OutputArgs,
    model: &TableModel,
    transcript: &SessionTranscript,
    events: &[EventRecord],
    report: DecodeReport<'_>,
) -> anyhow::Result<()> {
    write_text(output.out.as_deref(), &transcript_lines(model, transcript))?;
    if let Some(p) = &output.events_out {
        save_events(p, events)?;
    }
    if let Some(p) = &output.report_out {
        write_json(p, &report)?;
    }
    Ok(())
}

fn load_inputs(features: &Path, model: &Path) -> anyhow::Result<(Array2<f64>, TableModel)> {
    let x = load_features(features)?;
    if x.nrows() == 0 {
        bail!("{}: empty feature stream", features.display());
    }
    Ok((x, load_table_model(model)?))
}

fn cmd_generate(a: GenerateArgs) -> Outcome {
    if a.subsample_factor == 0 || a.frames == 0 {
        return Err(usage(anyhow!("--frames and --subsample-factor must be positive")));
    }
    if !(0.0..=1.0).contains(&a.density) {
        return Err(usage(anyhow!("--density must lie in [0, 1]")));
    }
    let params = SynthParams {
        output_tokens: a.tokens,
        encoder_frames: a.frames,
        max_len: a.max_len,
        selection_density: a.density,
        lm_order: a.lm_order,
        ..SynthParams::default()
    };
    let doc = random_scenario(&mut ChaCha8Rng::seed_from_u64(a.seed), &params);
    let text = doc.to_toml_string().map_err(usage)?;
    std::fs::write(&a.out, text)
        .with_context(|| format!("writing {}", a.out.display()))
        .map_err(usage)?;
    if let Some(p) = &a.features_out {
        save_features(p, Array2::zeros((a.frames * a.subsample_factor, 1)).view()).map_err(usage)?;
    }
    Ok(())
}

fn cmd_decode(a: DecodeArgs) -> Outcome {
    let (base, explicit_block) = a.config.resolve().map_err(usage)?;
    let mode = SyncMode::from(a.mode);
    if mode == SyncMode::Frame && explicit_block {
        return Err(usage(anyhow!(
            "--mode frame fixes the block size; drop the explicit block_size"
        )));
    }
    let (x, model) = load_inputs(&a.features, &a.model).map_err(usage)?;
    let cfg = mode.configure(&base, x.nrows());
    let sub = cfg.subsample_factor;
    let decoded = decode_utterance_at(x.view(), model.encoder(sub), &model, &model, model.vocab(), &cfg, 0)
        .map_err(decode_failure)?;
    let segment = segment_from(
        Some(&decoded.best),
        model.vocab().eos_id(),
        ResetReason::EndOfStream,
        decoded.input_frames,
        decoded.encoder_frames,
    );
    let events = segment_events(&segment, 0, model.vocab(), sub);
    let transcript = SessionTranscript {
        segments: vec![segment],
    };
    let report = DecodeReport {
        mode: match a.mode {
            Mode::Label => "label",
            Mode::Block => "block",
            Mode::Frame => "frame",
        },
        input_frames: decoded.input_frames,
        encoder_frames: decoded.encoder_frames,
        block_size: cfg.block_size,
        segments: 1,
        reasons: transcript.reasons().iter().map(|r| r.as_str()).collect(),
        score: decoded.best.raw_log_score,
        counters: decoded.counters,
        latency: latency_stats(&timings(&events)).map_err(decode_failure)?,
    };
    emit_outputs(&a.output, &model, &transcript, &events, report).map_err(usage)
}

fn cmd_session(a: SessionArgs) -> Outcome {
    let (cfg, _) = a.config.resolve().map_err(usage)?;
    let (x, model) = load_inputs(&a.features, &a.model).map_err(usage)?;
    let vocab = model.vocab();
    let sub = cfg.subsample_factor;
    let (transcript, events, counters) = if a.vad_cascade {
        let mut transcript = SessionTranscript::default();
        let mut events = Vec::new();
        let mut counters = WorkCounters::default();
        for (start, end) in energy_vad_segment(x.view(), a.vad_threshold, a.vad_min_silence, a.vad_margin) {
            // align to the encoder clock so table rows line up with global frames
            let start = start - start % sub;
            let part = x.slice(ndarray::s![start..end, ..]);
            let d = decode_utterance_at(part, model.encoder(sub), &model, &model, vocab, &cfg, start / sub)
                .map_err(decode_failure)?;
            counters.merge(&d.counters);
            let seg = segment_from(
                Some(&d.best),
                vocab.eos_id(),
                ResetReason::EndOfStream,
                end,
                start / sub + d.encoder_frames,
            );
            events.extend(segment_events(&seg, transcript.segments.len(), vocab, sub));
            transcript.segments.push(seg);
        }
        (transcript, events, counters)
    } else {
        let out = vad_free_decode(x.view(), model.encoder(sub), &model, &model, &model, vocab, &cfg)
            .map_err(decode_failure)?;
        (out.transcript, out.events, out.counters)
    };
    let report = DecodeReport {
        mode: if a.vad_cascade { "vad_cascade" } else { "vad_free" },
        input_frames: x.nrows(),
        encoder_frames: cfg.encoder_frames(x.nrows()),
        block_size: cfg.block_size,
        segments: transcript.segments.len(),
        reasons: transcript.reasons().iter().map(|r| r.as_str()).collect(),
        score: transcript.segments.iter().map(|s| s.score).sum(),
        counters,
        latency: latency_stats(&timings(&events)).map_err(decode_failure)?,
    };
    emit_outputs(&a.output, &model, &transcript, &events, report).map_err(usage)
}

#[derive(Deserialize)]
struct ListEntry {
    id: String,
    features: PathBuf,
    tokens: Vec<TokenId>,
}

fn read_ndjson<T: for<'de> Deserialize<'de>>(path: &Path) -> anyhow::Result<Vec<T>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    let mut out = Vec::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        out.push(serde_json::from_str(line).with_context(|| format!("{}:{}", path.display(), i + 1))?);
    }
    Ok(out)
}

fn cmd_simulate(a: SimulateArgs) -> Outcome {
    let list: Vec<ListEntry> = read_ndjson(&a.list).map_err(usage)?;
    if list.is_empty() {
        return Err(usage(anyhow!("{}: no utterances listed", a.list.display())));
    }
    let base = a.list.parent().unwrap_or(Path::new("."));
    let mut parts: Vec<Array2<f64>> = Vec::new();
    let mut manifest = Vec::new();
    let mut cursor = 0;
    for entry in list {
        let path = base.join(&entry.features);
        let x = load_features(&path).map_err(usage)?;
        let offset = if parts.is_empty() { 0 } else { cursor + a.gap };
        if let Some(dim) = parts.first().map(|p| p.ncols()) {
            if x.ncols() != dim {
                return Err(usage(anyhow!(
                    "{}: {} columns, expected {dim}",
                    path.display(),
                    x.ncols()
                )));
            }
        }
        if !parts.is_empty() && a.target_length.is_some_and(|t| offset + x.nrows() > t) {
            break;
        }
        if offset > cursor {
            parts.push(Array2::zeros((offset - cursor, x.ncols())));
        }
        cursor = offset + x.nrows();
        parts.push(x);
        manifest.push(ManifestEntry {
            id: entry.id,
            offset,
            tokens: entry.tokens,
        });
    }
    let views: Vec<_> = parts.iter().map(|p| p.view()).collect();
    let stream = concatenate(Axis(0), &views).map_err(usage)?;
    save_features(&a.out, stream.view()).map_err(usage)?;
    let mut text = String::new();
    for m in &manifest {
        writeln!(text, "{}", serde_json::to_string(m).map_err(usage)?).expect("string write");
    }
    std::fs::write(&a.manifest_out, text)
        .with_context(|| format!("writing {}", a.manifest_out.display()))
        .map_err(usage)
}

/// Token sequences from a plain-text file (one whitespace-separated line per
/// utterance) or an NDJSON manifest.
fn read_tokens(path: &Path, model: Option<&TableModel>) -> anyhow::Result<Vec<Vec<String>>> {
    let is_manifest = path.extension().is_some_and(|e| e == "jsonl" || e == "ndjson");
    if is_manifest {
        let entries: Vec<ManifestEntry> = read_ndjson(path)?;
        return Ok(entries
            .into_iter()
            .map(|e| match model {
                Some(m) => m.vocab().decode(&e.tokens),
                None => e.tokens.iter().map(|t| t.0.to_string()).collect(),
            })
            .collect());
    }
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    Ok(text
        .lines()
        .map(|l| l.split_whitespace().map(str::to_string).collect())
        .collect())
}

#[derive(Serialize)]
struct ScoreReport {
    mode: &'static str,
    total: EditStats,
    per_utterance: Vec<EditStats>,
}

fn table_row(out: &mut String, name: &str, s: &EditStats) {
    writeln!(
        out,
        "{name:<10} {:>6} {:>6} {:>6} {:>6} {:>8.2}",
        s.ref_len,
        s.substitutions,
        s.deletions,
        s.insertions,
        100.0 * s.wer
    )
    .expect("string write");
}

fn cmd_score(a: ScoreArgs) -> Outcome {
    let model = a.model.as_deref().map(load_table_model).transpose().map_err(usage)?;
    let hyp = read_tokens(&a.hyp, model.as_ref()).map_err(usage)?;
    let refs = read_tokens(&a.reference, model.as_ref()).map_err(usage)?;
    let (total, per, mode) = match a.mode {
        ScoreMode::Utterance => {
            if hyp.len() != refs.len() {
                return Err(usage(anyhow!(
                    "{} has {} utterances but {} has {}",
                    a.hyp.display(),
                    hyp.len(),
                    a.reference.display(),
                    refs.len()
                )));
            }
            let per: Vec<EditStats> = refs.iter().zip(&hyp).map(|(r, h)| wer(r, h)).collect();
            let total = per.iter().copied().fold(EditStats::default(), |acc, s| acc + s);
            (total, per, "utterance")
        }
        ScoreMode::Session => {
            let flat: Vec<String> = hyp.into_iter().flatten().collect();
            let (total, per) = session_wer(&refs, &flat);
            (total, per, "session")
        }
    };
    let mut table = format!("{:<10} {:>6} {:>6} {:>6} {:>6} {:>8}\n", "", "N", "S", "D", "I", "WER%");
    for (i, s) in per.iter().enumerate() {
        table_row(&mut table, &format!("#{i}"), s);
    }
    table_row(&mut table, "total", &total);
    print!("{table}");
    if let Some(p) = &a.report_out {
        write_json(
            p,
            &ScoreReport {
                mode,
                total,
                per_utterance: per,
            },
        )
        .map_err(usage)?;
    }
    Ok(())
}
