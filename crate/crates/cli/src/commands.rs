use std::collections::HashMap;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use candle_core::Device;
use clap::Args;
use durflow_annotate::{serve, Store, StoreConfig};
use durflow_core::acoustic::AcousticTrainer;
use durflow_core::checkpoint::Checkpoint;
use durflow_core::data::synthetic::generate_corpus;
use durflow_core::data::{clip_frames, compute_mel, prepare_corpus, read_mel, read_wav, write_mel, write_wav, Corpus, MelConfig};
use durflow_core::dpo::{read_pairs, write_pairs, DpoTrainer, PauseFilter};
use durflow_core::duration::{DurModelConfig, DurationModel, DurationPrompt, DurationTrainer, CHECKPOINT_KIND as DURATION_KIND};
use durflow_core::nn::ParamStore;
use durflow_core::pipeline::{
    aggregate_metrics, duration_control, style_transfer_sweep, GriffinLim, Lexicon, SynthesisRequest, Synthesizer,
};
use ndarray::Array2;

use crate::config::{self, Config};
use crate::{Common, UsageError};

impl Common {
    fn load(&self) -> Result<Config> {
        config::load(self.config.as_deref(), &self.overrides)
    }

    fn out_or(&self, default: &str) -> PathBuf {
        self.out.clone().unwrap_or_else(|| PathBuf::from(default))
    }
}

fn usage(msg: impl Into<String>) -> anyhow::Error {
    UsageError(msg.into()).into()
}

fn parse_list<T: std::str::FromStr>(raw: &str, what: &str) -> Result<Vec<T>> {
    raw.split(|c: char| c == ',' || c.is_whitespace())
        .filter(|s| !s.is_empty())
        .map(|s| s.parse::<T>().map_err(|_| usage(format!("{what}: cannot parse {s:?}"))))
        .collect()
}

fn parent_dir(path: &Path) -> Result<()> {
    if let Some(d) = path.parent().filter(|d| !d.as_os_str().is_empty()) {
        std::fs::create_dir_all(d)?;
    }
    Ok(())
}

fn load_duration(path: &Path, device: &Device) -> Result<(Checkpoint, DurModelConfig, ParamStore)> {
    let ck = Checkpoint::load(path, device).with_context(|| format!("loading {}", path.display()))?;
    ck.expect_kind(DURATION_KIND)?;
    let cfg: DurModelConfig = ck.config_as()?;
    let store = ParamStore::from_tensors(&ck.params, device)?;
    Ok((ck, cfg, store))
}

#[derive(Args)]
pub struct PrepareArgs {
    #[command(flatten)]
    common: Common,
    /// Raw JSONL manifest; without it a synthetic corpus is generated.
    #[arg(long)]
    manifest: Option<PathBuf>,
}

pub fn prepare_data(a: PrepareArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let out = a.common.out_or("corpus");
    let corpus = match &a.manifest {
        Some(m) => {
            let (corpus, report) = prepare_corpus(m, &cfg.mel, &out)?;
            for (id, reason) in &report.rejected {
                eprintln!("rejected {id}: {reason}");
            }
            corpus
        }
        None => {
            let mut syn = cfg.synthetic.clone();
            if let Some(s) = a.common.seed {
                syn.seed = s;
            }
            let corpus = generate_corpus(&syn, &cfg.mel, None)?;
            corpus.save(&out, &HashMap::new())?;
            corpus
        }
    };
    println!("{}", serde_json::to_string(&corpus.info())?);
    Ok(())
}

#[derive(Args)]
pub struct TrainArgs {
    #[command(flatten)]
    common: Common,
    /// Prepared corpus directory.
    #[arg(long)]
    corpus: PathBuf,
    /// Continue from this checkpoint instead of a fresh initialization.
    #[arg(long)]
    resume: Option<PathBuf>,
}

pub fn train_acoustic(a: TrainArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let device = Device::Cpu;
    let corpus = Corpus::load(&a.corpus)?;
    let seed = a.common.seed.unwrap_or(0);
    let mut tr = match &a.resume {
        Some(p) => AcousticTrainer::from_checkpoint(&Checkpoint::load(p, &device)?, seed, &device)?,
        None => {
            let mut acfg = cfg.acoustic.clone();
            acfg.vocab_size = corpus.vocab.len();
            acfg.n_mels = corpus.mel_cfg.n_mels;
            AcousticTrainer::new(&acfg, seed, &device)?
        }
    };
    let clip = clip_frames(tr.cfg.ref_clip_seconds, &corpus.mel_cfg);
    let every = cfg.train.log_every.max(1);
    tr.fit(&corpus.utterances, cfg.train.steps, cfg.train.batch_size, clip, |s| {
        if (s.step + 1) % every == 0 {
            tracing::info!(step = s.step + 1, loss = s.loss, grad_norm = s.grad_norm, lr = s.lr, "acoustic");
        }
    })?;
    let out = a.common.out_or("acoustic.safetensors");
    parent_dir(&out)?;
    tr.checkpoint()?.with_corpus_info(&corpus.vocab, &corpus.mel_cfg)?.save(&out)?;
    println!("{}", out.display());
    Ok(())
}

pub fn train_duration(a: TrainArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let device = Device::Cpu;
    let corpus = Corpus::load(&a.corpus)?;
    let seed = a.common.seed.unwrap_or(0);
    let mut tr = match &a.resume {
        Some(p) => DurationTrainer::from_checkpoint(&Checkpoint::load(p, &device)?, seed, &device)?,
        None => {
            let mut dcfg = cfg.duration.clone();
            dcfg.vocab_size = corpus.vocab.len();
            dcfg.n_mels = corpus.mel_cfg.n_mels;
            DurationTrainer::new(&dcfg, seed, &device)?
        }
    };
    let clip = clip_frames(tr.cfg.ref_clip_seconds, &corpus.mel_cfg);
    let every = cfg.train.log_every.max(1);
    tr.fit(&corpus.utterances, cfg.train.steps, cfg.train.batch_size, clip, |s| {
        if (s.step + 1) % every == 0 {
            tracing::info!(step = s.step + 1, loss = s.loss, l_ml = s.l_ml, l_dur = s.l_dur, "duration");
        }
    })?;
    let out = a.common.out_or("duration.safetensors");
    parent_dir(&out)?;
    tr.checkpoint()?.with_corpus_info(&corpus.vocab, &corpus.mel_cfg)?.save(&out)?;
    println!("{}", out.display());
    Ok(())
}

#[derive(Args)]
pub struct PairArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    corpus: PathBuf,
    /// Duration checkpoint whose predictions become the losers.
    #[arg(long)]
    duration: PathBuf,
}

pub fn generate_pairs(a: PairArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let device = Device::Cpu;
    let corpus = Corpus::load(&a.corpus)?;
    let (ck, dcfg, store) = load_duration(&a.duration, &device)?;
    if ck.vocab()? != corpus.vocab {
        bail!("corpus vocabulary differs from the checkpoint's");
    }
    let model = DurationModel::new(&dcfg, &store)?;
    let filter =
        (cfg.pairs.pause_multiple > 0.0).then(|| PauseFilter::new(corpus.duration_medians()).with_multiple(cfg.pairs.pause_multiple));
    let clip = clip_frames(dcfg.ref_clip_seconds, &corpus.mel_cfg);
    let pairs = durflow_core::dpo::generate_pairs(
        &corpus.utterances,
        &model,
        &cfg.sampling,
        a.common.seed.unwrap_or(0),
        clip,
        filter.as_ref(),
    )?;
    let path = write_pairs(a.common.out_or("pairs"), &pairs, &corpus.vocab)?;
    println!("{} pairs -> {}", pairs.len(), path.display());
    Ok(())
}

#[derive(Args)]
pub struct DpoArgs {
    #[command(flatten)]
    common: Common,
    /// Duration checkpoint used as both the starting policy and the reference.
    #[arg(long)]
    duration: PathBuf,
    /// Preference pairs (JSONL).
    #[arg(long)]
    pairs: PathBuf,
}

pub fn dpo(a: DpoArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let device = Device::Cpu;
    let (ck, dcfg, store) = load_duration(&a.duration, &device)?;
    let pairs = read_pairs(&a.pairs, &ck.vocab()?)?;
    let mut dpo_cfg = cfg.dpo.clone();
    if let Some(s) = a.common.seed {
        dpo_cfg.seed = s;
    }
    let mut tr = DpoTrainer::new(&dcfg, &store, &dpo_cfg)?;
    let every = cfg.train.log_every.max(1);
    let report = tr.train(&pairs, |step, loss| {
        if (step + 1) % every == 0 {
            tracing::info!(step = step + 1, loss, "dpo");
        }
    })?;
    let mut out_ck = Checkpoint::new(DURATION_KIND, &dcfg, ck.step + dpo_cfg.steps as u64, tr.store.tensors()?)?;
    out_ck.extra = ck.extra.clone();
    out_ck.extra.insert("dpo_reference".into(), report.reference_fingerprint.clone());
    let out = a.common.out_or("duration-dpo.safetensors");
    parent_dir(&out)?;
    out_ck.save(&out)?;
    println!(
        "{}",
        serde_json::json!({
            "pairs": pairs.len(),
            "final_loss": report.losses.last(),
            "mean_margin_before": report.mean_margin_before,
            "mean_margin_after": report.mean_margin_after,
            "checkpoint": out,
        })
    );
    Ok(())
}

#[derive(Args)]
#[command(group(clap::ArgGroup::new("target").required(true).args(["phonemes", "text"])))]
pub struct SynthArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    acoustic: PathBuf,
    #[arg(long)]
    duration: Option<PathBuf>,
    /// Target phoneme symbols separated by spaces.
    #[arg(long)]
    phonemes: Option<String>,
    /// Target text, converted with the lexicon.
    #[arg(long)]
    text: Option<String>,
    /// Tab-separated word-to-phonemes table.
    #[arg(long)]
    lexicon: Option<PathBuf>,
    /// Speaker reference (`.wav` or normalized `.mel`).
    #[arg(long)]
    reference: PathBuf,
    /// Explicit durations (comma separated); bypasses the duration model.
    #[arg(long)]
    durations: Option<String>,
    #[arg(long)]
    prompt_phonemes: Option<String>,
    #[arg(long)]
    prompt_durations: Option<String>,
    /// Multiply durations by this factor.
    #[arg(long)]
    scale: Option<f64>,
    /// Restrict `--scale` to these phoneme indices.
    #[arg(long)]
    scale_indices: Option<String>,
    /// Skip Griffin-Lim and write only the mel.
    #[arg(long)]
    no_vocoder: bool,
}

fn load_reference(path: &Path, mel: &MelConfig) -> Result<Array2<f32>> {
    match path.extension().and_then(|e| e.to_str()) {
        Some("wav") => Ok(compute_mel(&read_wav(path)?, mel)?),
        Some("mel") => Ok(read_mel(path)?),
        _ => Err(usage(format!("{}: reference must be .wav or .mel", path.display()))),
    }
}

pub fn synth(a: SynthArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let device = Device::Cpu;
    let acoustic = Checkpoint::load(&a.acoustic, &device)?;
    let duration = a.duration.as_ref().map(|p| Checkpoint::load(p, &device)).transpose()?;
    let mut synth = Synthesizer::from_checkpoints(&acoustic, duration.as_ref(), &device)?;
    if !a.no_vocoder {
        let mel_cfg = synth.mel_cfg.clone();
        synth = synth.with_vocoder(Box::new(GriffinLim::new(mel_cfg)));
    }
    let phonemes = match (&a.phonemes, &a.text) {
        (Some(p), _) => synth
            .vocab
            .encode(&p.split_whitespace().collect::<Vec<_>>())?,
        (None, Some(t)) => {
            let lex = match &a.lexicon {
                Some(p) => Lexicon::load(p)?,
                None => Lexicon::new(),
            };
            lex.to_phonemes(t, &synth.vocab)?
        }
        (None, None) => unreachable!("clap requires one of them"),
    };
    let reference = load_reference(&a.reference, &synth.mel_cfg)?;
    let mut req = SynthesisRequest::new(phonemes, reference.clone());
    req.sampling = cfg.sampling;
    req.solver = cfg.solver;
    req.cfg = cfg.cfg;
    req.seed = a.common.seed.unwrap_or(0);
    if let Some(d) = &a.durations {
        req.durations = Some(parse_list(d, "--durations")?);
    }
    match (&a.prompt_phonemes, &a.prompt_durations) {
        (Some(p), Some(d)) => {
            req.prompt = Some(DurationPrompt {
                phonemes: synth.vocab.encode(&p.split_whitespace().collect::<Vec<_>>())?,
                durations: parse_list(d, "--prompt-durations")?,
                ref_mel: reference,
            })
        }
        (None, None) => {}
        _ => return Err(usage("--prompt-phonemes and --prompt-durations go together")),
    }
    if req.durations.is_none() && (synth.duration.is_none() || req.prompt.is_none()) {
        return Err(usage("give --durations, or --duration with a prompt"));
    }
    if let Some(scale) = a.scale {
        let idx = a.scale_indices.as_deref().map(|s| parse_list::<usize>(s, "--scale-indices")).transpose()?;
        let base = synth.resolve_durations(&req)?;
        req.durations = Some(duration_control(&base, scale, idx.as_deref())?);
    }
    let out = synth.synthesize(&req)?;
    let dir = a.common.out_or("synth");
    std::fs::create_dir_all(&dir)?;
    write_mel(dir.join("mel.mel"), &out.mel)?;
    std::fs::write(dir.join("durations.json"), serde_json::to_string(&out.durations)?)?;
    if let Some(w) = &out.waveform {
        write_wav(dir.join("audio.wav"), w)?;
    }
    println!(
        "{}",
        serde_json::json!({"frames": out.mel.nrows(), "durations": out.durations, "out": dir})
    );
    Ok(())
}

#[derive(Args)]
pub struct SweepArgs {
    #[command(flatten)]
    common: Common,
    #[arg(long)]
    duration: PathBuf,
    /// Corpus whose utterances become preference pairs.
    #[arg(long)]
    train_corpus: PathBuf,
    /// Held-out corpus for evaluation.
    #[arg(long)]
    test_corpus: PathBuf,
}

pub fn sweep(a: SweepArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let device = Device::Cpu;
    let (_, dcfg, store) = load_duration(&a.duration, &device)?;
    let train = Corpus::load(&a.train_corpus)?;
    let test = Corpus::load(&a.test_corpus)?;
    let mut scfg = cfg.sweep.clone();
    if let Some(s) = a.common.seed {
        scfg.data_seed = s;
    }
    let report = style_transfer_sweep(&dcfg, &store, &train.utterances, &test.utterances, &scfg, |r| {
        tracing::info!(pairs = r.pair_count, seed = r.seed, mae = r.metrics.mean_abs_err, "sweep run");
    })?;
    let dir = a.common.out_or("sweep");
    report.write(&dir)?;
    print!("{}", report.to_table());
    Ok(())
}

#[derive(Args)]
pub struct ServeArgs {
    #[command(flatten)]
    common: Common,
    /// Prepared corpus providing the vocabulary and pause medians.
    #[arg(long)]
    corpus: PathBuf,
    /// Comma-separated annotator ids.
    #[arg(long)]
    annotators: String,
    #[arg(long, default_value = "127.0.0.1:8080")]
    addr: std::net::SocketAddr,
    /// Root for relative media paths.
    #[arg(long, default_value = ".")]
    media_root: PathBuf,
}

pub fn annotate_serve(a: ServeArgs) -> Result<()> {
    let cfg = a.common.load()?;
    let corpus = Corpus::load(&a.corpus)?;
    let annotators: Vec<String> = a
        .annotators
        .split(',')
        .map(str::trim)
        .filter(|s| !s.is_empty())
        .map(String::from)
        .collect();
    if annotators.is_empty() {
        return Err(usage("--annotators needs at least one id"));
    }
    let filter =
        (cfg.pairs.pause_multiple > 0.0).then(|| PauseFilter::new(corpus.duration_medians()).with_multiple(cfg.pairs.pause_multiple));
    let store = Store::open(StoreConfig {
        log_path: a.common.out_or("annotations").join("log.jsonl"),
        media_root: a.media_root,
        vocab: corpus.vocab,
        annotators,
        pause_filter: filter,
        seed: a.common.seed.unwrap_or(0),
    })?;
    let rt = tokio::runtime::Runtime::new()?;
    rt.block_on(serve(std::sync::Arc::new(store), a.addr))?;
    Ok(())
}

#[derive(Args)]
pub struct EvalArgs {
    #[command(flatten)]
    common: Common,
    /// One duration sequence per line.
    #[arg(long)]
    predicted: PathBuf,
    #[arg(long)]
    reference: PathBuf,
}

fn read_sequences(path: &Path) -> Result<Vec<Vec<u32>>> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| parse_list(l, &path.display().to_string()))
        .collect()
}

pub fn eval(a: EvalArgs) -> Result<()> {
    a.common.load()?;
    let pred = read_sequences(&a.predicted)?;
    let refs = read_sequences(&a.reference)?;
    if pred.len() != refs.len() {
        bail!("{} predicted sequences for {} references", pred.len(), refs.len());
    }
    let m = aggregate_metrics(&pred.into_iter().zip(refs).collect::<Vec<_>>())?;
    let json = serde_json::to_string_pretty(&m)?;
    if let Some(out) = &a.common.out {
        parent_dir(out)?;
        std::fs::write(out, &json)?;
    }
    println!("{json}");
    Ok(())
}
