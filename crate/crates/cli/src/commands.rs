use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use mast_core::data::{generate_synthetic, load_corpus, split_paths, write_corpus, SyntheticSpec};
use mast_core::eval::{evaluate_corpus, ContentF1Config, MetricReport};
use mast_core::model::Variant;
use mast_core::tensor::{read_checkpoint, write_checkpoint};
use mast_core::training::{fit, TrainingReport};
use mast_core::{
    cumulative_attention, summarize as decode, Decoded, Model, ModalityKind, MultimodalExample, RawExample,
    Vocabulary, AUDIO_GROUP,
};

use crate::config::RunConfig;
use crate::error::{CliError, Result};
use crate::manifest::{tree_hash, RunManifest};
use crate::{EvaluateArgs, ExportArgs, GenArgs, SummarizeArgs, TrainArgs};

pub const CHECKPOINT_FILE: &str = "model.ckpt";
pub const VOCAB_FILE: &str = "vocab.tsv";
pub const LOG_FILE: &str = "train.log";
pub const MANIFEST_FILE: &str = "manifest.txt";

fn write(path: &Path, contents: impl AsRef<[u8]>) -> Result<()> {
    fs::write(path, contents).map_err(CliError::io(path))
}

fn create_dir(path: &Path) -> Result<()> {
    fs::create_dir_all(path).map_err(CliError::io(path))
}

pub fn gen_synthetic(a: &GenArgs) -> Result<()> {
    let val_n = a.val_n.unwrap_or((a.n / 8).max(1));
    let test_n = a.test_n.unwrap_or((a.n / 8).max(1));
    if a.n == 0 {
        return Err(CliError::Usage("--n must be at least 1".into()));
    }
    let spec = SyntheticSpec {
        n_examples: a.n + val_n + test_n,
        vocab_size: a.vocab_size,
        topic_count: a.topics,
        noise_rate: a.noise,
        seed: a.seed,
        words_per_example: a.words,
        feature_noise: a.feature_noise,
        prototype_scale: a.prototype_scale,
        ..Default::default()
    };
    spec.validate().map_err(|e| CliError::Usage(e.to_string()))?;
    let raws: Vec<RawExample> = generate_synthetic(&spec)?.into_iter().map(|e| e.raw).collect();
    let (train, rest) = raws.split_at(a.n);
    let (val, test) = rest.split_at(val_n);
    for (split, part) in [("train", train), ("val", val), ("test", test)] {
        write_corpus(&a.out, split, part)?;
    }
    println!(
        "wrote {} train, {} val, {} test examples to {}",
        train.len(),
        val.len(),
        test.len(),
        a.out.display()
    );
    Ok(())
}

fn feature_needs(variant: Variant) -> Vec<ModalityKind> {
    variant
        .modalities()
        .iter()
        .copied()
        .filter(|&k| k != ModalityKind::Text)
        .collect()
}

/// Every file a split contributes for `variant`, in a fixed order.
fn split_files(data: &Path, split: &str, variant: Variant, count: usize) -> Vec<PathBuf> {
    let (text, summary, audio, video) = split_paths(data, split);
    let mut files = vec![text, summary];
    for kind in feature_needs(variant) {
        let dir = if kind == ModalityKind::Audio { &audio } else { &video };
        files.extend((0..count).map(|i| dir.join(format!("{i}.feat"))));
    }
    files
}

fn examples(raws: &[RawExample], vocab: &Vocabulary) -> Result<Vec<MultimodalExample>> {
    Ok(raws
        .iter()
        .map(|r| MultimodalExample::from_raw(r, vocab))
        .collect::<mast_core::Result<_>>()?)
}

/// Trains per the resolved config and writes checkpoint, vocabulary, log
/// and manifest into `--out`.
pub fn train(a: &TrainArgs) -> Result<TrainingReport> {
    let cfg = a.flags.resolve()?;
    let needs = feature_needs(cfg.variant);
    let train_raw = load_corpus(&a.data, "train", &needs)?;
    let val_raw = load_corpus(&a.data, &cfg.val_split, &needs)?;
    if train_raw.is_empty() || val_raw.is_empty() {
        return Err(CliError::Data(format!(
            "{}: train and {} splits must be nonempty",
            a.data.display(),
            cfg.val_split
        )));
    }
    let vocab = Vocabulary::build(
        train_raw.iter().flat_map(|r| [r.text.as_str(), r.summary.as_str()]),
        cfg.min_freq,
    )?;
    let train_ex = examples(&train_raw, &vocab)?;
    let val_ex = examples(&val_raw, &vocab)?;

    create_dir(&a.out)?;
    vocab.save(&a.out.join(VOCAB_FILE))?;
    let ckpt_path = a.out.join(CHECKPOINT_FILE);
    let mut model = Model::build(cfg.model_config(vocab.len()), cfg.train.seed)?;
    let say = |msg: String| {
        if !a.quiet {
            eprintln!("{msg}");
        }
    };
    say(format!(
        "training {} ({} parameters, vocabulary {}) on {} examples",
        cfg.variant,
        model.count_parameters(),
        vocab.len(),
        train_ex.len()
    ));
    let report = fit(&mut model, &train_ex, &val_ex, &cfg.train, |m, log| {
        say(log.to_tsv());
        write_checkpoint(&ckpt_path, &m.to_checkpoint())
    })?;
    write(&a.out.join(LOG_FILE), report.log_tsv())?;

    let mut inputs = split_files(&a.data, "train", cfg.variant, train_raw.len());
    inputs.extend(split_files(&a.data, &cfg.val_split, cfg.variant, val_raw.len()));
    let manifest = RunManifest {
        command: "train".into(),
        config: cfg,
        data: a.data.clone(),
        checkpoint: ckpt_path,
        inputs_sha256: tree_hash(&a.data, &inputs)?,
    };
    write(&a.out.join(MANIFEST_FILE), manifest.to_text())?;
    say(format!(
        "best epoch {} (val loss {:.6}) of {}{}",
        report.best_epoch,
        report.best_val_loss,
        report.epochs.len(),
        if report.stopped_early { ", stopped early" } else { "" }
    ));
    Ok(report)
}

/// A trained model with its vocabulary, checked for consistency.
pub struct Trained {
    pub model: Model,
    pub vocab: Vocabulary,
}

pub fn load_trained(dir: &Path, variant: Option<Variant>) -> Result<Trained> {
    let model = Model::from_checkpoint(&read_checkpoint(&dir.join(CHECKPOINT_FILE))?)
        .map_err(|e| CliError::Data(format!("{}: {e}", dir.join(CHECKPOINT_FILE).display())))?;
    let vocab = Vocabulary::load(&dir.join(VOCAB_FILE))?;
    if vocab.len() != model.config.vocab_size {
        return Err(CliError::Data(format!(
            "vocabulary has {} entries but the checkpoint expects {}",
            vocab.len(),
            model.config.vocab_size
        )));
    }
    if let Some(v) = variant {
        if v != model.config.variant {
            return Err(CliError::Data(format!(
                "checkpoint holds a {} model, not {v}",
                model.config.variant
            )));
        }
    }
    Ok(Trained { model, vocab })
}

fn decode_split(
    trained: &Trained,
    data: &Path,
    split: &str,
    beam: usize,
    max_len: usize,
    only: Option<usize>,
) -> Result<Vec<(usize, Decoded)>> {
    let raws = load_corpus(data, split, &feature_needs(trained.model.config.variant))?;
    let picked: Vec<usize> = match only {
        Some(i) if i >= raws.len() => {
            return Err(CliError::Data(format!("split {split} has {} examples, no index {i}", raws.len())))
        }
        Some(i) => vec![i],
        None => (0..raws.len()).collect(),
    };
    picked
        .into_iter()
        .map(|i| {
            let ex = MultimodalExample::from_raw(&raws[i], &trained.vocab)?;
            Ok((i, decode(&trained.model, &ex.to_input(), beam, max_len)?))
        })
        .collect()
}

fn decode_settings(cfg: &RunConfig, greedy: bool) -> usize {
    if greedy {
        1
    } else {
        cfg.train.beam
    }
}

pub fn summarize(a: &SummarizeArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let trained = load_trained(&a.model, a.flags.variant)?;
    let beam = decode_settings(&cfg, a.greedy);
    let decoded = decode_split(&trained, &a.data, &a.split, beam, cfg.max_len, None)?;
    let text: String = decoded
        .iter()
        .map(|(_, d)| trained.vocab.decode(&d.tokens) + "\n")
        .collect();
    write(&a.out, text)?;
    eprintln!("wrote {} summaries to {}", decoded.len(), a.out.display());
    Ok(())
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(CliError::io(path))?;
    Ok(text.lines().map(str::to_string).collect())
}

pub fn evaluate(a: &EvaluateArgs) -> Result<MetricReport> {
    let ref_path = match (&a.r#ref, &a.data) {
        (Some(r), _) => r.clone(),
        (None, Some(d)) => split_paths(d, &a.split).1,
        (None, None) => return Err(CliError::Usage("evaluate needs --ref or --data".into())),
    };
    let hyps = read_lines(&a.hyp)?;
    let refs = read_lines(&ref_path)?;
    if hyps.len() != refs.len() {
        return Err(CliError::Data(format!(
            "{} has {} lines but {} has {}",
            a.hyp.display(),
            hyps.len(),
            ref_path.display(),
            refs.len()
        )));
    }
    let report = evaluate_corpus(&hyps, &refs, &ContentF1Config::default());
    let tsv = report.to_tsv();
    match &a.out {
        Some(p) => {
            write(p, &tsv)?;
            let avg = &report.average;
            println!(
                "R-1 {:.4}  R-2 {:.4}  R-L {:.4}  Content F1 {:.4}",
                avg.rouge1_f, avg.rouge2_f, avg.rouge_l_f, avg.content_f1
            );
        }
        None => print!("{tsv}"),
    }
    Ok(report)
}

/// Audio weights summed over consecutive groups of `group` timesteps.
fn group_sums(alpha: &[f64], group: usize) -> Vec<f64> {
    alpha.chunks(group).map(|c| c.iter().sum()).collect()
}

pub const ATTENTION_FIXED_COLUMNS: [&str; 12] = [
    "example",
    "step",
    "token",
    "delta_audio_text",
    "delta_video_text",
    "beta_audio",
    "beta_text",
    "gamma_video",
    "gamma_text",
    "mass_audio",
    "mass_text",
    "mass_video",
];

fn csv_field(s: &str) -> String {
    if s.contains([',', '"', '\n']) {
        format!("\"{}\"", s.replace('"', "\"\""))
    } else {
        s.to_string()
    }
}

pub fn export_attention(a: &ExportArgs) -> Result<()> {
    let cfg = a.flags.resolve()?;
    let trained = load_trained(&a.model, a.flags.variant)?;
    let variant = trained.model.config.variant;
    if !variant.is_mast() {
        return Err(CliError::Data(format!(
            "variant {variant} has no pair-level (delta/beta/gamma) attention to export"
        )));
    }
    let beam = decode_settings(&cfg, a.greedy);
    let decoded = decode_split(&trained, &a.data, &a.split, beam, cfg.max_len, (!a.all).then_some(a.index))?;
    // binned audio is already one weight per bin
    let audio_group = if variant == Variant::MastBinned { 1 } else { AUDIO_GROUP };

    let mut rows = Vec::new();
    let mut widths = [0usize; 3];
    for (ex, d) in &decoded {
        for (step, w) in d.weights.iter().enumerate() {
            let cum = cumulative_attention(w, AUDIO_GROUP)?;
            let token = d
                .tokens
                .get(step)
                .map_or("<eos>".to_string(), |&t| trained.vocab.decode(&[t]));
            let (delta, beta, gamma) = (w.delta.unwrap(), w.beta.unwrap(), w.gamma.unwrap());
            let mut fixed = vec![ex.to_string(), step.to_string(), csv_field(&token)];
            fixed.extend(
                [
                    delta[0],
                    delta[1],
                    beta[0],
                    beta[1],
                    gamma[0],
                    gamma[1],
                    cum.audio_mass,
                    cum.text_mass,
                    cum.video_mass,
                ]
                .iter()
                .map(|x| format!("{x:.9e}")),
            );
            let alphas = [
                w.alpha[&ModalityKind::Text].clone(),
                group_sums(&w.alpha[&ModalityKind::Audio], audio_group),
                w.alpha[&ModalityKind::Video].clone(),
            ];
            for (wd, al) in widths.iter_mut().zip(&alphas) {
                *wd = (*wd).max(al.len());
            }
            rows.push((fixed, alphas));
        }
    }

    let mut out = ATTENTION_FIXED_COLUMNS.join(",");
    for (prefix, n) in ["text", "audio_group", "video"].iter().zip(widths) {
        for j in 0..n {
            let _ = write!(out, ",{prefix}_{j}");
        }
    }
    out.push('\n');
    for (fixed, alphas) in rows {
        out.push_str(&fixed.join(","));
        for (al, n) in alphas.iter().zip(widths) {
            for j in 0..n {
                out.push(',');
                if let Some(x) = al.get(j) {
                    let _ = write!(out, "{x:.9e}");
                }
            }
        }
        out.push('\n');
    }
    write(&a.out, out)?;
    eprintln!("wrote attention for {} example(s) to {}", decoded.len(), a.out.display());
    Ok(())
}
