//! How2-shaped corpus layout:
//!
//! ```text
//! <root>/<split>.text            one transcript per line
//! <root>/<split>.summary         one summary per line
//! <root>/<split>.audio/<i>.feat  [T_a × 43]
//! <root>/<split>.video/<i>.feat  [T_v × 2048]
//! ```
//!
//! Feature files: `"MASTFEAT"`, u32 version, u64 rows, u64 cols, then
//! row-major little-endian `f32` values.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use crate::data::vocab::{Vocabulary, EOS};
use crate::encoders::ModalityKind;
use crate::error::{Error, Result};
use crate::model::{ModelInput, AUDIO_DIM, VIDEO_DIM};
use crate::tensor::Tensor;

pub const FEATURE_MAGIC: &[u8; 8] = b"MASTFEAT";
pub const FEATURE_VERSION: u32 = 1;

/// An example as stored on disk, before tokenization.
#[derive(Debug, Clone, PartialEq)]
pub struct RawExample {
    pub text: String,
    pub summary: String,
    pub audio: Option<Tensor>,
    pub video: Option<Tensor>,
}

/// Tokenized example with validated feature blocks.
#[derive(Debug, Clone, PartialEq)]
pub struct MultimodalExample {
    pub text: Vec<usize>,
    pub audio: Option<Tensor>,
    pub video: Option<Tensor>,
    pub summary: Vec<usize>,
}

impl MultimodalExample {
    pub fn new(text: Vec<usize>, audio: Option<Tensor>, video: Option<Tensor>, summary: Vec<usize>) -> Result<Self> {
        if text.is_empty() {
            return Err(Error::EmptyInput("transcript"));
        }
        if summary.is_empty() {
            return Err(Error::EmptyInput("summary"));
        }
        check_width(audio.as_ref(), AUDIO_DIM, "audio")?;
        check_width(video.as_ref(), VIDEO_DIM, "video")?;
        Ok(Self {
            text,
            audio,
            video,
            summary,
        })
    }

    /// Tokenizes `raw` and normalizes its audio per dimension.
    pub fn from_raw(raw: &RawExample, vocab: &Vocabulary) -> Result<Self> {
        Self::new(
            vocab.encode(&raw.text),
            raw.audio.as_ref().map(normalize_audio),
            raw.video.clone(),
            vocab.encode(&raw.summary),
        )
    }

    pub fn to_input(&self) -> ModelInput {
        ModelInput::new(self.text.clone(), self.audio.clone(), self.video.clone())
    }

    /// Summary followed by `<eos>`.
    pub fn targets(&self) -> Vec<usize> {
        let mut t = self.summary.clone();
        t.push(EOS);
        t
    }
}

fn check_width(t: Option<&Tensor>, width: usize, what: &str) -> Result<()> {
    if let Some(t) = t {
        if t.shape().len() != 2 || t.cols() != width {
            return Err(Error::contract(format!(
                "{what} features must be [T × {width}], got {:?}",
                t.shape()
            )));
        }
    }
    Ok(())
}

/// Zero mean and unit variance per feature dimension over the sequence.
/// Constant dimensions are only centered.
pub fn normalize_audio(frames: &Tensor) -> Tensor {
    let (t, d) = (frames.rows(), frames.cols());
    let mut out = frames.clone();
    for j in 0..d {
        let mean = (0..t).map(|i| frames.row(i)[j]).sum::<f64>() / t as f64;
        let var = (0..t).map(|i| (frames.row(i)[j] - mean).powi(2)).sum::<f64>() / t as f64;
        let scale = if var > 1e-12 { var.sqrt() } else { 1.0 };
        for i in 0..t {
            out.data_mut()[i * d + j] = (frames.row(i)[j] - mean) / scale;
        }
    }
    out
}

pub fn write_features(path: &Path, t: &Tensor) -> Result<()> {
    if t.shape().len() != 2 {
        return Err(Error::dim("write_features", t.shape(), &[]));
    }
    let mut buf = Vec::with_capacity(28 + 4 * t.numel());
    buf.extend_from_slice(FEATURE_MAGIC);
    buf.extend_from_slice(&FEATURE_VERSION.to_le_bytes());
    buf.extend_from_slice(&(t.rows() as u64).to_le_bytes());
    buf.extend_from_slice(&(t.cols() as u64).to_le_bytes());
    for &v in t.data() {
        buf.extend_from_slice(&(v as f32).to_le_bytes());
    }
    let mut f = fs::File::create(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    f.write_all(&buf)?;
    Ok(())
}

pub fn read_features(path: &Path) -> Result<Tensor> {
    let bytes = fs::read(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    if bytes.len() < 28 || &bytes[..8] != FEATURE_MAGIC {
        return Err(Error::format(path, "not a MASTFEAT file"));
    }
    let version = u32::from_le_bytes(bytes[8..12].try_into().expect("4 bytes"));
    if version != FEATURE_VERSION {
        return Err(Error::format(path, format!("unsupported feature version {version}")));
    }
    let rows = u64::from_le_bytes(bytes[12..20].try_into().expect("8 bytes")) as usize;
    let cols = u64::from_le_bytes(bytes[20..28].try_into().expect("8 bytes")) as usize;
    if rows == 0 || cols == 0 {
        return Err(Error::format(path, "empty feature matrix"));
    }
    let body = &bytes[28..];
    if body.len() != rows * cols * 4 {
        return Err(Error::format(
            path,
            format!("expected {} values, found {} bytes", rows * cols, body.len()),
        ));
    }
    let data = body
        .chunks_exact(4)
        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")) as f64)
        .collect();
    Tensor::matrix(rows, cols, data)
}

pub fn split_paths(root: &Path, split: &str) -> (PathBuf, PathBuf, PathBuf, PathBuf) {
    (
        root.join(format!("{split}.text")),
        root.join(format!("{split}.summary")),
        root.join(format!("{split}.audio")),
        root.join(format!("{split}.video")),
    )
}

fn read_lines(path: &Path) -> Result<Vec<String>> {
    let text = fs::read_to_string(path).map_err(|source| Error::Load {
        path: path.to_path_buf(),
        source,
    })?;
    Ok(text.lines().map(str::to_string).collect())
}

/// Loads a split. Feature directories are only read for the modalities in
/// `needs`; the others are left as `None`.
pub fn load_corpus(root: &Path, split: &str, needs: &[ModalityKind]) -> Result<Vec<RawExample>> {
    let (text_p, sum_p, audio_dir, video_dir) = split_paths(root, split);
    let texts = read_lines(&text_p)?;
    let summaries = read_lines(&sum_p)?;
    if texts.len() != summaries.len() {
        return Err(Error::format(
            &sum_p,
            format!("{} summaries for {} transcripts", summaries.len(), texts.len()),
        ));
    }
    let load = |dir: &Path, i: usize, width: usize| -> Result<Tensor> {
        let p = dir.join(format!("{i}.feat"));
        let t = read_features(&p)?;
        if t.cols() != width {
            return Err(Error::format(&p, format!("feature width {} (expected {width})", t.cols())));
        }
        Ok(t)
    };
    texts
        .into_iter()
        .zip(summaries)
        .enumerate()
        .map(|(i, (text, summary))| {
            let audio = needs
                .contains(&ModalityKind::Audio)
                .then(|| load(&audio_dir, i, AUDIO_DIM))
                .transpose()?;
            let video = needs
                .contains(&ModalityKind::Video)
                .then(|| load(&video_dir, i, VIDEO_DIM))
                .transpose()?;
            Ok(RawExample {
                text,
                summary,
                audio,
                video,
            })
        })
        .collect()
}

/// Writes a split in the layout read by [`load_corpus`].
pub fn write_corpus(root: &Path, split: &str, examples: &[RawExample]) -> Result<()> {
    let (text_p, sum_p, audio_dir, video_dir) = split_paths(root, split);
    fs::create_dir_all(root)?;
    let join = |f: fn(&RawExample) -> &str| -> String {
        examples.iter().map(|e| format!("{}\n", f(e))).collect()
    };
    fs::write(&text_p, join(|e| &e.text))?;
    fs::write(&sum_p, join(|e| &e.summary))?;
    if examples.iter().any(|e| e.audio.is_some()) {
        fs::create_dir_all(&audio_dir)?;
    }
    if examples.iter().any(|e| e.video.is_some()) {
        fs::create_dir_all(&video_dir)?;
    }
    for (i, e) in examples.iter().enumerate() {
        if let Some(a) = &e.audio {
            write_features(&audio_dir.join(format!("{i}.feat")), a)?;
        }
        if let Some(v) = &e.video {
            write_features(&video_dir.join(format!("{i}.feat")), v)?;
        }
    }
    Ok(())
}
