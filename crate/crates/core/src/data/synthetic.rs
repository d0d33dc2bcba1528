//! Seeded synthetic multimodal corpus.
//!
//! Each example belongs to a topic and draws a few words from that topic's
//! pool. The transcript is those words with function-word noise inserted;
//! the summary is a fixed template over them, so the transcript alone
//! determines the summary. Audio marks which tokens are topic words, video
//! only identifies the topic: the task is text-dominant by construction.

use rand::seq::IndexedRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal};

use crate::data::corpus::RawExample;
use crate::error::{Error, Result};
use crate::model::{AUDIO_DIM, VIDEO_DIM};
use crate::tensor::Tensor;

pub const FUNCTION_WORDS: [&str; 12] = [
    "the", "a", "and", "to", "of", "so", "you", "it", "is", "we", "just", "um",
];

const SYLLABLES: [&str; 16] = [
    "ba", "ko", "mi", "tu", "re", "sa", "lo", "ne", "di", "fa", "gu", "pe", "vo", "zi", "ha", "ju",
];

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticSpec {
    pub n_examples: usize,
    /// Number of distinct content words.
    pub vocab_size: usize,
    pub topic_count: usize,
    /// Probability of inserting another function word before each content
    /// word (geometric run length).
    pub noise_rate: f64,
    pub seed: u64,
    pub words_per_example: usize,
    pub frames_per_token: usize,
    pub video_steps: usize,
    /// Standard deviation of the Gaussian noise on every audio and video value.
    pub feature_noise: f64,
    /// Standard deviation of the per-topic video prototype entries.
    pub prototype_scale: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            n_examples: 64,
            vocab_size: 24,
            topic_count: 4,
            noise_rate: 0.3,
            seed: 0,
            words_per_example: 3,
            frames_per_token: 2,
            video_steps: 4,
            feature_noise: 0.1,
            prototype_scale: 1.0,
        }
    }
}

impl SyntheticSpec {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::contract(m.to_string()));
        if self.n_examples == 0 {
            return bad("n_examples must be positive");
        }
        if self.topic_count == 0 || self.topic_count > self.vocab_size {
            return bad("topic_count must be in 1..=vocab_size");
        }
        if !(0.0..1.0).contains(&self.noise_rate) {
            return bad("noise_rate must be in [0, 1)");
        }
        if self.words_per_example == 0 || self.frames_per_token == 0 || self.video_steps == 0 {
            return bad("words_per_example, frames_per_token and video_steps must be positive");
        }
        if !(self.feature_noise >= 0.0 && self.feature_noise.is_finite())
            || !(self.prototype_scale >= 0.0 && self.prototype_scale.is_finite())
        {
            return bad("feature_noise and prototype_scale must be finite and nonnegative");
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SyntheticExample {
    pub raw: RawExample,
    pub topic: usize,
    pub topic_words: Vec<String>,
}

/// Deterministic pronounceable content word for index `i`.
pub fn content_word(i: usize) -> String {
    let n = SYLLABLES.len();
    format!("{}{}{}", SYLLABLES[i % n], SYLLABLES[(i / n) % n], SYLLABLES[(i / (n * n) + i) % n])
}

pub fn summary_template(topic_words: &[String]) -> String {
    format!("learn about {} in this video", topic_words.join(" and "))
}

fn f32_exact(x: f64) -> f64 {
    x as f32 as f64
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<SyntheticExample>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.feature_noise).expect("validated std");
    let unit = Normal::new(0.0, spec.prototype_scale).expect("validated std");

    let lexicon: Vec<String> = (0..spec.vocab_size).map(content_word).collect();
    let pools: Vec<Vec<&String>> = (0..spec.topic_count)
        .map(|t| lexicon.iter().skip(t).step_by(spec.topic_count).collect())
        .collect();
    let prototypes: Vec<Vec<f64>> = (0..spec.topic_count)
        .map(|_| (0..VIDEO_DIM).map(|_| unit.sample(&mut rng)).collect())
        .collect();

    let mut out = Vec::with_capacity(spec.n_examples);
    for _ in 0..spec.n_examples {
        let topic = rng.random_range(0..spec.topic_count);
        let pool = &pools[topic];
        let k = spec.words_per_example.min(pool.len());
        let topic_words: Vec<String> = pool.choose_multiple(&mut rng, k).map(|w| (*w).clone()).collect();

        let mut tokens: Vec<(&str, bool)> = Vec::new();
        for w in &topic_words {
            while rng.random::<f64>() < spec.noise_rate {
                let f = FUNCTION_WORDS[rng.random_range(0..FUNCTION_WORDS.len())];
                tokens.push((f, false));
            }
            tokens.push((w, true));
        }
        let text = tokens.iter().map(|(t, _)| *t).collect::<Vec<_>>().join(" ");

        let mut audio = Vec::with_capacity(tokens.len() * spec.frames_per_token * AUDIO_DIM);
        for &(_, emphasized) in &tokens {
            let band = if emphasized { 0..8 } else { 8..16 };
            for _ in 0..spec.frames_per_token {
                for d in 0..AUDIO_DIM {
                    let base = if band.contains(&d) { 1.0 } else { 0.0 };
                    audio.push(f32_exact(base + noise.sample(&mut rng)));
                }
            }
        }
        let audio = Tensor::matrix(tokens.len() * spec.frames_per_token, AUDIO_DIM, audio)?;

        let mut video = Vec::with_capacity(spec.video_steps * VIDEO_DIM);
        for _ in 0..spec.video_steps {
            for &p in &prototypes[topic] {
                video.push(f32_exact(p + noise.sample(&mut rng)));
            }
        }
        let video = Tensor::matrix(spec.video_steps, VIDEO_DIM, video)?;

        out.push(SyntheticExample {
            raw: RawExample {
                text,
                summary: summary_template(&topic_words),
                audio: Some(audio),
                video: Some(video),
            },
            topic,
            topic_words,
        });
    }
    Ok(out)
}
