//! ROUGE-1/2/L and Content F1.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;

use crate::data::tokenize;

pub const CATCHPHRASES: [&str; 8] = ["in", "this", "free", "video", "learn", "how", "tips", "expert"];

const FUNCTION_WORDS: &str = include_str!("../data/function_words.txt");

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Prf {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl Prf {
    fn from_counts(overlap: usize, hyp: usize, reference: usize) -> Self {
        match (hyp, reference) {
            (0, 0) => Self::perfect(),
            (0, _) | (_, 0) => Self::default(),
            _ => {
                let p = overlap as f64 / hyp as f64;
                let r = overlap as f64 / reference as f64;
                Self {
                    precision: p,
                    recall: r,
                    f1: harmonic(p, r),
                }
            }
        }
    }

    fn perfect() -> Self {
        Self {
            precision: 1.0,
            recall: 1.0,
            f1: 1.0,
        }
    }
}

fn harmonic(p: f64, r: f64) -> f64 {
    if p + r == 0.0 {
        0.0
    } else {
        2.0 * p * r / (p + r)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct RougeScores {
    pub rouge1: Prf,
    pub rouge2: Prf,
    pub rouge_l: Prf,
}

fn ngrams<S: AsRef<str>>(tokens: &[S], n: usize) -> HashMap<Vec<&str>, usize> {
    let mut counts = HashMap::new();
    if tokens.len() >= n {
        for w in tokens.windows(n) {
            *counts.entry(w.iter().map(AsRef::as_ref).collect()).or_default() += 1;
        }
    }
    counts
}

/// Clipped n-gram overlap.
///
/// # Panics
/// If `n == 0`.
pub fn rouge_n<S: AsRef<str>>(hyp: &[S], reference: &[S], n: usize) -> Prf {
    assert!(n >= 1, "n-gram order must be at least 1");
    let h = ngrams(hyp, n);
    let r = ngrams(reference, n);
    let overlap = h
        .iter()
        .map(|(g, &c)| c.min(r.get(g).copied().unwrap_or(0)))
        .sum();
    Prf::from_counts(overlap, h.values().sum(), r.values().sum())
}

/// Length of the longest common subsequence.
pub fn lcs_len<S: AsRef<str>>(a: &[S], b: &[S]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x.as_ref() == y.as_ref() {
                prev[j] + 1
            } else {
                prev[j + 1].max(cur[j])
            };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

pub fn rouge_l<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> Prf {
    Prf::from_counts(lcs_len(hyp, reference), hyp.len(), reference.len())
}

pub fn rouge<S: AsRef<str>>(hyp: &[S], reference: &[S]) -> RougeScores {
    RougeScores {
        rouge1: rouge_n(hyp, reference, 1),
        rouge2: rouge_n(hyp, reference, 2),
        rouge_l: rouge_l(hyp, reference),
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ContentF1Config {
    pub function_words: HashSet<String>,
    pub catchphrases: HashSet<String>,
}

impl Default for ContentF1Config {
    fn default() -> Self {
        Self {
            function_words: FUNCTION_WORDS
                .lines()
                .map(str::trim)
                .filter(|l| !l.is_empty())
                .map(str::to_string)
                .collect(),
            catchphrases: CATCHPHRASES.iter().map(|s| s.to_string()).collect(),
        }
    }
}

impl ContentF1Config {
    pub fn is_content(&self, token: &str) -> bool {
        !self.catchphrases.contains(token) && !self.function_words.contains(token)
    }

    pub fn content_words<'t, S: AsRef<str>>(&self, tokens: &'t [S]) -> Vec<&'t str> {
        tokens
            .iter()
            .map(AsRef::as_ref)
            .filter(|t| self.is_content(t))
            .collect()
    }
}

/// F1 over content words matched exactly as multisets.
pub fn content_f1<S: AsRef<str>>(hyp: &[S], reference: &[S], cfg: &ContentF1Config) -> f64 {
    let h = cfg.content_words(hyp);
    let r = cfg.content_words(reference);
    let mut counts: HashMap<&str, usize> = HashMap::new();
    for t in &r {
        *counts.entry(t).or_default() += 1;
    }
    let mut overlap = 0;
    for t in &h {
        if let Some(c) = counts.get_mut(t) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    Prf::from_counts(overlap, h.len(), r.len()).f1
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub id: String,
    pub rouge1_f: f64,
    pub rouge2_f: f64,
    pub rouge_l_f: f64,
    pub content_f1: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct MetricReport {
    pub rows: Vec<ReportRow>,
    pub average: ReportRow,
}

impl MetricReport {
    pub fn to_tsv(&self) -> String {
        let mut out = String::from("id\tr1_f\tr2_f\trl_f\tcontent_f1\n");
        for r in self.rows.iter().chain(std::iter::once(&self.average)) {
            let _ = writeln!(
                out,
                "{}\t{:.6}\t{:.6}\t{:.6}\t{:.6}",
                r.id, r.rouge1_f, r.rouge2_f, r.rouge_l_f, r.content_f1
            );
        }
        out
    }
}

/// Scores aligned hypothesis/reference lines. Rows are numbered from 0.
pub fn evaluate_corpus<S: AsRef<str>>(hyps: &[S], refs: &[S], cfg: &ContentF1Config) -> MetricReport {
    let rows: Vec<ReportRow> = hyps
        .iter()
        .zip(refs)
        .enumerate()
        .map(|(i, (h, r))| {
            let h = tokenize(h.as_ref());
            let r = tokenize(r.as_ref());
            let s = rouge(&h, &r);
            ReportRow {
                id: i.to_string(),
                rouge1_f: s.rouge1.f1,
                rouge2_f: s.rouge2.f1,
                rouge_l_f: s.rouge_l.f1,
                content_f1: content_f1(&h, &r, cfg),
            }
        })
        .collect();
    let n = rows.len().max(1) as f64;
    let mean = |f: fn(&ReportRow) -> f64| rows.iter().map(f).sum::<f64>() / n;
    let average = ReportRow {
        id: "average".into(),
        rouge1_f: mean(|r| r.rouge1_f),
        rouge2_f: mean(|r| r.rouge2_f),
        rouge_l_f: mean(|r| r.rouge_l_f),
        content_f1: mean(|r| r.content_f1),
    };
    MetricReport { rows, average }
}
