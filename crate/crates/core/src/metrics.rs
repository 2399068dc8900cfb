//! Corpus BLEU, pairwise ROUGE-1/L F1 and corpus-level distinct-n.
//!
//! All scores are on a 0-100 scale. Texts are tokenised by stripping
//! punctuation and splitting on whitespace, or into single characters in
//! character mode.

use std::collections::{HashMap, HashSet};
use std::fmt::Write as _;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum TokenMode {
    #[default]
    Whitespace,
    Char,
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct MetricOptions {
    pub mode: TokenMode,
    /// Characters removed in addition to ASCII punctuation.
    pub extra_punctuation: String,
}

impl MetricOptions {
    pub fn tokenize(&self, text: &str) -> Vec<String> {
        let is_punct = |c: char| c.is_ascii_punctuation() || self.extra_punctuation.contains(c);
        let cleaned: String = text.chars().map(|c| if is_punct(c) { ' ' } else { c }).collect();
        match self.mode {
            TokenMode::Whitespace => cleaned.split_whitespace().map(String::from).collect(),
            TokenMode::Char => cleaned.chars().filter(|c| !c.is_whitespace()).map(String::from).collect(),
        }
    }
}

fn ngram_counts(tokens: &[String], n: usize) -> HashMap<&[String], usize> {
    let mut m = HashMap::new();
    if n > 0 && tokens.len() >= n {
        for w in tokens.windows(n) {
            *m.entry(w).or_insert(0) += 1;
        }
    }
    m
}

fn check_pairs(candidates: &[Vec<String>], references: &[Vec<String>]) -> Result<()> {
    if candidates.is_empty() {
        return Err(Error::Metric("no candidates to score".into()));
    }
    if candidates.len() != references.len() {
        return Err(Error::Metric(format!(
            "{} candidates but {} references",
            candidates.len(),
            references.len()
        )));
    }
    Ok(())
}

/// Corpus BLEU up to order `n` with uniform weights. Orders above one whose
/// match count is zero use add-one smoothing; the brevity penalty applies
/// when the candidate corpus is shorter than the reference corpus.
pub fn bleu_n(candidates: &[Vec<String>], references: &[Vec<String>], n: usize) -> Result<Real> {
    check_pairs(candidates, references)?;
    if n == 0 {
        return Err(Error::Metric("BLEU order must be at least 1".into()));
    }
    let mut log_sum = 0.0f64;
    for k in 1..=n {
        let (mut matched, mut total) = (0usize, 0usize);
        for (c, r) in candidates.iter().zip(references) {
            let rc = ngram_counts(r, k);
            for (g, cnt) in ngram_counts(c, k) {
                matched += cnt.min(rc.get(g).copied().unwrap_or(0));
                total += cnt;
            }
        }
        let p = if matched == 0 && k > 1 {
            1.0 / (total as f64 + 1.0)
        } else if total == 0 {
            0.0
        } else {
            matched as f64 / total as f64
        };
        if p == 0.0 {
            return Ok(0.0);
        }
        log_sum += p.ln();
    }
    let c: usize = candidates.iter().map(Vec::len).sum();
    let r: usize = references.iter().map(Vec::len).sum();
    if c == 0 {
        return Ok(0.0);
    }
    let bp = if c < r { (1.0 - r as f64 / c as f64).exp() } else { 1.0 };
    Ok((100.0 * bp * (log_sum / n as f64).exp()) as Real)
}

fn f1(overlap: usize, c: usize, r: usize) -> f64 {
    if c == 0 && r == 0 {
        return 1.0;
    }
    if overlap == 0 {
        return 0.0;
    }
    let p = overlap as f64 / c as f64;
    let rec = overlap as f64 / r as f64;
    2.0 * p * rec / (p + rec)
}

pub fn lcs_len(a: &[String], b: &[String]) -> usize {
    let mut prev = vec![0usize; b.len() + 1];
    let mut cur = vec![0usize; b.len() + 1];
    for x in a {
        for (j, y) in b.iter().enumerate() {
            cur[j + 1] = if x == y { prev[j] + 1 } else { cur[j].max(prev[j + 1]) };
        }
        std::mem::swap(&mut prev, &mut cur);
    }
    prev[b.len()]
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RougeVariant {
    #[serde(rename = "1")]
    One,
    #[serde(rename = "L")]
    L,
}

/// ROUGE F1 averaged over candidate/reference pairs.
pub fn rouge(candidates: &[Vec<String>], references: &[Vec<String>], variant: RougeVariant) -> Result<Real> {
    check_pairs(candidates, references)?;
    let total: f64 = candidates
        .iter()
        .zip(references)
        .map(|(c, r)| {
            let overlap = match variant {
                RougeVariant::One => {
                    let rc = ngram_counts(r, 1);
                    ngram_counts(c, 1)
                        .into_iter()
                        .map(|(g, n)| n.min(rc.get(g).copied().unwrap_or(0)))
                        .sum()
                }
                RougeVariant::L => lcs_len(c, r),
            };
            f1(overlap, c.len(), r.len())
        })
        .sum();
    Ok((100.0 * total / candidates.len() as f64) as Real)
}

/// Distinct n-grams of the concatenated, punctuation-stripped corpus divided
/// by its token count, times 100. N-grams spanning two descriptions count.
pub fn distinct_n_corpus(descriptions: &[String], n: usize, opts: &MetricOptions) -> Result<Real> {
    if n == 0 {
        return Err(Error::Metric("distinct-n order must be at least 1".into()));
    }
    let tokens: Vec<String> = descriptions.iter().flat_map(|d| opts.tokenize(d)).collect();
    distinct_n_tokens(&tokens, n)
}

pub fn distinct_n_tokens(tokens: &[String], n: usize) -> Result<Real> {
    if tokens.is_empty() {
        return Err(Error::Metric("distinct-n over an empty token list".into()));
    }
    let distinct: HashSet<&[String]> = if tokens.len() >= n {
        tokens.windows(n).collect()
    } else {
        HashSet::new()
    };
    Ok((distinct.len() as f64 / tokens.len() as f64 * 100.0) as Real)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub bleu1: Real,
    pub bleu2: Real,
    pub rouge1_f: Real,
    #[serde(rename = "rougeL_f")]
    pub rouge_l_f: Real,
    pub d2: Real,
    pub d3: Real,
    pub d4: Real,
    pub d5: Real,
}

impl MetricsReport {
    pub const HEADERS: [&'static str; 8] = ["BLEU-1", "BLEU-2", "ROUGE-1", "ROUGE-L", "D-2", "D-3", "D-4", "D-5"];

    pub fn values(&self) -> [Real; 8] {
        [
            self.bleu1,
            self.bleu2,
            self.rouge1_f,
            self.rouge_l_f,
            self.d2,
            self.d3,
            self.d4,
            self.d5,
        ]
    }

    pub fn in_range(&self) -> bool {
        self.values().iter().all(|v| v.is_finite() && (0.0..=100.0).contains(v))
    }

    pub fn table(&self) -> String {
        format_table(&[("run".to_string(), *self)])
    }
}

/// Aligned plain-text table, one row per named report.
pub fn format_table(rows: &[(String, MetricsReport)]) -> String {
    let name_w = rows.iter().map(|(n, _)| n.len()).max().unwrap_or(0).max(7);
    let mut out = format!("{:<name_w$}", "variant");
    for h in MetricsReport::HEADERS {
        let _ = write!(out, "  {h:>7}");
    }
    out.push('\n');
    for (name, r) in rows {
        let _ = write!(out, "{name:<name_w$}");
        for v in r.values() {
            let _ = write!(out, "  {v:>7.2}");
        }
        out.push('\n');
    }
    out
}

/// One line of a predictions or references file.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TextRecord {
    pub id: String,
    pub text: String,
}

pub fn parse_records(contents: &str) -> Result<Vec<TextRecord>> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| serde_json::from_str(l).map_err(|e| Error::json(format!("record line {}", i + 1), e)))
        .collect()
}

pub fn records_to_string(records: &[TextRecord]) -> Result<String> {
    let mut out = String::new();
    for r in records {
        out.push_str(&serde_json::to_string(r).map_err(|e| Error::json("record", e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn read_records(path: &Path) -> Result<Vec<TextRecord>> {
    parse_records(&fs::read_to_string(path).map_err(|e| Error::io(path, e))?)
}

/// Scores predictions against references matched by id, in reference order.
pub fn evaluate_run(predictions: &[TextRecord], references: &[TextRecord], opts: &MetricOptions) -> Result<MetricsReport> {
    let mut by_id: HashMap<&str, &str> = HashMap::new();
    let mut offenders = Vec::new();
    for p in predictions {
        if by_id.insert(&p.id, &p.text).is_some() {
            offenders.push(format!("duplicate prediction {}", p.id));
        }
    }
    let mut seen = HashSet::new();
    let mut cands = Vec::with_capacity(references.len());
    let mut refs = Vec::with_capacity(references.len());
    let mut pred_texts = Vec::with_capacity(references.len());
    for r in references {
        if !seen.insert(r.id.as_str()) {
            offenders.push(format!("duplicate reference {}", r.id));
            continue;
        }
        match by_id.get(r.id.as_str()) {
            Some(text) => {
                cands.push(opts.tokenize(text));
                refs.push(opts.tokenize(&r.text));
                pred_texts.push(text.to_string());
            }
            None => offenders.push(format!("missing prediction {}", r.id)),
        }
    }
    for p in predictions {
        if !seen.contains(p.id.as_str()) {
            offenders.push(format!("unexpected prediction {}", p.id));
        }
    }
    if !offenders.is_empty() {
        return Err(Error::IdMismatch(offenders));
    }
    let d = |n| distinct_n_corpus(&pred_texts, n, opts);
    Ok(MetricsReport {
        bleu1: bleu_n(&cands, &refs, 1)?,
        bleu2: bleu_n(&cands, &refs, 2)?,
        rouge1_f: rouge(&cands, &refs, RougeVariant::One)?,
        rouge_l_f: rouge(&cands, &refs, RougeVariant::L)?,
        d2: d(2)?,
        d3: d(3)?,
        d4: d(4)?,
        d5: d(5)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(s: &str) -> Vec<String> {
        MetricOptions::default().tokenize(s)
    }

    #[test]
    fn bleu_hand_case() {
        let b = bleu_n(&[t("a b c")], &[t("a b d")], 1).unwrap();
        assert!((b - 66.6667).abs() < 0.01, "{b}");
    }

    #[test]
    fn rouge_l_hand_case() {
        let r = rouge(&[t("a b c d")], &[t("a c b d")], RougeVariant::L).unwrap();
        assert!((r - 75.0).abs() < 1e-9, "{r}");
    }

    #[test]
    fn distinct_hand_cases() {
        let o = MetricOptions::default();
        assert_eq!(distinct_n_corpus(&["a b a b".into()], 2, &o).unwrap(), 50.0);
        assert_eq!(distinct_n_corpus(&["a b c".into()], 1, &o).unwrap(), 100.0);
        assert!(distinct_n_corpus(&["...".into()], 1, &o).is_err());
    }

    #[test]
    fn distinct_spans_description_boundaries() {
        let o = MetricOptions::default();
        // "a b" + "a b" concatenated is [a, b, a, b]: bigrams ab, ba.
        assert_eq!(distinct_n_corpus(&["a b".into(), "a b".into()], 2, &o).unwrap(), 50.0);
    }

    #[test]
    fn char_mode_and_extra_punctuation() {
        let o = MetricOptions {
            mode: TokenMode::Char,
            extra_punctuation: "。，".into(),
        };
        assert_eq!(o.tokenize("时尚，包。"), vec!["时", "尚", "包"]);
    }

    #[test]
    fn lcs_basic() {
        assert_eq!(lcs_len(&t("a b c d"), &t("a c b d")), 3);
        assert_eq!(lcs_len(&t(""), &t("a")), 0);
    }

    #[test]
    fn id_mismatch_lists_offenders() {
        let rec = |id: &str, text: &str| TextRecord {
            id: id.into(),
            text: text.into(),
        };
        let err = evaluate_run(&[rec("a", "x"), rec("c", "y")], &[rec("a", "x"), rec("b", "y")], &MetricOptions::default())
            .unwrap_err();
        match err {
            Error::IdMismatch(v) => {
                assert!(v.iter().any(|s| s.contains('b')));
                assert!(v.iter().any(|s| s.contains('c')));
            }
            other => panic!("{other}"),
        }
    }
}
