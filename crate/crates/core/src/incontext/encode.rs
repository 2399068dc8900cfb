use std::ops::Range;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;
use crate::transformer::{Arch, VisualSlotMap};

use super::template::{InContextInstance, CLAUSE_IMAGE, CLAUSE_KEYWORDS, CLAUSE_OUTPUT};
use super::tokenizer::{TokenId, Vocabulary};
use super::{special, DEFAULT_KEYWORD_SEPARATOR};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EncodeConfig {
    pub arch: Arch,
    pub prefix_len: usize,
    pub max_seq_len: usize,
    pub keyword_sep: String,
}

impl EncodeConfig {
    pub fn new(arch: Arch, prefix_len: usize, max_seq_len: usize) -> Self {
        Self {
            arch,
            prefix_len,
            max_seq_len,
            keyword_sep: DEFAULT_KEYWORD_SEPARATOR.to_string(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ReferenceSpan {
    pub clause: Range<usize>,
    pub description: Range<usize>,
}

/// Token ranges of the template parts. Reference and query spans index the
/// source stream; `target` indexes the logit-producing stream.
#[derive(Debug, Clone, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Spans {
    pub references: Vec<ReferenceSpan>,
    pub query: Range<usize>,
    pub target: Option<Range<usize>>,
}

/// One encoded training or inference instance.
///
/// For decoder-only models the source stream is the whole causal sequence
/// (`<bos>`, references, query, target) and produces the logits. For
/// encoder-decoder models the source feeds the encoder and
/// `decoder_ids = <bos> Y` produces the logits.
#[derive(Debug, Clone, PartialEq)]
pub struct EncodedBatch {
    pub arch: Arch,
    pub source_ids: Vec<TokenId>,
    /// `true` for real tokens.
    pub source_padding: Vec<bool>,
    pub decoder_ids: Vec<TokenId>,
    /// Next-token labels, one per position of the logit stream.
    pub labels: Vec<TokenId>,
    pub loss_mask: Vec<bool>,
    pub slot_map: VisualSlotMap,
    /// Frozen-encoder global vectors, one per image occurrence in prompt
    /// order (references, then the query).
    pub image_globals: Vec<Vec<Real>>,
    pub spans: Spans,
}

impl EncodedBatch {
    /// Tokens of the stream the model continues when generating.
    pub fn generation_stream(&self) -> &[TokenId] {
        match self.arch {
            Arch::DecoderOnly => &self.source_ids,
            Arch::EncoderDecoder => &self.decoder_ids,
        }
    }

    /// Context extended by already generated tokens.
    pub fn extended(&self, generated: &[TokenId]) -> EncodedBatch {
        let mut out = self.clone();
        match self.arch {
            Arch::DecoderOnly => {
                out.source_ids.extend_from_slice(generated);
                out.source_padding.extend(std::iter::repeat_n(true, generated.len()));
            }
            Arch::EncoderDecoder => out.decoder_ids.extend_from_slice(generated),
        }
        out.labels.clear();
        out.loss_mask.clear();
        out
    }

    pub fn supervised_positions(&self) -> usize {
        self.loss_mask.iter().filter(|&&m| m).count()
    }
}

struct Builder<'a> {
    vocab: &'a Vocabulary,
    ids: Vec<TokenId>,
    slots: VisualSlotMap,
    prefix_len: usize,
}

impl Builder<'_> {
    fn text(&mut self, s: &str) -> Range<usize> {
        let start = self.ids.len();
        self.ids.extend(self.vocab.tokenize(s));
        start..self.ids.len()
    }

    fn image(&mut self) {
        let start = self.ids.len();
        self.ids.extend(std::iter::repeat_n(special::IMG, self.prefix_len));
        self.slots.occurrences.push((0..self.prefix_len).map(|i| (start + i, i)).collect());
    }

    fn clause_head(&mut self, keywords: &[String], sep: &str) {
        self.text(CLAUSE_IMAGE);
        self.image();
        self.text(CLAUSE_KEYWORDS);
        self.text(&keywords.join(sep));
        self.text(CLAUSE_OUTPUT);
    }
}

/// Encodes an instance. Each `<img>` becomes `prefix_len` slot tokens; the
/// loss mask covers the target description plus the closing `<eos>` only.
pub fn encode_instance(instance: &InContextInstance, vocab: &Vocabulary, cfg: &EncodeConfig) -> Result<EncodedBatch> {
    if cfg.prefix_len == 0 {
        return Err(Error::Config("visual prefix length must be positive".into()));
    }
    let mut b = Builder {
        vocab,
        ids: Vec::new(),
        slots: VisualSlotMap::default(),
        prefix_len: cfg.prefix_len,
    };
    if cfg.arch == Arch::DecoderOnly {
        b.ids.push(special::BOS);
    }
    let mut spans = Spans::default();
    for r in &instance.references {
        let start = b.ids.len();
        b.clause_head(&r.keywords, &cfg.keyword_sep);
        let description = b.text(&r.description);
        b.ids.push(special::NL);
        spans.references.push(ReferenceSpan {
            clause: start..b.ids.len(),
            description,
        });
    }
    let query_start = b.ids.len();
    b.clause_head(&instance.query.keywords, &cfg.keyword_sep);
    spans.query = query_start..b.ids.len();
    let context_len = b.ids.len();

    let target = instance.target.as_deref().map(|t| vocab.tokenize(t));
    let mut image_globals: Vec<Vec<Real>> = instance.references.iter().map(|r| r.image.clone()).collect();
    image_globals.push(instance.query.image.clone());

    let (source_ids, decoder_ids, labels, loss_mask) = match (cfg.arch, target) {
        (Arch::DecoderOnly, Some(y)) => {
            let mut source = b.ids;
            source.extend_from_slice(&y);
            let mut labels: Vec<TokenId> = source[1..].to_vec();
            labels.push(special::EOS);
            let mask = (0..source.len()).map(|i| i + 1 >= context_len).collect();
            spans.target = Some(context_len - 1..source.len());
            (source, Vec::new(), labels, mask)
        }
        (Arch::EncoderDecoder, Some(y)) => {
            let mut dec = vec![special::BOS];
            dec.extend_from_slice(&y);
            let mut labels = y;
            labels.push(special::EOS);
            spans.target = Some(0..dec.len());
            let mask = vec![true; dec.len()];
            (b.ids, dec, labels, mask)
        }
        (Arch::DecoderOnly, None) => (b.ids, Vec::new(), Vec::new(), Vec::new()),
        (Arch::EncoderDecoder, None) => (b.ids, vec![special::BOS], Vec::new(), Vec::new()),
    };
    for len in [source_ids.len(), decoder_ids.len()] {
        if len > cfg.max_seq_len {
            return Err(Error::Overlength {
                len,
                max: cfg.max_seq_len,
            });
        }
    }
    Ok(EncodedBatch {
        arch: cfg.arch,
        source_padding: vec![true; source_ids.len()],
        source_ids,
        decoder_ids,
        labels,
        loss_mask,
        slot_map: b.slots,
        image_globals,
        spans,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::incontext::{assemble_template, Query, Reference};

    fn instance(shots: usize) -> InContextInstance {
        let references = (0..shots)
            .map(|i| Reference {
                id: format!("r{i}"),
                keywords: vec!["retro".into(), "canvas".into()],
                description: format!("a roomy canvas tote number {i}."),
                image: vec![0.5; 4],
            })
            .collect();
        InContextInstance {
            category: "bags".into(),
            references,
            query: Query {
                id: "q".into(),
                keywords: vec!["leather".into()],
                image: vec![0.1; 4],
            },
            target: Some("a sleek leather bag.".into()),
        }
    }

    fn vocab() -> Vocabulary {
        let inst = instance(2);
        let mut texts = vec![assemble_template(&inst, ", ")];
        texts.push(inst.target.clone().unwrap());
        Vocabulary::build(texts.iter().map(String::as_str))
    }

    #[test]
    fn loss_mask_covers_target_and_eos() {
        let v = vocab();
        for arch in [Arch::DecoderOnly, Arch::EncoderDecoder] {
            let b = encode_instance(&instance(1), &v, &EncodeConfig::new(arch, 5, 256)).unwrap();
            let y_len = v.tokenize("a sleek leather bag.").len();
            assert_eq!(b.supervised_positions(), y_len + 1, "{arch}");
            assert_eq!(b.labels.len(), b.loss_mask.len());
            let masked: Vec<TokenId> = b
                .labels
                .iter()
                .zip(&b.loss_mask)
                .filter(|(_, &m)| m)
                .map(|(&l, _)| l)
                .collect();
            let mut expect = v.tokenize("a sleek leather bag.");
            expect.push(special::EOS);
            assert_eq!(masked, expect);
        }
    }

    #[test]
    fn slot_count_is_prefix_len_times_images() {
        let v = vocab();
        for shots in 0..=3 {
            let b = encode_instance(&instance(shots), &v, &EncodeConfig::new(Arch::DecoderOnly, 5, 512)).unwrap();
            assert_eq!(b.slot_map.slot_count(), 5 * (shots + 1));
            assert_eq!(b.image_globals.len(), shots + 1);
            b.slot_map.validate(5).unwrap();
        }
    }

    #[test]
    fn tokens_match_tokenized_template_with_expanded_slots() {
        let v = vocab();
        let inst = instance(2);
        let b = encode_instance(&inst, &v, &EncodeConfig::new(Arch::EncoderDecoder, 3, 512)).unwrap();
        let mut expect = Vec::new();
        for id in v.tokenize(&assemble_template(&inst, ", ")) {
            if id == special::IMG {
                expect.extend([special::IMG; 3]);
            } else {
                expect.push(id);
            }
        }
        assert_eq!(b.source_ids, expect);
    }

    #[test]
    fn reference_descriptions_carry_no_loss() {
        let v = vocab();
        let b = encode_instance(&instance(2), &v, &EncodeConfig::new(Arch::DecoderOnly, 5, 512)).unwrap();
        for r in &b.spans.references {
            assert!(r.description.clone().all(|i| !b.loss_mask[i]));
        }
    }

    #[test]
    fn overlength_reports_measured_length() {
        let v = vocab();
        let err = encode_instance(&instance(3), &v, &EncodeConfig::new(Arch::DecoderOnly, 5, 20)).unwrap_err();
        assert!(matches!(err, Error::Overlength { max: 20, .. }), "{err}");
    }
}
