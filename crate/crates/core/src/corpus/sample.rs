use std::fs;
use std::io::Write;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::tensor::Real;

/// One catalog product: image, marketing keywords and target description.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Sample {
    pub id: String,
    pub category: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_ref: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub image_feature: Option<Vec<Real>>,
    pub keywords: Vec<String>,
    pub description: String,
}

impl Sample {
    pub fn validate(&self) -> Result<()> {
        if self.id.is_empty() {
            return Err(Error::Corpus("sample with empty id".into()));
        }
        if self.image_ref.is_none() && self.image_feature.is_none() {
            return Err(Error::Corpus(format!("sample {} has neither image_ref nor image_feature", self.id)));
        }
        Ok(())
    }
}

/// Serialises samples as one JSON object per line.
pub fn corpus_to_string(samples: &[Sample]) -> Result<String> {
    let mut out = String::new();
    for s in samples {
        out.push_str(&serde_json::to_string(s).map_err(|e| Error::json(format!("sample {}", s.id), e))?);
        out.push('\n');
    }
    Ok(out)
}

pub fn parse_corpus(contents: &str) -> Result<Vec<Sample>> {
    contents
        .lines()
        .enumerate()
        .filter(|(_, l)| !l.trim().is_empty())
        .map(|(i, l)| {
            let s: Sample = serde_json::from_str(l).map_err(|e| Error::json(format!("corpus line {}", i + 1), e))?;
            s.validate()?;
            Ok(s)
        })
        .collect()
}

pub fn write_corpus(path: &Path, samples: &[Sample]) -> Result<()> {
    let text = corpus_to_string(samples)?;
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(text.as_bytes()).map_err(|e| Error::io(path, e))
}

pub fn read_corpus(path: &Path) -> Result<Vec<Sample>> {
    let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_corpus(&text)
}
