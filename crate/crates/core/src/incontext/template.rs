use serde::{Deserialize, Serialize};

use crate::tensor::Real;

pub const DEFAULT_KEYWORD_SEPARATOR: &str = ", ";

/// A retrieved same-category example shown before the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Reference {
    pub id: String,
    pub keywords: Vec<String>,
    pub description: String,
    /// Global vector from the frozen image encoder.
    pub image: Vec<Real>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Query {
    pub id: String,
    pub keywords: Vec<String>,
    pub image: Vec<Real>,
}

/// References are ordered as they appear in the prompt: the most similar one
/// last, next to the query.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InContextInstance {
    pub category: String,
    pub references: Vec<Reference>,
    pub query: Query,
    /// Gold description; `None` at inference time.
    pub target: Option<String>,
}

impl InContextInstance {
    pub fn shots(&self) -> usize {
        self.references.len()
    }
}

pub(crate) const CLAUSE_IMAGE: &str = "Input Image: ";
pub(crate) const CLAUSE_KEYWORDS: &str = " and Marketing Keywords: ";
pub(crate) const CLAUSE_OUTPUT: &str = ", output description is ";

/// Renders the prompt text with one `<img>` marker per image.
pub fn assemble_template(instance: &InContextInstance, keyword_sep: &str) -> String {
    let mut out = String::new();
    for r in &instance.references {
        out.push_str(CLAUSE_IMAGE);
        out.push_str("<img>");
        out.push_str(CLAUSE_KEYWORDS);
        out.push_str(&r.keywords.join(keyword_sep));
        out.push_str(CLAUSE_OUTPUT);
        out.push_str(&r.description);
        out.push('\n');
    }
    out.push_str(CLAUSE_IMAGE);
    out.push_str("<img>");
    out.push_str(CLAUSE_KEYWORDS);
    out.push_str(&instance.query.keywords.join(keyword_sep));
    out.push_str(CLAUSE_OUTPUT);
    out
}
