use std::collections::HashMap;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};

use super::special;

pub type TokenId = usize;

const IMG_MARKER: &str = "<img>";

/// Splits text into word pieces: whitespace separates, every ASCII
/// punctuation character stands alone, `<img>` is kept whole and a newline
/// becomes its own `"\n"` piece.
pub fn word_pieces<'a>(text: &'a str) -> Vec<&'a str> {
    let mut out = Vec::new();
    let mut start: Option<usize> = None;
    let mut iter = text.char_indices().peekable();
    while let Some((i, ch)) = iter.next() {
        let flush = |start: &mut Option<usize>, out: &mut Vec<&'a str>| {
            if let Some(s) = start.take() {
                out.push(&text[s..i]);
            }
        };
        if ch == '\n' {
            flush(&mut start, &mut out);
            out.push("\n");
        } else if ch.is_whitespace() {
            flush(&mut start, &mut out);
        } else if ch == '<' && text[i..].starts_with(IMG_MARKER) {
            flush(&mut start, &mut out);
            out.push(IMG_MARKER);
            for _ in 1..IMG_MARKER.len() {
                iter.next();
            }
        } else if ch.is_ascii_punctuation() {
            flush(&mut start, &mut out);
            out.push(&text[i..i + 1]);
        } else if start.is_none() {
            start = Some(i);
        }
    }
    if let Some(s) = start {
        out.push(&text[s..]);
    }
    out
}

fn join_pieces<'a>(pieces: impl IntoIterator<Item = &'a str>) -> String {
    let mut out = String::new();
    let mut after_newline = true;
    for p in pieces {
        if p == "\n" {
            out.push('\n');
            after_newline = true;
            continue;
        }
        if !after_newline {
            out.push(' ');
        }
        out.push_str(p);
        after_newline = false;
    }
    out
}

/// Canonical form of `text`: its word pieces joined by single spaces, with
/// newlines kept as bare line breaks.
pub fn normalize_text(text: &str) -> String {
    join_pieces(word_pieces(text))
}

/// Word-level vocabulary. Ids `0..6` are the reserved tokens.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Vocabulary {
    tokens: Vec<String>,
    index: HashMap<String, TokenId>,
}

impl Default for Vocabulary {
    fn default() -> Self {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for name in special::NAMES {
            v.push(name);
        }
        v
    }
}

impl Vocabulary {
    /// Vocabulary over the given texts, in first-appearance order.
    pub fn build<'a>(texts: impl IntoIterator<Item = &'a str>) -> Self {
        let mut v = Self::default();
        for text in texts {
            for piece in word_pieces(text) {
                if piece != "\n" && piece != IMG_MARKER {
                    v.push(piece);
                }
            }
        }
        v
    }

    fn push(&mut self, token: &str) {
        if !self.index.contains_key(token) {
            self.index.insert(token.to_string(), self.tokens.len());
            self.tokens.push(token.to_string());
        }
    }

    pub fn len(&self) -> usize {
        self.tokens.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tokens.is_empty()
    }

    pub fn id(&self, token: &str) -> TokenId {
        self.index.get(token).copied().unwrap_or(special::UNK)
    }

    pub fn token(&self, id: TokenId) -> Option<&str> {
        self.tokens.get(id).map(String::as_str)
    }

    pub fn tokenize(&self, text: &str) -> Vec<TokenId> {
        word_pieces(text)
            .into_iter()
            .map(|p| match p {
                "\n" => special::NL,
                IMG_MARKER => special::IMG,
                other => self.id(other),
            })
            .collect()
    }

    pub fn detokenize(&self, ids: &[TokenId]) -> String {
        join_pieces(ids.iter().map(|&id| match id {
            special::NL => "\n",
            _ => self.token(id).unwrap_or(special::NAMES[special::UNK]),
        }))
    }

    pub fn to_file_contents(&self) -> String {
        let mut s = self.tokens.join("\n");
        s.push('\n');
        s
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        fs::write(path, self.to_file_contents()).map_err(|e| Error::io(path, e))
    }

    pub fn parse(contents: &str) -> Result<Self> {
        let mut v = Self {
            tokens: Vec::new(),
            index: HashMap::new(),
        };
        for (line_no, line) in contents.lines().enumerate() {
            if line_no < special::NAMES.len() && line != special::NAMES[line_no] {
                return Err(Error::Config(format!(
                    "vocabulary line {} must be {}, found {line:?}",
                    line_no + 1,
                    special::NAMES[line_no]
                )));
            }
            if v.index.insert(line.to_string(), v.tokens.len()).is_some() {
                return Err(Error::Config(format!("duplicate vocabulary entry {line:?}")));
            }
            v.tokens.push(line.to_string());
        }
        if v.tokens.len() < special::NAMES.len() {
            return Err(Error::Config("vocabulary is missing reserved tokens".into()));
        }
        Ok(v)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let contents = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::parse(&contents)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn pieces_split_punctuation_and_markers() {
        assert_eq!(
            word_pieces("Image: <img> and a, b\nnext"),
            vec!["Image", ":", "<img>", "and", "a", ",", "b", "\n", "next"]
        );
    }

    #[test]
    fn round_trip_simple() {
        let v = Vocabulary::build(["a b"]);
        let ids = v.tokenize("a b");
        assert_eq!(ids, vec![v.id("a"), v.id("b")]);
        assert_eq!(v.detokenize(&ids), "a b");
    }

    #[test]
    fn img_is_reserved_and_unknown_falls_back() {
        let v = Vocabulary::build(["hello"]);
        assert_eq!(v.tokenize("<img>"), vec![special::IMG]);
        assert_eq!(v.tokenize("zebra"), vec![special::UNK]);
    }

    #[test]
    fn file_round_trip_and_validation() {
        let v = Vocabulary::build(["x y, z"]);
        let parsed = Vocabulary::parse(&v.to_file_contents()).unwrap();
        assert_eq!(parsed, v);
        assert!(Vocabulary::parse("<bos>\n<pad>\n").is_err());
    }

    proptest! {
        #[test]
        fn detokenize_inverts_tokenize(words in prop::collection::vec("[a-z]{1,6}|[,.:!]|\n", 0..30)) {
            let text = words.join(" ");
            let v = Vocabulary::build([text.as_str()]);
            prop_assert_eq!(v.detokenize(&v.tokenize(&text)), normalize_text(&text));
        }
    }
}
