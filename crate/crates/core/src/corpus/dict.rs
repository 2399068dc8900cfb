use std::collections::BTreeSet;
use std::fs;
use std::path::Path;

use crate::error::{Error, Result};
use crate::incontext::word_pieces;

/// Attribute dictionaries used for segmentation and keyword selection.
/// Entries may be multi-word phrases; they are stored whitespace-normalised.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttributeDictionaries {
    pub style: BTreeSet<String>,
    pub brand: BTreeSet<String>,
    pub material: BTreeSet<String>,
    pub popular_element: BTreeSet<String>,
    /// Colour, size and shape words: recoverable from the image, never keywords.
    pub image_derivable: BTreeSet<String>,
}

pub const DICTIONARY_FILES: [&str; 5] = [
    "style.txt",
    "brand.txt",
    "material.txt",
    "popular_element.txt",
    "image_derivable.txt",
];

fn canonical(phrase: &str) -> String {
    word_pieces(phrase).join(" ")
}

impl AttributeDictionaries {
    fn sets(&self) -> [&BTreeSet<String>; 5] {
        [
            &self.style,
            &self.brand,
            &self.material,
            &self.popular_element,
            &self.image_derivable,
        ]
    }

    /// Rejects image-derivable entries that also appear in a marketing set.
    pub fn validate(&self) -> Result<()> {
        for set in [&self.style, &self.brand, &self.material, &self.popular_element] {
            if let Some(x) = set.intersection(&self.image_derivable).next() {
                return Err(Error::Corpus(format!(
                    "`{x}` is both image-derivable and a marketing attribute"
                )));
            }
        }
        Ok(())
    }

    pub fn is_marketing(&self, token: &str) -> bool {
        self.style.contains(token)
            || self.brand.contains(token)
            || self.material.contains(token)
            || self.popular_element.contains(token)
    }

    pub fn is_image_derivable(&self, token: &str) -> bool {
        self.image_derivable.contains(token)
    }

    fn contains(&self, phrase: &str) -> bool {
        self.sets().iter().any(|s| s.contains(phrase))
    }

    fn longest_phrase(&self) -> usize {
        self.sets()
            .iter()
            .flat_map(|s| s.iter())
            .map(|p| p.split(' ').count())
            .max()
            .unwrap_or(1)
    }

    pub fn from_lists(
        style: &[&str],
        brand: &[&str],
        material: &[&str],
        popular_element: &[&str],
        image_derivable: &[&str],
    ) -> Result<Self> {
        let set = |xs: &[&str]| xs.iter().map(|x| canonical(x)).filter(|x| !x.is_empty()).collect();
        let d = Self {
            style: set(style),
            brand: set(brand),
            material: set(material),
            popular_element: set(popular_element),
            image_derivable: set(image_derivable),
        };
        d.validate()?;
        Ok(d)
    }

    /// Reads the five dictionary files (one entry per line) from `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self> {
        let mut sets: Vec<BTreeSet<String>> = Vec::with_capacity(5);
        for name in DICTIONARY_FILES {
            let path = dir.join(name);
            let text = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
            sets.push(text.lines().map(canonical).filter(|x| !x.is_empty()).collect());
        }
        let mut it = sets.into_iter();
        let mut next = || it.next().unwrap_or_default();
        let d = Self {
            style: next(),
            brand: next(),
            material: next(),
            popular_element: next(),
            image_derivable: next(),
        };
        d.validate()?;
        Ok(d)
    }

    pub fn save_dir(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        for (name, set) in DICTIONARY_FILES.iter().zip(self.sets()) {
            let path = dir.join(name);
            let mut text = String::new();
            for x in set {
                text.push_str(x);
                text.push('\n');
            }
            fs::write(&path, text).map_err(|e| Error::io(&path, e))?;
        }
        Ok(())
    }
}

/// Splits `text` into word pieces and merges runs that form a dictionary
/// phrase, preferring the longest phrase starting at each position.
pub fn segment_with_dictionaries(text: &str, dicts: &AttributeDictionaries) -> Vec<String> {
    let pieces = word_pieces(text);
    let max_len = dicts.longest_phrase();
    let mut out = Vec::new();
    let mut i = 0;
    while i < pieces.len() {
        let upper = max_len.min(pieces.len() - i);
        let len = (2..=upper)
            .rev()
            .find(|&n| dicts.contains(&pieces[i..i + n].join(" ")))
            .unwrap_or(1);
        out.push(pieces[i..i + len].join(" "));
        i += len;
    }
    out
}
