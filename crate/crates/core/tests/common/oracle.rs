//! Independent reference implementations used to check the library.

use modict::Real;

/// Top-`k` ids by cosine similarity, computed from scratch for every pair and
/// fully sorted (descending score, then ascending id).
pub fn brute_force_retrieve(pool: &[(String, Vec<Real>)], query: &[Real], k: usize, exclude: Option<&str>) -> Vec<String> {
    let qn = query.iter().map(|x| x * x).sum::<Real>().sqrt();
    let mut scored: Vec<(Real, &str)> = pool
        .iter()
        .filter(|(id, _)| Some(id.as_str()) != exclude)
        .map(|(id, v)| {
            let vn = v.iter().map(|x| x * x).sum::<Real>().sqrt();
            let dot: Real = v.iter().zip(query).map(|(a, b)| a * b).sum();
            (dot / (vn * qn), id.as_str())
        })
        .collect();
    scored.sort_by(|a, b| b.0.partial_cmp(&a.0).unwrap().then(a.1.cmp(b.1)));
    scored.into_iter().take(k).map(|(_, id)| id.to_string()).collect()
}

/// Splits on anything that is not alphanumeric or a non-ASCII character,
/// mirroring "strip ASCII punctuation, split on whitespace" for the texts the
/// tests generate.
pub fn plain_tokens(text: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut cur = String::new();
    for ch in text.chars() {
        if ch.is_whitespace() || ch.is_ascii_punctuation() {
            if !cur.is_empty() {
                out.push(std::mem::take(&mut cur));
            }
        } else {
            cur.push(ch);
        }
    }
    if !cur.is_empty() {
        out.push(cur);
    }
    out
}

/// Distinct n-grams of the concatenated corpus over its token count, by
/// enumerating joined n-gram strings and sorting them.
pub fn brute_force_distinct(descriptions: &[String], n: usize) -> Real {
    let tokens: Vec<String> = descriptions.iter().flat_map(|d| plain_tokens(d)).collect();
    let mut grams: Vec<String> = Vec::new();
    let mut i = 0;
    while i + n <= tokens.len() {
        grams.push(tokens[i..i + n].join("\u{1}"));
        i += 1;
    }
    grams.sort();
    grams.dedup();
    (grams.len() as f64 / tokens.len() as f64 * 100.0) as Real
}
