use crate::autograd::{Graph, Var};
use crate::error::{Error, Result};
use crate::tensor::Real;

use super::VisualSlotMap;

/// Graph handles for one attention block's projections.
#[derive(Debug, Clone, Copy)]
pub struct AttentionVars {
    pub wq: Var,
    pub bq: Var,
    pub wk: Var,
    pub bk: Var,
    pub wv: Var,
    pub bv: Var,
    pub wo: Var,
    pub bo: Var,
}

/// Which keys a query row may attend to.
#[derive(Debug, Clone, Copy, Default)]
pub struct KeyMask<'a> {
    pub causal: bool,
    /// `true` for real tokens; `None` means no padding.
    pub padding: Option<&'a [bool]>,
}

/// Token-embedding lookup with visual prefix vectors added at slot positions.
///
/// `prefixes[o]` is an `L x d_model` tensor for image occurrence `o`.
pub fn embed_with_visual_prefix(
    g: &mut Graph,
    table: Var,
    ids: &[usize],
    slots: &VisualSlotMap,
    prefixes: &[Var],
    img_id: usize,
) -> Result<Var> {
    if prefixes.len() != slots.occurrences.len() {
        return Err(Error::Slot(format!(
            "{} image occurrences but {} visual prefixes",
            slots.occurrences.len(),
            prefixes.len()
        )));
    }
    let base = g.embedding(table, ids)?;
    if prefixes.is_empty() {
        return Ok(base);
    }
    let prefix_len = g.value(prefixes[0]).rows();
    slots.validate(prefix_len)?;
    let mut pairs = Vec::with_capacity(slots.slot_count());
    for (o, occ) in slots.occurrences.iter().enumerate() {
        if g.value(prefixes[o]).rows() != prefix_len {
            return Err(Error::Slot(format!("prefix {o} has the wrong length")));
        }
        for &(pos, i) in occ {
            match ids.get(pos) {
                Some(&id) if id == img_id => pairs.push((pos, o * prefix_len + i)),
                _ => return Err(Error::Slot(format!("position {pos} does not hold the <img> token"))),
            }
        }
    }
    let src = g.concat_rows(prefixes)?;
    g.add_rows_at(base, src, &pairs)
}

/// Multi-head attention of `queries` over `keys_values`; `mask` is row-major
/// `[queries x keys]`.
fn multi_head(
    g: &mut Graph,
    p: &AttentionVars,
    queries: Var,
    keys_values: Var,
    mask: Vec<bool>,
    n_heads: usize,
) -> Result<Var> {
    let d = g.value(queries).cols();
    let dh = d / n_heads;
    let scale = 1.0 / (dh as Real).sqrt();
    let q = g.linear(queries, p.wq, p.bq)?;
    let k = g.linear(keys_values, p.wk, p.bk)?;
    let v = g.linear(keys_values, p.wv, p.bv)?;
    let mut heads = Vec::with_capacity(n_heads);
    for h in 0..n_heads {
        let qh = g.slice_cols(q, h * dh, dh)?;
        let kh = g.slice_cols(k, h * dh, dh)?;
        let vh = g.slice_cols(v, h * dh, dh)?;
        let kt = g.transpose(kh);
        let scores = g.matmul(qh, kt)?;
        let scores = g.scale(scores, scale);
        let probs = g.softmax(scores, Some(mask.clone()))?;
        heads.push(g.matmul(probs, vh)?);
    }
    let merged = if n_heads == 1 { heads[0] } else { g.concat_cols(&heads)? };
    g.linear(merged, p.wo, p.bo)
}

/// Self-attention where keys and values run over `[prompts ; hidden]` and
/// queries over `hidden` only. Output has exactly as many rows as `hidden`.
/// Real position `t` sees every prompt, and under `causal` only real
/// positions `<= t`.
pub fn attention_with_prompts(
    g: &mut Graph,
    p: &AttentionVars,
    hidden: Var,
    prompts: Option<Var>,
    mask: KeyMask<'_>,
    n_heads: usize,
) -> Result<Var> {
    let t = g.value(hidden).rows();
    let m = prompts.map_or(0, |pv| g.value(pv).rows());
    let kv = match prompts {
        Some(pv) => g.concat_rows(&[pv, hidden])?,
        None => hidden,
    };
    let width = m + t;
    let mut allowed = vec![false; t * width];
    for i in 0..t {
        let row = &mut allowed[i * width..(i + 1) * width];
        row[..m].fill(true);
        for j in 0..t {
            let visible = !mask.causal || j <= i;
            let real = mask.padding.is_none_or(|pad| pad[j]);
            row[m + j] = visible && (real || j == i);
        }
    }
    multi_head(g, p, hidden, kv, allowed, n_heads)
}

/// Decoder-to-encoder attention.
pub(crate) fn cross_attention(
    g: &mut Graph,
    p: &AttentionVars,
    queries: Var,
    memory: Var,
    memory_padding: Option<&[bool]>,
    n_heads: usize,
) -> Result<Var> {
    let t = g.value(queries).rows();
    let s = g.value(memory).rows();
    let mut allowed = vec![true; t * s];
    if let Some(pad) = memory_padding {
        for i in 0..t {
            for j in 0..s {
                allowed[i * s + j] = pad[j];
            }
        }
    }
    multi_head(g, p, queries, memory, allowed, n_heads)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn rand_tensor(rng: &mut ChaCha8Rng, shape: &[usize]) -> Tensor {
        let n = shape.iter().product();
        Tensor::new(shape.to_vec(), (0..n).map(|_| rng.random_range(-0.5..0.5)).collect()).unwrap()
    }

    fn attn_vars(g: &mut Graph, rng: &mut ChaCha8Rng, d: usize) -> AttentionVars {
        let mut w = |g: &mut Graph, shape: &[usize]| g.param(rand_tensor(rng, shape));
        AttentionVars {
            wq: w(g, &[d, d]),
            bq: w(g, &[d]),
            wk: w(g, &[d, d]),
            bk: w(g, &[d]),
            wv: w(g, &[d, d]),
            bv: w(g, &[d]),
            wo: w(g, &[d, d]),
            bo: w(g, &[d]),
        }
    }

    fn setup(t: usize, d: usize) -> (Graph, AttentionVars, Var) {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let mut g = Graph::new();
        let p = attn_vars(&mut g, &mut rng, d);
        let h = g.param(rand_tensor(&mut rng, &[t, d]));
        (g, p, h)
    }

    /// Straightforward single-loop attention used as an independent reference.
    fn naive_attention(g: &Graph, p: &AttentionVars, h: &Tensor, prompts: &Tensor, causal: bool, heads: usize) -> Tensor {
        let d = h.cols();
        let dh = d / heads;
        let lin = |x: &Tensor, w: Var, b: Var| {
            let mut out = x.matmul(g.value(w)).unwrap();
            for r in 0..out.rows() {
                for (o, bb) in out.row_mut(r).iter_mut().zip(g.value(b).data()) {
                    *o += bb;
                }
            }
            out
        };
        let mut kv_rows: Vec<Vec<Real>> = (0..prompts.rows()).map(|r| prompts.row(r).to_vec()).collect();
        kv_rows.extend((0..h.rows()).map(|r| h.row(r).to_vec()));
        let kv = Tensor::from_rows(&kv_rows).unwrap();
        let (q, k, v) = (lin(h, p.wq, p.bq), lin(&kv, p.wk, p.bk), lin(&kv, p.wv, p.bv));
        let m = prompts.rows();
        let mut merged = Tensor::zeros(&[h.rows(), d]);
        for i in 0..h.rows() {
            for hd in 0..heads {
                let mut scores = Vec::new();
                for j in 0..kv.rows() {
                    if causal && j >= m && j - m > i {
                        continue;
                    }
                    let s: Real = (0..dh).map(|c| q.at(i, hd * dh + c) * k.at(j, hd * dh + c)).sum();
                    scores.push((j, s / (dh as Real).sqrt()));
                }
                let max = scores.iter().map(|s| s.1).fold(Real::NEG_INFINITY, Real::max);
                let z: Real = scores.iter().map(|s| (s.1 - max).exp()).sum();
                for c in 0..dh {
                    let val: Real = scores.iter().map(|&(j, s)| (s - max).exp() / z * v.at(j, hd * dh + c)).sum();
                    merged.row_mut(i)[hd * dh + c] = val;
                }
            }
        }
        lin(&merged, p.wo, p.bo)
    }

    #[test]
    fn empty_prompts_are_bitwise_standard_attention() {
        let (mut g, p, h) = setup(5, 8);
        let empty = g.constant(Tensor::zeros(&[0, 8]));
        let mask = KeyMask { causal: true, padding: None };
        let a = attention_with_prompts(&mut g, &p, h, None, mask, 2).unwrap();
        let b = attention_with_prompts(&mut g, &p, h, Some(empty), mask, 2).unwrap();
        assert_eq!(g.value(a), g.value(b));
    }

    #[test]
    fn matches_naive_reference_with_prompts() {
        let (mut g, p, h) = setup(4, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        let prompts = g.param(rand_tensor(&mut rng, &[3, 8]));
        for causal in [false, true] {
            let out = attention_with_prompts(&mut g, &p, h, Some(prompts), KeyMask { causal, padding: None }, 2).unwrap();
            let reference = naive_attention(&g, &p, g.value(h), g.value(prompts), causal, 2);
            assert_eq!(g.value(out).shape(), &[4, 8]);
            for (a, b) in g.value(out).data().iter().zip(reference.data()) {
                assert!((a - b).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn causal_outputs_ignore_later_positions() {
        let (mut g, p, h) = setup(6, 8);
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let prompts = g.param(rand_tensor(&mut rng, &[2, 8]));
        let mask = KeyMask { causal: true, padding: None };
        let base = attention_with_prompts(&mut g, &p, h, Some(prompts), mask, 2).unwrap();
        let base = g.value(base).clone();

        let mut perturbed = g.value(h).clone();
        for v in perturbed.row_mut(4) {
            *v += 1.0;
        }
        let h2 = g.param(perturbed);
        let out = attention_with_prompts(&mut g, &p, h2, Some(prompts), mask, 2).unwrap();
        let out = g.value(out);
        for s in 0..4 {
            assert_eq!(out.row(s), base.row(s), "row {s} changed");
        }
        assert_ne!(out.row(4), base.row(4));
    }

    #[test]
    fn output_length_independent_of_prompt_count() {
        for m in [0, 1, 4, 9] {
            let (mut g, p, h) = setup(3, 4);
            let prompts = g.constant(Tensor::full(&[m, 4], 0.1));
            let out = attention_with_prompts(&mut g, &p, h, Some(prompts), KeyMask::default(), 1).unwrap();
            assert_eq!(g.value(out).rows(), 3);
        }
    }

    fn slot_case() -> (Graph, Var, Vec<usize>, VisualSlotMap) {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut g = Graph::new();
        let table = g.param(rand_tensor(&mut rng, &[10, 4]));
        // <img> = 3, two occurrences of L = 2
        let ids = vec![5, 3, 3, 6, 7, 3, 3, 8];
        let slots = VisualSlotMap {
            occurrences: vec![vec![(1, 0), (2, 1)], vec![(5, 0), (6, 1)]],
        };
        (g, table, ids, slots)
    }

    #[test]
    fn prefix_injection_changes_exactly_slot_rows() {
        let (mut g, table, ids, slots) = slot_case();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let p0 = g.param(rand_tensor(&mut rng, &[2, 4]));
        let p1 = g.param(rand_tensor(&mut rng, &[2, 4]));
        let plain = g.embedding(table, &ids).unwrap();
        let out = embed_with_visual_prefix(&mut g, table, &ids, &slots, &[p0, p1], 3).unwrap();
        let changed: Vec<usize> = (0..ids.len())
            .filter(|&r| g.value(out).row(r) != g.value(plain).row(r))
            .collect();
        assert_eq!(changed, vec![1, 2, 5, 6]);
        for c in 0..4 {
            let expect = g.value(plain).at(6, c) + g.value(p1).at(1, c);
            assert_eq!(g.value(out).at(6, c), expect);
        }
    }

    #[test]
    fn zero_prefixes_and_empty_maps_are_plain_lookup() {
        let (mut g, table, ids, slots) = slot_case();
        let plain = g.embedding(table, &ids).unwrap();
        let z = g.constant(Tensor::zeros(&[2, 4]));
        let out = embed_with_visual_prefix(&mut g, table, &ids, &slots, &[z, z], 3).unwrap();
        assert_eq!(g.value(out), g.value(plain));
        let out = embed_with_visual_prefix(&mut g, table, &ids, &VisualSlotMap::default(), &[], 3).unwrap();
        assert_eq!(g.value(out), g.value(plain));
    }

    #[test]
    fn slot_errors() {
        let (mut g, table, ids, slots) = slot_case();
        let z = g.constant(Tensor::zeros(&[2, 4]));
        assert!(embed_with_visual_prefix(&mut g, table, &ids, &slots, &[z], 3).is_err());
        let bad = VisualSlotMap {
            occurrences: vec![vec![(0, 0), (1, 1)], vec![(5, 0), (6, 1)]],
        };
        let err = embed_with_visual_prefix(&mut g, table, &ids, &bad, &[z, z], 3).unwrap_err();
        assert!(err.to_string().contains("<img>"));
    }
}
