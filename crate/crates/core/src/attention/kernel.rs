//! Multi-head scaled dot-product attention restricted to groups.
//!
//! Queries and keys are partitioned by two segment maps with the same group
//! count; a query attends to exactly the keys of its own group. Scores,
//! softmax and the value product are evaluated group by group, so memory is
//! proportional to the number of attended pairs rather than `Nq * Nk`.

use crate::error::{Error, Result};
use crate::numcore::{Backward, DiffTensor, Scalar, SegmentMap};

/// Enumerates attended `(query, key)` pairs in kernel order: groups
/// ascending, then queries and keys in segment visit order.
pub fn attention_pairs(queries: &SegmentMap, keys: &SegmentMap) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    for g in 0..queries.num_segments().min(keys.num_segments()) {
        for &i in queries.members(g) {
            for &j in keys.members(g) {
                out.push((i, j));
            }
        }
    }
    out
}

pub fn count_pairs(queries: &SegmentMap, keys: &SegmentMap) -> usize {
    (0..queries.num_segments().min(keys.num_segments()))
        .map(|g| queries.count(g) * keys.count(g))
        .sum()
}

/// Result of a grouped attention call.
pub struct Attended<T: Scalar> {
    pub out: DiffTensor<T>,
    /// Number of (query, key) pairs whose score was evaluated.
    pub pairs: usize,
}

struct GroupedAttention<T: Scalar> {
    q: DiffTensor<T>,
    k: DiffTensor<T>,
    v: DiffTensor<T>,
    bias: Option<DiffTensor<T>>,
    qseg: SegmentMap,
    kseg: SegmentMap,
    heads: usize,
    d: usize,
    scale: T,
    // Softmax probabilities, pair-major with `heads` entries per pair.
    probs: Vec<T>,
}

/// Attention of `q: [Nq, H*d]` against `k, v: [Nk, H*d]` within groups.
///
/// `bias`, when given, is added to the scaled scores and has shape
/// `[pairs, H]` in [`attention_pairs`] order.
pub fn grouped_attention<T: Scalar>(
    q: &DiffTensor<T>,
    k: &DiffTensor<T>,
    v: &DiffTensor<T>,
    qseg: &SegmentMap,
    kseg: &SegmentMap,
    heads: usize,
    bias: Option<&DiffTensor<T>>,
) -> Result<Attended<T>> {
    const OP: &str = "grouped_attention";
    if q.rank() != 2 || k.rank() != 2 || v.rank() != 2 {
        return Err(Error::dim(OP, "q, k and v must be matrices"));
    }
    let (nq, c) = (q.shape()[0], q.shape()[1]);
    let nk = k.shape()[0];
    if k.shape()[1] != c || v.shape() != k.shape() {
        return Err(Error::dim(
            OP,
            format!("q {:?}, k {:?}, v {:?}", q.shape(), k.shape(), v.shape()),
        ));
    }
    if heads == 0 || c % heads != 0 {
        return Err(Error::dim(OP, format!("{c} channels do not split into {heads} heads")));
    }
    if qseg.len() != nq || kseg.len() != nk || qseg.num_segments() != kseg.num_segments() {
        return Err(Error::dim(
            OP,
            format!(
                "segments cover {}/{} rows in {}/{} groups for {nq}/{nk} rows",
                qseg.len(),
                kseg.len(),
                qseg.num_segments(),
                kseg.num_segments()
            ),
        ));
    }
    let pairs = count_pairs(qseg, kseg);
    if let Some(b) = bias {
        if b.shape() != [pairs, heads] {
            return Err(Error::dim(OP, format!("bias {:?}, expected [{pairs}, {heads}]", b.shape())));
        }
    }
    let d = c / heads;
    let scale = T::one() / T::of(d as f64).sqrt();
    let mut out = vec![T::zero(); nq * c];
    let mut probs = vec![T::zero(); pairs * heads];
    {
        let (qd, kd, vd) = (q.data(), k.data(), v.data());
        let bd = bias.map(|b| b.data());
        let mut scores = Vec::new();
        let mut p0 = 0;
        for g in 0..qseg.num_segments() {
            let keys = kseg.members(g);
            let nkg = keys.len();
            for &i in qseg.members(g) {
                let qi = &qd[i * c..(i + 1) * c];
                for h in 0..heads {
                    let qh = &qi[h * d..(h + 1) * d];
                    scores.clear();
                    let mut max = T::neg_infinity();
                    for (t, &j) in keys.iter().enumerate() {
                        let kh = &kd[j * c + h * d..j * c + (h + 1) * d];
                        let mut s = T::zero();
                        for x in 0..d {
                            s = s + qh[x] * kh[x];
                        }
                        s = s * scale;
                        if let Some(b) = &bd {
                            s = s + b[(p0 + t) * heads + h];
                        }
                        max = max.max(s);
                        scores.push(s);
                    }
                    if !max.is_finite() && nkg > 0 {
                        return Err(Error::NonFinite {
                            site: "attention scores".into(),
                        });
                    }
                    let mut z = T::zero();
                    for s in scores.iter_mut() {
                        *s = (*s - max).exp();
                        z = z + *s;
                    }
                    let oh = &mut out[i * c + h * d..i * c + (h + 1) * d];
                    for (t, &j) in keys.iter().enumerate() {
                        let p = scores[t] / z;
                        probs[(p0 + t) * heads + h] = p;
                        let vh = &vd[j * c + h * d..j * c + (h + 1) * d];
                        for x in 0..d {
                            oh[x] = oh[x] + p * vh[x];
                        }
                    }
                }
                p0 += nkg;
            }
        }
    }
    let out = DiffTensor::from_op(
        vec![nq, c],
        out,
        GroupedAttention {
            q: q.clone(),
            k: k.clone(),
            v: v.clone(),
            bias: bias.cloned(),
            qseg: qseg.clone(),
            kseg: kseg.clone(),
            heads,
            d,
            scale,
            probs,
        },
    );
    Ok(Attended { out, pairs })
}

impl<T: Scalar> Backward<T> for GroupedAttention<T> {
    fn name(&self) -> &'static str {
        "grouped_attention"
    }

    fn inputs(&self) -> Vec<&DiffTensor<T>> {
        let mut v = vec![&self.q, &self.k, &self.v];
        if let Some(b) = &self.bias {
            v.push(b);
        }
        v
    }

    fn backward(&self, out: &[T], g: &[T]) {
        let (heads, d) = (self.heads, self.d);
        let c = heads * d;
        let (qd, kd, vd) = (self.q.data(), self.k.data(), self.v.data());
        let mut gq = vec![T::zero(); qd.len()];
        let mut gk = vec![T::zero(); kd.len()];
        let mut gv = vec![T::zero(); vd.len()];
        let mut gb = vec![T::zero(); self.probs.len()];
        let mut p0 = 0;
        for grp in 0..self.qseg.num_segments() {
            let keys = self.kseg.members(grp);
            for &i in self.qseg.members(grp) {
                for h in 0..heads {
                    let lo = i * c + h * d;
                    let gi = &g[lo..lo + d];
                    // sum_j p_j (g . v_j) equals g . out_i
                    let mut row = T::zero();
                    for x in 0..d {
                        row = row + gi[x] * out[lo + x];
                    }
                    for (t, &j) in keys.iter().enumerate() {
                        let p = self.probs[(p0 + t) * heads + h];
                        let jl = j * c + h * d;
                        let mut dp = T::zero();
                        for x in 0..d {
                            dp = dp + gi[x] * vd[jl + x];
                            gv[jl + x] = gv[jl + x] + p * gi[x];
                        }
                        let ds = p * (dp - row);
                        gb[(p0 + t) * heads + h] = ds;
                        let dss = ds * self.scale;
                        for x in 0..d {
                            gq[lo + x] = gq[lo + x] + dss * kd[jl + x];
                            gk[jl + x] = gk[jl + x] + dss * qd[lo + x];
                        }
                    }
                }
                p0 += keys.len();
            }
        }
        drop((qd, kd, vd));
        self.q.accumulate_grad(&gq);
        self.k.accumulate_grad(&gk);
        self.v.accumulate_grad(&gv);
        if let Some(b) = &self.bias {
            b.accumulate_grad(&gb);
        }
    }
}
