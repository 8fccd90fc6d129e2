//! Reverse-mode automatic differentiation over 2-D arrays.
//!
//! Every op records its output value and enough cached state to run its
//! backward pass. Multi-head attention is a single fused op so that the
//! per-head softmax Jacobian never materializes as separate nodes.

use ndarray::{s, Array2, ArrayView2, Axis, Zip};

use crate::error::{LabError, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Var(usize);

enum Op<T> {
    Leaf,
    Param(usize),
    MatMul(Var, Var),
    Add(Var, Var),
    AddRow(Var, Var),
    Scale(Var, T),
    Relu(Var),
    Mask(Var, Array2<T>),
    LayerNorm {
        x: Var,
        gamma: Var,
        beta: Var,
        xhat: Array2<T>,
        inv_std: Vec<T>,
    },
    Gather {
        table: Var,
        ids: Vec<usize>,
    },
    Rotate {
        x: Var,
        cos: Array2<T>,
        sin: Array2<T>,
    },
    Attention(Box<AttnCache<T>>),
    CrossEntropy {
        logits: Var,
        targets: Vec<Option<usize>>,
        probs: Array2<T>,
        count: usize,
    },
}

struct Node<T> {
    value: Array2<T>,
    op: Op<T>,
}

struct AttnCache<T> {
    q: Var,
    k: Var,
    v: Var,
    batch: usize,
    tq: usize,
    tk: usize,
    heads: usize,
    scale: T,
    /// Softmax probabilities per (batch, head), before dropout.
    probs: Vec<Array2<T>>,
    /// Dropout keep-mask (already divided by the keep probability).
    keep: Option<Vec<Array2<T>>>,
}

/// Everything the fused attention op needs besides q, k, v.
pub struct AttnSpec<'a, T> {
    pub batch: usize,
    pub tq: usize,
    pub tk: usize,
    pub heads: usize,
    pub causal: bool,
    /// Additive per-head bias, at least `tq x tk`; sliced from the top-left.
    pub bias: Option<&'a [Array2<T>]>,
    /// Per-head additive matrices computed for exactly `tq x tk` (ALiBi).
    pub extra: Option<&'a [Array2<T>]>,
    /// `true` marks a padded key position, one entry per `batch * tk`.
    pub key_pad: Option<&'a [bool]>,
    /// Dropout masks on the attention weights, one per (batch, head).
    pub dropout: Option<Vec<Array2<T>>>,
    /// Keep the unscaled `q k^T` products per (batch, head).
    pub record_scores: bool,
}

/// Gradients for every node of a tape after [`Tape::backward`].
pub struct Grads<T> {
    grads: Vec<Option<Array2<T>>>,
}

impl<T: Scalar> Grads<T> {
    pub fn get(&self, v: Var) -> Option<&Array2<T>> {
        self.grads[v.0].as_ref()
    }

    pub fn take(&mut self, v: Var) -> Option<Array2<T>> {
        self.grads[v.0].take()
    }
}

#[derive(Default)]
pub struct Tape<T> {
    nodes: Vec<Node<T>>,
}

impl<T: Scalar> Tape<T> {
    pub fn new() -> Self {
        Self { nodes: Vec::new() }
    }

    fn push(&mut self, value: Array2<T>, op: Op<T>) -> Var {
        self.nodes.push(Node { value, op });
        Var(self.nodes.len() - 1)
    }

    pub fn value(&self, v: Var) -> &Array2<T> {
        &self.nodes[v.0].value
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    pub fn leaf(&mut self, value: Array2<T>) -> Var {
        self.push(value, Op::Leaf)
    }

    pub fn param(&mut self, index: usize, value: Array2<T>) -> Var {
        self.push(value, Op::Param(index))
    }

    /// Parameter index recorded for `v`, if it is a parameter leaf.
    pub fn param_index(&self, v: Var) -> Option<usize> {
        match self.nodes[v.0].op {
            Op::Param(i) => Some(i),
            _ => None,
        }
    }

    pub fn matmul(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a).dot(self.value(b));
        self.push(value, Op::MatMul(a, b))
    }

    pub fn add(&mut self, a: Var, b: Var) -> Var {
        let value = self.value(a) + self.value(b);
        self.push(value, Op::Add(a, b))
    }

    /// Adds a `1 x d` row to every row of `x`.
    pub fn add_row(&mut self, x: Var, row: Var) -> Var {
        let value = self.value(x) + self.value(row);
        self.push(value, Op::AddRow(x, row))
    }

    pub fn scale(&mut self, x: Var, s: T) -> Var {
        let value = self.value(x) * s;
        self.push(value, Op::Scale(x, s))
    }

    pub fn relu(&mut self, x: Var) -> Var {
        let value = self.value(x).mapv(|v| v.max(T::zero()));
        self.push(value, Op::Relu(x))
    }

    /// Elementwise product with a constant mask (inverted dropout).
    pub fn mask(&mut self, x: Var, mask: Array2<T>) -> Var {
        let value = self.value(x) * &mask;
        self.push(value, Op::Mask(x, mask))
    }

    pub fn linear(&mut self, x: Var, w: Var, b: Var) -> Var {
        let h = self.matmul(x, w);
        self.add_row(h, b)
    }

    pub fn layer_norm(&mut self, x: Var, gamma: Var, beta: Var) -> Var {
        let eps = T::of(1e-5);
        let xv = self.value(x);
        let d = T::of(xv.ncols() as f64);
        let mut xhat = xv.clone();
        let mut inv_std = Vec::with_capacity(xv.nrows());
        for mut row in xhat.rows_mut() {
            let mean = row.sum() / d;
            row.mapv_inplace(|v| v - mean);
            let var = row.iter().map(|&v| v * v).fold(T::zero(), |a, b| a + b) / d;
            let inv = T::one() / (var + eps).sqrt();
            row.mapv_inplace(|v| v * inv);
            inv_std.push(inv);
        }
        let value = &xhat * self.value(gamma) + self.value(beta);
        self.push(
            value,
            Op::LayerNorm {
                x,
                gamma,
                beta,
                xhat,
                inv_std,
            },
        )
    }

    /// Row lookup `table[ids[r]]`.
    pub fn gather(&mut self, table: Var, ids: &[usize]) -> Var {
        let t = self.value(table);
        let mut value = Array2::zeros((ids.len(), t.ncols()));
        for (r, &id) in ids.iter().enumerate() {
            value.row_mut(r).assign(&t.row(id));
        }
        self.push(
            value,
            Op::Gather {
                table,
                ids: ids.to_vec(),
            },
        )
    }

    /// Rotates consecutive column pairs `(2k, 2k+1)` of every row by the
    /// angle whose cosine/sine are stored at `[row, k]` of `cos`/`sin`.
    pub fn rotate_pairs(&mut self, x: Var, cos: Array2<T>, sin: Array2<T>) -> Var {
        let value = rotate(self.value(x), &cos, &sin, false);
        self.push(value, Op::Rotate { x, cos, sin })
    }

    /// Mean token cross-entropy over rows whose target is `Some`.
    pub fn cross_entropy(&mut self, logits: Var, targets: &[Option<usize>]) -> Var {
        let lv = self.value(logits);
        let mut probs = lv.clone();
        let mut total = 0.0;
        let mut count = 0;
        for (r, mut row) in probs.rows_mut().into_iter().enumerate() {
            softmax_in_place(&mut row.view_mut());
            if let Some(t) = targets[r] {
                total -= row[t].as_f64().max(f64::MIN_POSITIVE).ln();
                count += 1;
            }
        }
        let loss = if count == 0 { 0.0 } else { total / count as f64 };
        self.push(
            Array2::from_elem((1, 1), T::of(loss)),
            Op::CrossEntropy {
                logits,
                targets: targets.to_vec(),
                probs,
                count,
            },
        )
    }

    /// Multi-head scaled dot-product attention.
    ///
    /// `q` is `[batch*tq, d]`, `k` and `v` are `[batch*tk, d]`. Returns the
    /// attended values `[batch*tq, d]`, and the raw unscaled scores per
    /// (batch, head) when `spec.record_scores` is set.
    pub fn attention(
        &mut self,
        q: Var,
        k: Var,
        v: Var,
        spec: AttnSpec<'_, T>,
    ) -> Result<(Var, Option<Vec<Array2<T>>>)> {
        let AttnSpec {
            batch,
            tq,
            tk,
            heads,
            causal,
            bias,
            extra,
            key_pad,
            dropout,
            record_scores,
        } = spec;
        let d = self.value(q).ncols();
        if d % heads != 0 {
            return Err(LabError::Dimension(format!("d_model {d} not divisible by {heads} heads")));
        }
        if let Some(b) = bias {
            if b.len() != heads {
                return Err(LabError::Dimension(format!(
                    "bias has {} heads, attention has {heads}",
                    b.len()
                )));
            }
            if let Some(m) = b.iter().find(|m| m.nrows() < tq || m.ncols() < tk) {
                return Err(LabError::Dimension(format!(
                    "bias {}x{} smaller than live attention {tq}x{tk}",
                    m.nrows(),
                    m.ncols()
                )));
            }
        }
        let dh = d / heads;
        let scale = T::one() / T::of(dh as f64).sqrt();
        let (qv, kv, vv) = (self.value(q), self.value(k), self.value(v));
        let mut out = Array2::zeros((batch * tq, d));
        let mut probs = Vec::with_capacity(batch * heads);
        let mut scores_out = record_scores.then(|| Vec::with_capacity(batch * heads));

        for b in 0..batch {
            for h in 0..heads {
                let cols = h * dh..(h + 1) * dh;
                let qb = qv.slice(s![b * tq..(b + 1) * tq, cols.clone()]);
                let kb = kv.slice(s![b * tk..(b + 1) * tk, cols.clone()]);
                let vb = vv.slice(s![b * tk..(b + 1) * tk, cols.clone()]);
                let raw = qb.dot(&kb.t());
                let mut z = &raw * scale;
                if let Some(bm) = bias {
                    z += &bm[h].slice(s![..tq, ..tk]);
                }
                if let Some(e) = extra {
                    z += &e[h];
                }
                for i in 0..tq {
                    for j in 0..tk {
                        let padded = key_pad.is_some_and(|p| p[b * tk + j]);
                        if (causal && j > i) || padded {
                            z[[i, j]] = T::neg_inf();
                        }
                    }
                }
                for mut row in z.rows_mut() {
                    softmax_in_place(&mut row.view_mut());
                }
                let weights = match &dropout {
                    Some(masks) => &z * &masks[b * heads + h],
                    None => z.clone(),
                };
                out.slice_mut(s![b * tq..(b + 1) * tq, cols])
                    .assign(&weights.dot(&vb));
                probs.push(z);
                if let Some(so) = scores_out.as_mut() {
                    so.push(raw);
                }
            }
        }
        let node = self.push(
            out,
            Op::Attention(Box::new(AttnCache {
                q,
                k,
                v,
                batch,
                tq,
                tk,
                heads,
                scale,
                probs,
                keep: dropout,
            })),
        );
        Ok((node, scores_out))
    }

    /// Softmax probabilities of the most recent attention op on `v`
    /// (one `tq x tk` matrix per (batch, head)).
    pub fn attention_probs(&self, v: Var) -> Option<&[Array2<T>]> {
        match &self.nodes[v.0].op {
            Op::Attention(c) => Some(&c.probs),
            _ => None,
        }
    }

    /// Backpropagates from the scalar `loss` node.
    pub fn backward(&self, loss: Var) -> Grads<T> {
        let mut grads: Vec<Option<Array2<T>>> = (0..self.nodes.len()).map(|_| None).collect();
        grads[loss.0] = Some(Array2::ones(self.value(loss).raw_dim()));

        for idx in (0..=loss.0).rev() {
            let Some(g) = grads[idx].take() else { continue };
            let node = &self.nodes[idx];
            match &node.op {
                Op::Leaf | Op::Param(_) => {
                    grads[idx] = Some(g);
                    continue;
                }
                Op::MatMul(a, b) => {
                    let ga = g.dot(&self.value(*b).t());
                    let gb = self.value(*a).t().dot(&g);
                    accumulate(&mut grads, *a, ga);
                    accumulate(&mut grads, *b, gb);
                }
                Op::Add(a, b) => {
                    accumulate(&mut grads, *b, g.clone());
                    accumulate(&mut grads, *a, g);
                }
                Op::AddRow(x, row) => {
                    let gr = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    accumulate(&mut grads, *row, gr);
                    accumulate(&mut grads, *x, g);
                }
                Op::Scale(x, s) => accumulate(&mut grads, *x, g * *s),
                Op::Relu(x) => {
                    let mut gx = g;
                    Zip::from(&mut gx).and(&node.value).for_each(|gv, &y| {
                        if y <= T::zero() {
                            *gv = T::zero();
                        }
                    });
                    accumulate(&mut grads, *x, gx);
                }
                Op::Mask(x, mask) => accumulate(&mut grads, *x, g * mask),
                Op::LayerNorm {
                    x,
                    gamma,
                    beta,
                    xhat,
                    inv_std,
                } => {
                    let gb = g.sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gg = (&g * xhat).sum_axis(Axis(0)).insert_axis(Axis(0));
                    let gamma_v = self.value(*gamma);
                    let dxhat = &g * gamma_v;
                    let d = T::of(xhat.ncols() as f64);
                    let mut gx = Array2::zeros(xhat.raw_dim());
                    for r in 0..xhat.nrows() {
                        let dh = dxhat.row(r);
                        let xh = xhat.row(r);
                        let mean_d = dh.sum() / d;
                        let mean_dx = dh.dot(&xh) / d;
                        let inv = inv_std[r];
                        let mut out = gx.row_mut(r);
                        for c in 0..xhat.ncols() {
                            out[c] = inv * (dh[c] - mean_d - xh[c] * mean_dx);
                        }
                    }
                    accumulate(&mut grads, *beta, gb);
                    accumulate(&mut grads, *gamma, gg);
                    accumulate(&mut grads, *x, gx);
                }
                Op::Gather { table, ids } => {
                    let mut gt = Array2::zeros(self.value(*table).raw_dim());
                    for (r, &id) in ids.iter().enumerate() {
                        let mut dst = gt.row_mut(id);
                        dst += &g.row(r);
                    }
                    accumulate(&mut grads, *table, gt);
                }
                Op::Rotate { x, cos, sin } => {
                    accumulate(&mut grads, *x, rotate(&g, cos, sin, true));
                }
                Op::CrossEntropy {
                    logits,
                    targets,
                    probs,
                    count,
                } => {
                    let upstream = g[[0, 0]];
                    let mut gl = probs.clone();
                    let inv = if *count == 0 {
                        T::zero()
                    } else {
                        upstream / T::of(*count as f64)
                    };
                    for (r, mut row) in gl.rows_mut().into_iter().enumerate() {
                        match targets[r] {
                            Some(t) => {
                                row[t] = row[t] - T::one();
                                row.mapv_inplace(|v| v * inv);
                            }
                            None => row.fill(T::zero()),
                        }
                    }
                    accumulate(&mut grads, *logits, gl);
                }
                Op::Attention(c) => {
                    let (gq, gk, gv) = self.attention_backward(c, &g);
                    accumulate(&mut grads, c.q, gq);
                    accumulate(&mut grads, c.k, gk);
                    accumulate(&mut grads, c.v, gv);
                }
            }
        }
        Grads { grads }
    }

    fn attention_backward(
        &self,
        c: &AttnCache<T>,
        g: &Array2<T>,
    ) -> (Array2<T>, Array2<T>, Array2<T>) {
        let (qv, kv, vv) = (self.value(c.q), self.value(c.k), self.value(c.v));
        let d = qv.ncols();
        let dh = d / c.heads;
        let mut gq = Array2::zeros(qv.raw_dim());
        let mut gk = Array2::zeros(kv.raw_dim());
        let mut gv = Array2::zeros(vv.raw_dim());
        for b in 0..c.batch {
            let qr = b * c.tq..(b + 1) * c.tq;
            let kr = b * c.tk..(b + 1) * c.tk;
            for h in 0..c.heads {
                let cols = h * dh..(h + 1) * dh;
                let p = &c.probs[b * c.heads + h];
                let go = g.slice(s![qr.clone(), cols.clone()]);
                let vb = vv.slice(s![kr.clone(), cols.clone()]);
                let qb = qv.slice(s![qr.clone(), cols.clone()]);
                let kb = kv.slice(s![kr.clone(), cols.clone()]);
                let keep = c.keep.as_ref().map(|m| &m[b * c.heads + h]);

                let weights = match keep {
                    Some(m) => p * m,
                    None => p.clone(),
                };
                gv.slice_mut(s![kr.clone(), cols.clone()])
                    .assign(&weights.t().dot(&go));
                let mut dp = go.dot(&vb.t());
                if let Some(m) = keep {
                    dp *= m;
                }
                // dz = p * (dp - rowsum(dp * p))
                let mut dz = dp;
                for (mut dz_row, p_row) in dz.rows_mut().into_iter().zip(p.rows()) {
                    let dot = dz_row.dot(&p_row);
                    Zip::from(&mut dz_row)
                        .and(&p_row)
                        .for_each(|x, &pv| *x = pv * (*x - dot));
                }
                dz *= c.scale;
                gq.slice_mut(s![qr.clone(), cols.clone()]).assign(&dz.dot(&kb));
                gk.slice_mut(s![kr.clone(), cols]).assign(&dz.t().dot(&qb));
            }
        }
        (gq, gk, gv)
    }
}

fn accumulate<T: Scalar>(grads: &mut [Option<Array2<T>>], v: Var, g: Array2<T>) {
    match &mut grads[v.0] {
        Some(existing) => *existing += &g,
        slot @ None => *slot = Some(g),
    }
}

fn rotate<T: Scalar>(x: &Array2<T>, cos: &Array2<T>, sin: &Array2<T>, inverse: bool) -> Array2<T> {
    let mut out = x.clone();
    let pairs = x.ncols() / 2;
    for r in 0..x.nrows() {
        for k in 0..pairs {
            let (c, mut sn) = (cos[[r, k]], sin[[r, k]]);
            if inverse {
                sn = -sn;
            }
            let (a, b) = (x[[r, 2 * k]], x[[r, 2 * k + 1]]);
            out[[r, 2 * k]] = a * c - b * sn;
            out[[r, 2 * k + 1]] = a * sn + b * c;
        }
    }
    out
}

/// Numerically stable softmax over a row. A row with no finite entry
/// becomes all zeros.
pub fn softmax_in_place<T: Scalar>(row: &mut ndarray::ArrayViewMut1<'_, T>) {
    let max = row.iter().copied().fold(T::neg_inf(), T::max);
    if max == T::neg_inf() {
        row.fill(T::zero());
        return;
    }
    let mut sum = T::zero();
    row.mapv_inplace(|v| {
        let e = (v - max).exp();
        sum += e;
        e
    });
    row.mapv_inplace(|v| v / sum);
}

/// Row-wise softmax of a matrix, returned as a new array.
pub fn softmax_rows<T: Scalar>(m: ArrayView2<'_, T>) -> Array2<T> {
    let mut out = m.to_owned();
    for mut row in out.rows_mut() {
        softmax_in_place(&mut row.view_mut());
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn numeric_grad(f: impl Fn(&Array2<f64>) -> f64, x: &Array2<f64>) -> Array2<f64> {
        let h = 1e-6;
        let mut g = Array2::zeros(x.raw_dim());
        for idx in 0..x.len() {
            let (r, c) = (idx / x.ncols(), idx % x.ncols());
            let mut xp = x.clone();
            xp[[r, c]] += h;
            let mut xm = x.clone();
            xm[[r, c]] -= h;
            g[[r, c]] = (f(&xp) - f(&xm)) / (2.0 * h);
        }
        g
    }

    fn assert_close(a: &Array2<f64>, b: &Array2<f64>, tol: f64) {
        for (x, y) in a.iter().zip(b) {
            assert!((x - y).abs() <= tol * (1.0 + x.abs().max(y.abs())), "{x} vs {y}");
        }
    }

    #[test]
    fn softmax_masked_row_is_exact_zero() {
        let mut m = array![[0.0f64, f64::NEG_INFINITY, f64::NEG_INFINITY], [1.0, 2.0, 3.0]];
        for mut row in m.rows_mut() {
            softmax_in_place(&mut row.view_mut());
        }
        assert_eq!(m.row(0).to_vec(), vec![1.0, 0.0, 0.0]);
        assert!((m.row(1).sum() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn layer_norm_gradient() {
        let x0 = array![[0.3, -1.2, 2.0, 0.5], [1.0, 0.1, -0.4, 0.9]];
        let gamma = array![[1.1, 0.9, -0.5, 2.0]];
        let beta = array![[0.1, 0.2, 0.3, 0.4]];
        let w = array![[0.7], [-1.3], [0.2], [0.9]];
        let f = |x: &Array2<f64>| {
            let mut t = Tape::new();
            let xv = t.leaf(x.clone());
            let g = t.leaf(gamma.clone());
            let b = t.leaf(beta.clone());
            let wv = t.leaf(w.clone());
            let y = t.layer_norm(xv, g, b);
            let z = t.matmul(y, wv);
            t.value(z).iter().map(|v| v * v).sum::<f64>()
        };
        let mut t = Tape::new();
        let xv = t.leaf(x0.clone());
        let g = t.leaf(gamma.clone());
        let b = t.leaf(beta.clone());
        let wv = t.leaf(w.clone());
        let y = t.layer_norm(xv, g, b);
        let z = t.matmul(y, wv);
        // d(sum z^2)/dz = 2z, pushed through a linear readout
        let two_z = t.value(z) * 2.0;
        let ones = t.leaf(two_z.t().to_owned());
        let loss = t.matmul(ones, z);
        let grads = t.backward(loss);
        // the readout is a constant leaf, so this is d(sum z^2)/dx
        assert_close(grads.get(xv).unwrap(), &numeric_grad(f, &x0), 1e-5);
    }

    #[test]
    fn attention_and_cross_entropy_gradient() {
        let q0 = array![[0.2, -0.4, 0.1, 0.7], [0.5, 0.3, -0.2, 0.1], [0.0, 0.9, 0.4, -0.3]];
        let k0 = array![[0.6, 0.1, -0.5, 0.2], [-0.3, 0.8, 0.2, 0.4], [0.1, -0.1, 0.3, 0.6]];
        let targets = vec![Some(1), None, Some(3)];
        let bias = vec![
            array![[0.0, f64::NEG_INFINITY, -0.5], [0.1, 0.0, 0.2], [0.0, 0.0, 0.0]],
            Array2::zeros((3, 3)),
        ];
        let v0 = k0.mapv(|x| x * 1.5 - 0.2);
        let run = |q: &Array2<f64>, k: &Array2<f64>| {
            let mut t = Tape::new();
            let qv = t.leaf(q.clone());
            let kv = t.leaf(k.clone());
            let vv = t.leaf(v0.clone());
            let (o, _) = t
                .attention(
                    qv,
                    kv,
                    vv,
                    AttnSpec {
                        batch: 1,
                        tq: 3,
                        tk: 3,
                        heads: 2,
                        causal: true,
                        bias: Some(&bias),
                        extra: None,
                        key_pad: None,
                        dropout: None,
                        record_scores: false,
                    },
                )
                .unwrap();
            let loss = t.cross_entropy(o, &targets);
            (t, qv, kv, loss)
        };
        let (t, qv, kv, loss) = run(&q0, &k0);
        let grads = t.backward(loss);
        let fq = |q: &Array2<f64>| {
            let (t, _, _, l) = run(q, &k0);
            t.value(l)[[0, 0]]
        };
        let fk = |k: &Array2<f64>| {
            let (t, _, _, l) = run(&q0, k);
            t.value(l)[[0, 0]]
        };
        assert_close(grads.get(qv).unwrap(), &numeric_grad(fq, &q0), 1e-5);
        assert_close(grads.get(kv).unwrap(), &numeric_grad(fk, &k0), 1e-5);
    }

    #[test]
    fn rotation_preserves_norm_and_inverts() {
        let x = array![[1.0, 2.0, -3.0, 0.5]];
        let cos = array![[0.6, (1.2f64).cos()]];
        let sin = array![[0.8, (1.2f64).sin()]];
        let y = rotate(&x, &cos, &sin, false);
        let norm = |a: &Array2<f64>| a.iter().map(|v| v * v).sum::<f64>();
        assert!((norm(&x) - norm(&y)).abs() < 1e-12);
        let back = rotate(&y, &cos, &sin, true);
        assert_close(&back, &x, 1e-12);
    }

    #[test]
    fn undersized_bias_is_rejected() {
        let mut t: Tape<f64> = Tape::new();
        let q = t.leaf(Array2::zeros((3, 4)));
        let bias = vec![Array2::zeros((2, 3))];
        let err = t.attention(
            q,
            q,
            q,
            AttnSpec {
                batch: 1,
                tq: 3,
                tk: 3,
                heads: 1,
                causal: false,
                bias: Some(&bias),
                extra: None,
                key_pad: None,
                dropout: None,
                record_scores: false,
            },
        );
        assert!(matches!(err, Err(LabError::Dimension(_))));
    }
}
