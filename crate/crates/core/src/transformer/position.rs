//! Position indexing and encodings: sinusoidal, RoPE tables, ALiBi biases
//! and cyclic position indexing.

use ndarray::Array2;

use crate::Scalar;

/// Cyclic position index: `i mod period`.
pub fn cpi_map(i: usize, period: usize) -> usize {
    assert!(period >= 1, "CPI period must be >= 1");
    i % period
}

/// Position indices `0..len`, cycled through `period` when set.
pub fn positions(len: usize, period: Option<usize>) -> Vec<usize> {
    (0..len)
        .map(|i| period.map_or(i, |t| cpi_map(i, t)))
        .collect()
}

/// Classic sinusoidal table: `sin(p / 10000^(2k/d))` on even columns and
/// `cos` on odd columns.
pub fn sinusoidal<T: Scalar>(positions: &[usize], d_model: usize) -> Array2<T> {
    Array2::from_shape_fn((positions.len(), d_model), |(r, c)| {
        let k = (c / 2) as f64;
        let angle = positions[r] as f64 / 10000f64.powf(2.0 * k / d_model as f64);
        T::of(if c % 2 == 0 { angle.sin() } else { angle.cos() })
    })
}

/// Cosine and sine tables for rotary embeddings over the full `d_model`
/// width: head `h` uses the same frequencies on its own column block.
pub fn rope_tables<T: Scalar>(
    positions: &[usize],
    d_model: usize,
    head_dim: usize,
) -> (Array2<T>, Array2<T>) {
    let pairs = d_model / 2;
    let half_head = head_dim / 2;
    let angle = |r: usize, k: usize| {
        let within = (k % half_head) as f64;
        positions[r] as f64 / 10000f64.powf(2.0 * within / head_dim as f64)
    };
    let cos = Array2::from_shape_fn((positions.len(), pairs), |(r, k)| T::of(angle(r, k).cos()));
    let sin = Array2::from_shape_fn((positions.len(), pairs), |(r, k)| T::of(angle(r, k).sin()));
    (cos, sin)
}

/// Geometric ALiBi slopes `2^(-8h/H)` for `h = 1..=H`.
pub fn alibi_slopes(heads: usize) -> Vec<f64> {
    (1..=heads)
        .map(|h| 2f64.powf(-8.0 * h as f64 / heads as f64))
        .collect()
}

/// Per-head ALiBi bias `-slope_h * |p_i - p_j|`.
pub fn alibi_bias<T: Scalar>(q_pos: &[usize], k_pos: &[usize], heads: usize) -> Vec<Array2<T>> {
    alibi_slopes(heads)
        .into_iter()
        .map(|slope| {
            Array2::from_shape_fn((q_pos.len(), k_pos.len()), |(i, j)| {
                T::of(-slope * (q_pos[i] as f64 - k_pos[j] as f64).abs())
            })
        })
        .collect()
}
