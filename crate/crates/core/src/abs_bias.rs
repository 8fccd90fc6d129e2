//! Hand-designed attention scaffolding: windowed decoder self/cross masks
//! and cyclic position indexing.
//!
//! Open entries are `0`, closed entries `-inf`. Decoder row `i` (1-based)
//! is the query that predicts output digit `i`; outputs are emitted lowest
//! digit first, so the open cross-attention windows run along the
//! anti-diagonal of the input.

use ndarray::Array2;

use crate::error::{LabError, Result};
use crate::transformer::{BiasProvider, BiasSet};
use crate::Scalar;

pub use crate::transformer::position::cpi_map;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Arity {
    Unary,
    Binary,
}

/// Window geometry for one (output length, input length) pair.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct WindowSpec {
    pub w: usize,
    pub arity: Arity,
    pub out_len: usize,
    pub in_len: usize,
}

/// Causal window: row `i` opens columns `i-w ..= i`.
pub fn self_window_bias<T: Scalar>(len: usize, w: usize) -> Array2<T> {
    Array2::from_shape_fn((len, len), |(i, j)| {
        if j <= i && i - j <= w {
            T::zero()
        } else {
            T::neg_inf()
        }
    })
}

/// Cross-attention window for reversed outputs over an (aligned) input.
///
/// Unary: row `i` is centred on input column `S - i + 1` and opens `w`
/// columns either side. Binary: the input is an operator token followed by
/// `K` interleaved digit pairs; row `i` is centred on pair `K - i + 1` and
/// opens `w` whole pairs either side, plus the operator column when
/// `open_operator` is set and `w >= 1`. Rows past the most significant
/// digit (carry, EOS) stay on the leftmost digit/pair. Windows are clamped
/// at the borders.
pub fn cross_window_bias<T: Scalar>(
    out_len: usize,
    in_len: usize,
    w: usize,
    arity: Arity,
    open_operator: bool,
) -> Result<Array2<T>> {
    let mut m = Array2::from_elem((out_len, in_len), T::neg_inf());
    match arity {
        Arity::Unary => {
            if in_len == 0 {
                return Err(LabError::Dimension("unary cross bias needs S >= 1".into()));
            }
            for i in 1..=out_len {
                let centre = (in_len as isize - i as isize + 1).max(1);
                let lo = (centre - w as isize).max(1) as usize;
                let hi = ((centre + w as isize) as usize).min(in_len);
                for j in lo..=hi {
                    m[[i - 1, j - 1]] = T::zero();
                }
            }
        }
        Arity::Binary => {
            if in_len < 3 || in_len % 2 == 0 {
                return Err(LabError::Dimension(format!(
                    "binary cross bias needs S = 2K+1 with K >= 1, got S = {in_len}"
                )));
            }
            let pairs = (in_len - 1) / 2;
            for i in 1..=out_len {
                let centre = (pairs as isize - i as isize + 1).max(1);
                let lo = (centre - w as isize).max(1) as usize;
                let hi = ((centre + w as isize) as usize).min(pairs);
                for p in lo..=hi {
                    // pair p sits at 1-based columns 2p and 2p+1
                    m[[i - 1, 2 * p - 1]] = T::zero();
                    m[[i - 1, 2 * p]] = T::zero();
                }
                if open_operator && w >= 1 {
                    m[[i - 1, 0]] = T::zero();
                }
            }
        }
    }
    Ok(m)
}

/// Symmetric encoder window: token `i` sees tokens within `w` of it.
/// Binary inputs count in digit pairs, with the operator as pair 0.
pub fn encoder_window_bias<T: Scalar>(in_len: usize, w: usize, arity: Arity) -> Array2<T> {
    let unit = |j: usize| match arity {
        Arity::Unary => j,
        Arity::Binary => (j + 1) / 2,
    };
    Array2::from_shape_fn((in_len, in_len), |(i, j)| {
        if unit(i).abs_diff(unit(j)) <= w {
            T::zero()
        } else {
            T::neg_inf()
        }
    })
}

pub fn window_bias<T: Scalar>(spec: WindowSpec, open_operator: bool) -> Result<(Array2<T>, Array2<T>)> {
    Ok((
        self_window_bias(spec.out_len, spec.w),
        cross_window_bias(spec.out_len, spec.in_len, spec.w, spec.arity, open_operator)?,
    ))
}

/// Scaffolding shared by every head.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Scaffold {
    pub w: usize,
    pub arity: Arity,
    pub open_operator: bool,
    /// Also window the encoder self-attention.
    pub encoder_window: bool,
}

impl Scaffold {
    pub fn new(w: usize, arity: Arity) -> Self {
        Self {
            w,
            arity,
            open_operator: true,
            encoder_window: true,
        }
    }
}

impl<T: Scalar> BiasProvider<T> for Scaffold {
    /// One copy of the scaffold per head.
    fn bias_for(&self, heads: usize, dec_len: usize, enc_len: usize) -> Result<BiasSet<T>> {
        let spec = WindowSpec {
            w: self.w,
            arity: self.arity,
            out_len: dec_len,
            in_len: enc_len,
        };
        let (sb, cb) = window_bias::<T>(spec, self.open_operator)?;
        let mut set = BiasSet::empty(heads);
        set.self_attn = Some(vec![sb; heads]);
        set.cross = Some(vec![cb; heads]);
        if self.encoder_window {
            set.encoder = Some(vec![encoder_window_bias(enc_len, self.w, self.arity); heads]);
        }
        Ok(set)
    }
}
