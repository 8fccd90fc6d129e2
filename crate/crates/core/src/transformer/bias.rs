use ndarray::{s, Array2};

use crate::error::{LabError, Result};
use crate::Scalar;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum AttentionSite {
    /// Decoder self-attention (queries and keys are decoder positions).
    SelfAttn,
    /// Decoder cross-attention (decoder queries, encoder keys).
    Cross,
}

impl AttentionSite {
    pub fn name(self) -> &'static str {
        match self {
            AttentionSite::SelfAttn => "self",
            AttentionSite::Cross => "cross",
        }
    }

    pub fn parse(s: &str) -> Result<Self> {
        match s {
            "self" => Ok(AttentionSite::SelfAttn),
            "cross" => Ok(AttentionSite::Cross),
            other => Err(LabError::Config(format!("unknown attention site {other:?}"))),
        }
    }
}

/// Per-head additive pre-softmax biases for the decoder attention sites,
/// plus an optional encoder self-attention bias.
///
/// Matrices may be larger than the live sequence; the forward pass uses
/// their top-left corner.
#[derive(Debug, Clone, PartialEq)]
pub struct BiasSet<T> {
    pub heads: usize,
    pub self_attn: Option<Vec<Array2<T>>>,
    pub cross: Option<Vec<Array2<T>>>,
    pub encoder: Option<Vec<Array2<T>>>,
}

impl<T: Scalar> BiasSet<T> {
    pub fn empty(heads: usize) -> Self {
        Self {
            heads,
            self_attn: None,
            cross: None,
            encoder: None,
        }
    }

    pub fn zeros(heads: usize, dec_len: usize, enc_len: usize) -> Self {
        Self {
            heads,
            self_attn: Some(vec![Array2::zeros((dec_len, dec_len)); heads]),
            cross: Some(vec![Array2::zeros((dec_len, enc_len)); heads]),
            encoder: None,
        }
    }

    pub fn site(&self, site: AttentionSite) -> Option<&[Array2<T>]> {
        match site {
            AttentionSite::SelfAttn => self.self_attn.as_deref(),
            AttentionSite::Cross => self.cross.as_deref(),
        }
    }

    pub fn set_site(&mut self, site: AttentionSite, mats: Vec<Array2<T>>) -> Result<()> {
        if mats.len() != self.heads {
            return Err(LabError::DimensionMismatch(format!(
                "{} matrices for {} heads",
                mats.len(),
                self.heads
            )));
        }
        match site {
            AttentionSite::SelfAttn => self.self_attn = Some(mats),
            AttentionSite::Cross => self.cross = Some(mats),
        }
        Ok(())
    }

    /// Checks head counts and that no live row is entirely masked.
    /// Self-attention rows are checked together with the causal mask.
    pub fn validate(&self, dec_len: usize, enc_len: usize) -> Result<()> {
        let check = |mats: &[Array2<T>], rows: usize, cols: usize, causal: bool, name: &str| {
            if mats.len() != self.heads {
                return Err(LabError::DimensionMismatch(format!(
                    "{name}: {} matrices for {} heads",
                    mats.len(),
                    self.heads
                )));
            }
            for (h, m) in mats.iter().enumerate() {
                if m.nrows() < rows || m.ncols() < cols {
                    return Err(LabError::Dimension(format!(
                        "{name} head {h}: {}x{} smaller than {rows}x{cols}",
                        m.nrows(),
                        m.ncols()
                    )));
                }
                for i in 0..rows {
                    let limit = if causal { (i + 1).min(cols) } else { cols };
                    if m.slice(s![i, ..limit]).iter().all(|v| *v == T::neg_inf()) {
                        return Err(LabError::Dimension(format!(
                            "{name} head {h}: row {i} fully masked"
                        )));
                    }
                }
            }
            Ok(())
        };
        if let Some(m) = &self.self_attn {
            check(m, dec_len, dec_len, true, "self")?;
        }
        if let Some(m) = &self.cross {
            check(m, dec_len, enc_len, false, "cross")?;
        }
        if let Some(m) = &self.encoder {
            check(m, enc_len, enc_len, false, "encoder")?;
        }
        Ok(())
    }
}

/// Something that can produce a bias set for given live dimensions.
pub trait BiasProvider<T> {
    fn bias_for(&self, heads: usize, dec_len: usize, enc_len: usize) -> Result<BiasSet<T>>;
}

impl<T: Scalar> BiasProvider<T> for BiasSet<T> {
    fn bias_for(&self, heads: usize, dec_len: usize, enc_len: usize) -> Result<BiasSet<T>> {
        if heads != self.heads {
            return Err(LabError::DimensionMismatch(format!(
                "bias has {} heads, model has {heads}",
                self.heads
            )));
        }
        self.validate(dec_len, enc_len)?;
        Ok(self.clone())
    }
}

/// Replaces any row that is fully masked within its live (and, for causal
/// sites, past) columns with zeros so softmax stays defined.
pub fn sanitize_rows<T: Scalar>(m: &mut Array2<T>, causal: bool) {
    let cols = m.ncols();
    for i in 0..m.nrows() {
        let limit = if causal { (i + 1).min(cols) } else { cols };
        let dead = m.slice(s![i, ..limit]).iter().all(|v| *v == T::neg_inf());
        if dead {
            m.row_mut(i).fill(T::zero());
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sanitize_respects_causality() {
        let ninf = f64::NEG_INFINITY;
        // Row 0 opens only a future key; under the causal mask it is dead.
        let mut m = array![[ninf, 0.0], [0.0, ninf]];
        sanitize_rows(&mut m, true);
        assert_eq!(m.row(0).to_vec(), vec![0.0, 0.0]);
        assert_eq!(m[[1, 0]], 0.0);
        assert_eq!(m[[1, 1]], ninf);
    }

    #[test]
    fn validate_flags_dead_rows() {
        let ninf = f64::NEG_INFINITY;
        let mut b = BiasSet::zeros(1, 2, 2);
        b.cross = Some(vec![array![[ninf, ninf], [0.0, 0.0]]]);
        assert!(b.validate(2, 2).is_err());
        b.cross = Some(vec![array![[ninf, 0.0], [0.0, 0.0]]]);
        b.validate(2, 2).unwrap();
        assert!(b.validate(3, 2).is_err());
    }
}
