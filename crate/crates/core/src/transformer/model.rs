use ndarray::{s, Array2};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::bias::{AttentionSite, BiasSet};
use super::config::{BiasLayers, ModelConfig, PeKind};
use super::position;
use super::tape::{AttnSpec, Tape, Var};
use crate::error::{LabError, Result};
use crate::task_data::{Sample, Token, EOS, PAD, SOS};
use crate::Scalar;

/// Named parameter tensors in a fixed order.
#[derive(Debug, Clone, PartialEq)]
pub struct ParamStore<T> {
    pub names: Vec<String>,
    pub values: Vec<Array2<T>>,
}

impl<T: Scalar> ParamStore<T> {
    fn new() -> Self {
        Self {
            names: Vec::new(),
            values: Vec::new(),
        }
    }

    fn add(&mut self, name: String, value: Array2<T>) -> usize {
        self.names.push(name);
        self.values.push(value);
        self.values.len() - 1
    }

    pub fn index_of(&self, name: &str) -> Option<usize> {
        self.names.iter().position(|n| n == name)
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn count(&self) -> usize {
        self.values.iter().map(Array2::len).sum()
    }
}

#[derive(Debug, Clone, Copy)]
struct AttnIdx {
    wq: usize,
    bq: usize,
    wk: usize,
    bk: usize,
    wv: usize,
    bv: usize,
    wo: usize,
    bo: usize,
}

#[derive(Debug, Clone, Copy)]
struct NormIdx {
    gamma: usize,
    beta: usize,
}

#[derive(Debug, Clone, Copy)]
struct FfIdx {
    w1: usize,
    b1: usize,
    w2: usize,
    b2: usize,
}

#[derive(Debug, Clone, Copy)]
struct EncLayer {
    norm1: NormIdx,
    attn: AttnIdx,
    norm2: NormIdx,
    ff: FfIdx,
}

#[derive(Debug, Clone, Copy)]
struct DecLayer {
    norm1: NormIdx,
    self_attn: AttnIdx,
    norm2: NormIdx,
    cross: AttnIdx,
    norm3: NormIdx,
    ff: FfIdx,
}

#[derive(Debug, Clone)]
struct Layout {
    src_embed: usize,
    tgt_embed: usize,
    encoder: Vec<EncLayer>,
    enc_norm: NormIdx,
    decoder: Vec<DecLayer>,
    dec_norm: NormIdx,
    out_w: usize,
    out_b: usize,
}

/// Pre-softmax attention products for one sample, one matrix per head.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionTensor<T> {
    pub site: AttentionSite,
    pub layer: usize,
    pub heads: Vec<Array2<T>>,
}

impl<T: Scalar> AttentionTensor<T> {
    pub fn dims(&self) -> (usize, usize, usize) {
        let (m, n) = self.heads.first().map_or((0, 0), |a| a.dim());
        (self.heads.len(), m, n)
    }
}

/// A padded batch of encoder inputs and teacher-forced decoder sequences.
#[derive(Debug, Clone)]
pub struct Batch {
    pub size: usize,
    pub src_len: usize,
    pub dec_len: usize,
    pub src: Vec<Token>,
    pub dec_in: Vec<Token>,
    pub dec_out: Vec<Option<Token>>,
}

impl Batch {
    /// Teacher-forced batch: decoder input `SOS y..`, target `y.. EOS`.
    pub fn from_samples(samples: &[&Sample]) -> Self {
        let inputs: Vec<&[Token]> = samples.iter().map(|s| s.input_tokens.as_slice()).collect();
        let dec_in: Vec<Vec<Token>> = samples.iter().map(|s| s.decoder_input()).collect();
        let dec_out: Vec<Vec<Token>> = samples.iter().map(|s| s.decoder_target()).collect();
        Self::build(&inputs, &dec_in, Some(&dec_out))
    }

    /// Inference batch: decoder prefixes with no targets.
    pub fn from_prefixes(inputs: &[&[Token]], prefixes: &[Vec<Token>]) -> Self {
        Self::build(inputs, prefixes, None)
    }

    fn build(inputs: &[&[Token]], dec_in: &[Vec<Token>], dec_out: Option<&[Vec<Token>]>) -> Self {
        let size = inputs.len();
        let src_len = inputs.iter().map(|s| s.len()).max().unwrap_or(0);
        let dec_len = dec_in.iter().map(Vec::len).max().unwrap_or(0);
        let mut src = vec![PAD; size * src_len];
        let mut din = vec![PAD; size * dec_len];
        let mut dout = vec![None; size * dec_len];
        for b in 0..size {
            src[b * src_len..b * src_len + inputs[b].len()].copy_from_slice(inputs[b]);
            din[b * dec_len..b * dec_len + dec_in[b].len()].copy_from_slice(&dec_in[b]);
            if let Some(outs) = dec_out {
                for (t, &tok) in outs[b].iter().enumerate() {
                    dout[b * dec_len + t] = Some(tok);
                }
            }
        }
        Self {
            size,
            src_len,
            dec_len,
            src,
            dec_in: din,
            dec_out: dout,
        }
    }

    pub fn target_count(&self) -> usize {
        self.dec_out.iter().filter(|t| t.is_some()).count()
    }
}

/// Result of a taped forward pass.
pub struct ForwardVars<T> {
    pub logits: Var,
    /// Unscaled last-decoder-layer products per (batch, head).
    pub self_scores: Option<Vec<Array2<T>>>,
    pub cross_scores: Option<Vec<Array2<T>>>,
    /// Vars of the last decoder layer's attention ops (for probabilities).
    pub last_self: Var,
    pub last_cross: Var,
}

/// Options for one forward pass.
pub struct RunOptions<'a> {
    pub dropout_rng: Option<&'a mut ChaCha8Rng>,
    pub record_scores: bool,
}

impl RunOptions<'_> {
    pub fn eval() -> Self {
        Self {
            dropout_rng: None,
            record_scores: false,
        }
    }
}

/// Encoder-decoder transformer with pre-norm residual blocks.
#[derive(Debug, Clone)]
pub struct Transformer<T> {
    pub config: ModelConfig,
    pub params: ParamStore<T>,
    layout: Layout,
}

fn uniform<T: Scalar>(rng: &mut ChaCha8Rng, rows: usize, cols: usize, limit: f64) -> Array2<T> {
    Array2::from_shape_fn((rows, cols), |_| T::of(rng.gen_range(-limit..limit)))
}

impl<T: Scalar> Transformer<T> {
    /// Fresh model with seeded Xavier-uniform weights.
    pub fn new(config: ModelConfig) -> Result<Self> {
        config.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(config.init_seed);
        let (d, ff, v) = (config.d_model, config.d_ff, config.vocab_size);
        let mut p = ParamStore::new();

        let xavier = |rng: &mut ChaCha8Rng, i: usize, o: usize| {
            uniform::<T>(rng, i, o, (6.0 / (i + o) as f64).sqrt())
        };
        let zeros = |o: usize| Array2::<T>::zeros((1, o));
        let ones = |o: usize| Array2::<T>::ones((1, o));

        let attn = |p: &mut ParamStore<T>, rng: &mut ChaCha8Rng, pre: &str| AttnIdx {
            wq: p.add(format!("{pre}.wq"), xavier(rng, d, d)),
            bq: p.add(format!("{pre}.bq"), zeros(d)),
            wk: p.add(format!("{pre}.wk"), xavier(rng, d, d)),
            bk: p.add(format!("{pre}.bk"), zeros(d)),
            wv: p.add(format!("{pre}.wv"), xavier(rng, d, d)),
            bv: p.add(format!("{pre}.bv"), zeros(d)),
            wo: p.add(format!("{pre}.wo"), xavier(rng, d, d)),
            bo: p.add(format!("{pre}.bo"), zeros(d)),
        };
        let norm = |p: &mut ParamStore<T>, pre: &str| NormIdx {
            gamma: p.add(format!("{pre}.gamma"), ones(d)),
            beta: p.add(format!("{pre}.beta"), zeros(d)),
        };
        let feed = |p: &mut ParamStore<T>, rng: &mut ChaCha8Rng, pre: &str| FfIdx {
            w1: p.add(format!("{pre}.w1"), xavier(rng, d, ff)),
            b1: p.add(format!("{pre}.b1"), zeros(ff)),
            w2: p.add(format!("{pre}.w2"), xavier(rng, ff, d)),
            b2: p.add(format!("{pre}.b2"), zeros(d)),
        };

        let emb_limit = (3.0 / d as f64).sqrt();
        let src_embed = p.add("src_embed".into(), uniform(&mut rng, v, d, emb_limit));
        let tgt_embed = p.add("tgt_embed".into(), uniform(&mut rng, v, d, emb_limit));
        let encoder = (0..config.encoder_layers)
            .map(|l| EncLayer {
                norm1: norm(&mut p, &format!("enc.{l}.norm1")),
                attn: attn(&mut p, &mut rng, &format!("enc.{l}.attn")),
                norm2: norm(&mut p, &format!("enc.{l}.norm2")),
                ff: feed(&mut p, &mut rng, &format!("enc.{l}.ff")),
            })
            .collect();
        let enc_norm = norm(&mut p, "enc.norm");
        let decoder = (0..config.decoder_layers)
            .map(|l| DecLayer {
                norm1: norm(&mut p, &format!("dec.{l}.norm1")),
                self_attn: attn(&mut p, &mut rng, &format!("dec.{l}.self")),
                norm2: norm(&mut p, &format!("dec.{l}.norm2")),
                cross: attn(&mut p, &mut rng, &format!("dec.{l}.cross")),
                norm3: norm(&mut p, &format!("dec.{l}.norm3")),
                ff: feed(&mut p, &mut rng, &format!("dec.{l}.ff")),
            })
            .collect();
        let dec_norm = norm(&mut p, "dec.norm");
        let out_w = p.add("out.w".into(), xavier(&mut rng, d, v));
        let out_b = p.add("out.b".into(), zeros(v));

        Ok(Self {
            config,
            params: p,
            layout: Layout {
                src_embed,
                tgt_embed,
                encoder,
                enc_norm,
                decoder,
                dec_norm,
                out_w,
                out_b,
            },
        })
    }

    /// Rebuilds a model from named tensors (e.g. a checkpoint).
    pub fn from_named(config: ModelConfig, named: Vec<(String, Array2<T>)>) -> Result<Self> {
        let mut model = Self::new(config)?;
        for (name, value) in named {
            let Some(i) = model.params.index_of(&name) else {
                continue;
            };
            if model.params.values[i].dim() != value.dim() {
                return Err(LabError::DimensionMismatch(format!(
                    "tensor {name}: expected {:?}, found {:?}",
                    model.params.values[i].dim(),
                    value.dim()
                )));
            }
            model.params.values[i] = value;
        }
        Ok(model)
    }

    pub fn load_params(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.params
            .values
            .iter()
            .enumerate()
            .map(|(i, v)| tape.param(i, v.clone()))
            .collect()
    }

    fn dropout_mask(&self, rng: &mut ChaCha8Rng, rows: usize, cols: usize) -> Array2<T> {
        let p = self.config.dropout;
        let keep = T::of(1.0 / (1.0 - p));
        Array2::from_shape_fn((rows, cols), |_| {
            if rng.gen::<f64>() < p {
                T::zero()
            } else {
                keep
            }
        })
    }

    fn maybe_dropout(&self, tape: &mut Tape<T>, x: Var, rng: &mut Option<&mut ChaCha8Rng>) -> Var {
        match rng {
            Some(r) if self.config.dropout > 0.0 => {
                let (rows, cols) = tape.value(x).dim();
                let mask = self.dropout_mask(r, rows, cols);
                tape.mask(x, mask)
            }
            _ => x,
        }
    }

    fn embed(&self, tape: &mut Tape<T>, table: Var, ids: &[Token], pos: &[usize], batch: usize) -> Var {
        let d = self.config.d_model;
        let e = tape.gather(table, ids);
        let e = tape.scale(e, T::of((d as f64).sqrt()));
        if self.config.pe != PeKind::Sinusoidal {
            return e;
        }
        let table = position::sinusoidal::<T>(pos, d);
        let mut full = Array2::zeros((batch * pos.len(), d));
        for b in 0..batch {
            full.slice_mut(s![b * pos.len()..(b + 1) * pos.len(), ..]).assign(&table);
        }
        let pe = tape.leaf(full);
        tape.add(e, pe)
    }

    fn rope(&self, tape: &mut Tape<T>, x: Var, pos: &[usize], batch: usize) -> Var {
        let (cos, sin) = position::rope_tables::<T>(pos, self.config.d_model, self.config.head_dim());
        let tile = |m: &Array2<T>| {
            let mut full = Array2::zeros((batch * m.nrows(), m.ncols()));
            for b in 0..batch {
                full.slice_mut(s![b * m.nrows()..(b + 1) * m.nrows(), ..]).assign(m);
            }
            full
        };
        tape.rotate_pairs(x, tile(&cos), tile(&sin))
    }

    #[allow(clippy::too_many_arguments)]
    fn mha(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        idx: AttnIdx,
        q_in: Var,
        kv_in: Var,
        geometry: (usize, usize, usize),
        positions: (&[usize], &[usize]),
        causal: bool,
        bias: Option<&[Array2<T>]>,
        key_pad: &[bool],
        rng: &mut Option<&mut ChaCha8Rng>,
        record: bool,
    ) -> Result<(Var, Var, Option<Vec<Array2<T>>>)> {
        let (batch, tq, tk) = geometry;
        let heads = self.config.heads;
        let mut q = tape.linear(q_in, vars[idx.wq], vars[idx.bq]);
        let mut k = tape.linear(kv_in, vars[idx.wk], vars[idx.bk]);
        let v = tape.linear(kv_in, vars[idx.wv], vars[idx.bv]);
        if self.config.pe == PeKind::Rope {
            q = self.rope(tape, q, positions.0, batch);
            k = self.rope(tape, k, positions.1, batch);
        }
        let alibi = (self.config.pe == PeKind::Alibi)
            .then(|| position::alibi_bias::<T>(positions.0, positions.1, heads));
        let dropout = match rng {
            Some(r) if self.config.dropout > 0.0 => Some(
                (0..batch * heads)
                    .map(|_| self.dropout_mask(r, tq, tk))
                    .collect(),
            ),
            _ => None,
        };
        let (attn, scores) = tape.attention(
            q,
            k,
            v,
            AttnSpec {
                batch,
                tq,
                tk,
                heads,
                causal,
                bias,
                extra: alibi.as_deref(),
                key_pad: Some(key_pad),
                dropout,
                record_scores: record,
            },
        )?;
        let out = tape.linear(attn, vars[idx.wo], vars[idx.bo]);
        Ok((out, attn, scores))
    }

    fn feed_forward(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        idx: FfIdx,
        x: Var,
        rng: &mut Option<&mut ChaCha8Rng>,
    ) -> Var {
        let h = tape.linear(x, vars[idx.w1], vars[idx.b1]);
        let h = tape.relu(h);
        let h = self.maybe_dropout(tape, h, rng);
        tape.linear(h, vars[idx.w2], vars[idx.b2])
    }

    fn norm(&self, tape: &mut Tape<T>, vars: &[Var], idx: NormIdx, x: Var) -> Var {
        tape.layer_norm(x, vars[idx.gamma], vars[idx.beta])
    }

    /// Taped forward pass over a padded batch.
    pub fn forward_tape(
        &self,
        tape: &mut Tape<T>,
        vars: &[Var],
        batch: &Batch,
        bias: Option<&BiasSet<T>>,
        opts: RunOptions<'_>,
    ) -> Result<ForwardVars<T>> {
        let RunOptions {
            dropout_rng: mut rng,
            record_scores,
        } = opts;
        let l = &self.layout;
        let (bsz, s_len, t_len) = (batch.size, batch.src_len, batch.dec_len);
        if let Some(bad) = batch
            .src
            .iter()
            .chain(&batch.dec_in)
            .find(|&&t| t >= self.config.vocab_size)
        {
            return Err(LabError::Dimension(format!("token id {bad} outside vocabulary")));
        }
        if let Some(b) = bias {
            if b.heads != self.config.heads {
                return Err(LabError::DimensionMismatch(format!(
                    "bias for {} heads, model has {}",
                    b.heads, self.config.heads
                )));
            }
        }
        let src_pos = position::positions(s_len, self.config.cpi_period);
        let dec_pos = position::positions(t_len, self.config.cpi_period);
        let src_pad: Vec<bool> = batch.src.iter().map(|&t| t == PAD).collect();
        let dec_pad: Vec<bool> = batch.dec_in.iter().map(|&t| t == PAD).collect();

        let mut x = self.embed(tape, vars[l.src_embed], &batch.src, &src_pos, bsz);
        x = self.maybe_dropout(tape, x, &mut rng);
        let enc_bias = bias.and_then(|b| b.encoder.as_deref());
        for layer in &l.encoder {
            let h = self.norm(tape, vars, layer.norm1, x);
            let (a, _, _) = self.mha(
                tape,
                vars,
                layer.attn,
                h,
                h,
                (bsz, s_len, s_len),
                (&src_pos, &src_pos),
                false,
                enc_bias,
                &src_pad,
                &mut rng,
                false,
            )?;
            let a = self.maybe_dropout(tape, a, &mut rng);
            x = tape.add(x, a);
            let h = self.norm(tape, vars, layer.norm2, x);
            let f = self.feed_forward(tape, vars, layer.ff, h, &mut rng);
            let f = self.maybe_dropout(tape, f, &mut rng);
            x = tape.add(x, f);
        }
        let memory = self.norm(tape, vars, l.enc_norm, x);

        let mut y = self.embed(tape, vars[l.tgt_embed], &batch.dec_in, &dec_pos, bsz);
        y = self.maybe_dropout(tape, y, &mut rng);
        let n_dec = l.decoder.len();
        let mut self_scores = None;
        let mut cross_scores = None;
        let mut last_self = y;
        let mut last_cross = y;
        for (li, layer) in l.decoder.iter().enumerate() {
            let is_last = li + 1 == n_dec;
            let biased = self.config.bias_layers == BiasLayers::All || is_last;
            let record = record_scores && is_last;
            let h = self.norm(tape, vars, layer.norm1, y);
            let (a, a_var, scores) = self.mha(
                tape,
                vars,
                layer.self_attn,
                h,
                h,
                (bsz, t_len, t_len),
                (&dec_pos, &dec_pos),
                true,
                bias.filter(|_| biased).and_then(|b| b.self_attn.as_deref()),
                &dec_pad,
                &mut rng,
                record,
            )?;
            if is_last {
                self_scores = scores;
                last_self = a_var;
            }
            let a = self.maybe_dropout(tape, a, &mut rng);
            y = tape.add(y, a);
            let h = self.norm(tape, vars, layer.norm2, y);
            let (c, c_var, scores) = self.mha(
                tape,
                vars,
                layer.cross,
                h,
                memory,
                (bsz, t_len, s_len),
                (&dec_pos, &src_pos),
                false,
                bias.filter(|_| biased).and_then(|b| b.cross.as_deref()),
                &src_pad,
                &mut rng,
                record,
            )?;
            if is_last {
                cross_scores = scores;
                last_cross = c_var;
            }
            let c = self.maybe_dropout(tape, c, &mut rng);
            y = tape.add(y, c);
            let h = self.norm(tape, vars, layer.norm3, y);
            let f = self.feed_forward(tape, vars, layer.ff, h, &mut rng);
            let f = self.maybe_dropout(tape, f, &mut rng);
            y = tape.add(y, f);
        }
        let y = self.norm(tape, vars, l.dec_norm, y);
        let logits = tape.linear(y, vars[l.out_w], vars[l.out_b]);
        Ok(ForwardVars {
            logits,
            self_scores,
            cross_scores,
            last_self,
            last_cross,
        })
    }

    /// Inference forward pass for one sample: logits per decoder position and
    /// the last decoder layer's unscaled attention products at both sites.
    pub fn forward(
        &self,
        input: &[Token],
        decoder_tokens: &[Token],
        bias: Option<&BiasSet<T>>,
    ) -> Result<(Array2<T>, AttentionTensor<T>, AttentionTensor<T>)> {
        let batch = Batch::from_prefixes(&[input], &[decoder_tokens.to_vec()]);
        let mut tape = Tape::new();
        let vars = self.load_params(&mut tape);
        let out = self.forward_tape(
            &mut tape,
            &vars,
            &batch,
            bias,
            RunOptions {
                dropout_rng: None,
                record_scores: true,
            },
        )?;
        let last = self.config.decoder_layers - 1;
        Ok((
            tape.value(out.logits).clone(),
            AttentionTensor {
                site: AttentionSite::SelfAttn,
                layer: last,
                heads: out.self_scores.unwrap_or_default(),
            },
            AttentionTensor {
                site: AttentionSite::Cross,
                layer: last,
                heads: out.cross_scores.unwrap_or_default(),
            },
        ))
    }

    /// Greedy autoregressive decoding of a batch. Each output excludes SOS and
    /// stops before EOS or after `max_len` tokens.
    pub fn greedy_decode_batch(
        &self,
        inputs: &[&[Token]],
        max_len: usize,
        bias: Option<&BiasSet<T>>,
    ) -> Result<Vec<Vec<Token>>> {
        let n = inputs.len();
        let mut prefixes: Vec<Vec<Token>> = vec![vec![SOS]; n];
        let mut done = vec![false; n];
        for _ in 0..max_len {
            if done.iter().all(|&d| d) {
                break;
            }
            let batch = Batch::from_prefixes(inputs, &prefixes);
            let mut tape = Tape::new();
            let vars = self.load_params(&mut tape);
            let out = self.forward_tape(&mut tape, &vars, &batch, bias, RunOptions::eval())?;
            let logits = tape.value(out.logits);
            for b in 0..n {
                if done[b] {
                    continue;
                }
                let row = logits.row(b * batch.dec_len + prefixes[b].len() - 1);
                let next = argmax(row.iter().copied());
                prefixes[b].push(next);
                if next == EOS {
                    done[b] = true;
                }
            }
        }
        Ok(prefixes
            .into_iter()
            .map(|p| p.into_iter().skip(1).take_while(|&t| t != EOS).collect())
            .collect())
    }

    pub fn greedy_decode(
        &self,
        input: &[Token],
        max_len: usize,
        bias: Option<&BiasSet<T>>,
    ) -> Result<Vec<Token>> {
        Ok(self.greedy_decode_batch(&[input], max_len, bias)?.remove(0))
    }

    /// Exact-match correctness by teacher forcing: a sample is correct iff the
    /// argmax at every decoder position equals the target (digits then EOS).
    /// This is the same predicate as greedy decoding with `max_len` at least
    /// the target length plus one, computed in a single pass.
    pub fn exact_match_batch(&self, samples: &[&Sample], bias: Option<&BiasSet<T>>) -> Result<Vec<bool>> {
        Ok(self.teacher_forced(samples, bias, false)?.0)
    }

    /// Like [`Self::exact_match_batch`] but ignores the EOS position, i.e.
    /// greedy decoding of exactly the target's number of digits.
    pub fn digit_match_batch(&self, samples: &[&Sample], bias: Option<&BiasSet<T>>) -> Result<Vec<bool>> {
        let batch = Batch::from_samples(samples);
        let mut tape = Tape::new();
        let vars = self.load_params(&mut tape);
        let out = self.forward_tape(&mut tape, &vars, &batch, bias, RunOptions::eval())?;
        let logits = tape.value(out.logits);
        Ok((0..batch.size)
            .map(|b| {
                (0..batch.dec_len).all(|t| {
                    let i = b * batch.dec_len + t;
                    match batch.dec_out[i] {
                        Some(target) if target != EOS => argmax(logits.row(i).iter().copied()) == target,
                        _ => true,
                    }
                })
            })
            .collect())
    }

    /// Teacher-forced pass returning per-sample correctness and, when
    /// requested, last-layer attention tensors per sample.
    #[allow(clippy::type_complexity)]
    pub fn teacher_forced(
        &self,
        samples: &[&Sample],
        bias: Option<&BiasSet<T>>,
        record: bool,
    ) -> Result<(Vec<bool>, Vec<(AttentionTensor<T>, AttentionTensor<T>)>)> {
        let batch = Batch::from_samples(samples);
        let mut tape = Tape::new();
        let vars = self.load_params(&mut tape);
        let out = self.forward_tape(
            &mut tape,
            &vars,
            &batch,
            bias,
            RunOptions {
                dropout_rng: None,
                record_scores: record,
            },
        )?;
        let logits = tape.value(out.logits);
        let correct = (0..batch.size)
            .map(|b| {
                (0..batch.dec_len).all(|t| {
                    let i = b * batch.dec_len + t;
                    match batch.dec_out[i] {
                        Some(target) => argmax(logits.row(i).iter().copied()) == target,
                        None => true,
                    }
                })
            })
            .collect();
        let mut tensors = Vec::new();
        if record {
            let heads = self.config.heads;
            let last = self.config.decoder_layers - 1;
            let (ss, cs) = (out.self_scores.unwrap_or_default(), out.cross_scores.unwrap_or_default());
            for (b, s) in samples.iter().enumerate() {
                let (m, n) = (s.decoder_len(), s.input_tokens.len());
                let take = |src: &[Array2<T>], site, cols| AttentionTensor {
                    site,
                    layer: last,
                    heads: (0..heads)
                        .map(|h| src[b * heads + h].slice(s![..m, ..cols]).to_owned())
                        .collect(),
                };
                tensors.push((
                    take(&ss, AttentionSite::SelfAttn, m),
                    take(&cs, AttentionSite::Cross, n),
                ));
            }
        }
        Ok((correct, tensors))
    }

    /// Greedy-decodes `sample` and returns the last decoder layer's attention
    /// products over the decoded sequence plus exact-match correctness.
    pub fn extract_last_layer_attention(
        &self,
        sample: &Sample,
        bias: Option<&BiasSet<T>>,
    ) -> Result<(AttentionTensor<T>, AttentionTensor<T>, bool)> {
        let max_len = sample.target_tokens.len() + 1;
        let decoded = self.greedy_decode(&sample.input_tokens, max_len, bias)?;
        let correct = decoded == sample.target_tokens;
        let dec_in: Vec<Token> = std::iter::once(SOS).chain(decoded).collect();
        let (_, self_t, cross_t) = self.forward(&sample.input_tokens, &dec_in, bias)?;
        Ok((self_t, cross_t, correct))
    }
}

/// Index of the largest value; ties go to the lowest index.
pub fn argmax<T: PartialOrd>(values: impl Iterator<Item = T>) -> usize {
    let mut best: Option<(usize, T)> = None;
    for (i, v) in values.enumerate() {
        match &best {
            Some((_, b)) if !(v > *b) => {}
            _ => best = Some((i, v)),
        }
    }
    best.map_or(0, |(i, _)| i)
}
