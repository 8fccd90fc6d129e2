//! Arithmetic task datasets: tokenization, sample construction and the
//! interpolation / extrapolation splits.
//!
//! Operands are zero-padded on the left to a fixed width and targets are
//! emitted lowest digit first. Numbers are arbitrary precision so that
//! extrapolation sets can reach 50 digits and beyond.

use std::collections::HashSet;
use std::fmt;
use std::io::{BufRead, Write};
use std::str::FromStr;

use num_bigint::{BigUint, RandBigInt};
use num_traits::{One, ToPrimitive, Zero};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{LabError, Result};

pub type Token = usize;

pub const PLUS: Token = 10;
pub const TIMES: Token = 11;
pub const SOS: Token = 12;
pub const EOS: Token = 13;
pub const PAD: Token = 14;
pub const VOCAB_SIZE: usize = 15;

const SYMBOLS: [char; VOCAB_SIZE] = [
    '0', '1', '2', '3', '4', '5', '6', '7', '8', '9', '+', '*', '$', '&', '@',
];

/// The fixed 15-symbol vocabulary. Digit tokens carry their own value as id.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Vocab {
    pub base: u32,
}

impl Vocab {
    pub fn new(base: u32) -> Result<Self> {
        if !(2..=10).contains(&base) {
            return Err(LabError::Config(format!("unsupported base {base}")));
        }
        Ok(Self { base })
    }

    pub fn size(&self) -> usize {
        VOCAB_SIZE
    }

    pub fn symbols(&self) -> &'static [char; VOCAB_SIZE] {
        &SYMBOLS
    }

    pub fn symbol(token: Token) -> char {
        SYMBOLS[token]
    }

    pub fn token(symbol: char) -> Option<Token> {
        SYMBOLS.iter().position(|&c| c == symbol)
    }

    pub fn render(tokens: &[Token]) -> String {
        tokens.iter().map(|&t| Self::symbol(t)).collect()
    }

    pub fn parse(text: &str) -> Result<Vec<Token>> {
        text.chars()
            .map(|c| {
                Self::token(c).ok_or_else(|| LabError::Format {
                    what: "token string",
                    detail: format!("unknown symbol {c:?}"),
                })
            })
            .collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum TaskKind {
    Successor,
    Addition,
    Parity,
    NxOne,
}

impl TaskKind {
    pub fn arity(self) -> usize {
        match self {
            TaskKind::Successor | TaskKind::Parity => 1,
            TaskKind::Addition | TaskKind::NxOne => 2,
        }
    }

    pub fn is_binary(self) -> bool {
        self.arity() == 2
    }

    /// Parity always runs in base 2; the other tasks use the configured radix.
    pub fn effective_base(self, base: u32) -> u32 {
        match self {
            TaskKind::Parity => 2,
            _ => base,
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            TaskKind::Successor => "successor",
            TaskKind::Addition => "addition",
            TaskKind::Parity => "parity",
            TaskKind::NxOne => "nx1",
        }
    }

    /// Number of output digits for operands of `width` digits.
    pub fn output_width(self, width: usize) -> usize {
        match self {
            TaskKind::Parity => width,
            _ => width + 1,
        }
    }

    /// Encoder input length for operands of `width` digits.
    pub fn input_len(self, width: usize) -> usize {
        match self {
            TaskKind::Successor | TaskKind::Parity => width,
            TaskKind::Addition => 2 * width + 1,
            TaskKind::NxOne => {
                // "a*b" naturally, "*a b a b .." aligned; both come to 2w+1
                // only in the aligned form.
                width + 2
            }
        }
    }

    pub fn aligned_input_len(self, width: usize) -> usize {
        match self {
            TaskKind::Successor | TaskKind::Parity => width,
            TaskKind::Addition | TaskKind::NxOne => 2 * width + 1,
        }
    }
}

impl fmt::Display for TaskKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for TaskKind {
    type Err = LabError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "successor" | "succ" => Ok(TaskKind::Successor),
            "addition" | "add" => Ok(TaskKind::Addition),
            "parity" => Ok(TaskKind::Parity),
            "nx1" | "nxone" | "n*1" => Ok(TaskKind::NxOne),
            other => Err(LabError::Config(format!("unknown task {other:?}"))),
        }
    }
}

/// One tokenized input/target pair.
///
/// `target_tokens` holds the result digits lowest first, without SOS/EOS
/// framing; use [`Sample::decoder_input`] and [`Sample::decoder_target`]
/// for the teacher-forced sequences.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Sample {
    pub input_tokens: Vec<Token>,
    pub target_tokens: Vec<Token>,
    pub operands: Vec<BigUint>,
    pub length_digits: usize,
}

impl Sample {
    pub fn decoder_input(&self) -> Vec<Token> {
        std::iter::once(SOS)
            .chain(self.target_tokens.iter().copied())
            .collect()
    }

    pub fn decoder_target(&self) -> Vec<Token> {
        self.target_tokens
            .iter()
            .copied()
            .chain(std::iter::once(EOS))
            .collect()
    }

    /// Number of decoder positions (SOS plus every result digit).
    pub fn decoder_len(&self) -> usize {
        self.target_tokens.len() + 1
    }

    pub fn input_string(&self) -> String {
        Vocab::render(&self.input_tokens)
    }

    pub fn target_string(&self) -> String {
        Vocab::render(&self.target_tokens)
    }
}

#[derive(Debug, Clone)]
pub struct DatasetSplit {
    pub train: Vec<Sample>,
    pub validation: Vec<Sample>,
    pub seed: u64,
    pub width: usize,
}

/// Digits of `n` in `base`, most significant first, left-padded to `width`.
pub fn encode_number(n: &BigUint, width: usize, base: u32) -> Result<Vec<Token>> {
    let mut digits = if n.is_zero() {
        Vec::new()
    } else {
        n.to_radix_be(base).into_iter().map(Token::from).collect()
    };
    if digits.len() > width {
        return Err(LabError::Overflow { width, base });
    }
    let mut out = vec![0; width - digits.len()];
    out.append(&mut digits);
    Ok(out)
}

pub fn encode_u64(n: u64, width: usize, base: u32) -> Result<Vec<Token>> {
    encode_number(&BigUint::from(n), width, base)
}

/// Inverse of [`encode_number`]; `None` if a token is not a digit of `base`.
pub fn decode_number(tokens: &[Token], base: u32) -> Option<BigUint> {
    if tokens.iter().any(|&t| t >= base as usize) {
        return None;
    }
    if tokens.is_empty() {
        return Some(BigUint::zero());
    }
    let digits: Vec<u8> = tokens.iter().map(|&t| t as u8).collect();
    BigUint::from_radix_be(&digits, base)
}

/// Number of base-`base` digits in `n` (zero counts as one digit).
pub fn digit_count(n: &BigUint, base: u32) -> usize {
    if n.is_zero() {
        1
    } else {
        n.to_radix_be(base).len()
    }
}

fn reversed(mut tokens: Vec<Token>) -> Vec<Token> {
    tokens.reverse();
    tokens
}

/// Builds the tokenized sample for `task` applied to `operands`.
///
/// With `aligned` set, binary inputs are interleaved digit by digit behind the
/// operator token (`+a_n b_n .. a_1 b_1`, `*a_n b .. a_1 b`).
pub fn make_sample(
    task: TaskKind,
    operands: &[BigUint],
    base: u32,
    width: usize,
    aligned: bool,
) -> Result<Sample> {
    if operands.len() != task.arity() {
        return Err(LabError::Arity {
            task: task.name(),
            expected: task.arity(),
            got: operands.len(),
        });
    }
    let base = task.effective_base(base);
    let out_width = task.output_width(width);
    let a = &operands[0];
    let a_digits = encode_number(a, width, base)?;

    let (input_tokens, target_tokens) = match task {
        TaskKind::Successor => {
            let result = a + BigUint::one();
            (a_digits, reversed(encode_number(&result, out_width, base)?))
        }
        TaskKind::Parity => {
            // Input x_n .. x_1; y_1 = x_1, y_i = y_{i-1} xor x_i.
            let mut acc = 0;
            let target = a_digits
                .iter()
                .rev()
                .map(|&bit| {
                    acc ^= bit;
                    acc
                })
                .collect();
            (a_digits, target)
        }
        TaskKind::Addition => {
            let b = &operands[1];
            let b_digits = encode_number(b, width, base)?;
            let result = a + b;
            let input = if aligned {
                std::iter::once(PLUS)
                    .chain(a_digits.iter().zip(&b_digits).flat_map(|(&x, &y)| [x, y]))
                    .collect()
            } else {
                a_digits
                    .iter()
                    .copied()
                    .chain(std::iter::once(PLUS))
                    .chain(b_digits.iter().copied())
                    .collect()
            };
            (input, reversed(encode_number(&result, out_width, base)?))
        }
        TaskKind::NxOne => {
            let b = &operands[1];
            if *b >= BigUint::from(base) {
                return Err(LabError::Overflow { width: 1, base });
            }
            let b_digit = b.to_usize().unwrap_or(0);
            let result = a * b;
            let input = if aligned {
                std::iter::once(TIMES)
                    .chain(a_digits.iter().flat_map(|&x| [x, b_digit]))
                    .collect()
            } else {
                a_digits
                    .iter()
                    .copied()
                    .chain([TIMES, b_digit])
                    .collect()
            };
            (input, reversed(encode_number(&result, out_width, base)?))
        }
    };

    let length_digits = operands
        .iter()
        .map(|n| digit_count(n, base))
        .max()
        .unwrap_or(1);
    Ok(Sample {
        input_tokens,
        target_tokens,
        operands: operands.to_vec(),
        length_digits,
    })
}

/// Evaluates the task on numeric operands.
pub fn task_result(task: TaskKind, operands: &[BigUint]) -> BigUint {
    match task {
        TaskKind::Successor => &operands[0] + BigUint::one(),
        TaskKind::Addition => &operands[0] + &operands[1],
        TaskKind::NxOne => &operands[0] * &operands[1],
        TaskKind::Parity => BigUint::from(operands[0].count_ones() % 2),
    }
}

/// Digits needed to write every number below `range_max`.
pub fn width_for_range(range_max: u64, base: u32) -> usize {
    digit_count(&BigUint::from(range_max.saturating_sub(1)), base)
}

/// Random permutation of `[0, range_max)` split 7:1 into train and
/// validation.
///
/// Unary tasks use the permuted numbers directly. Binary tasks pair each
/// permuted number with an independent draw (another element of the
/// permutation for Addition, a single digit for N×1); duplicate pairs are
/// dropped before splitting so the two halves never share an operand tuple.
pub fn gen_interpolation_split(
    task: TaskKind,
    seed: u64,
    range_max: u64,
    base: u32,
    aligned: bool,
) -> Result<DatasetSplit> {
    if range_max < 2 {
        return Err(LabError::Config(format!("range_max must be >= 2, got {range_max}")));
    }
    let base = task.effective_base(base);
    let width = width_for_range(range_max, base);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut perm: Vec<u64> = (0..range_max).collect();
    perm.shuffle(&mut rng);

    let tuples: Vec<Vec<u64>> = match task {
        TaskKind::Successor | TaskKind::Parity => perm.iter().map(|&n| vec![n]).collect(),
        TaskKind::Addition => {
            let mut seen = HashSet::new();
            perm.iter()
                .map(|&a| vec![a, perm[rng.gen_range(0..perm.len())]])
                .filter(|t| seen.insert(t.clone()))
                .collect()
        }
        TaskKind::NxOne => {
            let mut seen = HashSet::new();
            perm.iter()
                .map(|&a| vec![a, rng.gen_range(0..base as u64)])
                .filter(|t| seen.insert(t.clone()))
                .collect()
        }
    };

    let n_train = tuples.len() * 7 / 8;
    let build = |ts: &[Vec<u64>]| -> Result<Vec<Sample>> {
        ts.iter()
            .map(|t| {
                let ops: Vec<BigUint> = t.iter().map(|&x| BigUint::from(x)).collect();
                make_sample(task, &ops, base, width, aligned)
            })
            .collect()
    };
    Ok(DatasetSplit {
        train: build(&tuples[..n_train])?,
        validation: build(&tuples[n_train..])?,
        seed,
        width,
    })
}

/// Number of extrapolation samples at length `len`: `min(base^L - base^(L-1), cap)`.
pub fn extrapolation_count(len: usize, base: u32, cap: usize) -> usize {
    let b = BigUint::from(base);
    let total = b.pow(len as u32) - b.pow(len as u32 - 1);
    total.to_usize().map_or(cap, |t| t.min(cap))
}

fn random_exact_length(rng: &mut ChaCha8Rng, len: usize, base: u32) -> BigUint {
    let lo = BigUint::from(base).pow(len as u32 - 1);
    let hi = BigUint::from(base).pow(len as u32);
    rng.gen_biguint_range(&lo, &hi)
}

/// Distinct samples whose operands all have exactly `len` digits (the N×1
/// multiplier stays a single digit).
///
/// When the population of unary operands fits under the cap it is enumerated
/// in full.
pub fn gen_extrapolation_set(
    task: TaskKind,
    len: usize,
    base: u32,
    cap: usize,
    seed: u64,
    aligned: bool,
) -> Result<Vec<Sample>> {
    if len == 0 {
        return Err(LabError::Config("extrapolation length must be >= 1".into()));
    }
    let base = task.effective_base(base);
    let count = extrapolation_count(len, base, cap);
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ ((len as u64) << 32));
    let lo = BigUint::from(base).pow(len as u32 - 1);

    let mut tuples: Vec<Vec<BigUint>> = Vec::with_capacity(count);
    if task.arity() == 1 && BigUint::from(count) == BigUint::from(base).pow(len as u32) - &lo {
        let mut n = lo.clone();
        for _ in 0..count {
            tuples.push(vec![n.clone()]);
            n += 1u32;
        }
    } else {
        let mut seen = HashSet::with_capacity(count);
        while tuples.len() < count {
            let a = random_exact_length(&mut rng, len, base);
            let t = match task {
                TaskKind::Successor | TaskKind::Parity => vec![a],
                TaskKind::Addition => vec![a, random_exact_length(&mut rng, len, base)],
                TaskKind::NxOne => vec![a, BigUint::from(rng.gen_range(0..base))],
            };
            if seen.insert(t.clone()) {
                tuples.push(t);
            }
        }
    }

    tuples
        .iter()
        .map(|ops| make_sample(task, ops, base, len, aligned))
        .collect()
}

/// Writes `<input>\t<target>` lines.
pub fn export_samples<W: Write>(samples: &[Sample], mut out: W) -> Result<()> {
    for s in samples {
        writeln!(out, "{}\t{}", s.input_string(), s.target_string())?;
    }
    Ok(())
}

/// Token-level reader for the `<input>\t<target>` format. Operand metadata is
/// not recoverable from text alone and is left empty.
pub fn import_samples<R: BufRead>(input: R) -> Result<Vec<Sample>> {
    let mut out = Vec::new();
    for (lineno, line) in input.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let (src, tgt) = line.split_once('\t').ok_or_else(|| LabError::Format {
            what: "dataset line",
            detail: format!("line {} has no tab separator", lineno + 1),
        })?;
        let input_tokens = Vocab::parse(src)?;
        let target_tokens = Vocab::parse(tgt)?;
        let length_digits = input_tokens.iter().filter(|&&t| t < 10).count();
        out.push(Sample {
            input_tokens,
            target_tokens,
            operands: Vec::new(),
            length_digits,
        });
    }
    Ok(out)
}
