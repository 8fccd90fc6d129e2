//! Acceptance checks, one PASS/FAIL line per criterion.
//!
//! Criteria 8-11 train smoke-scale models; artifacts are cached under
//! `$ABC_LAB_OUT` (or `target/abc-lab-acceptance`) so reruns are quick.
//! Criteria 12-13 are full-scale and only run with `ABC_LAB_FULL=1`.
//! `ABC_LAB_CRITERIA=1,5` selects criteria; `ABC_LAB_STRICT=1` makes any
//! failure a nonzero exit.

use std::collections::BTreeSet;
use std::panic::{self, AssertUnwindSafe};
use std::path::PathBuf;
use std::time::Instant;

use abc_lab::abc_calibration::{
    average_attention, extend_bias, line_average, Calibration, Direction, LineMap,
};
use abc_lab::abs_bias::{cross_window_bias, self_window_bias, Arity};
use abc_lab::harness::{
    interpolation_stage, run_abc_pipeline, run_abs, run_eval, EvalReport, ExperimentConfig, Method, Scale, Scoring,
};
use abc_lab::task_data::{gen_interpolation_split, Sample, TaskKind};
use abc_lab::transformer::{
    AttentionSite, AttentionTensor, Batch, BiasSet, ModelConfig, PeKind, RunOptions, Tape, Trainer, Transformer,
};
use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const X: f64 = f64::NEG_INFINITY;
/// "100" in the one-decimal percentages the targets are quoted in.
const HUNDRED: f64 = 0.9995;

enum Outcome {
    Pass(String),
    Fail(String),
    Skip(String),
}

type Check = fn() -> Outcome;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Outcome::Pass(detail)
    } else {
        Outcome::Fail(detail)
    }
}

// ---------------------------------------------------------------------------
// Naive transcription of the calibration algorithm, used as the oracle.

fn oracle_average(samples: &[Vec<Array2<f64>>], h: usize) -> Array2<f64> {
    let (m, n) = samples[0][h].dim();
    let mut out = Array2::zeros((m, n));
    for i in 0..m {
        for j in 0..n {
            let mut s = 0.0;
            for k in samples {
                s += k[h][[i, j]];
            }
            out[[i, j]] = s / samples.len() as f64;
        }
    }
    out
}

/// Lines as explicit cell lists, each walked from its topmost cell.
fn oracle_lines(m: usize, n: usize, delta: i32) -> Vec<(isize, Vec<(usize, usize)>)> {
    let mut starts = Vec::new();
    for i in 1..=m {
        for j in 1..=n {
            let prev_i = i as isize - 1;
            let prev_j = j as isize - delta as isize;
            let has_prev = prev_i >= 1 && prev_j >= 1 && prev_j <= n as isize;
            if !has_prev {
                starts.push((i, j));
            }
        }
    }
    let mut lines: Vec<(isize, Vec<(usize, usize)>)> = starts
        .into_iter()
        .map(|(i0, j0)| {
            let mut cells = Vec::new();
            let mut k = 0isize;
            loop {
                let i = i0 as isize + k;
                let j = j0 as isize + k * delta as isize;
                if i > m as isize || j < 1 || j > n as isize {
                    break;
                }
                cells.push((i as usize, j as usize));
                k += 1;
            }
            let l = match delta {
                1 => j0 as isize - i0 as isize,
                0 => j0 as isize,
                _ => (n as isize + 1) - (i0 as isize + j0 as isize),
            };
            (l, cells)
        })
        .collect();
    lines.sort_by_key(|(l, _)| *l);
    lines
}

fn oracle_direction(a: &Array2<f64>, delta: i32, rows: usize, cols: usize, mult: Option<f64>) -> Array2<f64> {
    let (m, n) = a.dim();
    let lines = oracle_lines(m, n, delta);
    let d: Vec<(isize, f64)> = lines
        .iter()
        .map(|(l, cells)| {
            let mut s = 0.0;
            for &(i, j) in cells {
                s += a[[i - 1, j - 1]];
            }
            (*l, s / cells.len() as f64)
        })
        .collect();
    let k = d.len() as f64;
    let mut mean = 0.0;
    for (_, v) in &d {
        mean += v;
    }
    mean /= k;
    let mut var = 0.0;
    for (_, v) in &d {
        var += (v - mean) * (v - mean);
    }
    let std = (var / k).sqrt();
    let d_max = d.iter().map(|(_, v)| *v).fold(X, f64::max);
    let passes = |v: f64| mult.map_or(true, |t| v > mean + t * std);

    let mut out = Array2::from_elem((rows, cols), X);
    let shift = if delta == -1 { cols as isize - n as isize } else { 0 };
    for i in 1..=rows {
        for j in 1..=cols {
            // position relative to the aligned source
            let si = i as isize;
            let sj = j as isize - shift;
            let l = match delta {
                1 => sj - si,
                0 => sj,
                _ => (n as isize + 1) - (si + sj),
            };
            if delta == 0 && (sj < 1 || sj > n as isize) {
                continue;
            }
            if let Some(&(_, v)) = d.iter().find(|(ll, _)| *ll == l) {
                if passes(v) {
                    out[[i - 1, j - 1]] = v - d_max;
                }
            }
        }
    }
    out
}

fn oracle_head(a: &Array2<f64>, deltas: &[i32], rows: usize, cols: usize, mult: Option<f64>, causal: bool) -> Array2<f64> {
    let mut merged = Array2::from_elem((rows, cols), X);
    for &delta in deltas {
        let part = oracle_direction(a, delta, rows, cols, mult);
        for i in 0..rows {
            for j in 0..cols {
                if part[[i, j]] > merged[[i, j]] {
                    merged[[i, j]] = part[[i, j]];
                }
            }
        }
    }
    if merged.iter().all(|&v| v == X) {
        merged.fill(0.0);
    }
    for i in 0..rows {
        let limit = if causal { (i + 1).min(cols) } else { cols };
        if (0..limit).all(|j| merged[[i, j]] == X) {
            for j in 0..cols {
                merged[[i, j]] = 0.0;
            }
        }
    }
    merged
}

fn same_bits(a: &Array2<f64>, b: &Array2<f64>) -> bool {
    a.dim() == b.dim() && a.iter().zip(b.iter()).all(|(x, y)| x.to_bits() == y.to_bits())
}

fn random_matrix(rng: &mut ChaCha8Rng, m: usize, n: usize) -> Array2<f64> {
    match rng.gen_range(0..4) {
        // plain noise
        0 => Array2::from_shape_fn((m, n), |_| rng.gen_range(-5.0..5.0)),
        // a planted line over noise
        1 => {
            let delta = rng.gen_range(-1..=1);
            let pick = (rng.gen_range(1..=m), rng.gen_range(1..=n));
            let l = Direction::new(delta).unwrap().line_index(pick.0, pick.1, n);
            let dir = Direction::new(delta).unwrap();
            Array2::from_shape_fn((m, n), |(i, j)| {
                let base: f64 = rng.gen_range(-1.0..1.0);
                if dir.line_index(i + 1, j + 1, n) == l {
                    base + 40.0
                } else {
                    base
                }
            })
        }
        // constant: no line can pass a threshold
        2 => Array2::from_elem((m, n), rng.gen_range(-3.0..3.0)),
        // few distinct levels, many ties
        _ => Array2::from_shape_fn((m, n), |_| rng.gen_range(0..3) as f64),
    }
}

fn c1_oracle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xabc1);
    let mults = [None, Some(0.0), Some(0.5), Some(1.0), Some(2.0), Some(4.0)];
    let all = [1, -1, 0];
    let cases = 1200;
    for case in 0..cases {
        let heads = rng.gen_range(1..=4);
        let (m, n) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (big_m, big_n) = (rng.gen_range(m..=12), rng.gen_range(n..=12));
        let mult = mults[rng.gen_range(0..mults.len())];
        let mut deltas: Vec<i32> = all.iter().copied().filter(|_| rng.gen_bool(0.7)).collect();
        if deltas.is_empty() {
            deltas.push(all[rng.gen_range(0..3)]);
        }
        let directions: Vec<Direction> = deltas.iter().map(|&d| Direction::new(d).unwrap()).collect();
        let n_samples = rng.gen_range(1..=4);
        let cross_samples: Vec<Vec<Array2<f64>>> = (0..n_samples)
            .map(|_| {
                let base = random_matrix(&mut rng, m, n);
                (0..heads).map(|_| base.mapv(|v| v + rng.gen_range(-0.1..0.1))).collect()
            })
            .collect();
        let self_samples: Vec<Vec<Array2<f64>>> = (0..n_samples)
            .map(|_| (0..heads).map(|_| random_matrix(&mut rng, m, m)).collect())
            .collect();

        let tensors = |samples: &[Vec<Array2<f64>>], site| -> Vec<AttentionTensor<f64>> {
            samples
                .iter()
                .map(|s| AttentionTensor {
                    site,
                    layer: 0,
                    heads: s.clone(),
                })
                .collect()
        };
        let cross_avg = average_attention(&tensors(&cross_samples, AttentionSite::Cross)).unwrap();
        let self_avg = average_attention(&tensors(&self_samples, AttentionSite::SelfAttn)).unwrap();
        let cal = Calibration::from_sources(
            vec![
                (AttentionSite::SelfAttn, self_avg.heads),
                (AttentionSite::Cross, cross_avg.heads),
            ],
            &directions,
            mult,
        )
        .unwrap();
        let got = cal.bias_set(big_m, big_n).unwrap();
        for h in 0..heads {
            let want_cross = oracle_head(&oracle_average(&cross_samples, h), &deltas, big_m, big_n, mult, false);
            let want_self = oracle_head(&oracle_average(&self_samples, h), &deltas, big_m, big_m, mult, true);
            if !same_bits(&got.cross.as_ref().unwrap()[h], &want_cross) {
                return Outcome::Fail(format!(
                    "case {case}: cross head {h}, {m}x{n} -> {big_m}x{big_n}, dirs {deltas:?}, mult {mult:?}"
                ));
            }
            if !same_bits(&got.self_attn.as_ref().unwrap()[h], &want_self) {
                return Outcome::Fail(format!(
                    "case {case}: self head {h}, {m}x{m} -> {big_m}x{big_m}, dirs {deltas:?}, mult {mult:?}"
                ));
            }
        }
    }
    Outcome::Pass(format!("{cases} random tensors, element-exact"))
}

fn c2_lines() -> Outcome {
    let mut checked = 0;
    for m in 1..=8 {
        for n in 1..=8 {
            for delta in [-1, 0, 1] {
                let dir = Direction::new(delta).unwrap();
                let cells: Vec<(usize, usize)> = (1..=m).flat_map(|i| (1..=n).map(move |j| (i, j))).collect();
                for &(i1, j1) in &cells {
                    for &(i2, j2) in &cells {
                        let same_line = (j2 as isize - j1 as isize) == delta as isize * (i2 as isize - i1 as isize);
                        let same_index = dir.line_index(i1, j1, n) == dir.line_index(i2, j2, n);
                        if same_line != same_index {
                            return Outcome::Fail(format!(
                                "{m}x{n} delta {delta}: ({i1},{j1}) vs ({i2},{j2})"
                            ));
                        }
                    }
                }
                let lm = line_average(&Array2::<f64>::zeros((m, n)), dir);
                let expected = if delta == 0 { n } else { m + n - 1 };
                let range: BTreeSet<isize> = dir.line_range(m, n).collect();
                let seen: BTreeSet<isize> = lm.d.keys().copied().collect();
                if lm.d.len() != expected || lm.sizes.values().sum::<usize>() != m * n || range != seen {
                    return Outcome::Fail(format!("{m}x{n} delta {delta}: line count or range"));
                }
                checked += 1;
            }
        }
    }
    Outcome::Pass(format!("{checked} (m, n, delta) combinations"))
}

fn c3_rpe() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xabc3);
    for case in 0..500 {
        let (m, n) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let (big_m, big_n) = (rng.gen_range(m..=12), rng.gen_range(n..=12));
        let a = random_matrix(&mut rng, m, n);
        let lm = line_average(&a, Direction::DIAGONAL);
        for mult in [None, Some(0.5), Some(1.0)] {
            let b = extend_bias(&lm, big_m, big_n, mult).matrix;
            for i in 0..big_m {
                for j in 0..big_n {
                    let rel = j as isize - i as isize;
                    if i + 1 < big_m && j + 1 < big_n && b[[i, j]].to_bits() != b[[i + 1, j + 1]].to_bits() {
                        return Outcome::Fail(format!("case {case}: not Toeplitz at ({i},{j})"));
                    }
                    let inside = rel >= -(m as isize - 1) && rel <= n as isize - 1;
                    if !inside && b[[i, j]] != X {
                        return Outcome::Fail(format!("case {case}: open outside clip range at ({i},{j})"));
                    }
                    if inside && mult.is_none() && !b[[i, j]].is_finite() {
                        return Outcome::Fail(format!("case {case}: closed inside clip range at ({i},{j})"));
                    }
                }
            }
        }
    }
    Outcome::Pass("500 random extensions, Toeplitz with clip [-(m-1), n-1]".into())
}

fn miniature(pe: PeKind) -> ModelConfig {
    ModelConfig {
        encoder_layers: 1,
        decoder_layers: 2,
        heads: 2,
        d_model: 8,
        d_ff: 16,
        dropout: 0.0,
        pe,
        init_seed: 3,
        ..ModelConfig::default()
    }
}

fn few_samples(n: usize) -> Vec<Sample> {
    let split = gen_interpolation_split(TaskKind::Addition, 5, 100, 10, false).unwrap();
    split.train.into_iter().take(n).collect()
}

fn c4_masking() -> Outcome {
    let model = Transformer::<f64>::new(miniature(PeKind::Sinusoidal)).unwrap();
    let samples = few_samples(4);
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs);
    let mut rng = ChaCha8Rng::seed_from_u64(0xabc4);
    let (m, n) = (batch.dec_len, batch.src_len);
    let mut bias = BiasSet::<f64>::zeros(2, m, n);
    for mat in bias.cross.iter_mut().chain(bias.self_attn.iter_mut()).flatten() {
        let cols = mat.ncols();
        for i in 0..mat.nrows() {
            let keep = rng.gen_range(0..cols.min(i + 1));
            for j in 0..cols {
                if j != keep && rng.gen_bool(0.6) {
                    mat[[i, j]] = X;
                }
            }
        }
    }
    let mut tape = Tape::new();
    let vars = model.load_params(&mut tape);
    let out = model.forward_tape(&mut tape, &vars, &batch, Some(&bias), RunOptions::eval()).unwrap();
    let mut zeros = 0;
    for (var, site) in [(out.last_cross, &bias.cross), (out.last_self, &bias.self_attn)] {
        let probs = tape.attention_probs(var).unwrap();
        let site = site.as_ref().unwrap();
        for (bh, p) in probs.iter().enumerate() {
            let b = &site[bh % 2];
            for ((i, j), &w) in p.indexed_iter() {
                if b[[i, j]] == X {
                    if w != 0.0 {
                        return Outcome::Fail(format!("masked weight {w} at ({i},{j})"));
                    }
                    zeros += 1;
                }
            }
        }
    }
    // sanitation: calibrated biases never leave a dead row
    for case in 0..300 {
        let heads = rng.gen_range(1..=4);
        let (sm, sn) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
        let cross: Vec<Array2<f64>> = (0..heads).map(|_| random_matrix(&mut rng, sm, sn)).collect();
        let selfm: Vec<Array2<f64>> = (0..heads).map(|_| random_matrix(&mut rng, sm, sm)).collect();
        let cal = Calibration::from_sources(
            vec![(AttentionSite::SelfAttn, selfm), (AttentionSite::Cross, cross)],
            &Direction::ALL,
            Some(rng.gen_range(0.0..2.0)),
        )
        .unwrap();
        let (bm, bn) = (rng.gen_range(1..=12), rng.gen_range(1..=12));
        let set = cal.bias_set(bm, bn).unwrap();
        for (site, causal) in [(&set.self_attn, true), (&set.cross, false)] {
            for mat in site.as_ref().unwrap() {
                for i in 0..mat.nrows() {
                    let limit = if causal { (i + 1).min(mat.ncols()) } else { mat.ncols() };
                    if (0..limit).all(|j| mat[[i, j]] == X) {
                        return Outcome::Fail(format!("case {case}: dead row {i}"));
                    }
                }
            }
        }
    }
    ensure(zeros > 0, format!("{zeros} masked weights exactly 0; 300 calibrated sets without dead rows"))
}

fn c5_gradients() -> Outcome {
    let samples = few_samples(3);
    let refs: Vec<&Sample> = samples.iter().collect();
    let batch = Batch::from_samples(&refs);
    let mut trainer = Trainer::new(Transformer::<f64>::new(miniature(PeKind::Sinusoidal)).unwrap());
    let mut rng = ChaCha8Rng::seed_from_u64(0xabc5);
    let mut bias = BiasSet::<f64>::zeros(2, batch.dec_len, batch.src_len);
    for mat in bias.cross.iter_mut().flatten() {
        mat.mapv_inplace(|_| rng.gen_range(-1.0..0.0));
    }
    let (_, grads) = trainer.loss_and_grads(&batch, Some(&bias), None).unwrap();
    let eps = 1e-5;
    let mut worst: f64 = 0.0;
    for _ in 0..100 {
        let p = rng.gen_range(0..trainer.model.params.len());
        let (r, c) = trainer.model.params.values[p].dim();
        let (i, j) = (rng.gen_range(0..r), rng.gen_range(0..c));
        let orig = trainer.model.params.values[p][[i, j]];
        trainer.model.params.values[p][[i, j]] = orig + eps;
        let up = trainer.loss_and_grads(&batch, Some(&bias), None).unwrap().0;
        trainer.model.params.values[p][[i, j]] = orig - eps;
        let down = trainer.loss_and_grads(&batch, Some(&bias), None).unwrap().0;
        trainer.model.params.values[p][[i, j]] = orig;
        let numeric = (up - down) / (2.0 * eps);
        let analytic = grads[p].as_ref().map_or(0.0, |g| g[[i, j]]);
        let rel = (numeric - analytic).abs() / numeric.abs().max(analytic.abs()).max(1e-6);
        worst = worst.max(rel);
    }
    ensure(worst < 1e-3, format!("max relative error {worst:.2e} over 100 parameters"))
}

fn survivors_with_margin(lm: &LineMap<f64>, mult: f64) -> (BTreeSet<isize>, f64) {
    let cut = lm.threshold(Some(mult)).unwrap();
    let margin = lm.d.values().map(|v| (v - cut).abs()).fold(f64::INFINITY, f64::min);
    (lm.survivors(Some(mult)), margin)
}

fn c6_affine() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(0xabc6);
    let mut compared = 0;
    for _ in 0..2000 {
        let (m, n) = (rng.gen_range(2..=8), rng.gen_range(2..=8));
        let a = random_matrix(&mut rng, m, n);
        let scale = rng.gen_range(0.01..100.0);
        let shift = rng.gen_range(-50.0..50.0);
        let b = a.mapv(|v| scale * v + shift);
        for dir in Direction::ALL {
            for mult in [0.0, 0.5, 1.0, 2.0, 4.0] {
                let la = line_average(&a, dir);
                let lb = line_average(&b, dir);
                let (sa, margin) = survivors_with_margin(&la, mult);
                let std = la.stats().1;
                // ties at the cut-off are decided by rounding, not by the rule
                if margin <= 1e-9 * (1.0 + std) {
                    continue;
                }
                let sb = lb.survivors(Some(mult));
                if sa != sb {
                    return Outcome::Fail(format!("{m}x{n} {dir} mult {mult}: {sa:?} vs {sb:?}"));
                }
                let (ea, eb) = (extend_bias(&la, m, n, Some(mult)).matrix, extend_bias(&lb, m, n, Some(mult)).matrix);
                for (x, y) in ea.iter().zip(eb.iter()) {
                    let ok = if x.is_finite() {
                        (x * scale - y).abs() <= 1e-9 * (1.0 + y.abs()) * scale.max(1.0)
                    } else {
                        x == y
                    };
                    if !ok {
                        return Outcome::Fail(format!("{m}x{n} {dir}: value {x} scaled by {scale} gave {y}"));
                    }
                }
                compared += 1;
            }
        }
    }
    Outcome::Pass(format!("{compared} (matrix, direction, threshold) cases"))
}

fn c7_goldens() -> Outcome {
    let self3: Array2<f64> = self_window_bias(3, 1);
    let want_self = ndarray::array![[0.0, X, X], [0.0, 0.0, X], [X, 0.0, 0.0]];
    let unary: Array2<f64> = cross_window_bias(4, 3, 1, Arity::Unary, true).unwrap();
    let want_unary = ndarray::array![
        [X, 0.0, 0.0],
        [0.0, 0.0, 0.0],
        [0.0, 0.0, X],
        [0.0, 0.0, X]
    ];
    let unary0: Array2<f64> = cross_window_bias(3, 3, 0, Arity::Unary, true).unwrap();
    let want_unary0 = ndarray::array![[X, X, 0.0], [X, 0.0, X], [0.0, X, X]];
    let binary: Array2<f64> = cross_window_bias(3, 7, 1, Arity::Binary, true).unwrap();
    let want_binary = ndarray::array![
        [0.0, X, X, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, 0.0, 0.0],
        [0.0, 0.0, 0.0, 0.0, 0.0, X, X]
    ];
    let cases = [
        ("self(3,1)", self3 == want_self),
        ("unary 4x3 w=1", unary == want_unary),
        ("unary 3x3 w=0", unary0 == want_unary0),
        ("binary 3x7 w=1", binary == want_binary),
    ];
    let bad: Vec<&str> = cases.iter().filter(|(_, ok)| !ok).map(|(n, _)| *n).collect();
    ensure(bad.is_empty(), if bad.is_empty() { "4 fixtures".into() } else { format!("mismatch: {bad:?}") })
}

// ---------------------------------------------------------------------------
// Training runs.

fn out_dir() -> PathBuf {
    match std::env::var_os("ABC_LAB_OUT") {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => PathBuf::from(env!("CARGO_MANIFEST_DIR")).join("../../target/abc-lab-acceptance"),
    }
}

fn pct(x: Option<f64>) -> String {
    x.map_or("-".into(), |v| format!("{:.2}%", v * 100.0))
}

fn c8_vanilla() -> Outcome {
    let cfg = ExperimentConfig::preset(Scale::Smoke, TaskKind::Successor);
    match run_abs(&cfg, &out_dir()) {
        Ok((_, r)) => {
            let (a4, a8) = (r.accuracy_at(4), r.accuracy_at(8));
            ensure(
                a4.is_some_and(|v| v >= HUNDRED) && a8.is_some_and(|v| v <= 0.05),
                format!("length 4 {}, length 8 {}", pct(a4), pct(a8)),
            )
        }
        Err(e) => Outcome::Fail(e.to_string()),
    }
}

fn abc_preset(scale: Scale, task: TaskKind) -> ExperimentConfig {
    let mut cfg = ExperimentConfig::preset(scale, task);
    cfg.method = Method::Abc;
    cfg
}

fn c9_abc() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for task in [TaskKind::Successor, TaskKind::NxOne] {
        match run_abc_pipeline(&abc_preset(Scale::Smoke, task), &out_dir()) {
            Ok(run) => {
                let (a8, a12) = (run.report.accuracy_at(8), run.report.accuracy_at(12));
                ok &= a8.is_some_and(|v| v >= 0.99) && a12.is_some_and(|v| v >= 0.99);
                parts.push(format!(
                    "{task}: 8 {}, 12 {} (retrain interpolated={})",
                    pct(a8),
                    pct(a12),
                    run.retrained.reached
                ));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{task}: {e}"));
            }
        }
    }
    ensure(ok, parts.join("; "))
}

fn c10_parity() -> Outcome {
    let cfg = match ExperimentConfig::preset(Scale::Smoke, TaskKind::Parity).abs_variant('D') {
        Ok(c) => c,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let out = out_dir();
    let stage = match interpolation_stage(&cfg, &out) {
        Ok(s) => s,
        Err(e) => return Outcome::Fail(e.to_string()),
    };
    let scaffold = cfg.scaffold();
    let eval = |scoring| -> abc_lab::Result<EvalReport> {
        let c = ExperimentConfig {
            eval_scoring: scoring,
            ..cfg.clone()
        };
        run_eval(&stage.model()?, Some(&scaffold), &c, &stage.checkpoint_id()?)
    };
    let (exact, digits) = match (eval(Scoring::Exact), eval(Scoring::Digits)) {
        (Ok(a), Ok(b)) => (a, b),
        (Err(e), _) | (_, Err(e)) => return Outcome::Fail(e.to_string()),
    };
    let row = |r: &EvalReport| {
        r.results
            .iter()
            .map(|x| format!("{} {}", x.length, pct(Some(x.accuracy))))
            .collect::<Vec<_>>()
            .join(", ")
    };
    let worst = exact.results.iter().map(|x| x.accuracy).fold(1.0, f64::min);
    ensure(
        stage.reached && worst >= HUNDRED && exact.results.iter().any(|x| x.length == 50),
        format!(
            "interpolated={} after {} steps; exact {}; digits only {}",
            stage.reached,
            stage.steps,
            row(&exact),
            row(&digits)
        ),
    )
}

fn c11_retrain_speed() -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for task in [TaskKind::Successor, TaskKind::NxOne] {
        match run_abc_pipeline(&abc_preset(Scale::Smoke, task), &out_dir()) {
            Ok(run) => {
                let (a, b) = (run.interpolation.steps, run.retrained.steps);
                ok &= run.retrained.reached && b * 5 <= a;
                parts.push(format!("{task}: {b} retrain vs {a} interpolation steps"));
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{task}: {e}"));
            }
        }
    }
    ensure(ok, parts.join("; "))
}

fn full_enabled() -> bool {
    std::env::var("ABC_LAB_FULL").is_ok_and(|v| v == "1")
}

fn c12_full_abc() -> Outcome {
    if !full_enabled() {
        return Outcome::Skip("full scale; set ABC_LAB_FULL=1".into());
    }
    let mut parts = Vec::new();
    let mut ok = true;
    let checks: [(TaskKind, &[usize], f64); 3] = [
        (TaskKind::Successor, &[6, 10, 15, 20, 50], HUNDRED),
        (TaskKind::Addition, &[50], 0.998),
        (TaskKind::NxOne, &[6, 10, 15, 20, 50], HUNDRED),
    ];
    for (task, lengths, floor) in checks {
        match run_abc_pipeline(&abc_preset(Scale::Full, task), &out_dir()) {
            Ok(run) => {
                for &l in lengths {
                    let a = run.report.accuracy_at(l);
                    ok &= a.is_some_and(|v| v >= floor);
                    parts.push(format!("{task}@{l} {}", pct(a)));
                }
            }
            Err(e) => {
                ok = false;
                parts.push(format!("{task}: {e}"));
            }
        }
    }
    ensure(ok, parts.join(", "))
}

fn c13_full_baselines() -> Outcome {
    if !full_enabled() {
        return Outcome::Skip("full scale; set ABC_LAB_FULL=1".into());
    }
    let mut parts = Vec::new();
    let mut ok = true;
    let runs = [
        (TaskKind::Successor, PeKind::Sinusoidal),
        (TaskKind::Successor, PeKind::Rope),
        (TaskKind::Successor, PeKind::Alibi),
        (TaskKind::Addition, PeKind::Sinusoidal),
        (TaskKind::Addition, PeKind::Rope),
    ];
    for (task, pe) in runs {
        let mut cfg = ExperimentConfig::preset(Scale::Full, task);
        cfg.model.pe = pe;
        // ALiBi is not expected to interpolate, so skip the requirement
        let report = interpolation_stage(&cfg, &out_dir())
            .and_then(|stage| run_eval(&stage.model()?, None, &cfg, &stage.checkpoint_id()?));
        let r = match report {
            Ok(r) => r,
            Err(e) => {
                ok = false;
                parts.push(format!("{task}/{pe}: {e}"));
                continue;
            }
        };
        let a6 = r.accuracy_at(6).unwrap_or(0.0);
        let beyond = r.results.iter().filter(|x| x.length > 6).map(|x| x.accuracy).fold(0.0, f64::max);
        ok &= match pe {
            PeKind::Alibi => a6 <= 0.02,
            _ => a6 >= 0.99 && beyond <= 0.05,
        };
        parts.push(format!("{task}/{pe}: 6 {}, beyond max {}", pct(Some(a6)), pct(Some(beyond))));
    }
    ensure(ok, parts.join("; "))
}

fn main() {
    let checks: [(u32, &str, Check); 13] = [
        (1, "calibration matches brute-force oracle", c1_oracle),
        (2, "lines partition the index set", c2_lines),
        (3, "diagonal extension has relative-position structure", c3_rpe),
        (4, "-inf gives zero weight, no dead rows", c4_masking),
        (5, "gradient check on the miniature model", c5_gradients),
        (6, "line survival is affine invariant", c6_affine),
        (7, "window bias fixtures", c7_goldens),
        (8, "smoke: vanilla Successor interpolates then collapses", c8_vanilla),
        (9, "smoke: ABC Successor and Nx1 extrapolate to 8 and 12", c9_abc),
        (10, "smoke: ABS Parity (w=1, NoPE) up to 50 bits", c10_parity),
        (11, "smoke: ABC retraining within 1/5 of interpolation steps", c11_retrain_speed),
        (12, "full: ABC extrapolates to 50", c12_full_abc),
        (13, "full: baseline rows collapse", c13_full_baselines),
    ];
    let only: Option<Vec<u32>> = std::env::var("ABC_LAB_CRITERIA")
        .ok()
        .map(|s| s.split(',').filter_map(|t| t.trim().parse().ok()).collect());
    let mut failed = 0;
    for (id, name, check) in checks {
        if only.as_ref().is_some_and(|o| !o.contains(&id)) {
            continue;
        }
        let start = Instant::now();
        let outcome = panic::catch_unwind(AssertUnwindSafe(check))
            .unwrap_or_else(|e| Outcome::Fail(format!("panicked: {:?}", e.downcast_ref::<String>())));
        let secs = start.elapsed().as_secs_f64();
        let (tag, detail) = match outcome {
            Outcome::Pass(d) => ("PASS", d),
            Outcome::Fail(d) => {
                failed += 1;
                ("FAIL", d)
            }
            Outcome::Skip(d) => ("SKIP", d),
        };
        println!("{tag} {id:>2} {name} [{detail}] ({secs:.1}s)");
    }
    if failed > 0 {
        println!("{failed} criteria failed");
        // known failures are documented; strict mode is for CI gating
        if std::env::var("ABC_LAB_STRICT").is_ok_and(|v| v == "1") {
            std::process::exit(1);
        }
    }
}
