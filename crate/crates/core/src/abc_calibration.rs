//! Attention bias calibration.
//!
//! The attention of an interpolating model is averaged over correctly
//! decoded samples. For each head and direction `(1, Δ)` the averaged
//! matrix is cut into lines, lines whose mean is an outlier survive, and
//! the surviving lines are extended to any target size. Directions are
//! merged with an element-wise max.
//!
//! Indices in line formulas are 1-based, as in the line index ranges:
//! `Δ = 1: l = j - i`, `Δ = 0: l = j`, `Δ = -1: l = (n + 1) - (i + j)`.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::fs;
use std::ops::RangeInclusive;
use std::path::Path;
use std::str::FromStr;

use ndarray::Array2;

use crate::error::{LabError, Result};
use crate::kv;
use crate::matrix_io;
use crate::harness::train::{train_until, TrainOptions, TrainOutcome};
use crate::task_data::{DatasetSplit, Sample};
use crate::transformer::{
    sanitize_rows, AttentionSite, AttentionTensor, BiasProvider, BiasSet, ModelConfig, Trainer, Transformer,
};
use crate::Scalar;

/// A search direction `(1, Δ)`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct Direction {
    delta: i8,
}

impl Direction {
    pub const DIAGONAL: Direction = Direction { delta: 1 };
    pub const VERTICAL: Direction = Direction { delta: 0 };
    pub const ANTI_DIAGONAL: Direction = Direction { delta: -1 };
    pub const ALL: [Direction; 3] = [Self::DIAGONAL, Self::ANTI_DIAGONAL, Self::VERTICAL];

    pub fn new(delta: i32) -> Result<Self> {
        match delta {
            -1..=1 => Ok(Self { delta: delta as i8 }),
            d => Err(LabError::Config(format!("direction delta must be -1, 0 or 1, got {d}"))),
        }
    }

    pub fn delta(self) -> i32 {
        self.delta as i32
    }

    /// Line index of the 1-based element `(i, j)` of a matrix with `n` columns.
    pub fn line_index(self, i: usize, j: usize, n: usize) -> isize {
        let (i, j, n) = (i as isize, j as isize, n as isize);
        match self.delta {
            1 => j - i,
            0 => j,
            _ => (n + 1) - (i + j),
        }
    }

    pub fn line_range(self, m: usize, n: usize) -> RangeInclusive<isize> {
        let (m, n) = (m as isize, n as isize);
        match self.delta {
            1 => -(m - 1)..=n - 1,
            0 => 1..=n,
            _ => (n + 1) - (m + n)..=n - 1,
        }
    }
}

impl fmt::Display for Direction {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.delta)
    }
}

impl FromStr for Direction {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        let d: i32 = s
            .trim()
            .trim_start_matches('+')
            .parse()
            .map_err(|_| LabError::Config(format!("bad direction {s:?}")))?;
        Self::new(d)
    }
}

/// Parses a comma-separated list such as `1,-1,0`.
pub fn parse_directions(s: &str) -> Result<Vec<Direction>> {
    let dirs: Vec<Direction> = s.split(',').map(str::parse).collect::<Result<_>>()?;
    let unique: BTreeSet<Direction> = dirs.iter().copied().collect();
    if dirs.is_empty() || unique.len() != dirs.len() {
        return Err(LabError::Config(format!("bad direction list {s:?}")));
    }
    Ok(dirs)
}

pub fn format_directions(dirs: &[Direction]) -> String {
    dirs.iter().map(Direction::to_string).collect::<Vec<_>>().join(",")
}

/// Line means of an `m x n` matrix for one direction.
#[derive(Debug, Clone, PartialEq)]
pub struct LineMap<T> {
    pub dir: Direction,
    pub m: usize,
    pub n: usize,
    pub d: BTreeMap<isize, T>,
    pub sizes: BTreeMap<isize, usize>,
}

impl<T: Scalar> LineMap<T> {
    pub fn d_max(&self) -> T {
        self.d.values().copied().fold(T::neg_inf(), T::max)
    }

    /// Population mean and standard deviation of the line means.
    pub fn stats(&self) -> (T, T) {
        let k = T::of(self.d.len() as f64);
        let mean = self.d.values().fold(T::zero(), |a, &v| a + v) / k;
        let var = self.d.values().fold(T::zero(), |a, &v| a + (v - mean) * (v - mean)) / k;
        (mean, var.sqrt())
    }

    /// Absolute cut-off `mean + mult * std`, or `None` when every line passes.
    pub fn threshold(&self, mult: Option<T>) -> Option<T> {
        mult.map(|k| {
            let (mean, std) = self.stats();
            mean + k * std
        })
    }

    /// Lines whose mean strictly exceeds the threshold.
    pub fn survivors(&self, mult: Option<T>) -> BTreeSet<isize> {
        let cut = self.threshold(mult);
        self.d
            .iter()
            .filter(|(_, &v)| cut.map_or(true, |c| v > c))
            .map(|(&l, _)| l)
            .collect()
    }
}

/// Means along every `dir`-line of `a`. Members are summed in row order.
pub fn line_average<T: Scalar>(a: &Array2<T>, dir: Direction) -> LineMap<T> {
    let (m, n) = a.dim();
    let mut sums: BTreeMap<isize, T> = BTreeMap::new();
    let mut sizes: BTreeMap<isize, usize> = BTreeMap::new();
    for i in 1..=m {
        for j in 1..=n {
            let l = dir.line_index(i, j, n);
            let s = sums.entry(l).or_insert_with(T::zero);
            *s = *s + a[[i - 1, j - 1]];
            *sizes.entry(l).or_insert(0) += 1;
        }
    }
    let d = sums
        .into_iter()
        .map(|(l, s)| (l, s / T::of(sizes[&l] as f64)))
        .collect();
    LineMap { dir, m, n, d, sizes }
}

/// A bias matrix extended from one direction's surviving lines.
#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedBias<T> {
    pub matrix: Array2<T>,
    pub directions: Vec<Direction>,
    pub threshold: Option<T>,
    pub d_max: T,
}

/// Where vertical (`Δ = 0`) lines are attached when the target is wider
/// than the source.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub enum Anchor {
    /// Same column index as in the source.
    Left,
    /// Same distance from the last column.
    Right,
    /// Lines in the right half of the source follow the right edge, the
    /// rest the left edge.
    Nearest,
}

impl fmt::Display for Anchor {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Anchor::Left => "left",
            Anchor::Right => "right",
            Anchor::Nearest => "nearest",
        })
    }
}

impl FromStr for Anchor {
    type Err = LabError;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "left" => Ok(Anchor::Left),
            "right" => Ok(Anchor::Right),
            "nearest" => Ok(Anchor::Nearest),
            other => Err(LabError::Config(format!("unknown anchor {other:?}"))),
        }
    }
}

/// Extends the lines of `lm` to an `rows x cols` matrix. Surviving lines
/// carry `d_l - d_max`; everything else is `-inf`. For `Δ = -1` the source
/// is aligned with the target's top-right corner, otherwise top-left.
/// Targets smaller than the source are handled by the same alignment.
pub fn extend_bias<T: Scalar>(lm: &LineMap<T>, rows: usize, cols: usize, mult: Option<T>) -> ExtendedBias<T> {
    extend_bias_anchored(lm, rows, cols, mult, Anchor::Left)
}

/// [`extend_bias`] with a choice of anchor for vertical lines.
pub fn extend_bias_anchored<T: Scalar>(
    lm: &LineMap<T>,
    rows: usize,
    cols: usize,
    mult: Option<T>,
    anchor: Anchor,
) -> ExtendedBias<T> {
    let d_max = lm.d_max();
    let alive = lm.survivors(mult);
    let n = lm.n as isize;
    let slack = cols as isize - n;
    let mut matrix = Array2::from_elem((rows, cols), T::neg_inf());
    match lm.dir.delta() {
        0 => {
            for &l in &alive {
                let right = match anchor {
                    Anchor::Left => false,
                    Anchor::Right => true,
                    Anchor::Nearest => 2 * l > n + 1,
                };
                let j = if right { l + slack } else { l };
                if (1..=cols as isize).contains(&j) {
                    let v = lm.d[&l] - d_max;
                    matrix.column_mut(j as usize - 1).mapv_inplace(|x| x.max(v));
                }
            }
        }
        delta => {
            let shift = if delta < 0 { slack } else { 0 };
            for ((i, j), x) in matrix.indexed_iter_mut() {
                let (i, j) = (i as isize + 1, j as isize + 1 - shift);
                let l = if delta > 0 { j - i } else { (n + 1) - (i + j) };
                if let Some(&v) = lm.d.get(&l) {
                    if alive.contains(&l) {
                        *x = v - d_max;
                    }
                }
            }
        }
    }
    ExtendedBias {
        matrix,
        directions: vec![lm.dir],
        threshold: lm.threshold(mult),
        d_max,
    }
}

/// Element-wise max; an all `-inf` result becomes all zeros.
pub fn merge_directions<T: Scalar>(parts: &[Array2<T>]) -> Result<Array2<T>> {
    let first = parts.first().ok_or(LabError::EmptySet)?;
    let mut out = first.clone();
    for p in &parts[1..] {
        if p.dim() != out.dim() {
            return Err(LabError::DimensionMismatch(format!(
                "merging {:?} with {:?}",
                out.dim(),
                p.dim()
            )));
        }
        out.zip_mut_with(p, |a, &b| *a = a.max(b));
    }
    if out.iter().all(|&v| v == T::neg_inf()) {
        out.fill(T::zero());
    }
    Ok(out)
}

/// Element-wise mean of same-shaped attention tensors.
pub fn average_attention<T: Scalar>(tensors: &[AttentionTensor<T>]) -> Result<AttentionTensor<T>> {
    let first = tensors.first().ok_or(LabError::EmptySet)?;
    let mut heads = first.heads.clone();
    for t in &tensors[1..] {
        if t.dims() != first.dims() || t.site != first.site {
            return Err(LabError::DimensionMismatch(format!(
                "{} {:?} vs {} {:?}",
                t.site.name(),
                t.dims(),
                first.site.name(),
                first.dims()
            )));
        }
        for (acc, h) in heads.iter_mut().zip(&t.heads) {
            *acc += h;
        }
    }
    let k = T::of(tensors.len() as f64);
    for h in &mut heads {
        h.mapv_inplace(|v| v / k);
    }
    Ok(AttentionTensor {
        site: first.site,
        layer: first.layer,
        heads,
    })
}

/// Calibrated lines for one attention site.
#[derive(Debug, Clone, PartialEq)]
pub struct SiteCalibration<T> {
    pub site: AttentionSite,
    /// Averaged attention per head.
    pub sources: Vec<Array2<T>>,
    /// Line maps per head, one per direction.
    pub maps: Vec<Vec<LineMap<T>>>,
}

/// Everything needed to instantiate calibrated biases at any size.
#[derive(Debug, Clone, PartialEq)]
pub struct Calibration<T> {
    pub heads: usize,
    pub directions: Vec<Direction>,
    pub threshold_mult: Option<T>,
    /// Anchor for vertical lines at the cross site. The self site is
    /// square and always anchors left.
    pub vertical_anchor: Anchor,
    pub sites: Vec<SiteCalibration<T>>,
    pub samples_used: usize,
}

impl<T: Scalar> Calibration<T> {
    pub fn from_sources(
        sources: Vec<(AttentionSite, Vec<Array2<T>>)>,
        directions: &[Direction],
        threshold_mult: Option<T>,
    ) -> Result<Self> {
        let heads = sources.first().map(|(_, s)| s.len()).ok_or(LabError::EmptySet)?;
        if directions.is_empty() {
            return Err(LabError::EmptySet);
        }
        let mut sites = Vec::new();
        for (site, mats) in sources {
            if mats.len() != heads {
                return Err(LabError::DimensionMismatch(format!(
                    "{} has {} heads, expected {heads}",
                    site.name(),
                    mats.len()
                )));
            }
            let maps = mats
                .iter()
                .map(|a| directions.iter().map(|&d| line_average(a, d)).collect())
                .collect();
            sites.push(SiteCalibration {
                site,
                sources: mats,
                maps,
            });
        }
        Ok(Self {
            heads,
            directions: directions.to_vec(),
            threshold_mult,
            vertical_anchor: Anchor::Left,
            sites,
            samples_used: 0,
        })
    }

    pub fn site(&self, site: AttentionSite) -> Option<&SiteCalibration<T>> {
        self.sites.iter().find(|s| s.site == site)
    }

    /// Merged bias for one head before row sanitation.
    pub fn head_bias(&self, site: AttentionSite, head: usize, rows: usize, cols: usize) -> Result<Array2<T>> {
        let sc = self
            .site(site)
            .ok_or_else(|| LabError::Config(format!("site {} not calibrated", site.name())))?;
        let anchor = match site {
            AttentionSite::SelfAttn => Anchor::Left,
            AttentionSite::Cross => self.vertical_anchor,
        };
        let parts: Vec<Array2<T>> = sc.maps[head]
            .iter()
            .map(|lm| extend_bias_anchored(lm, rows, cols, self.threshold_mult, anchor).matrix)
            .collect();
        merge_directions(&parts)
    }

    /// Bias set for `dec_len` decoder positions over `enc_len` inputs, with
    /// dead rows opened.
    pub fn bias_set(&self, dec_len: usize, enc_len: usize) -> Result<BiasSet<T>> {
        let mut set = BiasSet::empty(self.heads);
        for sc in &self.sites {
            let (cols, causal) = match sc.site {
                AttentionSite::SelfAttn => (dec_len, true),
                AttentionSite::Cross => (enc_len, false),
            };
            let mats = (0..self.heads)
                .map(|h| {
                    let mut m = self.head_bias(sc.site, h, dec_len, cols)?;
                    sanitize_rows(&mut m, causal);
                    Ok(m)
                })
                .collect::<Result<Vec<_>>>()?;
            set.set_site(sc.site, mats)?;
        }
        Ok(set)
    }

    /// Number of heads per site whose merged bias fell back to all zeros at
    /// the source size.
    pub fn transparent_heads(&self, site: AttentionSite) -> Vec<usize> {
        let Some(sc) = self.site(site) else {
            return Vec::new();
        };
        (0..self.heads)
            .filter(|&h| {
                let (m, n) = sc.sources[h].dim();
                self.head_bias(site, h, m, n)
                    .map(|b| b.iter().all(|v| *v == T::zero()))
                    .unwrap_or(false)
            })
            .collect()
    }

    pub fn save(&self, dir: &Path) -> Result<()> {
        fs::create_dir_all(dir)?;
        let mut meta = kv::KvMap::new();
        meta.insert("kind".into(), "calibration".into());
        meta.insert("heads".into(), self.heads.to_string());
        meta.insert("directions".into(), format_directions(&self.directions));
        meta.insert(
            "threshold_mult".into(),
            self.threshold_mult.map_or("none".into(), |k| k.as_f64().to_string()),
        );
        meta.insert("samples_used".into(), self.samples_used.to_string());
        meta.insert("vertical_anchor".into(), self.vertical_anchor.to_string());
        let names: Vec<&str> = self.sites.iter().map(|s| s.site.name()).collect();
        meta.insert("sites".into(), names.join(","));
        for sc in &self.sites {
            let (m, n) = sc.sources[0].dim();
            meta.insert(format!("{}.source_dims", sc.site.name()), format!("{m}x{n}"));
            for (h, maps) in sc.maps.iter().enumerate() {
                for lm in maps {
                    let (mean, std) = lm.stats();
                    let alive: Vec<String> =
                        lm.survivors(self.threshold_mult).iter().map(|l| l.to_string()).collect();
                    meta.insert(
                        format!("{}.h{h}.dir{}", sc.site.name(), lm.dir),
                        format!(
                            "mean={} std={} d_max={} lines={}",
                            mean.as_f64(),
                            std.as_f64(),
                            lm.d_max().as_f64(),
                            alive.join(";")
                        ),
                    );
                }
            }
            for (h, a) in sc.sources.iter().enumerate() {
                matrix_io::save_csv(a, &dir.join(format!("source_{}_h{h}.csv", sc.site.name())))?;
            }
        }
        fs::write(dir.join("meta"), kv::render(&meta))?;
        Ok(())
    }

    pub fn load(dir: &Path) -> Result<Self> {
        let meta = kv::parse(&fs::read_to_string(dir.join("meta"))?)?;
        let heads: usize = kv::require(&meta, "heads")?;
        let directions = parse_directions(&kv::require::<String>(&meta, "directions")?)?;
        let mult_text: String = kv::require(&meta, "threshold_mult")?;
        let threshold_mult = match mult_text.as_str() {
            "none" => None,
            t => Some(T::of(t.parse::<f64>().map_err(|e| LabError::Config(e.to_string()))?)),
        };
        let mut sources = Vec::new();
        for name in kv::require::<String>(&meta, "sites")?.split(',') {
            let site = AttentionSite::parse(name)?;
            let mats = (0..heads)
                .map(|h| matrix_io::load_csv(&dir.join(format!("source_{name}_h{h}.csv"))))
                .collect::<Result<Vec<_>>>()?;
            sources.push((site, mats));
        }
        let mut cal = Self::from_sources(sources, &directions, threshold_mult)?;
        cal.samples_used = kv::get(&meta, "samples_used")?.unwrap_or(0);
        cal.vertical_anchor = kv::get(&meta, "vertical_anchor")?.unwrap_or(Anchor::Left);
        Ok(cal)
    }
}

impl<T: Scalar> BiasProvider<T> for Calibration<T> {
    fn bias_for(&self, heads: usize, dec_len: usize, enc_len: usize) -> Result<BiasSet<T>> {
        if heads != self.heads {
            return Err(LabError::DimensionMismatch(format!(
                "calibrated for {} heads, model has {heads}",
                self.heads
            )));
        }
        self.bias_set(dec_len, enc_len)
    }
}

/// Settings for [`calibrate`].
#[derive(Debug, Clone)]
pub struct CalibrationOptions {
    pub directions: Vec<Direction>,
    pub sites: Vec<AttentionSite>,
    /// `None` disables the outlier test.
    pub threshold_mult: Option<f64>,
    pub vertical_anchor: Anchor,
    /// Fewer correct decodes than this is an error.
    pub min_correct: usize,
    /// Stop collecting after this many correct decodes.
    pub max_samples: usize,
    pub batch_size: usize,
}

impl Default for CalibrationOptions {
    fn default() -> Self {
        Self {
            directions: Direction::ALL.to_vec(),
            sites: vec![AttentionSite::SelfAttn, AttentionSite::Cross],
            threshold_mult: Some(4.0),
            vertical_anchor: Anchor::Left,
            min_correct: 32,
            max_samples: 256,
            batch_size: 64,
        }
    }
}

/// Averages the last decoder layer's attention over samples the model gets
/// exactly right and calibrates lines from it. All samples must share one
/// input and output length.
pub fn calibrate<T: Scalar>(
    model: &Transformer<T>,
    samples: &[Sample],
    opts: &CalibrationOptions,
) -> Result<Calibration<T>> {
    let mut self_t = Vec::new();
    let mut cross_t = Vec::new();
    for chunk in samples.chunks(opts.batch_size.max(1)) {
        if self_t.len() >= opts.max_samples {
            break;
        }
        let refs: Vec<&Sample> = chunk.iter().collect();
        let (correct, tensors) = model.teacher_forced(&refs, None, true)?;
        for (ok, (s, c)) in correct.into_iter().zip(tensors) {
            if ok && self_t.len() < opts.max_samples {
                self_t.push(s);
                cross_t.push(c);
            }
        }
    }
    if self_t.len() < opts.min_correct.max(1) {
        return Err(LabError::InsufficientCorrectSamples {
            got: self_t.len(),
            need: opts.min_correct.max(1),
        });
    }
    let mut sources = Vec::new();
    for &site in &opts.sites {
        let avg = match site {
            AttentionSite::SelfAttn => average_attention(&self_t)?,
            AttentionSite::Cross => average_attention(&cross_t)?,
        };
        sources.push((site, avg.heads));
    }
    let mut cal = Calibration::from_sources(sources, &opts.directions, opts.threshold_mult.map(T::of))?;
    cal.samples_used = self_t.len();
    cal.vertical_anchor = opts.vertical_anchor;
    Ok(cal)
}

/// Trains a model on `split` with calibrated biases added at every
/// attention site they cover. A fresh model is built from `model` unless a
/// warm-start model is given, in which case its weights and configuration
/// are reused with a new optimizer.
pub fn retrain_with_bias<T: Scalar>(
    model: ModelConfig,
    split: &DatasetSplit,
    bias: &dyn BiasProvider<T>,
    opts: &TrainOptions,
    warm: Option<Transformer<T>>,
) -> Result<(Trainer<T>, TrainOutcome)> {
    let net = match warm {
        Some(m) => m,
        None => Transformer::new(model)?,
    };
    let mut trainer = Trainer::new(net);
    let outcome = train_until(&mut trainer, &split.train, &split.validation, Some(bias), opts)?;
    Ok((trainer, outcome))
}
