//! On-disk artifacts: output directory, bias-set directories, heatmaps.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::Array2;

use crate::error::{LabError, Result};
use crate::kv::{self, KvMap};
use crate::matrix_io;
use crate::transformer::{AttentionSite, BiasSet};
use crate::Scalar;

pub const OUT_ENV: &str = "ABC_LAB_OUT";
pub const DEFAULT_OUT: &str = "abc-lab-out";

/// `ABC_LAB_OUT` if set, else `requested`, else the default directory.
pub fn resolve_out_dir(requested: Option<&Path>) -> PathBuf {
    match std::env::var_os(OUT_ENV) {
        Some(v) if !v.is_empty() => PathBuf::from(v),
        _ => requested.map_or_else(|| PathBuf::from(DEFAULT_OUT), Path::to_path_buf),
    }
}

fn site_files<T>(bias: &BiasSet<T>) -> Vec<(&'static str, &Vec<Array2<T>>)> {
    let mut v = Vec::new();
    if let Some(m) = &bias.self_attn {
        v.push((AttentionSite::SelfAttn.name(), m));
    }
    if let Some(m) = &bias.cross {
        v.push((AttentionSite::Cross.name(), m));
    }
    if let Some(m) = &bias.encoder {
        v.push(("encoder", m));
    }
    v
}

/// Writes `meta` plus `<site>_h<k>.csv` per head. Extra metadata is merged
/// into `meta`.
pub fn save_bias_set<T: Scalar>(bias: &BiasSet<T>, dir: &Path, extra: &KvMap) -> Result<()> {
    fs::create_dir_all(dir)?;
    let mut meta = extra.clone();
    meta.insert("kind".into(), "bias_set".into());
    meta.insert("heads".into(), bias.heads.to_string());
    let sites = site_files(bias);
    meta.insert(
        "sites".into(),
        sites.iter().map(|(n, _)| *n).collect::<Vec<_>>().join(","),
    );
    for (name, mats) in sites {
        let (r, c) = mats.first().map_or((0, 0), |m| m.dim());
        meta.insert(format!("{name}.dims"), format!("{r}x{c}"));
        for (h, m) in mats.iter().enumerate() {
            matrix_io::save_csv(m, &dir.join(format!("{name}_h{h}.csv")))?;
        }
    }
    fs::write(dir.join("meta"), kv::render(&meta))?;
    Ok(())
}

pub fn load_bias_set<T: Scalar>(dir: &Path) -> Result<BiasSet<T>> {
    let meta = kv::parse(&fs::read_to_string(dir.join("meta"))?)?;
    let heads: usize = kv::require(&meta, "heads")?;
    let mut set = BiasSet::empty(heads);
    let sites: String = kv::get(&meta, "sites")?.unwrap_or_default();
    for name in sites.split(',').filter(|s| !s.is_empty()) {
        let mats = (0..heads)
            .map(|h| matrix_io::load_csv(&dir.join(format!("{name}_h{h}.csv"))))
            .collect::<Result<Vec<_>>>()?;
        match name {
            "encoder" => set.encoder = Some(mats),
            other => set.set_site(AttentionSite::parse(other)?, mats)?,
        }
    }
    Ok(set)
}

/// Per-head grayscale PGM plus CSV: `<prefix>_h<k>.pgm` and `.csv`.
pub fn export_heatmaps<T: Scalar>(mats: &[Array2<T>], dir: &Path, prefix: &str) -> Result<Vec<PathBuf>> {
    if mats.is_empty() {
        return Err(LabError::EmptySet);
    }
    fs::create_dir_all(dir)?;
    let mut written = Vec::new();
    for (h, m) in mats.iter().enumerate() {
        let pgm = dir.join(format!("{prefix}_h{h}.pgm"));
        let csv = dir.join(format!("{prefix}_h{h}.csv"));
        matrix_io::save_pgm(m, &pgm)?;
        matrix_io::save_csv(m, &csv)?;
        written.push(pgm);
        written.push(csv);
    }
    Ok(written)
}

/// Heatmaps for every site of a bias set.
pub fn export_bias_heatmaps<T: Scalar>(bias: &BiasSet<T>, dir: &Path) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for (name, mats) in site_files(bias) {
        out.extend(export_heatmaps(mats, dir, &format!("bias_{name}"))?);
    }
    Ok(out)
}
