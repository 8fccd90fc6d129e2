//! `key=value` text used for configs and checkpoint headers.

use std::collections::BTreeMap;
use std::str::FromStr;

use crate::error::{LabError, Result};

pub type KvMap = BTreeMap<String, String>;

/// Parses `key=value` lines. Blank lines and `#` comments are skipped.
pub fn parse(text: &str) -> Result<KvMap> {
    let mut map = KvMap::new();
    for (n, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let (k, v) = line.split_once('=').ok_or_else(|| LabError::Format {
            what: "key=value text",
            detail: format!("line {} has no '='", n + 1),
        })?;
        map.insert(k.trim().to_string(), v.trim().to_string());
    }
    Ok(map)
}

pub fn render(map: &KvMap) -> String {
    map.iter().map(|(k, v)| format!("{k}={v}\n")).collect()
}

pub fn get<V: FromStr>(map: &KvMap, key: &str) -> Result<Option<V>> {
    map.get(key)
        .map(|v| {
            v.parse::<V>()
                .map_err(|_| LabError::Config(format!("bad value {v:?} for {key}")))
        })
        .transpose()
}

pub fn require<V: FromStr>(map: &KvMap, key: &str) -> Result<V> {
    get(map, key)?.ok_or_else(|| LabError::Config(format!("missing key {key}")))
}
