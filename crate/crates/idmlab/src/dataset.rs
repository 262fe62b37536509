//! Dataset-level generation and archive layout: episodes on disk next to an
//! `episodes.csv` train/eval index and the generating config echo.

use std::path::Path;

use crate::config::{save_config, LabConfig};
use crate::error::{Error, Result};
use crate::evalbench::{load_episode_index, save_episode_index, DataSplit, IndexEntry};
use crate::synth::{generate_episode, load_episode, save_episode, EpisodeRecord, TruncationRegime};

fn mix_seed(base: u64, i: u64) -> u64 {
    let mut x = base.wrapping_mul(0x9E37_79B9_7F4A_7C15).wrapping_add(i);
    x ^= x >> 31;
    x.wrapping_mul(0x94D0_49BB_1331_11EB)
}

/// Bresenham-style even interleave: true for round(n * fraction) of the
/// first n indices, spread uniformly.
fn interleaved(i: usize, fraction: f64) -> bool {
    ((i + 1) as f64 * fraction).floor() > (i as f64 * fraction).floor()
}

/// Generate `n` episodes with light/heavy camera regimes interleaved and a
/// deterministic train/eval assignment.
pub fn generate_dataset(
    config: &LabConfig,
    n: usize,
    seed: u64,
) -> Result<Vec<(EpisodeRecord, DataSplit)>> {
    config.validate()?;
    if n == 0 {
        return Err(Error::Param("episode count must be positive".into()));
    }
    let n_train = (n as f64 * config.dataset.train_fraction).round() as usize;
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let regime = if interleaved(i, config.dataset.light_fraction) {
            TruncationRegime::Light
        } else {
            TruncationRegime::Heavy
        };
        let split = if i < n_train { DataSplit::Train } else { DataSplit::Eval };
        let id = format!("ep_{i:04}");
        let record = generate_episode(&config.world, regime, &id, mix_seed(seed, i as u64))?;
        out.push((record, split));
    }
    Ok(out)
}

/// Write episodes, the split index, and the generating config into `dir`.
pub fn save_dataset(
    records: &[(EpisodeRecord, DataSplit)],
    config: &LabConfig,
    dir: &Path,
) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (record, _) in records {
        save_episode(record, dir)?;
    }
    let entries: Vec<IndexEntry> = records
        .iter()
        .map(|(r, s)| IndexEntry { episode_id: r.episode_id.clone(), split: *s })
        .collect();
    save_episode_index(&entries, &dir.join("episodes.csv"))?;
    save_config(config, &dir.join("config.json"))?;
    Ok(())
}

/// Load the config echo of a dataset directory.
pub fn load_dataset_config(dir: &Path) -> Result<LabConfig> {
    crate::config::load_config(&dir.join("config.json"))
}

/// Load every episode of one split, in index order.
pub fn load_split(dir: &Path, config: &LabConfig, split: DataSplit) -> Result<Vec<EpisodeRecord>> {
    let entries = load_episode_index(&dir.join("episodes.csv"))?;
    entries
        .iter()
        .filter(|e| e.split == split)
        .map(|e| load_episode(dir, &e.episode_id, &config.world))
        .collect()
}
