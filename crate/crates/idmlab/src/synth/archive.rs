//! Episode archive: one directory per episode holding `frames.fmap` (u8),
//! `masks.fmap` (u8), `actions.fmap` (f32) and `meta.json`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::action::Action;
use crate::encoder::fmap::{load_fmap, save_fmap, Fmap, FmapData};
use crate::error::{Error, Result};
use crate::image::Image;
use crate::masking::{MaskSource, RobotMask};
use crate::synth::{CameraCrop, EpisodeRecord, TruncationRegime, TruncationSplit, WorldConfig};

#[derive(Debug, Serialize, Deserialize)]
struct EpisodeMeta {
    episode_id: String,
    seed: u64,
    split: TruncationSplit,
    regime_target: TruncationRegime,
    occupancy: Vec<f64>,
    occupancy_warn: bool,
    camera: CameraCrop,
}

pub fn episode_dir(root: &Path, episode_id: &str) -> PathBuf {
    root.join(episode_id)
}

pub fn save_episode(record: &EpisodeRecord, root: &Path) -> Result<()> {
    record.verify()?;
    let dir = episode_dir(root, &record.episode_id);
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;

    let t = record.len();
    let (h, w) = (record.frames[0].height(), record.frames[0].width());
    let mut frame_bytes = Vec::with_capacity(t * 3 * h * w);
    for f in &record.frames {
        frame_bytes.extend_from_slice(f.data());
    }
    save_fmap(
        &Fmap::new(vec![t as u32, 3, h as u32, w as u32], FmapData::U8(frame_bytes))?,
        &dir.join("frames.fmap"),
    )?;

    let mut mask_bytes = Vec::with_capacity(t * h * w);
    for m in &record.masks {
        mask_bytes.extend_from_slice(m.grid());
    }
    save_fmap(
        &Fmap::new(vec![t as u32, h as u32, w as u32], FmapData::U8(mask_bytes))?,
        &dir.join("masks.fmap"),
    )?;

    let d = record.actions[0].dim();
    let mut action_vals = Vec::with_capacity(t * d);
    for a in &record.actions {
        action_vals.extend(a.values.iter().map(|&v| v as f32));
    }
    save_fmap(
        &Fmap::new(vec![t as u32, d as u32], FmapData::F32(action_vals))?,
        &dir.join("actions.fmap"),
    )?;

    let meta = EpisodeMeta {
        episode_id: record.episode_id.clone(),
        seed: record.seed,
        split: record.split,
        regime_target: record.regime_target,
        occupancy: record.occupancy.clone(),
        occupancy_warn: record.occupancy_warn,
        camera: record.camera.clone(),
    };
    let json = serde_json::to_string_pretty(&meta)
        .map_err(|e| Error::Data(format!("meta encode: {e}")))?;
    let meta_path = dir.join("meta.json");
    fs::write(&meta_path, json).map_err(|e| Error::io(&meta_path, e))?;
    Ok(())
}

pub fn load_episode(root: &Path, episode_id: &str, world: &WorldConfig) -> Result<EpisodeRecord> {
    let dir = episode_dir(root, episode_id);
    let meta_path = dir.join("meta.json");
    let meta_json = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let meta: EpisodeMeta = serde_json::from_str(&meta_json)
        .map_err(|e| Error::Data(format!("{}: {e}", meta_path.display())))?;
    if meta.episode_id != episode_id {
        return Err(Error::Data(format!(
            "episode dir {episode_id} holds meta for {}",
            meta.episode_id
        )));
    }

    let frames_fm = load_fmap(&dir.join("frames.fmap"))?;
    let masks_fm = load_fmap(&dir.join("masks.fmap"))?;
    let actions_fm = load_fmap(&dir.join("actions.fmap"))?;

    let fshape = frames_fm.shape_usize();
    if fshape.len() != 4 || fshape[1] != 3 {
        return Err(Error::Data(format!("frames.fmap has shape {fshape:?}, expected [T,3,H,W]")));
    }
    let (t, h, w) = (fshape[0], fshape[2], fshape[3]);
    let frame_bytes = match &frames_fm.data {
        FmapData::U8(b) => b,
        _ => return Err(Error::Data("frames.fmap must be u8".into())),
    };
    let frames: Vec<Image> = (0..t)
        .map(|i| Image::from_data(h, w, frame_bytes[i * 3 * h * w..(i + 1) * 3 * h * w].to_vec()))
        .collect::<Result<_>>()?;

    let mshape = masks_fm.shape_usize();
    if mshape != [t, h, w] {
        return Err(Error::Data(format!("masks.fmap has shape {mshape:?}, expected [{t},{h},{w}]")));
    }
    let mask_bytes = match &masks_fm.data {
        FmapData::U8(b) => b,
        _ => return Err(Error::Data("masks.fmap must be u8".into())),
    };
    let masks: Vec<RobotMask> = (0..t)
        .map(|i| {
            RobotMask::new(h, w, mask_bytes[i * h * w..(i + 1) * h * w].to_vec(), MaskSource::GroundTruth)
        })
        .collect::<Result<_>>()?;

    let ashape = actions_fm.shape_usize();
    if ashape.len() != 2 || ashape[0] != t {
        return Err(Error::Data(format!("actions.fmap has shape {ashape:?}, expected [{t},D]")));
    }
    let d = ashape[1];
    let kinds = world.arm.dim_kinds();
    if kinds.len() != d {
        return Err(Error::Data(format!(
            "actions.fmap dimension {d} does not match configured action dim {}",
            kinds.len()
        )));
    }
    let action_vals = actions_fm.as_f64();
    let actions: Vec<Action> = (0..t)
        .map(|i| Action::raw(action_vals[i * d..(i + 1) * d].to_vec(), kinds.clone()))
        .collect::<Result<_>>()?;

    let record = EpisodeRecord {
        episode_id: meta.episode_id,
        seed: meta.seed,
        frames,
        masks,
        actions,
        occupancy: meta.occupancy,
        split: meta.split,
        occupancy_warn: meta.occupancy_warn,
        camera: meta.camera,
        regime_target: meta.regime_target,
    };
    record.verify()?;
    Ok(record)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::synth::generate_episode;

    #[test]
    fn archive_round_trip_preserves_everything() {
        let world = WorldConfig::default();
        let rec = generate_episode(&world, TruncationRegime::Light, "ep_rt", 5).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_episode(&rec, dir.path()).unwrap();
        let back = load_episode(dir.path(), "ep_rt", &world).unwrap();
        assert_eq!(back, rec);
    }

    #[test]
    fn loading_missing_episode_is_a_data_or_io_error() {
        let world = WorldConfig::default();
        let dir = tempfile::tempdir().unwrap();
        let err = load_episode(dir.path(), "nope", &world).unwrap_err();
        assert_eq!(err.exit_code(), 3);
    }

    #[test]
    fn corrupted_masks_shape_is_rejected() {
        let world = WorldConfig::default();
        let rec = generate_episode(&world, TruncationRegime::Light, "ep_bad", 6).unwrap();
        let dir = tempfile::tempdir().unwrap();
        save_episode(&rec, dir.path()).unwrap();
        // Overwrite masks with a wrong-shape tensor.
        let path = dir.path().join("ep_bad").join("masks.fmap");
        save_fmap(&Fmap::new(vec![2, 2], FmapData::U8(vec![0, 1, 1, 0])).unwrap(), &path).unwrap();
        assert!(matches!(load_episode(dir.path(), "ep_bad", &world), Err(Error::Data(_))));
    }
}
