//! Model container: a directory with `manifest.json` plus one `.fmap`
//! tensor per named parameter, norm statistics included. Round-trips are
//! bit-exact (f64 payloads).

use std::collections::BTreeMap;
use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::action::DimKind;
use crate::encoder::fmap::{load_fmap, save_fmap, Fmap, FmapData};
use crate::error::{Error, FmapError, Result};
use crate::param::{Param, ParamSet};
use crate::pipeline::{ModelParams, NormStats, PipelineConfig};

const MODEL_FORMAT_VERSION: u32 = 1;

#[derive(Debug, Serialize, Deserialize)]
struct TensorEntry {
    file: String,
    shape: Vec<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
struct Manifest {
    format_version: u32,
    config: PipelineConfig,
    dim_kinds: Vec<DimKind>,
    tensors: BTreeMap<String, TensorEntry>,
}

fn tensor_file_name(name: &str) -> String {
    format!("{}.fmap", name.replace('/', "_"))
}

pub fn save_model(params: &ModelParams, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let mut tensors = BTreeMap::new();
    let mut status = Ok(());

    let mut entries: Vec<(String, Param)> = Vec::new();
    params.visit(&mut |name, p| entries.push((name.to_string(), p.clone())));
    entries.push(("norm.mu".into(), Param::from_parts(params.norm.mu.clone(), vec![params.norm.mu.len()])));
    entries.push((
        "norm.sigma".into(),
        Param::from_parts(params.norm.sigma.clone(), vec![params.norm.sigma.len()]),
    ));

    for (name, p) in &entries {
        if status.is_err() {
            break;
        }
        let file = tensor_file_name(name);
        let shape_u32: Vec<u32> = p.shape().iter().map(|&e| e as u32).collect();
        let fm = match Fmap::new(shape_u32, FmapData::F64(p.data().to_vec())) {
            Ok(fm) => fm,
            Err(e) => {
                status = Err(e);
                break;
            }
        };
        if let Err(e) = save_fmap(&fm, &dir.join(&file)) {
            status = Err(e);
            break;
        }
        tensors.insert(name.clone(), TensorEntry { file, shape: p.shape().to_vec() });
    }
    status?;

    let manifest = Manifest {
        format_version: MODEL_FORMAT_VERSION,
        config: params.config.clone(),
        dim_kinds: params.dim_kinds.clone(),
        tensors,
    };
    let json = serde_json::to_string_pretty(&manifest)
        .map_err(|e| Error::Data(format!("manifest encode: {e}")))?;
    let path = dir.join("manifest.json");
    fs::write(&path, json).map_err(|e| Error::io(&path, e))?;
    Ok(())
}

pub fn load_model(dir: &Path) -> Result<ModelParams> {
    let path = dir.join("manifest.json");
    let json = fs::read_to_string(&path).map_err(|e| Error::io(&path, e))?;
    let manifest: Manifest =
        serde_json::from_str(&json).map_err(|e| Error::Data(format!("manifest parse: {e}")))?;
    if manifest.format_version != MODEL_FORMAT_VERSION {
        return Err(FmapError::BadVersion {
            found: manifest.format_version,
            expected: MODEL_FORMAT_VERSION,
        }
        .into());
    }

    let load_named = |name: &str| -> Result<Param> {
        let entry = manifest
            .tensors
            .get(name)
            .ok_or_else(|| Error::Data(format!("manifest missing tensor {name:?}")))?;
        let fm = load_fmap(&dir.join(&entry.file))?;
        let shape = fm.shape_usize();
        if shape != entry.shape {
            return Err(FmapError::ExtentOverflow(format!(
                "tensor {name:?}: manifest says {:?}, payload is {:?}",
                entry.shape, shape
            ))
            .into());
        }
        match fm.data {
            FmapData::F64(data) => Ok(Param::from_parts(data, shape)),
            _ => Err(Error::Data(format!("tensor {name:?} is not f64"))),
        }
    };

    // Build a skeleton with the right shapes, then fill every tensor.
    let mut params = ModelParams::init(&manifest.config, manifest.dim_kinds.clone(), 0)?;
    let mut status: Result<()> = Ok(());
    params.visit_mut(&mut |name, p| {
        if status.is_err() {
            return;
        }
        match load_named(name) {
            Ok(loaded) => {
                if loaded.shape() != p.shape() {
                    status = Err(Error::Data(format!(
                        "tensor {name:?} has shape {:?}, model expects {:?}",
                        loaded.shape(),
                        p.shape()
                    )));
                } else {
                    *p = loaded;
                }
            }
            Err(e) => status = Err(e),
        }
    });
    status?;

    let mu = load_named("norm.mu")?;
    let sigma = load_named("norm.sigma")?;
    params.norm = NormStats { mu: mu.data().to_vec(), sigma: sigma.data().to_vec() };
    if params.norm.mu.len() != params.action_dim() || params.norm.sigma.len() != params.action_dim()
    {
        return Err(Error::Data(format!(
            "norm stats dim {} does not match action dim {}",
            params.norm.mu.len(),
            params.action_dim()
        )));
    }
    Ok(params)
}
