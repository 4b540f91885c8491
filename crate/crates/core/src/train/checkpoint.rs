//! Checkpoint directories and the loss log.
//!
//! A checkpoint holds `model.json`, `params.bin` (every parameter as a
//! `TPN1` record, concatenated in registry order) and `manifest.json`
//! listing each record's name, byte offset and shape.

use super::run::StepLog;
use crate::error::{Error, Result};
use crate::model::{Model, ModelSpec};
use crate::params::ParamStore;
use crate::tensor::io::{read_tensor, record_len, write_tensor};
use crate::tensor::{Scalar, Shape};
use serde::{Deserialize, Serialize};
use std::fs::{self, File};
use std::io::{BufReader, BufWriter, Seek, SeekFrom, Write};
use std::path::Path;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ManifestEntry {
    pub name: String,
    pub offset: u64,
    pub shape: [usize; 4],
}

pub fn save_checkpoint<T: Scalar>(dir: &Path, spec: &ModelSpec, store: &ParamStore<T>) -> Result<()> {
    fs::create_dir_all(dir)?;
    fs::write(dir.join("model.json"), spec.to_json())?;
    let mut out = BufWriter::new(File::create(dir.join("params.bin"))?);
    let mut manifest = Vec::with_capacity(store.len());
    let mut offset = 0u64;
    for (_, p) in store.iter() {
        write_tensor(&mut out, &p.tensor)?;
        manifest.push(ManifestEntry {
            name: p.name.clone(),
            offset,
            shape: p.tensor.shape().dims(),
        });
        offset += record_len(T::DTYPE, p.tensor.numel()) as u64;
    }
    out.flush()?;
    fs::write(dir.join("manifest.json"), serde_json::to_string_pretty(&manifest)?)?;
    Ok(())
}

/// Rebuilds the model from `model.json` and reads every parameter it
/// registers, cast to `T`.
pub fn load_checkpoint<T: Scalar>(dir: &Path) -> Result<(Model, ParamStore<T>)> {
    let spec = ModelSpec::load(&dir.join("model.json"))?;
    let model = Model::build(&spec)?;
    let manifest: Vec<ManifestEntry> = serde_json::from_str(&fs::read_to_string(dir.join("manifest.json"))?)?;
    let mut file = BufReader::new(File::open(dir.join("params.bin"))?);
    let mut store = model.init_params::<T>(0);
    for desc in model.registry.descs() {
        let entry = manifest
            .iter()
            .find(|e| e.name == desc.name)
            .ok_or_else(|| Error::Format(format!("checkpoint lacks parameter `{}`", desc.name)))?;
        file.seek(SeekFrom::Start(entry.offset))?;
        let t = read_tensor::<T, _>(&mut file)?;
        if t.shape() != desc.shape || Shape::from_dims(&entry.shape) != Some(desc.shape) {
            return Err(Error::Format(format!(
                "parameter `{}` has shape {} but the model expects {}",
                desc.name,
                t.shape(),
                desc.shape
            )));
        }
        let id = store.id(&desc.name).expect("registered name");
        store.get_mut(id).tensor = t;
    }
    Ok((model, store))
}

/// Writes `step,level,cls,box,total`, one row per level plus a row with
/// level `all` holding the step totals.
pub fn write_loss_csv<W: Write>(w: W, history: &[StepLog]) -> Result<()> {
    let mut wr = csv::Writer::from_writer(w);
    wr.write_record(["step", "level", "cls", "box", "total"])?;
    for s in history {
        for l in &s.loss.levels {
            wr.write_record([
                s.step.to_string(),
                l.level.to_string(),
                format!("{:.9e}", l.cls),
                format!("{:.9e}", l.box_loss),
                format!("{:.9e}", l.cls + l.box_loss),
            ])?;
        }
        wr.write_record([
            s.step.to_string(),
            "all".to_string(),
            format!("{:.9e}", s.loss.cls()),
            format!("{:.9e}", s.loss.box_loss()),
            format!("{:.9e}", s.loss.total),
        ])?;
    }
    wr.flush()?;
    Ok(())
}
