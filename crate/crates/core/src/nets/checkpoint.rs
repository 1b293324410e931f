//! Parameter checkpoints: `<base>.bin` holds little-endian `f64` arrays back
//! to back, `<base>.manifest` lists each array's name, shape and byte offset
//! plus `meta` lines describing the architecture.

use std::collections::BTreeMap;
use std::fmt::Write as _;
use std::fs;
use std::path::{Path, PathBuf};

use super::bundle::{NetDims, NetOptions, NetworkBundle};
use crate::data::CoocAdjacency;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

const HEADER: &str = "crowding-checkpoint 1";
const ADJACENCY: &str = "adjacency.counts";

pub fn checkpoint_paths(base: &Path) -> (PathBuf, PathBuf) {
    (base.with_extension("bin"), base.with_extension("manifest"))
}

/// Writes the bundle. `extra` lands in the manifest as additional `meta`
/// lines and comes back from [`load_checkpoint`].
pub fn save_checkpoint(bundle: &NetworkBundle, base: &Path, extra: &[(&str, String)]) -> Result<()> {
    let (bin_path, manifest_path) = checkpoint_paths(base);
    let d = &bundle.dims;
    let o = &bundle.options;
    let mut meta: Vec<(String, String)> = vec![
        ("num_classes".into(), d.num_classes.to_string()),
        ("feature_dim".into(), d.feature_dim.to_string()),
        ("annotator_dim".into(), d.annotator_dim.to_string()),
        ("noise_dim".into(), d.noise_dim.to_string()),
        ("embed_dim".into(), d.embed_dim.to_string()),
        ("class_embed_dim".into(), d.class_embed_dim.to_string()),
        ("classifier_hidden".into(), d.classifier_hidden.to_string()),
        ("scorer_hidden_1".into(), d.scorer_hidden.0.to_string()),
        ("scorer_hidden_2".into(), d.scorer_hidden.1.to_string()),
        ("lca_enabled".into(), o.lca_enabled.to_string()),
        ("generator_uses_instance".into(), o.generator_uses_instance.to_string()),
        ("generator_uses_annotator".into(), o.generator_uses_annotator.to_string()),
        ("dropout".into(), format!("{:?}", o.dropout)),
    ];
    for (k, v) in extra {
        if k.contains(char::is_whitespace) || v.contains('\n') {
            return Err(Error::Checkpoint(format!("bad meta entry `{k}`")));
        }
        meta.push(((*k).to_string(), v.clone()));
    }

    let mut arrays: Vec<(&str, &Tensor)> = bundle
        .store
        .ids()
        .map(|id| (bundle.store.name(id), bundle.store.value(id)))
        .collect();
    if let Some(adj) = &bundle.adjacency {
        arrays.push((ADJACENCY, adj.counts()));
    }

    let mut manifest = format!("{HEADER}\n");
    for (k, v) in &meta {
        writeln!(manifest, "meta {k} {v}").expect("string write");
    }
    let mut bytes = Vec::new();
    for (name, t) in arrays {
        let shape: Vec<String> = t.shape().iter().map(usize::to_string).collect();
        writeln!(manifest, "array {name} {} {}", shape.join(","), bytes.len()).expect("string write");
        for v in t.data() {
            bytes.extend_from_slice(&v.to_le_bytes());
        }
    }
    fs::write(&bin_path, bytes).map_err(|e| Error::io(&bin_path, e))?;
    fs::write(&manifest_path, manifest).map_err(|e| Error::io(&manifest_path, e))?;
    Ok(())
}

fn meta_value<T: std::str::FromStr>(meta: &mut BTreeMap<String, String>, key: &str) -> Result<T> {
    let raw = meta
        .remove(key)
        .ok_or_else(|| Error::Checkpoint(format!("manifest lacks `{key}`")))?;
    raw.parse()
        .map_err(|_| Error::Checkpoint(format!("cannot parse `{raw}` for `{key}`")))
}

/// Restores a bundle bit-exactly. Returns the bundle and the `extra` meta
/// entries it was saved with.
pub fn load_checkpoint(base: &Path) -> Result<(NetworkBundle, BTreeMap<String, String>)> {
    let (bin_path, manifest_path) = checkpoint_paths(base);
    let manifest = fs::read_to_string(&manifest_path).map_err(|e| Error::io(&manifest_path, e))?;
    let bytes = fs::read(&bin_path).map_err(|e| Error::io(&bin_path, e))?;

    let mut lines = manifest.lines();
    if lines.next() != Some(HEADER) {
        return Err(Error::Checkpoint(format!(
            "{} is not a checkpoint manifest",
            manifest_path.display()
        )));
    }
    let mut meta = BTreeMap::new();
    let mut arrays: BTreeMap<String, Tensor> = BTreeMap::new();
    for line in lines {
        let mut parts = line.splitn(3, ' ');
        match (parts.next(), parts.next(), parts.next()) {
            (Some("meta"), Some(k), v) => {
                meta.insert(k.to_string(), v.unwrap_or("").to_string());
            }
            (Some("array"), Some(name), Some(rest)) => {
                let (shape, offset) = rest
                    .split_once(' ')
                    .ok_or_else(|| Error::Checkpoint(format!("malformed line `{line}`")))?;
                let shape: Vec<usize> = if shape.is_empty() {
                    Vec::new()
                } else {
                    shape
                        .split(',')
                        .map(|s| s.parse())
                        .collect::<std::result::Result<_, _>>()
                        .map_err(|_| Error::Checkpoint(format!("bad shape in `{line}`")))?
                };
                let offset: usize = offset
                    .parse()
                    .map_err(|_| Error::Checkpoint(format!("bad offset in `{line}`")))?;
                let len: usize = shape.iter().product();
                let end = offset + 8 * len;
                let raw = bytes.get(offset..end).ok_or_else(|| {
                    Error::Checkpoint(format!("array `{name}` runs past the end of the data file"))
                })?;
                let data = raw
                    .chunks_exact(8)
                    .map(|c| f64::from_le_bytes(c.try_into().expect("8-byte chunk")))
                    .collect();
                arrays.insert(name.to_string(), Tensor::new(shape, data)?);
            }
            _ if line.trim().is_empty() => {}
            _ => return Err(Error::Checkpoint(format!("malformed line `{line}`"))),
        }
    }

    let dims = NetDims {
        num_classes: meta_value(&mut meta, "num_classes")?,
        feature_dim: meta_value(&mut meta, "feature_dim")?,
        annotator_dim: meta_value(&mut meta, "annotator_dim")?,
        noise_dim: meta_value(&mut meta, "noise_dim")?,
        embed_dim: meta_value(&mut meta, "embed_dim")?,
        class_embed_dim: meta_value(&mut meta, "class_embed_dim")?,
        classifier_hidden: meta_value(&mut meta, "classifier_hidden")?,
        scorer_hidden: (
            meta_value(&mut meta, "scorer_hidden_1")?,
            meta_value(&mut meta, "scorer_hidden_2")?,
        ),
    };
    let options = NetOptions {
        lca_enabled: meta_value(&mut meta, "lca_enabled")?,
        generator_uses_instance: meta_value(&mut meta, "generator_uses_instance")?,
        generator_uses_annotator: meta_value(&mut meta, "generator_uses_annotator")?,
        dropout: meta_value(&mut meta, "dropout")?,
    };
    let adjacency = arrays.remove(ADJACENCY).map(CoocAdjacency::from_counts);
    let mut bundle = NetworkBundle::new(dims, options, adjacency, 0)?;
    let ids: Vec<_> = bundle.store.ids().collect();
    for id in ids {
        let name = bundle.store.name(id).to_string();
        let value = arrays
            .remove(&name)
            .ok_or_else(|| Error::Checkpoint(format!("missing array `{name}`")))?;
        if value.shape() != bundle.store.value(id).shape() {
            return Err(Error::Checkpoint(format!(
                "array `{name}` has shape {:?}, expected {:?}",
                value.shape(),
                bundle.store.value(id).shape()
            )));
        }
        bundle.store.set_value(id, value)?;
    }
    if let Some(name) = arrays.keys().next() {
        return Err(Error::Checkpoint(format!("unexpected array `{name}`")));
    }
    Ok((bundle, meta))
}
