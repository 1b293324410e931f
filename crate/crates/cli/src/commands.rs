use std::fs;
use std::path::Path;

use crowding_core::config::{render_kv, KvFile};
use crowding_core::data::io::META_FILE;
use crowding_core::data::{load_dataset_dir, save_dataset_dir, synthesize_dataset, CrowdDataset, DatasetFiles, SynthConfig};
use crowding_core::evalsuite::{run_ablation, sparsity_sweep, SweepTable};
use crowding_core::nets::{checkpoint_paths, load_checkpoint, save_checkpoint};
use crowding_core::trainer::{augmented_csv, export_augmented, split_accuracies, train_method, Method, TrainConfig, Variant};
use crowding_core::{Error, Result};
use serde::Serialize;

use crate::manifest::{create_dir, io, write, RunManifest};

fn read_kv(path: Option<&Path>) -> Result<KvFile> {
    match path {
        None => Ok(KvFile::default()),
        Some(p) => KvFile::parse(&fs::read_to_string(p).map_err(|e| io(p, e))?),
    }
}

fn with_config_input(manifest: &mut RunManifest, config: Option<&Path>) -> Result<()> {
    if let Some(p) = config {
        manifest.input(p)?;
    }
    Ok(())
}

fn dataset_inputs(manifest: &mut RunManifest, dir: &Path) -> Result<()> {
    manifest.input(&dir.join(META_FILE))?;
    for p in DatasetFiles::in_dir(dir).existing() {
        manifest.input(&p)?;
    }
    Ok(())
}

/// Training keys plus an optional `--seed` override.
fn train_config(kv: &mut KvFile, seed: Option<u64>) -> Result<TrainConfig> {
    let mut cfg = TrainConfig::from_kv(kv)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    Ok(cfg)
}

pub fn synth(config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut kv = read_kv(config)?;
    let key_seed: Option<u64> = kv.take_parsed("seed")?;
    let cfg = SynthConfig::from_kv(&mut kv)?;
    kv.finish()?;
    let seed = seed.or(key_seed).unwrap_or(0);

    create_dir(out)?;
    let resolved = format!("{}{}", cfg.to_kv(), render_kv(&[("seed", seed.to_string())]));
    let mut manifest = RunManifest::new("synth", seed, resolved);
    with_config_input(&mut manifest, config)?;
    let crowd = synthesize_dataset(&cfg, seed)?;
    save_dataset_dir(&crowd.dataset, out)?;
    manifest.output(&out.join(META_FILE));
    for p in DatasetFiles::in_dir(out).existing() {
        manifest.output(&p);
    }
    manifest.write(out)?;
    Ok(())
}

pub fn train(data: &Path, config: Option<&Path>, seed: Option<u64>, method: &str, out: &Path) -> Result<()> {
    let method: Method = method.parse()?;
    let mut kv = read_kv(config)?;
    let cfg = train_config(&mut kv, seed)?;
    kv.finish()?;
    let ds = load_dataset_dir(data)?;

    create_dir(out)?;
    let base = out.join("model");
    let (bin, ckpt_manifest) = checkpoint_paths(&base);
    let mut manifest = RunManifest::new("train", cfg.seed, cfg.to_kv());
    with_config_input(&mut manifest, config)?;
    dataset_inputs(&mut manifest, data)?;
    for p in [bin, ckpt_manifest, out.join("report.json"), out.join("report.csv")] {
        manifest.output(&p);
    }
    manifest.write(out)?;

    let outcome = train_method(method, &ds, &cfg)?;
    save_checkpoint(
        &outcome.bundle,
        &base,
        &[("method", outcome.report.method.clone()), ("seed", cfg.seed.to_string())],
    )?;
    write(&out.join("report.json"), &outcome.report.to_json()?)?;
    write(&out.join("report.csv"), &outcome.report.to_csv())?;
    let fmt = |v: Option<f64>| v.map_or("n/a".into(), |x| format!("{x:.4}"));
    println!(
        "{}: best epoch {}, validation {}, test {}",
        outcome.report.method,
        outcome.report.best_epoch,
        fmt(outcome.report.best_validation_accuracy),
        fmt(outcome.report.test_accuracy)
    );
    Ok(())
}

#[derive(Debug, Serialize)]
struct EvalMetrics {
    checkpoint: String,
    method: Option<String>,
    train_accuracy: Option<f64>,
    validation_accuracy: Option<f64>,
    test_accuracy: Option<f64>,
}

pub fn eval(checkpoint: &Path, data: &Path, out: Option<&Path>) -> Result<()> {
    let (bundle, meta) = load_checkpoint(checkpoint)?;
    let ds = load_dataset_dir(data)?;
    check_compatible(&ds, bundle.dims.num_classes, bundle.dims.feature_dim)?;
    let [train, val, test] = split_accuracies(&bundle, &ds)?;
    let metrics = EvalMetrics {
        checkpoint: checkpoint.display().to_string(),
        method: meta.get("method").cloned(),
        train_accuracy: train,
        validation_accuracy: val,
        test_accuracy: test,
    };
    let text = serde_json::to_string_pretty(&metrics).map_err(|e| Error::InvalidArgument(e.to_string()))?;
    match out {
        Some(p) => write(p, &text),
        None => {
            println!("{text}");
            Ok(())
        }
    }
}

fn check_compatible(ds: &CrowdDataset, classes: usize, features: usize) -> Result<()> {
    if ds.num_classes() != classes || ds.feature_dim() != features {
        return Err(Error::Checkpoint(format!(
            "checkpoint expects {classes} classes and {features} features, dataset has {} and {}",
            ds.num_classes(),
            ds.feature_dim()
        )));
    }
    Ok(())
}

fn seeds(kv: &mut KvFile, seed: Option<u64>) -> Result<Vec<u64>> {
    let listed: Vec<u64> = kv.take_list("seeds")?.unwrap_or_else(|| vec![0]);
    let seeds = seed.map_or(listed, |s| vec![s]);
    if seeds.is_empty() {
        return Err(Error::Config("`seeds` must not be empty".into()));
    }
    Ok(seeds)
}

fn write_table(table: &SweepTable, out: &Path) -> Result<()> {
    write(&out.join("sweep.csv"), &table.to_csv())?;
    write(&out.join("sweep.json"), &table.to_json()?)?;
    for (method, removed, mean, std) in table.summary() {
        println!("{method:<12} removed {removed:<4} test accuracy {mean:.4} ± {std:.4}");
    }
    Ok(())
}

/// Sweep keys (`fractions`, `methods`, `seeds`) followed by training keys.
pub fn sweep(data: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut kv = read_kv(config)?;
    let fractions: Vec<f64> = kv.take_list("fractions")?.unwrap_or_else(|| vec![0.0, 0.2, 0.4, 0.6]);
    let methods: Vec<Method> = kv
        .take_list("methods")?
        .unwrap_or_else(|| vec![Method::Crowding, Method::DlCl, Method::DlMv]);
    let seeds = seeds(&mut kv, seed)?;
    let cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    if let Some(f) = fractions.iter().find(|f| !(0.0..1.0).contains(*f)) {
        return Err(Error::Config(format!("removal fraction {f} outside [0, 1)")));
    }
    let ds = load_dataset_dir(data)?;

    create_dir(out)?;
    let join = |v: Vec<String>| v.join(", ");
    let resolved = format!(
        "{}{}",
        render_kv(&[
            ("fractions", join(fractions.iter().map(|f| f.to_string()).collect())),
            ("methods", join(methods.iter().map(|m| m.as_str().to_string()).collect())),
            ("seeds", join(seeds.iter().map(|s| s.to_string()).collect())),
        ]),
        cfg.to_kv()
    );
    let mut manifest = RunManifest::new("sweep", seeds[0], resolved);
    with_config_input(&mut manifest, config)?;
    dataset_inputs(&mut manifest, data)?;
    manifest.output(&out.join("sweep.csv"));
    manifest.output(&out.join("sweep.json"));
    manifest.write(out)?;

    let table = sparsity_sweep(&ds, &fractions, &methods, &seeds, &cfg)?;
    write_table(&table, out)
}

/// Ablation keys (`variants`, `seeds`) followed by training keys.
pub fn ablate(data: &Path, config: Option<&Path>, seed: Option<u64>, out: &Path) -> Result<()> {
    let mut kv = read_kv(config)?;
    let variants: Vec<Variant> = kv.take_list("variants")?.unwrap_or_else(|| Variant::ALL.to_vec());
    let seeds = seeds(&mut kv, seed)?;
    let cfg = TrainConfig::from_kv(&mut kv)?;
    kv.finish()?;
    let ds = load_dataset_dir(data)?;

    create_dir(out)?;
    let resolved = format!(
        "{}{}",
        render_kv(&[
            ("variants", variants.iter().map(|v| v.as_str()).collect::<Vec<_>>().join(", ")),
            ("seeds", seeds.iter().map(|s| s.to_string()).collect::<Vec<_>>().join(", ")),
        ]),
        cfg.to_kv()
    );
    let mut manifest = RunManifest::new("ablate", seeds[0], resolved);
    with_config_input(&mut manifest, config)?;
    dataset_inputs(&mut manifest, data)?;
    manifest.output(&out.join("sweep.csv"));
    manifest.output(&out.join("sweep.json"));
    manifest.write(out)?;

    let table = run_ablation(&ds, &variants, &cfg, &seeds)?;
    write_table(&table, out)
}

pub fn augment(data: &Path, checkpoint: &Path, out: &Path, seed: u64) -> Result<()> {
    let (bundle, _) = load_checkpoint(checkpoint)?;
    let ds = load_dataset_dir(data)?;
    check_compatible(&ds, bundle.dims.num_classes, bundle.dims.feature_dim)?;
    let rows = export_augmented(&ds, &bundle, seed)?;
    if let Some(parent) = out.parent().filter(|p| !p.as_os_str().is_empty()) {
        create_dir(parent)?;
    }
    write(out, &augmented_csv(&rows))?;
    let generated = rows.iter().filter(|r| !r.authentic).count();
    println!("{} annotations, {generated} generated", rows.len());
    Ok(())
}

pub fn key_reference() -> String {
    let mut s = String::from("# synth\n");
    s.push_str(&SynthConfig::default().to_kv());
    s.push_str("seed = 0\n\n# train, sweep, ablate\n");
    s.push_str(&TrainConfig::default().to_kv());
    s.push_str("# lr = <value> sets lr_classifier, lr_generator and lr_discriminator\n");
    s.push_str("# mu = <value> replaces mu_grid with a fixed multiplier\n");
    s.push_str("# variant = crowding | crowdg | crowding-u | crowding-i | crowding-r\n\n# sweep only\n");
    s.push_str("fractions = 0, 0.2, 0.4, 0.6\nmethods = crowding, dl-cl, dl-mv\nseeds = 0\n\n# ablate only\n");
    s.push_str("variants = crowdg, crowding-u, crowding-i, crowding-r, crowding\nseeds = 0\n");
    s
}
