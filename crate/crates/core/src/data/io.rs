//! CSV ingestion and canonical serialization of crowd datasets.
//!
//! A dataset directory holds:
//!
//! | file              | header                            | required |
//! |-------------------|-----------------------------------|----------|
//! | `meta.txt`        | `num_classes = C`, `num_annotators = R` | yes |
//! | `features.csv`    | `f0,f1,..`                        | yes      |
//! | `annotations.csv` | `instance_id,annotator_id,label`  | yes      |
//! | `annotators.csv`  | `f0,f1,..`                        | no       |
//! | `truth.csv`       | `instance_id,label`               | no       |
//! | `splits.csv`      | `instance_id,split`               | no       |
//!
//! Class and row indices are 0-based. Writers emit LF line endings and the
//! shortest round-trip decimal form of every float, so loading and saving a
//! canonical file reproduces it byte for byte.

use std::fs;
use std::io::Write;
use std::path::{Path, PathBuf};

use super::dataset::{Annotation, CrowdDataset, Split};
use crate::config::KvFile;
use crate::diffcore::Tensor;
use crate::error::{Error, Result};

pub const META_FILE: &str = "meta.txt";
pub const FEATURES_FILE: &str = "features.csv";
pub const ANNOTATORS_FILE: &str = "annotators.csv";
pub const ANNOTATIONS_FILE: &str = "annotations.csv";
pub const TRUTH_FILE: &str = "truth.csv";
pub const SPLITS_FILE: &str = "splits.csv";

/// Paths of the files making up one dataset.
#[derive(Debug, Clone)]
pub struct DatasetFiles {
    pub features: PathBuf,
    pub annotators: Option<PathBuf>,
    pub annotations: PathBuf,
    pub truth: Option<PathBuf>,
    pub splits: Option<PathBuf>,
}

impl DatasetFiles {
    /// Standard file names inside `dir`; optional files are included only
    /// when present.
    pub fn in_dir(dir: &Path) -> Self {
        let opt = |name: &str| {
            let p = dir.join(name);
            p.exists().then_some(p)
        };
        Self {
            features: dir.join(FEATURES_FILE),
            annotators: opt(ANNOTATORS_FILE),
            annotations: dir.join(ANNOTATIONS_FILE),
            truth: opt(TRUTH_FILE),
            splits: opt(SPLITS_FILE),
        }
    }

    /// Every file that exists, in a fixed order (for digests).
    pub fn existing(&self) -> Vec<PathBuf> {
        let mut out = vec![self.features.clone(), self.annotations.clone()];
        out.extend(self.annotators.clone());
        out.extend(self.truth.clone());
        out.extend(self.splits.clone());
        out
    }
}

/// Loads a dataset. `num_annotators` defaults to the annotator feature row
/// count, or to the largest annotator id plus one.
pub fn load_dataset(
    files: &DatasetFiles,
    num_classes: usize,
    num_annotators: Option<usize>,
) -> Result<CrowdDataset> {
    let instances = read_features(&files.features)?;
    let annotators = files.annotators.as_deref().map(read_features).transpose()?;
    let annotations = read_annotations(&files.annotations, num_classes)?;
    let num_annotators = match (num_annotators, &annotators) {
        (Some(r), _) => r,
        (None, Some(a)) => a.rows(),
        (None, None) => annotations.iter().map(|a| a.annotator + 1).max().unwrap_or(0),
    };
    let truth = files
        .truth
        .as_deref()
        .map(|p| read_truth(p, instances.rows(), num_classes))
        .transpose()?;
    let splits = files
        .splits
        .as_deref()
        .map(|p| read_splits(p, instances.rows()))
        .transpose()?;
    CrowdDataset::new(
        num_classes,
        instances,
        annotators,
        num_annotators,
        annotations,
        truth,
        splits,
    )
}

/// Loads a dataset directory, taking class and annotator counts from
/// `meta.txt`.
pub fn load_dataset_dir(dir: &Path) -> Result<CrowdDataset> {
    let meta_path = dir.join(META_FILE);
    let text = fs::read_to_string(&meta_path).map_err(|e| Error::io(&meta_path, e))?;
    let mut meta = KvFile::parse(&text)?;
    let num_classes: usize = meta
        .take_parsed("num_classes")?
        .ok_or_else(|| Error::Parse {
            file: meta_path.display().to_string(),
            detail: "missing num_classes".into(),
        })?;
    let num_annotators: Option<usize> = meta.take_parsed("num_annotators")?;
    meta.finish()?;
    load_dataset(&DatasetFiles::in_dir(dir), num_classes, num_annotators)
}

/// Writes the dataset in canonical form into `dir` (created if missing).
pub fn save_dataset_dir(ds: &CrowdDataset, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    write_file(
        &dir.join(META_FILE),
        &format!(
            "num_classes = {}\nnum_annotators = {}\n",
            ds.num_classes(),
            ds.num_annotators()
        ),
    )?;
    write_file(&dir.join(FEATURES_FILE), &features_csv(ds.instance_features()))?;
    if !ds.has_one_hot_annotators() {
        write_file(
            &dir.join(ANNOTATORS_FILE),
            &features_csv(ds.annotator_features()),
        )?;
    }
    write_file(&dir.join(ANNOTATIONS_FILE), &annotations_csv(ds.annotations()))?;
    if let Some(truth) = ds.ground_truth() {
        write_file(&dir.join(TRUTH_FILE), &truth_csv(truth))?;
    }
    if ds.splits().iter().any(|&s| s != Split::Train) {
        write_file(&dir.join(SPLITS_FILE), &splits_csv(ds.splits()))?;
    }
    Ok(())
}

pub(crate) fn write_file(path: &Path, contents: &str) -> Result<()> {
    let mut f = fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(contents.as_bytes())
        .map_err(|e| Error::io(path, e))
}

pub fn features_csv(t: &Tensor) -> String {
    let mut out = String::new();
    let header: Vec<String> = (0..t.cols()).map(|j| format!("f{j}")).collect();
    out.push_str(&header.join(","));
    out.push('\n');
    for i in 0..t.rows() {
        let row: Vec<String> = t.row(i).iter().map(|v| format!("{v:?}")).collect();
        out.push_str(&row.join(","));
        out.push('\n');
    }
    out
}

pub fn annotations_csv(annotations: &[Annotation]) -> String {
    let mut sorted = annotations.to_vec();
    sorted.sort_unstable();
    let mut out = String::from("instance_id,annotator_id,label\n");
    for a in sorted {
        out.push_str(&format!("{},{},{}\n", a.instance, a.annotator, a.label));
    }
    out
}

pub fn truth_csv(truth: &[usize]) -> String {
    let mut out = String::from("instance_id,label\n");
    for (i, z) in truth.iter().enumerate() {
        out.push_str(&format!("{i},{z}\n"));
    }
    out
}

pub fn splits_csv(splits: &[Split]) -> String {
    let mut out = String::from("instance_id,split\n");
    for (i, s) in splits.iter().enumerate() {
        out.push_str(&format!("{i},{}\n", s.as_str()));
    }
    out
}

fn reader(path: &Path) -> Result<csv::Reader<fs::File>> {
    csv::ReaderBuilder::new()
        .has_headers(true)
        .flexible(true)
        .trim(csv::Trim::All)
        .from_path(path)
        .map_err(|e| csv_err(path, e))
}

fn csv_err(path: &Path, e: csv::Error) -> Error {
    match e.into_kind() {
        csv::ErrorKind::Io(io) => Error::io(path, io),
        other => Error::Parse {
            file: path.display().to_string(),
            detail: format!("{other:?}"),
        },
    }
}

fn parse_err(path: &Path, line: usize, detail: impl std::fmt::Display) -> Error {
    Error::Parse {
        file: path.display().to_string(),
        detail: format!("line {line}: {detail}"),
    }
}

fn check_header(path: &Path, got: &csv::StringRecord, expected: &[&str]) -> Result<()> {
    let got: Vec<&str> = got.iter().collect();
    if got != expected {
        return Err(parse_err(
            path,
            1,
            format!("expected header {expected:?}, found {got:?}"),
        ));
    }
    Ok(())
}

/// Reads a feature matrix with header `f0..f{d-1}`.
pub fn read_features(path: &Path) -> Result<Tensor> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    let d = header.len();
    let expected: Vec<String> = (0..d).map(|j| format!("f{j}")).collect();
    let expected_refs: Vec<&str> = expected.iter().map(String::as_str).collect();
    check_header(path, &header, &expected_refs)?;
    let mut data = Vec::new();
    let mut rows = 0;
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != d {
            return Err(Error::RaggedFeatures {
                file: path.display().to_string(),
                line,
                expected: d,
                found: rec.len(),
            });
        }
        for field in rec.iter() {
            let v: f64 = field
                .parse()
                .map_err(|_| parse_err(path, line, format!("`{field}` is not a number")))?;
            if !v.is_finite() {
                return Err(parse_err(path, line, format!("non-finite value `{field}`")));
            }
            data.push(v);
        }
        rows += 1;
    }
    Tensor::matrix(rows, d, data)
}

fn parse_index(path: &Path, line: usize, field: &str) -> Result<i64> {
    field
        .parse::<i64>()
        .map_err(|_| parse_err(path, line, format!("`{field}` is not an integer")))
}

fn parse_id(path: &Path, line: usize, field: &str) -> Result<usize> {
    let v = parse_index(path, line, field)?;
    usize::try_from(v).map_err(|_| parse_err(path, line, format!("negative id {v}")))
}

fn check_label(path: &Path, line: usize, label: i64, num_classes: usize) -> Result<usize> {
    if label < 0 || label as usize >= num_classes {
        return Err(Error::LabelOutOfRange {
            label,
            num_classes,
            line,
            file: path.display().to_string(),
        });
    }
    Ok(label as usize)
}

pub fn read_annotations(path: &Path, num_classes: usize) -> Result<Vec<Annotation>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    check_header(path, &header, &["instance_id", "annotator_id", "label"])?;
    let mut out = Vec::new();
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 3 {
            return Err(parse_err(path, line, "expected 3 fields"));
        }
        let instance = parse_id(path, line, &rec[0])?;
        let annotator = parse_id(path, line, &rec[1])?;
        let label = check_label(path, line, parse_index(path, line, &rec[2])?, num_classes)?;
        out.push(Annotation {
            instance,
            annotator,
            label,
        });
    }
    Ok(out)
}

pub fn read_truth(path: &Path, num_instances: usize, num_classes: usize) -> Result<Vec<usize>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    check_header(path, &header, &["instance_id", "label"])?;
    let mut truth = vec![None; num_instances];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        if rec.len() != 2 {
            return Err(parse_err(path, line, "expected 2 fields"));
        }
        let n = parse_id(path, line, &rec[0])?;
        if n >= num_instances {
            return Err(parse_err(path, line, format!("instance {n} out of range")));
        }
        let z = check_label(path, line, parse_index(path, line, &rec[1])?, num_classes)?;
        truth[n] = Some(z);
    }
    truth
        .into_iter()
        .enumerate()
        .map(|(n, z)| z.ok_or_else(|| parse_err(path, 0, format!("no label for instance {n}"))))
        .collect()
}

pub fn read_splits(path: &Path, num_instances: usize) -> Result<Vec<Split>> {
    let mut rdr = reader(path)?;
    let header = rdr.headers().map_err(|e| csv_err(path, e))?.clone();
    check_header(path, &header, &["instance_id", "split"])?;
    let mut splits = vec![None; num_instances];
    for (i, rec) in rdr.records().enumerate() {
        let line = i + 2;
        let rec = rec.map_err(|e| csv_err(path, e))?;
        let n = parse_id(path, line, &rec[0])?;
        if n >= num_instances {
            return Err(parse_err(path, line, format!("instance {n} out of range")));
        }
        let s = Split::parse(&rec[1])
            .ok_or_else(|| parse_err(path, line, format!("unknown split `{}`", &rec[1])))?;
        splits[n] = Some(s);
    }
    splits
        .into_iter()
        .enumerate()
        .map(|(n, s)| s.ok_or_else(|| parse_err(path, 0, format!("no split for instance {n}"))))
        .collect()
}
