use serde::{Deserialize, Serialize};

use crate::diffcore::Tensor;
use crate::error::{Error, Result};

/// One crowdsourced label: annotator `annotator` assigned `label` to
/// instance `instance`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub struct Annotation {
    pub instance: usize,
    pub annotator: usize,
    pub label: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Split {
    Train,
    Validation,
    Test,
}

impl Split {
    pub fn as_str(self) -> &'static str {
        match self {
            Split::Train => "train",
            Split::Validation => "validation",
            Split::Test => "test",
        }
    }

    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "train" => Some(Split::Train),
            "validation" | "val" => Some(Split::Validation),
            "test" => Some(Split::Test),
            _ => None,
        }
    }
}

/// Instances, annotators, sparse annotations and (optionally) hidden truth.
///
/// Annotations are kept sorted by `(instance, annotator)`.
#[derive(Debug, Clone, PartialEq)]
pub struct CrowdDataset {
    num_classes: usize,
    instances: Tensor,
    annotators: Tensor,
    one_hot_annotators: bool,
    annotations: Vec<Annotation>,
    ground_truth: Option<Vec<usize>>,
    splits: Vec<Split>,
    by_instance: Vec<Vec<usize>>,
}

impl CrowdDataset {
    /// Validates and assembles a dataset. `annotators = None` gives every
    /// annotator a one-hot encoding of length `num_annotators`.
    pub fn new(
        num_classes: usize,
        instances: Tensor,
        annotators: Option<Tensor>,
        num_annotators: usize,
        mut annotations: Vec<Annotation>,
        ground_truth: Option<Vec<usize>>,
        splits: Option<Vec<Split>>,
    ) -> Result<Self> {
        if num_classes < 2 {
            return Err(Error::InvalidArgument(format!(
                "need at least 2 classes, got {num_classes}"
            )));
        }
        if instances.shape().len() != 2 {
            return Err(Error::shape("CrowdDataset", "instance features must be a matrix"));
        }
        let n = instances.rows();
        let (annotators, one_hot) = match annotators {
            Some(a) => {
                if a.rows() != num_annotators || a.shape().len() != 2 {
                    return Err(Error::shape(
                        "CrowdDataset",
                        format!(
                            "{} annotator feature rows for {num_annotators} annotators",
                            a.rows()
                        ),
                    ));
                }
                (a, false)
            }
            None => (Tensor::eye(num_annotators), true),
        };
        if !instances.is_finite() || !annotators.is_finite() {
            return Err(Error::NonFinite("dataset features".into()));
        }
        let splits = splits.unwrap_or_else(|| vec![Split::Train; n]);
        if splits.len() != n {
            return Err(Error::shape(
                "CrowdDataset",
                format!("{} split tags for {n} instances", splits.len()),
            ));
        }
        if let Some(truth) = &ground_truth {
            if truth.len() != n {
                return Err(Error::shape(
                    "CrowdDataset",
                    format!("{} truth labels for {n} instances", truth.len()),
                ));
            }
            if let Some(&bad) = truth.iter().find(|&&z| z >= num_classes) {
                return Err(Error::LabelOutOfRange {
                    label: bad as i64,
                    num_classes,
                    line: 0,
                    file: "ground truth".into(),
                });
            }
        }
        annotations.sort_unstable();
        for w in annotations.windows(2) {
            if w[0].instance == w[1].instance && w[0].annotator == w[1].annotator {
                return Err(Error::DuplicateAnnotation {
                    instance: w[0].instance,
                    annotator: w[0].annotator,
                });
            }
        }
        let mut by_instance = vec![Vec::new(); n];
        for (i, a) in annotations.iter().enumerate() {
            if a.instance >= n || a.annotator >= num_annotators {
                return Err(Error::Parse {
                    file: "annotations".into(),
                    detail: format!(
                        "annotation ({}, {}) references a missing instance or annotator",
                        a.instance, a.annotator
                    ),
                });
            }
            if a.label >= num_classes {
                return Err(Error::LabelOutOfRange {
                    label: a.label as i64,
                    num_classes,
                    line: 0,
                    file: "annotations".into(),
                });
            }
            by_instance[a.instance].push(i);
        }
        if let Some(n) = (0..n).find(|&i| splits[i] == Split::Train && by_instance[i].is_empty()) {
            return Err(Error::UnannotatedInstance(n));
        }
        Ok(Self {
            num_classes,
            instances,
            annotators,
            one_hot_annotators: one_hot,
            annotations,
            ground_truth,
            splits,
            by_instance,
        })
    }

    pub fn num_classes(&self) -> usize {
        self.num_classes
    }

    pub fn num_instances(&self) -> usize {
        self.instances.rows()
    }

    pub fn num_annotators(&self) -> usize {
        self.annotators.rows()
    }

    pub fn feature_dim(&self) -> usize {
        self.instances.cols()
    }

    pub fn annotator_dim(&self) -> usize {
        self.annotators.cols()
    }

    pub fn instance_features(&self) -> &Tensor {
        &self.instances
    }

    pub fn annotator_features(&self) -> &Tensor {
        &self.annotators
    }

    pub fn has_one_hot_annotators(&self) -> bool {
        self.one_hot_annotators
    }

    pub fn annotations(&self) -> &[Annotation] {
        &self.annotations
    }

    pub fn ground_truth(&self) -> Option<&[usize]> {
        self.ground_truth.as_deref()
    }

    pub fn splits(&self) -> &[Split] {
        &self.splits
    }

    /// Annotations on instance `n`, ordered by annotator.
    pub fn annotations_of(&self, n: usize) -> impl Iterator<Item = &Annotation> {
        self.by_instance[n].iter().map(move |&i| &self.annotations[i])
    }

    pub fn annotation_count(&self, n: usize) -> usize {
        self.by_instance[n].len()
    }

    pub fn split_indices(&self, split: Split) -> Vec<usize> {
        (0..self.num_instances())
            .filter(|&i| self.splits[i] == split)
            .collect()
    }

    /// Authentic annotation count per annotator.
    pub fn annotator_counts(&self) -> Vec<usize> {
        let mut counts = vec![0; self.num_annotators()];
        for a in &self.annotations {
            counts[a.annotator] += 1;
        }
        counts
    }

    /// Same instances and annotators with a different annotation set.
    pub fn with_annotations(&self, annotations: Vec<Annotation>) -> Result<Self> {
        Self::new(
            self.num_classes,
            self.instances.clone(),
            (!self.one_hot_annotators).then(|| self.annotators.clone()),
            self.num_annotators(),
            annotations,
            self.ground_truth.clone(),
            Some(self.splits.clone()),
        )
    }

    /// Fraction of annotations that agree with the ground truth.
    pub fn annotation_accuracy(&self) -> Option<f64> {
        let truth = self.ground_truth.as_ref()?;
        if self.annotations.is_empty() {
            return None;
        }
        let right = self
            .annotations
            .iter()
            .filter(|a| truth[a.instance] == a.label)
            .count();
        Some(right as f64 / self.annotations.len() as f64)
    }
}
