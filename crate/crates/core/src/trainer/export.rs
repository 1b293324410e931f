use std::collections::HashSet;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::data::{sample_categorical, Annotation, CrowdDataset, Split};
use crate::diffcore::Tensor;
use crate::error::Result;
use crate::nets::{classifier_probs, generator_probs, NetworkBundle};

const CHUNK: usize = 4096;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct AugmentedAnnotation {
    pub instance: usize,
    pub annotator: usize,
    pub label: usize,
    pub authentic: bool,
}

/// The authentic annotations followed by one generated label for every
/// (training instance, annotator) pair without one.
pub fn export_augmented(ds: &CrowdDataset, bundle: &NetworkBundle, seed: u64) -> Result<Vec<AugmentedAnnotation>> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut out: Vec<AugmentedAnnotation> = ds
        .annotations()
        .iter()
        .map(|a| AugmentedAnnotation {
            instance: a.instance,
            annotator: a.annotator,
            label: a.label,
            authentic: true,
        })
        .collect();
    let seen: HashSet<(usize, usize)> = ds.annotations().iter().map(|a| (a.instance, a.annotator)).collect();
    let missing: Vec<(usize, usize)> = ds
        .split_indices(Split::Train)
        .into_iter()
        .flat_map(|n| (0..ds.num_annotators()).map(move |r| (n, r)))
        .filter(|p| !seen.contains(p))
        .collect();
    let zhat = classifier_probs(bundle, ds.instance_features())?;
    let k = bundle.dims.noise_dim;
    for chunk in missing.chunks(CHUNK) {
        let inst: Vec<usize> = chunk.iter().map(|p| p.0).collect();
        let who: Vec<usize> = chunk.iter().map(|p| p.1).collect();
        let noise: Vec<f64> = (0..chunk.len() * k).map(|_| StandardNormal.sample(&mut rng)).collect();
        let probs = generator_probs(
            bundle,
            &ds.instance_features().select_rows(&inst),
            &ds.annotator_features().select_rows(&who),
            &zhat.select_rows(&inst),
            &Tensor::matrix(chunk.len(), k, noise)?,
        )?;
        for (i, &(instance, annotator)) in chunk.iter().enumerate() {
            out.push(AugmentedAnnotation {
                instance,
                annotator,
                label: sample_categorical(probs.row(i), &mut rng),
                authentic: false,
            });
        }
    }
    Ok(out)
}

pub fn augmented_csv(rows: &[AugmentedAnnotation]) -> String {
    let mut s = String::from("instance,annotator,label,authentic\n");
    for r in rows {
        s.push_str(&format!("{},{},{},{}\n", r.instance, r.annotator, r.label, r.authentic as u8));
    }
    s
}

/// `ds` with its annotations replaced by `rows`.
pub fn augmented_dataset(ds: &CrowdDataset, rows: &[AugmentedAnnotation]) -> Result<CrowdDataset> {
    ds.with_annotations(
        rows.iter()
            .map(|r| Annotation {
                instance: r.instance,
                annotator: r.annotator,
                label: r.label,
            })
            .collect(),
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nets::{NetDims, NetOptions};

    fn tiny(annotations: Vec<Annotation>) -> CrowdDataset {
        let x = Tensor::matrix(3, 2, vec![0.0, 1.0, 1.0, 0.0, -1.0, 0.5]).unwrap();
        CrowdDataset::new(2, x, None, 2, annotations, None, None).unwrap()
    }

    fn bundle(ds: &CrowdDataset) -> NetworkBundle {
        let dims = NetDims::new(2, ds.feature_dim(), ds.annotator_dim());
        let options = NetOptions {
            lca_enabled: false,
            ..NetOptions::default()
        };
        NetworkBundle::new(dims, options, None, 0).unwrap()
    }

    fn ann(instance: usize, annotator: usize, label: usize) -> Annotation {
        Annotation {
            instance,
            annotator,
            label,
        }
    }

    #[test]
    fn four_observed_of_six_pairs() {
        let ds = tiny(vec![ann(0, 0, 1), ann(0, 1, 1), ann(1, 0, 0), ann(2, 1, 0)]);
        let rows = export_augmented(&ds, &bundle(&ds), 3).unwrap();
        assert_eq!(rows.len(), 6);
        assert_eq!(rows.iter().filter(|r| r.authentic).count(), 4);
        let mut pairs: Vec<_> = rows.iter().map(|r| (r.instance, r.annotator)).collect();
        pairs.sort_unstable();
        pairs.dedup();
        assert_eq!(pairs.len(), 6);
        let back = augmented_dataset(&ds, &rows).unwrap();
        assert_eq!(back.annotations().len(), 6);
    }

    #[test]
    fn complete_grid_is_returned_unchanged() {
        let all: Vec<_> = (0..3).flat_map(|n| (0..2).map(move |r| ann(n, r, (n + r) % 2))).collect();
        let ds = tiny(all.clone());
        let rows = export_augmented(&ds, &bundle(&ds), 0).unwrap();
        assert!(rows.iter().all(|r| r.authentic));
        let got: Vec<_> = rows.iter().map(|r| ann(r.instance, r.annotator, r.label)).collect();
        assert_eq!(got, ds.annotations());
    }
}
