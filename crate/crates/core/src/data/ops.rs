use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use super::dataset::CrowdDataset;
use crate::error::{Error, Result};

/// Plurality label per instance (`None` when unannotated). Ties go to the
/// smallest class index.
pub fn majority_vote(ds: &CrowdDataset) -> Vec<Option<usize>> {
    let c = ds.num_classes();
    (0..ds.num_instances())
        .map(|n| {
            let mut votes = vec![0usize; c];
            let mut any = false;
            for a in ds.annotations_of(n) {
                votes[a.label] += 1;
                any = true;
            }
            any.then(|| {
                let mut best = 0;
                for k in 1..c {
                    if votes[k] > votes[best] {
                        best = k;
                    }
                }
                best
            })
        })
        .collect()
}

/// Plurality over a bare label list, same tie rule.
pub fn plurality(labels: &[usize], num_classes: usize) -> Option<usize> {
    if labels.is_empty() {
        return None;
    }
    let mut votes = vec![0usize; num_classes];
    for &l in labels {
        votes[l] += 1;
    }
    let mut best = 0;
    for k in 1..num_classes {
        if votes[k] > votes[best] {
            best = k;
        }
    }
    Some(best)
}

/// Removes `⌊fraction · |annotations|⌋` annotations one at a time, each
/// drawn uniformly from those whose instance still has at least two.
pub fn remove_annotations(ds: &CrowdDataset, fraction: f64, seed: u64) -> Result<CrowdDataset> {
    if !(0.0..1.0).contains(&fraction) {
        return Err(Error::InvalidArgument(format!(
            "removal fraction {fraction} outside [0, 1)"
        )));
    }
    let total = ds.annotations().len();
    let requested = (fraction * total as f64).floor() as usize;
    let mut counts: Vec<usize> = (0..ds.num_instances()).map(|n| ds.annotation_count(n)).collect();
    let max_removable: usize = counts.iter().map(|&k| k.saturating_sub(1)).sum();
    if requested > max_removable {
        return Err(Error::InfeasibleRemoval {
            requested,
            max_removable,
            max_fraction: if total == 0 { 0.0 } else { max_removable as f64 / total as f64 },
        });
    }
    if requested == 0 {
        return Ok(ds.clone());
    }
    let annotations = ds.annotations();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut removable: Vec<usize> = (0..total)
        .filter(|&i| counts[annotations[i].instance] >= 2)
        .collect();
    let mut removed = vec![false; total];
    for _ in 0..requested {
        let pick = rng.random_range(0..removable.len());
        let idx = removable.swap_remove(pick);
        removed[idx] = true;
        let inst = annotations[idx].instance;
        counts[inst] -= 1;
        if counts[inst] == 1 {
            // its last annotation is no longer removable
            removable.retain(|&i| annotations[i].instance != inst);
        }
    }
    let kept = annotations
        .iter()
        .zip(&removed)
        .filter(|(_, &r)| !r)
        .map(|(a, _)| *a)
        .collect();
    ds.with_annotations(kept)
}
