use super::dataset::CrowdDataset;
use crate::diffcore::Tensor;

/// Label co-occurrence counts and the normalized propagation matrix
/// `P = D̂^{-1/2} (A + I) D̂^{-1/2}`.
#[derive(Debug, Clone, PartialEq)]
pub struct CoocAdjacency {
    counts: Tensor,
    propagation: Tensor,
}

impl CoocAdjacency {
    /// Builds the normalized matrix from raw symmetric counts.
    pub fn from_counts(counts: Tensor) -> Self {
        let c = counts.rows();
        let mut a_hat = counts.clone();
        for i in 0..c {
            a_hat.set2(i, i, a_hat.get2(i, i) + 1.0);
        }
        let inv_sqrt_deg: Vec<f64> = (0..c)
            .map(|i| 1.0 / a_hat.row(i).iter().sum::<f64>().sqrt())
            .collect();
        let mut propagation = Tensor::zeros(&[c, c]);
        for i in 0..c {
            for j in 0..c {
                propagation.set2(i, j, inv_sqrt_deg[i] * a_hat.get2(i, j) * inv_sqrt_deg[j]);
            }
        }
        Self {
            counts,
            propagation,
        }
    }

    /// No correlations: `A = 0`, `P = I`.
    pub fn identity(num_classes: usize) -> Self {
        Self::from_counts(Tensor::zeros(&[num_classes, num_classes]))
    }

    pub fn num_classes(&self) -> usize {
        self.counts.rows()
    }

    pub fn counts(&self) -> &Tensor {
        &self.counts
    }

    pub fn propagation(&self) -> &Tensor {
        &self.propagation
    }
}

/// Counts every unordered pair of annotations on the same instance.
/// Cross-label pairs fill both off-diagonal cells; same-label pairs add one
/// to the diagonal.
pub fn build_cooccurrence(ds: &CrowdDataset) -> CoocAdjacency {
    let c = ds.num_classes();
    let mut counts = Tensor::zeros(&[c, c]);
    for n in 0..ds.num_instances() {
        let labels: Vec<usize> = ds.annotations_of(n).map(|a| a.label).collect();
        for (i, &a) in labels.iter().enumerate() {
            for &b in &labels[i + 1..] {
                if a == b {
                    counts.set2(a, a, counts.get2(a, a) + 1.0);
                } else {
                    counts.set2(a, b, counts.get2(a, b) + 1.0);
                    counts.set2(b, a, counts.get2(b, a) + 1.0);
                }
            }
        }
    }
    CoocAdjacency::from_counts(counts)
}
