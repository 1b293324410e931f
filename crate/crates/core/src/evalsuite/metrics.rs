use crate::diffcore::{argmax, entropy, Tensor};
use crate::error::{Error, Result};
use crate::nets::{classifier_probs, NetworkBundle};

fn check_labels(probs: &Tensor, labels: &[usize], what: &str) -> Result<()> {
    if labels.is_empty() {
        return Err(Error::EmptySplit(what.to_string()));
    }
    if probs.rows() != labels.len() {
        return Err(Error::shape(
            "accuracy",
            format!("{} predictions for {} labels", probs.rows(), labels.len()),
        ));
    }
    Ok(())
}

/// Argmax predictions per row, ties to the lowest class.
pub fn predictions(probs: &Tensor) -> Vec<usize> {
    (0..probs.rows()).map(|i| argmax(probs.row(i))).collect()
}

pub fn accuracy_from_probs(probs: &Tensor, labels: &[usize]) -> Result<f64> {
    check_labels(probs, labels, "accuracy")?;
    let right = predictions(probs)
        .iter()
        .zip(labels)
        .filter(|(p, y)| p == y)
        .count();
    Ok(right as f64 / labels.len() as f64)
}

/// Eval-mode classifier accuracy on the rows of `features`.
pub fn accuracy(bundle: &NetworkBundle, features: &Tensor, labels: &[usize]) -> Result<f64> {
    accuracy_from_probs(&classifier_probs(bundle, features)?, labels)
}

/// Accuracy within each true class; `None` for classes absent from
/// `labels`.
pub fn per_class_accuracy(
    bundle: &NetworkBundle,
    features: &Tensor,
    labels: &[usize],
) -> Result<Vec<Option<f64>>> {
    let probs = classifier_probs(bundle, features)?;
    check_labels(&probs, labels, "per-class accuracy")?;
    let c = bundle.dims.num_classes;
    let mut right = vec![0usize; c];
    let mut total = vec![0usize; c];
    for (p, &y) in predictions(&probs).iter().zip(labels) {
        total[y] += 1;
        right[y] += (*p == y) as usize;
    }
    Ok(right
        .iter()
        .zip(&total)
        .map(|(&r, &t)| (t > 0).then(|| r as f64 / t as f64))
        .collect())
}

/// Cumulative accuracy over instances sorted by ascending prediction
/// entropy (stable on ties). Point `i` covers the first `i + 1` instances.
pub fn entropy_accuracy_curve_from_probs(probs: &Tensor, labels: &[usize]) -> Result<Vec<f64>> {
    check_labels(probs, labels, "entropy-accuracy curve")?;
    let ent: Vec<f64> = (0..probs.rows())
        .map(|i| entropy(probs.row(i)))
        .collect::<Result<_>>()?;
    let mut order: Vec<usize> = (0..labels.len()).collect();
    order.sort_by(|&a, &b| ent[a].total_cmp(&ent[b]));
    let preds = predictions(probs);
    let mut right = 0usize;
    Ok(order
        .iter()
        .enumerate()
        .map(|(k, &i)| {
            right += (preds[i] == labels[i]) as usize;
            right as f64 / (k + 1) as f64
        })
        .collect())
}

pub fn entropy_accuracy_curve(
    bundle: &NetworkBundle,
    features: &Tensor,
    labels: &[usize],
) -> Result<Vec<f64>> {
    entropy_accuracy_curve_from_probs(&classifier_probs(bundle, features)?, labels)
}

/// Curve values at the ends of the ten entropy deciles.
pub fn decile_points(curve: &[f64]) -> Vec<f64> {
    let n = curve.len();
    (1..=10)
        .map(|k| (k * n).div_ceil(10))
        .filter(|&end| end > 0)
        .map(|end| curve[end - 1])
        .collect()
}

/// Fraction of adjacent decile pairs along which the curve does not rise.
pub fn non_increasing_fraction(points: &[f64]) -> f64 {
    if points.len() < 2 {
        return 1.0;
    }
    let ok = points.windows(2).filter(|w| w[1] <= w[0]).count();
    ok as f64 / (points.len() - 1) as f64
}

/// Area under the ROC curve: the probability that a random positive
/// outscores a random negative, ties counting one half.
pub fn auc(positive: &[f64], negative: &[f64]) -> Result<f64> {
    if positive.is_empty() || negative.is_empty() {
        return Err(Error::InvalidArgument("AUC needs both classes".into()));
    }
    let mut all: Vec<(f64, bool)> = positive
        .iter()
        .map(|&s| (s, true))
        .chain(negative.iter().map(|&s| (s, false)))
        .collect();
    all.sort_by(|a, b| a.0.total_cmp(&b.0));
    let ranks = average_ranks(&all.iter().map(|p| p.0).collect::<Vec<_>>());
    let pos_rank_sum: f64 = all
        .iter()
        .zip(&ranks)
        .filter(|(p, _)| p.1)
        .map(|(_, r)| r)
        .sum();
    let np = positive.len() as f64;
    let nn = negative.len() as f64;
    Ok((pos_rank_sum - np * (np + 1.0) / 2.0) / (np * nn))
}

/// 1-based ranks of a sorted slice, ties sharing their average rank.
fn average_ranks(sorted: &[f64]) -> Vec<f64> {
    let mut ranks = vec![0.0; sorted.len()];
    let mut i = 0;
    while i < sorted.len() {
        let mut j = i;
        while j + 1 < sorted.len() && sorted[j + 1] == sorted[i] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        ranks[i..=j].iter_mut().for_each(|x| *x = r);
        i = j + 1;
    }
    ranks
}

fn ranks_of(xs: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..xs.len()).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let sorted: Vec<f64> = order.iter().map(|&i| xs[i]).collect();
    let r = average_ranks(&sorted);
    let mut out = vec![0.0; xs.len()];
    for (k, &i) in order.iter().enumerate() {
        out[i] = r[k];
    }
    out
}

/// Spearman rank correlation with average ranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() || x.len() < 2 {
        return Err(Error::InvalidArgument(
            "Spearman correlation needs two equal-length series of length >= 2".into(),
        ));
    }
    let (rx, ry) = (ranks_of(x), ranks_of(y));
    let n = x.len() as f64;
    let (mx, my) = (rx.iter().sum::<f64>() / n, ry.iter().sum::<f64>() / n);
    let mut sxy = 0.0;
    let mut sxx = 0.0;
    let mut syy = 0.0;
    for (a, b) in rx.iter().zip(&ry) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(0.0);
    }
    Ok(sxy / (sxx * syy).sqrt())
}

pub fn mean_std(xs: &[f64]) -> (f64, f64) {
    if xs.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = xs.len() as f64;
    let m = xs.iter().sum::<f64>() / n;
    let var = if xs.len() > 1 {
        xs.iter().map(|x| (x - m).powi(2)).sum::<f64>() / (n - 1.0)
    } else {
        0.0
    };
    (m, var.sqrt())
}

/// Population variance of successive differences.
pub fn successive_difference_variance(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let d: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let m = d.iter().sum::<f64>() / d.len() as f64;
    d.iter().map(|x| (x - m).powi(2)).sum::<f64>() / d.len() as f64
}

#[cfg(test)]
mod tests {
    use super::*;

    fn t(rows: &[Vec<f64>]) -> Tensor {
        Tensor::from_rows(rows).unwrap()
    }

    #[test]
    fn accuracy_basics() {
        let p = t(&[vec![0.9, 0.1], vec![0.5, 0.5], vec![0.2, 0.8]]);
        assert_eq!(accuracy_from_probs(&p, &[0, 0, 1]).unwrap(), 1.0);
        assert!((accuracy_from_probs(&p, &[1, 1, 1]).unwrap() - 1.0 / 3.0).abs() < 1e-15);
        assert!(matches!(accuracy_from_probs(&Tensor::zeros(&[0, 2]), &[]), Err(Error::EmptySplit(_))));
    }

    #[test]
    fn curve_for_half_confident_half_uniform() {
        // Five confident-and-right rows, then five uniform rows whose argmax
        // (class 0) is right for two of them.
        let mut rows = vec![vec![0.97, 0.01, 0.01, 0.01]; 5];
        rows.extend(vec![vec![0.25; 4]; 5]);
        let labels = [0, 0, 0, 0, 0, 0, 0, 1, 2, 3];
        let curve = entropy_accuracy_curve_from_probs(&t(&rows), &labels).unwrap();
        assert!(curve[..5].iter().all(|&v| v == 1.0));
        assert!((curve[9] - 0.7).abs() < 1e-15);
        assert!(curve.windows(2).all(|w| w[1] <= w[0]));
        assert_eq!(*curve.last().unwrap(), accuracy_from_probs(&t(&rows), &labels).unwrap());
    }

    #[test]
    fn deciles_and_monotone_fraction() {
        let curve: Vec<f64> = (0..25).map(|i| 1.0 - i as f64 / 100.0).collect();
        let pts = decile_points(&curve);
        assert_eq!(pts.len(), 10);
        assert_eq!(pts[9], curve[24]);
        assert_eq!(non_increasing_fraction(&pts), 1.0);
        assert!((non_increasing_fraction(&[1.0, 0.5, 0.7, 0.6]) - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn auc_matches_pair_counting() {
        let pos = [0.9, 0.4, 0.4, 0.8];
        let neg = [0.1, 0.4, 0.85];
        let mut wins = 0.0;
        for p in pos {
            for n in neg {
                wins += if p > n { 1.0 } else if p == n { 0.5 } else { 0.0 };
            }
        }
        let want = wins / 12.0;
        assert!((auc(&pos, &neg).unwrap() - want).abs() < 1e-15);
    }

    #[test]
    fn spearman_examples() {
        assert!((spearman(&[0.0, 0.2, 0.4, 0.6], &[0.9, 0.8, 0.7, 0.5]).unwrap() + 1.0).abs() < 1e-15);
        assert!((spearman(&[1.0, 2.0, 3.0], &[1.0, 4.0, 9.0]).unwrap() - 1.0).abs() < 1e-15);
        // Pearson correlation of average ranks (1, 2.5, 2.5, 4) with (1..4).
        let r = spearman(&[1.0, 2.0, 2.0, 3.0], &[1.0, 2.0, 3.0, 4.0]).unwrap();
        assert!((r - 4.5 / (4.5f64 * 5.0).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn summary_statistics() {
        let (m, s) = mean_std(&[1.0, 2.0, 3.0]);
        assert_eq!((m, s), (2.0, 1.0));
        assert_eq!(successive_difference_variance(&[1.0, 2.0, 3.0, 4.0]), 0.0);
        assert!((successive_difference_variance(&[0.0, 1.0, 0.0]) - 1.0).abs() < 1e-15);
    }
}
