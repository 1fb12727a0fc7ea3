use crate::error::{Error, Result};

/// Candidate thresholds for scores: `-inf`, the midpoints between adjacent
/// distinct sorted values, and `+inf`.
pub fn candidate_thresholds(scores: &[f64]) -> Vec<f64> {
    let mut sorted: Vec<f64> = scores.to_vec();
    sorted.sort_by(f64::total_cmp);
    sorted.dedup();
    let mut out = vec![f64::NEG_INFINITY];
    out.extend(sorted.windows(2).map(|w| midpoint(w[0], w[1])));
    out.push(f64::INFINITY);
    out
}

/// A point strictly above `a` and at most `b`.
fn midpoint(a: f64, b: f64) -> f64 {
    let m = a + (b - a) / 2.0;
    if m > a {
        m
    } else {
        b
    }
}

/// Fraction of records classified correctly by "score >= theta is member".
pub fn threshold_accuracy(scores: &[f64], members: &[bool], theta: f64) -> f64 {
    let correct = scores.iter().zip(members).filter(|(&s, &m)| (s >= theta) == m).count();
    correct as f64 / scores.len().max(1) as f64
}

/// The candidate threshold with maximal accuracy, the smallest one on ties,
/// together with that accuracy. Runs in `O(n log n)`.
pub fn best_threshold(scores: &[f64], members: &[bool]) -> Result<(f64, f64)> {
    if scores.len() != members.len() {
        return Err(Error::DimensionMismatch { expected: scores.len(), got: members.len() });
    }
    if let Some(bad) = scores.iter().find(|s| !s.is_finite()) {
        return Err(Error::InvalidParameter(format!("non-finite score {bad}")));
    }
    let n_members = members.iter().filter(|&&m| m).count();
    if n_members == 0 {
        return Err(Error::SingleClass(0));
    }
    if n_members == members.len() {
        return Err(Error::SingleClass(1));
    }
    let mut order: Vec<usize> = (0..scores.len()).collect();
    order.sort_by(|&a, &b| scores[a].total_cmp(&scores[b]));

    // Everything predicted member at -inf.
    let mut correct = n_members as i64;
    let mut best = (f64::NEG_INFINITY, correct);
    let mut i = 0;
    while i < order.len() {
        let v = scores[order[i]];
        let mut j = i;
        while j < order.len() && scores[order[j]] == v {
            correct += if members[order[j]] { -1 } else { 1 };
            j += 1;
        }
        let theta = if j < order.len() { midpoint(v, scores[order[j]]) } else { f64::INFINITY };
        if correct > best.1 {
            best = (theta, correct);
        }
        i = j;
    }
    Ok((best.0, best.1 as f64 / scores.len() as f64))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_clusters() {
        let (theta, acc) = best_threshold(&[0.8, 0.9, 0.1, 0.2], &[true, true, false, false]).unwrap();
        assert!(theta > 0.2 && theta < 0.8);
        assert_eq!(acc, 1.0);
    }

    #[test]
    fn indistinguishable_scores() {
        let (theta, acc) = best_threshold(&[0.5, 0.5], &[true, false]).unwrap();
        assert_eq!(acc, 0.5);
        assert_eq!(theta, f64::NEG_INFINITY);
    }

    #[test]
    fn single_class_rejected() {
        assert!(matches!(best_threshold(&[0.1, 0.2], &[true, true]), Err(Error::SingleClass(1))));
        assert!(matches!(best_threshold(&[0.1], &[false]), Err(Error::SingleClass(0))));
    }

    #[test]
    fn inverted_data_prefers_plus_infinity_only_when_strictly_better() {
        let (theta, acc) = best_threshold(&[0.9, 0.1], &[false, true]).unwrap();
        assert_eq!(acc, 0.5);
        assert_eq!(theta, f64::NEG_INFINITY);
        let (theta, acc) = best_threshold(&[0.9, 0.8, 0.1], &[false, false, true]).unwrap();
        assert!((acc - 2.0 / 3.0).abs() < 1e-12);
        assert_eq!(theta, f64::INFINITY);
    }

    #[test]
    fn adjacent_floats_keep_strict_split() {
        let a = 0.3f64;
        let b = f64::from_bits(a.to_bits() + 1);
        let (theta, acc) = best_threshold(&[a, b], &[false, true]).unwrap();
        assert_eq!(acc, 1.0);
        assert!(theta > a && theta <= b);
    }
}
