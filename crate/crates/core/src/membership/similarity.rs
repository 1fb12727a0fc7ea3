use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const MIN_NORM: f64 = 1e-12;

/// Larger always means more similar.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SimilarityMetric {
    #[default]
    Cosine,
    PearsonCorrelation,
    /// `-||a - b||_2`.
    NegativeEuclidean,
}

impl SimilarityMetric {
    pub const ALL: [Self; 3] = [Self::Cosine, Self::PearsonCorrelation, Self::NegativeEuclidean];

    pub fn as_str(self) -> &'static str {
        match self {
            Self::Cosine => "cosine",
            Self::PearsonCorrelation => "pearson-correlation",
            Self::NegativeEuclidean => "negative-euclidean",
        }
    }
}

impl fmt::Display for SimilarityMetric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for SimilarityMetric {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "cosine" => Ok(Self::Cosine),
            "pearson-correlation" | "pearson" | "correlation" => Ok(Self::PearsonCorrelation),
            "negative-euclidean" | "euclidean" => Ok(Self::NegativeEuclidean),
            other => Err(Error::InvalidParameter(format!("unknown similarity metric `{other}`"))),
        }
    }
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn unit(v: &[f32], what: &str) -> Result<Vec<f64>> {
    let v: Vec<f64> = v.iter().map(|&x| x as f64).collect();
    let norm = dot(&v, &v).sqrt();
    if !(norm > MIN_NORM) {
        return Err(Error::DegenerateFeature(format!("{what} has zero norm")));
    }
    Ok(v.into_iter().map(|x| x / norm).collect())
}

fn centered_unit(v: &[f32]) -> Result<Vec<f64>> {
    let mean = v.iter().map(|&x| x as f64).sum::<f64>() / v.len().max(1) as f64;
    let c64: Vec<f64> = v.iter().map(|&x| x as f64 - mean).collect();
    let norm = dot(&c64, &c64).sqrt();
    if !(norm > MIN_NORM) {
        return Err(Error::DegenerateFeature("correlation with a constant vector".into()));
    }
    Ok(c64.into_iter().map(|x| x / norm).collect())
}

pub fn similarity(metric: SimilarityMetric, a: &[f32], b: &[f32]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::DimensionMismatch { expected: a.len(), got: b.len() });
    }
    Ok(match metric {
        SimilarityMetric::Cosine => dot(&unit(a, "feature vector")?, &unit(b, "feature vector")?).clamp(-1.0, 1.0),
        SimilarityMetric::PearsonCorrelation => dot(&centered_unit(a)?, &centered_unit(b)?).clamp(-1.0, 1.0),
        SimilarityMetric::NegativeEuclidean => {
            -a.iter().zip(b).map(|(&x, &y)| (x as f64 - y as f64).powi(2)).sum::<f64>().sqrt()
        }
    })
}

/// Scores of all unordered pairs `(i, j)`, `i < j`, in lexicographic order.
/// Vectors are normalised once rather than per pair.
pub fn pairwise_similarities(metric: SimilarityMetric, vectors: &[Vec<f32>]) -> Result<Vec<f64>> {
    let d = vectors.first().map_or(0, Vec::len);
    if let Some(bad) = vectors.iter().find(|v| v.len() != d) {
        return Err(Error::DimensionMismatch { expected: d, got: bad.len() });
    }
    let n = vectors.len();
    let mut out = Vec::with_capacity(n * n.saturating_sub(1) / 2);
    match metric {
        SimilarityMetric::NegativeEuclidean => {
            for i in 0..n {
                for j in i + 1..n {
                    out.push(similarity(metric, &vectors[i], &vectors[j])?);
                }
            }
        }
        SimilarityMetric::Cosine | SimilarityMetric::PearsonCorrelation => {
            let prepared: Vec<Vec<f64>> = vectors
                .iter()
                .map(|v| if metric == SimilarityMetric::Cosine { unit(v, "feature vector") } else { centered_unit(v) })
                .collect::<Result<_>>()?;
            for i in 0..n {
                for j in i + 1..n {
                    out.push(dot(&prepared[i], &prepared[j]).clamp(-1.0, 1.0));
                }
            }
        }
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reference_values() {
        assert_eq!(similarity(SimilarityMetric::Cosine, &[1.0, 0.0], &[1.0, 0.0]).unwrap(), 1.0);
        assert_eq!(similarity(SimilarityMetric::NegativeEuclidean, &[0.0, 0.0], &[3.0, 4.0]).unwrap(), -5.0);
        let r = similarity(SimilarityMetric::PearsonCorrelation, &[1.0, 2.0, 3.0], &[2.0, 4.0, 6.0]).unwrap();
        assert!((r - 1.0).abs() < 1e-12);
        let r = similarity(SimilarityMetric::PearsonCorrelation, &[1.0, 2.0, 3.0], &[3.0, 2.0, 1.0]).unwrap();
        assert!((r + 1.0).abs() < 1e-12);
    }

    #[test]
    fn degenerate_inputs_raise() {
        assert!(matches!(
            similarity(SimilarityMetric::Cosine, &[0.0, 0.0], &[1.0, 0.0]),
            Err(Error::DegenerateFeature(_))
        ));
        assert!(matches!(
            similarity(SimilarityMetric::PearsonCorrelation, &[2.0, 2.0], &[1.0, 0.0]),
            Err(Error::DegenerateFeature(_))
        ));
        assert_eq!(similarity(SimilarityMetric::NegativeEuclidean, &[0.0; 2], &[0.0; 2]).unwrap(), 0.0);
        assert!(similarity(SimilarityMetric::Cosine, &[1.0], &[1.0, 2.0]).is_err());
    }

    #[test]
    fn pairwise_matches_scalar() {
        let v = vec![vec![1.0, 0.5, -0.2], vec![0.1, 0.9, 0.3], vec![-0.4, 0.2, 0.8], vec![0.3, 0.3, 0.1]];
        for metric in SimilarityMetric::ALL {
            let all = pairwise_similarities(metric, &v).unwrap();
            let mut k = 0;
            for i in 0..4 {
                for j in i + 1..4 {
                    assert!((all[k] - similarity(metric, &v[i], &v[j]).unwrap()).abs() < 1e-12);
                    k += 1;
                }
            }
        }
    }

    #[test]
    fn names_roundtrip() {
        for m in SimilarityMetric::ALL {
            assert_eq!(m.as_str().parse::<SimilarityMetric>().unwrap(), m);
            assert_eq!(serde_json::to_string(&m).unwrap(), format!("\"{}\"", m.as_str()));
        }
    }
}
