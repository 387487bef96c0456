use std::cmp::Ordering;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Top two principal axes of a centered data matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Pca2 {
    pub mean: Vec<f64>,
    pub basis: [Vec<f64>; 2],
    pub eigenvalues: [f64; 2],
}

impl Pca2 {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        self.basis
            .iter()
            .map(|b| b.iter().zip(x).zip(&self.mean).map(|((b, x), m)| b * (x - m)).sum())
            .collect()
    }
}

/// Cyclic Jacobi rotations on a symmetric matrix. Returns eigenvalues and
/// the matching eigenvectors (as rows).
pub(crate) fn symmetric_eigen(mut a: Vec<Vec<f64>>) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = a.len();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _ in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= 1e-15 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                if a[p][q] == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * a[p][q]);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k][p], a[k][q]);
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p][k], a[q][k]);
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let (vp, vq) = (row[p], row[q]);
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

fn lex_desc(a: &[f64], b: &[f64]) -> Ordering {
    for (x, y) in a.iter().zip(b) {
        match y.total_cmp(x) {
            Ordering::Equal => continue,
            o => return o,
        }
    }
    Ordering::Equal
}

/// Covariance eigendecomposition of the rows of `features`. Each axis has
/// its largest-magnitude entry made positive; eigenvalues equal to within
/// round-off are ordered by the lexicographically larger axis first.
pub fn pca2(features: &[Vec<f64>]) -> Result<Pca2> {
    let n = features.len();
    let d = features.first().map_or(0, Vec::len);
    if n < 2 || d < 2 {
        return Err(Error::Domain("pca2 needs at least 2 rows and 2 columns".into()));
    }
    if features.iter().any(|r| r.len() != d) {
        return Err(Error::Schema("ragged feature matrix".into()));
    }
    let mean: Vec<f64> = (0..d).map(|j| features.iter().map(|r| r[j]).sum::<f64>() / n as f64).collect();
    let mut cov = vec![vec![0.0; d]; d];
    for r in features {
        for i in 0..d {
            for j in i..d {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]);
            }
        }
    }
    for i in 0..d {
        for j in i..d {
            cov[i][j] /= (n - 1) as f64;
            cov[j][i] = cov[i][j];
        }
    }
    let (values, mut vectors) = symmetric_eigen(cov);
    let top = values.iter().copied().fold(0.0f64, |m, v| m.max(v.abs()));
    if top <= 0.0 {
        return Err(Error::Domain("all rows are identical; no principal axis exists".into()));
    }
    for v in &mut vectors {
        let lead = v.iter().copied().fold(0.0f64, |m, x| if x.abs() > m.abs() + 1e-12 { x } else { m });
        if lead < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let tie = 1e-12 * top;
    let mut order: Vec<usize> = (0..d).collect();
    order.sort_by(|&a, &b| {
        if (values[a] - values[b]).abs() <= tie {
            lex_desc(&vectors[a], &vectors[b])
        } else {
            values[b].total_cmp(&values[a])
        }
    });
    Ok(Pca2 {
        mean,
        basis: [vectors[order[0]].clone(), vectors[order[1]].clone()],
        eigenvalues: [values[order[0]].max(0.0), values[order[1]].max(0.0)],
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn line_data_has_one_axis() {
        let rows: Vec<Vec<f64>> = (0..20).map(|i| vec![i as f64, 2.0 * i as f64]).collect();
        let p = pca2(&rows).unwrap();
        let s5 = 5f64.sqrt();
        assert!((p.basis[0][0] - 1.0 / s5).abs() < 1e-12);
        assert!((p.basis[0][1] - 2.0 / s5).abs() < 1e-12);
        assert!(p.eigenvalues[1].abs() < 1e-9);
        // variance of i over 0..20 is 35, times |(1, 2)|² = 5
        assert!((p.eigenvalues[0] - 175.0).abs() < 1e-9);
    }

    #[test]
    fn isotropic_data_gives_axis_basis() {
        let rows = vec![vec![1.0, 0.0], vec![-1.0, 0.0], vec![0.0, 1.0], vec![0.0, -1.0]];
        let p = pca2(&rows).unwrap();
        assert_eq!(p.eigenvalues[0], p.eigenvalues[1]);
        assert_eq!(p.basis, [vec![1.0, 0.0], vec![0.0, 1.0]]);
    }

    #[test]
    fn degenerate_inputs() {
        assert!(pca2(&[vec![1.0, 2.0], vec![1.0, 2.0]]).is_err());
        assert!(pca2(&[vec![1.0, 2.0]]).is_err());
        assert!(pca2(&[vec![1.0], vec![2.0]]).is_err());
    }

    proptest! {
        #[test]
        fn basis_is_orthonormal(rows in prop::collection::vec(prop::collection::vec(-10.0f64..10.0, 4), 3..30)) {
            let Ok(p) = pca2(&rows) else { return Ok(()); };
            for i in 0..2 {
                for j in 0..2 {
                    let dot: f64 = p.basis[i].iter().zip(&p.basis[j]).map(|(a, b)| a * b).sum();
                    let expected = if i == j { 1.0 } else { 0.0 };
                    prop_assert!((dot - expected).abs() < 1e-10, "dot {} at {},{}", dot, i, j);
                }
            }
            prop_assert!(p.eigenvalues[0] >= p.eigenvalues[1] - 1e-9);
        }
    }
}
