use log::warn;
use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimilarityConfig {
    /// Weight of the cosine term.
    pub alpha: f64,
    /// Use `1 − d` instead of the literal distance `d` in the blend.
    pub distance_as_similarity: bool,
}

impl Default for SimilarityConfig {
    fn default() -> Self {
        SimilarityConfig {
            alpha: 0.7,
            distance_as_similarity: false,
        }
    }
}

/// `S_ij = α·cos(x_i, x_j) + (1 − α)·d_ij` with `d` the Euclidean distance
/// divided by the largest pairwise distance. Zero-norm series have cosine 0.
/// The diagonal is 1.
pub fn similarity_matrix(series: &[Vec<f64>], cfg: &SimilarityConfig) -> Result<DMatrix<f64>> {
    let n = series.len();
    if n < 2 {
        return Err(Error::invalid("similarity needs at least two series"));
    }
    let len = series[0].len();
    if series.iter().any(|s| s.len() != len) {
        return Err(Error::shape("series lengths differ"));
    }
    if series.iter().flatten().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("similarity input".into()));
    }
    let norms: Vec<f64> = series.iter().map(|s| s.iter().map(|v| v * v).sum::<f64>().sqrt()).collect();
    let mut dist = DMatrix::<f64>::zeros(n, n);
    let mut max_d = 0.0f64;
    for i in 0..n {
        for j in i + 1..n {
            let d = series[i].iter().zip(&series[j]).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
            dist[(i, j)] = d;
            max_d = max_d.max(d);
        }
    }
    let mut s = DMatrix::<f64>::identity(n, n);
    for i in 0..n {
        for j in i + 1..n {
            let cos = if norms[i] == 0.0 || norms[j] == 0.0 {
                0.0
            } else {
                series[i].iter().zip(&series[j]).map(|(a, b)| a * b).sum::<f64>() / (norms[i] * norms[j])
            };
            let d = if max_d > 0.0 { dist[(i, j)] / max_d } else { 0.0 };
            let d = if cfg.distance_as_similarity { 1.0 - d } else { d };
            let v = cfg.alpha * cos + (1.0 - cfg.alpha) * d;
            s[(i, j)] = v;
            s[(j, i)] = v;
        }
    }
    Ok(s)
}

/// `L = I − D^{-1/2} S⁺ D^{-1/2}` where `S⁺` floors negative affinities at 0
/// and `D` holds its row sums (zero rows get degree 1).
pub fn normalized_laplacian(s: &DMatrix<f64>) -> Result<DMatrix<f64>> {
    let n = s.nrows();
    if s.ncols() != n {
        return Err(Error::shape("similarity matrix must be square"));
    }
    for i in 0..n {
        for j in 0..i {
            if s[(i, j)] != s[(j, i)] {
                return Err(Error::invalid("similarity matrix must be symmetric"));
            }
        }
    }
    let pos = s.map(|v| v.max(0.0));
    let inv_sqrt: Vec<f64> = (0..n)
        .map(|i| {
            let d: f64 = pos.row(i).sum();
            1.0 / if d > 0.0 { d } else { 1.0 }.sqrt()
        })
        .collect();
    Ok(DMatrix::from_fn(n, n, |i, j| {
        let id = if i == j { 1.0 } else { 0.0 };
        id - inv_sqrt[i] * pos[(i, j)] * inv_sqrt[j]
    }))
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpectralOrder {
    /// `perm[k]` is the series placed at position `k`.
    pub perm: Vec<usize>,
    pub fiedler_value: f64,
    pub fiedler_vector: Vec<f64>,
    /// The second-smallest eigenvalue is repeated, so the order is arbitrary.
    pub degenerate: bool,
}

/// Orders series by the eigenvector of the second-smallest eigenvalue of the
/// normalized Laplacian, with its first nonzero component made positive.
pub fn spectral_order(s: &DMatrix<f64>) -> Result<SpectralOrder> {
    let n = s.nrows();
    if n < 2 {
        return Err(Error::invalid("spectral ordering needs at least two series"));
    }
    let lap = normalized_laplacian(s)?;
    let eig = SymmetricEigen::new(lap);
    if eig.eigenvalues.iter().any(|v| !v.is_finite()) {
        return Err(Error::NonFinite("Laplacian eigenvalues".into()));
    }
    let mut idx: Vec<usize> = (0..n).collect();
    idx.sort_by(|&a, &b| eig.eigenvalues[a].total_cmp(&eig.eigenvalues[b]));
    let lam: Vec<f64> = idx.iter().map(|&k| eig.eigenvalues[k]).collect();
    let tol = 1e-9 * lam.iter().fold(1.0f64, |m, v| m.max(v.abs()));
    let degenerate = (lam[1] - lam[0]).abs() < tol || (n > 2 && (lam[2] - lam[1]).abs() < tol);
    if degenerate {
        warn!("Fiedler eigenvalue is repeated; the ordering is not unique");
    }
    let mut v: Vec<f64> = eig.eigenvectors.column(idx[1]).iter().copied().collect();
    if let Some(first) = v.iter().find(|x| x.abs() > 1e-12) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
    let mut perm: Vec<usize> = (0..n).collect();
    perm.sort_by(|&a, &b| v[a].total_cmp(&v[b]).then(a.cmp(&b)));
    Ok(SpectralOrder {
        perm,
        fiedler_value: lam[1].max(0.0),
        fiedler_vector: v,
        degenerate,
    })
}
