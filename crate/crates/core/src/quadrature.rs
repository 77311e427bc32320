//! Gauss–Hermite rules for expectations under the standard normal.

use nalgebra::{DMatrix, SymmetricEigen};

use crate::error::{Error, Result};

/// Nodes and weights with `Σ w_i g(x_i) ≈ E[g(Z)]`, `Z ~ N(0, 1)`.
/// Built by Golub–Welsch from the Hermite recurrence.
pub fn gauss_hermite(n: usize) -> Result<(Vec<f64>, Vec<f64>)> {
    if n == 0 {
        return Err(Error::contract("quadrature needs at least one node"));
    }
    let jacobi = DMatrix::from_fn(n, n, |i, j| {
        if i + 1 == j || j + 1 == i {
            (i.max(j) as f64).sqrt()
        } else {
            0.0
        }
    });
    let eig = SymmetricEigen::new(jacobi);
    let mut pairs: Vec<(f64, f64)> = (0..n)
        .map(|i| (eig.eigenvalues[i], eig.eigenvectors[(0, i)].powi(2)))
        .collect();
    pairs.sort_by(|a, b| a.0.total_cmp(&b.0));
    let total: f64 = pairs.iter().map(|p| p.1).sum();
    Ok(pairs.into_iter().map(|(x, w)| (x, w / total)).unzip())
}

/// Tensor-product rule in `dim` dimensions: `(point, weight)` pairs.
pub fn tensor_rule(dim: usize, n: usize) -> Result<Vec<(Vec<f64>, f64)>> {
    let (nodes, weights) = gauss_hermite(n)?;
    let mut out = vec![(Vec::with_capacity(dim), 1.0)];
    for _ in 0..dim {
        out = out
            .into_iter()
            .flat_map(|(p, w)| {
                nodes.iter().zip(&weights).map(move |(x, wx)| {
                    let mut q = p.clone();
                    q.push(*x);
                    (q, w * wx)
                })
            })
            .collect();
    }
    Ok(out)
}
