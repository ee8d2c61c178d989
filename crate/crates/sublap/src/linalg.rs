//! Small shared linear-algebra helpers: constraint-kernel projectors and
//! Gram-Schmidt with respect to an arbitrary fibre inner product.

use nalgebra::{DMatrix, DVector};

use crate::error::{Error, Result};

/// Euclidean-orthonormalize the given constraint rows (dropping near-zero
/// rows is not expected here; rows are assumed independent).
pub(crate) fn orthonormal_rows(rows: &[DVector<f64>]) -> Vec<DVector<f64>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(rows.len());
    for row in rows {
        let mut v = row.clone();
        for q in &out {
            let c = v.dot(q);
            v -= q * c;
        }
        let n = v.norm();
        if n > 1e-14 {
            out.push(v / n);
        }
    }
    out
}

/// Euclidean-orthogonal projection of `v` onto the common kernel of the
/// constraint rows.
pub(crate) fn project_to_kernel(v: &DVector<f64>, ortho_rows: &[DVector<f64>]) -> DVector<f64> {
    let mut out = v.clone();
    for q in ortho_rows {
        let c = out.dot(q);
        out -= q * c;
    }
    out
}

/// Pivoted modified Gram-Schmidt with respect to the inner product `metric`,
/// selecting `count` vectors from `candidates`. The pivot picks the largest
/// remaining metric norm, ties broken by lowest index, so the output is
/// deterministic down to the bit level.
pub(crate) fn gram_schmidt_pivoted(
    candidates: &[DVector<f64>],
    metric: &dyn Fn(&DVector<f64>, &DVector<f64>) -> f64,
    count: usize,
) -> Result<Vec<DVector<f64>>> {
    let mut pool: Vec<DVector<f64>> = candidates.to_vec();
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(count);
    for _ in 0..count {
        let mut best = 0;
        let mut best_norm = f64::NEG_INFINITY;
        for (i, v) in pool.iter().enumerate() {
            let n = metric(v, v);
            if n > best_norm {
                best_norm = n;
                best = i;
            }
        }
        if !(best_norm > 1e-20) {
            return Err(Error::numerical(format!(
                "Gram-Schmidt breakdown: best remaining norm^2 = {best_norm:e}"
            )));
        }
        let q = pool.swap_remove(best) / best_norm.sqrt();
        for v in pool.iter_mut() {
            let c = metric(v, &q);
            *v -= &q * c;
        }
        out.push(q);
    }
    Ok(out)
}

/// Unpivoted modified Gram-Schmidt in the given fixed order; used for locally
/// smooth frames seeded from a frame at a nearby base point, where the inputs
/// are already near-orthonormal and pivoting would break smoothness.
pub(crate) fn gram_schmidt_fixed_order(
    vectors: &[DVector<f64>],
    metric: &dyn Fn(&DVector<f64>, &DVector<f64>) -> f64,
) -> Result<Vec<DVector<f64>>> {
    let mut out: Vec<DVector<f64>> = Vec::with_capacity(vectors.len());
    for v in vectors {
        let mut w = v.clone();
        for q in &out {
            let c = metric(&w, q);
            w -= q * c;
        }
        let n = metric(&w, &w);
        if !(n > 1e-20) {
            return Err(Error::numerical(
                "Gram-Schmidt breakdown in fixed-order orthonormalization".to_string(),
            ));
        }
        out.push(w / n.sqrt());
    }
    Ok(out)
}

/// Numerical rank: number of singular values above `threshold`.
pub(crate) fn rank_with_threshold(m: &DMatrix<f64>, threshold: f64) -> usize {
    let svd = m.clone().svd(false, false);
    svd.singular_values.iter().filter(|&&s| s > threshold).count()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn pivoted_gs_is_orthonormal_and_deterministic() {
        let candidates: Vec<DVector<f64>> = vec![
            DVector::from_vec(vec![1.0, 2.0, 0.0]),
            DVector::from_vec(vec![0.5, -1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 1e-3]),
        ];
        let dot = |a: &DVector<f64>, b: &DVector<f64>| a.dot(b);
        let f1 = gram_schmidt_pivoted(&candidates, &dot, 3).unwrap();
        let f2 = gram_schmidt_pivoted(&candidates, &dot, 3).unwrap();
        for (a, b) in f1.iter().zip(&f2) {
            assert_eq!(a, b);
        }
        for i in 0..3 {
            for j in 0..3 {
                let expect = if i == j { 1.0 } else { 0.0 };
                assert!((f1[i].dot(&f1[j]) - expect).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn breakdown_is_reported() {
        let candidates: Vec<DVector<f64>> = vec![
            DVector::from_vec(vec![1.0, 0.0]),
            DVector::from_vec(vec![1.0, 0.0]),
        ];
        let dot = |a: &DVector<f64>, b: &DVector<f64>| a.dot(b);
        assert!(gram_schmidt_pivoted(&candidates, &dot, 2).is_err());
    }

    #[test]
    fn kernel_projection_annihilates_constraints() {
        let rows = orthonormal_rows(&[
            DVector::from_vec(vec![1.0, 1.0, 0.0]),
            DVector::from_vec(vec![0.0, 1.0, 1.0]),
        ]);
        let v = DVector::from_vec(vec![0.3, -0.4, 0.9]);
        let p = project_to_kernel(&v, &rows);
        for row in &rows {
            assert!(p.dot(row).abs() < 1e-14);
        }
    }
}
