//! Closed-form eigendecomposition of symmetric 2×2 and 3×3 matrices.
//!
//! The 3×3 solver uses the trigonometric root method: shift and scale
//! `A = p B + q I` with `q = tr(A)/3` and `p = sqrt(tr((A-qI)²)/6)`, whose
//! characteristic equation `β³ - 3β - det(B) = 0` has the closed-form roots
//!
//! ```text
//! β_k = 2 cos(⅓ arccos(det(B)/2) + 2kπ/3),  k = 0, 1, 2.
//! ```
//!
//! For symmetric real input, `|det(B)| ≤ 2`, so the arccos argument only
//! needs clamping against rounding. Eigenvectors come from cross products of
//! rows of `A - λI`, with an inverse-iteration fallback for repeated
//! eigenvalues.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use std::f64::consts::PI;

/// Treat the shifted matrix as scalar below this spread.
const SCALAR_SPREAD: f64 = 1e-12;

/// Cross products below this norm mean the eigenvalue is (numerically)
/// repeated and the fallback path runs.
const CROSS_NORM_TOL: f64 = 1e-9;

/// First vector component above this magnitude fixes the sign convention.
const SIGN_TOL: f64 = 1e-9;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair3 {
    pub value: f64,
    pub vector: Vector3<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EigenPair2 {
    pub value: f64,
    pub vector: Vector2<f64>,
}

fn symmetrize3(a: &Matrix3<f64>) -> Matrix3<f64> {
    0.5 * (a + a.transpose())
}

/// Eigenvalues of a symmetric 3×3 matrix, ascending, via the trigonometric
/// closed form. Returns `None` for (near-)scalar matrices.
fn eigvalues3(a: &Matrix3<f64>) -> Option<[f64; 3]> {
    let q = a.trace() / 3.0;
    let shifted = a - Matrix3::identity() * q;
    let p = ((shifted * shifted).trace() / 6.0).max(0.0).sqrt();
    if p < SCALAR_SPREAD * (1.0 + a.norm()) {
        return None;
    }
    let b = shifted / p;
    let half_det = b.determinant() / 2.0;
    debug_assert!(half_det.abs() <= 1.0 + 1e-9);
    let phi = half_det.clamp(-1.0, 1.0).acos() / 3.0;
    // k = 0 is the largest root, k = 1 the smallest.
    let l_max = q + 2.0 * p * phi.cos();
    let l_min = q + 2.0 * p * (phi + 2.0 * PI / 3.0).cos();
    let l_mid = q + 2.0 * p * (phi + 4.0 * PI / 3.0).cos();
    let mut vals = [l_min, l_mid, l_max];
    vals.sort_by(|x, y| x.partial_cmp(y).unwrap());
    Some(vals)
}

/// Canonical sign: flip so the first component with |v| > 1e-9 is positive.
/// Negative zeros are scrubbed so printed output is byte-stable.
fn fix_sign3(v: Vector3<f64>) -> Vector3<f64> {
    let scrub = |v: Vector3<f64>| v.map(|x| if x == 0.0 { 0.0 } else { x });
    for k in 0..3 {
        if v[k].abs() > SIGN_TOL {
            return scrub(if v[k] < 0.0 { -v } else { v });
        }
    }
    scrub(v)
}

fn fix_sign2(v: Vector2<f64>) -> Vector2<f64> {
    let scrub = |v: Vector2<f64>| v.map(|x| if x == 0.0 { 0.0 } else { x });
    for k in 0..2 {
        if v[k].abs() > SIGN_TOL {
            return scrub(if v[k] < 0.0 { -v } else { v });
        }
    }
    scrub(v)
}

/// Largest-norm cross product of row pairs of `m`; the rows of `A - λI` are
/// orthogonal to the eigenspace, so a nonzero cross product spans it.
fn row_cross_candidate(m: &Matrix3<f64>) -> (Vector3<f64>, f64) {
    let r0: Vector3<f64> = m.row(0).transpose();
    let r1: Vector3<f64> = m.row(1).transpose();
    let r2: Vector3<f64> = m.row(2).transpose();
    let candidates = [r0.cross(&r1), r0.cross(&r2), r1.cross(&r2)];
    let mut best = candidates[0];
    let mut best_norm = best.norm();
    for c in &candidates[1..] {
        let n = c.norm();
        if n > best_norm {
            best = *c;
            best_norm = n;
        }
    }
    (best, best_norm)
}

/// Two regularized inverse-iteration steps from a fixed seed, then
/// Gram-Schmidt against the vectors already found. Later seeds only run when
/// an earlier one lands inside the found span (possible for repeated
/// eigenvalues whose eigenspace the seed is symmetric about).
fn degenerate_vector(
    a: &Matrix3<f64>,
    lambda: f64,
    found: &[Vector3<f64>],
    scale: f64,
) -> Vector3<f64> {
    let shift = lambda + 1e-10 * scale;
    let m = a - Matrix3::identity() * shift;
    let seeds = [
        Vector3::new(1.0, 1.0, 1.0),
        Vector3::new(1.0, 0.5, 0.25),
        Vector3::new(0.25, -1.0, 0.5),
    ];
    for seed in seeds {
        let mut v = seed.normalize();
        for _ in 0..2 {
            if let Some(solved) = m.lu().solve(&v) {
                let n = solved.norm();
                if n.is_finite() && n > 0.0 {
                    v = solved / n;
                }
            }
        }
        for f in found {
            v -= f * v.dot(f);
        }
        if v.norm() > CROSS_NORM_TOL {
            return v.normalize();
        }
    }
    // Last resort (near-scalar input): complete the found set from the
    // standard basis.
    let mut best = Vector3::x();
    let mut best_res = -1.0;
    for e in [Vector3::x(), Vector3::y(), Vector3::z()] {
        let mut r = e;
        for f in found {
            r -= f * r.dot(f);
        }
        if r.norm() > best_res {
            best_res = r.norm();
            best = r;
        }
    }
    best.normalize()
}

/// Full eigendecomposition of a symmetric 3×3 matrix, pairs ascending by
/// eigenvalue. The input is symmetrized before use.
pub fn eig_sym3(a: &Matrix3<f64>) -> [EigenPair3; 3] {
    debug_assert!(
        (a - a.transpose()).abs().max() < 1e-9 * (1.0 + a.norm()),
        "input must be symmetric"
    );
    let a = symmetrize3(a);
    let Some(values) = eigvalues3(&a) else {
        // Scalar matrix: every direction is an eigenvector.
        let q = a.trace() / 3.0;
        return [
            EigenPair3 {
                value: q,
                vector: Vector3::x(),
            },
            EigenPair3 {
                value: q,
                vector: Vector3::y(),
            },
            EigenPair3 {
                value: q,
                vector: Vector3::z(),
            },
        ];
    };
    let scale = 1.0 + a.norm();
    let mut vectors: Vec<Vector3<f64>> = Vec::with_capacity(3);
    for &lambda in &values {
        let m = a - Matrix3::identity() * lambda;
        let (cross, norm) = row_cross_candidate(&m);
        // The relative term catches eigenvalues that are repeated up to
        // rounding: their cross products are nonzero but pure noise.
        let v = if norm > CROSS_NORM_TOL.max(1e-8 * scale * scale) {
            cross / norm
        } else {
            degenerate_vector(&a, lambda, &vectors, scale)
        };
        vectors.push(v);
    }
    [
        EigenPair3 {
            value: values[0],
            vector: fix_sign3(vectors[0]),
        },
        EigenPair3 {
            value: values[1],
            vector: fix_sign3(vectors[1]),
        },
        EigenPair3 {
            value: values[2],
            vector: fix_sign3(vectors[2]),
        },
    ]
}

/// Eigendecomposition of a symmetric 2×2 matrix, ascending, from the
/// quadratic formula.
pub fn eig_sym2(a: &Matrix2<f64>) -> [EigenPair2; 2] {
    debug_assert!(
        (a[(0, 1)] - a[(1, 0)]).abs() < 1e-9 * (1.0 + a.norm()),
        "input must be symmetric"
    );
    let off = 0.5 * (a[(0, 1)] + a[(1, 0)]);
    let (d0, d1) = (a[(0, 0)], a[(1, 1)]);
    let mean = 0.5 * (d0 + d1);
    let radius = (0.25 * (d0 - d1) * (d0 - d1) + off * off).sqrt();
    let (lo, hi) = (mean - radius, mean + radius);
    if radius < SCALAR_SPREAD * (1.0 + a.norm()) {
        return [
            EigenPair2 {
                value: mean,
                vector: Vector2::x(),
            },
            EigenPair2 {
                value: mean,
                vector: Vector2::y(),
            },
        ];
    }
    // Eigenvector for λ: a nonzero column of the adjugate of (A - λI).
    let vector_for = |lambda: f64| -> Vector2<f64> {
        let c0 = Vector2::new(off, lambda - d0);
        let c1 = Vector2::new(lambda - d1, off);
        let v = if c0.norm() >= c1.norm() { c0 } else { c1 };
        fix_sign2(v.normalize())
    };
    let v_lo = vector_for(lo);
    let mut v_hi = vector_for(hi);
    if v_lo.dot(&v_hi).abs() > 0.5 {
        // Same adjugate column picked twice (happens only near degeneracy);
        // use the orthogonal complement.
        v_hi = fix_sign2(Vector2::new(-v_lo.y, v_lo.x));
    }
    [
        EigenPair2 {
            value: lo,
            vector: v_lo,
        },
        EigenPair2 {
            value: hi,
            vector: v_hi,
        },
    ]
}

/// Smallest eigenpair of a symmetric 3×3 matrix.
pub fn min_eigpair3(a: &Matrix3<f64>) -> EigenPair3 {
    eig_sym3(a)[0]
}

/// Smallest eigenpair of a symmetric 2×2 matrix.
pub fn min_eigpair2(a: &Matrix2<f64>) -> EigenPair2 {
    eig_sym2(a)[0]
}
