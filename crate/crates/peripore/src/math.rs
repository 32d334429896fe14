//! Small tensor helpers shared by the kinematics, constitutive, and assembly
//! code.
//!
//! Geometry is stored in 3-vectors regardless of the spatial dimension; 2D
//! (plane strain) runs simply keep the z components at zero and pad tensors
//! that must stay invertible (shape tensor, deformation gradient) with an
//! identity out-of-plane block. Stress and strain are always full symmetric
//! 3x3 tensors (plane strain carries a nonzero sigma_zz).

use nalgebra::{Matrix3, Vector3};

pub type Vec3 = Vector3<f64>;
pub type Mat3 = Matrix3<f64>;

/// Symmetric part of a tensor.
#[inline]
pub fn sym(m: &Mat3) -> Mat3 {
    (m + m.transpose()) * 0.5
}

/// Deviatoric part of a tensor.
#[inline]
pub fn dev(m: &Mat3) -> Mat3 {
    m - Mat3::identity() * (m.trace() / 3.0)
}

/// Frobenius double contraction `a : b`.
#[inline]
pub fn ddot(a: &Mat3, b: &Mat3) -> f64 {
    a.component_mul(b).sum()
}

/// von Mises equivalent deviatoric strain `sqrt(2/3) * ||dev e||`, used for
/// the equivalent plastic shear strain output field.
#[inline]
pub fn equivalent_shear_strain(e: &Mat3) -> f64 {
    (2.0 / 3.0_f64).sqrt() * dev(e).norm()
}

/// Mean stress `tr(s)/3` (tension positive).
#[inline]
pub fn mean_stress(s: &Mat3) -> f64 {
    s.trace() / 3.0
}

/// Deviator stress invariant `q = sqrt(3/2) ||dev s||`.
#[inline]
pub fn deviator_stress(s: &Mat3) -> f64 {
    (1.5_f64).sqrt() * dev(s).norm()
}

/// Rank-4 tensor mapping 3x3 tensors to 3x3 tensors, stored flat.
///
/// Used for the elastoplastic consistent tangent and for the assembled
/// per-point sensitivity of the force state to the nonlocal deformation
/// gradient. No symmetry is assumed.
#[derive(Clone, Debug)]
pub struct Tangent4(pub [f64; 81]);

impl Tangent4 {
    #[inline]
    pub fn zeros() -> Self {
        Tangent4([0.0; 81])
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize, l: usize) -> f64 {
        self.0[((i * 3 + j) * 3 + k) * 3 + l]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize, l: usize) -> &mut f64 {
        &mut self.0[((i * 3 + j) * 3 + k) * 3 + l]
    }

    /// Isotropic elastic stiffness `(K - 2G/3) I⊗I + 2G II_sym`.
    pub fn isotropic_elastic(k_bulk: f64, g_shear: f64) -> Self {
        let lambda = k_bulk - 2.0 * g_shear / 3.0;
        let mut c = Tangent4::zeros();
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in 0..3 {
                        let mut v = 0.0;
                        if i == j && k == l {
                            v += lambda;
                        }
                        if i == k && j == l {
                            v += g_shear;
                        }
                        if i == l && j == k {
                            v += g_shear;
                        }
                        *c.at_mut(i, j, k, l) = v;
                    }
                }
            }
        }
        c
    }

    /// Contract with a tensor: `(C : e)_ij = C_ijkl e_kl`.
    pub fn contract(&self, e: &Mat3) -> Mat3 {
        let mut out = Mat3::zeros();
        for i in 0..3 {
            for j in 0..3 {
                let mut v = 0.0;
                for k in 0..3 {
                    for l in 0..3 {
                        v += self.at(i, j, k, l) * e[(k, l)];
                    }
                }
                out[(i, j)] = v;
            }
        }
        out
    }

    /// Add `w * a⊗b` (i.e. `C_ijkl += w a_ij b_kl`).
    pub fn add_outer(&mut self, w: f64, a: &Mat3, b: &Mat3) {
        for i in 0..3 {
            for j in 0..3 {
                let aij = w * a[(i, j)];
                if aij == 0.0 {
                    continue;
                }
                for k in 0..3 {
                    for l in 0..3 {
                        *self.at_mut(i, j, k, l) += aij * b[(k, l)];
                    }
                }
            }
        }
    }

    /// Symmetrize the last index pair in place, turning a map over general
    /// tensors into one that sees only the symmetric part of its argument.
    pub fn symmetrize_minor(&mut self) {
        for i in 0..3 {
            for j in 0..3 {
                for k in 0..3 {
                    for l in (k + 1)..3 {
                        let a = self.at(i, j, k, l);
                        let b = self.at(i, j, l, k);
                        let m = 0.5 * (a + b);
                        *self.at_mut(i, j, k, l) = m;
                        *self.at_mut(i, j, l, k) = m;
                    }
                }
            }
        }
    }
}

/// Inverse of a padded tensor, with its determinant. Returns `None` when the
/// determinant magnitude is below `tiny`.
pub fn invert_padded(m: &Mat3, tiny: f64) -> Option<(Mat3, f64)> {
    let det = m.determinant();
    if det.abs() <= tiny {
        return None;
    }
    m.try_inverse().map(|inv| (inv, det))
}

/// Condition-number estimate (2-norm, via symmetric eigenvalues) for the
/// shape-tensor SPD check.
pub fn spd_condition(m: &Mat3) -> f64 {
    let eig = m.symmetric_eigenvalues();
    let max = eig.amax();
    let min = eig.iter().cloned().fold(f64::INFINITY, f64::min);
    if min <= 0.0 {
        f64::INFINITY
    } else {
        max / min
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn isotropic_elastic_matches_lame_form() {
        let c = Tangent4::isotropic_elastic(1.0e7, 4.0e6);
        // hydrostatic strain maps to 3K * e_v/3 per diagonal
        let e = Mat3::identity() * 1e-3;
        let s = c.contract(&e);
        assert_relative_eq!(s[(0, 0)], 3.0 * 1.0e7 * 1e-3 / 3.0 * 3.0, epsilon = 1e-9);
        assert_relative_eq!(s[(0, 1)], 0.0, epsilon = 1e-12);
        // pure shear maps through 2G
        let mut g = Mat3::zeros();
        g[(0, 1)] = 1e-3;
        g[(1, 0)] = 1e-3;
        let s = c.contract(&g);
        assert_relative_eq!(s[(0, 1)], 2.0 * 4.0e6 * 1e-3, epsilon = 1e-9);
    }

    #[test]
    fn invariants() {
        let mut m = Mat3::zeros();
        m[(0, 0)] = -3.0;
        m[(1, 1)] = -1.0;
        m[(2, 2)] = -2.0;
        m[(0, 1)] = 0.5;
        m[(1, 0)] = 0.5;
        assert_relative_eq!(mean_stress(&m), -2.0);
        let d = dev(&m);
        assert_relative_eq!(d.trace(), 0.0, epsilon = 1e-14);
        assert_relative_eq!(deviator_stress(&m), (1.5f64).sqrt() * d.norm());
    }

    #[test]
    fn padded_inverse_roundtrip() {
        let mut m = Mat3::identity();
        m[(0, 0)] = 4.0;
        m[(1, 1)] = 9.0;
        m[(0, 1)] = 1.0;
        m[(1, 0)] = 1.0;
        let (inv, det) = invert_padded(&m, 1e-300).unwrap();
        assert_relative_eq!(det, 35.0);
        let id = m * inv;
        assert_relative_eq!((id - Mat3::identity()).norm(), 0.0, epsilon = 1e-12);
    }
}
