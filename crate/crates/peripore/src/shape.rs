//! Peridynamic shape tensors `K = sum omega xi (x) xi V` and their inverses.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::family::NeighborFamily;
use crate::math::{invert_padded, spd_condition, Mat3};
use rayon::prelude::*;

/// Shape tensor and cached inverse per point. For 2D clouds the out-of-plane
/// block is padded with identity so determinants and inverses are uniform
/// across dimensions.
#[derive(Clone, Debug)]
pub struct ShapeTensors {
    pub k: Vec<Mat3>,
    pub k_inv: Vec<Mat3>,
}

const MAX_CONDITION: f64 = 1e12;

pub fn compute_shape_tensors(cloud: &PointCloud, family: &NeighborFamily) -> Result<ShapeTensors> {
    let results: Vec<Result<(Mat3, Mat3)>> = (0..cloud.len())
        .into_par_iter()
        .map(|i| {
            let mut k = Mat3::zeros();
            for b in family.family(i) {
                let j = family.neighbors[b] as usize;
                let xi = family.bonds[b];
                let w = family.weights[b] * cloud.volumes[j];
                // K += w xi (x) xi
                for a in 0..3 {
                    for c in 0..3 {
                        k[(a, c)] += w * xi[a] * xi[c];
                    }
                }
            }
            if cloud.dim == 2 {
                k[(2, 2)] = 1.0;
            }
            let cond = spd_condition(&k);
            if !cond.is_finite() || cond > MAX_CONDITION {
                return Err(Error::geometry(format!(
                    "singular or near-singular shape tensor at point {i} (condition {cond:.3e}); \
                     bonds are rank-deficient"
                )));
            }
            let (inv, _det) = invert_padded(&k, 0.0)
                .ok_or_else(|| Error::geometry(format!("shape tensor at point {i} not invertible")))?;
            Ok((k, inv))
        })
        .collect();

    let mut k = Vec::with_capacity(cloud.len());
    let mut k_inv = Vec::with_capacity(cloud.len());
    for r in results {
        let (ki, kinvi) = r?;
        k.push(ki);
        k_inv.push(kinvi);
    }
    Ok(ShapeTensors { k, k_inv })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{build_lattice, FaceLayers, LatticeSpec, PointCloud};
    use crate::family::{build_family, InfluenceFunction};
    use crate::math::Vec3;
    use approx::assert_relative_eq;

    fn lattice(nx: usize, ny: usize, dx: f64) -> PointCloud {
        build_lattice(&LatticeSpec {
            extents: vec![nx as f64 * dx, ny as f64 * dx],
            dx,
            thickness: 1.0,
            layers: FaceLayers::none(),
        })
        .unwrap()
    }

    /// Direct-summation oracle for a full interior family at m = 2 on a unit
    /// 2D lattice: axis bonds (+-1, 0), (+-2, 0), (0, +-1), (0, +-2) and
    /// diagonals (+-1, +-1) give K_xx = K_yy = 2*1 + 2*4 + 4*1 = 14, K_xy = 0.
    #[test]
    fn interior_shape_tensor_matches_hand_sum() {
        let cloud = lattice(9, 9, 1.0);
        let fam = build_family(&cloud, 2.0, InfluenceFunction::Unit).unwrap();
        let shapes = compute_shape_tensors(&cloud, &fam).unwrap();
        let center = cloud
            .positions
            .iter()
            .position(|p| (p.x - 4.5).abs() < 1e-12 && (p.y - 4.5).abs() < 1e-12)
            .unwrap();
        let k = shapes.k[center];
        assert_relative_eq!(k[(0, 0)], 14.0, epsilon = 1e-12);
        assert_relative_eq!(k[(1, 1)], 14.0, epsilon = 1e-12);
        assert_relative_eq!(k[(0, 1)], 0.0, epsilon = 1e-12);
        // K * K^-1 = I to tight tolerance
        let id = shapes.k[center] * shapes.k_inv[center];
        assert!((id - Mat3::identity()).norm() < 1e-12);
    }

    #[test]
    fn symmetric_and_spd_everywhere() {
        let cloud = lattice(6, 8, 0.25);
        let fam = build_family(&cloud, 0.5, InfluenceFunction::Unit).unwrap();
        let shapes = compute_shape_tensors(&cloud, &fam).unwrap();
        for k in &shapes.k {
            assert!((k - k.transpose()).norm() < 1e-14 * k.norm().max(1.0));
            let eig = k.symmetric_eigenvalues();
            assert!(eig.iter().all(|&e| e > 0.0));
        }
    }

    /// Rotating the cloud by R maps K -> R K R^T; translation leaves K alone.
    /// The horizon avoids bonds at exactly |xi| = delta, whose membership
    /// would be roundoff-fragile under rotation.
    #[test]
    fn frame_transformation() {
        let cloud = lattice(7, 7, 0.5);
        let fam = build_family(&cloud, 1.05, InfluenceFunction::Unit).unwrap();
        let base = compute_shape_tensors(&cloud, &fam).unwrap();

        let angle = 0.37_f64;
        let (s, c) = angle.sin_cos();
        let mut r = Mat3::identity();
        r[(0, 0)] = c;
        r[(0, 1)] = -s;
        r[(1, 0)] = s;
        r[(1, 1)] = c;

        let mut rotated = cloud.clone();
        for p in &mut rotated.positions {
            *p = r * (*p) + Vec3::new(3.0, -2.0, 0.0);
        }
        let fam_r = build_family(&rotated, 1.05, InfluenceFunction::Unit).unwrap();
        let shapes_r = compute_shape_tensors(&rotated, &fam_r).unwrap();
        for i in 0..cloud.len() {
            let expect = r * base.k[i] * r.transpose();
            assert!(
                (shapes_r.k[i] - expect).norm() <= 1e-10 * expect.norm(),
                "rotation mismatch at point {i}"
            );
        }
    }

    #[test]
    fn collinear_bonds_are_singular_in_2d() {
        // A single row of points: all bonds along x, K_yy = 0.
        let cloud = lattice(6, 1, 1.0);
        let fam = build_family(&cloud, 2.0, InfluenceFunction::Unit).unwrap();
        let err = compute_shape_tensors(&cloud, &fam).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }
}
