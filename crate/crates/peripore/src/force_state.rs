//! Correspondence force states: effective (skeleton) and total (mixture)
//! bond forces from the point stress, saturation-weighted pore pressure, and
//! the nonlocal kinematics.

use crate::math::{Mat3, Vec3};

/// Force-state matrix `P K^-1` with `P = (sigma_eff - Sr_eff p_w I) J F^-T`;
/// the total force state on a bond is `T<xi> = omega (B xi)`. Holding the
/// matrix per point keeps the bond loop in the assembler a matrix-vector
/// product.
pub fn force_state_matrix(
    stress_eff: &Mat3,
    p_w: f64,
    sr_eff: f64,
    jacobian: f64,
    f_inv: &Mat3,
    k_inv: &Mat3,
) -> Mat3 {
    let total = stress_eff - Mat3::identity() * (sr_eff * p_w);
    total * (f_inv.transpose() * jacobian) * k_inv
}

/// Effective and total force states on one bond:
/// `T_eff = omega sigma_eff J F^-T K^-1 xi` and
/// `T = omega (sigma_eff - Sr_eff p_w I) J F^-T K^-1 xi`.
#[allow(clippy::too_many_arguments)]
pub fn effective_force_state(
    omega: f64,
    xi: &Vec3,
    stress_eff: &Mat3,
    p_w: f64,
    sr_eff: f64,
    jacobian: f64,
    f_inv: &Mat3,
    k_inv: &Mat3,
) -> (Vec3, Vec3) {
    let w = f_inv.transpose() * jacobian;
    let g = k_inv * xi;
    let t_eff = stress_eff * w * g * omega;
    let t_total = t_eff - w * g * (omega * sr_eff * p_w);
    (t_eff, t_total)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{build_lattice, FaceLayers, LatticeSpec};
    use crate::family::{build_family, InfluenceFunction};
    use crate::shape::compute_shape_tensors;

    #[test]
    fn zero_stress_zero_pressure_gives_zero_force() {
        let (t_eff, t) = effective_force_state(
            1.0,
            &Vec3::new(1.0, 0.0, 0.0),
            &Mat3::zeros(),
            0.0,
            1.0,
            1.0,
            &Mat3::identity(),
            &Mat3::identity(),
        );
        assert_eq!(t_eff, Vec3::zeros());
        assert_eq!(t, Vec3::zeros());
    }

    #[test]
    fn hydrostatic_stress_antiparallel_to_gradient_vector() {
        // sigma = -p I, dry: T = -p K^-1 xi
        let p_bar = 50e3;
        let k_inv = Mat3::identity() * 0.25;
        let xi = Vec3::new(1.0, 1.0, 0.0);
        let (_, t) = effective_force_state(
            1.0,
            &xi,
            &(Mat3::identity() * -p_bar),
            0.0,
            1.0,
            1.0,
            &Mat3::identity(),
            &k_inv,
        );
        let expect = k_inv * xi * -p_bar;
        assert!((t - expect).norm() < 1e-10);
    }

    /// Uniform stress on a full interior family self-equilibrates: the bond
    /// forces of the pair structure sum to zero.
    #[test]
    fn uniform_stress_patch_self_equilibrium() {
        let cloud = build_lattice(&LatticeSpec {
            extents: vec![9.0, 9.0],
            dx: 1.0,
            thickness: 1.0,
            layers: FaceLayers::none(),
        })
        .unwrap();
        let fam = build_family(&cloud, 2.0, InfluenceFunction::Unit).unwrap();
        let shapes = compute_shape_tensors(&cloud, &fam).unwrap();
        let center = cloud
            .positions
            .iter()
            .position(|p| (p.x - 4.5).abs() < 1e-9 && (p.y - 4.5).abs() < 1e-9)
            .unwrap();
        let mut stress = Mat3::zeros();
        stress[(0, 0)] = -84e3;
        stress[(1, 1)] = -123e3;
        stress[(0, 1)] = 17e3;
        stress[(1, 0)] = 17e3;
        let mut sum = Vec3::zeros();
        let mut scale = 0.0;
        for b in fam.family(center) {
            let j = fam.neighbors[b] as usize;
            let xi = fam.bonds[b];
            // T_i<xi> - T_j<xi'>: both points share the uniform state
            let (_, ti) = effective_force_state(
                fam.weights[b],
                &xi,
                &stress,
                -20e3,
                0.7,
                1.0,
                &Mat3::identity(),
                &shapes.k_inv[center],
            );
            let (_, tj) = effective_force_state(
                fam.weights[b],
                &(-xi),
                &stress,
                -20e3,
                0.7,
                1.0,
                &Mat3::identity(),
                &shapes.k_inv[j],
            );
            sum += (ti - tj) * cloud.volumes[j];
            scale += ti.norm() * cloud.volumes[j];
        }
        assert!(sum.norm() <= 1e-10 * scale, "patch imbalance {:e}", sum.norm());
    }
}
