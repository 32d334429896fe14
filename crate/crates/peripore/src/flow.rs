//! Generalized Darcy flux and the correspondence flow state.

use crate::camclay::MaterialParams;
use crate::math::{Mat3, Vec3};

/// Volume flux of pore water (m/s):
/// `q_w = -k_r * mobility * (grad p - rho_w g)`.
///
/// The mobility converts the hydraulic conductivity through standard gravity
/// (`k / (rho_w g0)`), so a unit head gradient with k_r = 1 drains at k even
/// in runs with the body-force vector switched off. The `rho_w g` term makes
/// hydrostatic fields flux-free and carries gravity-driven drainage.
pub fn darcy_flux(grad_p: &Vec3, k_r: f64, params: &MaterialParams) -> Vec3 {
    -(grad_p - params.gravity_vec() * params.rho_w) * (k_r * params.mobility())
}

/// Scalar volume-flow state `Q<xi> = omega J (q_w . K^-1 xi)`.
pub fn flow_state(omega: f64, xi: &Vec3, q_w: &Vec3, jacobian: f64, k_inv: &Mat3) -> f64 {
    omega * jacobian * q_w.dot(&(k_inv * xi))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::camclay::FlowParams;
    use approx::assert_relative_eq;

    fn params(gravity: [f64; 3]) -> MaterialParams {
        MaterialParams {
            k_bulk: 1e7,
            g_shear: 5e6,
            m_cs: 1.0,
            lambda_c: 0.1,
            kappa_s: 0.02,
            v0: 2.0,
            rho_s: 2000.0,
            rho_w: 1000.0,
            k_w: 2.2e9,
            phi0: 0.4,
            flow: FlowParams::HydraulicConductivity { k: 1e-8 },
            gravity,
            plastic: false,
            kr_min: 1e-8,
            stabilization: 0.0,
            stabilization_flow: 0.0,
        }
    }

    #[test]
    fn zero_gradient_zero_gravity_is_flux_free() {
        let q = darcy_flux(&Vec3::zeros(), 1.0, &params([0.0; 3]));
        assert_eq!(q, Vec3::zeros());
    }

    #[test]
    fn hydrostatic_equilibrium_is_flux_free() {
        let p = params([0.0, -9.81, 0.0]);
        let grad = p.gravity_vec() * p.rho_w;
        let q = darcy_flux(&grad, 0.7, &p);
        assert!(q.norm() < 1e-20);
    }

    #[test]
    fn unit_head_gradient_drains_at_k() {
        // grad p = (rho_w g0, 0, 0) with gravity off: |q| = k
        let p = params([0.0; 3]);
        let q = darcy_flux(&Vec3::new(1000.0 * 9.81, 0.0, 0.0), 1.0, &p);
        assert_relative_eq!(q.x, -1e-8, max_relative = 1e-12);
        assert_eq!(q.y, 0.0);
    }

    #[test]
    fn intrinsic_permeability_mobility() {
        let mut p = params([0.0; 3]);
        p.flow = FlowParams::IntrinsicPermeability {
            kappa: 4.5e-13,
            mu: 1e-3,
        };
        // equivalent hydraulic conductivity kappa rho g / mu
        let k_equiv = 4.5e-13 * 1000.0 * 9.81 / 1e-3;
        let q = darcy_flux(&Vec3::new(1000.0 * 9.81, 0.0, 0.0), 1.0, &p);
        assert_relative_eq!(q.x, -k_equiv, max_relative = 1e-12);
    }

    #[test]
    fn flow_state_zero_for_zero_flux() {
        let k_inv = Mat3::identity();
        assert_eq!(
            flow_state(1.0, &Vec3::new(1.0, 0.0, 0.0), &Vec3::zeros(), 1.0, &k_inv),
            0.0
        );
    }

    #[test]
    fn paired_bonds_cancel_for_constant_flux() {
        let k_inv = Mat3::identity() * 0.1;
        let q = Vec3::new(3.0e-6, -1.0e-6, 0.0);
        let xi = Vec3::new(1.0, 2.0, 0.0);
        let a = flow_state(1.0, &xi, &q, 1.0, &k_inv);
        let b = flow_state(1.0, &(-xi), &q, 1.0, &k_inv);
        assert_relative_eq!(a + b, 0.0, epsilon = 1e-18);
    }
}
