//! Nonlocal gradients from the correspondence formulas: deformation gradient,
//! pore-pressure gradient, and the nonlocal divergence used in the mass
//! balance.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::family::NeighborFamily;
use crate::math::{invert_padded, Mat3, Vec3};
use crate::shape::ShapeTensors;

/// Primary unknowns at one time level: displacement and pore-water pressure
/// per point (pressure is compression-positive; suction is negative p_w).
#[derive(Clone, Debug)]
pub struct DofVector {
    pub u: Vec<Vec3>,
    pub p_w: Vec<f64>,
}

impl DofVector {
    pub fn zeros(n: usize) -> Self {
        DofVector {
            u: vec![Vec3::zeros(); n],
            p_w: vec![0.0; n],
        }
    }

    pub fn len(&self) -> usize {
        self.u.len()
    }

    pub fn is_empty(&self) -> bool {
        self.u.is_empty()
    }
}

/// Nonlocal kinematic state at a point.
#[derive(Clone, Debug)]
pub struct NonlocalGradient {
    /// Deformation gradient (padded with the identity out of plane in 2D).
    pub f: Mat3,
    pub f_inv: Mat3,
    pub jacobian: f64,
    /// Nonlocal pressure gradient (Pa/m).
    pub grad_p: Vec3,
}

/// `F_i = (sum_j omega Y<xi> (x) xi V_j) K_i^-1` with `Y = xi + u_j - u_i`.
///
/// Returns an inverted-state error when `det F <= 0`; the global solver uses
/// that as a line-search trigger.
pub fn deformation_gradient(
    i: usize,
    dofs: &DofVector,
    cloud: &PointCloud,
    family: &NeighborFamily,
    shapes: &ShapeTensors,
) -> Result<(Mat3, Mat3, f64)> {
    let mut a = Mat3::zeros();
    let ui = dofs.u[i];
    for b in family.family(i) {
        let j = family.neighbors[b] as usize;
        let xi = family.bonds[b];
        let y = xi + dofs.u[j] - ui;
        let w = family.weights[b] * cloud.volumes[j];
        for r in 0..3 {
            for c in 0..3 {
                a[(r, c)] += w * y[r] * xi[c];
            }
        }
    }
    if cloud.dim == 2 {
        a[(2, 2)] = 1.0;
    }
    let f = a * shapes.k_inv[i];
    match invert_padded(&f, 0.0) {
        Some((f_inv, det)) if det > 0.0 => Ok((f, f_inv, det)),
        Some((_, det)) => Err(Error::InvertedState { point: i, jacobian: det }),
        None => Err(Error::InvertedState { point: i, jacobian: 0.0 }),
    }
}

/// `grad p_i = (sum_j omega (p_j - p_i) xi V_j) K_i^-1` (K symmetric).
pub fn pressure_gradient(
    i: usize,
    dofs: &DofVector,
    cloud: &PointCloud,
    family: &NeighborFamily,
    shapes: &ShapeTensors,
) -> Vec3 {
    let mut m = Vec3::zeros();
    let pi = dofs.p_w[i];
    for b in family.family(i) {
        let j = family.neighbors[b] as usize;
        let w = family.weights[b] * cloud.volumes[j];
        m += family.bonds[b] * (w * (dofs.p_w[j] - pi));
    }
    shapes.k_inv[i] * m
}

/// Discrete nonlocal divergence of a per-point vector field:
/// `sum_j [omega a_i . (K_i^-1 xi) - omega a_j . (K_j^-1 xi')] V_j` with
/// `xi' = -xi`.
pub fn nonlocal_divergence(
    i: usize,
    field: &[Vec3],
    cloud: &PointCloud,
    family: &NeighborFamily,
    shapes: &ShapeTensors,
) -> f64 {
    let mut div = 0.0;
    let gi = shapes.k_inv[i] * field[i];
    for b in family.family(i) {
        let j = family.neighbors[b] as usize;
        let xi = family.bonds[b];
        let w = family.weights[b] * cloud.volumes[j];
        // a_j . (K_j^-1 xi') = -a_j . (K_j^-1 xi); K symmetric
        let gj = shapes.k_inv[j] * field[j];
        div += w * (gi.dot(&xi) + gj.dot(&xi));
    }
    div
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{build_lattice, FaceLayers, LatticeSpec};
    use crate::family::{build_family, InfluenceFunction};
    use crate::shape::compute_shape_tensors;
    use approx::assert_relative_eq;

    struct Fixture {
        cloud: PointCloud,
        family: NeighborFamily,
        shapes: ShapeTensors,
        center: usize,
    }

    fn fixture(n: usize, dx: f64, delta: f64) -> Fixture {
        let cloud = build_lattice(&LatticeSpec {
            extents: vec![n as f64 * dx, n as f64 * dx],
            dx,
            thickness: 1.0,
            layers: FaceLayers::none(),
        })
        .unwrap();
        let family = build_family(&cloud, delta, InfluenceFunction::Unit).unwrap();
        let shapes = compute_shape_tensors(&cloud, &family).unwrap();
        let mid = n as f64 * dx / 2.0;
        let center = cloud
            .positions
            .iter()
            .position(|p| (p.x - mid).abs() < dx * 0.6 && (p.y - mid).abs() < dx * 0.6)
            .unwrap();
        Fixture {
            cloud,
            family,
            shapes,
            center,
        }
    }

    #[test]
    fn zero_displacement_gives_identity() {
        let fx = fixture(9, 1.0, 2.0);
        let dofs = DofVector::zeros(fx.cloud.len());
        for i in 0..fx.cloud.len() {
            let (f, _, j) = deformation_gradient(i, &dofs, &fx.cloud, &fx.family, &fx.shapes).unwrap();
            assert!((f - Mat3::identity()).norm() < 1e-14);
            assert_relative_eq!(j, 1.0, epsilon = 1e-14);
        }
    }

    #[test]
    fn affine_field_reproduced_exactly() {
        let fx = fixture(9, 0.5, 1.0);
        let mut a = Mat3::zeros();
        a[(0, 0)] = 0.01;
        a[(1, 1)] = -0.005;
        a[(0, 1)] = 0.003;
        let mut dofs = DofVector::zeros(fx.cloud.len());
        for (i, x) in fx.cloud.positions.iter().enumerate() {
            dofs.u[i] = a * x;
        }
        let (f, _, j) =
            deformation_gradient(fx.center, &dofs, &fx.cloud, &fx.family, &fx.shapes).unwrap();
        let expect = Mat3::identity() + a;
        assert!((f - expect).norm() <= 1e-12, "|F - (I+A)| = {:e}", (f - expect).norm());
        assert_relative_eq!(j, expect.determinant(), max_relative = 1e-12);
    }

    #[test]
    fn uniaxial_stretch_on_full_family() {
        // u_x = 0.01 x reproduces F_xx = 1.01 on any untruncated family.
        let fx = fixture(9, 1.0, 2.0);
        let mut dofs = DofVector::zeros(fx.cloud.len());
        for (i, x) in fx.cloud.positions.iter().enumerate() {
            dofs.u[i].x = 0.01 * x.x;
        }
        let (f, _, _) =
            deformation_gradient(fx.center, &dofs, &fx.cloud, &fx.family, &fx.shapes).unwrap();
        assert_relative_eq!(f[(0, 0)], 1.01, epsilon = 1e-13);
        assert_relative_eq!(f[(1, 1)], 1.0, epsilon = 1e-13);
        assert_relative_eq!(f[(0, 1)], 0.0, epsilon = 1e-14);
    }

    #[test]
    fn objectivity_under_superposed_rotation() {
        let fx = fixture(9, 0.5, 1.0);
        let mut a = Mat3::zeros();
        a[(0, 0)] = 0.02;
        a[(1, 0)] = 0.01;
        let mut dofs = DofVector::zeros(fx.cloud.len());
        for (i, x) in fx.cloud.positions.iter().enumerate() {
            dofs.u[i] = a * x;
        }
        let (f_base, _, _) =
            deformation_gradient(fx.center, &dofs, &fx.cloud, &fx.family, &fx.shapes).unwrap();

        let angle = 0.21_f64;
        let (s, c) = angle.sin_cos();
        let mut r = Mat3::identity();
        r[(0, 0)] = c;
        r[(0, 1)] = -s;
        r[(1, 0)] = s;
        r[(1, 1)] = c;
        // rotate the deformed positions: y = R (x + u) => u' = R(x+u) - x
        let mut rotated = DofVector::zeros(fx.cloud.len());
        for (i, x) in fx.cloud.positions.iter().enumerate() {
            rotated.u[i] = r * (x + dofs.u[i]) - x;
        }
        let (f_rot, _, _) =
            deformation_gradient(fx.center, &rotated, &fx.cloud, &fx.family, &fx.shapes).unwrap();
        assert!((f_rot - r * f_base).norm() <= 1e-10 * f_base.norm());
    }

    #[test]
    fn pressure_gradient_linear_exactness() {
        let fx = fixture(9, 0.5, 1.0);
        let mut dofs = DofVector::zeros(fx.cloud.len());
        // uniform field -> zero gradient
        for p in dofs.p_w.iter_mut() {
            *p = 123.0;
        }
        let g = pressure_gradient(fx.center, &dofs, &fx.cloud, &fx.family, &fx.shapes);
        assert!(g.norm() < 1e-12);
        // linear field -> exact gradient
        let grad = Vec3::new(250.0, -40.0, 0.0);
        for (i, x) in fx.cloud.positions.iter().enumerate() {
            dofs.p_w[i] = grad.dot(x);
        }
        let g = pressure_gradient(fx.center, &dofs, &fx.cloud, &fx.family, &fx.shapes);
        assert!((g - grad).norm() <= 1e-12 * grad.norm());
    }

    #[test]
    fn quadratic_pressure_symmetric_point_has_zero_gradient() {
        // p = x^2 about a symmetric interior point: the + and - bonds cancel.
        let fx = fixture(9, 1.0, 2.0);
        let x0 = fx.cloud.positions[fx.center];
        let mut dofs = DofVector::zeros(fx.cloud.len());
        for (i, x) in fx.cloud.positions.iter().enumerate() {
            dofs.p_w[i] = (x.x - x0.x).powi(2);
        }
        let g = pressure_gradient(fx.center, &dofs, &fx.cloud, &fx.family, &fx.shapes);
        assert!(g.norm() < 1e-12);
    }

    #[test]
    fn divergence_of_linear_field_is_exact_inside() {
        let fx = fixture(11, 0.5, 1.0);
        // a = c * x => div a = dim * c
        let c = 0.37;
        let field: Vec<Vec3> = fx.cloud.positions.iter().map(|x| x * c).collect();
        let div = nonlocal_divergence(fx.center, &field, &fx.cloud, &fx.family, &fx.shapes);
        assert_relative_eq!(div, 2.0 * c, epsilon = 1e-10);
    }

    #[test]
    fn divergence_trivia() {
        let fx = fixture(9, 1.0, 2.0);
        let zeros = vec![Vec3::zeros(); fx.cloud.len()];
        assert_eq!(
            nonlocal_divergence(fx.center, &zeros, &fx.cloud, &fx.family, &fx.shapes),
            0.0
        );
        let consts = vec![Vec3::new(1.0, -2.0, 0.0); fx.cloud.len()];
        let div = nonlocal_divergence(fx.center, &consts, &fx.cloud, &fx.family, &fx.shapes);
        assert!(div.abs() < 1e-13);
    }

    #[test]
    fn inverted_state_is_reported() {
        let fx = fixture(5, 1.0, 2.0);
        let mut dofs = DofVector::zeros(fx.cloud.len());
        // collapse x strongly enough to invert
        for (i, x) in fx.cloud.positions.iter().enumerate() {
            dofs.u[i].x = -1.5 * x.x;
        }
        let err =
            deformation_gradient(fx.center, &dofs, &fx.cloud, &fx.family, &fx.shapes).unwrap_err();
        assert!(matches!(err, Error::InvertedState { .. }));
    }
}
