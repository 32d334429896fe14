//! Material parameters and the modified Cam-Clay stress update: elastic
//! predictor, implicit two-invariant return map with bilogarithmic
//! hardening, and the algorithmically consistent tangent.
//!
//! Conventions: tension-positive stress, so mean stress and preconsolidation
//! pressure are negative in compression. Yield surface
//! `f = p (p - pc) + q^2 / M^2` with associative flow.

use crate::error::{Error, Result};
use crate::math::{dev, deviator_stress, mean_stress, Mat3, Tangent4};
use crate::state::PointState;
use serde::{Deserialize, Serialize};

/// Standard gravity used for hydraulic-conductivity head conversion
/// (independent of the scenario's body-force vector).
pub const STANDARD_GRAVITY: f64 = 9.81;

/// Pore-fluid mobility specification.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum FlowParams {
    /// Hydraulic conductivity k (m/s); mobility = k / (rho_w g).
    HydraulicConductivity { k: f64 },
    /// Intrinsic permeability kappa (m^2) and dynamic viscosity mu (Pa s);
    /// mobility = kappa / mu.
    IntrinsicPermeability { kappa: f64, mu: f64 },
}

/// Solid-skeleton, flow, and density parameters.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MaterialParams {
    pub k_bulk: f64,
    pub g_shear: f64,
    /// Slope of the critical state line.
    pub m_cs: f64,
    /// Compression index (bilogarithmic).
    pub lambda_c: f64,
    /// Swelling index.
    pub kappa_s: f64,
    /// Specific volume at unit preconsolidation pressure.
    pub v0: f64,
    pub rho_s: f64,
    pub rho_w: f64,
    /// Pore-water bulk modulus.
    pub k_w: f64,
    /// Initial porosity.
    pub phi0: f64,
    pub flow: FlowParams,
    /// Body-force vector (m/s^2), e.g. [0, -9.81] with gravity on.
    pub gravity: [f64; 3],
    /// Plastic response switch; false keeps the elastic predictor.
    #[serde(default = "default_true")]
    pub plastic: bool,
    /// Relative-permeability floor.
    #[serde(default = "default_kr_min")]
    pub kr_min: f64,
    /// Zero-energy-mode control coefficient (dimensionless, 0 disables).
    #[serde(default)]
    pub stabilization: f64,
    /// Fraction of the flux divergence carried by an equivalent bond-based
    /// (two-point) flux instead of the correspondence form. Both forms are
    /// consistent; the bond form damps the odd-even pressure mode that the
    /// correspondence gradient cannot see. 0 disables.
    #[serde(default)]
    pub stabilization_flow: f64,
}

fn default_true() -> bool {
    true
}

fn default_kr_min() -> f64 {
    crate::retention::KR_MIN_DEFAULT
}

impl MaterialParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.k_bulk > 0.0 && self.g_shear > 0.0 && self.k_w > 0.0) {
            return Err(Error::config("moduli K, G, K_w must be positive"));
        }
        if !(self.phi0 > 0.0 && self.phi0 < 1.0) {
            return Err(Error::config("porosity must lie in (0, 1)"));
        }
        if self.plastic {
            if !(self.m_cs > 0.0) {
                return Err(Error::config("critical state slope M must be positive"));
            }
            if !(self.lambda_c > self.kappa_s && self.kappa_s > 0.0) {
                return Err(Error::config(
                    "compression/swelling indices must satisfy lambda_c > kappa_s > 0",
                ));
            }
        }
        match self.flow {
            FlowParams::HydraulicConductivity { k } if !(k > 0.0) => {
                Err(Error::config("hydraulic conductivity must be positive"))
            }
            FlowParams::IntrinsicPermeability { kappa, mu } if !(kappa > 0.0 && mu > 0.0) => {
                Err(Error::config("permeability and viscosity must be positive"))
            }
            _ => Ok(()),
        }
    }

    /// Saturated mobility (m^2 / Pa / s); relative permeability multiplies it.
    pub fn mobility(&self) -> f64 {
        match self.flow {
            FlowParams::HydraulicConductivity { k } => k / (self.rho_w * STANDARD_GRAVITY),
            FlowParams::IntrinsicPermeability { kappa, mu } => kappa / mu,
        }
    }

    pub fn gravity_vec(&self) -> crate::math::Vec3 {
        crate::math::Vec3::new(self.gravity[0], self.gravity[1], self.gravity[2])
    }

    /// Constrained (oedometric) modulus K + 4G/3, used for row equilibration
    /// and the consolidation-coefficient oracles.
    pub fn constrained_modulus(&self) -> f64 {
        self.k_bulk + 4.0 * self.g_shear / 3.0
    }

    pub fn elastic_tangent(&self) -> Tangent4 {
        Tangent4::isotropic_elastic(self.k_bulk, self.g_shear)
    }
}

/// `f = p (p - pc) + q^2 / M^2`; f <= 0 is elastic or on-surface.
#[inline]
pub fn yield_function(p_bar: f64, q: f64, pc: f64, m_cs: f64) -> f64 {
    p_bar * (p_bar - pc) + q * q / (m_cs * m_cs)
}

/// Bilogarithmic hardening `pc = pc_n exp(-v0 d_eps_v_p / (lambda_c - kappa_s))`,
/// optionally scaled by a user-supplied suction multiplier (identity when
/// absent). Plastic compaction (negative increment) deepens pc.
pub fn hardening_update(
    pc_n: f64,
    d_eps_v_p: f64,
    params: &MaterialParams,
    suction: f64,
    multiplier: Option<&(dyn Fn(f64) -> f64 + Sync)>,
) -> f64 {
    let theta = -params.v0 / (params.lambda_c - params.kappa_s);
    let scale = multiplier.map_or(1.0, |m| m(suction));
    pc_n * (theta * d_eps_v_p).exp() * scale
}

/// Outcome of a stress update.
pub struct ReturnMapResult {
    pub stress: Mat3,
    pub eps_p: Mat3,
    pub eps_v_p: f64,
    pub pc: f64,
    pub tangent: Tangent4,
    pub plastic: bool,
    pub iterations: usize,
}

const TOL_F: f64 = 1e-10;
const MAX_LOCAL_ITER: usize = 50;

/// Elastic predictor / plastic corrector update.
///
/// `eps_total` is the small-strain tensor from the nonlocal deformation
/// gradient, measured from the configuration in which `sigma_init` holds.
/// The local system is solved for (p, pc, dlambda) by Newton with a nested
/// scalar bisection fallback; the returned tangent is the exact linearization
/// of the discrete update.
pub fn return_map(
    point: usize,
    params: &MaterialParams,
    sigma_init: &Mat3,
    eps_total: &Mat3,
    state_n: &PointState,
    suction_mult: f64,
) -> Result<ReturnMapResult> {
    let (kb, g, m) = (params.k_bulk, params.g_shear, params.m_cs);
    let eps_e_tr = eps_total - state_n.eps_p;
    let sigma_tr = sigma_init + params.elastic_tangent().contract(&eps_e_tr);
    let p_tr = mean_stress(&sigma_tr);
    let s_tr = dev(&sigma_tr);
    let q_tr = deviator_stress(&sigma_tr);

    let pc_n = state_n.pc;
    let ms = suction_mult;
    let f_tr = yield_function(p_tr, q_tr, ms * pc_n, m);
    let tol = TOL_F * (1.0 + pc_n * pc_n);

    if !params.plastic || f_tr <= tol {
        return Ok(ReturnMapResult {
            stress: sigma_tr,
            eps_p: state_n.eps_p,
            eps_v_p: state_n.eps_v_p,
            pc: pc_n,
            tangent: params.elastic_tangent(),
            plastic: false,
            iterations: 0,
        });
    }

    let theta = -params.v0 / (params.lambda_c - params.kappa_s);
    let c = 6.0 * g / (m * m);

    // residuals of the local system at (p, pc, dl)
    let residuals = |p: f64, pc: f64, dl: f64| -> [f64; 3] {
        let flow_v = 2.0 * p - ms * pc;
        let a = 1.0 / (1.0 + c * dl);
        let q = q_tr * a;
        [
            p - p_tr + kb * dl * flow_v,
            pc - pc_n * (theta * dl * flow_v).exp(),
            p * (p - ms * pc) + q * q / (m * m),
        ]
    };

    let mut p = p_tr;
    let mut pc = pc_n;
    let mut dl = 0.0;
    let mut converged = false;
    let mut iters = 0;

    for it in 0..MAX_LOCAL_ITER {
        iters = it;
        let r = residuals(p, pc, dl);
        if r[0].abs() <= tol.sqrt() * (1.0 + p_tr.abs())
            && r[1].abs() <= tol.sqrt() * (1.0 + pc_n.abs())
            && r[2].abs() <= tol
        {
            converged = true;
            break;
        }
        let jac = local_jacobian(p, pc, dl, pc_n, theta, kb, c, m, ms, q_tr);
        let det = jac.determinant();
        if det.abs() < 1e-300 {
            break;
        }
        let delta = jac
            .try_inverse()
            .map(|inv| inv * nalgebra::Vector3::new(r[0], r[1], r[2]));
        let Some(delta) = delta else { break };
        // damped update keeps dl nonnegative
        let mut lambda = 1.0;
        if dl - delta[2] < 0.0 && delta[2] > 0.0 {
            lambda = (dl / delta[2]).min(1.0) * 0.9;
            if lambda < 1e-12 {
                lambda = 0.5;
            }
        }
        p -= lambda * delta[0];
        pc -= lambda * delta[1];
        dl = (dl - lambda * delta[2]).max(0.0);
    }

    if !converged {
        // nested fallback: bracket dl, solving (p, pc) inside
        match nested_solve(p_tr, q_tr, pc_n, theta, kb, c, m, ms, tol) {
            Some((ps, pcs, dls, extra)) => {
                p = ps;
                pc = pcs;
                dl = dls;
                iters += extra;
            }
            None => {
                let r = residuals(p, pc, dl);
                return Err(Error::ReturnMap {
                    point,
                    iterations: MAX_LOCAL_ITER,
                    residual: r[2].abs(),
                });
            }
        }
    }

    let a = 1.0 / (1.0 + c * dl);
    let s = s_tr * a;
    let stress = Mat3::identity() * p + s;
    let flow_v = 2.0 * p - ms * pc;
    let d_eps_v_p = dl * flow_v;
    // deviatoric plastic flow: 3 s / M^2
    let d_eps_p = Mat3::identity() * (d_eps_v_p / 3.0) + s * (3.0 * dl / (m * m));
    let eps_p = state_n.eps_p + d_eps_p;

    let tangent = consistent_tangent(p, pc, dl, pc_n, theta, kb, g, c, m, ms, q_tr, &s_tr);

    Ok(ReturnMapResult {
        stress,
        eps_p,
        eps_v_p: state_n.eps_v_p + d_eps_v_p,
        pc,
        tangent,
        plastic: true,
        iterations: iters + 1,
    })
}

#[allow(clippy::too_many_arguments)]
fn local_jacobian(
    p: f64,
    pc: f64,
    dl: f64,
    pc_n: f64,
    theta: f64,
    kb: f64,
    c: f64,
    m: f64,
    ms: f64,
    q_tr: f64,
) -> Mat3 {
    let flow_v = 2.0 * p - ms * pc;
    let e = pc_n * (theta * dl * flow_v).exp();
    let a = 1.0 / (1.0 + c * dl);
    let q = q_tr * a;
    let mut j = Mat3::zeros();
    j[(0, 0)] = 1.0 + 2.0 * kb * dl;
    j[(0, 1)] = -kb * dl * ms;
    j[(0, 2)] = kb * flow_v;
    j[(1, 0)] = -2.0 * e * theta * dl;
    j[(1, 1)] = 1.0 + e * theta * dl * ms;
    j[(1, 2)] = -e * theta * flow_v;
    j[(2, 0)] = 2.0 * p - ms * pc;
    j[(2, 1)] = -p * ms;
    j[(2, 2)] = -2.0 * q * q * c * a / (m * m);
    j
}

/// Scalar fallback: for a given dl solve the (p, pc) pair by 2x2 Newton, then
/// bisect the yield residual in dl. f(0) > 0 by construction.
#[allow(clippy::too_many_arguments)]
fn nested_solve(
    p_tr: f64,
    q_tr: f64,
    pc_n: f64,
    theta: f64,
    kb: f64,
    c: f64,
    m: f64,
    ms: f64,
    tol: f64,
) -> Option<(f64, f64, f64, usize)> {
    let mut work = 0usize;
    let solve_inner = |dl: f64, work: &mut usize| -> Option<(f64, f64)> {
        let mut p = p_tr;
        let mut pc = pc_n;
        for _ in 0..100 {
            *work += 1;
            let flow_v = 2.0 * p - ms * pc;
            let e = pc_n * (theta * dl * flow_v).exp();
            let r0 = p - p_tr + kb * dl * flow_v;
            let r1 = pc - e;
            if r0.abs() <= 1e-12 * (1.0 + p_tr.abs()) && r1.abs() <= 1e-12 * (1.0 + pc_n.abs()) {
                return Some((p, pc));
            }
            let j00 = 1.0 + 2.0 * kb * dl;
            let j01 = -kb * dl * ms;
            let j10 = -2.0 * e * theta * dl;
            let j11 = 1.0 + e * theta * dl * ms;
            let det = j00 * j11 - j01 * j10;
            if det.abs() < 1e-300 {
                return None;
            }
            p -= (j11 * r0 - j01 * r1) / det;
            pc -= (-j10 * r0 + j00 * r1) / det;
        }
        None
    };
    let f_of = |dl: f64, work: &mut usize| -> Option<f64> {
        let (p, pc) = solve_inner(dl, work)?;
        let a = 1.0 / (1.0 + c * dl);
        let q = q_tr * a;
        Some(yield_function(p, q, ms * pc, m))
    };

    let mut lo = 0.0;
    let mut hi = 1.0 / (kb.max(c) * 1e3);
    let mut f_hi = f_of(hi, &mut work)?;
    let mut grow = 0;
    while f_hi > 0.0 && grow < 200 {
        hi *= 2.0;
        f_hi = f_of(hi, &mut work)?;
        grow += 1;
    }
    if f_hi > 0.0 {
        return None;
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        let f_mid = f_of(mid, &mut work)?;
        if f_mid.abs() <= tol {
            let (p, pc) = solve_inner(mid, &mut work)?;
            return Some((p, pc, mid, work));
        }
        if f_mid > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let mid = 0.5 * (lo + hi);
    let (p, pc) = solve_inner(mid, &mut work)?;
    let a = 1.0 / (1.0 + c * mid);
    if yield_function(p, q_tr * a, ms * pc, m).abs() <= tol * 1e3 {
        Some((p, pc, mid, work))
    } else {
        None
    }
}

/// Exact linearization of the converged return map with respect to total
/// strain.
#[allow(clippy::too_many_arguments)]
fn consistent_tangent(
    p: f64,
    pc: f64,
    dl: f64,
    pc_n: f64,
    theta: f64,
    kb: f64,
    g: f64,
    c: f64,
    m: f64,
    ms: f64,
    q_tr: f64,
    s_tr: &Mat3,
) -> Tangent4 {
    let a = 1.0 / (1.0 + c * dl);
    let jac = local_jacobian(p, pc, dl, pc_n, theta, kb, c, m, ms, q_tr);
    let inv = jac.try_inverse().expect("local Jacobian invertible at solution");
    // responses of (p, pc, dl) to trial invariants
    let v = inv * nalgebra::Vector3::new(1.0, 0.0, 0.0); // d/d p_tr
    let q = q_tr * a;
    let w = inv * nalgebra::Vector3::new(0.0, 0.0, -2.0 * q * a / (m * m)); // d/d q_tr

    let eye = Mat3::identity();
    let mut t = Tangent4::zeros();
    // dp term: I (x) (v1 K I + w1 (3G/q_tr) s_tr)
    t.add_outer(v[0] * kb, &eye, &eye);
    if q_tr > 0.0 {
        t.add_outer(w[0] * 3.0 * g / q_tr, &eye, s_tr);
    }
    // A ds_tr term: 2 G A deviatoric projector
    let two_ga = 2.0 * g * a;
    for i in 0..3 {
        for j in 0..3 {
            for k in 0..3 {
                for l in 0..3 {
                    let mut val = 0.0;
                    if i == k && j == l {
                        val += 0.5;
                    }
                    if i == l && j == k {
                        val += 0.5;
                    }
                    if i == j && k == l {
                        val -= 1.0 / 3.0;
                    }
                    *t.at_mut(i, j, k, l) += two_ga * val;
                }
            }
        }
    }
    // s_tr dA term: -c A^2 s_tr (x) (v3 K I + w3 (3G/q_tr) s_tr)
    if q_tr > 0.0 {
        let f = -c * a * a;
        t.add_outer(f * v[2] * kb, s_tr, &eye);
        t.add_outer(f * w[2] * 3.0 * g / q_tr, s_tr, s_tr);
    }
    t.symmetrize_minor();
    t
}
