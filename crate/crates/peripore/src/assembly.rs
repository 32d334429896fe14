//! Coupled residual and sparse-tangent assembly.
//!
//! Momentum rows are assembled in force units (residual density times point
//! volume); mass rows are the time-step-multiplied balance scaled by the
//! characteristic stiffness over the horizon so the coupled matrix is
//! comparably conditioned across the displacement and pressure blocks. The
//! tangent sparsity is the double-horizon pattern: points within `2 delta`
//! couple through shared neighbors.
//!
//! Assembly is deterministic: every matrix row is owned by one point (tied
//! rows are accumulated in fixed point order), bond loops run in sorted
//! neighbor order, and the parallel row pass writes disjoint slots.

use crate::bc::{ResolvedBcs, ResolvedTie};
use crate::camclay::{return_map, MaterialParams};
use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::family::{radius_lists, NeighborFamily};
use crate::flow::darcy_flux;
use crate::force_state::force_state_matrix;
use crate::kinematics::{deformation_gradient, pressure_gradient, DofVector};
use crate::math::{sym, Mat3, Tangent4, Vec3};
use crate::retention::{RetentionModel, Saturation};
use crate::shape::ShapeTensors;
use crate::state::PointState;
use faer::prelude::*;
use faer::sparse::SymbolicSparseColMat;
use rayon::prelude::*;

/// Geometry plus material bundle an assembler operates on.
pub struct Model {
    pub cloud: PointCloud,
    pub family: NeighborFamily,
    pub shapes: ShapeTensors,
    pub params: MaterialParams,
    pub retention: RetentionModel,
}

impl Model {
    pub fn n_points(&self) -> usize {
        self.cloud.len()
    }
}

/// Maps (point, component) to global equation indices. Components 0..dim are
/// displacements, component dim is pressure. Tied dofs share one equation.
#[derive(Clone, Debug)]
pub struct DofMap {
    pub dim: usize,
    pub n_points: usize,
    pub n_eqs: usize,
    eq: Vec<u32>,
    /// Points participating in any tie (their rows/columns merge).
    pub tied_points: Vec<bool>,
}

impl DofMap {
    pub fn new(n_points: usize, dim: usize, ties: &[ResolvedTie]) -> Result<Self> {
        let n_comp = dim + 1;
        let mut group_of = vec![u32::MAX; n_points * n_comp];
        let mut tied_points = vec![false; n_points];
        for (g, tie) in ties.iter().enumerate() {
            if tie.comp >= dim {
                return Err(Error::config("tie on a pressure dof is not supported"));
            }
            for &p in &tie.points {
                let slot = p * n_comp + tie.comp;
                if group_of[slot] != u32::MAX {
                    return Err(Error::config(format!(
                        "point {p} component {} belongs to two tie groups",
                        tie.comp
                    )));
                }
                group_of[slot] = g as u32;
                tied_points[p] = true;
            }
        }
        let mut eq = vec![u32::MAX; n_points * n_comp];
        let mut group_eq = vec![u32::MAX; ties.len()];
        let mut next = 0u32;
        for slot in 0..eq.len() {
            let g = group_of[slot];
            if g != u32::MAX {
                if group_eq[g as usize] == u32::MAX {
                    group_eq[g as usize] = next;
                    next += 1;
                }
                eq[slot] = group_eq[g as usize];
            } else {
                eq[slot] = next;
                next += 1;
            }
        }
        Ok(DofMap {
            dim,
            n_points,
            n_eqs: next as usize,
            eq,
            tied_points,
        })
    }

    #[inline]
    pub fn of(&self, point: usize, comp: usize) -> usize {
        self.eq[point * (self.dim + 1) + comp] as usize
    }

    /// Adds an equation-space increment into the dof vector.
    pub fn add_increment(&self, delta: &[f64], dofs: &mut DofVector) {
        for p in 0..self.n_points {
            for c in 0..self.dim {
                dofs.u[p][c] += delta[self.of(p, c)];
            }
            dofs.p_w[p] += delta[self.of(p, self.dim)];
        }
    }
}

/// Per-point evaluation shared by the residual and tangent passes: trial
/// constitutive state, force-state matrix and its sensitivities, flux and
/// storage terms.
pub struct PointEval {
    pub jac: f64,
    /// J F^-T; also equals dJ/dF.
    pub w_mat: Mat3,
    /// Force-state matrix B = (sigma - Sr_eff p I) J F^-T K^-1.
    pub b_mat: Mat3,
    /// dB/dp at this point.
    pub dbdp: Mat3,
    /// dB/dF (constitutive chain + geometric terms + stabilization).
    pub m_map: Tangent4,
    pub grad_p: Vec3,
    pub q_w: Vec3,
    /// Saturated mobility times k_r.
    pub chi: f64,
    /// d chi / d p_w.
    pub dchi: f64,
    /// grad p - rho_w g (so q_w = -chi * gamma).
    pub gamma: Vec3,
    pub sat: Saturation,
    pub k_r: f64,
    /// Storage coefficient phi (Sr/K_w + dSr/dp).
    pub storage: f64,
    pub dstorage: f64,
    pub rho_mix: f64,
    pub drho_dp: f64,
    /// sum_j omega V_j xi over the family.
    pub sum_xi: Vec3,
    pub state: PointState,
    pub newton_local_iters: usize,
}

/// Assembled sparse coupled system: CSR values (assembly order) mirrored into
/// a CSC clone for the direct solver.
pub struct SparseSystem {
    pub dof_map: DofMap,
    pub row_ptr: Vec<usize>,
    pub col_idx: Vec<u32>,
    pub vals: Vec<f64>,
    pub residual: Vec<f64>,
    /// Scale applied to mass rows (characteristic stiffness / horizon).
    pub mass_row_scale: f64,
    csc_symbolic: SymbolicSparseColMat<usize>,
    csc_vals: Vec<f64>,
    /// CSR slot -> CSC slot.
    perm: Vec<usize>,
    pub constrained: Vec<bool>,
    /// (eq, resolved-constraint index) for reaction recovery.
    pub constrained_eqs: Vec<(u32, u32)>,
    diag_slot: Vec<u32>,
}

impl SparseSystem {
    pub fn n_eqs(&self) -> usize {
        self.dof_map.n_eqs
    }

    /// CSC view for the linear solver (call after `mirror_to_csc`).
    pub fn csc(&self) -> faer::sparse::SparseColMatRef<'_, usize, f64> {
        faer::sparse::SparseColMatRef::new(self.csc_symbolic.rb(), &self.csc_vals)
    }

    pub fn csc_symbolic(&self) -> &SymbolicSparseColMat<usize> {
        &self.csc_symbolic
    }

    pub fn mirror_to_csc(&mut self) {
        let vals = &self.vals;
        let perm = &self.perm;
        let csc = &mut self.csc_vals;
        for (k, &p) in perm.iter().enumerate() {
            csc[p] = vals[k];
        }
    }

    /// Row/column elimination for Dirichlet equations: increments of
    /// constrained dofs are zero, so rows and columns are blanked and the
    /// diagonal carries a characteristic scale.
    pub fn eliminate_constraints(&mut self) {
        // characteristic diagonal magnitude over free equations
        let mut char_diag = 0.0f64;
        for r in 0..self.n_eqs() {
            if !self.constrained[r] {
                char_diag = char_diag.max(self.vals[self.diag_slot[r] as usize].abs());
            }
        }
        if char_diag == 0.0 {
            char_diag = 1.0;
        }
        for r in 0..self.n_eqs() {
            if self.constrained[r] {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    self.vals[k] = 0.0;
                }
                self.vals[self.diag_slot[r] as usize] = char_diag;
                self.residual[r] = 0.0;
            } else {
                for k in self.row_ptr[r]..self.row_ptr[r + 1] {
                    if self.constrained[self.col_idx[k] as usize] {
                        self.vals[k] = 0.0;
                    }
                }
            }
        }
    }

    /// 2-norm of the residual over free equations.
    pub fn free_residual_norm(&self) -> f64 {
        self.residual
            .iter()
            .zip(&self.constrained)
            .filter(|(_, c)| !**c)
            .map(|(r, _)| r * r)
            .sum::<f64>()
            .sqrt()
    }
}

/// Harmonic mean, the two-point flux mobility between bond endpoints.
#[inline]
fn harmonic(a: f64, b: f64) -> f64 {
    if a + b <= 0.0 {
        0.0
    } else {
        2.0 * a * b / (a + b)
    }
}

/// Thin wrapper allowing the parallel row pass to scatter into disjoint
/// slots of one buffer. Safety rests on the row-ownership invariant: each
/// equation's slots are written by exactly one point, and tied points are
/// excluded from the parallel pass.
struct SharedSlice(*mut f64);
unsafe impl Sync for SharedSlice {}
impl SharedSlice {
    #[inline]
    unsafe fn add(&self, idx: usize, v: f64) {
        *self.0.add(idx) += v;
    }
}

pub struct Assembler {
    pub model: Model,
    pub system: SparseSystem,
    /// Initial effective stress per point (strains are measured from the
    /// configuration carrying this stress).
    pub sigma_init: Vec<Mat3>,
    /// Optional suction multiplier for the hardening law (defaults to 1).
    pub suction_multiplier: Option<Box<dyn Fn(f64) -> f64 + Send + Sync>>,
    /// Coupling lists (sorted point ids within 2 delta, self included).
    cpl_offsets: Vec<usize>,
    cpl_ids: Vec<u32>,
    /// Per point: CSR slots laid out [row_comp][coupled][col_comp].
    slot_offsets: Vec<usize>,
    slots: Vec<u32>,
    tied_list: Vec<usize>,
    /// dim / tr(K) per point (in-plane trace), making the bond-based flux
    /// variant consistent with the local Laplacian.
    bond_scale: Vec<f64>,
}

impl Assembler {
    pub fn new(model: Model, bcs: &ResolvedBcs) -> Result<Self> {
        let n = model.n_points();
        let dim = model.cloud.dim;
        let n_comp = dim + 1;
        let dof_map = DofMap::new(n, dim, &bcs.ties)?;

        // double-horizon coupling lists, self included
        let (off2, ids2) = radius_lists(&model.cloud, 2.0 * model.family.horizon)?;
        let mut cpl_offsets = Vec::with_capacity(n + 1);
        let mut cpl_ids = Vec::with_capacity(ids2.len() + n);
        cpl_offsets.push(0);
        for i in 0..n {
            let mut list: Vec<u32> = ids2[off2[i]..off2[i + 1]].to_vec();
            list.push(i as u32);
            list.sort_unstable();
            cpl_ids.extend_from_slice(&list);
            cpl_offsets.push(cpl_ids.len());
        }

        // equation-level CSR pattern
        let n_eqs = dof_map.n_eqs;
        let mut row_cols: Vec<Vec<u32>> = vec![Vec::new(); n_eqs];
        for i in 0..n {
            let cols: Vec<u32> = cpl_ids[cpl_offsets[i]..cpl_offsets[i + 1]]
                .iter()
                .flat_map(|&m| (0..n_comp).map(move |b| (m as usize, b)))
                .map(|(m, b)| dof_map.of(m, b) as u32)
                .collect();
            for a in 0..n_comp {
                let r = dof_map.of(i, a);
                row_cols[r].extend_from_slice(&cols);
            }
        }
        let mut row_ptr = Vec::with_capacity(n_eqs + 1);
        let mut col_idx: Vec<u32> = Vec::new();
        row_ptr.push(0);
        for cols in row_cols.iter_mut() {
            cols.sort_unstable();
            cols.dedup();
            col_idx.extend_from_slice(cols);
            row_ptr.push(col_idx.len());
        }
        drop(row_cols);
        let nnz = col_idx.len();

        // per-point slot tables
        let mut slot_offsets = Vec::with_capacity(n + 1);
        slot_offsets.push(0usize);
        let mut slots: Vec<u32> = Vec::with_capacity(n * n_comp * n_comp * 8);
        for i in 0..n {
            for a in 0..n_comp {
                let r = dof_map.of(i, a);
                let row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
                for &m in &cpl_ids[cpl_offsets[i]..cpl_offsets[i + 1]] {
                    for b in 0..n_comp {
                        let c = dof_map.of(m as usize, b) as u32;
                        let pos = row.binary_search(&c).expect("pattern covers coupling");
                        slots.push((row_ptr[r] + pos) as u32);
                    }
                }
            }
            slot_offsets.push(slots.len());
        }

        // diagonal slots
        let mut diag_slot = vec![0u32; n_eqs];
        for r in 0..n_eqs {
            let row = &col_idx[row_ptr[r]..row_ptr[r + 1]];
            let pos = row
                .binary_search(&(r as u32))
                .map_err(|_| Error::geometry(format!("missing diagonal in equation {r}")))?;
            diag_slot[r] = (row_ptr[r] + pos) as u32;
        }

        // CSC mirror: counts per column, then slot permutation
        let mut col_counts = vec![0usize; n_eqs + 1];
        for &c in &col_idx {
            col_counts[c as usize + 1] += 1;
        }
        for c in 1..col_counts.len() {
            col_counts[c] += col_counts[c - 1];
        }
        let col_ptr = col_counts.clone();
        let mut cursor = col_counts;
        let mut csc_rows = vec![0usize; nnz];
        let mut perm = vec![0usize; nnz];
        for r in 0..n_eqs {
            for k in row_ptr[r]..row_ptr[r + 1] {
                let c = col_idx[k] as usize;
                let p = cursor[c];
                cursor[c] += 1;
                csc_rows[p] = r;
                perm[k] = p;
            }
        }
        let csc_symbolic =
            SymbolicSparseColMat::new_checked(n_eqs, n_eqs, col_ptr, None, csc_rows);

        // constraints
        let mut constrained = vec![false; n_eqs];
        let mut constrained_eqs = Vec::new();
        for (ci, c) in bcs.constraints.iter().enumerate() {
            for &p in &c.points {
                let r = dof_map.of(p, c.comp);
                if !constrained[r] {
                    constrained[r] = true;
                    constrained_eqs.push((r as u32, ci as u32));
                }
            }
        }
        constrained_eqs.sort_unstable();

        let tied_list: Vec<usize> = (0..n).filter(|&i| dof_map.tied_points[i]).collect();

        let bond_scale: Vec<f64> = (0..n)
            .map(|i| {
                let k = &model.shapes.k[i];
                let tr = (0..dim).map(|a| k[(a, a)]).sum::<f64>();
                dim as f64 / tr
            })
            .collect();

        let mass_row_scale = model.params.constrained_modulus() / model.family.horizon;
        let system = SparseSystem {
            dof_map,
            row_ptr,
            col_idx,
            vals: vec![0.0; nnz],
            residual: vec![0.0; n_eqs],
            mass_row_scale,
            csc_symbolic,
            csc_vals: vec![0.0; nnz],
            perm,
            constrained,
            constrained_eqs,
            diag_slot,
        };

        let sigma_init = vec![Mat3::zeros(); n];
        Ok(Assembler {
            model,
            system,
            sigma_init,
            suction_multiplier: None,
            cpl_offsets,
            cpl_ids,
            slot_offsets,
            slots,
            tied_list,
            bond_scale,
        })
    }

    #[inline]
    fn cpl(&self, i: usize) -> &[u32] {
        &self.cpl_ids[self.cpl_offsets[i]..self.cpl_offsets[i + 1]]
    }

    /// Pass A: per-point kinematics, constitutive update, flux, storage, and
    /// all tangent sensitivities at the current iterate.
    pub fn evaluate_points(
        &self,
        dofs: &DofVector,
        states_n: &[PointState],
    ) -> Result<Vec<PointEval>> {
        let model = &self.model;
        let dim = model.cloud.dim;
        let params = &model.params;
        let mob = params.mobility();
        let rho_w = params.rho_w;
        let g_vec = params.gravity_vec();
        let cs_g = params.stabilization * params.g_shear;

        (0..model.n_points())
            .into_par_iter()
            .map(|i| {
                let (f, f_inv, jac) =
                    deformation_gradient(i, dofs, &model.cloud, &model.family, &model.shapes)?;
                let grad_p = pressure_gradient(i, dofs, &model.cloud, &model.family, &model.shapes);
                let p_i = dofs.p_w[i];
                let sat = model.retention.saturation(p_i);
                let (k_r, dkr_dpw) = model
                    .retention
                    .relative_permeability(p_i, &sat, params.kr_min);
                let d_sr_eff = self.d_sr_eff_dpw(&sat);
                let sr_eff = sat.sr_eff;

                let suction = -p_i;
                let mult = self.suction_multiplier.as_ref().map_or(1.0, |m| m(suction));
                let eps = sym(&(f - Mat3::identity()));
                let rm = return_map(i, params, &self.sigma_init[i], &eps, &states_n[i], mult)?;

                let k_inv = &model.shapes.k_inv[i];
                let w_mat = f_inv.transpose() * jac;
                let b_mat = force_state_matrix(&rm.stress, p_i, sr_eff, jac, &f_inv, k_inv);
                let wk = w_mat * k_inv;
                let dbdp = wk * -(sr_eff + p_i * d_sr_eff);

                // dB/dF: constitutive chain, geometric term, stabilization
                let s_total = rm.stress - Mat3::identity() * (sr_eff * p_i);
                let mut m_map = Tangent4::zeros();
                for a in 0..dim {
                    for b in 0..dim {
                        for c in 0..dim {
                            for d in 0..dim {
                                let mut v = 0.0;
                                for w in 0..dim {
                                    let mut pw = 0.0;
                                    for e in 0..dim {
                                        // d sigma / dF through C_ep
                                        pw += rm.tangent.at(a, e, c, d) * w_mat[(e, w)];
                                        // geometric: S d(J F^-T)/dF
                                        pw += s_total[(a, e)]
                                            * jac
                                            * (f_inv[(d, c)] * f_inv[(w, e)]
                                                - f_inv[(w, c)] * f_inv[(d, e)]);
                                    }
                                    v += pw * k_inv[(w, b)];
                                }
                                if cs_g != 0.0 && b == d {
                                    v -= cs_g * k_inv[(a, c)];
                                }
                                *m_map.at_mut(a, b, c, d) = v;
                            }
                        }
                    }
                }

                let gamma = grad_p - g_vec * rho_w;
                let chi = k_r * mob;
                let q_w = darcy_flux(&grad_p, k_r, params);
                let storage = params.phi0 * (sat.sr / params.k_w + sat.d_sr_dpw);
                let dstorage = params.phi0 * (sat.d_sr_dpw / params.k_w + sat.d2_sr_dpw2);
                let rho_mix = params.rho_s * (1.0 - params.phi0) + rho_w * params.phi0 * sr_eff;
                let drho_dp = rho_w * params.phi0 * d_sr_eff;

                let mut sum_xi = Vec3::zeros();
                for b in model.family.family(i) {
                    let j = model.family.neighbors[b] as usize;
                    sum_xi += model.family.bonds[b] * (model.family.weights[b] * model.cloud.volumes[j]);
                }

                let porosity = 1.0 - (1.0 - params.phi0) / jac;
                let state = PointState {
                    stress_eff: rm.stress,
                    eps_p: rm.eps_p,
                    eps_v_p: rm.eps_v_p,
                    pc: rm.pc,
                    sr: sat.sr,
                    sr_eff,
                    porosity,
                };

                Ok(PointEval {
                    jac,
                    w_mat,
                    b_mat,
                    dbdp,
                    m_map,
                    grad_p,
                    q_w,
                    chi,
                    dchi: dkr_dpw * mob,
                    gamma,
                    sat,
                    k_r,
                    storage,
                    dstorage,
                    rho_mix,
                    drho_dp,
                    sum_xi,
                    state,
                    newton_local_iters: rm.iterations,
                })
            })
            .collect()
    }

    fn d_sr_eff_dpw(&self, sat: &Saturation) -> f64 {
        match &self.model.retention {
            RetentionModel::Saturated => 0.0,
            RetentionModel::VanGenuchten(p) => sat.d_sr_dpw / (p.s2 - p.s1),
            RetentionModel::Liakopoulos => sat.d_sr_dpw,
        }
    }

    /// Momentum residual of point i as a force density (N/m^3), matching the
    /// discrete balance before volume weighting.
    pub fn momentum_residual(
        &self,
        i: usize,
        evals: &[PointEval],
        dofs: &DofVector,
        f_ext: &[Vec3],
    ) -> Vec3 {
        let model = &self.model;
        let fam = &model.family;
        let cs_g = model.params.stabilization * model.params.g_shear;
        let mut g = evals[i].b_mat * evals[i].sum_xi;
        if cs_g != 0.0 {
            let ki = &model.shapes.k_inv[i];
            let f_i = self.f_of(i, evals);
            for b in fam.family(i) {
                let j = fam.neighbors[b] as usize;
                let xi = fam.bonds[b];
                let wv = fam.weights[b] * model.cloud.volumes[j];
                let y = xi + dofs.u[j] - dofs.u[i];
                // z against each endpoint's own deformation gradient
                let zi = y - f_i * xi;
                let zj = y - self.f_of(j, evals) * xi;
                g += (ki * zi + model.shapes.k_inv[j] * zj) * (cs_g * wv);
            }
        }
        for b in fam.family(i) {
            let j = fam.neighbors[b] as usize;
            let xi = fam.bonds[b];
            let wv = fam.weights[b] * model.cloud.volumes[j];
            g += evals[j].b_mat * xi * wv;
        }
        g + model.params.gravity_vec() * evals[i].rho_mix + f_ext[i]
    }

    /// Recovers F at a point from W = J F^-T (2D-safe padded inverse).
    fn f_of(&self, i: usize, evals: &[PointEval]) -> Mat3 {
        let w = evals[i].w_mat;
        // W = J F^-T => F = J W^-T
        let w_inv_t = w
            .try_inverse()
            .map(|m| m.transpose())
            .unwrap_or_else(Mat3::identity);
        w_inv_t * evals[i].jac
    }

    /// Time-discrete mass residual of point i (dimensionless, dt-multiplied
    /// backward-difference balance). The flux divergence blends the
    /// correspondence form with the bond-based form according to
    /// `stabilization_flow`.
    pub fn mass_residual(
        &self,
        i: usize,
        evals: &[PointEval],
        dofs: &DofVector,
        dofs_n: &DofVector,
        dt: f64,
    ) -> f64 {
        let model = &self.model;
        let fam = &model.family;
        let ev = &evals[i];
        let cf = model.params.stabilization_flow;
        let mut div_u = 0.0;
        let mut div_q = 0.0;
        let mut div_q_bond = 0.0;
        let gi = model.shapes.k_inv[i] * (dofs.u[i] - dofs_n.u[i]);
        let qi = model.shapes.k_inv[i] * ev.q_w * ev.jac;
        for b in fam.family(i) {
            let j = fam.neighbors[b] as usize;
            let xi = fam.bonds[b];
            let wv = fam.weights[b] * model.cloud.volumes[j];
            let gj = model.shapes.k_inv[j] * (dofs.u[j] - dofs_n.u[j]);
            let qj = model.shapes.k_inv[j] * evals[j].q_w * evals[j].jac;
            div_u += wv * (gi.dot(&xi) + gj.dot(&xi));
            div_q += wv * (qi.dot(&xi) + qj.dot(&xi));
            if cf != 0.0 {
                let chi_h = harmonic(ev.chi, evals[j].chi);
                let w_ij = self.bond_scale[i] + self.bond_scale[j];
                let drive = dofs.p_w[j] - dofs.p_w[i]
                    - model.params.rho_w * model.params.gravity_vec().dot(&xi);
                div_q_bond -= wv * chi_h * w_ij * drive;
            }
        }
        ev.storage * (dofs.p_w[i] - dofs_n.p_w[i])
            + ev.sat.sr * div_u
            + dt * ((1.0 - cf) * div_q + cf * div_q_bond)
    }

    /// Assembles the residual vector (and optionally the tangent) at the
    /// current iterate. `evals` must come from `evaluate_points` on `dofs`.
    #[allow(clippy::too_many_arguments)]
    pub fn assemble(
        &mut self,
        evals: &[PointEval],
        dofs: &DofVector,
        dofs_n: &DofVector,
        dt: f64,
        f_ext: &[Vec3],
        with_tangent: bool,
    ) {
        let n = self.model.n_points();
        // Buffers are moved out so the raw-pointer scatter never aliases the
        // shared borrow of self used by the row computation.
        let mut residual = std::mem::take(&mut self.system.residual);
        let mut vals = std::mem::take(&mut self.system.vals);
        residual.iter_mut().for_each(|v| *v = 0.0);
        if with_tangent {
            vals.iter_mut().for_each(|v| *v = 0.0);
        }
        let res_ptr = SharedSlice(residual.as_mut_ptr());
        let val_ptr = SharedSlice(vals.as_mut_ptr());

        let untied: Vec<usize> = if self.tied_list.is_empty() {
            (0..n).collect()
        } else {
            (0..n)
                .filter(|&i| !self.system.dof_map.tied_points[i])
                .collect()
        };

        // Parallel pass over rows with untied owners (disjoint slots), then a
        // sequential pass over tied rows for deterministic accumulation.
        untied.par_iter().for_each_init(Vec::new, |buf, &i| {
            self.assemble_row(
                i, evals, dofs, dofs_n, dt, f_ext, with_tangent, &res_ptr, &val_ptr, buf,
            );
        });
        let mut buf = Vec::new();
        for &i in &self.tied_list {
            self.assemble_row(
                i, evals, dofs, dofs_n, dt, f_ext, with_tangent, &res_ptr, &val_ptr, &mut buf,
            );
        }
        self.system.residual = residual;
        self.system.vals = vals;
    }

    /// Computes and scatters one point's momentum and mass rows.
    #[allow(clippy::too_many_arguments)]
    fn assemble_row(
        &self,
        i: usize,
        evals: &[PointEval],
        dofs: &DofVector,
        dofs_n: &DofVector,
        dt: f64,
        f_ext: &[Vec3],
        with_tangent: bool,
        res: &SharedSlice,
        val: &SharedSlice,
        local: &mut Vec<f64>,
    ) {
        let model = &self.model;
        let dim = model.cloud.dim;
        let n_comp = dim + 1;
        let fam = &model.family;
        let dof_map = &self.system.dof_map;
        let v_i = model.cloud.volumes[i];
        let beta = self.system.mass_row_scale;
        let cs_g = model.params.stabilization * model.params.g_shear;

        // residual rows
        let g = self.momentum_residual(i, evals, dofs, f_ext);
        let m = self.mass_residual(i, evals, dofs, dofs_n, dt);
        unsafe {
            for a in 0..dim {
                res.add(dof_map.of(i, a), v_i * g[a]);
            }
            res.add(dof_map.of(i, dim), v_i * beta * m);
        }

        if !with_tangent {
            return;
        }

        let cpl = self.cpl(i);
        let ncpl = cpl.len();
        let pos_of = |m_id: u32| -> usize {
            cpl.binary_search(&m_id).expect("coupled point in list")
        };
        let slots = &self.slots[self.slot_offsets[i]..self.slot_offsets[i + 1]];
        let slot_at = |a: usize, mpos: usize, b: usize| -> usize {
            slots[(a * ncpl + mpos) * n_comp + b] as usize
        };
        // local accumulator for this block-row
        local.clear();
        local.resize(n_comp * ncpl * n_comp, 0.0);
        let local = &mut local[..];
        let lidx = |a: usize, mpos: usize, b: usize| (a * ncpl + mpos) * n_comp + b;

        let ev_i = &evals[i];
        let k_inv_i = &model.shapes.k_inv[i];
        let self_pos = pos_of(i as u32);

        // ---- momentum rows: u columns through dB_q/dF for q = i and q = j
        let scatter_dbdf = |q: usize, w_vec: Vec3, local: &mut [f64]| {
            let ev_q = &evals[q];
            let k_inv_q = &model.shapes.k_inv[q];
            // H[a][c][d] = sum_b M_q[a][b][c][d] w_b
            let mut h = [[[0.0f64; 3]; 3]; 3];
            for a in 0..dim {
                for c in 0..dim {
                    for d in 0..dim {
                        let mut v = 0.0;
                        for b in 0..dim {
                            v += ev_q.m_map.at(a, b, c, d) * w_vec[b];
                        }
                        h[a][c][d] = v;
                    }
                }
            }
            let q_pos = pos_of(q as u32);
            for bq in fam.family(q) {
                let m_id = fam.neighbors[bq] as usize;
                let g_qm = k_inv_q * fam.bonds[bq];
                let f_m = fam.weights[bq] * model.cloud.volumes[m_id];
                let m_pos = pos_of(m_id as u32);
                for a in 0..dim {
                    for c in 0..dim {
                        let mut v = 0.0;
                        for d in 0..dim {
                            v += h[a][c][d] * g_qm[d];
                        }
                        v *= f_m;
                        local[lidx(a, m_pos, c)] += v;
                        local[lidx(a, q_pos, c)] -= v;
                    }
                }
            }
        };

        // q = i with w = sum_xi
        scatter_dbdf(i, ev_i.sum_xi, &mut *local);
        for b in fam.family(i) {
            let j = fam.neighbors[b] as usize;
            let xi = fam.bonds[b];
            let wv = fam.weights[b] * model.cloud.volumes[j];
            scatter_dbdf(j, xi * wv, &mut *local);

            // pressure column via dB_j/dp
            let t = evals[j].dbdp * xi * wv;
            let j_pos = pos_of(j as u32);
            for a in 0..dim {
                local[lidx(a, j_pos, dim)] += t[a];
            }

            // stabilization direct term
            if cs_g != 0.0 {
                let kk = (k_inv_i + model.shapes.k_inv[j]) * (cs_g * wv);
                for a in 0..dim {
                    for c in 0..dim {
                        local[lidx(a, j_pos, c)] += kk[(a, c)];
                        local[lidx(a, self_pos, c)] -= kk[(a, c)];
                    }
                }
            }
        }
        // pressure column via dB_i/dp and the gravity saturation term
        let t = ev_i.dbdp * ev_i.sum_xi;
        let g_vec = model.params.gravity_vec();
        for a in 0..dim {
            local[lidx(a, self_pos, dim)] += t[a] + ev_i.drho_dp * g_vec[a];
        }

        // ---- mass row
        let row_a = dim;
        // storage: s + s' (p - p_n)
        local[lidx(row_a, self_pos, dim)] +=
            beta * (ev_i.storage + ev_i.dstorage * (dofs.p_w[i] - dofs_n.p_w[i]));

        // solid divergence: S_r,i * div(du); plus its retention derivative
        let mut div_u = 0.0;
        let gi_n = k_inv_i * (dofs.u[i] - dofs_n.u[i]);
        for b in fam.family(i) {
            let j = fam.neighbors[b] as usize;
            let xi = fam.bonds[b];
            let wv = fam.weights[b] * model.cloud.volumes[j];
            let g_ij = k_inv_i * xi;
            let g_hat = model.shapes.k_inv[j] * xi;
            div_u += wv * (gi_n.dot(&xi) + (model.shapes.k_inv[j] * (dofs.u[j] - dofs_n.u[j])).dot(&xi));
            let j_pos = pos_of(j as u32);
            for c in 0..dim {
                local[lidx(row_a, j_pos, c)] += beta * ev_i.sat.sr * wv * g_hat[c];
                local[lidx(row_a, self_pos, c)] += beta * ev_i.sat.sr * wv * g_ij[c];
            }
        }
        local[lidx(row_a, self_pos, dim)] += beta * ev_i.sat.d_sr_dpw * div_u;

        // flux divergence: q contributions from i and each j, both through
        // the pressure chain and the J(u) factor
        let flux_block = |q: usize, a_vec: Vec3, local: &mut [f64]| {
            // a_vec = row coefficient vector multiplying dq_q (already has
            // dt, omega V, J factors folded in by the caller)
            let ev_q = &evals[q];
            let k_inv_q = &model.shapes.k_inv[q];
            let q_pos = pos_of(q as u32);
            let h_q = k_inv_q * ev_q.sum_xi;
            // dq/dp_q = -dchi * gamma + chi * h_q
            let dq_dpq = -ev_q.gamma * ev_q.dchi + h_q * ev_q.chi;
            local[lidx(row_a, q_pos, dim)] += beta * a_vec.dot(&dq_dpq);
            for bq in fam.family(q) {
                let m_id = fam.neighbors[bq] as usize;
                let g_qm = k_inv_q * fam.bonds[bq];
                let f_m = fam.weights[bq] * model.cloud.volumes[m_id];
                let m_pos = pos_of(m_id as u32);
                // dq/dp_m = -chi * omega V_m g_qm
                local[lidx(row_a, m_pos, dim)] -= beta * ev_q.chi * f_m * a_vec.dot(&g_qm);
            }
        };
        let jac_block = |q: usize, coef: f64, local: &mut [f64]| {
            // row term coef * dJ_q, dJ_q = W_q : dF_q
            let ev_q = &evals[q];
            let k_inv_q = &model.shapes.k_inv[q];
            let q_pos = pos_of(q as u32);
            for bq in fam.family(q) {
                let m_id = fam.neighbors[bq] as usize;
                let g_qm = k_inv_q * fam.bonds[bq];
                let f_m = fam.weights[bq] * model.cloud.volumes[m_id];
                let m_pos = pos_of(m_id as u32);
                let wg = ev_q.w_mat * g_qm;
                for c in 0..dim {
                    let v = beta * coef * f_m * wg[c];
                    local[lidx(row_a, m_pos, c)] += v;
                    local[lidx(row_a, q_pos, c)] -= v;
                }
            }
        };

        // q_i part: row coefficient = dt * J_i * K_i^-1 sum_xi (the
        // correspondence share of the blended divergence)
        let cf = model.params.stabilization_flow;
        let corr = 1.0 - cf;
        let a_i = (k_inv_i * ev_i.sum_xi) * (corr * dt * ev_i.jac);
        flux_block(i, a_i, &mut *local);
        jac_block(i, corr * dt * ev_i.q_w.dot(&(k_inv_i * ev_i.sum_xi)), &mut *local);
        for b in fam.family(i) {
            let j = fam.neighbors[b] as usize;
            let xi = fam.bonds[b];
            let wv = fam.weights[b] * model.cloud.volumes[j];
            let g_hat = model.shapes.k_inv[j] * xi;
            flux_block(j, g_hat * (corr * dt * evals[j].jac * wv), &mut *local);
            jac_block(j, corr * dt * wv * evals[j].q_w.dot(&g_hat), &mut *local);

            // bond-based share: local two-point coupling
            if cf != 0.0 {
                let ev_j = &evals[j];
                let chi_h = harmonic(ev_i.chi, ev_j.chi);
                let w_ij = self.bond_scale[i] + self.bond_scale[j];
                let drive = dofs.p_w[j] - dofs.p_w[i]
                    - model.params.rho_w * model.params.gravity_vec().dot(&xi);
                let j_pos = pos_of(j as u32);
                let fac = beta * cf * dt * wv * w_ij;
                // d/dp of the (p_j - p_i) drive
                local[lidx(row_a, j_pos, dim)] -= fac * chi_h;
                local[lidx(row_a, self_pos, dim)] += fac * chi_h;
                // d/dp of the harmonic mobility
                let denom = (ev_i.chi + ev_j.chi).max(1e-300);
                let dh_dchi_i = 2.0 * ev_j.chi * ev_j.chi / (denom * denom);
                let dh_dchi_j = 2.0 * ev_i.chi * ev_i.chi / (denom * denom);
                local[lidx(row_a, self_pos, dim)] -= fac * drive * dh_dchi_i * ev_i.dchi;
                local[lidx(row_a, j_pos, dim)] -= fac * drive * dh_dchi_j * ev_j.dchi;
            }
        }

        // scatter with the volume weight
        unsafe {
            for a in 0..n_comp {
                let row_scale = v_i;
                for mpos in 0..ncpl {
                    for b in 0..n_comp {
                        let v = local[lidx(a, mpos, b)];
                        if v != 0.0 {
                            val.add(slot_at(a, mpos, b), row_scale * v);
                        }
                    }
                }
            }
        }
    }

    /// Forward-difference tangent (dense), the verification oracle for the
    /// analytic assembly. Test/debug use only. Displacement dofs are stepped
    /// by `eps_scale`; pressure dofs by `eps_scale` times the constrained
    /// modulus so both probes are comparably scaled.
    pub fn fd_tangent(
        &mut self,
        dofs: &DofVector,
        dofs_n: &DofVector,
        states_n: &[PointState],
        dt: f64,
        f_ext: &[Vec3],
        eps_scale: f64,
    ) -> Result<nalgebra::DMatrix<f64>> {
        let n_eqs = self.system.n_eqs();
        let dim = self.model.cloud.dim;
        let base = self.residual_vector(dofs, dofs_n, states_n, dt, f_ext)?;
        let mut jac = nalgebra::DMatrix::<f64>::zeros(n_eqs, n_eqs);
        let mut probe = dofs.clone();
        let mut seen = vec![false; n_eqs];
        let eps_p = eps_scale * self.model.params.constrained_modulus();
        for p in 0..self.model.n_points() {
            for c in 0..=dim {
                let eq = self.system.dof_map.of(p, c);
                if seen[eq] {
                    continue;
                }
                seen[eq] = true;
                let h = if c < dim { eps_scale } else { eps_p };
                // perturb every dof mapped to this equation (ties move together)
                for m in 0..self.model.n_points() {
                    if self.system.dof_map.of(m, c) == eq {
                        if c < dim {
                            probe.u[m][c] += h;
                        } else {
                            probe.p_w[m] += h;
                        }
                    }
                }
                let pert = self.residual_vector(&probe, dofs_n, states_n, dt, f_ext)?;
                for r in 0..n_eqs {
                    jac[(r, eq)] = (pert[r] - base[r]) / h;
                }
                probe.clone_from(dofs);
            }
        }
        Ok(jac)
    }

    /// Residual vector at arbitrary dofs (evaluates states internally).
    pub fn residual_vector(
        &mut self,
        dofs: &DofVector,
        dofs_n: &DofVector,
        states_n: &[PointState],
        dt: f64,
        f_ext: &[Vec3],
    ) -> Result<Vec<f64>> {
        let evals = self.evaluate_points(dofs, states_n)?;
        self.assemble(&evals, dofs, dofs_n, dt, f_ext, false);
        Ok(self.system.residual.clone())
    }
}
