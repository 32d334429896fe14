//! Implicit quasi-static time marching: full Newton on the coupled u-p
//! system with backtracking line search, step cutting, and committed-state
//! semantics (history advances only on converged steps).

use crate::assembly::{Assembler, PointEval};
use crate::bc::{InitialState, ResolvedBcs};
use crate::camclay::yield_function;
use crate::error::{Error, Result};
use crate::kinematics::DofVector;
use crate::linsolve::{gmres_ilu0, CsrView, DirectSolver};
use crate::math::{deviator_stress, mean_stress, Vec3};
use crate::snapshot::{Reaction, Snapshot};
use crate::state::PointState;
use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LinearSolverKind {
    Direct,
    Krylov,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SolverConfig {
    pub dt: f64,
    pub t_end: f64,
    #[serde(default = "d_newton_tol_rel")]
    pub newton_tol_rel: f64,
    #[serde(default = "d_newton_tol_abs")]
    pub newton_tol_abs: f64,
    #[serde(default = "d_max_newton")]
    pub max_newton: usize,
    #[serde(default = "d_ls_cuts")]
    pub line_search_max_cuts: usize,
    #[serde(default = "d_step_cut")]
    pub step_cut_factor: f64,
    #[serde(default = "d_max_cuts")]
    pub max_step_cuts: usize,
    #[serde(default = "d_linear")]
    pub linear_solver: LinearSolverKind,
}

fn d_newton_tol_rel() -> f64 {
    1e-6
}
fn d_newton_tol_abs() -> f64 {
    1e-10
}
fn d_max_newton() -> usize {
    25
}
fn d_ls_cuts() -> usize {
    8
}
fn d_step_cut() -> f64 {
    0.5
}
fn d_max_cuts() -> usize {
    4
}
fn d_linear() -> LinearSolverKind {
    LinearSolverKind::Direct
}

impl SolverConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.dt > 0.0 && self.t_end >= 0.0) {
            return Err(Error::config("dt must be positive"));
        }
        if !(self.newton_tol_rel > 0.0 && self.newton_tol_abs > 0.0) {
            return Err(Error::config("Newton tolerances must be positive"));
        }
        Ok(())
    }
}

/// Per-step record: residual norms per Newton iteration, cuts, conservation
/// bookkeeping.
#[derive(Clone, Debug)]
pub struct StepReport {
    pub step: usize,
    pub time: f64,
    pub dt: f64,
    pub iterations: usize,
    pub residual_norms: Vec<f64>,
    pub line_search_cuts: usize,
    pub converged: bool,
    /// Sum over points of V s(p) (p - p_n): net storage change, which a
    /// closed system must conserve.
    pub storage_change: f64,
    /// |sum(reactions) + sum(loads) + weight| / scale at convergence.
    pub force_closure: f64,
}

#[derive(Clone, Debug, Default)]
pub struct Trajectory {
    pub snapshots: Vec<Snapshot>,
    pub reports: Vec<StepReport>,
}

impl Trajectory {
    /// Snapshot with time closest to t.
    pub fn nearest(&self, t: f64) -> &Snapshot {
        self.snapshots
            .iter()
            .min_by(|a, b| {
                (a.time - t)
                    .abs()
                    .partial_cmp(&(b.time - t).abs())
                    .unwrap()
            })
            .expect("trajectory has snapshots")
    }
}

/// A marching run: owns the assembler, dof state, and committed history.
pub struct Run {
    pub assembler: Assembler,
    pub bcs: ResolvedBcs,
    pub config: SolverConfig,
    pub dofs: DofVector,
    pub states: Vec<PointState>,
    pub t: f64,
    pub step: usize,
    direct: DirectSolver,
    f_ext: Vec<Vec3>,
    /// Last converged point evaluations (for snapshots).
    last_evals: Option<Vec<PointEval>>,
    last_raw_residual: Vec<f64>,
}

impl Run {
    pub fn new(
        mut assembler: Assembler,
        bcs: ResolvedBcs,
        config: SolverConfig,
        initial: &InitialState,
    ) -> Result<Self> {
        config.validate()?;
        assembler.model.params.validate()?;
        assembler.model.retention.validate()?;
        let n = assembler.model.n_points();
        let params = assembler.model.params.clone();
        let g_mag = params.gravity_vec().norm();
        let mut dofs = DofVector::zeros(n);
        let sigma0 = initial.sigma0.tensor();
        // initial yield consistency
        let p0 = mean_stress(&sigma0);
        let q0 = deviator_stress(&sigma0);
        if params.plastic && yield_function(p0, q0, initial.pc0, params.m_cs) > 1e-9 * (1.0 + initial.pc0 * initial.pc0)
        {
            return Err(Error::config(
                "initial stress state lies outside the initial yield surface",
            ));
        }
        let mut states = Vec::with_capacity(n);
        for i in 0..n {
            let y = assembler.model.cloud.positions[i].y;
            let pw = initial.p_w0.value(y, params.rho_w, g_mag);
            dofs.p_w[i] = pw;
            let sat = assembler.model.retention.saturation(pw);
            states.push(PointState::initial(
                sigma0,
                initial.pc0,
                sat.sr,
                sat.sr_eff,
                params.phi0,
            ));
            assembler.sigma_init[i] = sigma0;
        }
        let n_eqs = assembler.system.n_eqs();
        let mut run = Run {
            assembler,
            bcs,
            config,
            dofs,
            states,
            t: 0.0,
            step: 0,
            direct: DirectSolver::new(),
            f_ext: vec![Vec3::zeros(); n],
            last_evals: None,
            last_raw_residual: vec![0.0; n_eqs],
        };
        if initial.geostatic {
            run.geostatic_initialize()?;
        }
        Ok(run)
    }

    /// Characteristic force used to make the absolute Newton tolerance
    /// dimensionless.
    fn force_scale(&self) -> f64 {
        let model = &self.assembler.model;
        let v_mean: f64 =
            model.cloud.volumes.iter().sum::<f64>() / model.cloud.volumes.len() as f64;
        self.assembler.system.mass_row_scale * v_mean * (self.assembler.system.n_eqs() as f64).sqrt()
    }

    /// One implicit step from the committed state to t + dt.
    /// On success commits history and advances time.
    pub fn newton_step(&mut self, dt: f64) -> Result<StepReport> {
        let t_new = self.t + dt;
        let dim = self.assembler.model.cloud.dim;
        let dofs_n = self.dofs.clone();
        let mut dofs = self.dofs.clone();
        self.bcs.apply_values(&mut dofs, dim, t_new);
        self.bcs.external_forces(&mut self.f_ext, t_new);

        let tol_floor = self.config.newton_tol_abs * self.force_scale();
        let mut norms: Vec<f64> = Vec::new();
        let mut total_ls_cuts = 0usize;
        let mut evals = match self.assembler.evaluate_points(&dofs, &self.states) {
            Ok(e) => e,
            Err(e) if e.is_recoverable() => return Err(e),
            Err(e) => return Err(e),
        };

        let mut converged = false;
        let mut iterations = 0usize;
        for k in 0..=self.config.max_newton {
            self.assembler
                .assemble(&evals, &dofs, &dofs_n, dt, &self.f_ext, true);
            self.last_raw_residual
                .copy_from_slice(&self.assembler.system.residual);
            let norm = self.assembler.system.free_residual_norm();
            norms.push(norm);
            let target = (self.config.newton_tol_rel * norms[0]).max(tol_floor);
            if norm <= target {
                converged = true;
                break;
            }
            if k == self.config.max_newton {
                break;
            }
            iterations += 1;

            self.assembler.system.eliminate_constraints();
            let mut delta: Vec<f64> = self.assembler.system.residual.iter().map(|r| -r).collect();
            match self.config.linear_solver {
                LinearSolverKind::Direct => {
                    self.assembler.system.mirror_to_csc();
                    self.direct.solve(self.assembler.system.csc(), &mut delta)?;
                }
                LinearSolverKind::Krylov => {
                    let sys = &self.assembler.system;
                    let a = CsrView {
                        n: sys.n_eqs(),
                        row_ptr: &sys.row_ptr,
                        col_idx: &sys.col_idx,
                        vals: &sys.vals,
                    };
                    let b = delta.clone();
                    delta.iter_mut().for_each(|v| *v = 0.0);
                    let restart = 80.min(sys.n_eqs());
                    if gmres_ilu0(&a, &b, &mut delta, 1e-8, restart, 50).is_err() {
                        // fallback to the direct path
                        self.assembler.system.mirror_to_csc();
                        delta.copy_from_slice(&b);
                        self.direct.solve(self.assembler.system.csc(), &mut delta)?;
                    }
                }
            }

            // backtracking line search on the residual norm; keeps the best
            // decreasing trial if sufficient decrease is never met
            let mut lambda = 1.0f64;
            let mut accepted = false;
            let mut best: Option<(f64, DofVector, Vec<crate::assembly::PointEval>)> = None;
            for _cut in 0..=self.config.line_search_max_cuts {
                let mut trial = dofs.clone();
                let scaled: Vec<f64> = delta.iter().map(|d| d * lambda).collect();
                self.assembler.system.dof_map.add_increment(&scaled, &mut trial);
                match self.assembler.evaluate_points(&trial, &self.states) {
                    Ok(trial_evals) => {
                        self.assembler
                            .assemble(&trial_evals, &trial, &dofs_n, dt, &self.f_ext, false);
                        let trial_norm = self.assembler.system.free_residual_norm();
                        if trial_norm <= (1.0 - 1e-4 * lambda) * norm || trial_norm <= target {
                            dofs = trial;
                            evals = trial_evals;
                            accepted = true;
                            break;
                        }
                        if best.as_ref().map_or(true, |(bn, _, _)| trial_norm < *bn) {
                            best = Some((trial_norm, trial, trial_evals));
                        }
                    }
                    Err(e) if e.is_recoverable() => {}
                    Err(e) => return Err(e),
                }
                lambda *= 0.5;
                total_ls_cuts += 1;
            }
            if !accepted {
                // fall back to the best strictly-decreasing trial
                match best {
                    Some((bn, trial, trial_evals)) if bn < norm => {
                        dofs = trial;
                        evals = trial_evals;
                    }
                    _ => break,
                }
            }
        }

        if !converged {
            let history: Vec<String> = norms.iter().map(|n| format!("{n:.3e}")).collect();
            return Err(Error::SolverAbort(format!(
                "Newton did not converge at t = {t_new:.6e} (|R| history: {})",
                history.join(" -> ")
            )));
        }

        // commit
        let storage_change = self.storage_change(&evals, &dofs, &dofs_n);
        let force_closure = self.force_closure();
        for (s, e) in self.states.iter_mut().zip(&evals) {
            *s = e.state.clone();
        }
        self.dofs = dofs;
        self.t = t_new;
        self.step += 1;
        self.last_evals = Some(evals);
        Ok(StepReport {
            step: self.step,
            time: self.t,
            dt,
            iterations,
            residual_norms: norms,
            line_search_cuts: total_ls_cuts,
            converged,
            storage_change,
            force_closure,
        })
    }

    fn storage_change(&self, evals: &[PointEval], dofs: &DofVector, dofs_n: &DofVector) -> f64 {
        let model = &self.assembler.model;
        (0..model.n_points())
            .map(|i| model.cloud.volumes[i] * evals[i].storage * (dofs.p_w[i] - dofs_n.p_w[i]))
            .sum()
    }

    /// Relative closure of reactions + applied loads + weight, from the raw
    /// residual at convergence.
    fn force_closure(&self) -> f64 {
        let model = &self.assembler.model;
        let sys = &self.assembler.system;
        let dim = model.cloud.dim;
        let mut residual_sum = Vec3::zeros();
        let mut scale = 0.0f64;
        for (i, v) in model.cloud.volumes.iter().enumerate() {
            let w = model.params.gravity_vec() * self.last_evals.as_ref().map_or(0.0, |e| e[i].rho_mix) * *v;
            let f = self.f_ext[i] * *v;
            scale = scale.max(w.norm()).max(f.norm());
        }
        // sum of ALL momentum equations (free rows vanish at convergence,
        // constrained rows are the negated reactions): total must equal
        // weight + applied force, so the closure is the free-row defect.
        let mut seen = vec![false; sys.n_eqs()];
        for p in 0..model.n_points() {
            for c in 0..dim {
                let eq = sys.dof_map.of(p, c);
                if !seen[eq] {
                    seen[eq] = true;
                    residual_sum[c] += self.last_raw_residual[eq];
                }
            }
        }
        let mut expected = Vec3::zeros();
        for (i, v) in model.cloud.volumes.iter().enumerate() {
            expected += model.params.gravity_vec()
                * self.last_evals.as_ref().map_or(0.0, |e| e[i].rho_mix)
                * *v;
            expected += self.f_ext[i] * *v;
        }
        let defect = (residual_sum - expected).norm();
        let denom = expected.norm().max(scale).max(1e-300);
        defect / denom
    }

    /// Reaction forces grouped by constraint (negated raw residual, N for
    /// momentum rows; mass rows are converted to water volume per step).
    pub fn reactions(&self) -> Vec<Reaction> {
        let sys = &self.assembler.system;
        let dim = self.assembler.model.cloud.dim;
        let mut by_constraint: std::collections::BTreeMap<u32, f64> = Default::default();
        for &(eq, ci) in &sys.constrained_eqs {
            *by_constraint.entry(ci).or_insert(0.0) -= self.last_raw_residual[eq as usize];
        }
        by_constraint
            .into_iter()
            .map(|(ci, mut value)| {
                let c = &self.bcs.constraints[ci as usize];
                if c.comp == dim {
                    // physical mass residual: divide out the row equilibration
                    value /= sys.mass_row_scale;
                }
                Reaction {
                    region: c.region_name.clone(),
                    comp: c.comp,
                    value,
                }
            })
            .collect()
    }

    /// Fixed-step marching with cut/recover. Emits a snapshot every
    /// `snap_every` accepted steps (and always at the end).
    pub fn march(&mut self, snap_every: usize) -> Result<Trajectory> {
        let mut traj = Trajectory::default();
        traj.snapshots.push(self.capture_initial());
        let t_end = self.config.t_end;
        let dt_nominal = self.config.dt;
        let mut dt = dt_nominal;
        let eps = 1e-9 * dt_nominal;
        while self.t + eps < t_end {
            let dt_step = dt.min(t_end - self.t);
            let saved_dofs = self.dofs.clone();
            match self.newton_step(dt_step) {
                Ok(report) => {
                    let emit = self.step % snap_every.max(1) == 0 || self.t + eps >= t_end;
                    let iters = report.iterations;
                    traj.reports.push(report);
                    if emit {
                        traj.snapshots.push(self.capture_with_iterations(iters));
                    }
                    dt = (dt * 2.0).min(dt_nominal);
                }
                Err(e) => {
                    self.dofs = saved_dofs;
                    if !(e.is_recoverable() || matches!(e, Error::SolverAbort(_))) {
                        return Err(e);
                    }
                    let cuts_so_far = (dt_nominal / dt).log2().round() as usize;
                    if cuts_so_far >= self.config.max_step_cuts {
                        return Err(Error::SolverAbort(format!(
                            "step at t = {:.6e} failed after {} cuts: {e}",
                            self.t, self.config.max_step_cuts
                        )));
                    }
                    dt *= self.config.step_cut_factor;
                }
            }
        }
        Ok(traj)
    }

    /// Gravity equilibration followed by a null-deformation reset:
    /// displacements zeroed, converged stresses absorbed into the initial
    /// stress field.
    pub fn geostatic_initialize(&mut self) -> Result<()> {
        if self.assembler.model.params.gravity_vec().norm() == 0.0 {
            return Ok(());
        }
        // hold every pressure dof at its initial value
        let dim = self.assembler.model.cloud.dim;
        let saved_constrained = self.assembler.system.constrained.clone();
        for p in 0..self.assembler.model.n_points() {
            let eq = self.assembler.system.dof_map.of(p, dim);
            self.assembler.system.constrained[eq] = true;
        }
        let result = self.newton_step(self.config.dt);
        self.assembler.system.constrained = saved_constrained;
        self.direct.reset_symbolic();
        result.map_err(|e| {
            Error::SolverAbort(format!("geostatic equilibration failed: {e}"))
        })?;
        // null-deformation reset
        for i in 0..self.assembler.model.n_points() {
            self.assembler.sigma_init[i] = self.states[i].stress_eff;
            self.states[i].eps_p = crate::math::Mat3::zeros();
            self.dofs.u[i] = Vec3::zeros();
        }
        self.t = 0.0;
        self.step = 0;
        Ok(())
    }

    pub fn capture(&self) -> Snapshot {
        self.capture_with_iterations(0)
    }

    pub fn capture_with_iterations(&self, iterations: usize) -> Snapshot {
        let evals = self.last_evals.as_ref();
        Snapshot::capture(
            &self.assembler.model,
            &self.dofs,
            &self.states,
            evals.map(|e| e.iter().map(|p| p.q_w).collect::<Vec<_>>()),
            self.reactions(),
            self.step,
            self.t,
            iterations,
        )
    }

    fn capture_initial(&self) -> Snapshot {
        Snapshot::capture(
            &self.assembler.model,
            &self.dofs,
            &self.states,
            None,
            Vec::new(),
            0,
            0.0,
            0,
        )
    }
}
