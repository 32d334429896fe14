//! Boundary and initial conditions: region selectors, load schedules,
//! displacement/pressure constraints, traction-equivalent force densities,
//! and rigid-link (tied dof) groups.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::kinematics::DofVector;
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Point-set selector. Face selectors address the boundary layer attached to
/// that face (the standard nonlocal treatment: conditions act on a
/// horizon-thick strip of fictitious points).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Region {
    XMin,
    XMax,
    YMin,
    YMax,
    ZMin,
    ZMax,
    Points(Vec<usize>),
}

impl Region {
    pub fn face(&self) -> Option<(usize, usize)> {
        match self {
            Region::XMin => Some((0, 0)),
            Region::XMax => Some((0, 1)),
            Region::YMin => Some((1, 0)),
            Region::YMax => Some((1, 1)),
            Region::ZMin => Some((2, 0)),
            Region::ZMax => Some((2, 1)),
            Region::Points(_) => None,
        }
    }

    pub fn resolve(&self, cloud: &PointCloud) -> Result<Vec<usize>> {
        let pts = match self {
            Region::Points(p) => {
                if let Some(&bad) = p.iter().find(|&&i| i >= cloud.len()) {
                    return Err(Error::config(format!(
                        "region references point {bad} outside the cloud (N = {})",
                        cloud.len()
                    )));
                }
                p.clone()
            }
            _ => {
                let (axis, side) = self.face().unwrap();
                cloud.layer_points(axis, side)
            }
        };
        if pts.is_empty() {
            return Err(Error::config(format!(
                "region {self:?} selects no points (missing boundary layer?)"
            )));
        }
        Ok(pts)
    }

    pub fn name(&self) -> String {
        match self {
            Region::XMin => "x_min".into(),
            Region::XMax => "x_max".into(),
            Region::YMin => "y_min".into(),
            Region::YMax => "y_max".into(),
            Region::ZMin => "z_min".into(),
            Region::ZMax => "z_max".into(),
            Region::Points(p) => format!("points[{}]", p.len()),
        }
    }
}

/// Time schedule for boundary values. Evaluation is pure in t.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Schedule {
    Constant { value: f64 },
    /// Linear ramp from `from` at t0 to `to` at t1, held outside.
    Ramp { t0: f64, t1: f64, from: f64, to: f64 },
    /// Constant-rate loading starting at t_start.
    Rate { rate: f64, t_start: f64 },
}

impl Schedule {
    pub fn value(&self, t: f64) -> f64 {
        match *self {
            Schedule::Constant { value } => value,
            Schedule::Ramp { t0, t1, from, to } => {
                if t <= t0 {
                    from
                } else if t >= t1 {
                    to
                } else {
                    from + (to - from) * (t - t0) / (t1 - t0)
                }
            }
            Schedule::Rate { rate, t_start } => {
                if t <= t_start {
                    0.0
                } else {
                    rate * (t - t_start)
                }
            }
        }
    }
}

/// Boundary-condition kinds. Displacement components may be constrained
/// individually; `None` leaves the component free.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BcKind {
    Displacement {
        components: [Option<Schedule>; 3],
    },
    /// Body-force density vector (N/m^3) with a scalar schedule multiplier.
    ForceDensity {
        vector: [f64; 3],
        schedule: Schedule,
    },
    /// Surface traction (Pa, pointing with the vector) converted to an
    /// equivalent force density over the face's boundary layer.
    Traction {
        vector: [f64; 3],
        schedule: Schedule,
    },
    Pressure {
        schedule: Schedule,
    },
    /// Explicitly declared no-flux boundary. Natural condition: no action.
    NoFlux,
    /// Rigid link: the given displacement component is shared by all points
    /// of the region (a rigid frictionless platen when combined with a
    /// traction or force).
    Tie {
        component: usize,
    },
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct BoundaryCondition {
    pub region: Region,
    pub kind: BcKind,
}

/// Initial effective stress (diagonal), preconsolidation pressure, and pore
/// pressure.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct InitialState {
    /// Isotropic value or full diagonal.
    pub sigma0: InitStress,
    pub pc0: f64,
    pub p_w0: InitPressure,
    /// Equilibrate under gravity first, then zero displacements while
    /// keeping stresses.
    #[serde(default)]
    pub geostatic: bool,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum InitStress {
    Isotropic(f64),
    Diagonal([f64; 3]),
}

impl InitStress {
    pub fn tensor(&self) -> crate::math::Mat3 {
        let d = match *self {
            InitStress::Isotropic(s) => [s, s, s],
            InitStress::Diagonal(d) => d,
        };
        let mut m = crate::math::Mat3::zeros();
        m[(0, 0)] = d[0];
        m[(1, 1)] = d[1];
        m[(2, 2)] = d[2];
        m
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InitPressure {
    Uniform(f64),
    /// Hydrostatic below a phreatic surface: p = rho_w g (y_surface - y).
    Hydrostatic { surface_y: f64 },
}

impl InitPressure {
    pub fn value(&self, y: f64, rho_w: f64, g_mag: f64) -> f64 {
        match *self {
            InitPressure::Uniform(p) => p,
            InitPressure::Hydrostatic { surface_y } => rho_w * g_mag * (surface_y - y),
        }
    }
}

/// Per-point force density equivalent to a face traction: `b = t A / V_layer`
/// so the layer integral reproduces the applied force exactly.
pub fn traction_to_force_density(
    traction: &Vec3,
    face_area: f64,
    layer_points: &[usize],
    cloud: &PointCloud,
) -> Result<Vec3> {
    if layer_points.is_empty() {
        return Err(Error::config("traction applied to an empty boundary layer"));
    }
    let v_layer: f64 = layer_points.iter().map(|&i| cloud.volumes[i]).sum();
    Ok(traction * (face_area / v_layer))
}

/// A resolved Dirichlet constraint on one dof component of a point set.
#[derive(Clone, Debug)]
pub struct ResolvedConstraint {
    pub bc_index: usize,
    pub region_name: String,
    pub points: Vec<usize>,
    /// dof component (0..dim displacement, dim = pressure).
    pub comp: usize,
    pub schedule: Schedule,
}

/// Resolved external load: force density per point with a schedule.
#[derive(Clone, Debug)]
pub struct ResolvedLoad {
    pub points: Vec<usize>,
    pub density: Vec3,
    pub schedule: Schedule,
}

/// Tied-dof group (component, member points).
#[derive(Clone, Debug)]
pub struct ResolvedTie {
    pub comp: usize,
    pub points: Vec<usize>,
}

#[derive(Clone, Debug, Default)]
pub struct ResolvedBcs {
    pub constraints: Vec<ResolvedConstraint>,
    pub loads: Vec<ResolvedLoad>,
    pub ties: Vec<ResolvedTie>,
}

/// Resolves regions to point lists, converts tractions, and rejects
/// conflicting constraints (the same dof claimed twice).
pub fn resolve_bcs(bcs: &[BoundaryCondition], cloud: &PointCloud, dim: usize) -> Result<ResolvedBcs> {
    let mut out = ResolvedBcs::default();
    let mut claimed = vec![false; cloud.len() * (dim + 1)];
    let mut claim = |points: &[usize], comp: usize| -> Result<()> {
        for &p in points {
            let slot = p * (dim + 1) + comp;
            if claimed[slot] {
                return Err(Error::config(format!(
                    "conflicting constraints on point {p} component {comp}"
                )));
            }
            claimed[slot] = true;
        }
        Ok(())
    };

    for (idx, bc) in bcs.iter().enumerate() {
        let points = bc.region.resolve(cloud)?;
        match &bc.kind {
            BcKind::Displacement { components } => {
                for (comp, sched) in components.iter().enumerate().take(dim) {
                    if let Some(s) = sched {
                        claim(&points, comp)?;
                        out.constraints.push(ResolvedConstraint {
                            bc_index: idx,
                            region_name: bc.region.name(),
                            points: points.clone(),
                            comp,
                            schedule: *s,
                        });
                    }
                }
            }
            BcKind::Pressure { schedule } => {
                claim(&points, dim)?;
                out.constraints.push(ResolvedConstraint {
                    bc_index: idx,
                    region_name: bc.region.name(),
                    points: points.clone(),
                    comp: dim,
                    schedule: *schedule,
                });
            }
            BcKind::ForceDensity { vector, schedule } => {
                out.loads.push(ResolvedLoad {
                    points,
                    density: Vec3::new(vector[0], vector[1], vector[2]),
                    schedule: *schedule,
                });
            }
            BcKind::Traction { vector, schedule } => {
                let (axis, _) = bc.region.face().ok_or_else(|| {
                    Error::config("traction conditions require a face region")
                })?;
                let t = Vec3::new(vector[0], vector[1], vector[2]);
                let density = traction_to_force_density(&t, cloud.face_area(axis), &points, cloud)?;
                out.loads.push(ResolvedLoad {
                    points,
                    density,
                    schedule: *schedule,
                });
            }
            BcKind::NoFlux => {}
            BcKind::Tie { component } => {
                if *component >= dim {
                    return Err(Error::config("tie component out of range"));
                }
                out.ties.push(ResolvedTie {
                    comp: *component,
                    points,
                });
            }
        }
    }
    Ok(out)
}

impl ResolvedBcs {
    /// Writes prescribed dof values at time t directly into the dof vector.
    pub fn apply_values(&self, dofs: &mut DofVector, dim: usize, t: f64) {
        for c in &self.constraints {
            let v = c.schedule.value(t);
            for &p in &c.points {
                if c.comp < dim {
                    dofs.u[p][c.comp] = v;
                } else {
                    dofs.p_w[p] = v;
                }
            }
        }
    }

    /// Accumulates external force densities at time t into `f_ext`.
    pub fn external_forces(&self, f_ext: &mut [Vec3], t: f64) {
        for f in f_ext.iter_mut() {
            *f = Vec3::zeros();
        }
        for load in &self.loads {
            let s = load.schedule.value(t);
            for &p in &load.points {
                f_ext[p] += load.density * s;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{build_lattice, FaceLayers, LatticeSpec};
    use approx::assert_relative_eq;

    fn cloud_with_top_layer() -> PointCloud {
        build_lattice(&LatticeSpec {
            extents: vec![0.01, 0.0025],
            dx: 0.00025,
            thickness: 0.00025,
            layers: FaceLayers::none().with(1, 1, 1),
        })
        .unwrap()
    }

    #[test]
    fn schedules() {
        let ramp = Schedule::Ramp {
            t0: 0.0,
            t1: 0.04,
            from: 0.0,
            to: 84e3,
        };
        assert_eq!(ramp.value(-1.0), 0.0);
        assert_relative_eq!(ramp.value(0.02), 42e3);
        assert_eq!(ramp.value(1.0), 84e3);
        let rate = Schedule::Rate {
            rate: -3e-5,
            t_start: 0.04,
        };
        assert_eq!(rate.value(0.0), 0.0);
        assert_relative_eq!(rate.value(1.04), -3e-5);
    }

    #[test]
    fn traction_equivalence_sums_to_applied_force() {
        // 84 kPa on a 1 cm x 0.025 cm face through a delta = 0.25 mm layer
        let cloud = cloud_with_top_layer();
        let layer = cloud.layer_points(1, 1);
        let area = cloud.face_area(1);
        let b = traction_to_force_density(&Vec3::new(0.0, -84e3, 0.0), area, &layer, &cloud).unwrap();
        // b = t / delta_layer with one row of thickness dx
        assert_relative_eq!(b.y, -84e3 / 0.00025, max_relative = 1e-12);
        let total: f64 = layer.iter().map(|&i| b.y * cloud.volumes[i]).sum();
        assert_relative_eq!(total, -84e3 * area, max_relative = 1e-12);
    }

    #[test]
    fn zero_traction_zero_density() {
        let cloud = cloud_with_top_layer();
        let layer = cloud.layer_points(1, 1);
        let b =
            traction_to_force_density(&Vec3::zeros(), cloud.face_area(1), &layer, &cloud).unwrap();
        assert_eq!(b, Vec3::zeros());
    }

    #[test]
    fn conflicting_constraints_rejected() {
        let cloud = cloud_with_top_layer();
        let bcs = vec![
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Pressure {
                    schedule: Schedule::Constant { value: 0.0 },
                },
            },
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Pressure {
                    schedule: Schedule::Constant { value: 1.0 },
                },
            },
        ];
        assert!(matches!(
            resolve_bcs(&bcs, &cloud, 2),
            Err(Error::Config(_))
        ));
    }

    #[test]
    fn values_and_forces_apply() {
        let cloud = cloud_with_top_layer();
        let bcs = vec![
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Displacement {
                    components: [
                        None,
                        Some(Schedule::Rate {
                            rate: -1.0,
                            t_start: 0.0,
                        }),
                        None,
                    ],
                },
            },
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::ForceDensity {
                    vector: [2.0, 0.0, 0.0],
                    schedule: Schedule::Constant { value: 3.0 },
                },
            },
        ];
        let resolved = resolve_bcs(&bcs, &cloud, 2).unwrap();
        let mut dofs = DofVector::zeros(cloud.len());
        resolved.apply_values(&mut dofs, 2, 0.5);
        let layer = cloud.layer_points(1, 1);
        for &p in &layer {
            assert_eq!(dofs.u[p].y, -0.5);
            assert_eq!(dofs.u[p].x, 0.0);
        }
        let mut f = vec![Vec3::zeros(); cloud.len()];
        resolved.external_forces(&mut f, 0.5);
        assert_eq!(f[layer[0]].x, 6.0);
        assert_eq!(f[0], Vec3::zeros());
    }
}
