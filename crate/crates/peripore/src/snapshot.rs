//! Per-step field output: in-memory snapshots, CSV, and VTK legacy writers.

use crate::assembly::Model;
use crate::error::{Error, Result};
use crate::kinematics::DofVector;
use crate::math::{Mat3, Vec3};
use crate::state::PointState;
use std::io::Write;
use std::path::Path;

/// Reaction (or boundary flux) resultant for one constraint.
#[derive(Clone, Debug)]
pub struct Reaction {
    pub region: String,
    /// dof component (dim = pressure row).
    pub comp: usize,
    pub value: f64,
}

/// Selectable point-data fields for the writers.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Field {
    Displacement,
    Pressure,
    Saturation,
    Stress,
    PlasticShear,
    PlasticVolume,
    Flux,
    Porosity,
}

impl Field {
    pub const ALL: [Field; 8] = [
        Field::Displacement,
        Field::Pressure,
        Field::Saturation,
        Field::Stress,
        Field::PlasticShear,
        Field::PlasticVolume,
        Field::Flux,
        Field::Porosity,
    ];
}

impl std::str::FromStr for Field {
    type Err = crate::error::Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "u" | "displacement" => Ok(Field::Displacement),
            "pw" | "pressure" => Ok(Field::Pressure),
            "sr" | "saturation" => Ok(Field::Saturation),
            "stress" => Ok(Field::Stress),
            "eps_s_p" | "plastic_shear" => Ok(Field::PlasticShear),
            "eps_v_p" | "plastic_volume" => Ok(Field::PlasticVolume),
            "flux" => Ok(Field::Flux),
            "porosity" => Ok(Field::Porosity),
            other => Err(Error::config(format!("unknown output field '{other}'"))),
        }
    }
}

/// Point fields at one time level plus global diagnostics.
#[derive(Clone, Debug)]
pub struct Snapshot {
    pub step: usize,
    pub time: f64,
    pub dim: usize,
    pub position: Vec<Vec3>,
    pub u: Vec<Vec3>,
    pub p_w: Vec<f64>,
    pub sr: Vec<f64>,
    pub stress: Vec<Mat3>,
    pub eps_s_p: Vec<f64>,
    pub eps_v_p: Vec<f64>,
    pub flux: Vec<Vec3>,
    pub porosity: Vec<f64>,
    pub interior: Vec<bool>,
    pub newton_iterations: usize,
    pub reactions: Vec<Reaction>,
}

impl Snapshot {
    #[allow(clippy::too_many_arguments)]
    pub fn capture(
        model: &Model,
        dofs: &DofVector,
        states: &[PointState],
        flux: Option<Vec<Vec3>>,
        reactions: Vec<Reaction>,
        step: usize,
        time: f64,
        newton_iterations: usize,
    ) -> Self {
        let n = model.n_points();
        Snapshot {
            step,
            time,
            dim: model.cloud.dim,
            position: model.cloud.positions.clone(),
            u: dofs.u.clone(),
            p_w: dofs.p_w.clone(),
            sr: states.iter().map(|s| s.sr).collect(),
            stress: states.iter().map(|s| s.stress_eff).collect(),
            eps_s_p: states.iter().map(|s| s.eps_s_p()).collect(),
            eps_v_p: states.iter().map(|s| s.eps_v_p).collect(),
            flux: flux.unwrap_or_else(|| vec![Vec3::zeros(); n]),
            porosity: states.iter().map(|s| s.porosity).collect(),
            interior: model
                .cloud
                .labels
                .iter()
                .map(|l| *l == crate::cloud::Label::Interior)
                .collect(),
            newton_iterations,
            reactions,
        }
    }

    pub fn len(&self) -> usize {
        self.position.len()
    }

    pub fn is_empty(&self) -> bool {
        self.position.is_empty()
    }

    /// CSV with a unit-annotated header, `%.9e` numerics, and reaction
    /// resultants as comment lines. Writes every field.
    pub fn write_csv(&self, path: &Path) -> Result<()> {
        self.write_csv_fields(path, &Field::ALL)
    }

    pub fn write_csv_fields(&self, path: &Path, fields: &[Field]) -> Result<()> {
        let mut out = Vec::new();
        writeln!(out, "# step = {}, time_s = {:.9e}", self.step, self.time).unwrap();
        writeln!(out, "# newton_iterations = {}", self.newton_iterations).unwrap();
        for r in &self.reactions {
            writeln!(
                out,
                "# reaction region={} comp={} value={:.9e}",
                r.region, r.comp, r.value
            )
            .unwrap();
        }
        let mut header: Vec<&str> = vec!["x_m", "y_m", "z_m"];
        for f in fields {
            header.extend_from_slice(match f {
                Field::Displacement => &["ux_m", "uy_m", "uz_m"][..],
                Field::Pressure => &["pw_Pa"],
                Field::Saturation => &["sr"],
                Field::Stress => &["sxx_Pa", "syy_Pa", "szz_Pa", "sxy_Pa", "syz_Pa", "sxz_Pa"],
                Field::PlasticShear => &["eps_s_p"],
                Field::PlasticVolume => &["eps_v_p"],
                Field::Flux => &["qx_m_per_s", "qy_m_per_s", "qz_m_per_s"],
                Field::Porosity => &["porosity"],
            });
        }
        header.push("interior");
        writeln!(out, "{}", header.join(",")).unwrap();
        let mut row: Vec<String> = Vec::with_capacity(header.len());
        for i in 0..self.len() {
            row.clear();
            let x = self.position[i];
            row.extend([x.x, x.y, x.z].iter().map(|v| format!("{v:.9e}")));
            for f in fields {
                match f {
                    Field::Displacement => {
                        let u = self.u[i];
                        row.extend([u.x, u.y, u.z].iter().map(|v| format!("{v:.9e}")));
                    }
                    Field::Pressure => row.push(format!("{:.9e}", self.p_w[i])),
                    Field::Saturation => row.push(format!("{:.9e}", self.sr[i])),
                    Field::Stress => {
                        let s = &self.stress[i];
                        row.extend(
                            [s[(0, 0)], s[(1, 1)], s[(2, 2)], s[(0, 1)], s[(1, 2)], s[(0, 2)]]
                                .iter()
                                .map(|v| format!("{v:.9e}")),
                        );
                    }
                    Field::PlasticShear => row.push(format!("{:.9e}", self.eps_s_p[i])),
                    Field::PlasticVolume => row.push(format!("{:.9e}", self.eps_v_p[i])),
                    Field::Flux => {
                        let q = self.flux[i];
                        row.extend([q.x, q.y, q.z].iter().map(|v| format!("{v:.9e}")));
                    }
                    Field::Porosity => row.push(format!("{:.9e}", self.porosity[i])),
                }
            }
            row.push(format!("{}", self.interior[i] as u8));
            writeln!(out, "{}", row.join(",")).unwrap();
        }
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }

    /// VTK legacy ASCII polydata: reference points as vertices with point
    /// data named like the CSV columns.
    pub fn write_vtk(&self, path: &Path) -> Result<()> {
        let n = self.len();
        let mut out = Vec::new();
        writeln!(out, "# vtk DataFile Version 3.0").unwrap();
        writeln!(out, "peripore snapshot step {} t = {:.6e} s", self.step, self.time).unwrap();
        writeln!(out, "ASCII").unwrap();
        writeln!(out, "DATASET POLYDATA").unwrap();
        writeln!(out, "POINTS {n} double").unwrap();
        for x in &self.position {
            writeln!(out, "{:.9e} {:.9e} {:.9e}", x.x, x.y, x.z).unwrap();
        }
        writeln!(out, "VERTICES {n} {}", 2 * n).unwrap();
        for i in 0..n {
            writeln!(out, "1 {i}").unwrap();
        }
        writeln!(out, "POINT_DATA {n}").unwrap();
        let scalar = |out: &mut Vec<u8>, name: &str, vals: &dyn Fn(usize) -> f64| {
            writeln!(out, "SCALARS {name} double 1").unwrap();
            writeln!(out, "LOOKUP_TABLE default").unwrap();
            for i in 0..n {
                writeln!(out, "{:.9e}", vals(i)).unwrap();
            }
        };
        scalar(&mut out, "pw_Pa", &|i| self.p_w[i]);
        scalar(&mut out, "sr", &|i| self.sr[i]);
        scalar(&mut out, "eps_s_p", &|i| self.eps_s_p[i]);
        scalar(&mut out, "eps_v_p", &|i| self.eps_v_p[i]);
        scalar(&mut out, "porosity", &|i| self.porosity[i]);
        scalar(&mut out, "sxx_Pa", &|i| self.stress[i][(0, 0)]);
        scalar(&mut out, "syy_Pa", &|i| self.stress[i][(1, 1)]);
        scalar(&mut out, "sxy_Pa", &|i| self.stress[i][(0, 1)]);
        scalar(&mut out, "interior", &|i| self.interior[i] as u8 as f64);
        let vector = |out: &mut Vec<u8>, name: &str, vals: &dyn Fn(usize) -> Vec3| {
            writeln!(out, "VECTORS {name} double").unwrap();
            for i in 0..n {
                let v = vals(i);
                writeln!(out, "{:.9e} {:.9e} {:.9e}", v.x, v.y, v.z).unwrap();
            }
        };
        vector(&mut out, "u_m", &|i| self.u[i]);
        vector(&mut out, "q_m_per_s", &|i| self.flux[i]);
        std::fs::write(path, out).map_err(|e| Error::io(path.display().to_string(), e))
    }
}
