//! Scenario configuration: schema-validated JSON with named presets that
//! expand to full explicit configurations (all SI units).

use crate::assembly::{Assembler, Model};
use crate::bc::{
    BcKind, BoundaryCondition, InitPressure, InitStress, InitialState, Region, Schedule,
};
use crate::camclay::{FlowParams, MaterialParams};
use crate::cloud::{build_lattice, FaceLayers, LatticeSpec};
use crate::error::{Error, Result};
use crate::family::{build_family, InfluenceFunction};
use crate::retention::{RetentionModel, SwrcParams};
use crate::shape::compute_shape_tensors;
use crate::solver::{LinearSolverKind, Run, SolverConfig};
use serde::{Deserialize, Serialize};
use std::path::Path;
use std::str::FromStr;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct OutputSpec {
    /// Snapshot interval in accepted steps.
    #[serde(default = "default_every")]
    pub every: usize,
    #[serde(default = "default_formats")]
    pub formats: Vec<OutputFormat>,
    /// Point-data fields to write; `None` writes everything.
    #[serde(default)]
    pub fields: Option<Vec<String>>,
}

fn default_every() -> usize {
    10
}

fn default_formats() -> Vec<OutputFormat> {
    vec![OutputFormat::Csv]
}

impl Default for OutputSpec {
    fn default() -> Self {
        OutputSpec {
            every: default_every(),
            formats: default_formats(),
            fields: None,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum OutputFormat {
    Csv,
    VtkLegacy,
}

/// A complete simulation description.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub name: String,
    pub geometry: LatticeSpec,
    pub horizon: f64,
    #[serde(default = "default_influence")]
    pub influence: InfluenceFunction,
    pub material: MaterialParams,
    pub retention: RetentionModel,
    pub initial: InitialState,
    pub solver: SolverConfig,
    pub bcs: Vec<BoundaryCondition>,
    #[serde(default)]
    pub output: OutputSpec,
}

fn default_influence() -> InfluenceFunction {
    InfluenceFunction::Unit
}

impl Scenario {
    pub fn validate(&self) -> Result<()> {
        if !(self.horizon > 0.0) {
            return Err(Error::config("horizon must be positive"));
        }
        self.material.validate()?;
        self.retention.validate()?;
        self.solver.validate()?;
        if let Some(fields) = &self.output.fields {
            for f in fields {
                crate::snapshot::Field::from_str(f)?;
            }
        }
        Ok(())
    }

    /// Builds geometry, families, shape tensors, and the marching run.
    pub fn build_run(&self) -> Result<Run> {
        self.validate()?;
        let cloud = build_lattice(&self.geometry)?;
        let family = build_family(&cloud, self.horizon, self.influence)?;
        let shapes = compute_shape_tensors(&cloud, &family)?;
        let model = Model {
            cloud,
            family,
            shapes,
            params: self.material.clone(),
            retention: self.retention,
        };
        let bcs = crate::bc::resolve_bcs(&self.bcs, &model.cloud, model.cloud.dim)?;
        let assembler = Assembler::new(model, &bcs)?;
        Run::new(assembler, bcs, self.solver, &self.initial)
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string_pretty(self).expect("scenario serializes")
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let sc: Scenario =
            serde_json::from_str(text).map_err(|e| Error::config(format!("scenario: {e}")))?;
        sc.validate()?;
        Ok(sc)
    }
}

/// Parses and validates a scenario file.
pub fn parse_scenario(path: &Path) -> Result<Scenario> {
    let text =
        std::fs::read_to_string(path).map_err(|e| Error::io(path.display().to_string(), e))?;
    Scenario::from_json(&text)
}

/// Named presets realizing the validation problems and the localization
/// examples.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Preset {
    Terzaghi,
    Liakopoulos,
    Mandel,
    ShearCompression,
    BiaxialCompression,
    Footing,
}

impl FromStr for Preset {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "terzaghi" => Ok(Preset::Terzaghi),
            "liakopoulos" => Ok(Preset::Liakopoulos),
            "mandel" => Ok(Preset::Mandel),
            "shear_compression" => Ok(Preset::ShearCompression),
            "biaxial_compression" => Ok(Preset::BiaxialCompression),
            "footing" => Ok(Preset::Footing),
            other => Err(Error::config(format!(
                "unknown preset '{other}' (expected terzaghi | liakopoulos | mandel | \
                 shear_compression | biaxial_compression | footing)"
            ))),
        }
    }
}

impl Preset {
    pub fn all() -> &'static [&'static str] {
        &[
            "terzaghi",
            "liakopoulos",
            "mandel",
            "shear_compression",
            "biaxial_compression",
            "footing",
        ]
    }

    pub fn build(&self) -> Scenario {
        match self {
            Preset::Terzaghi => terzaghi(),
            Preset::Liakopoulos => liakopoulos(),
            Preset::Mandel => mandel(),
            Preset::ShearCompression => shear_compression(),
            Preset::BiaxialCompression => biaxial_compression(),
            Preset::Footing => footing(),
        }
    }
}

fn saturated_swrc() -> RetentionModel {
    RetentionModel::VanGenuchten(SwrcParams {
        s1: 0.0,
        s2: 1.0,
        s_a: 20e3,
        n_vg: 2.0,
        m_vg: 0.5,
    })
}

/// One-dimensional consolidation: 5 cm x 20 cm column, 400 points, 50 kPa
/// surcharge, drained top. Undrained initial state p = 50 kPa, zero
/// effective stress. The specimen stays saturated throughout.
pub fn terzaghi() -> Scenario {
    let fixed = |v: f64| Some(Schedule::Constant { value: v });
    Scenario {
        name: "terzaghi".into(),
        geometry: LatticeSpec {
            extents: vec![0.05, 0.20],
            dx: 0.005,
            thickness: 0.01,
            layers: FaceLayers::none()
                .with(0, 0, 2)
                .with(0, 1, 2)
                .with(1, 0, 2)
                .with(1, 1, 2),
        },
        horizon: 0.01,
        influence: InfluenceFunction::Unit,
        material: MaterialParams {
            k_bulk: 8.3e7,
            g_shear: 1.8e7,
            m_cs: 1.0,
            lambda_c: 0.12,
            kappa_s: 0.03,
            v0: 2.76,
            rho_s: 2000.0,
            rho_w: 1000.0,
            // fluid treated as incompressible
            k_w: 1e12,
            phi0: 0.5,
            flow: FlowParams::HydraulicConductivity { k: 1e-8 },
            gravity: [0.0; 3],
            plastic: false,
            kr_min: 1e-8,
            stabilization: 0.0,
            stabilization_flow: 0.5,
        },
        retention: RetentionModel::Saturated,
        initial: InitialState {
            sigma0: InitStress::Isotropic(0.0),
            pc0: -1e9,
            p_w0: InitPressure::Uniform(50e3),
            geostatic: false,
        },
        solver: SolverConfig {
            dt: 1.0,
            t_end: 2000.0,
            newton_tol_rel: 1e-6,
            newton_tol_abs: 1e-10,
            max_newton: 25,
            line_search_max_cuts: 8,
            step_cut_factor: 0.5,
            max_step_cuts: 4,
            linear_solver: LinearSolverKind::Direct,
        },
        bcs: vec![
            BoundaryCondition {
                region: Region::XMin,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), None, None],
                },
            },
            BoundaryCondition {
                region: Region::XMax,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), None, None],
                },
            },
            BoundaryCondition {
                region: Region::YMin,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), fixed(0.0), None],
                },
            },
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Traction {
                    vector: [0.0, -50e3, 0.0],
                    schedule: Schedule::Constant { value: 1.0 },
                },
            },
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Pressure {
                    schedule: Schedule::Constant { value: 0.0 },
                },
            },
        ],
        output: OutputSpec {
            every: 1,
            formats: vec![OutputFormat::Csv],
            fields: None,
        },
    }
}

/// Gravity drainage of a 1 m sand column with the closed-form retention
/// fits; drained bottom, no-flux elsewhere, geostatic initialization.
pub fn liakopoulos() -> Scenario {
    let fixed = |v: f64| Some(Schedule::Constant { value: v });
    Scenario {
        name: "liakopoulos".into(),
        geometry: LatticeSpec {
            extents: vec![0.25, 1.0],
            dx: 0.025,
            thickness: 1.0,
            layers: FaceLayers::none()
                .with(0, 0, 2)
                .with(0, 1, 2)
                .with(1, 0, 2),
        },
        horizon: 0.05,
        influence: InfluenceFunction::Unit,
        material: MaterialParams {
            // E = 1.3 MPa, nu = 0.4
            k_bulk: 1.3e6 / (3.0 * (1.0 - 2.0 * 0.4)),
            g_shear: 1.3e6 / (2.0 * (1.0 + 0.4)),
            m_cs: 1.0,
            lambda_c: 0.12,
            kappa_s: 0.03,
            v0: 2.76,
            rho_s: 2000.0,
            rho_w: 1000.0,
            k_w: 2.2e9,
            phi0: 0.2975,
            flow: FlowParams::IntrinsicPermeability {
                kappa: 4.5e-13,
                mu: 1e-3,
            },
            gravity: [0.0, -9.81, 0.0],
            plastic: false,
            kr_min: 1e-8,
            stabilization: 0.0,
            stabilization_flow: 0.5,
        },
        retention: RetentionModel::Liakopoulos,
        initial: InitialState {
            sigma0: InitStress::Isotropic(0.0),
            pc0: -1e9,
            p_w0: InitPressure::Uniform(0.0),
            geostatic: true,
        },
        solver: SolverConfig {
            dt: 30.0,
            t_end: 7200.0,
            newton_tol_rel: 1e-6,
            newton_tol_abs: 1e-10,
            max_newton: 25,
            line_search_max_cuts: 8,
            step_cut_factor: 0.5,
            max_step_cuts: 4,
            linear_solver: LinearSolverKind::Direct,
        },
        bcs: vec![
            BoundaryCondition {
                region: Region::XMin,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), None, None],
                },
            },
            BoundaryCondition {
                region: Region::XMax,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), None, None],
                },
            },
            BoundaryCondition {
                region: Region::YMin,
                kind: BcKind::Displacement {
                    components: [None, fixed(0.0), None],
                },
            },
            BoundaryCondition {
                region: Region::YMin,
                kind: BcKind::Pressure {
                    schedule: Schedule::Constant { value: 0.0 },
                },
            },
        ],
        output: OutputSpec {
            every: 1,
            formats: vec![OutputFormat::Csv],
            fields: None,
        },
    }
}

/// Mandel slab: 10 m x 3 m (bottom symmetry roller), rigid frictionless
/// impermeable platen via a tied top layer, drained lateral faces, and a
/// consistent undrained initial state (p0 = q/2).
pub fn mandel() -> Scenario {
    let fixed = |v: f64| Some(Schedule::Constant { value: v });
    let q = 1e3;
    Scenario {
        name: "mandel".into(),
        geometry: LatticeSpec {
            extents: vec![10.0, 3.0],
            dx: 0.2,
            thickness: 0.4,
            layers: FaceLayers::none()
                .with(0, 0, 2)
                .with(0, 1, 2)
                .with(1, 0, 2)
                .with(1, 1, 2),
        },
        horizon: 0.4,
        influence: InfluenceFunction::Unit,
        material: MaterialParams {
            k_bulk: 8.3e7,
            g_shear: 1.8e7,
            m_cs: 1.0,
            lambda_c: 0.12,
            kappa_s: 0.03,
            v0: 2.76,
            rho_s: 2000.0,
            rho_w: 1000.0,
            k_w: 1e12,
            phi0: 0.5,
            flow: FlowParams::HydraulicConductivity { k: 1e-8 },
            gravity: [0.0; 3],
            plastic: false,
            kr_min: 1e-8,
            stabilization: 0.0,
            stabilization_flow: 0.5,
        },
        retention: RetentionModel::Saturated,
        initial: InitialState {
            // undrained response: p = q/2, effective lateral tension q/2
            sigma0: InitStress::Diagonal([q / 2.0, -q / 2.0, 0.0]),
            pc0: -1e9,
            p_w0: InitPressure::Uniform(q / 2.0),
            geostatic: false,
        },
        solver: SolverConfig {
            dt: 2000.0,
            t_end: 4.0e5,
            newton_tol_rel: 1e-6,
            newton_tol_abs: 1e-10,
            max_newton: 25,
            line_search_max_cuts: 8,
            step_cut_factor: 0.5,
            max_step_cuts: 4,
            linear_solver: LinearSolverKind::Direct,
        },
        bcs: vec![
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Tie { component: 1 },
            },
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Traction {
                    vector: [0.0, -q, 0.0],
                    schedule: Schedule::Constant { value: 1.0 },
                },
            },
            BoundaryCondition {
                region: Region::YMin,
                kind: BcKind::Displacement {
                    components: [None, fixed(0.0), None],
                },
            },
            BoundaryCondition {
                region: Region::XMin,
                kind: BcKind::Pressure {
                    schedule: Schedule::Constant { value: 0.0 },
                },
            },
            BoundaryCondition {
                region: Region::XMax,
                kind: BcKind::Pressure {
                    schedule: Schedule::Constant { value: 0.0 },
                },
            },
        ],
        output: OutputSpec {
            every: 1,
            formats: vec![OutputFormat::Csv],
            fields: None,
        },
    }
}

fn specimen_material() -> MaterialParams {
    MaterialParams {
        k_bulk: 38.9e6,
        g_shear: 13e6,
        m_cs: 1.0,
        lambda_c: 0.12,
        kappa_s: 0.03,
        v0: 2.76,
        rho_s: 2000.0,
        rho_w: 1000.0,
        k_w: 2.2e9,
        phi0: 0.5,
        flow: FlowParams::HydraulicConductivity { k: 1e-8 },
        gravity: [0.0; 3],
        plastic: true,
        kr_min: 1e-8,
        stabilization: 0.0,
        stabilization_flow: 0.5,
    }
}

/// Unsaturated specimen under confined compression or shear: 1 cm x 2 cm,
/// dx = 0.25 mm (3200 points), 84 kPa confinement ramped in 0.04 s, initial
/// suction 20 kPa, overconsolidated (pc0 = -300 kPa at p0 = -100 kPa).
fn specimen(name: &str, top_ux_rate: f64, top_uy_rate: f64) -> Scenario {
    let fixed = |v: f64| Some(Schedule::Constant { value: v });
    let ramp = Schedule::Ramp {
        t0: 0.0,
        t1: 0.04,
        from: 0.0,
        to: 1.0,
    };
    Scenario {
        name: name.into(),
        geometry: LatticeSpec {
            extents: vec![0.01, 0.02],
            dx: 0.25e-3,
            thickness: 0.25e-3,
            layers: FaceLayers::none()
                .with(0, 0, 2)
                .with(0, 1, 2)
                .with(1, 0, 2)
                .with(1, 1, 2),
        },
        horizon: 0.375e-3,
        influence: InfluenceFunction::Unit,
        material: specimen_material(),
        retention: saturated_swrc(),
        initial: InitialState {
            sigma0: InitStress::Isotropic(-100e3),
            pc0: -300e3,
            p_w0: InitPressure::Uniform(-20e3),
            geostatic: false,
        },
        solver: SolverConfig {
            dt: 0.05,
            t_end: 24.0,
            newton_tol_rel: 1e-6,
            newton_tol_abs: 1e-10,
            max_newton: 25,
            line_search_max_cuts: 8,
            step_cut_factor: 0.5,
            max_step_cuts: 4,
            linear_solver: LinearSolverKind::Direct,
        },
        bcs: vec![
            BoundaryCondition {
                region: Region::XMin,
                kind: BcKind::Traction {
                    vector: [84e3, 0.0, 0.0],
                    schedule: ramp,
                },
            },
            BoundaryCondition {
                region: Region::XMax,
                kind: BcKind::Traction {
                    vector: [-84e3, 0.0, 0.0],
                    schedule: ramp,
                },
            },
            BoundaryCondition {
                region: Region::YMin,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), fixed(0.0), None],
                },
            },
            BoundaryCondition {
                region: Region::YMax,
                kind: BcKind::Displacement {
                    components: [
                        Some(if top_ux_rate == 0.0 {
                            Schedule::Constant { value: 0.0 }
                        } else {
                            Schedule::Rate {
                                rate: top_ux_rate,
                                t_start: 0.04,
                            }
                        }),
                        Some(Schedule::Rate {
                            rate: top_uy_rate,
                            t_start: 0.04,
                        }),
                        None,
                    ],
                },
            },
        ],
        output: OutputSpec {
            every: 20,
            formats: vec![OutputFormat::Csv],
            fields: None,
        },
    }
}

/// Combined shear and compression of the unsaturated specimen.
pub fn shear_compression() -> Scenario {
    specimen("shear_compression", 1.4e-5, -1e-5)
}

/// Plane-strain compression with constant confinement.
pub fn biaxial_compression() -> Scenario {
    specimen("biaxial_compression", 0.0, -3e-5)
}

/// Scaled-down strip footing on unsaturated soil (optional scenario; runs at
/// desk scale, no validation gate).
pub fn footing() -> Scenario {
    let fixed = |v: f64| Some(Schedule::Constant { value: v });
    // footing occupies |x - 2| <= 0.4 on the top layer
    let spec = LatticeSpec {
        extents: vec![4.0, 1.0],
        dx: 0.05,
        thickness: 0.02,
        layers: FaceLayers::none()
            .with(0, 0, 2)
            .with(0, 1, 2)
            .with(1, 0, 2)
            .with(1, 1, 2),
    };
    let cloud = build_lattice(&spec).expect("footing lattice");
    let footing_points: Vec<usize> = cloud
        .layer_points(1, 1)
        .into_iter()
        .filter(|&i| (cloud.positions[i].x - 2.0).abs() <= 0.4)
        .collect();
    Scenario {
        name: "footing".into(),
        geometry: spec,
        horizon: 0.1,
        influence: InfluenceFunction::Unit,
        material: MaterialParams {
            k_bulk: 55.56e6,
            g_shear: 18.52e6,
            m_cs: 1.0,
            lambda_c: 0.15,
            kappa_s: 0.05,
            v0: 2.0,
            rho_s: 2500.0,
            rho_w: 1000.0,
            k_w: 2.2e9,
            phi0: 0.25,
            flow: FlowParams::HydraulicConductivity { k: 1e-7 },
            gravity: [0.0, -9.81, 0.0],
            plastic: true,
            kr_min: 1e-8,
            stabilization: 0.0,
            stabilization_flow: 0.5,
        },
        retention: RetentionModel::VanGenuchten(SwrcParams {
            s1: 0.0,
            s2: 1.0,
            s_a: 10e3,
            n_vg: 1.25,
            m_vg: 0.2,
        }),
        initial: InitialState {
            sigma0: InitStress::Isotropic(-1e3),
            pc0: -200e3,
            p_w0: InitPressure::Uniform(-20e3),
            geostatic: true,
        },
        solver: SolverConfig {
            dt: 0.1,
            t_end: 24.0,
            newton_tol_rel: 1e-6,
            newton_tol_abs: 1e-10,
            max_newton: 25,
            line_search_max_cuts: 8,
            step_cut_factor: 0.5,
            max_step_cuts: 4,
            linear_solver: LinearSolverKind::Direct,
        },
        bcs: vec![
            BoundaryCondition {
                region: Region::XMin,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), None, None],
                },
            },
            BoundaryCondition {
                region: Region::XMax,
                kind: BcKind::Displacement {
                    components: [fixed(0.0), None, None],
                },
            },
            BoundaryCondition {
                region: Region::YMin,
                kind: BcKind::Displacement {
                    components: [None, fixed(0.0), None],
                },
            },
            BoundaryCondition {
                region: Region::Points(footing_points),
                kind: BcKind::Displacement {
                    components: [
                        fixed(0.0),
                        Some(Schedule::Rate {
                            rate: -1.67e-3,
                            t_start: 0.0,
                        }),
                        None,
                    ],
                },
            },
        ],
        output: OutputSpec {
            every: 20,
            formats: vec![OutputFormat::Csv],
            fields: None,
        },
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn presets_expand_and_roundtrip() {
        for name in Preset::all() {
            let preset: Preset = name.parse().unwrap();
            let sc = preset.build();
            sc.validate().unwrap();
            let json = sc.to_json();
            let back = Scenario::from_json(&json).unwrap();
            assert_eq!(sc, back, "round-trip mismatch for {name}");
        }
    }

    #[test]
    fn terzaghi_preset_has_400_interior_points() {
        let sc = terzaghi();
        let cloud = build_lattice(&sc.geometry).unwrap();
        assert_eq!(cloud.interior_count(), 400);
    }

    #[test]
    fn unknown_keys_and_empty_files_rejected() {
        assert!(Scenario::from_json("").is_err());
        let mut json: serde_json::Value =
            serde_json::from_str(&terzaghi().to_json()).unwrap();
        json["bogus_key"] = serde_json::json!(1);
        assert!(Scenario::from_json(&json.to_string()).is_err());
    }

    #[test]
    fn partial_override_of_dt() {
        let mut json: serde_json::Value =
            serde_json::from_str(&terzaghi().to_json()).unwrap();
        json["solver"]["dt"] = serde_json::json!(0.5);
        let sc = Scenario::from_json(&json.to_string()).unwrap();
        assert_eq!(sc.solver.dt, 0.5);
        assert_eq!(sc.solver.t_end, 2000.0);
    }

    #[test]
    fn unphysical_porosity_rejected() {
        let mut sc = terzaghi();
        sc.material.phi0 = 1.5;
        assert!(matches!(sc.validate(), Err(Error::Config(_))));
    }
}
