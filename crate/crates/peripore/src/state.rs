//! Per-point history state.

use crate::math::{equivalent_shear_strain, Mat3};

/// Committed history at a material point. Stress and plastic strain are full
/// symmetric 3x3 tensors (plane strain keeps sigma_zz). `pc` is the apparent
/// preconsolidation pressure, negative in compression.
#[derive(Clone, Debug)]
pub struct PointState {
    pub stress_eff: Mat3,
    pub eps_p: Mat3,
    pub eps_v_p: f64,
    pub pc: f64,
    pub sr: f64,
    pub sr_eff: f64,
    pub porosity: f64,
}

impl PointState {
    pub fn initial(stress_eff: Mat3, pc: f64, sr: f64, sr_eff: f64, porosity: f64) -> Self {
        PointState {
            stress_eff,
            eps_p: Mat3::zeros(),
            eps_v_p: 0.0,
            pc,
            sr,
            sr_eff,
            porosity,
        }
    }

    /// Equivalent plastic shear strain (von Mises measure of the plastic
    /// deviator), the banding indicator plotted by the output layer.
    pub fn eps_s_p(&self) -> f64 {
        equivalent_shear_strain(&self.eps_p)
    }
}
