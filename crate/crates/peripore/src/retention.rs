//! Water retention and relative permeability: van Genuchten curve with
//! analytic first and second derivatives, plus the closed-form sand-column
//! variant fitted to the Liakopoulos drainage data.

use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Floor applied to the relative permeability so the flow block never becomes
/// singular at residual saturation.
pub const KR_MIN_DEFAULT: f64 = 1e-8;

/// van Genuchten parameters.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct SwrcParams {
    /// Residual saturation.
    pub s1: f64,
    /// Maximum saturation.
    pub s2: f64,
    /// Scaling suction (Pa).
    pub s_a: f64,
    pub n_vg: f64,
    pub m_vg: f64,
}

impl SwrcParams {
    pub fn validate(&self) -> Result<()> {
        if !(0.0 <= self.s1 && self.s1 < self.s2 && self.s2 <= 1.0) {
            return Err(Error::config("retention requires 0 <= S1 < S2 <= 1"));
        }
        if !(self.s_a > 0.0) {
            return Err(Error::config("retention scaling suction must be positive"));
        }
        if !(self.n_vg > 1.0) {
            return Err(Error::config("van Genuchten n must exceed 1"));
        }
        if !(self.m_vg > 0.0 && self.m_vg < 1.0) {
            return Err(Error::config("van Genuchten m must lie in (0, 1)"));
        }
        Ok(())
    }
}

/// Saturation state with the derivatives needed by the storage term and its
/// linearization. Derivatives are with respect to p_w (so they are >= 0:
/// saturation grows as suction relaxes).
#[derive(Clone, Copy, Debug)]
pub struct Saturation {
    pub sr: f64,
    pub sr_eff: f64,
    pub d_sr_dpw: f64,
    pub d2_sr_dpw2: f64,
}

impl Saturation {
    pub fn saturated() -> Self {
        Saturation {
            sr: 1.0,
            sr_eff: 1.0,
            d_sr_dpw: 0.0,
            d2_sr_dpw2: 0.0,
        }
    }
}

/// Retention model selection.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "model", rename_all = "snake_case")]
pub enum RetentionModel {
    /// Fully saturated at any pressure (saturated benchmarks).
    Saturated,
    VanGenuchten(SwrcParams),
    /// Closed-form fits for the Liakopoulos sand column:
    /// `Sr = 1 - 1.9722e-11 (-p_w)^2.4279` (p_w in Pa) and
    /// `k_r = 1 - 2.207 (1 - Sr)^1.021`.
    Liakopoulos,
}

impl RetentionModel {
    pub fn validate(&self) -> Result<()> {
        match self {
            RetentionModel::Saturated => Ok(()),
            RetentionModel::VanGenuchten(p) => p.validate(),
            RetentionModel::Liakopoulos => Ok(()),
        }
    }

    /// Degree of saturation and derivatives at a pore pressure (any sign;
    /// the saturated branch p_w >= 0 returns S2 with zero slope).
    pub fn saturation(&self, p_w: f64) -> Saturation {
        match self {
            RetentionModel::Saturated => Saturation::saturated(),
            RetentionModel::VanGenuchten(p) => van_genuchten(p_w, p),
            RetentionModel::Liakopoulos => liakopoulos_saturation(p_w),
        }
    }

    /// Relative permeability and its derivative with respect to p_w,
    /// clamped to `[kr_min, 1]` (zero derivative where clamped).
    pub fn relative_permeability(&self, _p_w: f64, sat: &Saturation, kr_min: f64) -> (f64, f64) {
        match self {
            RetentionModel::Saturated => (1.0, 0.0),
            RetentionModel::VanGenuchten(p) => {
                let (kr, dkr_dse) = relative_permeability(sat.sr_eff, p.m_vg);
                if kr <= kr_min {
                    (kr_min, 0.0)
                } else {
                    let dse_dpw = sat.d_sr_dpw / (p.s2 - p.s1);
                    (kr, dkr_dse * dse_dpw)
                }
            }
            RetentionModel::Liakopoulos => {
                let (kr, dkr_dsr) = liakopoulos_kr(sat.sr);
                if kr <= kr_min {
                    (kr_min, 0.0)
                } else {
                    (kr, dkr_dsr * sat.d_sr_dpw)
                }
            }
        }
    }
}

/// `Sr = S1 + (S2 - S1) [1 + (-p_w / s_a)^n]^(-m)` on the suction branch.
pub fn van_genuchten(p_w: f64, p: &SwrcParams) -> Saturation {
    if p_w >= 0.0 {
        return Saturation {
            sr: p.s2,
            sr_eff: 1.0,
            d_sr_dpw: 0.0,
            d2_sr_dpw2: 0.0,
        };
    }
    let (n, m, ds) = (p.n_vg, p.m_vg, p.s2 - p.s1);
    // theta = suction / s_a; clamped away from zero so the derivative
    // formulas stay finite for n < 2.
    let theta = (-p_w / p.s_a).max(1e-9);
    let tn = theta.powf(n);
    let base = 1.0 + tn;
    let sr_eff = base.powf(-m);
    let sr = p.s1 + ds * sr_eff;
    let d_sr = ds * (m * n / p.s_a) * theta.powf(n - 1.0) * base.powf(-m - 1.0);
    let d2_sr = -ds * (m * n / (p.s_a * p.s_a))
        * theta.powf(n - 2.0)
        * base.powf(-m - 2.0)
        * ((n - 1.0) * base - (m + 1.0) * n * tn);
    Saturation {
        sr,
        sr_eff,
        d_sr_dpw: d_sr,
        d2_sr_dpw2: d2_sr,
    }
}

/// Mualem-van Genuchten relative permeability
/// `k_r = sqrt(Se) [1 - (1 - Se^(1/m))^m]^2` with its Se-derivative
/// (unclamped; callers clamp).
pub fn relative_permeability(sr_eff: f64, m_vg: f64) -> (f64, f64) {
    let se = sr_eff.clamp(0.0, 1.0);
    if se <= 0.0 {
        return (0.0, 0.0);
    }
    if se >= 1.0 {
        return (1.0, 0.0);
    }
    let se_d = se.clamp(1e-12, 1.0 - 1e-12);
    let a = 1.0 - se_d.powf(1.0 / m_vg);
    let t = 1.0 - a.powf(m_vg);
    let kr = se_d.sqrt() * t * t;
    let dt_dse = a.powf(m_vg - 1.0) * se_d.powf(1.0 / m_vg - 1.0);
    let dkr = 0.5 / se_d.sqrt() * t * t + se_d.sqrt() * 2.0 * t * dt_dse;
    (kr, dkr)
}

fn liakopoulos_saturation(p_w: f64) -> Saturation {
    const A: f64 = 1.9722e-11;
    const B: f64 = 2.4279;
    if p_w >= 0.0 {
        return Saturation::saturated();
    }
    let s = -p_w;
    let sr = (1.0 - A * s.powf(B)).clamp(0.0, 1.0);
    if sr <= 0.0 {
        // fully desaturated tail: freeze
        return Saturation {
            sr: 0.0,
            sr_eff: 0.0,
            d_sr_dpw: 0.0,
            d2_sr_dpw2: 0.0,
        };
    }
    Saturation {
        sr,
        sr_eff: sr,
        d_sr_dpw: A * B * s.powf(B - 1.0),
        d2_sr_dpw2: -A * B * (B - 1.0) * s.powf(B - 2.0),
    }
}

fn liakopoulos_kr(sr: f64) -> (f64, f64) {
    const C: f64 = 2.207;
    const D: f64 = 1.021;
    let s = sr.clamp(0.0, 1.0);
    let kr = 1.0 - C * (1.0 - s).powf(D);
    (kr.clamp(0.0, 1.0), C * D * (1.0 - s).powf(D - 1.0))
}
