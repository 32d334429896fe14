//! Closed-form references: Terzaghi consolidation series, Mandel slab series
//! with precomputed transcendental roots, and the digitized sand-column
//! drainage data.

use crate::camclay::MaterialParams;
use crate::error::{Error, Result};
use std::path::Path;

/// Consolidation coefficient from the simulator's own parameter set:
/// `c_v = mobility * (K + 4G/3)` (mobility already folds 1/gamma_w).
pub fn consolidation_coefficient(params: &MaterialParams) -> f64 {
    params.mobility() * params.constrained_modulus()
}

#[derive(Clone, Debug)]
pub struct TerzaghiParams {
    /// Drainage path length (m).
    pub h: f64,
    pub c_v: f64,
    /// Initial excess pressure.
    pub p0: f64,
    pub n_terms: usize,
}

impl TerzaghiParams {
    pub fn new(h: f64, c_v: f64, p0: f64) -> Self {
        TerzaghiParams {
            h,
            c_v,
            p0,
            n_terms: 200,
        }
    }

    pub fn time_factor(&self, t: f64) -> f64 {
        self.c_v * t / (self.h * self.h)
    }
}

/// Excess pressure at depth `z` below the drained surface (0 <= z <= H, the
/// impermeable base is z = H):
/// `p/p0 = sum (2/M) sin(M z/H) exp(-M^2 T)`, `M = pi (2m+1)/2`.
pub fn terzaghi_pressure(z: f64, t: f64, p: &TerzaghiParams) -> f64 {
    let tv = p.time_factor(t);
    let zeta = z / p.h;
    let mut acc = 0.0;
    for m in 0..p.n_terms {
        let big_m = std::f64::consts::FRAC_PI_2 * (2 * m + 1) as f64;
        acc += 2.0 / big_m * (big_m * zeta).sin() * (-big_m * big_m * tv).exp();
    }
    p.p0 * acc
}

#[derive(Clone, Debug)]
pub struct MandelParams {
    /// Slab half-width.
    pub a: f64,
    pub c_v: f64,
    /// Initial (undrained) pressure magnitude.
    pub p0: f64,
    /// Drained Poisson ratio (undrained is 1/2: incompressible constituents).
    pub nu: f64,
    pub roots: Vec<f64>,
}

impl MandelParams {
    pub fn new(a: f64, c_v: f64, p0: f64, nu: f64, n_roots: usize) -> Result<Self> {
        let roots = mandel_roots(nu, n_roots)?;
        Ok(MandelParams {
            a,
            c_v,
            p0,
            nu,
            roots,
        })
    }
}

/// Roots of `tan(alpha) = (1 - nu)/(nu_u - nu) alpha` with `nu_u = 1/2`,
/// bracketed in `(n pi, n pi + pi/2)` and bisected to machine precision.
pub fn mandel_roots(nu: f64, n_roots: usize) -> Result<Vec<f64>> {
    let c = (1.0 - nu) / (0.5 - nu);
    if !(c > 1.0) {
        return Err(Error::config("Mandel roots require nu < 1/2"));
    }
    let g = |alpha: f64| alpha.sin() - c * alpha * alpha.cos();
    let mut roots = Vec::with_capacity(n_roots);
    for n in 0..n_roots {
        let mut lo = n as f64 * std::f64::consts::PI + 1e-12;
        let mut hi = lo + std::f64::consts::FRAC_PI_2 - 2e-12;
        let (glo, ghi) = (g(lo), g(hi));
        if glo * ghi > 0.0 {
            return Err(Error::config(format!(
                "Mandel root {n} not bracketed (g = {glo:.3e}, {ghi:.3e})"
            )));
        }
        let mut flo = glo;
        for _ in 0..200 {
            let mid = 0.5 * (lo + hi);
            let fm = g(mid);
            if flo * fm <= 0.0 {
                hi = mid;
            } else {
                lo = mid;
                flo = fm;
            }
        }
        let root = 0.5 * (lo + hi);
        if let Some(&prev) = roots.last() {
            if root <= prev {
                return Err(Error::config("Mandel roots not increasing"));
            }
        }
        roots.push(root);
    }
    Ok(roots)
}

/// Pore pressure at |x| <= a from the slab center:
/// `p/p0 = 2 sum_n [sin a_n / (a_n - sin a_n cos a_n)]
///         [cos(a_n x/a) - cos a_n] exp(-a_n^2 c t / a^2)`.
pub fn mandel_pressure(x: f64, t: f64, p: &MandelParams) -> f64 {
    let tau = p.c_v * t / (p.a * p.a);
    let mut acc = 0.0;
    for &alpha in &p.roots {
        let (s, c) = alpha.sin_cos();
        let coef = s / (alpha - s * c);
        acc += coef * ((alpha * x / p.a).cos() - c) * (-alpha * alpha * tau).exp();
    }
    2.0 * p.p0 * acc
}

/// Digitized sand-column drainage curves (figure digitization, about +-5%
/// uncertainty).
#[derive(Clone, Debug)]
pub struct LiakopoulosData {
    /// (time s, height m, pore pressure Pa)
    pub pressure: Vec<(f64, f64, f64)>,
    /// (time s, outflow velocity m/s)
    pub outflow: Vec<(f64, f64)>,
}

impl LiakopoulosData {
    pub fn times(&self) -> Vec<f64> {
        let mut ts: Vec<f64> = self.pressure.iter().map(|r| r.0).collect();
        ts.dedup();
        ts
    }

    pub fn profile_at(&self, t: f64) -> Vec<(f64, f64)> {
        self.pressure
            .iter()
            .filter(|r| (r.0 - t).abs() < 1e-9)
            .map(|r| (r.1, r.2))
            .collect()
    }
}

/// Default location of the shipped data files.
pub fn default_data_dir() -> std::path::PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("data")
}

/// Loads the digitized reference tables. A missing file surfaces as an I/O
/// error so callers (tests) can skip with a notice.
pub fn liakopoulos_reference(dir: &Path) -> Result<LiakopoulosData> {
    let read_table = |name: &str, cols: usize| -> Result<Vec<Vec<f64>>> {
        let path = dir.join(name);
        let text = std::fs::read_to_string(&path)
            .map_err(|e| Error::io(path.display().to_string(), e))?;
        let mut rows = Vec::new();
        for (ln, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() || line.starts_with('#') {
                continue;
            }
            let vals: std::result::Result<Vec<f64>, _> =
                line.split_whitespace().map(|v| v.parse::<f64>()).collect();
            let vals = vals.map_err(|e| {
                Error::config(format!("{name}:{}: bad number ({e})", ln + 1))
            })?;
            if vals.len() != cols {
                return Err(Error::config(format!(
                    "{name}:{}: expected {cols} columns, got {}",
                    ln + 1,
                    vals.len()
                )));
            }
            rows.push(vals);
        }
        Ok(rows)
    };
    let pressure = read_table("liakopoulos_pressure.txt", 3)?
        .into_iter()
        .map(|r| (r[0], r[1], r[2]))
        .collect();
    let outflow = read_table("liakopoulos_outflow.txt", 2)?
        .into_iter()
        .map(|r| (r[0], r[1]))
        .collect();
    Ok(LiakopoulosData { pressure, outflow })
}
