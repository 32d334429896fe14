//! Validation-case runners: execute a preset, compare against the closed-form
//! or digitized references, and produce error-metric reports.

use crate::analytic::{
    consolidation_coefficient, liakopoulos_reference, mandel_pressure, terzaghi_pressure,
    LiakopoulosData, MandelParams, TerzaghiParams,
};
use crate::cloud::FaceLayers;
use crate::error::{Error, Result};
use crate::scenario::{self, Scenario};
use crate::snapshot::Snapshot;
use crate::solver::Trajectory;
use std::fmt::Write as _;
use std::path::Path;

/// Layer rows needed to cover a horizon of `m_ratio` spacings.
fn layer_rows(m_ratio: f64) -> usize {
    m_ratio.ceil() as usize
}

pub struct TerzaghiOutcome {
    pub m_ratio: f64,
    pub t_factors: Vec<f64>,
    pub times: Vec<f64>,
    pub l2_errors: Vec<f64>,
    pub runtime_s: f64,
}

impl TerzaghiOutcome {
    pub fn passed(&self, tol: f64) -> bool {
        self.l2_errors.iter().all(|e| e.is_finite() && *e <= tol)
    }
}

/// Terzaghi scenario with horizon `m_ratio * dx` (layers sized to match).
pub fn terzaghi_scenario(m_ratio: f64) -> Scenario {
    let mut sc = scenario::terzaghi();
    sc.horizon = m_ratio * sc.geometry.dx;
    let rows = layer_rows(m_ratio);
    sc.geometry.layers = FaceLayers::none()
        .with(0, 0, rows)
        .with(0, 1, rows)
        .with(1, 0, rows)
        .with(1, 1, rows);
    sc
}

/// Runs the consolidation column and compares normalized excess-pressure
/// profiles against the series at the requested time factors.
pub fn terzaghi_case(m_ratio: f64, t_factors: &[f64]) -> Result<TerzaghiOutcome> {
    let start = std::time::Instant::now();
    let mut sc = terzaghi_scenario(m_ratio);
    let c_v = consolidation_coefficient(&sc.material);
    let h = sc.geometry.extents[1];
    let t_max = t_factors.iter().cloned().fold(0.0, f64::max) * h * h / c_v;
    sc.solver.t_end = (t_max * 1.05).ceil();
    let mut run = sc.build_run()?;
    let traj = run.march(1)?;

    let p0 = 50e3;
    let oracle = TerzaghiParams::new(h, c_v, p0);
    let cloud = &run.assembler.model.cloud;
    let interior: Vec<usize> = (0..cloud.len())
        .filter(|&i| cloud.labels[i] == crate::cloud::Label::Interior)
        .collect();

    let mut l2_errors = Vec::new();
    let mut times = Vec::new();
    for &tf in t_factors {
        let t_target = tf * h * h / c_v;
        let snap = traj.nearest(t_target);
        times.push(snap.time);
        let mut num = 0.0;
        let mut den = 0.0;
        for &i in &interior {
            let z = h - cloud.positions[i].y; // depth below drained surface
            let ps = terzaghi_pressure(z, snap.time, &oracle);
            let pn = snap.p_w[i];
            num += (pn - ps) * (pn - ps);
            den += ps * ps;
        }
        l2_errors.push((num / den.max(1e-300)).sqrt());
    }
    Ok(TerzaghiOutcome {
        m_ratio,
        t_factors: t_factors.to_vec(),
        times,
        l2_errors,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

pub struct MandelOutcome {
    pub times: Vec<f64>,
    pub p_center_num: Vec<f64>,
    pub p_center_series: Vec<f64>,
    pub p0: f64,
    pub linf_rel: f64,
    /// Peak normalized center pressure (Mandel-Cryer rise when > 1).
    pub peak_normalized: f64,
    pub runtime_s: f64,
}

pub fn mandel_case() -> Result<MandelOutcome> {
    let start = std::time::Instant::now();
    let sc = scenario::mandel();
    let q = 1e3;
    let p0 = q / 2.0;
    let params = &sc.material;
    let nu = (3.0 * params.k_bulk - 2.0 * params.g_shear)
        / (2.0 * (3.0 * params.k_bulk + params.g_shear));
    let c_v = consolidation_coefficient(params);
    let a = sc.geometry.extents[0] / 2.0;
    let oracle = MandelParams::new(a, c_v, p0, nu, 128)?;

    let mut run = sc.build_run()?;
    let traj = run.march(1)?;
    let cloud = &run.assembler.model.cloud;
    // center of the slab
    let cx = sc.geometry.extents[0] / 2.0;
    let cy = sc.geometry.extents[1] / 2.0;
    let center = (0..cloud.len())
        .filter(|&i| cloud.labels[i] == crate::cloud::Label::Interior)
        .min_by(|&i, &j| {
            let di = (cloud.positions[i] - crate::math::Vec3::new(cx, cy, 0.0)).norm();
            let dj = (cloud.positions[j] - crate::math::Vec3::new(cx, cy, 0.0)).norm();
            di.partial_cmp(&dj).unwrap()
        })
        .expect("interior point");

    let mut times = Vec::new();
    let mut p_num = Vec::new();
    let mut p_ser = Vec::new();
    let mut linf: f64 = 0.0;
    let mut peak: f64 = 0.0;
    for snap in traj.snapshots.iter().skip(1) {
        let pn = snap.p_w[center];
        let ps = mandel_pressure(0.0, snap.time, &oracle);
        times.push(snap.time);
        p_num.push(pn);
        p_ser.push(ps);
        linf = linf.max((pn - ps).abs() / p0);
        peak = peak.max(pn / p0);
    }
    Ok(MandelOutcome {
        times,
        p_center_num: p_num,
        p_center_series: p_ser,
        p0,
        linf_rel: linf,
        peak_normalized: peak,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

pub struct LiakopoulosOutcome {
    /// (time, height, p_num, p_reference, relative error)
    pub rows: Vec<(f64, f64, f64, f64, f64)>,
    /// (time, outflow velocity) at the drainage boundary
    pub outflow: Vec<(f64, f64)>,
    pub runtime_s: f64,
}

impl LiakopoulosOutcome {
    /// Worst relative error over heights >= h_min at the reference times.
    pub fn max_rel_error_above(&self, h_min: f64) -> f64 {
        self.rows
            .iter()
            .filter(|r| r.1 >= h_min - 1e-9)
            .map(|r| r.4)
            .fold(0.0, f64::max)
    }

    pub fn outflow_strictly_decreasing(&self) -> bool {
        self.outflow.windows(2).all(|w| w[1].1 < w[0].1)
    }
}

/// Linear interpolation of the pressure profile of a snapshot at height h
/// (column-averaged per lattice row).
fn column_profile(snap: &Snapshot) -> Vec<(f64, f64)> {
    use std::collections::BTreeMap;
    let mut rows: BTreeMap<i64, (f64, f64, usize)> = BTreeMap::new();
    for i in 0..snap.len() {
        if !snap.interior[i] {
            continue;
        }
        let y = snap.position[i].y;
        let key = (y * 1e9).round() as i64;
        let e = rows.entry(key).or_insert((y, 0.0, 0));
        e.1 += snap.p_w[i];
        e.2 += 1;
    }
    rows.values().map(|(y, s, n)| (*y, s / *n as f64)).collect()
}

fn interp_profile(profile: &[(f64, f64)], h: f64) -> f64 {
    let mut below = profile.first().copied().unwrap();
    let mut above = profile.last().copied().unwrap();
    for w in profile.windows(2) {
        if w[0].0 <= h && h <= w[1].0 {
            below = w[0];
            above = w[1];
            break;
        }
    }
    if (above.0 - below.0).abs() < 1e-12 {
        return below.1;
    }
    below.1 + (above.1 - below.1) * (h - below.0) / (above.0 - below.0)
}

pub fn liakopoulos_case(data: &LiakopoulosData) -> Result<LiakopoulosOutcome> {
    let start = std::time::Instant::now();
    let sc = scenario::liakopoulos();
    let mut run = sc.build_run()?;
    let traj = run.march(1)?;

    let mut rows = Vec::new();
    for &(t, h, p_exp) in &data.pressure {
        let snap = traj.nearest(t);
        let profile = column_profile(snap);
        let p_num = interp_profile(&profile, h);
        let rel = (p_num - p_exp).abs() / p_exp.abs().max(1e-300);
        rows.push((t, h, p_num, p_exp, rel));
    }

    // outflow velocity: mean downward Darcy flux in the lowest interior row
    let cloud = &run.assembler.model.cloud;
    let y_min = cloud
        .positions
        .iter()
        .enumerate()
        .filter(|(i, _)| cloud.labels[*i] == crate::cloud::Label::Interior)
        .map(|(_, p)| p.y)
        .fold(f64::INFINITY, f64::min);
    let mut outflow = Vec::new();
    for &t in &data.times() {
        let snap = traj.nearest(t);
        let mut v = 0.0;
        let mut n = 0;
        for i in 0..snap.len() {
            if snap.interior[i] && (snap.position[i].y - y_min).abs() < 1e-9 {
                v += -snap.flux[i].y;
                n += 1;
            }
        }
        outflow.push((t, v / n as f64));
    }

    Ok(LiakopoulosOutcome {
        rows,
        outflow,
        runtime_s: start.elapsed().as_secs_f64(),
    })
}

/// Specimen scenario at a given spacing and horizon, shortened to
/// `t_end` seconds of loading.
pub fn biaxial_scenario(dx: f64, horizon: f64, t_end: f64) -> Scenario {
    let mut sc = scenario::biaxial_compression();
    sc.geometry.dx = dx;
    sc.geometry.thickness = dx;
    let rows = layer_rows(horizon / dx);
    sc.geometry.layers = FaceLayers::none()
        .with(0, 0, rows)
        .with(0, 1, rows)
        .with(1, 0, rows)
        .with(1, 1, rows);
    sc.horizon = horizon;
    sc.solver.t_end = t_end;
    sc
}

/// Force-displacement curve from a trajectory: top-boundary vertical
/// reaction vs applied vertical displacement.
pub fn force_displacement(traj: &Trajectory, rate: f64, t_start: f64) -> Vec<(f64, f64)> {
    traj.snapshots
        .iter()
        .skip(1)
        .map(|s| {
            let disp = rate.abs() * (s.time - t_start).max(0.0);
            let force: f64 = s
                .reactions
                .iter()
                .filter(|r| r.region == "y_max" && r.comp == 1)
                .map(|r| r.value)
                .sum();
            (disp, force.abs())
        })
        .collect()
}

/// Interpolates a force-displacement curve at a displacement.
pub fn interp_curve(curve: &[(f64, f64)], x: f64) -> f64 {
    if curve.is_empty() {
        return f64::NAN;
    }
    if x <= curve[0].0 {
        return curve[0].1;
    }
    for w in curve.windows(2) {
        if w[0].0 <= x && x <= w[1].0 {
            let s = (x - w[0].0) / (w[1].0 - w[0].0).max(1e-300);
            return w[0].1 + s * (w[1].1 - w[0].1);
        }
    }
    curve.last().unwrap().1
}

/// Band statistics for the localization gates: identifies the banded region
/// by equivalent plastic shear strain and reports medians inside/outside
/// plus a flux-direction indicator.
pub struct BandStats {
    pub n_band: usize,
    pub n_out: usize,
    pub median_eps_v_p_band: f64,
    pub median_pw_band: f64,
    pub median_pw_out: f64,
    pub median_eps_s_band: f64,
    /// Median of q . (unit vector toward the nearest band point) over
    /// out-of-band points near the band; positive means flow into the band.
    pub inflow_indicator: f64,
}

fn median(mut v: Vec<f64>) -> f64 {
    if v.is_empty() {
        return f64::NAN;
    }
    v.sort_by(|a, b| a.partial_cmp(b).unwrap());
    v[v.len() / 2]
}

pub fn band_stats(snap: &Snapshot, horizon: f64) -> BandStats {
    let interior: Vec<usize> = (0..snap.len()).filter(|&i| snap.interior[i]).collect();
    let mut eps: Vec<f64> = interior.iter().map(|&i| snap.eps_s_p[i]).collect();
    eps.sort_by(|a, b| a.partial_cmp(b).unwrap());
    let q99 = eps[((eps.len() as f64 * 0.99) as usize).min(eps.len() - 1)];
    let threshold = 0.5 * q99;
    let band: Vec<usize> = interior
        .iter()
        .cloned()
        .filter(|&i| snap.eps_s_p[i] >= threshold && snap.eps_s_p[i] > 0.0)
        .collect();
    let out: Vec<usize> = interior
        .iter()
        .cloned()
        .filter(|&i| snap.eps_s_p[i] < threshold)
        .collect();

    // flux direction indicator over out-of-band points within 2 horizons
    let mut inflow = Vec::new();
    for &i in &out {
        let xi = snap.position[i] + snap.u[i];
        let mut best: Option<(f64, usize)> = None;
        for &j in &band {
            let d = (snap.position[j] + snap.u[j] - xi).norm();
            if best.map_or(true, |(bd, _)| d < bd) {
                best = Some((d, j));
            }
        }
        if let Some((d, j)) = best {
            if d <= 2.0 * horizon && d > 1e-12 {
                let dir = (snap.position[j] + snap.u[j] - xi) / d;
                inflow.push(snap.flux[i].dot(&dir));
            }
        }
    }

    BandStats {
        n_band: band.len(),
        n_out: out.len(),
        median_eps_v_p_band: median(band.iter().map(|&i| snap.eps_v_p[i]).collect()),
        median_pw_band: median(band.iter().map(|&i| snap.p_w[i]).collect()),
        median_pw_out: median(out.iter().map(|&i| snap.p_w[i]).collect()),
        median_eps_s_band: median(band.iter().map(|&i| snap.eps_s_p[i]).collect()),
        inflow_indicator: median(inflow),
    }
}

/// Writes an error-metrics report (CSV table plus a text summary).
pub fn write_report(dir: &Path, name: &str, table: &[(String, f64)], summary: &str) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir.display().to_string(), e))?;
    let mut csv = String::from("metric,value\n");
    for (k, v) in table {
        let _ = writeln!(csv, "{k},{v:.9e}");
    }
    let csv_path = dir.join(format!("{name}_metrics.csv"));
    std::fs::write(&csv_path, csv).map_err(|e| Error::io(csv_path.display().to_string(), e))?;
    let txt_path = dir.join(format!("{name}_summary.txt"));
    std::fs::write(&txt_path, summary).map_err(|e| Error::io(txt_path.display().to_string(), e))?;
    Ok(())
}

pub fn liakopoulos_data() -> Result<LiakopoulosData> {
    liakopoulos_reference(&crate::analytic::default_data_dir())
}
