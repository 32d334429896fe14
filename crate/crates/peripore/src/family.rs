//! Horizon neighbor families and the influence (weighting) function.

use crate::cloud::PointCloud;
use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Bond weighting function omega<xi>.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum InfluenceFunction {
    /// omega = 1 for |xi| <= delta (the weighting used by all presets).
    Unit,
    /// Linear taper omega = 1 - |xi|/delta, zero on the horizon sphere.
    SphericalCutoff,
}

impl InfluenceFunction {
    #[inline]
    pub fn value(&self, r: f64, delta: f64) -> f64 {
        if r > delta {
            return 0.0;
        }
        match self {
            InfluenceFunction::Unit => 1.0,
            InfluenceFunction::SphericalCutoff => (1.0 - r / delta).max(0.0),
        }
    }
}

/// Neighbor families for every point: all neighbors within the horizon,
/// stored CSR-style with cached bond vectors and influence weights.
///
/// Neighbor lists are sorted by index so every downstream accumulation is
/// reproducible. Immutable once built.
#[derive(Clone, Debug)]
pub struct NeighborFamily {
    pub horizon: f64,
    pub offsets: Vec<usize>,
    pub neighbors: Vec<u32>,
    /// Reference bond vector xi = x_j - x_i per (i, j) entry.
    pub bonds: Vec<Vec3>,
    /// Cached omega<xi> per entry.
    pub weights: Vec<f64>,
}

impl NeighborFamily {
    #[inline]
    pub fn family(&self, i: usize) -> std::ops::Range<usize> {
        self.offsets[i]..self.offsets[i + 1]
    }

    #[inline]
    pub fn count(&self, i: usize) -> usize {
        self.offsets[i + 1] - self.offsets[i]
    }

    pub fn n_points(&self) -> usize {
        self.offsets.len() - 1
    }
}

/// Builds families with a uniform spatial hash (bin size = horizon), so the
/// search is O(N) on lattice clouds. Errors on isolated points.
pub fn build_family(
    cloud: &PointCloud,
    delta: f64,
    omega: InfluenceFunction,
) -> Result<NeighborFamily> {
    let (offsets, neighbors) = radius_lists(cloud, delta)?;
    for i in 0..cloud.len() {
        if offsets[i + 1] == offsets[i] {
            let x = cloud.positions[i];
            return Err(Error::geometry(format!(
                "point {i} at {:?} has an empty family for horizon {delta}",
                (x.x, x.y, x.z)
            )));
        }
    }
    let mut bonds = Vec::with_capacity(neighbors.len());
    let mut weights = Vec::with_capacity(neighbors.len());
    for i in 0..cloud.len() {
        for &j in &neighbors[offsets[i]..offsets[i + 1]] {
            let xi = cloud.positions[j as usize] - cloud.positions[i];
            // clamp so bonds admitted at the horizon by the search tolerance
            // do not evaluate to zero weight
            weights.push(omega.value(xi.norm().min(delta), delta));
            bonds.push(xi);
        }
    }
    Ok(NeighborFamily {
        horizon: delta,
        offsets,
        neighbors,
        bonds,
        weights,
    })
}

/// Sorted neighbor lists (excluding self) within `radius`, CSR-style. Also
/// used for the double-horizon tangent sparsity pattern.
///
/// A relative tolerance keeps bonds whose length is exactly the horizon
/// (m = delta/dx integral on a lattice) from being dropped by roundoff in
/// the coordinate differences.
pub fn radius_lists(cloud: &PointCloud, radius: f64) -> Result<(Vec<usize>, Vec<u32>)> {
    if !(radius > 0.0) {
        return Err(Error::config("search radius must be positive"));
    }
    let radius = radius * (1.0 + 1e-9);
    let n = cloud.len();
    let mut min = Vec3::from_element(f64::INFINITY);
    let mut max = Vec3::from_element(f64::NEG_INFINITY);
    for x in &cloud.positions {
        min = min.inf(x);
        max = max.sup(x);
    }
    let inv_bin = 1.0 / radius;
    let dims_of = |x: &Vec3| -> [i64; 3] {
        [
            ((x.x - min.x) * inv_bin).floor() as i64,
            ((x.y - min.y) * inv_bin).floor() as i64,
            ((x.z - min.z) * inv_bin).floor() as i64,
        ]
    };
    let nbin = {
        let top = dims_of(&max);
        [top[0] + 1, top[1] + 1, top[2] + 1]
    };
    let bin_index = |c: [i64; 3]| -> usize {
        ((c[2] * nbin[1] + c[1]) * nbin[0] + c[0]) as usize
    };

    // counting sort of points into bins
    let total_bins = (nbin[0] * nbin[1] * nbin[2]) as usize;
    let mut bin_counts = vec![0usize; total_bins + 1];
    let cells: Vec<[i64; 3]> = cloud.positions.iter().map(dims_of).collect();
    for c in &cells {
        bin_counts[bin_index(*c) + 1] += 1;
    }
    for b in 1..bin_counts.len() {
        bin_counts[b] += bin_counts[b - 1];
    }
    let mut bin_points = vec![0u32; n];
    let mut cursor = bin_counts.clone();
    for (p, c) in cells.iter().enumerate() {
        let b = bin_index(*c);
        bin_points[cursor[b]] = p as u32;
        cursor[b] += 1;
    }

    let mut offsets = Vec::with_capacity(n + 1);
    offsets.push(0usize);
    let mut neighbors: Vec<u32> = Vec::new();
    let r2 = radius * radius;

    let mut scratch: Vec<u32> = Vec::new();
    for i in 0..n {
        scratch.clear();
        let xi = cloud.positions[i];
        let c = cells[i];
        for dz in -1..=1i64 {
            let cz = c[2] + dz;
            if cz < 0 || cz >= nbin[2] {
                continue;
            }
            for dy in -1..=1i64 {
                let cy = c[1] + dy;
                if cy < 0 || cy >= nbin[1] {
                    continue;
                }
                for dx in -1..=1i64 {
                    let cx = c[0] + dx;
                    if cx < 0 || cx >= nbin[0] {
                        continue;
                    }
                    let b = bin_index([cx, cy, cz]);
                    for &j in &bin_points[bin_counts[b]..bin_counts[b + 1]] {
                        if j as usize == i {
                            continue;
                        }
                        let d2 = (cloud.positions[j as usize] - xi).norm_squared();
                        if d2 <= r2 && d2 > 0.0 {
                            scratch.push(j);
                        }
                    }
                }
            }
        }
        scratch.sort_unstable();
        neighbors.extend_from_slice(&scratch);
        offsets.push(neighbors.len());
    }

    Ok((offsets, neighbors))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::cloud::{build_lattice, FaceLayers, LatticeSpec};

    fn lattice_2d(nx: usize, ny: usize, dx: f64) -> PointCloud {
        build_lattice(&LatticeSpec {
            extents: vec![nx as f64 * dx, ny as f64 * dx],
            dx,
            thickness: 1.0,
            layers: FaceLayers::none(),
        })
        .unwrap()
    }

    /// Brute-force all-pairs search used as the oracle for the binned search.
    fn brute_force(cloud: &PointCloud, delta: f64) -> Vec<Vec<u32>> {
        let mut fams = vec![Vec::new(); cloud.len()];
        for i in 0..cloud.len() {
            for j in 0..cloud.len() {
                if i != j {
                    let d = (cloud.positions[j] - cloud.positions[i]).norm();
                    if d <= delta {
                        fams[i].push(j as u32);
                    }
                }
            }
        }
        fams
    }

    #[test]
    fn matches_brute_force_and_is_symmetric() {
        let cloud = lattice_2d(7, 5, 1.0);
        let fam = build_family(&cloud, 2.0, InfluenceFunction::Unit).unwrap();
        let oracle = brute_force(&cloud, 2.0);
        for i in 0..cloud.len() {
            let got: Vec<u32> = fam.neighbors[fam.family(i)].to_vec();
            assert_eq!(got, oracle[i], "family mismatch at point {i}");
            for &j in &got {
                let back: Vec<u32> = fam.neighbors[fam.family(j as usize)].to_vec();
                assert!(back.contains(&(i as u32)), "asymmetric bond {i}-{j}");
            }
        }
    }

    #[test]
    fn interior_2d_family_has_12_neighbors_at_m2() {
        let cloud = lattice_2d(9, 9, 1.0);
        let fam = build_family(&cloud, 2.0, InfluenceFunction::Unit).unwrap();
        // center point of the 9x9 lattice
        let center = cloud
            .positions
            .iter()
            .position(|p| (p.x - 4.5).abs() < 1e-12 && (p.y - 4.5).abs() < 1e-12)
            .unwrap();
        assert_eq!(fam.count(center), 12);
    }

    #[test]
    fn too_small_horizon_errors() {
        let cloud = lattice_2d(4, 4, 1.0);
        let err = build_family(&cloud, 0.5, InfluenceFunction::Unit).unwrap_err();
        assert!(matches!(err, Error::Geometry(_)));
    }

    #[test]
    fn doubling_horizon_strictly_enlarges_interior_families() {
        let cloud = lattice_2d(13, 13, 1.0);
        let f1 = build_family(&cloud, 2.0, InfluenceFunction::Unit).unwrap();
        let f2 = build_family(&cloud, 4.0, InfluenceFunction::Unit).unwrap();
        for i in 0..cloud.len() {
            assert!(f2.count(i) > f1.count(i));
        }
    }

    #[test]
    fn influence_values() {
        assert_eq!(InfluenceFunction::Unit.value(1.9, 2.0), 1.0);
        assert_eq!(InfluenceFunction::Unit.value(2.1, 2.0), 0.0);
        let w = InfluenceFunction::SphericalCutoff.value(1.0, 2.0);
        assert!((w - 0.5).abs() < 1e-15);
    }
}
