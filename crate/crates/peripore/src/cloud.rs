//! Material-point cloud geometry: reference positions, volumes, labels, and
//! the lattice generator used by every scenario.

use crate::error::{Error, Result};
use crate::math::Vec3;
use serde::{Deserialize, Serialize};

/// Point classification. Boundary layers are strips of fictitious points
/// appended outside flagged faces; displacement and pressure conditions act
/// on whole layers rather than on surface points.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Interior,
    /// Attached face encoded as (axis, side): side 0 = min face, 1 = max face.
    BoundaryLayer { axis: u8, side: u8 },
    Constrained,
}

/// Per-face boundary-layer row counts, indexed `[axis][side]`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FaceLayers(pub [[usize; 2]; 3]);

impl FaceLayers {
    pub fn none() -> Self {
        FaceLayers::default()
    }

    pub fn with(mut self, axis: usize, side: usize, rows: usize) -> Self {
        self.0[axis][side] = rows;
        self
    }
}

/// Lattice generation spec: a cell-centered uniform lattice over the domain
/// extents plus optional boundary-layer strips on flagged faces. Layers span
/// only the face extent (no corner blocks).
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct LatticeSpec {
    /// Domain side lengths per axis (length = dim).
    pub extents: Vec<f64>,
    /// Uniform point spacing.
    pub dx: f64,
    /// Out-of-plane thickness; volumes in 2D are `dx^2 * thickness`.
    pub thickness: f64,
    /// Boundary-layer rows per face.
    #[serde(default)]
    pub layers: FaceLayers,
}

/// The mixed material-point cloud.
#[derive(Clone, Debug)]
pub struct PointCloud {
    pub dim: usize,
    pub positions: Vec<Vec3>,
    pub volumes: Vec<f64>,
    pub labels: Vec<Label>,
    /// Out-of-plane thickness (1.0 for dim = 3).
    pub thickness: f64,
    /// Lattice spacing when generated from a lattice (used for defaults).
    pub dx: f64,
    /// Domain extents (without layers).
    pub extents: Vec<f64>,
}

impl PointCloud {
    pub fn len(&self) -> usize {
        self.positions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.positions.is_empty()
    }

    pub fn interior_count(&self) -> usize {
        self.labels.iter().filter(|l| **l == Label::Interior).count()
    }

    /// Indices of points in the layer attached to `(axis, side)`.
    pub fn layer_points(&self, axis: usize, side: usize) -> Vec<usize> {
        self.labels
            .iter()
            .enumerate()
            .filter(|(_, l)| {
                matches!(l, Label::BoundaryLayer { axis: a, side: s }
                    if *a as usize == axis && *s as usize == side)
            })
            .map(|(i, _)| i)
            .collect()
    }

    /// Cross-section area of a domain face including out-of-plane thickness.
    pub fn face_area(&self, axis: usize) -> f64 {
        let mut a = self.thickness;
        for (ax, e) in self.extents.iter().enumerate() {
            if ax != axis {
                a *= e;
            }
        }
        a
    }

    fn validate(&self) -> Result<()> {
        if !(self.dim == 2 || self.dim == 3) {
            return Err(Error::config(format!("dim must be 2 or 3, got {}", self.dim)));
        }
        for (i, (x, v)) in self.positions.iter().zip(&self.volumes).enumerate() {
            if !x.iter().all(|c| c.is_finite()) {
                return Err(Error::config(format!("non-finite position at point {i}")));
            }
            if !(*v > 0.0) {
                return Err(Error::config(format!("non-positive volume at point {i}")));
            }
        }
        Ok(())
    }
}

/// Builds a cell-centered lattice with boundary layers on flagged faces.
///
/// Points sit at `(i + 1/2) dx` along each axis; layer strips continue the
/// lattice outward over the face extent only. Errors when an extent is not an
/// integral multiple of `dx`.
pub fn build_lattice(spec: &LatticeSpec) -> Result<PointCloud> {
    let dim = spec.extents.len();
    if !(dim == 2 || dim == 3) {
        return Err(Error::config(format!(
            "lattice extents must have 2 or 3 entries, got {dim}"
        )));
    }
    if !(spec.dx > 0.0) {
        return Err(Error::config("lattice dx must be positive"));
    }
    if dim == 2 && !(spec.thickness > 0.0) {
        return Err(Error::config("2D lattice requires a positive thickness"));
    }

    let mut counts = [1usize; 3];
    for (ax, ext) in spec.extents.iter().enumerate() {
        let n = ext / spec.dx;
        let rounded = n.round();
        if rounded < 1.0 || (n - rounded).abs() > 1e-9 * n.max(1.0) {
            return Err(Error::config(format!(
                "extent {ext} on axis {ax} is not an integral multiple of dx = {}",
                spec.dx
            )));
        }
        counts[ax] = rounded as usize;
    }

    let thickness = if dim == 2 { spec.thickness } else { 1.0 };
    let volume = spec.dx.powi(dim as i32) * if dim == 2 { spec.thickness } else { 1.0 };

    let mut positions = Vec::new();
    let mut labels = Vec::new();

    // Index ranges per axis: [-layers_min, count + layers_max). A point is
    // interior when all its indices fall inside [0, count); it belongs to a
    // face layer when exactly one axis is outside (no corner blocks).
    let lo = |ax: usize| -(spec.layers.0[ax][0] as i64);
    let hi = |ax: usize| counts[ax] as i64 + spec.layers.0[ax][1] as i64;

    let z_range = if dim == 3 { (lo(2), hi(2)) } else { (0, 1) };
    for iz in z_range.0..z_range.1 {
        for iy in lo(1)..hi(1) {
            for ix in lo(0)..hi(0) {
                let idx = [ix, iy, iz];
                let mut outside_axis: Option<(usize, usize)> = None;
                let mut corner = false;
                for ax in 0..dim {
                    let side = if idx[ax] < 0 {
                        Some(0)
                    } else if idx[ax] >= counts[ax] as i64 {
                        Some(1)
                    } else {
                        None
                    };
                    if let Some(s) = side {
                        if outside_axis.is_some() {
                            corner = true;
                        }
                        outside_axis = Some((ax, s));
                    }
                }
                if corner {
                    continue;
                }
                let label = match outside_axis {
                    None => Label::Interior,
                    Some((ax, s)) => Label::BoundaryLayer {
                        axis: ax as u8,
                        side: s as u8,
                    },
                };
                positions.push(Vec3::new(
                    (ix as f64 + 0.5) * spec.dx,
                    (iy as f64 + 0.5) * spec.dx,
                    if dim == 3 { (iz as f64 + 0.5) * spec.dx } else { 0.0 },
                ));
                labels.push(label);
            }
        }
    }

    let n = positions.len();
    let cloud = PointCloud {
        dim,
        positions,
        volumes: vec![volume; n],
        labels,
        thickness,
        dx: spec.dx,
        extents: spec.extents.clone(),
    };
    cloud.validate()?;
    Ok(cloud)
}
