use serde::{Deserialize, Serialize};

use super::RiskError;
use crate::scene::Obb;

fn dot(a: [f64; 2], b: [f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// Gap between the projections of `a` and `b` onto `axis` (negative when they overlap).
fn projected_gap(a: &Obb, b: &Obb, axis: [f64; 2]) -> f64 {
    let t = [b.center[0] - a.center[0], b.center[1] - a.center[1]];
    let radius = |o: &Obb| {
        let [u, v] = o.axes();
        o.half_length * dot(u, axis).abs() + o.half_width * dot(v, axis).abs()
    };
    dot(t, axis).abs() - radius(a) - radius(b)
}

fn edge_axes(a: &Obb, b: &Obb) -> [[f64; 2]; 4] {
    let [a0, a1] = a.axes();
    let [b0, b1] = b.axes();
    [a0, a1, b0, b1]
}

/// Separating-axis test over the four edge normals; touching counts as overlap.
pub fn sat_overlap(a: &Obb, b: &Obb) -> bool {
    edge_axes(a, b).iter().all(|&l| projected_gap(a, b, l) <= 0.0)
}

/// Largest projected gap over the four edge axes: positive when the boxes are
/// separated, negative penetration depth otherwise.
pub fn separation(a: &Obb, b: &Obb) -> f64 {
    edge_axes(a, b).iter().map(|&l| projected_gap(a, b, l)).fold(f64::NEG_INFINITY, f64::max)
}

/// Clamped projection gap along a unit `axis`.
pub fn distance_margin(a: &Obb, b: &Obb, axis: [f64; 2]) -> Result<f64, RiskError> {
    let norm = axis[0].hypot(axis[1]);
    if norm.is_nan() || (norm - 1.0).abs() > 1e-9 {
        return Err(RiskError::InvalidAxis(axis));
    }
    Ok(projected_gap(a, b, axis).max(0.0))
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Mdm {
    /// Minimum margin over the four box-edge axes.
    pub mdm: f64,
    /// Margin along the road's longitudinal axis.
    pub mdm_x: f64,
    /// Margin along the road's lateral axis.
    pub mdm_y: f64,
}

/// Margins with road-aligned axes `(1, 0)` and `(0, 1)`.
pub fn mdm(a: &Obb, b: &Obb) -> Mdm {
    mdm_along(a, b, [1.0, 0.0], [0.0, 1.0]).expect("unit road axes")
}

pub fn mdm_along(a: &Obb, b: &Obb, longitudinal: [f64; 2], lateral: [f64; 2]) -> Result<Mdm, RiskError> {
    let edge = edge_axes(a, b).iter().map(|&l| projected_gap(a, b, l).max(0.0)).fold(f64::INFINITY, f64::min);
    Ok(Mdm {
        mdm: edge,
        mdm_x: distance_margin(a, b, longitudinal)?,
        mdm_y: distance_margin(a, b, lateral)?,
    })
}
