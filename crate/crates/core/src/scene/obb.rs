use serde::{Deserialize, Serialize};

use super::{Dims, LaneGeometry, SceneError};

/// Below this speed (m/s) the heading falls back to the road axis.
pub const LOW_SPEED: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Pose {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

impl Pose {
    pub fn new(x: f64, y: f64, heading: f64) -> Self {
        Self { x, y, heading }
    }
}

/// Heading of the velocity tangent, or the road heading at low speed.
pub fn heading_from_velocity(vx: f64, vy: f64, lanes: &LaneGeometry) -> f64 {
    if vx.hypot(vy) < LOW_SPEED {
        lanes.road_heading()
    } else {
        vy.atan2(vx)
    }
}

/// Oriented bounding box.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Obb {
    pub center: [f64; 2],
    pub heading: f64,
    pub half_length: f64,
    pub half_width: f64,
}

impl Obb {
    pub fn new(center: [f64; 2], heading: f64, half_length: f64, half_width: f64) -> Result<Self, SceneError> {
        if !(center[0].is_finite() && center[1].is_finite() && heading.is_finite()) {
            return Err(SceneError::InvalidPose(format!("center {center:?}, heading {heading}")));
        }
        if !(half_length > 0.0 && half_width > 0.0 && half_length.is_finite() && half_width.is_finite()) {
            return Err(SceneError::InvalidDimensions {
                length: 2.0 * half_length,
                width: 2.0 * half_width,
            });
        }
        Ok(Self {
            center,
            heading,
            half_length,
            half_width,
        })
    }

    /// Unit vectors along the length and width edges.
    pub fn axes(&self) -> [[f64; 2]; 2] {
        let (s, c) = self.heading.sin_cos();
        [[c, s], [-s, c]]
    }

    pub fn half_extents(&self) -> [f64; 2] {
        [self.half_length, self.half_width]
    }

    /// Corners in counter-clockwise order starting front-left.
    pub fn corners(&self) -> [[f64; 2]; 4] {
        let [u, v] = self.axes();
        let (l, w) = (self.half_length, self.half_width);
        let [cx, cy] = self.center;
        let pt = |a: f64, b: f64| [cx + a * u[0] + b * v[0], cy + a * u[1] + b * v[1]];
        [pt(l, w), pt(-l, w), pt(-l, -w), pt(l, -w)]
    }

    /// Point containment, boundary inclusive.
    pub fn contains(&self, p: [f64; 2]) -> bool {
        let d = [p[0] - self.center[0], p[1] - self.center[1]];
        let [u, v] = self.axes();
        (d[0] * u[0] + d[1] * u[1]).abs() <= self.half_length && (d[0] * v[0] + d[1] * v[1]).abs() <= self.half_width
    }
}

pub fn obb_at(pose: Pose, dims: Dims) -> Result<Obb, SceneError> {
    if !(pose.x.is_finite() && pose.y.is_finite() && pose.heading.is_finite()) {
        return Err(SceneError::InvalidPose(format!("{pose:?}")));
    }
    let dims = Dims::new(dims.length, dims.width)?;
    Obb::new([pose.x, pose.y], pose.heading, dims.length / 2.0, dims.width / 2.0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use std::f64::consts::FRAC_PI_4;

    #[test]
    fn axis_aligned_corners() {
        let obb = obb_at(Pose::new(0.0, 0.0, 0.0), Dims::new(5.21, 2.04).unwrap()).unwrap();
        let mut corners = obb.corners().to_vec();
        corners.sort_by(|a, b| a.partial_cmp(b).unwrap());
        let expected = [[-2.605, -1.02], [-2.605, 1.02], [2.605, -1.02], [2.605, 1.02]];
        for (c, e) in corners.iter().zip(expected) {
            assert!((c[0] - e[0]).abs() < 1e-12 && (c[1] - e[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn heading_rules() {
        let lanes = LaneGeometry::new(vec![0.0], 3.75).unwrap();
        assert_eq!(heading_from_velocity(0.0, 0.0, &lanes), 0.0);
        assert_eq!(heading_from_velocity(0.05, 0.05, &lanes), 0.0);
        assert!((heading_from_velocity(1.0, 1.0, &lanes) - FRAC_PI_4).abs() < 1e-15);
    }

    #[test]
    fn rejects_bad_input() {
        assert!(matches!(
            obb_at(Pose::new(f64::NAN, 0.0, 0.0), Dims::default()),
            Err(SceneError::InvalidPose(_))
        ));
        assert!(obb_at(Pose::new(0.0, 0.0, f64::INFINITY), Dims::default()).is_err());
        assert!(obb_at(Pose::new(0.0, 0.0, 0.0), Dims { length: -1.0, width: 2.0 }).is_err());
    }

    proptest! {
        #[test]
        fn corners_equidistant(x in -1e3f64..1e3, y in -1e3f64..1e3, h in -10.0f64..10.0, l in 0.1f64..20.0, w in 0.1f64..5.0) {
            let obb = obb_at(Pose::new(x, y, h), Dims::new(l, w).unwrap()).unwrap();
            let r = (obb.half_length.powi(2) + obb.half_width.powi(2)).sqrt();
            for c in obb.corners() {
                let d = (c[0] - x).hypot(c[1] - y);
                prop_assert!((d - r).abs() < 1e-9);
                prop_assert!(obb.contains([x + 0.999 * (c[0] - x), y + 0.999 * (c[1] - y)]));
            }
        }
    }
}
