//! Camera paths for synthetic datasets.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose};

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum Trajectory {
    /// Level circle around `center` at height `eye_y`, looking at `target_y`
    /// on the axis (inward) or straight away from it (outward).
    Orbit {
        center: [f64; 2],
        radius: f64,
        eye_y: f64,
        target_y: f64,
        frames: usize,
        turns: f64,
        #[serde(default)]
        start_angle_deg: f64,
        #[serde(default)]
        outward: bool,
    },
    /// Grid of stops over a rectangle, visiting `yaws` evenly spaced headings at each.
    Survey { min: [f64; 2], max: [f64; 2], spacing: f64, eye_y: f64, yaws: usize },
    /// Explicit eye/target pairs.
    LookAt { views: Vec<([f64; 3], [f64; 3])> },
}

impl Default for Trajectory {
    fn default() -> Self {
        Trajectory::Orbit { center: [0.0, 0.0], radius: 3.0, eye_y: -1.4, target_y: -0.4, frames: 50, turns: 1.25, start_angle_deg: 0.0, outward: false }
    }
}

impl Trajectory {
    pub fn poses(&self) -> Result<Vec<Pose>> {
        match self {
            Trajectory::Orbit { center, radius, eye_y, target_y, frames, turns, start_angle_deg, outward } => {
                if !(*radius > 0.0) {
                    return Err(Error::InvalidArgument { arg: "radius", reason: "must be positive".into() });
                }
                (0..*frames)
                    .map(|i| {
                        let a = start_angle_deg.to_radians() + std::f64::consts::TAU * turns * i as f64 / *frames as f64;
                        let eye = Point3::new(center[0] + radius * a.cos(), *eye_y, center[1] + radius * a.sin());
                        let axis = Point3::new(center[0], *target_y, center[1]);
                        let target = if *outward { eye + (eye - axis) } else { axis };
                        Pose::look_at(eye, target)
                    })
                    .collect()
            }
            Trajectory::Survey { min, max, spacing, eye_y, yaws } => {
                if !(*spacing > 0.0) || *yaws == 0 || min[0] > max[0] || min[1] > max[1] {
                    return Err(Error::InvalidArgument { arg: "survey", reason: "need spacing > 0, yaws > 0 and min <= max".into() });
                }
                let nx = ((max[0] - min[0]) / spacing).floor() as usize + 1;
                let nz = ((max[1] - min[1]) / spacing).floor() as usize + 1;
                let mut out = Vec::with_capacity(nx * nz * yaws);
                for iz in 0..nz {
                    // Serpentine rows keep consecutive stops adjacent.
                    for jx in 0..nx {
                        let ix = if iz % 2 == 0 { jx } else { nx - 1 - jx };
                        let eye = Point3::new(min[0] + ix as f64 * spacing, *eye_y, min[1] + iz as f64 * spacing);
                        for y in 0..*yaws {
                            out.push(Pose::from_yaw(eye, std::f64::consts::TAU * y as f64 / *yaws as f64));
                        }
                    }
                }
                Ok(out)
            }
            Trajectory::LookAt { views } => views.iter().map(|(e, t)| Pose::look_at(Point3::from(*e), Point3::from(*t))).collect(),
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn orbit_looks_at_axis() {
        let poses = Trajectory::default().poses().unwrap();
        assert_eq!(poses.len(), 50);
        for p in &poses {
            let c = p.to_camera(&Point3::new(0.0, -0.4, 0.0));
            assert!(c.x.abs() < 1e-9 && c.y.abs() < 1e-9 && c.z > 0.0);
        }
    }

    #[test]
    fn survey_count() {
        let t = Trajectory::Survey { min: [0.0, 0.0], max: [4.0, 2.0], spacing: 2.0, eye_y: -1.0, yaws: 4 };
        assert_eq!(t.poses().unwrap().len(), 3 * 2 * 4);
    }
}
