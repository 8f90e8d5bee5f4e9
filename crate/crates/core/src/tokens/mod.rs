//! Agent-centric token payload: panoramic patch tokens, distance-ordered
//! instance and zone tokens, prompt text and its numeric sidecar.

pub mod action;
pub mod sidecar;

use nalgebra::Vector3;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geometry::{Point3, Pose};
use crate::instance::{InstanceId, InstanceTable};
use crate::patch_store::PatchStore;
use crate::zone::{ZoneGrid, ZoneKey};

pub use action::Action;
pub use sidecar::{Sidecar, SidecarHeader, SidecarToken};

pub const PANORAMA_ROWS: usize = 12;
pub const PANORAMA_COLS: usize = 48;
pub const PANORAMA_RAYS: usize = PANORAMA_ROWS * PANORAMA_COLS;
/// Angular pitch in degrees on both axes.
pub const PANORAMA_STEP_DEG: f64 = 7.5;
pub const HISTORY_LEN: usize = 4;
pub const NONE_ACTION: &str = "<none>";

/// Elevation of row `r` in degrees (row 0 at the top).
pub fn panorama_elevation_deg(row: usize) -> f64 {
    41.25 - PANORAMA_STEP_DEG * row as f64
}

/// Azimuth of column `c` in degrees, clockwise from straight ahead; column 0
/// points directly behind.
pub fn panorama_azimuth_deg(col: usize) -> f64 {
    180.0 + PANORAMA_STEP_DEG * col as f64
}

/// Unit ray direction in the agent frame (+x right, +y down, +z forward).
pub fn panorama_direction(index: usize) -> Vector3<f64> {
    let (row, col) = (index / PANORAMA_COLS, index % PANORAMA_COLS);
    let (se, ce) = panorama_elevation_deg(row).to_radians().sin_cos();
    let (sa, ca) = panorama_azimuth_deg(col).to_radians().sin_cos();
    Vector3::new(ce * sa, -se, ce * ca)
}

/// `[x_c, y_c, z_c, D_c, cos θ_c, sin θ_c]` in the agent frame.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RelPos(pub [f64; 6]);

impl RelPos {
    pub fn distance(&self) -> f64 {
        self.0[3]
    }

    fn from_agent(c: Vector3<f64>) -> Self {
        let d = c.norm();
        // θ = 0 when the point has no horizontal offset.
        let theta = if c.x == 0.0 && c.z == 0.0 { 0.0 } else { c.x.atan2(c.z) };
        Self([c.x, c.y, c.z, d, theta.cos(), theta.sin()])
    }

    fn to_f32(self) -> [f32; 6] {
        self.0.map(|x| x as f32)
    }
}

/// Agent-frame coordinates, distance and clockwise horizontal angle of `p`.
pub fn relative_position_features(p: &Point3, agent: &Pose) -> RelPos {
    RelPos::from_agent(agent.to_camera(p))
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct RayParams {
    pub radius: f64,
    pub max_range: f64,
}

impl Default for RayParams {
    fn default() -> Self {
        Self { radius: 0.25, max_range: 10.0 }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct PatchToken {
    pub feature: Vec<f32>,
    pub relpos: RelPos,
    pub valid: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct InstanceToken {
    pub id: InstanceId,
    pub feature: Vec<f32>,
    pub relpos: RelPos,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ZoneToken {
    pub key: ZoneKey,
    pub feature: Vec<f32>,
    pub relpos: RelPos,
}

/// Resolves the 576 panorama rays against the stored points. Unresolved rays
/// give a zero feature, a zero position and `valid = false`.
pub fn render_patch_tokens(store: &PatchStore, agent: &Pose, params: &RayParams) -> Result<Vec<PatchToken>> {
    agent.validate()?;
    let origin = agent.center();
    let to_world = agent.rotation.transpose();
    (0..PANORAMA_RAYS)
        .into_par_iter()
        .map(|i| {
            let d_agent = panorama_direction(i);
            let d_world = (to_world * d_agent).normalize();
            Ok(match store.ray_query(&origin, &d_world, params.radius, params.max_range)? {
                Some(hit) => PatchToken { feature: hit.feature.to_vec(), relpos: RelPos::from_agent(d_agent * hit.depth), valid: true },
                None => PatchToken { feature: vec![0.0; store.dim()], relpos: RelPos::from_agent(Vector3::zeros()), valid: false },
            })
        })
        .collect()
}

/// Instance tokens at their centroids, nearest first (ties: smaller id).
pub fn instance_tokens(table: &InstanceTable, agent: &Pose) -> Vec<InstanceToken> {
    let mut out: Vec<InstanceToken> =
        table.iter().map(|i| InstanceToken { id: i.id, feature: i.feature.clone(), relpos: relative_position_features(&i.centroid, agent) }).collect();
    out.sort_by(|a, b| a.relpos.distance().total_cmp(&b.relpos.distance()).then(a.id.cmp(&b.id)));
    out
}

/// Zone tokens at their cube centers, nearest first (ties: smaller key).
pub fn zone_tokens(grid: &ZoneGrid, agent: &Pose) -> Vec<ZoneToken> {
    let mut out: Vec<ZoneToken> =
        grid.iter().map(|z| ZoneToken { key: z.key, feature: z.feature.clone(), relpos: relative_position_features(&z.center, agent) }).collect();
    out.sort_by(|a, b| a.relpos.distance().total_cmp(&b.relpos.distance()).then(a.key.cmp(&b.key)));
    out
}

#[derive(Clone, Debug, PartialEq)]
pub struct PromptPayload {
    pub patch_tokens: Vec<PatchToken>,
    pub instance_tokens: Vec<InstanceToken>,
    pub zone_tokens: Vec<ZoneToken>,
    pub instruction: String,
    /// Most recent last, right-padded with [`NONE_ACTION`].
    pub history: [String; HISTORY_LEN],
}

pub fn build_prompt(
    patch_tokens: Vec<PatchToken>,
    instance_tokens: Vec<InstanceToken>,
    zone_tokens: Vec<ZoneToken>,
    instruction: &str,
    history: &[Action],
) -> Result<PromptPayload> {
    if patch_tokens.len() != PANORAMA_RAYS {
        return Err(Error::InvalidArgument { arg: "patch_tokens", reason: format!("expected {PANORAMA_RAYS}, got {}", patch_tokens.len()) });
    }
    if history.len() > HISTORY_LEN {
        return Err(Error::HistoryTooLong(history.len()));
    }
    let dim = patch_tokens[0].feature.len();
    let dims_ok = patch_tokens.iter().all(|t| t.feature.len() == dim)
        && instance_tokens.iter().all(|t| t.feature.len() == dim)
        && zone_tokens.iter().all(|t| t.feature.len() == dim);
    if !dims_ok {
        return Err(Error::InvalidArgument { arg: "tokens", reason: "mixed feature dimensions".into() });
    }
    let by_distance = |d: &[f64]| d.windows(2).all(|w| w[0] <= w[1]);
    if !by_distance(&instance_tokens.iter().map(|t| t.relpos.distance()).collect::<Vec<_>>())
        || !by_distance(&zone_tokens.iter().map(|t| t.relpos.distance()).collect::<Vec<_>>())
    {
        return Err(Error::InvalidArgument { arg: "tokens", reason: "instance and zone tokens must be sorted by distance".into() });
    }
    let history = std::array::from_fn(|i| history.get(i).map_or_else(|| NONE_ACTION.to_string(), |a| a.to_string()));
    Ok(PromptPayload { patch_tokens, instance_tokens, zone_tokens, instruction: instruction.to_string(), history })
}

impl PromptPayload {
    /// Template text with one placeholder marker per token.
    pub fn text(&self) -> String {
        let mut s = String::with_capacity(16 + 7 * self.patch_tokens.len() + self.instruction.len() + 128);
        s.push_str("<user>");
        for _ in &self.patch_tokens {
            s.push_str("<patch>");
        }
        for _ in &self.instance_tokens {
            s.push_str("<instance>");
        }
        for _ in &self.zone_tokens {
            s.push_str("<zone>");
        }
        s.push_str(&self.instruction);
        for h in &self.history {
            s.push_str(h);
        }
        s.push_str("<end><assistant>");
        s
    }

    pub fn feature_dim(&self) -> usize {
        self.patch_tokens.first().map_or(0, |t| t.feature.len())
    }

    pub fn sidecar(&self) -> Sidecar {
        let header = SidecarHeader {
            format: sidecar::SIDECAR_FORMAT.into(),
            version: sidecar::SIDECAR_VERSION,
            feature_dim: self.feature_dim(),
            patch_tokens: self.patch_tokens.len(),
            instance_tokens: self.instance_tokens.len(),
            zone_tokens: self.zone_tokens.len(),
        };
        let mut tokens: Vec<SidecarToken> =
            self.patch_tokens.iter().map(|t| SidecarToken { feature: t.feature.clone(), relpos: t.relpos.to_f32(), valid: t.valid }).collect();
        tokens.extend(self.instance_tokens.iter().map(|t| SidecarToken { feature: t.feature.clone(), relpos: t.relpos.to_f32(), valid: true }));
        tokens.extend(self.zone_tokens.iter().map(|t| SidecarToken { feature: t.feature.clone(), relpos: t.relpos.to_f32(), valid: true }));
        Sidecar { header, tokens }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn directions_are_unit_and_ordered() {
        for i in 0..PANORAMA_RAYS {
            assert!((panorama_direction(i).norm() - 1.0).abs() < 1e-9);
        }
        let behind = panorama_direction(0);
        assert!(behind.z < 0.0 && behind.x.abs() < 1e-12 && behind.y < 0.0);
        // One step clockwise from behind turns toward the agent's left (-x).
        assert!(panorama_direction(1).x < 0.0);
        let ahead = panorama_direction(6 * PANORAMA_COLS + 24);
        assert!(ahead.z > 0.99 && ahead.y > 0.0);
    }

    #[test]
    fn relpos_cases() {
        let r = relative_position_features(&Point3::new(0.0, 0.0, 2.0), &Pose::identity());
        assert_eq!(r.0, [0.0, 0.0, 2.0, 2.0, 1.0, 0.0]);
        let o = relative_position_features(&Point3::zeros(), &Pose::identity());
        assert_eq!(o.0, [0.0, 0.0, 0.0, 0.0, 1.0, 0.0]);
        let right = relative_position_features(&Point3::new(1.0, 0.0, 0.0), &Pose::identity());
        assert!((right.0[5] - 1.0).abs() < 1e-12);
    }

    #[test]
    fn empty_store_gives_invalid_tokens() {
        let store = PatchStore::new(4, 0.5);
        let toks = render_patch_tokens(&store, &Pose::identity(), &RayParams::default()).unwrap();
        assert_eq!(toks.len(), PANORAMA_RAYS);
        assert!(toks.iter().all(|t| !t.valid && t.feature == vec![0.0; 4]));
    }

    #[test]
    fn history_padding() {
        let toks = render_patch_tokens(&PatchStore::new(2, 0.5), &Pose::identity(), &RayParams::default()).unwrap();
        let p = build_prompt(toks.clone(), vec![], vec![], "go", &[]).unwrap();
        assert_eq!(p.history, ["<none>", "<none>", "<none>", "<none>"].map(String::from));
        let h = [Action::Forward(250), Action::Stop];
        let p = build_prompt(toks.clone(), vec![], vec![], "go", &h).unwrap();
        assert_eq!(p.history, ["Forward 25 cm.", "Stop.", "<none>", "<none>"].map(String::from));
        assert!(p.text().ends_with("goForward 25 cm.Stop.<none><none><end><assistant>"));
        assert!(matches!(build_prompt(toks, vec![], vec![], "go", &[Action::Stop; 5]), Err(Error::HistoryTooLong(5))));
    }
}
