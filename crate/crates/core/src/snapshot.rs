//! Versioned little-endian map snapshot. Zones are derived state and are
//! rebuilt on load; everything else round-trips bit for bit.

use std::collections::BTreeSet;
use std::path::Path;
use std::sync::Arc;

use crate::config::MapParams;
use crate::error::{Error, Result};
use crate::feature;
use crate::geometry::Point3;
use crate::instance::aggregator::Aggregator;
use crate::instance::discriminator::MergingDiscriminator;
use crate::instance::{InstanceId, InstanceTable};
use crate::map::SceneMap;
use crate::patch_store::{FeaturePoint, PatchStore, PointId};
use crate::zone::ZoneGrid;

pub const MAGIC: &[u8; 4] = b"DYN3";
pub const VERSION: u16 = 1;
const NO_GT: u32 = u32::MAX;
const NO_OWNER: u64 = u64::MAX;

struct Writer(Vec<u8>);

impl Writer {
    fn u16(&mut self, v: u16) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.0.extend_from_slice(&v.to_le_bytes());
    }
    fn f32s(&mut self, v: &[f32]) {
        for x in v {
            self.0.extend_from_slice(&x.to_le_bytes());
        }
    }
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| Error::Snapshot(format!("truncated at byte {}", self.pos)))?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }
    fn remaining(&self) -> usize {
        self.buf.len() - self.pos
    }
    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2")))
    }
    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4")))
    }
    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8")))
    }
    fn f64(&mut self) -> Result<f64> {
        let v = f64::from_le_bytes(self.take(8)?.try_into().expect("8"));
        if !v.is_finite() {
            return Err(Error::Snapshot(format!("non-finite value before byte {}", self.pos)));
        }
        Ok(v)
    }
    fn f32s(&mut self, n: usize) -> Result<Vec<f32>> {
        let bytes = self.take(n.checked_mul(4).ok_or_else(|| Error::Snapshot("length overflow".into()))?)?;
        let v: Vec<f32> = bytes.chunks_exact(4).map(|c| f32::from_le_bytes(c.try_into().expect("4"))).collect();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(Error::Snapshot("non-finite feature value".into()));
        }
        Ok(v)
    }
    /// A count whose records need at least `min_record` bytes each.
    fn count(&mut self, min_record: usize) -> Result<usize> {
        let n = self.u64()?;
        if n.checked_mul(min_record as u64).is_none_or(|b| b > self.remaining() as u64) {
            return Err(Error::Snapshot(format!("count {n} exceeds remaining {} bytes", self.remaining())));
        }
        Ok(n as usize)
    }
}

pub fn encode(map: &SceneMap) -> Vec<u8> {
    let store = map.store();
    let dim = store.dim();
    let mut w = Writer(Vec::with_capacity(64 + store.len() * (80 + 4 * dim)));
    w.0.extend_from_slice(MAGIC);
    w.u16(VERSION);
    w.u16(dim as u16);
    w.f64(store.cell_size());
    w.f64(map.zones().size());
    w.u64(store.next_id());
    w.u64(map.instances().next_id());
    w.u64(store.frame_counter());
    w.u64(store.len() as u64);
    for p in store.iter() {
        w.u64(p.id.0);
        w.u64(p.frame_id);
        w.u16(p.patch_index);
        w.u32(p.gt_instance.unwrap_or(NO_GT));
        w.u64(p.owner.map_or(NO_OWNER, |o| o.0));
        w.f64(p.heading);
        w.f64(p.size);
        for a in 0..3 {
            w.f64(p.position[a]);
        }
        w.f32s(&p.feature);
    }
    w.u64(map.instances().len() as u64);
    for inst in map.instances().iter() {
        w.u64(inst.id.0);
        w.u64(inst.members.len() as u64);
        for m in &inst.members {
            w.u64(m.0);
        }
        w.f32s(&inst.feature);
    }
    w.0
}

/// Feature dimension declared by a snapshot header, checked for magic and version.
pub fn peek_dim(bytes: &[u8]) -> Result<usize> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::SnapshotVersion { found: version, expected: VERSION });
    }
    Ok(r.u16()? as usize)
}

/// Decodes a snapshot. `params` supplies the non-persisted knobs (Top-K,
/// culling); dimension, cell size and zone size come from the snapshot.
pub fn decode(bytes: &[u8], params: &MapParams, aggregator: Arc<dyn Aggregator>, discriminator: Arc<dyn MergingDiscriminator>) -> Result<SceneMap> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(4)? != MAGIC {
        return Err(Error::Snapshot("bad magic".into()));
    }
    let version = r.u16()?;
    if version != VERSION {
        return Err(Error::SnapshotVersion { found: version, expected: VERSION });
    }
    let dim = r.u16()? as usize;
    let cell_size = r.f64()?;
    let zone_size = r.f64()?;
    if dim == 0 || !(cell_size > 0.0) || !(zone_size > 0.0) {
        return Err(Error::Snapshot("invalid dimension, cell size or zone size".into()));
    }
    if aggregator.dim() != dim {
        return Err(Error::Snapshot(format!("snapshot dimension {dim} != aggregator dimension {}", aggregator.dim())));
    }
    let next_point = r.u64()?;
    let next_instance = r.u64()?;
    let frame_counter = r.u64()?;

    let mut store = PatchStore::new(dim, cell_size);
    let n = r.count(70 + 4 * dim)?;
    let mut last: Option<u64> = None;
    for _ in 0..n {
        let id = r.u64()?;
        if last.is_some_and(|l| id <= l) || id >= next_point {
            return Err(Error::Snapshot(format!("point id {id} out of order or beyond next id")));
        }
        last = Some(id);
        let frame_id = r.u64()?;
        let patch_index = r.u16()?;
        let gt = r.u32()?;
        let owner = r.u64()?;
        let heading = r.f64()?;
        let size = r.f64()?;
        let position = Point3::new(r.f64()?, r.f64()?, r.f64()?);
        let feature = r.f32s(dim)?.into_boxed_slice();
        // Live features are unit-norm; anything else would also overflow the
        // fixed-point instance sums.
        if (feature::norm_f32(&feature) - 1.0).abs() > 1e-4 {
            return Err(Error::Snapshot(format!("point {id} feature is not unit-norm")));
        }
        store.insert_raw(FeaturePoint {
            id: PointId(id),
            feature,
            position,
            heading,
            size,
            frame_id,
            patch_index,
            gt_instance: (gt != NO_GT).then_some(gt),
            owner: (owner != NO_OWNER).then_some(InstanceId(owner)),
        });
    }
    store.restore_counters(next_point, frame_counter);

    let mut table = InstanceTable::new();
    let m = r.count(16 + 4 * dim)?;
    let mut owned = 0usize;
    for _ in 0..m {
        let id = InstanceId(r.u64()?);
        if id.0 >= next_instance {
            return Err(Error::Snapshot(format!("instance id {} beyond next id", id.0)));
        }
        let count = r.count(8)?;
        let mut members = BTreeSet::new();
        for _ in 0..count {
            if !members.insert(PointId(r.u64()?)) {
                return Err(Error::Snapshot(format!("duplicate member in instance {}", id.0)));
            }
        }
        owned += members.len();
        let feature = r.f32s(dim)?;
        table.restore(&store, id, members, feature, aggregator.as_ref())?;
    }
    if owned != store.iter().filter(|p| p.owner.is_some()).count() {
        return Err(Error::Snapshot("point owners do not match instance members".into()));
    }
    table.restore_next_id(next_instance);
    if r.remaining() != 0 {
        return Err(Error::Snapshot(format!("{} trailing bytes", r.remaining())));
    }
    let zones = ZoneGrid::rebuild(&mut table, zone_size, aggregator.as_ref())?;
    let params = MapParams { feature_dim: dim, cell_size, zone_size, ..params.clone() };
    Ok(SceneMap::from_parts(params, store, table, zones, aggregator, discriminator))
}

pub fn save(map: &SceneMap, path: &Path) -> Result<()> {
    std::fs::write(path, encode(map)).map_err(|e| Error::io(path, e))
}

pub fn load(path: &Path, params: &MapParams, aggregator: Arc<dyn Aggregator>, discriminator: Arc<dyn MergingDiscriminator>) -> Result<SceneMap> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes, params, aggregator, discriminator)
}
