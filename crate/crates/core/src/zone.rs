//! Uniform cubic zones aggregating the instances whose centroids fall inside.

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::feature;
use crate::geometry::Point3;
use crate::instance::aggregator::{AggregateItem, Aggregator};
use crate::instance::{InstanceId, InstanceTable};

/// Integer cube coordinate, `floor(P / zone_size)` per axis.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ZoneKey(pub i64, pub i64, pub i64);

/// Half-open cell `[n * size, (n + 1) * size)` containing `p` on each axis.
pub fn zone_index(p: &Point3, zone_size: f64) -> ZoneKey {
    debug_assert!(zone_size > 0.0);
    ZoneKey((p.x / zone_size).floor() as i64, (p.y / zone_size).floor() as i64, (p.z / zone_size).floor() as i64)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Zone {
    pub key: ZoneKey,
    pub members: BTreeSet<InstanceId>,
    pub feature: Vec<f32>,
    pub center: Point3,
}

#[derive(Clone, Debug)]
pub struct ZoneGrid {
    size: f64,
    zones: BTreeMap<ZoneKey, Zone>,
}

impl ZoneGrid {
    pub const DEFAULT_SIZE: f64 = 3.0;

    pub fn new(size: f64) -> Result<Self> {
        if !(size > 0.0 && size.is_finite()) {
            return Err(Error::InvalidArgument { arg: "zone_size", reason: format!("must be positive, got {size}") });
        }
        Ok(Self { size, zones: BTreeMap::new() })
    }

    pub fn size(&self) -> f64 {
        self.size
    }

    pub fn len(&self) -> usize {
        self.zones.len()
    }

    pub fn is_empty(&self) -> bool {
        self.zones.is_empty()
    }

    pub fn get(&self, key: &ZoneKey) -> Option<&Zone> {
        self.zones.get(key)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Zone> {
        self.zones.values()
    }

    pub fn center_of(&self, key: ZoneKey) -> Point3 {
        Point3::new((key.0 as f64 + 0.5) * self.size, (key.1 as f64 + 0.5) * self.size, (key.2 as f64 + 0.5) * self.size)
    }

    /// Moves a live instance into the zone of its current centroid. Returns
    /// the keys whose membership changed.
    pub fn update_for_instance(&mut self, table: &mut InstanceTable, id: InstanceId, agg: &dyn Aggregator) -> Result<Vec<ZoneKey>> {
        let touched = self.assign(table, id);
        self.reencode(table, &touched, agg)?;
        Ok(touched)
    }

    /// Removes an instance that has left the table from the zone it was in.
    pub fn remove_instance(&mut self, table: &InstanceTable, id: InstanceId, zone: ZoneKey, agg: &dyn Aggregator) -> Result<Vec<ZoneKey>> {
        let touched = self.detach(id, zone);
        self.reencode(table, &touched, agg)?;
        Ok(touched)
    }

    /// Batched form used inside frame integration: reassigns `changed` live
    /// instances, detaches `removed` ones, and re-encodes each touched zone once.
    pub fn sync(
        &mut self,
        table: &mut InstanceTable,
        changed: &BTreeSet<InstanceId>,
        removed: &[(InstanceId, Option<ZoneKey>)],
        agg: &dyn Aggregator,
    ) -> Result<BTreeSet<ZoneKey>> {
        let mut touched = BTreeSet::new();
        for &(id, zone) in removed {
            if let Some(z) = zone {
                touched.extend(self.detach(id, z));
            }
        }
        for &id in changed {
            touched.extend(self.assign(table, id));
        }
        let list: Vec<ZoneKey> = touched.iter().copied().collect();
        self.reencode(table, &list, agg)?;
        Ok(touched)
    }

    fn assign(&mut self, table: &mut InstanceTable, id: InstanceId) -> Vec<ZoneKey> {
        let Some(inst) = table.get(id) else { return Vec::new() };
        let new_key = zone_index(&inst.centroid, self.size);
        let old = inst.zone;
        let mut touched = Vec::new();
        if old != Some(new_key) {
            if let Some(old) = old {
                touched.extend(self.detach(id, old));
            }
            let center = self.center_of(new_key);
            self.zones.entry(new_key).or_insert_with(|| Zone { key: new_key, members: BTreeSet::new(), feature: Vec::new(), center }).members.insert(id);
            table.set_zone(id, Some(new_key));
            touched.push(new_key);
        } else {
            // Feature may have changed without moving.
            touched.push(new_key);
        }
        touched
    }

    fn detach(&mut self, id: InstanceId, key: ZoneKey) -> Vec<ZoneKey> {
        if let Some(z) = self.zones.get_mut(&key) {
            z.members.remove(&id);
            return vec![key];
        }
        Vec::new()
    }

    fn reencode(&mut self, table: &InstanceTable, keys: &[ZoneKey], agg: &dyn Aggregator) -> Result<()> {
        for key in keys {
            let Some(zone) = self.zones.get(key) else { continue };
            if zone.members.is_empty() {
                self.zones.remove(key);
                continue;
            }
            let feature = encode_zone(table, &zone.members, agg)?;
            self.zones.get_mut(key).expect("present").feature = feature;
        }
        Ok(())
    }

    /// Rebuilds every zone from the instance table (snapshot load).
    pub fn rebuild(table: &mut InstanceTable, size: f64, agg: &dyn Aggregator) -> Result<Self> {
        let mut grid = Self::new(size)?;
        let ids: Vec<InstanceId> = table.ids().collect();
        for id in &ids {
            table.set_zone(*id, None);
        }
        for id in ids {
            grid.assign(table, id);
        }
        let keys: Vec<ZoneKey> = grid.zones.keys().copied().collect();
        grid.reencode(table, &keys, agg)?;
        Ok(grid)
    }

    /// Checks membership against the instance table and, optionally, features
    /// against a from-scratch re-aggregation.
    pub fn check(&self, table: &InstanceTable, agg: Option<&dyn Aggregator>, tol: f64) -> std::result::Result<(), String> {
        let mut seen = 0usize;
        for zone in self.zones.values() {
            if zone.members.is_empty() {
                return Err(format!("zone {:?} is empty", zone.key));
            }
            for id in &zone.members {
                let inst = table.get(*id).ok_or_else(|| format!("zone {:?} lists dead instance {id:?}", zone.key))?;
                if inst.zone != Some(zone.key) || zone_index(&inst.centroid, self.size) != zone.key {
                    return Err(format!("instance {id:?} misassigned (zone {:?}, centroid cell {:?})", zone.key, zone_index(&inst.centroid, self.size)));
                }
                seen += 1;
            }
            if let Some(agg) = agg {
                let fresh = encode_zone(table, &zone.members, agg).map_err(|e| e.to_string())?;
                let err = zone.feature.iter().zip(&fresh).map(|(a, b)| (a - b).abs() as f64).fold(0.0, f64::max);
                if err > tol {
                    return Err(format!("zone {:?} feature off by {err:e}", zone.key));
                }
            }
        }
        if seen != table.len() {
            return Err(format!("{} instances live, {seen} assigned to zones", table.len()));
        }
        Ok(())
    }
}

/// Aggregates the features of the given instances.
pub fn encode_zone(table: &InstanceTable, members: &BTreeSet<InstanceId>, agg: &dyn Aggregator) -> Result<Vec<f32>> {
    let insts: Vec<_> = members.iter().filter_map(|id| table.get(*id)).collect();
    if insts.is_empty() {
        return Err(Error::Empty("zone members"));
    }
    let positional = if agg.uses_positional() {
        let mean = insts.iter().fold(Point3::zeros(), |a, i| a + i.centroid) / insts.len() as f64;
        insts
            .iter()
            .map(|i| {
                let d = i.centroid - mean;
                // Instances carry no heading or footprint.
                [d.x, d.y, d.z, 0.0, 1.0, 0.0]
            })
            .collect()
    } else {
        vec![[0.0; 6]; insts.len()]
    };
    let items: Vec<AggregateItem> = insts.iter().zip(positional).map(|(i, p)| AggregateItem { feature: &i.feature, positional: p }).collect();
    agg.aggregate(&items)
}

/// Mean over text tokens of the best cosine similarity to any instance in the zone.
pub fn zone_text_affinity(instances: &[&[f32]], text_tokens: &[&[f32]]) -> Result<f64> {
    if instances.is_empty() {
        return Err(Error::Empty("zone instance features"));
    }
    if text_tokens.is_empty() {
        return Err(Error::Empty("text token features"));
    }
    let mut total = 0.0;
    for t in text_tokens {
        let best = instances.iter().map(|i| feature::cosine_f32(i, t)).fold(f64::NEG_INFINITY, f64::max);
        total += best;
    }
    Ok(total / text_tokens.len() as f64)
}
