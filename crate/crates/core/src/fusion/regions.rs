use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;

use serde::{Deserialize, Serialize};

use super::pca::Pca2;
use crate::dataset::Dataset;
use crate::error::{Error, Result};
use crate::PartnerId;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case")]
pub enum Basis {
    RawFeatures,
    Pca2(Pca2),
}

impl Basis {
    pub fn project(&self, x: &[f64]) -> Vec<f64> {
        match self {
            Basis::RawFeatures => x.to_vec(),
            Basis::Pca2(p) => p.project(x),
        }
    }
}

/// Axis-aligned box covering one partner's data in the projected space.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Region {
    pub bounds: Vec<(f64, f64)>,
    pub owner: PartnerId,
}

impl Region {
    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.bounds.len() && z.iter().zip(&self.bounds).all(|(&v, &(lo, hi))| v >= lo && v <= hi)
    }
}

/// Bounding box of the projected rows, widened by `margin` on every side.
pub fn applicability_region(data: &Dataset, basis: &Basis, owner: &str, margin: f64) -> Result<Region> {
    if data.is_empty() {
        return Err(Error::EmptyInput(format!("partner `{owner}` has no data")));
    }
    if !(margin >= 0.0) {
        return Err(Error::Domain(format!("margin must be >= 0, got {margin}")));
    }
    let projected: Vec<Vec<f64>> = data.features.iter().map(|x| basis.project(x)).collect();
    let mut bounds: Vec<(f64, f64)> = projected[0].iter().map(|&v| (v, v)).collect();
    for z in &projected[1..] {
        for (b, &v) in bounds.iter_mut().zip(z) {
            b.0 = b.0.min(v);
            b.1 = b.1.max(v);
        }
    }
    for b in &mut bounds {
        b.0 -= margin;
        b.1 += margin;
    }
    Ok(Region {
        bounds,
        owner: owner.to_string(),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub lo: f64,
    pub hi: f64,
    pub lo_closed: bool,
    pub hi_closed: bool,
}

impl Interval {
    pub fn point(v: f64) -> Self {
        Self {
            lo: v,
            hi: v,
            lo_closed: true,
            hi_closed: true,
        }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self {
            lo,
            hi,
            lo_closed: false,
            hi_closed: false,
        }
    }

    pub fn contains(&self, v: f64) -> bool {
        (v > self.lo || (self.lo_closed && v == self.lo)) && (v < self.hi || (self.hi_closed && v == self.hi))
    }

    pub fn is_point(&self) -> bool {
        self.lo == self.hi
    }

    fn touches(&self, next: &Interval) -> bool {
        self.hi == next.lo && self.hi_closed != next.lo_closed
    }

    /// Distance from `v` to the closure.
    fn distance(&self, v: f64) -> f64 {
        (self.lo - v).max(v - self.hi).max(0.0)
    }
}

/// One piece of the arrangement induced by the region boxes, labeled with
/// every region covering it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RegionCell {
    pub bounds: Vec<Interval>,
    pub applicable: BTreeSet<PartnerId>,
    pub model_id: String,
}

impl RegionCell {
    pub fn contains(&self, z: &[f64]) -> bool {
        z.len() == self.bounds.len() && z.iter().zip(&self.bounds).all(|(&v, b)| b.contains(v))
    }

    pub fn is_degenerate(&self) -> bool {
        self.bounds.iter().any(Interval::is_point)
    }

    /// Euclidean distance from `z` to the closed box.
    pub fn distance(&self, z: &[f64]) -> f64 {
        z.iter().zip(&self.bounds).map(|(&v, b)| b.distance(v).powi(2)).sum::<f64>().sqrt()
    }

    fn closure_contains(&self, other: &RegionCell) -> bool {
        self.bounds
            .iter()
            .zip(&other.bounds)
            .all(|(a, b)| b.lo >= a.lo && b.hi <= a.hi)
    }
}

/// Model id of a cover set: owner ids joined by `+`.
pub fn model_id_for(owners: &BTreeSet<PartnerId>) -> String {
    owners.iter().map(String::as_str).collect::<Vec<_>>().join("+")
}

/// Splits the union of the boxes into cells with a constant cover set.
///
/// Each axis is cut at every box endpoint into points and open gaps; the
/// resulting grid atoms get the set of boxes containing them, and atoms with
/// equal cover sets are merged greedily one axis at a time. Lower-dimensional
/// leftovers lying on the boundary of a full-dimensional cell are dropped.
type RawCell = (Vec<Interval>, BTreeSet<PartnerId>);

pub fn partition_regions(regions: &[Region]) -> Result<Vec<RegionCell>> {
    let first = regions.first().ok_or_else(|| Error::EmptyInput("no regions".into()))?;
    let d = first.bounds.len();
    if regions.iter().any(|r| r.bounds.len() != d) {
        return Err(Error::Schema("regions live in spaces of different dimension".into()));
    }
    if let Some(bad) = regions.iter().find(|r| r.bounds.iter().any(|&(lo, hi)| !(lo <= hi))) {
        return Err(Error::Domain(format!("region of `{}` has lo > hi", bad.owner)));
    }

    let atoms_per_axis: Vec<Vec<Interval>> = (0..d)
        .map(|axis| {
            let mut cuts: Vec<f64> = regions.iter().flat_map(|r| [r.bounds[axis].0, r.bounds[axis].1]).collect();
            cuts.sort_by(f64::total_cmp);
            cuts.dedup();
            let mut atoms = vec![Interval::point(cuts[0])];
            for w in cuts.windows(2) {
                atoms.push(Interval::open(w[0], w[1]));
                atoms.push(Interval::point(w[1]));
            }
            atoms
        })
        .collect();

    let covers = |cell: &[Interval]| -> BTreeSet<PartnerId> {
        regions
            .iter()
            .filter(|r| {
                r.bounds
                    .iter()
                    .zip(cell)
                    .all(|(&(lo, hi), atom)| lo <= atom.lo && atom.hi <= hi)
            })
            .map(|r| r.owner.clone())
            .collect()
    };

    let total: usize = atoms_per_axis.iter().map(Vec::len).product();
    let mut cells: Vec<RawCell> = Vec::new();
    for flat in 0..total {
        let mut rem = flat;
        let mut cell = vec![Interval::point(0.0); d];
        for axis in (0..d).rev() {
            let n = atoms_per_axis[axis].len();
            cell[axis] = atoms_per_axis[axis][rem % n];
            rem /= n;
        }
        let owners = covers(&cell);
        if !owners.is_empty() {
            cells.push((cell, owners));
        }
    }

    for axis in (0..d).rev() {
        let mut groups: BTreeMap<String, Vec<RawCell>> = BTreeMap::new();
        for c in cells {
            let key = serde_json::to_string(&(
                c.0.iter().enumerate().filter(|&(a, _)| a != axis).map(|(_, i)| i).collect::<Vec<_>>(),
                &c.1,
            ))
            .expect("cell key serializes");
            groups.entry(key).or_default().push(c);
        }
        cells = Vec::new();
        for (_, mut group) in groups {
            group.sort_by(|a, b| {
                a.0[axis]
                    .lo
                    .total_cmp(&b.0[axis].lo)
                    .then(b.0[axis].lo_closed.cmp(&a.0[axis].lo_closed))
            });
            let mut merged: Vec<RawCell> = Vec::new();
            for c in group {
                match merged.last_mut() {
                    Some(last) if last.0[axis].touches(&c.0[axis]) => {
                        last.0[axis].hi = c.0[axis].hi;
                        last.0[axis].hi_closed = c.0[axis].hi_closed;
                    }
                    _ => merged.push(c),
                }
            }
            cells.extend(merged);
        }
    }

    let mut out: Vec<RegionCell> = cells
        .into_iter()
        .map(|(bounds, applicable)| RegionCell {
            model_id: model_id_for(&applicable),
            bounds,
            applicable,
        })
        .collect();
    let full: Vec<RegionCell> = out.iter().filter(|c| !c.is_degenerate()).cloned().collect();
    out.retain(|c| !c.is_degenerate() || !full.iter().any(|f| f.closure_contains(c)));
    out.sort_by(|a, b| {
        for (x, y) in a.bounds.iter().zip(&b.bounds) {
            let o = x.lo.total_cmp(&y.lo).then(y.lo_closed.cmp(&x.lo_closed));
            if o.is_ne() {
                return o;
            }
        }
        a.applicable.cmp(&b.applicable)
    });
    Ok(out)
}

/// Letter per distinct cover set: singletons first, then by size, ties by
/// owner ids.
pub fn cell_classes(cells: &[RegionCell]) -> BTreeMap<String, String> {
    let mut sets: Vec<&BTreeSet<PartnerId>> = cells.iter().map(|c| &c.applicable).collect();
    sets.sort_by(|a, b| a.len().cmp(&b.len()).then(a.cmp(b)));
    sets.dedup();
    sets.into_iter()
        .enumerate()
        .map(|(i, s)| (model_id_for(s), class_name(i)))
        .collect()
}

fn class_name(mut i: usize) -> String {
    let mut s = String::new();
    loop {
        s.insert(0, (b'A' + (i % 26) as u8) as char);
        if i < 26 {
            break;
        }
        i = i / 26 - 1;
    }
    s
}

/// Table of cells: `region`, per-axis bounds with closedness, the
/// applicable owners (space separated) and the model id.
pub fn write_cell_table<W: Write>(cells: &[RegionCell], writer: W) -> Result<()> {
    let mut w = csv::Writer::from_writer(writer);
    let d = cells.first().map_or(0, |c| c.bounds.len());
    let mut header = vec!["region".to_string()];
    for a in 1..=d {
        header.extend([
            format!("axis{a}_lo"),
            format!("axis{a}_hi"),
            format!("axis{a}_lo_closed"),
            format!("axis{a}_hi_closed"),
        ]);
    }
    header.extend(["applicable".to_string(), "model_id".to_string()]);
    w.write_record(&header)?;
    let classes = cell_classes(cells);
    for c in cells {
        let mut rec = vec![classes[&c.model_id].clone()];
        for b in &c.bounds {
            rec.extend([
                b.lo.to_string(),
                b.hi.to_string(),
                b.lo_closed.to_string(),
                b.hi_closed.to_string(),
            ]);
        }
        rec.push(c.applicable.iter().map(String::as_str).collect::<Vec<_>>().join(" "));
        rec.push(c.model_id.clone());
        w.write_record(&rec)?;
    }
    w.flush()?;
    Ok(())
}
