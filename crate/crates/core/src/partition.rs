//! Finite partitions of the unit interval.
//!
//! A partition is stored over a *ground*: an ordered list of consecutive
//! intervals (atoms) covering `[0, 1)`. Each atom belongs to exactly one part.
//! Interval partitions are the case where every part is a run of consecutive
//! atoms and parts appear left to right; abstract partitions arise from
//! refining by arbitrary unions of atoms.

use std::collections::HashMap;
use std::hash::Hash;

use crate::error::{Error, Result};

/// Tolerance used when comparing boundary positions of two grounds.
pub const BOUNDARY_TOL: f64 = 1e-12;

#[derive(Clone, Debug, PartialEq)]
pub struct Partition {
    atoms: Vec<f64>,
    labels: Vec<usize>,
    measures: Vec<f64>,
}

/// Common refinement together with the parent of every new part.
#[derive(Clone, Debug)]
pub struct Refinement {
    pub partition: Partition,
    pub left: Vec<usize>,
    pub right: Vec<usize>,
}

fn check_atoms(atoms: &[f64]) -> Result<()> {
    if atoms.is_empty() {
        return Err(Error::InvalidPartition("a partition needs at least one part".into()));
    }
    if let Some(i) = atoms.iter().position(|m| !(m.is_finite() && *m > 0.0)) {
        return Err(Error::InvalidPartition(format!(
            "part {i} has non-positive or non-finite measure {}",
            atoms[i]
        )));
    }
    let total: f64 = atoms.iter().sum();
    let tol = 1e-12 * (atoms.len() as f64).max(1.0);
    if (total - 1.0).abs() > tol {
        return Err(Error::InvalidPartition(format!("measures sum to {total}, expected 1")));
    }
    Ok(())
}

impl Partition {
    /// The interval equipartition into `n` parts of measure `1/n`.
    pub fn equipartition(n: usize) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidPartition("equipartition needs n >= 1".into()));
        }
        let atoms = vec![1.0 / n as f64; n];
        Ok(Self { measures: atoms.clone(), labels: (0..n).collect(), atoms })
    }

    /// Consecutive intervals with the given measures.
    pub fn intervals(measures: Vec<f64>) -> Result<Self> {
        check_atoms(&measures)?;
        Ok(Self { labels: (0..measures.len()).collect(), atoms: measures.clone(), measures })
    }

    /// Groups ground atoms by label. Labels must cover `0..k` without gaps.
    pub fn from_labels(atoms: Vec<f64>, labels: Vec<usize>) -> Result<Self> {
        check_atoms(&atoms)?;
        if labels.len() != atoms.len() {
            return Err(Error::Dimension(format!(
                "{} labels for {} atoms",
                labels.len(),
                atoms.len()
            )));
        }
        let k = labels.iter().max().map_or(0, |m| m + 1);
        let mut measures = vec![0.0; k];
        for (a, &l) in labels.iter().enumerate() {
            measures[l] += atoms[a];
        }
        if let Some(l) = measures.iter().position(|&m| m <= 0.0) {
            return Err(Error::InvalidPartition(format!("label {l} owns no atom")));
        }
        Ok(Self { atoms, labels, measures })
    }

    /// Builds a partition over `atoms` whose parts are the distinct keys,
    /// numbered by first appearance. Returns the key of every part.
    pub fn from_keys<K: Hash + Eq + Clone>(atoms: Vec<f64>, keys: &[K]) -> Result<(Self, Vec<K>)> {
        let mut index: HashMap<K, usize> = HashMap::new();
        let mut order = Vec::new();
        let labels = keys
            .iter()
            .map(|k| {
                *index.entry(k.clone()).or_insert_with(|| {
                    order.push(k.clone());
                    order.len() - 1
                })
            })
            .collect();
        Ok((Self::from_labels(atoms, labels)?, order))
    }

    pub fn len(&self) -> usize {
        self.measures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.measures.is_empty()
    }

    pub fn measure(&self, part: usize) -> f64 {
        self.measures[part]
    }

    pub fn measures(&self) -> &[f64] {
        &self.measures
    }

    pub fn atoms(&self) -> &[f64] {
        &self.atoms
    }

    pub fn atom_count(&self) -> usize {
        self.atoms.len()
    }

    /// Part of each ground atom.
    pub fn labels(&self) -> &[usize] {
        &self.labels
    }

    /// Ground atoms belonging to `part`, in left-to-right order.
    pub fn members(&self, part: usize) -> Vec<usize> {
        (0..self.atoms.len()).filter(|&a| self.labels[a] == part).collect()
    }

    /// Atom lists of all parts.
    pub fn groups(&self) -> Vec<Vec<usize>> {
        let mut out = vec![Vec::new(); self.len()];
        for (a, &l) in self.labels.iter().enumerate() {
            out[l].push(a);
        }
        out
    }

    /// The partition whose parts are the ground atoms.
    pub fn ground(&self) -> Partition {
        Self {
            atoms: self.atoms.clone(),
            labels: (0..self.atoms.len()).collect(),
            measures: self.atoms.clone(),
        }
    }

    /// True when every part is an interval and parts are ordered left to right.
    pub fn is_interval(&self) -> bool {
        self.labels.first() == Some(&0)
            && self.labels.windows(2).all(|w| w[1] == w[0] || w[1] == w[0] + 1)
    }

    /// True when this partition is the equipartition into `n` parts.
    pub fn is_equipartition(&self, n: usize) -> bool {
        self.len() == n
            && self.is_interval()
            && self.measures.iter().all(|m| (m - 1.0 / n as f64).abs() <= BOUNDARY_TOL)
    }

    /// Whether both partitions are defined over the same ground.
    pub fn same_ground(&self, other: &Partition) -> bool {
        self.atoms == other.atoms
    }

    /// Splits each part by membership of its atoms in `set`.
    pub fn refine_by_atoms(&self, set: &[bool]) -> Result<Refinement> {
        if set.len() != self.atoms.len() {
            return Err(Error::Dimension(format!(
                "atom set of length {} for {} atoms",
                set.len(),
                self.atoms.len()
            )));
        }
        let keys: Vec<(usize, bool)> = self.labels.iter().zip(set).map(|(&l, &s)| (l, s)).collect();
        let (partition, order) = Self::from_keys(self.atoms.clone(), &keys)?;
        let left = order.iter().map(|k| k.0).collect();
        Ok(Refinement { right: vec![0; partition.len()], partition, left })
    }

    /// Merges parts: `map[p]` is the new part of old part `p`.
    pub fn coarsen(&self, map: &[usize]) -> Result<Partition> {
        if map.len() != self.len() {
            return Err(Error::Dimension(format!("coarsening map of length {} for {} parts", map.len(), self.len())));
        }
        let keys: Vec<usize> = self.labels.iter().map(|&l| map[l]).collect();
        Ok(Self::from_keys(self.atoms.clone(), &keys)?.0)
    }

    /// If `self` refines `coarse` over the same ground, the coarse part of
    /// every fine part.
    pub fn coarsening_map(&self, coarse: &Partition) -> Option<Vec<usize>> {
        if !self.same_ground(coarse) {
            return None;
        }
        let mut map = vec![usize::MAX; self.len()];
        for (a, &l) in self.labels.iter().enumerate() {
            let c = coarse.labels[a];
            if map[l] == usize::MAX {
                map[l] = c;
            } else if map[l] != c {
                return None;
            }
        }
        Some(map)
    }

    /// Whether every part of `self` lies inside a single part of `coarse`.
    pub fn is_refinement(&self, coarse: &Partition) -> bool {
        if let Some(map) = self.coarsening_map(coarse) {
            return !map.contains(&usize::MAX);
        }
        let Ok(r) = self.common_refinement(coarse) else { return false };
        let mut map = vec![usize::MAX; self.len()];
        r.left.iter().zip(&r.right).all(|(&a, &b)| {
            let prev = std::mem::replace(&mut map[a], b);
            prev == usize::MAX || prev == b
        })
    }

    /// Re-expresses the partition over a finer ground. `parent[g]` is the
    /// current atom containing new atom `g`.
    pub fn on_ground(&self, atoms: Vec<f64>, parent: &[usize]) -> Result<Partition> {
        let labels = parent.iter().map(|&a| self.labels[a]).collect();
        Self::from_labels(atoms, labels)
    }

    /// The coarsest partition refining both. Grounds may differ; they are
    /// merged by their boundary positions.
    pub fn common_refinement(&self, other: &Partition) -> Result<Refinement> {
        let (atoms, pa, pb) = if self.same_ground(other) {
            let ids: Vec<usize> = (0..self.atoms.len()).collect();
            (self.atoms.clone(), ids.clone(), ids)
        } else {
            merge_grounds(&self.atoms, &other.atoms)?
        };
        let keys: Vec<(usize, usize)> =
            pa.iter().zip(&pb).map(|(&a, &b)| (self.labels[a], other.labels[b])).collect();
        let (partition, order) = Self::from_keys(atoms, &keys)?;
        Ok(Refinement {
            left: order.iter().map(|k| k.0).collect(),
            right: order.iter().map(|k| k.1).collect(),
            partition,
        })
    }
}

/// Merges two interval grounds. Returns the merged atoms and, for each merged
/// atom, the index of the atom containing it in each input ground.
pub fn merge_grounds(a: &[f64], b: &[f64]) -> Result<(Vec<f64>, Vec<usize>, Vec<usize>)> {
    let cum = |v: &[f64]| {
        let mut acc = 0.0;
        v.iter()
            .map(|m| {
                acc += m;
                acc
            })
            .collect::<Vec<f64>>()
    };
    let (ca, cb) = (cum(a), cum(b));
    let (mut i, mut j, mut pos) = (0usize, 0usize, 0.0f64);
    let (mut atoms, mut pa, mut pb) = (Vec::new(), Vec::new(), Vec::new());
    while i < a.len() && j < b.len() {
        let (ea, eb) = (ca[i], cb[j]);
        let end = if (ea - eb).abs() <= BOUNDARY_TOL { ea.max(eb) } else { ea.min(eb) };
        if end - pos > BOUNDARY_TOL {
            atoms.push(end - pos);
            pa.push(i);
            pb.push(j);
            pos = end;
        }
        if (ea - eb).abs() <= BOUNDARY_TOL {
            i += 1;
            j += 1;
        } else if ea < eb {
            i += 1;
        } else {
            j += 1;
        }
    }
    if i != a.len() || j != b.len() {
        return Err(Error::InvalidPartition("grounds do not cover the same interval".into()));
    }
    Ok((atoms, pa, pb))
}
