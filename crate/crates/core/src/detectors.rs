//! Feature-bagged base detectors.
//!
//! Both detectors score every point of a dataset against a reference sample.
//! The sample is normally given as row indices into the same dataset, so the
//! projection onto a feature bag is computed once and a point that belongs to
//! the sample never counts itself as a neighbor.

use ndarray::{Array2, ArrayView2, Axis};
use rand::seq::index;
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{CareError, Result};
use crate::neighbors::{knn_query, NeighborList};
use crate::rng::rng_from;

/// Reachability mass substituted when a point's mean reachability distance
/// is zero (co-located duplicates).
pub const LRD_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum DetectorKind {
    AvgKnn,
    Lof,
}

impl std::str::FromStr for DetectorKind {
    type Err = CareError;

    fn from_str(s: &str) -> Result<Self> {
        match s.to_ascii_lowercase().as_str() {
            "avgknn" => Ok(DetectorKind::AvgKnn),
            "lof" => Ok(DetectorKind::Lof),
            other => Err(CareError::param(format!("unknown detector '{other}'"))),
        }
    }
}

/// Strictly increasing feature indices defining one detector's subspace.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeatureBag {
    selected: Vec<usize>,
}

impl FeatureBag {
    pub fn new(mut selected: Vec<usize>, d: usize) -> Result<Self> {
        selected.sort_unstable();
        selected.dedup();
        if selected.is_empty() || selected.last().is_some_and(|&f| f >= d) {
            return Err(CareError::param(format!(
                "feature bag must be a nonempty subset of 0..{d}"
            )));
        }
        Ok(FeatureBag { selected })
    }

    /// Every feature of a `d`-dimensional dataset.
    pub fn all(d: usize) -> Self {
        FeatureBag {
            selected: (0..d).collect(),
        }
    }

    pub fn features(&self) -> &[usize] {
        &self.selected
    }

    pub fn len(&self) -> usize {
        self.selected.len()
    }

    pub fn is_empty(&self) -> bool {
        self.selected.is_empty()
    }

    pub fn project(&self, points: ArrayView2<'_, f64>) -> Array2<f64> {
        points.select(Axis(1), &self.selected)
    }
}

/// Draws `b` bags. Bag `i` first draws its size uniformly from
/// `ceil(d/2) ..= d-1`, then that many distinct features, from its own
/// seed-derived stream.
pub fn make_feature_bags(d: usize, b: usize, seed: u64) -> Result<Vec<FeatureBag>> {
    if d < 2 {
        return Err(CareError::param("feature bagging needs at least 2 features"));
    }
    if b == 0 {
        return Err(CareError::param("need at least one bag"));
    }
    let low = d.div_ceil(2);
    let high = d - 1;
    Ok((0..b)
        .map(|i| {
            let mut rng = rng_from(seed, &[i as u64]);
            let q = rng.random_range(low..=high);
            let mut selected = index::sample(&mut rng, d, q).into_vec();
            selected.sort_unstable();
            FeatureBag { selected }
        })
        .collect())
}

#[derive(Debug, Clone, PartialEq)]
pub struct RawScores {
    pub values: Vec<f64>,
    pub kind: DetectorKind,
    pub bag: FeatureBag,
}

/// The data model points are scored against.
#[derive(Debug, Clone, Copy)]
pub enum Reference<'a> {
    /// Row indices into the scored points; must be distinct.
    Sample(&'a [usize]),
    /// A separate point set with the same columns as the scored points.
    Points(ArrayView2<'a, f64>),
}

struct Prepared {
    reference: Array2<f64>,
    /// Reference row of each scored point, if it is part of the reference.
    position: Vec<Option<usize>>,
    queries: Array2<f64>,
}

fn prepare(points: ArrayView2<'_, f64>, reference: Reference<'_>, bag: &FeatureBag) -> Result<Prepared> {
    if bag.features().last().is_some_and(|&f| f >= points.ncols()) {
        return Err(CareError::param("feature bag exceeds data dimension"));
    }
    let queries = bag.project(points);
    match reference {
        Reference::Sample(idx) => {
            let mut position = vec![None; points.nrows()];
            for (pos, &i) in idx.iter().enumerate() {
                let slot = position
                    .get_mut(i)
                    .ok_or_else(|| CareError::param(format!("sample index {i} out of range")))?;
                if slot.replace(pos).is_some() {
                    return Err(CareError::param(format!("sample index {i} repeated")));
                }
            }
            Ok(Prepared {
                reference: queries.select(Axis(0), idx),
                position,
                queries,
            })
        }
        Reference::Points(r) => {
            if r.ncols() != points.ncols() {
                return Err(CareError::param("reference and data differ in dimension"));
            }
            Ok(Prepared {
                reference: bag.project(r),
                position: vec![None; points.nrows()],
                queries,
            })
        }
    }
}

fn check_k(k: usize, reference_size: usize) -> Result<()> {
    if k == 0 {
        return Err(CareError::param("k must be at least 1"));
    }
    if reference_size <= k {
        return Err(CareError::param(format!(
            "reference sample of {reference_size} points is too small for k = {k}"
        )));
    }
    Ok(())
}

/// Neighbors of every reference row within the reference (self excluded),
/// and of every scored point. Scored points that are reference rows reuse
/// the reference row's list.
struct Neighborhoods {
    within: NeighborList,
    outside: Option<NeighborList>,
    outside_row: Vec<usize>,
}

impl Neighborhoods {
    fn compute(p: &Prepared, k: usize) -> Result<Self> {
        let n_ref = p.reference.nrows();
        let self_ex: Vec<Option<usize>> = (0..n_ref).map(Some).collect();
        let within = knn_query(p.reference.view(), p.reference.view(), k, Some(&self_ex))?;
        let outsiders: Vec<usize> = (0..p.queries.nrows())
            .filter(|&i| p.position[i].is_none())
            .collect();
        let mut outside_row = vec![usize::MAX; p.queries.nrows()];
        for (row, &i) in outsiders.iter().enumerate() {
            outside_row[i] = row;
        }
        let outside = if outsiders.is_empty() {
            None
        } else {
            let q = p.queries.select(Axis(0), &outsiders);
            Some(knn_query(q.view(), p.reference.view(), k, None)?)
        };
        Ok(Neighborhoods {
            within,
            outside,
            outside_row,
        })
    }

    fn of(&self, p: &Prepared, i: usize) -> (&[usize], &[f64]) {
        match p.position[i] {
            Some(pos) => (self.within.indices(pos), self.within.distances(pos)),
            None => {
                let list = self.outside.as_ref().expect("outsiders were queried");
                let row = self.outside_row[i];
                (list.indices(row), list.distances(row))
            }
        }
    }
}

/// Mean distance to the `k` nearest reference points.
pub fn avgknn_score(
    points: ArrayView2<'_, f64>,
    reference: Reference<'_>,
    k: usize,
    bag: &FeatureBag,
) -> Result<RawScores> {
    let p = prepare(points, reference, bag)?;
    check_k(k, p.reference.nrows())?;
    let excl: Vec<Option<usize>> = p.position.clone();
    let nn = knn_query(p.queries.view(), p.reference.view(), k, Some(&excl))?;
    let values = (0..p.queries.nrows())
        .map(|i| nn.distances(i).iter().sum::<f64>() / k as f64)
        .collect();
    Ok(RawScores {
        values,
        kind: DetectorKind::AvgKnn,
        bag: bag.clone(),
    })
}

fn local_reachability_density(neighbors: &[usize], distances: &[f64], k_distance: &[f64]) -> f64 {
    let mean_reach = neighbors
        .iter()
        .zip(distances)
        .map(|(&o, &dist)| dist.max(k_distance[o]))
        .sum::<f64>()
        / neighbors.len() as f64;
    if mean_reach > 0.0 {
        1.0 / mean_reach
    } else {
        1.0 / LRD_EPSILON
    }
}

/// Local outlier factor of every point relative to the reference sample.
/// k-distances and densities of reference points are computed within the
/// reference with self-exclusion.
pub fn lof_score(
    points: ArrayView2<'_, f64>,
    reference: Reference<'_>,
    k: usize,
    bag: &FeatureBag,
) -> Result<RawScores> {
    let p = prepare(points, reference, bag)?;
    check_k(k, p.reference.nrows())?;
    let hoods = Neighborhoods::compute(&p, k)?;
    let n_ref = p.reference.nrows();
    let k_distance: Vec<f64> = (0..n_ref).map(|o| hoods.within.kth_distance(o)).collect();
    let ref_lrd: Vec<f64> = (0..n_ref)
        .map(|o| {
            local_reachability_density(hoods.within.indices(o), hoods.within.distances(o), &k_distance)
        })
        .collect();
    let values = (0..p.queries.nrows())
        .map(|i| {
            let (idx, dist) = hoods.of(&p, i);
            let lrd = local_reachability_density(idx, dist, &k_distance);
            let mean_neighbor_lrd = idx.iter().map(|&o| ref_lrd[o]).sum::<f64>() / k as f64;
            mean_neighbor_lrd / lrd
        })
        .collect();
    Ok(RawScores {
        values,
        kind: DetectorKind::Lof,
        bag: bag.clone(),
    })
}

pub fn score(
    kind: DetectorKind,
    points: ArrayView2<'_, f64>,
    reference: Reference<'_>,
    k: usize,
    bag: &FeatureBag,
) -> Result<RawScores> {
    match kind {
        DetectorKind::AvgKnn => avgknn_score(points, reference, k, bag),
        DetectorKind::Lof => lof_score(points, reference, k, bag),
    }
}
