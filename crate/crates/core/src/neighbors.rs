//! Exact k-nearest-neighbor search under the Euclidean metric.
//!
//! The search is a linear scan per query. Neighbors are ordered by distance
//! and, on equal distance, by lower reference index, so results do not depend
//! on query order or on how queries are split across threads.

use ndarray::ArrayView2;
use rayon::prelude::*;

use crate::error::{CareError, Result};

/// Row-major `n x k` neighbor indices and distances, ascending per row.
#[derive(Debug, Clone, PartialEq)]
pub struct NeighborList {
    k: usize,
    indices: Vec<usize>,
    distances: Vec<f64>,
}

impl NeighborList {
    pub fn k(&self) -> usize {
        self.k
    }

    pub fn len(&self) -> usize {
        self.indices.len() / self.k
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }

    pub fn indices(&self, query: usize) -> &[usize] {
        &self.indices[query * self.k..(query + 1) * self.k]
    }

    pub fn distances(&self, query: usize) -> &[f64] {
        &self.distances[query * self.k..(query + 1) * self.k]
    }

    /// Distance to the k-th neighbor of `query`.
    pub fn kth_distance(&self, query: usize) -> f64 {
        self.distances[(query + 1) * self.k - 1]
    }
}

pub(crate) fn euclidean(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Finds the `k` nearest reference rows of every query row.
///
/// `exclude[i]`, when present, names a reference row that must never be
/// returned for query `i` (the query itself, when it belongs to the
/// reference sample).
pub fn knn_query(
    queries: ArrayView2<'_, f64>,
    reference: ArrayView2<'_, f64>,
    k: usize,
    exclude: Option<&[Option<usize>]>,
) -> Result<NeighborList> {
    if k == 0 {
        return Err(CareError::param("k must be at least 1"));
    }
    if queries.ncols() != reference.ncols() {
        return Err(CareError::param(format!(
            "queries have {} features but reference has {}",
            queries.ncols(),
            reference.ncols()
        )));
    }
    let n_ref = reference.nrows();
    if let Some(ex) = exclude {
        if ex.len() != queries.nrows() {
            return Err(CareError::param("exclusion list length differs from query count"));
        }
    }
    let excludes_any = exclude.is_some_and(|ex| ex.iter().any(Option::is_some));
    let available = if excludes_any { n_ref.saturating_sub(1) } else { n_ref };
    if k > available {
        return Err(CareError::param(format!(
            "k = {k} exceeds the {available} available reference points"
        )));
    }

    let queries = queries.as_standard_layout();
    let reference = reference.as_standard_layout();
    let q_rows = queries.as_slice().expect("standard layout");
    let r_rows = reference.as_slice().expect("standard layout");
    let d = queries.ncols().max(1);
    let n_queries = queries.nrows();

    let rows: Vec<(Vec<usize>, Vec<f64>)> = (0..n_queries)
        .into_par_iter()
        .map(|qi| {
            let q = &q_rows[qi * d..(qi + 1) * d];
            let skip = exclude.and_then(|ex| ex[qi]);
            let mut best: Vec<(f64, usize)> = Vec::with_capacity(k + 1);
            for (ri, r) in r_rows.chunks_exact(d).enumerate() {
                if Some(ri) == skip {
                    continue;
                }
                let dist = euclidean(q, r);
                // Reference rows arrive in increasing index order, so a
                // candidate only displaces entries with strictly larger
                // distance; equal distances keep the lower index first.
                if best.len() == k && dist >= best[k - 1].0 {
                    continue;
                }
                let pos = best.partition_point(|&(bd, _)| bd <= dist);
                best.insert(pos, (dist, ri));
                best.truncate(k);
            }
            best.into_iter().map(|(dd, i)| (i, dd)).unzip()
        })
        .collect();

    let mut indices = Vec::with_capacity(n_queries * k);
    let mut distances = Vec::with_capacity(n_queries * k);
    for (i, dd) in rows {
        indices.extend(i);
        distances.extend(dd);
    }
    Ok(NeighborList {
        k,
        indices,
        distances,
    })
}
