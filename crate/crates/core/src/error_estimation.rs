//! Unsupervised error-rate estimation from pairwise agreement rates.
//!
//! Agreement of detectors `i` and `j` relates to their individual error
//! rates and their joint error rate by
//!
//! ```text
//! a_ij = 1 - e_i - e_j + 2 e_ij
//! ```
//!
//! The estimate minimizes `sum (e^2 + eps)` over all individual and pairwise
//! errors subject to these equalities, `0 <= e <= 0.5 + eps`, `eps >= 0` and
//! `e <= 1`. Substituting `e_ij = (a_ij - 1 + e_i + e_j) / 2` leaves the
//! individual errors as the only free variables; each term
//! `z = e_i` or `z = e_ij` then contributes `z^2 + max(0, z - 0.5)` on the box
//! `0 <= z <= 1`.
//!
//! The program is solved with a Mehrotra predictor-corrector interior-point
//! method over `(e, t)`, where `t` carries the hinge as an epigraph variable.
//! The hinge variables are eliminated from each Newton system, so every step
//! costs one `b x b` Cholesky factorization. The starting point
//! `e_i = 0.75` is strictly feasible for every rate matrix with entries in
//! `[0, 1]`.

use nalgebra::{DMatrix, DVector};
use serde::Serialize;

use crate::agreement::{AgreementSummary, RateMatrix};
use crate::error::{CareError, Result};

const MAX_ITERATIONS: usize = 200;
const KKT_TOLERANCE: f64 = 1e-6;
const STEP_FRACTION: f64 = 0.99;

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ErrorEstimate {
    /// Estimated error rate of each detector.
    pub individual: Vec<f64>,
    /// Row-major `b x b` joint error rates implied by the agreement
    /// equalities; the diagonal holds the individual rates.
    pub pairwise: Vec<f64>,
    pub objective: f64,
    pub converged: bool,
    pub iterations: usize,
    pub kkt_residual: f64,
    /// Set when the input had to be repaired or the solver stalled.
    pub diagnostic: Option<String>,
}

impl ErrorEstimate {
    pub fn pair(&self, i: usize, j: usize) -> f64 {
        let b = self.individual.len();
        self.pairwise[i * b + j]
    }
}

/// `z^2 + max(0, z - 0.5)`, the per-term cost after eliminating the slack.
pub fn term_cost(z: f64) -> f64 {
    z * z + (z - 0.5).max(0.0)
}

pub fn estimate_errors(summary: &AgreementSummary) -> Result<ErrorEstimate> {
    estimate_errors_from_rates(&summary.rates)
}

/// Structure of the reduced program: term `k < b` is `e_k`, term `b + p` is
/// `(e_i + e_j) / 2 + offset[p]` for the `p`-th pair `(i, j)`.
struct Terms {
    b: usize,
    pairs: Vec<(usize, usize)>,
    offset: Vec<f64>,
}

impl Terms {
    fn m(&self) -> usize {
        self.b + self.pairs.len()
    }

    fn apply(&self, e: &[f64], out: &mut [f64], with_offset: bool) {
        out[..self.b].copy_from_slice(e);
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let off = if with_offset { self.offset[p] } else { 0.0 };
            out[self.b + p] = 0.5 * (e[i] + e[j]) + off;
        }
    }

    /// `sum_k coef_k M_k^T`.
    fn apply_transpose(&self, coef: &[f64]) -> DVector<f64> {
        let mut out = DVector::from_column_slice(&coef[..self.b]);
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let c = 0.5 * coef[self.b + p];
            out[i] += c;
            out[j] += c;
        }
        out
    }

    /// `sum_k w_k M_k^T M_k`.
    fn gram(&self, w: &[f64]) -> DMatrix<f64> {
        let mut h = DMatrix::zeros(self.b, self.b);
        for i in 0..self.b {
            h[(i, i)] += w[i];
        }
        for (p, &(i, j)) in self.pairs.iter().enumerate() {
            let c = 0.25 * w[self.b + p];
            h[(i, i)] += c;
            h[(j, j)] += c;
            h[(i, j)] += c;
            h[(j, i)] += c;
        }
        h
    }
}

/// Inequality groups, each of length `m`:
/// `z >= 0`, `z <= 1`, `t >= 0`, `t >= z - 0.5`.
#[derive(Clone)]
struct Groups([Vec<f64>; 4]);

impl Groups {
    fn zeros(m: usize) -> Self {
        Groups([vec![0.0; m], vec![0.0; m], vec![0.0; m], vec![0.0; m]])
    }
}

/// Cholesky factor, with a growing diagonal shift when rounding has cost
/// the (mathematically positive definite) Newton matrix its definiteness.
fn factorize(h: DMatrix<f64>) -> Result<nalgebra::Cholesky<f64, nalgebra::Dyn>> {
    if let Some(c) = h.clone().cholesky() {
        return Ok(c);
    }
    let scale = h.diagonal().amax().max(1.0);
    let mut shift = scale * 1e-14;
    for _ in 0..8 {
        let mut shifted = h.clone();
        for i in 0..shifted.nrows() {
            shifted[(i, i)] += shift;
        }
        if let Some(c) = shifted.cholesky() {
            return Ok(c);
        }
        shift *= 100.0;
    }
    Err(CareError::Numerical("Newton matrix is not positive definite".into()))
}

struct Direction {
    de: Vec<f64>,
    dt: Vec<f64>,
    ds: Groups,
    dl: Groups,
}

struct Solver<'a> {
    terms: &'a Terms,
    e: Vec<f64>,
    t: Vec<f64>,
    s: Groups,
    l: Groups,
    z: Vec<f64>,
}

impl<'a> Solver<'a> {
    fn new(terms: &'a Terms) -> Self {
        let m = terms.m();
        let e = vec![0.75; terms.b];
        let mut z = vec![0.0; m];
        terms.apply(&e, &mut z, true);
        let t: Vec<f64> = z.iter().map(|&zk| (zk - 0.5).max(0.0) + 0.5).collect();
        let s = Groups([
            z.clone(),
            z.iter().map(|zk| 1.0 - zk).collect(),
            t.clone(),
            z.iter().zip(&t).map(|(zk, tk)| tk - zk + 0.5).collect(),
        ]);
        let l = Groups([vec![1.0; m], vec![1.0; m], vec![1.0; m], vec![1.0; m]]);
        Solver { terms, e, t, s, l, z }
    }

    fn complementarity(&self) -> f64 {
        let total: f64 = (0..4)
            .map(|g| self.s.0[g].iter().zip(&self.l.0[g]).map(|(a, b)| a * b).sum::<f64>())
            .sum();
        total / (4 * self.terms.m()) as f64
    }

    /// Stationarity coefficients per term, stationarity in `t`, and primal
    /// residuals `G x + s - h`.
    fn residuals(&self) -> (Vec<f64>, Vec<f64>, Groups) {
        let m = self.terms.m();
        let [l1, l2, l3, l4] = &self.l.0;
        let g: Vec<f64> = (0..m)
            .map(|k| 2.0 * self.z[k] - l1[k] + l2[k] + l4[k])
            .collect();
        let rt: Vec<f64> = (0..m).map(|k| 1.0 - l3[k] - l4[k]).collect();
        let [s1, s2, s3, s4] = &self.s.0;
        let mut rp = Groups::zeros(m);
        for k in 0..m {
            let (z, t) = (self.z[k], self.t[k]);
            rp.0[0][k] = -z + s1[k];
            rp.0[1][k] = z + s2[k] - 1.0;
            rp.0[2][k] = -t + s3[k];
            rp.0[3][k] = z - t + s4[k] - 0.5;
        }
        (g, rt, rp)
    }

    fn kkt_residual(&self) -> f64 {
        let (g, rt, rp) = self.residuals();
        let stationarity = self.terms.apply_transpose(&g).amax();
        let rt_max = rt.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        let rp_max = rp.0.iter().flatten().fold(0.0f64, |a, v| a.max(v.abs()));
        let comp = (0..4)
            .flat_map(|gi| self.s.0[gi].iter().zip(&self.l.0[gi]).map(|(a, b)| a * b))
            .fold(0.0f64, f64::max);
        stationarity.max(rt_max).max(rp_max).max(comp)
    }

    fn max_step(&self, dir: &Direction) -> f64 {
        let mut alpha = 1.0f64;
        for gi in 0..4 {
            for (v, dv) in [(&self.s.0[gi], &dir.ds.0[gi]), (&self.l.0[gi], &dir.dl.0[gi])] {
                for (x, dx) in v.iter().zip(dv) {
                    if *dx < 0.0 {
                        alpha = alpha.min(-x / dx);
                    }
                }
            }
        }
        alpha
    }

    /// Solves the Newton system for the complementarity target `rc`.
    fn direction(
        &self,
        chol: &nalgebra::Cholesky<f64, nalgebra::Dyn>,
        d: &Groups,
        g: &[f64],
        rt: &[f64],
        rp: &Groups,
        rc: &Groups,
    ) -> Direction {
        let m = self.terms.m();
        let mut u = Groups::zeros(m);
        for gi in 0..4 {
            for k in 0..m {
                u.0[gi][k] = (rc.0[gi][k] - self.l.0[gi][k] * rp.0[gi][k]) / self.s.0[gi][k];
            }
        }
        let [d1, d2, d3, d4] = &d.0;
        let _ = (d1, d2);
        let mut coef = vec![0.0; m];
        let mut rhs_t = vec![0.0; m];
        for k in 0..m {
            rhs_t[k] = -rt[k] - u.0[2][k] - u.0[3][k];
            let c = d3[k] + d4[k];
            coef[k] = -g[k] - u.0[0][k] + u.0[1][k] + u.0[3][k] + d4[k] / c * rhs_t[k];
        }
        let de = chol.solve(&self.terms.apply_transpose(&coef));
        let de: Vec<f64> = de.iter().copied().collect();
        let mut mde = vec![0.0; m];
        self.terms.apply(&de, &mut mde, false);
        let dt: Vec<f64> = (0..m)
            .map(|k| (rhs_t[k] + d4[k] * mde[k]) / (d3[k] + d4[k]))
            .collect();
        let mut ds = Groups::zeros(m);
        for k in 0..m {
            ds.0[0][k] = -rp.0[0][k] + mde[k];
            ds.0[1][k] = -rp.0[1][k] - mde[k];
            ds.0[2][k] = -rp.0[2][k] + dt[k];
            ds.0[3][k] = -rp.0[3][k] - mde[k] + dt[k];
        }
        let mut dl = Groups::zeros(m);
        for gi in 0..4 {
            for k in 0..m {
                dl.0[gi][k] =
                    (-rc.0[gi][k] - self.l.0[gi][k] * ds.0[gi][k]) / self.s.0[gi][k];
            }
        }
        Direction { de, dt, ds, dl }
    }

    fn step(&mut self) -> Result<()> {
        let m = self.terms.m();
        let mu = self.complementarity();
        let (g, rt, rp) = self.residuals();
        let mut d = Groups::zeros(m);
        for gi in 0..4 {
            for k in 0..m {
                d.0[gi][k] = self.l.0[gi][k] / self.s.0[gi][k];
            }
        }
        let omega: Vec<f64> = (0..m)
            .map(|k| {
                let (d1, d2, d3, d4) = (d.0[0][k], d.0[1][k], d.0[2][k], d.0[3][k]);
                2.0 + d1 + d2 + d3 * d4 / (d3 + d4)
            })
            .collect();
        let chol = factorize(self.terms.gram(&omega))?;

        let mut rc = Groups::zeros(m);
        for gi in 0..4 {
            for k in 0..m {
                rc.0[gi][k] = self.s.0[gi][k] * self.l.0[gi][k];
            }
        }
        let affine = self.direction(&chol, &d, &g, &rt, &rp, &rc);
        let alpha_aff = self.max_step(&affine);
        let mut mu_aff = 0.0;
        for gi in 0..4 {
            for k in 0..m {
                mu_aff += (self.s.0[gi][k] + alpha_aff * affine.ds.0[gi][k])
                    * (self.l.0[gi][k] + alpha_aff * affine.dl.0[gi][k]);
            }
        }
        mu_aff /= (4 * m) as f64;
        let sigma = (mu_aff / mu).clamp(0.0, 1.0).powi(3);
        for gi in 0..4 {
            for k in 0..m {
                rc.0[gi][k] += affine.ds.0[gi][k] * affine.dl.0[gi][k] - sigma * mu;
            }
        }
        let dir = self.direction(&chol, &d, &g, &rt, &rp, &rc);
        let alpha = (STEP_FRACTION * self.max_step(&dir)).min(1.0);

        for (e, de) in self.e.iter_mut().zip(&dir.de) {
            *e += alpha * de;
        }
        for (t, dt) in self.t.iter_mut().zip(&dir.dt) {
            *t += alpha * dt;
        }
        for gi in 0..4 {
            for k in 0..m {
                self.s.0[gi][k] += alpha * dir.ds.0[gi][k];
                self.l.0[gi][k] += alpha * dir.dl.0[gi][k];
            }
        }
        let terms = self.terms;
        terms.apply(&self.e, &mut self.z, true);
        Ok(())
    }
}

/// Solves the estimation program for a full rate matrix.
///
/// Rates outside `[0, 1]` cannot come from real detector outputs; they are
/// clipped into `[0, 1]` (always a feasible system) and the estimate is
/// flagged as not converged.
pub fn estimate_errors_from_rates(rates: &RateMatrix) -> Result<ErrorEstimate> {
    let b = rates.size();
    if b < 2 {
        return Err(CareError::param("error estimation needs at least 2 detectors"));
    }
    let mut diagnostic = None;
    let mut pairs = Vec::with_capacity(b * (b - 1) / 2);
    let mut offset = Vec::with_capacity(pairs.capacity());
    let mut agreement = Vec::with_capacity(pairs.capacity());
    for i in 0..b {
        for j in i + 1..b {
            let a = rates.get(i, j);
            if a.is_nan() {
                return Err(CareError::param(format!("agreement rate ({i}, {j}) is NaN")));
            }
            let clipped = a.clamp(0.0, 1.0);
            if clipped != a && diagnostic.is_none() {
                diagnostic = Some(format!(
                    "agreement rate ({i}, {j}) = {a} outside [0, 1]; rates were clipped"
                ));
            }
            pairs.push((i, j));
            offset.push(0.5 * (clipped - 1.0));
            agreement.push(clipped);
        }
    }
    let terms = Terms { b, pairs, offset };

    let mut solver = Solver::new(&terms);
    let mut iterations = 0;
    let mut kkt = solver.kkt_residual();
    // Rounding puts a floor of roughly 1e-9 under the stationarity
    // residual once the multipliers grow, so stop as soon as both measures
    // are at that level and keep the best iterate seen.
    let mut best = (kkt, solver.e.clone());
    while iterations < MAX_ITERATIONS {
        if solver.complementarity() < 1e-13 && kkt < 1e-8 {
            break;
        }
        if let Err(e) = solver.step() {
            if best.0 > KKT_TOLERANCE {
                return Err(e);
            }
            break;
        }
        iterations += 1;
        kkt = solver.kkt_residual();
        if kkt < best.0 {
            best = (kkt, solver.e.clone());
        }
    }
    let (kkt, e) = best;
    solver.e = e;

    let individual: Vec<f64> = solver.e.iter().map(|e| e.clamp(0.0, 1.0)).collect();
    let mut pairwise = vec![0.0; b * b];
    let mut objective: f64 = individual.iter().map(|&e| term_cost(e)).sum();
    for i in 0..b {
        pairwise[i * b + i] = individual[i];
    }
    for (p, &(i, j)) in terms.pairs.iter().enumerate() {
        let eij = 0.5 * (agreement[p] - 1.0 + individual[i] + individual[j]);
        pairwise[i * b + j] = eij;
        pairwise[j * b + i] = eij;
        objective += term_cost(eij);
    }
    let converged = kkt <= KKT_TOLERANCE && diagnostic.is_none();
    if kkt > KKT_TOLERANCE && diagnostic.is_none() {
        diagnostic = Some(format!("solver stopped with KKT residual {kkt:e}"));
    }
    Ok(ErrorEstimate {
        individual,
        pairwise,
        objective,
        converged,
        iterations,
        kkt_residual: kkt,
        diagnostic,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    fn rates(b: usize, upper: &[f64]) -> RateMatrix {
        RateMatrix::from_upper(b, upper).unwrap()
    }

    fn check_feasible(est: &ErrorEstimate, r: &RateMatrix) {
        let b = r.size();
        for i in 0..b {
            assert!((0.0..=1.0).contains(&est.individual[i]));
            for j in i + 1..b {
                let eij = est.pair(i, j);
                assert!(eij >= -1e-6 && eij <= 1.0 + 1e-6, "e_{i}{j} = {eij}");
                let resid =
                    r.get(i, j) - (1.0 - est.individual[i] - est.individual[j] + 2.0 * eij);
                assert!(resid.abs() <= 1e-8);
            }
        }
    }

    #[test]
    fn perfect_agreement_means_zero_error() {
        let r = rates(2, &[1.0]);
        let est = estimate_errors_from_rates(&r).unwrap();
        assert!(est.converged);
        assert!(est.individual.iter().all(|&e| e < 1e-6), "{:?}", est.individual);
        assert!(est.pair(0, 1).abs() < 1e-6);
        assert!(est.objective < 1e-10);
        let r3 = rates(3, &[1.0, 1.0, 1.0]);
        let est3 = estimate_errors_from_rates(&r3).unwrap();
        assert!(est3.individual.iter().all(|&e| e < 1e-6));
    }

    #[test]
    fn total_disagreement_pair() {
        // a = 0 forces e_1 + e_2 >= 1; by symmetry the minimizer splits it.
        let r = rates(2, &[0.0]);
        let est = estimate_errors_from_rates(&r).unwrap();
        check_feasible(&est, &r);
        assert!((est.individual[0] - est.individual[1]).abs() < 1e-6);
        assert!((est.individual[0] + est.individual[1] - 1.0).abs() < 1e-6);
    }

    #[test]
    fn out_of_range_rates_are_clipped_and_flagged() {
        let r = rates(2, &[1.3]);
        let est = estimate_errors_from_rates(&r).unwrap();
        assert!(!est.converged);
        assert!(est.diagnostic.is_some());
        assert!(estimate_errors_from_rates(&rates(2, &[f64::NAN])).is_err());
    }

    #[test]
    fn large_problem_converges() {
        let b = 100;
        let upper: Vec<f64> = (0..b * (b - 1) / 2)
            .map(|p| 0.5 + 0.45 * ((p as f64) * 0.37).sin())
            .collect();
        let r = rates(b, &upper);
        let est = estimate_errors_from_rates(&r).unwrap();
        assert!(est.converged, "kkt {}", est.kkt_residual);
        check_feasible(&est, &r);
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(48))]

        #[test]
        fn feasible_and_permutation_equivariant(
            upper in prop::collection::vec(0f64..=1.0, 6),
        ) {
            let r = rates(4, &upper);
            let est = estimate_errors_from_rates(&r).unwrap();
            prop_assert!(est.converged);
            check_feasible(&est, &r);

            let perm = [3usize, 1, 0, 2];
            let mut permuted = Vec::new();
            for i in 0..4 {
                for j in i + 1..4 {
                    permuted.push(r.get(perm[i], perm[j]));
                }
            }
            let est_p = estimate_errors_from_rates(&rates(4, &permuted)).unwrap();
            for i in 0..4 {
                prop_assert!((est_p.individual[i] - est.individual[perm[i]]).abs() < 1e-6);
            }
        }
    }
}
