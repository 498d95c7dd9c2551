//! Power allocation across subbands that maximizes `Λ`, and with it the mean
//! peak envelope.
//!
//! Maximizing `Λ(η)` over the simplex is the QP
//! `min ½ ηᵀPη + qᵀη  s.t.  Σ η = 1` with `P = 2ααᵀ` and `q = -β`. All
//! quantities here are in multiples of `f1` (so `T0 = mu`), which keeps the
//! matrix entries around `(2π B)²` instead of `(2π B f1)²`; the optimum does
//! not depend on that scaling.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};
use std::f64::consts::PI;
use thiserror::Error;

use crate::analytic::{self, AnalyticError, LambdaFactor};
use crate::config::SystemLayout;
use crate::papr::{self, Campaign, PaprError};

/// Largest simplex grid the oracle will enumerate.
pub const GRID_BUDGET: u64 = 20_000_000;
pub const MAX_GRID_SUBBANDS: usize = 4;

/// Condition threshold below which the KKT matrix is treated as singular.
const KKT_RCOND: f64 = 1e-12;

#[derive(Debug, Error, PartialEq)]
pub enum AllocationError {
    #[error("allocation needs at least 2 subbands, got {0}")]
    TooFewSubbands(usize),
    #[error("this solver handles exactly 2 subbands, got {0}")]
    NotTwoSubbands(usize),
    #[error("degenerate layout: α1 = α2 = {0}")]
    Degenerate(f64),
    #[error("singular KKT system (reciprocal condition {rcond:.3e}); use the grid oracle")]
    SingularKkt { rcond: f64 },
    #[error("grid step must lie in (0, 0.1], got {0}")]
    Step(f64),
    #[error("grid with {points} points over {subbands} subbands exceeds the budget")]
    GridTooLarge { subbands: usize, points: u64 },
    #[error("sweep point η1 = {0} outside (0, 1)")]
    SweepPoint(f64),
    #[error(transparent)]
    Analytic(#[from] AnalyticError),
    #[error(transparent)]
    Papr(#[from] PaprError),
}

#[derive(Debug, Clone, PartialEq)]
pub struct QpProblem {
    pub p: DMatrix<f64>,
    pub q: DVector<f64>,
    /// `α_i` in multiples of `f1`.
    pub alpha: Vec<f64>,
    /// `β_i` in multiples of `f1²`.
    pub beta: Vec<f64>,
    /// `T0` in units of `1 / f1`.
    pub t0: f64,
}

impl QpProblem {
    pub fn dim(&self) -> usize {
        self.alpha.len()
    }

    pub fn objective(&self, eta: &[f64]) -> f64 {
        let e = DVector::from_column_slice(eta);
        0.5 * e.dot(&(&self.p * &e)) + self.q.dot(&e)
    }

    /// `Λ(η) = (T0² / π)(Σ β_i η_i - (Σ α_i η_i)²)`.
    pub fn lambda(&self, eta: &[f64]) -> f64 {
        let (mut l1, mut l2) = (0.0, 0.0);
        for ((a, b), e) in self.alpha.iter().zip(&self.beta).zip(eta) {
            l1 += a * e;
            l2 += b * e;
        }
        self.t0 * self.t0 / PI * (l2 - l1 * l1)
    }
}

pub fn build_qp(layout: &SystemLayout) -> Result<QpProblem, AllocationError> {
    let m = layout.num_subbands();
    if m < 2 {
        return Err(AllocationError::TooFewSubbands(m));
    }
    let f1 = layout.base_spacing_hz;
    let (alpha, beta): (Vec<f64>, Vec<f64>) = (0..m)
        .map(|i| {
            let (a, b) = analytic::subband_moments(layout, i);
            (a / f1, b / (f1 * f1))
        })
        .unzip();
    let a = DVector::from_column_slice(&alpha);
    Ok(QpProblem {
        p: 2.0 * &a * a.transpose(),
        q: -DVector::from_column_slice(&beta),
        alpha,
        beta,
        t0: layout.mu,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    ClosedForm,
    Kkt,
    Grid,
}

#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct Diagnostics {
    /// `‖A x - b‖∞` of the equilibrated KKT system.
    pub residual: Option<f64>,
    /// KKT multiplier `ν*` in the units of the QP objective.
    pub multiplier: Option<f64>,
    /// The stationary point lies outside the open simplex.
    pub boundary: bool,
    pub step: Option<f64>,
    pub evaluations: Option<u64>,
    /// Grid point with the smallest `Λ`.
    pub grid_minimizer: Option<Vec<f64>>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AllocationResult {
    pub eta_star: Vec<f64>,
    pub lambda_at_opt: f64,
    pub method: Method,
    pub diagnostics: Diagnostics,
}

fn outside_open_simplex(eta: &[f64]) -> bool {
    eta.iter().any(|&e| !(e > 0.0 && e < 1.0))
}

/// Stationary point of the two-subband QP.
///
/// A stationary point outside `(0, 1)` is returned as is with
/// `diagnostics.boundary` set.
pub fn solve_closed_form_two(layout: &SystemLayout) -> Result<AllocationResult, AllocationError> {
    if layout.num_subbands() != 2 {
        return Err(AllocationError::NotTwoSubbands(layout.num_subbands()));
    }
    let qp = build_qp(layout)?;
    let (a1, a2) = (qp.alpha[0], qp.alpha[1]);
    let (b1, b2) = (qp.beta[0], qp.beta[1]);
    if (a1 - a2).abs() <= 1e-14 * a1.abs().max(a2.abs()) {
        return Err(AllocationError::Degenerate(a1));
    }
    let eta1 = (b1 - b2 + 2.0 * a2 * a2 - 2.0 * a1 * a2) / (2.0 * (a1 - a2).powi(2));
    let eta2 = (b2 - b1 + 2.0 * a1 * a1 - 2.0 * a1 * a2) / (2.0 * (a1 - a2).powi(2));
    let eta = vec![eta1, eta2];
    Ok(AllocationResult {
        lambda_at_opt: qp.lambda(&eta),
        method: Method::ClosedForm,
        diagnostics: Diagnostics {
            boundary: outside_open_simplex(&eta),
            ..Diagnostics::default()
        },
        eta_star: eta,
    })
}

/// Solves `[[P, 1], [1ᵀ, 0]] [η; ν] = [-q; 1]`.
///
/// `P` and `q` are divided by `max |P_ij|` first so the bordered matrix is
/// well scaled. Singularity is decided from the singular values of that
/// matrix; with `P` of rank one this happens for every `M >= 3`.
pub fn solve_kkt(qp: &QpProblem) -> Result<AllocationResult, AllocationError> {
    let m = qp.dim();
    if m < 2 {
        return Err(AllocationError::TooFewSubbands(m));
    }
    let s = qp.p.amax();
    if !(s > 0.0) {
        return Err(AllocationError::SingularKkt { rcond: 0.0 });
    }
    let mut a = DMatrix::zeros(m + 1, m + 1);
    a.view_mut((0, 0), (m, m)).copy_from(&(&qp.p / s));
    for i in 0..m {
        a[(i, m)] = 1.0;
        a[(m, i)] = 1.0;
    }
    let mut rhs = DVector::zeros(m + 1);
    rhs.rows_mut(0, m).copy_from(&(-&qp.q / s));
    rhs[m] = 1.0;

    let sv = a.singular_values();
    let rcond = sv.min() / sv.max();
    if !(rcond >= KKT_RCOND) {
        return Err(AllocationError::SingularKkt { rcond });
    }
    let sol = a
        .clone()
        .lu()
        .solve(&rhs)
        .ok_or(AllocationError::SingularKkt { rcond })?;
    let residual = (&a * &sol - &rhs).amax();
    let eta: Vec<f64> = sol.rows(0, m).iter().copied().collect();
    Ok(AllocationResult {
        lambda_at_opt: qp.lambda(&eta),
        method: Method::Kkt,
        diagnostics: Diagnostics {
            residual: Some(residual),
            multiplier: Some(sol[m] * s),
            boundary: outside_open_simplex(&eta),
            ..Diagnostics::default()
        },
        eta_star: eta,
    })
}

fn binomial(n: u64, k: u64) -> u64 {
    let k = k.min(n - k);
    (0..k).fold(1u64, |acc, i| acc.saturating_mul(n - i) / (i + 1))
}

/// Calls `visit` on every composition of `total` into `parts` non-negative
/// integers, in lexicographic order.
fn for_each_composition(parts: usize, total: usize, visit: &mut impl FnMut(&[usize])) {
    fn rec(k: &mut Vec<usize>, parts: usize, left: usize, visit: &mut impl FnMut(&[usize])) {
        if k.len() + 1 == parts {
            k.push(left);
            visit(k);
            k.pop();
            return;
        }
        for v in 0..=left {
            k.push(v);
            rec(k, parts, left - v, visit);
            k.pop();
        }
    }
    rec(&mut Vec::with_capacity(parts), parts, total, visit);
}

/// Exhaustive search of `Λ` over the simplex grid `{k / n : Σ k_i = n}` with
/// `n = ceil(1 / step)`, vertices included.
///
/// Ties keep the lexicographically smallest `η`.
pub fn grid_search_oracle(layout: &SystemLayout, step: f64) -> Result<AllocationResult, AllocationError> {
    if !(step > 0.0 && step <= 0.1) {
        return Err(AllocationError::Step(step));
    }
    let m = layout.num_subbands();
    if m == 1 {
        return Ok(AllocationResult {
            eta_star: vec![1.0],
            lambda_at_opt: analytic::lambda_moment_form(layout, &[1.0]),
            method: Method::Grid,
            diagnostics: Diagnostics {
                step: Some(step),
                evaluations: Some(1),
                boundary: true,
                grid_minimizer: Some(vec![1.0]),
                ..Diagnostics::default()
            },
        });
    }
    let n = (1.0 / step - 1e-9).ceil() as usize;
    let points = binomial((n + m - 1) as u64, (m - 1) as u64);
    if m > MAX_GRID_SUBBANDS || points > GRID_BUDGET {
        return Err(AllocationError::GridTooLarge { subbands: m, points });
    }
    let qp = build_qp(layout)?;
    let mut eta = vec![0.0; m];
    let mut best = (f64::NEG_INFINITY, Vec::new());
    let mut worst = (f64::INFINITY, Vec::new());
    let mut count = 0u64;
    for_each_composition(m, n, &mut |k| {
        for (e, &ki) in eta.iter_mut().zip(k) {
            *e = ki as f64 / n as f64;
        }
        let lam = qp.lambda(&eta);
        count += 1;
        if lam > best.0 {
            best = (lam, eta.clone());
        }
        if lam < worst.0 {
            worst = (lam, eta.clone());
        }
    });
    Ok(AllocationResult {
        diagnostics: Diagnostics {
            step: Some(step),
            evaluations: Some(count),
            boundary: outside_open_simplex(&best.1),
            grid_minimizer: Some(worst.1),
            ..Diagnostics::default()
        },
        eta_star: best.1,
        lambda_at_opt: best.0,
        method: Method::Grid,
    })
}

/// Monte Carlo settings attached to a sweep.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SweepMonteCarlo {
    pub trials: u64,
    pub seed: u64,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRow {
    pub eta1: f64,
    pub lambda: f64,
    pub mean_envelope: f64,
    /// Mean of the per-frame PAPR in dB.
    pub mc_mean_papr_db: Option<f64>,
}

/// `Λ` and `E[r]` at `η = (η1, 1 - η1)` for every grid point, optionally with
/// a Monte Carlo mean PAPR. Every point reuses the same seed.
pub fn sweep_mean_envelope(
    layout: &SystemLayout,
    eta1_grid: &[f64],
    mc: Option<SweepMonteCarlo>,
) -> Result<Vec<SweepRow>, AllocationError> {
    if layout.num_subbands() != 2 {
        return Err(AllocationError::NotTwoSubbands(layout.num_subbands()));
    }
    eta1_grid
        .iter()
        .map(|&eta1| {
            if !(eta1 > 0.0 && eta1 < 1.0) {
                return Err(AllocationError::SweepPoint(eta1));
            }
            let powers = [eta1, 1.0 - eta1];
            let lambda = analytic::lambda_factor_at(layout, &powers)?;
            let mean_envelope = analytic::mean_envelope(&lambda)?;
            let mc_mean_papr_db = match mc {
                None => None,
                Some(mc) => {
                    let mut campaign = Campaign::new(&layout.with_powers(&powers), mc.trials, mc.seed);
                    campaign.threads = mc.threads;
                    papr::mean_papr_db(&campaign.run()?)
                }
            };
            Ok(SweepRow {
                eta1,
                lambda: lambda.value(),
                mean_envelope,
                mc_mean_papr_db,
            })
        })
        .collect()
}

/// Evenly spaced `η1` values strictly inside `(0, 1)`: `step, 2 step, ...`.
pub fn interior_grid(step: f64) -> Vec<f64> {
    let n = (1.0 / step - 1e-9).ceil() as usize;
    (1..n).map(|k| k as f64 / n as f64).collect()
}

/// Index of the row with the largest value of `key` (first on ties).
pub fn sweep_argmax(rows: &[SweepRow], key: impl Fn(&SweepRow) -> f64) -> Option<usize> {
    let mut best: Option<(usize, f64)> = None;
    for (i, r) in rows.iter().enumerate() {
        let v = key(r);
        if best.is_none_or(|(_, b)| v > b) {
            best = Some((i, v));
        }
    }
    best.map(|(i, _)| i)
}

/// Mean peak envelope at the allocation's optimum.
pub fn mean_envelope_at(result: &AllocationResult) -> Result<f64, AllocationError> {
    Ok(analytic::mean_envelope(&LambdaFactor::from_value(result.lambda_at_opt))?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::config::{derive_layout, SystemSpec};
    use proptest::prelude::*;

    fn two(n1: usize, r2: i64, n2: usize, guard: f64) -> SystemLayout {
        derive_layout(&SystemSpec::synchronized(&[(1, n1), (r2, n2)], guard)).unwrap()
    }

    #[test]
    fn qp_structure() {
        let l = two(600, 2, 300, 20.0);
        let qp = build_qp(&l).unwrap();
        let (a1, a2) = (qp.alpha[0], qp.alpha[1]);
        let want = 2.0 * DMatrix::from_row_slice(2, 2, &[a1 * a1, a1 * a2, a1 * a2, a2 * a2]);
        assert!((&qp.p - want).amax() < 1e-9);
        let ev = qp.p.clone().symmetric_eigen().eigenvalues;
        let top = ev.amax();
        assert!((top - 2.0 * (a1 * a1 + a2 * a2)).abs() < 1e-9 * top);
        assert!(ev.iter().filter(|e| e.abs() > 1e-9 * top).count() == 1);
    }

    #[test]
    fn objective_matches_lambda() {
        let l = two(600, 2, 300, 20.0);
        let qp = build_qp(&l).unwrap();
        let eta = [0.5, 0.5];
        let lam = analytic::lambda_factor(&l).unwrap().value();
        let obj = qp.objective(&eta);
        assert!((obj + PI / (l.mu * l.mu) * lam).abs() < 1e-10 * obj.abs());
    }

    #[test]
    fn qp_needs_two_subbands() {
        let l = derive_layout(&SystemSpec::synchronized(&[(1, 64)], 0.0)).unwrap();
        assert_eq!(build_qp(&l), Err(AllocationError::TooFewSubbands(1)));
    }

    #[test]
    fn equal_bandwidth_splits_evenly() {
        for guard in [0.0, 20.0, 75.5] {
            let r = solve_closed_form_two(&two(1000, 2, 500, guard)).unwrap();
            assert!((r.eta_star[0] - 0.5).abs() < 1e-12, "{:?}", r.eta_star);
            assert!(!r.diagnostics.boundary);
            let k = solve_kkt(&build_qp(&two(1000, 2, 500, guard)).unwrap()).unwrap();
            assert!((k.eta_star[0] - 0.5).abs() < 1e-12);
            assert!(k.diagnostics.residual.unwrap() < 1e-12);
        }
    }

    #[test]
    fn boundary_solution_flagged() {
        // With non-negative guards the stationary point stays in (1/3, 2/3);
        // overlapping bands of very different width push it out.
        let mut l = two(10, 1, 1000, 0.0);
        l.subbands[1].offset = -485.0;
        let r = solve_closed_form_two(&l).unwrap();
        assert!(r.diagnostics.boundary, "{:?}", r.eta_star);
        assert!((r.eta_star.iter().sum::<f64>() - 1.0).abs() < 1e-12);
    }

    #[test]
    fn valid_two_band_optimum_is_interior() {
        for (n1, r2, n2, g) in [(1, 1, 4000, 0.0), (4000, 4, 1, 0.0), (10, 2, 1000, 300.0)] {
            let e = solve_closed_form_two(&two(n1, r2, n2, g)).unwrap().eta_star[0];
            assert!(e > 1.0 / 3.0 && e < 2.0 / 3.0, "{e}");
        }
    }

    #[test]
    fn kkt_singular_for_three() {
        let l = derive_layout(&SystemSpec::synchronized(&[(1, 100), (2, 50), (4, 20)], 5.0)).unwrap();
        assert!(matches!(
            solve_kkt(&build_qp(&l).unwrap()),
            Err(AllocationError::SingularKkt { .. })
        ));
    }

    #[test]
    fn closed_form_needs_two() {
        let l = derive_layout(&SystemSpec::synchronized(&[(1, 100), (2, 50), (4, 20)], 5.0)).unwrap();
        assert_eq!(solve_closed_form_two(&l), Err(AllocationError::NotTwoSubbands(3)));
    }

    #[test]
    fn grid_matches_closed_form() {
        let l = two(1000, 2, 500, 20.0);
        let c = solve_closed_form_two(&l).unwrap();
        let g = grid_search_oracle(&l, 1e-3).unwrap();
        assert!((c.eta_star[0] - g.eta_star[0]).abs() <= 1e-3);
        assert_eq!(g.diagnostics.evaluations, Some(1001));

        let l = two(600, 2, 300, 20.0);
        let c = solve_closed_form_two(&l).unwrap();
        let g = grid_search_oracle(&l, 1e-3).unwrap();
        assert!((c.eta_star[0] - g.eta_star[0]).abs() <= 1e-3);
    }

    #[test]
    fn grid_minimum_at_vertex() {
        for l in [
            two(600, 2, 300, 20.0),
            derive_layout(&SystemSpec::synchronized(&[(1, 100), (2, 50), (4, 20)], 5.0)).unwrap(),
        ] {
            let g = grid_search_oracle(&l, 0.01).unwrap();
            let min = g.diagnostics.grid_minimizer.unwrap();
            assert_eq!(min.iter().filter(|&&e| e == 1.0).count(), 1, "{min:?}");
        }
    }

    #[test]
    fn grid_edge_cases() {
        let one = derive_layout(&SystemSpec::synchronized(&[(1, 64)], 0.0)).unwrap();
        assert_eq!(grid_search_oracle(&one, 0.05).unwrap().eta_star, vec![1.0]);
        let l = two(100, 2, 50, 0.0);
        assert_eq!(grid_search_oracle(&l, 0.0), Err(AllocationError::Step(0.0)));
        assert_eq!(grid_search_oracle(&l, 0.2), Err(AllocationError::Step(0.2)));
        let four = derive_layout(&SystemSpec::synchronized(&[(1, 64), (2, 32), (4, 16), (8, 8)], 0.0)).unwrap();
        assert!(matches!(
            grid_search_oracle(&four, 1e-3),
            Err(AllocationError::GridTooLarge { subbands: 4, .. })
        ));
        assert!(grid_search_oracle(&four, 0.02).is_ok());
    }

    #[test]
    fn grid_ties_keep_lexicographic_first() {
        let mut out = Vec::new();
        for_each_composition(3, 2, &mut |k| out.push(k.to_vec()));
        let mut sorted = out.clone();
        sorted.sort();
        assert_eq!(out, sorted);
        assert_eq!(out.len(), 6);
        assert_eq!(binomial(1002, 2), 501_501);
    }

    #[test]
    fn sweep_argmax_agrees() {
        let l = two(1000, 2, 500, 20.0);
        let rows = sweep_mean_envelope(&l, &interior_grid(0.01), None).unwrap();
        let a = sweep_argmax(&rows, |r| r.lambda).unwrap();
        let b = sweep_argmax(&rows, |r| r.mean_envelope).unwrap();
        assert_eq!(a, b);
        let c = solve_closed_form_two(&l).unwrap();
        assert!((rows[a].eta1 - c.eta_star[0]).abs() <= 0.01);
        assert!(rows.iter().all(|r| r.mc_mean_papr_db.is_none()));
    }

    #[test]
    fn sweep_symmetric_without_guard() {
        let l = two(1000, 2, 500, 0.0);
        let rows = sweep_mean_envelope(&l, &interior_grid(0.05), None).unwrap();
        let n = rows.len();
        for i in 0..n {
            let (a, b) = (rows[i].lambda, rows[n - 1 - i].lambda);
            assert!((a - b).abs() < 1e-9 * a);
        }
    }

    #[test]
    fn sweep_errors() {
        let l = two(100, 2, 50, 0.0);
        assert_eq!(sweep_mean_envelope(&l, &[0.0], None), Err(AllocationError::SweepPoint(0.0)));
    }

    fn arb_two() -> impl Strategy<Value = SystemLayout> {
        (1usize..2000, 0u32..4, 1usize..2000, 0.0f64..100.0, 0.01f64..0.99).prop_map(
            |(n1, e, n2, guard, eta)| {
                let spec = SystemSpec::synchronized(&[(1, n1), (1 << e, n2)], guard)
                    .with_powers(&[eta, 1.0 - eta]);
                derive_layout(&spec).unwrap()
            },
        )
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(100))]

        #[test]
        fn closed_form_agrees_with_kkt(l in arb_two()) {
            let c = solve_closed_form_two(&l).unwrap();
            let k = solve_kkt(&build_qp(&l).unwrap()).unwrap();
            prop_assert!((c.eta_star[0] - k.eta_star[0]).abs() < 1e-10);
            prop_assert!(k.diagnostics.residual.unwrap() < 1e-10);
        }

        #[test]
        fn objective_consistent_on_simplex(l in arb_two(), eta1 in 0.0f64..=1.0) {
            let qp = build_qp(&l).unwrap();
            let eta = [eta1, 1.0 - eta1];
            let lam = analytic::lambda_moment_form(&l, &eta);
            let obj = qp.objective(&eta);
            let scale = obj.abs().max(PI / (l.mu * l.mu) * lam.abs());
            prop_assert!((obj + PI / (l.mu * l.mu) * lam).abs() <= 1e-10 * scale);
        }
    }
}
