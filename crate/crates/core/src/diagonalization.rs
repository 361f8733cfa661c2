//! Covariation measures on predictable cells and their deterministic
//! diagonalization.
//!
//! A cell is the step out of one non-leaf node. Per cell we form the exact
//! matrix `Γ_ij = Σ_c Q(c) ΔM^i(c) ΔM^j(c)`, normalize by its trace `Λ` to get
//! `C`, and split `C = Bᵀ D B` with a fixed selection rule so that rotating
//! the assets by `B` yields orthogonal martingales `N^k`.

use num_traits::{Signed, Zero};
use rayon::prelude::*;
use serde_json::{json, Value};
use thiserror::Error;

use crate::io;
use crate::linalg::{self, RatMatrix};
use crate::rational::{self, Rational};
use crate::tree::{AdaptedProcess, MeasureVector, NodeId, PredictableProcess, ScenarioTree, StoppingTime};

pub const EIGEN_TOLERANCE: f64 = 1e-12;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum DiagError {
    #[error("matrix is not symmetric (entry ({row}, {col}) differs by {gap:e})")]
    NotSymmetric { row: usize, col: usize, gap: f64 },
    #[error("matrix is not positive semidefinite (eigenvalue {eigenvalue:e}{})", .node.as_ref().map(|n| format!(" at node {n}")).unwrap_or_default())]
    NotPSD { node: Option<String>, eigenvalue: f64 },
    #[error("dimension mismatch: {0}")]
    Dimension(String),
}

/// Symmetric eigendecomposition by cyclic Jacobi rotations.
///
/// Returns eigenvalues and the matching eigenvectors (as rows), unsorted.
pub fn jacobi_eigen(m: &[Vec<f64>]) -> (Vec<f64>, Vec<Vec<f64>>) {
    let n = m.len();
    let mut a: Vec<Vec<f64>> = m.to_vec();
    let mut v: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| f64::from(u8::from(i == j))).collect()).collect();
    let scale: f64 = a.iter().flatten().map(|x| x * x).sum::<f64>().sqrt();
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i][j] * a[i][j])
            .sum::<f64>()
            .sqrt();
        if off <= f64::EPSILON * 1e-3 * scale || off == 0.0 {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p][q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q][q] - a[p][p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k][p];
                    let akq = a[k][q];
                    a[k][p] = c * akp - s * akq;
                    a[k][q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p][k];
                    let aqk = a[q][k];
                    a[p][k] = c * apk - s * aqk;
                    a[q][k] = s * apk + c * aqk;
                }
                for row in v.iter_mut() {
                    let vp = row[p];
                    let vq = row[q];
                    row[p] = c * vp - s * vq;
                    row[q] = s * vp + c * vq;
                }
            }
        }
    }
    let values = (0..n).map(|i| a[i][i]).collect();
    let vectors = (0..n).map(|j| (0..n).map(|i| v[i][j]).collect()).collect();
    (values, vectors)
}

fn fix_sign(v: &mut [f64]) {
    if let Some(first) = v.iter().find(|x| x.abs() > EIGEN_TOLERANCE) {
        if *first < 0.0 {
            v.iter_mut().for_each(|x| *x = -*x);
        }
    }
}

fn lex_desc(a: &[f64], b: &[f64]) -> std::cmp::Ordering {
    b.iter()
        .zip(a)
        .map(|(x, y)| x.total_cmp(y))
        .find(|o| o.is_ne())
        .unwrap_or(std::cmp::Ordering::Equal)
}

/// Deterministic `C = Bᵀ D B` with rows of `B` orthonormal.
///
/// Eigenvalues are sorted in descending order; runs of eigenvalues within
/// `1e−12` of each other are ordered by descending lexicographic eigenvector.
/// Each row of `B` has its first component above `1e−12` in magnitude positive.
#[derive(Debug, Clone, PartialEq)]
pub struct EigenSelection {
    pub b: Vec<Vec<f64>>,
    pub d: Vec<f64>,
}

pub fn eigen_select(c: &[Vec<f64>]) -> Result<EigenSelection, DiagError> {
    let n = c.len();
    for (i, row) in c.iter().enumerate() {
        if row.len() != n {
            return Err(DiagError::Dimension(format!("row {i} has {} entries, expected {n}", row.len())));
        }
        for j in 0..i {
            let gap = (row[j] - c[j][i]).abs();
            if gap > EIGEN_TOLERANCE || !gap.is_finite() {
                return Err(DiagError::NotSymmetric { row: i, col: j, gap });
            }
        }
    }
    let sym: Vec<Vec<f64>> = (0..n).map(|i| (0..n).map(|j| 0.5 * (c[i][j] + c[j][i])).collect()).collect();
    let (values, vectors) = jacobi_eigen(&sym);
    if let Some(&worst) = values.iter().filter(|&&l| l < -EIGEN_TOLERANCE).min_by(|a, b| a.total_cmp(b)) {
        return Err(DiagError::NotPSD { node: None, eigenvalue: worst });
    }
    let mut pairs: Vec<(f64, Vec<f64>)> = values
        .into_iter()
        .zip(vectors)
        .map(|(l, mut v)| {
            fix_sign(&mut v);
            (if l < 0.0 { 0.0 } else { l }, v)
        })
        .collect();
    pairs.sort_by(|a, b| b.0.total_cmp(&a.0).then_with(|| lex_desc(&a.1, &b.1)));
    let mut start = 0;
    while start < pairs.len() {
        let mut end = start + 1;
        while end < pairs.len() && pairs[end - 1].0 - pairs[end].0 <= EIGEN_TOLERANCE {
            end += 1;
        }
        pairs[start..end].sort_by(|a, b| lex_desc(&a.1, &b.1));
        start = end;
    }
    let (d, b) = pairs.into_iter().unzip();
    Ok(EigenSelection { b, d })
}

#[derive(Debug, Clone, PartialEq)]
pub struct GammaCell {
    pub node: NodeId,
    pub gamma: RatMatrix,
    pub lambda: Rational,
}

fn determinant(m: &RatMatrix) -> Rational {
    let n = m.len();
    let mut a = m.clone();
    let mut det = Rational::from_integer(1.into());
    for c in 0..n {
        let Some(p) = (c..n).find(|&r| !a[r][c].is_zero()) else {
            return Rational::zero();
        };
        if p != c {
            a.swap(p, c);
            det = -det;
        }
        det *= &a[c][c];
        for r in c + 1..n {
            if a[r][c].is_zero() {
                continue;
            }
            let f = &a[r][c] / &a[c][c];
            for k in c..n {
                let delta = &f * &a[c][k];
                a[r][k] -= delta;
            }
        }
    }
    det
}

fn assert_psd(gamma: &RatMatrix) {
    let d = gamma.len();
    if d <= 3 {
        for mask in 1u32..(1 << d) {
            let idx: Vec<usize> = (0..d).filter(|i| mask & (1 << i) != 0).collect();
            let minor: RatMatrix = idx.iter().map(|&i| idx.iter().map(|&j| gamma[i][j].clone()).collect()).collect();
            assert!(!determinant(&minor).is_negative(), "covariation matrix has a negative principal minor");
        }
    } else {
        let f: Vec<Vec<f64>> = gamma.iter().map(|r| r.iter().map(rational::to_f64).collect()).collect();
        let scale = f.iter().flatten().fold(0.0f64, |m, x| m.max(x.abs())).max(1.0);
        let (values, _) = jacobi_eigen(&f);
        assert!(values.iter().all(|&l| l >= -1e-9 * scale), "covariation matrix is not PSD");
    }
}

/// Exact `Γ` and `Λ` for every cell, with steps after `τ` excluded.
pub fn gamma_measures(
    tree: &ScenarioTree,
    assets: &[AdaptedProcess],
    tau: &StoppingTime,
    q: &MeasureVector,
) -> Vec<GammaCell> {
    let d = assets.len();
    let mass = q.node_mass(tree);
    let active = tau.active_steps(tree);
    let cells: Vec<NodeId> = tree.non_leaves().collect();
    cells
        .into_par_iter()
        .map(|u| {
            let mut gamma = linalg::zeros(d, d);
            if active[u] {
                for &c in tree.children(u) {
                    let dm: Vec<Rational> = assets.iter().map(|m| &m.values[c] - &m.values[u]).collect();
                    for i in 0..d {
                        if dm[i].is_zero() {
                            continue;
                        }
                        for j in 0..d {
                            gamma[i][j] += &mass[c] * &dm[i] * &dm[j];
                        }
                    }
                }
            }
            assert_psd(&gamma);
            let lambda = (0..d).map(|j| gamma[j][j].clone()).sum();
            GammaCell { node: u, gamma, lambda }
        })
        .collect()
}

/// `C = Γ/Λ` (zero when `Λ = 0`), symmetrized, with eigenvalues in
/// `[−1e−12, 0)` clipped to zero.
pub fn rn_matrix(cell: &GammaCell, tree: &ScenarioTree) -> Result<Vec<Vec<f64>>, DiagError> {
    let d = cell.gamma.len();
    if cell.lambda.is_zero() {
        return Ok(vec![vec![0.0; d]; d]);
    }
    let exact: Vec<Vec<Rational>> = cell.gamma.iter().map(|r| r.iter().map(|g| g / &cell.lambda).collect()).collect();
    debug_assert!(exact.iter().flatten().all(|c| c.abs() <= Rational::from_integer(1.into())));
    let c: Vec<Vec<f64>> = (0..d)
        .map(|i| (0..d).map(|j| 0.5 * (rational::to_f64(&exact[i][j]) + rational::to_f64(&exact[j][i]))).collect())
        .collect();
    let (values, vectors) = jacobi_eigen(&c);
    if let Some(&worst) = values.iter().filter(|&&l| l < -EIGEN_TOLERANCE).min_by(|a, b| a.total_cmp(b)) {
        return Err(DiagError::NotPSD { node: Some(tree.id(cell.node).to_string()), eigenvalue: worst });
    }
    if values.iter().all(|&l| l >= 0.0) {
        return Ok(c);
    }
    let mut rebuilt = vec![vec![0.0; d]; d];
    for (l, v) in values.iter().zip(&vectors) {
        let l = l.max(0.0);
        for i in 0..d {
            for j in 0..d {
                rebuilt[i][j] += l * v[i] * v[j];
            }
        }
    }
    Ok(rebuilt)
}

#[derive(Debug, Clone, PartialEq)]
pub struct CellResiduals {
    /// `max |B Bᵀ − I|`.
    pub rows_orthonormal: f64,
    /// `max |Bᵀ B − I|`.
    pub columns_orthonormal: f64,
    /// `max |(B C Bᵀ)_ik|` over `i ≠ k`, and `max |(B C Bᵀ)_ii − d^i|`.
    pub off_diagonal: f64,
    pub diagonal: f64,
    pub min_eigenvalue: f64,
}

impl CellResiduals {
    pub fn max(&self) -> f64 {
        self.rows_orthonormal
            .max(self.columns_orthonormal)
            .max(self.off_diagonal)
            .max(self.diagonal)
            .max((-self.min_eigenvalue).max(0.0))
    }
}

pub fn cell_residuals(c: &[Vec<f64>], sel: &EigenSelection) -> CellResiduals {
    let n = c.len();
    let b = &sel.b;
    let mut res = CellResiduals {
        rows_orthonormal: 0.0,
        columns_orthonormal: 0.0,
        off_diagonal: 0.0,
        diagonal: 0.0,
        min_eigenvalue: sel.d.iter().copied().fold(f64::INFINITY, f64::min),
    };
    if n == 0 {
        res.min_eigenvalue = 0.0;
        return res;
    }
    for i in 0..n {
        for k in 0..n {
            let delta = f64::from(u8::from(i == k));
            let bbt: f64 = (0..n).map(|j| b[i][j] * b[k][j]).sum();
            let btb: f64 = (0..n).map(|j| b[j][i] * b[j][k]).sum();
            res.rows_orthonormal = res.rows_orthonormal.max((bbt - delta).abs());
            res.columns_orthonormal = res.columns_orthonormal.max((btb - delta).abs());
            let bcb: f64 = (0..n).map(|p| (0..n).map(|q| b[i][p] * c[p][q] * b[k][q]).sum::<f64>()).sum();
            if i == k {
                res.diagonal = res.diagonal.max((bcb - sel.d[i]).abs());
            } else {
                res.off_diagonal = res.off_diagonal.max(bcb.abs());
            }
        }
    }
    res
}

#[derive(Debug, Clone, PartialEq)]
pub struct DiagonalCell {
    pub gamma: GammaCell,
    pub c: Vec<Vec<f64>>,
    pub selection: EigenSelection,
    pub residuals: CellResiduals,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Diagonalization {
    pub dimension: usize,
    /// Indexed by node; `None` on leaves.
    pub cells: Vec<Option<DiagonalCell>>,
}

impl Diagonalization {
    pub fn b_at(&self, u: NodeId) -> &[Vec<f64>] {
        &self.cells[u].as_ref().expect("non-leaf cell").selection.b
    }

    pub fn max_residual(&self) -> f64 {
        self.cells.iter().flatten().map(|c| c.residuals.max()).fold(0.0, f64::max)
    }

    pub fn to_json(&self, tree: &ScenarioTree) -> Value {
        let float_matrix = |m: &[Vec<f64>]| -> Value {
            Value::Array(m.iter().map(|r| Value::Array(r.iter().map(|&x| io::float_value(x)).collect())).collect())
        };
        let cells: Vec<Value> = self
            .cells
            .iter()
            .flatten()
            .map(|cell| {
                json!({
                    "node": tree.id(cell.gamma.node),
                    "gamma": cell.gamma.gamma.iter()
                        .map(|r| r.iter().map(io::rational_value).collect::<Vec<_>>())
                        .collect::<Vec<_>>(),
                    "lambda": io::rational_value(&cell.gamma.lambda),
                    "c": float_matrix(&cell.c),
                    "b": float_matrix(&cell.selection.b),
                    "d": cell.selection.d.iter().map(|&x| io::float_value(x)).collect::<Vec<_>>(),
                    "residuals": {
                        "b_bt_minus_identity": io::float_value(cell.residuals.rows_orthonormal),
                        "bt_b_minus_identity": io::float_value(cell.residuals.columns_orthonormal),
                        "b_c_bt_off_diagonal": io::float_value(cell.residuals.off_diagonal),
                        "b_c_bt_diagonal_gap": io::float_value(cell.residuals.diagonal),
                        "min_d": io::float_value(cell.residuals.min_eigenvalue),
                    },
                })
            })
            .collect();
        json!({ "dimension": self.dimension, "max_residual": io::float_value(self.max_residual()), "cells": cells })
    }
}

/// Runs `Γ → C → (B, D)` on every cell. Cells with `Λ = 0` get `B = I`.
pub fn diagonalize(
    tree: &ScenarioTree,
    assets: &[AdaptedProcess],
    tau: &StoppingTime,
    q: &MeasureVector,
) -> Result<Diagonalization, DiagError> {
    let d = assets.len();
    let gammas = gamma_measures(tree, assets, tau, q);
    let done: Vec<Result<DiagonalCell, DiagError>> = gammas
        .into_par_iter()
        .map(|gamma| {
            let c = rn_matrix(&gamma, tree)?;
            let selection = eigen_select(&c).map_err(|e| match e {
                DiagError::NotPSD { eigenvalue, .. } => {
                    DiagError::NotPSD { node: Some(tree.id(gamma.node).to_string()), eigenvalue }
                }
                other => other,
            })?;
            let residuals = cell_residuals(&c, &selection);
            Ok(DiagonalCell { gamma, c, selection, residuals })
        })
        .collect();
    let mut cells = vec![None; tree.len()];
    for cell in done {
        let cell = cell?;
        let u = cell.gamma.node;
        cells[u] = Some(cell);
    }
    Ok(Diagonalization { dimension: d, cells })
}

/// `N^k = Σ_l ∫ b^{kl} dM^l`.
pub fn orthogonalize(tree: &ScenarioTree, assets: &[AdaptedProcess], diag: &Diagonalization) -> Vec<AdaptedProcess<f64>> {
    let d = assets.len();
    let mut out = vec![AdaptedProcess::new(vec![0.0; tree.len()]); d];
    for u in 1..tree.len() {
        let p = tree.parent(u).expect("non-root");
        let b = diag.b_at(p);
        let dm: Vec<f64> = assets.iter().map(|m| rational::to_f64(&(&m.values[u] - &m.values[p]))).collect();
        for (k, n) in out.iter_mut().enumerate() {
            let step: f64 = (0..d).map(|l| b[k][l] * dm[l]).sum();
            n.values[u] = n.values[p] + step;
        }
    }
    out
}

#[derive(Debug, Clone, PartialEq)]
pub struct OrthogonalityReport {
    pub lhs: f64,
    pub rhs: f64,
    pub gap: f64,
    /// `max_{i≠k} sup_{|h| ≤ 1} |E_Q[∫_0^τ h d[N^i, N^k]]|`.
    pub cross: f64,
}

/// Compares `E_Q[Σ_{i,k} ∫ h^i h^k d[N^i, N^k]]` with `E_Q[Σ_k ∫ (h^k)² d[N^k, N^k]]`.
pub fn verify_orthogonality(
    tree: &ScenarioTree,
    n: &[AdaptedProcess<f64>],
    tau: &StoppingTime,
    q: &[f64],
    h: &[PredictableProcess<f64>],
) -> OrthogonalityReport {
    let d = n.len();
    let active = tau.active_steps(tree);
    let mut mass = vec![0.0; tree.len()];
    for (&l, &m) in tree.leaves().iter().zip(q) {
        mass[l] = m;
    }
    for u in (1..tree.len()).rev() {
        let p = tree.parent(u).expect("non-root");
        mass[p] += mass[u];
    }
    let mut lhs = 0.0;
    let mut rhs = 0.0;
    let mut cross = vec![vec![0.0; d]; d];
    for u in tree.non_leaves().filter(|&u| active[u]) {
        let mut cov = vec![vec![0.0; d]; d];
        for &c in tree.children(u) {
            let dn: Vec<f64> = n.iter().map(|x| x.values[c] - x.values[u]).collect();
            for i in 0..d {
                for k in 0..d {
                    cov[i][k] += mass[c] * dn[i] * dn[k];
                }
            }
        }
        for i in 0..d {
            for k in 0..d {
                lhs += h[i].values[u] * h[k].values[u] * cov[i][k];
                if i == k {
                    rhs += h[k].values[u] * h[k].values[u] * cov[k][k];
                } else {
                    cross[i][k] += cov[i][k].abs();
                }
            }
        }
    }
    let cross = cross.into_iter().flatten().fold(0.0, f64::max);
    OrthogonalityReport { lhs, rhs, gap: (lhs - rhs).abs(), cross }
}

/// `g^k = Σ_j f^j b^{kj}` cell by cell.
pub fn rotate_integrands(
    tree: &ScenarioTree,
    f: &[PredictableProcess<f64>],
    diag: &Diagonalization,
) -> Vec<PredictableProcess<f64>> {
    let d = f.len();
    let mut g = vec![PredictableProcess::new(vec![0.0; tree.len()]); d];
    for u in tree.non_leaves() {
        let b = diag.b_at(u);
        for (k, gk) in g.iter_mut().enumerate() {
            gk.values[u] = (0..d).map(|j| f[j].values[u] * b[k][j]).sum();
        }
    }
    g
}

/// `f^j = Σ_k g^k b^{kj}`, the inverse of [`rotate_integrands`].
pub fn unrotate_integrands(
    tree: &ScenarioTree,
    g: &[PredictableProcess<f64>],
    diag: &Diagonalization,
) -> Vec<PredictableProcess<f64>> {
    let d = g.len();
    let mut f = vec![PredictableProcess::new(vec![0.0; tree.len()]); d];
    for u in tree.non_leaves() {
        let b = diag.b_at(u);
        for (j, fj) in f.iter_mut().enumerate() {
            fj.values[u] = (0..d).map(|k| g[k].values[u] * b[k][j]).sum();
        }
    }
    f
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rational::{frac, int};
    use crate::tree::{stoch_integral, sum_integrals, TreeBuilder};

    fn trinomial() -> ScenarioTree {
        TreeBuilder::new()
            .root("0")
            .child("0", "u", frac(1, 3))
            .child("0", "m", frac(1, 3))
            .child("0", "d", frac(1, 3))
            .build(Some(1))
            .unwrap()
    }

    #[test]
    fn gamma_for_one_asset_is_weighted_sum_of_squares() {
        let tree = trinomial();
        let m = AdaptedProcess::new(vec![int(1), int(2), int(1), frac(1, 2)]);
        let q = MeasureVector::new(vec![frac(1, 6), frac(1, 2), frac(1, 3)]);
        let g = gamma_measures(&tree, &[m], &StoppingTime::horizon(&tree), &q);
        assert_eq!(g.len(), 1);
        // 1/6 · 1 + 1/2 · 0 + 1/3 · 1/4
        assert_eq!(g[0].gamma[0][0], frac(1, 4));
        assert_eq!(g[0].lambda, frac(1, 4));
        assert_eq!(rn_matrix(&g[0], &tree).unwrap(), vec![vec![1.0]]);
    }

    #[test]
    fn identical_assets_give_rank_one_projector() {
        let tree = trinomial();
        let m = AdaptedProcess::new(vec![int(1), int(2), int(1), frac(1, 2)]);
        let q = MeasureVector::new(vec![frac(1, 6), frac(1, 2), frac(1, 3)]);
        let tau = StoppingTime::horizon(&tree);
        let g = gamma_measures(&tree, &[m.clone(), m.clone()], &tau, &q);
        let gamma = frac(1, 4);
        assert_eq!(g[0].gamma, vec![vec![gamma.clone(); 2]; 2]);
        assert_eq!(rn_matrix(&g[0], &tree).unwrap(), vec![vec![0.5; 2]; 2]);
        let zero = gamma_measures(&tree, &[m.clone(), m], &StoppingTime::constant(&tree, 0), &q);
        assert!(zero[0].lambda.is_zero());
        assert_eq!(rn_matrix(&zero[0], &tree).unwrap(), vec![vec![0.0; 2]; 2]);
    }

    #[test]
    fn eigen_select_examples() {
        let id = vec![vec![1.0, 0.0], vec![0.0, 1.0]];
        let s = eigen_select(&id).unwrap();
        assert_eq!(s.b, id);
        assert_eq!(s.d, vec![1.0, 1.0]);

        let zero = vec![vec![0.0; 3]; 3];
        let s = eigen_select(&zero).unwrap();
        assert_eq!(s.d, vec![0.0; 3]);
        assert_eq!(s.b[0], vec![1.0, 0.0, 0.0]);
        assert_eq!(s.b[2], vec![0.0, 0.0, 1.0]);

        let proj = vec![vec![0.5; 2]; 2];
        let s = eigen_select(&proj).unwrap();
        let r = std::f64::consts::FRAC_1_SQRT_2;
        assert!((s.d[0] - 1.0).abs() < 1e-15 && s.d[1].abs() < 1e-15);
        assert!((s.b[0][0] - r).abs() < 1e-15 && (s.b[0][1] - r).abs() < 1e-15);
        assert!((s.b[1][0] - r).abs() < 1e-15 && (s.b[1][1] + r).abs() < 1e-15);
    }

    #[test]
    fn eigen_select_rejects_bad_matrices() {
        assert!(matches!(
            eigen_select(&[vec![1.0, 0.5], vec![0.0, 1.0]]),
            Err(DiagError::NotSymmetric { .. })
        ));
        assert!(matches!(
            eigen_select(&[vec![0.0, 1.0], vec![1.0, 0.0]]),
            Err(DiagError::NotPSD { .. })
        ));
        // tiny negative eigenvalues are clipped
        let s = eigen_select(&[vec![-1e-13]]).unwrap();
        assert_eq!(s.d, vec![0.0]);
    }

    #[test]
    fn eigen_select_is_bitwise_deterministic() {
        let c = vec![vec![0.4, 0.1, 0.05], vec![0.1, 0.35, -0.02], vec![0.05, -0.02, 0.25]];
        let a = eigen_select(&c).unwrap();
        let b = std::thread::spawn(move || eigen_select(&c).unwrap()).join().unwrap();
        assert_eq!(a, b);
        let res = cell_residuals(&[vec![0.4, 0.1, 0.05], vec![0.1, 0.35, -0.02], vec![0.05, -0.02, 0.25]], &a);
        assert!(res.max() < 1e-12);
        assert!(a.d.windows(2).all(|w| w[0] >= w[1]));
    }

    #[test]
    fn rotation_of_collinear_assets() {
        let tree = trinomial();
        let m = AdaptedProcess::new(vec![int(1), int(2), int(1), frac(1, 2)]);
        let q = MeasureVector::new(vec![frac(1, 6), frac(1, 2), frac(1, 3)]);
        let tau = StoppingTime::horizon(&tree);
        let assets = [m.clone(), m.clone()];
        let diag = diagonalize(&tree, &assets, &tau, &q).unwrap();
        let n = orthogonalize(&tree, &assets, &diag);
        let mf = m.to_f64();
        for u in 1..tree.len() {
            let expected = std::f64::consts::SQRT_2 * (mf.values[u] - 1.0);
            assert!((n[0].values[u] - expected).abs() < 1e-12);
            assert!(n[1].values[u].abs() < 1e-12);
        }
        let f = vec![PredictableProcess::new(vec![1.0, 0.0, 0.0, 0.0]); 2];
        let g = rotate_integrands(&tree, &f, &diag);
        assert!((g[0].values[0] - std::f64::consts::SQRT_2).abs() < 1e-15);
        assert!(g[1].values[0].abs() < 1e-15);
        let back = unrotate_integrands(&tree, &g, &diag);
        assert!((back[0].values[0] - 1.0).abs() < 1e-15 && (back[1].values[0] - 1.0).abs() < 1e-15);
        let qf: Vec<f64> = q.leaf_mass.iter().map(rational::to_f64).collect();
        let h = vec![PredictableProcess::new(vec![0.7, 0.0, 0.0, 0.0]); 2];
        let rep = verify_orthogonality(&tree, &n, &tau, &qf, &h);
        assert!(rep.gap < 1e-12 && rep.cross < 1e-12);
    }

    #[test]
    fn identity_rotation_keeps_assets() {
        let tree = trinomial();
        let m1 = AdaptedProcess::new(vec![int(0), int(1), int(0), int(-1)]);
        let m2 = AdaptedProcess::new(vec![int(0), int(0), int(1), int(-1)]);
        let q = MeasureVector::from_tree(&tree);
        let tau = StoppingTime::horizon(&tree);
        // Γ = 1/3 [[2,1],[1,2]]: eigenvectors (1,1)/√2 and (1,−1)/√2
        let diag = diagonalize(&tree, &[m1.clone(), m2.clone()], &tau, &q).unwrap();
        assert!(diag.max_residual() < 1e-12);
        let cell = diag.cells[0].as_ref().unwrap();
        assert!((cell.selection.d[0] - 0.75).abs() < 1e-12);
        assert!((cell.selection.d[1] - 0.25).abs() < 1e-12);
        let n = orthogonalize(&tree, &[m1.clone(), m2.clone()], &diag);
        let f = vec![
            PredictableProcess::new(vec![2.0, 0.0, 0.0, 0.0]),
            PredictableProcess::new(vec![-1.0, 0.0, 0.0, 0.0]),
        ];
        let g = rotate_integrands(&tree, &f, &diag);
        let lhs = sum_integrals(&tree, &f, &[m1.to_f64(), m2.to_f64()]);
        let rhs = sum_integrals(&tree, &g, &n);
        for u in 0..tree.len() {
            assert!((lhs.values[u] - rhs.values[u]).abs() < 1e-12);
        }
        let plain = stoch_integral(&tree, &PredictableProcess::new(vec![1.0, 0.0, 0.0, 0.0]), &n[1]);
        assert!(plain.values.iter().any(|v| v.abs() > 0.1));
    }
}
