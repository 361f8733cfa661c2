//! Exact linear algebra over the rationals.
//!
//! Two independent elimination routes are provided: reduced row echelon form
//! over [`Rational`] and fraction-free (Bareiss) elimination over integers.
//! The martingale-measure checks use one each so that their agreement means
//! something.

use num_bigint::BigInt;
use num_traits::{One, Zero};

use crate::rational::{denominator_lcm, Rational};

pub type RatMatrix = Vec<Vec<Rational>>;

pub fn zeros(rows: usize, cols: usize) -> RatMatrix {
    vec![vec![Rational::zero(); cols]; rows]
}

/// Reduces `m` in place to reduced row echelon form; returns the pivot columns.
///
/// Pivots are chosen as the first nonzero entry at or below the current row,
/// so the result only depends on the input.
pub fn rref(m: &mut RatMatrix) -> Vec<usize> {
    let rows = m.len();
    let cols = m.first().map_or(0, Vec::len);
    let mut pivots = Vec::new();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !m[i][c].is_zero()) else {
            continue;
        };
        m.swap(r, p);
        let inv = m[r][c].recip();
        if !inv.is_one() {
            for v in m[r][c..].iter_mut() {
                *v *= &inv;
            }
        }
        let pivot_row = m[r].clone();
        let support: Vec<usize> = (c..cols).filter(|&k| !pivot_row[k].is_zero()).collect();
        for (i, row) in m.iter_mut().enumerate() {
            if i == r || row[c].is_zero() {
                continue;
            }
            let factor = row[c].clone();
            for &k in &support {
                let delta = &factor * &pivot_row[k];
                row[k] -= delta;
            }
        }
        pivots.push(c);
        r += 1;
    }
    pivots
}

pub fn rank(m: &RatMatrix) -> usize {
    let mut work = m.clone();
    rref(&mut work).len()
}

/// Basis of `{x : m x = 0}`, one vector per free column (unit in that column).
pub fn nullspace(m: &RatMatrix, cols: usize) -> Vec<Vec<Rational>> {
    let mut work = m.clone();
    let pivots = rref(&mut work);
    let mut is_pivot = vec![false; cols];
    for &p in &pivots {
        is_pivot[p] = true;
    }
    (0..cols)
        .filter(|&c| !is_pivot[c])
        .map(|free| {
            let mut v = vec![Rational::zero(); cols];
            v[free] = Rational::one();
            for (row, &p) in pivots.iter().enumerate() {
                v[p] = -work[row][free].clone();
            }
            v
        })
        .collect()
}

/// Solves `a x = b`; returns a particular solution (free variables zero) or
/// `None` when the system is inconsistent.
pub fn solve_particular(a: &RatMatrix, b: &[Rational]) -> Option<Vec<Rational>> {
    let cols = a.first().map_or(0, Vec::len);
    let mut aug: RatMatrix = a
        .iter()
        .zip(b)
        .map(|(row, rhs)| {
            let mut r = row.clone();
            r.push(rhs.clone());
            r
        })
        .collect();
    let pivots = rref(&mut aug);
    if pivots.last() == Some(&cols) {
        return None;
    }
    let mut x = vec![Rational::zero(); cols];
    for (row, &p) in pivots.iter().enumerate() {
        x[p] = aug[row][cols].clone();
    }
    Some(x)
}

pub fn mat_vec(a: &RatMatrix, x: &[Rational]) -> Vec<Rational> {
    a.iter()
        .map(|row| {
            row.iter()
                .zip(x)
                .filter(|(r, v)| !r.is_zero() && !v.is_zero())
                .fold(Rational::zero(), |acc, (r, v)| acc + r * v)
        })
        .collect()
}

/// Minimum-norm least-squares solution of `a x ≈ b` and its residual `b − a x`.
///
/// The solution lies in the row space of `a`, so when the system is
/// consistent it is the unique minimum-Euclidean-norm exact solution and the
/// residual is zero.
pub fn min_norm_least_squares(a: &RatMatrix, b: &[Rational]) -> (Vec<Rational>, Vec<Rational>) {
    let cols = a.first().map_or(0, Vec::len);
    let mut basis = a.clone();
    let pivots = rref(&mut basis);
    basis.truncate(pivots.len());
    if basis.is_empty() {
        return (vec![Rational::zero(); cols], b.to_vec());
    }
    // a Rᵀ has full column rank; solve the normal equations for the weights.
    let art: RatMatrix = a
        .iter()
        .map(|row| basis.iter().map(|r| dot(row, r)).collect())
        .collect();
    let k = basis.len();
    let mut normal = zeros(k, k);
    let mut rhs = vec![Rational::zero(); k];
    for (row, target) in art.iter().zip(b) {
        for i in 0..k {
            if row[i].is_zero() {
                continue;
            }
            rhs[i] += &row[i] * target;
            for j in 0..k {
                normal[i][j] += &row[i] * &row[j];
            }
        }
    }
    let w = solve_particular(&normal, &rhs).expect("normal equations of a full-rank system are solvable");
    let mut x = vec![Rational::zero(); cols];
    for (wi, r) in w.iter().zip(&basis) {
        for (xc, rc) in x.iter_mut().zip(r) {
            if !rc.is_zero() {
                *xc += wi * rc;
            }
        }
    }
    let fitted = mat_vec(a, &x);
    let residual = b.iter().zip(&fitted).map(|(t, f)| t - f).collect();
    (x, residual)
}

pub fn dot(a: &[Rational], b: &[Rational]) -> Rational {
    a.iter()
        .zip(b)
        .filter(|(x, y)| !x.is_zero() && !y.is_zero())
        .fold(Rational::zero(), |acc, (x, y)| acc + x * y)
}

/// Rank by fraction-free Bareiss elimination on the row-scaled integer matrix.
///
/// Shares no code with [`rref`].
pub fn bareiss_rank(m: &RatMatrix) -> usize {
    let mut a: Vec<Vec<BigInt>> = m
        .iter()
        .map(|row| {
            let l = denominator_lcm(row.iter());
            row.iter()
                .map(|v| (v * Rational::from_integer(l.clone())).to_integer())
                .collect()
        })
        .collect();
    let rows = a.len();
    let cols = a.first().map_or(0, Vec::len);
    let mut prev = BigInt::one();
    let mut r = 0;
    for c in 0..cols {
        if r == rows {
            break;
        }
        let Some(p) = (r..rows).find(|&i| !a[i][c].is_zero()) else {
            continue;
        };
        a.swap(r, p);
        let pivot_row = a[r].clone();
        for row in a.iter_mut().skip(r + 1) {
            let lead = row[c].clone();
            for k in c..cols {
                let num = &pivot_row[c] * &row[k] - &lead * &pivot_row[k];
                debug_assert!((&num % &prev).is_zero(), "Bareiss step must divide exactly");
                row[k] = num / &prev;
            }
        }
        prev = pivot_row[c].clone();
        r += 1;
    }
    r
}
