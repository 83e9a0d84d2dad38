use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::domain::SpeciesPartition;
use crate::error::{Error, Result};
use crate::rng::{stream, Purpose};
use crate::tensor::{sym_matvec_packed, SymmetricTensor};

/// Top eigenvalue estimate with its convergence diagnostics.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct EigenEstimate {
    pub lambda_max: f64,
    pub iterations: usize,
    /// Residual `‖Av - λv‖` of the returned Ritz pair.
    pub residual: f64,
    pub converged: bool,
}

const LANCZOS_SEED: u64 = 0x6c61_6e63_7a6f_7321;

/// Largest eigenvalue of the symmetric completion of an order-2 tensor, by Lanczos
/// with full reorthogonalization. `sup_{‖σ‖²=N} H(σ) = √N λ_max` for the pure 2-spin model.
pub fn eigen_oracle_p2(j2: &SymmetricTensor) -> Result<EigenEstimate> {
    if j2.order() != 2 {
        return Err(Error::Shape(format!("eigen oracle needs an order-2 tensor, got order {}", j2.order())));
    }
    let n = j2.dim();
    let scale = j2.sup_norm().max(f64::MIN_POSITIVE) * n as f64;
    if j2.sup_norm() == 0.0 {
        return Ok(EigenEstimate { lambda_max: 0.0, iterations: 0, residual: 0.0, converged: true });
    }
    let max_k = n.min(1000);
    let mut rng = stream(LANCZOS_SEED, Purpose::Audit, 2, n as u64);
    let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(max_k);
    let mut alpha = Vec::with_capacity(max_k);
    let mut beta: Vec<f64> = Vec::with_capacity(max_k);
    let mut w = vec![0.0; n];
    let mut last = (f64::NAN, f64::INFINITY, vec![1.0]);
    for k in 0..max_k {
        sym_matvec_packed(j2.entries(), &v, &mut w);
        if k > 0 {
            let b = beta[k - 1];
            for (wi, pi) in w.iter_mut().zip(&basis[k - 1]) {
                *wi -= b * pi;
            }
        }
        let a = dot(&w, &v);
        for (wi, vi) in w.iter_mut().zip(&v) {
            *wi -= a * vi;
        }
        alpha.push(a);
        basis.push(v.clone());
        // two passes of Gram–Schmidt against the whole basis
        for _ in 0..2 {
            for q in &basis {
                let c = dot(&w, q);
                for (wi, qi) in w.iter_mut().zip(q) {
                    *wi -= c * qi;
                }
            }
        }
        let b = dot(&w, &w).sqrt();
        let (lam, y) = top_tridiagonal(&alpha, &beta);
        let resid = b * y.last().copied().unwrap_or(0.0).abs();
        last = (lam, resid, y);
        if resid <= 1e-11 * scale || b <= 1e-14 * scale || k + 1 == n {
            return Ok(EigenEstimate {
                lambda_max: lam,
                iterations: k + 1,
                residual: resid,
                converged: true,
            });
        }
        beta.push(b);
        v.iter_mut().zip(&w).for_each(|(vi, wi)| *vi = wi / b);
    }
    Ok(EigenEstimate {
        lambda_max: last.0,
        iterations: max_k,
        residual: last.1,
        converged: false,
    })
}

fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn normalize(v: &mut [f64]) -> f64 {
    let nrm = dot(v, v).sqrt();
    if nrm > 0.0 {
        v.iter_mut().for_each(|x| *x /= nrm);
    }
    nrm
}

/// Number of eigenvalues of the tridiagonal matrix below `x` (Sturm sequence).
fn sturm_count(alpha: &[f64], beta: &[f64], x: f64) -> usize {
    let mut count = 0;
    let mut d = 1.0;
    for i in 0..alpha.len() {
        let off = if i == 0 { 0.0 } else { beta[i - 1] * beta[i - 1] };
        d = alpha[i] - x - if i == 0 { 0.0 } else { off / d };
        if d == 0.0 {
            d = -f64::EPSILON * (alpha[i].abs() + x.abs()).max(f64::MIN_POSITIVE);
        }
        if d < 0.0 {
            count += 1;
        }
    }
    count
}

/// Largest eigenvalue and unit eigenvector of the tridiagonal matrix with diagonal `alpha`
/// and off-diagonal `beta`.
fn top_tridiagonal(alpha: &[f64], beta: &[f64]) -> (f64, Vec<f64>) {
    let k = alpha.len();
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..k {
        let r = if i > 0 { beta[i - 1].abs() } else { 0.0 } + if i + 1 < k { beta[i].abs() } else { 0.0 };
        lo = lo.min(alpha[i] - r);
        hi = hi.max(alpha[i] + r);
    }
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if sturm_count(alpha, &beta[..k.saturating_sub(1)], mid) >= k {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    let lam = 0.5 * (lo + hi);
    (lam, tridiagonal_eigvec(alpha, beta, lam))
}

/// Inverse iteration for the eigenvector at `lam`.
fn tridiagonal_eigvec(alpha: &[f64], beta: &[f64], lam: f64) -> Vec<f64> {
    let k = alpha.len();
    if k == 1 {
        return vec![1.0];
    }
    let span = alpha.iter().fold(0.0f64, |m, a| m.max(a.abs())) + beta.iter().fold(0.0f64, |m, b| m.max(b.abs()));
    let shift = lam + 1e-10 * span.max(f64::MIN_POSITIVE);
    let mut y = vec![1.0; k];
    for _ in 0..3 {
        y = solve_tridiagonal(alpha, &beta[..k - 1], shift, &y);
        normalize(&mut y);
    }
    y
}

/// Solves `(T - s I) z = rhs` by Gaussian elimination with partial pivoting.
fn solve_tridiagonal(alpha: &[f64], beta: &[f64], s: f64, rhs: &[f64]) -> Vec<f64> {
    let k = alpha.len();
    // banded LU with one extra super-diagonal from pivoting
    let mut d: Vec<f64> = alpha.iter().map(|a| a - s).collect();
    let mut up: Vec<f64> = beta.to_vec();
    up.push(0.0);
    let mut up2 = vec![0.0; k];
    let mut lower: Vec<f64> = beta.to_vec();
    let mut b = rhs.to_vec();
    for i in 0..k - 1 {
        if lower[i].abs() > d[i].abs() {
            // swap rows i and i+1
            let (ri_d, ri_u, ri_u2, ri_b) = (d[i], up[i], up2[i], b[i]);
            d[i] = lower[i];
            up[i] = d[i + 1];
            up2[i] = up[i + 1];
            b[i] = b[i + 1];
            lower[i] = ri_d;
            d[i + 1] = ri_u;
            up[i + 1] = ri_u2;
            b[i + 1] = ri_b;
        }
        let piv = if d[i] == 0.0 { f64::MIN_POSITIVE } else { d[i] };
        let m = lower[i] / piv;
        d[i + 1] -= m * up[i];
        up[i + 1] -= m * up2[i];
        b[i + 1] -= m * b[i];
    }
    let mut z = vec![0.0; k];
    for i in (0..k).rev() {
        let mut acc = b[i];
        if i + 1 < k {
            acc -= up[i] * z[i + 1];
        }
        if i + 2 < k {
            acc -= up2[i] * z[i + 2];
        }
        let piv = if d[i] == 0.0 { f64::MIN_POSITIVE } else { d[i] };
        z[i] = acc / piv;
    }
    z
}

/// All eigenvalues of a dense symmetric matrix (row-major) by cyclic Jacobi rotations, ascending.
pub fn dense_symmetric_eigenvalues(n: usize, m: &[f64]) -> Result<Vec<f64>> {
    if m.len() != n * n {
        return Err(Error::Shape(format!("{} entries for a {n}x{n} matrix", m.len())));
    }
    let mut a = m.to_vec();
    for _sweep in 0..100 {
        let off: f64 = (0..n).flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j].powi(2))
            .sum();
        let diag: f64 = (0..n).map(|i| a[i * n + i].powi(2)).sum();
        if off <= 1e-30 * diag.max(f64::MIN_POSITIVE) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + (theta * theta + 1.0).sqrt());
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / (t * t + 1.0).sqrt();
                let s = t * c;
                for k in 0..n {
                    let akp = a[k * n + p];
                    let akq = a[k * n + q];
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let apk = a[p * n + k];
                    let aqk = a[q * n + k];
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
            }
        }
    }
    let mut ev: Vec<f64> = (0..n).map(|i| a[i * n + i]).collect();
    ev.sort_by(|x, y| x.total_cmp(y));
    Ok(ev)
}

/// Ground state of the two-species 2-spin model whose only coupling is `γ_{12}`:
/// `2γ_{12} √(λ_1 λ_2) √N s_max(B)` with `B` the off-diagonal block, `s_max` found by
/// alternating power iteration.
pub fn bipartite_oracle(j2: &SymmetricTensor, partition: &SpeciesPartition) -> Result<EigenEstimate> {
    if j2.order() != 2 || partition.species_count() != 2 || partition.dim() != j2.dim() {
        return Err(Error::Shape("bipartite oracle needs an order-2 tensor and two species".into()));
    }
    let gamma = partition
        .coupling(2)
        .ok_or_else(|| Error::Config("no order-2 species couplings".into()))?;
    if gamma.get(&[0, 0])? != 0.0 || gamma.get(&[1, 1])? != 0.0 {
        return Err(Error::Config("bipartite oracle needs vanishing within-species couplings".into()));
    }
    if (1..=partition.max_order()).any(|p| p != 2 && partition.coupling(p).is_some_and(|g| g.sup_norm() > 0.0)) {
        return Err(Error::Config("bipartite oracle needs a pure 2-spin coupling".into()));
    }
    let g12 = gamma.get(&[0, 1])?;
    let rows = partition.block(0);
    let cols = partition.block(1);
    let b: Vec<f64> = rows
        .iter()
        .flat_map(|&i| cols.iter().map(move |&c| (i, c)))
        .map(|(i, c)| j2.get(&[i, c]).expect("in range"))
        .collect();
    let (nr, nc) = (rows.len(), cols.len());
    let mut rng = stream(LANCZOS_SEED, Purpose::Audit, 12, j2.dim() as u64);
    let mut v: Vec<f64> = (0..nc).map(|_| rng.sample(StandardNormal)).collect();
    normalize(&mut v);
    let mut u = vec![0.0; nr];
    let mut s = 0.0;
    let max_iters = 200_000;
    for it in 0..max_iters {
        for (r, ur) in u.iter_mut().enumerate() {
            *ur = dot(&b[r * nc..(r + 1) * nc], &v);
        }
        normalize(&mut u);
        v.iter_mut().for_each(|x| *x = 0.0);
        for (r, ur) in u.iter().enumerate() {
            for (vc, bc) in v.iter_mut().zip(&b[r * nc..(r + 1) * nc]) {
                *vc += ur * bc;
            }
        }
        let s_new = normalize(&mut v);
        // residual of the singular pair: ‖B v - s u‖
        let mut resid = 0.0;
        for (r, ur) in u.iter().enumerate() {
            let bv = dot(&b[r * nc..(r + 1) * nc], &v);
            resid += (bv - s_new * ur).powi(2);
        }
        let resid = resid.sqrt();
        let done = (s_new - s).abs() <= 1e-15 * s_new && resid <= 1e-7 * s_new;
        s = s_new;
        if done || resid <= 1e-10 * s_new {
            let l = partition.lambdas();
            let factor = 2.0 * g12 * (l[0] * l[1]).sqrt() * (j2.dim() as f64).sqrt();
            return Ok(EigenEstimate {
                lambda_max: factor * s,
                iterations: it + 1,
                residual: factor * resid,
                converged: true,
            });
        }
    }
    let l = partition.lambdas();
    let factor = 2.0 * g12 * (l[0] * l[1]).sqrt() * (j2.dim() as f64).sqrt();
    Ok(EigenEstimate {
        lambda_max: factor * s,
        iterations: max_iters,
        residual: f64::NAN,
        converged: false,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::{sample_tensor, DisorderSpec};

    #[test]
    fn identity_and_diagonal() {
        let id = SymmetricTensor::from_fn(2, 5, |i| if i[0] == i[1] { 1.0 } else { 0.0 }).unwrap();
        assert!((eigen_oracle_p2(&id).unwrap().lambda_max - 1.0).abs() < 1e-12);
        let d = SymmetricTensor::from_entries(2, 2, vec![1.0, 0.0, -1.0]).unwrap();
        let e = eigen_oracle_p2(&d).unwrap();
        assert!((e.lambda_max - 1.0).abs() < 1e-12);
        assert!((2f64.sqrt() * e.lambda_max - 2f64.sqrt()).abs() < 1e-12);
    }

    #[test]
    fn matches_dense_jacobi() {
        for (n, seed) in [(30, 1), (90, 2), (200, 3)] {
            let j = sample_tensor(2, n, &DisorderSpec::Gaussian, seed).unwrap();
            let dense = dense_symmetric_eigenvalues(n, &j.to_dense_matrix().unwrap()).unwrap();
            let top = *dense.last().unwrap();
            let e = eigen_oracle_p2(&j).unwrap();
            assert!(e.converged);
            assert!((e.lambda_max - top).abs() <= 1e-6 * top.abs(), "n={n}: {} vs {top}", e.lambda_max);
        }
    }

    #[test]
    fn jacobi_on_known_matrix() {
        // [[2,1],[1,2]] has eigenvalues 1 and 3
        let ev = dense_symmetric_eigenvalues(2, &[2.0, 1.0, 1.0, 2.0]).unwrap();
        assert!((ev[0] - 1.0).abs() < 1e-14 && (ev[1] - 3.0).abs() < 1e-14);
    }

    #[test]
    fn tridiagonal_solver_inverts() {
        let alpha = [4.0, -1.0, 2.5, 0.3];
        let beta = [1.0, 3.0, -0.7];
        let rhs = [1.0, 2.0, -1.0, 0.5];
        let z = solve_tridiagonal(&alpha, &beta, 0.2, &rhs);
        for i in 0..4 {
            let mut acc = (alpha[i] - 0.2) * z[i];
            if i > 0 {
                acc += beta[i - 1] * z[i - 1];
            }
            if i < 3 {
                acc += beta[i] * z[i + 1];
            }
            assert!((acc - rhs[i]).abs() < 1e-12);
        }
    }
}
