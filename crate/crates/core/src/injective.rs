//! Injective norm of a symmetric tensor and its diagonal restriction.

use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::error::{Error, Result};
use crate::rng::{derive_seed, label_tag, stream, Purpose};
use crate::tensor::SymmetricTensor;

const VALUE_TOL: f64 = 1e-10;
const MAX_SWEEPS: usize = 10_000;

/// Best rank-one contraction `⟨T, σ_1 ⊗ … ⊗ σ_p⟩` over unit vectors, and the best with all factors equal.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct InjectiveNorm {
    pub value: f64,
    pub witness: Vec<Vec<f64>>,
    /// `max_σ |⟨T, σ^{⊗p}⟩|` over unit `σ`.
    pub diagonal: f64,
    pub diagonal_witness: Vec<f64>,
    pub converged: bool,
}

impl InjectiveNorm {
    pub fn banach_gap(&self) -> f64 {
        (self.value - self.diagonal).abs()
    }
}

fn unit_vector(n: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    loop {
        let mut v: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
        if normalize(&mut v) {
            return v;
        }
    }
}

fn normalize(v: &mut [f64]) -> bool {
    let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
    if norm == 0.0 || !norm.is_finite() {
        return false;
    }
    v.iter_mut().for_each(|x| *x /= norm);
    true
}

/// Contracts every mode of the dense tensor except `skip` against `factors`.
fn contract_except(dense: &[f64], n: usize, factors: &[Vec<f64>], skip: usize, out: &mut [f64]) {
    let p = factors.len();
    out.iter_mut().for_each(|v| *v = 0.0);
    let mut idx = vec![0usize; p];
    for &t in dense {
        let mut w = t;
        for (k, f) in factors.iter().enumerate() {
            if k != skip {
                w *= f[idx[k]];
            }
        }
        out[idx[skip]] += w;
        for k in (0..p).rev() {
            idx[k] += 1;
            if idx[k] < n {
                break;
            }
            idx[k] = 0;
        }
    }
}

fn product_ascent(dense: &[f64], n: usize, p: usize, rng: &mut ChaCha8Rng) -> (f64, Vec<Vec<f64>>, bool) {
    let mut factors: Vec<Vec<f64>> = (0..p).map(|_| unit_vector(n, rng)).collect();
    let mut v = vec![0.0; n];
    let mut value = f64::NEG_INFINITY;
    for _ in 0..MAX_SWEEPS {
        let mut current = value;
        for k in 0..p {
            contract_except(dense, n, &factors, k, &mut v);
            let norm = v.iter().map(|x| x * x).sum::<f64>().sqrt();
            if norm == 0.0 {
                return (0.0, factors, true);
            }
            factors[k] = v.iter().map(|x| x / norm).collect();
            current = norm;
        }
        let done = (current - value).abs() <= VALUE_TOL * current.abs().max(1.0);
        value = current;
        if done {
            return (value, factors, true);
        }
    }
    (value, factors, false)
}

/// Shifted power iteration for `max ⟨T, σ^{⊗p}⟩` on the unit sphere, doubling the shift whenever a step fails to ascend.
fn diagonal_ascent(t: &SymmetricTensor, rng: &mut ChaCha8Rng) -> (f64, Vec<f64>, bool) {
    let n = t.dim();
    let mut u = unit_vector(n, rng);
    let (mut f, mut g) = t.contract_with_gradient(&u).expect("unit vector matches tensor dimension");
    let mut shift = 0.0f64;
    let scale = t.sup_norm().max(f64::MIN_POSITIVE);
    for _ in 0..MAX_SWEEPS {
        let mut w: Vec<f64> = g.iter().zip(&u).map(|(gi, ui)| gi + shift * ui).collect();
        if !normalize(&mut w) {
            return (f, u, true);
        }
        let (fw, gw) = t.contract_with_gradient(&w).expect("same dimension");
        if fw < f {
            shift = if shift == 0.0 { scale } else { 2.0 * shift };
            continue;
        }
        let step: f64 = w.iter().zip(&u).map(|(a, b)| (a - b) * (a - b)).sum::<f64>().sqrt();
        let done = fw - f <= VALUE_TOL * 1e-2 * fw.abs().max(1.0) && step <= 1e-7;
        u = w;
        f = fw;
        g = gw;
        if done {
            return (f, u, true);
        }
    }
    (f, u, false)
}

/// Alternating maximization over `restarts` random starts, plus the diagonal maximum over `±T`.
pub fn injective_norm(t: &SymmetricTensor, restarts: usize, seed: u64) -> Result<InjectiveNorm> {
    if restarts == 0 {
        return Err(Error::Config("injective norm needs at least one restart".into()));
    }
    let n = t.dim();
    let p = t.order();
    let dense = t.to_dense()?;
    let root = derive_seed(seed, &[label_tag("injective")]);
    let neg = t.neg();
    let runs: Vec<_> = (0..restarts)
        .into_par_iter()
        .map(|r| {
            let mut rng = stream(root, Purpose::Restart, p as u64, r as u64);
            let prod = product_ascent(&dense, n, p, &mut rng);
            let plus = diagonal_ascent(t, &mut rng);
            let minus = diagonal_ascent(&neg, &mut rng);
            (prod, plus, minus)
        })
        .collect();

    let mut best: Option<(f64, Vec<Vec<f64>>)> = None;
    let mut diag: Option<(f64, Vec<f64>)> = None;
    let mut converged = true;
    for ((pv, pw, pc), (fv, fu, fc), (mv, mu, mc)) in runs {
        converged &= pc && fc && mc;
        if best.as_ref().is_none_or(|b| pv > b.0) {
            best = Some((pv, pw));
        }
        for (v, u) in [(fv, fu), (mv, mu)] {
            if diag.as_ref().is_none_or(|d| v > d.0) {
                diag = Some((v, u));
            }
        }
    }
    let (value, witness) = best.expect("at least one restart");
    let (diagonal, diagonal_witness) = diag.expect("at least one restart");
    Ok(InjectiveNorm {
        value,
        witness,
        diagonal,
        diagonal_witness,
        converged,
    })
}
