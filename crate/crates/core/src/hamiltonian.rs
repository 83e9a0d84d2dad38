//! The mixed `p`-spin Hamiltonian and its gradient.

use rand::Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::Serialize;

use crate::domain::{DomainSpec, SpeciesPartition, SpinConfiguration};
use crate::error::{Error, Result};
use crate::mixture::MixtureSpec;
use crate::rng::{Purpose, StreamFamily};
use crate::tensor::{for_each_canonical, multiplicity_sorted, SymmetricTensor};

/// One homogeneous term `coef · ⟨T, σ^{⊗p}⟩`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Term {
    pub coef: f64,
    pub tensor: SymmetricTensor,
}

impl Term {
    pub fn order(&self) -> usize {
        self.tensor.order()
    }
}

/// The rank-one signal `λN(⟨σ,u⟩/N)^p`.
#[derive(Debug, Clone, PartialEq)]
pub(crate) struct Spike {
    pub lambda: f64,
    pub order: usize,
    pub u: Vec<f64>,
}

/// `H(σ) = Σ_p N^{-(p-1)/2} ⟨γ_p J^(p), σ^{⊗p}⟩`, optionally with species couplings and a spike.
#[derive(Debug, Clone, PartialEq)]
pub struct Hamiltonian {
    n: usize,
    terms: Vec<Term>,
    spike: Option<Spike>,
}

fn find_order(tensors: &[SymmetricTensor], p: usize) -> Result<usize> {
    let hits: Vec<usize> = (0..tensors.len()).filter(|&k| tensors[k].order() == p).collect();
    match hits.as_slice() {
        [k] => Ok(*k),
        [] => Err(Error::Shape(format!("no disorder tensor of order {p} supplied"))),
        _ => Err(Error::Shape(format!("more than one disorder tensor of order {p} supplied"))),
    }
}

fn common_dim(tensors: &[SymmetricTensor]) -> Result<usize> {
    let n = tensors
        .first()
        .map(|t| t.dim())
        .ok_or_else(|| Error::Shape("no disorder tensors supplied".into()))?;
    if let Some(t) = tensors.iter().find(|t| t.dim() != n) {
        return Err(Error::Shape(format!("tensor dimensions {n} and {} differ", t.dim())));
    }
    Ok(n)
}

fn normalization(n: usize, p: usize) -> f64 {
    (n as f64).powf(-((p as f64) - 1.0) / 2.0)
}

impl Hamiltonian {
    /// Single-species model. Tensors are matched to active orders of `mix` by their order;
    /// tensors for inactive orders are ignored.
    pub fn new(tensors: Vec<SymmetricTensor>, mix: &MixtureSpec) -> Result<Self> {
        let n = common_dim(&tensors)?;
        let picks = mix
            .active_orders()
            .map(|p| find_order(&tensors, p).map(|k| (p, k)))
            .collect::<Result<Vec<_>>>()?;
        let mut slots: Vec<Option<SymmetricTensor>> = tensors.into_iter().map(Some).collect();
        let terms = picks
            .into_iter()
            .map(|(p, k)| Term {
                coef: mix.gamma(p) * normalization(n, p),
                tensor: slots[k].take().expect("each order picked once"),
            })
            .collect();
        Ok(Self { n, terms, spike: None })
    }

    /// Multi-species model: `Γ^(p)_{s(i_1)..s(i_p)}` multiplies each entry in place of `γ_p`.
    pub fn multi_species(tensors: Vec<SymmetricTensor>, partition: &SpeciesPartition) -> Result<Self> {
        let n = common_dim(&tensors)?;
        if partition.dim() != n {
            return Err(Error::Shape(format!(
                "partition covers {} coordinates but tensors have dimension {n}",
                partition.dim()
            )));
        }
        let species = partition.species_of();
        let mut terms = Vec::new();
        for p in 1..=partition.max_order() {
            let Some(gamma) = partition.coupling(p) else { continue };
            if gamma.entries().iter().all(|&g| g == 0.0) {
                continue;
            }
            let k = find_order(&tensors, p)?;
            let mut sidx = vec![0usize; p];
            let folded = tensors[k].map_indexed(|idx, v| {
                for (s, &i) in sidx.iter_mut().zip(idx) {
                    *s = species[i];
                }
                v * gamma.get(&sidx).expect("species index in range")
            });
            terms.push(Term {
                coef: normalization(n, p),
                tensor: folded,
            });
        }
        Ok(Self { n, terms, spike: None })
    }

    /// Adds `λN(⟨σ,u⟩/N)^order`. A zero `λ` leaves the Hamiltonian untouched.
    pub fn with_spike(mut self, lambda: f64, order: usize, u: Vec<f64>) -> Result<Self> {
        if u.len() != self.n {
            return Err(Error::Shape(format!("spike of length {} in dimension {}", u.len(), self.n)));
        }
        if order == 0 {
            return Err(Error::Shape("spike order must be at least 1".into()));
        }
        if lambda != 0.0 {
            self.spike = Some(Spike { lambda, order, u });
        }
        Ok(self)
    }

    /// The zero Hamiltonian in dimension `n`.
    pub fn zero(n: usize) -> Self {
        Self { n, terms: Vec::new(), spike: None }
    }

    pub fn dim(&self) -> usize {
        self.n
    }

    pub fn max_order(&self) -> usize {
        let t = self.terms.iter().map(|t| t.order()).max().unwrap_or(0);
        t.max(self.spike.as_ref().map_or(0, |s| s.order))
    }

    pub(crate) fn terms(&self) -> &[Term] {
        &self.terms
    }

    pub(crate) fn spike(&self) -> Option<&Spike> {
        self.spike.as_ref()
    }

    /// `c·H`.
    pub fn scaled(&self, c: f64) -> Self {
        let mut h = self.clone();
        for t in &mut h.terms {
            t.coef *= c;
        }
        if let Some(s) = &mut h.spike {
            s.lambda *= c;
        }
        h
    }

    /// `-H`, i.e. the Hamiltonian of `-J`.
    pub fn negated(&self) -> Self {
        self.scaled(-1.0)
    }

    /// Whether every term has even order, so that `H(-σ) = H(σ)`.
    pub fn is_even(&self) -> bool {
        self.terms.iter().all(|t| t.order() % 2 == 0) && self.spike.as_ref().is_none_or(|s| s.order % 2 == 0)
    }

    pub fn has_linear_term(&self) -> bool {
        self.terms.iter().any(|t| t.order() == 1 && t.coef != 0.0)
    }

    fn check(&self, x: &[f64]) -> Result<()> {
        if x.len() != self.n {
            return Err(Error::Shape(format!("configuration of length {} in dimension {}", x.len(), self.n)));
        }
        Ok(())
    }

    /// `H(x)`.
    pub fn value(&self, x: &[f64]) -> Result<f64> {
        self.check(x)?;
        Ok(self.value_unchecked(x))
    }

    pub(crate) fn value_unchecked(&self, x: &[f64]) -> f64 {
        let mut v: f64 = self.terms.iter().map(|t| t.coef * t.tensor.contract_unchecked(x)).sum();
        if let Some(s) = &self.spike {
            v += spike_value(s, x);
        }
        v
    }

    /// `∇H(x)`.
    pub fn gradient(&self, x: &[f64]) -> Result<Vec<f64>> {
        let mut g = vec![0.0; self.n];
        self.value_and_gradient(x, &mut g)?;
        Ok(g)
    }

    /// Writes `∇H(x)` into `g` and returns `H(x)`.
    pub fn value_and_gradient(&self, x: &[f64], g: &mut [f64]) -> Result<f64> {
        self.check(x)?;
        if g.len() != self.n {
            return Err(Error::Shape(format!("gradient buffer of length {}", g.len())));
        }
        g.iter_mut().for_each(|v| *v = 0.0);
        let mut scratch = vec![0.0; self.n];
        let mut total = 0.0;
        for t in &self.terms {
            scratch.iter_mut().for_each(|v| *v = 0.0);
            total += t.coef * t.tensor.contract_grad_into(x, &mut scratch);
            for (gi, si) in g.iter_mut().zip(&scratch) {
                *gi += t.coef * si;
            }
        }
        if let Some(s) = &self.spike {
            let nf = self.n as f64;
            let m = dot(x, &s.u) / nf;
            total += s.lambda * nf * m.powi(s.order as i32);
            let c = s.lambda * s.order as f64 * m.powi(s.order as i32 - 1);
            for (gi, ui) in g.iter_mut().zip(&s.u) {
                *gi += c * ui;
            }
        }
        Ok(total)
    }
}

fn spike_value(s: &Spike, x: &[f64]) -> f64 {
    let nf = x.len() as f64;
    s.lambda * nf * (dot(x, &s.u) / nf).powi(s.order as i32)
}

pub(crate) fn dot(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| x * y).sum()
}

fn build_for(sigma: &SpinConfiguration, tensors: &[SymmetricTensor], mix: &MixtureSpec) -> Result<Hamiltonian> {
    let h = match sigma.domain() {
        DomainSpec::ProductSpheres(part) => Hamiltonian::multi_species(tensors.to_vec(), part)?,
        _ => Hamiltonian::new(tensors.to_vec(), mix)?,
    };
    if h.dim() != sigma.dim() {
        return Err(Error::Shape(format!(
            "configuration of length {} against tensors of dimension {}",
            sigma.dim(),
            h.dim()
        )));
    }
    Ok(h)
}

/// `H_N(σ)`; on product domains the species couplings replace `γ_p`.
pub fn hamiltonian(sigma: &SpinConfiguration, tensors: &[SymmetricTensor], mix: &MixtureSpec) -> Result<f64> {
    build_for(sigma, tensors, mix)?.value(sigma.coords())
}

/// Euclidean gradient of [`hamiltonian`] at `σ`.
pub fn gradient(sigma: &SpinConfiguration, tensors: &[SymmetricTensor], mix: &MixtureSpec) -> Result<Vec<f64>> {
    build_for(sigma, tensors, mix)?.gradient(sigma.coords())
}

/// Empirical `E[H(σ)H(σ')]` over fresh Gaussian disorder against `Nξ(⟨σ,σ'⟩/N)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct CovarianceAudit {
    pub empirical: f64,
    pub predicted: f64,
    pub std_error: f64,
}

pub fn covariance_audit(
    mix: &MixtureSpec,
    sigma: &SpinConfiguration,
    sigma2: &SpinConfiguration,
    samples: usize,
    seed: u64,
) -> Result<CovarianceAudit> {
    if samples == 0 {
        return Err(Error::Domain("covariance audit needs at least one sample".into()));
    }
    let n = sigma.dim();
    if sigma2.dim() != n {
        return Err(Error::Shape("configurations have different lengths".into()));
    }
    let q = sigma.overlap(sigma2);
    let predicted = n as f64 * mix.xi(q.clamp(-1.0, 1.0), 0)?;

    // H(σ) = Σ_r c_r J_r with c_r = γ_p N^{-(p-1)/2} · multiplicity · Πσ; precompute both weight vectors
    let mut w1 = Vec::new();
    let mut w2 = Vec::new();
    let mut scale = Vec::new();
    for p in mix.active_orders() {
        let coef = mix.gamma(p) * normalization(n, p);
        for_each_canonical(n, p, |_, idx| {
            let mult = multiplicity_sorted(idx) as f64;
            let a: f64 = idx.iter().map(|&i| sigma.coords()[i]).product();
            let b: f64 = idx.iter().map(|&i| sigma2.coords()[i]).product();
            w1.push(coef * mult * a);
            w2.push(coef * mult * b);
            scale.push((1.0 / mult).sqrt());
        });
    }
    let family = StreamFamily::new(seed, Purpose::Audit, 0);
    let products: Vec<f64> = (0..samples)
        .into_par_iter()
        .map(|s| {
            let mut rng = family.stream(s as u64);
            let (mut h1, mut h2) = (0.0, 0.0);
            for k in 0..w1.len() {
                let z: f64 = rng.sample(StandardNormal);
                let j = scale[k] * z;
                h1 += w1[k] * j;
                h2 += w2[k] * j;
            }
            h1 * h2
        })
        .collect();
    let m = products.iter().sum::<f64>() / samples as f64;
    let var = if samples > 1 {
        products.iter().map(|v| (v - m).powi(2)).sum::<f64>() / (samples - 1) as f64
    } else {
        0.0
    };
    Ok(CovarianceAudit {
        empirical: m,
        predicted,
        std_error: (var / samples as f64).sqrt(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::{sample_tensor, DisorderSpec};
    use proptest::prelude::*;

    fn brute_force(tensors: &[SymmetricTensor], mix: &MixtureSpec, x: &[f64]) -> f64 {
        let n = x.len();
        let mut total = 0.0;
        for t in tensors {
            let p = t.order();
            let dense = t.to_dense().unwrap();
            let mut s = 0.0;
            for (flat, v) in dense.iter().enumerate() {
                let mut rem = flat;
                let mut prod = 1.0;
                for _ in 0..p {
                    prod *= x[rem % n];
                    rem /= n;
                }
                s += v * prod;
            }
            total += mix.gamma(p) * (n as f64).powf(-((p as f64) - 1.0) / 2.0) * s;
        }
        total
    }

    #[test]
    fn two_by_two_example() {
        let j = SymmetricTensor::from_entries(2, 2, vec![1.0, 0.0, -1.0]).unwrap();
        let mix = MixtureSpec::new(vec![0.0, 1.0]).unwrap();
        let s = SpinConfiguration::on_sphere(vec![2f64.sqrt(), 0.0]).unwrap();
        let v = hamiltonian(&s, &[j], &mix).unwrap();
        assert!((v - 2f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn zero_tensors_give_zero() {
        let mix = MixtureSpec::new(vec![1.0, 1.0, 1.0]).unwrap();
        let ts: Vec<_> = (1..=3).map(|p| SymmetricTensor::zeros(p, 5).unwrap()).collect();
        let s = SpinConfiguration::on_sphere(vec![1.0; 5]).unwrap();
        assert_eq!(hamiltonian(&s, &ts, &mix).unwrap(), 0.0);
        assert!(gradient(&s, &ts, &mix).unwrap().iter().all(|&g| g == 0.0));
    }

    #[test]
    fn linear_term_gradient_is_constant() {
        let mix = MixtureSpec::pure(1, 1.0).unwrap();
        let j = sample_tensor(1, 6, &DisorderSpec::Gaussian, 1).unwrap();
        let h = Hamiltonian::new(vec![j.clone()], &mix).unwrap();
        let g1 = h.gradient(&[1.0; 6]).unwrap();
        let g2 = h.gradient(&[0.5, -2.0, 1.0, 0.0, 3.0, 1.0]).unwrap();
        assert_eq!(g1, j.entries());
        assert_eq!(g1, g2);
    }

    #[test]
    fn missing_order_is_shape_error() {
        let mix = MixtureSpec::new(vec![0.0, 1.0, 1.0]).unwrap();
        let j2 = SymmetricTensor::zeros(2, 4).unwrap();
        assert!(matches!(Hamiltonian::new(vec![j2.clone()], &mix), Err(Error::Shape(_))));
        let j3 = SymmetricTensor::zeros(3, 5).unwrap();
        assert!(matches!(Hamiltonian::new(vec![j2, j3], &mix), Err(Error::Shape(_))));
    }

    #[test]
    fn zero_spike_is_bitwise_identical() {
        let mix = MixtureSpec::pure(2, 1.0).unwrap();
        let j = sample_tensor(2, 30, &DisorderSpec::Gaussian, 3).unwrap();
        let u = sample_tensor(1, 30, &DisorderSpec::Gaussian, 4).unwrap().entries().to_vec();
        let plain = Hamiltonian::new(vec![j.clone()], &mix).unwrap();
        let spiked = Hamiltonian::new(vec![j], &mix).unwrap().with_spike(0.0, 2, u).unwrap();
        let x: Vec<f64> = (0..30).map(|i| (i as f64).sin()).collect();
        assert_eq!(plain.value(&x).unwrap().to_bits(), spiked.value(&x).unwrap().to_bits());
    }

    #[test]
    fn covariance_matches_xi() {
        let mix = MixtureSpec::new(vec![1.0, 1.0]).unwrap();
        let n = 12;
        let a: Vec<f64> = vec![1.0; n];
        let mut b = vec![1.0; n];
        for v in b.iter_mut().take(n / 4) {
            *v = -1.0;
        }
        // overlap 1/2 → predicted N(0.5 + 0.25)
        let s1 = SpinConfiguration::on_sphere(a).unwrap();
        let s2 = SpinConfiguration::on_sphere(b).unwrap();
        let audit = covariance_audit(&mix, &s1, &s2, 40_000, 7).unwrap();
        assert!((audit.predicted - n as f64 * 0.75).abs() < 1e-12);
        assert!((audit.empirical - audit.predicted).abs() < 3.5 * audit.std_error, "{audit:?}");
    }

    proptest! {
        #![proptest_config(ProptestConfig::with_cases(24))]

        #[test]
        fn canonical_matches_brute_force(n in 1usize..=6, seed in 0u64..10_000) {
            let mix = MixtureSpec::new(vec![0.7, 1.0, 0.5, 0.3]).unwrap();
            let ts: Vec<_> = (1..=4).map(|p| sample_tensor(p, n, &DisorderSpec::Gaussian, seed).unwrap()).collect();
            let x: Vec<f64> = (0..n).map(|i| ((seed as f64) * 0.37 + i as f64).cos()).collect();
            let h = Hamiltonian::new(ts.clone(), &mix).unwrap();
            let fast = h.value(&x).unwrap();
            let slow = brute_force(&ts, &mix, &x);
            prop_assert!((fast - slow).abs() <= 1e-10 * slow.abs().max(1.0));
        }

        #[test]
        fn gradient_matches_finite_differences(n in 2usize..=50, seed in 0u64..10_000) {
            let mix = MixtureSpec::new(vec![0.5, 1.0, 0.8]).unwrap();
            let ts: Vec<_> = (1..=3).map(|p| sample_tensor(p, n, &DisorderSpec::Gaussian, seed).unwrap()).collect();
            let h = Hamiltonian::new(ts, &mix).unwrap();
            let x: Vec<f64> = (0..n).map(|i| ((seed as f64) + 1.3 * i as f64).sin()).collect();
            let g = h.gradient(&x).unwrap();
            let step = 1e-5;
            let mut fd = vec![0.0; n];
            for k in 0..n {
                let mut xp = x.clone();
                let mut xm = x.clone();
                xp[k] += step;
                xm[k] -= step;
                fd[k] = (h.value(&xp).unwrap() - h.value(&xm).unwrap()) / (2.0 * step);
            }
            let err: f64 = g.iter().zip(&fd).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = fd.iter().map(|v| v * v).sum::<f64>().sqrt();
            prop_assert!(err <= 1e-5 * norm.max(1e-12));
        }
    }

    #[test]
    fn p2_gradient_is_twice_matrix_product() {
        let n = 20;
        let j = sample_tensor(2, n, &DisorderSpec::Gaussian, 5).unwrap();
        let a = j.to_dense_matrix().unwrap();
        let mix = MixtureSpec::pure(2, 1.0).unwrap();
        let h = Hamiltonian::new(vec![j], &mix).unwrap();
        let x: Vec<f64> = (0..n).map(|i| 1.0 + 0.1 * i as f64).collect();
        let g = h.gradient(&x).unwrap();
        for i in 0..n {
            let ax: f64 = (0..n).map(|k| a[i * n + k] * x[k]).sum();
            assert!((g[i] - 2.0 * ax / (n as f64).sqrt()).abs() < 1e-10);
        }
    }

    #[test]
    fn single_species_partition_reduces_to_plain_model() {
        let n = 15;
        let mix = MixtureSpec::new(vec![0.0, 0.8, 1.3]).unwrap();
        let ts: Vec<_> = (2..=3).map(|p| sample_tensor(p, n, &DisorderSpec::Gaussian, 2).unwrap()).collect();
        let part = SpeciesPartition::contiguous(
            &[n],
            vec![
                None,
                Some(SymmetricTensor::from_entries(2, 1, vec![0.8]).unwrap()),
                Some(SymmetricTensor::from_entries(3, 1, vec![1.3]).unwrap()),
            ],
        )
        .unwrap();
        let a = Hamiltonian::new(ts.clone(), &mix).unwrap();
        let b = Hamiltonian::multi_species(ts, &part).unwrap();
        let x: Vec<f64> = (0..n).map(|i| (i as f64 * 0.7).cos()).collect();
        assert!((a.value(&x).unwrap() - b.value(&x).unwrap()).abs() < 1e-12);
    }
}
