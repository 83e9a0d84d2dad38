//! Finite-temperature free energies under the normalized (probability-measure) convention,
//! and the Lindeberg exchange free energy.

mod lindeberg;
mod sampler;

pub use lindeberg::{exchange_gap, lindeberg_derivatives, lindeberg_free, ExchangeGap, LindebergInstance};
pub use sampler::{
    free_energy_ti, free_energy_ti_hamiltonian, geometric_grid, tempering_threshold, GibbsSamplerConfig, TemperingMode,
};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::Serialize;

use crate::domain::{DomainSpec, SpinConfiguration};
use crate::error::{Error, Result};
use crate::mixture::MixtureSpec;
use crate::rng::{stream, Purpose};

/// How a free energy value was obtained.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "snake_case")]
pub enum FeMethod {
    Ti,
    Tempering,
    AnnealedBound,
}

impl FeMethod {
    pub fn tag(&self) -> &'static str {
        match self {
            Self::Ti => "ti",
            Self::Tempering => "tempering",
            Self::AnnealedBound => "annealed_bound",
        }
    }
}

/// Per-site free energy `F_β/N` with its Monte Carlo error.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FreeEnergyEstimate {
    pub value: f64,
    pub std_error: f64,
    pub beta: f64,
    pub grid: Vec<f64>,
    /// `⟨H⟩_b / N` at each grid point.
    pub mean_energy: Vec<f64>,
    pub acceptance: Vec<f64>,
    pub method: FeMethod,
    pub warnings: Vec<String>,
}

/// `β ξ(1) / 2`, the annealed per-site bound for Gaussian disorder.
pub fn annealed_bound(mix: &MixtureSpec, beta: f64) -> f64 {
    beta * mix.xi_unchecked(1.0, 0) / 2.0
}

/// `σ = √N g/‖g‖` for a standard Gaussian vector `g`.
pub fn sample_uniform_sphere(n: usize, seed: u64) -> Result<SpinConfiguration> {
    if n == 0 {
        return Err(Error::Shape("dimension must be positive".into()));
    }
    let mut rng = stream(seed, Purpose::Sphere, 0, 0);
    sphere_point(n, &mut rng)
}

fn sphere_point<R: Rng>(n: usize, rng: &mut R) -> Result<SpinConfiguration> {
    let g: Vec<f64> = (0..n).map(|_| rng.sample(StandardNormal)).collect();
    SpinConfiguration::projected(g, DomainSpec::L2Sphere)
}

/// Upper bound on rejection-sampling attempts in [`sample_delocalized`].
pub const DELOC_MAX_ATTEMPTS: usize = 1_000_000;

/// Uniform point on `{σ ∈ S_N : ‖σ‖_∞ ≤ cap}` by rejection; also returns the measured acceptance rate.
pub fn sample_delocalized(n: usize, cap: f64, seed: u64) -> Result<(SpinConfiguration, f64)> {
    if n == 0 {
        return Err(Error::Shape("dimension must be positive".into()));
    }
    let mut rng = stream(seed, Purpose::Sphere, 1, 0);
    for attempt in 1..=DELOC_MAX_ATTEMPTS {
        let s = sphere_point(n, &mut rng)?;
        if s.coords().iter().all(|c| c.abs() <= cap) {
            return Ok((s, 1.0 / attempt as f64));
        }
    }
    Err(Error::Config(format!(
        "delocalization cap {cap} accepted 0 of {DELOC_MAX_ATTEMPTS} sphere draws (acceptance < 1e-6)"
    )))
}

/// Default cap `3√(2 log N)`.
pub fn default_deloc_cap(n: usize) -> f64 {
    3.0 * (2.0 * (n as f64).ln()).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn annealed_values() {
        let m = MixtureSpec::pure(2, 1.0).unwrap();
        assert_eq!(annealed_bound(&m, 1.0), 0.5);
        assert_eq!(annealed_bound(&m, 0.0), 0.0);
    }

    #[test]
    fn sphere_points_are_normalized() {
        for seed in 0..5 {
            let s = sample_uniform_sphere(37, seed).unwrap();
            assert!(s.residual() < 1e-12);
        }
    }

    #[test]
    fn vacuous_cap_accepts_first_draw() {
        let (s, acc) = sample_delocalized(50, 50f64.sqrt(), 3).unwrap();
        assert_eq!(acc, 1.0);
        assert!(s.coords().iter().all(|c| c.abs() <= 50f64.sqrt()));
    }

    #[test]
    fn impossible_cap_is_refused() {
        // ‖σ‖_∞ >= 1 on the sphere, so a cap below 1 can never be met
        assert!(matches!(sample_delocalized(10, 0.5, 1), Err(Error::Config(_))));
    }
}
