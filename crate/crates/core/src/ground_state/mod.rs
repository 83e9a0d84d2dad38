//! Ground states: projected gradient ascent on every domain, eigenvalue oracles
//! and the finite-temperature bridge.

mod bridge;
mod eigen;

pub use bridge::{gs_bridge_check, BridgeCheck};
pub use eigen::{bipartite_oracle, dense_symmetric_eigenvalues, eigen_oracle_p2, EigenEstimate};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::domain::{DomainSpec, SpinConfiguration};
use crate::error::{Error, Result};
use crate::hamiltonian::Hamiltonian;
use crate::mixture::MixtureSpec;
use crate::rng::{stream, Purpose};
use crate::tensor::SymmetricTensor;

/// Settings for [`solve_gs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GsSolverConfig {
    pub restarts: usize,
    pub max_iters: usize,
    /// Largest trial step, as a fraction of `√N / ‖∇H‖`; later searches start from the Barzilai–Borwein step when smaller.
    pub initial_step: f64,
    /// Step multiplier after a failed trial.
    pub backtrack: f64,
    pub max_backtracks: usize,
    /// Stop once the relative gain per iteration stays below this for three iterations.
    pub tolerance: f64,
    /// Start every restart from the negation of its usual starting point.
    pub negate_starts: bool,
}

impl Default for GsSolverConfig {
    fn default() -> Self {
        Self {
            restarts: 10,
            max_iters: 2000,
            initial_step: 0.1,
            backtrack: 0.5,
            max_backtracks: 40,
            tolerance: 1e-7,
            negate_starts: false,
        }
    }
}

impl GsSolverConfig {
    pub fn validate(&self) -> Result<()> {
        if self.restarts == 0 {
            return Err(Error::Config("restarts must be at least 1".into()));
        }
        if !(self.tolerance > 0.0) {
            return Err(Error::Config("tolerance must be positive".into()));
        }
        if !(self.backtrack > 0.0 && self.backtrack < 1.0) || !(self.initial_step > 0.0) {
            return Err(Error::Config("step schedule needs initial_step > 0 and 0 < backtrack < 1".into()));
        }
        Ok(())
    }
}

/// Best configuration found by [`solve_gs`]. The value is a lower bound on the true supremum.
#[derive(Debug, Clone)]
pub struct GsResult {
    pub value: f64,
    pub argmax: SpinConfiguration,
    pub restart_values: Vec<f64>,
    pub iterations: usize,
    pub converged: bool,
}

impl GsResult {
    pub fn per_site(&self) -> f64 {
        self.value / self.argmax.dim() as f64
    }
}

struct Ascent {
    value: f64,
    x: Vec<f64>,
    iterations: usize,
    converged: bool,
}

fn ascend(h: &Hamiltonian, domain: &DomainSpec, mut x: Vec<f64>, cfg: &GsSolverConfig) -> Result<Ascent> {
    let n = x.len();
    let sqrt_n = (n as f64).sqrt();
    let mut g = vec![0.0; n];
    let mut y = vec![0.0; n];
    let mut v = h.value_and_gradient(&x, &mut g)?;
    let mut quiet = 0;
    let mut last_step: Option<f64> = None;
    let mut prev: Option<(Vec<f64>, Vec<f64>)> = None;
    for it in 0..cfg.max_iters {
        if !v.is_finite() || g.iter().any(|c| !c.is_finite()) {
            return Err(Error::Numeric(format!("non-finite value or gradient at iteration {it}")));
        }
        domain.project_tangent(&x, &mut g);
        let gn = g.iter().map(|c| c * c).sum::<f64>().sqrt();
        if gn == 0.0 {
            return Ok(Ascent { value: v, x, iterations: it, converged: true });
        }
        let cap = cfg.initial_step * sqrt_n / gn;
        // Barzilai–Borwein trial step from the last move, falling back to doubling the last accepted step
        let bb = prev.as_ref().and_then(|(xp, gp)| {
            let (mut ss, mut sy) = (0.0, 0.0);
            for i in 0..n {
                let si = x[i] - xp[i];
                ss += si * si;
                sy += si * (gp[i] - g[i]);
            }
            (sy > 0.0).then(|| ss / sy)
        });
        let mut t = match (bb, last_step) {
            (Some(b), _) => b.min(cap),
            (None, Some(s)) => (2.0 * s).min(cap),
            (None, None) => cap,
        };
        let mut accepted = None;
        for _ in 0..cfg.max_backtracks {
            for ((yi, xi), gi) in y.iter_mut().zip(&x).zip(&g) {
                *yi = xi + t * gi;
            }
            domain.retract(&mut y)?;
            let vy = h.value_unchecked(&y);
            if vy.is_nan() {
                return Err(Error::Numeric(format!("NaN energy at iteration {it}")));
            }
            if vy > v {
                accepted = Some(vy);
                break;
            }
            t *= cfg.backtrack;
        }
        let Some(vy) = accepted else {
            return Ok(Ascent { value: v, x, iterations: it + 1, converged: true });
        };
        last_step = Some(t);
        prev = Some((x.clone(), g.clone()));
        std::mem::swap(&mut x, &mut y);
        let v_new = h.value_and_gradient(&x, &mut g)?;
        let gain = vy - v;
        v = v_new;
        if gain <= cfg.tolerance * v.abs().max(f64::MIN_POSITIVE) {
            quiet += 1;
            if quiet >= 3 {
                return Ok(Ascent { value: v, x, iterations: it + 1, converged: true });
            }
        } else {
            quiet = 0;
        }
    }
    Ok(Ascent { value: v, x, iterations: cfg.max_iters, converged: false })
}

/// Maximizes `h` over `domain` by multi-start projected gradient ascent.
pub fn solve_gs_hamiltonian(h: &Hamiltonian, domain: &DomainSpec, cfg: &GsSolverConfig, seed: u64) -> Result<GsResult> {
    cfg.validate()?;
    let n = h.dim();
    domain.validate(n)?;
    if matches!(domain, DomainSpec::LqSphere { .. }) && h.has_linear_term() {
        return Err(Error::Contract("ℓq ground states require γ_1 = 0".into()));
    }
    let runs: Vec<Ascent> = (0..cfg.restarts)
        .into_par_iter()
        .map(|k| {
            let mut rng = stream(seed, Purpose::Restart, 0, k as u64);
            let mut x0 = domain.sample(n, &mut rng)?;
            if cfg.negate_starts {
                x0.iter_mut().for_each(|c| *c = -*c);
            }
            ascend(h, domain, x0, cfg)
        })
        .collect::<Result<_>>()?;
    let restart_values: Vec<f64> = runs.iter().map(|r| r.value).collect();
    let iterations = runs.iter().map(|r| r.iterations).sum();
    let converged = runs.iter().all(|r| r.converged);
    let best = runs
        .into_iter()
        .reduce(|a, b| if b.value > a.value { b } else { a })
        .expect("at least one restart");
    let value = h.value(&best.x)?;
    Ok(GsResult {
        value,
        argmax: SpinConfiguration::new(best.x, domain.clone())?,
        restart_values,
        iterations,
        converged,
    })
}

/// `GS(J) = sup_σ H(σ)` over `domain`; on product domains the partition's couplings are used.
pub fn solve_gs(
    tensors: &[SymmetricTensor],
    mix: &MixtureSpec,
    domain: &DomainSpec,
    cfg: &GsSolverConfig,
    seed: u64,
) -> Result<GsResult> {
    if matches!(domain, DomainSpec::LqSphere { .. }) && mix.gamma(1) != 0.0 {
        return Err(Error::Contract("ℓq ground states require γ_1 = 0".into()));
    }
    let h = match domain {
        DomainSpec::ProductSpheres(part) => Hamiltonian::multi_species(tensors.to_vec(), part)?,
        _ => Hamiltonian::new(tensors.to_vec(), mix)?,
    };
    solve_gs_hamiltonian(&h, domain, cfg, seed)
}

/// `max(GS(J), GS(-J))`.
pub fn gs_bar(h: &Hamiltonian, domain: &DomainSpec, cfg: &GsSolverConfig, seed: u64) -> Result<f64> {
    let plus = solve_gs_hamiltonian(h, domain, cfg, seed)?.value;
    let minus = solve_gs_hamiltonian(&h.negated(), domain, cfg, seed)?.value;
    Ok(plus.max(minus))
}
