use rand::Rng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{FeMethod, FreeEnergyEstimate};
use crate::domain::DomainSpec;
use crate::error::{Error, Result};
use crate::ground_state::{solve_gs_hamiltonian, GsSolverConfig};
use crate::hamiltonian::{dot, Hamiltonian};
use crate::mixture::MixtureSpec;
use crate::rng::{stream, Purpose};
use crate::tensor::{for_each_canonical, multiplicity_sorted, SymmetricTensor};

/// When to exchange configurations between neighbouring temperatures.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TemperingMode {
    /// On when `β` exceeds [`tempering_threshold`].
    Auto,
    Always,
    Never,
}

/// Metropolis sampler settings. One sweep is `N/2` pair-rotation proposals.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct GibbsSamplerConfig {
    pub sweeps: usize,
    pub burn_in: usize,
    /// Initial half-width of the rotation angle; adapted during burn-in.
    pub proposal_scale: f64,
    pub target_acceptance: f64,
    pub batches: usize,
    pub tempering: TemperingMode,
    /// Start the colder chains from a ground-state argmax.
    pub warm_start: bool,
    /// Restrict to `‖σ‖_∞ ≤ cap`.
    pub deloc_cap: Option<f64>,
}

impl Default for GibbsSamplerConfig {
    fn default() -> Self {
        Self {
            sweeps: 400,
            burn_in: 100,
            proposal_scale: 0.5,
            target_acceptance: 0.5,
            batches: 20,
            tempering: TemperingMode::Auto,
            warm_start: true,
            deloc_cap: None,
        }
    }
}

impl GibbsSamplerConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sweeps <= self.burn_in {
            return Err(Error::Config(format!(
                "sweeps ({}) must exceed burn_in ({})",
                self.sweeps, self.burn_in
            )));
        }
        if self.batches < 2 || self.sweeps - self.burn_in < self.batches {
            return Err(Error::Config(format!(
                "need at least 2 batches and one recorded sweep per batch, got {} batches over {} sweeps",
                self.batches,
                self.sweeps - self.burn_in
            )));
        }
        if !(self.proposal_scale > 0.0 && self.proposal_scale <= std::f64::consts::PI) {
            return Err(Error::Config(format!("proposal_scale must lie in (0, π], got {}", self.proposal_scale)));
        }
        if !(self.target_acceptance > 0.0 && self.target_acceptance < 1.0) {
            return Err(Error::Config(format!("target_acceptance must lie in (0, 1), got {}", self.target_acceptance)));
        }
        if let Some(c) = self.deloc_cap {
            if !(c >= 1.0) {
                return Err(Error::Config(format!("delocalization cap {c} is below 1 and excludes the whole sphere")));
            }
        }
        Ok(())
    }
}

/// `0` followed by `points` geometrically spaced values from `β/100` to `β`.
pub fn geometric_grid(beta: f64, points: usize) -> Result<Vec<f64>> {
    if !(beta >= 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta must be finite and non-negative, got {beta}")));
    }
    if beta == 0.0 {
        return Ok(vec![0.0]);
    }
    if points == 0 {
        return Err(Error::Config("grid needs at least one positive point".into()));
    }
    let lo = 0.01 * beta;
    let mut g = vec![0.0];
    if points == 1 {
        g.push(beta);
        return Ok(g);
    }
    let ratio = (beta / lo).powf(1.0 / (points - 1) as f64);
    g.extend((0..points).map(|k| lo * ratio.powi(k as i32)));
    *g.last_mut().unwrap() = beta;
    Ok(g)
}

/// `1/√ξ''(1)`, above which plain Metropolis is expected to mix slowly.
pub fn tempering_threshold(mix: &MixtureSpec) -> f64 {
    let d2 = mix.xi_unchecked(1.0, 2);
    if d2 > 0.0 {
        1.0 / d2.sqrt()
    } else {
        f64::INFINITY
    }
}

/// Empirical `ξ''(1)` read off the entries: `γ_p² ≈ c_p² N^{p-1} Σ mult² J² / N^p`.
fn empirical_xi_second(h: &Hamiltonian) -> f64 {
    let n = h.dim();
    let nf = n as f64;
    let mut total = 0.0;
    for t in h.terms() {
        let p = t.order();
        let mut s = 0.0;
        let e = t.tensor.entries();
        for_each_canonical(n, p, |r, idx| {
            let m = multiplicity_sorted(idx) as f64;
            s += m * m * e[r] * e[r];
        });
        let gamma2 = t.coef * t.coef * nf.powi(p as i32 - 1) * s / nf.powi(p as i32);
        total += (p * (p - 1)) as f64 * gamma2;
    }
    total
}

/// Energy evaluation specialised to what the Hamiltonian contains.
enum Model<'a> {
    /// Terms of order at most two plus an optional spike; `ΔH` in `O(1)`, updates in `O(N)`.
    Quadratic {
        a: Option<Vec<f64>>,
        c: Option<Vec<f64>>,
        spike: Option<(f64, usize, &'a [f64])>,
    },
    Generic(&'a Hamiltonian),
}

#[derive(Clone)]
struct State {
    x: Vec<f64>,
    energy: f64,
    /// `A x` for the quadratic model.
    field: Vec<f64>,
    /// `⟨u, x⟩` for the spike.
    overlap: f64,
}

impl<'a> Model<'a> {
    fn new(h: &'a Hamiltonian) -> Result<Self> {
        if h.max_order() > 2 {
            return Ok(Self::Generic(h));
        }
        let n = h.dim();
        let mut a: Option<Vec<f64>> = None;
        let mut c: Option<Vec<f64>> = None;
        for t in h.terms() {
            match t.order() {
                1 => c = Some(t.tensor.entries().iter().map(|v| t.coef * v).collect()),
                2 => a = Some(t.tensor.to_dense_matrix()?.into_iter().map(|v| t.coef * v).collect()),
                _ => {}
            }
        }
        if let Some(a) = &a {
            debug_assert_eq!(a.len(), n * n);
        }
        let spike = h.spike().map(|s| (s.lambda, s.order, s.u.as_slice()));
        Ok(Self::Quadratic { a, c, spike })
    }

    fn state(&self, x: Vec<f64>) -> State {
        let n = x.len();
        match self {
            Self::Quadratic { a, c, spike } => {
                let mut field = Vec::new();
                let mut energy = 0.0;
                if let Some(a) = a {
                    field = (0..n).map(|i| dot(&a[i * n..(i + 1) * n], &x)).collect();
                    energy += dot(&field, &x);
                }
                if let Some(c) = c {
                    energy += dot(c, &x);
                }
                let mut overlap = 0.0;
                if let Some((lambda, p, u)) = spike {
                    overlap = dot(u, &x);
                    energy += spike_energy(*lambda, *p, overlap, n);
                }
                State { x, energy, field, overlap }
            }
            Self::Generic(h) => {
                let energy = h.value_unchecked(&x);
                State { x, energy, field: Vec::new(), overlap: 0.0 }
            }
        }
    }

    /// Energy after rotating coordinates `(i, j)` to `(xi, xj)`.
    fn trial(&self, s: &State, i: usize, j: usize, xi: f64, xj: f64, scratch: &mut Vec<f64>) -> f64 {
        let n = s.x.len();
        match self {
            Self::Quadratic { a, c, spike } => {
                let di = xi - s.x[i];
                let dj = xj - s.x[j];
                let mut de = 0.0;
                if let Some(a) = a {
                    de += 2.0 * (di * s.field[i] + dj * s.field[j])
                        + a[i * n + i] * di * di
                        + 2.0 * a[i * n + j] * di * dj
                        + a[j * n + j] * dj * dj;
                }
                if let Some(c) = c {
                    de += c[i] * di + c[j] * dj;
                }
                if let Some((lambda, p, u)) = spike {
                    let m = s.overlap + u[i] * di + u[j] * dj;
                    de += spike_energy(*lambda, *p, m, n) - spike_energy(*lambda, *p, s.overlap, n);
                }
                s.energy + de
            }
            Self::Generic(h) => {
                scratch.clear();
                scratch.extend_from_slice(&s.x);
                scratch[i] = xi;
                scratch[j] = xj;
                h.value_unchecked(scratch)
            }
        }
    }

    fn accept(&self, s: &mut State, i: usize, j: usize, xi: f64, xj: f64, energy: f64) {
        let n = s.x.len();
        if let Self::Quadratic { a, spike, .. } = self {
            let di = xi - s.x[i];
            let dj = xj - s.x[j];
            if let Some(a) = a {
                let (ri, rj) = (&a[i * n..(i + 1) * n], &a[j * n..(j + 1) * n]);
                for ((f, ai), aj) in s.field.iter_mut().zip(ri).zip(rj) {
                    *f += ai * di + aj * dj;
                }
            }
            if let Some((_, _, u)) = spike {
                s.overlap += u[i] * di + u[j] * dj;
            }
        }
        s.x[i] = xi;
        s.x[j] = xj;
        s.energy = energy;
    }
}

fn spike_energy(lambda: f64, p: usize, overlap: f64, n: usize) -> f64 {
    let nf = n as f64;
    lambda * nf * (overlap / nf).powi(p as i32)
}

/// Pair-rotation moves stay inside each sphere factor.
struct PairPicker {
    species_of: Vec<usize>,
    blocks: Vec<Vec<usize>>,
}

impl PairPicker {
    fn new(domain: &DomainSpec, n: usize) -> Result<Self> {
        match domain {
            DomainSpec::L2Sphere => Ok(Self { species_of: vec![0; n], blocks: vec![(0..n).collect()] }),
            DomainSpec::ProductSpheres(part) => Ok(Self {
                species_of: part.species_of().to_vec(),
                blocks: (0..part.species_count()).map(|s| part.block(s)).collect(),
            }),
            DomainSpec::LqSphere { .. } => Err(Error::Config(
                "the rotation sampler supports the sphere and products of spheres only".into(),
            )),
        }
    }

    fn pick(&self, rng: &mut ChaCha8Rng) -> Option<(usize, usize)> {
        let i = rng.random_range(0..self.species_of.len());
        let block = &self.blocks[self.species_of[i]];
        if block.len() < 2 {
            return None;
        }
        loop {
            let j = block[rng.random_range(0..block.len())];
            if j != i {
                return Some((i, j));
            }
        }
    }
}

struct Chain {
    beta: f64,
    theta: f64,
    rng: ChaCha8Rng,
    rate_sum: f64,
    rate_count: usize,
    energies: Vec<f64>,
}

fn sweep(model: &Model, picker: &PairPicker, chain: &mut Chain, s: &mut State, cap: Option<f64>, scratch: &mut Vec<f64>) -> Result<f64> {
    let n = s.x.len();
    let moves = (n / 2).max(1);
    let mut acc = 0u64;
    for _ in 0..moves {
        let Some((i, j)) = picker.pick(&mut chain.rng) else {
            continue;
        };
        let th: f64 = chain.rng.random_range(-chain.theta..chain.theta);
        let u: f64 = chain.rng.random();
        let (sn, cs) = th.sin_cos();
        let xi = cs * s.x[i] - sn * s.x[j];
        let xj = sn * s.x[i] + cs * s.x[j];
        if let Some(c) = cap {
            if xi.abs() > c || xj.abs() > c {
                continue;
            }
        }
        let e = model.trial(s, i, j, xi, xj, scratch);
        if e.is_nan() {
            return Err(Error::Numeric("NaN energy in Metropolis proposal".into()));
        }
        let log_ratio = chain.beta * (e - s.energy);
        if log_ratio >= 0.0 || u < log_ratio.exp() {
            model.accept(s, i, j, xi, xj, e);
            acc += 1;
        }
    }
    Ok(acc as f64 / moves as f64)
}

/// Rebuild caches from scratch to stop rounding drift.
fn refresh(model: &Model, domain: &DomainSpec, s: &mut State, cap: Option<f64>) -> Result<()> {
    let mut x = std::mem::take(&mut s.x);
    let before = x.clone();
    domain.retract(&mut x)?;
    if let Some(c) = cap {
        if x.iter().any(|v| v.abs() > c) {
            x = before;
        }
    }
    *s = model.state(x);
    if !s.energy.is_finite() {
        return Err(Error::Numeric("non-finite energy in sampler".into()));
    }
    Ok(())
}

fn batch_means_se(xs: &[f64], batches: usize) -> (f64, f64) {
    let n = xs.len();
    let mean = xs.iter().sum::<f64>() / n as f64;
    let size = n / batches;
    let used = size * batches;
    let bm: Vec<f64> = xs[n - used..].chunks(size).map(|c| c.iter().sum::<f64>() / size as f64).collect();
    let bmean = bm.iter().sum::<f64>() / batches as f64;
    let var = bm.iter().map(|v| (v - bmean).powi(2)).sum::<f64>() / (batches - 1) as f64;
    (mean, (var / batches as f64).sqrt())
}

fn trapezoid(grid: &[f64], ys: &[f64]) -> (f64, Vec<f64>) {
    let mut w = vec![0.0; grid.len()];
    for k in 1..grid.len() {
        let h = grid[k] - grid[k - 1];
        w[k - 1] += h / 2.0;
        w[k] += h / 2.0;
    }
    (w.iter().zip(ys).map(|(a, b)| a * b).sum(), w)
}

fn start_point(
    domain: &DomainSpec,
    n: usize,
    cap: Option<f64>,
    rng: &mut ChaCha8Rng,
) -> Result<Vec<f64>> {
    for _ in 0..super::DELOC_MAX_ATTEMPTS {
        let x = domain.sample(n, rng)?;
        if cap.is_none_or(|c| x.iter().all(|v| v.abs() <= c)) {
            return Ok(x);
        }
    }
    Err(Error::Config(format!(
        "no starting point within the delocalization cap {:?} after {} draws",
        cap,
        super::DELOC_MAX_ATTEMPTS
    )))
}

/// Thermodynamic integration of `⟨H⟩_b` over `grid` for an explicit Hamiltonian.
///
/// `threshold` is the inverse temperature above which [`TemperingMode::Auto`] turns tempering on;
/// `None` estimates it from the entries.
pub fn free_energy_ti_hamiltonian(
    h: &Hamiltonian,
    domain: &DomainSpec,
    grid: &[f64],
    cfg: &GibbsSamplerConfig,
    seed: u64,
    threshold: Option<f64>,
) -> Result<FreeEnergyEstimate> {
    cfg.validate()?;
    let n = h.dim();
    domain.validate(n)?;
    if grid.first() != Some(&0.0) {
        return Err(Error::Domain("the integration grid must start at 0".into()));
    }
    if grid.windows(2).any(|w| !(w[1] > w[0])) || grid.iter().any(|b| !b.is_finite()) {
        return Err(Error::Domain("the integration grid must be finite and strictly increasing".into()));
    }
    let beta = *grid.last().unwrap();
    let picker = PairPicker::new(domain, n)?;
    if grid.len() == 1 {
        return Ok(FreeEnergyEstimate {
            value: 0.0,
            std_error: 0.0,
            beta,
            grid: grid.to_vec(),
            mean_energy: vec![0.0],
            acceptance: vec![1.0],
            method: FeMethod::Ti,
            warnings: Vec::new(),
        });
    }
    let model = Model::new(h)?;
    let threshold = threshold.unwrap_or_else(|| {
        let d2 = empirical_xi_second(h);
        if d2 > 0.0 {
            1.0 / d2.sqrt()
        } else {
            f64::INFINITY
        }
    });
    let tempering = match cfg.tempering {
        TemperingMode::Always => true,
        TemperingMode::Never => false,
        TemperingMode::Auto => beta > threshold,
    };
    let cap = cfg.deloc_cap;

    let warm = if cfg.warm_start && beta > threshold {
        let gs_cfg = GsSolverConfig { restarts: 4, ..GsSolverConfig::default() };
        let x = solve_gs_hamiltonian(h, domain, &gs_cfg, stream_seed(seed))?.argmax.into_coords();
        cap.is_none_or(|c| x.iter().all(|v| v.abs() <= c)).then_some(x)
    } else {
        None
    };

    let mut chains: Vec<Chain> = grid
        .iter()
        .enumerate()
        .map(|(k, &b)| Chain {
            beta: b,
            theta: cfg.proposal_scale,
            rng: stream(seed, Purpose::Chain, 0, k as u64),
            rate_sum: 0.0,
            rate_count: 0,
            energies: Vec::with_capacity(cfg.sweeps - cfg.burn_in),
        })
        .collect();
    let mut states: Vec<State> = Vec::with_capacity(grid.len());
    for (k, chain) in chains.iter_mut().enumerate() {
        let x = match &warm {
            Some(w) if grid[k] > threshold => w.clone(),
            _ => start_point(domain, n, cap, &mut chain.rng)?,
        };
        states.push(model.state(x));
    }
    let mut swap_rng = stream(seed, Purpose::Chain, 1, 0);
    let mut swaps_tried = 0u64;
    let mut swaps_done = 0u64;

    for t in 0..cfg.sweeps {
        let burning = t < cfg.burn_in;
        chains
            .par_iter_mut()
            .zip(states.par_iter_mut())
            .map(|(chain, s)| -> Result<()> {
                let mut scratch = Vec::new();
                let rate = sweep(&model, &picker, chain, s, cap, &mut scratch)?;
                if burning {
                    let pi = std::f64::consts::PI;
                    chain.theta = (chain.theta * (rate - cfg.target_acceptance).exp()).clamp(1e-6, pi);
                } else {
                    chain.rate_sum += rate;
                    chain.rate_count += 1;
                }
                if (t + 1) % 10 == 0 {
                    refresh(&model, domain, s, cap)?;
                }
                Ok(())
            })
            .collect::<Result<Vec<()>>>()?;
        if tempering {
            let start = t % 2;
            for k in (start..grid.len() - 1).step_by(2) {
                let (bi, bj) = (chains[k].beta, chains[k + 1].beta);
                let (ei, ej) = (states[k].energy, states[k + 1].energy);
                let log_a = (bi - bj) * (ej - ei);
                let u: f64 = swap_rng.random();
                swaps_tried += 1;
                if log_a >= 0.0 || u < log_a.exp() {
                    states.swap(k, k + 1);
                    swaps_done += 1;
                }
            }
        }
        if !burning {
            for (chain, s) in chains.iter_mut().zip(&states) {
                if !s.energy.is_finite() {
                    return Err(Error::Numeric("non-finite energy in sampler".into()));
                }
                chain.energies.push(s.energy / n as f64);
            }
        }
    }

    let mut warnings = Vec::new();
    let mut means = Vec::with_capacity(grid.len());
    let mut ses = Vec::with_capacity(grid.len());
    let mut acceptance = Vec::with_capacity(grid.len());
    for chain in &chains {
        let (m, se) = batch_means_se(&chain.energies, cfg.batches);
        means.push(m);
        ses.push(se);
        let acc = chain.rate_sum / chain.rate_count.max(1) as f64;
        acceptance.push(acc);
        let pinned = chain.theta >= std::f64::consts::PI;
        if chain.beta > 0.0 && !pinned && !(0.05..=0.95).contains(&acc) {
            warnings.push(format!("acceptance {acc:.3} at beta {} outside [0.05, 0.95]", chain.beta));
        }
    }
    if tempering && swaps_tried > 0 {
        let rate = swaps_done as f64 / swaps_tried as f64;
        if rate < 0.05 {
            warnings.push(format!("replica swap rate {rate:.3} below 0.05"));
        }
    }

    let (integral, w) = trapezoid(grid, &means);
    let mc_var: f64 = w.iter().zip(&ses).map(|(w, s)| (w * s).powi(2)).sum();
    let mut half_idx: Vec<usize> = (0..grid.len()).step_by(2).collect();
    if *half_idx.last().unwrap() != grid.len() - 1 {
        half_idx.push(grid.len() - 1);
    }
    let half_grid: Vec<f64> = half_idx.iter().map(|&k| grid[k]).collect();
    let half_means: Vec<f64> = half_idx.iter().map(|&k| means[k]).collect();
    let (half_integral, _) = trapezoid(&half_grid, &half_means);
    let grid_err = (integral - half_integral).abs();
    let value = integral / beta;
    let std_error = (mc_var + grid_err * grid_err).sqrt() / beta;
    if !value.is_finite() {
        return Err(Error::Numeric("free energy integral is not finite".into()));
    }
    Ok(FreeEnergyEstimate {
        value,
        std_error,
        beta,
        grid: grid.to_vec(),
        mean_energy: means,
        acceptance,
        method: if tempering { FeMethod::Tempering } else { FeMethod::Ti },
        warnings,
    })
}

fn stream_seed(seed: u64) -> u64 {
    crate::rng::derive_seed(seed, &[Purpose::Chain as u64, 2])
}

/// Per-site `F_β/N` of the single-species model by thermodynamic integration over `grid`.
pub fn free_energy_ti(
    tensors: &[SymmetricTensor],
    mix: &MixtureSpec,
    grid: &[f64],
    cfg: &GibbsSamplerConfig,
    seed: u64,
) -> Result<FreeEnergyEstimate> {
    let h = Hamiltonian::new(tensors.to_vec(), mix)?;
    free_energy_ti_hamiltonian(&h, &DomainSpec::L2Sphere, grid, cfg, seed, Some(tempering_threshold(mix)))
}
