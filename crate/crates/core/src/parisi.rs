//! The Crisanti–Sommers functional over atomic order parameters and the zero-temperature limit.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mixture::MixtureSpec;
use crate::quadrature::{integrate, QuadTol};

/// Right-continuous step function `x(q) = m_i` on `[q_{i-1}, q_i)` with `q_0 = 0`, and `x = 1` on `[q̂, 1]`.
///
/// An empty profile is `x ≡ 1` (`q̂ = 0`).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RSBProfile {
    breakpoints: Vec<f64>,
    values: Vec<f64>,
}

impl RSBProfile {
    pub fn new(breakpoints: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if breakpoints.len() != values.len() {
            return Err(Error::Shape(format!(
                "{} breakpoints against {} values",
                breakpoints.len(),
                values.len()
            )));
        }
        let mut prev = 0.0;
        for &q in &breakpoints {
            if !(q > prev && q < 1.0) {
                return Err(Error::Domain(format!(
                    "breakpoints must increase strictly inside (0, 1), got {breakpoints:?}"
                )));
            }
            prev = q;
        }
        let mut prev = 0.0;
        for &m in &values {
            if !(m >= prev && m <= 1.0) {
                return Err(Error::Domain(format!("values must be non-decreasing in [0, 1], got {values:?}")));
            }
            prev = m;
        }
        Ok(Self { breakpoints, values })
    }

    /// `x ≡ 1`.
    pub fn constant_one() -> Self {
        Self { breakpoints: Vec::new(), values: Vec::new() }
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn atoms(&self) -> usize {
        self.values.len()
    }

    pub fn q_hat(&self) -> f64 {
        self.breakpoints.last().copied().unwrap_or(0.0)
    }

    pub fn x(&self, q: f64) -> f64 {
        self.breakpoints
            .iter()
            .position(|&b| q < b)
            .map_or(1.0, |i| self.values[i])
    }

    /// `x̂(q) = ∫_q^1 x(s) ds`.
    pub fn x_hat(&self, q: f64) -> f64 {
        let q_hat = self.q_hat();
        if q >= q_hat {
            return 1.0 - q;
        }
        let mut acc = 1.0 - q_hat;
        for i in (0..self.breakpoints.len()).rev() {
            let lo = if i == 0 { 0.0 } else { self.breakpoints[i - 1] };
            let hi = self.breakpoints[i];
            if q >= hi {
                break;
            }
            acc += self.values[i] * (hi - q.max(lo));
        }
        acc
    }

    /// Pieces `(lo, hi, m, x̂(hi))` of `[0, q̂)`.
    fn pieces(&self) -> Vec<(f64, f64, f64, f64)> {
        let mut out = Vec::with_capacity(self.breakpoints.len());
        let mut upper = 1.0 - self.q_hat();
        for i in (0..self.breakpoints.len()).rev() {
            let lo = if i == 0 { 0.0 } else { self.breakpoints[i - 1] };
            let hi = self.breakpoints[i];
            out.push((lo, hi, self.values[i], upper));
            upper += self.values[i] * (hi - lo);
        }
        out.reverse();
        out
    }
}

/// `𝒫(x; β²ξ)/β` together with the four summands inside the braces.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct ParisiValue {
    pub value: f64,
    /// `ξ_β'(0) x̂(0)`.
    pub drift: f64,
    /// `∫₀¹ ξ_β''(q) x̂(q) dq`.
    pub curvature: f64,
    /// `∫₀^q̂ dq / x̂(q)`.
    pub entropy: f64,
    /// `log(1 - q̂)`.
    pub log_term: f64,
}

fn check_beta(beta: f64) -> Result<()> {
    if !(beta > 0.0 && beta.is_finite()) {
        return Err(Error::Domain(format!("beta must be positive and finite, got {beta}")));
    }
    Ok(())
}

/// `∫_a^b ξ''(q)(c - m q) dq` in closed form.
fn curvature_piece(mix: &MixtureSpec, a: f64, b: f64, c: f64, m: f64) -> f64 {
    let d1 = |t| mix.xi_unchecked(t, 1);
    let d0 = |t| mix.xi_unchecked(t, 0);
    c * (d1(b) - d1(a)) - m * ((b * d1(b) - a * d1(a)) - (d0(b) - d0(a)))
}

/// Closed-form evaluation; `x̂` is piecewise linear so every integral is elementary.
pub fn cs_functional(profile: &RSBProfile, mix: &MixtureSpec, beta: f64) -> Result<ParisiValue> {
    check_beta(beta)?;
    let b2 = beta * beta;
    let q_hat = profile.q_hat();
    let mut curvature = curvature_piece(mix, q_hat, 1.0, 1.0, 1.0);
    let mut entropy = 0.0;
    for (lo, hi, m, xh_hi) in profile.pieces() {
        let c = xh_hi + m * hi;
        curvature += curvature_piece(mix, lo, hi, c, m);
        if !(xh_hi > 0.0) {
            return Err(Error::Domain("x̂ vanishes before q̂".into()));
        }
        entropy += if m > 0.0 {
            (m * (hi - lo) / xh_hi).ln_1p() / m
        } else {
            (hi - lo) / xh_hi
        };
    }
    let drift = b2 * mix.xi_unchecked(0.0, 1) * profile.x_hat(0.0);
    let curvature = b2 * curvature;
    let log_term = (1.0 - q_hat).ln();
    let value = (drift + curvature + entropy + log_term) / (2.0 * beta);
    if !value.is_finite() {
        return Err(Error::Numeric(format!("functional is not finite for profile {profile:?}")));
    }
    Ok(ParisiValue { value, drift, curvature, entropy, log_term })
}

/// Same functional by adaptive quadrature on each piece; the cross-check for [`cs_functional`].
pub fn cs_functional_quadrature(profile: &RSBProfile, mix: &MixtureSpec, beta: f64) -> Result<ParisiValue> {
    check_beta(beta)?;
    let b2 = beta * beta;
    let tol = QuadTol { rel: 1e-13, abs: 1e-15 };
    let q_hat = profile.q_hat();
    let mut edges = vec![0.0];
    edges.extend_from_slice(profile.breakpoints());
    if q_hat < 1.0 {
        edges.push(1.0);
    }
    let mut curvature = 0.0;
    let mut entropy = 0.0;
    for w in edges.windows(2) {
        let (a, b) = (w[0], w[1]);
        if b <= a {
            continue;
        }
        curvature += integrate(|q| mix.xi_unchecked(q, 2) * profile.x_hat(q), a, b, tol)?;
        if b <= q_hat {
            entropy += integrate(|q| 1.0 / profile.x_hat(q), a, b, tol)?;
        }
    }
    let drift = b2 * mix.xi_unchecked(0.0, 1) * profile.x_hat(0.0);
    let curvature = b2 * curvature;
    let log_term = (1.0 - q_hat).ln();
    Ok(ParisiValue {
        value: (drift + curvature + entropy + log_term) / (2.0 * beta),
        drift,
        curvature,
        entropy,
        log_term,
    })
}

/// Direct-search settings for [`minimize_cs`].
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct MinimizerConfig {
    pub initial_step: f64,
    pub min_step: f64,
    pub max_evaluations: usize,
}

impl Default for MinimizerConfig {
    fn default() -> Self {
        Self { initial_step: 1.0, min_step: 1e-10, max_evaluations: 400_000 }
    }
}

/// Minimizer output; `converged` is false when the evaluation budget ran out first.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct CsMinimum {
    pub value: ParisiValue,
    pub profile: RSBProfile,
    pub converged: bool,
}

// Search coordinates: w = -ln(1 - q̂), then k log-increments for breakpoint spacing and k for values.
const W_MAX: f64 = 40.0;
const LOG_LO: f64 = -40.0;
const LOG_HI: f64 = 5.0;

fn decode(z: &[f64], k: usize) -> RSBProfile {
    let q_hat = -(-z[0]).exp_m1();
    if k == 0 || q_hat <= 0.0 {
        return RSBProfile::constant_one();
    }
    let a: Vec<f64> = z[1..=k].iter().map(|v| v.exp()).collect();
    let total: f64 = a.iter().sum();
    let mut q = Vec::with_capacity(k);
    let mut acc = 0.0;
    for &ai in &a {
        acc += ai;
        q.push(q_hat * acc / total);
    }
    q[k - 1] = q_hat;
    let mut m = Vec::with_capacity(k);
    let mut acc = 0.0;
    for v in &z[k + 1..=2 * k] {
        acc += v.exp();
        m.push(acc.min(1.0));
    }
    // merge pieces that collapsed to zero width so the breakpoints stay strictly increasing
    let mut bq = Vec::with_capacity(k);
    let mut bm = Vec::with_capacity(k);
    for (qi, mi) in q.into_iter().zip(m) {
        match bq.last() {
            Some(&last) if qi <= last => {}
            _ if qi <= 0.0 => {}
            _ => {
                bq.push(qi);
                bm.push(mi);
            }
        }
    }
    RSBProfile { breakpoints: bq, values: bm }
}

fn bounds(i: usize) -> (f64, f64) {
    if i == 0 {
        (0.0, W_MAX)
    } else {
        (LOG_LO, LOG_HI)
    }
}

fn direct_search(
    mix: &MixtureSpec,
    beta: f64,
    k: usize,
    mut z: Vec<f64>,
    cfg: &MinimizerConfig,
) -> (f64, Vec<f64>, bool) {
    let eval = |z: &[f64]| cs_functional(&decode(z, k), mix, beta).map_or(f64::INFINITY, |v| v.value);
    let mut f = eval(&z);
    let mut h = cfg.initial_step;
    let mut evals = 1;
    while h >= cfg.min_step {
        if evals >= cfg.max_evaluations {
            return (f, z, false);
        }
        let mut improved = false;
        for i in 0..z.len() {
            let (lo, hi) = bounds(i);
            for dir in [1.0, -1.0] {
                let trial = (z[i] + dir * h).clamp(lo, hi);
                if trial == z[i] {
                    continue;
                }
                let old = z[i];
                z[i] = trial;
                let ft = eval(&z);
                evals += 1;
                if ft < f {
                    f = ft;
                    improved = true;
                    // keep stepping while it pays
                    loop {
                        let next = (z[i] + dir * h).clamp(lo, hi);
                        if next == z[i] {
                            break;
                        }
                        let keep = z[i];
                        z[i] = next;
                        let fn_ = eval(&z);
                        evals += 1;
                        if fn_ < f {
                            f = fn_;
                        } else {
                            z[i] = keep;
                            break;
                        }
                    }
                    break;
                }
                z[i] = old;
            }
        }
        if !improved {
            h *= 0.5;
        }
    }
    (f, z, true)
}

fn starts(k: usize, beta: f64) -> Vec<Vec<f64>> {
    let mut out = Vec::new();
    let w_choices = [0.0, 0.7, 2.3, (1.0 + beta).ln(), (1.0 + beta).ln() + 1.0];
    let m_choices = [0.5, 0.1, 1.0 / (1.0 + beta)];
    for &w in &w_choices {
        for &m in &m_choices {
            let mut z = vec![w];
            z.extend(std::iter::repeat_n(0.0, k));
            let step = (m / k as f64).ln().max(LOG_LO);
            z.extend(std::iter::repeat_n(step, k));
            out.push(z);
        }
    }
    out
}

fn better(a: &CsMinimum, b: &CsMinimum) -> bool {
    let tie = 1e-12 * (1.0 + b.value.value.abs());
    a.value.value < b.value.value - tie
        || ((a.value.value - b.value.value).abs() <= tie && a.profile.q_hat() < b.profile.q_hat())
}

/// Minimizes [`cs_functional`] over profiles with at most `k` atoms by multi-start coordinate search.
///
/// Atom counts `1..=k` are searched in turn, each seeded with the previous optimum, so the value is non-increasing in `k`.
/// Among values equal to within `1e-12` the smallest `q̂` wins.
pub fn minimize_cs(mix: &MixtureSpec, beta: f64, k: usize, cfg: &MinimizerConfig) -> Result<CsMinimum> {
    check_beta(beta)?;
    if k == 0 {
        return Err(Error::Domain("need at least one atom".into()));
    }
    let one = RSBProfile::constant_one();
    let mut best = CsMinimum { value: cs_functional(&one, mix, beta)?, profile: one, converged: true };
    let mut seed_z: Option<Vec<f64>> = None;
    for kk in 1..=k {
        let mut inits = starts(kk, beta);
        if let Some(prev) = &seed_z {
            // prepend an empty piece with zero value: decodes to the previous optimum
            let mut z = vec![prev[0], LOG_LO];
            z.extend_from_slice(&prev[1..kk]);
            z.push(LOG_LO);
            z.extend_from_slice(&prev[kk..]);
            inits.push(z);
        }
        let results: Vec<(f64, Vec<f64>, bool)> =
            inits.into_par_iter().map(|z| direct_search(mix, beta, kk, z, cfg)).collect();
        let mut round: Option<(CsMinimum, Vec<f64>)> = None;
        for (_, z, conv) in results {
            let profile = decode(&z, kk);
            let value = cs_functional(&profile, mix, beta)?;
            let cand = CsMinimum { value, profile, converged: conv };
            if round.as_ref().is_none_or(|(r, _)| better(&cand, r)) {
                round = Some((cand, z));
            }
        }
        let (cand, z) = round.expect("at least one start");
        if better(&cand, &best) {
            best = cand;
        }
        seed_z = Some(z);
    }
    Ok(best)
}

/// Zero-temperature extrapolation of the minimized functional along a `β` sequence.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GsPrediction {
    pub value: f64,
    pub betas: Vec<f64>,
    pub values: Vec<f64>,
    /// False when the minimized values fail to be non-decreasing in `β`.
    pub monotone: bool,
    pub converged: bool,
}

/// Evaluates [`minimize_cs`] on `betas` and extrapolates the last three values linearly in `1/β` to `1/β = 0`.
pub fn gs_prediction(mix: &MixtureSpec, betas: &[f64], k: usize, cfg: &MinimizerConfig) -> Result<GsPrediction> {
    if betas.len() < 3 {
        return Err(Error::Domain("need at least three inverse temperatures".into()));
    }
    if betas.windows(2).any(|w| !(w[1] > w[0])) {
        return Err(Error::Domain("inverse temperatures must increase".into()));
    }
    let mut values = Vec::with_capacity(betas.len());
    let mut converged = true;
    for &b in betas {
        let m = minimize_cs(mix, b, k, cfg)?;
        converged &= m.converged;
        values.push(m.value.value);
    }
    let monotone = values.windows(2).all(|w| w[1] >= w[0] - 1e-9 * w[0].abs().max(1.0));
    let tail = betas.len() - 3;
    let xs: Vec<f64> = betas[tail..].iter().map(|b| 1.0 / b).collect();
    let ys = &values[tail..];
    let xm = xs.iter().sum::<f64>() / 3.0;
    let ym = ys.iter().sum::<f64>() / 3.0;
    let sxy: f64 = xs.iter().zip(ys).map(|(x, y)| (x - xm) * (y - ym)).sum();
    let sxx: f64 = xs.iter().map(|x| (x - xm) * (x - xm)).sum();
    let value = ym - sxy / sxx * xm;
    Ok(GsPrediction { value, betas: betas.to_vec(), values, monotone, converged })
}

#[cfg(test)]
mod tests {
    use super::*;

    /// `ξ = γ²t²`: the minimizer is replica symmetric with `1 - q = 1/(βγ√2)` above `βγ√2 = 1`.
    fn p2_closed_form(gamma: f64, beta: f64) -> f64 {
        let b = beta * gamma;
        if b * 2f64.sqrt() <= 1.0 {
            return beta * gamma * gamma / 2.0;
        }
        let e = 1.0 / (b * 2f64.sqrt());
        let q = 1.0 - e;
        (b * b * (1.0 - q * q) + q / e + e.ln()) / (2.0 * beta)
    }

    #[test]
    fn constant_profile_is_annealed() {
        let mix = MixtureSpec::pure(2, 1.0).unwrap();
        let v = cs_functional(&RSBProfile::constant_one(), &mix, 1.0).unwrap();
        assert_eq!(v.value, 0.5);
        let mix = MixtureSpec::new(vec![0.3, 0.8, 0.5]).unwrap();
        for beta in [0.1, 0.7, 3.0] {
            let v = cs_functional(&RSBProfile::constant_one(), &mix, beta).unwrap();
            let annealed = crate::free_energy::annealed_bound(&mix, beta);
            assert!((v.value - annealed).abs() <= 1e-14 * annealed, "{} {annealed}", v.value);
        }
    }

    #[test]
    fn closed_form_matches_quadrature() {
        let mix = MixtureSpec::new(vec![0.2, 0.9, 0.6, 0.4]).unwrap();
        let profiles = [
            RSBProfile::constant_one(),
            RSBProfile::new(vec![0.4], vec![0.0]).unwrap(),
            RSBProfile::new(vec![0.3, 0.85], vec![0.2, 0.6]).unwrap(),
            RSBProfile::new(vec![0.1, 0.5, 0.97], vec![0.05, 0.05, 0.9]).unwrap(),
        ];
        for p in &profiles {
            for beta in [0.5, 2.0, 9.0] {
                let a = cs_functional(p, &mix, beta).unwrap();
                let b = cs_functional_quadrature(p, &mix, beta).unwrap();
                assert!((a.value - b.value).abs() <= 1e-8 * a.value.abs().max(1e-3), "{a:?} {b:?}");
            }
        }
    }

    #[test]
    fn two_atom_profile_against_riemann_sum() {
        let mix = MixtureSpec::new(vec![0.0, 0.7, 0.7]).unwrap();
        let p = RSBProfile::new(vec![0.35, 0.8], vec![0.25, 0.55]).unwrap();
        let beta = 1.7;
        let n = 1_000_000;
        let h = 1.0 / n as f64;
        let (mut curv, mut ent) = (0.0, 0.0);
        for i in 0..n {
            let q = (i as f64 + 0.5) * h;
            let xh = p.x_hat(q);
            curv += mix.xi_unchecked(q, 2) * xh * h;
            if q < p.q_hat() {
                ent += h / xh;
            }
        }
        let brute = (beta * beta * curv + ent + (1.0 - p.q_hat()).ln()) / (2.0 * beta);
        let v = cs_functional(&p, &mix, beta).unwrap();
        assert!((v.value - brute).abs() < 1e-8, "{} {brute}", v.value);
    }

    #[test]
    fn entropy_part_is_nonnegative() {
        let mix = MixtureSpec::pure(3, 1.0).unwrap();
        for p in [
            RSBProfile::new(vec![0.5], vec![0.3]).unwrap(),
            RSBProfile::new(vec![0.2, 0.9], vec![0.0, 0.4]).unwrap(),
        ] {
            let v = cs_functional(&p, &mix, 2.0).unwrap();
            assert!(v.entropy + v.log_term >= 0.0, "{v:?}");
        }
    }

    #[test]
    fn profile_validation() {
        assert!(RSBProfile::new(vec![0.5, 0.4], vec![0.1, 0.2]).is_err());
        assert!(RSBProfile::new(vec![0.5], vec![1.2]).is_err());
        assert!(RSBProfile::new(vec![0.2, 0.5], vec![0.4, 0.1]).is_err());
        assert!(RSBProfile::new(vec![1.0], vec![0.1]).is_err());
        assert!(RSBProfile::new(vec![0.5], vec![]).is_err());
        let p = RSBProfile::new(vec![0.3, 0.6], vec![0.2, 0.5]).unwrap();
        assert_eq!(p.x(0.1), 0.2);
        assert_eq!(p.x(0.3), 0.5);
        assert_eq!(p.x(0.6), 1.0);
        assert!((p.x_hat(0.0) - (0.4 + 0.5 * 0.3 + 0.2 * 0.3)).abs() < 1e-15);
        assert!(cs_functional(&p, &MixtureSpec::pure(2, 1.0).unwrap(), 0.0).is_err());
    }

    #[test]
    fn replica_symmetric_regime_is_annealed() {
        let mix = MixtureSpec::pure(2, 1.0).unwrap();
        let m = minimize_cs(&mix, 0.5, 3, &MinimizerConfig::default()).unwrap();
        assert!(m.value.value <= 0.25 + 1e-6, "{m:?}");
        assert!(m.profile.q_hat() < 1e-6);
        assert!((m.value.value - p2_closed_form(1.0, 0.5)).abs() < 1e-9);
    }

    #[test]
    fn p2_minimum_matches_closed_form() {
        let mix = MixtureSpec::pure(2, 1.0).unwrap();
        for beta in [1.0, 3.0, 20.0] {
            let m = minimize_cs(&mix, beta, 2, &MinimizerConfig::default()).unwrap();
            let exact = p2_closed_form(1.0, beta);
            assert!((m.value.value - exact).abs() < 1e-7, "beta {beta}: {} vs {exact}", m.value.value);
        }
    }

    #[test]
    fn more_atoms_never_hurt() {
        let mix = MixtureSpec::pure(4, 1.0).unwrap();
        let cfg = MinimizerConfig::default();
        let v1 = minimize_cs(&mix, 4.0, 1, &cfg).unwrap();
        let v3 = minimize_cs(&mix, 4.0, 3, &cfg).unwrap();
        // equal values within the tie tolerance may resolve to a smaller q̂
        assert!(v3.value.value <= v1.value.value + 1e-12 * (1.0 + v1.value.value.abs()), "{v1:?} {v3:?}");
        // any fixed profile is a certificate above the minimum
        let p = RSBProfile::new(vec![0.9], vec![0.3]).unwrap();
        assert!(cs_functional(&p, &mix, 4.0).unwrap().value >= v3.value.value);
    }

    #[test]
    fn minimum_is_nondecreasing_in_beta() {
        let mix = MixtureSpec::new(vec![0.0, 0.6, 0.8]).unwrap();
        let cfg = MinimizerConfig::default();
        let mut prev = 0.0;
        for beta in [0.3, 0.8, 1.5, 3.0, 6.0] {
            let v = minimize_cs(&mix, beta, 2, &cfg).unwrap().value.value;
            assert!(v >= prev - 1e-9);
            prev = v;
        }
    }

    #[test]
    fn prediction_scales_with_gamma() {
        let cfg = MinimizerConfig::default();
        let betas = [25.0, 50.0, 100.0, 200.0];
        let a = gs_prediction(&MixtureSpec::pure(2, 1.0).unwrap(), &betas, 1, &cfg).unwrap();
        let scaled: Vec<f64> = betas.iter().map(|b| b / 2.0).collect();
        let b = gs_prediction(&MixtureSpec::pure(2, 2.0).unwrap(), &scaled, 1, &cfg).unwrap();
        assert!(a.monotone && b.monotone);
        assert!((b.value - 2.0 * a.value).abs() < 1e-6, "{} {}", a.value, b.value);
        assert!(gs_prediction(&MixtureSpec::pure(2, 1.0).unwrap(), &betas[..2], 1, &cfg).is_err());
    }

    #[test]
    fn p2_prediction_approaches_sqrt_two() {
        let cfg = MinimizerConfig::default();
        let betas = [100.0, 200.0, 400.0, 800.0];
        let g = gs_prediction(&MixtureSpec::pure(2, 1.0).unwrap(), &betas, 1, &cfg).unwrap();
        assert!((g.value - 2f64.sqrt()).abs() < 5e-3, "{g:?}");
    }
}
