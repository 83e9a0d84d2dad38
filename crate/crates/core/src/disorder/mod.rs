//! Disorder laws, tensor sampling, moment diagnostics and the truncation pipeline.

mod moments;
mod probe;
mod truncation;

pub use moments::{moment_report, MomentReport, MomentRequirement};
pub use probe::{localized_probe, ProbeResult};
pub use truncation::{
    truncate, variance_sandwich, variance_topup, ClassConstants, TruncationDecomposition,
    TruncationParams,
};

use std::f64::consts::PI;
use std::fmt;
use std::str::FromStr;

use rand::Rng;
use rand_distr::{Distribution, StandardNormal, StudentT};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, StudentsT};
use statrs::function::erf::erfc;
use statrs::function::gamma::ln_gamma;

use crate::error::{Error, Result};
use crate::mixture::MixtureSpec;
use crate::quadrature::{integrate, QuadTol};
use crate::rng::{Purpose, StreamFamily};
use crate::tensor::{canonical_count, canonical_unrank, multiplicity_sorted, SymmetricTensor};

/// Entries generated from one RNG stream.
pub(crate) const SAMPLE_CHUNK: usize = 4096;

/// A standardized (mean 0, variance 1) entry law.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "String", into = "String")]
pub enum DisorderSpec {
    Gaussian,
    Rademacher,
    /// Uniform on `[-√3, √3]`.
    Uniform,
    /// Student t with `nu > 2` degrees of freedom, rescaled to unit variance.
    StudentT { nu: f64 },
    /// An atom at `+scale` with probability `eps`, otherwise a shifted unit Gaussian,
    /// recentred and rescaled to mean 0 and variance 1.
    TwoPointContaminated { eps: f64, scale: f64 },
}

/// A set of absolute values `{ |x| : lo <(=) |x| <(=) hi }`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AbsRange {
    pub lo: f64,
    pub lo_closed: bool,
    pub hi: f64,
    pub hi_closed: bool,
}

impl AbsRange {
    pub fn closed(lo: f64, hi: f64) -> Self {
        Self { lo, lo_closed: true, hi, hi_closed: true }
    }

    pub fn half_open(lo: f64, hi: f64) -> Self {
        Self { lo, lo_closed: true, hi, hi_closed: false }
    }

    pub fn open(lo: f64, hi: f64) -> Self {
        Self { lo, lo_closed: false, hi, hi_closed: false }
    }

    /// `|x| > lo`.
    pub fn above(lo: f64) -> Self {
        Self { lo, lo_closed: false, hi: f64::INFINITY, hi_closed: false }
    }

    /// `|x| <= hi`.
    pub fn up_to(hi: f64) -> Self {
        Self::closed(0.0, hi)
    }

    pub fn contains(&self, a: f64) -> bool {
        let a = a.abs();
        let lo_ok = if self.lo_closed { a >= self.lo } else { a > self.lo };
        let hi_ok = if self.hi_closed { a <= self.hi } else { a < self.hi };
        lo_ok && hi_ok
    }

    /// The same set with both endpoints divided by `s > 0`.
    pub fn scaled_down(&self, s: f64) -> Self {
        Self { lo: self.lo / s, hi: self.hi / s, ..*self }
    }

    fn is_empty(&self) -> bool {
        self.hi < self.lo || (self.hi == self.lo && !(self.lo_closed && self.hi_closed))
    }
}

impl DisorderSpec {
    pub fn student_t(nu: f64) -> Result<Self> {
        let s = Self::StudentT { nu };
        s.validate()?;
        Ok(s)
    }

    pub fn contaminated(eps: f64, scale: f64) -> Result<Self> {
        let s = Self::TwoPointContaminated { eps, scale };
        s.validate()?;
        Ok(s)
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            Self::StudentT { nu } if !(nu.is_finite() && nu > 2.0) => {
                Err(Error::Config(format!("student_t needs nu > 2 for unit variance, got {nu}")))
            }
            Self::TwoPointContaminated { eps, scale }
                if !(eps > 0.0 && eps < 1.0 && scale.is_finite() && scale > 0.0) =>
            {
                Err(Error::Config(format!(
                    "two_point needs 0 < eps < 1 and scale > 0, got eps={eps}, scale={scale}"
                )))
            }
            _ => Ok(()),
        }
    }

    /// Grammar tag, e.g. `student_t:3`.
    pub fn tag(&self) -> String {
        self.to_string()
    }

    pub fn is_symmetric(&self) -> bool {
        !matches!(self, Self::TwoPointContaminated { .. })
    }

    /// Largest possible `|x|`, if bounded.
    pub fn support_bound(&self) -> Option<f64> {
        match self {
            Self::Rademacher => Some(1.0),
            Self::Uniform => Some(3f64.sqrt()),
            _ => None,
        }
    }

    /// Mean and standard deviation of the Gaussian component, and the atom location,
    /// for the contaminated law in standardized units.
    fn contaminated_parts(eps: f64, scale: f64) -> (f64, f64, f64) {
        let mu = -eps * scale / (1.0 - eps);
        let sd = ((1.0 - eps) * (1.0 + mu * mu) + eps * scale * scale).sqrt();
        (mu / sd, 1.0 / sd, scale / sd)
    }

    /// One standardized draw.
    pub fn sample<R: Rng + ?Sized>(&self, rng: &mut R) -> f64 {
        match *self {
            Self::Gaussian => StandardNormal.sample(rng),
            Self::Rademacher => {
                if rng.random::<bool>() {
                    1.0
                } else {
                    -1.0
                }
            }
            Self::Uniform => 3f64.sqrt() * (2.0 * rng.random::<f64>() - 1.0),
            Self::StudentT { nu } => {
                let t: f64 = StudentT::new(nu).expect("validated").sample(rng);
                t / (nu / (nu - 2.0)).sqrt()
            }
            Self::TwoPointContaminated { eps, scale } => {
                let (m, s, atom) = Self::contaminated_parts(eps, scale);
                if rng.random::<f64>() < eps {
                    atom
                } else {
                    let z: f64 = StandardNormal.sample(rng);
                    m + s * z
                }
            }
        }
    }

    /// `E|x|^m`, infinite when the moment diverges.
    pub fn abs_moment(&self, m: f64) -> f64 {
        if m == 0.0 {
            return 1.0;
        }
        match *self {
            Self::Gaussian => gaussian_abs_moment(m),
            Self::Rademacher => 1.0,
            Self::Uniform => 3f64.powf(m / 2.0) / (m + 1.0),
            Self::StudentT { nu } => {
                if m >= nu {
                    return f64::INFINITY;
                }
                let ln = 0.5 * m * nu.ln() + ln_gamma((m + 1.0) / 2.0) + ln_gamma((nu - m) / 2.0)
                    - 0.5 * PI.ln()
                    - ln_gamma(nu / 2.0);
                (ln - 0.5 * m * (nu / (nu - 2.0)).ln()).exp()
            }
            Self::TwoPointContaminated { eps, scale } => {
                let (mean, sd, atom) = Self::contaminated_parts(eps, scale);
                let cont = integrate(
                    |z| (mean + sd * z).abs().powf(m) * std_normal_pdf(z),
                    f64::NEG_INFINITY,
                    f64::INFINITY,
                    QuadTol::default(),
                )
                .unwrap_or(f64::NAN);
                eps * atom.powf(m) + (1.0 - eps) * cont
            }
        }
    }

    /// Whether `E|x|^m` is finite.
    pub fn has_finite_moment(&self, m: f64) -> bool {
        match *self {
            Self::StudentT { nu } => m < nu,
            _ => true,
        }
    }

    /// `P[|x| >= s]`.
    pub fn tail_prob(&self, s: f64) -> f64 {
        if s <= 0.0 {
            return 1.0;
        }
        match *self {
            Self::Gaussian => erfc(s / 2f64.sqrt()),
            Self::Rademacher => {
                if s <= 1.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform => (1.0 - s / 3f64.sqrt()).max(0.0),
            Self::StudentT { nu } => {
                let t = StudentsT::new(0.0, 1.0, nu).expect("validated");
                2.0 * t.sf(s * (nu / (nu - 2.0)).sqrt())
            }
            Self::TwoPointContaminated { eps, scale } => {
                let (mean, sd, atom) = Self::contaminated_parts(eps, scale);
                let upper = 0.5 * erfc((s - mean) / sd / 2f64.sqrt());
                let lower = 0.5 * erfc((s + mean) / sd / 2f64.sqrt());
                let atom_mass = if atom >= s { eps } else { 0.0 };
                atom_mass + (1.0 - eps) * (upper + lower)
            }
        }
    }

    /// `E[x^k · 1{|x| ∈ range}]` for `k ∈ {1, 2}` under the standardized law.
    pub fn partial_moment(&self, k: u32, range: AbsRange) -> Result<f64> {
        if k != 1 && k != 2 {
            return Err(Error::Domain(format!("partial moment of order {k} is not supported")));
        }
        if range.is_empty() {
            return Ok(0.0);
        }
        if k == 1 && self.is_symmetric() {
            return Ok(0.0);
        }
        let (lo, hi) = (range.lo.max(0.0), range.hi);
        let value = match *self {
            Self::Gaussian => {
                // 2∫_lo^hi x² φ(x) dx
                let (pl, ph) = (std_normal_pdf(lo), if hi.is_finite() { std_normal_pdf(hi) } else { 0.0 });
                let mass = 0.5 * (erfc(lo / 2f64.sqrt()) - erfc(hi / 2f64.sqrt()));
                2.0 * (lo * pl - if hi.is_finite() { hi * ph } else { 0.0 }) + 2.0 * mass
            }
            Self::Rademacher => {
                if range.contains(1.0) {
                    1.0
                } else {
                    0.0
                }
            }
            Self::Uniform => {
                let r = 3f64.sqrt();
                let (a, b) = (lo.min(r), hi.min(r));
                (b.powi(3) - a.powi(3)) / (3.0 * r)
            }
            Self::StudentT { nu } => student_t_partial_second(nu, lo, hi),
            Self::TwoPointContaminated { eps, scale } => {
                let (mean, sd, atom) = Self::contaminated_parts(eps, scale);
                let atom_part = if range.contains(atom) { eps * atom.powi(k as i32) } else { 0.0 };
                let density = |x: f64| {
                    let z = (x - mean) / sd;
                    x.powi(k as i32) * std_normal_pdf(z) / sd
                };
                let tol = QuadTol { rel: 1e-12, abs: 1e-17 };
                let pos = integrate(density, lo, hi, tol)?;
                let neg = integrate(density, -hi, -lo, tol)?;
                atom_part + (1.0 - eps) * (pos + neg)
            }
        };
        Ok(value)
    }
}

fn std_normal_pdf(z: f64) -> f64 {
    (-0.5 * z * z).exp() / (2.0 * PI).sqrt()
}

fn gaussian_abs_moment(m: f64) -> f64 {
    (0.5 * m * 2f64.ln() + ln_gamma((m + 1.0) / 2.0) - 0.5 * PI.ln()).exp()
}

/// `E[X² 1{lo <= |X| <= hi}]` for the unit-variance t law, via
/// `t² f_ν(t) = ν[(ν-1)/(ν-2) · √((ν-2)/ν) f_{ν-2}(t√((ν-2)/ν)) - f_ν(t)]`.
fn student_t_partial_second(nu: f64, lo: f64, hi: f64) -> f64 {
    let s = (nu / (nu - 2.0)).sqrt();
    let t_nu = StudentsT::new(0.0, 1.0, nu).expect("validated");
    let t_lower = StudentsT::new(0.0, 1.0, nu - 2.0).expect("validated");
    let r = ((nu - 2.0) / nu).sqrt();
    // P(|T| > c) for both laws, at the raw (unstandardized) threshold c
    let tail = |c: f64| -> (f64, f64) {
        if c.is_infinite() {
            (0.0, 0.0)
        } else {
            (2.0 * t_lower.sf(c * r), 2.0 * t_nu.sf(c))
        }
    };
    let (a, b) = (lo * s, hi * s);
    let (la, na) = tail(a);
    let (lb, nb) = tail(b);
    let raw = nu * ((nu - 1.0) / (nu - 2.0) * (la - lb) - (na - nb));
    (raw / (s * s)).max(0.0)
}

impl fmt::Display for DisorderSpec {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Self::Gaussian => write!(f, "gaussian"),
            Self::Rademacher => write!(f, "rademacher"),
            Self::Uniform => write!(f, "uniform"),
            Self::StudentT { nu } => write!(f, "student_t:{nu}"),
            Self::TwoPointContaminated { eps, scale } => write!(f, "two_point:{eps}:{scale}"),
        }
    }
}

impl FromStr for DisorderSpec {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let parts: Vec<&str> = s.trim().split(':').collect();
        let num = |t: &str| {
            t.parse::<f64>()
                .map_err(|e| Error::Config(format!("bad number '{t}' in distribution '{s}': {e}")))
        };
        let spec = match parts.as_slice() {
            ["gaussian"] | ["normal"] => Self::Gaussian,
            ["rademacher"] => Self::Rademacher,
            ["uniform"] => Self::Uniform,
            ["student_t", nu] => Self::StudentT { nu: num(nu)? },
            ["two_point", eps, scale] => Self::TwoPointContaminated { eps: num(eps)?, scale: num(scale)? },
            _ => return Err(Error::Config(format!("unsupported distribution '{s}'"))),
        };
        spec.validate()?;
        Ok(spec)
    }
}

impl TryFrom<String> for DisorderSpec {
    type Error = Error;

    fn try_from(s: String) -> Result<Self> {
        s.parse()
    }
}

impl From<DisorderSpec> for String {
    fn from(d: DisorderSpec) -> String {
        d.tag()
    }
}

/// Standard deviation of an entry whose multi-index has `mult` distinct orderings: `1/√mult`.
pub fn entry_scale(mult: u64) -> f64 {
    (1.0 / mult as f64).sqrt()
}

/// Samples an order-`p` disorder tensor with entry variance `1/multiplicity`.
///
/// Entries are drawn from per-chunk streams indexed by canonical rank, so the
/// tensor for dimension `n` is the leading block of the tensor for any larger dimension.
pub fn sample_tensor(p: usize, n: usize, spec: &DisorderSpec, seed: u64) -> Result<SymmetricTensor> {
    sample_tensor_with(p, n, spec, seed, Purpose::Disorder)
}

pub(crate) fn sample_tensor_with(
    p: usize,
    n: usize,
    spec: &DisorderSpec,
    seed: u64,
    purpose: Purpose,
) -> Result<SymmetricTensor> {
    spec.validate()?;
    let mut t = SymmetricTensor::zeros(p, n)?;
    let total = canonical_count(n, p);
    let family = StreamFamily::new(seed, purpose, p as u64);
    t.entries_mut()[..total]
        .par_chunks_mut(SAMPLE_CHUNK)
        .enumerate()
        .for_each(|(c, chunk)| {
            let mut rng = family.stream(c as u64);
            let mut idx = canonical_unrank(c * SAMPLE_CHUNK, p);
            for (k, slot) in chunk.iter_mut().enumerate() {
                if k > 0 {
                    advance_sorted(&mut idx);
                }
                *slot = entry_scale(multiplicity_sorted(&idx)) * spec.sample(&mut rng);
            }
        });
    Ok(t)
}

/// Colex successor of a sorted multi-index.
pub(crate) fn advance_sorted(idx: &mut [usize]) {
    let p = idx.len();
    let mut k = 0;
    while k + 1 < p && idx[k] == idx[k + 1] {
        k += 1;
    }
    idx[k] += 1;
    for v in idx.iter_mut().take(k) {
        *v = 0;
    }
}

/// Samples one tensor per active order of `mix`.
pub fn sample_disorder(mix: &MixtureSpec, n: usize, spec: &DisorderSpec, seed: u64) -> Result<Vec<SymmetricTensor>> {
    mix.active_orders().map(|p| sample_tensor(p, n, spec, seed)).collect()
}

/// Distinct multiplicity values occurring among order-`p` multi-indices.
pub fn multiplicity_classes(p: usize) -> Vec<u64> {
    let mut out = Vec::new();
    // integer partitions of p give every frequency pattern
    fn parts(rem: usize, max: usize, cur: &mut Vec<usize>, out: &mut Vec<Vec<usize>>) {
        if rem == 0 {
            out.push(cur.clone());
            return;
        }
        for k in (1..=rem.min(max)).rev() {
            cur.push(k);
            parts(rem - k, k, cur, out);
            cur.pop();
        }
    }
    let mut pats = Vec::new();
    parts(p, p, &mut Vec::new(), &mut pats);
    let fact = |k: usize| (1..=k as u64).product::<u64>();
    for pat in pats {
        let m = fact(p) / pat.iter().map(|&c| fact(c)).product::<u64>();
        if !out.contains(&m) {
            out.push(m);
        }
    }
    out.sort_unstable();
    out
}
