use rayon::prelude::*;
use serde::Serialize;

use super::{entry_scale, multiplicity_classes, AbsRange, DisorderSpec, SAMPLE_CHUNK};
use crate::error::{Error, Result};
use crate::rng::{Purpose, StreamFamily};
use crate::tensor::{canonical_count, canonical_unrank, for_each_canonical, multiplicity_sorted, SymmetricTensor};

const ORDER_TOL: f64 = 1e-12;

/// Truncation levels for dimension `n`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct TruncationParams {
    pub n: usize,
    pub m: f64,
    pub m1: f64,
    pub eta: f64,
    pub delta: f64,
    pub j_levels: u32,
}

impl TruncationParams {
    /// Explicit levels; `eta` is moved to the nearest dyadic level `M·2^J/√N`.
    pub fn new(n: usize, m: f64, m1: f64, eta: f64, delta: f64) -> Result<Self> {
        if n < 2 {
            return Err(Error::Config("truncation needs N >= 2".into()));
        }
        let sqrt_n = (n as f64).sqrt();
        let ideal = (eta * sqrt_n / m).log2();
        if !ideal.is_finite() {
            return Err(Error::Config(format!("cannot place dyadic levels for M={m}, eta={eta}")));
        }
        let mut candidates = vec![ideal.round(), ideal.floor(), ideal.ceil()];
        candidates.dedup();
        let mut last_err = None;
        for j in candidates {
            let j = j.max(1.0) as u32;
            let p = Self {
                n,
                m,
                m1,
                eta: m * 2f64.powi(j as i32) / sqrt_n,
                delta,
                j_levels: j,
            };
            match p.validate() {
                Ok(()) => return Ok(p),
                Err(e) => last_err = Some(e),
            }
        }
        Err(last_err.expect("at least one candidate"))
    }

    /// `M = η^{-1} = M1 = N^{1/(4P)}`, `δ = N^{-ε/(4P)}`.
    pub fn with_defaults(n: usize, max_order: usize, eps: Option<f64>) -> Result<Self> {
        let eps = eps.unwrap_or(0.5);
        if !(eps > 0.0 && eps < 1.0) {
            return Err(Error::Config(format!("eps must lie in (0, 1), got {eps}")));
        }
        let nf = n as f64;
        let k = 1.0 / (4.0 * max_order as f64);
        Self::new(n, nf.powf(k), nf.powf(k), nf.powf(-k), nf.powf(-eps * k))
    }

    /// Slowly varying schedule `δ = 1/log N`, `M1 = log N`, clamped into the admissible ordering.
    pub fn bai_yin(n: usize, max_order: usize) -> Result<Self> {
        let nf = n as f64;
        let k = 1.0 / (4.0 * max_order as f64);
        let eta = nf.powf(-k);
        let m1 = nf.ln().clamp(1.0, nf.powf(0.25));
        let delta = (1.0 / nf.ln()).clamp(eta, 1.0);
        Self::new(n, nf.powf(k), m1, eta, delta)
    }

    pub fn validate(&self) -> Result<()> {
        let nf = self.n as f64;
        let lo = nf.powf(-0.25);
        let hi = nf.powf(0.25);
        let le = |a: f64, b: f64| a <= b * (1.0 + ORDER_TOL);
        let ok = le(lo, self.eta)
            && le(self.eta, self.delta)
            && le(self.delta, 1.0)
            && le(1.0, self.m)
            && le(1.0, self.m1)
            && le(self.m, hi)
            && le(self.m1, hi)
            && self.j_levels >= 1;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!(
                "truncation levels violate N^(-1/4) <= eta <= delta <= 1 <= M, M1 <= N^(1/4): \
                 N={}, M={}, M1={}, eta={}, delta={}, J={}",
                self.n, self.m, self.m1, self.eta, self.delta, self.j_levels
            )))
        }
    }

    /// Upper end of the top dyadic scale, `M·2^J`.
    fn scale_top(&self) -> f64 {
        self.m * 2f64.powi(self.j_levels as i32)
    }

    fn small_range(&self, p: usize) -> AbsRange {
        if p == 1 {
            AbsRange::up_to(self.m1 / 2.0)
        } else {
            AbsRange::up_to(self.m / 2.0)
        }
    }

    fn scale_range(&self, j: u32) -> AbsRange {
        if j == 0 {
            // the left end M/2 already belongs to the small piece
            AbsRange::open(self.m / 2.0, self.m)
        } else {
            AbsRange::half_open(self.m * 2f64.powi(j as i32 - 1), self.m * 2f64.powi(j as i32))
        }
    }

    fn large_range(&self) -> AbsRange {
        AbsRange::closed(self.scale_top(), self.delta * (self.n as f64).sqrt())
    }

    fn tail_range(&self, p: usize) -> AbsRange {
        if p == 1 {
            AbsRange::above(self.m1 / 2.0)
        } else {
            AbsRange::above(self.delta * (self.n as f64).sqrt())
        }
    }
}

/// Recentering constants and variances for one multiplicity class.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct ClassConstants {
    pub multiplicity: u64,
    /// `E[J 1{|J| ∈ small range}]`.
    pub small: f64,
    pub scales: Vec<f64>,
    pub large: f64,
    pub tail: f64,
    /// Target variance `1/multiplicity`.
    pub target: f64,
    /// `Var(J^small)`.
    pub small_variance: f64,
    /// `E[J² 1{|J| > truncation level}]`, feeding the variance sandwich.
    pub excess_second_moment: f64,
}

/// The four-way split of a disorder tensor.
#[derive(Debug, Clone)]
pub struct TruncationDecomposition {
    pub params: TruncationParams,
    pub small: SymmetricTensor,
    pub scales: Vec<SymmetricTensor>,
    pub large: SymmetricTensor,
    pub tail: SymmetricTensor,
    pub constants: Vec<ClassConstants>,
}

impl TruncationDecomposition {
    /// Sum of all pieces.
    pub fn reconstruct(&self) -> Result<SymmetricTensor> {
        let mut acc = self.small.add(&self.large)?.add(&self.tail)?;
        for s in &self.scales {
            acc = acc.add(s)?;
        }
        Ok(acc)
    }

    pub fn class(&self, multiplicity: u64) -> Option<&ClassConstants> {
        self.constants.iter().find(|c| c.multiplicity == multiplicity)
    }
}

fn class_constants(p: usize, spec: &DisorderSpec, params: &TruncationParams) -> Result<Vec<ClassConstants>> {
    multiplicity_classes(p)
        .into_iter()
        .map(|mult| {
            let s = entry_scale(mult);
            let first = |r: AbsRange| spec.partial_moment(1, r.scaled_down(s)).map(|v| s * v);
            let second = |r: AbsRange| spec.partial_moment(2, r.scaled_down(s)).map(|v| s * s * v);
            let small_r = params.small_range(p);
            let small = first(small_r)?;
            let (scales, large) = if p == 1 {
                (vec![0.0; params.j_levels as usize + 1], 0.0)
            } else {
                let scales = (0..=params.j_levels)
                    .map(|j| first(params.scale_range(j)))
                    .collect::<Result<Vec<_>>>()?;
                (scales, first(params.large_range())?)
            };
            let tail = first(params.tail_range(p))?;
            let target = 1.0 / mult as f64;
            let small_variance = second(small_r)? - small * small;
            let excess = second(AbsRange::above(small_r.hi))?;
            Ok(ClassConstants {
                multiplicity: mult,
                small,
                scales,
                large,
                tail,
                target,
                small_variance,
                excess_second_moment: excess,
            })
        })
        .collect()
}

/// Splits `j` into small, dyadic-scale, large and tail pieces, each recentred by its population mean.
pub fn truncate(j: &SymmetricTensor, params: &TruncationParams, spec: &DisorderSpec) -> Result<TruncationDecomposition> {
    params.validate()?;
    if params.n != j.dim() {
        return Err(Error::Config(format!(
            "truncation levels were built for N={} but the tensor has dimension {}",
            params.n,
            j.dim()
        )));
    }
    let p = j.order();
    let n = j.dim();
    let constants = class_constants(p, spec, params)?;
    let levels = params.j_levels as usize + 1;
    let mut small = SymmetricTensor::zeros(p, n)?;
    let mut scales = vec![SymmetricTensor::zeros(p, n)?; levels];
    let mut large = SymmetricTensor::zeros(p, n)?;
    let mut tail = SymmetricTensor::zeros(p, n)?;

    let small_r = params.small_range(p);
    let scale_rs: Vec<AbsRange> = (0..levels as u32).map(|k| params.scale_range(k)).collect();
    let large_r = params.large_range();
    let entries = j.entries();
    for_each_canonical(n, p, |r, idx| {
        let mult = multiplicity_sorted(idx);
        let c = constants.iter().find(|c| c.multiplicity == mult).expect("every class present");
        let v = entries[r];
        let hit = |range: &AbsRange| if range.contains(v) { v } else { 0.0 };
        small.entries_mut()[r] = hit(&small_r) - c.small;
        if p == 1 {
            tail.entries_mut()[r] = if small_r.contains(v) { 0.0 } else { v } - c.tail;
        } else {
            for (k, sr) in scale_rs.iter().enumerate() {
                scales[k].entries_mut()[r] = hit(sr) - c.scales[k];
            }
            large.entries_mut()[r] = hit(&large_r) - c.large;
            tail.entries_mut()[r] = hit(&params.tail_range(p)) - c.tail;
        }
    });
    Ok(TruncationDecomposition {
        params: params.clone(),
        small,
        scales,
        large,
        tail,
        constants,
    })
}

/// Per-class `(multiplicity, lower, Var(J^small), target)` with `lower = target(1 - δ̃)`
/// and `δ̃ = 2 E[J² 1{|J| > level}] / target`.
pub fn variance_sandwich(p: usize, spec: &DisorderSpec, params: &TruncationParams) -> Result<Vec<(u64, f64, f64, f64)>> {
    Ok(class_constants(p, spec, params)?
        .into_iter()
        .map(|c| {
            let delta_tilde = 2.0 * c.excess_second_moment / c.target;
            (c.multiplicity, c.target * (1.0 - delta_tilde), c.small_variance, c.target)
        })
        .collect())
}

/// `J^mod = J^small + c·R` with independent Rademacher `R` and per-class `c` restoring variance `1/multiplicity`.
///
/// Returns the tensor and the `(multiplicity, c)` pairs.
pub fn variance_topup(
    small: &SymmetricTensor,
    spec: &DisorderSpec,
    params: &TruncationParams,
    seed: u64,
) -> Result<(SymmetricTensor, Vec<(u64, f64)>)> {
    let p = small.order();
    let n = small.dim();
    let mut cs = Vec::new();
    for c in class_constants(p, spec, params)? {
        let gap = c.target - c.small_variance;
        if gap < -1e-12 * c.target {
            return Err(Error::Invariant(format!(
                "truncated variance {} exceeds target {} for multiplicity {}",
                c.small_variance, c.target, c.multiplicity
            )));
        }
        cs.push((c.multiplicity, gap.max(0.0).sqrt()));
    }
    let mut out = small.clone();
    if cs.iter().all(|(_, c)| *c == 0.0) {
        return Ok((out, cs));
    }
    let family = StreamFamily::new(seed, Purpose::Topup, p as u64);
    let total = canonical_count(n, p);
    out.entries_mut()[..total]
        .par_chunks_mut(SAMPLE_CHUNK)
        .enumerate()
        .for_each(|(chunk_id, chunk)| {
            let mut rng = family.stream(chunk_id as u64);
            let mut idx = canonical_unrank(chunk_id * SAMPLE_CHUNK, p);
            for (k, slot) in chunk.iter_mut().enumerate() {
                if k > 0 {
                    super::advance_sorted(&mut idx);
                }
                let mult = multiplicity_sorted(&idx);
                let c = cs.iter().find(|(m, _)| *m == mult).map(|(_, c)| *c).unwrap_or(0.0);
                let r = DisorderSpec::Rademacher.sample(&mut rng);
                *slot += c * r;
            }
        });
    Ok((out, cs))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::disorder::sample_tensor;
    use statrs::function::erf::erfc;

    #[test]
    fn default_levels_are_ordered() {
        for n in [300, 1024, 5000] {
            for p in 1..=3 {
                let t = TruncationParams::with_defaults(n, p, None).unwrap();
                assert!((t.m * 2f64.powi(t.j_levels as i32) - t.eta * (n as f64).sqrt()).abs() < 1e-9);
            }
        }
        assert!(TruncationParams::new(1024, 0.5, 2.0, 0.3, 0.5).is_err());
        // one dyadic level already overshoots delta at this size
        assert!(TruncationParams::with_defaults(64, 1, None).is_err());
        TruncationParams::bai_yin(1000, 2).unwrap();
    }

    #[test]
    fn bounded_family_stays_small() {
        let params = TruncationParams::new(256, 2.0, 2.0, 0.5, 0.8).unwrap();
        let j = sample_tensor(2, 256, &DisorderSpec::Rademacher, 3).unwrap();
        // off-diagonal entries are ±1/√2 and diagonal ±1, all within M/2 = 1
        let d = truncate(&j, &params, &DisorderSpec::Rademacher).unwrap();
        assert_eq!(d.small, j);
        assert!(d.tail.entries().iter().all(|&v| v == 0.0));
        assert!(d.large.entries().iter().all(|&v| v == 0.0));
        assert!(d.scales.iter().all(|s| s.entries().iter().all(|&v| v == 0.0)));
        let (jmod, cs) = variance_topup(&d.small, &DisorderSpec::Rademacher, &params, 1).unwrap();
        assert!(cs.iter().all(|(_, c)| *c == 0.0));
        assert_eq!(jmod, j);
    }

    #[test]
    fn gaussian_constants_vanish_and_reconstruct() {
        let params = TruncationParams::with_defaults(400, 2, None).unwrap();
        let j = sample_tensor(2, 400, &DisorderSpec::Gaussian, 8).unwrap();
        let d = truncate(&j, &params, &DisorderSpec::Gaussian).unwrap();
        for c in &d.constants {
            assert_eq!(c.small, 0.0);
        }
        let back = d.reconstruct().unwrap();
        assert!(back.sub(&j).unwrap().sup_norm() <= 1e-12);
        assert!(d.small.sup_norm() <= params.m);
    }

    #[test]
    fn gaussian_p1_topup_constant() {
        // Var(J^small) = E[X² 1{|X|<=2}] = 1 - 2(2φ(2) + P(X>2)) for M1 = 4
        let params = TruncationParams::new(256, 4.0, 4.0, 0.25, 0.5).unwrap();
        let phi2 = (-2.0f64).exp() / (2.0 * std::f64::consts::PI).sqrt();
        let var_small = 1.0 - 2.0 * (2.0 * phi2 + 0.5 * erfc(2.0 / 2f64.sqrt()));
        let j = sample_tensor(1, 256, &DisorderSpec::Gaussian, 2).unwrap();
        let d = truncate(&j, &params, &DisorderSpec::Gaussian).unwrap();
        let (_, cs) = variance_topup(&d.small, &DisorderSpec::Gaussian, &params, 3).unwrap();
        assert!((cs[0].1 - (1.0 - var_small).sqrt()).abs() < 1e-12);
    }

    #[test]
    fn contaminated_reconstruction_uses_all_pieces() {
        let spec = DisorderSpec::TwoPointContaminated { eps: 0.01, scale: 10.0 };
        let params = TruncationParams::with_defaults(1024, 2, None).unwrap();
        let j = sample_tensor(2, 1024, &spec, 4).unwrap();
        let d = truncate(&j, &params, &spec).unwrap();
        let total: f64 = d.constants.iter().map(|c| c.small + c.scales.iter().sum::<f64>() + c.large + c.tail).sum();
        assert!(total.abs() < 1e-10, "constants should telescope to zero, got {total}");
        assert!(d.reconstruct().unwrap().sub(&j).unwrap().sup_norm() <= 1e-8);
    }
}
