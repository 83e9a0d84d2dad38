use serde::{Deserialize, Serialize};

use super::DisorderSpec;
use crate::error::{Error, Result};

/// Moment diagnostics of a standardized entry law at interaction order `p`.
#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct MomentReport {
    pub family: String,
    pub p: usize,
    pub eps: f64,
    /// `(m, E|x|^m)` for `m = 1..=2p` and `m = 2p + eps`; infinite entries diverge.
    pub moments: Vec<(f64, f64)>,
    /// `(s, s^{2p} P[|x| >= s])` on a geometric grid of `s`.
    pub tail_decay: Vec<(f64, f64)>,
    /// Whether `E|x|^{2p+eps}` is finite.
    pub c_eps_satisfied: bool,
    /// The smallest admissible constant `C`, i.e. `E|x|^{2p+eps}`.
    pub c_eps_constant: f64,
    /// Whether `E|x|^{2p}` is finite.
    pub finite_2p_moment: bool,
    /// Whether `s^{2p} P[|x| >= s] → 0`.
    pub lee_yin: bool,
}

impl MomentReport {
    /// Name of the first violated hypothesis among `(C,ε)` bounds, finite `2p`-th moment, tail decay.
    pub fn violation(&self, requirement: MomentRequirement) -> Option<String> {
        let two_p = 2 * self.p;
        match requirement {
            MomentRequirement::CEps if !self.c_eps_satisfied => Some(format!(
                "{} has infinite moment of order {} (needed for (C,ε)-moment bounds at p={})",
                self.family,
                two_p as f64 + self.eps,
                self.p
            )),
            MomentRequirement::Finite2p if !self.finite_2p_moment => {
                Some(format!("{} has infinite moment of order {two_p} at p={}", self.family, self.p))
            }
            MomentRequirement::LeeYin if !self.lee_yin => Some(format!(
                "{} violates the tail condition s^{two_p} P[|x|>=s] -> 0 at p={}",
                self.family, self.p
            )),
            _ => None,
        }
    }
}

/// Which moment hypothesis an experiment declares.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MomentRequirement {
    CEps,
    Finite2p,
    LeeYin,
}

/// Builds the moment report of `spec` for order `p` and exponent slack `eps ∈ (0, 1)`.
pub fn moment_report(spec: &DisorderSpec, p: usize, eps: f64) -> Result<MomentReport> {
    if !(eps > 0.0 && eps < 1.0) {
        return Err(Error::Domain(format!("eps must lie in (0, 1), got {eps}")));
    }
    if p == 0 {
        return Err(Error::Domain("order must be at least 1".into()));
    }
    spec.validate()?;
    let two_p = (2 * p) as f64;
    let mut moments: Vec<(f64, f64)> = (1..=2 * p)
        .map(|m| {
            let m = m as f64;
            let v = if spec.has_finite_moment(m) { spec.abs_moment(m) } else { f64::INFINITY };
            (m, v)
        })
        .collect();
    let top = two_p + eps;
    let c = if spec.has_finite_moment(top) { spec.abs_moment(top) } else { f64::INFINITY };
    moments.push((top, c));

    let tail_decay = (0..12)
        .map(|k| {
            let s = 2f64.powi(k);
            (s, s.powf(two_p) * spec.tail_prob(s))
        })
        .collect();

    let lee_yin = match *spec {
        DisorderSpec::StudentT { nu } => nu > two_p,
        _ => true,
    };
    Ok(MomentReport {
        family: spec.tag(),
        p,
        eps,
        moments,
        tail_decay,
        c_eps_satisfied: c.is_finite(),
        c_eps_constant: c,
        finite_2p_moment: spec.has_finite_moment(two_p),
        lee_yin,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gaussian_p2() {
        let r = moment_report(&DisorderSpec::Gaussian, 2, 0.5).unwrap();
        assert!((r.moments[3].1 - 3.0).abs() < 1e-12);
        assert!(r.c_eps_satisfied && r.finite_2p_moment && r.lee_yin);
        assert!(r.violation(MomentRequirement::CEps).is_none());
    }

    #[test]
    fn student_t_thresholds() {
        let t3 = moment_report(&DisorderSpec::StudentT { nu: 3.0 }, 2, 0.5).unwrap();
        assert!(t3.moments[3].1.is_infinite());
        assert!(!t3.finite_2p_moment && !t3.lee_yin);
        assert!(t3.violation(MomentRequirement::Finite2p).unwrap().contains("order 4"));

        let t5 = moment_report(&DisorderSpec::StudentT { nu: 5.0 }, 2, 0.5).unwrap();
        assert!(t5.finite_2p_moment && t5.lee_yin && t5.c_eps_satisfied);
        // the tail weight s^4 P[|x|>=s] decays like s^{-1}
        let last = t5.tail_decay.last().unwrap().1;
        let mid = t5.tail_decay[6].1;
        assert!(last < mid);
    }

    #[test]
    fn moments_non_decreasing_past_two() {
        // E|x|^m is log-convex with E x² = 1, so m ↦ E|x|^m is non-decreasing for m >= 2
        for spec in [DisorderSpec::Uniform, DisorderSpec::TwoPointContaminated { eps: 0.02, scale: 6.0 }] {
            let r = moment_report(&spec, 3, 0.25).unwrap();
            for w in r.moments[1..].windows(2) {
                assert!(w[1].1 >= w[0].1 - 1e-9, "{spec}: {:?}", r.moments);
            }
        }
    }

    #[test]
    fn rejects_bad_eps() {
        assert!(moment_report(&DisorderSpec::Gaussian, 2, 1.0).is_err());
    }
}
