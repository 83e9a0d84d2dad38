//! The mixture function `ξ(t) = Σ γ_p² t^p`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Coefficients `γ_1..γ_P` of a mixed spherical model.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MixtureSpec {
    gammas: Vec<f64>,
}

impl MixtureSpec {
    pub fn new(gammas: Vec<f64>) -> Result<Self> {
        if gammas.is_empty() {
            return Err(Error::Config("mixture needs at least one coefficient".into()));
        }
        if let Some(g) = gammas.iter().find(|g| !g.is_finite() || **g < 0.0) {
            return Err(Error::Config(format!("mixture coefficient {g} is not a finite non-negative number")));
        }
        if gammas.iter().all(|&g| g == 0.0) {
            return Err(Error::Config("mixture needs at least one positive coefficient".into()));
        }
        Ok(Self { gammas })
    }

    /// Pure `p`-spin model with `γ_p = gamma`.
    pub fn pure(p: usize, gamma: f64) -> Result<Self> {
        if p == 0 {
            return Err(Error::Config("interaction order must be at least 1".into()));
        }
        let mut g = vec![0.0; p];
        g[p - 1] = gamma;
        Self::new(g)
    }

    /// Parses a comma-separated list such as `"0,1"`.
    pub fn parse(s: &str) -> Result<Self> {
        let gammas = s
            .split(',')
            .map(|t| {
                t.trim()
                    .parse::<f64>()
                    .map_err(|e| Error::Config(format!("bad mixture coefficient '{t}': {e}")))
            })
            .collect::<Result<Vec<_>>>()?;
        Self::new(gammas)
    }

    pub fn gammas(&self) -> &[f64] {
        &self.gammas
    }

    /// Largest interaction order `P`.
    pub fn max_order(&self) -> usize {
        self.gammas.len()
    }

    /// `γ_p` for `p` in `1..=P`, zero beyond.
    pub fn gamma(&self, p: usize) -> f64 {
        if p == 0 {
            0.0
        } else {
            self.gammas.get(p - 1).copied().unwrap_or(0.0)
        }
    }

    /// Orders with a non-zero coefficient.
    pub fn active_orders(&self) -> impl Iterator<Item = usize> + '_ {
        self.gammas
            .iter()
            .enumerate()
            .filter(|(_, g)| **g > 0.0)
            .map(|(i, _)| i + 1)
    }

    /// Same mixture with every `γ_p` multiplied by `c`; `ξ` scales by `c²`.
    pub fn scaled(&self, c: f64) -> Result<Self> {
        Self::new(self.gammas.iter().map(|g| g * c).collect())
    }

    /// `ξ(t)`, `ξ'(t)` or `ξ''(t)` for `order` 0, 1, 2.
    pub fn xi(&self, t: f64, order: u8) -> Result<f64> {
        if !(t.abs() <= 1.0) {
            return Err(Error::Domain(format!("overlap {t} outside [-1, 1]")));
        }
        if order > 2 {
            return Err(Error::Domain(format!("derivative order {order} not supported")));
        }
        Ok(self.xi_unchecked(t, order))
    }

    /// [`MixtureSpec::xi`] without the range check; used inside integrals on `[0, 1]`.
    pub(crate) fn xi_unchecked(&self, t: f64, order: u8) -> f64 {
        let mut acc = 0.0;
        for (i, g) in self.gammas.iter().enumerate() {
            let p = (i + 1) as i32;
            let c = g * g;
            if c == 0.0 {
                continue;
            }
            acc += match order {
                0 => c * t.powi(p),
                1 => c * f64::from(p) * t.powi(p - 1),
                _ => {
                    if p < 2 {
                        0.0
                    } else {
                        c * f64::from(p * (p - 1)) * t.powi(p - 2)
                    }
                }
            };
        }
        acc
    }
}

/// Evaluates `ξ`, `ξ'` or `ξ''` at `t`.
pub fn xi_eval(mix: &MixtureSpec, t: f64, order: u8) -> Result<f64> {
    mix.xi(t, order)
}
