use crate::domain::SpinConfiguration;
use crate::error::Result;
use crate::hamiltonian::Hamiltonian;
use crate::mixture::MixtureSpec;
use crate::tensor::{for_each_canonical, SymmetricTensor};

/// A configuration concentrated on the support of one large entry.
#[derive(Debug, Clone)]
pub struct ProbeResult {
    pub sigma: SpinConfiguration,
    /// `H(σ)/N` under the pure order-`p` model built from `j` with coefficient `γ_p`.
    pub value_per_site: f64,
    pub entry: Vec<usize>,
    pub entry_value: f64,
}

/// Finds the largest entry with `|J| >= threshold` and evaluates the Hamiltonian on
/// `σ_i = ±√(N/k)` over its `k` distinct indices, signed so the entry contributes positively.
pub fn localized_probe(j: &SymmetricTensor, mix: &MixtureSpec, threshold: f64) -> Result<Option<ProbeResult>> {
    let p = j.order();
    if p < 2 {
        return Err(crate::error::Error::Domain("localized probe needs order p >= 2".into()));
    }
    let mut best: Option<(usize, Vec<usize>)> = None;
    let entries = j.entries();
    for_each_canonical(j.dim(), p, |r, idx| {
        let v = entries[r].abs();
        if v >= threshold && best.as_ref().is_none_or(|(b, _)| v > entries[*b].abs()) {
            best = Some((r, idx.to_vec()));
        }
    });
    let Some((r, idx)) = best else { return Ok(None) };
    let v = entries[r];
    let n = j.dim();
    let mut support = idx.clone();
    support.dedup();
    let k = support.len();
    let mag = (n as f64 / k as f64).sqrt();
    let mut x = vec![0.0; n];
    for &i in &support {
        x[i] = mag;
    }
    // flipping one coordinate with odd multiplicity flips the sign of the entry's monomial
    if v < 0.0 {
        let odd = support
            .iter()
            .copied()
            .find(|&i| idx.iter().filter(|&&t| t == i).count() % 2 == 1);
        if let Some(i) = odd {
            x[i] = -mag;
        }
    }
    if mix.gamma(p) == 0.0 {
        return Err(crate::error::Error::Domain(format!("mixture has no order-{p} term to probe")));
    }
    let h = Hamiltonian::new(vec![j.clone()], &MixtureSpec::pure(p, mix.gamma(p))?)?;
    let value = h.value(&x)?;
    Ok(Some(ProbeResult {
        sigma: SpinConfiguration::on_sphere(x)?,
        value_per_site: value / n as f64,
        entry: idx,
        entry_value: v,
    }))
}
