//! Configuration domains: the sphere, ℓq spheres and products of spheres.

use rand::Rng;
use rand_distr::{Distribution, Gamma, StandardNormal};

use crate::error::{Error, Result};
use crate::tensor::SymmetricTensor;

/// Feasibility tolerance on the relative constraint residual.
pub const FEASIBILITY_TOL: f64 = 1e-9;

/// Species blocks with their radii and coupling tensors.
#[derive(Debug, Clone, PartialEq)]
pub struct SpeciesPartition {
    species_of: Vec<usize>,
    lambdas: Vec<f64>,
    /// `couplings[p - 1]` is `Γ^(p)`, an order-`p` tensor over species, if present.
    couplings: Vec<Option<SymmetricTensor>>,
}

impl SpeciesPartition {
    /// `species_of[i]` is the species of coordinate `i`; `lambdas[s]` the squared radius per site.
    pub fn new(
        species_of: Vec<usize>,
        lambdas: Vec<f64>,
        couplings: Vec<Option<SymmetricTensor>>,
    ) -> Result<Self> {
        let r = lambdas.len();
        if r == 0 {
            return Err(Error::Config("species partition needs at least one species".into()));
        }
        if species_of.is_empty() {
            return Err(Error::Config("species partition over zero coordinates".into()));
        }
        if let Some(&s) = species_of.iter().find(|&&s| s >= r) {
            return Err(Error::Config(format!("coordinate assigned to species {s} of {r}")));
        }
        for s in 0..r {
            if !species_of.contains(&s) {
                return Err(Error::Config(format!("species {s} has no coordinates")));
            }
        }
        if let Some(l) = lambdas.iter().find(|l| !(l.is_finite() && **l > 0.0)) {
            return Err(Error::Config(format!("species weight {l} is not positive")));
        }
        for (k, c) in couplings.iter().enumerate() {
            if let Some(g) = c {
                if g.order() != k + 1 || g.dim() != r {
                    return Err(Error::Shape(format!(
                        "coupling for order {} must be an order-{} tensor over {r} species",
                        k + 1,
                        k + 1
                    )));
                }
                if g.entries().iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
                    return Err(Error::Config(format!("order-{} couplings must be non-negative", k + 1)));
                }
            }
        }
        if couplings.iter().all(|c| c.as_ref().is_none_or(|g| g.entries().iter().all(|&v| v == 0.0))) {
            return Err(Error::Config("all species couplings vanish".into()));
        }
        Ok(Self {
            species_of,
            lambdas,
            couplings,
        })
    }

    /// Contiguous blocks of the given sizes with `λ_s = N_s / N`.
    pub fn contiguous(sizes: &[usize], couplings: Vec<Option<SymmetricTensor>>) -> Result<Self> {
        let n: usize = sizes.iter().sum();
        let species_of = sizes
            .iter()
            .enumerate()
            .flat_map(|(s, &len)| std::iter::repeat_n(s, len))
            .collect();
        let lambdas = sizes.iter().map(|&len| len as f64 / n as f64).collect();
        Self::new(species_of, lambdas, couplings)
    }

    pub fn dim(&self) -> usize {
        self.species_of.len()
    }

    pub fn species_count(&self) -> usize {
        self.lambdas.len()
    }

    pub fn species_of(&self) -> &[usize] {
        &self.species_of
    }

    pub fn lambdas(&self) -> &[f64] {
        &self.lambdas
    }

    /// `Γ^(p)` if supplied.
    pub fn coupling(&self, p: usize) -> Option<&SymmetricTensor> {
        self.couplings.get(p.wrapping_sub(1)).and_then(|c| c.as_ref())
    }

    pub fn max_order(&self) -> usize {
        self.couplings.len()
    }

    pub fn block_sizes(&self) -> Vec<usize> {
        let mut sizes = vec![0; self.species_count()];
        for &s in &self.species_of {
            sizes[s] += 1;
        }
        sizes
    }

    /// Coordinates of species `s`.
    pub fn block(&self, s: usize) -> Vec<usize> {
        (0..self.dim()).filter(|&i| self.species_of[i] == s).collect()
    }
}

/// The constraint set a configuration lives on.
#[derive(Debug, Clone, PartialEq)]
pub enum DomainSpec {
    /// `‖σ‖₂² = N`.
    L2Sphere,
    /// `‖σ‖_q^q = N` with `q > 2`.
    LqSphere { q: f64 },
    /// `‖σ_s‖₂² = λ_s N` for every species `s`.
    ProductSpheres(SpeciesPartition),
}

impl DomainSpec {
    pub fn lq(q: f64) -> Result<Self> {
        if !(q.is_finite() && q > 2.0) {
            return Err(Error::Config(format!("ℓq sphere needs q > 2, got {q}")));
        }
        Ok(Self::LqSphere { q })
    }

    pub fn name(&self) -> String {
        match self {
            Self::L2Sphere => "l2".into(),
            Self::LqSphere { q } => format!("lq:{q}"),
            Self::ProductSpheres(p) => format!("product:{}", p.species_count()),
        }
    }

    /// Checks the domain is usable in dimension `n`.
    pub fn validate(&self, n: usize) -> Result<()> {
        if n == 0 {
            return Err(Error::Shape("dimension must be positive".into()));
        }
        match self {
            Self::L2Sphere => Ok(()),
            Self::LqSphere { q } => {
                if *q > 2.0 && q.is_finite() {
                    Ok(())
                } else {
                    Err(Error::Config(format!("ℓq sphere needs q > 2, got {q}")))
                }
            }
            Self::ProductSpheres(p) => {
                if p.dim() == n {
                    Ok(())
                } else {
                    Err(Error::Shape(format!("partition covers {} coordinates, not {n}", p.dim())))
                }
            }
        }
    }

    /// Largest relative violation of the constraints at `x`.
    pub fn residual(&self, x: &[f64]) -> f64 {
        let n = x.len() as f64;
        match self {
            Self::L2Sphere => (sq_norm(x) - n).abs() / n,
            Self::LqSphere { q } => (x.iter().map(|v| v.abs().powf(*q)).sum::<f64>() - n).abs() / n,
            Self::ProductSpheres(p) => {
                let mut norms = vec![0.0; p.species_count()];
                for (v, &s) in x.iter().zip(&p.species_of) {
                    norms[s] += v * v;
                }
                norms
                    .iter()
                    .zip(&p.lambdas)
                    .map(|(a, l)| (a - l * n).abs() / (l * n))
                    .fold(0.0, f64::max)
            }
        }
    }

    /// Radial projection onto the constraint set (blockwise for products).
    pub fn retract(&self, x: &mut [f64]) -> Result<()> {
        let n = x.len() as f64;
        match self {
            Self::L2Sphere => rescale(x, n.sqrt() / sq_norm(x).sqrt()),
            Self::LqSphere { q } => {
                let norm = x.iter().map(|v| v.abs().powf(*q)).sum::<f64>().powf(1.0 / q);
                rescale(x, n.powf(1.0 / q) / norm)
            }
            Self::ProductSpheres(p) => {
                let mut norms = vec![0.0; p.species_count()];
                for (v, &s) in x.iter().zip(&p.species_of) {
                    norms[s] += v * v;
                }
                let factors: Vec<f64> = norms
                    .iter()
                    .zip(&p.lambdas)
                    .map(|(a, l)| (l * n).sqrt() / a.sqrt())
                    .collect();
                if factors.iter().any(|f| !f.is_finite()) {
                    return Err(Error::Numeric("cannot retract a vanishing species block".into()));
                }
                for (v, &s) in x.iter_mut().zip(&p.species_of) {
                    *v *= factors[s];
                }
                Ok(())
            }
        }
    }

    /// Removes from `g` its component normal to the constraint surface at `x`.
    pub fn project_tangent(&self, x: &[f64], g: &mut [f64]) {
        match self {
            Self::L2Sphere => remove_component(g, x),
            Self::LqSphere { q } => {
                let normal: Vec<f64> = x.iter().map(|v| v.signum() * v.abs().powf(q - 1.0)).collect();
                remove_component(g, &normal);
            }
            Self::ProductSpheres(p) => {
                let r = p.species_count();
                let mut gx = vec![0.0; r];
                let mut xx = vec![0.0; r];
                for ((gi, xi), &s) in g.iter().zip(x).zip(&p.species_of) {
                    gx[s] += gi * xi;
                    xx[s] += xi * xi;
                }
                for ((gi, xi), &s) in g.iter_mut().zip(x).zip(&p.species_of) {
                    if xx[s] > 0.0 {
                        *gi -= gx[s] / xx[s] * xi;
                    }
                }
            }
        }
    }

    /// Draws a point from the uniform (cone) measure on the domain.
    pub fn sample<R: Rng + ?Sized>(&self, n: usize, rng: &mut R) -> Result<Vec<f64>> {
        self.validate(n)?;
        let mut x: Vec<f64> = match self {
            Self::LqSphere { q } => {
                let gamma = Gamma::new(1.0 / q, 1.0).map_err(|e| Error::Numeric(e.to_string()))?;
                (0..n)
                    .map(|_| {
                        let mag: f64 = gamma.sample(rng);
                        let sign = if rng.random::<bool>() { 1.0 } else { -1.0 };
                        sign * mag.powf(1.0 / q)
                    })
                    .collect()
            }
            _ => (0..n).map(|_| StandardNormal.sample(rng)).collect(),
        };
        self.retract(&mut x)?;
        Ok(x)
    }
}

fn sq_norm(x: &[f64]) -> f64 {
    x.iter().map(|v| v * v).sum()
}

fn remove_component(g: &mut [f64], n: &[f64]) {
    let nn: f64 = n.iter().map(|v| v * v).sum();
    if nn == 0.0 {
        return;
    }
    let c = g.iter().zip(n).map(|(a, b)| a * b).sum::<f64>() / nn;
    for (gi, ni) in g.iter_mut().zip(n) {
        *gi -= c * ni;
    }
}

fn rescale(x: &mut [f64], f: f64) -> Result<()> {
    if !f.is_finite() {
        return Err(Error::Numeric("cannot retract the zero vector".into()));
    }
    for v in x.iter_mut() {
        *v *= f;
    }
    Ok(())
}

/// A point together with the domain it belongs to.
#[derive(Debug, Clone, PartialEq)]
pub struct SpinConfiguration {
    coords: Vec<f64>,
    domain: DomainSpec,
}

impl SpinConfiguration {
    /// Wraps `coords`, rejecting points off the domain.
    pub fn new(coords: Vec<f64>, domain: DomainSpec) -> Result<Self> {
        domain.validate(coords.len())?;
        let r = domain.residual(&coords);
        if !(r <= FEASIBILITY_TOL) {
            return Err(Error::Domain(format!(
                "configuration violates the {} constraint (relative residual {r:.3e})",
                domain.name()
            )));
        }
        Ok(Self { coords, domain })
    }

    /// Retracts `coords` onto the domain first.
    pub fn projected(mut coords: Vec<f64>, domain: DomainSpec) -> Result<Self> {
        domain.validate(coords.len())?;
        domain.retract(&mut coords)?;
        Self::new(coords, domain)
    }

    pub fn on_sphere(coords: Vec<f64>) -> Result<Self> {
        Self::new(coords, DomainSpec::L2Sphere)
    }

    pub fn coords(&self) -> &[f64] {
        &self.coords
    }

    pub fn into_coords(self) -> Vec<f64> {
        self.coords
    }

    pub fn domain(&self) -> &DomainSpec {
        &self.domain
    }

    pub fn dim(&self) -> usize {
        self.coords.len()
    }

    pub fn residual(&self) -> f64 {
        self.domain.residual(&self.coords)
    }

    pub fn overlap(&self, other: &Self) -> f64 {
        self.coords.iter().zip(&other.coords).map(|(a, b)| a * b).sum::<f64>() / self.dim() as f64
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn samples_are_feasible() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let part = SpeciesPartition::contiguous(
            &[3, 5],
            vec![None, Some(SymmetricTensor::from_entries(2, 2, vec![0.0, 1.0, 0.0]).unwrap())],
        )
        .unwrap();
        for d in [DomainSpec::L2Sphere, DomainSpec::lq(3.0).unwrap(), DomainSpec::ProductSpheres(part)] {
            let x = d.sample(8, &mut rng).unwrap();
            assert!(d.residual(&x) < 1e-12, "{}", d.name());
            SpinConfiguration::new(x, d).unwrap();
        }
    }

    #[test]
    fn rejects_infeasible_points() {
        assert!(matches!(
            SpinConfiguration::on_sphere(vec![1.0, 1.0, 0.0]),
            Err(Error::Domain(_))
        ));
        assert!(DomainSpec::lq(2.0).is_err());
        assert!(SpeciesPartition::contiguous(&[2, 0], vec![None]).is_err());
    }

    #[test]
    fn product_retraction_is_blockwise() {
        let part = SpeciesPartition::new(
            vec![0, 1, 0, 1],
            vec![0.25, 0.75],
            vec![Some(SymmetricTensor::from_entries(1, 2, vec![1.0, 1.0]).unwrap())],
        )
        .unwrap();
        let d = DomainSpec::ProductSpheres(part);
        let mut x = vec![1.0, 2.0, 3.0, 4.0];
        d.retract(&mut x).unwrap();
        assert!((x[0] * x[0] + x[2] * x[2] - 1.0).abs() < 1e-12);
        assert!((x[1] * x[1] + x[3] * x[3] - 3.0).abs() < 1e-12);
    }
}
