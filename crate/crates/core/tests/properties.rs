use proptest::prelude::*;

use spinglass_core::disorder::{sample_disorder, sample_tensor, truncate, variance_topup, DisorderSpec, TruncationParams};
use spinglass_core::free_energy::{free_energy_ti, geometric_grid, lindeberg_derivatives, GibbsSamplerConfig, LindebergInstance};
use spinglass_core::ground_state::{solve_gs, solve_gs_hamiltonian, GsSolverConfig};
use spinglass_core::injective::injective_norm;
use spinglass_core::multiplicity;
use spinglass_core::parisi::{cs_functional, cs_functional_quadrature, minimize_cs, MinimizerConfig, RSBProfile};
use spinglass_core::{DomainSpec, Hamiltonian, MixtureSpec, SpeciesPartition, SymmetricTensor};

fn family() -> impl Strategy<Value = DisorderSpec> {
    prop_oneof![
        Just(DisorderSpec::Gaussian),
        Just(DisorderSpec::Rademacher),
        Just(DisorderSpec::Uniform),
        (4.5f64..12.0).prop_map(|nu| DisorderSpec::student_t(nu).unwrap()),
        (0.01f64..0.2, 2.0f64..8.0).prop_map(|(e, s)| DisorderSpec::contaminated(e, s).unwrap()),
    ]
}

/// Sorted breakpoints in `(0, 1)` and non-decreasing values in `[0, 1]`.
fn profile() -> impl Strategy<Value = RSBProfile> {
    (1usize..=4).prop_flat_map(|k| {
        (proptest::collection::vec(0.01f64..1.0, k + 1), proptest::collection::vec(0.0f64..1.0, k)).prop_map(
            move |(gaps, mut ms)| {
                let total: f64 = gaps.iter().sum();
                let mut acc = 0.0;
                let qs: Vec<f64> = gaps[..k]
                    .iter()
                    .map(|g| {
                        acc += g / total;
                        acc
                    })
                    .collect();
                ms.sort_by(f64::total_cmp);
                RSBProfile::new(qs, ms).unwrap()
            },
        )
    })
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(16))]

    #[test]
    fn truncation_reconstructs_and_bounds_small(spec in family(), n in 16usize..=48, p in 1usize..=3, seed in 0u64..1000) {
        let j = sample_tensor(p, n, &spec, seed).unwrap();
        let params = TruncationParams::with_defaults(n, 3, Some(0.5)).unwrap();
        let dec = truncate(&j, &params, &spec).unwrap();
        let err = dec.reconstruct().unwrap().sub(&j).unwrap().sup_norm();
        prop_assert!(err <= 1e-8, "reconstruction error {err}");
        let cap = if p == 1 { params.m1 } else { params.m };
        prop_assert!(dec.small.sup_norm() <= cap, "{} > {cap}", dec.small.sup_norm());
    }

    #[test]
    fn topup_restores_class_variances(spec in family(), n in 16usize..=40, p in 1usize..=3, seed in 0u64..1000) {
        let j = sample_tensor(p, n, &spec, seed).unwrap();
        let params = TruncationParams::with_defaults(n, 3, Some(0.5)).unwrap();
        let dec = truncate(&j, &params, &spec).unwrap();
        let (jmod, cs) = variance_topup(&dec.small, &spec, &params, seed).unwrap();
        prop_assert!(jmod.sup_norm() <= params.m.max(params.m1) + 1.0);
        for (mult, c) in cs {
            let class = dec.class(mult).unwrap();
            prop_assert!(c >= 0.0);
            let var = class.small_variance + c * c;
            prop_assert!((var - 1.0 / mult as f64).abs() <= 1e-12, "mult {mult}: {var}");
        }
    }

    #[test]
    fn sampling_is_deterministic(spec in family(), n in 1usize..=30, p in 1usize..=3, seed in any::<u64>()) {
        let a = sample_tensor(p, n, &spec, seed).unwrap();
        let b = sample_tensor(p, n, &spec, seed).unwrap();
        prop_assert_eq!(a.entries().iter().map(|v| v.to_bits()).collect::<Vec<_>>(),
                        b.entries().iter().map(|v| v.to_bits()).collect::<Vec<_>>());
    }

    #[test]
    fn permutation_symmetric_lookup(n in 2usize..=6, seed in 0u64..1000, idx in proptest::collection::vec(0usize..6, 3)) {
        let t = sample_tensor(3, n, &DisorderSpec::Gaussian, seed).unwrap();
        let idx: Vec<usize> = idx.iter().map(|i| i % n).collect();
        let v = t.get(&idx).unwrap();
        for perm in [[0, 2, 1], [1, 0, 2], [1, 2, 0], [2, 0, 1], [2, 1, 0]] {
            let q: Vec<usize> = perm.iter().map(|&k| idx[k]).collect();
            prop_assert_eq!(t.get(&q).unwrap(), v);
        }
        prop_assert!(multiplicity(&idx) >= 1);
    }

    #[test]
    fn solver_output_is_feasible(n in 6usize..=24, seed in 0u64..1000, q in 2.5f64..6.0) {
        let mix = MixtureSpec::new(vec![0.0, 1.0, 0.7]).unwrap();
        let j = sample_disorder(&mix, n, &DisorderSpec::Gaussian, seed).unwrap();
        let cfg = GsSolverConfig { restarts: 2, ..Default::default() };
        let g2 = SymmetricTensor::from_entries(2, 2, vec![0.5, 1.0, 0.3]).unwrap();
        let g3 = SymmetricTensor::from_entries(3, 2, vec![0.2, 0.4, 0.1, 0.6]).unwrap();
        let part = SpeciesPartition::contiguous(&[n / 2, n - n / 2], vec![None, Some(g2), Some(g3)]).unwrap();
        for domain in [DomainSpec::L2Sphere, DomainSpec::lq(q).unwrap(), DomainSpec::ProductSpheres(part)] {
            let gs = solve_gs(&j, &mix, &domain, &cfg, seed).unwrap();
            prop_assert!(gs.argmax.residual() <= 1e-9, "{} residual {}", domain.name(), gs.argmax.residual());
            prop_assert!(gs.value.is_finite());
        }
    }

    #[test]
    fn best_value_grows_with_restarts(n in 8usize..=30, seed in 0u64..1000) {
        let mix = MixtureSpec::pure(3, 1.0).unwrap();
        let j = sample_disorder(&mix, n, &DisorderSpec::Uniform, seed).unwrap();
        let mut last = f64::NEG_INFINITY;
        for restarts in 1..=4 {
            let cfg = GsSolverConfig { restarts, ..Default::default() };
            let v = solve_gs(&j, &mix, &DomainSpec::L2Sphere, &cfg, seed).unwrap().value;
            prop_assert!(v >= last);
            last = v;
        }
    }

    #[test]
    fn solver_is_scale_equivariant(n in 8usize..=30, seed in 0u64..1000, c in 0.1f64..10.0) {
        let mix = MixtureSpec::new(vec![0.0, 0.5, 1.0]).unwrap();
        let j = sample_disorder(&mix, n, &DisorderSpec::Gaussian, seed).unwrap();
        let h = Hamiltonian::new(j, &mix).unwrap();
        let cfg = GsSolverConfig { restarts: 3, tolerance: 1e-10, ..Default::default() };
        let a = solve_gs_hamiltonian(&h, &DomainSpec::L2Sphere, &cfg, seed).unwrap().value;
        let b = solve_gs_hamiltonian(&h.scaled(c), &DomainSpec::L2Sphere, &cfg, seed).unwrap().value;
        prop_assert!((b - c * a).abs() <= 1e-6 * (c * a).abs(), "{b} vs {}", c * a);
    }

    #[test]
    fn closed_form_matches_quadrature(profile in profile(), beta in 0.1f64..5.0, g2 in 0.0f64..1.5, g3 in 0.1f64..1.5) {
        let mix = MixtureSpec::new(vec![0.0, g2, g3]).unwrap();
        let a = cs_functional(&profile, &mix, beta).unwrap().value;
        let b = cs_functional_quadrature(&profile, &mix, beta).unwrap().value;
        prop_assert!((a - b).abs() <= 1e-8 * a.abs().max(1.0), "{a} vs {b}");
    }

    #[test]
    fn minimized_value_is_a_lower_certificate(profile in profile(), beta in 0.3f64..3.0) {
        let mix = MixtureSpec::new(vec![0.0, 1.0, 0.5]).unwrap();
        let best = minimize_cs(&mix, beta, profile.atoms(), &MinimizerConfig::default()).unwrap();
        let v = cs_functional(&profile, &mix, beta).unwrap().value;
        prop_assert!(v >= best.value.value - 1e-9 * v.abs().max(1.0), "{v} < {}", best.value.value);
    }

    #[test]
    fn lindeberg_convexity_and_slope(
        a in proptest::collection::vec(-3.0f64..3.0, 1..20),
        beta in 0.05f64..10.0,
        xi in -3.0f64..3.0,
    ) {
        let b: Vec<f64> = a.iter().map(|v| (v * 7.1).sin()).collect();
        let inst = LindebergInstance::new(a, b, beta).unwrap();
        let (d1, d2, d3) = lindeberg_derivatives(&inst, xi);
        prop_assert!(d2 >= 0.0);
        prop_assert!(d1.abs() <= inst.a_sup() * (1.0 + 1e-12));
        prop_assert!(d3.abs() <= 6.0 * beta * beta * inst.a_sup().powi(3));
    }

    #[test]
    fn banach_identity_on_small_tensors(n in 2usize..=4, p in 2usize..=3, seed in 0u64..1000) {
        let t = sample_tensor(p, n, &DisorderSpec::Gaussian, seed).unwrap();
        let r = injective_norm(&t, 30, seed).unwrap();
        prop_assert!(r.banach_gap() <= 1e-6, "{} vs {}", r.value, r.diagonal);
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(4))]

    #[test]
    fn free_energy_stays_below_ground_state(seed in 0u64..1000, beta in 0.5f64..4.0) {
        let mix = MixtureSpec::pure(2, 1.0).unwrap();
        let n = 60;
        let j = sample_disorder(&mix, n, &DisorderSpec::Gaussian, seed).unwrap();
        let cfg = GibbsSamplerConfig { sweeps: 150, burn_in: 50, ..Default::default() };
        let fe = free_energy_ti(&j, &mix, &geometric_grid(beta, 10).unwrap(), &cfg, seed).unwrap();
        let gs = solve_gs(&j, &mix, &DomainSpec::L2Sphere, &GsSolverConfig::default(), seed).unwrap();
        prop_assert!(fe.value <= gs.per_site() + 3.0 * fe.std_error, "{} > {}", fe.value, gs.per_site());
        prop_assert!(fe.mean_energy.windows(2).all(|w| w[1] >= w[0] - 0.1));
    }
}
