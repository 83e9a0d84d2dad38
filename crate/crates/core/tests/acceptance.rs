//! Acceptance suite: one PASS/FAIL line per criterion.
//!
//! Run with `cargo test --release -p spinglass-core --test acceptance`. Extra arguments filter
//! criteria by id (e.g. `-- ac03 ac07`). The process exits non-zero on a failed criterion only
//! when `ACCEPTANCE_STRICT=1`, so the workspace test run reports failures without aborting.

use std::time::Instant;

use rand::Rng;

use spinglass_core::disorder::{
    sample_disorder, sample_tensor, truncate, variance_sandwich, variance_topup, DisorderSpec, TruncationParams,
};
use spinglass_core::experiments::{
    init_threads_from_env, run, CouplingSpec, ExperimentConfig, ExperimentKind, ResultRow, StdErr,
};
use spinglass_core::free_energy::{
    default_deloc_cap, exchange_gap, free_energy_ti, geometric_grid, lindeberg_derivatives, lindeberg_free,
    GibbsSamplerConfig, LindebergInstance,
};
use spinglass_core::ground_state::{solve_gs, GsSolverConfig};
use spinglass_core::injective::injective_norm;
use spinglass_core::parisi::{cs_functional, cs_functional_quadrature, gs_prediction, minimize_cs, MinimizerConfig, RSBProfile};
use spinglass_core::rng::{stream, Purpose};
use spinglass_core::{DomainSpec, Error, MixtureSpec};

type Outcome = Result<Vec<Check>, Error>;
type Criterion = (&'static str, &'static str, fn() -> Outcome);

struct Check {
    label: String,
    pass: bool,
}

fn check(label: impl Into<String>, pass: bool) -> Check {
    Check { label: label.into(), pass }
}

fn rows_with<'a>(rows: &'a [ResultRow], stat: &'a str, family: &'a str) -> Vec<&'a ResultRow> {
    rows.iter().filter(|r| r.stat == stat && r.family == family).collect()
}

fn one(rows: &[ResultRow], stat: &str, family: &str) -> Result<ResultRow, Error> {
    match rows_with(rows, stat, family).as_slice() {
        [r] => Ok((*r).clone()),
        other => Err(Error::Invariant(format!("expected one '{stat}' row for {family}, found {}", other.len()))),
    }
}

fn se(r: &ResultRow) -> f64 {
    match r.stderr {
        StdErr::Value(v) => v,
        StdErr::Deterministic => 0.0,
    }
}

fn seeds(count: u64) -> Vec<u64> {
    (0..count).collect()
}

fn config(kind: ExperimentKind, gammas: Vec<f64>, families: &[&str], sizes: Vec<usize>, restarts: usize) -> ExperimentConfig {
    let families = families.iter().map(|f| f.parse().expect("valid family")).collect();
    let mut cfg = ExperimentConfig::new(kind, gammas, families, sizes, seeds(20));
    cfg.root_seed = 20_240_601;
    cfg.solver = GsSolverConfig { restarts, ..Default::default() };
    cfg
}

fn ac01() -> Outcome {
    let start = Instant::now();
    let cfg = config(ExperimentKind::Gs, vec![0.0, 1.0], &["gaussian"], vec![1000], 10);
    let rows = run(&cfg)?;
    let secs = start.elapsed().as_secs_f64();
    let mean = one(&rows, "gs_mean", "gaussian")?;
    let worst = rows_with(&rows, "oracle_rel_err", "gaussian").iter().map(|r| r.value).fold(0.0, f64::max);
    Ok(vec![
        check(format!("mean GS/N = {:.4} ± {:.4} in [1.90, 2.00]", mean.value, se(&mean)), (1.90..=2.00).contains(&mean.value)),
        check(format!("max oracle rel err = {worst:.2e} <= 1e-4"), worst <= 1e-4),
        check(format!("runtime {secs:.1}s <= 120s"), secs <= 120.0),
    ])
}

fn ac02() -> Outcome {
    let cfg = config(
        ExperimentKind::Universality,
        vec![0.0, 1.0],
        &["gaussian", "rademacher", "gaussian"],
        vec![1000],
        2,
    );
    let rows = run(&cfg)?;
    let gap = one(&rows, "gs_gap", "gaussian|rademacher")?;
    let null = one(&rows, "gs_gap", "gaussian|gaussian#2")?;

    let mut cfg3 = config(ExperimentKind::Universality, vec![0.0, 0.0, 1.0], &["gaussian", "rademacher"], vec![300], 3);
    cfg3.name = Some("universality_p3".into());
    let rows3 = run(&cfg3)?;
    let gap3 = one(&rows3, "gs_gap", "gaussian|rademacher")?;
    Ok(vec![
        check(format!("p=2 N=1000 gap = {:.4} ± {:.4} <= 0.02", gap.value, se(&gap)), gap.value <= 0.02),
        check(format!("p=3 N=300 gap = {:.4} ± {:.4} <= 0.03", gap3.value, se(&gap3)), gap3.value <= 0.03),
        check(
            format!("null gap = {:.4} <= 2 pooled se = {:.4}", null.value, 2.0 * se(&null)),
            null.value <= 2.0 * se(&null),
        ),
    ])
}

fn ac03() -> Outcome {
    let cfg = config(ExperimentKind::Baiyin, vec![0.0, 1.0], &["student_t:3", "gaussian"], vec![250, 1000, 4000], 1);
    let rows = run(&cfg)?;
    let inc = one(&rows, "increasing_fraction", "student_t:3")?;
    let spread = one(&rows, "median_spread", "gaussian")?;
    let medians: Vec<String> = rows_with(&rows, "median_ratio", "student_t:3")
        .iter()
        .map(|r| format!("{}:{:.3}", r.n.unwrap_or(0), r.value))
        .collect();
    Ok(vec![
        check(
            format!("student_t:3 ratio increasing in {:.0}% of seeds >= 80% (medians {})", 100.0 * inc.value, medians.join(" ")),
            inc.value >= 0.8,
        ),
        check(format!("gaussian median spread = {:.4} <= 0.05", spread.value), spread.value <= 0.05),
    ])
}

/// Monte Carlo variance of `J·1{|J| <= M/2}` for the entry law of one multiplicity class.
fn small_variance_mc(spec: &DisorderSpec, mult: u64, level: f64, draws: usize, seed: u64) -> (f64, f64) {
    let mut rng = stream(seed, Purpose::Audit, mult, 0);
    let scale = (1.0 / mult as f64).sqrt();
    let ys: Vec<f64> = (0..draws)
        .map(|_| {
            let x = scale * spec.sample(&mut rng);
            if x.abs() <= level {
                x
            } else {
                0.0
            }
        })
        .collect();
    let n = draws as f64;
    let mean = ys.iter().sum::<f64>() / n;
    let sq: Vec<f64> = ys.iter().map(|y| (y - mean).powi(2)).collect();
    let var = sq.iter().sum::<f64>() / (n - 1.0);
    let var_of_sq = sq.iter().map(|s| (s - var).powi(2)).sum::<f64>() / (n - 1.0);
    (var, (var_of_sq / n).sqrt())
}

fn ac04() -> Outcome {
    let families = ["gaussian", "rademacher", "uniform", "student_t:5", "two_point:0.05:4"];
    let mut recon_worst = 0.0f64;
    let mut small_ok = true;
    let mut sandwich_ok = true;
    let mut mc_worst_z = 0.0f64;
    let mut topup_worst = 0.0f64;
    for (k, name) in families.iter().enumerate() {
        let spec: DisorderSpec = name.parse()?;
        let n = 200;
        let params = TruncationParams::with_defaults(n, 2, Some(0.5))?;
        for s in 0..100u64 {
            let j = sample_tensor(2, n, &spec, 1000 * k as u64 + s)?;
            let dec = truncate(&j, &params, &spec)?;
            recon_worst = recon_worst.max(dec.reconstruct()?.sub(&j)?.sup_norm());
            small_ok &= dec.small.sup_norm() <= params.m;
            if s == 0 {
                let (_, cs) = variance_topup(&dec.small, &spec, &params, s)?;
                for (mult, c) in cs {
                    let class = dec.class(mult).expect("class present");
                    let exact = 1.0 / mult as f64;
                    topup_worst = topup_worst.max((class.small_variance + c * c - exact).abs());
                }
            }
        }
        let big = TruncationParams::with_defaults(1000, 2, Some(0.5))?;
        for (mult, lower, var, target) in variance_sandwich(2, &spec, &big)? {
            sandwich_ok &= lower <= var * (1.0 + 1e-12) && var <= target * (1.0 + 1e-12);
            let (mc, mc_se) = small_variance_mc(&spec, mult, big.m / 2.0, 1_000_000, 77 + k as u64);
            let z = if mc_se > 0.0 { (mc - var).abs() / mc_se } else { (mc - var).abs() / 1e-15 };
            mc_worst_z = mc_worst_z.max(z);
        }
    }
    Ok(vec![
        check(format!("reconstruction error max {recon_worst:.2e} <= 1e-8 over 500 instances"), recon_worst <= 1e-8),
        check("sup of small piece <= M on every instance", small_ok),
        check("analytic sandwich lower <= Var(small) <= target in every class", sandwich_ok),
        check(format!("Monte Carlo Var(small) within {mc_worst_z:.2} <= 3 se over 1e6 draws"), mc_worst_z <= 3.0),
        check(format!("topped-up variance error {topup_worst:.1e} <= 1e-12"), topup_worst <= 1e-12),
    ])
}

/// Five-point central differences of `F` at `x` for the first three derivatives.
fn five_point(inst: &LindebergInstance, x: f64, h: f64) -> (f64, f64, f64) {
    let f = |t: f64| lindeberg_free(inst, t);
    let (m2, m1, z, p1, p2) = (f(x - 2.0 * h), f(x - h), f(x), f(x + h), f(x + 2.0 * h));
    let d1 = (m2 - 8.0 * m1 + 8.0 * p1 - p2) / (12.0 * h);
    let d2 = (-m2 + 16.0 * m1 - 30.0 * z + 16.0 * p1 - p2) / (12.0 * h * h);
    let d3 = (-m2 + 2.0 * m1 - 2.0 * p1 + p2) / (2.0 * h * h * h);
    (d1, d2, d3)
}

fn ac05() -> Outcome {
    let mut rng = stream(5, Purpose::Audit, 0, 0);
    let mut bound_ok = 0;
    let mut fd_worst = 0.0f64;
    let trials = 10_000;
    for _ in 0..trials {
        let m = rng.random_range(2..=12);
        let beta = rng.random_range(0.1..4.0);
        let amp = rng.random_range(0.05..1.0);
        let a: Vec<f64> = (0..m).map(|_| amp * rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inst = LindebergInstance::new(a, b, beta)?;
        let x = rng.random_range(-2.0..2.0);
        let (d1, d2, d3) = lindeberg_derivatives(&inst, x);
        let s = inst.a_sup();
        if d3.abs() <= 6.0 * beta * beta * s.powi(3) {
            bound_ok += 1;
        }
        let h = 0.01 / (beta * s).max(1e-3);
        let (f1, f2, f3) = five_point(&inst, x, h);
        // derivative k has natural scale β^{k-1}‖a‖^k, which floors the denominator
        for (k, (d, f)) in [(d1, f1), (d2, f2), (d3, f3)].into_iter().enumerate() {
            let natural = beta.powi(k as i32) * s.powi(k as i32 + 1);
            let rel = (d - f).abs() / d.abs().max(1e-2 * natural);
            fd_worst = fd_worst.max(rel);
        }
    }
    let gauss = DisorderSpec::Gaussian;
    let rad = DisorderSpec::Rademacher;
    let mut within = 0;
    for t in 0..100u64 {
        let m = rng.random_range(2..=10);
        let beta = rng.random_range(0.2..3.0);
        let a: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let b: Vec<f64> = (0..m).map(|_| rng.random_range(-1.0..1.0)).collect();
        let inst = LindebergInstance::new(a, b, beta)?;
        let g = exchange_gap(&inst, &gauss, &rad, 20_000, t)?;
        if g.gap <= g.bound + 3.0 * g.std_error {
            within += 1;
        }
    }
    Ok(vec![
        check(format!("|F'''| <= 6β²‖a‖³ in {bound_ok}/{trials} instances"), bound_ok == trials),
        check(format!("analytic vs five-point derivatives worst rel err {fd_worst:.2e} <= 1e-3"), fd_worst <= 1e-3),
        check(format!("exchange gap within bound + 3 se in {within}/100 trials"), within == 100),
    ])
}

fn ac06() -> Outcome {
    let mut worst = 0.0f64;
    let mut converged = true;
    for s in 0..50u64 {
        let t = sample_tensor(3, 4, &DisorderSpec::Gaussian, 600 + s)?;
        let r = injective_norm(&t, 100, s)?;
        worst = worst.max(r.banach_gap());
        converged &= r.converged;
    }
    Ok(vec![
        check(format!("max |product max - diagonal max| = {worst:.2e} <= 1e-6 on 50 tensors"), worst <= 1e-6),
        check("all alternating maximizations converged", converged),
    ])
}

fn ac07() -> Outcome {
    let mut exact_worst = 0.0f64;
    let mut quad_worst = 0.0f64;
    let mut rng = stream(7, Purpose::Audit, 0, 0);
    for _ in 0..50 {
        let gammas: Vec<f64> = (0..4).map(|_| rng.random_range(0.0..1.0)).collect();
        let mix = MixtureSpec::new(gammas)?;
        let beta = rng.random_range(0.1..5.0);
        let one = cs_functional(&RSBProfile::constant_one(), &mix, beta)?.value;
        let annealed = beta * mix.xi(1.0, 0)? / 2.0;
        exact_worst = exact_worst.max((one - annealed).abs() / annealed);
        let quad = cs_functional_quadrature(&RSBProfile::constant_one(), &mix, beta)?.value;
        quad_worst = quad_worst.max((one - quad).abs() / one.abs());
    }
    let p2 = MixtureSpec::pure(2, 1.0)?;
    let pred = gs_prediction(&p2, &[100.0, 200.0, 400.0, 800.0], 3, &MinimizerConfig::default())?;
    let cs = minimize_cs(&p2, 0.5, 3, &MinimizerConfig::default())?.value.value;
    let j = sample_disorder(&p2, 1000, &DisorderSpec::Gaussian, 7)?;
    let fe = free_energy_ti(&j, &p2, &geometric_grid(0.5, 20)?, &GibbsSamplerConfig::default(), 7)?;
    Ok(vec![
        check(format!("x ≡ 1 equals βξ(1)/2 to {exact_worst:.1e} relative (rounding only)"), exact_worst <= 1e-14),
        check(format!("closed form vs quadrature {quad_worst:.1e} <= 1e-8"), quad_worst <= 1e-8),
        check(format!("gs_prediction(t²) = {:.4} within 2.00 ± 0.02", pred.value), (pred.value - 2.0).abs() <= 0.02),
        check(
            format!("MC F/N = {:.4} ± {:.4} vs minimized {:.4}, |diff| <= 0.03", fe.value, fe.std_error, cs),
            (fe.value - cs).abs() <= 0.03,
        ),
    ])
}

fn ac08() -> Outcome {
    let mut rng = stream(8, Purpose::Audit, 0, 0);
    let mut below = 0;
    let mut worst_margin = f64::NEG_INFINITY;
    let sampler = GibbsSamplerConfig::default();
    for t in 0..100u64 {
        let n = rng.random_range(20..=60);
        let mix = if t % 2 == 0 { MixtureSpec::pure(2, 1.0)? } else { MixtureSpec::new(vec![0.0, 1.0, 0.6])? };
        let beta = rng.random_range(0.5..10.0);
        let j = sample_disorder(&mix, n, &DisorderSpec::Gaussian, 800 + t)?;
        let fe = free_energy_ti(&j, &mix, &geometric_grid(beta, 20)?, &sampler, t)?;
        let gs = solve_gs(&j, &mix, &DomainSpec::L2Sphere, &GsSolverConfig::default(), t)?;
        if fe.value <= gs.per_site() {
            below += 1;
        }
        worst_margin = worst_margin.max(fe.value - gs.per_site());
    }
    let p2 = MixtureSpec::pure(2, 1.0)?;
    let j = sample_disorder(&p2, 200, &DisorderSpec::Gaussian, 850)?;
    let fe = free_energy_ti(&j, &p2, &geometric_grid(50.0, 20)?, &sampler, 850)?;
    let gs = solve_gs(&j, &p2, &DomainSpec::L2Sphere, &GsSolverConfig::default(), 850)?;
    let gap = gs.per_site() - fe.value;
    Ok(vec![
        check(format!("F/N <= GS/N in {below}/100 trials (largest F - GS = {worst_margin:.4})"), below == 100),
        check(format!("β=50, N=200: GS/N - F/N = {gap:.4} <= 0.15"), (0.0..=0.15).contains(&gap)),
    ])
}

fn ac09() -> Outcome {
    let p2 = MixtureSpec::pure(2, 1.0)?;
    let n = 500;
    let j = sample_disorder(&p2, n, &DisorderSpec::Gaussian, 9)?;
    let grid = geometric_grid(1.0, 20)?;
    let full = free_energy_ti(&j, &p2, &grid, &GibbsSamplerConfig::default(), 9)?;
    let capped_cfg = GibbsSamplerConfig { deloc_cap: Some(default_deloc_cap(n)), ..Default::default() };
    let capped = free_energy_ti(&j, &p2, &grid, &capped_cfg, 9)?;
    let diff = (capped.value - full.value).abs();
    Ok(vec![check(
        format!(
            "|F_deloc - F|/N = {diff:.4} <= 0.02 (F = {:.4} ± {:.4}, cap {:.2})",
            full.value,
            full.std_error,
            default_deloc_cap(n)
        ),
        diff <= 0.02,
    )])
}

fn ac10() -> Outcome {
    let mut pca = config(ExperimentKind::TensorPca, vec![0.0, 1.0], &["gaussian", "rademacher"], vec![500], 2);
    pca.lambdas = vec![0.0, 2.0];
    let rows = run(&pca)?;
    let det = one(&rows, "detection[lambda=2]", "gaussian")?;
    let det_r = one(&rows, "detection[lambda=2]", "rademacher")?;
    let pca_gap = one(&rows, "gs_gap[lambda=2]", "gaussian|rademacher")?;

    let mut multi = config(ExperimentKind::Multispecies, vec![0.0, 1.0], &["gaussian", "rademacher"], vec![600], 2);
    multi.species = vec![0.5, 0.5];
    multi.couplings = vec![CouplingSpec { order: 2, entries: vec![0.0, 1.0, 0.0] }];
    let mrows = run(&multi)?;
    let worst = mrows
        .iter()
        .filter(|r| r.stat == "oracle_rel_err")
        .map(|r| r.value)
        .fold(0.0, f64::max);
    let oracle_count = mrows.iter().filter(|r| r.stat == "oracle_rel_err").count();

    let mut lq = config(ExperimentKind::Lq, vec![0.0, 1.0], &["gaussian", "rademacher"], vec![300], 5);
    lq.q = Some(3.0);
    let lrows = run(&lq)?;
    let lq_gap = one(&lrows, "gs_gap", "gaussian|rademacher")?;
    let mut field = lq.clone();
    field.gammas = vec![0.3, 1.0];
    let refused = matches!(run(&field), Err(Error::Contract(_)));
    Ok(vec![
        check(
            format!("detection GS(λ=2) - GS(λ=0) = {:.3} (gaussian), {:.3} (rademacher) >= 0.3", det.value, det_r.value),
            det.value >= 0.3 && det_r.value >= 0.3,
        ),
        check(format!("PCA cross-family gap at λ=2 = {:.4} ± {:.4} <= 0.03", pca_gap.value, se(&pca_gap)), pca_gap.value <= 0.03),
        check(
            format!("bipartite GS vs singular-value oracle worst rel err {worst:.2e} <= 1e-3 ({oracle_count} instances)"),
            worst <= 1e-3 && oracle_count == 40,
        ),
        check(format!("ℓq (q=3) cross-family gap = {:.4} ± {:.4} <= 0.03", lq_gap.value, se(&lq_gap)), lq_gap.value <= 0.03),
        check("ℓq run with γ_1 != 0 refused", refused),
    ])
}

fn main() {
    if let Err(e) = init_threads_from_env() {
        eprintln!("{e}");
        std::process::exit(2);
    }
    let filters: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let criteria: [Criterion; 10] = [
        ("ac01", "p=2 Gaussian ground-state edge", ac01),
        ("ac02", "universality across disorder families", ac02),
        ("ac03", "heavy-tail growth of the spectral edge", ac03),
        ("ac04", "truncation identities", ac04),
        ("ac05", "Lindeberg exchange machinery", ac05),
        ("ac06", "symmetric-tensor injective norm identity", ac06),
        ("ac07", "Crisanti–Sommers functional", ac07),
        ("ac08", "zero-temperature bridge", ac08),
        ("ac09", "delocalized restriction", ac09),
        ("ac10", "extensions: tensor PCA, multi-species, ℓq", ac10),
    ];
    let mut passed = 0;
    let mut ran = 0;
    for (id, title, f) in criteria {
        if !filters.is_empty() && !filters.iter().any(|x| id.contains(x.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = f();
        let secs = start.elapsed().as_secs_f64();
        match outcome {
            Ok(checks) => {
                let ok = checks.iter().all(|c| c.pass);
                passed += usize::from(ok);
                println!("{} {id} {title} [{secs:.1}s]", if ok { "PASS" } else { "FAIL" });
                for c in checks {
                    println!("    {} {}", if c.pass { "ok  " } else { "FAIL" }, c.label);
                }
            }
            Err(e) => println!("FAIL {id} {title} [{secs:.1}s]\n    error: {e}"),
        }
    }
    println!("acceptance: {passed}/{ran} criteria passed");
    let strict = std::env::var("ACCEPTANCE_STRICT").is_ok_and(|v| v == "1");
    if strict && passed < ran {
        std::process::exit(1);
    }
}
