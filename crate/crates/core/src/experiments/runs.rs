use std::collections::BTreeMap;
use std::time::Instant;

use rayon::prelude::*;

use super::{sort_rows, ExperimentConfig, ExperimentKind, ResultRow, StdErr, TruncationSchedule};
use crate::disorder::{
    localized_probe, moment_report, sample_disorder, sample_tensor, truncate, variance_sandwich,
    TruncationParams,
};
use crate::domain::{DomainSpec, SpeciesPartition};
use crate::error::{Error, Result};
use crate::free_energy::{annealed_bound, free_energy_ti_hamiltonian, geometric_grid, tempering_threshold};
use crate::ground_state::{bipartite_oracle, eigen_oracle_p2, gs_bar, solve_gs_hamiltonian};
use crate::hamiltonian::Hamiltonian;
use crate::mixture::MixtureSpec;
use crate::rng::{derive_seed, label_tag};
use crate::tensor::SymmetricTensor;

/// Runs the experiment named by `cfg.kind`.
pub fn run(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    match cfg.kind {
        ExperimentKind::Gs => run_gs(cfg),
        ExperimentKind::Fe => run_fe(cfg),
        ExperimentKind::Universality => run_universality(cfg),
        ExperimentKind::Baiyin => run_baiyin_necessity(cfg),
        ExperimentKind::TruncationAudit => run_truncation_audit(cfg),
        ExperimentKind::TensorPca => run_tensor_pca(cfg),
        ExperimentKind::Multispecies => run_multispecies(cfg),
        ExperimentKind::Lq => run_lq(cfg),
    }
}

fn expect_kind(cfg: &ExperimentConfig, kind: ExperimentKind) -> Result<()> {
    cfg.validate()?;
    if cfg.kind != kind {
        return Err(Error::Config(format!("configuration is for '{}', not '{}'", cfg.kind, kind)));
    }
    Ok(())
}

/// One `(N, family, replicate)` grid point.
#[derive(Debug, Clone, Copy)]
struct Cell {
    n: usize,
    family: usize,
    seed: u64,
}

fn cells(cfg: &ExperimentConfig) -> Vec<Cell> {
    let mut out = Vec::new();
    for &n in &cfg.sizes {
        for family in 0..cfg.families.len() {
            for &seed in &cfg.seeds {
                out.push(Cell { n, family, seed });
            }
        }
    }
    out
}

struct RowBuilder<'a> {
    cfg: &'a ExperimentConfig,
    experiment: String,
}

impl<'a> RowBuilder<'a> {
    fn new(cfg: &'a ExperimentConfig) -> Self {
        Self { cfg, experiment: cfg.label() }
    }

    #[allow(clippy::too_many_arguments)]
    fn row(
        &self,
        n: Option<usize>,
        family: String,
        seed: Option<u64>,
        stat: impl Into<String>,
        value: f64,
        stderr: StdErr,
        wall_ms: u64,
    ) -> ResultRow {
        ResultRow {
            experiment: self.experiment.clone(),
            kind: self.cfg.kind,
            n,
            family,
            seed,
            stat: stat.into(),
            value,
            stderr,
            wall_ms,
        }
    }

    fn cell(&self, c: Cell, stat: impl Into<String>, value: f64, stderr: StdErr, wall_ms: u64) -> ResultRow {
        self.row(Some(c.n), self.cfg.family_label(c.family), Some(c.seed), stat, value, stderr, wall_ms)
    }

    fn aggregate(&self, n: Option<usize>, family: String, stat: impl Into<String>, value: f64, stderr: StdErr) -> ResultRow {
        self.row(n, family, None, stat, value, stderr, 0)
    }
}

fn elapsed_ms(t: Instant) -> u64 {
    t.elapsed().as_millis() as u64
}

fn finite(stat: &str, v: f64) -> Result<f64> {
    if v.is_finite() {
        Ok(v)
    } else {
        Err(Error::Numeric(format!("statistic '{stat}' is not finite ({v})")))
    }
}

/// Sample mean and its standard error.
fn mean_se(xs: &[f64]) -> (f64, f64) {
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    if xs.len() < 2 {
        return (mean, f64::NAN);
    }
    let var = xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0);
    (mean, (var / n).sqrt())
}

fn median(xs: &[f64]) -> f64 {
    let mut v = xs.to_vec();
    v.sort_by(f64::total_cmp);
    let m = v.len() / 2;
    if v.len() % 2 == 1 {
        v[m]
    } else {
        0.5 * (v[m - 1] + v[m])
    }
}

fn se_or_deterministic(se: f64) -> StdErr {
    if se.is_finite() {
        StdErr::Value(se)
    } else {
        StdErr::Deterministic
    }
}

fn solver_seed(instance: u64) -> u64 {
    derive_seed(instance, &[label_tag("solver")])
}

fn sampler_seed(instance: u64) -> u64 {
    derive_seed(instance, &[label_tag("sampler")])
}

fn check_moments(cfg: &ExperimentConfig, mix: &MixtureSpec) -> Result<()> {
    let Some(req) = cfg.hypothesis else { return Ok(()) };
    for fam in &cfg.families {
        for p in mix.active_orders() {
            if let Some(v) = moment_report(fam, p, cfg.eps)?.violation(req) {
                return Err(Error::Contract(format!("moment hypothesis refused: {v}")));
            }
        }
    }
    Ok(())
}

/// Per-`(N, family)` means of `stat` followed by gaps between the first family and each other one.
///
/// Returns the rows and the `(N, gap, pooled se)` series against the second family.
fn means_and_gaps(b: &RowBuilder, rows: &[ResultRow], stat: &str) -> (Vec<ResultRow>, Vec<(usize, f64, f64)>) {
    let cfg = b.cfg;
    let mut groups: BTreeMap<(usize, usize), Vec<f64>> = BTreeMap::new();
    for r in rows.iter().filter(|r| r.stat == stat) {
        let fam = (0..cfg.families.len())
            .find(|&k| cfg.family_label(k) == r.family)
            .expect("row family comes from the config");
        groups.entry((r.n.expect("cell rows carry N"), fam)).or_default().push(r.value);
    }
    let mut out = Vec::new();
    let mut series = Vec::new();
    let mean_stat = stat.replacen("per_site", "mean", 1);
    let gap_stat = stat.replacen("per_site", "gap", 1);
    for &n in &cfg.sizes {
        let stats: Vec<Option<(f64, f64)>> = (0..cfg.families.len())
            .map(|k| groups.get(&(n, k)).map(|v| mean_se(v)))
            .collect();
        for (k, s) in stats.iter().enumerate() {
            if let Some((m, se)) = s {
                out.push(b.aggregate(Some(n), cfg.family_label(k), mean_stat.clone(), *m, se_or_deterministic(*se)));
            }
        }
        let Some((m0, se0)) = stats[0] else { continue };
        for (k, s) in stats.iter().enumerate().skip(1) {
            let Some((mk, sek)) = s else { continue };
            let gap = (m0 - mk).abs();
            let pooled = (se0 * se0 + sek * sek).sqrt();
            let label = format!("{}|{}", cfg.family_label(0), cfg.family_label(k));
            out.push(b.aggregate(Some(n), label, gap_stat.clone(), gap, se_or_deterministic(pooled)));
            out.push(b.aggregate(
                Some(n),
                format!("{}|{}", cfg.family_label(0), cfg.family_label(k)),
                suffixed(&gap_stat, "_z"),
                if pooled > 0.0 { gap / pooled } else { 0.0 },
                StdErr::Deterministic,
            ));
            if k == 1 {
                series.push((n, gap, pooled));
            }
        }
    }
    (out, series)
}

/// Appends `suffix` to the name part of a stat, before any `[...]` qualifier.
fn suffixed(stat: &str, suffix: &str) -> String {
    match stat.find('[') {
        Some(i) => format!("{}{suffix}{}", &stat[..i], &stat[i..]),
        None => format!("{stat}{suffix}"),
    }
}

/// `1` when the gap at the largest `N` is no larger than at the smallest `N`, or already
/// within two pooled standard errors of zero.
fn shrinking(series: &[(usize, f64, f64)]) -> Option<f64> {
    let mut s = series.to_vec();
    s.sort_by_key(|t| t.0);
    let (first, last) = (s.first()?, s.last()?);
    if s.len() < 2 {
        return None;
    }
    let ok = last.1 <= first.1 || last.1 <= 2.0 * last.2;
    Some(if ok { 1.0 } else { 0.0 })
}

fn pair_label(cfg: &ExperimentConfig) -> String {
    if cfg.families.len() > 1 {
        format!("{}|{}", cfg.family_label(0), cfg.family_label(1))
    } else {
        cfg.family_label(0)
    }
}

fn fe_grid(cfg: &ExperimentConfig) -> Result<Option<Vec<f64>>> {
    cfg.beta.map(|b| geometric_grid(b, cfg.grid_points)).transpose()
}

/// `GS/N` (and `F_β/N` when `beta` is set) of each cell, plus per-family means.
pub fn run_gs(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::Gs)?;
    single_species_sweep(cfg, true)
}

/// `F_β/N` of each cell by thermodynamic integration, plus per-family means.
pub fn run_fe(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::Fe)?;
    if cfg.beta.is_none() {
        return Err(Error::Config("free energy runs need beta".into()));
    }
    single_species_sweep(cfg, false)
}

fn single_species_sweep(cfg: &ExperimentConfig, with_gs: bool) -> Result<Vec<ResultRow>> {
    let mix = cfg.mixture()?;
    check_moments(cfg, &mix)?;
    let grid = fe_grid(cfg)?;
    let b = RowBuilder::new(cfg);
    let pure2 = mix.active_orders().eq([2]);
    let per_cell: Vec<Vec<ResultRow>> = cells(cfg)
        .into_par_iter()
        .map(|c| -> Result<Vec<ResultRow>> {
            let seed = cfg.instance_seed(c.n, c.family, c.seed);
            let tensors = sample_disorder(&mix, c.n, &cfg.families[c.family], seed)?;
            let h = Hamiltonian::new(tensors.clone(), &mix)?;
            let mut rows = Vec::new();
            if with_gs {
                let t = Instant::now();
                let gs = solve_gs_hamiltonian(&h, &DomainSpec::L2Sphere, &cfg.solver, solver_seed(seed))?;
                let ms = elapsed_ms(t);
                let v = finite("gs_per_site", gs.per_site())?;
                rows.push(b.cell(c, "gs_per_site", v, StdErr::Deterministic, ms));
                if pure2 {
                    let t = Instant::now();
                    let e = eigen_oracle_p2(&tensors[0])?;
                    let oracle = mix.gamma(2) * e.lambda_max / (c.n as f64).sqrt();
                    let ms = elapsed_ms(t);
                    rows.push(b.cell(c, "oracle_per_site", oracle, StdErr::Deterministic, ms));
                    rows.push(b.cell(c, "oracle_rel_err", ((v - oracle) / oracle).abs(), StdErr::Deterministic, 0));
                }
            }
            if let Some(grid) = &grid {
                let t = Instant::now();
                let fe = free_energy_ti_hamiltonian(
                    &h,
                    &DomainSpec::L2Sphere,
                    grid,
                    &cfg.sampler,
                    sampler_seed(seed),
                    Some(tempering_threshold(&mix)),
                )?;
                let ms = elapsed_ms(t);
                let v = finite("fe_per_site", fe.value)?;
                rows.push(b.cell(c, "fe_per_site", v, StdErr::Value(fe.std_error), ms));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_cell.into_iter().flatten().collect();
    let mut extra = Vec::new();
    for stat in ["gs_per_site", "fe_per_site"] {
        extra.extend(means_and_gaps(&b, &rows, stat).0);
    }
    if let Some(beta) = cfg.beta {
        extra.push(b.aggregate(None, "annealed".into(), "annealed_bound", annealed_bound(&mix, beta), StdErr::Deterministic));
    }
    rows.extend(extra);
    sort_rows(&mut rows);
    Ok(rows)
}

/// Cross-family universality of `GS/N` (and optionally `F_β/N`) under a declared moment hypothesis.
///
/// Emits per-cell values, per-family means, the gap between the first family and each other
/// family with its pooled standard error, and `gap_shrinking` across the size list.
pub fn run_universality(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::Universality)?;
    if cfg.families.len() < 2 {
        return Err(Error::Config("universality compares at least two families".into()));
    }
    let mut rows = single_species_sweep(cfg, true)?;
    let b = RowBuilder::new(cfg);
    let (_, series) = means_and_gaps(&b, &rows, "gs_per_site");
    if let Some(s) = shrinking(&series) {
        rows.push(b.aggregate(None, pair_label(cfg), "gap_shrinking", s, StdErr::Deterministic));
    }
    sort_rows(&mut rows);
    Ok(rows)
}

/// Growth of the normalized ground state under heavy tails.
///
/// For each family and replicate one tensor is drawn at the largest size and its leading blocks
/// give the smaller sizes. The ratio `GS/(N√ξ''(1))` tends to 1 for light tails. Pure `p = 2`
/// models use the Lanczos oracle, others the ascent solver.
pub fn run_baiyin_necessity(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::Baiyin)?;
    let mix = cfg.mixture()?;
    let p = mix.max_order();
    if p < 2 {
        return Err(Error::Config("the Bai–Yin experiment needs an interaction of order at least 2".into()));
    }
    let heavy = cfg
        .families
        .iter()
        .map(|f| moment_report(f, p, cfg.eps).map(|r| !r.finite_2p_moment))
        .collect::<Result<Vec<bool>>>()?;
    if !heavy.iter().any(|&h| h) {
        return Err(Error::Contract(format!("no configured family has an infinite moment of order {}", 2 * p)));
    }
    let mut sizes = cfg.sizes.clone();
    sizes.sort_unstable();
    sizes.dedup();
    let n_max = *sizes.last().expect("validated non-empty");
    let pure2 = mix.active_orders().eq([2]);
    let scale = mix.xi(1.0, 2)?.sqrt();
    let b = RowBuilder::new(cfg);

    let jobs: Vec<(usize, u64)> = (0..cfg.families.len())
        .flat_map(|k| cfg.seeds.iter().map(move |&s| (k, s)))
        .collect();
    let per_job: Vec<(usize, u64, Vec<f64>, Vec<ResultRow>)> = jobs
        .into_par_iter()
        .map(|(k, s)| -> Result<_> {
            let seed = cfg.instance_seed(0, k, s);
            let full = sample_disorder(&mix, n_max, &cfg.families[k], seed)?;
            let mut ratios = Vec::new();
            let mut rows = Vec::new();
            for &n in &sizes {
                let c = Cell { n, family: k, seed: s };
                let tensors = full.iter().map(|t| t.prefix(n)).collect::<Result<Vec<_>>>()?;
                let t = Instant::now();
                let gs = if pure2 {
                    mix.gamma(2) * eigen_oracle_p2(&tensors[0])?.lambda_max / (n as f64).sqrt()
                } else {
                    let h = Hamiltonian::new(tensors.clone(), &mix)?;
                    solve_gs_hamiltonian(&h, &DomainSpec::L2Sphere, &cfg.solver, solver_seed(seed))?.per_site()
                };
                let ms = elapsed_ms(t);
                let gs = finite("gs_per_site", gs)?;
                let ratio = gs / scale;
                ratios.push(ratio);
                rows.push(b.cell(c, "gs_per_site", gs, StdErr::Deterministic, ms));
                rows.push(b.cell(c, "ratio", ratio, StdErr::Deterministic, ms));
                let top = tensors.last().expect("at least one active order");
                let t = Instant::now();
                let probe = localized_probe(top, &mix, cfg.probe_factor * (n as f64).sqrt())?;
                let ms = elapsed_ms(t);
                rows.push(b.cell(c, "probe_found", f64::from(u8::from(probe.is_some())), StdErr::Deterministic, ms));
                if let Some(pr) = probe {
                    rows.push(b.cell(c, "probe_value_per_site", pr.value_per_site, StdErr::Deterministic, 0));
                }
            }
            Ok((k, s, ratios, rows))
        })
        .collect::<Result<_>>()?;

    let mut rows = Vec::new();
    for (k, &is_heavy) in heavy.iter().enumerate() {
        let label = cfg.family_label(k);
        let mine: Vec<&(usize, u64, Vec<f64>, Vec<ResultRow>)> = per_job.iter().filter(|j| j.0 == k).collect();
        let mut medians = Vec::new();
        for (i, &n) in sizes.iter().enumerate() {
            let rs: Vec<f64> = mine.iter().map(|j| j.2[i]).collect();
            let med = median(&rs);
            medians.push(med);
            rows.push(b.aggregate(Some(n), label.clone(), "median_ratio", med, StdErr::Deterministic));
            let found: Vec<f64> = mine
                .iter()
                .flat_map(|j| &j.3)
                .filter(|r| r.n == Some(n) && r.stat == "probe_found")
                .map(|r| r.value)
                .collect();
            let (rate, se) = mean_se(&found);
            rows.push(b.aggregate(Some(n), label.clone(), "probe_rate", rate, se_or_deterministic(se)));
        }
        if sizes.len() > 1 {
            let increasing: Vec<f64> = mine
                .iter()
                .map(|j| f64::from(u8::from(j.2.windows(2).all(|w| w[1] > w[0]))))
                .collect();
            let (frac, se) = mean_se(&increasing);
            rows.push(b.aggregate(None, label.clone(), "increasing_fraction", frac, se_or_deterministic(se)));
            let lo = medians.iter().copied().fold(f64::INFINITY, f64::min);
            let hi = medians.iter().copied().fold(f64::NEG_INFINITY, f64::max);
            let centre = medians.iter().sum::<f64>() / medians.len() as f64;
            rows.push(b.aggregate(None, label.clone(), "median_spread", (hi - lo) / centre, StdErr::Deterministic));
        }
        rows.push(b.aggregate(None, label, "heavy_tailed", f64::from(u8::from(is_heavy)), StdErr::Deterministic));
    }
    rows.extend(per_job.into_iter().flat_map(|j| j.3));
    sort_rows(&mut rows);
    Ok(rows)
}

/// `GSbar(T)/N` of one piece in the pure model of its order with coefficient `gamma`.
///
/// Order-2 pieces use both spectral edges from the Lanczos oracle; other orders run the solver on `±T`.
fn piece_gsbar(t: &SymmetricTensor, gamma: f64, cfg: &ExperimentConfig, seed: u64) -> Result<f64> {
    if t.sup_norm() == 0.0 {
        return Ok(0.0);
    }
    let n = t.dim() as f64;
    if t.order() == 2 {
        let top = eigen_oracle_p2(t)?.lambda_max;
        let bottom = eigen_oracle_p2(&t.neg())?.lambda_max;
        return Ok(gamma.abs() * top.max(bottom) / n.sqrt());
    }
    let mix = MixtureSpec::pure(t.order(), gamma)?;
    let h = Hamiltonian::new(vec![t.clone()], &mix)?;
    Ok(gs_bar(&h, &DomainSpec::L2Sphere, &cfg.solver, seed)? / n)
}

/// Truncation pipeline audit on sampled tensors of the top order.
pub fn run_truncation_audit(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::TruncationAudit)?;
    let mix = cfg.mixture()?;
    let p = mix.max_order();
    let gamma = mix.gamma(p);
    for fam in &cfg.families {
        if !moment_report(fam, p, cfg.eps)?.finite_2p_moment {
            return Err(Error::Contract(format!(
                "truncation audit needs a finite moment of order {}; {} has none",
                2 * p,
                fam.tag()
            )));
        }
    }
    let params_for = |n: usize| match cfg.schedule {
        TruncationSchedule::Default => TruncationParams::with_defaults(n, p, Some(cfg.eps)),
        TruncationSchedule::BaiYin => TruncationParams::bai_yin(n, p),
    };
    let b = RowBuilder::new(cfg);
    let per_cell: Vec<Vec<ResultRow>> = cells(cfg)
        .into_par_iter()
        .map(|c| -> Result<Vec<ResultRow>> {
            let seed = cfg.instance_seed(c.n, c.family, c.seed);
            let fam = &cfg.families[c.family];
            let t = Instant::now();
            let j = sample_tensor(p, c.n, fam, seed)?;
            let params = params_for(c.n)?;
            let dec = truncate(&j, &params, fam)?;
            let recon = dec.reconstruct()?.sub(&j)?.sup_norm();
            let ms = elapsed_ms(t);
            let mut rows = vec![
                b.cell(c, "reconstruction_error", recon, StdErr::Deterministic, ms),
                b.cell(c, "small_sup_over_m", dec.small.sup_norm() / params.m, StdErr::Deterministic, ms),
            ];
            let others = dec.scales.iter().chain([&dec.large, &dec.tail]);
            let nonsmall = others.map(|t| t.sup_norm()).fold(0.0, f64::max);
            rows.push(b.cell(c, "nonsmall_sup", nonsmall, StdErr::Deterministic, ms));
            if cfg.audit_gs {
                let solve = solver_seed(seed);
                let t = Instant::now();
                let small = piece_gsbar(&dec.small, gamma, cfg, solve)?;
                rows.push(b.cell(c, "gsbar_small", small, StdErr::Deterministic, elapsed_ms(t)));
                for (i, s) in dec.scales.iter().enumerate() {
                    let t = Instant::now();
                    let v = piece_gsbar(s, gamma, cfg, solve)?;
                    rows.push(b.cell(c, format!("gsbar_scale[{i}]"), v, StdErr::Deterministic, elapsed_ms(t)));
                }
                let t = Instant::now();
                let large = piece_gsbar(&dec.large, gamma, cfg, solve)?;
                rows.push(b.cell(c, "gsbar_large", large, StdErr::Deterministic, elapsed_ms(t)));
                let t = Instant::now();
                let tail = piece_gsbar(&dec.tail, gamma, cfg, solve)?;
                rows.push(b.cell(c, "gsbar_tail", tail, StdErr::Deterministic, elapsed_ms(t)));
                let ratio = if small > 0.0 { tail / small } else { 0.0 };
                rows.push(b.cell(c, "tail_ratio", ratio, StdErr::Deterministic, 0));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_cell.into_iter().flatten().collect();

    let mut extra = Vec::new();
    for &n in &cfg.sizes {
        let params = params_for(n)?;
        for (k, fam) in cfg.families.iter().enumerate() {
            let label = cfg.family_label(k);
            for (mult, lower, var, target) in variance_sandwich(p, fam, &params)? {
                let tag = format!("[mult={mult}]");
                extra.push(b.aggregate(Some(n), label.clone(), format!("sandwich_lower{tag}"), lower, StdErr::Deterministic));
                extra.push(b.aggregate(Some(n), label.clone(), format!("small_variance{tag}"), var, StdErr::Deterministic));
                extra.push(b.aggregate(Some(n), label.clone(), format!("variance_target{tag}"), target, StdErr::Deterministic));
                let ok = lower <= var * (1.0 + 1e-12) && var <= target * (1.0 + 1e-12);
                extra.push(b.aggregate(
                    Some(n),
                    label.clone(),
                    format!("sandwich_holds{tag}"),
                    f64::from(u8::from(ok)),
                    StdErr::Deterministic,
                ));
            }
            if cfg.audit_gs {
                let within: Vec<f64> = rows
                    .iter()
                    .filter(|r| r.n == Some(n) && r.family == label && r.stat == "tail_ratio")
                    .map(|r| f64::from(u8::from(r.value <= 0.1)))
                    .collect();
                let (frac, se) = mean_se(&within);
                extra.push(b.aggregate(Some(n), label.clone(), "tail_ratio_fraction", frac, se_or_deterministic(se)));
            }
        }
    }
    rows.extend(extra);
    sort_rows(&mut rows);
    Ok(rows)
}

fn lambda_stat(stat: &str, lambda: f64) -> String {
    format!("{stat}[lambda={lambda}]")
}

/// Spiked model `H + λN(⟨σ,u⟩/N)^p` with `u` drawn from the same family as the noise.
///
/// Emits `GS/N` per spike strength, per-family means, the detection curve (mean minus the
/// `λ = 0` mean of the same family) and the cross-family gap per `λ`.
pub fn run_tensor_pca(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::TensorPca)?;
    if cfg.lambdas.is_empty() {
        return Err(Error::Config("tensor PCA needs a lambda grid".into()));
    }
    if let Some(l) = cfg.lambdas.iter().find(|l| !(l.is_finite() && **l >= 0.0)) {
        return Err(Error::Config(format!("spike strengths must be finite and non-negative, got {l}")));
    }
    let mix = cfg.mixture()?;
    check_moments(cfg, &mix)?;
    let p = mix.max_order();
    let grid = fe_grid(cfg)?;
    let b = RowBuilder::new(cfg);
    let per_cell: Vec<Vec<ResultRow>> = cells(cfg)
        .into_par_iter()
        .map(|c| -> Result<Vec<ResultRow>> {
            let seed = cfg.instance_seed(c.n, c.family, c.seed);
            let fam = &cfg.families[c.family];
            let tensors = sample_disorder(&mix, c.n, fam, seed)?;
            let u = sample_tensor(1, c.n, fam, derive_seed(seed, &[label_tag("spike")]))?.entries().to_vec();
            let base = Hamiltonian::new(tensors, &mix)?;
            let mut rows = Vec::new();
            for &lambda in &cfg.lambdas {
                let h = base.clone().with_spike(lambda, p, u.clone())?;
                let t = Instant::now();
                let gs = solve_gs_hamiltonian(&h, &DomainSpec::L2Sphere, &cfg.solver, solver_seed(seed))?;
                let v = finite("gs_per_site", gs.per_site())?;
                rows.push(b.cell(c, lambda_stat("gs_per_site", lambda), v, StdErr::Deterministic, elapsed_ms(t)));
                if let Some(grid) = &grid {
                    let t = Instant::now();
                    let fe = free_energy_ti_hamiltonian(&h, &DomainSpec::L2Sphere, grid, &cfg.sampler, sampler_seed(seed), None)?;
                    let v = finite("fe_per_site", fe.value)?;
                    rows.push(b.cell(c, lambda_stat("fe_per_site", lambda), v, StdErr::Value(fe.std_error), elapsed_ms(t)));
                }
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_cell.into_iter().flatten().collect();
    let mut extra = Vec::new();
    for stat in ["gs_per_site", "fe_per_site"] {
        for &lambda in &cfg.lambdas {
            extra.extend(means_and_gaps(&b, &rows, &lambda_stat(stat, lambda)).0);
        }
    }
    if let Some(&zero) = cfg.lambdas.iter().find(|&&l| l == 0.0) {
        let base_stat = lambda_stat("gs_per_site", zero);
        for &n in &cfg.sizes {
            for k in 0..cfg.families.len() {
                let label = cfg.family_label(k);
                let values = |stat: &str| -> Vec<f64> {
                    let mut v: Vec<(u64, f64)> = rows
                        .iter()
                        .filter(|r| r.n == Some(n) && r.family == label && r.stat == stat)
                        .map(|r| (r.seed.expect("cell row"), r.value))
                        .collect();
                    v.sort_by_key(|t| t.0);
                    v.into_iter().map(|t| t.1).collect()
                };
                let v0 = values(&base_stat);
                for &lambda in cfg.lambdas.iter().filter(|&&l| l != 0.0) {
                    let diffs: Vec<f64> = values(&lambda_stat("gs_per_site", lambda))
                        .iter()
                        .zip(&v0)
                        .map(|(a, b)| a - b)
                        .collect();
                    let (m, se) = mean_se(&diffs);
                    extra.push(b.aggregate(Some(n), label.clone(), lambda_stat("detection", lambda), m, se_or_deterministic(se)));
                }
            }
        }
    }
    rows.extend(extra);
    sort_rows(&mut rows);
    Ok(rows)
}

/// Splits `n` into blocks proportional to `fractions`, each at least one coordinate.
fn species_sizes(n: usize, fractions: &[f64]) -> Result<Vec<usize>> {
    if fractions.iter().any(|f| !(f.is_finite() && *f > 0.0)) {
        return Err(Error::Config("species fractions must be positive".into()));
    }
    let total: f64 = fractions.iter().sum();
    let r = fractions.len();
    if n < r {
        return Err(Error::Config(format!("cannot split {n} coordinates into {r} species")));
    }
    let mut sizes: Vec<usize> = fractions[..r - 1]
        .iter()
        .map(|f| ((f / total) * n as f64).round().max(1.0) as usize)
        .collect();
    let used: usize = sizes.iter().sum();
    if used >= n {
        return Err(Error::Config(format!("species fractions leave no room for the last block at N={n}")));
    }
    sizes.push(n - used);
    Ok(sizes)
}

fn is_bipartite_p2(part: &SpeciesPartition) -> bool {
    let Some(g) = part.coupling(2) else { return false };
    part.species_count() == 2
        && (1..=part.max_order()).all(|p| p == 2 || part.coupling(p).is_none_or(|c| c.sup_norm() == 0.0))
        && g.get(&[0, 0]).is_ok_and(|v| v == 0.0)
        && g.get(&[1, 1]).is_ok_and(|v| v == 0.0)
}

/// Ground states on a product of spheres with species couplings `Γ`.
///
/// Pure bipartite order-2 couplings also report the singular-value oracle and the relative error.
pub fn run_multispecies(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::Multispecies)?;
    if cfg.couplings.is_empty() {
        return Err(Error::Config("multi-species runs need couplings".into()));
    }
    let fractions = if cfg.species.is_empty() { vec![1.0] } else { cfg.species.clone() };
    let couplings = cfg.coupling_tensors(fractions.len())?;
    let orders: Vec<usize> = cfg.couplings.iter().map(|c| c.order).collect();
    let b = RowBuilder::new(cfg);
    let per_cell: Vec<Vec<ResultRow>> = cells(cfg)
        .into_par_iter()
        .map(|c| -> Result<Vec<ResultRow>> {
            let seed = cfg.instance_seed(c.n, c.family, c.seed);
            let fam = &cfg.families[c.family];
            let part = SpeciesPartition::contiguous(&species_sizes(c.n, &fractions)?, couplings.clone())?;
            let tensors = orders
                .iter()
                .map(|&p| sample_tensor(p, c.n, fam, seed))
                .collect::<Result<Vec<_>>>()?;
            let h = Hamiltonian::multi_species(tensors.clone(), &part)?;
            let t = Instant::now();
            let gs = solve_gs_hamiltonian(&h, &DomainSpec::ProductSpheres(part.clone()), &cfg.solver, solver_seed(seed))?;
            let v = finite("gs_per_site", gs.per_site())?;
            let mut rows = vec![b.cell(c, "gs_per_site", v, StdErr::Deterministic, elapsed_ms(t))];
            if is_bipartite_p2(&part) {
                let j2 = tensors.iter().find(|t| t.order() == 2).expect("order-2 coupling sampled");
                let t = Instant::now();
                let oracle = bipartite_oracle(j2, &part)?.lambda_max / c.n as f64;
                rows.push(b.cell(c, "oracle_per_site", oracle, StdErr::Deterministic, elapsed_ms(t)));
                rows.push(b.cell(c, "oracle_rel_err", ((v - oracle) / oracle).abs(), StdErr::Deterministic, 0));
            }
            Ok(rows)
        })
        .collect::<Result<_>>()?;
    let mut rows: Vec<ResultRow> = per_cell.into_iter().flatten().collect();
    let extra = means_and_gaps(&b, &rows, "gs_per_site").0;
    rows.extend(extra);
    sort_rows(&mut rows);
    Ok(rows)
}

/// Ground states on the ℓq sphere `‖σ‖_q^q = N`, `q > 2`, without an external field.
pub fn run_lq(cfg: &ExperimentConfig) -> Result<Vec<ResultRow>> {
    expect_kind(cfg, ExperimentKind::Lq)?;
    let q = cfg.q.ok_or_else(|| Error::Config("ℓq runs need q".into()))?;
    if !(q.is_finite() && q > 2.0) {
        return Err(Error::Contract(format!("ℓq ground states require q > 2, got q = {q}")));
    }
    let mix = cfg.mixture()?;
    if mix.gamma(1) != 0.0 {
        return Err(Error::Contract("ℓq ground states require γ_1 = 0".into()));
    }
    check_moments(cfg, &mix)?;
    let domain = DomainSpec::lq(q)?;
    let b = RowBuilder::new(cfg);
    let per_cell: Vec<ResultRow> = cells(cfg)
        .into_par_iter()
        .map(|c| -> Result<ResultRow> {
            let seed = cfg.instance_seed(c.n, c.family, c.seed);
            let tensors = sample_disorder(&mix, c.n, &cfg.families[c.family], seed)?;
            let h = Hamiltonian::new(tensors, &mix)?;
            let t = Instant::now();
            let gs = solve_gs_hamiltonian(&h, &domain, &cfg.solver, solver_seed(seed))?;
            let v = finite("gs_per_site", gs.per_site())?;
            Ok(b.cell(c, "gs_per_site", v, StdErr::Deterministic, elapsed_ms(t)))
        })
        .collect::<Result<_>>()?;
    let mut rows = per_cell;
    let extra = means_and_gaps(&b, &rows, "gs_per_site").0;
    rows.extend(extra);
    sort_rows(&mut rows);
    Ok(rows)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn mean_se_and_median() {
        let (m, se) = mean_se(&[1.0, 2.0, 3.0, 4.0]);
        assert_eq!(m, 2.5);
        assert!((se - (5.0f64 / 3.0 / 4.0).sqrt()).abs() < 1e-15);
        assert_eq!(median(&[3.0, 1.0, 2.0]), 2.0);
        assert_eq!(median(&[4.0, 1.0, 2.0, 3.0]), 2.5);
        assert!(mean_se(&[1.0]).1.is_nan());
    }

    #[test]
    fn species_split() {
        assert_eq!(species_sizes(600, &[0.5, 0.5]).unwrap(), vec![300, 300]);
        assert_eq!(species_sizes(10, &[1.0, 2.0]).unwrap(), vec![3, 7]);
        assert!(species_sizes(1, &[0.5, 0.5]).is_err());
        assert!(species_sizes(10, &[0.5, 0.0]).is_err());
    }

    #[test]
    fn suffix_goes_before_qualifier() {
        assert_eq!(suffixed("gs_gap", "_z"), "gs_gap_z");
        assert_eq!(suffixed("gs_gap[lambda=2]", "_z"), "gs_gap_z[lambda=2]");
    }

    #[test]
    fn shrinking_rule() {
        assert_eq!(shrinking(&[(100, 0.05, 0.01), (400, 0.02, 0.01)]), Some(1.0));
        assert_eq!(shrinking(&[(100, 0.01, 0.001), (400, 0.05, 0.001)]), Some(0.0));
        assert_eq!(shrinking(&[(100, 0.01, 0.001), (400, 0.015, 0.01)]), Some(1.0));
        assert_eq!(shrinking(&[(100, 0.01, 0.001)]), None);
    }
}
