//! Runnable oracle and property checks.
//!
//! Each check compares the implementation against an independent reference
//! (Monte Carlo, finite differences, brute-force search, tabulated values)
//! and reports a single pass/fail outcome with a short measurement summary.

use std::fmt;

use ndarray::Array2;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;

use crate::chunking::ScheduleConfig;
use crate::flow::{
    finite_difference_vjp, integrate, ActionChunk, GaussianMixtureField, MixtureComponent, TemporalPrior,
};
use crate::guidance::{decompose, otr_project, pc_weight, r_tau_sq, rtc_weight, GuidanceConfig, Method};
use crate::harness::{
    emit_summary, grid_search_rho, grid_search_sigma, run_cells, run_trace, ExperimentConfig, HarnessError,
    SuiteConfig, SIGMA_GRID,
};
use crate::metrics::{aggregate_weighted, worst_case};

#[derive(Debug, Clone, PartialEq)]
pub struct Check {
    pub name: &'static str,
    pub passed: bool,
    pub detail: String,
}

impl Check {
    fn new(name: &'static str, passed: bool, detail: impl Into<String>) -> Self {
        Check {
            name,
            passed,
            detail: detail.into(),
        }
    }

    fn from_result(name: &'static str, r: Result<(bool, String), String>) -> Self {
        match r {
            Ok((passed, detail)) => Check::new(name, passed, detail),
            Err(e) => Check::new(name, false, format!("error: {e}")),
        }
    }
}

impl fmt::Display for Check {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let tag = if self.passed { "PASS" } else { "FAIL" };
        write!(f, "[{tag}] {}: {}", self.name, self.detail)
    }
}

fn gaussian<R: Rng + ?Sized>(rng: &mut R) -> f64 {
    rng.sample(StandardNormal)
}

fn random_chunk<R: Rng + ?Sized>(rng: &mut R, h: usize, d: usize, scale: f64) -> ActionChunk {
    ActionChunk::new(Array2::from_shape_fn((h, d), |_| scale * gaussian(rng))).expect("finite")
}

const TABLE_TAU: [f64; 5] = [0.1, 0.3, 0.5, 0.7, 0.9];
const TABLE_RTC: [f64; 5] = [9.11, 2.76, 2.00, 2.76, 9.11];
const TABLE_PC: [f64; 5] = [10.00, 10.00, 7.25, 5.01, 9.69];
const TABLE_RATIO: [f64; 5] = [1.10, 3.62, 3.63, 1.82, 1.06];

/// Weight schedules against the tabulated values at σ_d = 0.4, β = 10.
pub fn weight_table() -> Check {
    let run = || -> Result<(bool, String), String> {
        let mut worst_w = 0.0f64;
        let mut worst_r = 0.0f64;
        for i in 0..5 {
            let tau = TABLE_TAU[i];
            let r = rtc_weight(tau, 10.0).map_err(|e| e.to_string())?;
            let p = pc_weight(tau, 0.4, 10.0).map_err(|e| e.to_string())?;
            worst_w = worst_w.max((r - TABLE_RTC[i]).abs()).max((p - TABLE_PC[i]).abs());
            worst_r = worst_r.max((p / r - TABLE_RATIO[i]).abs());
        }
        Ok((
            worst_w < 0.005 && worst_r < 0.01,
            format!("max weight error {worst_w:.2e} (< 5e-3), max ratio error {worst_r:.2e} (< 1e-2)"),
        ))
    };
    Check::from_result("weight table", run())
}

/// At σ_d = 1 the prior-corrected schedule is the plain one.
pub fn sigma_one_reduction() -> Check {
    let run = || -> Result<(bool, String), String> {
        let mut dw = 0.0f64;
        let mut dr = 0.0f64;
        for i in 1..1000 {
            let tau = i as f64 / 1000.0;
            let a = 1.0 - tau;
            let pc = pc_weight(tau, 1.0, 10.0).map_err(|e| e.to_string())?;
            let rtc = rtc_weight(tau, 10.0).map_err(|e| e.to_string())?;
            dw = dw.max((pc - rtc).abs());
            let r = r_tau_sq(tau, 1.0).map_err(|e| e.to_string())?;
            dr = dr.max((r - a * a / (tau * tau + a * a)).abs());
        }
        Ok((
            dw < 1e-12 && dr < 1e-12,
            format!("999-point grid: max |w_pc - w_rtc| = {dw:.1e}, max r² error = {dr:.1e}"),
        ))
    };
    Check::from_result("sigma_d = 1 reduction", run())
}

/// Trust-region projection: constraint, parallel component, idempotence and
/// optimality against random feasible points.
pub fn otr_properties(trials: usize, feasible_samples: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let eps = 1e-8;
    let mut violations = Vec::new();
    let mut clipped = 0usize;
    let mut worst_gap = f64::INFINITY;

    for t in 0..trials {
        let dim = rng.random_range(1..=64usize);
        let gs = 10f64.powf(rng.random_range(-2.0..2.0));
        let degenerate = rng.random::<f64>() < 0.02;
        let vs = if degenerate { 1e-10 } else { 10f64.powf(rng.random_range(-2.0..2.0)) };
        let rho = if rng.random::<f64>() < 0.05 {
            f64::INFINITY
        } else {
            10f64.powf(rng.random_range(-1.3..0.7))
        };
        let g = random_chunk(&mut rng, dim, 1, gs);
        let v = random_chunk(&mut rng, dim, 1, vs);
        let out = otr_project(&g, &v, rho, eps);
        let (gn, vn) = (g.norm(), v.norm());

        if degenerate {
            if rho.is_finite() && out.norm() > rho * vn + eps {
                violations.push(format!("trial {t}: degenerate fallback bound"));
            }
            continue;
        }
        let parts = decompose(&g, &v);
        if rho.is_finite() && out.sub(&parts.parallel).norm() > rho * vn * (1.0 + 1e-9) {
            violations.push(format!("trial {t}: constraint"));
        }
        if (out.dot(&v) - g.dot(&v)).abs() > 1e-10 * gn * vn {
            violations.push(format!("trial {t}: parallel component"));
        }
        let twice = otr_project(&out, &v, rho, eps);
        if twice.sub(&out).norm() > 1e-12 * out.norm() {
            violations.push(format!("trial {t}: idempotence"));
        }

        let perp = &parts.perpendicular;
        if rho.is_finite() && perp.norm() > rho * vn {
            clipped += 1;
            let radius = rho * vn;
            let best = out.dot(&g);
            let mut max_sample = f64::NEG_INFINITY;
            for k in 0..feasible_samples {
                // Random direction orthogonal to v, inside or on the ball.
                let raw = random_chunk(&mut rng, dim, 1, 1.0);
                let h = raw.sub(&decompose(&raw, &v).parallel);
                let hn = h.norm();
                if hn == 0.0 {
                    continue;
                }
                let r = if k % 2 == 0 {
                    radius
                } else {
                    radius * rng.random::<f64>().powf(1.0 / dim as f64)
                };
                let cand = parts.parallel.add_scaled(r / hn, &h);
                max_sample = max_sample.max(cand.dot(&g));
            }
            if best < max_sample - 1e-9 {
                violations.push(format!("trial {t}: optimality"));
            }
            worst_gap = worst_gap.min(best - max_sample);
        }
    }
    let detail = if violations.is_empty() {
        format!(
            "{trials} triples ({clipped} clipped, {feasible_samples} feasible samples each); smallest optimality margin {worst_gap:.3e}"
        )
    } else {
        format!("{} violations, first: {}", violations.len(), violations[0])
    };
    Check::new("trust-region projection properties", violations.is_empty(), detail)
}

fn random_mixture<R: Rng + ?Sized>(rng: &mut R) -> GaussianMixtureField {
    let h = rng.random_range(2..=6usize);
    let d = rng.random_range(1..=3usize);
    let k = rng.random_range(1..=3usize);
    let raw: Vec<f64> = (0..k).map(|_| rng.random_range(0.2..1.0)).collect();
    let total: f64 = raw.iter().sum();
    let components = raw
        .iter()
        .map(|w| MixtureComponent {
            weight: w / total,
            mean: random_chunk(rng, h, d, 1.0),
            scale: rng.random_range(0.2..1.2),
        })
        .collect();
    let prior = if rng.random::<bool>() {
        TemporalPrior::isotropic(h)
    } else {
        TemporalPrior::smooth(h, rng.random_range(0.5..3.0), 0.05).expect("valid prior")
    };
    GaussianMixtureField::with_prior(components, prior).expect("valid mixture")
}

/// Analytic vector-Jacobian products against central differences.
pub fn vjp_agreement(instances: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = |rng: &mut ChaCha8Rng| -> Result<(bool, String), String> {
        let mut worst = 0.0f64;
        for _ in 0..instances {
            let field = random_mixture(rng);
            let (h, d) = field.shape();
            let tau = rng.random_range(0.05..0.95);
            let a1 = field.sample_prior(rng);
            let noise = random_chunk(rng, h, d, 1.0);
            let x = a1.scaled(tau).add_scaled(1.0 - tau, &noise);
            let u = random_chunk(rng, h, d, 1.0);
            let analytic = field.vjp_at(&x, tau, &u).map_err(|e| e.to_string())?;
            let fd = finite_difference_vjp(&field, &x, tau, &(), &u, 1e-5).map_err(|e| e.to_string())?;
            let rel = analytic.sub(&fd).norm() / fd.norm().max(f64::MIN_POSITIVE);
            worst = worst.max(rel);
        }
        Ok((
            worst < 1e-4,
            format!("{instances} mixture instances, max relative error {worst:.2e} (< 1e-4)"),
        ))
    };
    Check::from_result("VJP vs finite differences", run(&mut rng))
}

/// Least-squares slope of `log y` against `log x`.
fn loglog_slope(xs: &[f64], ys: &[f64]) -> f64 {
    let lx: Vec<f64> = xs.iter().map(|x| x.ln()).collect();
    let ly: Vec<f64> = ys.iter().map(|y| y.ln()).collect();
    let n = lx.len() as f64;
    let mx = lx.iter().sum::<f64>() / n;
    let my = ly.iter().sum::<f64>() / n;
    let cov: f64 = lx.iter().zip(&ly).map(|(a, b)| (a - mx) * (b - my)).sum();
    let var: f64 = lx.iter().map(|a| (a - mx).powi(2)).sum();
    cov / var
}

/// First-order convergence of the Euler solver on a single Gaussian.
pub fn euler_convergence(seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = |rng: &mut ChaCha8Rng| -> Result<(bool, String), String> {
        let (h, d) = (4, 2);
        let field = GaussianMixtureField::new(vec![MixtureComponent {
            weight: 1.0,
            mean: random_chunk(rng, h, d, 0.7),
            scale: 0.5,
        }])
        .map_err(|e| e.to_string())?;
        let steps = [10usize, 20, 40, 80];
        let draws = 16;
        let mut errors = [0.0f64; 4];
        for _ in 0..draws {
            let noise = random_chunk(rng, h, d, 1.0);
            let reference = integrate(&field, noise.clone(), &(), 10_000).map_err(|e| e.to_string())?;
            for (slot, &n) in errors.iter_mut().zip(&steps) {
                let out = integrate(&field, noise.clone(), &(), n).map_err(|e| e.to_string())?;
                *slot += out.sub(&reference).norm() / draws as f64;
            }
        }
        let xs: Vec<f64> = steps.iter().map(|&n| n as f64).collect();
        let slope = loglog_slope(&xs, &errors);
        Ok((
            (-1.3..=-0.7).contains(&slope),
            format!(
                "errors {:.2e} {:.2e} {:.2e} {:.2e}, slope {slope:.3} (in [-1.3, -0.7])",
                errors[0], errors[1], errors[2], errors[3]
            ),
        ))
    };
    Check::from_result("Euler convergence", run(&mut rng))
}

/// Self-normalized importance-sampling estimate of the marginal velocity at
/// one probe, projected on `dir`. Returns (estimate, standard error, ESS).
fn snis_projected_velocity(bank: &[ActionChunk], x: &ActionChunk, tau: f64, dir: &ActionChunk) -> (f64, f64, f64) {
    let var = (1.0 - tau).powi(2);
    let logw: Vec<f64> = bank
        .iter()
        .map(|a| {
            let r = x.sub(&a.scaled(tau)).norm();
            -r * r / (2.0 * var)
        })
        .collect();
    let top = logw.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let w: Vec<f64> = logw.iter().map(|l| (l - top).exp()).collect();
    let sw: f64 = w.iter().sum();
    let f: Vec<f64> = bank.iter().map(|a| a.dot(dir)).collect();
    let mean = w.iter().zip(&f).map(|(wi, fi)| wi * fi).sum::<f64>() / sw;
    let var_num: f64 = w.iter().zip(&f).map(|(wi, fi)| wi * wi * (fi - mean).powi(2)).sum();
    let se = var_num.sqrt() / sw;
    let ess = sw * sw / w.iter().map(|wi| wi * wi).sum::<f64>();
    let xd = x.dot(dir);
    ((mean - xd) / (1.0 - tau), se / (1.0 - tau), ess)
}

/// Closed-form mixture velocity against a Monte Carlo estimate of
/// `E[A¹ − ε | A^τ = x]`, on a unimodal and a bimodal field.
pub fn velocity_oracle(probes: usize, bank_size: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = |rng: &mut ChaCha8Rng| -> Result<(bool, String), String> {
        let unimodal = GaussianMixtureField::with_prior(
            vec![MixtureComponent {
                weight: 1.0,
                mean: ActionChunk::from_rows(&[vec![0.3], vec![-0.5], vec![0.8]]).map_err(|e| e.to_string())?,
                scale: 0.6,
            }],
            TemporalPrior::smooth(3, 1.5, 0.05).map_err(|e| e.to_string())?,
        )
        .map_err(|e| e.to_string())?;
        let m = ActionChunk::from_rows(&[vec![0.8, 0.4], vec![0.6, -0.3]]).map_err(|e| e.to_string())?;
        let bimodal = GaussianMixtureField::new(vec![
            MixtureComponent {
                weight: 0.3,
                mean: m.clone(),
                scale: 0.35,
            },
            MixtureComponent {
                weight: 0.7,
                mean: m.scaled(-1.0),
                scale: 0.35,
            },
        ])
        .map_err(|e| e.to_string())?;

        let mut worst_z = 0.0f64;
        let mut min_ess = f64::INFINITY;
        let mut failures = 0;
        for field in [&unimodal, &bimodal] {
            let (h, d) = field.shape();
            let bank: Vec<ActionChunk> = (0..bank_size).map(|_| field.sample_prior(rng)).collect();
            for _ in 0..probes {
                let tau = rng.random_range(0.05..0.6);
                let a1 = field.sample_prior(rng);
                let x = a1.scaled(tau).add_scaled(1.0 - tau, &random_chunk(rng, h, d, 1.0));
                let raw = random_chunk(rng, h, d, 1.0);
                let dir = raw.scaled(1.0 / raw.norm());
                let exact = field.velocity_at(&x, tau).map_err(|e| e.to_string())?.dot(&dir);
                let (est, se, ess) = snis_projected_velocity(&bank, &x, tau, &dir);
                let z = (exact - est).abs() / se;
                worst_z = worst_z.max(z);
                min_ess = min_ess.min(ess);
                if z > 3.0 {
                    failures += 1;
                }
            }
        }
        Ok((
            failures == 0,
            format!(
                "{} probes over 2 fields, {bank_size} prior samples each: max |z| = {worst_z:.2} (<= 3), min ESS {min_ess:.0}",
                2 * probes
            ),
        ))
    };
    Check::from_result("velocity vs Monte Carlo", run(&mut rng))
}

/// Unguided sampling reproduces a single-Gaussian prior's moments.
pub fn sampler_moments(samples: usize, seed: u64) -> Check {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let run = |rng: &mut ChaCha8Rng| -> Result<(bool, String), String> {
        let mut ok = true;
        let mut notes = Vec::new();
        for s in [0.2, 0.4, 1.0] {
            let mu = ActionChunk::from_rows(&[vec![0.5, -0.25], vec![-0.75, 0.1]]).map_err(|e| e.to_string())?;
            let field = GaussianMixtureField::new(vec![MixtureComponent {
                weight: 1.0,
                mean: mu.clone(),
                scale: s,
            }])
            .map_err(|e| e.to_string())?;
            let (h, d) = field.shape();
            let mut sum = Array2::<f64>::zeros((h, d));
            let mut sq = Array2::<f64>::zeros((h, d));
            for _ in 0..samples {
                let out = integrate(&field, random_chunk(rng, h, d, 1.0), &(), 64).map_err(|e| e.to_string())?;
                sum += out.as_array();
                sq += &out.as_array().mapv(|v| v * v);
            }
            let n = samples as f64;
            let mean = &sum / n;
            let std = (&sq / n - &mean.mapv(|m| m * m)).mapv(|v| (v * n / (n - 1.0)).max(0.0).sqrt());
            let mean_err = (&mean - mu.as_array()).iter().fold(0.0f64, |m, e| m.max(e.abs()));
            let std_err = std.iter().fold(0.0f64, |m, x| m.max((x / s - 1.0).abs()));
            ok &= mean_err <= 0.05 && std_err <= 0.10;
            notes.push(format!("s={s}: mean err {mean_err:.3}, std rel err {std_err:.3}"));
        }
        Ok((ok, format!("{samples} samples, n=64; {}", notes.join("; "))))
    };
    Check::from_result("sampler moments", run(&mut rng))
}

/// Cross-suite aggregation on published per-suite values.
pub fn aggregation_cross_check() -> Check {
    let weights = [10u64, 10, 10, 10, 90];
    let per_suite = [
        ("naive", [0.940, 0.900, 0.960, 0.980, 0.298], 0.497),
        ("rtc", [0.900, 0.960, 1.000, 0.980, 0.289], 0.495),
        ("potr", [0.900, 1.000, 1.000, 0.980, 0.320], 0.520),
    ];
    let run = || -> Result<(bool, String), String> {
        let mut ok = true;
        let mut notes = Vec::new();
        for (name, values, want) in per_suite {
            let pairs: Vec<(u64, f64)> = weights.iter().copied().zip(values).collect();
            let got = aggregate_weighted(&pairs).map_err(|e| e.to_string())?;
            ok &= (got - want).abs() <= 0.005;
            notes.push(format!("{name} {got:.4} (want {want})"));
        }
        let worst = worst_case(&[5.75, 3.86, 4.72, 4.30, 5.85]).map_err(|e| e.to_string())?;
        ok &= worst == 5.85;
        notes.push(format!("worst naive jerk {worst}"));
        Ok((ok, notes.join(", ")))
    };
    Check::from_result("aggregation cross-check", run())
}

fn suite_with_modes(config: &ExperimentConfig, modes: usize) -> Option<&SuiteConfig> {
    config.suites.iter().find(|s| s.modes == modes)
}

/// Paired-seed trends across delays 1 to 5 on the default benchmark.
pub fn directional_trends(config: &ExperimentConfig) -> Check {
    let run = || -> Result<(bool, String), String> {
        let methods = [Method::Naive, Method::Rtc, Method::Potr];
        let delays: Vec<usize> = (1..=5).collect();
        let res = run_cells(config, &methods, &delays).map_err(|e| e.to_string())?;
        let summary = emit_summary(&res.rows, &config.suite_weights()).map_err(|e| e.to_string())?;
        let get = |m: Method| summary.method(m).ok_or_else(|| format!("no rows for {m}"));
        let (naive, rtc, potr) = (get(Method::Naive)?, get(Method::Rtc)?, get(Method::Potr)?);

        let a_potr_rtc = potr.aggregate.l2_mean < rtc.aggregate.l2_mean;
        let a_rtc_naive = rtc.aggregate.l2_mean < naive.aggregate.l2_mean;
        let b = potr.aggregate.max_jerk < naive.aggregate.max_jerk;
        let bimodal = suite_with_modes(config, 2).ok_or("no bimodal suite configured")?;
        let succ = |s: &crate::harness::MethodSummary| s.per_suite.get(&bimodal.id).map(|m| m.success);
        let (sp, sn) = (
            succ(potr).ok_or("missing bimodal rows")?,
            succ(naive).ok_or("missing bimodal rows")?,
        );
        let c = sp >= sn - 0.02;
        let mark = |ok: bool| if ok { "ok" } else { "VIOLATED" };
        Ok((
            a_potr_rtc && a_rtc_naive && b && c,
            format!(
                "{} episodes/cell; (a) l2_mean potr {:.4} < rtc {:.4} [{}] < naive {:.4} [{}]; (b) jerk potr {:.3} < naive {:.3} [{}]; (c) bimodal success potr {:.3} >= naive {:.3} - 0.02 [{}]; runtime failures {}",
                config.episodes_per_cell,
                potr.aggregate.l2_mean,
                rtc.aggregate.l2_mean,
                mark(a_potr_rtc),
                naive.aggregate.l2_mean,
                mark(a_rtc_naive),
                potr.aggregate.max_jerk,
                naive.aggregate.max_jerk,
                mark(b),
                sp,
                sn,
                mark(c),
                res.failures.len()
            ),
        ))
    };
    Check::from_result("directional benchmark trends", run())
}

/// Degenerate settings reproduce the simpler methods exactly, per seed.
pub fn equivalences(config: &ExperimentConfig, episodes: usize) -> Check {
    let run = || -> Result<(bool, String), String> {
        let herr = |e: HarnessError| e.to_string();
        let mut compared = 0usize;
        let mut mismatches = Vec::new();
        let base = config.guidance;
        for suite in &config.suites {
            let params = config.policy_for(suite);
            for delay in [1usize, 3, 5] {
                let schedule = ScheduleConfig::protocol(params.horizon, suite.env.dim(), delay, config.mask_decay);
                for ep in 0..episodes {
                    let seed = crate::harness::episode_seed(config.seed_base, delay, &suite.id, ep);
                    let trace = |g: GuidanceConfig| run_trace(suite, &params, schedule, g, seed).map_err(herr);
                    let rtc = trace(base.for_method(Method::Rtc))?;
                    let pc1 = trace(GuidanceConfig {
                        sigma_d: 1.0,
                        ..base.for_method(Method::Pc)
                    })?;
                    let pc = trace(base.for_method(Method::Pc))?;
                    let potr_inf = trace(GuidanceConfig {
                        rho: f64::INFINITY,
                        ..base.for_method(Method::Potr)
                    })?;
                    if rtc.actions != pc1.actions || rtc.metrics != pc1.metrics {
                        mismatches.push(format!("rtc vs pc(sigma_d=1): {} d={delay} ep {ep}", suite.id));
                    }
                    if pc.actions != potr_inf.actions || pc.metrics != potr_inf.metrics {
                        mismatches.push(format!("pc vs potr(rho=inf): {} d={delay} ep {ep}", suite.id));
                    }
                    compared += 2;
                }
            }
            // Replanning once per horizon leaves no overlap to inpaint.
            let full = ScheduleConfig {
                replan_every: params.horizon,
                ..ScheduleConfig::protocol(params.horizon, suite.env.dim(), 0, config.mask_decay)
            };
            for ep in 0..episodes {
                let seed = crate::harness::episode_seed(config.seed_base, 0, &suite.id, ep);
                let naive = run_trace(suite, &params, full, base.for_method(Method::Naive), seed).map_err(herr)?;
                for m in [Method::Rtc, Method::Pc, Method::Potr] {
                    let other = run_trace(suite, &params, full, base.for_method(m), seed).map_err(herr)?;
                    if other.actions != naive.actions || other.metrics != naive.metrics {
                        mismatches.push(format!("{m} with s=H vs naive: {} ep {ep}", suite.id));
                    }
                    compared += 1;
                }
            }
        }
        Ok((
            mismatches.is_empty(),
            if mismatches.is_empty() {
                format!("{compared} paired episodes bit-identical")
            } else {
                format!("{} mismatches, first: {}", mismatches.len(), mismatches[0])
            },
        ))
    };
    Check::from_result("equivalence degenerations", run())
}

pub const RHO_PAPER_GRID: [f64; 5] = [0.10, 0.25, 0.50, 0.75, 1.00];

/// Grid-search tables have the expected schema and one row per grid value.
pub fn grid_schemas(config: &ExperimentConfig) -> Check {
    let run = || -> Result<(bool, String), String> {
        let sigma = grid_search_sigma(config, &SIGMA_GRID).map_err(|e| e.to_string())?;
        let rho = grid_search_rho(config, &RHO_PAPER_GRID).map_err(|e| e.to_string())?;
        let sigma_csv = sigma.to_csv().map_err(|e| e.to_string())?;
        let rho_csv = rho.to_csv().map_err(|e| e.to_string())?;
        let check = |csv: &str, header: &str, values: &[f64]| -> bool {
            let mut lines = csv.lines();
            if lines.next() != Some(header) {
                return false;
            }
            let rows: Vec<&str> = lines.collect();
            rows.len() == values.len()
                && rows.iter().zip(values).all(|(line, v)| {
                    let cells: Vec<&str> = line.split(',').collect();
                    cells.len() == 7 && cells[0].parse::<f64>().ok() == Some(*v)
                })
        };
        let ok_s = check(&sigma_csv, "sigma_d,success,steps,l2_m,l2_M,acc,jerk", &SIGMA_GRID);
        let ok_r = check(&rho_csv, "rho,success,steps,l2_m,l2_M,acc,jerk", &RHO_PAPER_GRID);
        Ok((
            ok_s && ok_r,
            format!(
                "sigma_d table {} rows [{}], rho table {} rows [{}], {} episodes per suite and value",
                sigma.rows.len(),
                if ok_s { "schema ok" } else { "schema mismatch" },
                rho.rows.len(),
                if ok_r { "schema ok" } else { "schema mismatch" },
                config.episodes_per_cell
            ),
        ))
    };
    Check::from_result("grid-search tables", run())
}

/// Unguided, undelayed sampling solves the default unimodal task.
pub fn oracle_consistency(config: &ExperimentConfig, episodes: usize) -> Check {
    let run = || -> Result<(bool, String), String> {
        let suite = suite_with_modes(config, 1).ok_or("no unimodal suite configured")?;
        let cfg = ExperimentConfig {
            suites: vec![suite.clone()],
            episodes_per_cell: episodes,
            ..config.clone()
        };
        let res = run_cells(&cfg, &[Method::Naive], &[0]).map_err(|e| e.to_string())?;
        let rate = res.rows.iter().filter(|r| r.success).count() as f64 / res.rows.len() as f64;
        Ok((rate >= 0.95, format!("naive, d=0, {episodes} episodes on {}: success {rate:.3} (>= 0.95)", suite.id)))
    };
    Check::from_result("oracle consistency", run())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Level {
    /// Numerical checks only; a few seconds.
    Quick,
    /// Adds closed-loop benchmark checks.
    Full,
}

/// Run the check suite. Closed-loop checks use `config` for the benchmark.
pub fn run_all(level: Level, config: &ExperimentConfig) -> Vec<Check> {
    let mut checks = vec![
        weight_table(),
        sigma_one_reduction(),
        otr_properties(1000, 10_000, 11),
        vjp_agreement(100, 12),
        euler_convergence(13),
        velocity_oracle(20, 200_000, 14),
        sampler_moments(10_000, 15),
        aggregation_cross_check(),
        equivalences(config, if level == Level::Full { 10 } else { 2 }),
    ];
    if level == Level::Full {
        checks.push(directional_trends(config));
        checks.push(grid_schemas(config));
        checks.push(oracle_consistency(config, 200));
    }
    checks
}
