//! Theory verification suites behind `salr verify --theorem N`.

use super::Report;
use crate::error::{Result, SalrError};
use crate::linalg::{power_iteration_sigma_max, sample_gaussian_matrix, svd, DenseMatrix, RngState};
use crate::prune::{
    build_mask, comparison_identities, e1_closed, monte_carlo_errors, q_function, run_theory_report,
    standardized_threshold, PruneConfig, PruneMethod, MIN_SAMPLES,
};
use crate::residual::{
    bound_from_svd, lipschitz_constant, loss_nonincreasing, residual_gradient, residual_loss, train_residual,
    AdapterPair, ResidualTrainConfig, StepSize,
};

/// Published per-entry pruning MSE at `p = 0.5`, `σ = 1`; reported next to
/// the exact value, not asserted.
pub const REFERENCE_MSE_HALF: f64 = 0.0718;

#[derive(Clone, Debug, PartialEq)]
pub struct VerifyOptions {
    pub theorem: u8,
    pub p: f64,
    pub sigma: f64,
    pub tau: f64,
    pub samples: Option<u64>,
    pub grid: usize,
    pub trials: usize,
    pub seed: u64,
}

impl Default for VerifyOptions {
    fn default() -> Self {
        Self { theorem: 1, p: 0.5, sigma: 1.0, tau: 1.0, samples: None, grid: 9, trials: 200, seed: 0 }
    }
}

#[derive(Clone, Debug, Default)]
pub struct VerifyOutcome {
    pub report: Report,
    /// Failed invariants, in the order they were checked.
    pub failures: Vec<String>,
    pub csv: Option<String>,
}

impl VerifyOutcome {
    fn check(&mut self, ok: bool, name: impl FnOnce() -> String) {
        if !ok {
            self.failures.push(name());
        }
    }

    pub fn passed(&self) -> bool {
        self.failures.is_empty()
    }
}

fn grid_points(grid: usize) -> Result<Vec<f64>> {
    if grid == 0 {
        return Err(SalrError::Domain("--grid must be at least 1".into()));
    }
    Ok((1..=grid).map(|i| i as f64 / (grid + 1) as f64).collect())
}

fn sample_count(opts: &VerifyOptions, default: u64) -> Result<u64> {
    let n = opts.samples.unwrap_or(default);
    if n < MIN_SAMPLES {
        return Err(SalrError::Domain(format!("--samples must be at least {MIN_SAMPLES}")));
    }
    Ok(n)
}

pub fn verify_theorem(opts: &VerifyOptions) -> Result<VerifyOutcome> {
    if !(opts.sigma > 0.0 && opts.tau >= 0.0) {
        return Err(SalrError::Domain("--sigma must be > 0 and --tau >= 0".into()));
    }
    if !(0.0..1.0).contains(&opts.p) {
        return Err(SalrError::Domain(format!("--p must satisfy 0 <= p < 1, got {}", opts.p)));
    }
    let mut out = VerifyOutcome::default();
    out.report.kv("theorem", opts.theorem).kv("seed", opts.seed);
    match opts.theorem {
        1 => pruning_mse(opts, &mut out)?,
        2 => method_comparison(opts, &mut out)?,
        3 => residual_bound(opts, &mut out)?,
        4 => residual_descent(opts, &mut out)?,
        t => return Err(SalrError::Usage(format!("--theorem must be 1..=4, got {t}"))),
    }
    let (failures, passed) = (out.failures.len(), out.passed());
    out.report.kv("failures", failures).kv("passed", passed);
    Ok(out)
}

fn pruning_mse(opts: &VerifyOptions, out: &mut VerifyOutcome) -> Result<()> {
    let samples = sample_count(opts, 10_000_000)?;
    let (p, sigma) = (opts.p, opts.sigma);
    let t = standardized_threshold(p)?;
    let closed = e1_closed(p, sigma)?;
    let [mc, _, _] = monte_carlo_errors(p, sigma, 0.0, samples, opts.seed)?;
    out.report
        .kv("p", p)
        .kv("sigma", sigma)
        .kv("samples", samples)
        .kv("t_p", format!("{t:.15}"))
        .kv("q_t_p", format!("{:.15}", q_function(t)?))
        .kv("mse_closed", format!("{closed:.15}"))
        .kv("mse_mc", format!("{:.15}", mc.mean))
        .kv("mse_se", format!("{:.3e}", mc.std_err))
        .kv("mse_z", format!("{:.3}", (mc.mean - closed) / mc.std_err));
    out.check(mc.within_se(closed, 3.0), || format!("mc within 3 SE of closed form at p={p}"));
    if p == 0.5 && sigma == 1.0 {
        out.report
            .kv("reference", REFERENCE_MSE_HALF)
            .kv("reference_z", format!("{:.3}", (mc.mean - REFERENCE_MSE_HALF) / mc.std_err))
            .kv("reference_within_3se", mc.within_se(REFERENCE_MSE_HALF, 3.0));
    }
    let mut csv = String::from("p,t_p,mse_closed,mse_mc,mse_se\n");
    for (i, gp) in grid_points(opts.grid)?.into_iter().enumerate() {
        let closed = e1_closed(gp, sigma)?;
        let [mc, _, _] = monte_carlo_errors(gp, sigma, 0.0, samples, opts.seed.wrapping_add(i as u64 + 1))?;
        let ok = mc.within_se(closed, 3.0);
        let key = format!("grid[{i}]");
        out.report
            .kv(format!("{key}.p"), gp)
            .kv(format!("{key}.closed"), format!("{closed:.12}"))
            .kv(format!("{key}.mc"), format!("{:.12}", mc.mean))
            .kv(format!("{key}.ok"), ok);
        out.check(ok, || format!("mc within 3 SE of closed form at p={gp}"));
        csv.push_str(&format!("{gp},{},{closed},{},{}\n", standardized_threshold(gp)?, mc.mean, mc.std_err));
    }
    out.csv = Some(csv);
    Ok(())
}

/// Multipliers applied to `--sigma` and `--tau`; the ordering depends only
/// on `τ/σ`, so the sweep spans ratios from 1/8 to 8.
const SIGMA_SCALES: [f64; 3] = [0.5, 1.0, 2.0];
const TAU_SCALES: [f64; 5] = [0.25, 0.5, 1.0, 2.0, 4.0];

fn method_comparison(opts: &VerifyOptions, out: &mut VerifyOutcome) -> Result<()> {
    let samples = sample_count(opts, 1_000_000)?;
    let ps = grid_points(opts.grid)?;
    let points = ps.len() * SIGMA_SCALES.len() * TAU_SCALES.len();
    out.report.kv("sigma", opts.sigma).kv("tau", opts.tau).kv("samples", samples).kv("points", points);
    let mut csv = String::from(
        "p,sigma,tau,e1_closed,e2_closed,e3_closed,e1_mc,e2_mc,e3_mc,closed_ordering,mc_ordering,e2_minus_e3,stated_e2_minus_e3\n",
    );
    let mut mc_miss = 0usize;
    let (mut closed_fail, mut mc_fail, mut worst_e3e1, mut worst_e2e1, mut worst_stated) =
        (0usize, 0usize, 0.0f64, 0.0f64, 0.0f64);
    let mut i = 0usize;
    for &sf in &SIGMA_SCALES {
        for &tf in &TAU_SCALES {
            let (sigma, tau) = (opts.sigma * sf, opts.tau * tf);
            for &p in &ps {
                let r = run_theory_report(p, sigma, tau, samples, opts.seed.wrapping_add(i as u64))?;
                let id = comparison_identities(p, sigma, tau)?;
                let key = format!("grid[{i}]");
                let closed_ok = r.closed_ordering_holds();
                let mc_ok = r.mc_ordering_holds(3.0);
                let e3e1 = (id.e3_minus_e1 - id.two_tau2_q).abs();
                let e2e1 = (id.e2_minus_e1 - id.two_s2t2_over_v2_t_phi).abs();
                let stated = (id.e2_minus_e3 - id.two_s2t2_over_v2_t_phi).abs();
                closed_fail += usize::from(!closed_ok);
                mc_miss += usize::from(!r.mc_matches_closed(3.0));
                mc_fail += usize::from(!mc_ok);
                worst_e3e1 = worst_e3e1.max(e3e1);
                worst_e2e1 = worst_e2e1.max(e2e1);
                worst_stated = worst_stated.max(stated);
                out.report
                    .kv(format!("{key}.p"), p)
                    .kv(format!("{key}.sigma"), sigma)
                    .kv(format!("{key}.tau"), tau)
                    .kv(format!("{key}.e1"), format!("{:.12}", r.e1_closed))
                    .kv(format!("{key}.e2"), format!("{:.12}", r.e2_closed))
                    .kv(format!("{key}.e3"), format!("{:.12}", r.e3_closed))
                    .kv(format!("{key}.closed_ordering"), closed_ok)
                    .kv(format!("{key}.mc_ordering_3se"), mc_ok)
                    .kv(format!("{key}.mc_matches_closed_3se"), r.mc_matches_closed(3.0));
                let at = format!("p={p} sigma={sigma} tau={tau}");
                out.check(closed_ok, || format!("closed-form ordering e1 <= e3 <= e2 at {at}"));
                out.check(mc_ok, || format!("Monte-Carlo ordering within 3 SE at {at}"));
                out.check(e3e1 <= 1e-12, || format!("e3 - e1 = 2 tau^2 Q at {at}"));
                out.check(e2e1 <= 1e-12, || format!("e2 - e1 = 2 s^2 t^2 / V^2 t phi at {at}"));
                csv.push_str(&format!(
                    "{p},{sigma},{tau},{},{},{},{},{},{},{closed_ok},{mc_ok},{},{}\n",
                    r.e1_closed,
                    r.e2_closed,
                    r.e3_closed,
                    r.e1_mc.mean,
                    r.e2_mc.mean,
                    r.e3_mc.mean,
                    id.e2_minus_e3,
                    id.two_s2t2_over_v2_t_phi
                ));
                i += 1;
            }
        }
    }
    out.report
        .kv("closed_ordering_failures", closed_fail)
        .kv("mc_ordering_failures", mc_fail)
        .kv("mc_outside_3se_of_closed", mc_miss)
        .kv("e3_minus_e1_identity_max_err", format!("{worst_e3e1:.3e}"))
        .kv("e2_minus_e1_identity_max_err", format!("{worst_e2e1:.3e}"))
        .kv("stated_e2_minus_e3_identity_max_err", format!("{worst_stated:.3e}"));
    out.csv = Some(csv);
    Ok(())
}

fn residual_bound(opts: &VerifyOptions, out: &mut VerifyOutcome) -> Result<()> {
    let mut rng = RngState::new(opts.seed);
    let cfg = PruneConfig::new(opts.p, PruneMethod::StaticOnW0);
    let (mut worst_ey, mut worst_ratio, mut checked) = (0.0f64, 0.0f64, 0usize);
    let (mut energy_sum, mut entries) = (0.0, 0usize);
    let mut csv = String::from("trial,rows,cols,r,lhs,rhs,eckart_young_rel_err\n");
    for trial in 0..opts.trials {
        let d = 8 + (rng.next_f64() * 33.0) as usize;
        let k = 8 + (rng.next_f64() * 33.0) as usize;
        let w = sample_gaussian_matrix(&mut rng, d, k, opts.sigma);
        let mask = build_mask(&w, None, &cfg)?;
        let e = w.sub(&mask.apply(&w)?)?;
        energy_sum += e.frobenius_norm_sq();
        entries += d * k;
        if e.frobenius_norm_sq() == 0.0 {
            continue;
        }
        let dec = svd(&e)?;
        for r in 1..=d.min(k) {
            let b = bound_from_svd(&e, &dec, r);
            checked += 1;
            worst_ey = worst_ey.max(b.eckart_young_rel_err);
            if b.rhs > 0.0 {
                worst_ratio = worst_ratio.max(b.lhs / b.rhs);
            }
            out.check(b.eckart_young_rel_err <= 1e-8, || format!("Eckart-Young equality, trial {trial} r={r}"));
            out.check(b.holds(), || format!("per-entry bound, trial {trial} r={r}"));
            csv.push_str(&format!("{trial},{d},{k},{r},{},{},{}\n", b.lhs, b.rhs, b.eckart_young_rel_err));
        }
    }
    // Flat spectra: a scaled random orthogonal matrix.
    let mut worst_flat = 0.0f64;
    for q in [4usize, 9, 16] {
        let g = sample_gaussian_matrix(&mut rng, q, q, 1.0);
        let u = svd(&g)?.u.scaled(1.7);
        let dec = svd(&u)?;
        for r in 1..=q {
            let b = bound_from_svd(&u, &dec, r);
            let rel = (b.lhs - b.rhs).abs() / b.energy_per_entry;
            worst_flat = worst_flat.max(rel);
            out.check(rel <= 1e-12, || format!("bound equality for flat spectrum q={q} r={r}"));
        }
    }
    let mse_closed = e1_closed(opts.p, opts.sigma)?;
    out.report
        .kv("p", opts.p)
        .kv("sigma", opts.sigma)
        .kv("trials", opts.trials)
        .kv("pairs_checked", checked)
        .kv("worst_eckart_young_rel_err", format!("{worst_ey:.3e}"))
        .kv("worst_lhs_over_rhs", format!("{worst_ratio:.6}"))
        .kv("worst_flat_spectrum_gap", format!("{worst_flat:.3e}"))
        .kv("residual_energy_per_entry", format!("{:.6}", energy_sum / entries.max(1) as f64))
        .kv("mse_closed", format!("{mse_closed:.12}"));
    out.csv = Some(csv);
    Ok(())
}

fn residual_descent(opts: &VerifyOptions, out: &mut VerifyOutcome) -> Result<()> {
    let root = RngState::new(opts.seed);
    let trials = opts.trials.max(1);
    let (mut worst_fd, mut worst_grad) = (0.0f64, 0.0f64);
    let mut csv = String::from("trial,step,iterations,first_loss,last_loss,final_grad_norm\n");
    for trial in 0..trials {
        let mut rng = root.split(trial as u64);
        let x = sample_gaussian_matrix(&mut rng, 32, 16, 1.0);
        let w = sample_gaussian_matrix(&mut rng, 16, 8, 1.0);
        let noise = sample_gaussian_matrix(&mut rng, 32, 8, 0.1);
        let y = crate::linalg::matmul(&x, &w)?.add(&noise)?;
        let mask = build_mask(&w, None, &PruneConfig::new(0.5, PruneMethod::StaticOnW0))?;
        let w_hat = mask.apply(&w)?;
        let lora = AdapterPair::lora_init(&mut rng, 16, 8, 2, 1.0)?;

        // Central differences at five random coordinates.
        let m = sample_gaussian_matrix(&mut rng, 16, 8, 1.0);
        let r_target = sample_gaussian_matrix(&mut rng, 32, 8, 1.0);
        let g = residual_gradient(&x, &m, &r_target)?;
        for _ in 0..5 {
            let i = (rng.next_f64() * 16.0) as usize;
            let j = (rng.next_f64() * 8.0) as usize;
            let h = 1e-4;
            let bump = |delta: f64| {
                let mm = DenseMatrix::from_fn(16, 8, |a, b| m.get(a, b) + if (a, b) == (i, j) { delta } else { 0.0 });
                residual_loss(&x, &mm, &r_target)
            };
            let fd = (bump(h)? - bump(-h)?) / (2.0 * h);
            let rel = (fd - g.get(i, j)).abs() / g.get(i, j).abs().max(1e-12);
            worst_fd = worst_fd.max(rel);
            out.check(rel <= 1e-5, || format!("finite-difference gradient, trial {trial} ({i},{j})"));
        }

        let lip = lipschitz_constant(&x)?;
        for (name, eta) in [("eta_star", 1.0 / lip), ("half_eta_star", 0.5 / lip)] {
            let cfg = ResidualTrainConfig {
                step: StepSize::Fixed(eta),
                max_iters: 5000,
                grad_tol: 1e-7,
                ..Default::default()
            };
            let o = train_residual(&x, &y, &w_hat, &lora, &DenseMatrix::zeros(16, 8), &cfg)?;
            worst_grad = worst_grad.max(o.final_grad_norm);
            out.check(loss_nonincreasing(&o.loss_trace), || format!("monotone loss with {name}, trial {trial}"));
            out.check(o.final_grad_norm < 1e-6, || format!("final gradient norm < 1e-6 with {name}, trial {trial}"));
            csv.push_str(&format!(
                "{trial},{name},{},{},{},{}\n",
                o.iterations,
                o.loss_trace[0],
                o.loss_trace.last().unwrap(),
                o.final_grad_norm
            ));
        }
        let bad = ResidualTrainConfig { step: StepSize::Fixed(2.0 / lip), ..Default::default() };
        let rejected = matches!(
            train_residual(&x, &y, &w_hat, &lora, &DenseMatrix::zeros(16, 8), &bad),
            Err(SalrError::Config(_))
        );
        out.check(rejected, || format!("step 2/sigma_max^2 rejected, trial {trial}"));
    }
    let mut rng = root.split(1 << 20);
    let x = sample_gaussian_matrix(&mut rng, 128, 64, 1.0);
    let exact = svd(&x)?.s[0];
    let est = power_iteration_sigma_max(&x, 2000, 1e-15);
    let power_rel = ((est - exact) / exact).abs();
    out.check(power_rel <= 1e-5, || "power iteration within 1e-5 of SVD".to_string());
    out.report
        .kv("trials", trials)
        .kv("worst_fd_rel_err", format!("{worst_fd:.3e}"))
        .kv("worst_final_grad_norm", format!("{worst_grad:.3e}"))
        .kv("power_sigma_max", format!("{est:.12}"))
        .kv("svd_sigma_max", format!("{exact:.12}"))
        .kv("power_rel_err", format!("{power_rel:.3e}"));
    out.csv = Some(csv);
    Ok(())
}
