use std::fs;
use std::path::Path;

use super::verify::{verify_theorem, VerifyOptions};
use super::{require_out, Cli, Command, DmatPrecision, PruneArgs, Report, StoredPrecision, Toggle};
use crate::codec::{
    container_from_bytes, container_to_bytes, decode, encode, ratio_from_counts, BitmapSparseMatrix, ContainerLayout,
    ValueDtype,
};
use crate::error::{Result, SalrError};
use crate::linalg::{read_dmat, sample_gaussian_matrix, svd, write_dmat, DenseMatrix, DmatDtype, RngState};
use crate::pipeline::{bench, PipelineConfig};
use crate::prune::{build_mask, e1_closed, mask_error_stats, MaskMatrix, PruneConfig, PruneMethod};
use crate::residual::{adapter_from_svd, bound_from_svd, spectrum, spectrum_from_values, AdapterPair, ResidualBound};

/// Random streams derived from the global seed.
const STREAM_DELTA: u64 = 1;
const STREAM_LORA: u64 = 2;

fn check_sparsity(p: f64) -> Result<f64> {
    if !(0.0..1.0).contains(&p) {
        return Err(SalrError::Domain(format!("--sparsity must satisfy 0 <= p < 1, got {p}")));
    }
    Ok(p)
}

fn parse_method(s: &str) -> Result<PruneMethod> {
    s.parse().map_err(|e: SalrError| SalrError::Usage(format!("--method: {e}")))
}

impl From<StoredPrecision> for ValueDtype {
    fn from(p: StoredPrecision) -> Self {
        match p {
            StoredPrecision::F32 => ValueDtype::F32,
            StoredPrecision::F16 => ValueDtype::F16,
        }
    }
}

impl From<DmatPrecision> for DmatDtype {
    fn from(p: DmatPrecision) -> Self {
        match p {
            DmatPrecision::F32 => DmatDtype::F32,
            DmatPrecision::F64 => DmatDtype::F64,
        }
    }
}

/// Result of a pruning step: the matrix the mask was applied to, and the mask.
struct Pruned {
    method: PruneMethod,
    base: DenseMatrix,
    mask: MaskMatrix,
    delta: Option<DenseMatrix>,
}

impl Pruned {
    fn w_hat(&self) -> Result<DenseMatrix> {
        self.mask.apply(&self.base)
    }
}

fn prune_input(w: &DenseMatrix, args: &PruneArgs, seed: u64) -> Result<Pruned> {
    let method = parse_method(&args.method)?;
    let mut cfg = PruneConfig::new(check_sparsity(args.sparsity)?, method);
    cfg.tau = args.tau;
    let delta = if method.needs_delta() {
        Some(match &args.delta {
            Some(path) => read_dmat(path)?.0,
            None => sample_gaussian_matrix(&mut RngState::new(seed).split(STREAM_DELTA), w.rows(), w.cols(), args.tau),
        })
    } else {
        None
    };
    let mask = build_mask(w, delta.as_ref(), &cfg)?;
    let base = match (method, &delta) {
        (PruneMethod::DynamicOnU, Some(d)) => w.add(d)?,
        _ => w.clone(),
    };
    Ok(Pruned { method, base, mask, delta })
}

fn mean_square(m: &DenseMatrix) -> f64 {
    let n = m.as_slice().len();
    if n == 0 {
        0.0
    } else {
        m.frobenius_norm_sq() / n as f64
    }
}

#[derive(Clone, Debug)]
pub struct CompressOptions {
    pub sparsity: f64,
    pub method: PruneMethod,
    pub delta: Option<DenseMatrix>,
    pub tau: f64,
    pub rank: usize,
    pub lora_rank: usize,
    pub lora_scale: f64,
    pub dtype: ValueDtype,
}

impl Default for CompressOptions {
    fn default() -> Self {
        Self {
            sparsity: 0.5,
            method: PruneMethod::StaticOnW0,
            delta: None,
            tau: 1.0,
            rank: 16,
            lora_rank: 0,
            lora_scale: 1.0,
            dtype: ValueDtype::F32,
        }
    }
}

#[derive(Clone, Debug)]
pub struct CompressOutcome {
    pub sparse: BitmapSparseMatrix,
    /// Residual adapter (if `rank > 0`) followed by the LoRA adapter (if
    /// `lora_rank > 0`), as stored.
    pub adapters: Vec<AdapterPair>,
    /// `decode(Ŵ) + A_res·B_res` with the stored factors.
    pub reconstruction: DenseMatrix,
    /// Mean squared entry of the reconstruction error with stored factors.
    pub per_entry_error: f64,
    /// Bound quantities for the unrounded rank-`r` residual.
    pub bound: Option<ResidualBound>,
    /// `1 − ‖E − E_r‖²/‖E‖²` for the unrounded rank-`r` residual.
    pub energy_captured: f64,
    /// The same with the f32-stored factors.
    pub energy_captured_stored: f64,
    /// Cumulative spectrum energy of `E` at index `r`.
    pub spectrum_energy_at_rank: Option<f64>,
    pub report: Report,
}

/// Prune → residual SVD → fresh LoRA pair, ready to be written as a container.
pub fn compress_matrix(w: &DenseMatrix, opts: &CompressOptions, seed: u64) -> Result<CompressOutcome> {
    let (d, k) = w.shape();
    let q = d.min(k);
    if opts.rank > q || opts.lora_rank > q {
        return Err(SalrError::Domain(format!(
            "--rank {} / --lora-rank {} must not exceed min(rows, cols) = {q}",
            opts.rank, opts.lora_rank
        )));
    }
    let args = PruneArgs { sparsity: opts.sparsity, method: opts.method.name(), delta: None, tau: opts.tau };
    let pruned = match &opts.delta {
        Some(delta) => {
            let mut cfg = PruneConfig::new(check_sparsity(opts.sparsity)?, opts.method);
            cfg.tau = opts.tau;
            let mask = build_mask(w, Some(delta), &cfg)?;
            let base = if opts.method == PruneMethod::DynamicOnU { w.add(delta)? } else { w.clone() };
            Pruned { method: opts.method, base, mask, delta: Some(delta.clone()) }
        }
        None => prune_input(w, &args, seed)?,
    };
    let sparse = encode(&pruned.w_hat()?, opts.dtype)?;
    let w_hat_stored = decode(&sparse);
    let e = pruned.base.sub(&w_hat_stored)?;
    let e_energy = e.frobenius_norm_sq();

    let mut adapters = Vec::new();
    let mut bound = None;
    let mut energy_captured = 1.0;
    let mut energy_captured_stored = 1.0;
    let mut spectrum_at_rank = None;
    let mut i99 = None;
    let mut reconstruction = w_hat_stored.clone();
    if opts.rank > 0 {
        let residual = if e_energy > 0.0 {
            let dec = svd(&e)?;
            let exact = adapter_from_svd(&dec, opts.rank)?;
            bound = Some(bound_from_svd(&e, &dec, opts.rank));
            energy_captured = 1.0 - e.sub(&exact.delta())?.frobenius_norm_sq() / e_energy;
            let spec = spectrum_from_values(&dec.s)?;
            spectrum_at_rank = Some(spec.energy_at_rank(opts.rank));
            i99 = Some(spec.i99);
            AdapterPair::new(exact.a().round_to_f32(), exact.b().round_to_f32(), 1.0)?
        } else {
            AdapterPair::zeros(d, k, opts.rank)?
        };
        reconstruction = reconstruction.add(&residual.delta())?;
        if e_energy > 0.0 {
            energy_captured_stored = 1.0 - e.sub(&residual.delta())?.frobenius_norm_sq() / e_energy;
        }
        adapters.push(residual);
    }
    if opts.lora_rank > 0 {
        let lora =
            AdapterPair::lora_init(&mut RngState::new(seed).split(STREAM_LORA), d, k, opts.lora_rank, opts.lora_scale)?;
        let scale = opts.lora_scale as f32 as f64;
        adapters.push(AdapterPair::new(lora.a().round_to_f32(), lora.b().clone(), scale)?);
    }
    let n = (d * k) as f64;
    let per_entry_error = pruned.base.sub(&reconstruction)?.frobenius_norm_sq() / n;
    let sigma2 = mean_square(&pruned.base);
    let mse_closed = e1_closed(opts.sparsity, sigma2.sqrt().max(f64::MIN_POSITIVE))?;
    let ratio_fraction = if q == 0 { 0.0 } else { 1.0 - opts.rank as f64 / q as f64 };

    let ranks: Vec<usize> = adapters.iter().map(AdapterPair::rank).collect();
    let layout = ContainerLayout::new(d, k, sparse.nnz(), &ranks);
    let adapter_params: usize = adapters.iter().map(AdapterPair::param_count).sum();
    let mut report = Report::default();
    report
        .kv("rows", d)
        .kv("cols", k)
        .kv("method", pruned.method.name())
        .kv("sparsity_target", opts.sparsity)
        .kv("sparsity_achieved", format!("{:.6}", sparse.sparsity()))
        .kv("nnz", sparse.nnz())
        .kv("rank", opts.rank)
        .kv("lora_rank", opts.lora_rank)
        .kv("residual_energy_per_entry", format!("{:.12}", e_energy / n))
        .kv("energy_captured", format!("{energy_captured:.12}"))
        .kv("energy_captured_stored", format!("{energy_captured_stored:.12}"));
    if let Some(s) = spectrum_at_rank {
        report.kv("spectrum_energy_at_rank", format!("{s:.12}"));
    }
    if let Some(i) = i99 {
        report.kv("i99", i);
    }
    report.kv("per_entry_error", format!("{per_entry_error:.12}"));
    if let Some(b) = &bound {
        report
            .kv("bound_rhs", format!("{:.12}", b.rhs))
            .kv("bound_holds", b.holds() && per_entry_error <= b.rhs + 1e-12 * b.energy_per_entry);
    }
    report
        .kv("sample_sigma", format!("{:.6}", sigma2.sqrt()))
        .kv("mse_closed", format!("{mse_closed:.12}"))
        .kv("bound_closed", format!("{:.12}", ratio_fraction * mse_closed))
        .kv("container_bytes", layout.total())
        .kv("ratio_vs_dense_f32", format!("{:.6}", (4 * d * k) as f64 / layout.total() as f64))
        .kv("ratio_formula_2byte", format!("{:.6}", ratio_from_counts(d, k, sparse.nnz(), 2, adapter_params)));

    Ok(CompressOutcome {
        sparse,
        adapters,
        reconstruction,
        per_entry_error,
        bound,
        energy_captured,
        energy_captured_stored,
        spectrum_energy_at_rank: spectrum_at_rank,
        report,
    })
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes)?;
    Ok(())
}

fn layout_report(report: &mut Report, s: &BitmapSparseMatrix, adapters: &[AdapterPair]) {
    let ranks: Vec<usize> = adapters.iter().map(AdapterPair::rank).collect();
    let layout = ContainerLayout::new(s.rows(), s.cols(), s.nnz(), &ranks);
    report
        .kv("header_bytes", layout.header)
        .kv("bitmap_bytes", layout.bitmap)
        .kv("values_bytes", layout.values)
        .kv("adapters_bytes", layout.adapters)
        .kv("total_bytes", layout.total());
}

pub(crate) fn dispatch(cli: &Cli) -> Result<(Report, Option<String>)> {
    let seed = cli.seed;
    let mut report = Report::default();
    match &cli.command {
        Command::Gen { rows, cols, sigma, dtype } => {
            let out = require_out(&cli.out, "gen")?;
            if !(sigma.is_finite() && *sigma >= 0.0) {
                return Err(SalrError::Domain(format!("--sigma must be finite and >= 0, got {sigma}")));
            }
            let m = sample_gaussian_matrix(&mut RngState::new(seed), *rows, *cols, *sigma);
            write_dmat(&out, &m, (*dtype).into())?;
            report
                .kv("rows", rows)
                .kv("cols", cols)
                .kv("sigma", sigma)
                .kv("seed", seed)
                .kv("mean_square", format!("{:.12}", mean_square(&m)))
                .kv("out", out.display());
        }
        Command::Prune { input, prune } => {
            let out = require_out(&cli.out, "prune")?;
            let (w, dtype) = read_dmat(input)?;
            let pr = prune_input(&w, prune, seed)?;
            let w_hat = pr.w_hat()?;
            write_dmat(&out, &w_hat, dtype)?;
            let total = w.as_slice().len();
            let stats = mask_error_stats(&w, pr.delta.as_ref(), &pr.mask, pr.method)?;
            report
                .kv("rows", w.rows())
                .kv("cols", w.cols())
                .kv("method", pr.method.name())
                .kv("sparsity_target", prune.sparsity)
                .kv("kept", pr.mask.kept_count())
                .kv(
                    "sparsity_achieved",
                    format!("{:.6}", if total == 0 { 0.0 } else { 1.0 - pr.mask.kept_count() as f64 / total as f64 }),
                )
                .kv("mse", format!("{:.12}", stats.mean))
                .kv("mse_se", format!("{:.3e}", stats.std_err));
            if pr.method == PruneMethod::StaticOnW0 {
                let sigma = mean_square(&w).sqrt().max(f64::MIN_POSITIVE);
                report.kv("mse_closed_sample_sigma", format!("{:.12}", e1_closed(prune.sparsity, sigma)?));
            }
            report.kv("out", out.display());
        }
        Command::Encode { input, prune, rank, dtype } => {
            let out = require_out(&cli.out, "encode")?;
            let (w, _) = read_dmat(input)?;
            let pr = prune_input(&w, prune, seed)?;
            let s = encode(&pr.w_hat()?, (*dtype).into())?;
            let mut adapters = Vec::new();
            if *rank > 0 {
                let e = pr.base.sub(&decode(&s))?;
                if *rank > e.rows().min(e.cols()) {
                    return Err(SalrError::Domain(format!("--rank {rank} exceeds min(rows, cols)")));
                }
                let ad = if e.frobenius_norm_sq() > 0.0 {
                    adapter_from_svd(&svd(&e)?, *rank)?
                } else {
                    AdapterPair::zeros(e.rows(), e.cols(), *rank)?
                };
                adapters.push(AdapterPair::new(ad.a().round_to_f32(), ad.b().round_to_f32(), 1.0)?);
            }
            let bytes = container_to_bytes(&s, &adapters)?;
            write_bytes(&out, &bytes)?;
            report
                .kv("rows", s.rows())
                .kv("cols", s.cols())
                .kv("method", pr.method.name())
                .kv("nnz", s.nnz())
                .kv("sparsity_achieved", format!("{:.6}", s.sparsity()))
                .kv("rank", rank);
            layout_report(&mut report, &s, &adapters);
            report.kv("file_bytes", bytes.len()).kv("out", out.display());
        }
        Command::Decode { input, merge } => {
            let out = require_out(&cli.out, "decode")?;
            let (s, adapters) = container_from_bytes(&fs::read(input)?)?;
            let mut w = decode(&s);
            let dtype = if *merge {
                for ad in &adapters {
                    w = w.add(&ad.delta())?;
                }
                DmatDtype::F64
            } else {
                DmatDtype::F32
            };
            write_dmat(&out, &w, dtype)?;
            report
                .kv("rows", s.rows())
                .kv("cols", s.cols())
                .kv("nnz", s.nnz())
                .kv("adapters", adapters.len())
                .kv("merged", merge)
                .kv("out", out.display());
        }
        Command::Compress { input, prune, rank, lora_rank, lora_scale, dtype } => {
            let out = require_out(&cli.out, "compress")?;
            let (w, _) = read_dmat(input)?;
            let opts = CompressOptions {
                sparsity: check_sparsity(prune.sparsity)?,
                method: parse_method(&prune.method)?,
                delta: prune.delta.as_ref().map(|p| read_dmat(p).map(|x| x.0)).transpose()?,
                tau: prune.tau,
                rank: *rank,
                lora_rank: *lora_rank,
                lora_scale: *lora_scale,
                dtype: (*dtype).into(),
            };
            let outcome = compress_matrix(&w, &opts, seed)?;
            let bytes = container_to_bytes(&outcome.sparse, &outcome.adapters)?;
            write_bytes(&out, &bytes)?;
            report = outcome.report;
            report.kv("file_bytes", bytes.len()).kv("out", out.display());
        }
        Command::Verify { theorem, p, sigma, tau, samples, grid, trials, csv } => {
            let opts = VerifyOptions {
                theorem: *theorem,
                p: *p,
                sigma: *sigma,
                tau: *tau,
                samples: *samples,
                grid: *grid,
                trials: *trials,
                seed,
            };
            let outcome = verify_theorem(&opts)?;
            if let (Some(path), Some(text)) = (csv, &outcome.csv) {
                write_bytes(path, text.as_bytes())?;
            }
            let failure = outcome.failures.first().cloned();
            return Ok((outcome.report, failure));
        }
        Command::Spectrum { input, reference } => {
            let (mut e, _) = read_dmat(input)?;
            if let Some(r) = reference {
                e = e.sub(&read_dmat(r)?.0)?;
            }
            let rep = spectrum(&e)?;
            if let Some(out) = &cli.out {
                write_bytes(out, rep.to_csv().as_bytes())?;
            }
            report
                .kv("rows", e.rows())
                .kv("cols", e.cols())
                .kv("q", rep.cumulative_energy.len())
                .kv("q_effective", rep.q_effective)
                .kv("i99", rep.i99)
                .kv("i99_fraction", format!("{:.6}", rep.i99 as f64 / rep.cumulative_energy.len() as f64));
            for r in [1usize, 4, 16, 64] {
                if r <= rep.cumulative_energy.len() {
                    report.kv(format!("energy_at_rank_{r}"), format!("{:.12}", rep.energy_at_rank(r)));
                }
            }
            if let Some(out) = &cli.out {
                report.kv("out", out.display());
            }
        }
        Command::Stats { input } => {
            let bytes = fs::read(input)?;
            let (s, adapters) = container_from_bytes(&bytes)?;
            let (d, k) = (s.rows(), s.cols());
            let params: usize = adapters.iter().map(AdapterPair::param_count).sum();
            let ranks: Vec<String> = adapters.iter().map(|a| a.rank().to_string()).collect();
            report
                .kv("rows", d)
                .kv("cols", k)
                .kv("dtype", format!("{:?}", s.dtype()).to_lowercase())
                .kv("nnz", s.nnz())
                .kv("sparsity", format!("{:.6}", s.sparsity()))
                .kv("adapters", adapters.len())
                .kv("adapter_ranks", ranks.join(","));
            layout_report(&mut report, &s, &adapters);
            report
                .kv("file_bytes", bytes.len())
                .kv("ratio_vs_dense_f32", format!("{:.6}", (4 * d * k) as f64 / bytes.len() as f64))
                .kv("ratio_formula_2byte", format!("{:.6}", ratio_from_counts(d, k, s.nnz(), 2, params)))
                .kv("ratio_formula_4byte", format!("{:.6}", ratio_from_counts(d, k, s.nnz(), 4, params)));
        }
        Command::Bench { input, batch, tile_rows, tile_col_bytes, ring, overlap, repeats } => {
            let (s, _) = container_from_bytes(&fs::read(input)?)?;
            let cfg = PipelineConfig {
                tile_rows: *tile_rows,
                tile_col_bytes: *tile_col_bytes,
                ring_capacity: *ring,
                overlap: *overlap == Toggle::On,
                ..Default::default()
            };
            cfg.validate()?;
            let rep = bench(*batch, &s, &cfg, *repeats, seed)?;
            report
                .kv("rows", s.rows())
                .kv("cols", s.cols())
                .kv("nnz", s.nnz())
                .kv("tile_rows", tile_rows)
                .kv("tile_col_bytes", tile_col_bytes)
                .kv("ring", ring)
                .kv("overlap", if cfg.overlap { "on" } else { "off" })
                .kv("threads_available", std::thread::available_parallelism().map_or(1, |n| n.get()))
                .kv("outputs_equal", true);
            for line in rep.to_key_value().lines() {
                if let Some((k, v)) = line.split_once('=') {
                    report.kv(k, v);
                }
            }
            let selected = if cfg.overlap { rep.overlapped_secs } else { rep.serial_secs };
            report.kv("selected_secs", format!("{selected:.6}"));
        }
    }
    Ok((report, None))
}
