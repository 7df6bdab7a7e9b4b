//! Gradient descent on the sparse-path residual `M` of a pruned, LoRA-adapted layer.

use super::adapter::{adapter_from_svd, AdapterPair};
use crate::error::{Result, SalrError};
use crate::linalg::{matmul, power_iteration_sigma_max, svd, DenseMatrix};

/// How the step size `η` is chosen.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum StepSize {
    /// `1 / σ̂_max(X)²`.
    Auto,
    /// `0.5 / σ̂_max(X)²`.
    AutoHalf,
    /// User-supplied; must satisfy `0 < η < 2 / σ_max(X)²`.
    Fixed(f64),
}

#[derive(Clone, Debug, PartialEq)]
pub struct ResidualTrainConfig {
    pub step: StepSize,
    pub max_iters: usize,
    pub grad_tol: f64,
    pub power_iters: usize,
    /// Truncate the final `M` to this rank and return it as an adapter.
    pub retruncate_rank: Option<usize>,
}

impl Default for ResidualTrainConfig {
    fn default() -> Self {
        Self { step: StepSize::AutoHalf, max_iters: 1000, grad_tol: 1e-8, power_iters: 200, retruncate_rank: None }
    }
}

#[derive(Clone, Debug)]
pub struct TrainOutcome {
    pub m: DenseMatrix,
    /// `½‖XM − R‖_F²` before each step and after the last one.
    pub loss_trace: Vec<f64>,
    pub step_size: f64,
    pub sigma_max_estimate: f64,
    pub iterations: usize,
    pub final_grad_norm: f64,
    pub converged: bool,
    pub adapter: Option<AdapterPair>,
}

fn check_mr(x: &DenseMatrix, m: &DenseMatrix, r: &DenseMatrix) -> Result<()> {
    if x.cols() != m.rows() || x.rows() != r.rows() || m.cols() != r.cols() {
        return Err(SalrError::shape("residual", format!("X {:?}, M {:?}, R {:?}", x.shape(), m.shape(), r.shape())));
    }
    Ok(())
}

/// No step raises the loss by more than rounding in its last few bits.
pub fn loss_nonincreasing(trace: &[f64]) -> bool {
    trace.windows(2).all(|w| w[1] <= w[0] + 8.0 * f64::EPSILON * w[0].abs())
}

/// Error-free transformation accumulator: sums as if in twice the working
/// precision, so `XM − R` stays accurate when the two nearly cancel.
#[derive(Default)]
struct Dot2 {
    hi: f64,
    lo: f64,
}

impl Dot2 {
    fn add(&mut self, v: f64) {
        let s = self.hi + v;
        let bb = s - self.hi;
        self.lo += (self.hi - (s - bb)) + (v - bb);
        self.hi = s;
    }

    fn add_prod(&mut self, a: f64, b: f64) {
        let p = a * b;
        self.lo += a.mul_add(b, -p);
        self.add(p);
    }

    fn value(&self) -> f64 {
        self.hi + self.lo
    }
}

/// `XM − R` with compensated dot products.
fn residual_matrix(x: &DenseMatrix, m: &DenseMatrix, r: &DenseMatrix) -> DenseMatrix {
    DenseMatrix::from_fn(x.rows(), m.cols(), |i, j| {
        let mut acc = Dot2::default();
        acc.add(-r.get(i, j));
        for (t, &a) in x.row(i).iter().enumerate() {
            acc.add_prod(a, m.get(t, j));
        }
        acc.value()
    })
}

fn half_norm_sq(p: &DenseMatrix) -> f64 {
    let mut acc = Dot2::default();
    for &v in p.as_slice() {
        acc.add_prod(v, v);
    }
    0.5 * acc.value()
}

/// `½‖XM − R‖_F²`.
pub fn residual_loss(x: &DenseMatrix, m: &DenseMatrix, r: &DenseMatrix) -> Result<f64> {
    check_mr(x, m, r)?;
    Ok(half_norm_sq(&residual_matrix(x, m, r)))
}

/// `Xᵀ(XM − R)`.
pub fn residual_gradient(x: &DenseMatrix, m: &DenseMatrix, r: &DenseMatrix) -> Result<DenseMatrix> {
    check_mr(x, m, r)?;
    matmul(&x.transpose(), &residual_matrix(x, m, r))
}

/// `σ_max(X)²`, from a full SVD.
pub fn lipschitz_constant(x: &DenseMatrix) -> Result<f64> {
    let s = svd(x)?.s[0];
    Ok(s * s)
}

/// `1 / σ̂²` with `σ̂` from power iteration.
pub fn optimal_step_size(x: &DenseMatrix, power_iters: usize) -> Result<f64> {
    let s = power_iteration_sigma_max(x, power_iters.max(1), 1e-15);
    if s == 0.0 {
        return Err(SalrError::Domain("step size undefined for a zero matrix".into()));
    }
    Ok(1.0 / (s * s))
}

/// Descends on `M` against `R = Y − X(Ŵ + scale·AB)`.
pub fn train_residual(
    x: &DenseMatrix,
    y: &DenseMatrix,
    w_hat: &DenseMatrix,
    lora: &AdapterPair,
    m0: &DenseMatrix,
    cfg: &ResidualTrainConfig,
) -> Result<TrainOutcome> {
    if w_hat.shape() != (x.cols(), y.cols()) || lora.d_in() != x.cols() || lora.d_out() != y.cols() {
        return Err(SalrError::shape(
            "train_residual",
            format!(
                "X {:?}, Y {:?}, W_hat {:?}, adapter {}x{}",
                x.shape(),
                y.shape(),
                w_hat.shape(),
                lora.d_in(),
                lora.d_out()
            ),
        ));
    }
    if cfg.grad_tol.is_nan() || cfg.grad_tol < 0.0 {
        return Err(SalrError::Config("grad_tol must be non-negative".into()));
    }
    let r = y.sub(&matmul(x, &w_hat.add(&lora.delta())?)?)?;
    check_mr(x, m0, &r)?;

    let sigma_hat = power_iteration_sigma_max(x, cfg.power_iters.max(1), 1e-15);
    let eta = match cfg.step {
        StepSize::Auto | StepSize::AutoHalf if sigma_hat == 0.0 => 0.0,
        StepSize::Auto => 1.0 / (sigma_hat * sigma_hat),
        StepSize::AutoHalf => 0.5 / (sigma_hat * sigma_hat),
        StepSize::Fixed(eta) => {
            let lip = lipschitz_constant(x)?;
            if !(eta > 0.0 && eta < 2.0 / lip) {
                return Err(SalrError::Config(format!("step {eta} outside (0, {}) for this input", 2.0 / lip)));
            }
            eta
        }
    };

    let xt = x.transpose();
    let mut m = m0.clone();
    let mut trace = Vec::new();
    let mut iterations = 0;
    let grad_norm = loop {
        let res = residual_matrix(x, &m, &r);
        trace.push(half_norm_sq(&res));
        let g = matmul(&xt, &res)?;
        let gn = g.frobenius_norm();
        if gn <= cfg.grad_tol || iterations == cfg.max_iters {
            break gn;
        }
        m = m.sub(&g.scaled(eta))?;
        iterations += 1;
    };

    let adapter = match cfg.retruncate_rank {
        Some(rank) => {
            if rank == 0 || rank > m.rows().min(m.cols()) {
                return Err(SalrError::Domain(format!("retruncation rank {rank} out of range")));
            }
            Some(adapter_from_svd(&svd(&m)?, rank)?)
        }
        None => None,
    };

    Ok(TrainOutcome {
        m,
        loss_trace: trace,
        step_size: eta,
        sigma_max_estimate: sigma_hat,
        iterations,
        final_grad_norm: grad_norm,
        converged: grad_norm <= cfg.grad_tol,
        adapter,
    })
}
