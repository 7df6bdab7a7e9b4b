//! Monte-Carlo estimates of the three pruning errors next to their closed forms.

use rayon::prelude::*;

use super::mask::MeanEstimate;
use super::theory::{
    comparison_identities, e1_closed, e2_closed, e3_closed, standardized_threshold, ComparisonIdentities,
};
use crate::error::{Result, SalrError};
use crate::linalg::RngState;

/// Smallest sample count accepted by [`run_theory_report`].
pub const MIN_SAMPLES: u64 = 10_000;
const CHUNK: u64 = 1 << 16;

#[derive(Clone, Debug, PartialEq)]
pub struct TheoryReport {
    pub p: f64,
    pub sigma: f64,
    pub tau: f64,
    pub t_p: f64,
    /// Single-matrix pruning MSE `2σ²Q(t_p)`.
    pub mse_closed: f64,
    pub e1_closed: f64,
    pub e2_closed: f64,
    pub e3_closed: f64,
    pub e1_mc: MeanEstimate,
    pub e2_mc: MeanEstimate,
    pub e3_mc: MeanEstimate,
    pub identities: ComparisonIdentities,
    pub samples: u64,
    pub seed: u64,
}

impl TheoryReport {
    /// `e1 ≤ e3 ≤ e2` on the closed forms.
    pub fn closed_ordering_holds(&self) -> bool {
        self.e1_closed <= self.e3_closed && self.e3_closed <= self.e2_closed
    }

    /// The same ordering on the Monte-Carlo estimates, each comparison
    /// allowed `k` combined standard errors of slack.
    pub fn mc_ordering_holds(&self, k: f64) -> bool {
        let slack = |a: &MeanEstimate, b: &MeanEstimate| k * (a.std_err.powi(2) + b.std_err.powi(2)).sqrt();
        self.e1_mc.mean <= self.e3_mc.mean + slack(&self.e1_mc, &self.e3_mc)
            && self.e3_mc.mean <= self.e2_mc.mean + slack(&self.e3_mc, &self.e2_mc)
    }

    /// Every Monte-Carlo estimate within `k` SE of its closed form.
    pub fn mc_matches_closed(&self, k: f64) -> bool {
        self.e1_mc.within_se(self.e1_closed, k)
            && self.e2_mc.within_se(self.e2_closed, k)
            && self.e3_mc.within_se(self.e3_closed, k)
    }

    /// Flat `key=value` lines.
    pub fn to_key_value(&self) -> String {
        let id = &self.identities;
        let lines = [
            format!("p={}", self.p),
            format!("sigma={}", self.sigma),
            format!("tau={}", self.tau),
            format!("samples={}", self.samples),
            format!("seed={}", self.seed),
            format!("t_p={:.12}", self.t_p),
            format!("mse_closed={:.12}", self.mse_closed),
            format!("e1_closed={:.12}", self.e1_closed),
            format!("e2_closed={:.12}", self.e2_closed),
            format!("e3_closed={:.12}", self.e3_closed),
            format!("e1_mc={:.12}", self.e1_mc.mean),
            format!("e1_se={:.3e}", self.e1_mc.std_err),
            format!("e2_mc={:.12}", self.e2_mc.mean),
            format!("e2_se={:.3e}", self.e2_mc.std_err),
            format!("e3_mc={:.12}", self.e3_mc.mean),
            format!("e3_se={:.3e}", self.e3_mc.std_err),
            format!("e3_minus_e1={:.12}", id.e3_minus_e1),
            format!("e2_minus_e3={:.12}", id.e2_minus_e3),
            format!("e2_minus_e1={:.12}", id.e2_minus_e1),
            format!("two_tau2_q={:.12}", id.two_tau2_q),
            format!("two_s2t2_over_v2_t_phi={:.12}", id.two_s2t2_over_v2_t_phi),
            format!("closed_ordering_holds={}", self.closed_ordering_holds()),
            format!("mc_ordering_holds_3se={}", self.mc_ordering_holds(3.0)),
        ];
        let mut s = lines.join("\n");
        s.push('\n');
        s
    }
}

#[derive(Clone, Copy, Default)]
struct Sums {
    s: [f64; 3],
    s2: [f64; 3],
}

/// Streams `samples` independent `(W0, Δ)` pairs and accumulates the
/// squared error of each method under the distributional thresholds.
///
/// Work is split into fixed chunks with their own sub-streams and reduced in
/// chunk order, so the result does not depend on the thread count.
pub fn monte_carlo_errors(p: f64, sigma: f64, tau: f64, samples: u64, seed: u64) -> Result<[MeanEstimate; 3]> {
    let t = standardized_threshold(p)?;
    let thr_w = sigma * t;
    let thr_u = (sigma * sigma + tau * tau).sqrt() * t;
    let root = RngState::new(seed);
    let chunks = samples.div_ceil(CHUNK);
    let partial: Vec<Sums> = (0..chunks)
        .into_par_iter()
        .map(|c| {
            let mut rng = root.split(c);
            let n = CHUNK.min(samples - c * CHUNK);
            let mut acc = Sums::default();
            for _ in 0..n {
                let w0 = sigma * rng.next_gaussian();
                let delta = tau * rng.next_gaussian();
                let u = w0 + delta;
                let pruned_w = w0.abs() <= thr_w;
                let pruned_u = u.abs() <= thr_u;
                let errs = [
                    if pruned_w { w0 * w0 } else { 0.0 },
                    if pruned_u { w0 * w0 } else { 0.0 },
                    if pruned_u { u * u } else { 0.0 },
                ];
                for ((s, s2), e) in acc.s.iter_mut().zip(acc.s2.iter_mut()).zip(errs) {
                    *s += e;
                    *s2 += e * e;
                }
            }
            acc
        })
        .collect();
    let mut total = Sums::default();
    for part in &partial {
        for k in 0..3 {
            total.s[k] += part.s[k];
            total.s2[k] += part.s2[k];
        }
    }
    Ok([0, 1, 2].map(|k| MeanEstimate::from_sums(total.s[k], total.s2[k], samples)))
}

pub fn run_theory_report(p: f64, sigma: f64, tau: f64, samples: u64, seed: u64) -> Result<TheoryReport> {
    if samples < MIN_SAMPLES {
        return Err(SalrError::Domain(format!("need at least {MIN_SAMPLES} samples, got {samples}")));
    }
    let e1 = e1_closed(p, sigma)?;
    let e2 = e2_closed(p, sigma, tau)?;
    let e3 = e3_closed(p, sigma, tau)?;
    let [e1_mc, e2_mc, e3_mc] = monte_carlo_errors(p, sigma, tau, samples, seed)?;
    Ok(TheoryReport {
        p,
        sigma,
        tau,
        t_p: standardized_threshold(p)?,
        mse_closed: e1,
        e1_closed: e1,
        e2_closed: e2,
        e3_closed: e3,
        e1_mc,
        e2_mc,
        e3_mc,
        identities: comparison_identities(p, sigma, tau)?,
        samples,
        seed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn rejects_small_sample_counts() {
        assert!(run_theory_report(0.5, 1.0, 1.0, 100, 1).is_err());
    }

    #[test]
    fn no_delta_methods_agree() {
        let r = run_theory_report(0.5, 1.0, 0.0, 200_000, 7).unwrap();
        assert!((r.e1_mc.mean - r.e3_mc.mean).abs() <= 3.0 * r.e1_mc.std_err);
        assert!((r.e1_mc.mean - r.e2_mc.mean).abs() <= 3.0 * r.e1_mc.std_err);
        assert!(r.mc_matches_closed(3.0));
    }

    #[test]
    fn deterministic_given_seed() {
        let a = monte_carlo_errors(0.3, 1.0, 0.5, 300_000, 99).unwrap();
        let b = monte_carlo_errors(0.3, 1.0, 0.5, 300_000, 99).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn thread_count_does_not_change_result() {
        let run = |threads| {
            rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .unwrap()
                .install(|| monte_carlo_errors(0.6, 1.2, 0.7, 400_000, 5).unwrap())
        };
        assert_eq!(run(1), run(3));
    }

    #[test]
    fn mc_tracks_closed_forms() {
        let r = run_theory_report(0.5, 1.0, 1.0, 1_000_000, 3).unwrap();
        assert!(r.mc_matches_closed(3.0), "{}", r.to_key_value());
        assert!(r.closed_ordering_holds());
    }

    #[test]
    fn key_value_block() {
        let r = run_theory_report(0.5, 1.0, 1.0, 10_000, 3).unwrap();
        let kv = r.to_key_value();
        assert!(kv.lines().all(|l| l.contains('=')));
        assert!(kv.contains("e1_closed=0.071325917744"));
    }
}
