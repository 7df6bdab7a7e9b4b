use crate::error::{Result, SalrError};
use crate::linalg::{svd, DenseMatrix};

/// Energy threshold for [`SpectrumReport::i99`].
pub const ENERGY_TARGET: f64 = 0.99;
/// Singular values below this fraction of `σ_max` count as zero in
/// [`SpectrumReport::q_effective`].
pub const RANK_CUTOFF: f64 = 1e-12;

/// Normalized cumulative singular-value energy of a matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct SpectrumReport {
    pub singular_values: Vec<f64>,
    /// `cumulative_energy[i] = Σ_{j≤i} σ_j² / Σ_j σ_j²` (0-based `i`).
    pub cumulative_energy: Vec<f64>,
    /// Smallest count of leading singular values reaching 99% of the energy.
    pub i99: usize,
    pub q_effective: usize,
}

impl SpectrumReport {
    /// Fraction of energy held by the leading `r` singular values.
    pub fn energy_at_rank(&self, r: usize) -> f64 {
        match r {
            0 => 0.0,
            r => self.cumulative_energy[(r - 1).min(self.cumulative_energy.len() - 1)],
        }
    }

    /// `index,cumulative_energy` rows (1-based index) after a header line.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("index,cumulative_energy\n");
        for (i, c) in self.cumulative_energy.iter().enumerate() {
            out.push_str(&format!("{},{:.15}\n", i + 1, c));
        }
        out
    }
}

pub(crate) fn spectrum_from_values(s: &[f64]) -> Result<SpectrumReport> {
    let total: f64 = s.iter().map(|v| v * v).sum();
    if total == 0.0 {
        return Err(SalrError::Domain("spectrum of a zero matrix is undefined".into()));
    }
    let mut acc = 0.0;
    let cumulative: Vec<f64> = s
        .iter()
        .map(|v| {
            acc += v * v;
            acc / total
        })
        .collect();
    let i99 = cumulative.iter().position(|&c| c >= ENERGY_TARGET).map_or(cumulative.len(), |i| i + 1);
    let top = s[0];
    Ok(SpectrumReport {
        singular_values: s.to_vec(),
        cumulative_energy: cumulative,
        i99,
        q_effective: s.iter().filter(|&&v| v > RANK_CUTOFF * top).count(),
    })
}

pub fn spectrum(e: &DenseMatrix) -> Result<SpectrumReport> {
    if e.as_slice().iter().all(|&v| v == 0.0) {
        return Err(SalrError::Domain("spectrum of a zero matrix is undefined".into()));
    }
    spectrum_from_values(&svd(e)?.s)
}
