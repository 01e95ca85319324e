use super::IqGrid;
use crate::error::{check_dim, Error, Result};

/// RMS error-vector magnitude in percent of the reference RMS amplitude.
pub fn compute_evm(reference: &IqGrid, received: &IqGrid) -> Result<f64> {
    check_dim("evm subcarriers", reference.n_fft(), received.n_fft())?;
    check_dim("evm channel uses", reference.n_ch(), received.n_ch())?;
    let ref_energy = reference.energy();
    if ref_energy == 0.0 {
        return Err(Error::Config("EVM reference is all zero".into()));
    }
    let err: f64 = reference
        .data()
        .iter()
        .zip(received.data())
        .map(|(a, b)| (b - a).norm_sqr())
        .sum();
    Ok(100.0 * (err / ref_energy).sqrt())
}
