use crate::error::Result;

use super::{dtw_align, MelSpectrogram};

const N_CEPSTRA: usize = 13;
// 10·sqrt(2)/ln(10), the dB scaling of the cepstral L2 distance.
const MCD_SCALE: f64 = 6.141851463713754;

/// Mel-cepstra of one log-mel frame: DCT-II coefficients 1..=13 (c0, which
/// carries overall gain, is excluded).
fn cepstra(frame: ndarray::ArrayView1<f64>) -> [f64; N_CEPSTRA] {
    let b = frame.len();
    let mut c = [0.0; N_CEPSTRA];
    for (k, ck) in c.iter_mut().enumerate() {
        let kk = (k + 1) as f64;
        let mut acc = 0.0;
        for (bi, &x) in frame.iter().enumerate() {
            acc += x * (std::f64::consts::PI * kk * (2.0 * bi as f64 + 1.0) / (2.0 * b as f64)).cos();
        }
        *ck = acc;
    }
    c
}

/// Mel-cepstral distortion in dB: DTW-align the two sequences, convert each
/// aligned log-mel frame pair to 13 cepstral coefficients, and average
/// `(10√2/ln 10)·‖Δc‖₂` over the alignment path.
pub fn mcd(reference: &MelSpectrogram, predicted: &MelSpectrogram) -> Result<f64> {
    let (path, _) = dtw_align(reference, predicted)?;
    let mut total = 0.0;
    for &(i, j) in &path {
        let cr = cepstra(reference.frames.row(i));
        let cp = cepstra(predicted.frames.row(j));
        let dist: f64 = cr
            .iter()
            .zip(cp.iter())
            .map(|(a, b)| (a - b) * (a - b))
            .sum::<f64>()
            .sqrt();
        total += MCD_SCALE * dist;
    }
    Ok(total / path.len() as f64)
}
