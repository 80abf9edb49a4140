use crate::error::{Error, Result};

use super::Waveform;

/// Signal-to-noise ratio in dB: `10·log10(Σ clean² / Σ noise²)`.
/// Zero noise power returns the `+∞` sentinel (the clean condition).
pub fn measure_snr(clean: &Waveform, noise_component: &Waveform) -> Result<f64> {
    if clean.len() != noise_component.len() {
        return Err(Error::shape(
            "measure_snr",
            format!("{} vs {} samples", clean.len(), noise_component.len()),
        ));
    }
    let clean_power: f64 = clean.samples.iter().map(|s| s * s).sum();
    if clean_power <= 0.0 {
        return Err(Error::invalid("measure_snr", "clean signal is silent"));
    }
    let noise_power: f64 = noise_component.samples.iter().map(|s| s * s).sum();
    if noise_power == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (clean_power / noise_power).log10())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn equal_power_is_zero_db() {
        let a = Waveform::new(vec![0.5, -0.5, 0.5, -0.5], 16000);
        let b = Waveform::new(vec![-0.5, 0.5, -0.5, 0.5], 16000);
        assert!((measure_snr(&a, &b).unwrap() - 0.0).abs() < 1e-12);
    }

    #[test]
    fn quarter_amplitude_noise() {
        let clean = Waveform::new(vec![0.8; 100], 16000);
        let noise = Waveform::new(vec![0.2; 100], 16000);
        let snr = measure_snr(&clean, &noise).unwrap();
        assert!((snr - 20.0 * 4.0f64.log10()).abs() < 1e-12, "got {snr}");
    }

    #[test]
    fn zero_noise_is_infinite() {
        let clean = Waveform::new(vec![0.1; 10], 16000);
        let noise = Waveform::new(vec![0.0; 10], 16000);
        assert_eq!(measure_snr(&clean, &noise).unwrap(), f64::INFINITY);
    }

    #[test]
    fn silent_clean_rejected() {
        let clean = Waveform::new(vec![0.0; 10], 16000);
        let noise = Waveform::new(vec![0.1; 10], 16000);
        assert!(measure_snr(&clean, &noise).is_err());
    }
}
