//! Built-in verification suite: gradient contracts, quantizer equivalence
//! and the metric oracles, each reported with its measured error. The
//! hidden sabotage hook deliberately breaks one contract so the suite's
//! ability to fail is itself testable.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use foundtts::autodiff::{finite_diff_check, Tape};
use foundtts::corpus::{
    corrupt_transcript, mix_noise, CorruptOptions, EditMix, InventoryConfig, NoiseKind,
    SymbolInventory,
};
use foundtts::dsp::{dtw_align, levenshtein, mcd, measure_snr, MelConfig, MelSpectrogram, Waveform};
use foundtts::error::Result;
use foundtts::vq::quantize;

#[derive(Debug, Clone, serde::Serialize)]
pub struct CheckResult {
    pub name: String,
    pub passed: bool,
    /// Measured error or deviation for this check.
    pub measured: f64,
    /// The bound it must stay under (or reach, for agreement fractions).
    pub threshold: f64,
    pub detail: String,
}

fn check(name: &str, measured: f64, threshold: f64, upper_bound: bool, detail: String) -> CheckResult {
    let passed = if upper_bound {
        measured <= threshold
    } else {
        measured >= threshold
    };
    CheckResult {
        name: name.to_string(),
        passed,
        measured,
        threshold,
        detail,
    }
}

pub fn run(sabotage: Option<&str>) -> Result<Vec<CheckResult>> {
    let sabotage_grl = matches!(sabotage, Some("grl-sign"));
    let mut out = Vec::new();

    // Stop-gradient: exactly zero flows through the stopped branch.
    {
        let mut t = Tape::new();
        let x = t.leaf(ndarray::array![[1.0, -2.0, 0.5]])?;
        let y = t.stop_gradient(x)?;
        let s = t.sum(y)?;
        let loss = t.scale(s, 5.0)?;
        t.backward(loss)?;
        let g = t.grad_or_zeros(x);
        let worst = g.iter().fold(0.0f64, |a, v| a.max(v.abs()));
        out.push(check(
            "stop_gradient_zero",
            worst,
            0.0,
            true,
            "max |grad| into a stopped branch".into(),
        ));
    }

    // Gradient reversal: backward equals -lambda times the plain graph.
    {
        let lambda = 0.7;
        let x0 = ndarray::array![[0.3, -0.9, 1.1]];
        let w = ndarray::array![[0.5], [-0.2], [0.8]];
        let grad = |reverse: bool| -> Result<Array2<f64>> {
            let mut t = Tape::new();
            let x = t.leaf(x0.clone())?;
            let wid = t.constant(w.clone())?;
            let h = if reverse {
                t.gradient_reversal(x, lambda)?
            } else {
                x
            };
            let m = t.matmul(h, wid)?;
            let a = t.tanh(m)?;
            let loss = t.sum(a)?;
            t.backward(loss)?;
            Ok(t.grad_or_zeros(x))
        };
        let reversed = grad(true)?;
        let plain = grad(false)?;
        let sign = if sabotage_grl { -1.0 } else { 1.0 };
        let worst = reversed
            .iter()
            .zip(plain.iter())
            .map(|(r, p)| (r + sign * lambda * p).abs())
            .fold(0.0f64, f64::max);
        out.push(check(
            "gradient_reversal_scaling",
            worst,
            1e-14,
            true,
            format!("max |g_rev + {lambda}*g_plain| over coordinates"),
        ));
    }

    // Straight-through: the full upstream gradient reaches the continuous
    // input, none reaches the quantized one.
    {
        let mut t = Tape::new();
        let z_e = t.leaf(ndarray::array![[0.1, 0.2]])?;
        let z_q = t.leaf(ndarray::array![[0.9, -0.3]])?;
        let st = t.straight_through(z_e, z_q)?;
        let s = t.sum(st)?;
        let loss = t.scale(s, 2.0)?;
        t.backward(loss)?;
        let ge = t.grad_or_zeros(z_e);
        let gq = t.grad_or_zeros(z_q);
        let err = ge
            .iter()
            .map(|v| (v - 2.0).abs())
            .chain(gq.iter().map(|v| v.abs()))
            .fold(0.0f64, f64::max);
        out.push(check(
            "straight_through_routing",
            err,
            0.0,
            true,
            "gradient routed to z_e exactly, zero to z_q".into(),
        ));
    }

    // Finite differences over a composed differentiable graph.
    {
        let x = Array2::from_shape_fn((1, 6), |(_, j)| 0.3 * (j as f64 + 1.0).sin());
        let res = finite_diff_check(
            |t, id| {
                let w = t.constant(Array2::from_shape_fn((6, 4), |(i, j)| {
                    ((i * 4 + j) as f64 * 0.17).cos() * 0.5
                }))?;
                let h = t.matmul(id, w)?;
                let h = t.tanh(h)?;
                let sm = t.softmax_rows(h)?;
                let sq = t.mul(sm, sm)?;
                t.sum(sq)
            },
            &x,
            1e-4,
            6,
            11,
        )?;
        out.push(check(
            "finite_difference_composed_graph",
            res.max_rel_err,
            1e-3,
            true,
            format!("max rel err over {} probes", res.probed_coordinates),
        ));
    }

    // Quantizer equals an independent scan on 10k draws.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(99);
        let codebook = Array2::from_shape_fn((256, 32), |_| rng.gen_range(-1.0..1.0));
        let mut agree = 0usize;
        let n = 10_000;
        for _ in 0..n {
            let z = Array2::from_shape_fn((1, 32), |_| rng.gen_range(-1.0..1.0));
            let (k, _) = quantize(&z, &codebook)?;
            let mut best = (usize::MAX, f64::INFINITY);
            for i in (0..256).rev() {
                let d: f64 = (0..32).map(|j| (z[(0, j)] - codebook[(i, j)]).powi(2)).sum();
                if d <= best.1 {
                    best = (i, d);
                }
            }
            agree += usize::from(k == best.0);
        }
        out.push(check(
            "quantizer_brute_force_agreement",
            agree as f64 / n as f64,
            1.0,
            false,
            format!("{agree}/{n} index agreements"),
        ));
    }

    // SNR oracle at the two operating points.
    {
        let inv = SymbolInventory::build(InventoryConfig::default(), MelConfig::default(), 16000)?;
        let clean = Waveform::new(
            (0..16000)
                .map(|i| 0.4 * (2.0 * std::f64::consts::PI * 220.0 * i as f64 / 16000.0).sin())
                .collect(),
            16000,
        );
        let mut worst = 0.0f64;
        for target in [4.0, 8.0] {
            let mixed = mix_noise(&clean, &NoiseKind::Pink, target, 5, &inv)?;
            let noise = Waveform::new(
                mixed
                    .noisy
                    .samples
                    .iter()
                    .zip(&clean.samples)
                    .map(|(m, c)| m - mixed.gain * c)
                    .collect(),
                16000,
            );
            let scaled = Waveform::new(clean.samples.iter().map(|c| c * mixed.gain).collect(), 16000);
            let measured = measure_snr(&scaled, &noise)?;
            worst = worst.max((measured - target).abs());
        }
        out.push(check(
            "snr_mixing_oracle",
            worst,
            0.1,
            true,
            "max |measured - target| dB at 4 and 8 dB".into(),
        ));
    }

    // Corpus-level CER targeting.
    {
        let inv = SymbolInventory::build(InventoryConfig::default(), MelConfig::default(), 16000)?;
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        let symbols: Vec<u16> = (0..10_000).map(|_| rng.gen_range(0..24u16)).collect();
        let got = corrupt_transcript(
            &symbols,
            0.233,
            EditMix::default(),
            &inv,
            6,
            CorruptOptions::default(),
        )?;
        let recount = levenshtein(&symbols, &got.transcript).cer;
        out.push(check(
            "cer_corruption_oracle",
            (recount - 0.233).abs(),
            0.01,
            true,
            format!("|achieved {recount:.4} - target 0.233|"),
        ));
    }

    // DTW against exhaustive enumeration on small random pairs.
    {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let mut worst = 0.0f64;
        for _ in 0..50 {
            let mk = |m: usize, rng: &mut ChaCha8Rng| MelSpectrogram {
                frames: Array2::from_shape_fn((m, 3), |_| rng.gen_range(-2.0..2.0)),
                hop_ms: 12.5,
                window_ms: 50.0,
                sample_rate: 16000,
            };
            let a = mk(rng.gen_range(1..=6), &mut rng);
            let b = mk(rng.gen_range(1..=6), &mut rng);
            let (_, cost) = dtw_align(&a, &b)?;
            let brute = brute_force_dtw(&a, &b);
            worst = worst.max((cost - brute).abs());
        }
        out.push(check(
            "dtw_exhaustive_agreement",
            worst,
            1e-9,
            true,
            "max |dtw - brute force| over 50 random pairs".into(),
        ));
    }

    // MCD identities.
    {
        let m = MelSpectrogram {
            frames: Array2::from_shape_fn((9, 80), |(i, j)| ((i * 80 + j) as f64 * 0.19).sin()),
            hop_ms: 12.5,
            window_ms: 50.0,
            sample_rate: 16000,
        };
        let self_mcd = mcd(&m, &m)?;
        let offset = MelSpectrogram {
            frames: &m.frames + 3.0,
            hop_ms: 12.5,
            window_ms: 50.0,
            sample_rate: 16000,
        };
        let gain_mcd = mcd(&m, &offset)?;
        out.push(check(
            "mcd_identities",
            self_mcd.max(gain_mcd),
            1e-9,
            true,
            "MCD(x,x) and MCD under uniform log-gain offset".into(),
        ));
    }

    Ok(out)
}

fn brute_force_dtw(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
    fn dist(a: &MelSpectrogram, b: &MelSpectrogram, i: usize, j: usize) -> f64 {
        a.frames
            .row(i)
            .iter()
            .zip(b.frames.row(j).iter())
            .map(|(x, y)| (x - y) * (x - y))
            .sum::<f64>()
            .sqrt()
    }
    fn recurse(a: &MelSpectrogram, b: &MelSpectrogram, i: usize, j: usize, acc: f64, best: &mut f64) {
        let acc = acc + dist(a, b, i, j);
        if acc >= *best {
            return;
        }
        if i + 1 == a.frames.nrows() && j + 1 == b.frames.nrows() {
            *best = acc;
            return;
        }
        if i + 1 < a.frames.nrows() && j + 1 < b.frames.nrows() {
            recurse(a, b, i + 1, j + 1, acc, best);
        }
        if i + 1 < a.frames.nrows() {
            recurse(a, b, i + 1, j, acc, best);
        }
        if j + 1 < b.frames.nrows() {
            recurse(a, b, i, j + 1, acc, best);
        }
    }
    let mut best = f64::INFINITY;
    recurse(a, b, 0, 0, 0.0, &mut best);
    best
}
