use crate::error::{Error, Result};

use super::MelSpectrogram;

/// Monotone alignment between two frame sequences: ordered `(i, j)` pairs
/// from `(0, 0)` to `(m1-1, m2-1)` with steps from `{(1,0), (0,1), (1,1)}`.
pub type AlignmentPath = Vec<(usize, usize)>;

fn frame_distance(a: &MelSpectrogram, b: &MelSpectrogram, i: usize, j: usize) -> f64 {
    let (ra, rb) = (a.frames.row(i), b.frames.row(j));
    ra.iter()
        .zip(rb.iter())
        .map(|(x, y)| (x - y) * (x - y))
        .sum::<f64>()
        .sqrt()
}

/// Globally minimal-cost monotone alignment under Euclidean frame distance.
/// Every cell on the path contributes its local distance once, including
/// both endpoints. Backtrace ties prefer the diagonal step, then advancing
/// the first sequence.
pub fn dtw_align(a: &MelSpectrogram, b: &MelSpectrogram) -> Result<(AlignmentPath, f64)> {
    let (m1, m2) = (a.n_frames(), b.n_frames());
    if m1 == 0 || m2 == 0 {
        return Err(Error::invalid("dtw_align", "empty sequence"));
    }
    if a.n_bands() != b.n_bands() {
        return Err(Error::shape(
            "dtw_align",
            format!("{} vs {} bands", a.n_bands(), b.n_bands()),
        ));
    }

    let mut cost = vec![vec![f64::INFINITY; m2]; m1];
    for i in 0..m1 {
        for j in 0..m2 {
            let d = frame_distance(a, b, i, j);
            let best_prev = if i == 0 && j == 0 {
                0.0
            } else {
                let mut best = f64::INFINITY;
                if i > 0 && j > 0 {
                    best = best.min(cost[i - 1][j - 1]);
                }
                if i > 0 {
                    best = best.min(cost[i - 1][j]);
                }
                if j > 0 {
                    best = best.min(cost[i][j - 1]);
                }
                best
            };
            cost[i][j] = d + best_prev;
        }
    }

    let mut path = Vec::with_capacity(m1.max(m2));
    let (mut i, mut j) = (m1 - 1, m2 - 1);
    path.push((i, j));
    while i > 0 || j > 0 {
        let diag = if i > 0 && j > 0 {
            cost[i - 1][j - 1]
        } else {
            f64::INFINITY
        };
        let up = if i > 0 { cost[i - 1][j] } else { f64::INFINITY };
        let left = if j > 0 { cost[i][j - 1] } else { f64::INFINITY };
        if diag <= up && diag <= left {
            i -= 1;
            j -= 1;
        } else if up <= left {
            i -= 1;
        } else {
            j -= 1;
        }
        path.push((i, j));
    }
    path.reverse();
    Ok((path, cost[m1 - 1][m2 - 1]))
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::Array2;

    fn mel_of(rows: Vec<Vec<f64>>) -> MelSpectrogram {
        let n = rows.len();
        let b = rows[0].len();
        let flat: Vec<f64> = rows.into_iter().flatten().collect();
        MelSpectrogram {
            frames: Array2::from_shape_vec((n, b), flat).unwrap(),
            hop_ms: 12.5,
            window_ms: 50.0,
            sample_rate: 16000,
        }
    }

    #[test]
    fn identical_sequences_take_the_diagonal() {
        let a = mel_of(vec![vec![0.0, 1.0], vec![2.0, 3.0], vec![4.0, 5.0]]);
        let (path, cost) = dtw_align(&a, &a).unwrap();
        assert_eq!(path, vec![(0, 0), (1, 1), (2, 2)]);
        assert_eq!(cost, 0.0);
    }

    #[test]
    fn duplicated_frame_costs_nothing() {
        let a = mel_of(vec![vec![0.0], vec![1.0], vec![2.0]]);
        let b = mel_of(vec![vec![0.0], vec![1.0], vec![1.0], vec![2.0]]);
        let (path, cost) = dtw_align(&a, &b).unwrap();
        assert_eq!(cost, 0.0);
        let steps: Vec<(usize, usize)> = path
            .windows(2)
            .map(|w| (w[1].0 - w[0].0, w[1].1 - w[0].1))
            .collect();
        assert_eq!(steps.iter().filter(|&&s| s == (0, 1)).count(), 1);
    }

    #[test]
    fn band_mismatch_rejected() {
        let a = mel_of(vec![vec![0.0, 1.0]]);
        let b = mel_of(vec![vec![0.0]]);
        assert!(dtw_align(&a, &b).is_err());
    }

    /// Exhaustive enumeration of all monotone paths for small cases.
    fn brute_force_cost(a: &MelSpectrogram, b: &MelSpectrogram) -> f64 {
        fn recurse(
            a: &MelSpectrogram,
            b: &MelSpectrogram,
            i: usize,
            j: usize,
            acc: f64,
            best: &mut f64,
        ) {
            let acc = acc + frame_distance(a, b, i, j);
            if acc >= *best {
                return;
            }
            if i == a.n_frames() - 1 && j == b.n_frames() - 1 {
                *best = acc;
                return;
            }
            if i + 1 < a.n_frames() && j + 1 < b.n_frames() {
                recurse(a, b, i + 1, j + 1, acc, best);
            }
            if i + 1 < a.n_frames() {
                recurse(a, b, i + 1, j, acc, best);
            }
            if j + 1 < b.n_frames() {
                recurse(a, b, i, j + 1, acc, best);
            }
        }
        let mut best = f64::INFINITY;
        recurse(a, b, 0, 0, 0.0, &mut best);
        best
    }

    #[test]
    fn matches_exhaustive_path_enumeration() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(42);
        for _ in 0..50 {
            let (m1, m2) = (rng.gen_range(1..=6), rng.gen_range(1..=6));
            let mk = |m: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                mel_of(
                    (0..m)
                        .map(|_| (0..3).map(|_| rng.gen_range(-2.0..2.0)).collect())
                        .collect(),
                )
            };
            let a = mk(m1, &mut rng);
            let b = mk(m2, &mut rng);
            let (_, cost) = dtw_align(&a, &b).unwrap();
            let brute = brute_force_cost(&a, &b);
            assert!((cost - brute).abs() < 1e-9, "dtw {cost} vs brute {brute}");
        }
    }

    #[test]
    fn cost_is_symmetric() {
        use rand::Rng;
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(7);
        for _ in 0..20 {
            let mk = |m: usize, rng: &mut rand_chacha::ChaCha8Rng| {
                mel_of(
                    (0..m)
                        .map(|_| (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect())
                        .collect(),
                )
            };
            let (m1, m2) = (rng.gen_range(1..=5), rng.gen_range(1..=5));
            let a = mk(m1, &mut rng);
            let b = mk(m2, &mut rng);
            let (pab, cab) = dtw_align(&a, &b).unwrap();
            let (pba, cba) = dtw_align(&b, &a).unwrap();
            assert!((cab - cba).abs() < 1e-9);
            // Transposing one optimal path gives a path of equal cost, not
            // necessarily the same tie-broken one.
            assert_eq!(pab.len(), pba.len());
        }
    }
}
