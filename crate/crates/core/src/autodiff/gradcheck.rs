use ndarray::Array2;
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

use super::tape::{Tape, TensorId};

/// Outcome of comparing an analytic gradient against central differences.
#[derive(Debug, Clone, Copy)]
pub struct GradCheckResult {
    pub max_abs_err: f64,
    pub max_rel_err: f64,
    pub probed_coordinates: usize,
}

impl GradCheckResult {
    pub fn passes(&self, rel_tol: f64) -> bool {
        self.max_rel_err < rel_tol
    }
}

/// Relative error with a floor so exactly-zero gradients compare on the
/// absolute scale instead of dividing by zero.
fn rel_err(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(1e-6)
}

/// Compare the tape gradient of a scalar-valued graph against central
/// differences `(f(x+εe_i) - f(x-εe_i)) / 2ε` on `n_probes` coordinates
/// drawn without replacement from a seeded RNG.
///
/// `f` receives a fresh tape and the id of the leaf holding the probe
/// point; it must build a deterministic graph and return a `1×1` output.
pub fn finite_diff_check<F>(
    f: F,
    x: &Array2<f64>,
    epsilon: f64,
    n_probes: usize,
    seed: u64,
) -> Result<GradCheckResult>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
{
    finite_diff_check_filtered(f, x, epsilon, n_probes, seed, |_, _| true)
}

/// As [`finite_diff_check`], with a predicate that can reject probe
/// coordinates sitting on non-smooth points (for a quantizer: coordinates
/// where the nearest-neighbor assignment changes under the perturbation).
pub fn finite_diff_check_filtered<F, P>(
    f: F,
    x: &Array2<f64>,
    epsilon: f64,
    n_probes: usize,
    seed: u64,
    accept_probe: P,
) -> Result<GradCheckResult>
where
    F: Fn(&mut Tape, TensorId) -> Result<TensorId>,
    P: Fn(usize, f64) -> bool,
{
    if !(epsilon > 0.0) {
        return Err(Error::invalid("finite_diff_check", "epsilon must be > 0"));
    }
    if n_probes == 0 {
        return Err(Error::invalid("finite_diff_check", "n_probes must be >= 1"));
    }

    // Analytic gradient at x.
    let mut tape = Tape::new();
    let leaf = tape.leaf(x.clone())?;
    let out = f(&mut tape, leaf)?;
    if tape.value(out).dim() != (1, 1) {
        return Err(Error::shape("finite_diff_check", "f must be scalar-valued"));
    }
    tape.backward(out)?;
    let analytic = tape.grad_or_zeros(leaf);

    let eval = |point: &Array2<f64>| -> Result<f64> {
        let mut t = Tape::new();
        let leaf = t.leaf(point.clone())?;
        let out = f(&mut t, leaf)?;
        let v = t.scalar_value(out);
        if !v.is_finite() {
            return Err(Error::NonFinite {
                op: "finite_diff_check",
            });
        }
        Ok(v)
    };

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut coords: Vec<usize> = (0..x.len()).collect();
    coords.shuffle(&mut rng);

    let mut max_abs = 0.0f64;
    let mut max_rel = 0.0f64;
    let mut probed = 0usize;
    let flat: Vec<f64> = x.iter().cloned().collect();

    for &c in &coords {
        if probed >= n_probes {
            break;
        }
        if !accept_probe(c, epsilon) {
            continue;
        }
        let (r, col) = (c / x.ncols(), c % x.ncols());
        let mut plus = x.clone();
        plus[(r, col)] = flat[c] + epsilon;
        let mut minus = x.clone();
        minus[(r, col)] = flat[c] - epsilon;
        let numeric = (eval(&plus)? - eval(&minus)?) / (2.0 * epsilon);
        let a = analytic[(r, col)];
        max_abs = max_abs.max((a - numeric).abs());
        max_rel = max_rel.max(rel_err(a, numeric));
        probed += 1;
    }

    if probed == 0 {
        return Err(Error::invalid(
            "finite_diff_check",
            "no probe coordinate accepted",
        ));
    }

    Ok(GradCheckResult {
        max_abs_err: max_abs,
        max_rel_err: max_rel,
        probed_coordinates: probed,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    #[test]
    fn sum_of_squares_matches_analytic() {
        let x = array![[1.0, 2.0, 3.0]];
        let res = finite_diff_check(
            |t, id| {
                let sq = t.mul(id, id)?;
                t.sum(sq)
            },
            &x,
            1e-4,
            3,
            7,
        )
        .unwrap();
        assert_eq!(res.probed_coordinates, 3);
        assert!(res.max_rel_err < 1e-5, "rel err {}", res.max_rel_err);
    }

    #[test]
    fn constant_function_has_zero_gradient() {
        let x = array![[0.4, -1.2]];
        let res = finite_diff_check(|t, _| t.scalar(3.5), &x, 1e-4, 2, 1).unwrap();
        assert_eq!(res.max_abs_err, 0.0);
        assert_eq!(res.max_rel_err, 0.0);
    }

    #[test]
    fn stop_gradient_needs_an_sg_aware_oracle() {
        // loss = sum(sg(x) ⊙ x). The tape gradient is sg(x) = x. A naive
        // oracle that differentiates through the stopped branch would see
        // d/dx sum(x²) = 2x instead; central differences (which perturb the
        // full function including the stopped branch) reproduce exactly that
        // disagreement, so the check must fail when probing the raw graph...
        let x = array![[1.5, -0.7, 2.2]];
        let res = finite_diff_check(
            |t, id| {
                let sg = t.stop_gradient(id)?;
                let p = t.mul(sg, id)?;
                t.sum(p)
            },
            &x,
            1e-4,
            3,
            3,
        )
        .unwrap();
        assert!(res.max_rel_err > 0.4, "expected disagreement, got {}", res.max_rel_err);

        // ...and pass once the oracle respects the stopped branch by holding
        // it constant at its value from the unperturbed point.
        let frozen = x.clone();
        let res = finite_diff_check(
            move |t, id| {
                let sg = t.constant(frozen.clone())?;
                let p = t.mul(sg, id)?;
                t.sum(p)
            },
            &x,
            1e-4,
            3,
            3,
        )
        .unwrap();
        assert!(res.max_rel_err < 1e-6, "rel err {}", res.max_rel_err);
    }

    #[test]
    fn grl_composed_graph_matches_negated_plain_graph() {
        // A small classifier-like graph with and without the reversal:
        // analytic gradients must differ by exactly -lambda.
        let x = array![[0.3, -0.9, 1.1]];
        let w = array![[0.5], [-0.2], [0.8]];
        let lambda = 0.7;

        let grad_with = {
            let mut t = Tape::new();
            let xid = t.leaf(x.clone()).unwrap();
            let wid = t.constant(w.clone()).unwrap();
            let rev = t.gradient_reversal(xid, lambda).unwrap();
            let h = t.matmul(rev, wid).unwrap();
            let a = t.tanh(h).unwrap();
            let loss = t.sum(a).unwrap();
            t.backward(loss).unwrap();
            t.grad_or_zeros(xid)
        };
        let grad_plain = {
            let mut t = Tape::new();
            let xid = t.leaf(x.clone()).unwrap();
            let wid = t.constant(w.clone()).unwrap();
            let h = t.matmul(xid, wid).unwrap();
            let a = t.tanh(h).unwrap();
            let loss = t.sum(a).unwrap();
            t.backward(loss).unwrap();
            t.grad_or_zeros(xid)
        };
        for (a, b) in grad_with.iter().zip(grad_plain.iter()) {
            assert!((a + lambda * b).abs() < 1e-15, "{a} vs -{lambda}*{b}");
        }
    }

    #[test]
    fn probe_filter_excludes_coordinates() {
        let x = array![[1.0, 2.0, 3.0, 4.0]];
        let res = finite_diff_check_filtered(
            |t, id| {
                let sq = t.mul(id, id)?;
                t.sum(sq)
            },
            &x,
            1e-4,
            10,
            5,
            |c, _| c != 0, // pretend coordinate 0 sits on a boundary
        )
        .unwrap();
        assert_eq!(res.probed_coordinates, 3);
    }
}
