use rand::seq::index::sample;
use rand::Rng;

use super::params::{Gradients, ParamId, ParameterSet};

pub const FD_STEP: f64 = 1e-5;

/// Denominator floor of the relative error, so that coordinates with vanishing gradients are
/// judged by absolute error instead.
const REL_FLOOR: f64 = 1e-4;

#[derive(Clone, Debug, PartialEq)]
pub struct GradientCheck {
    pub max_rel_error: f64,
    pub checked: usize,
    /// Worst coordinate: parameter, flat index, analytic, numeric.
    pub worst: Option<(String, usize, f64, f64)>,
}

/// Compares the analytic gradient of `f` with central finite differences on up to
/// `coordinates` randomly chosen scalars.
///
/// `f` must be deterministic in the parameters (fix dropout masks or disable dropout).
pub fn gradient_check<F>(
    mut f: F,
    params: &ParameterSet,
    coordinates: usize,
    rng: &mut impl Rng,
) -> GradientCheck
where
    F: FnMut(&ParameterSet) -> (f64, Gradients),
{
    let (_, analytic) = f(params);
    let total = params.size();
    let picks = sample(rng, total, coordinates.min(total));
    let mut offsets = Vec::with_capacity(params.len());
    let mut acc = 0;
    for id in params.ids() {
        offsets.push(acc);
        acc += params.get(id).len();
    }
    let locate = |flat: usize| -> (ParamId, usize) {
        let i = offsets.partition_point(|&o| o <= flat) - 1;
        (params.ids().nth(i).expect("in range"), flat - offsets[i])
    };

    let mut probe = params.clone();
    let mut result = GradientCheck {
        max_rel_error: 0.0,
        checked: 0,
        worst: None,
    };
    for flat in picks {
        let (id, k) = locate(flat);
        let original = params.get(id).as_slice().expect("standard layout")[k];
        let mut eval_at = |x: f64, probe: &mut ParameterSet| {
            probe.get_mut(id).as_slice_mut().expect("standard layout")[k] = x;
            f(probe).0
        };
        let up = eval_at(original + FD_STEP, &mut probe);
        let down = eval_at(original - FD_STEP, &mut probe);
        probe.get_mut(id).as_slice_mut().expect("standard layout")[k] = original;

        let numeric = (up - down) / (2.0 * FD_STEP);
        let exact = analytic.get(id).as_slice().expect("standard layout")[k];
        let rel = (exact - numeric).abs() / exact.abs().max(numeric.abs()).max(REL_FLOOR);
        result.checked += 1;
        if result.worst.is_none() || rel > result.max_rel_error {
            result.max_rel_error = rel;
            result.worst = Some((params.name(id).to_string(), k, exact, numeric));
        }
    }
    result
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::tape::{bind, Tape};
    use ndarray::array;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn linear_model_is_exact() {
        let mut params = ParameterSet::new();
        let w = params.add("w", array![[0.3], [-0.2], [0.5]]);
        let x = array![[1.0, 2.0, 3.0], [-0.5, 0.5, 0.25]];
        let check = gradient_check(
            |p| {
                let mut tape = Tape::new();
                let b = bind(p, &mut tape);
                let xv = tape.constant(x.clone());
                let y = tape.matmul(xv, b[w]);
                let ones = tape.constant(array![[1.0, 1.0]]);
                let s = tape.matmul(ones, y);
                (tape.scalar(s), tape.gradients(s, p))
            },
            &params,
            3,
            &mut ChaCha8Rng::seed_from_u64(0),
        );
        assert_eq!(check.checked, 3);
        assert!(check.max_rel_error < 1e-8, "{check:?}");
    }
}
