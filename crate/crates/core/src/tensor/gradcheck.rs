//! Central finite-difference verification of reverse-mode gradients.

use super::{Tape, Tensor, Var};
use crate::error::Result;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

/// One-sided differences disagreeing by more than this fraction mark a
/// kink (a ReLU crossing) inside the step; the probe is retried with a step
/// ten times smaller, at most twice.
const KINK_RATIO: f64 = 1e-2;

#[derive(Clone, Debug)]
pub struct GradCheckOptions {
    /// Central-difference step.
    pub step: f64,
    /// Coordinates probed per input; inputs at most this large are probed
    /// exhaustively, larger ones on a seeded random subset.
    pub max_probes: usize,
    /// Denominator floor of the relative error per unit of `max(1, |f|)`.
    /// Rounding noise of a difference quotient grows with `|f|`, so
    /// coordinates whose gradient falls below that noise are compared
    /// against the floor instead.
    pub floor: f64,
    pub seed: u64,
}

impl Default for GradCheckOptions {
    fn default() -> Self {
        GradCheckOptions {
            step: 1e-5,
            max_probes: 48,
            floor: 1e-5,
            seed: 0x6772_6164,
        }
    }
}

#[derive(Clone, Debug, Default)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    pub probes: usize,
    /// `(input, coordinate, analytic, numeric)` of the worst probe.
    pub worst: Option<(usize, usize, f64, f64)>,
}

pub fn rel_err(analytic: f64, numeric: f64, floor: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(floor)
}

/// Compares reverse-mode gradients of the scalar `f(inputs)` against central
/// differences and returns the worst relative error.
pub fn grad_check<F>(inputs: &[Tensor<f64>], f: F, opts: &GradCheckOptions) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let eval = |values: &[Tensor<f64>]| -> Result<f64> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = values.iter().map(|t| tape.constant(t.clone())).collect();
        let out = f(&mut tape, &vars)?;
        Ok(tape.value(out).item())
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|t| tape.leaf(t.clone().with_grad())).collect();
    let out = f(&mut tape, &vars)?;
    let grads = tape.backward(out)?;
    let base = tape.value(out).item();
    let floor = opts.floor * base.abs().max(1.0);

    let mut rng = ChaCha8Rng::seed_from_u64(opts.seed);
    let mut work: Vec<Tensor<f64>> = inputs.to_vec();
    let mut report = GradCheckReport::default();
    for (i, var) in vars.iter().enumerate() {
        let n = inputs[i].numel();
        let analytic = grads.get(*var).map(|g| g.data().to_vec()).unwrap_or(vec![0.0; n]);
        let coords: Vec<usize> = if n <= opts.max_probes {
            (0..n).collect()
        } else {
            let mut c = rand::seq::index::sample(&mut rng, n, opts.max_probes).into_vec();
            c.sort_unstable();
            c
        };
        for idx in coords {
            let orig = work[i].data()[idx];
            let mut step = opts.step;
            let numeric = loop {
                work[i].data_mut()[idx] = orig + step;
                let plus = eval(&work)?;
                work[i].data_mut()[idx] = orig - step;
                let minus = eval(&work)?;
                work[i].data_mut()[idx] = orig;
                let (fwd, bwd) = ((plus - base) / step, (base - minus) / step);
                let kink = (fwd - bwd).abs() > KINK_RATIO * fwd.abs().max(bwd.abs()).max(floor);
                if !kink || step <= opts.step * 1e-2 {
                    break (plus - minus) / (2.0 * step);
                }
                step /= 10.0;
            };
            let err = rel_err(analytic[idx], numeric, floor);
            report.probes += 1;
            if err > report.max_rel_err || report.worst.is_none() {
                report.max_rel_err = err.max(report.max_rel_err);
                report.worst = Some((i, idx, analytic[idx], numeric));
            }
        }
    }
    Ok(report)
}
