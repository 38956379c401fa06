//! Central-difference verification of tape gradients.

use super::{DiffError, Tape, Tensor, Var};

/// Outcome of [`finite_diff_check`].
#[derive(Debug, Clone)]
pub struct GradCheckReport {
    pub analytic: Vec<f64>,
    pub numeric: Vec<f64>,
    pub rel_errors: Vec<f64>,
    pub max_rel_error: f64,
    pub tolerance: f64,
    /// Coordinates where the one-sided slopes disagree independently of the
    /// probe width, i.e. the function has a kink at `x0`.
    pub nonsmooth: Vec<usize>,
}

impl GradCheckReport {
    pub fn within_tolerance(&self) -> bool {
        self.max_rel_error < self.tolerance
    }

    /// Within tolerance and no kink detected.
    pub fn passed(&self) -> bool {
        self.within_tolerance() && self.nonsmooth.is_empty()
    }
}

fn eval<E, F>(f: &F, x: &[f64], coordinate: usize, sign: char) -> Result<f64, E>
where
    E: From<DiffError>,
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, E>,
{
    let tape = Tape::new();
    let v = tape.constant(Tensor::vector(x.to_vec()));
    let y = f(&tape, v)?.item();
    if y.is_finite() {
        Ok(y)
    } else {
        Err(DiffError::NonFinite { coordinate, sign }.into())
    }
}

/// Compare the tape gradient of scalar `f` at `x0` against central
/// differences of width `epsilon`.
///
/// Relative error per coordinate uses `max(|analytic|, |numeric|, 1e-8)` as
/// denominator.
pub fn finite_diff_check<E, F>(f: F, x0: &[f64], epsilon: f64, tolerance: f64) -> Result<GradCheckReport, E>
where
    E: From<DiffError>,
    F: for<'t> Fn(&'t Tape, Var<'t>) -> Result<Var<'t>, E>,
{
    assert!(epsilon > 0.0, "epsilon must be positive");
    let analytic = {
        let tape = Tape::new();
        let x = tape.var(Tensor::vector(x0.to_vec()));
        let y = f(&tape, x)?;
        if !y.item().is_finite() {
            return Err(DiffError::NonFinite { coordinate: 0, sign: ' ' }.into());
        }
        let g = tape.backward(&y)?;
        g.wrt(&x).into_data()
    };
    let f0 = eval(&f, x0, 0, ' ')?;

    let mut numeric = Vec::with_capacity(x0.len());
    let mut rel_errors = Vec::with_capacity(x0.len());
    let mut nonsmooth = Vec::new();
    let mut probe = x0.to_vec();
    for i in 0..x0.len() {
        let mut at = |h: f64, sign: char| {
            probe[i] = x0[i] + h;
            let r = eval(&f, &probe, i, sign);
            probe[i] = x0[i];
            r
        };
        let fp = at(epsilon, '+')?;
        let fm = at(-epsilon, '-')?;
        let fp2 = at(0.5 * epsilon, '+')?;
        let fm2 = at(-0.5 * epsilon, '-')?;

        let central = (fp - fm) / (2.0 * epsilon);
        let denom = analytic[i].abs().max(central.abs()).max(1e-8);
        rel_errors.push((analytic[i] - central).abs() / denom);
        numeric.push(central);

        // A kink keeps the slope jump constant as the probe shrinks; smooth
        // curvature halves it.
        let fwd = (fp - f0) / epsilon;
        let bwd = (f0 - fm) / epsilon;
        let jump = fwd - bwd;
        let jump_half = ((fp2 - f0) - (f0 - fm2)) / (0.5 * epsilon);
        let scale = fwd.abs().max(bwd.abs()).max(1e-8);
        if jump.abs() > tolerance * scale && jump_half.abs() > 0.75 * jump.abs() {
            nonsmooth.push(i);
        }
    }
    let max_rel_error = rel_errors.iter().copied().fold(0.0, f64::max);
    Ok(GradCheckReport { analytic, numeric, rel_errors, max_rel_error, tolerance, nonsmooth })
}
