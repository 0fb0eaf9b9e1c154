use super::{Element, Result, Tape, Tensor, TensorError, Var};

/// Outcome of a finite-difference gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    /// Flat index of the worst coordinate.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub checked: usize,
    /// Coordinates skipped because the function has a kink (a max or ReLU
    /// switch) within two steps of the point.
    pub nonsmooth: usize,
}

/// Checks every coordinate of `x`. See [`grad_check_at`].
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, h: f64) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    let all: Vec<usize> = (0..x.numel()).collect();
    grad_check_at(f, x, h, &all)
}

/// Compares the tape gradient of the scalar `f(x)` with the central
/// difference `(f(x+h) − f(x−h)) / 2h` at the given flat indices.
///
/// Relative error uses the denominator `max(|analytic|, |numeric|, 1e-8)`.
///
/// A coordinate is counted in `nonsmooth` and left out of `max_rel_error`
/// when either third difference on `x ± 2h` exceeds `1e-4·h·max(|numeric|, 1e-6)`.
/// Smooth functions give third differences of order `h³`; a slope jump
/// `Δ` inside the stencil gives order `Δ·h`, so any jump large enough to
/// bias the central difference by more than about `1e-4` of the slope
/// itself is caught. The numeric side alone decides this,
/// so a wrong analytic gradient cannot hide behind it.
pub fn grad_check_at<T, F>(
    f: F,
    x: &Tensor<T>,
    h: f64,
    indices: &[usize],
) -> Result<GradCheckReport>
where
    T: Element,
    F: Fn(&mut Tape<T>, Var) -> Result<Var>,
{
    if !(1e-4..=1e-2).contains(&h) {
        return Err(TensorError::Config(format!(
            "finite-difference step must lie in [1e-4, 1e-2], got {h}"
        )));
    }
    let mut tape = Tape::new();
    let xv = tape.param(x.clone());
    let y = f(&mut tape, xv)?;
    if tape.value(y).numel() != 1 {
        return Err(TensorError::Contract(format!(
            "grad_check needs a scalar function, got shape {:?}",
            tape.shape(y)
        )));
    }
    tape.backward(y)?;
    let analytic: Vec<f64> = match tape.grad(xv) {
        Some(g) => g.iter().map(|v| v.to_f64()).collect(),
        None => vec![0.0; x.numel()],
    };

    let eval = |xs: Tensor<T>| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.constant(xs);
        let out = f(&mut t, v)?;
        Ok(t.value(out).item().to_f64())
    };

    let mut report = GradCheckReport {
        max_rel_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        checked: 0,
        nonsmooth: 0,
    };
    let center = eval(x.clone())?;
    let shifted = |i: usize, k: f64| -> Result<f64> {
        let mut xs = x.clone();
        xs.data_mut()[i] += T::from_f64(k * h);
        eval(xs)
    };
    for &i in indices {
        let (p1, m1) = (shifted(i, 1.0)?, shifted(i, -1.0)?);
        let (p2, m2) = (shifted(i, 2.0)?, shifted(i, -2.0)?);
        let numeric = (p1 - m1) / (2.0 * h);
        let a = analytic[i];
        let scale = a.abs().max(numeric.abs());
        let d3_hi = p2 - 3.0 * p1 + 3.0 * center - m1;
        let d3_lo = p1 - 3.0 * center + 3.0 * m1 - m2;
        if d3_hi.abs().max(d3_lo.abs()) > 1e-4 * h * numeric.abs().max(1e-6) {
            report.nonsmooth += 1;
            continue;
        }
        let rel = (a - numeric).abs() / scale.max(1e-8);
        if rel > report.max_rel_error || report.checked == 0 {
            report.max_rel_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
        report.checked += 1;
    }
    Ok(report)
}
