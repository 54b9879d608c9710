//! Central finite-difference verification of tape gradients.

use alloc::collections::BTreeMap;
use alloc::string::String;
use alloc::vec::Vec;

use crate::network::{attach, unroll_on_tape, NetVars, Parameters};
use crate::{Error, Result, Tape, Tensor, Var};

/// Denominator floor for relative errors, so that gradients that are zero up
/// to round-off do not produce huge ratios.
pub const RELATIVE_ERROR_FLOOR: f64 = 1e-6;

#[derive(Clone, Debug, PartialEq)]
pub struct ParamCheck {
    pub index: usize,
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// Flat index of the element with the largest relative error.
    pub worst_element: usize,
    /// Elements whose step had to be shrunk because the one-sided
    /// differences disagreed (a kink inside the stencil).
    pub refined: usize,
    pub flagged: bool,
}

#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    pub params: Vec<ParamCheck>,
    pub tolerance: f64,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.params.iter().all(|p| !p.flagged)
    }

    pub fn max_rel_error(&self) -> f64 {
        self.params.iter().map(|p| p.max_rel_error).fold(0.0, f64::max)
    }

    pub fn flagged(&self) -> impl Iterator<Item = &ParamCheck> {
        self.params.iter().filter(|p| p.flagged)
    }

    pub fn refined(&self) -> usize {
        self.params.iter().map(|p| p.refined).sum()
    }
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(RELATIVE_ERROR_FLOOR)
}

fn forward<F>(f: &F, params: &[Tensor<f64>]) -> Result<(Tape<f64>, Var, Vec<Var>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    Ok((tape, loss, vars))
}

fn loss_value<F>(f: &F, params: &[Tensor<f64>]) -> Result<f64>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, loss, _) = forward(f, params)?;
    tape.value(loss).item()
}

/// Analytic gradients of `f` with respect to each of `params`.
pub fn analytic_gradients<F>(f: &F, params: &[Tensor<f64>]) -> Result<Vec<Tensor<f64>>>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, loss, vars) = forward(f, params)?;
    let grads = tape.backward(loss)?;
    Ok(vars.iter().map(|&v| grads.get_or_zeros(&tape, v)).collect())
}

/// Checks the tape's gradients of the scalar computation `f` against central
/// differences with the given step.
///
/// `f` receives a fresh tape and one `Var` per entry of `params`.
pub fn grad_check<F>(f: F, params: &[Tensor<f64>], step: f64, tolerance: f64) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let first = loss_value(&f, params)?;
    let second = loss_value(&f, params)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let analytic = analytic_gradients(&f, params)?;
    compare_gradients(f, params, &analytic, step, tolerance)
}

/// Compares caller-supplied gradients against central differences of `f`.
pub fn compare_gradients<F>(
    f: F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    compare(&f, params, analytic, step, None, tolerance)
}

/// Like [`compare_gradients`], but aware of kinks in piecewise-linear ops.
///
/// Each perturbed evaluation's [`Tape::kink_signature`] is compared with the
/// unperturbed one. A central difference is used only when neither side
/// crossed a kink. When one side did, the other side's one-sided difference is
/// Richardson-extrapolated from steps `h` and `h/2`; when both did, the step is
/// divided by ten, down to `min_step`, after which the plain central
/// difference stands.
pub fn compare_gradients_refined<F>(
    f: F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    min_step: f64,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if !(min_step > 0.0 && min_step <= step) {
        return Err(Error::InvalidConfig(alloc::format!("min step {min_step} must lie in (0, {step}]")));
    }
    compare(&f, params, analytic, step, Some(min_step), tolerance)
}

fn signed_value<F>(f: &F, params: &[Tensor<f64>]) -> Result<(f64, Vec<bool>)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let (tape, loss, _) = forward(f, params)?;
    Ok((tape.value(loss).item()?, tape.kink_signature()))
}

/// Numeric derivative of one element that avoids straddling kinks.
fn kink_free_derivative<F>(
    f: &F,
    work: &mut [Tensor<f64>],
    (index, e): (usize, usize),
    (base, signature): (f64, &[bool]),
    step: f64,
    min_step: f64,
) -> Result<(f64, bool)>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    let original = work[index].data()[e];
    let eval = |work: &mut [Tensor<f64>], delta: f64| -> Result<(f64, bool)> {
        work[index].data_mut()[e] = original + delta;
        let out = signed_value(f, work);
        work[index].data_mut()[e] = original;
        let (value, sig) = out?;
        Ok((value, sig == signature))
    };
    let mut h = step;
    let mut refined = false;
    loop {
        let (plus, right_clean) = eval(work, h)?;
        let (minus, left_clean) = eval(work, -h)?;
        if right_clean && left_clean {
            return Ok(((plus - minus) / (2.0 * h), refined));
        }
        refined = true;
        for (clean, far, sign) in [(right_clean, plus, 1.0), (left_clean, minus, -1.0)] {
            if clean {
                let (near, _) = eval(work, sign * h / 2.0)?;
                let coarse = (far - base) / (sign * h);
                let fine = (near - base) / (sign * h / 2.0);
                return Ok((2.0 * fine - coarse, refined));
            }
        }
        if h / 10.0 < min_step * (1.0 - 1e-9) {
            return Ok(((plus - minus) / (2.0 * h), refined));
        }
        h /= 10.0;
    }
}

fn compare<F>(
    f: &F,
    params: &[Tensor<f64>],
    analytic: &[Tensor<f64>],
    step: f64,
    min_step: Option<f64>,
    tolerance: f64,
) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape<f64>, &[Var]) -> Result<Var>,
{
    if params.len() != analytic.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "{} gradients for {} parameters",
            analytic.len(),
            params.len()
        )));
    }
    let base = match min_step {
        Some(_) => Some(signed_value(f, params)?),
        None => None,
    };
    let mut work: Vec<Tensor<f64>> = params.to_vec();
    let mut checks = Vec::with_capacity(params.len());
    for (index, grad) in analytic.iter().enumerate() {
        if grad.shape() != params[index].shape() {
            return Err(Error::shape("grad_check", grad.shape(), params[index].shape()));
        }
        let mut check = ParamCheck {
            index,
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst_element: 0,
            refined: 0,
            flagged: false,
        };
        for e in 0..params[index].len() {
            let numeric = match (&base, min_step) {
                (Some((value, signature)), Some(min_step)) => {
                    let (d, refined) =
                        kink_free_derivative(f, &mut work, (index, e), (*value, signature), step, min_step)?;
                    check.refined += usize::from(refined);
                    d
                }
                _ => {
                    let original = params[index].data()[e];
                    work[index].data_mut()[e] = original + step;
                    let plus = loss_value(f, &work)?;
                    work[index].data_mut()[e] = original - step;
                    let minus = loss_value(f, &work)?;
                    work[index].data_mut()[e] = original;
                    (plus - minus) / (2.0 * step)
                }
            };
            let a = grad.data()[e];
            let rel = relative_error(a, numeric);
            check.max_abs_error = check.max_abs_error.max((a - numeric).abs());
            if rel > check.max_rel_error || !rel.is_finite() {
                check.max_rel_error = rel;
                check.worst_element = e;
            }
        }
        check.flagged = !(check.max_rel_error < tolerance);
        checks.push(check);
    }
    Ok(GradCheckReport {
        params: checks,
        tolerance,
    })
}

/// Mean over time-steps of the per-step MAE of an unrolled sequence.
fn unrolled_loss(tape: &mut Tape<f64>, net: &NetVars, lr_frames: &[Tensor<f64>], hr_frames: &[Tensor<f64>]) -> Result<Var> {
    if lr_frames.len() != hr_frames.len() {
        return Err(Error::InvalidConfig(alloc::format!(
            "{} LR frames for {} HR frames",
            lr_frames.len(),
            hr_frames.len()
        )));
    }
    let inputs: Vec<Var> = lr_frames.iter().map(|f| tape.constant(f.clone())).collect();
    let outputs = unroll_on_tape(tape, net, &inputs)?;
    let mut losses = Vec::with_capacity(outputs.len());
    for (&out, hr) in outputs.iter().zip(hr_frames) {
        let target = tape.constant(hr.clone());
        losses.push(tape.mean_abs_error(out, target)?);
    }
    tape.mean_of(&losses)
}

/// Gradient check of the whole unrolled network under the training loss.
///
/// Analytic gradients come from one backward pass through the unroll; the
/// numeric side only ever runs the forward pass, through
/// [`compare_gradients_refined`]. Returns the parameter names in report order alongside the
/// report.
pub fn network_grad_check(
    params: &Parameters<f64>,
    lr_frames: &[Tensor<f64>],
    hr_frames: &[Tensor<f64>],
    step: f64,
    min_step: f64,
    tolerance: f64,
) -> Result<(Vec<String>, GradCheckReport)> {
    let names: Vec<String> = params.names().map(String::from).collect();
    let values: Vec<Tensor<f64>> = names.iter().map(|n| params.get(n).cloned()).collect::<Result<_>>()?;
    let config = *params.config();

    let mut tape = Tape::new();
    let net = attach(&mut tape, params, true)?;
    let loss = unrolled_loss(&mut tape, &net, lr_frames, hr_frames)?;
    let grads = tape.backward(loss)?;
    let mut by_name: BTreeMap<String, Tensor<f64>> =
        net.params().map(|(name, var)| (name, grads.get_or_zeros(&tape, var))).collect();
    let analytic: Vec<Tensor<f64>> = names
        .iter()
        .map(|n| by_name.remove(n).ok_or_else(|| Error::Parameter { name: n.clone(), reason: "not on tape".into() }))
        .collect::<Result<_>>()?;

    let f = |tape: &mut Tape<f64>, vars: &[Var]| -> Result<Var> {
        let tensors = names.iter().zip(vars).map(|(n, &v)| (n.clone(), tape.value(v).clone())).collect();
        let p = Parameters::from_tensors(config, tensors)?;
        let net = attach(tape, &p, false)?;
        unrolled_loss(tape, &net, lr_frames, hr_frames)
    };
    let first = loss_value(&f, &values)?;
    let second = loss_value(&f, &values)?;
    if first.to_bits() != second.to_bits() {
        return Err(Error::NonDeterministic { first, second });
    }
    let report = compare_gradients_refined(f, &values, &analytic, step, min_step, tolerance)?;
    Ok((names, report))
}
