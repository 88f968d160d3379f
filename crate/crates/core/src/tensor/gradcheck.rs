use super::{Tape, Tensor, Var};
use crate::error::Result;

/// Compares tape gradients against central finite differences.
///
/// `f` builds a scalar from the parameter handles it is given. Returns the
/// maximum over all parameter entries of
/// `|analytic - numeric| / (|numeric| + 1e-8)`. A NaN anywhere propagates
/// into the result.
pub fn grad_check<F>(f: F, params: &[Tensor], h: f32) -> Result<f32>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (analytic, numeric) = gradients(f, params, h)?;
    let mut worst = 0.0f32;
    for (a, n) in analytic.iter().zip(&numeric) {
        let err = ((a - n).abs() / (n.abs() + 1e-8)) as f32;
        if err.is_nan() {
            return Ok(f32::NAN);
        }
        worst = worst.max(err);
    }
    Ok(worst)
}

/// Normwise variant of [`grad_check`]: `‖analytic − numeric‖₂ / ‖numeric‖₂`
/// over the concatenation of all parameter gradients. Suited to whole-model
/// losses where many individual entries are near zero and per-entry ratios
/// are dominated by `f32` rounding.
pub fn grad_check_global<F>(f: F, params: &[Tensor], h: f32) -> Result<f32>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let (analytic, numeric) = gradients(f, params, h)?;
    let diff: f64 = analytic.iter().zip(&numeric).map(|(a, n)| (a - n).powi(2)).sum();
    let norm: f64 = numeric.iter().map(|n| n * n).sum();
    Ok((diff.sqrt() / (norm.sqrt() + 1e-12)) as f32)
}

fn gradients<F>(f: F, params: &[Tensor], h: f32) -> Result<(Vec<f64>, Vec<f64>)>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let eval = |ps: &[Tensor]| -> Result<f32> {
        let mut tape = Tape::new();
        let vars: Vec<Var> = ps.iter().map(|p| tape.constant(p.clone())).collect();
        let out = f(&mut tape, &vars)?;
        tape.value(out).item()
    };

    let mut tape = Tape::new();
    let vars: Vec<Var> = params.iter().map(|p| tape.param(p.clone())).collect();
    let loss = f(&mut tape, &vars)?;
    let grads = tape.backward(loss)?;

    let mut analytic_all = vec![];
    let mut numeric_all = vec![];
    let mut work: Vec<Tensor> = params.to_vec();
    for (pi, var) in vars.iter().enumerate() {
        let analytic = grads
            .get(*var)
            .map(|g| g.data().to_vec())
            .unwrap_or_else(|| vec![0.0; params[pi].len()]);
        for j in 0..params[pi].len() {
            let orig = params[pi].data()[j];
            let up = orig + h;
            let down = orig - h;
            work[pi].data_mut()[j] = up;
            let fu = eval(&work)?;
            work[pi].data_mut()[j] = down;
            let fd = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            // divide by the step actually taken in f32
            numeric_all.push((fu as f64 - fd as f64) / (up as f64 - down as f64));
            analytic_all.push(analytic[j] as f64);
        }
    }
    Ok((analytic_all, numeric_all))
}
