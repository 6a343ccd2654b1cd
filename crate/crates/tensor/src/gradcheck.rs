use crate::{Result, Tape, Tensor, TensorError, Var};

/// Compares the tape's analytic gradient of a scalar-valued function
/// against central finite differences, coordinate by coordinate.
///
/// Returns the maximum over coordinates of
/// `|analytic - numeric| / max(1e-8, |analytic| + |numeric|)`.
///
/// `f` must build a scalar output from the single input var; it is invoked
/// on a fresh tape for every probe, so it must be deterministic.
pub fn grad_check<F>(f: F, x: &Tensor, h: f64) -> Result<f64>
where
    F: Fn(&mut Tape, Var) -> Result<Var>,
{
    let mut tape = Tape::new();
    let xv = tape.leaf(x.clone().with_grad());
    let y = f(&mut tape, xv)?;
    if !tape.value(y).is_scalar() {
        return Err(TensorError::NonScalarLoss {
            shape: tape.shape(y).to_vec(),
        });
    }
    tape.backward(y)?;
    let analytic = tape.grad(xv).expect("leaf gradient present").to_vec();

    let eval = |probe: &Tensor| -> Result<f64> {
        let mut t = Tape::new();
        let v = t.leaf(probe.clone());
        let out = f(&mut t, v)?;
        Ok(t.value(out).item())
    };

    let mut max_rel = 0.0_f64;
    let mut probe = x.clone();
    probe.requires_grad = false;
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + h;
        let plus = eval(&probe)?;
        probe.data_mut()[i] = orig - h;
        let minus = eval(&probe)?;
        probe.data_mut()[i] = orig;

        let numeric = (plus - minus) / (2.0 * h);
        let denom = (analytic[i].abs() + numeric.abs()).max(1e-8);
        let rel = (analytic[i] - numeric).abs() / denom;
        if rel > max_rel {
            max_rel = rel;
        }
    }
    Ok(max_rel)
}
