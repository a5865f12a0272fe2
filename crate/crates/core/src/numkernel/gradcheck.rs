use super::{Graph, KernelError, Real, Tensor, Var};

/// Outcome of comparing analytic gradients to central finite differences.
#[derive(Clone, Debug)]
pub struct GradCheckReport {
    pub max_relative_error: f64,
    /// Flat index of the coordinate with the largest error.
    pub worst_index: usize,
    pub analytic: f64,
    pub numeric: f64,
    pub pass: bool,
    /// Set when an evaluation failed or produced a non-finite value.
    pub diagnostic: Option<String>,
}

impl GradCheckReport {
    fn failed(msg: String) -> Self {
        Self {
            max_relative_error: f64::INFINITY,
            worst_index: 0,
            analytic: f64::NAN,
            numeric: f64::NAN,
            pass: false,
            diagnostic: Some(msg),
        }
    }
}

/// Denominator floor applied when both gradients are near zero.
pub const ABS_FLOOR: f64 = 1e-8;

fn eval<T, F>(f: &F, x: &Tensor<T>) -> Result<T, KernelError>
where
    T: Real,
    F: Fn(&mut Graph<T>, Var) -> Result<Var, KernelError>,
{
    let mut g = Graph::new();
    let v = g.constant(x.clone());
    let out = f(&mut g, v)?;
    let t = g.value(out);
    if t.numel() != 1 {
        return Err(KernelError::NotScalar {
            shape: t.shape().to_vec(),
        });
    }
    Ok(t.item())
}

/// Checks the reverse-mode gradient of `f` at `x` coordinate-wise against central
/// differences with the given `step`. Passes iff the maximum relative error
/// `|a - n| / max(|a|, |n|, 1e-8)` is below `rtol`.
pub fn grad_check<T, F>(f: F, x: &Tensor<T>, step: T, rtol: T) -> GradCheckReport
where
    T: Real,
    F: Fn(&mut Graph<T>, Var) -> Result<Var, KernelError>,
{
    let mut g = Graph::new();
    let v = g.param(x.clone());
    let out = match f(&mut g, v) {
        Ok(o) => o,
        Err(e) => return GradCheckReport::failed(format!("forward failed: {e}")),
    };
    if !g.value(out).is_finite() {
        return GradCheckReport::failed("non-finite loss at the base point".into());
    }
    let analytic = match g.backward(out) {
        Ok(mut grads) => grads
            .take(v)
            .unwrap_or_else(|| Tensor::zeros(x.shape())),
        Err(e) => return GradCheckReport::failed(format!("backward failed: {e}")),
    };
    if !analytic.is_finite() {
        return GradCheckReport::failed("non-finite analytic gradient".into());
    }

    let two = T::lit(2.0);
    let mut report = GradCheckReport {
        max_relative_error: 0.0,
        worst_index: 0,
        analytic: 0.0,
        numeric: 0.0,
        pass: true,
        diagnostic: None,
    };
    let mut probe = x.clone();
    for i in 0..x.numel() {
        let orig = probe.data()[i];
        probe.data_mut()[i] = orig + step;
        let plus = eval(&f, &probe);
        probe.data_mut()[i] = orig - step;
        let minus = eval(&f, &probe);
        probe.data_mut()[i] = orig;
        let (plus, minus) = match (plus, minus) {
            (Ok(p), Ok(m)) if p.is_finite() && m.is_finite() => (p, m),
            (Err(e), _) | (_, Err(e)) => {
                return GradCheckReport::failed(format!("evaluation at coordinate {i} failed: {e}"))
            }
            _ => {
                return GradCheckReport::failed(format!(
                    "non-finite evaluation at coordinate {i}"
                ))
            }
        };
        let numeric = ((plus - minus) / (two * step)).as_f64();
        let a = analytic.data()[i].as_f64();
        let denom = a.abs().max(numeric.abs()).max(ABS_FLOOR);
        let rel = (a - numeric).abs() / denom;
        if rel > report.max_relative_error {
            report.max_relative_error = rel;
            report.worst_index = i;
            report.analytic = a;
            report.numeric = numeric;
        }
    }
    report.pass = report.max_relative_error < rtol.as_f64();
    report
}
