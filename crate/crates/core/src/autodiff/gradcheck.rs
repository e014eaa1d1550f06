use std::fmt::Display;

use super::{Graph, Tensor, Var};

pub const DEFAULT_FD_STEP: f64 = 1e-5;

/// Denominator floor for relative errors so near-zero gradients are compared
/// on an absolute scale.
pub const REL_ERROR_FLOOR: f64 = 1e-5;

#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest relative error per input tensor.
    pub per_input: Vec<f64>,
    pub max_rel_error: f64,
    pub checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    /// Set when the builder itself failed; the check then counts as failed.
    pub error: Option<String>,
}

pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / analytic.abs().max(numeric.abs()).max(REL_ERROR_FLOOR)
}

fn evaluate<F, E>(builder: &F, inputs: &[Tensor]) -> Result<f64, String>
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: Display,
{
    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t)).collect();
    let root = builder(&mut g, &vars).map_err(|e| e.to_string())?;
    g.item(root).ok_or_else(|| format!("builder returned non-scalar {:?}", g.shape(root)))
}

/// Compares analytic gradients of the scalar built by `builder` against central
/// differences with step `h`, element by element over every input.
#[allow(clippy::needless_range_loop)]
pub fn grad_check<F, E>(builder: F, inputs: &[Tensor], h: f64, tol: f64) -> GradCheckReport
where
    F: Fn(&mut Graph, &[Var]) -> Result<Var, E>,
    E: Display,
{
    let failed = |msg: String| GradCheckReport {
        per_input: vec![f64::INFINITY; inputs.len()],
        max_rel_error: f64::INFINITY,
        checked: 0,
        tolerance: tol,
        passed: false,
        error: Some(msg),
    };

    let mut g = Graph::new();
    let vars: Vec<Var> = inputs.iter().map(|t| g.variable(t)).collect();
    let root = match builder(&mut g, &vars) {
        Ok(r) => r,
        Err(e) => return failed(e.to_string()),
    };
    let grads = match g.backward(root) {
        Ok(gr) => gr,
        Err(e) => return failed(e.to_string()),
    };

    let mut per_input = Vec::with_capacity(inputs.len());
    let mut checked = 0;
    let mut probe: Vec<Tensor> = inputs.to_vec();
    for (i, &v) in vars.iter().enumerate() {
        let analytic = grads.wrt(v);
        let mut worst = 0.0f64;
        for k in 0..inputs[i].numel() {
            let base = inputs[i].data()[k];
            probe[i].data_mut()[k] = base + h;
            let plus = evaluate(&builder, &probe);
            probe[i].data_mut()[k] = base - h;
            let minus = evaluate(&builder, &probe);
            probe[i].data_mut()[k] = base;
            let (plus, minus) = match (plus, minus) {
                (Ok(p), Ok(m)) => (p, m),
                (Err(e), _) | (_, Err(e)) => return failed(e),
            };
            let numeric = (plus - minus) / (2.0 * h);
            let err = relative_error(analytic[k], numeric);
            worst = if err.is_nan() { f64::INFINITY } else { worst.max(err) };
            checked += 1;
        }
        per_input.push(worst);
    }
    let max_rel_error = per_input.iter().copied().fold(0.0, f64::max);
    GradCheckReport { per_input, max_rel_error, checked, tolerance: tol, passed: max_rel_error <= tol, error: None }
}
