//! Central-difference gradient checks in double precision.

use crate::error::Result;
use crate::graph::{Graph, Var};
use crate::tensor::Tensor;

/// Outcome of comparing analytic gradients with central differences.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    pub max_rel_error: f64,
    pub max_abs_error: f64,
    /// `(input index, flat coordinate)` of the largest relative error.
    pub worst: Option<(usize, usize)>,
    pub coordinates_checked: usize,
    pub tolerance: f64,
    pub passed: bool,
    pub error: Option<String>,
}

impl GradCheckReport {
    fn failed(tolerance: f64, msg: String) -> Self {
        Self {
            max_rel_error: f64::INFINITY,
            max_abs_error: f64::INFINITY,
            worst: None,
            coordinates_checked: 0,
            tolerance,
            passed: false,
            error: Some(msg),
        }
    }
}

/// Settings for [`GradCheck::run`].
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub eps: f64,
    pub tolerance: f64,
    /// Relative errors use `max(|analytic|, |numeric|, floor)` as denominator.
    pub floor: f64,
    /// Check only every `stride`-th coordinate of each input.
    pub stride: usize,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self { eps: 1e-5, tolerance: 1e-6, floor: 1e-3, stride: 1 }
    }
}

impl GradCheck {
    pub fn new(eps: f64, tolerance: f64) -> Self {
        Self { eps, tolerance, ..Self::default() }
    }

    pub fn with_stride(mut self, stride: usize) -> Self {
        self.stride = stride.max(1);
        self
    }

    /// `build` receives a fresh graph whose first `inputs.len()` nodes are the inputs as
    /// parameters, and returns the scalar output.
    pub fn run<F>(&self, build: F, inputs: &[Tensor<f64>]) -> GradCheckReport
    where
        F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
    {
        let eval = |xs: &[Tensor<f64>]| -> Result<f64> {
            let mut g = Graph::new();
            let vars: Vec<Var> = xs.iter().map(|t| g.param(t)).collect();
            let out = build(&mut g, &vars)?;
            Ok(g.value(out).item())
        };

        let analytic = {
            let mut g = Graph::new();
            let vars: Vec<Var> = inputs.iter().map(|t| g.param(t)).collect();
            let grads = build(&mut g, &vars).and_then(|out| g.backward(out));
            match grads {
                Ok(grads) => vars
                    .iter()
                    .zip(inputs)
                    .map(|(&v, t)| grads.get_or_zeros(v, t))
                    .collect::<Vec<_>>(),
                Err(e) => return GradCheckReport::failed(self.tolerance, e.to_string()),
            }
        };

        let mut work: Vec<Tensor<f64>> = inputs.to_vec();
        let mut report = GradCheckReport {
            max_rel_error: 0.0,
            max_abs_error: 0.0,
            worst: None,
            coordinates_checked: 0,
            tolerance: self.tolerance,
            passed: true,
            error: None,
        };
        for (ti, grad) in analytic.iter().enumerate() {
            for c in (0..inputs[ti].len()).step_by(self.stride) {
                let orig = inputs[ti].data()[c];
                work[ti].data_mut()[c] = orig + self.eps;
                let plus = eval(&work);
                work[ti].data_mut()[c] = orig - self.eps;
                let minus = eval(&work);
                work[ti].data_mut()[c] = orig;
                let (plus, minus) = match (plus, minus) {
                    (Ok(p), Ok(m)) => (p, m),
                    (Err(e), _) | (_, Err(e)) => return GradCheckReport::failed(self.tolerance, e.to_string()),
                };
                let numeric = (plus - minus) / (2.0 * self.eps);
                let a = grad.data()[c];
                let abs = (a - numeric).abs();
                let rel = abs / a.abs().max(numeric.abs()).max(self.floor);
                report.coordinates_checked += 1;
                report.max_abs_error = report.max_abs_error.max(abs);
                if rel > report.max_rel_error || !rel.is_finite() {
                    report.max_rel_error = rel;
                    report.worst = Some((ti, c));
                }
            }
        }
        report.passed = report.max_rel_error < self.tolerance;
        report
    }
}

/// [`GradCheck::run`] over every coordinate with the given step and tolerance.
pub fn grad_check<F>(build: F, inputs: &[Tensor<f64>], eps: f64, tolerance: f64) -> GradCheckReport
where
    F: Fn(&mut Graph<'_, f64>, &[Var]) -> Result<Var>,
{
    GradCheck::new(eps, tolerance).run(build, inputs)
}
