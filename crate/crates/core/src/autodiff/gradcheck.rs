//! Central finite-difference check of tape gradients.

use alloc::vec::Vec;

use super::{Matrix, Tape, Var};
use crate::{Error, Result};

/// Outcome of a gradient check.
#[derive(Debug, Clone, PartialEq)]
pub struct GradCheckReport {
    /// Largest `|analytic - numeric| / max(1, |analytic|, |numeric|)`.
    pub worst_rel_error: f64,
    /// `(input, element)` where the worst error occurred.
    pub worst_at: Option<(usize, usize)>,
    pub checked: usize,
    pub skipped: usize,
    pub passed: bool,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GradCheck {
    pub step: f64,
    pub tol: f64,
}

impl Default for GradCheck {
    fn default() -> Self {
        Self {
            step: 1e-5,
            tol: 1e-4,
        }
    }
}

fn evaluate<F>(f: &F, inputs: &[Matrix]) -> Result<f64>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    let mut tape = Tape::new();
    let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
    let out = f(&mut tape, &vars)?;
    let v = tape.value(out);
    if v.shape() != (1, 1) {
        return Err(Error::NonScalarLoss {
            rows: v.rows(),
            cols: v.cols(),
        });
    }
    Ok(v.get(0, 0))
}

impl GradCheck {
    /// Checks every element of every input.
    pub fn run<F>(&self, f: F, inputs: &[Matrix]) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
    {
        self.run_excluding(f, inputs, |_, _| false)
    }

    /// Like [`GradCheck::run`], skipping `(input, element)` pairs for which
    /// `exclude` returns true (non-differentiable points such as relu at 0).
    pub fn run_excluding<F, X>(&self, f: F, inputs: &[Matrix], exclude: X) -> Result<GradCheckReport>
    where
        F: Fn(&mut Tape, &[Var]) -> Result<Var>,
        X: Fn(usize, usize) -> bool,
    {
        let mut tape = Tape::new();
        let vars: Vec<Var> = inputs.iter().map(|m| tape.leaf(m.clone())).collect();
        let out = f(&mut tape, &vars)?;
        let grads = tape.backward(out)?;

        let mut report = GradCheckReport {
            worst_rel_error: 0.0,
            worst_at: None,
            checked: 0,
            skipped: 0,
            passed: true,
        };
        let mut probe: Vec<Matrix> = inputs.to_vec();
        for (i, var) in vars.iter().enumerate() {
            let analytic = grads.get(*var);
            for e in 0..inputs[i].len() {
                if exclude(i, e) {
                    report.skipped += 1;
                    continue;
                }
                let orig = inputs[i].data()[e];
                probe[i].data_mut()[e] = orig + self.step;
                let plus = evaluate(&f, &probe)?;
                probe[i].data_mut()[e] = orig - self.step;
                let minus = evaluate(&f, &probe)?;
                probe[i].data_mut()[e] = orig;

                let numeric = (plus - minus) / (2.0 * self.step);
                let a = analytic.map_or(0.0, |g| g.data()[e]);
                let rel = (a - numeric).abs() / 1f64.max(a.abs()).max(numeric.abs());
                report.checked += 1;
                if rel > report.worst_rel_error || report.worst_at.is_none() {
                    report.worst_rel_error = rel;
                    report.worst_at = Some((i, e));
                }
            }
        }
        report.passed = report.worst_rel_error < self.tol;
        Ok(report)
    }
}

/// [`GradCheck`] with step `1e-5` and tolerance `1e-4`.
pub fn grad_check<F>(f: F, inputs: &[Matrix]) -> Result<GradCheckReport>
where
    F: Fn(&mut Tape, &[Var]) -> Result<Var>,
{
    GradCheck::default().run(f, inputs)
}
