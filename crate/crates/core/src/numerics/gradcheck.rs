//! Central finite-difference gradient checking.
//!
//! The checker rebuilds the forward pass from scratch for every perturbed
//! input, so it exercises only forward code and stays independent of the
//! backward sweep it verifies.

use super::tape::{NodeId, Tape};
use super::tensor::Tensor;
use super::NumericsError;

pub const DEFAULT_EPS: f64 = 1e-5;
pub const DEFAULT_TOL: f64 = 1e-4;

#[derive(Debug, Clone, Copy)]
pub struct GradCheckReport {
    pub max_rel_err: f64,
    /// (input index, element index) of the worst-matching entry.
    pub worst: (usize, usize),
    pub checked: usize,
}

impl GradCheckReport {
    pub fn passes(&self, tol: f64) -> bool {
        self.max_rel_err <= tol
    }
}

/// Compare analytic gradients of `build`'s scalar output against central
/// finite differences, for every element of every input.
///
/// Relative error uses a unit floor so near-zero gradients are compared
/// absolutely: |a - fd| / max(|a|, |fd|, 1).
pub fn check<F>(inputs: &[Tensor], eps: f64, build: F) -> Result<GradCheckReport, NumericsError>
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, NumericsError>,
{
    let eval = |tensors: &[Tensor]| -> Result<f64, NumericsError> {
        let mut tape = Tape::new();
        let ids: Vec<NodeId> = tensors
            .iter()
            .map(|t| tape.leaf(t.clone().with_requires_grad(false)))
            .collect();
        let root = build(&mut tape, &ids)?;
        tape.value(root).item()
    };

    // Analytic gradients in one backward sweep.
    let mut tape = Tape::new();
    let ids: Vec<NodeId> = inputs
        .iter()
        .map(|t| tape.leaf(t.clone().with_requires_grad(true)))
        .collect();
    let root = build(&mut tape, &ids)?;
    if !tape.value(root).is_scalar() {
        return Err(NumericsError::Contract {
            op: "gradcheck",
            expected: "a scalar root",
            actual: tape.value(root).shape().to_vec(),
        });
    }
    let grads = tape.backward(root)?;

    let mut report = GradCheckReport {
        max_rel_err: 0.0,
        worst: (0, 0),
        checked: 0,
    };
    let mut work: Vec<Tensor> = inputs.to_vec();
    let zeros_pool: Vec<Vec<f64>> = inputs.iter().map(|t| vec![0.0; t.len()]).collect();
    for (pi, input) in inputs.iter().enumerate() {
        // a leaf with no path to the root has gradient zero; the finite
        // difference will expose any genuinely dropped gradient
        let analytic = grads.get(ids[pi]).unwrap_or(&zeros_pool[pi]);
        for j in 0..input.len() {
            let orig = input.data()[j];
            work[pi].data_mut()[j] = orig + eps;
            let f_plus = eval(&work)?;
            work[pi].data_mut()[j] = orig - eps;
            let f_minus = eval(&work)?;
            work[pi].data_mut()[j] = orig;
            let fd = (f_plus - f_minus) / (2.0 * eps);
            let a = analytic[j];
            let rel = (a - fd).abs() / a.abs().max(fd.abs()).max(1.0);
            report.checked += 1;
            if rel > report.max_rel_err {
                report.max_rel_err = rel;
                report.worst = (pi, j);
            }
        }
    }
    Ok(report)
}

/// `check` with the default perturbation, asserting the default tolerance.
pub fn assert_grads<F>(inputs: &[Tensor], build: F)
where
    F: Fn(&mut Tape, &[NodeId]) -> Result<NodeId, NumericsError>,
{
    let report = check(inputs, DEFAULT_EPS, build).expect("gradcheck forward failed");
    assert!(
        report.passes(DEFAULT_TOL),
        "gradient check failed: max rel err {:.3e} at input {} element {} ({} checked)",
        report.max_rel_err,
        report.worst.0,
        report.worst.1,
        report.checked
    );
}
