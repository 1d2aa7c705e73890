//! Central finite-difference checking for reverse-mode gradients.
//!
//! The checker rebuilds the forward computation from scratch at perturbed
//! inputs, so it is independent of the backward pass it validates.

use crate::error::Result;
use crate::tensor::{NodeId, Tensor, ValueGraph};

/// Default central-difference step.
pub const FD_STEP: f64 = 1e-5;
/// Default tolerance: |ad - fd| <= tol * max(1, |fd|).
pub const FD_TOL: f64 = 1e-4;

/// Compares reverse-mode gradients of a scalar-valued builder against central
/// finite differences over every input element. Returns the worst relative
/// error (with a unit floor on the denominator).
pub fn check_gradients(
    inputs: &[Tensor],
    build: impl Fn(&mut ValueGraph, &[NodeId]) -> Result<NodeId>,
    step: f64,
) -> Result<f64> {
    let eval = |tensors: &[Tensor]| -> Result<f64> {
        let mut g = ValueGraph::new();
        let ids: Vec<NodeId> = tensors.iter().map(|t| g.leaf(t.clone(), false)).collect();
        let loss = build(&mut g, &ids)?;
        g.value(loss).item()
    };

    // reverse-mode gradients at the base point
    let mut g = ValueGraph::new();
    let ids: Vec<NodeId> = inputs.iter().map(|t| g.leaf(t.clone(), true)).collect();
    let loss = build(&mut g, &ids)?;
    let analytic = g.gradients(loss, &ids)?;

    let mut worst = 0.0f64;
    let mut work: Vec<Tensor> = inputs.to_vec();
    for (ti, tensor) in inputs.iter().enumerate() {
        for e in 0..tensor.numel() {
            let orig = tensor.data()[e];
            work[ti].data_mut()[e] = orig + step;
            let up = eval(&work)?;
            work[ti].data_mut()[e] = orig - step;
            let down = eval(&work)?;
            work[ti].data_mut()[e] = orig;
            let fd = (up - down) / (2.0 * step);
            let ad = analytic[ti].data()[e];
            let rel = (ad - fd).abs() / fd.abs().max(1.0);
            worst = worst.max(rel);
        }
    }
    Ok(worst)
}

/// Convenience wrapper asserting the worst relative error is below `tol`.
pub fn assert_gradients(
    inputs: &[Tensor],
    build: impl Fn(&mut ValueGraph, &[NodeId]) -> Result<NodeId>,
    tol: f64,
) {
    let worst = check_gradients(inputs, build, FD_STEP).expect("gradcheck build failed");
    assert!(
        worst < tol,
        "finite-difference check failed: worst relative error {worst:.3e} >= {tol:.1e}"
    );
}
