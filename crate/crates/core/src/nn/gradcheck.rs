use alloc::vec::Vec;

use super::stack::{RnnStack, UnrolledTape};

/// Outcome of comparing analytic gradients with central differences.
#[derive(Clone, Debug, PartialEq)]
pub struct GradCheckReport {
    /// max over parameters of `|g_a − g_fd| / max(1e-8, |g_a| + |g_fd|)`.
    pub max_relative_error: f64,
    pub worst_index: Option<usize>,
    pub checked: usize,
    pub tolerance: f64,
    /// Central-difference estimates, one per parameter.
    pub numeric: Vec<f64>,
}

impl GradCheckReport {
    pub fn passed(&self) -> bool {
        self.max_relative_error <= self.tolerance
    }
}

/// Five-point central-difference check of `analytic` against `loss` around
/// `params`. The fourth-order stencil keeps truncation error below roundoff
/// for parameters whose gradient is tiny next to their curvature.
/// An empty parameter vector passes vacuously.
pub fn grad_check<F>(params: &[f64], analytic: &[f64], mut loss: F, eps: f64, tolerance: f64) -> GradCheckReport
where
    F: FnMut(&[f64]) -> f64,
{
    assert_eq!(params.len(), analytic.len(), "one analytic gradient per parameter");
    let mut theta = params.to_vec();
    let mut numeric = Vec::with_capacity(params.len());
    let mut worst = (0.0, None);
    for i in 0..params.len() {
        let orig = theta[i];
        let mut at = |offset: f64| {
            theta[i] = orig + offset;
            loss(&theta)
        };
        let (p1, m1, p2, m2) = (at(eps), at(-eps), at(2.0 * eps), at(-2.0 * eps));
        theta[i] = orig;
        let fd = (8.0 * (p1 - m1) - (p2 - m2)) / (12.0 * eps);
        numeric.push(fd);
        let a = analytic[i];
        let rel = (a - fd).abs() / (a.abs() + fd.abs()).max(1e-8);
        if rel > worst.0 || worst.1.is_none() {
            worst = (rel, Some(i));
        }
    }
    GradCheckReport {
        max_relative_error: worst.0,
        worst_index: worst.1,
        checked: params.len(),
        tolerance,
        numeric,
    }
}

/// One step of a window fed to [`check_stack`].
#[derive(Clone, Debug, PartialEq)]
pub struct WindowStep {
    pub main: Vec<f64>,
    pub side: Vec<f64>,
    pub target: Option<usize>,
}

/// Checks the BPTT gradients of `stack` over one window starting from
/// `entering` against central differences of the summed window loss.
pub fn check_stack<S: AsRef<[f64]>>(
    stack: &RnnStack,
    entering: &[S],
    window: &[WindowStep],
    eps: f64,
    tolerance: f64,
) -> GradCheckReport {
    let targets: Vec<Option<usize>> = window.iter().map(|s| s.target).collect();
    let mut tape = UnrolledTape::new(stack);
    let run = |net: &RnnStack, tape: &mut UnrolledTape| {
        tape.reset(entering);
        for s in window {
            net.push_step(tape, &s.main, &s.side);
        }
    };
    run(stack, &mut tape);
    let (_, grads) = stack.bptt_gradients(&tape, &targets);
    let mut probe = stack.clone();
    grad_check(
        &stack.flatten(),
        &grads.flatten(),
        |theta| {
            probe.load_flat(theta);
            run(&probe, &mut tape);
            probe.window_loss(&tape, &targets)
        },
        eps,
        tolerance,
    )
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn quadratic() {
        let p = [1.0, -2.0, 0.5];
        let analytic: Vec<f64> = p.iter().map(|x| 2.0 * x).collect();
        let r = grad_check(&p, &analytic, |t| t.iter().map(|x| x * x).sum(), 1e-5, 1e-6);
        assert!(r.passed(), "{r:?}");
        let wrong: Vec<f64> = analytic.iter().map(|g| g * 2.0).collect();
        assert!(!grad_check(&p, &wrong, |t| t.iter().map(|x| x * x).sum(), 1e-5, 1e-6).passed());
    }

    #[test]
    fn empty_is_vacuous() {
        let r = grad_check(&[], &[], |_| 0.0, 1e-5, 1e-5);
        assert!(r.passed());
        assert_eq!(r.checked, 0);
    }
}
