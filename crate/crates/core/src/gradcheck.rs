//! Central finite-difference gradient oracle.
//!
//! The oracle evaluates a loss function through the forward path only, so it
//! stays independent of the backward implementation it is used to check.
//! `run_suite` exposes the per-layer checks behind the `gradcheck` CLI
//! command; the same suite backs the acceptance tests.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

pub const DEFAULT_EPSILON: f64 = 1e-5;
pub const DEFAULT_TOLERANCE: f64 = 1e-4;

pub type Params = BTreeMap<String, Tensor>;

/// Central-difference gradient estimate `(f(p+eps) - f(p-eps)) / (2 eps)`
/// for every scalar entry of every parameter.
///
/// The loss must be deterministic: it is evaluated twice at the base point
/// and any disagreement makes the oracle unusable.
pub fn finite_difference_gradient<F>(
    mut loss: F,
    params: &Params,
    eps: f64,
) -> Result<BTreeMap<String, Vec<f64>>>
where
    F: FnMut(&Params) -> Result<f64>,
{
    if eps <= 0.0 {
        return Err(Error::config(format!("epsilon must be positive, got {eps}")));
    }
    let base1 = loss(params)?;
    let base2 = loss(params)?;
    if base1.to_bits() != base2.to_bits() {
        return Err(Error::OracleUnusable(format!(
            "loss is not deterministic: {base1} vs {base2} on identical inputs"
        )));
    }

    let mut grads = BTreeMap::new();
    let mut work = params.clone();
    for (name, tensor) in params {
        let n = tensor.numel();
        let mut grad = vec![0.0; n];
        for i in 0..n {
            let original = tensor.values()[i];
            work.get_mut(name).unwrap().values_mut()[i] = original + eps;
            let up = loss(&work)?;
            work.get_mut(name).unwrap().values_mut()[i] = original - eps;
            let down = loss(&work)?;
            work.get_mut(name).unwrap().values_mut()[i] = original;
            grad[i] = (up - down) / (2.0 * eps);
        }
        grads.insert(name.clone(), grad);
    }
    Ok(grads)
}

/// Relative error with a floor so near-zero gradients compare on absolute
/// scale instead of amplifying finite-difference noise.
pub fn relative_error(analytic: f64, numeric: f64) -> f64 {
    (analytic - numeric).abs() / (analytic.abs() + numeric.abs()).max(1e-6)
}

/// Maximum relative error between an analytic gradient set and the oracle.
pub fn max_relative_error(
    analytic: &BTreeMap<String, Vec<f64>>,
    numeric: &BTreeMap<String, Vec<f64>>,
) -> Result<f64> {
    let mut worst = 0.0f64;
    for (name, a) in analytic {
        let n = numeric.get(name).ok_or_else(|| {
            Error::contract(format!("oracle produced no gradient for `{name}`"))
        })?;
        if a.len() != n.len() {
            return Err(Error::shape(format!(
                "gradient lengths for `{name}` differ: {} vs {}",
                a.len(),
                n.len()
            )));
        }
        for (&x, &y) in a.iter().zip(n) {
            worst = worst.max(relative_error(x, y));
        }
    }
    Ok(worst)
}

/// One layer's gradient-check outcome.
#[derive(Clone, Debug)]
pub struct LayerReport {
    pub layer: &'static str,
    pub max_rel_err: f64,
    pub seeds: u64,
    pub pass: bool,
}

/// Test-only fault injection; flips the analytic gradient sign for one
/// layer so the suite's failure path can be exercised.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Fault {
    AttentionGradSignFlip,
}

/// Runs finite-difference checks for every layer kind over `seeds` random
/// configurations each. Layers are checked in eval mode (no noise/dropout).
pub fn run_suite(seeds: u64, eps: f64, tolerance: f64) -> Result<Vec<LayerReport>> {
    run_suite_inner(seeds, eps, tolerance, None)
}

#[doc(hidden)]
pub fn run_suite_with_fault(
    seeds: u64,
    eps: f64,
    tolerance: f64,
    fault: Fault,
) -> Result<Vec<LayerReport>> {
    run_suite_inner(seeds, eps, tolerance, Some(fault))
}

fn run_suite_inner(
    seeds: u64,
    eps: f64,
    tolerance: f64,
    fault: Option<Fault>,
) -> Result<Vec<LayerReport>> {
    let cases = crate::model::gradcheck_cases();
    let mut reports = Vec::new();
    for case in cases {
        let mut worst = 0.0f64;
        for seed in 0..seeds {
            let flip = fault == Some(Fault::AttentionGradSignFlip) && case.layer == "attention";
            worst = worst.max((case.run)(seed, eps, flip)?);
        }
        reports.push(LayerReport {
            layer: case.layer,
            max_rel_err: worst,
            seeds,
            pass: worst < tolerance,
        });
    }
    Ok(reports)
}

/// A gradient-check case for one layer kind.
pub struct Case {
    pub layer: &'static str,
    /// Runs one seeded check and returns the max relative error between the
    /// backward pass and the finite-difference oracle. The `bool` flips the
    /// analytic gradient sign; it exists for fault-injection tests.
    #[allow(clippy::type_complexity)]
    pub run: Box<dyn Fn(u64, f64, bool) -> Result<f64>>,
}
