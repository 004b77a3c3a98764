//! Expected-improvement lower bound for Gaussian mixture selection
//! distributions. Diagnostic only.

use statrs::function::erf::erf;

use crate::circuit::{Circuit, LeafDistribution};
use crate::error::OptimizerError;

/// One mixture component with a diagonal covariance.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianComponent {
    pub weight: f64,
    pub mean: Vec<f64>,
    /// Diagonal of the covariance matrix.
    pub diag: Vec<f64>,
}

/// Lower bound on the expected improvement of drawing from the mixture.
///
/// `theta_t` is the incumbent, `theta_star` the optimum, `lipschitz` the
/// Lipschitz constant of the objective.
pub fn ei_lower_bound(
    components: &[GaussianComponent],
    theta_t: &[f64],
    theta_star: &[f64],
    lipschitz: f64,
) -> Result<f64, OptimizerError> {
    let d = theta_star.len();
    if theta_t.len() != d {
        return Err(OptimizerError::Dimension(format!(
            "incumbent has {} coordinates, optimum has {d}",
            theta_t.len()
        )));
    }
    let total: f64 = components.iter().map(|c| c.weight).sum();
    if components.is_empty() || (total - 1.0).abs() > 1e-6 || components.iter().any(|c| c.weight <= 0.0) {
        return Err(OptimizerError::Params(
            "component weights must be positive and sum to 1".into(),
        ));
    }
    let mut bound = 0.0;
    for (i, c) in components.iter().enumerate() {
        if c.mean.len() != d || c.diag.len() != d {
            return Err(OptimizerError::Dimension(format!(
                "component {i} does not have {d} coordinates"
            )));
        }
        if c.diag.iter().any(|s| *s <= 0.0) {
            return Err(OptimizerError::Params(format!(
                "component {i} has a non-positive variance"
            )));
        }
        let mass = |target: &[f64]| -> f64 {
            (0..d)
                .map(|j| erf((target[j] - c.mean[j]) / (c.diag[j] * std::f64::consts::SQRT_2)))
                .product()
        };
        let eps = (0..d)
            .map(|j| {
                let alpha = (theta_t[j] - c.mean[j]).min(theta_star[j] - c.mean[j]);
                (c.mean[j] + alpha * c.diag[j] - theta_star[j]).powi(2)
            })
            .sum::<f64>()
            .sqrt();
        bound += c.weight * (mass(theta_t) - mass(theta_star) + lipschitz * eps);
    }
    Ok(bound)
}

/// Gaussian components of a circuit whose leaves are all Gaussian, via its
/// induced trees. Returns the components and whether enumeration was capped.
pub fn gaussian_components(circuit: &Circuit, cap: usize) -> Option<(Vec<GaussianComponent>, bool)> {
    let d = circuit.variables().len();
    let mixture = circuit.induced_mixture(cap);
    let mut out = Vec::with_capacity(mixture.components.len());
    for tree in &mixture.components {
        let mut mean = vec![0.0; d];
        let mut diag = vec![1.0; d];
        for (var, leaf) in &tree.leaves {
            let LeafDistribution::Gaussian { mean: m, std } = leaf else {
                return None;
            };
            mean[*var] = *m;
            diag[*var] = std * std;
        }
        out.push(GaussianComponent {
            weight: tree.weight,
            mean,
            diag,
        });
    }
    // A truncated enumeration leaves mass unaccounted for; renormalize.
    let total: f64 = out.iter().map(|c| c.weight).sum();
    out.iter_mut().for_each(|c| c.weight /= total);
    Some((out, mixture.truncated))
}
