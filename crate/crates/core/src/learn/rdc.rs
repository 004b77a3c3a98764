//! Randomized dependence coefficient: empirical copula transform, random
//! sine features, then the largest canonical correlation between the two
//! feature blocks.

use nalgebra::{DMatrix, SVD};
use rand::Rng;
use rand_distr::{Distribution, Normal};

const RIDGE: f64 = 1e-6;

/// Random projection weights for one RDC test, shared by both orders of a pair.
#[derive(Debug, Clone)]
pub struct Projection {
    /// `(dim + 1) x k` weights for each of the two columns.
    x: DMatrix<f64>,
    y: DMatrix<f64>,
}

impl Projection {
    /// Draws weights for `k` features of a scalar column augmented with a
    /// constant coordinate. Coefficients are Normal(0, s^2 * dim).
    pub fn draw<R: Rng + ?Sized>(k: usize, s: f64, rng: &mut R) -> Self {
        let dim: f64 = 2.0;
        let normal = Normal::new(0.0, s * dim.sqrt()).expect("positive scale");
        let mut draw = || DMatrix::from_fn(2, k, |_, _| normal.sample(rng));
        let x = draw();
        let y = draw();
        Self { x, y }
    }

    /// The same weights with the roles of the two columns exchanged.
    pub fn swapped(&self) -> Self {
        Self {
            x: self.y.clone(),
            y: self.x.clone(),
        }
    }
}

/// Ranks in `(0, 1]` with ties sharing their average rank.
pub fn copula(xs: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; n];
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && xs[order[j + 1]] == xs[order[i]] {
            j += 1;
        }
        let avg = (i + j) as f64 / 2.0 + 1.0;
        for &o in &order[i..=j] {
            ranks[o] = avg / n as f64;
        }
        i = j + 1;
    }
    ranks
}

fn features(column: &[f64], weights: &DMatrix<f64>) -> DMatrix<f64> {
    let u = copula(column);
    let n = u.len();
    let k = weights.ncols();
    DMatrix::from_fn(n, k, |r, c| (u[r] * weights[(0, c)] + weights[(1, c)]).sin())
}

fn centered(m: &DMatrix<f64>) -> DMatrix<f64> {
    let mut m = m.clone();
    let n = m.nrows() as f64;
    for mut col in m.column_iter_mut() {
        let mean = col.sum() / n;
        col.add_scalar_mut(-mean);
    }
    m
}

fn is_constant(xs: &[f64]) -> bool {
    xs.iter().all(|x| *x == xs[0])
}

/// RDC between two equal-length columns under the given projection.
pub fn rdc_with(x: &[f64], y: &[f64], projection: &Projection) -> f64 {
    assert_eq!(x.len(), y.len(), "rdc columns must have equal length");
    if x.len() < 3 || is_constant(x) || is_constant(y) {
        return 0.0;
    }
    let fx = centered(&features(x, &projection.x));
    let fy = centered(&features(y, &projection.y));
    largest_canonical_correlation(&fx, &fy)
}

/// Largest canonical correlation of two centered blocks, via Cholesky
/// whitening and the top singular value of the whitened cross-covariance.
fn largest_canonical_correlation(fx: &DMatrix<f64>, fy: &DMatrix<f64>) -> f64 {
    let n = fx.nrows() as f64 - 1.0;
    let kx = fx.ncols();
    let ky = fy.ncols();
    let cxx = fx.transpose() * fx / n + DMatrix::identity(kx, kx) * RIDGE;
    let cyy = fy.transpose() * fy / n + DMatrix::identity(ky, ky) * RIDGE;
    let cxy = fx.transpose() * fy / n;
    let (Some(lx), Some(ly)) = (cxx.cholesky(), cyy.cholesky()) else {
        return 0.0;
    };
    let lx = lx.l();
    let ly = ly.l();
    // M = Lx^{-1} Cxy Ly^{-T}
    let Some(left) = lx.solve_lower_triangular(&cxy) else {
        return 0.0;
    };
    let Some(mt) = ly.solve_lower_triangular(&left.transpose()) else {
        return 0.0;
    };
    let svd = SVD::new(mt, false, false);
    let top = svd.singular_values.iter().copied().fold(0.0, f64::max);
    top.clamp(0.0, 1.0)
}

/// RDC with freshly drawn projections.
pub fn rdc<R: Rng + ?Sized>(x: &[f64], y: &[f64], k: usize, s: f64, rng: &mut R) -> f64 {
    let projection = Projection::draw(k, s, rng);
    rdc_with(x, y, &projection)
}
