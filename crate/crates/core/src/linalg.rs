//! Gradient vectors and covariance matrices over policy parameters.

use nalgebra::{DMatrix, DVector};

/// A d-vector over policy parameters, in the policy's flattening order.
pub type Gradient = DVector<f64>;

/// Largest absolute coordinate-wise difference.
pub fn max_abs_diff(a: &Gradient, b: &Gradient) -> f64 {
    assert_eq!(a.len(), b.len(), "gradient dimensions differ");
    a.iter()
        .zip(b.iter())
        .map(|(x, y)| (x - y).abs())
        .fold(0.0, f64::max)
}

/// Symmetric d×d covariance matrix over policy parameters.
#[derive(Clone, Debug, PartialEq)]
pub struct Covariance {
    pub matrix: DMatrix<f64>,
}

impl Covariance {
    pub fn zeros(dim: usize) -> Self {
        Self {
            matrix: DMatrix::zeros(dim, dim),
        }
    }

    pub fn from_matrix(matrix: DMatrix<f64>) -> Self {
        assert_eq!(matrix.nrows(), matrix.ncols(), "covariance must be square");
        Self { matrix }
    }

    pub fn dim(&self) -> usize {
        self.matrix.nrows()
    }

    pub fn trace(&self) -> f64 {
        self.matrix.trace()
    }

    pub fn diagonal(&self) -> Vec<f64> {
        self.matrix.diagonal().iter().copied().collect()
    }

    pub fn max_asymmetry(&self) -> f64 {
        let m = &self.matrix;
        let mut worst = 0.0f64;
        for i in 0..m.nrows() {
            for j in 0..i {
                worst = worst.max((m[(i, j)] - m[(j, i)]).abs());
            }
        }
        worst
    }

    /// Smallest eigenvalue of the symmetrized matrix.
    pub fn min_eigenvalue(&self) -> f64 {
        if self.dim() == 0 {
            return 0.0;
        }
        let sym = (&self.matrix + self.matrix.transpose()) * 0.5;
        sym.symmetric_eigen()
            .eigenvalues
            .iter()
            .copied()
            .fold(f64::INFINITY, f64::min)
    }

    /// ‖self − other‖_F / max(‖other‖_F, floor).
    pub fn relative_frobenius_error(&self, other: &Covariance, floor: f64) -> f64 {
        let diff = (&self.matrix - &other.matrix).norm();
        diff / other.matrix.norm().max(floor)
    }
}

impl std::ops::Add for Covariance {
    type Output = Covariance;

    fn add(self, rhs: Covariance) -> Covariance {
        Covariance::from_matrix(self.matrix + rhs.matrix)
    }
}

/// Accumulates Σ wᵢ vᵢ and Σ wᵢ vᵢ vᵢᵀ for a finite weighted population and
/// reports its covariance. Weights are probabilities and should sum to one.
#[derive(Clone, Debug)]
pub(crate) struct WeightedMoments {
    items: Vec<(f64, Gradient)>,
}

impl WeightedMoments {
    pub fn new() -> Self {
        Self { items: Vec::new() }
    }

    pub fn push(&mut self, weight: f64, value: Gradient) {
        self.items.push((weight, value));
    }

    pub fn values(&self) -> impl Iterator<Item = &Gradient> {
        self.items.iter().map(|(_, v)| v)
    }

    pub fn mean(&self, dim: usize) -> Gradient {
        let mut mean = Gradient::zeros(dim);
        for (w, v) in &self.items {
            mean.axpy(*w, v, 1.0);
        }
        mean
    }

    /// Centered two-pass covariance; numerically equal to E[vvᵀ] − E[v]E[v]ᵀ.
    pub fn covariance(&self, dim: usize) -> DMatrix<f64> {
        let mean = self.mean(dim);
        let mut cov = DMatrix::zeros(dim, dim);
        for (w, v) in &self.items {
            let c = v - &mean;
            cov.ger(*w, &c, &c, 1.0);
        }
        cov
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn weighted_covariance_of_two_points() {
        let mut m = WeightedMoments::new();
        m.push(0.5, Gradient::from_vec(vec![1.0, 0.0]));
        m.push(0.5, Gradient::from_vec(vec![-1.0, 0.0]));
        let cov = m.covariance(2);
        assert_eq!(cov[(0, 0)], 1.0);
        assert_eq!(cov[(1, 1)], 0.0);
        assert_eq!(cov[(0, 1)], 0.0);
    }

    #[test]
    fn min_eigenvalue_of_psd_matrix() {
        let c = Covariance::from_matrix(DMatrix::from_row_slice(2, 2, &[2.0, 1.0, 1.0, 2.0]));
        assert!((c.min_eigenvalue() - 1.0).abs() < 1e-12);
        assert_eq!(c.max_asymmetry(), 0.0);
    }
}
