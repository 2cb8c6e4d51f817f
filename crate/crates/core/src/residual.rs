use nalgebra::{Matrix6, Vector6};

/// Scalar residual rows with their Jacobians and per-row information.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ResidualRows {
    pub residuals: Vec<f64>,
    /// Row `i` holds `d residual_i / d xi` as a column vector.
    pub jacobians: Vec<Vector6<f64>>,
    pub information: Vec<f64>,
}

impl ResidualRows {
    pub fn with_capacity(n: usize) -> Self {
        ResidualRows {
            residuals: Vec::with_capacity(n),
            jacobians: Vec::with_capacity(n),
            information: Vec::with_capacity(n),
        }
    }

    pub fn push(&mut self, residual: f64, jacobian: Vector6<f64>, information: f64) {
        self.residuals.push(residual);
        self.jacobians.push(jacobian);
        self.information.push(information);
    }

    pub fn len(&self) -> usize {
        self.residuals.len()
    }

    pub fn is_empty(&self) -> bool {
        self.residuals.is_empty()
    }

    /// `1/2 sum info * e^2`.
    pub fn cost(&self) -> f64 {
        0.5 * self
            .residuals
            .iter()
            .zip(&self.information)
            .map(|(e, w)| w * e * e)
            .sum::<f64>()
    }

    /// Accumulates `J^T W J` and `J^T W e` with `W = scale * info * extra`.
    pub fn accumulate(
        &self,
        scale: f64,
        extra: Option<&[f64]>,
        hessian: &mut Matrix6<f64>,
        gradient: &mut Vector6<f64>,
    ) {
        for i in 0..self.len() {
            let w = scale * self.information[i] * extra.map_or(1.0, |x| x[i]);
            let j = &self.jacobians[i];
            *hessian += j * j.transpose() * w;
            *gradient += j * (w * self.residuals[i]);
        }
    }
}
