use serde::{Deserialize, Serialize};

/// Fixed frequencies `omega_i = alpha^(-(i-1)/beta)` shared by the cosine
/// time encoding and the sine time-context map. Never trained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TimeEncoding {
    pub d: usize,
    pub alpha: f64,
    pub beta: f64,
    omega: Vec<f64>,
}

impl TimeEncoding {
    pub fn new(d: usize, alpha: f64, beta: f64) -> Self {
        let omega = (0..d).map(|i| alpha.powf(-(i as f64) / beta)).collect();
        Self { d, alpha, beta, omega }
    }

    /// `alpha = beta = sqrt(d)`.
    pub fn with_dim(d: usize) -> Self {
        let s = (d as f64).sqrt();
        Self::new(d, s, s)
    }

    pub fn omega(&self) -> &[f64] {
        &self.omega
    }

    /// `cos(t * omega)`.
    pub fn encode(&self, t: f64) -> Vec<f64> {
        self.omega.iter().map(|w| (t * w).cos()).collect()
    }

    /// `sin(delta * omega) + 1`; the identity map at `delta = 0`.
    pub fn context(&self, delta: f64) -> Vec<f64> {
        self.omega.iter().map(|w| (delta * w).sin() + 1.0).collect()
    }
}
