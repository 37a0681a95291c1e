use serde::{Deserialize, Serialize};

use super::SvmError;

/// Resolved parameters of one binary machine.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct KernelParams {
    pub degree: u32,
    pub gamma: f64,
    pub coef0: f64,
    pub c: f64,
    pub tol: f64,
}

impl KernelParams {
    pub fn validate(&self) -> Result<(), SvmError> {
        if self.degree < 1 {
            return Err(SvmError::Argument("degree must be >= 1".into()));
        }
        if !(self.gamma > 0.0 && self.gamma.is_finite()) {
            return Err(SvmError::Argument(format!("gamma must be > 0, got {}", self.gamma)));
        }
        if !(self.c > 0.0 && self.c.is_finite()) {
            return Err(SvmError::Argument(format!("C must be > 0, got {}", self.c)));
        }
        if !(self.tol > 0.0 && self.tol < 1.0) {
            return Err(SvmError::Argument(format!("tol must be in (0, 1), got {}", self.tol)));
        }
        Ok(())
    }

    #[inline]
    pub(crate) fn eval_unchecked(&self, x: &[f64], z: &[f64]) -> f64 {
        let dot: f64 = x.iter().zip(z).map(|(a, b)| a * b).sum();
        (self.gamma * dot + self.coef0).powi(self.degree as i32)
    }
}

/// `(gamma * <x, z> + coef0)^degree`.
pub fn poly_kernel(x: &[f64], z: &[f64], p: &KernelParams) -> Result<f64, SvmError> {
    if x.len() != z.len() {
        return Err(SvmError::Argument(format!(
            "kernel arguments differ in length: {} vs {}",
            x.len(),
            z.len()
        )));
    }
    Ok(p.eval_unchecked(x, z))
}
