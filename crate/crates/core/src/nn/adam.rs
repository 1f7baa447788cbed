use super::{NnError, Param, Result, Scalar};

/// Adam with bias-corrected moment estimates.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Number of completed optimizer steps.
    pub step_count: u64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            step_count: 0,
        }
    }
}

impl Adam {
    /// Applies one update to every parameter from its current gradient.
    pub fn step<T: Scalar>(&mut self, params: &mut [&mut Param<T>], lr: f64) -> Result<()> {
        if !(lr > 0.0 && lr.is_finite()) {
            return Err(NnError::Config(format!(
                "learning rate must be positive, got {lr}"
            )));
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let b1 = T::from_f64_lossy(self.beta1);
        let b2 = T::from_f64_lossy(self.beta2);
        let one_m_b1 = T::from_f64_lossy(1.0 - self.beta1);
        let one_m_b2 = T::from_f64_lossy(1.0 - self.beta2);
        let inv_c1 = T::from_f64_lossy(1.0 / (1.0 - self.beta1.powi(t)));
        let inv_c2 = T::from_f64_lossy(1.0 / (1.0 - self.beta2.powi(t)));
        let eps = T::from_f64_lossy(self.epsilon);
        let lr = T::from_f64_lossy(lr);
        for p in params.iter_mut() {
            let Param {
                value,
                grad,
                adam_m,
                adam_v,
            } = &mut **p;
            for (((w, &g), m), v) in value
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(adam_m.data_mut())
                .zip(adam_v.data_mut())
            {
                *m = b1 * *m + one_m_b1 * g;
                *v = b2 * *v + one_m_b2 * g * g;
                // Moments of parameters whose gradient stays at zero decay
                // geometrically into subnormals, which are very slow on common
                // CPUs. At that size they cannot move a weight, so drop them.
                if m.is_subnormal() {
                    *m = T::zero();
                }
                if v.is_subnormal() {
                    *v = T::zero();
                }
                let m_hat = *m * inv_c1;
                let v_hat = *v * inv_c2;
                *w -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}
