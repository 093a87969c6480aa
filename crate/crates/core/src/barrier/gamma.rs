use serde::{Deserialize, Serialize};

use super::BarrierError;

/// Exponential funnel `γ(t) = (γ₀ − γ∞)·exp(−l·t) + γ∞`, increasing from γ₀ toward γ∞.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GammaParams {
    pub gamma0: f64,
    pub gamma_inf: f64,
    pub decay: f64,
    pub t_star: f64,
}

impl GammaParams {
    pub fn new(gamma0: f64, gamma_inf: f64, decay: f64, t_star: f64) -> Result<Self, BarrierError> {
        if !(gamma0 < gamma_inf) {
            return Err(BarrierError::InvalidGamma(format!(
                "gamma0 ({gamma0}) must be below gamma_inf ({gamma_inf})"
            )));
        }
        if !(decay >= 0.0) || !decay.is_finite() {
            return Err(BarrierError::InvalidGamma(format!("decay must be finite and >= 0, got {decay}")));
        }
        if !(t_star >= 0.0) {
            return Err(BarrierError::InvalidGamma(format!("t_star must be >= 0, got {t_star}")));
        }
        Ok(Self {
            gamma0,
            gamma_inf,
            decay,
            t_star,
        })
    }

    /// Funnel that reaches the robustness level `r` exactly at `t_star`.
    ///
    /// When `gamma0 < r` the decay is `−ln((r − γ∞)/(γ₀ − γ∞)) / t_star`;
    /// otherwise the funnel is static (`decay = 0`).
    pub fn reaching(gamma0: f64, gamma_inf: f64, r: f64, t_star: f64) -> Result<Self, BarrierError> {
        if !(gamma_inf > r.max(gamma0)) {
            return Err(BarrierError::InvalidGamma(format!(
                "gamma_inf ({gamma_inf}) must exceed max(r, gamma0) = {}",
                r.max(gamma0)
            )));
        }
        let decay = if gamma0 < r {
            if t_star <= 0.0 {
                return Err(BarrierError::InvalidGamma(
                    "gamma0 below r requires t_star > 0".into(),
                ));
            }
            -((r - gamma_inf) / (gamma0 - gamma_inf)).ln() / t_star
        } else {
            0.0
        };
        Self::new(gamma0, gamma_inf, decay, t_star)
    }

    pub fn value(&self, t: f64) -> f64 {
        (self.gamma0 - self.gamma_inf) * (-self.decay * t).exp() + self.gamma_inf
    }

    /// `dγ/dt`, never negative.
    pub fn rate(&self, t: f64) -> f64 {
        self.decay * (self.gamma_inf - self.gamma0) * (-self.decay * t).exp()
    }

    /// Largest rate over `t >= 0`, attained at `t = 0`.
    pub fn max_rate(&self) -> f64 {
        self.decay * (self.gamma_inf - self.gamma0)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn reaches_r_at_t_star() {
        let g = GammaParams::reaching(0.0, 1.0, 0.5, 2.0).unwrap();
        assert!((g.decay - (-(0.5f64).ln() / 2.0)).abs() < 1e-15);
        assert!((g.value(2.0) - 0.5).abs() < 1e-12);
    }

    #[test]
    fn zero_decay_is_constant() {
        let g = GammaParams::new(0.7, 2.0, 0.0, 0.0).unwrap();
        for t in [0.0, 1.0, 100.0] {
            assert_eq!(g.value(t), 0.7);
            assert_eq!(g.rate(t), 0.0);
        }
        let s = GammaParams::reaching(0.7, 2.0, 0.5, 0.0).unwrap();
        assert_eq!(s.decay, 0.0);
    }

    #[test]
    fn direct_evaluation() {
        let g = GammaParams::new(-1.0, 2.0, 0.7, 1.0).unwrap();
        let expected = -3.0 * f64::exp(-0.7) + 2.0;
        assert!((g.value(1.0) - expected).abs() < 1e-15);
    }

    #[test]
    fn invalid_parameters() {
        assert!(GammaParams::new(1.0, 1.0, 0.0, 0.0).is_err());
        assert!(GammaParams::new(0.0, 1.0, -0.1, 0.0).is_err());
        assert!(GammaParams::reaching(0.0, 0.4, 0.5, 1.0).is_err());
        assert!(GammaParams::reaching(0.0, 1.0, 0.5, 0.0).is_err());
    }
}
