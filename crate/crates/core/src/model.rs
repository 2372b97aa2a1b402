//! Model parameters and closed-form constants.

use crate::error::{Error, Result};
use crate::numerics::special::{beta, gamma};
use serde::{Deserialize, Serialize};

/// Hurst indices with ½ < h1 < h2 < 1.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(try_from = "RawHurst", into = "RawHurst")]
pub struct HurstPair {
    h1: f64,
    h2: f64,
}

#[derive(Serialize, Deserialize)]
struct RawHurst {
    h1: f64,
    h2: f64,
}

impl TryFrom<RawHurst> for HurstPair {
    type Error = Error;
    fn try_from(r: RawHurst) -> Result<Self> {
        HurstPair::new(r.h1, r.h2)
    }
}

impl From<HurstPair> for RawHurst {
    fn from(h: HurstPair) -> Self {
        RawHurst { h1: h.h1, h2: h.h2 }
    }
}

/// Minimal gap h2 − h1 for which the kernel of the second-kind equation is
/// square integrable.
pub const SOLVER_GAP: f64 = 0.25;

impl HurstPair {
    pub fn new(h1: f64, h2: f64) -> Result<Self> {
        let fail = |reason: &str| Error::Hurst {
            h1,
            h2,
            reason: reason.to_string(),
        };
        if !(h1.is_finite() && h2.is_finite()) {
            return Err(fail("non-finite index"));
        }
        if !(h1 > 0.5) {
            return Err(fail("need h1 > 1/2"));
        }
        if !(h1 < h2) {
            return Err(fail("need h1 < h2"));
        }
        if !(h2 < 1.0) {
            return Err(fail("need h2 < 1"));
        }
        Ok(Self { h1, h2 })
    }

    pub fn h1(&self) -> f64 {
        self.h1
    }

    pub fn h2(&self) -> f64 {
        self.h2
    }

    /// h2 − h1.
    pub fn gap(&self) -> f64 {
        self.h2 - self.h1
    }

    pub fn solver_admissible(&self) -> bool {
        self.gap() > SOLVER_GAP
    }

    pub fn require_solver_admissible(&self) -> Result<()> {
        if self.solver_admissible() {
            Ok(())
        } else {
            Err(Error::Hurst {
                h1: self.h1,
                h2: self.h2,
                reason: format!(
                    "need h2 - h1 > 1/4 for a square-integrable kernel (gap {:.4})",
                    self.gap()
                ),
            })
        }
    }
}

/// Statistical model: Hurst pair, noise scale σ, drift θ and horizon T.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub hurst: HurstPair,
    pub sigma: f64,
    pub theta: f64,
    pub horizon: f64,
}

impl ModelParams {
    pub fn new(hurst: HurstPair, sigma: f64, theta: f64, horizon: f64) -> Result<Self> {
        if !(sigma > 0.0 && sigma.is_finite()) {
            return Err(Error::domain(format!("sigma must be positive, got {sigma}")));
        }
        if !(horizon > 0.0 && horizon.is_finite()) {
            return Err(Error::domain(format!("horizon must be positive, got {horizon}")));
        }
        if !theta.is_finite() {
            return Err(Error::domain("theta must be finite"));
        }
        Ok(Self {
            hurst,
            sigma,
            theta,
            horizon,
        })
    }

    /// σ = 1, θ = 0, T = 1.
    pub fn standard(hurst: HurstPair) -> Self {
        Self {
            hurst,
            sigma: 1.0,
            theta: 0.0,
            horizon: 1.0,
        }
    }
}

/// α_H = H(2H − 1).
pub fn alpha_h(h: f64) -> f64 {
    h * (2.0 * h - 1.0)
}

/// β_H = (α_H / B(H − ½, 2 − 2H))^{1/2}.
pub fn beta_h(h: f64) -> f64 {
    (alpha_h(h) / beta(h - 0.5, 2.0 - 2.0 * h)).sqrt()
}

/// Variance constant of the fundamental martingale ∫_0^t l_H(t,s) dB^H(s):
/// its variance is γ_H² t^{2−2H}/(2−2H), with
/// γ_H² = (2−2H)·2H·Γ(3/2−H)³Γ(H+½)/Γ(3−2H).
pub fn gamma_h(h: f64) -> f64 {
    ((2.0 - 2.0 * h) * 2.0 * h * gamma(1.5 - h).powi(3) * gamma(h + 0.5) / gamma(3.0 - 2.0 * h))
        .sqrt()
}

/// The frequently quoted variant with (3/2 − H) in place of (2 − 2H); kept for
/// reporting, it does not match the martingale variance.
pub fn gamma_h_printed(h: f64) -> f64 {
    ((1.5 - h) * 2.0 * h * gamma(1.5 - h).powi(3) * gamma(h + 0.5) / gamma(3.0 - 2.0 * h)).sqrt()
}

/// All closed-form scalars of the model.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DerivedConstants {
    pub h1: f64,
    pub h2: f64,
    pub sigma: f64,
    pub alpha_h1: f64,
    pub alpha_h2: f64,
    pub beta_h1: f64,
    pub beta_h2: f64,
    pub gamma_h1: f64,
    pub gamma_h1_printed: f64,
    /// γ²/(2 − 2H1)
    pub epsilon_h1: f64,
    /// B(3/2 − H1, 3/2 − H1)
    pub script_b: f64,
    /// (2 − 2H1)𝓑/(σγ): the likelihood normalization as usually printed.
    pub delta_paper: f64,
    /// (2 − 2H1)𝓑/(σ²γ²): the normalization under which E N(T) = θ·d·⟨N⟩(T).
    pub drift_norm: f64,
}

impl DerivedConstants {
    pub fn new(params: &ModelParams) -> Self {
        let (h1, h2) = (params.hurst.h1(), params.hurst.h2());
        let sigma = params.sigma;
        let gamma_h1 = gamma_h(h1);
        let g2 = gamma_h1 * gamma_h1;
        let script_b = beta(1.5 - h1, 1.5 - h1);
        Self {
            h1,
            h2,
            sigma,
            alpha_h1: alpha_h(h1),
            alpha_h2: alpha_h(h2),
            beta_h1: beta_h(h1),
            beta_h2: beta_h(h2),
            gamma_h1,
            gamma_h1_printed: gamma_h_printed(h1),
            epsilon_h1: g2 / (2.0 - 2.0 * h1),
            script_b,
            delta_paper: (2.0 - 2.0 * h1) * script_b / (sigma * gamma_h1),
            drift_norm: (2.0 - 2.0 * h1) * script_b / (sigma * sigma * g2),
        }
    }

    pub fn hurst(&self) -> HurstPair {
        HurstPair {
            h1: self.h1,
            h2: self.h2,
        }
    }

    /// h2 − h1
    pub fn gap(&self) -> f64 {
        self.h2 - self.h1
    }

    pub fn gamma_sq(&self) -> f64 {
        self.gamma_h1 * self.gamma_h1
    }

    /// μ = T^{2H2 − 2H1}
    pub fn mu(&self, horizon: f64) -> f64 {
        horizon.powf(2.0 * self.gap())
    }

    /// λ = T^{2H2 − 2H1}/(σ²γ²), the coupling in the rescaled equation.
    pub fn lambda(&self, horizon: f64) -> f64 {
        self.mu(horizon) / (self.sigma * self.sigma * self.gamma_sq())
    }
}

/// Constants for `params`; fails only if the parameters are out of domain.
pub fn derive_constants(params: &ModelParams) -> Result<DerivedConstants> {
    ModelParams::new(params.hurst, params.sigma, params.theta, params.horizon)?;
    Ok(DerivedConstants::new(params))
}
