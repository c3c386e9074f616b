//! Calculators for the sign-cocycle stability bounds.
//!
//! Inputs are user-supplied regularity constants; nothing here estimates
//! Lipschitz constants of trained networks.

use serde::{Deserialize, Serialize};

use crate::error::{AtlasError, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RegularityBounds {
    pub l_e: f64,
    pub l_ep: f64,
    pub l_d: f64,
    pub l_dp: f64,
    pub eps: f64,
    pub eta: f64,
    pub delta: f64,
    pub d: u32,
    /// Use `ε̃ = ε`, valid when the points already lie on the manifold.
    #[serde(default)]
    pub on_manifold: bool,
}

impl RegularityBounds {
    pub fn validate(&self) -> Result<()> {
        let fields = [
            ("l_e", self.l_e),
            ("l_ep", self.l_ep),
            ("l_d", self.l_d),
            ("l_dp", self.l_dp),
            ("eps", self.eps),
            ("eta", self.eta),
            ("delta", self.delta),
        ];
        for (name, v) in fields {
            if !(v >= 0.0 && v.is_finite()) {
                return Err(AtlasError::Parameter(format!(
                    "{name} = {v} must be finite and nonnegative"
                )));
            }
        }
        if self.d == 0 {
            return Err(AtlasError::Parameter("d must be positive".into()));
        }
        Ok(())
    }

    /// `L_Φ′ = L_D′ L_E² + L_D L_E′`.
    pub fn l_phi_prime(&self) -> f64 {
        self.l_dp * self.l_e * self.l_e + self.l_d * self.l_ep
    }

    /// `ε̃ = (L_E L_D + 2) ε`, or `ε` on the manifold.
    pub fn eps_tilde(&self) -> f64 {
        if self.on_manifold {
            self.eps
        } else {
            (self.l_e * self.l_d + 2.0) * self.eps
        }
    }
}

fn check_eta(b: &RegularityBounds) -> Result<()> {
    if b.eta >= 1.0 {
        return Err(AtlasError::Parameter(format!("eta = {} must be < 1", b.eta)));
    }
    Ok(())
}

/// `η_eff = (L_E L_D + 2) η / (1 − η) + L_Φ′ ε`.
pub fn eta_eff(b: &RegularityBounds) -> Result<f64> {
    check_eta(b)?;
    Ok((b.l_e * b.l_d + 2.0) * b.eta / (1.0 - b.eta) + b.l_phi_prime() * b.eps)
}

/// `Γ = L_E η_eff L_D + L_E′ ε̃ (1 + η_eff) L_D`.
pub fn gamma(b: &RegularityBounds) -> Result<f64> {
    let ee = eta_eff(b)?;
    Ok(b.l_e * ee * b.l_d + b.l_ep * b.eps_tilde() * (1.0 + ee) * b.l_d)
}

/// `L_det = d (L_E L_D)^{d−1} L_E (L_E L_D′ + L_E′ L_D²)`.
pub fn l_det(b: &RegularityBounds) -> f64 {
    let d = b.d as f64;
    d * (b.l_e * b.l_d).powi(b.d as i32 - 1) * b.l_e * (b.l_e * b.l_dp + b.l_ep * b.l_d * b.l_d)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StabilityCheck {
    pub holds: bool,
    /// `d Γ (L_E L_D + Γ)^{d−1}`; infinite when `η ≥ 1`.
    pub branch_gamma: f64,
    /// `L_det ε`.
    pub branch_det: f64,
    /// `δ − max(branch_gamma, branch_det)`.
    pub margin: f64,
}

pub fn branch_gamma(b: &RegularityBounds, gamma: f64) -> f64 {
    b.d as f64 * gamma * (b.l_e * b.l_d + gamma).powi(b.d as i32 - 1)
}

/// `η < 1` and `max(d Γ (L_E L_D + Γ)^{d−1}, L_det ε) < δ`.
pub fn stability_check(b: &RegularityBounds) -> StabilityCheck {
    let branch_gamma = gamma(b).map_or(f64::INFINITY, |g| branch_gamma(b, g));
    let branch_det = l_det(b) * b.eps;
    let margin = b.delta - branch_gamma.max(branch_det);
    StabilityCheck {
        holds: b.eta < 1.0 && margin > 0.0,
        branch_gamma,
        branch_det,
        margin,
    }
}

/// First-order form of the gamma branch for small `ε, η`:
/// `d L_E^{d−1} L_D^d [(L_E L_D + 2) L_E η + (L_Φ′ L_E + L_E′) ε]`.
pub fn simplified_branch(b: &RegularityBounds) -> f64 {
    let d = b.d as i32;
    let bracket = (b.l_e * b.l_d + 2.0) * b.l_e * b.eta + (b.l_phi_prime() * b.l_e + b.l_ep) * b.eps;
    b.d as f64 * b.l_e.powi(d - 1) * b.l_d.powi(d) * bracket
}

/// `(s_E s_D)^d`.
pub fn nondeg_lower_bound(s_e: f64, s_d: f64, d: u32) -> Result<f64> {
    if s_e < 0.0 || s_d < 0.0 {
        return Err(AtlasError::Parameter("singular values must be nonnegative".into()));
    }
    Ok((s_e * s_d).powi(d as i32))
}

/// `μ < δ₀ / (2 C₀)`.
pub fn mu_condition(mu: f64, delta0: f64, c0: f64) -> Result<bool> {
    if !(c0 > 0.0) {
        return Err(AtlasError::Parameter(format!("C0 = {c0} must be positive")));
    }
    Ok(mu < delta0 / (2.0 * c0))
}
