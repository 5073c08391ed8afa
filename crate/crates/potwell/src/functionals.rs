//! The variational functionals of the flow: the energy `J`, the Nehari
//! functional `I = (J'(u), u)`, the one-parameter family `I_δ`, the Nehari
//! scaling `λ(δ, u)`, and the variational gradient `J'(u)`.
//!
//! With `G = ‖∇u‖²` and `P` the nonlocal double integral,
//!
//! ```text
//! J(u)   = G/2 - P/(2p)
//! I(u)   = G - P
//! I_δ(u) = δ G - P
//! λ(δ,u) = (δ G / P)^{1/(2p-2)}      (the unique scale with I_δ(λu) = 0)
//! J'(u)  = -Δu - v(u) |u|^{p-2} u
//! ```
//!
//! All identities hold exactly in the discrete system because `G` is
//! defined through `(u, -Δ_h u)` and `P` through the same kernel table that
//! `J'` uses.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::field::{grad_sq, laplacian, ScalarField};
use crate::nonlocal::{abs_pow, convolve, potential_energy, KernelTable};

/// Relative tolerance for "lies on N_δ": `|I_δ| <= NEHARI_TOL · max(δG, P)`.
pub const NEHARI_TOL: f64 = 1e-9;

/// Model exponents. Spatial dimension is fixed at 3, so the subcritical
/// range is `1 < p < 5` and the well-posedness hypothesis of the decay and
/// critical-threshold statements reads `(p-1)(2-1/p) < 4`.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct ModelParams {
    p: f64,
    n: u32,
    well_posed_q_ok: bool,
}

impl ModelParams {
    pub fn new(p: f64) -> Result<Self> {
        if !(p > 1.0 && p < 5.0) {
            return Err(Error::InvalidParam(format!(
                "exponent must satisfy 1 < p < 5, got {p}"
            )));
        }
        Ok(ModelParams {
            p,
            n: 3,
            well_posed_q_ok: (p - 1.0) * (2.0 - 1.0 / p) < 4.0,
        })
    }

    pub fn p(&self) -> f64 {
        self.p
    }

    pub fn n(&self) -> u32 {
        self.n
    }

    pub fn well_posed_q_ok(&self) -> bool {
        self.well_posed_q_ok
    }
}

/// `sign(x) |x|^q`, continuous at 0 for `q > 0`. This is how `|u|^{p-2} u`
/// is evaluated (`q = p-1`), avoiding `0^negative` at nodes where `u = 0`.
#[inline]
pub fn signed_pow(x: f64, q: f64) -> f64 {
    if x == 0.0 {
        0.0
    } else {
        x.signum() * x.abs().powf(q)
    }
}

/// Energy functional `J(u) = ½‖∇u‖² - (1/2p) P(u)`.
pub fn energy_j(u: &ScalarField, params: &ModelParams, table: &KernelTable) -> f64 {
    let p = params.p();
    0.5 * grad_sq(u) - potential_energy(u, p, table) / (2.0 * p)
}

/// Energy from precomputed `G = ‖∇u‖²` and `P`.
#[inline]
pub fn energy_j_from_parts(g: f64, p_pot: f64, p: f64) -> f64 {
    0.5 * g - p_pot / (2.0 * p)
}

/// Nehari functional `I(u) = ‖∇u‖² - P(u) = (J'(u), u)`.
pub fn nehari_i(u: &ScalarField, params: &ModelParams, table: &KernelTable) -> f64 {
    grad_sq(u) - potential_energy(u, params.p(), table)
}

/// `I_δ(u) = δ‖∇u‖² - P(u)`; affine and strictly increasing in `δ` for
/// nonzero `u`. Requires `δ > 0`.
pub fn nehari_i_delta(
    u: &ScalarField,
    delta: f64,
    params: &ModelParams,
    table: &KernelTable,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParam(format!(
            "I_delta needs delta > 0, got {delta}"
        )));
    }
    Ok(delta * grad_sq(u) - potential_energy(u, params.p(), table))
}

/// The unique positive scale `λ` with `λu` on `N_δ`:
/// `λ = (δ‖∇u‖² / P(u))^{1/(2p-2)}`. Errors on `u = 0`.
pub fn lambda_scale(
    delta: f64,
    u: &ScalarField,
    params: &ModelParams,
    table: &KernelTable,
) -> Result<f64> {
    if !(delta > 0.0) {
        return Err(Error::InvalidParam(format!(
            "lambda_scale needs delta > 0, got {delta}"
        )));
    }
    if u.is_zero() {
        return Err(Error::InvalidParam(
            "lambda_scale is undefined for the zero field".into(),
        ));
    }
    let g = grad_sq(u);
    let pot = potential_energy(u, params.p(), table);
    Ok((delta * g / pot).powf(1.0 / (2.0 * params.p() - 2.0)))
}

/// Variational gradient `J'(u) = -Δu - v(u)|u|^{p-2}u` with respect to the
/// discrete L² pairing, so that finite differences of `J` along `φ` match
/// `inner(grad_j(u), φ)`.
pub fn grad_j(u: &ScalarField, params: &ModelParams, table: &KernelTable) -> ScalarField {
    let p = params.p();
    let v = convolve(&abs_pow(u, p), table);
    let lap = laplacian(u);
    let grid = u.grid();
    let values = (0..grid.len())
        .map(|i| -lap.values()[i] - v.values()[i] * signed_pow(u.values()[i], p - 1.0))
        .collect();
    ScalarField::from_values(grid, values)
}
