//! The lattice reaction-diffusion model.
//!
//! A chain of `d` nodes with discrete-Laplacian coupling of mesh `h` and a
//! superlinear reaction `g(x) = (x^+)^p - x` acting on the last node. The
//! vector field has a gradient structure: with the Dirichlet energy
//!
//! ```text
//! phi(u) = (1/h^2) sum_{i<d} (u_{i+1} - u_i)^2
//!          - (2/h) ((u_d^+)^{p+1}/(p+1) - u_d^2/2)
//! ```
//!
//! the literal node equations satisfy `-grad phi = diag(1, 2, ..., 2, 1) b`,
//! so two drift modes are exposed: the literal equations ([`DriftMode::PaperDrift`])
//! and the exact negative gradient ([`DriftMode::GradientExact`]). They share
//! the equilibria `0` and `1` and coincide entirely when `d = 2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which vector field drives the dynamics.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum DriftMode {
    /// The literal node equations (first/interior/boundary rows).
    PaperDrift,
    /// The exact negative gradient of the energy, `diag(w) * PaperDrift`.
    GradientExact,
}

/// One instance of the lattice system.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    /// Number of nodes, at least 2.
    pub d: usize,
    /// Mesh size, positive.
    pub h: f64,
    /// Reaction exponent, strictly greater than 1.
    pub p: f64,
    pub mode: DriftMode,
}

impl ModelParams {
    pub fn new(d: usize, h: f64, p: f64, mode: DriftMode) -> Result<Self> {
        if d < 2 {
            return Err(Error::InvalidParameter(format!("d must be >= 2, got {d}")));
        }
        if !(h > 0.0) || !h.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "h must be positive, got {h}"
            )));
        }
        if !(p > 1.0) || !p.is_finite() {
            return Err(Error::InvalidParameter(format!("p must be > 1, got {p}")));
        }
        Ok(Self { d, h, p, mode })
    }

    fn check_finite<'a>(&self, u: &'a State) -> Result<&'a [f64]> {
        let v = u.coords().ok_or(Error::InfiniteState)?;
        if v.len() != self.d {
            return Err(Error::DimensionMismatch {
                expected: self.d,
                got: v.len(),
            });
        }
        Ok(v)
    }

    /// Node-dissipation weights `(1, 2, 2, ..., 2, 1)` reconciling the literal
    /// drift with the energy gradient: `grad phi = -diag(w) * b`.
    pub fn dissipation_weights(&self) -> Vec<f64> {
        let mut w = vec![2.0; self.d];
        w[0] = 1.0;
        w[self.d - 1] = 1.0;
        w
    }

    /// The drift field in the configured mode. Rejects the `Infinity` marker.
    pub fn drift(&self, u: &State) -> Result<Vec<f64>> {
        let v = self.check_finite(u)?;
        let mut out = vec![0.0; self.d];
        self.drift_into(v, &mut out);
        Ok(out)
    }

    /// Allocation-free drift evaluation on a finite coordinate slice.
    pub fn drift_into(&self, u: &[f64], out: &mut [f64]) {
        self.paper_drift_into(u, out);
        if self.mode == DriftMode::GradientExact {
            for v in out.iter_mut().take(self.d - 1).skip(1) {
                *v *= 2.0;
            }
        }
    }

    /// The literal node equations, regardless of the configured mode.
    pub fn paper_drift_into(&self, u: &[f64], out: &mut [f64]) {
        let d = self.d;
        let h = self.h;
        let c = 2.0 / (h * h);
        out[0] = c * (-u[0] + u[1]);
        for i in 1..d - 1 {
            out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
        }
        out[d - 1] = c * (-u[d - 1] + u[d - 2] + h * reaction(self.p, u[d - 1]));
    }

    /// The energy and its quadratic/reaction decomposition. `phi = quad - reaction`.
    pub fn energy(&self, u: &State) -> Result<EnergyReport> {
        let v = self.check_finite(u)?;
        Ok(self.energy_slice(v))
    }

    pub fn energy_slice(&self, u: &[f64]) -> EnergyReport {
        let h = self.h;
        let quad = u
            .windows(2)
            .map(|w| (w[1] - w[0]) * (w[1] - w[0]))
            .sum::<f64>()
            / (h * h);
        let ud = u[self.d - 1];
        let reaction =
            (2.0 / h) * (positive_power(ud, self.p + 1.0) / (self.p + 1.0) - ud * ud / 2.0);
        EnergyReport {
            phi: quad - reaction,
            quad,
            reaction,
        }
    }

    /// Analytic gradient of the energy. Satisfies
    /// `grad_energy(u)[i] = -w[i] * paper_drift(u)[i]` exactly in algebra.
    pub fn grad_energy(&self, u: &State) -> Result<Vec<f64>> {
        let v = self.check_finite(u)?;
        let mut out = vec![0.0; self.d];
        self.grad_energy_into(v, &mut out);
        Ok(out)
    }

    pub fn grad_energy_into(&self, u: &[f64], out: &mut [f64]) {
        let d = self.d;
        let h = self.h;
        let c = 2.0 / (h * h);
        out[0] = c * (u[0] - u[1]);
        for i in 1..d - 1 {
            out[i] = c * (2.0 * u[i] - u[i - 1] - u[i + 1]);
        }
        out[d - 1] = c * (u[d - 1] - u[d - 2]) - (2.0 / h) * reaction(self.p, u[d - 1]);
    }

    /// The barrier `Delta = 2 (phi(1) - phi(0)) = (4/h)(1/2 - 1/(p+1))`.
    pub fn delta(&self) -> f64 {
        (4.0 / self.h) * (0.5 - 1.0 / (self.p + 1.0))
    }

    /// The constant vector `c * (1, ..., 1)`.
    pub fn ones(&self, c: f64) -> State {
        State::Finite(vec![c; self.d])
    }
}

/// The reaction term `g(x) = (x^+)^p - x`; continuous everywhere,
/// smooth away from 0, with `(x^+)^p = 0` for `x <= 0` (no smoothing).
pub fn reaction(p: f64, x: f64) -> f64 {
    positive_power(x, p) - x
}

#[inline]
fn positive_power(x: f64, q: f64) -> f64 {
    if x > 0.0 {
        x.powf(q)
    } else {
        0.0
    }
}

/// A point of the state space, or the absorbing marker reached at explosion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum State {
    Finite(Vec<f64>),
    Infinity,
}

impl State {
    /// A finite state; every coordinate must be a finite number.
    pub fn finite(u: Vec<f64>) -> Result<Self> {
        if let Some(bad) = u.iter().find(|x| !x.is_finite()) {
            return Err(Error::InvalidParameter(format!(
                "finite states cannot hold {bad}"
            )));
        }
        Ok(State::Finite(u))
    }

    pub fn coords(&self) -> Option<&[f64]> {
        match self {
            State::Finite(u) => Some(u),
            State::Infinity => None,
        }
    }

    pub fn is_infinite(&self) -> bool {
        matches!(self, State::Infinity)
    }
}

/// Energy value split into its quadratic and reaction parts.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EnergyReport {
    pub phi: f64,
    pub quad: f64,
    pub reaction: f64,
}
