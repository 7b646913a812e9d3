//! Globally Lipschitz localizations of the drift.
//!
//! The superlinear part of the boundary reaction is damped by a C^2 cutoff
//! acting on the last coordinate: inside `|u_d| <= n` nothing changes, the
//! cutoff decays over the band `[n, 2n]`, and beyond `2n` only the quadratic
//! confinement `-u_d^2/2` of the reaction primitive survives. Keeping the
//! quadratic term makes the truncated energy coercive, so the truncated
//! diffusion has a unique invariant measure with unnormalized log-density
//! `-2 phi_n / eps^2`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriftMode, ModelParams, State};

/// Cutoff radius in the last coordinate; the drift is untouched on `|u_d| < n`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TruncationLevel(u32);

impl TruncationLevel {
    pub fn new(n: u32) -> Result<Self> {
        if n == 0 {
            return Err(Error::InvalidParameter(
                "truncation level must be >= 1".into(),
            ));
        }
        Ok(Self(n))
    }

    pub fn n(self) -> f64 {
        f64::from(self.0)
    }
}

/// Quintic bridge from 1 at `t = 0` to 0 at `t = 1` with two vanishing
/// derivatives at both ends. Out-of-range arguments are rejected.
pub fn smoothstep(t: f64) -> Result<f64> {
    if !(0.0..=1.0).contains(&t) {
        return Err(Error::InvalidParameter(format!(
            "smoothstep argument must lie in [0, 1], got {t}"
        )));
    }
    Ok(1.0 - t * t * t * (10.0 - 15.0 * t + 6.0 * t * t))
}

fn smoothstep_deriv(t: f64) -> f64 {
    -30.0 * t * t * (1.0 - t) * (1.0 - t)
}

fn smoothstep_second(t: f64) -> f64 {
    -60.0 * t * (1.0 - t) * (1.0 - 2.0 * t)
}

/// Cutoff profile `s_n(x)`: 1 on `|x| <= n`, 0 on `|x| >= 2n`, quintic between.
fn cutoff(level: TruncationLevel, x: f64) -> f64 {
    let n = level.n();
    let a = x.abs();
    if a <= n {
        1.0
    } else if a >= 2.0 * n {
        0.0
    } else {
        smoothstep((a - n) / n).expect("band argument in range")
    }
}

fn cutoff_deriv(level: TruncationLevel, x: f64) -> f64 {
    let n = level.n();
    let a = x.abs();
    if a <= n || a >= 2.0 * n {
        0.0
    } else {
        x.signum() * smoothstep_deriv((a - n) / n) / n
    }
}

#[inline]
fn superlinear_primitive(p: f64, x: f64) -> f64 {
    if x > 0.0 {
        x.powf(p + 1.0) / (p + 1.0)
    } else {
        0.0
    }
}

/// Truncated reaction primitive
/// `G_n(x) = s_n(x) (x^+)^{p+1}/(p+1) - x^2/2`.
///
/// Only the superlinear term is cut off; the quadratic confinement stays.
pub fn g_n(level: TruncationLevel, p: f64, x: f64) -> f64 {
    cutoff(level, x) * superlinear_primitive(p, x) - x * x / 2.0
}

/// Derivative of [`g_n`]; equals the reaction `g` on `|x| <= n` and `-x`
/// beyond `2n`.
pub fn g_n_deriv(level: TruncationLevel, p: f64, x: f64) -> f64 {
    let sup = if x > 0.0 { x.powf(p) } else { 0.0 };
    cutoff_deriv(level, x) * superlinear_primitive(p, x) + cutoff(level, x) * sup - x
}

/// Truncated energy `phi_n(u) = quad(u) - (2/h) G_n(u_d)`.
/// Equals the full energy whenever `|u_d| <= n`.
pub fn truncated_energy(params: &ModelParams, level: TruncationLevel, u: &State) -> Result<f64> {
    let v = u.coords().ok_or(Error::InfiniteState)?;
    if v.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: v.len(),
        });
    }
    Ok(truncated_energy_slice(params, level, v))
}

pub fn truncated_energy_slice(params: &ModelParams, level: TruncationLevel, u: &[f64]) -> f64 {
    let e = params.energy_slice(u);
    let ud = u[params.d - 1];
    if ud.abs() <= level.n() {
        // agreement region: same arithmetic path as the full energy
        e.phi
    } else {
        e.quad - (2.0 / params.h) * g_n(level, params.p, ud)
    }
}

/// Truncated drift; bit-identical to the full drift on `|u_d| <= n`,
/// globally Lipschitz, and respecting the configured drift mode.
pub fn truncated_drift(
    params: &ModelParams,
    level: TruncationLevel,
    u: &State,
) -> Result<Vec<f64>> {
    let v = u.coords().ok_or(Error::InfiniteState)?;
    if v.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: v.len(),
        });
    }
    let mut out = vec![0.0; params.d];
    truncated_drift_into(params, level, v, &mut out);
    Ok(out)
}

pub fn truncated_drift_into(
    params: &ModelParams,
    level: TruncationLevel,
    u: &[f64],
    out: &mut [f64],
) {
    let d = params.d;
    let ud = u[d - 1];
    if ud.abs() <= level.n() {
        params.drift_into(u, out);
        return;
    }
    let h = params.h;
    let c = 2.0 / (h * h);
    out[0] = c * (-u[0] + u[1]);
    for i in 1..d - 1 {
        out[i] = (u[i + 1] - 2.0 * u[i] + u[i - 1]) / (h * h);
    }
    out[d - 1] = c * (-u[d - 1] + u[d - 2] + h * g_n_deriv(level, params.p, ud));
    if params.mode == DriftMode::GradientExact {
        for v in out.iter_mut().take(d - 1).skip(1) {
            *v *= 2.0;
        }
    }
}

/// Frobenius bound on the linear part of the drift Jacobian (mode-aware).
/// An upper bound for the operator norm, which is all the Lipschitz
/// certificate needs.
pub fn linear_drift_frobenius(params: &ModelParams) -> f64 {
    let d = params.d;
    let h = params.h;
    let c = 2.0 / (h * h);
    let interior = match params.mode {
        DriftMode::PaperDrift => 1.0 / (h * h),
        DriftMode::GradientExact => 2.0 / (h * h),
    };
    let mut sq = 0.0;
    // first row: (-c, c)
    sq += 2.0 * c * c;
    // interior rows: (k, -2k, k)
    for _ in 1..d - 1 {
        sq += interior * interior * (1.0 + 4.0 + 1.0);
    }
    // last row: (c, -c) plus the -2/h from the linear part of the reaction
    sq += c * c + (c + 2.0 / h) * (c + 2.0 / h);
    sq.sqrt()
}

/// Analytic Lipschitz bound `L_n` for the truncated drift: Frobenius norm of
/// the linear part plus `(2/h) sup |(s_n H)''|` over the cutoff band, the
/// latter evaluated on a dense grid with a small safety factor.
pub fn lipschitz_bound(params: &ModelParams, level: TruncationLevel) -> f64 {
    let n = level.n();
    let p = params.p;
    // sup over [0, n] of H'' = p x^{p-1} is attained at x = n
    let mut sup = p * n.powf(p - 1.0);
    let grid = 8192;
    for k in 0..=grid {
        let t = k as f64 / grid as f64;
        let x = n * (1.0 + t);
        let s = smoothstep(t).unwrap();
        let s1 = smoothstep_deriv(t) / n;
        let s2 = smoothstep_second(t) / (n * n);
        let hpp = x.powf(p + 1.0) / (p + 1.0);
        let hp = x.powf(p);
        let h2 = p * x.powf(p - 1.0);
        let second = s2 * hpp + 2.0 * s1 * hp + s * h2;
        sup = sup.max(second.abs());
    }
    linear_drift_frobenius(params) + (2.0 / params.h) * sup * 1.02
}

/// Unnormalized log of the invariant density of the truncated diffusion,
/// `-2 phi_n(u) / eps^2`. The normalizer is never computed; consumers work
/// with ratios or normalize empirically over a bounded window.
pub fn log_invariant_density(
    params: &ModelParams,
    level: TruncationLevel,
    eps: f64,
    u: &State,
) -> Result<f64> {
    if !(eps > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "eps must be positive, got {eps}"
        )));
    }
    Ok(-2.0 * truncated_energy(params, level, u)? / (eps * eps))
}
