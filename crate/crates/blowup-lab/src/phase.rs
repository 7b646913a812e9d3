//! Deterministic phase portrait and the auxiliary escape domain.
//!
//! State space splits into the domain of attraction of the origin, the
//! domain of explosion, and the codimension-one separatrix through the
//! saddle `1` between them. The separatrix is never represented
//! explicitly; it is located pointwise as the flip of [`classify`] along
//! rays, which is what both [`lambda_crit`] and the domain construction
//! need.
//!
//! [`build_domain_g`] (d = 2 only) assembles a bounded star-shaped domain
//! around the origin whose boundary consists of a low-barrier cap just past
//! the separatrix (`in_partial1`) and a high level curve of the energy
//! elsewhere, radially expanded by `1 + alpha`. Escape from the domain then
//! happens through the cap with overwhelming probability as the noise
//! vanishes, and cap points explode deterministically.

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::integrator::{integrate_sde, DetConfig, Outcome, SdeConfig};
use crate::model::{ModelParams, State};
use crate::montecarlo::{self, ExperimentKind, SampleTable, SweepSpec};
use crate::rng::RandomStream;

/// Thresholds derived from one model instance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CertificateLevels {
    /// Explosion-certificate level: twice the value where the boundary node
    /// satisfies the one-dimensional super-linear inequality
    /// `u' >= (1/h) u^p` whenever it dominates the other coordinates.
    pub m_star: f64,
    /// Convergence-ball radius: half the radius on which the energy Hessian
    /// is verified positive definite, so entering the ball settles the
    /// attraction verdict.
    pub r_conv: f64,
}

/// `m_star = 2 (4/h + 2)^{1/(p-1)}`, `r_conv = (1/2) (1/p)^{1/(p-1)}`.
pub fn certificate_levels(params: &ModelParams) -> CertificateLevels {
    let unsafe_level = (4.0 / params.h + 2.0).powf(1.0 / (params.p - 1.0));
    let levels = CertificateLevels {
        m_star: 2.0 * unsafe_level,
        r_conv: 0.5 * (1.0 / params.p).powf(1.0 / (params.p - 1.0)),
    };
    debug_assert!(
        convergence_ball_verified(params, &levels),
        "energy Hessian not positive definite on the convergence ball"
    );
    levels
}

/// Sampled positive-definiteness check of the energy Hessian on the
/// (weighted-norm) ball that traps trajectories entering `B_{r_conv}`.
pub fn convergence_ball_verified(params: &ModelParams, levels: &CertificateLevels) -> bool {
    let d = params.d;
    let radius = levels.r_conv * std::f64::consts::SQRT_2;
    let mut stream = RandomStream::from_seed(0x5eed);
    let mut u = vec![0.0; d];
    for sample in 0..32 {
        if sample == 0 {
            // worst case: the boundary node at the top of the ball
            u.fill(0.0);
            u[d - 1] = radius;
        } else {
            let mut n = 0.0;
            for x in u.iter_mut() {
                *x = stream.normal();
                n += *x * *x;
            }
            let scale = radius * stream.uniform().powf(1.0 / d as f64) / n.sqrt();
            for x in u.iter_mut() {
                *x *= scale;
            }
        }
        if !hessian_positive_definite(params, &u) {
            return false;
        }
    }
    true
}

#[allow(clippy::needless_range_loop)]
fn hessian_positive_definite(params: &ModelParams, u: &[f64]) -> bool {
    let d = params.d;
    let c = 2.0 / (params.h * params.h);
    let mut m = vec![vec![0.0; d]; d];
    for i in 0..d {
        m[i][i] = if i == 0 || i == d - 1 { c } else { 2.0 * c };
        if i + 1 < d {
            m[i][i + 1] = -c;
            m[i + 1][i] = -c;
        }
    }
    let ud = u[d - 1];
    let sup = if ud > 0.0 {
        params.p * ud.powf(params.p - 1.0)
    } else {
        0.0
    };
    m[d - 1][d - 1] += (2.0 / params.h) * (1.0 - sup);
    // Cholesky without pivoting; failure = not positive definite
    for k in 0..d {
        let mut diag = m[k][k];
        for j in 0..k {
            diag -= m[k][j] * m[k][j];
        }
        if diag <= 0.0 {
            return false;
        }
        let diag = diag.sqrt();
        m[k][k] = diag;
        for i in k + 1..d {
            let mut v = m[i][k];
            for j in 0..k {
                v -= m[i][j] * m[k][j];
            }
            m[i][k] = v / diag;
        }
    }
    true
}

/// Sufficient (never necessary) condition for deterministic explosion:
/// the boundary node dominates every coordinate and sits above `m_star`,
/// after which it obeys a super-linear one-dimensional inequality.
pub fn explosion_certificate(params: &ModelParams, u: &[f64]) -> bool {
    let ud = u[params.d - 1];
    ud >= certificate_levels(params).m_star && u.iter().all(|x| x.abs() <= ud)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ClassKind {
    DomainOfAttraction,
    DomainOfExplosion,
    Undecided,
}

/// Which stopping rule produced the verdict.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum FiredCertificate {
    ConvergenceBall,
    BlowupThreshold,
    Horizon,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Classification {
    pub kind: ClassKind,
    /// Trajectory time at which the verdict fired (the explosion estimate
    /// for explosive data, the give-up horizon for undecided ones).
    pub decided_at: f64,
    pub certificate: FiredCertificate,
}

/// Run the deterministic flow and classify the initial state.
pub fn classify(params: &ModelParams, u: &State, cfg: &DetConfig) -> Result<Classification> {
    let (outcome, _) = crate::integrator::integrate_deterministic(params, u, cfg)?;
    Ok(match outcome {
        Outcome::Converged { t_enter } => Classification {
            kind: ClassKind::DomainOfAttraction,
            decided_at: t_enter,
            certificate: FiredCertificate::ConvergenceBall,
        },
        Outcome::Exploded { tau_hat } => Classification {
            kind: ClassKind::DomainOfExplosion,
            decided_at: tau_hat,
            certificate: FiredCertificate::BlowupThreshold,
        },
        Outcome::Survived { horizon } => Classification {
            kind: ClassKind::Undecided,
            decided_at: horizon,
            certificate: FiredCertificate::Horizon,
        },
    })
}

/// Critical scaling of a nonnegative ray: bisection on the classification
/// flip of `lambda -> classify(lambda u)`, bracket grown geometrically from
/// `lambda = 1`. Undecided verdicts contract the bracket toward the midpoint;
/// trajectories that cannot decide linger near the saddle, so the flip is
/// nearby.
pub fn lambda_crit(params: &ModelParams, u: &State, tol: f64, cfg: &DetConfig) -> Result<f64> {
    let v = u.coords().ok_or(Error::InfiniteState)?;
    if v.iter().any(|x| *x < 0.0) || v.iter().all(|x| *x == 0.0) {
        return Err(Error::InvalidParameter(
            "lambda_crit requires a nonnegative, nonzero ray".into(),
        ));
    }
    if !(tol > 0.0) {
        return Err(Error::InvalidParameter("tol must be positive".into()));
    }

    let classify_at = |lambda: f64| -> Result<ClassKind> {
        let scaled: Vec<f64> = v.iter().map(|x| lambda * x).collect();
        Ok(classify(params, &State::Finite(scaled), cfg)?.kind)
    };

    const MAX_DOUBLINGS: u32 = 60;
    let at_one = classify_at(1.0)?;
    let (mut lo, mut hi) = match at_one {
        ClassKind::DomainOfAttraction => {
            let mut prev = 1.0;
            let mut lambda = 2.0;
            let mut found = None;
            for _ in 0..MAX_DOUBLINGS {
                match classify_at(lambda)? {
                    ClassKind::DomainOfAttraction => {
                        prev = lambda;
                        lambda *= 2.0;
                    }
                    _ => {
                        found = Some((prev, lambda));
                        break;
                    }
                }
            }
            found.ok_or(Error::BracketNotFound {
                doublings: MAX_DOUBLINGS,
            })?
        }
        ClassKind::DomainOfExplosion => {
            let mut prev = 1.0;
            let mut lambda = 0.5;
            let mut found = None;
            for _ in 0..MAX_DOUBLINGS {
                match classify_at(lambda)? {
                    ClassKind::DomainOfExplosion => {
                        prev = lambda;
                        lambda *= 0.5;
                    }
                    _ => {
                        found = Some((lambda, prev));
                        break;
                    }
                }
            }
            found.ok_or(Error::BracketNotFound {
                doublings: MAX_DOUBLINGS,
            })?
        }
        ClassKind::Undecided => {
            // already straddling the separatrix
            let mut lo = 0.5;
            let mut lo_ok = false;
            for _ in 0..MAX_DOUBLINGS {
                if classify_at(lo)? == ClassKind::DomainOfAttraction {
                    lo_ok = true;
                    break;
                }
                lo *= 0.5;
            }
            let mut hi = 2.0;
            let mut hi_ok = false;
            for _ in 0..MAX_DOUBLINGS {
                if classify_at(hi)? == ClassKind::DomainOfExplosion {
                    hi_ok = true;
                    break;
                }
                hi *= 2.0;
            }
            if !(lo_ok && hi_ok) {
                return Err(Error::BracketNotFound {
                    doublings: MAX_DOUBLINGS,
                });
            }
            (lo, hi)
        }
    };

    let mut iterations = 0u32;
    while hi - lo > tol {
        iterations += 1;
        if iterations > 200 {
            return Err(Error::NumericalFailure {
                t: 0.0,
                detail: "lambda_crit bisection stalled".into(),
            });
        }
        let mid = 0.5 * (lo + hi);
        match classify_at(mid)? {
            ClassKind::DomainOfAttraction => lo = mid,
            ClassKind::DomainOfExplosion => hi = mid,
            ClassKind::Undecided => {
                lo = 0.5 * (lo + mid);
                hi = 0.5 * (mid + hi);
            }
        }
    }
    Ok(0.5 * (lo + hi))
}

/// One boundary ray of the auxiliary domain.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DomainRay {
    pub theta: f64,
    /// Separatrix crossing in units of the ray through the inner circle,
    /// when the bisection converged for this direction.
    pub lambda_bar: Option<f64>,
    pub lambda_star: f64,
    pub boundary_point: [f64; 2],
    pub in_partial1: bool,
}

/// Sampled auxiliary domain: star-shaped around the origin with boundary
/// radius `(1 + alpha) lambda_star c` per ray and the low-barrier cap
/// flagged by `in_partial1`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DomainG {
    pub c: f64,
    pub eta: f64,
    pub alpha: f64,
    pub rays: Vec<DomainRay>,
}

/// Summary numbers from the domain invariant checks.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct DomainChecks {
    pub min_expansion: f64,
    pub phi_min_partial1: f64,
    pub phi_min_rest: f64,
    pub partial1_explosive: usize,
    pub partial1_total: usize,
}

impl DomainG {
    fn radius_at(&self, theta: f64) -> f64 {
        let n = self.rays.len();
        let step = std::f64::consts::TAU / n as f64;
        let mut t = theta.rem_euclid(std::f64::consts::TAU);
        if !t.is_finite() {
            t = 0.0;
        }
        let j = ((t / step) as usize).min(n - 1);
        let frac = (t - j as f64 * step) / step;
        let r0 = radius_of(&self.rays[j]);
        let r1 = radius_of(&self.rays[(j + 1) % n]);
        r0 + frac * (r1 - r0)
    }

    /// Point-in-domain test against the sampled boundary (radius linearly
    /// interpolated in angle between adjacent rays).
    pub fn contains(&self, point: &[f64]) -> bool {
        let r = (point[0] * point[0] + point[1] * point[1]).sqrt();
        if r == 0.0 {
            return true;
        }
        r < self.radius_at(point[1].atan2(point[0]))
    }

    /// Index of the boundary vertex closest in angle to `point`.
    pub fn nearest_ray(&self, point: &[f64]) -> usize {
        let n = self.rays.len();
        let step = std::f64::consts::TAU / n as f64;
        let t = point[1].atan2(point[0]).rem_euclid(std::f64::consts::TAU);
        ((t / step).round() as usize) % n
    }

    /// Refine the boundary crossing on the segment `inside -> outside`.
    /// Returns the interpolation fraction and the crossing point.
    pub fn boundary_crossing(&self, inside: &[f64], outside: &[f64]) -> (f64, [f64; 2]) {
        let mut lo = 0.0;
        let mut hi = 1.0;
        for _ in 0..40 {
            let mid = 0.5 * (lo + hi);
            let pt = [
                inside[0] + mid * (outside[0] - inside[0]),
                inside[1] + mid * (outside[1] - inside[1]),
            ];
            if self.contains(&pt) {
                lo = mid;
            } else {
                hi = mid;
            }
        }
        let pt = [
            inside[0] + hi * (outside[0] - inside[0]),
            inside[1] + hi * (outside[1] - inside[1]),
        ];
        (hi, pt)
    }

    /// Verify the three structural invariants: the inner ball is strictly
    /// inside, the boundary energy minimum sits on the cap with a strict
    /// margin, and every cap vertex is explosive.
    pub fn validate(&self, params: &ModelParams, cfg: &DetConfig) -> Result<DomainChecks> {
        let min_expansion = self
            .rays
            .iter()
            .map(|r| r.lambda_star * (1.0 + self.alpha))
            .fold(f64::INFINITY, f64::min);
        if min_expansion <= 1.0 {
            return Err(Error::Construction(format!(
                "inner ball not strictly inside the domain (min expansion {min_expansion})"
            )));
        }

        let phi_of = |ray: &DomainRay| {
            params
                .energy_slice(&[ray.boundary_point[0], ray.boundary_point[1]])
                .phi
        };
        let mut phi_min_partial1 = f64::INFINITY;
        let mut phi_min_rest = f64::INFINITY;
        for ray in &self.rays {
            let phi = phi_of(ray);
            if ray.in_partial1 {
                phi_min_partial1 = phi_min_partial1.min(phi);
            } else {
                phi_min_rest = phi_min_rest.min(phi);
            }
        }
        if !(phi_min_partial1 < phi_min_rest) {
            return Err(Error::Construction(format!(
                "boundary energy minimum not on the cap: cap {phi_min_partial1}, rest {phi_min_rest}"
            )));
        }

        let cap: Vec<&DomainRay> = self.rays.iter().filter(|r| r.in_partial1).collect();
        let explosive = cap
            .par_iter()
            .map(|ray| {
                let u = State::Finite(vec![ray.boundary_point[0], ray.boundary_point[1]]);
                match classify(params, &u, cfg) {
                    Ok(c) if c.kind == ClassKind::DomainOfExplosion => 1usize,
                    _ => 0usize,
                }
            })
            .sum::<usize>();
        if explosive != cap.len() {
            return Err(Error::Construction(format!(
                "{} of {} cap vertices are not explosive",
                cap.len() - explosive,
                cap.len()
            )));
        }

        Ok(DomainChecks {
            min_expansion,
            phi_min_partial1,
            phi_min_rest,
            partial1_explosive: explosive,
            partial1_total: cap.len(),
        })
    }

    /// CSV rows `theta,lambda_bar,lambda_star,x,y,in_partial1`.
    pub fn write_csv<W: std::io::Write>(&self, w: &mut W) -> std::io::Result<()> {
        writeln!(w, "theta,lambda_bar,lambda_star,x,y,in_partial1")?;
        for r in &self.rays {
            let lb = r.lambda_bar.map_or(String::new(), |v| format!("{v}"));
            writeln!(
                w,
                "{},{},{},{},{},{}",
                r.theta, lb, r.lambda_star, r.boundary_point[0], r.boundary_point[1], r.in_partial1
            )?;
        }
        Ok(())
    }

    /// JSON header `{c, eta, alpha}`.
    pub fn header_json(&self) -> String {
        serde_json::json!({ "c": self.c, "eta": self.eta, "alpha": self.alpha }).to_string()
    }
}

fn radius_of(ray: &DomainRay) -> f64 {
    (ray.boundary_point[0] * ray.boundary_point[0] + ray.boundary_point[1] * ray.boundary_point[1])
        .sqrt()
}

/// Ray search is abandoned once the scaled point leaves this radius; the
/// cap is the contiguous arc of directions whose separatrix crossing lies
/// within it.
fn search_radius(params: &ModelParams) -> f64 {
    6.0 * (params.d as f64).sqrt()
}

/// Build the auxiliary domain for the two-node system.
///
/// Per ray from the inner circle: locate the separatrix crossing by
/// classification bisection where the search converges (the cap), fix the
/// level value `eta` from the energy at the cap rim, shrink the cap to the
/// sub-arc at or below `eta`, and cut every other ray at its first crossing
/// of the `eta` level curve. The boundary is the radial `(1 + alpha)`
/// expansion of those cuts.
pub fn build_domain_g(
    params: &ModelParams,
    alpha: f64,
    n_rays: usize,
    cfg: &DetConfig,
) -> Result<DomainG> {
    if params.d != 2 {
        return Err(Error::InvalidParameter(
            "domain construction is implemented for d = 2 only".into(),
        ));
    }
    if !(alpha > 0.0) || alpha > 1.0 {
        return Err(Error::InvalidParameter(format!(
            "alpha must lie in (0, 1], got {alpha}"
        )));
    }
    if n_rays < 64 {
        return Err(Error::InvalidParameter(format!(
            "n_rays must be at least 64, got {n_rays}"
        )));
    }

    let phi_saddle = params.energy(&params.ones(1.0))?.phi;

    // (a) largest inner radius on a geometric grid with sampled sup phi
    //     below the saddle value
    let mut c = 1.0;
    let mut found = false;
    for _ in 0..60 {
        if sampled_ball_sup(params, c) < phi_saddle {
            found = true;
            break;
        }
        c *= 0.85;
    }
    if !found {
        return Err(Error::Construction(
            "no inner radius with energy below the saddle value".into(),
        ));
    }

    // (b) separatrix crossings per ray where the search converges
    let lambda_tol = 1e-6;
    let r_search = search_radius(params);
    let crossings: Vec<Option<f64>> = (0..n_rays)
        .into_par_iter()
        .map(|i| {
            let theta = std::f64::consts::TAU * i as f64 / n_rays as f64;
            ray_separatrix_crossing(params, c, theta, lambda_tol, r_search, cfg)
        })
        .collect::<Result<Vec<_>>>()?;

    let run = longest_circular_run(&crossings).ok_or(Error::CapEmpty)?;
    let (run_start, run_len) = run;

    let theta_of = |i: usize| std::f64::consts::TAU * i as f64 / n_rays as f64;
    let phi_at_bar = |i: usize| -> f64 {
        let lambda = crossings[i].expect("cap index has a crossing");
        let th = theta_of(i);
        params
            .energy_slice(&[lambda * c * th.cos(), lambda * c * th.sin()])
            .phi
    };

    // (c) eta from the two rim rays of the cap
    let rim_a = run_start;
    let rim_b = (run_start + run_len - 1) % n_rays;
    let eta = phi_at_bar(rim_a).min(phi_at_bar(rim_b));
    if !(eta > phi_saddle) {
        return Err(Error::Construction(format!(
            "cap rim level {eta} does not exceed the saddle value {phi_saddle}"
        )));
    }

    // shrink the cap: sub-arc around the energy minimum with values <= eta
    let run_indices: Vec<usize> = (0..run_len).map(|k| (run_start + k) % n_rays).collect();
    let argmin = run_indices
        .iter()
        .copied()
        .min_by(|a, b| phi_at_bar(*a).partial_cmp(&phi_at_bar(*b)).unwrap())
        .unwrap();
    let argmin_pos = run_indices.iter().position(|i| *i == argmin).unwrap();
    let mut in_star = vec![false; n_rays];
    in_star[argmin] = true;
    for pos in (0..argmin_pos).rev() {
        if phi_at_bar(run_indices[pos]) <= eta {
            in_star[run_indices[pos]] = true;
        } else {
            break;
        }
    }
    for pos in argmin_pos + 1..run_len {
        if phi_at_bar(run_indices[pos]) <= eta {
            in_star[run_indices[pos]] = true;
        } else {
            break;
        }
    }

    // (d) lambda_star: the separatrix on the shrunk cap, the first
    //     eta-crossing elsewhere
    let rays: Vec<DomainRay> = (0..n_rays)
        .into_par_iter()
        .map(|i| -> Result<DomainRay> {
            let theta = theta_of(i);
            let lambda_star = if in_star[i] {
                crossings[i].expect("cap index has a crossing")
            } else {
                first_level_crossing(params, c, theta, eta, r_search)?
            };
            let r = (1.0 + alpha) * lambda_star * c;
            Ok(DomainRay {
                theta,
                lambda_bar: crossings[i],
                lambda_star,
                boundary_point: [r * theta.cos(), r * theta.sin()],
                in_partial1: in_star[i],
            })
        })
        .collect::<Result<Vec<_>>>()?;

    Ok(DomainG {
        c,
        eta,
        alpha,
        rays,
    })
}

fn sampled_ball_sup(params: &ModelParams, c: f64) -> f64 {
    let mut sup = f64::NEG_INFINITY;
    for jr in 1..=12 {
        let r = c * jr as f64 / 12.0;
        for ja in 0..256 {
            let th = std::f64::consts::TAU * ja as f64 / 256.0;
            let phi = params.energy_slice(&[r * th.cos(), r * th.sin()]).phi;
            sup = sup.max(phi);
        }
    }
    sup
}

/// Separatrix crossing along one ray, or `None` when the flip lies outside
/// the search radius.
fn ray_separatrix_crossing(
    params: &ModelParams,
    c: f64,
    theta: f64,
    tol: f64,
    r_search: f64,
    cfg: &DetConfig,
) -> Result<Option<f64>> {
    let dir = [theta.cos(), theta.sin()];
    let classify_at = |lambda: f64| -> Result<ClassKind> {
        let u = State::Finite(vec![lambda * c * dir[0], lambda * c * dir[1]]);
        Ok(classify(params, &u, cfg)?.kind)
    };

    let lambda_max = r_search / c;
    let mut lo = 1.0;
    match classify_at(1.0)? {
        ClassKind::DomainOfAttraction => {}
        // the inner circle must be well inside the basin
        other => {
            return Err(Error::Construction(format!(
                "inner circle point at theta = {theta} classifies as {other:?}"
            )))
        }
    }
    let mut hi = None;
    let mut lambda = 2.0;
    while lambda <= 2.0 * lambda_max {
        match classify_at(lambda.min(lambda_max))? {
            ClassKind::DomainOfAttraction => {
                lo = lambda.min(lambda_max);
                if lo >= lambda_max {
                    break;
                }
            }
            _ => {
                hi = Some(lambda.min(lambda_max));
                break;
            }
        }
        lambda *= 2.0;
    }
    let Some(mut hi) = hi else {
        return Ok(None);
    };

    let mut iterations = 0u32;
    while hi - lo > tol {
        iterations += 1;
        if iterations > 200 {
            return Err(Error::NumericalFailure {
                t: 0.0,
                detail: "ray bisection stalled".into(),
            });
        }
        let mid = 0.5 * (lo + hi);
        match classify_at(mid)? {
            ClassKind::DomainOfAttraction => lo = mid,
            ClassKind::DomainOfExplosion => hi = mid,
            ClassKind::Undecided => {
                lo = 0.5 * (lo + mid);
                hi = 0.5 * (mid + hi);
            }
        }
    }
    Ok(Some(0.5 * (lo + hi)))
}

/// First up-crossing of the level `eta` along a ray, by marching plus
/// bisection. Non-monotone profiles resolve to the first crossing at the
/// marching resolution.
fn first_level_crossing(
    params: &ModelParams,
    c: f64,
    theta: f64,
    eta: f64,
    r_search: f64,
) -> Result<f64> {
    let dir = [theta.cos(), theta.sin()];
    let phi_at = |lambda: f64| {
        params
            .energy_slice(&[lambda * c * dir[0], lambda * c * dir[1]])
            .phi
    };
    let mut lo = 1.0;
    if phi_at(lo) >= eta {
        return Err(Error::Construction(format!(
            "energy already above the level at the inner circle, theta = {theta}"
        )));
    }
    let lambda_cap = 4.0 * r_search / c;
    let mut lambda = lo;
    loop {
        let step = 0.05 * lambda.max(1.0);
        lambda += step;
        if lambda > lambda_cap {
            return Err(Error::Construction(format!(
                "no eta-level crossing within the search radius at theta = {theta}"
            )));
        }
        if phi_at(lambda) >= eta {
            break;
        }
        lo = lambda;
    }
    let mut hi = lambda;
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if phi_at(mid) >= eta {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Ok(0.5 * (lo + hi))
}

/// Longest contiguous circular run of `Some` entries: `(start, length)`.
fn longest_circular_run<T>(items: &[Option<T>]) -> Option<(usize, usize)> {
    let n = items.len();
    if items.iter().all(Option::is_some) {
        return Some((0, n));
    }
    let mut best: Option<(usize, usize)> = None;
    let mut start = None;
    for i in 0..2 * n {
        let idx = i % n;
        if items[idx].is_some() {
            if start.is_none() {
                start = Some(i);
            }
        } else if let Some(s) = start.take() {
            let len = (i - s).min(n);
            if best.is_none_or(|(_, bl)| len > bl) {
                best = Some((s % n, len));
            }
        }
    }
    best
}

/// Per-path result of the escape experiment.
#[derive(Debug, Clone, Copy)]
pub struct EscapeRun {
    pub outcome: Outcome,
    pub exit_time: Option<f64>,
    pub exit_in_partial1: Option<bool>,
    pub steps: u64,
}

/// One seeded escape path: Euler-Maruyama until the first exit from the
/// domain (censored at `t_cap`), then straight to explosion.
pub fn escape_single(
    params: &ModelParams,
    g: &DomainG,
    u0: &[f64],
    eps: f64,
    cfg: &SdeConfig,
    stream: &mut RandomStream,
) -> Result<EscapeRun> {
    cfg.validate(params)?;
    if params.d != 2 {
        return Err(Error::InvalidParameter("escape runs require d = 2".into()));
    }
    if !g.contains(u0) {
        return Err(Error::InvalidParameter(
            "escape start point lies outside the domain".into(),
        ));
    }
    let mut u = u0.to_vec();
    let mut prev = u.clone();
    let mut t = 0.0;
    let mut steps = 0u64;
    let mut b = vec![0.0; 2];

    let (exit_time, exit_in_partial1) = loop {
        let remaining = cfg.t_cap - t;
        if remaining <= 1e-12 * cfg.t_cap {
            return Ok(EscapeRun {
                outcome: Outcome::Survived { horizon: cfg.t_cap },
                exit_time: None,
                exit_in_partial1: None,
                steps,
            });
        }
        let dt = cfg.dt.min(remaining);
        prev.copy_from_slice(&u);
        params.drift_into(&prev, &mut b);
        let noise_scale = eps * dt.sqrt();
        for i in 0..2 {
            u[i] += b[i] * dt + noise_scale * stream.normal();
        }
        t += dt;
        steps += 1;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                t,
                detail: "non-finite state inside the domain".into(),
            });
        }
        if !g.contains(&u) {
            let (frac, crossing) = g.boundary_crossing(&prev, &u);
            let te = t - dt + frac * dt;
            let flag = g.rays[g.nearest_ray(&crossing)].in_partial1;
            break (te, flag);
        }
    };

    let tail_cfg = SdeConfig {
        t_cap: cfg.t_cap - t,
        ..*cfg
    };
    let (out, rec) = integrate_sde(params, &State::Finite(u), eps, &tail_cfg, stream)?;
    steps += rec.steps;
    let outcome = match out {
        Outcome::Exploded { tau_hat } => Outcome::Exploded {
            tau_hat: t + tau_hat,
        },
        Outcome::Converged { t_enter } => Outcome::Converged {
            t_enter: t + t_enter,
        },
        Outcome::Survived { .. } => Outcome::Survived { horizon: cfg.t_cap },
    };
    Ok(EscapeRun {
        outcome,
        exit_time: Some(exit_time),
        exit_in_partial1: Some(exit_in_partial1),
        steps,
    })
}

/// Seeded ensemble of escape paths from the origin, dispatched through the
/// Monte Carlo worker pool.
pub fn escape_experiment(
    params: &ModelParams,
    g: &DomainG,
    eps: f64,
    n: u32,
    cfg: &SdeConfig,
    seed: u64,
) -> Result<SampleTable> {
    let spec = SweepSpec {
        params: *params,
        eps_list: vec![eps],
        n_replicas: n,
        u0: vec![0.0; params.d],
        seed,
        sde: *cfg,
        experiment: ExperimentKind::ExitFromG(g.clone()),
    };
    montecarlo::run_sweep(&spec)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::model::DriftMode;
    use approx::assert_relative_eq;

    fn params(d: usize, h: f64, p: f64) -> ModelParams {
        ModelParams::new(d, h, p, DriftMode::PaperDrift).unwrap()
    }

    #[test]
    fn certificate_level_values() {
        let lv = certificate_levels(&params(2, 1.0, 2.0));
        assert_relative_eq!(lv.m_star, 12.0, max_relative = 1e-14);
        let lv = certificate_levels(&params(2, 2.0, 2.0));
        assert_relative_eq!(lv.m_star, 8.0, max_relative = 1e-14);
        let lv = certificate_levels(&params(2, 1.0, 3.0));
        assert_relative_eq!(lv.m_star, 2.0 * 6.0f64.sqrt(), max_relative = 1e-14);
    }

    #[test]
    fn convergence_ball_check_passes_across_grid() {
        for d in [2, 5, 10] {
            for h in [0.5, 1.0, 2.0] {
                for p in [2.0, 3.0] {
                    let m = params(d, h, p);
                    let lv = certificate_levels(&m);
                    assert!(convergence_ball_verified(&m, &lv), "d={d} h={h} p={p}");
                }
            }
        }
    }

    #[test]
    fn certificate_truth_table() {
        let m = params(2, 2.0, 2.0);
        let m_star = certificate_levels(&m).m_star;
        assert!(explosion_certificate(&m, &[m_star, m_star]));
        assert!(!explosion_certificate(&m, &[0.0, 0.0]));
        // boundary node must dominate
        assert!(!explosion_certificate(&m, &[2.0 * m_star, m_star]));
        assert!(!explosion_certificate(&m, &[-2.0 * m_star, m_star]));
    }

    #[test]
    fn certified_states_explode() {
        let m = params(3, 1.0, 2.0);
        let m_star = certificate_levels(&m).m_star;
        let cfg = DetConfig::default();
        let mut stream = RandomStream::from_seed(41);
        let mut tested = 0;
        while tested < 100 {
            let ud = m_star * (1.0 + stream.uniform());
            let u = vec![
                ud * (2.0 * stream.uniform() - 1.0),
                ud * (2.0 * stream.uniform() - 1.0),
                ud,
            ];
            if !explosion_certificate(&m, &u) {
                continue;
            }
            tested += 1;
            let c = classify(&m, &State::Finite(u), &cfg).unwrap();
            assert_eq!(c.kind, ClassKind::DomainOfExplosion);
        }
    }

    #[test]
    fn classify_reference_points() {
        let m = params(2, 2.0, 2.0);
        let cfg = DetConfig::default();
        let at = |c: f64| classify(&m, &m.ones(c), &cfg).unwrap().kind;
        assert_eq!(at(0.0), ClassKind::DomainOfAttraction);
        assert_eq!(at(0.5), ClassKind::DomainOfAttraction);
        assert_eq!(at(1.5), ClassKind::DomainOfExplosion);
    }

    #[test]
    fn monotone_attraction_under_componentwise_order() {
        let m = params(2, 2.0, 2.0);
        let cfg = DetConfig::default();
        let mut stream = RandomStream::from_seed(4242);
        let mut checked = 0;
        while checked < 50 {
            let u: Vec<f64> = (0..2).map(|_| 2.0 * stream.uniform()).collect();
            let cu = classify(&m, &State::Finite(u.clone()), &cfg).unwrap().kind;
            if cu != ClassKind::DomainOfAttraction {
                continue;
            }
            let v: Vec<f64> = u.iter().map(|x| x * stream.uniform()).collect();
            let cv = classify(&m, &State::Finite(v), &cfg).unwrap().kind;
            assert_eq!(cv, ClassKind::DomainOfAttraction);
            checked += 1;
        }
    }

    #[test]
    fn lambda_crit_at_the_saddle_ray() {
        let m = params(2, 2.0, 2.0);
        let cfg = DetConfig::default();
        let lc = lambda_crit(&m, &m.ones(1.0), 1e-6, &cfg).unwrap();
        assert!((lc - 1.0).abs() <= 1e-6, "lambda_c = {lc}");
    }

    #[test]
    fn lambda_crit_scales_inversely() {
        let m = params(2, 1.0, 2.0);
        let cfg = DetConfig::default();
        let tol = 1e-6;
        let base = lambda_crit(&m, &m.ones(1.0), tol, &cfg).unwrap();
        for c in [0.5, 2.0] {
            let scaled = lambda_crit(&m, &m.ones(c), tol, &cfg).unwrap();
            assert!(
                (scaled - base / c).abs() <= 2.0 * tol,
                "c={c}: {scaled} vs {}",
                base / c
            );
        }
    }

    #[test]
    fn lambda_crit_flip_confirmed_by_fine_sweep() {
        let m = params(2, 1.0, 2.0);
        let cfg = DetConfig::default();
        let tol = 1e-4;
        let mut stream = RandomStream::from_seed(300);
        for _ in 0..3 {
            let u: Vec<f64> = (0..2).map(|_| 0.2 + stream.uniform()).collect();
            let u = State::Finite(u);
            let lc = lambda_crit(&m, &u, tol, &cfg).unwrap();
            // 10x finer sweep around the reported flip
            let v = u.coords().unwrap();
            let verdict = |lambda: f64| {
                let scaled: Vec<f64> = v.iter().map(|x| lambda * x).collect();
                classify(&m, &State::Finite(scaled), &cfg).unwrap().kind
            };
            assert_eq!(verdict(lc - 10.0 * tol), ClassKind::DomainOfAttraction);
            assert_eq!(verdict(lc + 10.0 * tol), ClassKind::DomainOfExplosion);
        }
    }

    #[test]
    fn lambda_crit_rejects_bad_rays() {
        let m = params(2, 1.0, 2.0);
        let cfg = DetConfig::default();
        assert!(lambda_crit(&m, &m.ones(0.0), 1e-6, &cfg).is_err());
        assert!(lambda_crit(&m, &State::Finite(vec![1.0, -0.5]), 1e-6, &cfg).is_err());
    }

    fn quick_domain() -> (ModelParams, DomainG, DetConfig) {
        let m = params(2, 2.0, 2.0);
        let cfg = DetConfig::default();
        let g = build_domain_g(&m, 0.05, 96, &cfg).unwrap();
        (m, g, cfg)
    }

    #[test]
    fn domain_invariants_hold() {
        let (m, g, cfg) = quick_domain();
        let checks = g.validate(&m, &cfg).unwrap();
        assert!(checks.min_expansion > 1.0);
        assert!(checks.phi_min_partial1 < checks.phi_min_rest);
        assert_eq!(checks.partial1_explosive, checks.partial1_total);
        assert!(checks.partial1_total > 0);
    }

    #[test]
    fn domain_contains_origin_and_saddle() {
        let (_, g, _) = quick_domain();
        assert!(g.contains(&[0.0, 0.0]));
        assert!(g.contains(&[1.0, 1.0]));
        assert!(!g.contains(&[100.0, 100.0]));
    }

    #[test]
    fn inner_ball_flows_stay_inside() {
        let (m, g, cfg) = quick_domain();
        let mut stream = RandomStream::from_seed(88);
        for _ in 0..50 {
            let th = std::f64::consts::TAU * stream.uniform();
            let r = g.c * stream.uniform().sqrt();
            let u0 = vec![r * th.cos(), r * th.sin()];
            let (out, rec) =
                crate::integrator::integrate_deterministic(&m, &State::Finite(u0), &cfg).unwrap();
            assert!(matches!(out, Outcome::Converged { .. }));
            for s in &rec.states {
                assert!(g.contains(s), "left the domain at {s:?}");
            }
        }
    }

    #[test]
    fn domain_csv_and_header() {
        let (_, g, _) = quick_domain();
        let mut buf = Vec::new();
        g.write_csv(&mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("theta,lambda_bar,lambda_star,x,y,in_partial1\n"));
        assert_eq!(text.lines().count(), 97);
        let header: serde_json::Value = serde_json::from_str(&g.header_json()).unwrap();
        assert!(header["c"].as_f64().unwrap() > 0.0);
        assert!(header["eta"].as_f64().unwrap() > 0.0);
        assert_relative_eq!(header["alpha"].as_f64().unwrap(), 0.05);
    }

    #[test]
    fn noisy_escape_is_fast_at_large_eps() {
        let (m, g, _) = quick_domain();
        let cfg = SdeConfig {
            dt: 1e-3,
            t_cap: 1e4,
            record_stride: u32::MAX,
            ..SdeConfig::for_params(&m)
        };
        let mut exits = Vec::new();
        for replica in 0..40 {
            let mut stream = RandomStream::for_replica(7, 0, replica);
            let run = escape_single(&m, &g, &[0.0, 0.0], 1.0, &cfg, &mut stream).unwrap();
            if let Some(te) = run.exit_time {
                exits.push(te);
            }
        }
        assert_eq!(exits.len(), 40, "every path should exit at eps = 1");
        exits.sort_by(f64::total_cmp);
        assert!(
            exits[exits.len() / 2] < 10.0,
            "median {}",
            exits[exits.len() / 2]
        );
    }

    #[test]
    fn circular_run_finder() {
        let items: Vec<Option<()>> = vec![Some(()), None, Some(()), Some(()), Some(()), None];
        assert_eq!(longest_circular_run(&items), Some((2, 3)));
        // wrap-around run
        let items: Vec<Option<()>> = vec![Some(()), Some(()), None, None, Some(())];
        assert_eq!(longest_circular_run(&items), Some((4, 3)));
        let items: Vec<Option<()>> = vec![None, None];
        assert_eq!(longest_circular_run(&items), None);
    }
}
