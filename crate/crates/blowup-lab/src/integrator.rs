//! Time integration with explosion bookkeeping.
//!
//! Deterministic runs use an adaptive Dormand-Prince 5(4) pair with PI step
//! control, a step ceiling of `h^2/8` against the stiff coupling, and a
//! closed-form blow-up extrapolation once the boundary node passes the
//! `u_big` threshold. Explosion times are therefore reported as
//! threshold time + extrapolated remainder, never as the time of a float
//! overflow.
//!
//! Stochastic runs use Euler-Maruyama with a fixed base step. Once the
//! boundary node clears the freeze level (at or above the explosion
//! certificate), the noise is switched off and the deterministic integrator
//! finishes the trajectory; past that level the drift dominates any noise
//! the diffusion can produce on the remaining (vanishing) time scale.

use std::collections::BTreeMap;
use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::model::{DriftMode, ModelParams, State};
use crate::phase;
use crate::rng::RandomStream;

/// Configuration of the adaptive deterministic solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct DetConfig {
    pub rel_tol: f64,
    pub abs_tol: f64,
    pub dt_init: f64,
    pub dt_max: f64,
    /// Asymptotic-switch threshold: once `u_d` reaches this the run stops and
    /// the blow-up time is extrapolated.
    pub u_big: f64,
    /// Give-up horizon for the undecided verdict.
    pub t_max: f64,
}

impl Default for DetConfig {
    fn default() -> Self {
        Self {
            rel_tol: 1e-8,
            abs_tol: 1e-11,
            dt_init: 1e-3,
            dt_max: 1.0,
            u_big: 1e3,
            t_max: 1e3,
        }
    }
}

impl DetConfig {
    pub fn validate(&self) -> Result<()> {
        let all_pos = self.rel_tol > 0.0
            && self.abs_tol > 0.0
            && self.dt_init > 0.0
            && self.dt_max > 0.0
            && self.u_big > 0.0
            && self.t_max > 0.0;
        if !all_pos {
            return Err(Error::InvalidParameter(
                "DetConfig fields must be positive".into(),
            ));
        }
        if self.u_big < 1e3 {
            return Err(Error::InvalidParameter(format!(
                "u_big must be at least 1e3, got {}",
                self.u_big
            )));
        }
        if self.rel_tol > 1e-3 || self.abs_tol > 1e-3 {
            return Err(Error::InvalidParameter("tolerances must be <= 1e-3".into()));
        }
        Ok(())
    }
}

/// Configuration of the Euler-Maruyama solver.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SdeConfig {
    /// Base step; halved while `u_d > u_big / 10`.
    pub dt: f64,
    /// Noise-freeze threshold; must be at least the explosion-certificate
    /// level so the frozen continuation provably explodes.
    pub m_freeze: f64,
    pub t_cap: f64,
    /// Record every k-th step (1 = every step).
    pub record_stride: u32,
    /// Settings for the deterministic continuation after the freeze.
    pub det: DetConfig,
}

impl SdeConfig {
    /// Defaults tied to one model instance: freeze at twice the certificate level.
    pub fn for_params(params: &ModelParams) -> Self {
        Self {
            dt: 1e-3,
            m_freeze: 2.0 * phase::certificate_levels(params).m_star,
            t_cap: 1e6,
            record_stride: 1,
            det: DetConfig::default(),
        }
    }

    pub fn validate(&self, params: &ModelParams) -> Result<()> {
        if !(self.dt > 0.0) || !(self.t_cap > 0.0) || self.record_stride == 0 {
            return Err(Error::InvalidParameter(
                "SdeConfig requires dt > 0, t_cap > 0, record_stride >= 1".into(),
            ));
        }
        let m_star = phase::certificate_levels(params).m_star;
        if self.m_freeze < m_star {
            return Err(Error::InvalidParameter(format!(
                "m_freeze = {} is below the explosion-certificate level {m_star}",
                self.m_freeze
            )));
        }
        self.det.validate()
    }
}

/// The fate of one trajectory.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Outcome {
    /// The trajectory left every bounded set; `tau_hat` is the estimated
    /// explosion time (threshold time plus extrapolated remainder).
    Exploded { tau_hat: f64 },
    /// The trajectory entered the convergence ball at `t_enter`.
    Converged { t_enter: f64 },
    /// Still undecided at the configured horizon.
    Survived { horizon: f64 },
}

impl Outcome {
    pub fn tau_hat(&self) -> Option<f64> {
        match self {
            Outcome::Exploded { tau_hat } => Some(*tau_hat),
            _ => None,
        }
    }

    pub fn is_exploded(&self) -> bool {
        matches!(self, Outcome::Exploded { .. })
    }
}

/// Named events recorded along a path.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum RegionTag {
    /// First time `|u_d|` reached the integer level, the escape bookkeeping
    /// of the localization family.
    Pi(u32),
    /// Noise frozen, deterministic continuation started.
    NoiseFreeze,
}

/// A decimated trajectory with stopping-time annotations.
#[derive(Debug, Clone, Default)]
pub struct PathRecord {
    pub times: Vec<f64>,
    pub states: Vec<Vec<f64>>,
    /// First time the Euclidean norm reached each integer level.
    pub tau_n_crossings: BTreeMap<u32, f64>,
    pub region_hits: Vec<(RegionTag, f64)>,
    /// Accepted integration steps.
    pub steps: u64,
}

impl PathRecord {
    /// Append a continuation record whose clock started at `t_offset`.
    fn merge_offset(&mut self, other: PathRecord, t_offset: f64) {
        // skip the duplicated initial sample of the continuation
        for (t, s) in other.times.into_iter().zip(other.states).skip(1) {
            self.times.push(t + t_offset);
            self.states.push(s);
        }
        for (n, t) in other.tau_n_crossings {
            self.tau_n_crossings.entry(n).or_insert(t + t_offset);
        }
        for (tag, t) in other.region_hits {
            self.region_hits.push((tag, t + t_offset));
        }
        self.steps += other.steps;
    }

    /// CSV serialization: `t,u_1..u_d` rows followed by a `#`-prefixed
    /// metadata block with the outcome.
    pub fn write_csv<W: Write>(&self, outcome: &Outcome, w: &mut W) -> std::io::Result<()> {
        let d = self.states.first().map_or(0, Vec::len);
        write!(w, "t")?;
        for i in 1..=d {
            write!(w, ",u_{i}")?;
        }
        writeln!(w)?;
        for (t, s) in self.times.iter().zip(&self.states) {
            write!(w, "{t}")?;
            for x in s {
                write!(w, ",{x}")?;
            }
            writeln!(w)?;
        }
        match outcome {
            Outcome::Exploded { tau_hat } => {
                writeln!(w, "# outcome: exploded")?;
                writeln!(w, "# tau_hat: {tau_hat}")?;
            }
            Outcome::Converged { t_enter } => {
                writeln!(w, "# outcome: converged")?;
                writeln!(w, "# t_enter: {t_enter}")?;
            }
            Outcome::Survived { horizon } => {
                writeln!(w, "# outcome: survived")?;
                writeln!(w, "# horizon: {horizon}")?;
            }
        }
        writeln!(w, "# steps: {}", self.steps)
    }
}

fn norm(u: &[f64]) -> f64 {
    u.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Stride- and level-aware trajectory recorder.
struct Recorder {
    rec: PathRecord,
    stride: u32,
    since_last: u32,
    next_tau_level: u32,
    next_pi_level: u32,
}

impl Recorder {
    fn new(stride: u32, t0: f64, u0: &[f64]) -> Self {
        let mut rec = PathRecord::default();
        rec.times.push(t0);
        rec.states.push(u0.to_vec());
        let d = u0.len();
        Self {
            rec,
            stride,
            since_last: 0,
            next_tau_level: norm(u0).floor() as u32 + 1,
            next_pi_level: u0[d - 1].abs().floor() as u32 + 1,
        }
    }

    fn on_accepted_step(&mut self, t: f64, u: &[f64]) {
        self.rec.steps += 1;
        let r = norm(u);
        while f64::from(self.next_tau_level) <= r {
            self.rec.tau_n_crossings.insert(self.next_tau_level, t);
            self.next_tau_level += 1;
        }
        let ud = u[u.len() - 1].abs();
        while f64::from(self.next_pi_level) <= ud {
            self.rec
                .region_hits
                .push((RegionTag::Pi(self.next_pi_level), t));
            self.next_pi_level += 1;
        }
        self.since_last = self.since_last.saturating_add(1);
        if self.since_last >= self.stride {
            self.since_last = 0;
            self.rec.times.push(t);
            self.rec.states.push(u.to_vec());
        }
    }

    fn force_record(&mut self, t: f64, u: &[f64]) {
        if self.rec.times.last().copied() != Some(t) {
            self.rec.times.push(t);
            self.rec.states.push(u.to_vec());
            self.since_last = 0;
        }
    }

    fn hit(&mut self, tag: RegionTag, t: f64) {
        self.rec.region_hits.push((tag, t));
    }

    fn finish(self) -> PathRecord {
        self.rec
    }
}

// Dormand-Prince 5(4) coefficients.
const A: [[f64; 6]; 6] = [
    [1.0 / 5.0, 0.0, 0.0, 0.0, 0.0, 0.0],
    [3.0 / 40.0, 9.0 / 40.0, 0.0, 0.0, 0.0, 0.0],
    [44.0 / 45.0, -56.0 / 15.0, 32.0 / 9.0, 0.0, 0.0, 0.0],
    [
        19372.0 / 6561.0,
        -25360.0 / 2187.0,
        64448.0 / 6561.0,
        -212.0 / 729.0,
        0.0,
        0.0,
    ],
    [
        9017.0 / 3168.0,
        -355.0 / 33.0,
        46732.0 / 5247.0,
        49.0 / 176.0,
        -5103.0 / 18656.0,
        0.0,
    ],
    [
        35.0 / 384.0,
        0.0,
        500.0 / 1113.0,
        125.0 / 192.0,
        -2187.0 / 6784.0,
        11.0 / 84.0,
    ],
];
const B5: [f64; 7] = [
    35.0 / 384.0,
    0.0,
    500.0 / 1113.0,
    125.0 / 192.0,
    -2187.0 / 6784.0,
    11.0 / 84.0,
    0.0,
];
const B4: [f64; 7] = [
    5179.0 / 57600.0,
    0.0,
    7571.0 / 16695.0,
    393.0 / 640.0,
    -92097.0 / 339200.0,
    187.0 / 2100.0,
    1.0 / 40.0,
];

struct DopriWorkspace {
    k: Vec<Vec<f64>>,
    ytmp: Vec<f64>,
    ynext: Vec<f64>,
}

impl DopriWorkspace {
    fn new(d: usize) -> Self {
        Self {
            k: vec![vec![0.0; d]; 7],
            ytmp: vec![0.0; d],
            ynext: vec![0.0; d],
        }
    }

    /// One embedded trial step. Returns the scaled error norm; the candidate
    /// state is left in `self.ynext`.
    #[allow(clippy::needless_range_loop)]
    fn step(&mut self, params: &ModelParams, y: &[f64], dt: f64, cfg: &DetConfig) -> f64 {
        let d = y.len();
        params.drift_into(y, &mut self.k[0]);
        for stage in 0..6 {
            for i in 0..d {
                let mut acc = 0.0;
                for (j, kj) in self.k.iter().enumerate().take(stage + 1) {
                    acc += A[stage][j] * kj[i];
                }
                self.ytmp[i] = y[i] + dt * acc;
            }
            let (head, tail) = self.k.split_at_mut(stage + 1);
            let _ = head;
            params.drift_into(&self.ytmp, &mut tail[0]);
        }
        let mut err_sq = 0.0;
        for i in 0..d {
            let mut y5 = 0.0;
            let mut e = 0.0;
            for j in 0..7 {
                y5 += B5[j] * self.k[j][i];
                e += (B5[j] - B4[j]) * self.k[j][i];
            }
            let y5 = y[i] + dt * y5;
            self.ynext[i] = y5;
            let scale = cfg.abs_tol + cfg.rel_tol * y[i].abs().max(y5.abs());
            let r = dt * e / scale;
            err_sq += r * r;
        }
        (err_sq / d as f64).sqrt()
    }
}

/// Closed-form remainder of the blow-up time from the dominant-balance
/// equation `u' = (2/h) u^p` started at `u_d`:
/// `tau_hat = t + h u_d^{1-p} / (2 (p-1))`.
pub fn blowup_extrapolate(params: &ModelParams, u_d: f64, t: f64) -> Result<f64> {
    let m_star = phase::certificate_levels(params).m_star;
    if u_d < m_star {
        return Err(Error::CertificateNotMet {
            required: m_star,
            got: u_d,
        });
    }
    Ok(t + params.h * u_d.powf(1.0 - params.p) / (2.0 * (params.p - 1.0)))
}

/// Adaptive deterministic integration with explosion/convergence verdicts.
pub fn integrate_deterministic(
    params: &ModelParams,
    u0: &State,
    cfg: &DetConfig,
) -> Result<(Outcome, PathRecord)> {
    cfg.validate()?;
    let v = u0.coords().ok_or(Error::InfiniteState)?;
    if v.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: v.len(),
        });
    }
    let r_conv = phase::certificate_levels(params).r_conv;
    let mut u = v.to_vec();
    let mut t = 0.0;
    let mut recorder = Recorder::new(1, t, &u);

    if norm(&u) <= r_conv {
        return Ok((Outcome::Converged { t_enter: 0.0 }, recorder.finish()));
    }

    let dt_ceiling = cfg.dt_max.min(params.h * params.h / 8.0);
    let mut dt = cfg.dt_init.min(dt_ceiling);
    let mut err_prev: f64 = 1.0;
    let mut ws = DopriWorkspace::new(params.d);

    loop {
        let remaining = cfg.t_max - t;
        if remaining <= 1e-12 * cfg.t_max {
            return Ok((Outcome::Survived { horizon: cfg.t_max }, recorder.finish()));
        }
        dt = dt.min(remaining).min(dt_ceiling);
        let err = ws.step(params, &u, dt, cfg);
        if err.is_finite() && err <= 1.0 {
            t += dt;
            u.copy_from_slice(&ws.ynext);
            if u.iter().any(|x| !x.is_finite()) {
                return Err(Error::NumericalFailure {
                    t,
                    detail: "non-finite state below the explosion threshold".into(),
                });
            }
            recorder.on_accepted_step(t, &u);
            if u[params.d - 1] >= cfg.u_big {
                let tau_hat = blowup_extrapolate(params, u[params.d - 1], t)?;
                return Ok((Outcome::Exploded { tau_hat }, recorder.finish()));
            }
            if norm(&u) <= r_conv {
                return Ok((Outcome::Converged { t_enter: t }, recorder.finish()));
            }
            let e = err.max(1e-10);
            let fac = 0.9 * e.powf(-0.14) * err_prev.powf(0.08);
            dt *= fac.clamp(0.2, 5.0);
            err_prev = e;
        } else {
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).clamp(0.1, 0.9)
            } else {
                0.1
            };
            dt *= fac;
            if dt < 1e-13 * t.max(1.0) {
                return Err(Error::NumericalFailure {
                    t,
                    detail: format!("step size underflow (dt = {dt})"),
                });
            }
        }
    }
}

/// Euler-Maruyama for the perturbed system. Noise increments are
/// `eps * sqrt(dt) * N(0, I)`. With `eps = 0` the run delegates to the
/// deterministic integrator so the zero-noise outcome is identical by
/// construction.
pub fn integrate_sde(
    params: &ModelParams,
    u0: &State,
    eps: f64,
    cfg: &SdeConfig,
    stream: &mut RandomStream,
) -> Result<(Outcome, PathRecord)> {
    cfg.validate(params)?;
    if eps < 0.0 || !eps.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "eps must be >= 0, got {eps}"
        )));
    }
    if eps == 0.0 {
        let det_cfg = DetConfig {
            t_max: cfg.t_cap,
            ..cfg.det
        };
        return integrate_deterministic(params, u0, &det_cfg);
    }
    let v = u0.coords().ok_or(Error::InfiniteState)?;
    if v.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: v.len(),
        });
    }
    let d = params.d;
    let mut u = v.to_vec();
    let mut t = 0.0;
    let mut recorder = Recorder::new(cfg.record_stride, t, &u);
    let mut b = vec![0.0; d];

    loop {
        let remaining = cfg.t_cap - t;
        if remaining <= 1e-12 * cfg.t_cap {
            recorder.force_record(t, &u);
            return Ok((Outcome::Survived { horizon: cfg.t_cap }, recorder.finish()));
        }

        if u[d - 1] >= cfg.m_freeze && phase::explosion_certificate(params, &u) {
            recorder.hit(RegionTag::NoiseFreeze, t);
            recorder.force_record(t, &u);
            let det_cfg = DetConfig {
                t_max: remaining,
                ..cfg.det
            };
            let (out, det_rec) =
                integrate_deterministic(params, &State::Finite(u.clone()), &det_cfg)?;
            let mut rec = recorder.finish();
            rec.merge_offset(det_rec, t);
            let shifted = match out {
                Outcome::Exploded { tau_hat } => Outcome::Exploded {
                    tau_hat: t + tau_hat,
                },
                Outcome::Converged { t_enter } => Outcome::Converged {
                    t_enter: t + t_enter,
                },
                Outcome::Survived { .. } => Outcome::Survived { horizon: cfg.t_cap },
            };
            return Ok((shifted, rec));
        }

        let mut dt = if u[d - 1] > cfg.det.u_big / 10.0 {
            cfg.dt * 0.5
        } else {
            cfg.dt
        };
        dt = dt.min(remaining);
        params.drift_into(&u, &mut b);
        let noise_scale = eps * dt.sqrt();
        for i in 0..d {
            u[i] += b[i] * dt + noise_scale * stream.normal();
        }
        t += dt;
        if u.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                t,
                detail: "non-finite state below the freeze threshold".into(),
            });
        }
        recorder.on_accepted_step(t, &u);
    }
}

/// Comparison process: the drift with the superlinear reaction deleted,
/// `dY = -(AY + (2/h) Y_d e_d) dt + eps dW`. Linear, never explodes.
#[allow(clippy::needless_range_loop)]
pub fn ou_drift_into(params: &ModelParams, y: &[f64], out: &mut [f64]) {
    let d = params.d;
    let h = params.h;
    let c = 2.0 / (h * h);
    out[0] = c * (-y[0] + y[1]);
    for i in 1..d - 1 {
        out[i] = (y[i + 1] - 2.0 * y[i] + y[i - 1]) / (h * h);
    }
    out[d - 1] = c * (-y[d - 1] + y[d - 2]) - (2.0 / h) * y[d - 1];
    if params.mode == DriftMode::GradientExact {
        for v in out.iter_mut().take(d - 1).skip(1) {
            *v *= 2.0;
        }
    }
}

/// Euler-Maruyama for the comparison process, sharing the step layout of
/// [`integrate_sde`] so both can be driven by clones of one stream.
pub fn integrate_ou(
    params: &ModelParams,
    y0: &State,
    eps: f64,
    cfg: &SdeConfig,
    stream: &mut RandomStream,
) -> Result<PathRecord> {
    cfg.validate(params)?;
    let v = y0.coords().ok_or(Error::InfiniteState)?;
    if v.len() != params.d {
        return Err(Error::DimensionMismatch {
            expected: params.d,
            got: v.len(),
        });
    }
    let d = params.d;
    let mut y = v.to_vec();
    let mut t = 0.0;
    let mut recorder = Recorder::new(cfg.record_stride, t, &y);
    let mut b = vec![0.0; d];

    loop {
        let remaining = cfg.t_cap - t;
        if remaining <= 1e-12 * cfg.t_cap {
            recorder.force_record(t, &y);
            return Ok(recorder.finish());
        }
        let dt = cfg.dt.min(remaining);
        ou_drift_into(params, &y, &mut b);
        let noise_scale = eps * dt.sqrt();
        for i in 0..d {
            y[i] += b[i] * dt + noise_scale * stream.normal();
        }
        t += dt;
        if y.iter().any(|x| !x.is_finite()) {
            return Err(Error::NumericalFailure {
                t,
                detail: "non-finite comparison state".into(),
            });
        }
        recorder.on_accepted_step(t, &y);
    }
}

/// First recorded time at which `region` holds, refined by bisection on the
/// linear interpolant between the bracketing recorded states.
pub fn hitting_time(record: &PathRecord, region: impl Fn(&[f64]) -> bool) -> Option<f64> {
    let idx = record.states.iter().position(|s| region(s))?;
    if idx == 0 {
        return Some(record.times[0]);
    }
    let (t0, t1) = (record.times[idx - 1], record.times[idx]);
    let (s0, s1) = (&record.states[idx - 1], &record.states[idx]);
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut mid_state = vec![0.0; s0.len()];
    for _ in 0..60 {
        let mid = 0.5 * (lo + hi);
        for i in 0..s0.len() {
            mid_state[i] = s0[i] + mid * (s1[i] - s0[i]);
        }
        if region(&mid_state) {
            hi = mid;
        } else {
            lo = mid;
        }
    }
    Some(t0 + hi * (t1 - t0))
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn params(d: usize, h: f64, p: f64, mode: DriftMode) -> ModelParams {
        ModelParams::new(d, h, p, mode).unwrap()
    }

    fn desk() -> ModelParams {
        params(2, 2.0, 2.0, DriftMode::GradientExact)
    }

    #[test]
    fn extrapolation_closed_form() {
        let m = params(2, 2.0, 2.0, DriftMode::PaperDrift);
        assert_relative_eq!(
            blowup_extrapolate(&m, 1e6, 0.0).unwrap(),
            1e-6,
            max_relative = 1e-12
        );
        let m = params(2, 1.0, 2.0, DriftMode::PaperDrift);
        assert_relative_eq!(
            blowup_extrapolate(&m, 1e3, 0.0).unwrap(),
            5e-4,
            max_relative = 1e-12
        );
        assert!(blowup_extrapolate(&m, 1e9, 0.0).unwrap() < 1e-8);
        assert!(matches!(
            blowup_extrapolate(&m, 1.0, 0.0),
            Err(Error::CertificateNotMet { .. })
        ));
    }

    #[test]
    fn deterministic_outcomes() {
        let m = desk();
        let cfg = DetConfig::default();
        let (out, _) = integrate_deterministic(&m, &m.ones(0.0), &cfg).unwrap();
        assert_eq!(out, Outcome::Converged { t_enter: 0.0 });

        let (out, _) = integrate_deterministic(&m, &m.ones(0.5), &cfg).unwrap();
        assert!(matches!(out, Outcome::Converged { .. }));

        let (out, _) = integrate_deterministic(&m, &m.ones(1.5), &cfg).unwrap();
        assert!(out.is_exploded(), "got {out:?}");
    }

    #[test]
    fn blowup_time_stable_under_tolerance_halving() {
        let m = desk();
        let cfg = DetConfig::default();
        let (out1, _) = integrate_deterministic(&m, &m.ones(1.5), &cfg).unwrap();
        let halved = DetConfig {
            rel_tol: cfg.rel_tol / 2.0,
            abs_tol: cfg.abs_tol / 2.0,
            ..cfg
        };
        let (out2, _) = integrate_deterministic(&m, &m.ones(1.5), &halved).unwrap();
        let (t1, t2) = (out1.tau_hat().unwrap(), out2.tau_hat().unwrap());
        assert!((t1 - t2).abs() / t1 < 1e-4, "{t1} vs {t2}");
    }

    #[test]
    fn energy_decays_along_trajectories() {
        for mode in [DriftMode::PaperDrift, DriftMode::GradientExact] {
            let m = params(3, 1.0, 2.0, mode);
            let cfg = DetConfig {
                rel_tol: 1e-9,
                abs_tol: 1e-12,
                ..DetConfig::default()
            };
            let u0 = State::Finite(vec![0.9, -0.4, 0.7]);
            let (_, rec) = integrate_deterministic(&m, &u0, &cfg).unwrap();
            let mut prev = f64::INFINITY;
            for s in &rec.states {
                let phi = m.energy_slice(s).phi;
                assert!(
                    phi <= prev + 1e-10 * prev.abs().max(1.0),
                    "phi rose from {prev} to {phi}"
                );
                prev = phi;
            }
        }
    }

    #[test]
    fn tau_crossings_monotone() {
        let m = desk();
        let (_, rec) = integrate_deterministic(&m, &m.ones(1.5), &DetConfig::default()).unwrap();
        let mut prev = -1.0;
        for t in rec.tau_n_crossings.values() {
            assert!(*t >= prev);
            prev = *t;
        }
        assert!(!rec.tau_n_crossings.is_empty());
    }

    #[test]
    fn zero_noise_matches_deterministic_exactly() {
        let m = desk();
        let sde = SdeConfig {
            t_cap: DetConfig::default().t_max,
            ..SdeConfig::for_params(&m)
        };
        let mut stream = RandomStream::from_seed(0);
        let (out_sde, _) = integrate_sde(&m, &m.ones(1.5), 0.0, &sde, &mut stream).unwrap();
        let (out_det, _) =
            integrate_deterministic(&m, &m.ones(1.5), &DetConfig::default()).unwrap();
        assert_eq!(out_sde, out_det);
    }

    #[test]
    fn noisy_paths_from_origin_explode() {
        let m = params(2, 1.0, 2.0, DriftMode::PaperDrift);
        let cfg = SdeConfig {
            dt: 2e-3,
            record_stride: u32::MAX,
            ..SdeConfig::for_params(&m)
        };
        for replica in 0..20 {
            let mut stream = RandomStream::for_replica(1234, 0, replica);
            let (out, _) = integrate_sde(&m, &m.ones(0.0), 0.5, &cfg, &mut stream).unwrap();
            assert!(out.is_exploded(), "replica {replica}: {out:?}");
        }
    }

    #[test]
    fn recorded_increments_recover_noise_moments() {
        // Delta u - b(u) dt reconstructs eps sqrt(dt) N(0,1) exactly under EM
        let m = desk();
        let eps = 0.3;
        let dt = 1e-3;
        let cfg = SdeConfig {
            dt,
            t_cap: 100.0,
            ..SdeConfig::for_params(&m)
        };
        let mut stream = RandomStream::from_seed(99);
        let rec = integrate_ou(&m, &m.ones(0.0), eps, &cfg, &mut stream).unwrap();
        let mut count = 0usize;
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        let mut b = vec![0.0; 2];
        for w in rec.times.windows(2).zip(rec.states.windows(2)) {
            let (ts, ss) = w;
            let dt_k = ts[1] - ts[0];
            ou_drift_into(&m, &ss[0], &mut b);
            for i in 0..2 {
                let incr = ss[1][i] - ss[0][i] - b[i] * dt_k;
                sum += incr;
                sumsq += incr * incr;
                count += 1;
            }
        }
        let mean = sum / count as f64;
        let var = sumsq / count as f64 - mean * mean;
        let expect_var = eps * eps * dt;
        assert!(mean.abs() < 4.0 * (expect_var / count as f64).sqrt());
        assert!((var - expect_var).abs() / expect_var < 0.01, "var {var}");
    }

    #[test]
    fn ou_stays_at_origin_without_noise() {
        let m = desk();
        let cfg = SdeConfig {
            dt: 1e-2,
            t_cap: 10.0,
            ..SdeConfig::for_params(&m)
        };
        let mut stream = RandomStream::from_seed(5);
        let rec = integrate_ou(&m, &m.ones(0.0), 0.0, &cfg, &mut stream).unwrap();
        for s in &rec.states {
            assert!(s.iter().all(|x| *x == 0.0));
        }
    }

    #[test]
    fn ou_contracts_in_the_weighted_norm() {
        for (mode, weights) in [
            (DriftMode::PaperDrift, vec![1.0, 2.0, 2.0, 1.0]),
            (DriftMode::GradientExact, vec![1.0, 1.0, 1.0, 1.0]),
        ] {
            let m = params(4, 1.0, 2.0, mode);
            let cfg = SdeConfig {
                dt: 1e-3,
                t_cap: 5.0,
                ..SdeConfig::for_params(&m)
            };
            let mut stream = RandomStream::from_seed(6);
            let y0 = State::Finite(vec![1.0, -2.0, 0.5, 3.0]);
            let rec = integrate_ou(&m, &y0, 0.0, &cfg, &mut stream).unwrap();
            let wnorm = |s: &[f64]| -> f64 {
                s.iter()
                    .zip(&weights)
                    .map(|(x, w)| w * x * x)
                    .sum::<f64>()
                    .sqrt()
            };
            let mut prev = f64::INFINITY;
            for s in &rec.states {
                let n = wnorm(s);
                assert!(n <= prev + 1e-12, "{n} > {prev}");
                prev = n;
            }
        }
    }

    #[test]
    fn shared_noise_comparison_principle() {
        // with identical increments and u0 >= y0, the full system dominates
        // the comparison process while it is finite
        let m = params(3, 1.0, 2.0, DriftMode::PaperDrift);
        let cfg = SdeConfig {
            dt: 1e-3,
            t_cap: 50.0,
            ..SdeConfig::for_params(&m)
        };
        let eps = 0.4;
        let base = RandomStream::for_replica(2718, 0, 0);
        let mut s1 = base.clone();
        let mut s2 = base.clone();
        let y0 = State::Finite(vec![0.0, 0.0, 0.0]);
        let (out, rec_u) = integrate_sde(&m, &y0, eps, &cfg, &mut s1).unwrap();
        let rec_y = integrate_ou(&m, &y0, eps, &cfg, &mut s2).unwrap();
        assert!(out.is_exploded() || matches!(out, Outcome::Survived { .. }));
        let n = rec_u
            .times
            .iter()
            .zip(rec_y.times.iter())
            .take_while(|(a, b)| (**a - **b).abs() < 1e-12)
            .count();
        assert!(n > 100, "paths share only {n} time points");
        for k in 0..n {
            for i in 0..3 {
                assert!(
                    rec_u.states[k][i] >= rec_y.states[k][i] - 1e-8,
                    "violated at step {k}, coord {i}"
                );
            }
        }
    }

    #[test]
    fn hitting_time_basics() {
        let m = desk();
        let (_, rec) = integrate_deterministic(&m, &m.ones(1.5), &DetConfig::default()).unwrap();
        assert_eq!(hitting_time(&rec, |_| true), Some(0.0));
        assert_eq!(hitting_time(&rec, |_| false), None);
    }

    #[test]
    fn hitting_time_against_fine_reintegration() {
        let m = desk();
        let cfg = DetConfig::default();
        let (_, rec) = integrate_deterministic(&m, &m.ones(1.5), &cfg).unwrap();
        let hit = hitting_time(&rec, |s| s[1] >= 2.0).unwrap();

        // oracle: fixed-step RK4 at 10x the finest recorded resolution
        let dt = rec
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(f64::INFINITY, f64::min)
            / 10.0;
        let mut u = vec![1.5, 1.5];
        let mut t = 0.0;
        let d = 2;
        let mut k1 = vec![0.0; d];
        let mut k2 = vec![0.0; d];
        let mut k3 = vec![0.0; d];
        let mut k4 = vec![0.0; d];
        let mut tmp = vec![0.0; d];
        let fine_hit = loop {
            if u[1] >= 2.0 {
                break t;
            }
            m.drift_into(&u, &mut k1);
            for i in 0..d {
                tmp[i] = u[i] + 0.5 * dt * k1[i];
            }
            m.drift_into(&tmp, &mut k2);
            for i in 0..d {
                tmp[i] = u[i] + 0.5 * dt * k2[i];
            }
            m.drift_into(&tmp, &mut k3);
            for i in 0..d {
                tmp[i] = u[i] + dt * k3[i];
            }
            m.drift_into(&tmp, &mut k4);
            for i in 0..d {
                u[i] += dt / 6.0 * (k1[i] + 2.0 * k2[i] + 2.0 * k3[i] + k4[i]);
            }
            t += dt;
            assert!(t < 100.0, "oracle never reached the region");
        };
        let max_spacing = rec
            .times
            .windows(2)
            .map(|w| w[1] - w[0])
            .fold(0.0, f64::max);
        assert!(
            (hit - fine_hit).abs() <= max_spacing,
            "hit {hit} vs oracle {fine_hit} (spacing {max_spacing})"
        );
    }

    #[test]
    fn csv_round_shape() {
        let m = desk();
        let (out, rec) = integrate_deterministic(&m, &m.ones(1.5), &DetConfig::default()).unwrap();
        let mut buf = Vec::new();
        rec.write_csv(&out, &mut buf).unwrap();
        let text = String::from_utf8(buf).unwrap();
        assert!(text.starts_with("t,u_1,u_2\n"));
        assert!(text.contains("# outcome: exploded"));
        assert!(text.contains("# tau_hat:"));
    }

    #[test]
    fn invalid_inputs_rejected() {
        let m = desk();
        assert!(integrate_deterministic(&m, &State::Infinity, &DetConfig::default()).is_err());
        let bad = DetConfig {
            u_big: 10.0,
            ..DetConfig::default()
        };
        assert!(integrate_deterministic(&m, &m.ones(0.0), &bad).is_err());
        let bad = DetConfig {
            rel_tol: 0.1,
            ..DetConfig::default()
        };
        assert!(integrate_deterministic(&m, &m.ones(0.0), &bad).is_err());
        let sde = SdeConfig {
            m_freeze: 1.0,
            ..SdeConfig::for_params(&m)
        };
        let mut stream = RandomStream::from_seed(0);
        assert!(integrate_sde(&m, &m.ones(0.0), 0.1, &sde, &mut stream).is_err());
    }
}
