//! Van Aerde single-regime fundamental diagram: headway constants, curve
//! sampling, and fitting to (speed, density) observations.
//!
//! Units: km/h, veh/km, veh/h; headway in km/veh.

use nalgebra::{DMatrix, DVector};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::geo::{LaneAssignment, StudyArea};
use crate::ingest::{ms_to_kmh, Dataset};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct VanAerdeParams {
    /// free speed, km/h
    pub u_f: f64,
    /// speed at capacity, km/h
    pub u_c: f64,
    /// capacity, veh/h
    pub q_c: f64,
    /// jam density, veh/km
    pub k_j: f64,
}

impl VanAerdeParams {
    pub fn validate(&self) -> Result<()> {
        let VanAerdeParams { u_f, u_c, q_c, k_j } = *self;
        if ![u_f, u_c, q_c, k_j].iter().all(|v| v.is_finite()) {
            return Err(Error::Config("non-finite fundamental-diagram parameter".into()));
        }
        if u_c == u_f {
            return Err(Error::Singularity(format!("speed at capacity equals free speed ({u_f})")));
        }
        if !(u_c > 0.0 && u_c < u_f) {
            return Err(Error::Infeasible(format!("need 0 < u_c < u_f, got u_c={u_c}, u_f={u_f}")));
        }
        if q_c <= 0.0 {
            return Err(Error::Infeasible(format!("capacity must be positive, got {q_c}")));
        }
        if k_j <= q_c / u_c {
            return Err(Error::Infeasible(format!(
                "jam density {k_j} must exceed density at capacity {}",
                q_c / u_c
            )));
        }
        Ok(())
    }

    pub fn k_c(&self) -> f64 {
        self.q_c / self.u_c
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct HeadwayConstants {
    /// km
    pub c1: f64,
    /// km²/h
    pub c2: f64,
    /// h
    pub c3: f64,
    /// h/km
    pub m: f64,
}

/// Headway constants from the four macroscopic parameters.
///
/// Parameter sets whose headway would not increase with speed (so that
/// density is not decreasing in speed) are rejected as infeasible.
pub fn calibrate_constants(p: &VanAerdeParams) -> Result<HeadwayConstants> {
    p.validate()?;
    let VanAerdeParams { u_f, u_c, q_c, k_j } = *p;
    let m = (2.0 * u_c - u_f) / (u_f - u_c).powi(2);
    if m + 1.0 / u_f <= 0.0 {
        return Err(Error::Infeasible(format!("m + 1/u_f = {} is not positive", m + 1.0 / u_f)));
    }
    let c2 = 1.0 / (k_j * (m + 1.0 / u_f));
    let c1 = m * c2;
    let c3 = (-c1 + u_c / q_c - c2 / (u_f - u_c)) / u_c;
    // h'(u) = c3 + c2/(u_f - u)² is smallest at u = 0
    if c3 + c2 / (u_f * u_f) <= 0.0 {
        return Err(Error::Infeasible(format!(
            "headway decreases at low speed for {p:?}; jam density too close to density at capacity"
        )));
    }
    Ok(HeadwayConstants { c1, c2, c3, m })
}

/// Distance headway in km/veh for `0 ≤ u < u_f`.
pub fn headway(u: f64, c: &HeadwayConstants, u_f: f64) -> Result<f64> {
    if !(u >= 0.0 && u < u_f) {
        return Err(Error::Domain(format!("headway needs 0 <= u < u_f, got u={u}, u_f={u_f}")));
    }
    Ok(headway_unchecked(u, c, u_f))
}

fn headway_unchecked(u: f64, c: &HeadwayConstants, u_f: f64) -> f64 {
    c.c1 + c.c3 * u + c.c2 / (u_f - u)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdSample {
    /// km/h
    pub u: f64,
    /// veh/km
    pub k: f64,
    /// veh/h
    pub q: f64,
}

pub fn fd_point(p: &VanAerdeParams, c: &HeadwayConstants, u: f64) -> Result<FdSample> {
    let k = 1.0 / headway(u, c, p.u_f)?;
    Ok(FdSample { u, k, q: k * u })
}

/// `n` samples at `u_i = u_f·(i+1)/(n+1)`.
pub fn fd_curve(p: &VanAerdeParams, n: usize) -> Result<Vec<FdSample>> {
    if n < 2 {
        return Err(Error::Config(format!("fd curve needs at least 2 samples, got {n}")));
    }
    let c = calibrate_constants(p)?;
    (0..n)
        .map(|i| fd_point(p, &c, p.u_f * (i + 1) as f64 / (n + 1) as f64))
        .collect()
}

pub const MIN_FIT_SAMPLES: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Coverage {
    /// Samples slower than the fitted speed at capacity.
    pub congested: usize,
    pub uncongested: usize,
    pub sufficient: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdFit {
    pub params: VanAerdeParams,
    /// Σ (k_obs − k_model)²
    pub residual: f64,
    pub rmse: f64,
    pub coverage: Coverage,
}

fn k_objective(obs: &[(f64, f64)], p: &VanAerdeParams) -> f64 {
    let Ok(c) = calibrate_constants(p) else {
        return f64::INFINITY;
    };
    let mut sum = 0.0;
    for &(u, k) in obs {
        if u >= p.u_f {
            return f64::INFINITY;
        }
        let h = headway_unchecked(u, &c, p.u_f);
        if h <= 0.0 {
            return f64::INFINITY;
        }
        sum += (k - 1.0 / h).powi(2);
    }
    sum
}

/// For a fixed free speed the headway is linear in (c1, c2, c3); solve it by
/// least squares in headway space, weighting rows by k² so that the residual
/// approximates the density-space residual.
fn params_for_free_speed(obs: &[(f64, f64)], u_f: f64) -> Option<VanAerdeParams> {
    let n = obs.len();
    let mut a = DMatrix::<f64>::zeros(n, 3);
    let mut b = DVector::<f64>::zeros(n);
    for (i, &(u, k)) in obs.iter().enumerate() {
        let w = k * k;
        a[(i, 0)] = w;
        a[(i, 1)] = w / (u_f - u);
        a[(i, 2)] = w * u;
        b[i] = w / k;
    }
    let x = a.svd(true, true).solve(&b, 1e-14).ok()?;
    constants_to_params(x[0], x[1], x[2], u_f)
}

/// Inverts the constant derivation: recovers (u_c, q_c, k_j) from (c1, c2, c3).
fn constants_to_params(c1: f64, c2: f64, c3: f64, u_f: f64) -> Option<VanAerdeParams> {
    if !(c2 > 0.0) {
        return None;
    }
    let m = c1 / c2;
    if 1.0 + m * u_f <= 0.0 {
        return None;
    }
    // m·d² + 2d − u_f = 0 with d = u_f − u_c
    let d = if m.abs() < 1e-12 {
        u_f / 2.0
    } else {
        (-1.0 + (1.0 + m * u_f).sqrt()) / m
    };
    let u_c = u_f - d;
    let h_c = c1 + c3 * u_c + c2 / d;
    let h_0 = c1 + c2 / u_f;
    if !(u_c > 0.0 && h_c > 0.0 && h_0 > 0.0) {
        return None;
    }
    let p = VanAerdeParams {
        u_f,
        u_c,
        q_c: u_c / h_c,
        k_j: 1.0 / h_0,
    };
    p.validate().ok().map(|_| p)
}

fn golden_min(mut lo: f64, mut hi: f64, f: impl Fn(f64) -> f64) -> f64 {
    let r = (5f64.sqrt() - 1.0) / 2.0;
    let mut x1 = hi - r * (hi - lo);
    let mut x2 = lo + r * (hi - lo);
    let (mut f1, mut f2) = (f(x1), f(x2));
    for _ in 0..100 {
        if f1 <= f2 {
            hi = x2;
            x2 = x1;
            f2 = f1;
            x1 = hi - r * (hi - lo);
            f1 = f(x1);
        } else {
            lo = x1;
            x1 = x2;
            f1 = f2;
            x2 = lo + r * (hi - lo);
            f2 = f(x2);
        }
        if hi - lo < 1e-10 * hi {
            break;
        }
    }
    if f1 <= f2 {
        x1
    } else {
        x2
    }
}

/// Compass search in log-parameter space.
fn pattern_search(obs: &[(f64, f64)], start: VanAerdeParams) -> (VanAerdeParams, f64) {
    let to_vec = |p: &VanAerdeParams| [p.u_f.ln(), p.u_c.ln(), p.q_c.ln(), p.k_j.ln()];
    let from_vec = |v: &[f64; 4]| VanAerdeParams {
        u_f: v[0].exp(),
        u_c: v[1].exp(),
        q_c: v[2].exp(),
        k_j: v[3].exp(),
    };
    let mut x = to_vec(&start);
    let mut best = k_objective(obs, &start);
    let mut step = 0.05;
    let mut iterations = 0;
    while step > 1e-9 && iterations < 20_000 {
        let mut improved = false;
        for dim in 0..4 {
            for dir in [1.0, -1.0] {
                let mut y = x;
                y[dim] += dir * step;
                let f = k_objective(obs, &from_vec(&y));
                iterations += 1;
                if f < best {
                    best = f;
                    x = y;
                    improved = true;
                }
            }
        }
        if !improved {
            step *= 0.5;
        }
    }
    (from_vec(&x), best)
}

/// Least-squares Van Aerde fit to (u km/h, k veh/km) observations.
pub fn fit_from_observations(samples: &[(f64, f64)]) -> Result<FdFit> {
    let obs: Vec<(f64, f64)> = samples
        .iter()
        .copied()
        .filter(|&(u, k)| u.is_finite() && k.is_finite() && u >= 0.0 && k > 0.0)
        .collect();
    if obs.len() < MIN_FIT_SAMPLES {
        return Err(Error::InsufficientData(format!(
            "fundamental-diagram fit needs at least {MIN_FIT_SAMPLES} samples, got {}",
            obs.len()
        )));
    }
    let max_u = obs.iter().map(|o| o.0).fold(0.0, f64::max);
    if max_u <= 0.0 {
        return Err(Error::InsufficientData("all observed speeds are zero".into()));
    }
    let lo = max_u * 1.001;
    let hi = (3.0 * max_u).max(200.0);
    let profile = |u_f: f64| {
        params_for_free_speed(&obs, u_f).map_or(f64::INFINITY, |p| k_objective(&obs, &p))
    };

    const GRID: usize = 400;
    let grid: Vec<f64> = (0..GRID)
        .map(|i| lo * (hi / lo).powf(i as f64 / (GRID - 1) as f64))
        .collect();
    let (best_i, best_f) = grid
        .iter()
        .enumerate()
        .map(|(i, &u)| (i, profile(u)))
        .fold((0, f64::INFINITY), |acc, (i, f)| if f < acc.1 { (i, f) } else { acc });
    if !best_f.is_finite() {
        return Err(Error::Infeasible(
            "no feasible fundamental diagram fits the observations".into(),
        ));
    }
    let u_f = golden_min(grid[best_i.saturating_sub(1)], grid[(best_i + 1).min(GRID - 1)], profile);
    let start = [u_f, grid[best_i]]
        .into_iter()
        .filter_map(|u| params_for_free_speed(&obs, u))
        .min_by(|a, b| k_objective(&obs, a).total_cmp(&k_objective(&obs, b)))
        .expect("grid optimum is feasible");
    let (params, residual) = pattern_search(&obs, start);

    let congested = obs.iter().filter(|o| o.0 < params.u_c).count();
    let uncongested = obs.len() - congested;
    let need = ((obs.len() as f64 * 0.1).ceil() as usize).max(2);
    Ok(FdFit {
        params,
        residual,
        rmse: (residual / obs.len() as f64).sqrt(),
        coverage: Coverage {
            congested,
            uncongested,
            sufficient: congested >= need && uncongested >= need,
        },
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct FdObservation {
    pub lane_id: u32,
    /// window start, s
    pub t: f64,
    /// space-mean speed, km/h
    pub u: f64,
    /// veh/km
    pub k: f64,
}

/// Per-lane (speed, density) pairs over fixed windows: space-mean speed is
/// distance travelled over time spent; density is time spent over
/// window × lane length.
pub fn fd_observations(
    dataset: &Dataset,
    assignments: &[LaneAssignment],
    area: &StudyArea,
    window: f64,
) -> Vec<FdObservation> {
    use std::collections::BTreeMap;
    // (lane, window index) -> (time spent s, distance m)
    let mut cells: BTreeMap<(u32, i64), (f64, f64)> = BTreeMap::new();
    for a in assignments {
        let Some(traj) = dataset.get(a.track_id) else { continue };
        let range = a.in_area();
        for i in *range.start()..*range.end() {
            let (p, next) = (&traj.points[i], &traj.points[i + 1]);
            let dt = next.t - p.t;
            let lane = a.labels[i];
            if lane == 0 || dt <= 0.0 {
                continue;
            }
            let cell = cells.entry((lane, (p.t / window).floor() as i64)).or_default();
            cell.0 += dt;
            cell.1 += p.speed * dt;
        }
    }
    cells
        .into_iter()
        .filter(|(_, (tt, _))| *tt > 0.0)
        .map(|((lane, w), (tt, td))| FdObservation {
            lane_id: lane,
            t: w as f64 * window,
            u: ms_to_kmh(td / tt),
            k: tt / (window * area.length) * 1000.0,
        })
        .collect()
}
