use nalgebra::{DMatrix, DVector};
use rand_distr::{Distribution, StandardNormal};
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::moments::MomentSummary;
use crate::linalg::{select, select_vec, spd_solve, symmetric_factor};
use crate::penalties::PenaltySpec;
use crate::rng;
use crate::{Error, Result};

const MAX_SWEEPS: usize = 200_000;
const MAX_BISECTIONS: usize = 200;
/// Values closer than this are treated as equal when picking the maximizer.
const TIE_TOLERANCE: f64 = 1e-12;
const MULTIMODAL_VALUE_GAP: f64 = 1e-8;
const MULTIMODAL_DISTANCE: f64 = 1e-3;
/// Sign-pattern seeds are enumerated exhaustively up to this dimension.
const MAX_FULL_PATTERN_DIM: usize = 10;

/// Shape of the limit objective, determined by the penalty family.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "case", rename_all = "snake_case")]
pub enum PenaltyCase {
    LGammaGt1 { gamma: f64 },
    Lasso,
    LGammaLt1 { gamma: f64 },
    Scad,
}

impl PenaltyCase {
    pub fn of(penalty: &PenaltySpec) -> Self {
        match *penalty {
            PenaltySpec::Lasso { .. } => PenaltyCase::Lasso,
            PenaltySpec::Scad { .. } => PenaltyCase::Scad,
            PenaltySpec::LGamma { gamma, .. } if gamma > 1.0 => PenaltyCase::LGammaGt1 { gamma },
            PenaltySpec::LGamma { gamma, .. } if gamma < 1.0 => PenaltyCase::LGammaLt1 { gamma },
            PenaltySpec::LGamma { .. } => PenaltyCase::Lasso,
        }
    }

    pub fn validate(&self) -> Result<()> {
        match *self {
            PenaltyCase::LGammaGt1 { gamma } if !(gamma > 1.0 && gamma.is_finite()) => {
                Err(Error::InvalidPenalty(format!("gamma {gamma} is not above 1")))
            }
            PenaltyCase::LGammaLt1 { gamma } if !(gamma > 0.0 && gamma < 1.0) => {
                Err(Error::InvalidPenalty(format!("gamma {gamma} is not in (0, 1)")))
            }
            _ => Ok(()),
        }
    }

    /// Exponent `e` in the schedule `lambda_n = lambda0 n^-e` under which the
    /// limit is non-degenerate.
    pub fn rate_exponent(&self) -> f64 {
        match *self {
            PenaltyCase::LGammaLt1 { gamma } => 1.0 - gamma / 2.0,
            _ => 0.5,
        }
    }

    pub fn is_concave(&self) -> bool {
        !matches!(self, PenaltyCase::LGammaLt1 { .. })
    }
}

/// `lambda_n = lambda0 * n^(-exponent)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LambdaSchedule {
    pub lambda0: f64,
    pub exponent: f64,
}

impl LambdaSchedule {
    pub fn for_case(lambda0: f64, case: PenaltyCase) -> Self {
        LambdaSchedule { lambda0, exponent: case.rate_exponent() }
    }

    pub fn at(&self, n: usize) -> f64 {
        self.lambda0 * (n as f64).powf(-self.exponent)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LimitProblem {
    pub moments: MomentSummary,
    pub penalty_case: PenaltyCase,
    pub lambda0: f64,
    pub beta0: Vec<f64>,
    #[serde(rename = "radius_K")]
    pub radius_k: f64,
}

/// `D(u) = h^T u - u^T M u / 2 - kappa sum_{j in Z} |u_j|^q`, with `h = W + shift`.
struct Shape {
    m: DMatrix<f64>,
    shift: DVector<f64>,
    /// `kappa` on coordinates with a zero true value, 0 elsewhere.
    kappa: Vec<f64>,
    q: f64,
}

impl LimitProblem {
    pub fn new(moments: MomentSummary, penalty_case: PenaltyCase, lambda0: f64, beta0: Vec<f64>, radius_k: f64) -> Result<Self> {
        let problem = LimitProblem { moments, penalty_case, lambda0, beta0, radius_k };
        problem.validate()?;
        Ok(problem)
    }

    pub fn validate(&self) -> Result<()> {
        self.penalty_case.validate()?;
        if !(self.lambda0 >= 0.0 && self.lambda0.is_finite()) {
            return Err(Error::InvalidPenalty("lambda0 must be finite and nonnegative".into()));
        }
        if !(self.radius_k > 0.0 && self.radius_k.is_finite()) {
            return Err(Error::InvalidOptions("radius_K must be positive".into()));
        }
        let p = self.moments.p();
        if self.beta0.len() != p {
            return Err(Error::DimensionMismatch { expected: p, found: self.beta0.len() });
        }
        if self.moments.m.len() != p || self.moments.m.iter().any(|r| r.len() != p) {
            return Err(Error::DimensionMismatch { expected: p, found: self.moments.m.len() });
        }
        Ok(())
    }

    pub fn p(&self) -> usize {
        self.beta0.len()
    }

    /// `||beta0||_gamma^gamma`, with `gamma = 1` for the Lasso.
    pub fn beta0_gamma_norm(&self) -> f64 {
        let gamma = match self.penalty_case {
            PenaltyCase::LGammaGt1 { gamma } | PenaltyCase::LGammaLt1 { gamma } => gamma,
            PenaltyCase::Lasso | PenaltyCase::Scad => 1.0,
        };
        self.beta0.iter().filter(|b| **b != 0.0).map(|b| b.abs().powf(gamma)).sum()
    }

    fn shape(&self) -> Shape {
        let p = self.p();
        let k = self.lambda0 * self.moments.mean_abs_eps;
        let bias = self.lambda0 * self.beta0_gamma_norm();
        let v = self.moments.v_vector();
        let zero = |j: usize| self.beta0[j] == 0.0;
        let (shift, kappa, q) = match self.penalty_case {
            PenaltyCase::LGammaGt1 { gamma } => {
                let s = DVector::from_fn(p, |j, _| {
                    let b = self.beta0[j];
                    -gamma * k * crate::sign(b) * b.abs().powf(gamma - 1.0) + bias * v[j]
                });
                (s, vec![0.0; p], 1.0)
            }
            PenaltyCase::Lasso => {
                let s = DVector::from_fn(p, |j, _| -k * crate::sign(self.beta0[j]) + bias * v[j]);
                (s, (0..p).map(|j| if zero(j) { k } else { 0.0 }).collect(), 1.0)
            }
            PenaltyCase::LGammaLt1 { gamma } => {
                (v * bias, (0..p).map(|j| if zero(j) { k } else { 0.0 }).collect(), gamma)
            }
            PenaltyCase::Scad => (DVector::zeros(p), (0..p).map(|j| if zero(j) { k } else { 0.0 }).collect(), 1.0),
        };
        Shape { m: self.moments.m_matrix(), shift, kappa, q }
    }
}

impl Shape {
    fn value(&self, h: &DVector<f64>, u: &DVector<f64>) -> f64 {
        let quad = u.dot(&(&self.m * u));
        let pen: f64 = self.kappa.iter().zip(u.iter()).filter(|(k, _)| **k > 0.0).map(|(k, x)| k * x.abs().powf(self.q)).sum();
        h.dot(u) - 0.5 * quad - pen
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AsymptoticDraw {
    #[serde(rename = "W")]
    pub w: Vec<f64>,
    pub u_star: Vec<f64>,
    pub d_value: f64,
    /// Another local maximum is within `1e-8` in value but more than `1e-3` away.
    pub multimodal: bool,
}

fn check_dim(p: usize, v: &DVector<f64>) -> Result<()> {
    if v.len() != p {
        return Err(Error::DimensionMismatch { expected: p, found: v.len() });
    }
    Ok(())
}

/// Evaluates the limit objective `D(u)` for the problem's penalty case.
pub fn limit_objective(problem: &LimitProblem, w: &DVector<f64>, u: &DVector<f64>) -> Result<f64> {
    check_dim(problem.p(), w)?;
    check_dim(problem.p(), u)?;
    let shape = problem.shape();
    Ok(shape.value(&(w + &shape.shift), u))
}

fn soft(z: f64, t: f64) -> f64 {
    z.signum() * (z.abs() - t).max(0.0)
}

/// Interior local maximizer on `t > 0` of `a t - m t^2 / 2 - kappa t^gamma`
/// for `0 < gamma < 1`, `kappa > 0`, `m > 0`. The derivative rises up to
/// `t_p` and falls afterwards, so the only candidate is the root beyond `t_p`.
fn bridge_interior(a: f64, m: f64, kappa: f64, gamma: f64) -> Option<f64> {
    let t_p = (kappa * gamma * (1.0 - gamma) / m).powf(1.0 / (2.0 - gamma));
    let slope = |t: f64| a - m * t - kappa * gamma * t.powf(gamma - 1.0);
    if slope(t_p) <= 0.0 {
        return None;
    }
    let (mut lo, mut hi) = (t_p, a / m);
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi {
            break;
        }
        if slope(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    Some(0.5 * (lo + hi))
}

/// Global maximizer of `a t - m t^2 / 2 - kappa |t|^gamma`; zero wins ties.
fn bridge_coordinate(a: f64, m: f64, kappa: f64, gamma: f64) -> f64 {
    if kappa == 0.0 {
        return a / m;
    }
    let mut best = (0.0, 0.0);
    for side in [1.0, -1.0] {
        let a_s = side * a;
        if let Some(t) = bridge_interior(a_s, m, kappa, gamma) {
            let val = a_s * t - 0.5 * m * t * t - kappa * t.powf(gamma);
            if val > best.1 {
                best = (side * t, val);
            }
        }
    }
    best.0
}

/// Coordinate ascent on `h^T u - u^T (M + mu I) u / 2 - penalty`, exact in
/// each coordinate. `None` when a diagonal entry is not positive.
fn coordinate_ascent(shape: &Shape, h: &DVector<f64>, mu: f64, start: &DVector<f64>) -> Result<Option<DVector<f64>>> {
    let p = h.len();
    if (0..p).any(|j| shape.m[(j, j)] + mu <= 0.0) {
        return Ok(None);
    }
    let smooth = shape.kappa.iter().all(|&k| k == 0.0);
    if smooth {
        let a = &shape.m + DMatrix::identity(p, p) * mu;
        return Ok(a.cholesky().map(|c| c.solve(h)));
    }
    let mut u = start.clone();
    for _ in 0..MAX_SWEEPS {
        let mut change = 0.0f64;
        for j in 0..p {
            let m_jj = shape.m[(j, j)] + mu;
            let cross: f64 = (0..p).filter(|&k| k != j).map(|k| shape.m[(j, k)] * u[k]).sum();
            let a = h[j] - cross;
            let new = if shape.q == 1.0 {
                soft(a, shape.kappa[j]) / m_jj
            } else {
                bridge_coordinate(a, m_jj, shape.kappa[j], shape.q)
            };
            change = change.max((new - u[j]).abs());
            u[j] = new;
        }
        if change <= 1e-14 * (1.0 + u.amax()) {
            return Ok(Some(u));
        }
    }
    Err(Error::NoConvergence { what: "limit coordinate ascent", iterations: MAX_SWEEPS })
}

/// Ascent from `start`, pulled inside the ball by a ridge `mu` found by
/// bisection when the unconstrained maximizer lies outside.
fn ball_constrained(shape: &Shape, h: &DVector<f64>, radius: f64, start: &DVector<f64>) -> Result<DVector<f64>> {
    let outside = |u: &Option<DVector<f64>>| u.as_ref().is_none_or(|u| u.norm() > radius);
    let free = coordinate_ascent(shape, h, 0.0, start)?;
    if !outside(&free) {
        return Ok(free.expect("checked"));
    }
    let mut lo = 0.0;
    let mut hi = 1.0;
    let mut best = coordinate_ascent(shape, h, hi, start)?;
    let mut doublings = 0;
    while outside(&best) {
        lo = hi;
        hi *= 2.0;
        best = coordinate_ascent(shape, h, hi, start)?;
        doublings += 1;
        if doublings > MAX_BISECTIONS {
            return Err(Error::NoConvergence { what: "ball multiplier bracket", iterations: doublings });
        }
    }
    let mut best = best.expect("inside the ball");
    for _ in 0..MAX_BISECTIONS {
        let mid = 0.5 * (lo + hi);
        if mid <= lo || mid >= hi || best.norm() >= radius * (1.0 - 1e-15) {
            break;
        }
        let u = coordinate_ascent(shape, h, mid, &best)?;
        if outside(&u) {
            lo = mid;
        } else {
            hi = mid;
            best = u.expect("inside the ball");
        }
    }
    Ok(best)
}

/// Points differing from `u` in one penalized coordinate, moved to another
/// local maximum of the one-dimensional section (zero or the interior
/// root on either side).
fn coordinate_rivals(shape: &Shape, h: &DVector<f64>, radius: f64, u: &DVector<f64>) -> Vec<(DVector<f64>, f64)> {
    let p = u.len();
    let mut out = Vec::new();
    for j in (0..p).filter(|&j| shape.kappa[j] > 0.0) {
        let m = shape.m[(j, j)];
        if m <= 0.0 {
            continue;
        }
        let cross: f64 = (0..p).filter(|&k| k != j).map(|k| shape.m[(j, k)] * u[k]).sum();
        let a = h[j] - cross;
        let mut sections = vec![0.0];
        for side in [1.0, -1.0] {
            if let Some(t) = bridge_interior(side * a, m, shape.kappa[j], shape.q) {
                sections.push(side * t);
            }
        }
        for t in sections {
            let mut alt = u.clone();
            alt[j] = t;
            if alt.norm() <= radius {
                let v = shape.value(h, &alt);
                out.push((alt, v));
            }
        }
    }
    out
}

fn lexicographic_lt(a: &DVector<f64>, b: &DVector<f64>) -> bool {
    for (x, y) in a.iter().zip(b.iter()) {
        if x < y {
            return true;
        }
        if x > y {
            return false;
        }
    }
    false
}

fn starting_points(shape: &Shape, h: &DVector<f64>, radius: f64) -> Vec<DVector<f64>> {
    let p = h.len();
    let mut seeds = vec![DVector::zeros(p)];
    if let Some(c) = shape.m.clone().cholesky() {
        let mut u = c.solve(h);
        let norm = u.norm();
        if norm > radius {
            u *= radius / norm;
        }
        seeds.push(u);
    }
    let mag = radius / (2.0 * (p as f64).sqrt());
    let patterns: Vec<u64> = if p <= MAX_FULL_PATTERN_DIM {
        (0..1u64 << p).collect()
    } else {
        let mut v = vec![0, u64::MAX];
        v.extend((0..p).map(|j| 1u64 << j));
        v
    };
    for bits in patterns {
        seeds.push(DVector::from_fn(p, |j, _| if bits >> (j % 64) & 1 == 1 { -mag } else { mag }));
    }
    if p <= 3 {
        let steps = 5;
        let total = (steps as usize).pow(p as u32);
        for idx in 0..total {
            let mut rem = idx;
            let u = DVector::from_fn(p, |_, _| {
                let k = rem % steps;
                rem /= steps;
                -radius + 2.0 * radius * k as f64 / (steps - 1) as f64
            });
            if u.norm() <= radius {
                seeds.push(u);
            }
        }
    }
    seeds
}

/// Maximizes `D` over `||u|| <= K`.
pub fn limit_argmax(problem: &LimitProblem, w: &DVector<f64>) -> Result<AsymptoticDraw> {
    problem.validate()?;
    check_dim(problem.p(), w)?;
    let shape = problem.shape();
    let h = w + &shape.shift;
    let radius = problem.radius_k;
    let candidates: Vec<(DVector<f64>, f64)> = if problem.penalty_case.is_concave() {
        let u = ball_constrained(&shape, &h, radius, &DVector::zeros(problem.p()))?;
        let v = shape.value(&h, &u);
        vec![(u, v)]
    } else {
        starting_points(&shape, &h, radius)
            .iter()
            .map(|s| {
                let u = ball_constrained(&shape, &h, radius, s)?;
                let v = shape.value(&h, &u);
                Ok((u, v))
            })
            .collect::<Result<_>>()?
    };
    let mut best = &candidates[0];
    for c in &candidates[1..] {
        let scale = 1.0 + best.1.abs();
        if c.1 > best.1 + TIE_TOLERANCE * scale || (c.1 >= best.1 - TIE_TOLERANCE * scale && lexicographic_lt(&c.0, &best.0)) {
            best = c;
        }
    }
    let rivals = if problem.penalty_case.is_concave() { Vec::new() } else { coordinate_rivals(&shape, &h, radius, &best.0) };
    let multimodal = candidates
        .iter()
        .chain(&rivals)
        .any(|c| (c.1 - best.1).abs() < MULTIMODAL_VALUE_GAP && (&c.0 - &best.0).norm() > MULTIMODAL_DISTANCE);
    Ok(AsymptoticDraw {
        w: w.iter().copied().collect(),
        u_star: best.0.iter().copied().collect(),
        d_value: best.1,
        multimodal,
    })
}

/// `count` independent draws of `W ~ N(0, E eps^2 x x^T)`; draw `i` uses
/// stream `i` of `seed`.
pub fn sample_w(moments: &MomentSummary, count: usize, seed: u64) -> Result<Vec<DVector<f64>>> {
    let factor = symmetric_factor(&moments.w_covariance_matrix())?;
    let p = moments.p();
    Ok((0..count)
        .map(|i| {
            let mut rng = rng::substream(seed, i as u64);
            let z = DVector::from_fn(p, |_, _| StandardNormal.sample(&mut rng));
            &factor * z
        })
        .collect())
}

/// Independent draws of `argmax D`, the limit law of `sqrt(n)(beta_hat - beta0)`.
pub fn draw_limit(problem: &LimitProblem, count: usize, seed: u64) -> Result<Vec<AsymptoticDraw>> {
    sample_w(&problem.moments, count, seed)?
        .par_iter()
        .map(|w| limit_argmax(problem, w))
        .collect()
}

/// Limit of the nonzero block when the zero block is recovered exactly:
/// `M11^-1 (W1 + lambda0 ||beta0||_gamma^gamma V1)` for bridge penalties
/// and `M11^-1 W1` for SCAD. `zero_pattern[j]` marks `beta0_j = 0`.
pub fn oracle_limit(problem: &LimitProblem, w: &DVector<f64>, zero_pattern: &[bool]) -> Result<DVector<f64>> {
    problem.validate()?;
    check_dim(problem.p(), w)?;
    if zero_pattern.len() != problem.p() {
        return Err(Error::DimensionMismatch { expected: problem.p(), found: zero_pattern.len() });
    }
    let active: Vec<usize> = (0..problem.p()).filter(|&j| !zero_pattern[j]).collect();
    let mut out = DVector::zeros(problem.p());
    if active.is_empty() {
        return Ok(out);
    }
    let m11 = select(&problem.moments.m_matrix(), &active);
    let mut rhs = select_vec(w, &active);
    if !matches!(problem.penalty_case, PenaltyCase::Scad) {
        rhs += select_vec(&problem.moments.v_vector(), &active) * (problem.lambda0 * problem.beta0_gamma_norm());
    }
    let sol = spd_solve(&m11, &rhs).map_err(|_| Error::Singular("M11 is not invertible".into()))?;
    for (k, &j) in active.iter().enumerate() {
        out[j] = sol[k];
    }
    Ok(out)
}
