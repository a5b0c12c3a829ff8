//! Projected subgradient ascent over a Euclidean ball.
//!
//! Both `Q_n` and the penalized likelihood have the form `F(beta, P(beta))`
//! with `F` smooth in `beta` and `P = sum_j p_lambda(beta_j)`. Each iteration:
//!
//! 1. builds the minimum-norm ascent subgradient (zero coordinates stay put
//!    unless a one-sided derivative is positive);
//! 2. preconditions it with a positive-definite curvature model restricted to
//!    the free coordinates;
//! 3. backtracks from step 1 with factor 1/2 until the Armijo condition
//!    (constant 1e-4) holds, clipping any coordinate that would cross zero to
//!    exactly zero and projecting onto the ball.

use nalgebra::{DMatrix, DVector};

use crate::linalg::{select, select_vec};
use crate::penalties::PenaltySpec;
use crate::{sign, Error, Result};

pub(crate) const ARMIJO: f64 = 1e-4;
pub(crate) const SHRINK: f64 = 0.5;
const MAX_BACKTRACKS: usize = 60;

/// Local first/second-order information at one point.
#[derive(Debug, Clone)]
pub struct LocalModel {
    pub value: f64,
    /// Gradient with the penalty total `P` held fixed.
    pub gradient: DVector<f64>,
    /// `dF/dP`.
    pub penalty_slope: f64,
    /// Positive-semidefinite curvature of `-F`, used as a preconditioner.
    pub curvature: DMatrix<f64>,
}

/// An objective the ascent engine can maximize.
pub trait PenalizedObjective: Sync {
    fn dim(&self) -> usize;
    fn penalty(&self) -> PenaltySpec;
    fn value(&self, beta: &DVector<f64>) -> f64;
    fn local_model(&self, beta: &DVector<f64>) -> LocalModel;
}

#[derive(Debug, Clone)]
pub(crate) struct RunOutcome {
    pub beta: DVector<f64>,
    pub value: f64,
    pub converged: bool,
    pub iterations: usize,
    #[cfg_attr(not(test), allow(dead_code))]
    pub trace: Vec<f64>,
}

#[derive(Debug, Clone, Copy)]
pub(crate) struct Ball<'a> {
    pub center: &'a DVector<f64>,
    pub radius: f64,
}

impl Ball<'_> {
    pub fn project(&self, beta: &mut DVector<f64>) {
        let dist = (&*beta - self.center).norm();
        if dist > self.radius {
            let scale = self.radius / dist;
            for (b, c) in beta.iter_mut().zip(self.center.iter()) {
                *b = c + (*b - c) * scale;
            }
        }
    }

    pub fn contains(&self, beta: &DVector<f64>) -> bool {
        (beta - self.center).norm() <= self.radius * (1.0 + 1e-14) + 1e-300
    }
}

pub(crate) struct Tolerances {
    pub max_iterations: usize,
    pub step: f64,
    pub objective: f64,
}

/// Ascent direction restricted to `beta_j = 0` coordinates that can move.
pub(crate) fn pseudo_gradient(model: &LocalModel, penalty: &PenaltySpec, beta: &DVector<f64>) -> DVector<f64> {
    let c = model.penalty_slope;
    let kink = penalty.right_derivative_at_zero();
    DVector::from_iterator(
        beta.len(),
        beta.iter().zip(model.gradient.iter()).map(|(&b, &g)| {
            if b != 0.0 {
                return g + c * penalty.derivative(b);
            }
            if kink == 0.0 || c == 0.0 {
                return g;
            }
            if kink.is_infinite() {
                return if c < 0.0 { 0.0 } else { g };
            }
            let up = g + c * kink;
            let down = -g + c * kink;
            if up > 0.0 && up >= down {
                up
            } else if down > 0.0 {
                -down
            } else {
                0.0
            }
        }),
    )
}

fn newton_direction(curv: &DMatrix<f64>, pg: &DVector<f64>, beta: &DVector<f64>) -> DVector<f64> {
    let p = beta.len();
    let mut free: Vec<usize> = (0..p).filter(|&j| beta[j] != 0.0 || pg[j] != 0.0).collect();
    let mut d = DVector::zeros(p);
    while !free.is_empty() {
        let h = select(curv, &free);
        let g = select_vec(pg, &free);
        let scale = h.diagonal().amax().max(1e-300);
        let solved = h.clone().cholesky().map(|c| c.solve(&g)).or_else(|| {
            let ridge = DMatrix::identity(free.len(), free.len()) * (1e-8 * scale);
            (h + ridge).cholesky().map(|c| c.solve(&g))
        });
        let Some(step) = solved else { break };
        // a coordinate leaving zero must move the way its subgradient points
        let wrong: Vec<usize> = free
            .iter()
            .zip(step.iter())
            .filter(|(&j, &s)| beta[j] == 0.0 && sign(s) != sign(pg[j]))
            .map(|(&j, _)| j)
            .collect();
        if wrong.is_empty() {
            d.fill(0.0);
            for (&j, &s) in free.iter().zip(step.iter()) {
                d[j] = s;
            }
            break;
        }
        free.retain(|j| !wrong.contains(j));
    }
    if d.dot(pg) <= 0.0 {
        return pg.clone();
    }
    d
}

/// One projected-ascent run from `start`.
pub(crate) fn ascend<O: PenalizedObjective + ?Sized>(
    obj: &O,
    ball: Ball<'_>,
    start: &DVector<f64>,
    tol: &Tolerances,
) -> Result<RunOutcome> {
    let penalty = obj.penalty();
    let mut beta = start.clone();
    ball.project(&mut beta);
    let mut value = obj.value(&beta);
    if !value.is_finite() {
        return Err(Error::NonFiniteObjective { beta: beta.iter().copied().collect() });
    }
    let mut trace = vec![value];
    for iter in 0..tol.max_iterations {
        let model = obj.local_model(&beta);
        let pg = pseudo_gradient(&model, &penalty, &beta);
        if pg.amax() == 0.0 {
            return Ok(RunOutcome { beta, value, converged: true, iterations: iter, trace });
        }
        let d = newton_direction(&model.curvature, &pg, &beta);
        let orth: Vec<f64> = beta.iter().zip(d.iter()).map(|(&b, &dj)| if b != 0.0 { sign(b) } else { sign(dj) }).collect();

        let mut t = 1.0;
        let mut accepted = None;
        for _ in 0..MAX_BACKTRACKS {
            let mut cand = &beta + &d * t;
            for (j, c) in cand.iter_mut().enumerate() {
                if orth[j] == 0.0 || sign(*c) == -orth[j] {
                    *c = 0.0;
                }
            }
            ball.project(&mut cand);
            let fc = obj.value(&cand);
            if !fc.is_finite() {
                return Err(Error::NonFiniteObjective { beta: cand.iter().copied().collect() });
            }
            let predicted = pg.dot(&(&cand - &beta));
            if fc >= value + ARMIJO * predicted && fc >= value {
                accepted = Some((cand, fc));
                break;
            }
            t *= SHRINK;
        }
        let Some((cand, fc)) = accepted else {
            // no ascent left at working precision
            return Ok(RunOutcome { beta, value, converged: true, iterations: iter + 1, trace });
        };
        let step = (&cand - &beta).amax();
        let gain = fc - value;
        beta = cand;
        value = fc;
        trace.push(value);
        if step <= tol.step * (1.0 + beta.amax()) || gain <= tol.objective {
            return Ok(RunOutcome { beta, value, converged: true, iterations: iter + 1, trace });
        }
    }
    Ok(RunOutcome { beta, value, converged: false, iterations: tol.max_iterations, trace })
}

/// Sets coordinates below `threshold` to exactly zero when that costs at most
/// `slack` in objective value.
pub(crate) fn polish<O: PenalizedObjective + ?Sized>(
    obj: &O,
    ball: Ball<'_>,
    run: &mut RunOutcome,
    threshold: f64,
    slack: f64,
) {
    for j in 0..run.beta.len() {
        let b = run.beta[j];
        if b == 0.0 || b.abs() >= threshold {
            continue;
        }
        let mut cand = run.beta.clone();
        cand[j] = 0.0;
        if !ball.contains(&cand) {
            continue;
        }
        let fc = obj.value(&cand);
        if fc.is_finite() && fc >= run.value - slack {
            run.beta = cand;
            run.value = fc;
        }
    }
}
