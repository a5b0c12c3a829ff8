//! Brute-force oracles shared by the integration and acceptance tests.
#![allow(dead_code)]

/// Maximum of `f` over the ball `||x - center|| <= radius` in one or two
/// dimensions: a `points`-per-axis grid, then `zooms` finer grids around
/// the incumbent. Returns the maximizer and the value.
pub fn zoom_grid_max(f: &dyn Fn(&[f64]) -> f64, center: &[f64], radius: f64, points: usize, zooms: usize) -> (Vec<f64>, f64) {
    let p = center.len();
    assert!(p == 1 || p == 2, "grid oracle supports p <= 2");
    let inside = |x: &[f64]| x.iter().zip(center).map(|(a, c)| (a - c).powi(2)).sum::<f64>().sqrt() <= radius * (1.0 + 1e-15);
    let mut best = (center.to_vec(), f(center));
    let mut lo: Vec<f64> = center.iter().map(|c| c - radius).collect();
    let mut width = 2.0 * radius;
    for _ in 0..=zooms {
        let step = width / (points - 1) as f64;
        let axis = |j: usize, k: usize| lo[j] + step * k as f64;
        let mut scan = |x: Vec<f64>| {
            if inside(&x) {
                let v = f(&x);
                if v > best.1 {
                    best = (x, v);
                }
            }
        };
        if p == 1 {
            for k in 0..points {
                scan(vec![axis(0, k)]);
            }
        } else {
            for a in 0..points {
                for b in 0..points {
                    scan(vec![axis(0, a), axis(1, b)]);
                }
            }
        }
        width = 4.0 * step;
        lo = best.0.iter().map(|c| c - 2.0 * step).collect();
    }
    best
}

use fgsm_glm::adversarial::AdversarialObjective;
use fgsm_glm::asymptotics::{limit_argmax, limit_objective, LimitProblem, MomentSummary, PenaltyCase};
use fgsm_glm::estimators::{fit_fgsm, EstimatorOptions};
use fgsm_glm::glm::{sample_dataset, CovariateDistribution, LinkFamily, ModelSpec};
use fgsm_glm::penalties::PenaltySpec;
use nalgebra::{DMatrix, DVector};

/// `grid maximum - fit_fgsm value` for both links, `p` in {1, 2}, the four
/// penalty families at `lambda = 1/sqrt(n)`, `n = 40`, `K = 3`.
pub fn fgsm_grid_gaps() -> Vec<(String, f64)> {
    let links = [LinkFamily::LinearGaussian { sigma: 1.0 }, LinkFamily::Logistic];
    let penalties = [PenaltySpec::lasso(1.0), PenaltySpec::scad(1.0), PenaltySpec::lgamma(0.5, 1.0), PenaltySpec::lgamma(2.0, 1.0)];
    let n = 40;
    let mut gaps = Vec::new();
    for (li, link) in links.iter().enumerate() {
        for beta0 in [vec![0.8], vec![1.0, 0.0]] {
            let model = ModelSpec::new(*link, beta0.clone(), CovariateDistribution::standard_gaussian(beta0.len())).unwrap();
            let data = sample_dataset(&model, n, 11 + li as u64).unwrap();
            for pen in penalties {
                let pen = pen.with_lambda(pen.lambda() / (n as f64).sqrt());
                let obj = AdversarialObjective::new(&data, *link, pen).unwrap();
                let opts = EstimatorOptions { ball_radius_k: 3.0, seed: 1, ..Default::default() };
                let fit = fit_fgsm(&obj, &DVector::from_vec(beta0.clone()), &opts).unwrap();
                let f = |b: &[f64]| obj.objective(&DVector::from_row_slice(b)).unwrap();
                let (_, best) = zoom_grid_max(&f, &beta0, 3.0 / (n as f64).sqrt(), 201, 4);
                gaps.push((format!("{} {} p={}", link.name(), pen.family_name(), beta0.len()), best - fit.objective_value));
            }
        }
    }
    gaps
}

/// `grid maximum - limit_argmax value` over the four penalty cases, two
/// `beta0` and three `W` in two dimensions.
pub fn limit_grid_gaps() -> Vec<(String, f64)> {
    let m = DMatrix::from_row_slice(2, 2, &[1.0, 0.4, 0.4, 0.7]);
    let moments = MomentSummary::exact(m, DVector::from_row_slice(&[0.2, -0.1]), 0.8).unwrap();
    let cases = [PenaltyCase::Lasso, PenaltyCase::Scad, PenaltyCase::LGammaGt1 { gamma: 1.5 }, PenaltyCase::LGammaLt1 { gamma: 0.5 }];
    let ws = [[0.3, -1.2], [2.5, 0.8], [-0.4, 0.1]];
    let mut gaps = Vec::new();
    for case in cases {
        for beta0 in [[1.0, 0.0], [0.0, 0.0]] {
            let problem = LimitProblem::new(moments.clone(), case, 1.5, beta0.to_vec(), 10.0).unwrap();
            for w in ws {
                let w = DVector::from_row_slice(&w);
                let draw = limit_argmax(&problem, &w).unwrap();
                let f = |u: &[f64]| limit_objective(&problem, &w, &DVector::from_row_slice(u)).unwrap();
                let (_, best) = zoom_grid_max(&f, &[0.0, 0.0], 10.0, 401, 4);
                gaps.push((format!("{case:?} beta0={beta0:?} W={:?}", w.as_slice()), best - draw.d_value));
            }
        }
    }
    gaps
}
