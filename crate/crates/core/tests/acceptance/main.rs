//! Acceptance suite: one PASS/FAIL line per criterion, nonzero exit on any failure.

#[path = "../common/mod.rs"]
mod common;

use std::path::Path;
use std::time::{Duration, Instant};

use fgsm_glm::adversarial::AdversarialObjective;
use fgsm_glm::asymptotics::{
    check_rates, compute_moments, limit_argmax, probe_sign_conditions, validate_tail, LambdaSchedule, LimitProblem, PenaltyCase,
};
use fgsm_glm::estimators::{fit_fgsm, fit_mle, fit_penalized_likelihood, EstimatorOptions};
use fgsm_glm::glm::{loglik_xy, sample_dataset, CovariateDistribution, LinkFamily, ModelSpec};
use fgsm_glm::harness::{execute, oracle_study, sign_neutrality_study, ExperimentConfig, PenaltyFamily, RECORDS_FILE};
use fgsm_glm::penalties::PenaltySpec;
use fgsm_glm::rng::stream;
use nalgebra::{DMatrix, DVector};
use rand::Rng;

type Outcome = Result<String, String>;

fn ensure(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn within_time(outcome: Outcome, elapsed: Duration, limit_s: f64) -> Outcome {
    let secs = elapsed.as_secs_f64();
    match outcome {
        Ok(d) if secs < limit_s => Ok(format!("{d}; {secs:.1}s < {limit_s}s")),
        Ok(d) => Err(format!("{d}; {secs:.1}s exceeds {limit_s}s")),
        Err(d) => Err(d),
    }
}

fn gaussian(link: LinkFamily, beta0: &[f64]) -> ModelSpec {
    ModelSpec::new(link, beta0.to_vec(), CovariateDistribution::standard_gaussian(beta0.len())).unwrap()
}

fn linear(sigma: f64) -> LinkFamily {
    LinkFamily::LinearGaussian { sigma }
}

fn reduction_identity() -> Outcome {
    let beta0 = [1.0, -0.5, 0.25];
    let model = gaussian(linear(1.0), &beta0);
    let center = DVector::from_row_slice(&beta0);
    let opts = EstimatorOptions { restarts: 2, step_tolerance: 1e-13, objective_tolerance: 1e-12, ..Default::default() };
    let mut worst = 0.0f64;
    for seed in 0..20 {
        let data = sample_dataset(&model, 500, 1000 + seed).map_err(|e| e.to_string())?;
        let zero = PenaltySpec::lasso(0.0);
        let obj = AdversarialObjective::new(&data, linear(1.0), zero).map_err(|e| e.to_string())?;
        let a = fit_fgsm(&obj, &center, &opts).map_err(|e| e.to_string())?;
        let b = fit_penalized_likelihood(&data, linear(1.0), zero, &center, &opts).map_err(|e| e.to_string())?;
        let c = fit_mle(&data, linear(1.0)).map_err(|e| e.to_string())?;
        let gap = |u: &[f64], v: &[f64]| u.iter().zip(v).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max);
        worst = worst.max(gap(&a.beta_hat, &c.beta_hat)).max(gap(&b.beta_hat, &c.beta_hat));
    }
    ensure(worst <= 1e-5, format!("max ||dbeta||_inf = {worst:.2e} (tol 1e-5) over 20 seeds"))
}

fn fgsm_equivalence() -> Outcome {
    let lambda = 0.3;
    let mut compared = 0usize;
    let mut mismatches = 0usize;
    for block in 0..10u64 {
        let mut rng = stream(500 + block);
        let beta: Vec<f64> = (0..3).map(|_| rng.random_range(-2.0..2.0)).collect();
        let model = gaussian(LinkFamily::Logistic, &beta);
        let data = sample_dataset(&model, 100, 900 + block).map_err(|e| e.to_string())?;
        let b = DVector::from_vec(beta.clone());
        let obj = AdversarialObjective::new(&data, LinkFamily::Logistic, PenaltySpec::lasso(lambda)).map_err(|e| e.to_string())?;
        let perturbed = obj.perturb(&b).map_err(|e| e.to_string())?;
        for i in 0..data.n() {
            let theta: f64 = (0..3).map(|j| data.x[(i, j)] * beta[j]).sum();
            let e_i = data.y[i] - LinkFamily::Logistic.b1(theta);
            let row = |dx: usize, h: f64| {
                let x = DMatrix::from_fn(1, 3, |_, j| data.x[(i, j)] + if j == dx { h } else { 0.0 });
                loglik_xy(&x, &DVector::from_element(1, data.y[i]), &b, &LinkFamily::Logistic).unwrap()
            };
            for j in 0..3 {
                if e_i.abs() < 1e-9 || beta[j].abs() < 1e-9 {
                    continue;
                }
                let h = 1e-6;
                let grad = (row(j, h) - row(j, -h)) / (2.0 * h);
                let expected = -lambda * grad.signum();
                let got = perturbed.x_tilde[(i, j)] - data.x[(i, j)];
                compared += 1;
                if (got - expected).abs() > 1e-12 {
                    mismatches += 1;
                }
            }
        }
    }
    ensure(mismatches == 0 && compared > 2500, format!("{mismatches} mismatches over {compared} coordinates of 1000 observations"))
}

fn simpson(f: &dyn Fn(f64) -> f64, a: f64, b: f64, panels: usize) -> f64 {
    let h = (b - a) / panels as f64;
    let mut s = f(a) + f(b);
    for k in 1..panels {
        s += f(a + h * k as f64) * if k % 2 == 1 { 4.0 } else { 2.0 };
    }
    s * h / 3.0
}

fn scad_derivative() -> Outcome {
    let pen = PenaltySpec::scad(1.0);
    let d = [pen.derivative(0.5), pen.derivative(2.0), pen.derivative(5.0)];
    let spots = (d[0] - 1.0).abs() <= 1e-12 && (d[1] - 0.629630).abs() <= 1e-6 && d[2].abs() <= 1e-12;
    let mut worst = 0.0f64;
    for lambda in [1.0, 0.35] {
        let pen = PenaltySpec::scad(lambda);
        let knots = [lambda, 3.7 * lambda, f64::INFINITY];
        for k in 0..50 {
            let theta = 0.05 + 0.16 * k as f64 * lambda;
            let mut integral = 0.0;
            let mut lo = 0.0;
            for knot in knots {
                let hi = knot.min(theta);
                if hi > lo {
                    // derivative(0) is 0 by convention; the integrand needs the right limit
                    integral += simpson(&|t| pen.derivative(t.max(f64::MIN_POSITIVE)), lo, hi, 2000);
                }
                lo = lo.max(hi);
            }
            worst = worst.max((pen.value_scalar(theta) - integral).abs()).max((pen.value_scalar(-theta) - integral).abs());
        }
    }
    ensure(
        spots && worst <= 1e-8,
        format!("p'(0.5)={:.6} p'(2)={:.6} p'(5)={:.6}; quadrature gap {worst:.1e} on 100 points (tol 1e-8)", d[0], d[1], d[2]),
    )
}

fn smooth_point(obj: &AdversarialObjective, pen: &PenaltySpec, rng: &mut impl Rng) -> DVector<f64> {
    let lambda = pen.lambda();
    loop {
        let b: DVector<f64> = DVector::from_fn(3, |_, _| rng.random_range(-2.0..2.0));
        let clear_of_kinks = b.iter().all(|v| {
            let a = v.abs();
            a > 0.05 && (!matches!(pen, PenaltySpec::Scad { .. }) || ((a - lambda).abs() > 1e-3 && (a - 3.7 * lambda).abs() > 1e-3))
        });
        let data = obj.dataset();
        let theta = &data.x * &b;
        let clear_of_ties = (0..data.n()).all(|i| (data.y[i] - obj.link().b1(theta[i])).abs() > 1e-3);
        if clear_of_kinks && clear_of_ties {
            return b;
        }
    }
}

fn gradient_correctness() -> Outcome {
    let penalties = [PenaltySpec::lasso(0.3), PenaltySpec::scad(0.3), PenaltySpec::lgamma(0.5, 0.3), PenaltySpec::lgamma(2.0, 0.3)];
    let mut worst = 0.0f64;
    let mut combos = 0;
    for (li, link) in [linear(1.0), LinkFamily::Logistic].into_iter().enumerate() {
        let data = sample_dataset(&gaussian(link, &[0.8, -0.4, 0.0]), 30, 40 + li as u64).map_err(|e| e.to_string())?;
        for (pi, pen) in penalties.iter().enumerate() {
            combos += 1;
            let obj = AdversarialObjective::new(&data, link, *pen).map_err(|e| e.to_string())?;
            let mut rng = stream(7000 + 10 * li as u64 + pi as u64);
            for _ in 0..100 {
                let b = smooth_point(&obj, pen, &mut rng);
                let g = obj.subgradient(&b).map_err(|e| e.to_string())?;
                for j in 0..3 {
                    let h = 1e-5 * (1.0 + b[j].abs());
                    let mut up = b.clone();
                    up[j] += h;
                    let mut down = b.clone();
                    down[j] -= h;
                    let fd = (obj.objective(&up).unwrap() - obj.objective(&down).unwrap()) / (2.0 * h);
                    worst = worst.max((g[j] - fd).abs() / g[j].abs().max(1.0));
                }
            }
        }
    }
    ensure(worst <= 1e-5, format!("max relative error {worst:.1e} (tol 1e-5) over {combos} combinations x 100 points"))
}

fn grid_oracles() -> Outcome {
    let fgsm = common::fgsm_grid_gaps();
    let limit = common::limit_grid_gaps();
    let fw = fgsm.iter().map(|g| g.1.abs()).fold(0.0, f64::max);
    let lw = limit.iter().map(|g| g.1.abs()).fold(0.0, f64::max);
    ensure(
        fw <= 1e-4 && lw <= 1e-6,
        format!("fit_fgsm gap {fw:.1e} (tol 1e-4) on {} problems; limit_argmax gap {lw:.1e} (tol 1e-6) on {} problems", fgsm.len(), limit.len()),
    )
}

fn experiment_config(dir: &Path, model: ModelSpec, penalty: PenaltyFamily, lambda0: f64, n_grid: Vec<usize>, replications: usize) -> ExperimentConfig {
    ExperimentConfig {
        model,
        penalty,
        lambda0,
        rate_exponent: None,
        n_grid,
        replications,
        estimator_options: EstimatorOptions { restarts: 2, ..Default::default() },
        limit_draws: 0,
        master_seed: 20261015,
        output_dir: dir.to_path_buf(),
        moment_samples: 200_000,
        baseline: false,
        threads: Some(1),
        record_timing: false,
    }
}

fn consistency_config(dir: &Path, link: LinkFamily) -> ExperimentConfig {
    experiment_config(dir, gaussian(link, &[1.0, -0.5, 0.0]), PenaltyFamily::Lasso, 0.5, vec![200, 800, 3200, 12800], 400)
}

fn consistency(dir: &Path) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for link in [linear(1.0), LinkFamily::Logistic] {
        let cfg = consistency_config(&dir.join(link.name()), link);
        let run = execute(&cfg).map_err(|e| e.to_string())?;
        let slope = run.report.fgsm.consistency_slope.unwrap_or(f64::NAN);
        ok &= (-0.15..=0.15).contains(&slope);
        parts.push(format!("{} slope {slope:+.3}", link.name()));
    }
    ensure(ok, format!("{} (range [-0.15, 0.15])", parts.join(", ")))
}

fn weak_limit(dir: &Path) -> Outcome {
    let mut parts = Vec::new();
    let mut ok = true;
    for family in [PenaltyFamily::Lasso, PenaltyFamily::Scad { a: 3.7 }] {
        let mut cfg = experiment_config(&dir.join(family.name()), gaussian(linear(1.0), &[1.0, 0.0]), family, 2.0, vec![12800], 1000);
        cfg.limit_draws = 1000;
        let run = execute(&cfg).map_err(|e| e.to_string())?;
        let ks = &run.report.fgsm.ks_statistics;
        let stats: Vec<f64> = ks.iter().map(|k| k.statistic.unwrap_or(f64::NAN)).collect();
        ok &= !stats.is_empty() && stats.iter().all(|s| *s <= 0.10);
        parts.push(format!("{} KS {:?}", family.name(), stats.iter().map(|s| format!("{s:.3}")).collect::<Vec<_>>()));
    }
    ensure(ok, format!("{} (tol 0.10)", parts.join(", ")))
}

fn noise_scaling() -> Outcome {
    let beta0 = [1.0, -0.5];
    let w = DVector::from_row_slice(&[0.7, -0.3]);
    let lambda0 = 1.0;
    let mut abs_eps = Vec::new();
    let mut shrink = Vec::new();
    let mut worst = 0.0f64;
    for sigma in [1.0, 2.0] {
        let moments = compute_moments(&gaussian(linear(sigma), &beta0), 100_000, 31).map_err(|e| e.to_string())?;
        let problem = LimitProblem::new(moments.clone(), PenaltyCase::LGammaGt1 { gamma: 2.0 }, lambda0, beta0.to_vec(), 10.0)
            .map_err(|e| e.to_string())?;
        let draw = limit_argmax(&problem, &w).map_err(|e| e.to_string())?;
        let m = moments.m_matrix();
        let kappa = lambda0 * moments.mean_abs_eps;
        let norm2: f64 = beta0.iter().map(|b| b * b).sum();
        let h = &w - DVector::from_row_slice(&beta0) * (2.0 * kappa) + moments.v_vector() * (lambda0 * norm2);
        let chol = m.clone().cholesky().ok_or("M not positive definite")?;
        let closed = chol.solve(&h);
        worst = worst.max((DVector::from_row_slice(&draw.u_star) - &closed).amax());
        shrink.push((chol.solve(&w) - DVector::from_row_slice(&draw.u_star)).norm());
        abs_eps.push(moments.mean_abs_eps);
    }
    let ratio = abs_eps[1] / abs_eps[0];
    ensure(
        (1.9..=2.1).contains(&ratio) && shrink[1] > shrink[0] && worst <= 1e-6,
        format!("E|eps| ratio {ratio:.4}; shrinkage {:.4} -> {:.4}; closed-form gap {worst:.1e} (tol 1e-6)", shrink[0], shrink[1]),
    )
}

fn sign_neutrality(dir: &Path) -> Outcome {
    let beta0 = [1.0, -0.5];
    let designs = [
        CovariateDistribution::standard_gaussian(2),
        CovariateDistribution::standard_gaussian(2).shifted(vec![1.5, 1.0]),
        CovariateDistribution::UniformBox { lower: vec![0.0, -1.0], upper: vec![2.0, 3.0] },
        CovariateDistribution::Gaussian { mean: vec![0.5, -0.5], covariance: vec![vec![1.0, 0.6], vec![0.6, 2.0]] },
    ];
    let mut linear_ok = true;
    let mut linear_worst = 0.0f64;
    for (i, d) in designs.iter().enumerate() {
        let model = ModelSpec::new(linear(1.0), beta0.to_vec(), d.clone()).map_err(|e| e.to_string())?;
        let mo = compute_moments(&model, 200_000, 60 + i as u64).map_err(|e| e.to_string())?;
        let v = DVector::from_row_slice(&mo.v);
        let se = DVector::from_row_slice(&mo.mc_standard_errors.v);
        linear_ok &= v.norm() <= 3.0 * se.norm();
        linear_worst = linear_worst.max(v.norm() / se.norm());
    }
    let base = CovariateDistribution::standard_gaussian(2);
    let model = ModelSpec::new(LinkFamily::Logistic, beta0.to_vec(), base).map_err(|e| e.to_string())?;
    let mut cfg = experiment_config(dir, model.clone(), PenaltyFamily::Lasso, 2.0, vec![3200], 400);
    cfg.estimator_options.ball_radius_k = 30.0;
    cfg.limit_draws = 2000;
    let study = sign_neutrality_study(&model, &[vec![1.5, 1.0]], &cfg).map_err(|e| e.to_string())?;
    let row = &study.rows[0];
    let cosine = row.cosine.unwrap_or(f64::NAN);
    let logistic_ok = row.v_norm > 5.0 * row.v_max_se && cosine > 0.7;
    ensure(
        linear_ok && logistic_ok,
        format!(
            "linear max ||V||/||se|| {linear_worst:.2} over {} designs (tol 3); logistic ||V|| = {:.1} se, bias cosine {cosine:.3} (tol 0.7)",
            designs.len(),
            row.v_norm / row.v_max_se
        ),
    )
}

fn weak_oracle(dir: &Path) -> Outcome {
    let model = gaussian(linear(1.0), &[3.0, 1.5, 0.0, 0.0]);
    let cfg = experiment_config(dir, model, PenaltyFamily::Scad { a: 3.7 }, 1.0, vec![12800], 400);
    let study = oracle_study(&cfg, &[0.5, 1.0, 2.0, 4.0, 8.0]).map_err(|e| e.to_string())?;
    let rates: Vec<String> = study.rows.iter().map(|r| format!("{}:{:.3}", r.lambda0, r.zero_block_rate)).collect();
    ensure(
        study.best_zero_block_rate >= 0.9 && study.monotone,
        format!("P(beta_hat_2 = 0) by lambda0 [{}]; best {:.3} (tol 0.9); monotone {}", rates.join(" "), study.best_zero_block_rate, study.monotone),
    )
}

fn condition_probes() -> Outcome {
    let grid = [100, 1_000, 10_000, 100_000];
    let beta0 = [1.5, -0.8, 0.0];
    let cases = [
        PenaltySpec::lgamma(2.0, 1.0),
        PenaltySpec::lasso(1.0),
        PenaltySpec::lgamma(0.5, 1.0),
        PenaltySpec::scad(1.0),
    ];
    let mut rates_ok = true;
    for pen in cases {
        let schedule = LambdaSchedule::for_case(1.0, PenaltyCase::of(&pen));
        let check = check_rates(&pen, |n| schedule.at(n), &beta0, &grid).map_err(|e| e.to_string())?;
        rates_ok &= check.pass;
        let constant = check_rates(&pen, |_| 1.0, &beta0, &grid).map_err(|e| e.to_string())?;
        rates_ok &= !constant.pass;
    }
    let mut slopes = Vec::new();
    for link in [linear(1.0), LinkFamily::Logistic] {
        let probe = probe_sign_conditions(&gaussian(link, &[1.0, -0.5]), 1.0, &grid, 100_000, 77).map_err(|e| e.to_string())?;
        slopes.push(probe.sign_slope);
    }
    let slopes_ok = slopes.iter().all(|s| *s <= -0.3);
    let logistic = |cov: CovariateDistribution| ModelSpec::new(LinkFamily::Logistic, vec![1.0, -0.5], cov).unwrap();
    let stable_cases = [
        logistic(CovariateDistribution::standard_gaussian(2)),
        logistic(CovariateDistribution::UniformBox { lower: vec![-1.0, -1.0], upper: vec![1.0, 1.0] }),
    ];
    let mut tail_ok = true;
    for (i, model) in stable_cases.iter().enumerate() {
        tail_ok &= validate_tail(model, 2, 200_000, 90 + i as u64).map_err(|e| e.to_string())?.stable;
    }
    let heavy = logistic(CovariateDistribution::HeavyTailed { scale: vec![1.0, 1.0] });
    tail_ok &= !validate_tail(&heavy, 2, 200_000, 99).map_err(|e| e.to_string())?.stable;
    ensure(
        rates_ok && slopes_ok && tail_ok,
        format!(
            "rate checks {}; sign-term slopes linear {:.2} logistic {:.2} (tol -0.3); tail checks {}",
            if rates_ok { "as expected" } else { "wrong" },
            slopes[0],
            slopes[1],
            if tail_ok { "as expected" } else { "wrong" }
        ),
    )
}

fn determinism(dir: &Path, first: &Path) -> Outcome {
    let mut cfg = consistency_config(dir, linear(1.0));
    cfg.threads = Some(4);
    execute(&cfg).map_err(|e| e.to_string())?;
    let a = std::fs::read(first.join(RECORDS_FILE)).map_err(|e| e.to_string())?;
    let b = std::fs::read(dir.join(RECORDS_FILE)).map_err(|e| e.to_string())?;
    ensure(a == b, format!("records.csv with 1 and 4 threads: {} vs {} bytes, identical {}", a.len(), b.len(), a == b))
}

fn main() {
    let work = tempfile::tempdir().expect("temp dir");
    let root = work.path();
    let consistency_dir = root.join("consistency");
    let criteria: Vec<(&str, Option<f64>, Box<dyn Fn() -> Outcome>)> = vec![
        ("reduction identity", Some(10.0), Box::new(reduction_identity)),
        ("FGSM equivalence", Some(5.0), Box::new(fgsm_equivalence)),
        ("SCAD derivative", None, Box::new(scad_derivative)),
        ("gradient correctness", None, Box::new(gradient_correctness)),
        ("grid oracles", Some(60.0), Box::new(grid_oracles)),
        ("root-n consistency", None, Box::new(|| consistency(&consistency_dir))),
        ("weak limit agreement", None, Box::new(|| weak_limit(&root.join("weak_limit")))),
        ("noise scaling", None, Box::new(noise_scaling)),
        ("sign neutrality", None, Box::new(|| sign_neutrality(&root.join("sign")))),
        ("weak oracle", None, Box::new(|| weak_oracle(&root.join("oracle")))),
        ("condition probes", None, Box::new(condition_probes)),
        ("determinism", None, Box::new(|| determinism(&root.join("determinism"), &consistency_dir.join(linear(1.0).name())))),
    ];
    let mut failures = 0;
    for (i, (name, limit, run)) in criteria.iter().enumerate() {
        let start = Instant::now();
        let outcome = run();
        let outcome = match limit {
            Some(s) => within_time(outcome, start.elapsed(), *s),
            None => outcome.map(|d| format!("{d}; {:.1}s", start.elapsed().as_secs_f64())),
        };
        match outcome {
            Ok(d) => println!("PASS {:>2} {name}: {d}", i + 1),
            Err(d) => {
                failures += 1;
                println!("FAIL {:>2} {name}: {d}", i + 1)
            }
        }
    }
    println!("{} of {} criteria passed", criteria.len() - failures, criteria.len());
    if failures > 0 {
        std::process::exit(1);
    }
}
