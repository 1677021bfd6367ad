//! Library results checked against independent oracles: Monte Carlo,
//! dense algebra and entropy identities.

mod common;

use bpmi_core::acquisition::{bpmi_score, lfmi_score, Strategy, LATENT_NUGGET, PROBABILITY_NUGGET};
use bpmi_core::bfgpc::{
    elbo, fit, joint_latent_posterior, kl_divergences, predict_latent, regularized_loss,
    regularized_loss_gradient, TrainingConfig,
};
use bpmi_core::harness::{initial_design, run_repeat, ExperimentConfig};
use bpmi_core::oracles::{sample_labels, OracleSpec};
use bpmi_core::num_core::{gaussian_mi, gh_expected_bernoulli_loglik, norm_cdf, GaussianJoint};
use bpmi_core::rng;
use bpmi_core::Fidelity;
use common::*;
use nalgebra::{DMatrix, DVector};

#[test]
fn gauss_hermite_matches_monte_carlo() {
    let mut r = rng::stream(1, "gh-mc", &[]);
    for &(mean, var, y) in &[(0.0, 1.0, 1u8), (0.7, 0.5, 0), (-1.2, 2.0, 1)] {
        let sd = f64::sqrt(var);
        let n = 10_000_000;
        let sign = if y == 1 { 1.0 } else { -1.0 };
        let mut sum = 0.0;
        for _ in 0..n / 2 {
            // Antithetic pairs halve the variance at no bias.
            let z = std_normal(&mut r);
            sum += norm_cdf(sign * (mean + sd * z)).ln() + norm_cdf(sign * (mean - sd * z)).ln();
        }
        let mc = sum / n as f64;
        let gh = gh_expected_bernoulli_loglik(mean, var, y, 20).unwrap();
        assert!((gh - mc).abs() < 1e-3, "m={mean} v={var}: gh {gh} mc {mc}");
    }
}

/// Antithetic Monte Carlo mean of E[f(z)], z ~ N(0, 1), with z² − 1 as a
/// control variate (the antithetic pairing removes the odd part already).
fn control_variate_mean(n: usize, r: &mut rng::StreamRng, f: impl Fn(f64) -> f64) -> f64 {
    let pairs = n / 2;
    let (mut sa, mut sc, mut scc, mut sac) = (0.0, 0.0, 0.0, 0.0);
    for _ in 0..pairs {
        let z = std_normal(r);
        let a = f(z);
        let c = z * z - 1.0;
        sa += a;
        sc += c;
        scc += c * c;
        sac += a * c;
    }
    let k = pairs as f64;
    let (ma, mc) = (sa / k, sc / k);
    let beta = (sac / k - ma * mc) / (scc / k - mc * mc);
    ma - beta * mc
}

/// ELBO by Monte Carlo over the dense marginals, KL by the dense formula.
fn monte_carlo_elbo(model: &bpmi_core::bfgpc::BfgpcModel, data: &bpmi_core::bfgpc::LabeledDataset, seed: u64) -> f64 {
    let mut rows = Vec::new();
    let mut labels = Vec::new();
    for (fid, obs) in [(Fidelity::Low, &data.lf), (Fidelity::High, &data.hf)] {
        for o in obs.iter() {
            rows.push((o.x.clone(), fid));
            labels.push(o.y);
        }
    }
    let (mean, cov) = dense_joint(model, &rows);
    let mut r = rng::stream(seed, "elbo-mc", &[]);
    let n = 1_000_000;
    let mut ell = 0.0;
    for i in 0..rows.len() {
        let sd = cov[(i, i)].sqrt();
        let sign = if labels[i] == 1 { 1.0 } else { -1.0 };
        ell += control_variate_mean(n, &mut r, |z| {
            0.5 * (norm_cdf(sign * (mean[i] + sd * z)).ln() + norm_cdf(sign * (mean[i] - sd * z)).ln())
        });
    }
    let kl = |latent: &bpmi_core::bfgpc::LatentGp| {
        let k = kzz(latent);
        let kinv = k.clone().try_inverse().unwrap();
        let s = &latent.var_chol * latent.var_chol.transpose();
        let r = latent.var_mean.map(|v| v - latent.mean_const);
        let m = k.nrows() as f64;
        0.5 * ((&kinv * &s).trace() + (r.transpose() * &kinv * &r)[0] - m + k.lu().determinant().ln()
            - s.lu().determinant().ln())
    };
    ell - kl(&model.lf) - kl(&model.delta)
}

#[test]
fn elbo_matches_monte_carlo_oracle() {
    for seed in 0..3 {
        let model = random_model(seed, 2, 2);
        let data = random_data(seed, 3, 2);
        let lib = elbo(&model, &data, 20).unwrap();
        let mc = monte_carlo_elbo(&model, &data, seed);
        assert!((lib - mc).abs() < 2e-3, "seed {seed}: lib {lib} mc {mc}");
    }
}

#[test]
fn kl_matches_dense_formula() {
    let model = random_model(9, 5, 3);
    let (kl_l, kl_d) = kl_divergences(&model).unwrap();
    let dense = |latent: &bpmi_core::bfgpc::LatentGp| {
        let k = kzz(latent);
        let kinv = k.clone().try_inverse().unwrap();
        let s = &latent.var_chol * latent.var_chol.transpose();
        let r = latent.var_mean.map(|v| v - latent.mean_const);
        0.5 * ((&kinv * &s).trace() + (r.transpose() * &kinv * &r)[0] - k.nrows() as f64
            + k.lu().determinant().ln()
            - s.lu().determinant().ln())
    };
    assert!((kl_l - dense(&model.lf)).abs() < 1e-8 * kl_l.abs().max(1.0));
    assert!((kl_d - dense(&model.delta)).abs() < 1e-8 * kl_d.abs().max(1.0));
}

#[test]
fn predictive_moments_match_dense_oracle() {
    for seed in 0..5 {
        let model = random_model(seed, 6, 4);
        let mut r = rng::stream(seed, "pred", &[]);
        let mut pts = random_points(&mut r, 4);
        pts.push(model.lf.inducing.row(0).iter().copied().collect());
        for fid in [Fidelity::Low, Fidelity::High] {
            let (mu, var) = predict_latent(&model, &pts, fid).unwrap();
            let rows: Vec<_> = pts.iter().map(|x| (x.clone(), fid)).collect();
            let (dm, dc) = dense_joint(&model, &rows);
            for i in 0..pts.len() {
                assert!((mu[i] - dm[i]).abs() < 1e-8, "mean {i}: {} vs {}", mu[i], dm[i]);
                assert!((var[i] - dc[(i, i)]).abs() < 1e-8, "var {i}: {} vs {}", var[i], dc[(i, i)]);
            }
        }
    }
}

#[test]
fn joint_posterior_matches_dense_assembly() {
    let model = random_model(3, 5, 4);
    let mut r = rng::stream(3, "joint", &[]);
    let p = random_points(&mut r, 3);
    // Includes a location shared by an L and an H query and a test point.
    let queries = vec![(p[0].clone(), Fidelity::Low), (p[0].clone(), Fidelity::High), (p[1].clone(), Fidelity::Low)];
    let tests = vec![p[0].clone(), p[2].clone()];
    let joint = joint_latent_posterior(&model, &queries, &tests).unwrap();
    let mut rows = queries.clone();
    rows.extend(tests.iter().map(|x| (x.clone(), Fidelity::High)));
    let (dm, dc) = dense_joint(&model, &rows);
    assert!((&joint.mean - dm).abs().max() < 1e-10);
    assert!((&joint.cov - dc).abs().max() < 1e-10);
}

#[test]
fn gaussian_mi_matches_entropy_identity() {
    let mut r = rng::stream(5, "mi", &[]);
    for n in 2..=8 {
        for _ in 0..5 {
            let cov = random_spd(&mut r, n);
            let k = 1 + (n - 1) / 2;
            let a: Vec<usize> = (0..k).collect();
            let b: Vec<usize> = (k..n).collect();
            let joint = GaussianJoint::new(DVector::zeros(n), cov.clone()).unwrap();
            let lib = gaussian_mi(&joint, &a, &b).unwrap();
            let oracle = entropy_mi(&cov, &a, &b);
            assert!((lib - oracle).abs() < 1e-9, "n={n}: {lib} vs {oracle}");
        }
    }
}

fn nugget(mut c: DMatrix<f64>, eps: f64) -> DMatrix<f64> {
    for i in 0..c.nrows() {
        c[(i, i)] += eps;
    }
    c
}

#[test]
fn mi_scores_match_dense_assembly() {
    for seed in 0..4 {
        let model = random_model(seed, 6, 4);
        let mut r = rng::stream(seed, "lfmi", &[]);
        let p = random_points(&mut r, 5);
        let queries = vec![(p[0].clone(), Fidelity::Low), (p[1].clone(), Fidelity::High)];
        let tests = p[2..].to_vec();
        let mut rows = queries.clone();
        rows.extend(tests.iter().map(|x| (x.clone(), Fidelity::High)));
        let (mean, cov) = dense_joint(&model, &rows);
        let a = [0, 1];
        let b = [2, 3, 4];

        let lf_oracle = entropy_mi(&nugget(cov.clone(), LATENT_NUGGET), &a, &b);
        let lf = lfmi_score(&model, &queries, &tests).unwrap();
        assert!((lf - lf_oracle).abs() < 1e-9, "lfmi {lf} vs {lf_oracle}");

        let d = mean.map(|m| (-0.5 * m * m).exp() / (2.0 * std::f64::consts::PI).sqrt());
        let cov_p = DMatrix::from_fn(5, 5, |i, j| d[i] * d[j] * cov[(i, j)]);
        let bp_oracle = entropy_mi(&nugget(cov_p, PROBABILITY_NUGGET), &a, &b);
        let bp = bpmi_score(&model, &queries, &tests).unwrap();
        assert!((bp - bp_oracle).abs() < 1e-9, "bpmi {bp} vs {bp_oracle}");
    }
}

#[test]
fn query_at_test_location_dominates() {
    let model = random_model(2, 6, 4);
    let mut r = rng::stream(2, "colocated", &[]);
    let t = random_points(&mut r, 1)[0].clone();
    let colocated = lfmi_score(&model, &[(t.clone(), Fidelity::High)], std::slice::from_ref(&t)).unwrap();
    // Matches the 2×2 assembly: correlation limited only by the nugget.
    let (_, c) = dense_joint(&model, &[(t.clone(), Fidelity::High), (t.clone(), Fidelity::High)]);
    let oracle = entropy_mi(&nugget(c, LATENT_NUGGET), &[0], &[1]);
    assert!((colocated - oracle).abs() < 1e-9 * oracle.max(1.0));
    for x in random_points(&mut r, 20) {
        for fid in [Fidelity::Low, Fidelity::High] {
            let other = lfmi_score(&model, &[(x.clone(), fid)], std::slice::from_ref(&t)).unwrap();
            assert!(colocated > other, "{colocated} vs {other}");
        }
    }
}

#[test]
fn gradient_matches_central_differences_public_api() {
    let config = TrainingConfig::default();
    let model = random_model(1, 3, 2);
    let data = random_data(1, 3, 2);
    let (loss, grad) = regularized_loss_gradient(&model, &data, &config).unwrap();
    assert!((loss - regularized_loss(&model, &data, &config).unwrap()).abs() < 1e-12 * loss.abs().max(1.0));
    let theta = model.parameters();
    for k in 0..theta.len() {
        let h = 1e-5 * theta[k].abs().max(1.0);
        let at = |d: f64| {
            let mut m = model.clone();
            let mut t = theta.clone();
            t[k] += d;
            m.set_parameters(&t).unwrap();
            regularized_loss(&m, &data, &config).unwrap()
        };
        let fd = (at(h) - at(-h)) / (2.0 * h);
        assert!((fd - grad[k]).abs() <= 1e-3 * fd.abs().max(grad[k].abs()).max(1e-2), "param {k}: {fd} vs {}", grad[k]);
    }
}

#[test]
fn training_increases_elbo_on_linear_toy() {
    let config = ExperimentConfig::default();
    let training = TrainingConfig {
        restarts: 1,
        ..TrainingConfig::default()
    };
    let mut increased = 0;
    for seed in 0..20u64 {
        let data = initial_design(&config, &mut rng::stream(seed, "elbo-increase", &[])).unwrap();
        let fitted = fit(&config.oracle.domain(), &data, &TrainingConfig { seed, ..training.clone() }).unwrap();
        let trace = &fitted.elbo_trace;
        assert_eq!(trace.len(), training.steps + 1);
        if trace[trace.len() - 1] >= trace[0] {
            increased += 1;
        }
    }
    assert!(increased >= 19, "ELBO increased in {increased}/20 runs");
}


#[test]
fn joint_posterior_matches_hierarchical_sampling() {
    let model = random_model(4, 4, 3);
    let mut r = rng::stream(4, "hier", &[]);
    let p = random_points(&mut r, 3);
    let queries = vec![(p[0].clone(), Fidelity::Low), (p[1].clone(), Fidelity::High)];
    let tests = vec![p[1].clone(), p[2].clone()];
    let joint = joint_latent_posterior(&model, &queries, &tests).unwrap();
    let mut rows = queries.clone();
    rows.extend(tests.iter().map(|x| (x.clone(), Fidelity::High)));
    let (mean, cov) = hierarchical_moments(&model, &rows, 1_000_000, &mut r);
    for i in 0..4 {
        assert!((mean[i] - joint.mean[i]).abs() < 5e-3, "mean {i}: {} vs {}", mean[i], joint.mean[i]);
        for j in 0..4 {
            let scale = (joint.cov[(i, i)] * joint.cov[(j, j)]).sqrt().max(1.0);
            assert!(
                (cov[(i, j)] - joint.cov[(i, j)]).abs() < 5e-3 * scale,
                "cov ({i},{j}): {} vs {}",
                cov[(i, j)],
                joint.cov[(i, j)]
            );
        }
    }
}

#[test]
fn toy_labels_follow_the_probability_field() {
    let oracle = OracleSpec::toy_linear();
    let x = vec![0.5, 0.45];
    for fid in [Fidelity::Low, Fidelity::High] {
        let p = oracle.probability(&x, fid).unwrap();
        let n = 100_000;
        let labels = sample_labels(&oracle, &vec![(x.clone(), fid); n], &mut rng::stream(8, "lln", &[])).unwrap();
        let freq = labels.iter().map(|&y| y as f64).sum::<f64>() / n as f64;
        assert!((freq - p).abs() < 0.005, "{fid:?}: freq {freq} vs p {p}");
    }
}

#[test]
fn harness_grows_the_dataset_by_each_batch() {
    let config = ExperimentConfig {
        strategy: Strategy::Random,
        init_lf: 10,
        init_hf: 5,
        rounds: 3,
        round_budget: 2.0,
        n_repeats_of_experiment: 1,
        test_set_size: 200,
        training: TrainingConfig { steps: 20, restarts: 1, ..TrainingConfig::default() },
        ..ExperimentConfig::default()
    };
    let log = run_repeat(&config, 0).unwrap();
    assert!(!log.failed());
    assert_eq!(log.records.len(), 4);
    assert_eq!(log.batches.len(), 3);
    let (c_l, c_h) = config.costs;
    assert_eq!(log.records[0].cumulative_cost, 0.0);
    for (k, batch) in log.batches.iter().enumerate() {
        let sample_cost: f64 = batch
            .queries
            .iter()
            .map(|q| {
                assert_eq!(q.samples.len(), q.repeats as usize);
                q.samples.len() as f64 * if q.fidelity == Fidelity::Low { c_l } else { c_h }
            })
            .sum();
        assert!((sample_cost - batch.total_cost).abs() < 1e-12);
        let step = log.records[k + 1].cumulative_cost - log.records[k].cumulative_cost;
        assert!((step - batch.total_cost).abs() < 1e-9);
        assert_eq!(log.records[k + 1].n_lf_queries, batch.count(Fidelity::Low));
        assert_eq!(log.records[k + 1].n_hf_queries, batch.count(Fidelity::High));
    }
}
