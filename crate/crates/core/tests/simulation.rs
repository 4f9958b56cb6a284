use mvlab::gaussian_oracle::{kinetic_moments, ou_granular_moments};
use mvlab::metrics::{paired_cost_sq_mean, CostSpec};
use mvlab::particles::{run_pair_with, simulate, Storage};
use mvlab::rates::{example22_kappa, fit_exp_rate, twist_constants};
use mvlab::{GaussianMeasure, GranularModel, InteractionSpec, KineticModel, Model, PotentialSpec, SimConfig};
use nalgebra::DMatrix;

fn ou(lambda: f64, delta: f64) -> Model {
    GranularModel::with_unit_diffusion(
        1,
        PotentialSpec::Quadratic { lambda },
        InteractionSpec::QuadraticPair { delta },
    )
    .unwrap()
    .into()
}

fn moments_cfg(dt: f64, horizon: f64, n: usize, seed: u64, every: usize) -> SimConfig {
    let mut cfg = SimConfig::new(dt, horizon, n, seed);
    cfg.record_every = every;
    cfg.storage = Storage::Moments;
    cfg
}

#[test]
fn ou_mean_matches_closed_form() {
    let init = GaussianMeasure::isotropic(&[1.0], 1.0).unwrap().sample(10_000, 3).unwrap();
    let traj = simulate(&ou(1.0, 0.0), &init, &moments_cfg(1e-3, 1.0, 10_000, 9, 250)).unwrap();
    let m = traj.last().unwrap().moments();
    let (mean, var) = ou_granular_moments(1.0, 0.0, 1.0, 1.0, 1.0).unwrap();
    assert!((mean - (-1.0f64).exp()).abs() < 1e-12);
    assert!((m.mean[0] - mean).abs() < 3.0 * (var / 1e4).sqrt(), "{}", m.mean[0]);
}

#[test]
fn free_particles_spread_like_brownian_motion() {
    let model: Model = GranularModel::with_unit_diffusion(1, PotentialSpec::Quadratic { lambda: 0.0 }, InteractionSpec::none())
        .unwrap()
        .into();
    let init = mvlab::EmpiricalMeasure::new(vec![0.0; 10_000], 1).unwrap();
    let traj = simulate(&model, &init, &moments_cfg(1e-2, 1.0, 10_000, 5, 50)).unwrap();
    for (t, snap) in traj.times.iter().zip(&traj.snapshots).skip(1) {
        let var = snap.moments().cov[(0, 0)];
        let se = 2.0 * t * (2.0f64 / 1e4).sqrt();
        assert!((var - 2.0 * t).abs() < 4.0 * se, "t = {t}: {var}");
    }
}

#[test]
fn kinetic_moments_match_lyapunov_solution() {
    let k = KineticModel::identity(1, 1.0, InteractionSpec::MeanAttraction { theta: 0.0 }).unwrap();
    let init_law = GaussianMeasure::diagonal(&[1.0, 0.0], &[0.5, 2.0]).unwrap();
    let init = init_law.sample(10_000, 21).unwrap();
    let model: Model = k.clone().into();
    let traj = simulate(&model, &init, &moments_cfg(1e-3, 1.0, 10_000, 22, 1000)).unwrap();
    let m = traj.last().unwrap().moments();
    let exact = kinetic_moments(&k, &init_law, 1.0).unwrap();
    for i in 0..2 {
        let sd = exact.cov()[(i, i)].sqrt();
        assert!((m.mean[i] - exact.mean()[i]).abs() < 4.0 * sd / 100.0);
        for j in 0..2 {
            let scale = (exact.cov()[(i, i)] * exact.cov()[(j, j)]).sqrt();
            assert!(
                (m.cov[(i, j)] - exact.cov()[(i, j)]).abs() < 4.0 * scale * (2.0f64 / 1e4).sqrt(),
                "cov[{i},{j}] = {} vs {}",
                m.cov[(i, j)],
                exact.cov()[(i, j)]
            );
        }
    }
}

#[test]
fn results_do_not_depend_on_thread_count() {
    let init = GaussianMeasure::isotropic(&[0.5], 2.0).unwrap().sample(2000, 1).unwrap();
    let mut cfg = SimConfig::new(1e-2, 0.5, 2000, 77);
    cfg.record_every = 10;
    let run = |threads: usize| {
        rayon::ThreadPoolBuilder::new()
            .num_threads(threads)
            .build()
            .unwrap()
            .install(|| simulate(&ou(1.0, 0.3), &init, &cfg).unwrap())
    };
    assert_eq!(run(1), run(4));
}

#[test]
fn synchronous_ou_pairs_contract_deterministically() {
    let p = mvlab::EmpiricalMeasure::from_scalars(&[0.0, 1.0, -2.0]).unwrap();
    let q = mvlab::EmpiricalMeasure::from_scalars(&[1.0, 3.0, -1.5]).unwrap();
    let dt = 1e-3;
    let cfg = SimConfig::new(dt, 1.0, 3, 4);
    let mut last = None;
    run_pair_with(&ou(1.0, 0.0), &p, &q, &cfg, |t, a, b| {
        last = Some((t, a.as_slice()[0] - b.as_slice()[0]));
        Ok(())
    })
    .unwrap();
    let (t, gap) = last.unwrap();
    assert!((t - 1.0).abs() < 1e-12);
    assert!((gap + (1.0f64 - dt).powi(1000)).abs() < 1e-12);
    assert!((gap.abs() - (-1.0f64).exp()).abs() < 1e-3);
}

#[test]
fn kinetic_pairs_contract_in_twisted_metric() {
    let (beta, theta) = (1.0, 0.1);
    let k = KineticModel::identity(1, beta, InteractionSpec::MeanAttraction { theta }).unwrap();
    let model: Model = k.into();
    let n = 2000;
    let p = GaussianMeasure::standard(2).unwrap().sample(n, 1).unwrap();
    let q = GaussianMeasure::isotropic(&[2.0, -1.0], 1.5).unwrap().sample(n, 2).unwrap();
    let (a, r, _) = twist_constants(beta).unwrap();
    let cost = CostSpec::PsiBar { b: DMatrix::identity(1, 1), a, r };
    let mut cfg = SimConfig::new(1e-2, 8.0, n, 3);
    cfg.record_every = 10;
    let (mut ts, mut vs) = (Vec::new(), Vec::new());
    run_pair_with(&model, &p, &q, &cfg, |t, x, y| {
        ts.push(t);
        vs.push(paired_cost_sq_mean(x, y, &cost)?);
        Ok(())
    })
    .unwrap();
    let fit = fit_exp_rate(&ts, &vs, None).unwrap();
    let bound = 2.0 * example22_kappa(beta, theta).unwrap();
    assert!(fit.rate >= 0.9 * bound, "fitted {} vs {}", fit.rate, bound);
}
