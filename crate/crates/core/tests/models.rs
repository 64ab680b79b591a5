use bcbf::belief::{sample_initial_belief, BeliefState, GaussianMixture};
use bcbf::sde_models::{stream, ControlInput, ModelParams, ObjectState, RobotState};
use nalgebra::Vector2;

fn mixture() -> GaussianMixture {
    GaussianMixture {
        weights: vec![0.6, 0.4],
        means: vec![[1.0, 0.0], [-1.0, 2.0]],
        covariances: vec![[[0.04, 0.01], [0.01, 0.09]], [[0.01, 0.0], [0.0, 0.01]]],
    }
}

#[test]
fn object_diffusion_moments() {
    // After T seconds: mean q0 + v T, variance d^2 T per axis.
    let params = ModelParams { d_diag: [0.2, 0.1], ..ModelParams::default() };
    let v = Vector2::new(0.5, -0.25);
    let (dt, steps) = (0.01, 100);
    let b0 = BeliefState::new(vec![ObjectState::new(0.0, 0.0); 20_000]).unwrap();
    let mut rng = stream(5, 3);
    let mut b = b0;
    for _ in 0..steps {
        b.propagate_in_place(&v, &params.d(), dt, &mut rng).unwrap();
    }
    let t = dt * steps as f64;
    let (mean, cov) = b.moments();
    // Standard errors of the mean are about 1.4e-3 and 7e-4.
    assert!((mean - v * t).amax() < 6e-3, "{mean:?}");
    assert!((cov[(0, 0)] - 0.04 * t).abs() < 2.5e-3, "{cov:?}");
    assert!((cov[(1, 1)] - 0.01 * t).abs() < 6e-4, "{cov:?}");
    assert!(cov[(0, 1)].abs() < 6e-4, "{cov:?}");
}

#[test]
fn mixture_moments() {
    let mix = mixture();
    let b = sample_initial_belief(&mix, 50_000, &mut stream(9, 4)).unwrap();
    let (mean, cov) = b.moments();
    // Mixture mean and total covariance (within plus between components).
    let m = Vector2::new(0.6 * 1.0 + 0.4 * -1.0, 0.4 * 2.0);
    assert!((mean - m).amax() < 0.03, "{mean:?}");
    let between_xx = 0.6 * (1.0 - m[0]).powi(2) + 0.4 * (-1.0 - m[0]).powi(2);
    let between_yy = 0.6 * (0.0 - m[1]).powi(2) + 0.4 * (2.0 - m[1]).powi(2);
    assert!((cov[(0, 0)] - (0.6 * 0.04 + 0.4 * 0.01 + between_xx)).abs() < 0.03, "{cov:?}");
    assert!((cov[(1, 1)] - (0.6 * 0.09 + 0.4 * 0.01 + between_yy)).abs() < 0.05, "{cov:?}");
}

#[test]
fn propagation_is_deterministic_and_keeps_lineage() {
    let mix = mixture();
    let b = sample_initial_belief(&mix, 300, &mut stream(1, 4)).unwrap();
    let v = Vector2::new(0.1, 0.0);
    let d = Vector2::new(1e-9, 1e-9);
    let a = b.propagate(&v, &d, 0.01, &mut stream(1, 3)).unwrap();
    let c = b.propagate(&v, &d, 0.01, &mut stream(1, 3)).unwrap();
    assert_eq!(a, c);
    // With negligible noise, sample i moves by v dt and stays at index i.
    for (s0, s1) in b.samples.iter().zip(&a.samples) {
        assert!((s1.q_x - s0.q_x - 1e-3).abs() < 1e-8 && (s1.q_y - s0.q_y).abs() < 1e-8);
    }
}

#[test]
fn robot_without_noise_integrates_unicycle() {
    let params = ModelParams { sigma_diag: [1e-300; 3], ..ModelParams::default() };
    let mut x = RobotState::new(0.0, 0.0, 0.0);
    let u = ControlInput::new(1.0, 0.5);
    let dt = 1e-4;
    for _ in 0..20_000 {
        x = x.step(&u, &params, dt, &nalgebra::Vector3::zeros()).unwrap();
    }
    // Arc of radius v / omega = 2 over 2 s.
    let th = 1.0;
    assert!((x.theta - th).abs() < 1e-9);
    assert!((x.p_x - 2.0 * th.sin()).abs() < 1e-3, "{x:?}");
    assert!((x.p_y - 2.0 * (1.0 - th.cos())).abs() < 1e-3, "{x:?}");
}

#[test]
fn streams_are_independent_of_each_other() {
    use rand::Rng;
    let a: u64 = stream(7, 1).random();
    let b: u64 = stream(7, 2).random();
    let c: u64 = stream(7, 1).random();
    assert_ne!(a, b);
    assert_eq!(a, c);
}
