use motionbank_core::bank::right_singular_vectors;
use motionbank_core::latent::{lmd_sequence, DirectionMask, TrajectorySpec};
use motionbank_core::tensor::{gradcheck, Tensor};
use motionbank_core::{Generator, GeneratorConfig, NoiseBundle};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn tiny() -> GeneratorConfig {
    GeneratorConfig {
        dim_za: 6,
        dim_zm: 5,
        n: 6,
        video_length: 4,
        resolution: 8,
        mlp_depth: 2,
        channels: vec![8],
        ..GeneratorConfig::default()
    }
}

/// Generator whose weights are perturbed away from initialization, so the
/// checks do not rely on zero-initialized noise strengths.
fn perturbed(cfg: GeneratorConfig, seed: u64) -> Generator<f32> {
    let mut g = Generator::<f32>::new(cfg, seed).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(seed ^ 77);
    let named: Vec<(String, Vec<f32>)> = g
        .params()
        .into_iter()
        .map(|(n, p)| {
            let v = p.to_vec().into_iter().map(|x| x + 0.1 * Distribution::<f32>::sample(&StandardNormal, &mut rng)).collect::<Vec<f32>>();
            (n, v)
        })
        .collect();
    g.load_params(&named).unwrap();
    g
}

#[test]
fn deactivating_every_direction_freezes_the_video() {
    for seed in 0..3 {
        let g = perturbed(tiny(), seed);
        let bundle = NoiseBundle::from_seeds(g.config(), seed, seed + 100, 12).unwrap();
        let out = g.generate_controlled(&bundle, &DirectionMask::none(6), &[]).unwrap();
        let v = out.video;
        assert_eq!(v.frames, 12);
        for t in 1..v.frames {
            assert_eq!(v.frame_slice(t), v.frame_slice(0), "frame {t} differs");
        }
        let moving = g.generate_video(&bundle).unwrap().video;
        assert!((1..moving.frames).any(|t| moving.frame_slice(t) != moving.frame_slice(0)));
    }
}

#[test]
fn full_mask_equals_plain_generation() {
    let g = perturbed(tiny(), 4);
    let bundle = NoiseBundle::from_seeds(g.config(), 1, 2, 4).unwrap();
    let a = g.generate_video(&bundle).unwrap();
    let b = g.generate_controlled(&bundle, &DirectionMask::all(6), &[]).unwrap();
    assert_eq!(a.video, b.video);
    assert_eq!(a.alphas, b.alphas);
}

#[test]
fn single_trajectory_moves_in_its_direction_only() {
    let g = perturbed(tiny(), 5);
    let bundle = NoiseBundle::from_seeds(g.config(), 3, 4, 8).unwrap();
    let traj = TrajectorySpec::Linear { dim: 2, slope: 0.3, offset: 0.2 }.realize(7).unwrap();
    let out = g.generate_controlled(&bundle, &DirectionMask::none(6), &[traj]).unwrap();
    assert!((1..8).any(|t| out.video.frame_slice(t) != out.video.frame_slice(0)));
    let d = g.dictionary();
    let path = lmd_sequence(&out.w0, &out.alphas, d).unwrap();
    for w in &path {
        let diff: Vec<f64> = w.values.iter().zip(&out.w0.values).map(|(a, b)| a - b).collect();
        let c = d.project(&diff);
        let recon: Vec<f64> = (0..6).map(|j| c[2] * d.direction(2)[j]).collect();
        let resid: f64 = diff.iter().zip(&recon).map(|(a, b)| (a - b).powi(2)).sum::<f64>().sqrt();
        assert!(resid <= 1e-6, "residual {resid}");
    }
}

#[test]
fn longer_requests_extend_shorter_ones() {
    let g = perturbed(tiny(), 6);
    let short = g.generate_video(&NoiseBundle::from_seeds(g.config(), 9, 10, 4).unwrap()).unwrap();
    let long = g.generate_video(&NoiseBundle::from_seeds(g.config(), 9, 10, 48).unwrap()).unwrap();
    assert_eq!(long.video.frames, 48);
    assert!(long.video.data.iter().all(|v| v.is_finite()));
    assert_eq!(long.alphas.rows(), 47);
    for t in 0..3 {
        for i in 0..6 {
            assert!((long.alphas.get(t, i) - short.alphas.get(t, i)).abs() < 1e-6);
        }
    }
    let one = g.generate_video(&NoiseBundle::from_seeds(g.config(), 9, 10, 1).unwrap()).unwrap();
    assert_eq!(one.video.frames, 1);
    assert_eq!(one.alphas.rows(), 0);
}

#[test]
fn same_seeds_same_video() {
    let a = Generator::<f32>::new(tiny(), 12).unwrap();
    let b = Generator::<f32>::new(tiny(), 12).unwrap();
    let bundle = NoiseBundle::from_seeds(a.config(), 5, 6, 4).unwrap();
    assert_eq!(a.generate_video(&bundle).unwrap().video, b.generate_video(&bundle).unwrap().video);
    let c = Generator::<f32>::new(tiny(), 13).unwrap();
    assert_ne!(a.generate_video(&bundle).unwrap().video, c.generate_video(&bundle).unwrap().video);
}

#[test]
fn bad_inputs_are_rejected() {
    let g = Generator::<f32>::new(tiny(), 0).unwrap();
    let mut bundle = NoiseBundle::from_seeds(g.config(), 1, 1, 4).unwrap();
    bundle.z_a.pop();
    assert!(g.generate_video(&bundle).is_err());
    let mut bundle = NoiseBundle::from_seeds(g.config(), 1, 1, 4).unwrap();
    bundle.z_m[1][0] = f64::NAN;
    assert!(g.generate_video(&bundle).is_err());
    assert!(NoiseBundle::from_seeds(g.config(), 1, 1, 0).is_err());
}

#[test]
fn singular_vector_gradient_matches_finite_differences() {
    let n = 5;
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let c: Vec<f64> = (0..n * n).map(|_| StandardNormal.sample(&mut rng)).collect();
    let weights = Tensor::<f64>::from_vec(c, &[n, n]);
    let f = |xs: &[Tensor<f64>]| right_singular_vectors(&xs[0]).unwrap().mul(&weights).sum_all();
    let r = gradcheck::check(&f, &[Tensor::var(m, &[n, n])], 1e-6);
    assert!(r.rel_err < 1e-5, "{r:?}");
}

#[test]
fn latent_path_gradient_reaches_the_bank() {
    let cfg = GeneratorConfig {
        video_length: 3,
        ..tiny()
    };
    let g = Generator::<f64>::new(cfg, 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut rnd = |len: usize| -> Vec<f64> { (0..len).map(|_| StandardNormal.sample(&mut rng)).collect() };
    let w0 = Tensor::<f64>::from_vec(rnd(6), &[1, 6]);
    let alphas = Tensor::<f64>::from_vec(rnd(12), &[1, 2, 6]);
    let proj = Tensor::<f64>::from_vec(rnd(18), &[3, 6]);
    let m = g.bank().matrix().to_vec();
    let f = |xs: &[Tensor<f64>]| {
        let d = right_singular_vectors(&xs[0]).unwrap();
        g.latent_path(&w0, &alphas, &d).mul(&proj).sum_all()
    };
    let r = gradcheck::check(&f, &[Tensor::var(m, &[6, 6])], 1e-6);
    assert!(r.rel_err < 1e-5, "{r:?}");
}
