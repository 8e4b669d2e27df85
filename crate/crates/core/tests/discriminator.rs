use motionbank_core::discriminator::*;
use motionbank_core::tensor::{grad, gradcheck, Tensor};
use motionbank_core::{GeneratorConfig, VideoTensor};
use proptest::prelude::*;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

fn random_video(frames: usize, res: usize, seed: u64) -> VideoTensor {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let data = (0..frames * res * res * 3)
        .map(|_| {
            let z: f64 = StandardNormal.sample(&mut rng);
            (0.5 * z).tanh() as f32
        })
        .collect();
    VideoTensor::new(frames, res, res, data).unwrap()
}

fn small_gen(res: usize, t: usize) -> GeneratorConfig {
    GeneratorConfig {
        dim_za: 4,
        dim_zm: 4,
        n: 4,
        video_length: t,
        resolution: res,
        mlp_depth: 1,
        channels: vec![4; (res.trailing_zeros() as usize).saturating_sub(2).max(1)],
        ..GeneratorConfig::default()
    }
}

#[test]
fn packed_channels_follow_the_sampling_rule() {
    let p = TemporalPyramidConfig::new(vec![1, 3, 5, 7]);
    assert_eq!(p.channels(16), vec![48, 18, 12, 9]);
    let v = random_video(16, 4, 0);
    for (s, k) in [(1, 48), (3, 18), (5, 12), (7, 9)] {
        let packed = ttoc_pack(&v, s).unwrap();
        assert_eq!(packed.channels, k);
        assert_eq!(packed.frame_indices, (0..16).step_by(s).collect::<Vec<_>>());
    }
    assert!(ttoc_pack(&v, 16).is_err());
    assert!(ttoc_pack(&v, 0).is_err());
}

proptest! {
    #[test]
    fn packing_preserves_every_sampled_frame(t in 2usize..20, s in 1usize..19, seed in any::<u64>()) {
        prop_assume!(s < t);
        let v = random_video(t, 3, seed);
        let p = ttoc_pack(&v, s).unwrap();
        prop_assert_eq!(p.channels % 3, 0);
        prop_assert_eq!(p.channels / 3, t.div_ceil(s));
        for (k, f) in p.unpack().iter().enumerate() {
            prop_assert_eq!(&f.data[..], v.frame_slice(p.frame_indices[k]));
        }
        // the tensor path packs the same values
        let packed = pack_tensor(&v.to_nchw::<f32>(), 1, &p.frame_indices).to_vec();
        let hw = 9;
        for c in 0..p.channels {
            for px in 0..hw {
                prop_assert_eq!(packed[c * hw + px], p.data[px * p.channels + c]);
            }
        }
    }
}

#[test]
fn sampled_frame_indices_are_uniform() {
    // chi-square against uniform over 16 frames, 10k draws; 0.99 quantile
    // of chi2(15) is 30.58.
    let t = 16;
    let mut data = Vec::new();
    for f in 0..t {
        data.extend(std::iter::repeat_n(f as f32 / 100.0, 3));
    }
    let v = VideoTensor::new(t, 1, 1, data).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(99);
    let mut counts = [0usize; 16];
    for _ in 0..10_000 {
        let f = sample_frame(&v, &mut rng);
        counts[(f.data[0] * 100.0).round() as usize] += 1;
    }
    let e = 10_000.0 / t as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
    assert!(chi2 < 30.58, "chi2 {chi2}, counts {counts:?}");

    let single = VideoTensor::new(1, 1, 1, vec![0.5; 3]).unwrap();
    for _ in 0..10 {
        assert_eq!(sample_frame(&single, &mut rng).data, vec![0.5; 3]);
    }
    let a = sample_frame(&v, &mut ChaCha8Rng::seed_from_u64(3));
    let b = sample_frame(&v, &mut ChaCha8Rng::seed_from_u64(3));
    assert_eq!(a, b);
}

#[test]
fn image_score_gradient_matches_finite_differences() {
    let gen = small_gen(8, 4);
    let d = Discriminator::<f64>::new(&gen, TemporalPyramidConfig::new(vec![1]), 5).unwrap();
    let x = random_video(1, 8, 1).to_nchw::<f64>();
    let x = Tensor::var(x.to_vec(), x.shape());
    let f = |xs: &[Tensor<f64>]| d.image.forward(&xs[0]).sum_all();
    let r = gradcheck::check(&f, &[x], 1e-6);
    assert!(r.rel_err < 1e-3, "{r:?}");
}

#[test]
fn scores_are_deterministic_scalars() {
    let gen = small_gen(8, 16);
    let d = Discriminator::<f32>::new(&gen, TemporalPyramidConfig::new(vec![1, 3, 5, 7]), 5).unwrap();
    let channels: Vec<usize> = d.videos.iter().map(|c| c.in_channels()).collect();
    assert_eq!(channels, vec![48, 18, 12, 9]);
    let v = random_video(16, 8, 2);
    let s = d.score_pyramid(&v).unwrap();
    assert_eq!(s.len(), 4);
    assert_eq!(s, d.score_pyramid(&v).unwrap());
    let img = d.score_image(&v.frame(3)).unwrap();
    assert!(img.is_finite());
    assert_eq!(img, d.score_image(&v.frame(3)).unwrap());
    assert!(d.score_pyramid(&random_video(8, 8, 2)).is_err());
    assert!(d.score_image(&random_video(1, 4, 2).frame(0)).is_err());

    let bair = Discriminator::<f32>::new(&gen, TemporalPyramidConfig::new(vec![1, 3, 5]), 5).unwrap();
    assert_eq!(bair.score_pyramid(&v).unwrap().len(), 3);
    let single = Discriminator::<f32>::new(&gen, TemporalPyramidConfig::new(vec![1]), 5).unwrap();
    assert_eq!(single.score_pyramid(&v).unwrap().len(), 1);
}

#[test]
fn pyramid_critics_are_independent() {
    let gen = small_gen(8, 16);
    let mut d = Discriminator::<f32>::new(&gen, TemporalPyramidConfig::new(vec![1, 3, 5, 7]), 6).unwrap();
    let v = random_video(16, 8, 4);
    let before = d.score_pyramid(&v).unwrap();
    let named: Vec<(String, Vec<f32>)> = d
        .params()
        .into_iter()
        .map(|(n, p)| {
            let data = if n.starts_with("video2.") { vec![0.0; p.numel()] } else { p.to_vec() };
            (n, data)
        })
        .collect();
    d.load_params(&named).unwrap();
    let after = d.score_pyramid(&v).unwrap();
    for j in 0..4 {
        if j == 2 {
            assert_ne!(before[j], after[j]);
        } else {
            assert_eq!(before[j], after[j]);
        }
    }
}

#[test]
fn video_critic_gradient_only_reaches_sampled_frames() {
    // Structural check: the stride-5 critic never looks at unsampled frames.
    let gen = small_gen(8, 16);
    let d = Discriminator::<f64>::new(&gen, TemporalPyramidConfig::new(vec![5]), 1).unwrap();
    let frames = Tensor::var(random_video(16, 8, 7).to_nchw::<f64>().to_vec(), &[16, 3, 8, 8]);
    let (_, packs) = d.inputs(&frames, 1, &[0], &[0]);
    let score = d.videos[0].forward(&packs[0]).sum_all();
    let g = grad(&score, std::slice::from_ref(&frames))[0].clone().unwrap().to_vec();
    for t in 0..16 {
        let mass: f64 = g[t * 192..(t + 1) * 192].iter().map(|v| v.abs()).sum();
        if t % 5 == 0 {
            assert!(mass > 0.0, "frame {t} unused");
        } else {
            assert_eq!(mass, 0.0, "frame {t} leaked");
        }
    }
}

#[test]
fn random_phase_keeps_frame_counts() {
    for t in 2..24 {
        for s in 1..t {
            let k = sampled_frames(t, s, 0).len();
            for p in 0..=max_phase(t, s) {
                assert_eq!(sampled_frames(t, s, p).len(), k, "t {t} s {s} p {p}");
            }
        }
    }
}
