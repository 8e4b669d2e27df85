//! End-to-end acceptance checks, one PASS/FAIL line each. Runs without the
//! libtest harness so the lines always reach the console.
//!
//! The desk-scale part trains five CPU-profile models. Finished models are
//! kept under the cargo target tmp dir and reused while the config matches;
//! set `MOTIONBANK_ACCEPT_RETRAIN=1` to ignore them.

use std::collections::HashSet;
use std::path::PathBuf;
use std::process::ExitCode;
use std::time::{Duration, Instant};

use motionbank_core::bank::MotionBank;
use motionbank_core::checkpoint;
use motionbank_core::data::flow_angle;
use motionbank_core::discriminator::{ttoc_pack, Critic, Scores};
use motionbank_core::experiment::{build_extractor, load_dataset, train_loop, FidProbe, GenerateRequest, LoopHooks};
use motionbank_core::interpret::frechet::mean_cov;
use motionbank_core::interpret::{
    alpha_stats, deactivation_study, frechet_distance, quantize_flow, BlockMatching, ColorwheelConfig, FlowField, StudyConfig,
};
use motionbank_core::latent::{lmd_sequence, lmd_step, max_orthonormal_deviation, LatentCode, MagnitudeSequence, MotionDictionary};
use motionbank_core::noise::sample_seeds;
use motionbank_core::tensor::{gradcheck, Tensor};
use motionbank_core::training::{d_loss, g_loss, r1_penalty};
use motionbank_core::{ExperimentConfig, Generator, NoiseBundle, TemporalPyramidConfig, Trainer, VideoTensor};
use nalgebra::DMatrix;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: impl Into<String>) -> Outcome {
    Outcome {
        pass,
        detail: detail.into(),
    }
}

#[derive(Default)]
struct Report {
    failed: Vec<&'static str>,
}

impl Report {
    fn record(&mut self, name: &'static str, run: impl FnOnce() -> Outcome) {
        let t = Instant::now();
        let o = std::panic::catch_unwind(std::panic::AssertUnwindSafe(run))
            .unwrap_or_else(|e| outcome(false, format!("panicked: {}", panic_text(&e))));
        let tag = if o.pass { "PASS" } else { "FAIL" };
        println!("{tag} {name}: {} [{:.1}s]", o.detail, t.elapsed().as_secs_f64());
        if !o.pass {
            self.failed.push(name);
        }
    }
}

fn panic_text(e: &Box<dyn std::any::Any + Send>) -> String {
    e.downcast_ref::<String>()
        .cloned()
        .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
        .unwrap_or_default()
}

fn randn(len: usize, rng: &mut ChaCha8Rng) -> Vec<f64> {
    (0..len).map(|_| Distribution::<f64>::sample(&StandardNormal, rng)).collect()
}

fn within(elapsed: Duration, limit_s: f64) -> bool {
    elapsed.as_secs_f64() < limit_s
}

fn orthonormality() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    let mut worst: f64 = 0.0;
    let mut sizes = vec![8, 512];
    sizes.extend((0..98).map(|_| rng.random_range(8..=512)));
    for &n in &sizes {
        let m: Vec<f32> = randn(n * n, &mut rng).into_iter().map(|v| v as f32).collect();
        let bank = MotionBank::<f32>::from_matrix(n, m).unwrap();
        // both the f64 dictionary and the f32 tensor the generator multiplies
        worst = worst.max(bank.dictionary().max_deviation());
        let d = bank.dictionary_tensor(false).to_f64_vec();
        worst = worst.max(max_orthonormal_deviation(n, &d));
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-4 && within(el, 60.0),
        format!("max |<d_i,d_j> - delta_ij| = {worst:.2e} over {} matrices (8..512), limit 1e-4 in 60s", sizes.len()),
    )
}

fn lmd_equivalence() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let mut worst: f64 = 0.0;
    for _ in 0..1000 {
        let n = rng.random_range(1..=16);
        let len = rng.random_range(1..=8);
        let svd = motionbank_core::canonical_svd(n, &randn(n * n, &mut rng)).unwrap();
        let d = MotionDictionary::new(n, svd.vt).unwrap();
        let w0 = LatentCode::new(randn(n, &mut rng), 0).unwrap();
        let a = MagnitudeSequence::new(len - 1, n, randn((len - 1) * n, &mut rng)).unwrap();
        let closed = lmd_sequence(&w0, &a, &d).unwrap();
        let mut w = w0.clone();
        for step in 0..len {
            if step > 0 {
                w = lmd_step(&w, a.row(step - 1), &d).unwrap();
            }
            let diff: f64 = closed[step].values.iter().zip(&w.values).map(|(x, y)| (x - y).powi(2)).sum::<f64>().sqrt();
            let norm: f64 = w.values.iter().map(|y| y * y).sum::<f64>().sqrt();
            worst = worst.max(diff / norm.max(f64::MIN_POSITIVE));
        }
        if closed.len() != len {
            return outcome(false, format!("closed form returned {} codes for length {len}", closed.len()));
        }
    }
    let el = t.elapsed();
    outcome(
        worst <= 1e-10 && within(el, 10.0),
        format!("max relative error {worst:.2e} over 1000 instances (N<=16, T<=8), limit 1e-10 in 10s"),
    )
}

fn frames_identical(v: &VideoTensor) -> bool {
    let first = v.frame_slice(0);
    (1..v.frames).all(|t| v.frame_slice(t).iter().zip(first).all(|(a, b)| a.to_bits() == b.to_bits()))
}

fn static_video() -> Outcome {
    let t = Instant::now();
    let mut cfg = ExperimentConfig::cpu();
    cfg.seed = 3;
    let data = load_dataset(&cfg).unwrap();
    let mut trainer = Trainer::<f32>::new(cfg.clone()).unwrap();
    let real = trainer.sample_real(&data);
    trainer.train_step(&real).unwrap();
    let restored = checkpoint::decode::<f32>(&checkpoint::encode(&trainer)).unwrap();
    let models = [
        ("init", Generator::<f32>::new(cfg.generator.clone(), 11).unwrap()),
        ("trained", trainer.inference_generator().unwrap()),
        ("restored", restored.inference_generator().unwrap()),
    ];
    let mut checked = 0;
    for (name, g) in &models {
        for (seed, len) in [(0u64, 16usize), (5, 16), (9, 24)] {
            let mut req = GenerateRequest::new(seed, seed + 1, len);
            req.active_dims = Some(vec![]);
            let out = req.run(g).unwrap();
            if out.video.frames != len || !frames_identical(&out.video) {
                return outcome(false, format!("{name} model, seed {seed}: frames differ"));
            }
            checked += 1;
        }
    }
    let el = t.elapsed();
    outcome(within(el, 10.0), format!("{checked} videos from 3 checkpoints bit-identical across frames, limit 10s"))
}

fn ttoc_channels() -> Outcome {
    let p = TemporalPyramidConfig::new(vec![1, 3, 5, 7]);
    let channels = p.channels(16);
    let video = VideoTensor::new(16, 4, 4, vec![0.5; 16 * 4 * 4 * 3]).unwrap();
    let packed: Vec<usize> = [1, 3, 5, 7].iter().map(|&s| ttoc_pack(&video, s).unwrap().channels).collect();
    let want = vec![48, 18, 12, 9];
    outcome(
        channels == want && packed == want,
        format!("strides 1,3,5,7 at T=16 give {channels:?} (packed {packed:?}), expected {want:?}"),
    )
}

fn softplus_brute(x: f64) -> f64 {
    // log(1 + e^x) without overflow, written independently of the library
    if x > 0.0 {
        x + (-x).exp().ln_1p()
    } else {
        x.exp().ln_1p()
    }
}

fn loss_oracles() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(102);
    let mut loss_err: f64 = 0.0;
    for _ in 0..200 {
        let b = rng.random_range(1..12usize);
        let lambda = rng.random_range(0.0..2.0);
        let image: Vec<f64> = randn(b, &mut rng).into_iter().map(|v| 4.0 * v).collect();
        let fake: Vec<f64> = randn(b, &mut rng).into_iter().map(|v| 4.0 * v).collect();
        let videos: Vec<Vec<f64>> = (0..3).map(|_| randn(b, &mut rng)).collect();
        let tv = |v: &[f64]| Tensor::from_vec(v.to_vec(), &[v.len()]);
        let mean = |v: &[f64], f: &dyn Fn(f64) -> f64| v.iter().map(|&x| f(x)).sum::<f64>() / v.len() as f64;
        let want_g = mean(&image, &|x| softplus_brute(-x)) + lambda * videos.iter().map(|v| mean(v, &|x| softplus_brute(-x))).sum::<f64>();
        let scores = Scores {
            image: tv(&image),
            videos: videos.iter().map(|v| tv(v)).collect(),
        };
        let got_g = g_loss(&scores, lambda).item();
        let want_d = mean(&image, &|x| softplus_brute(-x)) + mean(&fake, &|x| softplus_brute(x));
        let got_d = d_loss(&tv(&image), &tv(&fake)).item();
        loss_err = loss_err.max(((got_g - want_g) / want_g).abs()).max(((got_d - want_d) / want_d).abs());
    }

    let mut linear_err: f64 = 0.0;
    for &(b, k) in &[(1usize, 3usize), (4, 10), (9, 2), (16, 32)] {
        let a = randn(k, &mut rng);
        let x = Tensor::from_vec(randn(b * k, &mut rng), &[b, k]);
        let w = Tensor::from_vec(a.clone(), &[k, 1]);
        let gamma = 10.0;
        let p = r1_penalty(|x: &Tensor<f64>| x.matmul(&w).reshape(&[b]), &x, gamma).unwrap().item();
        let want = gamma / 2.0 * a.iter().map(|v| v * v).sum::<f64>();
        linear_err = linear_err.max((p - want).abs());
    }

    let critic = Critic::<f64>::new(3, 8, |_| 4, &mut rng);
    let b = 2;
    let x = Tensor::from_vec(randn(b * 3 * 64, &mut rng).into_iter().map(|v| 0.5 * v).collect(), &[b, 3, 8, 8]);
    let gamma = 10.0;
    let p = r1_penalty(|x| critic.forward(x), &x, gamma).unwrap().item();
    let f = |xs: &[Tensor<f64>]| critic.forward(&xs[0]).sum_all();
    let numeric = gradcheck::numeric_grad(&f, &[x.detach_var()], 1e-6);
    let want = gamma / (2.0 * b as f64) * numeric[0].iter().map(|g| g * g).sum::<f64>();
    let conv_rel = ((p - want) / want).abs();

    let el = t.elapsed();
    // "exact" for the softplus losses is read as agreement to a few ulps
    let pass = loss_err <= 1e-12 && linear_err <= 1e-10 && conv_rel <= 1e-3 && within(el, 60.0);
    outcome(
        pass,
        format!(
            "softplus losses rel {loss_err:.1e} (<=1e-12); linear R1 abs {linear_err:.1e} (<=1e-10); conv R1 vs FD rel {conv_rel:.1e} (<=1e-3)"
        ),
    )
}

/// Per-pixel binning by explicit angle ranges, accumulated in scan order.
fn brute_quantize(flow: &FlowField, h: f64, eps: f64) -> (Vec<f64>, f64) {
    let mut sums = [0.0; 4];
    let mut counts = [0usize; 4];
    for p in 0..flow.pairs {
        for y in 0..flow.height {
            for x in 0..flow.width {
                let (u, v) = flow.vector(p, y, x);
                let m = (u * u + v * v).sqrt();
                if m <= eps {
                    continue;
                }
                let a = flow_angle(u, v);
                let bin = if (45.0..135.0).contains(&a) {
                    0
                } else if (135.0..225.0).contains(&a) {
                    1
                } else if (225.0..315.0).contains(&a) {
                    3
                } else {
                    2
                };
                sums[bin] += (m / h).min(1.0);
                counts[bin] += 1;
            }
        }
    }
    let n: usize = counts.iter().sum();
    let phi = sums.iter().zip(&counts).map(|(s, &c)| if c == 0 { 0.0 } else { s / c as f64 }).collect();
    let mut all = 0.0;
    for s in &sums {
        all += s;
    }
    (phi, if n == 0 { 0.0 } else { all / n as f64 })
}

fn flow_quantizer() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(103);
    let mut mismatches = 0;
    for _ in 0..500 {
        let pairs = rng.random_range(1..4);
        let (h, w) = (rng.random_range(2..10), rng.random_range(2..10));
        let data: Vec<f32> = (0..pairs * h * w * 2).map(|_| rng.random_range(-3.0f32..3.0)).collect();
        let flow = FlowField::new(pairs, h, w, data).unwrap();
        let hn = rng.random_range(0.5..4.0);
        let cfg = ColorwheelConfig::default().with_h_norm(hn);
        let q = quantize_flow(&flow, &cfg).unwrap();
        let (phi, total) = brute_quantize(&flow, hn, cfg.epsilon);
        if q.phi != phi || q.total != total {
            mismatches += 1;
        }
    }
    let cfg = ColorwheelConfig::default().with_h_norm(2.0);
    // image rows grow downward, so "up" is negative v
    let up = quantize_flow(&FlowField::uniform(3, 8, 8, 0.0, -1.0), &cfg).unwrap();
    let analytic = up.phi == vec![0.5, 0.0, 0.0, 0.0];
    let el = t.elapsed();
    outcome(
        mismatches == 0 && analytic && within(el, 60.0),
        format!("{mismatches}/500 fields differ from brute force; uniform 90 deg field at H/2 gives {:?}", up.phi),
    )
}

fn shifted(a: &[Vec<f64>], delta: &[f64]) -> Vec<Vec<f64>> {
    a.iter().map(|r| r.iter().zip(delta).map(|(x, d)| x + d).collect()).collect()
}

/// Trace term through the eigenvalues of `Σ_a Σ_b`.
fn eigen_oracle(a: &[Vec<f64>], b: &[Vec<f64>]) -> f64 {
    let (ma, ca) = mean_cov(a).unwrap();
    let (mb, cb) = mean_cov(b).unwrap();
    let prod: DMatrix<f64> = &ca * &cb;
    let root_trace: f64 = prod.complex_eigenvalues().iter().map(|z| z.re.max(0.0).sqrt()).sum();
    (&ma - &mb).norm_squared() + ca.trace() + cb.trace() - 2.0 * root_trace
}

fn frechet_metric() -> Outcome {
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(104);
    let set = |n: usize, d: usize, s: f64, rng: &mut ChaCha8Rng| -> Vec<Vec<f64>> {
        (0..n).map(|_| randn(d, rng).into_iter().map(|v| s * v).collect()).collect()
    };
    let a = set(400, 8, 1.0, &mut rng);
    let same = frechet_distance(&a, &a).unwrap().distance.abs();

    let mut shift_err: f64 = 0.0;
    for delta in [0.1, 0.5, 2.0] {
        let mut dvec = vec![0.0; 8];
        dvec[3] = delta;
        let d = frechet_distance(&a, &shifted(&a, &dvec)).unwrap().distance;
        shift_err = shift_err.max((d - delta * delta).abs());
    }

    let mut oracle_err: f64 = 0.0;
    for k in 0..5 {
        let x = set(200 + 10 * k, 6, 1.0, &mut rng);
        let y = set(180, 6, 1.3, &mut rng);
        let y = shifted(&y, &[0.2; 6]);
        let got = frechet_distance(&x, &y).unwrap().distance;
        oracle_err = oracle_err.max((got - eigen_oracle(&x, &y)).abs());
    }
    let el = t.elapsed();
    outcome(
        same <= 1e-6 && shift_err <= 1e-6 && oracle_err <= 1e-6 && within(el, 60.0),
        format!("identical {same:.1e}; mean shift vs delta^2 {shift_err:.1e}; eigen oracle {oracle_err:.1e} (all <=1e-6)"),
    )
}

const SEEDS: [u64; 5] = [0, 1, 2, 3, 4];
const STABILITY_BASES: (u64, u64) = (1, 2);

struct DeskRun {
    seed: u64,
    generator: Generator<f32>,
    fid_start: f64,
    fid_end: f64,
    cached: bool,
}

fn cache_dir() -> PathBuf {
    PathBuf::from(env!("CARGO_TARGET_TMPDIR")).join("acceptance")
}

fn desk_run(seed: u64) -> motionbank_core::Result<DeskRun> {
    let mut cfg = ExperimentConfig::cpu();
    cfg.seed = seed;
    let data = load_dataset(&cfg)?;
    let probe = FidProbe::new(build_extractor(&cfg, &data)?, &data, cfg.eval.fid_samples, cfg.seed)?;
    let fresh = Trainer::<f32>::new(cfg.clone())?;
    let fid_start = probe.score(&fresh.inference_generator()?)?;

    let path = cache_dir().join(format!("seed_{seed}.ckpt"));
    let retrain = std::env::var("MOTIONBANK_ACCEPT_RETRAIN").is_ok_and(|v| v == "1");
    let reusable = !retrain && matches!(checkpoint::peek(&path), Ok((s, c)) if s == cfg.train.total_steps && c == cfg);
    let (generator, cached) = if reusable {
        (checkpoint::load_generator(&path)?.1, true)
    } else {
        std::fs::create_dir_all(cache_dir()).expect("creating model cache dir");
        let mut trainer = fresh;
        let until = cfg.train.total_steps;
        train_loop(&mut trainer, &data, until, LoopHooks::default())?;
        checkpoint::save(&trainer, &path)?;
        (trainer.inference_generator()?, false)
    };
    let fid_end = probe.score(&generator)?;
    Ok(DeskRun {
        seed,
        generator,
        fid_start,
        fid_end,
        cached,
    })
}

fn desk_runs() -> Vec<DeskRun> {
    SEEDS
        .iter()
        .map(|&s| {
            let t = Instant::now();
            let r = desk_run(s).unwrap_or_else(|e| panic!("seed {s}: {e}"));
            println!(
                "  seed {s}: Frechet {:.3} -> {:.3}{} [{:.0}s]",
                r.fid_start,
                r.fid_end,
                if r.cached { " (cached model)" } else { "" },
                t.elapsed().as_secs_f64()
            );
            r
        })
        .collect()
}

fn fid_drop(runs: &[DeskRun]) -> Outcome {
    let ratios: Vec<f64> = runs.iter().map(|r| r.fid_start / r.fid_end).collect();
    let ok = ratios.iter().filter(|&&x| x >= 5.0).count();
    let shown: Vec<String> = ratios.iter().map(|r| format!("{r:.1}x")).collect();
    outcome(ok == runs.len(), format!("Frechet drop per seed {}; need >=5x in every seed", shown.join(", ")))
}

fn direction_pairs(runs: &[DeskRun]) -> Outcome {
    let cfg = ExperimentConfig::cpu();
    let wheel = ColorwheelConfig {
        epsilon: cfg.eval.epsilon,
        ..ColorwheelConfig::default()
    };
    let pairs = wheel.opposite_pairs.clone();
    let mut good = 0;
    let mut notes = Vec::new();
    for r in runs {
        let g = &r.generator;
        let t = g.config().video_length;
        let top = alpha_stats(g, cfg.eval.num_samples, STABILITY_BASES.0, t).unwrap().top_by_variance(2);
        let study = StudyConfig {
            num_videos: cfg.eval.num_samples,
            base_seed: 5,
            length: t,
            colorwheel: wheel.clone(),
            h_norm: cfg.eval.h_norm,
        };
        let table = deactivation_study(g, &top, &study, &BlockMatching::default()).unwrap();
        let doms: Vec<Option<(usize, f64)>> = table.rows.iter().map(|row| row.dominant_pair(&pairs)).collect();
        let concentrated = doms.iter().all(|d| d.is_some_and(|(_, share)| share >= 0.7));
        let distinct = matches!((doms[0], doms[1]), (Some((a, _)), Some((b, _))) if a != b);
        if concentrated && distinct {
            good += 1;
        }
        let shown: Vec<String> = top
            .iter()
            .zip(&doms)
            .map(|(d, p)| match p {
                Some((k, s)) => format!("d{d}: pair {k} {:.0}%", 100.0 * s),
                None => format!("d{d}: no change"),
            })
            .collect();
        notes.push(format!("seed {} [{}]", r.seed, shown.join(", ")));
    }
    outcome(
        good >= 4,
        format!("{good}/5 seeds with both top directions >=70% in distinct opposite pairs (need 4); {}", notes.join("; ")),
    )
}

fn alpha_stability(runs: &[DeskRun]) -> Outcome {
    let t = Instant::now();
    let n = 1000;
    let (a, b) = STABILITY_BASES;
    let seeds_a: HashSet<(u64, u64)> = (0..n as u64).map(|i| sample_seeds(a, i)).collect();
    let disjoint = (0..n as u64).all(|i| !seeds_a.contains(&sample_seeds(b, i)));
    if !disjoint || seeds_a.len() != n {
        return outcome(false, "evaluation sets overlap");
    }
    let mut agree = 0;
    let mut shown = Vec::new();
    for r in runs {
        let len = r.generator.config().video_length;
        let ta = alpha_stats(&r.generator, n, a, len).unwrap().top_by_variance(1)[0];
        let tb = alpha_stats(&r.generator, n, b, len).unwrap().top_by_variance(1)[0];
        if ta == tb {
            agree += 1;
        }
        shown.push(format!("{ta}/{tb}"));
    }
    let el = t.elapsed();
    outcome(
        agree >= 4 && within(el, 600.0),
        format!("top-variance direction agrees in {agree}/5 seeds over two disjoint {n}-sample sets ({}); need 4", shown.join(", ")),
    )
}

fn longer_generation(runs: &[DeskRun]) -> Outcome {
    let t = Instant::now();
    let g = &runs[0].generator;
    let trained = g.config().video_length;
    let bundle = NoiseBundle::from_seeds(g.config(), 21, 22, 48).unwrap();
    let noises = bundle.z_m.len();
    let out = g.generate_video(&bundle).unwrap();
    let finite = out.video.data.iter().all(|v| v.is_finite());
    let el = t.elapsed();
    outcome(
        trained == 16 && noises + 1 == 48 && out.video.frames == 48 && finite && within(el, 60.0),
        format!("T={trained} model, 48-frame noise sequence ({noises} per-transition rows) -> {} frames, all finite: {finite}", out.video.frames),
    )
}

fn main() -> ExitCode {
    // `cargo test -- <filter>` style arguments are ignored; `--list` keeps
    // test discovery tools quiet.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return ExitCode::SUCCESS;
    }
    let mut rep = Report::default();
    rep.record("dictionary orthonormality", orthonormality);
    rep.record("latent path closed form vs recurrence", lmd_equivalence);
    rep.record("static video when all directions are off", static_video);
    rep.record("temporal packing channel counts", ttoc_channels);
    rep.record("loss and penalty oracles", loss_oracles);
    rep.record("flow quantizer oracle", flow_quantizer);
    rep.record("Frechet metric oracles", frechet_metric);

    println!("training {} CPU-profile models on moving shapes", SEEDS.len());
    let t = Instant::now();
    let runs = match std::panic::catch_unwind(desk_runs) {
        Ok(r) => r,
        Err(e) => {
            for name in ["desk Frechet drop", "desk direction pairs", "alpha statistics stability", "longer generation"] {
                println!("FAIL {name}: training failed: {}", panic_text(&e));
                rep.failed.push(name);
            }
            return summary(&rep);
        }
    };
    println!("  trained in {:.0}s", t.elapsed().as_secs_f64());
    rep.record("desk Frechet drop", || fid_drop(&runs));
    rep.record("desk direction pairs", || direction_pairs(&runs));
    rep.record("alpha statistics stability", || alpha_stability(&runs));
    rep.record("longer generation", || longer_generation(&runs));
    summary(&rep)
}

fn summary(rep: &Report) -> ExitCode {
    if rep.failed.is_empty() {
        println!("acceptance: all criteria passed");
        ExitCode::SUCCESS
    } else {
        println!("acceptance: {} failed: {}", rep.failed.len(), rep.failed.join(", "));
        ExitCode::FAILURE
    }
}
