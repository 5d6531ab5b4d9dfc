//! Acceptance suite. Runs every criterion in sequence, prints one line per
//! criterion and exits nonzero if any fails. Pass a substring to run a
//! subset, e.g. `cargo test --test acceptance -- memory`.

use std::time::{Duration, Instant};

use ocdl::alg1::{alpha_update, beta_recompute, f_update, g_update_alg1};
use ocdl::alg2::{g_update_alg2, history_update_alg2};
use ocdl::csc::{csc_solve, lambda_max, reconstruct, soft_threshold, x_update};
use ocdl::dict::{evaluate, init_dictionary};
use ocdl::history::HistoryPair;
use ocdl::ingest::tikhonov_highpass;
use ocdl::persist::{checkpoint_size, load_checkpoint, save_checkpoint};
use ocdl::spectral::{circular_convolve, circular_correlate, pad_filter};
use ocdl::synth::{PlantedConfig, PlantedCorpus};
use ocdl::train::{Algorithm, TrainOptions, Trainer};
use ocdl::{AdmmSettings, CoefficientMaps, Complex64, Fft2d, FilterBank, ImagePlane, SpectrumPlane, SpectrumSet};
use ocdl_oracle::batch::{batch_cdl_tiny, dictionary_fit, DEFAULT_ALTERNATIONS};
use ocdl_oracle::dense::{dense_solve, relative_residual};
use ocdl_oracle::systems::{FrequencyNormalSystem, csc_x_system, f_system, g_alg1_system, g_alg2_system, naive_alpha, naive_beta};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

type Outcome = Result<String, String>;

struct Criterion {
    id: u32,
    name: &'static str,
    limit: Duration,
    run: fn() -> Outcome,
}

const CRITERIA: [Criterion; 9] = [
    Criterion {
        id: 1,
        name: "oracle equivalence of linear solves",
        limit: Duration::from_secs(10),
        run: linear_solves,
    },
    Criterion {
        id: 2,
        name: "history correctness",
        limit: Duration::from_secs(5),
        run: history_correctness,
    },
    Criterion {
        id: 3,
        name: "upper-bound property",
        limit: Duration::from_secs(10),
        run: upper_bound,
    },
    Criterion {
        id: 4,
        name: "csc correctness",
        limit: Duration::from_secs(30),
        run: csc_correctness,
    },
    Criterion {
        id: 5,
        name: "end-to-end learning",
        limit: Duration::from_secs(600),
        run: end_to_end,
    },
    Criterion {
        id: 6,
        name: "online-vs-batch gap",
        limit: Duration::from_secs(300),
        run: online_vs_batch,
    },
    Criterion {
        id: 7,
        name: "memory contract",
        limit: Duration::from_secs(60),
        run: memory_contract,
    },
    Criterion {
        id: 8,
        name: "preprocessing",
        limit: Duration::from_secs(10),
        run: preprocessing,
    },
    Criterion {
        id: 9,
        name: "determinism and resumption",
        limit: Duration::from_secs(120),
        run: determinism,
    },
];

// Tolerances.
const SOLVE_REL_RESIDUAL: f64 = 1e-9;
const HISTORY_REL_ERROR: f64 = 1e-12;
const KKT_REL: f64 = 1e-3;
const SOFT_THRESHOLD_ABS: f64 = 1e-6;
const LEARNED_VS_INIT: f64 = 0.8;
const ALG2_VS_ALG1: f64 = 1.05;
const ONLINE_VS_BATCH: f64 = 1.35;
const DECOMPOSITION_ABS: f64 = 1e-12;

fn main() {
    let filter: Vec<String> = std::env::args().skip(1).filter(|a| !a.starts_with('-')).collect();
    let mut failed = 0;
    let mut ran = 0;
    for c in &CRITERIA {
        let label = format!("criterion {} {}", c.id, c.name);
        if !filter.is_empty() && !filter.iter().any(|f| label.contains(f.as_str())) {
            continue;
        }
        ran += 1;
        let start = Instant::now();
        let outcome = std::panic::catch_unwind(c.run).unwrap_or_else(|e| {
            Err(e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_else(|| "panicked".into()))
        });
        let elapsed = start.elapsed();
        let outcome = match outcome {
            Ok(detail) if elapsed > c.limit => Err(format!("{detail}; over time limit")),
            other => other,
        };
        let (verdict, detail) = match &outcome {
            Ok(d) => ("PASS", d),
            Err(d) => ("FAIL", d),
        };
        println!(
            "{label}: {verdict} [{:.1}s of {}s] {detail}",
            elapsed.as_secs_f64(),
            c.limit.as_secs()
        );
        if outcome.is_err() {
            failed += 1;
        }
    }
    println!("acceptance: {} of {ran} criteria passed", ran - failed);
    if failed > 0 {
        std::process::exit(1);
    }
}

fn check(ok: bool, detail: String) -> Outcome {
    if ok {
        Ok(detail)
    } else {
        Err(detail)
    }
}

fn rand_c(rng: &mut ChaCha8Rng, scale: f64) -> Complex64 {
    Complex64::new(rng.random_range(-scale..scale), rng.random_range(-scale..scale))
}

fn rand_set(rng: &mut ChaCha8Rng, k: usize, h: usize, w: usize, scale: f64) -> SpectrumSet {
    (0..k)
        .map(|_| SpectrumPlane::new(h, w, (0..h * w).map(|_| rand_c(rng, scale)).collect()).unwrap())
        .collect()
}

fn column(set: &[SpectrumPlane], p: usize) -> Vec<Complex64> {
    set.iter().map(|s| s.as_slice()[p]).collect()
}

fn random_image(rng: &mut ChaCha8Rng, h: usize, w: usize) -> ImagePlane {
    ImagePlane::from_fn(h, w, |_, _| rng.random_range(-1.0..1.0))
}

fn linear_solves() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(101);
    let (h, w) = (25, 40);
    let mut worst = [0.0f64; 4];
    let mut checked = 0;
    for k in [1usize, 3, 8] {
        let n = rng.random_range(1..=10u64);
        let rho = 10f64.powf(rng.random_range(-1.3..1.7));
        let x = rand_set(&mut rng, k, h, w, 3.0);
        let z = rand_set(&mut rng, k, h, w, 3.0);
        let q = rand_set(&mut rng, k, h, w, 1.0);
        let s = rand_set(&mut rng, 1, h, w, 5.0).remove(0);
        let mut hist = HistoryPair::zeros(k, h, w);
        for a in &mut hist.alpha {
            a.as_mut_slice().iter_mut().for_each(|v| *v = rng.random_range(0.0..9.0));
        }
        hist.beta = rand_set(&mut rng, k, h, w, 4.0);

        let f = f_update(&x, &z, &s, &q, n, rho).map_err(|e| e.to_string())?;
        let g1 = g_update_alg1(&hist, &q, rho).map_err(|e| e.to_string())?;
        let g2 = g_update_alg2(&x, &s, &hist, &q, n, rho).map_err(|e| e.to_string())?;
        let xu = x_update(&x, &s, &q, rho).map_err(|e| e.to_string())?;

        for p in 0..h * w {
            let (xs, zs, qs, sp) = (column(&x, p), column(&z, p), column(&q, p), s.as_slice()[p]);
            let alpha: Vec<f64> = hist.alpha.iter().map(|a| a.as_slice()[p]).collect();
            let beta = column(&hist.beta, p);

            let (a, b) = f_system(&xs, &zs, sp, &qs, n, rho);
            worst[0] = worst[0].max(relative_residual(&a, &column(&f, p), &b));
            for j in 0..k {
                let (a, b) = g_alg1_system(alpha[j], beta[j], qs[j], rho);
                worst[1] = worst[1].max(relative_residual(&a, &[g1[j].as_slice()[p]], &b));
            }
            let (a, b) = g_alg2_system(&xs, sp, &alpha, &beta, &qs, n, rho);
            worst[2] = worst[2].max(relative_residual(&a, &column(&g2, p), &b));
            let (a, b) = csc_x_system(&xs, sp, &qs, rho);
            let dense = dense_solve(&a, &b).map_err(|e| e.to_string())?;
            let ours = column(&xu, p);
            let diff: f64 = dense.iter().zip(&ours).map(|(u, v)| (u - v).norm_sqr()).sum::<f64>().sqrt();
            let norm: f64 = dense.iter().map(|u| u.norm_sqr()).sum::<f64>().sqrt();
            worst[3] = worst[3].max(relative_residual(&a, &ours, &b)).max(diff / norm);
            checked += 1;
        }
    }
    let max = worst.iter().copied().fold(0.0, f64::max);
    check(
        checked >= 1000 && max <= SOLVE_REL_RESIDUAL,
        format!(
            "{checked} frequencies; max relative residual f {:.1e}, g1 {:.1e}, g2 {:.1e}, x {:.1e} (limit {SOLVE_REL_RESIDUAL:e})",
            worst[0], worst[1], worst[2], worst[3]
        ),
    )
}

fn max_rel<T: Copy>(got: &[Vec<T>], want: &[Vec<T>], mag: impl Fn(T) -> f64, diff: impl Fn(T, T) -> f64) -> f64 {
    let scale = want.iter().flatten().map(|v| mag(*v)).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
    got.iter()
        .flatten()
        .zip(want.iter().flatten())
        .map(|(a, b)| diff(*a, *b))
        .fold(0.0, f64::max)
        / scale
}

fn history_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(202);
    let (k, h, w) = (3, 8, 8);
    let fft = Fft2d::new(h, w);
    let mut x_hats: Vec<SpectrumSet> = Vec::new();
    let mut t1_hats: Vec<SpectrumSet> = Vec::new();
    let mut r_hats: Vec<SpectrumSet> = Vec::new();
    let mut h1 = HistoryPair::zeros(k, h, w);
    let mut h2 = HistoryPair::zeros(k, h, w);
    let mut worst = 0.0f64;
    for n in 1..=6u64 {
        let maps: Vec<ImagePlane> = (0..k).map(|_| random_image(&mut rng, h, w)).collect();
        let x_hat = fft.forward_many(&maps);
        let f_hat = fft.forward_many(&(0..k).map(|_| random_image(&mut rng, h, w)).collect::<Vec<_>>());
        let r_hat = fft.forward_many(&(0..k).map(|_| random_image(&mut rng, h, w)).collect::<Vec<_>>());

        h1.alpha = alpha_update(&h1.alpha, &x_hat, n).map_err(|e| e.to_string())?;
        h1.beta = beta_recompute(&h1.beta, &x_hat, &f_hat, n).map_err(|e| e.to_string())?;
        h2 = history_update_alg2(&h2, &x_hat, &r_hat, n).map_err(|e| e.to_string())?;

        let t_hat: SpectrumSet = f_hat
            .iter()
            .zip(&x_hat)
            .map(|(f, x)| {
                let data = f.as_slice().iter().zip(x.as_slice()).map(|(a, b)| a * b).collect();
                SpectrumPlane::new(h, w, data).unwrap()
            })
            .collect();
        x_hats.push(x_hat);
        t1_hats.push(t_hat);
        r_hats.push(r_hat);

        let nf = n as f64;
        let flat_a = |a: &[ImagePlane]| a.iter().map(|p| p.as_slice().to_vec()).collect::<Vec<_>>();
        let flat_b = |b: &[SpectrumPlane]| b.iter().map(|p| p.as_slice().to_vec()).collect::<Vec<_>>();
        let real = |a: f64, b: f64| (a - b).abs();
        let cplx = |a: Complex64, b: Complex64| (a - b).norm();
        worst = worst
            .max(max_rel(&flat_a(&h1.alpha), &naive_alpha(&x_hats, nf), f64::abs, real))
            .max(max_rel(&flat_b(&h1.beta), &naive_beta(&x_hats, &t1_hats, nf), |c| c.norm(), cplx))
            .max(max_rel(&flat_a(&h2.alpha), &naive_alpha(&x_hats, nf + 1.0), f64::abs, real))
            .max(max_rel(&flat_b(&h2.beta), &naive_beta(&x_hats, &r_hats, nf + 1.0), |c| c.norm(), cplx));
    }
    check(
        worst <= HISTORY_REL_ERROR,
        format!("prefixes 1..6, both variants; max relative error {worst:.1e} (limit {HISTORY_REL_ERROR:e})"),
    )
}

fn upper_bound() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(303);
    let (k, h, w, m) = (3, 16, 16, 8);
    let mut violations = 0;
    let mut min_slack = f64::INFINITY;
    let mut norm_form_ok = true;
    let mut synthesized_violations = 0;
    for draw in 0..200u64 {
        // the second hundred draws take s = sum_k c_k * x_k, reported only
        let synthesized = draw >= 100;
        let d = init_dictionary(k, m, 1000 + draw).unwrap();
        let c = init_dictionary(k, m, 5000 + draw).unwrap();
        let x: Vec<ImagePlane> = (0..k).map(|_| random_image(&mut rng, h, w)).collect();
        let maps = CoefficientMaps::new(x.clone()).unwrap();
        let s = if synthesized {
            reconstruct(&c, &maps).unwrap()
        } else {
            random_image(&mut rng, h, w)
        };
        let sq = |a: &ImagePlane, b: &ImagePlane| -> f64 {
            a.as_slice().iter().zip(b.as_slice()).map(|(p, q)| (p - q).powi(2)).sum()
        };
        let lhs = sq(&reconstruct(&d, &maps).unwrap(), &s);
        let fit_c = sq(&reconstruct(&c, &maps).unwrap(), &s);
        let mut per_filter = Vec::with_capacity(k);
        for j in 0..k {
            let dj = circular_convolve(&pad_filter(d.filter(j), h, w).unwrap(), &x[j]).unwrap();
            let cj = circular_convolve(&pad_filter(c.filter(j), h, w).unwrap(), &x[j]).unwrap();
            per_filter.push(sq(&dj, &cj));
        }
        let rhs = per_filter.iter().sum::<f64>() + fit_c;
        let slack = rhs - lhs;
        if synthesized {
            synthesized_violations += usize::from(slack < 0.0);
            continue;
        }
        min_slack = min_slack.min(slack / lhs);
        if slack < 0.0 {
            violations += 1;
        }
        // the triangle inequality itself, on unsquared norms
        let norm_rhs = per_filter.iter().map(|v| v.sqrt()).sum::<f64>() + fit_c.sqrt();
        norm_form_ok &= lhs.sqrt() <= norm_rhs * (1.0 + 1e-12);
    }
    check(
        violations == 0,
        format!(
            "squared-norm bound violated on {violations} of 100 draws (min relative slack {min_slack:.3}); \
             unsquared triangle inequality holds on the same 100 draws: {norm_form_ok}; \
             with s synthesized from c the squared bound fails on {synthesized_violations} of 100 draws"
        ),
    )
}

fn csc_correctness() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(404);
    let settings = AdmmSettings::default().with_tolerance(1e-9).with_max_iter(5000);
    let mut worst_active = 0.0f64;
    let mut worst_inactive = 0.0f64;
    let mut unconverged = 0;
    for inst in 0..20u64 {
        let (h, w) = (16, 16);
        let k = 1 + (inst as usize % 4);
        let dict = init_dictionary(k, 4, 7000 + inst).unwrap();
        let s = random_image(&mut rng, h, w);
        let lambda = rng.random_range(0.05..0.5) * lambda_max(&s, &dict).unwrap();
        let (maps, status) = csc_solve(&s, &dict, lambda, &settings).map_err(|e| e.to_string())?;
        if !status.converged {
            unconverged += 1;
        }
        let recon = reconstruct(&dict, &maps).unwrap();
        let resid = ImagePlane::new(
            h,
            w,
            recon.as_slice().iter().zip(s.as_slice()).map(|(a, b)| a - b).collect(),
        )
        .unwrap();
        for (f, x) in dict.filters().iter().zip(maps.maps()) {
            let g = circular_correlate(&pad_filter(f, h, w).unwrap(), &resid).unwrap();
            for (gv, xv) in g.as_slice().iter().zip(x.as_slice()) {
                if xv.abs() > 1e-6 {
                    worst_active = worst_active.max((gv + lambda * xv.signum()).abs() / lambda);
                } else {
                    worst_inactive = worst_inactive.max(gv.abs() / lambda - 1.0);
                }
            }
        }
    }

    let s = random_image(&mut rng, 12, 12);
    let dict = init_dictionary(3, 4, 1).unwrap();
    let lmax = lambda_max(&s, &dict).unwrap();
    let mut zero_ok = true;
    for lambda in [lmax, 1.01 * lmax, 3.0 * lmax] {
        let (maps, _) = csc_solve(&s, &dict, lambda, &AdmmSettings::default()).map_err(|e| e.to_string())?;
        zero_ok &= maps.is_zero();
    }

    let mut delta = vec![0.0; 9];
    delta[0] = 1.0;
    let delta = FilterBank::new(vec![ocdl::FilterSupport::new(3, delta).unwrap()]).unwrap();
    let s = random_image(&mut rng, 12, 12);
    let lambda = 0.25;
    let tight = AdmmSettings::default().with_tolerance(1e-10).with_max_iter(2000);
    let (maps, _) = csc_solve(&s, &delta, lambda, &tight).map_err(|e| e.to_string())?;
    let soft_err = maps
        .map(0)
        .as_slice()
        .iter()
        .zip(s.as_slice())
        .map(|(x, v)| (x - soft_threshold(*v, lambda)).abs())
        .fold(0.0, f64::max);

    check(
        unconverged == 0
            && worst_active <= KKT_REL
            && worst_inactive <= KKT_REL
            && zero_ok
            && soft_err <= SOFT_THRESHOLD_ABS,
        format!(
            "20 instances: active KKT {worst_active:.1e}, inactive excess {:.1e} (limit {KKT_REL:e} x lambda); \
             zero maps at lambda >= lambda_max: {zero_ok}; soft-threshold error {soft_err:.1e} (limit {SOFT_THRESHOLD_ABS:e})",
            worst_inactive.max(0.0)
        ),
    )
}

fn train_pass(algorithm: Algorithm, images: &[ImagePlane], k: usize, seed: u64) -> ocdl::Result<Trainer> {
    let opts = TrainOptions {
        seed,
        ..TrainOptions::new(algorithm, k)
    };
    let mut trainer = Trainer::start(&opts, &images[0])?;
    for s in images {
        trainer.process(s)?;
    }
    Ok(trainer)
}

/// One pass of online learning with the full per-frequency `K x K` history,
/// i.e. the surrogate both trainers approximate. Used as a reference point.
fn exact_history_online(images: &[ImagePlane], init: &FilterBank, lambda: f64) -> Result<FilterBank, String> {
    let (h, w) = images[0].dims();
    let settings = AdmmSettings::default();
    let fft = Fft2d::new(h, w);
    let mut normal = FrequencyNormalSystem::new(init.len(), h * w);
    let mut d = init.clone();
    for s in images {
        let (maps, _) = csc_solve(s, &d, lambda, &settings).map_err(|e| e.to_string())?;
        normal.accumulate(&maps.spectra(&fft), &fft.forward(s));
        d = dictionary_fit(&normal.averaged(), &d, h, w, &settings).map_err(|e| e.to_string())?;
    }
    Ok(d)
}

fn end_to_end() -> Outcome {
    let mut corpus = PlantedCorpus::new(PlantedConfig {
        seed: 55,
        ..PlantedConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let train = corpus.images(20).map_err(|e| e.to_string())?;
    let test = corpus.images(5).map_err(|e| e.to_string())?;
    let seed = 9;
    let settings = AdmmSettings::default();

    let alg1 = train_pass(Algorithm::Alg1, &train, 16, seed).map_err(|e| e.to_string())?;
    let alg2 = train_pass(Algorithm::Alg2, &train, 16, seed).map_err(|e| e.to_string())?;
    let lambda = alg2.lambda();
    let init = init_dictionary(16, 8, seed).unwrap();
    let score = |d: &FilterBank| -> Result<f64, String> {
        evaluate(test.iter().cloned().map(Ok), d, lambda, &settings)
            .map(|r| r.mean_objective)
            .map_err(|e| e.to_string())
    };
    let o_init = score(&init)?;
    let o1 = score(alg1.dictionary())?;
    let o2 = score(alg2.dictionary())?;
    let o_ref = score(&exact_history_online(&train, &init, lambda)?)?;
    check(
        o1 <= LEARNED_VS_INIT * o_init && o2 <= LEARNED_VS_INIT * o_init && o2 <= ALG2_VS_ALG1 * o1,
        format!(
            "test objective: initial {o_init:.4}, alg1 {o1:.4} ({:.3}x), alg2 {o2:.4} ({:.3}x); alg2/alg1 {:.3} \
             (limits {LEARNED_VS_INIT}x initial, {ALG2_VS_ALG1}x alg1); exact-history online reference {:.3}x initial",
            o1 / o_init,
            o2 / o_init,
            o2 / o1,
            o_ref / o_init
        ),
    )
}

fn online_vs_batch() -> Outcome {
    let mut corpus = PlantedCorpus::new(PlantedConfig {
        k: 8,
        height: 32,
        width: 32,
        seed: 66,
        ..PlantedConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let images = corpus.images(5).map_err(|e| e.to_string())?;
    let seed = 4;
    let settings = AdmmSettings::default();
    let init = init_dictionary(8, 8, seed).unwrap();
    let lambda = 0.1 * lambda_max(&images[0], &init).unwrap();

    let batch = batch_cdl_tiny(&images, &init, lambda, &settings, DEFAULT_ALTERNATIONS).map_err(|e| e.to_string())?;
    let mut detail = format!("batch {:.4}", batch.mean_objective);
    let mut ok = true;
    for alg in [Algorithm::Alg1, Algorithm::Alg2] {
        let t = train_pass(alg, &images, 8, seed).map_err(|e| e.to_string())?;
        let online = evaluate(images.iter().cloned().map(Ok), t.dictionary(), lambda, &settings)
            .map_err(|e| e.to_string())?
            .mean_objective;
        let ratio = online / batch.mean_objective;
        ok &= batch.mean_objective <= online && ratio <= ONLINE_VS_BATCH;
        detail.push_str(&format!(", {alg} {online:.4} ({ratio:.3}x)"));
    }
    let reference = exact_history_online(&images, &init, lambda)?;
    let o_ref = evaluate(images.iter().cloned().map(Ok), &reference, lambda, &settings)
        .map_err(|e| e.to_string())?
        .mean_objective;
    detail.push_str(&format!(
        " (limit {ONLINE_VS_BATCH}x batch); exact-history online reference {:.3}x",
        o_ref / batch.mean_objective
    ));
    check(ok, detail)
}

fn memory_contract() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut rng = ChaCha8Rng::seed_from_u64(707);
    let mut details = Vec::new();
    let mut ok = true;
    for (k, h, w, m) in [(8usize, 32usize, 32usize, 8usize), (16, 64, 64, 8)] {
        let s = random_image(&mut rng, h, w);
        let opts = TrainOptions {
            filter_size: m,
            settings: AdmmSettings::default().with_max_iter(20),
            ..TrainOptions::new(Algorithm::Alg2, k)
        };
        let mut t = Trainer::start(&opts, &s).map_err(|e| e.to_string())?;
        t.process(&s).map_err(|e| e.to_string())?;
        let path = dir.path().join(format!("{k}-{h}.ckpt"));
        save_checkpoint(&t.checkpoint(), &path).map_err(|e| e.to_string())?;
        let bytes = std::fs::metadata(&path).map_err(|e| e.to_string())?.len() as usize;
        let formula = 81 + 8 * k * (m * m + 3 * h * w);
        let scalars = t.state().persistent_scalars();
        ok &= bytes == formula && checkpoint_size(k, h, w, m) == formula && scalars == k * (m * m + 3 * h * w);
        details.push(format!("(K={k}, {h}x{w}, m={m}) {bytes} bytes vs formula {formula}"));
    }
    check(ok, details.join("; "))
}

fn preprocessing() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(808);
    let mut worst_sum = 0.0f64;
    let mut worst_dc = 0.0f64;
    for _ in 0..20 {
        let (h, w) = (rng.random_range(8..40), rng.random_range(8..40));
        let s = ImagePlane::from_fn(h, w, |_, _| rng.random_range(0.0..1.0));
        let (low, high) = tikhonov_highpass(&s, 5.0).map_err(|e| e.to_string())?;
        for ((l, hv), v) in low.as_slice().iter().zip(high.as_slice()).zip(s.as_slice()) {
            worst_sum = worst_sum.max((l + hv - v).abs());
        }
        worst_dc = worst_dc.max(high.mean().abs());
    }
    let constant = ImagePlane::from_fn(20, 30, |_, _| 0.42);
    let (_, high) = tikhonov_highpass(&constant, 5.0).map_err(|e| e.to_string())?;
    let const_max = high.max_abs();
    check(
        worst_sum <= DECOMPOSITION_ABS && worst_dc <= DECOMPOSITION_ABS && const_max <= DECOMPOSITION_ABS,
        format!(
            "reg 5: |low + high - s| {worst_sum:.1e}, |DC(high)| {worst_dc:.1e}, constant-image high-pass {const_max:.1e} \
             (limit {DECOMPOSITION_ABS:e})"
        ),
    )
}

fn determinism() -> Outcome {
    let dir = tempfile::tempdir().map_err(|e| e.to_string())?;
    let mut corpus = PlantedCorpus::new(PlantedConfig {
        k: 4,
        height: 32,
        width: 32,
        density: 0.01,
        seed: 99,
        ..PlantedConfig::default()
    })
    .map_err(|e| e.to_string())?;
    let images = corpus.images(6).map_err(|e| e.to_string())?;
    let mut ok = true;
    let mut notes = Vec::new();
    for alg in [Algorithm::Alg1, Algorithm::Alg2] {
        let opts = TrainOptions {
            seed: 3,
            ..TrainOptions::new(alg, 4)
        };
        let run_with = |threads: usize, name: &str| -> Result<Vec<u8>, String> {
            let pool = rayon::ThreadPoolBuilder::new()
                .num_threads(threads)
                .build()
                .map_err(|e| e.to_string())?;
            let t = pool.install(|| -> ocdl::Result<Trainer> {
                let mut t = Trainer::start(&opts, &images[0])?;
                for s in &images {
                    t.process(s)?;
                }
                Ok(t)
            });
            let t = t.map_err(|e| e.to_string())?;
            let path = dir.path().join(name);
            save_checkpoint(&t.checkpoint(), &path).map_err(|e| e.to_string())?;
            std::fs::read(&path).map_err(|e| e.to_string())
        };
        let a = run_with(1, &format!("{alg}-a"))?;
        let b = run_with(1, &format!("{alg}-b"))?;
        let c = run_with(4, &format!("{alg}-c"))?;
        let same_runs = a == b;
        let same_threads = a == c;

        let mut first = Trainer::start(&opts, &images[0]).map_err(|e| e.to_string())?;
        for s in &images[..3] {
            first.process(s).map_err(|e| e.to_string())?;
        }
        let mid = dir.path().join(format!("{alg}-mid"));
        save_checkpoint(&first.checkpoint(), &mid).map_err(|e| e.to_string())?;
        let loaded = load_checkpoint(&mid).map_err(|e| e.to_string())?;
        let mut resumed = Trainer::resume(loaded, opts.settings, false).map_err(|e| e.to_string())?;
        for s in &images[3..] {
            resumed.process(s).map_err(|e| e.to_string())?;
        }
        let path = dir.path().join(format!("{alg}-resumed"));
        save_checkpoint(&resumed.checkpoint(), &path).map_err(|e| e.to_string())?;
        let same_resume = std::fs::read(&path).map_err(|e| e.to_string())? == a;
        ok &= same_runs && same_threads && same_resume;
        notes.push(format!(
            "{alg}: repeat {same_runs}, 1 vs 4 threads {same_threads}, resume after 3 of 6 {same_resume}"
        ));
    }
    check(ok, format!("bit-identical checkpoints: {}", notes.join("; ")))
}
