// Temporary calibration harness; not part of the deliverable.
use cpsde::changepoint::baseline_mean;
use cpsde::config::ModelConfig;
use cpsde::metrics::mmd_metric;
use cpsde::pipeline::{generate_samples, LoadedModel, ModelMeta};
use cpsde::sim::{normalize, simulate_ou, OuSegment, OuSpec, TimeGrid};
use cpsde::training::{fit_observed, TrainConfig};

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let scenario = args.get(1).cloned().unwrap_or_else(|| "cp1".into());
    let seed: u64 = args.get(2).and_then(|s| s.parse().ok()).unwrap_or(0);
    let rounds: usize = args.get(3).and_then(|s| s.parse().ok()).unwrap_or(10);
    let steps: usize = args.get(4).and_then(|s| s.parse().ok()).unwrap_or(25);
    let clip: f64 = args.get(5).and_then(|s| s.parse().ok()).unwrap_or(0.1);

    let grid = TimeGrid::new(0.0, 1.0, 64).unwrap();
    let spec = match scenario.as_str() {
        "cp1" => OuSpec::one_change_benchmark(),
        "flip" => OuSpec {
            change_points: vec![32],
            segments: vec![
                OuSegment {
                    mu: -0.002,
                    theta: 0.1,
                    sigma: 0.4,
                },
                OuSegment {
                    mu: 0.002,
                    theta: 0.1,
                    sigma: 0.4,
                },
            ],
        },
        "flip2" => OuSpec {
            change_points: vec![32],
            segments: vec![
                OuSegment {
                    mu: -0.002,
                    theta: 0.01,
                    sigma: 0.4,
                },
                OuSegment {
                    mu: 0.002,
                    theta: 0.01,
                    sigma: 0.4,
                },
            ],
        },
        "flip3" => OuSpec {
            change_points: vec![32],
            segments: vec![
                OuSegment {
                    mu: -0.004,
                    theta: 0.01,
                    sigma: 0.4,
                },
                OuSegment {
                    mu: 0.004,
                    theta: 0.01,
                    sigma: 0.4,
                },
            ],
        },
        "flip4" => OuSpec {
            change_points: vec![32],
            segments: vec![
                OuSegment {
                    mu: -0.006,
                    theta: 0.01,
                    sigma: 0.4,
                },
                OuSegment {
                    mu: 0.006,
                    theta: 0.01,
                    sigma: 0.4,
                },
            ],
        },
        "varflip" => OuSpec {
            change_points: vec![16],
            segments: vec![
                OuSegment {
                    mu: -0.002,
                    theta: 0.05,
                    sigma: 1.2,
                },
                OuSegment {
                    mu: 0.002,
                    theta: 0.05,
                    sigma: 0.4,
                },
            ],
        },
        "varup" => OuSpec {
            change_points: vec![16],
            segments: vec![
                OuSegment {
                    mu: -0.003,
                    theta: 0.01,
                    sigma: 0.3,
                },
                OuSegment {
                    mu: 0.003,
                    theta: 0.01,
                    sigma: 0.9,
                },
            ],
        },
        other => panic!("unknown scenario {other}"),
    };
    let data_seed = match scenario.as_str() {
        "varflip" => 2000 + seed,
        "varup" => 3000 + seed,
        _ => 1000 + seed,
    };
    let raw = simulate_ou(&spec, grid, 256, 0.0, data_seed).unwrap();
    let (normed, _stats) = normalize(&raw).unwrap();

    let mc = ModelConfig::default();
    let cfg = TrainConfig {
        seed,
        rounds,
        steps_per_round: steps,
        clip_c: clip,
        ..TrainConfig::default()
    };

    let t0 = std::time::Instant::now();
    let dump_scores = std::env::var("CALIB_DUMP").is_ok();
    let normed_for_obs = normed.clone();
    let outcome = fit_observed(
        &normed,
        &cfg,
        mc.gen_dims(1),
        mc.disc_dims(1),
        None,
        |round, model, store| {
            eprintln!(
                "[seed {seed}] round {round}: nu = {:?}  ({:.1}s)",
                model.change_points.indices(),
                t0.elapsed().as_secs_f64()
            );
            if dump_scores {
                let phi = cpsde::discriminator::DiscriminatorParams::new("disc", mc.disc_dims(1));
                let s =
                    cpsde::discriminator::window_scores(&phi, store, &normed_for_obs, cfg.window)
                        .unwrap();
                let diffs: Vec<(usize, f64)> = (1..s.len())
                    .map(|t| (t, s.scores()[t] - s.scores()[t - 1]))
                    .collect();
                let mut top = diffs.clone();
                top.sort_by(|a, b| b.1.partial_cmp(&a.1).unwrap());
                eprintln!(
                    "[seed {seed}] round {round}: top diffs {:?}",
                    &top[..5.min(top.len())]
                );
            }
            Ok(())
        },
    )
    .unwrap();
    let elapsed = t0.elapsed().as_secs_f64();
    let nu = outcome.model.change_points.indices().to_vec();
    let mean_idx = baseline_mean(&raw, cfg.window).unwrap();
    let true_cp = spec.change_points.first().copied().unwrap_or(0);
    let _ = true_cp;
    println!(
        "scenario={scenario} seed={seed} nu={nu:?} baseline_mean={mean_idx} rounds_run={} elapsed={elapsed:.1}s",
        outcome.rounds_run
    );

    if scenario == "cp1" {
        // generative quality: also train a plain SDE GAN at the same budget
        let plain_cfg = TrainConfig {
            n_change_points: 0,
            rounds: outcome.rounds_run,
            ..cfg.clone()
        };
        let plain = fit_observed(
            &normed,
            &plain_cfg,
            mc.gen_dims(1),
            mc.disc_dims(1),
            None,
            |_, _, _| Ok(()),
        )
        .unwrap();
        let (_, stats) = normalize(&raw).unwrap();
        let mk_loaded = |o: &cpsde::training::FitOutcome, k: usize| LoadedModel {
            meta: ModelMeta {
                y_dim: 1,
                gen_dims: mc.gen_dims(1),
                disc_dims: mc.disc_dims(1),
                change_points: o.model.change_points.indices().to_vec(),
                n_change_points: k,
                window: cfg.window,
                norm: stats.clone(),
                rounds_run: o.rounds_run,
                seed,
            },
            model: o.model.clone(),
            discriminator: cpsde::discriminator::DiscriminatorParams::new("disc", mc.disc_dims(1)),
            store: o.store.clone(),
        };
        let cp_loaded = mk_loaded(&outcome, 1);
        let plain_loaded = mk_loaded(&plain, 0);
        let avg_mmd = |loaded: &LoadedModel| -> f64 {
            (0..3)
                .map(|d| {
                    let s = generate_samples(loaded, &grid, 256, seed, 77 + d).unwrap();
                    mmd_metric(&raw, &s).unwrap()
                })
                .sum::<f64>()
                / 3.0
        };
        let mmd_cp = avg_mmd(&cp_loaded);
        let mmd_plain = avg_mmd(&plain_loaded);
        println!(
            "seed={seed} mmd_cp={mmd_cp:.5} mmd_plain={mmd_plain:.5} cp_better={}",
            mmd_cp < mmd_plain
        );
    }
}
