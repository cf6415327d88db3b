//! WGAN optimization and the alternating change-point / parameter loop.
//!
//! The discriminator ascends `E[D(fake)] - E[D(real)]` on full-length
//! paths with weight clipping after every update; the generator descends
//! `E[D(fake)]`. Change points stay fixed during a round of GAN steps and
//! are then re-estimated from the sliding-window score sequence of the
//! real data under the current discriminator.

use crate::changepoint::{detect_multi, ChangePointEstimate};
use crate::discriminator::{window_scores, DiscDims, DiscriminatorParams};
use crate::error::{Error, Result};
use crate::generator::{generate_full, sample_noise, GenDims, NoiseBundle, SegmentedGenerator};
use crate::params::ParamStore;
use crate::rng::{stream, Stream};
use crate::sim::PathBatch;
use crate::tape::Tape;
use rand::Rng;

pub const ADAM_BETAS: (f64, f64) = (0.9, 0.999);
pub const ADAM_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    /// Sliding-window width `w` for score sequences and change spacing.
    pub window: usize,
    pub lr_g: f64,
    pub lr_d: f64,
    /// Weight-clipping constant for the discriminator.
    pub clip_c: f64,
    pub d_steps_per_g: usize,
    pub batch_size: usize,
    pub rounds: usize,
    pub steps_per_round: usize,
    /// Set from the experiment seed, not from config files.
    #[serde(skip)]
    pub seed: u64,
    pub n_change_points: usize,
    /// Shortest admissible segment; at least `window`.
    pub min_segment: usize,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            window: 8,
            lr_g: 1e-3,
            lr_d: 1e-3,
            clip_c: 0.1,
            d_steps_per_g: 5,
            batch_size: 64,
            rounds: 10,
            steps_per_round: 25,
            seed: 0,
            n_change_points: 1,
            min_segment: 8,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.window < 2 {
            return Err(Error::Config("window must be at least 2".into()));
        }
        for (name, v) in [
            ("lr_g", self.lr_g),
            ("lr_d", self.lr_d),
            ("clip_c", self.clip_c),
        ] {
            if !v.is_finite() || v <= 0.0 {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        for (name, v) in [
            ("d_steps_per_g", self.d_steps_per_g),
            ("batch_size", self.batch_size),
            ("rounds", self.rounds),
            ("steps_per_round", self.steps_per_round),
        ] {
            if v == 0 {
                return Err(Error::Config(format!("{name} must be positive")));
            }
        }
        if self.min_segment < self.window {
            return Err(Error::Config(format!(
                "min_segment {} must be at least the window {}",
                self.min_segment, self.window
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize)]
pub struct StepRecord {
    pub round: usize,
    pub step: usize,
    pub loss_g: f64,
    pub loss_d: f64,
}

/// Per-step losses, per-round change point estimates, and rejected-update
/// events.
#[derive(Debug, Clone, Default)]
pub struct TrainHistory {
    pub steps: Vec<StepRecord>,
    pub round_estimates: Vec<Vec<usize>>,
    pub events: Vec<String>,
}

/// Everything `fit` produces: the segmented generator, the discriminator,
/// the parameter store both index into, and the history.
#[derive(Debug)]
pub struct FitOutcome {
    pub model: SegmentedGenerator,
    pub discriminator: DiscriminatorParams,
    pub store: ParamStore,
    pub history: TrainHistory,
    pub rounds_run: usize,
}

/// The discriminator objective `E[D(fake)] - E[D(real)]` on whole paths,
/// evaluated without gradients. Exactly zero when both batches are the
/// same tensors.
pub fn wgan_objective(
    phi: &DiscriminatorParams,
    store: &ParamStore,
    fake: &PathBatch,
    real: &PathBatch,
) -> Result<f64> {
    let f = phi.mean_window_score(store, fake, 0, fake.n_steps())?;
    let r = phi.mean_window_score(store, real, 0, real.n_steps())?;
    Ok(f - r)
}

/// One discriminator ascent step on given batches, followed by weight
/// clipping. Returns the objective value before the update.
pub fn discriminator_update(
    phi: &DiscriminatorParams,
    store: &mut ParamStore,
    fake: &PathBatch,
    real: &PathBatch,
    lr: f64,
    clip_c: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let fake_nodes: Vec<_> = (0..fake.n_steps())
        .map(|k| tape.constant(fake.step_matrix(k)))
        .collect();
    let real_nodes: Vec<_> = (0..real.n_steps())
        .map(|k| tape.constant(real.step_matrix(k)))
        .collect();
    let d_fake = phi.score_nodes(&mut tape, store, &fake_nodes)?;
    let d_real = phi.score_nodes(&mut tape, store, &real_nodes)?;
    let mf = tape.mean(d_fake);
    let mr = tape.mean(d_real);
    let obj = tape.sub(mf, mr)?;
    let value = tape.value(obj).item();
    if !value.is_finite() {
        return Err(Error::Training {
            what: "discriminator objective".into(),
        });
    }
    // ascend the objective = descend its negation
    let loss = tape.neg(obj);
    store.zero_grads();
    tape.backward(loss, &mut *store)?;
    store.adam_step_prefix(phi.prefix(), lr, ADAM_BETAS, ADAM_EPS)?;
    store.zero_grads();
    clip_weights(phi, store, clip_c);
    Ok(value)
}

/// One generator descent step on `E[D(fake)]` for the given noise.
/// Returns the loss value before the update.
pub fn generator_update(
    model: &SegmentedGenerator,
    phi: &DiscriminatorParams,
    store: &mut ParamStore,
    grid: &crate::sim::TimeGrid,
    noise: &NoiseBundle,
    lr: f64,
) -> Result<f64> {
    let mut tape = Tape::new();
    let gen = generate_full(&mut tape, store, model, grid, &noise.v, &noise.dw)?;
    let d_fake = phi.score_nodes(&mut tape, store, &gen.y_nodes)?;
    let loss = tape.mean(d_fake);
    let value = tape.value(loss).item();
    if !value.is_finite() {
        return Err(Error::Training {
            what: "generator loss".into(),
        });
    }
    store.zero_grads();
    tape.backward(loss, &mut *store)?;
    for seg in &model.segments {
        store.adam_step_prefix(seg.prefix(), lr, ADAM_BETAS, ADAM_EPS)?;
    }
    store.zero_grads();
    Ok(value)
}

/// Clamp every discriminator parameter to `[-c, c]`.
pub fn clip_weights(phi: &DiscriminatorParams, store: &mut ParamStore, c: f64) {
    store.clamp_prefix(phi.prefix(), c);
}

/// One alternation unit: `d_steps_per_g` discriminator updates (each on a
/// fresh real minibatch and freshly generated fake batch) followed by one
/// generator update. Change points stay fixed throughout.
pub fn wgan_step<R: Rng>(
    model: &SegmentedGenerator,
    phi: &DiscriminatorParams,
    store: &mut ParamStore,
    real: &PathBatch,
    cfg: &TrainConfig,
    rng: &mut R,
) -> Result<(f64, f64)> {
    let grid = real.grid;
    let m = cfg.batch_size.min(real.n_paths());
    let mut loss_d = 0.0;
    for _ in 0..cfg.d_steps_per_g {
        let idx = rand::seq::index::sample(rng, real.n_paths(), m).into_vec();
        let real_mb = real.select(&idx);
        let noise = sample_noise(&model.dims, &grid, m, rng);
        let fake = {
            let mut tape = Tape::new();
            generate_full(&mut tape, store, model, &grid, &noise.v, &noise.dw)?.batch
        };
        loss_d = discriminator_update(phi, store, &fake, &real_mb, cfg.lr_d, cfg.clip_c)?;
    }
    let noise = sample_noise(&model.dims, &grid, m, rng);
    let loss_g = generator_update(model, phi, store, &grid, &noise, cfg.lr_g)?;
    Ok((loss_g, loss_d))
}

/// Evenly spaced initial change points: `k` indices over `(0, T)`.
pub fn even_init(n_change_points: usize, n_steps: usize) -> Vec<usize> {
    (1..=n_change_points)
        .map(|i| i * n_steps / (n_change_points + 1))
        .collect()
}

/// True when the boundaries `[0, cps..., T]` keep every segment at least
/// `min_segment` long.
pub fn respects_min_segment(cps: &[usize], n_steps: usize, min_segment: usize) -> bool {
    let mut prev = 0usize;
    for &cp in cps {
        if cp <= prev || cp - prev < min_segment {
            return false;
        }
        prev = cp;
    }
    n_steps - prev >= min_segment
}

/// Parameters and change points to continue a run from (checkpoint
/// resume). The round counter keys the per-step RNG streams, so a resumed
/// round replays exactly the round a fresh run would have produced.
#[derive(Debug)]
pub struct StartState {
    pub store: ParamStore,
    pub change_points: Vec<usize>,
    pub next_round: usize,
}

/// Joint training: alternate GAN rounds with change point re-estimation
/// until the estimate is stable for three consecutive rounds or the round
/// budget is exhausted.
pub fn fit(data: &PathBatch, cfg: &TrainConfig) -> Result<FitOutcome> {
    fit_with_dims(
        data,
        cfg,
        GenDims::for_data_dim(data.x_dim()),
        DiscDims::for_data_dim(data.x_dim()),
    )
}

pub fn fit_with_dims(
    data: &PathBatch,
    cfg: &TrainConfig,
    gen_dims: GenDims,
    disc_dims: DiscDims,
) -> Result<FitOutcome> {
    fit_observed(data, cfg, gen_dims, disc_dims, None, |_, _, _| Ok(()))
}

/// Full-control variant: optional resume state plus a per-round observer
/// (`round index, model, store`) invoked after each round, e.g. for
/// checkpointing.
pub fn fit_observed(
    data: &PathBatch,
    cfg: &TrainConfig,
    gen_dims: GenDims,
    disc_dims: DiscDims,
    start: Option<StartState>,
    mut on_round: impl FnMut(usize, &SegmentedGenerator, &ParamStore) -> Result<()>,
) -> Result<FitOutcome> {
    cfg.validate()?;
    let t_len = data.n_steps();
    if t_len < cfg.min_segment * (cfg.n_change_points + 1) {
        return Err(Error::Config(format!(
            "{t_len} steps cannot hold {} segments of at least {}",
            cfg.n_change_points + 1,
            cfg.min_segment
        )));
    }
    if gen_dims.y_dim != data.x_dim() || disc_dims.y_dim != data.x_dim() {
        return Err(Error::Config(
            "model dims do not match data channels".into(),
        ));
    }

    let phi = DiscriminatorParams::new("disc", disc_dims);
    let (mut model, mut store, first_round) = match start {
        Some(s) => {
            let est = ChangePointEstimate::new(s.change_points, 0)
                .map_err(|e| Error::Config(format!("resume change points invalid: {e}")))?;
            if est.len() != cfg.n_change_points {
                return Err(Error::Config(format!(
                    "resume state has {} change points, config wants {}",
                    est.len(),
                    cfg.n_change_points
                )));
            }
            let model = SegmentedGenerator::new("gen", gen_dims, est);
            (model, s.store, s.next_round)
        }
        None => {
            let init_cps = even_init(cfg.n_change_points, t_len);
            let estimate = ChangePointEstimate::new(init_cps, 0)
                .map_err(|e| Error::Config(format!("initial change points invalid: {e}")))?;
            let model = SegmentedGenerator::new("gen", gen_dims, estimate);
            let mut store = ParamStore::new();
            let mut init_rng = stream(cfg.seed, Stream::Init, &[]);
            model.register(&mut store, &mut init_rng)?;
            phi.register(&mut store, &mut init_rng)?;
            clip_weights(&phi, &mut store, cfg.clip_c);
            (model, store, 0)
        }
    };

    let mut history = TrainHistory::default();
    let mut rounds_run = first_round;
    for round in first_round..cfg.rounds {
        run_round(&model, &phi, &mut store, data, cfg, round, &mut history)?;
        rounds_run = round + 1;
        if cfg.n_change_points > 0 {
            update_change_points(&mut model, &phi, &store, data, cfg, &mut history)?;
        }
        on_round(round, &model, &store)?;
        if cfg.n_change_points > 0 && history.round_estimates.len() >= 3 {
            let est = history.round_estimates.last().unwrap();
            let tail = &history.round_estimates[history.round_estimates.len() - 3..];
            if tail.iter().all(|e| e == est) {
                break;
            }
        }
    }
    Ok(FitOutcome {
        model,
        discriminator: phi,
        store,
        history,
        rounds_run,
    })
}

/// One round of GAN steps with the change points held fixed. Exposed so a
/// checkpoint-resumed run can replay the next round exactly.
pub fn run_round(
    model: &SegmentedGenerator,
    phi: &DiscriminatorParams,
    store: &mut ParamStore,
    data: &PathBatch,
    cfg: &TrainConfig,
    round: usize,
    history: &mut TrainHistory,
) -> Result<()> {
    for step in 0..cfg.steps_per_round {
        let mut rng = stream(cfg.seed, Stream::TrainStep, &[round as u64, step as u64]);
        let (loss_g, loss_d) = wgan_step(model, phi, store, data, cfg, &mut rng)?;
        history.steps.push(StepRecord {
            round,
            step,
            loss_g,
            loss_d,
        });
    }
    Ok(())
}

/// Re-estimate change points from the window score sequence; an estimate
/// that is incomplete or breaks the minimum segment length is rejected
/// and the previous one kept.
pub fn update_change_points(
    model: &mut SegmentedGenerator,
    phi: &DiscriminatorParams,
    store: &ParamStore,
    data: &PathBatch,
    cfg: &TrainConfig,
    history: &mut TrainHistory,
) -> Result<()> {
    let scores = window_scores(phi, store, data, cfg.window)?;
    let est = detect_multi(&scores, cfg.window, cfg.n_change_points)?;
    let round = history.round_estimates.len();
    if !est.is_complete() {
        history.events.push(format!(
            "round {round}: only {} of {} admissible change points; keeping previous estimate",
            est.len(),
            cfg.n_change_points
        ));
    } else if !respects_min_segment(est.indices(), data.n_steps(), cfg.min_segment) {
        history.events.push(format!(
            "round {round}: estimate {:?} violates min segment {}; keeping previous estimate",
            est.indices(),
            cfg.min_segment
        ));
    } else {
        model.set_change_points(est)?;
    }
    history
        .round_estimates
        .push(model.change_points.indices().to_vec());
    Ok(())
}
