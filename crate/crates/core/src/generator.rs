//! The neural SDE generator, extended to a segment-wise model
//! conditioned on change points.
//!
//! A segment's dynamics are `dX = mu(t,X)dt + sigma(t,X)∘dW` integrated
//! with the Stratonovich Heun scheme, with initial state `zeta(V)` from
//! Gaussian noise `V` and an affine readout `Y = alpha·X + beta`. A
//! segmented model runs one parameter set per segment; at a change point
//! the pre-readout state carries over unchanged (training paths are
//! continuous there, only the coefficients switch).

use crate::changepoint::ChangePointEstimate;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::sim::{heun_step, PathBatch, TimeGrid};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;
use rand_distr::StandardNormal;

/// Dimensions of one generator: noise `v`, latent state `x`, Brownian
/// `w`, readout `y`, and MLP hidden width.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct GenDims {
    pub v_dim: usize,
    pub x_dim: usize,
    pub w_dim: usize,
    pub y_dim: usize,
    pub hidden: usize,
}

impl GenDims {
    pub fn for_data_dim(y_dim: usize) -> Self {
        GenDims {
            v_dim: 4,
            x_dim: 4,
            w_dim: 4,
            y_dim,
            hidden: 32,
        }
    }
}

/// Parameters of one segment: the initial-state network `zeta` (only the
/// first segment owns one; later segments continue from the previous
/// terminal state), drift and diffusion networks, and the affine readout.
#[derive(Debug, Clone)]
pub struct GeneratorParams {
    prefix: String,
    pub dims: GenDims,
    zeta: Option<Mlp>,
    mu_net: Mlp,
    sigma_net: Mlp,
}

impl GeneratorParams {
    pub fn new(prefix: impl Into<String>, dims: GenDims, with_zeta: bool) -> Self {
        let prefix = prefix.into();
        let h = dims.hidden;
        let zeta = with_zeta
            .then(|| Mlp::new(format!("{prefix}.zeta"), vec![dims.v_dim, h, h, dims.x_dim]));
        let mu_net = Mlp::new(
            format!("{prefix}.mu"),
            vec![1 + dims.x_dim, h, h, dims.x_dim],
        );
        let sigma_net = Mlp::new(
            format!("{prefix}.sigma"),
            vec![1 + dims.x_dim, h, h, dims.x_dim * dims.w_dim],
        );
        GeneratorParams {
            prefix,
            dims,
            zeta,
            mu_net,
            sigma_net,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    pub fn alpha_name(&self) -> String {
        format!("{}.alpha", self.prefix)
    }

    pub fn beta_name(&self) -> String {
        format!("{}.beta", self.prefix)
    }

    pub fn has_zeta(&self) -> bool {
        self.zeta.is_some()
    }

    /// Drift and diffusion start near zero (final layers scaled down) so
    /// early training is stable; the readout starts as identity when the
    /// shapes allow it.
    pub fn register<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        if let Some(zeta) = &self.zeta {
            zeta.register(store, rng, 1.0)?;
        }
        self.mu_net.register(store, rng, 0.1)?;
        self.sigma_net.register(store, rng, 0.1)?;
        let (y, x) = (self.dims.y_dim, self.dims.x_dim);
        let mut alpha = Tensor::randn(&[y, x], 1.0 / (x as f64).sqrt(), rng);
        for i in 0..y.min(x) {
            alpha.set2(i, i, 1.0);
        }
        store.register(&self.alpha_name(), alpha)?;
        store.register(&self.beta_name(), Tensor::zeros(&[y]))?;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        if let Some(zeta) = &self.zeta {
            names.extend(zeta.param_names());
        }
        names.extend(self.mu_net.param_names());
        names.extend(self.sigma_net.param_names());
        names.push(self.alpha_name());
        names.push(self.beta_name());
        names
    }

    /// `X0 = zeta(V)` for a `(N, v_dim)` noise node.
    pub fn initial_state(&self, tape: &mut Tape, store: &ParamStore, v: NodeId) -> Result<NodeId> {
        let zeta = self.zeta.as_ref().ok_or_else(|| {
            Error::Contract(format!(
                "segment '{}' has no initial-state network and no x_init was given",
                self.prefix
            ))
        })?;
        zeta.apply(tape, store, v)
    }

    /// `Y = X·alphaᵀ + beta`.
    pub fn readout(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let a = tape.param(store, &self.alpha_name())?;
        let b = tape.param(store, &self.beta_name())?;
        tape.affine(x, a, b)
    }

    /// One Heun step of this segment's SDE from state `x` at grid step `k`.
    pub fn step(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        grid: &TimeGrid,
        k: usize,
        x: NodeId,
        dw: NodeId,
    ) -> Result<NodeId> {
        let n = tape.value(x).rows();
        let horizon = grid.horizon();
        let t0 = grid.t0;
        let mut drift = |tape: &mut Tape, t: f64, x: NodeId| -> Result<NodeId> {
            let tau = (t - t0) / horizon;
            let tcol = tape.constant(Tensor::full(&[n, 1], tau));
            let inp = tape.concat_cols(tcol, x)?;
            self.mu_net.apply(tape, store, inp)
        };
        let mut diffusion = |tape: &mut Tape, t: f64, x: NodeId| -> Result<NodeId> {
            let tau = (t - t0) / horizon;
            let tcol = tape.constant(Tensor::full(&[n, 1], tau));
            let inp = tape.concat_cols(tcol, x)?;
            self.sigma_net.apply(tape, store, inp)
        };
        heun_step(
            tape,
            &mut drift,
            &mut diffusion,
            grid.time(k),
            x,
            grid.dt,
            dw,
            k,
        )
    }
}

/// Fresh generator noise for a batch: `V ~ N(0, I)` and per-step Brownian
/// increments `dW ~ N(0, dt·I)`.
#[derive(Debug, Clone)]
pub struct NoiseBundle {
    pub v: Tensor,
    pub dw: Vec<Tensor>,
}

pub fn sample_noise<R: Rng>(dims: &GenDims, grid: &TimeGrid, n: usize, rng: &mut R) -> NoiseBundle {
    let v = Tensor::randn(&[n, dims.v_dim], 1.0, rng);
    let sd = grid.dt.sqrt();
    let dw = (0..grid.n_steps - 1)
        .map(|_| {
            let data = (0..n * dims.w_dim)
                .map(|_| sd * rng.sample::<f64, _>(StandardNormal))
                .collect();
            Tensor::new(vec![n, dims.w_dim], data).unwrap()
        })
        .collect();
    NoiseBundle { v, dw }
}

/// A generated batch: readout values plus the per-step readout nodes for
/// building losses on the same tape.
#[derive(Debug)]
pub struct GeneratedBatch {
    pub batch: PathBatch,
    pub y_nodes: Vec<NodeId>,
}

/// Integrate one segment over the whole grid.
///
/// `x_init` (a `(N, x_dim)` node) overrides `zeta(V)` when given; exactly
/// one of `x_init` / `v` must supply the initial state.
pub fn generate_segment(
    tape: &mut Tape,
    store: &ParamStore,
    theta: &GeneratorParams,
    grid: &TimeGrid,
    x_init: Option<NodeId>,
    v: Option<&Tensor>,
    noise: &[Tensor],
) -> Result<GeneratedBatch> {
    let segments = vec![theta.clone()];
    let model = SegmentedGenerator {
        segments,
        change_points: ChangePointEstimate::none(),
        dims: theta.dims,
    };
    generate_with_init(tape, store, &model, grid, x_init, v, noise)
}

/// Segment-wise generator: one [`GeneratorParams`] per segment plus the
/// current change point estimate (`len(segments) == len(change_points)+1`).
#[derive(Debug, Clone)]
pub struct SegmentedGenerator {
    pub segments: Vec<GeneratorParams>,
    pub change_points: ChangePointEstimate,
    pub dims: GenDims,
}

impl SegmentedGenerator {
    /// Build a model with `n_change_points + 1` segments named
    /// `<prefix>.s<k>`; only segment 0 owns an initial-state network.
    pub fn new(prefix: &str, dims: GenDims, change_points: ChangePointEstimate) -> Self {
        let segments = (0..=change_points.len())
            .map(|k| GeneratorParams::new(format!("{prefix}.s{k}"), dims, k == 0))
            .collect();
        SegmentedGenerator {
            segments,
            change_points,
            dims,
        }
    }

    pub fn register<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for seg in &self.segments {
            seg.register(store, rng)?;
        }
        Ok(())
    }

    pub fn set_change_points(&mut self, est: ChangePointEstimate) -> Result<()> {
        if est.len() + 1 != self.segments.len() {
            return Err(Error::Contract(format!(
                "{} change points for {} segments",
                est.len(),
                self.segments.len()
            )));
        }
        self.change_points = est;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        self.segments.iter().flat_map(|s| s.param_names()).collect()
    }

    /// Disjoint covering step ranges `[start, end)` of each segment on a
    /// `T`-step grid.
    pub fn segment_ranges(&self, n_steps: usize) -> Vec<(usize, usize)> {
        segment_ranges(self.change_points.indices(), n_steps)
    }

    fn segment_at(&self, k: usize) -> usize {
        self.change_points
            .indices()
            .iter()
            .filter(|&&cp| cp <= k)
            .count()
    }
}

/// Disjoint covering ranges from sorted change points.
pub fn segment_ranges(change_points: &[usize], n_steps: usize) -> Vec<(usize, usize)> {
    let mut ranges = Vec::with_capacity(change_points.len() + 1);
    let mut start = 0;
    for &cp in change_points {
        ranges.push((start, cp));
        start = cp;
    }
    ranges.push((start, n_steps));
    ranges
}

/// Generate a full batch of paths: segment `k` runs on its step range,
/// later segments continue from the previous terminal state, and the
/// readout at step `t` uses the segment owning `t`.
pub fn generate_full(
    tape: &mut Tape,
    store: &ParamStore,
    model: &SegmentedGenerator,
    grid: &TimeGrid,
    v: &Tensor,
    noise: &[Tensor],
) -> Result<GeneratedBatch> {
    generate_with_init(tape, store, model, grid, None, Some(v), noise)
}

fn generate_with_init(
    tape: &mut Tape,
    store: &ParamStore,
    model: &SegmentedGenerator,
    grid: &TimeGrid,
    x_init: Option<NodeId>,
    v: Option<&Tensor>,
    noise: &[Tensor],
) -> Result<GeneratedBatch> {
    if noise.len() != grid.n_steps - 1 {
        return Err(Error::Dimension(format!(
            "{} noise steps for a {}-step grid",
            noise.len(),
            grid.n_steps
        )));
    }
    for cp in model.change_points.indices() {
        if *cp == 0 || *cp >= grid.n_steps {
            return Err(Error::Contract(format!(
                "change point {cp} outside (0, {})",
                grid.n_steps
            )));
        }
    }
    let mut x = match (x_init, v) {
        (Some(x0), _) => x0,
        (None, Some(v)) => {
            let vn = tape.constant(v.clone());
            model.segments[0].initial_state(tape, store, vn)?
        }
        (None, None) => {
            return Err(Error::Contract(
                "either x_init or v must supply the initial state".into(),
            ))
        }
    };

    let n = tape.value(x).rows();
    let mut y_nodes = Vec::with_capacity(grid.n_steps);
    let mut step_values = Vec::with_capacity(grid.n_steps);
    let y0 = model.segments[0].readout(tape, store, x)?;
    y_nodes.push(y0);
    step_values.push(tape.value(y0).clone());

    for (k, noise_k) in noise.iter().enumerate() {
        let seg = &model.segments[model.segment_at(k)];
        if noise_k.rows() != n || noise_k.cols() != model.dims.w_dim {
            return Err(Error::Dimension(format!(
                "noise step {k} has shape {:?}, expected ({n}, {})",
                noise_k.shape(),
                model.dims.w_dim
            )));
        }
        let dw = tape.constant(noise_k.clone());
        x = seg.step(tape, store, grid, k, x, dw)?;
        let owner = &model.segments[model.segment_at(k + 1)];
        let y = owner.readout(tape, store, x)?;
        y_nodes.push(y);
        step_values.push(tape.value(y).clone());
    }
    let batch = PathBatch::from_step_matrices(*grid, &step_values)?;
    Ok(GeneratedBatch { batch, y_nodes })
}
