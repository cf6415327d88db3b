//! The neural CDE discriminator: maps a (windowed) path to a scalar
//! realism score, doubling as the Wasserstein-distance probe for change
//! detection.
//!
//! The hidden state follows `dH = f(t,H)dt + g(t,H)∘dY`, driven by the
//! observed path's increments and integrated with the same Heun scheme as
//! the generator. Scores must be comparable across windows taken at
//! different absolute times, so integration runs in window-relative time:
//! a `K`-step window is rescaled to `t ∈ [0, 1]` with step `1/(K-1)`,
//! both for the time feature and for the drift term.

use crate::changepoint::ScoreSequence;
use crate::error::{Error, Result};
use crate::nn::Mlp;
use crate::params::ParamStore;
use crate::sim::{heun_step, Path, PathBatch};
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct DiscDims {
    /// Observed path dimension.
    pub y_dim: usize,
    /// Hidden CDE state dimension.
    pub h_dim: usize,
    /// MLP hidden width.
    pub hidden: usize,
}

impl DiscDims {
    pub fn for_data_dim(y_dim: usize) -> Self {
        DiscDims {
            y_dim,
            h_dim: 32,
            hidden: 32,
        }
    }
}

/// Parameters: `xi` embeds the first observation into the hidden state,
/// `f`/`g` are the CDE drift and control-response networks, and `m` reads
/// the terminal state out to a scalar.
#[derive(Debug, Clone)]
pub struct DiscriminatorParams {
    prefix: String,
    pub dims: DiscDims,
    xi: Mlp,
    f_net: Mlp,
    g_net: Mlp,
}

impl DiscriminatorParams {
    pub fn new(prefix: impl Into<String>, dims: DiscDims) -> Self {
        let prefix = prefix.into();
        let w = dims.hidden;
        let xi = Mlp::new(format!("{prefix}.xi"), vec![dims.y_dim, w, w, dims.h_dim]);
        let f_net = Mlp::new(
            format!("{prefix}.f"),
            vec![1 + dims.h_dim, w, w, dims.h_dim],
        );
        let g_net = Mlp::new(
            format!("{prefix}.g"),
            vec![1 + dims.h_dim, w, w, dims.h_dim * dims.y_dim],
        );
        DiscriminatorParams {
            prefix,
            dims,
            xi,
            f_net,
            g_net,
        }
    }

    pub fn prefix(&self) -> &str {
        &self.prefix
    }

    fn m_name(&self) -> String {
        format!("{}.m", self.prefix)
    }

    pub fn register<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.xi.register(store, rng, 1.0)?;
        self.f_net.register(store, rng, 0.1)?;
        self.g_net.register(store, rng, 0.1)?;
        store.register(
            &self.m_name(),
            Tensor::randn(
                &[1, self.dims.h_dim],
                1.0 / (self.dims.h_dim as f64).sqrt(),
                rng,
            ),
        )?;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names = Vec::new();
        names.extend(self.xi.param_names());
        names.extend(self.f_net.param_names());
        names.extend(self.g_net.param_names());
        names.push(self.m_name());
        names
    }

    /// Per-path scores `(N, 1)` for a window given as per-step `(N, y)`
    /// nodes. `H0 = xi(Y0)`, Heun steps driven by `dY`, `D = m·H_T`.
    pub fn score_nodes(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        y_nodes: &[NodeId],
    ) -> Result<NodeId> {
        let k_steps = y_nodes.len();
        if k_steps < 2 {
            return Err(Error::Contract(format!(
                "scoring needs at least 2 steps, got {k_steps}"
            )));
        }
        let n = tape.value(y_nodes[0]).rows();
        let dtau = 1.0 / (k_steps - 1) as f64;
        let mut h = self.xi.apply(tape, store, y_nodes[0])?;
        for k in 0..k_steps - 1 {
            let dy = tape.sub(y_nodes[k + 1], y_nodes[k])?;
            let mut drift = |tape: &mut Tape, t: f64, h: NodeId| -> Result<NodeId> {
                let tcol = tape.constant(Tensor::full(&[n, 1], t));
                let inp = tape.concat_cols(tcol, h)?;
                self.f_net.apply(tape, store, inp)
            };
            let mut control = |tape: &mut Tape, t: f64, h: NodeId| -> Result<NodeId> {
                let tcol = tape.constant(Tensor::full(&[n, 1], t));
                let inp = tape.concat_cols(tcol, h)?;
                self.g_net.apply(tape, store, inp)
            };
            h = heun_step(
                tape,
                &mut drift,
                &mut control,
                k as f64 * dtau,
                h,
                dtau,
                dy,
                k,
            )
            .map_err(|e| match e {
                Error::SimulationDiverged { step } => Error::Detection(format!(
                    "discriminator state diverged at window step {step}"
                )),
                other => other,
            })?;
        }
        let m = tape.param(store, &self.m_name())?;
        let zero = tape.constant(Tensor::zeros(&[1]));
        tape.affine(h, m, zero)
    }

    /// Score one observed path (recorded as constants on a fresh tape).
    pub fn score_path(&self, store: &ParamStore, path: &Path) -> Result<f64> {
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = (0..path.grid.n_steps)
            .map(|k| {
                tape.constant(
                    Tensor::new(vec![1, path.x_dim()], path.values.row(k).to_vec()).unwrap(),
                )
            })
            .collect();
        let d = self.score_nodes(&mut tape, store, &nodes)?;
        Ok(tape.value(d).item())
    }

    /// Mean score of a whole batch over the window `[start, start+len)`,
    /// evaluated without gradients.
    pub fn mean_window_score(
        &self,
        store: &ParamStore,
        batch: &PathBatch,
        start: usize,
        len: usize,
    ) -> Result<f64> {
        let mut tape = Tape::new();
        let nodes: Vec<NodeId> = (start..start + len)
            .map(|k| tape.constant(batch.step_matrix(k)))
            .collect();
        let d = self.score_nodes(&mut tape, store, &nodes)?;
        let mean = tape.mean(d);
        Ok(tape.value(mean).item())
    }
}

/// Batch-averaged scores of every length-`w` sliding window:
/// `s̄_t = (1/N) Σ_i D(X^(i)_{t:t+w})` for `t = 0..T-w`, giving exactly
/// `T-w+1` scores.
pub fn window_scores(
    phi: &DiscriminatorParams,
    store: &ParamStore,
    batch: &PathBatch,
    w: usize,
) -> Result<ScoreSequence> {
    if w < 2 || w > batch.n_steps() {
        return Err(Error::Window {
            w,
            n_steps: batch.n_steps(),
        });
    }
    let mut scores = Vec::with_capacity(batch.n_steps() - w + 1);
    for t in 0..=batch.n_steps() - w {
        scores.push(phi.mean_window_score(store, batch, t, w)?);
    }
    ScoreSequence::new(scores, w)
}
