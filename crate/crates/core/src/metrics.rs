//! Evaluation metrics: MMD between batches, train-on-synthetic /
//! test-on-real one-step prediction, and real-vs-synthetic
//! classification.
//!
//! The recurrent nets are two stacked gated recurrent cells with a linear
//! head — a lighter stand-in for a 2-layer LSTM that plays the same
//! metric role with fewer parameters in the bespoke autodiff engine.

use crate::error::{Error, Result};
use crate::kernel;
use crate::nn::{Activation, Mlp};
use crate::params::ParamStore;
use crate::rng::{stream, Stream};
use crate::sim::PathBatch;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use crate::training::{ADAM_BETAS, ADAM_EPS};
use rand::seq::SliceRandom;
use rand::Rng;

pub const PREDICTOR_HIDDEN: usize = 16;
/// The classifier gets a smaller stack and a light L2 penalty: with small
/// sample counts an unregularized net memorizes the training paths and
/// its test cross-entropy drifts far above the chance level it is
/// compared against.
pub const CLASSIFIER_HIDDEN: usize = 8;
const METRIC_LR: f64 = 1e-2;
const CLASSIFIER_L2: f64 = 1e-3;

/// Unbiased squared MMD between two batches of whole paths (flattened to
/// `T·d` vectors) with a Gaussian kernel; bandwidth is the median
/// heuristic over the pooled pairwise distances. May be slightly
/// negative, reported as-is.
pub fn mmd_metric(a: &PathBatch, b: &PathBatch) -> Result<f64> {
    if a.grid != b.grid || a.x_dim() != b.x_dim() {
        return Err(Error::Estimator(
            "batches must share grid and channel count".into(),
        ));
    }
    if a.n_paths() < 2 || b.n_paths() < 2 {
        return Err(Error::Estimator(
            "MMD metric needs at least 2 paths per batch".into(),
        ));
    }
    let av = flatten_paths(a);
    let bv = flatten_paths(b);
    let pooled: Vec<&[f64]> = av.iter().chain(bv.iter()).map(|v| v.as_slice()).collect();
    let bw = kernel::median_bandwidth(&pooled);
    let ar: Vec<&[f64]> = av.iter().map(|v| v.as_slice()).collect();
    let br: Vec<&[f64]> = bv.iter().map(|v| v.as_slice()).collect();
    kernel::mmd2_unbiased(&ar, &br, bw)
}

pub fn flatten_paths(batch: &PathBatch) -> Vec<Vec<f64>> {
    (0..batch.n_paths())
        .map(|i| batch.path(i).values.into_data())
        .collect()
}

// ── Recurrent predictor ─────────────────────────────────────────────

/// One gated recurrent cell; parameters live under `<prefix>.{z,r,h}`.
#[derive(Debug, Clone)]
struct GruCell {
    prefix: String,
    in_dim: usize,
    hid: usize,
}

impl GruCell {
    fn new(prefix: String, in_dim: usize, hid: usize) -> Self {
        GruCell {
            prefix,
            in_dim,
            hid,
        }
    }

    fn gate_names(&self, gate: &str) -> (String, String) {
        (
            format!("{}.{gate}.w", self.prefix),
            format!("{}.{gate}.b", self.prefix),
        )
    }

    fn register<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let fan_in = self.in_dim + self.hid;
        let scale = 1.0 / (fan_in as f64).sqrt();
        for gate in ["z", "r", "h"] {
            let (w, b) = self.gate_names(gate);
            store.register(&w, Tensor::randn(&[self.hid, fan_in], scale, rng))?;
            store.register(&b, Tensor::zeros(&[self.hid]))?;
        }
        Ok(())
    }

    fn param_names(&self) -> Vec<String> {
        ["z", "r", "h"]
            .iter()
            .flat_map(|g| {
                let (w, b) = self.gate_names(g);
                [w, b]
            })
            .collect()
    }

    /// `h' = (1-z)⊙h + z⊙h̃`, `z = σ(W_z[x,h])`, `r = σ(W_r[x,h])`,
    /// `h̃ = tanh(W_h[x, r⊙h])`.
    fn step(&self, tape: &mut Tape, store: &ParamStore, x: NodeId, h: NodeId) -> Result<NodeId> {
        let cat = tape.concat_cols(x, h)?;
        let (wz, bz) = self.gate_names("z");
        let (wr, br) = self.gate_names("r");
        let (wh, bh) = self.gate_names("h");
        let wzn = tape.param(store, &wz)?;
        let bzn = tape.param(store, &bz)?;
        let za = tape.affine(cat, wzn, bzn)?;
        let z = tape.sigmoid(za);
        let wrn = tape.param(store, &wr)?;
        let brn = tape.param(store, &br)?;
        let ra = tape.affine(cat, wrn, brn)?;
        let r = tape.sigmoid(ra);
        let rh = tape.mul(r, h)?;
        let cat2 = tape.concat_cols(x, rh)?;
        let whn = tape.param(store, &wh)?;
        let bhn = tape.param(store, &bh)?;
        let ca = tape.affine(cat2, whn, bhn)?;
        let cand = tape.tanh(ca);
        let zh = tape.mul(z, h)?;
        let zc = tape.mul(z, cand)?;
        let keep = tape.sub(h, zh)?;
        tape.add(keep, zc)
    }
}

/// Two stacked gated recurrent cells plus a linear head.
#[derive(Debug, Clone)]
pub struct RecurrentPredictor {
    cells: Vec<GruCell>,
    head: Mlp,
    hid: usize,
}

impl RecurrentPredictor {
    pub fn new(prefix: &str, in_dim: usize, hid: usize, out_dim: usize) -> Self {
        let cells = vec![
            GruCell::new(format!("{prefix}.c0"), in_dim, hid),
            GruCell::new(format!("{prefix}.c1"), hid, hid),
        ];
        let head =
            Mlp::new(format!("{prefix}.head"), vec![hid, out_dim]).with_output(Activation::Linear);
        RecurrentPredictor { cells, head, hid }
    }

    pub fn register<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        for c in &self.cells {
            c.register(store, rng)?;
        }
        self.head.register(store, rng, 1.0)?;
        Ok(())
    }

    pub fn param_names(&self) -> Vec<String> {
        let mut names: Vec<String> = self.cells.iter().flat_map(|c| c.param_names()).collect();
        names.extend(self.head.param_names());
        names
    }

    /// Run the stack over per-step inputs; returns the top hidden state
    /// after each step.
    fn hidden_sequence(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        inputs: &[NodeId],
    ) -> Result<Vec<NodeId>> {
        let n = tape.value(inputs[0]).rows();
        let mut h: Vec<NodeId> = self
            .cells
            .iter()
            .map(|_| tape.constant(Tensor::zeros(&[n, self.hid])))
            .collect();
        let mut tops = Vec::with_capacity(inputs.len());
        for &x in inputs {
            let mut inp = x;
            for (c, cell) in self.cells.iter().enumerate() {
                h[c] = cell.step(tape, store, inp, h[c])?;
                inp = h[c];
            }
            tops.push(*h.last().unwrap());
        }
        Ok(tops)
    }

    fn head_apply(&self, tape: &mut Tape, store: &ParamStore, h: NodeId) -> Result<NodeId> {
        self.head.apply(tape, store, h)
    }
}

/// Mean squared one-step error of predicting each value from its
/// predecessor (the trivial last-value baseline).
pub fn last_value_baseline_loss(batch: &PathBatch) -> f64 {
    let (n, t, d) = (batch.n_paths(), batch.n_steps(), batch.x_dim());
    let mut acc = 0.0;
    for i in 0..n {
        for k in 0..t - 1 {
            for c in 0..d {
                let diff = batch.value(i, k + 1, c) - batch.value(i, k, c);
                acc += diff * diff;
            }
        }
    }
    acc / ((n * (t - 1) * d) as f64)
}

/// One-step-ahead squared-error loss node for a whole batch.
fn one_step_loss(
    pred: &RecurrentPredictor,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &PathBatch,
) -> Result<NodeId> {
    let t_len = batch.n_steps();
    let inputs: Vec<NodeId> = (0..t_len - 1)
        .map(|k| tape.constant(batch.step_matrix(k)))
        .collect();
    let tops = pred.hidden_sequence(tape, store, &inputs)?;
    let mut total: Option<NodeId> = None;
    for (k, &top) in tops.iter().enumerate() {
        let yhat = pred.head_apply(tape, store, top)?;
        let target = tape.constant(batch.step_matrix(k + 1));
        let diff = tape.sub(yhat, target)?;
        let sq = tape.mul(diff, diff)?;
        let s = tape.sum(sq);
        total = Some(match total {
            None => s,
            Some(acc) => tape.add(acc, s)?,
        });
    }
    let count = (batch.n_paths() * (t_len - 1) * batch.x_dim()) as f64;
    Ok(tape.scale(total.unwrap(), 1.0 / count))
}

/// Train-on-synthetic-test-on-real one-step prediction: fit the
/// recurrent predictor on `train_batch`, return its mean squared
/// one-step error on `test_batch`.
pub fn tstr_prediction(
    train_batch: &PathBatch,
    test_batch: &PathBatch,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    if train_batch.grid != test_batch.grid || train_batch.x_dim() != test_batch.x_dim() {
        return Err(Error::Estimator(
            "train and test batches must share grid and channels".into(),
        ));
    }
    let d = train_batch.x_dim();
    let pred = RecurrentPredictor::new("pred", d, PREDICTOR_HIDDEN, d);
    let mut store = ParamStore::new();
    let mut rng = stream(seed, Stream::Metrics, &[0]);
    pred.register(&mut store, &mut rng)?;
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let loss = one_step_loss(&pred, &mut tape, &store, train_batch)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Training {
                what: "prediction loss".into(),
            });
        }
        store.zero_grads();
        tape.backward(loss, &mut store)?;
        store.adam_step(METRIC_LR, ADAM_BETAS, ADAM_EPS)?;
    }
    let mut tape = Tape::new();
    let loss = one_step_loss(&pred, &mut tape, &store, test_batch)?;
    Ok(tape.value(loss).item())
}

/// Binary cross-entropy (with logits) loss node: labels are constants.
fn bce_loss(
    pred: &RecurrentPredictor,
    tape: &mut Tape,
    store: &ParamStore,
    batch: &PathBatch,
    labels: &Tensor,
) -> Result<NodeId> {
    let inputs: Vec<NodeId> = (0..batch.n_steps())
        .map(|k| tape.constant(batch.step_matrix(k)))
        .collect();
    let tops = pred.hidden_sequence(tape, store, &inputs)?;
    let logits = pred.head_apply(tape, store, *tops.last().unwrap())?;
    // softplus(z) - y·z, averaged
    let sp = tape.softplus(logits);
    let y = tape.constant(labels.clone());
    let yz = tape.mul(y, logits)?;
    let per = tape.sub(sp, yz)?;
    Ok(tape.mean(per))
}

/// Real-vs-synthetic classification: 70/30 split per class (seeded
/// shuffle keeps the classes balanced), recurrent classifier trained
/// with cross-entropy; returns the test cross-entropy. Chance level for
/// balanced classes is `ln 2` — larger means harder to distinguish.
pub fn classification_score(
    real: &PathBatch,
    synth: &PathBatch,
    epochs: usize,
    seed: u64,
) -> Result<f64> {
    if real.grid != synth.grid || real.x_dim() != synth.x_dim() {
        return Err(Error::Estimator(
            "real and synthetic batches must share grid and channels".into(),
        ));
    }
    let mut rng = stream(seed, Stream::Metrics, &[1]);
    let split = |batch: &PathBatch, rng: &mut rand_chacha::ChaCha12Rng| {
        let mut idx: Vec<usize> = (0..batch.n_paths()).collect();
        idx.shuffle(rng);
        let n_train = (idx.len() * 7) / 10;
        (batch.select(&idx[..n_train]), batch.select(&idx[n_train..]))
    };
    let (real_tr, real_te) = split(real, &mut rng);
    let (synth_tr, synth_te) = split(synth, &mut rng);
    let train = real_tr.concat(&synth_tr)?;
    let test = real_te.concat(&synth_te)?;
    let label = |n_real: usize, n_total: usize| {
        let mut l = vec![0.0; n_total];
        for v in l.iter_mut().take(n_real) {
            *v = 1.0;
        }
        Tensor::new(vec![n_total, 1], l).unwrap()
    };
    let train_labels = label(real_tr.n_paths(), train.n_paths());
    let test_labels = label(real_te.n_paths(), test.n_paths());

    let d = real.x_dim();
    let clf = RecurrentPredictor::new("clf", d, CLASSIFIER_HIDDEN, 1);
    let mut store = ParamStore::new();
    clf.register(&mut store, &mut rng)?;
    for _ in 0..epochs {
        let mut tape = Tape::new();
        let loss = bce_loss(&clf, &mut tape, &store, &train, &train_labels)?;
        if !tape.value(loss).item().is_finite() {
            return Err(Error::Training {
                what: "classification loss".into(),
            });
        }
        store.zero_grads();
        tape.backward(loss, &mut store)?;
        store.add_l2_to_grads("clf.", CLASSIFIER_L2);
        store.adam_step(METRIC_LR, ADAM_BETAS, ADAM_EPS)?;
    }
    let mut tape = Tape::new();
    let loss = bce_loss(&clf, &mut tape, &store, &test, &test_labels)?;
    Ok(tape.value(loss).item())
}
