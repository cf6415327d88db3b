//! Change point estimation from score sequences, plus the windowed mean
//! and MMD heuristic baselines.
//!
//! A [`ScoreSequence`] holds batch-averaged discriminator scores of the
//! sliding windows `X_{t:t+w}`; consecutive score differences act as
//! approximate Wasserstein distances between adjacent segments, and the
//! change point is the index where that difference peaks.

use crate::error::{Error, Result};
use crate::kernel;
use crate::sim::PathBatch;

/// Batch-averaged sliding-window scores `s̄_t`, `t = 0..T-w`.
#[derive(Debug, Clone, PartialEq)]
pub struct ScoreSequence {
    scores: Vec<f64>,
    window: usize,
}

impl ScoreSequence {
    pub fn new(scores: Vec<f64>, window: usize) -> Result<Self> {
        if scores.iter().any(|s| !s.is_finite()) {
            return Err(Error::Detection("non-finite score".into()));
        }
        Ok(ScoreSequence { scores, window })
    }

    pub fn scores(&self) -> &[f64] {
        &self.scores
    }

    pub fn window(&self) -> usize {
        self.window
    }

    pub fn len(&self) -> usize {
        self.scores.len()
    }

    pub fn is_empty(&self) -> bool {
        self.scores.is_empty()
    }
}

/// Sorted change point indices with a minimum-spacing invariant.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ChangePointEstimate {
    indices: Vec<usize>,
    spacing: usize,
    complete: bool,
}

impl ChangePointEstimate {
    pub fn new(indices: Vec<usize>, spacing: usize) -> Result<Self> {
        for pair in indices.windows(2) {
            if pair[1] <= pair[0] || pair[1] - pair[0] <= spacing {
                return Err(Error::Detection(format!(
                    "indices {:?} violate minimum spacing {spacing}",
                    indices
                )));
            }
        }
        Ok(ChangePointEstimate {
            indices,
            spacing,
            complete: true,
        })
    }

    pub fn none() -> Self {
        ChangePointEstimate {
            indices: vec![],
            spacing: 0,
            complete: true,
        }
    }

    pub fn indices(&self) -> &[usize] {
        &self.indices
    }

    pub fn spacing(&self) -> usize {
        self.spacing
    }

    /// False when fewer admissible candidates were found than requested.
    pub fn is_complete(&self) -> bool {
        self.complete
    }

    pub fn len(&self) -> usize {
        self.indices.len()
    }

    pub fn is_empty(&self) -> bool {
        self.indices.is_empty()
    }
}

/// Offline single change point: `v = argmax_t (s̄_t - s̄_{t-1})`, ties
/// broken toward the smallest index.
pub fn detect_offline(s: &ScoreSequence) -> Result<usize> {
    argmax_consecutive_diff(s.scores())
}

fn argmax_consecutive_diff(scores: &[f64]) -> Result<usize> {
    if scores.len() < 2 {
        return Err(Error::Detection(format!(
            "need at least 2 scores, got {}",
            scores.len()
        )));
    }
    let mut best_t = 1;
    let mut best = scores[1] - scores[0];
    for t in 2..scores.len() {
        let d = scores[t] - scores[t - 1];
        if d > best {
            best = d;
            best_t = t;
        }
    }
    Ok(best_t)
}

/// Online rule: the first `t` whose score jump exceeds the threshold
/// `gamma`, or `None` at stream end.
pub fn detect_online<I: IntoIterator<Item = f64>>(scores: I, gamma: f64) -> Option<usize> {
    let mut prev: Option<f64> = None;
    for (t, s) in scores.into_iter().enumerate() {
        if let Some(p) = prev {
            if s - p > gamma {
                return Some(t);
            }
        }
        prev = Some(s);
    }
    None
}

/// Multiple change points: consecutive diffs sorted descending; a
/// candidate is kept when it lies more than `w` steps from every
/// previously kept candidate; stops after `k`. When fewer than `k`
/// admissible candidates exist the estimate is flagged incomplete.
pub fn detect_multi(s: &ScoreSequence, w: usize, k: usize) -> Result<ChangePointEstimate> {
    if k == 0 {
        return Err(Error::Detection("k must be at least 1".into()));
    }
    if s.len() < 2 {
        return Err(Error::Detection(format!(
            "need at least 2 scores, got {}",
            s.len()
        )));
    }
    let scores = s.scores();
    let mut ranked: Vec<usize> = (1..scores.len()).collect();
    // descending by diff, ties toward the smaller index
    ranked.sort_by(|&a, &b| {
        let (da, db) = (scores[a] - scores[a - 1], scores[b] - scores[b - 1]);
        db.partial_cmp(&da).unwrap().then(a.cmp(&b))
    });

    let mut kept: Vec<usize> = Vec::with_capacity(k);
    for &t in &ranked {
        if kept.len() == k {
            break;
        }
        if kept.iter().all(|&j| t.abs_diff(j) > w) {
            kept.push(t);
        }
    }
    let complete = kept.len() == k;
    kept.sort_unstable();
    let mut est = ChangePointEstimate::new(kept, w)?;
    est.complete = complete;
    Ok(est)
}

/// Batch-averaged mean of window `[t, t+w)`, pooled over channels, for
/// `t = 0..T-w`.
pub fn window_mean_sequence(batch: &PathBatch, w: usize) -> Result<Vec<f64>> {
    check_window(batch, w)?;
    let (n, t_len, d) = (batch.n_paths(), batch.n_steps(), batch.x_dim());
    let denom = (n * w * d) as f64;
    let mut out = Vec::with_capacity(t_len - w + 1);
    for t in 0..=t_len - w {
        let mut sum = 0.0;
        for i in 0..n {
            for k in t..t + w {
                for c in 0..d {
                    sum += batch.value(i, k, c);
                }
            }
        }
        out.push(sum / denom);
    }
    Ok(out)
}

/// Heuristic baseline: the largest jump of the batch-averaged window mean.
pub fn baseline_mean(batch: &PathBatch, w: usize) -> Result<usize> {
    argmax_consecutive_diff(&window_mean_sequence(batch, w)?)
}

/// Batch-averaged MMD between the consecutive windows `[t-1, t-1+w)` and
/// `[t, t+w)` of each path, for `t = 1..=T-w`. Each window contributes
/// `w` observations (the per-step value vectors); the Gaussian bandwidth
/// is the median heuristic over the pooled `2w` observations of the
/// comparison.
pub fn window_mmd_sequence(batch: &PathBatch, w: usize) -> Result<Vec<f64>> {
    check_window(batch, w)?;
    if batch.n_steps() < w + 1 {
        return Err(Error::Window {
            w,
            n_steps: batch.n_steps(),
        });
    }
    let (n, t_len, d) = (batch.n_paths(), batch.n_steps(), batch.x_dim());
    let mut out = Vec::with_capacity(t_len - w);
    for t in 1..=t_len - w {
        let mut acc = 0.0;
        for i in 0..n {
            let window_at = |start: usize| -> Vec<Vec<f64>> {
                (start..start + w)
                    .map(|k| (0..d).map(|c| batch.value(i, k, c)).collect())
                    .collect()
            };
            let left = window_at(t - 1);
            let right = window_at(t);
            let pooled: Vec<&[f64]> = left
                .iter()
                .chain(right.iter())
                .map(|v| v.as_slice())
                .collect();
            let bw = kernel::median_bandwidth(&pooled);
            let lrefs: Vec<&[f64]> = left.iter().map(|v| v.as_slice()).collect();
            let rrefs: Vec<&[f64]> = right.iter().map(|v| v.as_slice()).collect();
            acc += kernel::mmd2_biased(&lrefs, &rrefs, bw);
        }
        out.push(acc / n as f64);
    }
    Ok(out)
}

/// Heuristic baseline: the window index maximizing the batch-averaged MMD
/// between consecutive windows.
pub fn baseline_mmd(batch: &PathBatch, w: usize) -> Result<usize> {
    let etas = window_mmd_sequence(batch, w)?;
    if etas.len() < 2 {
        return Err(Error::Detection(format!(
            "need at least 2 MMD scores, got {}",
            etas.len()
        )));
    }
    let mut best_t = 0;
    let mut best = etas[0];
    for (t, &e) in etas.iter().enumerate().skip(1) {
        if e > best {
            best = e;
            best_t = t;
        }
    }
    // etas[idx] compares windows starting at idx and idx+1; the jump is at
    // the start of the second window.
    Ok(best_t + 1)
}

fn check_window(batch: &PathBatch, w: usize) -> Result<()> {
    if w < 2 || w > batch.n_steps() {
        return Err(Error::Window {
            w,
            n_steps: batch.n_steps(),
        });
    }
    Ok(())
}
