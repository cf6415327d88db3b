//! Named parameter storage with gradient and optimizer slots.
//!
//! Entries are kept in a `BTreeMap` so every iteration (updates, clipping,
//! checkpointing) runs in sorted name order — one of the ingredients of
//! bit-identical reruns.

use crate::error::{Error, Result};
use crate::tensor::Tensor;
use std::collections::BTreeMap;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

const FORMAT_HEADER: &str = "cpsde-params v1";

#[derive(Debug, Clone)]
pub struct ParamEntry {
    pub value: Tensor,
    pub grad: Tensor,
    pub adam_m: Tensor,
    pub adam_v: Tensor,
    pub steps: u64,
}

#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: BTreeMap<String, ParamEntry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn register(&mut self, name: &str, value: Tensor) -> Result<()> {
        if self.entries.contains_key(name) {
            return Err(Error::Contract(format!("duplicate parameter '{name}'")));
        }
        let shape = value.shape().to_vec();
        self.entries.insert(
            name.to_string(),
            ParamEntry {
                value,
                grad: Tensor::zeros(&shape),
                adam_m: Tensor::zeros(&shape),
                adam_v: Tensor::zeros(&shape),
                steps: 0,
            },
        );
        Ok(())
    }

    fn entry(&self, name: &str) -> Result<&ParamEntry> {
        self.entries
            .get(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    fn entry_mut(&mut self, name: &str) -> Result<&mut ParamEntry> {
        self.entries
            .get_mut(name)
            .ok_or_else(|| Error::Contract(format!("unknown parameter '{name}'")))
    }

    pub fn value(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.value)
    }

    pub fn value_mut(&mut self, name: &str) -> Result<&mut Tensor> {
        Ok(&mut self.entry_mut(name)?.value)
    }

    pub fn grad(&self, name: &str) -> Result<&Tensor> {
        Ok(&self.entry(name)?.grad)
    }

    pub fn add_grad(&mut self, name: &str, g: &Tensor) -> Result<()> {
        let entry = self.entry_mut(name)?;
        if !entry.grad.same_shape(g) {
            return Err(Error::Dimension(format!(
                "gradient shape {:?} does not match parameter '{}' shape {:?}",
                g.shape(),
                name,
                entry.grad.shape()
            )));
        }
        for (d, s) in entry.grad.data_mut().iter_mut().zip(g.data()) {
            *d += s;
        }
        Ok(())
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.entries.keys().map(String::as_str)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn zero_grads(&mut self) {
        for entry in self.entries.values_mut() {
            entry.grad.data_mut().fill(0.0);
        }
    }

    /// Standard Adam with bias correction over every entry; grads are
    /// zeroed afterward. A non-finite gradient aborts with the offending
    /// parameter name before any entry is modified.
    pub fn adam_step(&mut self, lr: f64, betas: (f64, f64), eps: f64) -> Result<()> {
        self.adam_step_prefix("", lr, betas, eps)
    }

    /// Adam restricted to entries whose name starts with `prefix`.
    pub fn adam_step_prefix(
        &mut self,
        prefix: &str,
        lr: f64,
        betas: (f64, f64),
        eps: f64,
    ) -> Result<()> {
        let (b1, b2) = betas;
        for (name, entry) in self.entries.iter() {
            if name.starts_with(prefix) && !entry.grad.all_finite() {
                return Err(Error::Training { what: name.clone() });
            }
        }
        for (name, entry) in self.entries.iter_mut() {
            if !name.starts_with(prefix) {
                continue;
            }
            entry.steps += 1;
            let t = entry.steps as i32;
            let bc1 = 1.0 - b1.powi(t);
            let bc2 = 1.0 - b2.powi(t);
            let n = entry.value.len();
            for i in 0..n {
                let g = entry.grad.data()[i];
                let m = b1 * entry.adam_m.data()[i] + (1.0 - b1) * g;
                let v = b2 * entry.adam_v.data()[i] + (1.0 - b2) * g * g;
                entry.adam_m.data_mut()[i] = m;
                entry.adam_v.data_mut()[i] = v;
                let update = lr * (m / bc1) / ((v / bc2).sqrt() + eps);
                entry.value.data_mut()[i] -= update;
            }
            entry.grad.data_mut().fill(0.0);
        }
        Ok(())
    }

    /// Add `coeff * value` to the gradients under `prefix` (L2 penalty).
    pub fn add_l2_to_grads(&mut self, prefix: &str, coeff: f64) {
        for (name, entry) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                for (g, v) in entry.grad.data_mut().iter_mut().zip(entry.value.data()) {
                    *g += coeff * v;
                }
            }
        }
    }

    /// Clamp every value of every entry under `prefix` to `[-c, c]`.
    pub fn clamp_prefix(&mut self, prefix: &str, c: f64) {
        for (name, entry) in self.entries.iter_mut() {
            if name.starts_with(prefix) {
                for v in entry.value.data_mut() {
                    *v = v.clamp(-c, c);
                }
            }
        }
    }

    pub fn max_abs_prefix(&self, prefix: &str) -> f64 {
        self.entries
            .iter()
            .filter(|(name, _)| name.starts_with(prefix))
            .flat_map(|(_, e)| e.value.data().iter())
            .fold(0.0_f64, |acc, v| acc.max(v.abs()))
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let file = std::fs::File::create(path)?;
        let mut w = BufWriter::new(file);
        self.write_to(&mut w)?;
        w.flush()?;
        Ok(())
    }

    pub fn write_to<W: Write>(&self, w: &mut W) -> Result<()> {
        writeln!(w, "{FORMAT_HEADER}")?;
        for (name, entry) in &self.entries {
            write!(w, "param {name} {}", entry.value.shape().len())?;
            for d in entry.value.shape() {
                write!(w, " {d}")?;
            }
            writeln!(w)?;
            write_values(w, "value", entry.value.data())?;
            write_values(w, "adam_m", entry.adam_m.data())?;
            write_values(w, "adam_v", entry.adam_v.data())?;
            writeln!(w, "steps {}", entry.steps)?;
        }
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        let reader = BufReader::new(file);
        let mut lines = reader.lines();
        let fmt_err = |reason: &str| Error::Format {
            path: path.display().to_string(),
            reason: reason.to_string(),
        };
        let header = lines.next().ok_or_else(|| fmt_err("empty checkpoint"))??;
        if header.trim() != FORMAT_HEADER {
            return Err(fmt_err(&format!("unsupported format '{header}'")));
        }
        let mut store = ParamStore::new();
        let mut lines = lines.peekable();
        while let Some(line) = lines.next() {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            let mut parts = line.split_whitespace();
            if parts.next() != Some("param") {
                return Err(fmt_err(&format!("expected 'param' line, got '{line}'")));
            }
            let name = parts
                .next()
                .ok_or_else(|| fmt_err("param line missing name"))?
                .to_string();
            let ndim: usize = parse_num(parts.next(), path)?;
            let mut shape = Vec::with_capacity(ndim);
            for _ in 0..ndim {
                shape.push(parse_num(parts.next(), path)?);
            }
            let value = read_values(&mut lines, "value", &shape, path)?;
            let adam_m = read_values(&mut lines, "adam_m", &shape, path)?;
            let adam_v = read_values(&mut lines, "adam_v", &shape, path)?;
            let steps_line = lines
                .next()
                .ok_or_else(|| fmt_err("missing steps line"))??;
            let steps: u64 = steps_line
                .strip_prefix("steps ")
                .and_then(|s| s.trim().parse().ok())
                .ok_or_else(|| fmt_err("bad steps line"))?;
            store.register(&name, value)?;
            let entry = store.entry_mut(&name)?;
            entry.adam_m = adam_m;
            entry.adam_v = adam_v;
            entry.steps = steps;
        }
        Ok(store)
    }
}

fn write_values<W: Write>(w: &mut W, label: &str, data: &[f64]) -> Result<()> {
    write!(w, "{label}")?;
    for v in data {
        write!(w, " {v}")?;
    }
    writeln!(w)?;
    Ok(())
}

fn parse_num<T: std::str::FromStr>(field: Option<&str>, path: &Path) -> Result<T> {
    field
        .and_then(|s| s.parse().ok())
        .ok_or_else(|| Error::Format {
            path: path.display().to_string(),
            reason: "malformed numeric field".into(),
        })
}

fn read_values<I: Iterator<Item = std::io::Result<String>>>(
    lines: &mut I,
    label: &str,
    shape: &[usize],
    path: &Path,
) -> Result<Tensor> {
    let fmt_err = |reason: String| Error::Format {
        path: path.display().to_string(),
        reason,
    };
    let line = lines
        .next()
        .ok_or_else(|| fmt_err(format!("missing '{label}' line")))??;
    let rest = line
        .strip_prefix(label)
        .ok_or_else(|| fmt_err(format!("expected '{label}' line, got '{line}'")))?;
    let data: Vec<f64> = rest
        .split_whitespace()
        .map(|s| s.parse::<f64>())
        .collect::<std::result::Result<_, _>>()
        .map_err(|e| fmt_err(format!("bad float in '{label}': {e}")))?;
    Tensor::new(shape.to_vec(), data)
}

/// Central finite difference of `f` w.r.t. one coordinate of one
/// parameter. Used as the independent oracle for gradient checks; it
/// re-runs the full forward pass and never touches the tape's backward
/// rules.
pub fn numeric_grad<F>(
    store: &mut ParamStore,
    name: &str,
    index: usize,
    h: f64,
    mut f: F,
) -> Result<f64>
where
    F: FnMut(&ParamStore) -> Result<f64>,
{
    let orig = store.value(name)?.data()[index];
    store.value_mut(name)?.data_mut()[index] = orig + h;
    let fp = f(store)?;
    store.value_mut(name)?.data_mut()[index] = orig - h;
    let fm = f(store)?;
    store.value_mut(name)?.data_mut()[index] = orig;
    Ok((fp - fm) / (2.0 * h))
}

/// Relative error with a floor so that near-zero pairs compare absolutely.
pub fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn register_rejects_duplicates() {
        let mut s = ParamStore::new();
        s.register("w", Tensor::zeros(&[2])).unwrap();
        assert!(s.register("w", Tensor::zeros(&[2])).is_err());
    }

    #[test]
    fn adam_zero_grads_leave_params_unchanged() {
        let mut s = ParamStore::new();
        s.register("w", Tensor::new(vec![2], vec![1.5, -0.5]).unwrap())
            .unwrap();
        s.adam_step(0.1, (0.9, 0.999), 1e-8).unwrap();
        assert_eq!(s.value("w").unwrap().data(), &[1.5, -0.5]);
    }

    #[test]
    fn adam_first_step_moves_by_lr_sign() {
        let mut s = ParamStore::new();
        s.register("w", Tensor::scalar(2.0)).unwrap();
        s.add_grad("w", &Tensor::scalar(3.0)).unwrap();
        s.adam_step(0.1, (0.9, 0.999), 1e-12).unwrap();
        // first Adam step with constant grad g: update ≈ lr·sign(g)
        let moved = 2.0 - s.value("w").unwrap().item();
        assert!((moved - 0.1).abs() < 1e-6, "moved {moved}");
    }

    #[test]
    fn adam_descends_quadratic() {
        // 10 steps on f(w) = w² from w = 1: |w| decreases monotonically.
        // Oracle: the same scalar recursion simulated independently.
        let mut s = ParamStore::new();
        s.register("w", Tensor::scalar(1.0)).unwrap();
        let mut sim_w = 1.0_f64;
        let (mut sim_m, mut sim_v) = (0.0_f64, 0.0_f64);
        let mut prev = 1.0_f64;
        for t in 1..=10 {
            let w = s.value("w").unwrap().item();
            s.add_grad("w", &Tensor::scalar(2.0 * w)).unwrap();
            s.adam_step(0.1, (0.9, 0.999), 1e-8).unwrap();
            let now = s.value("w").unwrap().item();
            assert!(now.abs() < prev.abs(), "|w| not decreasing at step {t}");
            prev = now;

            let g = 2.0 * sim_w;
            sim_m = 0.9 * sim_m + 0.1 * g;
            sim_v = 0.999 * sim_v + 0.001 * g * g;
            let mhat = sim_m / (1.0 - 0.9_f64.powi(t));
            let vhat = sim_v / (1.0 - 0.999_f64.powi(t));
            sim_w -= 0.1 * mhat / (vhat.sqrt() + 1e-8);
            assert!((sim_w - now).abs() < 1e-12, "diverged from oracle at {t}");
        }
    }

    #[test]
    fn adam_rejects_non_finite_grad() {
        let mut s = ParamStore::new();
        s.register("bad", Tensor::scalar(0.0)).unwrap();
        s.add_grad("bad", &Tensor::scalar(f64::NAN)).unwrap();
        let err = s.adam_step(0.1, (0.9, 0.999), 1e-8).unwrap_err();
        assert!(err.to_string().contains("bad"));
    }

    #[test]
    fn clamp_prefix_only_touches_prefix() {
        let mut s = ParamStore::new();
        s.register("disc.w", Tensor::scalar(10.0)).unwrap();
        s.register("gen.w", Tensor::scalar(10.0)).unwrap();
        s.clamp_prefix("disc.", 0.5);
        assert_eq!(s.value("disc.w").unwrap().item(), 0.5);
        assert_eq!(s.value("gen.w").unwrap().item(), 10.0);
    }

    #[test]
    fn checkpoint_round_trip_is_exact() {
        let mut s = ParamStore::new();
        let mut rng = crate::rng::stream(11, crate::rng::Stream::Init, &[]);
        s.register("a.w", Tensor::randn(&[3, 2], 0.7, &mut rng))
            .unwrap();
        s.register("b.m", Tensor::randn(&[4], 1e-9, &mut rng))
            .unwrap();
        s.add_grad("a.w", &Tensor::full(&[3, 2], 1.0)).unwrap();
        s.adam_step(0.01, (0.9, 0.999), 1e-8).unwrap();

        let dir = std::env::temp_dir().join(format!("cpsde-params-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("ckpt.txt");
        s.save(&path).unwrap();
        let loaded = ParamStore::load(&path).unwrap();
        for name in s.names() {
            assert_eq!(
                s.value(name).unwrap(),
                loaded.value(name).unwrap(),
                "value mismatch for {name}"
            );
        }
        std::fs::remove_dir_all(&dir).ok();
    }
}
