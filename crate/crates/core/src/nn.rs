//! Small dense networks recorded on the tape.
//!
//! All drift/diffusion/embedding networks in this crate are MLPs with
//! tanh hidden layers (Lipschitz, constant 1) and a linear output layer
//! unless configured otherwise.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tape::{NodeId, Tape};
use crate::tensor::Tensor;
use rand::Rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Activation {
    Tanh,
    Linear,
}

/// An MLP is a naming convention plus layer widths; the weights live in a
/// [`ParamStore`] under `<prefix>.l<i>.w` / `<prefix>.l<i>.b`.
#[derive(Debug, Clone)]
pub struct Mlp {
    prefix: String,
    widths: Vec<usize>,
    hidden: Activation,
    output: Activation,
}

impl Mlp {
    pub fn new(prefix: impl Into<String>, widths: Vec<usize>) -> Self {
        assert!(
            widths.len() >= 2,
            "an MLP needs at least input and output widths"
        );
        Mlp {
            prefix: prefix.into(),
            widths,
            hidden: Activation::Tanh,
            output: Activation::Linear,
        }
    }

    pub fn with_output(mut self, output: Activation) -> Self {
        self.output = output;
        self
    }

    pub fn in_dim(&self) -> usize {
        self.widths[0]
    }

    pub fn out_dim(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    fn weight_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.w", self.prefix)
    }

    fn bias_name(&self, layer: usize) -> String {
        format!("{}.l{layer}.b", self.prefix)
    }

    /// Register Xavier-initialized weights (scale 1/√fan_in) and zero
    /// biases. The final layer is additionally scaled by `final_scale`;
    /// drift/diffusion nets start near zero dynamics with a small scale.
    pub fn register<R: Rng>(
        &self,
        store: &mut ParamStore,
        rng: &mut R,
        final_scale: f64,
    ) -> Result<()> {
        for l in 0..self.n_layers() {
            let (fan_in, fan_out) = (self.widths[l], self.widths[l + 1]);
            let mut scale = 1.0 / (fan_in as f64).sqrt();
            if l == self.n_layers() - 1 {
                scale *= final_scale;
            }
            store.register(
                &self.weight_name(l),
                Tensor::randn(&[fan_out, fan_in], scale, rng),
            )?;
            store.register(&self.bias_name(l), Tensor::zeros(&[fan_out]))?;
        }
        Ok(())
    }

    /// Forward pass on the tape: `x` is `(N, in_dim)`, result `(N, out_dim)`.
    pub fn apply(&self, tape: &mut Tape, store: &ParamStore, x: NodeId) -> Result<NodeId> {
        let got = tape.value(x).shape().to_vec();
        if got.len() != 2 || got[1] != self.in_dim() {
            return Err(Error::Dimension(format!(
                "{}: input shape {:?}, expected (N, {})",
                self.prefix,
                got,
                self.in_dim()
            )));
        }
        let mut h = x;
        for l in 0..self.n_layers() {
            let w = tape.param(store, &self.weight_name(l))?;
            let b = tape.param(store, &self.bias_name(l))?;
            h = tape.affine(h, w, b)?;
            let act = if l + 1 == self.n_layers() {
                self.output
            } else {
                self.hidden
            };
            if act == Activation::Tanh {
                h = tape.tanh(h);
            }
        }
        Ok(h)
    }

    pub fn param_names(&self) -> Vec<String> {
        (0..self.n_layers())
            .flat_map(|l| [self.weight_name(l), self.bias_name(l)])
            .collect()
    }
}
