use rand::Rng;

use super::graph::{Graph, Var};
use super::params::{ParamId, ParamStore};
use super::tensor::Tensor;
use crate::error::{Error, Result};

/// Affine map `x W + b` applied row-wise.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub output_dim: usize,
}

impl Linear {
    /// Glorot-uniform weights, zero bias.
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, output_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = (6.0 / (input_dim + output_dim) as f64).sqrt();
        let weight = store.add(format!("{name}.weight"), Tensor::uniform(input_dim, output_dim, bound, rng));
        let bias = store.add(format!("{name}.bias"), Tensor::zeros(1, output_dim));
        Self {
            weight,
            bias,
            input_dim,
            output_dim,
        }
    }

    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let y = g.matmul(x, w)?;
        g.add_row(y, b)
    }
}

/// One unidirectional LSTM layer; gate order input, forget, cell, output.
#[derive(Debug, Clone)]
pub struct LstmLayer {
    pub w_input: ParamId,
    pub w_hidden: ParamId,
    pub bias: ParamId,
    pub input_dim: usize,
    pub hidden_dim: usize,
}

impl LstmLayer {
    pub fn new(store: &mut ParamStore, name: &str, input_dim: usize, hidden_dim: usize, rng: &mut impl Rng) -> Self {
        let bound = 1.0 / (hidden_dim as f64).sqrt();
        let w_input = store.add(format!("{name}.w_input"), Tensor::uniform(input_dim, 4 * hidden_dim, bound, rng));
        let w_hidden = store.add(format!("{name}.w_hidden"), Tensor::uniform(hidden_dim, 4 * hidden_dim, bound, rng));
        let mut b = Tensor::zeros(1, 4 * hidden_dim);
        b.data[hidden_dim..2 * hidden_dim].iter_mut().for_each(|v| *v = 1.0);
        let bias = store.add(format!("{name}.bias"), b);
        Self {
            w_input,
            w_hidden,
            bias,
            input_dim,
            hidden_dim,
        }
    }

    /// `x` is `T x input_dim`; returns `T x hidden_dim`.
    pub fn forward(&self, g: &mut Graph, x: Var) -> Result<Var> {
        if g.shape(x)[1] != self.input_dim {
            return Err(Error::shape("lstm input", &g.shape(x), &[g.shape(x)[0], self.input_dim]));
        }
        let wx = g.param(self.w_input);
        let wh = g.param(self.w_hidden);
        let b = g.param(self.bias);
        let gx = g.matmul(x, wx)?;
        let gx = g.add_row(gx, b)?;
        g.lstm(gx, wh)
    }
}

/// Stack of LSTM layers with dropout between layers in training mode.
#[derive(Debug, Clone)]
pub struct RecurrentStack {
    pub layers: Vec<LstmLayer>,
    pub dropout_rate: f64,
}

impl RecurrentStack {
    pub fn new(
        store: &mut ParamStore,
        name: &str,
        input_dim: usize,
        hidden_dim: usize,
        num_layers: usize,
        dropout_rate: f64,
        rng: &mut impl Rng,
    ) -> Self {
        let layers = (0..num_layers)
            .map(|l| {
                let d = if l == 0 { input_dim } else { hidden_dim };
                LstmLayer::new(store, &format!("{name}.{l}"), d, hidden_dim, rng)
            })
            .collect();
        Self { layers, dropout_rate }
    }

    pub fn output_dim(&self) -> usize {
        self.layers.last().map_or(0, |l| l.hidden_dim)
    }

    pub fn forward(&self, g: &mut Graph, mut x: Var) -> Result<Var> {
        for (i, layer) in self.layers.iter().enumerate() {
            x = layer.forward(g, x)?;
            if i + 1 < self.layers.len() {
                x = g.dropout(x, self.dropout_rate);
            }
        }
        Ok(x)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn forget_gate_bias_starts_at_one() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let l = LstmLayer::new(&mut store, "l", 3, 4, &mut rng);
        let b = store.get(l.bias);
        assert_eq!(&b.data[4..8], &[1.0; 4]);
        assert!(b.data[..4].iter().chain(&b.data[8..]).all(|&v| v == 0.0));
    }

    #[test]
    fn dropout_only_in_training() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let stack = RecurrentStack::new(&mut store, "s", 3, 5, 2, 0.5, &mut rng);
        let x = Tensor::uniform(6, 3, 1.0, &mut rng);
        let run = |training: bool, seed: u64| {
            let mut g = Graph::new(&store, training, seed);
            let xv = g.constant(x.clone());
            let y = stack.forward(&mut g, xv).unwrap();
            g.value(y).clone()
        };
        assert_eq!(run(false, 1), run(false, 2));
        assert_ne!(run(true, 1), run(true, 2));
        assert_eq!(run(true, 3), run(true, 3));
    }

    #[test]
    fn lstm_rejects_wrong_width() {
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let l = LstmLayer::new(&mut store, "l", 3, 4, &mut rng);
        let mut g = Graph::new(&store, false, 0);
        let x = g.constant(Tensor::zeros(5, 2));
        assert!(l.forward(&mut g, x).is_err());
    }
}
