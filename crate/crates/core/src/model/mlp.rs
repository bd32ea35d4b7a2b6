use std::fs;
use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::special::{sigmoid, softplus};
use crate::error::{Error, Result};
use crate::opinion::DirichletEvidence;

/// Hidden-layer nonlinearity.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    #[default]
    Tanh,
    Softplus,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Softplus => softplus(x),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Softplus => sigmoid(pre),
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "tanh" => Ok(Activation::Tanh),
            "softplus" => Ok(Activation::Softplus),
            "relu" => Ok(Activation::Relu),
            "identity" | "linear" => Ok(Activation::Identity),
            other => Err(Error::Config(format!("unknown activation '{other}'"))),
        }
    }
}

/// Per-view MLP whose softplus head emits non-negative class evidence.
///
/// Parameters live in one flat vector; each layer stores its weights
/// row-major (`out × in`) followed by its biases.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvidentialClassifier {
    view_id: String,
    layer_dims: Vec<usize>,
    activation: Activation,
    seed: u64,
    params: Vec<f64>,
}

/// Activations recorded by a forward pass, consumed by [`EvidentialClassifier::backward`].
#[derive(Debug, Clone)]
pub(crate) struct ForwardTrace {
    /// Input to each layer (the first entry is the sample itself).
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    pre: Vec<Vec<f64>>,
    pub evidence: Vec<f64>,
}

fn param_count(dims: &[usize]) -> usize {
    dims.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
}

impl EvidentialClassifier {
    /// Glorot-uniform weights and zero biases drawn from `seed`.
    pub fn new(
        view_id: impl Into<String>,
        layer_dims: Vec<usize>,
        activation: Activation,
        seed: u64,
    ) -> Result<Self> {
        if layer_dims.len() < 2 || layer_dims.contains(&0) {
            return Err(Error::Config(format!(
                "layer_dims must hold at least input and output widths, all positive: {layer_dims:?}"
            )));
        }
        if *layer_dims.last().unwrap() < 2 {
            return Err(Error::Config("output layer needs at least 2 classes".to_string()));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut params = Vec::with_capacity(param_count(&layer_dims));
        for w in layer_dims.windows(2) {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            params.extend((0..fan_in * fan_out).map(|_| rng.random_range(-limit..limit)));
            params.extend(std::iter::repeat_n(0.0, fan_out));
        }
        Ok(Self {
            view_id: view_id.into(),
            layer_dims,
            activation,
            seed,
            params,
        })
    }

    /// All-zero parameters; every input yields evidence `ln 2` per class.
    pub fn zeros(view_id: impl Into<String>, layer_dims: Vec<usize>, activation: Activation) -> Result<Self> {
        let mut m = Self::new(view_id, layer_dims, activation, 0)?;
        m.params.iter_mut().for_each(|p| *p = 0.0);
        Ok(m)
    }

    pub fn view_id(&self) -> &str {
        &self.view_id
    }

    pub fn layer_dims(&self) -> &[usize] {
        &self.layer_dims
    }

    pub fn activation(&self) -> Activation {
        self.activation
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn input_dim(&self) -> usize {
        self.layer_dims[0]
    }

    pub fn class_count(&self) -> usize {
        *self.layer_dims.last().unwrap()
    }

    pub fn params(&self) -> &[f64] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [f64] {
        &mut self.params
    }

    pub fn forward(&self, x: &[f64]) -> Result<DirichletEvidence> {
        let trace = self.forward_trace(x)?;
        DirichletEvidence::from_evidence(trace.evidence)
    }

    pub(crate) fn forward_trace(&self, x: &[f64]) -> Result<ForwardTrace> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension(format!(
                "view '{}' expects {} features, got {}",
                self.view_id,
                self.input_dim(),
                x.len()
            )));
        }
        let layers = self.layer_dims.len() - 1;
        let mut inputs = Vec::with_capacity(layers);
        let mut pre = Vec::with_capacity(layers);
        let mut current = x.to_vec();
        let mut offset = 0;
        for (l, w) in self.layer_dims.windows(2).enumerate() {
            let (fan_in, fan_out) = (w[0], w[1]);
            let weights = &self.params[offset..offset + fan_in * fan_out];
            let bias = &self.params[offset + fan_in * fan_out..offset + fan_in * fan_out + fan_out];
            offset += fan_in * fan_out + fan_out;
            let z: Vec<f64> = (0..fan_out)
                .map(|o| {
                    let row = &weights[o * fan_in..(o + 1) * fan_in];
                    bias[o] + row.iter().zip(&current).map(|(a, b)| a * b).sum::<f64>()
                })
                .collect();
            let out: Vec<f64> = if l + 1 == layers {
                z.iter().map(|v| softplus(*v)).collect()
            } else {
                z.iter().map(|v| self.activation.apply(*v)).collect()
            };
            inputs.push(std::mem::replace(&mut current, out));
            pre.push(z);
        }
        Ok(ForwardTrace {
            inputs,
            pre,
            evidence: current,
        })
    }

    /// Accumulates into `grad` the parameter gradient implied by
    /// `grad_evidence`, the gradient of the objective with respect to the
    /// evidence of `trace`.
    pub(crate) fn backward(&self, trace: &ForwardTrace, grad_evidence: &[f64], grad: &mut [f64]) {
        let layers = self.layer_dims.len() - 1;
        let mut offsets = Vec::with_capacity(layers);
        let mut offset = 0;
        for w in self.layer_dims.windows(2) {
            offsets.push(offset);
            offset += w[0] * w[1] + w[1];
        }
        // Gradient with respect to the current layer's output.
        let mut g_out = grad_evidence.to_vec();
        for l in (0..layers).rev() {
            let (fan_in, fan_out) = (self.layer_dims[l], self.layer_dims[l + 1]);
            let z = &trace.pre[l];
            let g_z: Vec<f64> = if l + 1 == layers {
                g_out.iter().zip(z).map(|(g, z)| g * sigmoid(*z)).collect()
            } else {
                let post = &trace.inputs[l + 1];
                g_out
                    .iter()
                    .zip(z)
                    .zip(post)
                    .map(|((g, z), a)| g * self.activation.derivative(*z, *a))
                    .collect()
            };
            let input = &trace.inputs[l];
            let base = offsets[l];
            let weights = &self.params[base..base + fan_in * fan_out];
            let mut g_in = vec![0.0; fan_in];
            for o in 0..fan_out {
                let gz = g_z[o];
                let row = o * fan_in;
                for i in 0..fan_in {
                    grad[base + row + i] += gz * input[i];
                    g_in[i] += gz * weights[row + i];
                }
                grad[base + fan_in * fan_out + o] += gz;
            }
            g_out = g_in;
        }
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| Error::Io(format!("serializing checkpoint: {e}")))?;
        fs::write(path, text + "\n")?;
        Ok(())
    }

    pub fn load(path: &Path) -> Result<Self> {
        let text = fs::read_to_string(path)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        let model: Self = serde_json::from_str(&text)
            .map_err(|e| Error::Io(format!("{}: {e}", path.display())))?;
        if model.params.len() != param_count(&model.layer_dims) {
            return Err(Error::Config(format!(
                "{}: parameter count does not match layer_dims",
                path.display()
            )));
        }
        Ok(model)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn zero_network_gives_ln2_evidence() {
        let m = EvidentialClassifier::zeros("a", vec![4, 8, 3], Activation::Tanh).unwrap();
        let d = m.forward(&[0.3, -1.0, 2.0, 5.0]).unwrap();
        for e in d.evidence() {
            assert!((e - std::f64::consts::LN_2).abs() < 1e-15);
        }
        let o = d.to_opinion();
        assert!(o.beliefs().windows(2).all(|w| w[0] == w[1]));
    }

    #[test]
    fn seeded_init_is_deterministic() {
        let a = EvidentialClassifier::new("v", vec![5, 16, 2], Activation::Tanh, 42).unwrap();
        let b = EvidentialClassifier::new("v", vec![5, 16, 2], Activation::Tanh, 42).unwrap();
        let x = [0.1, 0.2, -0.3, 0.4, 1.5];
        assert_eq!(a.forward(&x).unwrap(), b.forward(&x).unwrap());
        let c = EvidentialClassifier::new("v", vec![5, 16, 2], Activation::Tanh, 43).unwrap();
        assert_ne!(a.params(), c.params());
    }

    #[test]
    fn dimension_mismatch() {
        let m = EvidentialClassifier::new("v", vec![3, 2], Activation::Tanh, 1).unwrap();
        assert!(matches!(m.forward(&[1.0, 2.0]), Err(Error::Dimension(_))));
    }

    #[test]
    fn bad_layer_dims() {
        assert!(EvidentialClassifier::new("v", vec![3], Activation::Tanh, 1).is_err());
        assert!(EvidentialClassifier::new("v", vec![3, 0, 2], Activation::Tanh, 1).is_err());
        assert!(EvidentialClassifier::new("v", vec![3, 1], Activation::Tanh, 1).is_err());
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.json");
        let mut m = EvidentialClassifier::new("mRNA", vec![7, 5, 4, 3], Activation::Softplus, 9).unwrap();
        m.params_mut()[0] = 0.1 + 0.2;
        m.params_mut()[1] = 1e-310;
        m.params_mut()[2] = -123_456.789_012_345_67;
        m.save(&path).unwrap();
        let back = EvidentialClassifier::load(&path).unwrap();
        let bits = |m: &EvidentialClassifier| m.params().iter().map(|p| p.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(&m), bits(&back));
        assert_eq!(m, back);
    }

    #[test]
    fn backward_matches_finite_differences() {
        for act in [Activation::Tanh, Activation::Softplus, Activation::Identity] {
            let m = EvidentialClassifier::new("v", vec![3, 4, 2], act, 5).unwrap();
            let x = [0.4, -0.7, 1.1];
            let weights = [0.8, -1.7];
            let objective = |m: &EvidentialClassifier| {
                let t = m.forward_trace(&x).unwrap();
                t.evidence.iter().zip(&weights).map(|(e, w)| e * w).sum::<f64>()
            };
            let trace = m.forward_trace(&x).unwrap();
            let mut grad = vec![0.0; m.params().len()];
            m.backward(&trace, &weights, &mut grad);
            for (i, &g) in grad.iter().enumerate() {
                let h = 1e-6;
                let mut p = m.clone();
                p.params_mut()[i] += h;
                let up = objective(&p);
                p.params_mut()[i] -= 2.0 * h;
                let down = objective(&p);
                assert!(((up - down) / (2.0 * h) - g).abs() < 1e-7, "{act:?} param {i}");
            }
        }
    }

    proptest! {
        #[test]
        fn evidence_is_nonnegative(x in prop::collection::vec(-1e3f64..1e3, 6), seed in 0u64..1000) {
            let m = EvidentialClassifier::new("v", vec![6, 8, 3], Activation::Relu, seed).unwrap();
            let d = m.forward(&x).unwrap();
            prop_assert!(d.evidence().iter().all(|e| *e >= 0.0));
        }
    }
}
