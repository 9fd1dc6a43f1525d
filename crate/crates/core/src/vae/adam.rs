use super::loss::Gradients;
use super::model::MlpVae;
use crate::error::{LpathError, Result};

const BETA1: f64 = 0.9;
const BETA2: f64 = 0.999;
const EPS: f64 = 1e-8;

/// Adam moment buffers, one flat buffer per parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl AdamState {
    pub fn new(sizes: &[usize]) -> Self {
        AdamState {
            m: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            v: sizes.iter().map(|&n| vec![0.0; n]).collect(),
            t: 0,
        }
    }

    /// Buffers for every weight and bias of `model`, weights first per layer.
    pub fn for_model(model: &MlpVae) -> Self {
        let sizes: Vec<usize> = model
            .layers()
            .iter()
            .flat_map(|l| [l.weight.len(), l.bias.len()])
            .collect();
        Self::new(&sizes)
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// One bias-corrected Adam update over aligned parameter/gradient tensors.
    pub fn step(&mut self, params: &mut [&mut [f64]], grads: &[&[f64]], learning_rate: f64) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(LpathError::shape("adam tensors", self.m.len(), params.len().max(grads.len())));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.len() != m.len() || g.len() != m.len() {
                return Err(LpathError::shape("adam tensor", m.len(), p.len().max(g.len())));
            }
        }
        self.t += 1;
        let c1 = 1.0 - BETA1.powi(self.t as i32);
        let c2 = 1.0 - BETA2.powi(self.t as i32);
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            for i in 0..p.len() {
                m[i] = BETA1 * m[i] + (1.0 - BETA1) * g[i];
                v[i] = BETA2 * v[i] + (1.0 - BETA2) * g[i] * g[i];
                let m_hat = m[i] / c1;
                let v_hat = v[i] / c2;
                p[i] -= learning_rate * m_hat / (v_hat.sqrt() + EPS);
            }
        }
        Ok(())
    }

    pub fn step_model(&mut self, model: &mut MlpVae, grads: &Gradients, learning_rate: f64) -> Result<()> {
        let grad_slices: Vec<&[f64]> = grads
            .weights
            .iter()
            .zip(&grads.biases)
            .flat_map(|(w, b)| {
                [
                    w.as_slice().expect("gradients are contiguous"),
                    b.as_slice().expect("gradients are contiguous"),
                ]
            })
            .collect();
        let mut params: Vec<&mut [f64]> = model
            .layers_mut()
            .into_iter()
            .flat_map(|l| {
                [
                    l.weight.as_slice_mut().expect("weights are contiguous"),
                    l.bias.as_slice_mut().expect("biases are contiguous"),
                ]
            })
            .collect();
        self.step(&mut params, &grad_slices, learning_rate)
    }
}
