use ndarray::{Array1, Array2, ArrayView1, ArrayView2, Axis};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::TrainConfig;
use crate::error::{LpathError, Result};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Identity,
    Tanh,
    Relu,
}

impl Activation {
    pub fn tag(self) -> u8 {
        match self {
            Activation::Identity => 0,
            Activation::Tanh => 1,
            Activation::Relu => 2,
        }
    }

    pub fn from_tag(tag: u8) -> Option<Self> {
        match tag {
            0 => Some(Activation::Identity),
            1 => Some(Activation::Tanh),
            2 => Some(Activation::Relu),
            _ => None,
        }
    }

    fn apply(self, a: f64) -> f64 {
        match self {
            Activation::Identity => a,
            Activation::Tanh => a.tanh(),
            Activation::Relu => a.max(0.0),
        }
    }

    /// Derivative expressed through the pre-activation `a` and output `h`.
    fn derivative(self, a: f64, h: f64) -> f64 {
        match self {
            Activation::Identity => 1.0,
            Activation::Tanh => 1.0 - h * h,
            Activation::Relu => {
                if a > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
        }
    }
}

impl std::str::FromStr for Activation {
    type Err = LpathError;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "identity" => Ok(Activation::Identity),
            "tanh" => Ok(Activation::Tanh),
            "relu" => Ok(Activation::Relu),
            other => Err(LpathError::InvalidConfig(format!(
                "unknown activation {other:?}"
            ))),
        }
    }
}

/// Affine layer `y = act(x W + b)`; `weight` is `(fan_in, fan_out)`.
#[derive(Clone, Debug, PartialEq)]
pub struct Dense {
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

pub(crate) struct DenseCache {
    pub input: Array2<f64>,
    pub pre: Array2<f64>,
    pub output: Array2<f64>,
}

impl Dense {
    pub fn zeros(fan_in: usize, fan_out: usize, activation: Activation) -> Self {
        Dense {
            weight: Array2::zeros((fan_in, fan_out)),
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    /// Glorot-uniform weights drawn as `f32` so they survive the checkpoint format.
    fn glorot<R: Rng>(fan_in: usize, fan_out: usize, activation: Activation, rng: &mut R) -> Self {
        let s = (6.0 / (fan_in + fan_out) as f64).sqrt() as f32;
        let weight =
            Array2::from_shape_simple_fn((fan_in, fan_out), || rng.random_range(-s..s) as f64);
        Dense {
            weight,
            bias: Array1::zeros(fan_out),
            activation,
        }
    }

    pub fn fan_in(&self) -> usize {
        self.weight.nrows()
    }

    pub fn fan_out(&self) -> usize {
        self.weight.ncols()
    }

    pub fn parameter_count(&self) -> usize {
        self.weight.len() + self.bias.len()
    }

    pub(crate) fn forward_cached(&self, input: Array2<f64>, layer: usize) -> Result<DenseCache> {
        let mut pre = input.dot(&self.weight);
        pre += &self.bias;
        let act = self.activation;
        let output = pre.mapv(|a| act.apply(a));
        if let Some(bad) = output.iter().find(|v| !v.is_finite()) {
            return Err(LpathError::Numeric {
                layer,
                message: format!("activation produced {bad}"),
            });
        }
        Ok(DenseCache { input, pre, output })
    }

    pub(crate) fn forward(&self, input: ArrayView2<'_, f64>) -> Array2<f64> {
        let mut pre = input.dot(&self.weight);
        pre += &self.bias;
        let act = self.activation;
        pre.mapv_inplace(|a| act.apply(a));
        pre
    }

    /// Returns (d input, d weight, d bias) given d output.
    pub(crate) fn backward(
        &self,
        cache: &DenseCache,
        d_out: Array2<f64>,
    ) -> (Array2<f64>, Array2<f64>, Array1<f64>) {
        let mut d_pre = d_out;
        if self.activation != Activation::Identity {
            let act = self.activation;
            ndarray::Zip::from(&mut d_pre)
                .and(&cache.pre)
                .and(&cache.output)
                .for_each(|d, &a, &h| *d *= act.derivative(a, h));
        }
        let d_weight = cache.input.t().dot(&d_pre);
        let d_bias = d_pre.sum_axis(Axis(0));
        let d_input = d_pre.dot(&self.weight.t());
        (d_input, d_weight, d_bias)
    }
}

/// Gaussian VAE with MLP encoder and decoder.
///
/// Canonical layer order (used by gradients, the optimizer and the checkpoint
/// format): encoder hidden layers, mean head, log-variance head, decoder layers.
#[derive(Clone, Debug, PartialEq)]
pub struct MlpVae {
    pub encoder: Vec<Dense>,
    pub mu_head: Dense,
    pub logvar_head: Dense,
    pub decoder: Vec<Dense>,
    pub decoder_sigma: f64,
}

impl MlpVae {
    /// Assembles a model and checks that the layer shapes compose.
    pub fn new(
        encoder: Vec<Dense>,
        mu_head: Dense,
        logvar_head: Dense,
        decoder: Vec<Dense>,
        decoder_sigma: f64,
    ) -> Result<Self> {
        let model = MlpVae {
            encoder,
            mu_head,
            logvar_head,
            decoder,
            decoder_sigma,
        };
        model.validate()?;
        Ok(model)
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.decoder_sigma > 0.0 && self.decoder_sigma.is_finite()) {
            return Err(LpathError::InvalidConfig(format!(
                "decoder_sigma must be positive, got {}",
                self.decoder_sigma
            )));
        }
        if self.decoder.is_empty() {
            return Err(LpathError::InvalidConfig("decoder has no layers".into()));
        }
        let mut width = self.input_dim();
        for layer in &self.encoder {
            if layer.fan_in() != width {
                return Err(LpathError::shape("encoder layer", width, layer.fan_in()));
            }
            width = layer.fan_out();
        }
        for head in [&self.mu_head, &self.logvar_head] {
            if head.fan_in() != width {
                return Err(LpathError::shape("latent head", width, head.fan_in()));
            }
        }
        if self.logvar_head.fan_out() != self.mu_head.fan_out() {
            return Err(LpathError::shape(
                "log-variance head",
                self.mu_head.fan_out(),
                self.logvar_head.fan_out(),
            ));
        }
        let mut width = self.latent_dim();
        for layer in &self.decoder {
            if layer.fan_in() != width {
                return Err(LpathError::shape("decoder layer", width, layer.fan_in()));
            }
            width = layer.fan_out();
        }
        if width != self.input_dim() {
            return Err(LpathError::shape("decoder output", self.input_dim(), width));
        }
        if self.input_dim() == 0 || self.latent_dim() == 0 {
            return Err(LpathError::InvalidConfig("zero-sized dimension".into()));
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.encoder
            .first()
            .map_or(self.mu_head.fan_in(), Dense::fan_in)
    }

    pub fn latent_dim(&self) -> usize {
        self.mu_head.fan_out()
    }

    pub fn hidden_depth(&self) -> usize {
        self.encoder.len()
    }

    pub fn layers(&self) -> Vec<&Dense> {
        let mut out: Vec<&Dense> = self.encoder.iter().collect();
        out.push(&self.mu_head);
        out.push(&self.logvar_head);
        out.extend(self.decoder.iter());
        out
    }

    pub fn layers_mut(&mut self) -> Vec<&mut Dense> {
        let mut out: Vec<&mut Dense> = self.encoder.iter_mut().collect();
        out.push(&mut self.mu_head);
        out.push(&mut self.logvar_head);
        out.extend(self.decoder.iter_mut());
        out
    }

    pub fn parameter_count(&self) -> usize {
        self.layers().iter().map(|l| l.parameter_count()).sum()
    }

    pub(crate) fn round_to_f32(&mut self) {
        for layer in self.layers_mut() {
            layer.weight.mapv_inplace(|v| v as f32 as f64);
            layer.bias.mapv_inplace(|v| v as f32 as f64);
        }
        self.decoder_sigma = self.decoder_sigma as f32 as f64;
    }

    fn check_input(&self, x: ArrayView2<'_, f64>) -> Result<()> {
        if x.ncols() != self.input_dim() {
            return Err(LpathError::shape("encoder input", self.input_dim(), x.ncols()));
        }
        Ok(())
    }

    /// Posterior parameters `(mu_z, sigma_z)` for every row of `x`.
    pub fn encode_batch(&self, x: ArrayView2<'_, f64>) -> Result<(Array2<f64>, Array2<f64>)> {
        self.check_input(x)?;
        let mut h = x.to_owned();
        for layer in &self.encoder {
            h = layer.forward(h.view());
        }
        let mu = self.mu_head.forward(h.view());
        let sigma = self.logvar_head.forward(h.view()).mapv(|lv| (0.5 * lv).exp());
        Ok((mu, sigma))
    }

    /// Decoder mean `mu_x` for every row of `z`. The decoder variance is the
    /// fixed scalar `decoder_sigma`.
    pub fn decode_batch(&self, z: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        if z.ncols() != self.latent_dim() {
            return Err(LpathError::shape("decoder input", self.latent_dim(), z.ncols()));
        }
        let mut h = z.to_owned();
        for layer in &self.decoder {
            h = layer.forward(h.view());
        }
        Ok(h)
    }

    pub fn encode(&self, x: &[f64]) -> Result<(Vec<f64>, Vec<f64>)> {
        let view = ArrayView2::from_shape((1, x.len()), x)
            .map_err(|e| LpathError::InvalidInput(e.to_string()))?;
        let (mu, sigma) = self.encode_batch(view)?;
        Ok((mu.into_raw_vec_and_offset().0, sigma.into_raw_vec_and_offset().0))
    }

    pub fn decode(&self, z: &[f64]) -> Result<Vec<f64>> {
        let view = ArrayView2::from_shape((1, z.len()), z)
            .map_err(|e| LpathError::InvalidInput(e.to_string()))?;
        Ok(self.decode_batch(view)?.into_raw_vec_and_offset().0)
    }

    /// `mu_x(mu_z(x))` row by row.
    pub fn reconstruct_batch(&self, x: ArrayView2<'_, f64>) -> Result<Array2<f64>> {
        let (mu, _) = self.encode_batch(x)?;
        self.decode_batch(mu.view())
    }

    /// Decoder Jacobian `d mu_x / d z` at `z`, shape `(input_dim, latent_dim)`.
    pub fn decoder_jacobian(&self, z: ArrayView1<'_, f64>) -> Result<Array2<f64>> {
        if z.len() != self.latent_dim() {
            return Err(LpathError::shape("decoder input", self.latent_dim(), z.len()));
        }
        // Forward-mode: carry J = d h / d z through the layers.
        let mut h = z.to_owned().insert_axis(Axis(0));
        let mut jac = Array2::<f64>::eye(self.latent_dim());
        for layer in &self.decoder {
            let mut pre = h.dot(&layer.weight);
            pre += &layer.bias;
            let out = pre.mapv(|a| layer.activation.apply(a));
            let mut next = layer.weight.t().dot(&jac);
            for (i, mut row) in next.axis_iter_mut(Axis(0)).enumerate() {
                let d = layer.activation.derivative(pre[[0, i]], out[[0, i]]);
                row *= d;
            }
            jac = next;
            h = out;
        }
        Ok(jac)
    }
}

/// Builds a freshly initialized model. Weights use Glorot-uniform draws in
/// canonical layer order from a generator seeded with `rng_seed`; biases are zero.
pub fn init_model(
    config: &TrainConfig,
    input_dim: usize,
    latent_dim: usize,
    rng_seed: u64,
) -> Result<MlpVae> {
    if input_dim == 0 || latent_dim == 0 {
        return Err(LpathError::InvalidConfig(format!(
            "input_dim and latent_dim must be positive, got {input_dim} and {latent_dim}"
        )));
    }
    if config.hidden_sizes.contains(&0) {
        return Err(LpathError::InvalidConfig("hidden layer of width 0".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(rng_seed);
    let act = config.activation;

    let mut encoder = Vec::new();
    let mut width = input_dim;
    for &h in &config.hidden_sizes {
        encoder.push(Dense::glorot(width, h, act, &mut rng));
        width = h;
    }
    let mu_head = Dense::glorot(width, latent_dim, Activation::Identity, &mut rng);
    let logvar_head = Dense::glorot(width, latent_dim, Activation::Identity, &mut rng);

    let mut decoder = Vec::new();
    let mut width = latent_dim;
    for &h in config.hidden_sizes.iter().rev() {
        decoder.push(Dense::glorot(width, h, act, &mut rng));
        width = h;
    }
    decoder.push(Dense::glorot(width, input_dim, Activation::Identity, &mut rng));

    MlpVae::new(
        encoder,
        mu_head,
        logvar_head,
        decoder,
        config.decoder_sigma as f32 as f64,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::array;

    fn config(hidden: Vec<usize>) -> TrainConfig {
        TrainConfig {
            hidden_sizes: hidden,
            ..TrainConfig::default()
        }
    }

    #[test]
    fn init_is_deterministic() {
        let a = init_model(&config(vec![8]), 4, 2, 7).unwrap();
        let b = init_model(&config(vec![8]), 4, 2, 7).unwrap();
        assert_eq!(a, b);
        let c = init_model(&config(vec![8]), 4, 2, 8).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn no_hidden_layers_gives_affine_pair() {
        let m = init_model(&config(vec![]), 4, 2, 1).unwrap();
        assert!(m.encoder.is_empty());
        assert_eq!(m.decoder.len(), 1);
        assert_eq!((m.mu_head.fan_in(), m.mu_head.fan_out()), (4, 2));
        assert_eq!((m.decoder[0].fan_in(), m.decoder[0].fan_out()), (2, 4));
        let x = array![[0.1, 0.2, 0.3, 0.4]];
        assert_eq!(m.reconstruct_batch(x.view()).unwrap().dim(), (1, 4));
    }

    #[test]
    fn parameter_count_matches_layer_arithmetic() {
        let m = init_model(&config(vec![16, 16]), 784, 100, 1).unwrap();
        let encoder = 784 * 16 + 16 + 16 * 16 + 16;
        let heads = 2 * (16 * 100 + 100);
        let decoder = 100 * 16 + 16 + 16 * 16 + 16 + 16 * 784 + 784;
        assert_eq!(m.parameter_count(), encoder + heads + decoder);
    }

    #[test]
    fn glorot_bound_and_zero_bias() {
        let m = init_model(&config(vec![8]), 4, 2, 3).unwrap();
        let s = (6.0f64 / 12.0).sqrt();
        assert!(m.encoder[0].weight.iter().all(|w| w.abs() <= s));
        assert!(m.layers().iter().all(|l| l.bias.iter().all(|&b| b == 0.0)));
    }

    #[test]
    fn zero_dimensions_rejected() {
        assert!(matches!(
            init_model(&config(vec![]), 0, 2, 1),
            Err(LpathError::InvalidConfig(_))
        ));
        assert!(init_model(&config(vec![]), 3, 0, 1).is_err());
    }

    #[test]
    fn zero_weight_encoder_returns_head_biases() {
        let mut m = init_model(&config(vec![3]), 4, 2, 1).unwrap();
        for l in m.layers_mut() {
            l.weight.fill(0.0);
        }
        m.mu_head.bias = array![0.5, -1.0];
        m.logvar_head.bias = array![0.2, -0.4];
        let (mu, sigma) = m.encode(&[3.0, -2.0, 1.0, 7.0]).unwrap();
        assert_eq!(mu, vec![0.5, -1.0]);
        assert!((sigma[0] - (0.1f64).exp()).abs() < 1e-15);
        assert!((sigma[1] - (-0.2f64).exp()).abs() < 1e-15);

        m.decoder.last_mut().unwrap().bias = array![1.0, 2.0, 3.0, 4.0];
        assert_eq!(m.decode(&[9.0, 9.0]).unwrap(), vec![1.0, 2.0, 3.0, 4.0]);
    }

    #[test]
    fn identity_encoder_and_linear_decoder() {
        let eye = Dense {
            weight: Array2::eye(3),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let b = array![[1.0, 2.0, 0.0], [0.0, -1.0, 3.0], [2.0, 0.0, 1.0]];
        // decode computes z W, so W = B^T gives B z.
        let dec = Dense {
            weight: b.t().to_owned(),
            bias: Array1::zeros(3),
            activation: Activation::Identity,
        };
        let m = MlpVae::new(vec![], eye.clone(), eye, vec![dec], 0.1).unwrap();
        let x = [0.3, -0.7, 2.0];
        assert_eq!(m.encode(&x).unwrap().0, x.to_vec());
        let bz = b.dot(&ndarray::arr1(&x));
        assert_eq!(m.decode(&x).unwrap(), bz.to_vec());
    }

    #[test]
    fn shape_errors() {
        let m = init_model(&config(vec![5]), 4, 2, 1).unwrap();
        assert!(matches!(m.encode(&[1.0; 3]), Err(LpathError::Shape { .. })));
        assert!(matches!(m.decode(&[1.0; 3]), Err(LpathError::Shape { .. })));
    }

    #[test]
    fn mismatched_layers_rejected() {
        let r = MlpVae::new(
            vec![Dense::zeros(4, 3, Activation::Tanh)],
            Dense::zeros(5, 2, Activation::Identity),
            Dense::zeros(5, 2, Activation::Identity),
            vec![Dense::zeros(2, 4, Activation::Identity)],
            0.1,
        );
        assert!(r.is_err());
        let r = MlpVae::new(
            vec![],
            Dense::zeros(4, 2, Activation::Identity),
            Dense::zeros(4, 2, Activation::Identity),
            vec![Dense::zeros(2, 4, Activation::Identity)],
            0.0,
        );
        assert!(r.is_err());
    }

    #[test]
    fn decoder_jacobian_matches_central_differences() {
        let m = init_model(&config(vec![6]), 5, 3, 11).unwrap();
        let z = array![0.3, -0.2, 0.8];
        let jac = m.decoder_jacobian(z.view()).unwrap();
        let h = 1e-6;
        for j in 0..3 {
            let mut zp = z.clone();
            let mut zm = z.clone();
            zp[j] += h;
            zm[j] -= h;
            let fp = m.decode(zp.as_slice().unwrap()).unwrap();
            let fm = m.decode(zm.as_slice().unwrap()).unwrap();
            for i in 0..5 {
                let fd = (fp[i] - fm[i]) / (2.0 * h);
                assert!((fd - jac[[i, j]]).abs() < 1e-8, "({i},{j}) {fd} vs {}", jac[[i, j]]);
            }
        }
    }
}
