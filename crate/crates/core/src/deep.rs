//! Deep latent Gaussian models, inverse autoregressive flows and amortized
//! Gaussian posteriors. Forward evaluation and sampling only; nothing here
//! is trained.

use serde::{Deserialize, Serialize};

use crate::error::{LvmError, Result};
use crate::numerics::{serde_matrix, Matrix, RngStream, SpdMatrix, Vector};
use crate::zoo::{LatentBlock, ModelSpec, SampleBatch};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "kebab-case")]
pub enum Activation {
    #[default]
    Identity,
    Sigmoid,
    Relu,
    Tanh,
}

impl Activation {
    pub fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Identity => x,
            Activation::Sigmoid => sigmoid(x),
            Activation::Relu => x.max(0.0),
            Activation::Tanh => x.tanh(),
        }
    }
}

pub fn sigmoid(x: f64) -> f64 {
    if x >= 0.0 {
        1.0 / (1.0 + (-x).exp())
    } else {
        let e = x.exp();
        e / (1.0 + e)
    }
}

/// `x ↦ σ(W x + b)`
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DenseLayer {
    #[serde(with = "serde_matrix::rows")]
    pub weights: Matrix,
    #[serde(with = "serde_matrix::vector")]
    pub bias: Vector,
    #[serde(default)]
    pub activation: Activation,
}

impl DenseLayer {
    pub fn new(weights: Matrix, bias: Vector, activation: Activation) -> Result<Self> {
        if bias.len() != weights.nrows() {
            return Err(LvmError::mismatch("layer bias", weights.nrows(), bias.len()));
        }
        Ok(DenseLayer {
            weights,
            bias,
            activation,
        })
    }

    /// Weights drawn from `N(0, 1/fan_in)`, zero bias.
    pub fn random(input: usize, output: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let sd = (1.0 / input.max(1) as f64).sqrt();
        DenseLayer {
            weights: Matrix::from_fn(output, input, |_, _| sd * rng.standard_normal()),
            bias: Vector::zeros(output),
            activation,
        }
    }

    pub fn forward(&self, x: &Vector) -> Vector {
        (&self.weights * x + &self.bias).map(|v| self.activation.apply(v))
    }
}

/// Composition `h_K ∘ … ∘ h_0`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Mlp {
    pub layers: Vec<DenseLayer>,
}

impl Mlp {
    pub fn new(layers: Vec<DenseLayer>) -> Result<Self> {
        let net = Mlp { layers };
        net.validate()?;
        Ok(net)
    }

    /// Single linear layer `x ↦ W x + b`.
    pub fn linear(weights: Matrix, bias: Vector) -> Result<Self> {
        Mlp::new(vec![DenseLayer::new(weights, bias, Activation::Identity)?])
    }

    /// Network ignoring its input and returning `value`.
    pub fn constant(input: usize, value: Vector) -> Self {
        Mlp {
            layers: vec![DenseLayer {
                weights: Matrix::zeros(value.len(), input),
                bias: value,
                activation: Activation::Identity,
            }],
        }
    }

    /// `dims = [input, hidden…, output]`; `activation` on hidden layers,
    /// identity on the output layer.
    pub fn random(dims: &[usize], activation: Activation, rng: &mut RngStream) -> Result<Self> {
        if dims.len() < 2 {
            return Err(LvmError::invalid("dims", "need at least input and output sizes"));
        }
        let last = dims.len() - 2;
        let layers = dims
            .windows(2)
            .enumerate()
            .map(|(k, w)| {
                let act = if k == last { Activation::Identity } else { activation };
                DenseLayer::random(w[0], w[1], act, rng)
            })
            .collect();
        Mlp::new(layers)
    }

    pub fn validate(&self) -> Result<()> {
        if self.layers.is_empty() {
            return Err(LvmError::invalid("layers", "network needs at least one layer"));
        }
        for (k, layer) in self.layers.iter().enumerate() {
            if layer.bias.len() != layer.weights.nrows() {
                return Err(LvmError::invalid(
                    format!("layers[{k}].bias"),
                    format!("expected {} entries", layer.weights.nrows()),
                ));
            }
            if k > 0 && layer.weights.ncols() != self.layers[k - 1].weights.nrows() {
                return Err(LvmError::invalid(
                    format!("layers[{k}].weights"),
                    format!("expected {} columns", self.layers[k - 1].weights.nrows()),
                ));
            }
        }
        Ok(())
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].weights.ncols()
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].weights.nrows()
    }

    pub fn forward(&self, x: &Vector) -> Result<Vector> {
        if x.len() != self.input_dim() {
            return Err(LvmError::mismatch("network input", self.input_dim(), x.len()));
        }
        Ok(self.layers.iter().fold(x.clone(), |h, layer| layer.forward(&h)))
    }
}

pub fn mlp_forward(net: &Mlp, x: &Vector) -> Result<Vector> {
    net.forward(x)
}

/// One stochastic layer below the top: `z⁽ˡ⁾ ~ N(NN⁽ˡ⁾(z⁽ˡ⁺¹⁾), Σ⁽ˡ⁾)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlgmLayer {
    pub transform: Mlp,
    pub covariance: SpdMatrix,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "family", rename_all = "kebab-case")]
pub enum Emission {
    /// `y ~ N(NN(z⁽¹⁾), σ² I)`; `σ² = 0` emits the network output.
    Gaussian { network: Mlp, noise_variance: f64 },
    /// `y_p ~ Bernoulli(sigmoid(NN(z⁽¹⁾)_p))`
    Bernoulli { network: Mlp },
}

impl Emission {
    pub fn network(&self) -> &Mlp {
        match self {
            Emission::Gaussian { network, .. } | Emission::Bernoulli { network } => network,
        }
    }
}

/// Deep latent Gaussian model with `L` stochastic layers.
///
/// `z⁽ᴸ⁾ ~ N(0, I)` of size `top_dim`; `layers` run top-down, the first
/// producing `z⁽ᴸ⁻¹⁾` and the last `z⁽¹⁾`; the emission reads `z⁽¹⁾`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DlgmSpec {
    pub top_dim: usize,
    #[serde(default)]
    pub layers: Vec<DlgmLayer>,
    pub emission: Emission,
}

impl DlgmSpec {
    /// `(d₁, …, d_L)`, bottom layer first.
    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims: Vec<usize> = self.layers.iter().rev().map(|l| l.covariance.dim()).collect();
        dims.push(self.top_dim);
        dims
    }

    pub fn latent_dim(&self) -> usize {
        self.layer_dims().iter().sum()
    }

    pub fn observed_dim(&self) -> usize {
        self.emission.network().output_dim()
    }

    pub fn validate(&self) -> Result<()> {
        if self.top_dim == 0 {
            return Err(LvmError::invalid("top_dim", "must be positive"));
        }
        let mut below = self.top_dim;
        for (k, layer) in self.layers.iter().enumerate() {
            layer.transform.validate()?;
            if layer.transform.input_dim() != below {
                return Err(LvmError::invalid(
                    format!("layers[{k}].transform"),
                    format!("expected input dimension {below}"),
                ));
            }
            if layer.transform.output_dim() != layer.covariance.dim() {
                return Err(LvmError::invalid(
                    format!("layers[{k}].covariance"),
                    format!("expected {0}x{0}", layer.transform.output_dim()),
                ));
            }
            below = layer.covariance.dim();
        }
        let net = self.emission.network();
        net.validate()?;
        if net.input_dim() != below {
            return Err(LvmError::invalid(
                "emission.network",
                format!("expected input dimension {below}"),
            ));
        }
        if let Emission::Gaussian { noise_variance, .. } = &self.emission {
            if !(*noise_variance >= 0.0 && noise_variance.is_finite()) {
                return Err(LvmError::invalid("emission.noise_variance", "must be non-negative"));
            }
        }
        Ok(())
    }
}

/// Top-down ancestral sampling; every stochastic layer is kept in the
/// latent record, bottom layer first.
pub fn dlgm_sample(spec: &DlgmSpec, n: usize, rng: &mut RngStream) -> Result<SampleBatch> {
    spec.validate()?;
    let dims = spec.layer_dims();
    let p = spec.observed_dim();
    let mut latents = Matrix::zeros(n, spec.latent_dim());
    let mut obs = Matrix::zeros(n, p);
    let chol: Vec<&Matrix> = spec.layers.iter().map(|l| l.covariance.cholesky()).collect();
    let offsets: Vec<usize> = dims
        .iter()
        .scan(0, |acc, d| {
            let start = *acc;
            *acc += d;
            Some(start)
        })
        .collect();
    let top = dims.len() - 1;
    for i in 0..n {
        let mut z = Vector::from_vec(rng.standard_normals(spec.top_dim));
        latents
            .view_mut((i, offsets[top]), (1, spec.top_dim))
            .copy_from(&z.transpose());
        for (k, layer) in spec.layers.iter().enumerate() {
            let level = top - 1 - k;
            let noise = chol[k] * Vector::from_vec(rng.standard_normals(dims[level]));
            z = layer.transform.forward(&z)? + noise;
            latents
                .view_mut((i, offsets[level]), (1, dims[level]))
                .copy_from(&z.transpose());
        }
        let out = spec.emission.network().forward(&z)?;
        for j in 0..p {
            obs[(i, j)] = match &spec.emission {
                Emission::Gaussian { noise_variance, .. } => out[j] + noise_variance.sqrt() * rng.standard_normal(),
                Emission::Bernoulli { .. } => f64::from(u8::from(rng.bernoulli(sigmoid(out[j])))),
            };
        }
    }
    let layout = dims
        .iter()
        .enumerate()
        .map(|(l, d)| LatentBlock {
            name: format!("z{}", l + 1),
            width: *d,
        })
        .collect();
    Ok(SampleBatch::new(
        &ModelSpec::Dlgm(spec.clone()),
        latents,
        obs,
        rng.seed(),
        layout,
    ))
}

/// Autoregressive conditioner producing `μ_d(z_{<d})` and the raw
/// log-scale whose exponential is `σ_d(z_{<d})`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum Conditioner {
    /// `μ = b + A z` with `A` strictly lower triangular, constant `log σ`.
    Affine {
        #[serde(with = "serde_matrix::rows")]
        shift: Matrix,
        #[serde(with = "serde_matrix::vector")]
        bias: Vector,
        #[serde(with = "serde_matrix::vector")]
        log_scale: Vector,
    },
    /// One-hidden-layer network with autoregressive masks; hidden unit `k`
    /// has degree `k mod (D−1) + 1` and sees inputs `1..=degree`.
    Masked {
        #[serde(with = "serde_matrix::rows")]
        input_weights: Matrix,
        #[serde(with = "serde_matrix::vector")]
        input_bias: Vector,
        #[serde(with = "serde_matrix::rows")]
        mean_weights: Matrix,
        #[serde(with = "serde_matrix::vector")]
        mean_bias: Vector,
        #[serde(with = "serde_matrix::rows")]
        scale_weights: Matrix,
        #[serde(with = "serde_matrix::vector")]
        scale_bias: Vector,
        activation: Activation,
    },
}

fn hidden_degree(k: usize, dim: usize) -> usize {
    if dim < 2 {
        0
    } else {
        k % (dim - 1) + 1
    }
}

/// One inverse autoregressive flow step `z_d = μ_d(z_{<d}) + σ_d(z_{<d}) ε_d`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct IafLayer {
    pub conditioner: Conditioner,
}

impl IafLayer {
    pub fn identity(dim: usize) -> Self {
        IafLayer::affine(Matrix::zeros(dim, dim), Vector::zeros(dim), Vector::zeros(dim))
            .expect("zero shift is strictly lower triangular")
    }

    pub fn affine(shift: Matrix, bias: Vector, log_scale: Vector) -> Result<Self> {
        let layer = IafLayer {
            conditioner: Conditioner::Affine { shift, bias, log_scale },
        };
        layer.validate()?;
        Ok(layer)
    }

    pub fn random_masked(dim: usize, hidden: usize, activation: Activation, rng: &mut RngStream) -> Self {
        let input = DenseLayer::random(dim, hidden, activation, rng);
        let mean = DenseLayer::random(hidden, dim, Activation::Identity, rng);
        let scale = DenseLayer::random(hidden, dim, Activation::Identity, rng);
        IafLayer {
            conditioner: Conditioner::Masked {
                input_weights: input.weights,
                input_bias: input.bias,
                mean_weights: mean.weights,
                mean_bias: Vector::from_fn(dim, |_, _| 0.1 * rng.standard_normal()),
                scale_weights: scale.weights * 0.1,
                scale_bias: scale.bias,
                activation,
            },
        }
    }

    pub fn dim(&self) -> usize {
        match &self.conditioner {
            Conditioner::Affine { bias, .. } => bias.len(),
            Conditioner::Masked { mean_bias, .. } => mean_bias.len(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        match &self.conditioner {
            Conditioner::Affine { shift, log_scale, .. } => {
                if shift.shape() != (d, d) {
                    return Err(LvmError::invalid("shift", format!("expected {d}x{d}")));
                }
                if log_scale.len() != d {
                    return Err(LvmError::invalid("log_scale", format!("expected {d} entries")));
                }
                for i in 0..d {
                    for j in i..d {
                        if shift[(i, j)] != 0.0 {
                            return Err(LvmError::invalid(
                                format!("shift[{i}][{j}]"),
                                "must be strictly lower triangular",
                            ));
                        }
                    }
                }
            }
            Conditioner::Masked {
                input_weights,
                input_bias,
                mean_weights,
                scale_weights,
                scale_bias,
                ..
            } => {
                let h = input_weights.nrows();
                if input_weights.ncols() != d || input_bias.len() != h {
                    return Err(LvmError::invalid("input_weights", format!("expected H x {d}")));
                }
                if mean_weights.shape() != (d, h) || scale_weights.shape() != (d, h) {
                    return Err(LvmError::invalid("mean_weights", format!("expected {d} x {h}")));
                }
                if scale_bias.len() != d {
                    return Err(LvmError::invalid("scale_bias", format!("expected {d} entries")));
                }
            }
        }
        Ok(())
    }

    /// `(μ(z), log σ(z))`; entry `d` depends on `z_{<d}` only.
    pub fn condition(&self, z: &Vector) -> (Vector, Vector) {
        match &self.conditioner {
            Conditioner::Affine { shift, bias, log_scale } => (bias + shift * z, log_scale.clone()),
            Conditioner::Masked {
                input_weights,
                input_bias,
                mean_weights,
                mean_bias,
                scale_weights,
                scale_bias,
                activation,
            } => {
                let d = self.dim();
                let hid = Vector::from_fn(input_weights.nrows(), |k, _| {
                    let degree = hidden_degree(k, d);
                    let pre: f64 = (0..degree).map(|j| input_weights[(k, j)] * z[j]).sum();
                    activation.apply(pre + input_bias[k])
                });
                let read = |w: &Matrix, b: &Vector| {
                    Vector::from_fn(d, |out, _| {
                        let s: f64 = (0..hid.len())
                            .filter(|k| hidden_degree(*k, d) > 0 && hidden_degree(*k, d) <= out)
                            .map(|k| w[(out, k)] * hid[k])
                            .sum();
                        s + b[out]
                    })
                };
                (read(mean_weights, mean_bias), read(scale_weights, scale_bias))
            }
        }
    }

    fn scales(log_scale: &Vector) -> Result<Vector> {
        let s = log_scale.map(f64::exp);
        if let Some(i) = s.iter().position(|v| !(*v > 0.0 && v.is_finite())) {
            return Err(LvmError::Numerical(format!(
                "flow scale for coordinate {i} is {} (must be positive and finite)",
                s[i]
            )));
        }
        Ok(s)
    }

    /// Closed-form `(I − A)⁻¹ S² (I − A)⁻ᵀ` for the affine conditioner.
    pub fn affine_covariance(&self) -> Result<Matrix> {
        let Conditioner::Affine { shift, log_scale, .. } = &self.conditioner else {
            return Err(LvmError::Precondition("covariance needs an affine conditioner".into()));
        };
        let d = self.dim();
        let inv = crate::numerics::inverse(&(Matrix::identity(d, d) - shift), "I - A")?;
        let s2 = Matrix::from_diagonal(&log_scale.map(|v| (2.0 * v).exp()));
        Ok(&inv * s2 * inv.transpose())
    }
}

pub fn iaf_forward(layer: &IafLayer, eps: &Vector) -> Result<Vector> {
    let d = layer.dim();
    if eps.len() != d {
        return Err(LvmError::mismatch("flow input", d, eps.len()));
    }
    let mut z = Vector::zeros(d);
    for k in 0..d {
        let (mu, log_s) = layer.condition(&z);
        let s = IafLayer::scales(&log_s)?;
        z[k] = mu[k] + s[k] * eps[k];
    }
    Ok(z)
}

pub fn iaf_inverse(layer: &IafLayer, z: &Vector) -> Result<Vector> {
    if !matches!(layer.conditioner, Conditioner::Affine { .. }) {
        return Err(LvmError::NotInvertible(
            "masked network conditioner is not analytically invertible".into(),
        ));
    }
    if z.len() != layer.dim() {
        return Err(LvmError::mismatch("flow output", layer.dim(), z.len()));
    }
    let (mu, log_s) = layer.condition(z);
    let s = IafLayer::scales(&log_s)?;
    Ok((z - mu).component_div(&s))
}

/// `z = NN_μ(y) + exp(NN_s(y)) ⊙ ε`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AmortizedPosterior {
    pub mean_net: Mlp,
    /// Outputs the log of the per-coordinate scale.
    pub scale_net: Mlp,
}

impl AmortizedPosterior {
    pub fn new(mean_net: Mlp, scale_net: Mlp) -> Result<Self> {
        if mean_net.input_dim() != scale_net.input_dim() || mean_net.output_dim() != scale_net.output_dim() {
            return Err(LvmError::invalid(
                "scale_net",
                "must match mean_net input and output sizes",
            ));
        }
        Ok(AmortizedPosterior { mean_net, scale_net })
    }

    pub fn mean(&self, y: &Vector) -> Result<Vector> {
        self.mean_net.forward(y)
    }

    pub fn scale(&self, y: &Vector) -> Result<Vector> {
        IafLayer::scales(&self.scale_net.forward(y)?)
    }

    /// `n x d` draws for one observation.
    pub fn sample(&self, y: &Vector, n: usize, rng: &mut RngStream) -> Result<Matrix> {
        let mu = self.mean(y)?;
        let s = self.scale(y)?;
        let d = mu.len();
        Ok(Matrix::from_fn(n, d, |_, j| mu[j] + s[j] * rng.standard_normal()))
    }
}

pub fn amortized_posterior_sample(
    post: &AmortizedPosterior,
    y: &Vector,
    n: usize,
    rng: &mut RngStream,
) -> Result<Matrix> {
    post.sample(y, n, rng)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::numerics::{relative_frobenius, sample_covariance};
    use crate::zoo::{implied_moments, LinearGaussianLvmSpec, ModelSpec};

    fn v(x: &[f64]) -> Vector {
        Vector::from_column_slice(x)
    }

    #[test]
    fn forward_basics() {
        let id = Mlp::linear(Matrix::identity(2, 2), Vector::zeros(2)).unwrap();
        assert_eq!(mlp_forward(&id, &v(&[3.0, -1.0])).unwrap(), v(&[3.0, -1.0]));
        let relu = Mlp::new(vec![DenseLayer::new(
            Matrix::identity(2, 2),
            Vector::zeros(2),
            Activation::Relu,
        )
        .unwrap()])
        .unwrap();
        assert_eq!(relu.forward(&v(&[-1.0, 2.0])).unwrap(), v(&[0.0, 2.0]));
        assert!(relu.forward(&v(&[1.0])).is_err());
    }

    #[test]
    fn two_layer_matches_hand_composition() {
        let mut rng = RngStream::new(1);
        let net = Mlp::random(&[3, 4, 2], Activation::Tanh, &mut rng).unwrap();
        let x = v(&[0.3, -1.2, 0.7]);
        let (l0, l1) = (&net.layers[0], &net.layers[1]);
        let mut h = [0.0; 4];
        for (k, hk) in h.iter_mut().enumerate() {
            let mut s = l0.bias[k];
            for j in 0..3 {
                s += l0.weights[(k, j)] * x[j];
            }
            *hk = s.tanh();
        }
        let out = net.forward(&x).unwrap();
        for o in 0..2 {
            let mut s = l1.bias[o];
            for (k, hk) in h.iter().enumerate() {
                s += l1.weights[(o, k)] * hk;
            }
            assert!((out[o] - s).abs() < 1e-12);
        }
    }

    #[test]
    fn chained_dims_are_checked() {
        let bad = Mlp {
            layers: vec![
                DenseLayer::new(Matrix::zeros(3, 2), Vector::zeros(3), Activation::Relu).unwrap(),
                DenseLayer::new(Matrix::zeros(1, 2), Vector::zeros(1), Activation::Identity).unwrap(),
            ],
        };
        assert!(bad.validate().is_err());
    }

    #[test]
    fn single_layer_dlgm_matches_ppca_moments() {
        let w = Matrix::from_row_slice(3, 2, &[1.0, 0.0, 0.5, 1.0, -0.5, 0.8]);
        let spec = DlgmSpec {
            top_dim: 2,
            layers: vec![],
            emission: Emission::Gaussian {
                network: Mlp::linear(w.clone(), Vector::zeros(3)).unwrap(),
                noise_variance: 0.0,
            },
        };
        let mut rng = RngStream::new(2);
        let batch = dlgm_sample(&spec, 200_000, &mut rng).unwrap();
        let ppca = ModelSpec::Ppca(LinearGaussianLvmSpec::ppca(w, 0.0));
        let oracle = implied_moments(&ppca).unwrap();
        assert!(!oracle.positive_definite);
        assert!(relative_frobenius(&sample_covariance(&batch.observations, 1), &oracle.covariance) < 0.02);
    }

    fn two_layer_spec(rng: &mut RngStream, cov_scale: f64) -> DlgmSpec {
        DlgmSpec {
            top_dim: 2,
            layers: vec![DlgmLayer {
                transform: Mlp::random(&[2, 4, 3], Activation::Tanh, rng).unwrap(),
                covariance: SpdMatrix::from_diagonal(&[cov_scale; 3]).unwrap(),
            }],
            emission: Emission::Bernoulli {
                network: Mlp::random(&[3, 5], Activation::Identity, rng).unwrap(),
            },
        }
    }

    #[test]
    fn latent_record_spans_every_layer() {
        let mut rng = RngStream::new(3);
        let spec = two_layer_spec(&mut rng, 1.0);
        assert_eq!(spec.layer_dims(), vec![3, 2]);
        let batch = dlgm_sample(&spec, 10, &mut rng).unwrap();
        assert_eq!(batch.latents.ncols(), 5);
        assert!(batch.observations.iter().all(|y| *y == 0.0 || *y == 1.0));
        let names: Vec<_> = batch.latent_layout.iter().map(|b| b.name.as_str()).collect();
        assert_eq!(names, ["z1", "z2"]);
    }

    #[test]
    fn near_deterministic_cascade() {
        let mut rng = RngStream::new(4);
        let spec = two_layer_spec(&mut rng, 1e-6);
        let batch = dlgm_sample(&spec, 2000, &mut rng).unwrap();
        let net = &spec.layers[0].transform;
        let mut sq = [0.0_f64; 3];
        for i in 0..batch.latents.nrows() {
            let top = batch.latents.fixed_view::<1, 2>(i, 3).transpose().into_owned();
            let mean = net.forward(&Vector::from_column_slice(top.as_slice())).unwrap();
            for (j, acc) in sq.iter_mut().enumerate() {
                *acc += (batch.latents[(i, j)] - mean[j]).powi(2) / batch.latents.nrows() as f64;
            }
        }
        assert!(sq.iter().all(|v| *v <= 1e-5), "{sq:?}");
    }

    #[test]
    fn dlgm_sampling_is_reproducible() {
        let mut rng = RngStream::new(5);
        let spec = two_layer_spec(&mut rng, 0.5);
        let a = dlgm_sample(&spec, 50, &mut RngStream::new(9)).unwrap();
        let b = dlgm_sample(&spec, 50, &mut RngStream::new(9)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn identity_flow() {
        let layer = IafLayer::identity(3);
        let e = v(&[0.1, -2.0, 0.5]);
        assert_eq!(iaf_forward(&layer, &e).unwrap(), e);
        assert_eq!(iaf_inverse(&layer, &e).unwrap(), e);
    }

    #[test]
    fn scalar_affine_inverse() {
        let layer = IafLayer::affine(Matrix::zeros(1, 1), v(&[2.0]), v(&[0.5_f64.ln()])).unwrap();
        let eps = iaf_inverse(&layer, &v(&[3.0])).unwrap();
        assert!((eps[0] - (3.0 - 2.0) / 0.5).abs() < 1e-15);
    }

    #[test]
    fn affine_flow_covariance() {
        let shift = Matrix::from_row_slice(2, 2, &[0.0, 0.0, 0.5, 0.0]);
        let layer = IafLayer::affine(shift, Vector::zeros(2), Vector::zeros(2)).unwrap();
        let oracle = Matrix::from_row_slice(2, 2, &[1.0, 0.5, 0.5, 1.25]);
        assert!((layer.affine_covariance().unwrap() - &oracle).amax() < 1e-14);
        let mut rng = RngStream::new(6);
        let mut draws = Matrix::zeros(200_000, 2);
        for i in 0..draws.nrows() {
            let z = iaf_forward(&layer, &v(&rng.standard_normals(2))).unwrap();
            draws.set_row(i, &z.transpose());
        }
        assert!(relative_frobenius(&sample_covariance(&draws, 1), &oracle) < 0.02);
    }

    fn random_affine(d: usize, rng: &mut RngStream) -> IafLayer {
        let shift = Matrix::from_fn(d, d, |i, j| if j < i { 0.5 * rng.standard_normal() } else { 0.0 });
        let bias = v(&rng.standard_normals(d));
        let log_scale = Vector::from_fn(d, |_, _| 0.3 * rng.standard_normal());
        IafLayer::affine(shift, bias, log_scale).unwrap()
    }

    fn jacobian(layer: &IafLayer, eps: &Vector) -> Matrix {
        let d = eps.len();
        let h = 1e-6;
        Matrix::from_fn(d, d, |i, j| {
            let mut up = eps.clone();
            let mut down = eps.clone();
            up[j] += h;
            down[j] -= h;
            (iaf_forward(layer, &up).unwrap()[i] - iaf_forward(layer, &down).unwrap()[i]) / (2.0 * h)
        })
    }

    #[test]
    fn affine_jacobian_is_lower_triangular() {
        let mut rng = RngStream::new(7);
        let layer = random_affine(4, &mut rng);
        let jac = jacobian(&layer, &v(&rng.standard_normals(4)));
        let Conditioner::Affine { log_scale, .. } = &layer.conditioner else {
            unreachable!()
        };
        for i in 0..4 {
            for j in (i + 1)..4 {
                assert!(jac[(i, j)].abs() < 1e-8);
            }
            assert!((jac[(i, i)] - log_scale[i].exp()).abs() < 1e-6);
        }
    }

    #[test]
    fn affine_round_trip() {
        let mut rng = RngStream::new(8);
        let layer = random_affine(5, &mut rng);
        let mut worst = 0.0_f64;
        for _ in 0..1000 {
            let z = v(&rng.standard_normals(5));
            let back = iaf_forward(&layer, &iaf_inverse(&layer, &z).unwrap()).unwrap();
            worst = worst.max((back - z).amax());
        }
        assert!(worst < 1e-10, "{worst}");
    }

    #[test]
    fn masked_flow_is_autoregressive() {
        let mut rng = RngStream::new(9);
        let layer = IafLayer::random_masked(5, 12, Activation::Tanh, &mut rng);
        for _ in 0..100 {
            let eps = v(&rng.standard_normals(5));
            let base = iaf_forward(&layer, &eps).unwrap();
            let d = rng.index(5);
            let mut moved = eps.clone();
            moved[d] += rng.standard_normal() * 3.0;
            let z = iaf_forward(&layer, &moved).unwrap();
            for k in 0..d {
                assert_eq!(z[k], base[k]);
            }
            if d < 4 {
                assert_ne!(z.rows(d, 5 - d), base.rows(d, 5 - d));
            }
        }
        assert!(matches!(
            iaf_inverse(&layer, &Vector::zeros(5)),
            Err(LvmError::NotInvertible(_))
        ));
    }

    #[test]
    fn vanishing_scale_is_rejected() {
        let layer = IafLayer::affine(Matrix::zeros(2, 2), Vector::zeros(2), v(&[0.0, -1000.0])).unwrap();
        assert!(iaf_forward(&layer, &v(&[1.0, 1.0])).is_err());
        let bad = IafLayer::affine(Matrix::identity(2, 2), Vector::zeros(2), Vector::zeros(2));
        assert!(bad.is_err());
    }

    #[test]
    fn amortized_posterior_moments() {
        let mut rng = RngStream::new(10);
        let post = AmortizedPosterior::new(
            Mlp::constant(3, v(&[1.0, 2.0])),
            Mlp::constant(3, v(&[0.5_f64.ln(), 2.0_f64.ln()])),
        )
        .unwrap();
        let draws = post.sample(&v(&[0.0, 0.0, 0.0]), 100_000, &mut rng).unwrap();
        let mean = crate::numerics::column_means(&draws);
        assert!((mean[0] - 1.0).abs() < 0.01 && (mean[1] - 2.0).abs() < 0.02);
        let cov = sample_covariance(&draws, 1);
        assert!((cov[(0, 0)].sqrt() - 0.5).abs() < 0.01);
        assert!((cov[(1, 1)].sqrt() - 2.0).abs() < 0.04);
    }

    #[test]
    fn amortization_depends_on_observation() {
        let mut rng = RngStream::new(11);
        let post = AmortizedPosterior::new(
            Mlp::linear(Matrix::from_row_slice(2, 2, &[1.0, 0.0, 0.0, 1.0]), Vector::zeros(2)).unwrap(),
            Mlp::constant(2, v(&[-2.0, -2.0])),
        )
        .unwrap();
        let a = crate::numerics::column_means(&post.sample(&v(&[0.0, 0.0]), 2000, &mut rng).unwrap());
        let b = crate::numerics::column_means(&post.sample(&v(&[3.0, -3.0]), 2000, &mut rng).unwrap());
        assert!((a - b).norm() > 1.0);
    }

    #[test]
    fn degenerate_posterior_concentrates() {
        let mut rng = RngStream::new(12);
        let post = AmortizedPosterior::new(Mlp::constant(1, v(&[0.3])), Mlp::constant(1, v(&[1e-8_f64.ln()]))).unwrap();
        let draws = post.sample(&v(&[1.0]), 10_000, &mut rng).unwrap();
        assert!(sample_covariance(&draws, 1)[(0, 0)] < 1e-12);
    }
}
