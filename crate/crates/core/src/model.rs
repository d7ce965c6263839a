//! Encoder, projection head and linear task heads.
//!
//! The encoder is an MLP `x → relu(W₁x+b₁) → … → W_L h + b_L`; its output is
//! the representation `z` (optionally L2-normalised). The projection head is
//! a two-layer MLP on `z` whose output is always L2-normalised and is only
//! used by contrastive pretraining.

use std::path::Path;

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::checkpoint::Container;
use crate::error::{Error, Result};
use crate::rng;
use crate::tensor::{Tape, Tensor, Var};

pub const NORM_EPSILON: f64 = 1e-12;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    #[default]
    Relu,
}

fn default_hidden() -> Vec<usize> {
    vec![256, 128]
}
fn default_representation_dim() -> usize {
    64
}
fn default_projection_dim() -> usize {
    32
}
fn default_true() -> bool {
    true
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EncoderConfig {
    /// Zero means "take it from the data".
    #[serde(default)]
    pub input_dim: usize,
    #[serde(default = "default_hidden")]
    pub hidden: Vec<usize>,
    #[serde(default = "default_representation_dim")]
    pub representation_dim: usize,
    #[serde(default)]
    pub activation: Activation,
    #[serde(default = "default_true")]
    pub normalize_representation: bool,
    /// Hidden width of the projection head; defaults to `representation_dim`.
    #[serde(default)]
    pub projection_hidden: Option<usize>,
    #[serde(default = "default_projection_dim")]
    pub projection_dim: usize,
}

impl Default for EncoderConfig {
    fn default() -> Self {
        Self::new(0)
    }
}

impl EncoderConfig {
    pub fn new(input_dim: usize) -> Self {
        Self {
            input_dim,
            hidden: default_hidden(),
            representation_dim: default_representation_dim(),
            activation: Activation::Relu,
            normalize_representation: true,
            projection_hidden: None,
            projection_dim: default_projection_dim(),
        }
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 || self.hidden.contains(&0) || self.projection_dim == 0 {
            return Err(Error::invalid("encoder widths must be at least 1"));
        }
        if self.projection_hidden == Some(0) {
            return Err(Error::invalid("projection hidden width must be at least 1"));
        }
        if self.representation_dim < 2 {
            return Err(Error::invalid("representation dimension must be at least 2"));
        }
        Ok(())
    }

    pub fn projection_hidden(&self) -> usize {
        self.projection_hidden.unwrap_or(self.representation_dim)
    }

    fn encoder_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim];
        dims.extend(&self.hidden);
        dims.push(self.representation_dim);
        dims
    }

    fn projection_dims(&self) -> [usize; 3] {
        [self.representation_dim, self.projection_hidden(), self.projection_dim]
    }
}

/// Fully connected layer computing `x Wᵀ + b`.
#[derive(Debug, Clone, PartialEq)]
pub struct Dense {
    /// `out × in`
    pub weight: Tensor,
    pub bias: Tensor,
}

impl Dense {
    fn init(fan_in: usize, fan_out: usize, gain: f64, rng: &mut rng::Rng) -> Self {
        let std = (gain / fan_in as f64).sqrt();
        let w = rng::normals(rng, fan_in * fan_out).into_iter().map(|v| v * std).collect();
        Self {
            weight: Tensor::new(vec![fan_out, fan_in], w).unwrap(),
            bias: Tensor::zeros(&[fan_out]),
        }
    }

    pub fn in_dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.rows()
    }
}

/// Shared encoder parameters plus the projection head.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams {
    pub config: EncoderConfig,
    pub encoder: Vec<Dense>,
    pub projection: Vec<Dense>,
}

/// Tape handles for every weight and bias of a [`ModelParams`], in
/// [`ModelParams::tensors`] order.
#[derive(Debug, Clone)]
pub struct BoundModel {
    pub encoder: Vec<(Var, Var)>,
    pub projection: Vec<(Var, Var)>,
}

impl BoundModel {
    pub fn vars(&self) -> Vec<Var> {
        self.encoder
            .iter()
            .chain(&self.projection)
            .flat_map(|&(w, b)| [w, b])
            .collect()
    }
}

impl ModelParams {
    /// He-initialised weights for ReLU layers, variance-preserving weights
    /// for linear outputs, zero biases.
    pub fn init(config: &EncoderConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = rng::stream(seed, "model-init", 0);
        let dims = config.encoder_dims();
        let last = dims.len() - 2;
        let encoder = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| Dense::init(w[0], w[1], if i == last { 1.0 } else { 2.0 }, &mut rng))
            .collect();
        let [d, h, p] = config.projection_dims();
        let projection = vec![Dense::init(d, h, 2.0, &mut rng), Dense::init(h, p, 1.0, &mut rng)];
        Ok(Self {
            config: config.clone(),
            encoder,
            projection,
        })
    }

    pub fn tensors(&self) -> Vec<&Tensor> {
        self.encoder
            .iter()
            .chain(&self.projection)
            .flat_map(|l| [&l.weight, &l.bias])
            .collect()
    }

    pub fn tensors_mut(&mut self) -> Vec<&mut Tensor> {
        self.encoder
            .iter_mut()
            .chain(self.projection.iter_mut())
            .flat_map(|l| [&mut l.weight, &mut l.bias])
            .collect()
    }

    pub fn parameter_count(&self) -> usize {
        self.tensors().iter().map(|t| t.len()).sum()
    }

    /// Records every parameter on `tape`, trainable or constant.
    pub fn bind(&self, tape: &mut Tape, trainable: bool) -> BoundModel {
        let mut leaf = |t: &Tensor| {
            if trainable {
                tape.param(t.clone())
            } else {
                tape.constant(t.clone())
            }
        };
        let encoder = self.encoder.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        let projection = self.projection.iter().map(|l| (leaf(&l.weight), leaf(&l.bias))).collect();
        BoundModel { encoder, projection }
    }

    fn check_input(&self, tape: &Tape, x: Var) -> Result<()> {
        let shape = tape.value(x).shape();
        if shape.len() != 2 || shape[1] != self.config.input_dim {
            return Err(Error::ShapeMismatch {
                op: "encode",
                expected: vec![shape.first().copied().unwrap_or(0), self.config.input_dim],
                actual: shape.to_vec(),
            });
        }
        Ok(())
    }

    /// Representation batch `n × d` for the input batch `x` on the tape.
    pub fn encode_on(&self, tape: &mut Tape, bound: &BoundModel, x: Var) -> Result<Var> {
        self.check_input(tape, x)?;
        let h = mlp(tape, &bound.encoder, x)?;
        if self.config.normalize_representation {
            tape.l2_normalize(h, NORM_EPSILON)
        } else {
            Ok(h)
        }
    }

    /// Normalised projection `g(z)/‖g(z)‖` of a representation batch.
    pub fn project_on(&self, tape: &mut Tape, bound: &BoundModel, z: Var) -> Result<Var> {
        let width = tape.value(z).cols();
        if width != self.config.representation_dim {
            return Err(Error::ShapeMismatch {
                op: "project",
                expected: vec![self.config.representation_dim],
                actual: vec![width],
            });
        }
        let g = mlp(tape, &bound.projection, z)?;
        tape.l2_normalize(g, NORM_EPSILON)
    }

    pub fn encode(&self, x: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let xv = tape.constant(x.clone());
        let z = self.encode_on(&mut tape, &bound, xv)?;
        Ok(tape.value(z).clone())
    }

    pub fn project(&self, z: &Tensor) -> Result<Tensor> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape, false);
        let zv = tape.constant(z.clone());
        let p = self.project_on(&mut tape, &bound, zv)?;
        Ok(tape.value(p).clone())
    }

    pub fn to_container(&self, configs: Value, seed: u64, step: u64) -> Container {
        let meta = serde_json::json!({
            "encoder": self.config,
            "configs": configs,
        });
        let mut c = Container::new("model", seed, step, meta);
        for (i, l) in self.encoder.iter().enumerate() {
            c.push(format!("encoder.{i}.weight"), l.weight.clone());
            c.push(format!("encoder.{i}.bias"), l.bias.clone());
        }
        for (i, l) in self.projection.iter().enumerate() {
            c.push(format!("projection.{i}.weight"), l.weight.clone());
            c.push(format!("projection.{i}.bias"), l.bias.clone());
        }
        c
    }

    pub fn from_container(mut c: Container) -> Result<ModelCheckpoint> {
        c.expect_kind("model")?;
        let meta = c.metadata.configs.clone();
        let config: EncoderConfig = serde_json::from_value(
            meta.get("encoder").cloned().ok_or_else(|| Error::Metadata("missing encoder config".into()))?,
        )
        .map_err(|e| Error::Metadata(format!("encoder config: {e}")))?;
        config.validate().map_err(|e| Error::Metadata(e.to_string()))?;
        let configs = meta.get("configs").cloned().unwrap_or(Value::Null);

        let mut take_layer = |prefix: &str, i: usize, fan_in: usize, fan_out: usize| -> Result<Dense> {
            let weight = c.take(&format!("{prefix}.{i}.weight"))?;
            let bias = c.take(&format!("{prefix}.{i}.bias"))?;
            if weight.shape() != [fan_out, fan_in] || bias.shape() != [fan_out] {
                return Err(Error::Metadata(format!(
                    "{prefix}.{i}: shapes {:?}/{:?} disagree with config",
                    weight.shape(),
                    bias.shape()
                )));
            }
            Ok(Dense { weight, bias })
        };
        let dims = config.encoder_dims();
        let encoder = dims
            .windows(2)
            .enumerate()
            .map(|(i, w)| take_layer("encoder", i, w[0], w[1]))
            .collect::<Result<Vec<_>>>()?;
        let [d, h, p] = config.projection_dims();
        let projection = vec![take_layer("projection", 0, d, h)?, take_layer("projection", 1, h, p)?];
        if !c.arrays.is_empty() {
            return Err(Error::Metadata(format!("{} unexpected arrays", c.arrays.len())));
        }
        Ok(ModelCheckpoint {
            params: ModelParams {
                config,
                encoder,
                projection,
            },
            configs,
            seed: c.metadata.seed,
            step: c.metadata.step,
        })
    }
}

fn mlp(tape: &mut Tape, layers: &[(Var, Var)], x: Var) -> Result<Var> {
    let mut h = x;
    for (i, &(w, b)) in layers.iter().enumerate() {
        let lin = tape.matmul_t(h, w)?;
        h = tape.add_row(lin, b)?;
        if i + 1 < layers.len() {
            h = tape.relu(h)?;
        }
    }
    Ok(h)
}

/// A saved model with the run metadata it was stored with.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelCheckpoint {
    pub params: ModelParams,
    /// Free-form configuration recorded alongside the parameters.
    pub configs: Value,
    pub seed: u64,
    pub step: u64,
}

pub fn checkpoint_save(path: impl AsRef<Path>, params: &ModelParams, configs: Value, seed: u64, step: u64) -> Result<()> {
    params.to_container(configs, seed, step).save(path)
}

pub fn checkpoint_load(path: impl AsRef<Path>) -> Result<ModelCheckpoint> {
    ModelParams::from_container(Container::load(path)?)
}

/// Linear readout `logits = z Wᵀ + b` with `W: K × d`.
#[derive(Debug, Clone, PartialEq)]
pub struct LinearHead {
    pub weight: Tensor,
    pub bias: Tensor,
}

impl LinearHead {
    pub fn zeros(classes: usize, dim: usize) -> Result<Self> {
        if classes < 2 {
            return Err(Error::invalid("a linear head needs at least 2 classes"));
        }
        Ok(Self {
            weight: Tensor::zeros(&[classes, dim]),
            bias: Tensor::zeros(&[classes]),
        })
    }

    pub fn new(weight: Tensor, bias: Tensor) -> Result<Self> {
        if weight.shape().len() != 2 || weight.rows() < 2 || bias.shape() != [weight.rows()] {
            return Err(Error::ShapeMismatch {
                op: "LinearHead::new",
                expected: vec![weight.rows()],
                actual: bias.shape().to_vec(),
            });
        }
        Ok(Self { weight, bias })
    }

    pub fn classes(&self) -> usize {
        self.weight.rows()
    }

    pub fn dim(&self) -> usize {
        self.weight.cols()
    }

    pub fn forward(&self, z: &Tensor) -> Result<Tensor> {
        if z.cols() != self.dim() {
            return Err(Error::ShapeMismatch {
                op: "head_forward",
                expected: vec![self.dim()],
                actual: vec![z.cols()],
            });
        }
        let z = if z.shape().len() == 1 {
            z.clone().reshape(vec![1, z.len()])?
        } else {
            z.clone()
        };
        let mut logits = z.matmul(&self.weight.transpose())?;
        let k = self.classes();
        for row in logits.data_mut().chunks_mut(k) {
            row.iter_mut().zip(self.bias.data()).for_each(|(x, b)| *x += b);
        }
        Ok(logits)
    }

    /// Flattened parameters, class-major: `[w_1, b_1, w_2, b_2, …]`.
    pub fn flatten(&self) -> Vec<f64> {
        let (k, d) = (self.classes(), self.dim());
        let mut out = Vec::with_capacity(k * (d + 1));
        for c in 0..k {
            out.extend_from_slice(self.weight.row(c));
            out.push(self.bias.data()[c]);
        }
        out
    }

    pub fn unflatten(theta: &[f64], classes: usize, dim: usize) -> Result<Self> {
        if theta.len() != classes * (dim + 1) {
            return Err(Error::ShapeMismatch {
                op: "LinearHead::unflatten",
                expected: vec![classes * (dim + 1)],
                actual: vec![theta.len()],
            });
        }
        let mut w = Vec::with_capacity(classes * dim);
        let mut b = Vec::with_capacity(classes);
        for block in theta.chunks(dim + 1) {
            w.extend_from_slice(&block[..dim]);
            b.push(block[dim]);
        }
        Self::new(Tensor::new(vec![classes, dim], w)?, Tensor::vector(b))
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::softmax_in_place;

    fn small_config() -> EncoderConfig {
        EncoderConfig {
            input_dim: 6,
            hidden: vec![8, 7],
            representation_dim: 4,
            activation: Activation::Relu,
            normalize_representation: true,
            projection_hidden: None,
            projection_dim: 3,
        }
    }

    fn batch(n: usize, d: usize, seed: u64) -> Tensor {
        let mut r = rng::stream(seed, "test-input", 0);
        Tensor::new(vec![n, d], rng::normals(&mut r, n * d)).unwrap()
    }

    #[test]
    fn zero_network_is_guarded() {
        let mut params = ModelParams::init(&small_config(), 1).unwrap();
        params.tensors_mut().into_iter().for_each(|t| t.data_mut().fill(0.0));
        let z = params.encode(&batch(3, 6, 2)).unwrap();
        assert!(z.data().iter().all(|&v| v == 0.0));

        params.config.normalize_representation = false;
        let raw = params.encode(&batch(3, 6, 2)).unwrap();
        assert!(raw.data().iter().all(|&v| v == 0.0));
    }

    #[test]
    fn normalized_rows_have_unit_norm() {
        let params = ModelParams::init(&small_config(), 3).unwrap();
        let z = params.encode(&batch(5, 6, 4)).unwrap();
        for i in 0..5 {
            let n: f64 = z.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
        let p = params.project(&z).unwrap();
        assert_eq!(p.shape(), &[5, 3]);
        for i in 0..5 {
            let n: f64 = p.row(i).iter().map(|v| v * v).sum::<f64>().sqrt();
            assert!((n - 1.0).abs() < 1e-12);
        }
    }

    #[test]
    fn encode_is_deterministic() {
        let params = ModelParams::init(&small_config(), 5).unwrap();
        let x = batch(4, 6, 6);
        assert_eq!(params.encode(&x).unwrap(), params.encode(&x).unwrap());
        assert_eq!(ModelParams::init(&small_config(), 5).unwrap(), params);
    }

    #[test]
    fn encode_rejects_wrong_width() {
        let params = ModelParams::init(&small_config(), 5).unwrap();
        assert!(matches!(params.encode(&batch(2, 5, 0)), Err(Error::ShapeMismatch { .. })));
        assert!(params.project(&batch(2, 5, 0)).is_err());
    }

    #[test]
    fn identity_projection_normalizes() {
        let mut config = small_config();
        config.projection_dim = 4;
        let mut params = ModelParams::init(&config, 9).unwrap();
        for layer in &mut params.projection {
            layer.weight = Tensor::eye(4);
            layer.bias = Tensor::zeros(&[4]);
        }
        let z = Tensor::matrix(2, 4, vec![1.0, 2.0, 0.5, 3.0, 0.1, 0.2, 0.3, 0.4]).unwrap();
        let p = params.project(&z).unwrap();
        let expected = crate::tensor::l2_normalize(&z, NORM_EPSILON);
        for (a, b) in p.data().iter().zip(expected.data()) {
            assert!((a - b).abs() < 1e-15);
        }
    }

    #[test]
    fn projection_loss_reaches_encoder() {
        let params = ModelParams::init(&small_config(), 11).unwrap();
        let mut tape = Tape::new();
        let bound = params.bind(&mut tape, true);
        let x = tape.constant(batch(4, 6, 12));
        let z = params.encode_on(&mut tape, &bound, x).unwrap();
        let p = params.project_on(&mut tape, &bound, z).unwrap();
        let logits = tape.matmul_t(p, p).unwrap();
        let loss = tape.cross_entropy(logits, &[1, 0, 3, 2]).unwrap();
        let grads = tape.backprop(loss).unwrap();
        for &(w, _) in &bound.encoder {
            assert!(grads.get(w).norm() > 0.0);
        }
    }

    #[test]
    fn head_forward_cases() {
        let head = LinearHead::new(Tensor::eye(2), Tensor::zeros(&[2])).unwrap();
        let logits = head.forward(&Tensor::matrix(1, 2, vec![1.0, 0.0]).unwrap()).unwrap();
        assert_eq!(logits.data(), &[1.0, 0.0]);

        let zero = LinearHead::zeros(4, 3).unwrap();
        let mut row = zero.forward(&batch(1, 3, 1)).unwrap().into_data();
        softmax_in_place(&mut row);
        assert!(row.iter().all(|&p| (p - 0.25).abs() < 1e-15));

        // Class templates of equal norm.
        let w = crate::tensor::l2_normalize(&batch(5, 3, 7), NORM_EPSILON);
        let head = LinearHead::new(w.clone(), Tensor::zeros(&[5])).unwrap();
        for k in 0..5 {
            let z = Tensor::matrix(1, 3, w.row(k).iter().map(|v| v * 10.0).collect()).unwrap();
            let logits = head.forward(&z).unwrap();
            let best = (0..5).max_by(|&a, &b| logits.data()[a].total_cmp(&logits.data()[b])).unwrap();
            assert_eq!(best, k);
        }
        assert!(head.forward(&batch(1, 4, 0)).is_err());
    }

    #[test]
    fn head_flatten_round_trip() {
        let head = LinearHead::new(batch(3, 2, 1), Tensor::vector(vec![0.1, 0.2, 0.3])).unwrap();
        let theta = head.flatten();
        assert_eq!(theta[2], 0.1);
        assert_eq!(LinearHead::unflatten(&theta, 3, 2).unwrap(), head);
    }

    #[test]
    fn checkpoint_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("m.ckpt");
        let params = ModelParams::init(&small_config(), 21).unwrap();
        let configs = serde_json::json!({"note": "x", "tau": 0.5});
        checkpoint_save(&path, &params, configs.clone(), 21, 40).unwrap();
        let back = checkpoint_load(&path).unwrap();
        assert_eq!(back.params, params);
        assert_eq!(back.configs, configs);
        assert_eq!((back.seed, back.step), (21, 40));
    }

    #[test]
    fn checkpoint_shape_mismatch() {
        let params = ModelParams::init(&small_config(), 21).unwrap();
        let mut c = params.to_container(Value::Null, 0, 0);
        c.metadata.configs["encoder"]["representation_dim"] = serde_json::json!(5);
        let bytes = c.encode().unwrap();
        let err = ModelParams::from_container(Container::decode(&bytes).unwrap()).unwrap_err();
        assert!(matches!(err, Error::Metadata(_)));
    }
}
