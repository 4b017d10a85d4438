//! The embedding network and its softmax head: a configurable feed-forward
//! stack with ReLU-6 hidden activations, a linear embedding layer, analytic
//! forward/backward passes, and a bit-exact checkpoint format.
//!
//! The embedding is *not* normalized during training; `normalize_embedding`
//! is applied at inference/evaluation time only.

use std::collections::BTreeMap;
use std::fs;
use std::io::Write;
use std::path::Path;

use crate::error::{Error, Result};
use crate::losses::ClassId;
use crate::numerics::{matvec, matvec_transpose, DenseMatrix, DenseVector, Prng};
use crate::scalar::Scalar;

pub const DEFAULT_EMBEDDING_DIM: usize = 64;

/// Network shape: input dimension, hidden widths (each followed by ReLU-6),
/// embedding dimension, and the class count of the softmax head.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ModelConfig {
    pub input_dim: usize,
    pub hidden_dims: Vec<usize>,
    pub embedding_dim: usize,
    pub num_classes: usize,
}

impl ModelConfig {
    pub fn new(
        input_dim: usize,
        hidden_dims: Vec<usize>,
        embedding_dim: usize,
        num_classes: usize,
    ) -> Result<Self> {
        let cfg = ModelConfig {
            input_dim,
            hidden_dims,
            embedding_dim,
            num_classes,
        };
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        if self.input_dim == 0 {
            return Err(Error::InvalidArgument("input_dim must be positive".into()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::InvalidArgument(
                "hidden dimensions must be positive".into(),
            ));
        }
        if self.embedding_dim == 0 {
            return Err(Error::InvalidArgument(
                "embedding_dim must be positive".into(),
            ));
        }
        if self.num_classes < 2 {
            return Err(Error::InvalidArgument(
                "num_classes must be at least 2".into(),
            ));
        }
        Ok(())
    }

    /// (rows, cols) of each stack layer: the hidden layers followed by the
    /// linear embedding projection.
    fn stack_shapes(&self) -> Vec<(usize, usize)> {
        let mut shapes = Vec::with_capacity(self.hidden_dims.len() + 1);
        let mut prev = self.input_dim;
        for &h in &self.hidden_dims {
            shapes.push((h, prev));
            prev = h;
        }
        shapes.push((self.embedding_dim, prev));
        shapes
    }
}

/// One affine layer.
#[derive(Debug, Clone, PartialEq)]
pub struct LayerParams<S: Scalar> {
    pub weight: DenseMatrix<S>,
    pub bias: DenseVector<S>,
}

impl<S: Scalar> LayerParams<S> {
    fn zeros(rows: usize, cols: usize) -> Self {
        LayerParams {
            weight: DenseMatrix::zeros(rows, cols),
            bias: DenseVector::zeros(rows),
        }
    }
}

/// All parameters of the network: the hidden/embedding stack plus the
/// softmax-head projection (`num_classes x embedding_dim` and its bias).
///
/// The same structure doubles as the gradient and the optimizer-velocity
/// carrier; `blocks`/`blocks_mut` expose the parameter arrays in a fixed,
/// documented order (stack weights/biases in depth order, then head).
#[derive(Debug, Clone, PartialEq)]
pub struct ModelParams<S: Scalar> {
    pub config: ModelConfig,
    pub stack: Vec<LayerParams<S>>,
    pub head: LayerParams<S>,
}

impl<S: Scalar> ModelParams<S> {
    pub fn zeros(config: &ModelConfig) -> Result<Self> {
        config.validate()?;
        let stack = config
            .stack_shapes()
            .into_iter()
            .map(|(r, c)| LayerParams::zeros(r, c))
            .collect();
        Ok(ModelParams {
            config: config.clone(),
            stack,
            head: LayerParams::zeros(config.num_classes, config.embedding_dim),
        })
    }

    pub fn zeros_like(&self) -> Self {
        ModelParams::zeros(&self.config).expect("existing config is valid")
    }

    pub fn blocks(&self) -> Vec<&[S]> {
        let mut out = Vec::with_capacity(2 * self.stack.len() + 2);
        for layer in &self.stack {
            out.push(layer.weight.values());
            out.push(layer.bias.values());
        }
        out.push(self.head.weight.values());
        out.push(self.head.bias.values());
        out
    }

    pub fn blocks_mut(&mut self) -> Vec<&mut [S]> {
        let mut out = Vec::with_capacity(2 * self.stack.len() + 2);
        for layer in &mut self.stack {
            let LayerParams { weight, bias } = layer;
            out.push(weight.values_mut());
            out.push(bias.values_mut());
        }
        let LayerParams { weight, bias } = &mut self.head;
        out.push(weight.values_mut());
        out.push(bias.values_mut());
        out
    }

    pub fn param_count(&self) -> usize {
        self.blocks().iter().map(|b| b.len()).sum()
    }

    /// Value at flat index `idx` (block order, then offset within block).
    pub fn flat_get(&self, mut idx: usize) -> S {
        for block in self.blocks() {
            if idx < block.len() {
                return block[idx];
            }
            idx -= block.len();
        }
        panic!("flat index out of range");
    }

    /// Adds `delta` at flat index `idx`.
    pub fn flat_add(&mut self, mut idx: usize, delta: S) {
        for block in self.blocks_mut() {
            if idx < block.len() {
                block[idx] = block[idx] + delta;
                return;
            }
            idx -= block.len();
        }
        panic!("flat index out of range");
    }

    /// `self += factor * other`, blockwise. Shapes must match.
    pub fn axpy(&mut self, factor: S, other: &ModelParams<S>) -> Result<()> {
        if self.config != other.config {
            return Err(Error::InvalidArgument(
                "parameter axpy: shapes differ".into(),
            ));
        }
        let other_blocks = other.blocks();
        for (mine, theirs) in self.blocks_mut().into_iter().zip(other_blocks) {
            for (a, b) in mine.iter_mut().zip(theirs) {
                *a = *a + factor * *b;
            }
        }
        Ok(())
    }

    pub fn check_finite(&self) -> Result<()> {
        for block in self.blocks() {
            if block.iter().any(|v| !v.is_finite()) {
                return Err(Error::Diverged(
                    "model parameters contain a non-finite value".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Everything the forward pass caches for backprop.
#[derive(Debug, Clone)]
pub struct ForwardTrace<S: Scalar> {
    pub input: DenseVector<S>,
    /// Pre-activations of each hidden layer.
    pub pre_activations: Vec<DenseVector<S>>,
    /// Post-ReLU-6 activations of each hidden layer.
    pub hidden_activations: Vec<DenseVector<S>>,
    pub embedding: DenseVector<S>,
}

#[inline]
fn relu6<S: Scalar>(z: S) -> S {
    let six = S::from_f64(6.0);
    z.max(S::zero()).min(six)
}

/// Subgradient of ReLU-6; defined as 0 at both kinks.
#[inline]
fn relu6_grad<S: Scalar>(z: S) -> S {
    let six = S::from_f64(6.0);
    if z > S::zero() && z < six {
        S::one()
    } else {
        S::zero()
    }
}

/// Initializes weights from a zero-mean normal with scale `1/sqrt(fan_in)`;
/// biases start at zero. Draw order is fixed (stack layers in depth order,
/// row-major, then the head) so a given seed always yields the same model.
pub fn init_params<S: Scalar>(config: &ModelConfig, rng: &mut Prng) -> Result<ModelParams<S>> {
    let mut params = ModelParams::zeros(config)?;
    for layer in params.stack.iter_mut().chain(std::iter::once(&mut params.head)) {
        let fan_in = layer.weight.cols() as f64;
        let std = 1.0 / fan_in.sqrt();
        for w in layer.weight.values_mut() {
            *w = S::from_f64(rng.next_normal() * std);
        }
    }
    Ok(params)
}

/// Forward pass. The returned embedding is the raw final linear layer output
/// (no normalization).
pub fn forward<S: Scalar>(params: &ModelParams<S>, x: &DenseVector<S>) -> Result<ForwardTrace<S>> {
    if x.dim() != params.config.input_dim {
        return Err(Error::InvalidArgument(format!(
            "forward: input has dimension {}, model expects {}",
            x.dim(),
            params.config.input_dim
        )));
    }
    let hidden_count = params.stack.len() - 1;
    let mut pre_activations = Vec::with_capacity(hidden_count);
    let mut hidden_activations = Vec::with_capacity(hidden_count);
    let mut current = x.clone();
    for layer in &params.stack[..hidden_count] {
        let mut z = matvec(&layer.weight, &current)?;
        z.axpy(S::one(), &layer.bias)?;
        let a = DenseVector::new(z.values().iter().map(|&v| relu6(v)).collect());
        pre_activations.push(z);
        hidden_activations.push(a.clone());
        current = a;
    }
    let embed_layer = &params.stack[hidden_count];
    let mut embedding = matvec(&embed_layer.weight, &current)?;
    embedding.axpy(S::one(), &embed_layer.bias)?;
    Ok(ForwardTrace {
        input: x.clone(),
        pre_activations,
        hidden_activations,
        embedding,
    })
}

/// Head logits for the requested class ids only: `z_k = W_k . emb + b_k`.
pub fn logits<S: Scalar>(
    params: &ModelParams<S>,
    embedding: &DenseVector<S>,
    label_subset: &[ClassId],
) -> Result<BTreeMap<ClassId, S>> {
    if label_subset.is_empty() {
        return Err(Error::InvalidArgument(
            "logits: label subset is empty".into(),
        ));
    }
    if embedding.dim() != params.config.embedding_dim {
        return Err(Error::InvalidArgument(format!(
            "logits: embedding has dimension {}, model expects {}",
            embedding.dim(),
            params.config.embedding_dim
        )));
    }
    let mut out = BTreeMap::new();
    for &k in label_subset {
        if k >= params.config.num_classes {
            return Err(Error::InvalidArgument(format!(
                "logits: class id {k} out of range (num_classes {})",
                params.config.num_classes
            )));
        }
        let row = params.head.weight.row(k);
        let mut z = params.head.bias.values()[k];
        for (w, e) in row.iter().zip(embedding.values()) {
            z = z + *w * *e;
        }
        out.insert(k, z);
    }
    Ok(out)
}

/// Accumulates into `grads` the exact gradient of any scalar whose gradient
/// with respect to the embedding and the logits is supplied.
pub fn backward_into<S: Scalar>(
    params: &ModelParams<S>,
    trace: &ForwardTrace<S>,
    grad_embedding: Option<&DenseVector<S>>,
    grad_logits: &BTreeMap<ClassId, S>,
    grads: &mut ModelParams<S>,
) -> Result<()> {
    if grads.config != params.config {
        return Err(Error::InvalidArgument(
            "backward: gradient shapes do not match the model".into(),
        ));
    }
    let emb_dim = params.config.embedding_dim;
    if trace.embedding.dim() != emb_dim {
        return Err(Error::InvalidArgument(
            "backward: trace does not match the model's embedding dimension".into(),
        ));
    }
    if let Some(g) = grad_embedding {
        if g.dim() != emb_dim {
            return Err(Error::InvalidArgument(format!(
                "backward: embedding gradient has dimension {}, expected {emb_dim}",
                g.dim()
            )));
        }
    }

    // Head: dW_k = g_k * emb, db_k = g_k; the embedding picks up g_k * W_k.
    let mut delta = match grad_embedding {
        Some(g) => g.clone(),
        None => DenseVector::zeros(emb_dim),
    };
    for (&k, &g) in grad_logits {
        if k >= params.config.num_classes {
            return Err(Error::InvalidArgument(format!(
                "backward: logit gradient for out-of-range class {k}"
            )));
        }
        let w_row = params.head.weight.row(k);
        for (d, w) in delta.values_mut().iter_mut().zip(w_row) {
            *d = *d + g * *w;
        }
        let gw_row = grads.head.weight.row_mut(k);
        for (gw, e) in gw_row.iter_mut().zip(trace.embedding.values()) {
            *gw = *gw + g * *e;
        }
        let gb = &mut grads.head.bias.values_mut()[k];
        *gb = *gb + g;
    }

    // Stack, from the embedding projection down to the first hidden layer.
    let hidden_count = params.stack.len() - 1;
    if trace.pre_activations.len() != hidden_count {
        return Err(Error::InvalidArgument(
            "backward: trace depth does not match the model".into(),
        ));
    }
    for j in (0..params.stack.len()).rev() {
        let layer_input = if j == 0 {
            &trace.input
        } else {
            &trace.hidden_activations[j - 1]
        };
        {
            let grad_layer = &mut grads.stack[j];
            for (r, &d) in delta.values().iter().enumerate() {
                let grow = grad_layer.weight.row_mut(r);
                for (gw, a) in grow.iter_mut().zip(layer_input.values()) {
                    *gw = *gw + d * *a;
                }
            }
            grad_layer.bias.axpy(S::one(), &delta)?;
        }
        if j > 0 {
            let mut prev = matvec_transpose(&params.stack[j].weight, &delta)?;
            for (p, z) in prev
                .values_mut()
                .iter_mut()
                .zip(trace.pre_activations[j - 1].values())
            {
                *p = *p * relu6_grad(*z);
            }
            delta = prev;
        }
    }
    Ok(())
}

/// Like `backward_into` but returns a fresh gradient structure.
pub fn backward<S: Scalar>(
    params: &ModelParams<S>,
    trace: &ForwardTrace<S>,
    grad_embedding: Option<&DenseVector<S>>,
    grad_logits: &BTreeMap<ClassId, S>,
) -> Result<ModelParams<S>> {
    let mut grads = params.zeros_like();
    backward_into(params, trace, grad_embedding, grad_logits, &mut grads)?;
    Ok(grads)
}

/// Scales an embedding to unit L2 norm. Inference-time only.
pub fn normalize_embedding<S: Scalar>(embedding: &DenseVector<S>) -> Result<DenseVector<S>> {
    let norm = embedding.norm();
    if norm == S::zero() {
        return Err(Error::DegenerateInput(
            "cannot normalize a zero embedding".into(),
        ));
    }
    Ok(DenseVector::new(
        embedding.values().iter().map(|&v| v / norm).collect(),
    ))
}

const CHECKPOINT_MAGIC: &str = "graphemb-checkpoint v1";

/// Writes a checkpoint: a short ASCII header (format version and the model
/// shape), a `data` marker line, then every parameter block in `blocks()`
/// order as little-endian f64. Round-trips are bit-exact.
pub fn save_checkpoint<S: Scalar>(params: &ModelParams<S>, path: &Path) -> Result<()> {
    let cfg = &params.config;
    let hidden = if cfg.hidden_dims.is_empty() {
        "-".to_string()
    } else {
        cfg.hidden_dims
            .iter()
            .map(|d| d.to_string())
            .collect::<Vec<_>>()
            .join(",")
    };
    let mut out = Vec::new();
    writeln!(out, "{CHECKPOINT_MAGIC}")?;
    writeln!(out, "input_dim {}", cfg.input_dim)?;
    writeln!(out, "hidden_dims {hidden}")?;
    writeln!(out, "embedding_dim {}", cfg.embedding_dim)?;
    writeln!(out, "num_classes {}", cfg.num_classes)?;
    writeln!(out, "data")?;
    for block in params.blocks() {
        for v in block {
            out.extend_from_slice(&v.as_f64().to_le_bytes());
        }
    }
    fs::write(path, out)?;
    Ok(())
}

pub fn load_checkpoint<S: Scalar>(path: &Path) -> Result<ModelParams<S>> {
    let bytes = fs::read(path)?;
    let mut offset = 0usize;
    let mut lines = Vec::new();
    // Header lines are ASCII, terminated by the `data` marker.
    loop {
        let rest = &bytes[offset..];
        let nl = rest.iter().position(|&b| b == b'\n').ok_or_else(|| Error::Schema(
            "checkpoint: missing data marker".into(),
        ))?;
        let line = std::str::from_utf8(&rest[..nl])
            .map_err(|_| Error::Schema("checkpoint: non-UTF-8 header".into()))?
            .to_string();
        offset += nl + 1;
        if line == "data" {
            break;
        }
        lines.push(line);
        if lines.len() > 16 {
            return Err(Error::Schema("checkpoint: header too long".into()));
        }
    }
    if lines.first().map(String::as_str) != Some(CHECKPOINT_MAGIC) {
        return Err(Error::Schema(format!(
            "checkpoint: unsupported format header {:?}",
            lines.first()
        )));
    }
    let mut fields = BTreeMap::new();
    for line in &lines[1..] {
        let (key, value) = line.split_once(' ').ok_or_else(|| {
            Error::Schema(format!("checkpoint: malformed header line '{line}'"))
        })?;
        fields.insert(key.to_string(), value.to_string());
    }
    let get = |key: &str| -> Result<&String> {
        fields
            .get(key)
            .ok_or_else(|| Error::Schema(format!("checkpoint: missing header field '{key}'")))
    };
    let parse_usize = |key: &str| -> Result<usize> {
        get(key)?
            .parse::<usize>()
            .map_err(|_| Error::Schema(format!("checkpoint: invalid value for '{key}'")))
    };
    let hidden_raw = get("hidden_dims")?;
    let hidden_dims = if hidden_raw == "-" {
        Vec::new()
    } else {
        hidden_raw
            .split(',')
            .map(|s| {
                s.parse::<usize>()
                    .map_err(|_| Error::Schema("checkpoint: invalid hidden_dims".into()))
            })
            .collect::<Result<Vec<_>>>()?
    };
    let config = ModelConfig::new(
        parse_usize("input_dim")?,
        hidden_dims,
        parse_usize("embedding_dim")?,
        parse_usize("num_classes")?,
    )?;
    let mut params = ModelParams::<S>::zeros(&config)?;
    let expected = params.param_count() * 8;
    let payload = &bytes[offset..];
    if payload.len() != expected {
        return Err(Error::Schema(format!(
            "checkpoint: payload holds {} bytes, model shape needs {expected}",
            payload.len()
        )));
    }
    let mut cursor = 0usize;
    for block in params.blocks_mut() {
        for v in block.iter_mut() {
            let mut raw = [0u8; 8];
            raw.copy_from_slice(&payload[cursor..cursor + 8]);
            *v = S::from_f64(f64::from_le_bytes(raw));
            cursor += 8;
        }
    }
    Ok(params)
}
