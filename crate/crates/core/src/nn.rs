//! Dense network kernel: parameter registry, MLPs with optional layer
//! normalization, reverse-mode gradients and Adam.
//!
//! Activations are row-major batches (`rows x features`). Weights have shape
//! `(out, in)` and biases `(1, out)`. An MLP's first layer may take several
//! input blocks, each either a dense batch or a row gather of a batch; this
//! is how the edge update reads node latents without materializing the
//! concatenation.

use std::fs;
use std::path::{Path, PathBuf};

use ndarray::{Array2, ArrayView2, Axis, Zip};
use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

pub const LAYER_NORM_EPS: f64 = 1e-5;
pub const CHECKPOINT_MAGIC: &[u8; 8] = b"MGNCKPT1";

#[derive(Debug, Error)]
pub enum NnError {
    #[error("non-finite gradient in parameter {0}")]
    NonFiniteGradient(String),
    #[error("shape mismatch for {name}: expected {expected:?}, found {found:?}")]
    Shape {
        name: String,
        expected: Vec<usize>,
        found: Vec<usize>,
    },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {detail}")]
    Format { path: PathBuf, detail: String },
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(pub usize);

#[derive(Clone, Debug, PartialEq)]
pub struct Param {
    pub name: String,
    pub value: Array2<f64>,
    pub grad: Array2<f64>,
    pub m: Array2<f64>,
    pub v: Array2<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Flat registry of every learnable tensor with gradient and Adam buffers.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    pub params: Vec<Param>,
    /// Number of Adam steps taken.
    pub step: u64,
}

impl ParamStore {
    pub fn new() -> ParamStore {
        ParamStore::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Array2<f64>) -> ParamId {
        let shape = value.raw_dim();
        self.params.push(Param {
            name: name.into(),
            value,
            grad: Array2::zeros(shape),
            m: Array2::zeros(shape),
            v: Array2::zeros(shape),
        });
        ParamId(self.params.len() - 1)
    }

    pub fn value(&self, id: ParamId) -> &Array2<f64> {
        &self.params[id.0].value
    }

    pub fn value_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].value
    }

    pub fn grad_mut(&mut self, id: ParamId) -> &mut Array2<f64> {
        &mut self.params[id.0].grad
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grad(&mut self) {
        for p in &mut self.params {
            p.grad.fill(0.0);
        }
    }

    /// One bias-corrected Adam update with learning rate `lr`; gradients are
    /// zeroed afterwards.
    pub fn adam_step(&mut self, lr: f64, cfg: &AdamConfig) -> Result<(), NnError> {
        if let Some(p) = self.params.iter().find(|p| p.grad.iter().any(|g| !g.is_finite())) {
            return Err(NnError::NonFiniteGradient(p.name.clone()));
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - cfg.beta1.powi(t);
        let c2 = 1.0 - cfg.beta2.powi(t);
        for p in &mut self.params {
            Zip::from(&mut p.value)
                .and(&mut p.grad)
                .and(&mut p.m)
                .and(&mut p.v)
                .for_each(|x, g, m, v| {
                    *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * *g;
                    *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * *g * *g;
                    let m_hat = *m / c1;
                    let v_hat = *v / c2;
                    *x -= lr * m_hat / (v_hat.sqrt() + cfg.eps);
                    *g = 0.0;
                });
        }
        Ok(())
    }
}

/// Uniform `[-1/sqrt(fan_in), 1/sqrt(fan_in)]` initialization.
pub fn uniform_init<R: Rng + ?Sized>(rows: usize, cols: usize, fan_in: usize, rng: &mut R) -> Array2<f64> {
    let bound = 1.0 / (fan_in as f64).sqrt();
    Array2::from_shape_simple_fn((rows, cols), || rng.gen_range(-bound..=bound))
}

/// Layer normalization over the feature axis with scalar gain and shift.
pub fn layer_norm(x: &Array2<f64>, alpha: f64, beta: f64, eps: f64) -> Array2<f64> {
    let (y, _, _) = layer_norm_forward(x, alpha, beta, eps);
    y
}

/// Returns the output, the standardized input and the per-row `1/sqrt(var + eps)`.
fn layer_norm_forward(x: &Array2<f64>, alpha: f64, beta: f64, eps: f64) -> (Array2<f64>, Array2<f64>, Vec<f64>) {
    let n = x.ncols() as f64;
    let mut xhat = x.clone();
    let mut inv = Vec::with_capacity(x.nrows());
    for mut row in xhat.rows_mut() {
        let mean = row.sum() / n;
        row.mapv_inplace(|v| v - mean);
        let var = row.iter().map(|v| v * v).sum::<f64>() / n;
        let r = 1.0 / (var + eps).sqrt();
        row.mapv_inplace(|v| v * r);
        inv.push(r);
    }
    let y = xhat.mapv(|v| v * alpha + beta);
    (y, xhat, inv)
}

/// One block of a first-layer input.
#[derive(Clone, Copy)]
pub enum Input<'a> {
    Dense(&'a Array2<f64>),
    /// Row `i` of the block is row `index[i]` of the source.
    Gather(&'a Array2<f64>, &'a [usize]),
}

impl Input<'_> {
    fn source(&self) -> &Array2<f64> {
        match self {
            Input::Dense(x) | Input::Gather(x, _) => x,
        }
    }

    fn rows(&self) -> usize {
        match self {
            Input::Dense(x) => x.nrows(),
            Input::Gather(_, idx) => idx.len(),
        }
    }
}

/// Adds `delta` row `i` into `out` row `index[i]`.
pub fn scatter_add(delta: &ArrayView2<f64>, index: &[usize], out: &mut Array2<f64>) {
    for (row, &k) in delta.rows().into_iter().zip(index) {
        let mut target = out.row_mut(k);
        target += &row;
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct MlpSpec {
    /// Width of each first-layer input block.
    pub inputs: Vec<usize>,
    pub hidden: Vec<usize>,
    pub output: usize,
    pub layer_norm: bool,
}

/// Multi-layer perceptron: ReLU after every hidden layer, linear output,
/// optional layer normalization last.
#[derive(Clone, Debug, PartialEq)]
pub struct Mlp {
    pub spec: MlpSpec,
    /// First-layer weights, one per input block.
    pub first: Vec<ParamId>,
    /// `(weight, bias)` of every layer after the first.
    pub rest: Vec<(ParamId, ParamId)>,
    pub first_bias: ParamId,
    /// `(alpha, beta)` as `1 x 1` parameters.
    pub norm: Option<(ParamId, ParamId)>,
}

/// Activations recorded by [`Mlp::forward`].
pub struct MlpCache {
    /// Post-ReLU activations of each hidden layer.
    hidden: Vec<Array2<f64>>,
    norm: Option<(Array2<f64>, Vec<f64>)>,
}

impl Mlp {
    pub fn new<R: Rng + ?Sized>(store: &mut ParamStore, name: &str, spec: MlpSpec, rng: &mut R) -> Mlp {
        let fan_in: usize = spec.inputs.iter().sum();
        let mut widths = spec.hidden.clone();
        widths.push(spec.output);
        let first_out = widths[0];
        let first = spec
            .inputs
            .iter()
            .enumerate()
            .map(|(k, &w)| store.add(format!("{name}.0.weight.{k}"), uniform_init(first_out, w, fan_in, rng)))
            .collect();
        let first_bias = store.add(format!("{name}.0.bias"), uniform_init(1, first_out, fan_in, rng));
        let rest = (1..widths.len())
            .map(|l| {
                let (i, o) = (widths[l - 1], widths[l]);
                let w = store.add(format!("{name}.{l}.weight"), uniform_init(o, i, i, rng));
                let b = store.add(format!("{name}.{l}.bias"), uniform_init(1, o, i, rng));
                (w, b)
            })
            .collect();
        let norm = spec.layer_norm.then(|| {
            (
                store.add(format!("{name}.norm.alpha"), Array2::ones((1, 1))),
                store.add(format!("{name}.norm.beta"), Array2::zeros((1, 1))),
            )
        });
        Mlp {
            spec,
            first,
            rest,
            first_bias,
            norm,
        }
    }

    pub fn forward(&self, store: &ParamStore, inputs: &[Input]) -> (Array2<f64>, MlpCache) {
        assert_eq!(inputs.len(), self.first.len(), "input block count");
        let rows = inputs[0].rows();
        let mut z = Array2::zeros((rows, store.value(self.first_bias).ncols()));
        for (input, &w) in inputs.iter().zip(&self.first) {
            let w = store.value(w);
            assert_eq!(input.source().ncols(), w.ncols(), "input block width");
            assert_eq!(input.rows(), rows, "input block rows");
            match input {
                Input::Dense(x) => z += &x.dot(&w.t()),
                Input::Gather(x, idx) => {
                    let projected = x.dot(&w.t());
                    for (mut row, &k) in z.rows_mut().into_iter().zip(idx.iter()) {
                        row += &projected.row(k);
                    }
                }
            }
        }
        z += store.value(self.first_bias);
        let mut hidden = Vec::with_capacity(self.rest.len());
        for &(w, b) in &self.rest {
            z.mapv_inplace(|v| v.max(0.0));
            let next = z.dot(&store.value(w).t()) + store.value(b);
            hidden.push(z);
            z = next;
        }
        let norm = self.norm.map(|(a, b)| {
            let (y, xhat, inv) = layer_norm_forward(&z, store.value(a)[[0, 0]], store.value(b)[[0, 0]], LAYER_NORM_EPS);
            z = y;
            (xhat, inv)
        });
        (z, MlpCache { hidden, norm })
    }

    /// Accumulates parameter gradients into `store` and returns the gradient
    /// with respect to each input block's source (gathers are scattered back).
    pub fn backward(&self, store: &mut ParamStore, inputs: &[Input], cache: MlpCache, dy: Array2<f64>) -> Vec<Array2<f64>> {
        let mut dz = dy;
        if let (Some((a, b)), Some((xhat, inv))) = (self.norm, cache.norm) {
            let alpha = store.value(a)[[0, 0]];
            store.grad_mut(a)[[0, 0]] += (&dz * &xhat).sum();
            store.grad_mut(b)[[0, 0]] += dz.sum();
            let n = dz.ncols() as f64;
            for ((mut d, xh), r) in dz.rows_mut().into_iter().zip(xhat.rows()).zip(inv) {
                d.mapv_inplace(|v| v * alpha);
                let mean_d = d.sum() / n;
                let mean_dx = d.iter().zip(xh.iter()).map(|(u, v)| u * v).sum::<f64>() / n;
                Zip::from(&mut d).and(&xh).for_each(|d, &x| *d = r * (*d - mean_d - x * mean_dx));
            }
        }
        for (l, &(w, b)) in self.rest.iter().enumerate().rev() {
            let h = &cache.hidden[l];
            *store.grad_mut(w) += &dz.t().dot(h);
            *store.grad_mut(b) += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
            let mut dh = dz.dot(store.value(w));
            Zip::from(&mut dh).and(h).for_each(|d, &h| {
                if h <= 0.0 {
                    *d = 0.0;
                }
            });
            dz = dh;
        }
        *store.grad_mut(self.first_bias) += &dz.sum_axis(Axis(0)).insert_axis(Axis(0));
        inputs
            .iter()
            .zip(&self.first)
            .map(|(input, &w)| match input {
                Input::Dense(x) => {
                    *store.grad_mut(w) += &dz.t().dot(*x);
                    dz.dot(store.value(w))
                }
                Input::Gather(x, idx) => {
                    let mut folded = Array2::zeros((x.nrows(), dz.ncols()));
                    scatter_add(&dz.view(), idx, &mut folded);
                    *store.grad_mut(w) += &folded.t().dot(*x);
                    folded.dot(store.value(w))
                }
            })
            .collect()
    }
}

/// Checkpoint file: magic, u64 header length, JSON header, then for every
/// parameter in registry order its value, first and second Adam moments as
/// little-endian f64, then a CRC-32 of everything before it.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CheckpointHeader {
    /// Free-form configuration echo (model, training, normalization).
    pub meta: serde_json::Value,
    pub adam_step: u64,
    pub params: Vec<(String, [usize; 2])>,
}

pub fn encode_checkpoint(store: &ParamStore, meta: serde_json::Value) -> Vec<u8> {
    let header = CheckpointHeader {
        meta,
        adam_step: store.step,
        params: store.params.iter().map(|p| (p.name.clone(), [p.value.nrows(), p.value.ncols()])).collect(),
    };
    let header = serde_json::to_vec(&header).expect("checkpoint header serializes");
    let mut out = Vec::with_capacity(24 + header.len() + 24 * store.num_scalars());
    out.extend_from_slice(CHECKPOINT_MAGIC);
    out.extend_from_slice(&(header.len() as u64).to_le_bytes());
    out.extend_from_slice(&header);
    for p in &store.params {
        for a in [&p.value, &p.m, &p.v] {
            for x in a.iter() {
                out.extend_from_slice(&x.to_le_bytes());
            }
        }
    }
    let crc = crc32fast::hash(&out);
    out.extend_from_slice(&crc.to_le_bytes());
    out
}

/// Parses a checkpoint into its header and a fresh store with zero gradients.
pub fn decode_checkpoint(bytes: &[u8], path: &Path) -> Result<(CheckpointHeader, ParamStore), NnError> {
    let fail = |detail: &str| NnError::Format {
        path: path.to_path_buf(),
        detail: detail.to_string(),
    };
    if bytes.len() < 20 || &bytes[..8] != CHECKPOINT_MAGIC {
        return Err(fail("not a checkpoint file"));
    }
    let stored = u32::from_le_bytes(bytes[bytes.len() - 4..].try_into().unwrap());
    if crc32fast::hash(&bytes[..bytes.len() - 4]) != stored {
        return Err(fail("checksum mismatch"));
    }
    let header_len = u64::from_le_bytes(bytes[8..16].try_into().unwrap()) as usize;
    let body = bytes.get(16 + header_len..bytes.len() - 4).ok_or_else(|| fail("truncated header"))?;
    let header: CheckpointHeader =
        serde_json::from_slice(&bytes[16..16 + header_len]).map_err(|e| fail(&format!("header: {e}")))?;
    let total: usize = header.params.iter().map(|(_, [r, c])| 3 * r * c).sum();
    if body.len() != 8 * total {
        return Err(fail("parameter data length does not match header"));
    }
    let mut values = body.chunks_exact(8).map(|c| f64::from_le_bytes(c.try_into().unwrap()));
    let mut store = ParamStore::new();
    for (name, [r, c]) in &header.params {
        let mut take = || Array2::from_shape_simple_fn((*r, *c), || values.next().unwrap());
        let (value, m, v) = (take(), take(), take());
        let id = store.add(name.clone(), value);
        store.params[id.0].m = m;
        store.params[id.0].v = v;
    }
    store.step = header.adam_step;
    Ok((header, store))
}

pub fn save_checkpoint(store: &ParamStore, meta: serde_json::Value, path: &Path) -> Result<(), NnError> {
    let bytes = encode_checkpoint(store, meta);
    let mut tmp = path.as_os_str().to_owned();
    tmp.push(".partial");
    let tmp = PathBuf::from(tmp);
    let io = |p: &Path| {
        let p = p.to_path_buf();
        move |source| NnError::Io { path: p, source }
    };
    fs::write(&tmp, bytes).map_err(io(&tmp))?;
    fs::rename(&tmp, path).map_err(io(path))
}

pub fn load_checkpoint(path: &Path) -> Result<(CheckpointHeader, ParamStore), NnError> {
    let bytes = fs::read(path).map_err(|source| NnError::Io {
        path: path.to_path_buf(),
        source,
    })?;
    decode_checkpoint(&bytes, path)
}

/// Copies values and Adam state from `loaded` into `target`, which must have
/// the same parameter names and shapes in the same order.
pub fn restore_into(target: &mut ParamStore, loaded: ParamStore) -> Result<(), NnError> {
    if target.params.len() != loaded.params.len() {
        return Err(NnError::Shape {
            name: "parameter count".into(),
            expected: vec![target.params.len()],
            found: vec![loaded.params.len()],
        });
    }
    for (t, l) in target.params.iter().zip(&loaded.params) {
        if t.name != l.name || t.value.shape() != l.value.shape() {
            return Err(NnError::Shape {
                name: format!("{} / {}", t.name, l.name),
                expected: t.value.shape().to_vec(),
                found: l.value.shape().to_vec(),
            });
        }
    }
    let step = loaded.step;
    for (t, l) in target.params.iter_mut().zip(loaded.params) {
        t.value = l.value;
        t.m = l.m;
        t.v = l.v;
        t.grad.fill(0.0);
    }
    target.step = step;
    Ok(())
}
