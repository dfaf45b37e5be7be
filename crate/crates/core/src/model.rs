//! The conditional noise-prediction network.
//!
//! A small fully connected network over flattened latents. The input layer
//! sees the concatenation of the latent, sinusoidal time features, and the
//! conditioning embedding, so the gradient with respect to the condition is
//! well-defined and nontrivial. Hidden layers use SiLU; the output layer is
//! linear and matches the latent shape.
//!
//! Every forward pass, including plain inference, runs through the same graph
//! construction, so recomputing a prediction from identical inputs is
//! bit-identical no matter which caller asked for it.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::rng::{streams, CounterRng};

/// Classifier-free guidance parameters: `eps = eps_u + scale (eps_c - eps_u)`.
/// `scale = 1` is purely conditional; `scale = 0` ignores the condition.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct GuidanceConfig {
    pub scale: f64,
    pub enabled: bool,
}

impl GuidanceConfig {
    pub fn new(scale: f64, enabled: bool) -> Result<Self> {
        if !(scale >= 0.0) || !scale.is_finite() {
            return Err(Error::InvalidParam {
                name: "guidance scale",
                message: format!("must be finite and >= 0, got {scale}"),
            });
        }
        Ok(GuidanceConfig { scale, enabled })
    }

    pub fn disabled() -> Self {
        GuidanceConfig {
            scale: 1.0,
            enabled: false,
        }
    }
}

impl Default for GuidanceConfig {
    fn default() -> Self {
        GuidanceConfig {
            scale: 2.0,
            enabled: true,
        }
    }
}

/// Structural hyperparameters of a [`Denoiser`].
#[derive(Clone, Debug, PartialEq, Eq)]
pub struct DenoiserConfig {
    pub latent_len: usize,
    pub hidden_width: usize,
    pub hidden_layers: usize,
    pub time_feature_dim: usize,
    pub cond_dim: usize,
    pub t_train: usize,
}

impl DenoiserConfig {
    pub fn new(latent_len: usize, t_train: usize) -> Self {
        DenoiserConfig {
            latent_len,
            hidden_width: 256,
            hidden_layers: 3,
            time_feature_dim: 32,
            cond_dim: 16,
            t_train,
        }
    }

    fn validate(&self) -> Result<()> {
        let positive: [(&'static str, usize); 6] = [
            ("latent_len", self.latent_len),
            ("hidden_width", self.hidden_width),
            ("hidden_layers", self.hidden_layers),
            ("time_feature_dim", self.time_feature_dim),
            ("cond_dim", self.cond_dim),
            ("t_train", self.t_train),
        ];
        for (name, v) in positive {
            if v == 0 {
                return Err(Error::InvalidParam {
                    name,
                    message: String::from("must be positive"),
                });
            }
        }
        if self.time_feature_dim % 2 != 0 {
            return Err(Error::InvalidParam {
                name: "time_feature_dim",
                message: String::from("must be even (sin/cos pairs)"),
            });
        }
        Ok(())
    }

    pub fn input_len(&self) -> usize {
        self.latent_len + self.time_feature_dim + self.cond_dim
    }
}

#[derive(Clone, Debug)]
struct Linear {
    weight: Rc<Array>,
    bias: Rc<Array>,
}

/// The trainable noise predictor with its condition-embedding table and
/// learned null embedding.
#[derive(Clone, Debug)]
pub struct Denoiser {
    cfg: DenoiserConfig,
    layers: Vec<Linear>,
    embeddings: BTreeMap<String, Rc<Array>>,
    null_embedding: Rc<Array>,
}

/// Node handles for a denoiser bound onto a graph (as leaves when training,
/// constants otherwise).
pub struct BoundDenoiser {
    layer_nodes: Vec<(NodeId, NodeId)>,
    embed_nodes: BTreeMap<String, NodeId>,
    null_node: NodeId,
}

impl BoundDenoiser {
    pub fn embedding(&self, label: &str) -> Result<NodeId> {
        self.embed_nodes
            .get(label)
            .copied()
            .ok_or_else(|| Error::UnknownLabel {
                label: String::from(label),
            })
    }

    pub fn null(&self) -> NodeId {
        self.null_node
    }

    /// Canonical parameter node order: matches [`Denoiser::param_entries`].
    pub fn param_nodes(&self) -> Vec<NodeId> {
        let mut out = Vec::new();
        for (w, b) in &self.layer_nodes {
            out.push(*w);
            out.push(*b);
        }
        out.push(self.null_node);
        out.extend(self.embed_nodes.values().copied());
        out
    }
}

impl Denoiser {
    /// Seeded initialisation: weights uniform in `±1/sqrt(fan_in)`, biases
    /// zero, embeddings (including the null embedding) unit Gaussian × 0.1.
    pub fn init(cfg: DenoiserConfig, labels: &[String], seed: u64) -> Result<Self> {
        cfg.validate()?;
        let mut rng = CounterRng::new(seed, streams::MODEL_INIT);
        let mut dims = Vec::with_capacity(cfg.hidden_layers + 1);
        let mut fan_in = cfg.input_len();
        for _ in 0..cfg.hidden_layers {
            dims.push((cfg.hidden_width, fan_in));
            fan_in = cfg.hidden_width + cfg.cond_dim;
        }
        dims.push((cfg.latent_len, fan_in));
        let layers = dims
            .into_iter()
            .map(|(rows, cols)| {
                let bound = 1.0 / libm::sqrt(cols as f64);
                let data: Vec<f64> = (0..rows * cols)
                    .map(|_| rng.next_range(-bound, bound))
                    .collect();
                Linear {
                    weight: Rc::new(Array::from_vec(alloc::vec![rows, cols], data).expect("sized")),
                    bias: Rc::new(Array::zeros(alloc::vec![rows])),
                }
            })
            .collect();
        let mut embeddings = BTreeMap::new();
        for label in labels {
            if embeddings
                .insert(
                    label.clone(),
                    Rc::new(rng.normal_array(alloc::vec![cfg.cond_dim]).scale(0.1)),
                )
                .is_some()
            {
                return Err(Error::InvalidParam {
                    name: "labels",
                    message: format!("duplicate label '{label}'"),
                });
            }
        }
        let null_embedding = Rc::new(rng.normal_array(alloc::vec![cfg.cond_dim]).scale(0.1));
        Ok(Denoiser {
            cfg,
            layers,
            embeddings,
            null_embedding,
        })
    }

    /// Rebuild a denoiser from explicit parts (checkpoint loading).
    pub fn from_parts(
        cfg: DenoiserConfig,
        layers: Vec<(Array, Array)>,
        embeddings: Vec<(String, Array)>,
        null_embedding: Array,
    ) -> Result<Self> {
        cfg.validate()?;
        if layers.len() != cfg.hidden_layers + 1 {
            return Err(Error::Misaligned {
                what: "layer count",
                expected: cfg.hidden_layers + 1,
                got: layers.len(),
            });
        }
        let mut fan_in = cfg.input_len();
        let mut built = Vec::with_capacity(layers.len());
        for (i, (w, b)) in layers.into_iter().enumerate() {
            let rows = if i == cfg.hidden_layers {
                cfg.latent_len
            } else {
                cfg.hidden_width
            };
            if w.shape() != [rows, fan_in] {
                return Err(Error::ShapeMismatch {
                    op: "layer weight",
                    left: alloc::vec![rows, fan_in],
                    right: w.shape().to_vec(),
                });
            }
            if b.shape() != [rows] {
                return Err(Error::ShapeMismatch {
                    op: "layer bias",
                    left: alloc::vec![rows],
                    right: b.shape().to_vec(),
                });
            }
            built.push(Linear {
                weight: Rc::new(w),
                bias: Rc::new(b),
            });
            fan_in = rows + cfg.cond_dim;
        }
        let mut table = BTreeMap::new();
        for (label, row) in embeddings {
            if row.shape() != [cfg.cond_dim] {
                return Err(Error::ShapeMismatch {
                    op: "embedding row",
                    left: alloc::vec![cfg.cond_dim],
                    right: row.shape().to_vec(),
                });
            }
            table.insert(label, Rc::new(row));
        }
        if null_embedding.shape() != [cfg.cond_dim] {
            return Err(Error::ShapeMismatch {
                op: "null embedding",
                left: alloc::vec![cfg.cond_dim],
                right: null_embedding.shape().to_vec(),
            });
        }
        Ok(Denoiser {
            cfg,
            layers: built,
            embeddings: table,
            null_embedding: Rc::new(null_embedding),
        })
    }

    pub fn config(&self) -> &DenoiserConfig {
        &self.cfg
    }

    pub fn labels(&self) -> impl Iterator<Item = &str> {
        self.embeddings.keys().map(|s| s.as_str())
    }

    /// The embedding table row for a known label.
    pub fn embed_label(&self, label: &str) -> Result<Array> {
        self.embeddings
            .get(label)
            .map(|r| (**r).clone())
            .ok_or_else(|| Error::UnknownLabel {
                label: String::from(label),
            })
    }

    pub fn null_embedding(&self) -> Array {
        (*self.null_embedding).clone()
    }

    /// Sinusoidal time features. Angular frequencies are geometric between 1
    /// and 1/t_train, so feature periods cover one step up to the whole axis.
    pub fn time_features(&self, t: usize) -> Array {
        let pairs = self.cfg.time_feature_dim / 2;
        let tf = t as f64;
        let mut data = Vec::with_capacity(self.cfg.time_feature_dim);
        for i in 0..pairs {
            let exponent = if pairs > 1 {
                i as f64 / (pairs as f64 - 1.0)
            } else {
                0.0
            };
            let omega = libm::pow(self.cfg.t_train as f64, -exponent);
            data.push(libm::sin(omega * tf));
            data.push(libm::cos(omega * tf));
        }
        Array::vector(data)
    }

    /// Bind all parameters onto `g`, as differentiable leaves when `trainable`.
    pub fn bind(&self, g: &mut Graph, trainable: bool) -> BoundDenoiser {
        let place = |g: &mut Graph, a: &Rc<Array>| {
            if trainable {
                g.leaf(Rc::clone(a))
            } else {
                g.constant(Rc::clone(a))
            }
        };
        let layer_nodes = self
            .layers
            .iter()
            .map(|l| (place(g, &l.weight), place(g, &l.bias)))
            .collect();
        let embed_nodes = self
            .embeddings
            .iter()
            .map(|(k, v)| (k.clone(), place(g, v)))
            .collect();
        let null_node = place(g, &self.null_embedding);
        BoundDenoiser {
            layer_nodes,
            embed_nodes,
            null_node,
        }
    }

    /// Forward pass on a graph. `z` and `c` are graph nodes; `t` is a training
    /// step index.
    pub fn predict_on(
        &self,
        g: &mut Graph,
        bound: &BoundDenoiser,
        z: NodeId,
        t: usize,
        c: NodeId,
    ) -> Result<NodeId> {
        if g.value(z).len() != self.cfg.latent_len {
            return Err(Error::Misaligned {
                what: "latent length",
                expected: self.cfg.latent_len,
                got: g.value(z).len(),
            });
        }
        if g.value(c).len() != self.cfg.cond_dim {
            return Err(Error::Misaligned {
                what: "condition length",
                expected: self.cfg.cond_dim,
                got: g.value(c).len(),
            });
        }
        if t >= self.cfg.t_train {
            return Err(Error::InvalidParam {
                name: "step index",
                message: format!("t = {t} outside [0, {})", self.cfg.t_train),
            });
        }
        let tf = g.constant_array(self.time_features(t));
        // the condition is concatenated into every layer's input so it keeps
        // direct influence at all depths
        let mut h = g.concat(&[z, tf, c], 0)?;
        for (i, (w, b)) in bound.layer_nodes.iter().enumerate() {
            let wx = g.matmul(*w, h)?;
            h = g.add(wx, *b)?;
            if i + 1 < bound.layer_nodes.len() {
                h = g.tanh(h)?;
                h = g.concat(&[h, c], 0)?;
            }
        }
        Ok(h)
    }

    /// Classifier-free guided prediction on a graph. With guidance disabled
    /// this is exactly the conditional prediction.
    pub fn guided_on(
        &self,
        g: &mut Graph,
        bound: &BoundDenoiser,
        guidance: &GuidanceConfig,
        z: NodeId,
        t: usize,
        c: NodeId,
    ) -> Result<NodeId> {
        let eps_c = self.predict_on(g, bound, z, t, c)?;
        if !guidance.enabled {
            return Ok(eps_c);
        }
        let eps_u = self.predict_on(g, bound, z, t, bound.null())?;
        let diff = g.sub(eps_c, eps_u)?;
        let scaled = g.scalar_mul(guidance.scale, diff)?;
        g.add(eps_u, scaled)
    }

    /// Plain-array forward pass.
    pub fn predict_noise(&self, z_t: &Array, t: usize, c: &Array) -> Result<Array> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let zn = g.constant_array(z_t.clone());
        let cn = g.constant_array(c.clone());
        let out = self.predict_on(&mut g, &bound, zn, t, cn)?;
        Ok(g.value(out).clone())
    }

    /// Plain-array guided prediction.
    pub fn guided_predict(
        &self,
        guidance: &GuidanceConfig,
        z_t: &Array,
        t: usize,
        c: &Array,
    ) -> Result<Array> {
        let mut g = Graph::new();
        let bound = self.bind(&mut g, false);
        let zn = g.constant_array(z_t.clone());
        let cn = g.constant_array(c.clone());
        let out = self.guided_on(&mut g, &bound, guidance, zn, t, cn)?;
        Ok(g.value(out).clone())
    }

    /// Canonical (name, array) parameter listing: layer weights and biases in
    /// order, then the null embedding, then embedding rows sorted by label.
    pub fn param_entries(&self) -> Vec<(String, Rc<Array>)> {
        let mut out = Vec::new();
        for (i, l) in self.layers.iter().enumerate() {
            out.push((format!("layer{i}.weight"), Rc::clone(&l.weight)));
            out.push((format!("layer{i}.bias"), Rc::clone(&l.bias)));
        }
        out.push((String::from("null_embedding"), Rc::clone(&self.null_embedding)));
        for (label, row) in &self.embeddings {
            out.push((format!("embedding.{label}"), Rc::clone(row)));
        }
        out
    }

    /// Parameter arrays in canonical order.
    pub fn params(&self) -> Vec<Rc<Array>> {
        self.param_entries().into_iter().map(|(_, a)| a).collect()
    }

    /// Replace all parameters, given in canonical order with matching shapes.
    pub fn set_params(&mut self, params: Vec<Rc<Array>>) -> Result<()> {
        let expected = 2 * self.layers.len() + 1 + self.embeddings.len();
        if params.len() != expected {
            return Err(Error::Misaligned {
                what: "parameter count",
                expected,
                got: params.len(),
            });
        }
        let mut it = params.into_iter();
        for i in 0..self.layers.len() {
            let w = it.next().expect("counted");
            let b = it.next().expect("counted");
            if w.shape() != self.layers[i].weight.shape() || b.shape() != self.layers[i].bias.shape()
            {
                return Err(Error::ShapeMismatch {
                    op: "set_params layer",
                    left: self.layers[i].weight.shape().to_vec(),
                    right: w.shape().to_vec(),
                });
            }
            self.layers[i].weight = w;
            self.layers[i].bias = b;
        }
        let null = it.next().expect("counted");
        if null.shape() != [self.cfg.cond_dim] {
            return Err(Error::ShapeMismatch {
                op: "set_params null embedding",
                left: alloc::vec![self.cfg.cond_dim],
                right: null.shape().to_vec(),
            });
        }
        self.null_embedding = null;
        let labels: Vec<String> = self.embeddings.keys().cloned().collect();
        for label in labels {
            let row = it.next().expect("counted");
            if row.shape() != [self.cfg.cond_dim] {
                return Err(Error::ShapeMismatch {
                    op: "set_params embedding",
                    left: alloc::vec![self.cfg.cond_dim],
                    right: row.shape().to_vec(),
                });
            }
            self.embeddings.insert(label, row);
        }
        Ok(())
    }

    pub fn check_finite(&self, context: &'static str) -> Result<()> {
        for (_, p) in self.param_entries() {
            p.check_finite(context)?;
        }
        Ok(())
    }
}
