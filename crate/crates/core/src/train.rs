//! Denoiser training and the Adam optimizer shared with the rewrite loop.

use alloc::collections::BTreeMap;
use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::{Graph, NodeId};
use crate::model::Denoiser;
use crate::rng::{streams, CounterRng};
use crate::schedule::NoiseSchedule;

/// Adam hyperparameters. Defaults are the textbook constants; only the
/// learning rate varies between call sites.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        AdamConfig {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Optimizer state: first/second moment estimates per parameter plus the step
/// counter driving bias correction.
#[derive(Clone, Debug)]
pub struct AdamState {
    cfg: AdamConfig,
    step_count: u64,
    m: Vec<Array>,
    v: Vec<Array>,
}

impl AdamState {
    pub fn new(cfg: AdamConfig, params: &[Rc<Array>]) -> Self {
        let m = params
            .iter()
            .map(|p| Array::zeros(p.shape().to_vec()))
            .collect();
        let v = params
            .iter()
            .map(|p| Array::zeros(p.shape().to_vec()))
            .collect();
        AdamState {
            cfg,
            step_count: 0,
            m,
            v,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One bias-corrected Adam update. Returns the new parameter arrays;
    /// inputs are left untouched.
    pub fn step(&mut self, params: &[Rc<Array>], grads: &[Array]) -> Result<Vec<Rc<Array>>> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Misaligned {
                what: "adam parameter count",
                expected: self.m.len(),
                got: params.len().max(grads.len()),
            });
        }
        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = 1.0 - libm::pow(self.cfg.beta1, t as f64);
        let bc2 = 1.0 - libm::pow(self.cfg.beta2, t as f64);
        let mut out = Vec::with_capacity(params.len());
        for i in 0..params.len() {
            let p = &params[i];
            let g = &grads[i];
            if p.shape() != g.shape() {
                return Err(Error::ShapeMismatch {
                    op: "adam_step",
                    left: p.shape().to_vec(),
                    right: g.shape().to_vec(),
                });
            }
            let mut new_p = Vec::with_capacity(p.len());
            {
                let m = &mut self.m[i];
                let v = &mut self.v[i];
                let mut mdata = m.data().to_vec();
                let mut vdata = v.data().to_vec();
                for j in 0..p.len() {
                    let gj = g.data()[j];
                    mdata[j] = self.cfg.beta1 * mdata[j] + (1.0 - self.cfg.beta1) * gj;
                    vdata[j] = self.cfg.beta2 * vdata[j] + (1.0 - self.cfg.beta2) * gj * gj;
                    let m_hat = mdata[j] / bc1;
                    let v_hat = vdata[j] / bc2;
                    new_p.push(p.data()[j] - self.cfg.lr * m_hat / (libm::sqrt(v_hat) + self.cfg.eps));
                }
                *m = Array::from_vec(p.shape().to_vec(), mdata)?;
                *v = Array::from_vec(p.shape().to_vec(), vdata)?;
            }
            out.push(Rc::new(Array::from_vec(p.shape().to_vec(), new_p)?));
        }
        Ok(out)
    }
}

/// Denoiser training configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct TrainConfig {
    pub epochs: usize,
    pub batch_size: usize,
    pub lr: f64,
    pub seed: u64,
    /// Probability of replacing the condition with the null embedding for a
    /// sample, which is what trains the null embedding for guidance.
    pub cond_dropout: f64,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            epochs: 200,
            batch_size: 64,
            lr: 1e-3,
            seed: 0,
            cond_dropout: 0.1,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.epochs == 0 || self.batch_size == 0 {
            return Err(Error::InvalidParam {
                name: "train config",
                message: String::from("epochs and batch_size must be positive"),
            });
        }
        if !(self.lr > 0.0) {
            return Err(Error::InvalidParam {
                name: "train lr",
                message: format!("must be positive, got {}", self.lr),
            });
        }
        if !(0.0..=1.0).contains(&self.cond_dropout) {
            return Err(Error::InvalidParam {
                name: "cond_dropout",
                message: format!("must be in [0, 1], got {}", self.cond_dropout),
            });
        }
        Ok(())
    }
}

/// Build the DDPM objective on a graph: corrupt `z0` to step `t` with `noise`
/// and penalise the mean squared error between `noise` and the prediction.
fn ddpm_loss_on(
    m: &Denoiser,
    g: &mut Graph,
    bound: &crate::model::BoundDenoiser,
    s: &NoiseSchedule,
    z0: &Array,
    c: NodeId,
    t: usize,
    noise: &Array,
) -> Result<NodeId> {
    let z_t = s.forward_diffuse(z0, t, noise)?;
    let z_node = g.constant_array(z_t);
    let eps_hat = m.predict_on(g, bound, z_node, t, c)?;
    let target = g.constant_array(noise.clone());
    g.mean_sq_diff(target, eps_hat)
}

/// Scalar DDPM loss for one sample.
pub fn ddpm_loss(
    m: &Denoiser,
    s: &NoiseSchedule,
    z0: &Array,
    c: &Array,
    t: usize,
    noise: &Array,
) -> Result<f64> {
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let c_node = g.constant_array(c.clone());
    let loss = ddpm_loss_on(m, &mut g, &bound, s, z0, c_node, t, noise)?;
    g.value(loss).item()
}

/// Train the denoiser on `(latent, label)` pairs. Timesteps are drawn
/// uniformly and noise freshly per sample from the seeded counter generator,
/// so runs replay bit-identically. Returns the per-epoch mean loss curve.
pub fn train(
    m: &mut Denoiser,
    s: &NoiseSchedule,
    dataset: &[(Array, String)],
    cfg: &TrainConfig,
) -> Result<Vec<f64>> {
    cfg.validate()?;
    if dataset.is_empty() {
        return Err(Error::InvalidParam {
            name: "dataset",
            message: String::from("must not be empty"),
        });
    }
    for (_, label) in dataset {
        // fail fast on labels missing from the embedding table
        m.embed_label(label)?;
    }
    let mut rng = CounterRng::new(cfg.seed, streams::TRAIN);
    let mut params = m.params();
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &params);
    let mut curve = Vec::with_capacity(cfg.epochs);
    let mut order: Vec<usize> = (0..dataset.len()).collect();

    for epoch in 0..cfg.epochs {
        rng.shuffle(&mut order);
        let mut epoch_loss = 0.0;
        for batch in order.chunks(cfg.batch_size) {
            let mut grad_acc: Vec<Vec<f64>> =
                params.iter().map(|p| alloc::vec![0.0; p.len()]).collect();
            for &idx in batch {
                let (latent, label) = &dataset[idx];
                let t = rng.next_index(s.t_train());
                let dropped = rng.next_f64() < cfg.cond_dropout;
                let noise = rng.normal_array(alloc::vec![latent.len()]);

                let mut g = Graph::new();
                let bound = m.bind(&mut g, true);
                let c_node = if dropped {
                    bound.null()
                } else {
                    bound.embedding(label)?
                };
                let loss_node = ddpm_loss_on(m, &mut g, &bound, s, latent, c_node, t, &noise)?;
                let loss = g.value(loss_node).item()?;
                if !loss.is_finite() {
                    return Err(Error::NonFinite {
                        context: "training loss",
                        index: Some(epoch),
                    });
                }
                epoch_loss += loss;
                let grads = g.backward(loss_node)?;
                let nodes = bound.param_nodes();
                for (slot, node) in nodes.iter().enumerate() {
                    if let Some(grad) = grads.get(node) {
                        for (acc, &gv) in grad_acc[slot].iter_mut().zip(grad.data()) {
                            *acc += gv;
                        }
                    }
                }
            }
            let scale = 1.0 / batch.len() as f64;
            let batch_grads: Vec<Array> = grad_acc
                .into_iter()
                .zip(&params)
                .map(|(mut ga, p)| {
                    for v in ga.iter_mut() {
                        *v *= scale;
                    }
                    Array::from_vec(p.shape().to_vec(), ga)
                })
                .collect::<Result<_>>()?;
            params = adam.step(&params, &batch_grads)?;
            m.set_params(params.clone())?;
        }
        m.check_finite("model parameters after epoch")?;
        curve.push(epoch_loss / dataset.len() as f64);
    }
    Ok(curve)
}

/// Map backward() leaf gradients into canonical parameter order, with zeros
/// for untouched parameters.
pub fn grads_in_param_order(
    bound_nodes: &[NodeId],
    params: &[Rc<Array>],
    grads: &BTreeMap<NodeId, Array>,
) -> Vec<Array> {
    bound_nodes
        .iter()
        .zip(params)
        .map(|(node, p)| {
            grads
                .get(node)
                .cloned()
                .unwrap_or_else(|| Array::zeros(p.shape().to_vec()))
        })
        .collect()
}
