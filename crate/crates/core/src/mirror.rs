//! Per-timestep prompt redescription during reconstruction, plus the
//! single-shared-embedding alignment baseline.
//!
//! At each transition the conditioning embedding is optimized so that the
//! latent sampled under it lands on the recorded inversion latent. The
//! gradient flows through exactly one sample step (the candidate latent as a
//! function of the condition at that step); the chain before it is frozen.

use alloc::format;
use alloc::rc::Rc;
use alloc::string::String;
use alloc::vec::Vec;

use crate::array::Array;
use crate::error::{Error, Result};
use crate::graph::Graph;
use crate::invert::{relative_displacement, Trajectory};
use crate::model::{Denoiser, GuidanceConfig};
use crate::schedule::NoiseSchedule;
use crate::train::{AdamConfig, AdamState};

/// Rewrite-loop configuration.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RewriteConfig {
    /// Weight on the rewrite loss in the update objective.
    pub lambda: f64,
    /// Inner optimization iterations per timestep.
    pub inner_steps: usize,
    /// Adam learning rate for the condition embedding.
    pub lr: f64,
    /// Start each timestep from the previous timestep's rewritten embedding.
    pub warm_start: bool,
    /// Replace Adam with a literal single gradient step
    /// `c <- c - lambda * grad`, for checking the update rule directly.
    pub optimizer_bypass: bool,
}

impl Default for RewriteConfig {
    fn default() -> Self {
        RewriteConfig {
            lambda: 1.0,
            inner_steps: 10,
            lr: 1e-3,
            warm_start: true,
            optimizer_bypass: false,
        }
    }
}

impl RewriteConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lambda >= 0.0) || !self.lambda.is_finite() {
            return Err(Error::InvalidParam {
                name: "lambda",
                message: format!("must be finite and >= 0, got {}", self.lambda),
            });
        }
        if self.inner_steps < 1 {
            return Err(Error::InvalidParam {
                name: "inner_steps",
                message: String::from("must be at least 1"),
            });
        }
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(Error::InvalidParam {
                name: "rewrite lr",
                message: format!("must be positive, got {}", self.lr),
            });
        }
        Ok(())
    }
}

/// Per-timestep conditioning embeddings produced by redescription, ordered
/// from the highest transition down, with the rewrite-loss values observed at
/// each timestep.
#[derive(Clone, Debug)]
pub struct PromptTrack {
    pub embeddings: Vec<Array>,
    pub initial_losses: Vec<f64>,
    pub final_losses: Vec<f64>,
}

impl PromptTrack {
    pub fn len(&self) -> usize {
        self.embeddings.len()
    }

    pub fn is_empty(&self) -> bool {
        self.embeddings.is_empty()
    }

    /// A track that repeats one embedding at every timestep.
    pub fn constant(c: &Array, len: usize) -> Self {
        PromptTrack {
            embeddings: alloc::vec![c.clone(); len],
            initial_losses: alloc::vec![0.0; len],
            final_losses: alloc::vec![0.0; len],
        }
    }

    pub fn validate(&self, expected: usize) -> Result<()> {
        if self.embeddings.len() != expected {
            return Err(Error::Misaligned {
                what: "prompt track",
                expected,
                got: self.embeddings.len(),
            });
        }
        for e in &self.embeddings {
            e.check_finite("prompt track embedding")?;
        }
        if self.final_losses.iter().any(|l| *l < 0.0) {
            return Err(Error::InvalidParam {
                name: "prompt track losses",
                message: String::from("negative rewrite loss"),
            });
        }
        Ok(())
    }
}

/// Mean squared difference between an inversion latent and a sampled
/// candidate.
pub fn rewrite_loss(z_target: &Array, z_candidate: &Array) -> Result<f64> {
    let mut g = Graph::new();
    let a = g.constant_array(z_target.clone());
    let b = g.constant_array(z_candidate.clone());
    let l = g.mean_sq_diff(a, b)?;
    g.value(l).item()
}

/// Outcome of one redescription timestep.
#[derive(Clone, Debug)]
pub struct StepOutcome {
    pub c_rewrite: Array,
    pub z_next: Array,
    pub initial_loss: f64,
    pub final_loss: f64,
    /// False when no candidate improved on the starting embedding.
    pub improved: bool,
}

struct Candidate {
    loss: f64,
    c: Array,
    z: Array,
}

/// Evaluate the rewrite objective at `c`, returning the loss, the candidate
/// latent sampled under `c`, and the gradient of `lambda * loss` w.r.t. `c`.
fn eval_rewrite(
    m: &Denoiser,
    s: &NoiseSchedule,
    guidance: &GuidanceConfig,
    z_cur: &Array,
    target: &Array,
    transition: usize,
    c: &Array,
    lambda: f64,
) -> Result<(f64, Array, Array)> {
    let tr = s.transition(transition)?;
    let mut g = Graph::new();
    let bound = m.bind(&mut g, false);
    let z_node = g.constant_array(z_cur.clone());
    let c_node = g.leaf(Rc::new(c.clone()));
    let eps = m.guided_on(&mut g, &bound, guidance, z_node, tr.t_eval, c_node)?;
    let z_next = s.step_levels_on(&mut g, z_node, eps, tr.hi, tr.lo)?;
    let target_node = g.constant_array(target.clone());
    let loss_node = g.mean_sq_diff(target_node, z_next)?;
    let objective = g.scalar_mul(lambda, loss_node)?;
    let loss = g.value(loss_node).item()?;
    let z_val = g.value(z_next).clone();
    let grads = g.backward(objective)?;
    let grad_c = grads
        .get(&c_node)
        .cloned()
        .unwrap_or_else(|| Array::zeros(alloc::vec![c.len()]));
    grad_c.check_finite("rewrite gradient")?;
    Ok((loss, z_val, grad_c))
}

/// One timestep of prompt redescription: repeat `inner_steps` times
/// { sample a candidate under the current embedding, update the embedding on
/// the rewrite gradient }, then return the best-seen `(c, z)` pair (or, in
/// optimizer-bypass mode, the literal last update).
pub fn redescribe_step(
    m: &Denoiser,
    s: &NoiseSchedule,
    guidance: &GuidanceConfig,
    traj: &Trajectory,
    transition: usize,
    z_cur: &Array,
    c_init: &Array,
    cfg: &RewriteConfig,
) -> Result<StepOutcome> {
    cfg.validate()?;
    let target = &traj.latents[transition];
    let c_params = alloc::vec![Rc::new(c_init.clone())];
    let mut adam = AdamState::new(AdamConfig::with_lr(cfg.lr), &c_params);
    let mut c = c_init.clone();
    let mut best: Option<Candidate> = None;
    let mut initial_loss = 0.0;

    for k in 0..=cfg.inner_steps {
        let (loss, z_next, grad) =
            eval_rewrite(m, s, guidance, z_cur, target, transition, &c, cfg.lambda)?;
        if k == 0 {
            initial_loss = loss;
        }
        let better = best.as_ref().map_or(true, |b| loss < b.loss);
        if better {
            best = Some(Candidate {
                loss,
                c: c.clone(),
                z: z_next,
            });
        }
        if k == cfg.inner_steps {
            break;
        }
        c = if cfg.optimizer_bypass {
            c.sub(&grad)?
        } else {
            let updated = adam.step(&alloc::vec![Rc::new(c.clone())], &[grad])?;
            (*updated[0]).clone()
        };
    }

    if cfg.optimizer_bypass {
        // literal update semantics: report the final iterate, not the best
        let (loss, z_next, _) =
            eval_rewrite(m, s, guidance, z_cur, target, transition, &c, cfg.lambda)?;
        return Ok(StepOutcome {
            c_rewrite: c,
            z_next,
            initial_loss,
            final_loss: loss,
            improved: loss < initial_loss,
        });
    }

    let best = best.expect("at least one candidate evaluated");
    Ok(StepOutcome {
        c_rewrite: best.c,
        z_next: best.z,
        initial_loss,
        final_loss: best.loss,
        improved: best.loss < initial_loss,
    })
}

/// Mirror reconstruction outcome.
#[derive(Clone, Debug)]
pub struct MirrorReconstruction {
    pub z0_rec: Array,
    pub track: PromptTrack,
    pub deviations: Vec<f64>,
    pub rel_displacement: f64,
}

/// Full redescription loop over all transitions, top down.
pub fn mirror_reconstruct(
    m: &Denoiser,
    s: &NoiseSchedule,
    guidance: &GuidanceConfig,
    traj: &Trajectory,
    cfg: &RewriteConfig,
) -> Result<MirrorReconstruction> {
    cfg.validate()?;
    traj.schedule.matches(s)?;
    traj.validate()?;
    let k = s.num_transitions();
    let mut z = traj.z_top().clone();
    let mut carried = traj.condition.clone();
    let mut track = PromptTrack {
        embeddings: Vec::with_capacity(k),
        initial_losses: Vec::with_capacity(k),
        final_losses: Vec::with_capacity(k),
    };
    let mut deviations = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let c_init = if cfg.warm_start {
            carried.clone()
        } else {
            traj.condition.clone()
        };
        let out = redescribe_step(m, s, guidance, traj, i, &z, &c_init, cfg)?;
        z = out.z_next;
        carried = out.c_rewrite.clone();
        deviations.push(z.sub(&traj.latents[i])?.norm());
        track.embeddings.push(out.c_rewrite);
        track.initial_losses.push(out.initial_loss);
        track.final_losses.push(out.final_loss);
    }
    let rel_displacement = relative_displacement(traj.z0(), &z)?;
    Ok(MirrorReconstruction {
        z0_rec: z,
        track,
        deviations,
        rel_displacement,
    })
}

/// Instrumented mirror pass that replays the trajectory's cached noise
/// predictions instead of re-evaluating the model. The candidate latent is
/// then constant in the embedding, so no optimization can move it: the
/// embedding stays at its starting value and the reported losses are the pure
/// step-replay residuals (exactly zero on a replay-consistent trajectory).
/// This separates discretization displacement from programming error.
pub fn mirror_reconstruct_replay(
    s: &NoiseSchedule,
    traj: &Trajectory,
    cfg: &RewriteConfig,
) -> Result<MirrorReconstruction> {
    cfg.validate()?;
    traj.schedule.matches(s)?;
    traj.validate()?;
    let k = s.num_transitions();
    let mut z = traj.z_top().clone();
    let mut track = PromptTrack {
        embeddings: Vec::with_capacity(k),
        initial_losses: Vec::with_capacity(k),
        final_losses: Vec::with_capacity(k),
    };
    let mut deviations = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let tr = s.transition(i)?;
        let cand = s.step_levels(&z, &traj.eps_cache[i], tr.hi, tr.lo)?;
        let loss = rewrite_loss(&traj.latents[i], &cand)?;
        z = cand;
        deviations.push(z.sub(&traj.latents[i])?.norm());
        track.embeddings.push(traj.condition.clone());
        track.initial_losses.push(loss);
        track.final_losses.push(loss);
    }
    let rel_displacement = relative_displacement(traj.z0(), &z)?;
    Ok(MirrorReconstruction {
        z0_rec: z,
        track,
        deviations,
        rel_displacement,
    })
}

/// Simple-alignment outcome.
#[derive(Clone, Debug)]
pub struct AlignReconstruction {
    pub z0_rec: Array,
    pub c_shared: Array,
    pub deviations: Vec<f64>,
    pub rel_displacement: f64,
    /// Summed teacher-forced rewrite loss per outer iteration.
    pub loss_history: Vec<f64>,
    /// Gradient norm per outer iteration.
    pub grad_norms: Vec<f64>,
}

/// Ablation baseline: optimize ONE shared embedding against the summed
/// rewrite loss over all timesteps (each term teacher-forced from the
/// recorded trajectory), then sample the whole chain once with it.
pub fn simple_align_reconstruct(
    m: &Denoiser,
    s: &NoiseSchedule,
    guidance: &GuidanceConfig,
    traj: &Trajectory,
    cfg: &RewriteConfig,
    outer_steps: usize,
) -> Result<AlignReconstruction> {
    cfg.validate()?;
    traj.schedule.matches(s)?;
    traj.validate()?;
    if outer_steps == 0 {
        return Err(Error::InvalidParam {
            name: "outer_steps",
            message: String::from("must be at least 1"),
        });
    }
    let k = s.num_transitions();
    let mut c = traj.condition.clone();
    let mut adam = AdamState::new(
        AdamConfig::with_lr(cfg.lr),
        &alloc::vec![Rc::new(c.clone())],
    );
    let mut best: Option<(f64, Array)> = None;
    let mut loss_history = Vec::with_capacity(outer_steps);
    let mut grad_norms = Vec::with_capacity(outer_steps);

    for _ in 0..outer_steps {
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let c_node = g.leaf(Rc::new(c.clone()));
        let mut total: Option<crate::graph::NodeId> = None;
        for i in (0..k).rev() {
            let tr = s.transition(i)?;
            let z_node = g.constant_array(traj.latents[i + 1].clone());
            let eps = m.guided_on(&mut g, &bound, guidance, z_node, tr.t_eval, c_node)?;
            let z_next = s.step_levels_on(&mut g, z_node, eps, tr.hi, tr.lo)?;
            let target = g.constant_array(traj.latents[i].clone());
            let term = g.mean_sq_diff(target, z_next)?;
            total = Some(match total {
                None => term,
                Some(acc) => g.add(acc, term)?,
            });
        }
        let total = total.expect("k >= 1");
        let objective = g.scalar_mul(cfg.lambda, total)?;
        let loss = g.value(total).item()?;
        let grads = g.backward(objective)?;
        let grad = grads
            .get(&c_node)
            .cloned()
            .unwrap_or_else(|| Array::zeros(alloc::vec![c.len()]));
        grad.check_finite("alignment gradient")?;
        loss_history.push(loss);
        grad_norms.push(grad.norm());
        if best.as_ref().map_or(true, |(b, _)| loss < *b) {
            best = Some((loss, c.clone()));
        }
        let updated = adam.step(&alloc::vec![Rc::new(c.clone())], &[grad])?;
        c = (*updated[0]).clone();
    }
    let (_, c_shared) = best.expect("outer_steps >= 1");

    // one full sampling pass under the shared embedding
    let mut z = traj.z_top().clone();
    let mut deviations = Vec::with_capacity(k);
    for i in (0..k).rev() {
        let tr = s.transition(i)?;
        let mut g = Graph::new();
        let bound = m.bind(&mut g, false);
        let z_node = g.constant_array(z.clone());
        let c_node = g.constant_array(c_shared.clone());
        let eps = m.guided_on(&mut g, &bound, guidance, z_node, tr.t_eval, c_node)?;
        let next = s.step_levels_on(&mut g, z_node, eps, tr.hi, tr.lo)?;
        z = g.value(next).clone();
        if !z.all_finite() {
            return Err(Error::NonFinite {
                context: "alignment latent",
                index: Some(i),
            });
        }
        deviations.push(z.sub(&traj.latents[i])?.norm());
    }
    let rel_displacement = relative_displacement(traj.z0(), &z)?;
    Ok(AlignReconstruction {
        z0_rec: z,
        c_shared,
        deviations,
        rel_displacement,
        loss_history,
        grad_norms,
    })
}
