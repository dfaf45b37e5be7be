//! Save/load for checkpoints, trajectories, prompt tracks, and bare latents,
//! all on the shared container format (see `container` for the byte layout).

use std::path::Path;

use difflab_core::invert::{ScheduleMeta, Trajectory};
use difflab_core::model::{Denoiser, DenoiserConfig, GuidanceConfig};
use difflab_core::{Array, PromptTrack};

use crate::container::{
    Container, KIND_CHECKPOINT, KIND_LATENT, KIND_PROMPT_TRACK, KIND_TRAJECTORY,
};
use crate::error::LabError;

pub fn save_checkpoint(path: &Path, model: &Denoiser) -> Result<(), LabError> {
    let cfg = model.config();
    let mut c = Container::new(KIND_CHECKPOINT);
    c.push_scalar("meta/latent_len", cfg.latent_len as f64);
    c.push_scalar("meta/hidden_width", cfg.hidden_width as f64);
    c.push_scalar("meta/hidden_layers", cfg.hidden_layers as f64);
    c.push_scalar("meta/time_feature_dim", cfg.time_feature_dim as f64);
    c.push_scalar("meta/cond_dim", cfg.cond_dim as f64);
    c.push_scalar("meta/t_train", cfg.t_train as f64);
    for (name, array) in model.param_entries() {
        c.push(format!("param/{name}"), (*array).clone());
    }
    c.save(path)
}

pub fn load_checkpoint(path: &Path) -> Result<Denoiser, LabError> {
    let c = Container::load(path, KIND_CHECKPOINT)?;
    let cfg = DenoiserConfig {
        latent_len: c.get_usize("meta/latent_len")?,
        hidden_width: c.get_usize("meta/hidden_width")?,
        hidden_layers: c.get_usize("meta/hidden_layers")?,
        time_feature_dim: c.get_usize("meta/time_feature_dim")?,
        cond_dim: c.get_usize("meta/cond_dim")?,
        t_train: c.get_usize("meta/t_train")?,
    };
    let mut layers = Vec::new();
    for i in 0..=cfg.hidden_layers {
        let w = c.get(&format!("param/layer{i}.weight"))?.clone();
        let b = c.get(&format!("param/layer{i}.bias"))?.clone();
        layers.push((w, b));
    }
    let null = c.get("param/null_embedding")?.clone();
    let embeddings: Vec<(String, Array)> = c
        .with_prefix("param/embedding.")
        .map(|(name, a)| {
            (
                name.trim_start_matches("param/embedding.").to_string(),
                a.clone(),
            )
        })
        .collect();
    if embeddings.is_empty() {
        return Err(LabError::Format(
            "checkpoint has no embedding table entries".into(),
        ));
    }
    Denoiser::from_parts(cfg, layers, embeddings, null).map_err(|e| LabError::Format(e.to_string()))
}

pub fn save_trajectory(path: &Path, traj: &Trajectory) -> Result<(), LabError> {
    let mut c = Container::new(KIND_TRAJECTORY);
    c.push_scalar("meta/t_train", traj.schedule.t_train as f64);
    c.push_scalar("meta/beta_start", traj.schedule.beta_start);
    c.push_scalar("meta/beta_end", traj.schedule.beta_end);
    c.push_scalar("meta/guidance_scale", traj.guidance.scale);
    c.push_scalar(
        "meta/guidance_enabled",
        if traj.guidance.enabled { 1.0 } else { 0.0 },
    );
    c.push(
        "infer_steps",
        Array::vector(traj.schedule.infer_steps.iter().map(|&i| i as f64).collect()),
    );
    c.push("condition", traj.condition.clone());
    for (i, l) in traj.latents.iter().enumerate() {
        c.push(format!("latent/{i:04}"), l.clone());
    }
    for (i, e) in traj.eps_cache.iter().enumerate() {
        c.push(format!("eps/{i:04}"), e.clone());
    }
    c.save(path)
}

pub fn load_trajectory(path: &Path) -> Result<Trajectory, LabError> {
    let c = Container::load(path, KIND_TRAJECTORY)?;
    let infer_steps: Vec<usize> = c
        .get("infer_steps")?
        .data()
        .iter()
        .map(|&v| v as usize)
        .collect();
    let schedule = ScheduleMeta {
        t_train: c.get_usize("meta/t_train")?,
        beta_start: c.get_scalar("meta/beta_start")?,
        beta_end: c.get_scalar("meta/beta_end")?,
        infer_steps,
    };
    let guidance = GuidanceConfig::new(
        c.get_scalar("meta/guidance_scale")?,
        c.get_scalar("meta/guidance_enabled")? != 0.0,
    )
    .map_err(|e| LabError::Format(e.to_string()))?;
    let latents: Vec<Array> = c.with_prefix("latent/").map(|(_, a)| a.clone()).collect();
    let eps_cache: Vec<Array> = c.with_prefix("eps/").map(|(_, a)| a.clone()).collect();
    let traj = Trajectory {
        latents,
        eps_cache,
        condition: c.get("condition")?.clone(),
        guidance,
        schedule,
    };
    traj.validate().map_err(|e| LabError::Format(e.to_string()))?;
    Ok(traj)
}

pub fn save_track(path: &Path, track: &PromptTrack) -> Result<(), LabError> {
    let mut c = Container::new(KIND_PROMPT_TRACK);
    c.push_scalar("meta/t_infer", track.len() as f64);
    for (i, e) in track.embeddings.iter().enumerate() {
        c.push(format!("embed/{i:04}"), e.clone());
    }
    c.push("initial_loss", Array::vector(track.initial_losses.clone()));
    c.push("final_loss", Array::vector(track.final_losses.clone()));
    c.save(path)
}

pub fn load_track(path: &Path) -> Result<PromptTrack, LabError> {
    let c = Container::load(path, KIND_PROMPT_TRACK)?;
    let embeddings: Vec<Array> = c.with_prefix("embed/").map(|(_, a)| a.clone()).collect();
    let track = PromptTrack {
        embeddings,
        initial_losses: c.get("initial_loss")?.data().to_vec(),
        final_losses: c.get("final_loss")?.data().to_vec(),
    };
    let expected = c.get_usize("meta/t_infer")?;
    track
        .validate(expected)
        .map_err(|e| LabError::Format(e.to_string()))?;
    Ok(track)
}

pub fn save_latent(path: &Path, latent: &Array) -> Result<(), LabError> {
    let mut c = Container::new(KIND_LATENT);
    c.push("latent", latent.clone());
    c.save(path)
}

pub fn load_latent(path: &Path) -> Result<Array, LabError> {
    let c = Container::load(path, KIND_LATENT)?;
    Ok(c.get("latent")?.clone())
}
