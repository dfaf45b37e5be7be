//! Pipeline stages: generate-data, train, invert, reconstruct, edit, eval.
//!
//! Every stage validates its inputs, refuses to clobber existing outputs
//! unless overwriting was requested, writes a manifest naming its inputs,
//! outputs, config hash, and seed, and is bit-reproducible from the effective
//! config alone. Manifests carry no timestamps for that reason.

use std::fmt::Write as _;
use std::fs;
use std::path::PathBuf;

use difflab_core::data::{generate, ToyImage};
use difflab_core::edit::{decode, domain_gap, edit_sample, encode};
use difflab_core::invert::{invert, reconstruct_plain, Trajectory};
use difflab_core::metrics::{self, MetricReport, MetricRow, OracleClassifier};
use difflab_core::mirror::{mirror_reconstruct, simple_align_reconstruct};
use difflab_core::model::Denoiser;
use difflab_core::train::train;
use difflab_core::{Array, GuidanceConfig, PromptTrack};

use crate::config::RunConfig;
use crate::error::LabError;
use crate::model_io::{
    load_checkpoint, load_latent, load_track, load_trajectory, save_checkpoint, save_latent,
    save_track, save_trajectory,
};
use crate::pgm::{hstack_panels, read_pgm, write_pgm};

/// Everything a stage needs to run.
#[derive(Debug, Clone)]
pub struct StageCtx {
    pub cfg: RunConfig,
    pub out: PathBuf,
    pub overwrite: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ReconMode {
    Plain,
    Mirror,
    SimpleAlign,
}

impl ReconMode {
    pub fn parse(s: &str) -> Result<Self, LabError> {
        match s {
            "plain" => Ok(ReconMode::Plain),
            "mirror" => Ok(ReconMode::Mirror),
            "simple-align" => Ok(ReconMode::SimpleAlign),
            other => Err(LabError::Config(format!(
                "unknown reconstruction mode '{other}' (expected plain, mirror, or simple-align)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            ReconMode::Plain => "plain",
            ReconMode::Mirror => "mirror",
            ReconMode::SimpleAlign => "simple-align",
        }
    }

    pub fn dir(&self) -> String {
        format!("recon_{}", self.name())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum TrackChoice {
    /// Per-timestep rewritten embeddings from the mirror reconstruction.
    Rewritten,
    /// The unrewritten source embedding at every timestep (baseline).
    Source,
}

impl TrackChoice {
    pub fn parse(s: &str) -> Result<Self, LabError> {
        match s {
            "rewritten" => Ok(TrackChoice::Rewritten),
            "source" => Ok(TrackChoice::Source),
            other => Err(LabError::Config(format!(
                "unknown track '{other}' (expected rewritten or source)"
            ))),
        }
    }

    pub fn name(&self) -> &'static str {
        match self {
            TrackChoice::Rewritten => "rewritten",
            TrackChoice::Source => "source",
        }
    }
}

impl StageCtx {
    fn path(&self, rel: &str) -> PathBuf {
        self.out.join(rel)
    }

    /// Refuse to clobber outputs unless overwriting; with overwrite, remove
    /// stale versions so reruns leave no leftovers.
    fn guard_outputs(&self, rels: &[&str]) -> Result<(), LabError> {
        for rel in rels {
            let p = self.path(rel);
            if p.exists() {
                if !self.overwrite {
                    return Err(LabError::WouldOverwrite(p.display().to_string()));
                }
                if p.is_dir() {
                    fs::remove_dir_all(&p)?;
                } else {
                    fs::remove_file(&p)?;
                }
            }
        }
        Ok(())
    }

    fn require_input(&self, rel: &str, hint: &str) -> Result<PathBuf, LabError> {
        let p = self.path(rel);
        if !p.exists() {
            return Err(LabError::MissingInput(format!(
                "{} (run `{hint}` first)",
                p.display()
            )));
        }
        Ok(p)
    }

    /// Write or verify the effective config dump in the output directory.
    /// Running stages with a different config against the same directory is a
    /// config error.
    pub fn ensure_effective_config(&self) -> Result<(), LabError> {
        self.cfg.validate()?;
        fs::create_dir_all(&self.out)?;
        let p = self.path("effective.config");
        let dump = self.cfg.dump();
        if p.exists() {
            let existing = fs::read_to_string(&p)?;
            if existing != dump {
                return Err(LabError::Config(format!(
                    "{} holds a different effective config; use a fresh output directory",
                    p.display()
                )));
            }
        } else {
            fs::write(&p, dump)?;
        }
        Ok(())
    }

    fn write_manifest(
        &self,
        stage: &str,
        inputs: &[String],
        outputs: &[String],
    ) -> Result<(), LabError> {
        let mut text = String::new();
        let _ = writeln!(text, "stage = {stage}");
        let _ = writeln!(text, "config_hash = {}", self.cfg.hash());
        let _ = writeln!(text, "seed = {}", self.cfg.seed);
        for i in inputs {
            let _ = writeln!(text, "input {i}");
        }
        for o in outputs {
            let _ = writeln!(text, "output {o}");
        }
        fs::write(self.path(&format!("{stage}.manifest")), text)?;
        Ok(())
    }
}

fn image_file(label: &str, idx: usize) -> String {
    format!("{label}_{idx:04}.pgm")
}

fn eval_id(idx: usize) -> String {
    format!("eval_{idx:04}")
}

fn write_split(
    ctx: &StageCtx,
    split: &str,
    images: &[ToyImage],
) -> Result<Vec<String>, LabError> {
    let mut index = String::new();
    let mut outputs = Vec::new();
    let mut counters = std::collections::BTreeMap::new();
    for img in images {
        let idx = counters.entry(img.label.clone()).or_insert(0usize);
        let rel = format!("dataset/{split}/{}", image_file(&img.label, *idx));
        *idx += 1;
        write_pgm(&ctx.path(&rel), &img.pixels)?;
        let _ = writeln!(index, "{rel} {} {}", img.label, img.seed);
        outputs.push(rel);
    }
    let index_rel = format!("dataset/{split}.index");
    fs::write(ctx.path(&index_rel), index)?;
    outputs.push(index_rel);
    Ok(outputs)
}

fn read_index(ctx: &StageCtx, split: &str) -> Result<Vec<(String, String)>, LabError> {
    let rel = format!("dataset/{split}.index");
    let p = ctx.require_input(&rel, "difflab generate-data")?;
    let text = fs::read_to_string(p)?;
    let mut out = Vec::new();
    for (lineno, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let (path, label) = match (parts.next(), parts.next()) {
            (Some(p), Some(l)) => (p.to_string(), l.to_string()),
            _ => {
                return Err(LabError::Format(format!(
                    "dataset index line {} is malformed",
                    lineno + 1
                )))
            }
        };
        out.push((path, label));
    }
    Ok(out)
}

fn load_split(ctx: &StageCtx, split: &str) -> Result<Vec<(Array, String)>, LabError> {
    read_index(ctx, split)?
        .into_iter()
        .map(|(rel, label)| {
            let img = read_pgm(&ctx.path(&rel))?;
            let latent = encode(&img).map_err(LabError::Core)?;
            Ok((latent, label))
        })
        .collect()
}

/// Stage: generate the training and evaluation datasets.
pub fn generate_data(ctx: &StageCtx) -> Result<(), LabError> {
    ctx.ensure_effective_config()?;
    ctx.guard_outputs(&[
        "dataset/train",
        "dataset/eval",
        "dataset/train.index",
        "dataset/eval.index",
    ])?;
    let train_imgs = generate(&ctx.cfg.train_dataset_spec()).map_err(LabError::Core)?;
    let eval_imgs = generate(&ctx.cfg.eval_dataset_spec()).map_err(LabError::Core)?;
    let mut outputs = write_split(ctx, "train", &train_imgs)?;
    outputs.extend(write_split(ctx, "eval", &eval_imgs)?);
    ctx.write_manifest("generate-data", &[], &outputs)
}

/// Stage: train the denoiser on the training split.
pub fn train_model(ctx: &StageCtx) -> Result<(), LabError> {
    ctx.ensure_effective_config()?;
    ctx.guard_outputs(&["model.ckpt", "loss_curve.csv"])?;
    let dataset = load_split(ctx, "train")?;
    let mut labels: Vec<String> = ctx.cfg.data_domains.clone();
    labels.sort();
    let mut model = Denoiser::init(ctx.cfg.denoiser_config(), &labels, ctx.cfg.seed)
        .map_err(LabError::Core)?;
    let schedule = ctx.cfg.schedule()?;
    let curve = train(&mut model, &schedule, &dataset, &ctx.cfg.train_config())
        .map_err(LabError::Core)?;
    save_checkpoint(&ctx.path("model.ckpt"), &model)?;
    let mut csv = String::from("epoch,mean_loss\n");
    for (i, l) in curve.iter().enumerate() {
        let _ = writeln!(csv, "{i},{l}");
    }
    fs::write(ctx.path("loss_curve.csv"), csv)?;
    ctx.write_manifest(
        "train",
        &["dataset/train.index".into()],
        &["model.ckpt".into(), "loss_curve.csv".into()],
    )
}

/// Stage: invert every evaluation image, recording full trajectories.
pub fn invert_eval(ctx: &StageCtx) -> Result<(), LabError> {
    ctx.ensure_effective_config()?;
    ctx.guard_outputs(&["trajectories"])?;
    let model = load_checkpoint(&ctx.require_input("model.ckpt", "difflab train")?)?;
    let schedule = ctx.cfg.schedule()?;
    let guidance = ctx.cfg.guidance().map_err(LabError::Core)?;
    let inversion_guidance = if ctx.cfg.invert_guided {
        guidance
    } else {
        GuidanceConfig::disabled()
    };
    let eval = load_split(ctx, "eval")?;
    let mut outputs = Vec::new();
    for (i, (latent, label)) in eval.iter().enumerate() {
        let c = model.embed_label(label).map_err(LabError::Core)?;
        let traj =
            invert(&model, &schedule, latent, &c, &inversion_guidance).map_err(LabError::Core)?;
        let rel = format!("trajectories/{}.traj", eval_id(i));
        save_trajectory(&ctx.path(&rel), &traj)?;
        outputs.push(rel);
    }
    ctx.write_manifest(
        "invert",
        &["model.ckpt".into(), "dataset/eval.index".into()],
        &outputs,
    )
}

fn load_eval_trajectories(ctx: &StageCtx) -> Result<Vec<Trajectory>, LabError> {
    let count = ctx.cfg.data_eval_count;
    let mut out = Vec::with_capacity(count);
    for i in 0..count {
        let rel = format!("trajectories/{}.traj", eval_id(i));
        let p = ctx.require_input(&rel, "difflab invert")?;
        out.push(load_trajectory(&p)?);
    }
    Ok(out)
}

/// Stage: reconstruct every trajectory under one of the three modes.
pub fn reconstruct(ctx: &StageCtx, mode: ReconMode) -> Result<(), LabError> {
    ctx.ensure_effective_config()?;
    let dir = mode.dir();
    ctx.guard_outputs(&[&dir])?;
    let model = load_checkpoint(&ctx.require_input("model.ckpt", "difflab train")?)?;
    let schedule = ctx.cfg.schedule()?;
    let guidance = ctx.cfg.guidance().map_err(LabError::Core)?;
    let trajectories = load_eval_trajectories(ctx)?;
    let size = ctx.cfg.data_image_size;
    let mut displacement_csv = String::from("image_id,rel_displacement\n");
    let mut outputs = Vec::new();
    for (i, traj) in trajectories.iter().enumerate() {
        let id = eval_id(i);
        let (z0_rec, rel_disp) = match mode {
            ReconMode::Plain => {
                let r = reconstruct_plain(&model, &schedule, &guidance, traj)
                    .map_err(LabError::Core)?;
                (r.z0_rec, r.rel_displacement)
            }
            ReconMode::Mirror => {
                let r = mirror_reconstruct(
                    &model,
                    &schedule,
                    &guidance,
                    traj,
                    &ctx.cfg.rewrite_config(),
                )
                .map_err(LabError::Core)?;
                let track_rel = format!("{dir}/tracks/{id}.ptrk");
                save_track(&ctx.path(&track_rel), &r.track)?;
                outputs.push(track_rel);
                let mut csv = String::from("t,initial_loss,final_loss\n");
                let steps = schedule.infer_steps();
                for (j, (il, fl)) in r
                    .track
                    .initial_losses
                    .iter()
                    .zip(&r.track.final_losses)
                    .enumerate()
                {
                    let t = steps[steps.len() - 1 - j];
                    let _ = writeln!(csv, "{t},{il},{fl}");
                }
                let csv_rel = format!("{dir}/tracks/{id}.csv");
                fs::write(ctx.path(&csv_rel), csv)?;
                outputs.push(csv_rel);
                (r.z0_rec, r.rel_displacement)
            }
            ReconMode::SimpleAlign => {
                let r = simple_align_reconstruct(
                    &model,
                    &schedule,
                    &guidance,
                    traj,
                    &ctx.cfg.rewrite_config(),
                    ctx.cfg.align_outer_steps,
                )
                .map_err(LabError::Core)?;
                let mut csv = String::from("outer,summed_loss,grad_norm\n");
                for (j, (l, gn)) in r.loss_history.iter().zip(&r.grad_norms).enumerate() {
                    let _ = writeln!(csv, "{j},{l},{gn}");
                }
                let conv_rel = format!("{dir}/convergence/{id}.csv");
                if let Some(parent) = ctx.path(&conv_rel).parent() {
                    fs::create_dir_all(parent)?;
                }
                fs::write(ctx.path(&conv_rel), csv)?;
                outputs.push(conv_rel);
                (r.z0_rec, r.rel_displacement)
            }
        };
        let lat_rel = format!("{dir}/{id}.lat");
        save_latent(&ctx.path(&lat_rel), &z0_rec)?;
        let img = decode(&z0_rec, size, size).map_err(LabError::Core)?;
        let pgm_rel = format!("{dir}/{id}.pgm");
        write_pgm(&ctx.path(&pgm_rel), &img)?;
        let _ = writeln!(displacement_csv, "{id},{rel_disp}");
        outputs.push(lat_rel);
        outputs.push(pgm_rel);
    }
    let disp_rel = format!("{dir}/displacement.csv");
    fs::write(ctx.path(&disp_rel), displacement_csv)?;
    outputs.push(disp_rel);
    ctx.write_manifest(
        &format!("reconstruct-{}", mode.name()),
        &["model.ckpt".into(), "trajectories".into()],
        &outputs,
    )
}

/// Stage: zero-shot edit every trajectory with the configured domain gap.
pub fn edit(ctx: &StageCtx, strength: f64, track_choice: TrackChoice) -> Result<(), LabError> {
    ctx.ensure_effective_config()?;
    let dir = format!("edit_{}", track_choice.name());
    ctx.guard_outputs(&[&dir])?;
    let model = load_checkpoint(&ctx.require_input("model.ckpt", "difflab train")?)?;
    let schedule = ctx.cfg.schedule()?;
    let guidance = ctx.cfg.guidance().map_err(LabError::Core)?;
    let trajectories = load_eval_trajectories(ctx)?;
    let gap = domain_gap(
        &model,
        std::slice::from_ref(&ctx.cfg.edit_source_label),
        std::slice::from_ref(&ctx.cfg.edit_target_label),
    )
    .map_err(LabError::Core)?;
    let size = ctx.cfg.data_image_size;
    let mut outputs = Vec::new();
    let mut inputs = vec!["model.ckpt".to_string(), "trajectories".to_string()];
    if track_choice == TrackChoice::Rewritten {
        inputs.push("recon_mirror/tracks".into());
    }
    for (i, traj) in trajectories.iter().enumerate() {
        let id = eval_id(i);
        let track = match track_choice {
            TrackChoice::Rewritten => {
                let rel = format!("recon_mirror/tracks/{id}.ptrk");
                let p = ctx.require_input(&rel, "difflab reconstruct --mode mirror")?;
                load_track(&p)?
            }
            TrackChoice::Source => {
                PromptTrack::constant(&traj.condition, schedule.num_transitions())
            }
        };
        let z0_edit = edit_sample(&model, &schedule, &guidance, traj, &track, &gap, strength)
            .map_err(LabError::Core)?;
        let lat_rel = format!("{dir}/{id}.lat");
        save_latent(&ctx.path(&lat_rel), &z0_edit)?;
        let img = decode(&z0_edit, size, size).map_err(LabError::Core)?;
        let pgm_rel = format!("{dir}/{id}.pgm");
        write_pgm(&ctx.path(&pgm_rel), &img)?;
        outputs.push(lat_rel);
        outputs.push(pgm_rel);
    }
    ctx.write_manifest(&format!("edit-{}", track_choice.name()), &inputs, &outputs)
}

/// Comparison targets the eval stage knows how to score.
const RECON_DIRS: [&str; 3] = ["recon_plain", "recon_mirror", "recon_simple-align"];
const EDIT_DIRS: [&str; 2] = ["edit_rewritten", "edit_source"];

fn report_csv(report: &MetricReport) -> String {
    let mut s = String::new();
    let _ = writeln!(
        s,
        "# oracle_label/oracle_score: supervised shape classifier, the desk-scale stand-in for CLIP-ACC"
    );
    let _ = writeln!(s, "# ssim: single-scale, 7x7 uniform window, dynamic range 1");
    let _ = writeln!(
        s,
        "image_id,mse,psnr,ssim,rel_displacement,oracle_label,oracle_score"
    );
    for r in &report.rows {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{},{}",
            r.image_id, r.mse, r.psnr, r.ssim, r.rel_displacement, r.oracle_label, r.oracle_score
        );
    }
    let _ = writeln!(
        s,
        "# aggregate mean mse={} psnr={} ssim={} rel_displacement={} oracle_score={}",
        report.mean(|r| r.mse),
        report.mean(|r| r.psnr),
        report.mean(|r| r.ssim),
        report.mean(|r| r.rel_displacement),
        report.mean(|r| r.oracle_score),
    );
    let _ = writeln!(
        s,
        "# aggregate median mse={} psnr={} ssim={} rel_displacement={}",
        report.median(|r| r.mse),
        report.median(|r| r.psnr),
        report.median(|r| r.ssim),
        report.median(|r| r.rel_displacement),
    );
    s
}

fn score_against_sources(
    ctx: &StageCtx,
    dir: &str,
    sources: &[(Array, Array)], // (image, latent) per eval id
    oracle: &OracleClassifier,
) -> Result<MetricReport, LabError> {
    let size = ctx.cfg.data_image_size;
    let mut report = MetricReport::default();
    for (i, (src_img, src_latent)) in sources.iter().enumerate() {
        let id = eval_id(i);
        let lat = load_latent(&ctx.path(&format!("{dir}/{id}.lat")))?;
        let img = decode(&lat, size, size).map_err(LabError::Core)?;
        let (oracle_label, oracle_score) =
            oracle.classify(&encode(&img).map_err(LabError::Core)?).map_err(LabError::Core)?;
        report.rows.push(MetricRow {
            image_id: id,
            mse: metrics::mse(src_img, &img).map_err(LabError::Core)?,
            psnr: metrics::psnr(src_img, &img).map_err(LabError::Core)?,
            ssim: metrics::ssim(src_img, &img).map_err(LabError::Core)?,
            rel_displacement: metrics::rel_displacement(src_latent, &lat)
                .map_err(LabError::Core)?,
            oracle_label,
            oracle_score,
        });
    }
    Ok(report)
}

/// Stage: score every reconstruction and edit present in the output
/// directory against the eval sources, emit metric CSVs, comparison grids,
/// and a summary.
pub fn evaluate(ctx: &StageCtx) -> Result<(), LabError> {
    ctx.ensure_effective_config()?;
    ctx.guard_outputs(&["eval"])?;
    let train_set = load_split(ctx, "train")?;
    let (oracle, holdout_acc) =
        metrics::train_oracle(&train_set, &ctx.cfg.oracle_config()).map_err(LabError::Core)?;
    let eval_set = load_split(ctx, "eval")?;
    let size = ctx.cfg.data_image_size;
    let sources: Vec<(Array, Array)> = eval_set
        .iter()
        .map(|(latent, _)| {
            let img = decode(latent, size, size).map_err(LabError::Core)?;
            Ok((img, latent.clone()))
        })
        .collect::<Result<_, LabError>>()?;

    let mut outputs = Vec::new();
    let mut inputs = vec!["dataset/train.index".to_string(), "dataset/eval.index".to_string()];
    let mut summary = String::new();
    let _ = writeln!(
        summary,
        "# oracle classifier stands in for CLIP-ACC; held-out accuracy = {holdout_acc}"
    );
    fs::create_dir_all(ctx.path("eval"))?;
    let mut scored: Vec<(&str, MetricReport)> = Vec::new();
    for dir in RECON_DIRS.iter().chain(EDIT_DIRS.iter()) {
        if !ctx.path(dir).exists() {
            continue;
        }
        inputs.push((*dir).to_string());
        let report = score_against_sources(ctx, dir, &sources, &oracle)?;
        let rel = format!("eval/metrics_{dir}.csv");
        fs::write(ctx.path(&rel), report_csv(&report))?;
        outputs.push(rel);
        let _ = writeln!(
            summary,
            "{dir}: mean_rel_displacement={} mean_ssim={} mean_psnr={} oracle_target_fraction={}",
            report.mean(|r| r.rel_displacement),
            report.mean(|r| r.ssim),
            report.mean(|r| r.psnr),
            report
                .rows
                .iter()
                .filter(|r| r.oracle_label == ctx.cfg.edit_target_label)
                .count() as f64
                / report.rows.len().max(1) as f64,
        );
        scored.push((dir, report));
    }
    // side-by-side grids: source | plain | mirror | edit (those present)
    let grid_panels = ["recon_plain", "recon_mirror", "edit_rewritten"];
    for (i, (src_img, _)) in sources.iter().enumerate() {
        let id = eval_id(i);
        let mut arrays: Vec<Array> = vec![src_img.clone()];
        for dir in grid_panels {
            let p = ctx.path(&format!("{dir}/{id}.lat"));
            if p.exists() {
                let lat = load_latent(&p)?;
                arrays.push(decode(&lat, size, size).map_err(LabError::Core)?);
            }
        }
        let refs: Vec<&Array> = arrays.iter().collect();
        let grid = hstack_panels(&refs)?;
        let rel = format!("eval/grids/{id}.pgm");
        write_pgm(&ctx.path(&rel), &grid)?;
        outputs.push(rel);
    }
    let _ = scored;
    fs::write(ctx.path("eval/summary.txt"), summary)?;
    outputs.push("eval/summary.txt".into());
    ctx.write_manifest("eval", &inputs, &outputs)
}

/// All stages end to end.
pub fn pipeline(ctx: &StageCtx) -> Result<(), LabError> {
    generate_data(ctx)?;
    train_model(ctx)?;
    invert_eval(ctx)?;
    reconstruct(ctx, ReconMode::Plain)?;
    reconstruct(ctx, ReconMode::Mirror)?;
    reconstruct(ctx, ReconMode::SimpleAlign)?;
    edit(ctx, ctx.cfg.edit_strength, TrackChoice::Rewritten)?;
    edit(ctx, ctx.cfg.edit_strength, TrackChoice::Source)?;
    evaluate(ctx)
}
