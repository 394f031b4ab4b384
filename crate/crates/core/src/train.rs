//! The training loop: gradient-descent parameter updates interleaved with
//! scheduled densification rounds, pruning, and metric logging.
//!
//! Parameter groups update through their natural reparameterizations: scales
//! through logs (positivity), opacity through a logit (stays in (0, 1)),
//! rotations in the ambient quaternion space followed by renormalization.
//! Runs are bit-reproducible given the same config and seed.

use std::collections::BTreeMap;

use nalgebra::{Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::density::{
    accumulate_split_stats, adc_densify, prune, sdc_apply, sdc_decide, select_budgeted,
    DensifyConfig, DensifyEvent, SplitAccumulator,
};
use crate::diff::{backprop, PerGaussianGrads};
use crate::primitives::{CameraProjection, GaussianPrimitive, PrimId, Scene, SceneMode};
use crate::render::{render, Image, LossKind, RenderMode, RenderOptions};
use crate::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct LearningRates {
    pub position: f64,
    pub log_scale: f64,
    pub rotation: f64,
    pub logit_opacity: f64,
    pub color: f64,
}

impl Default for LearningRates {
    fn default() -> Self {
        Self {
            position: 2.0,
            log_scale: 0.6,
            rotation: 0.2,
            logit_opacity: 1.2,
            color: 1.5,
        }
    }
}

impl LearningRates {
    fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("position", self.position),
            ("log_scale", self.log_scale),
            ("rotation", self.rotation),
            ("logit_opacity", self.logit_opacity),
            ("color", self.color),
        ] {
            if !(v.is_finite() && v > 0.0) {
                return Err(Error::InvalidConfig(format!(
                    "learning rate {name} must be positive"
                )));
            }
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Optimizer {
    /// Plain gradient descent, the default: saddle behavior is cleanest to
    /// observe without momentum smoothing it away.
    Gd,
    /// Heavy-ball momentum with the given coefficient.
    Momentum(f64),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum DensifyPolicy {
    /// Split on negative minimum eigenvalue of the splitting matrix.
    Sdc,
    /// Eigenvalue rule with a global per-round budget.
    SdcBudgeted,
    /// Eigenvalue rule gated on a small accumulated gradient.
    Compactest,
    /// Gradient-norm clone/split baseline.
    Adc,
    /// No densification (and no pruning): the count never changes.
    None,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct InitConfig {
    /// Number of seeded primitives.
    pub count: usize,
    /// Isotropic scale as a multiple of the pixel pitch.
    pub scale_pitch_multiple: f64,
    pub opacity: f64,
    /// Initial gray level for all channels.
    pub gray: f64,
}

impl Default for InitConfig {
    fn default() -> Self {
        Self {
            count: 24,
            scale_pitch_multiple: 2.0,
            opacity: 0.5,
            gray: 0.5,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_steps: usize,
    pub rates: LearningRates,
    pub optimizer: Optimizer,
    pub policy: DensifyPolicy,
    pub densify: DensifyConfig,
    pub seed: u64,
    pub loss: LossKind,
    pub render_mode: RenderMode,
    pub sigma_cutoff: f64,
    /// Exact mean over all views each step; when false, one view is sampled
    /// per step instead.
    pub full_batch: bool,
    pub log_interval: usize,
    pub checkpoint_interval: Option<usize>,
    pub init: InitConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_steps: 2000,
            rates: LearningRates::default(),
            optimizer: Optimizer::Gd,
            policy: DensifyPolicy::Sdc,
            densify: DensifyConfig::default(),
            seed: 0,
            loss: LossKind::L1,
            render_mode: RenderMode::Composited,
            sigma_cutoff: crate::render::DEFAULT_SIGMA_CUTOFF,
            full_batch: true,
            log_interval: 50,
            checkpoint_interval: None,
            init: InitConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.total_steps == 0 {
            return Err(Error::InvalidConfig(
                "total_steps must be at least 1".into(),
            ));
        }
        if self.log_interval == 0 {
            return Err(Error::InvalidConfig("log_interval must be positive".into()));
        }
        if self.policy == DensifyPolicy::SdcBudgeted && self.densify.budget.is_none() {
            return Err(Error::InvalidConfig(
                "sdc-budgeted policy needs densify.budget".into(),
            ));
        }
        if self.policy == DensifyPolicy::Compactest && self.densify.eps_grad.is_none() {
            return Err(Error::InvalidConfig(
                "compactest policy needs densify.eps_grad".into(),
            ));
        }
        self.rates.validate()?;
        self.densify.validate()
    }

    /// Densification stops after this step; defaults to half the run.
    pub fn densify_until(&self) -> usize {
        self.densify.densify_until.unwrap_or(self.total_steps / 2)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReportRow {
    pub step: usize,
    pub loss: f64,
    pub psnr: f64,
    pub n_points: usize,
    /// Densification summary token, empty when the step had no round.
    pub event: String,
}

#[derive(Debug, Clone)]
pub struct TrainReport {
    pub rows: Vec<ReportRow>,
    pub final_scene: Scene,
}

/// Seeded initialization: uniform positions over the first view's plane
/// extent, isotropic scales at a multiple of the pixel pitch, mid-gray.
pub fn init_scene(views: &[(CameraProjection, Image)], cfg: &TrainConfig) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0xa076_1d64).wrapping_add(7));
    let cam = &views[0].0;
    let (w, h) = cam.plane_extent();
    let pitch = cam.pixel_to_plane;
    let s = cfg.init.scale_pitch_multiple * pitch;
    let primitives = (0..cfg.init.count as u64)
        .map(|id| GaussianPrimitive {
            id,
            position: Vector3::new(rng.random_range(0.0..w), rng.random_range(0.0..h), 0.0),
            scale: Vector3::new(s, s, s),
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity: cfg.init.opacity,
            color: Vector3::new(cfg.init.gray, cfg.init.gray, cfg.init.gray),
            depth: rng.random_range(0.0..1.0),
        })
        .collect();
    Scene::new(SceneMode::Planar, primitives)
}

/// Per-primitive momentum state, keyed by id so it survives densification
/// (offspring start from rest).
#[derive(Debug, Clone, Default)]
struct Velocity {
    position: Vector3<f64>,
    log_scale: Vector3<f64>,
    rotation: Vector4<f64>,
    logit_opacity: f64,
    color: Vector3<f64>,
}

fn logit(o: f64) -> f64 {
    let o = o.clamp(1e-12, 1.0 - 1e-12);
    (o / (1.0 - o)).ln()
}

fn sigmoid(v: f64) -> f64 {
    1.0 / (1.0 + (-v).exp())
}

struct ParamUpdater {
    momentum: Option<f64>,
    state: BTreeMap<PrimId, Velocity>,
}

impl ParamUpdater {
    fn new(optimizer: Optimizer) -> Self {
        Self {
            momentum: match optimizer {
                Optimizer::Gd => None,
                Optimizer::Momentum(beta) => Some(beta),
            },
            state: BTreeMap::new(),
        }
    }

    /// Drop state for ids that no longer exist.
    fn retain(&mut self, scene: &Scene) {
        if self.momentum.is_none() {
            return;
        }
        let live: std::collections::BTreeSet<PrimId> =
            scene.primitives.iter().map(|p| p.id).collect();
        self.state.retain(|id, _| live.contains(id));
    }

    fn apply(&mut self, scene: &mut Scene, grads: &PerGaussianGrads, rates: &LearningRates) {
        let beta = self.momentum;
        for (i, prim) in scene.primitives.iter_mut().enumerate() {
            // Gradients in the update parameterizations.
            let g_pos = grads.position[i];
            let g_log_scale = grads.scale[i].component_mul(&prim.scale);
            let mut g_rot = grads.rotation[i];
            if scene.mode == SceneMode::Planar {
                // Keep rotations in-plane: only (w, z) may move.
                g_rot[1] = 0.0;
                g_rot[2] = 0.0;
            }
            let g_logit = grads.opacity[i] * prim.opacity * (1.0 - prim.opacity);
            let g_color = grads.color[i];

            let (d_pos, d_log_scale, d_rot, d_logit, d_color) = match beta {
                None => (g_pos, g_log_scale, g_rot, g_logit, g_color),
                Some(beta) => {
                    let vel = self.state.entry(prim.id).or_default();
                    vel.position = vel.position * beta + g_pos;
                    vel.log_scale = vel.log_scale * beta + g_log_scale;
                    vel.rotation = vel.rotation * beta + g_rot;
                    vel.logit_opacity = vel.logit_opacity * beta + g_logit;
                    vel.color = vel.color * beta + g_color;
                    (
                        vel.position,
                        vel.log_scale,
                        vel.rotation,
                        vel.logit_opacity,
                        vel.color,
                    )
                }
            };

            // Zero deltas must be exact no-ops: the reparameterization
            // round-trips (ln/exp, logit/sigmoid, renormalize) would other-
            // wise inject ulp-level drift that the absolute-error loss turns
            // into full-size sign gradients.
            prim.position -= d_pos * rates.position;
            for k in 0..3 {
                if d_log_scale[k] != 0.0 {
                    prim.scale[k] = (prim.scale[k].ln() - rates.log_scale * d_log_scale[k]).exp();
                }
            }
            if d_rot != Vector4::zeros() {
                let q = prim.rotation - d_rot * rates.rotation;
                let n = q.norm();
                if n > 1e-12 {
                    prim.rotation = q / n;
                }
            }
            if d_logit != 0.0 {
                prim.opacity = sigmoid(logit(prim.opacity) - rates.logit_opacity * d_logit);
            }
            for ch in 0..3 {
                prim.color[ch] = (prim.color[ch] - rates.color * d_color[ch]).clamp(0.0, 1.0);
            }
        }
    }
}

/// Mean PSNR across views from the pooled squared error.
fn pooled_psnr(rendered: &[Image], targets: &[&Image]) -> f64 {
    let mut total = 0.0;
    let mut count = 0usize;
    for (img, t) in rendered.iter().zip(targets) {
        for (r, tt) in img.pixels.iter().zip(&t.pixels) {
            for ch in 0..3 {
                let e = r[ch] - tt[ch];
                total += e * e;
            }
        }
        count += 3 * img.pixels.len();
    }
    let mse = total / count as f64;
    if mse == 0.0 {
        f64::INFINITY
    } else {
        10.0 * (1.0 / mse).log10()
    }
}

pub fn train(
    scene0: &Scene,
    views: &[(CameraProjection, Image)],
    cfg: &TrainConfig,
) -> Result<TrainReport> {
    train_with_checkpoints(scene0, views, cfg, |_, _| Ok(()))
}

/// Full loop with a checkpoint callback invoked every
/// `cfg.checkpoint_interval` steps.
pub fn train_with_checkpoints<F>(
    scene0: &Scene,
    views: &[(CameraProjection, Image)],
    cfg: &TrainConfig,
    mut on_checkpoint: F,
) -> Result<TrainReport>
where
    F: FnMut(usize, &Scene) -> Result<()>,
{
    cfg.validate()?;
    if views.is_empty() {
        return Err(Error::InvalidConfig("at least one view is required".into()));
    }
    if scene0.is_empty() {
        return Err(Error::InvalidConfig(
            "initial scene must be non-empty".into(),
        ));
    }
    scene0.validate()?;
    for (cam, target) in views {
        cam.validate()?;
        if cam.width != target.width || cam.height != target.height {
            return Err(Error::DimensionMismatch(
                cam.width,
                cam.height,
                target.width,
                target.height,
            ));
        }
    }

    let mut scene = scene0.clone();
    let mut accumulator = SplitAccumulator::new(&scene);
    let mut updater = ParamUpdater::new(cfg.optimizer);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed.wrapping_mul(0xe703_7ed1).wrapping_add(11));
    let opts = RenderOptions {
        mode: cfg.render_mode,
        sigma_cutoff: cfg.sigma_cutoff,
    };
    let densify_until = cfg.densify_until();
    let mut rows = Vec::new();

    for step in 1..=cfg.total_steps {
        // Which views participate this step.
        let chosen: Vec<usize> = if cfg.full_batch || views.len() == 1 {
            (0..views.len()).collect()
        } else {
            vec![rng.random_range(0..views.len())]
        };

        // Render and differentiate each participating view; average the
        // parameter gradients and feed each view to the accumulator.
        let weight = 1.0 / chosen.len() as f64;
        let mut combined = PerGaussianGrads::zeros(scene.len(), 0, scene.content_hash());
        let mut rendered = Vec::with_capacity(chosen.len());
        let mut chosen_targets = Vec::with_capacity(chosen.len());
        for &v in &chosen {
            let (cam, target) = &views[v];
            let (img, tape) = render(&scene, cam, opts)?;
            let grads = backprop(&scene, cam, target, &tape, cfg.loss)?;
            accumulate_split_stats(&mut accumulator, &grads, &tape, &scene, cam)?;
            combined.add_scaled(&grads, weight);
            rendered.push(img);
            chosen_targets.push(target);
        }
        let loss = combined.loss;
        if !loss.is_finite() {
            return Err(Error::NonFiniteLoss { step, value: loss });
        }

        updater.apply(&mut scene, &combined, &cfg.rates);

        // Scheduled densification round.
        let mut event = String::new();
        let due = cfg.policy != DensifyPolicy::None
            && step % cfg.densify.interval == 0
            && step >= cfg.densify.warmup
            && step <= densify_until
            && accumulator.samples > 0;
        if due {
            let summary = match cfg.policy {
                DensifyPolicy::Sdc | DensifyPolicy::SdcBudgeted | DensifyPolicy::Compactest => {
                    let mut decisions = sdc_decide(&accumulator, &cfg.densify);
                    if cfg.policy == DensifyPolicy::SdcBudgeted {
                        decisions =
                            select_budgeted(decisions, cfg.densify.budget.unwrap_or(usize::MAX));
                    }
                    scene = sdc_apply(&scene, &decisions, &cfg.densify)?;
                    let name = match cfg.policy {
                        DensifyPolicy::SdcBudgeted => "sdc-budgeted",
                        DensifyPolicy::Compactest => "compactest",
                        _ => "sdc",
                    };
                    DensifyEvent::from_decisions(name, &decisions)
                }
                DensifyPolicy::Adc => {
                    let candidates = (0..scene.len())
                        .filter(|&i| accumulator.mean_view_grad_norm(i) >= cfg.densify.adc.eps_adc)
                        .count();
                    let before = scene.len();
                    scene = adc_densify(
                        &scene,
                        &accumulator,
                        &cfg.densify,
                        cfg.rates.position,
                        &mut rng,
                    )?;
                    DensifyEvent {
                        policy: "adc",
                        candidates,
                        splits: scene.len() - before,
                        lambda_min_min: None,
                        lambda_min_median: None,
                    }
                }
                DensifyPolicy::None => unreachable!(),
            };
            scene = prune(&scene, &cfg.densify);
            accumulator.reset(&scene);
            updater.retain(&scene);
            event = summary.to_token();
        }

        if step % cfg.log_interval == 0 || step == cfg.total_steps || !event.is_empty() {
            rows.push(ReportRow {
                step,
                loss,
                psnr: pooled_psnr(&rendered, &chosen_targets),
                n_points: scene.len(),
                event,
            });
        }
        if let Some(interval) = cfg.checkpoint_interval {
            if step % interval == 0 {
                on_checkpoint(step, &scene)?;
            }
        }
    }

    Ok(TrainReport {
        rows,
        final_scene: scene,
    })
}
