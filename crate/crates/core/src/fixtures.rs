//! Deterministic seeded fixtures shared by tests, the verification checks,
//! and the shipped demo targets.
//!
//! Everything here is a pure function of its seed. Targets built for
//! finite-difference checks keep every pixel residual away from zero so the
//! absolute-error loss is smooth across the probed neighborhood.

use nalgebra::{Vector2, Vector3, Vector4};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::primitives::{
    planar_quaternion, project_point, CameraProjection, GaussianPrimitive, Scene, SceneMode,
};
use crate::render::{render, Image, LossKind, RenderMode, RenderOptions};

/// Residual guard used by gradient fixtures: perturbations of size
/// `h · |∂render/∂θ|` stay far below this.
pub const RESIDUAL_GUARD: f64 = 1e-2;

fn random_unit_quaternion(rng: &mut ChaCha8Rng) -> Vector4<f64> {
    loop {
        let q = Vector4::from_fn(|_, _| rng.random_range(-1.0..1.0));
        let n = q.norm();
        if n > 0.3 {
            return q / n;
        }
    }
}

/// Planar scene with anisotropic in-plane primitives spread over
/// `[0, extent]²`. Scales are bounded away from isotropy so rotation
/// gradients stay well-conditioned.
pub fn random_planar_scene(seed: u64, n: usize, extent: f64) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x9e37_79b9).wrapping_add(1));
    let unit = extent / 8.0;
    let primitives = (0..n as u64)
        .map(|id| {
            let sx = rng.random_range(0.6..1.4) * unit;
            let sy = sx * rng.random_range(1.25..2.2);
            GaussianPrimitive {
                id,
                position: Vector3::new(
                    rng.random_range(0.15 * extent..0.85 * extent),
                    rng.random_range(0.15 * extent..0.85 * extent),
                    rng.random_range(-1.0..1.0),
                ),
                scale: Vector3::new(sx, sy, rng.random_range(0.5..1.5) * unit),
                rotation: planar_quaternion(rng.random_range(-3.1..3.1)),
                opacity: rng.random_range(0.25..0.85),
                color: Vector3::from_fn(|_, _| rng.random_range(0.1..0.9)),
                depth: rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    Scene::new(SceneMode::Planar, primitives)
}

/// Well-conditioned random rank-2 affine camera. Views a region around the
/// standard pixel grid `[0, w]×[0, h]` in plane units.
pub fn random_affine_camera(seed: u64, width: usize, height: usize) -> CameraProjection {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x85eb_ca6b).wrapping_add(2));
    loop {
        let mut cam = CameraProjection::plane(width, height, 1.0);
        for r in 0..2 {
            for c in 0..3 {
                let base = if r == c { 1.0 } else { 0.0 };
                cam.matrix[r][c] = base + rng.random_range(-0.45..0.45);
            }
            cam.offset[r] = rng.random_range(-1.0..1.0);
        }
        if cam.validate().is_ok() {
            return cam;
        }
    }
}

/// Scene for a general affine camera: positions are chosen so their
/// projections land inside the view, with a free component along the
/// camera's null direction.
pub fn random_affine_scene(seed: u64, n: usize, cam: &CameraProjection) -> Scene {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0xc2b2_ae35).wrapping_add(3));
    let p = cam.p_matrix();
    let gram_inv = (p * p.transpose()).try_inverse().expect("rank-2 camera");
    let pinv = p.transpose() * gram_inv;
    let r0: Vector3<f64> = p.row(0).transpose();
    let r1: Vector3<f64> = p.row(1).transpose();
    let null_dir = r0.cross(&r1).normalize();
    let (w, h) = (cam.width as f64, cam.height as f64);
    let primitives = (0..n as u64)
        .map(|id| {
            let m = Vector2::new(
                rng.random_range(0.2 * w..0.8 * w) * cam.pixel_to_plane,
                rng.random_range(0.2 * h..0.8 * h) * cam.pixel_to_plane,
            );
            let position = pinv * (m - cam.b_vector()) + null_dir * rng.random_range(-1.0..1.0);
            let s0 = rng.random_range(0.5..1.2) * w / 8.0;
            GaussianPrimitive {
                id,
                position,
                scale: Vector3::new(
                    s0,
                    s0 * rng.random_range(1.25..2.0),
                    s0 * rng.random_range(0.4..0.9),
                ),
                rotation: random_unit_quaternion(&mut rng),
                opacity: rng.random_range(0.25..0.85),
                color: Vector3::from_fn(|_, _| rng.random_range(0.1..0.9)),
                depth: rng.random_range(-1.0..1.0),
            }
        })
        .collect();
    Scene::new(SceneMode::Affine3d, primitives)
}

/// Target whose per-channel residuals against the current render are at
/// least `RESIDUAL_GUARD` in magnitude, with pseudo-random signs.
pub fn guarded_target(scene: &Scene, cam: &CameraProjection, mode: RenderMode, seed: u64) -> Image {
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x27d4_eb2f).wrapping_add(4));
    let (rendered, _) = render(scene, cam, RenderOptions::exact(mode)).expect("render fixture");
    let mut target = rendered;
    for px in target.pixels.iter_mut() {
        for ch in 0..3 {
            let sign = if rng.random_range(0.0..1.0) < 0.5 {
                -1.0
            } else {
                1.0
            };
            px[ch] += sign * (RESIDUAL_GUARD + rng.random_range(0.0..0.25));
        }
    }
    target
}

/// Target scaled from the scene's own render; `factor < 1` leaves every
/// covered pixel too bright (positive residual), `factor > 1` too dim.
pub fn scaled_render_target(
    scene: &Scene,
    cam: &CameraProjection,
    mode: RenderMode,
    factor: f64,
) -> Image {
    let (rendered, _) = render(scene, cam, RenderOptions::exact(mode)).expect("render fixture");
    let mut target = rendered;
    for px in target.pixels.iter_mut() {
        *px *= factor;
    }
    target
}

/// The saddle construction: a single isotropic primitive centered between
/// two target blobs placed along the image diagonal.
///
/// Descending scale, opacity, and color to stationarity (position and
/// rotation gradients vanish by the mirror symmetries) leaves the splitting
/// matrix with exact zeros on its principal diagonal — scale stationarity
/// forces them through the identity ∂²σ/∂p_k² = 2 ∂σ/∂(s_k²) — while the
/// off-diagonal entry stays negative. The escape direction is therefore
/// invisible to every per-parameter gradient, which is precisely the trapped
/// configuration the steepest split is for.
pub struct SaddleFixture {
    pub scene: Scene,
    pub cam: CameraProjection,
    pub target: Image,
    /// Gradient norm over all parameters at the returned scene.
    pub grad_norm: f64,
}

pub fn saddle_fixture() -> SaddleFixture {
    let size = 10;
    let cam = CameraProjection::plane(size, size, 1.0);
    let c = size as f64 / 2.0;
    let blob_color = Vector3::new(0.9, 0.85, 0.8);
    let separation = 2.4;
    let diag = std::f64::consts::FRAC_1_SQRT_2;
    let blob = |id: u64, sign: f64| {
        GaussianPrimitive::axis_aligned(
            id,
            Vector3::new(
                c + sign * separation * diag,
                c + sign * separation * diag,
                0.0,
            ),
            Vector3::new(0.9, 0.9, 1.0),
            1.0,
            blob_color,
            0.0,
        )
    };
    let target_scene = Scene::new(SceneMode::Planar, vec![blob(0, -1.0), blob(1, 1.0)]);
    let (target, _) = render(
        &target_scene,
        &cam,
        RenderOptions::exact(RenderMode::Additive),
    )
    .expect("target render");

    let mut scene = Scene::new(
        SceneMode::Planar,
        vec![GaussianPrimitive::axis_aligned(
            0,
            Vector3::new(c, c, 0.0),
            Vector3::new(2.5, 2.5, 1.0),
            0.8,
            blob_color,
            0.0,
        )],
    );

    // Descend scale/opacity/color (position and rotation stay put; their
    // gradients are zero by mirror symmetry) until the configuration is
    // stationary. Adaptive step keeps this robust without tuning.
    let opts = RenderOptions::exact(RenderMode::Additive);
    let mut rate = 20.0;
    let mut last_loss = f64::INFINITY;
    for _ in 0..80_000 {
        let (_img, tape) = render(&scene, &cam, opts).expect("render");
        let grads =
            crate::diff::backprop(&scene, &cam, &target, &tape, LossKind::Squared).expect("grads");
        if grads.loss > last_loss {
            rate *= 0.5;
        } else {
            rate *= 1.02;
        }
        last_loss = grads.loss;
        let prim = &mut scene.primitives[0];
        let g_s = grads.scale[0];
        let g_o = grads.opacity[0];
        let g_c = grads.color[0];
        let gnorm2 = g_s.norm_squared() + g_o * g_o + g_c.norm_squared();
        if gnorm2 < 1e-16 {
            break;
        }
        for k in 0..3 {
            prim.scale[k] = (prim.scale[k] - rate * g_s[k]).max(0.3);
        }
        prim.opacity = (prim.opacity - rate * g_o).clamp(0.05, 1.0);
        for ch in 0..3 {
            prim.color[ch] = (prim.color[ch] - rate * g_c[ch]).clamp(0.0, 1.0);
        }
    }

    let (_, tape) = render(&scene, &cam, opts).expect("render");
    let grads =
        crate::diff::backprop(&scene, &cam, &target, &tape, LossKind::Squared).expect("grads");
    let mut norm2 = 0.0;
    for i in 0..scene.len() {
        norm2 += grads.position[i].norm_squared()
            + grads.scale[i].norm_squared()
            + grads.rotation[i].norm_squared()
            + grads.opacity[i] * grads.opacity[i]
            + grads.color[i].norm_squared();
    }
    SaddleFixture {
        scene,
        cam,
        target,
        grad_norm: norm2.sqrt(),
    }
}

/// Synthetic 64×64 training target: a composited render of a hidden seeded
/// scene, so the target is genuinely representable by a moderate mixture.
pub fn synthetic_target(kind: &str, seed: u64) -> Image {
    let size = 64;
    let cam = CameraProjection::plane(size, size, 1.0);
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_mul(0x1656_67b1).wrapping_add(5));
    let extent = size as f64;
    let mut primitives = Vec::new();
    let mut id = 0u64;
    let mut push = |p: GaussianPrimitive| primitives.push(p);
    match kind {
        // A few large soft blobs.
        "blobs" => {
            for _ in 0..7 {
                let s0 = rng.random_range(5.0..11.0);
                push(GaussianPrimitive {
                    id,
                    position: Vector3::new(
                        rng.random_range(0.15 * extent..0.85 * extent),
                        rng.random_range(0.15 * extent..0.85 * extent),
                        0.0,
                    ),
                    scale: Vector3::new(s0, s0 * rng.random_range(0.6..1.6), 4.0),
                    rotation: planar_quaternion(rng.random_range(-3.1..3.1)),
                    opacity: rng.random_range(0.55..0.95),
                    color: Vector3::from_fn(|_, _| rng.random_range(0.15..0.95)),
                    depth: rng.random_range(0.0..1.0),
                });
                id += 1;
            }
        }
        // Large cool-toned blooms, a denser arrangement than `blobs`.
        "blooms" => {
            for _ in 0..8 {
                let s0 = rng.random_range(6.0..12.0);
                push(GaussianPrimitive {
                    id,
                    position: Vector3::new(
                        rng.random_range(0.18 * extent..0.82 * extent),
                        rng.random_range(0.18 * extent..0.82 * extent),
                        0.0,
                    ),
                    scale: Vector3::new(s0, s0 * rng.random_range(0.6..1.5), 4.0),
                    rotation: planar_quaternion(rng.random_range(-3.1..3.1)),
                    opacity: rng.random_range(0.5..0.9),
                    color: Vector3::new(
                        rng.random_range(0.1..0.5),
                        rng.random_range(0.2..0.8),
                        rng.random_range(0.5..1.0),
                    ),
                    depth: rng.random_range(0.0..1.0),
                });
                id += 1;
            }
        }
        // A handful of bright spots over a dim wash.
        "sparks" => {
            push(GaussianPrimitive {
                id,
                position: Vector3::new(0.5 * extent, 0.5 * extent, 0.0),
                scale: Vector3::new(22.0, 22.0, 4.0),
                rotation: planar_quaternion(0.0),
                opacity: 0.35,
                color: Vector3::new(0.12, 0.16, 0.3),
                depth: 0.0,
            });
            id += 1;
            for _ in 0..7 {
                let s0 = rng.random_range(3.2..5.0);
                push(GaussianPrimitive {
                    id,
                    position: Vector3::new(
                        rng.random_range(0.15 * extent..0.85 * extent),
                        rng.random_range(0.15 * extent..0.85 * extent),
                        0.0,
                    ),
                    scale: Vector3::new(s0, s0 * rng.random_range(0.7..1.4), 4.0),
                    rotation: planar_quaternion(rng.random_range(-3.1..3.1)),
                    opacity: rng.random_range(0.6..0.95),
                    color: Vector3::from_fn(|_, _| rng.random_range(0.4..1.0)),
                    depth: rng.random_range(0.2..1.0),
                });
                id += 1;
            }
        }
        other => panic!("unknown synthetic target kind {other}"),
    }
    let scene = Scene::new(SceneMode::Planar, primitives);
    let (img, _) = render(&scene, &cam, RenderOptions::new(RenderMode::Composited))
        .expect("synthetic target render");
    // Clamp into the valid target range (composited output already is).
    let mut img = img;
    for px in img.pixels.iter_mut() {
        for ch in 0..3 {
            px[ch] = px[ch].clamp(0.0, 1.0);
        }
    }
    img
}

/// Projection of a scene's first primitive, convenience for pixel picking.
pub fn projected_center(scene: &Scene, cam: &CameraProjection, index: usize) -> Vector2<f64> {
    project_point(&scene.primitives[index].position, cam)
}
