//! Independent brute-force oracles for the analytic machinery.
//!
//! Everything here checks the hand-derived code by a slower, independent
//! route: central finite differences for derivatives, exact scene expansion
//! plus re-rendering for post-split losses, and characteristic-polynomial
//! bisection for eigenvalues. The oracles drive only scene mutation, the
//! renderer, and the loss — never the analytic path they are checking.

use nalgebra::{Matrix3, Vector2, Vector3};

use crate::density::eval_split_characteristic;
use crate::diff::{backprop, PerGaussianGrads};
use crate::primitives::{eval_projected_sigma, CameraProjection, GaussianPrimitive, PrimId, Scene};
use crate::render::{render, Image, LossKind, RenderMode, RenderOptions};
use crate::{Error, Result};

pub mod checks;

/// Finite-difference step for a parameter of magnitude `value`: relative,
/// with an absolute floor so tiny parameters still move.
pub fn fd_step(h: f64, value: f64) -> f64 {
    (h * value.abs()).max(1e-6)
}

fn loss_of(
    scene: &Scene,
    cam: &CameraProjection,
    target: &Image,
    mode: RenderMode,
    loss: LossKind,
) -> Result<f64> {
    let (img, _) = render(scene, cam, RenderOptions::exact(mode))?;
    crate::render::loss_value(loss, &img, target)
}

/// Central finite differences of the loss for every scalar parameter of
/// every primitive. The σ-channel and view-space fields stay empty.
pub fn fd_gradient(
    scene: &Scene,
    cam: &CameraProjection,
    target: &Image,
    h: f64,
    mode: RenderMode,
    loss: LossKind,
) -> Result<PerGaussianGrads> {
    let n = scene.primitives.len();
    let mut grads = PerGaussianGrads::zeros(n, 0, scene.content_hash());
    let mut probe = scene.clone();
    let central =
        |probe: &mut Scene, set: &mut dyn FnMut(&mut Scene, f64), base: f64| -> Result<f64> {
            let step = fd_step(h, base);
            set(probe, base + step);
            let plus = loss_of(probe, cam, target, mode, loss)?;
            set(probe, base - step);
            let minus = loss_of(probe, cam, target, mode, loss)?;
            set(probe, base);
            Ok((plus - minus) / (2.0 * step))
        };
    for i in 0..n {
        for k in 0..3 {
            let base = scene.primitives[i].position[k];
            grads.position[i][k] = central(
                &mut probe,
                &mut |s, v| s.primitives[i].position[k] = v,
                base,
            )?;
        }
        for k in 0..3 {
            let base = scene.primitives[i].scale[k];
            grads.scale[i][k] =
                central(&mut probe, &mut |s, v| s.primitives[i].scale[k] = v, base)?;
        }
        for k in 0..4 {
            let base = scene.primitives[i].rotation[k];
            grads.rotation[i][k] = central(
                &mut probe,
                &mut |s, v| s.primitives[i].rotation[k] = v,
                base,
            )?;
        }
        {
            let base = scene.primitives[i].opacity;
            grads.opacity[i] = central(&mut probe, &mut |s, v| s.primitives[i].opacity = v, base)?;
        }
        for k in 0..3 {
            let base = scene.primitives[i].color[k];
            grads.color[i][k] =
                central(&mut probe, &mut |s, v| s.primitives[i].color[k] = v, base)?;
        }
    }
    Ok(grads)
}

/// Central second differences of the projected kernel in the primitive's
/// world position, symmetrized.
pub fn fd_position_hessian(
    prim: &GaussianPrimitive,
    cam: &CameraProjection,
    x: &Vector2<f64>,
    h: f64,
) -> Result<Matrix3<f64>> {
    let eval = |p: Vector3<f64>| -> Result<f64> {
        let mut probe = prim.clone();
        probe.position = p;
        eval_projected_sigma(x, &probe, cam)
    };
    let p0 = prim.position;
    let f0 = eval(p0)?;
    // The kernel width is the natural length unit here: position enters the
    // kernel only through x - Π(p), so coordinate magnitudes are irrelevant
    // and second differences want a step proportional to the width.
    let rms_width = (prim.covariance().trace() / 3.0).sqrt();
    let step = (h * rms_width).max(1e-6);
    let steps = Vector3::new(step, step, step);
    let mut hess = Matrix3::zeros();
    for a in 0..3 {
        let mut e = Vector3::zeros();
        e[a] = steps[a];
        let plus = eval(p0 + e)?;
        let minus = eval(p0 - e)?;
        hess[(a, a)] = (plus - 2.0 * f0 + minus) / (steps[a] * steps[a]);
    }
    for a in 0..3 {
        for b in 0..a {
            let (mut ea, mut eb) = (Vector3::zeros(), Vector3::zeros());
            ea[a] = steps[a];
            eb[b] = steps[b];
            let pp = eval(p0 + ea + eb)?;
            let pm = eval(p0 + ea - eb)?;
            let mp = eval(p0 - ea + eb)?;
            let mm = eval(p0 - ea - eb)?;
            let v = (pp - pm - mp + mm) / (4.0 * steps[a] * steps[b]);
            hess[(a, b)] = v;
            hess[(b, a)] = v;
        }
    }
    Ok(hess)
}

/// One primitive's split plan: `m` offspring at `θ + ε(μ + δ_j)` with
/// opacities `w_j · o`.
#[derive(Debug, Clone)]
pub struct SplitSpec {
    pub target_id: PrimId,
    /// Opacity reweighting coefficients, positive, summing to 1.
    pub weights: Vec<f64>,
    /// Per-offspring offsets with zero weighted mean, each of norm ≤ 1.
    pub offsets: Vec<Vector3<f64>>,
    /// Shared mean shift applied to all offspring.
    pub mean_shift: Vector3<f64>,
    /// Neighborhood scale multiplying both the mean shift and the offsets.
    pub eps: f64,
}

impl SplitSpec {
    /// The steepest split: two offspring at ±direction, half weight each.
    pub fn steepest(target_id: PrimId, direction: Vector3<f64>, eps: f64) -> Self {
        Self {
            target_id,
            weights: vec![0.5, 0.5],
            offsets: vec![direction, -direction],
            mean_shift: Vector3::zeros(),
            eps,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let err = |msg: String| Err(Error::InvalidSplitSpec(msg));
        if self.weights.len() != self.offsets.len() || self.weights.is_empty() {
            return err("weights and offsets must be non-empty and parallel".into());
        }
        if self.weights.iter().any(|&w| w <= 0.0) {
            return err("weights must be positive".into());
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-9 {
            return err(format!("weights sum to {sum}, expected 1"));
        }
        let mut mean = Vector3::zeros();
        for (w, d) in self.weights.iter().zip(&self.offsets) {
            mean += d * *w;
        }
        if mean.amax() > 1e-9 {
            return err(format!("weighted offset mean {mean:?} is not zero"));
        }
        if self.offsets.iter().any(|d| d.norm() > 1.0 + 1e-12) {
            return err("offsets must have norm at most 1".into());
        }
        Ok(())
    }
}

/// Materialize the post-split scene. The target primitive is replaced in
/// place by its offspring; everything else is untouched.
pub fn apply_split_spec(scene: &Scene, spec: &SplitSpec) -> Result<Scene> {
    spec.validate()?;
    let index = scene
        .primitives
        .iter()
        .position(|p| p.id == spec.target_id)
        .ok_or(Error::UnknownPrimitive(spec.target_id))?;
    let mut out = scene.clone();
    let parent = out.primitives.remove(index);
    let base_id = scene.next_id();
    for (j, (w, delta)) in spec.weights.iter().zip(&spec.offsets).enumerate() {
        let mut child = parent.clone();
        child.id = base_id + j as PrimId;
        child.position = parent.position + (spec.mean_shift + delta) * spec.eps;
        child.opacity = w * parent.opacity;
        out.primitives.insert(index + j, child);
    }
    Ok(out)
}

/// Exact post-split loss: expand the scene, render additively, evaluate the
/// loss. No Taylor approximation anywhere.
pub fn brute_force_split_loss(
    scene: &Scene,
    spec: &SplitSpec,
    cam: &CameraProjection,
    target: &Image,
    loss: LossKind,
) -> Result<f64> {
    let expanded = apply_split_spec(scene, spec)?;
    loss_of(&expanded, cam, target, RenderMode::Additive, loss)
}

/// Splitting matrix of one primitive from a single additive render:
/// the pixel-measure mean of (∂ℓ/∂σ) · ∇²_p σ.
fn split_matrix_one_step(
    scene: &Scene,
    cam: &CameraProjection,
    target: &Image,
    index: usize,
    loss: LossKind,
) -> Result<Matrix3<f64>> {
    let (_, tape) = render(scene, cam, RenderOptions::exact(RenderMode::Additive))?;
    let grads = backprop(scene, cam, target, &tape, loss)?;
    let mut s = Matrix3::zeros();
    for (pix, entries) in tape.entries.iter().enumerate() {
        let x = cam.pixel_center(pix / tape.width, pix % tape.width);
        for (e, g) in entries.iter().zip(&grads.sigma[pix]) {
            if e.prim_index == index {
                s += crate::diff::position_hessian(&scene.primitives[index], cam, &x)? * *g;
            }
        }
    }
    Ok(s)
}

/// Difference between the exact post-split loss and its second-order model
///
/// ```text
/// L(θ) + ∇Lᵀ(εμ) + ½ (εμ)ᵀ ∇²L (εμ) + ½ Σ_j w_j (εδ_j)ᵀ S (εδ_j)
/// ```
///
/// where `∇²L` is the position block obtained by central differences of the
/// analytic gradient. Requires the smooth loss; shrinks cubically in ε for
/// specs within a unit neighborhood.
pub fn split_model_residual(
    scene: &Scene,
    spec: &SplitSpec,
    cam: &CameraProjection,
    target: &Image,
    eps: f64,
    loss: LossKind,
) -> Result<f64> {
    if loss == LossKind::L1 {
        return Err(Error::NonSmoothLoss);
    }
    spec.validate()?;
    let index = scene
        .primitives
        .iter()
        .position(|p| p.id == spec.target_id)
        .ok_or(Error::UnknownPrimitive(spec.target_id))?;
    let opts = RenderOptions::exact(RenderMode::Additive);

    let (img0, tape0) = render(scene, cam, opts)?;
    let loss0 = crate::render::loss_value(loss, &img0, target)?;
    let grads0 = backprop(scene, cam, target, &tape0, loss)?;

    // Position block of the full loss Hessian by central differences of the
    // analytic gradient.
    let mut hess = Matrix3::zeros();
    let mut probe = scene.clone();
    for k in 0..3 {
        let base = scene.primitives[index].position[k];
        let step = fd_step(1e-4, base);
        probe.primitives[index].position[k] = base + step;
        let (_, tp) = render(&probe, cam, opts)?;
        let gp = backprop(&probe, cam, target, &tp, loss)?.position[index];
        probe.primitives[index].position[k] = base - step;
        let (_, tm) = render(&probe, cam, opts)?;
        let gm = backprop(&probe, cam, target, &tm, loss)?.position[index];
        probe.primitives[index].position[k] = base;
        let col = (gp - gm) / (2.0 * step);
        for r in 0..3 {
            hess[(r, k)] = col[r];
        }
    }
    hess = 0.5 * (hess + hess.transpose());

    let split_matrix = split_matrix_one_step(scene, cam, target, index, loss)?;

    let mu = spec.mean_shift * eps;
    let scaled: Vec<Vector3<f64>> = spec.offsets.iter().map(|d| d * eps).collect();
    let characteristic = eval_split_characteristic(&scaled, &spec.weights, &split_matrix)?;
    let predicted =
        loss0 + grads0.position[index].dot(&mu) + 0.5 * mu.dot(&(hess * mu)) + characteristic;

    let mut scaled_spec = spec.clone();
    scaled_spec.eps = eps;
    let actual = brute_force_split_loss(scene, &scaled_spec, cam, target, loss)?;
    Ok((actual - predicted).abs())
}

/// Eigenvalues of a symmetric 3×3 matrix by bisection on the characteristic
/// polynomial plus quadratic deflation, ascending. Independent of the
/// closed-form solver.
pub fn eig3_charpoly_oracle(a: &Matrix3<f64>) -> [f64; 3] {
    let a = 0.5 * (a + a.transpose());
    let tr = a.trace();
    let tr2 = (a * a).trace();
    let m = 0.5 * (tr * tr - tr2);
    let det = a.determinant();
    // det(A - λI) = -λ³ + tr λ² - m λ + det
    let poly = |l: f64| -> f64 { ((-l + tr) * l - m) * l + det };
    // Gershgorin bounds.
    let mut lo = f64::INFINITY;
    let mut hi = f64::NEG_INFINITY;
    for i in 0..3 {
        let radius: f64 = (0..3).filter(|&j| j != i).map(|j| a[(i, j)].abs()).sum();
        lo = lo.min(a[(i, i)] - radius);
        hi = hi.max(a[(i, i)] + radius);
    }
    let (mut lo, mut hi) = (lo - 1.0, hi + 1.0);
    debug_assert!(poly(lo) > 0.0 && poly(hi) < 0.0);
    for _ in 0..200 {
        let mid = 0.5 * (lo + hi);
        if poly(mid) > 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    let r = 0.5 * (lo + hi);
    // Deflate: -λ³ + tr λ² - m λ + det = (λ - r)(-λ² + βλ + γ), then the
    // remaining roots solve λ² - βλ - γ = 0.
    let beta = tr - r;
    let gamma = beta * r - m;
    let disc = (beta * beta + 4.0 * gamma).max(0.0).sqrt();
    let mut roots = [r, 0.5 * (beta - disc), 0.5 * (beta + disc)];
    roots.sort_by(|x, y| x.partial_cmp(y).unwrap());
    roots
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::fixtures::{
        guarded_target, random_affine_camera, random_affine_scene, random_planar_scene,
    };
    use approx::assert_relative_eq;
    use nalgebra::Vector4;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn fd_gradient_is_zero_on_perfect_fit() {
        // Smooth loss: at an exact fit the absolute-error loss sits on its
        // kink and central differences would measure curvature noise.
        let scene = random_planar_scene(51, 3, 12.0);
        let cam = CameraProjection::plane(12, 12, 1.0);
        let (target, _) = render(&scene, &cam, RenderOptions::exact(RenderMode::Additive)).unwrap();
        let fd = fd_gradient(
            &scene,
            &cam,
            &target,
            1e-5,
            RenderMode::Additive,
            LossKind::Squared,
        )
        .unwrap();
        for i in 0..scene.len() {
            assert!(fd.position[i].amax() < 1e-9);
            assert!(fd.scale[i].amax() < 1e-9);
            assert!(fd.opacity[i].abs() < 1e-9);
            assert!(fd.color[i].amax() < 1e-9);
        }
    }

    #[test]
    fn fd_gradient_is_exact_on_quadratic_in_opacity() {
        // Additive render is linear in opacity, so the squared loss is an
        // exact quadratic there and central differences have no truncation
        // error.
        let scene = random_planar_scene(52, 2, 10.0);
        let cam = CameraProjection::plane(10, 10, 1.0);
        let target = guarded_target(&scene, &cam, RenderMode::Additive, 52);
        let fd = fd_gradient(
            &scene,
            &cam,
            &target,
            1e-3,
            RenderMode::Additive,
            LossKind::Squared,
        )
        .unwrap();
        let fd_small = fd_gradient(
            &scene,
            &cam,
            &target,
            1e-6,
            RenderMode::Additive,
            LossKind::Squared,
        )
        .unwrap();
        for i in 0..scene.len() {
            assert_relative_eq!(fd.opacity[i], fd_small.opacity[i], max_relative = 1e-7);
        }
    }

    /// Relative disagreement between two gradient sets, per parameter group.
    fn group_errors(a: &PerGaussianGrads, b: &PerGaussianGrads) -> [f64; 5] {
        let n = a.position.len();
        let mut num = [0.0f64; 5];
        let mut den = [0.0f64; 5];
        for i in 0..n {
            num[0] += (a.position[i] - b.position[i]).norm_squared();
            den[0] += b.position[i].norm_squared();
            num[1] += (a.scale[i] - b.scale[i]).norm_squared();
            den[1] += b.scale[i].norm_squared();
            num[2] += (a.rotation[i] - b.rotation[i]).norm_squared();
            den[2] += b.rotation[i].norm_squared();
            num[3] += (a.opacity[i] - b.opacity[i]).powi(2);
            den[3] += b.opacity[i].powi(2);
            num[4] += (a.color[i] - b.color[i]).norm_squared();
            den[4] += b.color[i].norm_squared();
        }
        let mut out = [0.0; 5];
        for g in 0..5 {
            out[g] = num[g].sqrt() / (1e-12 + den[g].sqrt());
        }
        out
    }

    #[test]
    fn backprop_matches_fd_on_planar_and_affine_scenes() {
        for seed in 0..6u64 {
            let (scene, cam) = if seed % 2 == 0 {
                (
                    random_planar_scene(seed, 4, 10.0),
                    CameraProjection::plane(10, 10, 1.0),
                )
            } else {
                let cam = random_affine_camera(seed, 10, 10);
                (random_affine_scene(seed, 4, &cam), cam)
            };
            let mode = if seed % 4 < 2 {
                RenderMode::Additive
            } else {
                RenderMode::Composited
            };
            let target = guarded_target(&scene, &cam, mode, seed);
            let (_, tape) = render(&scene, &cam, RenderOptions::exact(mode)).unwrap();
            let analytic = backprop(&scene, &cam, &target, &tape, LossKind::L1).unwrap();
            let fd = fd_gradient(&scene, &cam, &target, 1e-5, mode, LossKind::L1).unwrap();
            let errors = group_errors(&analytic, &fd);
            for (g, err) in errors.iter().enumerate() {
                assert!(
                    *err < 1e-4,
                    "seed {seed} group {g} relative error {err:.3e}"
                );
            }
        }
    }

    #[test]
    fn fd_hessian_matches_analytic_on_random_configurations() {
        let mut rng = ChaCha8Rng::seed_from_u64(53);
        for seed in 0..10u64 {
            let cam = random_affine_camera(seed, 8, 8);
            let scene = random_affine_scene(seed, 1, &cam);
            let prim = &scene.primitives[0];
            let x = Vector2::new(rng.random_range(1.0..7.0), rng.random_range(1.0..7.0));
            let analytic = crate::diff::position_hessian(prim, &cam, &x).unwrap();
            let fd = fd_position_hessian(prim, &cam, &x, 1e-4).unwrap();
            let err = (analytic - fd).norm() / (1e-12 + fd.norm());
            assert!(err < 1e-5, "seed {seed} hessian error {err:.3e}");
        }
    }

    #[test]
    fn split_spec_validation_and_expansion_oracle() {
        let scene = random_planar_scene(54, 3, 10.0);
        let cam = CameraProjection::plane(10, 10, 1.0);
        let target = guarded_target(&scene, &cam, RenderMode::Additive, 54);

        let bad = SplitSpec {
            target_id: 1,
            weights: vec![0.7, 0.7],
            offsets: vec![Vector3::x(), -Vector3::x()],
            mean_shift: Vector3::zeros(),
            eps: 0.1,
        };
        assert!(matches!(bad.validate(), Err(Error::InvalidSplitSpec(_))));

        let spec = SplitSpec {
            target_id: 1,
            weights: vec![0.25, 0.25, 0.5],
            offsets: vec![
                Vector3::new(0.8, 0.0, 0.0),
                Vector3::new(0.0, 0.8, 0.0),
                Vector3::new(-0.4, -0.4, 0.0),
            ],
            mean_shift: Vector3::new(0.3, -0.2, 0.0),
            eps: 0.25,
        };
        spec.validate().unwrap();

        // Oracle: build the expanded scene by hand and render it.
        let parent = scene.primitives[1].clone();
        let mut manual = scene.clone();
        manual.primitives.remove(1);
        for (j, (w, d)) in spec.weights.iter().zip(&spec.offsets).enumerate() {
            let mut child = parent.clone();
            child.id = 100 + j as u64;
            child.position = parent.position + (spec.mean_shift + d) * spec.eps;
            child.opacity = w * parent.opacity;
            manual.primitives.insert(1 + j, child);
        }
        let (img, _) = render(&manual, &cam, RenderOptions::exact(RenderMode::Additive)).unwrap();
        let want = crate::render::photometric_loss(&img, &target).unwrap();
        let got = brute_force_split_loss(&scene, &spec, &cam, &target, LossKind::L1).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-14);

        // ε = 0 leaves the loss exactly unchanged: offspring coincide with
        // the parent and the weights sum to 1.
        let mut zero = spec.clone();
        zero.eps = 0.0;
        let (base_img, _) =
            render(&scene, &cam, RenderOptions::exact(RenderMode::Additive)).unwrap();
        let base = crate::render::photometric_loss(&base_img, &target).unwrap();
        let at_zero = brute_force_split_loss(&scene, &zero, &cam, &target, LossKind::L1).unwrap();
        assert_relative_eq!(at_zero, base, max_relative = 1e-12);
    }

    #[test]
    fn single_offspring_spec_is_a_translation() {
        let scene = random_planar_scene(55, 3, 10.0);
        let cam = CameraProjection::plane(10, 10, 1.0);
        let target = guarded_target(&scene, &cam, RenderMode::Additive, 55);
        let shift = Vector3::new(0.4, -0.7, 0.0);
        let spec = SplitSpec {
            target_id: 2,
            weights: vec![1.0],
            offsets: vec![Vector3::zeros()],
            mean_shift: shift,
            eps: 0.5,
        };
        let got = brute_force_split_loss(&scene, &spec, &cam, &target, LossKind::L1).unwrap();
        let mut translated = scene.clone();
        let idx = translated
            .primitives
            .iter()
            .position(|p| p.id == 2)
            .unwrap();
        translated.primitives[idx].position += shift * 0.5;
        let (img, _) = render(
            &translated,
            &cam,
            RenderOptions::exact(RenderMode::Additive),
        )
        .unwrap();
        let want = crate::render::photometric_loss(&img, &target).unwrap();
        assert_relative_eq!(got, want, max_relative = 1e-14);
    }

    #[test]
    fn split_model_residual_zero_at_zero_eps_and_rejects_l1() {
        let scene = random_planar_scene(56, 3, 10.0);
        let cam = CameraProjection::plane(10, 10, 1.0);
        let target = guarded_target(&scene, &cam, RenderMode::Additive, 56);
        let spec = SplitSpec::steepest(0, Vector3::new(1.0, 0.0, 0.0), 0.1);
        assert!(matches!(
            split_model_residual(&scene, &spec, &cam, &target, 0.1, LossKind::L1),
            Err(Error::NonSmoothLoss)
        ));
        let r0 =
            split_model_residual(&scene, &spec, &cam, &target, 0.0, LossKind::Squared).unwrap();
        assert!(r0 < 1e-12, "residual at eps 0 was {r0}");
    }

    #[test]
    fn charpoly_oracle_matches_known_eigenvalues() {
        let a = Matrix3::from_diagonal(&Vector3::new(-2.0, 0.5, 4.0));
        let roots = eig3_charpoly_oracle(&a);
        assert_relative_eq!(roots[0], -2.0, epsilon = 1e-12);
        assert_relative_eq!(roots[1], 0.5, epsilon = 1e-12);
        assert_relative_eq!(roots[2], 4.0, epsilon = 1e-12);

        // Rotation-conjugated diagonal keeps the eigenvalues.
        let q = Vector4::new(0.5, -0.5, 0.5, 0.5);
        let r = crate::primitives::rotation_matrix(&q);
        let b = r * a * r.transpose();
        let roots = eig3_charpoly_oracle(&b);
        assert_relative_eq!(roots[0], -2.0, epsilon = 1e-10);
        assert_relative_eq!(roots[2], 4.0, epsilon = 1e-10);
    }
}
