//! Analytic gradients of the photometric loss and the closed-form position
//! Hessian of the projected kernel.
//!
//! The expression graph is small and fixed, so derivatives are hand-derived
//! chain rule over the render tape rather than a general autodiff system.
//! With `m = Π(p)`, `C = Π(Σ)`, `M = C⁻¹`, `d = x - m`:
//!
//! ```text
//! σ(x)        = o · exp(-½ dᵀ M d)
//! ∂σ/∂o       = σ / o
//! ∂σ/∂p       = σ · Pᵀ M d
//! ∂σ/∂Σ       = (σ/2) · (Pᵀ M d)(Pᵀ M d)ᵀ
//! ∇²_p σ(x)   = σ · (Υ Υᵀ - Pᵀ M P),   Υ = Pᵀ M d
//! ```
//!
//! The covariance gradient chains through the factored form
//! `Σ = R diag(s²) Rᵀ`; the quaternion gradient is taken in the ambient
//! 4-space and projected onto the tangent of the unit sphere, which is
//! exactly the derivative of the evaluator (it normalizes before use).

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Matrix3x2, Vector2, Vector3, Vector4};

use crate::primitives::{
    invert_spd2, project_cov, project_point, rotation_matrix, CameraProjection, GaussianPrimitive,
    Scene,
};
use crate::render::{Image, LossKind, RenderMode, RenderTape};
use crate::{Error, Result};

/// Loss derivatives with respect to every primitive parameter, plus the raw
/// per-(pixel, primitive) loss-to-output derivatives aligned with the tape.
///
/// Untaped primitives keep zero gradients. The quaternion gradient is already
/// tangent-projected.
#[derive(Debug, Clone)]
pub struct PerGaussianGrads {
    pub loss: f64,
    pub position: Vec<Vector3<f64>>,
    pub scale: Vec<Vector3<f64>>,
    pub rotation: Vec<Vector4<f64>>,
    pub opacity: Vec<f64>,
    pub color: Vec<Vector3<f64>>,
    /// Gradient with respect to the projected center `Π(p)` (view space).
    pub view_position: Vec<Vector2<f64>>,
    /// `∂L/∂σ_i` per pixel, aligned with `tape.entries`.
    pub sigma: Vec<Vec<f64>>,
    pub scene_hash: u64,
}

impl PerGaussianGrads {
    pub fn zeros(n: usize, n_pixels: usize, scene_hash: u64) -> Self {
        Self {
            loss: 0.0,
            position: vec![Vector3::zeros(); n],
            scale: vec![Vector3::zeros(); n],
            rotation: vec![Vector4::zeros(); n],
            opacity: vec![0.0; n],
            color: vec![Vector3::zeros(); n],
            view_position: vec![Vector2::zeros(); n],
            sigma: vec![Vec::new(); n_pixels],
            scene_hash,
        }
    }

    /// Adds `weight · other` into the parameter gradients (used to average
    /// over views). The per-pixel σ-derivatives are not merged; they stay
    /// per-view.
    pub fn add_scaled(&mut self, other: &PerGaussianGrads, weight: f64) {
        assert_eq!(self.position.len(), other.position.len());
        self.loss += weight * other.loss;
        for i in 0..self.position.len() {
            self.position[i] += other.position[i] * weight;
            self.scale[i] += other.scale[i] * weight;
            self.rotation[i] += other.rotation[i] * weight;
            self.opacity[i] += other.opacity[i] * weight;
            self.color[i] += other.color[i] * weight;
            self.view_position[i] += other.view_position[i] * weight;
        }
    }
}

/// Partial derivatives of the rotation matrix with respect to the normalized
/// quaternion components `[w, x, y, z]`.
fn rotation_partials(q: &Vector4<f64>) -> [Matrix3<f64>; 4] {
    let (w, x, y, z) = (q[0], q[1], q[2], q[3]);
    [
        Matrix3::new(
            0.0,
            -2.0 * z,
            2.0 * y,
            2.0 * z,
            0.0,
            -2.0 * x,
            -2.0 * y,
            2.0 * x,
            0.0,
        ),
        Matrix3::new(
            0.0,
            2.0 * y,
            2.0 * z,
            2.0 * y,
            -4.0 * x,
            -2.0 * w,
            2.0 * z,
            2.0 * w,
            -4.0 * x,
        ),
        Matrix3::new(
            -4.0 * y,
            2.0 * x,
            2.0 * w,
            2.0 * x,
            0.0,
            2.0 * z,
            -2.0 * w,
            2.0 * z,
            -4.0 * y,
        ),
        Matrix3::new(
            -4.0 * z,
            -2.0 * w,
            2.0 * x,
            2.0 * w,
            -4.0 * z,
            2.0 * y,
            2.0 * x,
            2.0 * y,
            0.0,
        ),
    ]
}

struct PrimDiffData {
    mean: Vector2<f64>,
    inv_cov: Matrix2<f64>,
    /// `Pᵀ M`, mapping plane offsets to world-position gradients.
    pt_m: Matrix3x2<f64>,
}

/// Exact reverse-mode derivatives of the chosen loss through the taped
/// render. The tape must come from a render of this same scene and camera.
pub fn backprop(
    scene: &Scene,
    cam: &CameraProjection,
    target: &Image,
    tape: &RenderTape,
    loss: LossKind,
) -> Result<PerGaussianGrads> {
    tape.check_fresh(scene)?;
    if tape.width != target.width || tape.height != target.height {
        return Err(Error::DimensionMismatch(
            tape.width,
            tape.height,
            target.width,
            target.height,
        ));
    }
    let n = scene.primitives.len();
    let n_pixels = tape.width * tape.height;
    let mut grads = PerGaussianGrads::zeros(n, n_pixels, tape.scene_hash);
    let p_matrix = cam.p_matrix();

    // Per-primitive projection data, computed lazily for taped primitives.
    let mut diff_data: Vec<Option<PrimDiffData>> = (0..n).map(|_| None).collect();
    // World-covariance gradient accumulator, converted to scale/rotation
    // gradients once per primitive at the end.
    let mut d_cov: Vec<Matrix3<f64>> = vec![Matrix3::zeros(); n];

    let normalizer = 1.0 / (3 * n_pixels) as f64;
    let mut total_loss = 0.0;

    for pix in 0..n_pixels {
        let entries = &tape.entries[pix];
        let t_pix = target.pixels[pix];

        // Reconstruct the rendered pixel from the tape.
        let mut rendered = Vector3::zeros();
        for e in entries {
            let c = scene.primitives[e.prim_index].color;
            rendered += c * (e.transmittance * e.sigma);
        }
        let mut d_pixel = Vector3::zeros();
        for ch in 0..3 {
            let residual = rendered[ch] - t_pix[ch];
            total_loss += loss.value(residual);
            d_pixel[ch] = loss.derivative(residual) * normalizer;
        }

        // dL/dσ_i per entry.
        let sigma_grads = &mut grads.sigma[pix];
        sigma_grads.resize(entries.len(), 0.0);
        match tape.mode {
            RenderMode::Additive => {
                for (slot, e) in sigma_grads.iter_mut().zip(entries) {
                    let prim = &scene.primitives[e.prim_index];
                    *slot = d_pixel.dot(&prim.color);
                    grads.color[e.prim_index] += d_pixel * e.sigma;
                }
            }
            RenderMode::Composited => {
                // Reverse scan through the transmittance recurrence:
                //   pixel += c_i T_i σ_i;  T_{i+1} = T_i (1 - σ_i).
                // g_t carries dL/dT_{i+1} while walking backwards.
                let mut g_t = 0.0;
                for (slot, e) in sigma_grads.iter_mut().zip(entries).rev() {
                    let prim = &scene.primitives[e.prim_index];
                    let direct = d_pixel.dot(&prim.color) * e.transmittance;
                    let indirect = -g_t * e.transmittance;
                    *slot = direct + indirect;
                    grads.color[e.prim_index] += d_pixel * (e.transmittance * e.sigma);
                    g_t = d_pixel.dot(&prim.color) * e.sigma + g_t * (1.0 - e.sigma);
                }
            }
        }

        // Chain each σ-derivative into the kernel parameters.
        let x = cam.pixel_center(pix / tape.width, pix % tape.width);
        for (slot, e) in sigma_grads.iter().zip(entries) {
            let g = *slot;
            let i = e.prim_index;
            let prim = &scene.primitives[i];
            if diff_data[i].is_none() {
                let cov = project_cov(&prim.covariance(), cam)?;
                let inv_cov = invert_spd2(&cov);
                diff_data[i] = Some(PrimDiffData {
                    mean: project_point(&prim.position, cam),
                    inv_cov,
                    pt_m: p_matrix.transpose() * inv_cov,
                });
            }
            let data = diff_data[i].as_ref().unwrap();
            let d = x - data.mean;
            let u2 = data.inv_cov * d;
            let u3 = data.pt_m * d;
            let sigma = e.sigma;
            grads.opacity[i] += g * (sigma / prim.opacity);
            grads.position[i] += u3 * (g * sigma);
            grads.view_position[i] += u2 * (g * sigma);
            d_cov[i] += (u3 * u3.transpose()) * (g * sigma * 0.5);
        }
    }
    grads.loss = total_loss * normalizer;

    // Convert covariance gradients to the factored parameters.
    for (i, prim) in scene.primitives.iter().enumerate() {
        if d_cov[i] == Matrix3::zeros() {
            continue;
        }
        let norm = prim.rotation.norm();
        let q_unit = prim.rotation / norm;
        let r = rotation_matrix(&prim.rotation);
        let g_cov = &d_cov[i];
        // dL/ds_k = 2 s_k · r_kᵀ (dL/dΣ) r_k  with r_k the k-th column of R.
        for k in 0..3 {
            let col: Vector3<f64> = r.column(k).into();
            grads.scale[i][k] = 2.0 * prim.scale[k] * (col.dot(&(g_cov * col)));
        }
        // dL/dR = 2 (dL/dΣ) R diag(s²), then contract with ∂R/∂q and project
        // through the normalization Jacobian (I - q qᵀ)/‖q‖.
        let d_diag = Matrix3::from_diagonal(&prim.scale.map(|s| s * s));
        let d_rot = 2.0 * g_cov * r * d_diag;
        let partials = rotation_partials(&q_unit);
        let mut g_ambient = Vector4::zeros();
        for a in 0..4 {
            g_ambient[a] = d_rot.component_mul(&partials[a]).sum();
        }
        grads.rotation[i] = (g_ambient - q_unit * q_unit.dot(&g_ambient)) / norm;
    }

    Ok(grads)
}

/// Closed-form Hessian of the projected kernel with respect to the
/// primitive's world position, `σ · (Υ Υᵀ - Pᵀ M P)` with `Υ = Pᵀ M d`.
/// Under fixed affine cameras this is exact. The result is bitwise symmetric.
pub fn position_hessian(
    prim: &GaussianPrimitive,
    cam: &CameraProjection,
    x: &Vector2<f64>,
) -> Result<Matrix3<f64>> {
    let cov = project_cov(&prim.covariance(), cam)?;
    let inv_cov = invert_spd2(&cov);
    let p_matrix: Matrix2x3<f64> = cam.p_matrix();
    let d = x - project_point(&prim.position, cam);
    let q = (d.transpose() * inv_cov * d)[(0, 0)];
    let sigma = prim.opacity * (-0.5 * q).exp();
    let upsilon = p_matrix.transpose() * inv_cov * d;
    let curvature = p_matrix.transpose() * inv_cov * p_matrix;
    let mut h = Matrix3::zeros();
    for a in 0..3 {
        for b in 0..=a {
            // Entry-wise symmetric assembly keeps the result bitwise
            // symmetric regardless of the multiply order above.
            let outer = upsilon[a] * upsilon[b];
            let k = 0.5 * (curvature[(a, b)] + curvature[(b, a)]);
            let v = sigma * (outer - k);
            h[(a, b)] = v;
            h[(b, a)] = v;
        }
    }
    Ok(h)
}
