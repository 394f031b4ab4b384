//! Gaussian primitives, affine cameras, and projected kernel evaluation.
//!
//! A primitive is an anisotropic Gaussian kernel scaled by an opacity in
//! [0, 1]. Its covariance is stored factored as per-axis standard deviations
//! plus a unit quaternion, so the reconstructed matrix
//! `Σ = R diag(s²) Rᵀ` is positive-definite by construction.
//!
//! Cameras are fixed affine maps `Π(x) = P x + b` with a 2×3 matrix `P`.
//! Applied to a covariance, `Π(Σ) = P Σ Pᵀ`. The projected kernel at a
//! 2D point `x` is
//!
//! ```text
//! σ(x) = o · exp(-½ (x - Π(p))ᵀ Π(Σ)⁻¹ (x - Π(p)))
//! ```
//!
//! The planar ("2D") mode uses `P = [I₂|0]`, `b = 0` and in-plane rotations
//! only, which makes the projected kernel an exact 2D Gaussian.

use nalgebra::{Matrix2, Matrix2x3, Matrix3, Vector2, Vector3, Vector4};
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Determinant below which a projected 2×2 covariance counts as collapsed.
pub const DEGENERATE_DET: f64 = 1e-12;

/// Tolerance on the unit-norm constraint of stored quaternions.
pub const QUAT_NORM_TOL: f64 = 1e-9;

pub type PrimId = u64;

/// One Gaussian primitive.
///
/// `rotation` is a unit quaternion stored as `[w, x, y, z]`. `depth` is the
/// compositing sort key; it does not affect the kernel itself.
#[derive(Debug, Clone, PartialEq)]
pub struct GaussianPrimitive {
    pub id: PrimId,
    pub position: Vector3<f64>,
    /// Per-axis standard deviations, strictly positive.
    pub scale: Vector3<f64>,
    pub rotation: Vector4<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    pub depth: f64,
}

impl GaussianPrimitive {
    /// An axis-aligned primitive with identity rotation.
    pub fn axis_aligned(
        id: PrimId,
        position: Vector3<f64>,
        scale: Vector3<f64>,
        opacity: f64,
        color: Vector3<f64>,
        depth: f64,
    ) -> Self {
        Self {
            id,
            position,
            scale,
            rotation: Vector4::new(1.0, 0.0, 0.0, 0.0),
            opacity,
            color,
            depth,
        }
    }

    /// Rotation matrix of the (normalized) stored quaternion.
    pub fn rotation_matrix(&self) -> Matrix3<f64> {
        rotation_matrix(&self.rotation)
    }

    /// Reconstructed world covariance `R diag(s²) Rᵀ`.
    pub fn covariance(&self) -> Matrix3<f64> {
        let r = self.rotation_matrix();
        let d = Matrix3::from_diagonal(&self.scale.map(|s| s * s));
        r * d * r.transpose()
    }

    pub fn validate(&self, mode: SceneMode) -> Result<()> {
        let fail = |reason: String| Error::InvalidPrimitive {
            id: self.id,
            reason,
        };
        if !(self.scale.x > 0.0 && self.scale.y > 0.0 && self.scale.z > 0.0) {
            return Err(fail(format!(
                "scale must be positive, got {:?}",
                self.scale
            )));
        }
        if (self.rotation.norm() - 1.0).abs() > QUAT_NORM_TOL {
            return Err(fail(format!(
                "quaternion norm {} outside 1 ± {QUAT_NORM_TOL:e}",
                self.rotation.norm()
            )));
        }
        if !(0.0..=1.0).contains(&self.opacity) {
            return Err(fail(format!("opacity {} outside [0, 1]", self.opacity)));
        }
        for ch in 0..3 {
            if !(0.0..=1.0).contains(&self.color[ch]) {
                return Err(fail(format!("color channel {ch} outside [0, 1]")));
            }
        }
        if !self.depth.is_finite() {
            return Err(fail("depth must be finite".into()));
        }
        if mode == SceneMode::Planar {
            // In-plane rotation only: quaternion of the form (w, 0, 0, z).
            if self.rotation[1].abs() > QUAT_NORM_TOL || self.rotation[2].abs() > QUAT_NORM_TOL {
                return Err(fail(
                    "planar mode requires an in-plane rotation (w, 0, 0, z)".into(),
                ));
            }
        }
        Ok(())
    }
}

/// Rotation matrix of a quaternion `[w, x, y, z]`, normalized first.
pub fn rotation_matrix(q: &Vector4<f64>) -> Matrix3<f64> {
    let n = q.norm();
    let (w, x, y, z) = (q[0] / n, q[1] / n, q[2] / n, q[3] / n);
    Matrix3::new(
        1.0 - 2.0 * (y * y + z * z),
        2.0 * (x * y - w * z),
        2.0 * (x * z + w * y),
        2.0 * (x * y + w * z),
        1.0 - 2.0 * (x * x + z * z),
        2.0 * (y * z - w * x),
        2.0 * (x * z - w * y),
        2.0 * (y * z + w * x),
        1.0 - 2.0 * (x * x + y * y),
    )
}

/// Quaternion `[w, 0, 0, z]` for an in-plane rotation by `angle`.
pub fn planar_quaternion(angle: f64) -> Vector4<f64> {
    Vector4::new((0.5 * angle).cos(), 0.0, 0.0, (0.5 * angle).sin())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum SceneMode {
    /// `P = [I₂|0]`, in-plane rotations; the third position coordinate is a
    /// free depth key.
    #[serde(rename = "2d")]
    Planar,
    /// Arbitrary rank-2 affine cameras.
    #[serde(rename = "3d-affine")]
    Affine3d,
}

/// Ordered list of primitives plus the projection mode they live in.
#[derive(Debug, Clone, PartialEq)]
pub struct Scene {
    pub mode: SceneMode,
    pub primitives: Vec<GaussianPrimitive>,
}

impl Scene {
    pub fn new(mode: SceneMode, primitives: Vec<GaussianPrimitive>) -> Self {
        Self { mode, primitives }
    }

    pub fn len(&self) -> usize {
        self.primitives.len()
    }

    pub fn is_empty(&self) -> bool {
        self.primitives.is_empty()
    }

    pub fn validate(&self) -> Result<()> {
        let mut ids: Vec<PrimId> = self.primitives.iter().map(|p| p.id).collect();
        ids.sort_unstable();
        ids.dedup();
        if ids.len() != self.primitives.len() {
            return Err(Error::InvalidScene("duplicate primitive ids".into()));
        }
        for prim in &self.primitives {
            prim.validate(self.mode)?;
        }
        Ok(())
    }

    /// Smallest id strictly greater than every live id.
    pub fn next_id(&self) -> PrimId {
        self.primitives.iter().map(|p| p.id + 1).max().unwrap_or(0)
    }

    /// Content fingerprint used to detect stale tapes. Hashes every
    /// parameter's bit pattern, so any mutation changes it.
    pub fn content_hash(&self) -> u64 {
        let mut h = Fnv::new();
        h.write_u64(match self.mode {
            SceneMode::Planar => 2,
            SceneMode::Affine3d => 3,
        });
        for p in &self.primitives {
            h.write_u64(p.id);
            for v in [
                p.position.x,
                p.position.y,
                p.position.z,
                p.scale.x,
                p.scale.y,
                p.scale.z,
                p.rotation[0],
                p.rotation[1],
                p.rotation[2],
                p.rotation[3],
                p.opacity,
                p.color.x,
                p.color.y,
                p.color.z,
                p.depth,
            ] {
                h.write_u64(v.to_bits());
            }
        }
        h.finish()
    }

    pub fn to_json(&self) -> Result<String> {
        let file: SceneFile = self.into();
        Ok(serde_json::to_string_pretty(&file)?)
    }

    /// Parses and validates a scene document.
    pub fn from_json(text: &str) -> Result<Self> {
        let file: SceneFile = serde_json::from_str(text)?;
        let scene: Scene = file.try_into()?;
        scene.validate()?;
        Ok(scene)
    }
}

/// FNV-1a, enough for change detection.
struct Fnv(u64);

impl Fnv {
    fn new() -> Self {
        Fnv(0xcbf2_9ce4_8422_2325)
    }
    fn write_u64(&mut self, v: u64) {
        for byte in v.to_le_bytes() {
            self.0 ^= byte as u64;
            self.0 = self.0.wrapping_mul(0x0000_0100_0000_01b3);
        }
    }
    fn finish(&self) -> u64 {
        self.0
    }
}

/// Serialized scene document: `{mode, primitives: [{id, p, s, q, o, c, depth}]}`.
#[derive(Serialize, Deserialize)]
struct SceneFile {
    mode: SceneMode,
    primitives: Vec<PrimitiveRecord>,
}

#[derive(Serialize, Deserialize)]
struct PrimitiveRecord {
    id: PrimId,
    p: [f64; 3],
    s: [f64; 3],
    q: [f64; 4],
    o: f64,
    c: [f64; 3],
    depth: f64,
}

impl From<&Scene> for SceneFile {
    fn from(scene: &Scene) -> Self {
        SceneFile {
            mode: scene.mode,
            primitives: scene
                .primitives
                .iter()
                .map(|p| PrimitiveRecord {
                    id: p.id,
                    p: p.position.into(),
                    s: p.scale.into(),
                    q: p.rotation.into(),
                    o: p.opacity,
                    c: p.color.into(),
                    depth: p.depth,
                })
                .collect(),
        }
    }
}

impl TryFrom<SceneFile> for Scene {
    type Error = Error;
    fn try_from(file: SceneFile) -> Result<Self> {
        Ok(Scene {
            mode: file.mode,
            primitives: file
                .primitives
                .into_iter()
                .map(|r| GaussianPrimitive {
                    id: r.id,
                    position: r.p.into(),
                    scale: r.s.into(),
                    rotation: r.q.into(),
                    opacity: r.o,
                    color: r.c.into(),
                    depth: r.depth,
                })
                .collect(),
        })
    }
}

/// Fixed affine world-to-image map `Π(x) = P x + b`.
///
/// Pixel `(row, col)` samples the image plane at its center,
/// `((col + 0.5) · pixel_to_plane, (row + 0.5) · pixel_to_plane)`.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CameraProjection {
    /// 2×3 projection matrix `P`, row-major rows.
    pub matrix: [[f64; 3]; 2],
    /// Offset `b`.
    pub offset: [f64; 2],
    pub width: usize,
    pub height: usize,
    pub pixel_to_plane: f64,
}

impl CameraProjection {
    /// The canonical planar camera: `P = [I₂|0]`, `b = 0`.
    pub fn plane(width: usize, height: usize, pixel_to_plane: f64) -> Self {
        Self {
            matrix: [[1.0, 0.0, 0.0], [0.0, 1.0, 0.0]],
            offset: [0.0, 0.0],
            width,
            height,
            pixel_to_plane,
        }
    }

    pub fn p_matrix(&self) -> Matrix2x3<f64> {
        Matrix2x3::new(
            self.matrix[0][0],
            self.matrix[0][1],
            self.matrix[0][2],
            self.matrix[1][0],
            self.matrix[1][1],
            self.matrix[1][2],
        )
    }

    pub fn b_vector(&self) -> Vector2<f64> {
        Vector2::new(self.offset[0], self.offset[1])
    }

    /// Rank-2 check: `P Pᵀ` must be comfortably invertible relative to the
    /// row scale. Run at load time.
    pub fn validate(&self) -> Result<()> {
        let p = self.p_matrix();
        let gram = p * p.transpose();
        let scale = gram.trace().max(f64::MIN_POSITIVE);
        if gram.determinant() <= 1e-12 * scale * scale {
            return Err(Error::RankDeficientCamera);
        }
        if self.width == 0 || self.height == 0 {
            return Err(Error::InvalidConfig(
                "image dimensions must be nonzero".into(),
            ));
        }
        if !(self.pixel_to_plane.is_finite() && self.pixel_to_plane > 0.0) {
            return Err(Error::InvalidConfig(
                "pixel_to_plane must be positive".into(),
            ));
        }
        Ok(())
    }

    /// Image-plane sample point of pixel `(row, col)`.
    pub fn pixel_center(&self, row: usize, col: usize) -> Vector2<f64> {
        Vector2::new(
            (col as f64 + 0.5) * self.pixel_to_plane,
            (row as f64 + 0.5) * self.pixel_to_plane,
        )
    }

    /// Plane-extent bounding box `[0, w·scale] × [0, h·scale]`.
    pub fn plane_extent(&self) -> (f64, f64) {
        (
            self.width as f64 * self.pixel_to_plane,
            self.height as f64 * self.pixel_to_plane,
        )
    }
}

/// `Π(p) = P p + b`.
pub fn project_point(p: &Vector3<f64>, cam: &CameraProjection) -> Vector2<f64> {
    cam.p_matrix() * p + cam.b_vector()
}

/// `Π(Σ) = P Σ Pᵀ`, with a degeneracy check on the 2×2 determinant.
pub fn project_cov(sigma: &Matrix3<f64>, cam: &CameraProjection) -> Result<Matrix2<f64>> {
    let p = cam.p_matrix();
    let c = p * sigma * p.transpose();
    // Exact symmetry regardless of multiply order.
    let c = Matrix2::new(
        c[(0, 0)],
        0.5 * (c[(0, 1)] + c[(1, 0)]),
        0.5 * (c[(0, 1)] + c[(1, 0)]),
        c[(1, 1)],
    );
    if c.determinant() < DEGENERATE_DET {
        return Err(Error::DegenerateCovariance {
            det: c.determinant(),
        });
    }
    Ok(c)
}

/// Inverse of a 2×2 SPD matrix via the adjugate formula.
pub fn invert_spd2(c: &Matrix2<f64>) -> Matrix2<f64> {
    let det = c[(0, 0)] * c[(1, 1)] - c[(0, 1)] * c[(1, 0)];
    Matrix2::new(c[(1, 1)], -c[(0, 1)], -c[(1, 0)], c[(0, 0)]) / det
}

/// Projected kernel value `σ(x) = o · exp(-½ (x-m)ᵀ C⁻¹ (x-m))` with
/// `m = Π(p)`, `C = Π(Σ)`.
pub fn eval_projected_sigma(
    x: &Vector2<f64>,
    prim: &GaussianPrimitive,
    cam: &CameraProjection,
) -> Result<f64> {
    let cov = project_cov(&prim.covariance(), cam)?;
    let inv = invert_spd2(&cov);
    let d = x - project_point(&prim.position, cam);
    let q = (d.transpose() * inv * d)[(0, 0)];
    Ok(prim.opacity * (-0.5 * q).exp())
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn plane_cam() -> CameraProjection {
        CameraProjection::plane(8, 8, 1.0)
    }

    #[test]
    fn project_point_drops_coordinate_under_plane_camera() {
        let p = Vector3::new(3.0, 4.0, 5.0);
        assert_eq!(project_point(&p, &plane_cam()), Vector2::new(3.0, 4.0));
    }

    #[test]
    fn project_point_at_origin_returns_offset() {
        let mut cam = plane_cam();
        cam.matrix = [[0.3, -1.2, 0.7], [2.0, 0.1, -0.4]];
        cam.offset = [1.5, -2.5];
        assert_eq!(
            project_point(&Vector3::zeros(), &cam),
            Vector2::new(1.5, -2.5)
        );
    }

    #[test]
    fn project_point_matches_matrix_vector_oracle() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let mut cam = plane_cam();
            for r in 0..2 {
                for c in 0..3 {
                    cam.matrix[r][c] = rng.random_range(-2.0..2.0);
                }
                cam.offset[r] = rng.random_range(-2.0..2.0);
            }
            let p = Vector3::from_fn(|_, _| rng.random_range(-3.0..3.0));
            // Independent oracle: explicit row dot products.
            let oracle = [
                cam.matrix[0][0] * p.x
                    + cam.matrix[0][1] * p.y
                    + cam.matrix[0][2] * p.z
                    + cam.offset[0],
                cam.matrix[1][0] * p.x
                    + cam.matrix[1][1] * p.y
                    + cam.matrix[1][2] * p.z
                    + cam.offset[1],
            ];
            let got = project_point(&p, &cam);
            assert_relative_eq!(got.x, oracle[0], max_relative = 1e-14);
            assert_relative_eq!(got.y, oracle[1], max_relative = 1e-14);
        }
    }

    #[test]
    fn project_cov_identity_and_diagonal() {
        let cam = plane_cam();
        let c = project_cov(&Matrix3::identity(), &cam).unwrap();
        assert_eq!(c, Matrix2::identity());
        let c = project_cov(&Matrix3::from_diagonal(&Vector3::new(1.0, 4.0, 9.0)), &cam).unwrap();
        assert_eq!(c, Matrix2::new(1.0, 0.0, 0.0, 4.0));
    }

    fn random_spd3(rng: &mut ChaCha8Rng) -> Matrix3<f64> {
        let m = Matrix3::from_fn(|_, _| rng.random_range(-1.0..1.0));
        m * m.transpose() + Matrix3::identity() * 0.5
    }

    #[test]
    fn project_cov_matches_triple_product_oracle_and_is_symmetric() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..50 {
            let sigma = random_spd3(&mut rng);
            let mut cam = plane_cam();
            for r in 0..2 {
                for c in 0..3 {
                    cam.matrix[r][c] = rng.random_range(-1.5..1.5);
                }
            }
            if cam.validate().is_err() {
                continue;
            }
            let got = project_cov(&sigma, &cam).unwrap();
            // Oracle: explicit sums over P Σ Pᵀ entries.
            for a in 0..2 {
                for b in 0..2 {
                    let mut want = 0.0;
                    for i in 0..3 {
                        for j in 0..3 {
                            want += cam.matrix[a][i] * sigma[(i, j)] * cam.matrix[b][j];
                        }
                    }
                    assert_relative_eq!(got[(a, b)], want, max_relative = 1e-12);
                }
            }
            assert!((got[(0, 1)] - got[(1, 0)]).abs() < 1e-12);
        }
    }

    #[test]
    fn degenerate_projection_is_reported() {
        let cam = plane_cam();
        let sigma = Matrix3::from_diagonal(&Vector3::new(1e-8, 1e-8, 1.0));
        assert!(matches!(
            project_cov(&sigma, &cam),
            Err(Error::DegenerateCovariance { .. })
        ));
    }

    #[test]
    fn kernel_peaks_at_projection_with_value_opacity() {
        let prim = GaussianPrimitive::axis_aligned(
            0,
            Vector3::new(2.0, 3.0, 0.0),
            Vector3::new(1.0, 2.0, 1.0),
            0.7,
            Vector3::new(0.5, 0.5, 0.5),
            0.0,
        );
        let cam = plane_cam();
        let center = project_point(&prim.position, &cam);
        assert_relative_eq!(
            eval_projected_sigma(&center, &prim, &cam).unwrap(),
            0.7,
            max_relative = 1e-15
        );
        // Maximized at the projection: sample a grid around it.
        let peak = eval_projected_sigma(&center, &prim, &cam).unwrap();
        for i in -3..=3 {
            for j in -3..=3 {
                let x = center + Vector2::new(i as f64 * 0.4, j as f64 * 0.4);
                assert!(eval_projected_sigma(&x, &prim, &cam).unwrap() <= peak);
            }
        }
    }

    #[test]
    fn zero_opacity_kernel_is_zero_everywhere() {
        let mut prim = GaussianPrimitive::axis_aligned(
            0,
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            0.0,
            Vector3::zeros(),
            0.0,
        );
        prim.opacity = 0.0;
        let cam = plane_cam();
        for x in [Vector2::zeros(), Vector2::new(1.0, -2.0)] {
            assert_eq!(eval_projected_sigma(&x, &prim, &cam).unwrap(), 0.0);
        }
    }

    #[test]
    fn kernel_halves_at_mahalanobis_two_ln_two() {
        // distance² = 2 ln 2 ⇒ exp(-ln 2) = ½.
        let prim = GaussianPrimitive::axis_aligned(
            0,
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            0.9,
            Vector3::zeros(),
            0.0,
        );
        let cam = plane_cam();
        let x = Vector2::new((2.0 * 2.0_f64.ln()).sqrt(), 0.0);
        assert_relative_eq!(
            eval_projected_sigma(&x, &prim, &cam).unwrap(),
            0.45,
            max_relative = 1e-12
        );
    }

    #[test]
    fn planar_mode_reduces_to_direct_2d_gaussian() {
        // With P = [I₂|0], b = 0 the projected kernel equals a plain 2D
        // Gaussian in the primitive's top-left covariance block.
        let mut rng = ChaCha8Rng::seed_from_u64(13);
        let cam = plane_cam();
        for _ in 0..20 {
            let prim = GaussianPrimitive {
                id: 0,
                position: Vector3::new(
                    rng.random_range(0.0..8.0),
                    rng.random_range(0.0..8.0),
                    rng.random_range(-1.0..1.0),
                ),
                scale: Vector3::new(
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.5..2.0),
                    rng.random_range(0.5..2.0),
                ),
                rotation: planar_quaternion(rng.random_range(-3.0..3.0)),
                opacity: rng.random_range(0.1..1.0),
                color: Vector3::zeros(),
                depth: 0.0,
            };
            let x = Vector2::new(rng.random_range(0.0..8.0), rng.random_range(0.0..8.0));
            let sigma3 = prim.covariance();
            let block = Matrix2::new(
                sigma3[(0, 0)],
                sigma3[(0, 1)],
                sigma3[(1, 0)],
                sigma3[(1, 1)],
            );
            let d = x - Vector2::new(prim.position.x, prim.position.y);
            let q = (d.transpose() * invert_spd2(&block) * d)[(0, 0)];
            let want = prim.opacity * (-0.5 * q).exp();
            assert_relative_eq!(
                eval_projected_sigma(&x, &prim, &cam).unwrap(),
                want,
                max_relative = 1e-12
            );
        }
    }

    #[test]
    fn scene_json_round_trip_is_lossless() {
        let mut rng = ChaCha8Rng::seed_from_u64(14);
        let primitives = (0..5)
            .map(|i| GaussianPrimitive {
                id: i,
                position: Vector3::from_fn(|_, _| rng.random_range(-5.0..5.0)),
                scale: Vector3::from_fn(|_, _| rng.random_range(0.01..3.0)),
                rotation: planar_quaternion(rng.random_range(-3.0..3.0)),
                opacity: rng.random_range(0.0..1.0),
                color: Vector3::from_fn(|_, _| rng.random_range(0.0..1.0)),
                depth: rng.random_range(-1.0..1.0),
            })
            .collect();
        let scene = Scene::new(SceneMode::Planar, primitives);
        let text = scene.to_json().unwrap();
        let back = Scene::from_json(&text).unwrap();
        assert_eq!(scene, back);
    }

    #[test]
    fn scene_rejects_duplicate_ids_and_bad_primitives() {
        let p = GaussianPrimitive::axis_aligned(
            7,
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            0.5,
            Vector3::new(0.5, 0.5, 0.5),
            0.0,
        );
        let scene = Scene::new(SceneMode::Planar, vec![p.clone(), p.clone()]);
        assert!(scene.validate().is_err());

        let mut bad = p.clone();
        bad.scale.y = 0.0;
        assert!(bad.validate(SceneMode::Planar).is_err());

        let mut tilted = p;
        tilted.rotation = Vector4::new(0.9, 0.1, 0.0, 0.0).normalize();
        assert!(tilted.validate(SceneMode::Planar).is_err());
        assert!(tilted.validate(SceneMode::Affine3d).is_ok());
    }

    #[test]
    fn camera_rank_check() {
        let mut cam = plane_cam();
        cam.matrix = [[1.0, 2.0, 3.0], [2.0, 4.0, 6.0]];
        assert!(matches!(cam.validate(), Err(Error::RankDeficientCamera)));
        assert!(plane_cam().validate().is_ok());
    }

    #[test]
    fn content_hash_tracks_mutation() {
        let p = GaussianPrimitive::axis_aligned(
            0,
            Vector3::zeros(),
            Vector3::new(1.0, 1.0, 1.0),
            0.5,
            Vector3::new(0.5, 0.5, 0.5),
            0.0,
        );
        let mut scene = Scene::new(SceneMode::Planar, vec![p]);
        let h0 = scene.content_hash();
        scene.primitives[0].position.x += 1e-12;
        assert_ne!(h0, scene.content_hash());
    }
}
