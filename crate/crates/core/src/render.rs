//! Rasterization of a scene to an image, photometric losses, and image I/O.
//!
//! Two render modes:
//!
//! - `Composited`: back-to-front alpha blending. Primitives are visited per
//!   pixel in ascending depth (stable tie-break by id) and blended as
//!   `pixel = Σ_i c_i T_i σ_i` with transmittance `T_i = Π_{j<i} (1 - σ_j)`.
//! - `Additive`: a plain mixture `pixel = Σ_i c_i σ_i`. This linearization
//!   keeps the loss an exact functional of the per-primitive outputs, which
//!   the verification oracles rely on.
//!
//! Both modes record a tape of per-pixel `(primitive, σ, T)` contributions
//! above a configurable cutoff; the backward pass replays it.

use std::io::{BufRead, Write};

use nalgebra::{Matrix2, Vector2, Vector3};

use crate::primitives::{invert_spd2, project_cov, project_point, CameraProjection, Scene};
use crate::{Error, Result};

/// Default per-pixel contribution cutoff, one 8-bit quantization step.
/// Verification runs set it to 0 so brute-force oracles match exactly.
pub const DEFAULT_SIGMA_CUTOFF: f64 = 1.0 / 255.0;

/// Row-major RGB image. Rendered output may leave [0, 1]; targets must not.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<Vector3<f64>>,
}

impl Image {
    pub fn new_filled(width: usize, height: usize, value: Vector3<f64>) -> Self {
        Self {
            width,
            height,
            pixels: vec![value; width * height],
        }
    }

    pub fn black(width: usize, height: usize) -> Self {
        Self::new_filled(width, height, Vector3::zeros())
    }

    #[inline]
    pub fn get(&self, row: usize, col: usize) -> Vector3<f64> {
        self.pixels[row * self.width + col]
    }

    #[inline]
    pub fn set(&mut self, row: usize, col: usize, value: Vector3<f64>) {
        self.pixels[row * self.width + col] = value;
    }

    fn check_dims(&self, other: &Image) -> Result<()> {
        if self.width != other.width || self.height != other.height {
            return Err(Error::DimensionMismatch(
                self.width,
                self.height,
                other.width,
                other.height,
            ));
        }
        Ok(())
    }

    /// Binary portable pixmap, maxval 255, clamp-then-round quantization.
    pub fn write_ppm<W: Write>(&self, mut w: W) -> Result<()> {
        write!(w, "P6\n{} {}\n255\n", self.width, self.height)?;
        let mut bytes = Vec::with_capacity(self.pixels.len() * 3);
        for px in &self.pixels {
            for ch in 0..3 {
                bytes.push((px[ch].clamp(0.0, 1.0) * 255.0).round() as u8);
            }
        }
        w.write_all(&bytes)?;
        Ok(())
    }

    pub fn read_ppm<R: BufRead>(mut r: R) -> Result<Self> {
        let mut header: Vec<String> = Vec::new();
        let mut fields: Vec<u64> = Vec::new();
        // P6 header: magic, width, height, maxval, then a single whitespace
        // byte before the raster. Comments (#...) may appear between fields.
        let mut byte = [0u8; 1];
        let mut current = String::new();
        let mut in_comment = false;
        loop {
            std::io::Read::read_exact(&mut r, &mut byte)
                .map_err(|_| Error::MalformedImage("truncated header".into()))?;
            let c = byte[0] as char;
            if in_comment {
                if c == '\n' {
                    in_comment = false;
                }
                continue;
            }
            if c == '#' {
                in_comment = true;
                continue;
            }
            if c.is_ascii_whitespace() {
                if !current.is_empty() {
                    if !header.is_empty() {
                        let v = current
                            .parse::<u64>()
                            .map_err(|_| Error::MalformedImage("bad header field".into()))?;
                        fields.push(v);
                    }
                    header.push(current.clone());
                    current.clear();
                    if header.len() == 4 {
                        break;
                    }
                }
                continue;
            }
            current.push(c);
        }
        if header[0] != "P6" {
            return Err(Error::MalformedImage(format!(
                "expected P6 magic, got {}",
                header[0]
            )));
        }
        let (width, height, maxval) = (fields[0] as usize, fields[1] as usize, fields[2]);
        if maxval != 255 {
            return Err(Error::MalformedImage(format!(
                "unsupported maxval {maxval}"
            )));
        }
        let mut raster = vec![0u8; width * height * 3];
        std::io::Read::read_exact(&mut r, &mut raster)
            .map_err(|_| Error::MalformedImage("truncated raster".into()))?;
        let pixels = raster
            .chunks_exact(3)
            .map(|c| {
                Vector3::new(
                    c[0] as f64 / 255.0,
                    c[1] as f64 / 255.0,
                    c[2] as f64 / 255.0,
                )
            })
            .collect();
        Ok(Image {
            width,
            height,
            pixels,
        })
    }

    /// Lossless flat-array form for test fixtures:
    /// `{width, height, pixels: [r, g, b, r, g, b, ...]}`.
    pub fn to_json(&self) -> Result<String> {
        let flat: Vec<f64> = self.pixels.iter().flat_map(|p| [p.x, p.y, p.z]).collect();
        let doc = serde_json::json!({
            "width": self.width,
            "height": self.height,
            "pixels": flat,
        });
        Ok(serde_json::to_string(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        #[derive(serde::Deserialize)]
        struct Doc {
            width: usize,
            height: usize,
            pixels: Vec<f64>,
        }
        let doc: Doc = serde_json::from_str(text)?;
        if doc.pixels.len() != doc.width * doc.height * 3 {
            return Err(Error::MalformedImage("pixel count mismatch".into()));
        }
        Ok(Image {
            width: doc.width,
            height: doc.height,
            pixels: doc
                .pixels
                .chunks_exact(3)
                .map(|c| Vector3::new(c[0], c[1], c[2]))
                .collect(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum RenderMode {
    #[serde(rename = "additive")]
    Additive,
    #[serde(rename = "composited")]
    Composited,
}

#[derive(Debug, Clone, Copy)]
pub struct RenderOptions {
    pub mode: RenderMode,
    /// Contributions with σ ≤ cutoff are skipped and not taped.
    pub sigma_cutoff: f64,
}

impl RenderOptions {
    pub fn new(mode: RenderMode) -> Self {
        Self {
            mode,
            sigma_cutoff: DEFAULT_SIGMA_CUTOFF,
        }
    }

    /// Cutoff 0: every positive contribution participates and is taped.
    pub fn exact(mode: RenderMode) -> Self {
        Self {
            mode,
            sigma_cutoff: 0.0,
        }
    }
}

/// One taped contribution: scene index of the primitive, its kernel value at
/// the pixel, and the transmittance in front of it (1 in additive mode).
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct TapeEntry {
    pub prim_index: usize,
    pub sigma: f64,
    pub transmittance: f64,
}

/// Per-pixel contribution record, in visit (ascending depth) order.
#[derive(Debug, Clone)]
pub struct RenderTape {
    pub mode: RenderMode,
    pub sigma_cutoff: f64,
    pub width: usize,
    pub height: usize,
    /// `entries[row * width + col]`.
    pub entries: Vec<Vec<TapeEntry>>,
    pub scene_hash: u64,
}

impl RenderTape {
    pub fn check_fresh(&self, scene: &Scene) -> Result<()> {
        if self.scene_hash != scene.content_hash() {
            return Err(Error::StaleTape);
        }
        Ok(())
    }
}

/// Per-primitive data reused across every pixel of one render.
pub(crate) struct ProjectedSplat {
    pub prim_index: usize,
    pub mean: Vector2<f64>,
    pub inv_cov: Matrix2<f64>,
    pub opacity: f64,
    pub color: Vector3<f64>,
    /// Axis-aligned rejection bounds: the kernel is ≤ cutoff whenever
    /// |x - mean| exceeds these along either axis. Infinite when cutoff = 0.
    pub bound: Vector2<f64>,
}

pub(crate) fn project_scene(
    scene: &Scene,
    cam: &CameraProjection,
    cutoff: f64,
    require_finite_depth: bool,
) -> Result<Vec<ProjectedSplat>> {
    let mut order: Vec<usize> = (0..scene.primitives.len()).collect();
    // Ascending depth, stable tie-break by id.
    order.sort_by(|&a, &b| {
        let (pa, pb) = (&scene.primitives[a], &scene.primitives[b]);
        pa.depth
            .partial_cmp(&pb.depth)
            .unwrap_or(std::cmp::Ordering::Equal)
            .then(pa.id.cmp(&pb.id))
    });
    let mut splats = Vec::with_capacity(order.len());
    for &idx in &order {
        let prim = &scene.primitives[idx];
        if require_finite_depth && !prim.depth.is_finite() {
            return Err(Error::InvalidPrimitive {
                id: prim.id,
                reason: "composited mode requires finite depth keys".into(),
            });
        }
        if prim.opacity <= cutoff {
            // σ ≤ o everywhere, so this primitive can never contribute.
            continue;
        }
        let cov = project_cov(&prim.covariance(), cam)?;
        let inv_cov = invert_spd2(&cov);
        let bound = if cutoff > 0.0 {
            // σ > cutoff needs q < q_max; along each axis q ≥ d_i²/C_ii.
            let q_max = 2.0 * (prim.opacity / cutoff).ln();
            Vector2::new((q_max * cov[(0, 0)]).sqrt(), (q_max * cov[(1, 1)]).sqrt())
        } else {
            Vector2::new(f64::INFINITY, f64::INFINITY)
        };
        splats.push(ProjectedSplat {
            prim_index: idx,
            mean: project_point(&prim.position, cam),
            inv_cov,
            opacity: prim.opacity,
            color: prim.color,
            bound,
        });
    }
    Ok(splats)
}

/// Rasterize `scene` through `cam`. An empty scene renders black.
pub fn render(
    scene: &Scene,
    cam: &CameraProjection,
    opts: RenderOptions,
) -> Result<(Image, RenderTape)> {
    let cutoff = opts.sigma_cutoff;
    let splats = project_scene(scene, cam, cutoff, opts.mode == RenderMode::Composited)?;
    let mut image = Image::black(cam.width, cam.height);
    let mut entries: Vec<Vec<TapeEntry>> = vec![Vec::new(); cam.width * cam.height];

    for row in 0..cam.height {
        for col in 0..cam.width {
            let x = cam.pixel_center(row, col);
            let pix_index = row * cam.width + col;
            let taped = &mut entries[pix_index];
            let mut pixel = Vector3::zeros();
            let mut transmittance = 1.0;
            for splat in &splats {
                let d = x - splat.mean;
                if d.x.abs() >= splat.bound.x || d.y.abs() >= splat.bound.y {
                    continue;
                }
                let q = splat.inv_cov[(0, 0)] * d.x * d.x
                    + 2.0 * splat.inv_cov[(0, 1)] * d.x * d.y
                    + splat.inv_cov[(1, 1)] * d.y * d.y;
                let sigma = splat.opacity * (-0.5 * q).exp();
                if sigma <= cutoff {
                    continue;
                }
                match opts.mode {
                    RenderMode::Additive => {
                        pixel += splat.color * sigma;
                        taped.push(TapeEntry {
                            prim_index: splat.prim_index,
                            sigma,
                            transmittance: 1.0,
                        });
                    }
                    RenderMode::Composited => {
                        pixel += splat.color * (transmittance * sigma);
                        taped.push(TapeEntry {
                            prim_index: splat.prim_index,
                            sigma,
                            transmittance,
                        });
                        transmittance *= 1.0 - sigma;
                    }
                }
            }
            image.pixels[pix_index] = pixel;
        }
    }

    let tape = RenderTape {
        mode: opts.mode,
        sigma_cutoff: cutoff,
        width: cam.width,
        height: cam.height,
        entries,
        scene_hash: scene.content_hash(),
    };
    Ok((image, tape))
}

/// Pointwise error functions over images. The mean is always taken over all
/// pixels and channels.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
pub enum LossKind {
    /// Mean absolute error. Subgradient at zero residual is 0.
    #[serde(rename = "l1")]
    L1,
    /// Mean squared error; smooth, used by checks that Taylor-expand the
    /// loss.
    #[serde(rename = "squared")]
    Squared,
}

impl LossKind {
    #[inline]
    pub(crate) fn value(self, residual: f64) -> f64 {
        match self {
            LossKind::L1 => residual.abs(),
            LossKind::Squared => residual * residual,
        }
    }

    #[inline]
    pub(crate) fn derivative(self, residual: f64) -> f64 {
        match self {
            LossKind::L1 => {
                if residual > 0.0 {
                    1.0
                } else if residual < 0.0 {
                    -1.0
                } else {
                    0.0
                }
            }
            LossKind::Squared => 2.0 * residual,
        }
    }
}

pub fn loss_value(kind: LossKind, rendered: &Image, target: &Image) -> Result<f64> {
    rendered.check_dims(target)?;
    let mut total = 0.0;
    for (r, t) in rendered.pixels.iter().zip(&target.pixels) {
        for ch in 0..3 {
            total += kind.value(r[ch] - t[ch]);
        }
    }
    Ok(total / (3 * rendered.pixels.len()) as f64)
}

/// Mean absolute photometric error over all pixels and channels.
pub fn photometric_loss(rendered: &Image, target: &Image) -> Result<f64> {
    loss_value(LossKind::L1, rendered, target)
}

/// `10 log₁₀(1 / MSE)` in dB; +∞ when the images agree exactly.
pub fn psnr(rendered: &Image, target: &Image) -> Result<f64> {
    rendered.check_dims(target)?;
    let mut total = 0.0;
    for (r, t) in rendered.pixels.iter().zip(&target.pixels) {
        for ch in 0..3 {
            let e = r[ch] - t[ch];
            total += e * e;
        }
    }
    let mse = total / (3 * rendered.pixels.len()) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}
