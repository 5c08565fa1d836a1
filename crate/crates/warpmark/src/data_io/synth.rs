//! Synthetic two-domain face benchmark.
//!
//! Source faces are procedural portraits (head ellipse, eye disks, nose
//! stroke, mouth arc) rendered from a 16-landmark template with per-sample
//! geometry jitter; every landmark is a deterministic function of the
//! geometry, so the regression task is well posed.
//!
//! Target faces reuse the same geometry distribution and then apply a hidden
//! random TPS field (affine jitter plus per-point displacement of the
//! template correspondences, solved by `tps_fit_exact`) to the stroke
//! geometry and the landmarks alike, followed by an appearance shift
//! (contrast, optional value inversion, stroke thickening, palette drift).
//! Target ground truth is kept aside for evaluation only.
//!
//! Each sample draws from an RNG stream derived from `(seed, split, index)`,
//! so generation is order- and thread-independent.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::imageops::Image;
use crate::warpfield::{tps_fit_exact, warp_eval, LandmarkSet, WarpParams};

/// Landmark schema identifiers. `Portrait16`: 0/1 eye centers, 2 nose
/// bridge, 3 nose tip, 4/5 mouth corners, 6 mouth bottom, 7..15 face
/// contour clockwise from the top.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schema {
    Portrait16,
}

impl Schema {
    pub fn landmark_count(self) -> usize {
        16
    }

    /// Indices of the two eye centers (the `pair` NME normalizer default).
    pub fn eye_indices(self) -> (usize, usize) {
        (0, 1)
    }
}

#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthConfig {
    pub source_train: usize,
    pub source_val: usize,
    pub target_train: usize,
    pub target_val: usize,
    /// Canvas side in pixels.
    pub canvas: usize,
    pub landmarks: usize,
    pub schema: Schema,
    /// Per-control-point displacement bound of the hidden TPS (pixels).
    pub deform_mag: f64,
    /// Hidden affine jitter: rotation bound (degrees), isotropic scale
    /// bound (fraction), translation bound (pixels).
    pub affine_rot_deg: f64,
    pub affine_scale: f64,
    pub affine_shift: f64,
    /// Target contrast multiplier range.
    pub contrast_lo: f64,
    pub contrast_hi: f64,
    /// Probability of value inversion on target faces.
    pub invert_prob: f64,
    /// Source pen radius range (pixels).
    pub stroke_lo: f64,
    pub stroke_hi: f64,
    /// Upper bound of the extra stroke-thickness multiplier on targets.
    pub target_stroke_gain: f64,
    pub seed: u64,
}

impl Default for SynthConfig {
    fn default() -> Self {
        Self {
            source_train: 200,
            source_val: 50,
            target_train: 200,
            target_val: 50,
            canvas: 64,
            landmarks: 16,
            schema: Schema::Portrait16,
            deform_mag: 5.0,
            affine_rot_deg: 8.0,
            affine_scale: 0.10,
            affine_shift: 2.5,
            contrast_lo: 0.65,
            contrast_hi: 1.35,
            invert_prob: 0.15,
            stroke_lo: 0.7,
            stroke_hi: 1.2,
            target_stroke_gain: 1.8,
            seed: 42,
        }
    }
}

impl SynthConfig {
    pub fn validate(&self) -> Result<()> {
        if self.landmarks != self.schema.landmark_count() {
            return Err(Error::Config(format!(
                "schema {:?} defines {} landmarks, config says {}",
                self.schema,
                self.schema.landmark_count(),
                self.landmarks
            )));
        }
        if self.canvas < 32 {
            return Err(Error::Config(format!("canvas {} too small (minimum 32)", self.canvas)));
        }
        if self.source_train == 0 || self.target_train == 0 {
            return Err(Error::Config("train splits must be non-empty".into()));
        }
        if !(self.contrast_lo <= self.contrast_hi && self.contrast_lo > 0.0) {
            return Err(Error::Config("contrast range must satisfy 0 < lo <= hi".into()));
        }
        if !(0.0..=1.0).contains(&self.invert_prob) {
            return Err(Error::Config("invert_prob must be in [0, 1]".into()));
        }
        if self.deform_mag < 0.0 || self.stroke_lo <= 0.0 || self.stroke_hi < self.stroke_lo {
            return Err(Error::Config("bad deformation / stroke parameters".into()));
        }
        Ok(())
    }
}

/// One generated sample; targets carry the hidden field that produced them.
#[derive(Debug, Clone)]
pub struct SynthSample {
    pub image: Image,
    pub landmarks: LandmarkSet,
    pub hidden: Option<HiddenWarp>,
}

/// The exact deformation behind a target sample, stored with full `f64`
/// precision so the construction can be re-verified from disk.
#[derive(Debug, Clone, serde::Serialize, serde::Deserialize)]
pub struct HiddenWarp {
    pub control_src: Vec<[f64; 2]>,
    pub control_dst: Vec<[f64; 2]>,
    pub params: WarpParams,
    pub source_landmarks: Vec<[f64; 2]>,
    pub target_landmarks: Vec<[f64; 2]>,
}

#[derive(Debug, Clone)]
pub struct SynthOutput {
    pub source_train: Vec<SynthSample>,
    pub source_val: Vec<SynthSample>,
    pub target_train: Vec<SynthSample>,
    pub target_val: Vec<SynthSample>,
}

/// splitmix64, used to derive independent per-sample streams.
fn mix(mut z: u64) -> u64 {
    z = z.wrapping_add(0x9E3779B97F4A7C15);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

pub(crate) fn derive_seed(seed: u64, stream: u64, index: u64) -> u64 {
    mix(mix(seed ^ mix(stream)) ^ index)
}

struct FaceGeometry {
    center: [f64; 2],
    radii: [f64; 2],
    tilt: f64,
    eye_dx: f64,
    eye_dy: f64,
    eye_r: f64,
    nose_top: f64,
    nose_tip: f64,
    mouth_w: f64,
    mouth_y: f64,
    mouth_depth: f64,
    stroke: f64,
    paper: [f32; 3],
    ink: [f32; 3],
}

impl FaceGeometry {
    /// Face-frame coordinates to pixels: `center + R(tilt) · (a·rx, b·ry)`.
    fn to_px(&self, a: f64, b: f64) -> [f64; 2] {
        let (s, c) = self.tilt.sin_cos();
        let x = a * self.radii[0];
        let y = b * self.radii[1];
        [
            self.center[0] + c * x - s * y,
            self.center[1] + s * x + c * y,
        ]
    }
}

const CONTOUR_ANGLES_DEG: [f64; 9] = [-90.0, -45.0, 0.0, 30.0, 60.0, 90.0, 120.0, 150.0, 180.0];

/// Uniform draw that tolerates a collapsed range (always consumes one
/// value from the stream).
fn uniform(rng: &mut ChaCha8Rng, lo: f64, hi: f64) -> f64 {
    lo + rng.random::<f64>() * (hi - lo)
}

fn sample_geometry(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> FaceGeometry {
    let s = cfg.canvas as f64;
    let mut u = |lo: f64, hi: f64| uniform(rng, lo, hi);
    let paper_base = [0.95, 0.93, 0.90];
    let ink_base = [0.12, 0.13, 0.20];
    FaceGeometry {
        center: [s * (0.5 + u(-0.035, 0.035)), s * (0.54 + u(-0.03, 0.03))],
        radii: [s * 0.30 * u(0.88, 1.08), s * 0.36 * u(0.88, 1.06)],
        tilt: u(-9.0, 9.0).to_radians(),
        eye_dx: 0.42 * u(0.85, 1.15),
        eye_dy: 0.30 * u(0.85, 1.15),
        eye_r: u(0.07, 0.12),
        nose_top: -0.10 + u(-0.04, 0.04),
        nose_tip: 0.18 + u(-0.05, 0.05),
        mouth_w: 0.40 * u(0.80, 1.15),
        mouth_y: 0.52 + u(-0.05, 0.05),
        mouth_depth: 0.13 * u(0.6, 1.4),
        stroke: u(cfg.stroke_lo, cfg.stroke_hi),
        paper: std::array::from_fn(|i| (paper_base[i] + u(-0.03, 0.03)) as f32),
        ink: std::array::from_fn(|i| (ink_base[i] + u(-0.05, 0.05)) as f32),
    }
}

fn geometry_landmarks(geo: &FaceGeometry) -> LandmarkSet {
    let mut pts = Vec::with_capacity(16);
    pts.push(geo.to_px(-geo.eye_dx, -geo.eye_dy));
    pts.push(geo.to_px(geo.eye_dx, -geo.eye_dy));
    pts.push(geo.to_px(0.0, geo.nose_top));
    pts.push(geo.to_px(0.0, geo.nose_tip));
    pts.push(geo.to_px(-geo.mouth_w, geo.mouth_y));
    pts.push(geo.to_px(geo.mouth_w, geo.mouth_y));
    pts.push(geo.to_px(0.0, geo.mouth_y + geo.mouth_depth));
    for deg in CONTOUR_ANGLES_DEG {
        let a = deg.to_radians();
        pts.push(geo.to_px(a.cos(), a.sin()));
    }
    LandmarkSet::new(pts).expect("finite geometry")
}

/// Appearance transform applied to target renders.
struct Appearance {
    contrast: f64,
    invert: bool,
    stroke_gain: f64,
    paper_shift: [f32; 3],
    ink_shift: [f32; 3],
}

impl Appearance {
    fn neutral() -> Self {
        Self {
            contrast: 1.0,
            invert: false,
            stroke_gain: 1.0,
            paper_shift: [0.0; 3],
            ink_shift: [0.0; 3],
        }
    }

    fn stylized(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Self {
        let mut u = |lo: f64, hi: f64| uniform(rng, lo, hi);
        Self {
            contrast: u(cfg.contrast_lo, cfg.contrast_hi),
            invert: u(0.0, 1.0) < cfg.invert_prob,
            stroke_gain: u(1.0, cfg.target_stroke_gain.max(1.0)),
            paper_shift: std::array::from_fn(|_| u(-0.08, 0.05) as f32),
            ink_shift: std::array::from_fn(|_| u(-0.08, 0.12) as f32),
        }
    }
}

/// Pen-stamp renderer: curves are sampled densely in source coordinates,
/// each sample point is mapped through `map`, and a soft disk is stamped
/// into a coverage mask (max blend). Compositing paper/ink happens at the
/// end, followed by the appearance transform.
fn render_face(
    geo: &FaceGeometry,
    cfg: &SynthConfig,
    map: &dyn Fn([f64; 2]) -> [f64; 2],
    look: &Appearance,
) -> Image {
    let side = cfg.canvas;
    let mut coverage = vec![0f32; side * side];
    let pen = geo.stroke * look.stroke_gain;

    let mut stamp = |cov: &mut [f32], p: [f64; 2], radius: f64| {
        let r = radius.max(0.3);
        let u0 = ((p[0] - r - 1.0).floor().max(0.0)) as usize;
        let v0 = ((p[1] - r - 1.0).floor().max(0.0)) as usize;
        let u1 = ((p[0] + r + 1.0).ceil().min(side as f64 - 1.0)).max(0.0) as usize;
        let v1 = ((p[1] + r + 1.0).ceil().min(side as f64 - 1.0)).max(0.0) as usize;
        for v in v0..=v1.min(side - 1) {
            for u in u0..=u1.min(side - 1) {
                let d = ((u as f64 - p[0]).powi(2) + (v as f64 - p[1]).powi(2)).sqrt();
                let c = (r + 0.5 - d).clamp(0.0, 1.0) as f32;
                let cell = &mut cov[v * side + u];
                if c > *cell {
                    *cell = c;
                }
            }
        }
    };

    let mut stroke_curve = |cov: &mut [f32], pts: &[[f64; 2]], radius: f64| {
        for p in pts {
            stamp(cov, map(*p), radius);
        }
    };

    // Head ellipse.
    let perimeter = 2.0 * std::f64::consts::PI * geo.radii[0].max(geo.radii[1]);
    let steps = (perimeter / 0.25).ceil() as usize;
    let ellipse: Vec<[f64; 2]> = (0..=steps)
        .map(|i| {
            let t = i as f64 / steps as f64 * std::f64::consts::TAU;
            geo.to_px(t.cos(), t.sin())
        })
        .collect();
    stroke_curve(&mut coverage, &ellipse, pen);

    // Nose segment.
    let nose: Vec<[f64; 2]> = (0..=24)
        .map(|i| {
            let t = i as f64 / 24.0;
            geo.to_px(0.0, geo.nose_top + t * (geo.nose_tip - geo.nose_top))
        })
        .collect();
    stroke_curve(&mut coverage, &nose, pen);

    // Mouth: quadratic Bezier through left corner, bottom midpoint, right
    // corner (control point chosen so the curve passes through the middle).
    let p0 = geo.to_px(-geo.mouth_w, geo.mouth_y);
    let p2 = geo.to_px(geo.mouth_w, geo.mouth_y);
    let m = geo.to_px(0.0, geo.mouth_y + geo.mouth_depth);
    let ctrl = [2.0 * m[0] - 0.5 * (p0[0] + p2[0]), 2.0 * m[1] - 0.5 * (p0[1] + p2[1])];
    let mouth: Vec<[f64; 2]> = (0..=40)
        .map(|i| {
            let t = i as f64 / 40.0;
            let a = (1.0 - t) * (1.0 - t);
            let b = 2.0 * (1.0 - t) * t;
            let c = t * t;
            [
                a * p0[0] + b * ctrl[0] + c * p2[0],
                a * p0[1] + b * ctrl[1] + c * p2[1],
            ]
        })
        .collect();
    stroke_curve(&mut coverage, &mouth, pen);

    // Eyes: filled disks.
    let eye_r_px = geo.eye_r * geo.radii[0];
    for side_sign in [-1.0, 1.0] {
        let c = map(geo.to_px(side_sign * geo.eye_dx, -geo.eye_dy));
        stamp(&mut coverage, c, eye_r_px * look.stroke_gain.sqrt());
    }

    // Composite and apply the appearance shift.
    let paper: [f32; 3] = std::array::from_fn(|i| (geo.paper[i] + look.paper_shift[i]).clamp(0.0, 1.0));
    let ink: [f32; 3] = std::array::from_fn(|i| (geo.ink[i] + look.ink_shift[i]).clamp(0.0, 1.0));
    let mut data = Vec::with_capacity(side * side * 3);
    for &cov in &coverage {
        for ch in 0..3 {
            let mut px = paper[ch] * (1.0 - cov) + ink[ch] * cov;
            px = 0.5 + (look.contrast as f32) * (px - 0.5);
            if look.invert {
                px = 1.0 - px;
            }
            data.push(px.clamp(0.0, 1.0));
        }
    }
    Image::new(side, side, 3, data).expect("render buffer sized to canvas")
}

/// Canonical (un-jittered) template landmarks, the control points that the
/// hidden field jitters.
fn template_points(cfg: &SynthConfig) -> Vec<[f64; 2]> {
    let s = cfg.canvas as f64;
    let canonical = FaceGeometry {
        center: [s * 0.5, s * 0.54],
        radii: [s * 0.30, s * 0.36],
        tilt: 0.0,
        eye_dx: 0.42,
        eye_dy: 0.30,
        eye_r: 0.095,
        nose_top: -0.10,
        nose_tip: 0.18,
        mouth_w: 0.40,
        mouth_y: 0.52,
        mouth_depth: 0.13,
        stroke: 1.0,
        paper: [0.0; 3],
        ink: [0.0; 3],
    };
    geometry_landmarks(&canonical).points().to_vec()
}

/// Draws the hidden deformation: an affine jitter of the template points
/// plus bounded per-point displacement, anchored by the four canvas corners
/// (which follow the affine only), solved into a TPS field.
fn sample_hidden_field(rng: &mut ChaCha8Rng, cfg: &SynthConfig) -> Result<(Vec<[f64; 2]>, Vec<[f64; 2]>, WarpParams)> {
    let s = cfg.canvas as f64;
    let mut u = |lo: f64, hi: f64| uniform(rng, lo, hi);
    let rot = u(-cfg.affine_rot_deg, cfg.affine_rot_deg).to_radians();
    let scale = 1.0 + u(-cfg.affine_scale, cfg.affine_scale);
    let shift = [u(-cfg.affine_shift, cfg.affine_shift), u(-cfg.affine_shift, cfg.affine_shift)];
    let pivot = [s * 0.5, s * 0.5];
    let (sin, cos) = rot.sin_cos();
    let affine = move |p: [f64; 2]| -> [f64; 2] {
        let x = p[0] - pivot[0];
        let y = p[1] - pivot[1];
        [
            pivot[0] + scale * (cos * x - sin * y) + shift[0],
            pivot[1] + scale * (sin * x + cos * y) + shift[1],
        ]
    };

    let mut control_src = template_points(cfg);
    let mut control_dst: Vec<[f64; 2]> = control_src
        .iter()
        .map(|&p| {
            let a = affine(p);
            [
                a[0] + u(-cfg.deform_mag, cfg.deform_mag),
                a[1] + u(-cfg.deform_mag, cfg.deform_mag),
            ]
        })
        .collect();
    for corner in [[0.0, 0.0], [s - 1.0, 0.0], [0.0, s - 1.0], [s - 1.0, s - 1.0]] {
        control_src.push(corner);
        control_dst.push(affine(corner));
    }
    let src = LandmarkSet::new(control_src.clone())?;
    let dst = LandmarkSet::new(control_dst.clone())?;
    let params = tps_fit_exact(&src, &dst, 1e-9)?;
    Ok((control_src, control_dst, params))
}

fn landmarks_in_bounds(lms: &LandmarkSet, canvas: usize, margin: f64) -> bool {
    let hi = canvas as f64 - 1.0 - margin;
    lms.points()
        .iter()
        .all(|p| p[0] >= margin && p[0] <= hi && p[1] >= margin && p[1] <= hi)
}

fn generate_source(cfg: &SynthConfig, stream: u64, index: u64) -> SynthSample {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream, index));
    let geo = sample_geometry(&mut rng, cfg);
    let landmarks = geometry_landmarks(&geo);
    let image = render_face(&geo, cfg, &|p| p, &Appearance::neutral());
    SynthSample {
        image,
        landmarks,
        hidden: None,
    }
}

const BOUNDS_RETRIES: usize = 20;

fn generate_target(cfg: &SynthConfig, stream: u64, index: u64) -> Result<SynthSample> {
    let mut rng = ChaCha8Rng::seed_from_u64(derive_seed(cfg.seed, stream, index));
    let geo = sample_geometry(&mut rng, cfg);
    let source_landmarks = geometry_landmarks(&geo);

    for attempt in 0..BOUNDS_RETRIES {
        let (control_src, control_dst, params) = sample_hidden_field(&mut rng, cfg)?;
        let centers = LandmarkSet::new(control_src.clone())?;
        let target_landmarks = LandmarkSet::new(
            source_landmarks
                .points()
                .iter()
                .map(|&p| warp_eval(&params, &centers, p))
                .collect(),
        )?;
        if !landmarks_in_bounds(&target_landmarks, cfg.canvas, 2.0) {
            if attempt + 1 == BOUNDS_RETRIES {
                return Err(Error::Config(format!(
                    "target sample {index}: hidden warp keeps pushing landmarks off canvas; \
                     lower deform_mag/affine bounds"
                )));
            }
            continue;
        }
        let look = Appearance::stylized(&mut rng, cfg);
        let map = |p: [f64; 2]| warp_eval(&params, &centers, p);
        let image = render_face(&geo, cfg, &map, &look);
        return Ok(SynthSample {
            image,
            landmarks: target_landmarks.clone(),
            hidden: Some(HiddenWarp {
                control_src,
                control_dst,
                params,
                source_landmarks: source_landmarks.points().to_vec(),
                target_landmarks: target_landmarks.points().to_vec(),
            }),
        });
    }
    unreachable!("loop returns or errors");
}

const STREAM_SOURCE_TRAIN: u64 = 1;
const STREAM_SOURCE_VAL: u64 = 2;
const STREAM_TARGET_TRAIN: u64 = 3;
const STREAM_TARGET_VAL: u64 = 4;

/// Generates all four splits. Deterministic in `cfg.seed`.
pub fn synth_generate(cfg: &SynthConfig) -> Result<SynthOutput> {
    cfg.validate()?;
    let source = |stream: u64, n: usize| -> Vec<SynthSample> {
        (0..n).map(|i| generate_source(cfg, stream, i as u64)).collect()
    };
    let target = |stream: u64, n: usize| -> Result<Vec<SynthSample>> {
        (0..n).map(|i| generate_target(cfg, stream, i as u64)).collect()
    };
    Ok(SynthOutput {
        source_train: source(STREAM_SOURCE_TRAIN, cfg.source_train),
        source_val: source(STREAM_SOURCE_VAL, cfg.source_val),
        target_train: target(STREAM_TARGET_TRAIN, cfg.target_train)?,
        target_val: target(STREAM_TARGET_VAL, cfg.target_val)?,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn small_cfg() -> SynthConfig {
        SynthConfig {
            source_train: 4,
            source_val: 2,
            target_train: 4,
            target_val: 2,
            ..Default::default()
        }
    }

    #[test]
    fn deterministic_across_runs() {
        let cfg = small_cfg();
        let a = synth_generate(&cfg).unwrap();
        let b = synth_generate(&cfg).unwrap();
        for (x, y) in a.source_train.iter().zip(&b.source_train) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.landmarks, y.landmarks);
        }
        for (x, y) in a.target_train.iter().zip(&b.target_train) {
            assert_eq!(x.image, y.image);
            assert_eq!(x.landmarks, y.landmarks);
        }
    }

    #[test]
    fn hidden_warp_reproduces_stored_ground_truth_exactly() {
        let out = synth_generate(&small_cfg()).unwrap();
        for sample in out.target_train.iter().chain(&out.target_val) {
            let hidden = sample.hidden.as_ref().unwrap();
            let centers = LandmarkSet::new(hidden.control_src.clone()).unwrap();
            for (src, expect) in hidden.source_landmarks.iter().zip(&hidden.target_landmarks) {
                let got = warp_eval(&hidden.params, &centers, *src);
                assert_eq!(got[0].to_bits(), expect[0].to_bits());
                assert_eq!(got[1].to_bits(), expect[1].to_bits());
            }
            // And the sample's landmark set is that stored ground truth.
            for (a, b) in sample.landmarks.points().iter().zip(&hidden.target_landmarks) {
                assert_eq!(a, b);
            }
        }
    }

    #[test]
    fn all_landmarks_inside_canvas() {
        let out = synth_generate(&small_cfg()).unwrap();
        for s in out
            .source_train
            .iter()
            .chain(&out.source_val)
            .chain(&out.target_train)
            .chain(&out.target_val)
        {
            assert!(landmarks_in_bounds(&s.landmarks, 64, 1.0));
            assert!(s.image.data().iter().all(|&v| (0.0..=1.0).contains(&v)));
            assert_eq!((s.image.height(), s.image.width()), (64, 64));
        }
    }

    #[test]
    fn zero_gap_config_degenerates_to_source_distribution() {
        let cfg = SynthConfig {
            deform_mag: 0.0,
            affine_rot_deg: 0.0,
            affine_scale: 0.0,
            affine_shift: 0.0,
            contrast_lo: 1.0,
            contrast_hi: 1.0,
            invert_prob: 0.0,
            target_stroke_gain: 1.0,
            ..small_cfg()
        };
        let out = synth_generate(&cfg).unwrap();
        for sample in &out.target_train {
            let hidden = sample.hidden.as_ref().unwrap();
            // Field collapses to (numerically) the identity...
            for (s, t) in hidden.source_landmarks.iter().zip(&hidden.target_landmarks) {
                assert!((s[0] - t[0]).abs() < 1e-8 && (s[1] - t[1]).abs() < 1e-8);
            }
            let omega_norm: f64 = hidden.params.omegas.iter().map(|o| o[0].abs() + o[1].abs()).sum();
            assert!(omega_norm < 1e-8);
        }
    }

    #[test]
    fn streams_are_distinct() {
        let mut seen = std::collections::BTreeSet::new();
        for stream in 1..=4u64 {
            for index in 0..50u64 {
                assert!(seen.insert(derive_seed(42, stream, index)), "seed collision");
            }
        }
    }

    #[test]
    fn config_validation() {
        assert!(SynthConfig::default().validate().is_ok());
        assert!(SynthConfig {
            landmarks: 12,
            ..Default::default()
        }
        .validate()
        .is_err());
        assert!(SynthConfig {
            invert_prob: 1.5,
            ..Default::default()
        }
        .validate()
        .is_err());
    }

    #[test]
    fn target_and_source_renders_differ_under_default_gap() {
        let out = synth_generate(&small_cfg()).unwrap();
        // With deformation and appearance shift on, a target sample should
        // not be pixel-identical to any source sample.
        for t in &out.target_train {
            for s in &out.source_train {
                assert_ne!(t.image, s.image);
            }
        }
    }
}
