//! Images, grayscale conversion, gradient-field operators, and bilinear
//! sampling.
//!
//! Pixel coordinates are `(u, v)` = (column, row), origin at the top-left,
//! integer coordinates at pixel centers. Pixel values live in `[0, 1]`.
//!
//! The gradient operators and the sampler exist in two forms: plain functions
//! over [`Image`] for tools and inspection, and tape-level functions over
//! [`Tensor`] used inside the training losses. Both run the same kernels.

use crate::autodiff::{lit, Padding, Real, Tape, Tensor};
use crate::error::{Error, Result};

pub const GRAY_WEIGHTS: [f32; 3] = [0.299, 0.587, 0.114];

/// H×W×C raster, row-major, values in `[0, 1]`, C ∈ {1, 3}.
#[derive(Debug, Clone, PartialEq)]
pub struct Image {
    h: usize,
    w: usize,
    c: usize,
    data: Vec<f32>,
}

impl Image {
    pub fn new(h: usize, w: usize, c: usize, data: Vec<f32>) -> Result<Self> {
        if c != 1 && c != 3 {
            return Err(Error::Usage(format!("image channels must be 1 or 3, got {c}")));
        }
        if data.len() != h * w * c {
            return Err(Error::Usage(format!(
                "image data has {} values, {h}x{w}x{c} wants {}",
                data.len(),
                h * w * c
            )));
        }
        Ok(Self { h, w, c, data })
    }

    pub fn fill(h: usize, w: usize, c: usize, value: f32) -> Self {
        Self {
            h,
            w,
            c,
            data: vec![value; h * w * c],
        }
    }

    pub fn height(&self) -> usize {
        self.h
    }
    pub fn width(&self) -> usize {
        self.w
    }
    pub fn channels(&self) -> usize {
        self.c
    }
    pub fn data(&self) -> &[f32] {
        &self.data
    }
    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    #[inline]
    pub fn get(&self, v: usize, u: usize, ch: usize) -> f32 {
        self.data[(v * self.w + u) * self.c + ch]
    }

    #[inline]
    pub fn set(&mut self, v: usize, u: usize, ch: usize, value: f32) {
        self.data[(v * self.w + u) * self.c + ch] = value;
    }

    /// Luma conversion with the usual 0.299/0.587/0.114 weights; identity on
    /// single-channel images.
    pub fn to_grayscale(&self) -> Image {
        if self.c == 1 {
            return self.clone();
        }
        let data = self
            .data
            .chunks_exact(3)
            .map(|px| GRAY_WEIGHTS[0] * px[0] + GRAY_WEIGHTS[1] * px[1] + GRAY_WEIGHTS[2] * px[2])
            .collect();
        Image {
            h: self.h,
            w: self.w,
            c: 1,
            data,
        }
    }

    /// One channel as a flat H×W plane.
    pub fn channel_plane(&self, ch: usize) -> Vec<f32> {
        assert!(ch < self.c);
        self.data.iter().skip(ch).step_by(self.c).copied().collect()
    }

    pub fn clamp01(&mut self) {
        for v in &mut self.data {
            *v = v.clamp(0.0, 1.0);
        }
    }

    /// Bilinear resize to `h_out` × `w_out` (half-pixel-centered mapping).
    pub fn resize_bilinear(&self, h_out: usize, w_out: usize) -> Result<Image> {
        if h_out == 0 || w_out == 0 {
            return Err(Error::Usage("resize to zero size".into()));
        }
        if h_out == self.h && w_out == self.w {
            return Ok(self.clone());
        }
        let su = self.w as f64 / w_out as f64;
        let sv = self.h as f64 / h_out as f64;
        let coords: Vec<[f64; 2]> = (0..h_out)
            .flat_map(|v| {
                (0..w_out).map(move |u| {
                    [
                        (u as f64 + 0.5) * su - 0.5,
                        (v as f64 + 0.5) * sv - 0.5,
                    ]
                })
            })
            .collect();
        bilinear_sample(self, h_out, w_out, &coords)
    }
}

/// Per-pixel (∂/∂u, ∂/∂v), stored plane-major: `data[0..h*w]` is the u
/// component, `data[h*w..]` the v component.
#[derive(Debug, Clone, PartialEq)]
pub struct GradientField {
    pub h: usize,
    pub w: usize,
    pub data: Vec<f32>,
}

impl GradientField {
    pub fn du(&self, v: usize, u: usize) -> f32 {
        self.data[v * self.w + u]
    }
    pub fn dv(&self, v: usize, u: usize) -> f32 {
        self.data[self.h * self.w + v * self.w + u]
    }
}

/// Which derivative operator drives the image-gradient loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum GradOperator {
    Sobel,
    Laplacian,
}

fn sobel_kernel<T: Real>() -> Vec<T> {
    let s = 1.0 / 8.0;
    let kx = [-1.0, 0.0, 1.0, -2.0, 0.0, 2.0, -1.0, 0.0, 1.0];
    let ky = [-1.0, -2.0, -1.0, 0.0, 0.0, 0.0, 1.0, 2.0, 1.0];
    kx.iter()
        .chain(ky.iter())
        .map(|&v| lit::<T>(v * s))
        .collect()
}

fn laplacian_kernel<T: Real>() -> Vec<T> {
    let lap = [0.0, 1.0, 0.0, 1.0, -4.0, 1.0, 0.0, 1.0, 0.0];
    lap.iter().chain(lap.iter()).map(|&v| lit::<T>(v)).collect()
}

/// Differentiable gradient field of an `(H, W)` tensor: output `(2, H, W)`
/// with replicate borders. The u component is the horizontal Sobel response,
/// the v component the vertical one.
pub fn sobel_field_t<T: Real>(plane: &Tensor<T>, tape: &Tape<T>) -> Result<Tensor<T>> {
    gradient_field_t(plane, tape, GradOperator::Sobel)
}

/// Same contract as [`sobel_field_t`] with the 4-neighbor Laplacian in both
/// field components (the ablation alternative).
pub fn laplacian_field_t<T: Real>(plane: &Tensor<T>, tape: &Tape<T>) -> Result<Tensor<T>> {
    gradient_field_t(plane, tape, GradOperator::Laplacian)
}

pub fn gradient_field_t<T: Real>(plane: &Tensor<T>, tape: &Tape<T>, op: GradOperator) -> Result<Tensor<T>> {
    let shape = plane.shape();
    if shape.len() != 2 || shape[0] < 3 || shape[1] < 3 {
        return Err(Error::Usage(format!(
            "gradient field needs an (H>=3, W>=3) plane, got {shape:?}"
        )));
    }
    let kernel = match op {
        GradOperator::Sobel => tape.constant(vec![2, 1, 3, 3], sobel_kernel::<T>())?,
        GradOperator::Laplacian => tape.constant(vec![2, 1, 3, 3], laplacian_kernel::<T>())?,
    };
    plane
        .reshape(vec![1, shape[0], shape[1]])?
        .conv2d(&kernel, Padding::Replicate)
}

fn field_plain(img: &Image, op: GradOperator) -> Result<GradientField> {
    let gray = img.to_grayscale();
    let tape = Tape::<f32>::new();
    let plane = tape.constant(vec![gray.h, gray.w], gray.data.clone())?;
    let field = gradient_field_t(&plane, &tape, op)?;
    Ok(GradientField {
        h: gray.h,
        w: gray.w,
        data: field.value(),
    })
}

/// Sobel gradient field of the grayscale image (kernels scaled by 1/8 so a
/// unit-slope ramp reads as unit gradient).
pub fn sobel_field(img: &Image) -> Result<GradientField> {
    field_plain(img, GradOperator::Sobel)
}

pub fn laplacian_field(img: &Image) -> Result<GradientField> {
    field_plain(img, GradOperator::Laplacian)
}

/// Samples `img` at continuous `(u, v)` positions, one per output pixel.
/// Out-of-bounds coordinates clamp to the border. Channels sample
/// independently.
pub fn bilinear_sample(img: &Image, h_out: usize, w_out: usize, coords: &[[f64; 2]]) -> Result<Image> {
    if coords.len() != h_out * w_out {
        return Err(Error::Usage(format!(
            "bilinear_sample: {} coordinates for a {h_out}x{w_out} output",
            coords.len()
        )));
    }
    let flat: Vec<f64> = coords.iter().flat_map(|c| [c[0], c[1]]).collect();
    let tape = Tape::<f64>::new();
    let coords_t = tape.constant(vec![coords.len(), 2], flat)?;
    let mut out = vec![0f32; h_out * w_out * img.c];
    for ch in 0..img.c {
        let plane: Vec<f64> = img.channel_plane(ch).iter().map(|&v| v as f64).collect();
        let plane_t = tape.constant(vec![img.h, img.w], plane)?;
        let sampled = plane_t.grid_sample(&coords_t)?;
        sampled.with_data(|vals| {
            for (p, &v) in vals.iter().enumerate() {
                out[p * img.c + ch] = v as f32;
            }
        });
    }
    Image::new(h_out, w_out, img.c, out)
}

/// Lifts the grayscale plane of an image onto a tape as an `(H, W)` tensor.
pub fn gray_plane_t<T: Real>(tape: &Tape<T>, img: &Image, requires_grad: bool) -> Result<Tensor<T>> {
    let gray = img.to_grayscale();
    let data = gray.data.iter().map(|&v| lit::<T>(v as f64)).collect();
    tape.leaf(vec![gray.h, gray.w], data, requires_grad)
}

/// Lifts one channel of an image onto a tape as an `(H, W)` tensor.
pub fn channel_plane_t<T: Real>(
    tape: &Tape<T>,
    img: &Image,
    ch: usize,
    requires_grad: bool,
) -> Result<Tensor<T>> {
    if ch >= img.c {
        return Err(Error::Usage(format!("channel {ch} of a {}-channel image", img.c)));
    }
    let data = img.channel_plane(ch).iter().map(|&v| lit::<T>(v as f64)).collect();
    tape.leaf(vec![img.h, img.w], data, requires_grad)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::{grad_check_multi, TensorData};

    fn ramp_u(h: usize, w: usize) -> Image {
        let data = (0..h)
            .flat_map(|_| (0..w).map(move |u| u as f32 / (w - 1) as f32))
            .collect();
        Image::new(h, w, 1, data).unwrap()
    }

    #[test]
    fn grayscale_white_is_one() {
        let img = Image::fill(2, 2, 3, 1.0);
        let gray = img.to_grayscale();
        assert!(gray.data().iter().all(|&v| (v - 1.0).abs() < 1e-6));
    }

    #[test]
    fn grayscale_identity_on_gray() {
        let img = ramp_u(3, 4);
        assert_eq!(img.to_grayscale(), img);
    }

    #[test]
    fn grayscale_pure_red() {
        let mut img = Image::fill(1, 1, 3, 0.0);
        img.set(0, 0, 0, 1.0);
        assert!((img.to_grayscale().get(0, 0, 0) - 0.299).abs() < 1e-6);
    }

    #[test]
    fn sobel_constant_image_is_zero() {
        // Zero up to f32 accumulation noise (0.7/8 is not representable).
        let field = sobel_field(&Image::fill(5, 5, 1, 0.7)).unwrap();
        assert!(field.data.iter().all(|&v| v.abs() < 1e-7));
    }

    #[test]
    fn sobel_ramp_has_unit_normalized_slope() {
        let w = 9;
        let field = sobel_field(&ramp_u(6, w)).unwrap();
        let expect = 1.0 / (w - 1) as f32;
        for v in 0..6 {
            for u in 1..w - 1 {
                assert!(
                    (field.du(v, u) - expect).abs() < 1e-6,
                    "du({v},{u}) = {}",
                    field.du(v, u)
                );
                assert!(field.dv(v, u).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sobel_transpose_symmetry() {
        let mut rng_state = 123u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) as f32) / (u32::MAX as f32 / 2.0)
        };
        let (h, w) = (5, 7);
        let data: Vec<f32> = (0..h * w).map(|_| next()).collect();
        let img = Image::new(h, w, 1, data.clone()).unwrap();
        let mut tdata = vec![0f32; h * w];
        for v in 0..h {
            for u in 0..w {
                tdata[u * h + v] = data[v * w + u];
            }
        }
        let img_t = Image::new(w, h, 1, tdata).unwrap();
        let f = sobel_field(&img).unwrap();
        let ft = sobel_field(&img_t).unwrap();
        for v in 0..h {
            for u in 0..w {
                assert!((f.du(v, u) - ft.dv(u, v)).abs() < 1e-6);
                assert!((f.dv(v, u) - ft.du(u, v)).abs() < 1e-6);
            }
        }
    }

    #[test]
    fn sobel_linearity_in_brightness() {
        let img = ramp_u(5, 6);
        let mut half = img.clone();
        for v in half.data_mut() {
            *v *= 0.5;
        }
        let f1 = sobel_field(&img).unwrap();
        let f2 = sobel_field(&half).unwrap();
        for (a, b) in f1.data.iter().zip(&f2.data) {
            assert!((a * 0.5 - b).abs() < 1e-6);
        }
    }

    #[test]
    fn sobel_too_small_errors() {
        assert!(sobel_field(&Image::fill(2, 5, 1, 0.0)).is_err());
    }

    #[test]
    fn laplacian_impulse_and_ramp() {
        let mut img = Image::fill(5, 5, 1, 0.0);
        img.set(2, 2, 0, 1.0);
        let f = laplacian_field(&img).unwrap();
        assert_eq!(f.du(2, 2), -4.0);
        assert_eq!(f.du(2, 1), 1.0);
        assert_eq!(f.du(1, 2), 1.0);
        assert_eq!(f.du(2, 3), 1.0);
        assert_eq!(f.du(3, 2), 1.0);

        let ramp = ramp_u(5, 5);
        let fr = laplacian_field(&ramp).unwrap();
        for v in 1..4 {
            for u in 1..4 {
                assert!(fr.du(v, u).abs() < 1e-6, "interior Laplacian of a ramp");
            }
        }
    }

    #[test]
    fn laplacian_constant_zero() {
        let f = laplacian_field(&Image::fill(4, 4, 1, 0.3)).unwrap();
        assert!(f.data.iter().all(|&v| v == 0.0));
    }

    #[test]
    fn bilinear_identity_grid_is_exact() {
        let img = ramp_u(4, 5);
        let coords: Vec<[f64; 2]> = (0..4)
            .flat_map(|v| (0..5).map(move |u| [u as f64, v as f64]))
            .collect();
        let out = bilinear_sample(&img, 4, 5, &coords).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn bilinear_midpoint_and_border_clamp() {
        let img = Image::new(1, 2, 1, vec![0.0, 1.0]).unwrap();
        let out = bilinear_sample(&img, 1, 1, &[[0.5, 0.0]]).unwrap();
        assert_eq!(out.get(0, 0, 0), 0.5);
        let clamped = bilinear_sample(&img, 1, 1, &[[-3.0, 0.0]]).unwrap();
        assert_eq!(clamped.get(0, 0, 0), 0.0); // column 0
    }

    #[test]
    fn resize_same_size_is_identity() {
        let img = ramp_u(6, 6);
        assert_eq!(img.resize_bilinear(6, 6).unwrap(), img);
    }

    #[test]
    fn resize_preserves_constants() {
        let img = Image::fill(8, 8, 3, 0.42);
        let out = img.resize_bilinear(5, 5).unwrap();
        assert!(out.data().iter().all(|&v| (v - 0.42).abs() < 1e-6));
    }

    #[test]
    fn sampler_coordinate_gradient_matches_central_differences() {
        let mut rng_state = 77u64;
        let mut next = || {
            rng_state = rng_state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((rng_state >> 33) as f64) / (u32::MAX as f64 / 2.0)
        };
        let (h, w) = (5, 5);
        let plane: Vec<f64> = (0..h * w).map(|_| next()).collect();
        // Non-integer interior coordinates only.
        let coords = TensorData::new(vec![3, 2], vec![1.4, 2.6, 3.3, 0.7, 2.5, 3.5]).unwrap();
        let plane_td = TensorData::new(vec![h, w], plane).unwrap();
        let err = grad_check_multi(
            |_, xs| xs[0].grid_sample(&xs[1])?.square()?.sum(),
            &[plane_td, coords],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "sampler gradient error {err}");
    }

    #[test]
    fn gradient_field_preserves_spatial_shape() {
        for (h, w) in [(3, 3), (6, 4), (9, 17)] {
            let f = sobel_field(&Image::fill(h, w, 1, 0.5)).unwrap();
            assert_eq!((f.h, f.w), (h, w));
            assert_eq!(f.data.len(), 2 * h * w);
        }
    }
}
