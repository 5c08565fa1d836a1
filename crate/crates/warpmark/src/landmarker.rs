//! The coordinate-regression landmarker `f_θ: Image → LandmarkSet`.
//!
//! A small stack of 3×3 convolutions (zero padding, stride 1) with ReLU and
//! 2×2 average pooling, followed by a fully-connected head whose 2K outputs
//! are squashed into (0, 1) and scaled by the image side. The squash keeps
//! every predicted point strictly inside the image, which keeps the TPS
//! kernel centers sane early in training.
//!
//! Coordinate regression (rather than heatmaps) is what lets the warper
//! objective backpropagate end to end through the predicted landmarks.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::autodiff::{lit, Padding, Real, Tape, Tensor, TensorData};
use crate::data_io::container::{load_container, save_container};
use crate::error::{Error, Result};
use crate::imageops::Image;
use crate::warpfield::LandmarkSet;

/// Architecture knobs. The parameter list is a deterministic function of
/// this struct.
#[derive(Debug, Clone, PartialEq, Eq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ArchConfig {
    /// Input side length S; images are S×S grayscale after preprocessing.
    pub input_side: usize,
    /// Output channels of each conv → relu → avgpool block.
    pub channels: Vec<usize>,
    /// Number of predicted landmarks K.
    pub landmarks: usize,
}

impl Default for ArchConfig {
    fn default() -> Self {
        Self {
            input_side: 64,
            channels: vec![8, 16, 32],
            landmarks: 16,
        }
    }
}

impl ArchConfig {
    pub fn validate(&self) -> Result<()> {
        if self.channels.is_empty() {
            return Err(Error::Config("arch: channels must be non-empty".into()));
        }
        if self.landmarks == 0 {
            return Err(Error::Config("arch: landmarks must be >= 1".into()));
        }
        if self.channels.iter().any(|&c| c == 0) {
            return Err(Error::Config("arch: zero-width channel block".into()));
        }
        let divisor = 1usize << self.channels.len();
        if self.input_side == 0 || self.input_side % divisor != 0 {
            return Err(Error::Config(format!(
                "arch: input side {} must be divisible by 2^{} = {}",
                self.input_side,
                self.channels.len(),
                divisor
            )));
        }
        Ok(())
    }

    /// Side length after all pooling stages.
    pub fn final_side(&self) -> usize {
        self.input_side >> self.channels.len()
    }

    /// Flattened feature count entering the head.
    pub fn head_inputs(&self) -> usize {
        self.channels.last().unwrap() * self.final_side() * self.final_side()
    }

    pub fn param_count(&self) -> usize {
        let mut total = 0;
        let mut c_in = 1;
        for &c_out in &self.channels {
            total += c_out * c_in * 9 + c_out;
            c_in = c_out;
        }
        total + self.head_inputs() * 2 * self.landmarks + 2 * self.landmarks
    }
}

/// Glorot uniform bound `sqrt(6 / (fan_in + fan_out))`.
pub fn glorot_bound(fan_in: usize, fan_out: usize) -> f64 {
    (6.0 / (fan_in + fan_out) as f64).sqrt()
}

/// Named weight tensors plus the architecture and seed they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkerParams<T> {
    pub arch: ArchConfig,
    pub seed: u64,
    pub tensors: Vec<(String, TensorData<T>)>,
}

impl<T: Real> LandmarkerParams<T> {
    /// Weights from uniform(−a, a) with the Glorot bound per layer; biases
    /// start at zero. The draw order is fixed, so a seed fully determines
    /// the parameters.
    pub fn init_random(arch: &ArchConfig, seed: u64) -> Result<Self> {
        arch.validate()?;
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut tensors = Vec::new();
        let mut c_in = 1usize;
        for (i, &c_out) in arch.channels.iter().enumerate() {
            let a = glorot_bound(c_in * 9, c_out * 9);
            let w: Vec<T> = (0..c_out * c_in * 9)
                .map(|_| lit::<T>(rng.random_range(-a..a)))
                .collect();
            tensors.push((
                format!("block{i}.weight"),
                TensorData::new(vec![c_out, c_in, 3, 3], w)?,
            ));
            tensors.push((format!("block{i}.bias"), TensorData::zeros(vec![c_out])));
            c_in = c_out;
        }
        let f = arch.head_inputs();
        let out = 2 * arch.landmarks;
        let a = glorot_bound(f, out);
        let w: Vec<T> = (0..f * out).map(|_| lit::<T>(rng.random_range(-a..a))).collect();
        tensors.push(("head.weight".into(), TensorData::new(vec![f, out], w)?));
        tensors.push(("head.bias".into(), TensorData::zeros(vec![out])));
        Ok(Self {
            arch: arch.clone(),
            seed,
            tensors,
        })
    }

    pub fn param_values(&self) -> Vec<TensorData<T>> {
        self.tensors.iter().map(|(_, t)| t.clone()).collect()
    }

    pub fn set_param_values(&mut self, values: Vec<TensorData<T>>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Usage(format!(
                "expected {} parameter tensors, got {}",
                self.tensors.len(),
                values.len()
            )));
        }
        for ((_, dst), src) in self.tensors.iter_mut().zip(values) {
            if dst.shape != src.shape {
                return Err(Error::Usage(format!(
                    "parameter shape {:?} cannot take {:?}",
                    dst.shape, src.shape
                )));
            }
            *dst = src;
        }
        Ok(())
    }

    /// Lifts every parameter onto a tape, in declaration order.
    pub fn leaves_on(&self, tape: &Tape<T>, requires_grad: bool) -> Result<Vec<Tensor<T>>> {
        self.tensors
            .iter()
            .map(|(_, td)| tape.input(td, requires_grad))
            .collect()
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({
            "arch": self.arch,
            "seed": self.seed,
        });
        save_container(path, "landmarker", meta, &self.tensors)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let container = load_container::<T>(path)?;
        if container.kind != "landmarker" {
            return Err(Error::Checkpoint(format!(
                "{}: container kind '{}' is not a landmarker checkpoint",
                path.display(),
                container.kind
            )));
        }
        let arch: ArchConfig = serde_json::from_value(container.meta["arch"].clone())
            .map_err(|e| Error::Checkpoint(format!("bad arch metadata: {e}")))?;
        let seed = container.meta["seed"].as_u64().unwrap_or(0);
        let params = Self {
            arch: arch.clone(),
            seed,
            tensors: container.arrays,
        };
        // Shape-check against a fresh skeleton of the same architecture.
        let skeleton = Self::init_random(&arch, 0)?;
        if skeleton.tensors.len() != params.tensors.len()
            || skeleton
                .tensors
                .iter()
                .zip(&params.tensors)
                .any(|((n1, t1), (n2, t2))| n1 != n2 || t1.shape != t2.shape)
        {
            return Err(Error::Checkpoint(format!(
                "{}: arrays do not match the declared architecture",
                path.display()
            )));
        }
        Ok(params)
    }
}

/// Forward pass on a tape. `leaves` must come from
/// [`LandmarkerParams::leaves_on`]; `img` is an `(S, S)` plane in `[0, 1]`.
/// Returns `(K, 2)` coordinates in `(0, S) × (0, S)`.
pub fn forward_t<T: Real>(
    tape: &Tape<T>,
    arch: &ArchConfig,
    leaves: &[Tensor<T>],
    img: &Tensor<T>,
) -> Result<Tensor<T>> {
    let s = arch.input_side;
    let shape = img.shape();
    if shape != vec![s, s] {
        return Err(Error::Shape {
            op: "landmarker_forward",
            lhs: shape,
            rhs: vec![s, s],
        });
    }
    let mut x = img.reshape(vec![1, s, s])?;
    let mut side = s;
    for (i, &c_out) in arch.channels.iter().enumerate() {
        let w = &leaves[2 * i];
        let b = &leaves[2 * i + 1];
        x = x.conv2d(w, Padding::Zero)?;
        // Broadcast the (C,) bias over the spatial plane.
        let ones_row = tape.ones(vec![1, side * side])?;
        let bias_plane = b
            .reshape(vec![c_out, 1])?
            .matmul(&ones_row)?
            .reshape(vec![c_out, side, side])?;
        x = x.add(&bias_plane)?.relu()?.avg_pool2()?;
        side /= 2;
    }
    let f = arch.head_inputs();
    let flat = x.reshape(vec![1, f])?;
    let head_w = &leaves[leaves.len() - 2];
    let head_b = &leaves[leaves.len() - 1];
    let out = flat
        .matmul(head_w)?
        .add(&head_b.reshape(vec![1, 2 * arch.landmarks])?)?;
    let squashed = out.sigmoid()?.reshape(vec![arch.landmarks, 2])?;
    let scale = tape.constant(
        vec![arch.landmarks, 2],
        vec![lit::<T>(s as f64); arch.landmarks * 2],
    )?;
    squashed.mul(&scale)
}

/// Predicts landmarks for one preprocessed image (S×S, any channel count;
/// converted to grayscale internally). Pure function of `(params, img)`.
pub fn predict<T: Real>(params: &LandmarkerParams<T>, img: &Image) -> Result<LandmarkSet> {
    let s = params.arch.input_side;
    if img.height() != s || img.width() != s {
        return Err(Error::Shape {
            op: "predict",
            lhs: vec![img.height(), img.width(), img.channels()],
            rhs: vec![s, s, 1],
        });
    }
    let tape = Tape::<T>::new();
    let leaves = params.leaves_on(&tape, false)?;
    let plane = crate::imageops::gray_plane_t(&tape, img, false)?;
    let out = forward_t(&tape, &params.arch, &leaves, &plane)?;
    LandmarkSet::from_tensor_data(&out.detached())
}
