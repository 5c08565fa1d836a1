//! Loss terms and the Adam optimizer.
//!
//! Every loss is a squared Frobenius norm, reported per sample without
//! averaging over landmarks or pixels. Plain `f64` versions serve reporting
//! and oracle tests; `_t` versions build the same quantity on a tape for
//! training.

use crate::autodiff::{lit, Real, Tape, Tensor, TensorData};
use crate::error::{Error, Result};
use crate::imageops::{gradient_field_t, GradOperator, Image};
use crate::warpfield::{warp_landmarks, LandmarkSet, WarpParams};

/// Multipliers for the four loss terms; the paper's objective is the
/// unweighted sum, so everything defaults to 1.
#[derive(Debug, Clone, Copy, PartialEq, serde::Serialize, serde::Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LossWeights {
    pub src: f64,
    pub grad: f64,
    pub warp: f64,
    pub pseudo: f64,
}

impl Default for LossWeights {
    fn default() -> Self {
        Self {
            src: 1.0,
            grad: 1.0,
            warp: 1.0,
            pseudo: 1.0,
        }
    }
}

impl LossWeights {
    pub fn validate(&self) -> Result<()> {
        for (name, v) in [
            ("src", self.src),
            ("grad", self.grad),
            ("warp", self.warp),
            ("pseudo", self.pseudo),
        ] {
            if !(v.is_finite() && v >= 0.0) {
                return Err(Error::Config(format!("loss weight '{name}' must be >= 0, got {v}")));
            }
        }
        Ok(())
    }
}

fn check_same_k(op: &'static str, a: &LandmarkSet, b: &LandmarkSet) -> Result<()> {
    if a.len() != b.len() {
        return Err(Error::Shape {
            op,
            lhs: vec![a.len(), 2],
            rhs: vec![b.len(), 2],
        });
    }
    Ok(())
}

fn sq_frobenius(a: &LandmarkSet, b: &LandmarkSet) -> f64 {
    a.points()
        .iter()
        .zip(b.points())
        .map(|(p, q)| (p[0] - q[0]).powi(2) + (p[1] - q[1]).powi(2))
        .sum()
}

/// Landmarking error in the source domain: `||pred - gt||_F^2`.
pub fn landmark_mse(pred: &LandmarkSet, gt: &LandmarkSet) -> Result<f64> {
    check_same_k("landmark_mse", pred, gt)?;
    Ok(sq_frobenius(pred, gt))
}

/// Pseudo landmarking error in the target domain: `||pred_now - pseudo||_F^2`
/// against a frozen snapshot.
pub fn pseudo_landmark_loss(pred_now: &LandmarkSet, pseudo: &LandmarkSet) -> Result<f64> {
    check_same_k("pseudo_landmark_loss", pred_now, pseudo)?;
    Ok(sq_frobenius(pred_now, pseudo))
}

/// Landmark warping error: `||w(pred) - real_gt||_F^2` with kernel centers
/// at `pred` (the predicted stylized landmarks).
pub fn landmark_warp_error(gamma: &WarpParams, pred: &LandmarkSet, real_gt: &LandmarkSet) -> Result<f64> {
    check_same_k("landmark_warp_error", pred, real_gt)?;
    let warped = warp_landmarks(gamma, pred, pred);
    Ok(sq_frobenius(&warped, real_gt))
}

fn check_same_size(op: &'static str, a: &Image, b: &Image) -> Result<()> {
    if a.height() != b.height() || a.width() != b.width() {
        return Err(Error::Shape {
            op,
            lhs: vec![a.height(), a.width(), a.channels()],
            rhs: vec![b.height(), b.width(), b.channels()],
        });
    }
    Ok(())
}

fn gray_plane_f64(tape: &Tape<f64>, img: &Image) -> Result<Tensor<f64>> {
    let gray = img.to_grayscale();
    let data = gray.data().iter().map(|&v| v as f64).collect();
    tape.constant(vec![gray.height(), gray.width()], data)
}

/// Discrepancy of image gradient: `||∇warped - ∇target||_F^2` over the
/// H×W×2 gradient fields of the grayscaled images.
pub fn gradient_discrepancy(warped: &Image, target: &Image, op: GradOperator) -> Result<f64> {
    check_same_size("gradient_discrepancy", warped, target)?;
    let tape = Tape::<f64>::new();
    let a = gray_plane_f64(&tape, warped)?;
    let b = gray_plane_f64(&tape, target)?;
    Ok(gradient_discrepancy_t(&tape, &a, &b, op)?.item())
}

/// Raw pixel-space squared error, the ablation alternative to the gradient
/// loss.
pub fn pixel_mse(warped: &Image, target: &Image) -> Result<f64> {
    check_same_size("pixel_mse", warped, target)?;
    if warped.channels() != target.channels() {
        return Err(Error::Shape {
            op: "pixel_mse",
            lhs: vec![warped.height(), warped.width(), warped.channels()],
            rhs: vec![target.height(), target.width(), target.channels()],
        });
    }
    Ok(warped
        .data()
        .iter()
        .zip(target.data())
        .map(|(&a, &b)| (a as f64 - b as f64).powi(2))
        .sum())
}

/// Tape version of [`landmark_mse`] (also serves the pseudo-landmark term
/// when `gt` is a frozen constant).
pub fn landmark_mse_t<T: Real>(pred: &Tensor<T>, gt: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b) = (pred.shape(), gt.shape());
    if a != b {
        return Err(Error::Shape {
            op: "landmark_mse",
            lhs: a,
            rhs: b,
        });
    }
    pred.sub(gt)?.square()?.sum()
}

/// Tape version of [`gradient_discrepancy`] over two `(H, W)` planes.
pub fn gradient_discrepancy_t<T: Real>(
    tape: &Tape<T>,
    warped: &Tensor<T>,
    target: &Tensor<T>,
    op: GradOperator,
) -> Result<Tensor<T>> {
    let (a, b) = (warped.shape(), target.shape());
    if a != b {
        return Err(Error::Shape {
            op: "gradient_discrepancy",
            lhs: a,
            rhs: b,
        });
    }
    let fw = gradient_field_t(warped, tape, op)?;
    let ft = gradient_field_t(target, tape, op)?;
    fw.sub(&ft)?.square()?.sum()
}

/// Tape version of [`pixel_mse`] over two same-shape tensors.
pub fn pixel_mse_t<T: Real>(warped: &Tensor<T>, target: &Tensor<T>) -> Result<Tensor<T>> {
    let (a, b) = (warped.shape(), target.shape());
    if a != b {
        return Err(Error::Shape {
            op: "pixel_mse",
            lhs: a,
            rhs: b,
        });
    }
    warped.sub(target)?.square()?.sum()
}

/// Adam with bias correction. One state instance owns the moment buffers for
/// a fixed list of parameter tensors.
#[derive(Debug, Clone)]
pub struct AdamState<T> {
    pub lr: T,
    pub beta1: T,
    pub beta2: T,
    pub eps: T,
    step_count: u64,
    m: Vec<Vec<T>>,
    v: Vec<Vec<T>>,
}

impl<T: Real> AdamState<T> {
    /// Defaults: β1 = 0.9, β2 = 0.999, ε = 1e-8.
    pub fn new(lr: T) -> Self {
        Self {
            lr,
            beta1: lit(0.9),
            beta2: lit(0.999),
            eps: lit(1e-8),
            step_count: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step_count
    }

    /// One update: `p -= lr * m̂ / (sqrt(v̂) + ε)`. Rejects non-finite
    /// gradients before touching any parameter.
    pub fn step(&mut self, params: &mut [TensorData<T>], grads: &[Vec<T>]) -> Result<()> {
        if params.len() != grads.len() {
            return Err(Error::Usage(format!(
                "adam_step: {} parameter tensors but {} gradients",
                params.len(),
                grads.len()
            )));
        }
        for (i, (p, g)) in params.iter().zip(grads).enumerate() {
            if p.data.len() != g.len() {
                return Err(Error::Usage(format!(
                    "adam_step: gradient {i} has {} values for a parameter of {}",
                    g.len(),
                    p.data.len()
                )));
            }
            if g.iter().any(|v| !v.is_finite()) {
                return Err(Error::Numeric(format!(
                    "adam_step: non-finite gradient in parameter tensor {i} at step {}",
                    self.step_count + 1
                )));
            }
        }
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![T::zero(); p.data.len()]).collect();
            self.v = self.m.clone();
        }

        self.step_count += 1;
        let t = self.step_count as i32;
        let bc1 = T::one() - self.beta1.powi(t);
        let bc2 = T::one() - self.beta2.powi(t);
        let one = T::one();
        for ((p, g), (m, v)) in params
            .iter_mut()
            .zip(grads)
            .zip(self.m.iter_mut().zip(self.v.iter_mut()))
        {
            for ((pv, &gv), (mv, vv)) in p.data.iter_mut().zip(g).zip(m.iter_mut().zip(v.iter_mut())) {
                *mv = self.beta1 * *mv + (one - self.beta1) * gv;
                *vv = self.beta2 * *vv + (one - self.beta2) * gv * gv;
                let m_hat = *mv / bc1;
                let v_hat = *vv / bc2;
                *pv = *pv - self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::autodiff::grad_check_multi;
    use crate::warpfield::tps_fit_exact;

    fn lms(pts: &[[f64; 2]]) -> LandmarkSet {
        LandmarkSet::new(pts.to_vec()).unwrap()
    }

    #[test]
    fn landmark_mse_values() {
        let gt = lms(&[[0.0, 0.0], [10.0, 10.0]]);
        assert_eq!(landmark_mse(&gt, &gt).unwrap(), 0.0);

        let off = lms(&[[3.0, 4.0], [10.0, 10.0]]);
        assert_eq!(landmark_mse(&off, &gt).unwrap(), 25.0);

        let two_off = lms(&[[1.0, 0.0], [10.0, 12.0]]);
        assert_eq!(landmark_mse(&two_off, &gt).unwrap(), 5.0);
    }

    #[test]
    fn landmark_mse_scale_property() {
        let gt = lms(&[[1.0, 2.0], [3.0, 4.0], [5.0, 6.0]]);
        let pred = lms(&[[1.5, 2.5], [2.0, 4.5], [5.25, 5.0]]);
        let base = landmark_mse(&pred, &gt).unwrap();
        for c in [0.5, 2.0, 3.0] {
            let scaled = LandmarkSet::new(
                pred.points()
                    .iter()
                    .zip(gt.points())
                    .map(|(p, g)| [g[0] + c * (p[0] - g[0]), g[1] + c * (p[1] - g[1])])
                    .collect(),
            )
            .unwrap();
            let got = landmark_mse(&scaled, &gt).unwrap();
            assert!((got - c * c * base).abs() < 1e-9 * base.max(1.0));
        }
    }

    #[test]
    fn landmark_mse_k_mismatch() {
        let a = lms(&[[0.0, 0.0]]);
        let b = lms(&[[0.0, 0.0], [1.0, 1.0]]);
        assert!(matches!(
            landmark_mse(&a, &b),
            Err(Error::Shape { op: "landmark_mse", .. })
        ));
    }

    #[test]
    fn pseudo_loss_values_and_zero_gradient_at_snapshot() {
        let snap = lms(&[[4.0, 4.0], [8.0, 2.0]]);
        assert_eq!(pseudo_landmark_loss(&snap, &snap).unwrap(), 0.0);
        let off = lms(&[[4.0, 9.0], [8.0, 2.0]]);
        assert_eq!(pseudo_landmark_loss(&off, &snap).unwrap(), 25.0);

        // Gradient of the quadratic at its minimum is exactly zero.
        let tape = Tape::<f64>::new();
        let pred = tape.input(&snap.to_tensor_data::<f64>(), true).unwrap();
        let frozen = tape.input(&snap.to_tensor_data::<f64>(), false).unwrap();
        let loss = landmark_mse_t(&pred, &frozen).unwrap();
        assert_eq!(loss.item(), 0.0);
        loss.backward().unwrap();
        assert!(pred.grad().unwrap().iter().all(|&g| g == 0.0));
        assert!(frozen.grad().is_none(), "no gradient flows into the snapshot");
    }

    #[test]
    fn warp_error_values() {
        let pred = lms(&[[2.0, 2.0], [10.0, 3.0], [6.0, 9.0], [4.0, 5.0]]);
        let real = lms(&[[3.0, 1.0], [11.0, 4.0], [5.0, 8.0], [5.0, 6.0]]);

        let fitted = tps_fit_exact(&pred, &real, 0.0).unwrap();
        assert!(landmark_warp_error(&fitted, &pred, &real).unwrap() <= 1e-10);

        let id = WarpParams::identity(4);
        assert_eq!(landmark_warp_error(&id, &pred, &pred).unwrap(), 0.0);

        let shifted = lms(&[[3.0, 3.0], [11.0, 4.0], [7.0, 10.0], [5.0, 6.0]]);
        assert_eq!(landmark_warp_error(&id, &shifted, &pred).unwrap(), 8.0);
    }

    #[test]
    fn gradient_discrepancy_exact_zero_cases() {
        let mut img = Image::fill(8, 8, 1, 0.2);
        for v in 2..6 {
            img.set(v, 3, 0, 0.9);
        }
        assert_eq!(gradient_discrepancy(&img, &img, GradOperator::Sobel).unwrap(), 0.0);

        // Constants of different brightness: both fields vanish.
        let a = Image::fill(6, 6, 1, 0.25);
        let b = Image::fill(6, 6, 1, 0.75);
        assert_eq!(gradient_discrepancy(&a, &b, GradOperator::Sobel).unwrap(), 0.0);
    }

    #[test]
    fn gradient_discrepancy_ramp_vs_constant_matches_direct_convolution() {
        // Independent oracle: direct Sobel cross-correlation with replicate
        // borders, written out longhand.
        let (h, w) = (8usize, 8usize);
        let ramp: Vec<f64> = (0..h)
            .flat_map(|_| (0..w).map(move |u| u as f64 / (w - 1) as f64))
            .collect();
        let kx = [[-1.0, 0.0, 1.0], [-2.0, 0.0, 2.0], [-1.0, 0.0, 1.0]];
        let at = |vv: isize, uu: isize| -> f64 {
            let v = vv.clamp(0, h as isize - 1) as usize;
            let u = uu.clamp(0, w as isize - 1) as usize;
            ramp[v * w + u]
        };
        let mut expected = 0.0;
        for v in 0..h as isize {
            for u in 0..w as isize {
                let mut du = 0.0;
                let mut dv = 0.0;
                for dy in -1..=1isize {
                    for dx in -1..=1isize {
                        du += kx[(dy + 1) as usize][(dx + 1) as usize] / 8.0 * at(v + dy, u + dx);
                        dv += kx[(dx + 1) as usize][(dy + 1) as usize] / 8.0 * at(v + dy, u + dx);
                    }
                }
                // The constant image has a zero field, so the discrepancy is
                // the ramp's own field energy.
                expected += du * du + dv * dv;
            }
        }
        let ramp_img = Image::new(h, w, 1, ramp.iter().map(|&v| v as f32).collect()).unwrap();
        let flat = Image::fill(h, w, 1, 0.5);
        let got = gradient_discrepancy(&flat, &ramp_img, GradOperator::Sobel).unwrap();
        assert!((got - expected).abs() < 1e-6, "{got} vs {expected}");
    }

    #[test]
    fn pixel_mse_values() {
        let a = Image::fill(2, 2, 1, 0.0);
        let b = Image::fill(2, 2, 1, 1.0);
        assert_eq!(pixel_mse(&a, &a).unwrap(), 0.0);
        assert_eq!(pixel_mse(&a, &b).unwrap(), 4.0);
        let c = Image::fill(3, 2, 1, 0.0);
        assert!(pixel_mse(&a, &c).is_err());
    }

    #[test]
    fn losses_pass_grad_check() {
        let mut state = 5u64;
        let mut next = || {
            state = state.wrapping_mul(6364136223846793005).wrapping_add(1);
            ((state >> 33) as f64) / (u32::MAX as f64) * 0.8 + 0.1
        };
        let plane_a = TensorData::new(vec![6, 6], (0..36).map(|_| next()).collect()).unwrap();
        let plane_b = TensorData::new(vec![6, 6], (0..36).map(|_| next()).collect()).unwrap();

        for op in [GradOperator::Sobel, GradOperator::Laplacian] {
            let err = grad_check_multi(
                |tape, xs| gradient_discrepancy_t(tape, &xs[0], &xs[1], op),
                &[plane_a.clone(), plane_b.clone()],
                1e-5,
            )
            .unwrap();
            assert!(err <= 1e-5, "gradient_discrepancy {op:?}: {err}");
        }

        let err = grad_check_multi(
            |_, xs| pixel_mse_t(&xs[0], &xs[1]),
            &[plane_a.clone(), plane_b.clone()],
            1e-5,
        )
        .unwrap();
        assert!(err <= 1e-5, "pixel_mse: {err}");

        let pred = TensorData::new(vec![4, 2], (0..8).map(|_| next() * 10.0).collect()).unwrap();
        let gt = TensorData::new(vec![4, 2], (0..8).map(|_| next() * 10.0).collect()).unwrap();
        let err = grad_check_multi(|_, xs| landmark_mse_t(&xs[0], &xs[1]), &[pred, gt], 1e-5).unwrap();
        assert!(err <= 1e-5, "landmark_mse: {err}");
    }

    #[test]
    fn adam_zero_gradient_keeps_params() {
        let mut p = vec![TensorData::new(vec![3], vec![1.0f64, -2.0, 0.5]).unwrap()];
        let before = p[0].data.clone();
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut p, &[vec![0.0, 0.0, 0.0]]).unwrap();
        assert_eq!(p[0].data, before);
    }

    #[test]
    fn adam_first_step_bias_corrected() {
        let mut p = vec![TensorData::scalar(0.0f64)];
        let mut adam = AdamState::new(1e-3);
        adam.step(&mut p, &[vec![0.5]]).unwrap();
        let expect = -1e-3 * 0.5 / (0.5 + 1e-8);
        assert!((p[0].data[0] - expect).abs() < 1e-12, "{}", p[0].data[0]);
    }

    #[test]
    fn adam_converges_on_quadratic() {
        // f(p) = p², grad = 2p, from p = 1 with lr = 0.1.
        let mut p = vec![TensorData::scalar(1.0f64)];
        let mut adam = AdamState::new(0.1);
        for _ in 0..100 {
            let g = vec![2.0 * p[0].data[0]];
            adam.step(&mut p, &[g]).unwrap();
        }
        assert!(p[0].data[0].abs() < 0.05, "p = {}", p[0].data[0]);
    }

    #[test]
    fn adam_lr_zero_updates_moments_only() {
        let mut p = vec![TensorData::scalar(2.0f64)];
        let mut adam = AdamState::new(0.0);
        adam.step(&mut p, &[vec![1.0]]).unwrap();
        assert_eq!(p[0].data[0], 2.0);
        assert_eq!(adam.step_count(), 1);
        // A later step with lr restored uses the accumulated moments.
        adam.lr = 0.1;
        adam.step(&mut p, &[vec![1.0]]).unwrap();
        assert!(p[0].data[0] < 2.0);
    }

    #[test]
    fn adam_rejects_nan_gradient() {
        let mut p = vec![TensorData::scalar(1.0f64)];
        let before = p[0].clone();
        let mut adam = AdamState::new(1e-3);
        let err = adam.step(&mut p, &[vec![f64::NAN]]).unwrap_err();
        assert!(matches!(err, Error::Numeric(_)));
        assert_eq!(p[0], before, "params untouched after rejected step");
    }

    #[test]
    fn loss_weights_validate() {
        assert!(LossWeights::default().validate().is_ok());
        let bad = LossWeights {
            grad: -1.0,
            ..Default::default()
        };
        assert!(bad.validate().is_err());
    }
}
