//! The conditional warping field: a thin-plate spline with kernel centers at
//! predicted landmarks plus an affine part.
//!
//! `w(y) = Σ_k ω_k φ(‖y − c_k‖) + V·y + b`, with `φ(r) = r² ln r` (and
//! `φ(0) = 0`). Sampling a source image along `w` over the target pixel grid
//! produces the warped image.
//!
//! Two routes are provided and used to cross-check each other:
//! - [`tps_fit_exact`]: the closed-form exact-interpolation solve with the
//!   classic side conditions `Σ ω = 0`, `Σ ω xᵀ = 0`, used as an oracle and
//!   as a warm start;
//! - [`warp_points_t`]: the same field expressed on an autodiff tape so that
//!   gradient descent can move `γ = {ω, V, b}` and the centers jointly.

use crate::autodiff::{lit, Real, Tape, Tensor, TensorData};
use crate::error::{Error, Result};
use crate::imageops::{bilinear_sample, Image};

/// K ordered 2-D keypoints in `(u, v)` pixel coordinates.
#[derive(Debug, Clone, PartialEq)]
pub struct LandmarkSet {
    points: Vec<[f64; 2]>,
}

impl LandmarkSet {
    pub fn new(points: Vec<[f64; 2]>) -> Result<Self> {
        if points.iter().flatten().any(|v| !v.is_finite()) {
            return Err(Error::Numeric("non-finite landmark coordinate".into()));
        }
        Ok(Self { points })
    }

    pub fn len(&self) -> usize {
        self.points.len()
    }

    pub fn is_empty(&self) -> bool {
        self.points.is_empty()
    }

    pub fn points(&self) -> &[[f64; 2]] {
        &self.points
    }

    pub fn point(&self, k: usize) -> [f64; 2] {
        self.points[k]
    }

    /// Flat `[u0, v0, u1, v1, ...]` buffer in the working precision.
    pub fn to_tensor_data<T: Real>(&self) -> TensorData<T> {
        let data = self
            .points
            .iter()
            .flat_map(|p| [lit::<T>(p[0]), lit::<T>(p[1])])
            .collect();
        TensorData {
            shape: vec![self.points.len(), 2],
            data,
        }
    }

    pub fn from_tensor_data<T: Real>(td: &TensorData<T>) -> Result<Self> {
        if td.shape.len() != 2 || td.shape[1] != 2 {
            return Err(Error::Usage(format!("landmarks need shape (K, 2), got {:?}", td.shape)));
        }
        Self::new(
            td.data
                .chunks_exact(2)
                .map(|p| [p[0].to_f64(), p[1].to_f64()])
                .collect(),
        )
    }

    /// Mean Euclidean distance to another set of the same size.
    pub fn mean_distance(&self, other: &LandmarkSet) -> Result<f64> {
        if self.len() != other.len() {
            return Err(Error::Shape {
                op: "mean_distance",
                lhs: vec![self.len(), 2],
                rhs: vec![other.len(), 2],
            });
        }
        let sum: f64 = self
            .points
            .iter()
            .zip(&other.points)
            .map(|(a, b)| ((a[0] - b[0]).powi(2) + (a[1] - b[1]).powi(2)).sqrt())
            .sum();
        Ok(sum / self.len().max(1) as f64)
    }
}

/// TPS parameters `γ = {ω_1..ω_K, V, b}`.
#[derive(Debug, Clone, PartialEq, serde::Serialize, serde::Deserialize)]
pub struct WarpParams {
    /// K kernel weights, one 2-vector per center.
    pub omegas: Vec<[f64; 2]>,
    /// 2×2 affine matrix (applied as `V · y`).
    pub v: [[f64; 2]; 2],
    /// Translation.
    pub b: [f64; 2],
}

impl WarpParams {
    /// The identity field: `ω = 0`, `V = I`, `b = 0`.
    pub fn identity(k: usize) -> Self {
        Self {
            omegas: vec![[0.0, 0.0]; k],
            v: [[1.0, 0.0], [0.0, 1.0]],
            b: [0.0, 0.0],
        }
    }

    pub fn k(&self) -> usize {
        self.omegas.len()
    }

    /// Named tensors in the fixed order ("omegas", "v_t", "b"). The affine
    /// block is stored transposed so the tape route can use a plain matmul
    /// on row vectors.
    pub fn to_tensors<T: Real>(&self) -> Vec<(String, TensorData<T>)> {
        let omegas = TensorData {
            shape: vec![self.k(), 2],
            data: self
                .omegas
                .iter()
                .flat_map(|o| [lit::<T>(o[0]), lit::<T>(o[1])])
                .collect(),
        };
        let v_t = TensorData {
            shape: vec![2, 2],
            data: vec![
                lit::<T>(self.v[0][0]),
                lit::<T>(self.v[1][0]),
                lit::<T>(self.v[0][1]),
                lit::<T>(self.v[1][1]),
            ],
        };
        let b = TensorData {
            shape: vec![1, 2],
            data: vec![lit::<T>(self.b[0]), lit::<T>(self.b[1])],
        };
        vec![
            ("omegas".into(), omegas),
            ("v_t".into(), v_t),
            ("b".into(), b),
        ]
    }

    pub fn from_tensors<T: Real>(tensors: &[(String, TensorData<T>)]) -> Result<Self> {
        let find = |name: &str| -> Result<&TensorData<T>> {
            tensors
                .iter()
                .find(|(n, _)| n == name)
                .map(|(_, t)| t)
                .ok_or_else(|| Error::Checkpoint(format!("warp params missing array '{name}'")))
        };
        let omegas_td = find("omegas")?;
        let v_td = find("v_t")?;
        let b_td = find("b")?;
        if omegas_td.shape.len() != 2
            || omegas_td.shape[1] != 2
            || v_td.data.len() != 4
            || b_td.data.len() != 2
        {
            return Err(Error::Checkpoint("warp params have unexpected shapes".into()));
        }
        Ok(Self {
            omegas: omegas_td
                .data
                .chunks_exact(2)
                .map(|o| [o[0].to_f64(), o[1].to_f64()])
                .collect(),
            v: [
                [v_td.data[0].to_f64(), v_td.data[2].to_f64()],
                [v_td.data[1].to_f64(), v_td.data[3].to_f64()],
            ],
            b: [b_td.data[0].to_f64(), b_td.data[1].to_f64()],
        })
    }
}

/// The thin-plate spline radial kernel `φ(r) = r² ln r`, continuously
/// extended with `φ(0) = 0`.
pub fn tps_kernel(r: f64) -> Result<f64> {
    if r < 0.0 {
        return Err(Error::Domain {
            op: "tps_kernel",
            msg: format!("negative radius {r}"),
        });
    }
    if r == 0.0 {
        Ok(0.0)
    } else {
        Ok(r * r * r.ln())
    }
}

fn phi_sq(r2: f64) -> f64 {
    // φ as a function of the squared radius: r² ln r = ½ s ln s.
    if r2 > 0.0 {
        0.5 * r2 * r2.ln()
    } else {
        0.0
    }
}

/// Evaluates the warping field at one point.
pub fn warp_eval(gamma: &WarpParams, centers: &LandmarkSet, y: [f64; 2]) -> [f64; 2] {
    debug_assert_eq!(gamma.k(), centers.len());
    let mut out = [
        gamma.v[0][0] * y[0] + gamma.v[0][1] * y[1] + gamma.b[0],
        gamma.v[1][0] * y[0] + gamma.v[1][1] * y[1] + gamma.b[1],
    ];
    for (omega, c) in gamma.omegas.iter().zip(centers.points()) {
        let dx = y[0] - c[0];
        let dy = y[1] - c[1];
        let phi = phi_sq(dx * dx + dy * dy);
        out[0] += omega[0] * phi;
        out[1] += omega[1] * phi;
    }
    out
}

/// Evaluates the field at every pixel of an `h` × `w` grid; `field[v * w + u]`
/// is `warp_eval` at `(u, v)`.
pub fn warp_grid(gamma: &WarpParams, centers: &LandmarkSet, h: usize, w: usize) -> Vec<[f64; 2]> {
    let mut field = Vec::with_capacity(h * w);
    for v in 0..h {
        for u in 0..w {
            field.push(warp_eval(gamma, centers, [u as f64, v as f64]));
        }
    }
    field
}

/// Warps `src` by sampling it along the field evaluated on `src`'s own grid
/// (source and target share a size in this pipeline).
pub fn warp_image(src: &Image, gamma: &WarpParams, centers: &LandmarkSet) -> Result<Image> {
    let field = warp_grid(gamma, centers, src.height(), src.width());
    bilinear_sample(src, src.height(), src.width(), &field)
}

/// Applies the field to each point of `pts`. Same code path as
/// [`warp_eval`], point by point.
pub fn warp_landmarks(gamma: &WarpParams, centers: &LandmarkSet, pts: &LandmarkSet) -> LandmarkSet {
    LandmarkSet {
        points: pts
            .points()
            .iter()
            .map(|&p| warp_eval(gamma, centers, p))
            .collect(),
    }
}

/// Solves the exact-interpolation TPS system mapping `src_pts` onto
/// `dst_pts`, with side conditions `Σ ω = 0` and `Σ ω · srcᵀ = 0`, plus
/// `reg · I` on the kernel block.
///
/// With `reg = 0` the returned field satisfies `w(src_k) = dst_k` up to
/// solver tolerance. Collinear or duplicate centers make the system
/// singular; the error suggests retrying with `reg > 0`.
pub fn tps_fit_exact(src_pts: &LandmarkSet, dst_pts: &LandmarkSet, reg: f64) -> Result<WarpParams> {
    let k = src_pts.len();
    if k < 3 {
        return Err(Error::Usage(format!("tps_fit_exact needs K >= 3 points, got {k}")));
    }
    if dst_pts.len() != k {
        return Err(Error::Shape {
            op: "tps_fit_exact",
            lhs: vec![k, 2],
            rhs: vec![dst_pts.len(), 2],
        });
    }
    if reg < 0.0 {
        return Err(Error::Domain {
            op: "tps_fit_exact",
            msg: format!("negative regularization {reg}"),
        });
    }

    let n = k + 3;
    let mut a = vec![0.0f64; n * n];
    let mut rhs = vec![0.0f64; n * 2];
    let src = src_pts.points();
    for i in 0..k {
        for j in 0..k {
            let dx = src[i][0] - src[j][0];
            let dy = src[i][1] - src[j][1];
            a[i * n + j] = phi_sq(dx * dx + dy * dy);
        }
        a[i * n + i] += reg;
        a[i * n + k] = 1.0;
        a[i * n + k + 1] = src[i][0];
        a[i * n + k + 2] = src[i][1];
        a[(k) * n + i] = 1.0;
        a[(k + 1) * n + i] = src[i][0];
        a[(k + 2) * n + i] = src[i][1];
        rhs[i * 2] = dst_pts.point(i)[0];
        rhs[i * 2 + 1] = dst_pts.point(i)[1];
    }

    solve_in_place(&mut a, &mut rhs, n)?;

    let omegas = (0..k).map(|i| [rhs[i * 2], rhs[i * 2 + 1]]).collect();
    let b = [rhs[k * 2], rhs[k * 2 + 1]];
    let v = [
        [rhs[(k + 1) * 2], rhs[(k + 2) * 2]],
        [rhs[(k + 1) * 2 + 1], rhs[(k + 2) * 2 + 1]],
    ];
    Ok(WarpParams { omegas, v, b })
}

/// Gaussian elimination with partial pivoting; `rhs` holds two stacked
/// right-hand columns and is overwritten with the solution.
fn solve_in_place(a: &mut [f64], rhs: &mut [f64], n: usize) -> Result<()> {
    let scale = a.iter().fold(1.0f64, |m, &v| m.max(v.abs()));
    let tol = 1e-12 * scale;
    for col in 0..n {
        let (pivot_row, pivot_val) = (col..n)
            .map(|r| (r, a[r * n + col].abs()))
            .max_by(|x, y| x.1.total_cmp(&y.1))
            .expect("non-empty range");
        if pivot_val <= tol {
            return Err(Error::Singular(format!(
                "TPS system pivot {pivot_val:.3e} at column {col} (collinear or duplicate centers?)"
            )));
        }
        if pivot_row != col {
            for j in 0..n {
                a.swap(col * n + j, pivot_row * n + j);
            }
            for j in 0..2 {
                rhs.swap(col * 2 + j, pivot_row * 2 + j);
            }
        }
        let inv = 1.0 / a[col * n + col];
        for r in col + 1..n {
            let f = a[r * n + col] * inv;
            if f == 0.0 {
                continue;
            }
            for j in col..n {
                a[r * n + j] -= f * a[col * n + j];
            }
            rhs[r * 2] -= f * rhs[col * 2];
            rhs[r * 2 + 1] -= f * rhs[col * 2 + 1];
        }
    }
    for col in (0..n).rev() {
        for j in 0..2 {
            let mut acc = rhs[col * 2 + j];
            for c in col + 1..n {
                acc -= a[col * n + c] * rhs[c * 2 + j];
            }
            rhs[col * 2 + j] = acc / a[col * n + col];
        }
    }
    Ok(())
}

/// Constant `(H·W, 2)` tensor of the integer pixel grid: row `v·W + u`
/// holds `(u, v)`.
pub fn grid_points_t<T: Real>(tape: &Tape<T>, h: usize, w: usize) -> Result<Tensor<T>> {
    let mut data = Vec::with_capacity(h * w * 2);
    for v in 0..h {
        for u in 0..w {
            data.push(lit::<T>(u as f64));
            data.push(lit::<T>(v as f64));
        }
    }
    tape.constant(vec![h * w, 2], data)
}

/// The warping field on a tape: maps `(N, 2)` points through
/// `Φ(pts, centers)·Ω + pts·Vᵀ + 1·b`, differentiable with respect to all of
/// `omegas`, `v_t`, `b`, `centers`, and `pts`.
///
/// `φ` is computed from the squared distance `s` as `½ s ln(max(s, ε))`
/// with ε far below any meaningful squared pixel distance, which keeps the
/// kernel and its gradient finite when a point coincides with a center.
pub fn warp_points_t<T: Real>(
    tape: &Tape<T>,
    omegas: &Tensor<T>,
    v_t: &Tensor<T>,
    b: &Tensor<T>,
    centers: &Tensor<T>,
    pts: &Tensor<T>,
) -> Result<Tensor<T>> {
    let k = centers.shape();
    let p = pts.shape();
    if k.len() != 2 || k[1] != 2 || p.len() != 2 || p[1] != 2 {
        return Err(Error::Shape {
            op: "warp_points_t",
            lhs: k,
            rhs: p,
        });
    }
    let n = p[0];
    let ones_n = tape.ones(vec![n, 1])?;
    let ones_col = tape.ones(vec![2, 1])?;
    let floor = T::squared_dist_floor();

    let mut phi_cols = Vec::with_capacity(k[0]);
    for ki in 0..k[0] {
        let c_k = centers.slice(0, ki, 1)?;
        let tiled = ones_n.matmul(&c_k)?;
        let diff = pts.sub(&tiled)?;
        let s = diff.square()?.matmul(&ones_col)?;
        let ln_s = s.clamp(floor, T::infinity())?.ln()?;
        phi_cols.push(s.mul(&ln_s)?.scale(lit(0.5))?);
    }
    let col_refs: Vec<&Tensor<T>> = phi_cols.iter().collect();
    let phi = tape.concat(1, &col_refs)?;

    let bend = phi.matmul(omegas)?;
    let affine = pts.matmul(v_t)?;
    let shift = ones_n.matmul(b)?;
    bend.add(&affine)?.add(&shift)
}
