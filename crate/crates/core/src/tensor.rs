//! Dense 2D/3D tensors with physical metadata and FFT-based 3D convolution.
//!
//! `Volume3D` holds an (x, y, t) stack of real values with pixel pitch in mm
//! and time-bin width in ps; storage is x-fastest, then y, then t, so the
//! serialized form is bit-exact across implementations. Convolution is
//! zero-padded and linear ("same" output, spatial origin at the kernel grid
//! center, temporal origin at bin 0).

use crate::error::{Error, Result};
use rustfft::num_complex::Complex;
use rustfft::{Fft, FftPlanner};
use std::sync::Arc;

/// A dense (x, y, t) tensor of photon counts or intensities.
#[derive(Debug, Clone, PartialEq)]
pub struct Volume3D {
    nx: usize,
    ny: usize,
    nt: usize,
    pixel_size: f64,
    bin_width: f64,
    data: Vec<f64>,
}

impl Volume3D {
    pub fn new(
        nx: usize,
        ny: usize,
        nt: usize,
        pixel_size: f64,
        bin_width: f64,
        data: Vec<f64>,
    ) -> Result<Self> {
        if nx == 0 || ny == 0 || nt == 0 {
            return Err(Error::invalid("volume dimensions must be positive"));
        }
        if !(pixel_size > 0.0) || !(bin_width > 0.0) {
            return Err(Error::invalid(format!(
                "pixel_size and bin_width must be positive (got {pixel_size}, {bin_width})"
            )));
        }
        if data.len() != nx * ny * nt {
            return Err(Error::shape(format!(
                "data length {} does not equal nx*ny*nt = {}",
                data.len(),
                nx * ny * nt
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("volume contains non-finite values"));
        }
        Ok(Volume3D { nx, ny, nt, pixel_size, bin_width, data })
    }

    pub fn zeros(nx: usize, ny: usize, nt: usize, pixel_size: f64, bin_width: f64) -> Result<Self> {
        Self::new(nx, ny, nt, pixel_size, bin_width, vec![0.0; nx * ny * nt])
    }

    pub fn from_fn(
        nx: usize,
        ny: usize,
        nt: usize,
        pixel_size: f64,
        bin_width: f64,
        mut f: impl FnMut(usize, usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(nx * ny * nt);
        for k in 0..nt {
            for j in 0..ny {
                for i in 0..nx {
                    data.push(f(i, j, k));
                }
            }
        }
        Self::new(nx, ny, nt, pixel_size, bin_width, data)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn nt(&self) -> usize {
        self.nt
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    pub fn bin_width(&self) -> f64 {
        self.bin_width
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize, k: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny && k < self.nt);
        i + self.nx * (j + self.ny * k)
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize, k: usize) -> f64 {
        self.data[self.index(i, j, k)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize, k: usize) -> &mut f64 {
        let idx = self.index(i, j, k);
        &mut self.data[idx]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    /// True when the two volumes share all grid metadata and dimensions.
    pub fn same_grid(&self, other: &Volume3D) -> bool {
        self.nx == other.nx
            && self.ny == other.ny
            && self.nt == other.nt
            && self.pixel_size == other.pixel_size
            && self.bin_width == other.bin_width
    }

    pub fn l2_norm(&self) -> f64 {
        self.data.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    pub fn total(&self) -> f64 {
        self.data.iter().sum()
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    /// Per-bin time histogram summed over all pixels.
    pub fn time_histogram(&self) -> Vec<f64> {
        let mut hist = vec![0.0; self.nt];
        for k in 0..self.nt {
            let base = self.nx * self.ny * k;
            hist[k] = self.data[base..base + self.nx * self.ny].iter().sum();
        }
        hist
    }
}

/// A dense 2D image; houses transmission masks and time-integrated frames.
#[derive(Debug, Clone, PartialEq)]
pub struct Image2D {
    nx: usize,
    ny: usize,
    pixel_size: f64,
    data: Vec<f64>,
}

impl Image2D {
    pub fn new(nx: usize, ny: usize, pixel_size: f64, data: Vec<f64>) -> Result<Self> {
        if nx == 0 || ny == 0 {
            return Err(Error::invalid("image dimensions must be positive"));
        }
        if !(pixel_size > 0.0) {
            return Err(Error::invalid("pixel_size must be positive"));
        }
        if data.len() != nx * ny {
            return Err(Error::shape(format!(
                "data length {} does not equal nx*ny = {}",
                data.len(),
                nx * ny
            )));
        }
        if !data.iter().all(|v| v.is_finite()) {
            return Err(Error::invalid("image contains non-finite values"));
        }
        Ok(Image2D { nx, ny, pixel_size, data })
    }

    pub fn zeros(nx: usize, ny: usize, pixel_size: f64) -> Result<Self> {
        Self::new(nx, ny, pixel_size, vec![0.0; nx * ny])
    }

    pub fn from_fn(
        nx: usize,
        ny: usize,
        pixel_size: f64,
        mut f: impl FnMut(usize, usize) -> f64,
    ) -> Result<Self> {
        let mut data = Vec::with_capacity(nx * ny);
        for j in 0..ny {
            for i in 0..nx {
                data.push(f(i, j));
            }
        }
        Self::new(nx, ny, pixel_size, data)
    }

    pub fn nx(&self) -> usize {
        self.nx
    }

    pub fn ny(&self) -> usize {
        self.ny
    }

    pub fn pixel_size(&self) -> f64 {
        self.pixel_size
    }

    #[inline]
    pub fn index(&self, i: usize, j: usize) -> usize {
        debug_assert!(i < self.nx && j < self.ny);
        i + self.nx * j
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[self.index(i, j)]
    }

    #[inline]
    pub fn at_mut(&mut self, i: usize, j: usize) -> &mut f64 {
        let idx = self.index(i, j);
        &mut self.data[idx]
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    pub fn into_data(self) -> Vec<f64> {
        self.data
    }

    pub fn max_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::NEG_INFINITY, f64::max)
    }

    pub fn min_value(&self) -> f64 {
        self.data.iter().cloned().fold(f64::INFINITY, f64::min)
    }
}

/// Zero-padded linear 3D convolution with "same as a" output. The kernel's
/// spatial origin sits at its grid center (`nx/2`, `ny/2`); its temporal
/// origin is bin 0, keeping causal kernels causal.
pub fn conv3d(a: &Volume3D, b: &Volume3D) -> Result<Volume3D> {
    if a.pixel_size != b.pixel_size || a.bin_width != b.bin_width {
        return Err(Error::shape(format!(
            "conv3d metadata mismatch: pixel_size {} vs {}, bin_width {} vs {}",
            a.pixel_size, b.pixel_size, a.bin_width, b.bin_width
        )));
    }
    let plan = ConvPlan::new(b, a.nx, a.ny, a.nt)?;
    plan.convolve(a)
}

/// Multiply every time slice of `v` by the 2D mask `t`.
pub fn multiply_mask(v: &Volume3D, t: &Image2D) -> Result<Volume3D> {
    if v.nx != t.nx || v.ny != t.ny || v.pixel_size != t.pixel_size {
        return Err(Error::shape(format!(
            "mask grid {}x{} @ {} does not match volume {}x{} @ {}",
            t.nx, t.ny, t.pixel_size, v.nx, v.ny, v.pixel_size
        )));
    }
    let mut out = v.clone();
    let slice = v.nx * v.ny;
    for k in 0..v.nt {
        let base = slice * k;
        for p in 0..slice {
            out.data[base + p] *= t.data[p];
        }
    }
    Ok(out)
}

/// Sum over the time axis.
pub fn integrate_time(v: &Volume3D) -> Image2D {
    let slice = v.nx * v.ny;
    let mut data = vec![0.0; slice];
    for k in 0..v.nt {
        let base = slice * k;
        for p in 0..slice {
            data[p] += v.data[base + p];
        }
    }
    Image2D { nx: v.nx, ny: v.ny, pixel_size: v.pixel_size, data }
}

/// Flatten to a unit-l2-norm column vector. Rejects all-zero volumes.
pub fn vec_normalized(v: &Volume3D) -> Result<Vec<f64>> {
    let norm = v.l2_norm();
    if norm == 0.0 {
        return Err(Error::invalid("cannot normalize an all-zero volume"));
    }
    Ok(v.data.iter().map(|x| x / norm).collect())
}

fn next_pow2(n: usize) -> usize {
    n.next_power_of_two()
}

struct AxisFft {
    forward: Arc<dyn Fft<f64>>,
    inverse: Arc<dyn Fft<f64>>,
}

/// A reusable convolution plan that caches the padded FFT of one kernel.
/// `convolve` applies the same-crop linear convolution; `correlate` applies
/// its exact adjoint, which the matrix-free normal-equation solves rely on.
pub struct ConvPlan {
    a_dims: (usize, usize, usize),
    b_dims: (usize, usize, usize),
    padded: (usize, usize, usize),
    pixel_size: f64,
    bin_width: f64,
    kernel_hat: Vec<Complex<f64>>,
    axes: [AxisFft; 3],
}

impl ConvPlan {
    /// Build a plan for convolving volumes shaped like (`a_nx`, `a_ny`, `a_nt`)
    /// with the fixed kernel `b`.
    pub fn new(b: &Volume3D, a_nx: usize, a_ny: usize, a_nt: usize) -> Result<Self> {
        let padded = (
            next_pow2(a_nx + b.nx - 1),
            next_pow2(a_ny + b.ny - 1),
            next_pow2(a_nt + b.nt - 1),
        );
        let mut planner = FftPlanner::new();
        let axes = [
            AxisFft {
                forward: planner.plan_fft_forward(padded.0),
                inverse: planner.plan_fft_inverse(padded.0),
            },
            AxisFft {
                forward: planner.plan_fft_forward(padded.1),
                inverse: planner.plan_fft_inverse(padded.1),
            },
            AxisFft {
                forward: planner.plan_fft_forward(padded.2),
                inverse: planner.plan_fft_inverse(padded.2),
            },
        ];
        let mut kernel_hat = pad_volume(b, padded);
        fft3_in_place(&mut kernel_hat, padded, &axes, true);
        Ok(ConvPlan {
            a_dims: (a_nx, a_ny, a_nt),
            b_dims: (b.nx, b.ny, b.nt),
            padded,
            pixel_size: b.pixel_size,
            bin_width: b.bin_width,
            kernel_hat,
            axes,
        })
    }

    fn check_input(&self, a: &Volume3D) -> Result<()> {
        if (a.nx, a.ny, a.nt) != self.a_dims {
            return Err(Error::shape(format!(
                "volume {}x{}x{} does not match plan input {}x{}x{}",
                a.nx, a.ny, a.nt, self.a_dims.0, self.a_dims.1, self.a_dims.2
            )));
        }
        if a.pixel_size != self.pixel_size || a.bin_width != self.bin_width {
            return Err(Error::shape("volume metadata does not match plan kernel".to_string()));
        }
        Ok(())
    }

    /// out[i,j,k] = sum over (p,q,r) of a[i-p+bx/2, j-q+by/2, k-r] * b[p,q,r].
    pub fn convolve(&self, a: &Volume3D) -> Result<Volume3D> {
        self.check_input(a)?;
        let mut buf = pad_volume(a, self.padded);
        fft3_in_place(&mut buf, self.padded, &self.axes, true);
        for (x, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
            *x *= k;
        }
        fft3_in_place(&mut buf, self.padded, &self.axes, false);
        let scale = 1.0 / (self.padded.0 * self.padded.1 * self.padded.2) as f64;
        let (nx, ny, nt) = self.a_dims;
        let (ox, oy) = (self.b_dims.0 / 2, self.b_dims.1 / 2);
        let mut out = Vec::with_capacity(nx * ny * nt);
        for k in 0..nt {
            for j in 0..ny {
                for i in 0..nx {
                    let idx =
                        (i + ox) + self.padded.0 * ((j + oy) + self.padded.1 * k);
                    out.push(buf[idx].re * scale);
                }
            }
        }
        Volume3D::new(nx, ny, nt, self.pixel_size, self.bin_width, out)
    }

    /// Adjoint of `convolve`: out[j] = sum over p of b[p] * r[j - o + p].
    pub fn correlate(&self, r: &Volume3D) -> Result<Volume3D> {
        self.check_input(r)?;
        let mut buf = pad_volume(r, self.padded);
        fft3_in_place(&mut buf, self.padded, &self.axes, true);
        for (x, k) in buf.iter_mut().zip(self.kernel_hat.iter()) {
            *x *= k.conj();
        }
        fft3_in_place(&mut buf, self.padded, &self.axes, false);
        let scale = 1.0 / (self.padded.0 * self.padded.1 * self.padded.2) as f64;
        let (nx, ny, nt) = self.a_dims;
        let (px, py, pt) = self.padded;
        let (ox, oy) = (self.b_dims.0 / 2, self.b_dims.1 / 2);
        let mut out = Vec::with_capacity(nx * ny * nt);
        for k in 0..nt {
            for j in 0..ny {
                for i in 0..nx {
                    // circular correlation index (j - o) mod padded, alias-free
                    // because padded >= n + m - 1 along every axis
                    let wi = (i + px - ox) % px;
                    let wj = (j + py - oy) % py;
                    let idx = wi + px * (wj + py * k);
                    out.push(buf[idx].re * scale);
                }
            }
        }
        Volume3D::new(nx, ny, nt, self.pixel_size, self.bin_width, out)
    }
}

fn pad_volume(v: &Volume3D, padded: (usize, usize, usize)) -> Vec<Complex<f64>> {
    let (px, py, pt) = padded;
    let mut buf = vec![Complex::new(0.0, 0.0); px * py * pt];
    for k in 0..v.nt {
        for j in 0..v.ny {
            let src = v.nx * (j + v.ny * k);
            let dst = px * (j + py * k);
            for i in 0..v.nx {
                buf[dst + i].re = v.data[src + i];
            }
        }
    }
    buf
}

fn fft3_in_place(
    buf: &mut [Complex<f64>],
    dims: (usize, usize, usize),
    axes: &[AxisFft; 3],
    forward: bool,
) {
    let (px, py, pt) = dims;
    let pick = |a: &AxisFft| if forward { a.forward.clone() } else { a.inverse.clone() };

    // x lines are contiguous
    let fft_x = pick(&axes[0]);
    let mut scratch = vec![Complex::new(0.0, 0.0); fft_x.get_inplace_scratch_len()];
    for line in buf.chunks_exact_mut(px) {
        fft_x.process_with_scratch(line, &mut scratch);
    }

    // y lines, stride px
    let fft_y = pick(&axes[1]);
    scratch.resize(fft_y.get_inplace_scratch_len().max(1), Complex::new(0.0, 0.0));
    let mut line = vec![Complex::new(0.0, 0.0); py];
    for k in 0..pt {
        for i in 0..px {
            let base = i + px * py * k;
            for j in 0..py {
                line[j] = buf[base + px * j];
            }
            fft_y.process_with_scratch(&mut line, &mut scratch);
            for j in 0..py {
                buf[base + px * j] = line[j];
            }
        }
    }

    // t lines, stride px*py
    let fft_t = pick(&axes[2]);
    scratch.resize(fft_t.get_inplace_scratch_len().max(1), Complex::new(0.0, 0.0));
    let mut line_t = vec![Complex::new(0.0, 0.0); pt];
    let slice = px * py;
    for p in 0..slice {
        for k in 0..pt {
            line_t[k] = buf[p + slice * k];
        }
        fft_t.process_with_scratch(&mut line_t, &mut scratch);
        for k in 0..pt {
            buf[p + slice * k] = line_t[k];
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_abs_diff_eq;

    fn vol(nx: usize, ny: usize, nt: usize, data: Vec<f64>) -> Volume3D {
        Volume3D::new(nx, ny, nt, 1.0, 1.0, data).unwrap()
    }

    /// Direct triple-loop reference for the same-crop linear convolution.
    fn conv3d_direct(a: &Volume3D, b: &Volume3D) -> Volume3D {
        let (ox, oy) = (b.nx() / 2, b.ny() / 2);
        Volume3D::from_fn(a.nx(), a.ny(), a.nt(), a.pixel_size(), a.bin_width(), |i, j, k| {
            let mut acc = 0.0;
            for r in 0..b.nt() {
                for q in 0..b.ny() {
                    for p in 0..b.nx() {
                        let ii = i as isize - p as isize + ox as isize;
                        let jj = j as isize - q as isize + oy as isize;
                        let kk = k as isize - r as isize;
                        if ii >= 0
                            && (ii as usize) < a.nx()
                            && jj >= 0
                            && (jj as usize) < a.ny()
                            && kk >= 0
                            && (kk as usize) < a.nt()
                        {
                            acc += a.at(ii as usize, jj as usize, kk as usize) * b.at(p, q, r);
                        }
                    }
                }
            }
            acc
        })
        .unwrap()
    }

    fn pseudo_random(n: usize, seed: u64) -> Vec<f64> {
        // splitmix64-derived deterministic values in [-1, 1]
        let mut state = seed;
        (0..n)
            .map(|_| {
                state = state.wrapping_add(0x9e3779b97f4a7c15);
                let mut z = state;
                z = (z ^ (z >> 30)).wrapping_mul(0xbf58476d1ce4e5b9);
                z = (z ^ (z >> 27)).wrapping_mul(0x94d049bb133111eb);
                z ^= z >> 31;
                (z as f64 / u64::MAX as f64) * 2.0 - 1.0
            })
            .collect()
    }

    #[test]
    fn conv_identity_with_unit_impulse_at_origin() {
        let a = vol(4, 3, 5, pseudo_random(60, 1));
        let mut imp = Volume3D::zeros(3, 3, 4, 1.0, 1.0).unwrap();
        *imp.at_mut(1, 1, 0) = 1.0; // spatial center, t = 0
        let out = conv3d(&a, &imp).unwrap();
        for (x, y) in a.data().iter().zip(out.data().iter()) {
            assert_abs_diff_eq!(x, y, epsilon = 1e-12);
        }
    }

    #[test]
    fn conv_zero_absorbs() {
        let a = Volume3D::zeros(4, 4, 4, 1.0, 1.0).unwrap();
        let b = vol(4, 4, 4, pseudo_random(64, 2));
        let out = conv3d(&a, &b).unwrap();
        assert!(out.data().iter().all(|&v| v.abs() < 1e-14));
    }

    #[test]
    fn conv_matches_direct_sum_on_random_4x4x4() {
        let a = vol(4, 4, 4, pseudo_random(64, 3));
        let b = vol(4, 4, 4, pseudo_random(64, 4));
        let fast = conv3d(&a, &b).unwrap();
        let slow = conv3d_direct(&a, &b);
        let scale = slow.data().iter().cloned().fold(0.0f64, |m, v| m.max(v.abs()));
        for (x, y) in fast.data().iter().zip(slow.data().iter()) {
            assert!((x - y).abs() < 1e-10 * scale.max(1.0), "{x} vs {y}");
        }
    }

    #[test]
    fn conv_all_small_shapes_match_direct_sum() {
        for &(anx, any, ant) in &[(1, 1, 1), (2, 3, 4), (5, 2, 3), (8, 8, 8), (7, 5, 6)] {
            for &(bnx, bny, bnt) in &[(1, 1, 1), (3, 3, 2), (2, 4, 5), (8, 8, 8)] {
                let a = vol(anx, any, ant, pseudo_random(anx * any * ant, 10));
                let b = vol(bnx, bny, bnt, pseudo_random(bnx * bny * bnt, 11));
                let fast = conv3d(&a, &b).unwrap();
                let slow = conv3d_direct(&a, &b);
                let scale =
                    slow.data().iter().cloned().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
                for (x, y) in fast.data().iter().zip(slow.data().iter()) {
                    assert!(
                        (x - y).abs() < 1e-10 * scale,
                        "shape a=({anx},{any},{ant}) b=({bnx},{bny},{bnt}): {x} vs {y}"
                    );
                }
            }
        }
    }

    #[test]
    fn conv_is_linear_in_first_argument() {
        let a1 = vol(4, 4, 4, pseudo_random(64, 20));
        let a2 = vol(4, 4, 4, pseudo_random(64, 21));
        let b = vol(3, 3, 3, pseudo_random(27, 22));
        let (alpha, beta) = (0.7, -1.3);
        let combo = vol(
            4,
            4,
            4,
            a1.data().iter().zip(a2.data()).map(|(x, y)| alpha * x + beta * y).collect(),
        );
        let lhs = conv3d(&combo, &b).unwrap();
        let c1 = conv3d(&a1, &b).unwrap();
        let c2 = conv3d(&a2, &b).unwrap();
        let scale = lhs.data().iter().cloned().fold(0.0f64, |m, v| m.max(v.abs())).max(1.0);
        for ((l, x), y) in lhs.data().iter().zip(c1.data()).zip(c2.data()) {
            assert!((l - (alpha * x + beta * y)).abs() < 1e-10 * scale);
        }
    }

    #[test]
    fn conv_rejects_metadata_mismatch() {
        let a = Volume3D::zeros(4, 4, 4, 1.0, 1.0).unwrap();
        let b = Volume3D::zeros(4, 4, 4, 2.0, 1.0).unwrap();
        assert!(matches!(conv3d(&a, &b), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn correlate_is_adjoint_of_convolve() {
        let a = vol(5, 4, 6, pseudo_random(120, 30));
        let b = vol(3, 3, 4, pseudo_random(36, 31));
        let r = vol(5, 4, 6, pseudo_random(120, 32));
        let plan = ConvPlan::new(&b, 5, 4, 6).unwrap();
        let ca = plan.convolve(&a).unwrap();
        let ctr = plan.correlate(&r).unwrap();
        let lhs: f64 = ca.data().iter().zip(r.data()).map(|(x, y)| x * y).sum();
        let rhs: f64 = a.data().iter().zip(ctr.data()).map(|(x, y)| x * y).sum();
        assert_abs_diff_eq!(lhs, rhs, epsilon = 1e-9 * lhs.abs().max(1.0));
    }

    #[test]
    fn multiply_mask_ones_zeros_selector() {
        let v = vol(3, 3, 2, pseudo_random(18, 40));
        let ones = Image2D::new(3, 3, 1.0, vec![1.0; 9]).unwrap();
        assert_eq!(multiply_mask(&v, &ones).unwrap().data(), v.data());

        let zeros = Image2D::zeros(3, 3, 1.0).unwrap();
        assert!(multiply_mask(&v, &zeros).unwrap().data().iter().all(|&x| x == 0.0));

        let mut sel = Image2D::zeros(3, 3, 1.0).unwrap();
        *sel.at_mut(1, 2) = 1.0;
        let out = multiply_mask(&v, &sel).unwrap();
        for k in 0..2 {
            for j in 0..3 {
                for i in 0..3 {
                    let expect = if (i, j) == (1, 2) { v.at(i, j, k) } else { 0.0 };
                    assert_eq!(out.at(i, j, k), expect);
                }
            }
        }
    }

    #[test]
    fn multiply_mask_rejects_shape_mismatch() {
        let v = Volume3D::zeros(3, 3, 2, 1.0, 1.0).unwrap();
        let t = Image2D::zeros(4, 3, 1.0).unwrap();
        assert!(matches!(multiply_mask(&v, &t), Err(Error::ShapeMismatch(_))));
    }

    #[test]
    fn integrate_time_impulse_and_uniform() {
        let mut v = Volume3D::zeros(4, 4, 70, 1.0, 1.0).unwrap();
        *v.at_mut(2, 1, 33) = 7.0;
        let img = integrate_time(&v);
        for j in 0..4 {
            for i in 0..4 {
                assert_eq!(img.at(i, j), if (i, j) == (2, 1) { 7.0 } else { 0.0 });
            }
        }

        let ones = vol(4, 4, 70, vec![1.0; 4 * 4 * 70]);
        let img = integrate_time(&ones);
        assert!(img.data().iter().all(|&x| x == 70.0));
    }

    #[test]
    fn integrate_time_matches_per_pixel_sum() {
        let v = vol(5, 3, 7, pseudo_random(105, 50));
        let img = integrate_time(&v);
        for j in 0..3 {
            for i in 0..5 {
                let direct: f64 = (0..7).map(|k| v.at(i, j, k)).sum();
                assert_eq!(img.at(i, j), direct);
            }
        }
    }

    #[test]
    fn mask_commutes_with_time_integration() {
        let v = vol(4, 4, 6, pseudo_random(96, 60));
        let t = Image2D::new(4, 4, 1.0, pseudo_random(16, 61).iter().map(|x| x.abs()).collect())
            .unwrap();
        let masked_then_integrated = integrate_time(&multiply_mask(&v, &t).unwrap());
        let integrated = integrate_time(&v);
        for j in 0..4 {
            for i in 0..4 {
                assert_abs_diff_eq!(
                    masked_then_integrated.at(i, j),
                    integrated.at(i, j) * t.at(i, j),
                    epsilon = 1e-12
                );
            }
        }
    }

    #[test]
    fn vec_normalized_contracts() {
        let mut v = Volume3D::zeros(3, 3, 3, 1.0, 1.0).unwrap();
        *v.at_mut(1, 1, 1) = 5.0;
        let n = vec_normalized(&v).unwrap();
        assert_eq!(n.iter().filter(|&&x| x != 0.0).count(), 1);
        assert_abs_diff_eq!(n[v.index(1, 1, 1)], 1.0, epsilon = 1e-15);

        let v = vol(4, 4, 4, pseudo_random(64, 70));
        let n = vec_normalized(&v).unwrap();
        let norm: f64 = n.iter().map(|x| x * x).sum::<f64>().sqrt();
        assert_abs_diff_eq!(norm, 1.0, epsilon = 1e-12);

        // positive scaling leaves the output unchanged
        let scaled = vol(4, 4, 4, v.data().iter().map(|x| x * 37.5).collect());
        let ns = vec_normalized(&scaled).unwrap();
        for (a, b) in n.iter().zip(ns.iter()) {
            assert_abs_diff_eq!(a, b, epsilon = 1e-12);
        }

        let zero = Volume3D::zeros(2, 2, 2, 1.0, 1.0).unwrap();
        assert!(vec_normalized(&zero).is_err());
    }

    #[test]
    fn volume_invariants_enforced() {
        assert!(Volume3D::new(2, 2, 2, 1.0, 1.0, vec![0.0; 7]).is_err());
        assert!(Volume3D::new(2, 2, 2, 0.0, 1.0, vec![0.0; 8]).is_err());
        assert!(Volume3D::new(2, 2, 2, 1.0, -1.0, vec![0.0; 8]).is_err());
        assert!(Volume3D::new(2, 2, 2, 1.0, 1.0, vec![f64::NAN; 8]).is_err());
        assert!(Volume3D::new(0, 2, 2, 1.0, 1.0, vec![]).is_err());
    }
}
