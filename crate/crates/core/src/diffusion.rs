//! Analytic diffusion-approximation kernels for a homogeneous scattering
//! medium: the infinite-medium fluence rate and the bounded-slab
//! transmittance kernel built from four image sources. Both are generic over
//! plain reals and dual scalars so the scattering derivative can flow
//! through kernel sampling.

use crate::autodiff::{Dual, Scalar};
use crate::error::{Error, Result};
use crate::tensor::Volume3D;
use std::ops::Range;

/// Speed of light in vacuum, mm/ps.
pub const C_VACUUM_MM_PER_PS: f64 = 0.299792458;

/// Fraction of the peak value treated as the noise floor when selecting the
/// late-time fitting window. Scale-proportional so absorption estimates are
/// invariant under uniform rescaling of the measurement.
const NOISE_FLOOR_RATIO: f64 = 1e-4;

/// Optical properties of the homogeneous medium.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct OpticalProperties {
    mu_a: f64,
    mu_s_prime: f64,
    g: f64,
    refractive_index: f64,
}

impl OpticalProperties {
    pub fn new(mu_a: f64, mu_s_prime: f64, g: f64, refractive_index: f64) -> Result<Self> {
        if !(mu_a >= 0.0) || !mu_a.is_finite() {
            return Err(Error::invalid(format!("mu_a must be >= 0, got {mu_a}")));
        }
        if !(mu_s_prime > 0.0) || !mu_s_prime.is_finite() {
            return Err(Error::invalid(format!("mu_s' must be > 0, got {mu_s_prime}")));
        }
        if !(0.0..1.0).contains(&g) {
            return Err(Error::invalid(format!("anisotropy g must lie in [0,1), got {g}")));
        }
        if !(refractive_index >= 1.0) || !refractive_index.is_finite() {
            return Err(Error::invalid(format!(
                "refractive index must be >= 1, got {refractive_index}"
            )));
        }
        Ok(OpticalProperties { mu_a, mu_s_prime, g, refractive_index })
    }

    pub fn mu_a(&self) -> f64 {
        self.mu_a
    }

    pub fn mu_s_prime(&self) -> f64 {
        self.mu_s_prime
    }

    pub fn g(&self) -> f64 {
        self.g
    }

    pub fn refractive_index(&self) -> f64 {
        self.refractive_index
    }

    /// Speed of light in the medium, mm/ps.
    pub fn c(&self) -> f64 {
        C_VACUUM_MM_PER_PS / self.refractive_index
    }

    /// Diffusion coefficient D = 1/(3(mu_a + mu_s')), mm.
    pub fn diffusion_coefficient(&self) -> f64 {
        1.0 / (3.0 * (self.mu_a + self.mu_s_prime))
    }

    /// Effective isotropic-source depth z0 = 1/mu_s', mm.
    pub fn z0(&self) -> f64 {
        1.0 / self.mu_s_prime
    }

    pub fn with_mu_a(&self, mu_a: f64) -> Result<Self> {
        Self::new(mu_a, self.mu_s_prime, self.g, self.refractive_index)
    }

    pub fn with_mu_s_prime(&self, mu_s_prime: f64) -> Result<Self> {
        Self::new(self.mu_a, mu_s_prime, self.g, self.refractive_index)
    }
}

/// Slab and detector-grid geometry: source-side thickness d1, detector-side
/// thickness d2, the detector grid mapping, and the illumination spot.
#[derive(Debug, Clone, PartialEq)]
pub struct SceneGeometry {
    pub d1: f64,
    pub d2: f64,
    pub nx: usize,
    pub ny: usize,
    pub pixel_size: f64,
    pub nt: usize,
    pub bin_width: f64,
    /// Illumination spot: pixel position and temporal impulse bin.
    pub illum_pixel: (usize, usize),
    pub illum_bin: usize,
}

impl SceneGeometry {
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        d1: f64,
        d2: f64,
        nx: usize,
        ny: usize,
        pixel_size: f64,
        nt: usize,
        bin_width: f64,
        illum_pixel: (usize, usize),
        illum_bin: usize,
    ) -> Result<Self> {
        if !(d1 > 0.0) || !(d2 > 0.0) {
            return Err(Error::invalid(format!("slab thicknesses must be positive: {d1}, {d2}")));
        }
        if nx == 0 || ny == 0 || nt == 0 || !(pixel_size > 0.0) || !(bin_width > 0.0) {
            return Err(Error::invalid("detector grid must have positive extent"));
        }
        if illum_pixel.0 >= nx || illum_pixel.1 >= ny || illum_bin >= nt {
            return Err(Error::invalid("illumination spot lies outside the grid"));
        }
        Ok(SceneGeometry { d1, d2, nx, ny, pixel_size, nt, bin_width, illum_pixel, illum_bin })
    }

    pub fn total_thickness(&self) -> f64 {
        self.d1 + self.d2
    }

    /// x coordinate of pixel column i, grid midpoint at 0.
    pub fn x_coord(&self, i: usize) -> f64 {
        (i as isize - (self.nx / 2) as isize) as f64 * self.pixel_size
    }

    pub fn y_coord(&self, j: usize) -> f64 {
        (j as isize - (self.ny / 2) as isize) as f64 * self.pixel_size
    }

    /// Bin-center time of bin k, ps.
    pub fn t_center(&self, k: usize) -> f64 {
        (k as f64 + 0.5) * self.bin_width
    }

    /// Impulse illumination: unit weight in the configured pixel and bin.
    pub fn impulse_illumination(&self) -> Volume3D {
        let mut v = Volume3D::zeros(self.nx, self.ny, self.nt, self.pixel_size, self.bin_width)
            .expect("validated geometry");
        *v.at_mut(self.illum_pixel.0, self.illum_pixel.1, self.illum_bin) = 1.0;
        v
    }

    /// Illumination with an optional Gaussian spatial spot (sigma in mm) and
    /// an optional Gaussian instrument response (FWHM in ps) replacing the
    /// temporal delta. Profiles are normalized to unit total weight.
    pub fn illumination(&self, spot_sigma_mm: Option<f64>, irf_fwhm_ps: Option<f64>) -> Volume3D {
        let (ci, cj) = self.illum_pixel;
        let x0 = self.x_coord(ci);
        let y0 = self.y_coord(cj);
        let spatial: Vec<f64> = match spot_sigma_mm {
            None => {
                let mut s = vec![0.0; self.nx * self.ny];
                s[ci + self.nx * cj] = 1.0;
                s
            }
            Some(sigma) => {
                let mut s = vec![0.0; self.nx * self.ny];
                for j in 0..self.ny {
                    for i in 0..self.nx {
                        let dx = self.x_coord(i) - x0;
                        let dy = self.y_coord(j) - y0;
                        s[i + self.nx * j] = (-(dx * dx + dy * dy) / (2.0 * sigma * sigma)).exp();
                    }
                }
                let total: f64 = s.iter().sum();
                s.iter_mut().for_each(|v| *v /= total);
                s
            }
        };
        let t0 = self.t_center(self.illum_bin);
        let temporal: Vec<f64> = match irf_fwhm_ps {
            None => {
                let mut t = vec![0.0; self.nt];
                t[self.illum_bin] = 1.0;
                t
            }
            Some(fwhm) => {
                let sigma = fwhm / (8.0 * 2.0f64.ln()).sqrt();
                let mut t: Vec<f64> = (0..self.nt)
                    .map(|k| {
                        let dt = self.t_center(k) - t0;
                        (-dt * dt / (2.0 * sigma * sigma)).exp()
                    })
                    .collect();
                let total: f64 = t.iter().sum();
                t.iter_mut().for_each(|v| *v /= total);
                t
            }
        };
        let mut v = Volume3D::zeros(self.nx, self.ny, self.nt, self.pixel_size, self.bin_width)
            .expect("validated geometry");
        for k in 0..self.nt {
            if temporal[k] == 0.0 {
                continue;
            }
            for p in 0..self.nx * self.ny {
                v.data_mut()[p + self.nx * self.ny * k] = spatial[p] * temporal[k];
            }
        }
        v
    }
}

/// Infinite-medium photon fluence rate
/// c (4 pi D c t)^(-3/2) exp(-r^2/(4 D c t) - mu_a c t), generic in the
/// scattering coefficient.
pub fn fluence_infinite_generic<S: Scalar>(r: f64, t: f64, mu_a: f64, mu_s_prime: S, c: f64) -> S {
    let d = S::from_f64(1.0) / (S::from_f64(3.0) * (S::from_f64(mu_a) + mu_s_prime));
    let four_dct = d * S::from_f64(4.0 * c * t);
    let pref = (d * S::from_f64(4.0 * std::f64::consts::PI * c * t)).powf(-1.5);
    let gauss = (-(S::from_f64(r * r)) / four_dct).exp();
    S::from_f64(c) * pref * gauss * S::from_f64((-mu_a * c * t).exp())
}

/// Infinite-medium fluence rate at radial distance r (mm) and time t (ps).
pub fn fluence_infinite(r: f64, t: f64, props: &OpticalProperties) -> Result<f64> {
    if !(t > 0.0) {
        return Err(Error::invalid(format!("fluence requires t > 0, got {t}")));
    }
    Ok(fluence_infinite_generic(r, t, props.mu_a(), props.mu_s_prime(), props.c()))
}

/// Time-resolved transmittance kernel of a homogeneous slab of thickness d:
/// prefactor (4 pi D c)^(-3/2) t^(-5/2) exp(-mu_a c t) exp(-|r|^2/(4 D c t))
/// with |r|^2 = x^2 + y^2 + d^2, times the four-term image-source bracket
/// with offsets (d -+ z0) and (3d -+ z0).
pub fn slab_kernel_generic<S: Scalar>(
    x: f64,
    y: f64,
    t: f64,
    mu_a: f64,
    mu_s_prime: S,
    c: f64,
    d: f64,
) -> S {
    let diff = S::from_f64(1.0) / (S::from_f64(3.0) * (S::from_f64(mu_a) + mu_s_prime));
    let z0 = S::from_f64(1.0) / mu_s_prime;
    let four_dct = diff * S::from_f64(4.0 * c * t);
    let r2 = x * x + y * y + d * d;
    let pref = (diff * S::from_f64(4.0 * std::f64::consts::PI * c)).powf(-1.5);
    let tfac = S::from_f64(t.powf(-2.5) * (-mu_a * c * t).exp());
    let gauss = (-(S::from_f64(r2)) / four_dct).exp();

    let term = |a: S| -> S { a * (-(a * a) / four_dct).exp() };
    let dd = S::from_f64(d);
    let d3 = S::from_f64(3.0 * d);
    let bracket = term(dd - z0) - term(dd + z0) + term(d3 - z0) - term(d3 + z0);

    pref * tfac * gauss * bracket
}

/// Slab transmittance kernel value at offset (x, y) mm and time t ps for a
/// slab of thickness d mm.
pub fn slab_kernel_value(
    x: f64,
    y: f64,
    t: f64,
    props: &OpticalProperties,
    d: f64,
) -> Result<f64> {
    if !x.is_finite() || !y.is_finite() || !t.is_finite() || !d.is_finite() {
        return Err(Error::invalid("slab kernel parameters must be finite"));
    }
    if !(t > 0.0) {
        return Err(Error::invalid(format!("slab kernel requires t > 0, got {t}")));
    }
    if !(d > 0.0) {
        return Err(Error::invalid(format!("slab kernel requires d > 0, got {d}")));
    }
    Ok(slab_kernel_generic(x, y, t, props.mu_a(), props.mu_s_prime(), props.c(), d))
}

/// Sample the slab kernel on the scene's detector grid: bin-center times,
/// spatial coordinates centered on the grid midpoint. Bins at t <= 0 are 0.
pub fn sample_kernel(props: &OpticalProperties, d: f64, geom: &SceneGeometry) -> Result<Volume3D> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("kernel thickness must be positive, got {d}")));
    }
    let (mu_a, musp, c) = (props.mu_a(), props.mu_s_prime(), props.c());
    Volume3D::from_fn(geom.nx, geom.ny, geom.nt, geom.pixel_size, geom.bin_width, |i, j, k| {
        let t = geom.t_center(k);
        if t <= 0.0 {
            0.0
        } else {
            slab_kernel_generic(geom.x_coord(i), geom.y_coord(j), t, mu_a, musp, c, d)
        }
    })
}

/// Sample the kernel and its derivative with respect to mu_s' in one pass.
pub fn sample_kernel_dual(
    props: &OpticalProperties,
    d: f64,
    geom: &SceneGeometry,
) -> Result<(Volume3D, Volume3D)> {
    if !(d > 0.0) || !d.is_finite() {
        return Err(Error::invalid(format!("kernel thickness must be positive, got {d}")));
    }
    let (mu_a, c) = (props.mu_a(), props.c());
    let musp = Dual::variable(props.mu_s_prime());
    let n = geom.nx * geom.ny * geom.nt;
    let mut value = Vec::with_capacity(n);
    let mut deriv = Vec::with_capacity(n);
    for k in 0..geom.nt {
        let t = geom.t_center(k);
        for j in 0..geom.ny {
            let y = geom.y_coord(j);
            for i in 0..geom.nx {
                if t <= 0.0 {
                    value.push(0.0);
                    deriv.push(0.0);
                } else {
                    let v = slab_kernel_generic(geom.x_coord(i), y, t, mu_a, musp, c, d);
                    value.push(v.value);
                    deriv.push(v.deriv);
                }
            }
        }
    }
    Ok((
        Volume3D::new(geom.nx, geom.ny, geom.nt, geom.pixel_size, geom.bin_width, value)?,
        Volume3D::new(geom.nx, geom.ny, geom.nt, geom.pixel_size, geom.bin_width, deriv)?,
    ))
}

/// Least-squares slope of log(value) versus bin-center time over `window`,
/// in 1/ps. Every value in the window must be strictly positive.
pub fn log_slope_late(values: &[f64], bin_width: f64, window: Range<usize>) -> Result<f64> {
    if window.end > values.len() || window.len() < 2 {
        return Err(Error::invalid(format!(
            "slope window {window:?} invalid for {} bins",
            values.len()
        )));
    }
    let mut ts = Vec::with_capacity(window.len());
    let mut ys = Vec::with_capacity(window.len());
    for k in window {
        let v = values[k];
        if !(v > 0.0) {
            return Err(Error::invalid(format!(
                "nonpositive value {v} at bin {k} inside slope window"
            )));
        }
        ts.push((k as f64 + 0.5) * bin_width);
        ys.push(v.ln());
    }
    let n = ts.len() as f64;
    let tm = ts.iter().sum::<f64>() / n;
    let ym = ys.iter().sum::<f64>() / n;
    let num: f64 = ts.iter().zip(&ys).map(|(t, y)| (t - tm) * (y - ym)).sum();
    let den: f64 = ts.iter().map(|t| (t - tm) * (t - tm)).sum();
    Ok(num / den)
}

/// Default late-time window: the last quarter of the span of bins whose
/// value exceeds 5x the estimated noise floor (a fixed fraction of the peak,
/// so the window is invariant under uniform rescaling).
pub fn default_late_window(values: &[f64]) -> Result<Range<usize>> {
    let peak = values.iter().cloned().fold(f64::NEG_INFINITY, f64::max);
    if !(peak > 0.0) {
        return Err(Error::InsufficientSnr("histogram has no positive bins".into()));
    }
    let threshold = 5.0 * NOISE_FLOOR_RATIO * peak;
    let eligible: Vec<usize> =
        (0..values.len()).filter(|&k| values[k] > threshold).collect();
    let (first, last) = match (eligible.first(), eligible.last()) {
        (Some(&f), Some(&l)) if l > f => (f, l),
        _ => {
            return Err(Error::InsufficientSnr(
                "all bins below noise floor; cannot place late-time window".into(),
            ))
        }
    };
    let span = last - first + 1;
    let quarter = (span / 4).max(4).min(span);
    let start = last + 1 - quarter;
    if last + 1 - start < 2 {
        return Err(Error::InsufficientSnr("late-time window too short".into()));
    }
    Ok(start..last + 1)
}
