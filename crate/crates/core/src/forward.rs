//! The measurement model: illumination convolved with the source-side slab
//! kernel, multiplied by the 2D transmission mask, convolved with the
//! detector-side slab kernel.

use crate::diffusion::{sample_kernel, sample_kernel_dual, OpticalProperties, SceneGeometry};
use crate::error::{Error, Result};
use crate::tensor::{conv3d, multiply_mask, Image2D, Volume3D};

/// Everything the forward model needs: illumination, geometry, optical
/// properties, and the transmission mask.
#[derive(Debug, Clone)]
pub struct ForwardScene {
    pub illumination: Volume3D,
    pub geometry: SceneGeometry,
    pub props: OpticalProperties,
    pub mask: Image2D,
}

impl ForwardScene {
    pub fn new(
        illumination: Volume3D,
        geometry: SceneGeometry,
        props: OpticalProperties,
        mask: Image2D,
    ) -> Result<Self> {
        if illumination.nx() != geometry.nx
            || illumination.ny() != geometry.ny
            || illumination.nt() != geometry.nt
            || illumination.pixel_size() != geometry.pixel_size
            || illumination.bin_width() != geometry.bin_width
        {
            return Err(Error::shape("illumination grid does not match scene geometry".into()));
        }
        if mask.nx() != geometry.nx
            || mask.ny() != geometry.ny
            || mask.pixel_size() != geometry.pixel_size
        {
            return Err(Error::shape("mask grid does not match scene geometry".into()));
        }
        if mask.data().iter().any(|&v| !(0.0..=1.0).contains(&v)) {
            return Err(Error::invalid("mask values must lie in [0, 1]"));
        }
        Ok(ForwardScene { illumination, geometry, props, mask })
    }

    pub fn with_mask(&self, mask: Image2D) -> Result<Self> {
        Self::new(self.illumination.clone(), self.geometry.clone(), self.props, mask)
    }

    pub fn with_mu_s_prime(&self, mu_s_prime: f64) -> Result<Self> {
        Ok(ForwardScene {
            illumination: self.illumination.clone(),
            geometry: self.geometry.clone(),
            props: self.props.with_mu_s_prime(mu_s_prime)?,
            mask: self.mask.clone(),
        })
    }
}

/// Clamp FFT rounding residue: tiny negative values become 0. Anything more
/// negative than `1e-9 * max` would indicate a real defect, so the largest
/// clamped magnitude is reported back.
fn clamp_rounding_negatives(v: &mut Volume3D) -> f64 {
    let max = v.max_value().max(0.0);
    let mut worst = 0.0f64;
    for x in v.data_mut() {
        if *x < 0.0 {
            worst = worst.max(-*x);
            *x = 0.0;
        }
    }
    debug_assert!(
        worst <= 1e-9 * max.max(f64::MIN_POSITIVE),
        "clamped magnitude {worst} exceeds FFT rounding budget for max {max}"
    );
    worst
}

/// Predicted measurement for the scene; all outputs nonnegative after
/// clamping FFT rounding residue.
pub fn predict(scene: &ForwardScene) -> Result<Volume3D> {
    let k1 = sample_kernel(&scene.props, scene.geometry.d1, &scene.geometry)?;
    let k2 = sample_kernel(&scene.props, scene.geometry.d2, &scene.geometry)?;
    let blurred = conv3d(&scene.illumination, &k1)?;
    let masked = multiply_mask(&blurred, &scene.mask)?;
    let mut out = conv3d(&masked, &k2)?;
    clamp_rounding_negatives(&mut out);
    Ok(out)
}

/// Forward model with the scattering coefficient seeded for differentiation:
/// returns the value volume (identical to `predict`) and the elementwise
/// derivative with respect to mu_s'.
///
/// The kernels are where the parameter enters, so dual scalars flow through
/// kernel sampling; the convolutions are bilinear, so the derivative volume
/// is assembled by the product rule from real-valued convolutions.
pub fn predict_dual(scene: &ForwardScene) -> Result<(Volume3D, Volume3D)> {
    let (k1, dk1) = sample_kernel_dual(&scene.props, scene.geometry.d1, &scene.geometry)?;
    let (k2, dk2) = sample_kernel_dual(&scene.props, scene.geometry.d2, &scene.geometry)?;

    let blurred = conv3d(&scene.illumination, &k1)?;
    let blurred_d = conv3d(&scene.illumination, &dk1)?;
    let masked = multiply_mask(&blurred, &scene.mask)?;
    let masked_d = multiply_mask(&blurred_d, &scene.mask)?;

    let mut value = conv3d(&masked, &k2)?;
    let term_a = conv3d(&masked_d, &k2)?;
    let term_b = conv3d(&masked, &dk2)?;
    let mut deriv = term_a;
    for (d, b) in deriv.data_mut().iter_mut().zip(term_b.data()) {
        *d += b;
    }
    clamp_rounding_negatives(&mut value);
    Ok((value, deriv))
}
