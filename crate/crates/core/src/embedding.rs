//! Pixel-to-qubit feature map and product states.

use std::f64::consts::FRAC_PI_2;

use crate::dataset::Image;
use crate::{Error, Result};

fn check_pixel(x: f64) -> Result<()> {
    if !(0.0..=1.0).contains(&x) {
        return Err(Error::Input(format!("pixel value {x} is outside [0, 1]")));
    }
    Ok(())
}

/// `x ↦ (cos(πx/2), sin(πx/2))`: white (0) maps to `|0⟩`, black (1) to `|1⟩`.
pub fn embed_pixel(x: f64) -> Result<[f64; 2]> {
    check_pixel(x)?;
    let angle = FRAC_PI_2 * x;
    Ok([angle.cos(), angle.sin()])
}

/// Closed form of `⟨φ(a)|φ(b)⟩ = cos(π(a − b)/2)`, always in `[0, 1]`.
pub fn pixel_overlap(a: f64, b: f64) -> Result<f64> {
    check_pixel(a)?;
    check_pixel(b)?;
    Ok((FRAC_PI_2 * (a - b)).cos().max(0.0))
}

/// A product state of qubits: one normalized 2-vector per site.
#[derive(Clone, Debug, PartialEq)]
pub struct ProductState {
    sites: Vec<[f64; 2]>,
}

impl ProductState {
    pub fn new(sites: Vec<[f64; 2]>) -> Result<Self> {
        for (k, v) in sites.iter().enumerate() {
            let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
            if !((norm - 1.0).abs() <= 1e-12) {
                return Err(Error::Input(format!("site {k} has norm {norm}, expected 1")));
            }
        }
        Ok(Self { sites })
    }

    /// Builds a product state from arbitrary non-zero 2-vectors by normalizing each site.
    pub fn normalized(sites: Vec<[f64; 2]>) -> Result<Self> {
        let sites = sites
            .into_iter()
            .enumerate()
            .map(|(k, v)| {
                let norm = (v[0] * v[0] + v[1] * v[1]).sqrt();
                if !(norm > 0.0 && norm.is_finite()) {
                    return Err(Error::Input(format!("site {k} cannot be normalized")));
                }
                Ok([v[0] / norm, v[1] / norm])
            })
            .collect::<Result<_>>()?;
        Ok(Self { sites })
    }

    pub fn sites(&self) -> &[[f64; 2]] {
        &self.sites
    }

    pub fn len(&self) -> usize {
        self.sites.len()
    }

    pub fn is_empty(&self) -> bool {
        self.sites.is_empty()
    }

    pub fn restrict(&self, region: &[usize]) -> Self {
        Self { sites: region.iter().map(|&s| self.sites[s]).collect() }
    }

    /// Overlap `⟨self|other⟩` accumulated in log space.
    pub fn log_overlap(&self, other: &Self) -> LogProduct {
        LogProduct::over(self.sites.iter().zip(&other.sites).map(|(a, b)| dot(a, b)))
    }

    /// Overlap restricted to the listed sites.
    pub fn log_overlap_on(&self, other: &Self, region: &[usize]) -> LogProduct {
        LogProduct::over(region.iter().map(|&s| dot(&self.sites[s], &other.sites[s])))
    }
}

#[inline]
pub(crate) fn dot(a: &[f64; 2], b: &[f64; 2]) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

/// A product of real factors stored as `(-1)^negative · exp(log_magnitude)`,
/// with exactly-zero factors counted separately.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogProduct {
    pub log_magnitude: f64,
    pub negative: bool,
    pub zeros: usize,
}

impl LogProduct {
    pub const ONE: Self = Self { log_magnitude: 0.0, negative: false, zeros: 0 };

    pub fn over(factors: impl IntoIterator<Item = f64>) -> Self {
        const LOW: f64 = 1e-200;
        const HIGH: f64 = 1e200;
        let mut out = Self::ONE;
        let mut running = 1.0_f64;
        for f in factors {
            if f == 0.0 {
                out.zeros += 1;
                continue;
            }
            running *= f;
            let mag = running.abs();
            if !(LOW..=HIGH).contains(&mag) {
                out.log_magnitude += mag.ln();
                out.negative ^= running < 0.0;
                running = 1.0;
            }
        }
        out.log_magnitude += running.abs().ln();
        out.negative ^= running < 0.0;
        out
    }

    /// Factors present in `self` but not in `part`, assuming `part` is a sub-product.
    pub fn without(&self, part: &Self) -> Self {
        Self {
            log_magnitude: self.log_magnitude - part.log_magnitude,
            negative: self.negative ^ part.negative,
            zeros: self.zeros - part.zeros,
        }
    }

    pub fn value(&self) -> f64 {
        if self.zeros > 0 {
            return 0.0;
        }
        let v = self.log_magnitude.exp();
        if self.negative {
            -v
        } else {
            v
        }
    }

    /// Natural log of the product, `-∞` when a factor is zero.
    pub fn ln(&self) -> f64 {
        if self.zeros > 0 {
            f64::NEG_INFINITY
        } else {
            self.log_magnitude
        }
    }
}

/// Embeds every pixel, in row-major site order.
pub fn embed_image(img: &Image) -> Result<ProductState> {
    let sites = img.pixels.iter().map(|&p| embed_pixel(p)).collect::<Result<_>>()?;
    Ok(ProductState { sites })
}
