//! Power spectra of image luminance and a nearest-centroid classifier over
//! them, used to identify which texture a synthetic image carries.

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// Frequencies below this radius (cycles per image) hold the smooth face
/// shading and are left out of texture features.
pub const MIN_TEXTURE_RADIUS: f64 = 4.0;

/// Square power spectrum `|DFT|^2` of a `size x size` plane, indexed
/// `[ky * size + kx]` with unshifted (FFT-order) frequencies.
#[derive(Clone, Debug, PartialEq)]
pub struct Periodogram {
    pub size: usize,
    pub power: Vec<f64>,
}

/// Signed frequency of FFT bin `k` on an axis of length `n`.
pub fn signed_frequency(k: usize, n: usize) -> i64 {
    if k <= n / 2 {
        k as i64
    } else {
        k as i64 - n as i64
    }
}

impl Periodogram {
    pub fn of_plane(plane: &[f32], size: usize) -> Result<Self> {
        if plane.len() != size * size || size == 0 {
            return Err(Error::dim("H/W", format!("{} values are not a {size}x{size} plane", plane.len())));
        }
        let mut buf: Vec<Complex<f64>> = plane.iter().map(|&v| Complex::new(f64::from(v), 0.0)).collect();
        let fft = FftPlanner::new().plan_fft_forward(size);
        for row in buf.chunks_exact_mut(size) {
            fft.process(row);
        }
        let mut column = vec![Complex::new(0.0, 0.0); size];
        for x in 0..size {
            for y in 0..size {
                column[y] = buf[y * size + x];
            }
            fft.process(&mut column);
            for y in 0..size {
                buf[y * size + x] = column[y];
            }
        }
        Ok(Periodogram {
            size,
            power: buf.iter().map(|c| c.norm_sqr()).collect(),
        })
    }

    /// Spectrum of the channel-mean of a `(1, C, S, S)` image.
    pub fn of_image(image: &Tensor) -> Result<Self> {
        let s = image.shape();
        if s.n != 1 || s.h != s.w {
            return Err(Error::dim("N/H/W", format!("expected one square image, got {s}")));
        }
        let plane = s.plane();
        let mut luma = vec![0.0f32; plane];
        for channel in image.data().chunks_exact(plane) {
            for (l, &v) in luma.iter_mut().zip(channel) {
                *l += v / s.c as f32;
            }
        }
        Self::of_plane(&luma, s.h)
    }

    /// Bins of the half-plane `ky > 0 or (ky == 0 and kx > 0)` whose radius
    /// lies in `[min_radius, size / 2]`, as signed `(kx, ky)`. A real
    /// signal's spectrum is symmetric, so this covers it without repeats.
    pub fn texture_bins(size: usize, min_radius: f64) -> Vec<(usize, i64, i64)> {
        let max_radius = (size / 2) as f64;
        let mut bins = Vec::new();
        for y in 0..size {
            for x in 0..size {
                let (kx, ky) = (signed_frequency(x, size), signed_frequency(y, size));
                let upper = ky > 0 || (ky == 0 && kx > 0);
                let r = ((kx * kx + ky * ky) as f64).sqrt();
                if upper && r >= min_radius && r <= max_radius {
                    bins.push((y * size + x, kx, ky));
                }
            }
        }
        bins
    }

    /// The strongest texture bin as signed `(kx, ky)`.
    pub fn dominant(&self, min_radius: f64) -> (i64, i64) {
        let mut best = (0.0, (0, 0));
        for (i, kx, ky) in Self::texture_bins(self.size, min_radius) {
            if self.power[i] > best.0 {
                best = (self.power[i], (kx, ky));
            }
        }
        best.1
    }

    /// Texture-band power normalized to unit sum.
    pub fn texture_feature(&self) -> Vec<f64> {
        let mut f: Vec<f64> = Self::texture_bins(self.size, MIN_TEXTURE_RADIUS)
            .into_iter()
            .map(|(i, _, _)| self.power[i])
            .collect();
        let total: f64 = f.iter().sum();
        if total > 0.0 {
            f.iter_mut().for_each(|v| *v /= total);
        }
        f
    }
}

pub fn texture_feature(image: &Tensor) -> Result<Vec<f64>> {
    Ok(Periodogram::of_image(image)?.texture_feature())
}

/// Nearest-centroid classifier under Euclidean distance. Class `i` is
/// occupation `i + 1`.
#[derive(Clone, Debug, PartialEq)]
pub struct NearestCentroid {
    pub centroids: Vec<Vec<f64>>,
}

impl NearestCentroid {
    /// `examples[i]` holds the training features of class `i`.
    pub fn fit(examples: &[Vec<Vec<f64>>]) -> Result<Self> {
        let mut centroids = Vec::with_capacity(examples.len());
        for (class, feats) in examples.iter().enumerate() {
            let first = feats
                .first()
                .ok_or_else(|| Error::Domain(format!("no training features for class {}", class + 1)))?;
            let mut c = vec![0.0; first.len()];
            for f in feats {
                if f.len() != c.len() {
                    return Err(Error::dim("feature", "feature lengths differ"));
                }
                c.iter_mut().zip(f).for_each(|(a, b)| *a += b);
            }
            c.iter_mut().for_each(|v| *v /= feats.len() as f64);
            centroids.push(c);
        }
        Ok(NearestCentroid { centroids })
    }

    /// Zero-based index of the nearest centroid.
    pub fn predict(&self, feature: &[f64]) -> usize {
        let dist = |c: &[f64]| c.iter().zip(feature).map(|(a, b)| (a - b) * (a - b)).sum::<f64>();
        let mut best = (f64::INFINITY, 0);
        for (i, c) in self.centroids.iter().enumerate() {
            let d = dist(c);
            if d < best.0 {
                best = (d, i);
            }
        }
        best.1
    }
}
