//! Image and distribution metrics: SSIM and the Fréchet distance between
//! Gaussian fits of clip features.

use alloc::format;
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};
use crate::math::{exp, sqrt};
use crate::raster::Image;

pub const SSIM_WINDOW: usize = 11;
pub const SSIM_SIGMA: f64 = 1.5;
pub const SSIM_K1: f64 = 0.01;
pub const SSIM_K2: f64 = 0.03;

fn gaussian_window(size: usize, sigma: f64) -> Vec<f64> {
    let half = (size as f64 - 1.0) / 2.0;
    let raw: Vec<f64> =
        (0..size).map(|i| exp(-((i as f64 - half) * (i as f64 - half)) / (2.0 * sigma * sigma))).collect();
    let total: f64 = raw.iter().sum();
    raw.into_iter().map(|v| v / total).collect()
}

/// Mean SSIM over all valid 11×11 Gaussian windows, averaged over
/// channels. Images smaller than the window use one window spanning the
/// shorter side.
pub fn ssim(a: &Image, b: &Image, data_range: f64) -> Result<f64> {
    if !a.same_shape(b) {
        return Err(Error::Shape(format!(
            "{}x{}x{} vs {}x{}x{}",
            a.width, a.height, a.channels, b.width, b.height, b.channels
        )));
    }
    if a.width == 0 || a.height == 0 {
        return Err(Error::Empty("image"));
    }
    let size = SSIM_WINDOW.min(a.width).min(a.height);
    let g = gaussian_window(size, SSIM_SIGMA);
    let c1 = (SSIM_K1 * data_range) * (SSIM_K1 * data_range);
    let c2 = (SSIM_K2 * data_range) * (SSIM_K2 * data_range);
    let (nx, ny) = (a.width - size + 1, a.height - size + 1);
    let mut total = 0.0;
    for c in 0..a.channels {
        let mut sum = 0.0;
        for y0 in 0..ny {
            for x0 in 0..nx {
                let (mut ma, mut mb, mut saa, mut sbb, mut sab) = (0.0, 0.0, 0.0, 0.0, 0.0);
                for dy in 0..size {
                    for dx in 0..size {
                        let w = g[dy] * g[dx];
                        let (va, vb) = (a.get(x0 + dx, y0 + dy, c), b.get(x0 + dx, y0 + dy, c));
                        ma += w * va;
                        mb += w * vb;
                        saa += w * va * va;
                        sbb += w * vb * vb;
                        sab += w * va * vb;
                    }
                }
                let va = saa - ma * ma;
                let vb = sbb - mb * mb;
                let cov = sab - ma * mb;
                let num = (2.0 * (ma * mb) + c1) * (2.0 * cov + c2);
                let den = (ma * ma + mb * mb + c1) * (va + vb + c2);
                sum += num / den;
            }
        }
        total += sum / (nx * ny) as f64;
    }
    Ok(total / a.channels as f64)
}

/// Symmetric matrix as a row-major `n × n` buffer.
#[derive(Debug, Clone, PartialEq)]
pub struct SymMatrix {
    pub n: usize,
    pub data: Vec<f64>,
}

impl SymMatrix {
    pub fn zeros(n: usize) -> Self {
        Self { n, data: vec![0.0; n * n] }
    }

    pub fn diagonal(values: &[f64]) -> Self {
        let mut m = Self::zeros(values.len());
        for (i, &v) in values.iter().enumerate() {
            m.data[i * m.n + i] = v;
        }
        m
    }

    #[inline]
    pub fn at(&self, i: usize, j: usize) -> f64 {
        self.data[i * self.n + j]
    }

    pub fn trace(&self) -> f64 {
        (0..self.n).map(|i| self.at(i, i)).sum()
    }

    pub fn matmul(&self, other: &SymMatrix) -> SymMatrix {
        let n = self.n;
        let mut out = SymMatrix::zeros(n);
        for i in 0..n {
            for k in 0..n {
                let a = self.at(i, k);
                for j in 0..n {
                    out.data[i * n + j] += a * other.at(k, j);
                }
            }
        }
        out
    }

    fn symmetrized(mut self) -> Self {
        let n = self.n;
        for i in 0..n {
            for j in i + 1..n {
                let v = 0.5 * (self.at(i, j) + self.at(j, i));
                self.data[i * n + j] = v;
                self.data[j * n + i] = v;
            }
        }
        self
    }
}

/// Cyclic Jacobi eigendecomposition. Returns eigenvalues and the
/// eigenvectors as columns of a row-major matrix.
pub fn symmetric_eigen(m: &SymMatrix) -> (Vec<f64>, Vec<f64>) {
    let n = m.n;
    let mut a = m.data.clone();
    let mut v = vec![0.0; n * n];
    for i in 0..n {
        v[i * n + i] = 1.0;
    }
    for _sweep in 0..100 {
        let off: f64 = (0..n)
            .flat_map(|i| (0..n).filter(move |&j| j != i).map(move |j| (i, j)))
            .map(|(i, j)| a[i * n + j] * a[i * n + j])
            .sum();
        let scale: f64 = a.iter().map(|x| x * x).sum();
        if off <= 1e-30 * scale.max(1e-300) {
            break;
        }
        for p in 0..n {
            for q in p + 1..n {
                let apq = a[p * n + q];
                if apq == 0.0 {
                    continue;
                }
                let theta = (a[q * n + q] - a[p * n + p]) / (2.0 * apq);
                let t = theta.signum() / (theta.abs() + sqrt(theta * theta + 1.0));
                let t = if theta == 0.0 { 1.0 } else { t };
                let c = 1.0 / sqrt(t * t + 1.0);
                let s = t * c;
                for k in 0..n {
                    let (akp, akq) = (a[k * n + p], a[k * n + q]);
                    a[k * n + p] = c * akp - s * akq;
                    a[k * n + q] = s * akp + c * akq;
                }
                for k in 0..n {
                    let (apk, aqk) = (a[p * n + k], a[q * n + k]);
                    a[p * n + k] = c * apk - s * aqk;
                    a[q * n + k] = s * apk + c * aqk;
                }
                for k in 0..n {
                    let (vkp, vkq) = (v[k * n + p], v[k * n + q]);
                    v[k * n + p] = c * vkp - s * vkq;
                    v[k * n + q] = s * vkp + c * vkq;
                }
            }
        }
    }
    ((0..n).map(|i| a[i * n + i]).collect(), v)
}

/// Principal square root. Eigenvalues below `1e-12 · λ_max`, negative ones
/// included, are treated as zero.
pub fn sqrt_psd(m: &SymMatrix) -> SymMatrix {
    let n = m.n;
    let (vals, vecs) = symmetric_eigen(m);
    let floor = 1e-12 * vals.iter().cloned().fold(0.0, f64::max);
    let mut out = SymMatrix::zeros(n);
    for (k, &lam) in vals.iter().enumerate() {
        let r = if lam > floor { sqrt(lam) } else { 0.0 };
        if r == 0.0 {
            continue;
        }
        for i in 0..n {
            let vi = vecs[i * n + k] * r;
            for j in 0..n {
                out.data[i * n + j] += vi * vecs[j * n + k];
            }
        }
    }
    out.symmetrized()
}

#[derive(Debug, Clone, PartialEq)]
pub struct FeatureGaussian {
    pub mean: Vec<f64>,
    pub cov: SymMatrix,
}

impl FeatureGaussian {
    /// Two-pass mean and unbiased covariance; a single sample gives a zero
    /// covariance.
    pub fn fit(samples: &[Vec<f64>]) -> Result<Self> {
        let first = samples.first().ok_or(Error::Empty("feature samples"))?;
        let d = first.len();
        if samples.iter().any(|s| s.len() != d) {
            return Err(Error::Shape("feature vectors differ in length".into()));
        }
        let n = samples.len() as f64;
        let mut mean = vec![0.0; d];
        for s in samples {
            for (m, v) in mean.iter_mut().zip(s) {
                *m += v;
            }
        }
        mean.iter_mut().for_each(|m| *m /= n);
        let mut cov = SymMatrix::zeros(d);
        if samples.len() > 1 {
            for s in samples {
                for i in 0..d {
                    let di = s[i] - mean[i];
                    for j in 0..d {
                        cov.data[i * d + j] += di * (s[j] - mean[j]);
                    }
                }
            }
            cov.data.iter_mut().for_each(|c| *c /= n - 1.0);
        }
        Ok(Self { mean, cov })
    }
}

/// `‖μ₁ − μ₂‖² + tr(Σ₁ + Σ₂ − 2 (Σ₁^½ Σ₂ Σ₁^½)^½)`, clamped at zero.
pub fn frechet_distance(g1: &FeatureGaussian, g2: &FeatureGaussian) -> Result<f64> {
    if g1.mean.len() != g2.mean.len() || g1.cov.n != g2.cov.n || g1.cov.n != g1.mean.len() {
        return Err(Error::Shape(format!("feature dimensions {} and {}", g1.mean.len(), g2.mean.len())));
    }
    let dmu: f64 = g1.mean.iter().zip(&g2.mean).map(|(a, b)| (a - b) * (a - b)).sum();
    let s1 = sqrt_psd(&g1.cov);
    let inner = s1.matmul(&g2.cov).matmul(&s1).symmetrized();
    let cross = sqrt_psd(&inner).trace();
    Ok((dmu + g1.cov.trace() + g2.cov.trace() - 2.0 * cross).max(0.0))
}

/// Clip-level feature plugin.
pub trait FeatureExtractor {
    fn name(&self) -> String;
    fn extract(&self, clip: &[Image]) -> Vec<f64>;
}

/// Per-channel mean colour over all frames.
pub struct MeanColor;

impl FeatureExtractor for MeanColor {
    fn name(&self) -> String {
        "mean_color".into()
    }

    fn extract(&self, clip: &[Image]) -> Vec<f64> {
        let ch = clip.first().map_or(0, |f| f.channels);
        let mut out = vec![0.0; ch];
        let mut n = 0usize;
        for f in clip {
            for px in f.data.chunks(ch) {
                for (o, v) in out.iter_mut().zip(px) {
                    *o += v;
                }
                n += 1;
            }
        }
        out.iter_mut().for_each(|o| *o /= n.max(1) as f64);
        out
    }
}

/// Hand-crafted spatiotemporal features: per-channel colour histograms
/// (`bins` bins over 0..=255, averaged over frames) followed by the
/// per-channel mean absolute frame difference.
pub struct Builtin {
    pub bins: usize,
}

impl Default for Builtin {
    fn default() -> Self {
        Self { bins: 8 }
    }
}

impl FeatureExtractor for Builtin {
    fn name(&self) -> String {
        "builtin".into()
    }

    fn extract(&self, clip: &[Image]) -> Vec<f64> {
        let Some(first) = clip.first() else {
            return Vec::new();
        };
        let ch = first.channels;
        let mut hist = vec![0.0; ch * self.bins];
        for f in clip {
            let px = (f.width * f.height) as f64;
            for p in f.data.chunks(ch) {
                for (c, &v) in p.iter().enumerate() {
                    let b = ((v.clamp(0.0, 255.0) / 256.0) * self.bins as f64) as usize;
                    hist[c * self.bins + b.min(self.bins - 1)] += 1.0 / px;
                }
            }
        }
        hist.iter_mut().for_each(|h| *h /= clip.len() as f64);
        let mut motion = vec![0.0; ch];
        for pair in clip.windows(2) {
            for (i, (a, b)) in pair[0].data.iter().zip(&pair[1].data).enumerate() {
                motion[i % ch] += (a - b).abs();
            }
        }
        let denom = ((clip.len().saturating_sub(1)) * first.width * first.height).max(1) as f64;
        motion.iter_mut().for_each(|m| *m /= denom);
        hist.extend(motion);
        hist
    }
}

/// Fréchet distance between feature Gaussians of two clip sets.
pub fn clip_frechet(
    generated: &[Vec<Image>],
    reference: &[Vec<Image>],
    features: &dyn FeatureExtractor,
) -> Result<f64> {
    let fg: Vec<Vec<f64>> = generated.iter().map(|c| features.extract(c)).collect();
    let fr: Vec<Vec<f64>> = reference.iter().map(|c| features.extract(c)).collect();
    frechet_distance(&FeatureGaussian::fit(&fg)?, &FeatureGaussian::fit(&fr)?)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng;
    use proptest::prelude::*;

    fn noisy(base: &Image, sigma: f64, seed: u64) -> Image {
        let n = rng::noise(seed, base.data.len());
        Image { data: base.data.iter().zip(n).map(|(v, e)| v + sigma * 255.0 * e).collect(), ..base.clone() }
    }

    fn texture(seed: u64) -> Image {
        let n = rng::noise(seed, 24 * 24 * 3);
        Image { width: 24, height: 24, channels: 3, data: n.into_iter().map(|v| 128.0 + 30.0 * v).collect() }
    }

    #[test]
    fn ssim_identity_is_exactly_one() {
        let a = texture(1);
        assert_eq!(ssim(&a, &a, 255.0).unwrap(), 1.0);
    }

    #[test]
    fn ssim_constant_images_closed_form() {
        let a = Image::filled(16, 16, 1, 0.0);
        let b = Image::filled(16, 16, 1, 255.0);
        let (c1, c2) = ((0.01f64 * 255.0).powi(2), (0.03f64 * 255.0).powi(2));
        let expect = (2.0 * 0.0 * 255.0 + c1) * c2 / ((255.0f64 * 255.0 + c1) * c2);
        assert!((ssim(&a, &b, 255.0).unwrap() - expect).abs() < 1e-9);
    }

    #[test]
    fn ssim_drops_with_noise() {
        let a = texture(2);
        let s: Vec<f64> = [0.01, 0.05, 0.1].iter().map(|&sg| ssim(&a, &noisy(&a, sg, 3), 255.0).unwrap()).collect();
        assert!(s[0] > s[1] && s[1] > s[2], "{s:?}");
        let b = noisy(&a, 0.05, 4);
        assert!((ssim(&a, &b, 255.0).unwrap() - ssim(&b, &a, 255.0).unwrap()).abs() < 1e-9);
        assert!(ssim(&a, &Image::filled(3, 3, 3, 0.0), 255.0).is_err());
    }

    #[test]
    fn jacobi_reconstructs_matrix() {
        let x: Vec<Vec<f64>> = (0..20).map(|i| rng::noise(i, 5)).collect();
        let g = FeatureGaussian::fit(&x).unwrap();
        let r = sqrt_psd(&g.cov);
        let back = r.matmul(&r);
        assert!(crate::math::max_abs_diff(&back.data, &g.cov.data) < 1e-10);
    }

    #[test]
    fn frechet_closed_forms() {
        let one = |mu: f64, var: f64| FeatureGaussian { mean: vec![mu], cov: SymMatrix::diagonal(&[var]) };
        assert!((frechet_distance(&one(0.0, 1.0), &one(1.0, 1.0)).unwrap() - 1.0).abs() < 1e-12);
        let x: Vec<Vec<f64>> = (0..30).map(|i| rng::noise(i + 100, 6)).collect();
        let g = FeatureGaussian::fit(&x).unwrap();
        assert!(frechet_distance(&g, &g).unwrap() <= 1e-8);
        let bad = FeatureGaussian { mean: vec![0.0; 2], cov: SymMatrix::zeros(2) };
        assert!(frechet_distance(&g, &bad).is_err());
    }

    proptest! {
        #[test]
        fn frechet_diagonal_oracle(l1 in proptest::collection::vec(0.0f64..4.0, 4), l2 in proptest::collection::vec(0.0f64..4.0, 4), m in proptest::collection::vec(-2.0f64..2.0, 4)) {
            let g1 = FeatureGaussian { mean: vec![0.0; 4], cov: SymMatrix::diagonal(&l1) };
            let g2 = FeatureGaussian { mean: m.clone(), cov: SymMatrix::diagonal(&l2) };
            let expect: f64 = l1.iter().zip(&l2).map(|(a, b)| (a.sqrt() - b.sqrt()).powi(2)).sum::<f64>()
                + m.iter().map(|v| v * v).sum::<f64>();
            let d12 = frechet_distance(&g1, &g2).unwrap();
            let d21 = frechet_distance(&g2, &g1).unwrap();
            prop_assert!((d12 - expect).abs() < 1e-8);
            prop_assert!((d12 - d21).abs() < 1e-8 && d12 >= 0.0);
        }
    }

    #[test]
    fn frechet_is_symmetric_for_dense_covariances() {
        let a: Vec<Vec<f64>> = (0..12).map(|i| rng::noise(i + 7, 4)).collect();
        let b: Vec<Vec<f64>> =
            (0..12).map(|i| rng::noise(i + 70, 4).into_iter().map(|v| 2.0 * v + 1.0).collect()).collect();
        let (ga, gb) = (FeatureGaussian::fit(&a).unwrap(), FeatureGaussian::fit(&b).unwrap());
        let (d1, d2) = (frechet_distance(&ga, &gb).unwrap(), frechet_distance(&gb, &ga).unwrap());
        assert!((d1 - d2).abs() < 1e-8 && d1 > 0.0);
    }

    #[test]
    fn mean_color_statistics_oracle() {
        let clip = |v: f64| vec![Image::filled(4, 4, 3, v), Image::filled(4, 4, 3, v + 2.0)];
        let gen = vec![clip(10.0), clip(20.0)];
        let refs = vec![clip(10.0), clip(40.0)];
        // Clip means: gen 11, 21 and ref 11, 41 in every channel, so
        // μ = 16·1 vs 26·1 and Σ = 50·J vs 450·J with J the all-ones 3×3.
        // Both are rank one along 1, giving tr √(Σ₁^½Σ₂Σ₁^½) = 3·√(50·450).
        let d = clip_frechet(&gen, &refs, &MeanColor).unwrap();
        let expect = 3.0 * 100.0 + 3.0 * 50.0 + 3.0 * 450.0 - 2.0 * 3.0 * (50.0f64 * 450.0).sqrt();
        assert!((d - expect).abs() < 1e-8, "{d} vs {expect}");
        assert!(clip_frechet(&gen, &gen, &Builtin::default()).unwrap() <= 1e-8);
        assert_eq!(Builtin::default().extract(&gen[0]).len(), 8 * 3 + 3);
    }
}
