//! The online underwater image enhancer: statistics-based color
//! pre-correction followed by a weighted multi-scale Retinex whose Gaussian
//! surrounds come from the recursive pyramid filter.

use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;

use crate::blur;
use crate::error::{Error, Result};
use crate::image::RgbImage;

/// All constants of the enhancer. `sigmas`/`weights`/`sigma_min` follow the
/// published setting; `epsilon`, the truncation radius, and the output
/// stretch are artifact choices.
#[derive(Debug, Clone)]
pub struct MsrConfig {
    /// Gaussian surround scales, in pixels.
    pub sigmas: Vec<f64>,
    /// Per-scale fusion weights; must sum to 1.
    pub weights: Vec<f64>,
    /// Pyramid recursion stops when the halved scale reaches this value.
    pub sigma_min: f64,
    /// Log-domain offset so log(0) never occurs; on the [0,255] scale.
    pub epsilon: f64,
    /// Kernel radius = ceil(factor * sigma).
    pub truncation_radius_factor: f64,
    /// Percentile pair for the output stretch, in percent.
    pub stretch_lo: f64,
    pub stretch_hi: f64,
}

impl Default for MsrConfig {
    fn default() -> Self {
        Self {
            sigmas: vec![30.0, 150.0, 300.0],
            weights: vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            sigma_min: 10.0,
            epsilon: 1.0,
            truncation_radius_factor: blur::DEFAULT_TRUNCATION_FACTOR,
            stretch_lo: 1.0,
            stretch_hi: 99.0,
        }
    }
}

impl MsrConfig {
    pub fn validate(&self) -> Result<()> {
        if self.sigmas.is_empty() {
            return Err(Error::BadConfig(String::from("sigmas must be non-empty")));
        }
        if self.sigmas.len() != self.weights.len() {
            return Err(Error::BadConfig(alloc::format!(
                "{} sigmas but {} weights",
                self.sigmas.len(),
                self.weights.len()
            )));
        }
        for &s in &self.sigmas {
            if !(s > 0.0) {
                return Err(Error::BadConfig(alloc::format!("sigma {s} must be positive")));
            }
        }
        for &w in &self.weights {
            if !(w >= 0.0) {
                return Err(Error::BadConfig(alloc::format!("weight {w} must be >= 0")));
            }
        }
        let sum: f64 = self.weights.iter().sum();
        if (sum - 1.0).abs() > 1e-12 {
            return Err(Error::BadConfig(alloc::format!(
                "weights sum to {sum}, expected 1"
            )));
        }
        if !(self.sigma_min > 0.0) {
            return Err(Error::BadConfig(String::from("sigma_min must be positive")));
        }
        if !(self.epsilon > 0.0) {
            return Err(Error::BadConfig(String::from("epsilon must be positive")));
        }
        if !(self.truncation_radius_factor > 0.0) {
            return Err(Error::BadConfig(String::from(
                "truncation factor must be positive",
            )));
        }
        if !(0.0 <= self.stretch_lo && self.stretch_lo < self.stretch_hi && self.stretch_hi <= 100.0)
        {
            return Err(Error::BadConfig(alloc::format!(
                "stretch percentiles ({}, {}) must satisfy 0 <= lo < hi <= 100",
                self.stretch_lo,
                self.stretch_hi
            )));
        }
        Ok(())
    }
}

/// Per-channel mean and population standard deviation.
#[derive(Debug, Clone, PartialEq)]
pub struct ChannelStats {
    pub mean: [f64; 3],
    pub std: [f64; 3],
}

pub fn compute_channel_stats(img: &RgbImage) -> Result<ChannelStats> {
    let n = img.num_pixels();
    if n == 0 {
        return Err(Error::EmptyImage);
    }
    let mut mean = [0.0; 3];
    let mut std = [0.0; 3];
    for c in 0..3 {
        let plane = img.plane(c);
        let m = plane.iter().sum::<f64>() / n as f64;
        let var = plane.iter().map(|&v| (v - m) * (v - m)).sum::<f64>() / n as f64;
        mean[c] = m;
        std[c] = libm::sqrt(var);
    }
    Ok(ChannelStats { mean, std })
}

/// Stretches each channel so that mean-std maps to 0 and mean+std to 255,
/// clamped; channels with zero spread pass through unchanged.
pub fn color_precorrect(img: &RgbImage) -> Result<RgbImage> {
    let stats = compute_channel_stats(img)?;
    let (h, w) = (img.height(), img.width());
    let mut planes: [Vec<f64>; 3] = core::array::from_fn(|c| img.plane(c).to_vec());
    for c in 0..3 {
        if stats.std[c] == 0.0 {
            continue;
        }
        // Kept in the literal (v - lo) / (hi - lo) * 255 form so the
        // endpoints map to exactly 0 and 255.
        let lo = stats.mean[c] - stats.std[c];
        let hi = stats.mean[c] + stats.std[c];
        let span = hi - lo;
        for v in &mut planes[c] {
            *v = ((*v - lo) / span * 255.0).max(0.0).min(255.0);
        }
    }
    RgbImage::from_planes(h, w, planes)
}

/// Linear-interpolated percentile (numpy convention) found with two
/// selection passes instead of a full sort.
fn percentile(values: &mut [f64], pct: f64) -> f64 {
    let n = values.len();
    debug_assert!(n > 0);
    let rank = pct / 100.0 * (n - 1) as f64;
    let lo = libm::floor(rank) as usize;
    let frac = rank - lo as f64;
    let (_, &mut v_lo, rest) = values.select_nth_unstable_by(lo, |a, b| a.total_cmp(b));
    if frac == 0.0 || rest.is_empty() {
        return v_lo;
    }
    let v_next = rest.iter().copied().fold(f64::INFINITY, f64::min);
    v_lo * (1.0 - frac) + v_next * frac
}

/// Maps a signed log-domain field onto [0, 255] by clipping at the
/// (lo, hi) percentiles; a degenerate spread maps everything to 127.5.
fn percentile_stretch(field: &[f64], lo_pct: f64, hi_pct: f64) -> Vec<f64> {
    let mut scratch = field.to_vec();
    let p_lo = percentile(&mut scratch, lo_pct);
    let p_hi = percentile(&mut scratch, hi_pct);
    if p_hi - p_lo < 1e-9 {
        return vec![127.5; field.len()];
    }
    let scale = 255.0 / (p_hi - p_lo);
    field
        .iter()
        .map(|&v| ((v - p_lo) * scale).max(0.0).min(255.0))
        .collect()
}

/// The weighted log-ratio field, per channel, before the output stretch:
/// sum_n w_n (log(I + eps) - log(blur_n(I) + eps)) with pyramid blurs.
/// Exposed so the surround approximation can be compared against exact
/// convolution in the log domain.
pub fn msr_log_field(img: &RgbImage, cfg: &MsrConfig) -> Result<[Vec<f64>; 3]> {
    cfg.validate()?;
    if img.num_pixels() == 0 {
        return Err(Error::EmptyImage);
    }
    let (h, w) = (img.height(), img.width());
    let mut fields: [Vec<f64>; 3] = core::array::from_fn(|_| vec![0.0; h * w]);
    for (&sigma, &weight) in cfg.sigmas.iter().zip(&cfg.weights) {
        for c in 0..3 {
            let plane = img.plane(c);
            let blurred = blur::pyramid_blur_plane(
                plane,
                h,
                w,
                sigma,
                cfg.sigma_min,
                cfg.truncation_radius_factor,
            )?;
            let field = &mut fields[c];
            for i in 0..plane.len() {
                field[i] += weight * libm::log((plane[i] + cfg.epsilon) / (blurred[i] + cfg.epsilon));
            }
        }
    }
    Ok(fields)
}

/// Multi-scale Retinex with pyramid surrounds and a percentile stretch back
/// to the working range.
pub fn msr_enhance(img: &RgbImage, cfg: &MsrConfig) -> Result<RgbImage> {
    let fields = msr_log_field(img, cfg)?;
    let planes = fields.map(|f| percentile_stretch(&f, cfg.stretch_lo, cfg.stretch_hi));
    RgbImage::from_planes(img.height(), img.width(), planes)
}

/// The full enhancer: color pre-correction, then multi-scale Retinex.
pub fn water_msr(img: &RgbImage, cfg: &MsrConfig) -> Result<RgbImage> {
    msr_enhance(&color_precorrect(img)?, cfg)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::Rng;

    fn random_image(h: usize, w: usize, seed: u64) -> RgbImage {
        let mut rng = Rng::new(seed);
        let planes = core::array::from_fn(|_| (0..h * w).map(|_| rng.uniform(0.0, 255.0)).collect());
        RgbImage::from_planes(h, w, planes).unwrap()
    }

    #[test]
    fn stats_constant_plane() {
        let img = RgbImage::filled(4, 4, 100.0);
        let s = compute_channel_stats(&img).unwrap();
        for c in 0..3 {
            assert_eq!(s.mean[c], 100.0);
            assert_eq!(s.std[c], 0.0);
        }
    }

    #[test]
    fn stats_two_point_plane() {
        let mut img = RgbImage::filled(1, 2, 0.0);
        img.plane_mut(0)[1] = 200.0;
        let s = compute_channel_stats(&img).unwrap();
        assert_eq!(s.mean[0], 100.0);
        assert_eq!(s.std[0], 100.0);
    }

    #[test]
    fn stats_reject_empty() {
        let img = RgbImage::filled(0, 4, 0.0);
        assert_eq!(compute_channel_stats(&img), Err(Error::EmptyImage));
    }

    #[test]
    fn precorrect_maps_mean_and_endpoints() {
        // Plane values {0, 200}: mean 100, std 100.
        let mut img = RgbImage::filled(1, 2, 0.0);
        for c in 0..3 {
            img.plane_mut(c)[1] = 200.0;
        }
        let out = color_precorrect(&img).unwrap();
        // 0 = mean - std -> 0; 200 = mean + std -> 255.
        assert_eq!(out.plane(0)[0], 0.0);
        assert_eq!(out.plane(0)[1], 255.0);

        // A pixel exactly at the mean maps to 127.5, one past mean+std clamps.
        let mut img = RgbImage::filled(1, 4, 0.0);
        let p = img.plane_mut(1);
        p.copy_from_slice(&[10.0, 20.0, 30.0, 40.0]); // mean 25, std sqrt(125)
        let s = compute_channel_stats(&img).unwrap();
        let mut probe = img.clone();
        probe.plane_mut(1)[0] = s.mean[1];
        probe.plane_mut(1)[1] = s.mean[1] + s.std[1];
        probe.plane_mut(1)[2] = s.mean[1] - s.std[1];
        probe.plane_mut(1)[3] = s.mean[1] + 2.0 * s.std[1];
        // Re-derive stats on the probe so the contract is exact.
        let s2 = compute_channel_stats(&probe).unwrap();
        let out = color_precorrect(&probe).unwrap();
        let lo = s2.mean[1] - s2.std[1];
        let hi = s2.mean[1] + s2.std[1];
        let expect = |v: f64| ((v - lo) / (hi - lo) * 255.0).max(0.0).min(255.0);
        for i in 0..4 {
            assert!((out.plane(1)[i] - expect(probe.plane(1)[i])).abs() < 1e-9);
        }
    }

    #[test]
    fn precorrect_passes_constant_channels_through() {
        let img = RgbImage::filled(3, 3, 77.0);
        let out = color_precorrect(&img).unwrap();
        assert_eq!(out, img);
    }

    #[test]
    fn config_validation() {
        assert!(MsrConfig::default().validate().is_ok());
        let mut c = MsrConfig::default();
        c.weights = vec![0.5, 0.5, 0.5];
        assert!(c.validate().is_err());
        let mut c = MsrConfig::default();
        c.sigmas = vec![];
        c.weights = vec![];
        assert!(c.validate().is_err());
        let mut c = MsrConfig::default();
        c.epsilon = 0.0;
        assert!(c.validate().is_err());
    }

    #[test]
    fn flat_image_enhances_to_flat_midgray() {
        let img = RgbImage::filled(24, 16, 60.0);
        let out = water_msr(&img, &MsrConfig::default()).unwrap();
        for c in 0..3 {
            for &v in out.plane(c) {
                assert_eq!(v, 127.5);
            }
        }
    }

    #[test]
    fn single_scale_weights_reduce_to_ssr() {
        let img = random_image(20, 20, 9);
        let mut cfg = MsrConfig::default();
        cfg.sigmas = vec![8.0, 80.0, 160.0];
        cfg.weights = vec![1.0, 0.0, 0.0];
        let multi = msr_enhance(&img, &cfg).unwrap();
        let mut single = cfg.clone();
        single.sigmas = vec![8.0];
        single.weights = vec![1.0];
        let ssr = msr_enhance(&img, &single).unwrap();
        assert_eq!(multi, ssr);
    }

    #[test]
    fn output_is_in_range_and_finite() {
        let img = random_image(32, 24, 13);
        let out = water_msr(&img, &MsrConfig::default()).unwrap();
        for c in 0..3 {
            for &v in out.plane(c) {
                assert!(v.is_finite() && (0.0..=255.0).contains(&v));
            }
        }
    }

    #[test]
    fn channel_swap_commutes_with_pipeline() {
        let img = random_image(16, 16, 21);
        let mut swapped = img.clone();
        swapped.swap_channels(0, 2);
        let out = water_msr(&img, &MsrConfig::default()).unwrap();
        let mut out_swapped = water_msr(&swapped, &MsrConfig::default()).unwrap();
        out_swapped.swap_channels(0, 2);
        assert_eq!(out, out_swapped);
    }

    #[test]
    fn percentile_matches_sorted_definition() {
        let mut rng = Rng::new(123);
        for n in [1usize, 2, 5, 97] {
            let values: Vec<f64> = (0..n).map(|_| rng.uniform(-3.0, 3.0)).collect();
            let mut sorted = values.clone();
            sorted.sort_by(|a, b| a.total_cmp(b));
            for pct in [0.0, 1.0, 37.5, 50.0, 99.0, 100.0] {
                let rank = pct / 100.0 * (n - 1) as f64;
                let lo = rank.floor() as usize;
                let frac = rank - lo as f64;
                let expect = if lo + 1 < n {
                    sorted[lo] * (1.0 - frac) + sorted[lo + 1] * frac
                } else {
                    sorted[lo]
                };
                let mut scratch = values.clone();
                let got = percentile(&mut scratch, pct);
                assert!((got - expect).abs() < 1e-12, "n {n} pct {pct}");
            }
        }
    }
}
