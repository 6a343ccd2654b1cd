use crate::{Image, MetricsError, Result};

const SSIM_WINDOW: usize = 11;
const SSIM_SIGMA: f64 = 1.5;
const K1: f64 = 0.01;
const K2: f64 = 0.03;

/// Which channels feed PSNR/SSIM: the RGB planes directly or the BT.601
/// luminance only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default)]
pub enum ChannelMode {
    #[default]
    Rgb,
    Luma,
}

impl ChannelMode {
    pub fn parse(s: &str) -> Option<Self> {
        match s {
            "rgb" => Some(ChannelMode::Rgb),
            "luma" => Some(ChannelMode::Luma),
            _ => None,
        }
    }

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelMode::Rgb => "rgb",
            ChannelMode::Luma => "luma",
        }
    }
}

/// ITU-R BT.601 weighted sum; single-channel images pass through.
pub fn luminance(img: &Image) -> Image {
    if img.channels == 1 {
        return img.clone();
    }
    let mut out = Image::filled(img.height, img.width, 1, 0.0);
    for y in 0..img.height {
        for x in 0..img.width {
            let v = 0.299 * img.get(y, x, 0) + 0.587 * img.get(y, x, 1) + 0.114 * img.get(y, x, 2);
            out.set(y, x, 0, v);
        }
    }
    out
}

fn check_dims(a: &Image, b: &Image) -> Result<()> {
    if !a.same_dims(b) {
        return Err(MetricsError::DimensionMismatch(
            a.height, a.width, b.height, b.width,
        ));
    }
    Ok(())
}

/// Peak signal-to-noise ratio in dB with peak 1; identical images give
/// `f64::INFINITY` (serialized as "inf").
pub fn psnr(a: &Image, b: &Image) -> Result<f64> {
    psnr_with(a, b, ChannelMode::Rgb)
}

pub fn psnr_with(a: &Image, b: &Image, mode: ChannelMode) -> Result<f64> {
    check_dims(a, b)?;
    let (a, b) = match mode {
        ChannelMode::Rgb => (a.clone(), b.clone()),
        ChannelMode::Luma => (luminance(a), luminance(b)),
    };
    let mse = a
        .pixels()
        .iter()
        .zip(b.pixels())
        .map(|(&x, &y)| (x - y) * (x - y))
        .sum::<f64>()
        / a.pixels().len() as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// Mean local SSIM over valid 11x11 Gaussian windows (sigma 1.5,
/// K1 = 0.01, K2 = 0.03, dynamic range 1). Multi-channel inputs average
/// the per-channel scores in `Rgb` mode.
pub fn ssim(a: &Image, b: &Image) -> Result<f64> {
    ssim_with(a, b, ChannelMode::Rgb)
}

pub fn ssim_with(a: &Image, b: &Image, mode: ChannelMode) -> Result<f64> {
    check_dims(a, b)?;
    if a.height < SSIM_WINDOW || a.width < SSIM_WINDOW {
        return Err(MetricsError::TooSmallForWindow(a.height, a.width, SSIM_WINDOW));
    }
    match mode {
        ChannelMode::Luma => Ok(ssim_plane(&luminance(a), &luminance(b), 0, 0)),
        ChannelMode::Rgb => {
            let per_channel: Vec<f64> = (0..a.channels).map(|c| ssim_plane(a, b, c, c)).collect();
            Ok(per_channel.iter().sum::<f64>() / per_channel.len() as f64)
        }
    }
}

fn gaussian_window() -> [f64; SSIM_WINDOW * SSIM_WINDOW] {
    let mut w = [0.0; SSIM_WINDOW * SSIM_WINDOW];
    let half = (SSIM_WINDOW / 2) as f64;
    let mut sum = 0.0;
    for y in 0..SSIM_WINDOW {
        for x in 0..SSIM_WINDOW {
            let dy = y as f64 - half;
            let dx = x as f64 - half;
            let v = (-(dx * dx + dy * dy) / (2.0 * SSIM_SIGMA * SSIM_SIGMA)).exp();
            w[y * SSIM_WINDOW + x] = v;
            sum += v;
        }
    }
    for v in w.iter_mut() {
        *v /= sum;
    }
    w
}

fn ssim_plane(a: &Image, b: &Image, ca: usize, cb: usize) -> f64 {
    let window = gaussian_window();
    let c1 = K1 * K1;
    let c2 = K2 * K2;
    let (h, w) = (a.height, a.width);
    let mut total = 0.0;
    let mut count = 0usize;
    for oy in 0..=h - SSIM_WINDOW {
        for ox in 0..=w - SSIM_WINDOW {
            let (mut mu_a, mut mu_b) = (0.0, 0.0);
            let (mut aa, mut bb, mut ab) = (0.0, 0.0, 0.0);
            for wy in 0..SSIM_WINDOW {
                for wx in 0..SSIM_WINDOW {
                    let wt = window[wy * SSIM_WINDOW + wx];
                    let va = a.get(oy + wy, ox + wx, ca);
                    let vb = b.get(oy + wy, ox + wx, cb);
                    mu_a += wt * va;
                    mu_b += wt * vb;
                    aa += wt * va * va;
                    bb += wt * vb * vb;
                    ab += wt * (va * vb); // symmetric association keeps ssim(a,b) == ssim(b,a) bitwise
                }
            }
            let var_a = aa - mu_a * mu_a;
            let var_b = bb - mu_b * mu_b;
            let cov = ab - mu_a * mu_b;
            let num = (2.0 * (mu_a * mu_b) + c1) * (2.0 * cov + c2);
            let den = (mu_a * mu_a + mu_b * mu_b + c1) * (var_a + var_b + c2);
            total += num / den;
            count += 1;
        }
    }
    total / count as f64
}

/// Mean perceptual score: 0.5(SSIM + (1 - LPIPS)). LPIPS is supplied
/// externally.
pub fn mps(ssim: f64, lpips: f64) -> f64 {
    0.5 * (ssim + (1.0 - lpips))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn psnr_oracles() {
        let a = Image::filled(12, 12, 3, 0.5);
        assert_eq!(psnr(&a, &a).unwrap(), f64::INFINITY);

        // uniform difference of 16/255 -> 10 log10(255^2 / 16^2)
        let mut b = a.clone();
        for v in b.pixels_mut() {
            *v += 16.0 / 255.0;
        }
        let want = 10.0 * (255.0f64 * 255.0 / 256.0).log10();
        let got = psnr(&a, &b).unwrap();
        assert!((got - want).abs() < 1e-12);
        assert!((got - 24.0486).abs() < 1e-3);

        let black = Image::filled(4, 4, 1, 0.0);
        let white = Image::filled(4, 4, 1, 1.0);
        assert_eq!(psnr(&black, &white).unwrap(), 0.0);

        let wrong = Image::filled(4, 5, 1, 0.0);
        assert!(psnr(&black, &wrong).is_err());
    }

    #[test]
    fn psnr_is_symmetric_and_monotone_in_noise() {
        let base: Vec<f64> = (0..16 * 16).map(|v| (v % 13) as f64 / 13.0).collect();
        let a = Image::new(16, 16, 1, base.clone()).unwrap();
        let mut last = f64::INFINITY;
        for amp in [0.01, 0.02, 0.05, 0.1] {
            let noisy: Vec<f64> = base
                .iter()
                .enumerate()
                .map(|(i, &v)| (v + amp * if i % 2 == 0 { 1.0 } else { -1.0 }).clamp(0.0, 1.0))
                .collect();
            let b = Image::new(16, 16, 1, noisy).unwrap();
            let p = psnr(&a, &b).unwrap();
            let q = psnr(&b, &a).unwrap();
            assert_eq!(p, q);
            assert!(p < last, "psnr must strictly decrease with noise");
            last = p;
        }
    }

    #[test]
    fn ssim_oracles() {
        let a = Image::new(16, 16, 1, (0..256).map(|v| (v % 7) as f64 / 7.0).collect()).unwrap();
        assert_eq!(ssim(&a, &a).unwrap(), 1.0);

        let zero = Image::filled(11, 11, 1, 0.0);
        let one = Image::filled(11, 11, 1, 1.0);
        let c1 = 1e-4;
        let want = c1 / (1.0 + c1);
        let got = ssim(&zero, &one).unwrap();
        assert!((got - want).abs() < 1e-15, "{got} vs {want}");

        let small = Image::filled(8, 8, 1, 0.0);
        assert!(matches!(
            ssim(&small, &small),
            Err(MetricsError::TooSmallForWindow(8, 8, 11))
        ));
    }

    #[test]
    fn ssim_symmetric_and_bounded() {
        let mk = |seed: u64| {
            let mut state = seed | 1;
            let data: Vec<f64> = (0..14 * 14 * 3)
                .map(|_| {
                    state ^= state << 13;
                    state ^= state >> 7;
                    state ^= state << 17;
                    ((state >> 11) as f64 / (1u64 << 53) as f64).clamp(0.0, 1.0)
                })
                .collect();
            Image::new(14, 14, 3, data).unwrap()
        };
        for seed in 1..6u64 {
            let a = mk(seed);
            let b = mk(seed + 100);
            let ab = ssim(&a, &b).unwrap();
            let ba = ssim(&b, &a).unwrap();
            assert_eq!(ab, ba);
            assert!((-1.0..=1.0).contains(&ab));
            assert_eq!(ssim(&a, &a).unwrap(), 1.0);
        }
    }

    #[test]
    fn luminance_uses_bt601_weights() {
        let mut img = Image::filled(1, 1, 3, 0.0);
        img.set(0, 0, 0, 1.0);
        assert!((luminance(&img).get(0, 0, 0) - 0.299).abs() < 1e-15);
        img.set(0, 0, 0, 0.0);
        img.set(0, 0, 1, 1.0);
        assert!((luminance(&img).get(0, 0, 0) - 0.587).abs() < 1e-15);
    }

    #[test]
    fn mps_table_anchors_and_affinity() {
        assert!((mps(0.8910, 0.1590) - 0.8660).abs() < 1e-12);
        assert!((mps(0.7972, 0.2844) - 0.7564).abs() < 1e-12);
        assert_eq!(mps(1.0, 0.0), 1.0);

        // affine in lpips: mps(s,l) - mps(s,l+d) = d/2
        for d in [0.1, 0.01, 0.25] {
            let delta = mps(0.8, 0.3) - mps(0.8, 0.3 + d);
            assert!((delta - d / 2.0).abs() < 1e-12);
        }
    }
}
