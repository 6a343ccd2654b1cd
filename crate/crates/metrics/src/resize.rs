use crate::{Image, MetricsError, Result};

/// Catmull-Rom cubic kernel (bicubic with a = -0.5).
pub fn catmull_rom(t: f64) -> f64 {
    const A: f64 = -0.5;
    let t = t.abs();
    if t <= 1.0 {
        (A + 2.0) * t * t * t - (A + 3.0) * t * t + 1.0
    } else if t < 2.0 {
        A * t * t * t - 5.0 * A * t * t + 8.0 * A * t - 4.0 * A
    } else {
        0.0
    }
}

/// The four tap weights and the base source index for one output
/// coordinate under pixel-center alignment.
fn taps(dst: usize, src_len: usize, dst_len: usize) -> (isize, [f64; 4]) {
    let pos = (dst as f64 + 0.5) * src_len as f64 / dst_len as f64 - 0.5;
    let base = pos.floor();
    let frac = pos - base;
    let weights = [
        catmull_rom(frac + 1.0),
        catmull_rom(frac),
        catmull_rom(1.0 - frac),
        catmull_rom(2.0 - frac),
    ];
    (base as isize - 1, weights)
}

fn clamp_index(i: isize, len: usize) -> usize {
    i.clamp(0, len as isize - 1) as usize
}

/// Separable bicubic resample to an exact target size, edge-clamped.
pub fn bicubic_resize(img: &Image, out_h: usize, out_w: usize) -> Result<Image> {
    if out_h == 0 || out_w == 0 {
        return Err(MetricsError::EmptyResize(out_h, out_w));
    }
    let (h, w, c) = (img.height, img.width, img.channels);

    // horizontal pass
    let mut horiz = Image::filled(h, out_w, c, 0.0);
    for x in 0..out_w {
        let (base, weights) = taps(x, w, out_w);
        for y in 0..h {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &wt) in weights.iter().enumerate() {
                    acc += wt * img.get(y, clamp_index(base + k as isize, w), ch);
                }
                horiz.set(y, x, ch, acc);
            }
        }
    }

    // vertical pass
    let mut out = Image::filled(out_h, out_w, c, 0.0);
    for y in 0..out_h {
        let (base, weights) = taps(y, h, out_h);
        for x in 0..out_w {
            for ch in 0..c {
                let mut acc = 0.0;
                for (k, &wt) in weights.iter().enumerate() {
                    acc += wt * horiz.get(clamp_index(base + k as isize, h), x, ch);
                }
                out.set(y, x, ch, acc);
            }
        }
    }
    Ok(out)
}

/// Resample by a scale factor; output dims are `round(dim · factor)`,
/// which is exact for integral upscales and divisible downscales.
pub fn bicubic_scale(img: &Image, factor: f64) -> Result<Image> {
    if factor <= 0.0 {
        return Err(MetricsError::InvalidImage(format!(
            "scale factor must be positive, got {factor}"
        )));
    }
    let out_h = (img.height as f64 * factor).round() as usize;
    let out_w = (img.width as f64 * factor).round() as usize;
    bicubic_resize(img, out_h, out_w)
}
