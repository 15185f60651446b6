//! Image quality metrics for evaluation output.

use crate::losses::{ssim, ImageRef};
use crate::Result;

/// Peak signal-to-noise ratio in dB for images in [0, 1]:
/// `10 log10(1 / MSE)`. Identical images report `f64::INFINITY`.
pub fn psnr(a: ImageRef, b: ImageRef) -> Result<f64> {
    // Shape checking is shared with the L1 path.
    let mut mse = 0.0;
    if a.width != b.width || a.height != b.height {
        return Err(crate::Error::Shape(format!(
            "image shapes differ: {}x{} vs {}x{}",
            a.width, a.height, b.width, b.height
        )));
    }
    for (pa, pb) in a.pixels.iter().zip(b.pixels.iter()) {
        for c in 0..3 {
            let d = pa[c] - pb[c];
            mse += d * d;
        }
    }
    mse /= (a.pixels.len() * 3) as f64;
    if mse == 0.0 {
        return Ok(f64::INFINITY);
    }
    Ok(10.0 * (1.0 / mse).log10())
}

/// PSNR and SSIM of a render (clamped to [0, 1]) against ground truth.
pub fn evaluate_pair(
    render: &[[f64; 3]],
    gt: &[[f64; 3]],
    width: usize,
    height: usize,
) -> Result<(f64, f64)> {
    let clamped: Vec<[f64; 3]> = render
        .iter()
        .map(|p| {
            [
                p[0].clamp(0.0, 1.0),
                p[1].clamp(0.0, 1.0),
                p[2].clamp(0.0, 1.0),
            ]
        })
        .collect();
    let a = ImageRef::new(width, height, &clamped)?;
    let b = ImageRef::new(width, height, gt)?;
    let p = psnr(a, b)?;
    let (s, _) = ssim(a, b)?;
    Ok((p, s))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn identical_images_hit_the_sentinel() {
        let img = vec![[0.25, 0.5, 0.75]; 64];
        let r = ImageRef::new(8, 8, &img).unwrap();
        assert_eq!(psnr(r, r).unwrap(), f64::INFINITY);
    }

    #[test]
    fn known_mse_gives_twenty_db() {
        let a = vec![[0.0; 3]; 64];
        let b = vec![[0.1; 3]; 64];
        let p = psnr(
            ImageRef::new(8, 8, &a).unwrap(),
            ImageRef::new(8, 8, &b).unwrap(),
        )
        .unwrap();
        assert!((p - 20.0).abs() < 1e-9);
    }

    #[test]
    fn matches_scalar_oracle() {
        let mut a = vec![[0.0; 3]; 32];
        let mut b = vec![[0.0; 3]; 32];
        for i in 0..32 {
            for c in 0..3 {
                a[i][c] = ((i * 3 + c * 7) % 13) as f64 / 13.0;
                b[i][c] = ((i * 5 + c * 2) % 11) as f64 / 11.0;
            }
        }
        let p = psnr(
            ImageRef::new(8, 4, &a).unwrap(),
            ImageRef::new(8, 4, &b).unwrap(),
        )
        .unwrap();
        let mut mse = 0.0;
        for i in 0..32 {
            for c in 0..3 {
                mse += (a[i][c] - b[i][c]).powi(2);
            }
        }
        mse /= 96.0;
        assert!((p - 10.0 * (1.0 / mse).log10()).abs() < 1e-12);
    }

    #[test]
    fn shape_mismatch_is_rejected() {
        let a = vec![[0.0; 3]; 64];
        let b = vec![[0.0; 3]; 16];
        assert!(psnr(
            ImageRef::new(8, 8, &a).unwrap(),
            ImageRef::new(4, 4, &b).unwrap()
        )
        .is_err());
    }
}
