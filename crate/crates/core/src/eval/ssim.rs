//! Structural similarity on the luma channel.
//!
//! Canonical parameters: 11x11 Gaussian window with sigma 1.5, K1 = 0.01,
//! K2 = 0.03, dynamic range 255. The window is only evaluated where it fits
//! entirely inside the image and the score is the mean over those positions.
//! Images smaller than the window in either direction fall back to a single
//! global window with uniform weights.

use crate::model::ImageBuffer;

pub const WINDOW: usize = 11;
pub const SIGMA: f64 = 1.5;
pub const K1: f64 = 0.01;
pub const K2: f64 = 0.03;
pub const DYNAMIC_RANGE: f64 = 255.0;

pub fn c1() -> f64 {
    (K1 * DYNAMIC_RANGE).powi(2)
}

pub fn c2() -> f64 {
    (K2 * DYNAMIC_RANGE).powi(2)
}

/// Normalized 1-D Gaussian taps; the 2-D window is their outer product.
pub fn gaussian_kernel() -> [f64; WINDOW] {
    let mut k = [0.0; WINDOW];
    let center = (WINDOW / 2) as f64;
    for (i, v) in k.iter_mut().enumerate() {
        let d = i as f64 - center;
        *v = (-(d * d) / (2.0 * SIGMA * SIGMA)).exp();
    }
    let sum: f64 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

fn ssim_formula(mx: f64, my: f64, vx: f64, vy: f64, cxy: f64) -> f64 {
    let (c1, c2) = (c1(), c2());
    ((2.0 * mx * my + c1) * (2.0 * cxy + c2)) / ((mx * mx + my * my + c1) * (vx + vy + c2))
}

/// Caller guarantees equal dimensions.
pub(crate) fn ssim_luma(a: &ImageBuffer, b: &ImageBuffer) -> f64 {
    let (w, h) = (a.width() as usize, a.height() as usize);
    let x = a.luma();
    let y = b.luma();
    if w < WINDOW || h < WINDOW {
        return global_ssim(&x, &y);
    }

    // Separable filtering of the five moment planes, valid region only.
    let k = gaussian_kernel();
    let products: [Vec<f64>; 5] = [
        x.clone(),
        y.clone(),
        x.iter().map(|v| v * v).collect(),
        y.iter().map(|v| v * v).collect(),
        x.iter().zip(&y).map(|(p, q)| p * q).collect(),
    ];
    let ow = w - WINDOW + 1;
    let oh = h - WINDOW + 1;
    let filtered: Vec<Vec<f64>> = products
        .iter()
        .map(|plane| {
            let mut horiz = vec![0.0; ow * h];
            for row in 0..h {
                let src = &plane[row * w..(row + 1) * w];
                for col in 0..ow {
                    horiz[row * ow + col] = k.iter().zip(&src[col..col + WINDOW]).map(|(k, v)| k * v).sum();
                }
            }
            let mut out = vec![0.0; ow * oh];
            for row in 0..oh {
                for col in 0..ow {
                    out[row * ow + col] = (0..WINDOW).map(|i| k[i] * horiz[(row + i) * ow + col]).sum();
                }
            }
            out
        })
        .collect();

    let n = ow * oh;
    let [fx, fy, fxx, fyy, fxy] = &filtered[..] else {
        unreachable!("five filtered planes")
    };
    let mut total = 0.0;
    for i in 0..n {
        let (mx, my) = (fx[i], fy[i]);
        total += ssim_formula(mx, my, fxx[i] - mx * mx, fyy[i] - my * my, fxy[i] - mx * my);
    }
    total / n as f64
}

fn global_ssim(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let vx = x.iter().map(|v| (v - mx).powi(2)).sum::<f64>() / n;
    let vy = y.iter().map(|v| (v - my).powi(2)).sum::<f64>() / n;
    let cxy = x.iter().zip(y).map(|(p, q)| (p - mx) * (q - my)).sum::<f64>() / n;
    ssim_formula(mx, my, vx, vy, cxy)
}
