//! Local quadratic signal model for dense flow.
//!
//! Around every pixel the image is approximated as
//! `f(x, y) ~ c + bx x + by y + axx x^2 + ayy y^2 + axy x y` by a weighted
//! least-squares fit over a `poly_n x poly_n` neighbourhood with separable
//! Gaussian weights. Because the weights are separable and symmetric, the
//! 6x6 normal equations decouple: `bx`, `by` and `axy` each depend on a
//! single moment, and `(c, axx, ayy)` form a small closed-form 3x3 system.

use super::plane::{gaussian_kernel, Plane};
use crate::error::{Error, Result};
use crate::types::Frame;

/// Per-pixel quadratic coefficients, planar storage.
#[derive(Clone, Debug)]
pub struct PolyExpansion {
    pub width: usize,
    pub height: usize,
    pub c: Vec<f32>,
    pub bx: Vec<f32>,
    pub by: Vec<f32>,
    pub axx: Vec<f32>,
    pub ayy: Vec<f32>,
    /// Coefficient of the `x y` term; the symmetric matrix entry is half of it.
    pub axy: Vec<f32>,
}

impl PolyExpansion {
    /// The symmetric matrix `A` of the quadratic form at pixel `i`.
    pub fn matrix(&self, i: usize) -> [[f32; 2]; 2] {
        let off = 0.5 * self.axy[i];
        [[self.axx[i], off], [off, self.ayy[i]]]
    }

    pub fn linear(&self, i: usize) -> [f32; 2] {
        [self.bx[i], self.by[i]]
    }
}

/// Fits the quadratic model to a single-channel frame.
pub fn polynomial_expansion(gray: &Frame, poly_n: usize, poly_sigma: f32) -> Result<PolyExpansion> {
    if gray.channels() != 1 {
        return Err(Error::DimensionMismatch(format!(
            "polynomial expansion needs a single-channel frame, got {} channels",
            gray.channels()
        )));
    }
    if poly_n < 3 || poly_n % 2 == 0 {
        return Err(Error::InvalidConfig(format!(
            "poly_n must be odd and >= 3, got {poly_n}"
        )));
    }
    let plane = Plane::new(
        gray.width(),
        gray.height(),
        gray.data().iter().map(|&v| v as f32).collect(),
    );
    Ok(expand_plane(&plane, poly_n, poly_sigma))
}

pub(crate) fn expand_plane(img: &Plane, poly_n: usize, poly_sigma: f32) -> PolyExpansion {
    let (w, h) = (img.width, img.height);
    let r = (poly_n / 2) as isize;
    let g = gaussian_kernel(r, poly_sigma);
    let taps: Vec<(f32, f32)> = (-r..=r).map(|t| (t as f32, g[(t + r) as usize])).collect();

    // 1-D weight moments
    let s0: f64 = taps.iter().map(|&(_, w)| w as f64).sum();
    let s2: f64 = taps.iter().map(|&(t, w)| (w * t * t) as f64).sum();
    let s4: f64 = taps.iter().map(|&(t, w)| (w * t * t * t * t) as f64).sum();

    // vertical pass: per pixel, sum_y g(y) y^k f for k = 0, 1, 2
    let mut v0 = vec![0.0f32; w * h];
    let mut v1 = vec![0.0f32; w * h];
    let mut v2 = vec![0.0f32; w * h];
    for y in 0..h {
        for x in 0..w {
            let (mut a0, mut a1, mut a2) = (0.0f32, 0.0f32, 0.0f32);
            for &(t, wt) in &taps {
                let f = img.get_clamped(x as isize, y as isize + t as isize) * wt;
                a0 += f;
                a1 += f * t;
                a2 += f * t * t;
            }
            let i = y * w + x;
            v0[i] = a0;
            v1[i] = a1;
            v2[i] = a2;
        }
    }

    // horizontal pass yields the six 2-D moments m_{ab} = sum w x^a y^b f
    let det = s0 * s0 * (s0 * s4 - s2 * s2);
    let q_den = s0 * s4 - s2 * s2;
    let mut out = PolyExpansion {
        width: w,
        height: h,
        c: vec![0.0; w * h],
        bx: vec![0.0; w * h],
        by: vec![0.0; w * h],
        axx: vec![0.0; w * h],
        ayy: vec![0.0; w * h],
        axy: vec![0.0; w * h],
    };
    let clamp_x = |x: isize| x.clamp(0, w as isize - 1) as usize;
    for y in 0..h {
        let row = y * w;
        for x in 0..w {
            let (mut m00, mut m10, mut m20) = (0.0f64, 0.0f64, 0.0f64);
            let (mut m01, mut m11, mut m02) = (0.0f64, 0.0f64, 0.0f64);
            for &(t, wt) in &taps {
                let j = row + clamp_x(x as isize + t as isize);
                let (a0, a1, a2) = (v0[j] as f64, v1[j] as f64, v2[j] as f64);
                let (t, wt) = (t as f64, wt as f64);
                m00 += wt * a0;
                m10 += wt * t * a0;
                m20 += wt * t * t * a0;
                m01 += wt * a1;
                m11 += wt * t * a1;
                m02 += wt * a2;
            }
            let i = row + x;
            let sum = m20 + m02;
            let c = (m00 * (s0 * s4 + s2 * s2) - s0 * s2 * sum) / det;
            let p = (s0 * s0 * sum - 2.0 * s0 * s2 * m00) / det;
            let q = (m20 - m02) / q_den;
            out.c[i] = c as f32;
            out.axx[i] = (0.5 * (p + q)) as f32;
            out.ayy[i] = (0.5 * (p - q)) as f32;
            out.bx[i] = (m10 / (s0 * s2)) as f32;
            out.by[i] = (m01 / (s0 * s2)) as f32;
            out.axy[i] = (m11 / (s2 * s2)) as f32;
        }
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;
    use nalgebra::{DMatrix, DVector};

    fn frame_from(w: usize, h: usize, f: impl Fn(usize, usize) -> u8) -> Frame {
        let data = (0..h).flat_map(|y| (0..w).map(move |x| (x, y))).map(|(x, y)| f(x, y));
        Frame::new(w, h, 1, data.collect()).unwrap()
    }

    /// Weighted least squares over the clamped neighbourhood, solved as a
    /// full 6x6 system with no structure assumed.
    fn brute_force_fit(img: &Frame, x: usize, y: usize, n: usize, sigma: f64) -> [f64; 6] {
        let r = (n / 2) as isize;
        let mut ata = DMatrix::<f64>::zeros(6, 6);
        let mut atb = DVector::<f64>::zeros(6);
        let norm: f64 = (-r..=r)
            .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
            .sum();
        let g = |t: isize| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp() / norm;
        for dy in -r..=r {
            for dx in -r..=r {
                let sx = (x as isize + dx).clamp(0, img.width() as isize - 1) as usize;
                let sy = (y as isize + dy).clamp(0, img.height() as isize - 1) as usize;
                let f = img.pixel(sx, sy)[0] as f64;
                let (px, py) = (dx as f64, dy as f64);
                let basis = DVector::from_vec(vec![1.0, px, py, px * px, py * py, px * py]);
                let wt = g(dx) * g(dy);
                ata += wt * &basis * basis.transpose();
                atb += wt * f * &basis;
            }
        }
        let sol = ata.lu().solve(&atb).unwrap();
        [sol[0], sol[1], sol[2], sol[3], sol[4], sol[5]]
    }

    #[test]
    fn constant_image_fits_constant() {
        let img = frame_from(16, 12, |_, _| 100);
        let e = polynomial_expansion(&img, 5, 1.1).unwrap();
        for i in 0..16 * 12 {
            assert!((e.c[i] - 100.0).abs() < 1e-3);
            for v in [e.bx[i], e.by[i], e.axx[i], e.ayy[i], e.axy[i]] {
                assert!(v.abs() < 1e-3, "{v}");
            }
        }
    }

    #[test]
    fn ramp_matches_normal_equations() {
        let img = frame_from(20, 20, |x, _| (x * 5) as u8);
        let e = polynomial_expansion(&img, 5, 1.1).unwrap();
        for y in 3..17 {
            for x in 3..17 {
                let i = y * 20 + x;
                assert!((e.bx[i] - 5.0).abs() < 1e-4);
                assert!(e.by[i].abs() < 1e-4);
                assert!(e.axx[i].abs() < 1e-4 && e.ayy[i].abs() < 1e-4);
                let oracle = brute_force_fit(&img, x, y, 5, 1.1);
                assert!((oracle[1] - 5.0).abs() < 1e-9);
            }
        }
    }

    #[test]
    fn unit_ramp_slope() {
        let img = frame_from(12, 12, |x, _| x as u8);
        let e = polynomial_expansion(&img, 5, 1.1).unwrap();
        let i = 6 * 12 + 6;
        assert!((e.bx[i] - 1.0).abs() < 1e-5);
        assert!(e.by[i].abs() < 1e-5);
    }

    #[test]
    fn closed_form_agrees_with_full_solve_on_texture() {
        let img = frame_from(15, 13, |x, y| ((x * 31 + y * 17 + x * y * 7) % 251) as u8);
        for (n, sigma) in [(5usize, 1.1f32), (7, 1.5), (3, 0.8)] {
            let e = polynomial_expansion(&img, n, sigma).unwrap();
            for (x, y) in [(0, 0), (7, 6), (14, 12), (3, 9)] {
                let i = y * 15 + x;
                let oracle = brute_force_fit(&img, x, y, n, sigma as f64);
                let ours = [e.c[i], e.bx[i], e.by[i], e.axx[i], e.ayy[i], e.axy[i]];
                for (a, b) in ours.iter().zip(oracle) {
                    assert!(
                        (*a as f64 - b).abs() < 1e-2 * (1.0 + b.abs()),
                        "n={n} ({x},{y}): {a} vs {b}"
                    );
                }
            }
        }
    }

    #[test]
    fn single_bright_pixel_is_finite() {
        let img = frame_from(9, 9, |x, y| if (x, y) == (4, 4) { 255 } else { 0 });
        let e = polynomial_expansion(&img, 5, 1.1).unwrap();
        for v in [&e.c, &e.bx, &e.by, &e.axx, &e.ayy, &e.axy] {
            assert!(v.iter().all(|x| x.is_finite()));
        }
    }

    #[test]
    fn rejects_color_and_even_window() {
        let rgb = Frame::new(4, 4, 3, vec![0; 48]).unwrap();
        assert!(polynomial_expansion(&rgb, 5, 1.1).is_err());
        let g = frame_from(4, 4, |_, _| 0);
        assert!(polynomial_expansion(&g, 4, 1.1).is_err());
    }
}
