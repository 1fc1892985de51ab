//! Single-channel `f32` image plane and the resampling filters the flow
//! estimator needs. Borders are handled by replicating edge pixels.

#[derive(Clone, Debug, PartialEq)]
pub struct Plane {
    pub width: usize,
    pub height: usize,
    pub data: Vec<f32>,
}

impl Plane {
    pub fn new(width: usize, height: usize, data: Vec<f32>) -> Self {
        assert_eq!(data.len(), width * height);
        Self {
            width,
            height,
            data,
        }
    }

    pub fn zeros(width: usize, height: usize) -> Self {
        Self::new(width, height, vec![0.0; width * height])
    }

    #[inline]
    pub fn get(&self, x: usize, y: usize) -> f32 {
        self.data[y * self.width + x]
    }

    #[inline]
    pub fn get_clamped(&self, x: isize, y: isize) -> f32 {
        let x = x.clamp(0, self.width as isize - 1) as usize;
        let y = y.clamp(0, self.height as isize - 1) as usize;
        self.data[y * self.width + x]
    }

    /// Bilinear lookup with coordinates clamped to the plane.
    #[inline]
    pub fn sample(&self, x: f32, y: f32) -> f32 {
        let (x0, x1, ax) = lattice(x, self.width);
        let (y0, y1, ay) = lattice(y, self.height);
        let row0 = &self.data[y0 * self.width..];
        let row1 = &self.data[y1 * self.width..];
        let top = lerp(row0[x0], row0[x1], ax);
        let bottom = lerp(row1[x0], row1[x1], ax);
        lerp(top, bottom, ay)
    }

    /// Block average by an integer factor, truncating any remainder.
    pub fn area_downscale(&self, factor: usize) -> Plane {
        if factor == 1 {
            return self.clone();
        }
        let w = self.width / factor;
        let h = self.height / factor;
        let norm = 1.0 / (factor * factor) as f32;
        let mut out = vec![0.0f32; w * h];
        for (oy, row) in out.chunks_mut(w).enumerate() {
            for (ox, px) in row.iter_mut().enumerate() {
                let mut acc = 0.0f32;
                for y in oy * factor..(oy + 1) * factor {
                    let line = &self.data[y * self.width + ox * factor..][..factor];
                    acc += line.iter().sum::<f32>();
                }
                *px = acc * norm;
            }
        }
        Plane::new(w, h, out)
    }

    /// Bilinear resize with pixel-center alignment.
    pub fn resize(&self, width: usize, height: usize) -> Plane {
        if width == self.width && height == self.height {
            return self.clone();
        }
        let sx = self.width as f32 / width as f32;
        let sy = self.height as f32 / height as f32;
        let mut out = Vec::with_capacity(width * height);
        for y in 0..height {
            let fy = (y as f32 + 0.5) * sy - 0.5;
            for x in 0..width {
                let fx = (x as f32 + 0.5) * sx - 0.5;
                out.push(self.sample(fx, fy));
            }
        }
        Plane::new(width, height, out)
    }

    /// Separable Gaussian smoothing, kernel radius `ceil(3 sigma)`.
    pub fn gaussian_blur(&self, sigma: f32) -> Plane {
        if sigma <= 0.0 {
            return self.clone();
        }
        let radius = (3.0 * sigma).ceil() as isize;
        let kernel = gaussian_kernel(radius, sigma);
        let tmp = self.convolve_rows(&kernel, radius);
        tmp.convolve_cols(&kernel, radius)
    }

    fn convolve_rows(&self, kernel: &[f32], radius: isize) -> Plane {
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * self.get_clamped(x as isize + k as isize - radius, y as isize);
                }
                out[y * self.width + x] = acc;
            }
        }
        Plane::new(self.width, self.height, out)
    }

    fn convolve_cols(&self, kernel: &[f32], radius: isize) -> Plane {
        let mut out = vec![0.0f32; self.data.len()];
        for y in 0..self.height {
            for x in 0..self.width {
                let mut acc = 0.0;
                for (k, w) in kernel.iter().enumerate() {
                    acc += w * self.get_clamped(x as isize, y as isize + k as isize - radius);
                }
                out[y * self.width + x] = acc;
            }
        }
        Plane::new(self.width, self.height, out)
    }
}

/// Normalized Gaussian taps for offsets `-radius..=radius`.
pub fn gaussian_kernel(radius: isize, sigma: f32) -> Vec<f32> {
    let mut k: Vec<f32> = (-radius..=radius)
        .map(|t| (-((t * t) as f32) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f32 = k.iter().sum();
    k.iter_mut().for_each(|v| *v /= sum);
    k
}

/// Clamped integer neighbours and fractional offset for a bilinear lookup.
#[inline]
pub(crate) fn lattice(coord: f32, len: usize) -> (usize, usize, f32) {
    let max = (len - 1) as f32;
    let c = coord.clamp(0.0, max);
    // c is nonnegative, so truncation is floor
    let i0 = c as usize;
    let frac = c - i0 as f32;
    let i1 = (i0 + 1).min(len - 1);
    (i0, i1, frac)
}

/// `a + t (b - a)`: exact when `a == b`, so constants survive interpolation.
#[inline]
pub(crate) fn lerp(a: f32, b: f32, t: f32) -> f32 {
    a + t * (b - a)
}

/// Mean over a `size x size` window (odd `size`) of several planes at once,
/// replicating edges. Uses running sums, so cost is independent of `size`.
pub fn box_mean(planes: &mut [Vec<f32>], width: usize, height: usize, size: usize) {
    let r = (size / 2) as isize;
    let norm = 1.0 / size as f32;
    let mut line = Vec::new();
    for plane in planes.iter_mut() {
        // rows
        line.resize(width, 0.0);
        for y in 0..height {
            let row = &mut plane[y * width..(y + 1) * width];
            running_mean(row, &mut line, r, norm);
            row.copy_from_slice(&line);
        }
        // columns
        let mut col = vec![0.0f32; height];
        line.resize(height, 0.0);
        for x in 0..width {
            for y in 0..height {
                col[y] = plane[y * width + x];
            }
            running_mean(&col, &mut line, r, norm);
            for y in 0..height {
                plane[y * width + x] = line[y];
            }
        }
    }
}

fn running_mean(src: &[f32], dst: &mut [f32], r: isize, norm: f32) {
    let n = src.len() as isize;
    let at = |i: isize| src[i.clamp(0, n - 1) as usize] as f64;
    let mut acc: f64 = (-r..=r).map(at).sum();
    for i in 0..n {
        dst[i as usize] = (acc as f32) * norm;
        acc += at(i + r + 1) - at(i - r);
    }
}
