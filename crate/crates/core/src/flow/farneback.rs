//! Coarse-to-fine dense displacement estimation from quadratic expansions.

use super::expansion::{expand_plane, PolyExpansion};
use super::plane::{box_mean, lattice, lerp, Plane};
use super::{resize_components, FlowParams};
use crate::types::FlowField;

/// Regularizer added to the 2x2 determinant so flat regions resolve to
/// zero displacement instead of blowing up.
const DET_EPS: f64 = 1e-3;

/// Smallest pyramid level side that is still solved.
const MIN_LEVEL_SIZE: usize = 8;

/// Estimates, for every pixel of `reference`, the displacement `d` such
/// that `target(p + d) ~ reference(p)`.
///
/// Passing the current frame as `reference` and the previous one as
/// `target` yields backward flow.
pub(crate) fn farneback(reference: &Plane, target: &Plane, params: &FlowParams) -> FlowField {
    let (width, height) = (reference.width, reference.height);
    let mut state: Option<(usize, usize, Vec<f32>, Vec<f32>)> = None;

    for level in (0..params.pyramid_levels).rev() {
        let scale = params.pyramid_scale.powi(level as i32);
        let lw = ((width as f32 * scale).round() as usize).max(1);
        let lh = ((height as f32 * scale).round() as usize).max(1);
        if level > 0 && (lw < MIN_LEVEL_SIZE || lh < MIN_LEVEL_SIZE) {
            continue;
        }
        let (r, t) = if level == 0 {
            (reference.clone(), target.clone())
        } else {
            let sigma = (1.0 / scale - 1.0) * 0.5;
            (
                reference.gaussian_blur(sigma).resize(lw, lh),
                target.gaussian_blur(sigma).resize(lw, lh),
            )
        };

        let (mut u, mut v) = match state.take() {
            Some((pw, ph, u, v)) => resize_components(&u, &v, pw, ph, lw, lh),
            None => (vec![0.0; lw * lh], vec![0.0; lw * lh]),
        };

        let e_ref = expand_plane(&r, params.poly_n, params.poly_sigma);
        let e_tgt = expand_plane(&t, params.poly_n, params.poly_sigma);
        for _ in 0..params.iterations {
            let mut m = update_matrices(&e_ref, &e_tgt, &u, &v);
            box_mean(&mut m, lw, lh, params.window_size);
            solve_displacements(&m, &mut u, &mut v);
        }
        state = Some((lw, lh, u, v));
    }

    let (_, _, u, v) = state.expect("level 0 is always solved");
    FlowField::from_raw(height, width, u, v)
}

/// Per-pixel normal-equation terms `[g11, g12, g22, h1, h2]` of the local
/// displacement solve, linearized around the current estimate.
fn update_matrices(e_ref: &PolyExpansion, e_tgt: &PolyExpansion, u: &[f32], v: &[f32]) -> Vec<Vec<f32>> {
    let (w, h) = (e_ref.width, e_ref.height);
    let n = w * h;
    let mut m = vec![vec![0.0f32; n]; 5];
    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let (dx, dy) = (u[i], v[i]);
            let [bx1, by1, axx1, ayy1, axy1] = sample_target(e_tgt, x as f32 + dx, y as f32 + dy);

            let axx = 0.5 * (e_ref.axx[i] + axx1);
            let ayy = 0.5 * (e_ref.ayy[i] + ayy1);
            let off = 0.25 * (e_ref.axy[i] + axy1);

            let db_x = 0.5 * (e_ref.bx[i] - bx1) + axx * dx + off * dy;
            let db_y = 0.5 * (e_ref.by[i] - by1) + off * dx + ayy * dy;

            m[0][i] = axx * axx + off * off;
            m[1][i] = (axx + ayy) * off;
            m[2][i] = ayy * ayy + off * off;
            m[3][i] = axx * db_x + off * db_y;
            m[4][i] = off * db_x + ayy * db_y;
        }
    }
    m
}

fn solve_displacements(m: &[Vec<f32>], u: &mut [f32], v: &mut [f32]) {
    for i in 0..u.len() {
        let (g11, g12, g22) = (m[0][i] as f64, m[1][i] as f64, m[2][i] as f64);
        let (h1, h2) = (m[3][i] as f64, m[4][i] as f64);
        let inv = 1.0 / (g11 * g22 - g12 * g12 + DET_EPS);
        u[i] = ((g22 * h1 - g12 * h2) * inv) as f32;
        v[i] = ((g11 * h2 - g12 * h1) * inv) as f32;
    }
}

/// Bilinear lookup of the target's `[bx, by, axx, ayy, axy]` at `(x, y)`.
#[inline]
fn sample_target(e: &PolyExpansion, x: f32, y: f32) -> [f32; 5] {
    let (x0, x1, ax) = lattice(x, e.width);
    let (y0, y1, ay) = lattice(y, e.height);
    let (r0, r1) = (y0 * e.width, y1 * e.width);
    let s = |p: &[f32]| lerp(lerp(p[r0 + x0], p[r0 + x1], ax), lerp(p[r1 + x0], p[r1 + x1], ax), ay);
    [s(&e.bx), s(&e.by), s(&e.axx), s(&e.ayy), s(&e.axy)]
}
