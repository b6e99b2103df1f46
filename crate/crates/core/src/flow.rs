//! Dense optical flow between consecutive burst frames.
//!
//! Each frame is approximated locally by quadratic polynomials fitted with
//! Gaussian-weighted least squares (polynomial expansion); displacement is
//! then solved from the coefficient differences, coarse-to-fine over an
//! image pyramid with spatially smoothed per-pixel 2x2 systems.
//!
//! All internal arithmetic is f64 so the recovered coefficients can be held
//! to tight tolerances against a dense least-squares oracle; public image
//! types remain f32.

use alloc::format;

use alloc::vec;
use alloc::vec::Vec;

use crate::color::hsv_to_rgb;
use num_traits::Float;

use crate::error::{CoreError, Result};
use crate::tensor::{ChannelRole, Frame};

/// Parameters of the pyramidal displacement estimator.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowParams {
    /// Downscale ratio between pyramid levels, in (0,1).
    pub pyramid_scale: f64,
    /// Total pyramid levels including the full-resolution image.
    pub levels: usize,
    /// Odd side of the box window smoothing the per-pixel systems.
    pub window: usize,
    /// Refinement passes per level.
    pub iterations: usize,
    /// Odd side of the polynomial-expansion window.
    pub poly_n: usize,
    /// Gaussian applicability sigma for the expansion.
    pub poly_sigma: f64,
}

impl Default for FlowParams {
    fn default() -> Self {
        FlowParams {
            pyramid_scale: 0.5,
            levels: 3,
            window: 15,
            iterations: 3,
            poly_n: 5,
            poly_sigma: 1.2,
        }
    }
}

impl FlowParams {
    pub fn validate(&self) -> Result<()> {
        if !(self.pyramid_scale > 0.0 && self.pyramid_scale < 1.0) {
            return Err(CoreError::Config(format!(
                "pyramid_scale must be in (0,1), got {}",
                self.pyramid_scale
            )));
        }
        if self.levels < 1 {
            return Err(CoreError::Config("levels must be >= 1".into()));
        }
        if self.window < 3 || self.window % 2 == 0 {
            return Err(CoreError::Config(format!(
                "window must be odd and >= 3, got {}",
                self.window
            )));
        }
        if self.poly_n < 3 || self.poly_n % 2 == 0 {
            return Err(CoreError::Config(format!(
                "poly_n must be odd and >= 3, got {}",
                self.poly_n
            )));
        }
        if self.iterations < 1 {
            return Err(CoreError::Config("iterations must be >= 1".into()));
        }
        if !(self.poly_sigma > 0.0) {
            return Err(CoreError::Config("poly_sigma must be positive".into()));
        }
        Ok(())
    }
}

/// Per-pixel displacement field; (dx, dy) moves content from the earlier
/// frame to the later one, x to the right and y downward.
#[derive(Debug, Clone, PartialEq)]
pub struct FlowField {
    height: usize,
    width: usize,
    dx: Vec<f32>,
    dy: Vec<f32>,
}

impl FlowField {
    pub fn new(height: usize, width: usize, dx: Vec<f32>, dy: Vec<f32>) -> Result<Self> {
        if dx.len() != height * width || dy.len() != height * width {
            return Err(CoreError::Dimension(format!(
                "flow component length {}/{} != {height}x{width}",
                dx.len(),
                dy.len()
            )));
        }
        if dx.iter().chain(dy.iter()).any(|v| !v.is_finite()) {
            return Err(CoreError::Numeric("flow field contains non-finite values".into()));
        }
        Ok(FlowField { height, width, dx, dy })
    }

    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn dx(&self) -> &[f32] {
        &self.dx
    }

    pub fn dy(&self) -> &[f32] {
        &self.dy
    }
}

/// Per-pixel quadratic fit f(u) ~ c + b.u + u'Au around each pixel.
///
/// Planes are ordered [c, bx, by, a11, a22, a12].
#[derive(Debug, Clone)]
pub struct PolyExpansion {
    height: usize,
    width: usize,
    planes: [Vec<f64>; 6],
}

impl PolyExpansion {
    pub fn height(&self) -> usize {
        self.height
    }

    pub fn width(&self) -> usize {
        self.width
    }

    pub fn c(&self, y: usize, x: usize) -> f64 {
        self.planes[0][y * self.width + x]
    }

    /// Linear coefficients (b_x, b_y).
    pub fn b(&self, y: usize, x: usize) -> [f64; 2] {
        let i = y * self.width + x;
        [self.planes[1][i], self.planes[2][i]]
    }

    /// Symmetric quadratic form [[a11, a12], [a12, a22]].
    pub fn a(&self, y: usize, x: usize) -> [[f64; 2]; 2] {
        let i = y * self.width + x;
        let (a11, a22, a12) = (self.planes[3][i], self.planes[4][i], self.planes[5][i]);
        [[a11, a12], [a12, a22]]
    }
}

fn gaussian_kernel(n: usize, sigma: f64) -> Vec<f64> {
    let m = (n / 2) as isize;
    let mut k: Vec<f64> = (-m..=m)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let sum: f64 = k.iter().sum();
    for v in &mut k {
        *v /= sum;
    }
    k
}

/// Solve a 6x6 system by Gauss-Jordan with partial pivoting.
fn invert6(g: &[[f64; 6]; 6]) -> Result<[[f64; 6]; 6]> {
    let mut a = *g;
    let mut inv = [[0.0f64; 6]; 6];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for col in 0..6 {
        let mut pivot = col;
        for r in col + 1..6 {
            if a[r][col].abs() > a[pivot][col].abs() {
                pivot = r;
            }
        }
        if a[pivot][col].abs() < 1e-300 {
            return Err(CoreError::Numeric("singular normal-equation matrix".into()));
        }
        a.swap(col, pivot);
        inv.swap(col, pivot);
        let d = a[col][col];
        for j in 0..6 {
            a[col][j] /= d;
            inv[col][j] /= d;
        }
        for r in 0..6 {
            if r != col {
                let f = a[r][col];
                if f != 0.0 {
                    for j in 0..6 {
                        a[r][j] -= f * a[col][j];
                        inv[r][j] -= f * inv[col][j];
                    }
                }
            }
        }
    }
    Ok(inv)
}

// Monomial powers of the basis [1, x, y, x^2, y^2, xy].
const BASIS: [(usize, usize); 6] = [(0, 0), (1, 0), (0, 1), (2, 0), (0, 2), (1, 1)];

/// Truncated 1D moment sums S[k] = sum_{t=-low..high} g[t] t^k for k=0..4.
fn moment_sums(kernel: &[f64], m: isize, low: isize, high: isize) -> [f64; 5] {
    let mut s = [0.0f64; 5];
    for t in -low..=high {
        let g = kernel[(t + m) as usize];
        let mut p = 1.0f64;
        for sk in &mut s {
            *sk += g * p;
            p *= t as f64;
        }
    }
    s
}

struct ExpansionSolver {
    m: isize,
    // Inverse normal matrices per (row-class, col-class); class m is the
    // untruncated interior, classes below/above are border truncations.
    inverses: Vec<Option<[[f64; 6]; 6]>>,
    classes: usize,
    sums_y: Vec<[f64; 5]>,
    sums_x: Vec<[f64; 5]>,
}

impl ExpansionSolver {
    fn new(n: usize, sigma: f64) -> Result<Self> {
        let kernel = gaussian_kernel(n, sigma);
        let m = (n / 2) as isize;
        let classes = (2 * m + 1) as usize;
        let per_axis = |_axis: usize| -> Vec<[f64; 5]> {
            (0..classes)
                .map(|cls| {
                    let (low, high) = class_range(cls as isize, m);
                    moment_sums(&kernel, m, low, high)
                })
                .collect()
        };
        let sums_y = per_axis(0);
        let sums_x = per_axis(1);
        let mut solver = ExpansionSolver {
            m,
            inverses: vec![None; classes * classes],
            classes,
            sums_y,
            sums_x,
        };
        // Precompute the interior inverse eagerly; borders are filled on use.
        solver.inverse_for(m as usize, m as usize)?;
        Ok(solver)
    }

    fn inverse_for(&mut self, cy: usize, cx: usize) -> Result<[[f64; 6]; 6]> {
        let idx = cy * self.classes + cx;
        if let Some(inv) = self.inverses[idx] {
            return Ok(inv);
        }
        let sy = self.sums_y[cy];
        let sx = self.sums_x[cx];
        let mut g = [[0.0f64; 6]; 6];
        for (i, &(pxi, pyi)) in BASIS.iter().enumerate() {
            for (j, &(pxj, pyj)) in BASIS.iter().enumerate() {
                g[i][j] = sx[pxi + pxj] * sy[pyi + pyj];
            }
        }
        let inv = invert6(&g)?;
        self.inverses[idx] = Some(inv);
        Ok(inv)
    }
}

fn class_range(cls: isize, m: isize) -> (isize, isize) {
    if cls < m {
        (cls, m) // cls pixels of margin on the low side
    } else if cls == m {
        (m, m)
    } else {
        (m, 2 * m - cls)
    }
}

fn class_of(pos: usize, len: usize, m: isize) -> usize {
    let low = (pos as isize).min(m);
    let high = (len as isize - 1 - pos as isize).min(m);
    if low < m {
        low as usize
    } else if high < m {
        (2 * m - high) as usize
    } else {
        m as usize
    }
}

/// Polynomial expansion of a single f64 plane; the workhorse shared by the
/// public op and the pyramid estimator.
fn poly_exp_plane(
    src: &[f64],
    h: usize,
    w: usize,
    n: usize,
    sigma: f64,
) -> Result<PolyExpansion> {
    if h < n || w < n {
        return Err(CoreError::Dimension(format!(
            "image {h}x{w} smaller than expansion window {n}"
        )));
    }
    let kernel = gaussian_kernel(n, sigma);
    let m = (n / 2) as isize;
    let npx = h * w;

    // Vertical pass: t_k(y,x) = sum_dy g(dy) dy^k f(y+dy, x), truncated.
    let mut t0 = vec![0.0f64; npx];
    let mut t1 = vec![0.0f64; npx];
    let mut t2 = vec![0.0f64; npx];
    for dy in -m..=m {
        let g = kernel[(dy + m) as usize];
        let g1 = g * dy as f64;
        let g2 = g1 * dy as f64;
        let y_start = (-dy).max(0) as usize;
        let y_end = (h as isize - dy.max(0)) as usize;
        for y in y_start..y_end {
            let src_row = &src[((y as isize + dy) as usize) * w..((y as isize + dy) as usize) * w + w];
            let o = y * w;
            crate::simd::axpy_f64(&mut t0[o..o + w], src_row, g);
            crate::simd::axpy_f64(&mut t1[o..o + w], src_row, g1);
            crate::simd::axpy_f64(&mut t2[o..o + w], src_row, g2);
        }
    }

    // Horizontal pass: six moments per pixel, truncated at borders.
    let mut mom = [
        vec![0.0f64; npx], // m00
        vec![0.0f64; npx], // m10
        vec![0.0f64; npx], // m01
        vec![0.0f64; npx], // m20
        vec![0.0f64; npx], // m02
        vec![0.0f64; npx], // m11
    ];
    for dx in -m..=m {
        let g = kernel[(dx + m) as usize];
        let g1 = g * dx as f64;
        let g2 = g1 * dx as f64;
        let x_start = (-dx).max(0) as usize;
        let x_end = (w as isize - dx.max(0)) as usize;
        if x_start >= x_end {
            continue;
        }
        for y in 0..h {
            let o = y * w;
            let shift = |x: usize| (x as isize + dx) as usize;
            let s0 = &t0[o + shift(x_start)..o + shift(x_end - 1) + 1];
            let s1 = &t1[o + shift(x_start)..o + shift(x_end - 1) + 1];
            let s2 = &t2[o + shift(x_start)..o + shift(x_end - 1) + 1];
            crate::simd::axpy_f64(&mut mom[0][o + x_start..o + x_end], s0, g);
            crate::simd::axpy_f64(&mut mom[1][o + x_start..o + x_end], s0, g1);
            crate::simd::axpy_f64(&mut mom[2][o + x_start..o + x_end], s1, g);
            crate::simd::axpy_f64(&mut mom[3][o + x_start..o + x_end], s0, g2);
            crate::simd::axpy_f64(&mut mom[4][o + x_start..o + x_end], s2, g);
            crate::simd::axpy_f64(&mut mom[5][o + x_start..o + x_end], s1, g1);
        }
    }

    // Solve the (cached) normal equations per pixel.
    let mut solver = ExpansionSolver::new(n, sigma)?;
    let mut planes: [Vec<f64>; 6] = [
        vec![0.0; npx],
        vec![0.0; npx],
        vec![0.0; npx],
        vec![0.0; npx],
        vec![0.0; npx],
        vec![0.0; npx],
    ];
    for y in 0..h {
        let cy = class_of(y, h, m);
        for x in 0..w {
            let cx = class_of(x, w, m);
            let inv = solver.inverse_for(cy, cx)?;
            let i = y * w + x;
            let rhs = [mom[0][i], mom[1][i], mom[2][i], mom[3][i], mom[4][i], mom[5][i]];
            let mut beta = [0.0f64; 6];
            for (r, beta_r) in beta.iter_mut().enumerate() {
                let mut acc = 0.0;
                for (c, &rhs_c) in rhs.iter().enumerate() {
                    acc += inv[r][c] * rhs_c;
                }
                *beta_r = acc;
            }
            planes[0][i] = beta[0]; // c
            planes[1][i] = beta[1]; // bx
            planes[2][i] = beta[2]; // by
            planes[3][i] = beta[3]; // a11 (x^2)
            planes[4][i] = beta[4]; // a22 (y^2)
            planes[5][i] = beta[5] / 2.0; // a12 from the xy monomial
        }
    }
    Ok(PolyExpansion { height: h, width: w, planes })
}

/// Gaussian-weighted quadratic fit at every pixel of a grayscale frame.
pub fn poly_expand(gray: &Frame, poly_n: usize, poly_sigma: f64) -> Result<PolyExpansion> {
    if gray.channels() != 1 {
        return Err(CoreError::Channel(format!(
            "polynomial expansion requires 1 channel, got {}",
            gray.channels()
        )));
    }
    if poly_n < 3 || poly_n % 2 == 0 {
        return Err(CoreError::Config(format!("poly_n must be odd and >= 3, got {poly_n}")));
    }
    let plane: Vec<f64> = gray.plane(0).iter().map(|&v| v as f64).collect();
    poly_exp_plane(&plane, gray.height(), gray.width(), poly_n, poly_sigma)
}

/// Truncated, renormalized separable box blur.
fn box_blur(src: &[f64], h: usize, w: usize, radius: usize, out: &mut [f64]) {
    let mut tmp = vec![0.0f64; h * w];
    let r = radius as isize;
    // Horizontal.
    for y in 0..h {
        let row = &src[y * w..y * w + w];
        let mut acc = 0.0f64;
        let mut count = 0usize;
        for x in 0..(r as usize + 1).min(w) {
            acc += row[x];
            count += 1;
        }
        for x in 0..w {
            tmp[y * w + x] = acc / count as f64;
            let add = x as isize + r + 1;
            if add < w as isize {
                acc += row[add as usize];
                count += 1;
            }
            let del = x as isize - r;
            if del >= 0 {
                acc -= row[del as usize];
                count -= 1;
            }
        }
    }
    // Vertical with per-column running sums.
    let mut acc = vec![0.0f64; w];
    let mut count = 0usize;
    for y in 0..(r as usize + 1).min(h) {
        for x in 0..w {
            acc[x] += tmp[y * w + x];
        }
        count += 1;
    }
    for y in 0..h {
        let inv = 1.0 / count as f64;
        for x in 0..w {
            out[y * w + x] = acc[x] * inv;
        }
        let add = y as isize + r + 1;
        if add < h as isize {
            let row = &tmp[add as usize * w..add as usize * w + w];
            for x in 0..w {
                acc[x] += row[x];
            }
            count += 1;
        }
        let del = y as isize - r;
        if del >= 0 {
            let row = &tmp[del as usize * w..del as usize * w + w];
            for x in 0..w {
                acc[x] -= row[x];
            }
            count -= 1;
        }
    }
}

/// Truncated, renormalized separable Gaussian blur.
fn gaussian_blur(src: &[f64], h: usize, w: usize, sigma: f64) -> Vec<f64> {
    let radius = (3.0 * sigma).ceil() as isize;
    let kernel: Vec<f64> = (-radius..=radius)
        .map(|t| (-((t * t) as f64) / (2.0 * sigma * sigma)).exp())
        .collect();
    let mut tmp = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for t in -radius..=radius {
                let xx = x as isize + t;
                if xx >= 0 && xx < w as isize {
                    let g = kernel[(t + radius) as usize];
                    acc += g * src[y * w + xx as usize];
                    norm += g;
                }
            }
            tmp[y * w + x] = acc / norm;
        }
    }
    let mut out = vec![0.0f64; h * w];
    for y in 0..h {
        for x in 0..w {
            let mut acc = 0.0;
            let mut norm = 0.0;
            for t in -radius..=radius {
                let yy = y as isize + t;
                if yy >= 0 && yy < h as isize {
                    let g = kernel[(t + radius) as usize];
                    acc += g * tmp[yy as usize * w + x];
                    norm += g;
                }
            }
            out[y * w + x] = acc / norm;
        }
    }
    out
}

fn resize_plane_f64(src: &[f64], sh: usize, sw: usize, oh: usize, ow: usize) -> Vec<f64> {
    let mut dst = vec![0.0f64; oh * ow];
    let sy = sh as f64 / oh as f64;
    let sx = sw as f64 / ow as f64;
    for oy in 0..oh {
        let fy = (oy as f64 + 0.5) * sy - 0.5;
        let y0 = fy.floor();
        let ty = fy - y0;
        let y0i = (y0 as isize).clamp(0, sh as isize - 1) as usize;
        let y1i = (y0 as isize + 1).clamp(0, sh as isize - 1) as usize;
        for ox in 0..ow {
            let fx = (ox as f64 + 0.5) * sx - 0.5;
            let x0 = fx.floor();
            let tx = fx - x0;
            let x0i = (x0 as isize).clamp(0, sw as isize - 1) as usize;
            let x1i = (x0 as isize + 1).clamp(0, sw as isize - 1) as usize;
            let top = src[y0i * sw + x0i] + tx * (src[y0i * sw + x1i] - src[y0i * sw + x0i]);
            let bot = src[y1i * sw + x0i] + tx * (src[y1i * sw + x1i] - src[y1i * sw + x0i]);
            dst[oy * ow + ox] = top + ty * (bot - top);
        }
    }
    dst
}

fn bilinear_at(plane: &[f64], h: usize, w: usize, fy: f64, fx: f64) -> f64 {
    let fy = fy.clamp(0.0, (h - 1) as f64);
    let fx = fx.clamp(0.0, (w - 1) as f64);
    let y0 = fy.floor() as usize;
    let x0 = fx.floor() as usize;
    let y1 = (y0 + 1).min(h - 1);
    let x1 = (x0 + 1).min(w - 1);
    let ty = fy - y0 as f64;
    let tx = fx - x0 as f64;
    let top = plane[y0 * w + x0] + tx * (plane[y0 * w + x1] - plane[y0 * w + x0]);
    let bot = plane[y1 * w + x0] + tx * (plane[y1 * w + x1] - plane[y1 * w + x0]);
    top + ty * (bot - top)
}

/// One refinement pass: recompute the per-pixel 2x2 systems from the two
/// expansions and the current flow guess, box-smooth them, re-solve.
fn update_flow(
    prev: &PolyExpansion,
    next: &PolyExpansion,
    flow_x: &mut Vec<f64>,
    flow_y: &mut Vec<f64>,
    window: usize,
) {
    let (h, w) = (prev.height, prev.width);
    let npx = h * w;
    let mut m11 = vec![0.0f64; npx];
    let mut m12 = vec![0.0f64; npx];
    let mut m22 = vec![0.0f64; npx];
    let mut h1 = vec![0.0f64; npx];
    let mut h2 = vec![0.0f64; npx];

    for y in 0..h {
        for x in 0..w {
            let i = y * w + x;
            let dx = flow_x[i];
            let dy = flow_y[i];
            let sx = x as f64 + dx;
            let sy = y as f64 + dy;
            let q_bx = bilinear_at(&next.planes[1], h, w, sy, sx);
            let q_by = bilinear_at(&next.planes[2], h, w, sy, sx);
            let q_a11 = bilinear_at(&next.planes[3], h, w, sy, sx);
            let q_a22 = bilinear_at(&next.planes[4], h, w, sy, sx);
            let q_a12 = bilinear_at(&next.planes[5], h, w, sy, sx);

            let a11 = 0.5 * (prev.planes[3][i] + q_a11);
            let a22 = 0.5 * (prev.planes[4][i] + q_a22);
            let a12 = 0.5 * (prev.planes[5][i] + q_a12);
            let db_x = 0.5 * (prev.planes[1][i] - q_bx) + a11 * dx + a12 * dy;
            let db_y = 0.5 * (prev.planes[2][i] - q_by) + a12 * dx + a22 * dy;

            m11[i] = a11 * a11 + a12 * a12;
            m12[i] = a12 * (a11 + a22);
            m22[i] = a12 * a12 + a22 * a22;
            h1[i] = a11 * db_x + a12 * db_y;
            h2[i] = a12 * db_x + a22 * db_y;
        }
    }

    let radius = window / 2;
    let mut s11 = vec![0.0f64; npx];
    let mut s12 = vec![0.0f64; npx];
    let mut s22 = vec![0.0f64; npx];
    let mut sh1 = vec![0.0f64; npx];
    let mut sh2 = vec![0.0f64; npx];
    box_blur(&m11, h, w, radius, &mut s11);
    box_blur(&m12, h, w, radius, &mut s12);
    box_blur(&m22, h, w, radius, &mut s22);
    box_blur(&h1, h, w, radius, &mut sh1);
    box_blur(&h2, h, w, radius, &mut sh2);

    for i in 0..npx {
        let det = s11[i] * s22[i] - s12[i] * s12[i];
        if det.abs() > 1e-12 {
            flow_x[i] = (s22[i] * sh1[i] - s12[i] * sh2[i]) / det;
            flow_y[i] = (s11[i] * sh2[i] - s12[i] * sh1[i]) / det;
        }
        // Otherwise keep the prior guess (textureless window).
    }
}

/// Dense displacement field from `prev` to `next`, coarse-to-fine.
pub fn estimate_flow(prev: &Frame, next: &Frame, params: &FlowParams) -> Result<FlowField> {
    params.validate()?;
    if prev.channels() != 1 || next.channels() != 1 {
        return Err(CoreError::Channel("flow estimation requires single-channel frames".into()));
    }
    if prev.height() != next.height() || prev.width() != next.width() {
        return Err(CoreError::Dimension(format!(
            "frame size mismatch: {}x{} vs {}x{}",
            prev.height(),
            prev.width(),
            next.height(),
            next.width()
        )));
    }
    let (h, w) = (prev.height(), prev.width());
    if h < params.poly_n || w < params.poly_n {
        return Err(CoreError::Dimension(format!(
            "frames {h}x{w} smaller than expansion window {}",
            params.poly_n
        )));
    }

    let base_prev: Vec<f64> = prev.plane(0).iter().map(|&v| v as f64).collect();
    let base_next: Vec<f64> = next.plane(0).iter().map(|&v| v as f64).collect();

    // Antialiased pyramid; levels too small for the expansion window are
    // dropped.
    let blur_sigma = 0.5 * (1.0 / (params.pyramid_scale * params.pyramid_scale) - 1.0).sqrt();
    let mut sizes = vec![(h, w)];
    let mut pyr_prev = vec![base_prev];
    let mut pyr_next = vec![base_next];
    for _ in 1..params.levels {
        let (ph, pw) = *sizes.last().unwrap();
        let nh = ((ph as f64) * params.pyramid_scale).round() as usize;
        let nw = ((pw as f64) * params.pyramid_scale).round() as usize;
        if nh < params.poly_n || nw < params.poly_n {
            break;
        }
        let sp = gaussian_blur(pyr_prev.last().unwrap(), ph, pw, blur_sigma);
        let sn = gaussian_blur(pyr_next.last().unwrap(), ph, pw, blur_sigma);
        pyr_prev.push(resize_plane_f64(&sp, ph, pw, nh, nw));
        pyr_next.push(resize_plane_f64(&sn, ph, pw, nh, nw));
        sizes.push((nh, nw));
    }

    let mut flow_x: Vec<f64> = Vec::new();
    let mut flow_y: Vec<f64> = Vec::new();
    for level in (0..sizes.len()).rev() {
        let (lh, lw) = sizes[level];
        if flow_x.is_empty() {
            flow_x = vec![0.0; lh * lw];
            flow_y = vec![0.0; lh * lw];
        } else {
            let (ch, cw) = sizes[level + 1];
            let rx = resize_plane_f64(&flow_x, ch, cw, lh, lw);
            let ry = resize_plane_f64(&flow_y, ch, cw, lh, lw);
            let gain_x = lw as f64 / cw as f64;
            let gain_y = lh as f64 / ch as f64;
            flow_x = rx.into_iter().map(|v| v * gain_x).collect();
            flow_y = ry.into_iter().map(|v| v * gain_y).collect();
        }
        let exp_prev = poly_exp_plane(&pyr_prev[level], lh, lw, params.poly_n, params.poly_sigma)?;
        let exp_next = poly_exp_plane(&pyr_next[level], lh, lw, params.poly_n, params.poly_sigma)?;
        for _ in 0..params.iterations {
            update_flow(&exp_prev, &exp_next, &mut flow_x, &mut flow_y, params.window);
        }
    }

    FlowField::new(
        h,
        w,
        flow_x.into_iter().map(|v| v as f32).collect(),
        flow_y.into_iter().map(|v| v as f32).collect(),
    )
}

/// Render a flow field to RGB: hue = direction, value = magnitude capped at
/// `magnitude_cap` pixels, full saturation. Zero flow renders exact black.
pub fn flow_to_rgb(flow: &FlowField, magnitude_cap: f32) -> Result<Frame> {
    if !(magnitude_cap > 0.0) {
        return Err(CoreError::Contract(format!(
            "magnitude_cap must be positive, got {magnitude_cap}"
        )));
    }
    let n = flow.height() * flow.width();
    let mut data = vec![0.0f32; 3 * n];
    for i in 0..n {
        let dx = flow.dx[i];
        let dy = flow.dy[i];
        if !dx.is_finite() || !dy.is_finite() {
            return Err(CoreError::Numeric("non-finite flow value".into()));
        }
        let mag = (dx * dx + dy * dy).sqrt();
        let v = (mag / magnitude_cap).min(1.0);
        let h = if mag > 0.0 {
            let angle = (dy as f64).atan2(dx as f64);
            { let t = angle / (2.0 * core::f64::consts::PI) % 1.0; (if t < 0.0 { t + 1.0 } else { t }) as f32 }
        } else {
            0.0
        };
        let (r, g, b) = hsv_to_rgb(h, 1.0, v);
        data[i] = r.clamp(0.0, 1.0);
        data[n + i] = g.clamp(0.0, 1.0);
        data[2 * n + i] = b.clamp(0.0, 1.0);
    }
    Frame::new(flow.height(), flow.width(), 3, data)
}

/// Pixelwise arithmetic mean of two rendered flow images.
pub fn average_flow_images(img12: &Frame, img23: &Frame) -> Result<Frame> {
    if img12.height() != img23.height()
        || img12.width() != img23.width()
        || img12.channels() != img23.channels()
    {
        return Err(CoreError::Dimension(format!(
            "flow image shape mismatch: {}x{}x{} vs {}x{}x{}",
            img12.height(),
            img12.width(),
            img12.channels(),
            img23.height(),
            img23.width(),
            img23.channels()
        )));
    }
    let data: Vec<f32> = img12
        .data()
        .iter()
        .zip(img23.data())
        .map(|(a, b)| 0.5 * (a + b))
        .collect();
    Frame::new(img12.height(), img12.width(), img12.channels(), data)
}

/// Flow images of a burst: (frames 1-2, frames 2-3, their average).
///
/// RGB frames are converted to luminance before estimation.
pub fn burst_flow_images(
    frames: &[Frame; 3],
    params: &FlowParams,
    magnitude_cap: f32,
) -> Result<(Frame, Frame, Frame)> {
    let gray: Vec<Frame> = frames
        .iter()
        .map(|f| if f.channels() == 3 { f.rgb_to_gray() } else { Ok(f.clone()) })
        .collect::<Result<_>>()?;
    let flow12 = estimate_flow(&gray[0], &gray[1], params)?;
    let flow23 = estimate_flow(&gray[1], &gray[2], params)?;
    let img12 = flow_to_rgb(&flow12, magnitude_cap)?;
    let img23 = flow_to_rgb(&flow23, magnitude_cap)?;
    let averaged = average_flow_images(&img12, &img23)?;
    Ok((img12, img23, averaged))
}

/// Role tags for the three flow images of a burst, in `burst_flow_images`
/// output order.
pub fn flow_image_roles() -> [ChannelRole; 3] {
    use crate::tensor::FlowPair;
    [
        ChannelRole::FlowImage(FlowPair::Frames12),
        ChannelRole::FlowImage(FlowPair::Frames23),
        ChannelRole::FlowImage(FlowPair::Averaged),
    ]
}
