//! Gaussian-kernel transform Tf(z) = ∫ e^{−(z−y)²/2h} f(y) dy at real and complex
//! arguments, its small-h inversion, and the two-sided bound chain.

use std::f64::consts::PI;

use rustfft::num_complex::Complex;
use rustfft::FftPlanner;

use crate::biharmonic_core::Field;
use crate::error::{invalid, Error, Result};
use crate::geometry::{Lattice, Point};
use crate::numerics::{fit_slope, C64, I};

/// Largest exponent handled as a plain complex number.
pub const LOG_GUARD: f64 = 700.0;

/// Minimum number of grid nodes per √h for the real transform.
pub const NODES_PER_SQRT_H: f64 = 6.0;

/// Rectangular grid function produced by the real transform.
#[derive(Clone, Debug)]
pub struct GridFunction {
    pub lattice: Lattice,
    pub values: Vec<C64>,
}

impl GridFunction {
    /// Value at global lattice indices (gi, gj), zero outside the stored block.
    pub fn at_global(&self, gi: i64, gj: i64) -> C64 {
        let i = gi - self.lattice.i0;
        let j = gj - self.lattice.j0;
        if i < 0 || j < 0 || i as usize >= self.lattice.nx || j as usize >= self.lattice.ny {
            return C64::new(0.0, 0.0);
        }
        self.values[j as usize * self.lattice.nx + i as usize]
    }

    /// Restriction to the interior nodes of the field's domain (shared global grid).
    pub fn restrict(&self, like: &Field) -> Field {
        let d = &like.domain;
        let values = d
            .interior
            .iter()
            .map(|&(i, j)| self.at_global(d.lattice.i0 + i as i64, d.lattice.j0 + j as i64))
            .collect();
        Field { domain: d.clone(), values, ghosts: None }
    }
}

fn fft2(data: &mut [Complex<f64>], nx: usize, ny: usize, inverse: bool) {
    let mut planner = FftPlanner::<f64>::new();
    let fx = if inverse { planner.plan_fft_inverse(nx) } else { planner.plan_fft_forward(nx) };
    let fy = if inverse { planner.plan_fft_inverse(ny) } else { planner.plan_fft_forward(ny) };
    for row in data.chunks_mut(nx) {
        fx.process(row);
    }
    let mut col = vec![Complex::new(0.0, 0.0); ny];
    for i in 0..nx {
        for j in 0..ny {
            col[j] = data[j * nx + i];
        }
        fy.process(&mut col);
        for j in 0..ny {
            data[j * nx + i] = col[j];
        }
    }
}

/// Linear convolution of a rectangular block (row-major, spacing dx, lower-left global
/// index (i0, j0)) with e^{−|x|²/2h}, zero-padded so no wrap-around occurs.
pub fn gaussian_convolve_block(values: &[C64], nx: usize, ny: usize, i0: i64, j0: i64, dx: f64, h: f64) -> Result<GridFunction> {
    if !(h > 0.0) {
        return invalid("h must be positive");
    }
    let needed = NODES_PER_SQRT_H * dx;
    if h.sqrt() < needed {
        return Err(Error::UnderResolved(format!("kernel needs √h ≥ {needed} (grid spacing {dx}); got h = {h}, requires h ≥ {}", needed * needed)));
    }
    let kr = (10.0 * h.sqrt() / dx).ceil() as usize;
    let px = nx + 2 * kr;
    let py = ny + 2 * kr;
    let mut a = vec![Complex::new(0.0, 0.0); px * py];
    for j in 0..ny {
        for i in 0..nx {
            a[(j + kr) * px + i + kr] = values[j * nx + i];
        }
    }
    let mut k = vec![Complex::new(0.0, 0.0); px * py];
    let g: Vec<f64> = (0..=kr).map(|d| (-((d as f64 * dx).powi(2)) / (2.0 * h)).exp()).collect();
    for dj in -(kr as i64)..=kr as i64 {
        for di in -(kr as i64)..=kr as i64 {
            let ii = di.rem_euclid(px as i64) as usize;
            let jj = dj.rem_euclid(py as i64) as usize;
            k[jj * px + ii] = Complex::new(g[di.unsigned_abs() as usize] * g[dj.unsigned_abs() as usize], 0.0);
        }
    }
    fft2(&mut a, px, py, false);
    fft2(&mut k, px, py, false);
    for (x, y) in a.iter_mut().zip(&k) {
        *x *= y;
    }
    fft2(&mut a, px, py, true);
    let norm = 1.0 / (px * py) as f64;
    Ok(GridFunction {
        lattice: Lattice { dx, i0: i0 - kr as i64, j0: j0 - kr as i64, nx: px, ny: py },
        values: a.into_iter().map(|v| v * norm).collect(),
    })
}

/// Tf on the grid for real arguments: quadrature (domain weights) of f against the
/// Gaussian, computed by zero-padded FFT convolution over the field's bounding block.
pub fn transform_real(f: &Field, h: f64) -> Result<GridFunction> {
    let d = &f.domain;
    let (mut imin, mut jmin, mut imax, mut jmax) = (usize::MAX, usize::MAX, 0, 0);
    for &(i, j) in &d.interior {
        imin = imin.min(i);
        jmin = jmin.min(j);
        imax = imax.max(i);
        jmax = jmax.max(j);
    }
    let nx = imax - imin + 1;
    let ny = jmax - jmin + 1;
    let mut block = vec![C64::new(0.0, 0.0); nx * ny];
    for (k, &(i, j)) in d.interior.iter().enumerate() {
        block[(j - jmin) * nx + (i - imin)] = f.values[k] * d.weights[k];
    }
    gaussian_convolve_block(&block, nx, ny, d.lattice.i0 + imin as i64, d.lattice.j0 + jmin as i64, d.dx(), h)
}

/// Direct quadrature of Tf at a real point; the oracle for the FFT path.
pub fn transform_real_direct(f: &Field, h: f64, x: Point) -> C64 {
    let d = &f.domain;
    (0..d.n_interior())
        .map(|k| {
            let y = d.interior_point(k);
            let r2 = (x[0] - y[0]).powi(2) + (x[1] - y[1]).powi(2);
            f.values[k] * d.weights[k] * (-r2 / (2.0 * h)).exp()
        })
        .sum()
}

/// Complex number held as (ln|w|, arg w); `scaled` marks values whose magnitude
/// exponent exceeded the guard and must stay in log form.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct LogComplex {
    pub ln_abs: f64,
    pub arg: f64,
    pub scaled: bool,
}

impl LogComplex {
    pub fn zero() -> Self {
        Self { ln_abs: f64::NEG_INFINITY, arg: 0.0, scaled: false }
    }

    /// The raw complex value, unavailable once scaled.
    pub fn value(&self) -> Option<C64> {
        (!self.scaled).then(|| C64::from_polar(self.ln_abs.exp(), self.arg))
    }

    pub fn abs_ln(&self) -> f64 {
        self.ln_abs
    }
}

/// Σ_k c_k e^{E_k} in log space.
fn log_sum(terms: impl Iterator<Item = (C64, C64)> + Clone) -> (f64, C64) {
    let m = terms.clone().filter(|(c, _)| c.norm() > 0.0).map(|(_, e)| e.re).fold(f64::NEG_INFINITY, f64::max);
    if !m.is_finite() {
        return (f64::NEG_INFINITY, C64::new(0.0, 0.0));
    }
    let s: C64 = terms.map(|(c, e)| c * (e - m).exp()).sum();
    (m, s)
}

fn to_log(m: f64, s: C64) -> LogComplex {
    if s.norm() == 0.0 || !m.is_finite() {
        return LogComplex::zero();
    }
    LogComplex { ln_abs: m + s.norm().ln(), arg: s.arg(), scaled: m > LOG_GUARD }
}

/// Tf(z) for z ∈ ℂ² by direct quadrature, (z − y)² the holomorphic square.
pub fn transform_complex(f: &Field, h: f64, z: [C64; 2]) -> Result<LogComplex> {
    if !(h > 0.0) {
        return invalid("h must be positive");
    }
    let d = &f.domain;
    let im = (z[0].im.powi(2) + z[1].im.powi(2)).sqrt();
    if h < NODES_PER_SQRT_H * d.dx() * im {
        return Err(Error::UnderResolved(format!("complex argument with |Im z| = {im} needs h ≥ {}", NODES_PER_SQRT_H * d.dx() * im)));
    }
    let terms = (0..d.n_interior()).map(|k| {
        let y = d.interior_point(k);
        let a = z[0] - y[0];
        let b = z[1] - y[1];
        (f.values[k] * d.weights[k], -(a * a + b * b) / (2.0 * h))
    });
    let (m, s) = log_sum(terms);
    Ok(to_log(m, s))
}

/// Right side of the kernel identity per coordinate pair:
/// e^{−z²/2h}(2πh)^{−n/2}∫e^{−t²/2h}e^{−(i/h)y·(t+iz)}dt, by trapezoid quadrature in each axis.
pub fn kernel_identity_rhs(y: Point, z: [C64; 2], h: f64) -> C64 {
    let s = h.sqrt();
    let n = 4000;
    let l = 40.0 * s + 2.0 * (z[0].norm() + z[1].norm());
    let dt = 2.0 * l / n as f64;
    let axis = |yj: f64, zj: C64| -> C64 {
        let mut acc = C64::new(0.0, 0.0);
        for k in 0..=n {
            let t = -l + k as f64 * dt;
            let w = if k == 0 || k == n { 0.5 } else { 1.0 };
            acc += w * (-(t * t) / (2.0 * h) - I / h * yj * (t + I * zj)).exp();
        }
        (-(zj * zj) / (2.0 * h)).exp() * acc * dt / (2.0 * PI * h).sqrt()
    };
    axis(y[0], z[0]) * axis(y[1], z[1])
}

/// Gaussian kernel e^{−(z−y)²/2h}.
pub fn kernel(y: Point, z: [C64; 2], h: f64) -> C64 {
    let a = z[0] - y[0];
    let b = z[1] - y[1];
    (-(a * a + b * b) / (2.0 * h)).exp()
}

/// ln of the modulus bound e^{|Im z|²/2h}‖f‖∞(2πh)^{n/2}.
pub fn modulus_bound_ln(f: &Field, h: f64, z: [C64; 2]) -> f64 {
    let sup = f.max_abs();
    (z[0].im.powi(2) + z[1].im.powi(2)) / (2.0 * h) + sup.ln() + (2.0 * PI * h).ln()
}

/// One row of the inversion table.
#[derive(Clone, Copy, Debug)]
pub struct InversionRow {
    pub h: f64,
    pub l2_error: f64,
}

/// ‖(2πh)^{−n/2}Tf − f‖_{L²(Ω)} along an h ladder, plus the fitted slope against h.
pub fn inversion_limit(f: &Field, ladder: &[f64]) -> Result<(Vec<InversionRow>, f64)> {
    let mut rows = Vec::new();
    for &h in ladder {
        let t = transform_real(f, h)?.restrict(f);
        let c = 1.0 / (2.0 * PI * h);
        let e2: f64 = t.values.iter().zip(&f.values).zip(&f.domain.weights).map(|((a, b), w)| w * (a * c - b).norm_sqr()).sum();
        rows.push(InversionRow { h, l2_error: e2.sqrt() });
    }
    let x: Vec<f64> = rows.iter().map(|r| r.h.ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.l2_error.max(1e-300).ln()).collect();
    let slope = if rows.len() >= 2 { fit_slope(&x, &y) } else { f64::NAN };
    Ok((rows, slope))
}

/// Both sides of the split bound on |Tf(z)| in log form.
#[derive(Clone, Copy, Debug)]
pub struct BoundChain {
    pub lhs_ln: f64,
    pub rhs_ln: f64,
    /// ln of the sampled sup over |t| < εa of |∫e^{−(i/h)y·(t+iz)}f(y)dy|.
    pub sup_ln: f64,
    /// ln of the tail term √2 e^{|Re z′|/h}e^{−ε²a²/4h}∫|f|.
    pub tail_ln: f64,
    /// ln of the allowance for the lattice-sampled sup (Lipschitz bound × half-diagonal).
    pub floor_ln: f64,
    pub holds: bool,
}

fn ln_add(a: f64, b: f64) -> f64 {
    let m = a.max(b);
    if !m.is_finite() {
        return m;
    }
    m + ((a - m).exp() + (b - m).exp()).ln()
}

/// Evaluates |Tf(z)| and the right side
/// e^{−(|Re z|²−|Im z|²)/2h}(sup_{|t|<εa}|F(t+iz)| + √2 e^{|Re z′|/h}e^{−ε²a²/4h}∫|f|),
/// F(ζ) = ∫e^{−(i/h)y·ζ}f(y)dy, with the sup sampled on a t-lattice of spacing √h/4.
pub fn bound_chain(f: &Field, h: f64, z: [C64; 2], eps: f64, a: f64) -> Result<BoundChain> {
    if !(eps > 0.0 && a > 0.0) {
        return invalid("ε and a must be positive");
    }
    let d = &f.domain;
    if (0..d.n_interior()).any(|k| d.interior_point(k)[0] > 0.0 && f.values[k].norm() > 0.0) {
        return invalid("bound chain requires supp f ⊂ {y₁ ≤ 0}");
    }
    let lhs = transform_complex(f, h, z)?;
    let re2 = z[0].re.powi(2) + z[1].re.powi(2);
    let im2 = z[0].im.powi(2) + z[1].im.powi(2);
    let pref = -(re2 - im2) / (2.0 * h);
    let moment = |t: Point| -> f64 {
        let zeta = [t[0] + I * z[0], t[1] + I * z[1]];
        let terms = (0..d.n_interior()).map(|k| {
            let y = d.interior_point(k);
            (f.values[k] * d.weights[k], -I / h * (y[0] * zeta[0] + y[1] * zeta[1]))
        });
        let (m, s) = log_sum(terms);
        if s.norm() == 0.0 {
            f64::NEG_INFINITY
        } else {
            m + s.norm().ln()
        }
    };
    let r = eps * a;
    let step = h.sqrt() / 4.0;
    let nt = (r / step).ceil() as i64;
    let mut sup = f64::NEG_INFINITY;
    for q in -nt..=nt {
        for p in -nt..=nt {
            let t = [p as f64 * step, q as f64 * step];
            if t[0].hypot(t[1]) < r {
                sup = sup.max(moment(t));
            }
        }
    }
    let l1: f64 = f.values.iter().zip(&d.weights).map(|(v, w)| v.norm() * w).sum();
    let tail = if l1 > 0.0 { 0.5 * 2f64.ln() + z[1].re.abs() / h - eps * eps * a * a / (4.0 * h) + l1.ln() } else { f64::NEG_INFINITY };
    // |∂_t F| ≤ (1/h)∫|y||f|e^{y·Re z/h}; the sampled sup misses at most that times the half diagonal.
    let lip_terms = (0..d.n_interior()).map(|k| {
        let y = d.interior_point(k);
        (C64::new(f.values[k].norm() * d.weights[k] * y[0].hypot(y[1]) / h, 0.0), C64::new((y[0] * z[0].re + y[1] * z[1].re) / h, 0.0))
    });
    let (lm, ls) = log_sum(lip_terms);
    let floor = if ls.norm() > 0.0 { lm + ls.norm().ln() + (step * std::f64::consts::FRAC_1_SQRT_2).ln() } else { f64::NEG_INFINITY };
    let rhs = pref + ln_add(sup, tail);
    let allowance = ln_add(rhs + (1e-6f64).ln_1p(), pref + floor + (1e-3f64).ln());
    let holds = !lhs.ln_abs.is_finite() || lhs.ln_abs <= allowance;
    Ok(BoundChain { lhs_ln: lhs.ln_abs, rhs_ln: rhs, sup_ln: sup, tail_ln: tail, floor_ln: floor, holds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{Domain, Shape, SigmaSpec};
    use std::sync::Arc;

    #[test]
    fn full_plane_normalization() {
        let dx = 1.0 / 64.0;
        let h = 0.01;
        let n = 200;
        let ones = vec![C64::new(1.0, 0.0); n * n];
        let g = gaussian_convolve_block(&ones, n, n, -100, -100, dx, h).unwrap();
        let v = g.at_global(0, 0) * dx * dx / (2.0 * PI * h);
        assert!((v - 1.0).norm() < 1e-6, "{v}");
    }

    #[test]
    fn fft_path_matches_direct_quadrature() {
        let d = Arc::new(Domain::build(Shape::disk([-0.5, 0.0], 0.5), 64, SigmaSpec::Full).unwrap());
        let f = Field::from_fn(&d, |p| C64::new(p[0].cos(), p[1]));
        let h = 0.02;
        let g = transform_real(&f, h).unwrap();
        for &(i, j) in [(3usize, 5usize), (30, 30), (50, 12)].iter() {
            let x = d.lattice.coord(i, j);
            let direct = transform_real_direct(&f, h, x);
            let fast = g.at_global(d.lattice.i0 + i as i64, d.lattice.j0 + j as i64);
            assert!((direct - fast).norm() <= 1e-8 * direct.norm().max(1e-300), "{direct} {fast}");
            let c = transform_complex(&f, h, [C64::new(x[0], 0.0), C64::new(x[1], 0.0)]).unwrap().value().unwrap();
            assert!((c - direct).norm() <= 1e-10 * direct.norm());
        }
        assert!(transform_real(&f, 1e-4).is_err());
    }

    #[test]
    fn kernel_identity_holds() {
        let y = [-0.3, 0.2];
        let z = [C64::new(0.4, 0.3), C64::new(-0.2, 0.1)];
        let h = 0.05;
        let lhs = kernel(y, z, h);
        let rhs = kernel_identity_rhs(y, z, h);
        assert!((lhs - rhs).norm() < 1e-6 * lhs.norm(), "{lhs} {rhs}");
    }

    #[test]
    fn zero_field_transform_is_zero() {
        let d = Arc::new(Domain::build(Shape::disk([-0.5, 0.0], 0.4), 32, SigmaSpec::Full).unwrap());
        let f = Field::zeros(&d);
        let t = transform_complex(&f, 0.1, [C64::new(1.0, 0.5), C64::new(0.0, 0.0)]).unwrap();
        assert_eq!(t.value(), Some(C64::new(0.0, 0.0)));
        let b = bound_chain(&f, 0.1, [C64::new(1.0, 0.0), C64::new(0.0, 0.0)], 0.1, 2.0).unwrap();
        assert!(b.holds);
    }
}
