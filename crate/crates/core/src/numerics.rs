//! Small dense helpers: interpolation weights, one-dimensional Hermite-Birkhoff
//! weights, least-squares fits, and a stable content hash.

use num_complex::Complex64;

pub type C64 = Complex64;

pub const I: C64 = C64 { re: 0.0, im: 1.0 };

/// Solves `m x = b` in place by Gaussian elimination with partial pivoting.
/// Returns `None` when a pivot vanishes.
pub fn dense_solve(mut m: Vec<Vec<f64>>, mut b: Vec<f64>) -> Option<Vec<f64>> {
    let n = b.len();
    for col in 0..n {
        let piv = (col..n).max_by(|&i, &j| m[i][col].abs().total_cmp(&m[j][col].abs()))?;
        if m[piv][col].abs() < 1e-300 {
            return None;
        }
        m.swap(col, piv);
        b.swap(col, piv);
        for row in col + 1..n {
            let f = m[row][col] / m[col][col];
            if f != 0.0 {
                for k in col..n {
                    m[row][k] -= f * m[col][k];
                }
                b[row] -= f * b[col];
            }
        }
    }
    let mut x = vec![0.0; n];
    for row in (0..n).rev() {
        let mut s = b[row];
        for k in row + 1..n {
            s -= m[row][k] * x[k];
        }
        x[row] = s / m[row][row];
    }
    Some(x)
}

/// A linear constraint on a univariate polynomial: the `order`-th derivative at `s`.
#[derive(Clone, Copy, Debug)]
pub struct Constraint {
    pub s: f64,
    pub order: usize,
}

fn falling(p: usize, k: usize) -> f64 {
    (0..k).map(|q| (p - q) as f64).product()
}

fn monomial_derivative(p: usize, order: usize, s: f64) -> f64 {
    if order > p {
        0.0
    } else {
        falling(p, order) * s.powi((p - order) as i32)
    }
}

/// Weights `w` such that `q^(order)(at) = sum_k w_k * c_k` for the unique polynomial `q`
/// of degree `constraints.len() - 1` matching the constraint values `c_k`.
/// `scale` is a characteristic spacing used only for conditioning.
pub fn birkhoff_weights(constraints: &[Constraint], at: f64, order: usize, scale: f64) -> Vec<f64> {
    let n = constraints.len();
    // Work in scaled coordinates s/scale; derivatives pick up scale^-order.
    let mt: Vec<Vec<f64>> = (0..n)
        .map(|p| {
            constraints
                .iter()
                .map(|c| monomial_derivative(p, c.order, c.s / scale) / scale.powi(c.order as i32))
                .collect()
        })
        .collect();
    let rhs: Vec<f64> = (0..n)
        .map(|p| monomial_derivative(p, order, at / scale) / scale.powi(order as i32))
        .collect();
    dense_solve(mt, rhs).expect("degenerate Hermite-Birkhoff constraint set")
}

/// One-dimensional Lagrange weights on the integer nodes `0..n` at fractional position `t`.
pub fn lagrange_weights(n: usize, t: f64) -> Vec<f64> {
    (0..n)
        .map(|k| {
            (0..n)
                .filter(|&m| m != k)
                .map(|m| (t - m as f64) / (k as f64 - m as f64))
                .product()
        })
        .collect()
}

/// Lagrange weights for arbitrary distinct nodes.
pub fn lagrange_weights_at(nodes: &[f64], t: f64) -> Vec<f64> {
    (0..nodes.len())
        .map(|k| {
            nodes
                .iter()
                .enumerate()
                .filter(|&(m, _)| m != k)
                .map(|(_, &xm)| (t - xm) / (nodes[k] - xm))
                .product()
        })
        .collect()
}

/// Ordinary least squares of `y` on the given regressor columns; returns coefficients.
pub fn least_squares(columns: &[Vec<f64>], y: &[f64]) -> Option<Vec<f64>> {
    let p = columns.len();
    let mut ata = vec![vec![0.0; p]; p];
    let mut atb = vec![0.0; p];
    for i in 0..p {
        for j in 0..p {
            ata[i][j] = columns[i].iter().zip(&columns[j]).map(|(a, b)| a * b).sum();
        }
        atb[i] = columns[i].iter().zip(y).map(|(a, b)| a * b).sum();
    }
    dense_solve(ata, atb)
}

/// Slope of the least-squares line through `(x, y)`.
pub fn fit_slope(x: &[f64], y: &[f64]) -> f64 {
    let ones = vec![1.0; x.len()];
    least_squares(&[ones, x.to_vec()], y).map(|c| c[1]).unwrap_or(f64::NAN)
}

/// Runs dense and sparse factorizations single-threaded so results do not depend on the
/// worker count.
pub fn sequential_linear_algebra() {
    faer::set_global_parallelism(faer::Par::Seq);
}

/// 64-bit FNV-1a; stable across platforms and toolchains, used for domain identity.
pub fn fnv1a(bytes: &[u8]) -> u64 {
    let mut h: u64 = 0xcbf2_9ce4_8422_2325;
    for &b in bytes {
        h ^= b as u64;
        h = h.wrapping_mul(0x0000_0100_0000_01b3);
    }
    h
}

/// Gauss-Legendre nodes and weights on [-1, 1] (five points).
pub const GAUSS5: [(f64, f64); 5] = [
    (-0.906_179_845_938_664, 0.236_926_885_056_189_1),
    (-0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (0.0, 0.568_888_888_888_888_9),
    (0.538_469_310_105_683, 0.478_628_670_499_366_5),
    (0.906_179_845_938_664, 0.236_926_885_056_189_1),
];

/// Gauss-Hermite nodes and weights for ∫e^{−s²}g(s)ds, by Newton iteration on the
/// orthonormal Hermite recurrence.
pub fn gauss_hermite(n: usize) -> Vec<(f64, f64)> {
    let pim4 = std::f64::consts::PI.powf(-0.25);
    let mut out = vec![(0.0, 0.0); n];
    let mut z = 0.0;
    for i in 0..n.div_ceil(2) {
        let nf = n as f64;
        z = match i {
            0 => (2.0 * nf + 1.0).sqrt() - 1.85575 * (2.0 * nf + 1.0).powf(-1.0 / 6.0),
            1 => z - 1.14 * nf.powf(0.426) / z,
            2 => 1.86 * z - 0.86 * out[0].0,
            3 => 1.91 * z - 0.91 * out[1].0,
            _ => 2.0 * z - out[i - 2].0,
        };
        let mut pp = 0.0;
        for _ in 0..100 {
            let mut p1 = pim4;
            let mut p2 = 0.0;
            for j in 0..n {
                let p3 = p2;
                p2 = p1;
                let jf = j as f64;
                p1 = z * (2.0 / (jf + 1.0)).sqrt() * p2 - (jf / (jf + 1.0)).sqrt() * p3;
            }
            pp = (2.0 * nf).sqrt() * p2;
            let step = p1 / pp;
            z -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        out[i] = (z, 2.0 / (pp * pp));
        out[n - 1 - i] = (-z, 2.0 / (pp * pp));
    }
    out.reverse();
    out
}

/// Quintic smoothstep on [0, 1], clamped outside; C² at both ends.
pub fn smoothstep5(t: f64) -> f64 {
    let t = t.clamp(0.0, 1.0);
    t * t * t * (t * (6.0 * t - 15.0) + 10.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gauss_hermite_moments() {
        for n in [1, 4, 6, 9] {
            let q = gauss_hermite(n);
            let m0: f64 = q.iter().map(|(_, w)| w).sum();
            assert!((m0 - std::f64::consts::PI.sqrt()).abs() < 1e-13);
            if n >= 2 {
                let m2: f64 = q.iter().map(|(x, w)| w * x * x).sum();
                assert!((m2 - 0.5 * std::f64::consts::PI.sqrt()).abs() < 1e-13);
            }
            assert!(q.windows(2).all(|p| p[0].0 < p[1].0));
        }
    }

    #[test]
    fn birkhoff_reproduces_cubic_extrapolation() {
        let cs = [
            Constraint { s: 0.0, order: 0 },
            Constraint { s: 0.0, order: 1 },
            Constraint { s: -1.0, order: 0 },
            Constraint { s: -2.0, order: 0 },
        ];
        let q = |s: f64| 1.0 + 2.0 * s - 0.5 * s * s + 0.25 * s * s * s;
        let dq = |s: f64| 2.0 - s + 0.75 * s * s;
        let vals = [q(0.0), dq(0.0), q(-1.0), q(-2.0)];
        let w = birkhoff_weights(&cs, 0.7, 0, 1.0);
        let got: f64 = w.iter().zip(vals).map(|(a, b)| a * b).sum();
        assert!((got - q(0.7)).abs() < 1e-12);
    }

    #[test]
    fn lagrange_partition_of_unity() {
        let w = lagrange_weights(6, 2.37);
        assert!((w.iter().sum::<f64>() - 1.0).abs() < 1e-13);
    }

    #[test]
    fn smoothstep_endpoints() {
        assert_eq!(smoothstep5(0.0), 0.0);
        assert_eq!(smoothstep5(1.0), 1.0);
        assert!((smoothstep5(0.5) - 0.5).abs() < 1e-15);
    }
}
