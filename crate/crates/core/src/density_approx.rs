//! Approximation of biharmonic functions on Ω₁ with vanishing Cauchy data on ∂Ω₁ ∩ ∂Ω₂
//! by Green potentials of Ω₂ with sources in Ω₂ \ Ω̄₁.

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use faer::linalg::solvers::SolveLstsq;
use faer::Mat;
use rayon::prelude::*;

use crate::biharmonic_core::{BoundaryData, DiscreteOperator, Field};
use crate::error::{invalid, Error, Result};
use crate::geometry::{norm, sub, Domain, NodeKind, Point};
use crate::numerics::C64;

/// Tikhonov weight relative to the squared spectral norm of the weighted source map.
pub const RIDGE: f64 = 1e-10;

/// Ω₁ ⊂ Ω₂ on a shared lattice with an ordered list of source nodes in Ω₂ \ Ω̄₁.
pub struct NestedDomains {
    pub inner: Arc<Domain>,
    pub outer: Arc<Domain>,
    pub op: Arc<DiscreteOperator>,
    /// Ω₁ interior index → Ω₂ interior index.
    pub map: Vec<usize>,
    /// Ω₂ interior indices of the sources, ordered so every prefix is spread out.
    pub sources: Vec<usize>,
    columns: Mutex<Vec<Vec<f64>>>,
}

impl std::fmt::Debug for NestedDomains {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NestedDomains").field("inner", &self.inner).field("outer", &self.outer).field("sources", &self.sources.len()).finish()
    }
}

fn global(d: &Domain, i: usize, j: usize) -> (i64, i64) {
    (d.lattice.i0 + i as i64, d.lattice.j0 + j as i64)
}

/// Distance from `p` to the boundary curve of `d`.
fn boundary_distance(d: &Domain, p: Point) -> f64 {
    norm(sub(p, d.shape.gamma(d.shape.closest_param(p))))
}

impl NestedDomains {
    /// Sources are the Ω₂ interior nodes outside Ω̄₁ whose distance to ∂Ω₁ lies in
    /// [1.5Δx, (1.5 + layers)Δx) and whose distance to ∂Ω₂ is at least 2Δx.
    pub fn new(inner: Arc<Domain>, outer: Arc<Domain>, layers: usize) -> Result<Self> {
        if !(1..=3).contains(&layers) {
            return invalid("source layers must be 1, 2 or 3");
        }
        if inner.dx() != outer.dx() {
            return invalid("nested domains must share the lattice spacing");
        }
        let index: HashMap<(i64, i64), usize> = outer.interior.iter().enumerate().map(|(k, &(i, j))| (global(&outer, i, j), k)).collect();
        let map: Vec<usize> = inner
            .interior
            .iter()
            .map(|&(i, j)| index.get(&global(&inner, i, j)).copied())
            .collect::<Option<_>>()
            .ok_or_else(|| Error::Invalid("an Ω₁ interior node is not an Ω₂ interior node".into()))?;
        let dx = outer.dx();
        let mut candidates: Vec<usize> = (0..outer.n_interior())
            .filter(|&k| {
                let p = outer.interior_point(k);
                if inner.shape.contains(p) {
                    return false;
                }
                let d1 = boundary_distance(&inner, p);
                d1 >= 1.5 * dx && d1 < (1.5 + layers as f64) * dx && boundary_distance(&outer, p) >= 2.0 * dx
            })
            .collect();
        if candidates.is_empty() {
            return invalid("source region Ω₂ \\ Ω̄₁ holds no admissible node");
        }
        // Farthest-point ordering from the lowest index.
        let pts: Vec<Point> = candidates.iter().map(|&k| outer.interior_point(k)).collect();
        let mut order = vec![0usize];
        let mut dist: Vec<f64> = pts.iter().map(|p| norm(sub(*p, pts[0]))).collect();
        while order.len() < pts.len() {
            let next = (0..pts.len()).filter(|m| !order.contains(m)).max_by(|a, b| dist[*a].total_cmp(&dist[*b]).then(b.cmp(a))).unwrap();
            order.push(next);
            for (m, p) in pts.iter().enumerate() {
                dist[m] = dist[m].min(norm(sub(*p, pts[next])));
            }
        }
        candidates = order.iter().map(|&m| candidates[m]).collect();
        let op = Arc::new(DiscreteOperator::assemble(&outer)?);
        Ok(Self { inner, outer, op, map, sources: candidates, columns: Mutex::new(Vec::new()) })
    }

    /// Ω₂ solution of Δ²w = −a with zero Cauchy data, a given on the source nodes.
    pub fn potential_outer(&self, density: &[C64]) -> Result<Field> {
        if density.len() > self.sources.len() {
            return invalid("density has more entries than source nodes");
        }
        let mut f = vec![C64::new(0.0, 0.0); self.outer.n_interior()];
        for (a, &k) in density.iter().zip(&self.sources) {
            f[k] = -a;
        }
        self.op.solve_dirichlet(&Field::new(&self.outer, f)?, &BoundaryData::zeros(&self.outer))
    }

    /// Restriction of an Ω₂ field to Ω₁, ghosts included when Ω₂ carries all of them.
    pub fn restrict(&self, w: &Field) -> Result<Field> {
        if w.domain.hash != self.outer.hash {
            return Err(Error::DomainMismatch);
        }
        let mut u = Field::new(&self.inner, self.map.iter().map(|&k| w.values[k]).collect())?;
        let o = &self.outer.lattice;
        let ghosts: Option<Vec<C64>> = self
            .inner
            .ghosts
            .iter()
            .map(|g| {
                let (gi, gj) = global(&self.inner, g.ij.0, g.ij.1);
                let (i, j) = (gi - o.i0, gj - o.j0);
                if i < 0 || j < 0 || i as usize >= o.nx || j as usize >= o.ny {
                    return None;
                }
                w.value_at(i as usize, j as usize)
            })
            .collect();
        u.ghosts = ghosts;
        Ok(u)
    }

    /// ∫_{Ω₂} G₂(·, y) a(y) dy restricted to Ω₁.
    pub fn green_potential(&self, density: &[C64]) -> Result<Field> {
        self.restrict(&self.potential_outer(density)?)
    }

    /// First `m` columns of the source-to-field map (values on Ω₁ interior nodes).
    pub fn columns(&self, m: usize) -> Result<Vec<Vec<f64>>> {
        if m > self.sources.len() {
            return invalid(format!("{m} sources requested, {} available", self.sources.len()));
        }
        let have = self.columns.lock().unwrap().len();
        if have < m {
            let fresh: Vec<Vec<f64>> = (have..m)
                .into_par_iter()
                .map(|s| {
                    let mut a = vec![C64::new(0.0, 0.0); s + 1];
                    a[s] = C64::new(1.0, 0.0);
                    let w = self.potential_outer(&a)?;
                    Ok(self.map.iter().map(|&k| w.values[k].re).collect())
                })
                .collect::<Result<_>>()?;
            self.columns.lock().unwrap().extend(fresh);
        }
        Ok(self.columns.lock().unwrap()[..m].to_vec())
    }
}

/// Fitted source density and its L²(Ω₁) misfit.
#[derive(Clone, Debug)]
pub struct Approximation {
    pub density: Vec<C64>,
    pub residual: f64,
    pub relative: f64,
    pub ridge: f64,
}

/// ‖Φa − u‖²_{L²(Ω₁)} + λ‖a‖².
pub fn objective(nested: &NestedDomains, target: &Field, density: &[C64], lambda: f64) -> Result<f64> {
    let cols = nested.columns(density.len())?;
    let w = &nested.inner.weights;
    let mut r = 0.0;
    for k in 0..nested.inner.n_interior() {
        let v: C64 = cols.iter().zip(density).map(|(c, a)| a * c[k]).sum();
        r += w[k] * (v - target.values[k]).norm_sqr();
    }
    Ok(r + lambda * density.iter().map(|a| a.norm_sqr()).sum::<f64>())
}

/// W^{1/2}Φ for the first `m` sources (L²(Ω₁)-weighted rows).
fn weighted_matrix(nested: &NestedDomains, m: usize) -> Result<Mat<f64>> {
    let cols = nested.columns(m)?;
    let sw: Vec<f64> = nested.inner.weights.iter().map(|w| w.sqrt()).collect();
    Ok(Mat::<f64>::from_fn(nested.inner.n_interior(), m, |i, j| cols[j][i] * sw[i]))
}

/// Ridge weight λ = 10⁻¹⁰‖W^{1/2}Φ‖₂² for the first `m` sources.
pub fn ridge(nested: &NestedDomains, m: usize) -> Result<f64> {
    let s = weighted_matrix(nested, m)?.singular_values().map_err(|e| Error::NoConvergence(format!("singular values of the source map: {e:?}")))?;
    Ok(RIDGE * s.iter().fold(0.0f64, |a, v| a.max(*v)).powi(2))
}

/// Tikhonov least-squares fit of `target` by the first `m` source potentials, solved by
/// QR of the stacked system [W^{1/2}Φ; √λ I].
pub fn approximate(nested: &NestedDomains, target: &Field, m: usize) -> Result<Approximation> {
    if target.domain.hash != nested.inner.hash {
        return Err(Error::DomainMismatch);
    }
    if m == 0 || m > nested.sources.len() {
        return invalid(format!("source count {m} outside 1..={}", nested.sources.len()));
    }
    let cols = nested.columns(m)?;
    let lambda = ridge(nested, m)?;
    let n = nested.inner.n_interior();
    let sw: Vec<f64> = nested.inner.weights.iter().map(|w| w.sqrt()).collect();
    let phi = weighted_matrix(nested, m)?;
    let a = Mat::<f64>::from_fn(n + m, m, |i, j| if i < n { phi[(i, j)] } else if i - n == j { lambda.sqrt() } else { 0.0 });
    let b = Mat::<f64>::from_fn(n + m, 2, |i, j| {
        if i < n {
            let v = target.values[i];
            sw[i] * if j == 0 { v.re } else { v.im }
        } else {
            0.0
        }
    });
    let x = a.qr().solve_lstsq(&b);
    let density: Vec<C64> = (0..m).map(|j| C64::new(x[(j, 0)], x[(j, 1)])).collect();
    let mut r2 = 0.0;
    let mut t2 = 0.0;
    for k in 0..n {
        let v: C64 = cols.iter().zip(&density).map(|(c, a)| a * c[k]).sum();
        r2 += nested.inner.weights[k] * (v - target.values[k]).norm_sqr();
        t2 += nested.inner.weights[k] * target.values[k].norm_sqr();
    }
    let residual = r2.sqrt();
    let relative = if t2 > 0.0 { residual / t2.sqrt() } else { residual };
    Ok(Approximation { density, residual, relative, ridge: lambda })
}

/// Residual of `approximate` for each source count in `counts`.
pub fn density_trend(nested: &NestedDomains, target: &Field, counts: &[usize]) -> Result<Vec<(usize, Approximation)>> {
    counts.iter().map(|&m| Ok((m, approximate(nested, target, m)?))).collect()
}

/// True when every Ω₁ interior node is also interior to Ω₂ and no source touches Ω̄₁.
pub fn check_nesting(nested: &NestedDomains) -> bool {
    let inner = &nested.inner;
    nested.sources.iter().all(|&k| {
        let (i, j) = nested.outer.interior[k];
        let (gi, gj) = global(&nested.outer, i, j);
        let (a, b) = (gi - inner.lattice.i0, gj - inner.lattice.j0);
        let outside_lattice = a < 0 || b < 0 || a as usize >= inner.lattice.nx || b as usize >= inner.lattice.ny;
        outside_lattice || !matches!(inner.kind(a as usize, b as usize), NodeKind::Interior(_))
    }) && nested.map.len() == inner.n_interior()
}
