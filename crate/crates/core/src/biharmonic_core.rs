//! Clamped biharmonic Dirichlet problem on grid-embedded domains: fields,
//! Cauchy data, the 13-point operator with a ghost-extrapolation closure,
//! sparse LU solves, discrete Green kernels and discrete Sobolev norms.

use std::io::{Read, Write};
use std::sync::Arc;

use faer::prelude::Solve;
use faer::sparse::linalg::solvers::Lu;
use faer::sparse::{SparseColMat, Triplet};
use faer::Mat;

use crate::error::{invalid, Error, Result};
use crate::geometry::{Domain, Label, NodeKind, Point, CLOSURE_PROBES, PROBE_BLOCK, TRACE_PROBES};
use crate::numerics::{birkhoff_weights, lagrange_weights, Constraint, C64};

/// 13-point bilaplacian stencil (offsets and weights, to be divided by Δx⁴).
pub const STENCIL13: [(i64, i64, f64); 13] = [
    (0, 0, 20.0),
    (1, 0, -8.0),
    (-1, 0, -8.0),
    (0, 1, -8.0),
    (0, -1, -8.0),
    (1, 1, 2.0),
    (1, -1, 2.0),
    (-1, 1, 2.0),
    (-1, -1, 2.0),
    (2, 0, 1.0),
    (-2, 0, 1.0),
    (0, 2, 1.0),
    (0, -2, 1.0),
];

/// Relative residual targeted by every solve.
pub const SOLVER_TOL: f64 = 1e-9;

/// Condition estimates above this flag a numerically singular operator.
pub const CONDITION_LIMIT: f64 = 1e14;

/// Complex grid function on the interior nodes of a domain, optionally carrying
/// values on the ghost layer (solutions of the discrete problem always do).
#[derive(Clone, Debug)]
pub struct Field {
    pub domain: Arc<Domain>,
    pub values: Vec<C64>,
    pub ghosts: Option<Vec<C64>>,
}

impl Field {
    pub fn zeros(domain: &Arc<Domain>) -> Self {
        Self { domain: domain.clone(), values: vec![C64::new(0.0, 0.0); domain.n_interior()], ghosts: None }
    }

    pub fn new(domain: &Arc<Domain>, values: Vec<C64>) -> Result<Self> {
        if values.len() != domain.n_interior() {
            return invalid(format!("field has {} values, domain has {} interior nodes", values.len(), domain.n_interior()));
        }
        Ok(Self { domain: domain.clone(), values, ghosts: None })
    }

    /// Samples `f` on interior and ghost nodes.
    pub fn from_fn(domain: &Arc<Domain>, f: impl Fn(Point) -> C64) -> Self {
        let values = (0..domain.n_interior()).map(|k| f(domain.interior_point(k))).collect();
        let ghosts = (0..domain.n_ghost()).map(|g| f(domain.ghost_point(g))).collect();
        Self { domain: domain.clone(), values, ghosts: Some(ghosts) }
    }

    pub fn from_real_fn(domain: &Arc<Domain>, f: impl Fn(Point) -> f64) -> Self {
        Self::from_fn(domain, |p| C64::new(f(p), 0.0))
    }

    pub fn same_domain(&self, other: &Field) -> bool {
        self.domain.hash == other.domain.hash && self.values.len() == other.values.len()
    }

    pub fn without_ghosts(mut self) -> Self {
        self.ghosts = None;
        self
    }

    pub fn value_at(&self, i: usize, j: usize) -> Option<C64> {
        match self.domain.kind(i, j) {
            NodeKind::Interior(k) => Some(self.values[k]),
            NodeKind::Ghost(g) => self.ghosts.as_ref().map(|v| v[g]),
            NodeKind::Exterior => None,
        }
    }

    pub fn has_value(&self, i: usize, j: usize) -> bool {
        match self.domain.kind(i, j) {
            NodeKind::Interior(_) => true,
            NodeKind::Ghost(_) => self.ghosts.is_some(),
            NodeKind::Exterior => false,
        }
    }

    pub fn scale(&self, a: C64) -> Field {
        Field {
            domain: self.domain.clone(),
            values: self.values.iter().map(|v| v * a).collect(),
            ghosts: self.ghosts.as_ref().map(|g| g.iter().map(|v| v * a).collect()),
        }
    }

    /// a·self + b·other; ghosts kept only when both carry them.
    pub fn combine(&self, a: C64, other: &Field, b: C64) -> Result<Field> {
        if !self.same_domain(other) {
            return Err(Error::DomainMismatch);
        }
        let ghosts = match (&self.ghosts, &other.ghosts) {
            (Some(x), Some(y)) => Some(x.iter().zip(y).map(|(p, q)| a * p + b * q).collect()),
            _ => None,
        };
        Ok(Field {
            domain: self.domain.clone(),
            values: self.values.iter().zip(&other.values).map(|(p, q)| a * p + b * q).collect(),
            ghosts,
        })
    }

    pub fn max_abs(&self) -> f64 {
        self.values.iter().map(|v| v.norm()).fold(0.0, f64::max)
    }

    /// Evaluates a finite-difference derivative ∂ₓ^ox ∂ᵧ^oy at interior node `k`.
    pub fn derivative(&self, k: usize, ox: usize, oy: usize) -> Option<C64> {
        let (i, j) = self.domain.interior[k];
        let terms = derivative_stencil(&|a, b| self.has_value_offset(i, j, a, b), ox, oy)?;
        let h = self.domain.dx();
        let mut acc = C64::new(0.0, 0.0);
        for ((a, b), w) in terms {
            let (p, q) = self.domain.lattice.offset(i, j, a, b)?;
            acc += self.value_at(p, q)? * w;
        }
        Some(acc / h.powi((ox + oy) as i32))
    }

    fn has_value_offset(&self, i: usize, j: usize, di: i64, dj: i64) -> bool {
        self.domain.lattice.offset(i, j, di, dj).is_some_and(|(p, q)| self.has_value(p, q))
    }

    /// Value at an arbitrary point by tensor Lagrange interpolation of degree `n − 1`
    /// on an n×n block of available nodes; the block is shifted inward when needed.
    pub fn interpolate(&self, p: Point, n: usize) -> Option<C64> {
        let l = &self.domain.lattice;
        let f = l.locate(p);
        let base = [f[0].floor() as i64 - (n as i64 - 1) / 2, f[1].floor() as i64 - (n as i64 - 1) / 2];
        let mut shifts: Vec<(i64, i64)> = Vec::new();
        for r in 0..=(n as i64 / 2 + 1) {
            for sy in -r..=r {
                for sx in -r..=r {
                    if sx.abs().max(sy.abs()) == r {
                        shifts.push((sx, sy));
                    }
                }
            }
        }
        for (sx, sy) in shifts {
            let bi = base[0] + sx;
            let bj = base[1] + sy;
            if bi < 0 || bj < 0 || bi as usize + n > l.nx || bj as usize + n > l.ny {
                continue;
            }
            let ok = (0..n).all(|b| (0..n).all(|a| self.has_value(bi as usize + a, bj as usize + b)));
            if !ok {
                continue;
            }
            let wx = lagrange_weights(n, f[0] - bi as f64);
            let wy = lagrange_weights(n, f[1] - bj as f64);
            let mut acc = C64::new(0.0, 0.0);
            for b in 0..n {
                for a in 0..n {
                    acc += self.value_at(bi as usize + a, bj as usize + b).unwrap() * (wx[a] * wy[b]);
                }
            }
            return Some(acc);
        }
        None
    }

    pub fn to_csv(&self) -> String {
        let mut s = String::from("x,y,re,im\n");
        for (k, v) in self.values.iter().enumerate() {
            let p = self.domain.interior_point(k);
            s.push_str(&format!("{},{},{},{}\n", p[0], p[1], v.re, v.im));
        }
        s
    }

    /// Binary dump: magic, lattice header, domain hash, then (i, j, re, im) per interior node.
    pub fn write_binary(&self, mut w: impl Write) -> Result<()> {
        let l = &self.domain.lattice;
        w.write_all(b"CGOBIHF1")?;
        w.write_all(&(l.nx as u64).to_le_bytes())?;
        w.write_all(&(l.ny as u64).to_le_bytes())?;
        w.write_all(&l.dx.to_le_bytes())?;
        w.write_all(&l.i0.to_le_bytes())?;
        w.write_all(&l.j0.to_le_bytes())?;
        w.write_all(&self.domain.hash.to_le_bytes())?;
        w.write_all(&(self.values.len() as u64).to_le_bytes())?;
        for (k, v) in self.values.iter().enumerate() {
            let (i, j) = self.domain.interior[k];
            w.write_all(&(i as u32).to_le_bytes())?;
            w.write_all(&(j as u32).to_le_bytes())?;
            w.write_all(&v.re.to_le_bytes())?;
            w.write_all(&v.im.to_le_bytes())?;
        }
        Ok(())
    }

    pub fn read_binary(domain: &Arc<Domain>, mut r: impl Read) -> Result<Field> {
        let mut magic = [0u8; 8];
        r.read_exact(&mut magic)?;
        if &magic != b"CGOBIHF1" {
            return Err(Error::Parse("bad field dump magic".into()));
        }
        let mut b8 = [0u8; 8];
        let mut next = |r: &mut dyn Read| -> Result<[u8; 8]> {
            r.read_exact(&mut b8)?;
            Ok(b8)
        };
        let nx = u64::from_le_bytes(next(&mut r)?);
        let ny = u64::from_le_bytes(next(&mut r)?);
        let _dx = f64::from_le_bytes(next(&mut r)?);
        let _i0 = i64::from_le_bytes(next(&mut r)?);
        let _j0 = i64::from_le_bytes(next(&mut r)?);
        let hash = u64::from_le_bytes(next(&mut r)?);
        let n = u64::from_le_bytes(next(&mut r)?) as usize;
        if hash != domain.hash || nx as usize != domain.lattice.nx || ny as usize != domain.lattice.ny || n != domain.n_interior() {
            return Err(Error::DomainMismatch);
        }
        let mut values = vec![C64::new(0.0, 0.0); n];
        let mut b4 = [0u8; 4];
        for _ in 0..n {
            r.read_exact(&mut b4)?;
            let i = u32::from_le_bytes(b4) as usize;
            r.read_exact(&mut b4)?;
            let j = u32::from_le_bytes(b4) as usize;
            let re = f64::from_le_bytes(next(&mut r)?);
            let im = f64::from_le_bytes(next(&mut r)?);
            match domain.kind(i, j) {
                NodeKind::Interior(k) => values[k] = C64::new(re, im),
                _ => return Err(Error::Parse(format!("node ({i}, {j}) is not interior"))),
            }
        }
        Field::new(domain, values)
    }
}

/// One-dimensional difference weights of the given derivative order; prefers the
/// central stencil and falls back to one-sided second-order stencils.
fn stencil_1d(order: usize, avail: &dyn Fn(i64) -> bool) -> Option<Vec<(i64, f64)>> {
    let central: &[(i64, f64)] = match order {
        0 => &[(0, 1.0)],
        1 => &[(-1, -0.5), (1, 0.5)],
        2 => &[(-1, 1.0), (0, -2.0), (1, 1.0)],
        3 => &[(-2, -0.5), (-1, 1.0), (1, -1.0), (2, 0.5)],
        _ => return None,
    };
    if central.iter().all(|(o, _)| avail(*o)) {
        return Some(central.to_vec());
    }
    let forward: &[(i64, f64)] = match order {
        1 => &[(0, -1.5), (1, 2.0), (2, -0.5)],
        2 => &[(0, 2.0), (1, -5.0), (2, 4.0), (3, -1.0)],
        3 => &[(0, -2.5), (1, 9.0), (2, -12.0), (3, 7.0), (4, -1.5)],
        _ => return None,
    };
    if forward.iter().all(|(o, _)| avail(*o)) {
        return Some(forward.to_vec());
    }
    let sign = if order % 2 == 1 { -1.0 } else { 1.0 };
    let backward: Vec<(i64, f64)> = forward.iter().map(|(o, w)| (-o, sign * w)).collect();
    backward.iter().all(|(o, _)| avail(*o)).then_some(backward)
}

/// Tensor difference stencil for ∂ₓ^ox ∂ᵧ^oy in units of Δx^(ox+oy).
pub fn derivative_stencil(avail: &dyn Fn(i64, i64) -> bool, ox: usize, oy: usize) -> Option<Vec<((i64, i64), f64)>> {
    let sx = stencil_1d(ox, &|a| avail(a, 0))?;
    let mut out = Vec::new();
    for (a, wa) in sx {
        let sy = stencil_1d(oy, &|b| avail(a, b))?;
        for (b, wb) in sy {
            out.push(((a, b), wa * wb));
        }
    }
    Some(out)
}

/// Cauchy pair (g₀, g₁) on the boundary nodes and on the anchor points of the ghost layer.
#[derive(Clone, Debug)]
pub struct BoundaryData {
    pub domain: Arc<Domain>,
    pub nodes: Vec<[C64; 2]>,
    pub anchors: Vec<[C64; 2]>,
    pub sigma_supported: bool,
}

impl BoundaryData {
    pub fn zeros(domain: &Arc<Domain>) -> Self {
        let z = [C64::new(0.0, 0.0); 2];
        Self { domain: domain.clone(), nodes: vec![z; domain.boundary.len()], anchors: vec![z; domain.n_ghost()], sigma_supported: true }
    }

    /// Evaluates `f(point, outward normal) = (g₀, g₁)` at boundary nodes and anchors.
    pub fn from_fn(domain: &Arc<Domain>, f: impl Fn(Point, Point) -> [C64; 2]) -> Self {
        let nodes = domain.boundary.iter().map(|b| f(b.point, b.normal)).collect();
        let anchors = domain.ghosts.iter().map(|g| f(g.anchor, g.normal)).collect();
        Self { domain: domain.clone(), nodes, anchors, sigma_supported: false }
    }

    /// Cauchy data of a smooth function given its value and gradient.
    pub fn from_function(domain: &Arc<Domain>, u: impl Fn(Point) -> (C64, [C64; 2])) -> Self {
        Self::from_fn(domain, |p, n| {
            let (v, g) = u(p);
            [v, g[0] * n[0] + g[1] * n[1]]
        })
    }

    /// Like [`from_fn`], but forces the data to vanish exactly at every Γ point and marks it Σ-supported.
    pub fn sigma_supported_from_fn(domain: &Arc<Domain>, f: impl Fn(Point, Point) -> [C64; 2]) -> Self {
        let z = [C64::new(0.0, 0.0); 2];
        let nodes = domain.boundary.iter().map(|b| if b.label == Label::Sigma { f(b.point, b.normal) } else { z }).collect();
        let anchors = domain.ghosts.iter().map(|g| if g.label == Label::Sigma { f(g.anchor, g.normal) } else { z }).collect();
        Self { domain: domain.clone(), nodes, anchors, sigma_supported: true }
    }

    /// Checks the support flag against the labels.
    pub fn validate(&self) -> Result<()> {
        if self.nodes.len() != self.domain.boundary.len() || self.anchors.len() != self.domain.n_ghost() {
            return invalid("boundary data size does not match its domain");
        }
        if self.sigma_supported {
            let zero = |v: &[C64; 2]| v[0] == C64::new(0.0, 0.0) && v[1] == C64::new(0.0, 0.0);
            let bad_node = self.domain.boundary.iter().zip(&self.nodes).any(|(b, v)| b.label == Label::Gamma && !zero(v));
            let bad_anchor = self.domain.ghosts.iter().zip(&self.anchors).any(|(g, v)| g.label == Label::Gamma && !zero(v));
            if bad_node || bad_anchor {
                return invalid("data flagged Σ-supported does not vanish on Γ");
            }
        }
        Ok(())
    }

    pub fn scale(&self, a: C64) -> Self {
        Self {
            domain: self.domain.clone(),
            nodes: self.nodes.iter().map(|v| [v[0] * a, v[1] * a]).collect(),
            anchors: self.anchors.iter().map(|v| [v[0] * a, v[1] * a]).collect(),
            sigma_supported: self.sigma_supported,
        }
    }

    pub fn combine(&self, a: C64, other: &Self, b: C64) -> Result<Self> {
        if self.domain.hash != other.domain.hash {
            return Err(Error::DomainMismatch);
        }
        let mix = |x: &[[C64; 2]], y: &[[C64; 2]]| -> Vec<[C64; 2]> {
            x.iter().zip(y).map(|(p, q)| [a * p[0] + b * q[0], a * p[1] + b * q[1]]).collect()
        };
        Ok(Self {
            domain: self.domain.clone(),
            nodes: mix(&self.nodes, &other.nodes),
            anchors: mix(&self.anchors, &other.anchors),
            sigma_supported: self.sigma_supported && other.sigma_supported,
        })
    }

    pub fn scale_of(&self) -> f64 {
        self.nodes.iter().chain(&self.anchors).map(|v| v[0].norm().max(v[1].norm())).fold(0.0, f64::max)
    }
}

/// Row of a sparse matrix in compressed form.
#[derive(Clone, Debug, Default)]
struct Csr {
    ptr: Vec<usize>,
    col: Vec<usize>,
    val: Vec<f64>,
}

impl Csr {
    fn from_rows(rows: &[Vec<(usize, f64)>]) -> Self {
        let mut c = Csr { ptr: vec![0], ..Default::default() };
        for r in rows {
            let mut r = r.clone();
            r.sort_by_key(|e| e.0);
            let mut merged: Vec<(usize, f64)> = Vec::with_capacity(r.len());
            for (j, v) in r {
                match merged.last_mut() {
                    Some(last) if last.0 == j => last.1 += v,
                    _ => merged.push((j, v)),
                }
            }
            for (j, v) in merged {
                c.col.push(j);
                c.val.push(v);
            }
            c.ptr.push(c.col.len());
        }
        c
    }

    fn matvec(&self, x: &[f64]) -> Vec<f64> {
        (0..self.ptr.len() - 1)
            .map(|r| (self.ptr[r]..self.ptr[r + 1]).map(|k| self.val[k] * x[self.col[k]]).sum())
            .collect()
    }

    fn norm1(&self, n: usize) -> f64 {
        let mut cols = vec![0.0; n];
        for k in 0..self.col.len() {
            cols[self.col[k]] += self.val[k].abs();
        }
        cols.into_iter().fold(0.0, f64::max)
    }
}

/// Extrapolation rule of one ghost node: u_g = c₀g₀ + c₁g₁ + Σ probe weights · u.
#[derive(Clone, Debug)]
struct GhostRule {
    data: [f64; 2],
    terms: Vec<(usize, f64)>,
}

/// Assembled and factorized discrete operator Δ² (+ lower-order terms) with
/// the clamped closure. Unknowns: interior nodes, then ghost nodes.
pub struct DiscreteOperator {
    pub domain: Arc<Domain>,
    csr: Csr,
    lu: Lu<usize, f64>,
    rules: Vec<GhostRule>,
    pub condition_estimate: f64,
}

impl std::fmt::Debug for DiscreteOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("DiscreteOperator")
            .field("unknowns", &self.n_unknowns())
            .field("nnz", &self.csr.col.len())
            .field("condition_estimate", &self.condition_estimate)
            .finish()
    }
}

/// Column index of lattice node (i, j) in the unknown vector.
fn column(domain: &Domain, i: usize, j: usize) -> Option<usize> {
    match domain.kind(i, j) {
        NodeKind::Interior(k) => Some(k),
        NodeKind::Ghost(g) => Some(domain.n_interior() + g),
        NodeKind::Exterior => None,
    }
}

/// Interpolation terms (column, weight) for a point from the probe block used by the closure.
pub(crate) fn probe_terms(domain: &Domain, p: Point) -> Vec<(usize, f64)> {
    let l = &domain.lattice;
    let n = PROBE_BLOCK;
    let f = l.locate(p);
    let bi = f[0].floor() as i64 - (n as i64 / 2 - 1);
    let bj = f[1].floor() as i64 - (n as i64 / 2 - 1);
    let wx = lagrange_weights(n, f[0] - bi as f64);
    let wy = lagrange_weights(n, f[1] - bj as f64);
    let mut out = Vec::with_capacity(n * n);
    for b in 0..n {
        for a in 0..n {
            let (i, j) = l.offset(0, 0, bi + a as i64, bj + b as i64).expect("probe outside lattice");
            let col = column(domain, i, j).expect("probe block leaves the closure set");
            out.push((col, wx[a] * wy[b]));
        }
    }
    out
}

fn ghost_rules(domain: &Domain) -> Vec<GhostRule> {
    let dx = domain.dx();
    let mut cons = vec![Constraint { s: 0.0, order: 0 }, Constraint { s: 0.0, order: 1 }];
    cons.extend(CLOSURE_PROBES.iter().map(|k| Constraint { s: -k * dx, order: 0 }));
    domain
        .ghosts
        .iter()
        .map(|g| {
            let w = birkhoff_weights(&cons, g.distance, 0, dx);
            let mut terms = Vec::new();
            for (m, k) in CLOSURE_PROBES.iter().enumerate() {
                let p = [g.anchor[0] - k * dx * g.normal[0], g.anchor[1] - k * dx * g.normal[1]];
                for (c, v) in probe_terms(domain, p) {
                    terms.push((c, w[2 + m] * v));
                }
            }
            GhostRule { data: [w[0], w[1]], terms }
        })
        .collect()
}

/// Extra interior-row terms (column offsets and weights) contributed by a perturbation.
pub type RowTerms = Vec<((i64, i64), f64)>;

impl DiscreteOperator {
    /// Assembles and factorizes the clamped discrete bilaplacian.
    pub fn assemble(domain: &Arc<Domain>) -> Result<Self> {
        Self::assemble_with(domain, |_| Vec::new())
    }

    /// Assembles Δ² plus lower-order interior terms supplied per interior node.
    pub fn assemble_with(domain: &Arc<Domain>, extra: impl Fn(usize) -> RowTerms) -> Result<Self> {
        let n_int = domain.n_interior();
        let n = n_int + domain.n_ghost();
        let dx = domain.dx();
        let inv4 = 1.0 / dx.powi(4);
        let mut rows: Vec<Vec<(usize, f64)>> = Vec::with_capacity(n);
        for (k, &(i, j)) in domain.interior.iter().enumerate() {
            let mut row = Vec::with_capacity(16);
            for &(di, dj, w) in STENCIL13.iter() {
                let (a, b) = domain.lattice.offset(i, j, di, dj).unwrap();
                row.push((column(domain, a, b).expect("stencil leaves closure set"), w * inv4));
            }
            for ((di, dj), w) in extra(k) {
                let (a, b) = domain.lattice.offset(i, j, di, dj).unwrap();
                let c = column(domain, a, b).ok_or_else(|| Error::Invalid("perturbation stencil leaves the closure set".into()))?;
                row.push((c, w));
            }
            rows.push(row);
        }
        let rules = ghost_rules(domain);
        for (g, rule) in rules.iter().enumerate() {
            let mut row = vec![(n_int + g, inv4)];
            row.extend(rule.terms.iter().map(|&(c, w)| (c, -w * inv4)));
            rows.push(row);
        }
        let csr = Csr::from_rows(&rows);
        let mut triplets = Vec::with_capacity(csr.col.len());
        for r in 0..n {
            for k in csr.ptr[r]..csr.ptr[r + 1] {
                triplets.push(Triplet::new(r, csr.col[k], csr.val[k]));
            }
        }
        let mat = SparseColMat::<usize, f64>::try_new_from_triplets(n, n, &triplets)
            .map_err(|e| Error::Invalid(format!("sparse assembly failed: {e:?}")))?;
        let lu = mat.sp_lu().map_err(|e| {
            let pivot = match e {
                faer::sparse::linalg::LuError::SymbolicSingular { index } => index,
                _ => 0,
            };
            Error::Singular { pivot, location: describe_unknown(domain, pivot) }
        })?;
        let mut op = Self { domain: domain.clone(), csr, lu, rules, condition_estimate: f64::NAN };
        op.condition_estimate = op.estimate_condition();
        if !op.condition_estimate.is_finite() {
            return Err(Error::Singular { pivot: 0, location: "non-finite factor entries".into() });
        }
        if op.condition_estimate > CONDITION_LIMIT {
            return Err(Error::IllConditioned(op.condition_estimate));
        }
        Ok(op)
    }

    pub fn n_unknowns(&self) -> usize {
        self.csr.ptr.len() - 1
    }

    fn solve_real_columns(&self, cols: &mut [Vec<f64>], transpose: bool) {
        let n = self.n_unknowns();
        let mut m = Mat::<f64>::from_fn(n, cols.len(), |i, j| cols[j][i]);
        if transpose {
            self.lu.solve_transpose_in_place(m.as_mut());
        } else {
            self.lu.solve_in_place(m.as_mut());
        }
        for (j, c) in cols.iter_mut().enumerate() {
            for i in 0..n {
                c[i] = m[(i, j)];
            }
        }
    }

    /// Hager–Higham estimate of κ₁ = ‖A‖₁‖A⁻¹‖₁.
    fn estimate_condition(&self) -> f64 {
        let n = self.n_unknowns();
        let mut x = vec![1.0 / n as f64; n];
        let mut est = 0.0;
        for _ in 0..5 {
            let mut y = vec![x.clone()];
            self.solve_real_columns(&mut y, false);
            let y = y.pop().unwrap();
            let ynorm: f64 = y.iter().map(|v| v.abs()).sum();
            if !ynorm.is_finite() {
                return f64::INFINITY;
            }
            if ynorm <= est {
                break;
            }
            est = ynorm;
            let mut z = vec![y.iter().map(|v| if *v >= 0.0 { 1.0 } else { -1.0 }).collect::<Vec<f64>>()];
            self.solve_real_columns(&mut z, true);
            let z = z.pop().unwrap();
            let (jmax, zmax) = z.iter().enumerate().map(|(i, v)| (i, v.abs())).fold((0, 0.0), |a, b| if b.1 > a.1 { b } else { a });
            let zx: f64 = z.iter().zip(&x).map(|(a, b)| a * b).sum();
            if zmax <= zx {
                break;
            }
            x = vec![0.0; n];
            x[jmax] = 1.0;
        }
        est * self.csr.norm1(n)
    }

    /// Right-hand side of the extended system for interior data `f` and Cauchy data `bc`.
    fn rhs(&self, f: &[C64], bc: &BoundaryData) -> Vec<C64> {
        let inv4 = 1.0 / self.domain.dx().powi(4);
        let mut b = f.to_vec();
        for (g, rule) in self.rules.iter().enumerate() {
            let d = bc.anchors[g];
            b.push((d[0] * rule.data[0] + d[1] * rule.data[1]) * inv4);
        }
        b
    }

    /// Solves A x = b for a complex right-hand side with one step of iterative refinement.
    fn solve_extended(&self, b: &[C64]) -> Vec<C64> {
        let re: Vec<f64> = b.iter().map(|v| v.re).collect();
        let im: Vec<f64> = b.iter().map(|v| v.im).collect();
        let mut cols = vec![re.clone(), im.clone()];
        self.solve_real_columns(&mut cols, false);
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(f64::MIN_POSITIVE);
        let r_re: Vec<f64> = self.csr.matvec(&cols[0]).iter().zip(&re).map(|(a, b)| b - a).collect();
        let r_im: Vec<f64> = self.csr.matvec(&cols[1]).iter().zip(&im).map(|(a, b)| b - a).collect();
        let rmax = r_re.iter().chain(&r_im).map(|v| v.abs()).fold(0.0, f64::max);
        if rmax > 1e-13 * scale {
            let mut corr = vec![r_re, r_im];
            self.solve_real_columns(&mut corr, false);
            for c in 0..2 {
                for i in 0..b.len() {
                    cols[c][i] += corr[c][i];
                }
            }
        }
        cols[0].iter().zip(&cols[1]).map(|(a, b)| C64::new(*a, *b)).collect()
    }

    fn split(&self, x: Vec<C64>) -> Field {
        let n_int = self.domain.n_interior();
        let ghosts = x[n_int..].to_vec();
        let mut values = x;
        values.truncate(n_int);
        Field { domain: self.domain.clone(), values, ghosts: Some(ghosts) }
    }

    /// Solves A u = f with clamped Cauchy data `bc`.
    pub fn solve_dirichlet(&self, f: &Field, bc: &BoundaryData) -> Result<Field> {
        if f.domain.hash != self.domain.hash || bc.domain.hash != self.domain.hash {
            return Err(Error::DomainMismatch);
        }
        bc.validate()?;
        let x = self.solve_extended(&self.rhs(&f.values, bc));
        if x.iter().any(|v| !v.re.is_finite() || !v.im.is_finite()) {
            return Err(Error::Singular { pivot: 0, location: "non-finite solution".into() });
        }
        Ok(self.split(x))
    }

    /// Discrete Green kernel: −Δ²G(x, ·) = δₓ with zero Cauchy data, δ normalized by 1/Δx².
    pub fn green_kernel(&self, source: usize) -> Result<Field> {
        if source >= self.domain.n_interior() {
            return invalid("Green kernel source must be an interior node");
        }
        let mut f = Field::zeros(&self.domain);
        f.values[source] = C64::new(-1.0 / self.domain.dx().powi(2), 0.0);
        self.solve_dirichlet(&f, &BoundaryData::zeros(&self.domain))
    }

    /// Applies the full extended matrix to (interior, ghost) values; interior rows give A u.
    pub fn apply_extended(&self, u: &Field) -> Result<Vec<C64>> {
        let ghosts = u.ghosts.as_ref().ok_or_else(|| Error::Invalid("operator application needs ghost values".into()))?;
        let x: Vec<C64> = u.values.iter().chain(ghosts).copied().collect();
        let re: Vec<f64> = x.iter().map(|v| v.re).collect();
        let im: Vec<f64> = x.iter().map(|v| v.im).collect();
        Ok(self.csr.matvec(&re).into_iter().zip(self.csr.matvec(&im)).map(|(a, b)| C64::new(a, b)).collect())
    }

    /// Interior rows of A u as a field (the discrete Δ² plus any assembled lower-order terms).
    pub fn apply(&self, u: &Field) -> Result<Field> {
        let mut v = self.apply_extended(u)?;
        v.truncate(self.domain.n_interior());
        Field::new(&self.domain, v)
    }

    /// Relative residual ‖A u − f‖∞ / scale over interior rows and ghost rows.
    pub fn residual(&self, u: &Field, f: &Field, bc: &BoundaryData) -> Result<f64> {
        let au = self.apply_extended(u)?;
        let b = self.rhs(&f.values, bc);
        let scale = b.iter().map(|v| v.norm()).fold(0.0, f64::max).max(au.iter().map(|v| v.norm()).fold(0.0, f64::max)).max(f64::MIN_POSITIVE);
        Ok(au.iter().zip(&b).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max) / scale)
    }
}

fn describe_unknown(domain: &Domain, idx: usize) -> String {
    if idx < domain.n_interior() {
        format!("interior node at {:?}", domain.interior_point(idx))
    } else if idx < domain.n_interior() + domain.n_ghost() {
        format!("ghost node at {:?}", domain.ghost_point(idx - domain.n_interior()))
    } else {
        format!("unknown index {idx}")
    }
}

/// Discrete 13-point bilaplacian of a field at the interior nodes whose whole stencil
/// carries values; other nodes yield `None`.
pub fn bilaplacian_13(u: &Field) -> Vec<Option<C64>> {
    let d = &u.domain;
    let inv4 = 1.0 / d.dx().powi(4);
    d.interior
        .iter()
        .map(|&(i, j)| {
            let mut acc = C64::new(0.0, 0.0);
            for &(di, dj, w) in STENCIL13.iter() {
                let (a, b) = d.lattice.offset(i, j, di, dj)?;
                acc += u.value_at(a, b)? * w;
            }
            Some(acc * inv4)
        })
        .collect()
}

/// Normal traces (∂ν²u, ∂ν³u) at each boundary node from a degree-5 fit along the
/// normal line: value and slope from the Cauchy data, four interior probes.
pub fn normal_traces(u: &Field, bc: &BoundaryData) -> Result<Vec<[C64; 2]>> {
    let d = &u.domain;
    if u.ghosts.is_none() {
        return invalid("normal traces need a field with ghost values");
    }
    let dx = d.dx();
    let mut cons = vec![Constraint { s: 0.0, order: 0 }, Constraint { s: 0.0, order: 1 }];
    cons.extend(TRACE_PROBES.iter().map(|k| Constraint { s: -k * dx, order: 0 }));
    let w2 = birkhoff_weights(&cons, 0.0, 2, dx);
    let w3 = birkhoff_weights(&cons, 0.0, 3, dx);
    let ext: Vec<C64> = u.values.iter().chain(u.ghosts.as_ref().unwrap()).copied().collect();
    Ok(d.boundary
        .iter()
        .zip(&bc.nodes)
        .map(|(b, g)| {
            let mut vals = vec![g[0], g[1]];
            for k in TRACE_PROBES {
                let p = [b.point[0] - k * dx * b.normal[0], b.point[1] - k * dx * b.normal[1]];
                vals.push(probe_terms(d, p).into_iter().map(|(c, w)| ext[c] * w).sum());
            }
            let t2: C64 = vals.iter().zip(&w2).map(|(v, w)| v * w).sum();
            let t3: C64 = vals.iter().zip(&w3).map(|(v, w)| v * w).sum();
            [t2, t3]
        })
        .collect())
}

/// Interior Sobolev norms.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Norms {
    pub l2: f64,
    pub h1: f64,
    pub h2: f64,
}

/// Quadrature of |u|² and finite-difference derivatives up to order two
/// (multi-index convention: ∂₁₁, ∂₁₂, ∂₂₂ each counted once).
pub fn norms(u: &Field) -> Result<Norms> {
    let d = &u.domain;
    let mut l2 = 0.0;
    let mut g2 = 0.0;
    let mut h2 = 0.0;
    for k in 0..d.n_interior() {
        let w = d.weights[k];
        l2 += w * u.values[k].norm_sqr();
        let get = |ox, oy| u.derivative(k, ox, oy).ok_or_else(|| Error::Invalid("derivative stencil unavailable".into()));
        g2 += w * (get(1, 0)?.norm_sqr() + get(0, 1)?.norm_sqr());
        h2 += w * (get(2, 0)?.norm_sqr() + get(1, 1)?.norm_sqr() + get(0, 2)?.norm_sqr());
    }
    Ok(Norms { l2: l2.sqrt(), h1: (l2 + g2).sqrt(), h2: (l2 + g2 + h2).sqrt() })
}

/// Fractional boundary norms of Cauchy data: ‖g₀‖_{H^{3/2}} and ‖g₁‖_{H^{1/2}}.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct BoundaryNorms {
    pub h_half: f64,
    pub h_three_half: f64,
}

/// Tangential derivative along the uniformly sampled boundary (fourth-order periodic differences).
pub fn tangential_derivative(domain: &Domain, w: &[C64]) -> Vec<C64> {
    let n = w.len();
    let ds = domain.perimeter / n as f64;
    (0..n)
        .map(|k| {
            let f = |o: i64| w[((k as i64 + o).rem_euclid(n as i64)) as usize];
            (f(-2) - f(-1) * 8.0 + f(1) * 8.0 - f(2)) / (12.0 * ds)
        })
        .collect()
}

fn gagliardo(domain: &Domain, w: &[C64]) -> f64 {
    let dx = domain.dx();
    let b = &domain.boundary;
    let mut acc = 0.0;
    for i in 0..b.len() {
        for j in 0..b.len() {
            let r = crate::geometry::norm(crate::geometry::sub(b[i].point, b[j].point));
            if r > 0.5 * dx {
                acc += (w[i] - w[j]).norm_sqr() / (r * r) * b[i].weight * b[j].weight;
            }
        }
    }
    acc
}

/// ‖w‖²_{H^{1/2}} = ‖w‖² + ∬|w(x) − w(y)|²/|x − y|² over boundary node pairs.
pub fn h_half_norm(domain: &Domain, w: &[C64]) -> f64 {
    let l2: f64 = domain.boundary.iter().zip(w).map(|(b, v)| b.weight * v.norm_sqr()).sum();
    (l2 + gagliardo(domain, w)).sqrt()
}

/// ‖w‖²_{H^{3/2}} = ‖w‖² + ‖∂ₛw‖² + ∬|∂ₛw(x) − ∂ₛw(y)|²/|x − y|².
pub fn h_three_half_norm(domain: &Domain, w: &[C64]) -> f64 {
    let dw = tangential_derivative(domain, w);
    let l2: f64 = domain.boundary.iter().zip(w).map(|(b, v)| b.weight * v.norm_sqr()).sum();
    let d2: f64 = domain.boundary.iter().zip(&dw).map(|(b, v)| b.weight * v.norm_sqr()).sum();
    (l2 + d2 + gagliardo(domain, &dw)).sqrt()
}

pub fn boundary_norms(g: &BoundaryData) -> BoundaryNorms {
    let g0: Vec<C64> = g.nodes.iter().map(|v| v[0]).collect();
    let g1: Vec<C64> = g.nodes.iter().map(|v| v[1]).collect();
    BoundaryNorms { h_half: h_half_norm(&g.domain, &g1), h_three_half: h_three_half_norm(&g.domain, &g0) }
}

/// Quadrature inner product ∫ u v (bilinear, no conjugation).
pub fn integrate_product(u: &Field, v: &Field) -> Result<C64> {
    if !u.same_domain(v) {
        return Err(Error::DomainMismatch);
    }
    Ok(u.values.iter().zip(&v.values).zip(&u.domain.weights).map(|((a, b), w)| a * b * *w).sum())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{norm, sub, Shape, SigmaSpec};
    use crate::numerics::fit_slope;
    use std::f64::consts::PI;

    fn disk(res: usize) -> Arc<Domain> {
        Arc::new(Domain::build(Shape::disk([0.0, 0.0], 1.0), res, SigmaSpec::Full).unwrap())
    }

    fn manufactured_error(res: usize) -> f64 {
        let d = disk(res);
        let u = |p: Point| (PI * p[0]).sin() * (PI * p[1]).sin();
        let f = Field::from_real_fn(&d, |p| 4.0 * PI.powi(4) * u(p));
        let bc = BoundaryData::from_function(&d, |p| {
            let g = [PI * (PI * p[0]).cos() * (PI * p[1]).sin(), PI * (PI * p[0]).sin() * (PI * p[1]).cos()];
            (C64::new(u(p), 0.0), [C64::new(g[0], 0.0), C64::new(g[1], 0.0)])
        });
        let op = DiscreteOperator::assemble(&d).unwrap();
        let sol = op.solve_dirichlet(&f, &bc).unwrap();
        assert!(op.residual(&sol, &f, &bc).unwrap() < SOLVER_TOL);
        let exact = Field::from_real_fn(&d, u);
        let e = sol.combine(C64::new(1.0, 0.0), &exact, C64::new(-1.0, 0.0)).unwrap();
        norms(&e.without_ghosts()).unwrap().l2
    }

    #[test]
    fn stencil_annihilates_cubics_and_scales_quartic() {
        let s: f64 = STENCIL13.iter().map(|t| t.2).sum();
        assert_eq!(s, 0.0);
        // Δ²(x⁴) = 24
        let q: f64 = STENCIL13.iter().map(|&(a, _, w)| w * (a as f64).powi(4)).sum();
        assert_eq!(q, 24.0);
    }

    #[test]
    fn manufactured_solution_converges_second_order() {
        let res = [16usize, 32, 64];
        let errs: Vec<f64> = res.iter().map(|&r| manufactured_error(r)).collect();
        let x: Vec<f64> = res.iter().map(|&r| (1.0 / r as f64).ln()).collect();
        let y: Vec<f64> = errs.iter().map(|e| e.ln()).collect();
        let slope = fit_slope(&x, &y);
        assert!((1.7..=2.3).contains(&slope), "errors {errs:?} slope {slope}");
    }

    #[test]
    fn constant_data_reproduces_constant() {
        let d = disk(24);
        let op = DiscreteOperator::assemble(&d).unwrap();
        let bc = BoundaryData::from_fn(&d, |_, _| [C64::new(1.0, 0.5), C64::new(0.0, 0.0)]);
        let u = op.solve_dirichlet(&Field::zeros(&d), &bc).unwrap();
        assert!(u.values.iter().all(|v| (v - C64::new(1.0, 0.5)).norm() < 1e-10));
    }

    fn node_near(d: &Domain, p: Point) -> usize {
        (0..d.n_interior()).min_by(|&a, &b| norm(sub(d.interior_point(a), p)).total_cmp(&norm(sub(d.interior_point(b), p)))).unwrap()
    }

    /// Relative reciprocity defect |G(x, y) − G(y, x)| / |G(x, y)| at two fixed lattice points.
    fn reciprocity_defect(res: usize) -> f64 {
        let d = disk(res);
        let op = DiscreteOperator::assemble(&d).unwrap();
        let (x, y) = (node_near(&d, [-0.3125, 0.125]), node_near(&d, [0.3125, -0.1875]));
        let (gx, gy) = (op.green_kernel(x).unwrap(), op.green_kernel(y).unwrap());
        (gx.values[y] - gy.values[x]).norm() / gx.values[y].norm()
    }

    #[test]
    fn reciprocity_defect_decays_second_order() {
        let (a, b) = (reciprocity_defect(32), reciprocity_defect(64));
        let order = (a / b).log2();
        assert!(b < a && order >= 1.7, "defects {a:e}, {b:e}, order {order}");
    }

    #[test]
    #[ignore = "the ghost closure is nonsymmetric; reciprocity holds to O(Δx²), not to 1e-8"]
    fn reciprocity_to_roundoff() {
        assert!(reciprocity_defect(64) < 1e-8);
    }

    #[test]
    fn green_superposition_matches_solve() {
        let d = disk(24);
        let op = DiscreteOperator::assemble(&d).unwrap();
        let phi = Field::from_real_fn(&d, |p| 1.0 + p[0] * p[1]);
        let u = op.solve_dirichlet(&phi, &BoundaryData::zeros(&d)).unwrap();
        let mut acc = vec![C64::new(0.0, 0.0); d.n_interior()];
        for y in 0..d.n_interior() {
            let g = op.green_kernel(y).unwrap();
            let w = phi.values[y] * d.dx().powi(2);
            for (a, v) in acc.iter_mut().zip(&g.values) {
                *a += v * w;
            }
        }
        let scale = u.max_abs();
        assert!(acc.iter().zip(&u.values).all(|(a, v)| (a + v).norm() <= 1e-9 * scale));
    }

    #[test]
    fn binary_dump_round_trip() {
        let d = disk(16);
        let f = Field::from_fn(&d, |p| C64::new(p[0], p[1] * p[1]));
        let mut buf = Vec::new();
        f.write_binary(&mut buf).unwrap();
        let g = Field::read_binary(&d, buf.as_slice()).unwrap();
        assert_eq!(f.values, g.values);
    }
}
