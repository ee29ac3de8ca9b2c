//! Perturbed operator Δ² + Q(x, D), its partial Dirichlet-to-Neumann map, the
//! Fréchet derivative of Q ↦ Λ_Q, and the volume/boundary duality behind it.

use std::sync::Arc;

use crate::biharmonic_core::{derivative_stencil, integrate_product, normal_traces, BoundaryData, DiscreteOperator, Field, RowTerms};
use crate::error::{invalid, Error, Result};
use crate::geometry::{Domain, Label, NodeKind, Point};
use crate::numerics::C64;

/// Real coefficient bundle of Q(x, D) = a⁰ + a¹·∇ + a²Δ + a³:∇³ on interior nodes.
/// a³ is stored by multi-index (111, 112, 122, 222), so symmetry is structural.
#[derive(Clone, Debug)]
pub struct PerturbationQ {
    pub domain: Arc<Domain>,
    pub a0: Vec<f64>,
    pub a1: [Vec<f64>; 2],
    pub a2: Vec<f64>,
    pub a3: Option<[Vec<f64>; 4]>,
}

/// Multiplicities of the stored a³ components in the full symmetric contraction.
const A3_TERMS: [(usize, usize, f64); 4] = [(3, 0, 1.0), (2, 1, 3.0), (1, 2, 3.0), (0, 3, 1.0)];

impl PerturbationQ {
    pub fn zero(domain: &Arc<Domain>) -> Self {
        let n = domain.n_interior();
        Self { domain: domain.clone(), a0: vec![0.0; n], a1: [vec![0.0; n], vec![0.0; n]], a2: vec![0.0; n], a3: None }
    }

    /// Samples (a⁰, a¹, a²) at interior nodes.
    pub fn from_fns(domain: &Arc<Domain>, a0: impl Fn(Point) -> f64, a1: impl Fn(Point) -> [f64; 2], a2: impl Fn(Point) -> f64) -> Self {
        let pts = domain.interior_points();
        Self {
            domain: domain.clone(),
            a0: pts.iter().map(|&p| a0(p)).collect(),
            a1: [pts.iter().map(|&p| a1(p)[0]).collect(), pts.iter().map(|&p| a1(p)[1]).collect()],
            a2: pts.iter().map(|&p| a2(p)).collect(),
            a3: None,
        }
    }

    pub fn with_a3(mut self, a3: impl Fn(Point) -> [f64; 4]) -> Self {
        let pts = self.domain.interior_points();
        self.a3 = Some(std::array::from_fn(|c| pts.iter().map(|&p| a3(p)[c]).collect()));
        self
    }

    pub fn scale(&self, t: f64) -> Self {
        let s = |v: &Vec<f64>| v.iter().map(|x| x * t).collect::<Vec<f64>>();
        Self {
            domain: self.domain.clone(),
            a0: s(&self.a0),
            a1: [s(&self.a1[0]), s(&self.a1[1])],
            a2: s(&self.a2),
            a3: self.a3.as_ref().map(|a| std::array::from_fn(|c| s(&a[c]))),
        }
    }

    pub fn add(&self, other: &Self) -> Result<Self> {
        if self.domain.hash != other.domain.hash {
            return Err(Error::DomainMismatch);
        }
        let s = |a: &Vec<f64>, b: &Vec<f64>| a.iter().zip(b).map(|(x, y)| x + y).collect::<Vec<f64>>();
        let a3 = match (&self.a3, &other.a3) {
            (None, None) => None,
            (x, y) => {
                let z = vec![0.0; self.a0.len()];
                let get = |a: &Option<[Vec<f64>; 4]>, c: usize| a.as_ref().map(|v| v[c].clone()).unwrap_or_else(|| z.clone());
                Some(std::array::from_fn(|c| s(&get(x, c), &get(y, c))))
            }
        };
        Ok(Self { domain: self.domain.clone(), a0: s(&self.a0, &other.a0), a1: [s(&self.a1[0], &other.a1[0]), s(&self.a1[1], &other.a1[1])], a2: s(&self.a2, &other.a2), a3 })
    }

    /// Copy with a³ dropped (the part entering the integral identity).
    pub fn up_to_order_two(&self) -> Self {
        Self { a3: None, ..self.clone() }
    }

    pub fn sup_norm(&self) -> f64 {
        let mut m: f64 = 0.0;
        for v in [&self.a0, &self.a1[0], &self.a1[1], &self.a2] {
            m = v.iter().fold(m, |a, b| a.max(b.abs()));
        }
        if let Some(a3) = &self.a3 {
            for v in a3 {
                m = v.iter().fold(m, |a, b| a.max(b.abs()));
            }
        }
        m
    }

    fn validate_for(&self, domain: &Domain) -> Result<()> {
        if self.domain.hash != domain.hash {
            return Err(Error::DomainMismatch);
        }
        let n = domain.n_interior();
        let ok = self.a0.len() == n && self.a1.iter().all(|v| v.len() == n) && self.a2.len() == n && self.a3.as_ref().is_none_or(|a| a.iter().all(|v| v.len() == n));
        if !ok {
            return invalid("coefficient arrays do not match the interior node count");
        }
        Ok(())
    }

    /// Differential terms at interior node k as (ox, oy, coefficient).
    fn terms(&self, k: usize) -> Vec<(usize, usize, f64)> {
        let mut t = vec![(0, 0, self.a0[k]), (1, 0, self.a1[0][k]), (0, 1, self.a1[1][k]), (2, 0, self.a2[k]), (0, 2, self.a2[k])];
        if let Some(a3) = &self.a3 {
            for (c, &(ox, oy, m)) in A3_TERMS.iter().enumerate() {
                t.push((ox, oy, m * a3[c][k]));
            }
        }
        t.retain(|x| x.2 != 0.0);
        t
    }

    /// Matrix row contributions of Q at interior node k (central stencils on the closure set).
    fn row_terms(&self, k: usize) -> Result<RowTerms> {
        let d = &self.domain;
        let (i, j) = d.interior[k];
        let h = d.dx();
        let avail = |a: i64, b: i64| d.kind_at_offset(i, j, a, b) != NodeKind::Exterior;
        let mut out = Vec::new();
        for (ox, oy, c) in self.terms(k) {
            let st = derivative_stencil(&avail, ox, oy).ok_or_else(|| Error::Invalid("perturbation stencil leaves the closure set".into()))?;
            let s = c / h.powi((ox + oy) as i32);
            out.extend(st.into_iter().map(|(o, w)| (o, w * s)));
        }
        Ok(out)
    }
}

/// Q(x, D)u with the same difference stencils the assembled operator uses.
pub fn apply_q(q: &PerturbationQ, u: &Field) -> Result<Field> {
    q.validate_for(&u.domain)?;
    let mut out = Vec::with_capacity(u.values.len());
    for k in 0..u.values.len() {
        let mut acc = C64::new(0.0, 0.0);
        for (ox, oy, c) in q.terms(k) {
            let dv = u.derivative(k, ox, oy).ok_or_else(|| Error::Invalid(format!("field lacks the stencil margin for a derivative of order {}", ox + oy)))?;
            acc += dv * c;
        }
        out.push(acc);
    }
    Field::new(&u.domain, out)
}

/// Factorized Δ² + Q with clamped Cauchy data.
#[derive(Debug)]
pub struct ForwardOperator {
    pub q: PerturbationQ,
    pub op: DiscreteOperator,
}

impl ForwardOperator {
    pub fn new(q: PerturbationQ) -> Result<Self> {
        let d = q.domain.clone();
        q.validate_for(&d)?;
        let rows: Vec<RowTerms> = (0..d.n_interior()).map(|k| q.row_terms(k)).collect::<Result<_>>()?;
        let op = DiscreteOperator::assemble_with(&d, |k| rows[k].clone())?;
        Ok(Self { q, op })
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.op.domain
    }

    /// P_Q f: solution of (Δ² + Q)u = 0 with Σ-supported Cauchy data f.
    pub fn solve_p(&self, f: &BoundaryData) -> Result<Field> {
        require_sigma_supported(f)?;
        self.op.solve_dirichlet(&Field::zeros(self.domain()), f)
    }

    /// G_Q F: solution of (Δ² + Q)w = F with zero Cauchy data.
    pub fn solve_g(&self, rhs: &Field) -> Result<Field> {
        self.op.solve_dirichlet(rhs, &BoundaryData::zeros(self.domain()))
    }

    /// Λ_Q f = (∂ν²u, ∂ν³u) on Σ, u = P_Q f.
    pub fn dn_map(&self, f: &BoundaryData) -> Result<CauchyTrace> {
        let u = self.solve_p(f)?;
        CauchyTrace::of(&u, f, true)
    }

    /// (B_Q H) f = (∂ν²w, ∂ν³w)|_Σ with w = G_Q(−H P_Q f).
    pub fn frechet_derivative(&self, hq: &PerturbationQ, f: &BoundaryData) -> Result<CauchyTrace> {
        let u = self.solve_p(f)?;
        let w = self.solve_g(&apply_q(hq, &u)?.scale(C64::new(-1.0, 0.0)))?;
        CauchyTrace::of(&w, &BoundaryData::zeros(self.domain()), true)
    }
}

fn require_sigma_supported(f: &BoundaryData) -> Result<()> {
    let d = &f.domain;
    let zero = |v: &[C64; 2]| v[0] == C64::new(0.0, 0.0) && v[1] == C64::new(0.0, 0.0);
    let bad = d.boundary.iter().zip(&f.nodes).any(|(b, v)| b.label == Label::Gamma && !zero(v))
        || d.ghosts.iter().zip(&f.anchors).any(|(g, v)| g.label == Label::Gamma && !zero(v));
    if bad {
        return invalid("Dirichlet data must vanish on Γ");
    }
    f.validate()
}

/// (u, ∂νu, ∂ν²u, ∂ν³u) per boundary node, optionally restricted to Σ.
#[derive(Clone, Debug)]
pub struct CauchyTrace {
    pub domain: Arc<Domain>,
    pub rows: Vec<[C64; 4]>,
    pub sigma_only: bool,
}

impl CauchyTrace {
    pub fn of(u: &Field, bc: &BoundaryData, sigma_only: bool) -> Result<Self> {
        let t = normal_traces(u, bc)?;
        let d = &u.domain;
        let z = C64::new(0.0, 0.0);
        let rows = d
            .boundary
            .iter()
            .zip(bc.nodes.iter().zip(t))
            .map(|(b, (g, tr))| if sigma_only && b.label == Label::Gamma { [z; 4] } else { [g[0], g[1], tr[0], tr[1]] })
            .collect();
        Ok(Self { domain: d.clone(), rows, sigma_only })
    }

    /// Boundary L² norm of the (∂ν², ∂ν³) components.
    pub fn norm(&self) -> f64 {
        self.domain.boundary.iter().zip(&self.rows).map(|(b, r)| b.weight * (r[2].norm_sqr() + r[3].norm_sqr())).sum::<f64>().sqrt()
    }

    pub fn combine(&self, a: f64, other: &Self, b: f64) -> Result<Self> {
        if self.domain.hash != other.domain.hash {
            return Err(Error::DomainMismatch);
        }
        let rows = self.rows.iter().zip(&other.rows).map(|(x, y)| std::array::from_fn(|c| x[c] * a + y[c] * b)).collect();
        Ok(Self { domain: self.domain.clone(), rows, sigma_only: self.sigma_only })
    }

    /// CSV: arclength, then Re/Im of u, ∂νu, ∂ν²u, ∂ν³u.
    pub fn to_csv(&self) -> String {
        let mut s = String::from("s,u_re,u_im,dn1_re,dn1_im,dn2_re,dn2_im,dn3_re,dn3_im\n");
        for (b, r) in self.domain.boundary.iter().zip(&self.rows) {
            if self.sigma_only && b.label == Label::Gamma {
                continue;
            }
            s.push_str(&format!("{}", b.arclength));
            for v in r {
                s.push_str(&format!(",{},{}", v.re, v.im));
            }
            s.push('\n');
        }
        s
    }
}

/// ∫_Ω (a²Δu + a¹·∇u + a⁰u) v dx by interior quadrature (a³ ignored).
pub fn bilinear_form(hq: &PerturbationQ, u: &Field, v: &Field) -> Result<C64> {
    let qu = apply_q(&hq.up_to_order_two(), u)?;
    integrate_product(&qu, v)
}

/// Volume and boundary sides of −∫(H P₀f)P₀g = ∫_Σ[−∂ν P₀g·Δw + P₀g·∂ν(Δw)], w = G₀(−H P₀f).
#[derive(Clone, Copy, Debug)]
pub struct Duality {
    pub volume: C64,
    pub boundary: C64,
    pub gap: f64,
}

/// Boundary pairing ∫_∂Ω[−g₁Δw + g₀∂ν(Δw)] for w with zero Cauchy data, where on ∂Ω
/// Δw = ∂ν²w and ∂ν(Δw) = ∂ν³w + κ∂ν²w. Only nodes in `labels` contribute.
pub fn boundary_pairing(w: &Field, g: &BoundaryData, sigma_only: bool) -> Result<C64> {
    let d = &w.domain;
    let t = normal_traces(w, &BoundaryData::zeros(d))?;
    Ok(d.boundary
        .iter()
        .zip(t.iter().zip(&g.nodes))
        .filter(|(b, _)| !sigma_only || b.label == Label::Sigma)
        .map(|(b, (tr, gv))| {
            let lap = tr[0];
            let dlap = tr[1] + tr[0] * b.curvature;
            (-gv[1] * lap + gv[0] * dlap) * b.weight
        })
        .sum())
}

pub fn duality_check(op0: &ForwardOperator, hq: &PerturbationQ, f: &BoundaryData, g: &BoundaryData) -> Result<Duality> {
    let u = op0.solve_p(f)?;
    let v = op0.solve_p(g)?;
    let hu = apply_q(hq, &u)?;
    let volume = -integrate_product(&hu, &v)?;
    let w = op0.solve_g(&hu.scale(C64::new(-1.0, 0.0)))?;
    let boundary = boundary_pairing(&w, g, true)?;
    let scale = volume.norm().max(boundary.norm());
    let floor = 1e-12 * (hq.sup_norm() * u.max_abs() * v.max_abs()).max(f64::MIN_POSITIVE);
    let gap = if scale <= floor { 0.0 } else { (volume - boundary).norm() / volume.norm().max(floor) };
    Ok(Duality { volume, boundary, gap })
}

/// Smooth Cauchy data supported strictly inside Σ: g₀ = b(θ)·c₀, g₁ = b(θ)·c₁ with b a
/// C^∞ bump in the angle θ about the shape center, centred at `theta0` with half width `half`.
pub fn sigma_bump_data(domain: &Arc<Domain>, theta0: f64, half: f64, c: [C64; 2]) -> BoundaryData {
    let center = domain.shape.center();
    let bump = move |p: Point| -> f64 {
        let a = (p[1] - center[1]).atan2(p[0] - center[0]);
        let mut d = a - theta0;
        while d > std::f64::consts::PI {
            d -= 2.0 * std::f64::consts::PI;
        }
        while d < -std::f64::consts::PI {
            d += 2.0 * std::f64::consts::PI;
        }
        let s = d / half;
        if s.abs() >= 1.0 {
            0.0
        } else {
            (1.0 - 1.0 / (1.0 - s * s)).exp()
        }
    };
    BoundaryData::sigma_supported_from_fn(domain, move |p, _| {
        let b = bump(p);
        [c[0] * b, c[1] * b]
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::{reference_disk, Shape, SigmaSpec};
    use std::f64::consts::PI;

    fn disk(res: usize) -> Arc<Domain> {
        Arc::new(Domain::build(Shape::disk([0.0, 0.0], 1.0), res, SigmaSpec::Full).unwrap())
    }

    #[test]
    fn q_multiplication_and_laplacian() {
        let d = disk(32);
        let u = Field::from_fn(&d, |p| C64::new(p[0] * p[0] + p[1] * p[1], 0.0));
        let q = PerturbationQ::from_fns(&d, |_| 0.0, |_| [0.0, 0.0], |_| 1.0);
        let qu = apply_q(&q, &u).unwrap();
        assert!(qu.values.iter().all(|v| (v - C64::new(4.0, 0.0)).norm() < 1e-9));
        let id = PerturbationQ::from_fns(&d, |_| 1.0, |_| [0.0, 0.0], |_| 0.0);
        let v = apply_q(&id, &u).unwrap();
        assert_eq!(v.values, u.values);
        let z = apply_q(&PerturbationQ::zero(&d), &u).unwrap();
        assert!(z.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn third_order_term_on_cubic() {
        let d = disk(32);
        // ∂xxy(x²y) = 2 with multiplicity 3 from the symmetric contraction.
        let u = Field::from_fn(&d, |p| C64::new(p[0] * p[0] * p[1], 0.0));
        let q = PerturbationQ::zero(&d).with_a3(|_| [0.0, 1.0, 0.0, 0.0]);
        let qu = apply_q(&q, &u).unwrap();
        assert!(qu.values.iter().all(|v| (v - C64::new(6.0, 0.0)).norm() < 1e-7));
    }

    #[test]
    fn assembled_rows_match_apply_q() {
        let d = disk(24);
        let q = PerturbationQ::from_fns(&d, |p| 1.0 + p[0], |p| [p[1], 0.5], |p| 0.3 * p[0] * p[1]);
        let fwd = ForwardOperator::new(q.clone()).unwrap();
        let u = Field::from_fn(&d, |p| C64::new(p[0].sin(), p[1] * p[1]));
        let lhs = fwd.op.apply(&u).unwrap();
        let bih = crate::biharmonic_core::bilaplacian_13(&u);
        let qu = apply_q(&q, &u).unwrap();
        for k in 0..d.n_interior() {
            let want = bih[k].unwrap() + qu.values[k];
            assert!((lhs.values[k] - want).norm() < 1e-8 * want.norm().max(1.0));
        }
    }

    #[test]
    fn duality_with_zero_perturbation_is_trivial() {
        let d = Arc::new(reference_disk(32, PI / 3.0).unwrap());
        let op0 = ForwardOperator::new(PerturbationQ::zero(&d)).unwrap();
        let f = sigma_bump_data(&d, 0.0, 0.5, [C64::new(1.0, 0.0), C64::new(0.0, 0.0)]);
        let r = duality_check(&op0, &PerturbationQ::zero(&d), &f, &f).unwrap();
        assert_eq!(r.volume, C64::new(0.0, 0.0));
        assert!(r.boundary.norm() < 1e-12);
    }

    #[test]
    fn frechet_derivative_is_linear_in_h() {
        let d = Arc::new(reference_disk(24, PI / 3.0).unwrap());
        let op = ForwardOperator::new(PerturbationQ::zero(&d)).unwrap();
        let hq = PerturbationQ::from_fns(&d, |p| p[0] + 2.0, |_| [0.1, 0.0], |_| 0.2);
        let f = sigma_bump_data(&d, 0.0, 0.5, [C64::new(1.0, 0.0), C64::new(0.5, 0.0)]);
        let b1 = op.frechet_derivative(&hq, &f).unwrap();
        let b2 = op.frechet_derivative(&hq.scale(2.0), &f).unwrap();
        let diff = b2.combine(1.0, &b1, -2.0).unwrap();
        assert!(diff.norm() <= 1e-10 * b2.norm());
        let z = op.frechet_derivative(&PerturbationQ::zero(&d), &f).unwrap();
        assert_eq!(z.norm(), 0.0);
    }
}
