//! Quasi-exponential solutions u = a(x)e^{−ix·ξ/h} + r with vanishing Cauchy data on Γ,
//! the boundary cutoff that produces them, and the remainder decay study.

use std::sync::Arc;

use rayon::prelude::*;

use crate::biharmonic_core::{norms, BoundaryData, DiscreteOperator, Field};
use crate::error::{invalid, Error, Result};
use crate::geometry::{norm, plateau, sub, support_function, Domain, Label, NormalizedConfiguration, Point};
use crate::numerics::{least_squares, C64, I};

/// Complex frequency ξ ∈ ℂ² with ξ·ξ = 0.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct IsotropicVector(pub [C64; 2]);

impl IsotropicVector {
    pub fn new(v: [C64; 2]) -> Result<Self> {
        let dd = v[0] * v[0] + v[1] * v[1];
        let n2 = v[0].norm_sqr() + v[1].norm_sqr();
        if dd.norm() > 1e-12 * n2.max(f64::MIN_POSITIVE) {
            return invalid(format!("ξ·ξ = {dd} is not zero"));
        }
        Ok(Self(v))
    }

    pub fn zero() -> Self {
        Self([C64::new(0.0, 0.0); 2])
    }

    /// ξ = s(i·d + d⊥) for a unit direction d, so that Im ξ = s·d and Re ξ = s·d⊥.
    pub fn from_direction(d: Point, s: f64) -> Self {
        let l = norm(d);
        let d = [d[0] / l, d[1] / l];
        Self([C64::new(-s * d[1], s * d[0]), C64::new(s * d[0], s * d[1])])
    }

    pub fn dot(&self, x: Point) -> C64 {
        self.0[0] * x[0] + self.0[1] * x[1]
    }

    pub fn self_dot(&self) -> C64 {
        self.0[0] * self.0[0] + self.0[1] * self.0[1]
    }

    pub fn norm(&self) -> f64 {
        (self.0[0].norm_sqr() + self.0[1].norm_sqr()).sqrt()
    }

    pub fn im(&self) -> Point {
        [self.0[0].im, self.0[1].im]
    }

    pub fn re(&self) -> Point {
        [self.0[0].re, self.0[1].re]
    }
}

/// Amplitude a(x) ∈ {1, x_j, |x|²}.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum AmplitudeTag {
    One,
    /// Coordinate index 0 or 1.
    Coord(usize),
    NormSq,
}

impl AmplitudeTag {
    pub fn value(&self, x: Point) -> f64 {
        match self {
            AmplitudeTag::One => 1.0,
            AmplitudeTag::Coord(j) => x[*j],
            AmplitudeTag::NormSq => x[0] * x[0] + x[1] * x[1],
        }
    }

    pub fn gradient(&self, x: Point) -> Point {
        match self {
            AmplitudeTag::One => [0.0, 0.0],
            AmplitudeTag::Coord(0) => [1.0, 0.0],
            AmplitudeTag::Coord(_) => [0.0, 1.0],
            AmplitudeTag::NormSq => [2.0 * x[0], 2.0 * x[1]],
        }
    }

    /// Δa in dimension n.
    pub fn laplacian(&self, n: usize) -> f64 {
        match self {
            AmplitudeTag::NormSq => 2.0 * n as f64,
            _ => 0.0,
        }
    }

    /// Quadratic polynomial coefficients [1, x, y, x², xy, y²].
    fn poly(&self) -> Poly {
        let mut p = [C64::new(0.0, 0.0); 6];
        match self {
            AmplitudeTag::One => p[0] = C64::new(1.0, 0.0),
            AmplitudeTag::Coord(j) => p[1 + j] = C64::new(1.0, 0.0),
            AmplitudeTag::NormSq => {
                p[3] = C64::new(1.0, 0.0);
                p[5] = C64::new(1.0, 0.0);
            }
        }
        p
    }

    pub fn name(&self) -> String {
        match self {
            AmplitudeTag::One => "one".into(),
            AmplitudeTag::Coord(j) => format!("x{}", j + 1),
            AmplitudeTag::NormSq => "normsq".into(),
        }
    }
}

type Poly = [C64; 6];

fn poly_eval(p: &Poly, x: Point) -> C64 {
    p[0] + p[1] * x[0] + p[2] * x[1] + p[3] * x[0] * x[0] + p[4] * x[0] * x[1] + p[5] * x[1] * x[1]
}

/// Conjugated Laplacian p ↦ e^{ix·ξ/h} Δ(p e^{−ix·ξ/h}) = Δp − (2i/h) ξ·∇p − (ξ·ξ/h²) p,
/// exact on quadratics.
fn conjugated_laplacian(p: &Poly, xi: &IsotropicVector, h: f64) -> Poly {
    let k = [xi.0[0] / h, xi.0[1] / h];
    let kk = k[0] * k[0] + k[1] * k[1];
    let lap = p[3] * 2.0 + p[5] * 2.0;
    // ∇p = (p1 + 2p3 x + p4 y, p2 + p4 x + 2p5 y)
    let g0 = [p[1], p[3] * 2.0, p[4]];
    let g1 = [p[2], p[4], p[5] * 2.0];
    let m = C64::new(0.0, -2.0);
    let mut out = [C64::new(0.0, 0.0); 6];
    out[0] = lap + m * (k[0] * g0[0] + k[1] * g1[0]);
    out[1] = m * (k[0] * g0[1] + k[1] * g1[1]);
    out[2] = m * (k[0] * g0[2] + k[1] * g1[2]);
    for (o, c) in out.iter_mut().zip(p) {
        *o -= kk * c;
    }
    out
}

/// Phase e^{−ix·ξ/h}.
pub fn cgo_phase(xi: &IsotropicVector, h: f64, x: Point) -> C64 {
    (-I * xi.dot(x) / h).exp()
}

/// Gradient of the phase: −(i/h) ξ e^{−ix·ξ/h}.
pub fn cgo_phase_gradient(xi: &IsotropicVector, h: f64, x: Point) -> [C64; 2] {
    let e = cgo_phase(xi, h, x);
    [-I * xi.0[0] / h * e, -I * xi.0[1] / h * e]
}

/// Laplacian of the phase: −(ξ·ξ/h²) e^{−ix·ξ/h}.
pub fn cgo_phase_laplacian(xi: &IsotropicVector, h: f64, x: Point) -> C64 {
    -xi.self_dot() / (h * h) * cgo_phase(xi, h, x)
}

/// Phase field on interior and ghost nodes.
pub fn phase_field(domain: &Arc<Domain>, xi: &IsotropicVector, h: f64) -> Field {
    Field::from_fn(domain, |x| cgo_phase(xi, h, x))
}

/// a e^{−ix·ξ/h} and its gradient.
pub fn amplitude_phase(tag: AmplitudeTag, xi: &IsotropicVector, h: f64, x: Point) -> (C64, [C64; 2]) {
    let e = cgo_phase(xi, h, x);
    let a = tag.value(x);
    let g = tag.gradient(x);
    (a * e, [(g[0] - I * a * xi.0[0] / h) * e, (g[1] - I * a * xi.0[1] / h) * e])
}

/// Symbolic Δ²(a e^{−ix·ξ/h}) at x together with a magnitude scale for relative comparison.
pub fn analytic_bilaplacian(tag: AmplitudeTag, xi: &IsotropicVector, h: f64, x: Point) -> (C64, f64) {
    let p = tag.poly();
    let q = conjugated_laplacian(&conjugated_laplacian(&p, xi, h), xi, h);
    let e = cgo_phase(xi, h, x);
    let k = xi.norm() / h;
    let scale = (1.0 + norm(x)).powi(2) * (1.0 + k).powi(4) * e.norm();
    (poly_eval(&q, x) * e, scale)
}

/// Boundary cutoff χ = 1 near Γ, realized by a quintic smoothstep of the Euclidean
/// distance to Γ; evaluated on boundary nodes and ghost anchors.
#[derive(Clone, Debug)]
pub struct Cutoff {
    pub config: NormalizedConfiguration,
    pub width: f64,
    pub plateau: f64,
    pub nodes: Vec<f64>,
    pub anchors: Vec<f64>,
}

impl Cutoff {
    pub fn domain(&self) -> &Arc<Domain> {
        &self.config.domain
    }

    /// Points of ∂Ω where χ > 0.
    pub fn support(&self) -> Vec<Point> {
        let d = self.domain();
        let mut k: Vec<Point> = d.boundary.iter().zip(&self.nodes).filter(|(_, c)| **c > 0.0).map(|(b, _)| b.point).collect();
        k.extend(d.ghosts.iter().zip(&self.anchors).filter(|(_, c)| **c > 0.0).map(|(g, _)| g.anchor));
        k
    }

    /// H_K(y) with K = supp χ ∩ ∂Ω; zero-size K (Γ empty) gives −∞.
    pub fn support_function(&self, y: Point) -> f64 {
        let k = self.support();
        if k.is_empty() {
            return f64::NEG_INFINITY;
        }
        support_function(&k, y).unwrap()
    }

    pub fn at_point(&self, p: Point) -> f64 {
        let d = self.domain();
        let dist = d.gamma_nodes().map(|(_, b)| norm(sub(p, b.point))).fold(f64::INFINITY, f64::min);
        if !dist.is_finite() {
            return 0.0;
        }
        let on_gamma = d.label_at(p) == Label::Gamma;
        if on_gamma {
            1.0
        } else {
            plateau(dist, self.plateau, self.width)
        }
    }
}

/// Builds χ with a plateau of `width / 10` around Γ followed by a smoothstep band of `width`.
pub fn make_cutoff(config: &NormalizedConfiguration, width: f64) -> Result<Cutoff> {
    if !(width > 0.0) {
        return invalid("cutoff width must be positive");
    }
    let plateau = 0.1 * width;
    let mut cut = Cutoff { config: config.clone(), width, plateau, nodes: Vec::new(), anchors: Vec::new() };
    let d = config.domain.clone();
    cut.nodes = d.boundary.iter().map(|b| if b.label == Label::Gamma { 1.0 } else { cut.at_point(b.point) }).collect();
    cut.anchors = d.ghosts.iter().map(|g| if g.label == Label::Gamma { 1.0 } else { cut.at_point(g.anchor) }).collect();
    if let Some(p) = cut.support().into_iter().find(|p| p[0] >= -config.c) {
        return invalid(format!("cutoff band reaches {p:?}, outside {{x₁ < −c}} for c = {}", config.c));
    }
    Ok(cut)
}

/// Default cutoff width 0.1·diam(Ω).
pub fn default_cutoff_width(domain: &Domain) -> f64 {
    0.1 * domain.diameter()
}

/// Element of ℰ: u = a e^{−ix·ξ/h} + r, r biharmonic with (r, ∂νr) = −(ae, ∂ν(ae))χ.
#[derive(Clone, Debug)]
pub struct SpecialSolution {
    pub tag: AmplitudeTag,
    pub xi: IsotropicVector,
    pub h: f64,
    pub r: Field,
    pub cutoff: Arc<Cutoff>,
}

/// Smallest admissible h for a frequency: the phase must carry at least six nodes per unit of h/|ξ|.
pub fn min_scale(domain: &Domain, xi: &IsotropicVector) -> f64 {
    6.0 * domain.dx() * xi.norm().max(1.0)
}

pub fn make_special_solution(op: &DiscreteOperator, cutoff: &Arc<Cutoff>, tag: AmplitudeTag, xi: IsotropicVector, h: f64) -> Result<SpecialSolution> {
    let d = &op.domain;
    if d.hash != cutoff.domain().hash {
        return Err(Error::DomainMismatch);
    }
    if !(h > 0.0) {
        return invalid("h must be positive");
    }
    if h < min_scale(d, &xi) {
        return Err(Error::UnderResolved(format!("h = {h} below resolution limit {} for |ξ| = {}", min_scale(d, &xi), xi.norm())));
    }
    let data = |p: Point, n: Point, chi: f64| -> [C64; 2] {
        if chi == 0.0 {
            return [C64::new(0.0, 0.0); 2];
        }
        let (v, g) = amplitude_phase(tag, &xi, h, p);
        [-v * chi, -(g[0] * n[0] + g[1] * n[1]) * chi]
    };
    let nodes = d.boundary.iter().zip(&cutoff.nodes).map(|(b, c)| data(b.point, b.normal, *c)).collect();
    let anchors = d.ghosts.iter().zip(&cutoff.anchors).map(|(g, c)| data(g.anchor, g.normal, *c)).collect();
    let bc = BoundaryData { domain: d.clone(), nodes, anchors, sigma_supported: false };
    let r = op.solve_dirichlet(&Field::zeros(d), &bc)?;
    Ok(SpecialSolution { tag, xi, h, r, cutoff: cutoff.clone() })
}

impl SpecialSolution {
    pub fn principal(&self) -> Field {
        Field::from_fn(&self.r.domain, |x| amplitude_phase(self.tag, &self.xi, self.h, x).0)
    }

    /// u = a e^{−ix·ξ/h} + r on interior and ghost nodes.
    pub fn total(&self) -> Field {
        self.principal().combine(C64::new(1.0, 0.0), &self.r, C64::new(1.0, 0.0)).unwrap()
    }

    /// Cauchy data of u: (ae(1 − χ), ∂ν(ae)(1 − χ)); exactly zero where χ = 1.
    pub fn cauchy_data(&self) -> BoundaryData {
        let d = &self.r.domain;
        let data = |p: Point, n: Point, chi: f64| -> [C64; 2] {
            if chi == 1.0 {
                return [C64::new(0.0, 0.0); 2];
            }
            let (v, g) = amplitude_phase(self.tag, &self.xi, self.h, p);
            [v * (1.0 - chi), (g[0] * n[0] + g[1] * n[1]) * (1.0 - chi)]
        };
        BoundaryData {
            domain: d.clone(),
            nodes: d.boundary.iter().zip(&self.cutoff.nodes).map(|(b, c)| data(b.point, b.normal, *c)).collect(),
            anchors: d.ghosts.iter().zip(&self.cutoff.anchors).map(|(g, c)| data(g.anchor, g.normal, *c)).collect(),
            sigma_supported: true,
        }
    }

    /// Right side of the remainder bound with unit constant.
    pub fn bound(&self) -> f64 {
        let k = self.xi.norm() / self.h;
        (1.0 + k * k + k.powi(4)).sqrt() * (self.cutoff.support_function(self.xi.im()) / self.h).exp()
    }
}

/// Result of a remainder decay sweep.
#[derive(Clone, Debug)]
pub struct DecayReport {
    pub tag: AmplitudeTag,
    pub xi: IsotropicVector,
    pub h: Vec<f64>,
    pub l2: Vec<f64>,
    pub h2: Vec<f64>,
    pub bound: Vec<f64>,
    /// Fitted R in log‖r‖_{H²} ≈ A + p·log(1/h) + R/h.
    pub rate: f64,
    /// Fitted polynomial exponent p of the same fit.
    pub poly: f64,
    /// Predicted rate H_K(Im ξ).
    pub predicted: f64,
    /// Slope of log(‖r‖_{H²} e^{−H_K(Im ξ)/h}) against log(1/h).
    pub normalized_slope: f64,
}

/// Sweeps h for one (tag, ξ), sharing the factorization across parallel solves.
pub fn decay_sweep(op: &DiscreteOperator, cutoff: &Arc<Cutoff>, tag: AmplitudeTag, xi: IsotropicVector, ladder: &[f64]) -> Result<DecayReport> {
    if ladder.len() < 4 {
        return invalid("decay fit needs at least 4 sweep points");
    }
    let sols: Vec<SpecialSolution> = ladder.par_iter().map(|&h| make_special_solution(op, cutoff, tag, xi, h)).collect::<Result<_>>()?;
    verify_decay(&sols)
}

/// Fits the exponential rate of ‖r‖_{H²} against 1/h and compares with H_K(Im ξ).
pub fn verify_decay(sols: &[SpecialSolution]) -> Result<DecayReport> {
    if sols.len() < 4 {
        return invalid("decay fit needs at least 4 sweep points");
    }
    let first = &sols[0];
    let predicted = first.cutoff.support_function(first.xi.im());
    let mut h = Vec::new();
    let mut l2 = Vec::new();
    let mut h2 = Vec::new();
    let mut bound = Vec::new();
    for s in sols {
        let n = norms(&s.r)?;
        h.push(s.h);
        l2.push(n.l2);
        h2.push(n.h2);
        bound.push(s.bound());
    }
    let y: Vec<f64> = h2.iter().map(|v| v.max(1e-300).ln()).collect();
    let ones = vec![1.0; h.len()];
    let logs: Vec<f64> = h.iter().map(|v| (1.0 / v).ln()).collect();
    let invs: Vec<f64> = h.iter().map(|v| 1.0 / v).collect();
    let fit = least_squares(&[ones.clone(), logs.clone(), invs.clone()], &y).ok_or_else(|| Error::Invalid("degenerate decay fit".into()))?;
    let ny: Vec<f64> = if predicted.is_finite() { y.iter().zip(&invs).map(|(a, b)| a - predicted * b).collect() } else { y.clone() };
    let normalized_slope = crate::numerics::fit_slope(&logs, &ny);
    Ok(DecayReport { tag: first.tag, xi: first.xi, h, l2, h2, bound, rate: fit[2], poly: fit[1], predicted, normalized_slope })
}

impl DecayReport {
    pub fn csv_rows(&self) -> String {
        let mut s = String::new();
        for k in 0..self.h.len() {
            s.push_str(&format!(
                "{},{},{},{},{},{},{},{},{},{}\n",
                self.tag.name(),
                self.xi.im()[0],
                self.xi.im()[1],
                self.xi.re()[0],
                self.xi.re()[1],
                self.h[k],
                self.l2[k],
                self.h2[k],
                self.bound[k],
                self.rate
            ));
        }
        s
    }
}

pub const DECAY_CSV_HEADER: &str = "tag,im_xi1,im_xi2,re_xi1,re_xi2,h,r_l2,r_h2,bound,rate\n";

/// Default h ladder.
pub const DEFAULT_LADDER: [f64; 6] = [0.4, 0.3, 0.22, 0.16, 0.12, 0.09];

#[cfg(test)]
mod tests {
    use super::*;
    use crate::geometry::reference_disk;
    use std::f64::consts::PI;

    #[test]
    fn isotropy_of_direction_constructor() {
        let xi = IsotropicVector::from_direction([0.6, -0.8], 2.5);
        assert!(xi.self_dot().norm() < 1e-14);
        assert!((xi.im()[0] - 1.5).abs() < 1e-15 && (xi.im()[1] + 2.0).abs() < 1e-15);
        assert!(IsotropicVector::new([C64::new(1.0, 0.0), C64::new(1.0, 0.0)]).is_err());
    }

    #[test]
    fn phase_modulus() {
        let xi = IsotropicVector::from_direction([1.0, 0.0], 1.0);
        let x = [-0.3, 0.2];
        let e = cgo_phase(&xi, 0.5, x);
        let expected = ((x[0] * xi.im()[0] + x[1] * xi.im()[1]) / 0.5).exp();
        assert!((e.norm() - expected).abs() < 1e-14 * expected);
        assert!(cgo_phase_laplacian(&xi, 0.5, x).norm() < 1e-13);
    }

    #[test]
    fn conjugated_laplacian_matches_finite_differences() {
        let xi = IsotropicVector::from_direction([0.3, 1.0], 0.7);
        let h = 0.4;
        let f = |x: Point| amplitude_phase(AmplitudeTag::NormSq, &xi, h, x).0;
        let x = [0.2, -0.1];
        let d = 1e-3;
        let fd = (f([x[0] + d, x[1]]) + f([x[0] - d, x[1]]) + f([x[0], x[1] + d]) + f([x[0], x[1] - d]) - f(x) * 4.0) / (d * d);
        let q = conjugated_laplacian(&AmplitudeTag::NormSq.poly(), &xi, h);
        let exact = poly_eval(&q, x) * cgo_phase(&xi, h, x);
        assert!((fd - exact).norm() < 1e-4 * exact.norm(), "{fd} vs {exact}");
    }

    #[test]
    fn cutoff_on_reference_configuration() {
        let d = Arc::new(reference_disk(64, 2.0 * PI / 3.0).unwrap());
        let cfg = NormalizedConfiguration::new(d.clone(), 0.4).unwrap();
        let cut = make_cutoff(&cfg, 0.2).unwrap();
        for (b, c) in d.boundary.iter().zip(&cut.nodes) {
            assert!((0.0..=1.0).contains(c));
            if b.label == Label::Gamma {
                assert_eq!(*c, 1.0);
            }
        }
        assert_eq!(cut.at_point([0.0, 0.0]), 0.0);
        assert!(cut.support_function([1.0, 0.0]) <= -0.4);
        assert!(make_cutoff(&cfg, 2.0).is_err());
    }

    #[test]
    fn special_solution_has_zero_gamma_data_and_is_discretely_biharmonic() {
        let d = Arc::new(reference_disk(48, 2.0 * PI / 3.0).unwrap());
        let cfg = NormalizedConfiguration::new(d.clone(), 0.4).unwrap();
        let cut = Arc::new(make_cutoff(&cfg, 0.2).unwrap());
        let op = DiscreteOperator::assemble(&d).unwrap();
        let xi = IsotropicVector::from_direction([1.0, 0.0], 1.0);
        let s = make_special_solution(&op, &cut, AmplitudeTag::Coord(1), xi, 0.3).unwrap();
        let cd = s.cauchy_data();
        cd.validate().unwrap();
        let zero = BoundaryData::zeros(&d);
        let res = op.residual(&s.r, &Field::zeros(&d), &zero);
        assert!(res.is_ok());
        let one = make_special_solution(&op, &cut, AmplitudeTag::One, IsotropicVector::zero(), 1.0).unwrap();
        let u = one.total();
        for (b, c) in d.boundary.iter().zip(one.cauchy_data().nodes) {
            if b.label == Label::Gamma {
                assert_eq!(c, [C64::new(0.0, 0.0); 2]);
            }
        }
        assert!(u.values.iter().all(|v| v.re.is_finite()));
    }
}
