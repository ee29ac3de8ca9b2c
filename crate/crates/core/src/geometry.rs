//! Grid-embedded smooth planar domains with a Σ/Γ boundary partition, the
//! sphere inversion used for conformal normalization, and the support function.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;

use crate::biharmonic_core::Field;
use crate::error::{invalid, Error, Result};
use crate::numerics::{fnv1a, smoothstep5, C64, GAUSS5};

pub type Point = [f64; 2];

pub const MIN_RESOLUTION: usize = 16;

/// Probe depths (in units of Δx) used by the ghost closure and by normal traces.
pub const CLOSURE_PROBES: [f64; 3] = [1.0, 2.0, 3.0];
pub const TRACE_PROBES: [f64; 4] = [1.0, 2.0, 3.0, 4.0];
/// Side of the tensor interpolation block used for probe values.
pub const PROBE_BLOCK: usize = 6;

const ARCLENGTH_PANELS: usize = 4096;
const FD_STEP: f64 = 1e-3;

pub fn dot(a: Point, b: Point) -> f64 {
    a[0] * b[0] + a[1] * b[1]
}

pub fn sub(a: Point, b: Point) -> Point {
    [a[0] - b[0], a[1] - b[1]]
}

pub fn norm(a: Point) -> f64 {
    a[0].hypot(a[1])
}

fn wrap_angle(t: f64) -> f64 {
    (t + PI).rem_euclid(2.0 * PI) - PI
}

/// Sphere inversion ψ(x) = (x − a) r² / |x − a|² + a.
#[derive(Clone, Debug, PartialEq)]
pub struct ConformalMap {
    pub center: Point,
    pub radius: f64,
    /// Unit direction from `center` towards the fixed point x₀ = a + r·dir.
    pub direction: Point,
}

impl ConformalMap {
    pub fn new(center: Point, radius: f64, direction: Point) -> Result<Self> {
        let len = norm(direction);
        if !(radius > 0.0) || !(len > 0.0) {
            return invalid("conformal map needs a positive radius and a nonzero direction");
        }
        Ok(Self { center, radius, direction: [direction[0] / len, direction[1] / len] })
    }

    /// Inversion sphere touching the point `x0` from outside along the unit `outward` direction.
    pub fn touching(x0: Point, outward: Point, radius: f64) -> Result<Self> {
        let len = norm(outward);
        if !(len > 0.0) {
            return invalid("outward direction must be nonzero");
        }
        let d = [outward[0] / len, outward[1] / len];
        let center = [x0[0] + radius * d[0], x0[1] + radius * d[1]];
        Self::new(center, radius, [-d[0], -d[1]])
    }

    pub fn fixed_point(&self) -> Point {
        [
            self.center[0] + self.radius * self.direction[0],
            self.center[1] + self.radius * self.direction[1],
        ]
    }

    pub fn apply(&self, x: Point) -> Point {
        let d = sub(x, self.center);
        let q = self.radius * self.radius / dot(d, d);
        [d[0] * q + self.center[0], d[1] * q + self.center[1]]
    }

    pub fn try_apply(&self, x: Point) -> Result<Point> {
        if norm(sub(x, self.center)) <= 1e-12 * self.radius {
            return invalid("inversion evaluated at its singular center");
        }
        Ok(self.apply(x))
    }
}

/// Smooth closed curves bounding the supported domains. All shapes are
/// parametrized over t ∈ [0, 2π).
#[derive(Clone, Debug, PartialEq)]
pub enum Shape {
    Disk { center: Point, radius: f64 },
    /// Super-ellipse ((x₁−c₁)/a)⁴ + ((x₂−c₂)/b)² = 1: flat long sides with rounded caps, C^∞.
    Stadium { center: Point, half_length: f64, half_width: f64 },
    /// Disk whose radius is pushed inward by a C^∞ bump centred at angle `dent_angle`.
    DentedDisk { center: Point, radius: f64, dent_angle: f64, dent_half_width: f64, dent_depth: f64 },
    /// Image of `base` under the inversion `map` (requires the map's center outside the base closure).
    Inverted { base: Box<Shape>, map: ConformalMap },
}

fn bump(s: f64) -> f64 {
    if s.abs() >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s * s)).exp()
    }
}

impl Shape {
    pub fn disk(center: Point, radius: f64) -> Self {
        Shape::Disk { center, radius }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            Shape::Disk { radius, .. } if !(*radius > 0.0) => invalid("disk radius must be positive"),
            Shape::Stadium { half_length, half_width, .. } if !(*half_length > 0.0 && *half_width > 0.0) => {
                invalid("stadium half axes must be positive")
            }
            Shape::DentedDisk { radius, dent_half_width, dent_depth, .. }
                if !(*radius > 0.0 && *dent_half_width > 0.0 && *dent_half_width < PI)
                    || !(*dent_depth >= 0.0 && *dent_depth < 0.5 * *radius) =>
            {
                invalid("dented disk needs radius > 0, half width in (0, π), depth in [0, radius/2)")
            }
            Shape::Inverted { base, map } => {
                base.validate()?;
                if base.level(map.center) <= 0.0 {
                    return invalid("inversion center must lie outside the base domain");
                }
                Ok(())
            }
            _ => Ok(()),
        }
    }

    /// Reference point used for angular Σ specifications.
    pub fn center(&self) -> Point {
        match self {
            Shape::Disk { center, .. } | Shape::Stadium { center, .. } | Shape::DentedDisk { center, .. } => *center,
            Shape::Inverted { base, map } => map.apply(base.center()),
        }
    }

    fn radial(&self, t: f64) -> f64 {
        match self {
            Shape::Disk { radius, .. } => *radius,
            Shape::Stadium { half_length, half_width, .. } => {
                let (s, c) = t.sin_cos();
                let a = c.powi(4) / half_length.powi(4);
                let b = s * s / (half_width * half_width);
                let rho2 = if a < 1e-300 { 1.0 / b } else { 2.0 / (b + (b * b + 4.0 * a).sqrt()) };
                rho2.sqrt()
            }
            Shape::DentedDisk { radius, dent_angle, dent_half_width, dent_depth, .. } => {
                radius - dent_depth * bump(wrap_angle(t - dent_angle) / dent_half_width)
            }
            Shape::Inverted { .. } => unreachable!("inverted shapes are not star parametrized"),
        }
    }

    pub fn gamma(&self, t: f64) -> Point {
        match self {
            Shape::Inverted { base, map } => map.apply(base.gamma(t)),
            _ => {
                let c = self.center();
                let r = self.radial(t);
                [c[0] + r * t.cos(), c[1] + r * t.sin()]
            }
        }
    }

    fn gamma_d1(&self, t: f64) -> Point {
        if let Shape::Disk { radius, .. } = self {
            return [-radius * t.sin(), radius * t.cos()];
        }
        let w = [-1.0, 9.0, -45.0, 0.0, 45.0, -9.0, 1.0];
        let mut d = [0.0; 2];
        for (k, wk) in w.iter().enumerate() {
            let p = self.gamma(t + (k as f64 - 3.0) * FD_STEP);
            d[0] += wk * p[0];
            d[1] += wk * p[1];
        }
        [d[0] / (60.0 * FD_STEP), d[1] / (60.0 * FD_STEP)]
    }

    fn gamma_d2(&self, t: f64) -> Point {
        if let Shape::Disk { radius, .. } = self {
            return [-radius * t.cos(), -radius * t.sin()];
        }
        let w = [2.0, -27.0, 270.0, -490.0, 270.0, -27.0, 2.0];
        let mut d = [0.0; 2];
        for (k, wk) in w.iter().enumerate() {
            let p = self.gamma(t + (k as f64 - 3.0) * FD_STEP);
            d[0] += wk * p[0];
            d[1] += wk * p[1];
        }
        let s = 180.0 * FD_STEP * FD_STEP;
        [d[0] / s, d[1] / s]
    }

    /// +1 for counter-clockwise parametrizations, −1 otherwise.
    fn orientation(&self) -> f64 {
        match self {
            Shape::Inverted { base, .. } => -base.orientation(),
            _ => 1.0,
        }
    }

    /// Smooth level function: negative inside, zero on the curve.
    pub fn level(&self, x: Point) -> f64 {
        match self {
            Shape::Inverted { base, map } => {
                let d = sub(x, map.center);
                if dot(d, d) == 0.0 {
                    f64::INFINITY
                } else {
                    base.level(map.apply(x))
                }
            }
            _ => {
                let c = self.center();
                let d = sub(x, c);
                norm(d) - self.radial(d[1].atan2(d[0]))
            }
        }
    }

    pub fn contains(&self, x: Point) -> bool {
        self.level(x) < 0.0
    }

    fn initial_param(&self, x: Point) -> f64 {
        match self {
            Shape::Inverted { base, map } => base.initial_param(map.apply(x)),
            _ => {
                let d = sub(x, self.center());
                d[1].atan2(d[0])
            }
        }
    }

    pub fn normal(&self, t: f64) -> Point {
        let d = self.gamma_d1(t);
        let l = norm(d);
        let o = self.orientation();
        [o * d[1] / l, -o * d[0] / l]
    }

    /// Signed curvature, positive where the domain is locally convex.
    pub fn curvature(&self, t: f64) -> f64 {
        let d1 = self.gamma_d1(t);
        let d2 = self.gamma_d2(t);
        self.orientation() * (d1[0] * d2[1] - d1[1] * d2[0]) / norm(d1).powi(3)
    }

    fn speed(&self, t: f64) -> f64 {
        norm(self.gamma_d1(t))
    }

    /// Parameter of the closest curve point to `x`.
    pub fn closest_param(&self, x: Point) -> f64 {
        if let Shape::Disk { center, .. } = self {
            let d = sub(x, *center);
            return d[1].atan2(d[0]);
        }
        let newton = |mut t: f64| -> Option<f64> {
            for _ in 0..50 {
                let g = sub(self.gamma(t), x);
                let d1 = self.gamma_d1(t);
                let d2 = self.gamma_d2(t);
                let f = dot(g, d1);
                let df = dot(d1, d1) + dot(g, d2);
                if df <= 0.0 {
                    return None;
                }
                let step = f / df;
                t -= step;
                if step.abs() < 1e-14 {
                    return Some(t);
                }
            }
            None
        };
        let dist = |t: f64| norm(sub(self.gamma(t), x));
        if let Some(t) = newton(self.initial_param(x)) {
            // Accept if no coarse sample is clearly closer.
            let dt = dist(t);
            let coarse = (0..720).map(|k| k as f64 * 2.0 * PI / 720.0);
            let best = coarse.min_by(|a, b| dist(*a).total_cmp(&dist(*b))).unwrap();
            if dt <= dist(best) + 1e-12 {
                return t;
            }
            return newton(best).filter(|&t2| dist(t2) <= dist(best)).unwrap_or(best);
        }
        let best = (0..720)
            .map(|k| k as f64 * 2.0 * PI / 720.0)
            .min_by(|a, b| dist(*a).total_cmp(&dist(*b)))
            .unwrap();
        newton(best).filter(|&t2| dist(t2) <= dist(best)).unwrap_or(best)
    }

    pub fn tokens(&self) -> String {
        match self {
            Shape::Disk { center, radius } => format!("disk {} {} {}", center[0], center[1], radius),
            Shape::Stadium { center, half_length, half_width } => {
                format!("stadium {} {} {} {}", center[0], center[1], half_length, half_width)
            }
            Shape::DentedDisk { center, radius, dent_angle, dent_half_width, dent_depth } => format!(
                "dented {} {} {} {} {} {}",
                center[0], center[1], radius, dent_angle, dent_half_width, dent_depth
            ),
            Shape::Inverted { base, map } => format!(
                "inverted {} {} {} {} {} {}",
                map.center[0],
                map.center[1],
                map.radius,
                map.direction[0],
                map.direction[1],
                base.tokens()
            ),
        }
    }
}

fn parse_f64(tok: Option<&str>) -> Result<f64> {
    tok.ok_or_else(|| Error::Parse("unexpected end of record".into()))?
        .parse::<f64>()
        .map_err(|e| Error::Parse(e.to_string()))
}

pub(crate) fn parse_shape<'a>(it: &mut impl Iterator<Item = &'a str>) -> Result<Shape> {
    let kind = it.next().ok_or_else(|| Error::Parse("missing shape kind".into()))?;
    Ok(match kind {
        "disk" => Shape::Disk { center: [parse_f64(it.next())?, parse_f64(it.next())?], radius: parse_f64(it.next())? },
        "stadium" => Shape::Stadium {
            center: [parse_f64(it.next())?, parse_f64(it.next())?],
            half_length: parse_f64(it.next())?,
            half_width: parse_f64(it.next())?,
        },
        "dented" => Shape::DentedDisk {
            center: [parse_f64(it.next())?, parse_f64(it.next())?],
            radius: parse_f64(it.next())?,
            dent_angle: parse_f64(it.next())?,
            dent_half_width: parse_f64(it.next())?,
            dent_depth: parse_f64(it.next())?,
        },
        "inverted" => {
            let center = [parse_f64(it.next())?, parse_f64(it.next())?];
            let radius = parse_f64(it.next())?;
            let direction = [parse_f64(it.next())?, parse_f64(it.next())?];
            let base = parse_shape(it)?;
            Shape::Inverted { base: Box::new(base), map: ConformalMap { center, radius, direction } }
        }
        other => return Err(Error::Parse(format!("unknown shape kind {other}"))),
    })
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Label {
    Sigma,
    Gamma,
}

/// Rule assigning Σ/Γ labels to boundary points.
#[derive(Clone, Debug, PartialEq)]
pub enum SigmaSpec {
    /// Whole boundary is Σ (full-data configuration, Γ empty).
    Full,
    /// Boundary points whose angle about the shape center is within `half_angle`
    /// of the direction towards `toward`.
    Arc { toward: Point, half_angle: f64 },
    /// Labels pulled back through an inversion: p is Σ iff ψ(p) is Σ for `inner`
    /// measured about `base_center`.
    Mapped { map: ConformalMap, base_center: Point, inner: Box<SigmaSpec> },
}

impl SigmaSpec {
    pub fn arc(toward: Point, half_angle: f64) -> Self {
        SigmaSpec::Arc { toward, half_angle }
    }

    pub fn validate(&self) -> Result<()> {
        match self {
            SigmaSpec::Arc { half_angle, .. } if !(*half_angle > 0.0) => invalid("Σ arc is empty (half angle must be positive)"),
            SigmaSpec::Mapped { inner, .. } => inner.validate(),
            _ => Ok(()),
        }
    }

    pub fn label(&self, p: Point, center: Point) -> Label {
        let sigma = match self {
            SigmaSpec::Full => true,
            SigmaSpec::Arc { toward, half_angle } => {
                let u = sub(p, center);
                let v = sub(*toward, center);
                let ang = (u[0] * v[1] - u[1] * v[0]).atan2(dot(u, v)).abs();
                ang < *half_angle
            }
            SigmaSpec::Mapped { map, base_center, inner } => inner.label(map.apply(p), *base_center) == Label::Sigma,
        };
        if sigma {
            Label::Sigma
        } else {
            Label::Gamma
        }
    }

    pub fn tokens(&self) -> String {
        match self {
            SigmaSpec::Full => "full".into(),
            SigmaSpec::Arc { toward, half_angle } => format!("arc {} {} {}", toward[0], toward[1], half_angle),
            SigmaSpec::Mapped { map, base_center, inner } => format!(
                "mapped {} {} {} {} {} {} {} {}",
                map.center[0],
                map.center[1],
                map.radius,
                map.direction[0],
                map.direction[1],
                base_center[0],
                base_center[1],
                inner.tokens()
            ),
        }
    }
}

pub(crate) fn parse_sigma<'a>(it: &mut impl Iterator<Item = &'a str>) -> Result<SigmaSpec> {
    let kind = it.next().ok_or_else(|| Error::Parse("missing sigma kind".into()))?;
    Ok(match kind {
        "full" => SigmaSpec::Full,
        "arc" => SigmaSpec::Arc { toward: [parse_f64(it.next())?, parse_f64(it.next())?], half_angle: parse_f64(it.next())? },
        "mapped" => {
            let center = [parse_f64(it.next())?, parse_f64(it.next())?];
            let radius = parse_f64(it.next())?;
            let direction = [parse_f64(it.next())?, parse_f64(it.next())?];
            let base_center = [parse_f64(it.next())?, parse_f64(it.next())?];
            let inner = parse_sigma(it)?;
            SigmaSpec::Mapped { map: ConformalMap { center, radius, direction }, base_center, inner: Box::new(inner) }
        }
        other => return Err(Error::Parse(format!("unknown sigma kind {other}"))),
    })
}

/// Uniform lattice aligned with the global grid x = iΔx, y = jΔx.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Lattice {
    pub dx: f64,
    pub i0: i64,
    pub j0: i64,
    pub nx: usize,
    pub ny: usize,
}

impl Lattice {
    pub fn coord(&self, i: usize, j: usize) -> Point {
        [(self.i0 + i as i64) as f64 * self.dx, (self.j0 + j as i64) as f64 * self.dx]
    }

    pub fn flat(&self, i: usize, j: usize) -> usize {
        j * self.nx + i
    }

    /// Fractional lattice coordinates of `p`.
    pub fn locate(&self, p: Point) -> [f64; 2] {
        [p[0] / self.dx - self.i0 as f64, p[1] / self.dx - self.j0 as f64]
    }

    pub fn offset(&self, i: usize, j: usize, di: i64, dj: i64) -> Option<(usize, usize)> {
        let a = i as i64 + di;
        let b = j as i64 + dj;
        (a >= 0 && b >= 0 && (a as usize) < self.nx && (b as usize) < self.ny).then_some((a as usize, b as usize))
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum NodeKind {
    Exterior,
    Interior(usize),
    Ghost(usize),
}

#[derive(Clone, Debug)]
pub struct BoundaryNode {
    pub t: f64,
    pub arclength: f64,
    pub point: Point,
    pub normal: Point,
    pub weight: f64,
    pub curvature: f64,
    pub label: Label,
}

/// Exterior lattice node carrying an extrapolated value, with its closest boundary point.
#[derive(Clone, Debug)]
pub struct Ghost {
    pub ij: (usize, usize),
    pub t: f64,
    pub anchor: Point,
    pub normal: Point,
    pub distance: f64,
    pub curvature: f64,
    pub label: Label,
}

pub struct Domain {
    pub shape: Shape,
    pub sigma: SigmaSpec,
    pub resolution: usize,
    pub lattice: Lattice,
    kinds: Vec<NodeKind>,
    pub interior: Vec<(usize, usize)>,
    pub ghosts: Vec<Ghost>,
    pub boundary: Vec<BoundaryNode>,
    /// Quadrature weight per interior node (cut-cell areas, exterior slivers folded in).
    pub weights: Vec<f64>,
    pub perimeter: f64,
    pub hash: u64,
}

impl std::fmt::Debug for Domain {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Domain")
            .field("shape", &self.shape)
            .field("resolution", &self.resolution)
            .field("interior", &self.interior.len())
            .field("ghosts", &self.ghosts.len())
            .field("boundary", &self.boundary.len())
            .finish()
    }
}

struct ArclengthTable {
    cumulative: Vec<f64>,
}

impl ArclengthTable {
    fn new(shape: &Shape) -> Self {
        let h = 2.0 * PI / ARCLENGTH_PANELS as f64;
        let mut cumulative = Vec::with_capacity(ARCLENGTH_PANELS + 1);
        cumulative.push(0.0);
        let mut acc = 0.0;
        for k in 0..ARCLENGTH_PANELS {
            let a = k as f64 * h;
            let panel: f64 = GAUSS5.iter().map(|(x, w)| w * shape.speed(a + 0.5 * h * (x + 1.0))).sum();
            acc += 0.5 * h * panel;
            cumulative.push(acc);
        }
        Self { cumulative }
    }

    fn total(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Parameter t with arclength s(t) = target.
    fn invert(&self, shape: &Shape, target: f64) -> f64 {
        let h = 2.0 * PI / ARCLENGTH_PANELS as f64;
        let k = self.cumulative.partition_point(|&c| c <= target).saturating_sub(1).min(ARCLENGTH_PANELS - 1);
        let a = k as f64 * h;
        let mut t = a + h * (target - self.cumulative[k]) / (self.cumulative[k + 1] - self.cumulative[k]);
        for _ in 0..20 {
            let s = self.cumulative[k]
                + 0.5 * (t - a) * GAUSS5.iter().map(|(x, w)| w * shape.speed(a + 0.5 * (t - a) * (x + 1.0))).sum::<f64>();
            let step = (s - target) / shape.speed(t);
            t -= step;
            if step.abs() < 1e-15 {
                break;
            }
        }
        t
    }
}

impl Domain {
    /// Builds the discretized domain. `resolution` is the node count per unit length.
    pub fn build(shape: Shape, resolution: usize, sigma: SigmaSpec) -> Result<Self> {
        if resolution < MIN_RESOLUTION {
            return invalid(format!("resolution {resolution} below minimum {MIN_RESOLUTION} nodes per unit length"));
        }
        shape.validate()?;
        sigma.validate()?;
        let dx = 1.0 / resolution as f64;
        let table = ArclengthTable::new(&shape);
        let perimeter = table.total();

        let mut lo = [f64::INFINITY; 2];
        let mut hi = [f64::NEG_INFINITY; 2];
        for k in 0..ARCLENGTH_PANELS {
            let p = shape.gamma(k as f64 * 2.0 * PI / ARCLENGTH_PANELS as f64);
            for d in 0..2 {
                lo[d] = lo[d].min(p[d]);
                hi[d] = hi[d].max(p[d]);
            }
        }
        let i0 = (lo[0] / dx).floor() as i64 - 8;
        let j0 = (lo[1] / dx).floor() as i64 - 8;
        let nx = ((hi[0] / dx).ceil() as i64 + 8 - i0 + 1) as usize;
        let ny = ((hi[1] / dx).ceil() as i64 + 8 - j0 + 1) as usize;
        let lattice = Lattice { dx, i0, j0, nx, ny };

        let mut kinds = vec![NodeKind::Exterior; nx * ny];
        let mut levels = vec![0.0; nx * ny];
        let mut interior = Vec::new();
        for j in 0..ny {
            for i in 0..nx {
                let lv = shape.level(lattice.coord(i, j));
                levels[lattice.flat(i, j)] = lv;
                if lv < 0.0 {
                    kinds[lattice.flat(i, j)] = NodeKind::Interior(interior.len());
                    interior.push((i, j));
                }
            }
        }
        if interior.is_empty() {
            return invalid("domain contains no lattice nodes at this resolution");
        }

        let center = shape.center();
        let boundary_count = (perimeter / dx).ceil() as usize;
        let spacing = perimeter / boundary_count as f64;
        let boundary: Vec<BoundaryNode> = (0..boundary_count)
            .map(|k| {
                let s = k as f64 * spacing;
                let t = table.invert(&shape, s);
                let point = shape.gamma(t);
                BoundaryNode {
                    t,
                    arclength: s,
                    point,
                    normal: shape.normal(t),
                    weight: spacing,
                    curvature: shape.curvature(t),
                    label: sigma.label(point, center),
                }
            })
            .collect();

        // Ghost layer: exterior nodes reached by the 13-point stencil, closed under probe interpolation.
        let mut ghost_nodes: Vec<(usize, usize)> = Vec::new();
        let mut ghost_data: Vec<Ghost> = Vec::new();
        let stencil = crate::biharmonic_core::STENCIL13;
        let mark = |ij: (usize, usize), kinds: &mut Vec<NodeKind>, ghost_nodes: &mut Vec<(usize, usize)>| {
            let f = lattice.flat(ij.0, ij.1);
            if kinds[f] == NodeKind::Exterior {
                kinds[f] = NodeKind::Ghost(ghost_nodes.len());
                ghost_nodes.push(ij);
            }
        };
        for &(i, j) in &interior {
            for &(di, dj, _) in stencil.iter() {
                let nb = lattice.offset(i, j, di, dj).expect("lattice margin too small");
                mark(nb, &mut kinds, &mut ghost_nodes);
            }
        }
        let mut probe_points: Vec<Point> = Vec::new();
        for b in &boundary {
            for &k in TRACE_PROBES.iter() {
                probe_points.push([b.point[0] - k * dx * b.normal[0], b.point[1] - k * dx * b.normal[1]]);
            }
        }
        let mut processed = 0;
        loop {
            while ghost_data.len() < ghost_nodes.len() {
                let ij = ghost_nodes[ghost_data.len()];
                let x = lattice.coord(ij.0, ij.1);
                let t = shape.closest_param(x);
                let anchor = shape.gamma(t);
                let normal = shape.normal(t);
                let distance = dot(sub(x, anchor), normal);
                ghost_data.push(Ghost {
                    ij,
                    t,
                    anchor,
                    normal,
                    distance,
                    curvature: shape.curvature(t),
                    label: sigma.label(anchor, center),
                });
                for &k in CLOSURE_PROBES.iter() {
                    probe_points.push([anchor[0] - k * dx * normal[0], anchor[1] - k * dx * normal[1]]);
                }
            }
            if processed == probe_points.len() {
                break;
            }
            while processed < probe_points.len() {
                let f = lattice.locate(probe_points[processed]);
                let bi = f[0].floor() as i64 - (PROBE_BLOCK as i64 / 2 - 1);
                let bj = f[1].floor() as i64 - (PROBE_BLOCK as i64 / 2 - 1);
                for dj in 0..PROBE_BLOCK as i64 {
                    for di in 0..PROBE_BLOCK as i64 {
                        let ij = lattice.offset(0, 0, bi + di, bj + dj).expect("lattice margin too small");
                        mark(ij, &mut kinds, &mut ghost_nodes);
                    }
                }
                processed += 1;
            }
        }

        let weights = cut_cell_weights(&shape, &lattice, &kinds, &levels, interior.len());

        let header = format!("{}|{}|{}", shape.tokens(), sigma.tokens(), resolution);
        let hash = fnv1a(header.as_bytes());
        Ok(Self {
            shape,
            sigma,
            resolution,
            lattice,
            kinds,
            interior,
            ghosts: ghost_data,
            boundary,
            weights,
            perimeter,
            hash,
        })
    }

    pub fn dx(&self) -> f64 {
        self.lattice.dx
    }

    pub fn n_interior(&self) -> usize {
        self.interior.len()
    }

    pub fn n_ghost(&self) -> usize {
        self.ghosts.len()
    }

    pub fn kind(&self, i: usize, j: usize) -> NodeKind {
        self.kinds[self.lattice.flat(i, j)]
    }

    pub fn kind_at_offset(&self, i: usize, j: usize, di: i64, dj: i64) -> NodeKind {
        match self.lattice.offset(i, j, di, dj) {
            Some((a, b)) => self.kind(a, b),
            None => NodeKind::Exterior,
        }
    }

    pub fn interior_point(&self, k: usize) -> Point {
        let (i, j) = self.interior[k];
        self.lattice.coord(i, j)
    }

    pub fn ghost_point(&self, g: usize) -> Point {
        let (i, j) = self.ghosts[g].ij;
        self.lattice.coord(i, j)
    }

    pub fn interior_points(&self) -> Vec<Point> {
        (0..self.n_interior()).map(|k| self.interior_point(k)).collect()
    }

    pub fn area(&self) -> f64 {
        self.weights.iter().sum()
    }

    pub fn label_at(&self, p: Point) -> Label {
        self.sigma.label(p, self.shape.center())
    }

    pub fn sigma_nodes(&self) -> impl Iterator<Item = (usize, &BoundaryNode)> {
        self.boundary.iter().enumerate().filter(|(_, b)| b.label == Label::Sigma)
    }

    pub fn gamma_nodes(&self) -> impl Iterator<Item = (usize, &BoundaryNode)> {
        self.boundary.iter().enumerate().filter(|(_, b)| b.label == Label::Gamma)
    }

    pub fn has_gamma(&self) -> bool {
        self.boundary.iter().any(|b| b.label == Label::Gamma)
    }

    /// Builds and additionally requires a nonempty Γ.
    pub fn build_partial(shape: Shape, resolution: usize, sigma: SigmaSpec) -> Result<Self> {
        let d = Self::build(shape, resolution, sigma)?;
        if !d.has_gamma() {
            return invalid("configuration requires a nonempty Γ");
        }
        Ok(d)
    }

    pub fn diameter(&self) -> f64 {
        let mut best: f64 = 0.0;
        let step = (self.boundary.len() / 256).max(1);
        for a in self.boundary.iter().step_by(step) {
            for b in self.boundary.iter().step_by(step) {
                best = best.max(norm(sub(a.point, b.point)));
            }
        }
        best
    }

    pub fn bounding_box(&self) -> (Point, Point) {
        let l = &self.lattice;
        (l.coord(0, 0), l.coord(l.nx - 1, l.ny - 1))
    }

    /// Serializes to the versioned text format described in FORMATS.md.
    pub fn to_text(&self) -> String {
        let l = &self.lattice;
        let mut s = String::new();
        let _ = writeln!(s, "CGOBIH-DOMAIN 1");
        let _ = writeln!(s, "shape {}", self.shape.tokens());
        let _ = writeln!(s, "sigma {}", self.sigma.tokens());
        let _ = writeln!(s, "resolution {}", self.resolution);
        let _ = writeln!(s, "lattice {} {} {} {} {}", l.dx, l.i0, l.j0, l.nx, l.ny);
        let _ = writeln!(s, "hash {:016x}", self.hash);
        let _ = writeln!(s, "interior {}", self.interior.len());
        for (k, &(i, j)) in self.interior.iter().enumerate() {
            let p = l.coord(i, j);
            let _ = writeln!(s, "{} {} {} {} {}", i, j, p[0], p[1], self.weights[k]);
        }
        let _ = writeln!(s, "ghosts {}", self.ghosts.len());
        for g in &self.ghosts {
            let p = l.coord(g.ij.0, g.ij.1);
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {} {} {} {}",
                g.ij.0,
                g.ij.1,
                p[0],
                p[1],
                g.t,
                g.anchor[0],
                g.anchor[1],
                g.normal[0],
                g.normal[1],
                g.distance,
                g.curvature,
                label_token(g.label)
            );
        }
        let _ = writeln!(s, "boundary {}", self.boundary.len());
        for b in &self.boundary {
            let _ = writeln!(
                s,
                "{} {} {} {} {} {} {} {} {}",
                b.t,
                b.arclength,
                b.point[0],
                b.point[1],
                b.normal[0],
                b.normal[1],
                b.weight,
                b.curvature,
                label_token(b.label)
            );
        }
        let _ = writeln!(s, "end");
        s
    }

    /// Parses a dump, rebuilds the domain from its header and checks that the
    /// recorded node sets agree with the rebuilt ones.
    pub fn from_text(text: &str) -> Result<Self> {
        let mut lines = text.lines();
        let magic = lines.next().unwrap_or_default();
        if magic.trim() != "CGOBIH-DOMAIN 1" {
            return Err(Error::Parse(format!("unsupported header {magic:?}")));
        }
        let mut field = |name: &str| -> Result<String> {
            let line = lines.next().ok_or_else(|| Error::Parse(format!("missing {name} record")))?;
            line.strip_prefix(name)
                .map(|r| r.trim().to_string())
                .ok_or_else(|| Error::Parse(format!("expected {name} record, got {line:?}")))
        };
        let shape_rec = field("shape")?;
        let sigma_rec = field("sigma")?;
        let resolution: usize = field("resolution")?.parse().map_err(|_| Error::Parse("bad resolution".into()))?;
        let _lattice = field("lattice")?;
        let hash = u64::from_str_radix(&field("hash")?, 16).map_err(|_| Error::Parse("bad hash".into()))?;
        let n_interior: usize = field("interior")?.parse().map_err(|_| Error::Parse("bad interior count".into()))?;
        let shape = parse_shape(&mut shape_rec.split_whitespace())?;
        let sigma = parse_sigma(&mut sigma_rec.split_whitespace())?;
        let domain = Self::build(shape, resolution, sigma)?;
        if domain.hash != hash || domain.interior.len() != n_interior {
            return Err(Error::Parse("domain dump does not match its rebuilt geometry".into()));
        }
        Ok(domain)
    }
}

fn label_token(l: Label) -> &'static str {
    match l {
        Label::Sigma => "S",
        Label::Gamma => "G",
    }
}

/// Area of {φ < 0} inside a triangle with linear φ given at its vertices.
fn triangle_negative_area(p: [Point; 3], f: [f64; 3]) -> f64 {
    let area = |a: Point, b: Point, c: Point| 0.5 * ((b[0] - a[0]) * (c[1] - a[1]) - (c[0] - a[0]) * (b[1] - a[1])).abs();
    let neg: Vec<usize> = (0..3).filter(|&k| f[k] < 0.0).collect();
    let full = area(p[0], p[1], p[2]);
    let cut = |a: usize, b: usize| -> Point {
        let s = f[a] / (f[a] - f[b]);
        [p[a][0] + s * (p[b][0] - p[a][0]), p[a][1] + s * (p[b][1] - p[a][1])]
    };
    match neg.len() {
        0 => 0.0,
        3 => full,
        1 => {
            let a = neg[0];
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            area(p[a], cut(a, b), cut(a, c))
        }
        _ => {
            let a = (0..3).find(|k| f[*k] >= 0.0).unwrap();
            let (b, c) = ((a + 1) % 3, (a + 2) % 3);
            full - area(p[a], cut(a, b), cut(a, c))
        }
    }
}

fn cut_cell_weights(shape: &Shape, lattice: &Lattice, kinds: &[NodeKind], levels: &[f64], n_interior: usize) -> Vec<f64> {
    const SUB: usize = 8;
    let dx = lattice.dx;
    let cell = dx * dx;
    let mut weights = vec![0.0; n_interior];
    for j in 0..lattice.ny {
        for i in 0..lattice.nx {
            let f = lattice.flat(i, j);
            let near = levels[f].abs() < 3.0 * dx;
            let area = if !near {
                if levels[f] < 0.0 {
                    cell
                } else {
                    0.0
                }
            } else {
                let c = lattice.coord(i, j);
                let h = dx / SUB as f64;
                let x0 = c[0] - 0.5 * dx;
                let y0 = c[1] - 0.5 * dx;
                let mut corner = vec![0.0; (SUB + 1) * (SUB + 1)];
                for b in 0..=SUB {
                    for a in 0..=SUB {
                        corner[b * (SUB + 1) + a] = shape.level([x0 + a as f64 * h, y0 + b as f64 * h]);
                    }
                }
                let mut acc = 0.0;
                for b in 0..SUB {
                    for a in 0..SUB {
                        let p00 = [x0 + a as f64 * h, y0 + b as f64 * h];
                        let p10 = [p00[0] + h, p00[1]];
                        let p01 = [p00[0], p00[1] + h];
                        let p11 = [p00[0] + h, p00[1] + h];
                        let f00 = corner[b * (SUB + 1) + a];
                        let f10 = corner[b * (SUB + 1) + a + 1];
                        let f01 = corner[(b + 1) * (SUB + 1) + a];
                        let f11 = corner[(b + 1) * (SUB + 1) + a + 1];
                        acc += triangle_negative_area([p00, p10, p11], [f00, f10, f11]);
                        acc += triangle_negative_area([p00, p11, p01], [f00, f11, f01]);
                    }
                }
                acc
            };
            if area <= 0.0 {
                continue;
            }
            match kinds[f] {
                NodeKind::Interior(k) => weights[k] += area,
                _ => {
                    // Fold the exterior sliver into the nearest interior node.
                    let c = lattice.coord(i, j);
                    let mut best: Option<(f64, usize)> = None;
                    for dj in -2..=2 {
                        for di in -2..=2 {
                            if let Some((a, b)) = lattice.offset(i, j, di, dj) {
                                if let NodeKind::Interior(k) = kinds[lattice.flat(a, b)] {
                                    let d = norm(sub(lattice.coord(a, b), c));
                                    if best.map_or(true, |(bd, _)| d < bd) {
                                        best = Some((d, k));
                                    }
                                }
                            }
                        }
                    }
                    if let Some((_, k)) = best {
                        weights[k] += area;
                    }
                }
            }
        }
    }
    weights
}

/// H_K(y) = max over the finite set K of x·y.
pub fn support_function(k: &[Point], y: Point) -> Result<f64> {
    if k.is_empty() {
        return invalid("support function of an empty set");
    }
    Ok(k.iter().map(|x| x[0] * y[0] + x[1] * y[1]).fold(f64::NEG_INFINITY, f64::max))
}

/// Domain normalized so that Ω ⊂ B(−e₁, 1) and Γ ⊂ {x₁ < −2c}.
#[derive(Clone, Debug)]
pub struct NormalizedConfiguration {
    pub domain: Arc<Domain>,
    pub c: f64,
}

impl NormalizedConfiguration {
    pub fn new(domain: Arc<Domain>, c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return invalid("offset c must be positive");
        }
        for k in 0..domain.n_interior() {
            let p = domain.interior_point(k);
            if (p[0] + 1.0).hypot(p[1]) >= 1.0 {
                return invalid(format!("interior node {p:?} lies outside B(−e₁, 1)"));
            }
        }
        let gamma_bad = domain.gamma_nodes().any(|(_, b)| b.point[0] >= -2.0 * c)
            || domain.ghosts.iter().any(|g| g.label == Label::Gamma && g.anchor[0] >= -2.0 * c);
        if gamma_bad {
            return invalid(format!("Γ is not contained in {{x₁ < −2c}} for c = {c}"));
        }
        Ok(Self { domain, c })
    }

    /// Largest admissible c for this domain (Γ ⊂ {x₁ < −2c}), scaled by `margin` < 1.
    pub fn max_offset(domain: &Domain, margin: f64) -> f64 {
        let gmax = domain
            .gamma_nodes()
            .map(|(_, b)| b.point[0])
            .chain(domain.ghosts.iter().filter(|g| g.label == Label::Gamma).map(|g| g.anchor[0]))
            .fold(f64::NEG_INFINITY, f64::max);
        -0.5 * gmax * margin
    }
}

/// Reference configuration: Ω = B(−e₁, 1) with Σ the arc within `half_angle` of the origin.
pub fn reference_disk(resolution: usize, half_angle: f64) -> Result<Domain> {
    Domain::build(Shape::disk([-1.0, 0.0], 1.0), resolution, SigmaSpec::arc([0.0, 0.0], half_angle))
}

/// Smooth transition used by cutoffs: 1 for d ≤ inner, 0 for d ≥ inner + width.
pub fn plateau(d: f64, inner: f64, width: f64) -> f64 {
    1.0 - smoothstep5((d - inner) / width)
}

/// Image domain ψ(Ω) with Σ labels pulled back through ψ.
pub fn kelvin_image(domain: &Domain, map: &ConformalMap) -> Result<Domain> {
    let shape = Shape::Inverted { base: Box::new(domain.shape.clone()), map: map.clone() };
    let sigma = SigmaSpec::Mapped { map: map.clone(), base_center: domain.shape.center(), inner: Box::new(domain.sigma.clone()) };
    Domain::build(shape, domain.resolution, sigma)
}

/// Kelvin-type transform u*(x) = r^(n−4) |x − a|^(4−n) u(ψ(x)) sampled on `target`, which
/// must lie inside ψ(Ω). Values at ψ(x) come from degree-5 tensor interpolation of `u`
/// (blocks shifted inward near the boundary, degree lowered only if no block fits).
pub fn kelvin_transform(u: &Field, map: &ConformalMap, n: usize, target: &Arc<Domain>) -> Result<Field> {
    if n < 2 {
        return invalid("dimension must be at least 2");
    }
    let a = map.center;
    if target.shape.level(a) <= 0.0 {
        return invalid("inversion center lies inside the image domain");
    }
    let eval = |x: Point| -> Result<Option<C64>> {
        let y = map.try_apply(x)?;
        let w = map.radius.powi(n as i32 - 4) * norm(sub(x, a)).powi(4 - n as i32);
        Ok([6usize, 5, 4, 3].iter().find_map(|&m| u.interpolate(y, m)).map(|v| v * w))
    };
    let mut values = Vec::with_capacity(target.n_interior());
    for k in 0..target.n_interior() {
        let p = target.interior_point(k);
        values.push(eval(p)?.ok_or_else(|| Error::UnderResolved(format!("no interpolation block for ψ({p:?})")))?);
    }
    let mut ghosts = Vec::with_capacity(target.n_ghost());
    for g in 0..target.n_ghost() {
        match eval(target.ghost_point(g))? {
            Some(v) => ghosts.push(v),
            None => break,
        }
    }
    let mut out = Field::new(target, values)?;
    if ghosts.len() == target.n_ghost() {
        out.ghosts = Some(ghosts);
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn disk_perimeter_and_area() {
        let d = reference_disk(64, PI / 6.0).unwrap();
        let total: f64 = d.boundary.iter().map(|b| b.weight).sum();
        assert!((total - 2.0 * PI).abs() < 1e-10);
        assert!((d.area() - PI).abs() / PI < 1e-3, "area {}", d.area());
        assert!(d.boundary.iter().all(|b| (norm(b.normal) - 1.0).abs() < 1e-12));
    }

    #[test]
    fn origin_is_sigma() {
        let d = reference_disk(64, PI / 6.0).unwrap();
        assert_eq!(d.label_at([0.0, 0.0]), Label::Sigma);
        assert_eq!(d.label_at([-2.0, 0.0]), Label::Gamma);
    }

    #[test]
    fn stadium_closest_point() {
        let s = Shape::Stadium { center: [0.0, 0.0], half_length: 1.0, half_width: 0.5 };
        let t = s.closest_param([0.3, 0.7]);
        let p = s.gamma(t);
        let n = s.normal(t);
        let r = sub([0.3, 0.7], p);
        assert!((r[0] * n[1] - r[1] * n[0]).abs() < 1e-9);
    }

    fn kelvin_setup(res: usize) -> (Arc<Domain>, Arc<Domain>, ConformalMap) {
        let base = Arc::new(Domain::build(Shape::disk([0.0, 0.0], 0.5), res, SigmaSpec::Full).unwrap());
        let map = ConformalMap::new([1.5, 0.0], 1.5, [-1.0, 0.0]).unwrap();
        let image = Arc::new(kelvin_image(&base, &map).unwrap());
        (base, image, map)
    }

    #[test]
    fn kelvin_of_zero_is_zero() {
        let (base, image, map) = kelvin_setup(32);
        let z = Field::from_fn(&base, |_| C64::new(0.0, 0.0));
        let k = kelvin_transform(&z, &map, 2, &image).unwrap();
        assert!(k.values.iter().all(|v| v.norm() == 0.0));
    }

    #[test]
    fn kelvin_preserves_biharmonicity_at_second_order() {
        let residual = |res| {
            let (base, image, map) = kelvin_setup(res);
            let u = Field::from_fn(&base, |p| C64::new(p[0].exp() * p[1].cos(), 0.0));
            let k = kelvin_transform(&u, &map, 2, &image).unwrap();
            crate::biharmonic_core::bilaplacian_13(&k).into_iter().flatten().map(|v| v.norm()).fold(0.0, f64::max)
        };
        let (r1, r2) = (residual(64), residual(128));
        let order = (r1 / r2).log2();
        assert!(order > 1.7, "residuals {r1} {r2}");
    }

    #[test]
    fn kelvin_is_an_involution() {
        let (base, image, map) = kelvin_setup(48);
        let u = Field::from_fn(&base, |p| C64::new((2.0 * p[0]).sin(), p[1] * p[0]));
        let k = kelvin_transform(&u, &map, 2, &image).unwrap();
        let back = kelvin_transform(&k, &map, 2, &base).unwrap();
        let err = u.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
        assert!(err < base.dx().powi(2), "err {err}");
    }

    #[test]
    fn inversion_is_involutive() {
        let map = ConformalMap::touching([0.0, 0.0], [1.0, 0.0], 0.7).unwrap();
        let x = [-0.3, 0.4];
        let y = map.apply(map.apply(x));
        assert!(norm(sub(x, y)) < 1e-12);
        assert!(norm(sub(map.apply(map.fixed_point()), map.fixed_point())) < 1e-15);
    }
}
