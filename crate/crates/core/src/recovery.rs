//! Isotropic splitting z = ξ + η, the solution-pair pairings and their combinations
//! isolating ∫a^k e^{−ix·z/h}, the weighted transform bounds, and a desk-scale
//! reconstruction of the coefficients on a window next to Σ.

use std::collections::HashMap;
use std::f64::consts::PI;
use std::sync::{Arc, Mutex, RwLock};

use rayon::prelude::*;

use crate::biharmonic_core::{DiscreteOperator, Field, SOLVER_TOL};
use crate::error::{invalid, Error, Result};
use crate::geometry::{norm, sub, Domain, Point};
use crate::linearized_dn::PerturbationQ;
use crate::numerics::{fit_slope, gauss_hermite, C64, I};
use crate::segal_bargmann::{transform_complex, LogComplex};
use crate::special_solutions::{make_special_solution, min_scale, AmplitudeTag, Cutoff, IsotropicVector};

const ZERO: C64 = C64 { re: 0.0, im: 0.0 };

/// Recovery parameters (c, ε, a) with ε < c/8C and a > (c + 4ε)/ε².
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct RecoveryParams {
    pub c: f64,
    pub eps: f64,
    pub a: f64,
}

impl RecoveryParams {
    /// ε = min(0.1, c/16), a = 1.1(c + 4ε)/ε².
    pub fn defaults(c: f64) -> Result<Self> {
        if !(c > 0.0) {
            return invalid("c must be positive");
        }
        let eps = (c / 16.0).min(0.1);
        Ok(Self { c, eps, a: 1.1 * (c + 4.0 * eps) / (eps * eps) })
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.c > 0.0 && self.eps > 0.0 && self.eps < 1.0 && self.a > 0.0) {
            return invalid("recovery parameters need c > 0, ε ∈ (0, 1), a > 0");
        }
        Ok(())
    }

    /// Tube centre 2ia e₁.
    pub fn tube_center(&self) -> [C64; 2] {
        [C64::new(0.0, 2.0 * self.a), ZERO]
    }
}

/// z = ξ + η with ξ·ξ = 0 = η·η.
#[derive(Clone, Copy, Debug)]
pub struct FrequencyDecomposition {
    pub z: [C64; 2],
    pub a: f64,
    pub eps: f64,
    pub xi: IsotropicVector,
    pub eta: IsotropicVector,
    /// |z − 2ia e₁| < 2εa.
    pub in_tube: bool,
    /// Im ξ₁ ≥ a/4 and Im η₁ ≥ a/4.
    pub constraint: bool,
    /// max(|ξ − a(ie₁ + e₂)|, |η + a(e₂ − ie₁)|) / |z − 2ia e₁|, the realized C in the tube estimate.
    pub constant: f64,
}

/// Closed-form split z = μ(1, −i) + λ(1, i), λ = (z₁ − iz₂)/2, μ = (z₁ + iz₂)/2,
/// with ξ = μ(1, −i) ≈ a(ie₁ + e₂) and η = λ(1, i) ≈ a(ie₁ − e₂) near 2ia e₁.
pub fn isotropic_decompose(z: [C64; 2], a: f64, eps: f64) -> Result<FrequencyDecomposition> {
    if !(a > 0.0) {
        return invalid("a must be positive");
    }
    let lambda = (z[0] - I * z[1]) * 0.5;
    let mu = (z[0] + I * z[1]) * 0.5;
    let xi = IsotropicVector([mu, -I * mu]);
    let eta = IsotropicVector([lambda, I * lambda]);
    let c0 = [z[0] - C64::new(0.0, 2.0 * a), z[1]];
    let dist = (c0[0].norm_sqr() + c0[1].norm_sqr()).sqrt();
    let dxi = [xi.0[0] - C64::new(0.0, a), xi.0[1] - a];
    let deta = [eta.0[0] - C64::new(0.0, a), eta.0[1] + a];
    let e1 = (dxi[0].norm_sqr() + dxi[1].norm_sqr()).sqrt();
    let e2 = (deta[0].norm_sqr() + deta[1].norm_sqr()).sqrt();
    let constant = if dist > 0.0 { e1.max(e2) / dist } else { 0.0 };
    Ok(FrequencyDecomposition {
        z,
        a,
        eps,
        xi,
        eta,
        in_tube: dist < 2.0 * eps * a,
        constraint: xi.0[0].im >= 0.25 * a && eta.0[0].im >= 0.25 * a,
        constant,
    })
}

/// Where the moments come from.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum Provenance {
    /// Principal parts only, H known: exact pairings at any frequency.
    Synthetic,
    /// Special solutions with solved remainders on the discretized domain.
    SpecialSolutions,
}

/// Coefficient slots of Q = a²Δ + a¹·∇ + a⁰ in recovery order.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub enum Coefficient {
    A2,
    A1(usize),
    A0,
}

impl Coefficient {
    pub fn name(&self) -> String {
        match self {
            Coefficient::A2 => "a2".into(),
            Coefficient::A1(j) => format!("a1_{}", j + 1),
            Coefficient::A0 => "a0".into(),
        }
    }

    pub fn prerequisites(&self) -> Vec<Coefficient> {
        match self {
            Coefficient::A2 => vec![],
            Coefficient::A1(_) => vec![Coefficient::A2],
            Coefficient::A0 => vec![Coefficient::A2, Coefficient::A1(0), Coefficient::A1(1)],
        }
    }
}

/// How an earlier pipeline stage was disposed of.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum Clearance {
    /// Declared zero on {x₁ > −δ}; later stages carry its residue as contamination.
    Zeroed { delta: f64 },
    /// Recovered; later stages subtract its moments.
    Recovered,
}

type FreqKey = [u64; 5];

fn freq_key(xi: &IsotropicVector, h: f64) -> FreqKey {
    [xi.0[0].re.to_bits(), xi.0[0].im.to_bits(), xi.0[1].re.to_bits(), xi.0[1].im.to_bits(), h.to_bits()]
}

type PairKey = (AmplitudeTag, AmplitudeTag, FreqKey, FreqKey);

/// I(u, v) = ∫_Ω (a²Δu + a¹·∇u + a⁰u) v dx for special-solution pairs, cached.
pub struct MomentOracle {
    hq: PerturbationQ,
    provenance: Provenance,
    solver: Option<(Arc<DiscreteOperator>, Arc<Cutoff>)>,
    support: Vec<usize>,
    remainders: RwLock<HashMap<(AmplitudeTag, FreqKey), Arc<Field>>>,
    moments: RwLock<HashMap<PairKey, C64>>,
    cleared: Mutex<HashMap<Coefficient, Clearance>>,
}

impl std::fmt::Debug for MomentOracle {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("MomentOracle").field("provenance", &self.provenance).field("support", &self.support.len()).finish()
    }
}

impl MomentOracle {
    fn with(hq: PerturbationQ, provenance: Provenance, solver: Option<(Arc<DiscreteOperator>, Arc<Cutoff>)>) -> Self {
        let n = hq.domain.n_interior();
        let support = (0..n).filter(|&k| hq.a0[k] != 0.0 || hq.a1[0][k] != 0.0 || hq.a1[1][k] != 0.0 || hq.a2[k] != 0.0).collect();
        Self {
            hq,
            provenance,
            solver,
            support,
            remainders: RwLock::new(HashMap::new()),
            moments: RwLock::new(HashMap::new()),
            cleared: Mutex::new(HashMap::new()),
        }
    }

    /// Oracle evaluating pairings of principal parts against the known H.
    pub fn synthetic(hq: PerturbationQ) -> Self {
        Self::with(hq, Provenance::Synthetic, None)
    }

    /// Oracle pairing full special solutions u = a e^{−ix·ξ/h} + r.
    pub fn special_solutions(hq: PerturbationQ, op: Arc<DiscreteOperator>, cutoff: Arc<Cutoff>) -> Result<Self> {
        if hq.domain.hash != op.domain.hash || op.domain.hash != cutoff.domain().hash {
            return Err(Error::DomainMismatch);
        }
        Ok(Self::with(hq, Provenance::SpecialSolutions, Some((op, cutoff))))
    }

    pub fn provenance(&self) -> Provenance {
        self.provenance
    }

    pub fn domain(&self) -> &Arc<Domain> {
        &self.hq.domain
    }

    pub fn perturbation(&self) -> &PerturbationQ {
        &self.hq
    }

    /// Records that a stage has been handled.
    pub fn clear(&self, c: Coefficient, how: Clearance) {
        self.cleared.lock().unwrap().insert(c, how);
    }

    pub fn clearance(&self, c: Coefficient) -> Option<Clearance> {
        self.cleared.lock().unwrap().get(&c).copied()
    }

    fn require(&self, c: Coefficient) -> Result<()> {
        for p in c.prerequisites() {
            if self.clearance(p).is_none() {
                return Err(Error::PipelineOrder(format!("{} requested before {} was handled", c.name(), p.name())));
            }
        }
        Ok(())
    }

    /// Number of cached pairings.
    pub fn cached_pairings(&self) -> usize {
        self.moments.read().unwrap().len()
    }

    /// Noise floor 10·(solver tolerance)·(field scale).
    pub fn noise_floor(&self, scale: f64) -> f64 {
        10.0 * SOLVER_TOL * scale
    }

    fn check_resolution(&self, xi: &IsotropicVector, eta: &IsotropicVector, h: f64) -> Result<()> {
        if !(h > 0.0) {
            return invalid("h must be positive");
        }
        let d = self.domain();
        match self.provenance {
            Provenance::SpecialSolutions => {
                let need = min_scale(d, xi).max(min_scale(d, eta));
                if h < need {
                    return Err(Error::UnderResolved(format!("h = {h} below the phase resolution limit {need}")));
                }
            }
            Provenance::Synthetic => {
                let k = norm([(xi.0[0] + eta.0[0]).norm(), (xi.0[1] + eta.0[1]).norm()]) / h;
                if k * d.dx() > 0.5 * PI {
                    return Err(Error::UnderResolved(format!("product frequency {k} exceeds the quadrature limit π/(2Δx)")));
                }
            }
        }
        Ok(())
    }

    fn remainder(&self, tag: AmplitudeTag, xi: &IsotropicVector, h: f64) -> Result<Option<Arc<Field>>> {
        let Some((op, cutoff)) = &self.solver else {
            return Ok(None);
        };
        let key = (tag, freq_key(xi, h));
        if let Some(r) = self.remainders.read().unwrap().get(&key) {
            return Ok(Some(r.clone()));
        }
        let s = make_special_solution(op, cutoff, tag, *xi, h)?;
        let r = Arc::new(s.r);
        self.remainders.write().unwrap().insert(key, r.clone());
        Ok(Some(r))
    }

    /// Pairings I(u_a, v_b) for the requested amplitude pairs, u at ξ and v at η.
    pub fn pairings(&self, pairs: &[(AmplitudeTag, AmplitudeTag)], xi: &IsotropicVector, eta: &IsotropicVector, h: f64) -> Result<Vec<C64>> {
        self.check_resolution(xi, eta, h)?;
        let (kx, ke) = (freq_key(xi, h), freq_key(eta, h));
        let mut out = vec![ZERO; pairs.len()];
        let mut missing = Vec::new();
        {
            let cache = self.moments.read().unwrap();
            for (p, (a, b)) in pairs.iter().enumerate() {
                match cache.get(&(*a, *b, kx, ke)) {
                    Some(v) => out[p] = *v,
                    None => missing.push(p),
                }
            }
        }
        if missing.is_empty() {
            return Ok(out);
        }
        let mut jobs: Vec<(AmplitudeTag, bool)> = Vec::new();
        for job in missing.iter().flat_map(|&p| [(pairs[p].0, true), (pairs[p].1, false)]) {
            if !jobs.contains(&job) {
                jobs.push(job);
            }
        }
        let solved: Vec<Option<Arc<Field>>> =
            jobs.par_iter().map(|(t, is_u)| self.remainder(*t, if *is_u { xi } else { eta }, h)).collect::<Result<_>>()?;
        let lookup = |t: AmplitudeTag, is_u: bool| -> Option<&Arc<Field>> {
            jobs.iter().position(|j| *j == (t, is_u)).and_then(|p| solved[p].as_ref())
        };
        let d = self.domain();
        let q = &self.hq;
        let mut acc = vec![ZERO; missing.len()];
        for &k in &self.support {
            let x = d.interior_point(k);
            let w = d.weights[k];
            let e_xi = (-I * xi.dot(x) / h).exp();
            let e_eta = (-I * eta.dot(x) / h).exp();
            for (m, &p) in missing.iter().enumerate() {
                let (ta, tb) = pairs[p];
                // Principal part of u and its derivatives.
                let a = ta.value(x);
                let ga = ta.gradient(x);
                let kx = [xi.0[0] / h, xi.0[1] / h];
                let mut u = a * e_xi;
                let mut du = [(ga[0] - I * a * kx[0]) * e_xi, (ga[1] - I * a * kx[1]) * e_xi];
                let mut lu = (ta.laplacian(2) - 2.0 * I * (kx[0] * ga[0] + kx[1] * ga[1]) - (kx[0] * kx[0] + kx[1] * kx[1]) * a) * e_xi;
                if let Some(r) = lookup(ta, true) {
                    u += r.values[k];
                    du[0] += r.derivative(k, 1, 0).ok_or_else(|| Error::Invalid("remainder lacks derivative stencil".into()))?;
                    du[1] += r.derivative(k, 0, 1).ok_or_else(|| Error::Invalid("remainder lacks derivative stencil".into()))?;
                    lu += r.derivative(k, 2, 0).zip(r.derivative(k, 0, 2)).map(|(p, q)| p + q).ok_or_else(|| Error::Invalid("remainder lacks derivative stencil".into()))?;
                }
                let mut v = tb.value(x) * e_eta;
                if let Some(r) = lookup(tb, false) {
                    v += r.values[k];
                }
                let qu = q.a2[k] * lu + q.a1[0][k] * du[0] + q.a1[1][k] * du[1] + q.a0[k] * u;
                acc[m] += qu * v * w;
            }
        }
        let mut cache = self.moments.write().unwrap();
        for (m, &p) in missing.iter().enumerate() {
            out[p] = acc[m];
            cache.insert((pairs[p].0, pairs[p].1, kx, ke), acc[m]);
        }
        Ok(out)
    }

    /// Direct quadrature ∫ a^c e^{−ix·z/h} dx of the known coefficient.
    pub fn direct_moment(&self, c: Coefficient, z: [C64; 2], h: f64) -> C64 {
        let d = self.domain();
        let coef = coefficient_values(&self.hq, c);
        (0..d.n_interior())
            .filter(|&k| coef[k] != 0.0)
            .map(|k| {
                let x = d.interior_point(k);
                coef[k] * d.weights[k] * (-I * (z[0] * x[0] + z[1] * x[1]) / h).exp()
            })
            .sum()
    }
}

/// Nodal values of one coefficient of H.
pub fn coefficient_values(hq: &PerturbationQ, c: Coefficient) -> &[f64] {
    match c {
        Coefficient::A2 => &hq.a2,
        Coefficient::A1(j) => &hq.a1[j.min(1)],
        Coefficient::A0 => &hq.a0,
    }
}

/// A combination value with the contribution attributed to earlier stages.
#[derive(Clone, Copy, Debug)]
pub struct StageMoment {
    /// Estimate of ∫a^c e^{−ix·(ξ+η)/h}.
    pub value: C64,
    /// The bare pairing combination.
    pub raw: C64,
    /// Part of `raw` attributed to earlier coefficients (subtracted when those were recovered).
    pub contamination: C64,
    /// Bound on the residue of earlier coefficients declared zero near Σ.
    pub residue_bound: f64,
}

const TAGS: [AmplitudeTag; 2] = [AmplitudeTag::Coord(0), AmplitudeTag::Coord(1)];

/// (1/2n)[I(u♯, v₀) − 2Σⱼ I(u_j, v_j) + I(u₀, v♯)] ≈ ∫a² e^{−ix·(ξ+η)/h}.
pub fn combine_for_a2(oracle: &MomentOracle, xi: &IsotropicVector, eta: &IsotropicVector, h: f64) -> Result<C64> {
    use AmplitudeTag::*;
    let p = oracle.pairings(&[(NormSq, One), (TAGS[0], TAGS[0]), (TAGS[1], TAGS[1]), (One, NormSq)], xi, eta, h)?;
    let n = 2.0;
    Ok((p[0] - 2.0 * (p[1] + p[2]) + p[3]) / (2.0 * n))
}

fn residue_bound(oracle: &MomentOracle, prior: Coefficient, factor: f64, xi: &IsotropicVector, eta: &IsotropicVector, h: f64) -> f64 {
    let Some(Clearance::Zeroed { delta }) = oracle.clearance(prior) else {
        return 0.0;
    };
    let coef = coefficient_values(&oracle.hq, prior);
    let sup = coef.iter().fold(0.0f64, |m, v| m.max(v.abs()));
    let im = [xi.0[0].im + eta.0[0].im, xi.0[1].im + eta.0[1].im];
    factor * sup * oracle.domain().area() * ((-delta * im[0] + im[1].abs()) / h).exp()
}

/// I(u_j, v₀) − I(u₀, v_j) = ∫a¹_j e − (2i/h)ξ_j∫a² e (+ remainders).
pub fn combine_for_a1(oracle: &MomentOracle, j: usize, xi: &IsotropicVector, eta: &IsotropicVector, h: f64) -> Result<StageMoment> {
    if j > 1 {
        return invalid("a¹ component index must be 0 or 1");
    }
    oracle.require(Coefficient::A1(j))?;
    use AmplitudeTag::*;
    let p = oracle.pairings(&[(TAGS[j], One), (One, TAGS[j])], xi, eta, h)?;
    let raw = p[0] - p[1];
    let k = -2.0 * I * xi.0[j] / h;
    let contamination = match oracle.clearance(Coefficient::A2) {
        Some(Clearance::Recovered) => k * combine_for_a2(oracle, xi, eta, h)?,
        _ => ZERO,
    };
    let bound = residue_bound(oracle, Coefficient::A2, k.norm(), xi, eta, h);
    Ok(StageMoment { value: raw - contamination, raw, contamination, residue_bound: bound })
}

/// I(u₀, v₀) = ∫a⁰ e − (i/h)ξ·∫a¹ e (+ remainders).
pub fn combine_for_a0(oracle: &MomentOracle, xi: &IsotropicVector, eta: &IsotropicVector, h: f64) -> Result<StageMoment> {
    oracle.require(Coefficient::A0)?;
    use AmplitudeTag::*;
    let raw = oracle.pairings(&[(One, One)], xi, eta, h)?[0];
    let mut contamination = ZERO;
    let mut bound = 0.0;
    for j in 0..2 {
        let k = -I * xi.0[j] / h;
        if oracle.clearance(Coefficient::A1(j)) == Some(Clearance::Recovered) {
            contamination += k * combine_for_a1(oracle, j, xi, eta, h)?.value;
        }
        bound += residue_bound(oracle, Coefficient::A1(j), k.norm(), xi, eta, h);
    }
    Ok(StageMoment { value: raw - contamination, raw, contamination, residue_bound: bound })
}

/// Stage-dispatching moment estimate.
pub fn combine_for(oracle: &MomentOracle, c: Coefficient, xi: &IsotropicVector, eta: &IsotropicVector, h: f64) -> Result<StageMoment> {
    match c {
        Coefficient::A2 => {
            let v = combine_for_a2(oracle, xi, eta, h)?;
            Ok(StageMoment { value: v, raw: v, contamination: ZERO, residue_bound: 0.0 })
        }
        Coefficient::A1(j) => combine_for_a1(oracle, j, xi, eta, h),
        Coefficient::A0 => combine_for_a0(oracle, xi, eta, h),
    }
}

/// One ladder point of a moment-isolation study.
#[derive(Clone, Copy, Debug)]
pub struct IsolationRow {
    pub h: f64,
    pub combined: C64,
    pub direct: C64,
    pub rel_error: f64,
}

/// Combination against direct quadrature at z = ξ + η along `ladder`, where each entry
/// is h/|ξ|. Entries below the resolution limit are skipped.
pub fn isolation_study(oracle: &MomentOracle, c: Coefficient, dec: &FrequencyDecomposition, ladder: &[f64]) -> Result<Vec<IsolationRow>> {
    let scale = dec.xi.norm().max(dec.eta.norm());
    let hs: Vec<f64> = ladder.iter().map(|t| t * scale).filter(|&h| oracle.check_resolution(&dec.xi, &dec.eta, h).is_ok()).collect();
    if hs.is_empty() {
        return Err(Error::UnderResolved("no ladder point is admissible at this resolution".into()));
    }
    hs.par_iter()
        .map(|&h| {
            let m = combine_for(oracle, c, &dec.xi, &dec.eta, h)?;
            let direct = oracle.direct_moment(c, dec.z, h);
            let rel_error = (m.value - direct).norm() / direct.norm().max(f64::MIN_POSITIVE);
            Ok(IsolationRow { h, combined: m.value, direct, rel_error })
        })
        .collect()
}

/// One (z, h) evaluation of the weighted transform bound.
#[derive(Clone, Copy, Debug)]
pub struct WeightedPoint {
    pub z: [C64; 2],
    pub h: f64,
    /// Ta²(z) synthesized from moments through the kernel identity.
    pub synthesized: LogComplex,
    /// Ta²(z) by direct quadrature.
    pub direct: LogComplex,
    /// |ln|T_syn| − ln|T_dir||.
    pub log_gap: f64,
    /// ln(e^{−Φ(z₁)/2h}|Ta²(z)|).
    pub weighted_ln: f64,
    /// ln max |F(t + iz)| over the inner quadrature nodes.
    pub tube_ln: f64,
    pub inner_nodes: usize,
    pub outer_nodes: usize,
    /// Inside {|z₁ − 2a| ≤ εa/2, |x′| < εa/2} with x′ real.
    pub two_case: bool,
}

/// Summary of the weighted transform study.
#[derive(Clone, Debug)]
pub struct WeightedReport {
    pub params: RecoveryParams,
    pub points: Vec<WeightedPoint>,
    /// Fitted decay rate R of max weighted value ≈ e^{−R/h} in the two-case region.
    pub weighted_rate: f64,
    /// (1 − 0.2)·ca/4.
    pub weighted_required: f64,
    /// Fitted decay rate of max |F| over the tube nodes.
    pub tube_rate: f64,
    /// (1 − 0.2)(ca/2 − 2Cεa) with C the realized decomposition constant.
    pub tube_required: f64,
    pub constant: f64,
    pub max_log_gap: f64,
    pub holds: bool,
}

/// Φ(z₁) = (Im z₁)² − (max(Re z₁, 0))².
pub fn phi_weight(z1: C64) -> f64 {
    z1.im * z1.im - z1.re.max(0.0).powi(2)
}

/// Synthesizes Ta²(z) = e^{−z²/2h}(2πh)^{−1}∫e^{−t²/2h}F(t + iz)dt by tensor Gauss–Hermite
/// quadrature in t, taking F from the pairing combinations for |t| < εa and from direct
/// quadrature of the known a² outside, and checks both displayed bounds against the
/// directly computed transform.
pub fn weighted_transform_bound(oracle: &MomentOracle, params: RecoveryParams, ladder: &[f64], zs: &[[C64; 2]], nodes: usize) -> Result<WeightedReport> {
    params.validate()?;
    if ladder.len() < 2 {
        return invalid("weighted bound needs at least two h values");
    }
    if nodes < 2 {
        return Err(Error::UnderResolved("moment lattice needs at least 2 nodes per axis".into()));
    }
    let (a, eps, c) = (params.a, params.eps, params.c);
    let d = oracle.domain();
    let a2 = Field::new(d, oracle.hq.a2.iter().map(|v| C64::new(*v, 0.0)).collect())?;
    let gh = gauss_hermite(nodes);
    let mut jobs = Vec::new();
    for &h in ladder {
        for z in zs {
            jobs.push((h, *z));
        }
    }
    let points: Vec<WeightedPoint> = jobs
        .par_iter()
        .map(|&(h, z)| -> Result<WeightedPoint> {
            let s = (2.0 * h).sqrt();
            let mut inner = 0;
            let mut outer = 0;
            let mut tube_ln = f64::NEG_INFINITY;
            let mut sum = ZERO;
            for &(sa, wa) in &gh {
                for &(sb, wb) in &gh {
                    let t = [s * sa, s * sb];
                    let w = [t[0] + I * z[0], t[1] + I * z[1]];
                    let f = if norm(t) < eps * a {
                        inner += 1;
                        let dec = isotropic_decompose(w, a, eps)?;
                        let v = combine_for_a2(oracle, &dec.xi, &dec.eta, h)?;
                        tube_ln = tube_ln.max(v.norm().ln());
                        v
                    } else {
                        outer += 1;
                        oracle.direct_moment(Coefficient::A2, w, h)
                    };
                    sum += wa * wb * f;
                }
            }
            let zz = z[0] * z[0] + z[1] * z[1];
            let synthesized = if sum.norm() == 0.0 {
                LogComplex::zero()
            } else {
                let ln = -zz.re / (2.0 * h) + (sum.norm() / PI).ln();
                LogComplex { ln_abs: ln, arg: sum.arg() - zz.im / (2.0 * h), scaled: ln > crate::segal_bargmann::LOG_GUARD }
            };
            let direct = transform_complex(&a2, h, z)?;
            let log_gap = if synthesized.ln_abs.is_finite() || direct.ln_abs.is_finite() {
                (synthesized.ln_abs - direct.ln_abs).abs()
            } else {
                0.0
            };
            let weighted_ln = -phi_weight(z[0]) / (2.0 * h) + synthesized.ln_abs;
            let two_case = (z[0] - 2.0 * a).norm() <= 0.5 * eps * a && z[1].im == 0.0 && z[1].re.abs() < 0.5 * eps * a;
            Ok(WeightedPoint { z, h, synthesized, direct, log_gap, weighted_ln, tube_ln, inner_nodes: inner, outer_nodes: outer, two_case })
        })
        .collect::<Result<_>>()?;
    let mut constant = 0.0f64;
    for p in &points {
        for &(sa, _) in &gh {
            for &(sb, _) in &gh {
                let s = (2.0 * p.h).sqrt();
                let t = [s * sa, s * sb];
                if norm(t) < eps * a {
                    constant = constant.max(isotropic_decompose([t[0] + I * p.z[0], t[1] + I * p.z[1]], a, eps)?.constant);
                }
            }
        }
    }
    let per_h = |f: &dyn Fn(&WeightedPoint) -> Option<f64>| -> (Vec<f64>, Vec<f64>) {
        let mut x = Vec::new();
        let mut y = Vec::new();
        for &h in ladder {
            let m = points.iter().filter(|p| p.h == h).filter_map(f).fold(f64::NEG_INFINITY, f64::max);
            if m.is_finite() {
                x.push(1.0 / h);
                y.push(m);
            }
        }
        (x, y)
    };
    let (xw, yw) = per_h(&|p| p.two_case.then_some(p.weighted_ln));
    let (xt, yt) = per_h(&|p| Some(p.tube_ln));
    // All-zero data decays at every rate.
    let weighted_rate = if xw.len() >= 2 { -fit_slope(&xw, &yw) } else { f64::INFINITY };
    let tube_rate = if xt.len() >= 2 { -fit_slope(&xt, &yt) } else { f64::INFINITY };
    let weighted_required = 0.8 * c * a / 4.0;
    let tube_required = 0.8 * (c * a / 2.0 - 2.0 * constant * eps * a);
    let max_log_gap = points.iter().map(|p| p.log_gap).fold(0.0, f64::max);
    let holds = weighted_rate >= weighted_required && tube_rate >= tube_required;
    Ok(WeightedReport { params, points, weighted_rate, weighted_required, tube_rate, tube_required, constant, max_log_gap, holds })
}

/// Sample points of the two-case region {|z₁ − 2a| ≤ εa/2, |x′| < εa/2}.
pub fn two_case_samples(params: &RecoveryParams) -> Vec<[C64; 2]> {
    let (a, eps) = (params.a, params.eps);
    let r = 0.25 * eps * a;
    let mut out = vec![[C64::new(2.0 * a, 0.0), ZERO]];
    for k in 0..4 {
        let th = 0.5 * PI * k as f64;
        out.push([C64::new(2.0 * a + r * th.cos(), r * th.sin()), ZERO]);
    }
    out.push([C64::new(2.0 * a, 0.0), C64::new(r, 0.0)]);
    out
}

/// Axis-aligned reconstruction window.
#[derive(Clone, Debug)]
pub struct StripWindow {
    pub lo: Point,
    pub hi: Point,
    /// Interior node indices inside the window.
    pub nodes: Vec<usize>,
}

impl StripWindow {
    /// Window [lo, hi] ∩ Ω; rejected if any node is within `band` of Γ.
    pub fn new(domain: &Domain, lo: Point, hi: Point, band: f64) -> Result<Self> {
        if !(lo[0] < hi[0] && lo[1] < hi[1]) {
            return invalid("window corners must satisfy lo < hi");
        }
        let nodes: Vec<usize> = (0..domain.n_interior())
            .filter(|&k| {
                let p = domain.interior_point(k);
                p[0] >= lo[0] && p[0] <= hi[0] && p[1] >= lo[1] && p[1] <= hi[1]
            })
            .collect();
        if nodes.is_empty() {
            return invalid("window contains no interior node");
        }
        for &k in &nodes {
            let p = domain.interior_point(k);
            if let Some((_, b)) = domain.gamma_nodes().find(|(_, b)| norm(sub(p, b.point)) < band) {
                return invalid(format!("window node {p:?} lies within the cutoff band of Γ at {:?}", b.point));
            }
        }
        Ok(Self { lo, hi, nodes })
    }
}

/// Reconstruction on a window at one h.
#[derive(Clone, Debug)]
pub struct StripRow {
    pub h: f64,
    pub estimate: Vec<f64>,
    pub l2_error: f64,
    pub rel_error: f64,
}

#[derive(Clone, Debug)]
pub struct StripReport {
    pub coefficient: Coefficient,
    pub window: StripWindow,
    pub truth: Vec<f64>,
    pub rows: Vec<StripRow>,
    pub truth_norm: f64,
    /// Number of frequencies evaluated at the finest h.
    pub frequencies: usize,
}

impl StripReport {
    pub fn finest(&self) -> &StripRow {
        self.rows.last().unwrap()
    }

    /// CSV of x1, x2, truth, estimate, error at the finest h.
    pub fn to_csv(&self, domain: &Domain) -> String {
        let mut s = String::from("x1,x2,truth,estimate,error\n");
        let row = self.finest();
        for (m, &k) in self.window.nodes.iter().enumerate() {
            let p = domain.interior_point(k);
            s.push_str(&format!("{},{},{},{},{}\n", p[0], p[1], self.truth[m], row.estimate[m], row.estimate[m] - self.truth[m]));
        }
        s
    }
}

/// Estimates (2πh)^{−1}Ta^c on the window from real-frequency moments:
/// (2πh)^{−1}Tf(x) = (Δk/2π)² Σ_k e^{−h|k|²/2} e^{ix·k} F(hk), the sum running over the dual
/// lattice with spacing Δk = 2π/P, P exceeding the window-to-support spread plus the
/// kernel reach. The stage is marked recovered on success.
pub fn reconstruct_strip(oracle: &MomentOracle, c: Coefficient, window: &StripWindow, ladder: &[f64]) -> Result<StripReport> {
    if oracle.provenance != Provenance::Synthetic {
        return invalid("real-frequency moments are only available from the synthetic oracle");
    }
    oracle.require(c)?;
    if ladder.is_empty() {
        return invalid("empty h ladder");
    }
    let d = oracle.domain();
    let truth: Vec<f64> = window.nodes.iter().map(|&k| coefficient_values(&oracle.hq, c)[k]).collect();
    let wts: Vec<f64> = window.nodes.iter().map(|&k| d.weights[k]).collect();
    let truth_norm = truth.iter().zip(&wts).map(|(v, w)| v * v * w).sum::<f64>().sqrt();
    let pts: Vec<Point> = window.nodes.iter().map(|&k| d.interior_point(k)).collect();
    let (blo, bhi) = d.bounding_box();
    let spread = [bhi[0].max(window.hi[0]) - blo[0].min(window.lo[0]), bhi[1].max(window.hi[1]) - blo[1].min(window.lo[1])];
    let mut rows = Vec::new();
    let mut frequencies = 0;
    for &h in ladder {
        if !(h > 0.0) {
            return invalid("h must be positive");
        }
        let period = spread[0].max(spread[1]) + 12.0 * h.sqrt();
        let dk = 2.0 * PI / period;
        let kmax = 6.0 / h.sqrt();
        let n = (kmax / dk).ceil() as i64;
        let lattice: Vec<Point> = (-n..=n)
            .flat_map(|a| (-n..=n).map(move |b| [a as f64 * dk, b as f64 * dk]))
            .filter(|k| norm(*k) <= kmax)
            .collect();
        frequencies = lattice.len();
        let moments: Vec<(Point, C64)> = lattice
            .par_iter()
            .map(|k| -> Result<(Point, C64)> {
                let t = [C64::new(h * k[0], 0.0), C64::new(h * k[1], 0.0)];
                let dec = isotropic_decompose(t, 1.0, 0.1)?;
                let m = combine_for(oracle, c, &dec.xi, &dec.eta, h)?;
                Ok((*k, m.value * (-0.5 * h * (k[0] * k[0] + k[1] * k[1])).exp()))
            })
            .collect::<Result<_>>()?;
        let scale = (dk / (2.0 * PI)).powi(2);
        let estimate: Vec<f64> = pts
            .par_iter()
            .map(|x| {
                let s: C64 = moments.iter().map(|(k, f)| f * (I * (x[0] * k[0] + x[1] * k[1])).exp()).sum();
                s.re * scale
            })
            .collect();
        let l2_error = estimate.iter().zip(&truth).zip(&wts).map(|((e, t), w)| (e - t).powi(2) * w).sum::<f64>().sqrt();
        let rel_error = if truth_norm > 0.0 { l2_error / truth_norm } else { f64::NAN };
        rows.push(StripRow { h, estimate, l2_error, rel_error });
    }
    oracle.clear(c, Clearance::Recovered);
    Ok(StripReport { coefficient: c, window: window.clone(), truth, rows, truth_norm, frequencies })
}

/// Runs the reconstruction stages in the only admissible order a² → a¹ → a⁰.
pub fn reconstruct_pipeline(oracle: &MomentOracle, window: &StripWindow, ladder: &[f64]) -> Result<Vec<StripReport>> {
    [Coefficient::A2, Coefficient::A1(0), Coefficient::A1(1), Coefficient::A0]
        .iter()
        .map(|&c| reconstruct_strip(oracle, c, window, ladder))
        .collect()
}

/// Contamination sweep: the raw a¹ combination for an H whose a² lives in {x₁ ≤ −δ}.
#[derive(Clone, Debug)]
pub struct ContaminationReport {
    pub h: Vec<f64>,
    pub raw: Vec<f64>,
    pub bound: Vec<f64>,
    /// Fitted decay rate of |raw| ≈ e^{−R/h}.
    pub rate: f64,
    /// δa/4 from the strip bound.
    pub predicted: f64,
}

pub fn contamination_sweep(oracle: &MomentOracle, j: usize, dec: &FrequencyDecomposition, delta: f64, ladder: &[f64]) -> Result<ContaminationReport> {
    oracle.clear(Coefficient::A2, Clearance::Zeroed { delta });
    let scale = dec.xi.norm().max(dec.eta.norm());
    let hs: Vec<f64> = ladder.iter().map(|t| t * scale).filter(|&h| oracle.check_resolution(&dec.xi, &dec.eta, h).is_ok()).collect();
    if hs.len() < 2 {
        return Err(Error::UnderResolved("fewer than two admissible ladder points".into()));
    }
    let rows: Vec<StageMoment> = hs.par_iter().map(|&h| combine_for_a1(oracle, j, &dec.xi, &dec.eta, h)).collect::<Result<_>>()?;
    let raw: Vec<f64> = rows.iter().map(|m| m.raw.norm()).collect();
    let bound: Vec<f64> = rows.iter().map(|m| m.residue_bound).collect();
    let x: Vec<f64> = hs.iter().map(|h| 1.0 / h).collect();
    let y: Vec<f64> = raw.iter().map(|v| v.max(1e-300).ln()).collect();
    Ok(ContaminationReport { h: hs, raw, bound, rate: -fit_slope(&x, &y), predicted: delta * dec.a / 4.0 })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn decomposition_of_tube_center() {
        let a = 3.0;
        let dec = isotropic_decompose([C64::new(0.0, 2.0 * a), ZERO], a, 0.1).unwrap();
        assert!((dec.xi.0[0] - C64::new(0.0, a)).norm() < 1e-14 && (dec.xi.0[1] - C64::new(a, 0.0)).norm() < 1e-14);
        assert!((dec.eta.0[0] - C64::new(0.0, a)).norm() < 1e-14 && (dec.eta.0[1] + C64::new(a, 0.0)).norm() < 1e-14);
        assert!(dec.in_tube && dec.constraint);
        assert!(dec.xi.self_dot().norm() < 1e-12 && dec.eta.self_dot().norm() < 1e-12);
    }

    #[test]
    fn decomposition_of_zero_and_real() {
        let dec = isotropic_decompose([ZERO, ZERO], 1.0, 0.1).unwrap();
        assert_eq!(dec.xi.norm(), 0.0);
        assert_eq!(dec.eta.norm(), 0.0);
        let a = 2.0;
        let dec = isotropic_decompose([C64::new(2.0 * a, 0.0), ZERO], a, 0.1).unwrap();
        assert!((dec.xi.0[0] - C64::new(a, 0.0)).norm() < 1e-14);
        assert!((dec.xi.0[1] - C64::new(0.0, -a)).norm() < 1e-14);
        assert!((dec.eta.0[1] - C64::new(0.0, a)).norm() < 1e-14);
        assert!(!dec.constraint && !dec.in_tube);
    }

    #[test]
    fn default_parameters() {
        let p = RecoveryParams::defaults(0.5).unwrap();
        assert_eq!(p.eps, 0.5 / 16.0);
        assert!(p.a > (p.c + 4.0 * p.eps) / (p.eps * p.eps));
        assert!(RecoveryParams::defaults(0.0).is_err());
    }

    #[test]
    fn phi_branches() {
        assert_eq!(phi_weight(C64::new(-2.0, 3.0)), 9.0);
        assert_eq!(phi_weight(C64::new(2.0, 3.0)), 5.0);
    }
}
