//! Acceptance checks shared by the integration suite and the command line driver.
//! Each check builds its own configuration, measures, and reports one pass/fail row.

use std::f64::consts::PI;
use std::fmt::Write as _;
use std::sync::Arc;
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::biharmonic_core::{bilaplacian_13, norms, BoundaryData, DiscreteOperator, Field};
use crate::density_approx::{approximate, density_trend, NestedDomains};
use crate::error::{invalid, Result};
use crate::geometry::{
    kelvin_image, kelvin_transform, norm, reference_disk, sub, ConformalMap, Domain, NormalizedConfiguration, Point, Shape, SigmaSpec,
};
use crate::linearized_dn::{duality_check, sigma_bump_data, ForwardOperator, PerturbationQ};
use crate::numerics::{fit_slope, C64};
use crate::recovery::{
    isolation_study, isotropic_decompose, reconstruct_pipeline, reconstruct_strip, two_case_samples, weighted_transform_bound, Clearance,
    Coefficient, MomentOracle, RecoveryParams, StripWindow,
};
use crate::segal_bargmann::{bound_chain, inversion_limit, modulus_bound_ln, transform_complex};
use crate::special_solutions::{
    analytic_bilaplacian, decay_sweep, make_cutoff, make_special_solution, min_scale, AmplitudeTag, IsotropicVector, DEFAULT_LADDER,
};

/// Outcome of one acceptance criterion.
#[derive(Clone, Debug)]
pub struct CheckOutcome {
    pub id: usize,
    pub name: &'static str,
    pub measured: String,
    pub requirement: String,
    pub passed: bool,
    pub seconds: f64,
    /// CSV of the measurements behind the verdict.
    pub table: String,
}

impl CheckOutcome {
    pub fn line(&self) -> String {
        format!(
            "{} {:>2} {:<26} {} | required {} ({:.1} s)",
            if self.passed { "PASS" } else { "FAIL" },
            self.id,
            self.name,
            self.measured,
            self.requirement,
            self.seconds
        )
    }
}

pub const CRITERIA: [(usize, &str); 13] = [
    (1, "solver order"),
    (2, "cgo exactness"),
    (3, "remainder decay"),
    (4, "transform inversion"),
    (5, "transform bounds"),
    (6, "linearization order"),
    (7, "duality"),
    (8, "moment isolation"),
    (9, "tube decomposition"),
    (10, "weighted bound"),
    (11, "strip reconstruction"),
    (12, "density trend"),
    (13, "kelvin transform"),
];

/// Runs criterion `id` with randomized inputs drawn from `seed`.
pub fn run_check(id: usize, seed: u64) -> Result<CheckOutcome> {
    let name = CRITERIA.iter().find(|c| c.0 == id).map(|c| c.1).ok_or_else(|| crate::Error::Invalid(format!("no criterion {id}")))?;
    let t = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed.wrapping_add(id as u64));
    let (measured, requirement, passed, table) = match id {
        1 => solver_order(),
        2 => cgo_exactness(&mut rng),
        3 => remainder_decay(),
        4 => transform_inversion(),
        5 => transform_bounds(&mut rng),
        6 => linearization_order(&mut rng),
        7 => duality(&mut rng),
        8 => moment_isolation(),
        9 => tube_decomposition(&mut rng),
        10 => weighted_bound(),
        11 => strip_reconstruction(),
        12 => density(),
        _ => kelvin(),
    }?;
    Ok(CheckOutcome { id, name, measured, requirement, passed, seconds: t.elapsed().as_secs_f64(), table })
}

type Verdict = Result<(String, String, bool, String)>;

/// Smooth compactly supported bump of radius `r` centred at `c`.
pub fn bump(p: Point, c: Point, r: f64) -> f64 {
    let s2 = norm(sub(p, c)).powi(2) / (r * r);
    if s2 >= 1.0 {
        0.0
    } else {
        (1.0 - 1.0 / (1.0 - s2)).exp()
    }
}

/// L² error of the clamped-plate solve for u = sin(πx)sin(πy) on `shape`.
pub fn manufactured_error(shape: &Shape, res: usize) -> Result<f64> {
    let d = Arc::new(Domain::build(shape.clone(), res, SigmaSpec::Full)?);
    let u = |p: Point| (PI * p[0]).sin() * (PI * p[1]).sin();
    let f = Field::from_real_fn(&d, |p| 4.0 * PI.powi(4) * u(p));
    let bc = BoundaryData::from_function(&d, |p| {
        let g = [PI * (PI * p[0]).cos() * (PI * p[1]).sin(), PI * (PI * p[0]).sin() * (PI * p[1]).cos()];
        (C64::new(u(p), 0.0), [C64::new(g[0], 0.0), C64::new(g[1], 0.0)])
    });
    let sol = DiscreteOperator::assemble(&d)?.solve_dirichlet(&f, &bc)?;
    let e = sol.combine(C64::new(1.0, 0.0), &Field::from_real_fn(&d, u), C64::new(-1.0, 0.0))?;
    Ok(norms(&e.without_ghosts())?.l2)
}

/// Manufactured-solution errors and the fitted order over `resolutions`.
pub fn convergence_study(shape: &Shape, resolutions: &[usize]) -> Result<(Vec<(usize, f64)>, f64)> {
    let rows: Vec<(usize, f64)> = resolutions.iter().map(|&r| Ok((r, manufactured_error(shape, r)?))).collect::<Result<_>>()?;
    let x: Vec<f64> = rows.iter().map(|r| (1.0 / r.0 as f64).ln()).collect();
    let y: Vec<f64> = rows.iter().map(|r| r.1.ln()).collect();
    Ok((rows, fit_slope(&x, &y)))
}

fn solver_order() -> Verdict {
    let (rows, slope) = convergence_study(&Shape::disk([0.0, 0.0], 1.0), &[64, 128, 256])?;
    let mut table = String::from("resolution,l2_error\n");
    for (r, e) in &rows {
        writeln!(table, "{r},{e:e}").unwrap();
    }
    Ok((format!("slope {slope:.3}"), "slope in [1.7, 2.3]".into(), (1.7..=2.3).contains(&slope), table))
}

fn cgo_exactness(rng: &mut ChaCha8Rng) -> Verdict {
    let mut worst = 0.0f64;
    let mut table = String::from("sample,tag,re_xi1,re_xi2,im_xi1,im_xi2,h,max_rel_residual\n");
    for s in 0..20 {
        let th = rng.random_range(0.0..2.0 * PI);
        let xi = IsotropicVector::from_direction([th.cos(), th.sin()], rng.random_range(0.2..3.0));
        let h = rng.random_range(0.05..1.0);
        let pts: Vec<Point> = (0..10)
            .map(|_| {
                let (r, a) = (rng.random_range(0.0..1.0f64).sqrt(), rng.random_range(0.0..2.0 * PI));
                [-1.0 + r * a.cos(), r * a.sin()]
            })
            .collect();
        for tag in [AmplitudeTag::One, AmplitudeTag::Coord(0), AmplitudeTag::Coord(1), AmplitudeTag::NormSq] {
            let mut m = 0.0f64;
            for &x in &pts {
                let (v, scale) = analytic_bilaplacian(tag, &xi, h, x);
                m = m.max(v.norm() / scale);
            }
            // Amplitude conditions: Δa is constant by construction; Σ∂ᵢ∂ⱼa ξᵢξⱼ = 2ξ·ξ for |x|².
            if tag == AmplitudeTag::NormSq {
                m = m.max((2.0 * xi.self_dot()).norm() / xi.norm().powi(2));
            }
            worst = worst.max(m);
            writeln!(table, "{s},{},{},{},{},{},{h},{m:e}", tag.name(), xi.re()[0], xi.re()[1], xi.im()[0], xi.im()[1]).unwrap();
        }
    }
    Ok((format!("max relative residual {worst:.2e}"), "≤ 1e-9".into(), worst <= 1e-9, table))
}

fn reference_cgo(res: usize) -> Result<(Arc<Domain>, Arc<DiscreteOperator>, Arc<crate::special_solutions::Cutoff>)> {
    let d = Arc::new(reference_disk(res, 2.0 * PI / 3.0)?);
    let cfg = NormalizedConfiguration::new(d.clone(), 0.5)?;
    let cut = Arc::new(make_cutoff(&cfg, 0.2)?);
    let op = Arc::new(DiscreteOperator::assemble(&d)?);
    Ok((d, op, cut))
}

fn remainder_decay() -> Verdict {
    let (d, op, cut) = reference_cgo(128)?;
    let configs = [
        ([1.0, 0.0], 1.0, AmplitudeTag::One),
        ([1.0, 0.0], 1.0, AmplitudeTag::NormSq),
        ([1.0, 0.3], 1.0, AmplitudeTag::Coord(0)),
        ([1.0, -0.3], 1.0, AmplitudeTag::Coord(1)),
        ([1.0, 0.0], 0.5, AmplitudeTag::One),
        ([1.0, 0.0], 1.4, AmplitudeTag::One),
    ];
    let mut table = String::from("tag,im_xi1,im_xi2,rate,predicted,rel_error,poly_exponent,normalized_slope\n");
    let mut worst_rel = 0.0f64;
    let mut worst_slope = f64::NEG_INFINITY;
    let mut ok = true;
    for (dir, s, tag) in configs {
        let xi = IsotropicVector::from_direction(dir, s);
        let ladder: Vec<f64> = DEFAULT_LADDER.iter().copied().filter(|h| *h >= min_scale(&d, &xi)).collect();
        let r = decay_sweep(&op, &cut, tag, xi, &ladder)?;
        let rel = (r.rate - r.predicted).abs() / r.predicted.abs();
        ok &= r.predicted < 0.0 && rel <= 0.15 && r.normalized_slope <= 2.3;
        worst_rel = worst_rel.max(rel);
        worst_slope = worst_slope.max(r.normalized_slope);
        writeln!(table, "{},{},{},{},{},{rel},{},{}", tag.name(), xi.im()[0], xi.im()[1], r.rate, r.predicted, r.poly, r.normalized_slope).unwrap();
    }
    // Im ξ = 0 forces ξ = 0: the remainder no longer depends on h.
    let r0 = decay_sweep(&op, &cut, AmplitudeTag::One, IsotropicVector::zero(), &DEFAULT_LADDER)?;
    ok &= r0.normalized_slope <= 2.3;
    worst_slope = worst_slope.max(r0.normalized_slope);
    writeln!(table, "one,0,0,{},{},,{},{}", r0.rate, r0.predicted, r0.poly, r0.normalized_slope).unwrap();
    Ok((
        format!("max |R − H_K|/|H_K| {worst_rel:.3}, max prefactor slope {worst_slope:.2}"),
        "≤ 0.15 on 6 configurations, slope ≤ 2.3".into(),
        ok,
        table,
    ))
}

fn inversion_bump() -> Result<Field> {
    let d = Arc::new(reference_disk(128, 1.0)?);
    Ok(Field::from_real_fn(&d, |p| {
        let r2 = ((p[0] + 1.0).powi(2) + p[1].powi(2)) / 0.81;
        if r2 < 1.0 {
            (1.0 - r2).powi(4)
        } else {
            0.0
        }
    })
    .without_ghosts())
}

fn transform_inversion() -> Verdict {
    let f = inversion_bump()?;
    let (rows, slope) = inversion_limit(&f, &[0.02, 0.01, 0.005, 0.0025])?;
    let mut table = String::from("h,l2_error\n");
    for r in &rows {
        writeln!(table, "{},{:e}", r.h, r.l2_error).unwrap();
    }
    let n = rows.len();
    let ratios: Vec<f64> = (n - 2..n).map(|k| rows[k - 1].l2_error / rows[k].l2_error).collect();
    let ok = ratios.iter().all(|r| (1.7..=2.3).contains(r));
    Ok((format!("halving ratios {:.3}, {:.3} (slope {slope:.3})", ratios[0], ratios[1]), "ratios in [1.7, 2.3]".into(), ok, table))
}

fn transform_bounds(rng: &mut ChaCha8Rng) -> Verdict {
    let d = Arc::new(reference_disk(64, 1.0)?);
    let f = Field::from_real_fn(&d, |p| bump(p, [-1.0, 0.0], 0.9)).without_ghosts();
    let (a, eps) = (2.0, 0.1);
    let mut jobs = Vec::new();
    for _ in 0..50 {
        let z = [
            C64::new(2.0 * a + rng.random_range(-0.5..0.5) * eps * a, rng.random_range(-0.5..0.5)),
            C64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
        ];
        for h in [0.05, 0.1, 0.2, 0.4] {
            jobs.push((z, h));
        }
    }
    let rows: Vec<(f64, f64, f64, bool)> = jobs
        .par_iter()
        .map(|&(z, h)| {
            let b = bound_chain(&f, h, z, eps, a)?;
            let lhs = transform_complex(&f, h, z)?.ln_abs;
            Ok((b.lhs_ln, b.rhs_ln, modulus_bound_ln(&f, h, z), b.holds && lhs <= modulus_bound_ln(&f, h, z) + 1e-9))
        })
        .collect::<Result<_>>()?;
    let mut table = String::from("re_z1,im_z1,re_z2,im_z2,h,ln_lhs,ln_intermediate,ln_modulus,holds\n");
    for ((z, h), r) in jobs.iter().zip(&rows) {
        writeln!(table, "{},{},{},{},{h},{},{},{},{}", z[0].re, z[0].im, z[1].re, z[1].im, r.0, r.1, r.2, r.3).unwrap();
    }
    let held = rows.iter().filter(|r| r.3).count();
    let margin = rows.iter().map(|r| r.1 - r.0).fold(f64::INFINITY, f64::min);
    Ok((format!("{held}/{} points hold, min log margin {margin:.2}", rows.len()), "all 200 points".into(), held == rows.len(), table))
}

/// Random polynomial coefficient bundle with entries of size `scale`.
pub fn random_q(d: &Arc<Domain>, rng: &mut ChaCha8Rng, scale: f64) -> PerturbationQ {
    let c: [f64; 9] = std::array::from_fn(|_| scale * rng.random_range(-1.0..1.0));
    PerturbationQ::from_fns(
        d,
        move |p| c[0] + c[1] * p[0] + c[2] * p[1],
        move |p| [c[3] + c[4] * p[1], c[5] * p[0]],
        move |p| c[6] + c[7] * p[0] + c[8] * p[1] * p[1],
    )
}

/// Random Σ-supported Cauchy data.
pub fn random_sigma_data(d: &Arc<Domain>, rng: &mut ChaCha8Rng) -> BoundaryData {
    let theta0 = rng.random_range(-0.4..0.4);
    let half = rng.random_range(0.4..0.6);
    let c = [C64::new(rng.random_range(-1.0..1.0), 0.0), C64::new(rng.random_range(-1.0..1.0), 0.0)];
    sigma_bump_data(d, theta0, half, c)
}

fn linearization_order(rng: &mut ChaCha8Rng) -> Verdict {
    let d = Arc::new(reference_disk(64, PI / 3.0)?);
    let q = PerturbationQ::from_fns(&d, |p| 0.5 * p[1], |_| [0.0, 0.1], |_| 0.1);
    let fq = ForwardOperator::new(q.clone())?;
    let mut table = String::from("sample,err_t1,err_t2,order\n");
    let mut orders = Vec::new();
    for s in 0..5 {
        let hq = random_q(&d, rng, 0.5);
        let f = random_sigma_data(&d, rng);
        let lam = fq.dn_map(&f)?;
        let b = fq.frechet_derivative(&hq, &f)?;
        let errs: Vec<f64> = [1e-2, 5e-3]
            .par_iter()
            .map(|&t| {
                let ft = ForwardOperator::new(q.add(&hq.scale(t))?)?;
                Ok(ft.dn_map(&f)?.combine(1.0, &lam, -1.0)?.combine(1.0, &b, -t)?.norm())
            })
            .collect::<Result<_>>()?;
        let order = (errs[0] / errs[1]).log2();
        writeln!(table, "{s},{:e},{:e},{order}", errs[0], errs[1]).unwrap();
        orders.push(order);
    }
    let (lo, hi) = orders.iter().fold((f64::INFINITY, f64::NEG_INFINITY), |(l, h), o| (l.min(*o), h.max(*o)));
    Ok((format!("orders in [{lo:.3}, {hi:.3}]"), "all in [1.7, 2.3]".into(), lo >= 1.7 && hi <= 2.3, table))
}

fn duality(rng: &mut ChaCha8Rng) -> Verdict {
    let samples: Vec<(u64, u64, u64)> = (0..5).map(|_| (rng.random(), rng.random(), rng.random())).collect();
    let levels = [64usize, 96, 128, 192, 256];
    let mut gaps = vec![[0.0; 5]; samples.len()];
    for (level, &res) in levels.iter().enumerate() {
        let d = Arc::new(reference_disk(res, PI / 3.0)?);
        let op0 = ForwardOperator::new(PerturbationQ::zero(&d))?;
        for (k, &(sh, sf, sg)) in samples.iter().enumerate() {
            let hq = random_q(&d, &mut ChaCha8Rng::seed_from_u64(sh), 1.0);
            let f = random_sigma_data(&d, &mut ChaCha8Rng::seed_from_u64(sf));
            let g = random_sigma_data(&d, &mut ChaCha8Rng::seed_from_u64(sg));
            gaps[k][level] = duality_check(&op0, &hq, &f, &g)?.gap;
        }
    }
    // Cut-cell alignment makes two-level ratios noisy; the order is a fit over five grids.
    let x: Vec<f64> = levels.iter().map(|&r| (1.0 / r as f64).ln()).collect();
    let mut table = String::from("sample,gap_64,gap_96,gap_128,gap_192,gap_256,order\n");
    let mut ok = true;
    let (mut worst, mut min_order) = (0.0f64, f64::INFINITY);
    for (k, g) in gaps.iter().enumerate() {
        let order = fit_slope(&x, &g.map(f64::ln));
        ok &= g[2] <= 0.02 && order >= 1.0;
        worst = worst.max(g[2]);
        min_order = min_order.min(order);
        writeln!(table, "{k},{},{order}", g.map(|v| format!("{v:e}")).join(",")).unwrap();
    }
    Ok((format!("max gap at 128 {:.3}%, min fitted order {min_order:.2}", 100.0 * worst), "gap ≤ 2%, order ≥ 1".into(), ok, table))
}

/// Single-coefficient presets used by the isolation check.
pub fn isolation_presets(d: &Arc<Domain>) -> Vec<(Coefficient, PerturbationQ)> {
    vec![
        (Coefficient::A2, PerturbationQ::from_fns(d, |_| 0.0, |_| [0.0, 0.0], |x| bump(x, [-0.35, 0.1], 0.3))),
        (Coefficient::A1(0), PerturbationQ::from_fns(d, |_| 0.0, |x| [bump(x, [-0.3, -0.1], 0.25), 0.5 * bump(x, [-0.3, 0.1], 0.25)], |_| 0.0)),
        (Coefficient::A1(1), PerturbationQ::from_fns(d, |_| 0.0, |x| [0.5 * bump(x, [-0.3, -0.1], 0.25), bump(x, [-0.3, 0.1], 0.25)], |_| 0.0)),
        (Coefficient::A0, PerturbationQ::from_fns(d, |x| bump(x, [-0.25, 0.0], 0.2), |_| [0.0, 0.0], |_| 0.0)),
    ]
}

fn moment_isolation() -> Verdict {
    let (d, op, cut) = reference_cgo(128)?;
    let p = RecoveryParams::defaults(0.5)?;
    let dec = isotropic_decompose(p.tube_center(), p.a, p.eps)?;
    let ladder = [0.3, 0.22, 0.16, 0.12, 0.09, 0.065];
    let mut table = String::from("coefficient,h,combined_abs,direct_abs,rel_error\n");
    let mut worst = 0.0f64;
    for (c, q) in isolation_presets(&d) {
        let o = MomentOracle::special_solutions(q, op.clone(), cut.clone())?;
        for e in [Coefficient::A2, Coefficient::A1(0), Coefficient::A1(1)] {
            if e != c && c.prerequisites().contains(&e) {
                o.clear(e, Clearance::Zeroed { delta: 0.0 });
            }
        }
        let rows = isolation_study(&o, c, &dec, &ladder)?;
        if rows.is_empty() {
            return invalid("no admissible ladder point for moment isolation");
        }
        for r in &rows {
            writeln!(table, "{},{},{:e},{:e},{:e}", c.name(), r.h, r.combined.norm(), r.direct.norm(), r.rel_error).unwrap();
        }
        worst = worst.max(rows.last().unwrap().rel_error);
    }
    Ok((format!("max relative error at finest h {:.2e}", worst), "≤ 3%".into(), worst <= 0.03, table))
}

fn tube_decomposition(rng: &mut ChaCha8Rng) -> Verdict {
    let p = RecoveryParams::defaults(0.5)?;
    let (a, eps) = (p.a, p.eps);
    let (mut add, mut iso, mut min_im) = (0.0f64, 0.0f64, f64::INFINITY);
    for _ in 0..1000 {
        // Uniform in the ball of radius 2εa in ℂ² ≅ ℝ⁴.
        let mut w: [f64; 4];
        loop {
            w = [0.0; 4].map(|_| rng.random_range(-1.0..1.0));
            if w.iter().map(|v| v * v).sum::<f64>() < 1.0 {
                break;
            }
        }
        let r = 2.0 * eps * a;
        let z = [C64::new(r * w[0], 2.0 * a + r * w[1]), C64::new(r * w[2], r * w[3])];
        let dec = isotropic_decompose(z, a, eps)?;
        let zn = norm([z[0].norm(), z[1].norm()]);
        add = add.max(norm([(dec.xi.0[0] + dec.eta.0[0] - z[0]).norm(), (dec.xi.0[1] + dec.eta.0[1] - z[1]).norm()]) / zn);
        iso = iso.max(dec.xi.self_dot().norm() / dec.xi.norm().powi(2)).max(dec.eta.self_dot().norm() / dec.eta.norm().powi(2));
        min_im = min_im.min(dec.xi.0[0].im).min(dec.eta.0[0].im);
    }
    let ok = add <= 1e-12 && iso <= 1e-12 && min_im >= a / 4.0;
    let table = format!("samples,additivity,isotropy,min_im_first,a_over_4\n1000,{add:e},{iso:e},{min_im},{}\n", a / 4.0);
    Ok((format!("additivity {add:.1e}, isotropy {iso:.1e}, min Im ξ₁,η₁ {:.3}·a", min_im / a), "≤ 1e-12, ≤ 1e-12, ≥ 0.25·a".into(), ok, table))
}

fn weighted_bound() -> Verdict {
    let (d, op, cut) = reference_cgo(128)?;
    let p = RecoveryParams::defaults(0.5)?;
    let q = PerturbationQ::from_fns(&d, |_| 0.0, |_| [0.0, 0.0], |x| bump(x, [-0.45, 0.1], 0.3));
    let o = MomentOracle::special_solutions(q, op, cut)?;
    let r = weighted_transform_bound(&o, p, &[160.0, 125.0, 95.0], &two_case_samples(&p), 12)?;
    let mut table = String::from("re_z1,im_z1,re_z2,im_z2,h,ln_synthesized,ln_direct,log_gap,weighted_ln,tube_ln,two_case\n");
    for pt in &r.points {
        writeln!(
            table,
            "{},{},{},{},{},{},{},{:e},{},{},{}",
            pt.z[0].re, pt.z[0].im, pt.z[1].re, pt.z[1].im, pt.h, pt.synthesized.ln_abs, pt.direct.ln_abs, pt.log_gap, pt.weighted_ln, pt.tube_ln, pt.two_case
        )
        .unwrap();
    }
    let ok = r.weighted_rate >= r.weighted_required && r.max_log_gap <= 0.05;
    Ok((
        format!("weighted rate {:.1} (need {:.1}), tube rate {:.1} (need {:.1}), max |Δln| {:.2e}", r.weighted_rate, r.weighted_required, r.tube_rate, r.tube_required, r.max_log_gap),
        "rate ≥ 0.8·ca/4, |Δln| ≤ 0.05".into(),
        ok,
        table,
    ))
}

/// Σ-side window used by the reconstruction check.
pub fn reference_window(d: &Domain) -> Result<StripWindow> {
    StripWindow::new(d, [-0.45, -0.3], [-0.05, 0.3], 0.2)
}

/// Named coefficient bundles: `zero`, single-coefficient bumps `a2`, `a1`, `a0`, and `mixed`.
pub fn preset(name: &str, d: &Arc<Domain>) -> Result<PerturbationQ> {
    let b = |x: Point| bump(x, [-0.5, 0.0], 0.45);
    Ok(match name {
        "zero" => PerturbationQ::zero(d),
        "a2" => PerturbationQ::from_fns(d, |_| 0.0, |_| [0.0, 0.0], b),
        "a1" => PerturbationQ::from_fns(d, |_| 0.0, |x| [b(x), 0.0], |_| 0.0),
        "a0" => PerturbationQ::from_fns(d, b, |_| [0.0, 0.0], |_| 0.0),
        "mixed" => PerturbationQ::from_fns(d, b, |x| [b(x), -0.5 * bump(x, [-0.6, -0.1], 0.4)], |x| 0.7 * bump(x, [-0.4, 0.1], 0.5)),
        _ => return invalid(format!("unknown coefficient preset '{name}' (zero, a2, a1, a0, mixed)")),
    })
}

fn strip_reconstruction() -> Verdict {
    let d = Arc::new(reference_disk(128, 2.0 * PI / 3.0)?);
    let w = reference_window(&d)?;
    let ladder = [0.008, 0.004];
    let singles = [(Coefficient::A2, preset("a2", &d)?), (Coefficient::A1(0), preset("a1", &d)?), (Coefficient::A0, preset("a0", &d)?)];
    let mut table = String::from("mode,coefficient,h,rel_error\n");
    let mut single_worst = 0.0f64;
    for (c, q) in singles {
        let o = MomentOracle::synthetic(q);
        for e in c.prerequisites() {
            o.clear(e, Clearance::Zeroed { delta: 0.0 });
        }
        let r = reconstruct_strip(&o, c, &w, &ladder)?;
        for row in &r.rows {
            writeln!(table, "single,{},{},{}", c.name(), row.h, row.rel_error).unwrap();
        }
        single_worst = single_worst.max(r.finest().rel_error);
    }
    let o = MomentOracle::synthetic(preset("mixed", &d)?);
    let mut pipe_worst = 0.0f64;
    for r in reconstruct_pipeline(&o, &w, &ladder)? {
        for row in &r.rows {
            writeln!(table, "pipeline,{},{},{}", r.coefficient.name(), row.h, row.rel_error).unwrap();
        }
        pipe_worst = pipe_worst.max(r.finest().rel_error);
    }
    Ok((
        format!("single {:.1}%, pipeline {:.1}%", 100.0 * single_worst, 100.0 * pipe_worst),
        "≤ 20% single, ≤ 25% pipeline".into(),
        single_worst <= 0.2 && pipe_worst <= 0.25,
        table,
    ))
}

/// Ω₁ ⊂ Ω₂ pair: a disk and the same disk dented towards the origin, Σ over the dent.
pub fn reference_nesting(res: usize, layers: usize) -> Result<NestedDomains> {
    let outer = Arc::new(Domain::build(Shape::disk([-1.0, 0.0], 0.9), res, SigmaSpec::Full)?);
    let inner = Arc::new(Domain::build(
        Shape::DentedDisk { center: [-1.0, 0.0], radius: 0.9, dent_angle: 0.0, dent_half_width: 0.9, dent_depth: 0.2 },
        res,
        SigmaSpec::arc([0.0, 0.0], 0.8),
    )?);
    NestedDomains::new(inner, outer, layers)
}

/// Element of ℰ on the inner domain of `nested`.
pub fn reference_target(nested: &NestedDomains) -> Result<Field> {
    let cfg = NormalizedConfiguration::new(nested.inner.clone(), 0.15)?;
    let cut = Arc::new(make_cutoff(&cfg, 0.1)?);
    let op = DiscreteOperator::assemble(&nested.inner)?;
    Ok(make_special_solution(&op, &cut, AmplitudeTag::One, IsotropicVector::from_direction([1.0, 0.0], 1.0), 0.25)?.total())
}

fn density() -> Verdict {
    let nd = reference_nesting(128, 2)?;
    let u = reference_target(&nd)?;
    let counts = [25, 50, 100, 200];
    let trend = density_trend(&nd, &u, &counts)?;
    let mut table = String::from("sources,relative_residual\n");
    for (m, a) in &trend {
        writeln!(table, "{m},{:e}", a.relative).unwrap();
    }
    let monotone = trend.windows(2).all(|w| w[1].1.residual <= 1.05 * w[0].1.residual);
    let dens: Vec<C64> = nd.sources[..100]
        .iter()
        .map(|&k| {
            let p = nd.outer.interior_point(k);
            C64::new(1.0 + 0.5 * p[1], 0.3 * (p[0] + 1.0))
        })
        .collect();
    let fit = approximate(&nd, &nd.green_potential(&dens)?, 100)?;
    writeln!(table, "in_range_100,{:e}", fit.relative).unwrap();
    let rel: Vec<String> = trend.iter().map(|(_, a)| format!("{:.2e}", a.relative)).collect();
    Ok((
        format!("residuals {} ; in-range {:.1e}", rel.join(", "), fit.relative),
        "non-increasing within 5%, in-range ≤ 1e-6".into(),
        monotone && fit.relative <= 1e-6,
        table,
    ))
}

fn kelvin_setup(res: usize) -> Result<(Arc<Domain>, Arc<Domain>, ConformalMap)> {
    let base = Arc::new(Domain::build(Shape::disk([0.0, 0.0], 0.5), res, SigmaSpec::Full)?);
    let map = ConformalMap::new([1.5, 0.0], 1.5, [-1.0, 0.0])?;
    let image = Arc::new(kelvin_image(&base, &map)?);
    Ok((base, image, map))
}

/// Involution error and the defect of Δ²u* = (r/|x − a|)⁶ (Δ²u)∘ψ for u = |x|⁴ at `res`.
pub fn kelvin_errors(res: usize) -> Result<(f64, f64, f64, f64)> {
    let (base, image, map) = kelvin_setup(res)?;
    let u = Field::from_fn(&base, |p| C64::new((2.0 * p[0]).sin(), p[1] * p[0]));
    let back = kelvin_transform(&kelvin_transform(&u, &map, 2, &image)?, &map, 2, &base)?;
    let involution = u.values.iter().zip(&back.values).map(|(a, b)| (a - b).norm()).fold(0.0, f64::max);
    let q = Field::from_real_fn(&base, |p| (p[0] * p[0] + p[1] * p[1]).powi(2));
    let k = kelvin_transform(&q, &map, 2, &image)?;
    let mut defect = 0.0f64;
    let mut amplification = 0.0f64;
    for (m, v) in bilaplacian_13(&k).into_iter().enumerate() {
        let x = image.interior_point(m);
        let c = (map.radius / norm(sub(x, map.center))).powi(6);
        amplification = amplification.max(c);
        if let Some(v) = v {
            defect = defect.max((v - 64.0 * c).norm());
        }
    }
    Ok((involution, defect, amplification, base.dx()))
}

fn kelvin() -> Verdict {
    let (c, f) = (kelvin_errors(96)?, kelvin_errors(192)?);
    let dx = f.3;
    let order = (c.1 / f.1).log2();
    let table = format!("resolution,involution_error,bilaplacian_defect,amplification\n96,{:e},{:e},{}\n192,{:e},{:e},{}\n", c.0, c.1, c.2, f.0, f.1, f.2);
    let ok = f.0 <= dx * dx && f.0 <= c.0 && order >= 1.7;
    Ok((
        format!("involution error {:.1e} (Δx² = {:.1e}), residual-map defect order {order:.2}, C = {:.1}", f.0, dx * dx, f.2),
        "error ≤ Δx², defect order ≥ 1.7".into(),
        ok,
        table,
    ))
}

/// All criteria in dependency order.
pub fn run_all(seed: u64) -> Vec<(usize, Result<CheckOutcome>)> {
    CRITERIA.iter().map(|&(id, _)| (id, run_check(id, seed))).collect()
}
