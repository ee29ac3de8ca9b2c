//! Subcommand bodies. Each returns the CSV artifacts it produced and the tolerance checks it made.

use std::fmt::Write as _;
use std::sync::Arc;

use cgo_biharmonic::biharmonic_core::DiscreteOperator;
use cgo_biharmonic::density_approx::{approximate, density_trend, NestedDomains};
use cgo_biharmonic::geometry::{norm, sub, Domain, NormalizedConfiguration, Point, Shape, SigmaSpec};
use cgo_biharmonic::linearized_dn::{duality_check, ForwardOperator, PerturbationQ};
use cgo_biharmonic::recovery::{contamination_sweep, isotropic_decompose, reconstruct_pipeline, Coefficient, MomentOracle, StripWindow};
use cgo_biharmonic::segal_bargmann::{bound_chain, inversion_limit, modulus_bound_ln, transform_complex};
use cgo_biharmonic::special_solutions::{decay_sweep, make_cutoff, make_special_solution, min_scale, Cutoff, IsotropicVector};
use cgo_biharmonic::verification::{bump, convergence_study, preset, random_q, random_sigma_data, run_check, CRITERIA};
use cgo_biharmonic::numerics::fit_slope;
use cgo_biharmonic::{Error, Result, C64};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;

use crate::config::{tag, ExperimentConfig};

/// One tolerance comparison; `lo..=hi` is the admissible range.
#[derive(Clone, Debug)]
pub struct Check {
    pub name: String,
    pub measured: f64,
    pub lo: f64,
    pub hi: f64,
}

impl Check {
    pub fn at_most(name: impl Into<String>, measured: f64, hi: f64) -> Self {
        Self { name: name.into(), measured, lo: f64::NEG_INFINITY, hi }
    }

    pub fn at_least(name: impl Into<String>, measured: f64, lo: f64) -> Self {
        Self { name: name.into(), measured, lo, hi: f64::INFINITY }
    }

    pub fn within(name: impl Into<String>, measured: f64, lo: f64, hi: f64) -> Self {
        Self { name: name.into(), measured, lo, hi }
    }

    pub fn passed(&self) -> bool {
        self.measured >= self.lo && self.measured <= self.hi
    }

    /// Distance outside the admissible range, 0 when inside.
    pub fn excess(&self) -> f64 {
        if self.measured.is_nan() {
            f64::NAN
        } else {
            (self.lo - self.measured).max(self.measured - self.hi).max(0.0)
        }
    }
}

/// Artifacts and checks of one subcommand.
#[derive(Default)]
pub struct Outcome {
    pub files: Vec<(String, String)>,
    pub checks: Vec<Check>,
    /// Per-criterion wall times, reported only in the manifest.
    pub timings: Vec<(String, f64)>,
}

impl Outcome {
    fn file(&mut self, name: impl Into<String>, body: String) {
        self.files.push((name.into(), body));
    }
}

pub fn checks_csv(checks: &[Check]) -> String {
    let mut s = String::from("check,measured,lower,upper,excess,passed\n");
    for c in checks {
        writeln!(s, "{},{},{},{},{},{}", c.name, c.measured, c.lo, c.hi, c.excess(), c.passed()).unwrap();
    }
    s
}

fn quote(s: &str) -> String {
    format!("\"{}\"", s.replace('"', "\"\""))
}

fn boundary_distance(d: &Domain, p: Point) -> f64 {
    norm(sub(p, d.shape.gamma(d.shape.closest_param(p))))
}

fn coefficients(cfg: &ExperimentConfig, d: &Arc<Domain>) -> Result<PerturbationQ> {
    let Some(path) = &cfg.coefficients.file else { return preset(&cfg.coefficients.preset, d) };
    let text = std::fs::read_to_string(path)?;
    let mut lines = text.lines();
    if lines.next().map(str::trim) != Some("a0,a1_1,a1_2,a2") {
        return Err(Error::Parse(format!("{path}: header must be a0,a1_1,a1_2,a2")));
    }
    let mut q = PerturbationQ::zero(d);
    let mut n = 0;
    for (k, line) in lines.filter(|l| !l.trim().is_empty()).enumerate() {
        let v: Vec<f64> = line.split(',').map(|t| t.trim().parse::<f64>()).collect::<std::result::Result<_, _>>().map_err(|e| Error::Parse(format!("{path}:{}: {e}", k + 2)))?;
        if v.len() != 4 || k >= d.n_interior() {
            return Err(Error::Parse(format!("{path}:{}: expected 4 values and at most {} rows", k + 2, d.n_interior())));
        }
        (q.a0[k], q.a1[0][k], q.a1[1][k], q.a2[k]) = (v[0], v[1], v[2], v[3]);
        n += 1;
    }
    if n != d.n_interior() {
        return Err(Error::Parse(format!("{path}: {n} rows for {} interior nodes", d.n_interior())));
    }
    Ok(q)
}

fn cgo_setup(cfg: &ExperimentConfig, res: usize) -> Result<(Arc<Domain>, Arc<DiscreteOperator>, Arc<Cutoff>)> {
    let d = cfg.build_domain(res)?;
    let nc = NormalizedConfiguration::new(d.clone(), cfg.recovery.c)?;
    let cut = Arc::new(make_cutoff(&nc, cfg.recovery.cutoff_width)?);
    let op = Arc::new(DiscreteOperator::assemble(&d)?);
    Ok((d, op, cut))
}

pub fn solve(cfg: &ExperimentConfig) -> Result<Outcome> {
    let res = cfg.domain.resolution;
    let ladder: Vec<usize> = [res / 4, res / 2, res].into_iter().filter(|r| *r >= 16).collect();
    if ladder.len() < 2 {
        return Err(Error::Invalid(format!("resolution {res} leaves fewer than two grids of at least 16")));
    }
    let (rows, slope) = convergence_study(&cfg.shape(), &ladder)?;
    let mut out = Outcome::default();
    let mut s = String::from("resolution,dx,l2_error\n");
    for (r, e) in &rows {
        writeln!(s, "{r},{},{e:e}", 1.0 / *r as f64).unwrap();
    }
    out.file("convergence.csv", s);
    out.checks.push(Check::within("solver_order", slope, 1.7, 2.3));
    Ok(out)
}

pub fn special(cfg: &ExperimentConfig) -> Result<Outcome> {
    let (d, op, cut) = cgo_setup(cfg, cfg.domain.resolution)?;
    let mut out = Outcome::default();
    let mut rows = String::from("case,tag,im_xi1,im_xi2,h,l2,h2,bound\n");
    let mut summary = String::from("case,tag,im_xi1,im_xi2,rate,predicted,rel_error,poly_exponent,normalized_slope\n");
    for (k, c) in cfg.special.cases.iter().enumerate() {
        let t = tag(&c.tag).ok_or_else(|| Error::Invalid(format!("unknown tag {}", c.tag)))?;
        let xi = IsotropicVector::from_direction(c.direction, c.scale);
        let ladder: Vec<f64> = cfg.ladder.special.iter().copied().filter(|h| *h >= min_scale(&d, &xi)).collect();
        let r = decay_sweep(&op, &cut, t, xi, &ladder)?;
        let rel = (r.rate - r.predicted).abs() / r.predicted.abs();
        for m in 0..r.h.len() {
            writeln!(rows, "{k},{},{},{},{},{:e},{:e},{:e}", c.tag, xi.im()[0], xi.im()[1], r.h[m], r.l2[m], r.h2[m], r.bound[m]).unwrap();
        }
        writeln!(summary, "{k},{},{},{},{},{},{rel},{},{}", c.tag, xi.im()[0], xi.im()[1], r.rate, r.predicted, r.poly, r.normalized_slope).unwrap();
        out.checks.push(Check::at_most(format!("decay_rate_rel_error[{k}]"), rel, 0.15));
        out.checks.push(Check::at_most(format!("decay_prefactor_slope[{k}]"), r.normalized_slope, 2.3));
    }
    out.file("decay.csv", rows);
    out.file("decay_summary.csv", summary);
    Ok(out)
}

/// Smooth bump (1 − r²/R²)⁴ filling 90% of the inscribed radius around the shape centre.
fn centred_bump(d: &Arc<Domain>) -> cgo_biharmonic::biharmonic_core::Field {
    let c = d.shape.center();
    let r2 = (0.9 * boundary_distance(d, c)).powi(2);
    cgo_biharmonic::biharmonic_core::Field::from_real_fn(d, |p| {
        let s: f64 = norm(sub(p, c)).powi(2) / r2;
        if s < 1.0 {
            (1.0 - s).powi(4)
        } else {
            0.0
        }
    })
    .without_ghosts()
}

pub fn transform(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.build_domain(cfg.domain.resolution)?;
    let (rows, _) = inversion_limit(&centred_bump(&d), &cfg.ladder.transform)?;
    let mut out = Outcome::default();
    let mut s = String::from("h,l2_error\n");
    for r in &rows {
        writeln!(s, "{},{:e}", r.h, r.l2_error).unwrap();
    }
    out.file("inversion.csv", s);
    let n = rows.len();
    for k in n - 2..n {
        let order = (rows[k - 1].l2_error / rows[k].l2_error).ln() / (rows[k - 1].h / rows[k].h).ln();
        out.checks.push(Check::within(format!("inversion_order[{k}]"), order, 1.7f64.log2(), 2.3f64.log2()));
    }
    Ok(out)
}

pub fn linearize(cfg: &ExperimentConfig) -> Result<Outcome> {
    let res = cfg.domain.resolution;
    let d = cfg.build_domain(res)?;
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let q = PerturbationQ::from_fns(&d, |p| 0.5 * p[1], |_| [0.0, 0.1], |_| 0.1);
    let fq = ForwardOperator::new(q.clone())?;
    let (t1, t2) = (cfg.linearize.steps[0], cfg.linearize.steps[1]);
    let mut out = Outcome::default();
    let mut s = String::from("sample,t1,t2,err_t1,err_t2,order\n");
    for k in 0..cfg.linearize.samples {
        let hq = random_q(&d, &mut rng, 0.5);
        let f = random_sigma_data(&d, &mut rng);
        let lam = fq.dn_map(&f)?;
        let b = fq.frechet_derivative(&hq, &f)?;
        let errs: Vec<f64> = [t1, t2]
            .par_iter()
            .map(|&t| Ok(ForwardOperator::new(q.add(&hq.scale(t))?)?.dn_map(&f)?.combine(1.0, &lam, -1.0)?.combine(1.0, &b, -t)?.norm()))
            .collect::<Result<_>>()?;
        let order = (errs[0] / errs[1]).ln() / (t1 / t2).ln();
        writeln!(s, "{k},{t1},{t2},{:e},{:e},{order}", errs[0], errs[1]).unwrap();
        out.checks.push(Check::within(format!("frechet_order[{k}]"), order, 1.7, 2.3));
    }
    out.file("linearization.csv", s);

    let seeds: Vec<[u64; 3]> = (0..cfg.linearize.samples).map(|_| [rng.random(), rng.random(), rng.random()]).collect();
    // Cut-cell alignment makes two-level ratios noisy; the order is a fit over five grids.
    let levels = [res / 2, 3 * res / 4, res, 3 * res / 2, 2 * res];
    let mut gaps = vec![[0.0; 5]; seeds.len()];
    for (l, &r) in levels.iter().enumerate() {
        let dl = cfg.build_domain(r)?;
        let op0 = ForwardOperator::new(PerturbationQ::zero(&dl))?;
        for (k, s) in seeds.iter().enumerate() {
            let hq = random_q(&dl, &mut ChaCha8Rng::seed_from_u64(s[0]), 1.0);
            let f = random_sigma_data(&dl, &mut ChaCha8Rng::seed_from_u64(s[1]));
            let g = random_sigma_data(&dl, &mut ChaCha8Rng::seed_from_u64(s[2]));
            gaps[k][l] = duality_check(&op0, &hq, &f, &g)?.gap;
        }
    }
    let x: Vec<f64> = levels.iter().map(|&r| (1.0 / r as f64).ln()).collect();
    let mut s = format!("sample,{},order\n", levels.map(|r| format!("gap_{r}")).join(","));
    for (k, g) in gaps.iter().enumerate() {
        let order = fit_slope(&x, &g.map(f64::ln));
        writeln!(s, "{k},{},{order}", g.map(|v| format!("{v:e}")).join(",")).unwrap();
        out.checks.push(Check::at_most(format!("duality_gap[{k}]"), g[2], 0.02));
        out.checks.push(Check::at_least(format!("duality_order[{k}]"), order, 1.0));
    }
    out.file("duality.csv", s);
    Ok(out)
}

pub fn recover(cfg: &ExperimentConfig) -> Result<Outcome> {
    let d = cfg.build_domain(cfg.domain.resolution)?;
    let r = &cfg.recovery;
    let window = StripWindow::new(&d, r.window_lo, r.window_hi, r.band)?;
    let oracle = MomentOracle::synthetic(coefficients(cfg, &d)?);
    let reports = reconstruct_pipeline(&oracle, &window, &cfg.ladder.strip)?;
    let floor = oracle.noise_floor(1.0);
    let largest = reports.iter().map(|r| r.truth_norm).fold(0.0, f64::max);
    let mut out = Outcome::default();
    let mut s = String::from("coefficient,h,frequencies,truth_norm,l2_error,rel_error,max_abs_estimate\n");
    for rep in &reports {
        let name = rep.coefficient.name();
        for row in &rep.rows {
            let peak = row.estimate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            writeln!(s, "{name},{},{},{},{},{},{peak}", row.h, rep.frequencies, rep.truth_norm, row.l2_error, row.rel_error).unwrap();
        }
        out.file(format!("strip_{}.csv", file_tag(rep.coefficient)), rep.to_csv(&d));
        let fin = rep.finest();
        if largest == 0.0 {
            let peak = fin.estimate.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            out.checks.push(Check::at_most(format!("noise_floor[{name}]"), peak, floor));
        } else if rep.truth_norm > 0.0 {
            out.checks.push(Check::at_most(format!("strip_rel_error[{name}]"), fin.rel_error, 0.25));
        } else {
            out.checks.push(Check::at_most(format!("strip_spurious[{name}]"), fin.l2_error / largest, 0.25));
        }
    }
    out.file("strip_errors.csv", s);
    Ok(out)
}

fn file_tag(c: Coefficient) -> String {
    match c {
        Coefficient::A2 => "a2".into(),
        Coefficient::A1(j) => format!("a1_{}", j + 1),
        Coefficient::A0 => "a0".into(),
    }
}

pub fn density(cfg: &ExperimentConfig) -> Result<Outcome> {
    let n = &cfg.density;
    let res = cfg.domain.resolution;
    let c = cfg.domain.center;
    let outer = Arc::new(Domain::build(Shape::disk(c, n.outer_radius), res, SigmaSpec::Full)?);
    let inner = Arc::new(Domain::build(
        Shape::DentedDisk { center: c, radius: n.outer_radius, dent_angle: cfg.domain.dent_angle, dent_half_width: n.dent_half_width, dent_depth: n.dent_depth },
        res,
        SigmaSpec::arc(cfg.sigma.toward, n.sigma_half_angle),
    )?);
    let nd = NestedDomains::new(inner, outer, n.layers)?;
    let nc = NormalizedConfiguration::new(nd.inner.clone(), n.c)?;
    let cut = Arc::new(make_cutoff(&nc, n.cutoff_width)?);
    let op = DiscreteOperator::assemble(&nd.inner)?;
    let target = make_special_solution(&op, &cut, cgo_biharmonic::special_solutions::AmplitudeTag::One, IsotropicVector::from_direction([1.0, 0.0], n.target_scale), n.target_h)?.total();
    let trend = density_trend(&nd, &target, &n.counts)?;
    let mut out = Outcome::default();
    let mut s = String::from("sources,residual,relative_residual,ridge\n");
    for (m, a) in &trend {
        writeln!(s, "{m},{:e},{:e},{:e}", a.residual, a.relative, a.ridge).unwrap();
    }
    out.file("density_trend.csv", s);
    for (k, w) in trend.windows(2).enumerate() {
        out.checks.push(Check::at_most(format!("residual_growth[{k}]"), w[1].1.residual / w[0].1.residual, 1.05));
    }
    let (m, fit) = trend.last().unwrap();
    let mut s = String::from("source,x,y,re,im\n");
    for (k, a) in fit.density.iter().enumerate() {
        let p = nd.outer.interior_point(nd.sources[k]);
        writeln!(s, "{k},{},{},{:e},{:e}", p[0], p[1], a.re, a.im).unwrap();
    }
    out.file("density_fit.csv", s);
    // A target that is itself a potential of the first sources must be fitted to solver accuracy.
    let m = (*m).min(100);
    let dens: Vec<C64> = nd.sources[..m]
        .iter()
        .map(|&k| {
            let p = nd.outer.interior_point(k);
            C64::new(1.0 + 0.5 * (p[1] - c[1]), 0.3 * (p[0] - c[0]))
        })
        .collect();
    let inrange = approximate(&nd, &nd.green_potential(&dens)?, m)?;
    out.checks.push(Check::at_most("in_range_relative_residual", inrange.relative, 1e-6));
    Ok(out)
}

pub fn sweep(cfg: &ExperimentConfig) -> Result<Outcome> {
    let sw = &cfg.sweep;
    let d = cfg.build_domain(cfg.domain.resolution)?;
    let f = centred_bump(&d);
    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let (a, eps) = (sw.a, sw.eps);
    let mut jobs = Vec::new();
    for _ in 0..sw.points {
        let z = [
            C64::new(2.0 * a + rng.random_range(-0.5..0.5) * eps * a, rng.random_range(-0.5..0.5)),
            C64::new(rng.random_range(-0.3..0.3), rng.random_range(-0.3..0.3)),
        ];
        jobs.extend(sw.h.iter().map(|&h| (z, h)));
    }
    let rows: Vec<(f64, f64, f64, f64, bool)> = jobs
        .par_iter()
        .map(|&(z, h)| {
            let b = bound_chain(&f, h, z, eps, a)?;
            let direct = transform_complex(&f, h, z)?.ln_abs;
            let modulus = modulus_bound_ln(&f, h, z);
            Ok((direct, b.lhs_ln, b.rhs_ln, modulus, b.holds && direct <= modulus + 1e-9))
        })
        .collect::<Result<_>>()?;
    let mut s = String::from("re_z1,im_z1,re_z2,im_z2,h,ln_direct,ln_lhs,ln_rhs,ln_modulus,holds\n");
    for ((z, h), r) in jobs.iter().zip(&rows) {
        writeln!(s, "{},{},{},{},{h},{},{},{},{},{}", z[0].re, z[0].im, z[1].re, z[1].im, r.0, r.1, r.2, r.3, r.4).unwrap();
    }
    let mut out = Outcome::default();
    out.file("bound_sweep.csv", s);
    let failed = rows.iter().filter(|r| !r.4).count();
    out.checks.push(Check::at_most("bound_violations", failed as f64, 0.0));

    // Contamination of the a¹ stage by an a² supported in {x₁ ≤ −δ}.
    let (_, op, cut) = cgo_setup(cfg, cfg.domain.resolution)?;
    let delta = sw.delta;
    let x0 = d.shape.center();
    let reach = x0[0].abs() - delta;
    if reach <= 0.0 {
        return Err(Error::Invalid(format!("sweep.delta {delta} leaves no room for a² left of the domain centre")));
    }
    let r0 = (0.5 * reach).min(0.9 * boundary_distance(&d, x0));
    let centre = [-delta - r0, x0[1]];
    let q = PerturbationQ::from_fns(&d, |_| 0.0, |_| [0.0, 0.0], move |p| bump(p, centre, r0));
    let oracle = MomentOracle::special_solutions(q, op, cut)?;
    let p = cfg.recovery_params()?;
    let dec = isotropic_decompose(p.tube_center(), p.a, p.eps)?;
    let rep = contamination_sweep(&oracle, 0, &dec, delta, &cfg.ladder.tau)?;
    let mut s = String::from("h,raw,residue_bound\n");
    for k in 0..rep.h.len() {
        writeln!(s, "{},{:e},{:e}", rep.h[k], rep.raw[k], rep.bound[k]).unwrap();
    }
    out.file("contamination.csv", s);
    let floor = oracle.noise_floor(1.0);
    let rises = rep.raw.windows(2).filter(|w| w[1] > w[0] + floor).count();
    out.checks.push(Check::at_most("contamination_rises", rises as f64, 1.0));
    out.checks.push(Check::at_least("contamination_rate", rep.rate, rep.predicted));
    Ok(out)
}

/// Acceptance suite in dependency order.
pub fn all(cfg: &ExperimentConfig) -> Result<Outcome> {
    let mut out = Outcome::default();
    let mut s = String::from("id,criterion,passed,measured,requirement\n");
    for &(id, name) in &CRITERIA {
        match run_check(id, cfg.seed) {
            Ok(c) => {
                writeln!(s, "{id},{},{},{},{}", quote(name), c.passed, quote(&c.measured), quote(&c.requirement)).unwrap();
                out.file(format!("criterion_{id:02}.csv"), c.table.clone());
                out.checks.push(Check::at_least(format!("criterion_{id:02}"), if c.passed { 1.0 } else { 0.0 }, 1.0));
                out.timings.push((format!("criterion_{id:02}"), c.seconds));
                eprintln!("{}", c.line());
            }
            Err(e) if e.is_solver_failure() => return Err(e),
            Err(e) => {
                writeln!(s, "{id},{},false,{},", quote(name), quote(&format!("error: {e}"))).unwrap();
                out.checks.push(Check::at_least(format!("criterion_{id:02}"), 0.0, 1.0));
                eprintln!("FAIL {id:>2} {name} error: {e}");
            }
        }
    }
    out.file("summary.csv", s);
    Ok(out)
}
