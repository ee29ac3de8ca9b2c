//! Python bindings: domains, fields, the clamped plate solve, special solutions, the
//! transform, frequency splitting, strip reconstruction, density fits and the acceptance checks.

use std::sync::Arc;

use cgo_biharmonic::biharmonic_core::{BoundaryData, DiscreteOperator, Field};
use cgo_biharmonic::density_approx::density_trend;
use cgo_biharmonic::geometry::{kelvin_image, kelvin_transform, ConformalMap, Domain, NormalizedConfiguration, Shape, SigmaSpec};
use cgo_biharmonic::recovery::{isotropic_decompose, reconstruct_pipeline, MomentOracle, RecoveryParams, StripWindow};
use cgo_biharmonic::segal_bargmann::{inversion_limit, transform_complex, transform_real};
use cgo_biharmonic::special_solutions::{decay_sweep, make_cutoff, make_special_solution, min_scale, AmplitudeTag, IsotropicVector};
use cgo_biharmonic::verification::{self, convergence_study};
use cgo_biharmonic::{Error, C64};
use num_complex::Complex64;
use pyo3::exceptions::{PyRuntimeError, PyValueError};
use pyo3::prelude::*;
use pyo3::types::PyDict;

fn err(e: Error) -> PyErr {
    if e.is_solver_failure() {
        PyRuntimeError::new_err(e.to_string())
    } else {
        PyValueError::new_err(e.to_string())
    }
}

fn tag(name: &str) -> PyResult<AmplitudeTag> {
    match name {
        "one" => Ok(AmplitudeTag::One),
        "x1" => Ok(AmplitudeTag::Coord(0)),
        "x2" => Ok(AmplitudeTag::Coord(1)),
        "normsq" => Ok(AmplitudeTag::NormSq),
        _ => Err(PyValueError::new_err(format!("unknown amplitude '{name}' (one, x1, x2, normsq)"))),
    }
}

fn c2(z: [Complex64; 2]) -> [C64; 2] {
    [C64::new(z[0].re, z[0].im), C64::new(z[1].re, z[1].im)]
}

fn pc(z: C64) -> Complex64 {
    Complex64::new(z.re, z.im)
}

/// Grid-embedded planar domain with accessible boundary part Σ.
#[pyclass(name = "Domain", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyDomain(Arc<Domain>);

#[pymethods]
impl PyDomain {
    /// shape: "disk", "stadium" or "dented". `sigma_half_angle=None` makes all of ∂Ω accessible.
    #[new]
    #[pyo3(signature = (resolution, shape="disk", center=(-1.0, 0.0), radius=1.0, half_length=0.9, half_width=0.6, dent_angle=0.0, dent_half_width=0.9, dent_depth=0.2, sigma_toward=(0.0, 0.0), sigma_half_angle=Some(2.0943951023931953)))]
    #[allow(clippy::too_many_arguments)]
    fn new(
        resolution: usize,
        shape: &str,
        center: (f64, f64),
        radius: f64,
        half_length: f64,
        half_width: f64,
        dent_angle: f64,
        dent_half_width: f64,
        dent_depth: f64,
        sigma_toward: (f64, f64),
        sigma_half_angle: Option<f64>,
    ) -> PyResult<Self> {
        let c = [center.0, center.1];
        let s = match shape {
            "disk" => Shape::disk(c, radius),
            "stadium" => Shape::Stadium { center: c, half_length, half_width },
            "dented" => Shape::DentedDisk { center: c, radius, dent_angle, dent_half_width, dent_depth },
            _ => return Err(PyValueError::new_err(format!("unknown shape '{shape}' (disk, stadium, dented)"))),
        };
        let sigma = match sigma_half_angle {
            Some(a) => SigmaSpec::arc([sigma_toward.0, sigma_toward.1], a),
            None => SigmaSpec::Full,
        };
        Ok(Self(Arc::new(Domain::build(s, resolution, sigma).map_err(err)?)))
    }

    #[getter]
    fn dx(&self) -> f64 {
        self.0.dx()
    }

    #[getter]
    fn n_interior(&self) -> usize {
        self.0.n_interior()
    }

    #[getter]
    fn area(&self) -> f64 {
        self.0.area()
    }

    #[getter]
    fn has_gamma(&self) -> bool {
        self.0.has_gamma()
    }

    fn interior_points(&self) -> Vec<(f64, f64)> {
        self.0.interior_points().into_iter().map(|p| (p[0], p[1])).collect()
    }

    /// Quadrature weights of the interior nodes.
    fn weights(&self) -> Vec<f64> {
        self.0.weights.clone()
    }

    fn __repr__(&self) -> String {
        format!("Domain(n_interior={}, dx={})", self.0.n_interior(), self.0.dx())
    }
}

/// Complex field on the interior nodes of a domain.
#[pyclass(name = "Field", frozen, skip_from_py_object)]
#[derive(Clone)]
struct PyField(Field);

#[pymethods]
impl PyField {
    #[new]
    fn new(domain: &PyDomain, values: Vec<Complex64>) -> PyResult<Self> {
        Ok(Self(Field::new(&domain.0, values.into_iter().map(|v| C64::new(v.re, v.im)).collect()).map_err(err)?))
    }

    /// Samples a Python callable f(x1, x2) -> complex at the interior nodes.
    #[staticmethod]
    fn from_function(domain: &PyDomain, f: &Bound<'_, PyAny>) -> PyResult<Self> {
        let values = domain
            .0
            .interior_points()
            .into_iter()
            .map(|p| f.call1((p[0], p[1]))?.extract::<Complex64>().map(|v| C64::new(v.re, v.im)))
            .collect::<PyResult<Vec<_>>>()?;
        Ok(Self(Field::new(&domain.0, values).map_err(err)?))
    }

    fn values(&self) -> Vec<Complex64> {
        self.0.values.iter().map(|v| pc(*v)).collect()
    }

    fn max_abs(&self) -> f64 {
        self.0.max_abs()
    }

    #[getter]
    fn domain(&self) -> PyDomain {
        PyDomain(self.0.domain.clone())
    }
}

/// Solves Δ²u = f with Cauchy data (g(x), ∇g(x)·ν) from a callable g(x1, x2) -> (value, (d1, d2)).
#[pyfunction]
#[pyo3(signature = (f, g=None))]
fn solve_clamped(f: &PyField, g: Option<&Bound<'_, PyAny>>) -> PyResult<PyField> {
    let d = &f.0.domain;
    let bc = match g {
        None => BoundaryData::zeros(d),
        Some(g) => {
            let fail = std::cell::RefCell::new(None);
            let bc = BoundaryData::from_function(d, |p| match g.call1((p[0], p[1])).and_then(|r| r.extract::<(f64, (f64, f64))>()) {
                Ok((v, (a, b))) => (C64::new(v, 0.0), [C64::new(a, 0.0), C64::new(b, 0.0)]),
                Err(e) => {
                    fail.borrow_mut().get_or_insert(e);
                    (C64::new(0.0, 0.0), [C64::new(0.0, 0.0); 2])
                }
            });
            if let Some(e) = fail.into_inner() {
                return Err(e);
            }
            bc
        }
    };
    let op = DiscreteOperator::assemble(d).map_err(err)?;
    Ok(PyField(op.solve_dirichlet(&f.0, &bc).map_err(err)?))
}

/// Manufactured-solution errors [(resolution, L2 error)] and the fitted order on a disk.
#[pyfunction]
#[pyo3(signature = (resolutions, center=(0.0, 0.0), radius=1.0))]
fn convergence(resolutions: Vec<usize>, center: (f64, f64), radius: f64) -> PyResult<(Vec<(usize, f64)>, f64)> {
    convergence_study(&Shape::disk([center.0, center.1], radius), &resolutions).map_err(err)
}

/// Isotropic vector ξ = s(ω + iω⊥) for a direction ω.
#[pyfunction]
fn isotropic_vector(direction: (f64, f64), scale: f64) -> [Complex64; 2] {
    IsotropicVector::from_direction([direction.0, direction.1], scale).0.map(pc)
}

/// Remainder decay sweep of a special solution; returns h, the H² norms and the fitted rate.
#[pyfunction]
#[pyo3(signature = (domain, amplitude, direction, scale, ladder, c=0.5, cutoff_width=0.2))]
fn decay(py: Python<'_>, domain: &PyDomain, amplitude: &str, direction: (f64, f64), scale: f64, ladder: Vec<f64>, c: f64, cutoff_width: f64) -> PyResult<Py<PyDict>> {
    let d = &domain.0;
    let cut = Arc::new(make_cutoff(&NormalizedConfiguration::new(d.clone(), c).map_err(err)?, cutoff_width).map_err(err)?);
    let op = DiscreteOperator::assemble(d).map_err(err)?;
    let xi = IsotropicVector::from_direction([direction.0, direction.1], scale);
    let ladder: Vec<f64> = ladder.into_iter().filter(|h| *h >= min_scale(d, &xi)).collect();
    let r = py.detach(|| decay_sweep(&op, &cut, tag(amplitude)?, xi, &ladder).map_err(err))?;
    let out = PyDict::new(py);
    out.set_item("h", r.h)?;
    out.set_item("l2", r.l2)?;
    out.set_item("h2", r.h2)?;
    out.set_item("rate", r.rate)?;
    out.set_item("predicted", r.predicted)?;
    out.set_item("poly", r.poly)?;
    Ok(out.unbind())
}

/// Total field a e^{−ix·ξ/h} + r of a special solution.
#[pyfunction]
#[pyo3(signature = (domain, amplitude, direction, scale, h, c=0.5, cutoff_width=0.2))]
fn special_solution(domain: &PyDomain, amplitude: &str, direction: (f64, f64), scale: f64, h: f64, c: f64, cutoff_width: f64) -> PyResult<PyField> {
    let d = &domain.0;
    let cut = Arc::new(make_cutoff(&NormalizedConfiguration::new(d.clone(), c).map_err(err)?, cutoff_width).map_err(err)?);
    let op = DiscreteOperator::assemble(d).map_err(err)?;
    let xi = IsotropicVector::from_direction([direction.0, direction.1], scale);
    Ok(PyField(make_special_solution(&op, &cut, tag(amplitude)?, xi, h).map_err(err)?.total()))
}

/// Tf at the interior nodes (real arguments).
#[pyfunction]
fn transform(f: &PyField, h: f64) -> PyResult<PyField> {
    Ok(PyField(transform_real(&f.0, h).map_err(err)?.restrict(&f.0)))
}

/// Tf(z) for complex z as (ln|Tf|, arg Tf).
#[pyfunction]
fn transform_at(f: &PyField, h: f64, z: [Complex64; 2]) -> PyResult<(f64, f64)> {
    let v = transform_complex(&f.0, h, c2(z)).map_err(err)?;
    Ok((v.ln_abs, v.arg))
}

/// [(h, ‖(2πh)^{−1}Tf − f‖)] and the fitted slope.
#[pyfunction]
fn inversion(f: &PyField, ladder: Vec<f64>) -> PyResult<(Vec<(f64, f64)>, f64)> {
    let (rows, slope) = inversion_limit(&f.0, &ladder).map_err(err)?;
    Ok((rows.iter().map(|r| (r.h, r.l2_error)).collect(), slope))
}

/// z = ξ + η with ξ·ξ = η·η = 0; returns (ξ, η, in_tube, constraint).
#[pyfunction]
fn decompose(z: [Complex64; 2], a: f64, eps: f64) -> PyResult<([Complex64; 2], [Complex64; 2], bool, bool)> {
    let d = isotropic_decompose(c2(z), a, eps).map_err(err)?;
    Ok((d.xi.0.map(pc), d.eta.0.map(pc), d.in_tube, d.constraint))
}

/// Default recovery parameters (c, ε, a).
#[pyfunction]
fn recovery_defaults(c: f64) -> PyResult<(f64, f64, f64)> {
    let p = RecoveryParams::defaults(c).map_err(err)?;
    Ok((p.c, p.eps, p.a))
}

/// Strip reconstruction of a named preset from synthetic moments.
/// Returns {coefficient: (relative L² error at finest h, truth, estimate)}.
#[pyfunction]
#[pyo3(signature = (domain, preset, ladder, window_lo=(-0.45, -0.3), window_hi=(-0.05, 0.3), band=0.2))]
fn reconstruct(py: Python<'_>, domain: &PyDomain, preset: &str, ladder: Vec<f64>, window_lo: (f64, f64), window_hi: (f64, f64), band: f64) -> PyResult<Py<PyDict>> {
    let d = &domain.0;
    let q = verification::preset(preset, d).map_err(err)?;
    let w = StripWindow::new(d, [window_lo.0, window_lo.1], [window_hi.0, window_hi.1], band).map_err(err)?;
    let oracle = MomentOracle::synthetic(q);
    let reports = py.detach(|| reconstruct_pipeline(&oracle, &w, &ladder).map_err(err))?;
    let out = PyDict::new(py);
    for r in reports {
        let f = r.finest();
        out.set_item(r.coefficient.name(), (f.rel_error, r.truth.clone(), f.estimate.clone()))?;
    }
    Ok(out.unbind())
}

/// Density approximation residuals on the reference nested pair for each source count.
#[pyfunction]
#[pyo3(signature = (resolution, counts, layers=2))]
fn density(py: Python<'_>, resolution: usize, counts: Vec<usize>, layers: usize) -> PyResult<Vec<(usize, f64)>> {
    py.detach(|| {
        let nd = verification::reference_nesting(resolution, layers)?;
        let u = verification::reference_target(&nd)?;
        Ok(density_trend(&nd, &u, &counts)?.into_iter().map(|(m, a)| (m, a.relative)).collect())
    })
    .map_err(err)
}

/// Kelvin transform of `f` under inversion in the circle (center, radius); returns the image field.
#[pyfunction]
fn kelvin(f: &PyField, center: (f64, f64), radius: f64, direction: (f64, f64)) -> PyResult<PyField> {
    let map = ConformalMap::new([center.0, center.1], radius, [direction.0, direction.1]).map_err(err)?;
    let image = Arc::new(kelvin_image(&f.0.domain, &map).map_err(err)?);
    Ok(PyField(kelvin_transform(&f.0, &map, 2, &image).map_err(err)?))
}

/// Runs acceptance criterion `id`; returns (passed, measured, requirement, csv table).
#[pyfunction]
#[pyo3(signature = (id, seed=20240917))]
fn run_check(py: Python<'_>, id: usize, seed: u64) -> PyResult<(bool, String, String, String)> {
    let c = py.detach(|| verification::run_check(id, seed)).map_err(err)?;
    Ok((c.passed, c.measured, c.requirement, c.table))
}

#[pymodule]
#[pyo3(name = "cgo_biharmonic")]
fn cgo_biharmonic_py(m: &Bound<'_, PyModule>) -> PyResult<()> {
    register(m)
}

/// Adds every class and function to `m`.
pub fn register(m: &Bound<'_, PyModule>) -> PyResult<()> {
    m.add_class::<PyDomain>()?;
    m.add_class::<PyField>()?;
    m.add_function(wrap_pyfunction!(solve_clamped, m)?)?;
    m.add_function(wrap_pyfunction!(convergence, m)?)?;
    m.add_function(wrap_pyfunction!(isotropic_vector, m)?)?;
    m.add_function(wrap_pyfunction!(decay, m)?)?;
    m.add_function(wrap_pyfunction!(special_solution, m)?)?;
    m.add_function(wrap_pyfunction!(transform, m)?)?;
    m.add_function(wrap_pyfunction!(transform_at, m)?)?;
    m.add_function(wrap_pyfunction!(inversion, m)?)?;
    m.add_function(wrap_pyfunction!(decompose, m)?)?;
    m.add_function(wrap_pyfunction!(recovery_defaults, m)?)?;
    m.add_function(wrap_pyfunction!(reconstruct, m)?)?;
    m.add_function(wrap_pyfunction!(density, m)?)?;
    m.add_function(wrap_pyfunction!(kelvin, m)?)?;
    m.add_function(wrap_pyfunction!(run_check, m)?)?;
    Ok(())
}
