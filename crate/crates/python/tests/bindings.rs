//! Drives the module through an embedded interpreter.

use pyo3::prelude::*;
use pyo3::types::PyModule;

#[test]
fn module_round_trip() {
    Python::initialize();
    Python::attach(|py| {
        let m = PyModule::new(py, "cgo_biharmonic").unwrap();
        cgo_biharmonic_py::register(&m).unwrap();
        let d = m.getattr("Domain").unwrap().call1((32,)).unwrap();
        let n: usize = d.getattr("n_interior").unwrap().extract().unwrap();
        assert!(n > 100);
        let (a, b, in_tube, _): (Vec<num_complex::Complex64>, Vec<num_complex::Complex64>, bool, bool) = m
            .getattr("decompose")
            .unwrap()
            .call1((vec![num_complex::Complex64::new(0.0, 4.0), num_complex::Complex64::new(0.0, 0.0)], 2.0, 0.1))
            .unwrap()
            .extract()
            .unwrap();
        assert!(in_tube);
        assert!((a[0] * a[0] + a[1] * a[1]).norm() < 1e-12 && (b[0] * b[0] + b[1] * b[1]).norm() < 1e-12);
        let err = m.getattr("Domain").unwrap().call1((32, "triangle")).unwrap_err();
        assert!(err.is_instance_of::<pyo3::exceptions::PyValueError>(py));
    });
}
