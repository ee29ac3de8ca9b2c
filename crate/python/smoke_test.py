"""Smoke test for the Python bindings. Run from this directory after building the extension."""

import math

import numpy as np

import cgo_biharmonic as cb


def main():
    d = cb.Domain(48)
    assert d.n_interior == len(d.interior_points()) == len(d.weights())
    assert abs(d.area - math.pi) < 0.05 and d.has_gamma

    rows, order = cb.convergence([32, 64])
    assert 1.7 <= order <= 2.3, order

    one = cb.Field.from_function(d, lambda x, y: 1.0)
    u = cb.solve_clamped(one)
    assert u.max_abs() > 0 and len(u.values()) == d.n_interior

    xi = np.array(cb.isotropic_vector((1.0, 0.0), 1.0))
    assert abs(xi @ xi) < 1e-14

    z = [0.05 + 4.1j, 0.1 - 0.05j]
    a, b, in_tube, _ = cb.decompose(z, 2.0, 0.1)
    a, b = np.array(a), np.array(b)
    assert in_tube and abs(a @ a) < 1e-12 and abs(b @ b) < 1e-12
    assert np.allclose(a + b, z)

    c, eps, amp = cb.recovery_defaults(0.5)
    assert c == 0.5 and eps > 0 and amp > 0

    bump = cb.Field.from_function(d, lambda x, y: math.exp(-20 * ((x + 1) ** 2 + y**2)))
    ln_abs, _ = cb.transform_at(bump, 0.05, [-1.0 + 0j, 0j])
    assert math.isfinite(ln_abs)

    k = cb.kelvin(one, (0.5, 0.0), 1.0, (1.0, 0.0))
    assert k.max_abs() > 0

    passed, measured, requirement, table = cb.run_check(4)
    assert passed, (measured, requirement)
    print("python smoke test: ok")


if __name__ == "__main__":
    main()
