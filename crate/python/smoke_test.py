"""Smoke test for the eigpool Python bindings.

Build and install first:
    pip install maturin
    maturin build --release -m crates/python/Cargo.toml -o dist
    pip install dist/eigpool_py-*.whl
"""

import math
import random

import eigpool_py as ep


def matmul(a, b):
    return [[sum(x * y for x, y in zip(row, col)) for col in zip(*b)] for row in a]


def close(a, b, tol):
    return all(abs(x - y) <= tol for ra, rb in zip(a, b) for x, y in zip(ra, rb))


def main():
    rng = random.Random(0)
    d, n = 4, 16
    x = [[rng.gauss(0.0, 1.0) for _ in range(n)] for _ in range(d)]

    p = ep.covariance(x)
    lam, u = ep.sym_eig(p)
    assert all(a >= b for a, b in zip(lam, lam[1:])), lam
    recon = matmul(matmul(u, [[lam[j] if i == j else 0.0 for j in range(d)] for i in range(d)]),
                   [list(r) for r in zip(*u)])
    assert close(recon, p, 1e-12)

    root = ep.mat_fn(p, "sqrt")
    assert close(matmul(root, root), p, 1e-10)

    pool = ep.GcpPool(seb=True)
    state = pool.forward(x)
    factor = state.factor
    assert factor is not None and 0.0 < factor
    assert close(state.output, [[(factor + 1.0) * v for v in row] for row in root], 1e-10)
    assert math.isclose(factor, ep.seb_factor(p), rel_tol=1e-12)
    grad = state.backward([[1.0 if i == j else 0.0 for j in range(d)] for i in range(d)])
    assert len(grad) == d and len(grad[0]) == n

    assert ep.condition_number(p) >= 1.0
    assert ep.log_euclidean_dist(p, p) == 0.0
    assert 0.0 <= ep.energy_fraction(lam, 2) <= 1.0
    assert ep.select_eigs(lam, "large", 2)[2:] == [0.0, 0.0]
    assert math.isclose(ep.corr_coeff(x, x), 1.0, rel_tol=1e-12)
    assert ep.mae(x, x) == 0.0
    assert ep.vn_trace_gap(p, p) >= -1e-9

    passed, worst = ep.gradcheck("gcp_backward_seb", trials=5, seed=0)
    assert passed, worst

    try:
        ep.mat_fn(p, "cube")
    except ValueError:
        pass
    else:
        raise AssertionError("unknown function accepted")

    print("eigpool_py smoke test passed")


if __name__ == "__main__":
    main()
