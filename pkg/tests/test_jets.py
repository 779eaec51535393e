import numpy as np
import pytest

from geolab import jets as J
from geolab.errors import (
    DegreeMismatch,
    DimensionMismatch,
    NotSymplectic,
    PreconditionBasisFails,
    WrongTupleLength,
)


def rand_jet(d, k, rng, density=0.25):
    base = J.JetMap.from_linear(J.random_symplectic(d, rng, 0.5), k,
                                check_symplectic=False)
    for comp in base.comps:
        for deg in range(2, k + 1):
            for e in J.monomials(2 * d, deg):
                if rng.random() < density:
                    comp[e] = 0.1 * rng.standard_normal()
    return J.JetMap(d, k, base.comps, check_symplectic=False)


def test_dimension_formula_matches_enumeration():
    for d in (1, 2, 3):
        for k in range(1, 6):
            sp = J.PolySpace(d, k)
            assert sp.dim == sp.dim_formula()


def test_compose_identity_and_matrix_example():
    f = J.JetMap.from_linear(np.array([[1.0, 1.0], [0.0, 1.0]]), 1)
    g = J.JetMap.from_linear(np.array([[1.0, 0.0], [1.0, 1.0]]), 1)
    prod = J.jet_compose(f, g)
    assert np.allclose(prod.linear_part(), [[1, 1], [1, 2]])
    ident = J.JetMap.identity(1, 1)
    assert J.jet_compose(ident, f).coefficients_equal(f)
    assert J.jet_compose(f, ident).coefficients_equal(f)


def test_compose_quadratic_against_brute_force_expansion():
    rng = np.random.default_rng(7)
    f = rand_jet(1, 2, rng, density=1.0)
    g = J.JetMap.from_linear(J.random_symplectic(1, rng), 2,
                             check_symplectic=False)
    comp = J.jet_compose(f, g)  # g o f
    for z in ([0.1, -0.2], [0.03, 0.07]):
        direct = g.evaluate(f.evaluate(np.array(z)))
        # truncation error is cubic in |z|; evaluate at small z
        assert np.allclose(comp.evaluate(np.array(z)), direct, atol=2e-3)


def test_compose_dimension_mismatch():
    with pytest.raises(DimensionMismatch):
        J.jet_compose(J.JetMap.identity(1, 2), J.JetMap.identity(2, 2))


def test_truncate_and_kernel_membership():
    rng = np.random.default_rng(8)
    f = rand_jet(1, 3, rng)
    assert J.jet_truncate(f, 3).coefficients_equal(f)
    ident = J.JetMap.identity(1, 3)
    bumped = J.JetMap(
        1, 3,
        [J.poly_add(c, {(3, 0): 0.5} if i == 0 else {}) for i, c in
         enumerate(ident.comps)],
        check_symplectic=False,
    )
    assert J.in_truncation_kernel(bumped, 2)
    assert not J.in_truncation_kernel(f, 1) or np.allclose(
        f.linear_part(), np.eye(2)
    )
    assert np.allclose(J.jet_truncate(f, 1).linear_part(), f.linear_part())


def test_invert_examples():
    rng = np.random.default_rng(9)
    ident = J.JetMap.identity(1, 2)
    assert J.jet_invert(ident).coefficients_equal(ident)
    sig = J.random_symplectic(1, rng)
    lin = J.JetMap.from_linear(sig, 1)
    inv = J.jet_invert(lin)
    assert np.allclose(inv.linear_part(), np.linalg.inv(sig), atol=1e-12)
    f = rand_jet(2, 2, rng)
    finv = J.jet_invert(f)
    resid = J.jet_compose(f, finv).max_coeff_delta(J.JetMap.identity(2, 2))
    resid2 = J.jet_compose(finv, f).max_coeff_delta(J.JetMap.identity(2, 2))
    assert resid <= 1e-12
    assert resid2 <= 1e-12


def test_associativity_random_triples():
    rng = np.random.default_rng(10)
    for d, k in ((1, 3), (2, 2)):
        a, b, c = (rand_jet(d, k, rng) for _ in range(3))
        lhs = J.jet_compose(J.jet_compose(a, b), c)
        rhs = J.jet_compose(a, J.jet_compose(b, c))
        assert lhs.max_coeff_delta(rhs) <= 1e-12


def test_symplectic_linear_part_enforced():
    with pytest.raises(NotSymplectic):
        J.JetMap.from_linear(np.diag([2.0, 2.0]), 1)


def test_k_general_examples():
    res = J.k_general_test([np.eye(2), J.omega_matrix(1)], 1, 1)
    assert res.is_general
    res2 = J.k_general_test([np.eye(2), np.eye(2)], 1, 1)
    assert not res2.is_general and res2.rank == 1
    with pytest.raises(WrongTupleLength):
        J.k_general_test([np.eye(2)], 1, 2)


def test_k_general_monte_carlo():
    rng = np.random.default_rng(11)
    for d, k in ((1, 1), (1, 2), (2, 2)):
        N = J.PolySpace(d, k).dim
        wins = sum(
            J.k_general_test([J.random_symplectic(d, rng) for _ in range(N)],
                             d, k).is_general
            for _ in range(100)
        )
        assert wins >= 99


def test_basis_persistence_hand_example():
    us = np.array([[1.0, 0.0], [0.0, 0.0]])
    vs = np.array([[0.0, 0.0], [0.0, 1.0]])
    out = J.basis_persistence_scan(us, vs, 1.0, grid=101)
    # det A(eps) = eps: exactly one root, at eps = 0
    assert out["roots"] == 1
    # zero perturbation: constant determinant, no roots
    us2 = np.eye(3)
    out2 = J.basis_persistence_scan(us2, np.zeros((3, 3)), 1.0)
    assert out2["roots"] == 0
    with pytest.raises(PreconditionBasisFails):
        J.basis_persistence_scan(np.zeros((2, 2)), np.zeros((2, 2)), 1.0)


def test_basis_persistence_random_bound():
    rng = np.random.default_rng(12)
    for _ in range(100):
        N = 4
        us = rng.standard_normal((N, N))
        vs = rng.standard_normal((N, N))
        try:
            out = J.basis_persistence_scan(us, vs, 1.0, grid=257)
        except PreconditionBasisFails:
            continue
        assert out["roots"] <= N


def test_jet_span_rank_examples():
    def rot(t):
        return np.array([[np.cos(t), np.sin(t)], [-np.sin(t), np.cos(t)]])

    f = {(2, 0): 1.0}
    out = J.jet_span_rank([rot(0.3), rot(1.0), rot(2.0)], [f, f, f], 1)
    assert out["rank"] == 3 and out["dim"] == 3
    out_id = J.jet_span_rank([np.eye(2)] * 3, [f, f, f], 1)
    assert out_id["rank"] == 1
    out_zero = J.jet_span_rank([rot(0.5)], [dict()], 1)
    assert out_zero["rank"] == 0
    with pytest.raises(DegreeMismatch):
        J.jet_span_rank([rot(0.5)], [{(3, 0): 1.0}], 1)
    with pytest.raises(WrongTupleLength):
        J.jet_span_rank([rot(0.5)], [f, f], 1)


def test_conjugation_invariance_bookkeeping():
    rng = np.random.default_rng(13)
    jet = rand_jet(1, 2, rng)
    sigma = J.random_symplectic(1, rng)

    def has_unit_eigen(j):
        eigs = np.linalg.eigvals(j.linear_part())
        return bool(np.any(np.abs(np.abs(eigs) - 1) < 1e-9))

    assert J.conjugation_preserves(has_unit_eigen, jet, sigma)


def test_jet_fixture_roundtrip(tmp_path):
    rng = np.random.default_rng(21)
    jet = rand_jet(1, 2, rng)
    tup = [J.random_symplectic(1, rng) for _ in range(3)]
    path = tmp_path / "fixtures.json"
    J.save_jet_fixture(path, {"jets": [jet], "tuples": [tup]})
    loaded = J.load_jet_fixture(path)
    assert loaded["jets"][0].coefficients_equal(jet)
    assert np.allclose(loaded["tuples"][0][1], tup[1])
