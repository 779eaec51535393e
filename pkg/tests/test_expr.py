import numpy as np
import pytest

from geolab import expr as ex
from geolab.kernels import pack_tape, tape_v, tape_vg, tape_vgh, tape_vgh_regs, tape_dir_from_regs


CASES = [
    ("0.5*(x1^2/4 + x2^2/2 + x3^2 - 1)", 3, {}),
    ("a*x1^3 - x2/x3 + sin(x1*x2)", 3, {"a": 0.7}),
    ("exp(-x1^2) + log(2 + x2) + sqrt(1 + x3^2)", 3, {}),
    ("tanh(x1) * cos(x2) - x3^4/7", 3, {}),
]


def fd_grad(f, x, h=1e-6):
    g = np.zeros_like(x)
    for k in range(len(x)):
        xp = x.copy(); xp[k] += h
        xm = x.copy(); xm[k] -= h
        g[k] = (f(xp) - f(xm)) / (2 * h)
    return g


def fd_hess(f, x, h=1e-4):
    n = len(x)
    H = np.zeros((n, n))
    for k in range(n):
        for l in range(n):
            xpp = x.copy(); xpp[k] += h; xpp[l] += h
            xpm = x.copy(); xpm[k] += h; xpm[l] -= h
            xmp = x.copy(); xmp[k] -= h; xmp[l] += h
            xmm = x.copy(); xmm[k] -= h; xmm[l] -= h
            H[k, l] = (f(xpp) - f(xpm) - f(xmp) + f(xmm)) / (4 * h * h)
    return H


@pytest.mark.parametrize("text,n,params", CASES)
def test_tape_matches_reference_interpreter(text, n, params):
    tree = ex.parse(text, n, params)
    tape = ex.compile_tape(tree, n)
    rng = np.random.default_rng(0)
    for _ in range(5):
        x = 0.3 + 0.5 * rng.random(n)
        v = tape_v(tape.ops, tape.a1, tape.a2, tape.consts, x)
        assert v == pytest.approx(ex.eval_pointwise(tree, x), rel=1e-14, abs=1e-14)


@pytest.mark.parametrize("text,n,params", CASES)
def test_dual_derivatives_against_finite_differences(text, n, params):
    tree = ex.parse(text, n, params)
    tape = ex.compile_tape(tree, n)

    def f(x):
        return tape_v(tape.ops, tape.a1, tape.a2, tape.consts, x)

    rng = np.random.default_rng(1)
    for _ in range(3):
        x = 0.3 + 0.5 * rng.random(n)
        g = np.empty(n)
        H = np.empty((n, n))
        tape_vgh(tape.ops, tape.a1, tape.a2, tape.consts, x, g, H)
        assert np.allclose(g, fd_grad(f, x), rtol=1e-6, atol=1e-8)
        assert np.allclose(H, fd_hess(f, x), rtol=1e-4, atol=1e-5)
        g2 = np.empty(n)
        tape_vg(tape.ops, tape.a1, tape.a2, tape.consts, x, g2)
        assert np.allclose(g, g2, rtol=0, atol=0)


def test_directional_sweep_gives_third_derivative(sphere_spec=None):
    # directional derivative of the Hessian equals the finite difference of
    # Hessians along the direction
    text = "x1^3*x2 + sin(x1*x3) + x2^2/x3"
    tree = ex.parse(text, 3)
    tape = ex.compile_tape(tree, 3)
    x = np.array([0.7, 0.4, 1.3])
    dx = np.array([0.3, -0.2, 0.5])
    m = len(tape.ops)
    vals = np.empty(m)
    grads = np.empty((m, 3))
    hess = np.empty((m, 3, 3))
    tape_vgh_regs(tape.ops, tape.a1, tape.a2, tape.consts, x, vals, grads, hess)
    tg = np.empty(3)
    tH = np.empty((3, 3))
    tape_dir_from_regs(tape.ops, tape.a1, tape.a2, tape.consts, x, dx,
                       vals, grads, hess, tg, tH)
    # tg must equal H dx exactly
    assert np.allclose(tg, hess[m - 1] @ dx, rtol=1e-12, atol=1e-12)
    h = 1e-5
    Hp = np.empty((3, 3)); Hm = np.empty((3, 3))
    g = np.empty(3)
    tape_vgh(tape.ops, tape.a1, tape.a2, tape.consts, x + h * dx, g, Hp)
    tape_vgh(tape.ops, tape.a1, tape.a2, tape.consts, x - h * dx, g, Hm)
    assert np.allclose(tH, (Hp - Hm) / (2 * h), rtol=1e-5, atol=1e-6)


def test_parse_errors():
    with pytest.raises(ValueError):
        ex.parse("x1 +* x2", 3)
    with pytest.raises(ValueError):
        ex.parse("x9", 3)
    with pytest.raises(ValueError):
        ex.parse("q * x1", 3)
    with pytest.raises(ValueError):
        ex.parse("x1^x2", 3)


def test_expression_arithmetic_builds_trees():
    a = ex.parse("x1^2", 3)
    b = ex.parse("x2", 3)
    tree = a + 0.5 * b - 2.0
    tape = ex.compile_tape(tree, 3)
    x = np.array([2.0, 4.0, 0.0])
    assert tape_v(tape.ops, tape.a1, tape.a2, tape.consts, x) == pytest.approx(4.0)
