"""Scalar expression trees over ambient coordinates x1..xn.

Surfaces are defined by infix strings such as
``"0.5*(x1^2/4 + x2^2/2 + x3^2 - 1)"`` with named parameters.  Expressions
compile to a flat instruction tape (one SSA register per node) that the
kernels evaluate with forward-mode dual numbers, so gradients and Hessians
are exact to machine rounding.
"""

import ast

import numpy as np

# tape opcodes
OP_CONST = 0
OP_VAR = 1
OP_ADD = 2
OP_SUB = 3
OP_MUL = 4
OP_DIV = 5
OP_NEG = 6
OP_POWI = 7
OP_SIN = 8
OP_COS = 9
OP_EXP = 10
OP_LOG = 11
OP_SQRT = 12
OP_TANH = 13

_UNARY_FUNCS = {
    "sin": OP_SIN,
    "cos": OP_COS,
    "exp": OP_EXP,
    "log": OP_LOG,
    "sqrt": OP_SQRT,
    "tanh": OP_TANH,
}


class Expr:
    """Base expression node; supports arithmetic operator overloading."""

    def __add__(self, other):
        return BinOp(OP_ADD, self, as_expr(other))

    def __radd__(self, other):
        return BinOp(OP_ADD, as_expr(other), self)

    def __sub__(self, other):
        return BinOp(OP_SUB, self, as_expr(other))

    def __rsub__(self, other):
        return BinOp(OP_SUB, as_expr(other), self)

    def __mul__(self, other):
        return BinOp(OP_MUL, self, as_expr(other))

    def __rmul__(self, other):
        return BinOp(OP_MUL, as_expr(other), self)

    def __truediv__(self, other):
        return BinOp(OP_DIV, self, as_expr(other))

    def __rtruediv__(self, other):
        return BinOp(OP_DIV, as_expr(other), self)

    def __neg__(self):
        return UnOp(OP_NEG, self)

    def __pow__(self, k):
        if not isinstance(k, int):
            raise ValueError("only integer exponents are supported")
        return PowI(self, k)


class Num(Expr):
    def __init__(self, value):
        self.value = float(value)


class Var(Expr):
    def __init__(self, index):
        self.index = int(index)


class BinOp(Expr):
    def __init__(self, op, a, b):
        self.op = op
        self.a = a
        self.b = b


class UnOp(Expr):
    def __init__(self, op, a):
        self.op = op
        self.a = a


class PowI(Expr):
    def __init__(self, a, k):
        self.a = a
        self.k = int(k)


def as_expr(v):
    if isinstance(v, Expr):
        return v
    return Num(v)


def var(i):
    return Var(i)


def parse(text, n_vars, params=None):
    """Parse infix arithmetic over x1..x<n_vars> into an :class:`Expr`.

    ``^`` denotes exponentiation.  Named parameters are substituted as
    constants from ``params``.
    """
    params = dict(params or {})
    try:
        node = ast.parse(text.replace("^", "**"), mode="eval").body
    except SyntaxError as exc:
        raise ValueError(f"cannot parse expression {text!r}: {exc}") from exc

    def build(node):
        if isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)):
                raise ValueError(f"non-numeric constant {node.value!r}")
            return Num(node.value)
        if isinstance(node, ast.Name):
            name = node.id
            if name.startswith("x") and name[1:].isdigit():
                i = int(name[1:])
                if not 1 <= i <= n_vars:
                    raise ValueError(f"variable {name} out of range 1..{n_vars}")
                return Var(i - 1)
            if name in params:
                return Num(params[name])
            raise ValueError(f"unknown name {name!r}")
        if isinstance(node, ast.BinOp):
            if isinstance(node.op, ast.Pow):
                if not (
                    isinstance(node.right, ast.Constant)
                    and isinstance(node.right.value, int)
                ):
                    raise ValueError("exponents must be integer literals")
                return PowI(build(node.left), node.right.value)
            ops = {ast.Add: OP_ADD, ast.Sub: OP_SUB, ast.Mult: OP_MUL, ast.Div: OP_DIV}
            kind = ops.get(type(node.op))
            if kind is None:
                raise ValueError(f"unsupported operator {node.op!r}")
            return BinOp(kind, build(node.left), build(node.right))
        if isinstance(node, ast.UnaryOp):
            if isinstance(node.op, ast.USub):
                return UnOp(OP_NEG, build(node.operand))
            if isinstance(node.op, ast.UAdd):
                return build(node.operand)
            raise ValueError(f"unsupported unary operator {node.op!r}")
        if isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in _UNARY_FUNCS:
                raise ValueError(f"unsupported function call in {ast.dump(node)}")
            if len(node.args) != 1 or node.keywords:
                raise ValueError("functions take exactly one argument")
            return UnOp(_UNARY_FUNCS[node.func.id], build(node.args[0]))
        raise ValueError(f"unsupported syntax {ast.dump(node)}")

    return build(node)


class Tape:
    """Flat SSA instruction tape: arrays (ops, a1, a2, consts)."""

    def __init__(self, ops, a1, a2, consts, n_vars):
        self.ops = np.asarray(ops, dtype=np.int64)
        self.a1 = np.asarray(a1, dtype=np.int64)
        self.a2 = np.asarray(a2, dtype=np.int64)
        self.consts = np.asarray(consts, dtype=np.float64)
        self.n_vars = int(n_vars)

    def __len__(self):
        return len(self.ops)


def compile_tape(expr, n_vars):
    """Flatten an expression tree to a :class:`Tape` (postorder, one reg per op)."""
    ops, a1, a2, consts = [], [], [], []

    def emit(op, i, j, c):
        ops.append(op)
        a1.append(i)
        a2.append(j)
        consts.append(c)
        return len(ops) - 1

    def walk(node):
        if isinstance(node, Num):
            return emit(OP_CONST, -1, -1, node.value)
        if isinstance(node, Var):
            return emit(OP_VAR, node.index, -1, 0.0)
        if isinstance(node, BinOp):
            ra = walk(node.a)
            rb = walk(node.b)
            return emit(node.op, ra, rb, 0.0)
        if isinstance(node, UnOp):
            ra = walk(node.a)
            return emit(node.op, ra, -1, 0.0)
        if isinstance(node, PowI):
            ra = walk(node.a)
            return emit(OP_POWI, ra, node.k, 0.0)
        raise TypeError(f"not an Expr node: {node!r}")

    walk(expr)
    return Tape(ops, a1, a2, consts, n_vars)


def eval_pointwise(expr, x):
    """Reference interpreter used in tests as an oracle for the tape."""
    x = np.asarray(x, dtype=float)
    if isinstance(expr, Num):
        return expr.value
    if isinstance(expr, Var):
        return x[expr.index]
    if isinstance(expr, BinOp):
        a = eval_pointwise(expr.a, x)
        b = eval_pointwise(expr.b, x)
        if expr.op == OP_ADD:
            return a + b
        if expr.op == OP_SUB:
            return a - b
        if expr.op == OP_MUL:
            return a * b
        return a / b
    if isinstance(expr, UnOp):
        a = eval_pointwise(expr.a, x)
        fns = {
            OP_NEG: lambda v: -v,
            OP_SIN: np.sin,
            OP_COS: np.cos,
            OP_EXP: np.exp,
            OP_LOG: np.log,
            OP_SQRT: np.sqrt,
            OP_TANH: np.tanh,
        }
        return fns[expr.op](a)
    if isinstance(expr, PowI):
        return eval_pointwise(expr.a, x) ** expr.k
    raise TypeError(f"not an Expr node: {expr!r}")
