"""Tiny closed-form expression grammar for curvature and factor fields.

Accepted syntax: numeric literals, ``pi``, coordinate names ``x1 .. xd``,
the operators ``+ - * /`` (plus unary minus), parentheses, and calls to
``sin``, ``cos``, ``exp``. Everything else is rejected before evaluation,
so untrusted config files cannot execute arbitrary code.
"""

from __future__ import annotations

import ast
import math

import numpy as np

_FUNCTIONS = {"sin": np.sin, "cos": np.cos, "exp": np.exp}

_ALLOWED_BINOPS = (ast.Add, ast.Sub, ast.Mult, ast.Div)


class ExpressionError(ValueError):
    """Expression uses syntax outside the supported grammar."""


def _eval_node(node, names):
    if isinstance(node, ast.Expression):
        return _eval_node(node.body, names)
    if isinstance(node, ast.Constant):
        if isinstance(node.value, (int, float)):
            return float(node.value)
        raise ExpressionError(f"non-numeric constant {node.value!r}")
    if isinstance(node, ast.Name):
        if node.id == "pi":
            return math.pi
        if node.id in names:
            return names[node.id]
        raise ExpressionError(f"unknown name {node.id!r}")
    if isinstance(node, ast.UnaryOp) and isinstance(node.op, (ast.USub, ast.UAdd)):
        val = _eval_node(node.operand, names)
        return -val if isinstance(node.op, ast.USub) else val
    if isinstance(node, ast.BinOp) and isinstance(node.op, _ALLOWED_BINOPS):
        lhs = _eval_node(node.left, names)
        rhs = _eval_node(node.right, names)
        if isinstance(node.op, ast.Add):
            return lhs + rhs
        if isinstance(node.op, ast.Sub):
            return lhs - rhs
        if isinstance(node.op, ast.Mult):
            return lhs * rhs
        return lhs / rhs
    if isinstance(node, ast.Call):
        if not isinstance(node.func, ast.Name) or node.func.id not in _FUNCTIONS:
            raise ExpressionError("only sin/cos/exp calls are allowed")
        if len(node.args) != 1 or node.keywords:
            raise ExpressionError(f"{node.func.id} takes exactly one argument")
        return _FUNCTIONS[node.func.id](_eval_node(node.args[0], names))
    raise ExpressionError(f"unsupported syntax: {ast.dump(node)}")


def evaluate_expression(expr: str, coords: np.ndarray) -> np.ndarray:
    """Evaluate ``expr`` at every row of ``coords`` (shape N x d).

    Coordinate columns are exposed as ``x1 .. xd``. Returns a float array of
    length N (constants are broadcast).
    """
    try:
        tree = ast.parse(expr, mode="eval")
    except SyntaxError as exc:
        raise ExpressionError(f"cannot parse {expr!r}: {exc}") from exc
    coords = np.atleast_2d(np.asarray(coords, dtype=float))
    names = {f"x{i + 1}": coords[:, i] for i in range(coords.shape[1])}
    value = _eval_node(tree, names)
    return np.broadcast_to(np.asarray(value, dtype=float), (coords.shape[0],)).copy()
