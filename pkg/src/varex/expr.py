"""Small arithmetic expression language for field and kernel definitions.

Formulas are parsed with :mod:`ast` and evaluated on numpy arrays. Only the
whitelisted names below are accepted; ``^`` is exponentiation.

Precedence, loosest to tightest::

    + -          (binary)
    * /
    - +          (unary)
    ^            (right associative, binds tighter than unary minus)
    f(...)       function call
"""

import ast
import math

import numpy as np

__all__ = ["ExprError", "Expression", "compile_expr", "FUNCTIONS", "CONSTANTS"]


class ExprError(ValueError):
    pass


FUNCTIONS = {
    "sin": np.sin,
    "cos": np.cos,
    "tan": np.tan,
    "exp": np.exp,
    "log": np.log,
    "sqrt": np.sqrt,
    "abs": np.abs,
    "min": np.minimum,
    "max": np.maximum,
}

CONSTANTS = {"pi": math.pi, "e": math.e}

_BINOPS = {
    ast.Add: np.add,
    ast.Sub: np.subtract,
    ast.Mult: np.multiply,
    ast.Div: np.divide,
    ast.Pow: np.power,
}


class Expression:
    """A compiled formula over a fixed set of variable names."""

    def __init__(self, source: str, variables):
        self.source = source
        self.variables = frozenset(variables)
        text = str(source).replace("^", "**")
        try:
            tree = ast.parse(text, mode="eval")
        except SyntaxError as exc:
            raise ExprError(f"cannot parse formula {source!r}: {exc.msg}") from None
        self._check(tree.body)
        self._tree = tree.body

    def _check(self, node):
        if isinstance(node, ast.BinOp):
            if type(node.op) not in _BINOPS:
                raise ExprError(f"operator not allowed in {self.source!r}")
            self._check(node.left)
            self._check(node.right)
        elif isinstance(node, ast.UnaryOp):
            if not isinstance(node.op, (ast.USub, ast.UAdd)):
                raise ExprError(f"operator not allowed in {self.source!r}")
            self._check(node.operand)
        elif isinstance(node, ast.Call):
            if not isinstance(node.func, ast.Name) or node.func.id not in FUNCTIONS:
                name = getattr(node.func, "id", "?")
                raise ExprError(f"unknown function {name!r} in {self.source!r}")
            if node.keywords or not node.args:
                raise ExprError(f"bad call to {node.func.id!r} in {self.source!r}")
            if node.func.id in ("min", "max") and len(node.args) != 2:
                raise ExprError(f"{node.func.id} takes two arguments in {self.source!r}")
            if node.func.id not in ("min", "max") and len(node.args) != 1:
                raise ExprError(f"{node.func.id} takes one argument in {self.source!r}")
            for arg in node.args:
                self._check(arg)
        elif isinstance(node, ast.Name):
            if node.id not in self.variables and node.id not in CONSTANTS:
                raise ExprError(f"unknown symbol {node.id!r} in {self.source!r}")
        elif isinstance(node, ast.Constant):
            if not isinstance(node.value, (int, float)) or isinstance(node.value, bool):
                raise ExprError(f"bad literal in {self.source!r}")
        else:
            raise ExprError(f"unsupported syntax in {self.source!r}")

    def __call__(self, **env):
        missing = {name for name in self._names() if name not in env and name not in CONSTANTS}
        if missing:
            raise ExprError(f"no value bound for {sorted(missing)} in {self.source!r}")
        with np.errstate(all="ignore"):
            return self._eval(self._tree, env)

    def _names(self):
        return {n.id for n in ast.walk(self._tree) if isinstance(n, ast.Name)} - set(FUNCTIONS)

    def _eval(self, node, env):
        if isinstance(node, ast.BinOp):
            left = self._eval(node.left, env)
            right = self._eval(node.right, env)
            if isinstance(node.op, ast.Pow):
                left = np.asarray(left, dtype=float)
            return _BINOPS[type(node.op)](left, right)
        if isinstance(node, ast.UnaryOp):
            val = self._eval(node.operand, env)
            return -val if isinstance(node.op, ast.USub) else val
        if isinstance(node, ast.Call):
            args = [self._eval(a, env) for a in node.args]
            return FUNCTIONS[node.func.id](*args)
        if isinstance(node, ast.Name):
            if node.id in env:
                return env[node.id]
            return CONSTANTS[node.id]
        return float(node.value)


def compile_expr(source, variables=("x", "y", "t")) -> Expression:
    return Expression(source, variables)
