"""Dense 2-D tensors with reverse-mode differentiation.

Every value is a 2-D float64 array; scalars are 1x1.  Operations record their
inputs and a backward closure, and :meth:`Tensor.backward` walks the recorded
graph in reverse topological order.  Broadcasting is limited to what numpy does
for two 2-D operands (row/column vectors against matrices).
"""
from __future__ import annotations

from dataclasses import dataclass, field
from typing import Callable, Sequence

import numpy as np

DTYPE = np.float64
# additive guard for trace ratios; named so callers can account for it
DENOM_FLOOR = 1e-12

DEBUG = False


class DimensionError(ValueError):
    pass


class NonFiniteError(FloatingPointError):
    pass


def _as_2d(x) -> np.ndarray:
    a = np.asarray(x, dtype=DTYPE)
    if a.ndim == 0:
        return a.reshape(1, 1)
    if a.ndim == 1:
        return a.reshape(1, -1)
    if a.ndim != 2:
        raise DimensionError(f"only 2-D tensors are supported, got shape {a.shape}")
    return a


def _unbroadcast(grad: np.ndarray, shape: tuple) -> np.ndarray:
    if grad.shape == shape:
        return grad
    if shape[0] == 1 and grad.shape[0] != 1:
        grad = grad.sum(axis=0, keepdims=True)
    if shape[1] == 1 and grad.shape[1] != 1:
        grad = grad.sum(axis=1, keepdims=True)
    return grad


def _check_broadcast(a: "Tensor", b: "Tensor", op: str) -> None:
    for da, db in zip(a.shape, b.shape):
        if da != db and da != 1 and db != 1:
            raise DimensionError(f"{op}: incompatible shapes {a.shape} and {b.shape}")


class Tensor:
    __slots__ = ("data", "grad", "requires_grad", "_prev", "_backward", "op")

    def __init__(self, data, requires_grad: bool = False, _prev: tuple = (), op: str = ""):
        self.data = _as_2d(data)
        self.grad: np.ndarray | None = None
        self.requires_grad = requires_grad
        self._prev = _prev
        self._backward: Callable[[], None] | None = None
        self.op = op
        if DEBUG and not np.all(np.isfinite(self.data)):
            raise NonFiniteError(f"non-finite value produced by {op or 'leaf'}")

    # -- construction helpers -------------------------------------------------
    @staticmethod
    def _lift(x) -> "Tensor":
        return x if isinstance(x, Tensor) else Tensor(x)

    @classmethod
    def _result(cls, data, parents: Sequence["Tensor"], op: str) -> "Tensor":
        rg = any(p.requires_grad for p in parents)
        return cls(data, requires_grad=rg, _prev=tuple(parents) if rg else (), op=op)

    def _acc(self, g: np.ndarray) -> None:
        if not self.requires_grad:
            return
        if self.grad is None:
            self.grad = np.array(g, dtype=DTYPE, copy=True)
        else:
            self.grad += g

    # -- basic properties ------------------------------------------------------
    @property
    def shape(self) -> tuple:
        return self.data.shape

    @property
    def T(self) -> "Tensor":
        return transpose(self)

    def item(self) -> float:
        if self.data.size != 1:
            raise DimensionError(f"item() needs a 1x1 tensor, got {self.shape}")
        return float(self.data[0, 0])

    def numpy(self) -> np.ndarray:
        return self.data

    def __repr__(self) -> str:
        return f"Tensor(shape={self.shape}, op={self.op!r})"

    # -- operators -------------------------------------------------------------
    def __add__(self, other):
        return add(self, other)

    __radd__ = __add__

    def __sub__(self, other):
        return add(self, neg(Tensor._lift(other)))

    def __rsub__(self, other):
        return add(Tensor._lift(other), neg(self))

    def __mul__(self, other):
        return mul(self, other)

    __rmul__ = __mul__

    def __truediv__(self, other):
        return div(self, other)

    def __neg__(self):
        return neg(self)

    def __matmul__(self, other):
        return matmul(self, other)

    # -- reverse pass ----------------------------------------------------------
    def backward(self) -> None:
        if self.data.size != 1:
            raise DimensionError(f"backward() needs a scalar output, got {self.shape}")
        order: list[Tensor] = []
        seen: set[int] = set()
        stack: list[tuple[Tensor, bool]] = [(self, False)]
        while stack:
            node, expanded = stack.pop()
            if expanded:
                order.append(node)
                continue
            if id(node) in seen:
                continue
            seen.add(id(node))
            stack.append((node, True))
            for p in node._prev:
                if id(p) not in seen:
                    stack.append((p, False))
        self.grad = np.ones_like(self.data)
        for node in reversed(order):
            if node._backward is not None and node.grad is not None:
                node._backward()


def tensor(x, requires_grad: bool = False) -> Tensor:
    return Tensor(x, requires_grad=requires_grad)


def zeros(rows: int, cols: int, requires_grad: bool = False) -> Tensor:
    return Tensor(np.zeros((rows, cols)), requires_grad=requires_grad)


def eye(n: int) -> Tensor:
    return Tensor(np.eye(n))


# ---------------------------------------------------------------------------
# element-wise and linear algebra


def add(a, b) -> Tensor:
    a, b = Tensor._lift(a), Tensor._lift(b)
    _check_broadcast(a, b, "add")
    out = Tensor._result(a.data + b.data, (a, b), "add")
    if out.requires_grad:
        def _backward():
            a._acc(_unbroadcast(out.grad, a.shape))
            b._acc(_unbroadcast(out.grad, b.shape))
        out._backward = _backward
    return out


def neg(a: Tensor) -> Tensor:
    out = Tensor._result(-a.data, (a,), "neg")
    if out.requires_grad:
        def _backward():
            a._acc(-out.grad)
        out._backward = _backward
    return out


def mul(a, b) -> Tensor:
    """Hadamard product (with 2-D broadcasting)."""
    a, b = Tensor._lift(a), Tensor._lift(b)
    _check_broadcast(a, b, "mul")
    out = Tensor._result(a.data * b.data, (a, b), "mul")
    if out.requires_grad:
        def _backward():
            a._acc(_unbroadcast(out.grad * b.data, a.shape))
            b._acc(_unbroadcast(out.grad * a.data, b.shape))
        out._backward = _backward
    return out


hadamard = mul


def div(a, b) -> Tensor:
    a, b = Tensor._lift(a), Tensor._lift(b)
    _check_broadcast(a, b, "div")
    out = Tensor._result(a.data / b.data, (a, b), "div")
    if out.requires_grad:
        def _backward():
            a._acc(_unbroadcast(out.grad / b.data, a.shape))
            b._acc(_unbroadcast(-out.grad * a.data / (b.data * b.data), b.shape))
        out._backward = _backward
    return out


def scale(a: Tensor, c: float) -> Tensor:
    out = Tensor._result(a.data * c, (a,), "scale")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad * c)
        out._backward = _backward
    return out


def power(a: Tensor, p: float) -> Tensor:
    out = Tensor._result(a.data ** p, (a,), "power")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad * p * a.data ** (p - 1))
        out._backward = _backward
    return out


def matmul(a: Tensor, b: Tensor) -> Tensor:
    a, b = Tensor._lift(a), Tensor._lift(b)
    if a.shape[1] != b.shape[0]:
        raise DimensionError(f"matmul: incompatible shapes {a.shape} and {b.shape}")
    out = Tensor._result(a.data @ b.data, (a, b), "matmul")
    if out.requires_grad:
        def _backward():
            if a.requires_grad:
                a._acc(out.grad @ b.data.T)
            if b.requires_grad:
                b._acc(a.data.T @ out.grad)
        out._backward = _backward
    return out


def transpose(a: Tensor) -> Tensor:
    out = Tensor._result(a.data.T, (a,), "transpose")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad.T)
        out._backward = _backward
    return out


def sum(a: Tensor, axis: int | None = None) -> Tensor:  # noqa: A001
    if axis is None:
        val = a.data.sum().reshape(1, 1)
    else:
        val = a.data.sum(axis=axis, keepdims=True)
    out = Tensor._result(val, (a,), "sum")
    if out.requires_grad:
        def _backward():
            a._acc(np.broadcast_to(out.grad, a.shape))
        out._backward = _backward
    return out


def rows(a: Tensor, index) -> Tensor:
    """Gather rows ``a[index]`` (used for embedding lookup)."""
    idx = np.asarray(index, dtype=np.int64)
    out = Tensor._result(a.data[idx], (a,), "rows")
    if out.requires_grad:
        def _backward():
            g = np.zeros_like(a.data)
            np.add.at(g, idx, out.grad)
            a._acc(g)
        out._backward = _backward
    return out


def hstack(parts: Sequence[Tensor]) -> Tensor:
    parts = [Tensor._lift(p) for p in parts]
    if len({p.shape[0] for p in parts}) != 1:
        raise DimensionError(f"hstack: row counts differ {[p.shape for p in parts]}")
    out = Tensor._result(np.hstack([p.data for p in parts]), parts, "hstack")
    if out.requires_grad:
        def _backward():
            start = 0
            for p in parts:
                w = p.shape[1]
                p._acc(out.grad[:, start:start + w])
                start += w
        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# non-linearities


def relu(a: Tensor) -> Tensor:
    mask = a.data > 0
    out = Tensor._result(np.where(mask, a.data, 0.0), (a,), "relu")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad * mask)
        out._backward = _backward
    return out


def sigmoid(a: Tensor) -> Tensor:
    x = a.data
    # split by sign so exp never overflows
    e = np.exp(-np.abs(x))
    s = np.where(x >= 0, 1.0 / (1.0 + e), e / (1.0 + e))
    out = Tensor._result(s, (a,), "sigmoid")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad * s * (1.0 - s))
        out._backward = _backward
    return out


def exp(a: Tensor) -> Tensor:
    v = np.exp(a.data)
    out = Tensor._result(v, (a,), "exp")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad * v)
        out._backward = _backward
    return out


def log(a: Tensor) -> Tensor:
    out = Tensor._result(np.log(a.data), (a,), "log")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad / a.data)
        out._backward = _backward
    return out


def sqrt(a: Tensor) -> Tensor:
    v = np.sqrt(a.data)
    out = Tensor._result(v, (a,), "sqrt")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad * 0.5 / v)
        out._backward = _backward
    return out


def softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    e = np.exp(z)
    s = e / e.sum(axis=1, keepdims=True)
    out = Tensor._result(s, (a,), "softmax_rows")
    if out.requires_grad:
        def _backward():
            g = out.grad
            a._acc(s * (g - (g * s).sum(axis=1, keepdims=True)))
        out._backward = _backward
    return out


def log_softmax_rows(a: Tensor) -> Tensor:
    z = a.data - a.data.max(axis=1, keepdims=True)
    lse = np.log(np.exp(z).sum(axis=1, keepdims=True))
    v = z - lse
    out = Tensor._result(v, (a,), "log_softmax_rows")
    if out.requires_grad:
        def _backward():
            g = out.grad
            a._acc(g - np.exp(v) * g.sum(axis=1, keepdims=True))
        out._backward = _backward
    return out


def cross_entropy(logits: Tensor, label: int) -> Tensor:
    """Negative log-likelihood of ``label`` under softmax of a 1 x C logit row."""
    if logits.shape[0] != 1:
        raise DimensionError(f"cross_entropy expects a single logit row, got {logits.shape}")
    n_classes = logits.shape[1]
    if not 0 <= label < n_classes:
        raise IndexError(f"label {label} out of range for {n_classes} classes")
    z = logits.data - logits.data.max()
    lse = np.log(np.exp(z).sum())
    loss = lse - z[0, label]
    out = Tensor._result(np.array([[loss]]), (logits,), "cross_entropy")
    if out.requires_grad:
        def _backward():
            g = np.exp(z - lse)
            g[0, label] -= 1.0
            logits._acc(out.grad[0, 0] * g)
        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# matrix reductions


def trace(a: Tensor) -> Tensor:
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"trace needs a square tensor, got {a.shape}")
    out = Tensor._result(np.array([[np.trace(a.data)]]), (a,), "trace")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad[0, 0] * np.eye(a.shape[0]))
        out._backward = _backward
    return out


def diag(a: Tensor) -> Tensor:
    """Main diagonal of a square tensor as a 1 x n row."""
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"diag needs a square tensor, got {a.shape}")
    out = Tensor._result(np.diag(a.data).reshape(1, -1), (a,), "diag")
    if out.requires_grad:
        def _backward():
            a._acc(np.diag(out.grad.ravel()))
        out._backward = _backward
    return out


def offdiag(a: Tensor) -> Tensor:
    """``a - diag(a)``: zero the main diagonal."""
    if a.shape[0] != a.shape[1]:
        raise DimensionError(f"offdiag needs a square tensor, got {a.shape}")
    mask = 1.0 - np.eye(a.shape[0])
    out = Tensor._result(a.data * mask, (a,), "offdiag")
    if out.requires_grad:
        def _backward():
            a._acc(out.grad * mask)
        out._backward = _backward
    return out


def frobenius(a: Tensor) -> Tensor:
    """Frobenius norm; the subgradient at the zero matrix is taken as 0."""
    nrm = float(np.sqrt((a.data * a.data).sum()))
    out = Tensor._result(np.array([[nrm]]), (a,), "frobenius")
    if out.requires_grad:
        def _backward():
            if nrm > 0.0:
                a._acc(out.grad[0, 0] * a.data / nrm)
        out._backward = _backward
    return out


def gram(p: Tensor) -> Tensor:
    """``p.T @ p`` as a single recorded op."""
    v = p.data.T @ p.data
    out = Tensor._result(v, (p,), "gram")
    if out.requires_grad:
        def _backward():
            g = out.grad
            p._acc(p.data @ (g + g.T))
        out._backward = _backward
    return out


def quad_trace(p: Tensor, m: np.ndarray) -> Tensor:
    """``tr(p.T @ m @ p)`` for a constant matrix ``m`` as a single recorded op."""
    m = np.asarray(m, dtype=DTYPE)
    if m.shape != (p.shape[0], p.shape[0]):
        raise DimensionError(f"quad_trace: matrix {m.shape} does not match {p.shape}")
    mp = m @ p.data
    out = Tensor._result(np.array([[np.sum(p.data * mp)]]), (p,), "quad_trace")
    if out.requires_grad:
        def _backward():
            p._acc(out.grad[0, 0] * (mp + m.T @ p.data))
        out._backward = _backward
    return out


# ---------------------------------------------------------------------------
# finite-difference verification


@dataclass
class GradCheckReport:
    max_rel_error: float
    max_abs_error: float
    tol: float
    n_checked: int
    passed: bool
    diagnostics: list[str] = field(default_factory=list)


def numeric_grad(f: Callable[[np.ndarray], float], x: np.ndarray, h: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function of one array."""
    x = np.array(x, dtype=DTYPE, copy=True)
    g = np.zeros_like(x)
    it = np.nditer(x, flags=["multi_index"])
    for _ in it:
        i = it.multi_index
        old = x[i]
        x[i] = old + h
        fp = f(x)
        x[i] = old - h
        fm = f(x)
        x[i] = old
        if not (np.isfinite(fp) and np.isfinite(fm)):
            raise NonFiniteError(f"non-finite value at perturbed index {i}")
        g[i] = (fp - fm) / (2 * h)
    return g


def grad_check(
    f: Callable[..., Tensor],
    *points: np.ndarray,
    h: float = 1e-5,
    tol: float = 1e-4,
    atol: float = 1e-6,
) -> GradCheckReport:
    """Compare reverse-mode gradients of ``f`` against central differences.

    ``f`` receives one Tensor per entry of ``points`` and returns a 1x1 Tensor.
    The relative error per entry is ``|a - n| / max(|a|, |n|, atol)``; the
    ``atol`` floor keeps entries whose true gradient is ~0 from dominating.
    """
    diagnostics: list[str] = []
    arrays = [np.array(p, dtype=DTYPE, copy=True) for p in points]
    leaves = [Tensor(a, requires_grad=True) for a in arrays]
    out = f(*leaves)
    if not np.isfinite(out.item()):
        return GradCheckReport(np.inf, np.inf, tol, 0, False, ["non-finite value at the base point"])
    out.backward()
    max_rel = 0.0
    max_abs = 0.0
    count = 0
    for k, leaf in enumerate(leaves):
        analytic = leaf.grad if leaf.grad is not None else np.zeros_like(arrays[k])

        def fk(x, k=k):
            args = [Tensor(x if j == k else arrays[j]) for j in range(len(arrays))]
            return f(*args).item()

        try:
            numeric = numeric_grad(fk, arrays[k], h)
        except NonFiniteError as exc:
            diagnostics.append(f"input {k}: {exc}")
            return GradCheckReport(np.inf, np.inf, tol, count, False, diagnostics)
        diff = np.abs(analytic - numeric)
        denom = np.maximum(np.maximum(np.abs(analytic), np.abs(numeric)), atol)
        rel = diff / denom
        count += rel.size
        if rel.size:
            max_rel = max(max_rel, float(rel.max()))
            max_abs = max(max_abs, float(diff.max()))
            if rel.max() >= tol:
                worst = np.unravel_index(int(rel.argmax()), rel.shape)
                diagnostics.append(
                    f"input {k} index {worst}: analytic {analytic[worst]:.6g} numeric {numeric[worst]:.6g}"
                )
    return GradCheckReport(max_rel, max_abs, tol, count, max_rel < tol, diagnostics)
