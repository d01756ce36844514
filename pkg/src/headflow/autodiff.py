"""Minimal dense reverse-mode autodiff on float64 numpy arrays.

The graph is dynamic: every differentiable op records its parents and a
vector-Jacobian closure on the output tensor. ``backward`` walks the graph
in reverse topological order and accumulates gradients for parameter
leaves. ``detach``/``no_grad`` sever gradient flow exactly; a detached
tensor contributes zero to every upstream gradient.

Broadcasting is deliberately restricted to scalar-with-array (plus a
dedicated row-bias op) so every gradient rule stays auditable.
"""

from __future__ import annotations

import threading
from typing import Callable, Iterable

import numpy as np

from .errors import ContractError

_state = threading.local()


def _grad_enabled() -> bool:
    return getattr(_state, "grad_enabled", True)


class no_grad:
    """Context manager: ops inside build no graph (pure value computation)."""

    def __enter__(self):
        self._prev = _grad_enabled()
        _state.grad_enabled = False
        return self

    def __exit__(self, *exc):
        _state.grad_enabled = self._prev
        return False


def _as_array(value) -> np.ndarray:
    arr = np.asarray(value, dtype=np.float64)
    return arr


class Tensor:
    """A node in the computation graph.

    ``parents`` holds ``(tensor, vjp)`` pairs where ``vjp`` maps the output
    adjoint to that parent's adjoint contribution. Leaves (parameters,
    constants, detached values) have no parents.
    """

    __slots__ = ("value", "parents", "requires_grad", "detached", "name")

    def __init__(
        self,
        value,
        parents: tuple = (),
        requires_grad: bool = False,
        detached: bool = False,
        name: str = "",
    ):
        self.value = _as_array(value)
        self.parents = parents
        self.requires_grad = requires_grad
        self.detached = detached
        self.name = name

    @property
    def shape(self) -> tuple:
        return self.value.shape

    def detach(self) -> "Tensor":
        return Tensor(self.value, parents=(), requires_grad=False, detached=True)

    def __repr__(self):
        return f"Tensor(shape={self.value.shape}, requires_grad={self.requires_grad}, name={self.name!r})"

    # operator sugar; scalars are the only implicit broadcast
    def __add__(self, other):
        return add(self, other)

    def __radd__(self, other):
        return add(self, other)

    def __sub__(self, other):
        return sub(self, other)

    def __mul__(self, other):
        return mul(self, other)

    def __rmul__(self, other):
        return mul(self, other)

    def __neg__(self):
        return scale(self, -1.0)


def parameter(value, name: str = "") -> Tensor:
    """A trainable leaf."""
    return Tensor(value, requires_grad=True, name=name)


def constant(value) -> Tensor:
    return Tensor(value)


def _lift(x) -> Tensor:
    if isinstance(x, Tensor):
        return x
    return Tensor(x)


def _make(value: np.ndarray, parents: list) -> Tensor:
    """Build an op output, pruning the graph when grad is off or unneeded."""
    if not _grad_enabled():
        return Tensor(value)
    kept = tuple((p, vjp) for p, vjp in parents if p.requires_grad)
    if not kept:
        return Tensor(value)
    return Tensor(value, parents=kept, requires_grad=True)


def detach(x: Tensor) -> Tensor:
    """Same value, gradient flow severed. Idempotent."""
    return _lift(x).detach()


# ---------------------------------------------------------------------------
# ops


def add(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape and av.ndim != 0 and bv.ndim != 0:
        raise ContractError(f"add: shape mismatch {av.shape} vs {bv.shape}")
    out = av + bv

    def vjp_a(g):
        return g if av.shape == out.shape else np.sum(g)

    def vjp_b(g):
        return g if bv.shape == out.shape else np.sum(g)

    return _make(out, [(a, vjp_a), (b, vjp_b)])


def sub(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape and av.ndim != 0 and bv.ndim != 0:
        raise ContractError(f"sub: shape mismatch {av.shape} vs {bv.shape}")
    out = av - bv

    def vjp_a(g):
        return g if av.shape == out.shape else np.sum(g)

    def vjp_b(g):
        return -g if bv.shape == out.shape else -np.sum(g)

    return _make(out, [(a, vjp_a), (b, vjp_b)])


def mul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if av.shape != bv.shape and av.ndim != 0 and bv.ndim != 0:
        raise ContractError(f"mul: shape mismatch {av.shape} vs {bv.shape}")
    out = av * bv

    def vjp_a(g):
        ga = g * bv
        return ga if av.shape == out.shape else np.sum(ga)

    def vjp_b(g):
        gb = g * av
        return gb if bv.shape == out.shape else np.sum(gb)

    return _make(out, [(a, vjp_a), (b, vjp_b)])


def scale(a, s: float) -> Tensor:
    a = _lift(a)
    s = float(s)
    return _make(a.value * s, [(a, lambda g: g * s)])


def matmul(a, b) -> Tensor:
    a, b = _lift(a), _lift(b)
    av, bv = a.value, b.value
    if av.ndim != 2 or bv.ndim != 2 or av.shape[1] != bv.shape[0]:
        raise ContractError(f"matmul: incompatible shapes {av.shape} @ {bv.shape}")
    out = av @ bv
    return _make(out, [(a, lambda g: g @ bv.T), (b, lambda g: av.T @ g)])


def add_bias(x, b) -> Tensor:
    """Row-wise bias: (n, m) + (m,). Explicit op instead of broadcasting."""
    x, b = _lift(x), _lift(b)
    xv, bv = x.value, b.value
    if xv.ndim != 2 or bv.ndim != 1 or xv.shape[1] != bv.shape[0]:
        raise ContractError(f"add_bias: incompatible shapes {xv.shape} + {bv.shape}")
    out = xv + bv[None, :]
    return _make(out, [(x, lambda g: g), (b, lambda g: np.sum(g, axis=0))])


def tanh(x) -> Tensor:
    x = _lift(x)
    out = np.tanh(x.value)
    return _make(out, [(x, lambda g: g * (1.0 - out * out))])


def reshape(x, shape) -> Tensor:
    x = _lift(x)
    orig = x.value.shape
    out = x.value.reshape(shape)
    return _make(out, [(x, lambda g: g.reshape(orig))])


def tsum(x) -> Tensor:
    """Sum of all elements -> scalar tensor."""
    x = _lift(x)
    shape = x.value.shape
    out = np.asarray(np.sum(x.value))
    return _make(out, [(x, lambda g: np.full(shape, float(g)))])


def tmean(x) -> Tensor:
    x = _lift(x)
    n = x.value.size
    shape = x.value.shape
    out = np.asarray(np.mean(x.value))
    return _make(out, [(x, lambda g: np.full(shape, float(g) / n))])


def sum_squares(x) -> Tensor:
    """Sum of squared elements -> scalar."""
    x = _lift(x)
    xv = x.value
    out = np.asarray(np.sum(xv * xv))
    return _make(out, [(x, lambda g: 2.0 * float(g) * xv)])


def mse(pred, target) -> Tensor:
    """Mean squared error over all elements."""
    pred, target = _lift(pred), _lift(target)
    if pred.value.shape != target.value.shape:
        raise ContractError(
            f"mse: shape mismatch {pred.value.shape} vs {target.value.shape}"
        )
    diff = sub(pred, target)
    return tmean(mul(diff, diff))


# ---------------------------------------------------------------------------
# backward


def backward(root: Tensor, params: dict[str, Tensor]) -> dict[str, np.ndarray]:
    """Gradient of scalar ``root`` w.r.t. each named parameter.

    Parameters unreachable through non-detached edges map to exact zeros.
    """
    if not isinstance(root, Tensor):
        raise ContractError("backward: root must be a Tensor")
    if root.value.size != 1:
        raise ContractError(f"backward: root must be scalar, got shape {root.value.shape}")

    order = _toposort(root)
    adjoint: dict[int, np.ndarray] = {id(root): np.ones_like(root.value)}
    for node in order:
        g = adjoint.get(id(node))
        if g is None:
            continue
        for parent, vjp in node.parents:
            contrib = vjp(g)
            key = id(parent)
            if key in adjoint:
                adjoint[key] = adjoint[key] + contrib
            else:
                adjoint[key] = np.array(contrib, dtype=np.float64, copy=True)
    grads = {}
    for name, p in params.items():
        grads[name] = adjoint.get(id(p), np.zeros_like(p.value)).reshape(p.value.shape)
    return grads


def _toposort(root: Tensor) -> list[Tensor]:
    """Reverse topological order (root first), iterative DFS."""
    order: list[Tensor] = []
    seen: set[int] = set()
    stack: list[tuple[Tensor, bool]] = [(root, False)]
    while stack:
        node, expanded = stack.pop()
        if expanded:
            order.append(node)
            continue
        if id(node) in seen:
            continue
        seen.add(id(node))
        stack.append((node, True))
        for parent, _ in node.parents:
            if id(parent) not in seen:
                stack.append((parent, False))
    order.reverse()
    return order


def graph_size(root: Tensor) -> int:
    """Number of tensors reachable from ``root`` through recorded edges."""
    return len(_toposort(root))


def graph_leaves(root: Tensor) -> list[Tensor]:
    """All leaf tensors (no parents) reachable from ``root``."""
    return [t for t in _toposort(root) if not t.parents]


# ---------------------------------------------------------------------------
# finite differences (shared oracle; kept independent of backward)


def finite_difference(
    f: Callable[[], Tensor],
    params: dict[str, Tensor],
    h: float = 1e-6,
) -> dict[str, np.ndarray]:
    """Central-difference gradient of ``f()`` w.r.t. every entry of ``params``.

    ``f`` must re-read the parameter values on every call; this routine
    mutates them in place (restoring afterwards).
    """
    grads = {}
    for name, p in params.items():
        flat = p.value.reshape(-1)
        g = np.zeros_like(flat)
        for i in range(flat.size):
            orig = flat[i]
            flat[i] = orig + h
            f_plus = float(f().value)
            flat[i] = orig - h
            f_minus = float(f().value)
            flat[i] = orig
            g[i] = (f_plus - f_minus) / (2.0 * h)
        grads[name] = g.reshape(p.value.shape)
    return grads
