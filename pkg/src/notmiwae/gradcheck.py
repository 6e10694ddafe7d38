"""Finite-difference gradient checks and random composite graphs for testing the tape."""

from __future__ import annotations

from typing import Callable, Sequence

import numpy as np

from . import tensor as T
from .distributions import GaussianParams, bernoulli_log_prob, BernoulliLogits, gaussian_log_prob
from .tensor import Tensor


def numerical_grad(f: Callable[[], float], x: np.ndarray, step: float = 1e-5) -> np.ndarray:
    """Central differences of a scalar function w.r.t. the array ``x`` (mutated in place, restored)."""
    g = np.zeros_like(x)
    flat, gflat = x.reshape(-1), g.reshape(-1)
    for i in range(flat.size):
        orig = flat[i]
        flat[i] = orig + step
        up = f()
        flat[i] = orig - step
        down = f()
        flat[i] = orig
        gflat[i] = (up - down) / (2.0 * step)
    return g


def relative_error(a: np.ndarray, b: np.ndarray) -> float:
    """||a - b|| / max(||a||, ||b||), 0 when both vanish."""
    denom = max(np.linalg.norm(a), np.linalg.norm(b))
    return 0.0 if denom == 0 else float(np.linalg.norm(a - b) / denom)


def check_gradients(
    build: Callable[[Sequence[Tensor]], Tensor], leaves: Sequence[Tensor], step: float = 1e-5
) -> list[float]:
    """Relative error between tape gradients and central differences for every leaf."""
    T.get_tape().reset()
    for leaf in leaves:
        leaf.grad = None
    T.backward(build(leaves))
    analytic = [np.zeros_like(l.data) if l.grad is None else l.grad.copy() for l in leaves]

    def value() -> float:
        with T.no_grad():
            return build(leaves).item()

    return [relative_error(a, numerical_grad(value, l.data, step)) for a, l in zip(analytic, leaves)]


# ops used by random graphs; inputs are kept inside each op's smooth domain
def _safe_log(a):
    return T.log(T.softplus(a) + 0.5)


def _safe_div(a, b):
    return T.div(a, T.square(b) + 1.0)


UNARY_OPS: dict[str, Callable[[Tensor], Tensor]] = {
    "exp": lambda a: T.exp(T.tanh(a)),
    "log": _safe_log,
    "tanh": T.tanh,
    "relu": T.relu,
    "sigmoid": T.sigmoid,
    "softplus": T.softplus,
    "square": T.square,
    "neg": T.neg,
}
BINARY_OPS: dict[str, Callable[[Tensor, Tensor], Tensor]] = {
    "add": T.add,
    "sub": T.sub,
    "mul": T.mul,
    "div": _safe_div,
    "mix": lambda a, b: T.where_mask((a.data > 0).astype(float), a, b),
}
ALL_OPS = tuple(UNARY_OPS) + tuple(BINARY_OPS) + (
    "matmul",
    "sum",
    "mean",
    "logsumexp",
    "row_broadcast",
    "reshape",
    "expand_dims",
    "gaussian_log_prob",
    "bernoulli_log_prob",
)


def random_graph(rng: np.random.Generator, n_ops: int = 6, rows: int = 3, cols: int = 4, force: str | None = None):
    """A random composite graph over a few (rows x cols) leaves with entries in [-2, 2].

    Returns ``(leaves, build, used_ops)``; ``build(leaves)`` gives a scalar Tensor.
    ``force`` guarantees one op is included.
    """
    leaves = [Tensor(rng.uniform(-2, 2, size=(rows, cols)), requires_grad=True) for _ in range(3)]
    leaves.append(Tensor(rng.uniform(-2, 2, size=(cols, cols)), requires_grad=True))
    leaves.append(Tensor(rng.uniform(-2, 2, size=(cols,)), requires_grad=True))
    names = list(ALL_OPS)
    plan = [names[i] for i in rng.integers(0, len(names), size=n_ops)]
    if force is not None:
        plan[int(rng.integers(0, n_ops))] = force
    picks = rng.integers(0, 3, size=(n_ops, 2))
    s_const = (rng.uniform(size=(rows, cols)) < 0.5).astype(float)

    def build(ls: Sequence[Tensor]) -> Tensor:
        pool = [ls[0], ls[1], ls[2]]
        W, v = ls[3], ls[4]
        for op, (i, j) in zip(plan, picks):
            a, b = pool[i % len(pool)], pool[j % len(pool)]
            if op in UNARY_OPS:
                out = UNARY_OPS[op](a)
            elif op in BINARY_OPS:
                out = BINARY_OPS[op](a, b)
            elif op == "matmul":
                out = T.tanh(a @ W)
            elif op in ("sum", "mean", "logsumexp"):
                out = a + T.reduce(op, b, axis=1, keepdims=True)
            elif op == "row_broadcast":
                out = a * v
            elif op == "reshape":
                out = T.reshape(T.reshape(a, (-1,)), a.shape) * b
            elif op == "expand_dims":
                out = T.sum(T.expand_dims(a, 1) * T.expand_dims(b, 0), axis=0) / rows
            elif op == "gaussian_log_prob":
                out = gaussian_log_prob(a, GaussianParams(b, T.softplus(v) + 0.1))
            else:
                out = bernoulli_log_prob(s_const, BernoulliLogits(a))
            pool.append(out)
            pool = pool[-3:]
        total = pool[-1]
        return T.logsumexp(T.reshape(total, (-1,)), axis=0) + T.mean(pool[-2])

    return leaves, build, plan
