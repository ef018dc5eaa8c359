"""Minimal reverse-mode autodiff over dense float64 matrices.

Everything is a 2-D numpy array wrapped in a Var that lives on a Tape.
Ops record a backward closure; Tape.backward replays them in reverse
recording order. Single-threaded per tape by design.
"""

from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .errors import DegenerateInputError, NumericalError, ShapeError

_NORM_EPS = 1e-12

# Test hook: when set to an op name, that op's backward multiplies its
# gradient by a wrong factor so gradient checks must fail.
_FAULT_OP: str | None = None


def set_backward_fault(op_name: str | None) -> None:
    global _FAULT_OP
    _FAULT_OP = op_name


def _fault(op_name: str, g: np.ndarray) -> np.ndarray:
    if _FAULT_OP == op_name:
        return g * 1.01
    return g


class Var:
    """A matrix value plus its gradient slot on a tape."""

    __slots__ = ("value", "grad", "tape", "_backward")

    def __init__(self, tape: "Tape", value: np.ndarray, backward=None):
        value = np.ascontiguousarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"Var must be 2-D, got shape {value.shape}")
        self.value = value
        self.grad = np.zeros_like(value)
        self.tape = tape
        self._backward = backward
        tape._nodes.append(self)

    @property
    def shape(self):
        return self.value.shape

    def scalar(self) -> float:
        if self.value.size != 1:
            raise ShapeError(f"expected scalar, got shape {self.shape}")
        return float(self.value[0, 0])


class Tape:
    """Records ops in order; replays them backward for gradients."""

    def __init__(self):
        self._nodes: list[Var] = []
        self._param_vars: dict[tuple[int, str], Var] = {}
        self._param_bindings: list[tuple["ParamStore", str, Var]] = []

    def const(self, value) -> Var:
        value = np.asarray(value, dtype=np.float64)
        if value.ndim == 1:
            value = value.reshape(1, -1)
        return Var(self, value)

    def param(self, store: "ParamStore", name: str) -> Var:
        """Var bound to a named parameter; cached so reuse shares gradients."""
        key = (id(store), name)
        if key not in self._param_vars:
            v = Var(self, store.params[name])
            self._param_vars[key] = v
            self._param_bindings.append((store, name, v))
        return self._param_vars[key]

    def backward(self, loss: Var) -> None:
        if loss.tape is not self:
            raise ShapeError("loss does not belong to this tape")
        if loss.value.size != 1:
            raise ShapeError("backward requires a scalar loss")
        for node in self._nodes:
            node.grad[...] = 0.0
        loss.grad[...] = 1.0
        for node in reversed(self._nodes):
            if node._backward is not None:
                node._backward()

    def accumulate_grads(self) -> None:
        """Add this tape's parameter gradients into their stores."""
        for store, name, var in self._param_bindings:
            store.grads[name] += var.grad


class ParamStore:
    """Named trainable matrices with gradient accumulators and group tags."""

    def __init__(self):
        self.params: dict[str, np.ndarray] = {}
        self.grads: dict[str, np.ndarray] = {}
        self.groups: dict[str, str] = {}

    def add(self, name: str, value: np.ndarray, group: str = "other") -> None:
        value = np.ascontiguousarray(value, dtype=np.float64)
        if value.ndim != 2:
            raise ShapeError(f"parameter {name} must be 2-D")
        self.params[name] = value
        self.grads[name] = np.zeros_like(value)
        self.groups[name] = group

    def init_mlp(self, name: str, in_dim: int, hidden: int, out_dim: int,
                 rng: np.random.Generator, group: str = "other",
                 scale: float | None = None) -> None:
        """Two-layer perceptron parameters: linear -> ReLU -> linear."""
        s1 = scale if scale is not None else np.sqrt(2.0 / in_dim)
        s2 = scale if scale is not None else np.sqrt(2.0 / hidden)
        self.add(f"{name}.W1", rng.standard_normal((in_dim, hidden)) * s1, group)
        self.add(f"{name}.b1", np.zeros((1, hidden)), group)
        self.add(f"{name}.W2", rng.standard_normal((hidden, out_dim)) * s2, group)
        self.add(f"{name}.b2", np.zeros((1, out_dim)), group)

    def zero_grads(self) -> None:
        for g in self.grads.values():
            g[...] = 0.0

    def names(self) -> list[str]:
        return list(self.params.keys())


# ---------------------------------------------------------------------------
# primitive ops
# ---------------------------------------------------------------------------

def _same_tape(*vars_: Var) -> Tape:
    tape = vars_[0].tape
    for v in vars_[1:]:
        if v.tape is not tape:
            raise ShapeError("operands live on different tapes")
    return tape


def matmul(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.shape[1] != b.shape[0]:
        raise ShapeError(f"matmul {a.shape} x {b.shape}")
    out = Var(tape, a.value @ b.value)

    def bw():
        g = _fault("matmul", out.grad)
        a.grad += g @ b.value.T
        b.grad += a.value.T @ g

    out._backward = bw
    return out


def add(a: Var, b: Var) -> Var:
    """Elementwise add; b may be a (1, n) row bias broadcast over a's rows."""
    tape = _same_tape(a, b)
    if a.shape == b.shape:
        bias = False
    elif b.shape == (1, a.shape[1]):
        bias = True
    else:
        raise ShapeError(f"add {a.shape} + {b.shape}")
    out = Var(tape, a.value + b.value)

    def bw():
        g = _fault("add", out.grad)
        a.grad += g
        if bias:
            b.grad += g.sum(axis=0, keepdims=True)
        else:
            b.grad += g

    out._backward = bw
    return out


def relu(a: Var) -> Var:
    out = Var(a.tape, np.maximum(a.value, 0.0))
    mask = a.value > 0.0

    def bw():
        a.grad += _fault("relu", out.grad) * mask

    out._backward = bw
    return out


def emul(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.shape != b.shape:
        raise ShapeError(f"emul {a.shape} * {b.shape}")
    out = Var(tape, a.value * b.value)

    def bw():
        g = _fault("emul", out.grad)
        a.grad += g * b.value
        b.grad += g * a.value

    out._backward = bw
    return out


def scale_rows(a: Var, weights: np.ndarray) -> Var:
    """Scale row i by constant weights[i]; weights carry no gradient."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    if w.shape[0] != a.shape[0]:
        raise ShapeError(f"scale_rows: {w.shape[0]} weights for {a.shape[0]} rows")
    out = Var(a.tape, a.value * w[:, None])

    def bw():
        a.grad += _fault("scale_rows", out.grad) * w[:, None]

    out._backward = bw
    return out


def maxpool_rows(a: Var) -> Var:
    """Column-wise max over rows; gradient routes to the first argmax row."""
    if a.shape[0] < 1:
        raise ShapeError("maxpool_rows on empty matrix")
    idx = np.argmax(a.value, axis=0)
    cols = np.arange(a.shape[1])
    out = Var(a.tape, a.value[idx, cols].reshape(1, -1))

    def bw():
        g = _fault("maxpool_rows", out.grad)
        np.add.at(a.grad, (idx, cols), g[0])

    out._backward = bw
    return out


def maxpool_segments(a: Var, n_segments: int) -> Var:
    """Max over rows within each of n equal-height row segments.

    Ties break to the lowest row index, matching maxpool_rows.
    """
    rows, cols = a.shape
    if rows % n_segments != 0:
        raise ShapeError(f"{rows} rows not divisible into {n_segments} segments")
    seg = rows // n_segments
    v = a.value.reshape(n_segments, seg, cols)
    idx = np.argmax(v, axis=1)  # (n_segments, cols)
    out = Var(a.tape, np.take_along_axis(v, idx[:, None, :], axis=1)[:, 0, :])
    row_idx = idx + seg * np.arange(n_segments)[:, None]
    col_idx = np.broadcast_to(np.arange(cols), (n_segments, cols))

    def bw():
        g = _fault("maxpool_segments", out.grad)
        np.add.at(a.grad, (row_idx.ravel(), col_idx.ravel()), g.ravel())

    out._backward = bw
    return out


def concat_cols(a: Var, b: Var) -> Var:
    tape = _same_tape(a, b)
    if a.shape[0] != b.shape[0]:
        raise ShapeError(f"concat_cols {a.shape} | {b.shape}")
    na = a.shape[1]
    out = Var(tape, np.concatenate([a.value, b.value], axis=1))

    def bw():
        g = _fault("concat_cols", out.grad)
        a.grad += g[:, :na]
        b.grad += g[:, na:]

    out._backward = bw
    return out


def slice_rows(a: Var, start: int, stop: int) -> Var:
    out = Var(a.tape, a.value[start:stop])

    def bw():
        a.grad[start:stop] += _fault("slice_rows", out.grad)

    out._backward = bw
    return out


def stack_rows(rows: list[Var]) -> Var:
    tape = _same_tape(*rows)
    for r in rows:
        if r.shape[0] != 1 or r.shape[1] != rows[0].shape[1]:
            raise ShapeError("stack_rows expects (1, d) rows of equal width")
    out = Var(tape, np.concatenate([r.value for r in rows], axis=0))

    def bw():
        g = _fault("stack_rows", out.grad)
        for i, r in enumerate(rows):
            r.grad += g[i:i + 1]

    out._backward = bw
    return out


def vsum(a: Var) -> Var:
    out = Var(a.tape, np.array([[a.value.sum()]]))

    def bw():
        a.grad += _fault("vsum", out.grad[0, 0])

    out._backward = bw
    return out


def cosine(u: Var, v: Var) -> Var:
    """Cosine similarity of two (1, d) vectors; raises on zero-norm input."""
    tape = _same_tape(u, v)
    if u.shape != v.shape or u.shape[0] != 1:
        raise ShapeError(f"cosine {u.shape} vs {v.shape}")
    nu = float(np.linalg.norm(u.value))
    nv = float(np.linalg.norm(v.value))
    if nu < _NORM_EPS or nv < _NORM_EPS:
        raise DegenerateInputError("cosine of (near-)zero-norm vector")
    c = float(np.dot(u.value[0], v.value[0])) / (nu * nv)
    out = Var(tape, np.array([[c]]))

    def bw():
        g = _fault("cosine", out.grad[0, 0])
        u.grad += g * (v.value / (nu * nv) - c * u.value / (nu * nu))
        v.grad += g * (u.value / (nu * nv) - c * v.value / (nv * nv))

    out._backward = bw
    return out


def cosine_matrix(q: Var, t: Var) -> Var:
    """All-pairs cosine similarities: out[i, j] = cos(q_i, t_j)."""
    tape = _same_tape(q, t)
    if q.shape[1] != t.shape[1]:
        raise ShapeError(f"cosine_matrix widths {q.shape} vs {t.shape}")
    qn = np.linalg.norm(q.value, axis=1)
    tn = np.linalg.norm(t.value, axis=1)
    if qn.min() < _NORM_EPS or tn.min() < _NORM_EPS:
        raise DegenerateInputError("cosine_matrix row with (near-)zero norm")
    qh = q.value / qn[:, None]
    th = t.value / tn[:, None]
    out = Var(tape, qh @ th.T)

    def bw():
        g = _fault("cosine_matrix", out.grad)
        dqh = g @ th
        dth = g.T @ qh
        q.grad += (dqh - (dqh * qh).sum(axis=1, keepdims=True) * qh) / qn[:, None]
        t.grad += (dth - (dth * th).sum(axis=1, keepdims=True) * th) / tn[:, None]

    out._backward = bw
    return out


def softmax_xent_rows(sims: Var, tau: float) -> Var:
    """Per-row temperature-scaled softmax cross-entropy against the diagonal.

    Row i yields -log softmax(sims[i] / tau)[i], computed with the row-max
    subtracted for stability. Output shape (B, 1).
    """
    if tau <= 0:
        raise ValueError("temperature must be positive")
    b = sims.shape[0]
    if sims.shape != (b, b):
        raise ShapeError(f"softmax_xent_rows expects square matrix, got {sims.shape}")
    z = sims.value / tau
    m = z.max(axis=1, keepdims=True)
    e = np.exp(z - m)
    s = e.sum(axis=1, keepdims=True)
    p = e / s
    losses = -(np.diag(z)[:, None] - m - np.log(s))
    out = Var(sims.tape, losses)

    def bw():
        g = _fault("softmax_xent_rows", out.grad)
        d = p - np.eye(b)
        sims.grad += g * d / tau

    out._backward = bw
    return out


def masked_mean(v: Var, weights: np.ndarray) -> Var:
    """(1/B) * sum_i weights[i] * v[i] for a (B, 1) column and constant weights."""
    w = np.asarray(weights, dtype=np.float64).reshape(-1)
    b = v.shape[0]
    if v.shape[1] != 1 or w.shape[0] != b:
        raise ShapeError(f"masked_mean on shape {v.shape} with {w.shape[0]} weights")
    out = Var(v.tape, np.array([[float(v.value[:, 0] @ w) / b]]))

    def bw():
        g = _fault("masked_mean", out.grad[0, 0])
        v.grad[:, 0] += g * w / b

    out._backward = bw
    return out


def mlp_forward(x: Var, store: ParamStore, name: str) -> Var:
    """Two-layer perceptron: linear -> ReLU -> linear, parameters from store."""
    if f"{name}.W1" not in store.params:
        raise KeyError(f"unknown MLP name {name!r}")
    w1 = x.tape.param(store, f"{name}.W1")
    b1 = x.tape.param(store, f"{name}.b1")
    w2 = x.tape.param(store, f"{name}.W2")
    b2 = x.tape.param(store, f"{name}.b2")
    if x.shape[1] != w1.shape[0]:
        raise ShapeError(f"MLP {name}: input width {x.shape[1]} != {w1.shape[0]}")
    h = relu(add(matmul(x, w1), b1))
    return add(matmul(h, w2), b2)


# ---------------------------------------------------------------------------
# gradient checking
# ---------------------------------------------------------------------------

@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    max_abs_error: float
    worst_param: str
    n_entries: int
    group_worst: dict[str, float] = field(default_factory=dict)
    param_worst: dict[str, float] = field(default_factory=dict)


def grad_check(f, store: ParamStore, step: float = 1e-6,
               tol: float = 1e-5, abs_floor: float = 1e-6,
               abs_tol: float = 1e-8) -> GradCheckReport:
    """Compare tape gradients of scalar f(store) against central differences.

    An entry passes absolutely when the discrepancy is within abs_tol (this
    covers zero gradients and entries below abs_floor, whose quotient would
    be dominated by finite-difference roundoff); all other entries must meet
    the relative tolerance, and only those feed the reported relative error.
    """
    if step <= 0:
        raise ValueError("step must be positive")
    store.zero_grads()
    out = f(store)
    if not np.isfinite(out.value).all():
        raise NumericalError("gradient check target evaluated non-finite")
    out.tape.backward(out)
    out.tape.accumulate_grads()
    analytic = {k: v.copy() for k, v in store.grads.items()}

    max_rel = 0.0
    max_abs = 0.0
    worst = ""
    n = 0
    group_worst: dict[str, float] = {}
    param_worst: dict[str, float] = {}
    ok = True
    for name, p in store.params.items():
        flat = p.reshape(-1)
        aflat = analytic[name].reshape(-1)
        pw = 0.0
        for j in range(flat.size):
            orig = flat[j]
            flat[j] = orig + step
            f_hi = f(store).scalar()
            flat[j] = orig - step
            f_lo = f(store).scalar()
            flat[j] = orig
            num = (f_hi - f_lo) / (2.0 * step)
            ana = aflat[j]
            denom = max(abs(ana), abs(num))
            diff = abs(ana - num)
            n += 1
            if diff <= abs_tol:
                err = diff
                if err > max_abs:
                    max_abs = err
            elif denom < abs_floor:
                err = diff
                ok = False
                if err > max_abs:
                    max_abs = err
            else:
                err = diff / denom
                if err > tol:
                    ok = False
                if err > max_rel:
                    max_rel = err
                    worst = name
            pw = max(pw, err)
        param_worst[name] = pw
        grp = store.groups[name]
        group_worst[grp] = max(group_worst.get(grp, 0.0), pw)
    return GradCheckReport(passed=ok, max_rel_error=max_rel, max_abs_error=max_abs,
                           worst_param=worst, n_entries=n,
                           group_worst=group_worst, param_worst=param_worst)
