"""Minimal reverse-mode automatic differentiation over dense float64 tensors.

Forward primitives record vector-Jacobian closures on the active Tape;
``backward`` replays the tape in reverse and accumulates (+=) gradients into
every tensor with ``requires_grad``. The primitive set is exactly what the
network needs; each closure is validated against central finite differences
in the test suite and by ``grad_check``.
"""

from __future__ import annotations

from dataclasses import dataclass
from typing import Callable, Sequence

import numpy as np

from .errors import NumericsError, ShapeError, TapeError

DEBUG_NUMERICS = False


def set_debug(flag: bool) -> None:
    """Enable NaN/Inf surfacing on every primitive output."""
    global DEBUG_NUMERICS
    DEBUG_NUMERICS = flag


_ACTIVE: "Tape | None" = None


class Tape:
    """Ordered record of executed primitives; one backward pass per tape."""

    __slots__ = ("records", "consumed")

    def __init__(self):
        self.records: list[tuple[Tensor, list]] = []
        self.consumed = False

    def __enter__(self) -> "Tape":
        global _ACTIVE
        if _ACTIVE is not None:
            raise TapeError("nested", "a tape is already active")
        _ACTIVE = self
        return self

    def __exit__(self, *exc) -> None:
        global _ACTIVE
        _ACTIVE = None


class Tensor:
    __slots__ = ("data", "requires_grad", "grad", "tape", "_grad_alias")

    def __init__(self, data, requires_grad: bool = False):
        self.data = np.asarray(data, dtype=np.float64)
        self.requires_grad = requires_grad
        self.grad: np.ndarray | None = None
        self.tape: Tape | None = None
        self._grad_alias = False  # grad currently aliases another array

    @property
    def shape(self) -> tuple[int, ...]:
        return self.data.shape

    def item(self) -> float:
        return float(self.data)

    def zero_grad(self) -> None:
        self.grad = None

    def __repr__(self) -> str:
        return f"Tensor(shape={self.data.shape}, requires_grad={self.requires_grad})"


def _finish(out_data: np.ndarray, pairs: Sequence[tuple]) -> Tensor:
    """Wrap a primitive's output, recording its VJP closures when needed.

    Each pair is (input, vjp, owns): ``owns`` marks closures whose result is
    a freshly allocated array, which backward may take without copying.
    """
    if DEBUG_NUMERICS and not np.isfinite(out_data).all():
        raise NumericsError("primitive produced a non-finite value")
    out = Tensor(out_data)
    tape = _ACTIVE
    if tape is not None:
        grad_pairs = [p for p in pairs if p[0].requires_grad]
        if grad_pairs:
            out.requires_grad = True
            out.tape = tape
            tape.records.append((out, grad_pairs))
    return out


def backward(loss: Tensor) -> None:
    """Reverse sweep from a scalar loss, filling grads of all grad leaves."""
    if loss.data.shape != ():
        raise ShapeError(f"loss must be scalar, got shape {loss.data.shape}")
    tape = loss.tape
    if tape is None:
        raise TapeError("no-tape", "loss was not produced on a tape")
    if tape.consumed:
        raise TapeError("consumed", "tape has already been swept")
    tape.consumed = True
    loss.grad = np.ones(())
    outputs = set()
    for out, pairs in reversed(tape.records):
        outputs.add(id(out))
        g = out.grad
        if g is None:
            continue
        for t, fn, owns in pairs:
            val = fn(g)
            if t.grad is None:
                # a shared/view result may be adopted as long as it is
                # materialized before any later accumulation mutates it
                t.grad = val
                t._grad_alias = not owns
            else:
                if t._grad_alias:
                    t.grad = np.array(t.grad)
                    t._grad_alias = False
                t.grad += val
    # leaves keep their grads past the tape's lifetime: detach any aliases
    for _, pairs in tape.records:
        for t, _, _ in pairs:
            if t._grad_alias and id(t) not in outputs:
                t.grad = np.array(t.grad)
                t._grad_alias = False


# ---------------------------------------------------------------------------
# primitives

def matmul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.ndim != 2 or b.data.ndim != 2 or a.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"matmul shapes {a.data.shape} x {b.data.shape}")
    ad, bd = a.data, b.data
    return _finish(ad @ bd, [(a, lambda g: g @ bd.T, True),
                             (b, lambda g: ad.T @ g, True)])


def add(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"add shapes {a.data.shape} vs {b.data.shape}")
    return _finish(a.data + b.data, [(a, lambda g: g, False), (b, lambda g: g, False)])


def sub(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"sub shapes {a.data.shape} vs {b.data.shape}")
    return _finish(a.data - b.data, [(a, lambda g: g, False), (b, lambda g: -g, True)])


def mul(a: Tensor, b: Tensor) -> Tensor:
    if a.data.shape != b.data.shape:
        raise ShapeError(f"mul shapes {a.data.shape} vs {b.data.shape}")
    ad, bd = a.data, b.data
    return _finish(ad * bd, [(a, lambda g: g * bd, True), (b, lambda g: g * ad, True)])


def add_bias(x: Tensor, b: Tensor) -> Tensor:
    """Broadcast-add a length-F bias vector to every row of an (M, F) matrix."""
    if x.data.ndim != 2 or b.data.ndim != 1 or x.data.shape[1] != b.data.shape[0]:
        raise ShapeError(f"add_bias shapes {x.data.shape} + {b.data.shape}")
    return _finish(x.data + b.data,
                   [(x, lambda g: g, False), (b, lambda g: g.sum(axis=0), True)])


def row_scale(x: Tensor, s: Tensor) -> Tensor:
    """Multiply every row of an (M, F) matrix elementwise by a length-F vector."""
    if x.data.ndim != 2 or s.data.ndim != 1 or x.data.shape[1] != s.data.shape[0]:
        raise ShapeError(f"row_scale shapes {x.data.shape} * {s.data.shape}")
    xd, sd = x.data, s.data
    return _finish(xd * sd, [(x, lambda g: g * sd, True),
                             (s, lambda g: (g * xd).sum(axis=0), True)])


def scale(x: Tensor, c: float) -> Tensor:
    c = float(c)
    return _finish(x.data * c, [(x, lambda g: g * c, True)])


def concat(tensors: Sequence[Tensor], axis: int = 0) -> Tensor:
    if not tensors:
        raise ShapeError("concat of zero tensors")
    sizes = [t.data.shape[axis] for t in tensors]
    offsets = np.cumsum([0] + sizes)

    def make_vjp(i):
        lo, hi = offsets[i], offsets[i + 1]
        sl = [slice(None)] * tensors[i].data.ndim
        sl[axis] = slice(lo, hi)
        sl = tuple(sl)
        return lambda g: g[sl]

    pairs = [(t, make_vjp(i), False) for i, t in enumerate(tensors)]
    return _finish(np.concatenate([t.data for t in tensors], axis=axis), pairs)


def gather_rows(x: Tensor, indices: np.ndarray) -> Tensor:
    """Select rows (with repetition); backward scatter-adds into the source."""
    if x.data.ndim != 2:
        raise ShapeError(f"gather_rows needs a matrix, got {x.data.shape}")
    idx = np.asarray(indices, dtype=np.intp)
    xd = x.data

    def vjp(g):
        dx = np.zeros_like(xd)
        np.add.at(dx, idx, g)
        return dx

    return _finish(xd[idx], [(x, vjp, True)])


def slice_rows(x: Tensor, lo: int, hi: int) -> Tensor:
    """Contiguous row range [lo, hi); the cheap special case of gather."""
    if x.data.ndim != 2 or not 0 <= lo <= hi <= x.data.shape[0]:
        raise ShapeError(f"slice_rows [{lo}:{hi}] of {x.data.shape}")
    xd = x.data

    def vjp(g):
        dx = np.zeros_like(xd)
        dx[lo:hi] = g
        return dx

    return _finish(xd[lo:hi].copy(), [(x, vjp, True)])


def repeat_rows(x: Tensor, repeats: int) -> Tensor:
    """Each row repeated ``repeats`` times consecutively; backward sums the
    repeated block (the cheap special case of gather with i = row // repeats)."""
    if x.data.ndim != 2:
        raise ShapeError(f"repeat_rows needs a matrix, got {x.data.shape}")
    xd = x.data
    m, f = xd.shape
    return _finish(np.repeat(xd, repeats, axis=0),
                   [(x, lambda g: g.reshape(m, repeats, f).sum(axis=1), True)])


def reshape(x: Tensor, shape) -> Tensor:
    orig = x.data.shape
    return _finish(x.data.reshape(shape), [(x, lambda g: g.reshape(orig), False)])


def transpose(x: Tensor) -> Tensor:
    if x.data.ndim != 2:
        raise ShapeError(f"transpose needs a matrix, got {x.data.shape}")
    return _finish(x.data.T.copy(), [(x, lambda g: g.T, False)])


def max_over_axis(x: Tensor, axis: int) -> Tensor:
    """Channel-wise max; gradient routes to the first argmax on ties."""
    xd = x.data
    if xd.shape[axis] == 0:
        raise ShapeError(f"max over empty axis {axis} of {xd.shape}")
    amax = np.expand_dims(np.argmax(xd, axis=axis), axis)
    out = np.take_along_axis(xd, amax, axis=axis).squeeze(axis)

    def vjp(g):
        dx = np.zeros_like(xd)
        np.put_along_axis(dx, amax, np.expand_dims(g, axis), axis)
        return dx

    return _finish(out, [(x, vjp, True)])


def mean_over_axis(x: Tensor, axis: int) -> Tensor:
    xd = x.data
    n = xd.shape[axis]
    if n == 0:
        raise ShapeError(f"mean over empty axis {axis} of {xd.shape}")
    return _finish(xd.mean(axis=axis),
                   [(x, lambda g: np.broadcast_to(np.expand_dims(g / n, axis), xd.shape),
                     False)])


def var_over_axis(x: Tensor, axis: int) -> Tensor:
    """Population variance along an axis (divide by the element count)."""
    xd = x.data
    n = xd.shape[axis]
    if n == 0:
        raise ShapeError(f"variance over empty axis {axis} of {xd.shape}")
    centered = xd - xd.mean(axis=axis, keepdims=True)
    return _finish((centered * centered).mean(axis=axis),
                   [(x, lambda g: np.expand_dims(g, axis) * (2.0 / n) * centered, True)])


def softmax(x: Tensor, axis: int = -1) -> Tensor:
    xd = x.data
    shifted = xd - xd.max(axis=axis, keepdims=True)
    e = np.exp(shifted)
    y = e / e.sum(axis=axis, keepdims=True)
    return _finish(y, [(x, lambda g: (g - (g * y).sum(axis=axis, keepdims=True)) * y,
                        True)])


def leaky_relu(x: Tensor, slope: float = 0.2) -> Tensor:
    xd = x.data
    neg = xd < 0

    def vjp(g):
        dg = g.copy()
        dg[neg] *= slope
        return dg

    return _finish(np.where(neg, xd * slope, xd), [(x, vjp, True)])


def square(x: Tensor) -> Tensor:
    xd = x.data
    return _finish(xd * xd, [(x, lambda g: g * (2.0 * xd), True)])


def sqrt_eps(x: Tensor, eps: float) -> Tensor:
    """sqrt(x + eps); eps > 0 keeps the derivative finite at zero."""
    y = np.sqrt(x.data + eps)
    return _finish(y, [(x, lambda g: g * (0.5 / y), True)])


def reciprocal(x: Tensor) -> Tensor:
    y = 1.0 / x.data
    return _finish(y, [(x, lambda g: -g * y * y, True)])


def layer_norm_core(x: Tensor, eps: float = 1e-5) -> Tensor:
    """Normalize each row (last axis) to zero mean, unit population variance."""
    xd = x.data
    mu = xd.mean(axis=-1, keepdims=True)
    xc = xd - mu
    inv = 1.0 / np.sqrt((xc * xc).mean(axis=-1, keepdims=True) + eps)
    y = xc * inv

    def vjp(g):
        return inv * (g - g.mean(axis=-1, keepdims=True)
                      - y * (g * y).mean(axis=-1, keepdims=True))

    return _finish(y, [(x, vjp, True)])


# ---------------------------------------------------------------------------
# gradient checking

@dataclass
class GradCheckReport:
    passed: bool
    max_rel_error: float
    worst_coord: int
    attempts: int
    checked_coords: int


def grad_check(f: Callable[[Tensor], Tensor], x: Tensor, h: float = 1e-5,
               tol: float = 1e-4, max_coords: int | None = None,
               seed: int = 0) -> GradCheckReport:
    """Compare analytic gradients of scalar-valued ``f`` at ``x`` against
    central finite differences, coordinate by coordinate.

    Relative error uses denominator max(|analytic|, |numeric|, 1e-8). If the
    check fails (e.g. an exactly tied max puts x on a kink), x is perturbed
    and the comparison retried, up to 3 retries. Failures are reported, not
    raised.
    """
    rng = np.random.default_rng(seed)
    base = x.data.copy()
    report = None
    for attempt in range(4):
        x.data = base if attempt == 0 else base + rng.normal(0.0, 1e-3, base.shape)
        x.grad = None
        with Tape() as tape:
            loss = f(x)
        if loss.data.shape != ():
            raise ShapeError(f"grad_check needs a scalar-valued f, got {loss.data.shape}")
        backward(loss)
        analytic = (x.grad if x.grad is not None else np.zeros_like(x.data)).reshape(-1).copy()

        flat = x.data.reshape(-1)
        coords = np.arange(flat.size)
        if max_coords is not None and flat.size > max_coords:
            coords = rng.choice(flat.size, size=max_coords, replace=False)
        max_err, worst = 0.0, -1
        for i in coords:
            orig = flat[i]
            flat[i] = orig + h
            up = float(f(x).data)
            flat[i] = orig - h
            down = float(f(x).data)
            flat[i] = orig
            numeric = (up - down) / (2.0 * h)
            err = abs(analytic[i] - numeric) / max(abs(analytic[i]), abs(numeric), 1e-8)
            if err > max_err:
                max_err, worst = err, int(i)
        report = GradCheckReport(max_err < tol, max_err, worst, attempt + 1, len(coords))
        if report.passed:
            break
    x.data = base
    x.grad = None
    return report
