"""Limited-memory BFGS with a strong-Wolfe line search.

The objective maps a 1-D parameter array to ``(loss, grad)``. Curvature pairs
live in a small ring buffer; the search direction comes from the two-loop
recursion and falls back to steepest descent whenever the buffer is empty or
the direction fails to descend.
"""

from __future__ import annotations

import math
from collections import deque
from dataclasses import dataclass, field

import numpy as np

from .errors import NumericalError


@dataclass
class LbfgsState:
    history: int = 10
    c1: float = 1e-4
    c2: float = 0.9
    max_trials: int = 20
    gtol: float = 1e-10
    pairs: deque = field(default_factory=deque)
    iteration: int = 0
    evaluations: int = 0
    losses: list = field(default_factory=list)

    def reset(self):
        self.pairs.clear()

    def push(self, s, y):
        sy = float(s @ y)
        # curvature safeguard keeps the implicit inverse Hessian positive definite
        if sy <= 1e-12 * np.linalg.norm(s) * np.linalg.norm(y):
            return False
        self.pairs.append((s, y, 1.0 / sy))
        while len(self.pairs) > self.history:
            self.pairs.popleft()
        return True


def two_loop(grad, pairs):
    """Return ``-H g`` for the L-BFGS inverse-Hessian approximation ``H``."""
    q = np.array(grad, dtype=np.float64, copy=True)
    if not pairs:
        return -q
    alphas = []
    for s, y, rho in reversed(pairs):
        a = rho * float(s @ q)
        q -= a * y
        alphas.append(a)
    s, y, _ = pairs[-1]
    q *= float(s @ y) / float(y @ y)
    for (s, y, rho), a in zip(pairs, reversed(alphas)):
        b = rho * float(y @ q)
        q += (a - b) * s
    return -q


def _cubic_min(a, fa, da, b, fb, db):
    """Minimiser of the cubic interpolating two points and slopes, or None."""
    if a == b:
        return None
    d1 = da + db - 3.0 * (fa - fb) / (a - b)
    disc = d1 * d1 - da * db
    if disc < 0 or not math.isfinite(disc):
        return None
    d2 = math.copysign(math.sqrt(disc), b - a)
    denom = db - da + 2.0 * d2
    if denom == 0:
        return None
    t = b - (b - a) * (db + d2 - d1) / denom
    return t if math.isfinite(t) else None


class _Probe:
    def __init__(self, fun, x, d, state, iteration):
        self.fun, self.x, self.d = fun, x, d
        self.state, self.iteration = state, iteration
        self.trials = 0

    def __call__(self, t):
        self.trials += 1
        self.state.evaluations += 1
        f, g = self.fun(self.x + t * self.d)
        f = float(f)
        g = np.asarray(g, dtype=np.float64)
        if not math.isfinite(f) or not np.all(np.isfinite(g)):
            raise NumericalError(
                f"non-finite loss/gradient at L-BFGS iteration {self.iteration} (step {t:g})"
            )
        return f, g, float(g @ self.d)


def strong_wolfe(probe, f0, d0, t, state):
    """Bracketing + zoom line search. Returns ``(t, f, g)`` or ``None``."""
    c1, c2 = state.c1, state.c2
    t_prev, f_prev, d_prev = 0.0, f0, d0
    first = True
    while probe.trials < state.max_trials:
        f, g, dt = probe(t)
        if f > f0 + c1 * t * d0 or (not first and f >= f_prev):
            return _zoom(probe, f0, d0, (t_prev, f_prev, d_prev), (t, f, dt), state)
        if abs(dt) <= -c2 * d0:
            return t, f, g
        if dt >= 0:
            return _zoom(probe, f0, d0, (t, f, dt), (t_prev, f_prev, d_prev), state, best_g=g)
        nxt = _cubic_min(t_prev, f_prev, d_prev, t, f, dt)
        lo, hi = t + 0.01 * (t - t_prev), 10.0 * t
        if nxt is None or not lo <= nxt <= hi:
            nxt = 2.0 * t
        t_prev, f_prev, d_prev = t, f, dt
        t = nxt
        first = False
    return None


def _zoom(probe, f0, d0, lo, hi, state, best_g=None):
    c1, c2 = state.c1, state.c2
    (t_lo, f_lo, d_lo), (t_hi, f_hi, d_hi) = lo, hi
    while probe.trials < state.max_trials:
        a, b = min(t_lo, t_hi), max(t_lo, t_hi)
        width = b - a
        if width <= 1e-16 * max(1.0, b):
            break
        t = _cubic_min(t_lo, f_lo, d_lo, t_hi, f_hi, d_hi)
        if t is None or not a + 0.1 * width <= t <= b - 0.1 * width:
            t = 0.5 * (a + b)
        f, g, dt = probe(t)
        if f > f0 + c1 * t * d0 or f >= f_lo:
            t_hi, f_hi, d_hi = t, f, dt
        else:
            if abs(dt) <= -c2 * d0:
                return t, f, g
            if dt * (t_hi - t_lo) >= 0:
                t_hi, f_hi, d_hi = t_lo, f_lo, d_lo
            t_lo, f_lo, d_lo = t, f, dt
    return None


def lbfgs_minimize(objective, x0, state: LbfgsState | None = None, max_iters=20, callback=None):
    """Run up to ``max_iters`` L-BFGS iterations from ``x0``; return the final iterate.

    ``callback(iteration, loss)`` fires after every accepted step. The loss of
    successive accepted iterates never increases. Iteration stops early when the
    gradient vanishes (``max|g| <= gtol``) or no strong-Wolfe step exists even
    along steepest descent.
    """
    state = state if state is not None else LbfgsState()
    x = np.array(x0, dtype=np.float64, copy=True)
    if max_iters <= 0:
        return x
    state.evaluations += 1
    f, g = objective(x)
    f = float(f)
    g = np.asarray(g, dtype=np.float64)
    if not math.isfinite(f) or not np.all(np.isfinite(g)):
        raise NumericalError(f"non-finite loss/gradient at L-BFGS iteration {state.iteration}")
    state.losses.append(f)
    for _ in range(max_iters):
        if g.size == 0 or np.max(np.abs(g)) <= state.gtol:
            break
        result = None
        for attempt in range(2):
            d = two_loop(g, state.pairs)
            gd = float(g @ d)
            if not gd < 0 or not math.isfinite(gd):
                state.reset()
                d = -g
                gd = -float(g @ g)
            t0 = 1.0 if state.pairs else min(1.0, 1.0 / float(np.abs(g).sum()))
            probe = _Probe(objective, x, d, state, state.iteration + 1)
            result = strong_wolfe(probe, f, gd, t0, state)
            if result is not None or not state.pairs:
                break
            state.reset()  # stale curvature; retry once along -g
        if result is None:
            break
        t, f_new, g_new = result
        s = t * d
        state.push(s, g_new - g)
        x = x + s
        f, g = f_new, g_new
        state.iteration += 1
        state.losses.append(f)
        if callback is not None:
            callback(state.iteration, f)
    return x
