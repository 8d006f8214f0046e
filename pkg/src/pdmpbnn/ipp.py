"""Event times of inhomogeneous Poisson processes.

Two pieces live here: exact inversion for a rate that is linear in time, and
the adaptive piecewise-linear envelope used to thin the event rate of a PDMP
segment when no analytic bound is available.

The envelope keeps the evaluated times ``T`` and adjusted rates ``L`` of the
current segment. Its active line interpolates the two most recent points and is
extrapolated forward to propose the next time; every rejected proposal is
appended and the line is refitted through it and its predecessor.

Rate evaluators return the signed directional derivative ``grad U . dw/dt``;
the event rate is its positive part. ``L`` stores the signed values scaled by
``alpha`` and the envelope is ``max(0, a*t + b)``, so a rate that is linear
before clipping is reproduced exactly, including across its zero crossing.
"""
from dataclasses import dataclass, field
import math
from typing import Callable, NamedTuple

import numpy as np

from .errors import ThinningError

_FLAT_SLOPE = 1e-12
HIST_BINS = 50


@dataclass
class LinearSegment:
    """Rate ``h(t) = a*t + b`` for ``t >= start_time``."""

    a: float
    b: float
    start_time: float = 0.0

    def __call__(self, t):
        return self.a * t + self.b

    @property
    def is_zero(self):
        return self.a == 0.0 and self.b == 0.0


def sample_linear_time(seg, t_prev, u):
    """First event after ``t_prev`` of a Poisson process with rate ``max(0, a*t + b)``.

    Returns ``None`` when the rate integrates to less than ``-log(1 - u)`` on
    ``[t_prev, inf)``, which happens for flat zero rates and for decreasing rates
    that cross zero before the event fires.

    The closed form is ``t = -b/a + sqrt(b**2 + a**2 t_prev**2 + 2 a b t_prev
    - 2 a log(1 - u)) / a``; it is evaluated as
    ``t_prev + 2E / (h0 + sqrt(h0**2 + 2 a E))`` with ``h0 = h(t_prev)`` and
    ``E = -log(1 - u)`` to avoid cancellation when ``a`` is small.
    """
    if not 0.0 < u < 1.0:
        raise ThinningError(f"u must lie in (0, 1), got {u}")
    e = -math.log1p(-u)
    a, b = seg.a, seg.b
    h0 = a * t_prev + b
    if abs(a) < _FLAT_SLOPE:
        # effectively flat; the stable form still accounts for the tiny slope
        if h0 <= 0:
            return None
        disc = h0 * h0 + 2.0 * a * e
        return t_prev + 2.0 * e / (h0 + math.sqrt(disc)) if disc >= 0 else None
    if a > 0:
        if h0 > 0:
            return t_prev + 2.0 * e / (h0 + math.sqrt(h0 * h0 + 2.0 * a * e))
        # rate is zero until it crosses at -b/a
        return -b / a + math.sqrt(2.0 * e / a)
    if h0 <= 0:
        return None
    disc = h0 * h0 + 2.0 * a * e
    if disc < 0:
        return None
    return t_prev + 2.0 * e / (h0 + math.sqrt(disc))


def adjusted_rate(raw, alpha):
    """``max(0, alpha * raw)``: the inflated rate the envelope interpolates."""
    if alpha < 1:
        raise ThinningError(f"alpha must be >= 1, got {alpha}")
    return max(0.0, alpha * raw)


@dataclass
class ThinningAudit:
    """Counters over thinning proposals, plus a histogram of ratios on ``[0, R]``.

    A ratio above ``1 + tol`` is a bound violation (the envelope was under the
    true rate); a ratio of at least ``R`` is rejected by the cap. Ratios above
    ``R`` land in the last histogram bin.
    """

    R: float = 2.0
    tol: float = 1e-9
    proposals: int = 0
    acceptances: int = 0
    rejections: int = 0
    bound_violations: int = 0
    cap_rejections: int = 0
    advances: int = 0
    max_accepted_ratio: float = 0.0
    hist: np.ndarray = field(default_factory=lambda: np.zeros(HIST_BINS, dtype=np.int64))

    def record(self, ratio, accepted):
        self.proposals += 1
        if accepted:
            self.acceptances += 1
            self.max_accepted_ratio = max(self.max_accepted_ratio, ratio)
        else:
            self.rejections += 1
            if ratio >= self.R:
                self.cap_rejections += 1
        if ratio > 1.0 + self.tol:
            self.bound_violations += 1
        k = min(int(ratio / self.R * HIST_BINS), HIST_BINS - 1)
        self.hist[max(k, 0)] += 1

    def merge(self, other):
        self.proposals += other.proposals
        self.acceptances += other.acceptances
        self.rejections += other.rejections
        self.bound_violations += other.bound_violations
        self.cap_rejections += other.cap_rejections
        self.advances += other.advances
        self.max_accepted_ratio = max(self.max_accepted_ratio, other.max_accepted_ratio)
        self.hist += other.hist

    @property
    def proposals_per_event(self):
        return self.proposals / self.acceptances if self.acceptances else math.inf

    def to_dict(self):
        return {
            "R": self.R,
            "proposals": self.proposals,
            "acceptances": self.acceptances,
            "rejections": self.rejections,
            "bound_violations": self.bound_violations,
            "cap_rejections": self.cap_rejections,
            "advances": self.advances,
            "max_accepted_ratio": self.max_accepted_ratio,
            "ratio_hist_edges": np.linspace(0.0, self.R, HIST_BINS + 1).tolist(),
            "ratio_hist": self.hist.tolist(),
        }

    @classmethod
    def from_dict(cls, d):
        audit = cls(R=d["R"])
        for key in ("proposals", "acceptances", "rejections", "bound_violations",
                    "cap_rejections", "advances", "max_accepted_ratio"):
            setattr(audit, key, d[key])
        audit.hist = np.asarray(d["ratio_hist"], dtype=np.int64)
        return audit


class Proposal(NamedTuple):
    """One thinning proposal, as recorded by ``propose_event(trace=...)``."""

    time: float
    envelope: float
    rate: float
    ratio: float
    accepted: bool
    anchors: tuple


@dataclass
class Envelope:
    """Growing sets of evaluated times and signed adjusted rates for one segment."""

    alpha: float = 1.0
    R: float = 2.0
    t_init: float = 0.1
    times: list = field(default_factory=list)
    rates: list = field(default_factory=list)
    active: LinearSegment = field(default_factory=lambda: LinearSegment(0.0, 0.0))
    anchors: tuple = (0.0, 0.0)

    def push(self, t, rate_hat):
        """Append a point and refit the active line through the last two points."""
        t0, l0 = self.times[-1], self.rates[-1]
        self.times.append(t)
        self.rates.append(rate_hat)
        if t > t0:
            a = (rate_hat - l0) / (t - t0)
            self.active = LinearSegment(a, rate_hat - a * t, t)
        else:
            self.active = LinearSegment(self.active.a, self.active.b, t)
        self.anchors = (l0, rate_hat)

    def clear(self):
        self.times.clear()
        self.rates.clear()
        self.active = LinearSegment(0.0, 0.0)
        self.anchors = (0.0, 0.0)


def _evaluate(rate, t):
    raw = float(rate(t))
    if not math.isfinite(raw):
        raise ThinningError(f"non-finite event rate at t={t}")
    return raw


def init_envelope(rate: Callable[[float], float], alpha=1.0, R=2.0, t_init=0.1):
    """Start an envelope from the rate evaluated at ``0`` and ``t_init``.

    Only the point at ``0`` is kept; the ``t_init`` evaluation just sets the slope.
    """
    if not t_init > 0:
        raise ThinningError("t_init must be > 0")
    if not R > 1:
        raise ThinningError("R must be > 1")
    if alpha < 1:
        raise ThinningError(f"alpha must be >= 1, got {alpha}")
    l0 = alpha * _evaluate(rate, 0.0)
    l1 = alpha * _evaluate(rate, t_init)
    a = (l1 - l0) / t_init
    env = Envelope(alpha=alpha, R=R, t_init=t_init, times=[0.0], rates=[l0],
                   active=LinearSegment(a, l0, 0.0), anchors=(l0, l1))
    return env


def _uniform(rng):
    u = rng.random()
    while u == 0.0:
        u = rng.random()
    return u


def propose_event(env, rate, rng, horizon=math.inf, audit=None, trace=None,
                  max_iter=10**6):
    """Thin the rate with the adaptive envelope until a proposal is accepted.

    A proposal ``t`` is accepted when ``u <= r`` and ``r < R`` with
    ``r = max(0, rate(t)) / h(t)``. Rejected proposals refine the envelope. When the
    active line is identically zero, or extinguishes before producing an event,
    the envelope advances by ``t_init`` and evaluates the rate there.

    Returns the accepted time, or ``None`` if no event occurs before ``horizon``
    (the caller's competing refresh time).
    """
    if audit is None:
        audit = ThinningAudit(R=env.R)
    for _ in range(max_iter):
        t_prev = env.times[-1]
        seg = env.active
        t = None if seg.is_zero else sample_linear_time(seg, t_prev, _uniform(rng))
        if t is None or seg(t) <= 0.0:
            t_next = t_prev + env.t_init
            if t_next > horizon:
                return None
            audit.advances += 1
            env.push(t_next, env.alpha * _evaluate(rate, t_next))
            continue
        if t > horizon:
            return None
        raw = _evaluate(rate, t)
        lam = max(raw, 0.0)
        h = seg(t)
        ratio = lam / h
        accepted = rng.random() <= ratio and ratio < env.R
        audit.record(ratio, accepted)
        if trace is not None:
            trace.append(Proposal(t, h, lam, ratio, accepted, env.anchors))
        if accepted:
            return t
        env.push(t, env.alpha * raw)
    raise ThinningError(f"thinning did not accept an event within {max_iter} iterations")
