"""PDMP kernels and the event loop.

Three kernels share one loop:

``bps``
    Straight-line motion ``w + v t``; the velocity is reflected against the
    gradient at bounces and redrawn from ``N(0, gamma**2 I)`` at refreshments.
``sigma-bps``
    Motion ``w + (A * v) t`` with a diagonal preconditioner ``A`` estimated from
    a BPS warm-up (Welford running variance of the event positions).
``boomerang``
    Elliptical motion around a Gaussian reference ``N(w_ref, Sigma)`` whose
    diagonal covariance is ``gamma`` times the inverse diagonal Hessian of the
    negative log-likelihood at the MAP estimate.

Every segment draws a refresh time from ``Exp(lambda_ref)`` and thins the
bounce rate ``max(0, grad U(w(t)) . dw/dt)`` with the adaptive envelope of
:mod:`pdmpbnn.ipp`, stopping early once the refresh time is passed. Samples are
the positions at event times.

Note that event positions are not distributed exactly as the target: bounce
events fire preferentially where the particle moves uphill. The bias vanishes
as refreshments dominate (large ``lambda_ref`` relative to the speed).
"""
from dataclasses import dataclass, field, asdict
import json
import math

import numpy as np

from .errors import ConfigError, ModelError, SamplingError, ThinningError
from .ipp import ThinningAudit, init_envelope, propose_event
from .model import MiniBatchPlan, map_fit

KERNELS = ("bps", "sigma-bps", "boomerang")
DEFAULT_GAMMA = {"bps": 0.001, "sigma-bps": 0.001, "boomerang": 0.1}
STD_FLOOR = 1e-8


@dataclass(frozen=True)
class PdmpState:
    w: np.ndarray
    v: np.ndarray
    clock: float = 0.0


@dataclass(frozen=True)
class SamplerConfig:
    """Hyperparameters of a PDMP run.

    ``gamma`` is the velocity scale for ``bps`` (and the ``sigma-bps`` warm-up),
    and the covariance scale of the Boomerang reference. ``num_samples`` counts
    recorded events, i.e. after keeping every ``thinning_factor``-th event.
    ``batch_size=None`` means full-batch gradients.
    """

    kernel: str = "bps"
    lambda_ref: float = 1.0
    gamma: float | None = None
    alpha: float = 1.0
    R: float = 2.0
    t_init: float = 0.1
    warmup_events: int = 1000
    thinning_factor: int = 1
    batch_size: int | None = None
    num_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.gamma is None and self.kernel in DEFAULT_GAMMA:
            object.__setattr__(self, "gamma", DEFAULT_GAMMA[self.kernel])
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self):
        out = []
        if self.kernel not in KERNELS:
            out.append(("kernel", f"must be one of {KERNELS}"))
        if not self.lambda_ref > 0:
            out.append(("lambda_ref", "must be > 0"))
        if self.gamma is not None and not self.gamma > 0:
            out.append(("gamma", "must be > 0"))
        if not self.alpha >= 1:
            out.append(("alpha", "must be >= 1"))
        if not self.R > 1:
            out.append(("R", "must be > 1"))
        if not self.t_init > 0:
            out.append(("t_init", "must be > 0"))
        if self.kernel == "sigma-bps" and self.warmup_events < 2:
            out.append(("warmup_events", "must be >= 2"))
        if self.thinning_factor < 1:
            out.append(("thinning_factor", "must be >= 1"))
        if self.batch_size is not None and self.batch_size < 1:
            out.append(("batch_size", "must be >= 1"))
        if self.num_samples < 1:
            out.append(("num_samples", "must be >= 1"))
        return out


@dataclass(frozen=True)
class Preconditioner:
    """Diagonal ``A`` of the sigma-BPS dynamics ``dw/dt = A * v``."""

    scale: np.ndarray
    source: str = "identity"

    def __post_init__(self):
        if np.any(np.asarray(self.scale) <= 0):
            raise ModelError("preconditioner entries must be > 0")


@dataclass(frozen=True)
class BoomerangReference:
    """Gaussian reference ``N(mean, diag(cov))`` of the Boomerang dynamics."""

    mean: np.ndarray
    cov: np.ndarray

    def __post_init__(self):
        if np.any(np.asarray(self.cov) <= 0):
            raise ModelError("reference covariance entries must be > 0")

    @classmethod
    def from_map(cls, model, w_map, gamma, plan=None, floor=1e-6):
        """Centre at ``w_map`` with ``cov = gamma / diag_hessian_nll(w_map)``."""
        hess = model.diag_hessian_nll(w_map, plan, floor=floor)
        return cls(np.array(w_map, dtype=float), gamma / hess)


# -- flows ----------------------------------------------------------------------


def bps_flow(state, t):
    return PdmpState(state.w + state.v * t, state.v, state.clock + t)


def precond_flow(state, scale, t):
    return PdmpState(state.w + scale * state.v * t, state.v, state.clock + t)


def boomerang_flow(state, ref, t):
    """Rotate ``(w - mean, v)`` by angle ``t`` in every coordinate."""
    c, s = math.cos(t), math.sin(t)
    d = state.w - ref.mean
    return PdmpState(ref.mean + d * c + state.v * s, -d * s + state.v * c, state.clock + t)


# -- bounces ----------------------------------------------------------------------
# Each returns None when the reflecting direction vanishes; callers refresh instead.


def bps_bounce(grad, v):
    n2 = grad @ grad
    if n2 == 0.0:
        return None
    return v - 2.0 * (grad @ v) / n2 * grad


def precond_bounce(grad, v, scale):
    g = scale * grad
    n2 = g @ g
    if n2 == 0.0:
        return None
    return v - 2.0 * (g @ v) / n2 * g


def boomerang_bounce(grad, v, cov):
    sg = cov * grad
    n2 = grad @ sg
    if n2 == 0.0:
        return None
    return v - 2.0 * (grad @ v) / n2 * sg


def refresh_velocity(kernel, rng, dim, gamma=1.0, reference=None):
    """Draw a velocity from the kernel's refresh law.

    ``bps`` uses ``N(0, gamma**2 I)``. ``sigma-bps`` draws ``N(0, I)``: the
    preconditioner multiplies the velocity in the flow, so the effective
    velocity ``A * v`` has per-coordinate standard deviation ``A``, and the
    refresh law stays invariant under the Euclidean reflection of the bounce.
    ``boomerang`` uses ``N(0, diag(reference.cov))``.
    """
    z = rng.standard_normal(dim)
    if kernel == "bps":
        return gamma * z
    if kernel == "sigma-bps":
        return z
    if kernel == "boomerang":
        return np.sqrt(reference.cov) * z
    raise ConfigError([("kernel", f"unknown kernel {kernel!r}")])


# -- internal dynamics used by the event loop ---------------------------------------


class _Linear:
    def __init__(self, kernel, dim, gamma, scale=None):
        self.kernel = kernel
        self.dim = dim
        self.gamma = gamma
        self.scale = scale

    def velocity(self, v):
        return v if self.scale is None else self.scale * v

    def segment(self, w, v):
        dw = self.velocity(v)
        return (lambda t: w + dw * t), (lambda t: dw)

    def flow(self, state, t):
        if self.scale is None:
            return bps_flow(state, t)
        return precond_flow(state, self.scale, t)

    def bounce(self, grad, state):
        if self.scale is None:
            return bps_bounce(grad, state.v)
        return precond_bounce(grad, state.v, self.scale)

    def refresh(self, rng):
        return refresh_velocity(self.kernel, rng, self.dim, self.gamma)


class _Boomerang:
    kernel = "boomerang"

    def __init__(self, ref):
        self.ref = ref
        self.dim = ref.mean.shape[0]

    def segment(self, w, v):
        mean = self.ref.mean
        d = w - mean

        def position(t):
            return mean + d * math.cos(t) + v * math.sin(t)

        def velocity(t):
            return v * math.cos(t) - d * math.sin(t)

        return position, velocity

    def flow(self, state, t):
        return boomerang_flow(state, self.ref, t)

    def bounce(self, grad, state):
        return boomerang_bounce(grad, state.v, self.ref.cov)

    def refresh(self, rng):
        return refresh_velocity("boomerang", rng, self.dim, reference=self.ref)


class _SegmentRate:
    """``t -> grad U(w(t)) . w'(t)`` along one deterministic segment (signed).

    Keeps the gradient of the latest evaluation so the bounce can reuse the
    estimate that produced the accepted event.
    """

    __slots__ = ("model", "plan", "position", "velocity", "last_t", "last_grad")

    def __init__(self, model, plan, position, velocity):
        self.model = model
        self.plan = plan
        self.position = position
        self.velocity = velocity
        self.last_t = None
        self.last_grad = None

    def __call__(self, t):
        g = self.model.grad_minibatch(self.position(t), self.plan)
        self.last_t = t
        self.last_grad = g
        return float(g @ self.velocity(t))


def bps_rate(model, state, plan=None, scale=None):
    """Signed rate ``t -> grad U(w + A v t) . (A v)`` of a linear segment.

    ``scale`` is the sigma-BPS preconditioner ``A`` (identity when ``None``).
    The event rate is the positive part of the returned value.
    """
    position, velocity = _Linear("bps", len(state.w), 1.0, scale).segment(state.w, state.v)
    return _SegmentRate(model, plan, position, velocity)


def boomerang_rate(model, state, ref, plan=None):
    """Signed rate ``t -> grad U(w(t)) . dw/dt`` along the Boomerang rotation."""
    position, velocity = _Boomerang(ref).segment(state.w, state.v)
    return _SegmentRate(model, plan, position, velocity)


def _events(model, dyn, w, cfg, rng, plan, audit, counts):
    """Yield ``(clock, w)`` after every event, forever."""
    state = PdmpState(np.array(w, dtype=float), dyn.refresh(rng), 0.0)
    index = 0
    while True:
        try:
            tau_ref = rng.exponential(1.0 / cfg.lambda_ref)
            position, velocity = dyn.segment(state.w, state.v)
            rate = _SegmentRate(model, plan, position, velocity)
            env = init_envelope(rate, cfg.alpha, cfg.R, cfg.t_init)
            tau = propose_event(env, rate, rng, horizon=tau_ref, audit=audit)
            if tau is not None:
                state = dyn.flow(state, tau)
                grad = rate.last_grad if rate.last_t == tau else model.grad_minibatch(state.w, plan)
                v_new = dyn.bounce(grad, state)
                if v_new is None:
                    v_new = dyn.refresh(rng)
                    counts["refresh"] += 1
                else:
                    counts["bounce"] += 1
            else:
                state = dyn.flow(state, tau_ref)
                v_new = dyn.refresh(rng)
                counts["refresh"] += 1
            state = PdmpState(state.w, v_new, state.clock)
        except (ThinningError, ModelError) as exc:
            raise SamplingError(str(exc), event_index=index, clock=state.clock) from exc
        index += 1
        yield state.clock, state.w


class Welford:
    """Running mean and variance (vector-valued)."""

    def __init__(self):
        self.n = 0
        self.mean = None
        self._m2 = None

    def push(self, x):
        x = np.asarray(x, dtype=float)
        self.n += 1
        if self.n == 1:
            self.mean = x.copy()
            self._m2 = np.zeros_like(x)
            return
        delta = x - self.mean
        self.mean = self.mean + delta / self.n
        self._m2 = self._m2 + delta * (x - self.mean)

    @property
    def variance(self):
        """Unbiased sample variance."""
        if self.n < 2:
            raise ValueError("need at least two observations")
        return self._m2 / (self.n - 1)

    def std(self, floor=STD_FLOOR):
        return np.sqrt(np.maximum(self.variance, floor ** 2))


def welford_warmup(model, cfg, init, plan=None, rng=None):
    """Run ``cfg.warmup_events`` BPS events from ``init`` and return the preconditioner.

    The BPS uses ``cfg.gamma`` as velocity scale; the returned scale is the
    per-coordinate standard deviation of the event positions, floored at 1e-8.
    """
    if cfg.warmup_events < 2:
        raise SamplingError("warm-up needs at least 2 events")
    if rng is None:
        rng = np.random.default_rng(np.random.SeedSequence(cfg.seed).spawn(3)[2])
    dyn = _Linear("bps", model.dim, cfg.gamma)
    stats = Welford()
    counts = {"refresh": 0, "bounce": 0}
    audit = ThinningAudit(R=cfg.R)
    for i, (_, w) in enumerate(_events(model, dyn, init, cfg, rng, plan, audit, counts)):
        stats.push(w)
        if i + 1 >= cfg.warmup_events:
            break
    return Preconditioner(stats.std(), "welford-warmup")


@dataclass
class Chain:
    """Positions recorded at event times, with timestamps and audit counters."""

    clock: np.ndarray
    samples: np.ndarray
    audit: ThinningAudit = field(default_factory=ThinningAudit)
    refresh_count: int = 0
    bounce_count: int = 0
    info: dict = field(default_factory=dict)

    def __len__(self):
        return self.samples.shape[0]

    @property
    def dim(self):
        return self.samples.shape[1]

    @property
    def total_events(self):
        return self.refresh_count + self.bounce_count

    def to_csv(self, path):
        header = ",".join(["clock"] + [f"w_{j}" for j in range(self.dim)])
        data = np.column_stack([self.clock, self.samples])
        np.savetxt(path, data, delimiter=",", header=header, comments="", fmt="%.17g")

    @classmethod
    def from_csv(cls, path):
        with open(path) as fh:
            header = fh.readline().strip().split(",")
        if not header or header[0] != "clock":
            raise ValueError(f"{path}: expected a 'clock,w_0,...' header")
        arr = np.loadtxt(path, delimiter=",", skiprows=1, ndmin=2)
        return cls(arr[:, 0].copy(), arr[:, 1:].copy())

    def metadata(self):
        return {
            "num_samples": len(self),
            "dim": self.dim,
            "refresh_count": self.refresh_count,
            "bounce_count": self.bounce_count,
            "thinning_audit": self.audit.to_dict(),
            **self.info,
        }

    def write_metadata(self, path):
        with open(path, "w") as fh:
            json.dump(self.metadata(), fh, indent=2, default=_json_default)


def _json_default(obj):
    if isinstance(obj, np.ndarray):
        return obj.tolist()
    if isinstance(obj, np.generic):
        return obj.item()
    raise TypeError(f"not JSON serialisable: {type(obj).__name__}")


def run_chain(model, cfg, init=None, reference=None, preconditioner=None):
    """Simulate a PDMP and record ``cfg.num_samples`` event positions.

    ``init`` defaults to a MAP estimate (1000 Adam steps). The sigma-BPS
    preconditioner and the Boomerang reference are built from ``init`` unless
    given. Runs are deterministic in ``cfg.seed``.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng = np.random.default_rng(seeds[0])
    plan = None
    if model.n_data:
        plan = MiniBatchPlan(model.n_data, cfg.batch_size or model.n_data,
                             seed=np.random.default_rng(seeds[1]))
    if init is None:
        init = map_fit(model, iterations=1000, step=1e-2, seed=cfg.seed)
    init = np.array(init, dtype=float)

    info = {"kernel": cfg.kernel, "seed": cfg.seed, "config": asdict(cfg)}
    if cfg.kernel == "bps":
        dyn = _Linear("bps", model.dim, cfg.gamma)
    elif cfg.kernel == "sigma-bps":
        if preconditioner is None:
            preconditioner = welford_warmup(model, cfg, init, plan,
                                            np.random.default_rng(seeds[2]))
        dyn = _Linear("sigma-bps", model.dim, cfg.gamma, preconditioner.scale)
        info["preconditioner"] = preconditioner.scale
    else:
        if reference is None:
            reference = BoomerangReference.from_map(model, init, cfg.gamma, plan)
        dyn = _Boomerang(reference)
        info["reference_cov"] = reference.cov

    audit = ThinningAudit(R=cfg.R)
    counts = {"refresh": 0, "bounce": 0}
    n = cfg.num_samples
    clock = np.empty(n)
    samples = np.empty((n, model.dim))
    k = 0
    for i, (t, w) in enumerate(_events(model, dyn, init, cfg, rng, plan, audit, counts)):
        if (i + 1) % cfg.thinning_factor == 0:
            clock[k] = t
            samples[k] = w
            k += 1
            if k == n:
                break
    return Chain(clock, samples, audit, counts["refresh"], counts["bounce"], info)
