"""Stochastic gradient Langevin dynamics.

The update is ``w' = w - (lr/2) * grad_hat(w) + sqrt(lr) * xi`` with
``xi ~ N(0, I)``. The learning rate is either constant or decays linearly to
zero over the run (``lr_k = lr0 * (1 - k / steps)`` for ``k = 1..steps``).
"""
from dataclasses import dataclass, asdict

import numpy as np

from .errors import ConfigError, ModelError, SamplingError
from .model import MiniBatchPlan, map_fit
from .samplers import Chain

DECAYS = ("linear", "none")


@dataclass(frozen=True)
class SgldConfig:
    """``decay='linear'`` ends the run at ``lr = 0``; ``'none'`` keeps ``lr0``.

    ``num_samples`` iterates are kept, one every ``thinning_factor`` steps. When
    ``steps`` is ``None`` it is ``num_samples * thinning_factor``.
    """

    lr0: float = 1e-4
    decay: str = "linear"
    steps: int | None = None
    batch_size: int | None = None
    thinning_factor: int = 1
    num_samples: int = 2000
    seed: int = 0

    def __post_init__(self):
        if self.steps is None:
            object.__setattr__(self, "steps", self.num_samples * self.thinning_factor)
        problems = self.problems()
        if problems:
            raise ConfigError(problems)

    def problems(self):
        out = []
        if not self.lr0 > 0:
            out.append(("lr0", "must be > 0"))
        if self.decay not in DECAYS:
            out.append(("decay", f"must be one of {DECAYS}"))
        if self.steps < 1:
            out.append(("steps", "must be >= 1"))
        if self.thinning_factor < 1:
            out.append(("thinning_factor", "must be >= 1"))
        if self.num_samples < 1:
            out.append(("num_samples", "must be >= 1"))
        if self.batch_size is not None and self.batch_size < 1:
            out.append(("batch_size", "must be >= 1"))
        return out


def learning_rate(cfg, k):
    """Step size used at step ``k`` (1-based)."""
    if cfg.decay == "none":
        return cfg.lr0
    return cfg.lr0 * (1.0 - k / cfg.steps)


def sgld_step(w, grad_estimate, lr, rng=None, noise=None):
    """One Langevin step; pass ``noise`` to supply ``xi`` directly.

    ``lr = 0`` is allowed and returns ``w`` (the last step of a decayed run).
    """
    if lr < 0:
        raise ValueError(f"learning rate must be >= 0, got {lr}")
    if noise is None:
        noise = rng.standard_normal(np.shape(w))
    with np.errstate(over="ignore", invalid="ignore"):
        w_new = w - 0.5 * lr * grad_estimate + np.sqrt(lr) * noise
    if not np.all(np.isfinite(w_new)):
        raise SamplingError("non-finite SGLD update")
    return w_new


def run_sgld(model, cfg, init=None):
    """Run SGLD for ``cfg.steps`` steps and keep every ``thinning_factor``-th iterate.

    The chain clock holds the step index. Starts from ``init`` or a MAP estimate.
    """
    seeds = np.random.SeedSequence(cfg.seed).spawn(3)
    rng = np.random.default_rng(seeds[0])
    plan = None
    if model.n_data:
        plan = MiniBatchPlan(model.n_data, cfg.batch_size or model.n_data,
                             seed=np.random.default_rng(seeds[1]))
    if init is None:
        init = map_fit(model, iterations=1000, step=1e-2, seed=cfg.seed)
    w = np.array(init, dtype=float)

    n = min(cfg.num_samples, cfg.steps // cfg.thinning_factor)
    clock = np.empty(n)
    samples = np.empty((n, model.dim))
    j = 0
    for k in range(1, cfg.steps + 1):
        try:
            g = model.grad_minibatch(w, plan)
            w = sgld_step(w, g, learning_rate(cfg, k), rng)
        except (SamplingError, ModelError) as exc:
            raise SamplingError(str(exc), event_index=k, clock=float(k)) from exc
        if k % cfg.thinning_factor == 0 and j < n:
            clock[j] = k
            samples[j] = w
            j += 1
    info = {"kernel": "sgld", "seed": cfg.seed, "config": asdict(cfg)}
    return Chain(clock, samples, info=info)
