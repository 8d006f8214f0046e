# %% [markdown]
# # Samplers on a Gaussian target
#
# A standard Gaussian is the simplest target where every answer is known. We
# run the three kernels, look at the thinning audit and check how the event
# positions are spread.

# %%
import numpy as np

from pdmpbnn import (BoomerangReference, Model, ModelSpec, SamplerConfig, bps_rate,
                     PdmpState, init_envelope, propose_event, run_chain)

target = Model(ModelSpec("gaussian-target", dim=2))

# %% [markdown]
# ## Event rates are linear in time
#
# Along a straight BPS trajectory the rate `grad U . v` of a Gaussian grows
# linearly, so the interpolated envelope matches it and every proposal is
# accepted with ratio 1.

# %%
rng = np.random.default_rng(0)
state = PdmpState(np.array([1.0, -0.5]), np.array([0.3, 1.0]))
rate = bps_rate(target, state)
trace = []
t = propose_event(init_envelope(rate), rate, rng, trace=trace)
print(f"event at t={t:.4f}; ratios {[round(p.ratio, 12) for p in trace]}")

# %% [markdown]
# ## Three kernels
#
# Positions are recorded at events. Bounces happen more often far from the
# mode, so a large refresh rate keeps the recorded positions close to the
# target. For the Boomerang the reference Gaussian carries most of the
# precision and the potential keeps the rest, so the pair targets N(0, I).

# %%
chains = {}
for kernel in ("bps", "sigma-bps"):
    cfg = SamplerConfig(kernel=kernel, gamma=1.0, lambda_ref=5.0, thinning_factor=10,
                        num_samples=10000, seed=1)
    chains[kernel] = run_chain(target, cfg, init=np.zeros(2))

residual = Model(ModelSpec("gaussian-target", dim=2, prior_precision=0.1))
ref = BoomerangReference(np.zeros(2), np.full(2, 1 / 0.9))
chains["boomerang"] = run_chain(residual, SamplerConfig(kernel="boomerang", num_samples=10000,
                                                        seed=1),
                                init=np.zeros(2), reference=ref)

for name, c in chains.items():
    a = c.audit
    print(f"{name:10s} mean {np.round(c.samples.mean(0), 3)}  var {np.round(c.samples.var(0), 3)}"
          f"  bounces {c.bounce_count}  refreshes {c.refresh_count}"
          f"  proposals/event {a.proposals_per_event:.3f}")

# %% [markdown]
# ## Event-point weighting
#
# With a small refresh rate, recorded positions over-weight the tails. In one
# dimension the recorded variance is `(2 c + lam) / (c + lam)` with
# `c = sqrt(2/pi) gamma / sqrt(2 pi)`; the run below lands close to it.

# %%
one = Model(ModelSpec("gaussian-target", dim=1))
for lam in (0.1, 1.0, 10.0):
    c = run_chain(one, SamplerConfig(kernel="bps", gamma=1.0, lambda_ref=lam,
                                     num_samples=20000, seed=2), init=np.zeros(1))
    k = np.sqrt(2 / np.pi) / np.sqrt(2 * np.pi)
    print(f"lambda_ref={lam:5.1f}: recorded var {c.samples.var():.3f}, "
          f"predicted {(2 * k + lam) / (k + lam):.3f}")
