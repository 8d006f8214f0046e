# %% [markdown]
# # Comparing samplers on a small regression network
#
# A one-hidden-layer network is fitted to noisy 1-D data. Each sampler starts
# from the same MAP estimate; we compare how far the chains move (ESS on the
# first principal component) and how predictive variance behaves away from
# the data.

# %%
import numpy as np

from pdmpbnn import (Model, ModelSpec, SamplerConfig, SgldConfig, ess,
                     first_principal_component, map_fit, predictive_posterior, run_chain,
                     run_sgld, synth_regression)

data = synth_regression(0, 100)
gauss_prior = Model(ModelSpec("mlp-regression"), data)
flat_prior = Model(ModelSpec("mlp-regression", prior="flat"), data)
w0 = map_fit(gauss_prior, iterations=10000, step=1e-3, seed=0)
print(f"{gauss_prior.dim} parameters, MAP potential {gauss_prior.potential(w0):.2f}")

# %% [markdown]
# ## Chains
#
# The Boomerang reference is built from the diagonal Hessian at the MAP, so it
# already carries a Gaussian approximation of the posterior; the flat-prior
# model avoids counting the prior twice.

# %%
chains = {
    "bps": (gauss_prior, run_chain(gauss_prior, SamplerConfig(kernel="bps", num_samples=1000),
                                   init=w0)),
    "sigma-bps": (gauss_prior, run_chain(gauss_prior, SamplerConfig(kernel="sigma-bps",
                                                                    num_samples=1000), init=w0)),
    "boomerang": (flat_prior, run_chain(flat_prior, SamplerConfig(kernel="boomerang",
                                                                  num_samples=1000), init=w0)),
    "sgld": (gauss_prior, run_sgld(gauss_prior, SgldConfig(lr0=1e-5, num_samples=1000),
                                   init=w0)),
}

# %% [markdown]
# ## Mixing and predictive spread

# %%
inside, outside = np.linspace(-1, 1, 50), np.array([-2.0, 2.0])
print(f"{'method':10s} {'ESS pc1':>8s} {'var in':>10s} {'var out':>10s} {'ratio':>7s}")
for name, (m, c) in chains.items():
    e = ess(first_principal_component(c.samples)[1])
    vin = predictive_posterior(m, c.samples, inside).variance.mean()
    vout = predictive_posterior(m, c.samples, outside).variance.mean()
    print(f"{name:10s} {e:8.1f} {vin:10.2e} {vout:10.2e} {vout / vin:7.2f}")

# %% [markdown]
# ## Thinning cost
#
# The audit counts how many envelope proposals each accepted event costs and
# how often the interpolated envelope fell below the true rate.

# %%
for name in ("bps", "sigma-bps", "boomerang"):
    a = chains[name][1].audit
    print(f"{name:10s} proposals/event {a.proposals_per_event:.3f}  "
          f"ratio>1 {a.bound_violations}/{a.proposals}")
