"""Walk through one dataset: simulate, diagnose, fit and compare with the mixture approximation.

Run with ``python demos/quickstart.py``.
"""
import numpy as np

from nuisreg import bvm, diagnostics, families, posterior, priors
from nuisreg.model import SparseVector

# Mixed-effects groups of size 3 with a random intercept.
eta0 = families.MixedEffects(np.array([[0.5]]), 1.0)
theta0 = SparseVector((0, 3), [1.2, -0.8], 10)
data = families.simulate(eta0, theta0, n=150, p=10, seed=1, m=3)
print(f"{data.n} groups, {data.n_star} observations, p = {data.p}")

rep = diagnostics.diagnose(data.x, [1, 2, 3], s0=2)
print("phi2:", {s: round(v, 3) for s, v in rep.phi2.items()})
print(f"beta-min threshold (up to constants): {rep.beta_min_threshold:.3f}")

# Exact support posterior with the nuisance held at its true value.
spec = priors.SpikeSlabSpec.from_design(data.x, data.n)
post = posterior.enumerate_posterior_laplace_slab(data, spec, eta0, s_max=3)
top = np.argsort(-post.log_weights)[:3]
for i in top:
    print(f"P(S = {post.supports[i]} | data) = {np.exp(post.log_weights[i]):.3f}")

# The same target with the nuisance unknown, by reversible-jump MCMC.
chain = posterior.rjmcmc_sample(data, spec, priors.default_nuisance_prior(eta0), SparseVector.zeros(10),
                                eta0, n_iter=20_000, seed=2, s_max=4)
marg = posterior.support_marginals(chain)
print(f"RJ-MCMC modal support {marg.modal()} with mass {marg.prob(marg.modal()):.3f}")
print("acceptance rates:", {k: round(v, 2) for k, v in chain.acceptance_rates().items()})

# Gaussian-mixture approximation built from the truth.
mix = bvm.build_bvm(data, theta0, eta0, spec, s_max=3)
print(f"TV surrogate, exact posterior vs mixture: {bvm.tv_support_mixture(post, mix):.3f}")
print("95% intervals on S0:\n", bvm.credible_intervals(mix, (0, 3)))
