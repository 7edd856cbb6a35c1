# %% [markdown]
# # Error-spending boundaries
#
# Five equally spaced looks, power-family spending with exponent 2 for both
# errors, futility boundaries that are not binding.

# %%
import numpy as np

from jmgst import gst
from jmgst.params import TrialDesign

design = TrialDesign()
fr = np.asarray(design.planned_fractions())
imax = gst.imax_for_power(fr, design.alpha, design.beta, design.eta_alt)
fixed = gst.imax_for_power([1.0], design.alpha, design.beta, design.eta_alt)
print(f"I_max {imax:.2f}, inflation over a single look {imax / fixed:.3f}")

bnd = gst.canonical_boundaries(fr * imax, design.alpha, design.beta, design.eta_alt, imax)
for row in bnd.to_rows():
    print({k: round(v, 4) if isinstance(v, float) else v for k, v in row.items()})

# %% [markdown]
# Type 1 error ignores the futility rule; power honours it.

# %%
up0, _ = gst.crossing_probabilities(bnd, 0.0, use_futility=False)
up1, lo1 = gst.crossing_probabilities(bnd, -design.eta_alt)
print("alpha spent per look", np.round(up0, 5), "total", up0.sum())
print("power", up1.sum(), " P(stop for futility)", lo1.sum())

# %% [markdown]
# Method 2 builds boundaries from a supplied covariance by multivariate normal
# rectangle probabilities.  Fed the canonical covariance it recovers method 1.

# %%
cov = 1.0 / np.maximum.outer(fr * imax, fr * imax)
m2 = gst.method2_boundaries(cov, design.alpha, design.beta, design.eta_alt, imax, 2.0, K=5, upto=5)
print("method 1 b", np.round(bnd.b, 4))
print("method 2 b", np.round(m2.b, 4))

# %% [markdown]
# Method 3 re-weights the estimates into a minimum-variance combination.  With
# canonical covariance every weight falls on the latest look.

# %%
_, var, w = gst.method3_combine(np.zeros(5), cov)
print("weights", np.round(w, 6), "variance", var, "vs 1/I_K", 1 / imax)
