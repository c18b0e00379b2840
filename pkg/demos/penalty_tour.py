"""
The penalty functional on a small path family
=============================================

Evaluates V^L and its ci-derivatives on a few hand-made paths, then runs the
exhaustive property suite on a 729-path family.
"""

# %%
import numpy as np

from cihj import GridPath, GridSpec, PathFamily, vL
from cihj.suite import penalty_suite

spec = GridSpec(h=1.0, T=1.0, m_past=1, m_fut=1)
x = GridPath(spec, np.full((3, 1), 2.0))
y = GridPath(spec, np.zeros((3, 1)))

# %%
# x = 2 at t = 1 against y = 0 at tau = 0: V1 = 11, V^L = 22
e = vL(1, x, 0, y, 1.0)
print("V^L =", e.V, " dt =", e.P, " grad =", e.Q)

# %%
# swapping the pairs keeps V and flips the sign of both derivatives
f = vL(0, y, 1, x, 1.0)
print("swapped: V^L =", f.V, " dt =", f.P, " grad =", f.Q)

# %%
# every quadruple of a 729-path family, checked against all properties
fam = PathFamily(GridSpec(h=1.0, T=1.0, m_past=2, m_fut=4), 1.0, [-1, 0, 1], [0])
res = penalty_suite(fam)
print(len(fam), "paths,", res.quadruples, "quadruples")
print("violations:", res.violations)
print("max two-form relative error:", res.max_two_form_rel)
