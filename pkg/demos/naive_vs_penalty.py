"""
Why the doubled sup-norm is not a usable penalty
================================================

At a point where the running maximum of |x - y| is about to switch
between the past and the present, the one-step quotients of the naive
doubled sup-norm are not affine in the extension velocity. The quotients
of V^L are, up to O(step).
"""

# %%
from cihj.suite import naive_exhibit, switch_point

p, anchor = switch_point()
print("point at t =", p.time, " anchor at tau =", anchor.time)

# %%
res = naive_exhibit(steps_in_intervals=(16, 8, 4, 2, 1))
for s, a, b in zip(res.steps, res.naive_residuals, res.penalty_residuals):
    print(f"step {s:.5f}   naive residual {a:.5f}   V^L residual {b:.5f}")
