"""
Doubling of variables on a desk-scale family
============================================

Solve a delay-free control problem with state cost 4 x(t) by backward
induction, perturb one interior entry of the value table, and replay the
comparison argument over a decreasing (eps, delta) schedule.
"""

# %%
from cihj import GridSpec, PathFamily
from cihj.control import BellmanData, bellman_hamiltonian, dpp_residual, solve_dp
from cihj.doubling import comparison_verdict

fam = PathFamily(GridSpec(h=0.5, T=0.75, m_past=2, m_fut=3), 1.0, [-1, 0, 1], [0])
data = BellmanData(
    ((-1.0,), (1.0,)),
    lambda k, x, u: u,
    lambda k, x, u: 4.0 * float(x.at(k)[0]),
    lambda x: float(x.at(x.spec.m_fut)[0]),
)
value = solve_dp(data, fam)
print(len(fam), "paths, DPP residual", dpp_residual(value, data))

# %%
H = bellman_hamiltonian(data)
schedule = [(2.0**-k, 2.0**-k) for k in range(0, 13, 2)]
rep = comparison_verdict(value, value, fam, H, schedule)
print("value against itself:", rep.verdict, " b =", rep.b)

# %%
bumped = value.perturbed(1, fam.paths[100], 0.5)
rep = comparison_verdict(bumped, value, fam, H, schedule)
print("perturbed:", rep.verdict, f" b = {rep.b}  alpha = {rep.alpha:.4f}  eps_* = {rep.eps_star:.4g}")
for pt in rep.points:
    m = pt.maximizer
    gap = "-" if pt.hamiltonian_gap is None else f"{pt.hamiltonian_gap:.4f}"
    print(f"eps {pt.epsilon:<10g} t={m.x.time:.3f} tau={m.y.time:.3f} gap {gap:>8}  flag {pt.gap_flag}  margins ok {pt.estimates_ok}")
for line in rep.diagnostics:
    print(" ", line)
