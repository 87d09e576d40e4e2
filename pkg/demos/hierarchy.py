"""
Three-level scale hierarchy with beta = 2 down to t = 1e-8.

lambda_1 overflows double precision almost at once and log lambda_1 does
too below t ~ 1e-5, so the logs are printed from their mpmath values.
"""
import mpmath
import numpy as np

from bubbletree import modulation

h = modulation.solve_hierarchy(3, 2.0, t0=1e-2, t_min=1e-8)
ratios = modulation.growth_ratios(h)
print("      t      log l1        log l2     log l3    tau1*lbar2/l1  log l1/int l2")
for i in np.linspace(0, len(h.t) - 1, 9).astype(int):
    logs = [mpmath.nstr(lvl.alpha[i], 5) for lvl in h.levels]
    print(f"{h.t[i]:9.2e}  {logs[0]:>12}  {logs[1]:>10}  {logs[2]:>8}"
          f"  {ratios['tau'][i]:13.6f}  {ratios['literal'][i]:13.6f}")
print(f"4/sqrt(pi) = {4 / np.sqrt(np.pi):.6f}")
