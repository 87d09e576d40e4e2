"""
Exact identities of the bubble Q(R) = 2 arctan R^2.

Prints the two explicit integrals, the spectral scalars of phi0 and the
Wronskian of the zero mode with its second solution.
"""
import numpy as np

from bubbletree import corrector, profiles, spectral

I1, I2 = corrector.explicit_integrals()
print(f"int Phi^2 R dR            = {I1:.15f}   (2 pi = {2 * np.pi:.15f})")
print(f"int (1 - cos 2Q) Phi R dR = {I2:.15f}   (4)")

ts = spectral.transference_scalars()
print(f"||phi0||^2      = {ts.norm_sq:.12f}")
print(f"<r phi0', phi0> = {ts.rdr_inner:.12f}")
print(f"K_pp            = {ts.k_pp:.12f}")

R = np.geomspace(1e-3, 1e3, 7)
W = R * profiles.wronskian(profiles.second_solution, profiles.zero_mode, R)
for r, w in zip(R, W):
    print(f"R = {r:8.3g}   R W[Theta, Phi] = {w:.15f}")
