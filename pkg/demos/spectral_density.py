"""
Scattering coefficient a(xi) of the half-line operator and the spectral
density rho'(xi) = 1/(4 pi |a|^2) on [1e-2, 1e2].
"""
import numpy as np

from bubbletree import spectral

xi = np.logspace(-2, 2, 9)
tab = spectral.spectral_table(xi, check=False)
band = tab["a_abs"] * spectral.bracket(xi)
print("      xi       |a|      |a|<xi>     rho'")
for x, a, b, r in zip(xi, tab["a_abs"], band, tab["rho_prime"]):
    print(f"{x:9.3g}  {a:9.5g}  {b:9.5g}  {r:10.5g}")
print(f"band max/min = {band.max() / band.min():.4f}")
