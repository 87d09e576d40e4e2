"""
Single bubble seeded with the modulation-law velocity, evolved until the
grid no longer resolves it.  Exploratory: the fitted exponent of
lambda_hat against 1/t is reported, not asserted.
"""
from bubbletree import wavesim

rep = wavesim.collapse_experiment({"n": 1, "beta": 2.0})
print(f"records: {len(rep.t)}  stop: {rep.stop_reason}")
print(f"lambda_hat: {rep.lambda_hat[0]:.6g} -> {rep.lambda_hat[-1]:.6g}")
print(f"fitted exponent: {rep.exponent:.4f}")
print(f"lambda_hat monotone: {rep.monotone_scale}  cone energy monotone: {rep.monotone_energy}")
