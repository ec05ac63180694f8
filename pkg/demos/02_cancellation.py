"""The cancellation phenomenon for weighted sums at H = 0.3.

Each single weighted sum sum_k z_{t_k} h^i_k converges at rate n^{-2H}. The
compensated sum over i = 1..ell converges at the faster rate n^{-(H+1/2)}.
The quick run uses 200 paths (about 10 s); ``--full`` uses the acceptance
config (2000 paths, about a minute).
"""

from _common import config, demo_args

from fracsde.harness import check_result, run_experiment

args = demo_args(__doc__)
cfg = config("cancellation_h030.json", "cancellation", args.full, quick_paths=200)
res = run_experiment(cfg)

# # L2 errors against the fine-grid integral

series = list(res.fits)
print("n     " + "  ".join(f"{s:>12}" for s in series))
for j, n in enumerate(cfg.n_list):
    print(f"{n:<5} " + "  ".join(f"{res.fits[s].l2_errors[j]:12.3e}" for s in series))

# # Fitted decay exponents
#
# Expect about 2H = 0.6 for the single sums and H + 1/2 = 0.8 for the
# compensated one.

for s, fit in res.fits.items():
    lo, hi = fit.slope_ci_95
    print(f"{s:>12}: slope {fit.slope:.3f}  95% CI [{lo:.3f}, {hi:.3f}]  r2 {fit.r2:.4f}")

for name, ok, msg in check_result(res):
    print(("PASS " if ok else "FAIL ") + msg)
