"""How the hyperparameters drive sensitivity, noise and the utility bound.

Every number here is closed form; nothing is trained. Run with
``python3 demos/sensitivity_bounds.py``.
"""
from dataclasses import replace

from hdpvfl.glm import least_squares, logistic
from hdpvfl.harness import BENCHMARK_DEFAULTS, bound_report

# %% Full-batch Breast setting: n=455 training rows after the 80/20 holdout.
h = BENCHMARK_DEFAULTS.resolve(455)
print(bound_report(h, logistic()).format())

# %% More epochs means more released IRs, so both sensitivities grow.
print(f"\n{'epochs':>6}{'passive sens':>14}{'active sens':>13}{'sigma_a':>10}")
for epochs in (5, 10, 15):
    rep = bound_report(replace(h, epochs=epochs), logistic())
    print(f"{epochs:>6}{rep.delta2_ir_b:>14.4f}{rep.delta2_ir_a:>13.4f}{rep.sigma_ir_a:>10.3f}")

# %% The weight bound k scales the passive sensitivity, but the active one is
# dominated by the label term and barely moves.
print(f"\n{'k':>6}{'passive sens':>14}{'active sens':>13}")
for k in (0.1, 0.5, 1.0):
    rep = bound_report(replace(h, clip_norm=k), logistic())
    print(f"{k:>6}{rep.delta2_ir_b:>14.4f}{rep.delta2_ir_a:>13.4f}")

# %% Smoother losses with larger curvature constants pay more.
for spec in (logistic(), least_squares()):
    rep = bound_report(h, spec)
    print(f"\n{spec.name}: gradient error {rep.gradient_error:.4f}, excess risk {rep.utility:.4f}")
