"""Cross-validated choice of epoch count and weight bound under a budget.

Ties in accuracy go to the configuration with the smaller active-IR
sensitivity, which needs less noise. Run with
``python3 demos/tune_epochs_and_clip.py``.
"""
from hdpvfl.data import benchmark_pair
from hdpvfl.harness import BENCHMARK_DEFAULTS, ExperimentConfig, cross_validate, tune

pair = benchmark_pair("breast")
cfg = ExperimentConfig(h=BENCHMARK_DEFAULTS, epsilon_grid=(1.0,), folds=5)

# %% Grid of 5-fold accuracies at epsilon=1.
rows = cross_validate(cfg, pair, [5, 10, 15], [0.1, 0.5, 1.0], epsilon=1.0)
print(f"{'e':>3}{'k':>6}{'cv acc':>9}{'active sens':>13}")
for r in rows:
    print(f"{r['epochs']:>3}{r['clip_norm']:>6}{r['cv_accuracy']:>9.3f}{r['delta2_ir_a']:>13.3f}")

# %% The selected pair, ready to pass to training.
best = tune(cfg, [5, 10, 15], [0.1, 0.5, 1.0], pair)
print(f"\nselected epochs={best.epochs} clip_norm={best.clip_norm}")
