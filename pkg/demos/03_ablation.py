"""
Ablation over run modes
=======================

The same training loop with steps switched off: a plain threshold split,
class-balanced selection only, and the full pipeline with anchor-based
correction.  Three seeds each; takes about half a minute.
"""
import numpy as np

from anchornll import pipeline
from anchornll.config import RunConfig

seeds = (0, 1, 2)
rows = []
for mode in ("baseline", "easy-only", "full"):
    accs = [pipeline.run_experiment(RunConfig(seed=s, mode=mode)).summary["best_test_acc"]
            for s in seeds]
    rows.append((mode, np.mean(accs), np.std(accs)))

warm = [pipeline.run_experiment(RunConfig(seed=s).replace(**{"train.outer_iterations": 0}))
        .summary["best_test_acc"] for s in seeds]
print(f"{'warm-up only':12s} {np.mean(warm):.4f} +- {np.std(warm):.4f}")
for mode, mean, std in rows:
    print(f"{mode:12s} {mean:.4f} +- {std:.4f}")
