"""Search POIs on a simulated unprotected AES byte and compare with top-20 SOST.

    python3 demos/unprotected_search.py [seed]
"""

import sys

import numpy as np

from autopoi import DeviceProfile, LeakageModel, SimConfig, simulate
from autopoi.eda import EDAConfig, EvalConfig, Evaluator, run_eda
from autopoi.poi import sost, top_k_select
from autopoi.template import profiling_labels

LEAKS = (60, 150, 240, 330, 420)


def main(seed=0):
    dev = DeviceProfile(noise_sigma=16.0, leak_positions_value=LEAKS, baseline_seed=7)
    key = np.random.default_rng(seed).integers(0, 256, 16, dtype=np.uint8).tobytes()
    prof = simulate(dev, SimConfig(n_traces=5000, n_samples=500, seed=1000 + seed))
    att = simulate(dev, SimConfig(n_traces=300, n_samples=500, seed=2000 + seed, fixed_key=key))
    model = LeakageModel("hw-sbox", 0)

    g = sost(prof, profiling_labels(prof, model))
    ecfg = EvalConfig(correction_factor=10)
    ev = Evaluator(prof, [att], model, ecfg)

    base = top_k_select(g, 20)
    ev.evaluate(base)
    print(f"top-20 SOST: ge {base.cached_ge[0]:3d}  Eval {base.cached_eval:.5E}  "
          f"leaks covered {sorted(set(base.poi) & set(LEAKS))}")

    cfg = EDAConfig(population_size=20, n_iterations=10, seed=seed, init="graphic", init_p=0.25)
    for rec in run_eda(cfg, ecfg, prof, [att], model, graphic=g, evaluator=ev):
        b = rec.best
        print(f"iteration {rec.iteration:2d}: ge {b.cached_ge[0]:3d}  n_POI {b.n_poi:3d}  "
              f"Eval {b.cached_eval:.5E}")
    print("final POIs:", b.poi.tolist())
    print("true leaks:", list(LEAKS))


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
