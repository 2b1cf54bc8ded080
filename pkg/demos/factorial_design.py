"""Which search setting matters most? A 2^3 design over CF, iterations and R.

    python3 demos/factorial_design.py
"""

import numpy as np

from autopoi import DeviceProfile, LeakageModel, SimConfig, simulate
from autopoi.doe import FactorSpec, full_factorial_plan, run_doe
from autopoi.eda import EDAConfig, EvalConfig
from autopoi.poi import sost
from autopoi.template import profiling_labels

FACTORS = [FactorSpec("A", 1, 10, "eval.correction_factor"),
           FactorSpec("B", 5, 10, "eda.n_iterations"),
           FactorSpec("C", 10, 20, "eda.population_size")]


def main():
    dev = DeviceProfile(noise_sigma=8.0, leak_positions_value=(30, 90, 150), baseline_seed=2)
    key = np.random.default_rng(1).integers(0, 256, 16, dtype=np.uint8).tobytes()
    prof = simulate(dev, SimConfig(n_traces=3000, n_samples=200, seed=1))
    att = simulate(dev, SimConfig(n_traces=100, n_samples=200, seed=2, fixed_key=key))
    model = LeakageModel("hw-sbox", 0)
    g = sost(prof, profiling_labels(prof, model))

    plan = full_factorial_plan(FACTORS, EDAConfig(init="graphic", init_p=0.25), EvalConfig())
    table, runs = run_doe(plan, prof, [att], model, graphic=g)
    print("exp  CF  iters  R   n_POI  ge   Eval")
    for r in runs:
        a, b, c = r.config.levels
        print(f"{r.config.index:3d} {a:4.0f} {b:6.0f} {c:4.0f} {r.n_poi:6d} {r.ge[0]:4d}  {r.eval:.5E}")
    print()
    for name, v in table.effects.items():
        print(f"effect {name:>3}: {v:+.5E}")


if __name__ == "__main__":
    main()
