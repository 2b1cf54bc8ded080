"""Profile on one device, attack four clones that differ in gain, offset and noise.

    python3 demos/portability.py [seed]
"""

import sys

import numpy as np

from autopoi import DeviceProfile, LeakageModel, SimConfig, simulate
from autopoi.eda import EDAConfig, EvalConfig, run_eda
from autopoi.poi import sost
from autopoi.sim import make_clone_family
from autopoi.template import profiling_labels


def main(seed=0):
    base = DeviceProfile(noise_sigma=12.0, leak_positions_value=(50, 150, 250, 350, 450),
                         baseline_seed=11)
    family = make_clone_family(base, 4, variation_seed=5, gain_jitter=0.15, offset_jitter=0.1,
                               noise_jitter=0.2)
    for i, d in enumerate(family):
        print(f"D{i + 1}: gain {d.gain:.3f}  offset {d.offset:+.3f}  noise {d.noise_sigma:.2f}")

    prof = simulate(family[0], SimConfig(n_traces=10000, n_samples=500, seed=1000 + seed))
    atts = []
    for i, d in enumerate(family):
        key = np.random.default_rng([seed, i]).integers(0, 256, 16, dtype=np.uint8).tobytes()
        atts.append(simulate(d, SimConfig(n_traces=100, n_samples=500, seed=3000 + 10 * seed + i,
                                          fixed_key=key)))
    model = LeakageModel("hw-sbox", 0)
    g = sost(prof, profiling_labels(prof, model))

    cfg = EDAConfig(population_size=50, n_iterations=20, seed=seed, init="graphic", init_p=0.5)
    ecfg = EvalConfig(correction_factor=10, ge_aggregation="product")
    for rec in run_eda(cfg, ecfg, prof, atts, model, graphic=g):
        b = rec.best
        print(f"iteration {rec.iteration:2d}: ge {b.cached_ge}  n_POI {b.n_poi:3d}  "
              f"Eval {b.cached_eval:.5E}")


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 0)
