"""First-order masking hides the Sbox output from SOST but not from the search.

The template attack marginalizes over the output mask, so a POI set needs
both a masked-value sample and a mask sample to work. SOST on the unmasked
label sees neither.

    python3 demos/masked_search.py [seed]
"""

import sys

import numpy as np

from autopoi import DeviceProfile, LeakageModel, SimConfig, simulate
from autopoi.eda import EDAConfig, EvalConfig, Evaluator, run_eda
from autopoi.poi import sost, top_k_select
from autopoi.template import profiling_labels

VALUE, MASK = (40, 120), (70, 160)


def main(seed=1):
    dev = DeviceProfile(noise_sigma=1.0, leak_positions_value=VALUE, leak_positions_mask=MASK,
                        baseline_seed=3)
    key = np.random.default_rng(seed).integers(0, 256, 16, dtype=np.uint8).tobytes()
    prof = simulate(dev, SimConfig("masked", 20000, n_samples=200, seed=1000 + seed))
    att = simulate(dev, SimConfig("masked", 500, n_samples=200, seed=2000 + seed, fixed_key=key))
    model = LeakageModel("hw-sbox", 0)

    g = sost(prof, profiling_labels(prof, model))
    off = np.delete(g.values, VALUE + MASK)
    print(f"SOST max / off-leak median: {g.values.max() / np.median(off):.2f}  "
          f"(argmax {int(np.argmax(g.values))}, leaks at {VALUE + MASK})")

    ecfg = EvalConfig(correction_factor=10, attack_mode="mask-marginal")
    ev = Evaluator(prof, [att], model, ecfg)
    base = top_k_select(g, 20)
    ev.evaluate(base)
    print(f"top-20 SOST: ge {base.cached_ge[0]}")

    cfg = EDAConfig(population_size=50, n_iterations=20, seed=seed, init_p=0.1)
    recs = run_eda(cfg, ecfg, prof, [att], model, evaluator=ev)
    for rec in recs[::4] + [recs[-1]]:
        print(f"iteration {rec.iteration:2d}: ge {rec.best.cached_ge[0]:3d}  n_POI {rec.best.n_poi}")
    best = recs[-1].best
    print("final POIs:", best.poi.tolist(), " value/mask leaks:", VALUE, MASK)


if __name__ == "__main__":
    main(int(sys.argv[1]) if len(sys.argv) > 1 else 1)
