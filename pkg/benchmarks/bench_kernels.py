"""Time the compiled kernels against the numpy fallback.

    python benchmarks/bench_kernels.py [--sizes 100,10000,1000000] [--repeat 20]
"""
from __future__ import annotations

import argparse
import importlib
import timeit

import numpy as np


def _cases(n: int, rng: np.random.Generator):
    conf = np.round(rng.random(n), 3)  # rounding forces tie groups
    pos = rng.random(n) < 0.8
    asc = np.argsort(conf, kind="stable")
    desc = np.argsort(-conf, kind="stable")
    p, g, v = rng.standard_normal((3, n))
    return {
        "selective_risks": lambda k: k.selective_risks((~pos[desc]).astype(np.float64)),
        "auroc_sorted": lambda k: k.auroc_sorted(conf[asc], pos[asc]),
        "fpr_at_tpr_sorted": lambda k: k.fpr_at_tpr_sorted(conf[desc], pos[desc], 0.95),
        "sgd_update": lambda k: k.sgd_update(p.copy(), g, v.copy(), 0.1, 0.9, 5e-4),
        "swa_accumulate": lambda k: k.swa_accumulate(p.copy(), g, 7),
    }


def main(argv=None) -> None:
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="100,10000,1000000")
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args(argv)

    backends = {"numpy": importlib.import_module("surelab._kernels_py")}
    try:
        backends["cython"] = importlib.import_module("surelab._kernels")
    except ImportError:
        print("compiled extension not built; timing numpy only")

    rng = np.random.default_rng(0)
    print(f"{'kernel':<20}{'n':>9}" + "".join(f"{b + ' (us)':>16}" for b in backends) + f"{'speedup':>10}")
    for n in (int(s) for s in args.sizes.split(",")):
        for name, fn in _cases(n, rng).items():
            times = {}
            for b, mod in backends.items():
                t = timeit.repeat(lambda: fn(mod), number=1, repeat=args.repeat)
                times[b] = min(t) * 1e6
            speed = times["numpy"] / times["cython"] if "cython" in times else float("nan")
            print(f"{name:<20}{n:>9}" + "".join(f"{times[b]:>16.1f}" for b in backends) + f"{speed:>9.2f}x")


if __name__ == "__main__":
    main()
