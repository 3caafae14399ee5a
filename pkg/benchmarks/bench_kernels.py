"""Time the numba and numpy paths of the integer kernels on synthetic scenes.

    python3 benchmarks/bench_kernels.py [--scenes 200] [--size 64] [--repeat 5]

Each kernel runs once untimed (numba compiles on first call), then the best
of ``--repeat`` passes over all scenes is reported. Outputs are checked for
equality between backends before timing.
"""
import argparse
import time

import numpy as np

from zs3 import kernels
from zs3.embeddings import fixture_catalog, fixture_path, load_embeddings
from zs3.scene_data import WorldConfig, build_world, render_scene


def make_scenes(n, size, seed):
    emb = load_embeddings(fixture_path(), fixture_catalog())
    cfg = WorldConfig(height=size, width=size, max_rect=min(28, size // 2), min_rect=min(10, size // 4),
                      min_region=min(40, size))
    world = build_world(emb, cfg, seed)
    return [render_scene(world, list(range(1, 10)), seed * 10_000 + i) for i in range(n)]


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--scenes", type=int, default=200)
    ap.add_argument("--size", type=int, default=64)
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--seed", type=int, default=0)
    args = ap.parse_args(argv)

    scenes = make_scenes(args.scenes, args.size, args.seed)
    rng = np.random.default_rng(args.seed)
    preds = [rng.integers(0, 10, size=s.shape) for s in scenes]
    backends = {
        "numba": (kernels.label_components_numba, kernels.component_edges_numba,
                  kernels.confusion_counts_numba),
        "numpy": (kernels.label_components_numpy, kernels.component_edges_numpy,
                  kernels.confusion_counts_numpy),
    }

    results = {}
    for name, (label, edges, conf) in backends.items():
        comps = [label(s) for s in scenes]  # warm-up and reference output
        out = {
            "components": comps,
            "edges": [edges(c, n) for c, n in comps],
            "confusion": [conf(s, p, 10) for s, p in zip(scenes, preds)],
        }
        timing = {
            "components": best_of(lambda: [label(s) for s in scenes], args.repeat),
            "edges": best_of(lambda: [edges(c, n) for c, n in comps], args.repeat),
            "confusion": best_of(lambda: [conf(s, p, 10) for s, p in zip(scenes, preds)], args.repeat),
        }
        results[name] = (out, timing)

    a, b = results["numba"][0], results["numpy"][0]
    for key in a:
        for x, y in zip(a[key], b[key]):
            if key == "components":
                assert x[1] == y[1] and np.array_equal(x[0], y[0]), "backends disagree on components"
            else:
                assert np.array_equal(x, y), f"backends disagree on {key}"

    print(f"{args.scenes} scenes of {args.size}x{args.size}, best of {args.repeat}; active backend: {kernels.BACKEND}")
    print(f"{'kernel':<12} {'numba ms':>10} {'numpy ms':>10} {'speedup':>8}")
    for key in ("components", "edges", "confusion"):
        tn = results["numba"][1][key] * 1e3
        tp = results["numpy"][1][key] * 1e3
        print(f"{key:<12} {tn:>10.2f} {tp:>10.2f} {tp / tn:>7.1f}x")


if __name__ == "__main__":
    main()
