"""Compare the compiled and pure-Python kernel backends.

    python benchmarks/bench_kernels.py [--repeat 5]

Times full-batch dictionary descent on the K=8 counterexample family and the
MLP loss/gradient on a sampled batch, checks both backends agree, and prints
one row per (kernel, backend).
"""
import argparse
import time

import numpy as np

from satlab import kernels, rng
from satlab.ensembles import skewed_gence_weights
from satlab.mixtures import MixtureSpec, gen_counterexample_family, mix, sample
from satlab.models import ArchSpec, flatten_params, init_model


def best_of(fn, repeat):
    times, out = [], None
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def dict_case(steps):
    d = mix(MixtureSpec(tuple(gen_counterexample_family(8)), skewed_gence_weights(8)))
    g0 = 1.0 + rng.uniform_range(7, 8, -0.1, 0.1)
    gm0 = rng.uniform_range(8, 8, -0.1, 0.1)
    return lambda: kernels.dict_descent(d.X, d.y, d.mass, g0, gm0, 0.0, True, steps, 0.5, 0.0025,
                                        0.0075, 0, 100)


def mlp_case(n, hidden):
    arch = ArchSpec(kind="mlp", input_dim=8, hidden=hidden)
    model = init_model(arch, 3)
    d = MixtureSpec(tuple(gen_counterexample_family(8)), skewed_gence_weights(8))
    batch = sample(d, n, 11)
    w = np.full(n, 1.0 / n)
    p = flatten_params(model)
    widths = np.array(model.extractor.layer_widths, dtype=np.int64)
    return lambda: kernels.mlp_loss_grad(p, widths, 0, True, batch.X, batch.y, w, 0)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--steps", type=int, default=4000)
    ap.add_argument("--batch", type=int, default=2048)
    args = ap.parse_args()

    backends = ["python"] + (["cython"] if kernels.compiled_available() else [])
    if len(backends) == 1:
        print("compiled backend not built; timing the pure-Python kernels only")
    cases = {
        f"dict_descent K=8 steps={args.steps}": dict_case(args.steps),
        "mlp_loss_grad n=16 hidden=(8,)": mlp_case(16, (8,)),
        f"mlp_loss_grad n={args.batch} hidden=(32,32)": mlp_case(args.batch, (32, 32)),
    }
    print(f"{'kernel':44s} {'backend':9s} {'seconds':>10s} {'speedup':>8s}")
    for name, fn in cases.items():
        res = {}
        for b in backends:
            with kernels.use_backend(b):
                res[b] = best_of(fn, args.repeat)
        base = res["python"][0]
        for b in backends:
            print(f"{name:44s} {b:9s} {res[b][0]:10.5f} {base / res[b][0]:8.2f}")
        if len(backends) == 2:
            a, c = res["python"][1], res["cython"][1]
            diff = max(float(np.max(np.abs(np.asarray(x, float) - np.asarray(y, float))))
                       for x, y in zip(a, c) if np.size(x))
            print(f"{'':44s} max |python - cython| = {diff:.2e}")


if __name__ == "__main__":
    main()
