"""Time the compiled and numpy coordinate-descent backends on the same problems.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from coherit import kernels
from coherit.core import GramView, RegressionSample, RngStream, sample_gaussian_ar1
from coherit.projection import find_projection


def lasso_gram(mod, G, c, pen):
    x = np.zeros(G.shape[0])
    grad = np.zeros(G.shape[0])
    mod.cd_gram(G, c, pen, 1.0, x, grad, 1e-9, 20000, np.inf)


def lasso_design(mod, X, colsq, c, pen):
    n, p = X.shape
    x = np.zeros(p)
    r = np.zeros(n)
    mod.cd_design(X, colsq, c, pen, 1.0, x, r, 1e-9, 20000, np.inf)


def best_of(fn, repeat):
    times = []
    for _ in range(repeat):
        t = time.perf_counter()
        fn()
        times.append(time.perf_counter() - t)
    return min(times)


def main():
    parser = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    parser.add_argument("--repeat", type=int, default=3)
    args = parser.parse_args()

    names = ["python"]
    try:
        kernels.get_backend("cython")
        names.insert(0, "cython")
    except ImportError:
        print("compiled extension not built; timing the numpy fallback only")

    rs = RngStream(1)
    X = sample_gaussian_ar1(400, 600, 0.8, rs.child(0))
    beta = np.zeros(600)
    beta[:20] = 1.0
    y = X @ beta + rs.child(1).standard_normal(400)
    sample = RegressionSample(X, y)
    G = X.T @ X / 400
    c = X.T @ y / 400
    pen = np.full(600, 0.1)
    Xf = np.asfortranarray(X)
    colsq = np.diagonal(G).copy()
    g = np.zeros(600)
    g[5] = 1.0

    cases = {
        "lasso sweeps on the Gram (p=600)": lambda mod: lambda: lasso_gram(mod, G, c, pen),
        "lasso sweeps on the design (n=400, p=600)": lambda mod: lambda: lasso_design(mod, Xf, colsq, c, pen),
        "projection path, target e_5": lambda mod: lambda: find_projection(GramView(sample), g, backend=mod.BACKEND),
    }
    print(f"{'case':<44}" + "".join(f"{n:>12}" for n in names) + ("     speedup" if len(names) == 2 else ""))
    for label, make in cases.items():
        t = [best_of(make(kernels.get_backend(n)), args.repeat) for n in names]
        row = f"{label:<44}" + "".join(f"{v * 1e3:>10.1f}ms" for v in t)
        if len(t) == 2:
            row += f"{t[1] / t[0]:>11.1f}x"
        print(row)


if __name__ == "__main__":
    main()
