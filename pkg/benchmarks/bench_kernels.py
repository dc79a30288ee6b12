"""Compare the compiled and pure-Python closest-point kernels.

    python3 benchmarks/bench_kernels.py --queries 20000 --repeat 3
"""
import argparse
import time
import warnings

import numpy as np

from phydeformer import kernels, synthetic
from phydeformer.sdf import SdfBody


def bodies():
    yield "icosphere-1280", synthetic.icosphere(3, radius=0.3)
    yield "icosphere-5120", synthetic.icosphere(4, radius=0.3)
    yield "skirt-1536", synthetic.skirt(48, 16)


def best_time(fn, repeat):
    times = []
    for _ in range(repeat):
        t0 = time.perf_counter()
        out = fn()
        times.append(time.perf_counter() - t0)
    return min(times), out


def main(argv=None):
    parser = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    parser.add_argument("--queries", type=int, default=20000)
    parser.add_argument("--repeat", type=int, default=3)
    parser.add_argument("--seed", type=int, default=0)
    args = parser.parse_args(argv)

    if kernels.BACKEND != "compiled":
        print("compiled kernel not available; timing the pure-Python backend only")
    backends = ["python"] + (["compiled"] if kernels.BACKEND == "compiled" else [])
    rng = np.random.default_rng(args.seed)
    print("%-16s %8s %12s %12s %9s %12s" % ("body", "faces", "python [s]", "compiled [s]", "speedup", "max |dd|"))
    for name, mesh in bodies():
        pts = rng.uniform(-0.45, 0.45, size=(args.queries, 3))
        results = {}
        for b in backends:
            with warnings.catch_warnings():
                warnings.simplefilter("ignore")
                body = SdfBody(mesh, backend=b)
            results[b] = best_time(lambda: body.closest(pts), args.repeat)
        t_py = results["python"][0]
        if "compiled" in results:
            t_c = results["compiled"][0]
            dd = np.abs(np.sqrt(results["python"][1][0]) - np.sqrt(results["compiled"][1][0])).max()
            print("%-16s %8d %12.4f %12.4f %8.1fx %12.1e" % (name, mesh.n_faces, t_py, t_c, t_py / t_c, dd))
        else:
            print("%-16s %8d %12.4f %12s %9s %12s" % (name, mesh.n_faces, t_py, "-", "-", "-"))


if __name__ == "__main__":
    main()
