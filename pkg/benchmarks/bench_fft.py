"""Time the compiled and pure-Python 2-D DFT backends on square images.

    python3 benchmarks/bench_fft.py --sizes 32,64,224 --repeat 5
"""
import argparse
import timeit

import numpy as np

from fiba import spectral


def bench(backend, n, repeat, number):
    x = np.random.default_rng(n).random((n, n))
    spectral.dft2(x, backend=backend)  # warm the twiddle caches
    t = timeit.repeat(lambda: spectral.dft2(x, backend=backend), repeat=repeat, number=number)
    return min(t) / number


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    ap.add_argument("--sizes", default="16,32,64,100,128,224,256")
    ap.add_argument("--repeat", type=int, default=5)
    ap.add_argument("--number", type=int, default=3)
    args = ap.parse_args(argv)
    backends = spectral.available_backends()
    print("size\t" + "\t".join(f"{b}_ms" for b in backends) + ("\tspeedup" if len(backends) > 1 else ""))
    for n in (int(s) for s in args.sizes.split(",")):
        times = [bench(b, n, args.repeat, args.number) for b in backends]
        cells = [f"{1e3 * t:.3f}" for t in times]
        if len(times) > 1:
            cells.append(f"{times[1] / times[0]:.2f}x")
        print(f"{n}\t" + "\t".join(cells))


if __name__ == "__main__":
    main()
