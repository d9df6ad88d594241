"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 5]

Shapes follow the default configuration: the first audio convolution
(13 MFCC x 60 frames -> 64 channels) and the first visual stage
(3 x 16 x 112 x 112 -> 32 channels). A final row times one desk-preset
training epoch under each value of CROSSFUSE_KERNELS.
"""
import argparse
import os
import tempfile
import timeit

import numpy as np

from crossfuse import _kernels as K
from crossfuse.config import load_config
from crossfuse.data import generate_synthetic, load_dataset
from crossfuse.train import train


def best(fn, repeat):
    fn()                                   # warm up, including JIT compilation
    return min(timeit.repeat(fn, number=1, repeat=repeat))


def kernel_rows(repeat):
    rng = np.random.default_rng(0)
    x1 = rng.normal(size=(8, 13, 62)).astype(np.float32)
    w1 = rng.normal(size=(64, 13, 3)).astype(np.float32)
    g1 = rng.normal(size=(8, 64, 60)).astype(np.float32)
    x3 = rng.normal(size=(2, 3, 18, 58, 58)).astype(np.float32)
    w3 = rng.normal(size=(32, 3, 3, 3, 3)).astype(np.float32)
    g3 = rng.normal(size=(2, 32, 8, 28, 28)).astype(np.float32)
    xp = rng.normal(size=(8, 64, 56)).astype(np.float32)
    return [
        ("conv1d fwd", lambda: K.np_conv1d_fwd(x1, w1, 1), lambda: K.nb_conv1d_fwd(x1, w1, 1)),
        ("conv1d bwd", lambda: K.np_conv1d_bwd(x1, w1, g1, 1), lambda: K.nb_conv1d_bwd(x1, w1, g1, 1)),
        ("conv3d fwd", lambda: K.np_conv3d_fwd(x3, w3, (2, 2, 2)),
         lambda: K.nb_conv3d_fwd(x3, w3, 2, 2, 2)),
        ("conv3d bwd", lambda: K.np_conv3d_bwd(x3, w3, g3, (2, 2, 2)),
         lambda: K.nb_conv3d_bwd(x3, w3, g3, 2, 2, 2)),
        ("maxpool1d fwd", lambda: K.np_maxpool1d_fwd(xp, 2, 2), lambda: K.nb_maxpool1d_fwd(xp, 2, 2)),
    ]


def epoch_time(flag, ds, cfg):
    os.environ["CROSSFUSE_KERNELS"] = flag
    train(ds, cfg, np.arange(len(ds)), seed=0, epochs=1)        # warm up
    return min(timeit.repeat(lambda: train(ds, cfg, np.arange(len(ds)), seed=0, epochs=1),
                             number=1, repeat=3))


def main():
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    args = p.parse_args()
    if not K.HAS_NUMBA:
        raise SystemExit("numba is not importable; nothing to compare")

    print(f"{'kernel':<16}{'numpy ms':>12}{'numba ms':>12}{'speedup':>10}")
    for name, f_np, f_nb in kernel_rows(args.repeat):
        t_np, t_nb = best(f_np, args.repeat), best(f_nb, args.repeat)
        print(f"{name:<16}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.2f}")

    cfg = load_config("desk")
    with tempfile.TemporaryDirectory() as tmp:
        ds = load_dataset(generate_synthetic(tmp, cfg, 64, seed=0))
        saved = os.environ.get("CROSSFUSE_KERNELS")
        try:
            t_np, t_nb = epoch_time("numpy", ds, cfg), epoch_time("numba", ds, cfg)
        finally:
            if saved is None:
                os.environ.pop("CROSSFUSE_KERNELS", None)
            else:
                os.environ["CROSSFUSE_KERNELS"] = saved
    print(f"{'desk epoch':<16}{1e3 * t_np:>12.2f}{1e3 * t_nb:>12.2f}{t_np / t_nb:>10.2f}")


if __name__ == "__main__":
    main()
