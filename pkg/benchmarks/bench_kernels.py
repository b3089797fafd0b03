"""Timing comparison of the compiled kernels against the numpy fallbacks.

Runs each hot kernel (3x3 im2col, 2x2 max-pool forward/backward) and a
full forward+backward training step on both backends and prints the
per-call times and speedups. The two backends are also checked for
bit-identical outputs on every shape.

Usage: python benchmarks/bench_kernels.py [--repeat N]
"""

import argparse
import time

import numpy as np

from fedsilo import _kernels_py, backend, nn

try:
    from fedsilo import _kernels
except ImportError:
    _kernels = None


def timeit(fn, repeat):
    fn()  # warm-up
    t0 = time.perf_counter()
    for _ in range(repeat):
        fn()
    return (time.perf_counter() - t0) / repeat


def bench_kernel(name, shapes, compiled_fn, pure_fn, repeat):
    print(f"\n{name}")
    for shape in shapes:
        rng = np.random.default_rng(0)
        x = rng.standard_normal(shape)
        out_c = compiled_fn(x)
        out_p = pure_fn(x)
        for a, b in zip(np.atleast_1d(out_c), np.atleast_1d(out_p)):
            assert np.array_equal(a, b), f"backend mismatch on {shape}"
        tc = timeit(lambda: compiled_fn(x), repeat)
        tp = timeit(lambda: pure_fn(x), repeat)
        print(f"  {str(shape):>18}  compiled {tc * 1e3:7.3f} ms   "
              f"numpy {tp * 1e3:7.3f} ms   x{tp / tc:5.1f}")


def bench_train_step(repeat):
    print("\nfull forward+backward step (batch 32, 3x32x32, channels 16/32/64)")
    spec = nn.dcnn_spec(True, (16, 32, 64), in_channels=3, image_size=32)
    for dtype in (np.float32, np.float64):
        params = nn.build_model(spec, seed=0, dtype=dtype)
        rng = np.random.default_rng(1)
        x = rng.uniform(0, 1, (32, 3, 32, 32)).astype(dtype)
        y = rng.integers(0, 2, 32)

        def step():
            logits, caches = nn.forward(spec, params, x, mode="train")
            nn.backward(spec, params, caches, logits, y)

        t = timeit(step, repeat)
        print(f"  {np.dtype(dtype).name:>8}  {t * 1e3:7.2f} ms/step "
              f"({backend.COMPILED and 'compiled' or 'numpy'} backend)")


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--repeat", type=int, default=20)
    args = ap.parse_args()

    if _kernels is None:
        print("compiled extension not available; nothing to compare")
        return

    shapes = [(8, 3, 16, 16), (32, 16, 32, 32), (32, 32, 16, 16),
              (32, 64, 8, 8)]
    bench_kernel("3x3 im2col", shapes,
                 _kernels.im2col3x3, _kernels_py.im2col3x3, args.repeat)
    bench_kernel("2x2 max-pool forward", shapes,
                 _kernels.maxpool2_forward, _kernels_py.maxpool2_forward,
                 args.repeat)

    print("\n2x2 max-pool backward")
    for shape in shapes:
        rng = np.random.default_rng(0)
        x = rng.standard_normal(shape)
        _, arg_c = _kernels.maxpool2_forward(x)
        _, arg_p = _kernels_py.maxpool2_forward(x)
        dy = rng.standard_normal((shape[0], shape[1],
                                  shape[2] // 2, shape[3] // 2))
        out_c = _kernels.maxpool2_backward(dy, arg_c, shape[2], shape[3])
        out_p = _kernels_py.maxpool2_backward(dy, arg_p, shape[2], shape[3])
        assert np.array_equal(out_c, out_p)
        tc = timeit(lambda: _kernels.maxpool2_backward(dy, arg_c, shape[2],
                                                       shape[3]), args.repeat)
        tp = timeit(lambda: _kernels_py.maxpool2_backward(dy, arg_p, shape[2],
                                                          shape[3]), args.repeat)
        print(f"  {str(shape):>18}  compiled {tc * 1e3:7.3f} ms   "
              f"numpy {tp * 1e3:7.3f} ms   x{tp / tc:5.1f}")

    bench_train_step(args.repeat)


if __name__ == "__main__":
    main()
