"""Time the compiled kernels against the numpy fallback.

    python3 benchmarks/bench_backends.py [--repeat 5]

Each kernel runs on inputs shaped like one training batch of the default
detector. The last row times a whole training step in a fresh interpreter
per backend, since the backend is fixed at import.
"""

import argparse
import os
import subprocess
import sys
import timeit

import numpy as np

from weatherbias import _backend

STEP = """
import tempfile, time
from weatherbias.detector import TrainConfig, init_model, train
from weatherbias.scenegen import SceneSpec, generate_dataset
with tempfile.TemporaryDirectory() as d:
    data = generate_dataset(SceneSpec(seed=0), 16, d)
    model = init_model(seed=0)
    train(model, data, TrainConfig(learning_rate=0.01, steps=1, batch_size=16))
    t0 = time.perf_counter()
    train(model, data, TrainConfig(learning_rate=0.01, steps={steps}, batch_size=16))
    print((time.perf_counter() - t0) / {steps})
"""


def cases(rng):
    x = rng.normal(size=(16, 64, 64, 3))
    h = rng.normal(size=(16, 32, 32, 16))
    cols = rng.normal(size=(16 * 32 * 32, 9 * 16))
    pool_in = rng.normal(size=(16, 64, 64, 16))
    dout = rng.normal(size=(16, 32, 32, 16))
    img = rng.random((64, 64, 3))
    w = np.exp(-0.5 * (np.arange(-6, 7) / 2.0) ** 2)
    w /= w.sum()
    a = rng.uniform(0, 50, size=(192, 2))
    anchors = np.hstack([a, a + 14])
    b = rng.uniform(0, 50, size=(3, 2))
    boxes = np.hstack([b, b + 10])
    return {
        "im2col3x3 16x64x64x3": lambda k: k.im2col3x3(x),
        "col2im3x3 16x32x32x16": lambda k: k.col2im3x3(cols, h.shape),
        "maxpool2 fwd 16x64x64x16": lambda k: k.maxpool2_forward(pool_in),
        "maxpool2 bwd 16x32x32x16": lambda k: k.maxpool2_backward(dout, k.maxpool2_forward(pool_in)[1]),
        "conv1d_edge r=6 64x64x3": lambda k: k.conv1d_edge(img, w, 0),
        "iou_matrix 192x3": lambda k: k.iou_matrix(anchors, boxes),
    }


def bench(fn, repeat):
    number = 1
    while timeit.timeit(fn, number=number) < 0.05:
        number *= 2
    return min(timeit.repeat(fn, number=number, repeat=repeat)) / number


def train_step(backend, steps):
    env = dict(os.environ, WEATHERBIAS_BACKEND=backend)
    res = subprocess.run([sys.executable, "-c", STEP.format(steps=steps)], env=env,
                         capture_output=True, text=True, check=True)
    return float(res.stdout.strip())


def main(argv=None):
    p = argparse.ArgumentParser(description=__doc__.splitlines()[0])
    p.add_argument("--repeat", type=int, default=5)
    p.add_argument("--steps", type=int, default=5, help="training steps timed per backend")
    args = p.parse_args(argv)

    names = _backend.available()
    if "cython" not in names:
        print("compiled kernels not built; timing the numpy fallback only")
    mods = {n: _backend.get(n) for n in names}
    rng = np.random.default_rng(0)
    print(f"{'kernel':28s}" + "".join(f"{n + ' ms':>12s}" for n in names) + ("     speedup" if len(names) > 1 else ""))
    for label, fn in cases(rng).items():
        t = {n: bench(lambda: fn(m), args.repeat) * 1e3 for n, m in mods.items()}
        row = f"{label:28s}" + "".join(f"{t[n]:12.3f}" for n in names)
        if len(names) > 1:
            row += f"{t['numpy'] / t['cython']:11.2f}x"
        print(row)
    t = {n: train_step(n, args.steps) * 1e3 for n in names}
    row = f"{'train step (batch 16)':28s}" + "".join(f"{t[n]:12.1f}" for n in names)
    if len(names) > 1:
        row += f"{t['numpy'] / t['cython']:11.2f}x"
    print(row)


if __name__ == "__main__":
    main()
