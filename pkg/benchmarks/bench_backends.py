"""Compare the compiled kernel backend against the numpy fallback.

Two views:
  * microbenchmarks of each kernel at model-realistic array sizes
    (both backends in-process);
  * an end-to-end training-epoch benchmark run in subprocesses with
    CTXREC_BACKEND forced to each backend.

Run:  python benchmarks/bench_backends.py
"""

import os
import subprocess
import sys
import time
from pathlib import Path

import numpy as np

sys.path.insert(0, str(Path(__file__).resolve().parent.parent / "src"))

from ctxrec.core import _kernels_py as kpy  # noqa: E402

try:
    from ctxrec.core import _kernels_c as kc
except ImportError:
    kc = None

SIZES = {
    "batch x |C| (256x10)": (256, 10),
    "batch x d (256x16)": (256, 16),
    "embedding table (200x16)": (200, 16),
    "wide batch (2048x16)": (2048, 16),
}
REPS = 2000


def _time(fn, *args, reps=REPS):
    fn(*args)  # warm up
    t0 = time.perf_counter()
    for _ in range(reps):
        fn(*args)
    return (time.perf_counter() - t0) / reps * 1e6  # microseconds


def micro():
    rng = np.random.default_rng(0)
    print(f"{'kernel':<18} {'size':<26} {'numpy us':>9} {'cython us':>10} {'speedup':>8}")
    for label, shape in SIZES.items():
        x = rng.normal(size=shape).astype(np.float32)
        gy = rng.normal(size=shape).astype(np.float32)
        for op in ("sigmoid", "tanh", "relu"):
            t_py = _time(getattr(kpy, op), x)
            if kc is None:
                print(f"{op:<18} {label:<26} {t_py:9.2f} {'n/a':>10}")
                continue
            t_c = _time(getattr(kc, op), x)
            print(f"{op:<18} {label:<26} {t_py:9.2f} {t_c:10.2f} {t_py/t_c:7.2f}x")
        y = kpy.tanh(x)
        gx1 = np.zeros_like(x)
        t_py = _time(kpy.tanh_backward, y, gy, gx1)
        if kc is not None:
            gx2 = np.zeros_like(x)
            t_c = _time(kc.tanh_backward, y, gy, gx2)
            print(f"{'tanh_backward':<18} {label:<26} {t_py:9.2f} {t_c:10.2f} {t_py/t_c:7.2f}x")
        p = rng.normal(size=shape).astype(np.float32)
        g = rng.normal(size=shape).astype(np.float32)
        m = np.zeros_like(p)
        v = np.zeros_like(p)
        t_py = _time(kpy.adam_update, p, g, m, v, 10.0, 1e-3, 0.9, 0.999, 1e-8)
        if kc is not None:
            t_c = _time(kc.adam_update, p.copy(), g, m.copy(), v.copy(),
                        10.0, 1e-3, 0.9, 0.999, 1e-8)
            print(f"{'adam_update':<18} {label:<26} {t_py:9.2f} {t_c:10.2f} {t_py/t_c:7.2f}x")


_TRAIN_SNIPPET = """
import time
import numpy as np
from ctxrec.core import backend_name
from ctxrec.synth import SynthConfig, synth_generate
from ctxrec.data import split
from ctxrec.model import ModelConfig, Recommender
from ctxrec.training import TrainConfig, train_model

cfg = SynthConfig(n_domains=2, users_per_domain=200, items_per_domain=100,
                  n_features=10, i_end=4, h_end=7, source_interactions=20000,
                  target_interactions=1500, feedback="explicit", seed=0)
datasets, _ = synth_generate(cfg)
ds = split(datasets[0], seed=0)
model = Recommender(ModelConfig(n_features=10, i_end=4, h_end=7,
                                feedback="explicit", d=16, dropout=0.1), seed=0)
model.add_domain_for(ds)
tcfg = TrainConfig(lr=1e-2, batch_size=256, max_epochs=5, seed=0)
t0 = time.perf_counter()
train_model(model, ds, tcfg, early_stop=False)
print(f"{backend_name()}: 5 epochs over 16k rows in {time.perf_counter()-t0:.2f}s")
"""


def end_to_end():
    for backend in ("python", "cython"):
        env = dict(os.environ, CTXREC_BACKEND=backend)
        out = subprocess.run([sys.executable, "-c", _TRAIN_SNIPPET],
                             capture_output=True, text=True, env=env)
        line = out.stdout.strip() or out.stderr.strip().splitlines()[-1]
        print(f"  {line}")


if __name__ == "__main__":
    print("== kernel microbenchmarks ==")
    micro()
    print("\n== end-to-end training epochs ==")
    end_to_end()
