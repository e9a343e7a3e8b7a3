"""Time the numba kernels against the numpy fallback.

    python3 benchmarks/bench_kernels.py [--repeat 20] [--seed 0]

Each kernel is called once before timing so numba compilation is excluded.
Results are also checked for agreement between the two backends.
"""

import argparse
import time

import numpy as np

from crossview_grpo import _kernels


def _cases(rng):
    n = 200_000
    a0 = rng.uniform(0, 100, n)
    b0 = rng.uniform(0, 100, n)
    tiou_args = (a0, a0 + rng.uniform(0, 20, n), b0, b0 + rng.uniform(0, 20, n))

    contexts, actions, n_groups, g = 40, 160, 32, 8
    logits = rng.normal(size=(contexts, actions))
    ref = np.zeros_like(logits)
    ctx = rng.integers(contexts, size=n_groups)
    acts = rng.integers(actions, size=(n_groups, g))
    lp = logits - np.log(np.exp(logits).sum(axis=1, keepdims=True))
    old = lp[ctx[:, None], acts]
    adv = rng.normal(size=(n_groups, g))
    grpo_args = (logits, ref, ctx, acts, old, adv, 0.04, 0.0)

    m = 4000
    sft_args = (logits, rng.integers(contexts, size=m), rng.integers(actions, size=m))
    return {"tiou_many": tiou_args, "grpo_objective_grad": grpo_args, "sft_objective_grad": sft_args}


def _time(fn, args, repeat):
    fn(*args)
    best = float("inf")
    for _ in range(repeat):
        t0 = time.perf_counter()
        fn(*args)
        best = min(best, time.perf_counter() - t0)
    return best


def _agree(x, y):
    xs = x if isinstance(x, tuple) else (x,)
    ys = y if isinstance(y, tuple) else (y,)
    return all(np.allclose(a, b, rtol=1e-10, atol=1e-12) for a, b in zip(xs, ys))


def main(argv=None):
    ap = argparse.ArgumentParser(description=__doc__, formatter_class=argparse.RawDescriptionHelpFormatter)
    ap.add_argument("--repeat", type=int, default=20, help="timed calls per kernel (best is reported)")
    ap.add_argument("--seed", type=int, default=0, help="seed for the random inputs")
    args = ap.parse_args(argv)

    cases = _cases(np.random.default_rng(args.seed))
    print(f"active backend: {_kernels.BACKEND}")
    print(f"{'kernel':<22}{'numpy ms':>10}{'numba ms':>10}{'speedup':>9}  agree")
    for name, fargs in cases.items():
        impls = _kernels.IMPLEMENTATIONS[name]
        t_np = _time(impls["numpy"], fargs, args.repeat)
        if "numba" not in impls:
            print(f"{name:<22}{t_np * 1e3:>10.3f}{'-':>10}{'-':>9}  -")
            continue
        t_nb = _time(impls["numba"], fargs, args.repeat)
        ok = _agree(impls["numpy"](*fargs), impls["numba"](*fargs))
        print(f"{name:<22}{t_np * 1e3:>10.3f}{t_nb * 1e3:>10.3f}{t_np / t_nb:>8.1f}x  {ok}")


if __name__ == "__main__":
    main()
