"""Adapter between the line protocol and ``predict_trajectory(trajectory)``.

usage: python python_shim.py CANDIDATE_SOURCE < request > response

Environment:
  TRAJFORGE_SEED       base seed; window i of this batch is seeded with SEED + i
  TRAJFORGE_MEM_LIMIT  address-space cap in bytes (optional)
"""
import os
import random
import re
import sys

import numpy as np

ENTRY = "predict_trajectory"


def _apply_limits():
    mem = os.environ.get("TRAJFORGE_MEM_LIMIT")
    if mem:
        try:
            import resource

            resource.setrlimit(resource.RLIMIT_AS, (int(mem), int(mem)))
        except (ImportError, ValueError, OSError):
            pass


def _resolve(namespace):
    fn = namespace.get(ENTRY)
    if callable(fn):
        return fn
    versioned = sorted(k for k in namespace if re.fullmatch(ENTRY + r"_v\d+", k))
    if versioned and callable(namespace[versioned[-1]]):
        return namespace[versioned[-1]]
    raise SystemExit(f"candidate defines no callable {ENTRY}")


def _read_request(stream):
    lines = stream.read().split("\n")
    head = lines[0].split()
    if len(head) != 3 or head[0] != "TRAJEVO" or head[1] != "1":
        raise SystemExit(f"bad request header: {lines[0]!r}")
    pos = 1
    for _ in range(int(head[2])):
        _, agents, t_obs, _t_pred, _k = lines[pos].split()
        agents, t_obs = int(agents), int(t_obs)
        n = agents * t_obs
        block = lines[pos + 1 : pos + 1 + n]
        obs = np.array([ln.split() for ln in block], dtype=float).reshape(agents, t_obs, 2)
        pos += 1 + n
        yield obs


def _write_block(out, pred):
    pred = np.asarray(pred, dtype=float)
    agents = pred.shape[1] if pred.ndim >= 2 else 0
    out.write(f"P {agents}\n")
    flat = pred.reshape(-1)
    pairs = flat[: flat.size - flat.size % 2].reshape(-1, 2)
    out.write("".join(f"{x:.9f} {y:.9f}\n" for x, y in pairs.tolist()))
    if flat.size % 2:
        out.write(f"{flat[-1]:.9f}\n")


def main():
    _apply_limits()
    source_path = sys.argv[1]
    with open(source_path, "r", encoding="utf-8") as fh:
        source = fh.read()

    # protocol output goes to a private copy of stdout; anything the
    # candidate prints lands on stderr instead
    out = os.fdopen(os.dup(1), "w")
    os.dup2(2, 1)
    sys.stdout = sys.stderr

    namespace = {"np": np, "numpy": np, "__name__": "candidate"}
    exec(compile(source, os.path.basename(source_path), "exec"), namespace)
    predict = _resolve(namespace)

    base_seed = int(os.environ.get("TRAJFORGE_SEED", "0"))
    for i, obs in enumerate(_read_request(sys.stdin)):
        seed = (base_seed + i) % (2**32)
        np.random.seed(seed)
        random.seed(seed)
        _write_block(out, predict(obs.copy()))
    out.flush()


if __name__ == "__main__":
    main()
