"""
What the sandbox does with misbehaving candidates
=================================================

Each candidate runs in its own process behind the line-oriented wire
protocol. Hangs are killed at the wall timeout, floods at the output cap,
and malformed answers are classified rather than raised.
"""
import tempfile
import time

from trajforge.datasets import load_dataset
from trajforge.runtime import Candidate, ExecLimits, execute
from trajforge.synthetic import write_synthetic_benchmark

root = write_synthetic_benchmark(tempfile.mkdtemp(prefix="trajforge-demo-"), seed=0)
windows = load_dataset(root, "eth", 20)

body = {
    "constant velocity": "v = trajectory[:, -1] - trajectory[:, -2]\n"
                         "    steps = np.arange(1, 13)[None, :, None]\n"
                         "    return np.stack([trajectory[:, -1:] + v[:, None] * steps] * 20)",
    "hangs": "while True:\n        pass",
    "floods stdout": "print('x' * 10**8)",
    "exits": "raise SystemExit(4)",
    "returns NaN": "return np.full((20, len(trajectory), 12, 2), np.nan)",
    "one step short": "return np.zeros((20, len(trajectory), 11, 2))",
}
limits = ExecLimits(wall_timeout=2.0)
for label, code in body.items():
    start = time.monotonic()
    res = execute(Candidate(label, f"def predict_trajectory(trajectory):\n    {code}\n"), windows, limits)
    print(f"{label:18s} {res.status.value:15s} {res.reason or '':14s} {time.monotonic() - start:5.2f} s")
