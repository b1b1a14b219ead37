"""
A short evolutionary run with the offline mock provider
=======================================================

The mock provider stands in for the LLM: it answers code requests with
seeded perturbations of the heuristic it was shown, so the whole loop runs
offline and is reproducible. We run five generations on the ZARA1 leave-one-out
training windows, then read the event log back to plot the best-so-far
objective, print the final spread-feedback histogram and dump the lineage.
"""
import sys
import tempfile
from pathlib import Path

from trajforge.archive import read_events
from trajforge.datasets import BENCHMARK_DATASETS, leave_one_out, load_split
from trajforge.evolution import Evolution, EvolutionConfig
from trajforge.llm import MockProvider
from trajforge.metrics import render_sfl_text
from trajforge.report import best_j_curve, final_sfl, lineage_dot, write_curve_svg
from trajforge.synthetic import write_synthetic_benchmark

out = Path(sys.argv[1] if len(sys.argv) > 1 else "demo_output")
out.mkdir(parents=True, exist_ok=True)
root = write_synthetic_benchmark(tempfile.mkdtemp(prefix="trajforge-demo-"), seed=0)
train, test = load_split(root, leave_one_out(BENCHMARK_DATASETS, "zara1"), train_stride=20)
print(len(train), "training windows,", len(test), "held-out windows")

config = EvolutionConfig(population_size=10, max_generations=5, rng_seed=7)
engine = Evolution(config, MockProvider(seed=3), train, run_dir=out / "run",
                   on_generation=lambda s: print(f"gen {s.generation}: best J {s.best_history[-1]:.4f}"))
result = engine.run(test_windows=test)
print("best candidate", result.best.id, "J", round(result.best.objective_j, 4))
print("held-out minADE20 %.3f minFDE20 %.3f" % (result.held_out["min_ade"], result.held_out["min_fde"]))

# everything below is recomputed from the event log alone
events = read_events(out / "run" / "events.jsonl")
write_curve_svg(best_j_curve(events), out / "best_j.svg")
print(render_sfl_text(final_sfl(events)))
(out / "lineage.dot").write_text(lineage_dot(events))

# the exported heuristic is plain python
print((out / "run" / "export" / "heuristic.py").read_text()[:600])
