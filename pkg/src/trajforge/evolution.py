"""The generational loop.

Each generation: parent pairs are drawn (mostly uniformly, partly from the
elite tier), compared by a short reflection, and recombined by the LLM;
independently, elites sampled from the cross-generation archive are mutated
with the accumulated long-term reflection and their best-sample statistics.
Survivors are the best ``population_size`` candidates by J.

All random draws happen on the calling thread, in a fixed order, from one
seeded generator. LLM requests and candidate evaluations fan out to worker
pools, and their results are consumed in submission order, so a run is a
deterministic function of its seed and its gateway's replies.
"""
from __future__ import annotations

import logging
import math
import time
import uuid
from concurrent.futures import ThreadPoolExecutor
from dataclasses import asdict, dataclass, field
from pathlib import Path
from typing import Protocol, Sequence

import numpy as np

from . import prompts
from .archive import (
    CandidateStore,
    EliteArchive,
    EventLog,
    ReflectionStore,
    RunState,
    checkpoint,
    export_best,
    latest_checkpoint,
    restore,
    sha256_text,
)
from .datasets import TrajectoryWindow
from .errors import TrajforgeError
from .llm import ChatRequest, ChatResponse, GatewayError, NoCodeBlock, extract_code
from .metrics import render_sfl_text, score_windows
from .runtime import Candidate, ExecLimits, Status, evaluate_many, execute

log = logging.getLogger(__name__)


class AllCandidatesFailed(TrajforgeError):
    pass


class InsufficientPopulation(TrajforgeError):
    pass


class EmptyArchive(TrajforgeError):
    pass


class Gateway(Protocol):
    def complete(self, request: ChatRequest) -> ChatResponse: ...


@dataclass(frozen=True)
class EvolutionConfig:
    population_size: int = 10
    init_count: int = 8
    elite_ratio: float = 0.3
    exploration_ratio: float = 0.7
    crossover_rate: float = 1.0
    mutation_rate: float = 0.5
    cges_temperature: float = 1.0
    max_generations: int = 10
    rng_seed: int = 0
    eval_seed: int = 0  # seeds the candidate's RNG; identical for every candidate
    wall_budget: float | None = None  # seconds; None means generations only
    llm_workers: int = 4
    eval_workers: int = 4
    model: str = ""
    temperature: float = 1.0

    def __post_init__(self):
        for name in ("elite_ratio", "exploration_ratio", "crossover_rate", "mutation_rate"):
            v = getattr(self, name)
            if not 0.0 <= v <= 1.0:
                raise ValueError(f"{name} must lie in [0, 1], got {v}")
        if self.population_size < 2:
            raise ValueError("population_size must be at least 2")
        if self.init_count < 0:
            raise ValueError("init_count must be non-negative")
        if not self.cges_temperature > 0:
            raise ValueError("cges_temperature must be positive")
        if self.max_generations < 0:
            raise ValueError("max_generations must be non-negative")

    def to_dict(self) -> dict:
        return asdict(self)


# -- pure operators ---------------------------------------------------------------

def _rank_key(c: Candidate):
    # ok before failed, then lower J; sort is stable so ties keep input order
    return (not c.ok, c.objective_j if c.ok else math.inf)


def elite_tier(ok: Sequence[Candidate], elite_ratio: float) -> list[Candidate]:
    ranked = sorted(ok, key=_rank_key)
    size = max(1, math.ceil(elite_ratio * len(ranked)))
    return ranked[:size]


def draw_parent(ok: Sequence[Candidate], elite: Sequence[Candidate], exploration_ratio: float, rng) -> Candidate:
    """One parent slot: uniform over ``ok`` with prob ``exploration_ratio``, else uniform over ``elite``."""
    if rng.random() < exploration_ratio:
        return ok[int(rng.integers(len(ok)))]
    return elite[int(rng.integers(len(elite)))]


def order_pair(a: Candidate, b: Candidate) -> tuple[Candidate, Candidate]:
    """(worse, better) by J."""
    return (a, b) if a.objective_j >= b.objective_j else (b, a)


def select_parents(population: Sequence[Candidate], config: EvolutionConfig, rng, max_retries: int = 10):
    ok = [c for c in population if c.ok]
    if len(ok) < 2:
        raise InsufficientPopulation(f"need 2 runnable candidates, have {len(ok)}")
    elite = elite_tier(ok, config.elite_ratio)
    a = draw_parent(ok, elite, config.exploration_ratio, rng)
    b = draw_parent(ok, elite, config.exploration_ratio, rng)
    retries = 0
    while a.id == b.id and retries < max_retries:
        b = draw_parent(ok, elite, config.exploration_ratio, rng)
        retries += 1
    if a.id == b.id:
        a, b = sorted(ok, key=_rank_key)[:2]
    return order_pair(a, b)


def cges_probabilities(objectives, temperature: float = 1.0) -> np.ndarray:
    """Softmax of ``-J/T`` after min-max normalising J to [0, 1]."""
    js = np.asarray(objectives, dtype=float)
    if js.size == 0:
        raise EmptyArchive("archive is empty")
    span = js.max() - js.min()
    z = (js - js.min()) / span if span > 0 else np.zeros_like(js)
    logits = -z / temperature
    w = np.exp(logits - logits.max())
    return w / w.sum()


def cges_sample(archive: EliteArchive, temperature: float, rng) -> str:
    if not len(archive):
        raise EmptyArchive("archive is empty")
    p = cges_probabilities([e.objective_j for e in archive.entries], temperature)
    return archive.entries[int(rng.choice(len(p), p=p))].candidate_id


def generator_messages(user: str) -> list[tuple[str, str]]:
    return [("system", prompts.load_template("system_generator").body), ("user", user)]


def reflector_messages(user: str) -> list[tuple[str, str]]:
    return [("system", prompts.load_template("system_reflector").body), ("user", user)]


def sfl_block(c: Candidate) -> str:
    return render_sfl_text(c.sfl) if c.sfl is not None else "(no statistics available)"


def short_reflection_request(worse: Candidate, better: Candidate, seed=None, config=EvolutionConfig()) -> ChatRequest:
    text = prompts.short_reflection_prompt(worse.source, better.source, sfl_block(worse), sfl_block(better))
    return ChatRequest(reflector_messages(text), config.model, config.temperature, seed, "short_reflection")


def crossover_request(worse, better, reflection: str | None, seed=None, config=EvolutionConfig()) -> ChatRequest:
    text = prompts.crossover_prompt(worse.source, better.source, reflection)
    return ChatRequest(generator_messages(text), config.model, config.temperature, seed, "crossover")


def mutation_request(elite: Candidate, long_reflection: str, seed=None, config=EvolutionConfig()) -> ChatRequest:
    text = prompts.mutation_prompt(elite.source, long_reflection or prompts.NO_REFLECTION, sfl_block(elite))
    return ChatRequest(generator_messages(text), config.model, config.temperature, seed, "mutation")


def long_reflection_request(worse, better, seed=None, config=EvolutionConfig()) -> ChatRequest:
    text = prompts.long_reflection_prompt(worse.source, better.source)
    return ChatRequest(reflector_messages(text), config.model, config.temperature, seed, "long_reflection")


def init_request(seed=None, config=EvolutionConfig(), long_reflection: str = "") -> ChatRequest:
    text = prompts.init_population_prompt(long_reflection)
    return ChatRequest(generator_messages(text), config.model, config.temperature, seed, "init")


def child_from_reply(reply, cid: str, generation: int, parent_ids, operator: str) -> Candidate:
    """Turn a gateway reply (or the error it raised) into an untested or crashed candidate."""
    child = Candidate(id=cid, source="", generation=generation, parent_ids=list(parent_ids), operator=operator)
    if isinstance(reply, Exception):
        child.status = Status.CRASH
        child.error = f"gateway: {type(reply).__name__}: {reply}"
        return child
    try:
        child.source = prompts.normalize_function_name(extract_code(reply.text)) + "\n"
    except NoCodeBlock as exc:
        child.status = Status.CRASH
        child.error = f"parse: {exc}"
    return child


def _call(gateway: Gateway, request: ChatRequest):
    try:
        return gateway.complete(request)
    except GatewayError as exc:
        return exc


def short_reflect(worse: Candidate, better: Candidate, gateway: Gateway, store: ReflectionStore, seed=None) -> str | None:
    """Ask for a comparison of the pair and store it; None when the gateway fails."""
    reply = _call(gateway, short_reflection_request(worse, better, seed))
    if isinstance(reply, Exception):
        return None
    text = prompts.truncate_words(reply.text.strip(), prompts.SHORT_REFLECTION_WORDS)
    store.short_term[(worse.id, better.id)] = text
    return text


def crossover(worse, better, reflection, gateway: Gateway, cid: str, generation: int, seed=None) -> Candidate:
    reply = _call(gateway, crossover_request(worse, better, reflection, seed))
    return child_from_reply(reply, cid, generation, [worse.id, better.id], "crossover")


def elitist_mutate(elite: Candidate, reflections: ReflectionStore, gateway: Gateway, cid: str, generation: int, seed=None) -> Candidate:
    reply = _call(gateway, mutation_request(elite, reflections.long_term_text, seed))
    return child_from_reply(reply, cid, generation, [elite.id], "mutation")


def survivors(pool: Sequence[Candidate], size: int) -> list[Candidate]:
    return sorted(pool, key=_rank_key)[:size]


# -- engine ----------------------------------------------------------------------------

@dataclass
class RunResult:
    best: Candidate
    state: RunState
    held_out: dict | None = None
    run_dir: Path | None = None


@dataclass
class Evolution:
    """Owns the loop's moving parts: gateway, training windows, sandbox limits,
    and optional persistence (event log, candidate store, checkpoints)."""

    config: EvolutionConfig
    gateway: Gateway
    windows: Sequence[TrajectoryWindow]
    limits: ExecLimits = field(default_factory=ExecLimits)
    profiles: dict | None = None
    run_dir: Path | None = None
    snapshot: dict | None = None  # full run config recorded in the state
    on_generation: object = None  # callback(state) after every generation

    def __post_init__(self):
        self.rng = np.random.default_rng(self.config.rng_seed)
        self.events: EventLog | None = None
        self.store: CandidateStore | None = None
        if self.run_dir is not None:
            self.run_dir = Path(self.run_dir)
            self.store = CandidateStore(self.run_dir / "candidates")

    # plumbing

    def _open_log(self, truncate_to: int | None):
        if self.run_dir is not None and self.events is None:
            self.events = EventLog(self.run_dir / "events.jsonl", truncate_to_seq=truncate_to)

    def _emit(self, kind: str, payload: dict):
        if self.events is not None:
            self.events.append(kind, payload)

    def _new_id(self) -> str:
        return str(uuid.UUID(bytes=self.rng.bytes(16), version=4))

    def _seed(self) -> int:
        return int(self.rng.integers(2**31))

    def _ask(self, requests: list[ChatRequest]) -> list:
        """Send requests concurrently; replies (or errors) come back in order."""
        for r in requests:
            self._emit("llm_request", r.to_record())
        if not requests:
            return []
        workers = max(1, min(self.config.llm_workers, len(requests)))
        with ThreadPoolExecutor(max_workers=workers) as pool:
            replies = list(pool.map(lambda r: _call(self.gateway, r), requests))
        for r, reply in zip(requests, replies):
            if isinstance(reply, Exception):
                self._emit("llm_response", {"kind": r.kind, "seed": r.seed, "error": f"{type(reply).__name__}: {reply}"})
            else:
                record = reply.to_record()
                record.update(kind=r.kind, seed=r.seed, timing={"latency": reply.latency})
                self._emit("llm_response", record)
        return replies

    def _evaluate(self, state: RunState, fresh: list[Candidate]):
        todo = [c for c in fresh if c.status is Status.UNTESTED]
        start = time.monotonic()
        evaluate_many(todo, self.windows, self.limits, self.profiles, self.config.eval_seed, self.config.eval_workers)
        elapsed = time.monotonic() - start
        state.evaluations += len(todo)
        for c in fresh:
            state.candidates[c.id] = c
            payload = {k: v for k, v in c.to_dict().items() if k != "source"}
            payload["source_sha256"] = sha256_text(c.source)
            payload["error"] = payload["error"][-1000:]
            payload["timing"] = {"batch_elapsed": elapsed}
            if self.store is not None:
                self.store.put(c.source)
            self._emit("candidate_evaluated", payload)

    def _admit_elites(self, state: RunState, generation: int, fresh_ids: set[str] | None):
        tier_size = max(1, math.ceil(self.config.elite_ratio * self.config.population_size))
        ok = [c for c in survivors(state.members(), len(state.population)) if c.ok]
        for c in ok[:tier_size]:
            if fresh_ids is None or c.id in fresh_ids:
                state.archive.add(c, generation)

    def _summarise(self, state: RunState, offspring: list[Candidate]):
        best = state.best()
        state.best_history.append(best.objective_j)
        self._emit(
            "generation_summary",
            {
                "generation": state.generation,
                "best_id": best.id,
                "best_j": best.objective_j,
                "evaluations": state.evaluations,
                "population": list(state.population),
                "offspring": len(offspring),
                "offspring_ok": sum(c.ok for c in offspring),
                "archive_size": len(state.archive),
            },
        )
        log.info("generation %d: best J %.6f (%d evaluations)", state.generation, best.objective_j, state.evaluations)

    def _checkpoint(self, state: RunState):
        if self.run_dir is None:
            return
        state.rng_state = self.rng.bit_generator.state
        # the checkpoint event itself belongs to the prefix a resume keeps
        state.event_seq = (self.events.seq if self.events else 0) + 1
        path = checkpoint(state, self.run_dir / "checkpoints" / f"gen_{state.generation:04d}.json")
        self._emit("checkpoint", {"generation": state.generation, "path": str(path.relative_to(self.run_dir))})

    # phases

    def initialize(self, seed_source: str | None = None) -> RunState:
        self._open_log(None)
        cfg = self.config
        state = RunState(config=self.snapshot if self.snapshot is not None else {"evolution": cfg.to_dict()})
        self._emit("init", {"config": state.config, "num_windows": len(self.windows)})
        seed = Candidate(self._new_id(), seed_source if seed_source is not None else prompts.seed_function(), operator="seed")
        requests = [init_request(self._seed(), cfg) for _ in range(cfg.init_count)]
        replies = self._ask(requests)
        members = [seed] + [child_from_reply(r, self._new_id(), 0, [], "init") for r in replies]
        self._evaluate(state, members)
        if not any(c.ok for c in members):
            raise AllCandidatesFailed("every initial candidate failed, including the seed: " + seed.error[:500])
        state.population = [c.id for c in survivors(members, cfg.population_size)]
        self._admit_elites(state, 0, None)
        self._summarise(state, members)
        self._checkpoint(state)
        return state

    def step(self, state: RunState) -> RunState:
        cfg = self.config
        gen = state.generation + 1
        members = state.members()
        ok = [c for c in members if c.ok]

        # parent pairs; a population with a single runnable member skips crossover
        pairs = []
        for _ in range(cfg.population_size):
            if self.rng.random() < cfg.crossover_rate and len(ok) >= 2:
                pairs.append(select_parents(members, cfg, self.rng))

        # short reflections, one per distinct pair not reflected on before
        pending = []
        for worse, better in pairs:
            key = (worse.id, better.id)
            if key not in state.reflections.short_term and key not in [p[0] for p in pending]:
                pending.append((key, short_reflection_request(worse, better, self._seed(), cfg)))
        for (key, _), reply in zip(pending, self._ask([r for _, r in pending])):
            if not isinstance(reply, Exception):
                text = prompts.truncate_words(reply.text.strip(), prompts.SHORT_REFLECTION_WORDS)
                state.reflections.short_term[key] = text

        requests, meta = [], []
        for worse, better in pairs:
            reflection = state.reflections.short_term.get((worse.id, better.id))
            requests.append(crossover_request(worse, better, reflection, self._seed(), cfg))
            meta.append(([worse.id, better.id], "crossover"))
        if len(state.archive):
            for _ in range(cfg.population_size):
                if self.rng.random() < cfg.mutation_rate:
                    elite = state.candidates[cges_sample(state.archive, cfg.cges_temperature, self.rng)]
                    requests.append(mutation_request(elite, state.reflections.long_term_text, self._seed(), cfg))
                    meta.append(([elite.id], "mutation"))

        replies = self._ask(requests)
        offspring = [child_from_reply(r, self._new_id(), gen, parents, op) for r, (parents, op) in zip(replies, meta)]
        self._evaluate(state, offspring)

        previous_best = state.best().objective_j
        state.population = [c.id for c in survivors(members + offspring, cfg.population_size)]
        state.generation = gen
        assert state.best().objective_j <= previous_best, "elitism violated"
        self._admit_elites(state, gen, {c.id for c in offspring})

        ranked_ok = [c for c in survivors(state.members(), cfg.population_size) if c.ok]
        if len(ranked_ok) >= 2:
            (reply,) = self._ask([long_reflection_request(ranked_ok[-1], ranked_ok[0], self._seed(), cfg)])
            if not isinstance(reply, Exception):
                state.reflections.long_term.append(
                    prompts.truncate_words(reply.text.strip(), prompts.LONG_REFLECTION_WORDS)
                )

        self._summarise(state, offspring)
        self._checkpoint(state)
        if callable(self.on_generation):
            self.on_generation(state)
        return state

    def resume(self) -> RunState | None:
        """Restore the latest checkpoint in ``run_dir``; None if there is none."""
        if self.run_dir is None:
            return None
        path = latest_checkpoint(self.run_dir)
        if path is None:
            return None
        state = restore(path)
        self.rng.bit_generator.state = state.rng_state
        self._open_log(state.event_seq)
        return state

    def run(self, seed_source: str | None = None, resume: bool = False, test_windows=None, test_seed: int = 0) -> RunResult:
        state = self.resume() if resume else None
        if state is None:
            state = self.initialize(seed_source)
        start = time.monotonic()
        while state.generation < self.config.max_generations:
            if self.config.wall_budget is not None and time.monotonic() - start > self.config.wall_budget:
                break
            self.step(state)
        best = state.best()
        held_out = None
        if test_windows is not None:
            held_out = benchmark(best, test_windows, self.limits, self.profiles, test_seed)
        if self.run_dir is not None:
            manifest = export_best(state, self.run_dir / "export", held_out)
            self._emit("export", {"candidate_id": best.id, "source_sha256": manifest["source_sha256"], "held_out": held_out})
        if self.events is not None:
            self.events.close()
            self.events = None
        return RunResult(best, state, held_out, self.run_dir)


def benchmark(candidate: Candidate, windows, limits=ExecLimits(), profiles=None, seed: int = 0) -> dict:
    """Score a candidate on held-out windows; returns a ScoreReport record plus status."""
    result = execute(candidate, windows, limits, profiles, seed)
    if result.status is not Status.OK:
        return {"status": result.status.value, "error": result.reason}
    report = score_windows(result.predictions, [w.future for w in windows])
    record = report.to_record()
    record["status"] = Status.OK.value
    record["num_windows"] = len(windows)
    return record


def initialize(seed_heuristic: str, config: EvolutionConfig, gateway: Gateway, windows, **kwargs) -> RunState:
    return Evolution(config, gateway, windows, **kwargs).initialize(seed_heuristic)


def run(config: EvolutionConfig, windows, gateway: Gateway, **kwargs) -> RunResult:
    run_kwargs = {k: kwargs.pop(k) for k in ("seed_source", "resume", "test_windows", "test_seed") if k in kwargs}
    return Evolution(config, gateway, windows, **kwargs).run(**run_kwargs)
