"""Prompt templates and the task text that fills them.

Templates are shipped as text assets and rendered by single-pass
substitution of ``{name}`` placeholders.
"""
from __future__ import annotations

import hashlib
import re
from dataclasses import dataclass
from functools import lru_cache
from importlib import resources

from .errors import TrajforgeError

TEMPLATE_NAMES = (
    "system_generator",
    "system_reflector",
    "task_description",
    "init_population",
    "crossover",
    "short_reflection",
    "long_reflection",
    "elitist_mutation",
)

SHORT_REFLECTION_WORDS = 200
LONG_REFLECTION_WORDS = 20
NO_REFLECTION = "(no reflection available)"

FUNCTION_NAME = "predict_trajectory"
PROBLEM_DESCRIPTION = "multi-agent pedestrian trajectory prediction."

_PLACEHOLDER = re.compile(r"\{([A-Za-z_][A-Za-z0-9_\-]*)\}")
_WORD = re.compile(r"\S+")


class MissingPlaceholder(TrajforgeError, KeyError):
    def __init__(self, name: str):
        super().__init__(name)
        self.name = name


@dataclass(frozen=True)
class PromptTemplate:
    name: str
    body: str

    @property
    def placeholders(self) -> tuple[str, ...]:
        seen = []
        for m in _PLACEHOLDER.finditer(self.body):
            if m.group(1) not in seen:
                seen.append(m.group(1))
        return tuple(seen)

    @property
    def sha256(self) -> str:
        return hashlib.sha256(self.body.encode("utf-8")).hexdigest()


def asset_path(relpath: str):
    node = resources.files("trajforge").joinpath("assets")
    for part in relpath.split("/"):
        node = node.joinpath(part)
    return node


def asset_text(relpath: str) -> str:
    return asset_path(relpath).read_text(encoding="utf-8")


@lru_cache(maxsize=None)
def load_template(name: str) -> PromptTemplate:
    if name not in TEMPLATE_NAMES:
        raise KeyError(name)
    return PromptTemplate(name, asset_text(f"prompts/{name}.txt"))


def render(template: PromptTemplate | str, values: dict) -> str:
    """Substitute every placeholder in one pass; substituted text is never rescanned."""
    if isinstance(template, str):
        template = load_template(template)

    def sub(m):
        key = m.group(1)
        if key not in values:
            raise MissingPlaceholder(key)
        return str(values[key])

    return _PLACEHOLDER.sub(sub, template.body)


def truncate_words(text: str, limit: int) -> str:
    """Cut ``text`` after its ``limit``-th whitespace-delimited word."""
    words = list(_WORD.finditer(text))
    if len(words) <= limit:
        return text
    if limit <= 0:
        return ""
    return text[: words[limit - 1].end()]


def seed_function() -> str:
    return asset_text("seed_function.py")


def function_signature(version: str = "") -> str:
    return asset_text("function_signature.txt").rstrip("\n").format(version=version)


def function_description() -> str:
    return asset_text("function_description.txt").rstrip("\n") + "\n\n" + asset_text("external_knowledge.md").rstrip("\n")


def task_description() -> str:
    return render(
        "task_description",
        {
            "function_name": FUNCTION_NAME,
            "problem_description": PROBLEM_DESCRIPTION,
            "function_description": function_description(),
        },
    )


def init_population_prompt(long_reflection: str = "") -> str:
    return render(
        "init_population",
        {
            "task_description": task_description(),
            "seed_function": seed_function().rstrip("\n"),
            "func_name": FUNCTION_NAME,
            "initial_long-term_reflection": long_reflection,
        },
    )


def crossover_prompt(worse_code: str, better_code: str, reflection: str | None) -> str:
    return render(
        "crossover",
        {
            "task_description": task_description(),
            "function_signature0": function_signature("_v0"),
            "worse_code": worse_code.rstrip("\n"),
            "function_signature1": function_signature("_v1"),
            "better_code": better_code.rstrip("\n"),
            "short_term_reflection": reflection if reflection else NO_REFLECTION,
            "function_name": FUNCTION_NAME,
        },
    )


def short_reflection_prompt(worse_code: str, better_code: str, stats_worse: str, stats_better: str) -> str:
    return render(
        "short_reflection",
        {
            "func_name": FUNCTION_NAME,
            "problem_desc": PROBLEM_DESCRIPTION,
            "func_desc": function_description(),
            "worse_code": worse_code.rstrip("\n"),
            "stats_info_worse": stats_worse,
            "better_code": better_code.rstrip("\n"),
            "stats_info_better": stats_better,
        },
    )


def long_reflection_prompt(worse_code: str, better_code: str) -> str:
    return render(
        "long_reflection",
        {
            "function_name": FUNCTION_NAME,
            "problem_description": PROBLEM_DESCRIPTION,
            "function_description": function_description(),
            "worse_code": worse_code.rstrip("\n"),
            "better_code": better_code.rstrip("\n"),
        },
    )


def mutation_prompt(elitist_code: str, long_reflection: str, stats_elitist: str) -> str:
    return render(
        "elitist_mutation",
        {
            "user_generator": task_description(),
            "reflection": long_reflection,
            "func_signature1": function_signature("_v1"),
            "elitist_code": elitist_code.rstrip("\n"),
            "stats_info_elitist": stats_elitist,
            "func_name": FUNCTION_NAME,
        },
    )


_VERSIONED = re.compile(r"\b" + FUNCTION_NAME + r"_v\d+\b")


def normalize_function_name(source: str) -> str:
    """Rename ``predict_trajectory_vN`` back to the canonical entry point."""
    return _VERSIONED.sub(FUNCTION_NAME, source)
