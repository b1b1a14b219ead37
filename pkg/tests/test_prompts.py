import pytest
from hypothesis import given
from hypothesis import strategies as st

from trajforge import prompts
from trajforge.prompts import MissingPlaceholder, PromptTemplate, render, truncate_words

PINNED = {
    "system_generator": "89ac0590de1196d1f26f5119744a963c4d5441bc835397fc950e752828bc8dc2",
    "system_reflector": "468fbda7368fc02e185f751eaf755816e9248c4c7517cfafc67752e2c909a4aa",
    "task_description": "83d330b5caf4787a6f4e4ac92500a2714bca90ff50e27d737c935e71c7021cce",
    "init_population": "ed09d9e9f4172ca139fc50026e19b2c8995762827479c5dde41fe76b23ffb86a",
    "crossover": "dd3d1ca5ae7127921824ab145cd18a4e03f9b27f3d7ae86944af7557c2d59647",
    "short_reflection": "e51b5ada47b89180700758233a814f85c8e27cab23edb05bc57cd713fc60b37a",
    "long_reflection": "0ba92ec7280b0f26a97dd3c37ba2abd74ff01e966c6a260d57e077cbe070532b",
    "elitist_mutation": "dc158d6b5fb473627417f7727f5db5928471658d876da071d3a6348144ef7bdc",
}

WORSE = "def predict_trajectory(trajectory):\n    return worse_marker"
BETTER = "def predict_trajectory(trajectory):\n    return better_marker"


@pytest.mark.parametrize("name", sorted(PINNED))
def test_template_hash_pinned(name):
    assert prompts.load_template(name).sha256 == PINNED[name]


def test_word_budgets_in_templates():
    assert "maximum of 200 words" in prompts.load_template("short_reflection").body
    assert "less than 20 words" in prompts.load_template("long_reflection").body


def test_crossover_prompt_sections():
    text = prompts.crossover_prompt(WORSE, BETTER, "use heading noise")
    assert "[Worse code]\ndef predict_trajectory_v0(trajectory: np.ndarray) -> np.ndarray:\n" in text
    assert "[Better code]\ndef predict_trajectory_v1" in text
    assert "[Reflection]\nuse heading noise\n" in text
    assert "worse_marker" in text and "better_marker" in text
    assert "`predict_trajectory_v2`" in text


def test_crossover_fallback_reflection():
    assert "[Reflection]\n(no reflection available)\n" in prompts.crossover_prompt(WORSE, BETTER, None)


def test_short_reflection_prompt_carries_stats():
    text = prompts.short_reflection_prompt(WORSE, BETTER, "k=0: 1 (100.0%)", "k=0: 2 (100.0%)")
    assert "[Worse code results analysis]\nk=0: 1 (100.0%)" in text
    assert "[Better code results analysis]\n\nk=0: 2 (100.0%)" in text


def test_mutation_prompt_sections():
    text = prompts.mutation_prompt(BETTER, "hint", "k=0: 5 (100.0%)")
    assert "[Code Results Analysis]\nk=0: 5 (100.0%)" in text
    assert "[Prior reflection]\nhint" in text


def test_task_description_includes_knowledge():
    text = prompts.task_description()
    assert text.startswith("Write a predict_trajectory function for multi-agent pedestrian trajectory prediction.")
    assert prompts.asset_text("external_knowledge.md").strip()[:40] in text


def test_init_prompt_includes_seed():
    assert prompts.seed_function().strip() in prompts.init_population_prompt()


@pytest.mark.parametrize("name", prompts.TEMPLATE_NAMES)
def test_complete_map_resolves_everything(name):
    t = prompts.load_template(name)
    out = render(t, {k: f"<{k}>" for k in t.placeholders})
    assert not any("{" + k + "}" in out for k in t.placeholders)


def test_missing_placeholder():
    with pytest.raises(MissingPlaceholder) as err:
        render("crossover", {"task_description": "x"})
    assert err.value.name == "function_signature0"


def test_no_placeholders_is_identity():
    assert render(PromptTemplate("t", "plain {not a placeholder} text"), {}) == "plain {not a placeholder} text"


def test_single_pass():
    # substituted text is never rescanned
    assert render(PromptTemplate("t", "{a}{b}"), {"a": "{b}", "b": "x"}) == "{b}x"


@given(st.text(max_size=30), st.text(max_size=30))
def test_injective(u, v):
    t = PromptTemplate("t", "A {x} B {y} C")
    if (u, v) != ("", "") and u != v:
        assert render(t, {"x": u, "y": "k"}) != render(t, {"x": v, "y": "k"})


def test_truncate_words():
    text = " ".join(f"w{i}" for i in range(300))
    out = truncate_words(text, 200)
    assert len(out.split()) == 200 and out.endswith("w199")
    assert truncate_words("a  b\nc", 5) == "a  b\nc"
    assert truncate_words("a b", 0) == ""


def test_normalize_function_name():
    src = "def predict_trajectory_v2(t):\n    return predict_trajectory_v2_helper(t)\n"
    assert prompts.normalize_function_name(src).startswith("def predict_trajectory(t):")
    assert "predict_trajectory_v2_helper" in prompts.normalize_function_name(src)
