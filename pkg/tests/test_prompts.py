"""Prompt rendering: appendix snapshot fidelity, six-part structure, config."""

from pathlib import Path

import pytest

from opqrs.prompts import (
    ABLATION_METHODS,
    COMPARE_METHODS,
    SIX_PART_ORDER,
    ConfigMismatchError,
    PromptConfigError,
    PromptMethod,
    UnknownMethodError,
    build_extraction_prompt,
    build_judge_prompt,
    load_judge_template,
    load_prompt_config,
)
from opqrs.types import EntityKind, HpiNote, SCORED_ENTITIES

SNAPSHOT_DIR = Path(__file__).parent / "data" / "prompt_snapshots"

# the note the committed snapshots were rendered with
SNAPSHOT_NOTE = HpiNote(
    id="snapshot-note",
    text=(
        "62-year-old male presents with abdominal pain. he states the pain started "
        "two days ago and has been getting worse. pain is sharp and located in the "
        "right lower quadrant. rates it 8 out of 10. denies fever, nausea or vomiting."
    ),
)

SNAPSHOT_METHODS = [
    PromptMethod.PREFIX,
    PromptMethod.CLOZE,
    PromptMethod.ANTICIPATORY,
    PromptMethod.COT,
    PromptMethod.HEURISTIC,
    PromptMethod.ABLATION_NO_REASONING,
    PromptMethod.ABLATION_NO_SELF_VERIFICATION,
]


@pytest.fixture(scope="module")
def configs():
    return load_prompt_config()


@pytest.mark.parametrize("method", SNAPSHOT_METHODS, ids=lambda m: m.value)
def test_onset_prompt_matches_committed_snapshot(method, configs):
    spec = build_extraction_prompt(
        EntityKind.ONSET, SNAPSHOT_NOTE, method, configs[EntityKind.ONSET]
    )
    snapshot = (SNAPSHOT_DIR / f"{method.value}__onset.txt").read_text(encoding="utf-8")
    assert spec.rendered == snapshot.rstrip("\n")


def test_ours_prompt_has_six_parts_in_order(configs):
    spec = build_extraction_prompt(
        EntityKind.ONSET, SNAPSHOT_NOTE, PromptMethod.OURS, configs[EntityKind.ONSET]
    )
    assert tuple(part.name for part in spec.parts) == SIX_PART_ORDER
    offsets = [part.start for part in spec.parts]
    assert all(a < b for a, b in zip(offsets, offsets[1:]))
    for part in spec.parts:
        assert spec.rendered[part.start:part.start + len(part.text)] == part.text


def test_ours_prompt_ends_with_target_note(configs):
    for entity in SCORED_ENTITIES:
        spec = build_extraction_prompt(entity, SNAPSHOT_NOTE, PromptMethod.OURS,
                                       configs[entity])
        assert spec.rendered.endswith(SNAPSHOT_NOTE.text)


def test_every_method_ends_with_target_note(configs):
    for method in PromptMethod:
        spec = build_extraction_prompt(EntityKind.ONSET, SNAPSHOT_NOTE, method,
                                       configs[EntityKind.ONSET])
        assert spec.rendered.endswith(SNAPSHOT_NOTE.text), method


def test_rendering_is_deterministic(configs):
    for method in PromptMethod:
        first = build_extraction_prompt(EntityKind.SEVERITY, SNAPSHOT_NOTE, method,
                                        configs[EntityKind.SEVERITY])
        second = build_extraction_prompt(EntityKind.SEVERITY, SNAPSHOT_NOTE, method,
                                         configs[EntityKind.SEVERITY])
        assert first.rendered == second.rendered


def test_cue_phrases_appear_verbatim_in_ours_prompt(configs):
    for entity in SCORED_ENTITIES:
        spec = build_extraction_prompt(entity, SNAPSHOT_NOTE, PromptMethod.OURS,
                                       configs[entity])
        config = configs[entity]
        for cue in config.cue_phrases + config.cc_cue_phrases:
            assert cue in spec.rendered, (entity, cue)


def test_heuristic_prompt_contains_numbered_rules(configs):
    spec = build_extraction_prompt(EntityKind.ONSET, SNAPSHOT_NOTE,
                                   PromptMethod.HEURISTIC, configs[EntityKind.ONSET])
    assert "1) Identify the verb tense that indicates the chief complaint." in spec.rendered
    assert "4) Provide the final phrase." in spec.rendered


def test_ablation_no_self_verification_drops_only_that_step(configs):
    ours = build_extraction_prompt(EntityKind.ONSET, SNAPSHOT_NOTE, PromptMethod.OURS,
                                   configs[EntityKind.ONSET])
    ablated = build_extraction_prompt(EntityKind.ONSET, SNAPSHOT_NOTE,
                                      PromptMethod.ABLATION_NO_SELF_VERIFICATION,
                                      configs[EntityKind.ONSET])
    verification = configs[EntityKind.ONSET].self_verification
    assert verification in ours.rendered
    assert verification not in ablated.rendered
    # every reasoning step survives the ablation
    for step in configs[EntityKind.ONSET].reasoning_steps:
        assert step in ablated.rendered


def test_chief_complaint_has_no_extraction_template(configs):
    with pytest.raises(UnknownMethodError):
        build_extraction_prompt(EntityKind.CHIEF_COMPLAINT, SNAPSHOT_NOTE,
                                PromptMethod.OURS, configs[EntityKind.ONSET])


def test_config_mismatch_is_rejected(configs):
    with pytest.raises(ConfigMismatchError):
        build_extraction_prompt(EntityKind.ONSET, SNAPSHOT_NOTE, PromptMethod.OURS,
                                configs[EntityKind.SEVERITY])


def test_method_rosters():
    assert [m.value for m in COMPARE_METHODS] == [
        "prefix", "cloze", "anticipatory", "cot", "heuristic", "ours",
    ]
    assert [m.value for m in ABLATION_METHODS] == [
        "ours", "ablation_no_reasoning", "ablation_no_self_verification",
    ]
    assert PromptMethod.parse("ablation-no-reasoning") is PromptMethod.ABLATION_NO_REASONING


# ---------------------------------------------------------------------------
# judge prompt
# ---------------------------------------------------------------------------


def test_judge_prompt_contains_both_phrases_verbatim(configs):
    spec = build_judge_prompt(EntityKind.ONSET, "about 7 or 7:30 this evening",
                              "7:30 this evening", configs[EntityKind.ONSET])
    assert "about 7 or 7:30 this evening" in spec.rendered
    assert "7:30 this evening" in spec.rendered
    assert "@yes@" in spec.rendered and "@no@" in spec.rendered
    assert spec.method == "judge"


def test_judge_prompt_identity_case(configs):
    spec = build_judge_prompt(EntityKind.ONSET, "yesterday", "yesterday",
                              configs[EntityKind.ONSET])
    assert spec.rendered.count("yesterday") == 2


def test_judge_prompt_labels_ground_truth(configs):
    spec = build_judge_prompt(EntityKind.SEVERITY, "moderate in severity", "mild",
                              configs[EntityKind.SEVERITY])
    snapshot = (SNAPSHOT_DIR / "judge__severity.txt").read_text(encoding="utf-8")
    assert spec.rendered == snapshot.rstrip("\n")
    assert "Ground truth phrase: moderate in severity" in spec.rendered


def test_judge_prompt_requires_non_empty_phrases(configs):
    with pytest.raises(ValueError):
        build_judge_prompt(EntityKind.ONSET, "", "something", configs[EntityKind.ONSET])
    with pytest.raises(ValueError):
        build_judge_prompt(EntityKind.ONSET, "something", "", configs[EntityKind.ONSET])


def test_judge_template_file_override(tmp_path, configs):
    custom = tmp_path / "judge.txt"
    custom.write_text("Is {predicted} the same as {gold}? {entity_definition} @yes@/@no@",
                      encoding="utf-8")
    template = load_judge_template(custom)
    spec = build_judge_prompt(EntityKind.ONSET, "a", "b", configs[EntityKind.ONSET],
                              template=template)
    assert spec.rendered.startswith("Is b the same as a?")


# ---------------------------------------------------------------------------
# config loading
# ---------------------------------------------------------------------------


def test_default_config_covers_all_seven_entities(configs):
    assert set(configs) == set(SCORED_ENTITIES)
    for entity, config in configs.items():
        assert config.entity is entity
        assert len(config.few_shot) == 3
        for shot in config.few_shot:
            assert shot.final_answer.startswith("@")
            assert shot.final_answer.endswith("@")


def test_override_file_merges_single_entity(tmp_path, configs):
    override = tmp_path / "override.yaml"
    override.write_text(
        "entities:\n  onset:\n    definition: the very start of the problem\n",
        encoding="utf-8",
    )
    merged = load_prompt_config(override)
    assert merged[EntityKind.ONSET].definition == "the very start of the problem"
    # everything else falls back to the shipped defaults
    assert merged[EntityKind.ONSET].cue_label == configs[EntityKind.ONSET].cue_label
    for entity in SCORED_ENTITIES:
        if entity is not EntityKind.ONSET:
            assert merged[entity] == configs[entity]


def test_config_rejects_answer_without_delimiters(tmp_path):
    override = tmp_path / "bad.yaml"
    override.write_text(
        "entities:\n"
        "  onset:\n"
        "    few_shot:\n"
        "      - {hpi: note one, reasoning: [], answer: 'missing delims'}\n"
        "      - {hpi: note two, reasoning: [], answer: '@ @'}\n"
        "      - {hpi: note three, reasoning: [], answer: '@ @'}\n",
        encoding="utf-8",
    )
    with pytest.raises(PromptConfigError, match="delimiters"):
        load_prompt_config(override)


def test_config_rejects_entity_in_second_example(tmp_path):
    override = tmp_path / "bad.yaml"
    override.write_text(
        "entities:\n"
        "  onset:\n"
        "    few_shot:\n"
        "      - {hpi: note one, reasoning: [], answer: '@two days ago@'}\n"
        "      - {hpi: note two, reasoning: [], answer: '@yesterday@'}\n"
        "      - {hpi: note three, reasoning: [], answer: '@ @'}\n",
        encoding="utf-8",
    )
    with pytest.raises(PromptConfigError, match="few_shot\\[1\\]"):
        load_prompt_config(override)


def test_config_rejects_unknown_entity(tmp_path):
    override = tmp_path / "bad.yaml"
    override.write_text("entities:\n  time:\n    definition: nope\n", encoding="utf-8")
    with pytest.raises(PromptConfigError):
        load_prompt_config(override)


def test_config_rejects_malformed_yaml(tmp_path):
    override = tmp_path / "bad.yaml"
    override.write_text("entities: [unclosed", encoding="utf-8")
    with pytest.raises(PromptConfigError):
        load_prompt_config(override)
