"""Prompt assembly: the six-part extraction prompt, baselines, ablations, judge.

Templates are literal text with named slots and no logic; everything an
entity-specific prompt says (definitions, cue phrases, reasoning steps,
few-shot examples) comes from a human-editable config file, so prompt
iteration never requires a code change. Rendering is deterministic:
identical inputs produce byte-identical prompts.
"""

from __future__ import annotations

from dataclasses import dataclass
from enum import Enum
from importlib import resources
from typing import Optional

import yaml

from .parsing import parse_delimited
from .types import EntityKind, HpiNote, ParseStatus, SCORED_ENTITIES


class PromptError(Exception):
    """Base for prompt assembly failures."""


class UnknownMethodError(PromptError):
    """No template exists for this method/entity combination."""


class ConfigMismatchError(PromptError):
    """The supplied config belongs to a different entity."""


class PromptConfigError(PromptError):
    """Config file is malformed or violates a few-shot invariant."""


class PromptMethod(Enum):
    OURS = "ours"
    PREFIX = "prefix"
    CLOZE = "cloze"
    ANTICIPATORY = "anticipatory"
    COT = "cot"
    HEURISTIC = "heuristic"
    ABLATION_NO_REASONING = "ablation_no_reasoning"
    ABLATION_NO_SELF_VERIFICATION = "ablation_no_self_verification"

    @classmethod
    def parse(cls, ident: str) -> "PromptMethod":
        key = ident.strip().lower().replace("-", "_")
        for method in cls:
            if method.value == key:
                return method
        raise UnknownMethodError(f"unknown prompt method: {ident!r}")


#: Baseline comparison columns in canonical report order.
COMPARE_METHODS = (
    PromptMethod.PREFIX,
    PromptMethod.CLOZE,
    PromptMethod.ANTICIPATORY,
    PromptMethod.COT,
    PromptMethod.HEURISTIC,
    PromptMethod.OURS,
)

#: Ablation rows in canonical report order.
ABLATION_METHODS = (
    PromptMethod.OURS,
    PromptMethod.ABLATION_NO_REASONING,
    PromptMethod.ABLATION_NO_SELF_VERIFICATION,
)


@dataclass(frozen=True)
class FewShotExample:
    """One worked example; the final answer is always "@...@" or "@ @"."""

    hpi_text: str
    reasoning_lines: tuple[str, ...]
    final_answer: str


@dataclass(frozen=True)
class EntityPromptConfig:
    entity: EntityKind
    definition: str
    cue_label: str
    cue_phrases: tuple[str, ...]
    cc_cue_phrases: tuple[str, ...]
    reasoning_steps: tuple[str, ...]
    few_shot: tuple[FewShotExample, ...]
    self_verification: str
    cot_answer: Optional[str] = None
    cot_gloss: Optional[str] = None


@dataclass(frozen=True)
class PromptPart:
    name: str
    text: str
    start: int  # character offset of this part in the rendered prompt


@dataclass(frozen=True)
class PromptSpec:
    method: str
    entity: EntityKind
    parts: tuple[PromptPart, ...]
    rendered: str


# ---------------------------------------------------------------------------
# Templates. Literal text with named slots; no logic.
# ---------------------------------------------------------------------------

PREFIX_TEMPLATE = (
    "In the EHR note, extract the words that describe the entity {entity}, EHR note: {note}"
)

CLOZE_TEMPLATE = (
    "The words that describe the entity ‘{entity}’ in the EHR note are ...."
    " EHR note: {note}"
)

ANTICIPATORY_TEMPLATE = (
    "Q1: What is {entity}? A1: `{entity}' means {definition}."
    "For ‘{entity}’ we will be looking {cue_label}. For example, {cue_list}, etc."
    " Q2: Extract the words that describe the entity ‘{entity}’ in the EHR note?"
    " EHR note: {note}"
)

COT_TEMPLATE = (
    "Extract the words that describe the entity ‘{entity}’ in the EHR note:\n"
    "EHR note: {example_note}\n"
    "\n"
    "Answer: ‘{example_answer}’{example_gloss}\n"
    "\n"
    "Question: Using the stored example extract the entity ‘{entity}’"
    " from the given EHR note\n"
    "EHR note: {note}"
)

HEURISTIC_TEMPLATE = (
    "Rules:\n"
    "Here are the rules to extract the entity ‘{entity}’ from the EHR note.\n"
    "{rules}\n"
    "\n"
    "Given the EHR note extract the entity ‘{entity}’ using the rules"
    " mentioned above. EHR note: {note}"
)

ABLATION_NO_REASONING_TEMPLATE = (
    "Definition: You are a chatbot who knows the task of `Named Entity recognition'."
    " You are provided with some clinical data\n"
    "related to a patients visit to the emergency department of a hospital."
    " The target task is to extract the the words\n"
    "that belong to the entity `{entity}'. `{entity}' means {definition}.\n"
    "For ‘{entity}’ we will be looking {cue_label}. For example, {cue_list}, etc.\n"
    "\n"
    "Now I will provide you with few examples\n"
    "\n"
    "{examples}\n"
    "\n"
    "{target}"
)

TASK_DEFINITION_TEMPLATE = (
    "Definition: You are a chatbot who knows the task of `Named Entity recognition'."
    " You are provided with some clinical data related to\n"
    "a patients visit to the emergency department (ED) of a hospital."
    " The target task is to extract the the words that belong to the entity `{entity}'."
    " For that we will first extract words related to the entity `Chief Complaint'"
    " and then based on that we will extract the words related `{entity}'."
)

ENTITY_DEFINITIONS_TEMPLATE = (
    "I will now give you the definition of both entities."
    " `Chief complaint' is the main issue/problem that the patient presents to the ED with."
    " `{entity}' means {definition} i.e the chief complaint (extracted before)."
)

CUE_PHRASE_GUIDANCE_TEMPLATE = (
    "You have to make sure that you follow the definition I provide and not interpret"
    " the meaning of `{entity}' in a general way. So I will be providing with you some"
    " examples on how to extract the entities `Chief Complaint' and `{entity}."
    " Basically we will be trying to mimic a physician's train of thought on how to"
    " extract these entities.\n"
    "We will be first looking for words that usually mark the starting of phrases"
    " related to `Chief Complaint'. For example, {cc_cue_list}, etc and mostly the"
    " actual chief complaint follows these words. For `{entity}' we will be looking"
    " {cue_label}. For example, {cue_list}, etc."
)

REASONING_STEPS_HEADER = "Putting this down into steps:"

FEW_SHOT_INTRO_1 = (
    "Now I will provide you with an example on how to extract the entity"
    " `Chief Complaint' and then the entity `{entity}'"
)
FEW_SHOT_INTRO_2 = (
    "Now I will provide you with an example where the Chief Complaint is present"
    " and but the entity `{entity}' is not present."
)
FEW_SHOT_INTRO_3 = (
    "Now I will provide you with an example where the Chief Complaint is not present"
    " and as a result the entity `{entity}' is not present as well."
)

DELIMITER_INSTRUCTION = (
    "When you provide the final phrase, add `@' tokens immediately before and after"
    " it so that the answer can be extracted easily. If the entity is not present in"
    " the note, answer with @ @."
)

TARGET_NOTE_TEMPLATE = (
    "Now given the EHR note below extract the entity `{entity}'.\n"
    "\n"
    "EHR note: {note}"
)

#: Part names of the six-part prompt, in their fixed order.
SIX_PART_ORDER = (
    "task_definition",
    "entity_definitions",
    "cue_phrase_guidance",
    "reasoning_steps_with_self_verification",
    "few_shot_examples",
    "delimiter_instruction",
)


def _cue_list(phrases) -> str:
    return ", ".join(f"`{p}'" for p in phrases)


def _example_body(example: FewShotExample) -> str:
    """Reasoning lines with the delimited answer appended to the last line."""
    if not example.reasoning_lines:
        return example.final_answer
    lines = list(example.reasoning_lines)
    lines[-1] = lines[-1] + " " + example.final_answer
    return "\n".join(lines)


def _numbered_steps(steps) -> str:
    return "\n".join(f"{i}) {step}" for i, step in enumerate(steps, start=1))


def _reasoning_steps_part(config: EntityPromptConfig, with_self_verification: bool) -> str:
    steps = list(config.reasoning_steps)
    if with_self_verification:
        # the verification step goes right before the final "provide the
        # phrase" step, so the model re-checks its reasoning before answering
        steps.insert(len(steps) - 1, config.self_verification)
    return REASONING_STEPS_HEADER + "\n\n" + _numbered_steps(steps)


def _few_shot_part(config: EntityPromptConfig) -> str:
    entity = config.entity.display
    ex1, ex2, ex3 = config.few_shot
    sections = [
        FEW_SHOT_INTRO_1.format(entity=entity),
        f"Example1: {ex1.hpi_text}\n\nReasoning steps:\n{_example_body(ex1)}",
        FEW_SHOT_INTRO_2.format(entity=entity),
        f"Example2: {ex2.hpi_text}\n\n{_example_body(ex2)}",
        FEW_SHOT_INTRO_3.format(entity=entity),
        f"Example3: {ex3.hpi_text}\n\n{_example_body(ex3)}",
    ]
    return "\n\n".join(sections)


def _assemble(method: PromptMethod, entity: EntityKind, named_parts, tail: str) -> PromptSpec:
    """Concatenate named parts, tracking each part's start offset.

    task_definition and entity_definitions share a paragraph (joined with a
    single space); every other boundary is a blank line. The tail is the
    target note section and is not a named part.
    """
    rendered = ""
    parts = []
    for i, (name, text) in enumerate(named_parts):
        if i:
            rendered += " " if name == "entity_definitions" else "\n\n"
        parts.append(PromptPart(name=name, text=text, start=len(rendered)))
        rendered += text
    rendered += "\n\n" + tail
    return PromptSpec(method=method.value, entity=entity, parts=tuple(parts), rendered=rendered)


def _build_reasoning_prompt(
    method: PromptMethod,
    entity: EntityKind,
    note: HpiNote,
    config: EntityPromptConfig,
    with_self_verification: bool,
) -> PromptSpec:
    display = entity.display
    steps_name = (
        "reasoning_steps_with_self_verification" if with_self_verification else "reasoning_steps"
    )
    named_parts = [
        ("task_definition", TASK_DEFINITION_TEMPLATE.format(entity=display)),
        (
            "entity_definitions",
            ENTITY_DEFINITIONS_TEMPLATE.format(entity=display, definition=config.definition),
        ),
        (
            "cue_phrase_guidance",
            CUE_PHRASE_GUIDANCE_TEMPLATE.format(
                entity=display,
                cc_cue_list=_cue_list(config.cc_cue_phrases),
                cue_label=config.cue_label,
                cue_list=_cue_list(config.cue_phrases),
            ),
        ),
        (steps_name, _reasoning_steps_part(config, with_self_verification)),
        ("few_shot_examples", _few_shot_part(config)),
    ]
    if method is PromptMethod.OURS:
        named_parts.append(("delimiter_instruction", DELIMITER_INSTRUCTION))
    tail = TARGET_NOTE_TEMPLATE.format(entity=display, note=note.text)
    return _assemble(method, entity, named_parts, tail)


def _single_part(method: PromptMethod, entity: EntityKind, text: str) -> PromptSpec:
    part = PromptPart(name="body", text=text, start=0)
    return PromptSpec(method=method.value, entity=entity, parts=(part,), rendered=text)


def build_extraction_prompt(
    entity: EntityKind,
    note: HpiNote,
    method: PromptMethod,
    config: EntityPromptConfig,
) -> PromptSpec:
    """Render the prompt for one (entity, note, method) triple.

    Deterministic: identical inputs give a byte-identical prompt. Every
    method's prompt ends with the target note text.
    """
    if entity is EntityKind.CHIEF_COMPLAINT:
        raise UnknownMethodError("chief_complaint has no extraction template; it is "
                                 "extracted inside the reasoning steps, not as a target")
    if config.entity is not entity:
        raise ConfigMismatchError(
            f"config is for {config.entity.ident}, prompt requested for {entity.ident}"
        )
    display = entity.display

    if method is PromptMethod.PREFIX:
        return _single_part(
            method, entity, PREFIX_TEMPLATE.format(entity=display, note=note.text)
        )
    if method is PromptMethod.CLOZE:
        return _single_part(
            method, entity, CLOZE_TEMPLATE.format(entity=display, note=note.text)
        )
    if method is PromptMethod.ANTICIPATORY:
        text = ANTICIPATORY_TEMPLATE.format(
            entity=display,
            definition=config.definition,
            cue_label=config.cue_label,
            cue_list=_cue_list(config.cue_phrases),
            note=note.text,
        )
        return _single_part(method, entity, text)
    if method is PromptMethod.COT:
        example = config.few_shot[0]
        answer = config.cot_answer
        if answer is None:
            answer = parse_delimited(example.final_answer).phrase
        gloss = f" ({config.cot_gloss})" if config.cot_gloss else ""
        text = COT_TEMPLATE.format(
            entity=display,
            example_note=example.hpi_text,
            example_answer=answer,
            example_gloss=gloss,
            note=note.text,
        )
        return _single_part(method, entity, text)
    if method is PromptMethod.HEURISTIC:
        text = HEURISTIC_TEMPLATE.format(
            entity=display,
            rules=_numbered_steps(config.reasoning_steps),
            note=note.text,
        )
        return _single_part(method, entity, text)
    if method is PromptMethod.ABLATION_NO_REASONING:
        examples = "\n\n".join(
            f"Example{i}: {ex.hpi_text}\n\nAnswer: {ex.final_answer}"
            for i, ex in enumerate(config.few_shot, start=1)
        )
        text = ABLATION_NO_REASONING_TEMPLATE.format(
            entity=display,
            definition=config.definition,
            cue_label=config.cue_label,
            cue_list=_cue_list(config.cue_phrases),
            examples=examples,
            target=TARGET_NOTE_TEMPLATE.format(entity=display, note=note.text),
        )
        return _single_part(method, entity, text)
    if method is PromptMethod.ABLATION_NO_SELF_VERIFICATION:
        return _build_reasoning_prompt(method, entity, note, config, with_self_verification=False)
    if method is PromptMethod.OURS:
        return _build_reasoning_prompt(method, entity, note, config, with_self_verification=True)
    raise UnknownMethodError(f"no template for method {method!r}")  # pragma: no cover


# ---------------------------------------------------------------------------
# Judge prompt
# ---------------------------------------------------------------------------


def load_judge_template(path=None) -> str:
    if path is not None:
        with open(path, encoding="utf-8") as fh:
            return fh.read().rstrip("\n")
    return resources.files("opqrs").joinpath("data/judge_template.txt").read_text(
        encoding="utf-8"
    ).rstrip("\n")


def build_judge_prompt(
    entity: EntityKind,
    gold_phrase: str,
    predicted_phrase: str,
    config: EntityPromptConfig,
    template: Optional[str] = None,
) -> PromptSpec:
    """Render the yes/no equivalence prompt for a (gold, predicted) pair.

    Both phrases must be non-empty: empty cases are decided structurally by
    the classifier and never reach the judge.
    """
    if config.entity is not entity:
        raise ConfigMismatchError(
            f"config is for {config.entity.ident}, judge requested for {entity.ident}"
        )
    if not gold_phrase or not predicted_phrase:
        raise ValueError("judge prompts require non-empty gold and predicted phrases")
    if template is None:
        template = load_judge_template()
    entity_definition = f"`{entity.display}' means {config.definition}."
    rendered = template.format(
        entity_definition=entity_definition, gold=gold_phrase, predicted=predicted_phrase
    )
    part = PromptPart(name="body", text=rendered, start=0)
    return PromptSpec(method="judge", entity=entity, parts=(part,), rendered=rendered)


# ---------------------------------------------------------------------------
# Config loading
# ---------------------------------------------------------------------------

_CONFIG_KEYS = {
    "definition",
    "cue_label",
    "cue_phrases",
    "cc_cue_phrases",
    "reasoning_steps",
    "few_shot",
    "cot_answer",
    "cot_gloss",
    "self_verification",
}


def _default_raw_config() -> dict:
    text = resources.files("opqrs").joinpath("data/prompt_config.yaml").read_text(
        encoding="utf-8"
    )
    return yaml.safe_load(text)


def _build_entity_config(entity: EntityKind, raw: dict, self_verification: str) -> EntityPromptConfig:
    problems = []
    unknown = set(raw) - _CONFIG_KEYS
    if unknown:
        problems.append(f"unknown keys: {sorted(unknown)}")
    definition = raw.get("definition", "")
    if not definition:
        problems.append("missing definition")
    cue_phrases = tuple(raw.get("cue_phrases") or ())
    if not cue_phrases:
        problems.append("cue_phrases must be non-empty")
    cc_cue_phrases = tuple(raw.get("cc_cue_phrases") or ())
    if not cc_cue_phrases:
        problems.append("cc_cue_phrases must be non-empty")
    steps = tuple(raw.get("reasoning_steps") or ())
    if len(steps) < 2:
        problems.append("reasoning_steps needs at least two steps")
    raw_shots = raw.get("few_shot") or []
    if len(raw_shots) != 3:
        problems.append(f"few_shot must have exactly 3 examples, got {len(raw_shots)}")
    shots = []
    for i, shot in enumerate(raw_shots):
        hpi = shot.get("hpi", "")
        answer = shot.get("answer", "")
        lines = tuple(shot.get("reasoning") or ())
        if not hpi:
            problems.append(f"few_shot[{i}] missing hpi text")
        if not (answer.startswith("@") and answer.endswith("@") and len(answer) >= 2):
            problems.append(f"few_shot[{i}] answer must be wrapped in '@' delimiters")
            continue
        outcome = parse_delimited(answer)
        if i == 0 and outcome.status is not ParseStatus.PARSED:
            problems.append("few_shot[0] must contain the entity (non-empty answer)")
        if i in (1, 2) and outcome.status is not ParseStatus.PARSED_EMPTY:
            problems.append(f"few_shot[{i}] must not contain the entity (answer must be '@ @')")
        shots.append(FewShotExample(hpi_text=hpi, reasoning_lines=lines, final_answer=answer))
    if problems:
        raise PromptConfigError(f"{entity.ident}: " + "; ".join(problems))
    return EntityPromptConfig(
        entity=entity,
        definition=definition,
        cue_label=raw.get("cue_label", ""),
        cue_phrases=cue_phrases,
        cc_cue_phrases=cc_cue_phrases,
        reasoning_steps=steps,
        few_shot=tuple(shots),
        self_verification=raw.get("self_verification") or self_verification,
        cot_answer=raw.get("cot_answer"),
        cot_gloss=raw.get("cot_gloss"),
    )


def load_prompt_config(path=None) -> dict[EntityKind, EntityPromptConfig]:
    """Load per-entity prompt configs, merging ``path`` over shipped defaults.

    Overrides merge at field level: an entity block in the user file only
    replaces the fields it names. All few-shot invariants are validated
    after the merge.
    """
    base = _default_raw_config()
    if path is not None:
        try:
            with open(path, encoding="utf-8") as fh:
                override = yaml.safe_load(fh)
        except yaml.YAMLError as exc:
            raise PromptConfigError(f"cannot parse prompt config {path}: {exc}") from exc
        if not isinstance(override, dict):
            raise PromptConfigError(f"prompt config {path} must be a mapping")
        if "self_verification" in override:
            base["self_verification"] = override["self_verification"]
        for key, block in (override.get("entities") or {}).items():
            try:
                entity = EntityKind.parse(key)
            except ValueError as exc:
                raise PromptConfigError(str(exc)) from exc
            if entity not in SCORED_ENTITIES:
                raise PromptConfigError(f"{key}: not a configurable extraction target")
            merged = dict(base["entities"].get(entity.ident, {}))
            merged.update(block or {})
            base["entities"][entity.ident] = merged
    self_verification = base.get("self_verification", "")
    configs = {}
    for entity in SCORED_ENTITIES:
        raw = base["entities"].get(entity.ident)
        if raw is None:
            raise PromptConfigError(f"no config for entity {entity.ident}")
        configs[entity] = _build_entity_config(entity, raw, self_verification)
    return configs
