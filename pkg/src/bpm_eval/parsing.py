"""Instruction parsing: prompt assembly, response validation, template fallback.

The authoritative parse comes from an LLM behind the provider protocol; the
template grammar here exists so the engine stays deterministic and testable
with no model in the loop. It refuses (raises Unparseable) rather than guess.
"""

from __future__ import annotations

import json
import re
from dataclasses import dataclass
from importlib import resources

from .errors import EmptyInstruction, SchemaViolation, Unparseable

POSITION_STATES = ("left", "right", "up", "down", "unchanged")
SIZE_STATES = ("larger", "smaller", "unchanged")

ADD = "add"
REMOVE = "remove"
REPLACE_OR_MODIFY = "replace_or_modify"


@dataclass(frozen=True)
class ParsedInstruction:
    """Structured form of an editing instruction.

    edit_case is fully determined by which objects are present: a missing
    source means an addition, a missing target a removal, both present a
    replacement or in-place modification.
    """

    source_object: str | None
    target_object: str | None
    reference_object: str | None
    pos_st: str
    size_st: str

    def __post_init__(self):
        if self.pos_st not in POSITION_STATES:
            raise SchemaViolation("pos_st", f"unknown value {self.pos_st!r}")
        if self.size_st not in SIZE_STATES:
            raise SchemaViolation("size_st", f"unknown value {self.size_st!r}")
        if self.source_object is None and self.target_object is None:
            raise SchemaViolation("target_object", "source and target cannot both be absent")

    @property
    def edit_case(self) -> str:
        if self.source_object is None:
            return ADD
        if self.target_object is None:
            return REMOVE
        return REPLACE_OR_MODIFY

    def to_dict(self) -> dict:
        return {
            "source_object": self.source_object,
            "target_object": self.target_object,
            "reference_object": self.reference_object,
            "pos_st": self.pos_st,
            "size_st": self.size_st,
        }


_PROMPT_FILES = ("object_identify.txt", "size_state.txt", "position_state.txt")


def build_parse_prompt(instruction: str) -> str:
    """Concatenate the three parsing prompt blocks with the instruction filled in."""
    if not instruction or not instruction.strip():
        raise EmptyInstruction("instruction is empty")
    blocks = []
    for name in _PROMPT_FILES:
        template = resources.files("bpm_eval.prompts").joinpath(name).read_text(encoding="utf-8")
        blocks.append(template.replace("{instruction}", instruction))
    return "\n".join(blocks)


def _norm_object(value) -> str | None:
    if value is None:
        return None
    if not isinstance(value, str):
        raise SchemaViolation("object", f"expected string or null, got {type(value).__name__}")
    text = value.strip().lower()
    if text in ("", "none", "null"):
        return None
    return re.sub(r"\s+", " ", text)


def validate_parse_response(raw: str) -> ParsedInstruction:
    """Coerce a provider response into a ParsedInstruction, strictly.

    The response must be a single JSON object with the fixed keys; enum values
    are validated verbatim after lowercasing and object phrases are trimmed.
    """
    try:
        payload = json.loads(raw)
    except (TypeError, ValueError) as exc:
        raise SchemaViolation("response", f"not valid JSON: {exc}") from exc
    if not isinstance(payload, dict):
        raise SchemaViolation("response", "expected a JSON object")

    for key in ("source_object", "target_object", "pos_st", "size_st"):
        if key not in payload:
            raise SchemaViolation(key, "missing")

    source = _norm_object(payload.get("source_object"))
    target = _norm_object(payload.get("target_object"))
    reference = _norm_object(payload.get("reference_object"))

    pos_st = str(payload["pos_st"]).strip().lower()
    if pos_st not in POSITION_STATES:
        raise SchemaViolation("pos_st", f"unknown value {payload['pos_st']!r}")
    size_st = str(payload["size_st"]).strip().lower()
    if size_st not in SIZE_STATES:
        raise SchemaViolation("size_st", f"unknown value {payload['size_st']!r}")

    if source is None and target is None:
        raise SchemaViolation("target_object", "source and target cannot both be None")
    return ParsedInstruction(source, target, reference, pos_st, size_st)


def _clean_phrase(phrase: str) -> str:
    text = phrase.strip().strip(".!").strip()
    text = re.sub(r"^(?:the|a|an)\s+", "", text)
    return re.sub(r"\s+", " ", text)


_ADD_RE = re.compile(
    r"^add\s+(?P<obj>.+?)"
    r"(?:\s+to\s+the\s+(?P<lr>left|right)\s+of\s+(?P<ref_lr>.+)"
    r"|\s+(?P<ab>above|below)\s+(?P<ref_ab>.+))?$"
)
_REMOVE_RE = re.compile(r"^remove\s+(?P<obj>.+)$")
_REPLACE_RE = re.compile(r"^replace\s+(?P<src>.+?)\s+with\s+(?P<tgt>.+)$")
_CHANGE_RE = re.compile(r"^change\s+(?P<src>.+?)\s+to\s+(?P<tgt>.+)$")
_MAKE_RE = re.compile(r"^make\s+(?P<obj>.+?)\s+(?P<size>bigger|larger|smaller)$")
_MOVE_RE = re.compile(r"^move\s+(?P<obj>.+?)\s+(?:to\s+the\s+)?(?P<dir>left|right|up|down)(?:wards?)?$")


def fallback_parse(instruction: str) -> ParsedInstruction:
    """Deterministic parse of templated instructions; Unparseable otherwise."""
    if not instruction or not instruction.strip():
        raise EmptyInstruction("instruction is empty")
    text = re.sub(r"\s+", " ", instruction.strip().lower()).rstrip(".!").strip()

    m = _REMOVE_RE.match(text)
    if m:
        return ParsedInstruction(_clean_phrase(m["obj"]), None, None, "unchanged", "unchanged")

    m = _REPLACE_RE.match(text) or _CHANGE_RE.match(text)
    if m:
        return ParsedInstruction(
            _clean_phrase(m["src"]), _clean_phrase(m["tgt"]), None, "unchanged", "unchanged"
        )

    m = _MAKE_RE.match(text)
    if m:
        obj = _clean_phrase(m["obj"])
        size_st = "smaller" if m["size"] == "smaller" else "larger"
        return ParsedInstruction(obj, obj, None, "unchanged", size_st)

    m = _MOVE_RE.match(text)
    if m:
        obj = _clean_phrase(m["obj"])
        return ParsedInstruction(obj, obj, None, m["dir"], "unchanged")

    m = _ADD_RE.match(text)
    if m:
        if m["lr"]:
            pos_st, ref = m["lr"], _clean_phrase(m["ref_lr"])
        elif m["ab"]:
            pos_st, ref = ("up" if m["ab"] == "above" else "down"), _clean_phrase(m["ref_ab"])
        else:
            pos_st, ref = "unchanged", None
        return ParsedInstruction(None, _clean_phrase(m["obj"]), ref, pos_st, "unchanged")

    raise Unparseable(f"no template matches: {instruction!r}")
