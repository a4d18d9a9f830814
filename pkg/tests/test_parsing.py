import json

import pytest

from bpm_eval.errors import EmptyInstruction, SchemaViolation, Unparseable
from bpm_eval.parsing import (
    ADD,
    REMOVE,
    REPLACE_OR_MODIFY,
    ParsedInstruction,
    build_parse_prompt,
    fallback_parse,
    validate_parse_response,
)


class TestParsedInstruction:
    def test_edit_case_add(self):
        p = ParsedInstruction(None, "dog", None, "unchanged", "unchanged")
        assert p.edit_case == ADD

    def test_edit_case_remove(self):
        p = ParsedInstruction("clock", None, None, "unchanged", "unchanged")
        assert p.edit_case == REMOVE

    def test_edit_case_replace(self):
        p = ParsedInstruction("cat", "dog", None, "unchanged", "unchanged")
        assert p.edit_case == REPLACE_OR_MODIFY

    def test_both_objects_absent_rejected(self):
        with pytest.raises(SchemaViolation):
            ParsedInstruction(None, None, None, "unchanged", "unchanged")

    def test_bad_enums_rejected(self):
        with pytest.raises(SchemaViolation) as e:
            ParsedInstruction("a", "b", None, "north", "unchanged")
        assert e.value.field == "pos_st"
        with pytest.raises(SchemaViolation) as e:
            ParsedInstruction("a", "b", None, "left", "huge")
        assert e.value.field == "size_st"

    def test_round_trips_through_dict(self):
        p = ParsedInstruction("cat", "dog", "sofa", "left", "larger")
        assert ParsedInstruction(**p.to_dict()) == p


class TestPrompt:
    def test_contains_instruction_everywhere(self):
        text = build_parse_prompt("swap the hat for a cap")
        assert text.count("swap the hat for a cap") >= 3
        assert "{instruction}" not in text

    def test_mentions_required_keys(self):
        text = build_parse_prompt("x")
        for key in ("source_object", "target_object", "reference_object", "pos_st", "size_st"):
            assert key in text

    def test_empty_instruction(self):
        with pytest.raises(EmptyInstruction):
            build_parse_prompt("   ")


class TestValidateResponse:
    def good(self, **kw):
        base = {
            "source_object": "red car",
            "target_object": "blue car",
            "reference_object": None,
            "pos_st": "unchanged",
            "size_st": "unchanged",
        }
        base.update(kw)
        return json.dumps(base)

    def test_happy_path(self):
        p = validate_parse_response(self.good())
        assert p.source_object == "red car"
        assert p.target_object == "blue car"
        assert p.reference_object is None

    def test_none_spellings_normalize(self):
        for spelled in ("None", "null", "", "  "):
            p = validate_parse_response(self.good(target_object=spelled, source_object="x"))
            assert p.target_object is None

    def test_whitespace_and_case_folded(self):
        p = validate_parse_response(self.good(source_object="  Big   DOG "))
        assert p.source_object == "big dog"

    def test_enum_case_folded(self):
        p = validate_parse_response(self.good(pos_st="LEFT", size_st="Larger"))
        assert (p.pos_st, p.size_st) == ("left", "larger")

    def test_invalid_json(self):
        with pytest.raises(SchemaViolation) as e:
            validate_parse_response("{not json")
        assert e.value.field == "response"

    def test_non_object_payload(self):
        with pytest.raises(SchemaViolation):
            validate_parse_response("[1,2]")

    def test_missing_key(self):
        payload = json.loads(self.good())
        del payload["pos_st"]
        with pytest.raises(SchemaViolation) as e:
            validate_parse_response(json.dumps(payload))
        assert e.value.field == "pos_st"

    def test_bad_enum_value(self):
        with pytest.raises(SchemaViolation):
            validate_parse_response(self.good(size_st="tiny"))

    def test_both_null_objects(self):
        with pytest.raises(SchemaViolation):
            validate_parse_response(self.good(source_object=None, target_object="null"))

    def test_non_string_object(self):
        with pytest.raises(SchemaViolation):
            validate_parse_response(self.good(source_object=7))


class TestFallbackParse:
    def test_remove(self):
        p = fallback_parse("Remove the clock.")
        assert p == ParsedInstruction("clock", None, None, "unchanged", "unchanged")

    def test_replace_with(self):
        p = fallback_parse("replace the cat with a dog")
        assert (p.source_object, p.target_object) == ("cat", "dog")
        assert p.edit_case == REPLACE_OR_MODIFY

    def test_change_to(self):
        p = fallback_parse("change the red box to a blue box")
        assert (p.source_object, p.target_object) == ("red box", "blue box")

    def test_make_bigger(self):
        p = fallback_parse("make the balloon bigger")
        assert p.source_object == p.target_object == "balloon"
        assert p.size_st == "larger"

    def test_make_smaller(self):
        assert fallback_parse("make the hat smaller").size_st == "smaller"

    def test_move_directions(self):
        for text, want in [
            ("move the ball to the left", "left"),
            ("move the ball right", "right"),
            ("move the ball upwards", "up"),
            ("move the ball down", "down"),
        ]:
            p = fallback_parse(text)
            assert p.pos_st == want
            assert p.source_object == p.target_object == "ball"

    def test_add_plain(self):
        p = fallback_parse("add a bird")
        assert p.edit_case == ADD
        assert p.target_object == "bird"
        assert p.reference_object is None
        assert p.pos_st == "unchanged"

    def test_add_relative_lr(self):
        p = fallback_parse("add a lamp to the left of the sofa")
        assert (p.target_object, p.reference_object, p.pos_st) == ("lamp", "sofa", "left")

    def test_add_above_below(self):
        p = fallback_parse("add a star above the tree")
        assert (p.reference_object, p.pos_st) == ("tree", "up")
        p = fallback_parse("add a rug below the table")
        assert (p.reference_object, p.pos_st) == ("table", "down")

    def test_unparseable(self):
        with pytest.raises(Unparseable):
            fallback_parse("please could you maybe tidy this up")

    def test_empty(self):
        with pytest.raises(EmptyInstruction):
            fallback_parse("")
