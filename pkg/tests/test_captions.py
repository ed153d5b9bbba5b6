"""Caption cleaning and trigger-word preparation."""

import pytest
from hypothesis import given, settings
from hypothesis import strategies as st

from stitchpano.captions import CaptionRule, prepare_caption
from stitchpano.errors import ConfigError
from stitchpano.tensors import Rng

TRIGGER = "360-degree panoramic image"


class TestPrepareCaption:
    def test_plain_caption_gets_trigger(self):
        assert (
            prepare_caption("a living room with a couch and a table")
            == "360-degree panoramic image, a living room with a couch and a table"
        )

    def test_blocklisted_tag_removed(self):
        assert prepare_caption("3 6 0 picture, a castle") == "360-degree panoramic image, a castle"

    def test_empty_input_yields_bare_trigger(self):
        assert prepare_caption("") == TRIGGER

    def test_idempotent(self):
        for raw in (
            "a castle",
            "3 6 0 picture, a castle",
            "",
            "  spaced   out ,, caption ",
            TRIGGER,
            TRIGGER + ", already prepared",
        ):
            once = prepare_caption(raw)
            assert prepare_caption(once) == once

    def test_result_never_contains_blocklist_entry(self):
        rule = CaptionRule()
        for raw in ("3 6 0 picture", "x 3 6 0 picture y", "3 6 0 picture, 3 6 0 picture"):
            assert "3 6 0 picture" not in prepare_caption(raw, rule)

    def test_whitespace_and_comma_debris_collapsed(self):
        assert (
            prepare_caption("  a   room , ,  with a view ,")
            == "360-degree panoramic image, a room, with a view"
        )

    def test_custom_rule(self):
        rule = CaptionRule(blocklist=("junk tag",), trigger="wide view", separator=", ")
        assert prepare_caption("junk tag, a pier", rule) == "wide view, a pier"

    def test_rule_validation(self):
        with pytest.raises(ConfigError):
            CaptionRule(trigger="")
        with pytest.raises(ConfigError):
            CaptionRule(blocklist=("ok", ""))


class TestFuzzIdempotence:
    def test_seeded_corpus_of_100(self):
        words = ["room", "castle", "3 6 0 picture", "table", ",", " ", "sky,", "a", TRIGGER]
        gen = Rng(99).generator()
        for _ in range(100):
            count = int(gen.integers(0, 12))
            raw = " ".join(words[int(gen.integers(0, len(words)))] for _ in range(count))
            once = prepare_caption(raw)
            assert prepare_caption(once) == once
            assert "3 6 0 picture" not in once
            assert once.startswith(TRIGGER)

    @settings(max_examples=200, deadline=None)
    @given(st.text(alphabet=st.characters(blacklist_categories=("Cs",)), max_size=80))
    def test_arbitrary_text(self, raw):
        once = prepare_caption(raw)
        assert prepare_caption(once) == once
        assert once.startswith(TRIGGER) or once == TRIGGER
