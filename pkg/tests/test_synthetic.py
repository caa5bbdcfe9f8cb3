"""Tests for the synthetic corpus generator's stated guarantees."""

from __future__ import annotations

import json

import numpy as np
import pytest

from aspectcrf.data import char_span_to_token_span, parse_corpus, tokenize
from aspectcrf.synthetic import (
    ASPECTS,
    LABEL_NAMES,
    OPINIONS,
    generate_records,
    main,
    write_jsonl,
)

OPINION_TO_LABEL = {word: label for label, words in OPINIONS.items() for word in words}


def token_span(rec, key_start, key_end=None):
    _, spans = tokenize(rec["text"])
    if key_end is None:
        s, e = rec[key_start]
    else:
        s, e = rec[key_start], rec[key_end]
    return char_span_to_token_span(spans, s, e)


class TestRecordGeometry:
    def setup_method(self):
        self.records = generate_records(400, np.random.default_rng(42))

    def test_exact_count(self):
        assert len(self.records) == 400

    def test_aspect_span_matches_text(self):
        for rec in self.records:
            surface = rec["text"][rec["aspect_char_start"]:rec["aspect_char_end"]]
            assert tuple(surface.split(" ")) in [tuple(a) for a in ASPECTS]

    def test_opinion_token_determines_label(self):
        for rec in self.records:
            s, e = rec["opinion_char_span"]
            assert OPINION_TO_LABEL[rec["text"][s:e]] == rec["label"]

    def test_true_opinion_within_two_positions(self):
        for rec in self.records:
            ai, aj = token_span(rec, "aspect_char_start", "aspect_char_end")
            ok, _ = token_span(rec, "opinion_char_span")
            assert 1 <= ok - aj <= 2

    def test_distractor_opinions_attached_to_other_aspects(self):
        # every sentence carries opinion tokens besides the true one, and
        # each is the true opinion of some other record of the same sentence
        by_text = {}
        for rec in self.records:
            by_text.setdefault(rec["text"], []).append(rec)
        multi = 0
        for rec in self.records:
            tokens, spans = tokenize(rec["text"])
            own = token_span(rec, "opinion_char_span")[0]
            others = [
                k for k, tok in enumerate(tokens)
                if tok in OPINION_TO_LABEL and k != own
            ]
            if others:
                multi += 1
        assert multi == len(self.records)  # first clause always leaves a distractor

    def test_nearest_left_distractor_often_ties_true_distance(self):
        ties = 0
        for rec in self.records:
            tokens, _ = tokenize(rec["text"])
            ai, aj = token_span(rec, "aspect_char_start", "aspect_char_end")
            ok = token_span(rec, "opinion_char_span")[0]
            d_true = ok - aj
            lefts = [
                ai - k for k, tok in enumerate(tokens)
                if tok in OPINION_TO_LABEL and k < ai
            ]
            if lefts and min(lefts) == d_true:
                ties += 1
        assert ties >= len(self.records) // 4

    def test_neighboring_polarities_differ(self):
        by_text = {}
        for rec in self.records:
            by_text.setdefault(rec["text"], []).append(rec)
        for recs in by_text.values():
            recs = sorted(recs, key=lambda r: r["aspect_char_start"])
            for a, b in zip(recs, recs[1:]):
                assert a["label"] != b["label"]

    def test_clause_count_range_respected(self):
        records = generate_records(120, np.random.default_rng(3), 4, 6)
        for rec in records:
            tokens, _ = tokenize(rec["text"])
            opinion_count = sum(1 for tok in tokens if tok in OPINION_TO_LABEL)
            assert 4 <= opinion_count <= 6

    def test_bad_clause_range_rejected(self):
        with pytest.raises(ValueError):
            generate_records(10, np.random.default_rng(0), 1, 3)
        with pytest.raises(ValueError):
            generate_records(10, np.random.default_rng(0), 5, 4)


class TestDeterminismAndIo:
    def test_same_seed_same_records(self):
        a = generate_records(50, np.random.default_rng(7))
        b = generate_records(50, np.random.default_rng(7))
        assert a == b

    def test_jsonl_parses_into_instances(self, tmp_path):
        path = tmp_path / "synthetic.jsonl"
        write_jsonl(path, generate_records(60, np.random.default_rng(1)))
        instances, vocab, report = parse_corpus(path)
        assert len(instances) == 60
        assert report.dropped_unaligned == 0
        labels = {inst.label for inst in instances}
        assert labels == set(LABEL_NAMES)

    def test_cli_entry_point(self, tmp_path, capsys):
        out = tmp_path / "gen.jsonl"
        assert main([str(out), "--instances", "25", "--seed", "9"]) == 0
        lines = out.read_text(encoding="utf-8").splitlines()
        assert len(lines) == 25
        json.loads(lines[0])
        assert "wrote 25" in capsys.readouterr().out
