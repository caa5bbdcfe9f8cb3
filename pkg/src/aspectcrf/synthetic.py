"""Synthetic multi-aspect corpus generator.

Sentences are chains of compact clauses, one aspect per clause, each clause
ending in the single opinion token that determines its aspect's polarity
("the pizza was great but service seemed awful while menu looked plain .").
The true opinion always sits exactly two positions after the aspect span;
adjacent clauses carry different polarities.

Only clauses with a left-hand neighbor become records. For those, the
previous clause's opinion token lands two or three positions before the
marked aspect, i.e. at the same distance as the true opinion on the other
side. Distance-based heuristics (position decay included) cannot break that
tie; resolving it requires localizing which side of the aspect belongs to
its own clause. Generating test sets with more clauses per sentence than the
training set stresses pooling: selective pooling keeps the evidence vector
at full strength while unweighted averaging dilutes it with every extra
clause.

Records are plain JSONL corpus rows (text, aspect_char_start,
aspect_char_end, label) plus the generator's own bookkeeping field
``opinion_char_span`` that tests use to find the true opinion token.
"""

from __future__ import annotations

import argparse
import json
from pathlib import Path

import numpy as np

ASPECTS = [
    ("battery", "life"),
    ("screen",),
    ("pizza",),
    ("service",),
    ("keyboard",),
    ("staff",),
    ("price", "tag"),
    ("menu",),
    ("wine", "list"),
    ("sushi",),
    ("delivery",),
    ("trackpad",),
    ("pasta",),
    ("decor",),
    ("salad",),
    ("burger",),
]
OPINIONS = {
    "positive": ["great", "fantastic", "lovely", "superb", "excellent", "wonderful", "delightful", "brilliant"],
    "negative": ["terrible", "awful", "dreadful", "disappointing", "lousy", "atrocious", "miserable", "horrendous"],
    "neutral": ["average", "ordinary", "standard", "typical", "unremarkable", "moderate", "plain", "tolerable"],
}
OPENERS = ["honestly", "overall", "frankly", "anyway", "yesterday"]
FILLERS = ["really", "somehow", "apparently", "certainly", "supposedly"]
VERBS = ["was", "seemed", "looked", "felt"]
LINKS = ["but", "and", "though", "while", "yet"]
LABEL_NAMES = tuple(OPINIONS)


def _pick(options, rng: np.random.Generator):
    return options[rng.integers(0, len(options))]


def _clause(aspect: tuple[str, ...], opinion: str, rng: np.random.Generator):
    """Clause tokens plus (aspect first, aspect last, opinion) local indices.

    Both layouts end with the opinion token two positions after the aspect.
    """
    a = len(aspect)
    verb = _pick(VERBS, rng)
    if rng.random() < 0.5:
        tokens = [*aspect, verb, opinion]  # A was o
        return tokens, 0, a - 1, a + 1
    tokens = ["the", *aspect, verb, opinion]  # the A was o
    return tokens, 1, a, a + 2


def _span_of(tokens: list[str], first: int, last: int) -> tuple[int, int]:
    """Character span of tokens[first..last] in the space-joined text."""
    start = sum(len(t) + 1 for t in tokens[:first])
    end = start + len(" ".join(tokens[first : last + 1]))
    return start, end


def _sentence(rng: np.random.Generator, min_clauses: int, max_clauses: int) -> list[dict]:
    """One sentence; every clause after the first yields a record."""
    k = int(rng.integers(min_clauses, max_clauses + 1))
    aspect_idx = rng.choice(len(ASPECTS), size=k, replace=False)
    perm = list(rng.permutation(LABEL_NAMES))
    labels = [perm[c % 3] for c in range(k)]  # neighbors always differ

    tokens: list[str] = []
    if rng.random() < 0.4:
        tokens.append(_pick(OPENERS, rng))
    placed = []  # (base offset, clause layout, label)
    for c, (ai, label) in enumerate(zip(aspect_idx, labels)):
        opinion = _pick(OPINIONS[label], rng)
        ctokens, first, last, op_idx = _clause(ASPECTS[ai], opinion, rng)
        if c > 0:
            tokens.append(_pick(LINKS, rng))
            if rng.random() < 0.25:
                tokens.append(_pick(FILLERS, rng))
        base = len(tokens)
        tokens.extend(ctokens)
        if c > 0:
            placed.append((base, first, last, op_idx, label))
    tokens.append(".")
    text = " ".join(tokens)

    records = []
    for base, first, last, op_idx, label in placed:
        aspect_span = _span_of(tokens, base + first, base + last)
        opinion_span = _span_of(tokens, base + op_idx, base + op_idx)
        records.append(
            {
                "text": text,
                "aspect_char_start": aspect_span[0],
                "aspect_char_end": aspect_span[1],
                "label": str(label),
                "opinion_char_span": list(opinion_span),
            }
        )
    return records


def generate_records(
    n_instances: int,
    rng: np.random.Generator,
    min_clauses: int = 2,
    max_clauses: int = 3,
) -> list[dict]:
    """Exactly n_instances records; sentences contribute their clauses in order."""
    if not 2 <= min_clauses <= max_clauses <= len(ASPECTS):
        raise ValueError(f"need 2 <= min_clauses <= max_clauses <= {len(ASPECTS)}")
    records: list[dict] = []
    while len(records) < n_instances:
        records.extend(_sentence(rng, min_clauses, max_clauses))
    return records[:n_instances]


def write_jsonl(path: str | Path, records: list[dict]) -> None:
    with open(path, "w", encoding="utf-8") as fh:
        for rec in records:
            fh.write(json.dumps(rec) + "\n")


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(description="generate a synthetic aspect corpus")
    parser.add_argument("out", help="output JSONL path")
    parser.add_argument("--instances", type=int, default=500)
    parser.add_argument("--seed", type=int, default=1)
    parser.add_argument("--min-clauses", type=int, default=2)
    parser.add_argument("--max-clauses", type=int, default=3)
    args = parser.parse_args(argv)
    records = generate_records(
        args.instances, np.random.default_rng(args.seed), args.min_clauses, args.max_clauses
    )
    write_jsonl(args.out, records)
    print(f"wrote {len(records)} instances to {args.out}")
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
