#!/usr/bin/env python3
"""Generate the bundled synthetic story corpus.

Deterministic (fixed seed): re-running reproduces the committed file
byte for byte. The text is plain ASCII with simple recurring structure
so a small byte-level language model has something learnable.

Usage: python3 tools/gen_corpus.py [out_path]
"""

import random
import sys

SEED = 20240817
TARGET_BYTES = 1_000_000

NAMES = [
    "mira", "tomas", "edda", "rook", "selin", "ivo", "petra", "callum",
    "noor", "basil", "greta", "orin", "lena", "hugo", "sable", "wren",
]
PLACES = [
    "the harbor", "the old mill", "the orchard", "the lighthouse",
    "the market square", "the pine forest", "the river bend", "the quarry",
    "the observatory", "the tide pools", "the granary", "the foothills",
]
OBJECTS = [
    "a brass key", "a folded map", "a clay lantern", "a silver coin",
    "a worn ledger", "a glass compass", "a coil of rope", "a tin whistle",
    "a sealed letter", "a carved flute", "a spool of thread", "a small bell",
]
WEATHER = [
    "under a pale sky", "in the early fog", "before the storm broke",
    "as the frost lifted", "while the wind held", "at low tide",
    "after the long rain", "in the last light",
]
VERBS = ["found", "carried", "hid", "traded", "repaired", "studied", "buried", "borrowed"]
FEELINGS = [
    "and felt lighter for it", "and said nothing of it", "and slept soundly",
    "and counted the days", "and kept the habit", "and told no one",
    "and marked the ledger", "and watched the road",
]

TEMPLATES = [
    "{n1} {v} {o} near {p} {w}.",
    "at dawn {n1} walked to {p} and met {n2} there.",
    "{n1} and {n2} shared bread by {p} {w}.",
    "the story goes that {n1} {v} {o} twice in one winter.",
    "{n2} asked about {o}, but {n1} only pointed toward {p}.",
    "every market day {n1} {v} {o} {f}.",
    "{n1} left {o} at {p} for {n2} to find.",
    "when the bell rang, {n2} hurried past {p} {w}.",
    "{n1} wrote that {p} was quiet again, {f}.",
    "no one at {p} remembered who first {v} {o}.",
]


def sentence(rng: random.Random) -> str:
    t = rng.choice(TEMPLATES)
    n1, n2 = rng.sample(NAMES, 2)
    return t.format(
        n1=n1,
        n2=n2,
        p=rng.choice(PLACES),
        o=rng.choice(OBJECTS),
        w=rng.choice(WEATHER),
        v=rng.choice(VERBS),
        f=rng.choice(FEELINGS),
    )


def paragraph(rng: random.Random) -> str:
    return " ".join(sentence(rng) for _ in range(rng.randint(3, 6)))


def main() -> None:
    out = sys.argv[1] if len(sys.argv) > 1 else "crates/core/data/corpus.txt"
    rng = random.Random(SEED)
    chunks = []
    size = 0
    while size < TARGET_BYTES:
        p = paragraph(rng) + "\n\n"
        chunks.append(p)
        size += len(p)
    text = "".join(chunks)
    with open(out, "w", encoding="ascii") as f:
        f.write(text)
    print(f"wrote {len(text)} bytes to {out}")


if __name__ == "__main__":
    main()
