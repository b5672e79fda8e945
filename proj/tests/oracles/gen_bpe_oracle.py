#!/usr/bin/env python3
"""Regenerates bpe_oracle.hpp.

Independent byte-level BPE trainer used as an oracle: greedy
highest-frequency pair merges with lexicographic (left bytes, right bytes)
tie-breaking, whitespace pre-tokenization into maximal [spaces][non-spaces]
segments, skipping any merge whose concatenation collides with an existing
piece, and left-to-right non-overlapping merge application.

Run from the repository root:  python3 tests/oracles/gen_bpe_oracle.py
"""

OUT = "tests/oracles/bpe_oracle.hpp"

CORPUS = [
    "the cat sat on the mat",
    "the cat ate the apple",
    "a dog sat on the log",
    "the dog and the cat nap",
    "an apple a day keeps doctor away",
    "banana bandana cabana",
    "aaaa aaaa aa",
    "low lower lowest slow slower",
    "the the the then them they",
]
NUM_MERGES = 48
SAMPLE = "the cat ate a banana"


def pretokenize(text):
    segs = []
    i, n = 0, len(text)
    while i < n:
        start = i
        while i < n and text[i] == " ":
            i += 1
        while i < n and text[i] != " ":
            i += 1
        segs.append(text[start:i])
    return segs


def train(corpus, num_merges):
    pieces = [bytes([b]) for b in range(256)]
    existing = set(pieces)
    seg_counts = {}
    for line in corpus:
        for seg in pretokenize(line):
            seg_counts[seg.encode()] = seg_counts.get(seg.encode(), 0) + 1
    segs = sorted(
        ([list(s), c] for s, c in seg_counts.items()),
        key=lambda e: e[0],
    )
    # Token lists hold byte values 0..255 first, then merge ids 256+.
    merges = []
    banned = set()
    while len(merges) < num_merges:
        counts = {}
        for toks, c in segs:
            for i in range(len(toks) - 1):
                p = (toks[i], toks[i + 1])
                counts[p] = counts.get(p, 0) + c
        best, best_count = None, 0
        for p, c in counts.items():
            if p in banned or c < best_count:
                continue
            if c > best_count:
                best, best_count = p, c
                continue
            if (pieces[p[0]], pieces[p[1]]) < (pieces[best[0]], pieces[best[1]]):
                best = p
        if best_count == 0:
            break
        merged = pieces[best[0]] + pieces[best[1]]
        if merged in existing:
            banned.add(best)
            continue
        new_id = len(pieces)
        pieces.append(merged)
        existing.add(merged)
        merges.append(best)
        for entry in segs:
            toks = entry[0]
            out = []
            i = 0
            while i < len(toks):
                if (
                    i + 1 < len(toks)
                    and toks[i] == best[0]
                    and toks[i + 1] == best[1]
                ):
                    out.append(new_id)
                    i += 2
                else:
                    out.append(toks[i])
                    i += 1
            entry[0] = out
    return pieces, merges


def encode(pieces, merges, text):
    rank = {m: i for i, m in enumerate(merges)}
    out = []
    for seg in pretokenize(text):
        toks = list(seg.encode())
        while True:
            best_i, best_rank = -1, None
            for i in range(len(toks) - 1):
                r = rank.get((toks[i], toks[i + 1]))
                if r is not None and (best_rank is None or r < best_rank):
                    best_i, best_rank = i, r
            if best_rank is None:
                break
            pair = (toks[best_i], toks[best_i + 1])
            new_id = 256 + best_rank
            merged = []
            i = 0
            while i < len(toks):
                if i + 1 < len(toks) and (toks[i], toks[i + 1]) == pair:
                    merged.append(new_id)
                    i += 2
                else:
                    merged.append(toks[i])
                    i += 1
            toks = merged
        out.extend(toks)
    return out


def byte_literal(bs):
    return '"' + "".join("\\x%02x" % b for b in bs) + '"'


pieces, merges = train(CORPUS, NUM_MERGES)
sample_ids = encode(pieces, merges, SAMPLE)

lines = [
    "// Generated by gen_bpe_oracle.py; do not edit by hand.",
    "#pragma once",
    "",
    "namespace oracle {",
    "",
    "inline constexpr const char* kBpeCorpus[] = {",
]
for line in CORPUS:
    lines.append('    "%s",' % line)
lines += [
    "};",
    "",
    "// Byte strings of the learned pieces, in merge order.",
    "inline constexpr const char* kBpeMerges[] = {",
]
for left, right in merges:
    lines.append("    %s,  // %s + %s" % (
        byte_literal(pieces[left] + pieces[right]),
        pieces[left].decode("latin1").replace(" ", "_"),
        pieces[right].decode("latin1").replace(" ", "_"),
    ))
lines += [
    "};",
    "",
    'inline constexpr const char* kBpeSampleText = "%s";' % SAMPLE,
    "// Sample ids relative to the byte base: value v < 256 is the raw byte v,",
    "// value 256+r is the piece produced by merge r.",
    "inline constexpr int kBpeSampleIds[] = {%s};"
    % ", ".join(str(i) for i in sample_ids),
    "",
    "}  // namespace oracle",
    "",
]
with open(OUT, "w") as f:
    f.write("\n".join(lines))
print("wrote", OUT, "with", len(merges), "merges")
print("first merges:", [
    (pieces[left] + pieces[right]).decode("latin1") for left, right in merges[:10]
])
