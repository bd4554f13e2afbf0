# Copyright (c) 2026, The PromptMix Authors
# SPDX-License-Identifier: Apache-2.0
#
# Independent FNV-1a (32-bit) token ids at V = 4096, plus a collision scan
# over every word of the shipped template corpus.
import re
import sys


def fnv1a32(s: str) -> int:
    h = 2166136261
    for b in s.encode():
        h ^= b
        h = (h * 16777619) & 0xFFFFFFFF
    return h


V = 4096
for w in ["a", "photo", "of", "origami", "texture", "itap"]:
    print(f"{w}: {fnv1a32(w) % V}")

path = sys.argv[1] if len(sys.argv) > 1 else "templates/appendix_a.txt"
words = set()
for line in open(path, encoding="utf-8"):
    for tmpl in re.findall(r'"([^"]*\{\}[^"]*)"', line):
        words.update(t.lower() for t in re.split(r"[\s!-/:-@\[-`{-~]+", tmpl) if t)
ids = {}
for w in sorted(words):
    ids.setdefault(fnv1a32(w) % V, []).append(w)
collisions = [ws for ws in ids.values() if len(ws) > 1]
print(f"corpus words: {len(words)}, colliding id groups: {collisions}")
