#!/usr/bin/env python3
"""Generate the bundled toy corpus under data/toy/.

The text comes from a small seeded grammar with number agreement, relative
clauses and a few fixed collocations, so a recurrent model has structure to
learn beyond unigram statistics. Output is fully determined by SEED.
"""

import pathlib
import random

SEED = 20181

DETS_SG = ["the", "a", "this", "every"]
DETS_PL = ["the", "some", "these", "many"]
ADJS = ["old", "quiet", "small", "bright", "heavy", "young", "strange", "green",
        "careful", "distant", "busy", "tired"]
NOUNS = [("dog", "dogs"), ("teacher", "teachers"), ("river", "rivers"),
         ("city", "cities"), ("farmer", "farmers"), ("engine", "engines"),
         ("child", "children"), ("market", "markets"), ("bird", "birds"),
         ("doctor", "doctors"), ("bridge", "bridges"), ("sailor", "sailors"),
         ("garden", "gardens"), ("letter", "letters"), ("train", "trains"),
         ("painter", "painters")]
VERBS_T = [("sees", "see"), ("finds", "find"), ("follows", "follow"),
           ("likes", "like"), ("builds", "build"), ("watches", "watch"),
           ("carries", "carry"), ("visits", "visit"), ("remembers", "remember")]
VERBS_I = [("sleeps", "sleep"), ("waits", "wait"), ("laughs", "laugh"),
           ("works", "work"), ("sings", "sing"), ("arrives", "arrive")]
PREPS = ["near", "behind", "under", "beside", "across"]
ADVS = ["slowly", "quickly", "again", "today", "often"]
TIMES = [("in", "the", "morning"), ("at", "night"), ("after", "the", "rain"),
         ("before", "dinner")]
NUMS = ["two", "three", "four", "five"]


def noun_phrase(rng, plural, depth=0):
    words = []
    if plural and rng.random() < 0.25:
        words.append(rng.choice(NUMS))
    else:
        words.append(rng.choice(DETS_PL if plural else DETS_SG))
    if rng.random() < 0.45:
        words.append(rng.choice(ADJS))
    noun = rng.choice(NOUNS)
    words.append(noun[1] if plural else noun[0])
    if depth == 0 and rng.random() < 0.2:
        words += ["that", agree(rng.choice(VERBS_I), plural)]
    if depth == 0 and rng.random() < 0.2:
        words.append(rng.choice(PREPS))
        words += noun_phrase(rng, rng.random() < 0.4, depth + 1)
    return words


def agree(verb, plural):
    return verb[1] if plural else verb[0]


def clause(rng):
    plural = rng.random() < 0.4
    words = noun_phrase(rng, plural)
    if rng.random() < 0.6:
        words.append(agree(rng.choice(VERBS_T), plural))
        words += noun_phrase(rng, rng.random() < 0.4)
    else:
        words.append(agree(rng.choice(VERBS_I), plural))
    if rng.random() < 0.3:
        words.append(rng.choice(ADVS))
    if rng.random() < 0.2:
        words += list(rng.choice(TIMES))
    return words


def sentence(rng):
    words = clause(rng)
    r = rng.random()
    if r < 0.15:
        words += ["and"] + clause(rng)
    elif r < 0.25:
        words = ["when"] + words + [","] + clause(rng)
    return " ".join(words)


def write(path, rng, target_bytes):
    lines = []
    size = 0
    while size < target_bytes:
        line = sentence(rng)
        lines.append(line)
        size += len(line) + 1
    path.write_text("\n".join(lines) + "\n")


def main():
    rng = random.Random(SEED)
    out = pathlib.Path(__file__).resolve().parent.parent / "data" / "toy"
    out.mkdir(parents=True, exist_ok=True)
    write(out / "train.txt", rng, 100_000)
    write(out / "valid.txt", rng, 12_000)
    write(out / "test.txt", rng, 12_000)


if __name__ == "__main__":
    main()
