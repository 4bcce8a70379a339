"""Write a small Criteo-layout click log (label, I1..I13, C1..C26; tab separated, gzip)."""

import argparse
import gzip
import random


def token(rng, field, vocab, skew):
    # Skewed ids so that a frequency threshold has rare tokens to collapse.
    idx = int(vocab * rng.random() ** skew)
    return "%08x" % ((field * 2654435761 + idx * 40503) & 0xFFFFFFFF)


def row(rng):
    label = "1" if rng.random() < 0.25 else "0"
    ints = []
    for j in range(13):
        r = rng.random()
        if r < 0.15:
            ints.append("")
        elif r < 0.18:
            ints.append(str(-rng.randint(1, 3)))
        else:
            ints.append(str(int(rng.expovariate(1.0 / (2 + 30 * j)))))
    cats = []
    for f in range(26):
        if rng.random() < 0.05:
            cats.append("")
        else:
            cats.append(token(rng, f, 40 + 60 * (f % 7), 2.0))
    return "\t".join([label] + ints + cats)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("-o", "--output", required=True)
    ap.add_argument("--rows", type=int, default=10000)
    ap.add_argument("--seed", type=int, default=2019)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    with gzip.open(args.output, "wt", encoding="utf-8", newline="\n") as out:
        for _ in range(args.rows):
            out.write(row(rng) + "\n")


if __name__ == "__main__":
    main()
