"""Expected preprocessing statistics for a Criteo-layout file.

Rows are cut in file order into equal day chunks; the leading train days form
the training set, the remaining rows are halved into validation and test. The
vocabulary keeps training tokens seen at least min_count times (index 0 = UNK).
"""

import argparse
import collections
import gzip
import math


def numeric(tok):
    if tok == "":
        return 0.0
    v = float(tok)
    v = 0.0 if v < 0 else v
    return math.log(v) ** 2 if v > 2 else v


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("path")
    ap.add_argument("--min-count", type=int, default=10)
    ap.add_argument("--days", type=int, default=7)
    ap.add_argument("--train-days", type=int, default=5)
    args = ap.parse_args()

    opener = gzip.open if args.path.endswith(".gz") else open
    with opener(args.path, "rt", encoding="utf-8") as f:
        rows = [line.rstrip("\n").split("\t") for line in f if line.strip()]
    n = len(rows)
    train = [r for i, r in enumerate(rows) if i * args.days // n < args.train_days]
    tail = n - len(train)

    vocab_sizes, collapsed, unk = [], [], []
    for c in range(26):
        counts = collections.Counter(r[14 + c] for r in train)
        kept = {t for t, k in counts.items() if k >= args.min_count}
        vocab_sizes.append(len(kept) + 1)
        collapsed.append(len(counts) - len(kept))
        unk.append(sum(k for t, k in counts.items() if t not in kept))
    numeric_sum = sum(numeric(r[1 + j]) for r in train for j in range(13))

    print("rows = %d" % n)
    print("train_rows = %d" % len(train))
    print("val_rows = %d" % (tail // 2))
    print("test_rows = %d" % (tail - tail // 2))
    print("vocab_sizes = " + ",".join(map(str, vocab_sizes)))
    print("collapsed_tokens = " + ",".join(map(str, collapsed)))
    print("train_unk_count = " + ",".join(map(str, unk)))
    print("train_numeric_sum = %.17g" % numeric_sum)


if __name__ == "__main__":
    main()
