"""Reference BLEU values for the C++ fixture table in tests/unit/test_analysis.cpp.

Hand implementation with exact fractions, cross-checked against sacrebleu when it is
installed (tokenize="none", force=True). Run: python3 tests/oracles/bleu_oracle.py
"""
import math
from collections import Counter
from fractions import Fraction

CASES = [
    ("identical", ["the cat sat on the mat"], ["the cat sat on the mat"], False),
    ("disjoint", ["a b c d"], ["e f g h"], False),
    ("clipped_unsmoothed", ["the cat sat"], ["the the the cat"], False),
    ("clipped_smoothed", ["the cat sat"], ["the the the cat"], True),
    ("brevity", ["a b c d e f"], ["a b c d"], False),
    ("longer_hyp", ["a b c d"], ["a b c d e f"], False),
    ("clip_repeats", ["a a b c d e f"], ["a a a b c d e"], False),
    ("corpus_two", ["the cat sat on the mat", "a dog ran in the park"],
     ["the cat sat on a mat", "a dog ran in park"], False),
    ("short_hyp_zero_4gram", ["a b c"], ["a b c"], False),
    ("smoothed_corpus", ["w1 w2 w3 w4 w5", "w6 w7 w8"], ["w1 w2 w9 w4 w5", "w6 w8 w7"], True),
]


def ngrams(tokens, n):
    return Counter(tuple(tokens[i:i + n]) for i in range(len(tokens) - n + 1))


def bleu(refs, hyps, smooth, max_n=4):
    matched = [0] * max_n
    total = [0] * max_n
    r = c = 0
    for ref, hyp in zip(refs, hyps):
        rt, ht = ref.split(), hyp.split()
        r += len(rt)
        c += len(ht)
        for n in range(1, max_n + 1):
            rc = ngrams(rt, n)
            for g, k in ngrams(ht, n).items():
                total[n - 1] += k
                matched[n - 1] += min(k, rc.get(g, 0))
    precisions = []
    for n in range(max_n):
        if smooth and n >= 1:
            precisions.append(Fraction(matched[n] + 1, total[n] + 1))
        else:
            precisions.append(Fraction(matched[n], total[n]) if total[n] else Fraction(0))
    if c == 0 or any(p == 0 for p in precisions):
        return 0.0
    bp = 1.0 if c >= r else math.exp(1 - r / c)
    return 100 * bp * math.exp(sum(math.log(p) for p in precisions) / max_n)


def sacrebleu_value(refs, hyps, smooth):
    try:
        import sacrebleu
    except ImportError:
        return None
    kw = dict(smooth_method="add-k", smooth_value=1) if smooth else dict(smooth_method="none")
    return sacrebleu.corpus_bleu(hyps, [refs], tokenize="none", force=True, **kw).score


if __name__ == "__main__":
    for name, refs, hyps, smooth in CASES:
        ours = bleu(refs, hyps, smooth)
        ref_impl = sacrebleu_value(refs, hyps, smooth)
        check = "" if ref_impl is None else f"  sacrebleu={ref_impl:.6f}" + (
            "" if abs(ref_impl - ours) < 1e-6 else "  MISMATCH")
        print(f"{name:22s} {ours:.6f}{check}")
