"""Regenerates golden_pairs.jsonl and divergent_pairs.jsonl.

Oracle: the `codebleu` package (0.7.0) from PyPI with tree-sitter 0.22.3 and
tree-sitter-python 0.21.0:

    python -m venv venv
    venv/bin/pip install codebleu==0.7.0 tree-sitter==0.22.3 tree-sitter-python==0.21.0
    venv/bin/python make_golden.py

The reference scorer merges data-flow parents through Python sets, so its
output can depend on PYTHONHASHSEED. Every value is computed under 16 seeds.
Pairs whose value is seed-invariant go to golden_pairs.jsonl. The
bubble-sort/insertion-sort pair is not seed-invariant and goes to
divergent_pairs.jsonl with every distinct value observed.
"""

import json
import os
import subprocess
import sys
from pathlib import Path

HERE = Path(__file__).resolve().parent
SEEDS = range(16)
sys.path.insert(0, str(HERE))
from programs import PAIRS, PROGRAMS  # noqa: E402

SCORE = """
import json, sys
sys.path.insert(0, {here!r})
from programs import PROGRAMS
from codebleu import calc_codebleu
import logging
logging.disable(logging.WARNING)
pairs = json.loads(sys.stdin.read())
out = []
for cand, ref in pairs:
    r = calc_codebleu([PROGRAMS[ref]], [PROGRAMS[cand]], lang="python")
    out.append([r["codebleu"], r["ngram_match_score"], r["weighted_ngram_match_score"],
                r["syntax_match_score"], r["dataflow_match_score"]])
print(json.dumps(out))
"""


def score_all(pairs, seed):
    proc = subprocess.run(
        [sys.executable, "-c", SCORE.format(here=str(HERE))],
        input=json.dumps(pairs),
        env=dict(os.environ, PYTHONHASHSEED=str(seed)),
        capture_output=True,
        text=True,
        check=True,
    )
    return json.loads(proc.stdout)


def main():
    import codebleu
    import tree_sitter_python

    provenance = "codebleu %s, tree-sitter-python %s, PYTHONHASHSEED 0..15" % (
        getattr(codebleu, "__version__", "0.7.0"),
        getattr(tree_sitter_python, "__version__", "0.21.0"),
    )
    divergent = [("bubble", "insertion"), ("insertion", "bubble")]
    all_pairs = [list(p) for p in PAIRS] + [list(p) for p in divergent]
    runs = [score_all(all_pairs, s) for s in SEEDS]

    with open(HERE / "golden_pairs.jsonl", "w") as fh:
        for i, (cand, ref) in enumerate(PAIRS):
            values = [run[i] for run in runs]
            if any(v != values[0] for v in values):
                raise SystemExit(f"pair {cand}/{ref} is not seed-invariant")
            cb, ngram, wngram, syn, df = values[0]
            fh.write(json.dumps({
                "id": f"{cand}__{ref}",
                "candidate": PROGRAMS[cand],
                "reference": PROGRAMS[ref],
                "codebleu": cb,
                "ngram_match": ngram,
                "weighted_ngram_match": wngram,
                "syntax_match": syn,
                "dataflow_match": df,
                "provenance": provenance,
            }) + "\n")

    with open(HERE / "divergent_pairs.jsonl", "w") as fh:
        for j, (cand, ref) in enumerate(divergent):
            i = len(PAIRS) + j
            observed = sorted({round(run[i][0], 12) for run in runs})
            fh.write(json.dumps({
                "id": f"{cand}__{ref}",
                "candidate": PROGRAMS[cand],
                "reference": PROGRAMS[ref],
                "observed_codebleu": observed,
                "provenance": provenance,
                "reason": "reference merges data-flow parents through a hash-ordered set",
            }) + "\n")


if __name__ == "__main__":
    main()
