"""Regenerate the synthetic demo collection shipped under src/recency_audit/data/demo.

Five judged topics with 100 candidate passages each, plus one unjudged topic
that the judged-topic filter must drop. Passage text is drawn from a seeded
pseudo-word lexicon; the first-stage "BM25" scores are a log-tf sum over
query terms with a small seeded jitter.

    python scripts/make_demo_fixture.py [--seed 20250101]
"""

import argparse
import math
import random
from pathlib import Path

OUT = Path(__file__).resolve().parents[1] / "src" / "recency_audit" / "data" / "demo"
SYLLABLES = ["ka", "lo", "mi", "ren", "to", "sa", "vel", "nu", "dor", "pi", "quen", "ta", "bri", "sol", "em", "gar"]
JUDGED = ["9001", "9002", "9003", "9004", "9005"]
UNJUDGED = ["9006"]
PER_TOPIC = 100
# grade -> number of judged passages per topic
GRADE_COUNTS = {3: 4, 2: 10, 1: 10, 0: 12}


def lexicon(rng, size=400):
    words = set()
    while len(words) < size:
        words.add("".join(rng.choice(SYLLABLES) for _ in range(rng.randint(2, 3))))
    return sorted(words)


def main():
    ap = argparse.ArgumentParser()
    ap.add_argument("--seed", type=int, default=20250101)
    args = ap.parse_args()
    rng = random.Random(args.seed)
    words = lexicon(rng)
    OUT.mkdir(parents=True, exist_ok=True)

    topics, passages, run_lines, qrels = [], [], [], []
    for tid in JUDGED + UNJUDGED:
        query = rng.sample(words, 3)
        background = [w for w in words if w not in query]
        topics.append(f"{tid}\t{' '.join(query)}")
        scored = []
        for i in range(PER_TOPIC):
            pid = f"demo_{tid}_{i:03d}"
            body = rng.choices(background, k=rng.randint(25, 45))
            for _ in range(rng.choice([0, 0, 1, 1, 2, 3, 4, 6])):
                body.insert(rng.randrange(len(body) + 1), rng.choice(query))
            text = " ".join(body).capitalize() + "."
            passages.append(f"{pid}\t{text}")
            tf = [body.count(q) for q in query]
            score = sum(math.log1p(t) for t in tf) * 5 + rng.random()
            scored.append((round(score, 4), pid, sum(tf)))
        scored.sort(key=lambda s: (-s[0], s[1]))
        for rank, (score, pid, _) in enumerate(scored, start=1):
            run_lines.append(f"{tid} Q0 {pid} {rank} {score} bm25")
        if tid in JUDGED:
            judged = rng.sample(scored, sum(GRADE_COUNTS.values()))
            judged.sort(key=lambda s: (-s[2], s[1]))
            grades = [g for g, n in GRADE_COUNTS.items() for _ in range(n)]
            for (_, pid, _), grade in sorted(zip(judged, grades), key=lambda x: x[0][1]):
                qrels.append(f"{tid} 0 {pid} {grade}")

    (OUT / "topics.tsv").write_text("\n".join(topics) + "\n", "utf-8")
    (OUT / "passages.tsv").write_text("\n".join(passages) + "\n", "utf-8")
    (OUT / "run.bm25.trec").write_text("\n".join(run_lines) + "\n", "utf-8")
    (OUT / "qrels.txt").write_text("\n".join(qrels) + "\n", "utf-8")
    print(f"wrote {len(topics)} topics, {len(passages)} passages to {OUT}")


if __name__ == "__main__":
    main()
