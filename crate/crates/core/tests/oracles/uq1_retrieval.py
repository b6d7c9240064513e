"""Brute-force check: does UQ1 retrieve the waypoint-list line under the
reference embedder with default MMR settings (k=20, lambda=0.5)?

Run from crates/core:  python3 tests/oracles/uq1_retrieval.py
"""
import json
import sys

sys.path.insert(0, "tests/oracles")
from reference_embed import embed, cosine  # noqa: E402

UQ1 = "How many waypoints were received during the navigation task?"
TARGET = "The waypoints received are: 9 6 7"


def load_dedup(path):
    out, prev = [], None
    for i, line in enumerate(open(path), start=1):
        rec = json.loads(line)
        if rec["msg"] != prev:
            out.append((i, rec["msg"]))
        prev = rec["msg"]
    return out


def mmr(query, docs, k=20, lam=0.5):
    selected = []
    while len(selected) < min(k, len(docs)):
        best = None
        for idx, (doc_id, vec) in enumerate(docs):
            if idx in selected:
                continue
            red = max((cosine(vec, docs[s][1]) for s in selected), default=0.0)
            score = lam * cosine(query, vec) - (1 - lam) * red
            if best is None or score > best[1] or (score == best[1] and doc_id < docs[best[0]][0]):
                best = (idx, score)
        selected.append(best[0])
    return selected


for run in ["r1", "r4"]:
    recs = load_dedup(f"tests/fixtures/{run}_seed7.jsonl")
    docs = [(seq, embed(m)) for seq, m in recs]
    picked = mmr(embed(UQ1), docs)
    msgs = [recs[i][1] for i in picked]
    print(run, "records:", len(recs), "target retrieved:", TARGET in msgs,
          "rank:", msgs.index(TARGET) + 1 if TARGET in msgs else None)
