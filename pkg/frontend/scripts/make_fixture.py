"""Build a small corpus + model + thresholds for the UI integration test.

Creates, under frontend/.fixture/:
    sessions.jsonl        twin-seeded corpus that produces pending flags
    model-combined.rwnet  quickly trained combined model
    thresholds.json       pair + flag thresholds (flag cut set between the
                          planted twins and the best honest pair)
"""

import json
import sys
from pathlib import Path

import numpy as np

from ringwatch.model_io import save_model
from ringwatch.network import NetworkConfig, TrainConfig, embed_session, embed_similarity, train
from ringwatch.session import sessions_to_jsonl
from ringwatch.simulate import GeneratorConfig, gen_corpus, gen_population, gen_session


def main(out_dir: str) -> None:
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)

    train_corpus = gen_corpus(GeneratorConfig(
        n_users=24, sessions_per_user=3, separation=1.5, seed=42,
        duration_target_ms=30_000))
    net, _ = train(train_corpus, NetworkConfig(input_dim=180, seed=4),
                   TrainConfig(batch_users=8, epochs=8, seed=4))

    profiles = gen_population(GeneratorConfig(n_users=8, seed=60,
                                              duration_target_ms=30_000))
    records = []
    for u in range(8):
        profile = profiles[0] if u <= 1 else profiles[u]  # u0/u1 share a twin
        for k in range(2):
            records.append(gen_session(
                profile, np.random.SeedSequence([60, u, k]), 30_000,
                session_id=f"u{u}-s{k}", user_id=f"u{u}",
                started_at_ms=1_700_000_000_000 + (u * 2 + k) * 60_000))

    embeddings = {r.session_id: embed_session(net, r) for r in records}
    twin_sims, other_sims = [], []
    for i, a in enumerate(records):
        for b in records[i + 1:]:
            if a.user_id == b.user_id:
                continue
            sim = embed_similarity(embeddings[a.session_id],
                                   embeddings[b.session_id], net.tau)
            twins = {a.user_id, b.user_id} == {"u0", "u1"}
            (twin_sims if twins else other_sims).append(sim)
    threshold = (min(twin_sims) + max(other_sims)) / 2.0
    if min(twin_sims) <= max(other_sims):
        raise SystemExit("fixture corpus does not separate the twins")

    (out / "sessions.jsonl").write_text(sessions_to_jsonl(records),
                                        encoding="utf-8")
    (out / "model-combined.rwnet").write_bytes(save_model(net))
    threshold_doc = {"value": threshold, "fpr_target": 0.01,
                     "calibrated_on": "fixture", "method": "deep-keystroke+mouse",
                     "low_sample_warning": True}
    (out / "thresholds.json").write_text(json.dumps({
        "pair_thresholds": {"deep-keystroke+mouse": threshold_doc},
        "flag_thresholds": {"deep-keystroke+mouse": threshold_doc},
    }, indent=2), encoding="utf-8")
    print(f"fixture ready in {out} (flag threshold {threshold:.4f})")


if __name__ == "__main__":
    main(sys.argv[1] if len(sys.argv) > 1 else ".fixture")
