"""Rank tokens by the attention they receive."""

from __future__ import annotations

import numpy as np

from vsformer.dataset import MtsDataset
from vsformer.trainer.checkpoint import ModelCheckpoint
from vsformer.trainer.training import predict
from vsformer.value_tokenizer import STATISTICS


def rank_tokens(received: np.ndarray) -> np.ndarray:
    """Token order by descending attention; equal weights keep index order."""
    received = np.asarray(received)
    return np.lexsort((np.arange(received.size), -received))


def explain(checkpoint: ModelCheckpoint, dataset: MtsDataset, instance: int, top: int | None = None) -> dict:
    """Per-branch token report for one instance of ``dataset``.

    Attention is the column mean of the last encoder layer's final attention
    weights, averaged over heads.
    """
    if not 0 <= instance < dataset.N:
        raise IndexError(f"instance {instance} out of range for {dataset.N} instances")
    enc = checkpoint.tokenizer.encode(dataset.subset([instance]))
    probs, lam, maps = predict(checkpoint.build_model(), enc, 1)
    report = {
        "instance": instance,
        "label": dataset.class_names[int(dataset.y[instance])],
        "predicted": dataset.class_names[int(np.argmax(probs[0]))],
        "probabilities": [float(p) for p in probs[0]],
        "lambda": float(lam[0]),
        "branches": {},
    }
    for branch, received in maps.items():
        att = received[0]
        rows = []
        if branch == "shape":
            st = enc.shape_tokens
            for tok_idx in rank_tokens(att):
                p = st.prototypes[tok_idx]
                rows.append({
                    "token": int(tok_idx),
                    "attention": float(att[tok_idx]),
                    "variable": p.variable,
                    "t_start": int(st.start[0, tok_idx]),
                    "t_end": int(st.end[0, tok_idx]),
                    "prior": float(enc.shape.prior[0, tok_idx]),
                    "prototype_class": checkpoint.class_names[p.klass],
                    "prototype_rank": p.rank,
                    "distance": float(st.distance[0, tok_idx]),
                })
        else:
            vt = enc.value_tokens
            for tok_idx in rank_tokens(att):
                rows.append({
                    "token": int(tok_idx),
                    "attention": float(att[tok_idx]),
                    "variable": int(vt.variable[tok_idx]),
                    "t_start": int(vt.start[tok_idx]),
                    "t_end": int(vt.end[tok_idx]),
                    "prior": float(enc.value.prior[0, tok_idx]),
                    "kind": STATISTICS[vt.kind[tok_idx]],
                    "granularity": int(vt.granularity[tok_idx]),
                    "value": float(vt.values[0, tok_idx]),
                })
        report["branches"][branch] = rows[:top] if top else rows
    return report
