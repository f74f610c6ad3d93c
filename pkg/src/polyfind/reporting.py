"""Offline evaluation: recall@k metrics, delimited output, and figures.

The eval pipeline ranks each held-out context against the full candidate
set of held-out replies and reports how often the true reply lands in
the top k. Reports are written as TSV plus rendered matplotlib figures
so they drop straight into docs or dashboards.
"""

from __future__ import annotations

import json
import os

import numpy as np

from .featurizer import featurize

DEFAULT_KS = (1, 10, 100)


def recall_at_k(model, vocab, pairs, ks=DEFAULT_KS) -> dict[int, float]:
    """Rank every context against all replies; report top-k hit rates.

    The candidate pool is exactly the replies of ``pairs``; the true
    reply of pair i is candidate i. Tie scores resolve by candidate
    order, so results are deterministic.
    """
    pairs = list(pairs)
    if not pairs:
        raise ValueError("no evaluation pairs")
    ctx = model.encode_batch([featurize(c, vocab) for c, _ in pairs], "ctx")
    rep = model.encode_batch([featurize(r, vocab) for _, r in pairs], "rep")
    scores = ctx @ rep.T
    n = len(pairs)
    # Rank of the true reply: 1 + #strictly-better + #equal-with-lower-index.
    true_scores = scores[np.arange(n), np.arange(n)]
    better = (scores > true_scores[:, None]).sum(axis=1)
    equal_before = np.array(
        [int(np.sum(scores[i, :i] == true_scores[i])) for i in range(n)])
    ranks = 1 + better + equal_before
    return {k: float(np.mean(ranks <= k)) for k in ks}


def loss_curve_points(loss_log, max_points: int = 200):
    """Thin a batch-loss series to at most ``max_points`` (step, loss) rows."""
    if not loss_log:
        return []
    stride = max(1, len(loss_log) // max_points)
    return [(i, float(loss_log[i])) for i in range(0, len(loss_log), stride)]


def write_report(metrics: dict[int, float], report_dir,
                 loss_log=None) -> list[str]:
    """Write recall TSV + PNG figures into ``report_dir``.

    Returns the paths written. Matplotlib renders headlessly (Agg).
    """
    import matplotlib
    matplotlib.use("Agg")
    import matplotlib.pyplot as plt

    os.makedirs(report_dir, exist_ok=True)
    written = []

    tsv_path = os.path.join(report_dir, "recall.tsv")
    with open(tsv_path, "w", encoding="utf-8") as fh:
        fh.write("k\trecall\n")
        for k in sorted(metrics):
            fh.write(f"{k}\t{metrics[k]:.6f}\n")
    written.append(tsv_path)

    fig, ax = plt.subplots(figsize=(5, 3.2))
    ks = sorted(metrics)
    ax.bar([str(k) for k in ks], [metrics[k] for k in ks], color="#4878a8")
    ax.set_xlabel("k")
    ax.set_ylabel("recall@k")
    ax.set_ylim(0.0, 1.0)
    ax.set_title("Held-out reply retrieval")
    fig.tight_layout()
    recall_png = os.path.join(report_dir, "recall_at_k.png")
    fig.savefig(recall_png, dpi=120)
    plt.close(fig)
    written.append(recall_png)

    if loss_log:
        points = loss_curve_points(loss_log)
        fig, ax = plt.subplots(figsize=(5, 3.2))
        ax.plot([p[0] for p in points], [p[1] for p in points],
                color="#a85448")
        ax.set_xlabel("training batch")
        ax.set_ylabel("softmax loss")
        ax.set_title("Training loss")
        fig.tight_layout()
        loss_png = os.path.join(report_dir, "training_loss.png")
        fig.savefig(loss_png, dpi=120)
        plt.close(fig)
        written.append(loss_png)

        loss_tsv = os.path.join(report_dir, "training_loss.tsv")
        with open(loss_tsv, "w", encoding="utf-8") as fh:
            fh.write("batch\tloss\n")
            for step, value in points:
                fh.write(f"{step}\t{value:.6f}\n")
        written.append(loss_tsv)

    return written


def metrics_json(metrics: dict[int, float]) -> str:
    """One-line JSON form, the eval command's stdout contract."""
    return json.dumps({f"recall@{k}": round(v, 6)
                       for k, v in sorted(metrics.items())})
