"""Mask metrics (precision, recall, F-beta, MAE), batch reports, and the
greedy human-in-the-loop training-set selection engine.

Selection grows the training set one image at a time from the worst-scored
pool images. An addition that lowers the mean F-beta is reverted and the
next candidate takes its place on probation. Every mutation is appended to
a history log from which the session state can be replayed exactly.
"""

from __future__ import annotations

import csv
import io
import json
from dataclasses import dataclass, field
from typing import Callable

import numpy as np

METRIC_NAMES = ("precision", "recall", "f_beta", "mae")


@dataclass(frozen=True)
class EvalResult:
    image_id: str
    tp: int
    fp: int
    fn: int
    precision: float
    recall: float
    f_beta: float
    mae: float


@dataclass(frozen=True)
class EvalReport:
    rows: tuple[EvalResult, ...]
    mean: dict[str, float]
    std: dict[str, float]

    def to_csv(self) -> str:
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(["image_id", "precision", "recall", "f_beta", "mae"])
        for r in self.rows:
            writer.writerow([r.image_id, repr(r.precision), repr(r.recall),
                             repr(r.f_beta), repr(r.mae)])
        return buf.getvalue()

    def to_dict(self) -> dict:
        return {
            "rows": [
                {"image_id": r.image_id, "tp": r.tp, "fp": r.fp, "fn": r.fn,
                 "precision": r.precision, "recall": r.recall,
                 "f_beta": r.f_beta, "mae": r.mae}
                for r in self.rows
            ],
            "mean": self.mean,
            "std": self.std,
        }


def confusion(gt: np.ndarray, pred: np.ndarray) -> tuple[int, int, int]:
    """Exact (TP, FP, FN) pixel counts; masks must share a domain."""
    g = np.asarray(gt).astype(bool)
    b = np.asarray(pred).astype(bool)
    if g.shape != b.shape:
        raise ValueError(f"mask domains differ: {g.shape} vs {b.shape}")
    tp = int((g & b).sum())
    fp = int((~g & b).sum())
    fn = int((g & ~b).sum())
    return tp, fp, fn


def f_beta(precision: float, recall: float, beta_sq: float = 0.3) -> float:
    """(1 + beta^2) P R / (beta^2 P + R), 0 when the denominator vanishes."""
    denom = beta_sq * precision + recall
    if denom == 0.0:
        return 0.0
    return (1.0 + beta_sq) * precision * recall / denom


def mae(gt: np.ndarray, pred: np.ndarray) -> float:
    """Mean absolute error between two binary masks."""
    g = np.asarray(gt).astype(bool)
    b = np.asarray(pred).astype(bool)
    if g.shape != b.shape:
        raise ValueError(f"mask domains differ: {g.shape} vs {b.shape}")
    return float((g ^ b).mean())


def evaluate_pair(image_id: str, gt: np.ndarray, pred: np.ndarray,
                  beta_sq: float = 0.3) -> EvalResult:
    tp, fp, fn = confusion(gt, pred)
    precision = tp / (tp + fp) if tp + fp > 0 else 0.0
    recall = tp / (tp + fn) if tp + fn > 0 else 0.0
    return EvalResult(
        image_id=image_id, tp=tp, fp=fp, fn=fn,
        precision=precision, recall=recall,
        f_beta=f_beta(precision, recall, beta_sq),
        mae=mae(gt, pred),
    )


def evaluate_set(pairs: list[tuple[str, np.ndarray, np.ndarray]],
                 beta_sq: float = 0.3) -> EvalReport:
    """Per-image rows plus mean and population std for every metric.

    ``pairs`` holds (image_id, ground truth, prediction) triples.
    """
    if not pairs:
        raise ValueError("no mask pairs to evaluate")
    rows = tuple(evaluate_pair(iid, g, b, beta_sq) for iid, g, b in pairs)
    mean = {}
    std = {}
    for name in METRIC_NAMES:
        vals = np.array([getattr(r, name) for r in rows])
        mean[name] = float(vals.mean())
        std[name] = float(vals.std())
    return EvalReport(rows=rows, mean=mean, std=std)


# ---------------------------------------------------------------------------
# Representative-image selection
# ---------------------------------------------------------------------------

@dataclass
class SelectionSession:
    """Mutable state of the greedy selection loop. Single-writer."""

    training_set: list[str]
    pool: list[str]
    x_prev: float
    z_prev: str | None
    history: list[dict] = field(default_factory=list)

    def check(self) -> None:
        overlap = set(self.training_set) & set(self.pool)
        if overlap:
            raise AssertionError(f"T and pool overlap: {sorted(overlap)}")

    def to_dict(self) -> dict:
        return {
            "training_set": sorted(self.training_set),
            "pool": sorted(self.pool),
            "x_prev": self.x_prev,
            "z_prev": self.z_prev,
            "steps": len(self.history),
        }


def selection_init(pool: list[str], seed: int) -> SelectionSession:
    """Move one random image from the pool into the training set."""
    if not pool:
        raise ValueError("empty selection pool")
    ordered = sorted(pool)
    rng = np.random.default_rng(seed)
    z = ordered[int(rng.integers(len(ordered)))]
    rest = [i for i in ordered if i != z]
    session = SelectionSession(training_set=[z], pool=rest, x_prev=0.0, z_prev=z)
    session.history.append({"event": "init", "pool": ordered, "image": z})
    return session


def selection_score(session: SelectionSession,
                    train_fn: Callable[[list[str]], object],
                    eval_fn: Callable[[object, str], float]
                    ) -> tuple[float, list[tuple[str, float]]]:
    """Train on T, score every pool image, and rank them worst-first.

    Returns (mean F-beta over the pool, list of (image_id, f_beta) sorted
    ascending by score with image-id tie-breaking).
    """
    if not session.training_set:
        raise ValueError("training set is empty")
    model = train_fn(list(session.training_set))
    scores = [(iid, float(eval_fn(model, iid))) for iid in sorted(session.pool)]
    ranked = sorted(scores, key=lambda s: (s[1], s[0]))
    x = float(np.mean([s for _, s in scores])) if scores else 1.0
    return x, ranked


def selection_step(session: SelectionSession, x: float, z: str,
                   accept: bool | None = None) -> SelectionSession:
    """Apply one loop iteration given the fresh score x and candidate z.

    Accepting (x >= x_prev, or an explicit accept) admits z and records x.
    Rejecting reverts the previous probational addition and puts z on
    probation in its place; x_prev keeps the last accepted score.
    """
    if z not in session.pool:
        raise ValueError(f"candidate {z!r} is not in the pool")
    accepted = (x >= session.x_prev) if accept is None else bool(accept)
    removed = None
    if accepted:
        session.pool.remove(z)
        session.training_set.append(z)
        session.x_prev = x
        session.z_prev = z
    else:
        if session.z_prev is not None and session.z_prev in session.training_set:
            removed = session.z_prev
            session.training_set.remove(removed)
            session.pool.append(removed)
        session.pool.remove(z)
        session.training_set.append(z)
        session.z_prev = z
    session.history.append({
        "event": "step", "accepted": accepted, "x": x, "candidate": z,
        "removed": removed,
    })
    session.check()
    return session


def replay_history(entries: list[dict]) -> SelectionSession:
    """Rebuild a session from its history log."""
    if not entries or entries[0].get("event") != "init":
        raise ValueError("history must start with an init event")
    init = entries[0]
    session = SelectionSession(
        training_set=[init["image"]],
        pool=[i for i in init["pool"] if i != init["image"]],
        x_prev=0.0, z_prev=init["image"],
    )
    session.history.append(init)
    for entry in entries[1:]:
        if entry.get("event") != "step":
            raise ValueError(f"unknown history event {entry.get('event')!r}")
        selection_step(session, entry["x"], entry["candidate"], accept=entry["accepted"])
    return session


def history_to_jsonl(history: list[dict]) -> str:
    return "".join(json.dumps(e) + "\n" for e in history)


def history_from_jsonl(text: str) -> list[dict]:
    return [json.loads(line) for line in text.splitlines() if line.strip()]
