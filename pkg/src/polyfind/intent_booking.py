"""Intent detection and booking slot filling.

Two tiny binary classifiers ride on top of the frozen context encoder:
one spots "start over" requests, one spots booking requests. Both read
the context vector h_c, so they inherit every language the encoder
serves. Booking itself is a deterministic slot machine: date, then time,
then party size, each extracted with rule-based parsers and confirmed
once all three are filled.
"""

from __future__ import annotations

import datetime as dt
import re
from dataclasses import dataclass, field, replace

import numpy as np

from .errors import DimensionMismatch, InsufficientData, NoSelectedEntity
from .featurizer import featurize

INTENT_HIDDEN_DIM = 100
INTENT_THRESHOLD = 0.5
PARTY_MIN = 1
PARTY_MAX = 50
_SIGMOID_CLIP = 30.0


@dataclass(frozen=True)
class IntentTrainConfig:
    hidden_dim: int = INTENT_HIDDEN_DIM
    learn_rate: float = 0.5
    epochs: int = 200
    seed: int = 0
    threshold: float = INTENT_THRESHOLD


class IntentClassifier:
    """One hidden ReLU layer over h_c, sigmoid output, fixed threshold."""

    def __init__(self, name: str, in_dim: int, hidden_dim: int = INTENT_HIDDEN_DIM,
                 threshold: float = INTENT_THRESHOLD):
        self.name = name
        self.in_dim = in_dim
        self.hidden_dim = hidden_dim
        self.threshold = threshold
        self.params: dict[str, np.ndarray] = {}

    @classmethod
    def initialize(cls, name: str, in_dim: int,
                   hidden_dim: int = INTENT_HIDDEN_DIM,
                   threshold: float = INTENT_THRESHOLD,
                   seed: int = 0) -> "IntentClassifier":
        clf = cls(name, in_dim, hidden_dim, threshold)
        rng = np.random.default_rng(seed)
        clf.params = {
            "h.w": (rng.standard_normal((in_dim, hidden_dim))
                    * np.sqrt(2.0 / in_dim)).astype(np.float32),
            "h.b": np.zeros(hidden_dim, dtype=np.float32),
            "out.w": (rng.standard_normal((hidden_dim, 1))
                      * np.sqrt(2.0 / hidden_dim)).astype(np.float32),
            "out.b": np.zeros(1, dtype=np.float32),
        }
        return clf

    def _forward(self, x: np.ndarray):
        x = np.asarray(x, dtype=np.float64)
        pre = x @ self.params["h.w"].astype(np.float64) \
            + self.params["h.b"].astype(np.float64)
        hidden = np.maximum(pre, 0.0)
        logit = (hidden @ self.params["out.w"].astype(np.float64)
                 + self.params["out.b"].astype(np.float64))[:, 0]
        return logit, hidden, pre, x

    def probabilities(self, vectors: np.ndarray) -> np.ndarray:
        vectors = np.atleast_2d(np.asarray(vectors, dtype=np.float64))
        if vectors.shape[1] != self.in_dim:
            raise DimensionMismatch(
                f"classifier expects dim {self.in_dim}, got {vectors.shape[1]}")
        logit, _, _, _ = self._forward(vectors)
        return _sigmoid(logit)

    def classify(self, h_c) -> tuple[bool, float]:
        vec = h_c.vector if hasattr(h_c, "vector") else h_c
        prob = float(self.probabilities(np.asarray(vec)[None, :])[0])
        return prob >= self.threshold, prob

    def batch_loss(self, vectors: np.ndarray, labels: np.ndarray) -> float:
        loss, _ = self._loss_and_grads(vectors, labels)
        return loss

    def _loss_and_grads(self, vectors: np.ndarray, labels: np.ndarray):
        vectors = np.asarray(vectors, dtype=np.float64)
        labels = np.asarray(labels, dtype=np.float64)
        n = vectors.shape[0]
        logit, hidden, pre, x = self._forward(vectors)
        # Stable BCE on logits: max(z,0) - z*y + log(1+exp(-|z|)).
        loss = float(np.mean(np.maximum(logit, 0.0) - logit * labels
                             + np.log1p(np.exp(-np.abs(logit)))))
        d_logit = (_sigmoid(logit) - labels) / n
        grads = {
            "out.w": hidden.T @ d_logit[:, None],
            "out.b": np.array([d_logit.sum()]),
            "h.w": None,
            "h.b": None,
        }
        d_hidden = d_logit[:, None] * self.params["out.w"].astype(np.float64).T
        d_pre = d_hidden * (pre > 0.0)
        grads["h.w"] = x.T @ d_pre
        grads["h.b"] = d_pre.sum(axis=0)
        return loss, grads

    def apply_grads(self, grads, learn_rate: float) -> None:
        for name, grad in grads.items():
            updated = self.params[name].astype(np.float64) - learn_rate * grad
            self.params[name] = updated.astype(np.float32)


def _sigmoid(z: np.ndarray) -> np.ndarray:
    return 1.0 / (1.0 + np.exp(-np.clip(z, -_SIGMOID_CLIP, _SIGMOID_CLIP)))


def _encode_texts(texts, model, vocab) -> np.ndarray:
    feats = [featurize(t, vocab) for t in texts]
    return model.encode_batch(feats, "ctx")


def train_intent(name: str, positives, negatives, model, vocab,
                 cfg: IntentTrainConfig = IntentTrainConfig()) -> IntentClassifier:
    """Fit a classifier on paraphrase lists; the encoder stays frozen."""
    positives, negatives = list(positives), list(negatives)
    if len(positives) < 5 or len(negatives) < 5:
        raise InsufficientData(
            f"need at least 5 positive and 5 negative examples, "
            f"got {len(positives)}/{len(negatives)}")
    vectors = _encode_texts(positives + negatives, model, vocab)
    labels = np.concatenate([np.ones(len(positives)), np.zeros(len(negatives))])
    clf = IntentClassifier.initialize(name, vectors.shape[1], cfg.hidden_dim,
                                      cfg.threshold, cfg.seed)
    for _ in range(cfg.epochs):
        _, grads = clf._loss_and_grads(vectors, labels)
        clf.apply_grads(grads, cfg.learn_rate)
    return clf


def cross_validate(name: str, positives, negatives, model, vocab,
                   cfg: IntentTrainConfig = IntentTrainConfig(),
                   held_out: int = 4) -> float:
    """Leave-``held_out``-out accuracy over rotating folds."""
    positives, negatives = list(positives), list(negatives)
    if len(positives) < 5 or len(negatives) < 5:
        raise InsufficientData(
            f"need at least 5 positive and 5 negative examples, "
            f"got {len(positives)}/{len(negatives)}")
    pos_vecs = _encode_texts(positives, model, vocab)
    neg_vecs = _encode_texts(negatives, model, vocab)
    rng = np.random.default_rng(cfg.seed + 17)
    pos_order = rng.permutation(len(positives))
    neg_order = rng.permutation(len(negatives))
    half = held_out // 2
    n_folds = min(len(positives) // half, len(negatives) // half)
    correct = total = 0
    for fold in range(n_folds):
        pos_hold = pos_order[fold * half:(fold + 1) * half]
        neg_hold = neg_order[fold * half:(fold + 1) * half]
        pos_mask = np.ones(len(positives), dtype=bool)
        pos_mask[pos_hold] = False
        neg_mask = np.ones(len(negatives), dtype=bool)
        neg_mask[neg_hold] = False
        if pos_mask.sum() < 1 or neg_mask.sum() < 1:
            continue
        train_x = np.concatenate([pos_vecs[pos_mask], neg_vecs[neg_mask]])
        train_y = np.concatenate([np.ones(int(pos_mask.sum())),
                                  np.zeros(int(neg_mask.sum()))])
        clf = IntentClassifier.initialize(name, train_x.shape[1],
                                          cfg.hidden_dim, cfg.threshold,
                                          cfg.seed + fold)
        for _ in range(cfg.epochs):
            _, grads = clf._loss_and_grads(train_x, train_y)
            clf.apply_grads(grads, cfg.learn_rate)
        test_x = np.concatenate([pos_vecs[pos_hold], neg_vecs[neg_hold]])
        test_y = np.concatenate([np.ones(len(pos_hold)),
                                 np.zeros(len(neg_hold))])
        preds = clf.probabilities(test_x) >= clf.threshold
        correct += int((preds == test_y.astype(bool)).sum())
        total += len(test_y)
    if total == 0:
        raise InsufficientData("not enough examples for any validation fold")
    return correct / total


def save_classifier(clf: IntentClassifier, path) -> None:
    np.savez(path, name=clf.name, in_dim=clf.in_dim,
             hidden_dim=clf.hidden_dim, threshold=clf.threshold,
             **{f"param/{k}": v for k, v in clf.params.items()})


def load_classifier(path) -> IntentClassifier:
    data = np.load(path, allow_pickle=False)
    clf = IntentClassifier(str(data["name"]), int(data["in_dim"]),
                           int(data["hidden_dim"]), float(data["threshold"]))
    clf.params = {k.split("/", 1)[1]: data[k].astype(np.float32)
                  for k in data.files if k.startswith("param/")}
    return clf


# -- booking slot filling ------------------------------------------------------

@dataclass
class BookingSlots:
    date: str | None = None          # ISO date
    time: str | None = None          # HH:MM, 24-hour
    party_size: int | None = None

    def missing(self) -> list[str]:
        out = []
        if self.date is None:
            out.append("date")
        if self.time is None:
            out.append("time")
        if self.party_size is None:
            out.append("party_size")
        return out

    def complete(self) -> bool:
        return not self.missing()

    def as_dict(self) -> dict:
        return {"date": self.date, "time": self.time,
                "party_size": self.party_size}


@dataclass
class BookingStepResult:
    prompt: str
    slots: BookingSlots
    complete: bool
    confirmation: dict | None = None
    party_rejected: bool = False


_WEEKDAYS = {"monday": 0, "tuesday": 1, "wednesday": 2, "thursday": 3,
             "friday": 4, "saturday": 5, "sunday": 6}
_WORD_NUMBERS = {"one": 1, "two": 2, "three": 3, "four": 4, "five": 5,
                 "six": 6, "seven": 7, "eight": 8, "nine": 9, "ten": 10,
                 "eleven": 11, "twelve": 12}

_TIME_COLON = re.compile(r"\b(\d{1,2}):(\d{2})\s*(am|pm)?\b", re.IGNORECASE)
_TIME_HOUR = re.compile(r"\b(\d{1,2})\s*(am|pm)\b", re.IGNORECASE)
_PARTY_PATTERNS = (
    re.compile(r"\b(?:for|party of|table for|group of)\s+(\d{1,3})\b",
               re.IGNORECASE),
    re.compile(r"\b(\d{1,3})\s+(?:people|persons|person|guests|diners)\b",
               re.IGNORECASE),
)
_PARTY_WORD_PATTERNS = (
    re.compile(r"\b(?:for|party of|table for|group of)\s+([a-z]+)\b",
               re.IGNORECASE),
    re.compile(r"\b([a-z]+)\s+(?:people|persons|person|guests|diners)\b",
               re.IGNORECASE),
)


def extract_date(text: str, today: dt.date) -> str | None:
    lowered = text.lower()
    if re.search(r"\btoday\b|\btonight\b", lowered):
        return today.isoformat()
    if re.search(r"\btomorrow\b", lowered):
        return (today + dt.timedelta(days=1)).isoformat()
    for name, target in _WEEKDAYS.items():
        if re.search(rf"\b{name}\b", lowered):
            ahead = (target - today.weekday()) % 7
            if ahead == 0 or "next" in lowered.split():
                ahead = ahead or 7
            return (today + dt.timedelta(days=ahead)).isoformat()
    return None


def extract_time(text: str) -> str | None:
    match = _TIME_COLON.search(text)
    if match:
        hour, minute = int(match.group(1)), int(match.group(2))
        meridiem = (match.group(3) or "").lower()
        if minute > 59:
            return None
        if meridiem:
            if not 1 <= hour <= 12:
                return None
            hour = hour % 12 + (12 if meridiem == "pm" else 0)
        elif hour > 23:
            return None
        return f"{hour:02d}:{minute:02d}"
    match = _TIME_HOUR.search(text)
    if match:
        hour, meridiem = int(match.group(1)), match.group(2).lower()
        if not 1 <= hour <= 12:
            return None
        hour = hour % 12 + (12 if meridiem == "pm" else 0)
        return f"{hour:02d}:00"
    lowered = text.lower()
    if "noon" in lowered:
        return "12:00"
    if "midnight" in lowered:
        return "00:00"
    return None


def extract_party_size(text: str) -> tuple[int | None, bool]:
    """Returns (size, rejected). ``rejected`` marks an out-of-range mention."""
    for pattern in _PARTY_PATTERNS:
        match = pattern.search(text)
        if match:
            size = int(match.group(1))
            if PARTY_MIN <= size <= PARTY_MAX:
                return size, False
            return None, True
    for pattern in _PARTY_WORD_PATTERNS:
        match = pattern.search(text)
        if match and match.group(1).lower() in _WORD_NUMBERS:
            return _WORD_NUMBERS[match.group(1).lower()], False
    return None, False


def update_slots(slots: BookingSlots, text: str,
                 today: dt.date | None = None) -> tuple[BookingSlots, bool]:
    """Fold one utterance into the slots; filled slots only ever overwrite."""
    today = today or dt.date.today()
    date = extract_date(text, today)
    time = extract_time(text)
    party, rejected = extract_party_size(text)
    return replace(
        slots,
        date=date if date is not None else slots.date,
        time=time if time is not None else slots.time,
        party_size=party if party is not None else slots.party_size,
    ), rejected


def booking_step(slots: BookingSlots, utterance: str, entity_id: str,
                 entity_name: str, session_id: str,
                 templates: dict[str, str],
                 today: dt.date | None = None) -> BookingStepResult:
    """Advance the booking dialogue by one user utterance.

    Extraction runs on the (English) utterance; prompting follows the
    fixed slot order date -> time -> party size. Once every slot is
    filled the result carries a confirmation record.
    """
    slots, rejected = update_slots(slots, utterance, today)
    if rejected and slots.party_size is None:
        return BookingStepResult(
            prompt=templates["invalid_party_size"], slots=slots,
            complete=False, party_rejected=True)
    missing = slots.missing()
    if missing:
        key = {"date": "ask_date", "time": "ask_time",
               "party_size": "ask_party_size"}[missing[0]]
        prompt = templates[key].format(name=entity_name)
        return BookingStepResult(prompt=prompt, slots=slots, complete=False)
    confirmation = {"entity_id": entity_id, "date": slots.date,
                    "time": slots.time, "party_size": slots.party_size,
                    "session_id": session_id}
    prompt = templates["booking_confirmed"].format(
        name=entity_name, date=slots.date, time=slots.time,
        party_size=slots.party_size)
    return BookingStepResult(prompt=prompt, slots=slots, complete=True,
                             confirmation=confirmation)


def require_single_entity(relevant) -> str:
    """Booking needs exactly one remaining entity; returns its id."""
    if len(relevant) != 1:
        raise NoSelectedEntity(
            f"booking requires exactly one candidate restaurant, "
            f"have {len(relevant)}")
    return next(iter(relevant))
