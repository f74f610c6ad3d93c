"""Conversational entity-narrowing engine.

Each turn the user's words (plus a short window of recent context) are
encoded and matched against every text response of every restaurant
still in play. Per-response scores become a softmax distribution, mass
is summed per restaurant, and the candidate set shrinks to the smallest
group of restaurants that jointly hold most of the probability. Once a
single restaurant remains, its own responses and photos are shown and a
booking can start. A reset intent rewinds everything.
"""

from __future__ import annotations

import datetime as dt
from dataclasses import dataclass, field

import numpy as np

from .errors import EmptyPool, EmptyQ, EmptyScores, NoSelectedEntity, UnknownCity
from .featurizer import featurize, merge_features
from .index import KIND_PHOTO, TEXT_KINDS, Candidate, ResponseIndex
from .intent_booking import BookingSlots, booking_step, require_single_entity
from .multilingual import encode_foreign_context, get_templates

CONTEXT_USER_TURNS = 2
CONTEXT_SYSTEM_TURNS = 1


@dataclass(frozen=True)
class FlowParams:
    """Knobs of the narrowing loop.

    top_n: responses retrieved per turn.
    sharpness: softmax temperature multiplier on scores (bigger = spikier).
    threshold: probability mass the surviving restaurants must cover.
    max_display: cap on displayed responses (and photos) per turn.
    """
    top_n: int = 20
    sharpness: float = 5.0
    threshold: float = 0.8
    max_display: int = 5

    def validate(self) -> None:
        if self.top_n < 1:
            raise ValueError("top_n must be at least 1")
        if self.sharpness <= 0:
            raise ValueError("sharpness must be positive")
        if not 0.0 < self.threshold < 1.0:
            raise ValueError("threshold must lie strictly between 0 and 1")
        if self.max_display < 1:
            raise ValueError("max_display must be at least 1")


def compute_probs(scores, sharpness: float) -> np.ndarray:
    """Softmax over retrieved-response scores, scaled by ``sharpness``.

    Numerically stabilized by max subtraction; output sums to one for
    any finite input.
    """
    scores = np.asarray(scores, dtype=np.float64)
    if scores.size == 0:
        raise EmptyScores("cannot take a softmax over zero scores")
    z = sharpness * scores
    z = np.exp(z - z.max())
    return z / z.sum()


def entity_scores(hits, probs) -> dict[str, float]:
    """Sum per-response probability mass into per-restaurant mass."""
    out: dict[str, float] = {}
    for hit, p in zip(hits, probs):
        eid = hit.entity_id if isinstance(hit, Candidate) else hit
        out[eid] = out.get(eid, 0.0) + float(p)
    return out


def shrink(q: dict[str, float], threshold: float,
           relevant=None) -> list[str]:
    """Smallest high-mass prefix of restaurants, by descending mass.

    Restaurants are ordered by mass (ties broken by id) and the shortest
    prefix whose cumulative mass exceeds ``threshold`` survives. If the
    total mass never clears the threshold, every restaurant with
    positive mass survives.
    """
    if not q:
        raise EmptyQ("no per-entity mass to shrink over")
    if relevant is not None:
        extra = set(q) - set(relevant)
        if extra:
            raise ValueError(f"mass assigned outside the live set: {sorted(extra)}")
    ordered = sorted(q.items(), key=lambda kv: (-kv[1], kv[0]))
    total = 0.0
    kept: list[str] = []
    for eid, mass in ordered:
        if total > threshold:
            break
        if mass <= 0.0 and total <= threshold:
            # Zero-mass entries can never push the sum over the line.
            break
        kept.append(eid)
        total += mass
    if total <= threshold:
        return [eid for eid, mass in ordered if mass > 0.0]
    return kept


def render_spoken(entity_name: str, candidate: Candidate,
                  templates: dict[str, str]) -> str:
    """Spoken form of one displayed response.

    Facts are already full sentences and pass through verbatim; reviews
    and menu items get wrapped in an attributing template.
    """
    if candidate.kind == "review":
        return templates["review"].format(name=entity_name, text=candidate.text)
    if candidate.kind == "menu":
        return templates["menu"].format(name=entity_name, text=candidate.text)
    return candidate.text


@dataclass
class HistoryEntry:
    speaker: str                 # "user" | "system"
    text: str                    # what was shown/said, display language
    english: str                 # ranking-language form


@dataclass
class DialogueState:
    session_id: str
    city: str
    relevant: list[str]
    all_entities: list[str]
    history: list[HistoryEntry] = field(default_factory=list)
    mode: str = "search"         # "search" | "booking"
    booking: BookingSlots = field(default_factory=BookingSlots)

    def snapshot(self) -> dict:
        return {
            "session_id": self.session_id,
            "city": self.city,
            "relevant": list(self.relevant),
            "all_entities": list(self.all_entities),
            "history": [{"speaker": h.speaker, "text": h.text,
                         "english": h.english} for h in self.history],
            "mode": self.mode,
            "booking": self.booking.as_dict(),
        }

    @classmethod
    def from_snapshot(cls, data: dict) -> "DialogueState":
        return cls(
            session_id=data["session_id"],
            city=data["city"],
            relevant=list(data["relevant"]),
            all_entities=list(data["all_entities"]),
            history=[HistoryEntry(**h) for h in data["history"]],
            mode=data["mode"],
            booking=BookingSlots(**data["booking"]),
        )


@dataclass
class TurnResult:
    displayed: list[tuple[str, Candidate, float]]
    photos: list[tuple[Candidate, float]]
    spoken: str
    relevant_after: list[str]
    mode_after: str
    intent: str | None = None
    booking: BookingSlots | None = None
    booking_complete: bool = False
    confirmation: dict | None = None


class Engine:
    """Ties index, encoder, intents and translation into turn handling."""

    def __init__(self, model, vocab, cities: dict[str, ResponseIndex],
                 params: FlowParams = FlowParams(), reset_classifier=None,
                 booking_classifier=None, provider=None,
                 approximate: bool = False, today: dt.date | None = None):
        params.validate()
        self.model = model
        self.vocab = vocab
        self.cities = dict(cities)
        self.params = params
        self.reset_classifier = reset_classifier
        self.booking_classifier = booking_classifier
        self.provider = provider
        self.approximate = approximate
        self.today = today
        self.confirmations: list[dict] = []

    def city_index(self, city: str) -> ResponseIndex:
        index = self.cities.get(city)
        if index is None:
            raise UnknownCity(f"no index is loaded for city {city!r}")
        return index

    def new_session(self, city: str, session_id: str) -> DialogueState:
        index = self.city_index(city)
        entities = sorted(index.entity_names)
        return DialogueState(session_id=session_id, city=city,
                             relevant=list(entities),
                             all_entities=list(entities))

    # -- context ---------------------------------------------------------

    def _context_pieces(self, state: DialogueState,
                        english_utterance: str) -> list[str]:
        user_idx = [i for i, h in enumerate(state.history)
                    if h.speaker == "user"][-CONTEXT_USER_TURNS:]
        sys_idx = [i for i, h in enumerate(state.history)
                   if h.speaker == "system"][-CONTEXT_SYSTEM_TURNS:]
        window = sorted(user_idx + sys_idx)
        pieces = [state.history[i].english for i in window]
        pieces.append(english_utterance)
        return [p for p in pieces if p]

    def _encode_turn(self, state: DialogueState, utterance: str):
        index = self.city_index(state.city)
        if self.provider is not None and index.language != "en":
            _, english = encode_foreign_context(
                utterance, self.provider, index.language, self.model, self.vocab)
        else:
            english = utterance
        # Each history piece keeps its own sentence boundaries so bigrams
        # never span two utterances.
        feats = merge_features(featurize(p, self.vocab)
                               for p in self._context_pieces(state, english))
        return self.model.encode_context(feats), english

    def _classify_intent(self, classifier, english: str) -> bool:
        # Intent is a property of the utterance itself; history would only
        # dilute the signal (and classifiers train on bare paraphrases).
        h_u = self.model.encode_context(featurize(english, self.vocab))
        fired, _ = classifier.classify(h_u)
        return fired

    def _search(self, index: ResponseIndex, h_c, allowed, kinds, k):
        if self.approximate and index.approx_built:
            return index.search_approx(h_c, allowed, kinds=kinds, k=k)
        return index.search(h_c, allowed, kinds=kinds, k=k)

    # -- turn handling ---------------------------------------------------

    def step(self, state: DialogueState, utterance: str) -> TurnResult:
        index = self.city_index(state.city)
        templates = get_templates(index.language)
        h_c, english = self._encode_turn(state, utterance)

        if self.reset_classifier is not None and \
                self._classify_intent(self.reset_classifier, english):
            return self._reset_turn(state, templates)

        if state.mode == "booking":
            return self._booking_turn(state, index, templates,
                                      utterance, english)

        if self.booking_classifier is not None and \
                self._classify_intent(self.booking_classifier, english):
            return self._enter_booking(state, index, templates,
                                       utterance, english)

        return self._search_turn(state, index, templates, h_c,
                                 utterance, english)

    def _reset_turn(self, state: DialogueState,
                    templates: dict[str, str]) -> TurnResult:
        state.relevant = list(state.all_entities)
        state.mode = "search"
        state.booking = BookingSlots()
        state.history.clear()
        spoken = templates["reset_ack"]
        return TurnResult(displayed=[], photos=[], spoken=spoken,
                          relevant_after=list(state.relevant),
                          mode_after=state.mode, intent="reset")

    def _enter_booking(self, state: DialogueState, index: ResponseIndex,
                       templates: dict[str, str], utterance: str,
                       english: str) -> TurnResult:
        try:
            require_single_entity(state.relevant)
        except NoSelectedEntity:
            spoken = templates["pick_one_first"]
            self._record(state, utterance, english, spoken)
            return TurnResult(displayed=[], photos=[], spoken=spoken,
                              relevant_after=list(state.relevant),
                              mode_after=state.mode, intent="booking")
        state.mode = "booking"
        state.booking = BookingSlots()
        return self._booking_turn(state, index, templates, utterance,
                                  english, intent="booking")

    def _booking_turn(self, state: DialogueState, index: ResponseIndex,
                      templates: dict[str, str], utterance: str,
                      english: str, intent: str | None = None) -> TurnResult:
        entity_id = require_single_entity(state.relevant)
        result = booking_step(state.booking, english, entity_id,
                              index.entity_names[entity_id],
                              state.session_id, templates, today=self.today)
        state.booking = result.slots
        confirmation = None
        if result.complete:
            confirmation = result.confirmation
            self.confirmations.append(confirmation)
            state.mode = "search"
            state.relevant = list(state.all_entities)
            state.booking = BookingSlots()
        self._record(state, utterance, english, result.prompt)
        return TurnResult(displayed=[], photos=[], spoken=result.prompt,
                          relevant_after=list(state.relevant),
                          mode_after=state.mode, intent=intent,
                          booking=result.slots,
                          booking_complete=result.complete,
                          confirmation=confirmation)

    def _search_turn(self, state: DialogueState, index: ResponseIndex,
                     templates: dict[str, str], h_c, utterance: str,
                     english: str) -> TurnResult:
        try:
            hits = self._search(index, h_c, state.relevant,
                                TEXT_KINDS, self.params.top_n)
        except EmptyPool:
            return TurnResult(displayed=[], photos=[],
                              spoken=templates["empty_pool"],
                              relevant_after=list(state.relevant),
                              mode_after=state.mode)
        scores = np.array([s for _, s in hits])
        probs = compute_probs(scores, self.params.sharpness)
        q = entity_scores([c for c, _ in hits], probs)
        relevant_after = shrink(q, self.params.threshold, state.relevant)

        if len(relevant_after) == 1:
            displayed, photos = self._single_entity_display(
                index, h_c, relevant_after[0])
        else:
            displayed = self._multi_entity_display(index, hits, relevant_after)
            photos = []

        spoken = templates["empty_pool"]
        if displayed:
            eid, cand, _ = displayed[0]
            spoken = render_spoken(index.entity_names[eid], cand, templates)

        state.relevant = relevant_after
        self._record(state, utterance, english, spoken,
                     spoken_english=self._english_spoken(index, displayed))
        return TurnResult(displayed=displayed, photos=photos, spoken=spoken,
                          relevant_after=list(relevant_after),
                          mode_after=state.mode)

    def _multi_entity_display(self, index: ResponseIndex, hits,
                              relevant_after):
        best: dict[str, tuple[Candidate, float]] = {}
        for cand, score in hits:
            if cand.entity_id not in best:
                best[cand.entity_id] = (cand, score)
        displayed = []
        for eid in relevant_after[:self.params.max_display]:
            if eid in best:
                cand, score = best[eid]
                displayed.append((eid, cand, score))
        return displayed

    def _single_entity_display(self, index: ResponseIndex, h_c, eid: str):
        hits = self._search(index, h_c, [eid], TEXT_KINDS, self.params.top_n)
        displayed = [(eid, cand, score) for cand, score in hits]
        try:
            photo_hits = self._search(index, h_c, [eid], frozenset({KIND_PHOTO}),
                                      self.params.max_display)
        except EmptyPool:
            photo_hits = []
        return displayed, photo_hits

    def _english_spoken(self, index: ResponseIndex, displayed) -> str | None:
        if not displayed or index.language == "en":
            return None
        eid, cand, _ = displayed[0]
        english_templates = get_templates("en")
        english_cand = Candidate(cand.candidate_id, cand.entity_id, cand.kind,
                                 cand.english or cand.text, cand.vector)
        return render_spoken(index.entity_names[eid], english_cand,
                             english_templates)

    def _record(self, state: DialogueState, utterance: str, english: str,
                spoken: str, spoken_english: str | None = None) -> None:
        state.history.append(HistoryEntry("user", utterance, english))
        state.history.append(HistoryEntry("system", spoken,
                                          spoken_english or spoken))
