"""Intent classifiers (reset / booking) and booking slot extraction."""

import datetime as dt
from importlib import resources

import numpy as np
import pytest

from polyfind import encoder as enc
from polyfind import featurizer as feat
from polyfind.errors import (
    DimensionMismatch,
    InsufficientData,
    NoSelectedEntity,
)
from polyfind.intent_booking import (
    BookingSlots,
    IntentClassifier,
    IntentTrainConfig,
    booking_step,
    cross_validate,
    extract_date,
    extract_party_size,
    extract_time,
    load_classifier,
    require_single_entity,
    save_classifier,
    train_intent,
    update_slots,
)
from polyfind.multilingual import get_templates

EN = get_templates("en")
TODAY = dt.date(2025, 3, 10)  # a Monday


def fixture_lines(name):
    text = (resources.files("polyfind") / "fixtures" / name).read_text("utf-8")
    return [line.strip() for line in text.splitlines() if line.strip()]


RESET = fixture_lines("reset_en.txt")
BOOKING = fixture_lines("booking_en.txt")
NEGATIVES = fixture_lines("negatives_en.txt")


RESET_ACK = "okay clearing everything and starting the search over"
BOOKING_ACK = "sure I will arrange the table booking for you"


@pytest.fixture(scope="module")
def intent_setup():
    """Encoder pretrained on ack-style conversational pairs.

    Contexts that predict the same reply land near each other, which is
    exactly the structure the intent heads need; plain self-pairs leave
    paraphrases of one intent scattered.
    """
    pairs = [(t, RESET_ACK) for t in RESET]
    pairs += [(t, BOOKING_ACK) for t in BOOKING]
    pairs += [(t, t) for t in NEGATIVES]
    texts = RESET + BOOKING + NEGATIVES + [RESET_ACK, BOOKING_ACK]
    vocab = feat.build_vocab(texts, min_count=1)
    cfg = enc.EncoderConfig(embed_dim=24, hidden_dim=32, hidden_layers=2,
                            out_dim=24, batch_size=10, seed=7,
                            learn_rate=0.5, epochs=80)
    model = enc.train(pairs, cfg, vocab)
    return model, vocab


@pytest.fixture(scope="module")
def reset_clf(intent_setup):
    model, vocab = intent_setup
    return train_intent("reset", RESET, NEGATIVES + BOOKING, model, vocab)


def encode(model, vocab, text):
    return model.encode_context(feat.featurize(text, vocab))


def classifier_fd_errors(clf, vectors, labels, step=1e-5, samples=10, seed=0):
    """Relative error of analytic grads vs central finite differences."""
    _, grads = clf._loss_and_grads(vectors, labels)
    rng = np.random.default_rng(seed)
    errors = {}
    for name, grad in grads.items():
        param = clf.params[name]
        flat_grad = np.asarray(grad, dtype=np.float64).ravel()
        idxs = rng.choice(param.size, size=min(samples, param.size),
                          replace=False)
        worst = 0.0
        for idx in idxs:
            orig = param.flat[idx]
            plus = np.float32(np.float64(orig) + step)
            minus = np.float32(np.float64(orig) - step)
            param.flat[idx] = plus
            up = clf.batch_loss(vectors, labels)
            param.flat[idx] = minus
            down = clf.batch_loss(vectors, labels)
            param.flat[idx] = orig
            fd = (up - down) / (np.float64(plus) - np.float64(minus))
            denom = max(abs(fd), abs(flat_grad[idx]), 1e-8)
            worst = max(worst, abs(fd - flat_grad[idx]) / denom)
        errors[name] = worst
    return errors


class TestClassifierMath:
    def test_gradients_match_finite_differences(self):
        clf = IntentClassifier.initialize("t", in_dim=12, hidden_dim=9, seed=4)
        rng = np.random.default_rng(21)
        vectors = rng.standard_normal((6, 12))
        vectors /= np.linalg.norm(vectors, axis=1, keepdims=True)
        labels = np.array([1, 0, 1, 1, 0, 0], dtype=np.float64)
        errors = classifier_fd_errors(clf, vectors, labels)
        for name, err in errors.items():
            assert err < 1e-3, f"{name}: {err}"

    def test_probabilities_in_unit_interval(self):
        clf = IntentClassifier.initialize("t", in_dim=8, seed=1)
        vecs = np.random.default_rng(2).standard_normal((40, 8)) * 5
        probs = clf.probabilities(vecs)
        assert np.all(probs >= 0) and np.all(probs <= 1)

    def test_classify_is_pure(self):
        clf = IntentClassifier.initialize("t", in_dim=8, seed=1)
        vec = np.random.default_rng(3).standard_normal(8)
        assert clf.classify(vec) == clf.classify(vec)

    def test_dimension_mismatch(self):
        clf = IntentClassifier.initialize("t", in_dim=8, seed=1)
        with pytest.raises(DimensionMismatch):
            clf.probabilities(np.zeros((2, 9)))

    def test_loss_decreases_under_training(self):
        clf = IntentClassifier.initialize("t", in_dim=10, seed=5)
        rng = np.random.default_rng(6)
        vectors = rng.standard_normal((20, 10))
        labels = (rng.random(20) > 0.5).astype(np.float64)
        first = clf.batch_loss(vectors, labels)
        for _ in range(50):
            _, grads = clf._loss_and_grads(vectors, labels)
            clf.apply_grads(grads, 0.5)
        assert clf.batch_loss(vectors, labels) < first


class TestIntentTraining:
    def test_start_again_fires(self, intent_setup, reset_clf):
        model, vocab = intent_setup
        fired, prob = reset_clf.classify(encode(model, vocab, "Start again"))
        assert fired and prob >= 0.5

    def test_negative_query_stays_below_threshold(self, intent_setup,
                                                  reset_clf):
        model, vocab = intent_setup
        fired, prob = reset_clf.classify(
            encode(model, vocab, "Tell me about the pasta"))
        assert not fired and prob < 0.5

    def test_encoder_frozen_during_training(self, intent_setup):
        model, vocab = intent_setup
        before = {k: v.copy() for k, v in model.params.items()}
        train_intent("reset", RESET, NEGATIVES, model, vocab)
        for key, value in model.params.items():
            assert np.array_equal(value, before[key])

    def test_training_is_deterministic(self, intent_setup):
        model, vocab = intent_setup
        a = train_intent("reset", RESET, NEGATIVES, model, vocab)
        b = train_intent("reset", RESET, NEGATIVES, model, vocab)
        for key in a.params:
            assert np.array_equal(a.params[key], b.params[key])

    def test_insufficient_data(self, intent_setup):
        model, vocab = intent_setup
        with pytest.raises(InsufficientData):
            train_intent("reset", RESET[:4], NEGATIVES, model, vocab)
        with pytest.raises(InsufficientData):
            train_intent("reset", RESET, NEGATIVES[:3], model, vocab)

    def test_leave_four_out_accuracy(self, intent_setup):
        model, vocab = intent_setup
        acc_reset = cross_validate("reset", RESET, NEGATIVES + BOOKING,
                                   model, vocab)
        acc_booking = cross_validate("booking", BOOKING, NEGATIVES + RESET,
                                     model, vocab)
        assert acc_reset >= 0.8
        assert acc_booking >= 0.8

    def test_round_trip_preserves_probabilities(self, tmp_path, intent_setup,
                                                reset_clf):
        model, vocab = intent_setup
        path = tmp_path / "reset.npz"
        save_classifier(reset_clf, path)
        loaded = load_classifier(path)
        assert loaded.name == "reset"
        assert loaded.threshold == reset_clf.threshold
        for text in RESET[:3] + NEGATIVES[:3]:
            h = encode(model, vocab, text)
            assert loaded.classify(h) == reset_clf.classify(h)

    def test_custom_threshold_respected(self, intent_setup):
        model, vocab = intent_setup
        clf = train_intent("reset", RESET, NEGATIVES, model, vocab,
                           IntentTrainConfig(threshold=0.99))
        _, prob = clf.classify(encode(model, vocab, "Start again"))
        fired, _ = clf.classify(encode(model, vocab, "Start again"))
        assert fired == (prob >= 0.99)


class TestDateExtraction:
    @pytest.mark.parametrize("text,expected", [
        ("today works", "2025-03-10"),
        ("tonight please", "2025-03-10"),
        ("tomorrow evening", "2025-03-11"),
        ("on friday", "2025-03-14"),
        ("this monday", "2025-03-17"),     # same weekday rolls a week ahead
        ("next monday", "2025-03-17"),
        ("sunday would be great", "2025-03-16"),
        ("no date here", None),
    ])
    def test_examples(self, text, expected):
        assert extract_date(text, TODAY) == expected


class TestTimeExtraction:
    @pytest.mark.parametrize("text,expected", [
        ("at 7pm", "19:00"),
        ("at 7 am", "07:00"),
        ("around 7:30 pm", "19:30"),
        ("at 19:45", "19:45"),
        ("12:15am", "00:15"),
        ("12pm sharp", "12:00"),
        ("noon", "12:00"),
        ("midnight snack", "00:00"),
        ("at 25:00", None),
        ("at 13pm", None),
        ("no time here", None),
    ])
    def test_examples(self, text, expected):
        assert extract_time(text) == expected


class TestPartyExtraction:
    @pytest.mark.parametrize("text,expected", [
        ("table for 4", (4, False)),
        ("party of 12", (12, False)),
        ("we are 6 people", (6, False)),
        ("for four", (4, False)),
        ("two guests", (2, False)),
        ("for 0 people", (None, True)),
        ("group of 51", (None, True)),
        ("for fifty", (None, False)),
        ("no size here", (None, False)),
    ])
    def test_examples(self, text, expected):
        assert extract_party_size(text) == expected


class TestSlotUpdates:
    def test_filled_slot_survives_unrelated_utterance(self):
        slots = BookingSlots(date="2025-03-11")
        updated, rejected = update_slots(slots, "at 7pm", TODAY)
        assert updated.date == "2025-03-11"
        assert updated.time == "19:00"
        assert not rejected

    def test_new_value_overwrites(self):
        slots = BookingSlots(date="2025-03-11", time="19:00", party_size=2)
        updated, _ = update_slots(slots, "make it friday for 6", TODAY)
        assert updated.date == "2025-03-14"
        assert updated.party_size == 6
        assert updated.time == "19:00"

    def test_missing_order(self):
        assert BookingSlots().missing() == ["date", "time", "party_size"]
        assert BookingSlots(date="d").missing() == ["time", "party_size"]
        assert BookingSlots(date="d", time="t").missing() == ["party_size"]
        assert BookingSlots(date="d", time="t", party_size=2).complete()


class TestBookingStep:
    def run(self, slots, text):
        return booking_step(slots, text, "e1", "Luigi's", "s1", EN,
                            today=TODAY)

    def test_everything_in_one_utterance(self):
        result = self.run(BookingSlots(), "table for 4 tomorrow at 7pm")
        assert result.complete
        assert result.slots == BookingSlots("2025-03-11", "19:00", 4)
        assert result.confirmation == {
            "entity_id": "e1", "date": "2025-03-11", "time": "19:00",
            "party_size": 4, "session_id": "s1"}

    def test_nothing_extractable_prompts_for_date(self):
        result = self.run(BookingSlots(), "book a table")
        assert not result.complete
        assert result.prompt == EN["ask_date"].format(name="Luigi's")

    def test_prompt_order_follows_missing_slots(self):
        result = self.run(BookingSlots(date="2025-03-11"), "hmm")
        assert result.prompt == EN["ask_time"].format(name="Luigi's")
        result = self.run(BookingSlots(date="2025-03-11", time="19:00"), "hm")
        assert result.prompt == EN["ask_party_size"].format(name="Luigi's")

    def test_zero_party_rejected_and_reprompted(self):
        result = self.run(BookingSlots(date="2025-03-11", time="19:00"),
                          "for 0 people")
        assert result.party_rejected
        assert not result.complete
        assert result.slots.party_size is None
        assert result.prompt == EN["invalid_party_size"]

    def test_rejected_correction_keeps_previous_size(self):
        result = self.run(
            BookingSlots(date="2025-03-11", time="19:00", party_size=4),
            "for 200 people")
        assert result.complete
        assert result.slots.party_size == 4

    def test_confirmation_prompt_mentions_details(self):
        result = self.run(BookingSlots("2025-03-11", "19:00", 4), "yes")
        assert "Luigi's" in result.prompt
        assert "2025-03-11" in result.prompt
        assert "19:00" in result.prompt
        assert "4" in result.prompt


class TestRequireSingleEntity:
    def test_single(self):
        assert require_single_entity(["e1"]) == "e1"

    def test_multiple_rejected(self):
        with pytest.raises(NoSelectedEntity):
            require_single_entity(["e1", "e2"])

    def test_empty_rejected(self):
        with pytest.raises(NoSelectedEntity):
            require_single_entity([])
