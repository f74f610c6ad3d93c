"""Translate-to-source serving layer.

Foreign deployments keep their response pool in the local language for
display but rank everything through English: candidate texts are
translated once at build time, user utterances per turn. The translation
backend is an injected provider; shipped implementations are an identity
mapper (tests, English) and a static dictionary stub (demos). Live MT
services plug in through a small HTTP provider.
"""

from __future__ import annotations

import json
import threading
import urllib.error
import urllib.request
from dataclasses import dataclass, field

from .errors import ParseError, ProviderError
from .featurizer import featurize

SUPPORTED_LANGUAGES = ("en", "de", "es", "zh", "pl", "ru", "ko", "sr")
PIVOT_LANGUAGE = "en"


class IdentityProvider:
    """Returns input unchanged; the provider used for English pools."""

    provider_id = "identity"

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        return text


class DictionaryProvider:
    """Word-by-word lookup in a static source->english table.

    Matching is case-insensitive on whole words; unknown words pass
    through. Whole-phrase entries win over word-level ones.
    """

    provider_id = "dictionary"

    def __init__(self, table: dict[str, str]):
        self.table = {k.lower(): v for k, v in table.items()}

    @classmethod
    def from_tsv(cls, path) -> "DictionaryProvider":
        table = {}
        with open(path, encoding="utf-8") as fh:
            for lineno, line in enumerate(fh, start=1):
                line = line.rstrip("\n")
                if not line:
                    continue
                parts = line.split("\t")
                if len(parts) != 2:
                    raise ParseError("expected source<TAB>english", line=lineno)
                table[parts[0]] = parts[1]
        return cls(table)

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        phrase = self.table.get(text.lower())
        if phrase is not None:
            return phrase
        return " ".join(self.table.get(word.lower(), word)
                        for word in text.split())


class ExternalProvider:
    """POSTs {text, source_lang, target_lang} to a translation endpoint."""

    provider_id = "external"

    def __init__(self, url: str, timeout: float = 10.0):
        self.url = url
        self.timeout = timeout

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        payload = json.dumps({"text": text, "source_lang": source_lang,
                              "target_lang": target_lang}).encode("utf-8")
        request = urllib.request.Request(
            self.url, data=payload, headers={"Content-Type": "application/json"})
        try:
            with urllib.request.urlopen(request, timeout=self.timeout) as resp:
                body = json.loads(resp.read().decode("utf-8"))
        except (urllib.error.URLError, OSError, ValueError) as exc:
            raise ProviderError(f"translation endpoint failed: {exc}") from exc
        if "text" not in body:
            raise ProviderError("translation endpoint returned no 'text' field")
        return str(body["text"])


class CachingProvider:
    """Thread-safe memoization wrapper around any provider."""

    def __init__(self, inner):
        self.inner = inner
        self.provider_id = getattr(inner, "provider_id", "unknown")
        self._cache: dict[tuple[str, str, str], str] = {}
        self._lock = threading.Lock()

    def translate(self, text: str, source_lang: str, target_lang: str) -> str:
        key = (text, source_lang, target_lang)
        with self._lock:
            hit = self._cache.get(key)
        if hit is not None:
            return hit
        result = self.inner.translate(text, source_lang, target_lang)
        with self._lock:
            self._cache[key] = result
        return result


def make_provider(spec: str):
    """Build a provider from a config value.

    Accepted forms: ``identity``, ``dictionary:<tsv path>``,
    ``external:<url>``.
    """
    if spec == "identity":
        return IdentityProvider()
    if spec.startswith("dictionary:"):
        return DictionaryProvider.from_tsv(spec.split(":", 1)[1])
    if spec.startswith("external:"):
        return ExternalProvider(spec.split(":", 1)[1])
    raise ValueError(f"unknown translation provider {spec!r}")


def translate_pool_texts(items, provider, language: str) -> list[str]:
    """Translate (id, text) pool entries to English, atomically.

    English pools (or a missing provider) pass through untouched. Any
    failure raises ProviderError tagged with the offending candidate id,
    and no partial result escapes.
    """
    if provider is None or language == PIVOT_LANGUAGE:
        return [text for _, text in items]
    english = []
    for item_id, text in items:
        try:
            english.append(provider.translate(text, language, PIVOT_LANGUAGE))
        except ProviderError as exc:
            raise ProviderError(str(exc), candidate_id=item_id) from exc
        except Exception as exc:
            raise ProviderError(f"provider crashed: {exc}",
                                candidate_id=item_id) from exc
    return english


@dataclass
class PoolEntry:
    candidate_id: str
    original: str
    english: str
    vector: object = None


@dataclass
class LocalizedPool:
    language: str
    entries: list[PoolEntry] = field(default_factory=list)


def pretranslate_pool(pool, provider, language: str, model=None,
                      vocab=None) -> LocalizedPool:
    """Translate a candidate pool offline and optionally encode it.

    ``pool`` is an iterable of (candidate_id, original_text). When a model
    and vocab are supplied, each entry also carries the encoding of its
    English translation; originals are always retained for display.
    """
    items = list(pool)
    english = translate_pool_texts(items, provider, language)
    entries = [PoolEntry(cid, original, eng)
               for (cid, original), eng in zip(items, english)]
    if model is not None and vocab is not None:
        feats = [featurize(e.english, vocab) for e in entries]
        vecs = model.encode_batch(feats, "rep")
        for entry, vec in zip(entries, vecs):
            entry.vector = vec
    return LocalizedPool(language=language, entries=entries)


def encode_foreign_context(text: str, provider, language: str, model,
                           vocab):
    """Translate a user utterance to English and encode it.

    Returns (Encoding, english_text). Fails with ProviderError without
    touching any session state, so the caller can retry the turn.
    """
    if provider is None or language == PIVOT_LANGUAGE:
        english = text
    else:
        try:
            english = provider.translate(text, language, PIVOT_LANGUAGE)
        except ProviderError:
            raise
        except Exception as exc:
            raise ProviderError(f"provider crashed: {exc}") from exc
    return model.encode_context(featurize(english, vocab)), english


# -- spoken rendering templates -----------------------------------------------

SPOKEN_TEMPLATES: dict[str, dict[str, str]] = {
    "en": {
        "review": "One review of {name} said {text}",
        "menu": "The menu of {name} includes {text}",
        "reset_ack": "Okay, let's start over. What kind of restaurant are you looking for?",
        "empty_pool": "Sorry, I could not find anything matching that.",
        "pick_one_first": "Please narrow it down to a single restaurant before booking.",
        "ask_date": "What date would you like to book {name} for?",
        "ask_time": "What time should I book?",
        "ask_party_size": "How many people will be dining?",
        "invalid_party_size": "That party size will not work; how many people (1 to 50) will be dining?",
        "booking_confirmed": "Done! Booked {name} for {party_size} on {date} at {time}.",
    },
    "de": {
        "review": "Eine Bewertung von {name} sagte {text}",
        "menu": "Die Speisekarte von {name} enthält {text}",
        "reset_ack": "Okay, fangen wir von vorne an. Welche Art von Restaurant suchen Sie?",
        "empty_pool": "Entschuldigung, dazu habe ich nichts gefunden.",
        "pick_one_first": "Bitte grenzen Sie die Suche auf ein Restaurant ein, bevor Sie reservieren.",
        "ask_date": "Für welches Datum möchten Sie {name} reservieren?",
        "ask_time": "Für welche Uhrzeit soll ich reservieren?",
        "ask_party_size": "Für wie viele Personen?",
        "invalid_party_size": "Diese Personenzahl geht nicht; für wie viele Personen (1 bis 50)?",
        "booking_confirmed": "Erledigt! {name} für {party_size} Personen am {date} um {time} reserviert.",
    },
    "es": {
        "review": "Una reseña de {name} decía {text}",
        "menu": "El menú de {name} incluye {text}",
        "reset_ack": "Vale, empecemos de nuevo. ¿Qué tipo de restaurante buscas?",
        "empty_pool": "Lo siento, no he encontrado nada que coincida.",
        "pick_one_first": "Elige un único restaurante antes de reservar.",
        "ask_date": "¿Para qué fecha quieres reservar en {name}?",
        "ask_time": "¿A qué hora hago la reserva?",
        "ask_party_size": "¿Para cuántas personas?",
        "invalid_party_size": "Ese número de personas no es válido; ¿cuántas personas (de 1 a 50)?",
        "booking_confirmed": "¡Hecho! Reservado {name} para {party_size} el {date} a las {time}.",
    },
}


def get_templates(language: str) -> dict[str, str]:
    """Spoken templates for a language, falling back to English."""
    return SPOKEN_TEMPLATES.get(language, SPOKEN_TEMPLATES[PIVOT_LANGUAGE])
