"""Retrieval-based conversational search over restaurant catalogs.

Text and photo responses are pre-encoded into a per-city index; each
conversation turn ranks the pool, narrows the set of relevant
restaurants, and renders a spoken reply, with reset and booking intents
layered on top and foreign languages served through translate-to-source.
"""

from .dialogue import (
    DialogueState,
    Engine,
    FlowParams,
    TurnResult,
    compute_probs,
    entity_scores,
    render_spoken,
    shrink,
)
from .encoder import (
    EncoderConfig,
    EncoderModel,
    Encoding,
    load_model,
    save_model,
    score,
    train,
)
from .errors import PolyfindError
from .featurizer import (
    FeatureSet,
    Vocab,
    build_vocab,
    featurize,
    load_vocab,
    normalize,
    save_vocab,
)
from .index import (
    Candidate,
    Entity,
    IndexStats,
    ResponseIndex,
    build_index,
    load_index,
    save_index,
)
from .intent_booking import (
    BookingSlots,
    IntentClassifier,
    booking_step,
    cross_validate,
    load_classifier,
    save_classifier,
    train_intent,
)
from .multilingual import (
    DictionaryProvider,
    IdentityProvider,
    LocalizedPool,
    encode_foreign_context,
    make_provider,
    pretranslate_pool,
)
from .photos import (
    PhotoFeatures,
    PhotoHead,
    load_photo_head,
    photo_score,
    save_photo_head,
    train_photo_head,
)

__version__ = "0.1.0"

__all__ = [
    "BookingSlots",
    "Candidate",
    "DialogueState",
    "DictionaryProvider",
    "EncoderConfig",
    "EncoderModel",
    "Encoding",
    "Engine",
    "Entity",
    "FeatureSet",
    "FlowParams",
    "IdentityProvider",
    "IndexStats",
    "IntentClassifier",
    "LocalizedPool",
    "PhotoFeatures",
    "PhotoHead",
    "PolyfindError",
    "ResponseIndex",
    "TurnResult",
    "Vocab",
    "booking_step",
    "build_index",
    "build_vocab",
    "compute_probs",
    "cross_validate",
    "encode_foreign_context",
    "entity_scores",
    "featurize",
    "load_classifier",
    "load_index",
    "load_model",
    "load_photo_head",
    "load_vocab",
    "make_provider",
    "normalize",
    "photo_score",
    "pretranslate_pool",
    "render_spoken",
    "save_classifier",
    "save_index",
    "save_model",
    "save_photo_head",
    "save_vocab",
    "score",
    "shrink",
    "train",
    "train_intent",
    "train_photo_head",
    "__version__",
]
