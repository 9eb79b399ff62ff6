"""The seven emotion classes and label normalization."""

from .errors import LabelError

EMOTIONS = ("anger", "disgust", "fear", "happiness", "sadness", "surprise", "neutral")

# common corpus synonyms mapped onto the canonical seven
DEFAULT_ALIASES = {
    "angry": "anger",
    "happy": "happiness",
    "sad": "sadness",
    "sadness": "sadness",
    "surprised": "surprise",
    "pleasant surprise": "surprise",
    "fearful": "fear",
    "calm": "neutral",
}


def normalize_label(label: str, aliases: dict | None = None, calm_to_neutral: bool = True) -> str:
    """Map a corpus label onto the canonical class set or raise LabelError."""
    lookup = dict(DEFAULT_ALIASES if aliases is None else aliases)
    if not calm_to_neutral:
        lookup.pop("calm", None)
    norm = label.strip().lower()
    norm = lookup.get(norm, norm)
    if norm not in EMOTIONS:
        raise LabelError(f"label {label!r} is not one of the 7 emotion classes")
    return norm


def label_index(label: str) -> int:
    return EMOTIONS.index(normalize_label(label))
