"""Response retrieval and constrained decoding.

The retrieval scorer encodes a dialogue context into m attended summary
vectors (one per learned code) and scores each candidate reply by a
final attention over those summaries followed by a dot product. Decoding
over any next-token scorer supports beam search with minimum length and
trigram blocking, and seeded top-k sampling. Retrieve-and-refine splices
the retrieved reply onto the history behind a separator token before
generating.
"""

from __future__ import annotations

import json
from dataclasses import dataclass

import numpy as np

from . import autodiff as ad
from .autodiff import Tensor
from .errors import ConfigError, DataError, DecodeDeadlock, ShapeError
from .labels import EMOTIONS
from .layers import (
    ParameterSet,
    add_encoder_block,
    add_linear,
    linear,
    sinusoidal_positions,
    transformer_encoder_block,
)

PAD, BOS, EOS, SEP = "<pad>", "<bos>", "<eos>", "<sep>"
RESERVED = (PAD, BOS, EOS, SEP) + tuple(f"<emo:{e}>" for e in EMOTIONS)


class Vocabulary:
    """Token table with reserved control ids first."""

    def __init__(self, tokens: list[str]):
        self.id_to_token = list(RESERVED) + [t for t in tokens if t not in RESERVED]
        self.token_to_id = {t: i for i, t in enumerate(self.id_to_token)}
        if len(self.token_to_id) != len(self.id_to_token):
            raise ConfigError("duplicate tokens in vocabulary")

    def __len__(self) -> int:
        return len(self.id_to_token)

    @property
    def pad_id(self) -> int:
        return self.token_to_id[PAD]

    @property
    def bos_id(self) -> int:
        return self.token_to_id[BOS]

    @property
    def eos_id(self) -> int:
        return self.token_to_id[EOS]

    @property
    def sep_id(self) -> int:
        return self.token_to_id[SEP]

    def emotion_id(self, emotion: str) -> int:
        key = f"<emo:{emotion}>"
        if key not in self.token_to_id:
            raise DataError(f"unknown emotion {emotion!r}")
        return self.token_to_id[key]

    def reserved_ids(self) -> set[int]:
        return {self.token_to_id[t] for t in RESERVED}

    def non_text_ids(self) -> set[int]:
        """Reserved ids a generator must never emit (everything but EOS)."""
        return self.reserved_ids() - {self.eos_id}

    def encode(self, words: list[str]) -> list[int]:
        return [self.token_to_id[w] for w in words if w in self.token_to_id]

    def decode(self, ids: list[int]) -> list[str]:
        return [self.id_to_token[i] for i in ids]

    def to_json(self) -> str:
        return json.dumps(self.id_to_token)

    @classmethod
    def from_json(cls, text: str) -> "Vocabulary":
        tokens = json.loads(text)
        if tokens[: len(RESERVED)] != list(RESERVED):
            raise ConfigError("vocabulary file must list reserved tokens first")
        return cls(tokens[len(RESERVED) :])

    @classmethod
    def from_texts(cls, texts: list[str]) -> "Vocabulary":
        seen: dict[str, None] = {}
        for text in texts:
            for w in text.lower().split():
                seen.setdefault(w, None)
        return cls(list(seen))


# ---------------------------------------------------------------------------
# poly-encoder retrieval


@dataclass(frozen=True)
class PolyEncoderConfig:
    d_model: int = 16
    n_heads: int = 2
    n_blocks: int = 1
    n_codes: int = 4
    aggregator: str = "mean"  # or "first-token"
    max_positions: int = 128
    seed: int = 0

    def __post_init__(self):
        if self.aggregator not in ("mean", "first-token"):
            raise ConfigError(f"aggregator must be 'mean' or 'first-token', got {self.aggregator!r}")
        if self.d_model % self.n_heads:
            raise ConfigError("d_model must be divisible by n_heads")


class PolyEncoderModel:
    """Context encoder, candidate encoder (shared embeddings), and m codes."""

    def __init__(self, vocab: Vocabulary, config: PolyEncoderConfig | None = None):
        self.vocab = vocab
        self.config = config or PolyEncoderConfig()
        cfg = self.config
        rng = np.random.default_rng(cfg.seed)
        self.params = ParameterSet()
        self.params.add("emb", rng.standard_normal((len(vocab), cfg.d_model)).astype(np.float32) * 0.5)
        for side in ("ctx", "cand"):
            for b in range(cfg.n_blocks):
                add_encoder_block(self.params, f"{side}.blk{b}", cfg.d_model, 2 * cfg.d_model, rng)
        self.params.add("codes", rng.standard_normal((cfg.n_codes, cfg.d_model)).astype(np.float32))
        self._positions = sinusoidal_positions(cfg.max_positions, cfg.d_model)

    def encode_tokens(self, token_ids: list[int], side: str) -> np.ndarray:
        """Transformer outputs h_1..h_N for one side ('ctx' or 'cand')."""
        if not token_ids:
            raise DataError("cannot encode an empty token sequence")
        ids = np.asarray(token_ids, dtype=np.int64)
        if len(ids) > self._positions.shape[0]:
            ids = ids[-self._positions.shape[0] :]
        x = ad.add(ad.gather_rows(self.params["emb"], ids), Tensor(self._positions[: len(ids)]))
        for b in range(self.config.n_blocks):
            x = transformer_encoder_block(x, self.params, f"{side}.blk{b}", self.config.n_heads)
        return x.data


def _softmax(v: np.ndarray) -> np.ndarray:
    e = np.exp(v - v.max())
    return e / e.sum()


def encode_candidate(token_ids: list[int], model: PolyEncoderModel) -> np.ndarray:
    """Candidate embedding: encoder outputs reduced by the aggregator."""
    h = model.encode_tokens(token_ids, "cand")
    if model.config.aggregator == "mean":
        return h.mean(axis=0)
    return h[0]


def attend_codes(h: np.ndarray, codes: np.ndarray) -> np.ndarray:
    """Per-code attention over token encodings: softmax(c_i . h_j) weights."""
    weights = np.stack([_softmax(codes[i] @ h.T) for i in range(codes.shape[0])])
    return weights @ h


def poly_encode_context(token_ids: list[int], model: PolyEncoderModel) -> np.ndarray:
    """m context summary vectors, one per learned code."""
    h = model.encode_tokens(token_ids, "ctx")
    return attend_codes(h, model.params["codes"].data)


def combine_context(context_vectors: np.ndarray, y_cand: np.ndarray) -> tuple[np.ndarray, np.ndarray]:
    """Candidate-conditioned mix of the summaries; returns (y_ctxt, weights)."""
    if context_vectors.shape[1] != y_cand.shape[0]:
        raise ShapeError(
            f"context dim {context_vectors.shape[1]} vs candidate dim {y_cand.shape[0]}"
        )
    weights = _softmax(context_vectors @ y_cand)
    return weights @ context_vectors, weights


def score(context_vectors: np.ndarray, y_cand: np.ndarray) -> float:
    """Final relevance: attention-mixed context dotted with the candidate."""
    y_ctxt, _ = combine_context(context_vectors, y_cand)
    return float(y_ctxt @ y_cand)


def retrieve(context_tokens: list[int], candidates: list[list[int]], model: PolyEncoderModel) -> tuple[int, list[float]]:
    """Best candidate index (ties to the lowest index) plus all scores."""
    if not candidates:
        raise DataError("candidate set is empty")
    context_vectors = poly_encode_context(context_tokens, model)
    scores = [score(context_vectors, encode_candidate(c, model)) for c in candidates]
    return int(np.argmax(scores)), scores


# ---------------------------------------------------------------------------
# next-token scorers


class TokenScorer:
    """Anything that maps a token-id prefix to logits over the vocabulary."""

    def next_token_logits(self, prefix: list[int]) -> np.ndarray:
        raise NotImplementedError

    @property
    def vocab_size(self) -> int:
        raise NotImplementedError


class BigramScorer(TokenScorer):
    """Table-driven scorer: logits depend only on the previous token."""

    def __init__(self, initial_logits: np.ndarray, transition_logits: np.ndarray):
        initial_logits = np.asarray(initial_logits, dtype=np.float64)
        transition_logits = np.asarray(transition_logits, dtype=np.float64)
        v = initial_logits.shape[0]
        if transition_logits.shape != (v, v):
            raise ShapeError(f"transition table must be {v}x{v}, got {transition_logits.shape}")
        self.initial = initial_logits
        self.transitions = transition_logits

    @classmethod
    def random(cls, vocab_size: int, seed: int, scale: float = 2.0) -> "BigramScorer":
        rng = np.random.default_rng(seed)
        return cls(
            rng.standard_normal(vocab_size) * scale,
            rng.standard_normal((vocab_size, vocab_size)) * scale,
        )

    def next_token_logits(self, prefix: list[int]) -> np.ndarray:
        if not prefix:
            return self.initial.copy()
        return self.transitions[prefix[-1]].copy()

    @property
    def vocab_size(self) -> int:
        return self.initial.shape[0]


class TinyTransformerScorer(TokenScorer):
    """Causal transformer language model at toy scale."""

    def __init__(self, vocab: Vocabulary, d_model: int = 16, n_heads: int = 2, n_blocks: int = 1,
                 max_positions: int = 64, seed: int = 0):
        self.vocab = vocab
        self.n_heads = n_heads
        self.n_blocks = n_blocks
        self.max_positions = max_positions
        rng = np.random.default_rng(seed)
        self.params = ParameterSet()
        self.params.add("emb", rng.standard_normal((len(vocab), d_model)).astype(np.float32) * 0.5)
        for b in range(n_blocks):
            add_encoder_block(self.params, f"blk{b}", d_model, 2 * d_model, rng)
        add_linear(self.params, "out", d_model, len(vocab), rng)
        self._positions = sinusoidal_positions(max_positions, d_model)

    def next_token_logits(self, prefix: list[int]) -> np.ndarray:
        ids = [self.vocab.bos_id] + list(prefix)
        ids = np.asarray(ids[-self.max_positions :], dtype=np.int64)
        x = ad.add(ad.gather_rows(self.params["emb"], ids), Tensor(self._positions[: len(ids)]))
        for b in range(self.n_blocks):
            x = transformer_encoder_block(x, self.params, f"blk{b}", self.n_heads, causal=True)
        logits = linear(x, self.params, "out").data
        return logits[-1].astype(np.float64)

    @property
    def vocab_size(self) -> int:
        return len(self.vocab)


# ---------------------------------------------------------------------------
# decoding


@dataclass(frozen=True)
class DecodeConfig:
    method: str = "beam"  # or "top_k"
    beam_size: int = 4
    max_len: int = 20
    min_len: int = 1
    block_trigrams: bool = True
    top_k: int = 5
    seed: int = 0


def _log_softmax(logits: np.ndarray) -> np.ndarray:
    shifted = logits - logits.max()
    return shifted - np.log(np.exp(shifted).sum())


def _trigrams(tokens: list[int]) -> set[tuple[int, int, int]]:
    return {tuple(tokens[i : i + 3]) for i in range(len(tokens) - 2)}


def _masked_logprobs(
    logits: np.ndarray,
    generated: list[int],
    prefix: list[int],
    min_len: int,
    eos_id: int | None,
    block_trigrams: bool,
    context_trigrams: set,
    forbidden: set[int],
) -> np.ndarray:
    logp = _log_softmax(logits)
    for tok in forbidden:
        logp[tok] = -np.inf
    if eos_id is not None and len(generated) < min_len:
        logp[eos_id] = -np.inf
    if block_trigrams:
        hypothesis = list(prefix) + list(generated)
        if len(hypothesis) >= 2:
            a, b = hypothesis[-2], hypothesis[-1]
            banned = {z for (x, y, z) in context_trigrams | _trigrams(hypothesis) if (x, y) == (a, b)}
            for tok in banned:
                logp[tok] = -np.inf
    return logp


def beam_search(
    scorer: TokenScorer,
    prefix: list[int],
    beam_size: int,
    max_len: int,
    min_len: int = 0,
    block_trigrams: bool = False,
    context_tokens: list[int] | None = None,
    eos_id: int | None = None,
    forbidden: set[int] | None = None,
) -> list[int]:
    """Length-capped beam search over summed log-probabilities.

    EOS is masked until min_len tokens have been emitted; with trigram
    blocking on, any token completing a trigram of the supplied context or
    of the hypothesis itself is masked. Returns the best finished
    hypothesis (EOS excluded from the returned ids, included in its score).
    """
    if beam_size < 1:
        raise ConfigError("beam_size must be >= 1")
    if min_len > max_len:
        raise ConfigError(f"min_len {min_len} exceeds max_len {max_len}")
    context_trigrams = _trigrams(list(context_tokens)) if context_tokens else set()
    forbidden = forbidden or set()

    live: list[tuple[float, list[int]]] = [(0.0, [])]
    finished: list[tuple[float, list[int]]] = []
    for _ in range(max_len):
        expansions: list[tuple[float, list[int]]] = []
        for score_so_far, generated in live:
            logits = scorer.next_token_logits(list(prefix) + generated)
            logp = _masked_logprobs(
                logits, generated, prefix, min_len, eos_id, block_trigrams, context_trigrams, forbidden
            )
            if not np.any(np.isfinite(logp)):
                raise DecodeDeadlock(f"all tokens masked after {generated}")
            order = np.argsort(-logp, kind="stable")[: beam_size + 1]
            for tok in order:
                if not np.isfinite(logp[tok]):
                    continue
                total = score_so_far + float(logp[tok])
                if eos_id is not None and tok == eos_id:
                    finished.append((total, generated))
                else:
                    expansions.append((total, generated + [int(tok)]))
        if not expansions:
            break
        expansions.sort(key=lambda pair: (-pair[0], pair[1]))
        live = expansions[:beam_size]
    finished.extend(live)
    if not finished:
        raise DecodeDeadlock("no hypothesis survived decoding")
    finished.sort(key=lambda pair: (-pair[0], pair[1]))
    return finished[0][1]


def top_k_sample(
    scorer: TokenScorer,
    prefix: list[int],
    k: int,
    max_len: int,
    seed: int,
    eos_id: int | None = None,
    forbidden: set[int] | None = None,
) -> list[int]:
    """Sample each step from the k most likely tokens, renormalized."""
    if not 1 <= k <= scorer.vocab_size:
        raise ConfigError(f"k must be in [1, {scorer.vocab_size}], got {k}")
    rng = np.random.default_rng(seed)
    generated: list[int] = []
    forbidden = forbidden or set()
    for _ in range(max_len):
        logits = scorer.next_token_logits(list(prefix) + generated).astype(np.float64)
        for tok in forbidden:
            logits[tok] = -np.inf
        order = np.argsort(-logits, kind="stable")[:k]
        probs = _softmax(logits[order])
        tok = int(order[rng.choice(len(order), p=probs)])
        if eos_id is not None and tok == eos_id:
            break
        generated.append(tok)
    return generated


def retrieve_and_refine(
    history: list[int],
    candidates: list[list[int]],
    model: PolyEncoderModel,
    scorer: TokenScorer,
    decode_cfg: DecodeConfig,
) -> list[int]:
    """Generate on history extended with the retrieved reply behind SEP.

    With no candidates to retrieve, falls back to plain generation on the
    history. Reserved control tokens other than EOS are never emitted.
    """
    vocab = model.vocab
    if candidates:
        best, _ = retrieve(history, candidates, model)
        context = list(history) + [vocab.sep_id] + list(candidates[best])
    else:
        context = list(history)
    forbidden = vocab.non_text_ids()
    if decode_cfg.method == "top_k":
        return top_k_sample(
            scorer, context, decode_cfg.top_k, decode_cfg.max_len, decode_cfg.seed,
            eos_id=vocab.eos_id, forbidden=forbidden,
        )
    return beam_search(
        scorer, context, decode_cfg.beam_size, decode_cfg.max_len,
        min_len=decode_cfg.min_len, block_trigrams=decode_cfg.block_trigrams,
        context_tokens=context, eos_id=vocab.eos_id, forbidden=forbidden,
    )


def build_context(history: list[int], retrieved: list[int], vocab: Vocabulary) -> list[int]:
    """History ++ [SEP] ++ retrieved, the generation context layout."""
    return list(history) + [vocab.sep_id] + list(retrieved)
