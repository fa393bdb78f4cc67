"""Synthetic corpus generation, vocabulary, masking, and batching.

Each content token owns a fixed Gaussian prototype vector; an utterance
emits every token's prototype for a few consecutive frames plus noise.
The repeat minimum of 2 guarantees CTC feasibility (T >= 2U+1 would need
repeats >= 2 plus one extra frame; see generate_corpus).
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from typing import Sequence

import numpy as np

from .errors import ConfigError, VocabularyError

BLANK = 0
PAD = 1
MASK = 2
UNK = 3
NUM_SPECIALS = 4
SPECIAL_IDS = (BLANK, PAD, MASK, UNK)


class Vocabulary:
    """id 0 = CTC blank, 1 = PAD, 2 = MASK, 3 = UNK, 4.. = content tokens."""

    def __init__(self, num_content: int):
        if num_content < 1:
            raise ConfigError("vocabulary needs at least one content token")
        self.num_content = num_content

    @property
    def size(self) -> int:
        return NUM_SPECIALS + self.num_content

    @property
    def content_ids(self) -> range:
        return range(NUM_SPECIALS, self.size)

    def check_target(self, tokens: Sequence[int]):
        for t in tokens:
            if not (NUM_SPECIALS <= t < self.size):
                raise VocabularyError(f"token id {t} is not a content token (vocab size {self.size})")


@dataclass
class Utterance:
    id: str
    tokens: list[int]
    features: np.ndarray  # (T, input_dim) float64


@dataclass
class Batch:
    """Padded features/tokens with validity masks (True = real position)."""
    features: np.ndarray      # (B, T_max, input_dim)
    frame_mask: np.ndarray    # (B, T_max) bool
    tokens: np.ndarray        # (B, S_max) int, PAD-padded
    token_mask: np.ndarray    # (B, S_max) bool
    masked_tokens: np.ndarray  # (B, S_max) int, Y^r: MASK at sampled positions
    mask_positions: np.ndarray  # (B, S_max) bool
    ids: list[str] = field(default_factory=list)

    def __len__(self):
        return self.features.shape[0]


def generate_corpus(seed: int, num_utts: int, vocab_size: int, input_dim: int,
                    len_range: tuple[int, int] = (3, 10),
                    repeat_range: tuple[int, int] = (2, 4),
                    noise_sigma: float = 0.1,
                    id_prefix: str = "utt") -> list[Utterance]:
    if len_range[0] < 1 or len_range[1] < len_range[0]:
        raise ConfigError(f"invalid len_range {len_range}")
    if repeat_range[0] < 2 or repeat_range[1] < repeat_range[0]:
        raise ConfigError(f"repeat_range minimum must be >= 2 for CTC feasibility, got {repeat_range}")
    if noise_sigma < 0:
        raise ConfigError("noise_sigma must be nonnegative")
    rng = np.random.default_rng(seed)
    vocab = Vocabulary(vocab_size)
    prototypes = rng.normal(0.0, 1.0, size=(vocab_size, input_dim))
    utts = []
    for i in range(num_utts):
        length = int(rng.integers(len_range[0], len_range[1] + 1))
        tokens = [int(t) for t in rng.integers(NUM_SPECIALS, vocab.size, size=length)]
        frames = []
        for tok in tokens:
            r = int(rng.integers(repeat_range[0], repeat_range[1] + 1))
            frames.append(np.repeat(prototypes[tok - NUM_SPECIALS][None, :], r, axis=0))
        feats = np.concatenate(frames, axis=0)
        if noise_sigma > 0:
            feats = feats + rng.normal(0.0, noise_sigma, size=feats.shape)
        utts.append(Utterance(id=f"{id_prefix}{i:05d}", tokens=tokens, features=feats))
    return utts


def token_prototypes(seed: int, vocab_size: int, input_dim: int) -> np.ndarray:
    """Prototype matrix drawn by generate_corpus for the same seed."""
    return np.random.default_rng(seed).normal(0.0, 1.0, size=(vocab_size, input_dim))


def make_masked_truth(tokens: Sequence[int], rng: np.random.Generator,
                      ratio_range: tuple[float, float] = (0.15, 0.5)):
    """Return (Y^r, mask_positions): at least one token replaced by MASK."""
    n = len(tokens)
    if n == 0:
        raise ConfigError("cannot mask an empty token sequence")
    ratio = rng.uniform(ratio_range[0], ratio_range[1])
    k = max(1, int(np.ceil(ratio * n)))
    positions = rng.choice(n, size=k, replace=False)
    masked = list(tokens)
    flags = np.zeros(n, dtype=bool)
    for p in positions:
        masked[p] = MASK
        flags[p] = True
    return masked, flags


def collate(utts: Sequence[Utterance], rng: np.random.Generator | None = None,
            ratio_range: tuple[float, float] = (0.15, 0.5)) -> Batch:
    """Right-pad to batch maxima; when an rng is given, also draw Y^r masks."""
    if not utts:
        raise ConfigError("collate requires a nonempty utterance list")
    b = len(utts)
    input_dim = utts[0].features.shape[1]
    t_max = max(u.features.shape[0] for u in utts)
    s_max = max(len(u.tokens) for u in utts)
    features = np.zeros((b, t_max, input_dim))
    frame_mask = np.zeros((b, t_max), dtype=bool)
    tokens = np.full((b, s_max), PAD, dtype=np.int64)
    token_mask = np.zeros((b, s_max), dtype=bool)
    masked_tokens = np.full((b, s_max), PAD, dtype=np.int64)
    mask_positions = np.zeros((b, s_max), dtype=bool)
    for i, u in enumerate(utts):
        t, s = u.features.shape[0], len(u.tokens)
        features[i, :t] = u.features
        frame_mask[i, :t] = True
        tokens[i, :s] = u.tokens
        token_mask[i, :s] = True
        if rng is not None:
            yr, flags = make_masked_truth(u.tokens, rng, ratio_range)
            masked_tokens[i, :s] = yr
            mask_positions[i, :s] = flags
        else:
            masked_tokens[i, :s] = u.tokens
    return Batch(features, frame_mask, tokens, token_mask, masked_tokens,
                 mask_positions, ids=[u.id for u in utts])


# ---------------------------------------------------------------------------
# line-delimited persistence
# ---------------------------------------------------------------------------

def save_corpus(path, utts: Sequence[Utterance]):
    with open(path, "w") as fh:
        for u in utts:
            t, d = u.features.shape
            rec = {
                "id": u.id,
                "tokens": u.tokens,
                "num_frames": t,
                "input_dim": d,
                "features": [float(x) for x in u.features.reshape(-1)],
            }
            fh.write(json.dumps(rec) + "\n")


def load_corpus(path) -> list[Utterance]:
    utts = []
    with open(path) as fh:
        for line in fh:
            line = line.strip()
            if not line:
                continue
            rec = json.loads(line)
            feats = np.asarray(rec["features"], dtype=np.float64).reshape(
                rec["num_frames"], rec["input_dim"])
            utts.append(Utterance(id=rec["id"], tokens=[int(t) for t in rec["tokens"]],
                                  features=feats))
    return utts
