"""Skeleton token codec: quantization, serialization schemes, group shuffling.

Vocabulary layout (203 entries total):

====================  =========  ==========================================
range                 meaning    notes
====================  =========  ==========================================
0 .. 127              coordinate 128-bin quantized axis value
128                   BOS        start of skeleton payload
129                   EOS        end of skeleton payload
130                   PAD        batch padding, never inside a payload
131                   SHAPE      opaque shape-conditioning placeholder
132 .. 202            parent     parent slot p encodes offset index p - 132
====================  =========  ==========================================

Parent tokens store the parent's position in the emission order offset by
+1, with 0 reserved for "this joint is the root"; detokenization subtracts
the offset again.  With the 70-joint cap, offsets occupy [0, 70].

The joint-based scheme spends 4 tokens per joint (three quantized
coordinates plus one parent token, 4j total); the bone-based scheme spends
6 per bone (both quantized endpoints, 6b total).  A tree satisfies
j = b + 1, so the joint-based payload is strictly shorter whenever j > 3.
"""

from __future__ import annotations

import struct
from dataclasses import dataclass
from pathlib import Path

import numpy as np

from .core import (
    MAX_JOINTS,
    ROOT_PARENT,
    InvalidSkeletonError,
    Skeleton,
    hierarchical_order,
    require_valid,
)

COORD_BINS = 128
BOS = 128
EOS = 129
PAD = 130
SHAPE_PLACEHOLDER = 131
PARENT_BASE = 132
PARENT_SLOTS = MAX_JOINTS + 1
VOCAB_SIZE = PARENT_BASE + PARENT_SLOTS  # 203

NO_INDICATOR = -1

# Sequence count used when mimicking a conditioned generation layout; the
# placeholders themselves are opaque and carry no geometry.
DEFAULT_SHAPE_TOKENS = 257

SCHEME_JOINT = "joint_based"
SCHEME_BONE = "bone_based"
_SCHEME_IDS = {SCHEME_JOINT: 0, SCHEME_BONE: 1}
_SCHEME_NAMES = {v: k for k, v in _SCHEME_IDS.items()}

_MAGIC = b"PTKN"
_VERSION = 1


@dataclass(frozen=True)
class TokenSequence:
    """Token ids plus an aligned stream of positional-indicator ids.

    ``indicators[i]`` names the joint group (by original hierarchical
    index) announced at position i, or ``NO_INDICATOR``.  Fresh output from
    the tokenizers carries no indicators; :func:`randomize_groups` assigns
    them.
    """

    tokens: np.ndarray
    indicators: np.ndarray
    scheme: str

    def __post_init__(self):
        tokens = np.ascontiguousarray(np.asarray(self.tokens, dtype=np.int64))
        if tokens.ndim != 1:
            raise ValueError("tokens must be 1-d")
        if tokens.size and (tokens.min() < 0 or tokens.max() >= VOCAB_SIZE):
            raise ValueError(f"token ids must lie in [0, {VOCAB_SIZE})")
        if self.indicators is None:
            indicators = np.full(tokens.shape, NO_INDICATOR, dtype=np.int64)
        else:
            indicators = np.ascontiguousarray(
                np.asarray(self.indicators, dtype=np.int64)
            )
        if indicators.shape != tokens.shape:
            raise ValueError("indicators must align 1:1 with tokens")
        if self.scheme not in _SCHEME_IDS:
            raise ValueError(f"unknown scheme {self.scheme!r}")
        tokens.setflags(write=False)
        indicators.setflags(write=False)
        object.__setattr__(self, "tokens", tokens)
        object.__setattr__(self, "indicators", indicators)

    def __len__(self) -> int:
        return self.tokens.shape[0]


def quantize_coords(coords: np.ndarray) -> np.ndarray:
    """Map coordinates in [-0.5, 0.5] onto 128 bins; out-of-range clamps."""
    coords = np.asarray(coords, dtype=np.float64)
    if not np.all(np.isfinite(coords)):
        raise ValueError("coordinates must be finite")
    bins = np.floor((coords + 0.5) * COORD_BINS)
    return np.clip(bins, 0, COORD_BINS - 1).astype(np.int64)


def dequantize_coords(bins: np.ndarray) -> np.ndarray:
    """Bin centers: the round-trip error is at most 1/256 per axis."""
    bins = np.asarray(bins)
    if bins.size and (np.min(bins) < 0 or np.max(bins) >= COORD_BINS):
        raise ValueError(f"bins must lie in [0, {COORD_BINS})")
    return (np.asarray(bins, dtype=np.float64) + 0.5) / COORD_BINS - 0.5


def _check_order(s: Skeleton, order) -> np.ndarray:
    j = s.joint_count
    if order is None:
        return hierarchical_order(s)
    order = np.asarray(order, dtype=np.int64)
    if sorted(order.tolist()) != list(range(j)):
        raise ValueError("order must be a permutation of all joint indices")
    return order


def tokenize_joint_based(
    s: Skeleton,
    order: np.ndarray | None = None,
    *,
    shape_tokens: int = 0,
    require_causal: bool = True,
) -> TokenSequence:
    """Serialize joints as [BOS, shape..., (x, y, z, parent) per joint, EOS].

    The parent token stores the parent's position in the emission order
    (offset by +1; 0 means root).  With ``require_causal`` the order must
    put every parent before its children, the property that makes the
    stream decodable one group at a time; pass False to serialize
    non-causal orders (e.g. a pure spatial sort) anyway and let the
    detokenizer report the damage.
    """
    require_valid(s)
    order = _check_order(s, order)
    position = np.empty(s.joint_count, dtype=np.int64)
    position[order] = np.arange(s.joint_count)

    coords = quantize_coords(s.joints[order])
    tokens: list[int] = [BOS]
    tokens.extend([SHAPE_PLACEHOLDER] * int(shape_tokens))
    for m, orig in enumerate(order):
        p = int(s.parents[orig])
        if p == ROOT_PARENT:
            offset = 0
        else:
            if require_causal and position[p] >= m:
                raise ValueError(
                    f"order places joint {orig} before its parent {p}; "
                    "not causally decodable"
                )
            offset = int(position[p]) + 1
        tokens.extend(int(c) for c in coords[m])
        tokens.append(PARENT_BASE + offset)
    tokens.append(EOS)
    return TokenSequence(np.array(tokens), None, SCHEME_JOINT)


def tokenize_bone_based(
    s: Skeleton, order: np.ndarray | None = None, *, shape_tokens: int = 0
) -> TokenSequence:
    """Serialize bones as 6 coordinate tokens each (parent end, child end).

    Bones follow the given joint order restricted to non-root joints.
    Connectivity is implicit in shared endpoints, which is what makes this
    form 6b tokens long against 4j = 4(b+1) for the joint-based scheme.
    """
    require_valid(s)
    order = _check_order(s, order)
    tokens: list[int] = [BOS]
    tokens.extend([SHAPE_PLACEHOLDER] * int(shape_tokens))
    for orig in order:
        p = int(s.parents[orig])
        if p == ROOT_PARENT:
            continue
        ends = quantize_coords(np.stack([s.joints[p], s.joints[orig]]))
        tokens.extend(int(c) for c in ends.ravel())
    tokens.append(EOS)
    return TokenSequence(np.array(tokens), None, SCHEME_BONE)


def _split_payload(t: TokenSequence) -> tuple[int, np.ndarray, list[str]]:
    """Return (payload start, payload tokens, diagnostics); skips BOS and
    shape placeholders, stops at EOS."""
    diagnostics: list[str] = []
    toks = t.tokens
    if toks.size == 0:
        raise ValueError("empty token stream")
    if toks[0] != BOS:
        raise ValueError("token stream must start with BOS")
    i = 1
    while i < toks.size and toks[i] == SHAPE_PLACEHOLDER:
        i += 1
    end = toks.size
    eos_hits = np.flatnonzero(toks == EOS)
    if eos_hits.size == 0:
        diagnostics.append("missing EOS")
    else:
        end = int(eos_hits[0])
        if np.any(toks[end + 1:] != PAD):
            diagnostics.append("trailing tokens after EOS")
    payload = toks[i:end]
    if np.any(payload == PAD):
        diagnostics.append("padding token inside payload")
        payload = payload[payload != PAD]
    return i, payload, diagnostics


def detokenize_joint_based(t: TokenSequence) -> tuple[Skeleton, list[str]]:
    """Decode a joint-based stream back into a skeleton.

    Returns the skeleton (joints in emission order) and a diagnostic list.
    Recoverable damage is flagged rather than raised: a payload that is not
    a multiple of 4, parent references to positions not yet emitted
    (decoded as extra roots, leaving the skeleton disconnected), and a
    missing EOS.  The caller decides whether diagnostics are fatal.
    """
    if t.scheme != SCHEME_JOINT:
        raise ValueError(f"expected {SCHEME_JOINT} stream, got {t.scheme}")
    _, payload, diagnostics = _split_payload(t)
    if payload.size == 0:
        raise ValueError("token stream has no joint payload")
    n_groups = payload.size // 4
    if payload.size % 4 != 0:
        diagnostics.append(
            f"payload length {payload.size} is not a multiple of 4; "
            f"trailing {payload.size % 4} token(s) dropped"
        )
    joints = np.zeros((n_groups, 3))
    parents = np.full(n_groups, ROOT_PARENT, dtype=np.int64)
    for m in range(n_groups):
        group = payload[4 * m: 4 * m + 4]
        coord_toks = group[:3]
        if np.any(coord_toks >= COORD_BINS):
            diagnostics.append(
                f"group {m}: non-coordinate token in coordinate slot"
            )
            coord_toks = np.clip(coord_toks, 0, COORD_BINS - 1)
        joints[m] = dequantize_coords(coord_toks)
        ptok = int(group[3])
        if not PARENT_BASE <= ptok < PARENT_BASE + PARENT_SLOTS:
            diagnostics.append(f"group {m}: parent slot holds token {ptok}")
            continue
        offset = ptok - PARENT_BASE
        if offset == 0:
            continue  # root group
        parent_pos = offset - 1
        if parent_pos >= m:
            diagnostics.append(
                f"group {m}: parent reference {parent_pos} not yet emitted; "
                "joint left disconnected"
            )
            continue
        parents[m] = parent_pos
    return Skeleton(joints, parents), diagnostics


def detokenize_bone_based(t: TokenSequence) -> tuple[Skeleton, list[str]]:
    """Decode a bone-based stream by stitching shared quantized endpoints.

    Joints are keyed by their quantized coordinates; the first endpoint of
    the first bone becomes the root.  Bones whose parent endpoint has not
    appeared before are flagged and attached as extra roots.
    """
    if t.scheme != SCHEME_BONE:
        raise ValueError(f"expected {SCHEME_BONE} stream, got {t.scheme}")
    _, payload, diagnostics = _split_payload(t)
    if payload.size == 0:
        raise ValueError("token stream has no bone payload")
    if payload.size % 6 != 0:
        diagnostics.append(
            f"payload length {payload.size} is not a multiple of 6; "
            f"trailing {payload.size % 6} token(s) dropped"
        )
    if np.any(payload >= COORD_BINS):
        raise ValueError("bone-based payload must contain only coordinate tokens")
    n_bones = payload.size // 6
    index: dict[tuple[int, int, int], int] = {}
    joints: list[np.ndarray] = []
    parents: list[int] = []

    def joint_id(bins: np.ndarray, parent: int) -> int:
        key = (int(bins[0]), int(bins[1]), int(bins[2]))
        if key not in index:
            index[key] = len(joints)
            joints.append(dequantize_coords(bins))
            parents.append(parent)
        return index[key]

    for m in range(n_bones):
        head = payload[6 * m: 6 * m + 3]
        tail = payload[6 * m + 3: 6 * m + 6]
        key = (int(head[0]), int(head[1]), int(head[2]))
        if m > 0 and key not in index:
            diagnostics.append(
                f"bone {m}: parent endpoint unseen; attached as extra root"
            )
        h = joint_id(head, ROOT_PARENT)
        c = joint_id(tail, h)
        if c == h:
            diagnostics.append(f"bone {m}: zero-length bone collapsed")
    return Skeleton(np.array(joints), np.array(parents, dtype=np.int64)), diagnostics


# ---------------------------------------------------------------------------
# Randomized group order
# ---------------------------------------------------------------------------


def _payload_groups(t: TokenSequence) -> tuple[int, int, int]:
    """Locate the joint groups: returns (payload start, group count, eos index)."""
    if t.scheme != SCHEME_JOINT:
        raise ValueError("group shuffling applies to joint-based streams")
    start, payload, diagnostics = _split_payload(t)
    if diagnostics:
        raise ValueError(f"stream not shuffle-safe: {diagnostics}")
    if payload.size == 0 or payload.size % 4 != 0:
        raise ValueError("payload must be a whole number of 4-token groups")
    return start, payload.size // 4, start + payload.size


def _parent_offsets(groups: np.ndarray) -> np.ndarray:
    offs = groups[:, 3] - PARENT_BASE
    if np.any(offs < 0) or np.any(offs >= PARENT_SLOTS):
        raise ValueError("malformed parent token in joint group")
    return offs


def randomize_groups(
    t: TokenSequence,
    seed: int,
    r: float,
    *,
    parent_ref: str = "emission",
) -> TokenSequence:
    """With probability ``r``, shuffle whole joint groups; assign indicators.

    Every token before the first group (BOS plus any shape placeholders)
    carries the indicator of the first emitted group; each group except the
    last carries the indicator of the group emitted after it; the last
    group and EOS carry the none sentinel.  Indicator values are original
    hierarchical group indices, so r = 0 yields the sequential ladder
    1, 2, ..., and de-shuffling by indicators is always the identity on
    the payload.

    ``parent_ref`` picks how parent tokens read after a shuffle:
    "emission" rewrites them against the new group positions (forward
    references allowed), "original" leaves them against hierarchical
    positions.  :func:`unshuffle_groups` must be called with the same mode.
    """
    if not 0.0 <= r <= 1.0:
        raise ValueError("r must lie in [0, 1]")
    if parent_ref not in ("emission", "original"):
        raise ValueError("parent_ref must be 'emission' or 'original'")
    start, n_groups, end = _payload_groups(t)
    groups = t.tokens[start:end].reshape(n_groups, 4)

    rng = np.random.default_rng(seed)
    if rng.random() < r:
        perm = rng.permutation(n_groups)
    else:
        perm = np.arange(n_groups)

    new_groups = groups[perm].copy()
    if parent_ref == "emission":
        inverse = np.empty(n_groups, dtype=np.int64)
        inverse[perm] = np.arange(n_groups)
        offs = _parent_offsets(new_groups)
        nonroot = offs > 0
        parent_orig = offs[nonroot] - 1
        new_groups[nonroot, 3] = PARENT_BASE + inverse[parent_orig] + 1

    tokens = t.tokens.copy()
    tokens[start:end] = new_groups.reshape(-1)
    indicators = np.full(tokens.shape, NO_INDICATOR, dtype=np.int64)
    indicators[:start] = perm[0]
    for m in range(n_groups - 1):
        indicators[start + 4 * m: start + 4 * (m + 1)] = perm[m + 1]
    return TokenSequence(tokens, indicators, t.scheme)


def unshuffle_groups(
    t: TokenSequence, *, parent_ref: str = "emission"
) -> TokenSequence:
    """Invert :func:`randomize_groups` using the indicator stream."""
    if parent_ref not in ("emission", "original"):
        raise ValueError("parent_ref must be 'emission' or 'original'")
    start, n_groups, end = _payload_groups(t)
    groups = t.tokens[start:end].reshape(n_groups, 4)

    if start == 0:
        raise ValueError("stream carries no pre-payload indicator")
    perm = np.empty(n_groups, dtype=np.int64)
    perm[0] = t.indicators[0]
    for m in range(n_groups - 1):
        perm[m + 1] = t.indicators[start + 4 * m]
    if sorted(perm.tolist()) != list(range(n_groups)):
        raise ValueError("indicator stream does not spell a permutation")

    restored = np.empty_like(groups)
    restored[perm] = groups
    if parent_ref == "emission":
        offs = _parent_offsets(restored)
        nonroot = offs > 0
        parent_emitted = offs[nonroot] - 1
        restored[nonroot, 3] = PARENT_BASE + perm[parent_emitted] + 1

    tokens = t.tokens.copy()
    tokens[start:end] = restored.reshape(-1)
    return TokenSequence(tokens, None, t.scheme)


def permutation_probability(epoch: float, total_epochs: float) -> float:
    """Shuffle-probability schedule over a training run of ``total_epochs``.

    Constant 1 for the first half, linear decay to 0 across the third
    quarter, constant 0 for the final quarter.
    """
    e = float(epoch)
    te = float(total_epochs)
    if te <= 0:
        raise ValueError("total_epochs must be positive")
    if e < 0 or e > te:
        raise ValueError(f"epoch must lie in [0, {te}]")
    if e <= te / 2:
        return 1.0
    if e <= 3 * te / 4:
        return 1.0 - (e - te / 2) / (te / 4)
    return 0.0


# ---------------------------------------------------------------------------
# Token files
# ---------------------------------------------------------------------------


def write_token_file(path: str | Path, t: TokenSequence) -> None:
    """Binary layout: magic 'PTKN', version u16, scheme u8, count u32,
    tokens u16[count], indicators i16[count]; little-endian throughout."""
    count = len(t)
    header = struct.pack("<4sHBI", _MAGIC, _VERSION, _SCHEME_IDS[t.scheme], count)
    body = t.tokens.astype("<u2").tobytes() + t.indicators.astype("<i2").tobytes()
    Path(path).write_bytes(header + body)


def read_token_file(path: str | Path) -> TokenSequence:
    raw = Path(path).read_bytes()
    head = struct.calcsize("<4sHBI")
    if len(raw) < head:
        raise ValueError("token file truncated")
    magic, version, scheme_id, count = struct.unpack("<4sHBI", raw[:head])
    if magic != _MAGIC:
        raise ValueError("not a token file (bad magic)")
    if version != _VERSION:
        raise ValueError(f"unsupported token file version {version}")
    if scheme_id not in _SCHEME_NAMES:
        raise ValueError(f"unknown scheme id {scheme_id}")
    expected = head + count * 2 * 2
    if len(raw) != expected:
        raise ValueError(
            f"token file length {len(raw)} does not match count {count}"
        )
    tokens = np.frombuffer(raw, dtype="<u2", count=count, offset=head)
    indicators = np.frombuffer(raw, dtype="<i2", count=count, offset=head + 2 * count)
    return TokenSequence(
        tokens.astype(np.int64), indicators.astype(np.int64), _SCHEME_NAMES[scheme_id]
    )


def format_token_text(t: TokenSequence) -> str:
    """Plain-text dump, one 'token indicator' pair per line."""
    lines = [f"{int(tok)} {int(ind)}" for tok, ind in zip(t.tokens, t.indicators)]
    return "\n".join(lines) + "\n"
