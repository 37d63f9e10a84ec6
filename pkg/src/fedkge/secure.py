"""Simulated Private Set Union and additive-mask secure aggregation.

Real-valued payloads are carried through a fixed-point encoding into a
prime field. Each client adds pseudorandom pairwise masks (add toward
higher-numbered peers, subtract toward lower-numbered ones) so that the
masks cancel in the field-sum and the server recovers only the aggregate.
"""

from dataclasses import dataclass

import numpy as np

from .errors import ConfigError, ContractError, EncodingRangeError, UnresolvedMaskError
from .rng import substream_seed

# Mersenne prime 2^61 - 1: fits uint64 with headroom for one modular add.
DEFAULT_MODULUS = 2305843009213693951
DEFAULT_SCALE_BITS = 24


@dataclass(frozen=True)
class PsuResult:
    union_ids: tuple  # sorted relation ids
    transcript: tuple  # per-client contributed cardinality, nothing else


def psu_union(local_relation_sets, seed=0) -> PsuResult:
    """Simulated-honest set union: the server-visible output is the sorted
    union plus per-client cardinalities only."""
    if not local_relation_sets:
        raise ConfigError("psu_union requires at least one client set")
    union = set()
    for s in local_relation_sets:
        union.update(int(x) for x in s)
    return PsuResult(
        union_ids=tuple(sorted(union)),
        transcript=tuple(len(s) for s in local_relation_sets),
    )


@dataclass(frozen=True)
class FixedPointCodec:
    scale_bits: int = DEFAULT_SCALE_BITS
    modulus: int = DEFAULT_MODULUS

    @property
    def scale(self) -> int:
        return 1 << self.scale_bits

    @property
    def max_encodable(self) -> float:
        # signed range is (-l/2, l/2) in field units
        return (self.modulus // 2) / self.scale

    def encode(self, values) -> np.ndarray:
        """Reals -> field elements; exact for multiples of 2^-scale_bits."""
        v = np.asarray(values, dtype=np.float64)
        scaled = np.rint(v * self.scale)
        if np.any(np.abs(scaled) >= self.modulus // 2):
            raise EncodingRangeError(
                f"value magnitude exceeds codec range {self.max_encodable}"
            )
        ints = scaled.astype(np.int64)
        return np.where(ints < 0, ints + self.modulus, ints).astype(np.uint64)

    def decode(self, field_values) -> np.ndarray:
        """Field elements -> reals, reading the upper half as negatives."""
        x = np.asarray(field_values, dtype=np.uint64).astype(np.int64)
        signed = np.where(x > self.modulus // 2, x - self.modulus, x)
        return signed.astype(np.float64) / self.scale

    def add(self, a, b) -> np.ndarray:
        return (a + b) % np.uint64(self.modulus)

    def sub(self, a, b) -> np.ndarray:
        return (a + (np.uint64(self.modulus) - b)) % np.uint64(self.modulus)


@dataclass(frozen=True)
class MaskedShare:
    client_id: int
    values: np.ndarray  # uint64 field elements in [0, modulus)
    participants: tuple  # agreed participant set at share time


def make_pairwise_seeds(root_seed, client_ids):
    """Symmetric per-pair seeds, standing in for a key agreement between
    each pair of clients; deterministic per (root_seed, u, v)."""
    seeds = {}
    ids = sorted(int(c) for c in client_ids)
    for i, u in enumerate(ids):
        for v in ids[i + 1 :]:
            s = substream_seed(root_seed, "secagg-pair", u, v)
            seeds[(u, v)] = s
            seeds[(v, u)] = s
    return seeds


def _expand_mask(seed, size, codec) -> np.ndarray:
    rng = np.random.Generator(np.random.Philox(key=seed))
    return rng.integers(0, codec.modulus, size=size, dtype=np.uint64)


def secagg_share(secret, client_id, pairwise_seeds, codec) -> MaskedShare:
    """Encode a real vector and blind it with pairwise masks.

    Adds the mask shared with every higher-numbered peer and subtracts the
    one shared with every lower-numbered peer, so the masks vanish when all
    participants' shares are summed.
    """
    u = int(client_id)
    participants = {u}
    for a, b in pairwise_seeds:
        participants.add(a)
        participants.add(b)
    for a, b in list(pairwise_seeds):
        if pairwise_seeds.get((b, a)) != pairwise_seeds[(a, b)]:
            raise ContractError(f"pairwise seeds for {(a, b)} are not symmetric")
    values = codec.encode(np.asarray(secret, dtype=np.float64).ravel())
    for v in sorted(participants):
        if v == u:
            continue
        seed = pairwise_seeds[(min(u, v), max(u, v))]
        mask = _expand_mask(seed, values.shape, codec)
        values = codec.add(values, mask) if u < v else codec.sub(values, mask)
    return MaskedShare(client_id=u, values=values, participants=tuple(sorted(participants)))


def secagg_sum(shares, codec) -> np.ndarray:
    """Field-sum of all participants' shares, decoded to reals.

    Aborts if any agreed participant is missing: its masks would not cancel.
    """
    if not shares:
        raise ContractError("secagg_sum requires at least one share")
    agreed = set(shares[0].participants)
    present = {s.client_id for s in shares}
    for s in shares:
        if set(s.participants) != agreed:
            raise ContractError("shares disagree on the participant set")
    if present != agreed:
        missing = sorted(agreed - present)
        raise UnresolvedMaskError(f"missing participants {missing}: masks unresolved")
    total = shares[0].values
    for s in shares[1:]:
        total = codec.add(total, s.values)
    return codec.decode(total)
