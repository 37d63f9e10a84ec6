"""Triple file loading, federated splitting and split statistics.

Triples are integer-ID (head, relation, tail) facts, stored as int64
arrays of shape (n, 3). Dictionaries map names to dense ids 0..N-1.
"""

import json
import logging
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, TripleParseError, UnknownNameError
from .rng import substream

logger = logging.getLogger(__name__)

Triple = tuple  # (head, relation, tail) integer ids


def triples_array(triples) -> np.ndarray:
    """Normalize a list of (h, r, t) tuples (or an array) to int64 (n, 3)."""
    arr = np.asarray(triples, dtype=np.int64)
    if arr.size == 0:
        return arr.reshape(0, 3)
    if arr.ndim != 2 or arr.shape[1] != 3:
        raise ConfigError(f"expected (n, 3) triples, got shape {arr.shape}")
    return arr


@dataclass
class KnowledgeGraph:
    triples: np.ndarray  # int64 (n, 3)
    entity_dict: dict  # name -> id, dense 0..N-1
    relation_dict: dict  # name -> id
    duplicates_dropped: int = 0

    @property
    def num_entities(self) -> int:
        return len(self.entity_dict)

    @property
    def num_relations(self) -> int:
        return len(self.relation_dict)

    @property
    def entity_names(self):
        names = [None] * len(self.entity_dict)
        for name, idx in self.entity_dict.items():
            names[idx] = name
        return names

    @property
    def relation_names(self):
        names = [None] * len(self.relation_dict)
        for name, idx in self.relation_dict.items():
            names[idx] = name
        return names


@dataclass
class ClientDataset:
    client_id: int
    train: np.ndarray
    valid: np.ndarray
    test: np.ndarray
    local_entities: set = field(default_factory=set)
    local_relations: set = field(default_factory=set)

    @property
    def all_triples(self) -> np.ndarray:
        return np.concatenate([self.train, self.valid, self.test], axis=0)

    @property
    def num_triples(self) -> int:
        return len(self.train) + len(self.valid) + len(self.test)


@dataclass
class SplitStats:
    entity_counts: list
    relation_counts: list
    entity_mean: float
    entity_std: float
    relation_mean: float
    relation_std: float

    def to_dict(self) -> dict:
        return {
            "entity_counts": self.entity_counts,
            "relation_counts": self.relation_counts,
            "entity_mean": self.entity_mean,
            "entity_std": self.entity_std,
            "relation_mean": self.relation_mean,
            "relation_std": self.relation_std,
        }


def _read_dict(path) -> dict:
    mapping = {}
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 2:
                raise TripleParseError(path, line_no, "expected `name<TAB>id`")
            mapping[parts[0]] = int(parts[1])
    return mapping


def load_triples(path, entity_dict_path=None, relation_dict_path=None) -> KnowledgeGraph:
    """Read a tab-separated `head relation tail` file into a KnowledgeGraph.

    Dictionaries are built in first-appearance order when not supplied.
    Duplicate lines are collapsed and counted.
    """
    entity_dict = _read_dict(entity_dict_path) if entity_dict_path else {}
    relation_dict = _read_dict(relation_dict_path) if relation_dict_path else {}
    fixed_entities = entity_dict_path is not None
    fixed_relations = relation_dict_path is not None

    seen = set()
    triples = []
    duplicates = 0
    with open(path, encoding="utf-8") as fh:
        for line_no, line in enumerate(fh, start=1):
            line = line.rstrip("\n")
            if not line:
                continue
            parts = line.split("\t")
            if len(parts) != 3:
                raise TripleParseError(
                    path, line_no, f"expected 3 tab-separated fields, got {len(parts)}"
                )
            h_name, r_name, t_name = parts
            if fixed_entities:
                if h_name not in entity_dict:
                    raise UnknownNameError(f"{path}:{line_no}: unknown entity {h_name!r}")
                if t_name not in entity_dict:
                    raise UnknownNameError(f"{path}:{line_no}: unknown entity {t_name!r}")
            else:
                entity_dict.setdefault(h_name, len(entity_dict))
                entity_dict.setdefault(t_name, len(entity_dict))
            if fixed_relations:
                if r_name not in relation_dict:
                    raise UnknownNameError(f"{path}:{line_no}: unknown relation {r_name!r}")
            else:
                relation_dict.setdefault(r_name, len(relation_dict))
            triple = (entity_dict[h_name], relation_dict[r_name], entity_dict[t_name])
            if triple in seen:
                duplicates += 1
                continue
            seen.add(triple)
            triples.append(triple)

    if duplicates:
        logger.warning("%s: dropped %d duplicate triple line(s)", path, duplicates)
    return KnowledgeGraph(
        triples=triples_array(triples),
        entity_dict=entity_dict,
        relation_dict=relation_dict,
        duplicates_dropped=duplicates,
    )


def _make_client(client_id, triples, ratios) -> ClientDataset:
    n = len(triples)
    n_valid = int(np.floor(n * ratios[1]))
    n_test = int(np.floor(n * ratios[2]))
    n_train = n - n_valid - n_test
    train = triples[:n_train]
    valid = triples[n_train : n_train + n_valid]
    test = triples[n_train + n_valid :]
    union = triples
    return ClientDataset(
        client_id=client_id,
        train=train,
        valid=valid,
        test=test,
        local_entities=set(union[:, 0]).union(union[:, 2]) if n else set(),
        local_relations=set(union[:, 1]) if n else set(),
    )


def federated_split(kg: KnowledgeGraph, num_clients: int, ratios=(0.8, 0.1, 0.1), seed=0):
    """Shuffle triples, deal round-robin to clients, then partition each
    client's share into train/valid/test by `ratios` (floor for valid and
    test, remainder to train). Deterministic per seed.
    """
    if num_clients < 1:
        raise ConfigError("num_clients must be >= 1")
    if abs(sum(ratios) - 1.0) > 1e-9:
        raise ConfigError(f"ratios must sum to 1, got {ratios}")
    if num_clients > len(kg.triples):
        raise ConfigError(
            f"num_clients={num_clients} exceeds triple count {len(kg.triples)}"
        )
    rng = substream(seed, "split")
    order = rng.permutation(len(kg.triples))
    shuffled = kg.triples[order]
    return [
        _make_client(c, shuffled[c::num_clients], ratios) for c in range(num_clients)
    ]


def split_stats(clients) -> SplitStats:
    """Per-client entity/relation counts with mean and population stddev."""
    if not clients:
        raise ConfigError("split_stats requires at least one client")
    ent = [len(c.local_entities) for c in clients]
    rel = [len(c.local_relations) for c in clients]
    return SplitStats(
        entity_counts=ent,
        relation_counts=rel,
        entity_mean=float(np.mean(ent)),
        entity_std=float(np.std(ent)),
        relation_mean=float(np.mean(rel)),
        relation_std=float(np.std(rel)),
    )


def _write_triple_file(path, triples, entity_names, relation_names):
    with open(path, "w", encoding="utf-8") as fh:
        for h, r, t in triples:
            fh.write(f"{entity_names[h]}\t{relation_names[r]}\t{entity_names[t]}\n")


def write_client_datasets(clients, kg: KnowledgeGraph, out_dir):
    """Write one directory per client (train/valid/test files + stats.json)
    plus the shared name dictionaries at the top level.
    """
    os.makedirs(out_dir, exist_ok=True)
    ent_names = kg.entity_names
    rel_names = kg.relation_names
    with open(os.path.join(out_dir, "entities.dict"), "w", encoding="utf-8") as fh:
        for idx, name in enumerate(ent_names):
            fh.write(f"{name}\t{idx}\n")
    with open(os.path.join(out_dir, "relations.dict"), "w", encoding="utf-8") as fh:
        for idx, name in enumerate(rel_names):
            fh.write(f"{name}\t{idx}\n")
    for client in clients:
        cdir = os.path.join(out_dir, f"client_{client.client_id}")
        os.makedirs(cdir, exist_ok=True)
        for split_name in ("train", "valid", "test"):
            _write_triple_file(
                os.path.join(cdir, f"{split_name}.txt"),
                getattr(client, split_name),
                ent_names,
                rel_names,
            )
    stats = split_stats(clients)
    with open(os.path.join(out_dir, "stats.json"), "w", encoding="utf-8") as fh:
        json.dump(stats.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")


def load_client_datasets(split_dir):
    """Load a directory written by write_client_datasets.

    Returns (clients, entity_dict, relation_dict).
    """
    entity_dict = _read_dict(os.path.join(split_dir, "entities.dict"))
    relation_dict = _read_dict(os.path.join(split_dir, "relations.dict"))
    clients = []
    cid = 0
    while os.path.isdir(os.path.join(split_dir, f"client_{cid}")):
        cdir = os.path.join(split_dir, f"client_{cid}")
        parts = {}
        for split_name in ("train", "valid", "test"):
            kg = load_triples(
                os.path.join(cdir, f"{split_name}.txt"),
                entity_dict_path=os.path.join(split_dir, "entities.dict"),
                relation_dict_path=os.path.join(split_dir, "relations.dict"),
            )
            parts[split_name] = kg.triples
        union = np.concatenate([parts["train"], parts["valid"], parts["test"]], axis=0)
        clients.append(
            ClientDataset(
                client_id=cid,
                train=parts["train"],
                valid=parts["valid"],
                test=parts["test"],
                local_entities=set(union[:, 0]).union(union[:, 2]) if len(union) else set(),
                local_relations=set(union[:, 1]) if len(union) else set(),
            )
        )
        cid += 1
    return clients, entity_dict, relation_dict
