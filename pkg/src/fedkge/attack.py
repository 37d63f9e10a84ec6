"""Knowledge-graph reconstruction attack and leakage metrics.

The adversary (a colluding server plus one traitor client) matches a target
client's anonymous embedding vectors against the traitor's labeled
element-embedding pairs by cosine similarity, recovering entity ids,
relation ids and finally whole triples. ERR and TRR quantify how much of
the target's graph is recovered.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, InsufficientKnowledgeError
from .models import load_table
from .rng import substream

LEAKAGE_RATIOS = (0.3, 0.5, 1.0)


@dataclass
class AdversaryKnowledge:
    eep_entities: dict  # entity-id -> vector (traitor, subsampled at LR)
    eep_relations: dict  # relation-id -> vector
    lee: np.ndarray  # target entity embeddings, positional only
    model_kind: str
    lre: np.ndarray = None  # target relation embeddings (FedR scenario)
    leakage_ratio: float = 1.0


@dataclass
class ReconstructionReport:
    err: float
    trr: float
    entity_correct: list = field(default_factory=list)
    triple_correct: list = field(default_factory=list)
    note: str = ""

    def to_dict(self) -> dict:
        return {"err": self.err, "trr": self.trr, "note": self.note}


def _cosine_match(queries, id_to_vec):
    """Best cosine match of each query against labeled vectors.

    Zero vectors get similarity -1. Ties resolve to the lowest id.
    Returns the predicted id per query row.
    """
    if not id_to_vec:
        raise InsufficientKnowledgeError("no labeled vectors to match against")
    ids = np.fromiter(sorted(id_to_vec), dtype=np.int64)
    keys = np.stack([np.asarray(id_to_vec[int(i)], dtype=np.float64) for i in ids])
    q = np.asarray(queries, dtype=np.float64)
    qn = np.linalg.norm(q, axis=1, keepdims=True)
    kn = np.linalg.norm(keys, axis=1, keepdims=True)
    sims = (q / np.where(qn == 0, 1.0, qn)) @ (keys / np.where(kn == 0, 1.0, kn)).T
    sims[np.ravel(qn == 0), :] = -1.0
    sims[:, np.ravel(kn == 0)] = -1.0
    # argmax picks the first (lowest-id) column on exact ties
    return ids[np.argmax(sims, axis=1)]


def reconstruct_entities(lee, eep_entities, ground_truth_ids=None):
    """Predict an entity id for each anonymous vector; ERR if truth given.

    Returns (predicted ids per position, err or None).
    """
    pred = _cosine_match(lee, eep_entities)
    err = None
    if ground_truth_ids is not None:
        truth = np.asarray(ground_truth_ids, dtype=np.int64)
        err = float(np.mean(pred == truth))
    return pred, err


def _re(x):
    return np.asarray(x)[..., 0::2]


def _im(x):
    return np.asarray(x)[..., 1::2]


def infer_relation_embedding(h_vec, t_vec, model_kind):
    """Closed-form direction of the relation embedding maximizing the
    score of (h, ?, t) for each model."""
    h = np.asarray(h_vec, dtype=np.float64)
    t = np.asarray(t_vec, dtype=np.float64)
    if model_kind == "TransE":
        return t - h
    if model_kind == "DistMult":
        return h * t
    if model_kind == "RotatE":
        hc = _re(h) + 1j * _im(h)
        tc = _re(t) + 1j * _im(t)
        theta = np.where(hc == 0, 0.0, np.angle(np.where(hc == 0, 1.0, tc / np.where(hc == 0, 1.0, hc))))
        return theta.real.astype(np.float64)
    if model_kind == "ComplEx":
        # maximizer of Re<h, diag(r), conj(t)> at fixed norm: conj(h) * t
        a, b = _re(h), _im(h)
        e, f = _re(t), _im(t)
        out = np.empty_like(h)
        out[..., 0::2] = a * e + b * f
        out[..., 1::2] = a * f - b * e
        return out
    raise ConfigError(f"unknown model kind {model_kind!r}")


def reconstruct_relations(knowledge: AdversaryKnowledge, triple_positions=None):
    """Recover relation ids.

    FedR branch (knowledge.lre present): match the target's relation
    vectors to the traitor's labeled relation vectors directly; returns one
    predicted id per lre row.

    FedE branch: for each (head-position, tail-position) pair in
    triple_positions, infer the relation vector from the anonymous entity
    vectors and match it; returns one predicted id per pair.
    """
    if not knowledge.eep_relations:
        raise InsufficientKnowledgeError("adversary holds no relation pairs")
    if knowledge.lre is not None:
        return _cosine_match(knowledge.lre, knowledge.eep_relations)
    if triple_positions is None:
        raise ConfigError("FedE branch requires (head, tail) position pairs")
    pairs = np.asarray(triple_positions, dtype=np.int64)
    h_vecs = knowledge.lee[pairs[:, 0]]
    t_vecs = knowledge.lee[pairs[:, 1]]
    inferred = infer_relation_embedding(h_vecs, t_vecs, knowledge.model_kind)
    return _cosine_match(inferred, knowledge.eep_relations)


def reconstruct_triples(entity_pred, relation_pred, target_triples, position_of_entity,
                        entity_truth):
    """Assemble the report: a triple counts as reconstructed only when the
    predicted head, relation and tail ids all equal ground truth."""
    triples = np.asarray(target_triples, dtype=np.int64)
    entity_correct = (np.asarray(entity_pred) == np.asarray(entity_truth)).tolist()
    triple_correct = []
    for i, (h, r, t) in enumerate(triples):
        ok = (
            entity_pred[position_of_entity[int(h)]] == h
            and relation_pred[i] == r
            and entity_pred[position_of_entity[int(t)]] == t
        )
        triple_correct.append(bool(ok))
    err = float(np.mean(entity_correct)) if entity_correct else 0.0
    trr = float(np.mean(triple_correct)) if triple_correct else 0.0
    return ReconstructionReport(
        err=err, trr=trr, entity_correct=entity_correct, triple_correct=triple_correct
    )


def _subsample(pairs: dict, ratio: float, rng) -> dict:
    if not 0.0 < ratio <= 1.0:
        raise ConfigError(f"leakage ratio must be in (0, 1], got {ratio}")
    ids = sorted(pairs)
    keep = max(1, int(round(ratio * len(ids))))
    if keep >= len(ids):
        return dict(pairs)
    chosen = rng.choice(len(ids), size=keep, replace=False)
    return {ids[int(i)]: pairs[ids[int(i)]] for i in sorted(chosen)}


def _client_artifact(run_dir, client_id):
    path = os.path.join(run_dir, "checkpoints", f"client_{client_id}")
    table, meta = load_table(path)
    return table, meta


def attack_single_target(mode, traitor_table, traitor_meta, target_table, target_meta,
                         leakage_ratio, model_kind, seed=0):
    """Run the full reconstruction pipeline against one target client."""
    rng = substream(seed, "leakage-subsample")
    eep_entities = {
        int(i): traitor_table.entity_emb[int(i)] for i in traitor_meta["local_entities"]
    }
    eep_relations = {
        int(i): traitor_table.relation_emb[int(i)]
        for i in traitor_meta["local_relations"]
    }
    eep_entities = _subsample(eep_entities, leakage_ratio, rng)
    eep_relations = _subsample(eep_relations, leakage_ratio, rng)

    target_entities = sorted(int(i) for i in target_meta["local_entities"])
    lee = target_table.entity_emb[np.asarray(target_entities, dtype=np.int64)]
    lre = None
    if mode == "FedR":
        target_relations = sorted(int(i) for i in target_meta["local_relations"])
        lre = target_table.relation_emb[np.asarray(target_relations, dtype=np.int64)]

    knowledge = AdversaryKnowledge(
        eep_entities=eep_entities,
        eep_relations=eep_relations,
        lee=lee,
        lre=lre,
        model_kind=model_kind,
        leakage_ratio=leakage_ratio,
    )
    entity_pred, _ = reconstruct_entities(lee, eep_entities)
    position_of_entity = {e: i for i, e in enumerate(target_entities)}
    triples = np.asarray(target_meta["local_triples"], dtype=np.int64).reshape(-1, 3)

    if mode == "FedR":
        target_relations = sorted(int(i) for i in target_meta["local_relations"])
        rel_by_position = reconstruct_relations(knowledge)
        position_of_relation = {r: i for i, r in enumerate(target_relations)}
        relation_pred = np.asarray(
            [rel_by_position[position_of_relation[int(r)]] for r in triples[:, 1]]
        )
    else:
        pairs = [
            (position_of_entity[int(h)], position_of_entity[int(t)])
            for h, _, t in triples
        ]
        relation_pred = reconstruct_relations(knowledge, triple_positions=pairs)

    return reconstruct_triples(
        entity_pred, relation_pred, triples, position_of_entity, target_entities
    )


def leakage_experiment(run_dir, leakage_ratio=1.0, traitor=0, seed=0):
    """Attack every non-traitor client of a completed run.

    Returns {target client id: ReconstructionReport}. A run whose transcript
    carries no per-client vectors (Local mode, or FedR with PSU+SecAgg on)
    yields zero reports or refuses outright.
    """
    manifest_path = os.path.join(run_dir, "run_meta.json")
    if not os.path.exists(manifest_path):
        raise FileNotFoundError(f"missing run metadata: {manifest_path}")
    with open(manifest_path, encoding="utf-8") as fh:
        run_meta = json.load(fh)
    mode = run_meta["mode"]
    model_kind = run_meta["model_kind"]
    client_ids = run_meta["client_ids"]
    if mode == "Local":
        raise InsufficientKnowledgeError(
            "Local mode shares nothing: the adversary holds no target embeddings"
        )

    if mode == "FedR" and run_meta.get("use_psu") and run_meta.get("use_secagg"):
        return {
            cid: ReconstructionReport(
                err=0.0,
                trr=0.0,
                note="transcript contains only secure sums; no per-client vectors",
            )
            for cid in client_ids
            if cid != traitor
        }

    traitor_table, traitor_meta = _client_artifact(run_dir, traitor)
    reports = {}
    for cid in client_ids:
        if cid == traitor:
            continue
        target_table, target_meta = _client_artifact(run_dir, cid)
        reports[cid] = attack_single_target(
            mode,
            traitor_table,
            traitor_meta,
            target_table,
            target_meta,
            leakage_ratio,
            model_kind,
            seed=seed,
        )
    return reports
