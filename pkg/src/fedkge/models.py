"""Embedding tables, scoring functions, self-adversarial loss, analytic
gradients and a sparse-row Adam optimizer.

Model conventions:
  TransE    entity dim d, relation dim d, score = -||h + r - t||
  RotatE    entity dim 2d (interleaved re/im pairs), relation dim d phase
            angles, score = -||h o e^{i theta} - t||
  DistMult  entity dim d, relation dim d, score = sum(h * r * t)
  ComplEx   entity dim d = relation dim d, d even, interleaved re/im pairs,
            score = Re(sum(h * r * conj(t)))

All four are exposed through a single "distance form" f = -score, so the
loss and gradient code is model-agnostic.
"""

import json
import os
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .rng import substream

MODEL_KINDS = ("TransE", "RotatE", "DistMult", "ComplEx")

_EPS_NORM = 1e-12  # guards 0/0 at a zero-distance point


@dataclass
class TrainConfig:
    margin: float = 10.0
    temperature: float = 1.0
    num_negatives: int = 256
    learning_rate: float = 0.001
    local_epochs: int = 3
    batch_size: int = 512
    dim: int = 128
    seed: int = 0
    norm: str = "l2"  # "l1" switch for the translational distances
    corruption: str = "both"  # "tail" restricts corruption to tails

    def __post_init__(self):
        if self.margin <= 0 or self.temperature < 0 or self.learning_rate <= 0:
            raise ConfigError("margin and learning_rate must be > 0, temperature >= 0")
        if self.norm not in ("l1", "l2"):
            raise ConfigError(f"norm must be l1 or l2, got {self.norm!r}")
        if self.corruption not in ("both", "tail"):
            raise ConfigError(f"corruption must be both or tail, got {self.corruption!r}")


@dataclass
class EmbeddingTable:
    model_kind: str
    entity_emb: np.ndarray  # (num_entities, d_e)
    relation_emb: np.ndarray  # (num_relations, d_r)

    @property
    def num_entities(self) -> int:
        return self.entity_emb.shape[0]

    @property
    def num_relations(self) -> int:
        return self.relation_emb.shape[0]

    def copy(self) -> "EmbeddingTable":
        return EmbeddingTable(
            self.model_kind, self.entity_emb.copy(), self.relation_emb.copy()
        )


def init_embeddings(
    model_kind, num_entities, num_relations, dim, seed, dtype=np.float64
) -> EmbeddingTable:
    """Uniform init in [-sqrt(6/dim), sqrt(6/dim)]; RotatE relation rows are
    phases uniform in [-pi, pi]. Deterministic per seed."""
    if model_kind not in MODEL_KINDS:
        raise ConfigError(f"unknown model kind {model_kind!r}")
    if dim < 1:
        raise ConfigError("dim must be positive")
    if model_kind == "ComplEx" and dim % 2 != 0:
        raise ConfigError("ComplEx requires an even dim")
    rng = substream(seed, "init", model_kind)
    bound = np.sqrt(6.0 / dim)
    d_e = 2 * dim if model_kind == "RotatE" else dim
    entity = rng.uniform(-bound, bound, size=(num_entities, d_e)).astype(dtype)
    if model_kind == "RotatE":
        relation = rng.uniform(-np.pi, np.pi, size=(num_relations, dim)).astype(dtype)
    else:
        relation = rng.uniform(-bound, bound, size=(num_relations, dim)).astype(dtype)
    return EmbeddingTable(model_kind, entity, relation)


def _re(x):
    return x[..., 0::2]


def _im(x):
    return x[..., 1::2]


def _interleave(re, im):
    out = np.empty(re.shape[:-1] + (2 * re.shape[-1],), dtype=re.dtype)
    out[..., 0::2] = re
    out[..., 1::2] = im
    return out


def distance_form(model_kind, H, R, T, norm="l2", with_grad=False):
    """f = -score on gathered embedding rows H, R, T (..., d).

    With with_grad=True also returns (dH, dR, dT), the partials of f with
    respect to each gathered row.
    """
    if model_kind == "TransE":
        D = H + R - T
        if norm == "l2":
            f = np.sqrt(np.sum(D * D, axis=-1))
            if not with_grad:
                return f
            g = D / (f[..., None] + _EPS_NORM)
            return f, g, g, -g
        f = np.sum(np.abs(D), axis=-1)
        if not with_grad:
            return f
        g = np.sign(D)
        return f, g, g, -g

    if model_kind == "RotatE":
        a, b = _re(H), _im(H)
        c, s = np.cos(R), np.sin(R)
        e, g2 = _re(T), _im(T)
        u = a * c - b * s - e
        w = a * s + b * c - g2
        if norm == "l2":
            f = np.sqrt(np.sum(u * u + w * w, axis=-1))
            scale = 1.0 / (f[..., None] + _EPS_NORM)
            du, dw = u * scale, w * scale
        else:
            # L1 over component moduli
            m = np.sqrt(u * u + w * w) + _EPS_NORM
            f = np.sum(m - _EPS_NORM, axis=-1)
            du, dw = u / m, w / m
        if not with_grad:
            return f
        dA = du * c + dw * s
        dB = -du * s + dw * c
        dTheta = du * (-a * s - b * c) + dw * (a * c - b * s)
        dH = _interleave(dA, dB)
        dT = _interleave(-du, -dw)
        return f, dH, dTheta, dT

    if model_kind == "DistMult":
        f = -np.sum(H * R * T, axis=-1)
        if not with_grad:
            return f
        return f, -(R * T), -(H * T), -(H * R)

    if model_kind == "ComplEx":
        a, b = _re(H), _im(H)
        c, d = _re(R), _im(R)
        e, g2 = _re(T), _im(T)
        f = -np.sum((a * c - b * d) * e + (a * d + b * c) * g2, axis=-1)
        if not with_grad:
            return f
        dH = _interleave(-(c * e + d * g2), -(-d * e + c * g2))
        dR = _interleave(-(a * e + b * g2), -(-b * e + a * g2))
        dT = _interleave(-(a * c - b * d), -(a * d + b * c))
        return f, dH, dR, dT

    raise ConfigError(f"unknown model kind {model_kind!r}")


def score_batch(table: EmbeddingTable, triples, norm="l2") -> np.ndarray:
    """Plausibility scores for an (n, 3) array of triples; higher is better."""
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    H = table.entity_emb[arr[:, 0]]
    R = table.relation_emb[arr[:, 1]]
    T = table.entity_emb[arr[:, 2]]
    return -distance_form(table.model_kind, H, R, T, norm=norm)


def score(table: EmbeddingTable, triple, norm="l2") -> float:
    h, r, t = triple
    for idx, bound in ((h, table.num_entities), (t, table.num_entities)):
        if not 0 <= idx < bound:
            raise IndexError(f"entity id {idx} out of range [0, {bound})")
    if not 0 <= r < table.num_relations:
        raise IndexError(f"relation id {r} out of range [0, {table.num_relations})")
    return float(score_batch(table, [(h, r, t)], norm=norm)[0])


def score_candidates(table: EmbeddingTable, h_ids, r_ids, candidate_ids, norm="l2"):
    """Score (h, r, ?) against every candidate tail.

    Returns a (num_queries, num_candidates) matrix. Queries are chunked to
    bound memory for the translational models.
    """
    h_ids = np.asarray(h_ids, dtype=np.int64)
    r_ids = np.asarray(r_ids, dtype=np.int64)
    cand = np.asarray(candidate_ids, dtype=np.int64)
    kind = table.model_kind
    E = table.entity_emb
    H = E[h_ids]
    R = table.relation_emb[r_ids]
    C = E[cand]

    if kind == "DistMult":
        return (H * R) @ C.T
    if kind == "ComplEx":
        a, b = _re(H), _im(H)
        c, d = _re(R), _im(R)
        W = _interleave(a * c - b * d, a * d + b * c)
        return W @ C.T

    if kind == "TransE":
        Q = H + R
    else:  # RotatE: rotate head by the relation phases
        a, b = _re(H), _im(H)
        cs, sn = np.cos(R), np.sin(R)
        Q = _interleave(a * cs - b * sn, a * sn + b * cs)

    out = np.empty((len(Q), len(C)), dtype=Q.dtype)
    chunk = max(1, int(2**22 // max(1, len(C) * Q.shape[1])))
    for start in range(0, len(Q), chunk):
        D = Q[start : start + chunk, None, :] - C[None, :, :]
        if kind == "RotatE" or norm == "l2":
            if norm == "l2":
                out[start : start + chunk] = -np.sqrt(np.sum(D * D, axis=-1))
            else:
                m = np.sqrt(_re(D) ** 2 + _im(D) ** 2)
                out[start : start + chunk] = -np.sum(m, axis=-1)
        else:
            out[start : start + chunk] = -np.sum(np.abs(D), axis=-1)
    return out


# ---------------------------------------------------------------------------
# negative sampling


def _encode(triples, num_relations, num_entities):
    arr = np.asarray(triples, dtype=np.int64).reshape(-1, 3)
    return (arr[:, 0] * num_relations + arr[:, 1]) * num_entities + arr[:, 2]


def negative_sample(
    triple,
    n,
    local_entities,
    rng,
    train_triples=None,
    corruption="both",
    num_relations=None,
    num_entities=None,
    max_retries=10,
):
    """Corrupt head or tail (uniformly per negative) with entities drawn from
    the client's local entity set. Corruptions present in the local train set
    are resampled up to max_retries rounds, then kept.
    """
    ents = np.fromiter(sorted(local_entities), dtype=np.int64)
    if len(ents) < 2:
        raise ConfigError("negative sampling requires >= 2 local entities")
    if n == 0:
        return []
    h, r, t = triple
    if corruption == "tail":
        corrupt_head = np.zeros(n, dtype=bool)
    else:
        corrupt_head = rng.random(n) < 0.5
    repl = ents[rng.integers(0, len(ents), size=n)]

    if train_triples is not None and len(train_triples):
        if num_relations is None or num_entities is None:
            arr = np.asarray(train_triples)
            num_relations = int(arr[:, 1].max()) + 1
            num_entities = int(max(arr[:, 0].max(), arr[:, 2].max(), repl.max())) + 1
        train_codes = np.unique(_encode(train_triples, num_relations, num_entities))
        for _ in range(max_retries):
            heads = np.where(corrupt_head, repl, h)
            tails = np.where(corrupt_head, t, repl)
            codes = (heads * num_relations + r) * num_entities + tails
            bad = np.isin(codes, train_codes)
            if not bad.any():
                break
            repl = np.where(bad, ents[rng.integers(0, len(ents), size=n)], repl)

    heads = np.where(corrupt_head, repl, h)
    tails = np.where(corrupt_head, t, repl)
    return [(int(hh), int(r), int(tt)) for hh, tt in zip(heads, tails)]


# ---------------------------------------------------------------------------
# loss and gradient


def _softplus(x):
    return np.logaddexp(0.0, x)


def _sigmoid(x):
    return 0.5 * (1.0 + np.tanh(0.5 * x))


def _softmax(x, axis=-1):
    z = x - np.max(x, axis=axis, keepdims=True)
    e = np.exp(z)
    return e / np.sum(e, axis=axis, keepdims=True)


def adversarial_weights(table, negatives, cfg):
    """Softmax (temperature alpha) of negative scores; no gradient flows
    through these weights."""
    scores = score_batch(table, negatives, norm=cfg.norm)
    return _softmax(cfg.temperature * scores)


def loss_self_adversarial(table, positive, negatives, cfg) -> float:
    """-log sig(gamma - f(pos)) - sum_i p_i log sig(f(neg_i) - gamma) with
    f the distance form and p the self-adversarial weights."""
    if len(negatives) == 0:
        raise ContractError("loss requires at least one negative")
    arr = np.asarray([positive], dtype=np.int64)
    f_pos = distance_form(
        table.model_kind,
        table.entity_emb[arr[:, 0]],
        table.relation_emb[arr[:, 1]],
        table.entity_emb[arr[:, 2]],
        norm=cfg.norm,
    )[0]
    neg = np.asarray(negatives, dtype=np.int64)
    f_neg = distance_form(
        table.model_kind,
        table.entity_emb[neg[:, 0]],
        table.relation_emb[neg[:, 1]],
        table.entity_emb[neg[:, 2]],
        norm=cfg.norm,
    )
    p = _softmax(-cfg.temperature * f_neg)
    return float(
        _softplus(f_pos - cfg.margin) + np.sum(p * _softplus(cfg.margin - f_neg))
    )


def grad(table, positive, negatives, cfg):
    """Sparse gradient of loss_self_adversarial over the touched rows.

    Returns {"entity": {row: vec}, "relation": {row: vec}}.
    """
    if len(negatives) == 0:
        raise ContractError("grad requires at least one negative")
    kind = table.model_kind
    pos = np.asarray([positive], dtype=np.int64)
    f_pos, dHp, dRp, dTp = distance_form(
        kind,
        table.entity_emb[pos[:, 0]],
        table.relation_emb[pos[:, 1]],
        table.entity_emb[pos[:, 2]],
        norm=cfg.norm,
        with_grad=True,
    )
    neg = np.asarray(negatives, dtype=np.int64)
    f_neg, dHn, dRn, dTn = distance_form(
        kind,
        table.entity_emb[neg[:, 0]],
        table.relation_emb[neg[:, 1]],
        table.entity_emb[neg[:, 2]],
        norm=cfg.norm,
        with_grad=True,
    )
    p = _softmax(-cfg.temperature * f_neg)
    coeff_pos = _sigmoid(f_pos[0] - cfg.margin)
    coeff_neg = -p * _sigmoid(cfg.margin - f_neg)

    ent = {}
    rel = {}

    def add(store, row, vec):
        row = int(row)
        if row in store:
            store[row] = store[row] + vec
        else:
            store[row] = vec.copy()

    add(ent, positive[0], coeff_pos * dHp[0])
    add(ent, positive[2], coeff_pos * dTp[0])
    add(rel, positive[1], coeff_pos * dRp[0])
    for i in range(len(neg)):
        add(ent, neg[i, 0], coeff_neg[i] * dHn[i])
        add(ent, neg[i, 2], coeff_neg[i] * dTn[i])
        add(rel, neg[i, 1], coeff_neg[i] * dRn[i])
    return {"entity": ent, "relation": rel}


# ---------------------------------------------------------------------------
# Adam


@dataclass
class AdamState:
    m_entity: np.ndarray
    v_entity: np.ndarray
    m_relation: np.ndarray
    v_relation: np.ndarray
    step: int = 0
    beta1: float = 0.9
    beta2: float = 0.999
    eps: float = 1e-8


def init_adam(table: EmbeddingTable, beta1=0.9, beta2=0.999, eps=1e-8) -> AdamState:
    return AdamState(
        m_entity=np.zeros_like(table.entity_emb),
        v_entity=np.zeros_like(table.entity_emb),
        m_relation=np.zeros_like(table.relation_emb),
        v_relation=np.zeros_like(table.relation_emb),
        beta1=beta1,
        beta2=beta2,
        eps=eps,
    )


def _adam_apply(param, m, v, rows, grads, lr, step, b1, b2, eps):
    g = grads.astype(param.dtype, copy=False)
    m[rows] = b1 * m[rows] + (1 - b1) * g
    v[rows] = b2 * v[rows] + (1 - b2) * g * g
    m_hat = m[rows] / (1 - b1**step)
    v_hat = v[rows] / (1 - b2**step)
    param[rows] -= lr * m_hat / (np.sqrt(v_hat) + eps)


def adam_step(state: AdamState, table: EmbeddingTable, gradient, lr):
    """One sparse Adam step over the rows named in `gradient`.

    Rows absent from the gradient keep both parameters and moments
    unchanged (lazy update). Mutates and returns (table, state).
    """
    state.step += 1
    for key, param, m, v in (
        ("entity", table.entity_emb, state.m_entity, state.v_entity),
        ("relation", table.relation_emb, state.m_relation, state.v_relation),
    ):
        store = gradient.get(key, {})
        if not store:
            continue
        rows = np.fromiter(sorted(store), dtype=np.int64)
        grads = np.stack([np.asarray(store[int(r)]) for r in rows])
        if grads.shape[1] != param.shape[1]:
            raise ContractError(
                f"{key} gradient width {grads.shape[1]} != parameter width {param.shape[1]}"
            )
        _adam_apply(
            param, m, v, rows, grads, lr, state.step, state.beta1, state.beta2, state.eps
        )
    return table, state


# ---------------------------------------------------------------------------
# batched training kernel


def _scatter_into(acc, ids, grads):
    """acc[ids] += grads with repeated ids, via a one-entry-per-row sparse
    matmul (much faster than np.add.at for large batches)."""
    import scipy.sparse as sp

    ids = ids.ravel()
    grads = grads.reshape(len(ids), -1)
    sel = sp.csr_matrix(
        (np.ones(len(ids), dtype=grads.dtype), ids, np.arange(len(ids) + 1)),
        shape=(len(ids), acc.shape[0]),
    )
    acc += sel.T @ grads


def batch_grad(table, positives, neg_entity_ids, neg_is_head, cfg):
    """Mean self-adversarial loss and summed sparse gradients for a batch.

    positives: (B, 3) int64; neg_entity_ids, neg_is_head: (B, n).
    Returns (loss, ent_ids, ent_grads, rel_ids, rel_grads).
    """
    kind = table.model_kind
    pos = np.asarray(positives, dtype=np.int64)
    B, n = neg_entity_ids.shape
    d_e = table.entity_emb.shape[1]
    dtype = table.entity_emb.dtype
    inv_b = dtype.type(1.0 / B)

    f_pos, dHp, dRp, dTp = distance_form(
        kind,
        table.entity_emb[pos[:, 0]],
        table.relation_emb[pos[:, 1]],
        table.entity_emb[pos[:, 2]],
        norm=cfg.norm,
        with_grad=True,
    )
    coeff_pos = (_sigmoid(f_pos - cfg.margin) * inv_b)[:, None]
    total_loss = float(np.sum(_softplus(f_pos - cfg.margin))) * float(inv_b)

    ent_acc = np.zeros_like(table.entity_emb)
    rel_acc = np.zeros_like(table.relation_emb)
    _scatter_into(ent_acc, pos[:, 0], coeff_pos * dHp)
    _scatter_into(ent_acc, pos[:, 2], coeff_pos * dTp)
    _scatter_into(rel_acc, pos[:, 1], coeff_pos * dRp)

    heads = np.where(neg_is_head, neg_entity_ids, pos[:, 0:1])
    tails = np.where(neg_is_head, pos[:, 2:3], neg_entity_ids)
    rels = np.broadcast_to(pos[:, 1:2], (B, n))

    chunk = max(1, int(2**21 // max(1, n * d_e)))
    for start in range(0, B, chunk):
        sl = slice(start, min(start + chunk, B))
        Hn = table.entity_emb[heads[sl]]
        Rn = table.relation_emb[rels[sl]]
        Tn = table.entity_emb[tails[sl]]
        f_neg, dHn, dRn, dTn = distance_form(
            kind, Hn, Rn, Tn, norm=cfg.norm, with_grad=True
        )
        p = _softmax(-cfg.temperature * f_neg, axis=1)
        total_loss += float(np.sum(p * _softplus(cfg.margin - f_neg))) * float(inv_b)
        coeff = (-(p * _sigmoid(cfg.margin - f_neg)) * inv_b)[..., None].astype(dtype)
        if dRn is dHn:
            # translational models share dH = dR and dT = -dH
            g = coeff * dHn
            _scatter_into(ent_acc, heads[sl], g)
            _scatter_into(ent_acc, tails[sl], -g)
            _scatter_into(rel_acc, pos[sl, 1], np.sum(g, axis=1))
        else:
            _scatter_into(ent_acc, heads[sl], coeff * dHn)
            _scatter_into(ent_acc, tails[sl], coeff * dTn)
            # relation rows repeat within a positive: reduce over n first
            _scatter_into(rel_acc, pos[sl, 1], np.sum(coeff * dRn, axis=1))

    ent_ids = np.unique(
        np.concatenate([pos[:, 0], pos[:, 2], neg_entity_ids.ravel()])
    )
    rel_ids = np.unique(pos[:, 1])
    return total_loss, ent_ids, ent_acc[ent_ids], rel_ids, rel_acc[rel_ids]


def sample_negative_batch(positives, local_entities_arr, train_codes, shape, rng, cfg,
                          num_relations, num_entities, max_retries=3):
    """Vectorized negative sampling for a batch: (neg_entity_ids, neg_is_head).

    train_codes: sorted encoded local train triples used for rejection.
    """
    B, n = shape
    pos = np.asarray(positives, dtype=np.int64)
    if cfg.corruption == "tail":
        is_head = np.zeros((B, n), dtype=bool)
    else:
        is_head = rng.random((B, n)) < 0.5
    repl = local_entities_arr[rng.integers(0, len(local_entities_arr), size=(B, n))]
    for _ in range(max_retries):
        heads = np.where(is_head, repl, pos[:, 0:1])
        tails = np.where(is_head, pos[:, 2:3], repl)
        codes = (heads * num_relations + pos[:, 1:2]) * num_entities + tails
        bad = np.isin(codes, train_codes)
        if not bad.any():
            break
        fresh = local_entities_arr[
            rng.integers(0, len(local_entities_arr), size=(B, n))
        ]
        repl = np.where(bad, fresh, repl)
    return repl, is_head


def train_epoch(table, adam, train_triples, local_entities, cfg, rng,
                num_relations=None, num_entities=None):
    """One epoch of batched self-adversarial training. Returns mean loss."""
    arr = np.asarray(train_triples, dtype=np.int64)
    if num_relations is None:
        num_relations = table.num_relations
    if num_entities is None:
        num_entities = table.num_entities
    ents = np.fromiter(sorted(local_entities), dtype=np.int64)
    train_codes = np.unique(_encode(arr, num_relations, num_entities))
    order = rng.permutation(len(arr))
    losses = []
    for start in range(0, len(arr), cfg.batch_size):
        batch = arr[order[start : start + cfg.batch_size]]
        neg_ids, neg_is_head = sample_negative_batch(
            batch,
            ents,
            train_codes,
            (len(batch), cfg.num_negatives),
            rng,
            cfg,
            num_relations,
            num_entities,
        )
        loss, ent_ids, ent_grads, rel_ids, rel_grads = batch_grad(
            table, batch, neg_ids, neg_is_head, cfg
        )
        adam.step += 1
        _adam_apply(
            table.entity_emb, adam.m_entity, adam.v_entity, ent_ids, ent_grads,
            cfg.learning_rate, adam.step, adam.beta1, adam.beta2, adam.eps,
        )
        _adam_apply(
            table.relation_emb, adam.m_relation, adam.v_relation, rel_ids, rel_grads,
            cfg.learning_rate, adam.step, adam.beta1, adam.beta2, adam.eps,
        )
        losses.append(loss)
    return float(np.mean(losses)) if losses else 0.0


# ---------------------------------------------------------------------------
# checkpoints


def save_table(table: EmbeddingTable, out_dir, extra_meta=None):
    """JSON header + raw .npy matrices; round-trips bit-exactly."""
    os.makedirs(out_dir, exist_ok=True)
    meta = {
        "model_kind": table.model_kind,
        "d_e": int(table.entity_emb.shape[1]),
        "d_r": int(table.relation_emb.shape[1]),
        "num_entities": int(table.num_entities),
        "num_relations": int(table.num_relations),
        "dtype": str(table.entity_emb.dtype),
    }
    if extra_meta:
        meta.update(extra_meta)
    with open(os.path.join(out_dir, "meta.json"), "w", encoding="utf-8") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
    np.save(os.path.join(out_dir, "entity_emb.npy"), table.entity_emb)
    np.save(os.path.join(out_dir, "relation_emb.npy"), table.relation_emb)


def load_table(in_dir):
    """Returns (EmbeddingTable, meta dict)."""
    with open(os.path.join(in_dir, "meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    entity = np.load(os.path.join(in_dir, "entity_emb.npy"))
    relation = np.load(os.path.join(in_dir, "relation_emb.npy"))
    return EmbeddingTable(meta["model_kind"], entity, relation), meta
