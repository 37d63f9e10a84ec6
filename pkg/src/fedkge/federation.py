"""Federated training orchestration for three modes.

Local: every client trains independently, no communication.
FedE:  the server keeps a plaintext global entity table (ids included) and
       averages entity rows weighted by per-client existence masks.
FedR:  the server learns relation ids only through a set union, and clients
       upload masked relation matrices; with the secure flags on, the server
       sees only the sums of matrices and masks.

Aggregation rule: row i of the new global table is (sum of uploads at i) /
(number of clients holding i); rows nobody holds keep their previous value.
"""

import time
from dataclasses import dataclass, field

import numpy as np

from .errors import ConfigError, ContractError
from .evaluation import evaluate
from .models import EmbeddingTable, init_adam, init_embeddings, train_epoch
from .rng import substream, substream_seed
from .secure import (
    FixedPointCodec,
    make_pairwise_seeds,
    psu_union,
    secagg_share,
    secagg_sum,
)

MODES = ("Local", "FedE", "FedR")
BYTES_PER_SCALAR = 4


@dataclass
class RelationTable:
    global_relation_ids: tuple  # ordered union of client relation ids
    embeddings: np.ndarray  # (R_global, d_r), row i <-> global_relation_ids[i]


@dataclass
class RoundLog:
    round_index: int
    client_ids: tuple
    upload_bytes: dict  # client_id -> bytes uploaded this round
    payload_elements: int  # total embedding elements uploaded
    loss: float
    wall_time: float

    def to_row(self) -> dict:
        # wall_time deliberately excluded: round artifacts are byte-stable
        return {
            "round": self.round_index,
            "clients": " ".join(str(c) for c in self.client_ids),
            "payload_elements": self.payload_elements,
            "upload_bytes_total": sum(self.upload_bytes.values()),
            "loss": repr(self.loss),
        }


@dataclass
class ClientState:
    client: object  # ClientDataset
    table: EmbeddingTable
    adam: object


@dataclass
class RunResult:
    mode: str
    tables: dict  # client_id -> EmbeddingTable (best validation snapshot)
    logs: list
    convergence: list  # dicts {round, loss, valid_mrr}
    best_round: int
    stopped_early: bool


def aggregate(updates, previous):
    """Mask-weighted element-wise average of client uploads.

    updates: list of (matrix, mask) with identical shapes. Rows with a zero
    mask count keep the `previous` value. Summation order is canonicalized
    so the result is exactly permutation-invariant in client order.
    """
    if not updates:
        raise ContractError("aggregate requires at least one update")
    shape = np.asarray(updates[0][0]).shape
    mask_len = len(np.asarray(updates[0][1]))
    if shape[0] != mask_len:
        raise ContractError(f"mask length {mask_len} != matrix rows {shape[0]}")
    mats, masks = [], []
    for mat, mask in updates:
        mat = np.asarray(mat)
        mask = np.asarray(mask)
        if mat.shape != shape or len(mask) != mask_len:
            raise ContractError("update shapes disagree")
        mats.append(mat)
        masks.append(mask.astype(np.int64))
    stacked = np.sort(np.stack(mats), axis=0)
    total = np.add.reduce(stacked, axis=0)
    counts = np.add.reduce(np.stack(masks), axis=0)
    out = np.asarray(previous).copy()
    held = counts > 0
    out[held] = total[held] / counts[held, None]
    return out


# FedE applies identical averaging semantics to entity rows.
aggregate_entities = aggregate


def _owned_rows(client_ids_sorted, local_ids):
    """Positions in the global table owned by the client, plus their ids."""
    ids = np.fromiter(sorted(local_ids), dtype=np.int64)
    pos = np.searchsorted(client_ids_sorted, ids)
    return pos, ids


def client_update(state: ClientState, broadcast, cfg, rng, protocol="relation",
                  num_relations=None, num_entities=None):
    """Overwrite locally-held rows from the broadcast table, run the local
    epochs, and return the masked full-width upload plus the mask vector.

    protocol selects which table rides the wire: "relation" (FedR) or
    "entity" (FedE).
    """
    client = state.client
    if protocol == "relation":
        local_ids = client.local_relations
        param = state.table.relation_emb
    else:
        local_ids = client.local_entities
        param = state.table.entity_emb

    global_ids = np.asarray(broadcast.global_relation_ids, dtype=np.int64)
    pos, ids = _owned_rows(global_ids, local_ids)
    param[ids] = broadcast.embeddings[pos]

    losses = []
    for _ in range(cfg.local_epochs):
        losses.append(
            train_epoch(
                state.table,
                state.adam,
                client.train,
                client.local_entities,
                cfg,
                rng,
                num_relations=num_relations,
                num_entities=num_entities,
            )
        )

    if protocol == "relation":
        param = state.table.relation_emb
    else:
        param = state.table.entity_emb
    masked = np.zeros((len(global_ids), param.shape[1]), dtype=param.dtype)
    mask = np.zeros(len(global_ids), dtype=np.int64)
    masked[pos] = param[ids]
    mask[pos] = 1
    loss = float(np.mean(losses)) if losses else 0.0
    return masked, mask, loss


def _secure_aggregate(updates, previous, codec, round_seed, client_ids):
    """Aggregate through the pairwise-masked secure sum: the server sees
    only sum-of-matrices and sum-of-masks."""
    n_rows, width = np.asarray(updates[0][0]).shape
    seeds = make_pairwise_seeds(round_seed, client_ids)
    shares = []
    for cid, (mat, mask) in zip(client_ids, updates):
        payload = np.concatenate(
            [np.asarray(mat, dtype=np.float64).ravel(), np.asarray(mask, dtype=np.float64)]
        )
        shares.append(secagg_share(payload, cid, seeds, codec))
    summed = secagg_sum(shares, codec)
    total = summed[: n_rows * width].reshape(n_rows, width)
    counts = np.rint(summed[n_rows * width :]).astype(np.int64)
    out = np.asarray(previous).copy()
    held = counts > 0
    out[held] = total[held] / counts[held, None]
    return out


def _mean_valid_mrr(states, norm):
    clients = [s.client for s in states]
    with_valid = [c for c in clients if len(c.valid)]
    if not with_valid:
        return None
    tables = {s.client.client_id: s.table for s in states}
    report = evaluate(with_valid, tables, split="valid", filtered=True, norm=norm)
    return report.mrr


def run_training(
    mode,
    clients,
    cfg,
    rounds,
    model_kind,
    sample_fraction=1.0,
    eval_every=5,
    patience=5,
    seed=0,
    use_psu=True,
    use_secagg=True,
    codec=None,
    dtype=np.float32,
) -> RunResult:
    """Run federated (or purely local) training for up to `rounds` rounds
    with early stopping on mean validation MRR."""
    if mode not in MODES:
        raise ConfigError(f"mode must be one of {MODES}, got {mode!r}")
    if not clients:
        raise ConfigError("run_training requires at least one client")
    if not 0.0 < sample_fraction <= 1.0:
        raise ConfigError("sample_fraction must be in (0, 1]")

    num_entities = 1 + max(max(c.local_entities, default=0) for c in clients)
    num_relations = 1 + max(max(c.local_relations, default=0) for c in clients)

    states = []
    for client in clients:
        table = init_embeddings(
            model_kind,
            num_entities,
            num_relations,
            cfg.dim,
            seed=substream_seed(seed, "client-init", client.client_id),
            dtype=dtype,
        )
        states.append(ClientState(client=client, table=table, adam=init_adam(table)))

    protocol = {"FedR": "relation", "FedE": "entity", "Local": None}[mode]
    broadcast = None
    if mode == "FedR":
        if use_psu:
            union = psu_union([c.local_relations for c in clients], seed=seed).union_ids
        else:
            union = tuple(sorted(set().union(*[c.local_relations for c in clients])))
        # first broadcast is the aggregate of the clients' initializations,
        # so a single-client federation follows the Local trajectory exactly
        init_updates = []
        global_ids = np.asarray(union, dtype=np.int64)
        for state in states:
            pos, ids = _owned_rows(global_ids, state.client.local_relations)
            masked = np.zeros(
                (len(union), state.table.relation_emb.shape[1]), dtype=dtype
            )
            mask = np.zeros(len(union), dtype=np.int64)
            masked[pos] = state.table.relation_emb[ids]
            mask[pos] = 1
            init_updates.append((masked, mask))
        server_init = init_embeddings(
            model_kind, 1, len(union), cfg.dim,
            seed=substream_seed(seed, "server-init"), dtype=dtype,
        ).relation_emb
        broadcast = RelationTable(union, aggregate(init_updates, server_init))
    elif mode == "FedE":
        # plaintext entity table with ids: the alignment FedR removes
        union = tuple(range(num_entities))
        server_init = init_embeddings(
            model_kind, num_entities, 1, cfg.dim,
            seed=substream_seed(seed, "server-init"), dtype=dtype,
        ).entity_emb
        broadcast = RelationTable(union, server_init)

    codec = codec or FixedPointCodec()
    logs = []
    convergence = []
    best_mrr = -np.inf
    best_round = 0
    best_tables = {s.client.client_id: s.table.copy() for s in states}
    evals_since_improvement = 0
    stopped_early = False
    sample_rng = substream(seed, "client-sampling")

    for t in range(rounds):
        t0 = time.monotonic()
        k = int(np.ceil(sample_fraction * len(states)))
        chosen = np.sort(sample_rng.choice(len(states), size=k, replace=False))
        round_states = [states[i] for i in chosen]

        updates = []
        losses = []
        upload_bytes = {}
        payload_elements = 0
        for state in round_states:
            rng = substream(seed, "local-train", state.client.client_id, t)
            if mode == "Local":
                for _ in range(cfg.local_epochs):
                    losses.append(
                        train_epoch(
                            state.table, state.adam, state.client.train,
                            state.client.local_entities, cfg, rng,
                            num_relations=num_relations, num_entities=num_entities,
                        )
                    )
                upload_bytes[state.client.client_id] = 0
                continue
            masked, mask, loss = client_update(
                state, broadcast, cfg, rng, protocol=protocol,
                num_relations=num_relations, num_entities=num_entities,
            )
            updates.append((masked, mask))
            losses.append(loss)
            owned = int(mask.sum())
            width = masked.shape[1]
            payload_elements += owned * width
            upload_bytes[state.client.client_id] = owned * width * BYTES_PER_SCALAR

        if mode != "Local":
            if mode == "FedR" and use_secagg:
                round_seed = substream_seed(seed, "secagg-round", t)
                ids = [s.client.client_id for s in round_states]
                new_emb = _secure_aggregate(
                    updates, broadcast.embeddings, codec, round_seed, ids
                ).astype(dtype)
            else:
                new_emb = aggregate(updates, broadcast.embeddings)
            broadcast = RelationTable(broadcast.global_relation_ids, new_emb)
            # broadcast back: clients refresh their held rows at the start
            # of their next update; refresh here too so evaluation sees the
            # aggregated table
            global_ids = np.asarray(broadcast.global_relation_ids, dtype=np.int64)
            for state in round_states:
                local = (
                    state.client.local_relations
                    if protocol == "relation"
                    else state.client.local_entities
                )
                pos, row_ids = _owned_rows(global_ids, local)
                if protocol == "relation":
                    state.table.relation_emb[row_ids] = broadcast.embeddings[pos]
                else:
                    state.table.entity_emb[row_ids] = broadcast.embeddings[pos]

        round_loss = float(np.mean(losses)) if losses else 0.0
        valid_mrr = None
        if eval_every and (t + 1) % eval_every == 0:
            valid_mrr = _mean_valid_mrr(states, cfg.norm)
            if valid_mrr is not None:
                if valid_mrr > best_mrr:
                    best_mrr = valid_mrr
                    best_round = t + 1
                    best_tables = {
                        s.client.client_id: s.table.copy() for s in states
                    }
                    evals_since_improvement = 0
                else:
                    evals_since_improvement += 1

        logs.append(
            RoundLog(
                round_index=t + 1,
                client_ids=tuple(states[i].client.client_id for i in chosen),
                upload_bytes=upload_bytes,
                payload_elements=payload_elements,
                loss=round_loss,
                wall_time=time.monotonic() - t0,
            )
        )
        convergence.append({"round": t + 1, "loss": round_loss, "valid_mrr": valid_mrr})

        if valid_mrr is not None and evals_since_improvement >= patience:
            stopped_early = True
            break

    if best_mrr == -np.inf:
        # never evaluated: keep the final state
        best_tables = {s.client.client_id: s.table.copy() for s in states}
        best_round = len(logs)

    return RunResult(
        mode=mode,
        tables=best_tables,
        logs=logs,
        convergence=convergence,
        best_round=best_round,
        stopped_early=stopped_early,
    )
