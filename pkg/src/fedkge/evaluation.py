"""Link-prediction metrics (tail ranking, MRR, Hits@N) and communication
cost accounting."""

from dataclasses import dataclass, field

import numpy as np

from .errors import ContractError, MetricError
from .models import score_candidates

NEG_INF = -np.inf


@dataclass
class RankResult:
    query: tuple  # (h, r, truth)
    rank: int
    filtered: bool


@dataclass
class MetricsReport:
    mrr: float
    hits1: float
    hits3: float
    hits10: float
    per_client: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {
            "mrr": self.mrr,
            "hits1": self.hits1,
            "hits3": self.hits3,
            "hits10": self.hits10,
            "per_client": self.per_client,
        }


@dataclass
class CommReport:
    target_mrr: float
    rounds_to_target: dict  # label -> round count or None
    payload_per_round: dict  # label -> mean payload elements per round
    cost: dict  # label -> total payload elements until target

    def to_dict(self) -> dict:
        return {
            "target_mrr": self.target_mrr,
            "rounds_to_target": self.rounds_to_target,
            "payload_per_round": self.payload_per_round,
            "cost": self.cost,
        }


def _midpoint_rank(scores, truth_score):
    """1 + strictly-higher count + half of the other equal scorers."""
    higher = int(np.sum(scores > truth_score))
    ties_others = int(np.sum(scores == truth_score)) - 1
    return 1 + higher + ties_others // 2


def rank_tail(table, query, truth, candidate_entities, filter_set=None, norm="l2"):
    """Rank the true tail among candidates for the (h, r, ?) query.

    filter_set holds known true triples; candidates completing one of them
    (other than the query itself) are excluded from the ranking.
    """
    h, r = query
    cand = np.fromiter(sorted(candidate_entities), dtype=np.int64)
    if truth not in candidate_entities:
        raise ContractError(f"truth entity {truth} not among candidates")
    scores = score_candidates(table, [h], [r], cand, norm=norm)[0]
    filtered = filter_set is not None
    if filtered:
        mask = np.array(
            [(h, r, int(c)) in filter_set and int(c) != truth for c in cand],
            dtype=bool,
        )
        scores = np.where(mask, NEG_INF, scores)
    truth_pos = int(np.searchsorted(cand, truth))
    rank = _midpoint_rank(scores, scores[truth_pos])
    return RankResult(query=(h, r, truth), rank=rank, filtered=filtered)


def _client_ranks(table, client, split_triples, filtered, global_candidates=None, norm="l2"):
    triples = np.asarray(split_triples, dtype=np.int64)
    if len(triples) == 0:
        raise MetricError(f"client {client.client_id}: empty evaluation split")
    if global_candidates is not None:
        cand = np.fromiter(sorted(global_candidates), dtype=np.int64)
    else:
        cand = np.fromiter(sorted(client.local_entities), dtype=np.int64)
    scores = score_candidates(table, triples[:, 0], triples[:, 1], cand, norm=norm)
    truth_pos = np.searchsorted(cand, triples[:, 2])
    if filtered:
        known = {}
        for h, r, t in client.all_triples:
            known.setdefault((int(h), int(r)), []).append(int(t))
        for i, (h, r, t) in enumerate(triples):
            tails = np.asarray(known.get((int(h), int(r)), ()), dtype=np.int64)
            if len(tails) > 1:
                pos = np.searchsorted(cand, tails)
                valid = (pos < len(cand)) & (
                    cand[np.clip(pos, 0, len(cand) - 1)] == tails
                )
                pos = pos[valid & (tails != t)]
                scores[i, pos] = NEG_INF
    truth_scores = scores[np.arange(len(triples)), truth_pos]
    higher = np.sum(scores > truth_scores[:, None], axis=1)
    ties_others = np.sum(scores == truth_scores[:, None], axis=1) - 1
    return 1 + higher + ties_others // 2


def evaluate(clients, tables, split="test", filtered=True, global_candidates=None, norm="l2"):
    """Per-client MRR/Hits over a split; global report is the unweighted
    mean across clients."""
    per_client = []
    for client in clients:
        table = tables[client.client_id] if isinstance(tables, dict) else tables[
            clients.index(client)
        ]
        ranks = _client_ranks(
            table,
            client,
            getattr(client, split),
            filtered,
            global_candidates=global_candidates,
            norm=norm,
        )
        rr = 1.0 / ranks
        per_client.append(
            {
                "client_id": client.client_id,
                "mrr": float(np.mean(rr)),
                "hits1": float(np.mean(ranks <= 1)),
                "hits3": float(np.mean(ranks <= 3)),
                "hits10": float(np.mean(ranks <= 10)),
                "num_queries": int(len(ranks)),
            }
        )
    if not per_client:
        raise MetricError("evaluate requires at least one client")
    return MetricsReport(
        mrr=float(np.mean([c["mrr"] for c in per_client])),
        hits1=float(np.mean([c["hits1"] for c in per_client])),
        hits3=float(np.mean([c["hits3"] for c in per_client])),
        hits10=float(np.mean([c["hits10"] for c in per_client])),
        per_client=per_client,
    )


def rounds_to_target(round_series, target):
    """First round whose validation MRR reaches the target, else None."""
    for round_idx, mrr in round_series:
        if mrr >= target:
            return round_idx
    return None


def communication_cost(logs, rounds):
    """Total payload elements over the first `rounds` round logs."""
    if rounds < 0 or rounds > len(logs):
        raise ContractError(f"rounds={rounds} outside available {len(logs)} logs")
    return int(sum(log.payload_elements for log in logs[:rounds]))


def cost_reduction(cost_baseline, cost_other):
    """Fractional reduction of `cost_other` relative to `cost_baseline`."""
    if cost_baseline == 0:
        raise MetricError("baseline cost is zero; reduction undefined")
    return 1.0 - cost_other / cost_baseline
