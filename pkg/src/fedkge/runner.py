"""Manifest-driven commands: split, train, attack, report.

The CLI wraps these; tests call them directly. Every artifact except the
sidecar run.log is byte-deterministic for a fixed manifest and seed.
"""

import csv
import hashlib
import json
import logging
import os
import time

import numpy as np

from . import attack as attack_mod
from .data import federated_split, load_client_datasets, load_triples, write_client_datasets
from .errors import ConfigError
from .evaluation import communication_cost, cost_reduction, evaluate, rounds_to_target
from .federation import run_training
from .models import save_table
from .rng import substream_seed
from .secure import FixedPointCodec
from .synth import profile_kg

logger = logging.getLogger(__name__)


def _dataset_kg(manifest):
    dataset = manifest["dataset"]
    if "triples" in dataset:
        return load_triples(
            dataset["triples"],
            entity_dict_path=dataset.get("entity_dict"),
            relation_dict_path=dataset.get("relation_dict"),
        )
    if "profile" in dataset:
        overrides = {
            k: v for k, v in dataset.items() if k not in ("profile", "generator_seed")
        }
        gen_seed = dataset.get("generator_seed", substream_seed(manifest.seed, "dataset"))
        return profile_kg(dataset["profile"], seed=gen_seed, **overrides)
    raise ConfigError("dataset: provide either `triples` (path) or `profile` (synthetic)")


def split_fingerprint(split_dir) -> str:
    """Hash of the split's files; lets report refuse cross-dataset comparisons."""
    h = hashlib.sha256()
    for root, dirs, files in sorted(os.walk(split_dir)):
        dirs.sort()
        for name in sorted(files):
            path = os.path.join(root, name)
            h.update(os.path.relpath(path, split_dir).encode())
            with open(path, "rb") as fh:
                h.update(fh.read())
    return h.hexdigest()


def cmd_split(manifest):
    """Build (or load) the dataset and write per-client directories."""
    kg = _dataset_kg(manifest)
    clients = federated_split(
        kg,
        manifest["split"]["num_clients"],
        ratios=tuple(manifest["split"]["ratios"]),
        seed=manifest.seed,
    )
    write_client_datasets(clients, kg, manifest.split_dir)
    return manifest.split_dir


def _write_csv(path, rows, columns):
    with open(path, "w", newline="", encoding="utf-8") as fh:
        writer = csv.DictWriter(fh, fieldnames=columns)
        writer.writeheader()
        for row in rows:
            writer.writerow(row)


def cmd_train(manifest):
    """Execute the training run described by the manifest and persist all
    artifacts under its output directory."""
    split_dir = manifest.split_dir
    if not os.path.isdir(split_dir):
        raise ConfigError(f"split.dir: no split found at {split_dir}; run `split` first")
    clients, _, _ = load_client_datasets(split_dir)
    train = manifest["train"]
    cfg = manifest.train_config()
    codec = FixedPointCodec()

    started = time.time()
    result = run_training(
        train["mode"],
        clients,
        cfg,
        rounds=train["rounds"],
        model_kind=train["model_kind"],
        sample_fraction=train["sample_fraction"],
        eval_every=train["eval_every"],
        patience=train["patience"],
        seed=manifest.seed,
        use_psu=train["secure"]["psu"],
        use_secagg=train["secure"]["secagg"],
        codec=codec,
    )
    elapsed = time.time() - started

    out_dir = manifest.output_dir
    os.makedirs(out_dir, exist_ok=True)

    for client in clients:
        table = result.tables[client.client_id]
        save_table(
            table,
            os.path.join(out_dir, "checkpoints", f"client_{client.client_id}"),
            extra_meta={
                "client_id": client.client_id,
                "local_entities": sorted(int(e) for e in client.local_entities),
                "local_relations": sorted(int(r) for r in client.local_relations),
                "local_triples": [[int(x) for x in t] for t in client.all_triples],
            },
        )

    _write_csv(
        os.path.join(out_dir, "rounds.csv"),
        [log.to_row() for log in result.logs],
        ["round", "clients", "payload_elements", "upload_bytes_total", "loss"],
    )
    _write_csv(
        os.path.join(out_dir, "convergence.csv"),
        [
            {
                "round": c["round"],
                "loss": repr(c["loss"]),
                "valid_mrr": "" if c["valid_mrr"] is None else repr(c["valid_mrr"]),
            }
            for c in result.convergence
        ],
        ["round", "loss", "valid_mrr"],
    )

    eval_clients = [c for c in clients if len(c.test)]
    metrics = evaluate(eval_clients, result.tables, split="test", filtered=True, norm=cfg.norm)
    with open(os.path.join(out_dir, "metrics.json"), "w", encoding="utf-8") as fh:
        json.dump(metrics.to_dict(), fh, indent=2, sort_keys=True)
        fh.write("\n")

    run_meta = {
        "mode": train["mode"],
        "model_kind": train["model_kind"],
        "client_ids": [c.client_id for c in clients],
        "seed": manifest.seed,
        "use_psu": train["secure"]["psu"],
        "use_secagg": train["secure"]["secagg"],
        "codec": {"scale_bits": codec.scale_bits, "modulus": codec.modulus},
        "dataset_fingerprint": split_fingerprint(split_dir),
        "rounds_completed": len(result.logs),
        "best_round": result.best_round,
        "stopped_early": result.stopped_early,
        "test_mrr": metrics.mrr,
    }
    with open(os.path.join(out_dir, "run_meta.json"), "w", encoding="utf-8") as fh:
        json.dump(run_meta, fh, indent=2, sort_keys=True)
        fh.write("\n")

    # timing lives only in the sidecar, keeping the artifacts byte-stable
    with open(os.path.join(out_dir, "run.log"), "a", encoding="utf-8") as fh:
        fh.write(f"{time.strftime('%Y-%m-%dT%H:%M:%S')} train finished in {elapsed:.1f}s\n")

    return result, metrics


def cmd_attack(manifest):
    """Run the reconstruction attack for each configured leakage ratio."""
    out_dir = manifest.output_dir
    traitor = manifest["attack"]["traitor"]
    results = {}
    for lr in manifest["attack"]["leakage_ratios"]:
        reports = attack_mod.leakage_experiment(
            out_dir, leakage_ratio=lr, traitor=traitor, seed=manifest.seed
        )
        results[repr(lr)] = {
            str(cid): report.to_dict() for cid, report in sorted(reports.items())
        }
    with open(os.path.join(out_dir, "run_meta.json"), encoding="utf-8") as fh:
        run_meta = json.load(fh)
    payload = {
        "mode": run_meta["mode"],
        "traitor": traitor,
        "results": results,
    }
    with open(os.path.join(out_dir, "leakage.json"), "w", encoding="utf-8") as fh:
        json.dump(payload, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return payload


def _load_run(run_dir):
    with open(os.path.join(run_dir, "run_meta.json"), encoding="utf-8") as fh:
        meta = json.load(fh)
    with open(os.path.join(run_dir, "metrics.json"), encoding="utf-8") as fh:
        metrics = json.load(fh)
    rounds = []
    with open(os.path.join(run_dir, "rounds.csv"), encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            rounds.append(
                {
                    "round": int(row["round"]),
                    "payload_elements": int(row["payload_elements"]),
                }
            )
    series = []
    with open(os.path.join(run_dir, "convergence.csv"), encoding="utf-8") as fh:
        for row in csv.DictReader(fh):
            if row["valid_mrr"]:
                series.append((int(row["round"]), float(row["valid_mrr"])))
    return meta, metrics, rounds, series


class _Payload:
    def __init__(self, elements):
        self.payload_elements = elements


def cmd_report(manifest):
    """Cross-run comparison: metrics table, rounds-to-target and cost."""
    run_dirs = manifest["report"]["runs"] or [manifest.output_dir]
    loaded = {d: _load_run(d) for d in run_dirs}

    fingerprints = {d: meta["dataset_fingerprint"] for d, (meta, _, _, _) in loaded.items()}
    if len(set(fingerprints.values())) > 1:
        detail = "\n".join(f"  {d}: {fp}" for d, fp in fingerprints.items())
        raise ConfigError(f"runs compare different datasets:\n{detail}")

    out_dir = manifest.output_dir
    os.makedirs(out_dir, exist_ok=True)
    rows = []
    for d, (meta, metrics, _, _) in loaded.items():
        rows.append(
            {
                "run": d,
                "mode": meta["mode"],
                "model": meta["model_kind"],
                "mrr": repr(metrics["mrr"]),
                "hits1": repr(metrics["hits1"]),
                "hits3": repr(metrics["hits3"]),
                "hits10": repr(metrics["hits10"]),
            }
        )
    _write_csv(
        os.path.join(out_dir, "summary.csv"),
        rows,
        ["run", "mode", "model", "mrr", "hits1", "hits3", "hits10"],
    )

    comm = {}
    for target in manifest["report"]["targets"]:
        per_run = {}
        for d, (meta, _, rounds, series) in loaded.items():
            reach = rounds_to_target(series, target)
            logs = [_Payload(r["payload_elements"]) for r in rounds]
            cost = communication_cost(logs, reach) if reach is not None else None
            per_run[d] = {
                "mode": meta["mode"],
                "rounds_to_target": reach,
                "cost_elements": cost,
                "mean_payload_per_round": (
                    float(np.mean([r["payload_elements"] for r in rounds]))
                    if rounds
                    else 0.0
                ),
            }
        # reduction of each non-FedE run against the FedE baseline, if any
        fede = [d for d, (m, _, _, _) in loaded.items() if m["mode"] == "FedE"]
        reductions = {}
        if fede:
            base = per_run[fede[0]]["cost_elements"]
            for d, entry in per_run.items():
                if d == fede[0] or entry["cost_elements"] is None or not base:
                    continue
                reductions[d] = cost_reduction(base, entry["cost_elements"])
        comm[repr(target)] = {"runs": per_run, "reduction_vs_fede": reductions}

    with open(os.path.join(out_dir, "comm_report.json"), "w", encoding="utf-8") as fh:
        json.dump(comm, fh, indent=2, sort_keys=True)
        fh.write("\n")
    return comm
