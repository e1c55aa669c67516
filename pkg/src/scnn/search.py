"""Random hyperparameter search: sampling, trial execution, leaderboard.

Each trial trains a full fold ensemble for one sampled configuration. Trials
are independent, so they can run on a thread pool; every trial's random
streams derive from (seed, trial_id) and configs are sampled up front from a
dedicated substream, which makes the leaderboard and all trial artifacts
byte-identical regardless of the worker count.

Run directory layout::

    run/
      manifest.json        search configuration + input fingerprints
      leaderboard.csv      ranked trials (see LEADERBOARD_HEADER)
      trials/<id>/fold0..fold{k-1}.scnn
      trials/<id>/oof.tsv  out-of-fold predictions (id, fold, gold, p1..p3)

Wall-clock timings are logged, not stored: every artifact in the run
directory is required to be bit-reproducible, so the leaderboard's
wall_time_s column is left empty.
"""

from __future__ import annotations

import csv
import hashlib
import io
import json
import logging
import os
import time
from concurrent.futures import ThreadPoolExecutor
from dataclasses import dataclass, replace
from typing import Optional, Sequence

import numpy as np

from . import metrics
from .corpus import FoldAssignment
from .ensemble import (
    FoldEnsemble,
    ensemble_predict,
    stack_top_k,
    stacked_predict_by_embedding,
    train_fold_ensemble,
)
from .errors import DataError, ScnnError
from .model import (
    DEFAULT_SEARCH_DOMAINS,
    HP_FIELDS,
    HyperParams,
    TrainSchedule,
    load_model,
    save_model,
    validate_hyperparams,
)
from .rng import Rng

logger = logging.getLogger(__name__)

_PROBE_HP = HyperParams(
    adam_b2=0.999, n_dense_output=100, keep_prob=0.5, batch_size=50,
    learning_rate=0.001, word_embedding="godin", n_filters=100,
    filter_sizes=(1, 2, 3, 4, 5),
)


@dataclass(frozen=True)
class SearchSpace:
    """Finite per-field domains; the default is the standard 16,128-point space."""

    domains: dict

    @classmethod
    def default(cls) -> "SearchSpace":
        return cls(domains=dict(DEFAULT_SEARCH_DOMAINS))

    @classmethod
    def from_dict(cls, overrides: dict, restricted: bool = True) -> "SearchSpace":
        """Build a space from per-field value lists; unlisted fields keep
        their default domains. ``restricted`` additionally requires every
        value to belong to the standard domain."""
        unknown = sorted(set(overrides) - set(HP_FIELDS))
        if unknown:
            raise DataError(f"unknown search-space fields: {unknown}")
        domains = dict(DEFAULT_SEARCH_DOMAINS)
        for name, values in overrides.items():
            if not isinstance(values, (list, tuple)) or not values:
                raise DataError(f"search-space field {name} must be a non-empty list")
            if name == "filter_sizes":
                values = [tuple(int(w) for w in v) for v in values]
            elif name in ("n_dense_output", "batch_size", "n_filters"):
                values = [int(v) for v in values]
            if len(set(values)) != len(values):
                raise DataError(f"search-space field {name} has duplicate values")
            for v in values:
                probe = replace(_PROBE_HP, **{name: v})
                problems = [
                    p for p in validate_hyperparams(probe, restricted=restricted)
                    if p.startswith(f"{name}=")
                ]
                if problems:
                    raise DataError(f"search-space value rejected: {problems[0]}")
            domains[name] = tuple(values)
        return cls(domains=domains)

    def size(self) -> int:
        n = 1
        for name in HP_FIELDS:
            n *= len(self.domains[name])
        return n

    def to_jsonable(self) -> dict:
        out = {}
        for name in HP_FIELDS:
            values = self.domains[name]
            if name == "filter_sizes":
                out[name] = [list(v) for v in values]
            else:
                out[name] = list(values)
        return out

    def descriptor(self) -> str:
        canon = json.dumps(self.to_jsonable(), sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(canon.encode("utf-8")).hexdigest()


def sample_config(space: SearchSpace, rng: Rng, seen: Optional[set]) -> HyperParams:
    """One uniform draw per field; with ``seen`` given, resamples until the
    config is new and records it there. ``seen=None`` disables dedup."""
    if seen is not None and len(seen) >= space.size():
        raise DataError(
            f"search space exhausted: all {space.size()} configurations sampled"
        )
    while True:
        values = {}
        for name in HP_FIELDS:  # fixed field order keeps the draw sequence stable
            domain = space.domains[name]
            values[name] = domain[int(rng.integers(0, len(domain)))]
        hp = HyperParams(**values)
        if seen is None:
            return hp
        if hp not in seen:
            seen.add(hp)
            return hp


# --------------------------------------------------------------------------
# trials and leaderboard
# --------------------------------------------------------------------------

@dataclass
class TrialRecord:
    trial_id: int
    hp: HyperParams
    cv_score: float  # NaN when the trial failed
    status: str      # "ok" or "failed: <reason>"
    wall_time: float
    ensemble: Optional[FoldEnsemble] = None

    @property
    def ok(self) -> bool:
        return self.status == "ok"


def leaderboard_order(records: Sequence[TrialRecord]) -> list:
    """Descending cv_score, ties by ascending trial id; failures sink last."""
    def key(r: TrialRecord):
        score = r.cv_score if r.ok else float("-inf")
        return (-score, r.trial_id)
    return sorted(records, key=key)


LEADERBOARD_HEADER = ["trial_id", "cv_score", "status", "wall_time_s"] + list(HP_FIELDS)


def _hp_csv_cells(hp: HyperParams) -> list:
    cells = []
    for name in HP_FIELDS:
        value = getattr(hp, name)
        if name == "filter_sizes":
            cells.append("-".join(str(w) for w in value))
        else:
            cells.append(repr(value) if isinstance(value, float) else str(value))
    return cells


def format_leaderboard_csv(records: Sequence[TrialRecord]) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(LEADERBOARD_HEADER)
    for r in leaderboard_order(records):
        status = r.status.replace("\n", " ").replace("\r", " ")
        cv = f"{r.cv_score:.6f}" if r.ok else ""
        writer.writerow([r.trial_id, cv, status, ""] + _hp_csv_cells(r.hp))
    return buf.getvalue()


def _hp_from_csv(row: dict) -> HyperParams:
    return HyperParams(
        adam_b2=float(row["adam_b2"]),
        n_dense_output=int(row["n_dense_output"]),
        keep_prob=float(row["keep_prob"]),
        batch_size=int(row["batch_size"]),
        learning_rate=float(row["learning_rate"]),
        word_embedding=row["word_embedding"],
        n_filters=int(row["n_filters"]),
        filter_sizes=tuple(int(w) for w in row["filter_sizes"].split("-")),
    )


def parse_leaderboard_csv(text: str) -> list:
    reader = csv.DictReader(io.StringIO(text))
    if reader.fieldnames != LEADERBOARD_HEADER:
        raise DataError(
            f"leaderboard header {reader.fieldnames} != expected {LEADERBOARD_HEADER}"
        )
    records = []
    for row in reader:
        status = row["status"]
        records.append(TrialRecord(
            trial_id=int(row["trial_id"]),
            hp=_hp_from_csv(row),
            cv_score=float(row["cv_score"]) if status == "ok" else float("nan"),
            status=status,
            wall_time=0.0,
        ))
    return records


# --------------------------------------------------------------------------
# out-of-fold prediction files
# --------------------------------------------------------------------------

def format_oof_tsv(ids: Sequence[str], labels: np.ndarray,
                   fold_of: Sequence[int], oof_probs: np.ndarray) -> str:
    """id, fold, gold, p1..p3 per example; probabilities are written with
    shortest exact float64 strings so scores recompute exactly on load."""
    lines = []
    for i, ex_id in enumerate(ids):
        p = [repr(float(v)) for v in oof_probs[i]]
        lines.append(f"{ex_id}\t{fold_of[i]}\t{labels[i]}\t{p[0]}\t{p[1]}\t{p[2]}\n")
    return "".join(lines)


def parse_oof_tsv(path):
    """Returns (ids, labels, folds, probs) from a trial's oof.tsv."""
    ids, labels, folds, probs = [], [], [], []
    with open(path, encoding="utf-8") as fh:
        for lineno, line in enumerate(fh, 1):
            parts = line.rstrip("\n").split("\t")
            if len(parts) != 6:
                raise DataError(f"{path}: expected 6 fields at line {lineno}")
            ids.append(parts[0])
            folds.append(int(parts[1]))
            labels.append(int(parts[2]))
            probs.append([float(v) for v in parts[3:6]])
    return ids, np.asarray(labels, dtype=np.int64), folds, np.asarray(probs)


def cv_score_from_oof(labels: np.ndarray, oof_probs: np.ndarray) -> float:
    pred = metrics.argmax_labels(oof_probs)
    return float(metrics.micro_prf_12(metrics.confusion(labels, pred))[2])


# --------------------------------------------------------------------------
# search driver
# --------------------------------------------------------------------------

def run_search(ids: Sequence[str], labels: np.ndarray, docs_by_name: dict,
               space: SearchSpace, n_trials: int, folds: FoldAssignment,
               sched: TrainSchedule, seed: int, parallelism: int = 1,
               out_dir=None, keep_models: bool = False, dtype=np.float32,
               dataset_info: Optional[dict] = None) -> list:
    """Sample ``n_trials`` distinct configs and train a fold ensemble each.

    Returns TrialRecords in leaderboard order. With ``out_dir`` set, writes
    the run directory described in the module docstring; unless
    ``keep_models`` is true, trained models are dropped from memory once
    their files are on disk. A failed trial is recorded on the leaderboard
    and the search continues.
    """
    if n_trials < 1:
        raise ValueError("n_trials must be >= 1")
    for name in space.domains["word_embedding"]:
        if name not in docs_by_name:
            raise DataError(f"no embedded documents for word_embedding={name!r}")
    labels = np.asarray(labels, dtype=np.int64)

    sampler = Rng(seed).substream("sampler")
    seen: set = set()
    planned = [(tid, sample_config(space, sampler, seen)) for tid in range(n_trials)]

    if out_dir is not None:
        os.makedirs(os.path.join(out_dir, "trials"), exist_ok=True)

    def run_trial(tid: int, hp: HyperParams) -> TrialRecord:
        started = time.perf_counter()
        try:
            fe = train_fold_ensemble(
                hp, docs_by_name[hp.word_embedding], labels, folds, sched,
                Rng(seed).substream(tid), trial_id=tid, dtype=dtype,
            )
        except (ScnnError, ValueError, ArithmeticError) as exc:
            elapsed = time.perf_counter() - started
            logger.warning("trial %d failed after %.1fs: %s", tid, elapsed, exc)
            return TrialRecord(tid, hp, float("nan"), f"failed: {exc}", elapsed)
        elapsed = time.perf_counter() - started
        logger.info("trial %d done in %.1fs, cv_score %.6f", tid, elapsed, fe.cv_score)
        cv = fe.cv_score
        if out_dir is not None:
            trial_dir = os.path.join(out_dir, "trials", str(tid))
            os.makedirs(trial_dir, exist_ok=True)
            for i, member in enumerate(fe.members):
                save_model(member, os.path.join(trial_dir, f"fold{i}.scnn"))
            with open(os.path.join(trial_dir, "oof.tsv"), "w", encoding="utf-8",
                      newline="") as fh:
                fh.write(format_oof_tsv(ids, labels, folds.fold_of, fe.oof_probs))
            if not keep_models:
                fe = None
        return TrialRecord(tid, hp, cv, "ok", elapsed, ensemble=fe)

    if parallelism > 1:
        with ThreadPoolExecutor(max_workers=parallelism) as pool:
            records = list(pool.map(lambda args: run_trial(*args), planned))
    else:
        records = [run_trial(tid, hp) for tid, hp in planned]

    ranked = leaderboard_order(records)
    if out_dir is not None:
        with open(os.path.join(out_dir, "leaderboard.csv"), "w", encoding="utf-8",
                  newline="") as fh:
            fh.write(format_leaderboard_csv(ranked))
        manifest = {
            "format_version": 1,
            "seed": seed,
            "n_trials": n_trials,
            "folds_k": folds.k,
            "fold_seed": folds.seed,
            "space": space.to_jsonable(),
            "space_descriptor": space.descriptor(),
            "schedule": {
                "max_epochs": sched.max_epochs,
                "patience": sched.patience,
                "restarts_allowed": sched.restarts_allowed,
                "lr_decay": sched.lr_decay,
            },
            "dataset": dataset_info or {},
        }
        with open(os.path.join(out_dir, "manifest.json"), "w", encoding="utf-8") as fh:
            json.dump(manifest, fh, indent=2, sort_keys=True)
            fh.write("\n")
    return ranked


def load_trial_ensemble(run_dir, record: TrialRecord, k: int) -> FoldEnsemble:
    """Rebuild one trial's FoldEnsemble from its saved artifacts, checking
    that the stored cv score matches the out-of-fold predictions."""
    trial_dir = os.path.join(run_dir, "trials", str(record.trial_id))
    members = []
    for i in range(k):
        path = os.path.join(trial_dir, f"fold{i}.scnn")
        if not os.path.exists(path):
            raise DataError(f"missing model file {path} for trial {record.trial_id}")
        members.append(load_model(path))
    _, labels, _, oof = parse_oof_tsv(os.path.join(trial_dir, "oof.tsv"))
    recomputed = cv_score_from_oof(labels, oof)
    if abs(recomputed - record.cv_score) > 1e-6:
        raise DataError(
            f"trial {record.trial_id}: leaderboard cv_score {record.cv_score:.6f} "
            f"does not match out-of-fold predictions ({recomputed:.6f})"
        )
    return FoldEnsemble(hp=record.hp, members=members, oof_probs=oof,
                        cv_score=recomputed, trial_id=record.trial_id)


def load_leaderboard(run_dir) -> list:
    path = os.path.join(run_dir, "leaderboard.csv")
    try:
        with open(path, encoding="utf-8", newline="") as fh:
            return parse_leaderboard_csv(fh.read())
    except OSError as exc:
        raise DataError(f"cannot read leaderboard {path}: {exc}") from exc


# --------------------------------------------------------------------------
# top-K report
# --------------------------------------------------------------------------

def top_k_report(trials: Sequence[FoldEnsemble], k_values: Sequence[int],
                 test_docs_by_name: dict, test_labels: np.ndarray) -> str:
    """CSV with one row per trial (cv and test score) and one per stacked K.

    Mirrors the three ranking curves: individual CV score, individual test
    score, and stacked-top-K test score.
    """
    test_labels = np.asarray(test_labels, dtype=np.int64)
    ranked = sorted(trials, key=lambda fe: (-fe.cv_score, fe.trial_id))
    if k_values and max(k_values) > len(ranked):
        raise ValueError(f"top-k {max(k_values)} exceeds trial count {len(ranked)}")

    def test_score(probs: np.ndarray) -> float:
        pred = metrics.argmax_labels(probs)
        return metrics.micro_prf_12(metrics.confusion(test_labels, pred))[2]

    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(["series", "key", "cv_score", "test_micro_f1_12"])
    for fe in ranked:
        probs = ensemble_predict(fe, test_docs_by_name[fe.hp.word_embedding])
        writer.writerow(["individual", fe.trial_id, f"{fe.cv_score:.6f}",
                         f"{test_score(probs):.6f}"])
    for k in sorted(k_values):
        se = stack_top_k(ranked, k)
        probs = stacked_predict_by_embedding(se, test_docs_by_name)
        writer.writerow(["stacked", k, "", f"{test_score(probs):.6f}"])
    return buf.getvalue()
