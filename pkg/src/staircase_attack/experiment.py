"""
Train -> attack -> evaluate pipeline and its on-disk artifacts.

Output directory layout::

    models/substitute_<i>.ssm, models/victim.ssm
    train.json
    adv/<attack>.npz          adversarial images of the evaluation samples
    results.csv, summary.json
    sweep_k.csv               (sweep-k only)

All randomness comes from the config seeds, so reruns are byte-identical.
"""

import csv
import io
import json
import logging
import os
import re
from dataclasses import asdict, replace

import numpy as np

from .attacks import AttackConfig, attack_dataset
from .config import ExperimentConfig
from .data import DataError, load_idx, synth_dataset
from .evaluation import attack_direction, cosine_report, success_rates
from .models import Ensemble, build_preset, load_model, save_model, train_sgd
from .staircase import StaircaseConfig

logger = logging.getLogger(__name__)

CSV_HEADER = [
    "attack", "K", "epsilon_255", "T", "targeted", "ensemble_rate", "aoe_rate",
    "holdout_rate", "mean_linf_255", "max_linf_255", "cos_sm", "cos_s2m",
]

_DATASET, _SUBSTITUTE, _VICTIM, _ATTACK = 1, 2, 3, 4


class StageError(RuntimeError):
    def __init__(self, stage, message, code):
        super().__init__(f"[{stage}] {message}")
        self.stage = stage
        self.code = code


def _slug(name):
    return re.sub(r"[^A-Za-z0-9_.=-]+", "_", name)


# ---------------------------------------------------------------------------
# stages


def load_datasets(cfg: ExperimentConfig):
    """Training set and evaluation set (first ``samples`` of a separate draw)."""
    spec = cfg.dataset
    if spec.kind == "synthetic":
        seed = cfg.derived_seed(_DATASET, spec.seed)
        train = synth_dataset(spec.classes, spec.per_class, spec.side, seed)
        test = synth_dataset(spec.classes, spec.per_class, spec.side, seed, split=1)
    elif spec.kind == "idx":
        if not spec.images or not spec.labels:
            raise DataError("idx dataset needs dataset.images and dataset.labels")
        train = load_idx(spec.images, spec.labels, spec.classes).with_next_class_targets()
        if spec.test_images and spec.test_labels:
            test = load_idx(spec.test_images, spec.test_labels, spec.classes).with_next_class_targets()
        else:
            test = train
    else:
        raise DataError(f"unknown dataset kind {spec.kind!r}")
    n = len(test) if cfg.samples == 0 else min(cfg.samples, len(test))
    return train, test.subset(np.arange(n))


def _train_one(spec, tag, index, cfg, train):
    input_shape = train.images.shape[1:]
    seed = cfg.derived_seed(tag, index, spec.seed)
    model = build_preset(spec.arch, input_shape, train.num_classes, seed=seed)
    return train_sgd(model, train, spec.epochs, spec.lr, seed=seed + 1, batch_size=spec.batch_size)


def train_models(cfg, train):
    subs = [_train_one(s, _SUBSTITUTE, i, cfg, train) for i, s in enumerate(cfg.substitutes, 1)]
    victim = _train_one(cfg.victim, _VICTIM, 0, cfg, train)
    return subs, victim


def save_models(out, subs, victim):
    os.makedirs(os.path.join(out, "models"), exist_ok=True)
    for i, m in enumerate(subs, 1):
        save_model(m, os.path.join(out, "models", f"substitute_{i}.ssm"))
    save_model(victim, os.path.join(out, "models", "victim.ssm"))
    history = {f"substitute_{i}": m.history for i, m in enumerate(subs, 1)}
    history["victim"] = victim.history
    _write_text(os.path.join(out, "train.json"), json.dumps(history, indent=2, sort_keys=True) + "\n")


def load_models(cfg, out):
    path = os.path.join(out, "models")
    subs = [load_model(os.path.join(path, f"substitute_{i}.ssm")) for i in range(1, len(cfg.substitutes) + 1)]
    return subs, load_model(os.path.join(path, "victim.ssm"))


def substitute_of(subs):
    return subs[0] if len(subs) == 1 else Ensemble.uniform(subs)


def effective_attack(cfg, attack_cfg: AttackConfig):
    return replace(attack_cfg, seed=cfg.derived_seed(_ATTACK, attack_cfg.seed))


def craft(cfg, attack_cfg, subs, test):
    traces = attack_dataset(effective_attack(cfg, attack_cfg), substitute_of(subs), test)
    return np.array([t.adversarial for t in traces])


def evaluate(cfg, name, attack_cfg, adv, subs, victim, test):
    report = success_rates(adv, test, subs, victim, attack_cfg.targeted, attack=name)
    eff = effective_attack(cfg, attack_cfg)
    sub = substitute_of(subs)
    directions = {
        "sm": attack_direction(replace(eff, staircase=StaircaseConfig(1)), sub),
        "s2m": attack_direction(eff, sub),
    }
    report.cosine = cosine_report(victim, test, directions, attack_cfg.targeted)
    return report


def csv_row(name, attack_cfg, report):
    f = "{:.6f}".format
    return [
        name, attack_cfg.K, f(attack_cfg.epsilon_255), attack_cfg.iterations,
        "true" if attack_cfg.targeted else "false",
        f(report.ensemble_rate), f(report.aoe_rate), f(report.holdout_rate),
        f(report.mean_linf_255), f(report.max_linf_255),
        f(report.cosine["sm"].mean), f(report.cosine["s2m"].mean),
    ]


def _write_text(path, text):
    with open(path, "w", encoding="utf-8", newline="") as fh:
        fh.write(text)


def write_csv(path, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_HEADER)
    writer.writerows(rows)
    _write_text(path, buf.getvalue())


def _summary(reports):
    out = []
    for r in reports:
        d = asdict(r)
        d["cosine"] = {k: asdict(v) for k, v in r.cosine.items()}
        out.append(d)
    return out


# ---------------------------------------------------------------------------
# subcommand drivers


def _stage(stage, code, fn, *args):
    try:
        return fn(*args)
    except StageError:
        raise
    except DataError as exc:
        raise StageError(stage, str(exc), 3) from exc
    except (ValueError, FloatingPointError, ArithmeticError, OSError) as exc:
        raise StageError(stage, str(exc), code) from exc


def _data(cfg):
    return _stage("data", 3, load_datasets, cfg)


def _models(cfg, out, train, fresh):
    model_dir = os.path.join(out, "models")
    if not fresh and os.path.exists(os.path.join(model_dir, "victim.ssm")):
        return _stage("train", 4, load_models, cfg, out)
    subs, victim = _stage("train", 4, train_models, cfg, train)
    _stage("train", 4, save_models, out, subs, victim)
    return subs, victim


def cmd_train(cfg, out):
    train, _ = _data(cfg)
    return _models(cfg, out, train, fresh=True)


def cmd_attack(cfg, out):
    train, test = _data(cfg)
    subs, _ = _models(cfg, out, train, fresh=False)
    os.makedirs(os.path.join(out, "adv"), exist_ok=True)
    for spec in cfg.attacks:
        logger.info("attack %s", spec.name)
        adv = _stage("attack", 4, craft, cfg, spec.config, subs, test)
        np.savez(os.path.join(out, "adv", _slug(spec.name) + ".npz"), adv=adv)


def cmd_eval(cfg, out):
    train, test = _data(cfg)
    subs, victim = _models(cfg, out, train, fresh=False)
    rows, reports = [], []
    for spec in cfg.attacks:
        path = os.path.join(out, "adv", _slug(spec.name) + ".npz")
        try:
            with np.load(path) as blob:
                adv = blob["adv"]
        except OSError as exc:
            raise StageError("eval", f"missing adversarial set for {spec.name}: {exc}", 3) from exc
        report = _stage("eval", 4, evaluate, cfg, spec.name, spec.config, adv, subs, victim, test)
        rows.append(csv_row(spec.name, spec.config, report))
        reports.append(report)
    _write_outputs(out, "results", rows, reports)
    return reports


def _write_outputs(out, stem, rows, reports):
    write_csv(os.path.join(out, stem + ".csv"), rows)
    text = json.dumps(_summary(reports), indent=2, sort_keys=True) + "\n"
    _write_text(os.path.join(out, ("summary" if stem == "results" else stem) + ".json"), text)


def _grid(cfg, out, grid, stem):
    train, test = _data(cfg)
    subs, victim = _models(cfg, out, train, fresh=True)
    rows, reports = [], []
    for name, attack_cfg in grid:
        logger.info("attack %s", name)
        adv = _stage("attack", 4, craft, cfg, attack_cfg, subs, test)
        report = _stage("eval", 4, evaluate, cfg, name, attack_cfg, adv, subs, victim, test)
        rows.append(csv_row(name, attack_cfg, report))
        reports.append(report)
    _write_outputs(out, stem, rows, reports)
    return reports


def run_experiment(cfg, out=None):
    """Full pipeline over the attack grid; writes results.csv and summary.json."""
    out = out or cfg.output
    os.makedirs(out, exist_ok=True)
    return _grid(cfg, out, [(s.name, s.config) for s in cfg.attacks], "results")


def sweep_k(cfg, out=None):
    """Re-run one attack of the grid for every K in ``cfg.sweep_k``; writes sweep_k.csv."""
    out = out or cfg.output
    os.makedirs(out, exist_ok=True)
    if not cfg.attacks:
        raise StageError("config", "sweep-k needs at least one attack in the grid", 2)
    base = cfg.attack(cfg.sweep_attack) if cfg.sweep_attack else cfg.attacks[0]
    grid = [(f"{base.name}@K={k}", replace(base.config, staircase=StaircaseConfig(k))) for k in cfg.sweep_k]
    return _grid(cfg, out, grid, "sweep_k")

