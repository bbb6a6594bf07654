"""Experiment pipelines behind the command line: configuration, training,
epsilon sweeps, defense comparison and billing checks.

Every function here is deterministic for a fixed configuration, and all
numbers written to disk use ``repr`` formatting so reruns are byte-identical.
"""

from __future__ import annotations

import copy
import csv
import json
import statistics
from concurrent.futures import ProcessPoolExecutor
from dataclasses import dataclass
from pathlib import Path
from typing import Optional

import numpy as np

from . import nn
from .billing import billing_invariance_check, load_tariff, tariff_to_dict
from .data import (
    DataError,
    NormParams,
    PowerTrace,
    SynthConfig,
    clean_missing,
    load_eco_csv,
    make_windows,
    normalize,
    save_trace_csv,
    split_index,
    synth_household,
)
from .gaussian import GaussianConfig, gaussian_perturb, gaussian_report, match_distortion
from .metrics import EvalReport, evaluate
from .oblivious import (
    PerturbConfig,
    apply_paired_perturbation,
    constraint_report,
    noise_directions,
    scale_noise,
)


class ConfigError(ValueError):
    """Malformed or inconsistent experiment configuration."""


DEFAULT_CONFIG = {
    "seed": 0,
    "data": {
        "path": None,
        "synth": SynthConfig().to_dict(),
        "window_len": 60,
        "train_stride": 30,
        "train_fraction": 0.8,
    },
    "train": {
        "epochs": 12,
        "learning_rate": 1.0,
        "batch_size": 32,
        "hidden_size": 16,
        "clip_norm": 1.0,
    },
    "perturb": {
        "epsilon": [0.0, 1e-4, 1e-3, 1e-2],
        "gamma": None,
        "pair_period": 2,
        "use_true_labels": False,
        "direction": "final",
    },
    "gaussian": {"sigma2": None, "seeds": [0, 1, 2, 3, 4]},
    "tariffs": [],
    "pad_zero": False,
    "out": "out",
    "checkpoint": None,
    "jobs": 1,
    "gradcheck": {"models": 50, "max_hidden": 4, "max_window": 8, "tolerance": 1e-4},
}


# ---------------------------------------------------------------- config

def _merge(base: dict, update: dict, prefix: str = "") -> dict:
    out = copy.deepcopy(base)
    for key, value in update.items():
        name = prefix + key
        if key not in base:
            raise ConfigError(f"unknown config field {name!r}")
        if isinstance(base[key], dict) and key != "synth":
            if not isinstance(value, dict):
                raise ConfigError(f"config field {name!r} must be an object")
            out[key] = _merge(base[key], value, name + ".")
        else:
            out[key] = value
    return out


def load_config(path=None, overrides: Optional[dict] = None) -> dict:
    """Defaults, then the JSON file at ``path``, then dotted ``overrides``."""
    cfg = copy.deepcopy(DEFAULT_CONFIG)
    if path is not None:
        p = Path(path)
        if not p.exists():
            raise ConfigError(f"config file not found: {p}")
        try:
            doc = json.loads(p.read_text())
        except json.JSONDecodeError as exc:
            raise ConfigError(f"{p}: invalid JSON ({exc})") from None
        if not isinstance(doc, dict):
            raise ConfigError(f"{p}: top level must be an object")
        cfg = _merge(cfg, doc)
    for dotted, value in (overrides or {}).items():
        set_dotted(cfg, dotted, value)
    validate_config(cfg)
    return cfg


def set_dotted(cfg: dict, dotted: str, value) -> None:
    keys = dotted.split(".")
    node = cfg
    for i, key in enumerate(keys[:-1]):
        if not isinstance(node, dict) or key not in node or not isinstance(node[key], dict):
            raise ConfigError(f"unknown config field {'.'.join(keys[:i + 1])!r}")
        node = node[key]
    leaf = keys[-1]
    synth_leaf = keys[:-1] == ["data", "synth"]
    if leaf not in node and not synth_leaf:
        raise ConfigError(f"unknown config field {dotted!r}")
    if isinstance(node.get(leaf), dict) and leaf != "synth":
        raise ConfigError(f"config field {dotted!r} is a section; set its members instead")
    node[leaf] = value


def validate_config(cfg: dict) -> None:
    eps = cfg["perturb"]["epsilon"]
    if isinstance(eps, (int, float)):
        cfg["perturb"]["epsilon"] = eps = [eps]
    if not eps or not all(isinstance(e, (int, float)) and e >= 0 for e in eps):
        raise ConfigError("perturb.epsilon must be a non-empty list of values >= 0")
    if int(cfg["jobs"]) < 1:
        raise ConfigError("jobs must be >= 1")
    s2 = cfg["gaussian"]["sigma2"]
    if s2 is not None and not (isinstance(s2, (int, float)) and s2 > 0):
        raise ConfigError("gaussian.sigma2 must be positive")
    if not cfg["gaussian"]["seeds"]:
        raise ConfigError("gaussian.seeds must not be empty")
    try:
        synth_config(cfg)
        train_config(cfg)
        perturb_config(cfg, 0.0)
    except (TypeError, ValueError) as exc:
        raise ConfigError(str(exc)) from None
    d = cfg["data"]
    if int(d["window_len"]) < 1 or int(d["train_stride"]) < 1:
        raise ConfigError("data.window_len and data.train_stride must be >= 1")
    if not 0 < float(d["train_fraction"]) < 1:
        raise ConfigError("data.train_fraction must lie strictly between 0 and 1")


def synth_config(cfg: dict) -> SynthConfig:
    return SynthConfig.from_dict(cfg["data"]["synth"])


def train_config(cfg: dict) -> nn.TrainConfig:
    return nn.TrainConfig(seed=int(cfg["seed"]), **cfg["train"])


def perturb_config(cfg: dict, epsilon: float) -> PerturbConfig:
    p = cfg["perturb"]
    return PerturbConfig(epsilon=float(epsilon), gamma=p["gamma"], pair_period=int(p["pair_period"]),
                         window_len=int(cfg["data"]["window_len"]), use_true_labels=bool(p["use_true_labels"]),
                         direction=p["direction"])


# ---------------------------------------------------------------- data

@dataclass
class Prepared:
    """A cleaned labelled trace split chronologically at sample ``cut``."""

    trace: PowerTrace
    labels: np.ndarray
    cut: int
    params: NormParams
    removed: list

    @property
    def test_trace(self) -> PowerTrace:
        return self.trace.with_values(self.trace.values[self.cut:])

    @property
    def test_labels(self) -> np.ndarray:
        return self.labels[self.cut:]


def load_source(cfg: dict):
    path = cfg["data"]["path"]
    if path is None:
        trace, labels = synth_household(synth_config(cfg))
        return trace, labels
    p = Path(path)
    if not p.exists():
        raise ConfigError(f"data file not found: {p}")
    trace, labels = load_eco_csv(p)
    if labels is None:
        raise DataError(f"{p}: occupancy column required")
    return trace, labels


def prepare(cfg: dict) -> Prepared:
    """Load, clean, split by samples and fit normalization on the training part only."""
    trace, labels = load_source(cfg)
    trace, report = clean_missing(trace, labels)
    labels = report.apply(labels)
    cut = split_index(len(trace), float(cfg["data"]["train_fraction"]))
    L = int(cfg["data"]["window_len"])
    if cut < L or len(trace) - cut < L:
        raise DataError(f"trace of {len(trace)} samples too short for window length {L}")
    _, params = normalize(trace.values[:cut])
    return Prepared(trace, labels, cut, params, report.removed)


def test_windows(values, params: NormParams, window_len: int) -> np.ndarray:
    x, _ = normalize(np.asarray(values, dtype=np.float64), params)
    return np.lib.stride_tricks.sliding_window_view(x, window_len)


def score(model: nn.LstmModel, values, labels, params: NormParams, window_len: int) -> EvalReport:
    """Attack metrics on stride-1 windows, each labelled by its last sample."""
    X = test_windows(values, params, window_len)
    return evaluate(nn.predict_proba(model, X), np.asarray(labels)[window_len - 1:])


# ---------------------------------------------------------------- output helpers

def _num(x) -> str:
    return "" if x is None else repr(float(x))


def write_json(path: Path, doc) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    path.write_text(json.dumps(doc, sort_keys=True, indent=2) + "\n")


def write_csv(path: Path, header, rows) -> None:
    path.parent.mkdir(parents=True, exist_ok=True)
    with path.open("w", newline="") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(header)
        w.writerows(rows)


def eps_tag(epsilon: float) -> str:
    return repr(float(epsilon))


def checkpoint_path(cfg: dict) -> Path:
    return Path(cfg["checkpoint"]) if cfg["checkpoint"] else Path(cfg["out"]) / "model.json"


def load_checkpoint(cfg: dict):
    path = checkpoint_path(cfg)
    if not path.exists():
        raise ConfigError(f"checkpoint not found: {path} (run train first)")
    model = nn.LstmModel.load(path)
    try:
        params = NormParams(**model.meta["norm"])
        window_len = int(model.meta["window_len"])
    except KeyError as exc:
        raise ConfigError(f"{path}: checkpoint lacks {exc}") from None
    if window_len != int(cfg["data"]["window_len"]):
        raise ConfigError(f"checkpoint window length {window_len} differs from data.window_len")
    return model, params


# ---------------------------------------------------------------- pipelines

def train_attack(cfg: dict, prep: Optional[Prepared] = None, log=None):
    """Train on the first part of the trace; returns ``(model, history, test_report)``."""
    prep = prep or prepare(cfg)
    L = int(cfg["data"]["window_len"])
    x, _ = normalize(prep.trace.values[:prep.cut], prep.params)
    ds = make_windows(x, prep.labels[:prep.cut], L, int(cfg["data"]["train_stride"]))
    tc = train_config(cfg)
    model, history = nn.train(nn.LstmModel.initialize(tc.hidden_size, tc.seed), ds.X, ds.y, tc, log=log)
    model.meta.update({"norm": prep.params.to_dict(), "window_len": L, "split_index": prep.cut})
    report = score(model, prep.test_trace.values, prep.test_labels, prep.params, L)
    return model, history, report


def cmd_train(cfg: dict) -> dict:
    out = Path(cfg["out"])
    prep = prepare(cfg)
    model, history, report = train_attack(cfg, prep)
    out.mkdir(parents=True, exist_ok=True)
    model.save(checkpoint_path(cfg))
    write_csv(out / "loss_history.csv", ["epoch", "loss"], [[i, _num(v)] for i, v in enumerate(history)])
    doc = {"test": report.to_dict(), "train_samples": prep.cut, "test_samples": len(prep.trace) - prep.cut,
           "removed_samples": len(prep.removed)}
    write_json(out / "train_report.json", doc)
    if cfg["data"]["path"] is not None:
        write_json(out / "cleaning.json", {"removed": prep.removed})
    return {"report": report, "history": history, "model": model}


def _perturb_row(args):
    model_doc, values, labels, starts, signs, unavailable, params, pcfg = args
    model = nn.LstmModel.from_dict(model_doc)
    trace = PowerTrace(values)
    noise = scale_noise(trace, starts, signs, params, pcfg, unavailable)
    result = apply_paired_perturbation(trace, noise)
    report = score(model, result.values, labels, params, pcfg.window_len)
    constraints = constraint_report(trace, noise, result, pcfg)
    return result.values, report, constraints


def _map(fn, items, jobs: int):
    if jobs <= 1 or len(items) <= 1:
        return [fn(item) for item in items]
    with ProcessPoolExecutor(max_workers=min(jobs, len(items))) as pool:
        return list(pool.map(fn, items))


def amloda_rows(cfg: dict, model: nn.LstmModel, params: NormParams, prep: Prepared, epsilons):
    """Perturb the test part once per epsilon. Gradient signs do not depend on
    epsilon, so they are computed a single time and rescaled per row."""
    trace, labels = prep.test_trace, prep.test_labels
    base = perturb_config(cfg, 0.0)
    starts, signs, unavailable = noise_directions(model, trace, labels, params, base)
    doc = model.to_dict()
    items = [(doc, trace.values, labels, starts, signs, unavailable, params, perturb_config(cfg, e))
             for e in epsilons]
    return _map(_perturb_row, items, int(cfg["jobs"]))


def cmd_sweep(cfg: dict) -> dict:
    out = Path(cfg["out"])
    model, params = load_checkpoint(cfg)
    prep = prepare(cfg)
    epsilons = sorted(set(float(e) for e in cfg["perturb"]["epsilon"]) | {0.0})
    rows = amloda_rows(cfg, model, params, prep, epsilons)
    traces = out / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    save_trace_csv(traces / "original.csv", prep.test_trace, prep.test_labels)
    table, detail = [], []
    for eps, (values, report, constraints) in zip(epsilons, rows):
        if eps > 0:
            save_trace_csv(traces / f"amloda_eps_{eps_tag(eps)}.csv", prep.test_trace.with_values(values))
        table.append([_num(eps), _num(report.accuracy), _num(report.mcc), _num(report.auc)])
        detail.append({"epsilon": eps, "metrics": report.to_dict(), "constraints": constraints.to_dict()})
    write_csv(out / "sweep.csv", ["epsilon", "accuracy", "mcc", "auc"], table)
    acc = [r[1].accuracy for r in rows]
    summary = {
        "rows": detail,
        "use_true_labels": bool(cfg["perturb"]["use_true_labels"]),
        "direction": cfg["perturb"]["direction"],
        "monotone_harm": acc[-1] <= acc[0],
    }
    write_json(out / "sweep.json", summary)
    return {"epsilons": epsilons, "reports": [r[1] for r in rows], "summary": summary}


def gaussian_rows(prep: Prepared, model, params, sigma2: float, seeds, window_len: int):
    rows = []
    for seed in seeds:
        gcfg = GaussianConfig(float(sigma2), int(seed))
        result = gaussian_perturb(prep.test_trace, gcfg)
        report = score(model, result.values, prep.test_labels, params, window_len)
        rows.append((seed, result, report, gaussian_report(prep.test_trace, result, gcfg)))
    return rows


def cmd_compare(cfg: dict) -> dict:
    """AMLODA at the largest configured epsilon against Gaussian noise of equal
    mean squared distortion (or the explicit ``gaussian.sigma2``)."""
    out = Path(cfg["out"])
    model, params = load_checkpoint(cfg)
    prep = prepare(cfg)
    eps = max(float(e) for e in cfg["perturb"]["epsilon"])
    if eps <= 0:
        raise ConfigError("compare needs a positive epsilon")
    [(values, am_report, constraints)] = amloda_rows(cfg, model, params, prep, [eps])
    sigma2 = cfg["gaussian"]["sigma2"]
    matched = sigma2 is None
    if matched:
        sigma2 = match_distortion(values, prep.test_trace.values)
        if sigma2 <= 0:
            raise ConfigError("AMLODA run produced no distortion to match; pass --sigma2")
    L = int(cfg["data"]["window_len"])
    grows = gaussian_rows(prep, model, params, sigma2, cfg["gaussian"]["seeds"], L)
    traces = out / "traces"
    traces.mkdir(parents=True, exist_ok=True)
    save_trace_csv(traces / "original.csv", prep.test_trace, prep.test_labels)
    save_trace_csv(traces / f"amloda_eps_{eps_tag(eps)}.csv", prep.test_trace.with_values(values))
    table = [["amloda", _num(eps), "", "", _num(am_report.accuracy), _num(am_report.mcc), _num(am_report.auc),
              _num(constraints.total_delta_w)]]
    gdocs = []
    for seed, result, report, grep in grows:
        save_trace_csv(traces / f"gaussian_seed_{seed}.csv", prep.test_trace.with_values(result.values))
        table.append(["gaussian", "", _num(sigma2), str(seed), _num(report.accuracy), _num(report.mcc),
                      _num(report.auc), _num(grep["total_delta_w"])])
        gdocs.append({"metrics": report.to_dict(), **grep})
    write_csv(out / "compare.csv",
              ["defense", "epsilon", "sigma2", "seed", "accuracy", "mcc", "auc", "total_delta_w"], table)
    g_auc = [r[2].auc for r in grows if r[2].auc is not None]
    median_auc = statistics.median(g_auc) if g_auc else None
    doc = {
        "amloda": {"epsilon": eps, "metrics": am_report.to_dict(), "constraints": constraints.to_dict()},
        "gaussian": {"sigma2": sigma2, "matched_distortion": matched, "runs": gdocs, "median_auc": median_auc},
        "amloda_auc_le_gaussian_median": (None if median_auc is None or am_report.auc is None
                                          else am_report.auc <= median_auc),
    }
    write_json(out / "compare.json", doc)
    return doc


def cmd_bill(cfg: dict) -> dict:
    """Bill the original test trace and every perturbed trace found under ``out/traces``."""
    out = Path(cfg["out"])
    if not cfg["tariffs"]:
        raise ConfigError("no tariff given (use --tariff PATH)")
    traces = out / "traces"
    original_path = traces / "original.csv"
    if not original_path.exists():
        raise ConfigError(f"{original_path} not found (run sweep or compare first)")
    original, _ = load_eco_csv(original_path)
    perturbed = sorted(p for p in traces.glob("*.csv") if p.name != "original.csv")
    if not perturbed:
        raise ConfigError(f"no perturbed traces in {traces}")
    rows, table = [], []
    for tpath in cfg["tariffs"]:
        tp = Path(tpath)
        if not tp.exists():
            raise ConfigError(f"tariff file not found: {tp}")
        tariff = load_tariff(tp)
        for p in perturbed:
            trace, _ = load_eco_csv(p)
            check = billing_invariance_check(original, trace, tariff, pad_zero=bool(cfg["pad_zero"]))
            rows.append({"tariff": tp.name, "trace": p.name, **check, "schedule": tariff_to_dict(tariff)})
            table.append([tp.name, p.name, _num(check["bill_original"]), _num(check["bill_perturbed"]),
                          _num(check["delta"]), str(check["invariant"]).lower()])
    write_csv(out / "bill.csv", ["tariff", "trace", "bill_original", "bill_perturbed", "delta", "invariant"], table)
    write_json(out / "bill.json", rows)
    return {"rows": rows}


def cmd_synth(cfg: dict) -> dict:
    out = Path(cfg["out"])
    out.mkdir(parents=True, exist_ok=True)
    sc = synth_config(cfg)
    trace, labels = synth_household(sc)
    save_trace_csv(out / "synth.csv", trace, labels)
    write_json(out / "synth_config.json", sc.to_dict())
    return {"samples": len(trace), "occupied": int(labels.sum())}


def gradcheck_suite(count: int, max_hidden: int, max_window: int, seed: int):
    """Finite-difference checks on ``count`` random micro-models; returns per-model rows."""
    rng = np.random.default_rng(seed)
    rows = []
    for k in range(count):
        H = int(rng.integers(1, max_hidden + 1))
        L = int(rng.integers(1, max_window + 1))
        model = nn.LstmModel.initialize(H, int(rng.integers(2 ** 32)))
        for name in model.params:
            model.params[name] *= rng.uniform(0.5, 3.0)
        window = rng.uniform(0, 1, L)
        label = int(rng.integers(0, 2))
        result = nn.grad_check(model, window, label)
        rows.append({"model": k, "hidden_size": H, "window_len": L, "label": label,
                     "max_rel_error": float(result.max_rel_error), "worst": result.worst})
    return rows


def cmd_gradcheck(cfg: dict) -> dict:
    g = cfg["gradcheck"]
    rows = gradcheck_suite(int(g["models"]), int(g["max_hidden"]), int(g["max_window"]), int(cfg["seed"]))
    worst = max(r["max_rel_error"] for r in rows) if rows else 0.0
    doc = {"models": rows, "max_rel_error": worst, "tolerance": g["tolerance"], "passed": worst < g["tolerance"]}
    write_json(Path(cfg["out"]) / "gradcheck.json", doc)
    return doc

