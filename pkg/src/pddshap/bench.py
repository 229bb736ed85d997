"""Dataset ingestion, agreement metrics and the method-comparison harness."""
from __future__ import annotations

import csv
import json
import logging
import os
import time
from dataclasses import asdict, dataclass, field
from typing import Optional

import numpy as np
from scipy.stats import rankdata

from .core import CountingModel, InputError, PddShapError, SampleMatrix, as_matrix
from .models import resolve_model
from .pdd import train_pdd
from .shapley import MAX_EXACT_FEATURES, explain_batch, pdd_shapley_matrix

logger = logging.getLogger(__name__)


class DataError(InputError):
    """Malformed or empty dataset; ``line`` and ``column`` locate the problem when known."""

    def __init__(self, message: str, line: Optional[int] = None, column: Optional[int] = None):
        where = ""
        if line is not None:
            where = f"row {line}" + (f", column {column}" if column is not None else "") + ": "
        super().__init__(where + message)
        self.line = line
        self.column = column


class UndefinedMetricError(InputError):
    pass


def load_csv(path, target_column: Optional[str] = None, allow_empty: bool = False):
    """Read a numeric CSV with a header row.

    Returns ``(SampleMatrix, target)``; ``target`` is ``None`` unless
    ``target_column`` is given. Rows are numbered as in the file, the header
    being row 1.
    """
    try:
        fh = open(path, newline="", encoding="utf-8")
    except OSError as exc:
        raise DataError(f"cannot open {path}: {exc.strerror}") from None
    with fh:
        reader = csv.reader(fh)
        header = next(reader, None)
        if header is None or not any(h.strip() for h in header):
            raise DataError(f"{path} is empty")
        header = [h.strip() for h in header]
        tcol = None
        if target_column is not None:
            if target_column not in header:
                raise DataError(f"target column {target_column!r} not in header", line=1)
            tcol = header.index(target_column)
        rows = []
        for rec in reader:
            line = reader.line_num
            if not rec or all(not c.strip() for c in rec):
                continue
            if len(rec) != len(header):
                raise DataError(f"expected {len(header)} fields, got {len(rec)}", line=line)
            try:
                vals = [float(c) for c in rec]
            except ValueError:
                col = next(i for i, c in enumerate(rec) if not _is_float(c))
                raise DataError(f"non-numeric value {rec[col]!r}", line=line, column=col + 1) from None
            bad = [i for i, v in enumerate(vals) if not np.isfinite(v)]
            if bad:
                raise DataError(f"non-finite value {rec[bad[0]]!r}", line=line, column=bad[0] + 1)
            rows.append(vals)
    if not rows and not allow_empty:
        raise DataError(f"{path} has a header but no data rows")
    data = np.array(rows, dtype=np.float64).reshape(len(rows), len(header))
    feat = [i for i in range(len(header)) if i != tcol]
    X = SampleMatrix(data[:, feat], tuple(header[i] for i in feat))
    y = data[:, tcol] if tcol is not None else None
    return X, y


def _is_float(s: str) -> bool:
    try:
        float(s)
        return True
    except ValueError:
        return False


def sample_background(X, n: int, seed: Optional[int] = None) -> SampleMatrix:
    """Uniform sample of ``n`` rows without replacement."""
    names = X.column_names if isinstance(X, SampleMatrix) else None
    arr = as_matrix(X)
    if not 1 <= n <= arr.shape[0]:
        raise InputError(f"background size must be in [1, {arr.shape[0]}], got {n}")
    idx = np.random.default_rng(seed).choice(arr.shape[0], size=n, replace=False)
    return SampleMatrix(arr[idx], names)


def _pair(reference, candidate):
    ref = np.asarray(reference, dtype=np.float64)
    cand = np.asarray(candidate, dtype=np.float64)
    if ref.shape != cand.shape:
        raise InputError(f"shape mismatch: reference {ref.shape} vs candidate {cand.shape}")
    if not (np.all(np.isfinite(ref)) and np.all(np.isfinite(cand))):
        raise InputError("metric inputs must be finite")
    return ref, cand


def r2_score(reference, candidate) -> float:
    """Coefficient of determination over all entries, ``reference`` as ground truth."""
    ref, cand = _pair(reference, candidate)
    ref, cand = ref.reshape(-1), cand.reshape(-1)
    if ref.size < 2:
        raise InputError("R^2 needs at least two values")
    ss_tot = float(np.sum((ref - ref.mean()) ** 2))
    if ss_tot == 0.0:
        raise UndefinedMetricError("R^2 is undefined: reference has zero variance")
    return 1.0 - float(np.sum((ref - cand) ** 2)) / ss_tot


def _rank_corr_rows(a: np.ndarray, b: np.ndarray) -> np.ndarray:
    """Spearman correlation of each row pair; NaN where a row is constant."""
    ra = rankdata(a, axis=1)
    rb = rankdata(b, axis=1)
    ra -= ra.mean(axis=1, keepdims=True)
    rb -= rb.mean(axis=1, keepdims=True)
    num = np.sum(ra * rb, axis=1)
    den = np.sqrt(np.sum(ra * ra, axis=1) * np.sum(rb * rb, axis=1))
    with np.errstate(invalid="ignore", divide="ignore"):
        rho = np.where(den > 0, num / np.where(den > 0, den, 1.0), np.nan)
    return np.clip(rho, -1.0, 1.0)


def spearman_rho(reference, candidate) -> float:
    """Per-instance rank correlation across features, averaged over instances.

    Instances whose feature values are all tied on either side are skipped.
    """
    ref, cand = _pair(reference, candidate)
    if ref.ndim == 1:
        ref, cand = ref[None, :], cand[None, :]
    if ref.ndim != 2 or ref.shape[1] < 2:
        raise InputError("Spearman correlation needs at least two features per instance")
    rho = _rank_corr_rows(ref, cand)
    if np.all(np.isnan(rho)):
        raise UndefinedMetricError("Spearman correlation is undefined: every instance has tied values")
    return float(np.nanmean(rho))


@dataclass
class AgreementReport:
    r2: float
    spearman: float
    per_feature_r2: list = field(default_factory=list)
    per_feature_spearman: list = field(default_factory=list)

    def to_dict(self) -> dict:
        return {k: _jsonable(v) for k, v in asdict(self).items()}


def agreement(reference, candidate) -> AgreementReport:
    """Global and per-feature R^2 and Spearman; undefined entries are NaN."""
    ref, cand = _pair(reference, candidate)
    ref, cand = np.atleast_2d(ref), np.atleast_2d(cand)
    per_r2, per_rho = [], []
    for j in range(ref.shape[1]):
        try:
            per_r2.append(r2_score(ref[:, j], cand[:, j]))
        except InputError:
            per_r2.append(float("nan"))
        if ref.shape[0] >= 2:
            per_rho.append(float(_rank_corr_rows(ref[:, j][None], cand[:, j][None])[0]))
        else:
            per_rho.append(float("nan"))
    try:
        rho = spearman_rho(ref, cand)
    except InputError:
        rho = float("nan")
    return AgreementReport(r2_score(ref, cand), rho, per_r2, per_rho)


def _jsonable(v):
    if isinstance(v, (list, tuple, np.ndarray)):
        return [_jsonable(x) for x in v]
    if isinstance(v, (float, np.floating)):
        return None if not np.isfinite(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


@dataclass
class ExplanationSet:
    method: str
    phi: np.ndarray
    baselines: np.ndarray
    train_time: float = 0.0
    inference_time: float = 0.0
    model_call_count: int = 0
    train_model_calls: int = 0

    def __post_init__(self):
        if not np.all(np.isfinite(self.phi)):
            raise InputError(f"{self.method}: attribution matrix is not finite")
        if self.train_time < 0 or self.inference_time < 0:
            raise InputError("times must be nonnegative")


def _expand_methods(methods: list) -> list[tuple[str, str, dict]]:
    out = []
    for m in methods:
        if isinstance(m, str):
            m = {"name": m}
        name = m["name"]
        params = dict(m.get("params", {}))
        if name == "pdd":
            ks = params.pop("k", 1)
            for k in ks if isinstance(ks, list) else [ks]:
                label = m["label"] if "label" in m and not isinstance(ks, list) else f"pdd(k={k})"
                out.append((label, name, dict(params, k=int(k))))
        elif name in ("subset", "antithetic"):
            budget = params.get("budget", params.get("n_samples", params.get("n_permutations")))
            out.append((m.get("label", f"{name}(n={budget})"), name, params))
        elif name == "exact":
            out.append((m.get("label", "exact"), name, params))
        else:
            out.append((m.get("label", name), name, params))
    return out


def run_method(name: str, params: dict, model, X_explain, X_bg, seed) -> ExplanationSet:
    """Train (if needed) and explain with one method, timing the phases separately."""
    counter = CountingModel(model)
    if name == "pdd":
        t0 = time.perf_counter()
        s = train_pdd(
            counter,
            X_bg,
            params["k"],
            regressor=params.get("regressor", "tree"),
            regressor_params=params.get("regressor_params"),
            inner_sample=params.get("inner_sample"),
            seed=seed,
        )
        train_time = time.perf_counter() - t0
        train_calls = counter.rows
        counter.reset()
        t0 = time.perf_counter()
        phi = pdd_shapley_matrix(s, X_explain)
        inference_time = time.perf_counter() - t0
        return ExplanationSet(
            f"pdd(k={params['k']})", phi, np.full(phi.shape[0], s.f_empty),
            train_time, inference_time, counter.rows, train_calls,
        )
    if name in ("exact", "subset", "antithetic"):
        budget = params.get("budget", params.get("n_samples", params.get("n_permutations")))
        t0 = time.perf_counter()
        phi, base, _ = explain_batch(name, counter, X_explain, X_bg, budget=budget, seed=seed)
        inference_time = time.perf_counter() - t0
        return ExplanationSet(name, phi, base, 0.0, inference_time, counter.rows, 0)
    raise InputError(f"unknown method {name!r}")


@dataclass
class BenchConfig:
    dataset_path: str
    model: object
    target_column: Optional[str] = None
    background_size: int = 100
    n_explain: Optional[int] = 1000
    seed: int = 0
    methods: list = field(default_factory=lambda: [{"name": "pdd", "params": {"k": [1, 2]}}])
    reference_method: Optional[object] = None
    output_dir: Optional[str] = None
    dataset_name: Optional[str] = None

    @classmethod
    def from_dict(cls, doc: dict) -> "BenchConfig":
        known = set(cls.__dataclass_fields__)
        unknown = set(doc) - known
        if unknown:
            raise InputError(f"unknown config keys: {sorted(unknown)}")
        for key in ("dataset_path", "model"):
            if key not in doc:
                raise InputError(f"config is missing {key!r}")
        return cls(**doc)

    @classmethod
    def load(cls, path) -> "BenchConfig":
        try:
            with open(path, encoding="utf-8") as fh:
                doc = json.load(fh)
        except OSError as exc:
            raise DataError(f"cannot read config {path}: {exc.strerror}") from None
        except json.JSONDecodeError as exc:
            raise InputError(f"config {path} is not valid JSON: {exc}") from None
        if not isinstance(doc, dict):
            raise InputError("config must be a JSON object")
        return cls.from_dict(doc)


def _default_reference(d: int) -> dict:
    if d <= MAX_EXACT_FEATURES:
        return {"name": "exact"}
    return {"name": "subset", "params": {"budget": 1000}, "label": "subset(reference)"}


def run_benchmark(config) -> dict:
    """Run every configured method on one dataset and score it against the reference.

    A failing method is recorded with its error and skipped. If the
    reference method itself fails, agreement scores are omitted.
    """
    if isinstance(config, dict):
        config = BenchConfig.from_dict(config)
    X, _ = load_csv(config.dataset_path, config.target_column)
    n, d = X.shape
    model = resolve_model(config.model)
    X_bg = sample_background(X, min(config.background_size, n), seed=config.seed)
    n_explain = n if config.n_explain is None else min(config.n_explain, n)
    rng = np.random.default_rng([config.seed, 1])
    X_explain = X.values[np.sort(rng.permutation(n)[:n_explain])]

    methods = _expand_methods(config.methods)
    labels = [lab for lab, _, _ in methods]
    ref_spec = config.reference_method or _default_reference(d)
    if isinstance(ref_spec, str) and ref_spec in labels:
        ref_label = ref_spec
    else:
        if isinstance(ref_spec, str):
            ref_spec = {"name": ref_spec}
        (ref_label, rname, rparams), = _expand_methods([ref_spec])
        if ref_label not in labels:
            methods.insert(0, (ref_label, rname, rparams))

    entries, results = [], {}
    for label, name, params in methods:
        entry = {"label": label, "name": name, "params": params}
        try:
            res = run_method(name, params, model, X_explain, X_bg, config.seed)
        except (PddShapError, ValueError, KeyError, TypeError) as exc:
            logger.warning("method %s failed: %s", label, exc)
            entry.update(status="failed", error=f"{type(exc).__name__}: {exc}")
            entries.append(entry)
            continue
        res.method = label
        results[label] = res
        entry.update(
            status="ok",
            train_time=res.train_time,
            inference_time=res.inference_time,
            model_call_count=res.model_call_count,
            train_model_calls=res.train_model_calls,
        )
        entries.append(entry)

    ref = results.get(ref_label)
    for entry in entries:
        if entry["status"] != "ok" or ref is None or entry["label"] == ref_label:
            continue
        try:
            entry["agreement"] = agreement(ref.phi, results[entry["label"]].phi).to_dict()
        except InputError as exc:
            entry["agreement_error"] = str(exc)

    if hasattr(model, "close"):
        model.close()
    report = {
        "dataset": {
            "name": config.dataset_name or os.path.splitext(os.path.basename(config.dataset_path))[0],
            "path": config.dataset_path,
            "n_rows": n,
            "n_features": d,
            "background_size": X_bg.rows,
            "n_explained": n_explain,
        },
        "seed": config.seed,
        "reference": ref_label,
        "methods": entries,
        "results": results,
    }
    if config.output_dir:
        write_report(report, config.output_dir)
    return report


def format_table(report: dict) -> str:
    """Plain-text timing and agreement tables; PDD cells read ``train+inference``."""
    ok = [e for e in report["methods"] if e["status"] == "ok"]
    name = report["dataset"]["name"]
    cells = []
    for e in ok:
        if e["name"] == "pdd":
            cells.append(f"{e['train_time']:.2f}+{e['inference_time']:.2f}")
        else:
            cells.append(f"{e['inference_time']:.2f}")
    header = ["Dataset"] + [e["label"] for e in ok]
    row = [name] + cells
    widths = [max(len(a), len(b)) for a, b in zip(header, row)]
    lines = [
        "Runtime in seconds; PDD columns are (train)+(inference)",
        " | ".join(h.ljust(w) for h, w in zip(header, widths)),
        "-+-".join("-" * w for w in widths),
        " | ".join(c.ljust(w) for c, w in zip(row, widths)),
        "",
        f"Agreement with reference {report['reference']}",
    ]
    rows = [("method", "R2", "spearman", "model calls")]
    for e in report["methods"]:
        if e["status"] != "ok":
            rows.append((e["label"], "FAILED", "", e.get("error", "")))
            continue
        ag = e.get("agreement")
        r2 = "ref" if e["label"] == report["reference"] else (_fmt(ag["r2"]) if ag else "n/a")
        rho = "ref" if e["label"] == report["reference"] else (_fmt(ag["spearman"]) if ag else "n/a")
        rows.append((e["label"], r2, rho, str(e["model_call_count"])))
    widths = [max(len(r[i]) for r in rows) for i in range(4)]
    for r in rows:
        lines.append("  ".join(c.ljust(w) for c, w in zip(r, widths)).rstrip())
    return "\n".join(lines) + "\n"


def _fmt(v) -> str:
    return "nan" if v is None else f"{v:.4f}"


def write_report(report: dict, output_dir) -> None:
    os.makedirs(output_dir, exist_ok=True)
    doc = {k: v for k, v in report.items() if k != "results"}
    with open(os.path.join(output_dir, "report.json"), "w", encoding="utf-8") as fh:
        json.dump(_jsonable_tree(doc), fh, indent=2)
        fh.write("\n")
    with open(os.path.join(output_dir, "report.txt"), "w", encoding="utf-8") as fh:
        fh.write(format_table(report))
    with open(os.path.join(output_dir, "agreement.csv"), "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh)
        w.writerow(["method", "status", "r2", "spearman", "train_time", "inference_time", "model_calls"])
        for e in report["methods"]:
            ag = e.get("agreement") or {}
            w.writerow([
                e["label"], e["status"], ag.get("r2", ""), ag.get("spearman", ""),
                e.get("train_time", ""), e.get("inference_time", ""), e.get("model_call_count", ""),
            ])


def _jsonable_tree(obj):
    if isinstance(obj, dict):
        return {str(k): _jsonable_tree(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple, np.ndarray)):
        return [_jsonable_tree(v) for v in obj]
    return _jsonable(obj)
