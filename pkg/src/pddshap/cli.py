"""Command-line interface.

Exit codes: 0 success, 1 usage error, 2 data error, 3 model-communication
error. Logs and timings go to stderr; data goes to ``--out`` or stdout.
"""
from __future__ import annotations

import argparse
import contextlib
import csv
import json
import logging
import sys
import time
from typing import Optional, Sequence

import numpy as np

from . import __version__
from .attribution_io import read_attributions, write_attributions
from .bench import BenchConfig, DataError, agreement, format_table, load_csv, run_benchmark, sample_background
from .core import InputError, ModelError, SampleMatrix
from .models import resolve_model
from .pdd import FORMAT_VERSION, SurrogateLoadError, component_variances, load_surrogate, save_surrogate, train_pdd
from .protocol import format_float
from .shapley import MAX_EXACT_FEATURES, explain_batch, pdd_shapley_matrix

logger = logging.getLogger("pddshap")

EXIT_OK, EXIT_USAGE, EXIT_DATA, EXIT_MODEL = 0, 1, 2, 3


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        raise UsageError(f"{self.prog}: {message}")


def _positive(name):
    def parse(text):
        try:
            v = int(text)
        except ValueError:
            raise argparse.ArgumentTypeError(f"{name} must be an integer, got {text!r}") from None
        if v < 1:
            raise argparse.ArgumentTypeError(f"{name} must be >= 1, got {v}")
        return v

    return parse


@contextlib.contextmanager
def _output(path: Optional[str]):
    if path is None or path == "-":
        yield sys.stdout
        sys.stdout.flush()
    else:
        with open(path, "w", newline="", encoding="utf-8") as fh:
            yield fh


def _background(X: SampleMatrix, size: int, seed: int) -> SampleMatrix:
    # with a background at least as large as the data, keep the rows as given
    if size >= X.rows:
        return X
    return sample_background(X, size, seed)


def _load_instances(path: str, target: Optional[str], d: int):
    try:
        X, _ = load_csv(path, target, allow_empty=True)
    except DataError as exc:
        if "is empty" in str(exc):
            return np.zeros((0, d)), None
        raise
    if X.cols != d:
        raise DataError(f"{path} has {X.cols} feature columns, the surrogate expects {d}")
    return X.values, X.column_names


def cmd_train(args) -> int:
    X, _ = load_csv(args.data, args.target)
    bg = _background(X, args.background_size, args.seed)
    if args.order > X.cols:
        raise UsageError(f"--order {args.order} exceeds the {X.cols} features in {args.data}")
    params = {}
    if args.regressor == "tree":
        params = {"max_depth": args.max_depth, "min_samples_leaf": args.min_samples_leaf}
    model = resolve_model(args.model)
    try:
        s = train_pdd(
            model, bg, args.order, args.regressor, params,
            inner_sample=args.inner_sample, seed=args.seed, n_jobs=args.jobs,
        )
    finally:
        if hasattr(model, "close"):
            model.close()
    save_surrogate(s, args.out)
    logger.info(
        "trained %d components in %.3f s using %d model evaluations",
        len(s.components), s.info["train_time"], s.info["model_evaluations"],
    )
    return EXIT_OK


def cmd_explain(args) -> int:
    s = load_surrogate(args.surrogate)
    X, names = _load_instances(args.data, args.target, s.d)
    names = names or s.feature_names or tuple(f"x{j}" for j in range(s.d))
    t0 = time.perf_counter()
    phi = pdd_shapley_matrix(s, X) if len(X) else np.zeros((0, s.d))
    elapsed = time.perf_counter() - t0
    meta = {"method": "pdd", "k": s.k, "seed": None, "n_model_calls": 0}
    if args.timing:
        meta["wall_time_ms"] = 1e3 * elapsed
    rows = ((i, s.f_empty, phi[i]) for i in range(len(X)))
    with _output(args.out) as fh:
        n = write_attributions(fh, args.format, names, rows, meta)
    if n:
        logger.info("explained %d instances, mean latency %.3g ms per instance", n, 1e3 * elapsed / n)
    else:
        logger.info("no instances to explain")
    return EXIT_OK


def cmd_effects(args) -> int:
    s = load_surrogate(args.surrogate)
    X, names = _load_instances(args.data, args.target, s.d)
    if len(X) == 0:
        raise DataError(f"{args.data} has no rows to estimate variances on")
    names = names or s.feature_names or tuple(f"x{j}" for j in range(s.d))
    rep = component_variances(s, X)
    effects = rep.shapley_effects(s.d)
    with _output(args.out) as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["kind", "name", "value"])
        for j, name in enumerate(names):
            w.writerow(["feature", name, format_float(effects[j])])
        for u, var in rep.per_subset.items():
            w.writerow(["subset", "+".join(names[j] for j in u), format_float(var)])
        w.writerow(["total", "", format_float(rep.total)])
    return EXIT_OK


def _cmd_attribute(args, default_method: str) -> int:
    method = args.method or default_method
    X, _ = load_csv(args.data, args.target)
    if args.bg:
        bg, _ = load_csv(args.bg, args.target)
    else:
        bg = _background(X, args.background_size, args.seed)
    if bg.cols != X.cols:
        raise DataError(f"background has {bg.cols} features, data has {X.cols}")
    if method == "exact" and X.cols > MAX_EXACT_FEATURES:
        raise UsageError(
            f"exact attribution enumerates 2**d coalitions and is limited to d <= {MAX_EXACT_FEATURES} "
            f"(got d={X.cols}); use --method subset or --method antithetic with a --budget"
        )
    if method != "exact" and args.budget is None:
        raise UsageError(f"--method {method} needs --budget")
    model = resolve_model(args.model)
    try:
        t0 = time.perf_counter()
        phi, base, calls = explain_batch(method, model, X, bg, budget=args.budget, seed=args.seed)
        elapsed = time.perf_counter() - t0
    finally:
        if hasattr(model, "close"):
            model.close()
    meta = {"method": method, "k": None, "seed": args.seed, "n_model_calls": int(calls), "budget": args.budget}
    if args.timing:
        meta["wall_time_ms"] = 1e3 * elapsed
    rows = ((i, base[i], phi[i]) for i in range(len(phi)))
    with _output(args.out) as fh:
        write_attributions(fh, args.format, X.feature_names(), rows, meta)
    logger.info("%s: %d instances, %d model evaluations, %.3f s", method, len(phi), calls, elapsed)
    return EXIT_OK


def cmd_oracle(args) -> int:
    return _cmd_attribute(args, "exact")


def cmd_sample(args) -> int:
    return _cmd_attribute(args, "subset")


def cmd_compare(args) -> int:
    rnames, _, ref = read_attributions(args.reference)
    cnames, _, cand = read_attributions(args.candidate)
    if ref.shape != cand.shape:
        raise DataError(f"shape mismatch: reference {ref.shape} vs candidate {cand.shape}")
    try:
        rep = agreement(ref, cand)
    except InputError as exc:
        raise DataError(str(exc)) from None
    lines = [f"r2 {rep.r2:.6f}", f"spearman {rep.spearman:.6f}", "feature r2 spearman"]
    for name, r2, rho in zip(rnames, rep.per_feature_r2, rep.per_feature_spearman):
        lines.append(f"{name} {r2:.6f} {rho:.6f}")
    print("\n".join(lines))
    if args.out:
        with open(args.out, "w", encoding="utf-8") as fh:
            json.dump(dict(rep.to_dict(), features=rnames), fh, indent=2)
            fh.write("\n")
    return EXIT_OK


def cmd_bench(args) -> int:
    config = BenchConfig.load(args.config)
    report = run_benchmark(config)
    sys.stderr.write(format_table(report))
    ok = [e for e in report["methods"] if e["status"] == "ok"]
    return EXIT_OK if ok else EXIT_DATA


def build_parser() -> argparse.ArgumentParser:
    p = _Parser(prog="pddshap", description="Shapley values from a partial dependence decomposition surrogate.")
    p.add_argument("--version", action="version",
                   version=f"pddshap {__version__} (surrogate format {FORMAT_VERSION})")
    p.add_argument("-v", "--verbose", action="store_true", help="debug logging")
    sub = p.add_subparsers(dest="command", required=True, parser_class=_Parser)

    t = sub.add_parser("train", help="fit a surrogate to a black-box model")
    t.add_argument("--data", required=True)
    t.add_argument("--target", help="column to drop from the features")
    t.add_argument("--model", required=True,
                   help="builtin (linear:a1,..,ad | interaction2:a,b,c | friedman1) or a shell command")
    t.add_argument("--order", "-k", type=_positive("--order"), default=2)
    t.add_argument("--regressor", choices=["tree", "lookup"], default="tree")
    t.add_argument("--max-depth", type=int, default=6)
    t.add_argument("--min-samples-leaf", type=_positive("--min-samples-leaf"), default=2)
    t.add_argument("--background-size", type=_positive("--background-size"), default=100)
    t.add_argument("--inner-sample", type=_positive("--inner-sample"), default=None,
                   help="subsample the background for the inner average")
    t.add_argument("--seed", type=int, default=0)
    t.add_argument("--jobs", type=_positive("--jobs"), default=1)
    t.add_argument("--out", required=True)
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("explain", help="attribute instances with a trained surrogate")
    e.add_argument("--surrogate", required=True)
    e.add_argument("--data", required=True)
    e.add_argument("--target")
    e.add_argument("--out")
    e.add_argument("--format", choices=["csv", "structured"], default="csv")
    e.add_argument("--timing", action="store_true", help="record wall time in structured output")
    e.set_defaults(func=cmd_explain)

    f = sub.add_parser("effects", help="global Shapley effects and component variances")
    f.add_argument("--surrogate", required=True)
    f.add_argument("--data", required=True)
    f.add_argument("--target")
    f.add_argument("--out")
    f.set_defaults(func=cmd_effects)

    for name, func, default in (("oracle", cmd_oracle, "exact"), ("sample", cmd_sample, "subset")):
        o = sub.add_parser(name, help=f"model-based attribution (default method: {default})")
        o.add_argument("--model", required=True)
        o.add_argument("--data", required=True)
        o.add_argument("--target")
        o.add_argument("--bg", help="background CSV; default samples --background-size rows of --data")
        o.add_argument("--background-size", type=_positive("--background-size"), default=100)
        o.add_argument("--method", choices=["exact", "subset", "antithetic"])
        o.add_argument("--budget", type=_positive("--budget"),
                       help="samples per feature (subset) or permutation pairs (antithetic)")
        o.add_argument("--seed", type=int, default=0)
        o.add_argument("--out")
        o.add_argument("--format", choices=["csv", "structured"], default="csv")
        o.add_argument("--timing", action="store_true")
        o.set_defaults(func=func)

    c = sub.add_parser("compare", help="R^2 and Spearman between two attribution files")
    c.add_argument("--reference", required=True)
    c.add_argument("--candidate", required=True)
    c.add_argument("--out")
    c.set_defaults(func=cmd_compare)

    b = sub.add_parser("bench", help="run a benchmark described by a JSON config")
    b.add_argument("--config", required=True)
    b.set_defaults(func=cmd_bench)
    return p


def main(argv: Optional[Sequence[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        sys.stderr.write(f"{exc}\n")
        return EXIT_USAGE
    except SystemExit as exc:  # --help / --version
        return int(exc.code or 0)
    logging.basicConfig(
        level=logging.DEBUG if args.verbose else logging.INFO,
        format="%(levelname)s %(name)s: %(message)s",
        stream=sys.stderr,
        force=True,
    )
    try:
        return args.func(args)
    except UsageError as exc:
        logger.error("%s", exc)
        return EXIT_USAGE
    except ModelError as exc:
        logger.error("model error: %s", exc)
        if exc.payload is not None:
            logger.error("offending payload: %r", exc.payload)
        return EXIT_MODEL
    except (SurrogateLoadError, InputError) as exc:
        logger.error("%s", exc)
        return EXIT_DATA


if __name__ == "__main__":
    sys.exit(main())
