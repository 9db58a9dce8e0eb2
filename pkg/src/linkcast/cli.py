"""Pipeline command line: synth / split / run / eval / forecast-dump.

Exit codes: 0 success, 2 configuration error, 3 numerical failure,
4 I/O error. Reports are deterministic JSON (no timestamps), so reruns with
the same configuration and seed are byte-identical. If a command fails after
writing some artifacts, the files already written are renamed with a
``.partial`` suffix.
"""

from __future__ import annotations

import argparse
import json
import sys
from pathlib import Path

import numpy as np

from . import __version__
from .collapse import collapse_ct, collapse_cwt
from .cp import cp_als, cp_heuristic_scores, load_kruskal, save_kruskal
from .evaluation import binarize_test, evaluate, new_link_filter, write_roc_csv
from .holtwinters import HoltWintersParams, cp_forecast_scores, holt_winters_forecast
from .scores import (
    DenseScores,
    ensemble_scores,
    katz_scores_exact,
    save_score_report,
    top_k_scores,
    tkatz_scores,
    tsvd_scores,
)
from .simulate import SynthConfig, generate, last_period_scores
from .svd import SvdConvergenceError, load_svd, save_svd, truncated_svd
from .tensor import CooParseError, SparseTensor3, load_coo, log_preprocess, save_coo

METHODS = (
    "tsvd-ct", "tsvd-cwt", "tkatz-ct", "tkatz-cwt", "katz-ct", "katz-cwt",
    "cp-heuristic", "cp-forecast", "last-period",
)

EXIT_OK = 0
EXIT_CONFIG = 2
EXIT_NUMERICAL = 3
EXIT_IO = 4


class _ArtifactWriter:
    """Tracks written files so a failed run can flag them as partial."""

    def __init__(self, outdir: Path):
        self.outdir = outdir
        self.written = []

    def path(self, name):
        self.outdir.mkdir(parents=True, exist_ok=True)
        p = self.outdir / name
        self.written.append(p)
        return p

    def flag_partial(self):
        for p in self.written:
            if p.exists():
                p.rename(p.with_name(p.name + ".partial"))


def _parse_int_list(text):
    return [int(v) for v in text.split(",") if v.strip()]


def _parse_dims(text):
    parts = _parse_int_list(text)
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(f"dims must be M,N,T, got {text!r}")
    return tuple(parts)


def _parse_hw(text):
    parts = [float(v) for v in text.split(",")]
    if len(parts) != 3:
        raise argparse.ArgumentTypeError(
            f"--hw-params needs alpha,trend,season, got {text!r}"
        )
    return parts


def _json_dump(obj, path):
    with open(path, "w", encoding="utf-8", newline="\n") as fh:
        json.dump(obj, fh, indent=2, sort_keys=True)
        fh.write("\n")


def build_parser():
    parser = argparse.ArgumentParser(
        prog="linkcast",
        description="Temporal link prediction pipeline",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p_synth = sub.add_parser("synth", help="generate synthetic periodic link data")
    p_synth.add_argument("--out", required=True, type=Path)
    p_synth.add_argument("--entities", type=int, default=500,
                         help="row entity count M")
    p_synth.add_argument("--items", type=int, default=400,
                         help="column entity count N")
    p_synth.add_argument("--components", type=int, default=10)
    p_synth.add_argument("--period", type=int, default=7)
    p_synth.add_argument("--train-periods", type=int, default=10)
    p_synth.add_argument("--p-top", type=float, default=0.25)
    p_synth.add_argument("--p-swap", type=float, default=0.5)
    p_synth.add_argument("--p-rand", type=float, default=0.1)
    p_synth.add_argument("--temporal-noise", type=float, default=0.1)
    p_synth.add_argument("--seed", type=int, default=0)
    p_synth.add_argument("--templates", type=Path, default=None,
                         help="JSON file with a 'templates' array overriding the defaults")

    p_split = sub.add_parser("split", help="sliding-window train/test split")
    p_split.add_argument("--input", required=True, type=Path)
    p_split.add_argument("--train-len", required=True, type=int)
    p_split.add_argument("--start", type=int, default=0,
                         help="first time step of the training window")
    p_split.add_argument("--test-len", type=int, default=None,
                         help="test window length (default: everything after training)")
    p_split.add_argument("--out", required=True, type=Path)
    p_split.add_argument("--dims", type=_parse_dims, default=None)
    p_split.add_argument("--min-row-weight", type=float, default=None,
                         help="drop rows whose total training weight is below this")

    p_run = sub.add_parser("run", help="fit, score, and evaluate one method")
    _add_run_args(p_run)

    p_eval = sub.add_parser("eval", help="evaluate a saved model against test data")
    p_eval.add_argument("--model", required=True, type=Path,
                        help="saved SVD factor directory or CP model file")
    p_eval.add_argument("--method", required=True, choices=METHODS)
    p_eval.add_argument("--train", type=Path, default=None,
                        help="training tensor (needed for protocol=new or last-period)")
    p_eval.add_argument("--test", required=True, type=Path)
    p_eval.add_argument("--out", required=True, type=Path)
    p_eval.add_argument("--dims-train", type=_parse_dims, default=None)
    p_eval.add_argument("--dims-test", type=_parse_dims, default=None)
    p_eval.add_argument("--ranks", type=_parse_int_list, default=None)
    p_eval.add_argument("--beta", type=float, default=0.001)
    p_eval.add_argument("--t0", type=int, default=3)
    p_eval.add_argument("--period", type=int, default=7)
    p_eval.add_argument("--hw-params", type=_parse_hw, default=[0.2, 0.2, 0.2])
    p_eval.add_argument("--protocol", choices=("all", "new"), default="all")
    p_eval.add_argument("--top-k", type=int, default=1000)

    p_dump = sub.add_parser(
        "forecast-dump",
        help="forecast each temporal component of a saved CP model to CSV",
    )
    p_dump.add_argument("--model", required=True, type=Path)
    p_dump.add_argument("--out", required=True, type=Path)
    p_dump.add_argument("--forecast", choices=("holt-winters",),
                        default="holt-winters")
    p_dump.add_argument("--period", type=int, default=7)
    p_dump.add_argument("--hw-params", type=_parse_hw, default=[0.2, 0.2, 0.2])
    return parser


def _add_run_args(p):
    p.add_argument("--method", required=True,
                   choices=METHODS + ("tsvd", "tkatz", "katz"),
                   help="method name; bare tsvd/tkatz/katz combine with --collapse")
    p.add_argument("--collapse", choices=("ct", "cwt"), default="cwt")
    p.add_argument("--train", type=Path, default=None)
    p.add_argument("--test", type=Path, default=None)
    p.add_argument("--input", type=Path, default=None,
                   help="single tensor split inline with --train-len")
    p.add_argument("--train-len", type=int, default=None)
    p.add_argument("--dims", type=_parse_dims, default=None)
    p.add_argument("--dims-train", type=_parse_dims, default=None)
    p.add_argument("--dims-test", type=_parse_dims, default=None)
    p.add_argument("--out", required=True, type=Path)
    p.add_argument("--log-preprocess", action="store_true",
                   help="apply 1 + ln(count) to training and test values first")
    p.add_argument("--ranks", type=_parse_int_list,
                   default=list(range(10, 101, 10)))
    p.add_argument("--cp-rank", type=int, default=10,
                   help="rank for cp-forecast (cp-heuristic uses --ranks)")
    p.add_argument("--beta", type=float, default=0.001)
    p.add_argument("--theta", type=float, default=0.2)
    p.add_argument("--t0", type=int, default=3)
    p.add_argument("--period", type=int, default=7)
    p.add_argument("--forecast", choices=("holt-winters",), default="holt-winters")
    p.add_argument("--hw-params", type=_parse_hw, default=[0.2, 0.2, 0.2])
    p.add_argument("--tol", type=float, default=1e-6)
    p.add_argument("--max-iter", type=int, default=500)
    p.add_argument("--protocol", choices=("all", "new"), default="all")
    p.add_argument("--top-k", type=int, default=1000)
    p.add_argument("--seed", type=int, default=0)


def cmd_synth(args):
    templates = None
    if args.templates is not None:
        with open(args.templates, "r", encoding="utf-8") as fh:
            templates = np.asarray(json.load(fh)["templates"], dtype=np.float64)
    config = SynthConfig(
        M=args.entities, N=args.items, K=args.components, L=args.period,
        P=args.train_periods, p_top=args.p_top, p_swap=args.p_swap,
        p_rand=args.p_rand, temporal_noise=args.temporal_noise,
        seed=args.seed, templates=templates,
    )
    writer = _ArtifactWriter(args.out)
    try:
        inst = generate(config)
        save_coo(inst.z_train, writer.path("z_train.coo"))
        save_coo(inst.z_test, writer.path("z_test.coo"))
        save_kruskal(inst.planted, writer.path("planted_model.txt"))
        manifest = config.manifest()
        manifest["trend_modes"] = list(inst.trend_modes)
        manifest["membership_histogram"] = {
            "rows": np.bincount((inst.planted.A != 0).sum(axis=1)).tolist(),
            "cols": np.bincount((inst.planted.B != 0).sum(axis=1)).tolist(),
        }
        manifest["schema"] = 1
        _json_dump(manifest, writer.path("manifest.json"))
    except Exception:
        writer.flag_partial()
        raise
    return EXIT_OK


def cmd_split(args):
    z = load_coo(args.input, dims=args.dims)
    M, N, T = z.dims
    start = args.start
    train_end = start + args.train_len
    test_end = T if args.test_len is None else train_end + args.test_len
    if not (0 <= start and start < train_end < test_end <= T):
        raise ValueError(
            f"window [{start}, {train_end}) + test [{train_end}, {test_end}) "
            f"does not fit in T={T}"
        )
    z_train = z.time_window(start, train_end)
    z_test = z.time_window(train_end, test_end)
    row_map = np.arange(M)
    col_map = np.arange(N)
    if args.min_row_weight is not None:
        totals = np.zeros(M)
        np.add.at(totals, z_train.i, z_train.values)
        keep_rows = np.flatnonzero(totals >= args.min_row_weight)
        col_seen = np.zeros(N, dtype=bool)
        col_seen[z_train.j[np.isin(z_train.i, keep_rows)]] = True
        keep_cols = np.flatnonzero(col_seen)
        z_train = _reindex(z_train, keep_rows, keep_cols)
        z_test = _reindex(z_test, keep_rows, keep_cols)
        row_map, col_map = keep_rows, col_map[keep_cols]
    writer = _ArtifactWriter(args.out)
    try:
        save_coo(z_train, writer.path("z_train.coo"))
        save_coo(z_test, writer.path("z_test.coo"))
        _json_dump(
            {
                "schema": 1,
                "start": start,
                "train_len": args.train_len,
                "test_len": z_test.dims[2],
                "dims_input": list(z.dims),
                "dims_train": list(z_train.dims),
                "dims_test": list(z_test.dims),
                "min_row_weight": args.min_row_weight,
                "kept_rows": row_map.tolist(),
                "kept_cols": col_map.tolist(),
            },
            writer.path("split.json"),
        )
    except Exception:
        writer.flag_partial()
        raise
    return EXIT_OK


def _reindex(z: SparseTensor3, keep_rows, keep_cols):
    M, N, T = z.dims
    row_ok = np.zeros(M, dtype=bool)
    row_ok[keep_rows] = True
    col_ok = np.zeros(N, dtype=bool)
    col_ok[keep_cols] = True
    mask = row_ok[z.i] & col_ok[z.j]
    row_new = np.full(M, -1)
    row_new[keep_rows] = np.arange(len(keep_rows))
    col_new = np.full(N, -1)
    col_new[keep_cols] = np.arange(len(keep_cols))
    return SparseTensor3.from_coords(
        (len(keep_rows), len(keep_cols), T),
        row_new[z.i[mask]], col_new[z.j[mask]], z.t[mask], z.values[mask],
    )


def _load_train_test(args):
    if args.input is not None:
        if args.train_len is None:
            raise ValueError("--input requires --train-len")
        z = load_coo(args.input, dims=args.dims)
        if not 1 <= args.train_len < z.dims[2]:
            raise ValueError(
                f"--train-len must be in [1, {z.dims[2] - 1}], got {args.train_len}"
            )
        return z.time_window(0, args.train_len), z.time_window(
            args.train_len, z.dims[2]
        )
    if args.train is None or args.test is None:
        raise ValueError("provide either --train and --test, or --input with --train-len")
    z_train = load_coo(args.train, dims=args.dims_train)
    dims_test = args.dims_test
    z_test = load_coo(args.test, dims=dims_test)
    if z_test.dims[:2] != z_train.dims[:2]:
        # align the pair grid when the test file does not mention every entity
        M = max(z_train.dims[0], z_test.dims[0])
        N = max(z_train.dims[1], z_test.dims[1])
        z_train = SparseTensor3.from_coords(
            (M, N, z_train.dims[2]), z_train.i, z_train.j, z_train.t,
            z_train.values,
        )
        z_test = SparseTensor3.from_coords(
            (M, N, z_test.dims[2]), z_test.i, z_test.j, z_test.t, z_test.values,
        )
    return z_train, z_test


def _fit_and_score(args, z_train, writer):
    """Returns (scorers, labels_builder) for the chosen method."""
    method = args.method
    if method in ("tsvd", "tkatz", "katz"):
        method = f"{method}-{args.collapse}"
    family, _, collapse_kind = method.partition("-")

    if family in ("tsvd", "tkatz", "katz"):
        x = collapse_ct(z_train) if collapse_kind == "ct" else collapse_cwt(
            z_train, args.theta
        )
        if family == "katz":
            dense = katz_scores_exact(x, args.beta)
            return [DenseScores(dense)]
        ranks = sorted(set(args.ranks))
        kmax = min(ranks[-1], min(x.shape))
        factors = truncated_svd(x, kmax, seed=args.seed)
        save_svd(factors, writer.path("svd_factors"))
        usable = [r for r in ranks if r <= factors.rank]
        if not usable:
            raise ValueError(
                f"collapsed matrix rank {factors.rank} below requested ranks {ranks}"
            )
        if family == "tsvd":
            members = [tsvd_scores(factors, r) for r in usable]
        else:
            members = [tkatz_scores(factors, r, args.beta) for r in usable]
        return [ensemble_scores(members)]

    if method == "cp-heuristic":
        members = []
        for idx, r in enumerate(sorted(set(args.ranks))):
            model, _ = cp_als(z_train, r, seed=args.seed, tol=args.tol,
                              max_iter=args.max_iter)
            if idx == 0:
                save_kruskal(model, writer.path("cp_model.txt"))
            members.append(cp_heuristic_scores(model, args.t0))
        return [ensemble_scores(members)]

    if method == "cp-forecast":
        model, _ = cp_als(z_train, args.cp_rank, seed=args.seed, tol=args.tol,
                          max_iter=args.max_iter)
        save_kruskal(model, writer.path("cp_model.txt"))
        hw = HoltWintersParams(
            alpha=args.hw_params[0], gamma_trend=args.hw_params[1],
            delta_season=args.hw_params[2], period=args.period,
        )
        return cp_forecast_scores(model, hw)

    if method == "last-period":
        return last_period_scores(z_train, args.period)

    raise ValueError(f"unknown method {method!r}")


def _effective_top_k(k, labels):
    universe = (
        labels.n_universe
        if not isinstance(labels, list)
        else sum(lp.n_universe for lp in labels)
    )
    return min(k, universe)


def _labels_for(scorers, z_test, z_train, protocol):
    labels = binarize_test(z_test)
    if isinstance(labels, list):
        if len(scorers) == 1:
            if len(labels) != 1:
                raise ValueError(
                    f"single-step method but test tensor has {len(labels)} "
                    "slices; split differently or use cp-forecast/last-period"
                )
            labels = labels[0]
        elif len(labels) != len(scorers):
            raise ValueError(
                f"{len(scorers)} prediction steps vs {len(labels)} test slices"
            )
    if protocol == "new":
        labels = new_link_filter(labels, z_train)
    return labels


def _expected_steps(args):
    method = args.method
    if method in ("tsvd", "tkatz", "katz"):
        method = f"{method}-{args.collapse}"
    return args.period if method in ("cp-forecast", "last-period") else 1


def cmd_run(args):
    z_train, z_test = _load_train_test(args)
    steps = _expected_steps(args)
    if z_test.dims[2] != steps:
        raise ValueError(
            f"method {args.method} predicts {steps} step(s) but the test "
            f"tensor has {z_test.dims[2]} slices"
        )
    if args.log_preprocess:
        z_train = log_preprocess(z_train)
        z_test = log_preprocess(z_test)
    writer = _ArtifactWriter(args.out)
    try:
        scorers = _fit_and_score(args, z_train, writer)
        labels = _labels_for(scorers, z_test, z_train, args.protocol)
        single = not isinstance(labels, list)
        k_eff = _effective_top_k(args.top_k, labels)
        report = evaluate(
            scorers[0] if single else scorers,
            labels,
            k=k_eff,
            protocol=args.protocol,
        )
        write_roc_csv(writer.path("roc.csv"), report.roc)
        k_scores = min(args.top_k, int(np.prod(scorers[0].shape)))
        if single:
            ranked = top_k_scores(scorers[0], k_scores)
            save_score_report(writer.path("scores.txt"), scorers[0].shape, ranked)
        else:
            for step, scorer in enumerate(scorers, start=1):
                ranked = top_k_scores(scorer, k_scores)
                save_score_report(
                    writer.path(f"scores_step{step}.txt"), scorer.shape, ranked
                )
        payload = {
            "schema": 1,
            "method": args.method,
            "results": report.as_dict(),
            "config": _effective_config(args, z_train, z_test),
        }
        _json_dump(payload, writer.path("report.json"))
        print(json.dumps(payload["results"], sort_keys=True))
    except Exception:
        writer.flag_partial()
        raise
    return EXIT_OK


def _effective_config(args, z_train, z_test):
    cfg = {
        "method": args.method,
        "collapse": args.collapse,
        "theta": args.theta,
        "beta": args.beta,
        "ranks": sorted(set(args.ranks)) if args.ranks else None,
        "cp_rank": getattr(args, "cp_rank", None),
        "t0": args.t0,
        "period": args.period,
        "hw_params": list(args.hw_params),
        "tol": getattr(args, "tol", None),
        "max_iter": getattr(args, "max_iter", None),
        "protocol": args.protocol,
        "top_k": args.top_k,
        "seed": getattr(args, "seed", None),
        "log_preprocess": getattr(args, "log_preprocess", False),
        "dims_train": list(z_train.dims),
        "dims_test": list(z_test.dims),
    }
    for key in ("train", "test", "input"):
        val = getattr(args, key, None)
        cfg[key] = str(val) if val is not None else None
    cfg["train_len"] = getattr(args, "train_len", None)
    return cfg


def cmd_eval(args):
    z_test = load_coo(args.test, dims=args.dims_test)
    z_train = None
    if args.train is not None:
        z_train = load_coo(args.train, dims=args.dims_train)
    if args.protocol == "new" and z_train is None:
        raise ValueError("protocol 'new' needs --train to identify seen links")
    family = args.method.split("-")[0]
    if family in ("tsvd", "tkatz"):
        factors = load_svd(args.model)
        ranks = args.ranks or [factors.rank]
        usable = [r for r in sorted(set(ranks)) if r <= factors.rank]
        if family == "tsvd":
            members = [tsvd_scores(factors, r) for r in usable]
        else:
            members = [tkatz_scores(factors, r, args.beta) for r in usable]
        scorers = [ensemble_scores(members)]
    elif args.method == "cp-heuristic":
        model = load_kruskal(args.model)
        scorers = [ensemble_scores([cp_heuristic_scores(model, args.t0)])]
    elif args.method == "cp-forecast":
        model = load_kruskal(args.model)
        hw = HoltWintersParams(
            alpha=args.hw_params[0], gamma_trend=args.hw_params[1],
            delta_season=args.hw_params[2], period=args.period,
        )
        scorers = cp_forecast_scores(model, hw)
    elif args.method == "last-period":
        if z_train is None:
            raise ValueError("last-period evaluation needs --train")
        scorers = last_period_scores(z_train, args.period)
    else:
        raise ValueError(f"cannot evaluate method {args.method!r} from saved model")
    labels = _labels_for(scorers, z_test, z_train, args.protocol)
    single = not isinstance(labels, list)
    report = evaluate(
        scorers[0] if single else scorers, labels,
        k=_effective_top_k(args.top_k, labels), protocol=args.protocol,
    )
    writer = _ArtifactWriter(args.out)
    try:
        write_roc_csv(writer.path("roc.csv"), report.roc)
        payload = {
            "schema": 1,
            "method": args.method,
            "results": report.as_dict(),
            "config": {
                "model": str(args.model),
                "test": str(args.test),
                "train": str(args.train) if args.train else None,
                "protocol": args.protocol,
                "top_k": args.top_k,
                "beta": args.beta,
                "ranks": args.ranks,
                "t0": args.t0,
                "period": args.period,
                "hw_params": list(args.hw_params),
            },
        }
        _json_dump(payload, writer.path("report.json"))
        print(json.dumps(payload["results"], sort_keys=True))
    except Exception:
        writer.flag_partial()
        raise
    return EXIT_OK


def cmd_forecast_dump(args):
    model = load_kruskal(args.model)
    hw = HoltWintersParams(
        alpha=args.hw_params[0], gamma_trend=args.hw_params[1],
        delta_season=args.hw_params[2], period=args.period,
    )
    with open(args.out, "w", encoding="utf-8", newline="\n") as fh:
        fh.write("component,step,value\n")
        for k in range(model.rank):
            fc = holt_winters_forecast(model.C[:, k] * model.lam[k], hw)
            for step, value in enumerate(fc.forecast, start=1):
                fh.write(f"{k + 1},{step},{value:.17g}\n")
    return EXIT_OK


_COMMANDS = {
    "synth": cmd_synth,
    "split": cmd_split,
    "run": cmd_run,
    "eval": cmd_eval,
    "forecast-dump": cmd_forecast_dump,
}


def main(argv=None):
    parser = build_parser()
    args = parser.parse_args(argv)
    try:
        return _COMMANDS[args.command](args)
    except (SvdConvergenceError, np.linalg.LinAlgError, FloatingPointError) as exc:
        print(f"numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except (CooParseError, OSError) as exc:
        print(f"i/o error: {exc}", file=sys.stderr)
        return EXIT_IO
    except (ValueError, TypeError, IndexError) as exc:
        print(f"configuration error: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    sys.exit(main())
