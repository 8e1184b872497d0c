"""Command-line surface: loss benchmarking, synthetic training, score-file
evaluation, and hyperparameter sweeps.

Exit codes: 0 success, 2 usage or config error, 3 numeric failure (NaN abort
or an oracle mismatch under --verify). With --deterministic and --seed, any
command writes byte-identical reports across runs; numeric thread pools are
pinned to one thread before numpy loads, and wall-clock fields are nulled.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time

BENCH_LOSSES = ("quadlinear", "smooth", "heaviside", "triplet", "contrastive")


def _default_out_dir() -> str:
    return os.environ.get("APRANKING_OUT_DIR", "apranking-out")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="apranking",
        description=(
            "Average-precision-oriented ranking toolkit: listwise surrogate "
            "losses, top-K sequence similarity, exact AP metrics, and a "
            "synthetic trainer."
        ),
    )
    sub = parser.add_subparsers(dest="command", required=True)

    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--out", default=None, help="output directory (default: $APRANKING_OUT_DIR or ./apranking-out)")
    common.add_argument("--seed", type=int, default=0, help="random seed")
    common.add_argument(
        "--deterministic",
        action="store_true",
        help="single-threaded numerics and reproducible, byte-identical reports",
    )

    bench = sub.add_parser(
        "bench-loss",
        parents=[common],
        help="emit value/gradient curves over a score-gap sweep and run the gradient-vanishing contrast check",
        description=(
            "For each loss, write a CSV of the per-pair penalty and its derivative "
            "over a gap sweep x = s_neg - s_pos, plus a JSON summary with the "
            "quad-linear vs sigmoid gradient contrast at x=0.5 and a finite-"
            "difference check on random query contexts. Defaults: delta=0.05, "
            "rho=0.10, tau=0.01, margin=0.2."
        ),
    )
    bench.add_argument("--losses", default="quadlinear,smooth", help=f"comma list from {BENCH_LOSSES}")
    bench.add_argument("--delta", type=float, default=0.05, help="quad-linear margin (default 0.05)")
    bench.add_argument("--rho", type=float, default=0.10, help="positive-pair weight (default 0.10)")
    bench.add_argument("--tau", type=float, default=0.01, help="sigmoid temperature (default 0.01)")
    bench.add_argument("--margin", type=float, default=0.2, help="pairwise-loss margin (default 0.2)")
    bench.add_argument("--seeds", type=int, default=5, help="seeds for the random-context gradient check")
    bench.add_argument("--gap-min", type=float, default=-0.2)
    bench.add_argument("--gap-max", type=float, default=1.0)
    bench.add_argument("--gap-step", type=float, default=0.05)

    trainp = sub.add_parser(
        "train",
        parents=[common],
        help="run synthetic training; with multiple --losses, emit a comparative per-loss report",
        description=(
            "Trains the similarity model on a seeded synthetic corpus and writes a "
            "checkpoint, a per-iteration CSV history, and a JSON run report. With a "
            "comma list in --losses, one model is trained per ranking loss under an "
            "identical budget (frame-level loss disabled) for a side-by-side table."
        ),
    )
    trainp.add_argument("--preset", choices=("easy", "hard"), default="easy")
    trainp.add_argument("--config", default=None, help="JSON config file (overrides --preset)")
    trainp.add_argument("--iterations", type=int, default=None)
    trainp.add_argument("--losses", default=None, help="video ranking loss, or a comma list for a comparative run")
    trainp.add_argument("--lambda-v", dest="lambda_v", type=float, default=None)
    trainp.add_argument("--lambda-f", dest="lambda_f", type=float, default=None)

    evalp = sub.add_parser(
        "eval",
        parents=[common],
        help="compute AP per query, mAP and micro-AP from score files",
        description=(
            "Reads scores and binary labels either from a tensor file holding "
            "'scores' and 'labels' arrays of shape (queries, items) or from a CSV "
            "with query,score,label columns, and writes a JSON metric report. "
            "--verify recomputes every AP with the brute-force oracle."
        ),
    )
    evalp.add_argument("--scores", default=None, help="tensor file with 'scores' and 'labels'")
    evalp.add_argument("--csv", default=None, help="CSV file with query,score,label columns")
    evalp.add_argument("--verify", action="store_true", help="cross-check every AP against the sorted-scan oracle")

    ablate = sub.add_parser(
        "ablate",
        parents=[common],
        help="sweep one hyperparameter axis and tabulate metrics",
        description=(
            "Sweeps k_t/k_s (evaluation only; no training) or delta_v, delta_f, "
            "rho_v, rho_f, lambda_f, rates (one training run per grid value) and "
            "writes a CSV table plus a JSON report. Rates grids use rt:rb pairs."
        ),
    )
    ablate.add_argument("--axis", required=True,
                        choices=("k_t", "k_s", "delta_v", "delta_f", "rho_v", "rho_f", "lambda_f", "rates"))
    ablate.add_argument("--grid", required=True, help="comma-separated grid values")
    ablate.add_argument("--preset", choices=("easy", "hard"), default="easy")
    ablate.add_argument("--config", default=None)
    ablate.add_argument("--iterations", type=int, default=300, help="budget per training run on trained axes")
    ablate.add_argument("--checkpoint", default=None, help="evaluate k-axis sweeps with these trained parameters")

    return parser


# ---------------------------------------------------------------------------
# helpers
# ---------------------------------------------------------------------------


def _ensure_out(args) -> str:
    out = args.out or _default_out_dir()
    os.makedirs(out, exist_ok=True)
    return out


def _stamp(args, extra=None) -> dict:
    from . import __version__

    stamp = {
        "version": __version__,
        "git": _git_rev(),
        "seed": args.seed,
        "deterministic": bool(args.deterministic),
        "command": args.command,
    }
    if extra:
        stamp.update(extra)
    return stamp


def _git_rev() -> str:
    import subprocess

    try:
        rev = subprocess.run(
            ["git", "rev-parse", "--short", "HEAD"],
            capture_output=True, text=True, timeout=5,
            cwd=os.path.dirname(os.path.abspath(__file__)),
        )
        return rev.stdout.strip() or "unknown"
    except Exception:
        return "unknown"


def _wall_clock(args, started: float):
    return None if args.deterministic else time.time() - started


def _load_train_config(args):
    from .errors import ParameterError
    from .trainer import config_from_dict, easy_preset, hard_preset

    if args.config:
        try:
            with open(args.config) as fh:
                payload = json.load(fh)
        except FileNotFoundError:
            raise ParameterError(f"config file not found: {args.config}")
        except json.JSONDecodeError as exc:
            raise ParameterError(f"config file is not valid JSON: {exc}")
        cfg = config_from_dict(payload)
    else:
        cfg = easy_preset(seed=args.seed) if args.preset == "easy" else hard_preset(seed=args.seed)
    overrides = {}
    if args.seed is not None:
        from dataclasses import replace

        overrides["seed"] = args.seed
        cfg = replace(cfg, synthetic=replace(cfg.synthetic, seed=args.seed))
    if getattr(args, "iterations", None) is not None:
        overrides["iterations"] = args.iterations
    if getattr(args, "lambda_v", None) is not None or getattr(args, "lambda_f", None) is not None:
        from dataclasses import replace

        w = cfg.weights
        if args.lambda_v is not None:
            w = replace(w, lambda_v=args.lambda_v)
        if args.lambda_f is not None:
            w = replace(w, lambda_f=args.lambda_f)
        overrides["weights"] = w
    if overrides:
        from dataclasses import replace

        cfg = replace(cfg, **overrides)
    return cfg


_HISTORY_COLUMNS = [
    "iteration", "lr", "total", "loss_video", "loss_frame", "loss_nce", "loss_sshn",
    "heldout_map", "heldout_micro_ap",
]


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------


def cmd_bench_loss(args) -> int:
    import numpy as np

    from . import losses as L
    from .errors import ParameterError
    from .gradcheck import max_gradient_error, random_safe_context
    from .tensorio import write_csv, write_json_report

    started = time.time()
    names = [s.strip() for s in args.losses.split(",") if s.strip()]
    unknown = [n for n in names if n not in BENCH_LOSSES]
    if unknown or not names:
        raise ParameterError(f"unknown loss name(s) {unknown}; choose from {BENCH_LOSSES}")
    out = _ensure_out(args)

    grid = np.arange(args.gap_min, args.gap_max + 1e-12, args.gap_step)
    curve_fns = {
        "quadlinear": lambda x: (L.r_minus(x, args.delta), L.r_minus_grad(x, args.delta)),
        "smooth": lambda x: (L.sigmoid_surrogate(x, args.tau), L.sigmoid_surrogate_grad(x, args.tau)),
        "heaviside": lambda x: (L.r_plus(x), 0.0),
        "triplet": lambda x: (max(0.0, x + args.margin), 1.0 if x + args.margin > 0 else 0.0),
        "contrastive": lambda x: (max(0.0, x - args.margin), 1.0 if x - args.margin > 0 else 0.0),
    }
    files = {}
    for name in names:
        rows = []
        for x in grid:
            v, g = curve_fns[name](float(x))
            rows.append({"x": float(x), "value": float(v), "grad": float(g)})
        path = os.path.join(out, f"loss_curve_{name}.csv")
        write_csv(path, ["x", "value", "grad"], rows)
        files[name] = os.path.basename(path)

    # the headline contrast: constant-slope quad-linear vs vanished sigmoid
    contrast_gap = 0.5
    ql_grad = L.r_minus_grad(contrast_gap, args.delta)
    sg_grad = L.sigmoid_surrogate_grad(contrast_gap, args.tau)
    ratio = float("inf") if sg_grad == 0.0 else ql_grad / sg_grad

    context_losses = {
        "quadlinear": lambda q: L.quadlinear_ap_risk(q, L.QuadLinearParams(args.delta, args.rho)),
        "smooth": lambda q: L.smooth_ap_risk(q, L.SmoothApParams(args.tau)),
        "triplet": lambda q: L.triplet_loss(q, args.margin),
        "contrastive": lambda q: L.contrastive_loss(q, args.margin),
    }
    checks = {}
    for name in names:
        if name not in context_losses:
            continue
        contexts = []
        for s in range(args.seeds):
            rng = np.random.default_rng(args.seed + 1000 * s)
            contexts.append(
                random_safe_context(rng, 3, 5, breakpoints=(0.0, -args.delta, -args.margin)))
        checks[name] = max_gradient_error(context_losses[name], contexts)

    report = _stamp(args, {
        "params": {"delta": args.delta, "rho": args.rho, "tau": args.tau, "margin": args.margin},
        "curves": files,
        "gradient_contrast": {
            "gap": contrast_gap,
            "quadlinear_grad": ql_grad,
            "sigmoid_grad": sg_grad,
            "ratio": ratio,
            "pass": (ratio > 1e15),
        },
        "fd_max_rel_err": checks,
        "wall_clock_seconds": _wall_clock(args, started),
    })
    write_json_report(os.path.join(out, "bench_loss_report.json"), report)
    print(f"bench-loss: wrote {len(files)} curve file(s) to {out}")
    return 0


def _save_model(out: str, tag: str, model, cfg_dict: dict) -> str:
    from .tensorio import write_checkpoint

    tensors = {name: p.value for name, p in model.parameters()}
    path = os.path.join(out, f"checkpoint_{tag}.bin" if tag else "checkpoint.bin")
    write_checkpoint(path, tensors, cfg_dict)
    return path


def cmd_train(args) -> int:
    from dataclasses import replace

    from .tensorio import write_csv, write_json_report
    from .trainer import VIDEO_LOSSES, config_to_dict, train

    started = time.time()
    out = _ensure_out(args)
    cfg = _load_train_config(args)

    losses = None
    if args.losses:
        losses = [s.strip() for s in args.losses.split(",") if s.strip()]
        bad = [l for l in losses if l not in VIDEO_LOSSES]
        if bad:
            from .errors import ParameterError

            raise ParameterError(f"unknown loss name(s) {bad}; choose from {VIDEO_LOSSES}")

    results = {}
    if losses and len(losses) > 1:
        # comparative mode: identical budget, ranking loss only on top of the
        # base loss, so the listwise/pairwise contrast is isolated
        for loss in losses:
            run_cfg = replace(cfg, video_loss=loss, weights=replace(cfg.weights, lambda_f=0.0))
            results[loss] = _run_one(out, loss, run_cfg)
    else:
        if losses:
            cfg = replace(cfg, video_loss=losses[0])
        results[cfg.video_loss] = _run_one(out, "", cfg)

    report = _stamp(args, {
        "config": config_to_dict(cfg),
        "comparative": bool(losses and len(losses) > 1),
        "results": results,
        "wall_clock_seconds": _wall_clock(args, started),
    })
    write_json_report(os.path.join(out, "train_report.json"), report)
    for name, res in results.items():
        print(
            f"train[{name}]: heldout mAP={res['metrics']['map']:.4f} "
            f"microAP={res['metrics']['micro_ap']:.4f}"
        )
    return 0


def _run_one(out: str, tag: str, cfg) -> dict:
    from .tensorio import write_csv
    from .trainer import config_to_dict, train

    result = train(cfg, out_dir=out)
    cfg_dict = config_to_dict(cfg)
    ckpt = _save_model(out, tag, result.model, cfg_dict)
    hist_name = f"history_{tag}.csv" if tag else "history.csv"
    write_csv(os.path.join(out, hist_name), _HISTORY_COLUMNS, result.history)
    return {
        "checkpoint": os.path.basename(ckpt),
        "history_csv": hist_name,
        "initial_metrics": result.initial_report.to_dict(),
        "metrics": result.final_report.to_dict(),
        "history": result.history,
        "config": cfg_dict,
    }


def _read_eval_inputs(args):
    import numpy as np

    from .errors import ParameterError, StructuralError
    from .ranking import ScoredList
    from .tensorio import read_tensors

    if bool(args.scores) == bool(args.csv):
        raise ParameterError("provide exactly one of --scores or --csv")
    queries = []
    if args.scores:
        tensors = read_tensors(args.scores)
        if "scores" not in tensors or "labels" not in tensors:
            raise StructuralError("tensor file must contain 'scores' and 'labels'")
        scores, labels = tensors["scores"], tensors["labels"]
        if scores.shape != labels.shape or scores.ndim != 2:
            raise StructuralError(
                f"scores {scores.shape} and labels {labels.shape} must be equal 2-d shapes"
            )
        for q in range(scores.shape[0]):
            queries.append(ScoredList(scores[q], labels[q].astype(np.int64)))
    else:
        by_query: dict[str, list] = {}
        with open(args.csv) as fh:
            header = fh.readline().strip().split(",")
            if header[:3] != ["query", "score", "label"]:
                raise StructuralError("CSV header must be query,score,label")
            for line_no, line in enumerate(fh, start=2):
                line = line.strip()
                if not line:
                    continue
                parts = line.split(",")
                if len(parts) != 3:
                    raise StructuralError(f"line {line_no}: expected 3 columns")
                by_query.setdefault(parts[0], []).append((float(parts[1]), int(parts[2])))
        for name in by_query:
            scores = [s for s, _ in by_query[name]]
            labels = [l for _, l in by_query[name]]
            queries.append(ScoredList(scores, labels))
    return queries


def cmd_eval(args) -> int:
    from .errors import NumericsError
    from .metrics import average_precision, brute_force_ap, mean_ap, micro_ap
    from .tensorio import write_csv, write_json_report

    started = time.time()
    out = _ensure_out(args)
    queries = _read_eval_inputs(args)
    import numpy as np

    scored = [q for q in queries if np.any(q.labels == 1)]
    aps = [average_precision(q) for q in scored]
    report = _stamp(args, {
        "ap_per_query": aps,
        "map": mean_ap(scored),
        "micro_ap": micro_ap(scored),
        "num_queries": len(scored),
        "num_skipped": len(queries) - len(scored),
        "wall_clock_seconds": _wall_clock(args, started),
    })
    if args.verify:
        mismatches = sum(1 for q, ap in zip(scored, aps) if brute_force_ap(q) != ap)
        report["verify"] = {"oracle_mismatches": mismatches, "pass": mismatches == 0}
    write_json_report(os.path.join(out, "eval_report.json"), report)
    write_csv(
        os.path.join(out, "eval_per_query.csv"),
        ["query", "ap"],
        [{"query": i, "ap": ap} for i, ap in enumerate(aps)],
    )
    print(f"eval: mAP={report['map']:.6f} microAP={report['micro_ap']:.6f} over {len(scored)} queries")
    if args.verify and report["verify"]["oracle_mismatches"]:
        raise NumericsError(f"{report['verify']['oracle_mismatches']} oracle mismatches")
    return 0


def _avgpool_eval(model, clips, k_s: float):
    """Average-pooling evaluator: same pipeline with the temporal stage
    replaced by the structured mean."""
    import numpy as np

    from .aggregation import (
        PatchEmbeddings,
        patch_similarity,
        refine,
        spatial_topk_chamfer,
        temporal_mean,
    )
    from .metrics import evaluate_retrieval
    from .model import model_refiner_params
    from .ranking import RelevanceMatrix

    w = model.weight.value
    refiner = model_refiner_params(model)
    mapped = [PatchEmbeddings(c.student.data @ w.T) for c in clips]
    n = len(mapped)
    sim = np.empty((n, n))
    for i in range(n):
        for j in range(n):
            frame = spatial_topk_chamfer(patch_similarity(mapped[i], mapped[j]), k_s)
            sim[i, j] = temporal_mean(refine(frame, refiner))
    rel = RelevanceMatrix.from_groups([c.group for c in clips])
    return evaluate_retrieval(sim, rel, exclude_self=True)


def cmd_ablate(args) -> int:
    from dataclasses import replace

    from .errors import ParameterError
    from .tensorio import write_csv, write_json_report

    started = time.time()
    out = _ensure_out(args)
    cfg = _load_train_config(args)

    entries = [s.strip() for s in args.grid.split(",") if s.strip()]
    if not entries:
        raise ParameterError("empty grid")

    rows = []
    extra = {}
    if args.axis in ("k_t", "k_s"):
        rows, extra = _ablate_k_axis(args, cfg, entries)
    elif args.axis == "rates":
        from .pseudolabels import LabelRates
        from .trainer import train

        for entry in entries:
            try:
                rt_s, rb_s = entry.split(":")
                rates = LabelRates(float(rt_s), float(rb_s))
            except ValueError as exc:
                raise ParameterError(f"rates grid entries must be rt:rb, got {entry!r}") from exc
            run = train(replace(cfg, rates=rates))
            rows.append({
                "value": entry,
                "map": run.final_report.map,
                "micro_ap": run.final_report.micro_ap,
            })
    else:
        from .trainer import train

        for entry in entries:
            value = float(entry)
            run_cfg = _override_axis(cfg, args.axis, value)
            run = train(run_cfg)
            rows.append({
                "value": value,
                "map": run.final_report.map,
                "micro_ap": run.final_report.micro_ap,
            })

    table = os.path.join(out, f"ablate_{args.axis}.csv")
    write_csv(table, list(rows[0].keys()), rows)
    report = _stamp(args, {
        "axis": args.axis,
        "grid": entries,
        "rows": rows,
        "table_csv": os.path.basename(table),
        "iterations": args.iterations,
        "wall_clock_seconds": _wall_clock(args, started),
        **extra,
    })
    write_json_report(os.path.join(out, f"ablate_{args.axis}.json"), report)
    print(f"ablate[{args.axis}]: {len(rows)} rows -> {table}")
    return 0


def _override_axis(cfg, axis: str, value: float):
    from dataclasses import replace

    from .losses import QuadLinearParams

    if axis == "delta_v":
        return replace(cfg, qlap_video=QuadLinearParams(value, cfg.qlap_video.rho))
    if axis == "rho_v":
        return replace(cfg, qlap_video=QuadLinearParams(cfg.qlap_video.delta, value))
    if axis == "delta_f":
        return replace(cfg, qlap_frame=QuadLinearParams(value, cfg.qlap_frame.rho))
    if axis == "rho_f":
        return replace(cfg, qlap_frame=QuadLinearParams(cfg.qlap_frame.delta, value))
    if axis == "lambda_f":
        return replace(cfg, weights=replace(cfg.weights, lambda_f=value))
    raise AssertionError(axis)


def _ablate_k_axis(args, cfg, entries):
    from dataclasses import replace

    from .aggregation import AggregationParams
    from .model import init_model
    from .synthetic import generate_corpus
    from .trainer import evaluate_model
    from .tensorio import read_checkpoint

    heldout_cfg = replace(
        cfg.synthetic,
        num_clips=cfg.heldout.num_clips,
        num_groups=cfg.heldout.num_groups,
        seed=cfg.synthetic.seed + cfg.heldout.seed_offset,
    )
    clips = generate_corpus(heldout_cfg)
    model = init_model(
        dim=cfg.synthetic.dim,
        refiner_kind=cfg.refiner_kind,
        downsample=cfg.downsample,
        seed=cfg.seed,
        init_noise=cfg.init_noise,
    )
    if args.checkpoint:
        tensors, _ = read_checkpoint(args.checkpoint)
        for name, p in model.parameters():
            if name in tensors:
                p.value = tensors[name]

    rows = []
    for entry in entries:
        rate = float(entry)
        agg = (
            AggregationParams(k_s=cfg.agg.k_s, k_t=rate)
            if args.axis == "k_t"
            else AggregationParams(k_s=rate, k_t=cfg.agg.k_t)
        )
        report = evaluate_model(model, clips, agg)
        rows.append({"value": rate, "map": report.map, "micro_ap": report.micro_ap})

    extra = {}
    if args.axis == "k_t":
        pool = _avgpool_eval(model, clips, cfg.agg.k_s)
        extra["avgpool"] = {"map": pool.map, "micro_ap": pool.micro_ap}
    return rows, extra


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------


def main(argv=None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    if "--deterministic" in argv:
        for var in ("OPENBLAS_NUM_THREADS", "OMP_NUM_THREADS", "MKL_NUM_THREADS",
                    "NUMEXPR_NUM_THREADS", "VECLIB_MAXIMUM_THREADS"):
            os.environ.setdefault(var, "1")
    parser = build_parser()
    args = parser.parse_args(argv)

    from .errors import (
        DegenerateInputError,
        NumericsError,
        ParameterError,
        StructuralError,
        UndefinedMetricError,
    )

    commands = {
        "bench-loss": cmd_bench_loss,
        "train": cmd_train,
        "eval": cmd_eval,
        "ablate": cmd_ablate,
    }
    try:
        return commands[args.command](args)
    except (ParameterError, StructuralError, DegenerateInputError, UndefinedMetricError) as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2
    except NumericsError as exc:
        print(f"numeric failure: {exc}", file=sys.stderr)
        if exc.snapshot_path:
            print(f"snapshot: {exc.snapshot_path}", file=sys.stderr)
        return 3
    except FileNotFoundError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    sys.exit(main())
