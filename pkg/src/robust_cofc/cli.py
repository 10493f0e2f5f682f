"""Command line: ``robust-cofc {train,evaluate,verify,print-defaults}``.

Exit codes: 0 success, 1 refusal or failed check, 2 invalid configuration,
3 numerical divergence during training.
"""

from __future__ import annotations

import argparse
import hashlib
import json
import logging
import re
import shutil
import sys
from concurrent.futures import ProcessPoolExecutor
from pathlib import Path

from . import __version__
from .checkpoint import CheckpointError, load_checkpoint, save_checkpoint
from .config import ConfigError, RunConfig, smoke_config
from .crl.evaluate import diverged, evaluate_agent, summarize
from .crl.trainer import TrainingDiverged, train
from .report import (
    EvalRow,
    format_table,
    format_verify,
    plot_eval,
    plot_history,
    plot_verify,
    write_eval,
    write_history,
    write_summary,
    write_verify,
)
from .tabular import run_suite, tight_instance

log = logging.getLogger("robust_cofc")

EXIT_OK, EXIT_FAIL, EXIT_CONFIG, EXIT_DIVERGED = 0, 1, 2, 3


def method_slug(method: str) -> str:
    return re.sub(r"[^A-Za-z0-9]+", "_", method).strip("_").lower()


def _sha256(path: Path) -> str:
    return hashlib.sha256(path.read_bytes()).hexdigest()


def write_manifest(out: Path, command: str, cfg_digest: str, files, extra=None) -> Path:
    files = sorted({Path(f) for f in files})
    manifest = {
        "command": command,
        "version": __version__,
        "config_sha256": cfg_digest,
        "artifacts": [{"path": str(f.relative_to(out)), "sha256": _sha256(f)} for f in files],
        **(extra or {}),
    }
    path = out / f"manifest_{command}.json"
    path.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return path


def _load_config(args) -> RunConfig:
    if getattr(args, "config", None):
        cfg = RunConfig.load(args.config)
    else:
        cfg = RunConfig()
    data = cfg.to_dict()
    if getattr(args, "method", None):
        data["method"] = args.method
    if getattr(args, "seeds", None):
        data["seeds"] = list(args.seeds)
    return RunConfig.from_dict(data)


# -- train -----------------------------------------------------------------


def _train_one(cfg_dict: dict, seed: int, run_dir: str) -> dict:
    """Train one seed and write its artifacts. Runs in a worker process."""
    cfg = RunConfig.from_dict(cfg_dict)
    tcfg = cfg.train_config()
    digest = cfg.digest()
    run_dir = Path(run_dir)
    run_dir.mkdir(parents=True, exist_ok=True)
    files, status = [], "ok"
    try:
        result = train(cfg.method, tcfg, cfg.problem(), seed, cfg.attack_config(), cfg.norm_order)
        ckpt_name = "checkpoint.ckpt"
    except TrainingDiverged as exc:
        result, status, ckpt_name = exc.result, f"diverged: {exc}", "diverged.ckpt"
    files.append(save_checkpoint(run_dir / ckpt_name, cfg.method, seed, result.agent, tcfg, result.history,
                                 {"config_sha256": digest, "version": __version__}))
    files.append(write_history(run_dir / "history.csv", result.history, digest))
    if cfg.output.figures and result.history:
        files.append(plot_history(run_dir / "learning_curve.png", result.history, f"{cfg.method} seed {seed}"))
    return {"seed": seed, "status": status, "files": [str(f) for f in files]}


def cmd_train(args) -> int:
    cfg = _load_config(args)
    out = Path(args.out or cfg.output.dir)
    method_dir = out / method_slug(cfg.method)
    if method_dir.exists():
        if not args.force:
            print(f"refusing to overwrite {method_dir} (use --force)", file=sys.stderr)
            return EXIT_FAIL
        shutil.rmtree(method_dir)
    method_dir.mkdir(parents=True)
    (method_dir / "config.yaml").write_text(cfg.to_yaml())
    jobs = [(cfg.to_dict(), s, str(method_dir / f"seed_{s}")) for s in cfg.seeds]
    if args.jobs > 1 and len(jobs) > 1:
        with ProcessPoolExecutor(max_workers=args.jobs) as pool:
            results = list(pool.map(_train_one, *zip(*jobs)))
    else:
        results = [_train_one(*j) for j in jobs]
    files = [method_dir / "config.yaml"] + [Path(f) for r in results for f in r["files"]]
    runs = [{"seed": r["seed"], "status": r["status"]} for r in results]
    write_manifest(method_dir, "train", cfg.digest(), files, {"method": cfg.method, "runs": runs})
    failed = [r for r in results if r["status"] != "ok"]
    for r in results:
        print(f"{cfg.method} seed {r['seed']}: {r['status']}")
    if failed:
        print(f"{len(failed)} run(s) diverged; checkpoints dumped as diverged.ckpt", file=sys.stderr)
        return EXIT_DIVERGED
    return EXIT_OK


# -- evaluate --------------------------------------------------------------


def find_checkpoints(runs: Path) -> dict[str, list[Path]]:
    """``method -> checkpoints`` under a training output directory, in seed order."""
    found: dict[str, list[tuple[int, Path]]] = {}
    for path in sorted(runs.glob("**/*.ckpt")):
        if path.name != "checkpoint.ckpt":
            continue
        ck = load_checkpoint(path)
        found.setdefault(ck.method, []).append((ck.seed, path))
    return {m: [p for _, p in sorted(v)] for m, v in found.items()}


def evaluate_runs(cfg: RunConfig, checkpoints: dict[str, list[Path]], baseline: float | None = None) -> list[EvalRow]:
    problem = cfg.problem()
    budget = cfg.budget()
    acfg = cfg.attack_config()
    e = cfg.eval
    rows = []
    for method, paths in checkpoints.items():
        cks = [load_checkpoint(p) for p in paths]
        for cond in e.conditions:
            res = [
                evaluate_agent(ck.agent, problem, cond, e.episodes, e.seed_offset + ck.seed, budget.epsilon, acfg,
                               budget.norm_order, e.soc_spread)
                for ck in cks
            ]
            rows.append(EvalRow(method, cond, summarize(res)))
    if baseline is None:
        base = [r for r in rows if r.method == "PPOL-vanilla" and r.condition == "natural"]
        baseline = base[0].summary.reward_mean if base else None
    if baseline is not None:
        for r in rows:
            r.diverged = diverged(r.summary.reward_mean, baseline)
    return rows


def cmd_evaluate(args) -> int:
    cfg = _load_config(args)
    if args.checkpoints:
        checkpoints: dict[str, list[Path]] = {}
        for p in map(Path, args.checkpoints):
            if not p.is_file():
                print(f"missing checkpoint: {p}", file=sys.stderr)
                return EXIT_FAIL
            ck = load_checkpoint(p)
            checkpoints.setdefault(ck.method, []).append(p)
    else:
        runs = Path(args.runs or cfg.output.dir)
        if not runs.is_dir():
            print(f"missing run directory: {runs}", file=sys.stderr)
            return EXIT_FAIL
        checkpoints = find_checkpoints(runs)
        if not checkpoints:
            print(f"no checkpoints under {runs}", file=sys.stderr)
            return EXIT_FAIL
    out = Path(args.out or cfg.output.dir)
    out.mkdir(parents=True, exist_ok=True)
    rows = evaluate_runs(cfg, checkpoints, args.baseline_reward)
    digest = cfg.digest()
    files = [write_eval(out / "eval.csv", rows, digest), write_summary(out / "eval_summary.json", rows, digest)]
    table = format_table(rows)
    (out / "eval_table.txt").write_text(f"# config_sha256={digest} version={__version__}\n{table}")
    files.append(out / "eval_table.txt")
    if cfg.output.figures:
        files.append(plot_eval(out / "eval.png", rows))
    write_manifest(out, "evaluate", digest, files)
    print(table, end="")
    return EXIT_OK


# -- verify ----------------------------------------------------------------


def cmd_verify(args) -> int:
    if args.fixture == "tight":
        reports = run_suite([0], instances=[tight_instance()], lipschitz_scale=args.lipschitz_scale,
                            mixtures=args.mixtures, contraction_trials=args.contraction_trials)
    else:
        reports = run_suite(range(args.seeds), n_states=args.states, n_actions=args.actions, gamma=args.gamma,
                            lipschitz_scale=args.lipschitz_scale, mixtures=args.mixtures,
                            contraction_trials=args.contraction_trials)
    text = format_verify(reports)
    print(text, end="")
    if args.out:
        out = Path(args.out)
        out.mkdir(parents=True, exist_ok=True)
        digest = hashlib.sha256(json.dumps(vars(args), sort_keys=True, default=str).encode()).hexdigest()
        files = [write_verify(out / "verify.csv", reports, digest)]
        (out / "verify.txt").write_text(f"# config_sha256={digest} version={__version__}\n{text}")
        files.append(out / "verify.txt")
        if not args.no_figures:
            files.append(plot_verify(out / "verify.png", reports))
        write_manifest(out, "verify", digest, files)
    return EXIT_OK if all(r.passed for r in reports) else EXIT_FAIL


def cmd_print_defaults(args) -> int:
    cfg = smoke_config() if args.smoke else RunConfig()
    sys.stdout.write(cfg.to_yaml())
    return EXIT_OK


# -- entry point -----------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="robust-cofc", description="Robust constrained RL for HEV energy management.")
    p.add_argument("--version", action="version", version=__version__)
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", required=True)

    t = sub.add_parser("train", help="train one method for each configured seed")
    t.add_argument("--config")
    t.add_argument("--method")
    t.add_argument("--seed", "--seeds", dest="seeds", type=int, nargs="+")
    t.add_argument("--out")
    t.add_argument("--jobs", type=int, default=1)
    t.add_argument("--force", action="store_true")
    t.set_defaults(func=cmd_train)

    e = sub.add_parser("evaluate", help="evaluate checkpoints under every condition")
    e.add_argument("--config")
    e.add_argument("--runs", help="training output directory to scan for checkpoints")
    e.add_argument("--checkpoints", nargs="+")
    e.add_argument("--out")
    e.add_argument("--baseline-reward", type=float, help="natural reward used for the divergence flag")
    e.set_defaults(func=cmd_evaluate)

    v = sub.add_parser("verify", help="check the tabular bounds on random instances")
    v.add_argument("--seed", "--seeds", dest="seeds", type=int, default=100, help="number of random instances")
    v.add_argument("--states", type=int, default=5)
    v.add_argument("--actions", type=int, default=2)
    v.add_argument("--gamma", type=float, default=0.9)
    v.add_argument("--mixtures", type=int, default=100)
    v.add_argument("--contraction-trials", type=int, default=10)
    v.add_argument("--lipschitz-scale", type=float, default=1.0, help="multiply the Lipschitz constant (< 1 forces violations)")
    v.add_argument("--fixture", choices=["random", "tight"], default="random")
    v.add_argument("--out")
    v.add_argument("--no-figures", action="store_true")
    v.set_defaults(func=cmd_verify)

    d = sub.add_parser("print-defaults", help="print the default configuration as YAML")
    d.add_argument("--smoke", action="store_true", help="the short-cycle smoke setup instead")
    d.set_defaults(func=cmd_print_defaults)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    args = parser.parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        return args.func(args)
    except ConfigError as exc:
        print(f"invalid configuration: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except CheckpointError as exc:
        print(f"checkpoint error: {exc}", file=sys.stderr)
        return EXIT_FAIL
    except FileNotFoundError as exc:
        print(str(exc), file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
