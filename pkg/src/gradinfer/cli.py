"""Config-driven entry point.

Usage::

    gradinfer --config run.json [--seed N] [--out DIR] [--repeats R]

Every run writes ``manifest.json`` (config echo, content hash, version)
next to its result files; each result row carries the run hash. A config
that fails validation produces ``error.json`` listing every problem and a
nonzero exit code.
"""

from __future__ import annotations

import argparse
import json
import sys
import traceback
from dataclasses import fields
from pathlib import Path

import numpy as np

from . import __version__, nn
from .analysis import advantage_upper_bound, entropy, fano_error_lower_bound, gaussian_capacity_bound
from .audit import AttributeSpec, AuditConfig, audit_report, craft_canary, empirical_epsilon, random_record, run_audit_game
from .data import (
    SHADOW,
    SyntheticSpec,
    build_shadow,
    load_csv,
    load_schema,
    split,
    with_sensitive_feature,
)
from .defenses import SWEEP_PROFILES, defense_from_dict, defense_label
from .game import (
    GameConfig,
    GameData,
    cumulative_reports,
    evaluate_game,
    network_spec,
    run_defense_eval,
    privacy_utility_sweep,
    run_inference_game,
    synthetic_game_data,
    task_auroc,
    train_epoch,
)
from .report import content_hash, emit_report, long_rows, mean_std_rows
from .rng import child_seed
from .selftest import run_selftest

COMMANDS = ("game", "defense-eval", "sweep", "audit", "fano", "selftest")
TOP_KEYS = {"command", "seed", "dataset", "game", "defenses", "modes", "profiles", "audit", "fano", "repeats", "out"}
DATASET_KEYS = {"synthetic", "csv", "schema", "n", "fractions", "shadow_size", "n_users", "n_shadow_users", "mean_records"}
AUDIT_KEYS = {"clip", "sigma", "delta", "trials", "sensitivity_factor", "record", "a", "y", "iters", "step",
              "distance", "train_epochs", "configs", "workers"}
GAME_KEYS = {f.name for f in fields(GameConfig)} - {"seed"}
SPEC_KEYS = {f.name for f in fields(SyntheticSpec)}


class ConfigError(ValueError):
    def __init__(self, errors: list[str]):
        super().__init__("; ".join(errors))
        self.errors = errors


# ---------------------------------------------------------------- validation


def _game_config(raw: dict, seed: int) -> GameConfig:
    raw = dict(raw)
    if "defense" in raw:
        raw["defense"] = defense_from_dict(raw["defense"])
    for key in ("hidden", "rounds"):
        if raw.get(key) is not None:
            raw[key] = tuple(raw[key])
    return GameConfig(**raw, seed=seed)


def validate_config(cfg) -> list[str]:
    """Every schema violation, not just the first."""
    if not isinstance(cfg, dict):
        return ["config must be a JSON object"]
    errs = [f"unknown key {k!r}" for k in sorted(set(cfg) - TOP_KEYS)]
    cmd = cfg.get("command")
    if cmd not in COMMANDS:
        errs.append(f"command must be one of {list(COMMANDS)}, got {cmd!r}")
    if "seed" not in cfg:
        errs.append("seed is required")
    elif not isinstance(cfg["seed"], int) or isinstance(cfg["seed"], bool) or cfg["seed"] < 0:
        errs.append("seed must be a non-negative integer")
    reps = cfg.get("repeats", 1)
    if not isinstance(reps, int) or reps < 1:
        errs.append("repeats must be a positive integer")
    if cmd in ("game", "defense-eval", "sweep", "audit"):
        errs += _validate_dataset(cfg.get("dataset"))
    if cmd in ("game", "defense-eval", "sweep"):
        game = cfg.get("game", {})
        if not isinstance(game, dict):
            errs.append("game must be an object")
        else:
            errs += [f"game: unknown key {k!r}" for k in sorted(set(game) - GAME_KEYS)]
            try:
                _game_config({k: v for k, v in game.items() if k in GAME_KEYS}, 0)
            except (TypeError, ValueError) as exc:
                errs += [f"game: {e}" for e in str(exc).split("; ")]
    if cmd == "defense-eval":
        ds = cfg.get("defenses")
        if not isinstance(ds, list) or not ds:
            errs.append("defense-eval needs a nonempty 'defenses' list")
        else:
            for i, d in enumerate(ds):
                try:
                    defense_from_dict(d)
                except (TypeError, ValueError) as exc:
                    errs.append(f"defenses[{i}]: {exc}")
    if cmd in ("defense-eval", "sweep"):
        for m in cfg.get("modes", ["static", "adaptive"]):
            if m not in ("static", "adaptive"):
                errs.append(f"unknown adversary mode {m!r}")
    if cmd == "sweep":
        for p in cfg.get("profiles", list(SWEEP_PROFILES)):
            if p not in SWEEP_PROFILES:
                errs.append(f"unknown sweep profile {p!r}")
    if cmd == "audit":
        aud = cfg.get("audit", {})
        errs += [f"audit: unknown key {k!r}" for k in sorted(set(aud) - AUDIT_KEYS)]
        if aud.get("record", "crafted") not in ("crafted", "random"):
            errs.append("audit: record must be 'crafted' or 'random'")
        if aud.get("distance", "mse") not in ("mse", "cosine"):
            errs.append("audit: distance must be 'mse' or 'cosine'")
        for i, over in enumerate(aud.get("configs", [{}])):
            base = {k: aud[k] for k in ("clip", "sigma", "delta", "trials", "sensitivity_factor") if k in aud}
            try:
                AuditConfig(**{**base, **over})
            except (TypeError, ValueError) as exc:
                errs += [f"audit.configs[{i}]: {e}" for e in str(exc).split("; ")]
    if cmd == "fano":
        fano = cfg.get("fano")
        if not isinstance(fano, dict) or "prior" not in fano:
            errs.append("fano needs an object with a 'prior' list")
        else:
            prior = np.asarray(fano["prior"], dtype=float)
            if prior.ndim != 1 or prior.size < 2 or np.any(prior < 0) or abs(prior.sum() - 1) > 1e-9:
                errs.append("fano.prior must be a probability vector of length >= 2")
            if any((not isinstance(v, (int, float))) or v < 0 for v in fano.get("mi", [])):
                errs.append("fano.mi values must be non-negative numbers")
    return errs


def _validate_dataset(ds) -> list[str]:
    if not isinstance(ds, dict):
        return ["dataset is required: give exactly one of 'synthetic' or 'csv'"]
    errs = [f"dataset: unknown key {k!r}" for k in sorted(set(ds) - DATASET_KEYS)]
    sources = [k for k in ("synthetic", "csv") if k in ds]
    if len(sources) != 1:
        errs.append("dataset needs exactly one source: 'synthetic' or 'csv'")
    if "csv" in ds:
        if "schema" not in ds:
            errs.append("dataset: csv source needs a 'schema' file")
        for key in ("csv", "schema"):
            if key in ds and not Path(ds[key]).exists():
                errs.append(f"dataset: {key} file {ds[key]!r} not found")
    if "synthetic" in ds:
        syn = ds["synthetic"]
        if not isinstance(syn, dict):
            errs.append("dataset.synthetic must be an object")
        else:
            errs += [f"dataset.synthetic: unknown key {k!r}" for k in sorted(set(syn) - SPEC_KEYS)]
            try:
                SyntheticSpec(**{k: v for k, v in syn.items() if k in SPEC_KEYS})
            except (TypeError, ValueError) as exc:
                errs.append(f"dataset.synthetic: {exc}")
    return errs


# ------------------------------------------------------------------- data


def _synthetic_spec(ds: dict) -> SyntheticSpec:
    syn = dict(ds["synthetic"])
    if syn.get("prior") is not None:
        syn["prior"] = tuple(syn["prior"])
    return SyntheticSpec(**syn)


def build_game_data(ds_cfg: dict, attack: str, seed: int) -> GameData:
    fractions = tuple(ds_cfg.get("fractions", (0.5, 0.25, 0.25)))
    shadow_size = ds_cfg.get("shadow_size", 1000)
    if "synthetic" in ds_cfg:
        return synthetic_game_data(
            _synthetic_spec(ds_cfg), attack, n=ds_cfg.get("n", 10000), fractions=fractions,
            shadow_size=shadow_size, seed=seed, n_users=ds_cfg.get("n_users", 60),
            n_shadow_users=ds_cfg.get("n_shadow_users", 20), mean_records=ds_cfg.get("mean_records", 40),
        )
    ds = load_csv(ds_cfg["csv"], load_schema(ds_cfg["schema"]))
    if attack == "aia":
        ds = with_sensitive_feature(ds)
    train, test, public = split(ds, fractions, seed)
    if attack == "uia":
        if ds.user_ids is None:
            raise ConfigError(["UIA needs a user_id column in the schema"])
        return GameData(train, test, public.subset(np.arange(len(public)), SHADOW), public)
    shadow = build_shadow(public, min(shadow_size, len(public)), True, seed)
    return GameData(train, test, shadow, public)


# --------------------------------------------------------------- commands


def _repeat_seeds(seed: int, repeats: int) -> list[int]:
    return [seed if r == 0 else child_seed(seed, "repeat", r) for r in range(repeats)]


def cmd_game(cfg, run_hash, out: Path, echo):
    rows, per_round = [], []
    for r, s in enumerate(_repeat_seeds(cfg["seed"], cfg.get("repeats", 1))):
        gc = _game_config(cfg.get("game", {}), s)
        data = build_game_data(cfg["dataset"], gc.attack, s)
        res = run_inference_game(gc, data)
        ctx = {"run_hash": run_hash, "repeat": r, "seed": s, "attack": gc.attack,
               "defense": defense_label(gc.defense), "mode": "adaptive" if gc.adaptive else "static"}
        rep = evaluate_game(res).as_dict()
        rep["task_auroc"] = task_auroc(res.theta, data.test)
        rows += long_rows(rep, {**ctx, "scope": "multi-round"})
        for i, (single, cum) in enumerate(zip(evaluate_game(res, "per-round"), cumulative_reports(res))):
            rnd = {"run_hash": run_hash, "repeat": r, "seed": s, "round": res.rounds[i]}
            per_round += long_rows(single.as_dict(), {**rnd, "scope": "single-round"})
            per_round += long_rows(cum.as_dict(), {**rnd, "scope": "cumulative"})
        echo(f"repeat {r}: multi-round AUROC {rep['auroc']:.4f}, advantage {rep['advantage']:.4f}")
    emit_report(rows, out / "metrics.csv")
    emit_report(per_round, out / "per_round.csv")
    summary = mean_std_rows(rows, ["scope", "metric"])
    emit_report([{"run_hash": run_hash, **s} for s in summary], out / "summary.csv")


def _cells_rows(cfg, run_hash, runner, echo):
    rows = []
    for r, s in enumerate(_repeat_seeds(cfg["seed"], cfg.get("repeats", 1))):
        gc = _game_config(cfg.get("game", {}), s)
        data = build_game_data(cfg["dataset"], gc.attack, s)
        for ctx, rep in runner(gc, data):
            rows += long_rows(rep, {"run_hash": run_hash, "repeat": r, "seed": s, **ctx})
            echo(" ".join(f"{k}={v}" for k, v in ctx.items()) + f" advantage={rep['advantage']:.4f}")
    return rows


def cmd_defense_eval(cfg, run_hash, out, echo):
    defenses = [defense_from_dict(d) for d in cfg["defenses"]]
    modes = tuple(cfg.get("modes", ("static", "adaptive")))

    def runner(gc, data):
        for cell in run_defense_eval(gc, data, defenses, modes):
            yield {"defense": cell.defense, "mode": cell.mode}, {**cell.report.as_dict(), "task_auroc": cell.task_auroc}

    rows = _cells_rows(cfg, run_hash, runner, echo)
    emit_report(rows, out / "metrics.csv")
    emit_report([{"run_hash": run_hash, **s} for s in mean_std_rows(rows, ["defense", "mode", "metric"])], out / "summary.csv")


def cmd_sweep(cfg, run_hash, out, echo):
    profiles = {p: SWEEP_PROFILES[p] for p in cfg.get("profiles", list(SWEEP_PROFILES))}
    modes = tuple(cfg.get("modes", ("static", "adaptive")))

    def runner(gc, data):
        for pt in privacy_utility_sweep(gc, data, profiles, modes):
            yield ({"family": pt["family"], "defense": pt["defense"], "mode": pt["mode"]},
                   {"advantage": pt["advantage"], "task_auroc": pt["task_auroc"]})

    rows = _cells_rows(cfg, run_hash, runner, echo)
    emit_report(rows, out / "metrics.csv")
    emit_report([{"run_hash": run_hash, **s} for s in mean_std_rows(rows, ["defense", "mode", "metric"])], out / "summary.csv")


def audit_target(ds_cfg: dict, seed: int, train_epochs: int = 1):
    """Network trained for a few epochs on attribute-inference data, the
    one-hot slots of the sensitive attribute, and the attribute count N."""
    data = build_game_data(ds_cfg, "aia", seed)
    gc = GameConfig(attack="aia", seed=seed)
    theta = nn.init_network(network_spec(gc, data))
    for e in range(1, train_epochs + 1):
        theta = train_epoch(theta, data.train, gc, e)
    m = data.train.m
    d = data.train.d
    attribute = AttributeSpec(tuple(range(d - m, d)), m, one_hot=True)
    if "synthetic" in ds_cfg:
        n_attr = _synthetic_spec(ds_cfg).d + 1
    else:
        n_attr = len(load_schema(ds_cfg["schema"])["features"]) + 1
    return data, theta, attribute, n_attr


def cmd_audit(cfg, run_hash, out, echo):
    aud = cfg.get("audit", {})
    rows, long = [], []
    for r, s in enumerate(_repeat_seeds(cfg["seed"], cfg.get("repeats", 1))):
        data, theta, attribute, n_attr = audit_target(cfg["dataset"], s, aud.get("train_epochs", 1))
        a, y = aud.get("a", 0), aud.get("y", 0)
        base = {k: aud[k] for k in ("clip", "sigma", "delta", "trials", "sensitivity_factor", "workers") if k in aud}
        for over in aud.get("configs", [{}]):
            ac = AuditConfig(**{**base, **over}, attribute=attribute, seed=s)
            if aud.get("record", "crafted") == "crafted":
                rec = craft_canary(theta, attribute, a, y, ac.clip, aud.get("distance", "mse"),
                                   aud.get("iters", 2000), aud.get("step", 5e-2), seed=s)
            else:
                rec = random_record(attribute, theta.spec.input_dim, data.train.X, a, y, seed=s)
            samples = run_audit_game(rec, theta, ac)
            est = empirical_epsilon(samples.h0, samples.h1, ac.delta, ac.confidence, samples.degenerate)
            row = {"run_hash": run_hash, "repeat": r, "seed": s, "record": aud.get("record", "crafted"),
                   **audit_report(est, ac, n_attr)}
            rows.append(row)
            ctx = {"run_hash": run_hash, "repeat": r, "seed": s, "clip": ac.clip, "sigma": ac.sigma}
            long += long_rows({"eps": row["eps"], "eps_hat": est.eps_hat, "lo": est.lo, "hi": est.hi}, ctx)
            echo(f"clip={ac.clip} sigma={ac.sigma}: eps={row['eps']:.4g} eps_hat={est.eps_hat:.4g} [{est.lo:.4g}, {est.hi:.4g}]")
    emit_report(rows, out / "audit.csv")
    emit_report(long, out / "metrics.csv")
    emit_report([{"run_hash": run_hash, **s} for s in mean_std_rows(long, ["clip", "sigma", "metric"])], out / "summary.csv")


def cmd_fano(cfg, run_hash, out, echo):
    fano = cfg["fano"]
    prior = np.asarray(fano["prior"], dtype=float)
    m = prior.size
    h = entropy(prior)
    rows = []
    for mi in fano.get("mi", [0.0]):
        row = {"run_hash": run_hash, "m": m, "h_a": h, "mi": float(mi),
               "error_lower_bound": fano_error_lower_bound(h, float(mi), m)}
        if m > 2:
            row["advantage_upper_bound"] = advantage_upper_bound(h, float(mi), m, float(prior.max()))
        rows.append(row)
    cap = fano.get("capacity")
    if cap:
        cap_rows = [{"run_hash": run_hash, "power": cap["power"], "sigma": s,
                     "capacity_bound": gaussian_capacity_bound(cap["power"], s, cap.get("classical", False))}
                    for s in cap.get("sigmas", [1.0])]
        emit_report(cap_rows, out / "capacity.csv")
    emit_report(rows, out / "metrics.csv")
    for r in rows:
        echo(f"I={r['mi']:.4g}: P(error) >= {r['error_lower_bound']:.4g}")


def cmd_selftest(cfg, run_hash, out, echo):
    passed, failed = run_selftest(cfg["seed"], echo)
    emit_report([{"run_hash": run_hash, "passed": passed, "failed": failed}], out / "metrics.csv")
    if failed:
        raise SelftestFailure(f"{failed} self-test check(s) failed")


class SelftestFailure(RuntimeError):
    pass


HANDLERS = {
    "game": cmd_game,
    "defense-eval": cmd_defense_eval,
    "sweep": cmd_sweep,
    "audit": cmd_audit,
    "fano": cmd_fano,
    "selftest": cmd_selftest,
}


# ------------------------------------------------------------------- main


def _write_error(out: Path, kind: str, errors: list[str]):
    out.mkdir(parents=True, exist_ok=True)
    (out / "error.json").write_text(json.dumps({"error": kind, "messages": errors}, indent=1) + "\n")


def hashed_config(cfg: dict) -> dict:
    """The config minus execution-only settings (output path, worker counts),
    so results are identified independently of where and how fast they ran."""
    def strip(obj):
        if isinstance(obj, dict):
            return {k: strip(v) for k, v in obj.items() if k not in ("workers", "out")}
        if isinstance(obj, list):
            return [strip(v) for v in obj]
        return obj
    return strip(cfg)


def run(cfg: dict, out: Path, echo=print) -> int:
    """Validate, execute and write artifacts; returns the exit code."""
    errors = validate_config(cfg)
    if errors:
        _write_error(out, "config", errors)
        for e in errors:
            echo(f"config error: {e}")
        return 2
    digest = content_hash(hashed_config(cfg))
    run_hash = digest[:16]
    out.mkdir(parents=True, exist_ok=True)
    manifest = {"version": __version__, "config_hash": digest, "run_hash": run_hash, "config": cfg}
    (out / "manifest.json").write_text(json.dumps(manifest, indent=1, sort_keys=True) + "\n")
    try:
        HANDLERS[cfg["command"]](cfg, run_hash, out, echo)
    except SelftestFailure as exc:
        _write_error(out, "selftest", [str(exc)])
        return 1
    except Exception as exc:
        _write_error(out, type(exc).__name__, [str(exc), traceback.format_exc(limit=5)])
        echo(f"error: {exc}")
        return 1
    return 0


def main(argv=None) -> int:
    ap = argparse.ArgumentParser(prog="gradinfer", description="Inference-from-gradients experiments.")
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=int, help="override the config's master seed")
    ap.add_argument("--out", help="output directory (default: the config's 'out' or ./results)")
    ap.add_argument("--repeats", type=int, help="number of repeat seeds")
    args = ap.parse_args(argv)
    out = Path(args.out) if args.out else None
    try:
        with open(args.config) as fh:
            cfg = json.load(fh)
    except (OSError, json.JSONDecodeError) as exc:
        _write_error(out or Path("results"), "config", [f"cannot read config: {exc}"])
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    if isinstance(cfg, dict):
        if args.seed is not None:
            cfg["seed"] = args.seed
        if args.repeats is not None:
            cfg["repeats"] = args.repeats
        out = out or Path(cfg.get("out", "results"))
    return run(cfg, out or Path("results"))


if __name__ == "__main__":
    sys.exit(main())
