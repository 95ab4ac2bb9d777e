"""Command-line entry point: ``probdml <subcommand> [flags]``.

Configuration is resolved as defaults < ``--config`` file < flags. Every run
writes into ``<out>/<subcommand>-<hash>/`` where the hash covers the resolved
config and the subcommand's own arguments, so reruns with the same inputs land
in the same directory and reproduce the artifacts byte for byte. The
accompanying ``manifest.json`` records inputs, seed, config hash, wall time and a
sha256 per artifact.

Exit codes: 0 success, 2 configuration or usage error, 3 numerical failure,
4 failed validation check.
"""

from __future__ import annotations

import argparse
import csv
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import specfn, validation
from .config import SCHEMA, ConfigError, RunConfig
from .evaluation import diversity_metrics, norm_histogram, recall_at_k, retrieval_report, write_diversity_csv
from .metrics import distance_surface, write_surface_csv
from .synthdata import generate, load_dataset, save_dataset
from .trainer import NumericalError, load_checkpoint, save_checkpoint, train, write_log_csv

EXIT_CONFIG, EXIT_NUMERICAL, EXIT_ASSERTION = 2, 3, 4

DEFAULT_OMEGA_GRID = "0," + ",".join(f"{w:g}" for w in np.logspace(-2, 1, 7))


class Run:
    """Output directory plus manifest bookkeeping for one subcommand invocation."""

    def __init__(self, name: str, cfg: RunConfig, extra: dict):
        self.name, self.cfg, self.extra = name, cfg, extra
        blob = json.dumps({"subcommand": name, "config": cfg.hashed_items(), "args": extra}, sort_keys=True)
        self.run_hash = hashlib.sha256(blob.encode()).hexdigest()[:12]
        self.dir = Path(cfg["out"]) / f"{name}-{self.run_hash}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.artifacts = []
        self.t0 = time.perf_counter()
        (self.dir / "config.txt").write_text(cfg.to_text(), encoding="utf-8")

    def path(self, name: str) -> Path:
        self.artifacts.append(name)
        return self.dir / name

    def write_json(self, name: str, obj) -> Path:
        p = self.path(name)
        p.write_text(json.dumps(obj, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p

    def finish(self, status: str = "ok") -> Path:
        files = {a: hashlib.sha256((self.dir / a).read_bytes()).hexdigest() for a in self.artifacts}
        manifest = {
            "subcommand": self.name,
            "status": status,
            "inputs": self.extra,
            "config": self.cfg.hashed_items(),
            "config_hash": self.cfg.hash(),
            "run_hash": self.run_hash,
            "seed": self.cfg["seed"],
            "wall_time": time.perf_counter() - self.t0,
            "artifacts": files,
        }
        p = self.dir / "manifest.json"
        p.write_text(json.dumps(manifest, indent=2, sort_keys=True) + "\n", encoding="utf-8")
        return p


def _range(text: str, name: str):
    """``start:stop:num`` inclusive linspace, or a single value."""
    parts = text.split(":")
    try:
        if len(parts) == 1:
            return np.array([float(parts[0])])
        if len(parts) == 3:
            n = int(parts[2])
            if n < 1:
                raise ValueError
            return np.linspace(float(parts[0]), float(parts[1]), n)
    except ValueError:
        pass
    raise ConfigError(f"bad value for {name}: {text!r} (expected start:stop:num)")


def _grid(text: str):
    try:
        vals = [float(x) for x in text.split(",") if x.strip()]
    except ValueError:
        raise ConfigError(f"bad value for grid: {text!r}") from None
    if not vals or any(v < 0 for v in vals):
        raise ConfigError("grid must be a nonempty list of nonnegative omegas")
    return vals


def _file_hash(path):
    return None if not path else hashlib.sha256(Path(path).read_bytes()).hexdigest()


def _dataset(cfg: RunConfig, data):
    if data:
        return load_dataset(data)
    return generate(cfg.synthetic_spec())


def _write_dataset(run: Run, ds) -> None:
    run.path("dataset.spec.json")
    save_dataset(ds, run.path("dataset.csv"))


def _train(run: Run, ds, tc, trace=False):
    try:
        return train(ds, tc, trace=trace)
    except NumericalError as exc:
        snap = {k: (v.tolist() if isinstance(v, np.ndarray) else v) for k, v in exc.snapshot.items()}
        run.write_json("numerical_error.json", {"error": str(exc), "snapshot": snap})
        run.finish("numerical_error")
        raise


# subcommands -----------------------------------------------------------------


def cmd_fit_normalizer(cfg: RunConfig, a) -> int:
    grid = np.linspace(a.kmin, a.kmax, a.points)
    if a.preset:
        fit = specfn.published_preset(a.preset)
        d = fit.to_dict() | {"mse_rel": specfn.relative_mse(fit, grid), "preset": a.preset}
    else:
        d = specfn.fit_log_c_quadratic(cfg["dim"], grid).to_dict()
    run = Run("fit-normalizer", cfg, {"kmin": a.kmin, "kmax": a.kmax, "points": a.points, "preset": a.preset})
    run.write_json("normalizer.json", d)
    run.finish()
    print(json.dumps(d, sort_keys=True))
    return 0


def cmd_validate(cfg: RunConfig, a) -> int:
    names = a.suites.split(",") if a.suites else None
    bad = [n for n in names or () if n not in validation.SUITES]
    if bad:
        raise ConfigError(f"unknown suite(s): {', '.join(bad)}")
    results = validation.run_all(names)
    run = Run("validate", cfg, {"suites": names})
    failed = 0
    for suite, rows in results.items():
        ok = sum(p for _, p in rows)
        failed += len(rows) - ok
        print(f"{suite}: {ok}/{len(rows)} passed")
        for check, p in rows:
            if not p:
                print(f"  FAIL {check}")
    run.write_json("validate.json", {s: [{"check": c, "passed": p} for c, p in rows] for s, rows in results.items()})
    run.finish("ok" if not failed else "failed")
    return 0 if not failed else EXIT_ASSERTION


def cmd_gen_data(cfg: RunConfig, a) -> int:
    ds = _dataset(cfg, None)
    run = Run("gen-data", cfg, {})
    _write_dataset(run, ds)
    run.finish()
    print(run.dir / "dataset.csv")
    return 0


def cmd_train(cfg: RunConfig, a) -> int:
    ds = _dataset(cfg, a.data)
    tc = cfg.train_config()
    run = Run("train", cfg, {"data": a.data, "data_sha256": _file_hash(a.data)})
    st = _train(run, ds, tc, trace=True)
    save_checkpoint(st, tc, run.path("checkpoint.json"))
    write_log_csv(st, run.path("log.csv"))
    st.trace.write_csv(run.path("trace.csv"))
    run.finish()
    last = st.log[-1] if st.log else None
    if last:
        print(f"epoch {last[0]}: loss {last[1]:.4f} R@1 {last[2]:.4f} MAP@R {last[3]:.4f}")
    print(run.dir / "checkpoint.json")
    return 0


def evaluate_split(st, ds, ks, r, bins):
    """Reports, diversity rows and the ambiguous-vs-clean norm histogram on the held-out split."""
    test = ds.test_split()
    z = st.embed(test.features)
    reports = {m: retrieval_report(z, test.labels, ks, r, m) for m in ("cosine", "euclidean")}
    div = [("test", *diversity_metrics(z, test.labels))]
    groups = np.where(test.ambiguous, "ambiguous", "clean")
    hist = norm_histogram(z, groups, bins, order=("ambiguous", "clean"))
    return reports, div, hist


def cmd_eval(cfg: RunConfig, a) -> int:
    st, _ = load_checkpoint(a.checkpoint)
    ds = _dataset(cfg, a.data)
    reports, div, hist = evaluate_split(st, ds, cfg.eval_ks(), cfg["eval_r"], cfg["hist_bins"])
    run = Run("eval", cfg, {
        "checkpoint": str(a.checkpoint),
        "checkpoint_sha256": _file_hash(a.checkpoint),
        "data": a.data,
        "data_sha256": _file_hash(a.data),
    })
    for m, rep in reports.items():
        run.path(f"report_{m}.json").write_text(rep.to_json() + "\n", encoding="utf-8")
    write_diversity_csv(run.path("diversity.csv"), div)
    hist.write_csv(run.path("norm_hist.csv"))
    run.write_json(
        "norm_summary.json", {"mean_norm": hist.mean_norm, "p_value_ambiguous_smaller": hist.p_value, "config_hash": cfg.hash()}
    )
    run.finish()
    for m, rep in reports.items():
        print(f"{m}: R@1 {rep.recall_at.get(1, float('nan')):.4f} MAP@R {rep.map_at_r:.4f}")
    return 0


def cmd_metric_surface(cfg: RunConfig, a) -> int:
    kz = _range(a.kappa_z_range, "kappa-z-range")
    ang = _range(a.angle_range, "angle-range")
    if np.any(kz < 0):
        raise ConfigError("kappa-z-range must be nonnegative")
    if not a.kappa_p > 0:
        raise ConfigError("kappa-p must be > 0")
    rows = distance_surface(
        cfg["metric"],
        a.kappa_p,
        kz,
        np.deg2rad(ang),
        dim=cfg["dim"],
        backend=cfg["normalizer_backend"],
        mc_samples=cfg["mc_samples"],
        seed=cfg["seed"],
    )
    # report angles in the degrees they were requested in
    rows = [(float(d), k, v) for d, (_, k, v) in zip(np.repeat(ang, len(kz)), rows)]
    extra = {"kappa_p": a.kappa_p, "kappa_z_range": a.kappa_z_range, "angle_range": a.angle_range}
    run = Run("metric-surface", cfg, extra)
    write_surface_csv(run.path("surface.csv"), rows)
    run.finish()
    print(run.dir / "surface.csv")
    return 0


def cmd_sweep_omega(cfg: RunConfig, a) -> int:
    grid = _grid(a.grid)
    ds = _dataset(cfg, a.data)
    run = Run("sweep-omega", cfg, {"grid": grid, "data": a.data})
    test = ds.test_split()
    rows = []
    for w in grid:
        c = RunConfig(cfg.values | {"omega": w})
        st = _train(run, ds, c.train_config())
        rows.append((w, recall_at_k(st.embed(test.features), test.labels, 1)))
        print(f"omega {w:g}: R@1 {rows[-1][1]:.4f}")
    with open(run.path("omega.csv"), "w", newline="", encoding="utf-8") as fh:
        wr = csv.writer(fh, lineterminator="\n")
        wr.writerow(["omega", "recall1"])
        for w, r1 in rows:
            wr.writerow([repr(float(w)), repr(float(r1))])
    run.finish()
    return 0


# parser ----------------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        raise SystemExit(EXIT_CONFIG)


def _add_config_flags(p, skip=()):
    g = p.add_argument_group("config keys")
    g.add_argument("--config", metavar="PATH", default=argparse.SUPPRESS)
    for key in SCHEMA:
        if key in skip:
            continue
        names = [f"--{key}"] + ([f"--{key.replace('_', '-')}"] if "_" in key else [])
        g.add_argument(*names, dest=f"cfg_{key}", metavar=key.upper(), default=argparse.SUPPRESS)


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="probdml", description=__doc__.split("\n")[0])
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    p = sub.add_parser("fit-normalizer", help="quadratic fit of the log-normalizer")
    p.add_argument("--kmin", type=float, default=10.0)
    p.add_argument("--kmax", type=float, default=50.0)
    p.add_argument("--points", type=int, default=41)
    p.add_argument("--preset", choices=sorted(specfn.PUBLISHED_PRESETS))
    p.set_defaults(func=cmd_fit_normalizer)

    p = sub.add_parser("validate", help="run the built-in invariant suites")
    p.add_argument("--suites", help="comma-separated subset of: " + ",".join(validation.SUITES))
    p.set_defaults(func=cmd_validate)

    p = sub.add_parser("gen-data", help="write a synthetic dataset")
    p.set_defaults(func=cmd_gen_data, uses_data=True)

    p = sub.add_parser("train", help="train proxies and encoder")
    p.add_argument("--data", help="dataset CSV from gen-data (default: generate from config)")
    p.set_defaults(func=cmd_train, uses_data=True)

    p = sub.add_parser("eval", help="retrieval reports and diagnostics for a checkpoint")
    p.add_argument("--checkpoint", required=True)
    p.add_argument("--data")
    p.set_defaults(func=cmd_eval, uses_data=True)

    p = sub.add_parser("metric-surface", help="distance over (angle, kappa_z) for a fixed proxy")
    p.add_argument("--kappa-p", "--kappa_p", dest="kappa_p", type=float, default=10.0)
    p.add_argument("--kappa-z-range", "--kappa_z_range", dest="kappa_z_range", default="1:50:50")
    p.add_argument("--angle-range", "--angle_range", dest="angle_range", default="0:180:37", help="degrees")
    p.set_defaults(func=cmd_metric_surface)

    p = sub.add_parser("sweep-omega", help="train and evaluate over a grid of auxiliary-loss scales")
    p.add_argument("--grid", default=DEFAULT_OMEGA_GRID)
    p.add_argument("--data")
    p.set_defaults(func=cmd_sweep_omega, uses_data=True)

    for p in sub.choices.values():
        _add_config_flags(p)
    return ap


def resolve_config(args) -> RunConfig:
    cfg = RunConfig.from_file(args.config) if getattr(args, "config", None) else RunConfig()
    cfg.update({k[4:]: v for k, v in vars(args).items() if k.startswith("cfg_")})
    # surface typed errors from the builders early, before any output is written
    if getattr(args, "uses_data", False):
        cfg.synthetic_spec()
        cfg.train_config()
        cfg.eval_ks()
    return cfg


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = resolve_config(args)
        return args.func(cfg, args)
    except (ConfigError, FileNotFoundError, KeyError) as exc:
        print(f"probdml: config error: {exc}", file=sys.stderr)
        return EXIT_CONFIG
    except (NumericalError, FloatingPointError) as exc:
        print(f"probdml: numerical failure: {exc}", file=sys.stderr)
        return EXIT_NUMERICAL
    except ValueError as exc:
        print(f"probdml: invalid input: {exc}", file=sys.stderr)
        return EXIT_CONFIG


if __name__ == "__main__":
    raise SystemExit(main())
