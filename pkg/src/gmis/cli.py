"""Command line runner: ``gmis run | compare | preset | validate-config``.

Exit codes: 0 success, 2 configuration error, 3 runtime failure. Errors are
reported as one JSON line on stderr.
"""

from __future__ import annotations

import argparse
import csv
import json
import logging
import math
import sys
from pathlib import Path

import numba
import numpy as np
import scipy

from . import __version__
from .diagnostics import acceptance_curve, chain_report
from .errors import ConfigError
from .experiments import PRESETS, SCHEMES, ExperimentConfig, RunResult, execute, preset_defaults

log = logging.getLogger("gmis")

EXIT_OK, EXIT_CONFIG, EXIT_RUNTIME = 0, 2, 3
COMPARE_FIELDS = (
    "acceptance_rate",
    "acceptance_rate_post_burn",
    "omf_mean",
    "omf_lag1_acf",
    "omf_tau",
    "omf_ess",
    "mode_ess_median",
    "point_ess_median",
)


def _clean(obj):
    """JSON-safe copy: numpy scalars/arrays to Python, non-finite floats to None."""
    if isinstance(obj, dict):
        return {str(k): _clean(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [_clean(v) for v in obj]
    if isinstance(obj, np.ndarray):
        return _clean(obj.tolist())
    if isinstance(obj, (np.integer,)):
        return int(obj)
    if isinstance(obj, (float, np.floating)):
        v = float(obj)
        return v if math.isfinite(v) else None
    if isinstance(obj, (np.bool_,)):
        return bool(obj)
    return obj


def write_json(path: Path, obj) -> None:
    path.write_text(json.dumps(_clean(obj), indent=2, sort_keys=True, allow_nan=False) + "\n", encoding="utf-8")


def _error(kind: str, message: str, code: int) -> int:
    print(json.dumps({"error": kind, "message": message}), file=sys.stderr)
    return code


def _parse_value(text: str):
    try:
        return json.loads(text)
    except json.JSONDecodeError:
        return text


def resolve_config(args) -> ExperimentConfig:
    """Config file, then explicit flags, then ``--set key=value`` overrides."""
    doc = {}
    if getattr(args, "config", None):
        try:
            doc = json.loads(Path(args.config).read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"cannot read config {args.config}: {exc}") from exc
        if not isinstance(doc, dict):
            raise ConfigError("config must be a JSON object")
    for name in ("preset", "scheme", "seed", "output_dir"):
        val = getattr(args, name, None)
        if val is not None:
            doc[name] = val
    if getattr(args, "desk", False):
        doc["desk"] = True
    for item in getattr(args, "set", None) or []:
        if "=" not in item:
            raise ConfigError(f"--set expects key=value, got {item!r}")
        k, v = item.split("=", 1)
        doc[k.strip()] = _parse_value(v)
    return ExperimentConfig.from_dict(doc)


def manifest(cfg: ExperimentConfig, res: RunResult | None = None) -> dict:
    out = {
        "config": cfg.to_dict(),
        "seed": int(cfg.seed),
        "rng": {"generator": "numpy PCG64", "streams": ["chain", "clustering"],
                "truth_seed": cfg.truth_seed, "noise_seed": cfg.noise_seed},
        "software": {"gmis": __version__, "numpy": np.__version__, "scipy": scipy.__version__,
                     "numba": numba.__version__, "python": sys.version.split()[0]},
    }
    if res is not None:
        basis = res.problem.basis
        out["derived"] = {"K": int(res.K), "grid_points": int(basis.grid.points.size),
                          "positive_modes": int(np.count_nonzero(basis.positive))}
    return out


def write_artifacts(res: RunResult, out: Path) -> dict:
    cfg = res.config
    out.mkdir(parents=True, exist_ok=True)
    tr = res.trace
    n = len(tr)
    it = np.arange(1, n + 1)

    keep = it % cfg.thin == 0
    ncoef = tr.U.shape[1]
    with open(out / "samples.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write(",".join(["iteration"] + [f"u{k}" for k in range(1, ncoef + 1)]) + "\n")
        np.savetxt(fh, np.column_stack([it[keep], tr.U[keep]]), fmt=["%d"] + ["%.17g"] * ncoef, delimiter=",")
    with open(out / "trace.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("iteration,accepted,phi,omf\n")
        np.savetxt(fh, np.column_stack([it, tr.accepted.astype(int), tr.phi, tr.omf]),
                   fmt=["%d", "%d", "%.17g", "%.17g"], delimiter=",")
    window = min(cfg.acceptance_window, n)
    curve = acceptance_curve(tr.accepted, window)
    end = it[window - 1 :]  # iteration closing each window
    on = end % cfg.thin == 0
    with open(out / "acceptance.csv", "w", newline="", encoding="utf-8") as fh:
        fh.write("iteration,acceptance\n")
        np.savetxt(fh, np.column_stack([end[on], curve[on]]), fmt=["%d", "%.17g"], delimiter=",")

    if res.proposal is not None:
        res.proposal.save(out / "proposal.json")

    report = chain_report(tr, res.problem.basis, res.K, burn=cfg.burn_in)
    report.update({"preset": cfg.preset, "scheme": cfg.scheme, "seed": int(cfg.seed), "K": int(res.K),
                   "n_failures": int(res.n_failures),
                   "acceptance_final_window": float(curve[-1])})
    if res.adapt is not None:
        report["J_final"] = int(res.proposal.J)
        report["refits"] = res.adapt.refits
        report["tempering"] = res.adapt.tempering
    with open(out / "acf.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.writer(fh, lineterminator="\n")
        w.writerow(["lag", "omf_acf"])
        for lag, v in enumerate(report.get("omf_acf", [])):
            w.writerow([lag, repr(float(v))])
    write_json(out / "report.json", report)
    write_json(out / "manifest.json", manifest(cfg, res))
    return report


# ------------------------------------------------------------------- verbs


def cmd_run(args) -> int:
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    out = Path(cfg.output_dir)
    try:
        res = execute(cfg, checkpoint_dir=out / "checkpoints" if cfg.checkpoint else None)
        report = write_artifacts(res, out)
    except Exception as exc:  # any failure inside a run maps to the runtime exit code
        log.debug("run failed", exc_info=True)
        return _error("runtime", f"{type(exc).__name__}: {exc}", EXIT_RUNTIME)
    print(json.dumps(_clean({"output_dir": str(out), "acceptance_rate": report["acceptance_rate"],
                             "omf_ess": report.get("omf_ess"), "K": report["K"]})))
    return EXIT_OK


def _load_run(d: Path) -> dict:
    rep_path = d / "report.json"
    if not rep_path.is_file():
        return {"dir": str(d), "error": "missing report.json"}
    try:
        rep = json.loads(rep_path.read_text(encoding="utf-8"))
    except json.JSONDecodeError as exc:
        return {"dir": str(d), "error": f"unreadable report.json: {exc}"}
    return {"dir": str(d), "report": rep}


def compare_runs(dirs) -> dict:
    """Side-by-side summary of completed run directories.

    Raises ``ConfigError`` when the completed runs come from different presets
    or fewer than two directories are given.
    """
    if len(dirs) < 2:
        raise ConfigError("compare needs at least two run directories")
    loaded = [_load_run(Path(d)) for d in dirs]
    presets = sorted({e["report"].get("preset") for e in loaded if "report" in e})
    if len(presets) > 1:
        raise ConfigError(f"runs come from different presets {presets}; refusing to compare")
    rows = []
    for e in loaded:
        if "error" in e:
            rows.append({"dir": e["dir"], "error": e["error"]})
            continue
        rep = e["report"]
        row = {"dir": e["dir"], "scheme": rep.get("scheme"), "seed": rep.get("seed"), "n": rep.get("n")}
        row.update({k: rep.get(k) for k in COMPARE_FIELDS})
        row["omf_acf"] = rep.get("omf_acf", [])
        rows.append(row)
    return {"preset": presets[0] if presets else None, "runs": rows}


def cmd_compare(args) -> int:
    try:
        table = compare_runs(args.run_dirs)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    out = Path(args.out)
    out.mkdir(parents=True, exist_ok=True)
    write_json(out / "comparison.json", table)
    cols = ["dir", "scheme", "seed", "n", *COMPARE_FIELDS, "error"]
    with open(out / "comparison.csv", "w", newline="", encoding="utf-8") as fh:
        w = csv.DictWriter(fh, fieldnames=cols, extrasaction="ignore", lineterminator="\r\n")
        w.writeheader()
        for row in table["runs"]:
            w.writerow({k: ("" if row.get(k) is None else row.get(k)) for k in cols})
    print(json.dumps({"output": str(out / "comparison.json"), "runs": len(table["runs"])}))
    return EXIT_OK


def cmd_preset(args) -> int:
    try:
        cfg = preset_defaults(args.name, desk=args.desk)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    print(json.dumps(_clean(cfg.to_dict()), indent=2, sort_keys=True))
    return EXIT_OK


def cmd_validate(args) -> int:
    try:
        cfg = resolve_config(args)
    except ConfigError as exc:
        return _error("config", str(exc), EXIT_CONFIG)
    print(json.dumps(_clean(cfg.to_dict()), indent=2, sort_keys=True))
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    p = argparse.ArgumentParser(prog="gmis", description=__doc__.splitlines()[0])
    p.add_argument("-v", "--verbose", action="store_true", help="log progress to stderr")
    sub = p.add_subparsers(dest="verb", required=True)

    def config_args(sp):
        sp.add_argument("--config", help="JSON config file; missing fields take preset defaults")
        sp.add_argument("--preset", choices=PRESETS)
        sp.add_argument("--scheme", choices=SCHEMES)
        sp.add_argument("--seed", type=int)
        sp.add_argument("--output-dir", dest="output_dir")
        sp.add_argument("--desk", action="store_true", help="divide draw counts by 10")
        sp.add_argument("--set", action="append", metavar="KEY=VALUE", help="override a config field (JSON value)")

    sp = sub.add_parser("run", help="run one sampler on one preset")
    config_args(sp)
    sp.set_defaults(func=cmd_run)

    sp = sub.add_parser("compare", help="tabulate diagnostics of completed runs")
    sp.add_argument("run_dirs", nargs="+")
    sp.add_argument("--out", default=".", help="directory for comparison.json/csv")
    sp.set_defaults(func=cmd_compare)

    sp = sub.add_parser("preset", help="print the parameters of a preset")
    sp.add_argument("name")
    sp.add_argument("--desk", action="store_true")
    sp.set_defaults(func=cmd_preset)

    sp = sub.add_parser("validate-config", help="resolve and check a config without running")
    config_args(sp)
    sp.set_defaults(func=cmd_validate)
    return p


def main(argv=None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return EXIT_OK if exc.code == 0 else EXIT_CONFIG
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(name)s: %(message)s")
    return args.func(args)


if __name__ == "__main__":
    sys.exit(main())
