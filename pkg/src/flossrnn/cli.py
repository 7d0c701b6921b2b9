"""Declarative experiment runner.

Configs are line-oriented ``key = value`` text with one optional
``[overrides]`` section; see the repository README for the grammar. Runs
fan out across seeds with a bounded process pool, write one CSV per result
table plus a manifest with per-file checksums, and are reproducible
byte-for-byte under a fixed config.

Exit codes: 0 success, 1 validation failure, 2 runtime failure.
"""

from __future__ import annotations

import argparse
import concurrent.futures
import hashlib
import json
import os
import sys
import time
from dataclasses import dataclass, field

from . import experiments, svgplot

__version__ = "0.1.0"

ENV_WORKERS = "FLOSSRNN_WORKERS"


@dataclass
class Finding:
    key: str
    message: str

    def __str__(self):
        return f"{self.key}: {self.message}"


@dataclass
class ExperimentConfig:
    name: str = "run"
    preset: str = ""
    seeds: tuple = (0,)
    output_dir: str = "out"
    workers: int = 0  # 0 = resolve from env or 1
    overrides: dict = field(default_factory=dict)


def parse_config(text: str) -> ExperimentConfig:
    cfg = ExperimentConfig()
    section = None
    for lineno, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = line[1:-1].strip()
            if section != "overrides":
                raise ValueError(f"line {lineno}: unknown section [{section}]")
            continue
        if "=" not in line:
            raise ValueError(f"line {lineno}: expected key = value")
        key, val = (s.strip() for s in line.split("=", 1))
        if section == "overrides":
            cfg.overrides[key] = val
        elif key == "name":
            cfg.name = val
        elif key == "preset":
            cfg.preset = val
        elif key == "seeds":
            cfg.seeds = tuple(int(s) for s in val.split(",") if s.strip()) \
                if val.strip() else ()
        elif key == "output_dir":
            cfg.output_dir = val
        elif key == "workers":
            cfg.workers = int(val)
        else:
            raise ValueError(f"line {lineno}: unknown key {key!r}")
    return cfg


def canonical_text(cfg: ExperimentConfig) -> str:
    lines = [
        f"name = {cfg.name}",
        f"preset = {cfg.preset}",
        "seeds = " + ",".join(str(s) for s in cfg.seeds),
        f"output_dir = {cfg.output_dir}",
        f"workers = {cfg.workers}",
    ]
    if cfg.overrides:
        lines.append("[overrides]")
        lines += [f"{k} = {cfg.overrides[k]}" for k in sorted(cfg.overrides)]
    return "\n".join(lines) + "\n"


def _coerce(key: str, raw: str, default):
    if isinstance(default, bool):
        if raw.lower() in ("true", "1", "yes"):
            return True
        if raw.lower() in ("false", "0", "no"):
            return False
        raise ValueError(f"{key}: expected a boolean, got {raw!r}")
    if isinstance(default, int):
        return int(raw)
    if isinstance(default, float):
        return float(raw)
    if isinstance(default, tuple):
        parts = [p.strip() for p in raw.split(",") if p.strip()]
        if default and isinstance(default[0], (int,)) and \
                not isinstance(default[0], bool):
            return tuple(int(p) for p in parts)
        if default and isinstance(default[0], float):
            return tuple(float(p) for p in parts)
        return tuple(parts)
    return raw  # strings pass through ("uniform", task names, ...)


def merged_options(cfg: ExperimentConfig):
    """Defaults plus typed overrides; raises ValueError on unknown keys."""
    _, defaults, _ = experiments.PRESETS[cfg.preset]
    opts = dict(defaults)
    for key, raw in cfg.overrides.items():
        if key not in defaults:
            raise ValueError(f"unknown override key {key!r} for preset "
                             f"{cfg.preset!r}")
        opts[key] = _coerce(key, raw, defaults[key])
    return opts


def validate(cfg: ExperimentConfig) -> list[Finding]:
    """All violations, without executing any model code."""
    findings: list[Finding] = []
    if cfg.preset not in experiments.PRESETS:
        findings.append(Finding("preset", f"unknown preset {cfg.preset!r}"))
        return findings
    try:
        opts = merged_options(cfg)
    except ValueError as exc:
        findings.append(Finding("overrides", str(exc)))
        return findings
    for msg in experiments.preset_check(cfg.preset, opts):
        findings.append(Finding(cfg.preset, msg))
    return findings


# -- bundle writing -----------------------------------------------------------

def _fmt_cell(v) -> str:
    if isinstance(v, float):
        return "%.17g" % v
    return str(v)


def _atomic_write(path: str, data: str) -> None:
    tmp = path + ".tmp"
    with open(tmp, "w", newline="") as fh:
        fh.write(data)
    os.replace(tmp, path)


def _write_csv(path: str, header, rows) -> None:
    lines = [",".join(header)]
    lines += [",".join(_fmt_cell(c) for c in row) for row in rows]
    _atomic_write(path, "\n".join(lines) + "\n")


def _sha256_file(path: str) -> str:
    h = hashlib.sha256()
    with open(path, "rb") as fh:
        for chunk in iter(lambda: fh.read(65536), b""):
            h.update(chunk)
    return h.hexdigest()


def _seed_worker(args):
    preset_name, opts, seed = args
    fn, _, _ = experiments.PRESETS[preset_name]
    return seed, fn(opts, seed)


def run(cfg: ExperimentConfig, resume: bool = False) -> str:
    """Execute the preset across seeds; returns the bundle directory."""
    findings = validate(cfg)
    if findings:
        raise ValueError("; ".join(str(f) for f in findings))
    opts = merged_options(cfg)
    outdir = cfg.output_dir
    shard_dir = os.path.join(outdir, "shards")
    os.makedirs(shard_dir, exist_ok=True)
    t0 = time.monotonic()

    jobs = []
    per_seed: dict[int, dict] = {}
    for seed in cfg.seeds:
        shard = os.path.join(shard_dir, f"seed_{seed}.json")
        if resume and os.path.exists(shard):
            with open(shard) as fh:
                per_seed[seed] = json.load(fh)
        else:
            jobs.append((cfg.preset, opts, seed))

    workers = cfg.workers or int(os.environ.get(ENV_WORKERS, "1"))
    if workers > 1 and len(jobs) > 1:
        with concurrent.futures.ProcessPoolExecutor(max_workers=workers) as ex:
            for seed, result in ex.map(_seed_worker, jobs):
                per_seed[seed] = result
    else:
        for job in jobs:
            seed, result = _seed_worker(job)
            per_seed[seed] = result
    for seed, result in per_seed.items():
        shard = os.path.join(shard_dir, f"seed_{seed}.json")
        _atomic_write(shard, json.dumps(result))

    tables: dict[str, list] = {}
    for seed in cfg.seeds:  # merge in seed order for determinism
        for name, rows in per_seed[seed].items():
            tables.setdefault(name, []).extend(rows)
    files = {}
    for name, rows in sorted(tables.items()):
        path = os.path.join(outdir, f"{name}.csv")
        _write_csv(path, experiments.CSV_HEADERS[name], rows)
        files[f"{name}.csv"] = _sha256_file(path)

    config_text = canonical_text(cfg)
    _atomic_write(os.path.join(outdir, "config.txt"), config_text)
    manifest = {
        "name": cfg.name,
        "preset": cfg.preset,
        "config_hash": hashlib.sha256(config_text.encode()).hexdigest(),
        "seeds": list(cfg.seeds),
        "code_version": __version__,
        "wall_clock_s": round(time.monotonic() - t0, 3),
        "files": files,
    }
    _atomic_write(os.path.join(outdir, "manifest.json"),
                  json.dumps(manifest, indent=2, sort_keys=True) + "\n")
    return outdir


def verify_bundle(outdir: str) -> list[str]:
    """Mismatches between the manifest and the bundle contents."""
    problems = []
    with open(os.path.join(outdir, "manifest.json")) as fh:
        manifest = json.load(fh)
    with open(os.path.join(outdir, "config.txt")) as fh:
        config_text = fh.read()
    if hashlib.sha256(config_text.encode()).hexdigest() != manifest["config_hash"]:
        problems.append("config.txt does not match the manifest hash")
    for name, digest in manifest["files"].items():
        path = os.path.join(outdir, name)
        if not os.path.exists(path):
            problems.append(f"{name} missing")
        elif _sha256_file(path) != digest:
            problems.append(f"{name} checksum mismatch")
    return problems


# -- reporting ----------------------------------------------------------------

def _read_csv(path: str):
    with open(path) as fh:
        lines = [ln.rstrip("\n") for ln in fh if ln.strip()]
    header = lines[0].split(",")
    rows = [dict(zip(header, ln.split(","))) for ln in lines[1:]]
    return header, rows


def _median(xs):
    xs = sorted(xs)
    n = len(xs)
    if n == 0:
        return float("nan")
    mid = n // 2
    return xs[mid] if n % 2 else 0.5 * (xs[mid - 1] + xs[mid])


def _series_by(rows, group_keys, xkey, ykey):
    groups: dict[tuple, list] = {}
    for r in rows:
        if r[ykey] == "":
            continue
        key = tuple(r[k] for k in group_keys)
        groups.setdefault(key, []).append((float(r[xkey]), float(r[ykey])))
    out = []
    for key in sorted(groups):
        pts = sorted(groups[key])
        label = "/".join(key)
        out.append((label, [p[0] for p in pts], [p[1] for p in pts]))
    return out


def _report_checks(outdir: str) -> list[tuple[str, str, str, bool]]:
    """(check, measured, threshold, passed) rows computable from the CSVs."""
    checks = []
    p = os.path.join(outdir, "lambda_targets.csv")
    if os.path.exists(p):
        _, rows = _read_csv(p)
        by_target: dict[str, dict[str, tuple]] = {}
        for r in rows:
            cur = by_target.setdefault(r["target"], {})
            prev = cur.get(r["seed"])
            if prev is None or int(r["epoch"]) > prev[0]:
                cur[r["seed"]] = (int(r["epoch"]), float(r["lambda_1"]))
        for target, seeds in sorted(by_target.items()):
            hits = sum(abs(lam - float(target)) < 0.1
                       for _, lam in seeds.values())
            frac = hits / len(seeds)
            checks.append((f"first exponent within 0.1 of {target}",
                           f"{hits}/{len(seeds)} seeds", ">= 80%",
                           frac >= 0.8))
    p = os.path.join(outdir, "condition.csv")
    if os.path.exists(p):
        _, rows = _read_csv(p)
        hmax = max(int(r["horizon"]) for r in rows)
        rel = [abs(float(r["log_kappa_estimate"]) - float(r["log_kappa_direct"]))
               / abs(float(r["log_kappa_direct"]))
               for r in rows if int(r["horizon"]) == hmax]
        med = _median(rel)
        checks.append((f"estimate vs direct log-kappa at horizon {hmax}",
                       f"median rel err {med:.3f}", "< 0.10", med < 0.10))
    p = os.path.join(outdir, "usable_dims.csv")
    if os.path.exists(p):
        _, rows = _read_csv(p)
        fl = [int(r["m_usable"]) for r in rows if r["variant"] == "flossed"]
        un = [int(r["m_usable"]) for r in rows if r["variant"] == "unflossed"]
        if fl and un:
            ok = _median(fl) >= _median(un)
            checks.append(("usable dimensions, flossed vs unflossed",
                           f"median {_median(fl)} vs {_median(un)}",
                           "flossed >= unflossed", ok))
    p = os.path.join(outdir, "prefloss_copy.csv")
    if os.path.exists(p):
        _, rows = _read_csv(p)
        final: dict[str, dict[str, tuple]] = {}
        for r in rows:
            cur = final.setdefault(r["arm"], {})
            prev = cur.get(r["seed"])
            if prev is None or int(r["epoch"]) > prev[0]:
                cur[r["seed"]] = (int(r["epoch"]), float(r["test_loss"]))
        if "prefloss" in final and "none" in final:
            mp_ = _median([v for _, v in final["prefloss"].values()])
            mn = _median([v for _, v in final["none"].values()])
            checks.append(("final copy-task error, preflossed vs baseline",
                           f"median {mp_:.4g} vs {mn:.4g}",
                           "preflossed < baseline", mp_ < mn))
    for name in ("during_xor.csv", "orthogonal_xor.csv"):
        p = os.path.join(outdir, name)
        if os.path.exists(p):
            _, rows = _read_csv(p)
            best: dict[str, dict[str, float]] = {}
            for r in rows:
                if r["test_accuracy"] == "":
                    continue
                cur = best.setdefault(r["arm"], {})
                acc = float(r["test_accuracy"])
                cur[r["seed"]] = max(cur.get(r["seed"], 0.0), acc)
            if "during" in best and "none" in best:
                sep = _median(list(best["during"].values())) - \
                    _median(list(best["none"].values()))
                checks.append((f"{name}: accuracy separation during vs none",
                               f"median gap {sep:.3f}", ">= 0.2", sep >= 0.2))
    return checks


_PLOTS = {
    "lambda_targets.csv": (("target",), "epoch", "lambda_1",
                           "first exponent vs epoch", False),
    "spectrum.csv": (("k_flossed",), "i", "lambda_i",
                     "spectrum after flossing", False),
    "condition.csv": (("variant",), "horizon", "log_kappa_direct",
                      "log condition number vs horizon", False),
    "prefloss_copy.csv": (("arm",), "epoch", "test_loss",
                          "copy-task test error", True),
    "during_xor.csv": (("arm",), "epoch", "test_accuracy",
                       "XOR test accuracy", False),
    "orthogonal_xor.csv": (("arm",), "epoch", "test_accuracy",
                           "XOR test accuracy (orthogonal init)", False),
    "ksweep.csv": (("k_floss",), "delay", "final_accuracy",
                   "accuracy vs delay per flossed count", False),
    "lstm_relu.csv": (("kind",), "epoch", "lambda_1",
                      "first exponent vs epoch", False),
    "convergence.csv": (("i",), "t", "lambda_i_running",
                        "running exponent estimates", False),
}


def report(outdir: str) -> str:
    """Verify the bundle, emit SVG plots and a markdown summary."""
    problems = verify_bundle(outdir)
    if problems:
        raise RuntimeError("bundle integrity: " + "; ".join(problems))
    with open(os.path.join(outdir, "manifest.json")) as fh:
        manifest = json.load(fh)
    lines = [f"# Report: {manifest['name']}", "",
             f"preset: `{manifest['preset']}`  ",
             f"seeds: {manifest['seeds']}  ",
             f"wall clock: {manifest['wall_clock_s']} s", ""]
    made_plots = []
    for fname in sorted(manifest["files"]):
        if fname not in _PLOTS:
            continue
        group, xkey, ykey, title, logy = _PLOTS[fname]
        _, rows = _read_csv(os.path.join(outdir, fname))
        series = _series_by(rows, group, xkey, ykey)
        if not series:
            continue
        svg = fname.replace(".csv", ".svg")
        svgplot.line_plot(series, title, xkey, ykey,
                          os.path.join(outdir, svg), logy=logy)
        made_plots.append(svg)
    if made_plots:
        lines.append("## Plots")
        lines += [f"- ![{s}]({s})" for s in made_plots]
        lines.append("")
    checks = _report_checks(outdir)
    if checks:
        lines.append("## Checks")
        lines.append("| check | measured | threshold | status |")
        lines.append("|---|---|---|---|")
        for name, measured, threshold, ok in checks:
            status = "pass" if ok else "FAIL"
            lines.append(f"| {name} | {measured} | {threshold} | {status} |")
        lines.append("")
    path = os.path.join(outdir, "REPORT.md")
    _atomic_write(path, "\n".join(lines) + "\n")
    return path


# -- command line -------------------------------------------------------------

def _load_config(args) -> ExperimentConfig:
    with open(args.config) as fh:
        cfg = parse_config(fh.read())
    if args.seeds is not None:
        cfg.seeds = tuple(int(s) for s in args.seeds.split(",") if s.strip())
    if args.workers is not None:
        cfg.workers = args.workers
    if args.output is not None:
        cfg.output_dir = args.output
    return cfg


def main(argv=None) -> int:
    parser = argparse.ArgumentParser(prog="flossrnn",
                                     description="experiment runner")
    sub = parser.add_subparsers(dest="verb", required=True)
    for verb in ("run", "validate"):
        sp = sub.add_parser(verb)
        sp.add_argument("--config", required=True)
        sp.add_argument("--seeds", default=None,
                        help="comma-separated seed list (overrides config)")
        sp.add_argument("--workers", type=int, default=None)
        sp.add_argument("--output", default=None)
        if verb == "run":
            sp.add_argument("--resume", action="store_true")
    sp = sub.add_parser("report")
    sp.add_argument("--output", required=True, help="bundle directory")
    sub.add_parser("list-presets")
    args = parser.parse_args(argv)

    if args.verb == "list-presets":
        for name, (_, defaults, desc) in sorted(experiments.PRESETS.items()):
            print(f"{name}: {desc}")
            keys = ", ".join(sorted(defaults))
            print(f"    overrides: {keys}")
        return 0
    if args.verb == "validate":
        try:
            cfg = _load_config(args)
        except (OSError, ValueError) as exc:
            print(f"config error: {exc}", file=sys.stderr)
            return 1
        findings = validate(cfg)
        for f in findings:
            print(str(f))
        return 1 if findings else 0
    if args.verb == "report":
        try:
            path = report(args.output)
        except (OSError, RuntimeError, ValueError) as exc:
            print(f"report error: {exc}", file=sys.stderr)
            return 2
        print(path)
        return 0
    # run
    try:
        cfg = _load_config(args)
    except (OSError, ValueError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 1
    findings = validate(cfg)
    if findings:
        for f in findings:
            print(str(f), file=sys.stderr)
        return 1
    try:
        outdir = run(cfg, resume=args.resume)
    except Exception as exc:  # runtime failure surfaces with context
        print(f"run failed [{cfg.preset}]: {exc}", file=sys.stderr)
        return 2
    print(outdir)
    return 0


if __name__ == "__main__":
    sys.exit(main())
