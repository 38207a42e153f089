"""
Configuration-driven experiment runner.

Usage::

    relaydof klk --config configs/klk_k2_l3.json --out results/klk.csv
    relaydof khop --config configs/khop_genie_k4.json --format json
    relaydof formulas --out results/formulas.csv
    relaydof pairing-stats --config configs/pairing_stats.json

Every run appends one line to ``manifest.jsonl`` next to the output file
(or prints it to stderr when writing to stdout) with the config hash and
library version.
"""

from __future__ import annotations

import argparse
import csv
import dataclasses
import hashlib
import io
import json
import math
import sys
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .channels import GatingWindow
from .errors import ConfigError
from .klk import choose_extension_plan, simulate_klk_transmission
from .metrics import (RateReport, af_df_crossover, cutset_dof_upper, dof_formula_af,
                      dof_formula_df)
from .pairing import distribution_symmetry_check, median_delta_tot, simulate_khop

SCHEMES = ("klk", "khop-genie", "khop-queued", "formulas", "pairing-stats")
FORMATS = ("csv", "json")
RESULT_COLUMNS = ("scheme", "K", "L", "P_dB", "user", "rate", "trials", "failures",
                  "slope", "slope_hw", "seed")


@dataclass
class ExperimentConfig:
    """One experiment. Unused fields are ignored by the chosen scheme."""

    scheme: str = "formulas"
    K: int = 2
    L: int = 3
    L_max: int | None = None
    n: int = 1
    delta: float = 1e-3
    g_min: float = 0.05
    g_max: float = 3.0
    snr_grid_dB: list[float] = field(default_factory=lambda: [20.0, 30.0, 40.0, 50.0])
    trials: int = 200
    horizon: int = 100_000
    seed: int = 0
    workers: int = 1
    deltas: list[float] = field(default_factory=lambda: [0.1, 0.05, 0.025])
    draws: int = 500
    m: int = 2
    samples: int = 10_000
    out: str | None = None
    format: str = "csv"

    @classmethod
    def from_dict(cls, data: dict) -> "ExperimentConfig":
        names = {f.name for f in dataclasses.fields(cls)}
        unknown = sorted(set(data) - names)
        if unknown:
            raise ConfigError(f"unknown config field(s): {', '.join(unknown)}")
        cfg = cls(**data)
        cfg.validate()
        return cfg

    @classmethod
    def load(cls, path) -> "ExperimentConfig":
        try:
            data = json.loads(Path(path).read_text(encoding="utf-8"))
        except json.JSONDecodeError as exc:
            raise ConfigError(f"config {path}: invalid JSON ({exc})") from exc
        if not isinstance(data, dict):
            raise ConfigError(f"config {path}: top level must be an object")
        return cls.from_dict(data)

    def validate(self) -> None:
        def need(ok: bool, name: str, msg: str) -> None:
            if not ok:
                raise ConfigError(f"{name}: {msg} (got {getattr(self, name)!r})")

        need(self.scheme in SCHEMES, "scheme", f"must be one of {', '.join(SCHEMES)}")
        need(self.format in FORMATS, "format", "must be csv or json")
        for name in ("K", "L", "n", "trials", "horizon", "seed", "workers", "draws",
                     "m", "samples"):
            need(isinstance(getattr(self, name), int)
                 and not isinstance(getattr(self, name), bool), name, "must be an integer")
        need(self.K >= 2, "K", "must be at least 2")
        need(self.workers >= 1, "workers", "must be at least 1")
        if self.scheme in ("klk", "formulas"):
            need(self.L >= self.K, "L", "must be at least K")
        if self.L_max is not None:
            need(isinstance(self.L_max, int) and self.L_max >= self.L, "L_max",
                 "must be an integer at least L")
        if self.scheme.startswith("khop") or self.scheme == "pairing-stats":
            need(self.K % 2 == 0, "K", "K is even is required for the K-hop scheme")
        if self.scheme == "klk":
            need(self.n >= 1, "n", "must be positive")
        if self.scheme in ("klk", "khop-genie", "khop-queued"):
            snr = self.snr_grid_dB
            need(isinstance(snr, list) and len(snr) >= 1
                 and all(isinstance(x, (int, float)) and math.isfinite(x) for x in snr),
                 "snr_grid_dB", "must be a nonempty list of finite numbers")
            need(0 < self.g_min < self.g_max < math.inf, "g_min",
                 "gating window needs 0 < g_min < g_max")
        if self.scheme in ("klk", "khop-genie"):
            need(self.trials >= 1, "trials", "must be positive")
        if self.scheme.startswith("khop"):
            need(self.delta > 0, "delta", "must be positive")
        if self.scheme == "khop-queued":
            need(self.horizon >= 1, "horizon", "must be positive")
        if self.scheme == "pairing-stats":
            need(isinstance(self.deltas, list) and len(self.deltas) >= 1
                 and all(d > 0 for d in self.deltas), "deltas",
                 "must be a nonempty list of positive pitches")
            need(1 <= self.m <= self.K, "m", "must lie in 1..K")
            need(self.samples >= 1000, "samples", "must be at least 1000")
            need(self.draws >= 1, "draws", "must be positive")

    @property
    def window(self) -> GatingWindow:
        return GatingWindow(self.g_min, self.g_max)

    def config_hash(self) -> str:
        """SHA-256 of the canonical JSON of every field except output routing."""
        body = {k: v for k, v in dataclasses.asdict(self).items() if k not in ("out", "format")}
        blob = json.dumps(body, sort_keys=True, separators=(",", ":"))
        return hashlib.sha256(blob.encode()).hexdigest()


@dataclass
class Table:
    """Plain result table for schemes that produce no rate curve."""

    scheme: str
    columns: tuple[str, ...]
    rows: list[tuple]


def formula_table(K: int, L: int, L_max: int | None = None) -> Table:
    rows = []
    for l in range(L, (L_max or L) + 1):
        af, df = dof_formula_af(K, l), dof_formula_df(K, l)
        rows.append((K, l, str(af), float(af), str(df), float(df), cutset_dof_upper(K),
                     af >= df))
    return Table("formulas",
                 ("K", "L", "af", "af_value", "df", "df_value", "cutset", "af_ge_df"), rows)


def pairing_stats_table(cfg: ExperimentConfig) -> Table:
    rows = []
    for d in cfg.deltas:
        rows.append(("median_delta_tot", d, median_delta_tot(cfg.K, d, cfg.draws, cfg.seed,
                                                             cfg.window)))
    sym = distribution_symmetry_check(cfg.samples, cfg.m, cfg.seed, K=cfg.K)
    rows.append(("ks_pvalue", cfg.m, sym["ks_pvalue"]))
    rows.append(("ks_statistic", cfg.m, sym["ks_statistic"]))
    rows.append(("max_norm_error", cfg.m, sym["max_norm_error"]))
    return Table("pairing-stats", ("statistic", "parameter", "value"), rows)


def run_experiment(cfg: ExperimentConfig) -> tuple[RateReport | Table, dict]:
    """Dispatch to the simulator named by ``cfg.scheme``.

    Returns the result and a JSON-friendly summary.
    """
    cfg.validate()
    summary: dict = {"scheme": cfg.scheme, "seed": cfg.seed}
    if cfg.scheme == "formulas":
        table = formula_table(cfg.K, cfg.L, cfg.L_max)
        cross = af_df_crossover(cfg.K)
        summary["af_df_crossover"] = list(cross) if cross else None
        return table, summary
    if cfg.scheme == "pairing-stats":
        return pairing_stats_table(cfg), summary
    snr = np.asarray(cfg.snr_grid_dB, dtype=float)
    if cfg.scheme == "klk":
        plan = choose_extension_plan(cfg.K, cfg.L, cfg.n)
        report = simulate_klk_transmission(plan, cfg.window, snr, cfg.trials, cfg.seed,
                                           workers=cfg.workers)
        summary.update(plan=dataclasses.asdict(plan),
                       alignment_pass_rate=report.extras["alignment_pass_rate"],
                       max_residual=report.extras["max_residual"])
    else:
        mode = cfg.scheme.split("-", 1)[1]
        report = simulate_khop(cfg.K, cfg.delta, cfg.window, snr, cfg.trials, mode=mode,
                               seed=cfg.seed, horizon=cfg.horizon, workers=cfg.workers)
        if mode == "queued":
            ex = report.extras
            summary.update(delivered=ex["delivered"], conserved=ex["conserved"],
                           throughput=ex["throughput"],
                           residuals_within_bound=bool(np.all(ex["residuals"] <= ex["bounds"])))
    summary.update(slope=report.slope, slope_hw=report.slope_hw, trials=report.trials,
                   failures=report.failures)
    return report, summary


def report_rows(report: RateReport) -> list[tuple]:
    rows = []
    if report.samples.shape[0] == 0:
        return rows
    rates = report.user_rates
    for p, snr in enumerate(report.snr_db):
        for k in range(report.K):
            rows.append((report.scheme, report.K, report.L, float(snr), k + 1,
                         float(rates[p, k]), report.trials, report.failures,
                         float(report.slope), float(report.slope_hw), report.seed))
    return rows


def _json_value(v):
    if isinstance(v, (bool, np.bool_)):
        return bool(v)
    if isinstance(v, (float, np.floating)):
        return None if not math.isfinite(v) else float(v)
    if isinstance(v, np.integer):
        return int(v)
    return v


def render(result: RateReport | Table, fmt: str) -> str:
    """Serialize deterministically; floats use their shortest round-trip form."""
    if isinstance(result, RateReport):
        columns, rows = RESULT_COLUMNS, report_rows(result)
    else:
        columns, rows = result.columns, result.rows
    if fmt == "csv":
        buf = io.StringIO()
        writer = csv.writer(buf, lineterminator="\n")
        writer.writerow(columns)
        for row in rows:
            writer.writerow([repr(float(v)) if isinstance(v, (float, np.floating)) else v
                             for v in row])
        return buf.getvalue()
    if fmt == "json":
        records = [{c: _json_value(v) for c, v in zip(columns, row)} for row in rows]
        return json.dumps({"columns": list(columns), "records": records}, indent=2) + "\n"
    raise ConfigError(f"format: must be csv or json (got {fmt!r})")


def emit_results(result: RateReport | Table, fmt: str, path=None) -> str:
    """Write `result` to `path` (stdout when ``None``) and return the text."""
    text = render(result, fmt)
    if path is None:
        sys.stdout.write(text)
    else:
        path = Path(path)
        path.parent.mkdir(parents=True, exist_ok=True)
        with open(path, "w", encoding="utf-8", newline="\n") as fh:
            fh.write(text)
    return text


def manifest_line(cfg: ExperimentConfig, text: str) -> str:
    return json.dumps({
        "config_sha256": cfg.config_hash(),
        "version": __version__,
        "scheme": cfg.scheme,
        "seed": cfg.seed,
        "output": cfg.out,
        "output_sha256": hashlib.sha256(text.encode()).hexdigest(),
    }, sort_keys=True)


def write_manifest(cfg: ExperimentConfig, text: str) -> None:
    line = manifest_line(cfg, text)
    if cfg.out is None:
        print(line, file=sys.stderr)
        return
    with open(Path(cfg.out).parent / "manifest.jsonl", "a", encoding="utf-8",
              newline="\n") as fh:
        fh.write(line + "\n")


_SUBCOMMAND_SCHEMES = {
    "klk": ("klk",),
    "khop": ("khop-genie", "khop-queued"),
    "formulas": ("formulas",),
    "pairing-stats": ("pairing-stats",),
}


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="relaydof", description=__doc__.split("\n")[1])
    parser.add_argument("--version", action="version", version=f"relaydof {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)
    for name in _SUBCOMMAND_SCHEMES:
        p = sub.add_parser(name)
        p.add_argument("--config", type=Path, help="JSON file with ExperimentConfig fields")
        p.add_argument("--seed", type=int)
        p.add_argument("--out", help="output file (stdout when omitted)")
        p.add_argument("--format", choices=FORMATS)
    return parser


def config_from_args(args) -> ExperimentConfig:
    data = {}
    if args.config is not None:
        try:
            data = json.loads(args.config.read_text(encoding="utf-8"))
        except (OSError, json.JSONDecodeError) as exc:
            raise ConfigError(f"config: cannot read {args.config} ({exc})") from exc
    allowed = _SUBCOMMAND_SCHEMES[args.command]
    data.setdefault("scheme", allowed[0])
    if data["scheme"] not in allowed:
        raise ConfigError(f"scheme: subcommand {args.command!r} runs "
                          f"{' or '.join(allowed)} (got {data['scheme']!r})")
    for name in ("seed", "out", "format"):
        value = getattr(args, name)
        if value is not None:
            data[name] = value
    return ExperimentConfig.from_dict(data)


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        cfg = config_from_args(args)
        result, summary = run_experiment(cfg)
    except ConfigError as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    text = emit_results(result, cfg.format, cfg.out)
    write_manifest(cfg, text)
    if cfg.out is not None:
        print(json.dumps({k: _json_value(v) for k, v in summary.items()}, sort_keys=True))
    return 0


if __name__ == "__main__":
    raise SystemExit(main())
