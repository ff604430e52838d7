"""Batch experiment runner.

Subcommands
-----------
silt-validate   Monte Carlo means of smoothed intersection times against
                their exact and asymptotic values.
trace / mass    Feynman-Kac moment series over a (t, kappa) grid.
recover         Geometry and coupling estimates from series CSVs.
minkowski       Boundary-neighborhood areas over an r grid plus the
                dimension fit, optionally also from a mass series.

All outputs are CSV with a comment header carrying the schema version,
a config fingerprint, and the resolved configuration.  Reruns with the
same config and seed are byte-identical for any worker count.  Exit
codes: 0 pass, 1 usage or schema error, 2 statistical-quality failure.
"""

from __future__ import annotations

import argparse
import configparser
import csv
import hashlib
import math
import sys
from pathlib import Path

import numpy as np

from . import local_times as lt
from .feynman_kac import (
    FkConfig,
    domain_tag,
    estimate_mass_mean,
    estimate_trace_mean,
)
from .geometry import (
    Disk,
    KochPrefractal,
    Rectangle,
    SimplePolygon,
    boundary_neighborhood_area,
    minkowski_fit,
)
from .paths import sample_bridge_batch, sample_motion_batch
from .recovery import (
    RATE_CONDITION,
    recover_area,
    recover_kappa2,
    recover_minkowski,
    recover_perimeter,
)
from .spectral import disk_model, heat_content, heat_trace, rectangle_model
from . import streams

SCHEMA = "anderson-lab/v1"

TRACE_COLUMNS = [
    "t", "kappa", "estimate", "std_error", "prefactor", "n_outer",
    "n_steps", "eps", "overflow_count", "reference", "ref_gap",
]


class UsageError(Exception):
    """Configuration or input-schema problem: exit code 1."""


class QualityError(Exception):
    """Statistical-quality problem: exit code 2 (output already written)."""


def _fmt(x) -> str:
    if x is None:
        return ""
    if isinstance(x, (bool, np.bool_)):
        return "true" if x else "false"
    if isinstance(x, (int, np.integer)):
        return str(int(x))
    if isinstance(x, (float, np.floating)):
        return repr(float(x))
    return str(x)


def fingerprint_of(parts) -> str:
    text = "|".join(str(p) for p in parts)
    return hashlib.sha256(text.encode()).hexdigest()[:12]


def write_csv(path: Path, columns, rows, fingerprint: str, meta: dict):
    path.parent.mkdir(parents=True, exist_ok=True)
    with open(path, "w", newline="") as fh:
        fh.write(f"# schema={SCHEMA}\n")
        fh.write(f"# fingerprint={fingerprint}\n")
        for key in sorted(meta):
            fh.write(f"# {key}={_fmt(meta[key])}\n")
        writer = csv.writer(fh)
        writer.writerow(columns)
        for row in rows:
            writer.writerow([_fmt(v) for v in row])


def read_csv(path: Path):
    """Read one of our CSVs back: (fingerprint, meta, column list, rows)."""
    if not path.exists():
        raise UsageError(f"input file {path} does not exist")
    meta = {}
    fingerprint = None
    schema = None
    header = None
    rows = []
    with open(path, newline="") as fh:
        for line in fh:
            line = line.rstrip("\n")
            if line.startswith("# "):
                key, _, value = line[2:].partition("=")
                meta[key] = value
            elif line.startswith("#"):
                key, _, value = line[1:].partition("=")
                meta[key.strip()] = value
            elif header is None:
                header = next(csv.reader([line]))
            else:
                rows.append(next(csv.reader([line])))
    schema = meta.pop("schema", None)
    fingerprint = meta.pop("fingerprint", None)
    if schema != SCHEMA:
        raise UsageError(f"{path} does not carry schema {SCHEMA}")
    if fingerprint is None:
        raise UsageError(f"{path} has no fingerprint header")
    if header is None:
        raise UsageError(f"{path} has no column header")
    return fingerprint, meta, header, rows


def _column(header, rows, name, cast=float):
    if name not in header:
        raise UsageError(f"missing column {name!r}")
    i = header.index(name)
    out = []
    for row in rows:
        cell = row[i]
        out.append(cast(cell) if cell != "" else None)
    return out


# -- configuration ----------------------------------------------------------


def load_config(path: str) -> configparser.ConfigParser:
    parser = configparser.ConfigParser()
    found = parser.read(path)
    if not found:
        raise UsageError(f"config file {path} not found")
    return parser


def _get(section, key, cast, default=None, required=False):
    if key not in section:
        if required:
            raise UsageError(f"missing config key {key!r} in [{section.name}]")
        return default
    raw = section.get(key)
    try:
        if cast is bool:
            return section.getboolean(key)
        return cast(raw)
    except ValueError as exc:
        raise UsageError(f"bad value for {key!r}: {raw!r}") from exc


def _floats(section, key, required=False, default=()):
    raw = section.get(key, None)
    if raw is None:
        if required:
            raise UsageError(f"missing config key {key!r} in [{section.name}]")
        return list(default)
    try:
        return [float(tok) for tok in raw.replace(",", " ").split()]
    except ValueError as exc:
        raise UsageError(f"bad value for {key!r}: {raw!r}") from exc


def parse_domain(config: configparser.ConfigParser):
    if "domain" not in config:
        raise UsageError("config needs a [domain] section")
    section = config["domain"]
    kind = _get(section, "kind", str, required=True)
    if kind == "rectangle":
        a = _get(section, "a", float, required=True)
        b = _get(section, "b", float, required=True)
        return Rectangle(a, b)
    if kind == "disk":
        return Disk(_get(section, "radius", float, required=True))
    if kind == "koch":
        level = _get(section, "level", int, required=True)
        side = _get(section, "side", float, default=1.0)
        return KochPrefractal(level, side)
    if kind == "polygon":
        raw = _floats(section, "vertices", required=True)
        if len(raw) < 6 or len(raw) % 2:
            raise UsageError("polygon vertices need an even count of at least 6 numbers")
        return SimplePolygon(np.asarray(raw).reshape(-1, 2))
    raise UsageError(f"unknown domain kind {kind!r}")


def spectral_model_for(domain, t_min: float):
    """Exact eigendata when the domain supports it, else None."""
    margin = 0.5  # certify a bit below the smallest requested time
    if isinstance(domain, Rectangle):
        from .spectral import cutoff_for_time

        return rectangle_model(domain.a, domain.b, cutoff_for_time(
            domain.area(), margin * t_min))
    if isinstance(domain, Disk):
        from .spectral import cutoff_for_time

        return disk_model(domain.radius, cutoff_for_time(
            domain.area(), margin * t_min))
    return None


def _fk_config(section, seed: int, workers: int) -> FkConfig:
    return FkConfig(
        n_outer=_get(section, "n_outer", int, required=True),
        eps=_get(section, "eps", float, default=None),
        eps_scale=_get(section, "eps_scale", float, default=1e-3),
        n_steps=_get(section, "n_steps", int, default=512),
        n_paths_per_x=_get(section, "n_paths_per_x", int, default=1),
        exit_correction=_get(section, "exit_correction", bool, default=True),
        kernel_truncation=_get(section, "kernel_truncation", bool, default=True),
        seed=seed,
        exponent_cap=_get(section, "exponent_cap", float, default=30.0),
        workers=workers,
    )


# -- silt-validate ----------------------------------------------------------


def _parse_region(token: str, t: float):
    token = token.strip()
    if token == "triangle":
        return lt.Triangle(t)
    parts = token.split(":")
    try:
        if parts[0] == "diag" and len(parts) == 3:
            return lt.DiagBlock(float(parts[1]), float(parts[2]))
        if parts[0] == "rect" and len(parts) == 5:
            return lt.Rect(*(float(p) for p in parts[1:]))
    except ValueError as exc:
        raise UsageError(f"bad region {token!r}: {exc}") from exc
    raise UsageError(f"unknown region spec {token!r}")


def _silt_mc(kind: str, region, t: float, eps: float, n_steps: int,
             n_mc: int, seed: int):
    key = streams.run_key("silt-validate", kind, repr(region), float(t),
                          float(eps), int(n_steps))
    summaries = []
    for block_index, size in streams.block_ranges(n_mc):
        rng = streams.block_stream(seed, key, block_index)
        starts = np.zeros((size, 2))
        if kind == "bridge":
            pos = sample_bridge_batch(starts, t, n_steps, rng)
        else:
            pos = sample_motion_batch(starts, t, n_steps, rng)
        if isinstance(region, lt.Triangle):
            vals = lt.silt_batch_triangle(pos, t, eps)
        else:
            vals = np.array([
                lt._pair_sum_region(pos[i], t, eps, region, True)
                for i in range(size)
            ])
        summaries.append(streams.MomentSummary.from_samples(vals))
    total = streams.merge_summaries(summaries)
    return total.mean, total.std_error


def cmd_silt_validate(config, out_dir: Path, seed: int, workers: int) -> int:
    if "silt-validate" not in config:
        raise UsageError("config needs a [silt-validate] section")
    section = config["silt-validate"]
    t = _get(section, "t", float, required=True)
    if t <= 0:
        raise UsageError("t must be positive")
    eps_values = _floats(section, "eps_values", required=True)
    if not eps_values or any(e <= 0 for e in eps_values):
        raise UsageError("eps_values must be positive")
    kinds = [k.strip() for k in section.get("kinds", "motion,bridge").split(",") if k.strip()]
    for kind in kinds:
        if kind not in ("motion", "bridge"):
            raise UsageError(f"unknown path kind {kind!r}")
    region_tokens = [r.strip() for r in section.get("regions", "triangle").split(",") if r.strip()]
    if not region_tokens:
        raise UsageError("regions must name at least one region")
    n_mc = _get(section, "n_mc", int, required=True)
    n_steps = _get(section, "n_steps", int, default=512)
    if n_mc < 2 or n_steps < 2:
        raise UsageError("n_mc and n_steps must be at least 2")

    fingerprint = fingerprint_of([
        SCHEMA, "silt-validate", repr(float(t)), repr(eps_values), kinds,
        region_tokens, n_mc, n_steps, seed,
    ])
    rows = []
    failures = []
    for kind in kinds:
        for token in region_tokens:
            region = _parse_region(token, t)
            for eps in eps_values:
                mc_mean, mc_se = _silt_mc(kind, region, t, eps, n_steps, n_mc, seed)
                if kind == "bridge":
                    exact = lt.silt_mean_bridge_exact(t, eps, region=region, n_steps=n_steps)
                else:
                    exact = lt.silt_mean_motion_exact(t, eps, region=region, n_steps=n_steps)
                try:
                    asym = lt.silt_mean_asymptotic(t, eps, kind, region=region)
                except ValueError:
                    asym = None
                z = (mc_mean - exact) / mc_se if mc_se > 0 else 0.0
                rows.append([t, eps, kind, token, n_mc, n_steps,
                             mc_mean, mc_se, exact, asym, z])
                if abs(mc_mean - exact) > 3.0 * mc_se:
                    failures.append((kind, token, eps, z))
    write_csv(
        out_dir / "silt_validate.csv",
        ["t", "eps", "kind", "region", "n_mc", "n_steps",
         "mc_mean", "mc_se", "exact_mean", "asymptotic_mean", "z"],
        rows, fingerprint,
        {"command": "silt-validate", "seed": seed, "t": t, "n_mc": n_mc,
         "n_steps": n_steps},
    )
    if failures:
        for kind, token, eps, z in failures:
            print(f"FAIL {kind}/{token} eps={eps!r}: |z| = {abs(z):.2f} > 3",
                  file=sys.stderr)
        return 2
    return 0


# -- trace / mass -----------------------------------------------------------


def _series_fingerprint(command: str, domain, t_grid, cfg: FkConfig, cv: bool) -> str:
    # The fingerprint identifies the campaign (domain, grid, sampling
    # parameters, seed), not the estimator: trace and mass series from
    # the same campaign are compatible recovery inputs, as are series
    # differing only in their kappa lists.
    return fingerprint_of([
        SCHEMA, domain_tag(domain), repr([float(t) for t in t_grid]),
        cfg.eps, cfg.eps_scale, cfg.n_steps, cfg.n_outer, cfg.n_paths_per_x,
        cfg.exit_correction, cfg.kernel_truncation, cfg.exponent_cap,
        cfg.seed, cv,
    ])


def _run_series(command: str, config, out_dir: Path, seed: int, workers: int) -> int:
    if command not in config:
        raise UsageError(f"config needs a [{command}] section")
    section = config[command]
    domain = parse_domain(config)
    t_grid = _floats(section, "t_grid", required=True)
    if not t_grid or any(t <= 0 for t in t_grid):
        raise UsageError("t_grid must be positive")
    kappas = _floats(section, "kappas", required=True)
    cfg = _fk_config(section, seed, workers)
    control_variate = _get(section, "control_variate", bool, default=True)
    model = None
    if control_variate:
        model = spectral_model_for(domain, min(t_grid))
    estimate = estimate_trace_mean if command == "trace" else estimate_mass_mean
    reference_fn = heat_trace if command == "trace" else heat_content

    fingerprint = _series_fingerprint(command, domain, t_grid, cfg, model is not None)
    rows = []
    breached = 0
    for t in t_grid:
        for kappa in kappas:
            est = estimate(domain, kappa, t, cfg, model)
            reference = None
            ref_gap = None
            if kappa == 0.0 and model is not None:
                reference = reference_fn(model, t)
                ref_gap = (est.value - reference) / reference
            rows.append([
                est.t, est.kappa, est.value, est.std_error, est.prefactor,
                est.n_outer, est.n_steps, est.eps, est.overflow_count,
                reference, ref_gap,
            ])
            if not est.valid:
                breached += 1
                print(
                    f"OVERFLOW t={t!r} kappa={kappa!r}: "
                    f"{est.overflow_count} samples over the exponent cap",
                    file=sys.stderr,
                )
    write_csv(
        out_dir / f"{command}.csv", TRACE_COLUMNS, rows, fingerprint,
        {"command": command, "domain": domain_tag(domain), "seed": seed,
         "area": domain.area(), "control_variate": model is not None,
         "n_outer": cfg.n_outer, "n_steps": cfg.n_steps},
    )
    return 2 if breached else 0


def cmd_trace(config, out_dir: Path, seed: int, workers: int) -> int:
    return _run_series("trace", config, out_dir, seed, workers)


def cmd_mass(config, out_dir: Path, seed: int, workers: int) -> int:
    return _run_series("mass", config, out_dir, seed, workers)


# -- recover ----------------------------------------------------------------


def _series_rows(path: Path, kappa: float):
    fingerprint, meta, header, rows = read_csv(path)
    for name in ("t", "kappa", "estimate", "std_error"):
        if name not in header:
            raise UsageError(f"{path} lacks required column {name!r}")
    ts = _column(header, rows, "t")
    kappas = _column(header, rows, "kappa")
    values = _column(header, rows, "estimate")
    ses = _column(header, rows, "std_error")
    picked = [(t, v, s) for t, k, v, s in zip(ts, kappas, values, ses)
              if k == kappa]
    if not picked:
        raise UsageError(f"{path} holds no rows with kappa={kappa!r}")
    ts = np.array([p[0] for p in picked])
    values = np.array([p[1] for p in picked])
    ses = np.array([p[2] for p in picked])
    return fingerprint, meta, ts, values, ses


def cmd_recover(config, out_dir: Path, seed: int, workers: int) -> int:
    if "recover" not in config:
        raise UsageError("config needs a [recover] section")
    section = config["recover"]
    estimators = [e.strip() for e in section.get("estimators", "").split(",") if e.strip()]
    if not estimators:
        raise UsageError("estimators must name at least one of "
                         "area, perimeter, kappa2, minkowski")
    known = {"area", "perimeter", "kappa2", "minkowski"}
    unknown = set(estimators) - known
    if unknown:
        raise UsageError(f"unknown estimators: {sorted(unknown)}")
    allow_mismatch = _get(section, "allow_fingerprint_mismatch", bool, default=False)

    fingerprints = {}
    results = []

    def check(path, fp):
        fingerprints.setdefault(path, fp)
        distinct = set(fingerprints.values())
        if len(distinct) > 1 and not allow_mismatch:
            raise UsageError(
                "input series carry different config fingerprints "
                f"({sorted(distinct)}); set allow_fingerprint_mismatch=true "
                "to combine them anyway"
            )

    needs_trace = {"area", "perimeter", "kappa2"} & set(estimators)
    if needs_trace:
        trace_path = Path(_get(section, "trace_csv", str, required=True))
        fp, meta, ts0, v0, se0 = _series_rows(trace_path, 0.0)
        check(trace_path, fp)
        area_meta = float(meta.get("area", "nan"))
        if "area" in estimators:
            results.append(recover_area(ts0, v0, se0))
        if "perimeter" in estimators:
            area = _get(section, "area", float, default=None)
            if area is None:
                if math.isnan(area_meta):
                    raise UsageError("perimeter recovery needs an area "
                                     "(config key or trace metadata)")
                area = area_meta
            results.append(recover_perimeter(ts0, v0, area, se0))
        if "kappa2" in estimators:
            kappa = _get(section, "kappa", float, required=True)
            if kappa == 0.0:
                raise UsageError("kappa2 recovery needs a nonzero kappa")
            _, _, tsk, vk, sek = _series_rows(trace_path, kappa)
            if tsk.shape != ts0.shape or np.any(tsk != ts0):
                raise UsageError("kappa and zero series sit on different t grids")
            area = _get(section, "area", float, default=None)
            if area is None:
                if math.isnan(area_meta):
                    raise UsageError("kappa2 recovery needs an area "
                                     "(config key or trace metadata)")
                area = area_meta
            results.append(recover_kappa2(tsk, vk, v0, area, sek, se0))
    if "minkowski" in estimators:
        mass_path = Path(_get(section, "mass_csv", str, required=True))
        mass_kappa = _get(section, "mass_kappa", float, default=0.0)
        fp, meta, tsm, vm, sem = _series_rows(mass_path, mass_kappa)
        check(mass_path, fp)
        area = _get(section, "area", float, default=None)
        if area is None:
            area_meta = float(meta.get("area", "nan"))
            if math.isnan(area_meta):
                raise UsageError("minkowski recovery needs an area "
                                 "(config key or mass metadata)")
            area = area_meta
        results.append(recover_minkowski(tsm, vm, area, sem))

    fingerprint = fingerprint_of(
        [SCHEMA, "recover", sorted(estimators)] + sorted(fingerprints.values())
    )
    rows = []
    for res in results:
        for i, t in enumerate(res.ts):
            se = res.pointwise_se[i] if res.pointwise_se is not None else None
            rows.append([res.quantity, t, res.pointwise[i], se, 0,
                         res.rate_condition])
        headline_t = None if res.quantity == "minkowski" else res.ts[0]
        rows.append([res.quantity, headline_t, res.headline, res.std_error,
                     1, res.rate_condition])
    write_csv(
        out_dir / "recover.csv",
        ["quantity", "t", "estimate", "std_error", "is_headline", "rate_condition"],
        rows, fingerprint,
        {"command": "recover", "estimators": ",".join(sorted(estimators))},
    )
    return 0


# -- minkowski --------------------------------------------------------------


def cmd_minkowski(config, out_dir: Path, seed: int, workers: int) -> int:
    if "minkowski" not in config:
        raise UsageError("config needs a [minkowski] section")
    section = config["minkowski"]
    domain = parse_domain(config)
    r_values = _floats(section, "r_values")
    if not r_values:
        r_min = _get(section, "r_min", float, required=True)
        r_max = _get(section, "r_max", float, required=True)
        n_r = _get(section, "n_r", int, default=5)
        if not (0 < r_min < r_max) or n_r < 3:
            raise UsageError("need 0 < r_min < r_max and n_r >= 3")
        r_values = list(np.geomspace(r_min, r_max, n_r))
    if any(r <= 0 for r in r_values):
        raise UsageError("r_values must be positive")
    n_samples = _get(section, "n_samples", int, default=20000)
    if n_samples < 1000:
        raise UsageError("n_samples must be at least 1000")

    fingerprint = fingerprint_of([
        SCHEMA, "minkowski", domain_tag(domain),
        repr([float(r) for r in r_values]), n_samples, seed,
    ])
    key = streams.run_key("minkowski", domain_tag(domain), n_samples)
    rows = []
    tubes = []
    undersampled = []
    for i, r in enumerate(sorted(r_values)):
        rng = streams.block_stream(seed, key, i)
        tube = boundary_neighborhood_area(domain, r, n_samples, rng)
        tubes.append(tube)
        hits = tube.area > 0.0
        rows.append(["tube", r, tube.area, tube.std_error, n_samples,
                     int(hits), None])
        if not hits:
            undersampled.append(r)

    dim = dim_se = None
    if not undersampled:
        dim = minkowski_fit(tubes)
        log_r = np.log([tube.r for tube in tubes])
        x = log_r - log_r.mean()
        sxx = float(np.dot(x, x))
        coeff = x / sxx
        rel = np.array([tube.std_error / tube.area for tube in tubes])
        dim_se = float(np.sqrt(np.dot(coeff ** 2, rel ** 2)))
        rows.append(["tube_fit", None, dim, dim_se, n_samples, None, None])

    mass_csv = _get(section, "mass_csv", str, default=None)
    if mass_csv is not None:
        fp, meta, tsm, vm, sem = _series_rows(Path(mass_csv), 0.0)
        area_meta = float(meta.get("area", "nan"))
        area = _get(section, "area", float,
                    default=None if math.isnan(area_meta) else area_meta)
        if area is None:
            raise UsageError("mass-series dimension needs an area")
        res = recover_minkowski(tsm, vm, area, sem)
        rows.append(["mass_fit", None, res.headline, res.std_error,
                     None, None, res.rate_condition])

    write_csv(
        out_dir / "minkowski.csv",
        ["source", "r", "value", "std_error", "n_samples", "n_hits",
         "rate_condition"],
        rows, fingerprint,
        {"command": "minkowski", "domain": domain_tag(domain), "seed": seed,
         "area": domain.area(), "n_samples": n_samples},
    )
    if undersampled:
        for r in undersampled:
            print(f"UNDERSAMPLED r={r!r}: no boundary-neighborhood hits",
                  file=sys.stderr)
        return 2
    return 0


# -- entry point -------------------------------------------------------------


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        # argparse exits 2 by default; usage errors are exit 1 here
        self.print_usage(sys.stderr)
        raise SystemExit(1)


COMMANDS = {
    "silt-validate": cmd_silt_validate,
    "trace": cmd_trace,
    "mass": cmd_mass,
    "recover": cmd_recover,
    "minkowski": cmd_minkowski,
}


def main(argv=None) -> int:
    parser = _Parser(prog="anderson-lab", description=__doc__)
    parser.add_argument("command", choices=sorted(COMMANDS))
    parser.add_argument("--config", required=True)
    parser.add_argument("--out", default=None)
    parser.add_argument("--workers", type=int, default=None)
    parser.add_argument("--seed", type=int, default=None)
    args = parser.parse_args(argv)

    try:
        config = load_config(args.config)
        run = config["run"] if "run" in config else {}
        seed = args.seed if args.seed is not None else int(run.get("seed", 0))
        workers = args.workers if args.workers is not None else int(run.get("workers", 1))
        if workers < 1:
            raise UsageError("workers must be at least 1")
        out_dir = Path(args.out if args.out is not None else run.get("out", "."))
        return COMMANDS[args.command](config, out_dir, seed, workers)
    except UsageError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return 1
    except QualityError as exc:
        print(f"quality: {exc}", file=sys.stderr)
        return 2


if __name__ == "__main__":
    raise SystemExit(main())
