"""Config-driven scenario runner.

A scenario declares a model, a torus action, a k-range, twist, norm
definitions, and quadrature budgets; the runner emits the stratification
report, Gram matrices up- and downstairs, density and defect curves, and
the norm-decomposition consistency report, all as JSON/CSV with a manifest
of content hashes.  Identical config and seed give identical bytes.
"""

import argparse
import csv
import hashlib
import io
import json
import os
import sys
from dataclasses import dataclass, field
from fractions import Fraction

import numpy as np

from . import __version__
from . import actions as ta
from . import asymptotics, models, reduction, sections, strata
from .integrate import QuadConfig

QUANTITIES = ("strata", "gram", "density", "unitarity", "consistency")

PRESETS = {
    # the desk-scale example family
    "E1": {
        "model": {"factors": [1], "bundle_degrees": [1]},
        "action": {"rank": 1, "weights": [[[1, -1]]], "shift": ["0"]},
    },
    "E2": {
        "model": {"factors": [2], "bundle_degrees": [1]},
        "action": {"rank": 1, "weights": [[[1, -1, 0]]], "shift": ["0"]},
    },
    "E3": {
        "model": {"factors": [1, 1], "bundle_degrees": [1, 1]},
        "action": {"rank": 1, "weights": [[[1, 0]], [[-1, 0]]], "shift": ["1/2"]},
    },
}


class ConfigError(ValueError):
    pass


@dataclass
class Scenario:
    model: models.Model
    action: ta.WeightAction
    k_list: tuple
    twist: str
    norm_defs: tuple
    quad: QuadConfig
    seed: int
    out: str
    quantities: tuple
    numerics: dict = field(default_factory=dict)
    raw: dict = field(default_factory=dict)


def _parse_weights(model, spec):
    w = spec
    if isinstance(w[0][0], list):
        # per-factor blocks: weights[j][a][i]
        d = len(w[0])
        rows = [[] for _ in range(d)]
        for block in w:
            if len(block) != d:
                raise ConfigError("weight blocks disagree on torus rank")
            for a in range(d):
                rows[a].extend(block[a])
        return rows
    return w


def validate(config):
    """Resolve a config dict into a Scenario, or raise with every violation."""
    if isinstance(config, str):
        config = json.loads(config)
    cfg = dict(config)
    errors = []
    preset = cfg.pop("preset", None)
    if preset is not None:
        if preset not in PRESETS:
            raise ConfigError(f"unknown preset {preset!r} (have {sorted(PRESETS)})")
        base = PRESETS[preset]
        cfg.setdefault("model", base["model"])
        cfg.setdefault("action", base["action"])
    model = action = None
    try:
        mspec = cfg["model"]
        model = models.make_model(mspec["factors"], mspec["bundle_degrees"])
    except KeyError:
        errors.append("model: missing")
    except Exception as exc:
        errors.append(f"model: {exc}")
    if model is not None:
        try:
            aspec = cfg["action"]
            rows = _parse_weights(model, aspec["weights"])
            shift = [Fraction(str(c)) for c in aspec.get("shift", [0] * len(rows))]
            action = ta.make_action(model, rows, shift)
            if int(aspec.get("rank", len(rows))) != action.rank:
                errors.append("action.rank: inconsistent with weight rows")
        except KeyError:
            errors.append("action: missing")
        except Exception as exc:
            errors.append(f"action: {exc}")
    k_list = tuple(int(k) for k in cfg.get("k_list", ()))
    if not k_list:
        errors.append("k_list: must be nonempty")
    elif any(b <= a for a, b in zip(k_list, k_list[1:])):
        errors.append("k_list: must be strictly increasing")
    twist = cfg.get("twist", "plain")
    if twist not in ("plain", "halfform"):
        errors.append(f"twist: unknown value {twist!r}")
    if twist == "halfform" and model is not None and not model.metaplectic_allowed:
        errors.append("twist: metaplectic parity fails (some factor dimension is even)")
    if action is not None and k_list:
        bad = [k for k in k_list if not action.lift_integral(k)]
        if bad:
            errors.append(f"k_list: lift integrality fails (k * shift not integral) at k={bad}")
    norm_defs = tuple(int(v) for v in cfg.get("norm_defs", (1, 2)))
    if any(v not in (1, 2) for v in norm_defs):
        errors.append("norm_defs: entries must be 1 or 2")
    quantities = tuple(cfg.get("quantities", QUANTITIES))
    unknown = [q for q in quantities if q not in QUANTITIES]
    if unknown:
        errors.append(f"quantities: unknown {unknown}")
    quad = QuadConfig.from_dict(cfg.get("quad", {}))
    seed = int(cfg.get("seed", 0))
    out = cfg.get("out", "quantred_out")
    if errors:
        raise ConfigError("; ".join(errors))
    return Scenario(
        model=model,
        action=action,
        k_list=k_list,
        twist=twist,
        norm_defs=norm_defs,
        quad=quad,
        seed=seed,
        out=out,
        quantities=quantities,
        numerics=dict(cfg.get("numerics", {})),
        raw=config,
    )


# ----------------------------------------------------------------------


def describe(scn, stream=None):
    """Cheap summary: Hilbert dimensions, strata table, predicted limits."""
    stream = stream or sys.stdout
    strat = strata.analyze(scn.action)
    print(f"model: CP^{list(scn.model.factors)} degrees {list(scn.model.bundle_degrees)}", file=stream)
    print(f"torus rank {scn.action.rank}, twist {scn.twist}", file=stream)
    for k in scn.k_list:
        dim = sections.invariant_exponents(scn.action, k, scn.twist).shape[0]
        if dim == 0:
            print(f"k={k}: no invariant sections (warning)", file=stream)
        else:
            print(f"k={k}: dim H^G = {dim}", file=stream)
    print("strata:", file=stream)
    for i, lab in enumerate(strat.strata):
        iso = lab.isotropy
        kind = "H=G" if iso.is_full else (f"finite Z_{iso.finite_part}" if iso.dim == 0 else f"dim h = {iso.dim}")
        npieces = len(strat.pieces.get(lab.key, ()))
        if iso.is_full:
            lim = "density 1"
        else:
            m = scn.action.rank - iso.dim
            pts, _ = strata.sample_stratum(scn.action, lab, 16, seed=scn.seed + i)
            vols = [2.0 ** (-m / 2.0) * ta.geometric_orbit_volume(scn.action, z, iso) for z in pts]
            lim = f"I_k limit in [{min(vols):.4f}, {max(vols):.4f}]"
        print(
            f"  [{i}] {kind}, dim_S={lab.dim_S}, dim_up={lab.dim_upstairs}, extra_pieces={npieces}, {lim}",
            file=stream,
        )


def _hash_bytes(data):
    return hashlib.sha256(data).hexdigest()


def _write_json(path, obj):
    data = json.dumps(obj, sort_keys=True, indent=1).encode()
    with open(path, "wb") as fh:
        fh.write(data)
    return _hash_bytes(data)


def _write_csv(path, header, rows):
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(header)
    for row in rows:
        writer.writerow(row)
    data = buf.getvalue().encode()
    with open(path, "wb") as fh:
        fh.write(data)
    return _hash_bytes(data)


def run(scn):
    """Execute the scenario; returns the manifest dict (also written to disk)."""
    os.makedirs(scn.out, exist_ok=True)
    strat = strata.analyze(scn.action)
    hashed_cfg = {k: v for k, v in scn.raw.items() if k != "out"}
    manifest = {
        "version": __version__,
        "config_hash": _hash_bytes(json.dumps(hashed_cfg, sort_keys=True).encode()),
        "files": {},
    }
    quad = scn.quad
    quad.seed = scn.seed if quad.seed == 0 else quad.seed

    def record(name, digest):
        manifest["files"][name] = digest

    if "strata" in scn.quantities:
        record("strata.json", _write_json(os.path.join(scn.out, "strata.json"), strat.to_json_dict()))

    gram_cache = {}
    if "gram" in scn.quantities or "unitarity" in scn.quantities:
        for k in scn.k_list:
            for nd in scn.norm_defs:
                gu = sections.gram_upstairs(scn.action, k, scn.twist, nd, quad, strat=strat)
                gd = reduction.reduced_gram(scn.action, k, scn.twist, nd, quad, strat=strat)
                gram_cache[(k, nd)] = (gu, gd)
        if "gram" in scn.quantities:
            for k in scn.k_list:
                up = {str(nd): gram_cache[(k, nd)][0].to_json_dict() for nd in scn.norm_defs}
                down = {str(nd): gram_cache[(k, nd)][1].to_json_dict() for nd in scn.norm_defs}
                record(f"gram_up_{k}.json", _write_json(os.path.join(scn.out, f"gram_up_{k}.json"), up))
                record(f"gram_down_{k}.json", _write_json(os.path.join(scn.out, f"gram_down_{k}.json"), down))

    if "density" in scn.quantities:
        rows = []
        fits = []
        for i, lab in enumerate(strat.strata):
            if lab.isotropy.is_full:
                curve_ii = asymptotics.DensityCurve(quantity="II", stratum=f"stratum_{i}")
                for k in scn.k_list:
                    val = asymptotics.residual_II(scn.action, lab, k, scn.twist, quad, strat=strat)
                    curve_ii.points.append((k, val, 0.0))
                rows.extend([(r["quantity"], r["stratum"], r["k"], repr(r["value"]), repr(r["stderr"])) for r in curve_ii.rows()])
                if all(p[1] > 0 for p in curve_ii.points):
                    fits.append({"quantity": "II", "stratum": i, "fit_power": curve_ii.fit()})
                continue
            pts, _ = strata.sample_stratum(scn.action, lab, 1, seed=scn.seed + 17 * i)
            x = pts[0]
            name = "J" if scn.twist == "halfform" else "I"
            curve = asymptotics.DensityCurve(quantity=name, stratum=f"stratum_{i}")
            for k in scn.k_list:
                fn = asymptotics.density_J if scn.twist == "halfform" else asymptotics.density_I
                curve.points.append((k, fn(scn.action, lab, x, k), 0.0))
            m = scn.action.rank - lab.isotropy.dim
            limit = 1.0 if scn.twist == "halfform" else 2.0 ** (-m / 2.0) * ta.geometric_orbit_volume(scn.action, x, lab.isotropy)
            fits.append({"quantity": name, "stratum": i, "limit": limit, "fit_power": curve.fit(limit=limit)})
            rows.extend([(r["quantity"], r["stratum"], r["k"], repr(r["value"]), repr(r["stderr"])) for r in curve.rows()])
        record("curves.csv", _write_csv(os.path.join(scn.out, "curves.csv"),
                                        ("quantity", "stratum", "k", "value", "stderr"), rows))
        record("curve_fits.json", _write_json(os.path.join(scn.out, "curve_fits.json"), fits))

    if "unitarity" in scn.quantities:
        rows = []
        for k in scn.k_list:
            for nd in scn.norm_defs:
                grams = gram_cache.get((k, nd))
                defect, err = asymptotics.unitarity_defect(
                    scn.action, k, scn.twist, nd, quad, strat=strat, grams=grams
                )
                rows.append((k, scn.twist, nd, repr(defect), repr(err)))
        record("defects.csv", _write_csv(os.path.join(scn.out, "defects.csv"),
                                         ("k", "twist", "norm_def", "defect", "stderr"), rows))

    if "consistency" in scn.quantities:
        reports = []
        for k in scn.k_list:
            mcq = QuadConfig(samples=quad.samples, seed=scn.seed + k, method="mc", blocks=quad.blocks)
            reports.append(asymptotics.norm_split_consistency(scn.action, k, scn.twist, mcq, strat=strat))
        record("consistency.json", _write_json(os.path.join(scn.out, "consistency.json"), {
            "reports": reports,
            "note": "zero-dimensional strata contribute point values with (k/2pi)^0 = 1",
        }))

    _write_json(os.path.join(scn.out, "run_manifest.json"), manifest)
    return manifest


# ----------------------------------------------------------------------


def _load_config(args):
    if args.config:
        with open(args.config) as fh:
            cfg = json.load(fh)
    elif args.preset:
        cfg = {"preset": args.preset, "k_list": [2, 4, 8]}
    else:
        raise ConfigError("need --config or --preset")
    if args.out:
        cfg["out"] = args.out
    if args.seed is not None:
        cfg["seed"] = args.seed
    if args.k:
        cfg["k_list"] = [int(v) for v in args.k.split(",")]
    if args.only:
        cfg["quantities"] = tuple(args.only.split(","))
    if args.twist:
        cfg["twist"] = args.twist
    return cfg


def main(argv=None):
    parser = argparse.ArgumentParser(prog="quantred", description=__doc__)
    parser.add_argument("command", choices=("describe", "strata", "gram", "density", "unitarity", "consistency", "run"))
    parser.add_argument("--config", help="path to a JSON scenario config")
    parser.add_argument("--preset", help="built-in example name (E1, E2, E3)")
    parser.add_argument("--out", help="output directory")
    parser.add_argument("--seed", type=int, default=None)
    parser.add_argument("--only", help="comma-separated quantity subset")
    parser.add_argument("--k", help="comma-separated k list override")
    parser.add_argument("--twist", choices=("plain", "halfform"))
    args = parser.parse_args(argv)
    try:
        cfg = _load_config(args)
        if args.command not in ("describe", "run"):
            cfg["quantities"] = (args.command,) if args.command != "gram" else ("gram",)
        scn = validate(cfg)
    except (ConfigError, FileNotFoundError, json.JSONDecodeError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    try:
        if args.command == "describe":
            describe(scn)
        else:
            manifest = run(scn)
            print(json.dumps(manifest, sort_keys=True, indent=1))
    except Exception as exc:  # numerical failure paths exit distinctly
        print(f"numerical failure: {type(exc).__name__}: {exc}", file=sys.stderr)
        return 3
    return 0


if __name__ == "__main__":
    sys.exit(main())
