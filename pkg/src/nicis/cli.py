"""Command-line front end: ``nicis {cf, skew, akc, report}``.

Every run writes its data files plus ``run.json`` (config, config hash and
file digests) into ``<output root>/<command>-<hash>``.  The output root is
``--out``, else ``$NICIS_OUTPUT_ROOT``, else ``./nicis-runs``.  Exit status:
0 success, 1 a checked property failed, 2 usage or configuration error.
"""
from __future__ import annotations

import argparse
import csv
import hashlib
import io
import json
import os
import sys
import time
from pathlib import Path
from typing import Any, Optional

import numpy as np
import yaml

from nicis import __version__
from nicis.errors import ConfigError, NicisError

EXIT_OK, EXIT_FAIL, EXIT_USAGE = 0, 1, 2
ENV_ROOT = "NICIS_OUTPUT_ROOT"


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse exits with 2 already; keep the message terse
        self.print_usage(sys.stderr)
        raise UsageError(message)


# ---------------------------------------------------------------------------
# configuration
# ---------------------------------------------------------------------------

def load_config(path: Optional[str]) -> dict:
    """Read a YAML (or JSON, which is YAML) experiment file; ``seed`` is required."""
    if path is None:
        return {}
    p = Path(path)
    if not p.is_file():
        raise ConfigError(f"config file {path} not found")
    data = yaml.safe_load(p.read_text()) or {}
    if not isinstance(data, dict):
        raise ConfigError("config root must be a mapping")
    if "seed" not in data:
        raise ConfigError("config must set an integer 'seed'")
    if not isinstance(data["seed"], int) or isinstance(data["seed"], bool):
        raise ConfigError("'seed' must be an integer")
    return data


def merged(args: argparse.Namespace, config: dict, section: str, keys: dict[str, Any]) -> dict:
    """Parameters for one command: explicit CLI flags > config section > config root > defaults."""
    block = config.get(section, {}) or {}
    if not isinstance(block, dict):
        raise ConfigError(f"config section {section!r} must be a mapping")
    out = {}
    for key, default in keys.items():
        cli = getattr(args, key, None)
        if cli is not None:
            out[key] = cli
        elif key in block:
            out[key] = block[key]
        elif key in config and key != section:
            out[key] = config[key]
        else:
            out[key] = default
    return out


def config_hash(cfg: dict) -> str:
    return hashlib.sha256(json.dumps(cfg, sort_keys=True, default=str).encode()).hexdigest()


def output_root(args) -> Path:
    return Path(args.out or os.environ.get(ENV_ROOT) or "nicis-runs")


class Run:
    """Single writer for one command's output directory."""

    def __init__(self, root: Path, command: str, cfg: dict):
        self.cfg = {"command": command, **cfg}
        self.hash = config_hash(self.cfg)
        self.dir = root / f"{command.replace(' ', '-')}-{self.hash[:12]}"
        self.dir.mkdir(parents=True, exist_ok=True)
        self.files: dict[str, str] = {}

    def write(self, name: str, text: str) -> Path:
        path = self.dir / name
        data = text.encode()
        path.write_bytes(data)
        self.files[name] = hashlib.sha256(data).hexdigest()
        return path

    def write_json(self, name: str, obj) -> Path:
        return self.write(name, json.dumps(obj, sort_keys=True, indent=2, default=_json_default) + "\n")

    def write_csv(self, name: str, header: list[str], rows) -> Path:
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\r\n")
        w.writerow(header)
        w.writerows(rows)
        return self.write(name, buf.getvalue())

    def finish(self, status: int, summary: dict) -> int:
        self.write_json("summary.json", summary)
        meta = {"config": self.cfg, "config_hash": self.hash, "files": dict(sorted(self.files.items())),
                "status": status, "version": __version__}
        (self.dir / "run.json").write_text(json.dumps(meta, sort_keys=True, indent=2) + "\n")
        print(json.dumps(summary, sort_keys=True, default=_json_default))
        print(f"output: {self.dir}")
        return status


def _json_default(o):
    if isinstance(o, (np.floating, np.integer)):
        return o.item()
    if isinstance(o, np.ndarray):
        return o.tolist()
    return str(o)


def _alpha(spec: str, depth: int = 32):
    from nicis.number_theory import parse_alpha, rotation_number
    return rotation_number(parse_alpha(str(spec)), depth)


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

def cmd_cf(args, config) -> int:
    from nicis import number_theory as nt
    p = merged(args, config, "cf", {"alpha": "golden", "depth": 10, "returns": None,
                                    "liouville_tau": None, "liouville_eps": 1e-3,
                                    "q_max": 10 ** 30, "phi_terms": None, "seed": 0})
    alpha = _alpha(p["alpha"], int(p["depth"]))
    run = Run(output_root(args), "cf", p)
    run.write("convergents.csv", nt.write_convergents_csv(alpha))
    summary: dict[str, Any] = {"alpha": alpha.spec.label, "depth": alpha.depth,
                               "partial_quotients": [str(a) for a in alpha.partial_quotients]}
    if p["returns"]:
        times = nt.closest_return_times(alpha, int(p["returns"]))
        run.write_csv("closest_returns.csv", ["q"], [[t] for t in times])
        summary["closest_returns"] = len(times)
    if p["liouville_tau"] is not None:
        w = nt.liouville_witness(alpha, float(p["liouville_tau"]), float(p["liouville_eps"]), int(p["q_max"]))
        summary["liouville_witness"] = None if w is None else {"p": str(w.p), "q": str(w.q)}
    if p["phi_terms"]:
        qs = nt.select_phi_denominators(alpha, int(p["phi_terms"]))
        run.write_csv("phi_denominators.csv", ["n", "q_n"], [[i + 1, q] for i, q in enumerate(qs)])
        summary["phi_denominators"] = [str(q) for q in qs]
    return run.finish(EXIT_OK, summary)


def _phi(p):
    from nicis.skew_product import build_phi
    alpha = _alpha(p["alpha"], 64)
    return build_phi(alpha, None if p["terms"] is None else int(p["terms"]))


def cmd_skew_dk(args, config) -> int:
    from nicis import dynamics as dy
    from nicis.skew_product import variation
    p = merged(args, config, "dk", {"alpha": "golden", "terms": 6, "grid": 200000, "seed": 0})
    phi = _phi(p)
    entries = dy.denjoy_koksma_profile(phi, phi.qs, int(p["grid"]), seed=int(p["seed"]))
    run = Run(output_root(args), "skew dk", p)
    run.write("dk_profile.csv", dy.dk_csv(entries))
    var = variation(phi)
    sups = [e.sup for e in entries]
    ok = all(s <= var for s in sups)
    summary = {"variation": var, "sups": sups, "variation_bound_holds": ok,
               "decreasing": all(b < a for a, b in zip(sups, sups[1:]))}
    return run.finish(EXIT_OK if ok else EXIT_FAIL, summary)


def cmd_skew_residuals(args, config) -> int:
    from nicis import skew_product as sp
    p = merged(args, config, "residuals", {"alpha": "golden", "terms": 6, "samples": 10000,
                                           "starts": 100, "steps": 1000, "tol": 1e-12, "seed": 0})
    phi = _phi(p)
    rng = np.random.default_rng(int(p["seed"]))
    x = rng.random(int(p["samples"]))
    F = sp.SkewProduct.from_phi(phi)
    res = {"mean": sp.mean_residual(phi), "symmetry": sp.symmetry_residual(phi, x),
           "coboundary": sp.coboundary_residual(phi, x),
           "involution": sp.involution_residual(F, int(p["starts"]), int(p["steps"]), seed=int(p["seed"]))}
    tol = float(p["tol"])
    limits = {"mean": tol, "symmetry": tol, "coboundary": tol, "involution": 1e-10}
    ok = {k: bool(v < limits[k]) for k, v in res.items()}
    run = Run(output_root(args), "skew residuals", p)
    run.write_csv("residuals.csv", ["suite", "residual", "limit", "pass"],
                  [[k, repr(v), limits[k], ok[k]] for k, v in res.items()])
    return run.finish(EXIT_OK if all(ok.values()) else EXIT_FAIL, {"residuals": res, "pass": ok})


def cmd_skew_classify(args, config) -> int:
    from nicis import dynamics as dy
    from nicis.skew_product import SkewProduct
    p = merged(args, config, "classify", {"alpha": "golden", "terms": None, "samples": 1000,
                                          "horizon": 10 ** 6, "band": [0.5, 1.0], "strip_eps": 1e-3,
                                          "min_dense": None, "seed": 0})
    F = SkewProduct.from_phi(_phi(p))
    rng = np.random.default_rng(int(p["seed"]))
    xs = rng.random(int(p["samples"]))
    band = tuple(float(v) for v in p["band"])
    reps = dy.classify_fibers(F, xs, int(p["horizon"]), band, float(p["strip_eps"]))
    mirrored = dy.classify_fibers(F, (-xs) % 1.0, int(p["horizon"]), band, float(p["strip_eps"]))
    hist = dy.verdict_histogram(reps)
    frac, pairs = dy.mirror_agreement(reps, mirrored)
    dense = hist.get(dy.Verdict.DENSE.value, 0) / max(len(reps), 1)
    run = Run(output_root(args), "skew classify", p)
    run.write("verdicts.csv", dy.reports_csv(reps))
    summary = {"histogram": hist, "dense_fraction": dense, "mirror_agreement": frac, "decided_pairs": pairs}
    ok = p["min_dense"] is None or dense >= float(p["min_dense"])
    return run.finish(EXIT_OK if ok else EXIT_FAIL, summary)


def cmd_skew_orbit(args, config) -> int:
    from nicis.skew_product import SkewProduct
    from nicis import fixedpoint as fp
    p = merged(args, config, "orbit", {"alpha": "golden", "terms": None, "x": 0.0, "y": 0.0,
                                       "steps": 1000, "stride": 1, "seed": 0})
    F = SkewProduct.from_phi(_phi(p))
    trace = F.iterate((fp.from_float(float(p["x"])), float(p["y"])), int(p["steps"]), int(p["stride"]))
    run = Run(output_root(args), "skew orbit", p)
    run.write("orbit.csv", trace.to_csv())
    return run.finish(EXIT_OK, {"y_min": trace.y_min, "y_max": trace.y_max, "steps": trace.steps})


def cmd_skew_pushforward(args, config) -> int:
    from nicis import dynamics as dy
    p = merged(args, config, "pushforward", {"alpha": "golden", "terms_list": [10, 40], "samples": 10 ** 6,
                                             "grid": [50, 20], "y_range": 2.0, "seed": 0})
    alpha = _alpha(p["alpha"], 64)
    reps = dy.pushforward_histogram(alpha, [int(n) for n in p["terms_list"]], tuple(int(g) for g in p["grid"]),
                                    int(p["samples"]), y_range=float(p["y_range"]), seed=int(p["seed"]))
    run = Run(output_root(args), "skew pushforward", p)
    for r in reps:
        nx, ny = r.grid
        run.write_csv(f"coverage_N{r.n_terms}.csv", ["ix", "iy", "count"],
                      [[i, j, int(r.counts[i, j])] for i in range(nx) for j in range(ny)])
    summary = {"coverage": {str(r.n_terms): r.covered_fraction for r in reps},
               "x_marginal_pvalue": reps[0].x_marginal_pvalue if reps else None}
    return run.finish(EXIT_OK, summary)


def cmd_skew_dense(args, config) -> int:
    from nicis import dynamics as dy
    from nicis.skew_product import SkewProduct
    p = merged(args, config, "dense", {"alpha": "golden", "terms": None, "eps": 0.125, "horizon": 10 ** 6,
                                       "trials": 4, "y_range": 1.0, "seed": 0})
    F = SkewProduct.from_phi(_phi(p))
    rep = dy.dense_orbit_search(F, float(p["eps"]), int(p["horizon"]), int(p["trials"]),
                                y_range=float(p["y_range"]), seed=int(p["seed"]))
    run = Run(output_root(args), "skew dense", p)
    summary = {"best_eps": rep.best_eps, "achieved": rep.achieved, "per_trial": list(rep.per_trial)}
    run.write_json("dense.json", summary)
    return run.finish(EXIT_OK, summary)


def cmd_akc(args, config) -> int:
    from nicis import conjugation as cj
    p = merged(args, config, "akc", {"alpha": "series:factorial10", "stages": 3, "mode": "c0",
                                     "bands": None, "safety": 1e3, "seed": 0})
    if p["mode"].lower() not in ("c0", "cinf"):
        raise ConfigError("mode must be c0 or cinf")
    schedule = cj.BandSchedule(p["bands"]) if p["bands"] else cj.BandSchedule()
    alpha = _alpha(p["alpha"], 8)
    opts = cj.SchemeOptions(safety=float(p["safety"]), seed=int(p["seed"]))
    report = cj.run_scheme(alpha, int(p["stages"]), schedule, p["mode"], opts)
    run = Run(output_root(args), "akc", p)
    run.write("scheme.json", report.to_json() + "\n")
    run.write_csv("distances.csv", ["n", "distance", "eps_n", "noise_floor", "lipschitz_bound"],
                  [[d["n"], repr(d["distance"]), repr(d["eps_n"]), repr(d["noise_floor"]),
                    repr(d["lipschitz_bound"])] for d in report.distances])
    ok = all(d["below_eps"] for d in report.distances)
    summary = {"feasible": report.feasible, "infeasible": report.infeasible,
               "alphas": [s.get("alpha_next") for s in report.stages],
               "distances": [d["distance"] for d in report.distances]}
    return run.finish(EXIT_OK if ok else EXIT_FAIL, summary)


def cmd_report(args, config) -> int:
    runs = []
    for d in args.dirs:
        meta_path = Path(d) / "run.json"
        if not meta_path.is_file():
            raise ConfigError(f"{d}: no run.json (not a run directory)")
        meta = json.loads(meta_path.read_text())
        for name, digest in meta["files"].items():
            data = (Path(d) / name).read_bytes()
            if hashlib.sha256(data).hexdigest() != digest:
                raise ConfigError(f"{d}/{name}: digest mismatch")
        runs.append({"dir": str(Path(d).resolve()), **meta})
    manifest = {"created": time.strftime("%Y-%m-%dT%H:%M:%SZ", time.gmtime()),
                "manifest_hash": config_hash([r["config_hash"] for r in runs]),
                "runs": runs, "version": __version__}
    out = Path(args.manifest) if args.manifest else output_root(args) / "manifest.json"
    out.parent.mkdir(parents=True, exist_ok=True)
    out.write_text(json.dumps(manifest, sort_keys=True, indent=2) + "\n")
    print(f"manifest: {out} ({len(runs)} runs)")
    return EXIT_OK


# ---------------------------------------------------------------------------
# parser
# ---------------------------------------------------------------------------

def _int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v]


def _float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v]


def build_parser() -> argparse.ArgumentParser:
    ap = _Parser(prog="nicis", description=__doc__.splitlines()[0])
    ap.add_argument("--version", action="version", version=__version__)
    common = _Parser(add_help=False)
    common.add_argument("--config", help="YAML/JSON experiment file (must set seed)")
    common.add_argument("--out", help=f"output root (default ${ENV_ROOT} or ./nicis-runs)")
    common.add_argument("--seed", type=int)
    common.add_argument("--alpha", help="golden, sqrt2, liouville, surd:a,b,d,c, series:factorialB or 0.ddd")
    sub = ap.add_subparsers(dest="command", required=True, parser_class=_Parser)

    cf = sub.add_parser("cf", parents=[common], help="continued fractions and return times")
    cf.add_argument("--depth", type=int)
    cf.add_argument("--returns", type=int, help="list closest return times up to this bound")
    cf.add_argument("--liouville-tau", dest="liouville_tau", type=float)
    cf.add_argument("--liouville-eps", dest="liouville_eps", type=float)
    cf.add_argument("--q-max", dest="q_max", type=int)
    cf.add_argument("--phi-terms", dest="phi_terms", type=int)
    cf.set_defaults(func=cmd_cf)

    skew = sub.add_parser("skew", help="skew-product experiments")
    ss = skew.add_subparsers(dest="experiment", required=True, parser_class=_Parser)
    sk = _Parser(add_help=False, parents=[common])
    sk.add_argument("--terms", type=int, help="truncation N (default: machine precision)")

    dk = ss.add_parser("dk", parents=[sk], help="Denjoy-Koksma profile")
    dk.add_argument("--grid", type=int)
    dk.set_defaults(func=cmd_skew_dk)

    rs = ss.add_parser("residuals", parents=[sk], help="mean, symmetry, involution and coboundary residuals")
    rs.add_argument("--samples", type=int)
    rs.add_argument("--starts", type=int)
    rs.add_argument("--steps", type=int)
    rs.add_argument("--tol", type=float)
    rs.set_defaults(func=cmd_skew_residuals)

    cl = ss.add_parser("classify", parents=[sk], help="fiber verdict sweep")
    cl.add_argument("--samples", type=int)
    cl.add_argument("--horizon", type=int)
    cl.add_argument("--band", type=_float_list)
    cl.add_argument("--strip-eps", dest="strip_eps", type=float)
    cl.add_argument("--min-dense", dest="min_dense", type=float)
    cl.set_defaults(func=cmd_skew_classify)

    ob = ss.add_parser("orbit", parents=[sk], help="one orbit as CSV")
    ob.add_argument("--x", type=float)
    ob.add_argument("--y", type=float)
    ob.add_argument("--steps", type=int)
    ob.add_argument("--stride", type=int)
    ob.set_defaults(func=cmd_skew_orbit)

    pf = ss.add_parser("pushforward", parents=[common], help="coverage of the graph of h_N")
    pf.add_argument("--terms-list", dest="terms_list", type=_int_list)
    pf.add_argument("--samples", type=int)
    pf.add_argument("--grid", type=_int_list)
    pf.add_argument("--y-range", dest="y_range", type=float)
    pf.set_defaults(func=cmd_skew_pushforward)

    de = ss.add_parser("dense", parents=[sk], help="dense-orbit search")
    de.add_argument("--eps", type=float)
    de.add_argument("--horizon", type=int)
    de.add_argument("--trials", type=int)
    de.add_argument("--y-range", dest="y_range", type=float)
    de.set_defaults(func=cmd_skew_dense)

    ak = sub.add_parser("akc", parents=[common], help="approximation-by-conjugation scheme")
    ak.add_argument("--stages", type=int)
    ak.add_argument("--mode", choices=["c0", "cinf"])
    ak.add_argument("--safety", type=float, help="cinf surrogate multiplier")
    ak.set_defaults(func=cmd_akc)

    rp = sub.add_parser("report", parents=[common], help="merge run directories into a manifest")
    rp.add_argument("dirs", nargs="+")
    rp.add_argument("--manifest", help="manifest path (default <out>/manifest.json)")
    rp.set_defaults(func=cmd_report)
    return ap


def main(argv: Optional[list[str]] = None) -> int:
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
        config = load_config(args.config)
        return args.func(args, config)
    except UsageError as exc:
        print(f"nicis: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except (ConfigError, ValueError) as exc:
        print(f"nicis: error: {exc}", file=sys.stderr)
        return EXIT_USAGE
    except NicisError as exc:
        print(f"nicis: {type(exc).__name__}: {exc}", file=sys.stderr)
        return EXIT_FAIL


if __name__ == "__main__":
    sys.exit(main())
