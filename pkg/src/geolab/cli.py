"""Batch front door: `geolab run <scenario.cfg>` and `geolab verify <suite>`.

Scenario files are structured text with [section] headers (dots nest) and
key = value lines.  Every run writes its artifacts plus a manifest with
the config hash, package version, and wall time; rerunning with the same
config and seed reproduces the JSON payload fields bit for bit.
"""

import argparse
import hashlib
import json
import sys
import time
from pathlib import Path

import numpy as np

from . import __version__
from .config import DEFAULT_INT, DEFAULT_TOL
from .errors import ConfigError, GeolabError, NumericalFailure, UnknownSuite
from . import annulus as AN
from . import jets as J
from . import perturb as PT
from . import poincare as PL
from .flow import PhaseState, integrate, joachimsthal_drift
from .surface import SurfaceSpec, certify_strict_convexity
from .suites import SuiteContext, run_suite


def parse_config(text):
    """Parse key = value lines under [dotted.section] headers."""
    tree = {}
    section = tree
    for ln, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if line.startswith("[") and line.endswith("]"):
            section = tree
            for part in line[1:-1].strip().split("."):
                section = section.setdefault(part.strip(), {})
            continue
        if "=" not in line:
            raise ConfigError(f"line {ln}: expected key = value, got {raw!r}")
        key, val = (s.strip() for s in line.split("=", 1))
        section[key] = _parse_value(val)
    return tree


def _parse_value(val):
    low = val.lower()
    if low in ("true", "yes", "on"):
        return True
    if low in ("false", "no", "off"):
        return False
    if "," in val:
        return [_parse_value(v.strip()) for v in val.split(",") if v.strip()]
    for cast in (int, float):
        try:
            return cast(val)
        except ValueError:
            pass
    return val.strip("\"'")


def config_hash(cfg):
    return hashlib.sha256(
        json.dumps(cfg, sort_keys=True, default=str).encode()
    ).hexdigest()[:16]


def build_surface(cfg):
    surf = cfg.get("surface")
    if not surf or "expression" not in surf:
        raise ConfigError("scenario needs a [surface] section with expression =")
    params = surf.get("params", {})
    if not isinstance(params, dict):
        raise ConfigError("[surface.params] must be a section")
    try:
        spec = SurfaceSpec(
            surf["expression"],
            int(surf.get("dimension", 3)),
            params=params,
            normalized=bool(surf.get("normalized", False)),
            name=surf.get("name", ""),
        )
    except ValueError as exc:
        raise ConfigError(f"bad surface expression: {exc}") from exc
    pert = cfg.get("perturbation", {})
    if pert:
        amps = pert.get("eps", [])
        exprs = pert.get("expression", [])
        if not isinstance(amps, list):
            amps = [amps]
        if not isinstance(exprs, list):
            exprs = [exprs]
        if len(amps) != len(exprs):
            raise ConfigError("[perturbation] eps and expression lengths differ")
        spec = PT.PerturbedSurface(spec, ambient=list(zip(amps, exprs)))
    return spec


def _state(cfg, key="seed_state"):
    block = cfg.get(key)
    if not block:
        raise ConfigError(f"scenario needs a [{key}] section with x =, u =")
    x = np.asarray(block["x"], float)
    u = np.asarray(block["u"], float)
    return PhaseState(x, u / np.linalg.norm(u))


def _settings(cfg, tol_scale=1.0):
    ex = cfg.get("tolerances", {})
    st = DEFAULT_INT
    if "rtol" in ex or "atol" in ex:
        from dataclasses import replace

        st = replace(
            st,
            rtol=float(ex.get("rtol", st.rtol)),
            atol=float(ex.get("atol", st.atol)),
        )
    if tol_scale != 1.0:
        st = st.scaled(tol_scale)
    return st


def run_scenario(cfg, out_dir, seed=0, tol_scale=1.0, threads=1):
    exp = cfg.get("experiment", {})
    kind = exp.get("kind")
    if kind not in ("integrate", "closed", "classify", "section", "perturb",
                    "jets", "annulus", "branches", "verify"):
        raise ConfigError(f"unknown experiment kind {kind!r}")
    out = Path(out_dir)
    out.mkdir(parents=True, exist_ok=True)
    t_start = time.perf_counter()
    payload = {"kind": kind, "seed": seed}
    artifacts = []
    settings = _settings(cfg, tol_scale)

    if kind == "verify":
        rows = run_suite(exp.get("suite", "all"), SuiteContext(tol_scale=tol_scale,
                                                               seed=seed))
        payload["checks"] = [
            {"name": r.name, "value": r.value, "threshold": r.threshold,
             "op": r.op, "passed": r.passed}
            for r in rows
        ]
        payload["all_passed"] = all(r.passed for r in rows)
    elif kind == "integrate":
        spec = build_surface(cfg)
        s0 = _state(cfg)
        traj = integrate(spec, s0, float(exp.get("t_end", 10.0)),
                         settings=settings)
        path = out / "trajectory.csv"
        traj.to_csv(path, spec)
        artifacts.append(str(path))
        payload["stats"] = traj.stats
        payload["final_x"] = traj.final.x.tolist()
        payload["max_speed_drift"] = traj.max_speed_drift()
        if exp.get("joachimsthal", False):
            D = np.diag([1.0 / a**2 for a in exp["semiaxes"]])
            drift, _ = joachimsthal_drift(spec, D, s0, float(exp.get("t_end", 10.0)),
                                          settings=settings)
            payload["joachimsthal_drift"] = drift
    elif kind in ("closed", "classify"):
        spec = build_surface(cfg)
        seeds_cfg = cfg.get("seeds", {})
        states = []
        if "x" in seeds_cfg:
            states.append(_state(cfg, "seeds"))
        else:
            for name in sorted(seeds_cfg):
                states.append(_state(seeds_cfg, name) if isinstance(seeds_cfg[name], dict) else None)
            states = [s for s in states if s is not None]
        if not states:
            raise ConfigError("no [seeds] provided")
        if threads > 1 and len(states) > 1:
            # pure kernels release the GIL; results keep the input order
            from concurrent.futures import ThreadPoolExecutor

            with ThreadPoolExecutor(max_workers=threads) as pool:
                results = list(
                    pool.map(
                        lambda s0: PL.find_closed_geodesic(
                            spec, s0, settings=settings
                        ),
                        states,
                    )
                )
        else:
            results = [
                PL.find_closed_geodesic(spec, s0, settings=settings)
                for s0 in states
            ]
        path = out / "registry.json"
        reg = PL.save_registry(path, spec, results)
        artifacts.append(str(path))
        payload["orbits"] = reg["orbits"]
    elif kind == "section":
        spec = build_surface(cfg)
        s0 = _state(cfg)
        section = PL.SectionSpec.at(spec, s0)
        n_hits = int(exp.get("n_iterates", 50))
        z = np.zeros(2 * section.d)
        rowsz = [z.copy()]
        for _ in range(n_hits):
            z, _ = PL.return_map(spec, section, z, settings=settings)
            rowsz.append(z.copy())
        path = out / "section.csv"
        with open(path, "w") as fh:
            fh.write(",".join([f"y{i+1}" for i in range(section.d)] +
                              [f"v{i+1}" for i in range(section.d)]) + "\n")
            for r in rowsz:
                fh.write(",".join(repr(float(v)) for v in r) + "\n")
        artifacts.append(str(path))
        payload["n_iterates"] = n_hits
    elif kind == "perturb":
        spec = build_surface(cfg)
        base = spec.base if isinstance(spec, PT.PerturbedSurface) else spec
        s0 = _state(cfg)
        psi = exp.get("psi", "x1")
        rep = PT.finite_difference_check(base, psi, s0, float(exp.get("eps", 1e-4)))
        payload["richardson"] = {k: float(v) for k, v in rep.items()}
    elif kind == "jets":
        rng = np.random.default_rng(seed)
        d = int(exp.get("d", 1))
        k = int(exp.get("k", 2))
        trials = int(exp.get("trials", 100))
        N = J.PolySpace(d, k).dim
        wins = 0
        conds = []
        for _ in range(trials):
            sigmas = [J.random_symplectic(d, rng) for _ in range(N)]
            res = J.k_general_test(sigmas, d, k)
            wins += int(res.is_general)
            conds.append(res.condition_number)
        payload["jets"] = {
            "d": d, "k": k, "N": N, "trials": trials, "general": wins,
            "median_condition": float(np.median(conds)),
        }
    elif kind == "annulus":
        spec = build_surface(cfg)
        s0 = _state(cfg)
        res = PL.find_closed_geodesic(spec, s0, settings=settings)
        normal = np.asarray(exp.get("plane_normal", [0, 0, 1]), float)
        amap = AN.build_annulus_map(spec, res, normal=normal, settings=settings,
                                    seed=seed)
        n_iter = int(exp.get("n_iterates", 200))
        orbits_cfg = exp.get("orbits", [[1.0, 1.1]])
        if orbits_cfg and not isinstance(orbits_cfg[0], list):
            orbits_cfg = [orbits_cfg]
        for i, z0 in enumerate(orbits_cfg):
            orb = amap.orbit(np.asarray(z0, float), n_iter)
            path = out / f"annulus_orbit_{i}.csv"
            AN.orbit_to_csv(path, orb)
            artifacts.append(str(path))
        seeds = [np.array([p, np.pi / 2])
                 for p in np.linspace(0.05, 2 * np.pi, 8, endpoint=False)]
        fps = AN.annulus_fixed_points(amap, seeds, m=1)
        payload["fixed_points"] = [
            {"z": f.z.tolist(), "label": f.label, "residual": f.residual,
             "eigenvalues": [[float(z.real), float(z.imag)]
                             for z in f.eigenvalues]}
            for f in fps
        ]
        path = out / "fixed_points.json"
        with open(path, "w") as fh:
            json.dump(payload["fixed_points"], fh, indent=1)
        artifacts.append(str(path))
    elif kind == "branches":
        spec = build_surface(cfg)
        s0 = _state(cfg)
        res = PL.find_closed_geodesic(spec, s0, settings=settings)
        normal = np.asarray(exp.get("plane_normal", [0, 0, 1]), float)
        amap = AN.build_annulus_map(spec, res, normal=normal, settings=settings,
                                    seed=seed)
        seeds = [np.array([p, np.pi / 2])
                 for p in np.linspace(0.05, 2 * np.pi, 8, endpoint=False)]
        fps = AN.annulus_fixed_points(amap, seeds, m=1)
        hyp = sorted((f for f in fps if f.label == "hyperbolic"),
                     key=lambda f: f.z[0])
        if len(hyp) < 2:
            raise NumericalFailure("need two hyperbolic fixed points")
        budget = float(exp.get("max_arclength", 6.0))
        bu = AN.grow_branches(amap, hyp[0], "unstable", max_arclength=budget)
        bs = AN.grow_branches(amap, hyp[1], "stable", max_arclength=budget)
        pu = out / "branch_unstable.csv"
        ps = out / "branch_stable.csv"
        bu.to_csv(pu)
        bs.to_csv(ps)
        artifacts += [str(pu), str(ps)]
        hits = AN.detect_crossing(bu, bs, exclude_radius=1e-2)
        pc = out / "crossings.json"
        AN.crossings_to_json(pc, hits, meta={
            "surface": spec.describe(), "eigenvalue": bu.eigenvalue,
        })
        artifacts.append(str(pc))
        payload["crossings_above_floor"] = int(sum(h["transverse"] for h in hits))
        payload["max_angle"] = max((h["angle"] for h in hits), default=0.0)
    wall = time.perf_counter() - t_start
    manifest = {
        "payload": payload,
        "config_hash": config_hash(cfg),
        "version": __version__,
        "artifacts": artifacts,
        "timing": {"wall_seconds": wall, "finished_at": time.time()},
    }
    with open(out / "manifest.json", "w") as fh:
        json.dump(manifest, fh, indent=1)
    return manifest


def main(argv=None):
    parser = argparse.ArgumentParser(prog="geolab")
    sub = parser.add_subparsers(dest="command", required=True)
    p_run = sub.add_parser("run", help="run a scenario file")
    p_run.add_argument("scenario")
    p_run.add_argument("--out", default="out")
    p_run.add_argument("--seed", type=int, default=0)
    p_run.add_argument("--threads", type=int, default=1)
    p_run.add_argument("--tol-scale", type=float, default=1.0)
    p_ver = sub.add_parser("verify", help="run a named invariant suite")
    p_ver.add_argument("suite")
    p_ver.add_argument("--out", default=None)
    p_ver.add_argument("--seed", type=int, default=0)
    p_ver.add_argument("--threads", type=int, default=1)
    p_ver.add_argument("--tol-scale", type=float, default=1.0)
    args = parser.parse_args(argv)
    try:
        if args.command == "run":
            text = Path(args.scenario).read_text()
            cfg = parse_config(text)
            manifest = run_scenario(cfg, args.out, seed=args.seed,
                                    tol_scale=args.tol_scale,
                                    threads=args.threads)
            print(json.dumps(manifest["payload"], indent=1)[:2000])
            print(f"manifest: {Path(args.out) / 'manifest.json'}")
            ok = manifest["payload"].get("all_passed", True)
            return 0 if ok else 1
        rows = run_suite(args.suite, SuiteContext(tol_scale=args.tol_scale,
                                                  seed=args.seed))
        print(f"{'check':<44s} {'value':>12s}    {'threshold':<10s} status")
        for r in rows:
            print(r.line())
        n_fail = sum(not r.passed for r in rows)
        print(f"{len(rows) - n_fail}/{len(rows)} checks passed")
        if args.out:
            outp = Path(args.out)
            outp.mkdir(parents=True, exist_ok=True)
            with open(outp / "verify.json", "w") as fh:
                json.dump(
                    [{"name": r.name, "value": r.value,
                      "threshold": r.threshold, "op": r.op,
                      "passed": r.passed} for r in rows],
                    fh, indent=1)
        return 0 if n_fail == 0 else 1
    except (ConfigError, UnknownSuite, FileNotFoundError) as exc:
        print(f"config error: {exc}", file=sys.stderr)
        return 2
    except GeolabError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc)}
        print(json.dumps(diag), file=sys.stderr)
        return 3


if __name__ == "__main__":
    sys.exit(main())
