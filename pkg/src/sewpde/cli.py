"""Experiment orchestration: config parsing, seed management, running the
module pipelines end to end, and emitting reproducible tables.

Every output embeds the fully resolved configuration and its hash, so a
verify run can re-execute from the artifact alone and diff byte by byte.
Exit codes: 0 ok, 2 config error, 3 numerical failure, 4 regime violation
(strict mode only).
"""

from __future__ import annotations

import argparse
import hashlib
import json
import sys
import tempfile
from pathlib import Path

import numpy as np

VERSION = "0.1.0"
EXIT_OK, EXIT_CONFIG, EXIT_NUMERICAL, EXIT_REGIME = 0, 2, 3, 4

COMMON_KEYS = {
    "modes": int,
    "horizon": float,
    "seed": int,
    "noise": str,
    "hurst": float,
    "nu": float,
    "fine_level": int,
    "format": str,
    "out": str,
    "strict_regime": bool,
}

SUBCOMMAND_KEYS = {
    "sew-demo": {"level": int, "count": int, "mus": str},
    "young-heat": {"sigma": str, "psi": str, "tol": float, "solve_level": int, "kappa": float},
    "rough-linear": {"psi": str, "tol": float, "keep_level": int, "eta": float, "lift_order": int},
    "rough-quadratic": {"psi": str, "tol": float, "solve_level": int, "eta": float, "trees": str},
    "regularity": {"target": str, "samples": int, "ladder": str, "eta": float, "kappa": float},
    "validate": {"kappa": float, "eta": float},
    "verify": {"file": str},
}

DEFAULTS = {
    "modes": 8,
    "horizon": 1.0,
    "seed": 0,
    "noise": "brownian",
    "hurst": 0.8,
    "nu": 0.5,
    "fine_level": 10,
    "format": "csv",
    "out": "out",
    "strict_regime": False,
    "level": 8,
    "count": 20,
    "mus": "1.2,1.5,1.8",
    "sigma": "tanh",
    "psi": "gauss-bump",
    "tol": 1e-8,
    "solve_level": 8,
    "keep_level": 8,
    "kappa": 0.3,
    "eta": 0.3,
    "lift_order": 3,
    "trees": "v,hv,vh",
    "target": "x1",
    "samples": 200,
    "ladder": "7..11",
    "file": "",
}


class ConfigError(ValueError):
    pass


def parse_config_file(path: str) -> dict:
    text = Path(path).read_text()
    stripped = text.lstrip()
    if stripped.startswith("{"):
        return json.loads(text)
    out = {}
    for line in text.splitlines():
        line = line.strip()
        if not line or line.startswith("#"):
            continue
        if "=" not in line:
            raise ConfigError(f"bad config line {line!r} (expected key=value)")
        k, _, v = line.partition("=")
        out[k.strip()] = v.strip()
    return out


def resolve_config(subcommand: str, file_cfg: dict, cli_cfg: dict) -> dict:
    known = dict(COMMON_KEYS)
    known.update(SUBCOMMAND_KEYS.get(subcommand, {}))
    cfg = {}
    for source in (file_cfg, cli_cfg):
        for key, val in source.items():
            key = key.replace("-", "_")
            if key not in known:
                raise ConfigError(f"unknown config key {key!r} for {subcommand}")
            if val is None:
                continue
            typ = known[key]
            if typ is bool and isinstance(val, str):
                cfg[key] = val.lower() in ("1", "true", "yes")
            else:
                cfg[key] = typ(val)
    for key in known:
        cfg.setdefault(key, DEFAULTS[key])
    cfg["subcommand"] = subcommand
    return cfg


def config_hash(cfg: dict) -> str:
    canon = json.dumps(cfg, sort_keys=True)
    return hashlib.sha256(canon.encode()).hexdigest()[:16]


def provenance(cfg: dict) -> dict:
    return {"version": VERSION, "config": cfg, "config_hash": config_hash(cfg)}


def csv_header(cfg: dict) -> str:
    return (
        f"# sewpde {VERSION}\n"
        f"# config-hash {config_hash(cfg)}\n"
        f"# config {json.dumps(cfg, sort_keys=True)}\n"
    )


def write_json(path: Path, cfg: dict, payload: dict) -> None:
    doc = {"provenance": provenance(cfg), **payload}
    path.write_text(json.dumps(doc, sort_keys=True, indent=1) + "\n")


def make_psi(spec: str, sp):
    from .spectral import SpectralField

    coeffs = np.zeros(sp.size, dtype=complex)
    if spec.startswith("mode:"):
        k = int(spec.split(":", 1)[1])
        if abs(k) > sp.nmodes:
            raise ConfigError(f"psi mode {k} outside the truncation")
        coeffs[sp.nmodes] = 0.2
        coeffs[sp.nmodes + k] += 0.4
        coeffs[sp.nmodes - k] += 0.4
    elif spec == "gauss-bump":
        n = np.arange(-sp.nmodes, sp.nmodes + 1)
        coeffs = np.exp(-((n / 3.0) ** 2)).astype(complex)
    else:
        raise ConfigError(f"unknown psi spec {spec!r}")
    return SpectralField(sp, coeffs)


def noise_params(cfg: dict):
    from .noise import NoiseParams

    return NoiseParams(
        kind=cfg["noise"],
        nmodes=cfg["modes"],
        nu=cfg["nu"],
        hurst=cfg["hurst"] if cfg["noise"] == "fbm" else None,
        seed=cfg["seed"],
        fine_level=cfg["fine_level"],
        horizon=cfg["horizon"],
    )


# ---------------------------------------------------------------------------
# regime validation


def regime_checks(cfg: dict) -> list[dict]:
    nubar = min(cfg["nu"], 0.5)
    kappa, eta = cfg["kappa"], cfg["eta"]
    checks = []

    def add(name, expr, ok):
        checks.append({"name": name, "expression": expr, "ok": bool(ok)})

    if cfg["noise"] == "fbm":
        H = cfg["hurst"]
        add("young-lift", f"H + nubar/2 = {H + nubar / 2:.3f} > 3/4", H + nubar / 2 > 0.75)
        add(
            "young-global",
            f"H = {H:.3f} > 7/8 - nubar/2 = {7 / 8 - nubar / 2:.3f}",
            H > 7 / 8 - nubar / 2,
        )
        gamma_t = H - 0.25 + nubar / 2
        add("young-products", f"gamma + kappa = {gamma_t + kappa:.3f} > 1", gamma_t + kappa > 1)
    else:
        add("rough-step3", f"nu = {cfg['nu']:.3f} > 1/3", cfg["nu"] > 1 / 3)
        kappa0 = 0.25 - eta + nubar / 2
        rho = 0.25 - nubar / 2
        gamma = kappa0 + eta + rho
        add(
            "hyp3-sum",
            f"gamma + 3 kappa0 = {gamma + 3 * kappa0:.3f} > 1",
            gamma + 3 * kappa0 > 1,
        )
        add("quadratic-space", f"eta = {eta:.3f} > 1/4", eta > 0.25)
    add("kappa-upper", f"kappa = {kappa:.3f} < 1/2", kappa < 0.5)
    add("kappa-lower", f"kappa = {kappa:.3f} > 1/4", kappa > 0.25)
    return checks


# ---------------------------------------------------------------------------
# subcommand runners


def run_sew_demo(cfg: dict, outdir: Path) -> int:
    from .grids import DyadicGrid
    from .increments import Increment2, delta, holder_norm2, holder_norm3, sew

    level = cfg["level"]
    g = DyadicGrid(cfg["horizon"], level)
    rng = np.random.default_rng(cfg["seed"])
    mus = [float(x) for x in cfg["mus"].split(",")]
    lines = ["mu,instance,h_norm,lam_norm,bound,ratio,ok"]
    for mu in mus:
        for inst in range(cfg["count"]):
            w = rng.standard_normal(3)
            theta = mu - 1.0

            def Bfn(t, s, w=w, theta=theta):
                ts, ss = g.time(t), g.time(s)
                return np.array(
                    [
                        w[0] * np.cos(2 * ss) * (ts - ss) ** (1 + theta)
                        + w[1] * ss * (ts - ss)
                        + 0.2 * w[2] * (ts - ss) ** (1 + theta) * np.sin(5 * ss)
                    ]
                )

            h = delta(Increment2(g, 1, fn=Bfn))
            lam = sew(h, mu=mu)
            lhs = holder_norm2(lam.increment, mu).value
            hn = holder_norm3(h, mu).value
            bound = hn / (2.0**mu - 2.0)
            ratio = lhs / bound if bound > 0 else 0.0
            lines.append(
                f"{mu!r},{inst},{hn!r},{lhs!r},{bound!r},{ratio!r},{ratio <= 1.05}"
            )
    out = outdir / "sew_demo.csv"
    out.write_text(csv_header(cfg) + "\n".join(lines) + "\n")
    write_json(outdir / "sew_demo.json", cfg, {"rows": len(lines) - 1, "ok": True})
    return EXIT_OK


def _write_path_csv(path_obj, cfg, outfile: Path) -> None:
    lines = ["t," + ",".join(f"re_{n},im_{n}" for n in path_obj.params.modes)]
    for i, t in enumerate(path_obj.grid.points):
        row = [repr(float(t))]
        for c in path_obj.coeffs[i]:
            row += [repr(float(c.real)), repr(float(c.imag))]
        lines.append(",".join(row))
    outfile.write_text(csv_header(cfg) + "\n".join(lines) + "\n")


def run_young(cfg: dict, outdir: Path) -> int:
    from .noise import sample_driver
    from .solvers import YoungProblem, solve_young

    params = noise_params(cfg)
    driver = sample_driver(params)
    sp = driver.spectral
    psi = make_psi(cfg["psi"], sp)
    res = solve_young(
        YoungProblem(driver, cfg["sigma"], psi, kappa=cfg["kappa"]),
        tol=cfg["tol"],
        solve_level=min(cfg["solve_level"], params.fine_level),
    )
    _write_path_csv(res.path, cfg, outdir / "young_path.csv")
    write_json(outdir / "young_diagnostics.json", cfg, {"diagnostics": res.diagnostics})
    return EXIT_OK


def run_rough_linear(cfg: dict, outdir: Path) -> int:
    from .lift import build_lift, extend_lift
    from .noise import sample_driver
    from .solvers import solve_rough_linear

    params = noise_params(cfg)
    driver = sample_driver(params)
    sp = driver.spectral
    psi = make_psi(cfg["psi"], sp)
    lift = build_lift(
        driver, keep_level=min(cfg["keep_level"], params.fine_level), n_orders=3, eta=cfg["eta"]
    )
    res = solve_rough_linear(lift, psi, tol=cfg["tol"])
    _write_path_csv(res.path, cfg, outdir / "rough_linear_path.csv")
    diag = dict(res.diagnostics)
    if cfg["lift_order"] >= 4:
        series = extend_lift(lift, cfg["lift_order"])
        norms = series.order_norms()
        diag["series_norms"] = {str(k): v for k, v in norms.items()}
        diag["cocycle_residual_m"] = series.cocycle_residual(cfg["lift_order"])
    diag["ledger"] = lift.ledger
    write_json(outdir / "rough_linear_diagnostics.json", cfg, {"diagnostics": diag})
    return EXIT_OK


def run_rough_quadratic(cfg: dict, outdir: Path) -> int:
    from .lift import build_tree_ops
    from .noise import sample_driver
    from .solvers import solve_rough_quadratic

    params = noise_params(cfg)
    driver = sample_driver(params)
    sp = driver.spectral
    psi = make_psi(cfg["psi"], sp)
    psi = psi * 0.5
    build_tree_ops(driver, [t for t in cfg["trees"].split(",") if t])  # validates names
    res = solve_rough_quadratic(
        driver, psi, solve_level=cfg["solve_level"], tol=cfg["tol"]
    )
    _write_path_csv(res.path, cfg, outdir / "rough_quadratic_path.csv")
    write_json(outdir / "rough_quadratic_diagnostics.json", cfg, {"diagnostics": res.diagnostics})
    return EXIT_OK


def run_regularity(cfg: dict, outdir: Path) -> int:
    from .regularity import mc_scaling

    lad = cfg["ladder"]
    if ".." in lad:
        a, b = lad.split("..")
        ladder = tuple(range(int(a), int(b) + 1))
    else:
        ladder = tuple(int(x) for x in lad.split(","))
    fit = mc_scaling(
        cfg["target"],
        noise_params(cfg),
        samples=cfg["samples"],
        ladder=ladder,
        eta=cfg["eta"],
        kappa=cfg["kappa"],
    )
    lines = ["gap,mean_hs_sq"]
    for tau, mean in zip(fit.ladder, fit.means):
        lines.append(f"{tau!r},{mean!r}")
    (outdir / "regularity_ladder.csv").write_text(csv_header(cfg) + "\n".join(lines) + "\n")
    write_json(outdir / "regularity_verdict.json", cfg, {"fit": fit.to_json()})
    return EXIT_OK


def run_validate(cfg: dict, outdir: Path | None) -> int:
    checks = regime_checks(cfg)
    doc = {"checks": checks, "all_ok": all(c["ok"] for c in checks)}
    if outdir is not None:
        write_json(outdir / "validate.json", cfg, doc)
    print(json.dumps({"provenance": provenance(cfg), **doc}, sort_keys=True, indent=1))
    if cfg["strict_regime"] and not doc["all_ok"]:
        return EXIT_REGIME
    return EXIT_OK


def run_verify(cfg: dict, outdir: Path) -> int:
    target = Path(cfg["file"])
    if not target.exists():
        raise ConfigError(f"no such artifact: {target}")
    if target.suffix == ".json":
        doc = json.loads(target.read_text())
        emb = doc.get("provenance", {}).get("config")
    else:
        emb = None
        for line in target.read_text().splitlines():
            if line.startswith("# config "):
                emb = json.loads(line[len("# config ") :])
                break
    if emb is None:
        raise ConfigError("artifact carries no embedded config")
    sub = emb.pop("subcommand")
    with tempfile.TemporaryDirectory() as tmp:
        emb_cfg = resolve_config(sub, emb, {})
        rerun_dir = Path(tmp)
        rc = RUNNERS[sub](emb_cfg, rerun_dir)
        if rc != EXIT_OK:
            return rc
        fresh = rerun_dir / target.name
        if not fresh.exists():
            raise ConfigError(f"re-run did not produce {target.name}")
        if fresh.read_bytes() != target.read_bytes():
            print(f"MISMATCH: {target} differs from its re-run")
            return EXIT_NUMERICAL
    print(f"verified: {target} reproduces byte-identically")
    return EXIT_OK


RUNNERS = {
    "sew-demo": run_sew_demo,
    "young-heat": run_young,
    "rough-linear": run_rough_linear,
    "rough-quadratic": run_rough_quadratic,
    "regularity": run_regularity,
    "validate": run_validate,
    "verify": run_verify,
}


def build_parser() -> argparse.ArgumentParser:
    ap = argparse.ArgumentParser(
        prog="sewpde",
        description="sewing-calculus solvers and diagnostics for rough heat equations on the circle",
    )
    sub = ap.add_subparsers(dest="subcommand", required=True)
    for name in RUNNERS:
        p = sub.add_parser(name)
        p.add_argument("--config", default=None, help="key=value or JSON config file")
        for key, typ in {**COMMON_KEYS, **SUBCOMMAND_KEYS.get(name, {})}.items():
            flag = "--" + key.replace("_", "-")
            if typ is bool:
                p.add_argument(flag, action="store_true", default=None)
            else:
                p.add_argument(flag, type=str, default=None)
    return ap


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    sub = args.subcommand
    cli_cfg = {
        k: v
        for k, v in vars(args).items()
        if k not in ("subcommand", "config") and v is not None
    }
    try:
        file_cfg = parse_config_file(args.config) if args.config else {}
        cfg = resolve_config(sub, file_cfg, cli_cfg)
    except (ConfigError, ValueError, OSError) as exc:
        print(json.dumps({"error": str(exc), "kind": "config"}), file=sys.stderr)
        return EXIT_CONFIG

    if sub == "validate":
        outdir = Path(cfg["out"]) if cfg["out"] else None
        if outdir is not None:
            outdir.mkdir(parents=True, exist_ok=True)
        return run_validate(cfg, outdir)

    if cfg["strict_regime"] and sub in ("young-heat", "rough-linear", "rough-quadratic"):
        checks = regime_checks(cfg)
        if not all(c["ok"] for c in checks):
            print(json.dumps({"error": "regime violation", "checks": checks}), file=sys.stderr)
            return EXIT_REGIME

    outdir = Path(cfg["out"])
    outdir.mkdir(parents=True, exist_ok=True)
    try:
        return RUNNERS[sub](cfg, outdir)
    except ConfigError as exc:
        print(json.dumps({"error": str(exc), "kind": "config"}), file=sys.stderr)
        return EXIT_CONFIG
    except Exception as exc:  # numerical failures become machine-readable
        print(
            json.dumps({"error": str(exc), "kind": type(exc).__name__}),
            file=sys.stderr,
        )
        return EXIT_NUMERICAL


if __name__ == "__main__":
    sys.exit(main())
