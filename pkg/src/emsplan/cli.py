"""Command-line driver: ``emsplan simulate | train | plan | brute-force | report``.

All randomness comes from the manifest seed. It is split with
``numpy.random.SeedSequence(seed).spawn(3)`` into, in order, the training-set
draw, the kriging restart points and the GA stream.

Exit codes: 0 success, 1 runtime failure, 2 usage or validation error.
"""

from __future__ import annotations

import argparse
import json
import os
import sys
import time
from dataclasses import asdict, dataclass, field, replace
from importlib import resources
from pathlib import Path

import numpy as np
from threadpoolctl import threadpool_limits

from . import __version__
from .fitness import ChromosomeError, CostEvaluator, as_chromosome, chromosome_str
from .optimizer import GaConfig, OptimizerError, brute_force, run
from .propagation import PathBasis, write_field_csv, write_grid_text
from .report import (
    DEFAULT_RADIUS_M,
    coverage_widening,
    cdf,
    power_gap,
    progressive_blind_fractions,
    table_one,
    write_table_one,
)
from .scenario import ScenarioError, bundled_scenario, load_scenario
from .surrogate import KrigingRegressor, TrainingSet, generate_training_set

OUT_ENV = "EMSPLAN_OUT"
DEFAULT_OUT = "emsplan_out"
BRUTE_FORCE_MAX_K = 12


class UsageError(Exception):
    """Bad arguments or inputs; maps to exit code 2."""


class StageError(Exception):
    def __init__(self, stage: str, cause: BaseException):
        super().__init__(f"{stage}: {cause}")
        self.stage = stage
        self.cause = cause


# ---------------------------------------------------------------------------
# manifest
# ---------------------------------------------------------------------------

@dataclass
class RunManifest:
    scenario: str | None = None
    seed: int = 0
    training_size: int = 256
    ga: GaConfig = field(default_factory=GaConfig)
    surrogate: dict = field(default_factory=dict)
    out: str | None = None
    mode: str = "plan"

    def sub_seeds(self) -> dict[str, int]:
        children = np.random.SeedSequence(self.seed).spawn(3)
        names = ("training", "surrogate", "ga")
        return {n: int(c.generate_state(1)[0]) for n, c in zip(names, children)}

    def to_dict(self) -> dict:
        d = asdict(self)
        d["ga"] = self.ga.to_dict()
        d["sub_seeds"] = self.sub_seeds()
        return d


_SURROGATE_KEYS = {"nugget", "max_nugget", "n_restarts", "isotropic", "gamma", "fit_gamma", "log_beta_bounds"}
_MANIFEST_KEYS = {"scenario", "seed", "training_size", "ga", "surrogate", "out", "mode"}


def resolve_config(name: str) -> Path:
    p = Path(name)
    if p.exists():
        return p
    bundled = Path(str(resources.files("emsplan").joinpath(f"data/manifests/{name}.json")))
    if bundled.exists():
        return bundled
    raise UsageError(f"config not found: {name}")


def load_manifest(path: str | Path) -> RunManifest:
    try:
        doc = json.loads(Path(path).read_text())
    except json.JSONDecodeError as e:
        raise UsageError(f"{path}: invalid JSON ({e})") from e
    if not isinstance(doc, dict):
        raise UsageError(f"{path}: manifest must be a JSON object")
    unknown = set(doc) - _MANIFEST_KEYS
    if unknown:
        raise UsageError(f"{path}: unknown manifest keys {sorted(unknown)}")
    sur = doc.get("surrogate", {})
    if set(sur) - _SURROGATE_KEYS:
        raise UsageError(f"{path}: unknown surrogate keys {sorted(set(sur) - _SURROGATE_KEYS)}")
    try:
        ga = GaConfig(**doc.get("ga", {}))
    except TypeError as e:
        raise UsageError(f"{path}: {e}") from e
    return RunManifest(
        scenario=doc.get("scenario"),
        seed=int(doc.get("seed", 0)),
        training_size=int(doc.get("training_size", 256)),
        ga=ga,
        surrogate=dict(sur),
        out=doc.get("out"),
        mode=doc.get("mode", "plan"),
    )


def resolve_scenario(name: str):
    p = Path(name)
    if not p.exists():
        bundled = bundled_scenario(name)
        if not bundled.exists():
            raise UsageError(f"scenario not found: {name}")
        p = bundled
    return load_scenario(p)


def build_manifest(args, mode: str) -> RunManifest:
    m = load_manifest(resolve_config(args.config)) if args.config else RunManifest()
    m.mode = mode
    if args.scenario:
        m.scenario = args.scenario
    if m.scenario is None:
        raise UsageError("no scenario given (use --scenario or set it in --config)")
    if args.seed is not None:
        m.seed = args.seed
    if getattr(args, "T", None) is not None:
        m.training_size = args.T
    ga_over = {}
    for flag, key in (("population", "population"), ("iterations", "iterations")):
        v = getattr(args, flag, None)
        if v is not None:
            ga_over[key] = v
    if ga_over:
        m.ga = replace(m.ga, **ga_over)
    m.ga = replace(m.ga, seed=m.sub_seeds()["ga"])
    m.out = args.out or m.out or os.environ.get(OUT_ENV) or DEFAULT_OUT
    return m


def _out_dir(m: RunManifest) -> Path:
    out = Path(m.out)
    out.mkdir(parents=True, exist_ok=True)
    (out / "manifest.json").write_text(json.dumps(m.to_dict(), indent=1))
    return out


def _chromosome(text: str, k: int) -> np.ndarray:
    if text in ("none", "0"):
        return np.zeros(k, dtype=np.uint8)
    return as_chromosome(text, k)


def _check_training_size(T: int, k: int) -> None:
    if T < 2:
        raise UsageError(f"training size must be >= 2, got {T}")
    if T > 2**k:
        raise UsageError(f"training size {T} exceeds the 2^K = {2**k} distinct chromosomes")


# ---------------------------------------------------------------------------
# shared pieces
# ---------------------------------------------------------------------------

def train_model(scenario, m: RunManifest, evaluator: CostEvaluator, threads: int | None):
    seeds = m.sub_seeds()
    training = generate_training_set(scenario, m.training_size, seeds["training"], evaluator)
    params = dict(m.surrogate)
    if "log_beta_bounds" in params:
        params["log_beta_bounds"] = tuple(params["log_beta_bounds"])
    model = KrigingRegressor(random_state=seeds["surrogate"], n_jobs=threads, **params)
    model.fit(training.X, training.y)
    return training, model


def loo_report(model: KrigingRegressor) -> dict:
    r = model.loo_residuals()
    return {
        "n": int(r.size),
        "rmse": float(np.sqrt(np.mean(r**2))),
        "max_abs": float(np.max(np.abs(r))),
        "target_std": float(np.std(model.y_train_)),
        "beta": model.beta_.tolist(),
        "nugget": model.nugget_,
        "residuals": r.tolist(),
    }


def write_maps(scenario, basis: PathBasis, chi: np.ndarray, out: Path, prefix: str) -> None:
    fld = basis.field(chi)
    th = scenario.coverage_threshold_dbm
    write_field_csv(fld, out / f"{prefix}coverage.csv")
    write_grid_text(scenario, fld.power_dbm, out / f"{prefix}coverage_grid.txt")
    mask = fld.below(th).astype(np.uint8)
    write_field_csv(fld, out / f"{prefix}mask.csv", column="below_threshold", values=mask)
    write_grid_text(scenario, mask, out / f"{prefix}mask_grid.txt", fmt="%d")


def write_report(scenario, chi: np.ndarray, out: Path, evaluator: CostEvaluator, basis: PathBasis | None = None) -> dict:
    """Maps, power gap, per-RoI CDFs, coverage widening and the summary table for ``chi``."""
    basis = basis or PathBasis(scenario)
    zero = np.zeros_like(chi)
    th = scenario.coverage_threshold_dbm
    write_maps(scenario, basis, zero, out, "nominal_")
    write_maps(scenario, basis, chi, out, "optimized_")
    f0, f1 = basis.field(zero), basis.field(chi)
    gap = power_gap(f1, f0)
    write_field_csv(f1, out / "delta_p.csv", column="delta_p_db", values=gap)
    write_grid_text(scenario, gap, out / "delta_p_grid.txt")

    p0 = evaluator.roi_power_dbm(zero)
    p1 = evaluator.roi_power_dbm(chi)
    rois = {}
    for roi in scenario.rois:
        sel = evaluator.owner == roi.id
        for tag, f in (("nominal", f0), ("optimized", f1)):
            cdf(f, roi.center, DEFAULT_RADIUS_M).write_csv(out / f"cdf_roi{roi.id}_{tag}.csv")
        support = [k for k in scenario.walls_of(roi.id) if chi[k]]
        rois[str(roi.id)] = {
            "coverage_widening": coverage_widening(p0[sel] < th, p1[sel] < th),
            "theta_at_threshold_progressive": progressive_blind_fractions(
                basis, chi, support, roi.center, DEFAULT_RADIUS_M, th
            ),
            "installed_walls": support,
        }
    true = evaluator.breakdown(chi)
    row = table_one(
        th, scenario.n_rois, scenario.n_walls, evaluator.coverage_term(zero),
        int(chi.sum()), true.phi, true.phi_cov, true.phi_cost,
    )
    write_table_one(row, out / "table_one")
    summary = {"chromosome": chromosome_str(chi), "table_one": row, "rois": rois}
    (out / "report.json").write_text(json.dumps(summary, indent=1))
    return summary


# ---------------------------------------------------------------------------
# commands
# ---------------------------------------------------------------------------

class _Stage:
    def __init__(self, name: str):
        self.name = name

    def __enter__(self):
        return self

    def __exit__(self, et, ev, tb):
        if ev is not None and not isinstance(ev, (UsageError, StageError, ScenarioError, ChromosomeError, OptimizerError)):
            raise StageError(self.name, ev) from ev
        return False


def cmd_simulate(args) -> int:
    with _Stage("load"):
        scenario = resolve_scenario(args.scenario)
        chi = _chromosome(args.chromosome, scenario.n_walls) if args.chromosome else None
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    with _Stage("simulate"):
        basis = PathBasis(scenario)
        zero = np.zeros(scenario.n_walls, dtype=np.uint8)
        if chi is None:
            write_maps(scenario, basis, zero, out, "")
        else:
            write_maps(scenario, basis, chi, out, "")
            write_maps(scenario, basis, zero, out, "nominal_")
            gap = power_gap(basis.field(chi), basis.field(zero))
            write_field_csv(basis.field(chi), out / "delta_p.csv", column="delta_p_db", values=gap)
            write_grid_text(scenario, gap, out / "delta_p_grid.txt")
    print(f"wrote coverage maps for {scenario.name or args.scenario} to {out}")
    return 0


def cmd_train(args) -> int:
    m = build_manifest(args, "train")
    with _Stage("load"):
        scenario = resolve_scenario(m.scenario)
    _check_training_size(m.training_size, scenario.n_walls)
    out = _out_dir(m)
    with _Stage("train"):
        evaluator = CostEvaluator(scenario)
        training, model = train_model(scenario, m, evaluator, args.threads)
        model.save(out / "surrogate.json")
        (out / "training_set.json").write_text(json.dumps(training.to_dict()))
        loo = loo_report(model)
        (out / "loo.json").write_text(json.dumps(loo, indent=1))
    print(f"trained kriging on T={len(training)} K={scenario.n_walls}: LOO rmse={loo['rmse']:.4e} "
          f"max|r|={loo['max_abs']:.4e} (target std {loo['target_std']:.4e})")
    print(f"model written to {out / 'surrogate.json'}")
    return 0


def _brute(scenario, evaluator):
    if scenario.n_walls > BRUTE_FORCE_MAX_K:
        raise UsageError(f"brute force limited to K <= {BRUTE_FORCE_MAX_K}, scenario has K={scenario.n_walls}")
    return brute_force(scenario, max_walls=BRUTE_FORCE_MAX_K, evaluator=evaluator)


def cmd_brute_force(args) -> int:
    with _Stage("load"):
        scenario = resolve_scenario(args.scenario)
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    with _Stage("brute-force"):
        res = _brute(scenario, CostEvaluator(scenario))
        (out / "brute_force.json").write_text(json.dumps(res.to_dict(), indent=1))
    b = res.breakdown
    print(f"global optimum {chromosome_str(res.chromosome)}: Phi={b.phi:.6f} "
          f"(Phi_cov={b.phi_cov:.6f}, Phi_cost={b.phi_cost:.6f}) over {res.phi_all.size} chromosomes")
    return 0


def cmd_plan(args) -> int:
    t0 = time.perf_counter()
    m = build_manifest(args, "plan")
    with _Stage("load"):
        scenario = resolve_scenario(m.scenario)
    if args.brute_force and scenario.n_walls > BRUTE_FORCE_MAX_K:
        raise UsageError(f"--brute-force limited to K <= {BRUTE_FORCE_MAX_K}, scenario has K={scenario.n_walls}")
    out = _out_dir(m)
    evaluator = CostEvaluator(scenario)
    with _Stage("train"):
        if args.model:
            model = KrigingRegressor.load(args.model)
            training = TrainingSet(model.X_train_.astype(np.uint8), model.y_train_)
        else:
            _check_training_size(m.training_size, scenario.n_walls)
            training, model = train_model(scenario, m, evaluator, args.threads)
            model.save(out / "surrogate.json")
    with _Stage("optimize"):
        result = run(scenario, model, training, m.ga, evaluator)
    doc = result.to_dict()
    with _Stage("brute-force"):
        if args.brute_force:
            bf = _brute(scenario, evaluator)
            doc["brute_force"] = bf.to_dict()
            doc["relative_gap"] = (result.true.phi - bf.breakdown.phi) / bf.breakdown.phi
    with _Stage("report"):
        (out / "plan.json").write_text(json.dumps(doc, indent=1))
        result.write_log(out / "run_log.csv")
        write_report(scenario, result.chromosome, out, evaluator)
    t = result.true
    print(f"plan {chromosome_str(result.chromosome)} Q={result.n_installed}: Phi={t.phi:.6f} "
          f"(Phi_cov={t.phi_cov:.6f}, Phi_cost={t.phi_cost:.6f}); predicted Phi={result.predicted.phi:.6f}")
    if args.brute_force:
        print(f"brute-force optimum Phi={doc['brute_force']['true']['phi']:.6f}, gap {doc['relative_gap']:.2%}")
    print(f"time saving dt_sav = {result.time_saving:.4f}  ({time.perf_counter() - t0:.1f} s)")
    return 0


def cmd_report(args) -> int:
    with _Stage("load"):
        scenario = resolve_scenario(args.scenario)
        if args.plan:
            text = json.loads(Path(args.plan).read_text())["chromosome"]
        elif args.chromosome:
            text = args.chromosome
        else:
            raise UsageError("report needs --chromosome or --plan")
        chi = _chromosome(text, scenario.n_walls)
    out = Path(args.out or os.environ.get(OUT_ENV) or DEFAULT_OUT)
    out.mkdir(parents=True, exist_ok=True)
    with _Stage("report"):
        summary = write_report(scenario, chi, out, CostEvaluator(scenario))
    row = summary["table_one"]
    print(f"{summary['chromosome']}: Phi={row['Phi']:.4e} Phi_cov={row['Phi_cov']:.4e} "
          f"(nominal {row['Phi_cov_nominal']:.4e})")
    return 0


# ---------------------------------------------------------------------------
# entry point
# ---------------------------------------------------------------------------

def _parser() -> argparse.ArgumentParser:
    common = argparse.ArgumentParser(add_help=False)
    common.add_argument("--scenario", help="scenario JSON path or bundled name (e.g. demo_k10)")
    common.add_argument("--config", help="run manifest JSON path or bundled name (e.g. paper_defaults)")
    common.add_argument("--seed", type=int, default=None)
    common.add_argument("--threads", type=int, default=None, help="cap on worker threads")
    common.add_argument("--out", default=None, help=f"output directory (default ${OUT_ENV} or ./{DEFAULT_OUT})")

    ap = argparse.ArgumentParser(prog="emsplan", description="EMS placement planning with a kriging-driven GA.")
    ap.add_argument("--version", action="version", version=f"emsplan {__version__}")
    sub = ap.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", parents=[common], help="coverage maps for a deployment")
    p.add_argument("--chromosome", help="K-bit string; omit or 'none' for the nominal map")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("train", parents=[common], help="build and fit the surrogate")
    p.add_argument("--T", type=int, default=None, help="training set size")
    p.set_defaults(func=cmd_train)

    p = sub.add_parser("plan", parents=[common], help="full surrogate-driven planning run")
    p.add_argument("--T", type=int, default=None)
    p.add_argument("--model", help="reuse a fitted surrogate instead of training inline")
    p.add_argument("--population", type=int, default=None)
    p.add_argument("--iterations", type=int, default=None)
    p.add_argument("--brute-force", action="store_true", help=f"also enumerate all chromosomes (K <= {BRUTE_FORCE_MAX_K})")
    p.set_defaults(func=cmd_plan)

    p = sub.add_parser("brute-force", parents=[common], help=f"exhaustive optimum (K <= {BRUTE_FORCE_MAX_K})")
    p.set_defaults(func=cmd_brute_force)

    p = sub.add_parser("report", parents=[common], help="analysis artifacts for a deployment")
    p.add_argument("--chromosome")
    p.add_argument("--plan", help="plan.json produced by 'plan'")
    p.set_defaults(func=cmd_report)
    return ap


def main(argv: list[str] | None = None) -> int:
    args = _parser().parse_args(argv)
    if args.command in ("simulate", "brute-force", "report") and not args.scenario:
        print("error: --scenario is required", file=sys.stderr)
        return 2
    if args.threads is not None and args.threads < 1:
        print("error: --threads must be >= 1", file=sys.stderr)
        return 2
    try:
        with threadpool_limits(limits=args.threads):
            return args.func(args)
    except (UsageError, ScenarioError, ChromosomeError, OptimizerError) as e:
        print(f"error: {e}", file=sys.stderr)
        return 2
    except StageError as e:
        print(f"error in stage {e}", file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
