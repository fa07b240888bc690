"""Command-line front end: ``lrinfer {fit,infer,hte,simulate,diagnose}``.

Exit codes: 0 success, 2 invalid input, 3 solver failure. Errors are written
to stderr as one JSON object. ``LRINFER_LOG`` sets the log level.
"""

from __future__ import annotations

import argparse
import json
import logging
import math
import os
import sys
from importlib import resources
from pathlib import Path

import numpy as np

from . import __version__
from .diagnostics import diagnose
from .errors import SolverError, ValidationError
from .inference import hte_infer, infer
from .nuclear import NuclearConfig
from .panel import GroupSpec, Mode, ObservedPanel, compute_heterogeneity, load_panel, read_grid
from .pipeline import PipelineConfig, run_pipeline
from .sim import WEIGHT_SCHEMES, DgpConfig, Variant, coverage_study, hte_coverage_study
from .weights import DiversifiedWeights, Provenance, from_characteristics

log = logging.getLogger("lrinfer")

EXIT_OK, EXIT_INVALID, EXIT_SOLVER = 0, 2, 3


class _MissingField(ValidationError):
    def __init__(self, name: str, flag: str):
        super().__init__(f"missing required field '{name}' ({flag})")
        self.field = name


# ---------------------------------------------------------------- parsing


def _add_model_args(p: argparse.ArgumentParser, panel: bool = True) -> None:
    if panel:
        p.add_argument("--y", help="outcome CSV (N x T); empty or NaN cells are missing")
        p.add_argument("--x", help="regressor or mask CSV (N x T)")
    p.add_argument("--mode", default="binary-mask", help="binary-mask (default) or general-regressor")
    p.add_argument("--weights-beta", help="W_beta CSV (N x R)")
    p.add_argument("--weights-f", help="W_F CSV (T x R)")
    p.add_argument("--chars-beta", help="unit characteristics CSV (N x d)")
    p.add_argument("--chars-f", help="time characteristics CSV (T x d)")
    p.add_argument("--degree", type=int, default=1, help="polynomial degree for characteristics")
    p.add_argument("--constant", action="store_true", help="add a constant weight column")
    p.add_argument("--group", help='JSON object, JSON file, or inline spec like "block:1-5x10-20"')
    p.add_argument("--lambda", dest="lam", default="auto", help="penalty level or 'auto'")
    p.add_argument("--lambda-const", type=float, default=NuclearConfig.lambda_const,
                   help="constant of the automatic penalty rule")
    p.add_argument("--max-iters", type=int, default=NuclearConfig.max_iters)
    p.add_argument("--tol", type=float, default=NuclearConfig.tol)
    p.add_argument("--level", type=float, default=0.95)
    p.add_argument("--null", type=float, default=0.0, dest="null_value")
    p.add_argument("--ablate-B2", action="store_true", dest="ablate_B2",
                   help="skip the second bias correction")
    p.add_argument("--force-sigma0", action="store_true", help="set the noise variance estimate to 0")
    p.add_argument("--one-sided", action="store_true", help="report the one-sided p-value (H0: mean <= null)")
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--threads", type=int, default=1)
    p.add_argument("--out", help="output path (default: stdout)")


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="lrinfer", description=__doc__.splitlines()[0])
    parser.add_argument("--version", action="version", version=f"%(prog)s {__version__}")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("fit", help="estimate M_hat and write all intermediates")
    _add_model_args(p)
    p = sub.add_parser("infer", help="confidence interval for a group average")
    _add_model_args(p)
    p = sub.add_parser("diagnose", help="advisory checks of the model conditions")
    _add_model_args(p)
    p.add_argument("--with-fit", action="store_true", help="also fit and report spectrum diagnostics")

    p = sub.add_parser("hte", help="treatment-effect inference from two complementary arms")
    _add_model_args(p, panel=False)
    for arm in ("1", "0"):
        p.add_argument(f"--y{arm}", help=f"arm-{arm} outcome CSV")
        p.add_argument(f"--x{arm}", help=f"arm-{arm} mask CSV")
    p.add_argument("--y", help="observed outcome CSV (with --treatment)")
    p.add_argument("--treatment", help="0/1 treatment indicator CSV")

    p = sub.add_parser("simulate", help="Monte Carlo coverage experiment")
    _add_model_args(p, panel=False)
    p.add_argument("--N", type=int, default=150)
    p.add_argument("--T", type=int, default=150)
    p.add_argument("--r", type=int, default=2)
    p.add_argument("--R", type=int, default=4)
    p.add_argument("--sigma", type=float, default=1.0)
    p.add_argument("--p", type=float, default=0.8)
    p.add_argument("--a-N", type=float, default=1.0, dest="a_N")
    p.add_argument("--weight-scheme", default="oracle-augmented", choices=WEIGHT_SCHEMES)
    p.add_argument("--reps", type=int, default=500)
    p.add_argument("--effect-size", type=float, default=None,
                   help="run the two-arm treatment-effect design with this effect")
    p.add_argument("--z-csv", help="per-rep table path (default: next to --out)")
    return parser


# ---------------------------------------------------------------- builders


def nuclear_config(args) -> NuclearConfig:
    lam = args.lam
    if lam != "auto":
        try:
            lam = float(lam)
        except ValueError:
            raise ValidationError(f"--lambda must be a number or 'auto', got {lam!r}") from None
    return NuclearConfig(lam=lam, max_iters=args.max_iters, tol=args.tol, lambda_const=args.lambda_const)


def pipeline_config(args) -> PipelineConfig:
    return PipelineConfig(nuclear_config(args), ablate_B2=args.ablate_B2, force_sigma0=args.force_sigma0)


def _check_level(level: float) -> None:
    if not 0.5 < level < 1:
        raise ValidationError(f"--level must lie in (0.5, 1), got {level}")


def _require(args, name: str, flag: str | None = None):
    value = getattr(args, name, None)
    if value is None:
        raise _MissingField(name, flag or f"--{name.replace('_', '-')}")
    return value


def load_group(text: str, shape) -> GroupSpec:
    text = text.strip()
    if text.startswith("{"):
        try:
            obj = json.loads(text)
        except json.JSONDecodeError as exc:
            raise ValidationError(f"group JSON does not parse: {exc}") from None
        return GroupSpec.from_json(obj, shape)
    path = Path(text)
    if path.suffix == ".json" or path.is_file():
        if not path.is_file():
            raise ValidationError(f"group file not found: {path}")
        try:
            obj = json.loads(path.read_text())
        except json.JSONDecodeError as exc:
            raise ValidationError(f"group file {path} does not parse: {exc}") from None
        return GroupSpec.from_json(obj, shape)
    return GroupSpec.parse(text, shape)


def _dense(path, what: str) -> np.ndarray:
    A = read_grid(path)
    if np.isnan(A).any():
        raise ValidationError(f"{what} file {path} has missing cells")
    return A


def load_weights(args, N: int, T: int) -> DiversifiedWeights:
    if args.weights_beta or args.weights_f:
        if not (args.weights_beta and args.weights_f):
            raise ValidationError("--weights-beta and --weights-f must be given together")
        w = DiversifiedWeights(_dense(args.weights_beta, "weights"), _dense(args.weights_f, "weights"),
                               Provenance.USER_SUPPLIED)
    elif args.chars_beta or args.chars_f:
        if not (args.chars_beta and args.chars_f):
            raise ValidationError("--chars-beta and --chars-f must be given together")
        w = from_characteristics(_dense(args.chars_beta, "characteristics"),
                                 _dense(args.chars_f, "characteristics"),
                                 degree=args.degree, include_constant=args.constant)
    else:
        raise _MissingField("weights", "--weights-beta/--weights-f or --chars-beta/--chars-f")
    if w.W_beta.shape[0] != N or w.W_F.shape[0] != T:
        raise ValidationError(
            f"weights have {w.W_beta.shape[0]} and {w.W_F.shape[0]} rows, panel is {N}x{T}"
        )
    return w


def load_inputs(args):
    panel = load_panel(_require(args, "y"), args.x, Mode.parse(args.mode))
    group = load_group(_require(args, "group"), panel.shape)
    w = load_weights(args, panel.N, panel.T)
    return panel, group, w


def hte_panels(args) -> tuple[ObservedPanel, ObservedPanel]:
    """Arms from ``--y1/--x1/--y0/--x0`` or from ``--y`` plus ``--treatment``."""
    if args.treatment is not None:
        Y = read_grid(_require(args, "y"))
        D = _dense(args.treatment, "treatment")
        if D.shape != Y.shape:
            raise ValidationError(f"shape mismatch: y is {Y.shape}, treatment is {D.shape}")
        if not np.isin(D, (0.0, 1.0)).all():
            raise ValidationError("treatment indicator must be 0/1")
        if np.isnan(Y).any():
            raise ValidationError("observed outcome has missing cells")
        return (ObservedPanel(D * Y, D, Mode.BINARY), ObservedPanel((1 - D) * Y, 1 - D, Mode.BINARY))
    p1 = load_panel(_require(args, "y1"), args.x1, Mode.BINARY)
    p0 = load_panel(_require(args, "y0"), args.x0, Mode.BINARY)
    if p1.shape != p0.shape:
        raise ValidationError(f"arm shapes differ: {p1.shape} vs {p0.shape}")
    return p1, p0


# ---------------------------------------------------------------- commands


def _inference_block(res, one_sided: bool) -> dict:
    out = res.to_json()
    out["p_value"] = out["p_one_sided"] if one_sided else out["p_two_sided"]
    out["alternative"] = "greater" if one_sided else "two-sided"
    return out


def cmd_fit(args) -> dict:
    panel, group, w = load_inputs(args)
    fit = run_pipeline(panel, w, group, pipeline_config(args))
    report = {"command": "fit", "fit": fit.summary(), "group": group.to_json()}
    if args.out:
        fit.save(args.out)
        report["directory"] = str(args.out)
    return report


def cmd_infer(args) -> dict:
    _check_level(args.level)
    panel, group, w = load_inputs(args)
    hw = compute_heterogeneity(panel)
    fit = run_pipeline(panel, w, group, pipeline_config(args), hw=hw)
    res = infer(fit, panel, hw, w, group, args.level, args.null_value)
    diag = diagnose(panel, w, group, fit)
    return {
        "command": "infer",
        "inference": _inference_block(res, args.one_sided),
        "fit": fit.summary(),
        "diagnostics": diag.to_json(),
    }


def cmd_diagnose(args) -> dict:
    panel, group, w = load_inputs(args)
    fit = run_pipeline(panel, w, group, pipeline_config(args)) if args.with_fit else None
    return {"command": "diagnose", "diagnostics": diagnose(panel, w, group, fit).to_json()}


def cmd_hte(args) -> dict:
    _check_level(args.level)
    p1, p0 = hte_panels(args)
    group = load_group(_require(args, "group"), p1.shape)
    w = load_weights(args, p1.N, p1.T)
    cfg = pipeline_config(args)
    hw1, hw0 = compute_heterogeneity(p1), compute_heterogeneity(p0)
    fit1 = run_pipeline(p1, w, group, cfg, hw=hw1)
    fit0 = run_pipeline(p0, w, group, cfg, hw=hw0)
    res = hte_infer(fit1, fit0, p1, p0, hw1, hw0, w, group, args.level, args.null_value)
    return {
        "command": "hte",
        "inference": _inference_block(res, args.one_sided),
        "fit_treated": fit1.summary(),
        "fit_control": fit0.summary(),
    }


def cmd_simulate(args) -> dict:
    _check_level(args.level)
    if args.reps < 1:
        raise ValidationError("--reps must be positive")
    cfg = DgpConfig(N=args.N, T=args.T, r=args.r, R=args.R, a_N=args.a_N, sigma=args.sigma, p=args.p,
                    mode=Mode.parse(args.mode).value, weight_scheme=args.weight_scheme, seed=args.seed)
    group = load_group(args.group or "block:1-5x1-5", (cfg.N, cfg.T))
    nuc = nuclear_config(args)
    if args.effect_size is None:
        v = Variant(cfg.R, args.ablate_B2)
        report = coverage_study(cfg, group, args.reps, args.level, (v,), nuc,
                                args.force_sigma0, args.threads)[v]
    else:
        report = hte_coverage_study(cfg, group, args.reps, (args.effect_size,), args.level, nuc,
                                    args.ablate_B2, args.threads)[args.effect_size]
    table = args.z_csv
    if table is None and args.out:
        table = str(Path(args.out).with_suffix("")) + ".z.csv"
    out = {"command": "simulate", "config": cfg.to_json(), "group": group.to_json(),
           "effect_size": args.effect_size, "report": report.to_json()}
    if table:
        report.write_table(table)
        out["z_csv"] = str(table)
    return out


def report_schema(command: str) -> dict:
    """JSON schema of the report written by ``command``."""
    return json.loads(resources.files("lrinfer").joinpath("schemas", f"{command}.schema.json").read_text())


COMMANDS = {"fit": cmd_fit, "infer": cmd_infer, "diagnose": cmd_diagnose, "hte": cmd_hte,
            "simulate": cmd_simulate}


def jsonable(obj):
    """Replace non-finite floats by strings so the output is strict JSON."""
    if isinstance(obj, dict):
        return {k: jsonable(v) for k, v in obj.items()}
    if isinstance(obj, (list, tuple)):
        return [jsonable(v) for v in obj]
    if isinstance(obj, (float, np.floating)):
        x = float(obj)
        return x if math.isfinite(x) else str(x)
    if isinstance(obj, np.integer):
        return int(obj)
    return obj


def _emit(doc: dict, out) -> None:
    text = json.dumps(jsonable(doc), indent=2, allow_nan=False)
    if out and doc.get("command") != "fit":
        Path(out).write_text(text + "\n")
    else:
        sys.stdout.write(text + "\n")


def _fail(kind: str, exc: Exception, code: int) -> int:
    err = {"error": kind, "message": str(exc)}
    if isinstance(exc, _MissingField):
        err["field"] = exc.field
    sys.stderr.write(json.dumps(err) + "\n")
    return code


def main(argv=None) -> int:
    level = getattr(logging, os.environ.get("LRINFER_LOG", "WARNING").upper(), logging.WARNING)
    logging.basicConfig(level=level if isinstance(level, int) else logging.WARNING, format="%(levelname)s %(name)s: %(message)s")
    logging.captureWarnings(True)
    args = build_parser().parse_args(argv)
    try:
        _emit(COMMANDS[args.command](args), args.out)
    except ValidationError as exc:
        return _fail("validation", exc, EXIT_INVALID)
    except SolverError as exc:
        return _fail("solver", exc, EXIT_SOLVER)
    except OSError as exc:
        return _fail("io", exc, EXIT_INVALID)
    return EXIT_OK


if __name__ == "__main__":
    sys.exit(main())
