"""Command-line entry point.

Every invocation writes a JSON run manifest next to its outputs; feeding
the manifest to ``ionwitness rerun`` reproduces the run byte for byte.
Exit status: 0 success, 2 invalid arguments, 3 physically infeasible
request (for example a classical source asked for a violation time).
"""

from __future__ import annotations

import argparse
import csv
import json
import math
import os
import secrets
import sys
import warnings
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import __version__
from .geometry import CrystalLayout, build_layout, read_layout_csv, write_layout_csv
from .optics import DetectionModel, load_model, per_ion_efficiencies
from .simulate import (
    ClassicalConfig,
    ContinuousConfig,
    PulsedConfig,
    calibrate_emission_rate,
    classical_clicks,
    closed_form_classical,
    closed_form_witness,
    mean_photon_number,
    run_continuous,
    run_pulsed,
)
from .stats import DEFAULT_CHUNKS, NotViolableError, variance_d
from .timetag import (
    CONTINUOUS,
    PULSED,
    BinCounts,
    GateSpec,
    StreamHeader,
    continuous_binner,
    gated_binner,
    iter_stream,
    reduce_stream,
    write_stream,
)
from .witness import analytic_probs, analytic_witness, probabilities_from_counts, witness_report

OUTDIR_ENV = "IONWITNESS_OUTDIR"
EXIT_USAGE = 2
EXIT_DOMAIN = 3


class UsageError(Exception):
    pass


@dataclass
class RunManifest:
    command: str
    parameters: dict
    seed: int | None
    argv: list[str]
    outputs: list[str] = field(default_factory=list)
    version: str = __version__

    def write(self, path: Path) -> None:
        path.write_text(json.dumps(self.__dict__, indent=2, sort_keys=True) + "\n")

    @classmethod
    def read(cls, path: str | Path) -> "RunManifest":
        return cls(**json.loads(Path(path).read_text()))


def _dump_json(data, path: Path) -> None:
    path.write_text(json.dumps(data, indent=2, sort_keys=True) + "\n")


# --- argument helpers ------------------------------------------------------


def _int_like(text: str) -> int:
    """Integers, also written as 1e7."""
    value = float(text)
    if not value.is_integer():
        raise argparse.ArgumentTypeError(f"expected an integer, got {text}")
    return int(value)


def _int_list(text: str) -> list[int]:
    try:
        return [_int_like(t) for t in text.split(",") if t.strip()]
    except (ValueError, argparse.ArgumentTypeError) as exc:
        raise argparse.ArgumentTypeError(f"expected comma-separated integers: {exc}")


def _add_common(p: argparse.ArgumentParser, seeded: bool = True) -> None:
    p.add_argument("--outdir", type=Path, default=None, help=f"output directory (default ${OUTDIR_ENV} or .)")
    p.add_argument("--manifest", type=Path, default=None, help="manifest path (default <outdir>/<command>.manifest.json)")
    if seeded:
        p.add_argument("--seed", type=int, default=None, help="RNG seed; generated and recorded if omitted")


def _add_model(p: argparse.ArgumentParser, eta_flags=("--eta0",)) -> None:
    g = p.add_argument_group("detection model")
    g.add_argument("--model", type=Path, help="key = value detection config file")
    g.add_argument(*eta_flags, dest="eta0", type=float, help="efficiency at the focus")
    g.add_argument("--sigma-r", type=float, help="radial Gaussian width, um")
    g.add_argument("--sigma-a", type=float, help="axial Gaussian width, um")
    g.add_argument("--split", type=float, help="fraction routed to detector 1")
    g.add_argument("--kappa1", type=float)
    g.add_argument("--kappa2", type=float)
    g.add_argument("--dark-prob", type=float)


def _add_crystal(p: argparse.ArgumentParser, many: bool = False) -> None:
    g = p.add_argument_group("crystal")
    if many:
        g.add_argument("--ions", type=_int_list, required=True, help="comma-separated ion counts")
    else:
        g.add_argument("--ions", type=_int_like, help="number of ions")
        g.add_argument("--layout", type=Path, help="layout CSV instead of --ions")
    g.add_argument("--spacing", type=float, help="shell spacing, um (required for more than one ion)")
    g.add_argument("--layouts", type=_int_like, default=1, help="random layouts to average over")


def _model_from(args) -> DetectionModel:
    model = load_model(args.model) if getattr(args, "model", None) else DetectionModel()
    changes = {
        "eta0": args.eta0,
        "sigma_r_um": args.sigma_r,
        "sigma_a_um": args.sigma_a,
        "split_T": args.split,
        "kappa1": args.kappa1,
        "kappa2": args.kappa2,
        "dark_prob": args.dark_prob,
    }
    return model.replace(**{k: v for k, v in changes.items() if v is not None})


def _layout(n: int, spacing: float | None, seed: int) -> CrystalLayout:
    if n > 1 and spacing is None:
        raise UsageError("--spacing is required for crystals with more than one ion")
    return build_layout(n, spacing if spacing is not None else 1.0, seed)


def _layout_from(args, seed: int) -> CrystalLayout:
    if getattr(args, "layout", None):
        return read_layout_csv(args.layout)
    if args.ions is None:
        raise UsageError("give --ions or --layout")
    return _layout(args.ions, args.spacing, seed)


# --- subcommands ------------------------------------------------------------


def cmd_crystal(args, out: Path, seed: int) -> list[Path]:
    layout = _layout(args.ions, args.spacing, seed)
    path = out / (args.output or f"crystal_n{args.ions}.csv")
    write_layout_csv(layout, path)
    return [path]


def _write_counts(counts: BinCounts, chunks: list[BinCounts], path: Path, extra=None) -> None:
    data = counts.to_dict()
    data["chunks"] = [c.to_dict() for c in chunks]
    if extra:
        data.update(extra)
    _dump_json(data, path)


def cmd_simulate(args, out: Path, seed: int) -> list[Path]:
    stem = args.output or f"sim_{args.regime}"
    written = []
    if args.regime == "classical":
        config = ClassicalConfig(args.kind, args.mu, args.bins, args.split, seed)
        clicks = classical_clicks(config)
        period = args.bin_tau_ps
        window = None
        regime = CONTINUOUS
        extra = {"kind": args.kind, "mu": args.mu, "split_T": args.split, "bin_tau_ps": period}
    elif args.regime == "pulsed":
        model = _model_from(args)
        layout = _layout_from(args, seed)
        config = PulsedConfig(layout, model, args.eta_p, args.pulses, seed)
        clicks = run_pulsed(config)
        gate = GateSpec(args.period_ps, args.gate_open_ps, args.gate_close_ps)
        period, window, regime = gate.period_ps, gate.window, PULSED
        extra = {
            "n_ions": layout.n,
            "eta_p": args.eta_p,
            "mean_photons_per_pulse": mean_photon_number(layout.n, args.eta_p),
            "emitted_photons_per_pulse": clicks.n_emitted / args.pulses,
        }
    else:
        model = _model_from(args)
        layout = _layout_from(args, seed)
        rate = args.rate_per_ion
        if rate is None:
            if args.detector1_rate is None:
                raise UsageError("give --rate-per-ion or --detector1-rate")
            rate = calibrate_emission_rate(layout, model, args.detector1_rate, args.dead_time)
        config = ContinuousConfig(
            layout, model, rate, args.duration, args.bin_tau, args.dead_time, seed
        )
        stream = run_continuous(config)
        header = StreamHeader(CONTINUOUS, 1, config.duration_ps)
        tag_path = out / f"{stem}.iontag"
        write_stream(stream, header, tag_path)
        written.append(tag_path)
        n_bins = config.duration_ps // config.bin_tau_ps
        chunks = reduce_stream(stream, n_bins, continuous_binner(config.bin_tau_ps), DEFAULT_CHUNKS)
        counts_path = out / f"{stem}.counts.json"
        _write_counts(sum(chunks[1:], chunks[0]), chunks, counts_path,
                      {"rate_per_ion": rate, "bin_tau_ps": config.bin_tau_ps})
        return written + [counts_path]

    chunks = clicks.chunk_counts(DEFAULT_CHUNKS)
    counts_path = out / f"{stem}.counts.json"
    _write_counts(clicks.counts(), chunks, counts_path, extra)
    written.append(counts_path)
    if not args.no_tags:
        stream = clicks.to_stream(period, window, seed)
        header = StreamHeader(regime, 1, clicks.n_bins * period)
        tag_path = out / f"{stem}.iontag"
        write_stream(stream, header, tag_path)
        written.append(tag_path)
    return written


def _analyze_tags(args) -> tuple[BinCounts, list[BinCounts]]:
    header, chunks = iter_stream(args.input)
    if header.regime == PULSED or args.period_ps is not None:
        if None in (args.period_ps, args.gate_open_ps, args.gate_close_ps):
            raise UsageError("pulsed streams need --period-ps, --gate-open-ps and --gate-close-ps")
        gate = GateSpec(args.period_ps, args.gate_open_ps, args.gate_close_ps, args.trim_ps)
        n_bins = args.pulses or header.duration_ps // gate.period_ps
        binner = gated_binner(gate)
    else:
        if args.tau_ps is None:
            raise UsageError("continuous streams need --tau-ps")
        n_bins = header.duration_ps // args.tau_ps
        binner = continuous_binner(args.tau_ps)
    parts = reduce_stream(chunks, n_bins, binner, args.chunks)
    return sum(parts[1:], parts[0]), parts


def cmd_analyze(args, out: Path, seed) -> list[Path]:
    if args.input.suffix == ".json":
        data = json.loads(args.input.read_text())
        counts = BinCounts.from_dict(data)
        parts = [BinCounts.from_dict(c) for c in data.get("chunks", [])]
    else:
        counts, parts = _analyze_tags(args)
    chunk_d = []
    for part in parts:
        if part.n_tb:
            chunk_d.append(probabilities_from_counts(part).d)
    report = witness_report(counts, chunk_d if len(chunk_d) >= 2 else None)
    data = report.to_dict()
    data["counts"] = counts.to_dict()
    path = out / (args.output or f"{args.input.stem}.report.json")
    _dump_json(data, path)
    print(json.dumps(data, sort_keys=True))
    return [path]


def _ensemble_prediction(args, seed: int) -> dict:
    model = _model_from(args)
    ds, vars1, probs_list = [], [], []
    for k in range(args.layouts):
        layout = _layout_from(args, seed + k)
        etas = per_ion_efficiencies(model, layout) * args.eta_p
        probs = analytic_probs(etas, model.split_T, model.kappa1, model.kappa2, model.dark_prob)
        d = analytic_witness(etas, model.split_T, model.kappa1, model.kappa2, model.dark_prob)
        ds.append(d)
        probs_list.append(probs)
        vars1.append(_var_per_run(probs))
    result = _summary(ds, vars1, probs_list, args)
    result["n_ions"] = layout.n
    result["mean_photons_per_pulse"] = mean_photon_number(layout.n, args.eta_p)
    return result


def _var_per_run(probs) -> float | None:
    if probs.p00 <= 0:
        return None
    with warnings.catch_warnings():
        warnings.simplefilter("ignore", RuntimeWarning)
        return variance_d(probs.pc, probs.ps_excl, probs.p00, 1)


def _summary(ds, vars1, probs_list, args) -> dict:
    d = float(np.mean(ds))
    var1 = None if any(v is None for v in vars1) else float(np.mean(vars1))
    mean = {
        key: float(np.mean([getattr(p, key) for p in probs_list]))
        for key in ("p00", "p0", "pc", "ps_excl", "ps_marg1", "ps_marg2")
    }
    out = {"d": d, **mean, "var_d_per_run": var1}
    out["sigma_d"] = None if var1 is None else math.sqrt(var1 / args.runs)
    out["runs"] = args.runs
    if var1 is None or d <= 0:
        out["required_runs_2sigma"] = None
    else:
        out["required_runs_2sigma"] = max(1, math.ceil(4 * var1 / d**2))
    if len(ds) > 1:
        out["d_layout_std"] = float(np.std(ds, ddof=1))
    return out


def cmd_predict(args, out: Path, seed: int) -> list[Path]:
    if args.source == "ensemble":
        result = _ensemble_prediction(args, seed)
    else:
        if args.mu is None:
            raise UsageError("classical sources need --mu")
        split = args.split if args.split is not None else 0.5
        probs = closed_form_classical(args.source, args.mu, split)
        d = closed_form_witness(args.source, args.mu, split)
        result = _summary([d], [_var_per_run(probs)], [probs], args)
        result.update(source=args.source, mu=args.mu)
    if args.runs_for is not None:
        try:
            k = float(args.runs_for.removesuffix("sigma") or 1)
        except ValueError:
            raise UsageError(f"--runs-for expects e.g. 2sigma, got {args.runs_for!r}")
        if result["d"] <= 0:
            raise NotViolableError(
                f"d = {result['d']:.4g} <= 0: no number of runs violates the classical bound"
            )
        if result["var_d_per_run"] is None:
            result[f"required_runs_{args.runs_for}"] = 1
        else:
            result[f"required_runs_{args.runs_for}"] = max(
                1, math.ceil(k**2 * result["var_d_per_run"] / result["d"] ** 2)
            )
    path = out / (args.output or "prediction.json")
    _dump_json(result, path)
    print(json.dumps(result, sort_keys=True))
    return [path]


def cmd_sweep(args, out: Path, seed: int) -> list[Path]:
    model = _model_from(args)
    rows = []
    for n in args.ions:
        ds, vars1 = [], []
        for k in range(args.layouts):
            layout = _layout(n, args.spacing, seed + k)
            etas = per_ion_efficiencies(model, layout) * args.eta_p
            ds.append(analytic_witness(etas, model.split_T, model.kappa1, model.kappa2, model.dark_prob))
            probs = analytic_probs(etas, model.split_T, model.kappa1, model.kappa2, model.dark_prob)
            vars1.append(_var_per_run(probs))
        d = float(np.mean(ds))
        var1 = float(np.mean(vars1)) if None not in vars1 else None
        sigma = "" if var1 is None else repr(math.sqrt(var1 / args.runs))
        try:
            need = math.ceil(4 * var1 / d**2) if var1 is not None and d > 0 else ""
        except OverflowError:
            need = ""
        rows.append([n, repr(d), sigma, need])
    path = out / (args.output or "sweep.csv")
    with open(path, "w", newline="") as fh:
        writer = csv.writer(fh, lineterminator="\n")
        writer.writerow(["n", "d", "sigma_d", "n_required_2sigma"])
        writer.writerows(rows)
    return [path]


# --- parser -----------------------------------------------------------------


def build_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(
        prog="ionwitness",
        description="Simulate and analyse click statistics of single-photon emitter ensembles.",
    )
    parser.add_argument("--version", action="version", version=__version__)
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("crystal", help="write an ion layout CSV")
    p.add_argument("--ions", type=_int_like, required=True)
    p.add_argument("--spacing", type=float)
    p.add_argument("-o", "--output", help="file name inside the output directory")
    _add_common(p)

    p = sub.add_parser("simulate", help="generate click data")
    regimes = p.add_subparsers(dest="regime", required=True)

    q = regimes.add_parser("pulsed")
    _add_crystal(q)
    _add_model(q)
    q.add_argument("--eta-p", type=float, default=1.0, help="optical pumping efficiency")
    q.add_argument("--pulses", type=_int_like, default=10**6)
    q.add_argument("--period-ps", type=_int_like, default=10**6)
    q.add_argument("--gate-open-ps", type=_int_like, default=0)
    q.add_argument("--gate-close-ps", type=_int_like, default=10**5)
    q.add_argument("--no-tags", action="store_true", help="skip the IONTAG output")
    q.add_argument("-o", "--output", help="output file stem")
    _add_common(q)

    q = regimes.add_parser("continuous")
    _add_crystal(q)
    _add_model(q)
    q.add_argument("--rate-per-ion", type=float, help="excitation rate per ion, 1/s")
    q.add_argument("--detector1-rate", type=float, help="calibrate the rate to this count rate, 1/s")
    q.add_argument("--dead-time", type=float, default=0.0, help="s")
    q.add_argument("--duration", type=float, required=True, help="s")
    q.add_argument("--bin-tau", type=float, default=1e-9, help="analysis bin width, s")
    q.add_argument("-o", "--output", help="output file stem")
    _add_common(q)

    q = regimes.add_parser("classical")
    q.add_argument("--kind", choices=("coherent", "thermal"), required=True)
    q.add_argument("--mu", type=float, required=True, help="mean photons per bin")
    q.add_argument("--bins", type=_int_like, required=True)
    q.add_argument("--split", type=float, default=0.5)
    q.add_argument("--bin-tau-ps", type=_int_like, default=1000)
    q.add_argument("--no-tags", action="store_true", help="skip the IONTAG output")
    q.add_argument("-o", "--output", help="output file stem")
    _add_common(q)

    p = sub.add_parser("analyze", help="witness report from IONTAG or counts JSON")
    p.add_argument("input", type=Path)
    p.add_argument("--tau-ps", type=_int_like, help="bin width for continuous streams")
    p.add_argument("--period-ps", type=_int_like)
    p.add_argument("--gate-open-ps", type=_int_like)
    p.add_argument("--gate-close-ps", type=_int_like)
    p.add_argument("--trim-ps", type=_int_like, default=0)
    p.add_argument("--pulses", type=_int_like, help="pulse count (default from stream duration)")
    p.add_argument("--chunks", type=_int_like, default=DEFAULT_CHUNKS)
    p.add_argument("-o", "--output")
    _add_common(p, seeded=False)

    p = sub.add_parser("predict", help="analytic d, its variance and required runs")
    p.add_argument("--source", choices=("ensemble", "coherent", "thermal"), default="ensemble")
    p.add_argument("--mu", type=float, help="mean photons per bin for classical sources")
    _add_crystal(p)
    _add_model(p, eta_flags=("--eta0", "--eta"))
    p.add_argument("--eta-p", type=float, default=1.0)
    p.add_argument("--runs", type=_int_like, default=10**6, help="runs used for sigma_d")
    p.add_argument("--runs-for", help="e.g. 2sigma: report runs needed for this margin")
    p.add_argument("-o", "--output")
    _add_common(p)

    p = sub.add_parser("sweep", help="d versus ion number as CSV")
    _add_crystal(p, many=True)
    _add_model(p)
    p.add_argument("--eta-p", type=float, default=1.0)
    p.add_argument("--runs", type=_int_like, default=10**6, help="runs used for sigma_d")
    p.add_argument("-o", "--output")
    _add_common(p)

    p = sub.add_parser("rerun", help="repeat a run from its manifest")
    p.add_argument("manifest_file", type=Path)
    return parser


COMMANDS = {
    "crystal": cmd_crystal,
    "simulate": cmd_simulate,
    "analyze": cmd_analyze,
    "predict": cmd_predict,
    "sweep": cmd_sweep,
}


def _resolved_argv(argv: list[str], args) -> list[str]:
    if "seed" in vars(args) and args.seed is None:
        args.seed = secrets.randbelow(2**31)
        return argv + ["--seed", str(args.seed)]
    return argv


def _jsonable(value):
    if isinstance(value, Path):
        return str(value)
    if isinstance(value, (list, tuple)):
        return [_jsonable(v) for v in value]
    return value


def main(argv: list[str] | None = None) -> int:
    argv = list(sys.argv[1:] if argv is None else argv)
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except SystemExit as exc:
        return int(exc.code or 0)

    if args.command == "rerun":
        manifest = RunManifest.read(args.manifest_file)
        return main(manifest.argv)

    argv = _resolved_argv(argv, args)
    out = args.outdir or Path(os.environ.get(OUTDIR_ENV, "."))
    out.mkdir(parents=True, exist_ok=True)
    try:
        outputs = COMMANDS[args.command](args, out, getattr(args, "seed", None))
    except NotViolableError as exc:
        print(f"ionwitness: {exc}", file=sys.stderr)
        return EXIT_DOMAIN
    except (UsageError, ValueError) as exc:
        print(f"ionwitness {args.command}: error: {exc}", file=sys.stderr)
        return EXIT_USAGE

    command = args.command if args.command != "simulate" else f"simulate-{args.regime}"
    params = {k: _jsonable(v) for k, v in vars(args).items() if k not in ("outdir", "manifest")}
    manifest = RunManifest(
        command=command,
        parameters=params,
        seed=getattr(args, "seed", None),
        argv=argv,
        outputs=[str(p) for p in outputs],
    )
    manifest.write(args.manifest or out / f"{command}.manifest.json")
    return 0


if __name__ == "__main__":
    sys.exit(main())
