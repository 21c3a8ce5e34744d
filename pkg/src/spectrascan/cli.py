"""Command-line surface: file-to-file pipelines over checkpoints and logs.

Every subcommand is a pure function of its input files to its output files.
Exit codes: 0 ok, 1 usage, 2 bad input, 3 computation failure. Report paths
write a rendered PNG figure next to each delimited/JSON output unless
--no-plots is given.
"""

from __future__ import annotations

import argparse
import csv
import json
import os
import sys
import time
from concurrent.futures import ThreadPoolExecutor
from pathlib import Path

from . import fits, prune, spectra, tensor_io, timelapse, twotimescale, warmup

EXIT_OK = 0
EXIT_USAGE = 1
EXIT_INPUT = 2
EXIT_COMPUTE = 3


class CliError(Exception):
    def __init__(self, msg: str, code: int):
        super().__init__(msg)
        self.code = code


class _Parser(argparse.ArgumentParser):
    def error(self, message):  # argparse defaults to exit code 2
        self.print_usage(sys.stderr)
        print(f"{self.prog}: error: {message}", file=sys.stderr)
        sys.exit(EXIT_USAGE)


def _write_json(obj, path: str | Path) -> None:
    with open(path, "w") as f:
        json.dump(obj, f, indent=2, sort_keys=True)
        f.write("\n")


def _thread_count() -> int:
    raw = os.environ.get("SPECTRA_THREADS", "1")
    try:
        return max(1, int(raw))
    except ValueError:
        return 1


def _load_log(path: str) -> timelapse.SpectralLog:
    try:
        return timelapse.read_log_csv(path)
    except (OSError, ValueError, timelapse.TimelapseError) as e:
        raise CliError(f"cannot read spectral log {path}: {e}", EXIT_INPUT) from e


def cmd_scan(args) -> int:
    t0 = time.monotonic()
    try:
        manifest = tensor_io.load_manifest(args.manifest)
        series = tensor_io.discover_series(args.root, manifest)
    except (OSError, KeyError, ValueError, tensor_io.TensorIOError) as e:
        raise CliError(f"bad manifest or checkpoint root: {e}", EXIT_INPUT) from e
    if not series.steps:
        raise CliError(f"no step_<N> entries under {args.root}", EXIT_INPUT)

    types = tuple(args.types.split(",")) if args.types else timelapse.DEFAULT_TYPES
    threads = _thread_count()
    try:
        if threads == 1:
            log = timelapse.build_log(series, types, tail_fraction=args.tail_fraction)
        else:
            # parallel per step, deterministic merge by (step, layer, type)
            def one(step):
                sub = tensor_io.CheckpointSeries(
                    run_id=series.run_id,
                    steps=[step],
                    entries={step: series.entries[step]},
                    naming_scheme=series.naming_scheme,
                    manifest=series.manifest,
                )
                return timelapse.build_log(sub, types, tail_fraction=args.tail_fraction)
            with ThreadPoolExecutor(max_workers=threads) as ex:
                partials = list(ex.map(one, series.steps))
            records = [r for p in partials for r in p.records]
            records.sort(key=lambda r: (r.step, r.layer, r.type_label, r.coord.fused_slot or ""))
            notes = [w for p in partials for w in p.warnings]
            log = timelapse.SpectralLog(
                run_id=series.run_id,
                records=records,
                layer_count=manifest.layers,
                warnings=notes,
            )
    except tensor_io.TensorIOError as e:
        raise CliError(f"checkpoint parse failure: {e}", EXIT_INPUT) from e
    except (spectra.SpectraError, timelapse.TimelapseError) as e:
        raise CliError(f"scan failed: {e}", EXIT_COMPUTE) from e

    timelapse.write_log_csv(log, args.out)
    elapsed = time.monotonic() - t0
    print(f"wrote {len(log.records)} records to {args.out}")
    print(f"skipped {len(series.skipped)} untracked tensors")
    for w in log.warnings:
        print(f"warning: {w}")
    print(f"elapsed {elapsed:.2f}s")
    return EXIT_COMPUTE if log.warnings else EXIT_OK


def cmd_wave(args) -> int:
    log = _load_log(args.log)
    onsets = timelapse.compute_onsets(log, type_label=args.type, threshold_ratio=args.threshold)
    report = {
        "run_id": log.run_id,
        "matrix_type": args.type,
        "threshold_ratio": args.threshold,
        "onsets": {str(l): s for l, s in sorted(onsets.onsets.items())},
    }
    fit = None
    try:
        fit = timelapse.wave_velocity(onsets)
        report["fit"] = {"slope": fit.slope, "intercept": fit.intercept, "r2": fit.r2, "n": fit.n}
    except timelapse.TooFewOnsets as e:
        report["fit"] = None
        report["fit_error"] = str(e)
    _write_json(report, args.out)
    if not args.no_plots:
        from . import plots

        plots.plot_wave(onsets, fit, Path(args.out).with_suffix(".png"))
    print(f"wrote wave report to {args.out}")
    return EXIT_OK


def cmd_profile(args) -> int:
    log = _load_log(args.log)
    step = args.step if args.step is not None else (log.step_set[-1] if log.step_set else None)
    if step is None:
        raise CliError("log contains no steps", EXIT_INPUT)
    try:
        profile = timelapse.alpha_profile(log, step, args.type)
    except timelapse.TimelapseError as e:
        raise CliError(str(e), EXIT_COMPUTE) from e
    prefix = Path(args.out_prefix)
    csv_path = prefix.with_suffix(".csv")
    with open(csv_path, "w", newline="") as f:
        w = csv.writer(f, lineterminator="\n")
        w.writerow(["layer", "alpha"])
        for l in range(profile.layer_count):
            w.writerow([l, format(profile.alphas[l], ".9g")])
    peak_layer, rel = timelapse.peak_position(profile)
    summary = {
        "step": step,
        "matrix_type": args.type,
        "layer_count": profile.layer_count,
        "spread": timelapse.alpha_spread(profile),
        "peak_layer": peak_layer,
        "peak_relative_depth": rel,
    }
    _write_json(summary, prefix.with_suffix(".json"))
    if not args.no_plots:
        from . import plots

        plots.plot_profile(profile, prefix.with_suffix(".png"))
    print(f"wrote profile to {csv_path} (spread {summary['spread']:.4f}, peak L{peak_layer})")
    return EXIT_OK


def cmd_scaling(args) -> int:
    rows = []
    try:
        with open(args.summary, newline="") as f:
            for row in csv.DictReader(f):
                vel = row.get("wave_velocity", "")
                rows.append(
                    (
                        float(row["L"]),
                        float(row["delta_alpha"]),
                        float(row["alpha_max"]),
                        float(row["peak_ratio"]),
                        float(vel) if vel not in ("", None) else None,
                    )
                )
    except (OSError, KeyError, ValueError) as e:
        raise CliError(f"bad summary CSV {args.summary}: {e}", EXIT_INPUT) from e
    try:
        report = fits.fit_scaling_laws(rows)
    except fits.FitError as e:
        raise CliError(f"scaling fit failed: {e}", EXIT_COMPUTE) from e
    _write_json(report.to_dict(), args.out)
    if not args.no_plots:
        from . import plots

        plots.plot_scaling(rows, report, Path(args.out).with_suffix(".png"))
    print(
        f"spread exponent {report.delta_alpha_fit.exponent:.3f}, "
        f"peak-alpha exponent {report.alpha_max_fit.exponent:.3f}, "
        f"peak-position slope {report.peak_position_fit.slope:.4f}"
    )
    return EXIT_OK


def _sim_params_from_json(d: dict, seed_override: int | None) -> twotimescale.SimParams:
    phi = twotimescale.PhiSpec(**d.pop("phi_spec", {}))
    for key in ("alpha_star", "psi", "R_init", "alpha_init"):
        if key in d:
            d[key] = {int(k): float(v) for k, v in d[key].items()}
    p = twotimescale.SimParams(phi_spec=phi, **d)
    if seed_override is not None:
        p.seed = seed_override
    return p


def cmd_simulate(args) -> int:
    try:
        params = json.loads(Path(args.params).read_text()) if args.params else {}
        p = _sim_params_from_json(params, args.seed)
    except (OSError, TypeError, ValueError, json.JSONDecodeError) as e:
        raise CliError(f"bad params: {e}", EXIT_INPUT) from e
    try:
        traj = twotimescale.simulate(p)
    except twotimescale.SimulationError as e:
        raise CliError(f"simulation failed: {e}", EXIT_COMPUTE) from e
    prefix = Path(args.out_prefix)
    twotimescale.write_trajectory_csv(traj, prefix.with_suffix(".csv"))
    if p.noise_sigma_R == 0.0 and p.noise_sigma_alpha == 0.0:
        report = twotimescale.check_predictions(traj, p)
        payload = report.to_dict()
        payload["seed"] = p.seed
        _write_json(payload, prefix.with_suffix(".json"))
        verdict = "all predictions hold" if report.all_true else "predictions violated"
        print(verdict)
    else:
        print("noisy run: prediction report skipped")
    if not args.no_plots:
        from . import plots

        plots.plot_trajectory(traj, prefix.with_suffix(".png"))
    print(f"wrote trajectory to {prefix.with_suffix('.csv')}")
    return EXIT_OK


def _profile_from_args(args) -> timelapse.AlphaProfile:
    if args.profile:
        alphas = {}
        try:
            with open(args.profile, newline="") as f:
                for row in csv.DictReader(f):
                    alphas[int(row["layer"])] = float(row["alpha"])
        except (OSError, KeyError, ValueError) as e:
            raise CliError(f"bad profile CSV {args.profile}: {e}", EXIT_INPUT) from e
        return timelapse.AlphaProfile(step=args.step or 0, matrix_type=args.type, alphas=alphas)
    if args.log:
        log = _load_log(args.log)
        step = args.step if args.step is not None else log.step_set[-1]
        try:
            return timelapse.alpha_profile(log, step, args.type)
        except timelapse.TimelapseError as e:
            raise CliError(str(e), EXIT_COMPUTE) from e
    raise CliError("prune-plan needs --profile or --log", EXIT_USAGE)


def cmd_prune_plan(args) -> int:
    strategy = prune.Strategy(args.strategy.upper().replace("-", "_"))
    profile = None
    layer_norms = None
    if strategy is prune.Strategy.MAGNITUDE:
        if not args.log:
            raise CliError("magnitude strategy needs --log for per-layer norms", EXIT_USAGE)
        log = _load_log(args.log)
        step = args.step if args.step is not None else log.step_set[-1]
        layer_norms = {}
        for r in log.at(step):
            layer_norms[r.layer] = layer_norms.get(r.layer, 0.0) + r.frob_norm
        L = log.layer_count
    else:
        profile = _profile_from_args(args)
        L = profile.layer_count

    try:
        if strategy is prune.Strategy.ZONE_AWARE:
            plan = prune.zone_aware_select(profile, args.k, b=args.boundary, min_gap=args.min_gap)
        else:
            plan = prune.baseline_select(
                strategy, L, args.k, profile=profile, layer_norms=layer_norms, seed=args.seed
            )
    except prune.PruneError as e:
        raise CliError(f"selection failed: {e}", EXIT_COMPUTE) from e

    _write_json(plan.to_dict(), args.out)
    b = plan.b if plan.b is not None else prune.default_boundary(L)
    zones = prune.classify_zones(L, b) if 2 * b < L else None
    print(f"strategy {plan.strategy.value}: remove layers {plan.removed_layers}")
    if profile is not None:
        print(f"{'layer':>5} {'alpha':>8} {'zone':>16} {'removed':>8}")
        for l in range(L):
            zone = zones.labels[l].value if zones else "-"
            mark = "x" if l in plan.removed_layers else ""
            print(f"{l:>5} {profile.alphas[l]:>8.3f} {zone:>16} {mark:>8}")
    return EXIT_OK


def cmd_warmup(args) -> int:
    log = _load_log(args.log)
    step = args.step if args.step is not None else log.step_set[-1]
    records = log.at(step)
    if not records:
        raise CliError(f"no records at step {step}", EXIT_INPUT)
    out_dir = Path(args.out_dir)
    out_dir.mkdir(parents=True, exist_ok=True)
    written = 0
    for r in records:
        if r.alpha is None:
            continue
        k = min(r.rows, r.cols)
        sigma = warmup.target_spectrum_from_record(r.alpha, r.frob_norm, k)
        spec = warmup.WarmupSpec(
            rows=r.rows,
            cols=r.cols,
            target_sigma=sigma,
            scale=args.scale,
            seed=warmup.derive_seed(args.seed, r.layer, r.type_label),
        )
        t = warmup.spectral_warmup_matrix(spec)
        name = _warmup_param_name(r.layer, r.type_label)
        tensor_io.write_npy(out_dir / f"{name}.npy", t.values)
        written += 1
    _write_json(
        {"seed": args.seed, "scale": args.scale, "step": step, "tensors": written},
        out_dir / "warmup.json",
    )
    print(f"wrote {written} initialization tensors to {out_dir}")
    return EXIT_OK


_WARMUP_NAMES = {
    "Q": "attn.q_proj",
    "K": "attn.k_proj",
    "V": "attn.v_proj",
    "O": "attn.o_proj",
    "MLP_UP": "mlp.up_proj",
    "MLP_DOWN": "mlp.down_proj",
}


def _warmup_param_name(layer: int, type_label: str) -> str:
    stem = _WARMUP_NAMES.get(type_label, type_label.lower())
    return f"layers.{layer}.{stem}.weight"


def cmd_spearman(args) -> int:
    xs, ys = [], []
    try:
        with open(args.data, newline="") as f:
            reader = csv.reader(f)
            header = next(reader)
            if len(header) < 2:
                raise ValueError("need two columns")
            for row in reader:
                xs.append(float(row[0]))
                ys.append(float(row[1]))
    except (OSError, ValueError, StopIteration) as e:
        raise CliError(f"bad data CSV {args.data}: {e}", EXIT_INPUT) from e
    try:
        rc = fits.spearman(xs, ys, permutations=args.permutations, seed=args.seed)
    except fits.FitError as e:
        raise CliError(f"correlation failed: {e}", EXIT_COMPUTE) from e
    _write_json(
        {"rho": rc.rho, "p_value": rc.p_value, "n": rc.n,
         "permutations": rc.permutations, "seed": rc.seed},
        args.out,
    )
    print(f"rho {rc.rho:.4f}, p {rc.p_value:.4g} (n={rc.n}, {rc.permutations} permutations)")
    return EXIT_OK


def build_parser() -> argparse.ArgumentParser:
    parser = _Parser(
        prog="spectrascan",
        description="Singular-value spectral analysis of transformer checkpoints.",
    )
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("scan", help="scan checkpoints into a spectral log CSV")
    p.add_argument("--manifest", required=True, help="run.json manifest path")
    p.add_argument("--root", required=True, help="checkpoint root directory")
    p.add_argument("--out", required=True, help="output spectral log CSV")
    p.add_argument("--types", default="", help="comma-separated matrix types (default all)")
    p.add_argument("--tail-fraction", type=float, default=0.2)
    p.set_defaults(func=cmd_scan)

    p = sub.add_parser("wave", help="compression onsets and wave velocity")
    p.add_argument("--log", required=True)
    p.add_argument("--out", required=True, help="output report JSON")
    p.add_argument("--type", default="Q")
    p.add_argument("--threshold", type=float, default=0.9)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_wave)

    p = sub.add_parser("profile", help="per-layer alpha profile at one step")
    p.add_argument("--log", required=True)
    p.add_argument("--step", type=int, default=None, help="default: last logged step")
    p.add_argument("--type", default="Q")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_profile)

    p = sub.add_parser("scaling", help="depth scaling-law fits over model summaries")
    p.add_argument("--summary", required=True,
                   help="CSV with columns L,delta_alpha,alpha_max,peak_ratio[,wave_velocity]")
    p.add_argument("--out", required=True)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_scaling)

    p = sub.add_parser("simulate", help="integrate the two-timescale model")
    p.add_argument("--params", default=None, help="SimParams JSON (default: built-in defaults)")
    p.add_argument("--out-prefix", required=True)
    p.add_argument("--seed", type=int, default=None)
    p.add_argument("--no-plots", action="store_true")
    p.set_defaults(func=cmd_simulate)

    p = sub.add_parser("prune-plan", help="emit a layer-removal plan")
    p.add_argument("--profile", default=None, help="layer,alpha CSV (from the profile command)")
    p.add_argument("--log", default=None, help="spectral log CSV (alternative input)")
    p.add_argument("--step", type=int, default=None)
    p.add_argument("--type", default="Q")
    p.add_argument("--strategy", required=True,
                   choices=["zone-aware", "last-n", "random", "magnitude", "spectral-worst"])
    p.add_argument("--k", type=int, required=True)
    p.add_argument("--boundary", type=int, default=None)
    p.add_argument("--min-gap", type=int, default=2)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--out", required=True)
    p.set_defaults(func=cmd_prune_plan)

    p = sub.add_parser("warmup", help="synthesize initialization tensors from a reference log")
    p.add_argument("--log", required=True, help="reference spectral log CSV")
    p.add_argument("--step", type=int, default=None, help="default: last logged step")
    p.add_argument("--out-dir", required=True)
    p.add_argument("--seed", type=int, default=0)
    p.add_argument("--scale", type=float, default=1.0)
    p.set_defaults(func=cmd_warmup)

    p = sub.add_parser("spearman", help="rank correlation with permutation p-value")
    p.add_argument("--data", required=True, help="two-column CSV with header")
    p.add_argument("--out", required=True)
    p.add_argument("--permutations", type=int, default=100_000)
    p.add_argument("--seed", type=int, default=0)
    p.set_defaults(func=cmd_spearman)

    return parser


def main(argv=None) -> int:
    args = build_parser().parse_args(argv)
    try:
        return args.func(args)
    except CliError as e:
        print(f"error: {e}", file=sys.stderr)
        return e.code


if __name__ == "__main__":
    sys.exit(main())
