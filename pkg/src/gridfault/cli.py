"""Command-line entry point ``gridfault``.

Exit status is 0 on success, 1 when the library rejects the input on domain
grounds (observability, infeasible placement, bad fault description) and 2 on
usage errors or unreadable files.
"""

from __future__ import annotations

import argparse
import json
import logging
import sys

from . import __version__
from .errors import GridFaultError, ObservabilityError
from .estimator import DEFAULT_EPSILON, read_stream, write_stream
from .fdl import (DEFAULT_GAMMA, DEFAULT_PERCENTILE, DEFAULT_TH_V, MIN_FRAMES, Calibration, Pipeline,
                  calibrate)
from .network import load_network, save_network

log = logging.getLogger("gridfault")


class UsageError(Exception):
    pass


class _Parser(argparse.ArgumentParser):
    def error(self, message):
        self.print_usage(sys.stderr)
        raise UsageError(message)


def _dump(obj, path=None):
    text = json.dumps(obj, indent=1, sort_keys=True)
    if path:
        with open(path, "w") as fh:
            fh.write(text + "\n")
    else:
        print(text)


def _net(path):
    try:
        return load_network(path)
    except OSError as exc:
        raise UsageError(f"cannot read network {path}: {exc.strerror or exc}") from None
    except (json.JSONDecodeError, KeyError) as exc:
        raise UsageError(f"malformed network file {path}: {exc}") from None


def _stream(path):
    try:
        return read_stream(path)
    except OSError as exc:
        raise UsageError(f"cannot read stream {path}: {exc.strerror or exc}") from None
    except (KeyError, ValueError) as exc:
        raise UsageError(f"malformed stream file {path}: {exc}") from None


def _split_arg(text):
    key, _, value = text.partition("=")
    try:
        if key != "bus":
            raise ValueError
        return int(value)
    except ValueError:
        raise UsageError(f"--split expects bus=K, got {text!r}") from None


def _pin_arg(text):
    key, _, value = text.partition("=")
    try:
        return int(key), int(value)
    except ValueError:
        raise UsageError(f"--pin expects BUS=0|1, got {text!r}") from None


def _noise(args):
    from .simulator import NoiseSpec

    return NoiseSpec.zero(args.seed) if getattr(args, "noiseless", False) else NoiseSpec(seed=args.seed)


def _bank(net, frames, args):
    """Estimator bank whose covariance sits at the first frame of the stream."""
    from .estimator import build_estimator_bank

    if not frames:
        raise UsageError("the stream holds no frames")
    noise = _noise(args)
    if noise.silent:
        return build_estimator_bank(net, epsilon=args.epsilon)
    return build_estimator_bank(net, epsilon=args.epsilon, noise=noise, reference_frame=frames[0])


# --- subcommands -------------------------------------------------------------

def cmd_place(args):
    from .placement import place

    net = _net(args.network)
    reconfig = [_net(p) for p in args.reconfig]
    splits = [_split_arg(s) for s in args.split]
    pins = dict(_pin_arg(p) for p in args.pin)
    placed, solution = place(net, args.objective, splits, reconfig, pins)
    _dump(solution.to_dict(), args.output)
    if args.save_network:
        save_network(placed, args.save_network)
    return 0


def cmd_clusters(args):
    from .observability import check_theorem1, compute_ufc2

    net = _net(args.network)
    out = compute_ufc2(net).to_dict()
    out["observable"] = bool(check_theorem1(net).observable_extended)
    _dump(out)
    return 0


def cmd_simulate(args):
    from .simulator import FaultSpec, Scenario, generate_frames

    net = _net(args.network)
    fault = FaultSpec.parse(args.fault) if args.fault else None
    scenario = Scenario(net, fault, args.t_fault, args.horizon, _noise(args))
    write_stream(generate_frames(scenario), args.output)
    return 0


def cmd_calibrate(args):
    net = _net(args.network)
    if args.stream:
        frames = _stream(args.stream)
    else:
        from .simulator import Scenario, generate_frames

        frames = generate_frames(Scenario(net, None, 0, args.frames + 1, _noise(args)))
    bank = _bank(net, frames, args).prepare()
    cal = calibrate(bank, frames[1:] if not args.stream else frames, args.percentile, args.min_frames)
    _dump(cal.to_dict(), args.output)
    return 0


def cmd_run(args):
    net = _net(args.network)
    frames = _stream(args.stream)
    try:
        cal = Calibration.load(args.calib)
    except OSError as exc:
        raise UsageError(f"cannot read calibration {args.calib}: {exc.strerror or exc}") from None
    bank = _bank(net, frames, args).prepare()
    pipe = Pipeline(bank, cal, args.delta, args.gamma, args.th_v)
    out = open(args.output, "w") if args.output else sys.stdout
    try:
        for ev in pipe.process(frames):
            out.write(json.dumps(ev.to_dict()) + "\n")
    finally:
        if out is not sys.stdout:
            out.close()
    return 0


def cmd_montecarlo(args):
    from .montecarlo import Campaign, default_campaign, emit_curves, run_campaign, write_curves

    if args.campaign == "default":
        campaign = default_campaign()
    else:
        try:
            campaign = Campaign.load(args.campaign)
        except OSError as exc:
            raise UsageError(f"cannot read campaign {args.campaign}: {exc.strerror or exc}") from None
        except (json.JSONDecodeError, KeyError) as exc:
            raise UsageError(f"malformed campaign file {args.campaign}: {exc}") from None
    if args.runs:
        campaign.runs_per_scenario = args.runs
    result = run_campaign(campaign, args.workers)
    output = args.output or campaign.results_path or "results.csv"
    result.write_csv(output)
    curves = args.curves or campaign.curves_path or "curves.csv"
    write_curves(emit_curves(), curves)
    for i, sc in enumerate(result.scenarios):
        cells = " ".join(f"d{d}:{result.counts[(i, d)]['detected_localized']}" for d in result.deltas)
        print(f"{sc.name:40s} {cells}")
    return 0


def cmd_benchmark(args):
    from .benchmark import benchmark_setup, build_benchmark, second_topology

    if args.monitored:
        net, _ = benchmark_setup(args.grounding, args.topology)
    else:
        net = build_benchmark(args.grounding)
        net = second_topology(net) if args.topology == 2 else net
    save_network(net, args.output)
    return 0


def build_parser():
    p = _Parser(prog="gridfault", description="Fault detection and PMU placement for radial grids.")
    p.add_argument("--version", action="version", version=f"gridfault {__version__}")
    p.add_argument("-v", "--verbose", action="store_true")
    sub = p.add_subparsers(dest="command", parser_class=_Parser)
    sub.required = True

    s = sub.add_parser("place", help="optimal PMU placement")
    s.add_argument("network")
    s.add_argument("--objective", choices=("max_resolution", "min_count"), default="max_resolution")
    s.add_argument("--split", action="append", default=[], metavar="bus=K")
    s.add_argument("--reconfig", action="append", default=[], metavar="TOPOLOGY.json")
    s.add_argument("--pin", action="append", default=[], metavar="BUS=0|1")
    s.add_argument("-o", "--output")
    s.add_argument("--save-network", metavar="PATH", help="write the monitored network")
    s.set_defaults(func=cmd_place)

    s = sub.add_parser("clusters", help="fault clusters of a monitored network")
    s.add_argument("network")
    s.set_defaults(func=cmd_clusters)

    s = sub.add_parser("simulate", help="noisy measurement stream of a scenario")
    s.add_argument("network")
    s.add_argument("--fault", metavar="line=K,p=P,kind=KIND[,phases=..]")
    s.add_argument("--t-fault", type=int, default=25)
    s.add_argument("--horizon", type=int, default=100)
    s.add_argument("--seed", type=int, default=0)
    s.add_argument("--noiseless", action="store_true")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_simulate)

    for name, func in (("calibrate", cmd_calibrate), ("run", cmd_run)):
        s = sub.add_parser(name, help="detection thresholds from healthy frames" if name == "calibrate"
                           else "detect, localize and characterize faults in a stream")
        s.add_argument("network")
        if name == "calibrate":
            s.add_argument("stream", nargs="?", help="healthy stream; simulated when omitted")
            s.add_argument("--frames", type=int, default=20000)
            s.add_argument("--percentile", type=float, default=DEFAULT_PERCENTILE)
            s.add_argument("--min-frames", type=int, default=MIN_FRAMES)
        else:
            s.add_argument("stream")
            s.add_argument("--calib", required=True)
            s.add_argument("--delta", type=int, default=0)
            s.add_argument("--gamma", type=float, default=DEFAULT_GAMMA)
            s.add_argument("--th-v", type=float, default=DEFAULT_TH_V)
        s.add_argument("--epsilon", type=float, default=DEFAULT_EPSILON)
        s.add_argument("--seed", type=int, default=0)
        s.add_argument("--noiseless", action="store_true")
        s.add_argument("-o", "--output")
        s.set_defaults(func=func)

    s = sub.add_parser("benchmark", help="write the 84-bus reference network")
    s.add_argument("--grounding", choices=("solid", "petersen"), default="solid")
    s.add_argument("--topology", type=int, choices=(1, 2), default=1)
    s.add_argument("--monitored", action="store_true", help="with split buses and the reference placement")
    s.add_argument("-o", "--output", required=True)
    s.set_defaults(func=cmd_benchmark)

    s = sub.add_parser("montecarlo", help="seeded localization campaign")
    s.add_argument("campaign", help="campaign JSON, or 'default' for the benchmark campaign")
    s.add_argument("-o", "--output")
    s.add_argument("--curves")
    s.add_argument("--runs", type=int)
    s.add_argument("--workers", type=int)
    s.set_defaults(func=cmd_montecarlo)
    return p


def main(argv=None):
    parser = build_parser()
    try:
        args = parser.parse_args(argv)
    except UsageError as exc:
        print(f"gridfault: error: {exc}", file=sys.stderr)
        return 2
    except SystemExit as exc:
        return int(exc.code or 0)
    logging.basicConfig(level=logging.DEBUG if args.verbose else logging.WARNING,
                        format="%(name)s: %(message)s")
    try:
        return args.func(args)
    except UsageError as exc:
        print(f"gridfault: error: {exc}", file=sys.stderr)
        return 2
    except ObservabilityError as exc:
        diag = {"error": type(exc).__name__, "message": str(exc),
                "violations": [list(v) if isinstance(v, (tuple, list)) else v for v in exc.violations]}
        print(json.dumps(diag), file=sys.stderr)
        return 1
    except GridFaultError as exc:
        print(json.dumps({"error": type(exc).__name__, "message": str(exc)}), file=sys.stderr)
        return 1


if __name__ == "__main__":
    sys.exit(main())
