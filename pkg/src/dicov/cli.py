"""Command line entry point: ``dicov {simulate,sweep-machines,sweep-beta,hub,worker}``.

Every :class:`ExperimentConfig` field can come from a flat ``key=value``
file given with ``--config`` and be overridden by a flag of the same name,
e.g. ``--p 50 --M 4 --base_seed 7``.
"""

from __future__ import annotations

import argparse
import dataclasses
import logging
import sys
from pathlib import Path

from .datagen import chain_precision, machine_samples
from .errors import DicovError, InvalidParameter
from .experiment import (
    ExperimentConfig,
    records_csv,
    run_experiment,
    summary_csv,
    sweep_beta,
    sweep_machines,
)
from .metrics import frobenius_sq_error, linf_error, support_metrics
from .wire import ACK_OK, hub_serve, worker_run

log = logging.getLogger("dicov")


def _parse_bool(text: str) -> bool:
    low = text.strip().lower()
    if low in ("1", "true", "yes", "on"):
        return True
    if low in ("0", "false", "no", "off"):
        return False
    raise InvalidParameter(f"not a boolean: {text!r}")


def _optional(cast):
    def parse(text):
        text = text.strip()
        return None if text.lower() in ("", "none") else cast(text)

    return parse


_CASTS = {
    "p": int,
    "n": int,
    "M": int,
    "trials": int,
    "a": float,
    "beta": float,
    "B": _optional(int),
    "lam": _optional(float),
    "tau": _optional(float),
    "base_seed": int,
    "estimators": str,
    "mode": str,
    "address": str,
    "port": int,
    "timeout": float,
    "tol": float,
    "max_iter": int,
    "timing": _parse_bool,
    "out": _optional(str),
}


def parse_float_list(text: str) -> list[float]:
    return [float(v) for v in text.split(",") if v.strip()]


def parse_int_list(text: str) -> list[int]:
    return [int(v) for v in text.split(",") if v.strip()]


def read_config_file(path) -> dict:
    """Parse ``key=value`` lines; blank lines and ``#`` comments are skipped."""
    values = {}
    for lineno, raw in enumerate(Path(path).read_text().splitlines(), 1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise InvalidParameter(f"{path}:{lineno}: expected key=value")
        key, value = (part.strip() for part in line.split("=", 1))
        if key not in _CASTS:
            raise InvalidParameter(f"{path}:{lineno}: unknown key {key!r}")
        values[key] = _CASTS[key](value)
    return values


def build_config(args, mode: str) -> ExperimentConfig:
    values = read_config_file(args.config) if args.config else {}
    for key, cast in _CASTS.items():
        raw = getattr(args, key, None)
        if raw is not None:
            values[key] = cast(raw)
    values["mode"] = mode
    return ExperimentConfig(**values)


def _emit(text: str, path) -> None:
    if path:
        Path(path).write_text(text)
    else:
        sys.stdout.write(text)


def _cmd_simulate(args):
    config = build_config(args, "simulate")
    records = run_experiment(config)
    _emit(records_csv(records), config.out)


def _cmd_sweep_machines(args):
    config = build_config(args, "simulate")
    rows = sweep_machines(config, parse_int_list(args.M_values), records_path=args.records)
    _emit(summary_csv(rows), config.out)


def _cmd_sweep_beta(args):
    config = build_config(args, "simulate")
    rows = sweep_beta(config, parse_float_list(args.beta_values), records_path=args.records)
    _emit(summary_csv(rows), config.out)


def _cmd_hub(args):
    config = build_config(args, "hub")
    est = hub_serve(config)
    model = chain_precision(config.p, config.a)
    dense = est.theta_final.to_dense()
    fpr, fnr = support_metrics(est.theta_final, model)
    sys.stdout.write(
        f"machines={est.M} tau={est.tau!r} edges={est.theta_final.n_offdiagonal} "
        f"mse={frobenius_sq_error(dense, model.theta)!r} linf={linf_error(dense, model.theta)!r} "
        f"fpr={fpr!r} fnr={fnr!r}\n"
    )


def _cmd_worker(args):
    config = build_config(args, "worker")
    machine_id = args.machine_id

    def data(hub_cfg):
        model = chain_precision(hub_cfg.p, config.a)
        return machine_samples(model, hub_cfg.n, hub_cfg.base_seed, machine_id)

    status = worker_run(data, (config.address, config.port), machine_id, timeout=config.timeout)
    if status != ACK_OK:
        raise DicovError(f"hub rejected machine {machine_id} (status {status})")
    sys.stdout.write(f"machine {machine_id}: update accepted\n")


def _add_config_flags(parser: argparse.ArgumentParser) -> None:
    parser.add_argument("--config", help="key=value config file")
    for f in dataclasses.fields(ExperimentConfig):
        if f.name == "mode":
            continue
        parser.add_argument(f"--{f.name}", dest=f.name, metavar=f.name.upper(), default=None)


def make_parser() -> argparse.ArgumentParser:
    parser = argparse.ArgumentParser(prog="dicov", description=__doc__.splitlines()[0])
    parser.add_argument("-v", "--verbose", action="store_true")
    sub = parser.add_subparsers(dest="command", required=True)

    p = sub.add_parser("simulate", help="per-trial metrics CSV")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_simulate)

    p = sub.add_parser("sweep-machines", help="summary over machine counts")
    _add_config_flags(p)
    p.add_argument("--M_values", default="2,4,8,16")
    p.add_argument("--records", help="also write per-trial CSV here")
    p.set_defaults(func=_cmd_sweep_machines)

    p = sub.add_parser("sweep-beta", help="support recovery over tuning multipliers")
    _add_config_flags(p)
    p.add_argument("--beta_values", default="0.2,0.4,0.6,0.8,1.0,1.2,1.4,1.6,1.8,2.0")
    p.add_argument("--records", help="also write per-trial CSV here")
    p.set_defaults(func=_cmd_sweep_beta)

    p = sub.add_parser("hub", help="collect one update per worker over TCP")
    _add_config_flags(p)
    p.set_defaults(func=_cmd_hub)

    p = sub.add_parser("worker", help="compute and send this machine's update")
    _add_config_flags(p)
    p.add_argument("--machine_id", type=int, required=True)
    p.set_defaults(func=_cmd_worker)
    return parser


def main(argv=None) -> int:
    args = make_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING, format="%(levelname)s %(message)s")
    try:
        args.func(args)
    except (DicovError, ValueError, OSError) as exc:
        print(f"dicov: error: {exc}", file=sys.stderr)
        return 1
    return 0


if __name__ == "__main__":
    sys.exit(main())
