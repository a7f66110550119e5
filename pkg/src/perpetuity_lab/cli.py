"""Command-line front end.

perpetuity-lab {classify,simulate,attractor,verify} --config FILE [--seed N] [--out DIR] [--threads N]

Exit codes: 0 success, 1 config error, 2 precondition violated,
3 classification undetermined, 4 a diagnostic contradicts the verdict.
"""
import argparse
import json
import math
import sys
from dataclasses import dataclass, field
from enum import Enum
from pathlib import Path

import numpy as np

from . import attractor as att
from . import diagnostics as diag
from .chain import LOG_MAX, simulate_backward, simulate_forward
from .classify import Outcome, classify_spec
from .errors import PerpetuityError, PreconditionError
from .model import FiniteSupportSpec, check_nondegeneracy, spec_from_dict, tail_profile
from .rng import DEFAULT_SEED, resolve_seed

EXIT_OK, EXIT_CONFIG, EXIT_PRECONDITION, EXIT_UNDETERMINED, EXIT_CONTRADICTION = 0, 1, 2, 3, 4
COMMANDS = ("classify", "simulate", "attractor", "verify")


class ConfigError(Exception):
    pass


def _plain(o):
    if isinstance(o, Enum):
        return o.value
    if isinstance(o, np.ndarray):
        return o.tolist()
    if isinstance(o, np.integer):
        return int(o)
    if isinstance(o, np.floating):
        return float(o)
    if hasattr(o, "to_dict"):
        return o.to_dict()
    raise TypeError(f"cannot serialize {type(o).__name__}")


def dumps(obj):
    """Canonical text: sorted keys, shortest round-trip floats, Infinity/NaN allowed."""
    return json.dumps(obj, sort_keys=True, indent=2, allow_nan=True, default=_plain) + "\n"


@dataclass(frozen=True)
class ExperimentConfig:
    spec: dict
    sections: dict = field(default_factory=dict)   # command name -> parameters
    seed: int = None
    out: str = None

    @classmethod
    def from_dict(cls, d):
        if not isinstance(d, dict) or "spec" not in d:
            raise ConfigError("config needs a 'spec' object")
        unknown = set(d) - {"spec", "seed", "out", *COMMANDS}
        if unknown:
            raise ConfigError(f"unknown config keys: {sorted(unknown)}")
        seed = d.get("seed")
        if seed is not None and not (isinstance(seed, int) and 0 <= seed < 2 ** 64):
            raise ConfigError("seed must be an unsigned 64-bit integer")
        return cls(d["spec"], {k: dict(d[k]) for k in COMMANDS if k in d}, seed, d.get("out"))

    @classmethod
    def from_text(cls, text):
        try:
            d = json.loads(text)
        except json.JSONDecodeError as e:
            raise ConfigError(f"config is not valid JSON: {e}") from None
        return cls.from_dict(d)

    @classmethod
    def load(cls, path):
        try:
            return cls.from_text(Path(path).read_text())
        except OSError as e:
            raise ConfigError(str(e)) from None

    def to_dict(self):
        d = {"spec": self.spec}
        d.update(self.sections)
        if self.seed is not None:
            d["seed"] = self.seed
        if self.out is not None:
            d["out"] = self.out
        return d

    def to_text(self):
        return dumps(self.to_dict())

    def params(self, command):
        return dict(self.sections.get(command, {}))

    def build_spec(self):
        try:
            return spec_from_dict(self.spec)
        except (KeyError, TypeError) as e:
            raise ConfigError(f"malformed spec: {e}") from None


def _write(out, name, text):
    if out is None:
        return
    Path(out).mkdir(parents=True, exist_ok=True)
    (Path(out) / name).write_text(text)


def _verdict(spec, seed):
    nondeg = check_nondegeneracy(spec, seed=seed)
    profile = tail_profile(spec)
    return classify_spec(profile, nondeg), profile, nondeg


def cmd_classify(config, seed, out=None, threads=None):
    spec = config.build_spec()
    verdict, profile, nondeg = _verdict(spec, seed)
    doc = {"command": "classify", "seed": seed, "verdict": verdict, "profile": profile,
           "nondegeneracy": nondeg}
    _write(out, "verdict.json", dumps(doc))
    code = EXIT_UNDETERMINED if verdict.outcome == Outcome.UNDETERMINED else EXIT_OK
    return doc, code


def cmd_simulate(config, seed, out=None, threads=None):
    spec = config.build_spec()
    p = config.params("simulate")
    n = int(p.get("n", 1000))
    x0 = float(p.get("x0", 0.0))
    sim = simulate_backward if p.get("backward", False) else simulate_forward
    traj = sim(spec, x0, n, seed)
    lx = traj.log_x
    over = traj.overflow_step
    summary = {"n": n, "x0": x0, "log_x_final": float(lx[-1]),
               "x_final": None if lx[-1] > LOG_MAX else float(np.exp(lx[-1])),
               "log_x_max": float(lx.max()), "log_x_min_last_half": float(lx[n // 2:].min()),
               "log_pi_final": float(traj.s[-1]), "overflow_step": over}
    doc = {"command": "simulate", "seed": seed, "summary": summary}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        traj.to_csv(Path(out) / "trajectory.csv")
    _write(out, "summary.json", dumps(doc))
    return doc, EXIT_OK


def cmd_attractor(config, seed, out=None, threads=None):
    spec = config.build_spec()
    if not isinstance(spec, FiniteSupportSpec):
        raise PreconditionError("the attractor command needs a finite_support spec")
    p = config.params("attractor")
    depth = int(p.get("depth", 10))
    approx = att.approximate_attractor(spec, depth, float(p.get("epsilon", 1e-12)))
    rep = approx.report()
    rep["unboundedness"] = att.unboundedness_test(spec)
    rep["interval_certificate"] = att.interval_certificate(spec)
    steps = int(p.get("chaos_steps", 0))
    if steps:
        cloud = att.chaos_game(spec, steps, int(p.get("burn_in", 1000)), seed)
        rep["chaos_steps"] = steps
        rep["hausdorff_to_chaos_game"] = att.hausdorff(cloud, approx.net)
    doc = {"command": "attractor", "seed": seed, "attractor": rep}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        approx.to_csv(Path(out) / "attractor.csv")
    _write(out, "attractor.json", dumps(doc))
    return doc, EXIT_OK


def cmd_verify(config, seed, out=None, threads=None):
    spec = config.build_spec()
    p = config.params("verify")
    verdict, _, _ = _verdict(spec, seed)
    level = float(p.get("level", math.e))
    d = diag.recurrence_diagnostic(spec, float(p.get("x0", 0.0)), level, int(p.get("horizon", 10 ** 5)),
                                   int(p.get("replicates", 200)), seed, threads=threads,
                                   extra_levels=p.get("extra_levels", ()))
    agree = diag.agreement(verdict, d.conclusion)
    bundle = {"recurrence": d}
    caveats = []
    if agree == "ambiguous":
        caveats.append("diagnostic is ambiguous, no contradiction")
    if verdict.outcome == Outcome.POSITIVE and p.get("stabilization", True):
        n_st = int(p.get("stabilization_horizon", 10 ** 5))
        ks = diag.law_stabilization(spec, n_st, seed)
        bundle["stabilization"] = {"horizon": n_st, "ks": ks, "stable": ks <= 0.02}
    doc = {"command": "verify", "seed": seed, "verdict": verdict, "diagnostics": bundle,
           "agreement": agree, "caveats": caveats}
    if out is not None:
        Path(out).mkdir(parents=True, exist_ok=True)
        d.to_csv(Path(out) / "hitting_sum.csv")
    _write(out, "verify.json", dumps(doc))
    return doc, EXIT_CONTRADICTION if agree == "contradiction" else EXIT_OK


HANDLERS = {"classify": cmd_classify, "simulate": cmd_simulate,
            "attractor": cmd_attractor, "verify": cmd_verify}


def build_parser():
    ap = argparse.ArgumentParser(prog="perpetuity-lab", description=__doc__.splitlines()[0])
    ap.add_argument("command", choices=COMMANDS)
    ap.add_argument("--config", required=True, help="JSON experiment config")
    ap.add_argument("--seed", type=lambda s: int(s, 0), default=None,
                    help=f"master seed (default: env PERPETUITY_LAB_SEED, config, then {DEFAULT_SEED:#x})")
    ap.add_argument("--out", default=None, help="output directory")
    ap.add_argument("--threads", type=int, default=None, help="worker cap for replicate loops")
    return ap


def main(argv=None):
    args = build_parser().parse_args(argv)
    try:
        config = ExperimentConfig.load(args.config)
        seed = args.seed if args.seed is not None else resolve_seed(config.seed)
        if not 0 <= seed < 2 ** 64:
            raise ConfigError("seed must be an unsigned 64-bit integer")
        out = args.out if args.out is not None else config.out
        doc, code = HANDLERS[args.command](config, seed, out, args.threads)
    except ConfigError as e:
        print(f"config error: {e}", file=sys.stderr)
        return EXIT_CONFIG
    except PreconditionError as e:
        print(f"precondition violated ({e.code}): {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    except PerpetuityError as e:
        print(f"{e.code}: {e}", file=sys.stderr)
        return EXIT_PRECONDITION
    sys.stdout.write(dumps(doc))
    return code


if __name__ == "__main__":
    sys.exit(main())
