"""Experiment configuration.

Config files are flat ``key = value`` text with dotted keys, one per line.
``#`` starts a comment.  A value is read as JSON when it parses (numbers,
``true``/``false``, ``null``, lists, quoted strings) and as a bare string
otherwise.  A ``.json`` file holding the same keys, flat or nested, is
equivalent.
"""
from __future__ import annotations

import enum
import hashlib
import json
from dataclasses import dataclass
from pathlib import Path

from ..errors import ConfigurationError
from ..kernel import Family, KernelSpec, MarkDistribution, MarkKind, make_kernel, normalize


class ExperimentKind(str, enum.Enum):
    SCALING_CURVE = "ScalingCurve"
    SLICE_SCALING = "SliceScaling"
    THRESHOLD_SWEEP = "ThresholdSweep"
    COUPLING_CHECK = "CouplingCheck"
    RENORM_DEMO = "RenormDemo"
    TANEMURA_DEMO = "TanemuraDemo"


# key -> (default, help)
KEYS = {
    "experiment": ("ScalingCurve", "one of " + ", ".join(k.value for k in ExperimentKind)),
    "kernel.family": ("boolean_power", "boolean_power | min | max | miller_abrahams"),
    "kernel.gamma": (1.0, "exponent of the boolean power kernel (a + b)^gamma"),
    "kernel.zeta": (1.0, "Miller-Abrahams level zeta in zeta - (|a| + |b| + |a - b|)"),
    "kernel.normalize": (False, "continuum runs: divide h by sup h (lengths in units of sup h; lambda is not rescaled)"),
    "marks.kind": ("dirac", "dirac | uniform | power_law | finite"),
    "marks.value": (0.5, "dirac mark value"),
    "marks.lo": (0.0, "uniform marks: lower end"),
    "marks.hi": (1.0, "uniform marks: upper end"),
    "marks.alpha": (0.0, "power-law marks: density exponent on [0, a0]"),
    "marks.a0": (1.0, "power-law marks: upper end"),
    "marks.values": ([], "finite marks: atoms"),
    "marks.weights": ([], "finite marks: weights (default uniform)"),
    "lambda": (4.0, "intensity of the point process"),
    "lambda_star": (3.0, "base-layer intensity for lattice, coupling and renorm runs"),
    "K": (16, "number of extra layers"),
    "ell_star": (1.0, "reduced range fixing the lattice margin alpha"),
    "eps": (None, "lattice step override 1/q (null: the strict step)"),
    "d": (2, "dimension"),
    "L": ([8, 16, 32], "box half-widths, strictly increasing (Tanemura: box sizes M)"),
    "slice.k": (None, "slice half-width for SliceScaling (null: 4 N from renorm.m, renorm.n)"),
    "trials": (100, "trials per cell"),
    "calibration.rule": ("pilot", "pilot: c = factor * median(count at smallest L) / L^e; fixed: use calibration.c"),
    "calibration.factor": (0.5, "factor of the pilot rule"),
    "calibration.c": (None, "constant for the fixed rule"),
    "sweep.param": ("lambda", "swept parameter for ThresholdSweep: lambda | zeta"),
    "sweep.values": ([], "swept values, strictly increasing"),
    "sweep.reach": (1.0, "distance to a face that counts as touching it"),
    "sweep.bootstrap": (200, "bootstrap resamples for the logistic fit"),
    "renorm.m": (3, "inner scale m of the renormalization"),
    "renorm.n": (12, "outer scale n of the renormalization"),
    "renorm.steps": (4, "cluster-growth steps after the origin (at most 4)"),
    "tanemura.p": (0.6, "yes-probability of the Bernoulli oracle"),
    "seed": (0, "master seed (unsigned 64-bit)"),
    "output.dir": ("out", "output directory"),
    "output.timing": (False, "fill the ms column (breaks byte-identical reruns)"),
    "threads": (1, "worker processes"),
}

# settings that do not change any record
RUN_KEYS = ("threads", "output.dir")


def parse_value(text: str):
    text = text.strip()
    try:
        return json.loads(text)
    except ValueError:
        return text


def flatten(obj, prefix="") -> dict:
    out = {}
    for k, v in obj.items():
        key = f"{prefix}{k}"
        if isinstance(v, dict):
            out.update(flatten(v, key + "."))
        else:
            out[key] = v
    return out


def parse_flat(text: str) -> dict:
    out = {}
    for n, raw in enumerate(text.splitlines(), start=1):
        line = raw.split("#", 1)[0].strip()
        if not line:
            continue
        if "=" not in line:
            raise ConfigurationError(f"line {n}: expected key = value, got {raw!r}")
        key, val = line.split("=", 1)
        out[key.strip()] = parse_value(val)
    return out


def load_file(path) -> dict:
    p = Path(path)
    if not p.is_file():
        raise ConfigurationError(f"config file {p} not found")
    text = p.read_text()
    if p.suffix == ".json":
        try:
            return flatten(json.loads(text))
        except ValueError as exc:
            raise ConfigurationError(f"{p}: {exc}") from exc
    return parse_flat(text)


def apply_overrides(values: dict, pairs) -> dict:
    out = dict(values)
    for pair in pairs or ():
        if "=" not in pair:
            raise ConfigurationError(f"--set expects key=value, got {pair!r}")
        k, v = pair.split("=", 1)
        out[k.strip()] = parse_value(v)
    return out


def _number_list(v, name, cast=float) -> tuple:
    if isinstance(v, (int, float)):
        v = [v]
    if not isinstance(v, list):
        raise ConfigurationError(f"{name} must be a list of numbers")
    try:
        return tuple(cast(x) for x in v)
    except (TypeError, ValueError) as exc:
        raise ConfigurationError(f"{name}: {exc}") from exc


def _increasing(seq) -> bool:
    return all(a < b for a, b in zip(seq, seq[1:]))


@dataclass(frozen=True)
class ExperimentConfig:
    values: dict

    def __getitem__(self, key):
        return self.values[key]

    @property
    def kind(self) -> ExperimentKind:
        return ExperimentKind(self.values["experiment"])

    @property
    def L(self) -> tuple:
        return self.values["L"]

    @property
    def trials(self) -> int:
        return self.values["trials"]

    @property
    def seed(self) -> int:
        return self.values["seed"]

    @classmethod
    def from_values(cls, given: dict) -> "ExperimentConfig":
        unknown = sorted(set(given) - set(KEYS))
        if unknown:
            raise ConfigurationError(f"unknown config keys: {', '.join(unknown)}")
        v = {k: d for k, (d, _) in KEYS.items()}
        v.update(given)
        try:
            ExperimentKind(v["experiment"])
        except ValueError:
            raise ConfigurationError(f"unknown experiment {v['experiment']!r}") from None
        v["L"] = _number_list(v["L"], "L")
        v["L"] = tuple(int(x) if float(x).is_integer() else x for x in v["L"])
        if not v["L"] or not _increasing(v["L"]) or min(v["L"]) <= 0:
            raise ConfigurationError("L must be a nonempty, strictly increasing list of positive numbers")
        v["sweep.values"] = _number_list(v["sweep.values"], "sweep.values")
        for key in ("trials", "d", "K", "threads", "seed", "sweep.bootstrap", "renorm.m", "renorm.n",
                    "renorm.steps"):
            if not isinstance(v[key], int) or isinstance(v[key], bool):
                raise ConfigurationError(f"{key} must be an integer")
        for key in ("lambda", "lambda_star", "kernel.gamma", "kernel.zeta", "ell_star", "tanemura.p",
                    "calibration.factor", "sweep.reach"):
            if not isinstance(v[key], (int, float)) or isinstance(v[key], bool):
                raise ConfigurationError(f"{key} must be a number")
            v[key] = float(v[key])
        if v["trials"] < 1:
            raise ConfigurationError("trials must be at least 1")
        if v["threads"] < 1:
            raise ConfigurationError("threads must be at least 1")
        if not 0 <= v["seed"] < 2 ** 64:
            raise ConfigurationError("seed must be an unsigned 64-bit integer")
        if v["d"] < 2:
            raise ConfigurationError("d must be at least 2")
        if v["lambda"] < 0:
            raise ConfigurationError("lambda must be nonnegative")
        for key in ("output.timing", "kernel.normalize"):
            if not isinstance(v[key], bool):
                raise ConfigurationError(f"{key} must be true or false")
        if v["calibration.rule"] not in ("pilot", "fixed"):
            raise ConfigurationError("calibration.rule must be pilot or fixed")
        if v["calibration.rule"] == "fixed" and not isinstance(v["calibration.c"], (int, float)):
            raise ConfigurationError("the fixed calibration rule needs calibration.c")
        if v["sweep.param"] not in ("lambda", "zeta"):
            raise ConfigurationError("sweep.param must be lambda or zeta")
        kind = ExperimentKind(v["experiment"])
        if kind is ExperimentKind.THRESHOLD_SWEEP:
            sv = v["sweep.values"]
            if len(sv) < 2 or not _increasing(sv):
                raise ConfigurationError("sweep.values needs at least two strictly increasing values")
            if v["sweep.param"] == "zeta" and v["kernel.family"] != "miller_abrahams":
                raise ConfigurationError("a zeta sweep needs the miller_abrahams kernel")
        if kind is ExperimentKind.TANEMURA_DEMO:
            if not all(isinstance(x, int) for x in v["L"]):
                raise ConfigurationError("TanemuraDemo box sizes L must be integers")
            if not 0 <= v["tanemura.p"] <= 1:
                raise ConfigurationError("tanemura.p must lie in [0, 1]")
        if kind is ExperimentKind.RENORM_DEMO and not 1 <= v["renorm.steps"] <= 4:
            raise ConfigurationError("renorm.steps must lie in 1..4")
        if kind in (ExperimentKind.SLICE_SCALING, ExperimentKind.COUPLING_CHECK, ExperimentKind.RENORM_DEMO):
            if not 0 <= v["lambda_star"] < v["lambda"]:
                raise ConfigurationError("need 0 <= lambda_star < lambda")
        cfg = cls(v)
        cfg.mark_distribution()
        cfg.kernel()
        return cfg

    def mark_distribution(self) -> MarkDistribution:
        v = self.values
        try:
            kind = MarkKind(v["marks.kind"])
        except ValueError:
            raise ConfigurationError(f"unknown marks.kind {v['marks.kind']!r}") from None
        if kind is MarkKind.DIRAC:
            return MarkDistribution.dirac(v["marks.value"])
        if kind is MarkKind.UNIFORM:
            return MarkDistribution.uniform(v["marks.lo"], v["marks.hi"])
        if kind is MarkKind.POWER_LAW:
            return MarkDistribution.power_law(v["marks.alpha"], v["marks.a0"])
        return MarkDistribution.finite(v["marks.values"], v["marks.weights"] or None)

    def kernel(self, zeta: float | None = None, normalized: bool | None = None) -> KernelSpec:
        """Kernel on the support of the mark law; ``zeta`` overrides the MA level.

        ``normalized`` defaults to the ``kernel.normalize`` key.
        """
        v = self.values
        try:
            fam = Family(v["kernel.family"])
        except ValueError:
            raise ConfigurationError(f"unknown kernel.family {v['kernel.family']!r}") from None
        z = v["kernel.zeta"] if zeta is None else zeta
        spec = make_kernel(fam, self.mark_distribution().support, v["kernel.gamma"], z)
        if normalized is None:
            normalized = v["kernel.normalize"]
        return normalize(spec) if normalized else spec

    def echo(self) -> dict:
        """Config values that define the results (run settings left out)."""
        return {k: v for k, v in self.values.items() if k not in RUN_KEYS}

    def canonical_json(self) -> str:
        return json.dumps(self.echo(), sort_keys=True, separators=(",", ":"))

    def content_hash(self) -> str:
        """Git-style blob hash of the canonical JSON."""
        body = self.canonical_json().encode()
        return hashlib.sha1(b"blob %d\0" % len(body) + body).hexdigest()


def load_config(path=None, overrides=None, seed=None, out=None, threads=None) -> ExperimentConfig:
    values = load_file(path) if path is not None else {}
    values = apply_overrides(values, overrides)
    if seed is not None:
        values["seed"] = seed
    if out is not None:
        values["output.dir"] = str(out)
    if threads is not None:
        values["threads"] = threads
    return ExperimentConfig.from_values(values)


def keys_help() -> str:
    lines = ["config keys (default: meaning):"]
    for k, (d, h) in KEYS.items():
        lines.append(f"  {k} = {json.dumps(d)}: {h}")
    return "\n".join(lines)
