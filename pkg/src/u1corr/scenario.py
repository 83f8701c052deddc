"""Scenario files (TOML): parsing, validation, rendering and conversion to models.

Rates are written in units of the reference rate ``gamma`` and times in
units of ``1/gamma``, so ``rate = 1.5`` on a hopping term means
tau = 1.5 gamma.  Coherent amplitudes are given as mean photon number
``n`` (= |alpha|^2) and ``phase``.
"""
from __future__ import annotations

import copy
import dataclasses
import math
import sys
from dataclasses import dataclass, field
from importlib import resources
from pathlib import Path

import numpy as np
import tomli_w

if sys.version_info >= (3, 11):
    import tomllib
else:
    import tomli as tomllib

from .dynamics import Coherent, Excited, Fock, Ground
from .hilbert import HilbertSpace, ModeKind, ModeSpec
from .model import (
    CW, Detuning, DissipatorChannel, Drive, GaussianPulse, Hopping, JCCoupling, Kerr,
    KindMismatch, ModelError, ModelSpec,
)


class ScenarioError(ValueError):
    exit_code = 2


class ScenarioSyntaxError(ScenarioError):
    exit_code = 4


class UnknownKeyError(ScenarioError):
    exit_code = 5


class CrossReferenceError(ScenarioError):
    exit_code = 6


class KindMismatchError(ScenarioError):
    exit_code = 7


TERM_KINDS = ("detuning", "hopping", "kerr", "jc", "drive")
ENGINES = ("exact", "positive_p")
BUNDLED = ("fig1", "fig2", "driven_mode", "two_photon_absorber", "unequal_rates", "jc_driven",
           "fig1_positivep")


@dataclass(frozen=True)
class TermDecl:
    kind: str
    modes: tuple
    rate: float
    envelope: dict = field(default_factory=lambda: {"kind": "cw"})


@dataclass(frozen=True)
class ChannelDecl:
    mode: str
    kind: str = "loss"
    rate: float = 1.0
    photons: int = 1


@dataclass(frozen=True)
class InitDecl:
    kind: str
    n: float = 0.0
    phase: float = 0.0


@dataclass(frozen=True)
class EngineOptions:
    kind: str = "exact"
    tol: float = 1e-9
    max_leakage: float = 1e-3
    n_traj: int = 10000
    seed: int = 0
    dt: float = 1e-3
    workers: int = 1


@dataclass(frozen=True)
class Scenario:
    name: str
    modes: tuple
    terms: tuple = ()
    channels: tuple = ()
    initial: tuple = ()  # InitDecl per mode, declaration order
    t_end: float = 3.0
    n_points: int = 400
    orders: tuple = (2,)
    engine: EngineOptions = EngineOptions()
    gamma: float = 1.0
    description: str = ""

    # -- conversions -----------------------------------------------------
    @property
    def space(self) -> HilbertSpace:
        return HilbertSpace(self.modes)

    def model(self) -> ModelSpec:
        space = self.space
        idx = {label: i for i, label in enumerate(space.labels)}
        g = self.gamma
        terms = []
        for t in self.terms:
            m = [idx[x] for x in t.modes]
            if t.kind == "detuning":
                terms.append(Detuning(m[0], t.rate * g))
            elif t.kind == "kerr":
                terms.append(Kerr(m[0], t.rate * g))
            elif t.kind == "hopping":
                terms.append(Hopping(m[0], m[1], t.rate * g))
            elif t.kind == "jc":
                terms.append(JCCoupling(m[0], m[1], t.rate * g))
            elif t.kind == "drive":
                terms.append(Drive(m[0], t.rate * g, _envelope(t.envelope, g)))
        channels = [DissipatorChannel(idx[c.mode], c.kind, c.rate * g, c.photons) for c in self.channels]
        return ModelSpec(space, terms, channels)

    def initial_specs(self) -> list:
        out = []
        for d in self.initial:
            if d.kind == "coherent":
                out.append(Coherent.from_mean(d.n, d.phase))
            elif d.kind == "fock":
                out.append(Fock(int(d.n)))
            elif d.kind == "ground":
                out.append(Ground())
            else:
                out.append(Excited())
        return out

    def coherent_amplitudes(self) -> np.ndarray:
        if any(d.kind != "coherent" for d in self.initial):
            raise ScenarioError("positive-P runs need coherent initial states on every mode")
        return np.array([s.alpha for s in self.initial_specs()], dtype=complex)

    def times(self) -> np.ndarray:
        return np.linspace(0.0, self.t_end / self.gamma, self.n_points)

    def with_cutoff(self, cutoff: int) -> "Scenario":
        modes = tuple(ModeSpec.boson(m.label, cutoff) if m.is_boson else m for m in self.modes)
        return validated(dataclasses.replace(self, modes=modes))


def _envelope(d: dict, gamma: float):
    if d["kind"] == "cw":
        return CW()
    return GaussianPulse(d["center"] / gamma, d["width"] / gamma)


# -- parsing ------------------------------------------------------------------

def _keys(table, allowed, where, required=()):
    if not isinstance(table, dict):
        raise ScenarioError(f"{where}: expected a table")
    extra = sorted(set(table) - set(allowed))
    if extra:
        raise UnknownKeyError(f"{where}: unknown key(s) {extra}")
    missing = [k for k in required if k not in table]
    if missing:
        raise ScenarioError(f"{where}: missing key(s) {missing}")


def _num(value, where, positive=False, nonneg=False, integer=False):
    if isinstance(value, bool) or not isinstance(value, (int, float)):
        raise ScenarioError(f"{where}: expected a number, got {value!r}")
    if integer and int(value) != value:
        raise ScenarioError(f"{where}: expected an integer, got {value!r}")
    if not math.isfinite(value):
        raise ScenarioError(f"{where}: must be finite")
    if positive and value <= 0:
        raise ScenarioError(f"{where}: must be positive")
    if nonneg and value < 0:
        raise ScenarioError(f"{where}: must be non-negative")
    return int(value) if integer else float(value)


def from_dict(data: dict) -> Scenario:
    _keys(data, {"name", "description", "gamma", "modes", "terms", "channels", "initial", "time",
                 "correlators", "engine"}, "scenario", required=("name", "modes", "initial"))
    gamma = _num(data.get("gamma", 1.0), "gamma", positive=True)

    modes = []
    raw_modes = data["modes"]
    if not isinstance(raw_modes, list) or not raw_modes:
        raise ScenarioError("modes: need a non-empty list of modes")
    for k, m in enumerate(raw_modes):
        where = f"modes[{k}]"
        _keys(m, {"label", "kind", "cutoff"}, where, required=("label", "kind"))
        if m["kind"] not in ("boson", "two_level"):
            raise ScenarioError(f"{where}: kind must be 'boson' or 'two_level'")
        try:
            if m["kind"] == "boson":
                if "cutoff" not in m:
                    raise ScenarioError(f"{where}: boson needs a cutoff")
                modes.append(ModeSpec.boson(m["label"], _num(m["cutoff"], f"{where}.cutoff", integer=True)))
            else:
                if "cutoff" in m:
                    raise KindMismatchError(f"{where}: two-level modes take no cutoff")
                modes.append(ModeSpec.two_level(m["label"]))
        except ValueError as exc:
            if isinstance(exc, ScenarioError):
                raise
            raise ScenarioError(f"{where}: {exc}") from None
    labels = [m.label for m in modes]
    if len(set(labels)) != len(labels):
        raise ScenarioError(f"modes: duplicate labels {labels}")
    kinds = {m.label: m.kind for m in modes}

    def ref(label, where):
        if label not in kinds:
            raise CrossReferenceError(f"{where}: unknown mode {label!r}")
        return label

    terms = []
    for k, t in enumerate(data.get("terms", [])):
        where = f"terms[{k}]"
        if not isinstance(t, dict) or t.get("kind") not in TERM_KINDS:
            raise ScenarioError(f"{where}: kind must be one of {TERM_KINDS}")
        kind = t["kind"]
        if kind == "hopping":
            _keys(t, {"kind", "modes", "rate"}, where, required=("modes", "rate"))
            if not isinstance(t["modes"], list) or len(t["modes"]) != 2:
                raise ScenarioError(f"{where}: hopping needs two modes")
            names = tuple(ref(x, where) for x in t["modes"])
            if names[0] == names[1]:
                raise ScenarioError(f"{where}: hopping needs two distinct modes")
        elif kind == "jc":
            _keys(t, {"kind", "boson", "atom", "rate"}, where, required=("boson", "atom", "rate"))
            names = (ref(t["boson"], where), ref(t["atom"], where))
            if kinds[names[0]] is not ModeKind.BOSON or kinds[names[1]] is not ModeKind.TWO_LEVEL:
                raise KindMismatchError(f"{where}: jc needs a boson and a two-level mode")
        else:
            allowed = {"kind", "mode", "rate"} | ({"envelope"} if kind == "drive" else set())
            _keys(t, allowed, where, required=("mode", "rate"))
            names = (ref(t["mode"], where),)
            if kind == "kerr" and kinds[names[0]] is not ModeKind.BOSON:
                raise KindMismatchError(f"{where}: kerr needs a bosonic mode")
        rate = _num(t["rate"], f"{where}.rate")
        envelope = {"kind": "cw"}
        if kind == "drive":
            env = t.get("envelope", "cw")
            if env == "cw" or env == {"kind": "cw"}:
                envelope = {"kind": "cw"}
            elif isinstance(env, dict) and env.get("kind") == "gaussian":
                _keys(env, {"kind", "center", "width"}, f"{where}.envelope", required=("center", "width"))
                envelope = {"kind": "gaussian",
                            "center": _num(env["center"], f"{where}.envelope.center"),
                            "width": _num(env["width"], f"{where}.envelope.width", positive=True)}
            else:
                raise ScenarioError(f"{where}.envelope: expected 'cw' or a gaussian table")
        terms.append(TermDecl(kind, names, rate, envelope))

    channels = []
    for k, c in enumerate(data.get("channels", [])):
        where = f"channels[{k}]"
        _keys(c, {"mode", "kind", "rate", "photons"}, where, required=("mode", "rate"))
        label = ref(c["mode"], where)
        kind = c.get("kind", "loss")
        if kind not in ("loss", "gain"):
            raise ScenarioError(f"{where}: kind must be 'loss' or 'gain'")
        photons = _num(c.get("photons", 1), f"{where}.photons", integer=True)
        if photons < 1:
            raise ScenarioError(f"{where}: photons must be >= 1")
        if kind == "gain" and photons != 1:
            raise ScenarioError(f"{where}: gain channels are single-photon")
        if kinds[label] is ModeKind.TWO_LEVEL and (kind == "gain" or photons != 1):
            raise KindMismatchError(f"{where}: two-level modes support single-photon loss only")
        channels.append(ChannelDecl(label, kind, _num(c["rate"], f"{where}.rate", nonneg=True), photons))

    init_table = data["initial"]
    if not isinstance(init_table, dict):
        raise ScenarioError("initial: expected a table keyed by mode label")
    for label in init_table:
        ref(label, "initial")
    initial = []
    for m in modes:
        where = f"initial.{m.label}"
        if m.label not in init_table:
            raise ScenarioError(f"{where}: missing initial state")
        d = init_table[m.label]
        _keys(d, {"kind", "n", "phase"}, where, required=("kind",))
        kind = d["kind"]
        if kind not in ("coherent", "fock", "ground", "excited"):
            raise ScenarioError(f"{where}: unknown state kind {kind!r}")
        if m.is_boson and kind in ("ground", "excited"):
            raise KindMismatchError(f"{where}: {kind} applies to two-level modes only")
        if not m.is_boson and kind in ("coherent", "fock"):
            raise KindMismatchError(f"{where}: {kind} applies to bosonic modes only")
        if kind == "coherent":
            initial.append(InitDecl("coherent", _num(d.get("n", 0.0), f"{where}.n", nonneg=True),
                                    _num(d.get("phase", 0.0), f"{where}.phase")))
        elif kind == "fock":
            if "phase" in d:
                raise UnknownKeyError(f"{where}: Fock states take no phase")
            n = _num(d.get("n", 0), f"{where}.n", integer=True, nonneg=True)
            if n > m.cutoff:
                raise ScenarioError(f"{where}: Fock({n}) exceeds cutoff {m.cutoff}")
            initial.append(InitDecl("fock", n))
        else:
            if set(d) - {"kind"}:
                raise UnknownKeyError(f"{where}: {kind} takes no parameters")
            initial.append(InitDecl(kind))

    time = data.get("time", {})
    _keys(time, {"t_end", "n_points"}, "time")
    t_end = _num(time.get("t_end", 3.0), "time.t_end", positive=True)
    n_points = _num(time.get("n_points", 400), "time.n_points", integer=True)
    if n_points < 2:
        raise ScenarioError("time.n_points must be >= 2")

    corr = data.get("correlators", {})
    _keys(corr, {"orders"}, "correlators")
    orders = corr.get("orders", [2])
    if not isinstance(orders, list) or not orders:
        raise ScenarioError("correlators.orders: need a non-empty list")
    orders = tuple(_num(m, "correlators.orders", integer=True) for m in orders)
    if any(m < 2 for m in orders) or len(set(orders)) != len(orders):
        raise ScenarioError("correlators.orders: distinct integers >= 2 required")

    eng = data.get("engine", {})
    _keys(eng, {f.name for f in dataclasses.fields(EngineOptions)}, "engine")
    kind = eng.get("kind", "exact")
    if kind not in ENGINES:
        raise ScenarioError(f"engine.kind must be one of {ENGINES}")
    defaults = EngineOptions()
    engine = EngineOptions(
        kind=kind,
        tol=_num(eng.get("tol", defaults.tol), "engine.tol", positive=True),
        max_leakage=_num(eng.get("max_leakage", defaults.max_leakage), "engine.max_leakage", positive=True),
        n_traj=_num(eng.get("n_traj", defaults.n_traj), "engine.n_traj", integer=True, positive=True),
        seed=_num(eng.get("seed", defaults.seed), "engine.seed", integer=True, nonneg=True),
        dt=_num(eng.get("dt", defaults.dt), "engine.dt", positive=True),
        workers=_num(eng.get("workers", defaults.workers), "engine.workers", integer=True, positive=True),
    )
    name = data["name"]
    if not isinstance(name, str) or not name:
        raise ScenarioError("name: expected a non-empty string")
    description = data.get("description", "")
    if not isinstance(description, str):
        raise ScenarioError("description: expected a string")
    scen = Scenario(name=name, modes=tuple(modes), terms=tuple(terms), channels=tuple(channels),
                    initial=tuple(initial), t_end=t_end, n_points=n_points, orders=orders,
                    engine=engine, gamma=gamma, description=description)
    return validated(scen)


def validated(scen: Scenario) -> Scenario:
    """Model-level checks: build the model and the initial state description."""
    try:
        scen.model()
    except KindMismatch as exc:
        raise KindMismatchError(str(exc)) from None
    except ModelError as exc:
        raise ScenarioError(str(exc)) from None
    if scen.engine.kind == "positive_p":
        if not all(m.is_boson for m in scen.modes):
            raise KindMismatchError("positive_p engine supports bosonic modes only")
        scen.coherent_amplitudes()
        bad = [t.kind for t in scen.terms if t.kind == "jc"]
        if bad or any(c.photons != 1 for c in scen.channels):
            raise KindMismatchError("positive_p engine supports linear/Kerr models with linear channels")
    for m, d in zip(scen.modes, scen.initial):
        if d.kind == "fock" and d.n > m.cutoff:
            raise ScenarioError(f"initial.{m.label}: Fock({d.n}) exceeds cutoff {m.cutoff}")
    return scen


def loads(text: str) -> Scenario:
    try:
        data = tomllib.loads(text)
    except tomllib.TOMLDecodeError as exc:
        raise ScenarioSyntaxError(f"syntax error: {exc}") from None
    return from_dict(data)


def resolve(path) -> Path:
    """A file path, or the name of a bundled scenario."""
    p = Path(path)
    if p.exists():
        return p
    if str(path) in BUNDLED:
        return bundled_path(str(path))
    raise FileNotFoundError(f"no scenario file {path!r}")


def bundled_path(name: str) -> Path:
    return Path(str(resources.files("u1corr") / "scenarios" / f"{name}.toml"))


def parse_scenario(path) -> Scenario:
    return loads(resolve(path).read_text(encoding="utf-8"))


# -- rendering ----------------------------------------------------------------

def to_dict(scen: Scenario) -> dict:
    out = {"name": scen.name}
    if scen.description:
        out["description"] = scen.description
    out["gamma"] = scen.gamma
    out["modes"] = [
        {"label": m.label, "kind": m.kind.value, **({"cutoff": m.cutoff} if m.is_boson else {})}
        for m in scen.modes
    ]
    terms = []
    for t in scen.terms:
        if t.kind == "hopping":
            terms.append({"kind": t.kind, "modes": list(t.modes), "rate": t.rate})
        elif t.kind == "jc":
            terms.append({"kind": t.kind, "boson": t.modes[0], "atom": t.modes[1], "rate": t.rate})
        else:
            d = {"kind": t.kind, "mode": t.modes[0], "rate": t.rate}
            if t.kind == "drive":
                d["envelope"] = "cw" if t.envelope["kind"] == "cw" else dict(t.envelope)
            terms.append(d)
    if terms:
        out["terms"] = terms
    if scen.channels:
        out["channels"] = [{"mode": c.mode, "kind": c.kind, "rate": c.rate, "photons": c.photons}
                           for c in scen.channels]
    init = {}
    for m, d in zip(scen.modes, scen.initial):
        if d.kind == "coherent":
            init[m.label] = {"kind": "coherent", "n": d.n, "phase": d.phase}
        elif d.kind == "fock":
            init[m.label] = {"kind": "fock", "n": int(d.n)}
        else:
            init[m.label] = {"kind": d.kind}
    out["initial"] = init
    out["time"] = {"t_end": scen.t_end, "n_points": scen.n_points}
    out["correlators"] = {"orders": list(scen.orders)}
    out["engine"] = dataclasses.asdict(scen.engine)
    return out


def render(scen: Scenario) -> str:
    return tomli_w.dumps(to_dict(scen))


# -- parameter paths (for sweeps) --------------------------------------------

def set_parameter(data: dict, path: str, value: float) -> dict:
    """Copy of a scenario dict with the numeric field at dotted ``path`` replaced.

    Path segments are table keys or list indices, e.g. ``terms.0.rate`` or
    ``initial.a1.n``.
    """
    out = copy.deepcopy(data)
    node = out
    parts = path.split(".")
    try:
        for part in parts[:-1]:
            node = node[int(part)] if isinstance(node, list) else node[part]
        last = parts[-1]
        key = int(last) if isinstance(node, list) else last
        current = node[key]
    except (KeyError, IndexError, ValueError, TypeError):
        raise ScenarioError(f"parameter path {path!r} does not address a scenario field") from None
    if isinstance(current, bool) or not isinstance(current, (int, float)):
        raise ScenarioError(f"parameter path {path!r} is not numeric")
    node[key] = type(current)(value) if isinstance(current, int) and float(value).is_integer() else float(value)
    return out
