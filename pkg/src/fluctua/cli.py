"""Scenario runner: ``fluctua run scenario.json -o outdir``.

A scenario is a JSON object with the keys ``materials``, ``stacks``,
``emitters``, ``sweeps``, ``observables`` and ``numerics``. Every physical
quantity is written as ``{"value": ..., "unit": "..."}`` in SI units; the
unit string is checked, never inferred.

Exit status: 0 success, 1 a computation failed, 2 invalid scenario,
3 instability hit without ``--allow-unstable``.
"""

import argparse
import csv
from dataclasses import dataclass, field
import io
import json
import logging
import os
import platform
import sys
import time

import numpy as np
import scipy

from . import __version__
from .constants import TABLE, c
from .layered import LayerStack
from .material import MaterialResponse, PermittivityChannel
from .numerics import IntegrationError, QuadratureSpec, parallel_map, thread_count
from . import observables as obs

log = logging.getLogger("fluctua")

EXIT_OK, EXIT_FAILED, EXIT_INVALID, EXIT_UNSTABLE = 0, 1, 2, 3

TOP_KEYS = ("materials", "stacks", "emitters", "sweeps", "observables", "numerics")

# quantity name -> accepted unit strings
UNITS = {
    "frequency": ("rad/s",),
    "length": ("m", "c/omega0"),
    "speed": ("m/s",),
    "dipole": ("C*m",),
    "conductivity": ("S/m",),
    "dimensionless": ("1",),
}

# observable kind -> (required params with quantity type, optional params, sweep axes)
OBSERVABLES = {
    "decay_rate": ({"stack": "ref:stacks", "emitter": "ref:emitters"}, {}, ("z", "omega0")),
    "purcell_factor": ({"stack": "ref:stacks", "emitter": "ref:emitters"}, {}, ("z", "omega0")),
    "lamb_shift": ({"stack": "ref:stacks", "emitter": "ref:emitters", "omega_max": "frequency"},
                   {}, ("z", "omega0")),
    "casimir_polder_force": ({"stack": "ref:stacks", "emitter": "ref:emitters",
                              "omega_max": "frequency"}, {"h": "length"}, ("z",)),
    "casimir_pressure": ({"lower": "ref:stacks", "upper": "ref:stacks", "d": "length"},
                         {"route": "str", "omega_max": "frequency"}, ("d",)),
    "quantum_friction_force": ({"rest": "ref:materials", "moving": "ref:materials",
                                "d": "length", "v": "speed"}, {}, ("v", "d")),
    "hall_lateral_force": ({"rest": "ref:materials", "biased": "ref:materials",
                            "d": "length", "v_d": "speed"},
                           {"sigma_xy": "conductivity"}, ("v_d", "sigma_xy", "d")),
}

AXIS_QUANTITY = {"z": "length", "omega0": "frequency", "d": "length", "v": "speed",
                 "v_d": "speed", "sigma_xy": "conductivity"}

CHANNEL_FIELDS = {"kind": "str", "strength": "dimensionless", "resonance": "frequency",
                  "damping": "frequency", "plasma": "frequency", "sigma": "conductivity"}
MATERIAL_FIELDS = {"background": "dimensionless", "channels": "list", "velocity": "speed",
                   "drift_bias": "speed"}
NUMERIC_FIELDS = ("rel_tol", "abs_tol", "max_subdivisions", "tail")


class ScenarioError(ValueError):
    """Aggregated validation problems, each tagged with its JSON location."""

    def __init__(self, problems):
        self.problems = list(problems)
        super().__init__("\n".join(self.problems))


@dataclass
class Scenario:
    materials: dict
    stacks: dict
    emitters: dict
    sweeps: list
    observables: list
    numerics: dict = field(default_factory=dict)

    def to_dict(self):
        """Normalised JSON-ready form; parsing it again gives an equal Scenario."""
        return {"materials": self.materials, "stacks": self.stacks, "emitters": self.emitters,
                "sweeps": self.sweeps, "observables": self.observables,
                "numerics": self.numerics}


# --------------------------------------------------------------------------
# parsing


class _Checker:
    def __init__(self):
        self.problems = []

    def fail(self, where, msg):
        self.problems.append(f"{where}: {msg}")

    def quantity(self, where, raw, kind):
        if kind == "str":
            if not isinstance(raw, str):
                self.fail(where, "expected a string")
            return raw
        if kind == "list":
            return raw
        if not isinstance(raw, dict) or set(raw) != {"value", "unit"}:
            self.fail(where, 'expected {"value": ..., "unit": ...}')
            return None
        unit = raw["unit"]
        if unit not in UNITS[kind]:
            self.fail(where, f"unit {unit!r} not allowed for a {kind}; use one of {UNITS[kind]}")
            return None
        val = raw["value"]
        flat = np.ravel(np.asarray(val, dtype=object))
        if flat.size == 0 or not all(isinstance(x, (int, float)) and not isinstance(x, bool)
                                     and np.isfinite(x) for x in flat):
            self.fail(where, "value must be finite number(s)")
            return None
        return {"value": val, "unit": unit}

    def keys(self, where, obj, allowed, required=()):
        if not isinstance(obj, dict):
            self.fail(where, "expected an object")
            return False
        for k in obj:
            if k not in allowed:
                self.fail(f"{where}.{k}", "unknown key")
        for k in required:
            if k not in obj:
                self.fail(where, f"missing required key {k!r}")
        return True


def parse_scenario_dict(raw):
    """Validate a scenario object; raise ScenarioError listing every problem."""
    ck = _Checker()
    if not ck.keys("scenario", raw, TOP_KEYS, ("observables",)):
        raise ScenarioError(ck.problems)

    materials = {}
    for name, m in (raw.get("materials") or {}).items():
        where = f"materials.{name}"
        if not ck.keys(where, m, MATERIAL_FIELDS):
            continue
        out = {}
        for key in ("background", "velocity", "drift_bias"):
            if key in m:
                out[key] = ck.quantity(f"{where}.{key}", m[key], MATERIAL_FIELDS[key])
        chans = []
        for i, ch in enumerate(m.get("channels", [])):
            cw = f"{where}.channels[{i}]"
            if not ck.keys(cw, ch, CHANNEL_FIELDS, ("kind",)):
                continue
            cout = {}
            for key, val in ch.items():
                cout[key] = ck.quantity(f"{cw}.{key}", val, CHANNEL_FIELDS[key])
            if ch.get("kind") not in ("lorentz", "drude", "conductivity"):
                ck.fail(f"{cw}.kind", f"unknown channel kind {ch.get('kind')!r}")
            chans.append(cout)
        out["channels"] = chans
        materials[name] = out

    stacks = {}
    for name, s in (raw.get("stacks") or {}).items():
        where = f"stacks.{name}"
        if not ck.keys(where, s, ("layers",), ("layers",)):
            continue
        layers = []
        for i, layer in enumerate(s["layers"]):
            lw = f"{where}.layers[{i}]"
            if not ck.keys(lw, layer, ("material", "thickness"), ("material", "thickness")):
                continue
            ref = layer["material"]
            if ref != "vacuum" and ref not in (raw.get("materials") or {}):
                ck.fail(f"{lw}.material", f"undefined material {ref!r}")
            th = layer["thickness"]
            if th != "inf":
                th = ck.quantity(f"{lw}.thickness", th, "length")
                if th is not None and th["unit"] != "m":
                    ck.fail(f"{lw}.thickness", "layer thickness must be in m")
            layers.append({"material": ref, "thickness": th})
        stacks[name] = {"layers": layers}

    emitters = {}
    for name, e in (raw.get("emitters") or {}).items():
        where = f"emitters.{name}"
        if not ck.keys(where, e, ("position", "omega0", "dipole"), ("position", "omega0", "dipole")):
            continue
        out = {"position": ck.quantity(f"{where}.position", e["position"], "length"),
               "omega0": ck.quantity(f"{where}.omega0", e["omega0"], "frequency"),
               "dipole": ck.quantity(f"{where}.dipole", e["dipole"], "dipole")}
        if out["position"] and out["position"]["unit"] != "m":
            ck.fail(f"{where}.position", "emitter position must be in m")
        emitters[name] = out

    sweeps = []
    raw_sweeps = raw.get("sweeps") or []
    if not isinstance(raw_sweeps, list):
        ck.fail("sweeps", "expected a list")
        raw_sweeps = []
    if len(raw_sweeps) > 1:
        ck.fail("sweeps", "at most one sweep axis per run")
    for i, sw in enumerate(raw_sweeps):
        where = f"sweeps[{i}]"
        if not ck.keys(where, sw, ("axis", "start", "stop", "points", "spacing", "emitter"),
                       ("axis", "start", "stop", "points")):
            continue
        axis = sw["axis"]
        if axis not in AXIS_QUANTITY:
            ck.fail(f"{where}.axis", f"unknown axis {axis!r}")
            continue
        start = ck.quantity(f"{where}.start", sw["start"], AXIS_QUANTITY[axis])
        stop = ck.quantity(f"{where}.stop", sw["stop"], AXIS_QUANTITY[axis])
        n = sw["points"]
        if not isinstance(n, int) or n < 1:
            ck.fail(f"{where}.points", "points must be a positive integer")
        spacing = sw.get("spacing", "linear")
        if spacing not in ("linear", "log"):
            ck.fail(f"{where}.spacing", "spacing must be 'linear' or 'log'")
        if start and stop:
            if start["unit"] != stop["unit"]:
                ck.fail(where, "start and stop must share a unit")
            if spacing == "log" and not (start["value"] > 0 and stop["value"] > 0):
                ck.fail(where, "log spacing needs positive bounds")
            if "c/omega0" in (start["unit"], stop["unit"]) and sw.get("emitter") not in emitters:
                ck.fail(f"{where}.emitter", "unit c/omega0 needs a defined 'emitter'")
        entry = {"axis": axis, "start": start, "stop": stop, "points": n, "spacing": spacing}
        if "emitter" in sw:
            entry["emitter"] = sw["emitter"]
        sweeps.append(entry)

    observables = []
    if not isinstance(raw.get("observables"), list) or not raw.get("observables"):
        ck.fail("observables", "expected a nonempty list")
    for i, o in enumerate(raw.get("observables") or []):
        where = f"observables[{i}]"
        if not isinstance(o, dict) or o.get("kind") not in OBSERVABLES:
            ck.fail(f"{where}.kind", f"unknown observable {o.get('kind') if isinstance(o, dict) else o!r}")
            continue
        req, opt, axes = OBSERVABLES[o["kind"]]
        ck.keys(where, o, set(req) | set(opt) | {"kind"})
        out = {"kind": o["kind"]}
        sweep_axis = sweeps[0]["axis"] if sweeps else None
        for key, kind in list(req.items()) + list(opt.items()):
            if key not in o:
                if key in req and key != sweep_axis:
                    ck.fail(where, f"missing required key {key!r}")
                continue
            if kind.startswith("ref:"):
                table = kind[4:]
                pool = {"stacks": stacks, "emitters": emitters,
                        "materials": dict(materials, vacuum=None)}[table]
                if o[key] not in pool:
                    ck.fail(f"{where}.{key}", f"undefined {table[:-1]} {o[key]!r}")
                out[key] = o[key]
            else:
                out[key] = ck.quantity(f"{where}.{key}", o[key], kind)
        if sweep_axis and sweep_axis not in axes:
            ck.fail(where, f"{o['kind']} cannot be swept over {sweep_axis!r}")
        observables.append(out)

    numerics = {}
    raw_num = raw.get("numerics") or {}
    if ck.keys("numerics", raw_num, NUMERIC_FIELDS):
        for key, val in raw_num.items():
            numerics[key] = val
        try:
            _spec_from(numerics)
        except (TypeError, ValueError) as exc:
            ck.fail("numerics", str(exc))

    if ck.problems:
        raise ScenarioError(ck.problems)
    return Scenario(materials, stacks, emitters, sweeps, observables, numerics)


def parse_scenario(path):
    """Read and validate a scenario file."""
    try:
        with open(path) as fh:
            raw = json.load(fh)
    except json.JSONDecodeError as exc:
        raise ScenarioError([f"{path}: invalid JSON ({exc})"]) from None
    return parse_scenario_dict(raw)


def serialize_scenario(s):
    return json.dumps(s.to_dict(), indent=2, sort_keys=True)


# --------------------------------------------------------------------------
# building objects


def _spec_from(numerics, tol=None):
    kw = {k: numerics[k] for k in NUMERIC_FIELDS if k in numerics}
    if tol is not None:
        kw["rel_tol"] = tol
    return QuadratureSpec(**kw) if kw else None


def _val(q):
    return None if q is None else q["value"]


def _build_material(s, name):
    if name == "vacuum":
        return MaterialResponse((), 1.0, name="vacuum")
    m = s.materials[name]
    chans = []
    for ch in m.get("channels", []):
        kw = {"kind": ch["kind"]}
        for key in ("strength", "resonance", "damping", "plasma", "sigma"):
            if key in ch:
                kw[key] = _val(ch[key])
        if "sigma" in kw and np.ndim(kw["sigma"]) == 0:
            kw["sigma"] = ((kw["sigma"], 0.0), (0.0, kw["sigma"]))
        chans.append(PermittivityChannel(**kw))
    return MaterialResponse(tuple(chans), float(_val(m.get("background")) or 1.0),
                            float(_val(m.get("velocity")) or 0.0),
                            float(_val(m.get("drift_bias")) or 0.0), name)


def _build_stack(s, name):
    layers = []
    for layer in s.stacks[name]["layers"]:
        th = np.inf if layer["thickness"] == "inf" else float(layer["thickness"]["value"])
        layers.append((_build_material(s, layer["material"]), th))
    return LayerStack(tuple(layers))


def _build_emitter(s, name):
    e = s.emitters[name]
    return obs.Emitter(tuple(e["position"]["value"]), float(e["omega0"]["value"]),
                       tuple(e["dipole"]["value"]))


def sweep_axis(s):
    """(axis name, SI values) of the scenario's sweep, or (None, [None])."""
    if not s.sweeps:
        return None, [None]
    sw = s.sweeps[0]
    a, b = sw["start"]["value"], sw["stop"]["value"]
    if sw["start"]["unit"] == "c/omega0":
        scale = c / float(s.emitters[sw["emitter"]]["omega0"]["value"])
        a, b = a * scale, b * scale
    n = sw["points"]
    vals = np.geomspace(a, b, n) if sw["spacing"] == "log" else np.linspace(a, b, n)
    return sw["axis"], [float(v) for v in vals]


def _param(o, key, axis, x):
    if key == axis:
        return x
    q = o.get(key)
    return None if q is None else float(q["value"])


def _evaluate(s, o, axis, x, spec, allow_unstable):
    kind = o["kind"]
    kw = {"spec": spec} if spec is not None else {}
    if kind in ("decay_rate", "purcell_factor", "lamb_shift", "casimir_polder_force"):
        stack = _build_stack(s, o["stack"])
        e = _build_emitter(s, o["emitter"])
        if axis == "z":
            e = obs.Emitter((e.position[0], e.position[1], x), e.omega0, e.dipole)
        elif axis == "omega0":
            e = obs.Emitter(e.position, x, e.dipole)
        if kind == "decay_rate":
            return obs.decay_rate(stack, e, allow_unstable, **kw)
        if kind == "purcell_factor":
            return obs.purcell_factor(stack, e, allow_unstable, **kw)
        if kind == "lamb_shift":
            return obs.lamb_shift(stack, e, _param(o, "omega_max", axis, x), **kw)
        return obs.casimir_polder_force(stack, e, _param(o, "omega_max", axis, x),
                                        h=_param(o, "h", axis, x), **kw)
    if kind == "casimir_pressure":
        pair = (_build_stack(s, o["lower"]), _build_stack(s, o["upper"]))
        route = o.get("route", "imaginary")
        return obs.casimir_pressure(pair, _param(o, "d", axis, x), route=route,
                                    omega_max=_param(o, "omega_max", axis, x), **kw)
    if kind == "quantum_friction_force":
        return obs.quantum_friction_force(_build_material(s, o["rest"]),
                                          _build_material(s, o["moving"]),
                                          _param(o, "d", axis, x), _param(o, "v", axis, x),
                                          allow_unstable=allow_unstable, **kw)
    if kind == "hall_lateral_force":
        return obs.hall_lateral_force(_build_material(s, o["rest"]),
                                      _build_material(s, o["biased"]),
                                      _param(o, "d", axis, x), _param(o, "v_d", axis, x),
                                      _param(o, "sigma_xy", axis, x),
                                      allow_unstable=allow_unstable, **kw)
    raise ValueError(f"unknown observable {kind!r}")


# --------------------------------------------------------------------------
# running


def _fmt(x):
    return format(float(x), ".17g")


def _point(args):
    s, o, axis, x, spec, allow_unstable = args
    try:
        return "ok", _evaluate(s, o, axis, x, spec, allow_unstable)
    except obs.InstabilityError as exc:
        return "unstable", exc
    except (IntegrationError, ValueError, NotImplementedError, ArithmeticError) as exc:
        return "failed", exc


def run(s, out_dir, allow_unstable=False, tol=None):
    """Evaluate every observable over the sweep and write CSV files plus a manifest."""
    os.makedirs(out_dir, exist_ok=True)
    spec = _spec_from(s.numerics, tol)
    axis, xs = sweep_axis(s)
    manifest = {
        "scenario": s.to_dict(),
        "effective": {"sweep_axis": axis, "sweep_values": xs, "allow_unstable": allow_unstable,
                      "rel_tol_override": tol,
                      "quadrature": None if spec is None else spec.__dict__,
                      "threads": thread_count()},
        "constants": TABLE,
        "versions": {"fluctua": __version__, "python": platform.python_version(),
                     "numpy": np.__version__, "scipy": scipy.__version__},
        "observables": [],
    }
    status = EXIT_OK
    for i, o in enumerate(s.observables):
        t0 = time.perf_counter()
        results = parallel_map(_point, [(s, o, axis, x, spec, allow_unstable) for x in xs])
        rows, entry = [], {"kind": o["kind"], "file": f"{i:02d}_{o['kind']}.csv",
                           "status": "ok", "errors": []}
        for x, (state, res) in zip(xs, results):
            if state == "unstable":
                entry["status"] = "unstable"
                entry["stopped_at"] = x
                entry["threshold_bracket"] = None if res.bracket is None else list(res.bracket)
                entry["errors"].append(str(res))
                status = max(status, EXIT_UNSTABLE)
                break
            if state == "failed":
                entry["status"] = "failed"
                entry["errors"].append(f"{axis}={x}: {res}")
                status = max(status, EXIT_FAILED) if status != EXIT_UNSTABLE else status
                continue
            rows.append((x, res))
        entry["seconds"] = round(time.perf_counter() - t0, 3)
        _write_csv(os.path.join(out_dir, entry["file"]), axis, rows)
        manifest["observables"].append(entry)
    manifest["exit_status"] = status
    with open(os.path.join(out_dir, "manifest.json"), "w") as fh:
        json.dump(manifest, fh, indent=2, sort_keys=True, default=_jsonable)
    return status


def _jsonable(x):
    if isinstance(x, np.ndarray):
        return x.tolist()
    if isinstance(x, (np.floating, np.integer)):
        return x.item()
    if isinstance(x, complex):
        return [x.real, x.imag]
    return str(x)


def _write_csv(path, axis, rows):
    buf = io.StringIO()
    w = csv.writer(buf, lineterminator="\n")
    vector = any(np.ndim(r.value) for _, r in rows)
    cols = ["value_x", "value_y", "value_z"] if vector else ["value"]
    w.writerow([axis or "point"] + cols + ["abs_error", "stable"])
    for j, (x, r) in enumerate(rows):
        vals = np.ravel(np.real(r.value)) if vector else [np.real(r.value)]
        w.writerow([_fmt(j if x is None else x)] + [_fmt(v) for v in vals]
                   + [_fmt(r.abs_error), str(bool(r.stable)).lower()])
    with open(path, "w", newline="") as fh:
        fh.write(buf.getvalue())


# --------------------------------------------------------------------------
# entry point


def build_parser():
    p = argparse.ArgumentParser(prog="fluctua", description=__doc__.splitlines()[0])
    sub = p.add_subparsers(dest="command", required=True)
    r = sub.add_parser("run", help="run a scenario file")
    r.add_argument("scenario", help="path to the scenario JSON")
    r.add_argument("-o", "--out", default=None, help="output directory")
    r.add_argument("--allow-unstable", action="store_true",
                   help="continue past detected instabilities (results flagged)")
    r.add_argument("--check", action="store_true", help="validate the scenario only")
    r.add_argument("--tol", type=float, default=None, help="override the relative tolerance")
    r.add_argument("-v", "--verbose", action="store_true")
    return p


def main(argv=None):
    args = build_parser().parse_args(argv)
    logging.basicConfig(level=logging.INFO if args.verbose else logging.WARNING,
                        format="%(levelname)s %(message)s")
    try:
        scenario = parse_scenario(args.scenario)
    except ScenarioError as exc:
        for line in exc.problems:
            print(f"error: {line}", file=sys.stderr)
        return EXIT_INVALID
    except OSError as exc:
        print(f"error: {exc}", file=sys.stderr)
        return EXIT_INVALID
    if args.tol is not None and not args.tol > 0:
        print("error: --tol must be > 0", file=sys.stderr)
        return EXIT_INVALID
    if args.check:
        print("scenario OK")
        return EXIT_OK
    if args.out is None:
        print("error: -o/--out is required unless --check is given", file=sys.stderr)
        return EXIT_INVALID
    status = run(scenario, args.out, args.allow_unstable, args.tol)
    log.info("finished with status %d", status)
    return status


if __name__ == "__main__":
    sys.exit(main())
