"""Grid case files: parsing, validation and canonical serialization.

Two on-disk dialects are accepted (see ``docs/case_format.md``):

* a strict MATPOWER subset (``mpc.baseMVA``, ``mpc.bus``, ``mpc.branch``,
  ``mpc.gen``, ``mpc.gencost``) in engineering units (MW, MVAr, degrees);
* a JSON mirror.  The canonical JSON written by :func:`serialize_case`
  stores per-unit values so that ``parse_case(serialize_case(c)) == c``
  holds bit for bit.

Internally every quantity is per unit on ``base_mva`` and buses are
addressed by dense 0-based indices; the original ids are kept in
``Bus.id``.
"""

from __future__ import annotations

import hashlib
import json
import math
import re
from dataclasses import dataclass
from functools import cached_property
from pathlib import Path

import numpy as np
from scipy.sparse import coo_matrix
from scipy.sparse.csgraph import connected_components

from .errors import IslandError, MalformedFile, ValidationError

BUS_TYPES = ("slack", "pv", "pq")
_MATPOWER_BUS_TYPE = {1: "pq", 2: "pv", 3: "slack"}
_TYPE_TO_MATPOWER = {v: k for k, v in _MATPOWER_BUS_TYPE.items()}

CASE_JSON_FORMAT = "selmopf-case"
CASE_JSON_VERSION = 1


@dataclass(frozen=True)
class Bus:
    id: int
    type: str
    pd: float
    qd: float
    vmin: float
    vmax: float
    gs: float = 0.0
    bs: float = 0.0


@dataclass(frozen=True)
class Branch:
    """Pi-model branch; ``f``/``t`` are internal bus indices."""

    f: int
    t: int
    r: float
    x: float
    b_charge: float = 0.0
    tap: float = 1.0
    flow_limit: float = math.inf
    status: bool = True


@dataclass(frozen=True)
class Gen:
    bus: int
    pmin: float
    pmax: float
    qmin: float
    qmax: float
    cost: tuple = (0.0, 0.0, 0.0)


@dataclass(frozen=True)
class CaseData:
    base_mva: float
    buses: tuple
    branches: tuple
    gens: tuple
    name: str = ""

    @property
    def n_bus(self):
        return len(self.buses)

    @property
    def n_branch(self):
        return len(self.branches)

    @property
    def n_gen(self):
        return len(self.gens)

    @cached_property
    def slack(self):
        return next(i for i, b in enumerate(self.buses) if b.type == "slack")

    @cached_property
    def bus_ids(self):
        return tuple(b.id for b in self.buses)

    @cached_property
    def pd(self):
        return _ro(np.array([b.pd for b in self.buses], dtype=float))

    @cached_property
    def qd(self):
        return _ro(np.array([b.qd for b in self.buses], dtype=float))

    @cached_property
    def vmin(self):
        return _ro(np.array([b.vmin for b in self.buses], dtype=float))

    @cached_property
    def vmax(self):
        return _ro(np.array([b.vmax for b in self.buses], dtype=float))

    @cached_property
    def gen_bus(self):
        return _ro(np.array([g.bus for g in self.gens], dtype=np.intp))

    @cached_property
    def gen_limits(self):
        """``(pmin, pmax, qmin, qmax)`` arrays, per unit."""
        arr = np.array([[g.pmin, g.pmax, g.qmin, g.qmax] for g in self.gens], dtype=float)
        arr = arr.reshape(-1, 4)
        return tuple(_ro(arr[:, k].copy()) for k in range(4))

    @cached_property
    def cost_coeffs(self):
        """``(n_gen, 3)`` array of ``(a2, a1, a0)`` on MW."""
        return _ro(np.array([g.cost for g in self.gens], dtype=float).reshape(-1, 3))

    @cached_property
    def branch_ends(self):
        f = np.array([br.f for br in self.branches], dtype=np.intp)
        t = np.array([br.t for br in self.branches], dtype=np.intp)
        return _ro(f), _ro(t)

    @cached_property
    def flow_limit(self):
        return _ro(np.array([br.flow_limit for br in self.branches], dtype=float))

    @cached_property
    def gen_incidence(self):
        """Dense ``(n_bus, n_gen)`` 0/1 matrix mapping generators to buses."""
        cg = np.zeros((self.n_bus, self.n_gen))
        cg[self.gen_bus, np.arange(self.n_gen)] = 1.0
        return _ro(cg)

    def index_of(self, bus_id):
        try:
            return self.bus_ids.index(bus_id)
        except ValueError:
            raise KeyError(f"unknown bus id {bus_id}") from None

    def objective(self, pg):
        """Generation cost of per-unit dispatch ``pg`` (costs are on MW)."""
        pmw = np.asarray(pg, dtype=float) * self.base_mva
        c = self.cost_coeffs
        return float(np.sum(c[:, 0] * pmw * pmw + c[:, 1] * pmw + c[:, 2]))

    def with_demand(self, pd, qd):
        """Copy of the case with bus demands replaced (per unit)."""
        buses = tuple(
            Bus(b.id, b.type, float(p), float(q), b.vmin, b.vmax, b.gs, b.bs)
            for b, p, q in zip(self.buses, pd, qd)
        )
        return CaseData(self.base_mva, buses, self.branches, self.gens, self.name)


def _ro(a):
    a.setflags(write=False)
    return a


# --------------------------------------------------------------------------
# validation


def validate_case(case):
    """Raise on the first violated invariant; returns ``case`` unchanged."""
    n = case.n_bus
    if case.base_mva <= 0 or not math.isfinite(case.base_mva):
        raise ValidationError("base_mva > 0", f"got {case.base_mva}")
    if n == 0:
        raise ValidationError("at least one bus")
    n_slack = sum(1 for b in case.buses if b.type == "slack")
    if n_slack != 1:
        raise ValidationError("exactly one slack bus", f"found {n_slack}")
    if len(set(case.bus_ids)) != n:
        raise ValidationError("unique bus ids")
    for b in case.buses:
        if b.type not in BUS_TYPES:
            raise ValidationError("bus type in {slack, pv, pq}", f"bus {b.id}: {b.type!r}")
        if not b.vmin < b.vmax:
            raise ValidationError("vmin < vmax", f"bus {b.id}")
        if b.vmin <= 0:
            raise ValidationError("vmin > 0", f"bus {b.id}")
    for k, br in enumerate(case.branches):
        if not (0 <= br.f < n and 0 <= br.t < n):
            raise ValidationError("branch endpoint references an existing bus", f"branch {k}")
        if br.f == br.t:
            raise ValidationError("branch endpoints distinct", f"branch {k}")
        if not br.flow_limit > 0:
            raise ValidationError("flow_limit > 0", f"branch {k}")
        if not br.r >= 0:
            raise ValidationError("r >= 0", f"branch {k}")
        if br.x == 0:
            raise ValidationError("x != 0", f"branch {k}")
        if not br.tap > 0:
            raise ValidationError("tap > 0", f"branch {k}")
    if not case.gens:
        raise ValidationError("at least one generator")
    for i, g in enumerate(case.gens):
        if not 0 <= g.bus < n:
            raise ValidationError("generator bus references an existing bus", f"gen {i}")
        if not g.pmin <= g.pmax:
            raise ValidationError("pmin <= pmax", f"gen {i}")
        if not g.qmin <= g.qmax:
            raise ValidationError("qmin <= qmax", f"gen {i}")
        if len(g.cost) != 3:
            raise ValidationError("quadratic cost (a2, a1, a0)", f"gen {i}")
    values = [case.base_mva]
    for b in case.buses:
        values += [b.pd, b.qd, b.vmin, b.vmax, b.gs, b.bs]
    for br in case.branches:
        values += [br.r, br.x, br.b_charge, br.tap]
    for g in case.gens:
        values += [g.pmin, g.pmax, g.qmin, g.qmax, *g.cost]
    if not all(math.isfinite(v) for v in values):
        raise ValidationError("all quantities finite")
    _check_connected(case)
    return case


def _check_connected(case):
    on = [br for br in case.branches if br.status]
    n = case.n_bus
    if n == 1:
        return
    rows = [br.f for br in on]
    cols = [br.t for br in on]
    adj = coo_matrix((np.ones(len(on)), (rows, cols)), shape=(n, n))
    n_comp, _ = connected_components(adj, directed=False)
    if n_comp != 1:
        raise IslandError(f"network splits into {n_comp} islands")


# --------------------------------------------------------------------------
# parsing

_NUM = r"[-+]?(?:\d+\.?\d*|\.\d+)(?:[eE][-+]?\d+)?|[-+]?[Ii]nf"


def parse_case(text, name=""):
    """Parse MATPOWER-subset or JSON case text into a validated CaseData."""
    stripped = text.lstrip()
    if stripped.startswith("{"):
        case = _parse_json(stripped, name)
    else:
        case = _parse_matpower(text, name)
    validate_case(case)
    # status=off branches only participate in the connectivity check above
    if any(not br.status for br in case.branches):
        case = CaseData(case.base_mva, case.buses,
                        tuple(br for br in case.branches if br.status), case.gens, case.name)
        validate_case(case)
    return case


_DATA = Path(__file__).resolve().parent / "data"


def bundled_cases():
    return sorted(p.stem for p in _DATA.glob("*.case"))


def load_case(path):
    """Load a case file; a bare bundled name such as ``"case9"`` also works."""
    path = Path(path)
    if not path.exists() and path.stem == str(path) and (_DATA / f"{path}.case").exists():
        path = _DATA / f"{path}.case"
    try:
        text = path.read_text()
    except OSError as exc:
        raise MalformedFile(f"cannot read case file {path}: {exc}") from None
    return parse_case(text, name=path.stem)


def _strip_comments(text):
    return "\n".join(line.split("%", 1)[0] for line in text.splitlines())


def _matrix(text, key):
    m = re.search(r"mpc\." + key + r"\s*=\s*\[(.*?)\]\s*;?", text, re.S)
    if m is None:
        raise MalformedFile(f"missing section mpc.{key}")
    rows = []
    for raw in re.split(r"[;\n]", m.group(1)):
        toks = raw.replace(",", " ").split()
        if not toks:
            continue
        row = []
        for tok in toks:
            if not re.fullmatch(_NUM, tok):
                raise MalformedFile(f"unparseable token {tok!r} in mpc.{key}")
            row.append(float(tok))
        rows.append(row)
    return rows


def _need(row, ncol, key, i):
    if len(row) < ncol:
        raise MalformedFile(f"mpc.{key} row {i + 1}: expected >= {ncol} columns, got {len(row)}")


def _parse_matpower(text, name):
    text = _strip_comments(text)
    m = re.search(r"mpc\.baseMVA\s*=\s*(" + _NUM + r")\s*;?", text)
    if m is None:
        raise MalformedFile("missing scalar mpc.baseMVA")
    base = float(m.group(1))
    if not (base > 0 and math.isfinite(base)):
        raise ValidationError("base_mva > 0", f"got {base}")
    bus_rows = _matrix(text, "bus")
    gen_rows = _matrix(text, "gen")
    branch_rows = _matrix(text, "branch")
    cost_rows = _matrix(text, "gencost")

    buses = []
    for i, r in enumerate(bus_rows):
        _need(r, 13, "bus", i)
        btype = int(r[1])
        if btype not in _MATPOWER_BUS_TYPE:
            raise ValidationError("bus type in {slack, pv, pq}", f"MATPOWER type {btype}")
        buses.append(Bus(int(r[0]), _MATPOWER_BUS_TYPE[btype], r[2] / base, r[3] / base,
                         r[12], r[11], r[4] / base, r[5] / base))
    index = {}
    for k, b in enumerate(buses):
        if b.id in index:
            raise ValidationError("unique bus ids", f"bus {b.id}")
        index[b.id] = k

    def idx(bus_id, what):
        try:
            return index[int(bus_id)]
        except KeyError:
            raise ValidationError(f"{what} references an existing bus", f"bus {int(bus_id)}") from None

    branches = []
    for i, r in enumerate(branch_rows):
        _need(r, 11, "branch", i)
        if r[9] != 0:
            raise ValidationError("no phase-shifting transformers", f"branch {i}")
        tap = r[8] if r[8] != 0 else 1.0
        branches.append(Branch(idx(r[0], "branch endpoint"), idx(r[1], "branch endpoint"),
                               r[2], r[3], r[4], tap, r[5] / base, bool(r[10])))

    if len(cost_rows) < len(gen_rows):
        raise MalformedFile("mpc.gencost has fewer rows than mpc.gen")
    gens = []
    for i, (r, c) in enumerate(zip(gen_rows, cost_rows)):
        _need(r, 10, "gen", i)
        _need(c, 4, "gencost", i)
        if int(c[0]) != 2:
            raise ValidationError("quadratic cost (a2, a1, a0)", f"gen {i}: cost model {int(c[0])}")
        ncost = int(c[3])
        coeffs = c[4:4 + ncost]
        if ncost > 3 or len(coeffs) != ncost:
            raise ValidationError("quadratic cost (a2, a1, a0)", f"gen {i}: {ncost} coefficients")
        cost = tuple([0.0] * (3 - ncost) + list(coeffs))
        if r[7] <= 0:
            continue
        gens.append(Gen(idx(r[0], "generator bus"), r[9] / base, r[8] / base,
                        r[4] / base, r[3] / base, cost))
    return CaseData(base, tuple(buses), tuple(branches), tuple(gens), name)


def _parse_json(text, name):
    try:
        obj = json.loads(text)
    except json.JSONDecodeError as exc:
        raise MalformedFile(f"invalid JSON: {exc}") from None
    try:
        if obj.get("format", CASE_JSON_FORMAT) != CASE_JSON_FORMAT:
            raise MalformedFile(f"unknown format {obj.get('format')!r}")
        base = float(obj["base_mva"])
        if not (base > 0 and math.isfinite(base)):
            raise ValidationError("base_mva > 0", f"got {base}")
        scale = 1.0 if obj.get("per_unit", True) else 1.0 / base
        buses = tuple(
            Bus(int(b["id"]), str(b["type"]), float(b["pd"]) * scale, float(b["qd"]) * scale,
                float(b["vmin"]), float(b["vmax"]),
                float(b.get("gs", 0.0)) * scale, float(b.get("bs", 0.0)) * scale)
            for b in obj["buses"]
        )
        index = {b.id: k for k, b in enumerate(buses)}

        def idx(bus_id, what):
            try:
                return index[int(bus_id)]
            except KeyError:
                raise ValidationError(f"{what} references an existing bus", f"bus {bus_id}") from None

        branches = tuple(
            Branch(idx(br["from"], "branch endpoint"), idx(br["to"], "branch endpoint"),
                   float(br["r"]), float(br["x"]), float(br.get("b_charge", 0.0)),
                   float(br.get("tap", 1.0)), float(br["flow_limit"]) * scale,
                   bool(br.get("status", True)))
            for br in obj["branches"]
        )
        gens = tuple(
            Gen(idx(g["bus"], "generator bus"), float(g["pmin"]) * scale, float(g["pmax"]) * scale,
                float(g["qmin"]) * scale, float(g["qmax"]) * scale,
                tuple(float(c) for c in g["cost"]))
            for g in obj["gens"]
        )
    except (KeyError, TypeError, ValueError) as exc:
        raise MalformedFile(f"bad case JSON: {exc!r}") from None
    return CaseData(base, buses, branches, gens, str(obj.get("name", name)))


# --------------------------------------------------------------------------
# serialization


def case_to_dict(case):
    ids = case.bus_ids
    return {
        "format": CASE_JSON_FORMAT,
        "version": CASE_JSON_VERSION,
        "name": case.name,
        "per_unit": True,
        "base_mva": case.base_mva,
        "buses": [
            {"id": b.id, "type": b.type, "pd": b.pd, "qd": b.qd, "vmin": b.vmin,
             "vmax": b.vmax, "gs": b.gs, "bs": b.bs}
            for b in case.buses
        ],
        "branches": [
            {"from": ids[br.f], "to": ids[br.t], "r": br.r, "x": br.x, "b_charge": br.b_charge,
             "tap": br.tap, "flow_limit": br.flow_limit, "status": br.status}
            for br in case.branches
        ],
        "gens": [
            {"bus": ids[g.bus], "pmin": g.pmin, "pmax": g.pmax, "qmin": g.qmin,
             "qmax": g.qmax, "cost": list(g.cost)}
            for g in case.gens
        ],
    }


def serialize_case(case, fmt="json"):
    """Render a case as canonical JSON (lossless) or MATPOWER-subset text."""
    if fmt == "json":
        return json.dumps(case_to_dict(case), indent=1, sort_keys=True) + "\n"
    if fmt == "matpower":
        return _to_matpower(case)
    raise ValueError(f"unknown case format {fmt!r}")


def _g(x):
    return repr(float(x))


def _to_matpower(case):
    base = case.base_mva
    ids = case.bus_ids
    out = [f"function mpc = {case.name or 'case'}", "mpc.version = '2';",
           f"mpc.baseMVA = {_g(base)};", "", "mpc.bus = ["]
    for b in case.buses:
        out.append("\t" + "\t".join([
            str(b.id), str(_TYPE_TO_MATPOWER[b.type]), _g(b.pd * base), _g(b.qd * base),
            _g(b.gs * base), _g(b.bs * base), "1", "1", "0", "0", "1", _g(b.vmax), _g(b.vmin),
        ]) + ";")
    out += ["];", "", "mpc.gen = ["]
    for g in case.gens:
        out.append("\t" + "\t".join([
            str(ids[g.bus]), "0", "0", _g(g.qmax * base), _g(g.qmin * base), "1", _g(base), "1",
            _g(g.pmax * base), _g(g.pmin * base),
        ]) + ";")
    out += ["];", "", "mpc.branch = ["]
    for br in case.branches:
        out.append("\t" + "\t".join([
            str(ids[br.f]), str(ids[br.t]), _g(br.r), _g(br.x), _g(br.b_charge),
            _g(br.flow_limit * base), "0", "0", _g(br.tap), "0", "1" if br.status else "0",
            "-360", "360",
        ]) + ";")
    out += ["];", "", "mpc.gencost = ["]
    for g in case.gens:
        out.append("\t" + "\t".join(["2", "0", "0", "3", *(_g(c) for c in g.cost)]) + ";")
    out += ["];", ""]
    return "\n".join(out)


def case_hash(case):
    """SHA-256 of the canonical JSON rendering."""
    blob = json.dumps(case_to_dict(case), sort_keys=True, separators=(",", ":"))
    return hashlib.sha256(blob.encode()).hexdigest()
