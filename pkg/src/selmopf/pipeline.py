"""Three-stage OPF regression with reinforcement chains and active-set classing.

Stage 1 maps demand ``(PD, QD)`` to branch flows ``(PF, QF)``; stage 2 maps
flows to the bus state ``(V, THETA)``; stage 3 maps
``[PD, QD, PF, QF, V, THETA]`` to ``(PG, QG, F)``.  Each stage is a chain of
SELMs: model ``k > 0`` sees ``[stage input, prediction of model k-1]`` and
the last model's output is the stage output.  Training rows are clustered
by their active constraints (k-medoids under Hamming distance) and each
class gets its own stage chains; a classifier routes new demand rows.
"""

from __future__ import annotations

import logging
import warnings
from dataclasses import asdict, dataclass, field, replace

import numpy as np

from .acopf import FAMILIES, ActiveSetSignature, family_mask
from .archive import read_archive, write_archive
from .errors import DegenerateTarget, DimensionMismatch, InsufficientData, MalformedFile
from .grid import StateVector
from .scenario import TARGET_GROUPS, group_columns, input_labels, target_labels
from .selm import (SelmConfig, classify, model_from_parts, model_parts, selm_predict,
                   train_classifier, train_selm)

log = logging.getLogger(__name__)

STAGES = ("stage1", "stage2", "stage3")
CLASS_FAMILIES = {
    "voltage_magnitude": ("V_max", "V_min"),
    "all_inequalities": FAMILIES,
}
ABSOLUTE_FLOOR = 10
REGRESSOR_FORMAT = "selmopf-regressor"
REGRESSOR_VERSION = 1
# keys mixed into the base seed so that every SELM gets its own stream
_STAGE_KEY = {"stage1": 1, "stage2": 2, "stage3": 3, "direct": 4, "classifier": 5}
_GLOBAL_POOL_KEY = 10_000


def derive_seed(base, *keys):
    ss = np.random.SeedSequence([int(base) % 2**63, *[int(k) for k in keys]])
    return int(ss.generate_state(1, np.uint64)[0])


@dataclass(frozen=True)
class PipelineConfig:
    n_classes: int = 2
    reinforcement_layers: int = 2
    constraint_family: str = "voltage_magnitude"
    selm: SelmConfig = SelmConfig()
    stage_overrides: dict = field(default_factory=dict)  # stage -> SelmConfig fields
    classifier_overrides: dict = field(default_factory=dict)
    cascade_training: bool = False
    mode: str = "staged"  # or "direct": one chain from (PD, QD) to every target
    min_class_rows: int = 50

    def __post_init__(self):
        if self.n_classes < 1:
            raise ValueError("n_classes must be >= 1")
        if self.reinforcement_layers < 0:
            raise ValueError("reinforcement_layers must be >= 0")
        if self.constraint_family not in CLASS_FAMILIES:
            raise ValueError(f"constraint_family must be one of {sorted(CLASS_FAMILIES)}")
        if self.mode not in ("staged", "direct"):
            raise ValueError("mode must be 'staged' or 'direct'")
        if isinstance(self.selm, dict):
            object.__setattr__(self, "selm", SelmConfig.from_dict(self.selm))
        for name in self.stage_overrides:
            if name not in STAGES + ("direct",):
                raise ValueError(f"unknown stage {name!r} in stage_overrides")
        # fail early on bad override keys
        for over in list(self.stage_overrides.values()) + [self.classifier_overrides]:
            replace(self.selm, **over)

    def selm_for(self, stage):
        over = self.classifier_overrides if stage == "classifier" else self.stage_overrides.get(stage, {})
        return replace(self.selm, **over)

    def class_floor(self):
        return max(self.min_class_rows, (5 * self.selm.hidden_neurons) // 100)

    def to_dict(self):
        d = asdict(self)
        d["selm"] = self.selm.to_dict()
        return d

    @classmethod
    def from_dict(cls, d):
        unknown = set(d) - set(cls.__dataclass_fields__)
        if unknown:
            raise ValueError(f"unknown pipeline config keys: {sorted(unknown)}")
        d = dict(d)
        if "selm" in d:
            d["selm"] = SelmConfig.from_dict(d["selm"])
        return cls(**d)


@dataclass(frozen=True)
class StageLayout:
    """Target column slices of each stage for one case."""

    n_bus: int
    n_branch: int
    n_gen: int
    slack: int

    @classmethod
    def from_case(cls, case):
        return cls(case.n_bus, case.n_branch, case.n_gen, case.slack)

    @property
    def flows(self):
        return slice(0, 2 * self.n_branch)

    @property
    def state(self):
        return slice(2 * self.n_branch, 2 * self.n_branch + 2 * self.n_bus)

    @property
    def control(self):
        return slice(2 * self.n_branch + 2 * self.n_bus, self.n_targets)

    @property
    def n_inputs(self):
        return 2 * self.n_bus

    @property
    def n_targets(self):
        return 2 * self.n_branch + 2 * self.n_bus + 2 * self.n_gen + 1

    @property
    def theta_slack_col(self):
        return 2 * self.n_branch + self.n_bus + self.slack

    def dims(self):
        """``(d_in, d_out)`` of each stage."""
        nb, nl, ng = self.n_bus, self.n_branch, self.n_gen
        return {
            "stage1": (2 * nb, 2 * nl),
            "stage2": (2 * nl, 2 * nb),
            "stage3": (2 * nb + 2 * nl + 2 * nb, 2 * ng + 1),
            "direct": (2 * nb, self.n_targets),
        }


@dataclass
class OpfPrediction:
    state: StateVector
    pg: np.ndarray
    qg: np.ndarray
    pf: np.ndarray
    qf: np.ndarray
    objective: float
    label: int


@dataclass
class OpfRegressor:
    config: PipelineConfig
    layout: StageLayout
    column_spec: dict
    pools: dict  # pool name -> {stage name -> [SelmModel, ...]}
    class_pool: list  # pool name used by each class
    medoids: list  # ActiveSetSignature per class, restricted to the classing family
    classifier: object = None
    group_abs_mean: dict = field(default_factory=dict)  # training mean |value| per group
    notes: list = field(default_factory=list)

    @property
    def n_classes(self):
        return len(self.class_pool)

    def models_for(self, label):
        return self.pools[self.class_pool[int(label)]]


# --------------------------------------------------------------------------
# clustering


def _as_matrix(signatures):
    if isinstance(signatures, np.ndarray):
        return np.asarray(signatures, dtype=bool)
    return np.array([s.active for s in signatures], dtype=bool)


def cluster_by_active_set(signatures, m, mask=None, max_iter=100):
    """k-medoids over Hamming distance; returns ``(labels, medoids, notes)``.

    Medoids start at the ``m`` most frequent distinct signatures (ties by
    first occurrence); samples go to the nearest medoid, ties to the lowest
    index.  Fewer distinct signatures than ``m`` reduces ``m``.
    """
    s = _as_matrix(signatures)
    if s.ndim != 2 or s.shape[0] == 0:
        raise ValueError("need a nonempty list of signatures")
    if m < 1:
        raise ValueError("m must be >= 1")
    if mask is not None:
        s = s[:, np.asarray(mask, dtype=bool)]
    uniq, first, inverse, counts = np.unique(s, axis=0, return_index=True,
                                             return_inverse=True, return_counts=True)
    inverse = inverse.reshape(-1)
    order = sorted(range(len(uniq)), key=lambda u: (-counts[u], first[u]))
    notes = []
    m_eff = min(m, len(uniq))
    if m_eff < m:
        msg = f"only {len(uniq)} distinct signature(s); using {m_eff} class(es) instead of {m}"
        warnings.warn(msg, stacklevel=2)
        notes.append(msg)
    dist = (uniq[:, None, :] != uniq[None, :, :]).sum(axis=2)  # unique x unique
    medoids = list(order[:m_eff])
    for _ in range(max_iter):
        lab_u = np.argmin(dist[:, medoids], axis=1)
        new = []
        for c, med in enumerate(medoids):
            members = np.flatnonzero(lab_u == c)
            cost = dist[np.ix_(members, members)] @ counts[members]
            best = cost.min()
            if cost[members == med][0] == best:
                new.append(med)
            else:
                cands = members[cost == best]
                new.append(min(cands, key=lambda u: (-counts[u], first[u])))
        if new == medoids:
            break
        medoids = new
    lab_u = np.argmin(dist[:, medoids], axis=1)
    labels = lab_u[inverse].astype(np.intp)
    return labels, [ActiveSetSignature(uniq[u]) for u in medoids], notes


# --------------------------------------------------------------------------
# stage chains


def train_stage(x, t, cfg, reinforcement_layers=0):
    """Chain of ``1 + reinforcement_layers`` SELMs for one stage."""
    x = np.asarray(x, dtype=float)
    if x.shape[0] == 0:
        raise InsufficientData("empty training slice")
    chain = []
    feats = x
    for k in range(reinforcement_layers + 1):
        ck = replace(cfg, weight_seed=derive_seed(cfg.weight_seed, k))
        model = train_selm(feats, t, ck)
        chain.append(model)
        if k < reinforcement_layers:
            feats = np.hstack([x, selm_predict(model, feats)])
    return chain


def predict_stage(chain, x):
    feats = x = np.asarray(x, dtype=float)
    for k, model in enumerate(chain):
        y = selm_predict(model, feats)
        if k < len(chain) - 1:
            feats = np.hstack([x, y])
    return y


def _train_pool(x, t, layout, cfg, pool_key):
    def seeded(stage):
        c = cfg.selm_for(stage)
        return replace(c, weight_seed=derive_seed(c.weight_seed, pool_key, _STAGE_KEY[stage]))

    rl = cfg.reinforcement_layers
    if cfg.mode == "direct":
        return {"direct": train_stage(x, t, seeded("direct"), rl)}
    flows = t[:, layout.flows]
    state = t[:, layout.state]
    pool = {"stage1": train_stage(x, flows, seeded("stage1"), rl)}
    if cfg.cascade_training:
        flows = predict_stage(pool["stage1"], x)
    pool["stage2"] = train_stage(flows, state, seeded("stage2"), rl)
    if cfg.cascade_training:
        state = predict_stage(pool["stage2"], flows)
        state[:, layout.theta_slack_col - layout.state.start] = 0.0
    pool["stage3"] = train_stage(np.hstack([x, flows, state]), t[:, layout.control],
                                 seeded("stage3"), rl)
    return pool


def _predict_pool(pool, x, layout):
    if "direct" in pool:
        y = predict_stage(pool["direct"], x)
        y[:, layout.theta_slack_col] = 0.0
        return y
    flows = predict_stage(pool["stage1"], x)
    state = predict_stage(pool["stage2"], flows)
    state[:, layout.theta_slack_col - layout.state.start] = 0.0
    control = predict_stage(pool["stage3"], np.hstack([x, flows, state]))
    return np.hstack([flows, state, control])


# --------------------------------------------------------------------------
# whole pipeline


def _check_columns(ds, case):
    if list(ds.input_labels) != input_labels(case) or list(ds.target_labels) != target_labels(case):
        raise DimensionMismatch("dataset columns do not match the case")


def group_abs_means(targets, labels):
    cols = group_columns(labels)
    return {g: float(np.mean(np.abs(targets[:, cols[g]]))) for g in TARGET_GROUPS if g in cols}


def train_pipeline(train, case, cfg=None):
    """Cluster, train the classifier and the per-class stage chains."""
    cfg = cfg or PipelineConfig()
    _check_columns(train, case)
    x = np.asarray(train.inputs, dtype=float)
    t = np.asarray(train.targets, dtype=float)
    if len(x) < ABSOLUTE_FLOOR:
        raise InsufficientData(f"{len(x)} training rows, need at least {ABSOLUTE_FLOOR}")
    layout = StageLayout.from_case(case)
    notes = []

    with warnings.catch_warnings(record=True) as caught:
        warnings.simplefilter("always", DegenerateTarget)
        warnings.simplefilter("ignore", UserWarning)
        mask = family_mask(case, CLASS_FAMILIES[cfg.constraint_family])
        n_req = 1 if cfg.mode == "direct" else cfg.n_classes
        labels, medoids, cnotes = cluster_by_active_set(train.signatures, n_req, mask)
        notes += cnotes
        m = len(medoids)

        classifier = None
        if m >= 2:
            ccfg = cfg.selm_for("classifier")
            ccfg = replace(ccfg, weight_seed=derive_seed(ccfg.weight_seed, _STAGE_KEY["classifier"]))
            classifier = train_classifier(x, labels, ccfg, n_classes=m)

        pools, class_pool = {}, []
        floor = cfg.class_floor()
        for c in range(m):
            rows = np.flatnonzero(labels == c)
            if m == 1 or len(rows) >= floor:
                name = f"class{c}"
                pools[name] = _train_pool(x[rows], t[rows], layout, cfg, c)
            else:
                name = "global"
                notes.append(f"class {c} has {len(rows)} rows (< {floor}); using the global pool")
                if name not in pools:
                    pools[name] = _train_pool(x, t, layout, cfg, _GLOBAL_POOL_KEY)
            class_pool.append(name)
    degenerate = sorted({str(w.message) for w in caught if issubclass(w.category, DegenerateTarget)})
    notes += degenerate

    reg = OpfRegressor(config=cfg, layout=layout, column_spec=train.column_spec, pools=pools,
                       class_pool=class_pool, medoids=medoids, classifier=classifier,
                       group_abs_mean=group_abs_means(t, train.target_labels), notes=notes)
    check_dimensions(reg)
    return reg


def check_dimensions(reg):
    """Assert every stored chain matches the stage dimensions from the layout."""
    dims = reg.layout.dims()
    for pool in reg.pools.values():
        for stage, chain in pool.items():
            d_in, d_out = dims[stage]
            for k, model in enumerate(chain):
                want = d_in + (d_out if k > 0 else 0)
                if model.d_in != want or model.d_out != d_out:
                    raise DimensionMismatch(f"{stage} model {k} is {model.d_in}->{model.d_out}, "
                                            f"expected {want}->{d_out}")
    if len(reg.column_spec["inputs"]) != reg.layout.n_inputs or \
            len(reg.column_spec["targets"]) != reg.layout.n_targets:
        raise DimensionMismatch("column_spec does not match the stage layout")


def route(reg, x):
    """Class label of each demand row."""
    if reg.classifier is None:
        return np.zeros(len(x), dtype=np.intp)
    return classify(reg.classifier, x)


def predict_targets(reg, x, labels=None):
    """Predicted target rows (dataset column order) and the class used per row.

    ``labels`` overrides the classifier, e.g. to study misrouting.
    """
    x = np.asarray(x, dtype=float)
    if x.ndim == 1:
        x = x[None, :]
    if x.ndim != 2 or x.shape[1] != reg.layout.n_inputs:
        raise DimensionMismatch(f"expected {reg.layout.n_inputs} input columns, got {x.shape}")
    labels = route(reg, x) if labels is None else np.asarray(labels, dtype=np.intp).reshape(-1)
    if labels.shape != (len(x),):
        raise DimensionMismatch("one label per row is required")
    if np.any((labels < 0) | (labels >= reg.n_classes)):
        raise ValueError(f"labels must lie in [0, {reg.n_classes})")
    out = np.empty((len(x), reg.layout.n_targets))
    for c in np.unique(labels):
        rows = np.flatnonzero(labels == c)
        out[rows] = _predict_pool(reg.models_for(c), x[rows], reg.layout)
    return out, labels


def _to_prediction(row, label, lay):
    nl, nb, ng = lay.n_branch, lay.n_bus, lay.n_gen
    s = lay.state.start
    c = lay.control.start
    return OpfPrediction(
        state=StateVector(row[s:s + nb].copy(), row[s + nb:s + 2 * nb].copy()),
        pg=row[c:c + ng].copy(), qg=row[c + ng:c + 2 * ng].copy(),
        pf=row[:nl].copy(), qf=row[nl:2 * nl].copy(), objective=float(row[-1]), label=int(label))


def infer_opf_batch(reg, pd, qd, labels=None):
    pd = np.atleast_2d(np.asarray(pd, dtype=float))
    qd = np.atleast_2d(np.asarray(qd, dtype=float))
    if pd.shape != qd.shape or pd.shape[1] != reg.layout.n_bus:
        raise DimensionMismatch("pd and qd must both have one column per bus")
    y, lab = predict_targets(reg, np.hstack([pd, qd]), labels)
    return [_to_prediction(row, c, reg.layout) for row, c in zip(y, lab)]


def infer_opf(reg, pd, qd, label=None):
    """Predicted OPF solution for one demand vector (no duals, no convergence flag)."""
    pd = np.asarray(pd, dtype=float)
    qd = np.asarray(qd, dtype=float)
    if pd.shape != (reg.layout.n_bus,) or qd.shape != (reg.layout.n_bus,):
        raise DimensionMismatch("pd and qd must have one entry per bus")
    return infer_opf_batch(reg, pd, qd, None if label is None else [label])[0]


def routing_accuracy(reg, inputs, signatures, case):
    """Share of rows the classifier sends to the medoid nearest their true signature."""
    mask = family_mask(case, CLASS_FAMILIES[reg.config.constraint_family])
    s = _as_matrix(signatures)[:, mask]
    med = np.array([m.active for m in reg.medoids], dtype=bool)
    truth = np.argmin((s[:, None, :] != med[None, :, :]).sum(axis=2), axis=1)
    return float(np.mean(route(reg, inputs) == truth))


# --------------------------------------------------------------------------
# serialization


def save_regressor(reg, path):
    arrays = {}
    models = {}

    def add(key, model):
        meta, arr = model_parts(model, prefix=key + "/")
        models[key] = meta
        arrays.update(arr)

    if reg.classifier is not None:
        add("classifier", reg.classifier)
    for name, pool in reg.pools.items():
        for stage, chain in pool.items():
            for k, model in enumerate(chain):
                add(f"{name}/{stage}/{k}", model)
    manifest = {
        "format": REGRESSOR_FORMAT,
        "version": REGRESSOR_VERSION,
        "config": reg.config.to_dict(),
        "layout": asdict(reg.layout),
        "column_spec": reg.column_spec,
        "class_pool": reg.class_pool,
        "pools": {name: {stage: len(chain) for stage, chain in pool.items()}
                  for name, pool in reg.pools.items()},
        "medoids": [str(m) for m in reg.medoids],
        "group_abs_mean": reg.group_abs_mean,
        "notes": reg.notes,
        "models": models,
    }
    write_archive(path, manifest, arrays)


def load_regressor(path):
    manifest, arrays = read_archive(path)
    if manifest.get("format") != REGRESSOR_FORMAT or manifest.get("version") != REGRESSOR_VERSION:
        raise MalformedFile(f"{path} is not a supported regressor archive")
    try:
        models = manifest["models"]

        def get(key):
            return model_from_parts(models[key], arrays, prefix=key + "/")

        pools = {name: {stage: [get(f"{name}/{stage}/{k}") for k in range(n)]
                        for stage, n in stages.items()}
                 for name, stages in manifest["pools"].items()}
        reg = OpfRegressor(
            config=PipelineConfig.from_dict(manifest["config"]),
            layout=StageLayout(**manifest["layout"]),
            column_spec=manifest["column_spec"],
            pools=pools,
            class_pool=list(manifest["class_pool"]),
            medoids=[ActiveSetSignature.from_string(s) for s in manifest["medoids"]],
            classifier=get("classifier") if "classifier" in models else None,
            group_abs_mean=dict(manifest["group_abs_mean"]),
            notes=list(manifest["notes"]),
        )
    except (KeyError, TypeError) as exc:
        raise MalformedFile(f"regressor archive is incomplete: {exc}") from None
    check_dimensions(reg)
    return reg
