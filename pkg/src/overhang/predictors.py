"""Physical-prediction mechanisms.

Three ways to guess whether a placement survives, plus a stage-dependent
hybrid:

* veridical — the noise-free ground-truth oracle, returns exactly 0/1.
* ipe — Monte Carlo: average the oracle verdict over noise-perturbed copies
  of the post-action configuration.
* heuristic — a logistic model (optional single hidden layer) over cheap
  geometric features, trained on oracle-labeled random configurations.

Per-sample Monte Carlo seeds derive from (seed, sample index), so results
never depend on evaluation order or parallelism.
"""
from __future__ import annotations

import hashlib
import json
import math
from dataclasses import dataclass, field, replace
from importlib import resources

import numpy as np
from numba import njit

from .model import (
    BLOCK_HEIGHT,
    BLOCK_WIDTHS,
    MAX_LAYERS,
    VALID,
    Action,
    BlockSpec,
    DecisionState,
    PlacedBlock,
    TowerGeometry,
    InvalidActionError,
    block_mass,
    validate_action,
    validate_placement,
)
from .stability import FRICTION_DEFAULT, FEASIBILITY_TOL, _tower_residual, geometry_arrays

PROB_CLAMP = 1e-4   # keeps log-likelihoods finite, shared with the metrics module

FEATURE_NAMES = (
    "n_blocks",
    "max_height_layers",
    "global_com_offset",
    "min_chain_margin",
    "min_support_overlap_ratio",
    "mean_support_overlap_ratio",
    "max_block_com_excursion",
    "overhang",
    "bounding_aspect_ratio",
    "n_cantilevered",
)


@dataclass(frozen=True)
class PerturbationConfig:
    k: int = 50
    sigma_pos: float = 0.03
    sigma_grav: float = 0.0
    sigma_mu: float = 0.0
    seed: int = 0

    def __post_init__(self):
        if self.k < 1:
            raise ValueError("need at least one sample")
        if min(self.sigma_pos, self.sigma_grav, self.sigma_mu) < 0:
            raise ValueError("noise magnitudes must be nonnegative")


def _post_action_arrays(state: DecisionState, action: Action):
    verdict = validate_action(state, action)
    if verdict != VALID:
        raise InvalidActionError(f"cannot predict an illegal action ({verdict})")
    xs, ws, layers, masses = geometry_arrays(state.geometry)
    spec = state.remaining[0]
    return (
        np.append(xs, action.x),
        np.append(ws, spec.width),
        np.append(layers, action.layer),
        np.append(masses, block_mass(spec)),
    )


def veridical_prob_arrays(xs, ws, layers, masses) -> float:
    r = _tower_residual(xs, ws, layers, masses, 0.0, -1.0, FRICTION_DEFAULT)
    return 1.0 if r <= FEASIBILITY_TOL else 0.0


def predict_veridical(state: DecisionState, action: Action) -> float:
    """Exact 1.0/0.0 from the static oracle on the post-action geometry."""
    return veridical_prob_arrays(*_post_action_arrays(state, action))


@njit(cache=True)
def _splitmix64(state):
    state = np.uint64(state + np.uint64(0x9E3779B97F4A7C15))
    z = state
    z = (z ^ (z >> np.uint64(30))) * np.uint64(0xBF58476D1CE4E5B9)
    z = (z ^ (z >> np.uint64(27))) * np.uint64(0x94D049BB133111EB)
    return state, z ^ (z >> np.uint64(31))


@njit(cache=True)
def _gauss(state):
    state, a = _splitmix64(state)
    state, b = _splitmix64(state)
    u1 = (float(a >> np.uint64(11)) + 1.0) * (1.0 / 9007199254740993.0)
    u2 = float(b >> np.uint64(11)) * (1.0 / 9007199254740992.0)
    return state, math.sqrt(-2.0 * math.log(u1)) * math.cos(2.0 * math.pi * u2)


@njit(cache=True)
def _ipe_kernel(xs, ws, layers, masses, k, sigma_pos, sigma_grav, sigma_mu, mu0, seed):
    """Count stable perturbed copies. Sample i draws from a stream keyed by
    (seed, i), so the estimate is independent of evaluation order."""
    n = xs.shape[0]
    xp = np.empty(n)
    stable = 0
    for i in range(k):
        state = np.uint64(seed) ^ (np.uint64(i + 1) * np.uint64(0xD1B54A32D192ED03))
        state, _ = _splitmix64(state)   # decorrelate nearby sample keys
        for j in range(n):
            if sigma_pos > 0.0:
                state, g = _gauss(state)
                xp[j] = xs[j] + g * sigma_pos
            else:
                xp[j] = xs[j]
        gx, gz = 0.0, -1.0
        if sigma_grav > 0.0:
            state, g = _gauss(state)
            ang = g * sigma_grav
            gx, gz = math.sin(ang), -math.cos(ang)
        mu = mu0
        if sigma_mu > 0.0:
            state, g = _gauss(state)
            mu = max(0.0, mu0 + g * sigma_mu)
        if _tower_residual(xp, ws, layers, masses, gx, gz, mu) <= FEASIBILITY_TOL:
            stable += 1
    return stable


def ipe_prob_arrays(xs, ws, layers, masses, cfg: PerturbationConfig) -> float:
    stable = _ipe_kernel(
        np.ascontiguousarray(xs, dtype=np.float64),
        np.ascontiguousarray(ws, dtype=np.float64),
        np.ascontiguousarray(layers, dtype=np.int64),
        np.ascontiguousarray(masses, dtype=np.float64),
        cfg.k, cfg.sigma_pos, cfg.sigma_grav, cfg.sigma_mu,
        FRICTION_DEFAULT, cfg.seed & 0xFFFFFFFFFFFFFFFF,
    )
    return stable / cfg.k


def predict_ipe(state: DecisionState, action: Action, cfg: PerturbationConfig = PerturbationConfig()) -> float:
    """Fraction of noise-perturbed copies of the post-action tower that stand.

    Every block's x gets i.i.d. Gaussian jitter; gravity tilt and friction
    noise are off by default. Deterministic given cfg.seed.
    """
    return ipe_prob_arrays(*_post_action_arrays(state, action), cfg)


# ---------------------------------------------------------------------------
# feature extraction

def _support_summary(xs, ws, layers):
    """Per-block support hulls, overlap sums and the children adjacency."""
    n = len(xs)
    hull_lo = [0.0] * n
    hull_hi = [0.0] * n
    overlap_sum = [0.0] * n
    children: list[list[int]] = [[] for _ in range(n)]
    for j in range(n):
        if layers[j] == 0:
            hull_lo[j] = xs[j] - 0.5 * ws[j]
            hull_hi[j] = xs[j] + 0.5 * ws[j]
            overlap_sum[j] = ws[j]
            continue
        lo, hi, total = math.inf, -math.inf, 0.0
        for i in range(n):
            if layers[i] == layers[j] - 1:
                olo = max(xs[i] - 0.5 * ws[i], xs[j] - 0.5 * ws[j])
                ohi = min(xs[i] + 0.5 * ws[i], xs[j] + 0.5 * ws[j])
                if ohi - olo > 0.0:
                    lo = min(lo, olo)
                    hi = max(hi, ohi)
                    total += ohi - olo
                    children[i].append(j)
        hull_lo[j], hull_hi[j], overlap_sum[j] = lo, hi, total
    return hull_lo, hull_hi, overlap_sum, children


def min_chain_margin_arrays(xs, ws, layers) -> float:
    """Generalized chain margin: for each block, the COM of everything it
    transitively carries against its support hull. Exact on single-support
    stacks; shared loads are counted fully on every path (deliberate bias)."""
    n = len(xs)
    hull_lo, hull_hi, _, children = _support_summary(xs, ws, layers)
    masses = [ws[j] * BLOCK_HEIGHT for j in range(n)]
    margin = math.inf
    for j in range(n):
        seen = {j}
        stack = [j]
        m = mx = 0.0
        while stack:
            k = stack.pop()
            m += masses[k]
            mx += masses[k] * xs[k]
            for c in children[k]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        com = mx / m
        margin = min(margin, com - hull_lo[j], hull_hi[j] - com)
    return margin


def features_from_arrays(xs, ws, layers) -> np.ndarray:
    n = len(xs)
    hull_lo, hull_hi, overlap_sum, children = _support_summary(xs, ws, layers)
    masses = [ws[j] * BLOCK_HEIGHT for j in range(n)]
    total_m = sum(masses)
    com_offset = abs(sum(m * x for m, x in zip(masses, xs)) / total_m)

    chain_margin = math.inf
    own_margins = []
    for j in range(n):
        seen = {j}
        stack = [j]
        m = mx = 0.0
        while stack:
            k = stack.pop()
            m += masses[k]
            mx += masses[k] * xs[k]
            for c in children[k]:
                if c not in seen:
                    seen.add(c)
                    stack.append(c)
        com = mx / m
        chain_margin = min(chain_margin, com - hull_lo[j], hull_hi[j] - com)
        own_margins.append(min(xs[j] - hull_lo[j], hull_hi[j] - xs[j]))

    ratios = [min(1.0, overlap_sum[j] / ws[j]) for j in range(n)]
    height = (max(layers) + 1) * BLOCK_HEIGHT
    x_lo = min(xs[j] - 0.5 * ws[j] for j in range(n))
    x_hi = max(xs[j] + 0.5 * ws[j] for j in range(n))
    return np.array(
        [
            float(n),
            float(max(layers) + 1),
            com_offset,
            chain_margin,
            min(ratios),
            sum(ratios) / n,
            max(-m for m in own_margins),
            max(abs(xs[j]) + 0.5 * ws[j] for j in range(n)),
            height / (x_hi - x_lo),
            float(sum(1 for m in own_margins if m < 0.0)),
        ]
    )


def extract_features(geometry: TowerGeometry) -> np.ndarray:
    """Fixed-order feature vector (see FEATURE_NAMES); mirror-invariant."""
    xs, ws, layers, _ = geometry_arrays(geometry)
    return features_from_arrays(list(xs), list(ws), list(layers))


# ---------------------------------------------------------------------------
# dataset generation

def task_sequence_hash(widths) -> str:
    payload = ",".join(f"{w:.1f}" for w in widths)
    return hashlib.blake2b(payload.encode(), digest_size=8).hexdigest()


def _frozen_task_hashes() -> frozenset[str]:
    try:
        text = resources.files("overhang").joinpath("data/tasks_v1.json").read_text()
    except (FileNotFoundError, ModuleNotFoundError):
        return frozenset()
    data = json.loads(text)
    return frozenset(task_sequence_hash(t["sequence"]) for t in data["tasks"])


@dataclass
class LabeledDataset:
    features: np.ndarray          # (n, n_features)
    labels: np.ndarray            # (n,) 0/1 from the veridical oracle
    val_mask: np.ndarray          # (n,) bool, ~10% validation split
    feature_names: tuple[str, ...] = FEATURE_NAMES

    def content_hash(self) -> str:
        h = hashlib.blake2b(digest_size=16)
        h.update(np.ascontiguousarray(self.features).tobytes())
        h.update(np.ascontiguousarray(self.labels).tobytes())
        h.update(np.ascontiguousarray(self.val_mask).tobytes())
        return h.hexdigest()

    def save_csv(self, path: str) -> None:
        with open(path, "w") as fh:
            fh.write(",".join(self.feature_names) + ",label\n")
            for row, y in zip(self.features, self.labels):
                fh.write(",".join(repr(v) for v in row) + f",{int(y)}\n")


MARGINAL_BAND_TARGET = 0.15     # |margin| window the biased half of samples aims for


def _sample_placement(rng, blocks, width, mode):
    """One random legal placement.

    mode "free": any legal spot. mode "stable": prefer spots keeping the
    tower standing (how construction-like configurations arise). mode
    "marginal": steer |margin| into the band around the stability boundary.
    """
    top = max(b.layer for b in blocks)
    layer_choices = [l + 1 for l in range(top + 1) if l + 1 < MAX_LAYERS]
    if not layer_choices:
        return None
    proposals = []
    for _ in range(60):
        layer = int(layer_choices[rng.integers(len(layer_choices))])
        anchors = [b for b in blocks if b.layer == layer - 1]
        if not anchors:
            continue
        a = anchors[int(rng.integers(len(anchors)))]
        span = 0.5 * (a.spec.width + width)
        x = a.x + (rng.random() * 2.0 - 1.0) * span
        if validate_placement(blocks, width, x, layer) != VALID:
            continue
        if mode == "free":
            return PlacedBlock(BlockSpec(width), x, layer)
        proposals.append(PlacedBlock(BlockSpec(width), x, layer))
        if len(proposals) >= 24:
            break
    if not proposals:
        return None
    cand = blocks + [None]
    scored = []
    for p in proposals:
        cand[-1] = p
        m = min_chain_margin_arrays([b.x for b in cand], [b.spec.width for b in cand], [b.layer for b in cand])
        scored.append((m, p))
    if mode == "stable":
        standing = [p for m, p in scored if m > 0.02]
        if standing:
            return standing[int(rng.integers(len(standing)))]
        return scored[int(rng.integers(len(scored)))][1]
    near = [p for m, p in scored if abs(m) < MARGINAL_BAND_TARGET]
    if near:
        return near[int(rng.integers(len(near)))]
    scored.sort(key=lambda t: abs(t[0]))
    return scored[0][1]


def generate_dataset(n: int, seed: int, exclude_hashes: frozenset[str] | None = None) -> LabeledDataset:
    """Sample n partial towers (1-6 blocks) by random legal construction.

    Every other sample steers its final placement toward the marginal band so
    the label boundary is well covered. Labels come from the veridical static
    oracle. Width sequences colliding with the frozen experiment task suite
    are skipped (hash check).
    """
    if n < 1000:
        raise ValueError("dataset generation is specified for n >= 1000")
    if exclude_hashes is None:
        exclude_hashes = _frozen_task_hashes()
    rng = np.random.default_rng((seed & 0x7FFFFFFFFFFFFFFF, 0xDA7A))
    feats = np.empty((n, len(FEATURE_NAMES)))
    labels = np.empty(n, np.int8)
    for idx in range(n):
        while True:
            widths = [BLOCK_WIDTHS[int(k)] for k in rng.integers(0, 3, 6)]
            if task_sequence_hash(widths) not in exclude_hashes:
                break
        n_blocks = int(rng.integers(1, 7))
        blocks = [PlacedBlock(BlockSpec(widths[0]), 0.0, 0)]
        for t in range(1, n_blocks):
            if t < n_blocks - 1:
                mode = "stable" if rng.random() < 0.8 else "free"
            else:
                mode = "marginal" if idx % 2 == 1 else "free"
            placed = _sample_placement(rng, blocks, widths[t], mode)
            if placed is None:
                break
            blocks.append(placed)
        xs = [b.x for b in blocks]
        ws = [b.spec.width for b in blocks]
        layers = [b.layer for b in blocks]
        masses = [block_mass(b.spec) for b in blocks]
        feats[idx] = features_from_arrays(xs, ws, layers)
        r = _tower_residual(
            np.array(xs), np.array(ws), np.array(layers, np.int64), np.array(masses),
            0.0, -1.0, FRICTION_DEFAULT,
        )
        labels[idx] = 1 if r <= FEASIBILITY_TOL else 0
    val_mask = np.random.default_rng((seed & 0x7FFFFFFFFFFFFFFF, 0x5B17)).random(n) < 0.10
    return LabeledDataset(feats, labels, val_mask)


# ---------------------------------------------------------------------------
# classifier

class TrainingError(RuntimeError):
    pass


@dataclass(frozen=True)
class TrainConfig:
    learning_rate: float = 0.1
    epochs: int = 500
    hidden_units: int = 0      # 0 = plain logistic, else one hidden layer
    seed: int = 0
    patience: int = 40         # epochs without val-loss improvement before stopping


@dataclass
class ClassifierModel:
    feature_names: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray
    weights: np.ndarray            # (d,) logistic, or (d, h) first layer
    bias: np.ndarray               # scalar array, or (h,)
    out_weights: np.ndarray | None = None   # (h,) when hidden
    out_bias: float = 0.0
    hidden_units: int = 0
    version: str = "overhang/v1"
    metrics: dict = field(default_factory=dict)

    def predict_proba(self, features: np.ndarray) -> np.ndarray:
        x = (np.atleast_2d(features) - self.mean) / self.std
        if self.hidden_units:
            h = np.tanh(x @ self.weights + self.bias)
            z = h @ self.out_weights + self.out_bias
        else:
            z = x @ self.weights + float(self.bias)
        p = _sigmoid(z)
        return np.clip(p, 1e-12, 1.0 - 1e-12)

    def to_dict(self) -> dict:
        d = {
            "format": "overhang/v1",
            "feature_order": list(self.feature_names),
            "standardization": {"mean": self.mean.tolist(), "std": self.std.tolist()},
            "weights": self.weights.tolist(),
            "bias": self.bias.tolist() if self.hidden_units else float(self.bias),
            "hidden_units": self.hidden_units,
            "metrics": self.metrics,
        }
        if self.hidden_units:
            d["out_weights"] = self.out_weights.tolist()
            d["out_bias"] = self.out_bias
        return d

    @classmethod
    def from_dict(cls, d: dict) -> "ClassifierModel":
        if d.get("format") != "overhang/v1":
            raise ValueError(f"unsupported model format: {d.get('format')!r}")
        hidden = int(d.get("hidden_units", 0))
        return cls(
            feature_names=tuple(d["feature_order"]),
            mean=np.asarray(d["standardization"]["mean"], float),
            std=np.asarray(d["standardization"]["std"], float),
            weights=np.asarray(d["weights"], float),
            bias=np.asarray(d["bias"], float) if hidden else np.asarray(float(d["bias"])),
            out_weights=np.asarray(d["out_weights"], float) if hidden else None,
            out_bias=float(d.get("out_bias", 0.0)),
            hidden_units=hidden,
            metrics=dict(d.get("metrics", {})),
        )

    def save(self, path: str) -> None:
        with open(path, "w") as fh:
            json.dump(self.to_dict(), fh, indent=2)

    @classmethod
    def load(cls, path: str) -> "ClassifierModel":
        with open(path) as fh:
            return cls.from_dict(json.load(fh))


def _sigmoid(z):
    return 0.5 * (1.0 + np.tanh(0.5 * z))


def _log_loss(p, y):
    p = np.clip(p, 1e-12, 1.0 - 1e-12)
    return float(-np.mean(y * np.log(p) + (1 - y) * np.log(1 - p)))


def train_classifier(data: LabeledDataset, cfg: TrainConfig = TrainConfig()) -> ClassifierModel:
    """Full-batch gradient descent with validation-loss early stopping."""
    x_tr = data.features[~data.val_mask]
    y_tr = data.labels[~data.val_mask].astype(float)
    x_va = data.features[data.val_mask]
    y_va = data.labels[data.val_mask].astype(float)
    if len(x_va) == 0 or len(x_tr) == 0:
        raise ValueError("dataset must contain both train and validation rows")
    mean = x_tr.mean(axis=0)
    std = np.maximum(x_tr.std(axis=0), 1e-9)
    xt = (x_tr - mean) / std
    xv = (x_va - mean) / std
    d = xt.shape[1]
    rng = np.random.default_rng(cfg.seed)

    if cfg.hidden_units:
        h = cfg.hidden_units
        w1 = rng.standard_normal((d, h)) * 0.1
        b1 = np.zeros(h)
        w2 = rng.standard_normal(h) * 0.1
        b2 = 0.0
        best = (math.inf, None)
        stale = 0
        for epoch in range(cfg.epochs):
            a1 = np.tanh(xt @ w1 + b1)
            p = _sigmoid(a1 @ w2 + b2)
            err = p - y_tr
            gw2 = a1.T @ err / len(xt)
            gb2 = float(err.mean())
            da1 = np.outer(err, w2) * (1 - a1 * a1)
            gw1 = xt.T @ da1 / len(xt)
            gb1 = da1.mean(axis=0)
            w1 -= cfg.learning_rate * gw1
            b1 -= cfg.learning_rate * gb1
            w2 -= cfg.learning_rate * gw2
            b2 -= cfg.learning_rate * gb2
            val_loss = _log_loss(_sigmoid(np.tanh(xv @ w1 + b1) @ w2 + b2), y_va)
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            if val_loss < best[0] - 1e-9:
                best = (val_loss, (w1.copy(), b1.copy(), w2.copy(), b2))
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        w1, b1, w2, b2 = best[1]
        model = ClassifierModel(data.feature_names, mean, std, w1, b1, w2, float(b2), hidden_units=cfg.hidden_units)
    else:
        w = np.zeros(d)
        b = 0.0
        best = (math.inf, None)
        stale = 0
        for epoch in range(cfg.epochs):
            p = _sigmoid(xt @ w + b)
            err = p - y_tr
            w -= cfg.learning_rate * (xt.T @ err / len(xt))
            b -= cfg.learning_rate * float(err.mean())
            val_loss = _log_loss(_sigmoid(xv @ w + b), y_va)
            if not math.isfinite(val_loss):
                raise TrainingError(f"non-finite validation loss at epoch {epoch}")
            if val_loss < best[0] - 1e-9:
                best = (val_loss, (w.copy(), b))
                stale = 0
            else:
                stale += 1
                if stale >= cfg.patience:
                    break
        w, b = best[1]
        model = ClassifierModel(data.feature_names, mean, std, w, np.asarray(b))

    p_va = model.predict_proba(x_va)
    model.metrics = {
        "val_accuracy": float(np.mean((p_va >= 0.5) == (y_va >= 0.5))),
        "val_loss": _log_loss(p_va, y_va),
        "n_train": int(len(x_tr)),
        "n_val": int(len(x_va)),
    }
    return model


def heuristic_prob_arrays(xs, ws, layers, model: ClassifierModel) -> float:
    if model is None:
        raise ValueError("heuristic prediction needs a trained model")
    p = float(model.predict_proba(features_from_arrays(list(xs), list(ws), list(layers)))[0])
    return min(max(p, PROB_CLAMP), 1.0 - PROB_CLAMP)


def predict_heuristic(state: DecisionState, action: Action, model: ClassifierModel) -> float:
    """Classifier output on the post-action features, clamped for likelihood use."""
    xs, ws, layers, _ = _post_action_arrays(state, action)
    return heuristic_prob_arrays(xs, ws, layers, model)


def predict_hybrid(
    state: DecisionState,
    action: Action,
    cfg: PerturbationConfig,
    model: ClassifierModel,
    n_switch: int = 3,
) -> float:
    """Monte Carlo for small post-action towers, heuristic beyond n_switch blocks."""
    xs, ws, layers, masses = _post_action_arrays(state, action)
    if len(xs) <= n_switch:
        return ipe_prob_arrays(xs, ws, layers, masses, cfg)
    return heuristic_prob_arrays(xs, ws, layers, model)


# ---------------------------------------------------------------------------
# binding used by planners / metrics

PREDICTOR_KINDS = ("veridical", "ipe", "heuristic", "hybrid")


@dataclass(frozen=True)
class PredictorBinding:
    kind: str
    perturb: PerturbationConfig = PerturbationConfig()
    model: ClassifierModel | None = None
    n_switch: int = 3

    def __post_init__(self):
        if self.kind not in PREDICTOR_KINDS:
            raise ValueError(f"unknown predictor kind {self.kind!r}")
        if self.kind in ("heuristic", "hybrid") and self.model is None:
            raise ValueError(f"{self.kind} predictor needs a trained model")

    def prob_arrays(self, xs, ws, layers, masses) -> float:
        if self.kind == "veridical":
            return veridical_prob_arrays(xs, ws, layers, masses)
        if self.kind == "ipe":
            return ipe_prob_arrays(xs, ws, layers, masses, self.perturb)
        if self.kind == "heuristic":
            return heuristic_prob_arrays(xs, ws, layers, self.model)
        if len(xs) <= self.n_switch:
            return ipe_prob_arrays(xs, ws, layers, masses, self.perturb)
        return heuristic_prob_arrays(xs, ws, layers, self.model)

    def prob(self, state: DecisionState, action: Action) -> float:
        return self.prob_arrays(*_post_action_arrays(state, action))

    def with_seed(self, seed: int) -> "PredictorBinding":
        return replace(self, perturb=replace(self.perturb, seed=seed))
