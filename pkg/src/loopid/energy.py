"""Free-energy confidence scoring, the energy margin loss, and novelty fine-tuning.

The confidence score of a prediction is the negated Helmholtz free energy of
its logits, E(x) = -T * log(sum_i(exp(logit_i / T))); a sample is confident
when -E(x) exceeds a threshold tau. Fine-tuning pushes energies of known
training samples below a low margin and energies of samples from held-out
categories above a high margin, which is what separates novel inputs from
familiar ones at inference time.
"""
from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path

import numpy as np

from . import model as model_mod
from .errors import CalibrationError, ConfigurationError, ScoringError, TrainingDivergedError
from .model import (
    ClassifierModel,
    LabeledData,
    TrainConfig,
    _CyclingSampler,
    _softmax,
    backward,
    copy_model,
    forward_cache,
    refresh_centroids,
)

CALIBRATION_SCHEMA_VERSION = 1
HISTOGRAM_BINS = 64


@dataclass(frozen=True)
class EnergyConfig:
    """Temperature, threshold, margins, and fine-tuning recipe.

    Margins default to percentiles of the known-sample training energies
    measured just before fine-tuning (margin_known below margin_unknown, so
    knowns are pushed under the low bar and unknowns over the high one).
    A ``tau`` of None means "calibrate per period on validation data".
    """

    temperature: float = 1.0
    tau: float | None = None
    margin_known: float | None = None
    margin_unknown: float | None = None
    energy_weight: float = 0.01
    known_unknown_ratio: tuple[int, int] = (1, 2)
    margin_known_pct: float = 80.0
    margin_unknown_pct: float = 95.0
    fine_tune: TrainConfig = field(
        default_factory=lambda: TrainConfig(
            epochs=10,
            batch_size=96,
            lr_feature=1e-5,
            lr_classifier=1e-4,
            lr_memory=1e-5,
            lr_decay_epochs=10,
            lr_decay_ratio=0.1,
        )
    )

    def validate(self) -> None:
        if self.temperature <= 0:
            raise ConfigurationError(f"temperature must be > 0, got {self.temperature}")
        if self.energy_weight < 0:
            raise ConfigurationError("energy_weight must be >= 0")
        if min(self.known_unknown_ratio) < 1:
            raise ConfigurationError("known_unknown_ratio components must be >= 1")
        if self.margin_known is not None and self.margin_unknown is not None:
            if not (self.margin_known < self.margin_unknown):
                raise ConfigurationError(
                    "margin_known must lie below margin_unknown "
                    f"(got {self.margin_known} >= {self.margin_unknown})"
                )


@dataclass(frozen=True)
class ConfidenceVerdict:
    sample_id: int
    energy: float
    neg_energy: float
    confident: bool
    softmax_max: float


def _check_logits(logits: np.ndarray) -> np.ndarray:
    arr = np.asarray(logits, dtype=np.float64)
    if arr.shape[-1] < 1:
        raise ScoringError("logits must have at least one class")
    if not np.all(np.isfinite(arr)):
        raise ScoringError("logits contain non-finite values")
    return arr


def energy_score(logits: np.ndarray, temperature: float = 1.0) -> float | np.ndarray:
    """Helmholtz free energy of a logit vector (or batch, scored row-wise).

    Computed as -(m + T*log(sum(exp((l - m)/T)))) with m the row max, which
    keeps the exponentials bounded and adds the large term back only once.
    """
    if temperature <= 0:
        raise ScoringError(f"temperature must be > 0, got {temperature}")
    arr = _check_logits(logits)
    squeeze = arr.ndim == 1
    arr = np.atleast_2d(arr)
    m = arr.max(axis=1)
    rest = np.exp((arr - m[:, None]) / temperature).sum(axis=1)
    energy = -(m + temperature * np.log(rest))
    return float(energy[0]) if squeeze else energy


def softmax_confidence(logits: np.ndarray) -> float | np.ndarray:
    """Largest softmax probability; the conventional confidence baseline."""
    arr = _check_logits(logits)
    squeeze = arr.ndim == 1
    probs = _softmax(np.atleast_2d(arr), axis=1)
    conf = probs.max(axis=1)
    return float(conf[0]) if squeeze else conf


def energy_margin_loss(
    energies_known: np.ndarray,
    energies_unknown: np.ndarray,
    margin_known: float,
    margin_unknown: float,
) -> float:
    """Squared hinge pushing known energies below margin_known and unknown above margin_unknown."""
    known = np.asarray(energies_known, dtype=np.float64)
    unknown = np.asarray(energies_unknown, dtype=np.float64)
    if known.size == 0 and unknown.size == 0:
        raise ConfigurationError("at least one of the energy sets must be non-empty")
    loss = 0.0
    if known.size:
        loss += float(np.mean(np.maximum(0.0, known - margin_known) ** 2))
    if unknown.size:
        loss += float(np.mean(np.maximum(0.0, margin_unknown - unknown) ** 2))
    return loss


def total_loss(ce_loss: float, energy_loss: float, weight: float) -> float:
    if weight < 0:
        raise ConfigurationError(f"energy weight must be >= 0, got {weight}")
    return ce_loss + weight * energy_loss


def energy_grad_logits(logits: np.ndarray, temperature: float) -> np.ndarray:
    """dE/dlogits for each row: the negated tempered softmax."""
    return -_softmax(np.atleast_2d(logits) / temperature, axis=1)


def combined_loss_and_grad(
    logits: np.ndarray,
    known_mask: np.ndarray,
    labels_known: np.ndarray,
    cfg: EnergyConfig,
    margin_known: float,
    margin_unknown: float,
) -> tuple[float, np.ndarray]:
    """Cross-entropy on known rows plus the weighted energy margin loss.

    ``labels_known`` are class indices aligned with the known rows in order.
    Returns the scalar loss and its gradient w.r.t. all logits.
    """
    n = logits.shape[0]
    dlogits = np.zeros_like(logits)
    known_idx = np.flatnonzero(known_mask)
    unknown_idx = np.flatnonzero(~known_mask)

    ce = 0.0
    if known_idx.size:
        ce, d_ce = model_mod.cross_entropy_loss(logits[known_idx], labels_known)
        dlogits[known_idx] += d_ce

    energies = energy_score(logits, cfg.temperature)
    energies = np.atleast_1d(energies)
    e_loss = energy_margin_loss(
        energies[known_idx], energies[unknown_idx], margin_known, margin_unknown
    )
    d_e = energy_grad_logits(logits, cfg.temperature)
    coef = np.zeros(n)
    if known_idx.size:
        coef[known_idx] = 2.0 * np.maximum(0.0, energies[known_idx] - margin_known) / known_idx.size
    if unknown_idx.size:
        coef[unknown_idx] = (
            -2.0 * np.maximum(0.0, margin_unknown - energies[unknown_idx]) / unknown_idx.size
        )
    dlogits += cfg.energy_weight * coef[:, None] * d_e
    return total_loss(ce, e_loss, cfg.energy_weight), dlogits


def margins_from_percentiles(known_energies: np.ndarray, cfg: EnergyConfig) -> tuple[float, float]:
    """Anchor the margins to percentiles of pre-fine-tuning known energies."""
    m_known = (
        cfg.margin_known
        if cfg.margin_known is not None
        else float(np.percentile(known_energies, cfg.margin_known_pct))
    )
    m_unknown = (
        cfg.margin_unknown
        if cfg.margin_unknown is not None
        else float(np.percentile(known_energies, cfg.margin_unknown_pct))
    )
    return m_known, m_unknown


def separation_score(known_scores: np.ndarray, unknown_scores: np.ndarray) -> float:
    """Best Youden J over thresholds: max_t P(known > t) - P(unknown > t)."""
    best, _ = _scan_thresholds(known_scores, unknown_scores)
    return best


def _scan_thresholds(known_scores: np.ndarray, unknown_scores: np.ndarray) -> tuple[float, float]:
    """(best J, tau at best J) over midpoints of the pooled score values."""
    known = np.asarray(known_scores, dtype=np.float64)
    unknown = np.asarray(unknown_scores, dtype=np.float64)
    pooled = np.unique(np.concatenate([known, unknown]))
    if pooled.size == 1:
        candidates = np.array([pooled[0] - 1.0])
    else:
        candidates = (pooled[:-1] + pooled[1:]) / 2.0
        candidates = np.concatenate([[pooled[0] - 1.0], candidates])
    best_j = -np.inf
    best_tau = candidates[0]
    for tau in candidates:
        j = float((known > tau).mean() - (unknown > tau).mean())
        if j > best_j:
            best_j = j
            best_tau = float(tau)
    return best_j, best_tau


@dataclass(frozen=True)
class CalibrationTarget:
    """Either maximize Youden separation or meet a precision floor on the confident set."""

    mode: str = "youden"
    floor: float | None = None

    def validate(self) -> None:
        if self.mode not in ("youden", "accuracy_floor"):
            raise ConfigurationError(f"unknown calibration mode {self.mode!r}")
        if self.mode == "accuracy_floor" and (self.floor is None or not (0 < self.floor <= 1)):
            raise ConfigurationError("accuracy_floor mode needs a floor in (0, 1]")


def calibrate_threshold(
    val_known_scores: np.ndarray,
    val_unknown_scores: np.ndarray,
    target: CalibrationTarget = CalibrationTarget(),
) -> float:
    """Pick the confidence threshold tau from validation score sets.

    Scores are in confidence space (-energy, or any score where higher means
    more trustworthy). ``val_known_scores`` come from samples that deserve
    confidence; ``val_unknown_scores`` from samples that should be flagged.
    In accuracy_floor mode the smallest tau whose confident-set precision
    meets the floor is returned, so raising the floor never lowers tau.
    """
    target.validate()
    known = np.asarray(val_known_scores, dtype=np.float64)
    unknown = np.asarray(val_unknown_scores, dtype=np.float64)
    if known.size == 0 or unknown.size == 0:
        raise CalibrationError("both score sets must be non-empty")

    if target.mode == "youden":
        best_j, best_tau = _scan_thresholds(known, unknown)
        if best_j <= 0.0:
            raise CalibrationError(
                "score distributions are inseparable (best Youden J "
                f"{best_j:.4f}); refusing a degenerate threshold",
                frontier={"best_j": best_j, "tau": best_tau},
            )
        return best_tau

    pooled = np.unique(np.concatenate([known, unknown]))
    candidates = np.concatenate([[pooled[0] - 1.0], (pooled[:-1] + pooled[1:]) / 2.0])
    feasible = []
    best_precision = -1.0
    best_tau = None
    for tau in candidates:
        n_known = int((known > tau).sum())
        n_total = n_known + int((unknown > tau).sum())
        if n_total == 0:
            continue
        precision = n_known / n_total
        if precision > best_precision:
            best_precision = precision
            best_tau = float(tau)
        if precision >= target.floor:
            feasible.append(float(tau))
    if not feasible:
        raise CalibrationError(
            f"no threshold reaches precision {target.floor:.3f}; "
            f"best achievable is {best_precision:.3f}",
            frontier={"best_precision": best_precision, "tau": best_tau},
        )
    return min(feasible)


def confidence_verdicts(
    logits: np.ndarray,
    sample_ids: np.ndarray,
    temperature: float,
    tau: float,
) -> list[ConfidenceVerdict]:
    """Score a batch of logits; confident means -E(x) > tau."""
    arr = _check_logits(np.atleast_2d(logits))
    energies = np.atleast_1d(energy_score(arr, temperature))
    softmax_max = np.atleast_1d(softmax_confidence(arr))
    out = []
    for sid, e, sm in zip(sample_ids, energies, softmax_max):
        neg = -float(e)
        out.append(
            ConfidenceVerdict(
                sample_id=int(sid),
                energy=float(e),
                neg_energy=neg,
                confident=bool(neg > tau),
                softmax_max=float(sm),
            )
        )
    return out


@dataclass
class FineTuneResult:
    model: ClassifierModel
    history: list[dict]
    margin_known: float
    margin_unknown: float
    best_separation: float | None


def fine_tune_energy(
    model: ClassifierModel,
    known_train: LabeledData,
    unknown_train: np.ndarray,
    cfg: EnergyConfig,
    train_cfg: TrainConfig | None = None,
    known_val: np.ndarray | None = None,
    unknown_val: np.ndarray | None = None,
) -> FineTuneResult:
    """Fine-tune for novelty sensitivity with the combined loss.

    Batches draw known and unknown samples at ``cfg.known_unknown_ratio``;
    one epoch is one pass over the known pool, with unknowns cycling. The
    snapshot with the best validation novelty separation (Youden J between
    known/unknown confidence scores over the given validation feature sets)
    is returned; without validation sets the separation is measured on the
    training pools.
    """
    cfg.validate()
    tcfg = train_cfg if train_cfg is not None else cfg.fine_tune
    tcfg.validate()
    unknown_train = np.atleast_2d(np.asarray(unknown_train, dtype=np.float64))
    if unknown_train.shape[0] == 0:
        raise ConfigurationError("unknown pool is empty; energy fine-tuning needs left-out samples")
    if len(known_train) == 0:
        raise ConfigurationError("known training pool is empty")

    pre_cache = forward_cache(model, known_train.features)
    known_energies = np.atleast_1d(energy_score(pre_cache.logits, cfg.temperature))
    margin_known, margin_unknown = margins_from_percentiles(known_energies, cfg)
    if margin_known >= margin_unknown:
        # Degenerate percentile anchors (e.g. near-constant energies); nudge apart.
        margin_unknown = margin_known + 1e-6

    if tcfg.epochs == 0:
        return FineTuneResult(copy_model(model), [], margin_known, margin_unknown, None)

    sep_known = known_val if known_val is not None else known_train.features
    sep_unknown = unknown_val if unknown_val is not None else unknown_train

    ratio_known, ratio_unknown = cfg.known_unknown_ratio
    n_known_per_batch = max(1, round(tcfg.batch_size * ratio_known / (ratio_known + ratio_unknown)))
    n_unknown_per_batch = max(1, tcfg.batch_size - n_known_per_batch)

    work = copy_model(model)
    rng = np.random.default_rng(tcfg.seed)
    optimizer = model_mod.SGDOptimizer(tcfg)
    history: list[dict] = []
    best: ClassifierModel | None = None
    best_sep = -np.inf
    for epoch in range(tcfg.epochs):
        if work.oltr_enabled:
            refresh_centroids(work, known_train.features, known_train.labels)
        lr_scale = tcfg.lr_decay_ratio ** (epoch // tcfg.lr_decay_epochs)
        order = rng.permutation(len(known_train))
        unknown_stream = _CyclingSampler(unknown_train.shape[0], rng)
        losses = []
        for batch_idx, start in enumerate(range(0, len(known_train), n_known_per_batch)):
            k_idx = order[start : start + n_known_per_batch]
            u_idx = unknown_stream.take(n_unknown_per_batch)
            feats = np.concatenate([known_train.features[k_idx], unknown_train[u_idx]])
            known_mask = np.zeros(len(feats), dtype=bool)
            known_mask[: len(k_idx)] = True
            cache = forward_cache(work, feats)
            loss, dlogits = combined_loss_and_grad(
                cache.logits, known_mask, known_train.labels[k_idx], cfg, margin_known, margin_unknown
            )
            if not np.isfinite(loss):
                raise TrainingDivergedError(
                    "energy fine-tuning loss is not finite",
                    epoch=epoch,
                    batch=batch_idx,
                    lrs={"feature": tcfg.lr_feature * lr_scale, "classifier": tcfg.lr_classifier * lr_scale},
                )
            grads = backward(work, cache, dlogits)
            optimizer.step(work, grads, lr_scale)
            losses.append(loss)
        sep = _model_separation(work, sep_known, sep_unknown, cfg.temperature)
        history.append({"epoch": epoch, "train_loss": float(np.mean(losses)), "separation": sep})
        if sep > best_sep:
            best_sep = sep
            best = copy_model(work)

    assert best is not None
    best.version = model.version + 1
    return FineTuneResult(best, history, margin_known, margin_unknown, best_sep)


def _model_separation(
    model: ClassifierModel, known_features: np.ndarray, unknown_features: np.ndarray, temperature: float
) -> float:
    _, logits_known = model_mod.forward(model, known_features)
    _, logits_unknown = model_mod.forward(model, unknown_features)
    known_scores = -np.atleast_1d(energy_score(logits_known, temperature))
    unknown_scores = -np.atleast_1d(energy_score(logits_unknown, temperature))
    return separation_score(known_scores, unknown_scores)


def score_histogram(scores: np.ndarray, lo: float, hi: float) -> list[int]:
    counts, _ = np.histogram(np.asarray(scores, dtype=np.float64), bins=HISTOGRAM_BINS, range=(lo, hi))
    return [int(c) for c in counts]


def write_calibration_report(
    path: str | Path,
    tau: float,
    cfg: EnergyConfig,
    margin_known: float,
    margin_unknown: float,
    known_scores: np.ndarray,
    unknown_scores: np.ndarray,
) -> dict:
    """Persist calibration outcome with fixed 64-bin score histograms."""
    known = np.asarray(known_scores, dtype=np.float64)
    unknown = np.asarray(unknown_scores, dtype=np.float64)
    lo = float(min(known.min(), unknown.min()))
    hi = float(max(known.max(), unknown.max()))
    if hi <= lo:
        hi = lo + 1.0
    report = {
        "schema_version": CALIBRATION_SCHEMA_VERSION,
        "tau": float(tau),
        "temperature": cfg.temperature,
        "margin_known": float(margin_known),
        "margin_unknown": float(margin_unknown),
        "separation": {
            "youden_j": separation_score(known, unknown),
            "known_mean": float(known.mean()),
            "known_std": float(known.std()),
            "unknown_mean": float(unknown.mean()),
            "unknown_std": float(unknown.std()),
        },
        "histogram": {
            "bins": HISTOGRAM_BINS,
            "lo": lo,
            "hi": hi,
            "known": score_histogram(known, lo, hi),
            "unknown": score_histogram(unknown, lo, hi),
        },
    }
    Path(path).write_text(json.dumps(report, indent=2, sort_keys=True))
    return report
