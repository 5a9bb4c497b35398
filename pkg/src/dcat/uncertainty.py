"""MC-dropout predictive inference, entropy, and high-uncertainty flagging.

The posterior over classes is the mean of M stochastic softmax passes run
with dropout active. Pass m draws its dropout masks from an independent
stream keyed (seed, m), so runs are bit-reproducible and passes could be
evaluated in parallel. Entropy uses the natural log; the maximum ln(N_cl)
is reported alongside so summaries are self-describing.
"""

import csv
import io
import json
from dataclasses import dataclass, replace
from typing import Optional

import numpy as np

from .errors import ParameterError
from .util import atomic_write_text, make_rng

MC_STREAM = 7  # rng stream tag reserved for MC-dropout passes


@dataclass
class PredictiveDistribution:
    passes: np.ndarray  # (M, N_cl) softmax output of each stochastic pass
    posterior: np.ndarray  # (N_cl,) mean over passes
    entropy: float

    @property
    def m(self) -> int:
        return self.passes.shape[0]

    @classmethod
    def from_passes(cls, passes: np.ndarray):
        passes = np.asarray(passes, dtype=np.float64)
        posterior = passes.mean(axis=0)
        # float32 softmax rows carry ~1e-7 rounding; renormalize so the
        # posterior is an exact probability vector and entropy <= ln(N_cl)
        posterior = posterior / posterior.sum()
        return cls(passes=passes, posterior=posterior, entropy=predictive_entropy(posterior))


@dataclass
class UncertaintyRecord:
    sample_id: int
    posterior: np.ndarray
    entropy: float
    predicted_label: int
    true_label: Optional[int] = None
    flagged: bool = False

    @property
    def max_prob(self) -> float:
        return float(self.posterior.max())


def predictive_entropy(p) -> float:
    """Shannon entropy -sum(p ln p) in nats, with 0 ln 0 taken as 0.

    The input is validated as a probability vector, then renormalized so the
    0 <= H <= ln(N_cl) bounds hold exactly despite storage rounding.
    """
    p = np.asarray(p, dtype=np.float64)
    if (p < 0).any():
        raise ParameterError("probability vector has negative components")
    if abs(p.sum() - 1.0) > 1e-4:
        raise ParameterError(f"probabilities sum to {p.sum():.6f}, expected 1")
    nz = p[p > 0] / p.sum()
    return float(-(nz * np.log(nz)).sum())


def mc_forward(model, x, m_passes: int, seed: int) -> PredictiveDistribution:
    """M stochastic forward passes of one sample with dropout active."""
    dists = mc_forward_batch(model, x, m_passes, seed)
    return dists[0]


def mc_forward_batch(model, x, m_passes: int, seed: int):
    """Vectorized MC inference; returns one distribution per sample.

    ``x`` is (3, H, W) for a single sample or (B, 3, H, W) for a batch; the
    pass-m dropout stream is shared across the batch but independent of every
    other pass. Dropout sits only in the classifier head, so the deterministic
    trunk runs once; the result is bit-identical to re-running the whole
    forward M times.
    """
    if m_passes < 1:
        raise ParameterError(f"pass count must be >= 1, got {m_passes}")
    features = model.forward_trunk(x)
    all_passes = []
    for m in range(m_passes):
        probs = model.forward_head(features, dropout_active=True, rng=make_rng(seed, MC_STREAM, m)).data
        all_passes.append(probs if probs.ndim == 2 else probs[None])
    stacked = np.stack(all_passes)  # (M, B, N_cl)
    return [PredictiveDistribution.from_passes(stacked[:, i]) for i in range(stacked.shape[1])]


def flag_high_uncertainty(records, threshold: float):
    """Re-flag records against ``threshold``; returns the flagged list sorted
    by descending entropy plus population summary statistics."""
    if threshold < 0:
        raise ParameterError(f"threshold must be >= 0, got {threshold}")
    updated = [replace(r, flagged=r.entropy > threshold) for r in records]
    flagged = sorted(
        (r for r in updated if r.flagged), key=lambda r: (-r.entropy, r.sample_id)
    )
    entropies = np.array([r.entropy for r in updated], dtype=np.float64)
    misclassified = sum(
        1 for r in updated if r.true_label is not None and r.true_label != r.predicted_label
    )
    summary = {
        "mean_entropy": float(entropies.mean()) if len(entropies) else 0.0,
        "std_entropy": float(entropies.std()) if len(entropies) else 0.0,  # population std
        "hus_count": len(flagged),
        "misclassified": misclassified,
        "threshold": float(threshold),
    }
    return flagged, summary


def default_threshold(n_classes: int) -> float:
    """Half the maximum possible entropy, ln(N_cl) / 2."""
    return 0.5 * float(np.log(n_classes))


# ---------------------------------------------------------------------------
# report serialization

CSV_FIELDS = ["sample_id", "true_label", "predicted_label", "entropy", "max_prob", "flagged"]


def records_to_csv(records) -> str:
    buf = io.StringIO()
    writer = csv.writer(buf, lineterminator="\n")
    writer.writerow(CSV_FIELDS)
    for r in records:
        writer.writerow([
            r.sample_id,
            "" if r.true_label is None else r.true_label,
            r.predicted_label,
            f"{r.entropy:.9f}",
            f"{r.max_prob:.9f}",
            int(r.flagged),
        ])
    return buf.getvalue()


def records_from_csv(text: str):
    reader = csv.DictReader(io.StringIO(text))
    records = []
    for row in reader:
        max_prob = float(row["max_prob"])
        records.append(
            UncertaintyRecord(
                sample_id=int(row["sample_id"]),
                posterior=np.array([max_prob]),
                entropy=float(row["entropy"]),
                predicted_label=int(row["predicted_label"]),
                true_label=None if row["true_label"] == "" else int(row["true_label"]),
                flagged=bool(int(row["flagged"])),
            )
        )
    return records


def write_uncertainty_report(csv_path, json_path, records, threshold, m_passes, n_classes):
    flagged, summary = flag_high_uncertainty(records, threshold)
    summary["M"] = int(m_passes)
    summary["max_entropy"] = float(np.log(n_classes))
    refreshed = [replace(r, flagged=r.entropy > threshold) for r in records]
    atomic_write_text(csv_path, records_to_csv(refreshed))
    atomic_write_text(json_path, json.dumps(summary, indent=2, sort_keys=True) + "\n")
    return flagged, summary
