"""SI-SDR, SNR and per-SNR-level evaluation reports."""

from __future__ import annotations

import csv
import io
from dataclasses import dataclass, field

import numpy as np

from .errors import CompletenessError, DegenerateInputError, ShapeError

SI_SDR_CAP_DB = 100.0
IDENTITY_TAG = "identity"


def _samples(x):
    return np.asarray(getattr(x, "samples", x), dtype=np.float64)


def si_sdr(reference, estimate):
    """Scale-invariant SDR in dB, capped at +100 dB for a vanishing residual."""
    s, s_hat = _samples(reference), _samples(estimate)
    if s.shape != s_hat.shape:
        raise ShapeError(f"si_sdr: lengths {s.size} and {s_hat.size} differ")
    ref_energy = float(np.dot(s, s))
    if ref_energy == 0:
        raise DegenerateInputError("si_sdr: reference has zero energy")
    alpha = float(np.dot(s_hat, s)) / ref_energy
    target = alpha * s
    resid = target - s_hat
    num, den = float(np.dot(target, target)), float(np.dot(resid, resid))
    if den <= num * 10.0 ** (-SI_SDR_CAP_DB / 10.0):
        return SI_SDR_CAP_DB
    if num == 0:
        return -SI_SDR_CAP_DB
    return float(10.0 * np.log10(num / den))


def snr(signal, noise):
    p_sig = float(np.mean(_samples(signal) ** 2))
    p_noise = float(np.mean(_samples(noise) ** 2))
    if np.shape(_samples(signal)) != np.shape(_samples(noise)):
        raise ShapeError("snr: signal and noise lengths differ")
    if p_noise == 0:
        raise DegenerateInputError("snr: noise has zero power")
    return float(10.0 * np.log10(p_sig / p_noise))


@dataclass
class ReportRow:
    snr_level_db: float
    system: str
    si_sdr_mean: float
    si_sdr_ci95: float
    count: int
    delta: float | None = None

    @property
    def low_count(self):
        return self.count < 2


@dataclass
class EvalReport:
    rows: list
    metadata: dict = field(default_factory=dict)
    per_clip: dict = field(default_factory=dict)  # system -> {record_id: si_sdr}

    def row(self, level, system):
        for r in self.rows:
            if r.snr_level_db == level and r.system == system:
                return r
        raise KeyError((level, system))

    def systems(self):
        return sorted({r.system for r in self.rows}, key=lambda s: (s != IDENTITY_TAG, s))

    def levels(self):
        return sorted({r.snr_level_db for r in self.rows})

    def to_text(self):
        head = f"{'SNR [dB]':>9}  {'system':<14}{'SI-SDR mean':>12}{'ci95':>8}{'delta':>8}{'n':>5}"
        lines = [head, "-" * len(head)]
        for r in self.rows:
            delta = "" if r.delta is None else f"{r.delta:+8.2f}"
            flag = "  (low count)" if r.low_count else ""
            lines.append(
                f"{r.snr_level_db:>9g}  {r.system:<14}{r.si_sdr_mean:>12.2f}"
                f"{r.si_sdr_ci95:>8.2f}{delta:>8}{r.count:>5d}{flag}"
            )
        for key in sorted(self.metadata):
            lines.append(f"# {key}: {self.metadata[key]}")
        return "\n".join(lines) + "\n"

    def to_csv(self):
        buf = io.StringIO()
        w = csv.writer(buf, lineterminator="\n")
        w.writerow(["snr_level_db", "system", "si_sdr_mean", "si_sdr_ci95", "count", "delta"])
        for r in self.rows:
            w.writerow([
                f"{r.snr_level_db:g}", r.system, f"{r.si_sdr_mean:.6f}", f"{r.si_sdr_ci95:.6f}",
                r.count, "" if r.delta is None else f"{r.delta:.6f}",
            ])
        return buf.getvalue()


def mean_ci95(values):
    v = np.asarray(values, dtype=np.float64)
    if v.size < 2:
        return float(v.mean()), 0.0
    return float(v.mean()), float(1.96 * v.std(ddof=1) / np.sqrt(v.size))


def evaluate(manifest, outputs, references, system, noisy=None, metadata=None):
    """Per-SNR-level SI-SDR table for the eval split.

    ``outputs``/``references``/``noisy`` map record id to clip or array.
    When ``noisy`` is given the unprocessed input is scored as the
    ``identity`` system and every other row gets a delta against it.
    """
    records = manifest.split("eval")
    systems = {system: outputs}
    if noisy is not None:
        systems = {IDENTITY_TAG: noisy, **systems}
    per_clip = {}
    for tag, outs in systems.items():
        missing = [r.id for r in records if r.id not in outs]
        if missing:
            raise CompletenessError(f"{tag}: missing outputs for {len(missing)} records", missing)
        scores = {}
        for r in records:
            ref = _samples(references[r.id])
            est = _samples(outs[r.id])
            if ref.shape != est.shape:
                raise ShapeError(f"{r.id}: output length {est.size} != reference {ref.size}")
            scores[r.id] = si_sdr(ref, est)
        per_clip[tag] = scores
    return aggregate(manifest, per_clip, metadata)


def aggregate(manifest, per_clip, metadata=None):
    """Group per-clip scores by SNR level; rows sorted by level then system."""
    level_of = {r.id: r.snr_db for r in manifest.split("eval")}
    rows = []
    for level in sorted(set(level_of.values())):
        ids = [rid for rid, lv in level_of.items() if lv == level]
        means = {}
        for tag in sorted(per_clip, key=lambda s: (s != IDENTITY_TAG, s)):
            vals = [per_clip[tag][rid] for rid in ids if rid in per_clip[tag]]
            if not vals:
                continue
            m, ci = mean_ci95(vals)
            means[tag] = m
            rows.append(ReportRow(level, tag, m, ci, len(vals)))
        if IDENTITY_TAG in means:
            for r in rows:
                if r.snr_level_db == level and r.system != IDENTITY_TAG:
                    r.delta = r.si_sdr_mean - means[IDENTITY_TAG]
    return EvalReport(rows, dict(metadata or {}), per_clip)


def merge_reports(*reports):
    """Combine reports over the same eval split (identity rows deduplicated)."""
    per_clip, metadata = {}, {}
    for rep in reports:
        per_clip.update(rep.per_clip)
        metadata.update(rep.metadata)
    return per_clip, metadata
