"""Canonical data model: multi-lead signal examples, labels, importance masks.

Layout convention: flat index = lead * T + sample (lead-major, 0-based).
Label convention: +1 = label present, -1 = absent.
"""

from __future__ import annotations

import hashlib
import io
import json
import struct
from dataclasses import dataclass, field, replace
from pathlib import Path

import numpy as np

SPLITS = ("train", "validation", "test")

BINARY_MAGIC = b"GMSK"
BINARY_VERSION = 1


class DataFormatError(ValueError):
    """A file or record failed validation; message names the offender."""


@dataclass(frozen=True)
class MaskSet:
    """Per-lead half-open sample intervals marking important signal regions."""

    intervals: tuple[tuple[int, int, int], ...]  # (lead, start, end_exclusive)
    source: str = "annotator"
    note: str = ""

    def __init__(self, intervals, source="annotator", note=""):
        object.__setattr__(self, "intervals", tuple((int(l), int(s), int(e)) for l, s, e in intervals))
        object.__setattr__(self, "source", source)
        object.__setattr__(self, "note", note)

    def validate(self, L, T):
        for iv in self.intervals:
            lead, start, end = iv
            if not (0 <= lead < L):
                raise DataFormatError(f"mask interval {iv}: lead out of range [0,{L})")
            if not (0 <= start < end <= T):
                raise DataFormatError(f"mask interval {iv}: samples out of range [0,{T}]")

    def flat_indices(self, L, T):
        return flatten_mask(self, L, T)


def flatten_mask(mask: MaskSet, L: int, T: int) -> np.ndarray:
    """Sorted, deduplicated flat indices covered by the mask's intervals."""
    mask.validate(L, T)
    if not mask.intervals:
        return np.empty(0, dtype=np.intp)
    parts = [np.arange(l * T + s, l * T + e, dtype=np.intp) for l, s, e in mask.intervals]
    return np.unique(np.concatenate(parts))


def unflatten_mask(indices, L: int, T: int) -> MaskSet:
    """Minimal interval list covering exactly the given flat indices."""
    idx = np.unique(np.asarray(indices, dtype=np.intp))
    if idx.size and (idx[0] < 0 or idx[-1] >= L * T):
        raise DataFormatError(f"flat index out of range [0,{L * T})")
    intervals = []
    for i in idx:
        lead, s = divmod(int(i), T)
        if intervals and intervals[-1][0] == lead and intervals[-1][2] == s:
            intervals[-1][2] = s + 1
        else:
            intervals.append([lead, s, s + 1])
    return MaskSet(tuple(tuple(iv) for iv in intervals), source="derived")


@dataclass
class SignalExample:
    id: str
    signal: np.ndarray  # (L, T) float64, millivolts
    sample_rate_hz: float
    labels: np.ndarray  # (K,) entries in {-1, +1}
    mask: MaskSet | None = None
    split: str = "train"

    def validate(self, K=None):
        if self.signal.ndim != 2 or self.signal.shape[0] < 1 or self.signal.shape[1] < 1:
            raise DataFormatError(f"example {self.id}: signal must be L x T, got {self.signal.shape}")
        if not np.isfinite(self.signal).all():
            raise DataFormatError(f"example {self.id}: non-finite sample")
        if K is not None and self.labels.shape != (K,):
            raise DataFormatError(
                f"example {self.id}: expected {K} labels, got {self.labels.shape}"
            )
        if not np.isin(self.labels, (-1, 1)).all():
            raise DataFormatError(f"example {self.id}: labels must be +/-1")
        if self.split not in SPLITS:
            raise DataFormatError(f"example {self.id}: unknown split {self.split!r}")
        if self.mask is not None:
            L, T = self.signal.shape
            self.mask.validate(L, T)


@dataclass
class DatasetManifest:
    examples: list[SignalExample]
    K: int
    label_names: list[str]
    L: int
    T: int
    sample_rate_hz: float

    def validate(self):
        if len(self.label_names) != self.K:
            raise DataFormatError(f"{self.K} labels but {len(self.label_names)} names")
        ids = set()
        for ex in self.examples:
            if ex.id in ids:
                raise DataFormatError(f"duplicate example id {ex.id!r}")
            ids.add(ex.id)
            if ex.signal.shape != (self.L, self.T):
                raise DataFormatError(
                    f"example {ex.id}: shape {ex.signal.shape} != ({self.L},{self.T})"
                )
            ex.validate(self.K)
        return self

    @property
    def feedback_ids(self):
        return {ex.id for ex in self.examples if ex.mask is not None}

    def split(self, name):
        return [ex for ex in self.examples if ex.split == name]

    def by_id(self, example_id):
        for ex in self.examples:
            if ex.id == example_id:
                return ex
        raise KeyError(example_id)

    def truncate(self, T_new: int) -> "DatasetManifest":
        """First T_new samples per lead; masks are clipped accordingly."""
        if not (1 <= T_new <= self.T):
            raise DataFormatError(f"truncate length {T_new} outside [1,{self.T}]")
        out = []
        for ex in self.examples:
            mask = ex.mask
            if mask is not None:
                ivs = [(l, s, min(e, T_new)) for l, s, e in mask.intervals if s < T_new]
                mask = MaskSet(ivs, source=mask.source, note=mask.note)
            out.append(
                replace(ex, signal=ex.signal[:, :T_new].copy(), mask=mask)
            )
        return DatasetManifest(out, self.K, list(self.label_names), self.L, T_new, self.sample_rate_hz)

    def with_mask_fraction(self, fraction: float, seed: int = 0, split: str = "train") -> "DatasetManifest":
        """Keep masks on a seeded random fraction of one split; strip all others."""
        rng = np.random.default_rng(seed)
        target = [ex for ex in self.examples if ex.split == split and ex.mask is not None]
        n_keep = int(round(fraction * len(target)))
        keep = (
            set(rng.permutation(np.array([e.id for e in target]))[:n_keep].tolist())
            if target
            else set()
        )
        out = [ex if ex.id in keep else replace(ex, mask=None) for ex in self.examples]
        return DatasetManifest(out, self.K, list(self.label_names), self.L, self.T, self.sample_rate_hz)

    def strip_masks(self, split=None) -> "DatasetManifest":
        out = [
            replace(ex, mask=None) if (split is None or ex.split == split) else ex
            for ex in self.examples
        ]
        return DatasetManifest(out, self.K, list(self.label_names), self.L, self.T, self.sample_rate_hz)

    def fingerprint(self) -> str:
        return hashlib.sha256(to_binary_bytes(self)).hexdigest()


# ---------------------------------------------------------------------------
# synthetic data


@dataclass(frozen=True)
class SyntheticSpec:
    """Desk-scale generator with known ground-truth evidence windows.

    Each class k owns a fixed evidence window on a fixed lead; positive
    examples carry a Gaussian-bump motif there.  With probability
    ``spurious_correlation`` a train example additionally carries a
    distractor bump outside any evidence window, correlated with its
    primary label; on validation/test the distractor appears with the same
    marginal rate but independently of the labels, so relying on it hurts.
    """

    n_examples: int = 2600
    L: int = 4
    T: int = 80
    K: int = 4
    evidence_window_len: int = 10
    noise_sigma: float = 0.5
    spurious_correlation: float = 0.8
    seed: int = 0
    n_val: int = 300
    n_test: int = 300

    def validate(self):
        for name in ("n_examples", "L", "T", "K", "evidence_window_len"):
            if getattr(self, name) < 1:
                raise DataFormatError(f"synthetic spec: {name} must be positive")
        if self.evidence_window_len > self.T:
            raise DataFormatError("synthetic spec: evidence window longer than T")
        if self.noise_sigma < 0:
            raise DataFormatError("synthetic spec: noise_sigma must be >= 0")
        if not (0.0 <= self.spurious_correlation <= 1.0):
            raise DataFormatError("synthetic spec: spurious_correlation must be in [0,1]")
        if self.n_val + self.n_test >= self.n_examples:
            raise DataFormatError("synthetic spec: splits exhaust the dataset")
        if self.spurious_correlation > 0 and self.T < 2 * self.evidence_window_len:
            raise DataFormatError(
                "synthetic spec: need T >= 2*evidence_window_len to place distractors"
            )
        return self


def _evidence_window(k, spec):
    # evidence lives in the first half (when it fits) so distractor windows
    # in the second half are disjoint from every evidence window
    lead = k % spec.L
    w = spec.evidence_window_len
    half = spec.T // 2
    span = half - w + 1 if half >= w else spec.T - w + 1
    start = (k * 13) % max(1, span)
    return lead, start, start + w


def _distractor_window(k, spec):
    lead = (k + 1) % spec.L
    w = spec.evidence_window_len
    lo = spec.T // 2
    span = spec.T - w - lo + 1
    start = lo + (k * 7) % max(1, span)
    return lead, start, start + w


def _motif(k, spec):
    w = spec.evidence_window_len
    t = np.arange(w)
    sigma = w * (0.12 + 0.06 * (k % 4))
    return np.exp(-0.5 * ((t - (w - 1) / 2) / sigma) ** 2)


def generate_synthetic(spec: SyntheticSpec) -> DatasetManifest:
    """Deterministic synthetic dataset with planted class motifs."""
    spec.validate()
    rng = np.random.default_rng(spec.seed)
    n, K, L, T = spec.n_examples, spec.K, spec.L, spec.T

    # round-robin primary class guarantees balance; extra labels at 15%
    primary = rng.permutation(np.arange(n) % K)
    extra = rng.random((n, K)) < 0.15
    split_names = np.array(
        ["train"] * (n - spec.n_val - spec.n_test)
        + ["validation"] * spec.n_val
        + ["test"] * spec.n_test
    )
    split_names = split_names[rng.permutation(n)]

    examples = []
    for i in range(n):
        labels = np.full(K, -1, dtype=np.int8)
        labels[primary[i]] = 1
        labels[extra[i]] = 1
        signal = np.zeros((L, T))
        intervals = []
        for k in np.flatnonzero(labels == 1):
            lead, s, e = _evidence_window(int(k), spec)
            signal[lead, s:e] += _motif(int(k), spec)
            intervals.append((lead, s, e))

        plant = rng.random() < spec.spurious_correlation
        if split_names[i] == "train":
            dk = int(primary[i])
        else:
            dk = int(rng.integers(K))  # independent of labels: spurious only in-train
        if plant:
            # distractor is cleaner (larger amplitude) than the evidence, so a
            # model free to use it will prefer it
            lead, s, e = _distractor_window(dk, spec)
            signal[lead, s:e] += 1.5 * _motif(dk, spec)

        if spec.noise_sigma > 0:
            signal += rng.normal(0.0, spec.noise_sigma, (L, T))
        # quantize to f32 grid so both on-disk formats round-trip exactly
        signal = signal.astype(np.float32).astype(np.float64)

        examples.append(
            SignalExample(
                id=f"syn-{i:05d}",
                signal=signal,
                sample_rate_hz=100.0,
                labels=labels,
                mask=MaskSet(intervals, source="ground_truth"),
                split=str(split_names[i]),
            )
        )

    manifest = DatasetManifest(
        examples=examples,
        K=K,
        label_names=[f"class_{k}" for k in range(K)],
        L=L,
        T=T,
        sample_rate_hz=100.0,
    )
    return manifest.validate()


# ---------------------------------------------------------------------------
# csv_dir format


def save_dataset(manifest: DatasetManifest, path, format: str = "csv_dir"):
    if format == "csv_dir":
        _save_csv_dir(manifest, Path(path))
    elif format == "binary_records":
        Path(path).write_bytes(to_binary_bytes(manifest))
    else:
        raise DataFormatError(f"unknown format {format!r}")


def load_dataset(path, format: str = "csv_dir") -> DatasetManifest:
    if format == "csv_dir":
        return _load_csv_dir(Path(path))
    if format == "binary_records":
        return from_binary_bytes(Path(path).read_bytes())
    raise DataFormatError(f"unknown format {format!r}")


def _save_csv_dir(manifest, root: Path):
    root.mkdir(parents=True, exist_ok=True)
    (root / "signals").mkdir(exist_ok=True)
    records = []
    for ex in manifest.examples:
        records.append(
            {
                "id": ex.id,
                "signal_file": f"signals/{ex.id}.csv",
                "labels": [int(v) for v in ex.labels],
                "split": ex.split,
            }
        )
        lines = [",".join(repr(float(v)) for v in row) for row in ex.signal]
        (root / "signals" / f"{ex.id}.csv").write_text("\n".join(lines) + "\n")
        if ex.mask is not None:
            (root / "masks").mkdir(exist_ok=True)
            (root / "masks" / f"{ex.id}.json").write_text(
                json.dumps(
                    {
                        "intervals": [list(iv) for iv in ex.mask.intervals],
                        "source": ex.mask.source,
                        "note": ex.mask.note,
                    }
                )
            )
    meta = {
        "K": manifest.K,
        "L": manifest.L,
        "T": manifest.T,
        "sample_rate_hz": manifest.sample_rate_hz,
        "label_names": manifest.label_names,
        "records": records,
    }
    (root / "manifest.json").write_text(json.dumps(meta, indent=1))


def _load_csv_dir(root: Path) -> DatasetManifest:
    mpath = root / "manifest.json"
    if not mpath.exists():
        raise DataFormatError(f"{mpath}: manifest.json not found")
    meta = json.loads(mpath.read_text())
    K, L, T = meta["K"], meta["L"], meta["T"]
    names = meta["label_names"]
    examples = []
    for pos, rec in enumerate(meta["records"]):
        rid = rec.get("id", f"<record {pos}>")
        sig_path = root / rec["signal_file"]
        try:
            signal = np.loadtxt(sig_path, delimiter=",", ndmin=2)
        except Exception as e:
            raise DataFormatError(f"{sig_path}: unreadable signal ({e})") from e
        if signal.shape != (L, T):
            raise DataFormatError(f"{sig_path}: record {rid}: shape {signal.shape} != ({L},{T})")
        labels = np.asarray(rec["labels"], dtype=np.int8)
        if labels.shape != (K,):
            raise DataFormatError(f"{mpath}: record {rid}: expected {K} labels, got {labels.size}")
        mask = None
        mask_path = root / "masks" / f"{rid}.json"
        if mask_path.exists():
            try:
                mj = json.loads(mask_path.read_text())
                mask = MaskSet(
                    [tuple(iv) for iv in mj["intervals"]],
                    source=mj.get("source", "annotator"),
                    note=mj.get("note", ""),
                )
            except (KeyError, TypeError, json.JSONDecodeError) as e:
                raise DataFormatError(f"{mask_path}: malformed mask file ({e})") from e
        examples.append(
            SignalExample(
                id=rid,
                signal=signal,
                sample_rate_hz=float(meta["sample_rate_hz"]),
                labels=labels,
                mask=mask,
                split=rec["split"],
            )
        )
    return DatasetManifest(examples, K, names, L, T, float(meta["sample_rate_hz"])).validate()


# ---------------------------------------------------------------------------
# binary_records format
#
# magic "GMSK", u16 version, u32 header length + JSON header (K, label
# names, sample rate, splits), then records: u16 id length + utf-8 id,
# u32 L, u32 T, L*T f32 samples row-major, K i8 labels, u32 mask interval
# count + (u32 lead, u32 start, u32 end) triples.  Little-endian.


def to_binary_bytes(manifest: DatasetManifest) -> bytes:
    buf = io.BytesIO()
    buf.write(BINARY_MAGIC)
    buf.write(struct.pack("<H", BINARY_VERSION))
    header = json.dumps(
        {
            "K": manifest.K,
            "label_names": manifest.label_names,
            "sample_rate_hz": manifest.sample_rate_hz,
            "splits": {ex.id: ex.split for ex in manifest.examples},
            "mask_sources": {
                ex.id: ex.mask.source for ex in manifest.examples if ex.mask is not None
            },
        },
        sort_keys=True,
    ).encode()
    buf.write(struct.pack("<I", len(header)))
    buf.write(header)
    for ex in manifest.examples:
        eid = ex.id.encode()
        buf.write(struct.pack("<H", len(eid)))
        buf.write(eid)
        L, T = ex.signal.shape
        buf.write(struct.pack("<II", L, T))
        buf.write(ex.signal.astype("<f4").tobytes())
        buf.write(ex.labels.astype(np.int8).tobytes())
        ivs = ex.mask.intervals if ex.mask is not None else ()
        buf.write(struct.pack("<I", len(ivs)))
        for l, s, e in ivs:
            buf.write(struct.pack("<III", l, s, e))
    return buf.getvalue()


def from_binary_bytes(raw: bytes) -> DatasetManifest:
    buf = io.BytesIO(raw)

    def read(n, what):
        b = buf.read(n)
        if len(b) != n:
            raise DataFormatError(f"binary_records: truncated while reading {what}")
        return b

    if read(4, "magic") != BINARY_MAGIC:
        raise DataFormatError("binary_records: bad magic")
    (version,) = struct.unpack("<H", read(2, "version"))
    if version != BINARY_VERSION:
        raise DataFormatError(f"binary_records: unsupported version {version}")
    (hlen,) = struct.unpack("<I", read(4, "header length"))
    header = json.loads(read(hlen, "header"))
    K = header["K"]
    examples = []
    L = T = None
    while True:
        peek = buf.read(2)
        if not peek:
            break
        (idlen,) = struct.unpack("<H", peek)
        eid = read(idlen, "id").decode()
        L, T = struct.unpack("<II", read(8, f"record {eid} shape"))
        signal = np.frombuffer(read(4 * L * T, f"record {eid} samples"), dtype="<f4")
        signal = signal.astype(np.float64).reshape(L, T)
        labels = np.frombuffer(read(K, f"record {eid} labels"), dtype=np.int8).copy()
        (nmask,) = struct.unpack("<I", read(4, f"record {eid} mask count"))
        mask = None
        if nmask or eid in header.get("mask_sources", {}):
            ivs = [
                struct.unpack("<III", read(12, f"record {eid} mask interval"))
                for _ in range(nmask)
            ]
            mask = MaskSet(ivs, source=header.get("mask_sources", {}).get(eid, "annotator"))
        examples.append(
            SignalExample(
                id=eid,
                signal=signal,
                sample_rate_hz=float(header["sample_rate_hz"]),
                labels=labels,
                mask=mask,
                split=header["splits"][eid],
            )
        )
    if L is None:
        raise DataFormatError("binary_records: no records")
    return DatasetManifest(
        examples, K, header["label_names"], L, T, float(header["sample_rate_hz"])
    ).validate()
