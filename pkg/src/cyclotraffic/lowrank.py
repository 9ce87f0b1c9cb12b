"""Spatial basis estimation, MDL model-order selection and Welch spectra of
temporal singular vectors."""
from __future__ import annotations

from dataclasses import dataclass, field

import numpy as np

from .core import DAY, TrafficMatrix
from .errors import ConvergenceFailure, DegenerateSpectrum, DimensionMismatch, SeriesTooShort

SAMPLES_PER_DAY = DAY // 600


@dataclass(frozen=True, eq=False)
class SpatialBasis:
    """First ``k`` left singular vectors of a travel-time matrix.

    ``right`` holds the matching right singular vectors (n x k) when requested;
    it is diagnostic only and is not persisted with the basis.
    """

    u_bar: np.ndarray
    singular_values: np.ndarray
    trained_on: dict = field(default_factory=dict)
    right: np.ndarray | None = None

    @property
    def k(self) -> int:
        return self.u_bar.shape[1]

    @property
    def m(self) -> int:
        return self.u_bar.shape[0]

    def reconstruct(self) -> np.ndarray:
        if self.right is None:
            raise ValueError("right singular vectors were not computed")
        return (self.u_bar * self.singular_values[:self.k]) @ self.right.T


def _fix_signs(vecs):
    """Make the largest-magnitude entry of every column positive."""
    idx = np.argmax(np.abs(vecs), axis=0)
    signs = np.sign(vecs[idx, np.arange(vecs.shape[1])])
    signs[signs == 0] = 1.0
    return vecs * signs


def _sym_eig_desc(gram):
    try:
        evals, evecs = np.linalg.eigh(gram)
    except np.linalg.LinAlgError as exc:
        raise ConvergenceFailure(str(exc)) from exc
    return evals[::-1], evecs[:, ::-1]


def truncated_svd(matrix, k: int, with_right: bool = False) -> SpatialBasis:
    """Truncated SVD through the eigendecomposition of the smaller Gram matrix.

    ``matrix`` is a fully observed :class:`TrafficMatrix` or a plain 2-D array.
    The full singular-value list (length ``min(m, n)``) is always returned.
    """
    if isinstance(matrix, TrafficMatrix):
        if not matrix.fully_observed:
            raise ValueError("truncated_svd needs a fully observed matrix")
        w = np.asarray(matrix.values)
        provenance = {"start_epoch": matrix.grid.start_epoch, "n": matrix.n, "m": matrix.m,
                      "resolution": matrix.grid.resolution}
    else:
        w = np.asarray(matrix, dtype=np.float64)
        provenance = {"m": w.shape[0], "n": w.shape[1]}
    m, n = w.shape
    if not 1 <= k <= min(m, n):
        raise DimensionMismatch(f"k={k} not in 1..{min(m, n)}")

    if m <= n:
        evals, evecs = _sym_eig_desc(w @ w.T)
        sv = np.sqrt(np.clip(evals, 0.0, None))
        u = _fix_signs(evecs[:, :k])
        right = None
        if with_right:
            right = (w.T @ u) / np.where(sv[:k] > 0, sv[:k], 1.0)
    else:
        evals, evecs = _sym_eig_desc(w.T @ w)
        sv = np.sqrt(np.clip(evals, 0.0, None))
        v = evecs[:, :k]
        u = _fix_signs((w @ v) / np.where(sv[:k] > 0, sv[:k], 1.0))
        # re-orthonormalise: columns of W v / sigma drift when sigma is small
        u, _ = np.linalg.qr(u)
        u = _fix_signs(u)
        right = (w.T @ u) / np.where(sv[:k] > 0, sv[:k], 1.0) if with_right else None
    return SpatialBasis(u, sv, provenance, right)


def mdl_curve(singular_values, m: int, n: int) -> np.ndarray:
    """MDL score for every candidate order ``k = 0 .. m-1``.

    Uses sample-covariance eigenvalues ``sigma**2 / n`` in the Wax-Kailath form
    ``-n (m-k) log(geo_mean / arith_mean) + k (2m - k) log(n) / 2``.
    """
    if m > n:
        raise DimensionMismatch("mdl_order expects m <= n; transpose the matrix")
    sv = np.asarray(singular_values, dtype=np.float64)
    if len(sv) < m:
        raise DimensionMismatch(f"need {m} singular values, got {len(sv)}")
    lam = np.sort(sv[:m] ** 2 / n)[::-1]
    scores = np.empty(m)
    for k in range(m):
        tail = lam[k:]
        if np.any(tail <= 0):
            raise DegenerateSpectrum(f"non-positive eigenvalue in tail at k={k}")
        log_ratio = np.mean(np.log(tail)) - np.log(np.mean(tail))
        scores[k] = -n * (m - k) * log_ratio + 0.5 * k * (2 * m - k) * np.log(n)
    return scores


def mdl_order(singular_values, m: int, n: int) -> tuple[int, np.ndarray]:
    """``(k*, curve)``; ``k*`` minimises the MDL curve."""
    curve = mdl_curve(singular_values, m, n)
    return int(np.argmin(curve)), curve


@dataclass(frozen=True, eq=False)
class SpectrumReport:
    mode: int | None
    frequencies: np.ndarray  # cycles per day
    psd: np.ndarray
    fs: float
    nperseg: int
    noverlap: int
    nfft: int
    window: str = "hann"

    @property
    def bin_width(self) -> float:
        return self.fs / self.nfft

    def peak_frequency(self, fmin: float = 0.0) -> float:
        sel = self.frequencies >= fmin
        return float(self.frequencies[sel][np.argmax(self.psd[sel])])

    def local_maxima(self) -> np.ndarray:
        p = self.psd
        idx = np.flatnonzero((p[1:-1] > p[:-2]) & (p[1:-1] >= p[2:])) + 1
        return idx


def _hann(n):
    # periodic Hann, the usual choice for spectral averaging
    return 0.5 - 0.5 * np.cos(2 * np.pi * np.arange(n) / n)


def welch_psd(series, fs: float = SAMPLES_PER_DAY, nperseg: int | None = None,
              noverlap: int | None = None, nfft: int = SAMPLES_PER_DAY * 28,
              detrend: bool = False, mode: int | None = None) -> SpectrumReport:
    """One-sided Welch PSD estimate with a Hann window.

    Frequencies are in cycles per day when ``fs`` is samples per day. By default
    segments are ``nfft`` samples long with 50% overlap; no detrending is
    applied, so a constant series keeps its power in the DC bin.
    """
    x = np.asarray(series, dtype=np.float64)
    if x.ndim != 1:
        raise DimensionMismatch("series must be 1-D")
    nperseg = nfft if nperseg is None else nperseg
    noverlap = nperseg // 2 if noverlap is None else noverlap
    if nperseg > len(x):
        raise SeriesTooShort(f"segment length {nperseg} exceeds series length {len(x)}")
    if not 0 <= noverlap < nperseg:
        raise ValueError("overlap must be in [0, nperseg)")
    if nfft < nperseg:
        raise ValueError("nfft must be >= nperseg")
    win = _hann(nperseg)
    step = nperseg - noverlap
    starts = range(0, len(x) - nperseg + 1, step)
    acc = np.zeros(nfft // 2 + 1)
    for s in starts:
        seg = x[s:s + nperseg]
        if detrend:
            seg = seg - seg.mean()
        acc += np.abs(np.fft.rfft(seg * win, nfft)) ** 2
    psd = acc / (len(starts) * fs * np.sum(win ** 2))
    # one-sided: double everything except DC and (even nfft) Nyquist
    if nfft % 2 == 0:
        psd[1:-1] *= 2
    else:
        psd[1:] *= 2
    freqs = np.arange(nfft // 2 + 1) * fs / nfft
    return SpectrumReport(mode, freqs, psd, fs, nperseg, noverlap, nfft)


def psd_of_modes(basis_or_right, modes, **welch_kw) -> list[SpectrumReport]:
    """Welch spectra of selected right singular vectors (1-based mode indices)."""
    right = basis_or_right.right if isinstance(basis_or_right, SpatialBasis) else basis_or_right
    if right is None:
        raise ValueError("right singular vectors not available; use truncated_svd(with_right=True)")
    right = np.asarray(right)
    reports = []
    for mode in modes:
        if not 1 <= mode <= right.shape[1]:
            raise IndexError(f"mode {mode} outside 1..{right.shape[1]}")
        reports.append(welch_psd(right[:, mode - 1], mode=mode, **welch_kw))
    return reports


def save_basis(path, basis: SpatialBasis):
    from .io import write_container

    header = {"kind": "spatial_basis", "k": basis.k, "m": basis.m,
              "provenance": basis.trained_on}
    write_container(path, header, {"u_bar": basis.u_bar,
                                   "singular_values": basis.singular_values})


def load_basis(path) -> SpatialBasis:
    from .io import read_container

    header, arrays = read_container(path)
    if header.get("kind") != "spatial_basis":
        raise ValueError(f"{path}: not a spatial basis file")
    return SpatialBasis(arrays["u_bar"], arrays["singular_values"], header.get("provenance", {}))
