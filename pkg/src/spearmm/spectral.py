"""Singular-value spectra and spectral signal-to-noise estimation.

The SNR estimator separates a weight matrix's spectrum into a noise bulk and
signal outliers using a random-matrix-style threshold: for i.i.d. entries of
standard deviation s, singular values concentrate below s*(sqrt(m)+sqrt(n)).
The per-entry scale s is unknown, so it is estimated from the lower half of
the spectrum and refined to a fixed point of the resulting partition; the
refinement removes the downward bias a single lower-half pass has on
noise-dominated matrices.
"""

from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from .validation import as_matrix, check_finite_matrix

#: Shared denominator guard for every ratio in the scoring pipeline.
EPSILON = 1e-8


@dataclass
class Spectrum:
    """Non-increasing singular values of an m x n matrix."""

    singular_values: np.ndarray
    rows: int
    cols: int

    def top_k_sum(self, k: int) -> float:
        k = min(int(k), len(self.singular_values))
        return float(self.singular_values[:k].sum())


@dataclass
class SnrEstimate:
    """Spectral signal-to-noise split of a weight matrix.

    ``noise_threshold`` is the largest singular value attributed to noise;
    energies are sums of squared singular values on each side of it, and
    ``snr = signal_energy / (noise_energy + EPSILON)``.
    """

    snr: float
    noise_threshold: float
    signal_energy: float
    noise_energy: float
    noise_scale: float


def singular_values(w, name: str = "weights") -> Spectrum:
    """Singular values in descending order; rejects non-finite entries."""
    mat = check_finite_matrix(as_matrix(w, name), name)
    m, n = mat.shape
    values = np.linalg.svd(mat, compute_uv=False)
    return Spectrum(singular_values=np.asarray(values, dtype=np.float64), rows=m, cols=n)


def estimate_snr(w, name: str = "weights") -> SnrEstimate:
    """Estimate how much of the spectrum rises above the noise bulk.

    Starting from the smallest ceil(k/2) singular values as the noise set,
    iterate: s = sqrt(mean(sigma^2 over noise set) / max(m, n)),
    tau = s * (sqrt(m) + sqrt(n)), new noise set = {sigma <= tau}, until the
    set is stable (the update is monotone, so this terminates within k steps).
    A 1xN vector always lands entirely below tau, so vectors score snr = 0.
    """
    spectrum = singular_values(w, name)
    m, n = spectrum.rows, spectrum.cols
    sig_asc = np.sort(spectrum.singular_values)  # ascending
    k = len(sig_asc)
    sq = sig_asc**2

    count = (k + 1) // 2
    scale = 0.0
    tau = 0.0
    for _ in range(k + 1):
        scale = float(np.sqrt(np.mean(sq[:count]) / max(m, n)))
        tau = scale * (np.sqrt(m) + np.sqrt(n))
        new_count = int(np.searchsorted(sig_asc, tau, side="right"))
        if new_count == count:
            break
        count = new_count

    noise_energy = float(sq[:count].sum())
    signal_energy = float(sq[count:].sum())
    return SnrEstimate(
        snr=signal_energy / (noise_energy + EPSILON),
        noise_threshold=tau,
        signal_energy=signal_energy,
        noise_energy=noise_energy,
        noise_scale=scale,
    )
