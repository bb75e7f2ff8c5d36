"""Mode-locking objective: cavity energy divided by spectral kurtosis.

Three kurtosis measures are available (``RewardConfig.kurtosis``):

``"amplitude"`` (default)
    Pearson kurtosis, taken across frequency bins, of the spectral amplitudes
    ``sqrt(S_k)``. It is small for a single clean pulse whose spectrum is
    smooth and broad, and large for narrow-band (cw) or spiky/multi-peaked
    spectra.
``"moment"``
    Raw fourth central moment of the spectral intensity in frequency,
    ``sum((w - w_mean)**4 S) / sum(S)``.
``"normalized"``
    The same moment divided by the squared variance.

See the project notes for why the default differs from the raw moment.
"""
from __future__ import annotations

from dataclasses import dataclass

import numpy as np

from modelock.cavity import FieldPair, field_energy

KURTOSIS_KINDS = ("amplitude", "moment", "normalized")
POLARIZATIONS = ("both", "u", "v")


@dataclass(frozen=True)
class RewardConfig:
    """Raw-reward rescaling ``(r - center) / scale`` and kurtosis options.

    ``blowup_penalty`` is expressed in raw reward units.
    """

    center: float = 0.0
    scale: float = 1.0
    blowup_penalty: float = -5.0
    kurtosis: str = "amplitude"
    polarization: str = "both"

    def __post_init__(self):
        if not self.scale > 0:
            raise ValueError(f"scale must be positive, got {self.scale}")
        if not self.blowup_penalty < self.center - 3 * self.scale:
            raise ValueError("blowup_penalty must be below center - 3*scale")
        if self.kurtosis not in KURTOSIS_KINDS:
            raise ValueError(f"kurtosis must be one of {KURTOSIS_KINDS}")
        if self.polarization not in POLARIZATIONS:
            raise ValueError(f"polarization must be one of {POLARIZATIONS}")


def power_spectrum(fields: FieldPair, polarization: str = "both") -> np.ndarray:
    """Spectral intensity ``|u_hat|^2 + |v_hat|^2`` in FFT bin order."""
    if polarization == "u":
        return np.abs(np.fft.fft(fields.u)) ** 2
    if polarization == "v":
        return np.abs(np.fft.fft(fields.v)) ** 2
    return np.abs(np.fft.fft(fields.u)) ** 2 + np.abs(np.fft.fft(fields.v)) ** 2


def spectral_fourth_moment(fields: FieldPair, normalized: bool = False,
                           polarization: str = "both") -> float:
    """Fourth central moment of the spectral intensity over angular frequency."""
    S = power_spectrum(fields, polarization)
    total = S.sum()
    if not total > 0:
        raise ValueError("undefined kurtosis: field has zero spectral power")
    w = fields.grid.omega
    mean = np.dot(w, S) / total
    d2 = (w - mean) ** 2
    m4 = np.dot(d2 * d2, S) / total
    if normalized:
        m2 = np.dot(d2, S) / total
        return float(m4 / m2**2) if m2 > 0 else 1.0
    return float(m4)


def spectral_kurtosis(fields: FieldPair, kind: str = "amplitude",
                      polarization: str = "both") -> float:
    """Spectral kurtosis ``M`` of the fields (see module docstring for ``kind``)."""
    if kind == "moment":
        return spectral_fourth_moment(fields, False, polarization)
    if kind == "normalized":
        return spectral_fourth_moment(fields, True, polarization)
    if kind != "amplitude":
        raise ValueError(f"unknown kurtosis kind {kind!r}")
    amp = np.sqrt(power_spectrum(fields, polarization))
    peak = amp.max()
    if not peak > 0:
        raise ValueError("undefined kurtosis: field has zero spectral power")
    amp = amp / peak  # scale-free; avoids underflow for decaying fields
    d = amp - amp.mean()
    var = np.mean(d * d)
    if var <= 1e-24:
        return 1.0  # flat spectrum; the lower bound of any kurtosis
    return float(np.mean(d**4) / var**2)


M_FLOOR = 1e-12  # single-bin spectra have zero raw moment


def reward(fields: FieldPair, cfg: RewardConfig | None = None) -> float:
    """Raw objective ``r = E / M``; zero fields give 0.

    ``M`` is floored at ``M_FLOOR`` so the raw-moment variant stays finite on
    a pure cw spectrum.
    """
    cfg = cfg or RewardConfig()
    E = field_energy(fields)
    if E == 0.0:
        return 0.0
    try:
        M = spectral_kurtosis(fields, cfg.kurtosis, cfg.polarization)
    except ValueError:  # selected polarization carries no power
        return 0.0
    return E / max(M, M_FLOOR)


def rescale(r: float, cfg: RewardConfig) -> float:
    return (r - cfg.center) / cfg.scale


def unscale(x: float, cfg: RewardConfig) -> float:
    return x * cfg.scale + cfg.center


def calibrate(raw_rewards, base: RewardConfig | None = None,
              min_scale: float = 1e-3, penalty_margin: float = 5.0) -> RewardConfig:
    """Centre on the median and scale by the interquartile range of samples.

    The blow-up penalty is placed ``penalty_margin`` scales below the centre.
    """
    base = base or RewardConfig()
    r = np.asarray(raw_rewards, dtype=float)
    r = r[np.isfinite(r)]
    if r.size == 0:
        raise ValueError("no finite reward samples to calibrate from")
    q1, med, q3 = np.percentile(r, [25, 50, 75])
    scale = max(float(q3 - q1), min_scale)
    return RewardConfig(center=float(med), scale=scale,
                        blowup_penalty=float(med - penalty_margin * scale),
                        kurtosis=base.kurtosis, polarization=base.polarization)
