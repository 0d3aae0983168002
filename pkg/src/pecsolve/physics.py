"""Model closures: recombination, photogeneration, interface transfer, doping.

Charge-number conventions.  Electrons carry alpha_n = -1 and holes
alpha_p = +1.  The redox pair must satisfy alpha_o - alpha_r = 1 (one
electron exchanged per reaction); unless overridden, the pair defaults to
the values that make the bulk electrolyte charge neutral,
alpha_o = rho_r_inf / (rho_r_inf + rho_o_inf), alpha_r = alpha_o - 1.

Because the potential solve returns the scaled field E = -lambda^2 grad(Phi),
the drift velocity of species i is mu_i * (alpha_i / lambda^2) * E in its
hosting subdomain; `drift_coefficient` returns that alpha_i / lambda^2
factor.  With this sign choice a zero-flux (equilibrium) profile satisfies
rho_n ~ exp(+Phi) and rho_p ~ exp(-Phi).

Densities fed to the nonlinear closures (recombination, transfer counter
densities) are clamped at zero; the transported fields themselves are never
modified.  Excess densities (rho - rho_eq) may legitimately be negative and
are not clamped.
"""

from __future__ import annotations

from dataclasses import dataclass, replace

import numpy as np

from pecsolve.errors import ConfigError, InvalidDomainError

ALPHA_N = -1.0
ALPHA_P = +1.0


@dataclass(frozen=True)
class MaterialParams:
    """Nondimensional material constants for one device."""

    mu_n: float = 3.4911e-3
    mu_p: float = 1.24128e-3
    mu_r: float = 5.172e-4
    mu_o: float = 5.172e-4
    lambda2_s: float = 1.70215e-3
    lambda2_e: float = 1.43038e-1
    tau_n: float = 5e7
    tau_p: float = 5e7
    rho_i: float = 2.564e-7
    sigma_a: float = 17.4974
    g0: float = 1.2e-11
    phi_bi: float = 15.85
    phi_inf: float = 0.0
    alpha_r: float = -0.5
    alpha_o: float = +0.5

    def __post_init__(self):
        positive = {
            "mu_n": self.mu_n,
            "mu_p": self.mu_p,
            "mu_r": self.mu_r,
            "mu_o": self.mu_o,
            "lambda2_s": self.lambda2_s,
            "lambda2_e": self.lambda2_e,
            "tau_n": self.tau_n,
            "tau_p": self.tau_p,
            "rho_i": self.rho_i,
            "sigma_a": self.sigma_a,
            "g0": self.g0,
        }
        for name, value in positive.items():
            if not value > 0.0:
                raise ConfigError(f"material parameter {name} must be > 0, got {value}")
        if abs((self.alpha_o - self.alpha_r) - 1.0) > 1e-12:
            raise ConfigError(
                f"alpha_o - alpha_r must equal 1, got {self.alpha_o - self.alpha_r}"
            )

    def with_neutral_redox(self, rho_r_inf: float, rho_o_inf: float) -> "MaterialParams":
        """Redox charge numbers making alpha_o*rho_o_inf + alpha_r*rho_r_inf = 0."""
        total = rho_r_inf + rho_o_inf
        if total <= 0.0:
            raise ConfigError("bulk redox densities must sum to a positive value")
        alpha_o = rho_r_inf / total
        return replace(self, alpha_o=alpha_o, alpha_r=alpha_o - 1.0)

    def mobility(self, species: str) -> float:
        return {"n": self.mu_n, "p": self.mu_p, "r": self.mu_r, "o": self.mu_o}[species]

    def charge_number(self, species: str) -> float:
        return {"n": ALPHA_N, "p": ALPHA_P, "r": self.alpha_r, "o": self.alpha_o}[species]

    def drift_coefficient(self, species: str) -> float:
        """alpha_i / lambda^2 of the hosting subdomain."""
        lam2 = self.lambda2_s if species in ("n", "p") else self.lambda2_e
        return self.charge_number(species) / lam2


@dataclass(frozen=True)
class DopingSegment:
    x_lo: float
    x_hi: float
    n_d: float
    n_a: float


@dataclass(frozen=True)
class DopingProfile:
    """Piecewise-constant donor/acceptor profile covering the semiconductor.

    Segment boundaries follow the right-closed convention: a segment owns
    [x_lo, x_hi) except the last, which owns its right endpoint too.
    """

    segments: tuple[DopingSegment, ...]

    def __post_init__(self):
        if not self.segments:
            raise ConfigError("doping profile needs at least one segment")
        for a, b in zip(self.segments, self.segments[1:]):
            if not np.isclose(a.x_hi, b.x_lo):
                raise ConfigError("doping segments must tile the domain without gaps")

    @classmethod
    def uniform(cls, x_lo: float, x_hi: float, n_d: float, n_a: float = 0.0) -> "DopingProfile":
        return cls((DopingSegment(x_lo, x_hi, n_d, n_a),))

    @property
    def x_lo(self) -> float:
        return self.segments[0].x_lo

    @property
    def x_hi(self) -> float:
        return self.segments[-1].x_hi

    def eval(self, x) -> tuple[np.ndarray, np.ndarray, np.ndarray]:
        """(N_D, N_A, N) at x; raises outside the profile's domain."""
        xs = np.atleast_1d(np.asarray(x, dtype=float))
        eps = 1e-12 * max(1.0, abs(self.x_hi - self.x_lo))
        if np.any(xs < self.x_lo - eps) or np.any(xs > self.x_hi + eps):
            raise InvalidDomainError("doping profile evaluated outside the semiconductor")
        nd = np.empty_like(xs)
        na = np.empty_like(xs)
        for seg in self.segments:
            mask = (xs >= seg.x_lo - eps) & (xs < seg.x_hi)
            nd[mask] = seg.n_d
            na[mask] = seg.n_a
        last = self.segments[-1]
        mask = xs >= last.x_hi - eps
        nd[mask] = last.n_d
        na[mask] = last.n_a
        if np.ndim(x) == 0:
            return float(nd[0]), float(na[0]), float(nd[0] - na[0])
        return nd, na, nd - na

    def donor_at_contact(self) -> float:
        return self.segments[0].n_d


def doping_eval(profile: DopingProfile, x):
    """Functional alias for DopingProfile.eval."""
    return profile.eval(x)


@dataclass(frozen=True)
class TransferModel:
    """Interface charge transfer: bilinear rates or fixed recombination velocities."""

    kind: str = "full"      # "full" or "schottky"
    k_et: float = 0.0
    k_ht: float = 0.0
    v_n: float = 0.0
    v_p: float = 0.0

    def __post_init__(self):
        if self.kind not in ("full", "schottky"):
            raise ConfigError(f"transfer model kind must be full|schottky, got {self.kind!r}")
        for name in ("k_et", "k_ht", "v_n", "v_p"):
            if getattr(self, name) < 0.0:
                raise ConfigError(f"transfer parameter {name} must be >= 0")


def srh(rho_n, rho_p, *, rho_i: float, tau_n: float, tau_p: float):
    """Trap-mediated electron-hole recombination rate (clamps negative inputs)."""
    n = np.maximum(np.asarray(rho_n, dtype=float), 0.0)
    p = np.maximum(np.asarray(rho_p, dtype=float), 0.0)
    return (n * p - rho_i**2) / (tau_n * (n + rho_i) + tau_p * (p + rho_i))


def transfer(rate: float, excess, counter):
    """Bilinear interface transfer rate * excess * counter-density (counter >= 0)."""
    return rate * np.asarray(excess, dtype=float) * np.maximum(
        np.asarray(counter, dtype=float), 0.0
    )


def generation(x, *, sigma_a: float, g0: float, x_entry: float, direction: float, gamma: int):
    """Photogeneration along a straight ray entering at x_entry.

    G(x) = gamma * sigma_a * g0 * exp(-sigma_a * s) with s the distance
    travelled from the entry point along `direction` (+1 or -1).
    """
    if gamma not in (0, 1):
        raise ConfigError(f"illumination gamma must be 0 or 1, got {gamma}")
    xs = np.asarray(x, dtype=float)
    s = (xs - x_entry) * float(np.sign(direction))
    out = gamma * sigma_a * g0 * np.exp(-sigma_a * np.maximum(s, 0.0))
    return out if np.ndim(x) else float(out)
