"""Layered forward model of a conducting pipe excited from the bore.

Everything is expanded in cylindrical harmonics e^{j nu phi} e^{j kappa z}.
Per mode, two scalar potentials describe the field in each radial region
(bore / wall / outside); matching the radial flux density and the tangential
magnetic field at both wall surfaces yields a 6x6 linear system per mode
whose right-hand side is the source coefficient D^(s).  Fields anywhere are
then an inverse Fourier sum over the (nu, kappa) grid.

Numerical care: modified Bessel factors grow/decay exponentially in
|kappa| * rho, so the interface system is assembled from exponentially
scaled values with the exponentials cancelled analytically per column.
"""

import functools
import math
import warnings
from dataclasses import dataclass, field

import numpy as np
from scipy.signal import czt
from scipy.special import ellipe, ellipk, ive, kve

from ..errors import (DimensionMismatch, DomainError, KappaZero,
                      QuadratureNotConverged, RegionMismatch, SingularLambda,
                      TruncationWarning)

MU0 = 4.0e-7 * math.pi

REGION_BORE = 1
REGION_WALL = 2
REGION_OUTSIDE = 3

_COND_LIMIT = 1e14


@dataclass(frozen=True)
class PipeModel:
    rho1: float                 # inner wall radius [m]
    rho2: float                 # outer wall radius [m]
    sigma2: float               # wall conductivity [S/m]
    mu_r2: float = 1.0          # wall relative permeability
    omega: float = 2.0 * math.pi * 1000.0   # angular frequency [rad/s]
    nu_max: int = 12
    kappa_max: float = 3000.0   # [rad/m]
    kappa_samples: int = 512    # nodes per half-axis

    def __post_init__(self):
        if not 0.0 < self.rho1 < self.rho2:
            raise DimensionMismatch("need 0 < rho1 < rho2")
        if self.sigma2 < 0.0:
            raise DomainError("sigma2 must be >= 0")
        if self.mu_r2 < 1.0:
            raise DomainError("mu_r2 must be >= 1")
        if self.omega <= 0.0:
            raise DomainError("omega must be positive")
        if self.nu_max < 0 or self.kappa_samples < 1 or self.kappa_max <= 0:
            raise DomainError("spectral grid parameters must be positive")

    @property
    def k2(self):
        """Wall wavenumber squared, k^2 = -j omega mu sigma."""
        return -1j * self.omega * MU0 * self.mu_r2 * self.sigma2

    def lam(self, kappa):
        """Radial decay constant in the wall: lam^2 = kappa^2 - k^2,
        principal branch (Re >= 0)."""
        return np.sqrt(np.asarray(kappa, dtype=np.complex128) ** 2 - self.k2)


@dataclass(frozen=True)
class SensorSpec:
    rho_s: float
    phi_s: float
    z_s: float
    axis: tuple  # (n_rho, n_phi, n_z), unit norm

    def __post_init__(self):
        object.__setattr__(self, "axis", tuple(float(a) for a in self.axis))
        if len(self.axis) != 3:
            raise DimensionMismatch("axis must have 3 components")
        if abs(math.hypot(*self.axis) - 1.0) > 1e-12:
            raise DomainError("sensor axis must be unit length")


@dataclass(frozen=True)
class Loop:
    radius: float
    z: float
    amp_turns: float   # current amplitude times turns [A]
    sign: int = 1


@dataclass(frozen=True)
class CoilSpec:
    loops: tuple

    def __post_init__(self):
        object.__setattr__(self, "loops", tuple(self.loops))
        if not self.loops:
            raise DimensionMismatch("coil needs at least one loop")


@dataclass(frozen=True)
class QuadratureConfig:
    z_extent: float = 1.5        # half-width of the axial window [m]
    z_samples: int = 65537       # initial node count (odd)
    tol: float = 1e-8            # sup-norm stop for grid doubling
    max_doublings: int = 4


@dataclass(frozen=True)
class SpectralCoefficients:
    nu: int
    kappa: float
    c_ec: complex    # bore-region scattered coefficient
    c_a2: complex
    d_a2: complex
    c_b2: complex
    d_b2: complex
    d3: complex
    ds: complex      # driving source coefficient


@dataclass(frozen=True)
class UnitModes:
    """Interface solutions for a unit source (D^s = 1) on the whole grid.

    unit[i_nu, i_kappa, :] = (C_ec, C_a, D_a, C_b, D_b, D3); modes whose
    system was numerically singular are zeroed and flagged in `skipped`.
    """
    model: PipeModel
    nus: np.ndarray
    kappas: np.ndarray
    weights: np.ndarray
    unit: np.ndarray
    skipped: np.ndarray

    @property
    def skipped_count(self):
        return int(self.skipped.sum())


@dataclass(frozen=True)
class SpectralTable:
    """Solved coefficients for an actual source: coeffs[..., 0:6] are the
    interface unknowns, coeffs[..., 6] is D^s."""
    model: PipeModel
    nus: np.ndarray
    kappas: np.ndarray
    weights: np.ndarray
    coeffs: np.ndarray


def kappa_grid(model):
    """Symmetric trapezoid grid excluding kappa = 0: nodes at +/- i*dk,
    i = 1..kappa_samples, dk = kappa_max / kappa_samples; endpoint weights
    halved per half-axis."""
    ns = model.kappa_samples
    dk = model.kappa_max / ns
    pos = dk * np.arange(1, ns + 1)
    kappas = np.concatenate([-pos[::-1], pos])
    w_half = np.full(ns, dk)
    w_half[0] *= 0.5   # innermost node of the half-axis
    w_half[-1] *= 0.5
    weights = np.concatenate([w_half[::-1], w_half])
    return kappas, weights


def nu_range(model):
    return np.arange(-model.nu_max, model.nu_max + 1)


# ---------------------------------------------------------------------------
# interface system

def _scaled_bessel_trio(order, z):
    """(value, derivative) mantissas for I and K at integer order >= 0,
    vectorized over z.  True values: I = iv_m * e^{Re z}, K = kv_m * e^{-z}."""
    n = abs(int(order))
    zc = np.asarray(z, dtype=np.complex128)
    i0 = ive(n, zc)
    ip = 0.5 * (ive(abs(n - 1), zc) + ive(n + 1, zc))
    k0 = kve(n, zc)
    kp = -0.5 * (kve(abs(n - 1), zc) + kve(n + 1, zc))
    return i0, ip, k0, kp


def _assemble_scaled(model, nu, kappas):
    """Column-scaled interface matrices and unit-source right-hand sides.

    Returns (mats (nk,6,6), rhs (nk,6), col_factor (nk,6)) where the true
    solution is col_factor * solve(mats, rhs) for a unit D^s.
    """
    kappas = np.asarray(kappas, dtype=np.float64)
    nk = kappas.size
    r1, r2, mur = model.rho1, model.rho2, model.mu_r2
    k2 = model.k2
    lam = model.lam(kappas)
    q = np.real(lam)
    x1 = np.abs(kappas) * r1
    x2 = np.abs(kappas) * r2

    i1_m, ip1_m, k1_m, kp1_m = _scaled_bessel_trio(nu, x1)
    _, _, k3_m, kp3_m = _scaled_bessel_trio(nu, x2)
    ia1_m, ipa1_m, ka1_m, kpa1_m = _scaled_bessel_trio(nu, lam * r1)
    ia2_m, ipa2_m, ka2_m, kpa2_m = _scaled_bessel_trio(nu, lam * r2)

    # growth factors across the wall, always |.| <= 1
    gi = np.exp(-q * (r2 - r1))          # I-column entries at rho1
    gk = np.exp(-lam * (r2 - r1))        # K-column entries at rho2

    jknu = 1j * kappas * np.abs(kappas)
    lam2 = lam * lam

    mats = np.zeros((nk, 6, 6), dtype=np.complex128)
    # row 0: B_rho at rho1
    mats[:, 0, 0] = -jknu * ip1_m
    mats[:, 0, 1] = 1j * kappas * lam * ipa1_m * gi
    mats[:, 0, 2] = 1j * kappas * lam * kpa1_m
    mats[:, 0, 3] = -k2 * (1j * nu / r1) * ia1_m * gi
    mats[:, 0, 4] = -k2 * (1j * nu / r1) * ka1_m
    # row 1: H_phi at rho1
    mats[:, 1, 0] = (kappas * nu / r1) * i1_m
    mats[:, 1, 1] = -(kappas * nu / r1) * ia1_m * gi / mur
    mats[:, 1, 2] = -(kappas * nu / r1) * ka1_m / mur
    mats[:, 1, 3] = k2 * lam * ipa1_m * gi / mur
    mats[:, 1, 4] = k2 * lam * kpa1_m / mur
    # row 2: H_z at rho1
    mats[:, 2, 0] = kappas ** 2 * i1_m
    mats[:, 2, 1] = -lam2 * ia1_m * gi / mur
    mats[:, 2, 2] = -lam2 * ka1_m / mur
    # row 3: B_rho at rho2
    mats[:, 3, 1] = 1j * kappas * lam * ipa2_m
    mats[:, 3, 2] = 1j * kappas * lam * kpa2_m * gk
    mats[:, 3, 3] = -k2 * (1j * nu / r2) * ia2_m
    mats[:, 3, 4] = -k2 * (1j * nu / r2) * ka2_m * gk
    mats[:, 3, 5] = -jknu * kp3_m
    # row 4: H_phi at rho2
    mats[:, 4, 1] = -(kappas * nu / r2) * ia2_m / mur
    mats[:, 4, 2] = -(kappas * nu / r2) * ka2_m * gk / mur
    mats[:, 4, 3] = k2 * lam * ipa2_m / mur
    mats[:, 4, 4] = k2 * lam * kpa2_m * gk / mur
    mats[:, 4, 5] = (kappas * nu / r2) * k3_m
    # row 5: H_z at rho2
    mats[:, 5, 1] = -lam2 * ia2_m / mur
    mats[:, 5, 2] = -lam2 * ka2_m * gk / mur
    mats[:, 5, 5] = kappas ** 2 * k3_m

    rhs = np.zeros((nk, 6), dtype=np.complex128)
    rhs[:, 0] = jknu * kp1_m
    rhs[:, 1] = -(kappas * nu / r1) * k1_m
    rhs[:, 2] = -(kappas ** 2) * k1_m

    # true coefficient = col_factor * scaled unknown; the common e^{-x1}
    # from the source column is folded in here
    col_factor = np.empty((nk, 6), dtype=np.complex128)
    col_factor[:, 0] = np.exp(-2.0 * x1)
    col_factor[:, 1] = np.exp(-q * r2 - x1)
    col_factor[:, 2] = np.exp(lam * r1 - x1)
    col_factor[:, 3] = col_factor[:, 1]
    col_factor[:, 4] = col_factor[:, 2]
    col_factor[:, 5] = np.exp(x2 - x1)
    return mats, rhs, col_factor


_FULL = np.arange(6)
_REDUCED_ROWS = np.array([0, 2, 3, 5])
_REDUCED_COLS = np.array([0, 1, 2, 5])


def _solve_modes(model, nu, kappas):
    """Unit-source interface solutions over a kappa vector at one nu.

    Returns (unit (nk, 6), singular_mask (nk,)).
    """
    kappas = np.asarray(kappas, dtype=np.float64)
    nk = kappas.size
    unit = np.zeros((nk, 6), dtype=np.complex128)
    if np.any(kappas == 0.0):
        raise KappaZero("kappa = 0 is excluded from the spectral grid")

    if model.sigma2 == 0.0 and model.mu_r2 == 1.0:
        # no contrast: the source continues undisturbed (wall region uses
        # lam = |kappa|, so D_a = D^s reproduces the bore source field)
        unit[:, 2] = 1.0
        unit[:, 5] = 1.0
        return unit, np.zeros(nk, dtype=bool)

    mats, rhs, col_factor = _assemble_scaled(model, nu, kappas)
    if model.k2 == 0.0:
        # sigma = 0 but magnetic wall: the W_b columns vanish and the
        # tangential rows pair up; keep one row of each pair
        sub = mats[np.ix_(np.arange(nk), _REDUCED_ROWS, _REDUCED_COLS)]
        sub_rhs = rhs[:, _REDUCED_ROWS]
        sol, bad = _equilibrated_solve(sub, sub_rhs)
        unit[:, _REDUCED_COLS] = sol * col_factor[:, _REDUCED_COLS]
        unit[bad] = 0.0
        return unit, bad

    sol, bad = _equilibrated_solve(mats, rhs)
    unit[:] = sol * col_factor
    unit[bad] = 0.0
    return unit, bad


def _equilibrated_solve(mats, rhs):
    """Row-equilibrated batched solve with a condition guard.

    Returns (solutions, bad_mask); rows of `solutions` where bad_mask is
    True are meaningless (caller zeroes them).
    """
    scale = np.abs(mats).max(axis=2)
    scale[scale == 0.0] = 1.0
    m_eq = mats / scale[:, :, None]
    r_eq = rhs / scale
    with np.errstate(all="ignore"):
        cond = np.linalg.cond(m_eq)
        bad = ~np.isfinite(cond) | (cond > _COND_LIMIT)
        sol = np.zeros_like(r_eq)
        if (~bad).any():
            sol[~bad] = np.linalg.solve(m_eq[~bad],
                                        r_eq[~bad][..., None])[..., 0]
    sol[~np.isfinite(sol)] = 0.0
    return sol, bad


def solve_interface_coefficients(model, nu, kappa, ds):
    """Solve the 6x6 interface system for one (nu, kappa) mode driven by the
    source coefficient ds.  Raises SingularLambda when the mode's system is
    numerically singular (condition estimate above 1e14)."""
    if kappa == 0.0:
        raise KappaZero("kappa = 0 is excluded")
    unit, bad = _solve_modes(model, int(nu), np.array([float(kappa)]))
    if bad[0]:
        raise SingularLambda(f"interface system singular at nu={nu}, "
                             f"kappa={kappa:g}")
    c = unit[0] * ds
    return SpectralCoefficients(nu=int(nu), kappa=float(kappa),
                                c_ec=c[0], c_a2=c[1], d_a2=c[2],
                                c_b2=c[3], d_b2=c[4], d3=c[5], ds=complex(ds))


@functools.lru_cache(maxsize=16)
def solve_unit_modes(model):
    """Unit-source interface solutions on the model's full (nu, kappa) grid.
    Singular modes are zeroed, flagged, and counted — the source term itself
    is kept so downstream sums stay well-defined."""
    kappas, weights = kappa_grid(model)
    nus = nu_range(model)
    unit = np.zeros((nus.size, kappas.size, 6), dtype=np.complex128)
    skipped = np.zeros((nus.size, kappas.size), dtype=bool)
    for i, nu in enumerate(nus):
        unit[i], skipped[i] = _solve_modes(model, int(nu), kappas)
    return UnitModes(model=model, nus=nus, kappas=kappas, weights=weights,
                     unit=unit, skipped=skipped)


def apply_source(um, ds):
    """Combine unit interface solutions with a source spectrum ds of shape
    (n_nu, n_kappa) into a SpectralTable."""
    ds = np.asarray(ds, dtype=np.complex128)
    if ds.shape != (um.nus.size, um.kappas.size):
        raise DimensionMismatch("source spectrum shape mismatch")
    coeffs = np.empty(ds.shape + (7,), dtype=np.complex128)
    coeffs[..., :6] = um.unit * ds[..., None]
    coeffs[..., 6] = ds
    return SpectralTable(model=um.model, nus=um.nus, kappas=um.kappas,
                         weights=um.weights, coeffs=coeffs)


# ---------------------------------------------------------------------------
# sources

def loop_bradial(radius, z0, amp_turns, rho, z):
    """Radial flux density of a coaxial circular current loop, closed form
    (complete elliptic integrals), vectorized over (rho, z)."""
    rho = np.asarray(rho, dtype=np.float64)
    zeta = np.asarray(z, dtype=np.float64) - z0
    a = radius
    d2 = (a + rho) ** 2 + zeta ** 2
    n2 = (a - rho) ** 2 + zeta ** 2
    m = 4.0 * a * rho / d2
    e = ellipe(m)
    k = ellipk(m)
    pref = MU0 * amp_turns / (2.0 * math.pi)
    with np.errstate(invalid="ignore", divide="ignore"):
        out = pref * zeta / (rho * np.sqrt(d2)) \
            * ((a * a + rho * rho + zeta * zeta) / n2 * e - k)
    return np.where(rho == 0.0, 0.0, out)


def loop_baxial(radius, z0, amp_turns, rho, z):
    """Axial flux density of a coaxial circular current loop, closed form."""
    rho = np.asarray(rho, dtype=np.float64)
    zeta = np.asarray(z, dtype=np.float64) - z0
    a = radius
    d2 = (a + rho) ** 2 + zeta ** 2
    n2 = (a - rho) ** 2 + zeta ** 2
    m = 4.0 * a * rho / d2
    e = ellipe(m)
    k = ellipk(m)
    pref = MU0 * amp_turns / (2.0 * math.pi)
    return pref / np.sqrt(d2) * ((a * a - rho * rho - zeta * zeta) / n2 * e + k)


def coil_bradial(coil, rho, z):
    """Total radial flux density of all coil loops (free space)."""
    total = np.zeros(np.broadcast(np.asarray(rho), np.asarray(z)).shape)
    for lp in coil.loops:
        total = total + loop_bradial(lp.radius, lp.z,
                                     lp.amp_turns * lp.sign, rho, z)
    return total


def coil_bfield(coil, rho, z):
    """(B_rho, B_z) of the coil in free space; B_phi vanishes by symmetry."""
    brho = np.zeros(np.broadcast(np.asarray(rho), np.asarray(z)).shape)
    bz = np.zeros_like(brho)
    for lp in coil.loops:
        amp = lp.amp_turns * lp.sign
        brho = brho + loop_bradial(lp.radius, lp.z, amp, rho, z)
        bz = bz + loop_baxial(lp.radius, lp.z, amp, rho, z)
    return brho, bz


def _validate_coil(model, coil):
    for lp in coil.loops:
        if not 0.0 < lp.radius < model.rho1:
            raise DomainError("coil loops must lie strictly inside the bore")


def _ztransform_table(model, coil, quad):
    """B~_rho(rho1, kappa) for the model's positive kappa nodes by composite
    Simpson quadrature of the axial Fourier integral, with grid doubling
    until the table stabilizes."""
    ns = model.kappa_samples
    dk = model.kappa_max / ns
    zext = quad.z_extent
    n = quad.z_samples
    if n % 2 == 0:
        n += 1

    def table(n_nodes):
        z = np.linspace(-zext, zext, n_nodes)
        h = z[1] - z[0]
        b = coil_bradial(coil, model.rho1, z)
        w = np.ones(n_nodes)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= h / 3.0
        c = b * w
        # positive-kappa z-transform via chirp-z: sum_n c_n e^{-j i dk h n}
        t = czt(c, m=ns + 1, w=np.exp(-1j * dk * h), a=1.0)
        i = np.arange(ns + 1)
        return t * np.exp(1j * i * dk * zext)

    prev = table(n)
    for _ in range(quad.max_doublings):
        n = 2 * (n - 1) + 1
        cur = table(n)
        scale = np.abs(cur).max()
        if np.abs(cur - prev).max() <= quad.tol * max(scale, 1e-300):
            return cur
        prev = cur
    raise QuadratureNotConverged(
        f"coil z-transform did not stabilize to {quad.tol:g} "
        f"within {quad.max_doublings} grid doublings"
    )


@functools.lru_cache(maxsize=8)
def _coil_table_cached(rho1, kappa_max, kappa_samples, coil, quad):
    model = PipeModel(rho1=rho1, rho2=2.0 * rho1, sigma2=0.0,
                      kappa_max=kappa_max, kappa_samples=kappa_samples)
    bt_pos = _ztransform_table(model, coil, quad)   # indices 0..ns (i*dk)
    ns = kappa_samples
    dk = kappa_max / ns
    kpos = dk * np.arange(1, ns + 1)
    x1 = kpos * rho1
    _, _, _, kp_m = _scaled_bessel_trio(0, x1)
    kprime = kp_m * np.exp(-x1)
    ds_pos = bt_pos[1:] / (1j * kpos * kpos * kprime)
    # negative kappa: B real -> B~(-k) = conj(B~(k)); the denominator
    # j k|k| K' flips sign, i.e. conjugates as well
    ds_neg = np.conj(ds_pos)[::-1]
    return np.concatenate([ds_neg, ds_pos])


def coil_spectrum_table(model, coil, quad=None):
    """Source spectrum D^s(nu, kappa) of a coaxial coil on the model grid.
    Only the nu = 0 row is nonzero (axisymmetric source)."""
    _validate_coil(model, coil)
    if quad is None:
        quad = QuadratureConfig()
    row = _coil_table_cached(model.rho1, model.kappa_max,
                             model.kappa_samples, coil, quad)
    nus = nu_range(model)
    ds = np.zeros((nus.size, row.size), dtype=np.complex128)
    ds[nus.tolist().index(0)] = row
    return ds


def coil_spectrum(model, coil, nu, kappa, quad=None):
    """Single-mode coil source coefficient.  Zero for nu != 0 (coaxial
    loops are axisymmetric); for nu = 0, Simpson quadrature of the axial
    Fourier integral with grid doubling, divided per the bore expansion."""
    if kappa == 0.0:
        raise KappaZero("kappa = 0 is excluded")
    _validate_coil(model, coil)
    if int(nu) != 0:
        return 0.0 + 0.0j
    if quad is None:
        quad = QuadratureConfig()
    zext = quad.z_extent
    n = quad.z_samples
    if n % 2 == 0:
        n += 1

    def one(n_nodes):
        z = np.linspace(-zext, zext, n_nodes)
        h = z[1] - z[0]
        b = coil_bradial(coil, model.rho1, z)
        w = np.ones(n_nodes)
        w[1:-1:2] = 4.0
        w[2:-1:2] = 2.0
        w *= h / 3.0
        return np.sum(b * w * np.exp(-1j * kappa * z))

    prev = one(n)
    bt = None
    for _ in range(quad.max_doublings):
        n = 2 * (n - 1) + 1
        cur = one(n)
        if abs(cur - prev) <= quad.tol * max(abs(cur), 1e-300):
            bt = cur
            break
        prev = cur
    if bt is None:
        raise QuadratureNotConverged("coil mode integral did not stabilize")
    x1 = abs(kappa) * model.rho1
    _, _, _, kp = bessel_plain_trio(0, x1)
    return bt / (1j * kappa * abs(kappa) * kp)


def bessel_plain_trio(order, z):
    """(I, I', K, K') plain values, vectorized; safe for moderate Re(z)."""
    i_m, ip_m, k_m, kp_m = _scaled_bessel_trio(order, z)
    zc = np.asarray(z, dtype=np.complex128)
    egrow = np.exp(np.real(zc))
    edec = np.exp(-zc)
    return i_m * egrow, ip_m * egrow, k_m * edec, kp_m * edec


def sensor_spectrum(model, sensor, nu, kappa):
    """Adjoint source coefficient of a point magnetic sensor in the bore,
    closed form in the sensor position and axis."""
    kappa = float(kappa)
    if kappa == 0.0:
        raise KappaZero("kappa = 0 is excluded")
    if not 0.0 < sensor.rho_s < model.rho1:
        raise DomainError("sensor must sit strictly inside the bore")
    x = abs(kappa) * sensor.rho_s
    i_v, ip_v, _, _ = bessel_plain_trio(abs(int(nu)), x)
    n_rho, n_phi, n_z = sensor.axis
    core = (1j * abs(kappa) * ip_v * n_rho
            + (nu / kappa) * (i_v / sensor.rho_s) * n_phi
            + i_v * n_z)
    phase = np.exp(-1j * nu * sensor.phi_s - 1j * kappa * sensor.z_s)
    return (1j * MU0 / (math.pi ** 3 * model.omega)) * core * phase


def sensor_spectrum_table(model, sensor):
    """D^s(nu, kappa) of a sensor over the model grid (vectorized)."""
    kappas, _ = kappa_grid(model)
    nus = nu_range(model)
    out = np.empty((nus.size, kappas.size), dtype=np.complex128)
    x = np.abs(kappas) * sensor.rho_s
    n_rho, n_phi, n_z = sensor.axis
    pref = 1j * MU0 / (math.pi ** 3 * model.omega)
    for i, nu in enumerate(nus):
        i_v, ip_v, _, _ = bessel_plain_trio(abs(int(nu)), x)
        core = (1j * np.abs(kappas) * ip_v * n_rho
                + (nu / kappas) * (i_v / sensor.rho_s) * n_phi
                + i_v * n_z)
        phase = np.exp(-1j * nu * sensor.phi_s - 1j * kappas * sensor.z_s)
        out[i] = pref * core * phase
    return out


# ---------------------------------------------------------------------------
# field reconstruction

def _region_of(model, rho):
    if rho < model.rho1:
        return REGION_BORE
    if rho <= model.rho2:
        return REGION_WALL
    return REGION_OUTSIDE


def field_basis(model, region, rho, nus, kappas):
    """Source-independent mode basis at one radius.

    Returns complex tensors (t_e, t_h) of shape (n_nu, n_kappa, 3, 4)
    mapping the per-mode coefficient vector (c_a, d_a, c_b, d_b) of the
    region to (E, H) cylindrical components.  For bore/outside regions the
    W_b slots are ignored by construction (their columns are zero).
    """
    if rho <= 0.0:
        raise DomainError("on-axis/negative-radius evaluation unsupported")
    kappas = np.asarray(kappas, dtype=np.float64)
    nus = np.asarray(nus)
    nk, nn = kappas.size, nus.size

    if region == REGION_WALL:
        lam = model.lam(kappas)
        k2 = model.k2
        mu = MU0 * model.mu_r2
    else:
        lam = np.abs(kappas).astype(np.complex128)
        k2 = 0.0
        mu = MU0
    lam2 = lam * lam
    z = lam * rho

    # shared Bessel table over distinct orders 0..|nu|_max + 1
    top = int(np.abs(nus).max()) + 1
    iv_t = np.empty((top + 1, nk), dtype=np.complex128)
    kv_t = np.empty((top + 1, nk), dtype=np.complex128)
    egrow = np.exp(np.real(z))
    edec = np.exp(-z)
    for order in range(top + 1):
        iv_t[order] = ive(order, z) * egrow
        kv_t[order] = kve(order, z) * edec

    t_e = np.zeros((nn, nk, 3, 4), dtype=np.complex128)
    t_h = np.zeros((nn, nk, 3, 4), dtype=np.complex128)
    jw = -1j * model.omega
    for i, nu in enumerate(nus):
        n = abs(int(nu))
        iv_ = iv_t[n]
        kv_ = kv_t[n]
        ipv = 0.5 * (iv_t[abs(n - 1)] + iv_t[n + 1])
        kpv = -0.5 * (kv_t[abs(n - 1)] + kv_t[n + 1])
        # radial derivative carries a factor lam
        div = lam * ipv
        dkv = lam * kpv

        # A components per unit (c_a, d_a, c_b, d_b)
        a = np.zeros((nk, 3, 4), dtype=np.complex128)
        a[:, 0, 0] = (1j * nu / rho) * iv_
        a[:, 0, 1] = (1j * nu / rho) * kv_
        a[:, 0, 2] = -1j * kappas * div
        a[:, 0, 3] = -1j * kappas * dkv
        a[:, 1, 0] = -div
        a[:, 1, 1] = -dkv
        a[:, 1, 2] = (kappas * nu / rho) * iv_
        a[:, 1, 3] = (kappas * nu / rho) * kv_
        a[:, 2, 2] = lam2 * iv_
        a[:, 2, 3] = lam2 * kv_

        b = np.zeros((nk, 3, 4), dtype=np.complex128)
        b[:, 0, 0] = 1j * kappas * div
        b[:, 0, 1] = 1j * kappas * dkv
        b[:, 0, 2] = -k2 * (1j * nu / rho) * iv_
        b[:, 0, 3] = -k2 * (1j * nu / rho) * kv_
        b[:, 1, 0] = -(kappas * nu / rho) * iv_
        b[:, 1, 1] = -(kappas * nu / rho) * kv_
        b[:, 1, 2] = k2 * div
        b[:, 1, 3] = k2 * dkv
        b[:, 2, 0] = -lam2 * iv_
        b[:, 2, 1] = -lam2 * kv_

        t_e[i] = jw * a
        t_h[i] = b / mu
    return t_e, t_h


def region_coefficients(table, region, include_source=True):
    """Per-mode coefficient 4-vector (c_a, d_a, c_b, d_b) for a region."""
    c = table.coeffs
    nn, nk = c.shape[0], c.shape[1]
    out = np.zeros((nn, nk, 4), dtype=np.complex128)
    if region == REGION_BORE:
        out[..., 0] = c[..., 0]
        if include_source:
            out[..., 1] = c[..., 6]
    elif region == REGION_WALL:
        out[..., :4] = c[..., 1:5]
    elif region == REGION_OUTSIDE:
        out[..., 1] = c[..., 5]
    else:
        raise RegionMismatch(f"unknown region {region!r}")
    return out


def _mode_fields_at_rho(model, table, region, rho, include_source=True,
                        basis=None):
    """Per-mode (E, H) field amplitudes at one radius: basis contraction.
    Returns complex arrays (n_nu, n_kappa, 3)."""
    if basis is None:
        basis = field_basis(model, region, rho, table.nus, table.kappas)
    t_e, t_h = basis
    coef = region_coefficients(table, region, include_source)
    e = np.einsum("nkcd,nkd->nkc", t_e, coef)
    h = np.einsum("nkcd,nkd->nkc", t_h, coef)
    return e, h


def evaluate_fields(model, table, region, points, include_source=True,
                    warn_truncation=True):
    """Complex (E, H) 3-vectors (cylindrical components) at each point.

    points: array (P, 3) of (rho, phi, z).  Every point must lie in the
    declared region; the inverse transform is a trapezoid sum over kappa and
    a finite sum over nu.  A TruncationWarning is emitted when the outermost
    |nu| ring still contributes more than 1e-6 of the result.
    """
    pts = np.asarray(points, dtype=np.float64)
    if pts.ndim == 1:
        pts = pts[None, :]
    if pts.shape[1] != 3:
        raise DimensionMismatch("points must be (P, 3) of (rho, phi, z)")
    for rho in pts[:, 0]:
        if _region_of(model, rho) != region:
            raise RegionMismatch(
                f"rho={rho:g} is not in region {region}"
            )
    e_out = np.zeros((pts.shape[0], 3), dtype=np.complex128)
    h_out = np.zeros((pts.shape[0], 3), dtype=np.complex128)
    ring_mag = 0.0
    total_mag = 0.0

    last = np.abs(table.nus) == np.abs(table.nus).max()
    for rho in np.unique(pts[:, 0]):
        sel = pts[:, 0] == rho
        e_m, h_m = _mode_fields_at_rho(model, table, region, rho,
                                       include_source)
        phases_z = np.exp(1j * np.outer(pts[sel, 2], table.kappas)) \
            * table.weights / (2.0 * math.pi)
        phases_nu = np.exp(1j * np.outer(pts[sel, 1], table.nus))
        # kappa sum then nu sum, per component
        g_e = np.einsum("pk,nkc->pnc", phases_z, e_m)
        g_h = np.einsum("pk,nkc->pnc", phases_z, h_m)
        e_out[sel] = np.einsum("pn,pnc->pc", phases_nu, g_e)
        h_out[sel] = np.einsum("pn,pnc->pc", phases_nu, g_h)
        if warn_truncation and last.any() and not last.all():
            ring = np.einsum("pn,pnc->pc", phases_nu[:, last], g_h[:, last])
            ring_mag = max(ring_mag, float(np.abs(ring).max()))
            total_mag = max(total_mag, float(np.abs(h_out[sel]).max()))
    if warn_truncation and total_mag > 0.0 \
            and ring_mag > 1e-6 * total_mag:
        warnings.warn(
            f"outermost harmonic ring contributes {ring_mag / total_mag:.2e} "
            "of the field; raise nu_max",
            TruncationWarning, stacklevel=2,
        )
    if np.asarray(points).ndim == 1:
        return e_out[0], h_out[0]
    return e_out, h_out


def interface_residual(model, coeffs):
    """Relative residuals of the six matching conditions for one solved
    mode, computed from the field expressions directly (independent of the
    matrix assembly).  Returns an array (6,)."""
    table = SpectralTable(
        model=model,
        nus=np.array([coeffs.nu]),
        kappas=np.array([coeffs.kappa]),
        weights=np.array([1.0]),
        coeffs=np.array([[[coeffs.c_ec, coeffs.c_a2, coeffs.d_a2,
                           coeffs.c_b2, coeffs.d_b2, coeffs.d3,
                           coeffs.ds]]]),
    )

    def matching(region, rho):
        e_m, h_m = _mode_fields_at_rho(model, table, region, rho, True)
        h = h_m[0, 0]
        mu = MU0 * (model.mu_r2 if region == REGION_WALL else 1.0)
        return np.array([mu * h[0], h[1], h[2]])

    res = np.empty(6)
    lhs1 = matching(REGION_BORE, model.rho1)
    rhs1 = matching(REGION_WALL, model.rho1)
    lhs2 = matching(REGION_WALL, model.rho2)
    rhs2 = matching(REGION_OUTSIDE, model.rho2)
    for i in range(3):
        scale = max(abs(lhs1[i]), abs(rhs1[i]), 1e-300)
        res[i] = abs(lhs1[i] - rhs1[i]) / scale
        scale = max(abs(lhs2[i]), abs(rhs2[i]), 1e-300)
        res[3 + i] = abs(lhs2[i] - rhs2[i]) / scale
    return res
