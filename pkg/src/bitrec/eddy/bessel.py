"""Modified Bessel functions I_nu, K_nu and their derivatives for integer
orders and complex arguments with Re(z) >= 0.

Two entry points: `bessel_ik` returns plain values and refuses arguments
whose exponential growth no longer fits a double; `bessel_ik_scaled` is the
total variant that returns mantissas together with the exponents that were
factored out, so interface-matrix assembly can cancel exponentials
analytically instead of overflowing.
"""

from dataclasses import dataclass

import numpy as np
from scipy.special import ive, kve

from ..errors import DomainError

# exp(700) is representable, exp(710) is not; leave margin for products
_PLAIN_LIMIT = 650.0


@dataclass(frozen=True)
class ScaledBessel:
    """Mantissa/exponent representation:

    I_nu(z)  = i  * exp(i_exp)     I'_nu(z) = ip * exp(i_exp)
    K_nu(z)  = k  * exp(k_exp)     K'_nu(z) = kp * exp(k_exp)

    i_exp is real (= Re z); k_exp is complex (= -z), matching the scaling
    that keeps both mantissas O(1) on the growth/decay side respectively.
    """
    i: complex
    k: complex
    ip: complex
    kp: complex
    i_exp: float
    k_exp: complex


def _check_domain(z):
    z = np.asarray(z)
    if np.any(z == 0):
        raise DomainError("z = 0: K_nu is singular at the origin")
    if np.any(np.real(z) < 0):
        raise DomainError("Re(z) < 0 lies outside the supported branch")


def bessel_ik_scaled(nu, z):
    """Scaled I/K pair with first derivatives at integer order nu.

    Derivatives use I'_v = (I_{v-1}+I_{v+1})/2 and
    K'_v = -(K_{v-1}+K_{v+1})/2, which share the scaling of the base
    functions.  Negative orders map to |nu| (integer-order symmetry).
    """
    _check_domain(z)
    n = abs(int(nu))
    zc = np.asarray(z, dtype=np.complex128)
    i0 = ive(n, zc)
    im = ive(abs(n - 1), zc)  # integer-order symmetry folds -1 to +1
    ip1 = ive(n + 1, zc)
    k0 = kve(n, zc)
    km = kve(abs(n - 1), zc)
    kp1 = kve(n + 1, zc)
    if np.any(~np.isfinite(i0)) or np.any(~np.isfinite(k0)):
        raise DomainError(f"Bessel evaluation failed at nu={n}, z={z!r}")
    scalar = np.isscalar(z) or np.asarray(z).ndim == 0
    out = ScaledBessel(
        i=i0, k=k0,
        ip=0.5 * (im + ip1),
        kp=-0.5 * (km + kp1),
        i_exp=np.real(zc) if not scalar else float(np.real(zc)),
        k_exp=-zc if not scalar else -complex(zc),
    )
    if scalar:
        return ScaledBessel(complex(out.i), complex(out.k), complex(out.ip),
                            complex(out.kp), out.i_exp, out.k_exp)
    return out


def bessel_ik(nu, z):
    """Plain (unscaled) values (I_nu, K_nu, I'_nu, K'_nu).

    Raises DomainError when Re(z) is large enough that the plain values
    would overflow; use bessel_ik_scaled there instead.
    """
    _check_domain(z)
    if np.any(np.real(np.asarray(z)) > _PLAIN_LIMIT):
        raise DomainError(
            f"Re(z) > {_PLAIN_LIMIT:g} overflows plain doubles; "
            "use bessel_ik_scaled"
        )
    s = bessel_ik_scaled(nu, z)
    ei = np.exp(s.i_exp)
    ek = np.exp(s.k_exp)
    return s.i * ei, s.k * ek, s.ip * ei, s.kp * ek
