"""Defect sensitivity of bore-side field measurements.

For sensor i and wall voxel j, the measurement perturbation from removing
material is a reciprocity integral of the coil-driven field against the
sensor's adjoint field over the voxel:

    S_sigma[i, j] = int_voxel E . E' dV
    S_mu[i, j]    = int_voxel (-j omega) H . H' dV

(complex bilinear products, no conjugation).  The per-frequency measurement
matrix follows as Phi = S_sigma diag(-sigma) + S_mu diag(mu0 - mu), split
into real and imaginary channels.
"""

import math

import numpy as np

from ..errors import DimensionMismatch, VoxelOutsideRegion
from .pipe import (MU0, REGION_WALL, apply_source, coil_spectrum_table,
                   field_basis, region_coefficients, sensor_spectrum_table,
                   solve_unit_modes)


def _quad_1d(edges, sub):
    """Midpoints and widths after splitting every cell into `sub` equal
    parts.  Returns (mids (n*sub,), width (n*sub,))."""
    edges = np.asarray(edges, dtype=np.float64)
    lo = edges[:-1]
    w = np.diff(edges) / sub
    offs = (np.arange(sub) + 0.5)[None, :] * w[:, None]
    mids = (lo[:, None] + offs).ravel()
    widths = np.repeat(w, sub)
    return mids, widths


def build_sensitivity(model, coil, sensors, grid, n_sub=(1, 1, 1), quad=None):
    """Sensitivity matrices (S_sigma, S_mu), each complex (M, N) with
    M = len(sensors) and N = grid.n_voxels, by midpoint quadrature with
    n_sub = (radial, circumferential, axial) subdivisions per voxel.

    Voxel ordering is radial-major: flat index = (i_rho * n_phi + i_phi)
    * n_z + i_z, matching the imaging module.
    """
    eps = 1e-12
    if grid.rho_edges[0] < model.rho1 - eps \
            or grid.rho_edges[-1] > model.rho2 + eps:
        raise VoxelOutsideRegion(
            "voxel layers must lie inside the conducting wall"
        )
    sr, sp, sz = n_sub
    nr, nphi, nz = grid.n_rho, grid.n_phi, grid.n_z

    um = solve_unit_modes(model)
    tables = [apply_source(um, coil_spectrum_table(model, coil, quad))]
    for s in sensors:
        tables.append(apply_source(um, sensor_spectrum_table(model, s)))

    rho_mids, rho_w = _quad_1d(grid.rho_edges, sr)
    phi_mids, phi_w = _quad_1d(grid.phi_edges, sp)
    z_mids, z_w = _quad_1d(grid.z_edges, sz)

    # inverse-transform phase matrices, shared across radii and sources
    p_z = np.exp(1j * np.outer(z_mids, um.kappas)) \
        * um.weights / (2.0 * math.pi)
    p_phi = np.exp(1j * np.outer(phi_mids, um.nus))

    m_sensors = len(sensors)
    n_vox = nr * nphi * nz
    s_sigma = np.zeros((m_sensors, n_vox), dtype=np.complex128)
    s_mu = np.zeros((m_sensors, n_vox), dtype=np.complex128)

    area = np.outer(phi_w, z_w)  # (nphi*sp, nz*sz)
    for ir in range(nr):
        for jr in range(sr):
            idx = ir * sr + jr
            rho = rho_mids[idx]
            dv = rho * rho_w[idx] * area  # volume element on this shell
            basis = field_basis(model, REGION_WALL, rho, um.nus, um.kappas)
            fields = []
            for t in tables:
                coef = region_coefficients(t, REGION_WALL)
                e_m = np.einsum("nkcd,nkd->nkc", basis[0], coef)
                h_m = np.einsum("nkcd,nkd->nkc", basis[1], coef)
                # kappa sum, then nu sum
                e_t = np.tensordot(p_z, e_m, axes=([1], [1]))  # (Z, n, 3)
                h_t = np.tensordot(p_z, h_m, axes=([1], [1]))
                e_f = np.einsum("fn,znc->fzc", p_phi, e_t)
                h_f = np.einsum("fn,znc->fzc", p_phi, h_t)
                fields.append((e_f, h_f))

            e_coil, h_coil = fields[0]
            flat_base = (ir * nphi) * nz
            for i in range(m_sensors):
                e_adj, h_adj = fields[1 + i]
                ds = (e_coil * e_adj).sum(axis=2) * dv
                dm = (h_coil * h_adj).sum(axis=2) * dv
                # pool subcells into their voxel bins
                acc_s = ds.reshape(nphi, sp, nz, sz).sum(axis=(1, 3))
                acc_m = dm.reshape(nphi, sp, nz, sz).sum(axis=(1, 3))
                s_sigma[i, flat_base:flat_base + nphi * nz] += acc_s.ravel()
                s_mu[i, flat_base:flat_base + nphi * nz] += acc_m.ravel()
    s_mu *= -1j * model.omega
    return s_sigma, s_mu


def assemble_phi(s_sigma, s_mu, sigma_nominal, mu_nominal, frequencies):
    """Real measurement channels from per-frequency sensitivities.

    s_sigma, s_mu: one complex (M, N) matrix per frequency (or a single
    matrix for one frequency).  The complex matrix per frequency is
    Phi = S_sigma diag(-sigma) + S_mu diag(mu0*1 - mu); the returned list
    holds its real and imaginary parts as separate channels, so
    L = 2 * len(frequencies), ordered (re_f1, im_f1, re_f2, ...).
    """
    if isinstance(s_sigma, np.ndarray):
        s_sigma = [s_sigma]
    if isinstance(s_mu, np.ndarray):
        s_mu = [s_mu]
    freqs = list(np.atleast_1d(frequencies))
    if not len(s_sigma) == len(s_mu) == len(freqs):
        raise DimensionMismatch(
            "need one S_sigma and one S_mu per frequency"
        )
    n = s_sigma[0].shape[1]
    sigma = np.broadcast_to(np.asarray(sigma_nominal, dtype=np.float64), (n,))
    mu = np.broadcast_to(np.asarray(mu_nominal, dtype=np.float64), (n,))
    dsig = -sigma
    dmu = MU0 - mu
    channels = []
    for ss, sm in zip(s_sigma, s_mu):
        if ss.shape != sm.shape or ss.shape[1] != n:
            raise DimensionMismatch("sensitivity matrix shapes disagree")
        phi_c = ss * dsig[None, :] + sm * dmu[None, :]
        channels.append(np.ascontiguousarray(phi_c.real))
        channels.append(np.ascontiguousarray(phi_c.imag))
    return channels
