"""Defect imaging of the pipe wall.

A probe (coaxial coil + a ring of magnetic sensors) slides along the bore;
at each stop the wall voxels near the probe are sensed through the
linearized model, a sparse binary recovery produces per-voxel defect
probabilities, and the stops are fused voxel-wise by log-odds addition
(binary Bayes filtering).  The synthetic measurements come from the same
linearized model used for recovery — an inverse-crime setup, stamped into
the output metadata.
"""

import json
import logging
import math
from dataclasses import dataclass, replace

import numpy as np

from ..errors import BitrecError, DimensionMismatch, GridMismatch
from ..model import PriorConfig, measurement_set
from .pipe import MU0, CoilSpec, Loop, PipeModel, SensorSpec
from .sensitivity import assemble_phi, build_sensitivity

log = logging.getLogger("bitrec.eddy.imaging")

L_MAX = 13.8          # ~ logit(1 - 1e-6)
_EPS_P = 1e-6

INVERSE_CRIME_NOTE = (
    "synthetic measurements were generated by the same linearized forward "
    "model used for recovery (inverse crime); no independent field "
    "simulation is involved"
)


@dataclass(frozen=True)
class VoxelGrid:
    """Cylindrical voxel grid: radial layers x circumferential bins x axial
    bins.  phi bins are uniform over [0, 2pi).  Flat voxel ordering is
    (i_rho * n_phi + i_phi) * n_z + i_z."""
    rho_edges: tuple
    n_phi: int
    z_edges: tuple

    def __post_init__(self):
        object.__setattr__(self, "rho_edges",
                           tuple(float(r) for r in self.rho_edges))
        object.__setattr__(self, "z_edges",
                           tuple(float(z) for z in self.z_edges))
        if len(self.rho_edges) < 2 or len(self.z_edges) < 2:
            raise DimensionMismatch("grid needs at least one cell per axis")
        if np.any(np.diff(self.rho_edges) <= 0) \
                or np.any(np.diff(self.z_edges) <= 0):
            raise DimensionMismatch("grid edges must be strictly increasing")
        if self.n_phi < 1:
            raise DimensionMismatch("n_phi must be >= 1")

    @property
    def n_rho(self):
        return len(self.rho_edges) - 1

    @property
    def n_z(self):
        return len(self.z_edges) - 1

    @property
    def n_voxels(self):
        return self.n_rho * self.n_phi * self.n_z

    @property
    def phi_edges(self):
        return np.linspace(0.0, 2.0 * math.pi, self.n_phi + 1)

    @property
    def shape(self):
        return (self.n_rho, self.n_phi, self.n_z)

    def z_step(self):
        steps = np.diff(self.z_edges)
        if np.max(np.abs(steps - steps[0])) > 1e-12 * abs(steps[0]):
            raise GridMismatch("probe translation requires uniform z bins")
        return float(steps[0])


@dataclass(frozen=True)
class VoxelImage:
    grid: VoxelGrid
    logodds: np.ndarray   # (n_rho, n_phi, n_z), clamped to [-L_MAX, L_MAX]
    sigma: np.ndarray     # nominal conductivity per voxel
    mu: np.ndarray        # nominal permeability per voxel


def new_image(grid, logodds, sigma, mu):
    lo = np.clip(np.asarray(logodds, dtype=np.float64), -L_MAX, L_MAX)
    lo = lo.reshape(grid.shape)
    sg = np.broadcast_to(np.asarray(sigma, dtype=np.float64),
                         grid.shape).copy()
    m = np.broadcast_to(np.asarray(mu, dtype=np.float64), grid.shape).copy()
    for a in (lo, sg, m):
        a.flags.writeable = False
    return VoxelImage(grid=grid, logodds=lo, sigma=sg, mu=m)


def logit(p):
    p = np.clip(np.asarray(p, dtype=np.float64), _EPS_P, 1.0 - _EPS_P)
    return np.log(p) - np.log1p(-p)


def probabilities(image):
    return 1.0 / (1.0 + np.exp(-image.logodds))


def merge_logodds(images, prior=0.5):
    """Voxel-wise Bayes fusion: clamp(sum_k L_k - (K-1) * logit(prior)).

    The logit sum uses exact float summation, so the result is bit-identical
    under any permutation of the input images.  All images must share the
    grid exactly.
    """
    if not images:
        raise GridMismatch("nothing to merge")
    g0 = images[0].grid
    for im in images[1:]:
        if im.grid != g0:
            raise GridMismatch("images live on different voxel grids")
    k = len(images)
    l0 = np.broadcast_to(logit(prior), g0.shape)
    stacks = [im.logodds.ravel() for im in images]
    l0_flat = l0.ravel()
    merged = np.empty(g0.n_voxels)
    for j in range(g0.n_voxels):
        total = math.fsum(s[j] for s in stacks) - (k - 1) * l0_flat[j]
        merged[j] = min(max(total, -L_MAX), L_MAX)
    return new_image(g0, merged.reshape(g0.shape),
                     images[0].sigma, images[0].mu)


# ---------------------------------------------------------------------------
# end-to-end pipeline

def _sensor_ring(radius, count, axis, z=0.0):
    axes = {"rho": (1.0, 0.0, 0.0), "phi": (0.0, 1.0, 0.0),
            "z": (0.0, 0.0, 1.0)}
    ax = axes[axis] if isinstance(axis, str) else tuple(axis)
    return tuple(
        SensorSpec(rho_s=radius, phi_s=2.0 * math.pi * i / count, z_s=z,
                   axis=ax)
        for i in range(count)
    )


def _relative_grid(grid, window_bins):
    dz = grid.z_step()
    w = window_bins
    edges = tuple(dz * (i - w) for i in range(2 * w + 1))
    return VoxelGrid(rho_edges=grid.rho_edges, n_phi=grid.n_phi,
                     z_edges=edges)


def image_pipe(model, coil, sensors, grid, x_true, probe_positions,
               frequencies, algorithm="convex", snr_db=None, priors=None,
               prior=0.5, seed=0, window_bins=None, configs=None,
               n_sub=(1, 1, 1), quad=None):
    """Scan the probe along the bore and fuse per-stop recoveries.

    The sensitivity of the voxel window around the probe is computed once on
    a probe-relative grid and reused at every stop by index translation, so
    probe positions must be multiples of the axial bin size.  x_true marks
    vacated voxels (1 = metal missing) on the global grid.
    """
    from ..bench import default_algorithm_configs, run_algorithm

    if priors is None:
        priors = PriorConfig()
    nr, nphi, nz = grid.shape
    dz = grid.z_step()
    x_flat = np.asarray(x_true, dtype=np.float64).reshape(grid.n_voxels)

    if window_bins is None:
        window_bins = min(nz, 6)
    w = int(window_bins)
    rel = _relative_grid(grid, w)

    # per-frequency channels on the relative grid
    channels = []
    for f in np.atleast_1d(frequencies):
        mf = replace(model, omega=2.0 * math.pi * float(f))
        ss, sm = build_sensitivity(mf, coil, sensors, rel, n_sub=n_sub,
                                   quad=quad)
        channels.extend(assemble_phi(ss, sm, model.sigma2,
                                     MU0 * model.mu_r2, [f]))
    n_ch = len(channels)

    snr = None
    if snr_db is not None:
        snr = np.broadcast_to(np.asarray(snr_db, dtype=np.float64), (n_ch,))
    cfg_map = default_algorithm_configs(snr is None)
    if configs:
        cfg_map.update(configs)
    cfg = cfg_map[algorithm]

    base_logit = float(logit(prior))
    images = []
    for p_idx, z_p in enumerate(probe_positions):
        offset = (z_p - grid.z_edges[0]) / dz
        g0 = round(offset) - w
        if abs(offset - round(offset)) > 1e-9:
            raise GridMismatch(
                f"probe position {z_p:g} is not aligned to the z bins"
            )
        rel_bins = np.arange(2 * w)
        glob_bins = g0 + rel_bins
        valid = (glob_bins >= 0) & (glob_bins < nz)
        if not valid.any():
            continue
        shell = np.arange(nr * nphi)
        rel_cols = (shell[:, None] * (2 * w) + rel_bins[valid]).ravel()
        glob_cols = (shell[:, None] * nz + glob_bins[valid]).ravel()

        x_win = x_flat[glob_cols]
        phis, ys = [], []
        for l, phi_rel in enumerate(channels):
            phi_l = phi_rel[:, rel_cols]
            y_l = phi_l @ x_win
            if snr is not None:
                rng = np.random.Generator(np.random.Philox(
                    np.random.SeedSequence(entropy=seed,
                                           spawn_key=(p_idx, l, 0))))
                raw = rng.standard_normal(y_l.size)
                sig = np.linalg.norm(y_l)
                rn = np.linalg.norm(raw)
                if sig > 0.0 and rn > 0.0:
                    y_l = y_l + raw * (sig * 10.0 ** (-snr[l] / 20.0) / rn)
            scale = np.abs(phi_l).max()
            if scale == 0.0:
                scale = 1.0
            phis.append(phi_l / scale)
            ys.append(y_l / scale)
        ms = measurement_set(phis, ys)
        try:
            x_hat = run_algorithm(algorithm, ms, priors, cfg)
        except (BitrecError, np.linalg.LinAlgError) as exc:
            # a failed stop contributes only the prior; neighbours overlap
            log.warning("recovery failed at probe stop %d (z=%g): %s",
                        p_idx, z_p, exc)
            x_hat = np.full(len(rel_cols), prior)

        lo = np.full(grid.n_voxels, base_logit)
        lo[glob_cols] = logit(x_hat)
        images.append(new_image(grid, lo.reshape(grid.shape),
                                model.sigma2, MU0 * model.mu_r2))
    return merge_logodds(images, prior=prior)


# ---------------------------------------------------------------------------
# configuration and emission

@dataclass(frozen=True)
class ImagingSetup:
    model: PipeModel
    coil: CoilSpec
    sensors: tuple
    grid: VoxelGrid
    probe_positions: tuple
    frequencies: tuple
    algorithm: str
    snr_db: object
    seed: int
    window_bins: object
    x_true: np.ndarray
    prior: float


def load_pipe_config(path):
    """Parse the declarative imaging config (JSON).

    Documented keys: pipe {rho1, rho2, sigma, mu_r}, spectral {nu_max,
    kappa_max, kappa_samples}, frequencies_hz, coil {loops: [{radius, z,
    amp_turns, sign}]}, sensor_ring {radius, count, axis, z}, voxel_grid
    {rho_layers, phi_bins, z_bins, z_min, z_max}, probe {start, step,
    count}, window_bins, algorithm, snr_db, seed, prior, defects
    [[i_rho, i_phi, i_z], ...].
    """
    with open(path) as fh:
        cfg = json.load(fh)
    pipe = cfg["pipe"]
    spectral = cfg.get("spectral", {})
    freqs = tuple(float(f) for f in cfg["frequencies_hz"])
    model = PipeModel(
        rho1=float(pipe["rho1"]), rho2=float(pipe["rho2"]),
        sigma2=float(pipe.get("sigma", 3.5e7)),
        mu_r2=float(pipe.get("mu_r", 1.0)),
        omega=2.0 * math.pi * freqs[0],
        nu_max=int(spectral.get("nu_max", 12)),
        kappa_max=float(spectral.get("kappa_max", 3000.0)),
        kappa_samples=int(spectral.get("kappa_samples", 512)),
    )
    coil = CoilSpec(loops=tuple(
        Loop(radius=float(lp["radius"]), z=float(lp["z"]),
             amp_turns=float(lp.get("amp_turns", 1.0)),
             sign=int(lp.get("sign", 1)))
        for lp in cfg["coil"]["loops"]
    ))
    ring = cfg["sensor_ring"]
    sensors = _sensor_ring(float(ring["radius"]), int(ring["count"]),
                           ring.get("axis", "phi"), float(ring.get("z", 0.0)))
    vg = cfg["voxel_grid"]
    rho_edges = np.linspace(model.rho1, model.rho2,
                            int(vg["rho_layers"]) + 1)
    z_edges = np.linspace(float(vg["z_min"]), float(vg["z_max"]),
                          int(vg["z_bins"]) + 1)
    grid = VoxelGrid(rho_edges=tuple(rho_edges), n_phi=int(vg["phi_bins"]),
                     z_edges=tuple(z_edges))
    probe = cfg["probe"]
    positions = tuple(float(probe["start"]) + i * float(probe["step"])
                      for i in range(int(probe["count"])))
    x_true = np.zeros(grid.shape)
    for ir, ip, iz in cfg.get("defects", []):
        x_true[int(ir), int(ip), int(iz)] = 1.0
    return ImagingSetup(
        model=model, coil=coil, sensors=sensors, grid=grid,
        probe_positions=positions, frequencies=freqs,
        algorithm=cfg.get("algorithm", "convex"),
        snr_db=cfg.get("snr_db"), seed=int(cfg.get("seed", 0)),
        window_bins=cfg.get("window_bins"),
        x_true=x_true.reshape(-1), prior=float(cfg.get("prior", 0.5)),
    )


def run_setup(setup, configs=None, n_sub=(1, 1, 1), quad=None):
    return image_pipe(
        setup.model, setup.coil, setup.sensors, setup.grid, setup.x_true,
        setup.probe_positions, setup.frequencies,
        algorithm=setup.algorithm, snr_db=setup.snr_db, seed=setup.seed,
        window_bins=setup.window_bins, prior=setup.prior,
        configs=configs, n_sub=n_sub, quad=quad,
    )


def write_image_csv(image, path):
    """voxel,rho_layer,phi_bin,z_bin,logodds,p — one row per voxel in flat
    order, fixed formatting for byte-reproducibility."""
    p = probabilities(image)
    lines = ["voxel,rho_layer,phi_bin,z_bin,logodds,p"]
    nr, nphi, nz = image.grid.shape
    flat = 0
    for ir in range(nr):
        for ip in range(nphi):
            for iz in range(nz):
                lines.append(
                    f"{flat},{ir},{ip},{iz},"
                    f"{image.logodds[ir, ip, iz]:.12g},"
                    f"{p[ir, ip, iz]:.12g}"
                )
                flat += 1
    with open(path, "w", newline="") as fh:
        fh.write("\n".join(lines) + "\n")


def write_image_svg(image, path):
    """Unrolled-cylinder probability heat map, one panel per radial layer."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    p = probabilities(image)
    nr = image.grid.n_rho
    z_edges = np.asarray(image.grid.z_edges) * 1e3
    phi_edges = np.degrees(image.grid.phi_edges)
    with matplotlib.rc_context({"svg.hashsalt": "bitrec"}):
        fig, axes = plt.subplots(nr, 1, figsize=(7.0, 1.8 * nr),
                                 squeeze=False, sharex=True)
        for ir in range(nr):
            ax = axes[ir, 0]
            mesh = ax.pcolormesh(z_edges, phi_edges, p[ir], vmin=0.0,
                                 vmax=1.0, cmap="magma", shading="flat")
            r_lo = image.grid.rho_edges[ir] * 1e3
            r_hi = image.grid.rho_edges[ir + 1] * 1e3
            ax.set_ylabel(f"{r_lo:.2f}-{r_hi:.2f} mm\nphi [deg]")
            fig.colorbar(mesh, ax=ax, label="p(defect)")
        axes[-1, 0].set_xlabel("z [mm]")
        fig.suptitle("defect probability by radial layer")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def write_image_metadata(image, path, extra=None):
    meta = {
        "grid": {
            "rho_edges": list(image.grid.rho_edges),
            "n_phi": image.grid.n_phi,
            "z_edges": list(image.grid.z_edges),
        },
        "logodds_clamp": L_MAX,
        "note": INVERSE_CRIME_NOTE,
        "nominal_sigma": float(image.sigma.flat[0]),
        "nominal_mu": float(image.mu.flat[0]),
    }
    if extra:
        meta.update(extra)
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
