"""Synthetic benchmark harness: random instance generation with exact-SNR
noise, trial sweeps over M or s with IoU aggregation, a brute-force
enumeration oracle for small N, restricted-isometry diagnostics, and
CSV/SVG/metadata emission.

Reproducibility contract: every random draw comes from a counter-based
generator keyed by (seed, trial, channel, purpose), so a trial's instance is
identical no matter which order trials execute in, and a sweep rerun with the
same spec and seed produces byte-identical CSV.
"""

import json
import math
import time
from dataclasses import dataclass, field

import numpy as np

from .amp import AmpConfig, recover_amp
from .baselines import BaselineConfig, sbl, split_bregman
from .convex import ConvexSolverConfig, recover_convex_em
from .errors import BitrecError, DimensionMismatch, TooLarge
from .meanfield import MeanFieldConfig, recover_mean_field
from .model import PriorConfig, iou, measurement_set, validate

ALGORITHMS = ("convex", "mf", "amp", "split-bregman", "sbl")

# purpose slots for the counter-based generator
_PURPOSE_PHI = 0
_PURPOSE_X = 1
_PURPOSE_NOISE = 2


@dataclass(frozen=True)
class ExperimentSpec:
    n: int
    m: int
    l_channels: int = 1
    sparsity_s: int = 1
    snr_db: tuple | None = None
    trials: int = 1
    seed: int = 0
    algorithms: tuple = ("convex",)
    sweep: tuple | None = None  # (param in {"m", "sparsity_s"}, values)

    def __post_init__(self):
        if self.snr_db is not None:
            object.__setattr__(self, "snr_db", tuple(float(v) for v in self.snr_db))
        object.__setattr__(self, "algorithms", tuple(self.algorithms))
        if self.sweep is not None:
            if isinstance(self.sweep, dict):
                param, values = self.sweep["param"], self.sweep["values"]
            else:
                param, values = self.sweep
            object.__setattr__(self, "sweep", (str(param), tuple(values)))

    def validate(self):
        if self.n < 1 or self.m < 1 or self.l_channels < 1:
            raise DimensionMismatch("n, m, l_channels must be positive")
        if not 0 <= self.sparsity_s <= self.n:
            raise DimensionMismatch(f"s={self.sparsity_s} outside [0, {self.n}]")
        if self.trials < 1:
            raise DimensionMismatch("trials must be >= 1")
        if self.snr_db is not None and len(self.snr_db) != self.l_channels:
            raise DimensionMismatch("snr_db length must equal l_channels")
        for name in self.algorithms:
            if name not in ALGORITHMS:
                raise DimensionMismatch(f"unknown algorithm {name!r}")
        if self.sweep is not None:
            param, values = self.sweep
            if param not in ("m", "sparsity_s"):
                raise DimensionMismatch(f"cannot sweep {param!r}")
            if len(values) == 0:
                raise DimensionMismatch("empty sweep value list")

    def to_dict(self):
        d = {
            "n": self.n, "m": self.m, "l_channels": self.l_channels,
            "sparsity_s": self.sparsity_s,
            "snr_db": list(self.snr_db) if self.snr_db is not None else None,
            "trials": self.trials, "seed": self.seed,
            "algorithms": list(self.algorithms),
        }
        if self.sweep is not None:
            d["sweep"] = {"param": self.sweep[0], "values": list(self.sweep[1])}
        return d

    @classmethod
    def from_dict(cls, d):
        sweep = None
        if d.get("sweep") is not None:
            sweep = (d["sweep"]["param"], tuple(d["sweep"]["values"]))
        return cls(
            n=int(d["n"]), m=int(d["m"]),
            l_channels=int(d.get("l_channels", 1)),
            sparsity_s=int(d.get("sparsity_s", 1)),
            snr_db=d.get("snr_db"),
            trials=int(d.get("trials", 1)),
            seed=int(d.get("seed", 0)),
            algorithms=tuple(d.get("algorithms", ("convex",))),
            sweep=sweep,
        )


@dataclass(frozen=True)
class SweepRow:
    sweep_param: str
    value: float
    algorithm: str
    trials: int           # successful trials entering the mean
    mean_iou: float
    std_iou: float
    mean_runtime_ms: float
    failures: int


@dataclass(frozen=True)
class SweepResult:
    spec: ExperimentSpec
    rows: tuple


def _rng(seed, trial, channel, purpose):
    ss = np.random.SeedSequence(entropy=seed,
                                spawn_key=(trial, channel, purpose))
    return np.random.Generator(np.random.Philox(ss))


def generate_instance(spec, trial_index):
    """Draw one (MeasurementSet, x_true) pair.

    Phi entries are i.i.d. standard normal, x_true is uniform over binary
    vectors with exactly s ones, and when an SNR is requested the noise
    realization is rescaled so 10*log10(||Phi x||^2 / ||n||^2) hits the
    target exactly.
    """
    spec.validate()
    n, m, nch = spec.n, spec.m, spec.l_channels

    rng_x = _rng(spec.seed, trial_index, 0, _PURPOSE_X)
    support = rng_x.choice(n, size=spec.sparsity_s, replace=False)
    x_true = np.zeros(n)
    x_true[support] = 1.0

    phis, ys = [], []
    for ell in range(nch):
        phi = _rng(spec.seed, trial_index, ell, _PURPOSE_PHI) \
            .standard_normal((m, n))
        y = phi @ x_true
        if spec.snr_db is not None:
            raw = _rng(spec.seed, trial_index, ell, _PURPOSE_NOISE) \
                .standard_normal(m)
            signal = np.linalg.norm(y)
            raw_norm = np.linalg.norm(raw)
            if signal > 0.0 and raw_norm > 0.0:
                target = signal * 10.0 ** (-spec.snr_db[ell] / 20.0)
                y = y + raw * (target / raw_norm)
        phis.append(phi)
        ys.append(y)
    return measurement_set(phis, ys), x_true


def default_algorithm_configs(noiseless):
    eps = 0.0 if noiseless else None
    # The split-Bregman lambda is fixed rather than data-driven: the adaptive
    # 0.1*||phi^T y||_inf rule over-regularizes dense binary signals, while a
    # constant 4.0 tracks the recovery transition across the m and s sweeps.
    return {
        "convex": ConvexSolverConfig(epsilon_override=eps),
        "mf": MeanFieldConfig(),
        "amp": AmpConfig(),
        "split-bregman": BaselineConfig(lambda_reg=4.0, max_iters=20000,
                                        tol=1e-8),
        "sbl": BaselineConfig(tol=1e-6, max_iters=2000),
    }


def _first_channel_set(ms):
    ch = ms.channels[0]
    return measurement_set([ch.phi], [ch.y], [ch.beta])


def run_algorithm(name, ms, priors, config):
    """Run one algorithm on one instance, returning the continuous estimate.

    Baselines see only the first channel (they are single-channel methods).
    """
    if name == "convex":
        return recover_convex_em(ms, priors, config).x_hat
    if name == "mf":
        result, _ = recover_mean_field(ms, priors, config)
        return result.x_hat
    if name == "amp":
        return recover_amp(ms, priors, config).x_hat
    if name == "split-bregman":
        return split_bregman(_first_channel_set(ms), config).x
    if name == "sbl":
        return sbl(_first_channel_set(ms), config).x
    raise DimensionMismatch(f"unknown algorithm {name!r}")


def run_sweep(spec, priors=None, configs=None, timing=False, threads=1):
    """Execute the experiment: for every swept value and algorithm, run all
    trials, threshold at 0.5, score IoU against the truth, and aggregate.

    A trial where an algorithm raises (iteration cap, infeasibility,
    linear-algebra breakdown) is excluded from the mean and counted in the
    failures column.  Runtimes are recorded only when timing=True so that
    repeated runs stay byte-identical.
    """
    spec.validate()
    if priors is None:
        priors = PriorConfig()

    if spec.sweep is not None:
        param, values = spec.sweep
    else:
        param, values = "m", (spec.m,)

    rows = []
    for value in values:
        point = _spec_at(spec, param, value)
        base_cfg = default_algorithm_configs(point.snr_db is None)
        if configs:
            base_cfg.update(configs)
        per_algo = {name: _run_point(point, name, priors, base_cfg[name],
                                     timing, threads)
                    for name in point.algorithms}
        for name in point.algorithms:
            ious, runtimes, failures = per_algo[name]
            count = len(ious)
            mean = float(np.mean(ious)) if count else math.nan
            std = float(np.std(ious)) if count else math.nan
            rt = float(np.mean(runtimes)) if (timing and count) else 0.0
            rows.append(SweepRow(param, float(value), name, count,
                                 mean, std, rt, failures))
    return SweepResult(spec=spec, rows=tuple(rows))


def _spec_at(spec, param, value):
    d = spec.to_dict()
    d[param] = int(value)
    d.pop("sweep", None)
    return ExperimentSpec.from_dict(d)


def _run_point(point, name, priors, config, timing, threads):
    def one_trial(t):
        ms, x_true = generate_instance(point, t)
        t0 = time.perf_counter() if timing else 0.0
        try:
            x_hat = run_algorithm(name, ms, priors, config)
        except (BitrecError, np.linalg.LinAlgError):
            return None
        elapsed = (time.perf_counter() - t0) * 1e3 if timing else 0.0
        x_bin = (np.asarray(x_hat) > priors.threshold).astype(np.float64)
        return iou(x_bin, x_true), elapsed

    if threads > 1:
        from concurrent.futures import ThreadPoolExecutor
        with ThreadPoolExecutor(max_workers=threads) as pool:
            outcomes = list(pool.map(one_trial, range(point.trials)))
    else:
        outcomes = [one_trial(t) for t in range(point.trials)]

    ious = [o[0] for o in outcomes if o is not None]
    runtimes = [o[1] for o in outcomes if o is not None]
    failures = sum(1 for o in outcomes if o is None)
    return ious, runtimes, failures


# ---------------------------------------------------------------------------
# exhaustive oracle

def stacked(ms):
    """Whitened stack: rows of each channel scaled by sqrt(beta) (1 when
    beta is unknown), concatenated."""
    validate(ms)
    blocks_a, blocks_b = [], []
    for ch in ms.channels:
        w = math.sqrt(ch.beta) if ch.beta is not None else 1.0
        blocks_a.append(w * ch.phi)
        blocks_b.append(w * ch.y)
    return np.vstack(blocks_a), np.concatenate(blocks_b)


def brute_force_oracle(ms, epsilon, return_count=False):
    """Enumerate all 2^N binary vectors; among the feasible ones
    (||Phi~ x - y~||_2 <= epsilon, with a small float slack) return the one
    with fewest ones, ties broken lexicographically smallest.  None when the
    feasible set is empty.  Guarded to N <= 20.
    """
    a, b = stacked(ms)
    n = a.shape[1]
    if n > 20:
        raise TooLarge(f"N={n} exceeds the exhaustive-enumeration guard (20)")
    limit = epsilon + 1e-9 * (1.0 + np.linalg.norm(b))

    # bit j of the code is x[j] with x[0] as the most significant bit, so
    # ascending codes enumerate vectors in lexicographic order
    shifts = np.arange(n - 1, -1, -1, dtype=np.uint32)
    best_pop, best_code, ties = None, None, 0
    chunk = 1 << min(n, 15)
    for start in range(0, 1 << n, chunk):
        codes = np.arange(start, min(start + chunk, 1 << n), dtype=np.uint32)
        bits = ((codes[:, None] >> shifts[None, :]) & 1).astype(np.float64)
        resid = bits @ a.T
        resid -= b
        feas = np.linalg.norm(resid, axis=1) <= limit
        if not feas.any():
            continue
        pops = bits[feas].sum(axis=1).astype(np.int64)
        codes_f = codes[feas]
        lo = int(pops.min())
        if best_pop is None or lo < best_pop:
            best_pop = lo
            sel = codes_f[pops == lo]
            best_code = int(sel[0])
            ties = int(sel.size)
        elif lo == best_pop:
            ties += int((pops == lo).sum())
    if best_pop is None:
        return (None, 0) if return_count else None
    x = ((best_code >> shifts) & 1).astype(np.float64)
    return (x, ties) if return_count else x


# ---------------------------------------------------------------------------
# restricted-isometry diagnostics

_SQRT2M1 = math.sqrt(2.0) - 1.0


@dataclass(frozen=True)
class RipEstimate:
    delta_s: float        # exact when `exact`, else a sampled lower bound
    exact: bool
    delta_s_b_lower: float
    c_bound: float | None  # None when delta_s_b_lower >= sqrt(2)-1


def recovery_constant(delta):
    """Error amplification factor 4*sqrt(1+d)/(1-(sqrt(2)+1)d); None outside
    the guarantee region d < sqrt(2)-1."""
    if delta >= _SQRT2M1:
        return None
    return 4.0 * math.sqrt(1.0 + delta) / (1.0 - (math.sqrt(2.0) + 1.0) * delta)


def estimate_rip_constants(phi, s, samples=2000, seed=0):
    """Diagnose how far Phi is from an s-restricted isometry.

    delta_s is computed exactly (extreme eigenvalues of every size-s Gram
    submatrix) when there are at most 1e5 supports, otherwise over sampled
    supports (then it is a lower bound).  delta_s_b_lower is always a sampled
    lower bound using s-sparse vectors with entries in [-1, 1].
    """
    phi = np.asarray(phi, dtype=np.float64)
    n = phi.shape[1]
    if s > n:
        raise DimensionMismatch(f"s={s} > N={n}")
    if s == 0:
        return RipEstimate(0.0, True, 0.0, recovery_constant(0.0))
    gram = phi.T @ phi
    rng = np.random.Generator(np.random.Philox(np.random.SeedSequence(seed)))

    n_supports = math.comb(n, s)
    exact = n_supports <= 100_000
    if exact:
        from itertools import combinations
        supports = combinations(range(n), s)
    else:
        supports = (rng.choice(n, size=s, replace=False)
                    for _ in range(samples))
    delta = 0.0
    for sup in supports:
        idx = np.fromiter(sup, dtype=np.intp, count=s)
        ev = np.linalg.eigvalsh(gram[np.ix_(idx, idx)])
        delta = max(delta, abs(ev[-1] - 1.0), abs(1.0 - ev[0]))

    delta_b = 0.0
    for _ in range(samples):
        idx = rng.choice(n, size=s, replace=False)
        x = rng.uniform(-1.0, 1.0, size=s)
        nrm2 = float(x @ x)
        if nrm2 == 0.0:
            continue
        ratio = float(np.linalg.norm(phi[:, idx] @ x) ** 2) / nrm2
        delta_b = max(delta_b, abs(ratio - 1.0))
    if exact:
        delta_b = min(delta_b, delta)  # bound ordering is definitional

    return RipEstimate(delta_s=delta, exact=exact,
                       delta_s_b_lower=delta_b,
                       c_bound=recovery_constant(delta_b))


# ---------------------------------------------------------------------------
# emission

CSV_HEADER = ("sweep_param,value,algorithm,trials,mean_iou,std_iou,"
              "mean_runtime_ms,failures")


def _fmt(v):
    if isinstance(v, float):
        return f"{v:.12g}"
    return str(v)


def write_sweep_csv(result, path):
    lines = [CSV_HEADER]
    for r in result.rows:
        lines.append(",".join([
            r.sweep_param, _fmt(r.value), r.algorithm, str(r.trials),
            _fmt(r.mean_iou), _fmt(r.std_iou), _fmt(r.mean_runtime_ms),
            str(r.failures),
        ]))
    data = "\n".join(lines) + "\n"
    with open(path, "w", newline="") as fh:
        fh.write(data)


def write_sweep_svg(result, path):
    """Line chart of mean IoU (+/- one std) per algorithm over the swept
    value, rendered deterministically."""
    import matplotlib
    matplotlib.use("Agg", force=False)
    import matplotlib.pyplot as plt

    with matplotlib.rc_context({"svg.hashsalt": "bitrec"}):
        fig, ax = plt.subplots(figsize=(6.0, 4.0))
        algos = sorted({r.algorithm for r in result.rows})
        param = result.rows[0].sweep_param if result.rows else "m"
        for name in algos:
            pts = [(r.value, r.mean_iou, r.std_iou)
                   for r in result.rows if r.algorithm == name]
            xs = [p[0] for p in pts]
            ys = [p[1] for p in pts]
            es = [p[2] for p in pts]
            ax.errorbar(xs, ys, yerr=es, marker="o", capsize=3, label=name)
        ax.set_xlabel(param)
        ax.set_ylabel("mean IoU")
        ax.set_ylim(-0.02, 1.05)
        ax.grid(True, alpha=0.3)
        ax.legend(loc="best")
        fig.tight_layout()
        fig.savefig(path, format="svg", metadata={"Date": None})
        plt.close(fig)


def build_describe():
    """Best-effort build identifier: git description when running from a
    checkout, else the installed package version."""
    import subprocess
    try:
        out = subprocess.run(
            ["git", "describe", "--always", "--dirty"],
            capture_output=True, text=True, timeout=10,
            cwd=str(__import__("pathlib").Path(__file__).resolve().parent),
        )
        if out.returncode == 0:
            return out.stdout.strip()
    except (OSError, subprocess.SubprocessError):
        pass
    try:
        from importlib.metadata import version
        return "v" + version("bitrec")
    except Exception:
        return "unknown"


def write_metadata(result, path, threads=1, timing=False):
    meta = {
        "spec": result.spec.to_dict(),
        "seed": result.spec.seed,
        "build": build_describe(),
        "threads": threads,
        "timing": timing,
        "threshold": 0.5,
        "snr_convention": "noise rescaled per realization to the exact target",
        "baseline_thresholding": "continuous outputs thresholded at 0.5",
    }
    with open(path, "w") as fh:
        json.dump(meta, fh, indent=2, sort_keys=True)
        fh.write("\n")
