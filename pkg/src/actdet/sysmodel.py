"""Synthetic grant-free-access scene generation.

One scene is a single coherence block: N single-antenna devices, an
M-antenna base station, pilot length L.  Active devices transmit their
pilots simultaneously over flat Rayleigh fading; the received signal is

    Y = S diag(gamma)^{1/2} H + Z,            Y in C^{L x M},

where gamma_n = alpha_n * g_n is the effective pathloss (transmit power
folded into g_n), H has i.i.d. CN(0,1) entries and Z i.i.d. CN(0, sigma^2).
All detectors consume the empirical covariance (1/M) Y Y^H.

Randomness comes from numpy's counter-based Philox generator seeded via
SeedSequence, so scenes are reproducible from (config, seed) and streams
for independent samples never overlap.  Distributions (not bit streams)
are the portable contract.
"""

from __future__ import annotations

import json
import pathlib
from dataclasses import dataclass, field, asdict

import numpy as np


class DomainError(ValueError):
    """Raised when an argument leaves an operation's mathematical domain."""


# ---------------------------------------------------------------------------
# Configuration
# ---------------------------------------------------------------------------

@dataclass(frozen=True)
class ActivityModel:
    """Activity law for the N devices.

    variant "iid": each device is active independently with probability p.
    variant "group": devices are partitioned into contiguous disjoint groups
    of group_size; each group is active independently with probability
    p_group and all members of an active group transmit.  group_size=1
    reduces to the i.i.d. model.
    """

    variant: str = "iid"
    p: float = 0.05
    group_size: int = 1
    p_group: float = 0.05

    def __post_init__(self):
        if self.variant not in ("iid", "group"):
            raise DomainError(f"unknown activity variant {self.variant!r}")
        prob = self.p if self.variant == "iid" else self.p_group
        if not 0.0 < prob < 1.0:
            raise DomainError("activity probability must lie in (0,1)")
        if self.variant == "group" and self.group_size < 1:
            raise DomainError("group_size must be >= 1")

    @classmethod
    def iid(cls, p: float) -> "ActivityModel":
        return cls(variant="iid", p=p)

    @classmethod
    def group(cls, group_size: int, p_group: float) -> "ActivityModel":
        return cls(variant="group", group_size=group_size, p_group=p_group)

    def marginal_p(self) -> float:
        """Per-device activation probability."""
        return self.p if self.variant == "iid" else self.p_group


@dataclass(frozen=True)
class SystemConfig:
    """Scenario scalars for scene generation.

    Powers are linear milliwatts (noise_power) or dBm (tx_power_dbm), so
    the default noise power 10**-11.4 mW corresponds to -114 dBm (1 MHz
    bandwidth at -174 dBm/Hz).
    """

    n_devices: int = 1000              # N
    pilot_len: int = 40                # L, non-orthogonal regime L < N
    n_antennas: int = 256              # M
    noise_power: float = 10.0 ** -11.4  # sigma^2, mW
    tx_power_dbm: float = 23.0         # P
    d_inner: float = 20.0              # annulus inner radius, m
    d_outer: float = 200.0             # annulus outer radius, m
    pathloss_exp: float = 2.5          # eta
    wavelength: float = 0.086          # lambda, m
    activity: ActivityModel = field(default_factory=ActivityModel)
    seed: int = 0
    freeze_pilots: bool = False        # one pilot matrix for a whole dataset

    def __post_init__(self):
        if not self.pilot_len < self.n_devices:
            raise DomainError("pilot_len must be < n_devices (non-orthogonal regime)")
        for name in ("noise_power", "d_inner", "d_outer", "wavelength"):
            if getattr(self, name) <= 0:
                raise DomainError(f"{name} must be strictly positive")
        if not self.d_inner < self.d_outer:
            raise DomainError("d_inner must be < d_outer")
        if self.activity.variant == "group" and self.n_devices % self.activity.group_size:
            raise DomainError("group_size must divide n_devices")

    @property
    def tx_power_mw(self) -> float:
        return 10.0 ** (self.tx_power_dbm / 10.0)

    def replace(self, **kwargs) -> "SystemConfig":
        d = asdict(self)
        d["activity"] = self.activity
        if "activity" in kwargs and isinstance(kwargs["activity"], dict):
            kwargs["activity"] = ActivityModel(**kwargs["activity"])
        d.update(kwargs)
        return SystemConfig(**d)


# ---------------------------------------------------------------------------
# Pathloss law
# ---------------------------------------------------------------------------

def pathloss_db(d, eta: float, wavelength: float):
    """Pathloss of the power law, in dB: 10*eta*log10(4*pi*d / lambda)."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("distance must be strictly positive")
    return 10.0 * eta * np.log10(4.0 * np.pi * d / wavelength)


def raw_pathloss_gain(d, eta: float, wavelength: float):
    """Linear power attenuation (4*pi*d/lambda)**-eta; decreasing in d."""
    d = np.asarray(d, dtype=float)
    if np.any(d <= 0):
        raise DomainError("distance must be strictly positive")
    return (4.0 * np.pi * d / wavelength) ** (-eta)


def pathloss_gain(d, cfg: SystemConfig):
    """Large-scale gain with transmit power folded in, mW scale.

    g = P_lin * (4*pi*d/lambda)**-eta, keeping the received-signal model
    free of an explicit power factor while matching SNR = 10log10(P/sigma^2).
    """
    return cfg.tx_power_mw * raw_pathloss_gain(d, cfg.pathloss_exp, cfg.wavelength)


# ---------------------------------------------------------------------------
# Scene generation
# ---------------------------------------------------------------------------

@dataclass
class Sample:
    """One realization: pilots, channel gains, activities and statistics.

    eff_pathloss is alpha * gains elementwise; emp_cov = (1/M) Y Y^H.
    noise_power is carried along because every detector needs sigma^2.
    """

    pilots: np.ndarray        # complex (L, N), columns with norm sqrt(L)
    gains: np.ndarray         # float (N,), linear, tx power folded in
    activities: np.ndarray    # float (N,) of {0,1}
    eff_pathloss: np.ndarray  # float (N,), gamma = alpha * g
    received: np.ndarray      # complex (L, M)
    emp_cov: np.ndarray       # complex Hermitian (L, L)
    noise_power: float

    @property
    def n_devices(self) -> int:
        return self.pilots.shape[1]

    @property
    def pilot_len(self) -> int:
        return self.pilots.shape[0]

    @property
    def n_antennas(self) -> int:
        return self.received.shape[1]


def make_rng(seed) -> np.random.Generator:
    """Philox generator from an int seed, entropy list, or SeedSequence."""
    if not isinstance(seed, np.random.SeedSequence):
        seed = np.random.SeedSequence(seed)
    return np.random.Generator(np.random.Philox(seed))


def _complex_normal(rng: np.random.Generator, shape, scale: float = 1.0):
    """i.i.d. CN(0, scale): real/imag parts N(0, scale/2)."""
    z = rng.standard_normal(shape) + 1j * rng.standard_normal(shape)
    return z * np.sqrt(scale / 2.0)


def draw_pilots(rng: np.random.Generator, pilot_len: int, n_devices: int):
    """Complex Gaussian pilots rescaled so every column has norm sqrt(L)."""
    s = _complex_normal(rng, (pilot_len, n_devices))
    norms = np.linalg.norm(s, axis=0)
    return s * (np.sqrt(pilot_len) / norms)


def draw_distances(rng: np.random.Generator, n: int, d_inner: float, d_outer: float):
    """Distances with density 2d/(d_outer^2 - d_inner^2) (uniform in the annulus)."""
    u = rng.random(n)
    return np.sqrt(d_inner ** 2 + u * (d_outer ** 2 - d_inner ** 2))


def draw_activities(rng: np.random.Generator, n: int, model: ActivityModel):
    if model.variant == "iid":
        return (rng.random(n) < model.p).astype(float)
    n_groups = n // model.group_size
    on = rng.random(n_groups) < model.p_group
    return np.repeat(on, model.group_size).astype(float)


def synthesize_received(pilots, eff_pathloss, noise_power: float, n_antennas: int,
                        rng: np.random.Generator):
    """Draw fresh H, Z and return (Y, emp_cov) for the given effective pathloss."""
    n = pilots.shape[1]
    h = _complex_normal(rng, (n, n_antennas))
    z = _complex_normal(rng, (pilots.shape[0], n_antennas), scale=noise_power)
    y = (pilots * np.sqrt(eff_pathloss)) @ h + z
    return y, empirical_cov(y, n_antennas)


def sample_scene(cfg: SystemConfig, rng: np.random.Generator,
                 pilots: np.ndarray | None = None) -> Sample:
    """Generate one scene.  Deterministic given the generator state.

    Draw order is fixed: pilots, distances, activities, channel, noise.
    Pass `pilots` to reuse a frozen pilot matrix (skips the pilot draw).
    """
    if pilots is None:
        pilots = draw_pilots(rng, cfg.pilot_len, cfg.n_devices)
    d = draw_distances(rng, cfg.n_devices, cfg.d_inner, cfg.d_outer)
    alpha = draw_activities(rng, cfg.n_devices, cfg.activity)
    g = pathloss_gain(d, cfg)
    gamma = alpha * g
    y, emp_cov = synthesize_received(pilots, gamma, cfg.noise_power, cfg.n_antennas, rng)
    return Sample(pilots=pilots, gains=g, activities=alpha, eff_pathloss=gamma,
                  received=y, emp_cov=emp_cov, noise_power=cfg.noise_power)


def empirical_cov(y: np.ndarray, n_antennas: int) -> np.ndarray:
    """(1/M) Y Y^H, Hermitian positive semidefinite."""
    if n_antennas < 1:
        raise DomainError("n_antennas must be >= 1")
    return (y @ y.conj().T) / n_antennas


def normalize_noise(sample: Sample) -> Sample:
    """Equivalent scene with unit noise power.

    Dividing received power, gains and noise by sigma^2 is an exact
    reparametrization of the detection problem: activity estimates and
    gain-normalized effective-pathloss estimates are unchanged, while all
    detector-internal quantities move to O(1) scales.
    """
    s2 = sample.noise_power
    return Sample(pilots=sample.pilots, gains=sample.gains / s2,
                  activities=sample.activities,
                  eff_pathloss=sample.eff_pathloss / s2,
                  received=sample.received / np.sqrt(s2),
                  emp_cov=sample.emp_cov / s2, noise_power=1.0)


def gen_dataset(cfg: SystemConfig, n_samples: int, base_seed: int) -> list[Sample]:
    """Independent scenes from per-sample Philox streams.

    Streams are spawned from SeedSequence(base_seed); child 0 is reserved
    for the frozen pilot matrix when cfg.freeze_pilots is set, children
    1..n drive the individual samples, so frozen and redrawn datasets stay
    reproducible from the same base seed.
    """
    root = np.random.SeedSequence(base_seed)
    children = root.spawn(n_samples + 1)
    pilots = None
    if cfg.freeze_pilots:
        pilots = draw_pilots(make_rng(children[0]), cfg.pilot_len, cfg.n_devices)
    return [sample_scene(cfg, make_rng(children[i + 1]), pilots=pilots)
            for i in range(n_samples)]


# ---------------------------------------------------------------------------
# Scene batch persistence: binary tensors + JSON manifest
# ---------------------------------------------------------------------------

_FIELDS = ("pilots", "gains", "activities", "eff_pathloss", "received", "emp_cov")


def save_scenes(directory, samples: list[Sample], cfg: SystemConfig, base_seed: int):
    """Persist a scene batch as one .npy per field plus manifest.json."""
    directory = pathlib.Path(directory)
    directory.mkdir(parents=True, exist_ok=True)
    arrays = {name: np.stack([getattr(s, name) for s in samples]) for name in _FIELDS}
    for name, arr in arrays.items():
        np.save(directory / f"{name}.npy", arr)
    cfg_echo = asdict(cfg)
    manifest = {
        "n_samples": len(samples),
        "seed": base_seed,
        "config": cfg_echo,
        "tensors": {name: {"shape": list(arr.shape), "dtype": str(arr.dtype)}
                    for name, arr in arrays.items()},
    }
    (directory / "manifest.json").write_text(json.dumps(manifest, indent=2, sort_keys=True))


def load_scenes(directory) -> tuple[list[Sample], dict]:
    """Inverse of save_scenes; returns (samples, manifest)."""
    directory = pathlib.Path(directory)
    manifest = json.loads((directory / "manifest.json").read_text())
    arrays = {name: np.load(directory / f"{name}.npy") for name in _FIELDS}
    noise = manifest["config"]["noise_power"]
    samples = [Sample(**{name: arrays[name][i] for name in _FIELDS}, noise_power=noise)
               for i in range(manifest["n_samples"])]
    return samples, manifest
