"""Datasets of (covariate, outcome) samples and a synthetic generator.

A sample pairs a covariate vector observed before the delivery day
(cyclically encoded time, temperature, cloud cover, irradiance, plus any
extras) with the realized outcome: real-time grid price trajectory,
per-neighbor trade price trajectories and, optionally, PV/load
perturbations.  The generator stands in for unavailable metered data and
is built so that prices are genuinely predictable from the covariates.

CSV schemas (UTF-8, ',' separator, '.' decimal, repr floats):
  covariates file:  header ``x0,...,x{d-1}``, one row per sample
  outcomes file:    header ``c_q_h0..c_q_h{H-1}`` then, per neighbor m,
                    ``c_nm{m}_h0..`` and optionally ``p_g_h*``/``p_l_h*``
"""

from __future__ import annotations

from dataclasses import dataclass, field, asdict
import json

import numpy as np

__all__ = [
    "Outcome",
    "Sample",
    "Dataset",
    "Standardization",
    "GeneratorConfig",
    "DatasetError",
    "generate_synthetic",
    "generate_community",
    "contextual_shift",
    "load_csv",
    "write_csv",
    "standardize",
    "split",
]

# nominal per-feature location/scale of the default covariate model, used
# to keep the price-sensitivity vector unitless across features
FEATURE_MEANS = np.array([0.0, 0.0, 25.0, 50.0, 500.0])
FEATURE_SCALES = np.array([0.71, 0.71, 4.0, 25.0, 150.0])


class DatasetError(ValueError):
    pass


@dataclass
class Outcome:
    c_q: np.ndarray                 # (H,) realized real-time price
    c_nm: np.ndarray                # (n_neighbors, H) peer trade prices
    p_g: np.ndarray | None = None   # optional per-sample PV perturbation
    p_l: np.ndarray | None = None

    def __post_init__(self):
        self.c_q = np.asarray(self.c_q, dtype=float)
        self.c_nm = np.asarray(self.c_nm, dtype=float).reshape(-1, self.c_q.size)
        if self.p_g is not None:
            self.p_g = np.asarray(self.p_g, dtype=float)
        if self.p_l is not None:
            self.p_l = np.asarray(self.p_l, dtype=float)
        for a in (self.c_q, self.c_nm, self.p_g, self.p_l):
            if a is not None and not np.all(np.isfinite(a)):
                raise DatasetError("outcome contains non-finite values")


@dataclass
class Sample:
    x: np.ndarray
    y: Outcome

    def __post_init__(self):
        self.x = np.asarray(self.x, dtype=float)
        if not np.all(np.isfinite(self.x)):
            raise DatasetError("covariate contains non-finite values")


@dataclass
class Standardization:
    mean: np.ndarray
    std: np.ndarray


@dataclass
class Dataset:
    samples: list[Sample]
    standardization: Standardization | None = None
    provenance: dict = field(default_factory=dict)

    def __post_init__(self):
        if self.samples:
            d = self.samples[0].x.size
            H = self.samples[0].y.c_q.size
            nb = self.samples[0].y.c_nm.shape[0]
            has_pv = self.samples[0].y.p_g is not None
            has_load = self.samples[0].y.p_l is not None
            for i, s in enumerate(self.samples):
                if s.x.size != d or s.y.c_q.size != H or s.y.c_nm.shape[0] != nb:
                    raise DatasetError(f"sample {i} dimensions disagree with sample 0")
                if (s.y.p_g is not None) != has_pv or (s.y.p_l is not None) != has_load:
                    raise DatasetError("optional PV/load fields must be present for all samples or none")

    def __len__(self):
        return len(self.samples)

    @property
    def d_x(self) -> int:
        return self.samples[0].x.size

    @property
    def horizon(self) -> int:
        return self.samples[0].y.c_q.size

    @property
    def n_neighbors(self) -> int:
        return self.samples[0].y.c_nm.shape[0]

    def covariates(self) -> np.ndarray:
        return np.array([s.x for s in self.samples])

    def outcomes(self) -> list[Outcome]:
        return [s.y for s in self.samples]

    def standardized_covariates(self) -> np.ndarray:
        X = self.covariates()
        if self.standardization is None:
            return X
        return (X - self.standardization.mean) / self.standardization.std

    def standardize_query(self, x: np.ndarray) -> np.ndarray:
        x = np.asarray(x, dtype=float)
        if self.standardization is None:
            return x
        return (x - self.standardization.mean) / self.standardization.std

    def subset(self, indices, provenance=None) -> "Dataset":
        return Dataset(
            samples=[self.samples[i] for i in indices],
            standardization=self.standardization,
            provenance=provenance or dict(self.provenance),
        )


@dataclass
class GeneratorConfig:
    """Knobs of the synthetic contextual price/PV/load process."""

    S: int = 50
    H: int = 24
    d_x: int = 5
    n_neighbors: int = 0
    price_base: tuple = ()            # length H, cents/kWh
    price_sensitivity: tuple = ()     # length d_x, applied to standardized covariates
    shape_sensitivity: tuple = ()     # length d_x: contextual evening-peak amplitude
    shape_profile: tuple = ()         # length H, zero-mean hourly contrast pattern
    noise_std: float = 0.5            # per-hour market noise, cents
    c_min: float = 3.0
    c_max: float = 9.0
    obs_noise: float = 0.0            # per-prosumer covariate observation noise (x scale units)
    tariff_spread: float = 0.0        # per-prosumer multiplicative price spread
    include_pv_load: bool = False
    pv_profile: tuple = ()            # length H shape, scaled per prosumer
    load_profile: tuple = ()
    pv_amplitude: float = 0.0
    load_amplitude: float = 0.0

    def __post_init__(self):
        if self.S < 1:
            raise DatasetError("S must be >= 1")
        if not self.c_min < self.c_max:
            raise DatasetError("c_min must be below c_max")
        self.price_base = tuple(self.price_base) if len(self.price_base) else tuple(_default_price_base(self.H))
        if len(self.price_base) != self.H:
            raise DatasetError("price_base length mismatch")
        theta = tuple(self.price_sensitivity) if len(self.price_sensitivity) else (0.0,) * self.d_x
        if len(theta) != self.d_x:
            raise DatasetError("price_sensitivity length mismatch")
        self.price_sensitivity = theta
        theta2 = tuple(self.shape_sensitivity) if len(self.shape_sensitivity) else (0.0,) * self.d_x
        if len(theta2) != self.d_x:
            raise DatasetError("shape_sensitivity length mismatch")
        self.shape_sensitivity = theta2
        self.shape_profile = tuple(self.shape_profile) if len(self.shape_profile) else tuple(_default_shape_profile(self.H))
        self.pv_profile = tuple(self.pv_profile) if len(self.pv_profile) else tuple(_default_pv_shape(self.H))
        self.load_profile = tuple(self.load_profile) if len(self.load_profile) else tuple(_default_load_shape(self.H))

    def to_json(self) -> str:
        return json.dumps(asdict(self), indent=2, sort_keys=True)

    @classmethod
    def from_json(cls, text: str) -> "GeneratorConfig":
        return cls(**json.loads(text))


def _default_price_base(H: int) -> np.ndarray:
    # morning shoulder, mid-day dip (solar), dominant evening peak
    h = np.arange(H)
    return (4.5 + 2.5 * np.exp(-0.5 * ((h - 19.5) / 2.8) ** 2)
            + 0.3 * np.exp(-0.5 * ((h - 8.5) / 2.0) ** 2)
            - 0.6 * np.exp(-0.5 * ((h - 13.0) / 2.4) ** 2))


def _default_shape_profile(H: int) -> np.ndarray:
    # zero-mean contrast: dearer evening, cheaper mid-day
    h = np.arange(H)
    sp = np.exp(-0.5 * ((h - 19.5) / 2.8) ** 2)
    return sp - sp.mean()


def _default_pv_shape(H: int) -> np.ndarray:
    h = np.arange(H)
    return np.maximum(0.0, np.sin(np.pi * (h - 6.0) / 12.0)) ** 1.5


def _default_load_shape(H: int) -> np.ndarray:
    h = np.arange(H)
    base = 0.6 + 0.25 * np.exp(-0.5 * ((h - 8.0) / 2.0) ** 2) + 0.55 * np.exp(-0.5 * ((h - 19.5) / 2.6) ** 2)
    return base / base.max()


def _feature_stats(d_x: int) -> tuple[np.ndarray, np.ndarray]:
    mean = np.zeros(d_x)
    scale = np.ones(d_x)
    take = min(d_x, FEATURE_MEANS.size)
    mean[:take] = FEATURE_MEANS[:take]
    scale[:take] = FEATURE_SCALES[:take]
    return mean, scale


def contextual_shift(config: GeneratorConfig, X: np.ndarray) -> np.ndarray:
    """Price level shift theta'x per sample (x standardized by nominal scales)."""
    mean, scale = _feature_stats(config.d_x)
    theta = np.array(config.price_sensitivity)
    return ((np.atleast_2d(X) - mean) / scale) @ theta


def contextual_amplitude(config: GeneratorConfig, X: np.ndarray) -> np.ndarray:
    """Contextual evening-contrast amplitude per sample."""
    mean, scale = _feature_stats(config.d_x)
    theta = np.array(config.shape_sensitivity)
    return ((np.atleast_2d(X) - mean) / scale) @ theta


def _draw_covariates(rng: np.random.Generator, config: GeneratorConfig) -> np.ndarray:
    S, d = config.S, config.d_x
    X = np.zeros((S, d))
    u = rng.uniform(0.0, 1.0, S)
    cols = []
    cols.append(np.sin(2 * np.pi * u))
    cols.append(np.cos(2 * np.pi * u))
    temp = np.empty(S)
    t = 25.0
    shocks = rng.normal(0.0, 2.5, S)
    for i in range(S):
        t = 25.0 + 0.8 * (t - 25.0) + shocks[i]
        temp[i] = t
    cols.append(temp)
    cloud = np.clip(rng.beta(2.0, 2.0, S) * 100.0, 0.0, 100.0)
    cols.append(cloud)
    irr = np.clip(800.0 * (1.0 - 0.0075 * cloud) + rng.normal(0.0, 40.0, S), 0.0, None)
    cols.append(irr)
    for j in range(d):
        X[:, j] = cols[j] if j < len(cols) else rng.normal(0.0, 1.0, S)
    return X


def _raw_panel(rng, config: GeneratorConfig, X: np.ndarray) -> np.ndarray:
    """Unclipped price panel: base + level shift + contextual contrast + noise."""
    base = np.array(config.price_base)
    shift = contextual_shift(config, X)
    amp = contextual_amplitude(config, X)
    sp = np.array(config.shape_profile)
    noise = rng.normal(0.0, config.noise_std, (config.S, config.H)) if config.noise_std > 0 else np.zeros((config.S, config.H))
    return base[None, :] + shift[:, None] + amp[:, None] * sp[None, :] + noise


def _price_panel(rng, config: GeneratorConfig, X: np.ndarray) -> np.ndarray:
    return np.clip(_raw_panel(rng, config, X), config.c_min, config.c_max)


def _pv_load(rng, config: GeneratorConfig, X: np.ndarray):
    if not config.include_pv_load:
        return None, None
    irr = X[:, 4] if config.d_x >= 5 else np.full(config.S, 500.0)
    pv = config.pv_amplitude * np.array(config.pv_profile)[None, :] * (irr[:, None] / 800.0)
    load = config.load_amplitude * np.array(config.load_profile)[None, :] * rng.uniform(0.9, 1.1, (config.S, 1))
    return pv, load


def generate_synthetic(seed: int, config: GeneratorConfig) -> Dataset:
    """Deterministic-in-seed synthetic dataset for a single prosumer."""
    rng = np.random.default_rng(seed)
    X = _draw_covariates(rng, config)
    c_q = _price_panel(rng, config, X)
    pv, load = _pv_load(rng, config, X)
    samples = []
    for i in range(config.S):
        c_nm = np.empty((config.n_neighbors, config.H))
        for m in range(config.n_neighbors):
            c_nm[m] = np.clip(c_q[i] + rng.normal(0.0, 0.25 * config.noise_std, config.H), config.c_min, config.c_max)
        samples.append(Sample(
            x=X[i],
            y=Outcome(
                c_q=c_q[i], c_nm=c_nm,
                p_g=None if pv is None else pv[i],
                p_l=None if load is None else load[i],
            ),
        ))
    return Dataset(samples=samples, provenance={"generator-seed": int(seed), "config": json.loads(config.to_json())})


def generate_community(seed: int, config: GeneratorConfig, neighbor_lists: list[tuple], tariffs=None) -> list[Dataset]:
    """Coupled per-prosumer datasets sharing one latent context.

    Every prosumer observes the same latent covariate draw through
    independent observation noise (``config.obs_noise`` in standardized
    units), prices share the market shocks scaled by a per-prosumer
    tariff factor, and each edge carries one symmetric trade price (the
    midpoint of the endpoints' grid prices) stored in both endpoints'
    datasets.
    """
    n = len(neighbor_lists)
    rng = np.random.default_rng(seed)
    Z = _draw_covariates(rng, config)
    base_panel = _raw_panel(rng, config, Z)
    if tariffs is None:
        tariffs = 1.0 + config.tariff_spread * rng.uniform(-1.0, 1.0, n)
    tariffs = np.asarray(tariffs, dtype=float)
    panels = [np.clip(t * base_panel, config.c_min, config.c_max) for t in tariffs]
    edge_price: dict[tuple[int, int], np.ndarray] = {}
    for a in range(n):
        for b in neighbor_lists[a]:
            key = (min(a, b), max(a, b))
            if key not in edge_price:
                edge_price[key] = 0.5 * (panels[key[0]] + panels[key[1]])
    _, scale = _feature_stats(config.d_x)
    pv, load = _pv_load(rng, config, Z)
    datasets = []
    for a in range(n):
        obs = Z + rng.normal(0.0, config.obs_noise, Z.shape) * scale if config.obs_noise > 0 else Z.copy()
        samples = []
        nbrs = list(neighbor_lists[a])
        for i in range(config.S):
            c_nm = np.empty((len(nbrs), config.H))
            for j, b in enumerate(nbrs):
                c_nm[j] = edge_price[(min(a, b), max(a, b))][i]
            samples.append(Sample(
                x=obs[i],
                y=Outcome(
                    c_q=panels[a][i], c_nm=c_nm,
                    p_g=None if pv is None else pv[i],
                    p_l=None if load is None else load[i],
                ),
            ))
        datasets.append(Dataset(samples=samples, provenance={
            "generator-seed": int(seed), "prosumer": a, "config": json.loads(config.to_json()),
        }))
    return datasets


# ---------------------------------------------------------------------------
# CSV input/output.
# ---------------------------------------------------------------------------


def _parse_float(tok: str, path, row: int) -> float:
    try:
        v = float(tok)
    except ValueError:
        raise DatasetError(f"{path} row {row}: could not parse {tok!r}") from None
    if not np.isfinite(v):
        raise DatasetError(f"{path} row {row}: non-finite value {tok!r}")
    return v


def load_csv(covariate_path, outcome_path) -> Dataset:
    """Read a dataset from a covariates/outcomes CSV pair.

    Column schema is inferred from the outcome header; rows with missing,
    unparseable or non-finite cells are rejected with their row number.
    """
    with open(covariate_path, encoding="utf-8") as f:
        cov_lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    with open(outcome_path, encoding="utf-8") as f:
        out_lines = [ln.rstrip("\n") for ln in f if ln.strip()]
    if not cov_lines or not out_lines:
        raise DatasetError("empty CSV file")
    cov_header = cov_lines[0].split(",")
    out_header = out_lines[0].split(",")
    d_x = len(cov_header)
    H = sum(1 for h in out_header if h.startswith("c_q_h"))
    if H == 0:
        raise DatasetError(f"{outcome_path}: no c_q_h columns in header")
    nb_cols = [h for h in out_header if h.startswith("c_nm")]
    n_nb = len({h.split("_h")[0] for h in nb_cols})
    has_pv = any(h.startswith("p_g_h") for h in out_header)
    has_load = any(h.startswith("p_l_h") for h in out_header)
    expected = H + n_nb * H + (H if has_pv else 0) + (H if has_load else 0)
    if len(out_header) != expected:
        raise DatasetError(f"{outcome_path}: inconsistent header (expected {expected} columns, got {len(out_header)})")
    if len(cov_lines) != len(out_lines):
        raise DatasetError("covariate and outcome files have different row counts")

    samples = []
    for r in range(1, len(cov_lines)):
        ctoks = cov_lines[r].split(",")
        otoks = out_lines[r].split(",")
        if len(ctoks) != d_x:
            raise DatasetError(f"{covariate_path} row {r}: expected {d_x} cells, got {len(ctoks)}")
        if len(otoks) != expected:
            raise DatasetError(f"{outcome_path} row {r}: expected {expected} cells, got {len(otoks)}")
        x = np.array([_parse_float(t, covariate_path, r) for t in ctoks])
        vals = [_parse_float(t, outcome_path, r) for t in otoks]
        pos = 0
        c_q = np.array(vals[pos : pos + H]); pos += H
        c_nm = np.array(vals[pos : pos + n_nb * H]).reshape(n_nb, H); pos += n_nb * H
        p_g = p_l = None
        if has_pv:
            p_g = np.array(vals[pos : pos + H]); pos += H
        if has_load:
            p_l = np.array(vals[pos : pos + H]); pos += H
        samples.append(Sample(x=x, y=Outcome(c_q=c_q, c_nm=c_nm, p_g=p_g, p_l=p_l)))
    return Dataset(samples=samples, provenance={"csv-covariates": str(covariate_path), "csv-outcomes": str(outcome_path)})


def write_csv(dataset: Dataset, covariate_path, outcome_path) -> None:
    d_x, H, n_nb = dataset.d_x, dataset.horizon, dataset.n_neighbors
    has_pv = dataset.samples[0].y.p_g is not None
    has_load = dataset.samples[0].y.p_l is not None
    with open(covariate_path, "w", encoding="utf-8") as f:
        f.write(",".join(f"x{j}" for j in range(d_x)) + "\n")
        for s in dataset.samples:
            f.write(",".join(repr(float(v)) for v in s.x) + "\n")
    header = [f"c_q_h{h}" for h in range(H)]
    for m in range(n_nb):
        header += [f"c_nm{m}_h{h}" for h in range(H)]
    if has_pv:
        header += [f"p_g_h{h}" for h in range(H)]
    if has_load:
        header += [f"p_l_h{h}" for h in range(H)]
    with open(outcome_path, "w", encoding="utf-8") as f:
        f.write(",".join(header) + "\n")
        for s in dataset.samples:
            vals = list(s.y.c_q) + list(s.y.c_nm.ravel())
            if has_pv:
                vals += list(s.y.p_g)
            if has_load:
                vals += list(s.y.p_l)
            f.write(",".join(repr(float(v)) for v in vals) + "\n")


def standardize(dataset: Dataset, fit_indices) -> Dataset:
    """Attach per-feature mean/std computed over ``fit_indices`` only.

    Population convention (ddof=0); zero-variance features keep std 1 so
    they standardize to zero offsets.
    """
    X = dataset.covariates()[np.asarray(fit_indices, dtype=int)]
    mean = X.mean(axis=0)
    std = X.std(axis=0)
    std = np.where(std < 1e-12, 1.0, std)
    return Dataset(samples=dataset.samples, standardization=Standardization(mean=mean, std=std),
                   provenance=dict(dataset.provenance))


def split(dataset: Dataset, fractions, seed: int):
    """Disjoint, covering, seed-deterministic random split."""
    fracs = [float(f) for f in fractions]
    if abs(sum(fracs) - 1.0) > 1e-9:
        raise DatasetError(f"split fractions must sum to 1, got {sum(fracs)}")
    S = len(dataset)
    order = np.random.default_rng(seed).permutation(S)
    sizes = [int(np.floor(S * f)) for f in fracs]
    rem = S - sum(sizes)
    for i in range(rem):
        sizes[i % len(sizes)] += 1
    parts = []
    pos = 0
    for k, sz in enumerate(sizes):
        idx = order[pos : pos + sz]
        parts.append(dataset.subset(idx, provenance={**dataset.provenance, "split": k}))
        pos += sz
    return tuple(parts)
