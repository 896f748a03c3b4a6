"""CHF tables: loading, thermodynamic features, filtering, splitting, scaling.

Tables are :class:`pandas.DataFrame` objects with canonical column names
(``D, L, P, G, T_in, X, dh_sub, chf, source``) plus a stable ``row_id``.
Functions never modify their inputs.
"""

from __future__ import annotations

import json
from dataclasses import dataclass, field
from pathlib import Path
from typing import Mapping, Sequence

import numpy as np
import pandas as pd

MODEL_FEATURES = ("G", "P", "D", "L", "X")
EXCLUDED_FROM_INPUTS = ("T_in", "dh_sub")
REQUIRED = ("D", "L", "P", "G", "chf")
OPTIONAL = ("T_in", "X", "dh_sub", "source")
DEFAULT_EXCLUDED_SOURCES = ("Alessandrini", "Soderquist", "Kureta")

# lower-cased header aliases tried when no explicit mapping is given
DEFAULT_ALIASES = {
    "D": ("d", "d (m)", "d [m]", "tube diameter", "diameter", "tube diameter [m]"),
    "L": ("l", "l (m)", "l [m]", "heated length", "length", "heated length [m]"),
    "P": ("p", "p (kpa)", "p [kpa]", "pressure", "pressure [kpa]"),
    "G": ("g", "g (kg m-2s-1)", "g [kg/m^2/s]", "mass flux", "mass flux [kg/m^2/s]"),
    "T_in": ("t_in", "tin", "t_in (c)", "inlet temperature", "inlet temperature [c]"),
    "X": ("x", "x_chf", "outlet quality", "outlet quality [-]", "quality"),
    "dh_sub": ("dh_sub", "dh_in", "delta_h_sub", "inlet subcooling", "inlet subcooling [kj/kg]"),
    "chf": ("chf", "chf (kw m-2)", "chf [kw/m^2]", "critical heat flux", "chf_exp"),
    "source": ("source", "reference", "reference id", "ref", "author", "dataset"),
}


class SchemaError(ValueError):
    """A required column is missing or a value violates the table contract."""


@dataclass(frozen=True)
class SaturationTable:
    pressure: np.ndarray
    h_liquid: np.ndarray
    h_vapor: np.ndarray

    def __post_init__(self):
        if np.any(np.diff(self.pressure) <= 0):
            raise ValueError("saturation pressures must be strictly increasing")
        if np.any(self.h_vapor <= self.h_liquid):
            raise ValueError("vapor enthalpy must exceed liquid enthalpy")

    @classmethod
    def from_csv(cls, path) -> "SaturationTable":
        df = pd.read_csv(path)
        cols = {c.lower().strip(): c for c in df.columns}
        try:
            p, hl, hv = (df[cols[k]].to_numpy(float) for k in ("p", "h_l", "h_v"))
        except KeyError as exc:
            raise SchemaError(f"saturation table needs columns P, h_l, h_v: missing {exc}") from None
        return cls(p, hl, hv)

    def enthalpies(self, P) -> tuple[np.ndarray, np.ndarray]:
        P = np.asarray(P, dtype=np.float64)
        if np.any(P < self.pressure[0]) or np.any(P > self.pressure[-1]):
            raise ValueError("pressure outside the saturation table range")
        return (np.interp(P, self.pressure, self.h_liquid),
                np.interp(P, self.pressure, self.h_vapor))


# ---------------------------------------------------------------------------
# loading


def resolve_columns(header: Sequence[str], mapping: Mapping[str, str] | None = None) -> dict:
    """Map canonical roles to header names."""
    lookup = {h.lower().strip(): h for h in header}
    roles = {}
    for role in REQUIRED + OPTIONAL:
        if mapping and role in mapping:
            if mapping[role] not in header:
                raise SchemaError(f"column {mapping[role]!r} mapped to {role!r} is missing")
            roles[role] = mapping[role]
            continue
        for alias in (role.lower(),) + DEFAULT_ALIASES.get(role, ()):
            if alias in lookup:
                roles[role] = lookup[alias]
                break
    missing = [r for r in REQUIRED if r not in roles]
    if missing:
        raise SchemaError(f"missing required column(s): {', '.join(missing)}")
    return roles


def load_csv(path, mapping: Mapping[str, str] | None = None) -> pd.DataFrame:
    raw = pd.read_csv(path, dtype=str, keep_default_na=False)
    roles = resolve_columns(list(raw.columns), mapping)
    table = pd.DataFrame({"row_id": np.arange(len(raw), dtype=np.int64)})
    for role, col in roles.items():
        if role == "source":
            table[role] = raw[col].astype(str).to_numpy()
            continue
        values = np.empty(len(raw))
        for i, text in enumerate(raw[col]):
            text = text.strip()
            if text == "" and role in OPTIONAL:
                values[i] = np.nan
                continue
            try:
                values[i] = float(text)
            except ValueError:
                raise SchemaError(f"row {i}: column {col!r} has unparsable value {text!r}") from None
        table[role] = values
    if "source" not in table:
        table["source"] = "unknown"
    for role in ("D", "L", "P", "G", "chf"):
        bad = np.flatnonzero(~(table[role].to_numpy() > 0))
        if len(bad):
            raise SchemaError(f"row {int(bad[0])}: {role} must be positive, got {table[role].iat[bad[0]]}")
    return table


# ---------------------------------------------------------------------------
# thermodynamic features


def outlet_enthalpy(h_in, heat_flux, L, G, D):
    """Heat balance of a uniformly heated tube: ``h_in + 4 q L / (G D)``."""
    G = np.asarray(G, dtype=np.float64)
    D = np.asarray(D, dtype=np.float64)
    if np.any(G <= 0) or np.any(D <= 0):
        raise ValueError("G and D must be positive")
    return np.asarray(h_in) + 4.0 * np.asarray(heat_flux) * np.asarray(L) / (G * D)


def outlet_quality(h_out, P, table: SaturationTable):
    h_l, h_v = table.enthalpies(P)
    return (np.asarray(h_out) - h_l) / (h_v - h_l)


def inlet_subcooling(h_in, P, table: SaturationTable):
    h_l, _ = table.enthalpies(P)
    return h_l - np.asarray(h_in)


def complete_features(table: pd.DataFrame, sat: SaturationTable | None = None,
                      h_in: np.ndarray | None = None) -> pd.DataFrame:
    """Fill missing ``X``/``dh_sub`` from inlet enthalpy and a saturation table."""
    out = table.copy()
    need_x = "X" not in out or out["X"].isna().any()
    need_dh = "dh_sub" not in out or out["dh_sub"].isna().any()
    if not (need_x or need_dh):
        return out
    if sat is None or h_in is None:
        raise SchemaError("X or dh_sub missing and no saturation table / inlet enthalpy given")
    if need_dh:
        computed = inlet_subcooling(h_in, out["P"], sat)
        out["dh_sub"] = out["dh_sub"].fillna(pd.Series(computed)) if "dh_sub" in out else computed
    if need_x:
        h_out = outlet_enthalpy(h_in, out["chf"], out["L"], out["G"], out["D"])
        computed = outlet_quality(h_out, out["P"], sat)
        out["X"] = out["X"].fillna(pd.Series(computed)) if "X" in out else computed
    return out


# ---------------------------------------------------------------------------
# filtering and splitting


@dataclass
class RemovalReport:
    initial: int
    subcooling: int
    sources: int
    retained: int

    def to_dict(self) -> dict:
        return {"initial": self.initial, "subcooling": self.subcooling,
                "sources": self.sources, "retained": self.retained}


def source_excluded(labels, excluded: Sequence[str]) -> np.ndarray:
    """Case-insensitive substring match of source labels against ``excluded``."""
    labels = pd.Series(labels, dtype=str).str.lower()
    mask = np.zeros(len(labels), dtype=bool)
    for name in excluded:
        mask |= labels.str.contains(name.lower(), regex=False).to_numpy()
    return mask


def filter_dataset(table: pd.DataFrame, excluded_sources: Sequence[str] = DEFAULT_EXCLUDED_SOURCES,
                   ) -> tuple[pd.DataFrame, RemovalReport]:
    """Drop non-positive inlet subcooling, then rows from excluded sources."""
    if "dh_sub" not in table:
        raise SchemaError("inlet subcooling is required for filtering")
    bad_dh = ~(table["dh_sub"].to_numpy() > 0)
    bad_src = source_excluded(table["source"], excluded_sources) & ~bad_dh
    keep = ~(bad_dh | bad_src)
    report = RemovalReport(len(table), int(bad_dh.sum()), int(bad_src.sum()), int(keep.sum()))
    return table.loc[keep].reset_index(drop=True), report


@dataclass(frozen=True)
class SplitSpec:
    fractions: tuple[float, ...] = (0.8, 0.1, 0.1)
    names: tuple[str, ...] = ("train", "val", "test")
    seed: int = 0

    def __post_init__(self):
        if len(self.fractions) != len(self.names):
            raise ValueError("one name per split fraction")
        if any(f < 0 for f in self.fractions) or abs(sum(self.fractions) - 1.0) > 1e-9:
            raise ValueError("split fractions must be non-negative and sum to 1")


def _largest_remainder(n: int, fractions: Sequence[float]) -> np.ndarray:
    quotas = np.asarray(fractions) * n
    counts = np.floor(quotas + 1e-9).astype(int)
    remainder = quotas - counts
    # ties keep split order (stable sort on the negated remainder)
    for k in np.argsort(-remainder, kind="stable")[: n - counts.sum()]:
        counts[k] += 1
    return counts


def split_labels(table: pd.DataFrame, spec: SplitSpec = SplitSpec()) -> np.ndarray:
    """Per-source proportional allocation of rows to splits."""
    rng = np.random.default_rng(spec.seed)
    labels = np.empty(len(table), dtype=object)
    sources = table["source"].to_numpy()
    for src in sorted(pd.unique(sources), key=str):
        idx = np.flatnonzero(sources == src)
        idx = idx[rng.permutation(len(idx))]
        counts = _largest_remainder(len(idx), spec.fractions)
        start = 0
        for name, c in zip(spec.names, counts):
            labels[idx[start:start + c]] = name
            start += c
    return labels


def stratified_split(table: pd.DataFrame, spec: SplitSpec = SplitSpec()) -> dict[str, pd.DataFrame]:
    labels = split_labels(table, spec)
    return {name: table.loc[labels == name].reset_index(drop=True) for name in spec.names}


def calibration_mask(n: int, size: int, seed: int = 0) -> np.ndarray:
    """Choose ``size`` of ``n`` rows at random for conformal calibration."""
    if size > n:
        raise ValueError(f"cannot draw {size} calibration rows from {n}")
    mask = np.zeros(n, dtype=bool)
    mask[np.random.default_rng(seed).choice(n, size=size, replace=False)] = True
    return mask


# ---------------------------------------------------------------------------
# scaling


@dataclass
class ScalerState:
    features: tuple[str, ...]
    mean: np.ndarray
    std: np.ndarray

    def to_dict(self) -> dict:
        return {"features": list(self.features), "mean": self.mean.tolist(),
                "std": self.std.tolist()}

    @classmethod
    def from_dict(cls, d) -> "ScalerState":
        return cls(tuple(d["features"]), np.asarray(d["mean"], float), np.asarray(d["std"], float))

    def save(self, path):
        Path(path).write_text(json.dumps(self.to_dict(), indent=2) + "\n")

    @classmethod
    def load(cls, path) -> "ScalerState":
        return cls.from_dict(json.loads(Path(path).read_text()))


def fit_scaler(train: pd.DataFrame, features: Sequence[str] = MODEL_FEATURES) -> ScalerState:
    if len(train) == 0:
        raise ValueError("cannot fit a scaler on an empty table")
    values = train[list(features)].to_numpy(dtype=np.float64)
    mean = values.mean(axis=0)
    std = values.std(axis=0)
    for name, s in zip(features, std):
        if not s > 0:
            raise ValueError(f"feature {name!r} is constant in the training split")
    return ScalerState(tuple(features), mean, std)


def apply_scaler(table: pd.DataFrame, state: ScalerState) -> np.ndarray:
    values = table[list(state.features)].to_numpy(dtype=np.float64)
    return (values - state.mean) / state.std


def unscale(z: np.ndarray, state: ScalerState) -> np.ndarray:
    return np.asarray(z) * state.std + state.mean


def model_inputs(table: pd.DataFrame, features: Sequence[str] = MODEL_FEATURES) -> np.ndarray:
    """Raw model input matrix; inlet properties are never admitted."""
    leaked = [f for f in features if f in EXCLUDED_FROM_INPUTS]
    if leaked:
        raise ValueError(f"inlet properties cannot be model inputs: {leaked}")
    return table[list(features)].to_numpy(dtype=np.float64)


# ---------------------------------------------------------------------------
# synthetic multi-regime data


@dataclass(frozen=True)
class RegimeBands:
    edges: tuple[float, ...] = (0.0, 0.25, 0.5)
    noise: tuple[float, ...] = (0.05, 0.10, 0.25, 0.12)

    def __post_init__(self):
        if np.any(np.diff(self.edges) <= 0):
            raise ValueError("band edges must be strictly increasing")
        if len(self.noise) != len(self.edges) + 1:
            raise ValueError("one noise level per band")

    def relative_noise(self, x) -> np.ndarray:
        return np.asarray(self.noise)[np.searchsorted(self.edges, x, side="right")]


SYNTH_SOURCES = ("synth-A", "synth-B", "synth-C", "synth-D")


def synth_mean(D, L, P, G, X) -> np.ndarray:
    """Smooth, strictly positive CHF-like response (kW/m^2)."""
    d = (np.asarray(D) - 0.003) / 0.022
    ln = (np.asarray(L) - 0.2) / 3.8
    p = (np.asarray(P) - 100.0) / 19900.0
    g = (np.asarray(G) - 100.0) / 7900.0
    x = np.asarray(X)
    return 2500.0 * np.exp(-1.1 * x + 0.5 * g - 0.2 * d - 0.2 * ln + 0.15 * p)


def synth_generate(n: int, seed: int = 0, bands: RegimeBands = RegimeBands()) -> pd.DataFrame:
    """Synthetic CHF table with known mean ``mu_true`` and noise ``sigma_true``.

    Outlet quality is uniform on [-0.5, 1]; the noise standard deviation is a
    band-dependent fraction of the mean.
    """
    if n < 1:
        raise ValueError("n must be >= 1")
    rng = np.random.default_rng(seed)
    D = rng.uniform(0.003, 0.025, n)
    L = rng.uniform(0.2, 4.0, n)
    P = rng.uniform(100.0, 20000.0, n)
    G = rng.uniform(100.0, 8000.0, n)
    X = rng.uniform(-0.5, 1.0, n)
    dh = rng.uniform(10.0, 500.0, n)
    source = rng.choice(np.array(SYNTH_SOURCES, dtype=object), size=n)
    mu = synth_mean(D, L, P, G, X)
    sigma = bands.relative_noise(X) * mu
    eps = rng.standard_normal(n)
    # redraw the rare noise values that would make the flux non-positive
    low = mu + sigma * eps <= 0.01 * mu
    while np.any(low):
        eps[low] = rng.standard_normal(int(low.sum()))
        low = mu + sigma * eps <= 0.01 * mu
    return pd.DataFrame({
        "row_id": np.arange(n, dtype=np.int64),
        "D": D, "L": L, "P": P, "G": G, "X": X, "dh_sub": dh,
        "chf": mu + sigma * eps, "source": source,
        "mu_true": mu, "sigma_true": sigma,
    })
