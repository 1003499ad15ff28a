"""Deterministic ERCOT-like hourly data generator.

Produces load, wind and solar generation with growing installed capacity and
matching weather channels. All noise is first-order autoregressive so hourly
series keep realistic persistence. Magnitudes are scenario parameters, not
historical values.
"""

from __future__ import annotations

from dataclasses import dataclass, fields

import numpy as np
import pandas as pd
from scipy.signal import lfilter
from scipy.special import expit, logit

from .dataset import VALUE_COLUMNS


@dataclass(frozen=True)
class SynthConfig:
    start_year: int = 2021
    n_years: int = 4
    base_load_mw: float = 45000.0
    load_growth: float = 0.03            # per year, compounded
    wind_capacity_mw: float = 33000.0
    wind_capacity_increment_mw: float = 1500.0   # per year, linear
    solar_capacity_mw: float = 8000.0
    solar_capacity_growth: float = 1.33  # multiplicative per year
    load_noise: float = 0.01             # stationary std of the relative load deviation
    wind_noise: float = 0.8              # stationary std of the logit capacity-factor anomaly
    cloud_noise: float = 1.0             # stationary std of the cloudiness driver
    temperature_noise: float = 2.5       # stationary std of the weather anomaly, deg C
    measurement_noise: float = 1.0       # scales the small sensor noise on weather channels
    seed: int = 0

    def __post_init__(self):
        if self.n_years < 1:
            raise ValueError("n_years must be at least 1")
        for name in ("base_load_mw", "wind_capacity_mw", "solar_capacity_mw"):
            if not getattr(self, name) > 0:
                raise ValueError(f"{name} must be positive")
        if self.solar_capacity_growth <= 0:
            raise ValueError("solar_capacity_growth must be positive")
        for f in fields(self):
            if f.name.endswith("noise") and getattr(self, f.name) < 0:
                raise ValueError(f"{f.name} must be non-negative")


@dataclass
class SynthComponents:
    index: pd.DatetimeIndex
    years: np.ndarray             # capacity/growth time coordinate in [0, n_years]
    temperature: np.ndarray
    load_noiseless: np.ndarray
    total_load: np.ndarray
    wind_capacity: np.ndarray
    wind_cf_mean: np.ndarray      # seasonal x diurnal capacity factor before noise
    wind_cf: np.ndarray
    wind_gen: np.ndarray
    wind_speed: np.ndarray
    solar_capacity: np.ndarray
    clear_sky: np.ndarray         # 0..1 envelope, zero at night
    cloud: np.ndarray             # 0..1 transmittance
    solar_gen: np.ndarray
    irradiance: np.ndarray
    net_load: np.ndarray

    def frame(self) -> pd.DataFrame:
        cols = (self.total_load, self.wind_gen, self.wind_capacity, self.solar_gen,
                self.solar_capacity, self.temperature, self.wind_speed, self.irradiance)
        return pd.DataFrame(dict(zip(VALUE_COLUMNS, cols)), index=self.index)


def _ar1(rng: np.random.Generator, n: int, phi: float, std: float,
         smoothing: float = 0.0) -> np.ndarray:
    """AR(1) path with marginal standard deviation ``std``.

    ``smoothing`` > 0 passes the path through a second one-pole low-pass
    filter, which damps hour-to-hour jumps while keeping multi-day persistence;
    the result is rescaled to ``std``.
    """
    if std == 0:
        return np.zeros(n)
    innov = rng.standard_normal(n) * std * np.sqrt(1.0 - phi * phi)
    innov[0] = rng.standard_normal() * std
    x = lfilter([1.0], [1.0, -phi], innov)
    if smoothing:
        x = lfilter([1.0 - smoothing], [1.0, -smoothing], x, zi=[smoothing * x[0]])[0]
        x *= std / x.std()
    return x


def _hours(cfg: SynthConfig) -> pd.DatetimeIndex:
    start = pd.Timestamp(year=cfg.start_year, month=1, day=1)
    end = pd.Timestamp(year=cfg.start_year + cfg.n_years, month=1, day=1)
    return pd.date_range(start, end, freq="h", inclusive="left", name="timestamp")


def generate_components(cfg: SynthConfig = SynthConfig()) -> SynthComponents:
    idx = _hours(cfg)
    n = len(idx)
    rng_t, rng_l, rng_w, rng_c, rng_m = (np.random.default_rng(s) for s in
                                         np.random.SeedSequence(cfg.seed).spawn(5))
    years = cfg.n_years * np.arange(n) / (n - 1)
    doy = idx.dayofyear.to_numpy().astype(np.float64)
    hour = idx.hour.to_numpy().astype(np.float64) + 0.5       # hour-average position
    weekend = idx.dayofweek.to_numpy() >= 5
    season = 2 * np.pi * doy / 365.25

    temperature = (20.0 - 9.0 * np.cos(season - 2 * np.pi * 15 / 365.25)
                   + 5.0 * np.cos(2 * np.pi * (hour - 15.0) / 24)
                   + _ar1(rng_t, n, 0.995, cfg.temperature_noise))

    # load: growth x weather sensitivity x daily shape x weekly shape
    cooling = np.maximum(temperature - 22.0, 0.0)
    heating = np.maximum(12.0 - temperature, 0.0)
    daily = (1.0 + 0.09 * np.cos(2 * np.pi * (hour - 17.5) / 24)
             + 0.03 * np.cos(4 * np.pi * (hour - 19.0) / 24))
    load_noiseless = (cfg.base_load_mw * (1.0 + cfg.load_growth) ** years
                      * (1.0 + 0.018 * cooling + 0.012 * heating)
                      * daily * np.where(weekend, 0.93, 1.0))
    deviation = np.maximum(_ar1(rng_l, n, 0.9, cfg.load_noise), -0.5)
    total_load = load_noiseless * (1.0 + deviation)

    # wind: linear capacity build-out; capacity factor dips in high summer
    wind_capacity = cfg.wind_capacity_mw + cfg.wind_capacity_increment_mw * years
    summer = np.exp(-((doy - 200.0) / 45.0) ** 2)
    wind_cf_mean = ((0.40 - 0.13 * summer)
                    * (1.0 + 0.15 * np.cos(2 * np.pi * (hour - 1.0) / 24)))
    wind_cf = expit(logit(wind_cf_mean) + _ar1(rng_w, n, 0.98, cfg.wind_noise, 0.8))
    wind_gen = wind_capacity * wind_cf
    wind_speed = np.maximum(
        3.0 + 9.0 * wind_cf ** (1 / 2.2) + 0.3 * cfg.measurement_noise * rng_m.standard_normal(n),
        0.0)

    # solar: compounding capacity; clear-sky envelope from day length
    solar_capacity = cfg.solar_capacity_mw * cfg.solar_capacity_growth ** years
    day_length = 12.0 + 1.8 * np.sin(2 * np.pi * (doy - 80.0) / 365.25)
    sunrise = 12.7 - day_length / 2
    phase = (hour - sunrise) / day_length
    amplitude = 0.85 + 0.15 * np.sin(2 * np.pi * (doy - 80.0) / 365.25)
    clear_sky = np.where((phase > 0) & (phase < 1),
                         np.sin(np.pi * np.clip(phase, 0, 1)) ** 1.3, 0.0) * amplitude
    if cfg.cloud_noise:
        cloud = 0.2 + 0.8 * expit(1.5 + 1.3 * _ar1(rng_c, n, 0.95, cfg.cloud_noise, 0.7))
    else:
        cloud = np.full(n, 0.2 + 0.8 * expit(1.5))
    solar_gen = solar_capacity * 0.82 * clear_sky * cloud
    irradiance = np.where(
        clear_sky > 0,
        np.maximum(1000.0 * clear_sky * cloud
                   * (1.0 + 0.02 * cfg.measurement_noise * rng_m.standard_normal(n)), 0.0),
        0.0)

    net_load = total_load - wind_gen - solar_gen
    return SynthComponents(idx, years, temperature, load_noiseless, total_load, wind_capacity,
                           wind_cf_mean, wind_cf, wind_gen, wind_speed, solar_capacity, clear_sky,
                           cloud, solar_gen, irradiance, net_load)


def generate_series(cfg: SynthConfig = SynthConfig()) -> pd.DataFrame:
    """Hourly table in the ingestion schema, indexed by local (CST) hour."""
    return generate_components(cfg).frame()
