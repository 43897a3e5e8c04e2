"""
Prosumer Model

Device utilities, individual best responses to a bus price, operating
envelopes and the calibration of quadratic utilities from a reference
price, consumption and elasticity.
"""
import json
import logging
from dataclasses import dataclass
from pathlib import Path
from typing import Any, Dict, List, Optional, Sequence, Tuple, Union

import numpy as np
from scipy.optimize import brentq

from core.errors import (
    ConfigError,
    DimensionError,
    DomainError,
    EnvelopeInfeasible,
)

logger = logging.getLogger("gridshare.prosumer")


@dataclass(frozen=True)
class DeviceUtility:
    """Capped quadratic utility ``alpha*d - beta*d^2/2`` with consumption bounds.

    The utility is flat at ``alpha^2 / (2 beta)`` beyond the bliss point
    ``alpha / beta`` so it stays non-decreasing on ``[0, inf)``.
    """

    alpha: float
    beta: float
    d_lo: float = 0.0
    d_hi: float = float('inf')
    name: str = ""

    def __post_init__(self):
        if not self.beta > 0:
            raise DomainError(f"device {self.name or '?'}: beta must be positive, got {self.beta}")
        if self.alpha < 0:
            raise DomainError(f"device {self.name or '?'}: alpha must be non-negative, got {self.alpha}")
        if not 0 <= self.d_lo <= self.d_hi:
            raise DomainError(f"device {self.name or '?'}: bounds must satisfy "
                              f"0 <= d_lo <= d_hi, got [{self.d_lo}, {self.d_hi}]")
        if not np.isfinite(self.d_hi):
            object.__setattr__(self, 'd_hi', self.bliss)

    @property
    def bliss(self) -> float:
        return self.alpha / self.beta

    @classmethod
    def calibrated(cls, pi0: float, d0: float, elasticity: float, d_lo: float = 0.0,
                   d_hi: Optional[float] = None, name: str = "") -> "DeviceUtility":
        """Utility whose demand passes through ``(pi0, d0)`` with the given price elasticity.

        ``d_hi`` defaults to the bliss point.
        """
        if pi0 <= 0 or d0 <= 0 or elasticity <= 0:
            raise DomainError(f"calibration needs positive pi0, d0 and elasticity, "
                              f"got {pi0}, {d0}, {elasticity}")
        beta = pi0 / (elasticity * d0)
        alpha = pi0 + beta * d0
        upper = alpha / beta if d_hi is None else d_hi
        if upper > alpha / beta + 1e-12:
            logger.warning("device %s: upper bound %.4g exceeds the bliss point %.4g",
                           name or '?', upper, alpha / beta)
        return cls(alpha=alpha, beta=beta, d_lo=d_lo, d_hi=upper, name=name)


@dataclass(frozen=True)
class Prosumer:
    """Household behind one meter: controllable devices plus fixed generation ``g``.

    ``envelope`` is an optional ``(z_lo, z_hi)`` band on net consumption.
    """

    id: int
    bus: int
    devices: Tuple[DeviceUtility, ...]
    g: float = 0.0
    envelope: Optional[Tuple[float, float]] = None

    def __post_init__(self):
        object.__setattr__(self, 'devices', tuple(self.devices))
        if not self.devices:
            raise DomainError(f"prosumer {self.id} has no devices")
        if self.g < 0:
            raise DomainError(f"prosumer {self.id}: generation must be non-negative, got {self.g}")
        if self.envelope is not None:
            z_lo, z_hi = (float(v) for v in self.envelope)
            if not z_lo <= 0 <= z_hi:
                raise DomainError(f"prosumer {self.id}: envelope must satisfy "
                                  f"z_lo <= 0 <= z_hi, got [{z_lo}, {z_hi}]")
            object.__setattr__(self, 'envelope', (z_lo, z_hi))

    @property
    def n_devices(self) -> int:
        return len(self.devices)

    @property
    def alpha(self) -> np.ndarray:
        return np.array([dev.alpha for dev in self.devices])

    @property
    def beta(self) -> np.ndarray:
        return np.array([dev.beta for dev in self.devices])

    @property
    def d_lo(self) -> np.ndarray:
        return np.array([dev.d_lo for dev in self.devices])

    @property
    def d_hi(self) -> np.ndarray:
        return np.array([dev.d_hi for dev in self.devices])

    def with_generation(self, g: float) -> "Prosumer":
        return Prosumer(id=self.id, bus=self.bus, devices=self.devices, g=g,
                        envelope=self.envelope)


@dataclass(frozen=True, eq=False)
class ConsumptionBundle:
    """Device consumptions ``d`` (kWh) and resulting net consumption ``z``."""

    d: np.ndarray
    z: float
    pinned: bool = False


def _consumption(p: Prosumer, d: Sequence[float]) -> np.ndarray:
    d = np.asarray(d, dtype=float)
    if d.shape != (p.n_devices,):
        raise DimensionError(f"prosumer {p.id} has {p.n_devices} devices, got shape {d.shape}")
    if np.any(d < 0):
        raise DomainError(f"prosumer {p.id}: consumption must be non-negative")
    return d


def utility(p: Prosumer, d: Sequence[float]) -> float:
    """Total device utility of prosumer ``p`` at consumption ``d`` (dollars)."""
    d = _consumption(p, d)
    alpha, beta = p.alpha, p.beta
    capped = np.minimum(d, alpha / beta)
    return float(np.sum(alpha * capped - 0.5 * beta * capped ** 2))


def marginal_utility(p: Prosumer, d: Sequence[float]) -> np.ndarray:
    """Per-device marginal utility, zero beyond the bliss point."""
    d = _consumption(p, d)
    return np.maximum(p.alpha - p.beta * d, 0.0)


def inverse_marginal(p: Prosumer, price: float) -> np.ndarray:
    """Unconstrained per-device demand at ``price`` (may fall outside the bounds)."""
    return (p.alpha - price) / p.beta


def best_response(p: Prosumer, price: float) -> ConsumptionBundle:
    """Surplus-maximizing consumption at a linear price, ignoring any envelope."""
    d = np.clip(inverse_marginal(p, price), p.d_lo, p.d_hi)
    return ConsumptionBundle(d=d, z=float(np.sum(d) - p.g))


def _fill_to_total(p: Prosumer, price: float, target: float, tol: float) -> np.ndarray:
    """Allocate ``target`` total consumption at equal marginal utility.

    Finds the shift ``nu`` so that ``sum(clip(f(price + nu)))`` equals the target.
    """
    alpha, beta, lo, hi = p.alpha, p.beta, p.d_lo, p.d_hi

    def excess(nu: float) -> float:
        return float(np.sum(np.clip((alpha - price - nu) / beta, lo, hi))) - target

    # All devices at their upper bound on the left, lower bound on the right
    left = float(np.min(alpha - beta * hi)) - price - 1.0
    right = float(np.max(alpha - beta * lo)) - price + 1.0
    if excess(left) <= 0:
        nu = left
    elif excess(right) >= 0:
        nu = right
    else:
        nu = brentq(excess, left, right, xtol=tol * float(np.min(beta)), rtol=4 * np.finfo(float).eps,
                    maxiter=500)
    return np.clip((alpha - price - nu) / beta, lo, hi)


def best_response_enveloped(p: Prosumer, price: float, tol: float = 1e-10) -> ConsumptionBundle:
    """Best response with net consumption kept inside the prosumer's envelope.

    When the unconstrained response leaves the envelope, the total is pinned
    to the nearest envelope edge and spread over devices by water-filling.

    Raises:
        EnvelopeInfeasible: envelope and device bounds have no common point
    """
    free = best_response(p, price)
    if p.envelope is None:
        return free

    z_lo, z_hi = p.envelope
    total_lo, total_hi = z_lo + p.g, z_hi + p.g
    if total_lo > float(np.sum(p.d_hi)) + tol or total_hi < float(np.sum(p.d_lo)) - tol:
        raise EnvelopeInfeasible(
            f"prosumer {p.id}: envelope [{z_lo}, {z_hi}] unreachable with device bounds "
            f"[{np.sum(p.d_lo)}, {np.sum(p.d_hi)}] and generation {p.g}"
        )

    total = float(np.sum(free.d))
    if total_lo <= total <= total_hi:
        return free

    target = min(max(total, total_lo), total_hi)
    d = _fill_to_total(p, price, target, tol)
    return ConsumptionBundle(d=d, z=float(np.sum(d) - p.g), pinned=True)


def respond(p: Prosumer, price: float, tol: float = 1e-10) -> ConsumptionBundle:
    """Dispatch to the enveloped or plain best response."""
    if p.envelope is None:
        return best_response(p, price)
    return best_response_enveloped(p, price, tol)


def surplus(p: Prosumer, d: Sequence[float], payment: float) -> float:
    """Utility minus payment."""
    return utility(p, d) - payment


def standalone_nem_response(p: Prosumer, pi_plus: float, pi_minus: float,
                            tol: float = 1e-10) -> ConsumptionBundle:
    """Optimal consumption of a prosumer facing the retail tariff alone.

    Three-piece rule: import at ``pi_plus``, export at ``pi_minus``, or
    consume exactly the own generation in between.
    """
    importing = respond(p, pi_plus, tol)
    if importing.z > 0:
        return importing
    exporting = respond(p, pi_minus, tol)
    if exporting.z < 0:
        return exporting
    d = _fill_to_total(p, pi_plus, p.g, tol)
    return ConsumptionBundle(d=d, z=float(np.sum(d) - p.g), pinned=True)


def standalone_nem_surplus(p: Prosumer, pi_plus: float, pi_minus: float,
                           tol: float = 1e-10) -> float:
    """Surplus of the standalone net-metering response."""
    bundle = standalone_nem_response(p, pi_plus, pi_minus, tol)
    price = pi_plus if bundle.z >= 0 else pi_minus
    return surplus(p, bundle.d, price * bundle.z)


def _parse_device(record: Dict[str, Any], where: str) -> DeviceUtility:
    if not isinstance(record, dict):
        raise ConfigError("must be an object", field=where)
    name = str(record.get('name', ''))
    try:
        d_lo = float(record.get('d_lo', 0.0))
        d_hi_raw = record.get('d_hi')
        d_hi = None if d_hi_raw is None else float(d_hi_raw)
        if 'calibrate' in record:
            cal = record['calibrate']
            if not isinstance(cal, dict):
                raise ConfigError("must be an object", field=f"{where}.calibrate")
            missing = [key for key in ('pi0', 'd0', 'elasticity') if key not in cal]
            if missing:
                raise ConfigError(f"missing {', '.join(missing)}", field=f"{where}.calibrate")
            return DeviceUtility.calibrated(float(cal['pi0']), float(cal['d0']),
                                            float(cal['elasticity']), d_lo=d_lo,
                                            d_hi=d_hi, name=name)
        for key in ('alpha', 'beta'):
            if key not in record:
                raise ConfigError("missing value", field=f"{where}.{key}")
        beta = float(record['beta'])
        if beta <= 0:
            raise ConfigError(f"must be positive, got {beta}", field=f"{where}.beta")
        return DeviceUtility(alpha=float(record['alpha']), beta=beta, d_lo=d_lo,
                             d_hi=float('inf') if d_hi is None else d_hi, name=name)
    except DomainError as e:
        raise ConfigError(e.message, field=where)
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid number: {e}", field=where)


def parse_prosumers(data: Any) -> List[Prosumer]:
    """Build prosumers from a decoded document (list or ``{"prosumers": [...]}``)."""
    records = data.get('prosumers') if isinstance(data, dict) else data
    if not isinstance(records, list) or not records:
        raise ConfigError("must be a non-empty list", field="prosumers")

    prosumers = []
    seen = set()
    for index, record in enumerate(records):
        where = f"prosumers[{index}]"
        if not isinstance(record, dict):
            raise ConfigError("must be an object", field=where)
        devices_raw = record.get('devices')
        if not isinstance(devices_raw, list) or not devices_raw:
            raise ConfigError("needs a non-empty device list", field=f"{where}.devices")
        devices = tuple(_parse_device(dev, f"{where}.devices[{k}]")
                        for k, dev in enumerate(devices_raw))
        envelope = _parse_envelope(record.get('envelope'), f"{where}.envelope")
        if 'bus' not in record:
            raise ConfigError("missing value", field=f"{where}.bus")
        try:
            prosumer_id = int(record.get('id', index + 1))
            if prosumer_id in seen:
                raise ConfigError(f"duplicate prosumer id {prosumer_id}", field=f"{where}.id")
            seen.add(prosumer_id)
            prosumers.append(Prosumer(
                id=prosumer_id,
                bus=int(record['bus']),
                devices=devices,
                g=float(record.get('g_kwh', record.get('g', 0.0))),
                envelope=envelope,
            ))
        except DomainError as e:
            raise ConfigError(e.message, field=where)
        except (TypeError, ValueError) as e:
            raise ConfigError(f"invalid value: {e}", field=where)
    return prosumers


def _parse_envelope(raw: Any, where: str) -> Optional[Tuple[float, float]]:
    """Envelope as ``{"z_lo": ..., "z_hi": ...}`` or a ``[z_lo, z_hi]`` pair."""
    if raw is None:
        return None
    if isinstance(raw, dict):
        unknown = set(raw) - {'z_lo', 'z_hi'}
        if unknown:
            raise ConfigError(f"unknown keys {sorted(unknown)}", field=where)
        for key in ('z_lo', 'z_hi'):
            if key not in raw:
                raise ConfigError("missing value", field=f"{where}.{key}")
        bounds = (raw['z_lo'], raw['z_hi'])
    elif isinstance(raw, (list, tuple)) and len(raw) == 2:
        bounds = tuple(raw)
    else:
        raise ConfigError("must be {z_lo, z_hi} or a [z_lo, z_hi] pair", field=where)
    try:
        return float(bounds[0]), float(bounds[1])
    except (TypeError, ValueError) as e:
        raise ConfigError(f"invalid number: {e}", field=where)


def load_prosumers(path: Union[str, Path]) -> List[Prosumer]:
    """Load prosumers from a JSON file."""
    path = Path(path)
    try:
        with open(path, 'r') as f:
            data = json.load(f)
    except FileNotFoundError:
        raise ConfigError(f"prosumer file not found: {path}")
    except json.JSONDecodeError as e:
        raise ConfigError(f"invalid JSON in {path}: {e}")
    prosumers = parse_prosumers(data)
    logger.info("loaded %d prosumers from %s", len(prosumers), path)
    return prosumers
